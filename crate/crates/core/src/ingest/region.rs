use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::IngestError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Region {
    East,
    Central,
    West,
}

impl Region {
    pub const ALL: [Region; 3] = [Region::East, Region::Central, Region::West];

    pub fn as_str(self) -> &'static str {
        match self {
            Region::East => "east",
            Region::Central => "central",
            Region::West => "west",
        }
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Region {
    type Err = IngestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "east" | "eastern" => Ok(Region::East),
            "central" => Ok(Region::Central),
            "west" | "western" => Ok(Region::West),
            _ => Err(IngestError::InvalidValue {
                field: "region".into(),
                value: s.to_string(),
            }),
        }
    }
}

const EAST: [&str; 13] = [
    "Hebei",
    "Beijing",
    "Tianjin",
    "Shandong",
    "Jiangsu",
    "Shanghai",
    "Zhejiang",
    "Fujian",
    "Guangdong",
    "Hainan",
    "Jilin",
    "Heilongjiang",
    "Liaoning",
];
const CENTRAL: [&str; 6] = ["Shanxi", "Henan", "Anhui", "Jiangxi", "Hunan", "Hubei"];
const WEST: [&str; 12] = [
    "Inner Mongolia",
    "Shaanxi",
    "Ningxia",
    "Gansu",
    "Xinjiang",
    "Qinghai",
    "Tibet",
    "Chongqing",
    "Sichuan",
    "Guizhou",
    "Yunnan",
    "Guangxi",
];

const ALIASES: [(&str, &str); 4] = [
    ("xizang", "Tibet"),
    ("neimenggu", "Inner Mongolia"),
    ("neimongol", "Inner Mongolia"),
    ("innermongolia", "Inner Mongolia"),
];

fn normalize(name: &str) -> String {
    name.chars()
        .filter(|c| !c.is_whitespace() && *c != '_' && *c != '-')
        .flat_map(char::to_lowercase)
        .collect()
}

/// Economic-geography assignment of provinces to east / central / west.
#[derive(Debug, Clone)]
pub struct RegionMap {
    /// normalized name → (canonical name, region)
    entries: BTreeMap<String, (String, Region)>,
}

impl Default for RegionMap {
    fn default() -> Self {
        let mut entries = BTreeMap::new();
        for (names, region) in [
            (&EAST[..], Region::East),
            (&CENTRAL[..], Region::Central),
            (&WEST[..], Region::West),
        ] {
            for &name in names {
                entries.insert(normalize(name), (name.to_string(), region));
            }
        }
        let mut map = Self { entries };
        for (alias, canonical) in ALIASES {
            let target = map.entries[&normalize(canonical)].clone();
            map.entries.entry(alias.to_string()).or_insert(target);
        }
        map
    }
}

impl RegionMap {
    /// Reads a `province,region` CSV; the result replaces the built-in table.
    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Self, IngestError> {
        let mut rdr = csv::Reader::from_path(path)?;
        let mut entries = BTreeMap::new();
        for row in rdr.records() {
            let row = row?;
            let province = row.get(0).unwrap_or("").trim().to_string();
            let region: Region = row.get(1).unwrap_or("").parse()?;
            if province.is_empty() {
                return Err(IngestError::InvalidValue {
                    field: "province".into(),
                    value: province,
                });
            }
            entries.insert(normalize(&province), (province, region));
        }
        Ok(Self { entries })
    }

    /// Returns the canonical province name and its region.
    pub fn lookup(&self, province: &str) -> Result<(&str, Region), IngestError> {
        self.entries
            .get(&normalize(province))
            .map(|(name, region)| (name.as_str(), *region))
            .ok_or_else(|| IngestError::UnknownProvince(province.to_string()))
    }

    /// Distinct canonical provinces in a region, sorted.
    pub fn provinces(&self, region: Region) -> Vec<&str> {
        let mut out: Vec<&str> = self
            .entries
            .values()
            .filter(|(_, r)| *r == region)
            .map(|(n, _)| n.as_str())
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }
}

pub fn region_of(province: &str, map: &RegionMap) -> Result<Region, IngestError> {
    map.lookup(province).map(|(_, r)| r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn footnote_examples() {
        let m = RegionMap::default();
        assert_eq!(region_of("Hebei", &m).unwrap(), Region::East);
        assert_eq!(region_of("Shanxi", &m).unwrap(), Region::Central);
        assert_eq!(region_of("Tibet", &m).unwrap(), Region::West);
        assert_eq!(region_of("inner_mongolia", &m).unwrap(), Region::West);
        assert_eq!(region_of("Xizang", &m).unwrap(), Region::West);
        assert!(matches!(
            region_of("Atlantis", &m),
            Err(IngestError::UnknownProvince(_))
        ));
    }

    #[test]
    fn partition_sizes() {
        let m = RegionMap::default();
        let sizes: Vec<usize> = Region::ALL.iter().map(|&r| m.provinces(r).len()).collect();
        assert_eq!(sizes, vec![13, 6, 12]);
        let mut all: Vec<&str> = Region::ALL.iter().flat_map(|&r| m.provinces(r)).collect();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), 31);
    }
}
