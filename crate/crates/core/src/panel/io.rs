use std::io::{Read, Write};

use super::{CohortKey, PanelCell, PanelError, PseudoPanel};

const KEY_COLUMNS: [&str; 5] = ["birth_bin", "gender", "region", "year", "n"];

/// Writes the panel as `birth_bin,gender,region,year,n,<variables…>`; missing values are empty fields.
pub fn write_panel_csv<W: Write>(panel: &PseudoPanel, writer: W) -> Result<(), PanelError> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = KEY_COLUMNS.to_vec();
    header.extend(panel.variables().iter().map(String::as_str));
    w.write_record(&header)?;
    for c in panel.cells() {
        let mut row = vec![
            c.key.birth_bin.to_string(),
            c.key.gender.to_string(),
            c.key.region.to_string(),
            c.year.to_string(),
            c.n.to_string(),
        ];
        row.extend(c.values.iter().map(|v| v.map(|x| x.to_string()).unwrap_or_default()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_panel_csv<R: Read>(reader: R) -> Result<PseudoPanel, PanelError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.len() < KEY_COLUMNS.len() || headers.iter().zip(KEY_COLUMNS).any(|(h, k)| h != k) {
        return Err(PanelError::Format(format!(
            "header must start with {}",
            KEY_COLUMNS.join(",")
        )));
    }
    let variables: Vec<String> = headers.iter().skip(KEY_COLUMNS.len()).map(String::from).collect();
    let mut cells = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let bad = |what: &str| PanelError::Format(format!("line {line}: invalid {what}"));
        let birth_bin: i32 = row[0].parse().map_err(|_| bad("birth_bin"))?;
        let gender = row[1].parse().map_err(|_| bad("gender"))?;
        let region = row[2].parse().map_err(|_| bad("region"))?;
        let year: i32 = row[3].parse().map_err(|_| bad("year"))?;
        let n: usize = row[4].parse().map_err(|_| bad("n"))?;
        let values = row
            .iter()
            .skip(KEY_COLUMNS.len())
            .map(|f| {
                if f.is_empty() {
                    Ok(None)
                } else {
                    f.parse::<f64>().map(Some).map_err(|_| bad("value"))
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        cells.push(PanelCell {
            key: CohortKey {
                birth_bin,
                gender,
                region,
            },
            year,
            n,
            values,
        });
    }
    PseudoPanel::from_cells(variables, cells)
}
