use statrs::distribution::{ChiSquared, ContinuousCDF, Normal, StudentsT};

use super::{NumericsError, Scalar};

/// Upper-tail probability `P(χ²_df > x)`.
pub fn chi_square_sf<T: Scalar>(x: T, df: usize) -> Result<T, NumericsError> {
    if df == 0 {
        return Err(NumericsError::Domain("chi-square needs df >= 1".into()));
    }
    if !x.is_finite() {
        return Err(NumericsError::Domain(format!("non-finite statistic {x}")));
    }
    if x < T::zero() {
        return Err(NumericsError::Domain(format!("negative statistic {x}")));
    }
    if x == T::zero() {
        return Ok(T::one());
    }
    let dist = ChiSquared::new(df as f64).map_err(|e| NumericsError::Domain(e.to_string()))?;
    let p = dist.sf(x.to_f64().expect("finite")).clamp(0.0, 1.0);
    Ok(T::lit(p))
}

/// Upper-tail probability of the standard normal, `P(Z > z)`.
pub fn normal_sf<T: Scalar>(z: T) -> T {
    let dist = Normal::standard();
    T::lit(dist.sf(z.to_f64().unwrap_or(f64::NAN)))
}

/// Two-sided p-value of a t statistic with `df` degrees of freedom; normal when `df` is `None`.
pub fn two_sided_p<T: Scalar>(t: T, df: Option<usize>) -> T {
    let z = t.abs().to_f64().unwrap_or(f64::NAN);
    let p = match df {
        Some(df) if df > 0 => StudentsT::new(0.0, 1.0, df as f64)
            .map(|d| 2.0 * d.sf(z))
            .unwrap_or(f64::NAN),
        _ => 2.0 * Normal::standard().sf(z),
    };
    T::lit(p.clamp(0.0, 1.0))
}
