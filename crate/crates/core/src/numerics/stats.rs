use super::{NumericsError, Scalar};

/// Percentile by linear interpolation between closest ranks at `(n − 1)·p/100`.
pub fn percentile<T: Scalar>(values: &[T], p: T) -> Result<T, NumericsError> {
    if values.is_empty() {
        return Err(NumericsError::EmptyInput);
    }
    if !(p >= T::zero() && p <= T::lit(100.0)) {
        return Err(NumericsError::Domain(format!("percentile {p} outside [0, 100]")));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(NumericsError::NonFinite);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let rank = T::from_usize_lossy(sorted.len() - 1) * p / T::lit(100.0);
    let lo = rank.floor();
    let lo_idx = lo.to_usize().expect("non-negative rank");
    let hi_idx = (lo_idx + 1).min(sorted.len() - 1);
    let frac = rank - lo;
    Ok(sorted[lo_idx] + frac * (sorted[hi_idx] - sorted[lo_idx]))
}

pub fn mean<T: Scalar>(values: &[T]) -> Option<T> {
    if values.is_empty() {
        return None;
    }
    Some(values.iter().copied().sum::<T>() / T::from_usize_lossy(values.len()))
}

/// Sample standard deviation with `n − 1` in the denominator; zero for a single value.
pub fn sample_sd<T: Scalar>(values: &[T]) -> Option<T> {
    let m = mean(values)?;
    if values.len() < 2 {
        return Some(T::zero());
    }
    let ss: T = values.iter().map(|&v| (v - m) * (v - m)).sum();
    Some((ss / T::from_usize_lossy(values.len() - 1)).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percentile_endpoints() {
        let v = [3.0, 1.0, 4.0, 2.0];
        assert_eq!(percentile(&v, 0.0).unwrap(), 1.0);
        assert_eq!(percentile(&v, 100.0).unwrap(), 4.0);
    }

    #[test]
    fn percentile_interpolates() {
        // rank (5 − 1) · 0.25 = 1 → second smallest
        assert_eq!(percentile(&[50.0, 10.0, 30.0, 20.0, 40.0], 25.0).unwrap(), 20.0);
        // rank 0.5 between 1 and 2
        assert_eq!(percentile(&[1.0, 2.0, 3.0], 25.0).unwrap(), 1.5);
    }

    #[test]
    fn percentile_errors() {
        assert_eq!(percentile::<f64>(&[], 10.0), Err(NumericsError::EmptyInput));
        assert!(percentile(&[1.0], 101.0).is_err());
    }

    #[test]
    fn sd_of_single_value_is_zero() {
        assert_eq!(sample_sd(&[2.5]), Some(0.0));
        assert_eq!(sample_sd::<f64>(&[]), None);
        assert!((sample_sd(&[1.0f64, 2.0, 3.0]).unwrap() - 1.0).abs() < 1e-15);
    }
}
