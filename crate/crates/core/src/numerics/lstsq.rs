use super::{Mat, NumericsError, Scalar, SymMat};

/// Least-squares fit computed from a Householder QR factorization.
#[derive(Debug, Clone)]
pub struct LeastSquares<T> {
    pub beta: Vec<T>,
    pub residuals: Vec<T>,
    /// Upper-triangular factor `R` with `XᵀX = RᵀR`.
    r: Mat<T>,
}

impl<T: Scalar> LeastSquares<T> {
    /// `(XᵀX)⁻¹ = R⁻¹ R⁻ᵀ`.
    pub fn xtx_inverse(&self) -> SymMat<T> {
        let k = self.r.rows();
        let mut rinv = Mat::zeros(k, k);
        for col in 0..k {
            // Back substitution against unit vector e_col.
            for i in (0..=col).rev() {
                let mut s = if i == col { T::one() } else { T::zero() };
                for j in i + 1..=col {
                    s = s - self.r[(i, j)] * rinv[(j, col)];
                }
                rinv[(i, col)] = s / self.r[(i, i)];
            }
        }
        let prod = rinv.matmul(&rinv.transpose());
        SymMat::from_mat(&prod).expect("square")
    }

    pub fn ssr(&self) -> T {
        self.residuals.iter().map(|&e| e * e).sum()
    }
}

/// Minimizes `‖y − Xβ‖²` by Householder QR.
///
/// A pivot smaller than `max(n, k) · ε · max column norm` is reported as
/// [`NumericsError::RankDeficient`] with the offending column index.
pub fn solve_least_squares<T: Scalar>(x: &Mat<T>, y: &[T]) -> Result<LeastSquares<T>, NumericsError> {
    let (n, k) = (x.rows(), x.cols());
    if y.len() != n {
        return Err(NumericsError::Dimension(format!(
            "design has {n} rows but response has {}",
            y.len()
        )));
    }
    if n < k {
        return Err(NumericsError::Underdetermined { rows: n, cols: k });
    }
    if !x.is_finite() || y.iter().any(|v| !v.is_finite()) {
        return Err(NumericsError::NonFinite);
    }

    let max_col_norm = (0..k)
        .map(|j| (0..n).map(|i| x[(i, j)] * x[(i, j)]).sum::<T>().sqrt())
        .fold(T::zero(), T::max);
    let tol = T::from_usize_lossy(n.max(k)) * T::epsilon() * max_col_norm;

    let mut a = x.clone();
    let mut qty = y.to_vec();
    let mut v = vec![T::zero(); n];
    for j in 0..k {
        let norm = (j..n).map(|i| a[(i, j)] * a[(i, j)]).sum::<T>().sqrt();
        if norm <= tol {
            return Err(NumericsError::RankDeficient(j));
        }
        let alpha = if a[(j, j)] > T::zero() { -norm } else { norm };
        for i in j..n {
            v[i] = a[(i, j)];
        }
        v[j] = v[j] - alpha;
        let vnorm2: T = (j..n).map(|i| v[i] * v[i]).sum();
        let two = T::lit(2.0);
        for c in j..k {
            let dot: T = (j..n).map(|i| v[i] * a[(i, c)]).sum();
            let f = two * dot / vnorm2;
            for i in j..n {
                a[(i, c)] = a[(i, c)] - f * v[i];
            }
        }
        let dot: T = (j..n).map(|i| v[i] * qty[i]).sum();
        let f = two * dot / vnorm2;
        for i in j..n {
            qty[i] = qty[i] - f * v[i];
        }
    }

    let r = Mat::from_fn(k, k, |i, j| if j >= i { a[(i, j)] } else { T::zero() });
    let mut beta = vec![T::zero(); k];
    for i in (0..k).rev() {
        let mut s = qty[i];
        for j in i + 1..k {
            s = s - r[(i, j)] * beta[j];
        }
        beta[i] = s / r[(i, i)];
    }
    let fitted = x.matvec(&beta);
    let residuals = y.iter().zip(&fitted).map(|(&a, &b)| a - b).collect();
    Ok(LeastSquares { beta, residuals, r })
}

/// Solves `A x = b` for symmetric positive definite `A` by Cholesky.
pub fn solve_spd<T: Scalar>(a: &SymMat<T>, b: &[T]) -> Result<Vec<T>, NumericsError> {
    if b.len() != a.order() {
        return Err(NumericsError::Dimension("rhs length".into()));
    }
    let l = cholesky(a)?;
    Ok(cholesky_solve(&l, b))
}

/// Inverse of a symmetric positive definite matrix.
pub fn invert_spd<T: Scalar>(a: &SymMat<T>) -> Result<SymMat<T>, NumericsError> {
    let n = a.order();
    let l = cholesky(a)?;
    let mut inv = Mat::zeros(n, n);
    let mut e = vec![T::zero(); n];
    for c in 0..n {
        e.iter_mut().for_each(|v| *v = T::zero());
        e[c] = T::one();
        let col = cholesky_solve(&l, &e);
        for (r, v) in col.into_iter().enumerate() {
            inv[(r, c)] = v;
        }
    }
    SymMat::from_mat(&inv)
}

fn cholesky<T: Scalar>(a: &SymMat<T>) -> Result<Mat<T>, NumericsError> {
    let n = a.order();
    let scale = a.as_mat().max_abs();
    let tol = T::from_usize_lossy(n) * T::epsilon() * scale;
    let mut l = Mat::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d = d - l[(j, k)] * l[(j, k)];
        }
        if d <= tol {
            return Err(NumericsError::RankDeficient(j));
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s = s - l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    Ok(l)
}

fn cholesky_solve<T: Scalar>(l: &Mat<T>, b: &[T]) -> Vec<T> {
    let n = l.rows();
    let mut z = vec![T::zero(); n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s = s - l[(i, k)] * z[k];
        }
        z[i] = s / l[(i, i)];
    }
    let mut x = vec![T::zero(); n];
    for i in (0..n).rev() {
        let mut s = z[i];
        for k in i + 1..n {
            s = s - l[(k, i)] * x[k];
        }
        x[i] = s / l[(i, i)];
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line() {
        let x = Mat::from_rows(&[[1.0f64, 1.0], [1.0, 2.0], [1.0, 3.0]]).unwrap();
        let fit = solve_least_squares(&x, &[2.0, 4.0, 6.0]).unwrap();
        assert!(fit.beta[0].abs() < 1e-12);
        assert!((fit.beta[1] - 2.0).abs() < 1e-12);
        assert!(fit.ssr() < 1e-24);
    }

    #[test]
    fn identity_design() {
        let x = Mat::<f64>::identity(3);
        let fit = solve_least_squares(&x, &[5.0, -1.0, 0.0]).unwrap();
        for (b, e) in fit.beta.iter().zip([5.0, -1.0, 0.0]) {
            assert!((b - e).abs() < 1e-14);
        }
    }

    #[test]
    fn duplicated_column_is_rank_deficient() {
        let x = Mat::from_rows(&[[1.0, 2.0, 2.0], [1.0, 3.0, 3.0], [1.0, 5.0, 5.0], [1.0, 1.0, 1.0]]).unwrap();
        let err = solve_least_squares(&x, &[1.0, 2.0, 3.0, 4.0]).unwrap_err();
        assert_eq!(err, NumericsError::RankDeficient(2));
    }

    #[test]
    fn fewer_rows_than_columns() {
        let x = Mat::from_rows(&[[1.0, 2.0]]).unwrap();
        assert!(matches!(
            solve_least_squares(&x, &[1.0]),
            Err(NumericsError::Underdetermined { .. })
        ));
    }

    #[test]
    fn works_in_single_precision() {
        let x = Mat::from_rows(&[[1.0f32, 0.0], [1.0, 1.0], [1.0, 2.0], [1.0, 3.0]]).unwrap();
        let fit = solve_least_squares(&x, &[1.0, 3.0, 5.0, 7.0]).unwrap();
        assert!((fit.beta[0] - 1.0).abs() < 1e-5);
        assert!((fit.beta[1] - 2.0).abs() < 1e-5);
    }

    #[test]
    fn xtx_inverse_matches_direct() {
        let x = Mat::from_rows(&[[1.0, 0.3], [1.0, 1.7], [1.0, -0.4], [1.0, 2.2]]).unwrap();
        let fit = solve_least_squares(&x, &[0.0; 4]).unwrap();
        let inv = fit.xtx_inverse();
        let prod = x.tr_matmul(&x).matmul(inv.as_mat());
        let eye = Mat::<f64>::identity(2);
        assert!(prod.sub(&eye).max_abs() < 1e-12);
    }

    #[test]
    fn cholesky_solve() {
        let a = SymMat::from_lower(2, &[4.0f64, 2.0, 3.0]).unwrap();
        let x = solve_spd(&a, &[2.0, 1.0]).unwrap();
        assert!((x[0] - 0.5).abs() < 1e-14 && x[1].abs() < 1e-14);
        let singular = SymMat::from_lower(2, &[1.0, 1.0, 1.0]).unwrap();
        assert!(solve_spd(&singular, &[1.0, 1.0]).is_err());
    }
}
