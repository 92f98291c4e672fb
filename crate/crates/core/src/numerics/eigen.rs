use super::{Mat, Scalar, SymMat};

/// Eigendecomposition `A = V diag(values) Vᵀ` of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct SymEigen<T> {
    pub values: Vec<T>,
    /// Eigenvectors stored as columns.
    pub vectors: Mat<T>,
}

impl<T: Scalar> SymEigen<T> {
    /// Eigenvalue magnitude below which a direction is treated as null.
    pub fn cutoff(&self) -> T {
        let max = self.values.iter().fold(T::zero(), |m, v| m.max(v.abs()));
        T::from_usize_lossy(self.values.len()) * T::epsilon() * max
    }

    pub fn rank(&self) -> usize {
        let cut = self.cutoff();
        self.values.iter().filter(|v| v.abs() > cut).count()
    }

    /// Ratio of the largest to the smallest retained eigenvalue magnitude.
    pub fn condition_number(&self) -> T {
        let abs: Vec<T> = self.values.iter().map(|v| v.abs()).collect();
        let max = abs.iter().fold(T::zero(), |m, &v| m.max(v));
        let min = abs.iter().fold(T::infinity(), |m, &v| m.min(v));
        if min == T::zero() {
            T::infinity()
        } else {
            max / min
        }
    }

    fn reassemble(&self, f: impl Fn(T) -> T) -> SymMat<T> {
        let n = self.values.len();
        let mapped: Vec<T> = self.values.iter().map(|&v| f(v)).collect();
        let mut out = Mat::zeros(n, n);
        for (k, &d) in mapped.iter().enumerate() {
            if d == T::zero() {
                continue;
            }
            for i in 0..n {
                let vik = self.vectors[(i, k)] * d;
                for j in 0..n {
                    out[(i, j)] = out[(i, j)] + vik * self.vectors[(j, k)];
                }
            }
        }
        SymMat::from_mat(&out).expect("square")
    }
}

/// Cyclic Jacobi eigendecomposition. Eigenvalues are returned in descending order.
pub fn symmetric_eigen<T: Scalar>(a: &SymMat<T>) -> SymEigen<T> {
    let n = a.order();
    let mut m = a.as_mat().clone();
    let mut v = Mat::identity(n);
    let scale = m.max_abs();
    if scale == T::zero() || n <= 1 {
        let values = (0..n).map(|i| m[(i, i)]).collect();
        return SymEigen { values, vectors: v };
    }
    let tiny = T::epsilon() * T::epsilon() * scale * scale;

    for _sweep in 0..100 {
        let off: T = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[(i, j)] * m[(i, j)])
            .sum();
        if off <= tiny {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if apq.abs() <= T::min_positive_value() {
                    continue;
                }
                let app = m[(p, p)];
                let aqq = m[(q, q)];
                let theta = (aqq - app) / (T::lit(2.0) * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(j, j)].partial_cmp(&m[(i, i)]).unwrap_or(std::cmp::Ordering::Equal));
    let values = order.iter().map(|&i| m[(i, i)]).collect();
    let vectors = v.select_cols(&order);
    SymEigen { values, vectors }
}

/// Moore–Penrose inverse of a symmetric matrix.
///
/// Eigenvalues with magnitude at or below `order · ε · max|λ|` are treated as
/// zero, so a nonsingular input returns its ordinary inverse.
pub fn generalized_inverse<T: Scalar>(a: &SymMat<T>) -> SymMat<T> {
    let eig = symmetric_eigen(a);
    let cut = eig.cutoff();
    eig.reassemble(|v| if v.abs() > cut { v.recip() } else { T::zero() })
}
