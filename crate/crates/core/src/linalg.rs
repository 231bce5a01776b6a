//! Dense symmetric linear algebra used by the sampler and the predictor.
//!
//! Everything here is deterministic pure Rust: a Cholesky factorization with
//! the house jitter policy, triangular solves, and a cyclic Jacobi
//! eigendecomposition for diagnostics and principal components.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

/// Relative jitter added to the diagonal when a factorization fails:
/// `JITTER_SCALE * trace`. One retry, then abort.
pub const JITTER_SCALE: f64 = 1e-10;

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky {
    lower: Array2<f64>,
}

impl Cholesky {
    /// Plain factorization; `None` if the matrix is not numerically positive
    /// definite. Only the lower triangle of `a` is read.
    pub fn new(a: &ArrayView2<f64>) -> Option<Cholesky> {
        let n = a.nrows();
        if n != a.ncols() {
            return None;
        }
        let mut l = Array2::<f64>::zeros((n, n));
        for i in 0..n {
            for j in 0..=i {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                if i == j {
                    if !(s > 0.0) || !s.is_finite() {
                        return None;
                    }
                    l[(i, i)] = s.sqrt();
                } else {
                    l[(i, j)] = s / l[(j, j)];
                }
            }
        }
        Some(Cholesky { lower: l })
    }

    pub fn dim(&self) -> usize {
        self.lower.nrows()
    }

    pub fn lower(&self) -> &Array2<f64> {
        &self.lower
    }

    /// Solve `A x = b` via forward then backward substitution.
    pub fn solve_vec(&self, b: &ArrayView1<f64>) -> Array1<f64> {
        let n = self.dim();
        debug_assert_eq!(b.len(), n);
        let l = &self.lower;
        let mut x = b.to_owned();
        // L y = b
        for i in 0..n {
            let mut s = x[i];
            for k in 0..i {
                s -= l[(i, k)] * x[k];
            }
            x[i] = s / l[(i, i)];
        }
        // L' x = y
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in (i + 1)..n {
                s -= l[(k, i)] * x[k];
            }
            x[i] = s / l[(i, i)];
        }
        x
    }

    /// Solve `L' x = b` (backward substitution only). Drawing `z ~ N(0, I)`
    /// and solving `L' x = z` yields `x ~ N(0, A^{-1})`.
    pub fn solve_transpose_vec(&self, b: &ArrayView1<f64>) -> Array1<f64> {
        let n = self.dim();
        debug_assert_eq!(b.len(), n);
        let l = &self.lower;
        let mut x = b.to_owned();
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in (i + 1)..n {
                s -= l[(k, i)] * x[k];
            }
            x[i] = s / l[(i, i)];
        }
        x
    }

    /// Inverse of the lower factor, itself lower triangular. With `G = L^{-1}`
    /// the inverse of the factored matrix is `G' G`, so `x = z G` (row form)
    /// has covariance `A^{-1}` for standard-normal rows `z`.
    pub fn lower_inverse(&self) -> Array2<f64> {
        let n = self.dim();
        let l = &self.lower;
        let mut g = Array2::<f64>::zeros((n, n));
        for j in 0..n {
            g[(j, j)] = 1.0 / l[(j, j)];
            for i in (j + 1)..n {
                let mut s = 0.0;
                for k in j..i {
                    s -= l[(i, k)] * g[(k, j)];
                }
                g[(i, j)] = s / l[(i, i)];
            }
        }
        g
    }

    /// Full inverse `A^{-1} = G' G`.
    pub fn inverse(&self) -> Array2<f64> {
        let g = self.lower_inverse();
        let n = self.dim();
        let mut inv = Array2::<f64>::zeros((n, n));
        for i in 0..n {
            for j in 0..=i {
                // (G'G)_{ij} = sum_k G_{ki} G_{kj}; G lower so k >= max(i, j).
                let mut s = 0.0;
                for k in i..n {
                    s += g[(k, i)] * g[(k, j)];
                }
                inv[(i, j)] = s;
                inv[(j, i)] = s;
            }
        }
        inv
    }
}

/// Cholesky with the jitter policy: on failure add `JITTER_SCALE * trace` to
/// the diagonal and retry once; on the second failure return an error that
/// names the smallest eigenvalue. `what` labels the matrix in diagnostics.
pub fn cholesky_with_jitter(a: &ArrayView2<f64>, what: &str) -> Result<Cholesky> {
    if let Some(c) = Cholesky::new(a) {
        return Ok(c);
    }
    let n = a.nrows();
    let trace: f64 = (0..n).map(|i| a[(i, i)]).sum();
    let jitter = JITTER_SCALE * trace.abs();
    let mut bumped = a.to_owned();
    for i in 0..n {
        bumped[(i, i)] += jitter;
    }
    if let Some(c) = Cholesky::new(&bumped.view()) {
        return Ok(c);
    }
    let (eigvals, _) = symmetric_eigen(a);
    let min_eig = eigvals.iter().cloned().fold(f64::INFINITY, f64::min);
    Err(Error::numerical(format!(
        "{what} is not positive definite even after jitter {jitter:.3e} (smallest eigenvalue {min_eig:.6e})"
    )))
}

/// Exactly-symmetric product `M' M` (upper triangle computed once, mirrored).
pub fn gram(m: &ArrayView2<f64>) -> Array2<f64> {
    let (rows, cols) = (m.nrows(), m.ncols());
    let mut out = Array2::<f64>::zeros((cols, cols));
    for i in 0..cols {
        for j in 0..=i {
            let mut s = 0.0;
            for r in 0..rows {
                s += m[(r, i)] * m[(r, j)];
            }
            out[(i, j)] = s;
            out[(j, i)] = s;
        }
    }
    out
}

/// Eigendecomposition of a symmetric matrix by the cyclic Jacobi method.
/// Returns `(eigenvalues, eigenvectors)` with eigenvalues descending and
/// eigenvectors in the corresponding columns.
pub fn symmetric_eigen(a: &ArrayView2<f64>) -> (Array1<f64>, Array2<f64>) {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "symmetric_eigen needs a square matrix");
    let mut m = a.to_owned();
    // Work on the symmetrized matrix so tiny asymmetries cannot stall rotation.
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    let mut v = Array2::<f64>::eye(n);
    let frob: f64 = m.iter().map(|x| x * x).sum::<f64>().sqrt();
    let tol = 1e-14 * frob.max(f64::MIN_POSITIVE);
    for _sweep in 0..100 {
        let mut off = 0.0f64;
        for i in 0..n {
            for j in (i + 1)..n {
                off += m[(i, j)] * m[(i, j)];
            }
        }
        if off.sqrt() <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let app = m[(p, p)];
                let aqq = m[(q, q)];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    -1.0 / (-theta + (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
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
    order.sort_by(|&i, &j| m[(j, j)].partial_cmp(&m[(i, i)]).unwrap());
    let eigvals = Array1::from_iter(order.iter().map(|&i| m[(i, i)]));
    let mut eigvecs = Array2::<f64>::zeros((n, n));
    for (col, &src) in order.iter().enumerate() {
        for row in 0..n {
            eigvecs[(row, col)] = v[(row, src)];
        }
    }
    (eigvals, eigvecs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn cholesky_reconstructs() {
        let a = array![[4.0, 2.0, 0.6], [2.0, 5.0, 1.0], [0.6, 1.0, 3.0]];
        let c = Cholesky::new(&a.view()).unwrap();
        let l = c.lower();
        let back = l.dot(&l.t());
        for i in 0..3 {
            for j in 0..3 {
                assert_abs_diff_eq!(back[(i, j)], a[(i, j)], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn cholesky_solve_matches_direct() {
        let a = array![[4.0, 2.0], [2.0, 5.0]];
        let b = array![1.0, -3.0];
        let c = Cholesky::new(&a.view()).unwrap();
        let x = c.solve_vec(&b.view());
        let r0 = 4.0 * x[0] + 2.0 * x[1];
        let r1 = 2.0 * x[0] + 5.0 * x[1];
        assert_abs_diff_eq!(r0, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r1, -3.0, epsilon = 1e-12);
    }

    #[test]
    fn inverse_matches_solve() {
        let a = array![[3.0, 1.0, 0.2], [1.0, 2.5, 0.4], [0.2, 0.4, 1.8]];
        let c = Cholesky::new(&a.view()).unwrap();
        let inv = c.inverse();
        let prod = a.dot(&inv);
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(prod[(i, j)], want, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn indefinite_matrix_rejected_with_eigenvalue() {
        let a = array![[1.0, 2.0], [2.0, 1.0]]; // eigenvalues 3, -1
        let err = cholesky_with_jitter(&a.view(), "test matrix").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("smallest eigenvalue"), "{msg}");
        assert!(msg.contains("-1.0"), "{msg}");
    }

    #[test]
    fn jacobi_recovers_known_spectrum() {
        // diag(5, 2, 1) conjugated by a rotation in the (0,1) plane.
        let th: f64 = 0.7;
        let (c, s) = (th.cos(), th.sin());
        let r = array![[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]];
        let d = array![[5.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 1.0]];
        let a = r.dot(&d).dot(&r.t());
        let (vals, vecs) = symmetric_eigen(&a.view());
        assert_abs_diff_eq!(vals[0], 5.0, epsilon = 1e-10);
        assert_abs_diff_eq!(vals[1], 2.0, epsilon = 1e-10);
        assert_abs_diff_eq!(vals[2], 1.0, epsilon = 1e-10);
        // A v = lambda v for each column.
        for col in 0..3 {
            let v = vecs.column(col);
            let av = a.dot(&v);
            for row in 0..3 {
                assert_abs_diff_eq!(av[row], vals[col] * v[row], epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn gram_is_exactly_symmetric() {
        let m = array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]];
        let g = gram(&m.view());
        assert_eq!(g[(0, 1)].to_bits(), g[(1, 0)].to_bits());
        assert_abs_diff_eq!(g[(0, 0)], 35.0, epsilon = 0.0);
        assert_abs_diff_eq!(g[(0, 1)], 44.0, epsilon = 0.0);
        assert_abs_diff_eq!(g[(1, 1)], 56.0, epsilon = 0.0);
    }
}
