//! Marginal covariance assembly: Omega = beta beta' + diag(sigma2).

use ndarray::{Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};
use crate::linalg;

/// Absolute symmetry tolerance for covariance validation.
pub const SYMMETRY_TOL: f64 = 1e-10;
/// Eigenvalue floor for the PSD check, relative to the trace.
pub const PSD_FLOOR_SCALE: f64 = -1e-8;

/// Symmetric positive-semidefinite marginal covariance over the latent
/// vector Z = {Y, X}.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalCovariance {
    omega: Array2<f64>,
}

impl MarginalCovariance {
    /// Wrap an existing matrix after checking symmetry and PSD.
    pub fn try_new(omega: Array2<f64>) -> Result<MarginalCovariance> {
        let mc = MarginalCovariance { omega };
        mc.validate()?;
        Ok(mc)
    }

    pub fn dim(&self) -> usize {
        self.omega.nrows()
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.omega
    }

    pub fn into_matrix(self) -> Array2<f64> {
        self.omega
    }

    /// Symmetry within `SYMMETRY_TOL` absolute; all eigenvalues at least
    /// `PSD_FLOOR_SCALE * trace`.
    pub fn validate(&self) -> Result<()> {
        let n = self.omega.nrows();
        if n != self.omega.ncols() {
            return Err(Error::dimension(format!(
                "covariance must be square, got {}x{}",
                n,
                self.omega.ncols()
            )));
        }
        for i in 0..n {
            for j in 0..i {
                let gap = (self.omega[(i, j)] - self.omega[(j, i)]).abs();
                if gap > SYMMETRY_TOL {
                    return Err(Error::numerical(format!(
                        "covariance asymmetric at ({i},{j}): gap {gap:.3e}"
                    )));
                }
            }
        }
        let trace: f64 = (0..n).map(|i| self.omega[(i, i)]).sum();
        let floor = PSD_FLOOR_SCALE * trace.abs();
        let (eigvals, _) = linalg::symmetric_eigen(&self.omega.view());
        let min_eig = eigvals.iter().cloned().fold(f64::INFINITY, f64::min);
        if min_eig < floor {
            return Err(Error::numerical(format!(
                "covariance not PSD: smallest eigenvalue {min_eig:.6e} below floor {floor:.3e}"
            )));
        }
        Ok(())
    }
}

/// Assemble `beta beta' + diag(sigma2)` with an exactly symmetric product
/// (each off-diagonal computed once and mirrored, so the result is
/// bit-symmetric regardless of summation order elsewhere).
pub fn assemble_marginal_covariance(
    beta: &ArrayView2<f64>,
    sigma2: &ArrayView1<f64>,
) -> Result<MarginalCovariance> {
    let p = beta.nrows();
    let k = beta.ncols();
    if sigma2.len() != p {
        return Err(Error::dimension(format!(
            "loadings have {p} rows but sigma2 has {} entries",
            sigma2.len()
        )));
    }
    if let Some(bad) = sigma2.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
        return Err(Error::invalid(format!("sigma2 must be strictly positive, got {bad}")));
    }
    let mut omega = Array2::<f64>::zeros((p, p));
    for i in 0..p {
        for j in 0..=i {
            let mut s = 0.0;
            for c in 0..k {
                s += beta[(i, c)] * beta[(j, c)];
            }
            omega[(i, j)] = s;
            omega[(j, i)] = s;
        }
        omega[(i, i)] += sigma2[i];
    }
    Ok(MarginalCovariance { omega })
}
