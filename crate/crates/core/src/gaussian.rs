//! Multivariate Gaussian beliefs over topic preferences.
//!
//! All inverses, determinants and quadratic forms go through a Cholesky or
//! symmetric eigen factorization. A Cholesky factor is used whenever it can
//! certify that every eigenvalue already clears [`EIGEN_FLOOR`]; otherwise the
//! spectrum is computed and floored explicitly.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Smallest eigenvalue any covariance is allowed to carry before inversion.
pub const EIGEN_FLOOR: f64 = 1e-12;

/// Absolute symmetry tolerance, scaled by `max(1, max |a_ij|)`.
pub const SYMMETRY_TOLERANCE: f64 = 1e-9;

/// Eigenvalues below `-PSD_TOLERANCE * max(1, λ_max)` are not rounding noise.
const PSD_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianBelief {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl GaussianBelief {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != cov.ncols() {
            return Err(Error::DimensionMismatch {
                expected: cov.nrows(),
                found: cov.ncols(),
            });
        }
        if mean.len() != cov.nrows() {
            return Err(Error::DimensionMismatch {
                expected: mean.len(),
                found: cov.nrows(),
            });
        }
        check_symmetric(&cov)?;
        Ok(Self { mean, cov })
    }

    /// `N(0, variance * I)` in `k` dimensions.
    pub fn isotropic(k: usize, variance: f64) -> Self {
        Self {
            mean: DVector::zeros(k),
            cov: DMatrix::identity(k, k) * variance,
        }
    }

    pub(crate) fn from_parts(mean: DVector<f64>, cov: DMatrix<f64>) -> Self {
        debug_assert_eq!(mean.len(), cov.nrows());
        Self { mean, cov }
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// `KL(post || prior)` for two multivariate normals.
pub fn kl_divergence(post: &GaussianBelief, prior: &GaussianBelief) -> Result<f64> {
    let k = prior.dim();
    if post.dim() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            found: post.dim(),
        });
    }
    let prior_factor = Factor::new(&prior.cov)?;
    let post_factor = Factor::new(&post.cov)?;

    let diff = &prior.mean - &post.mean;
    let trace = prior_factor.inv_trace(&post.cov);
    let quad = prior_factor.inv_quad(&diff);
    let log_det_ratio = prior_factor.log_det() - post_factor.log_det();

    let kl = 0.5 * (trace + quad - k as f64 + log_det_ratio);
    if !kl.is_finite() {
        return Err(Error::SingularCovariance {
            index: 0,
            value: f64::NAN,
        });
    }
    Ok(kl.max(0.0))
}

/// Returns `U max(Λ, tau) Uᵀ` for `cov = U Λ Uᵀ`.
pub fn clip_eigenvalues(cov: &DMatrix<f64>, tau: f64) -> Result<DMatrix<f64>> {
    if tau <= 0.0 || !tau.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "eigenvalue clip threshold must be positive, got {tau}"
        )));
    }
    check_symmetric(cov)?;
    if certified_min_eigenvalue(cov).is_some_and(|lower| lower >= tau) {
        return Ok(cov.clone());
    }
    let eigen = SymmetricEigen::new(cov.clone());
    if eigen.eigenvalues.iter().all(|&v| v >= tau) {
        return Ok(cov.clone());
    }
    let clipped = eigen.eigenvalues.map(|v| v.max(tau));
    Ok(reconstruct(&eigen.eigenvectors, &clipped))
}

/// Symmetrizes `cov` and floors its spectrum at [`EIGEN_FLOOR`].
pub fn floor_and_symmetrize(cov: &DMatrix<f64>) -> DMatrix<f64> {
    assert!(cov.is_square(), "covariance must be square");
    let sym = symmetrize(cov);
    if certified_min_eigenvalue(&sym).is_some_and(|lower| lower >= EIGEN_FLOOR) {
        return sym;
    }
    let eigen = SymmetricEigen::new(sym.clone());
    if eigen.eigenvalues.iter().all(|&v| v >= EIGEN_FLOOR) {
        return sym;
    }
    let floored = eigen.eigenvalues.map(|v| v.max(EIGEN_FLOOR));
    reconstruct(&eigen.eigenvectors, &floored)
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

fn check_symmetric(m: &DMatrix<f64>) -> Result<()> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch {
            expected: m.nrows(),
            found: m.ncols(),
        });
    }
    let scale = m.iter().fold(1.0f64, |acc, v| acc.max(v.abs()));
    let asymmetry = max_asymmetry(m);
    if asymmetry > SYMMETRY_TOLERANCE * scale || asymmetry.is_nan() {
        return Err(Error::NotSymmetric { asymmetry });
    }
    Ok(())
}

fn reconstruct(vectors: &DMatrix<f64>, values: &DVector<f64>) -> DMatrix<f64> {
    let scaled = vectors * DMatrix::from_diagonal(values);
    symmetrize(&(scaled * vectors.transpose()))
}

/// Lower bound on the smallest eigenvalue, `1 / tr(Σ⁻¹)`, when `Σ` admits a
/// Cholesky factor.
fn certified_min_eigenvalue(cov: &DMatrix<f64>) -> Option<f64> {
    let l = cov.clone().cholesky()?.unpack();
    let l_inv = l.solve_lower_triangular(&DMatrix::identity(l.nrows(), l.nrows()))?;
    let inv_trace = l_inv.norm_squared();
    (inv_trace.is_finite() && inv_trace > 0.0).then(|| 1.0 / inv_trace)
}

/// Factorization of a covariance with its spectrum floored at [`EIGEN_FLOOR`].
enum Factor {
    /// `Σ = L Lᵀ`; stores `L` and `L⁻¹`.
    Cholesky {
        l: DMatrix<f64>,
        l_inv: DMatrix<f64>,
    },
    Spectral {
        vectors: DMatrix<f64>,
        values: DVector<f64>,
    },
}

impl Factor {
    fn new(cov: &DMatrix<f64>) -> Result<Self> {
        let sym = symmetrize(cov);
        if let Some(chol) = sym.clone().cholesky() {
            let l = chol.unpack();
            let n = l.nrows();
            if let Some(l_inv) = l.solve_lower_triangular(&DMatrix::identity(n, n)) {
                let inv_trace = l_inv.norm_squared();
                if inv_trace.is_finite() && 1.0 / inv_trace >= EIGEN_FLOOR {
                    return Ok(Factor::Cholesky { l, l_inv });
                }
            }
        }
        let eigen = SymmetricEigen::new(sym);
        let max = eigen
            .eigenvalues
            .iter()
            .fold(1.0f64, |acc, &v| if v.is_finite() { acc.max(v) } else { acc });
        for (index, &value) in eigen.eigenvalues.iter().enumerate() {
            if !value.is_finite() || value < -PSD_TOLERANCE * max {
                return Err(Error::SingularCovariance { index, value });
            }
        }
        Ok(Factor::Spectral {
            vectors: eigen.eigenvectors,
            values: eigen.eigenvalues.map(|v| v.max(EIGEN_FLOOR)),
        })
    }

    fn log_det(&self) -> f64 {
        match self {
            Factor::Cholesky { l, .. } => 2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>(),
            Factor::Spectral { values, .. } => values.iter().map(|v| v.ln()).sum(),
        }
    }

    /// `vᵀ Σ⁻¹ v`
    fn inv_quad(&self, v: &DVector<f64>) -> f64 {
        match self {
            Factor::Cholesky { l_inv, .. } => (l_inv * v).norm_squared(),
            Factor::Spectral { vectors, values } => {
                let projected = vectors.tr_mul(v);
                projected
                    .iter()
                    .zip(values.iter())
                    .map(|(d, lambda)| d * d / lambda)
                    .sum()
            }
        }
    }

    /// `tr(Σ⁻¹ A)`
    fn inv_trace(&self, a: &DMatrix<f64>) -> f64 {
        match self {
            Factor::Cholesky { l_inv, .. } => {
                // tr(L⁻ᵀ L⁻¹ A) = Σ_ij (L⁻¹ A)_ij (L⁻¹)_ij
                let left = l_inv * a;
                left.component_mul(l_inv).sum()
            }
            Factor::Spectral { vectors, values } => {
                let rotated = vectors.tr_mul(&(a * vectors));
                rotated
                    .diagonal()
                    .iter()
                    .zip(values.iter())
                    .map(|(d, lambda)| d / lambda)
                    .sum()
            }
        }
    }
}
