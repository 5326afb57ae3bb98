//! Gaussian and Gaussian-mixture densities and moment-matched collapse.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{self, check_psd, max_asymmetry, symmetrize};

/// Absolute symmetry tolerance accepted by [`Gaussian::new`].
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Tolerance on the total weight of a mixture.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;

/// Multivariate Gaussian described by its mean and covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl Gaussian {
    /// Validated constructor: shapes must agree and the covariance must be symmetric PSD.
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let n = mean.len();
        if cov.nrows() != n || cov.ncols() != n {
            return Err(Error::Dimension(format!(
                "mean has length {n}, covariance is {}x{}",
                cov.nrows(),
                cov.ncols()
            )));
        }
        let asym = max_asymmetry(&cov);
        if asym > SYMMETRY_TOL {
            return Err(Error::Asymmetric(asym));
        }
        check_psd(&cov)?;
        let mut cov = cov;
        symmetrize(&mut cov);
        Ok(Self { mean, cov })
    }

    /// Skips the eigenvalue check; the covariance is still symmetrized.
    pub(crate) fn from_parts(mean: DVector<f64>, mut cov: DMatrix<f64>) -> Self {
        debug_assert_eq!(mean.len(), cov.nrows());
        symmetrize(&mut cov);
        Self { mean, cov }
    }

    pub fn standard(n: usize) -> Self {
        Self { mean: DVector::zeros(n), cov: DMatrix::identity(n, n) }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn into_parts(self) -> (DVector<f64>, DMatrix<f64>) {
        (self.mean, self.cov)
    }

    /// Density at `x`. Requires a nonsingular covariance.
    pub fn pdf(&self, x: &DVector<f64>) -> f64 {
        let n = self.dim() as f64;
        let Some(chol) = self.cov.clone().cholesky() else {
            return f64::NAN;
        };
        let d = x - &self.mean;
        let sol = chol.solve(&d);
        let det: f64 = chol.l().diagonal().iter().map(|v| v * v).product();
        (-0.5 * d.dot(&sol)).exp() / ((2.0 * std::f64::consts::PI).powf(n) * det).sqrt()
    }
}

/// Univariate normal density.
pub fn normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    (-0.5 * d * d / var).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedComponent {
    pub weight: f64,
    pub gaussian: Gaussian,
}

/// Weighted sum of Gaussians sharing one dimension, weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    components: Vec<WeightedComponent>,
    dim: usize,
}

impl GaussianMixture {
    pub fn new(components: Vec<WeightedComponent>) -> Result<Self> {
        let Some(first) = components.first() else {
            return Err(Error::param("components", "a mixture needs at least one component"));
        };
        let dim = first.gaussian.dim();
        if let Some(bad) = components.iter().position(|c| c.gaussian.dim() != dim) {
            return Err(Error::Dimension(format!(
                "component {bad} has dimension {}, expected {dim}",
                components[bad].gaussian.dim()
            )));
        }
        if let Some(bad) = components.iter().position(|c| !(c.weight > 0.0 && c.weight <= 1.0)) {
            return Err(Error::param(
                "weight",
                format!("component {bad} weight {} outside (0, 1]", components[bad].weight),
            ));
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::param("weight", format!("weights sum to {total}, not 1")));
        }
        Ok(Self { components, dim })
    }

    pub(crate) fn from_components_unchecked(components: Vec<WeightedComponent>) -> Self {
        let dim = components[0].gaussian.dim();
        Self { components, dim }
    }

    pub fn single(g: Gaussian) -> Self {
        let dim = g.dim();
        Self { components: vec![WeightedComponent { weight: 1.0, gaussian: g }], dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn components(&self) -> &[WeightedComponent] {
        &self.components
    }

    pub fn weights(&self) -> impl Iterator<Item = f64> + '_ {
        self.components.iter().map(|c| c.weight)
    }

    pub fn pdf(&self, x: &DVector<f64>) -> f64 {
        self.components.iter().map(|c| c.weight * c.gaussian.pdf(x)).sum()
    }

    /// Moment-matched single Gaussian: overall mean and the covariance including the
    /// spread of the component means.
    pub fn collapse(&self) -> Gaussian {
        let n = self.dim;
        let mut mean = DVector::zeros(n);
        for c in &self.components {
            mean.axpy(c.weight, c.gaussian.mean(), 1.0);
        }
        let mut cov = DMatrix::zeros(n, n);
        for c in &self.components {
            let d = c.gaussian.mean() - &mean;
            cov += c.weight * (c.gaussian.cov() + &d * d.transpose());
        }
        Gaussian::from_parts(mean, linalg::symmetrized(cov))
    }
}

/// Free-function form of [`GaussianMixture::collapse`].
pub fn collapse(mix: &GaussianMixture) -> Gaussian {
    mix.collapse()
}
