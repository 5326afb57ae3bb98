//! Two-body dynamics and linearized mean/covariance propagation.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix6, Vector6};

use crate::error::{Error, Result};
use crate::gaussian::{Gaussian, GaussianMixture, WeightedComponent};
use crate::linalg::check_psd;
use crate::ode::{self, Tolerances};

pub const STATE_DIM: usize = 6;
/// Radius (DU) below which the inverse-square field is treated as singular.
pub const SINGULARITY_RADIUS: f64 = 1e-8;

const PACKED: usize = STATE_DIM + STATE_DIM * (STATE_DIM + 1) / 2;

#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)] // one per model, never stored in bulk
pub enum ForceModel {
    /// Point-mass gravity with parameter `mu` (DU³/TU²).
    TwoBody { mu: f64 },
    /// Fixed linear system `ẋ = A x`; used to check the covariance machinery.
    Linear(Matrix6<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsModel {
    pub force: ForceModel,
    noise_map: DMatrix<f64>,
    psd: DMatrix<f64>,
    diffusion: Matrix6<f64>,
    pub tolerances: Tolerances,
}

impl DynamicsModel {
    /// Two-body model with identity noise map and zero process noise.
    pub fn two_body(mu: f64) -> Result<Self> {
        if !(mu > 0.0) {
            return Err(Error::param("mu", format!("{mu} is not positive")));
        }
        Ok(Self::with_force(ForceModel::TwoBody { mu }))
    }

    pub fn linear(a: Matrix6<f64>) -> Self {
        Self::with_force(ForceModel::Linear(a))
    }

    fn with_force(force: ForceModel) -> Self {
        Self {
            force,
            noise_map: DMatrix::identity(STATE_DIM, STATE_DIM),
            psd: DMatrix::zeros(STATE_DIM, STATE_DIM),
            diffusion: Matrix6::zeros(),
            tolerances: Tolerances::default(),
        }
    }

    /// Sets the noise map `F_w` (6×p) and the constant power spectral density `Q` (p×p).
    pub fn with_process_noise(mut self, noise_map: DMatrix<f64>, psd: DMatrix<f64>) -> Result<Self> {
        let p = noise_map.ncols();
        if noise_map.nrows() != STATE_DIM || psd.nrows() != p || psd.ncols() != p {
            return Err(Error::Dimension(format!(
                "noise map is {}x{}, PSD is {}x{}",
                noise_map.nrows(),
                p,
                psd.nrows(),
                psd.ncols()
            )));
        }
        if crate::linalg::max_asymmetry(&psd) > 1e-12 {
            return Err(Error::param("psd", "not symmetric"));
        }
        check_psd(&psd).map_err(|e| Error::param("psd", e.to_string()))?;
        let d = &noise_map * &psd * noise_map.transpose();
        self.diffusion = Matrix6::from_fn(|i, j| 0.5 * (d[(i, j)] + d[(j, i)]));
        self.noise_map = noise_map;
        self.psd = psd;
        Ok(self)
    }

    pub fn with_tolerances(mut self, tolerances: Tolerances) -> Self {
        self.tolerances = tolerances;
        self
    }

    pub fn mu(&self) -> Option<f64> {
        match self.force {
            ForceModel::TwoBody { mu } => Some(mu),
            ForceModel::Linear(_) => None,
        }
    }

    pub fn noise_map(&self) -> &DMatrix<f64> {
        &self.noise_map
    }

    pub fn psd(&self) -> &DMatrix<f64> {
        &self.psd
    }

    /// `F_w Q F_wᵀ`.
    pub fn diffusion(&self) -> &Matrix6<f64> {
        &self.diffusion
    }

    pub fn has_process_noise(&self) -> bool {
        self.diffusion.iter().any(|v| *v != 0.0)
    }

    pub fn field(&self, x: &Vector6<f64>) -> Result<Vector6<f64>> {
        match &self.force {
            ForceModel::TwoBody { mu } => vector_field(x, *mu),
            ForceModel::Linear(a) => Ok(a * x),
        }
    }

    pub fn field_jacobian(&self, x: &Vector6<f64>) -> Result<Matrix6<f64>> {
        match &self.force {
            ForceModel::TwoBody { mu } => jacobian(x, *mu),
            ForceModel::Linear(a) => Ok(*a),
        }
    }
}

fn radius_checked(state: &Vector6<f64>) -> Result<f64> {
    let r = state.fixed_rows::<3>(0).norm();
    if !(r >= SINGULARITY_RADIUS) {
        return Err(Error::Singularity { radius: r });
    }
    Ok(r)
}

/// `(ṙ, v̇) = (v, −μ r / |r|³)`.
pub fn vector_field(state: &Vector6<f64>, mu: f64) -> Result<Vector6<f64>> {
    let r = radius_checked(state)?;
    let k = -mu / (r * r * r);
    Ok(Vector6::new(state[3], state[4], state[5], k * state[0], k * state[1], k * state[2]))
}

/// Jacobian of [`vector_field`]: identity velocity block and the gravity-gradient
/// block `μ(3 r̂r̂ᵀ − I)/|r|³`.
pub fn jacobian(state: &Vector6<f64>, mu: f64) -> Result<Matrix6<f64>> {
    let r = radius_checked(state)?;
    let rhat = state.fixed_rows::<3>(0) / r;
    let gg = (rhat * rhat.transpose() * 3.0 - Matrix3::identity()) * (mu / (r * r * r));
    let mut f = Matrix6::zeros();
    f.fixed_view_mut::<3, 3>(0, 3).copy_from(&Matrix3::identity());
    f.fixed_view_mut::<3, 3>(3, 0).copy_from(&gg);
    Ok(f)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentResult {
    pub gaussian_out: Gaussian,
    pub steps_taken: usize,
    pub max_error_estimate: f64,
}

fn pack(mean: &Vector6<f64>, cov: &Matrix6<f64>) -> [f64; PACKED] {
    let mut y = [0.0; PACKED];
    y[..STATE_DIM].copy_from_slice(mean.as_slice());
    let mut k = STATE_DIM;
    for i in 0..STATE_DIM {
        for j in i..STATE_DIM {
            y[k] = cov[(i, j)];
            k += 1;
        }
    }
    y
}

fn unpack(y: &[f64; PACKED]) -> (Vector6<f64>, Matrix6<f64>) {
    let mean = Vector6::from_column_slice(&y[..STATE_DIM]);
    let mut cov = Matrix6::zeros();
    let mut k = STATE_DIM;
    for i in 0..STATE_DIM {
        for j in i..STATE_DIM {
            cov[(i, j)] = y[k];
            cov[(j, i)] = y[k];
            k += 1;
        }
    }
    (mean, cov)
}

pub(crate) fn to_state(v: &DVector<f64>) -> Result<Vector6<f64>> {
    if v.len() != STATE_DIM {
        return Err(Error::Dimension(format!("state has length {}, expected 6", v.len())));
    }
    Ok(Vector6::from_column_slice(v.as_slice()))
}

/// Propagates the mean alone under the deterministic field.
pub fn propagate_state(x: &Vector6<f64>, t0: f64, t1: f64, model: &DynamicsModel) -> Result<Vector6<f64>> {
    let y0: [f64; STATE_DIM] = (*x).into();
    let (y, _) = ode::integrate(
        |_, y: &[f64; STATE_DIM]| Ok(model.field(&Vector6::from_column_slice(y))?.into()),
        t0,
        y0,
        t1,
        model.tolerances,
    )?;
    Ok(Vector6::from_column_slice(&y))
}

/// Co-integrates the mean and the covariance Lyapunov equation
/// `Ṗ = F P + P Fᵀ + F_w Q F_wᵀ` with `F` evaluated along the mean.
pub fn propagate_component(g: &Gaussian, t0: f64, t1: f64, model: &DynamicsModel) -> Result<SegmentResult> {
    if !t0.is_finite() || !t1.is_finite() {
        return Err(Error::param("t1", "segment times must be finite"));
    }
    let mean = to_state(g.mean())?;
    let cov = Matrix6::from_column_slice(g.cov().as_slice());
    let diffusion = model.diffusion;
    // The packed upper triangle keeps the covariance exactly symmetric at every step.
    let (y, stats) = ode::integrate(
        |_, y: &[f64; PACKED]| {
            let (m, p) = unpack(y);
            let f = model.field_jacobian(&m)?;
            let fp = f * p;
            let pdot = fp + fp.transpose() + diffusion;
            Ok(pack(&model.field(&m)?, &pdot))
        },
        t0,
        pack(&mean, &cov),
        t1,
        model.tolerances,
    )?;
    let (m, p) = unpack(&y);
    Ok(SegmentResult {
        gaussian_out: Gaussian::from_parts(
            DVector::from_column_slice(m.as_slice()),
            DMatrix::from_column_slice(STATE_DIM, STATE_DIM, p.as_slice()),
        ),
        steps_taken: stats.steps,
        max_error_estimate: stats.max_error,
    })
}

/// Propagates every component independently; weights and ordering are unchanged.
pub fn propagate_mixture(mix: &GaussianMixture, t0: f64, t1: f64, model: &DynamicsModel) -> Result<GaussianMixture> {
    let comps = mix
        .components()
        .iter()
        .enumerate()
        .map(|(index, c)| {
            propagate_component(&c.gaussian, t0, t1, model)
                .map(|r| WeightedComponent { weight: c.weight, gaussian: r.gaussian_out })
                .map_err(|e| Error::at_component(index, e))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GaussianMixture::from_components_unchecked(comps))
}
