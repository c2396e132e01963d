//! Closed-form full-conditional parameters for the conjugate blocks.
//!
//! These functions only compute parameters; drawing happens in the sampler.
//! Keeping them separate lets tests compare the parameters exactly against
//! direct recomputation.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Beta, Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};
use crate::model::{GpCovariance, Hyperparameters, ModelState};
use crate::partition::{compatible_unchecked, log_eppf_unchecked};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaParams {
    pub a: f64,
    pub b: f64,
}

impl BetaParams {
    pub fn mean(&self) -> f64 {
        self.a / (self.a + self.b)
    }

    pub fn variance(&self) -> f64 {
        let s = self.a + self.b;
        self.a * self.b / (s * s * (s + 1.0))
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        Beta::new(self.a, self.b)
            .expect("beta parameters are positive")
            .sample(rng)
    }
}

/// Inverse-Gamma with shape/rate parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InvGammaParams {
    pub shape: f64,
    pub rate: f64,
}

impl InvGammaParams {
    /// Defined for `shape > 1`.
    pub fn mean(&self) -> f64 {
        self.rate / (self.shape - 1.0)
    }

    /// Defined for `shape > 2`.
    pub fn variance(&self) -> f64 {
        let m = self.mean();
        m * m / (self.shape - 2.0)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let g: f64 = Gamma::new(self.shape, 1.0 / self.rate)
            .expect("inverse-gamma parameters are positive")
            .sample(rng);
        // a Gamma draw can underflow to 0 for tiny shapes
        1.0 / g.max(f64::MIN_POSITIVE)
    }
}

/// Univariate Gaussian in precision form: mean `eta / precision`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalParams {
    pub precision: f64,
    pub eta: f64,
}

impl NormalParams {
    pub fn mean(&self) -> f64 {
        self.eta / self.precision
    }

    pub fn variance(&self) -> f64 {
        1.0 / self.precision
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        self.mean() + z / self.precision.sqrt()
    }
}

/// Multivariate Gaussian in precision form: mean `precision⁻¹ eta`.
#[derive(Debug, Clone, PartialEq)]
pub struct MvNormalParams {
    pub precision: DMatrix<f64>,
    pub eta: DVector<f64>,
}

impl MvNormalParams {
    fn factor(&self) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
        if let Some(c) = self.precision.clone().cholesky() {
            return Ok(c);
        }
        let dim = self.precision.nrows();
        let jitter = 1e-10 * self.precision.trace() / dim.max(1) as f64;
        let mut m = self.precision.clone();
        for k in 0..dim {
            m[(k, k)] += jitter;
        }
        m.cholesky()
            .ok_or_else(|| Error::Numeric("posterior precision is not positive definite".into()))
    }

    pub fn mean(&self) -> Result<DVector<f64>> {
        Ok(self.factor()?.solve(&self.eta))
    }

    pub fn covariance(&self) -> Result<DMatrix<f64>> {
        Ok(self.factor()?.inverse())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<f64>> {
        let chol = self.factor()?;
        let mean = chol.solve(&self.eta);
        let z = DVector::from_fn(self.eta.len(), |_, _| StandardNormal.sample(rng));
        // precision = L Lᵀ, so L⁻ᵀ z has covariance precision⁻¹
        let offset = chol
            .l()
            .transpose()
            .solve_upper_triangular(&z)
            .ok_or_else(|| Error::Numeric("singular Cholesky factor".into()))?;
        Ok((mean + offset).iter().copied().collect())
    }
}

/// Persistence-probability `α_j` conditional. The first period carries no
/// flags, so the count runs over periods 2..T.
pub fn alpha_conditional(state: &ModelState, hyper: &Hyperparameters, j: usize) -> BetaParams {
    let n = state.n_populations();
    let periods = state.n_periods();
    let s: usize = state.flags[j].iter().skip(1).map(|f| f.count()).sum();
    let trials = n * periods.saturating_sub(1);
    BetaParams {
        a: hyper.a_alpha + s as f64,
        b: hyper.b_alpha + (trials - s) as f64,
    }
}

pub fn delta2_conditional(state: &ModelState, hyper: &Hyperparameters, j: usize) -> InvGammaParams {
    let mut count = 0usize;
    let mut ss = 0.0;
    for (t, values) in state.beta_star[j].iter().enumerate() {
        count += values.len();
        for b in values {
            let d = b - state.psi[j][t];
            ss += d * d;
        }
    }
    InvGammaParams {
        shape: hyper.a_delta + count as f64 / 2.0,
        rate: hyper.b_delta + ss / 2.0,
    }
}

pub fn omega2_conditional(
    state: &ModelState,
    hyper: &Hyperparameters,
    gp: &GpCovariance,
    j: usize,
) -> InvGammaParams {
    let diff: Vec<f64> = state.psi[j]
        .iter()
        .zip(&hyper.mu[j])
        .map(|(p, m)| p - m)
        .collect();
    InvGammaParams {
        shape: hyper.a_omega + state.n_periods() as f64 / 2.0,
        rate: hyper.b_omega + gp.quad_form(&diff) / 2.0,
    }
}

/// Conditional of the mean curve `ψ_j` given the cluster coefficients.
pub fn psi_conditional(
    state: &ModelState,
    hyper: &Hyperparameters,
    gp: &GpCovariance,
    j: usize,
) -> MvNormalParams {
    let periods = state.n_periods();
    let inv_omega = 1.0 / state.omega2[j];
    let inv_delta = 1.0 / state.delta2[j];
    let mut precision = gp.inverse() * inv_omega;
    for t in 0..periods {
        precision[(t, t)] += inv_delta * state.beta_star[j][t].len() as f64;
    }
    let mu = DVector::from_column_slice(&hyper.mu[j]);
    let sums = DVector::from_vec(state.beta_sums(j));
    let eta = gp.inverse() * mu * inv_omega + sums * inv_delta;
    MvNormalParams { precision, eta }
}

/// Probability that unit `i` persists from `t − 1` to `t` (`t >= 1`) given
/// everything else.
pub fn gamma_probability(state: &ModelState, j: usize, t: usize, i: usize) -> f64 {
    debug_assert!(t >= 1);
    let alpha = state.alpha[j];
    let prev = state.memberships[j][t - 1].labels();
    let cur = &state.memberships[j][t];
    let mut plus = state.flags[j][t].as_slice().to_vec();
    plus[i] = true;
    if !compatible_unchecked(prev, cur.labels(), &plus) {
        return 0.0;
    }
    if alpha <= 0.0 {
        return 0.0;
    }
    let plus_set: Vec<usize> = (0..plus.len()).filter(|&u| plus[u]).collect();
    let minus_set: Vec<usize> = plus_set.iter().copied().filter(|&u| u != i).collect();
    let mass = state.mass[j];
    let log_ratio = log_eppf_unchecked(&cur.restrict(&plus_set).cluster_sizes(), mass)
        - log_eppf_unchecked(&cur.restrict(&minus_set).cluster_sizes(), mass);
    alpha / (alpha + (1.0 - alpha) * log_ratio.exp())
}

/// Log of the concentration conditional up to a constant, at `mass > 0`:
/// Gamma prior times the product over periods of the EPPF extension ratios.
pub fn mass_log_target(state: &ModelState, hyper: &Hyperparameters, j: usize, mass: f64) -> f64 {
    if !(mass > 0.0 && mass.is_finite()) {
        return f64::NEG_INFINITY;
    }
    let mut total = (hyper.a_mass - 1.0) * mass.ln() - hyper.b_mass * mass;
    for (c, flags) in state.memberships[j].iter().zip(&state.flags[j]) {
        let fixed = flags.fixed_set();
        total += log_eppf_unchecked(&c.cluster_sizes(), mass)
            - log_eppf_unchecked(&c.restrict(&fixed).cluster_sizes(), mass);
    }
    total
}
