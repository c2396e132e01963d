//! Data, hyperparameters, latent state, and the likelihood shared by the
//! sampler.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::SplineBasis;
use crate::error::{Error, Result};
use crate::partition::{compatible_unchecked, Membership, PersistenceFlags};

/// Observed log-mortality rates for `n` populations over an age grid and
/// consecutive periods. Cells are stored population-major, then period, then
/// age, so one `(i, t)` curve is contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfacePanel {
    populations: Vec<String>,
    ages: Vec<u32>,
    periods: Vec<i32>,
    log_rates: Vec<f64>,
    observed: Vec<bool>,
    deaths: Option<Vec<f64>>,
    exposures: Option<Vec<f64>>,
}

impl SurfacePanel {
    /// `values[idx]` follows the panel's cell order; `None` marks missing.
    pub fn from_log_rates(
        populations: Vec<String>,
        ages: Vec<u32>,
        periods: Vec<i32>,
        values: Vec<Option<f64>>,
    ) -> Result<Self> {
        let cells = populations.len() * ages.len() * periods.len();
        if values.len() != cells {
            return Err(Error::DimensionMismatch(format!(
                "expected {cells} cells, got {}",
                values.len()
            )));
        }
        let mut log_rates = Vec::with_capacity(cells);
        let mut observed = Vec::with_capacity(cells);
        for v in values {
            match v {
                Some(v) if v.is_finite() => {
                    log_rates.push(v);
                    observed.push(true);
                }
                Some(v) => return Err(Error::InvalidInput(format!("non-finite log-rate {v}"))),
                None => {
                    log_rates.push(0.0);
                    observed.push(false);
                }
            }
        }
        Ok(SurfacePanel {
            populations,
            ages,
            periods,
            log_rates,
            observed,
            deaths: None,
            exposures: None,
        })
    }

    /// Builds `log(d / E)`; cells with zero deaths or zero exposure (or no
    /// record at all) are missing.
    pub fn from_counts(
        populations: Vec<String>,
        ages: Vec<u32>,
        periods: Vec<i32>,
        deaths: Vec<Option<f64>>,
        exposures: Vec<Option<f64>>,
    ) -> Result<Self> {
        if deaths.len() != exposures.len() {
            return Err(Error::DimensionMismatch("deaths and exposures differ in size".into()));
        }
        let values = deaths
            .iter()
            .zip(&exposures)
            .map(|(d, e)| match (d, e) {
                (Some(d), Some(e)) if *d > 0.0 && *e > 0.0 => Some((d / e).ln()),
                _ => None,
            })
            .collect();
        let mut panel = Self::from_log_rates(populations, ages, periods, values)?;
        panel.deaths = Some(deaths.iter().map(|d| d.unwrap_or(f64::NAN)).collect());
        panel.exposures = Some(exposures.iter().map(|e| e.unwrap_or(f64::NAN)).collect());
        Ok(panel)
    }

    #[inline]
    pub fn index(&self, i: usize, x: usize, t: usize) -> usize {
        (i * self.periods.len() + t) * self.ages.len() + x
    }

    pub fn populations(&self) -> &[String] {
        &self.populations
    }

    pub fn ages(&self) -> &[u32] {
        &self.ages
    }

    pub fn periods(&self) -> &[i32] {
        &self.periods
    }

    pub fn n_populations(&self) -> usize {
        self.populations.len()
    }

    pub fn n_ages(&self) -> usize {
        self.ages.len()
    }

    pub fn n_periods(&self) -> usize {
        self.periods.len()
    }

    pub fn log_rate(&self, i: usize, x: usize, t: usize) -> Option<f64> {
        let idx = self.index(i, x, t);
        self.observed[idx].then_some(self.log_rates[idx])
    }

    /// Raw storage; entries at missing cells are 0 and must be masked.
    pub fn raw_log_rates(&self) -> &[f64] {
        &self.log_rates
    }

    pub fn observed_mask(&self) -> &[bool] {
        &self.observed
    }

    pub fn is_observed(&self, i: usize, x: usize, t: usize) -> bool {
        self.observed[self.index(i, x, t)]
    }

    pub fn deaths(&self) -> Option<&[f64]> {
        self.deaths.as_deref()
    }

    pub fn exposures(&self) -> Option<&[f64]> {
        self.exposures.as_deref()
    }

    pub fn observed_count(&self, i: usize) -> usize {
        let block = self.ages.len() * self.periods.len();
        self.observed[i * block..(i + 1) * block]
            .iter()
            .filter(|&&o| o)
            .count()
    }

    pub fn total_observed(&self) -> usize {
        self.observed.iter().filter(|&&o| o).count()
    }

    pub fn check_basis(&self, basis: &SplineBasis) -> Result<()> {
        if basis.ages() != self.ages.as_slice() {
            return Err(Error::DimensionMismatch(
                "panel age grid differs from the basis age grid".into(),
            ));
        }
        Ok(())
    }
}

/// Prior hyperparameters. Gamma priors use the shape/rate parametrization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparameters {
    pub a_sigma: f64,
    pub b_sigma: f64,
    pub a_delta: f64,
    pub b_delta: f64,
    pub a_omega: f64,
    pub b_omega: f64,
    pub a_mass: f64,
    pub b_mass: f64,
    pub a_alpha: f64,
    pub b_alpha: f64,
    pub gp_length_scale: f64,
    /// Prior mean curves, `mu[j][t]`.
    pub mu: Vec<Vec<f64>>,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Hyperparameters {
            a_sigma: 1e-3,
            b_sigma: 1e-3,
            a_delta: 1e-3,
            b_delta: 1e-3,
            a_omega: 1e-3,
            b_omega: 1e-3,
            a_mass: 2e-3,
            b_mass: 1e-3,
            a_alpha: 1.0,
            b_alpha: 1.0,
            gp_length_scale: 1.5,
            mu: Vec::new(),
        }
    }
}

impl Hyperparameters {
    pub fn with_mu(mut self, mu: Vec<Vec<f64>>) -> Self {
        self.mu = mu;
        self
    }

    pub fn validate(&self, n_bases: usize, n_periods: usize) -> Result<()> {
        let positive = [
            ("a_sigma", self.a_sigma),
            ("b_sigma", self.b_sigma),
            ("a_delta", self.a_delta),
            ("b_delta", self.b_delta),
            ("a_omega", self.a_omega),
            ("b_omega", self.b_omega),
            ("a_mass", self.a_mass),
            ("b_mass", self.b_mass),
            ("a_alpha", self.a_alpha),
            ("b_alpha", self.b_alpha),
            ("gp_length_scale", self.gp_length_scale),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidInput(format!("{name} must be positive, got {v}")));
            }
        }
        if self.mu.len() != n_bases || self.mu.iter().any(|row| row.len() != n_periods) {
            return Err(Error::DimensionMismatch(format!(
                "mu must be {n_bases} x {n_periods}"
            )));
        }
        Ok(())
    }
}

/// Squared-exponential correlation over consecutive periods spaced one unit
/// apart, with its Cholesky factor and inverse cached.
#[derive(Debug, Clone)]
pub struct GpCovariance {
    sigma: DMatrix<f64>,
    inverse: DMatrix<f64>,
    log_det: f64,
    jitter: f64,
}

impl GpCovariance {
    pub fn new(n_periods: usize, length_scale: f64) -> Result<Self> {
        if !(length_scale > 0.0) {
            return Err(Error::InvalidInput("GP length scale must be positive".into()));
        }
        let l2 = length_scale * length_scale;
        let sigma = DMatrix::from_fn(n_periods, n_periods, |a, b| {
            let d = a as f64 - b as f64;
            (-0.5 * d * d / l2).exp()
        });
        let mut jitter = 0.0;
        loop {
            let mut m = sigma.clone();
            for k in 0..n_periods {
                m[(k, k)] += jitter;
            }
            if let Some(chol) = m.clone().cholesky() {
                let log_det = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
                let inverse = chol.inverse();
                return Ok(GpCovariance {
                    sigma: m,
                    inverse,
                    log_det,
                    jitter,
                });
            }
            jitter = if jitter == 0.0 { 1e-10 } else { jitter * 10.0 };
            if jitter > 1e-4 {
                return Err(Error::Numeric(
                    "GP covariance is not positive definite even after jitter".into(),
                ));
            }
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn inverse(&self) -> &DMatrix<f64> {
        &self.inverse
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    /// Diagonal jitter that was needed for the factorization (0 if none).
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// `vᵀ Σ⁻¹ v`.
    pub fn quad_form(&self, v: &[f64]) -> f64 {
        let v = DVector::from_column_slice(v);
        (v.transpose() * &self.inverse * &v)[(0, 0)]
    }

    pub fn dim(&self) -> usize {
        self.sigma.nrows()
    }
}

/// All latent quantities of one sampler iteration. Indexing is `[j][t]` for
/// per-basis, per-period quantities.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub memberships: Vec<Vec<Membership>>,
    pub flags: Vec<Vec<PersistenceFlags>>,
    pub beta_star: Vec<Vec<Vec<f64>>>,
    pub psi: Vec<Vec<f64>>,
    pub sigma2: Vec<f64>,
    pub delta2: Vec<f64>,
    pub omega2: Vec<f64>,
    pub alpha: Vec<f64>,
    pub mass: Vec<f64>,
}

impl ModelState {
    pub fn n_bases(&self) -> usize {
        self.memberships.len()
    }

    pub fn n_periods(&self) -> usize {
        self.memberships.first().map_or(0, |m| m.len())
    }

    pub fn n_populations(&self) -> usize {
        self.sigma2.len()
    }

    pub fn n_clusters(&self, j: usize, t: usize) -> usize {
        self.memberships[j][t].n_clusters()
    }

    /// Population-level coefficient `β_ijt = β*_{c_ijt, j, t}`.
    #[inline]
    pub fn beta(&self, i: usize, j: usize, t: usize) -> f64 {
        self.beta_star[j][t][self.memberships[j][t].label(i)]
    }

    /// `Σ_k β*_kjt` for each period.
    pub fn beta_sums(&self, j: usize) -> Vec<f64> {
        self.beta_star[j].iter().map(|b| b.iter().sum()).collect()
    }

    /// Checks every structural invariant of the state.
    pub fn validate(&self) -> Result<()> {
        let p = self.n_bases();
        let periods = self.n_periods();
        let n = self.n_populations();
        let bad = |msg: String| Err(Error::InvalidState(msg));
        if self.flags.len() != p
            || self.beta_star.len() != p
            || self.psi.len() != p
            || self.delta2.len() != p
            || self.omega2.len() != p
            || self.alpha.len() != p
            || self.mass.len() != p
        {
            return bad("per-basis arrays disagree in length".into());
        }
        for j in 0..p {
            if self.memberships[j].len() != periods
                || self.flags[j].len() != periods
                || self.beta_star[j].len() != periods
                || self.psi[j].len() != periods
            {
                return bad(format!("basis {j}: per-period arrays disagree in length"));
            }
            for t in 0..periods {
                let c = &self.memberships[j][t];
                if c.len() != n || self.flags[j][t].len() != n {
                    return bad(format!("(j={j}, t={t}): membership length != {n}"));
                }
                if !Membership::is_canonical(c.labels()) {
                    return bad(format!("(j={j}, t={t}): labels not canonical"));
                }
                if self.beta_star[j][t].len() != c.n_clusters() {
                    return bad(format!(
                        "(j={j}, t={t}): {} cluster values for {} clusters",
                        self.beta_star[j][t].len(),
                        c.n_clusters()
                    ));
                }
                if self.beta_star[j][t].iter().any(|b| !b.is_finite()) || !self.psi[j][t].is_finite()
                {
                    return bad(format!("(j={j}, t={t}): non-finite coefficient"));
                }
                if t == 0 {
                    if self.flags[j][0].count() != 0 {
                        return bad(format!("basis {j}: persistence flags set at t=0"));
                    }
                } else if !compatible_unchecked(
                    self.memberships[j][t - 1].labels(),
                    c.labels(),
                    self.flags[j][t].as_slice(),
                ) {
                    return bad(format!("(j={j}, t={t}): incompatible with previous period"));
                }
            }
            let positive = |v: f64| v > 0.0 && v.is_finite();
            if !positive(self.delta2[j]) || !positive(self.omega2[j]) || !positive(self.mass[j]) {
                return bad(format!("basis {j}: nonpositive variance or mass"));
            }
            if !(0.0..=1.0).contains(&self.alpha[j]) {
                return bad(format!("basis {j}: alpha outside [0, 1]"));
            }
        }
        if self.sigma2.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return bad("nonpositive noise variance".into());
        }
        Ok(())
    }

    pub fn check_dims(&self, panel: &SurfacePanel, basis: &SplineBasis) -> Result<()> {
        if self.n_bases() != basis.n_bases()
            || self.n_periods() != panel.n_periods()
            || self.n_populations() != panel.n_populations()
        {
            return Err(Error::DimensionMismatch(format!(
                "state is {}x{}x{} (p x T x n), data is {}x{}x{}",
                self.n_bases(),
                self.n_periods(),
                self.n_populations(),
                basis.n_bases(),
                panel.n_periods(),
                panel.n_populations()
            )));
        }
        Ok(())
    }
}

/// `f_it(x) = Σ_j β_ijt g_j(x)` at the `x`-th grid age.
pub fn surface_value(
    state: &ModelState,
    basis: &SplineBasis,
    i: usize,
    x: usize,
    t: usize,
) -> Result<f64> {
    if i >= state.n_populations() || x >= basis.n_ages() || t >= state.n_periods() {
        return Err(Error::InvalidIndex(format!("(i={i}, x={x}, t={t})")));
    }
    Ok((0..basis.n_bases())
        .map(|j| state.beta(i, j, t) * basis.value(x, j))
        .sum())
}

/// `log m_ixt − Σ_{j' ≠ j} β_ij't g_j'(x)`.
pub fn partial_residual(
    panel: &SurfacePanel,
    state: &ModelState,
    basis: &SplineBasis,
    i: usize,
    x: usize,
    t: usize,
    j: usize,
) -> Result<f64> {
    if j >= basis.n_bases() {
        return Err(Error::InvalidIndex(format!("basis {j}")));
    }
    let f = surface_value(state, basis, i, x, t)?;
    let y = panel.log_rate(i, x, t).ok_or(Error::MissingData { i, x, t })?;
    Ok(y - f + state.beta(i, j, t) * basis.value(x, j))
}

/// Gaussian log-likelihood over all observed cells.
pub fn log_likelihood(panel: &SurfacePanel, state: &ModelState, basis: &SplineBasis) -> f64 {
    let mut total = 0.0;
    for i in 0..panel.n_populations() {
        let s2 = state.sigma2[i];
        let norm = -0.5 * (2.0 * PI * s2).ln();
        for t in 0..panel.n_periods() {
            for x in 0..panel.n_ages() {
                if let Some(y) = panel.log_rate(i, x, t) {
                    let f: f64 = (0..basis.n_bases())
                        .map(|j| state.beta(i, j, t) * basis.value(x, j))
                        .sum();
                    let r = y - f;
                    total += norm - 0.5 * r * r / s2;
                }
            }
        }
    }
    total
}
