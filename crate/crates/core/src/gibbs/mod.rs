//! Gibbs sampler over the full model.
//!
//! Residuals `y − f` are cached for every observed cell and patched whenever a
//! population-level coefficient changes, so a membership move costs one pass
//! over the nonzero entries of a single basis column.

pub mod conditionals;
pub mod slice;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::basis::SplineBasis;
use crate::calibrate::{calibrate_mu, initialize_state, InitStrategy, LoessSettings};
use crate::draws::{Draw, DrawStore};
use crate::error::{Error, Result};
use crate::model::{GpCovariance, Hyperparameters, ModelState, SurfacePanel};
use crate::partition::Membership;

pub use conditionals::{
    alpha_conditional, delta2_conditional, gamma_probability, mass_log_target,
    omega2_conditional, psi_conditional, BetaParams, InvGammaParams, MvNormalParams,
    NormalParams,
};
use slice::{slice_step, SliceSettings};

/// The chain generator. ChaCha is counter based, so distinct streams off one
/// seed give independent, reproducible chains.
pub type ChainRng = ChaCha20Rng;

pub fn chain_rng(seed: u64, chain: u64) -> ChainRng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(chain);
    rng
}

/// Per-block switches. Disabled blocks keep their current values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct UpdateToggles {
    pub gamma: bool,
    pub membership: bool,
    pub alpha: bool,
    pub mass: bool,
    pub beta_star: bool,
    pub psi: bool,
    pub sigma2: bool,
    pub delta2: bool,
    pub omega2: bool,
}

impl Default for UpdateToggles {
    fn default() -> Self {
        Self::all()
    }
}

impl UpdateToggles {
    pub fn all() -> Self {
        Self {
            gamma: true,
            membership: true,
            alpha: true,
            mass: true,
            beta_star: true,
            psi: true,
            sigma2: true,
            delta2: true,
            omega2: true,
        }
    }

    pub fn none() -> Self {
        Self {
            gamma: false,
            membership: false,
            alpha: false,
            mass: false,
            beta_star: false,
            psi: false,
            sigma2: false,
            delta2: false,
            omega2: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    /// Auxiliary components offered for a new cluster in a membership move.
    pub aux_components: usize,
    pub init: InitStrategy,
    pub loess: LoessSettings,
    pub toggles: UpdateToggles,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            iterations: 20_000,
            burn_in: 10_000,
            thin: 1,
            seed: 1,
            aux_components: 1,
            init: InitStrategy::Merged,
            loess: LoessSettings::default(),
            toggles: UpdateToggles::all(),
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.thin == 0 || self.aux_components == 0 {
            return Err(Error::InvalidInput(
                "iterations, thin and aux_components must be positive".into(),
            ));
        }
        if self.burn_in >= self.iterations {
            return Err(Error::InvalidInput(format!(
                "burn_in ({}) must be below iterations ({})",
                self.burn_in, self.iterations
            )));
        }
        Ok(())
    }

    /// Number of draws a chain with this configuration stores.
    pub fn stored_draws(&self) -> usize {
        (self.iterations - self.burn_in).div_ceil(self.thin)
    }
}

/// Set `γ_ijt` from its full conditional (`t >= 1`, zero-based).
pub fn update_gamma<R: Rng + ?Sized>(state: &mut ModelState, j: usize, t: usize, i: usize, rng: &mut R) {
    let p = gamma_probability(state, j, t, i);
    let u: f64 = rng.random();
    state.flags[j][t].set(i, u < p);
}

pub fn update_alpha<R: Rng + ?Sized>(
    state: &mut ModelState,
    hyper: &Hyperparameters,
    j: usize,
    rng: &mut R,
) {
    state.alpha[j] = alpha_conditional(state, hyper, j).sample(rng);
}

/// One slice-sampling step on `log M_j`.
pub fn update_mass<R: Rng + ?Sized>(
    state: &mut ModelState,
    hyper: &Hyperparameters,
    j: usize,
    rng: &mut R,
) {
    let u0 = state.mass[j].ln();
    // keep M in a range where its EPPF terms stay representable
    let settings = SliceSettings {
        lower: u0.min(-40.0),
        upper: u0.max(40.0),
        ..SliceSettings::default()
    };
    let target = |u: f64| mass_log_target(state, hyper, j, u.exp()) + u;
    let u = slice_step(u0, target, &settings, rng);
    state.mass[j] = u.exp();
}

pub fn update_psi<R: Rng + ?Sized>(
    state: &mut ModelState,
    hyper: &Hyperparameters,
    gp: &GpCovariance,
    j: usize,
    rng: &mut R,
) -> Result<()> {
    state.psi[j] = psi_conditional(state, hyper, gp, j).sample(rng)?;
    Ok(())
}

pub fn update_delta2<R: Rng + ?Sized>(
    state: &mut ModelState,
    hyper: &Hyperparameters,
    j: usize,
    rng: &mut R,
) {
    state.delta2[j] = delta2_conditional(state, hyper, j).sample(rng);
}

pub fn update_omega2<R: Rng + ?Sized>(
    state: &mut ModelState,
    hyper: &Hyperparameters,
    gp: &GpCovariance,
    j: usize,
    rng: &mut R,
) {
    state.omega2[j] = omega2_conditional(state, hyper, gp, j).sample(rng);
}

/// Canonical relabeling that carries per-cluster values along. `values` is
/// indexed by raw label; labels that no unit uses are dropped.
fn canonicalize(raw: &[usize], values: &[f64]) -> (Membership, Vec<f64>) {
    let membership = Membership::from_labels(raw);
    let mut out = vec![0.0; membership.n_clusters()];
    for (r, c) in raw.iter().zip(membership.labels()) {
        out[*c] = values[*r];
    }
    (membership, out)
}

enum Candidate {
    Existing(usize),
    New(f64),
}

/// Sampler for the data-dependent blocks, holding the residual cache.
pub struct Sampler<'a> {
    panel: &'a SurfacePanel,
    basis: &'a SplineBasis,
    hyper: &'a Hyperparameters,
    gp: &'a GpCovariance,
    aux: usize,
    toggles: UpdateToggles,
    residuals: Vec<f64>,
    s_gg: Vec<f64>,
}

impl<'a> Sampler<'a> {
    pub fn new(
        panel: &'a SurfacePanel,
        basis: &'a SplineBasis,
        hyper: &'a Hyperparameters,
        gp: &'a GpCovariance,
        state: &ModelState,
    ) -> Result<Self> {
        panel.check_basis(basis)?;
        state.check_dims(panel, basis)?;
        hyper.validate(basis.n_bases(), panel.n_periods())?;
        if gp.dim() != panel.n_periods() {
            return Err(Error::DimensionMismatch(format!(
                "GP covariance has dimension {}, panel has {} periods",
                gp.dim(),
                panel.n_periods()
            )));
        }
        let (n, p, periods) = (panel.n_populations(), basis.n_bases(), panel.n_periods());
        let mut s_gg = vec![0.0; n * p * periods];
        for i in 0..n {
            for j in 0..p {
                for t in 0..periods {
                    s_gg[(i * p + j) * periods + t] = basis
                        .column(j)
                        .iter()
                        .filter(|(x, _)| panel.is_observed(i, *x, t))
                        .map(|(_, g)| g * g)
                        .sum();
                }
            }
        }
        let mut sampler = Sampler {
            panel,
            basis,
            hyper,
            gp,
            aux: 1,
            toggles: UpdateToggles::all(),
            residuals: vec![0.0; panel.raw_log_rates().len()],
            s_gg,
        };
        sampler.refresh(state);
        Ok(sampler)
    }

    pub fn with_aux_components(mut self, m: usize) -> Self {
        self.aux = m.max(1);
        self
    }

    pub fn with_toggles(mut self, toggles: UpdateToggles) -> Self {
        self.toggles = toggles;
        self
    }

    /// Recomputes the residual cache from scratch.
    pub fn refresh(&mut self, state: &ModelState) {
        let panel = self.panel;
        for i in 0..panel.n_populations() {
            for t in 0..panel.n_periods() {
                for x in 0..panel.n_ages() {
                    let idx = panel.index(i, x, t);
                    self.residuals[idx] = match panel.log_rate(i, x, t) {
                        Some(y) => {
                            let f: f64 = (0..self.basis.n_bases())
                                .map(|j| state.beta(i, j, t) * self.basis.value(x, j))
                                .sum();
                            y - f
                        }
                        None => 0.0,
                    };
                }
            }
        }
    }

    /// Cached `y − f` at an observed cell, 0 at missing cells.
    pub fn residual(&self, i: usize, x: usize, t: usize) -> f64 {
        self.residuals[self.panel.index(i, x, t)]
    }

    fn s_gg(&self, i: usize, j: usize, t: usize) -> f64 {
        self.s_gg[(i * self.basis.n_bases() + j) * self.panel.n_periods() + t]
    }

    /// `Σ_x r_ixt g_j(x)` over observed ages, where `r` is the partial
    /// residual that leaves basis `j` out.
    fn s_rg(&self, state: &ModelState, i: usize, j: usize, t: usize) -> f64 {
        let b = state.beta(i, j, t);
        self.basis
            .column(j)
            .iter()
            .filter(|(x, _)| self.panel.is_observed(i, *x, t))
            .map(|(x, g)| (self.residual(i, *x, t) + b * g) * g)
            .sum()
    }

    fn shift_residuals(&mut self, i: usize, j: usize, t: usize, delta: f64) {
        if delta == 0.0 {
            return;
        }
        for &(x, g) in self.basis.column(j) {
            if self.panel.is_observed(i, x, t) {
                let idx = self.panel.index(i, x, t);
                self.residuals[idx] -= delta * g;
            }
        }
    }

    pub fn beta_star_conditional(&self, state: &ModelState, j: usize, t: usize, k: usize) -> NormalParams {
        let inv_delta = 1.0 / state.delta2[j];
        let mut precision = inv_delta;
        let mut eta = state.psi[j][t] * inv_delta;
        let c = &state.memberships[j][t];
        for i in (0..c.len()).filter(|&i| c.label(i) == k) {
            let w = 1.0 / state.sigma2[i];
            precision += self.s_gg(i, j, t) * w;
            eta += self.s_rg(state, i, j, t) * w;
        }
        NormalParams { precision, eta }
    }

    pub fn sigma2_conditional(&self, i: usize) -> InvGammaParams {
        let panel = self.panel;
        let mut ss = 0.0;
        for t in 0..panel.n_periods() {
            for x in 0..panel.n_ages() {
                let r = self.residual(i, x, t);
                ss += r * r;
            }
        }
        InvGammaParams {
            shape: self.hyper.a_sigma + panel.observed_count(i) as f64 / 2.0,
            rate: self.hyper.b_sigma + ss / 2.0,
        }
    }

    /// Reallocates unit `i` at `(j, t)` unless it is flagged as persisting.
    pub fn update_membership<R: Rng + ?Sized>(
        &mut self,
        state: &mut ModelState,
        j: usize,
        t: usize,
        i: usize,
        rng: &mut R,
    ) {
        if state.flags[j][t].get(i) {
            return;
        }
        let periods = state.n_periods();
        let labels = state.memberships[j][t].labels().to_vec();
        let n_clusters = state.beta_star[j][t].len();
        let cur = labels[i];
        let mut sizes = state.memberships[j][t].cluster_sizes();
        sizes[cur] -= 1;
        let b0 = state.beta_star[j][t][cur];

        let s_gg = self.s_gg(i, j, t);
        let s_rg = self.s_rg(state, i, j, t);
        let inv_s2 = 1.0 / state.sigma2[i];
        let log_lik = |b: f64| (b * s_rg - 0.5 * b * b * s_gg) * inv_s2;

        // only pairs involving i can change, and only if i persists into t+1
        let next = (t + 1 < periods && state.flags[j][t + 1].get(i))
            .then(|| (&state.memberships[j][t + 1], &state.flags[j][t + 1]));
        let allowed = |label: Option<usize>| match next {
            None => true,
            Some((c_next, f_next)) => (0..labels.len())
                .filter(|&u| u != i && f_next.get(u))
                .all(|u| (Some(labels[u]) == label) == c_next.same_cluster(i, u)),
        };

        let mut candidates: Vec<(Candidate, f64)> = Vec::with_capacity(n_clusters + self.aux);
        for (k, &size) in sizes.iter().enumerate() {
            if size > 0 && allowed(Some(k)) {
                let b = state.beta_star[j][t][k];
                candidates.push((Candidate::Existing(k), (size as f64).ln() + log_lik(b)));
            }
        }
        if allowed(None) {
            let log_prior = (state.mass[j] / self.aux as f64).ln();
            let sd = state.delta2[j].sqrt();
            for a in 0..self.aux {
                let b = if a == 0 && sizes[cur] == 0 {
                    b0
                } else {
                    let z: f64 = StandardNormal.sample(rng);
                    state.psi[j][t] + sd * z
                };
                candidates.push((Candidate::New(b), log_prior + log_lik(b)));
            }
        }
        assert!(!candidates.is_empty(), "current allocation must remain available");

        let top = candidates
            .iter()
            .map(|c| c.1)
            .fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = candidates.iter().map(|c| (c.1 - top).exp()).collect();
        let total: f64 = weights.iter().sum();
        let mut u = rng.random::<f64>() * total;
        let mut pick = weights.len() - 1;
        for (idx, w) in weights.iter().enumerate() {
            if u < *w {
                pick = idx;
                break;
            }
            u -= w;
        }

        let mut raw = labels;
        let mut values = state.beta_star[j][t].clone();
        let b_new = match candidates[pick].0 {
            Candidate::Existing(k) => {
                raw[i] = k;
                values[k]
            }
            Candidate::New(b) => {
                if sizes[cur] == 0 {
                    values[cur] = b;
                } else {
                    raw[i] = n_clusters;
                    values.push(b);
                }
                b
            }
        };
        let (membership, values) = canonicalize(&raw, &values);
        state.memberships[j][t] = membership;
        state.beta_star[j][t] = values;
        self.shift_residuals(i, j, t, b_new - b0);
    }

    pub fn update_beta_star<R: Rng + ?Sized>(
        &mut self,
        state: &mut ModelState,
        j: usize,
        t: usize,
        k: usize,
        rng: &mut R,
    ) {
        let draw = self.beta_star_conditional(state, j, t, k).sample(rng);
        let delta = draw - state.beta_star[j][t][k];
        state.beta_star[j][t][k] = draw;
        for i in 0..state.n_populations() {
            if state.memberships[j][t].label(i) == k {
                self.shift_residuals(i, j, t, delta);
            }
        }
    }

    pub fn update_sigma2<R: Rng + ?Sized>(&mut self, state: &mut ModelState, i: usize, rng: &mut R) {
        state.sigma2[i] = self.sigma2_conditional(i).sample(rng);
    }

    /// One full systematic-scan sweep.
    pub fn sweep<R: Rng + ?Sized>(&mut self, state: &mut ModelState, rng: &mut R) -> Result<()> {
        let on = self.toggles;
        let (n, p, periods) = (state.n_populations(), state.n_bases(), state.n_periods());
        for j in 0..p {
            for t in 0..periods {
                if on.gamma && t > 0 {
                    for i in 0..n {
                        update_gamma(state, j, t, i, rng);
                    }
                }
                if on.membership {
                    for i in 0..n {
                        self.update_membership(state, j, t, i, rng);
                    }
                }
            }
            if on.alpha {
                update_alpha(state, self.hyper, j, rng);
            }
            if on.mass {
                update_mass(state, self.hyper, j, rng);
            }
        }
        for j in 0..p {
            if on.beta_star {
                for t in 0..periods {
                    for k in 0..state.beta_star[j][t].len() {
                        self.update_beta_star(state, j, t, k, rng);
                    }
                }
            }
            if on.psi {
                update_psi(state, self.hyper, self.gp, j, rng)?;
            }
        }
        if on.sigma2 {
            for i in 0..n {
                self.update_sigma2(state, i, rng);
            }
        }
        for j in 0..p {
            if on.delta2 {
                update_delta2(state, self.hyper, j, rng);
            }
            if on.omega2 {
                update_omega2(state, self.hyper, self.gp, j, rng);
            }
        }
        Ok(())
    }
}

/// Runs one chain on stream `chain` of the configured seed. If `hyper.mu` is
/// empty it is calibrated from the data first.
pub fn run_chain_on_stream(
    panel: &SurfacePanel,
    basis: &SplineBasis,
    hyper: &Hyperparameters,
    config: &SamplerConfig,
    chain: u64,
) -> Result<DrawStore> {
    config.validate()?;
    panel.check_basis(basis)?;
    let calibrated;
    let hyper = if hyper.mu.is_empty() {
        calibrated = hyper.clone().with_mu(calibrate_mu(panel, basis, config.loess)?);
        &calibrated
    } else {
        hyper
    };
    let gp = GpCovariance::new(panel.n_periods(), hyper.gp_length_scale)?;
    let mut state = initialize_state(panel, basis, hyper, config.init)?;
    let mut sampler = Sampler::new(panel, basis, hyper, &gp, &state)?
        .with_aux_components(config.aux_components)
        .with_toggles(config.toggles);
    let mut rng = chain_rng(config.seed, chain);
    let mut store = DrawStore::new(panel.n_populations(), basis.n_bases(), panel.n_periods());
    for iter in 0..config.iterations {
        sampler.sweep(&mut state, &mut rng)?;
        if iter >= config.burn_in && (iter - config.burn_in) % config.thin == 0 {
            store.push(Draw::from_state(iter + 1, &state));
        }
        if (iter + 1) % 1000 == 0 {
            log::debug!("chain {chain}: {} / {} sweeps", iter + 1, config.iterations);
        }
    }
    Ok(store)
}

pub fn run_chain(
    panel: &SurfacePanel,
    basis: &SplineBasis,
    hyper: &Hyperparameters,
    config: &SamplerConfig,
) -> Result<DrawStore> {
    run_chain_on_stream(panel, basis, hyper, config, 0)
}

/// Independent chains on streams `0..n_chains`, one thread each.
pub fn run_chains(
    panel: &SurfacePanel,
    basis: &SplineBasis,
    hyper: &Hyperparameters,
    config: &SamplerConfig,
    n_chains: usize,
) -> Result<Vec<DrawStore>> {
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..n_chains as u64)
            .map(|c| scope.spawn(move || run_chain_on_stream(panel, basis, hyper, config, c)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("sampler thread panicked"))
            .collect()
    })
}
