//! Synthetic panels: the benchmark simulation design and prior-predictive
//! draws.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Beta, Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::basis::{BasisSpec, SplineBasis};
use crate::error::{Error, Result};
use crate::gibbs::InvGammaParams;
use crate::model::{GpCovariance, Hyperparameters, ModelState, SurfacePanel};
use crate::partition::{simulate_trpm, Membership};

const DEFAULT_TRUTH_CSV: &str = include_str!("../fixtures/default_truth_v1.csv");

/// Parameters of the benchmark design: five populations, ten periods, ages
/// 0 to 100 and six quadratic splines, with mean curves that are parallel
/// decreasing lines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationDesign {
    pub n_populations: usize,
    pub n_periods: usize,
    pub first_period: i32,
    pub ages: Vec<u32>,
    pub basis: BasisSpec,
    pub noise_sd: f64,
    /// Cluster spread around the mean curve, one per basis.
    pub delta: Vec<f64>,
    pub slope: f64,
    /// Mean-curve value at the first period, one per basis.
    pub intercepts: Vec<f64>,
}

impl Default for SimulationDesign {
    fn default() -> Self {
        SimulationDesign {
            n_populations: 5,
            n_periods: 10,
            first_period: 1,
            ages: (0..=100).collect(),
            basis: BasisSpec::Preset {
                preset: "sim6".into(),
            },
            noise_sd: 0.05,
            delta: vec![0.05, 0.05, 0.05, 0.05, 0.1, 0.05],
            slope: -0.02,
            intercepts: (0..6).map(|j| -1.0 - 0.5 * j as f64).collect(),
        }
    }
}

impl SimulationDesign {
    pub fn psi(&self) -> Vec<Vec<f64>> {
        self.intercepts
            .iter()
            .map(|a| (0..self.n_periods).map(|t| a + self.slope * t as f64).collect())
            .collect()
    }

    pub fn periods(&self) -> Vec<i32> {
        (0..self.n_periods as i32).map(|t| self.first_period + t).collect()
    }

    pub fn population_names(&self) -> Vec<String> {
        (1..=self.n_populations).map(|i| format!("C{i}")).collect()
    }
}

/// Everything the generator drew, enough to rebuild the panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationRecord {
    pub seed: u64,
    pub design: SimulationDesign,
    /// Zero-based canonical labels, `[j][t][i]`.
    pub memberships: Vec<Vec<Vec<usize>>>,
    pub psi: Vec<Vec<f64>>,
    pub beta_star: Vec<Vec<Vec<f64>>>,
    /// Injected noise in panel cell order.
    pub noise: Vec<f64>,
}

impl SimulationRecord {
    pub fn truth(&self) -> Vec<Vec<Membership>> {
        self.memberships
            .iter()
            .map(|row| row.iter().map(|l| Membership::from_labels(l)).collect())
            .collect()
    }

    /// Noise-free surface `f_it(x)` rebuilt from the coefficients, in panel
    /// cell order.
    pub fn surface(&self, basis: &SplineBasis) -> Vec<f64> {
        let d = &self.design;
        let mut out = Vec::with_capacity(d.n_populations * d.n_periods * basis.n_ages());
        for i in 0..d.n_populations {
            for t in 0..d.n_periods {
                for x in 0..basis.n_ages() {
                    let f: f64 = (0..basis.n_bases())
                        .map(|j| self.beta_star[j][t][self.memberships[j][t][i]] * basis.value(x, j))
                        .sum();
                    out.push(f);
                }
            }
        }
        out
    }
}

/// Draws a panel from the design with cluster structure fixed by `truth`
/// (`[j][t]`).
pub fn generate_simulation(
    design: &SimulationDesign,
    truth: &[Vec<Membership>],
    seed: u64,
) -> Result<(SurfacePanel, SimulationRecord)> {
    let basis = design.basis.build(&design.ages)?;
    let (n, p, periods) = (design.n_populations, basis.n_bases(), design.n_periods);
    if design.delta.len() != p || design.intercepts.len() != p {
        return Err(Error::DimensionMismatch(format!(
            "design lists {} deltas and {} intercepts for {p} bases",
            design.delta.len(),
            design.intercepts.len()
        )));
    }
    if truth.len() != p || truth.iter().any(|row| row.len() != periods || row.iter().any(|c| c.len() != n)) {
        return Err(Error::DimensionMismatch(format!(
            "truth must hold {p} x {periods} memberships of {n} populations"
        )));
    }
    if !(design.noise_sd >= 0.0) || design.delta.iter().any(|d| !(*d >= 0.0)) {
        return Err(Error::InvalidInput("standard deviations must be nonnegative".into()));
    }

    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let psi = design.psi();
    let beta_star: Vec<Vec<Vec<f64>>> = (0..p)
        .map(|j| {
            (0..periods)
                .map(|t| {
                    (0..truth[j][t].n_clusters())
                        .map(|_| {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            psi[j][t] + design.delta[j] * z
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    let mut record = SimulationRecord {
        seed,
        design: design.clone(),
        memberships: truth
            .iter()
            .map(|row| row.iter().map(|c| c.labels().to_vec()).collect())
            .collect(),
        psi,
        beta_star,
        noise: Vec::new(),
    };
    let surface = record.surface(&basis);
    record.noise = (0..surface.len())
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            design.noise_sd * z
        })
        .collect();
    let values = surface
        .iter()
        .zip(&record.noise)
        .map(|(f, e)| Some(f + e))
        .collect();
    let panel = SurfacePanel::from_log_rates(
        design.population_names(),
        design.ages.clone(),
        design.periods(),
        values,
    )?;
    Ok((panel, record))
}

/// Parses a memberships table with header `j,t,i,label` (all one-based) into
/// `[j][t]` memberships.
pub fn truth_from_csv(text: &str) -> Result<Vec<Vec<Membership>>> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let mut v = [0usize; 4];
        for (k, slot) in v.iter_mut().enumerate() {
            let field = rec.get(k).ok_or_else(|| Error::Parse {
                row: r + 2,
                msg: "expected 4 columns".into(),
            })?;
            *slot = field.trim().parse().ok().filter(|x| *x > 0).ok_or_else(|| Error::Parse {
                row: r + 2,
                msg: format!("expected a positive integer, found {field:?}"),
            })?;
        }
        rows.push(v);
    }
    let p = rows.iter().map(|r| r[0]).max().unwrap_or(0);
    let periods = rows.iter().map(|r| r[1]).max().unwrap_or(0);
    let n = rows.iter().map(|r| r[2]).max().unwrap_or(0);
    let mut raw = vec![vec![vec![None; n]; periods]; p];
    for (r, v) in rows.iter().enumerate() {
        let cell = &mut raw[v[0] - 1][v[1] - 1][v[2] - 1];
        if cell.is_some() {
            return Err(Error::Parse {
                row: r + 2,
                msg: "duplicate (j, t, i)".into(),
            });
        }
        *cell = Some(v[3] - 1);
    }
    raw.iter()
        .map(|row| {
            row.iter()
                .map(|labels| {
                    let l: Option<Vec<usize>> = labels.iter().copied().collect();
                    l.map(|l| Membership::from_labels(&l))
                        .ok_or_else(|| Error::Ingest("memberships table has gaps".into()))
                })
                .collect()
        })
        .collect()
}

pub fn truth_to_csv(truth: &[Vec<Membership>]) -> String {
    let mut out = String::from("j,t,i,label\n");
    for (j, row) in truth.iter().enumerate() {
        for (t, c) in row.iter().enumerate() {
            for (i, l) in c.labels().iter().enumerate() {
                out.push_str(&format!("{},{},{},{}\n", j + 1, t + 1, i + 1, l + 1));
            }
        }
    }
    out
}

/// The reference scenario for the benchmark design. Bases 3 and 4 keep
/// two and three clusters throughout; bases 1, 2 and 5 change once, at
/// period 6; basis 6 changes every two or three periods.
pub fn default_truth_scenario() -> Vec<Vec<Membership>> {
    truth_from_csv(DEFAULT_TRUTH_CSV).expect("bundled scenario parses")
}

pub fn default_truth_csv() -> &'static str {
    DEFAULT_TRUTH_CSV
}

/// Draws a complete latent state from the prior. `hyper.mu` must be set.
pub fn sample_prior_state<R: Rng + ?Sized>(
    n: usize,
    p: usize,
    periods: usize,
    hyper: &Hyperparameters,
    gp: &GpCovariance,
    rng: &mut R,
) -> Result<ModelState> {
    hyper.validate(p, periods)?;
    let ig = |a: f64, b: f64, rng: &mut R| InvGammaParams { shape: a, rate: b }.sample(rng);
    let chol = gp
        .matrix()
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numeric("GP covariance is not positive definite".into()))?;
    let mut state = ModelState {
        memberships: Vec::with_capacity(p),
        flags: Vec::with_capacity(p),
        beta_star: Vec::with_capacity(p),
        psi: Vec::with_capacity(p),
        sigma2: Vec::new(),
        delta2: Vec::with_capacity(p),
        omega2: Vec::with_capacity(p),
        alpha: Vec::with_capacity(p),
        mass: Vec::with_capacity(p),
    };
    for j in 0..p {
        let alpha: f64 = Beta::new(hyper.a_alpha, hyper.b_alpha)
            .map_err(|e| Error::InvalidInput(e.to_string()))?
            .sample(rng);
        let mass: f64 = Gamma::new(hyper.a_mass, 1.0 / hyper.b_mass)
            .map_err(|e| Error::InvalidInput(e.to_string()))?
            .sample(rng);
        let mass = mass.max(f64::MIN_POSITIVE);
        let delta2 = ig(hyper.a_delta, hyper.b_delta, rng);
        let omega2 = ig(hyper.a_omega, hyper.b_omega, rng);
        let z = DVector::from_fn(periods, |_, _| StandardNormal.sample(rng));
        let psi: Vec<f64> = (chol.l() * z * omega2.sqrt())
            .iter()
            .zip(&hyper.mu[j])
            .map(|(e, m)| m + e)
            .collect();
        let seq = simulate_trpm(n, periods, alpha, mass, rng)?;
        let beta_star = seq
            .iter()
            .zip(&psi)
            .map(|((c, _), m)| {
                (0..c.n_clusters())
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(rng);
                        m + delta2.sqrt() * z
                    })
                    .collect()
            })
            .collect();
        let (memberships, flags) = seq.into_iter().unzip();
        state.memberships.push(memberships);
        state.flags.push(flags);
        state.beta_star.push(beta_star);
        state.psi.push(psi);
        state.delta2.push(delta2);
        state.omega2.push(omega2);
        state.alpha.push(alpha);
        state.mass.push(mass);
    }
    state.sigma2 = (0..n).map(|_| ig(hyper.a_sigma, hyper.b_sigma, rng)).collect();
    Ok(state)
}

/// Observations given a latent state, on the basis's age grid. Every cell is
/// observed.
pub fn sample_panel<R: Rng + ?Sized>(
    state: &ModelState,
    basis: &SplineBasis,
    rng: &mut R,
) -> Result<SurfacePanel> {
    let (n, periods) = (state.n_populations(), state.n_periods());
    let mut values = Vec::with_capacity(n * periods * basis.n_ages());
    for i in 0..n {
        let sd = state.sigma2[i].sqrt();
        for t in 0..periods {
            for x in 0..basis.n_ages() {
                let f: f64 = (0..basis.n_bases())
                    .map(|j| state.beta(i, j, t) * basis.value(x, j))
                    .sum();
                let z: f64 = StandardNormal.sample(rng);
                values.push(Some(f + sd * z));
            }
        }
    }
    SurfacePanel::from_log_rates(
        (1..=n).map(|i| format!("P{i}")).collect(),
        basis.ages().to_vec(),
        (1..=periods as i32).collect(),
        values,
    )
}

/// Overwrites the observed values of `panel` with a fresh draw given
/// `state`, keeping the missing pattern.
pub fn resample_panel<R: Rng + ?Sized>(
    panel: &SurfacePanel,
    state: &ModelState,
    basis: &SplineBasis,
    rng: &mut R,
) -> Result<SurfacePanel> {
    let mut values = Vec::with_capacity(panel.raw_log_rates().len());
    for i in 0..panel.n_populations() {
        let sd = state.sigma2[i].sqrt();
        for t in 0..panel.n_periods() {
            for x in 0..panel.n_ages() {
                let f: f64 = (0..basis.n_bases())
                    .map(|j| state.beta(i, j, t) * basis.value(x, j))
                    .sum();
                let z: f64 = StandardNormal.sample(rng);
                values.push(panel.is_observed(i, x, t).then_some(f + sd * z));
            }
        }
    }
    SurfacePanel::from_log_rates(
        panel.populations().to_vec(),
        panel.ages().to_vec(),
        panel.periods().to_vec(),
        values,
    )
}
