//! Data-driven prior means for the coefficient curves and chain
//! initialization.
//!
//! The prior mean `mu[j]` is obtained by fitting one pooled coefficient vector
//! per period by least squares and then smoothing each coefficient series
//! over periods with LOESS.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::SplineBasis;
use crate::error::{Error, Result};
use crate::model::{Hyperparameters, ModelState, SurfacePanel};
use crate::partition::{Membership, PersistenceFlags};

/// LOESS settings for [`calibrate_mu`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoessSettings {
    pub span: f64,
    pub degree: usize,
}

impl Default for LoessSettings {
    fn default() -> Self {
        LoessSettings {
            span: 0.75,
            degree: 2,
        }
    }
}

fn solve_normal_equations(mut gram: DMatrix<f64>, rhs: DVector<f64>) -> DVector<f64> {
    if let Some(chol) = gram.clone().cholesky() {
        let sol = chol.solve(&rhs);
        if sol.iter().all(|v| v.is_finite()) {
            return sol;
        }
    }
    let p = gram.nrows();
    let lambda = 1e-8 * gram.trace() / p as f64;
    for k in 0..p {
        gram[(k, k)] += lambda.max(f64::MIN_POSITIVE);
    }
    match gram.clone().cholesky() {
        Some(chol) => chol.solve(&rhs),
        None => gram
            .lu()
            .solve(&rhs)
            .unwrap_or_else(|| DVector::zeros(p)),
    }
}

/// Least-squares coefficients at period `t` pooling the listed populations
/// with one shared coefficient vector.
pub fn ols_fit(
    panel: &SurfacePanel,
    basis: &SplineBasis,
    t: usize,
    populations: &[usize],
) -> Result<Vec<f64>> {
    panel.check_basis(basis)?;
    let p = basis.n_bases();
    let mut gram = DMatrix::<f64>::zeros(p, p);
    let mut rhs = DVector::<f64>::zeros(p);
    let mut count = 0usize;
    for &i in populations {
        for x in 0..panel.n_ages() {
            let Some(y) = panel.log_rate(i, x, t) else {
                continue;
            };
            count += 1;
            let g = basis.row(x);
            for a in 0..p {
                if g[a] == 0.0 {
                    continue;
                }
                rhs[a] += g[a] * y;
                for b in 0..p {
                    gram[(a, b)] += g[a] * g[b];
                }
            }
        }
    }
    if count < p {
        return Err(Error::InsufficientData(format!(
            "period {t}: {count} observed cells for {p} coefficients"
        )));
    }
    Ok(solve_normal_equations(gram, rhs).iter().copied().collect())
}

/// Pooled least-squares fit over all populations at period `t`.
pub fn ols_period_fit(panel: &SurfacePanel, basis: &SplineBasis, t: usize) -> Result<Vec<f64>> {
    let all: Vec<usize> = (0..panel.n_populations()).collect();
    ols_fit(panel, basis, t, &all)
}

/// Classical LOESS on the equally spaced positions `0..len`: at each point a
/// tricube-weighted polynomial fit over the `ceil(span * len)` nearest
/// positions, no robustness iterations.
pub fn loess_smooth(series: &[f64], span: f64, degree: usize) -> Result<Vec<f64>> {
    let n = series.len();
    if degree > 2 {
        return Err(Error::InvalidInput(format!("LOESS degree must be 0, 1 or 2, got {degree}")));
    }
    if !(span > 0.0 && span <= 1.0) {
        return Err(Error::InvalidSpan(format!("span must lie in (0, 1], got {span}")));
    }
    if n < degree + 1 {
        return Err(Error::InvalidInput(format!(
            "series of length {n} is too short for degree {degree}"
        )));
    }
    let q = ((span * n as f64).ceil() as usize).clamp(1, n);
    let mut out = Vec::with_capacity(n);
    for t0 in 0..n {
        let mut dist: Vec<f64> = (0..n).map(|t| (t as f64 - t0 as f64).abs()).collect();
        dist.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let h = dist[q - 1];
        let mut points = Vec::new();
        for (t, &y) in series.iter().enumerate() {
            let d = (t as f64 - t0 as f64).abs();
            if h > 0.0 && d < h {
                let u = d / h;
                let w = (1.0 - u * u * u).powi(3);
                points.push((t as f64 - t0 as f64, y, w));
            } else if h == 0.0 && d == 0.0 {
                points.push((0.0, y, 1.0));
            }
        }
        if points.len() < degree + 1 {
            return Err(Error::InvalidSpan(format!(
                "span {span} leaves {} weighted points at position {t0}, degree {degree} needs {}",
                points.len(),
                degree + 1
            )));
        }
        // centered at t0 so the fitted value is the intercept
        let cols = degree + 1;
        let mut gram = DMatrix::<f64>::zeros(cols, cols);
        let mut rhs = DVector::<f64>::zeros(cols);
        for &(dx, y, w) in &points {
            let powers: Vec<f64> = (0..cols).map(|k| dx.powi(k as i32)).collect();
            for a in 0..cols {
                rhs[a] += w * powers[a] * y;
                for b in 0..cols {
                    gram[(a, b)] += w * powers[a] * powers[b];
                }
            }
        }
        let coef = gram.lu().solve(&rhs).ok_or_else(|| {
            Error::InvalidSpan(format!("singular local fit at position {t0}"))
        })?;
        out.push(coef[0]);
    }
    Ok(out)
}

/// Prior mean curves `mu[j][t]`. Series too short for the local polynomial
/// are passed through unsmoothed, which is what an interpolating local fit
/// would return anyway.
pub fn calibrate_mu(
    panel: &SurfacePanel,
    basis: &SplineBasis,
    loess: LoessSettings,
) -> Result<Vec<Vec<f64>>> {
    let periods = panel.n_periods();
    let per_period: Vec<Vec<f64>> = (0..periods)
        .map(|t| ols_period_fit(panel, basis, t))
        .collect::<Result<_>>()?;
    (0..basis.n_bases())
        .map(|j| {
            let series: Vec<f64> = per_period.iter().map(|b| b[j]).collect();
            if periods <= loess.degree + 1 {
                Ok(series)
            } else {
                loess_smooth(&series, loess.span, loess.degree)
            }
        })
        .collect()
}

/// Starting partition structure for a chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitStrategy {
    /// One cluster holding every population, coefficients at `mu`.
    #[default]
    Merged,
    /// Every population alone, coefficients at its own least-squares fit.
    Singletons,
}

/// Deterministic starting state. `hyper.mu` must already be calibrated.
pub fn initialize_state(
    panel: &SurfacePanel,
    basis: &SplineBasis,
    hyper: &Hyperparameters,
    strategy: InitStrategy,
) -> Result<ModelState> {
    let n = panel.n_populations();
    let p = basis.n_bases();
    let periods = panel.n_periods();
    hyper.validate(p, periods)?;

    // noise level from pooled least-squares residuals
    let fits: Vec<Vec<f64>> = (0..periods)
        .map(|t| ols_period_fit(panel, basis, t))
        .collect::<Result<_>>()?;
    let sigma2 = (0..n)
        .map(|i| {
            let mut ss = 0.0;
            let mut count = 0usize;
            for (t, fit) in fits.iter().enumerate() {
                for x in 0..panel.n_ages() {
                    if let Some(y) = panel.log_rate(i, x, t) {
                        let f: f64 = basis.row(x).iter().zip(fit).map(|(g, b)| g * b).sum();
                        ss += (y - f).powi(2);
                        count += 1;
                    }
                }
            }
            if count == 0 {
                1.0
            } else {
                (ss / count as f64).max(1e-6)
            }
        })
        .collect();

    let (memberships, beta_star) = match strategy {
        InitStrategy::Merged => (
            vec![vec![Membership::one_block(n); periods]; p],
            (0..p)
                .map(|j| (0..periods).map(|t| vec![hyper.mu[j][t]]).collect())
                .collect(),
        ),
        InitStrategy::Singletons => {
            let own: Vec<Vec<Vec<f64>>> = (0..periods)
                .map(|t| {
                    (0..n)
                        .map(|i| {
                            ols_fit(panel, basis, t, &[i]).unwrap_or_else(|_| fits[t].clone())
                        })
                        .collect()
                })
                .collect();
            (
                vec![vec![Membership::singletons(n); periods]; p],
                (0..p)
                    .map(|j| {
                        (0..periods)
                            .map(|t| (0..n).map(|i| own[t][i][j]).collect())
                            .collect()
                    })
                    .collect(),
            )
        }
    };

    let state = ModelState {
        memberships,
        flags: vec![vec![PersistenceFlags::none(n); periods]; p],
        beta_star,
        psi: hyper.mu.clone(),
        sigma2,
        delta2: vec![0.01; p],
        omega2: vec![0.01; p],
        alpha: vec![0.5; p],
        mass: vec![1.0; p],
    };
    state.validate()?;
    Ok(state)
}
