//! Posterior summaries computed from stored draws.

use std::collections::BTreeMap;

use crate::draws::DrawStore;
use crate::error::{Error, Result};
use crate::partition::{coclustering_accuracy, nvi_distance, vi_distance, Membership};

/// Posterior probabilities that two populations share a cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct CoClusteringMatrix {
    n: usize,
    probs: Vec<f64>,
}

impl CoClusteringMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.probs[a * self.n + b]
    }

    pub fn is_valid(&self) -> bool {
        (0..self.n).all(|a| {
            self.get(a, a) == 1.0
                && (0..self.n).all(|b| {
                    let v = self.get(a, b);
                    v == self.get(b, a) && (0.0..=1.0).contains(&v)
                })
        })
    }
}

fn check_lengths(draws: &[&Membership]) -> Result<usize> {
    let n = draws.first().ok_or(Error::NoDraws)?.len();
    if draws.iter().any(|d| d.len() != n) {
        return Err(Error::DimensionMismatch("draws differ in length".into()));
    }
    Ok(n)
}

pub fn coclustering(draws: &[&Membership]) -> Result<CoClusteringMatrix> {
    let n = check_lengths(draws)?;
    let mut counts = vec![0usize; n * n];
    for d in draws {
        for a in 0..n {
            for b in a..n {
                if d.same_cluster(a, b) {
                    counts[a * n + b] += 1;
                }
            }
        }
    }
    let total = draws.len() as f64;
    let mut probs = vec![0.0; n * n];
    for a in 0..n {
        for b in a..n {
            let p = counts[a * n + b] as f64 / total;
            probs[a * n + b] = p;
            probs[b * n + a] = p;
        }
    }
    Ok(CoClusteringMatrix { n, probs })
}

/// The sampled partition with the smallest average VI to all draws.
///
/// Distinct partitions are tallied first, so the cost is quadratic in the
/// number of distinct partitions rather than draws, and the result does not
/// depend on draw order. Ties go to fewer clusters, then to the
/// lexicographically smallest canonical labels.
pub fn min_vi_partition(draws: &[&Membership]) -> Result<Membership> {
    check_lengths(draws)?;
    let mut tally: BTreeMap<&[usize], (usize, &Membership)> = BTreeMap::new();
    for d in draws {
        tally.entry(d.labels()).or_insert((0, d)).0 += 1;
    }
    let distinct: Vec<(usize, &Membership)> = tally.into_values().collect();
    let mut best: Option<(f64, &Membership)> = None;
    for &(_, cand) in &distinct {
        let mut loss = 0.0;
        for &(w, other) in &distinct {
            loss += w as f64 * vi_distance(cand, other)?;
        }
        loss /= draws.len() as f64;
        let better = match best {
            None => true,
            Some((l, b)) => {
                if (loss - l).abs() <= 1e-12 * l.max(1.0) {
                    cand.n_clusters() < b.n_clusters()
                        || (cand.n_clusters() == b.n_clusters() && cand.labels() < b.labels())
                } else {
                    loss < l
                }
            }
        };
        if better {
            best = Some((loss, cand));
        }
    }
    Ok(best.expect("at least one draw").1.clone())
}

/// Posterior mean of `K_jt`, indexed `[j][t]`.
pub fn cluster_count_trajectory(store: &DrawStore) -> Result<Vec<Vec<f64>>> {
    if store.is_empty() {
        return Err(Error::NoDraws);
    }
    let (_, p, periods) = store.dims();
    let m = store.len() as f64;
    Ok((0..p)
        .map(|j| {
            (0..periods)
                .map(|t| store.draws().iter().map(|d| d.n_clusters(j, t) as f64).sum::<f64>() / m)
                .collect()
        })
        .collect())
}

/// Posterior mean of `β_ijt`, indexed `[i][j][t]`.
pub fn beta_trajectories(store: &DrawStore) -> Result<Vec<Vec<Vec<f64>>>> {
    if store.is_empty() {
        return Err(Error::NoDraws);
    }
    let (n, p, periods) = store.dims();
    let m = store.len() as f64;
    let mut out = vec![vec![vec![0.0; periods]; p]; n];
    for d in store.draws() {
        for (i, per_i) in out.iter_mut().enumerate() {
            for (j, per_j) in per_i.iter_mut().enumerate() {
                for (t, v) in per_j.iter_mut().enumerate() {
                    *v += d.beta[j][t][i];
                }
            }
        }
    }
    for v in out.iter_mut().flatten().flatten() {
        *v /= m;
    }
    Ok(out)
}

/// Posterior mean co-clustering accuracy against known memberships `[j][t]`.
pub fn accuracy_trajectory(store: &DrawStore, truth: &[Vec<Membership>]) -> Result<Vec<Vec<f64>>> {
    if store.is_empty() {
        return Err(Error::NoDraws);
    }
    let (n, p, periods) = store.dims();
    if truth.len() != p
        || truth.iter().any(|row| row.len() != periods || row.iter().any(|c| c.len() != n))
    {
        return Err(Error::DimensionMismatch("truth does not match the draws".into()));
    }
    let m = store.len() as f64;
    let mut out = vec![vec![0.0; periods]; p];
    for d in store.draws() {
        for j in 0..p {
            for t in 0..periods {
                out[j][t] += coclustering_accuracy(&d.memberships[j][t], &truth[j][t])?;
            }
        }
    }
    for v in out.iter_mut().flatten() {
        *v /= m;
    }
    Ok(out)
}

/// Min-VI point partition for every `(j, t)`.
pub fn point_partitions(store: &DrawStore) -> Result<Vec<Vec<Membership>>> {
    let (_, p, periods) = store.dims();
    (0..p)
        .map(|j| {
            (0..periods)
                .map(|t| min_vi_partition(&store.memberships_at(j, t)))
                .collect()
        })
        .collect()
}

/// Co-clustering matrix for every `(j, t)`.
pub fn coclustering_all(store: &DrawStore) -> Result<Vec<Vec<CoClusteringMatrix>>> {
    let (_, p, periods) = store.dims();
    (0..p)
        .map(|j| {
            (0..periods)
                .map(|t| coclustering(&store.memberships_at(j, t)))
                .collect()
        })
        .collect()
}

/// External covariates aligned with a panel's populations and periods.
#[derive(Debug, Clone, PartialEq)]
pub struct IndicatorPanel {
    names: Vec<String>,
    n_populations: usize,
    n_periods: usize,
    values: Vec<Option<f64>>,
}

impl IndicatorPanel {
    /// `values` is ordered `[q][i][t]`.
    pub fn new(
        names: Vec<String>,
        n_populations: usize,
        n_periods: usize,
        values: Vec<Option<f64>>,
    ) -> Result<Self> {
        if values.len() != names.len() * n_populations * n_periods {
            return Err(Error::DimensionMismatch(format!(
                "{} indicator values for {} x {} x {}",
                values.len(),
                names.len(),
                n_populations,
                n_periods
            )));
        }
        if values.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("indicator values must be finite".into()));
        }
        Ok(IndicatorPanel {
            names,
            n_populations,
            n_periods,
            values,
        })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn n_indicators(&self) -> usize {
        self.names.len()
    }

    pub fn n_populations(&self) -> usize {
        self.n_populations
    }

    pub fn n_periods(&self) -> usize {
        self.n_periods
    }

    pub fn value(&self, q: usize, i: usize, t: usize) -> Option<f64> {
        self.values[(q * self.n_populations + i) * self.n_periods + t]
    }

    pub fn series(&self, q: usize, t: usize) -> Vec<Option<f64>> {
        (0..self.n_populations).map(|i| self.value(q, i, t)).collect()
    }
}

/// Between-cluster share of the indicator's variance. Populations with a
/// missing value are dropped; `None` if fewer than two remain.
pub fn eta_squared_single(partition: &Membership, values: &[Option<f64>]) -> Option<f64> {
    let present: Vec<(usize, f64)> = values
        .iter()
        .enumerate()
        .filter_map(|(i, v)| v.map(|v| (partition.label(i), v)))
        .collect();
    if present.len() < 2 {
        return None;
    }
    let grand = present.iter().map(|p| p.1).sum::<f64>() / present.len() as f64;
    let sst: f64 = present.iter().map(|p| (p.1 - grand).powi(2)).sum();
    if sst <= 0.0 {
        return Some(0.0);
    }
    let k = partition.n_clusters();
    let mut sums = vec![0.0; k];
    let mut counts = vec![0usize; k];
    for &(c, v) in &present {
        sums[c] += v;
        counts[c] += 1;
    }
    let ssb: f64 = (0..k)
        .filter(|&c| counts[c] > 0)
        .map(|c| {
            let m = sums[c] / counts[c] as f64;
            counts[c] as f64 * (m - grand).powi(2)
        })
        .sum();
    Some((ssb / sst).clamp(0.0, 1.0))
}

/// Posterior mean η² indexed `[q][j][t]`.
pub fn eta_squared(store: &DrawStore, indicators: &IndicatorPanel) -> Result<Vec<Vec<Vec<Option<f64>>>>> {
    if store.is_empty() {
        return Err(Error::NoDraws);
    }
    let (n, p, periods) = store.dims();
    if indicators.n_populations() != n || indicators.n_periods() != periods {
        return Err(Error::DimensionMismatch("indicators do not match the draws".into()));
    }
    let m = store.len() as f64;
    Ok((0..indicators.n_indicators())
        .map(|q| {
            (0..p)
                .map(|j| {
                    (0..periods)
                        .map(|t| {
                            let series = indicators.series(q, t);
                            let mut total = 0.0;
                            for d in store.draws() {
                                total += eta_squared_single(&d.memberships[j][t], &series)?;
                            }
                            Some(total / m)
                        })
                        .collect()
                })
                .collect()
        })
        .collect())
}

/// NVI between two sets of point partitions, indexed `[j][t]`.
pub fn nvi_between_runs(a: &[Vec<Membership>], b: &[Vec<Membership>]) -> Result<Vec<Vec<f64>>> {
    if a.len() != b.len() || a.iter().zip(b).any(|(x, y)| x.len() != y.len()) {
        return Err(Error::DimensionMismatch("point partitions differ in shape".into()));
    }
    a.iter()
        .zip(b)
        .map(|(ra, rb)| ra.iter().zip(rb).map(|(x, y)| nvi_distance(x, y)).collect())
        .collect()
}
