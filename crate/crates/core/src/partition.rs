//! Partition calculus for the temporal random partition prior: CRP
//! probabilities, compatibility between consecutive partitions, forward
//! simulation, and partition distances.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A set partition of `n` units stored as canonical labels: the first unit
/// has label 0 and each new label is the next unused integer, so two
/// `Membership`s are equal exactly when they induce the same set partition.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Membership {
    labels: Vec<usize>,
}

impl Membership {
    /// Canonicalizes arbitrary labels.
    pub fn from_labels(labels: &[usize]) -> Self {
        let mut map: Vec<(usize, usize)> = Vec::new();
        let mut out = Vec::with_capacity(labels.len());
        for &l in labels {
            let c = match map.iter().find(|(raw, _)| *raw == l) {
                Some(&(_, c)) => c,
                None => {
                    let c = map.len();
                    map.push((l, c));
                    c
                }
            };
            out.push(c);
        }
        Membership { labels: out }
    }

    pub fn one_block(n: usize) -> Self {
        Membership { labels: vec![0; n] }
    }

    pub fn singletons(n: usize) -> Self {
        Membership {
            labels: (0..n).collect(),
        }
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Labels shifted to start at 1, as written to disk.
    pub fn labels_one_based(&self) -> Vec<usize> {
        self.labels.iter().map(|l| l + 1).collect()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn n_clusters(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_clusters()];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }

    pub fn same_cluster(&self, i: usize, j: usize) -> bool {
        self.labels[i] == self.labels[j]
    }

    /// The canonical partition induced on `subset`, in the order given.
    pub fn restrict(&self, subset: &[usize]) -> Membership {
        let raw: Vec<usize> = subset.iter().map(|&i| self.labels[i]).collect();
        Membership::from_labels(&raw)
    }

    pub fn is_canonical(labels: &[usize]) -> bool {
        let mut next = 0;
        for &l in labels {
            if l > next {
                return false;
            }
            if l == next {
                next += 1;
            }
        }
        true
    }
}

/// Persistence indicators for one `(basis, period)` pair; `true` means the
/// unit keeps its cluster from the previous period.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PersistenceFlags(Vec<bool>);

impl PersistenceFlags {
    pub fn none(n: usize) -> Self {
        PersistenceFlags(vec![false; n])
    }

    pub fn all(n: usize) -> Self {
        PersistenceFlags(vec![true; n])
    }

    pub fn from_vec(flags: Vec<bool>) -> Self {
        PersistenceFlags(flags)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, i: usize) -> bool {
        self.0[i]
    }

    pub fn set(&mut self, i: usize, value: bool) {
        self.0[i] = value;
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.0
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|&&f| f).count()
    }

    /// Indices of the persisting units, ascending.
    pub fn fixed_set(&self) -> Vec<usize> {
        (0..self.0.len()).filter(|&i| self.0[i]).collect()
    }
}

/// Cluster choice for a unit joining a partial partition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Existing(usize),
    New,
}

fn check_mass(mass: f64) -> Result<()> {
    if mass > 0.0 && mass.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("CRP mass must be positive, got {mass}")))
    }
}

/// `log Γ(M + m) − log Γ(M)` as the exact rising-factorial sum.
fn log_rising(mass: f64, m: usize) -> f64 {
    (0..m).map(|i| (mass + i as f64).ln()).sum()
}

fn log_factorial(k: usize) -> f64 {
    (2..=k).map(|i| (i as f64).ln()).sum()
}

/// Log CRP probability of a set partition with the given block sizes:
/// `K log M + Σ log Γ(n_k) + log Γ(M) − log Γ(M + m)`. The empty partition
/// has probability one.
pub fn crp_log_eppf(cluster_sizes: &[usize], mass: f64) -> Result<f64> {
    check_mass(mass)?;
    if cluster_sizes.contains(&0) {
        return Err(Error::InvalidInput("cluster sizes must be positive".into()));
    }
    Ok(log_eppf_unchecked(cluster_sizes, mass))
}

pub(crate) fn log_eppf_unchecked(cluster_sizes: &[usize], mass: f64) -> f64 {
    let m: usize = cluster_sizes.iter().sum();
    let k = cluster_sizes.len() as f64;
    k * mass.ln() + cluster_sizes.iter().map(|&s| log_factorial(s - 1)).sum::<f64>()
        - log_rising(mass, m)
}

/// Urn probability that a new unit joins `target` given the partition of
/// the units already seated.
pub fn crp_predictive(restricted: &Membership, target: Target, mass: f64) -> Result<f64> {
    check_mass(mass)?;
    let m = restricted.len() as f64;
    match target {
        Target::New => Ok(mass / (mass + m)),
        Target::Existing(k) => {
            let sizes = restricted.cluster_sizes();
            let size = *sizes.get(k).ok_or(Error::InvalidCluster(k))?;
            Ok(size as f64 / (mass + m))
        }
    }
}

/// `log EPPF(full) − log EPPF(full restricted to fixed_subset)`, the log
/// probability of seating the free units given the fixed ones.
pub fn eppf_extension_log_ratio(
    full: &Membership,
    fixed_subset: &[usize],
    mass: f64,
) -> Result<f64> {
    check_mass(mass)?;
    if let Some(&bad) = fixed_subset.iter().find(|&&i| i >= full.len()) {
        return Err(Error::InvalidIndex(format!("unit {bad} outside 0..{}", full.len())));
    }
    let restricted = full.restrict(fixed_subset);
    Ok(log_eppf_unchecked(&full.cluster_sizes(), mass)
        - log_eppf_unchecked(&restricted.cluster_sizes(), mass))
}

/// Whether `next` can be obtained from `prev` by moving only the units whose
/// flag is unset.
pub fn compatible(prev: &Membership, next: &Membership, flags: &PersistenceFlags) -> Result<bool> {
    if prev.len() != next.len() || prev.len() != flags.len() {
        return Err(Error::InvalidInput(format!(
            "length mismatch: prev {}, next {}, flags {}",
            prev.len(),
            next.len(),
            flags.len()
        )));
    }
    Ok(compatible_unchecked(prev.labels(), next.labels(), flags.as_slice()))
}

/// Pairwise check over persisting units: same block before iff same block
/// after.
pub(crate) fn compatible_unchecked(prev: &[usize], next: &[usize], flags: &[bool]) -> bool {
    let n = prev.len();
    for a in 0..n {
        if !flags[a] {
            continue;
        }
        for b in (a + 1)..n {
            if flags[b] && ((prev[a] == prev[b]) != (next[a] == next[b])) {
                return false;
            }
        }
    }
    true
}

/// Seats `unit` by the CRP urn given the clusters in `sizes`; returns the
/// chosen label (possibly `sizes.len()` for a new cluster).
fn urn_seat<R: Rng + ?Sized>(sizes: &mut Vec<usize>, mass: f64, rng: &mut R) -> usize {
    let m: usize = sizes.iter().sum();
    let u = rng.random::<f64>() * (m as f64 + mass);
    let mut acc = 0.0;
    for (k, &s) in sizes.iter().enumerate() {
        acc += s as f64;
        if u < acc {
            sizes[k] += 1;
            return k;
        }
    }
    sizes.push(1);
    sizes.len() - 1
}

/// One CRP draw by sequential urn insertion.
pub fn sample_crp<R: Rng + ?Sized>(n: usize, mass: f64, rng: &mut R) -> Membership {
    let mut sizes = Vec::new();
    let labels: Vec<usize> = (0..n).map(|_| urn_seat(&mut sizes, mass, rng)).collect();
    Membership::from_labels(&labels)
}

/// Draws the partition at period `t >= 2` given the previous partition and
/// the persistence flags: persisting units keep their blocks and the free
/// units are re-seated in ascending index order by the urn.
pub fn sample_compatible<R: Rng + ?Sized>(
    prev: &Membership,
    flags: &PersistenceFlags,
    mass: f64,
    rng: &mut R,
) -> Membership {
    let n = prev.len();
    let mut labels: Vec<Option<usize>> = vec![None; n];
    let mut remap: Vec<Option<usize>> = vec![None; prev.n_clusters()];
    let mut sizes: Vec<usize> = Vec::new();
    for i in flags.fixed_set() {
        let old = prev.label(i);
        let k = *remap[old].get_or_insert_with(|| {
            sizes.push(0);
            sizes.len() - 1
        });
        sizes[k] += 1;
        labels[i] = Some(k);
    }
    for slot in labels.iter_mut() {
        if slot.is_none() {
            *slot = Some(urn_seat(&mut sizes, mass, rng));
        }
    }
    let raw: Vec<usize> = labels.into_iter().map(|l| l.unwrap()).collect();
    Membership::from_labels(&raw)
}

/// Forward simulation of the temporal random partition prior for `periods`
/// periods. The flags of the first period are all unset.
pub fn simulate_trpm<R: Rng + ?Sized>(
    n: usize,
    periods: usize,
    alpha: f64,
    mass: f64,
    rng: &mut R,
) -> Result<Vec<(Membership, PersistenceFlags)>> {
    check_mass(mass)?;
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidInput(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    let mut out: Vec<(Membership, PersistenceFlags)> = Vec::with_capacity(periods);
    for t in 0..periods {
        if t == 0 {
            out.push((sample_crp(n, mass, rng), PersistenceFlags::none(n)));
            continue;
        }
        let flags = PersistenceFlags::from_vec((0..n).map(|_| rng.random_bool(alpha)).collect());
        let next = sample_compatible(&out[t - 1].0, &flags, mass, rng);
        out.push((next, flags));
    }
    Ok(out)
}

fn entropy(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Variation of information `H(a) + H(b) − 2 I(a, b)`, natural logarithms.
pub fn vi_distance(a: &Membership, b: &Membership) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::InvalidInput(format!(
            "partitions have different lengths ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Ok(0.0);
    }
    let n = a.len() as f64;
    let (ka, kb) = (a.n_clusters(), b.n_clusters());
    let mut joint = vec![0usize; ka * kb];
    for (&la, &lb) in a.labels().iter().zip(b.labels()) {
        joint[la * kb + lb] += 1;
    }
    let ha = entropy(a.cluster_sizes().into_iter(), n);
    let hb = entropy(b.cluster_sizes().into_iter(), n);
    let hab = entropy(joint.into_iter(), n);
    // I = H(a) + H(b) − H(a,b), so VI = 2 H(a,b) − H(a) − H(b)
    Ok((2.0 * hab - ha - hb).max(0.0))
}

/// VI divided by `log n`; zero for a single unit.
pub fn nvi_distance(a: &Membership, b: &Membership) -> Result<f64> {
    let vi = vi_distance(a, b)?;
    if a.len() < 2 {
        return Ok(0.0);
    }
    Ok((vi / (a.len() as f64).ln()).min(1.0))
}

/// Fraction of unordered pairs on which the two partitions agree about
/// being co-clustered.
pub fn coclustering_accuracy(estimate: &Membership, truth: &Membership) -> Result<f64> {
    if estimate.len() != truth.len() {
        return Err(Error::InvalidInput(format!(
            "partitions have different lengths ({} vs {})",
            estimate.len(),
            truth.len()
        )));
    }
    let n = estimate.len();
    if n < 2 {
        return Err(Error::InvalidInput("accuracy needs at least two units".into()));
    }
    let mut agree = 0usize;
    for i in 0..n {
        for j in (i + 1)..n {
            if estimate.same_cluster(i, j) == truth.same_cluster(i, j) {
                agree += 1;
            }
        }
    }
    Ok(agree as f64 / (n * (n - 1) / 2) as f64)
}
