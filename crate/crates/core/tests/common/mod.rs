//! Brute-force oracles shared by the integration tests. Everything here is
//! written from the definitions, independently of the library internals.

#![allow(dead_code)]

/// All set partitions of `n` items as restricted growth strings.
pub fn all_partitions(n: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, n: usize, max: usize, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == n {
            out.push(prefix.clone());
            return;
        }
        let next_max = if prefix.is_empty() { 0 } else { max + 1 };
        for l in 0..=next_max {
            prefix.push(l);
            rec(prefix, n, max.max(l), out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if n == 0 {
        out.push(Vec::new());
    } else {
        rec(&mut Vec::new(), n, 0, &mut out);
    }
    out
}

pub fn block_sizes(labels: &[usize]) -> Vec<usize> {
    let k = labels.iter().map(|l| l + 1).max().unwrap_or(0);
    let mut sizes = vec![0; k];
    for &l in labels {
        sizes[l] += 1;
    }
    sizes.retain(|&s| s > 0);
    sizes
}

/// CRP probability of a partition with the given block sizes:
/// `M^K Π (n_k − 1)! / (M (M + 1) ⋯ (M + n − 1))`.
pub fn eppf(sizes: &[usize], mass: f64) -> f64 {
    let n: usize = sizes.iter().sum();
    let mut num = 1.0;
    for &s in sizes {
        num *= mass;
        for v in 1..s {
            num *= v as f64;
        }
    }
    let mut den = 1.0;
    for v in 0..n {
        den *= mass + v as f64;
    }
    num / den
}

/// Labels of the units in `subset`, relabeled by first appearance.
pub fn restrict(labels: &[usize], subset: &[usize]) -> Vec<usize> {
    let mut map = std::collections::HashMap::new();
    subset
        .iter()
        .map(|&u| {
            let next = map.len();
            *map.entry(labels[u]).or_insert(next)
        })
        .collect()
}

/// Persisting units must keep their pairwise co-membership.
pub fn compatible(prev: &[usize], next: &[usize], persist: &[bool]) -> bool {
    let units: Vec<usize> = (0..prev.len()).filter(|&u| persist[u]).collect();
    restrict(prev, &units) == restrict(next, &units)
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

/// Variation of information `H(a) + H(b) − 2 I(a, b)`.
pub fn vi(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len() as f64;
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut joint = vec![0usize; ka * kb];
    let mut ca = vec![0usize; ka];
    let mut cb = vec![0usize; kb];
    for (&x, &y) in a.iter().zip(b) {
        joint[x * kb + y] += 1;
        ca[x] += 1;
        cb[y] += 1;
    }
    let h_ab = entropy(joint.into_iter(), n);
    let h_a = entropy(ca.into_iter(), n);
    let h_b = entropy(cb.into_iter(), n);
    (2.0 * h_ab - h_a - h_b).max(0.0)
}

/// Log marginal likelihood of observations `y_l ~ N(β g_l, s_l²)` with
/// `β ~ N(m, v)` integrated out.
pub fn log_marginal(y: &[f64], g: &[f64], s2: &[f64], m: f64, v: f64) -> f64 {
    use std::f64::consts::PI;
    let mut precision = 1.0 / v;
    let mut eta = m / v;
    let mut out = -0.5 * (2.0 * PI * v).ln() - 0.5 * m * m / v;
    for ((y, g), s2) in y.iter().zip(g).zip(s2) {
        precision += g * g / s2;
        eta += y * g / s2;
        out += -0.5 * (2.0 * PI * s2).ln() - 0.5 * y * y / s2;
    }
    out + 0.5 * (2.0 * PI / precision).ln() + 0.5 * eta * eta / precision
}

pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Mean and batch-means standard error of a (possibly autocorrelated) series.
pub fn batch_mean_se(values: &[f64], batches: usize) -> (f64, f64) {
    let size = values.len() / batches;
    let means: Vec<f64> = (0..batches)
        .map(|b| values[b * size..(b + 1) * size].iter().sum::<f64>() / size as f64)
        .collect();
    let grand = means.iter().sum::<f64>() / batches as f64;
    let var = means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / (batches - 1) as f64;
    (grand, (var / batches as f64).sqrt())
}
