//! Clamped B-spline bases over an integer age grid.
//!
//! The basis is evaluated once on construction and cached both as a dense
//! row-major design matrix and as per-function sparse columns, since the
//! sampler only ever needs `g_j(x)` at observed ages.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Interior knots of the 20-function quadratic basis on ages 0..=98.
///
/// Placed so the basis peaks sit at ages 0, 2, 6, 12, 16, 21, 27, 32, 38, 43,
/// 49, 55, 60, 66, 72, 79, 86, 91, 94, 98: dense at infant and senescent
/// ages, sparse across adult ages.
pub const MORTALITY20_INTERIOR: [f64; 17] = [
    2.5, 9.5, 14.0, 19.0, 22.5, 30.0, 35.5, 40.0, 45.5, 52.0, 57.5, 64.0, 67.5, 76.5, 82.5,
    90.5, 91.0,
];

/// Interior knots of the 6-function quadratic basis on ages 0..=100.
pub const SIM6_INTERIOR: [f64; 3] = [25.0, 50.0, 75.0];

/// How a basis is described in run configuration and manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BasisSpec {
    Preset { preset: String },
    Knots { degree: usize, interior_knots: Vec<f64> },
}

impl BasisSpec {
    pub fn build(&self, ages: &[u32]) -> Result<SplineBasis> {
        match self {
            BasisSpec::Preset { preset } => match preset.as_str() {
                "sim6" => SplineBasis::new(2, &SIM6_INTERIOR, ages),
                "mortality20" => SplineBasis::new(2, &MORTALITY20_INTERIOR, ages),
                other => Err(Error::InvalidInput(format!("unknown basis preset `{other}`"))),
            },
            BasisSpec::Knots {
                degree,
                interior_knots,
            } => SplineBasis::new(*degree, interior_knots, ages),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SplineBasis {
    degree: usize,
    knots: Vec<f64>,
    ages: Vec<u32>,
    n_bases: usize,
    // row-major |ages| x n_bases
    design: Vec<f64>,
    // per basis function: (age index, value) for every nonzero entry
    columns: Vec<Vec<(usize, f64)>>,
}

impl SplineBasis {
    /// Builds a clamped basis whose boundary knots are the first and last ages
    /// of the grid.
    pub fn new(degree: usize, interior_knots: &[f64], ages: &[u32]) -> Result<Self> {
        let lo = ages.iter().copied().min().ok_or_else(|| {
            Error::InvalidInput("age grid must contain at least one age".into())
        })? as f64;
        let hi = ages.iter().copied().max().unwrap_or_default() as f64;
        Self::with_boundary(degree, interior_knots, lo, hi, ages)
    }

    pub fn with_boundary(
        degree: usize,
        interior_knots: &[f64],
        lo: f64,
        hi: f64,
        ages: &[u32],
    ) -> Result<Self> {
        if !(lo < hi) {
            return Err(Error::InvalidKnots(format!(
                "boundary knots must satisfy lo < hi, got [{lo}, {hi}]"
            )));
        }
        if interior_knots.iter().any(|k| !k.is_finite()) {
            return Err(Error::InvalidKnots("non-finite interior knot".into()));
        }
        if interior_knots.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidKnots("interior knots must be nondecreasing".into()));
        }
        if let (Some(&first), Some(&last)) = (interior_knots.first(), interior_knots.last()) {
            if first <= lo || last >= hi {
                return Err(Error::InvalidKnots(format!(
                    "interior knots must lie strictly inside ({lo}, {hi})"
                )));
            }
        }
        // a knot repeated more than `degree` times would split the basis
        let mut run = 1;
        for w in interior_knots.windows(2) {
            run = if w[0] == w[1] { run + 1 } else { 1 };
            if run > degree.max(1) {
                return Err(Error::InvalidKnots(format!(
                    "interior knot {} repeated more than degree times",
                    w[0]
                )));
            }
        }

        let mut knots = Vec::with_capacity(interior_knots.len() + 2 * (degree + 1));
        knots.extend(std::iter::repeat_n(lo, degree + 1));
        knots.extend_from_slice(interior_knots);
        knots.extend(std::iter::repeat_n(hi, degree + 1));
        let n_bases = knots.len() - degree - 1;

        let mut basis = SplineBasis {
            degree,
            knots,
            ages: ages.to_vec(),
            n_bases,
            design: Vec::with_capacity(ages.len() * n_bases),
            columns: vec![Vec::new(); n_bases],
        };
        for (row, &age) in ages.iter().enumerate() {
            let values = basis.evaluate(age as f64)?;
            for (j, &v) in values.iter().enumerate() {
                if v != 0.0 {
                    basis.columns[j].push((row, v));
                }
            }
            basis.design.extend(values);
        }
        Ok(basis)
    }

    /// Evaluates all basis functions at an arbitrary point of the support.
    pub fn evaluate(&self, x: f64) -> Result<Vec<f64>> {
        let (lo, hi) = self.support();
        if !(x >= lo && x <= hi) {
            return Err(Error::AgeOutOfSupport { age: x, lo, hi });
        }
        let p = self.degree;
        let span = self.find_span(x);
        let local = self.nonzero_at(span, x);
        let mut out = vec![0.0; self.n_bases];
        for (r, v) in local.into_iter().enumerate() {
            out[span - p + r] = v;
        }
        Ok(out)
    }

    // knot span index s with knots[s] <= x < knots[s+1]; the right boundary
    // belongs to the last nonempty span
    fn find_span(&self, x: f64) -> usize {
        let p = self.degree;
        let last = self.n_bases - 1;
        if x >= self.knots[last + 1] {
            return last;
        }
        let mut s = p;
        while s < last && x >= self.knots[s + 1] {
            s += 1;
        }
        s
    }

    // Cox-de Boor recursion restricted to the degree+1 functions that can be
    // nonzero on the span.
    fn nonzero_at(&self, span: usize, x: f64) -> Vec<f64> {
        let p = self.degree;
        let t = &self.knots;
        let mut n = vec![0.0; p + 1];
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        n[0] = 1.0;
        for d in 1..=p {
            left[d] = x - t[span + 1 - d];
            right[d] = t[span + d] - x;
            let mut saved = 0.0;
            for r in 0..d {
                let denom = right[r + 1] + left[d - r];
                let temp = if denom > 0.0 { n[r] / denom } else { 0.0 };
                n[r] = saved + right[r + 1] * temp;
                saved = left[d - r] * temp;
            }
            n[d] = saved;
        }
        n
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn ages(&self) -> &[u32] {
        &self.ages
    }

    pub fn n_bases(&self) -> usize {
        self.n_bases
    }

    pub fn n_ages(&self) -> usize {
        self.ages.len()
    }

    pub fn support(&self) -> (f64, f64) {
        (self.knots[0], self.knots[self.knots.len() - 1])
    }

    /// `g_j(x)` at the `row`-th age of the grid.
    #[inline]
    pub fn value(&self, row: usize, j: usize) -> f64 {
        self.design[row * self.n_bases + j]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.design[row * self.n_bases..(row + 1) * self.n_bases]
    }

    /// Nonzero entries of basis function `j` as `(age index, value)`.
    pub fn column(&self, j: usize) -> &[(usize, f64)] {
        &self.columns[j]
    }

    pub fn design_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.ages.len(), self.n_bases, &self.design)
    }

    /// Grid age at which each basis function attains its maximum (first
    /// maximizer on ties).
    pub fn peak_ages(&self) -> Vec<u32> {
        (0..self.n_bases)
            .map(|j| {
                let mut best = (0usize, f64::NEG_INFINITY);
                for row in 0..self.ages.len() {
                    let v = self.value(row, j);
                    if v > best.1 {
                        best = (row, v);
                    }
                }
                self.ages[best.0]
            })
            .collect()
    }
}

/// The 20-function quadratic basis used for the mortality application.
pub fn default_mortality_basis() -> SplineBasis {
    let ages: Vec<u32> = (0..=98).collect();
    SplineBasis::new(2, &MORTALITY20_INTERIOR, &ages).expect("preset knots are valid")
}

/// The 6-function quadratic basis of the simulation design, ages 0..=100.
pub fn simulation_basis() -> SplineBasis {
    let ages: Vec<u32> = (0..=100).collect();
    SplineBasis::new(2, &SIM6_INTERIOR, &ages).expect("preset knots are valid")
}
