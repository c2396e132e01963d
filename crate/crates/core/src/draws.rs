//! Stored posterior draws and their on-disk form.
//!
//! A run directory holds `manifest.json` plus three long-format CSV files:
//! `memberships.csv` (iter, j, t, i, label), `beta.csv` (iter, j, t, i, value)
//! and `scalars.csv` (iter, name, value). Indices and labels are one-based on
//! disk. Floats are written in shortest round-trip form, so reading a store
//! back reproduces it bit for bit.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::basis::BasisSpec;
use crate::error::{Error, Result};
use crate::model::{Hyperparameters, ModelState, SurfacePanel};
use crate::partition::Membership;

/// Monitored quantities of one retained iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct Draw {
    pub iteration: usize,
    pub memberships: Vec<Vec<Membership>>,
    /// Population-level coefficients, `[j][t][i]`.
    pub beta: Vec<Vec<Vec<f64>>>,
    pub psi: Vec<Vec<f64>>,
    pub alpha: Vec<f64>,
    pub mass: Vec<f64>,
    pub sigma2: Vec<f64>,
    pub delta2: Vec<f64>,
    pub omega2: Vec<f64>,
}

impl Draw {
    pub fn from_state(iteration: usize, state: &ModelState) -> Self {
        let n = state.n_populations();
        let beta = (0..state.n_bases())
            .map(|j| {
                (0..state.n_periods())
                    .map(|t| (0..n).map(|i| state.beta(i, j, t)).collect())
                    .collect()
            })
            .collect();
        Draw {
            iteration,
            memberships: state.memberships.clone(),
            beta,
            psi: state.psi.clone(),
            alpha: state.alpha.clone(),
            mass: state.mass.clone(),
            sigma2: state.sigma2.clone(),
            delta2: state.delta2.clone(),
            omega2: state.omega2.clone(),
        }
    }

    pub fn n_clusters(&self, j: usize, t: usize) -> usize {
        self.memberships[j][t].n_clusters()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DrawStore {
    n_populations: usize,
    n_bases: usize,
    n_periods: usize,
    draws: Vec<Draw>,
}

impl DrawStore {
    pub fn new(n_populations: usize, n_bases: usize, n_periods: usize) -> Self {
        DrawStore {
            n_populations,
            n_bases,
            n_periods,
            draws: Vec::new(),
        }
    }

    pub fn push(&mut self, draw: Draw) {
        self.draws.push(draw);
    }

    /// Pools the draws of several chains with equal dimensions.
    pub fn pooled(stores: &[DrawStore]) -> Result<DrawStore> {
        let first = stores.first().ok_or(Error::NoDraws)?;
        let mut out = DrawStore::new(first.n_populations, first.n_bases, first.n_periods);
        for s in stores {
            if s.dims() != first.dims() {
                return Err(Error::DimensionMismatch("chains disagree in dimensions".into()));
            }
            out.draws.extend(s.draws.iter().cloned());
        }
        Ok(out)
    }

    /// `(n, p, T)`.
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.n_populations, self.n_bases, self.n_periods)
    }

    pub fn n_populations(&self) -> usize {
        self.n_populations
    }

    pub fn n_bases(&self) -> usize {
        self.n_bases
    }

    pub fn n_periods(&self) -> usize {
        self.n_periods
    }

    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn draws(&self) -> &[Draw] {
        &self.draws
    }

    pub fn memberships_at(&self, j: usize, t: usize) -> Vec<&Membership> {
        self.draws.iter().map(|d| &d.memberships[j][t]).collect()
    }

    pub fn write_csv(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut members = BufWriter::new(File::create(dir.join("memberships.csv"))?);
        let mut beta = BufWriter::new(File::create(dir.join("beta.csv"))?);
        let mut scalars = BufWriter::new(File::create(dir.join("scalars.csv"))?);
        writeln!(members, "iter,j,t,i,label")?;
        writeln!(beta, "iter,j,t,i,value")?;
        writeln!(scalars, "iter,name,value")?;
        for d in &self.draws {
            let it = d.iteration;
            for j in 0..self.n_bases {
                for t in 0..self.n_periods {
                    let c = &d.memberships[j][t];
                    for i in 0..self.n_populations {
                        writeln!(members, "{it},{},{},{},{}", j + 1, t + 1, i + 1, c.label(i) + 1)?;
                        writeln!(beta, "{it},{},{},{},{}", j + 1, t + 1, i + 1, d.beta[j][t][i])?;
                    }
                }
            }
            for j in 0..self.n_bases {
                writeln!(scalars, "{it},alpha.{},{}", j + 1, d.alpha[j])?;
                writeln!(scalars, "{it},mass.{},{}", j + 1, d.mass[j])?;
                writeln!(scalars, "{it},delta2.{},{}", j + 1, d.delta2[j])?;
                writeln!(scalars, "{it},omega2.{},{}", j + 1, d.omega2[j])?;
                for t in 0..self.n_periods {
                    writeln!(scalars, "{it},psi.{}.{},{}", j + 1, t + 1, d.psi[j][t])?;
                }
            }
            for i in 0..self.n_populations {
                writeln!(scalars, "{it},sigma2.{},{}", i + 1, d.sigma2[i])?;
            }
        }
        members.flush()?;
        beta.flush()?;
        scalars.flush()?;
        Ok(())
    }

    /// Reads the CSV files of a run directory for a store of known size.
    pub fn read_csv(dir: &Path, n_populations: usize, n_bases: usize, n_periods: usize) -> Result<Self> {
        let (n, p, periods) = (n_populations, n_bases, n_periods);
        let mut by_iter: BTreeMap<usize, Draw> = BTreeMap::new();
        let mut labels: BTreeMap<usize, Vec<Vec<Vec<usize>>>> = BTreeMap::new();
        let blank = |it: usize| Draw {
            iteration: it,
            memberships: Vec::new(),
            beta: vec![vec![vec![f64::NAN; n]; periods]; p],
            psi: vec![vec![f64::NAN; periods]; p],
            alpha: vec![f64::NAN; p],
            mass: vec![f64::NAN; p],
            sigma2: vec![f64::NAN; n],
            delta2: vec![f64::NAN; p],
            omega2: vec![f64::NAN; p],
        };
        let index = |s: &str, max: usize, row: usize| -> Result<usize> {
            let v: usize = s.trim().parse().map_err(|_| Error::Parse {
                row,
                msg: format!("bad index {s:?}"),
            })?;
            if v == 0 || v > max {
                return Err(Error::Parse {
                    row,
                    msg: format!("index {v} outside 1..={max}"),
                });
            }
            Ok(v - 1)
        };
        let number = |s: &str, row: usize| -> Result<f64> {
            s.trim().parse().map_err(|_| Error::Parse {
                row,
                msg: format!("bad number {s:?}"),
            })
        };

        let mut rdr = csv::Reader::from_path(dir.join("memberships.csv"))?;
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let row = row + 2;
            let it = index(&rec[0], usize::MAX, row)? + 1;
            let (j, t, i) = (index(&rec[1], p, row)?, index(&rec[2], periods, row)?, index(&rec[3], n, row)?);
            let label = index(&rec[4], n, row)?;
            labels.entry(it).or_insert_with(|| vec![vec![vec![usize::MAX; n]; periods]; p])[j][t][i] = label;
            by_iter.entry(it).or_insert_with(|| blank(it));
        }
        let mut rdr = csv::Reader::from_path(dir.join("beta.csv"))?;
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let row = row + 2;
            let it = index(&rec[0], usize::MAX, row)? + 1;
            let (j, t, i) = (index(&rec[1], p, row)?, index(&rec[2], periods, row)?, index(&rec[3], n, row)?);
            by_iter.entry(it).or_insert_with(|| blank(it)).beta[j][t][i] = number(&rec[4], row)?;
        }
        let mut rdr = csv::Reader::from_path(dir.join("scalars.csv"))?;
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let row = row + 2;
            let it = index(&rec[0], usize::MAX, row)? + 1;
            let value = number(&rec[2], row)?;
            let d = by_iter.entry(it).or_insert_with(|| blank(it));
            let parts: Vec<&str> = rec[1].split('.').collect();
            match parts.as_slice() {
                ["alpha", j] => d.alpha[index(j, p, row)?] = value,
                ["mass", j] => d.mass[index(j, p, row)?] = value,
                ["delta2", j] => d.delta2[index(j, p, row)?] = value,
                ["omega2", j] => d.omega2[index(j, p, row)?] = value,
                ["sigma2", i] => d.sigma2[index(i, n, row)?] = value,
                ["psi", j, t] => d.psi[index(j, p, row)?][index(t, periods, row)?] = value,
                _ => {
                    return Err(Error::Parse {
                        row,
                        msg: format!("unknown scalar {:?}", &rec[1]),
                    })
                }
            }
        }

        let mut store = DrawStore::new(n, p, periods);
        for (it, mut d) in by_iter {
            let l = labels
                .remove(&it)
                .ok_or_else(|| Error::Ingest(format!("iteration {it} has no memberships")))?;
            d.memberships = l
                .iter()
                .map(|per_t| per_t.iter().map(|raw| Membership::from_labels(raw)).collect())
                .collect();
            if l.iter().flatten().flatten().any(|&v| v == usize::MAX)
                || d.beta.iter().flatten().flatten().any(|v| v.is_nan())
            {
                return Err(Error::Ingest(format!("iteration {it} is incomplete")));
            }
            store.push(d);
        }
        Ok(store)
    }
}

/// Description of a run, written next to its draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format_version: u32,
    pub seed: u64,
    pub chain: u64,
    pub config: serde_json::Value,
    pub hyperparameters: Hyperparameters,
    pub basis: BasisSpec,
    pub populations: Vec<String>,
    pub ages: Vec<u32>,
    pub periods: Vec<i32>,
    pub n_bases: usize,
    pub data_digest: String,
    pub n_draws: usize,
}

impl RunManifest {
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let file = File::create(dir.join("manifest.json"))?;
        serde_json::to_writer_pretty(BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let file = File::open(dir.join("manifest.json"))?;
        Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
    }
}

/// Writes manifest and draws to `dir`.
pub fn write_run(dir: &Path, manifest: &RunManifest, store: &DrawStore) -> Result<()> {
    manifest.write(dir)?;
    store.write_csv(dir)
}

pub fn read_run(dir: &Path) -> Result<(RunManifest, DrawStore)> {
    let manifest = RunManifest::read(dir)?;
    let store = DrawStore::read_csv(
        dir,
        manifest.populations.len(),
        manifest.n_bases,
        manifest.periods.len(),
    )?;
    Ok((manifest, store))
}

/// SHA-256 over the panel's labels, grid and cell values.
pub fn panel_digest(panel: &SurfacePanel) -> String {
    let mut h = Sha256::new();
    for name in panel.populations() {
        h.update(name.as_bytes());
        h.update([0u8]);
    }
    for a in panel.ages() {
        h.update(a.to_le_bytes());
    }
    for p in panel.periods() {
        h.update(p.to_le_bytes());
    }
    for (v, o) in panel.raw_log_rates().iter().zip(panel.observed_mask()) {
        h.update([*o as u8]);
        h.update(if *o { v.to_bits() } else { 0 }.to_le_bytes());
    }
    hex::encode(h.finalize())
}
