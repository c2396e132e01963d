use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};
use surfclust::datagen::{default_truth_scenario, generate_simulation, truth_from_csv, truth_to_csv, SimulationDesign};
use surfclust::draws::{panel_digest, read_run, write_run};
use surfclust::gibbs::chain_rng;
use surfclust::io::{
    export_rates, ingest_indicators, ingest_rates, write_beta_trajectories, write_coclustering, write_eta2,
    write_jt_table, write_partitions,
};
use surfclust::partition::simulate_trpm;
use surfclust::summary::{
    accuracy_trajectory, beta_trajectories, cluster_count_trajectory, coclustering_all, eta_squared,
    point_partitions,
};
use surfclust::{calibrate_mu, run_chains, BasisSpec, DrawStore, Membership, RunManifest, SurfacePanel};

use crate::config::RunConfig;
use crate::failure::{Failure, Stage};

pub const FORMAT_VERSION: u32 = 1;
const DRAW_FILES: [&str; 3] = ["memberships.csv", "beta.csv", "scalars.csv"];

fn create(stage: &str, path: &Path) -> Result<BufWriter<File>, Failure> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Failure::io(stage, parent, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure::io(stage, path, e))
}

fn open(stage: &str, path: &Path) -> Result<File, Failure> {
    File::open(path).map_err(|e| Failure::io(stage, path, e))
}

/// The bundled scenario is cut to the design's length when it is shorter.
fn read_truth(path: Option<&Path>, periods: Option<usize>) -> Result<Vec<Vec<Membership>>, Failure> {
    match path {
        None => Ok(default_truth_scenario()
            .into_iter()
            .map(|row| match periods {
                Some(t) => row.into_iter().take(t).collect(),
                None => row,
            })
            .collect()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Failure::io("truth", p, e))?;
            truth_from_csv(&text).stage("truth")
        }
    }
}

/// Writes the panel, the true memberships and the latent record to `dir`.
pub fn simulate(
    design: &SimulationDesign,
    truth_path: Option<&Path>,
    seed: u64,
    dir: &Path,
) -> Result<(SurfacePanel, Vec<Vec<Membership>>), Failure> {
    let truth = read_truth(truth_path, Some(design.n_periods))?;
    let (panel, record) = generate_simulation(design, &truth, seed).stage("simulate")?;
    export_rates(&panel, create("simulate", &dir.join("panel.csv"))?).stage("simulate")?;
    let mut w = create("simulate", &dir.join("truth.csv"))?;
    w.write_all(truth_to_csv(&truth).as_bytes())
        .map_err(|e| Failure::io("simulate", &dir.join("truth.csv"), e))?;
    let w = create("simulate", &dir.join("record.json"))?;
    serde_json::to_writer_pretty(w, &record).map_err(|e| Failure::data(format!("simulate: {e}")))?;
    log::info!("simulated {} populations x {} periods into {}", design.n_populations, design.n_periods, dir.display());
    Ok((panel, truth))
}

fn load_panel(config: &RunConfig, write_simulation: bool) -> Result<SurfacePanel, Failure> {
    if let Some(data) = &config.data {
        let panel = ingest_rates(open("ingest", &data.rates)?, &config.ingest).stage("ingest")?;
        log::info!(
            "ingested {} populations, {} ages, {} periods ({} observed cells)",
            panel.n_populations(),
            panel.n_ages(),
            panel.n_periods(),
            panel.total_observed()
        );
        return Ok(panel);
    }
    let sim = config.simulation.as_ref().expect("config has data or simulation");
    if write_simulation {
        let dir = config.output.dir.join("simulation");
        Ok(simulate(&sim.design, sim.truth.as_deref(), sim.seed, &dir)?.0)
    } else {
        let truth = read_truth(sim.truth.as_deref(), Some(sim.design.n_periods))?;
        Ok(generate_simulation(&sim.design, &truth, sim.seed).stage("simulate")?.0)
    }
}

#[derive(Debug, Serialize)]
struct ChainRecord {
    chain: u64,
    dir: String,
    n_draws: usize,
    draws_digest: String,
}

#[derive(Debug, Serialize)]
struct RunRecord {
    format_version: u32,
    code_version: &'static str,
    config_digest: String,
    seed: u64,
    data_digest: String,
    chains: Vec<ChainRecord>,
    /// Digest over every chain's draw files, in chain order.
    draws_digest: String,
}

#[derive(Debug, Serialize)]
struct Resolved<'a> {
    config: &'a RunConfig,
    config_digest: String,
    populations: &'a [String],
    n_ages: usize,
    periods: &'a [i32],
    n_bases: usize,
    stored_draws_per_chain: usize,
}

fn draws_digest(dir: &Path) -> Result<String, Failure> {
    let mut h = Sha256::new();
    for name in DRAW_FILES {
        let path = dir.join(name);
        let bytes = std::fs::read(&path).map_err(|e| Failure::io("digest", &path, e))?;
        h.update(name.as_bytes());
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(hex::encode(h.finalize()))
}

pub fn chain_dir(out: &Path, chain: usize) -> PathBuf {
    out.join(format!("chain-{chain}"))
}

/// Runs the sampler per `config`; with `dry_run` only validates and prints
/// the resolved settings.
pub fn fit(config: &RunConfig, dry_run: bool) -> Result<(), Failure> {
    config.validate()?;
    let panel = load_panel(config, !dry_run)?;
    let basis = config.basis.build(panel.ages()).stage("basis")?;
    panel.check_basis(&basis).stage("basis")?;
    let mut hyper = config.hyperparameters.clone();
    if hyper.mu.is_empty() {
        if dry_run {
            hyper.mu = vec![vec![0.0; panel.n_periods()]; basis.n_bases()];
        } else {
            hyper.mu = calibrate_mu(&panel, &basis, config.sampler.loess).stage("calibrate")?;
        }
    }
    hyper.validate(basis.n_bases(), panel.n_periods()).stage("config")?;

    if dry_run {
        let resolved = Resolved {
            config,
            config_digest: config.digest(),
            populations: panel.populations(),
            n_ages: panel.n_ages(),
            periods: panel.periods(),
            n_bases: basis.n_bases(),
            stored_draws_per_chain: config.sampler.stored_draws(),
        };
        // a closed pipe is not worth a failure
        let _ = writeln!(std::io::stdout(), "{}", serde_json::to_string_pretty(&resolved).expect("serializable"));
        return Ok(());
    }

    let chains = config.output.chains;
    log::info!(
        "running {chains} chain(s) of {} iterations on {} bases",
        config.sampler.iterations,
        basis.n_bases()
    );
    let stores = run_chains(&panel, &basis, &hyper, &config.sampler, chains).stage("fit")?;

    let out = &config.output.dir;
    let config_json = serde_json::to_value(config).expect("serializable");
    let data_digest = panel_digest(&panel);
    let mut records = Vec::new();
    let mut all = Sha256::new();
    for (k, store) in stores.iter().enumerate() {
        let dir = chain_dir(out, k);
        let manifest = RunManifest {
            format_version: FORMAT_VERSION,
            seed: config.sampler.seed,
            chain: k as u64,
            config: config_json.clone(),
            hyperparameters: hyper.clone(),
            basis: config.basis.clone(),
            populations: panel.populations().to_vec(),
            ages: panel.ages().to_vec(),
            periods: panel.periods().to_vec(),
            n_bases: basis.n_bases(),
            data_digest: data_digest.clone(),
            n_draws: store.len(),
        };
        write_run(&dir, &manifest, store).stage("write")?;
        let digest = draws_digest(&dir)?;
        all.update(digest.as_bytes());
        records.push(ChainRecord {
            chain: k as u64,
            dir: format!("chain-{k}"),
            n_draws: store.len(),
            draws_digest: digest,
        });
    }
    let record = RunRecord {
        format_version: FORMAT_VERSION,
        code_version: env!("CARGO_PKG_VERSION"),
        config_digest: config.digest(),
        seed: config.sampler.seed,
        data_digest,
        chains: records,
        draws_digest: hex::encode(all.finalize()),
    };
    let w = create("write", &out.join("run.json"))?;
    serde_json::to_writer_pretty(w, &record).map_err(|e| Failure::data(format!("write: {e}")))?;
    log::info!("draws written to {}", out.display());
    Ok(())
}

/// Loads one run directory, or every `chain-*` directory beneath it.
pub fn load_runs(dir: &Path) -> Result<(RunManifest, Vec<DrawStore>), Failure> {
    let mut dirs = Vec::new();
    if dir.join("manifest.json").exists() {
        dirs.push(dir.to_path_buf());
    } else {
        let entries = std::fs::read_dir(dir).map_err(|e| Failure::io("summarize", dir, e))?;
        let mut found: Vec<(usize, PathBuf)> = entries
            .filter_map(|e| e.ok())
            .filter_map(|e| {
                let name = e.file_name().into_string().ok()?;
                let k = name.strip_prefix("chain-")?.parse().ok()?;
                Some((k, e.path()))
            })
            .collect();
        found.sort();
        dirs.extend(found.into_iter().map(|(_, p)| p));
    }
    if dirs.is_empty() {
        return Err(Failure::data(format!("summarize: no runs found in {}", dir.display())));
    }
    let mut manifest = None;
    let mut stores = Vec::new();
    for d in &dirs {
        let (m, s) = read_run(d).map_err(|e| Failure::core(&format!("read {}", d.display()), e))?;
        if let Some(first) = &manifest {
            let first: &RunManifest = first;
            if first.data_digest != m.data_digest || first.n_bases != m.n_bases {
                return Err(Failure::data(format!("{} was fitted to different data", d.display())));
            }
        } else {
            manifest = Some(m);
        }
        stores.push(s);
    }
    Ok((manifest.expect("at least one run"), stores))
}

fn write_tidy(
    path: &Path,
    clusters: &[Vec<f64>],
    accuracy: Option<&[Vec<f64>]>,
    beta: &[Vec<Vec<f64>>],
    populations: &[String],
) -> Result<(), Failure> {
    let mut w = create("summarize", path)?;
    let mut body = String::from("quantity,country,j,t,value\n");
    for (j, row) in clusters.iter().enumerate() {
        for (t, v) in row.iter().enumerate() {
            body.push_str(&format!("clusters,,{},{},{v}\n", j + 1, t + 1));
        }
    }
    if let Some(acc) = accuracy {
        for (j, row) in acc.iter().enumerate() {
            for (t, v) in row.iter().enumerate() {
                body.push_str(&format!("accuracy,,{},{},{v}\n", j + 1, t + 1));
            }
        }
    }
    for (i, per_i) in beta.iter().enumerate() {
        for (j, per_j) in per_i.iter().enumerate() {
            for (t, v) in per_j.iter().enumerate() {
                body.push_str(&format!("beta,{},{},{},{v}\n", populations[i], j + 1, t + 1));
            }
        }
    }
    w.write_all(body.as_bytes()).map_err(|e| Failure::io("summarize", path, e))
}

/// Pools the chains under `run_dir` and writes every summary table to `out`.
pub fn summarize(run_dir: &Path, out: &Path, truth: Option<&Path>, tidy: bool) -> Result<(), Failure> {
    let (manifest, stores) = load_runs(run_dir)?;
    let pooled = DrawStore::pooled(&stores).stage("summarize")?;
    let co = coclustering_all(&pooled).stage("summarize")?;
    write_coclustering(&co, create("summarize", &out.join("coclustering.csv"))?).stage("summarize")?;
    let parts = point_partitions(&pooled).stage("summarize")?;
    write_partitions(&parts, create("summarize", &out.join("partitions.csv"))?).stage("summarize")?;
    let clusters = cluster_count_trajectory(&pooled).stage("summarize")?;
    write_jt_table(&clusters, "clusters", create("summarize", &out.join("clusters.csv"))?).stage("summarize")?;
    let beta = beta_trajectories(&pooled).stage("summarize")?;
    write_beta_trajectories(&beta, &manifest.populations, create("summarize", &out.join("beta.csv"))?)
        .stage("summarize")?;

    // a simulated run carries its own truth
    let default_truth = run_dir.join("simulation").join("truth.csv");
    let truth = truth.map(Path::to_path_buf).or_else(|| default_truth.exists().then_some(default_truth));
    let accuracy = match truth {
        Some(p) => {
            let t = read_truth(Some(&p), None)?;
            let acc = accuracy_trajectory(&pooled, &t).stage("summarize")?;
            write_jt_table(&acc, "accuracy", create("summarize", &out.join("accuracy.csv"))?)
                .stage("summarize")?;
            Some(acc)
        }
        None => None,
    };
    if tidy {
        write_tidy(&out.join("tidy.csv"), &clusters, accuracy.as_deref(), &beta, &manifest.populations)?;
    }
    log::info!("summarized {} draws from {} chain(s) into {}", pooled.len(), stores.len(), out.display());
    Ok(())
}

pub fn eta2(run_dir: &Path, indicators: &Path, strict: bool, out: &Path) -> Result<(), Failure> {
    let (manifest, stores) = load_runs(run_dir)?;
    let pooled = DrawStore::pooled(&stores).stage("eta2")?;
    let panel = ingest_indicators(open("eta2", indicators)?, &manifest.populations, &manifest.periods, strict)
        .stage("eta2")?;
    let values = eta_squared(&pooled, &panel).stage("eta2")?;
    write_eta2(&values, panel.names(), create("eta2", out)?).stage("eta2")?;
    Ok(())
}

/// One prior draw of a partition sequence as `t,i,label` (1-based).
pub fn trpm_sim<W: Write>(n: usize, periods: usize, alpha: f64, mass: f64, seed: u64, mut out: W) -> Result<(), Failure> {
    let mut rng = chain_rng(seed, 0);
    let seq = simulate_trpm(n, periods, alpha, mass, &mut rng).stage("trpm-sim")?;
    let mut body = String::from("t,i,label\n");
    for (t, (c, _)) in seq.iter().enumerate() {
        for (i, l) in c.labels().iter().enumerate() {
            body.push_str(&format!("{},{},{}\n", t + 1, i + 1, l + 1));
        }
    }
    out.write_all(body.as_bytes())
        .map_err(|e| Failure::data(format!("trpm-sim: {e}")))
}

/// The basis matrix as `age,g1..gp`.
pub fn basis<W: Write>(spec: &BasisSpec, ages: &[u32], mut out: W) -> Result<(), Failure> {
    let b = spec.build(ages).stage("basis")?;
    let mut body = String::from("age");
    for j in 1..=b.n_bases() {
        body.push_str(&format!(",g{j}"));
    }
    body.push('\n');
    for (x, age) in ages.iter().enumerate() {
        body.push_str(&age.to_string());
        for v in b.row(x) {
            body.push_str(&format!(",{v}"));
        }
        body.push('\n');
    }
    out.write_all(body.as_bytes()).map_err(|e| Failure::data(format!("basis: {e}")))
}

/// Fit, then summarize into `<out>/summary`, then indicators if configured.
pub fn run(config: &RunConfig, dry_run: bool) -> Result<(), Failure> {
    fit(config, dry_run)?;
    if dry_run {
        return Ok(());
    }
    let out = &config.output.dir;
    let summary = out.join("summary");
    summarize(out, &summary, None, config.output.tidy)?;
    if let Some(ind) = config.data.as_ref().and_then(|d| d.indicators.as_ref()) {
        let strict = config.data.as_ref().is_some_and(|d| d.strict_countries);
        eta2(out, ind, strict, &summary.join("eta2.csv"))?;
    }
    Ok(())
}
