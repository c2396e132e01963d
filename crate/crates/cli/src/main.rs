use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use surfclust::datagen::SimulationDesign;
use surfclust::BasisSpec;

mod commands;
mod config;
mod failure;

use config::{Overrides, RunConfig};
use failure::Failure;

/// Bayesian clustering of age-period mortality surfaces across populations.
#[derive(Debug, Parser)]
#[command(name = "surfclust", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Run configuration (TOML).
    #[arg(long, env = "SURFCLUST_CONFIG")]
    config: PathBuf,
    #[arg(long, env = "SURFCLUST_SEED")]
    seed: Option<u64>,
    #[arg(long, env = "SURFCLUST_CHAINS")]
    chains: Option<usize>,
    /// Output directory, replacing `output.dir`.
    #[arg(long, env = "SURFCLUST_OUT")]
    out: Option<PathBuf>,
    #[arg(long, env = "SURFCLUST_ITERATIONS")]
    iterations: Option<usize>,
    #[arg(long, env = "SURFCLUST_BURN_IN")]
    burn_in: Option<usize>,
    /// Validate and print the resolved settings without sampling.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic panel with known memberships.
    Simulate {
        /// Take the design from this config's [simulation] section.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, env = "SURFCLUST_SEED")]
        seed: Option<u64>,
        /// Membership CSV (`j,t,i,label`) instead of the bundled scenario.
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long, default_value = "simulation")]
        out: PathBuf,
    },
    /// Run the sampler and store draws.
    Fit(RunArgs),
    /// Fit, summarize and relate to indicators in one go.
    Run(RunArgs),
    /// Posterior summaries from stored draws.
    Summarize {
        /// A run directory (with chain-* subdirectories) or a single chain.
        run: PathBuf,
        /// Defaults to `<run>/summary`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Also write a long-format tidy.csv.
        #[arg(long)]
        tidy: bool,
    },
    /// Explained variance of indicators by the inferred partitions.
    Eta2 {
        run: PathBuf,
        #[arg(long)]
        indicators: PathBuf,
        /// Fail on countries that are not in the panel.
        #[arg(long)]
        strict: bool,
        /// Defaults to `<run>/eta2.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw partition sequences from the temporal prior.
    TrpmSim {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        periods: usize,
        #[arg(long)]
        alpha: f64,
        #[arg(long, default_value_t = 1.0)]
        mass: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Defaults to standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the basis matrix as CSV.
    Basis {
        /// Use the basis and age grid of this config.
        #[arg(long, conflicts_with_all = ["preset", "degree"])]
        config: Option<PathBuf>,
        #[arg(long)]
        preset: Option<String>,
        #[arg(long, requires = "knots")]
        degree: Option<usize>,
        /// Comma-separated interior knots.
        #[arg(long, value_delimiter = ',')]
        knots: Option<Vec<f64>>,
        #[arg(long, default_value_t = 0)]
        age_min: u32,
        #[arg(long, default_value_t = 98)]
        age_max: u32,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load(args: &RunArgs) -> Result<RunConfig, Failure> {
    let mut config = RunConfig::load(&args.config)?;
    config.apply(&Overrides {
        seed: args.seed,
        chains: args.chains,
        out: args.out.clone(),
        iterations: args.iterations,
        burn_in: args.burn_in,
    });
    Ok(config)
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>, Failure> {
    match path {
        None => Ok(Box::new(std::io::stdout().lock())),
        Some(p) => std::fs::File::create(p)
            .map(|f| Box::new(std::io::BufWriter::new(f)) as Box<dyn Write>)
            .map_err(|e| Failure::io("output", p, e)),
    }
}

fn execute(command: Command) -> Result<(), Failure> {
    match command {
        Command::Simulate {
            config,
            seed,
            truth,
            out,
        } => {
            let (design, file_seed, file_truth) = match config {
                Some(path) => {
                    let c = RunConfig::load(&path)?;
                    match c.simulation {
                        Some(s) => (s.design, s.seed, s.truth),
                        None => return Err(Failure::config("missing config key `simulation.seed`")),
                    }
                }
                None => (SimulationDesign::default(), 1, None),
            };
            let truth = truth.or(file_truth);
            commands::simulate(&design, truth.as_deref(), seed.unwrap_or(file_seed), &out).map(|_| ())
        }
        Command::Fit(args) => commands::fit(&load(&args)?, args.dry_run),
        Command::Run(args) => commands::run(&load(&args)?, args.dry_run),
        Command::Summarize {
            run,
            out,
            truth,
            tidy,
        } => {
            let out = out.unwrap_or_else(|| run.join("summary"));
            commands::summarize(&run, &out, truth.as_deref(), tidy)
        }
        Command::Eta2 {
            run,
            indicators,
            strict,
            out,
        } => {
            let out = out.unwrap_or_else(|| run.join("eta2.csv"));
            commands::eta2(&run, &indicators, strict, &out)
        }
        Command::TrpmSim {
            n,
            periods,
            alpha,
            mass,
            seed,
            out,
        } => commands::trpm_sim(n, periods, alpha, mass, seed, output(out.as_deref())?),
        Command::Basis {
            config,
            preset,
            degree,
            knots,
            age_min,
            age_max,
            out,
        } => {
            let (spec, ages) = if let Some(path) = config {
                let c = RunConfig::load(&path)?;
                let ages = match (&c.data, &c.simulation) {
                    (None, Some(s)) => s.design.ages.clone(),
                    _ => (c.ingest.age_min..=c.ingest.age_max).collect(),
                };
                (c.basis, ages)
            } else {
                let spec = match (preset, degree, knots) {
                    (Some(preset), None, _) => BasisSpec::Preset { preset },
                    (None, Some(degree), Some(interior_knots)) => BasisSpec::Knots {
                        degree,
                        interior_knots,
                    },
                    (None, None, _) => BasisSpec::Preset {
                        preset: "mortality20".into(),
                    },
                    _ => return Err(Failure::config("give either --preset or --degree with --knots")),
                };
                if age_min >= age_max {
                    return Err(Failure::config("--age-min must be below --age-max"));
                }
                (spec, (age_min..=age_max).collect())
            };
            commands::basis(&spec, &ages, output(out.as_deref())?)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code)
        }
    }
}
