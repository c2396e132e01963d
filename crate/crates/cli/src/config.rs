//! Run configuration: a TOML file, resolved against its own directory and
//! then overridden from flags and `SURFCLUST_*` variables.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use surfclust::datagen::SimulationDesign;
use surfclust::io::IngestOptions;
use surfclust::{BasisSpec, Hyperparameters, SamplerConfig};

use crate::failure::Failure;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: Option<DataSection>,
    #[serde(default)]
    pub ingest: IngestOptions,
    pub simulation: Option<SimulationSection>,
    pub basis: BasisSpec,
    #[serde(default)]
    pub hyperparameters: Hyperparameters,
    pub sampler: SamplerConfig,
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub rates: PathBuf,
    pub indicators: Option<PathBuf>,
    /// Unknown countries in the indicator file become an error instead of
    /// a warning.
    #[serde(default)]
    pub strict_countries: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    pub seed: u64,
    /// CSV of true memberships (`j,t,i,label`); the bundled scenario if absent.
    pub truth: Option<PathBuf>,
    #[serde(default)]
    pub design: SimulationDesign,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    #[serde(default = "one")]
    pub chains: usize,
    /// Also write a long-format file combining all summaries.
    #[serde(default)]
    pub tidy: bool,
}

fn one() -> usize {
    1
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub chains: Option<usize>,
    pub out: Option<PathBuf>,
    pub iterations: Option<usize>,
    pub burn_in: Option<usize>,
}

const REQUIRED: &[&str] = &[
    "basis",
    "sampler.iterations",
    "sampler.burn_in",
    "sampler.seed",
    "output.dir",
];

fn lookup<'a>(table: &'a toml::Table, key: &str) -> Option<&'a toml::Value> {
    let mut parts = key.split('.');
    let mut cur = table.get(parts.next()?)?;
    for p in parts {
        cur = cur.as_table()?.get(p)?;
    }
    Some(cur)
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, Failure> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Failure::config(format!("malformed config: {}", e.message())))?;
        for key in REQUIRED {
            if lookup(&table, key).is_none() {
                return Err(Failure::config(format!("missing config key `{key}`")));
            }
        }
        if lookup(&table, "data").is_none() && lookup(&table, "simulation").is_none() {
            return Err(Failure::config(
                "missing config key `data.rates` (or a [simulation] section)",
            ));
        }
        if lookup(&table, "simulation").is_some() && lookup(&table, "simulation.seed").is_none() {
            return Err(Failure::config("missing config key `simulation.seed`"));
        }
        if lookup(&table, "data").is_some() && lookup(&table, "data.rates").is_none() {
            return Err(Failure::config("missing config key `data.rates`"));
        }
        toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Failure::config(format!("invalid config: {}", e.message())))
    }

    /// Reads `path` and makes relative paths inside it relative to the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::config(format!("cannot read {}: {e}", path.display())))?;
        let mut config = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(d) = config.data.as_mut() {
            fix(&mut d.rates);
            if let Some(ind) = d.indicators.as_mut() {
                fix(ind);
            }
        }
        if let Some(t) = config.simulation.as_mut().and_then(|s| s.truth.as_mut()) {
            fix(t);
        }
        fix(&mut config.output.dir);
        Ok(config)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.sampler.seed = s;
        }
        if let Some(c) = o.chains {
            self.output.chains = c;
        }
        if let Some(d) = &o.out {
            self.output.dir = d.clone();
        }
        if let Some(i) = o.iterations {
            self.sampler.iterations = i;
        }
        if let Some(b) = o.burn_in {
            self.sampler.burn_in = b;
        }
    }

    pub fn validate(&self) -> Result<(), Failure> {
        self.sampler.validate().map_err(|e| Failure::core("config", e))?;
        if self.output.chains == 0 {
            return Err(Failure::config("output.chains must be at least 1"));
        }
        if !(0.0 < self.sampler.loess.span && self.sampler.loess.span <= 1.0) {
            return Err(Failure::config("sampler.loess.span must lie in (0, 1]"));
        }
        Ok(())
    }

    /// SHA-256 of the resolved configuration, as recorded in run manifests.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }
}
