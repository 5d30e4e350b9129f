//! JSON experiment configuration.
//!
//! Relative paths are resolved against the directory containing the config
//! file. The config hash is the SHA-256 of the canonical (key-sorted, compact)
//! JSON form, so formatting changes do not alter it.

use std::path::{Path, PathBuf};

use gbbm::datasets::{IsingConfig, LifeConfig};
use gbbm::training::{AdamConfig, LrSchedule};
use gbbm::{BitDataset, CircuitSpec, Layout, MeasurementKind};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{config_error, io_context, CliResult};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub data: Option<DataConfig>,
    #[serde(default)]
    pub generator: Option<GeneratorConfig>,
    #[serde(default)]
    pub circuit: Option<CircuitConfig>,
    #[serde(default)]
    pub train: Option<TrainBlock>,
    #[serde(default)]
    pub eval: EvalBlock,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub train: PathBuf,
    #[serde(default)]
    pub test: Option<PathBuf>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeneratorConfig {
    Ising {
        #[serde(flatten)]
        lattice: IsingConfig,
        train_samples: usize,
        test_samples: usize,
    },
    Life {
        #[serde(flatten)]
        grid: LifeConfig,
        train_samples: usize,
        test_samples: usize,
    },
    Chain {
        modes: usize,
        flip: f64,
        train_samples: usize,
        test_samples: usize,
    },
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayoutConfig {
    #[default]
    Clements,
    /// All-to-all coupling in a seeded random edge order.
    Complete {
        #[serde(default)]
        seed: Option<u64>,
    },
    Graph {
        edges: Vec<(usize, usize)>,
    },
    /// Edge list file as written by `baseline --kind chowliu`.
    EdgeFile {
        path: PathBuf,
    },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CircuitConfig {
    /// Defaults to the dataset width.
    #[serde(default)]
    pub modes: Option<usize>,
    pub layers: usize,
    #[serde(default)]
    pub layout: LayoutConfig,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainBlock {
    #[serde(default = "parity")]
    pub kind: MeasurementKind,
    /// Explicit bandwidths; otherwise `σ·2^k` from the median heuristic.
    #[serde(default)]
    pub bandwidths: Option<Vec<f64>>,
    #[serde(default = "three")]
    pub num_bandwidths: usize,
    #[serde(default = "pair_budget")]
    pub pair_budget: usize,
    pub strings_per_step: usize,
    pub learning_rate: f64,
    pub episodes: usize,
    #[serde(default = "yes")]
    pub resample_strings_each_step: bool,
    #[serde(default = "one")]
    pub eval_interval: usize,
    #[serde(default = "cutoff")]
    pub locality_cutoff: usize,
    #[serde(default)]
    pub schedule: LrSchedule,
    #[serde(default)]
    pub adam: AdamConfig,
    #[serde(default)]
    pub checkpoint_interval: Option<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalBlock {
    #[serde(default)]
    pub bandwidths: Option<Vec<f64>>,
    #[serde(default = "five")]
    pub repetitions: usize,
    #[serde(default = "ten_thousand")]
    pub strings: usize,
    #[serde(default = "hundred_thousand")]
    pub baseline_samples: usize,
    #[serde(default = "sampler_limit")]
    pub sampler_limit: usize,
}

impl Default for EvalBlock {
    fn default() -> Self {
        Self {
            bandwidths: None,
            repetitions: five(),
            strings: ten_thousand(),
            baseline_samples: hundred_thousand(),
            sampler_limit: sampler_limit(),
        }
    }
}

fn parity() -> MeasurementKind {
    MeasurementKind::Parity
}
fn three() -> usize {
    3
}
fn pair_budget() -> usize {
    10_000
}
fn yes() -> bool {
    true
}
fn one() -> usize {
    1
}
fn cutoff() -> usize {
    gbbm::observables::DEFAULT_LOCALITY_CUTOFF
}
fn five() -> usize {
    5
}
fn ten_thousand() -> usize {
    10_000
}
fn hundred_thousand() -> usize {
    100_000
}
fn sampler_limit() -> usize {
    gbbm::sampler::DEFAULT_MODE_LIMIT
}

/// A parsed config with its location and content hash.
#[derive(Clone, Debug)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub base_dir: PathBuf,
    pub hash: String,
}

impl LoadedConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(io_context(path))?;
        let value: serde_json::Value = match serde_json::from_str(&text) {
            Ok(v) => v,
            Err(e) => return config_error(format!("{}: {e}", path.display())),
        };
        let config: ExperimentConfig = match serde_json::from_value(value.clone()) {
            Ok(c) => c,
            Err(e) => return config_error(format!("{}: {e}", path.display())),
        };
        let canonical = serde_json::to_string(&value).expect("JSON values serialize");
        let hash = hex::encode(Sha256::digest(canonical.as_bytes()))[..16].to_string();
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { config, base_dir, hash })
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_dir(&self) -> CliResult<PathBuf> {
        let dir = self.resolve(&self.config.output_dir);
        std::fs::create_dir_all(&dir).map_err(io_context(&dir))?;
        Ok(dir)
    }

    pub fn output(&self, name: &str) -> CliResult<PathBuf> {
        Ok(self.output_dir()?.join(name))
    }

    fn data_path(&self, test: bool) -> CliResult<PathBuf> {
        let explicit = self
            .config
            .data
            .as_ref()
            .and_then(|d| if test { d.test.clone() } else { Some(d.train.clone()) });
        match explicit {
            Some(p) => Ok(self.resolve(&p)),
            None => self.output(if test { "test.txt" } else { "train.txt" }),
        }
    }

    fn load_data(&self, test: bool) -> CliResult<BitDataset> {
        let path = self.data_path(test)?;
        if !path.exists() {
            return config_error(format!(
                "{} set not found at {} (set data.{} or run gen-data first)",
                if test { "test" } else { "training" },
                path.display(),
                if test { "test" } else { "train" }
            ));
        }
        Ok(BitDataset::load(&path)?)
    }

    pub fn train_data(&self) -> CliResult<BitDataset> {
        self.load_data(false)
    }

    pub fn test_data(&self) -> CliResult<BitDataset> {
        self.load_data(true)
    }

    pub fn train_block(&self) -> CliResult<&TrainBlock> {
        match &self.config.train {
            Some(t) => Ok(t),
            None => config_error("the config has no 'train' block"),
        }
    }

    /// Circuit for data of the given width.
    pub fn circuit(&self, width: usize) -> CliResult<CircuitSpec> {
        let Some(c) = &self.config.circuit else {
            return config_error("the config has no 'circuit' block");
        };
        let modes = c.modes.unwrap_or(width);
        if modes != width {
            return config_error(format!(
                "dataset width {width} does not match circuit modes {modes}"
            ));
        }
        let layout = match &c.layout {
            LayoutConfig::Clements => Layout::Clements,
            LayoutConfig::Complete { seed } => {
                return Ok(CircuitSpec::complete_graph(modes, c.layers, seed.unwrap_or(self.config.seed))?)
            }
            LayoutConfig::Graph { edges } => Layout::Graph { edges: edges.clone() },
            LayoutConfig::EdgeFile { path } => Layout::Graph {
                edges: read_edge_file(&self.resolve(path))?,
            },
        };
        Ok(CircuitSpec::new(modes, c.layers, layout)?)
    }
}

/// `i j` pairs, one per line; `#` lines are comments.
pub fn read_edge_file(path: &Path) -> CliResult<Vec<(usize, usize)>> {
    let text = std::fs::read_to_string(path).map_err(io_context(path))?;
    let mut edges = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        let parsed = match parts.as_slice() {
            [a, b] => a.parse::<usize>().ok().zip(b.parse::<usize>().ok()),
            _ => None,
        };
        match parsed {
            Some(e) => edges.push(e),
            None => return config_error(format!("{}:{}: expected 'i j', got '{line}'", path.display(), n + 1)),
        }
    }
    Ok(edges)
}
