//! Versioned binary checkpoints.
//!
//! Layout: the 8-byte magic `GBBMCKPT`, a little-endian `u32` format version,
//! a little-endian `u64` header length, a UTF-8 JSON header, then `3·n`
//! little-endian `f64`s: parameters, Adam first moments, Adam second moments.

use std::path::Path;

use gbbm::training::{AdamState, HistoryRow, TrainConfig, TrainHistory};
use gbbm::ModelParams;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{config_error, io_context, CliResult};

const MAGIC: &[u8; 8] = b"GBBMCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
struct RngState {
    seed: String,
    stream: u64,
    /// `u128` as decimal text.
    word_pos: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct HistoryEntry {
    episode: usize,
    seconds: f64,
    per_bandwidth: Vec<f64>,
    total: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Header {
    config_hash: String,
    train: TrainConfig,
    episode: usize,
    elapsed: f64,
    adam_steps: u64,
    param_count: usize,
    rng: RngState,
    history: Vec<HistoryEntry>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub version: u32,
    pub config_hash: String,
    pub train: TrainConfig,
    pub episode: usize,
    pub elapsed: f64,
    pub params: ModelParams,
    pub adam: AdamState,
    pub rng: ChaCha8Rng,
    pub history: TrainHistory,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            config_hash: self.config_hash.clone(),
            train: self.train.clone(),
            episode: self.episode,
            elapsed: self.elapsed,
            adam_steps: self.adam.t,
            param_count: self.params.len(),
            rng: RngState {
                seed: hex::encode(self.rng.get_seed()),
                stream: self.rng.get_stream(),
                word_pos: self.rng.get_word_pos().to_string(),
            },
            history: self
                .history
                .rows
                .iter()
                .map(|r| HistoryEntry {
                    episode: r.episode,
                    seconds: r.seconds,
                    per_bandwidth: r.per_bandwidth.clone(),
                    total: r.total,
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let n = self.params.len();
        let mut out = Vec::with_capacity(20 + json.len() + 24 * n);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for v in self.params.0.iter().chain(&self.adam.m).chain(&self.adam.v) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> CliResult<Self> {
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return config_error("not a checkpoint file (bad magic)");
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return config_error(format!("unsupported checkpoint version {version} (expected {FORMAT_VERSION})"));
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let Some(json) = bytes.get(20..20 + header_len) else {
            return config_error("truncated checkpoint header");
        };
        let header: Header = match serde_json::from_slice(json) {
            Ok(h) => h,
            Err(e) => return config_error(format!("corrupt checkpoint header: {e}")),
        };
        let n = header.param_count;
        if header.train.spec.param_count() != n {
            return config_error(format!(
                "checkpoint has {n} parameters but its circuit expects {}",
                header.train.spec.param_count()
            ));
        }
        let body = &bytes[20 + header_len..];
        if body.len() != 24 * n {
            return config_error(format!("checkpoint body has {} bytes, expected {}", body.len(), 24 * n));
        }
        let floats: Vec<f64> = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let seed: [u8; 32] = match hex::decode(&header.rng.seed).ok().and_then(|s| s.try_into().ok()) {
            Some(s) => s,
            None => return config_error("corrupt checkpoint rng seed"),
        };
        let Ok(word_pos) = header.rng.word_pos.parse::<u128>() else {
            return config_error("corrupt checkpoint rng position");
        };
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(header.rng.stream);
        rng.set_word_pos(word_pos);
        Ok(Self {
            version,
            config_hash: header.config_hash,
            episode: header.episode,
            elapsed: header.elapsed,
            params: ModelParams(floats[..n].to_vec()),
            adam: AdamState {
                m: floats[n..2 * n].to_vec(),
                v: floats[2 * n..].to_vec(),
                t: header.adam_steps,
            },
            rng,
            history: TrainHistory {
                sigmas: header.train.bandwidths.clone(),
                rows: header
                    .history
                    .into_iter()
                    .map(|h| HistoryRow {
                        episode: h.episode,
                        seconds: h.seconds,
                        per_bandwidth: h.per_bandwidth,
                        total: h.total,
                    })
                    .collect(),
            },
            train: header.train,
        })
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        // write-then-rename so an interrupted save never leaves a torn file
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes()).map_err(io_context(&tmp))?;
        std::fs::rename(&tmp, path).map_err(io_context(path))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let bytes = std::fs::read(path).map_err(io_context(path))?;
        Self::from_bytes(&bytes)
    }
}
