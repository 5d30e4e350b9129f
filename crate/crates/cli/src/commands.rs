use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use gbbm::ansatz::forward;
use gbbm::baselines::{chow_liu_fit, uniform_sample};
use gbbm::datasets::{empirical_bit_covariance, gol_generate, ising_generate, markov_chain_generate};
use gbbm::observables::{bit_moments, Bandwidth};
use gbbm::sampler::ChainSampler;
use gbbm::training::{
    estimate_mmd2, median_heuristic, DatasetExpvals, ExpvalSource, ModelExpvals, TrainConfig, TrainHistory, Trainer,
};
use gbbm::{BitDataset, GbbmError, MeasurementKind};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{Checkpoint, FORMAT_VERSION};
use crate::config::{GeneratorConfig, LoadedConfig};
use crate::error::{config_error, io_context, CliResult};

// Independent ChaCha streams derived from the experiment seed.
const DATA_STREAM: u64 = 10;
const BANDWIDTH_STREAM: u64 = 11;
const EVAL_STREAM: u64 = 12;
const BASELINE_STREAM: u64 = 13;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    std::fs::write(path, contents).map_err(io_context(path))
}

fn save_dataset(mut ds: BitDataset, hash: &str, extra: &[(&str, String)], path: &Path) -> CliResult<()> {
    ds.metadata.insert("config_hash".into(), hash.to_string());
    for (k, v) in extra {
        ds.metadata.insert((*k).to_string(), v.clone());
    }
    write_file(path, &ds.to_text())
}

fn take_rows(ds: &BitDataset, range: std::ops::Range<usize>) -> BitDataset {
    let mut out = BitDataset::new(ds.width());
    out.metadata = ds.metadata.clone();
    for r in range {
        out.push_row(&ds.row(r)).expect("same width");
    }
    out
}

pub fn gen_data(cfg: &LoadedConfig) -> CliResult<Vec<PathBuf>> {
    let Some(generator) = &cfg.config.generator else {
        return config_error("the config has no 'generator' block");
    };
    let mut rng = stream_rng(cfg.config.seed, DATA_STREAM);
    let (all, n_train, n_test) = match generator {
        GeneratorConfig::Ising {
            lattice,
            train_samples,
            test_samples,
        } => (ising_generate(lattice, train_samples + test_samples, &mut rng)?, *train_samples, *test_samples),
        GeneratorConfig::Life {
            grid,
            train_samples,
            test_samples,
        } => (gol_generate(grid, train_samples + test_samples, &mut rng)?, *train_samples, *test_samples),
        GeneratorConfig::Chain {
            modes,
            flip,
            train_samples,
            test_samples,
        } => (
            markov_chain_generate(*modes, *flip, train_samples + test_samples, &mut rng)?,
            *train_samples,
            *test_samples,
        ),
    };
    let seed = [("seed", cfg.config.seed.to_string())];
    let train_path = cfg.output("train.txt")?;
    let test_path = cfg.output("test.txt")?;
    save_dataset(take_rows(&all, 0..n_train), &cfg.hash, &seed, &train_path)?;
    save_dataset(take_rows(&all, n_train..n_train + n_test), &cfg.hash, &seed, &test_path)?;
    Ok(vec![train_path, test_path])
}

fn resolve_bandwidths(cfg: &LoadedConfig, data: &BitDataset) -> CliResult<Vec<f64>> {
    let block = cfg.train_block()?;
    if let Some(b) = &block.bandwidths {
        return Ok(b.clone());
    }
    if block.num_bandwidths == 0 {
        return config_error("train.num_bandwidths must be at least 1");
    }
    let base = median_heuristic(data, block.pair_budget, &mut stream_rng(cfg.config.seed, BANDWIDTH_STREAM))?;
    Ok((0..block.num_bandwidths).map(|k| base * 2f64.powi(k as i32)).collect())
}

fn history_csv(history: &TrainHistory, hash: &str) -> String {
    format!("# config_hash={hash}\n{}", history.to_csv())
}

fn snapshot(trainer: &Trainer<'_>, hash: &str) -> Checkpoint {
    Checkpoint {
        version: FORMAT_VERSION,
        config_hash: hash.to_string(),
        train: trainer.config.clone(),
        episode: trainer.episode,
        elapsed: trainer.elapsed,
        params: trainer.params.clone(),
        adam: trainer.adam.clone(),
        rng: trainer.rng.clone(),
        history: trainer.history.clone(),
    }
}

pub struct TrainSummary {
    pub episodes: usize,
    pub final_loss: Option<f64>,
    pub checkpoint: PathBuf,
}

pub fn train(cfg: &LoadedConfig, resume: Option<&Path>) -> CliResult<TrainSummary> {
    let data = cfg.train_data()?;
    let spec = cfg.circuit(data.width())?;
    let block = cfg.train_block()?;
    let build = |bandwidths: Vec<f64>| TrainConfig {
        spec: spec.clone(),
        kind: block.kind,
        bandwidths,
        strings_per_step: block.strings_per_step,
        learning_rate: block.learning_rate,
        episodes: block.episodes,
        seed: cfg.config.seed,
        resample_strings_each_step: block.resample_strings_each_step,
        eval_interval: block.eval_interval,
        locality_cutoff: block.locality_cutoff,
        schedule: block.schedule,
        adam: block.adam,
    };
    let mut trainer = match resume {
        None => Trainer::new(build(resolve_bandwidths(cfg, &data)?), &data)?,
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            if ck.train.spec != spec {
                return config_error(format!(
                    "checkpoint circuit ({} modes, {} layers) differs from the configured circuit ({} modes, {} layers)",
                    ck.train.spec.modes, ck.train.spec.layers, spec.modes, spec.layers
                ));
            }
            if ck.train.seed != cfg.config.seed {
                return config_error(format!(
                    "checkpoint seed {} differs from config seed {}",
                    ck.train.seed, cfg.config.seed
                ));
            }
            let mut t = Trainer::resume(build(ck.train.bandwidths.clone()), &data, ck.params, ck.adam, ck.rng, ck.episode)?;
            t.history = ck.history;
            t.elapsed = ck.elapsed;
            t
        }
    };
    let final_path = cfg.output("checkpoint.bin")?;
    let history_path = cfg.output("history.csv")?;
    while !trainer.finished() {
        if let Err(e) = trainer.step() {
            // keep the last good state on disk before reporting
            snapshot(&trainer, &cfg.hash).save(&final_path)?;
            write_file(&history_path, &history_csv(&trainer.history, &cfg.hash))?;
            return Err(e.into());
        }
        if let Some(k) = block.checkpoint_interval.filter(|&k| k > 0) {
            if trainer.episode % k == 0 && !trainer.finished() {
                let path = cfg.output(&format!("checkpoint_{:06}.bin", trainer.episode))?;
                snapshot(&trainer, &cfg.hash).save(&path)?;
            }
        }
    }
    trainer.record_final()?;
    snapshot(&trainer, &cfg.hash).save(&final_path)?;
    write_file(&history_path, &history_csv(&trainer.history, &cfg.hash))?;
    Ok(TrainSummary {
        episodes: trainer.episode,
        final_loss: trainer.history.rows.last().map(|r| r.total),
        checkpoint: final_path,
    })
}

fn format_matrix(m: &gbbm::nalgebra::DMatrix<f64>, hash: &str) -> String {
    let mut out = format!("# config_hash={hash}\n");
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format!("{:.10e}", m[(i, j)])).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

/// Per-σ repeated string estimates; returns rows `(σ, rep, mmd², redraws)`.
fn repeated_estimates(
    p: &dyn ExpvalSource,
    q: &dyn ExpvalSource,
    sigmas: &[f64],
    repetitions: usize,
    strings: usize,
    max_len: Option<usize>,
    rng: &mut ChaCha8Rng,
) -> CliResult<Vec<(f64, usize, f64, usize)>> {
    if repetitions == 0 {
        return config_error("eval.repetitions must be at least 1");
    }
    let mut rows = Vec::new();
    for &s in sigmas {
        let bw = Bandwidth::new(s)?;
        for rep in 0..repetitions {
            let (v, redraws) = estimate_mmd2(p, q, bw, strings, max_len, rng)?;
            rows.push((s, rep, v, redraws));
        }
    }
    Ok(rows)
}

fn metrics_csv(rows: &[(f64, usize, f64, usize)], hash: &str) -> String {
    let mut out = format!("# config_hash={hash}\nsigma,repetition,mmd2,redraws\n");
    for (s, rep, v, r) in rows {
        let _ = writeln!(out, "{s},{rep},{v:.17e},{r}");
    }
    out
}

fn summary_csv(rows: &[(f64, usize, f64, usize)], hash: &str) -> String {
    let mut out = format!("# config_hash={hash}\nsigma,mean,std,repetitions\n");
    let mut sigmas: Vec<f64> = rows.iter().map(|r| r.0).collect();
    sigmas.dedup();
    for s in sigmas {
        let vals: Vec<f64> = rows.iter().filter(|r| r.0 == s).map(|r| r.2).collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let std = if vals.len() > 1 {
            (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        let _ = writeln!(out, "{s},{mean:.17e},{std:.17e},{}", vals.len());
    }
    out
}

pub enum EvalSource<'a> {
    Checkpoint(&'a Path),
    Samples(&'a Path),
}

pub fn eval(cfg: &LoadedConfig, source: EvalSource<'_>) -> CliResult<Vec<PathBuf>> {
    let test = cfg.test_data()?;
    let eval = &cfg.config.eval;
    let mut rng = stream_rng(cfg.config.seed, EVAL_STREAM);
    let (rows, model_cov);
    match source {
        EvalSource::Checkpoint(path) => {
            let ck = Checkpoint::load(path)?;
            if ck.train.spec.modes != test.width() {
                return config_error(format!(
                    "test set width {} does not match checkpoint modes {}",
                    test.width(),
                    ck.train.spec.modes
                ));
            }
            let state = forward(&ck.train.spec, &ck.params)?;
            let sigmas = eval.bandwidths.clone().unwrap_or_else(|| ck.train.bandwidths.clone());
            let max_len = (ck.train.kind == MeasurementKind::Threshold).then_some(ck.train.locality_cutoff);
            let model = ModelExpvals {
                state: &state,
                kind: ck.train.kind,
                locality_cutoff: ck.train.locality_cutoff,
            };
            let data = DatasetExpvals::new(&test)?;
            rows = repeated_estimates(&model, &data, &sigmas, eval.repetitions, eval.strings, max_len, &mut rng)?;
            model_cov = bit_moments(&state, ck.train.kind, ck.train.locality_cutoff)?.1;
        }
        EvalSource::Samples(path) => {
            let samples = BitDataset::load(path)?;
            if samples.width() != test.width() {
                return config_error(format!(
                    "sample width {} does not match test set width {}",
                    samples.width(),
                    test.width()
                ));
            }
            let sigmas = match (&eval.bandwidths, cfg.config.train.as_ref().and_then(|t| t.bandwidths.clone())) {
                (Some(b), _) => b.clone(),
                (None, Some(b)) => b,
                (None, None) => {
                    let base = median_heuristic(&test, 10_000, &mut stream_rng(cfg.config.seed, BANDWIDTH_STREAM))?;
                    vec![base, 2.0 * base, 4.0 * base]
                }
            };
            let p = DatasetExpvals::new(&samples)?;
            let q = DatasetExpvals::new(&test)?;
            rows = repeated_estimates(&p, &q, &sigmas, eval.repetitions, eval.strings, None, &mut rng)?;
            model_cov = empirical_bit_covariance(&samples)?;
        }
    }
    let paths = [
        ("eval_metrics.csv", metrics_csv(&rows, &cfg.hash)),
        ("eval_summary.csv", summary_csv(&rows, &cfg.hash)),
        ("model_covariance.txt", format_matrix(&model_cov, &cfg.hash)),
        ("data_covariance.txt", format_matrix(&empirical_bit_covariance(&test)?, &cfg.hash)),
    ];
    let mut written = Vec::new();
    for (name, contents) in paths {
        let p = cfg.output(name)?;
        write_file(&p, &contents)?;
        written.push(p);
    }
    Ok(written)
}

pub fn sample(
    checkpoint: &Path,
    n: usize,
    kind: Option<MeasurementKind>,
    seed: u64,
    limit: usize,
    out: &Path,
) -> CliResult<()> {
    let ck = Checkpoint::load(checkpoint)?;
    let kind = kind.unwrap_or(ck.train.kind);
    if ck.train.spec.modes > limit {
        return Err(GbbmError::ResourceLimit {
            what: "exact sampler",
            modes: ck.train.spec.modes,
            limit,
        }
        .into());
    }
    let state = forward(&ck.train.spec, &ck.params)?;
    let sampler = ChainSampler::new(&state, kind, limit)?;
    let ds = sampler.sample(n, &mut ChaCha8Rng::seed_from_u64(seed));
    save_dataset(
        ds,
        &ck.config_hash,
        &[("generator", format!("gbbm-{kind}")), ("seed", seed.to_string()), ("episode", ck.episode.to_string())],
        out,
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum BaselineKind {
    Chowliu,
    Uniform,
}

pub fn baseline(cfg: &LoadedConfig, kind: BaselineKind, samples: Option<usize>) -> CliResult<Vec<PathBuf>> {
    let test = cfg.test_data()?;
    let n = samples.unwrap_or(cfg.config.eval.baseline_samples);
    let mut rng = stream_rng(cfg.config.seed, BASELINE_STREAM);
    let mut written = Vec::new();
    let (name, generated) = match kind {
        BaselineKind::Chowliu => {
            let train = cfg.train_data()?;
            if train.width() != test.width() {
                return config_error(format!(
                    "training width {} does not match test width {}",
                    train.width(),
                    test.width()
                ));
            }
            let tree = chow_liu_fit(&train, 1.0)?;
            let mut edges = format!("# config_hash={}\n# chow-liu tree, root {}, parent child\n", cfg.hash, tree.root);
            for (a, b) in &tree.edges {
                let _ = writeln!(edges, "{a} {b}");
            }
            let p = cfg.output("chowliu_edges.txt")?;
            write_file(&p, &edges)?;
            written.push(p);
            ("chowliu", tree.sample(n, &mut rng))
        }
        // only the width of the data matters here
        BaselineKind::Uniform => ("uniform", uniform_sample(test.width(), n, &mut rng)),
    };
    let sigmas = match (&cfg.config.eval.bandwidths, cfg.config.train.as_ref().and_then(|t| t.bandwidths.clone())) {
        (Some(b), _) => b.clone(),
        (None, Some(b)) => b,
        (None, None) => {
            let base = median_heuristic(&test, 10_000, &mut stream_rng(cfg.config.seed, BANDWIDTH_STREAM))?;
            vec![base, 2.0 * base, 4.0 * base]
        }
    };
    let p = DatasetExpvals::new(&generated)?;
    let q = DatasetExpvals::new(&test)?;
    let eval = &cfg.config.eval;
    let mut erng = stream_rng(cfg.config.seed, EVAL_STREAM);
    let rows = repeated_estimates(&p, &q, &sigmas, eval.repetitions, eval.strings, None, &mut erng)?;
    let samples_path = cfg.output(&format!("{name}_samples.txt"))?;
    save_dataset(generated, &cfg.hash, &[("generator", name.to_string())], &samples_path)?;
    let metrics_path = cfg.output(&format!("{name}_metrics.csv"))?;
    write_file(&metrics_path, &metrics_csv(&rows, &cfg.hash))?;
    let summary_path = cfg.output(&format!("{name}_summary.csv"))?;
    write_file(&summary_path, &summary_csv(&rows, &cfg.hash))?;
    written.extend([samples_path, metrics_path, summary_path]);
    Ok(written)
}

pub fn inspect(path: &Path) -> CliResult<String> {
    let ck = Checkpoint::load(path)?;
    let spec = &ck.train.spec;
    let layout = match &spec.layout {
        gbbm::Layout::Clements => "clements".to_string(),
        gbbm::Layout::Graph { edges } => format!("graph ({} edges)", edges.len()),
    };
    let norm = ck.params.0.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut out = String::new();
    let _ = writeln!(out, "format version  {}", ck.version);
    let _ = writeln!(out, "config hash     {}", ck.config_hash);
    let _ = writeln!(out, "modes           {}", spec.modes);
    let _ = writeln!(out, "layers          {}", spec.layers);
    let _ = writeln!(out, "layout          {layout}");
    let _ = writeln!(out, "parameters      {}", ck.params.len());
    let _ = writeln!(out, "measurement     {}", ck.train.kind);
    let _ = writeln!(out, "bandwidths      {:?}", ck.train.bandwidths);
    let _ = writeln!(out, "episode         {} / {}", ck.episode, ck.train.episodes);
    let _ = writeln!(out, "adam steps      {}", ck.adam.t);
    let _ = writeln!(out, "param l2 norm   {norm:.6}");
    if let Some(last) = ck.history.rows.last() {
        let _ = writeln!(out, "last loss       {:.6e} (episode {})", last.total, last.episode);
    }
    let _ = writeln!(out, "train seconds   {:.2}", ck.elapsed);
    Ok(out)
}
