//! Expectation-value MMD² loss, reverse-mode gradients and the Adam loop.
//!
//! For a product Gaussian kernel on bitstrings the squared MMD between a
//! model `p` and data `q` expands over mode subsets,
//! `MMD² = Σ_A π_σ(A) (⟨O_A⟩_p − ⟨O_A⟩_q)²`, with each mode included in `A`
//! independently with probability `p_σ`. The loss here is the Monte-Carlo
//! estimate of that sum over sampled subsets.

use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ansatz::{init_params, CircuitSpec, ForwardTape, ModelParams};
use crate::datasets::BitDataset;
use crate::error::{invalid, GbbmError, Result};
use crate::gaussian::GaussianState;
use crate::observables::{
    expval, expval_grad, sample_subset, Bandwidth, MeasurementKind, OperatorString, DEFAULT_LOCALITY_CUTOFF,
};
use crate::sampler::all_parities;
use crate::walsh::{mask_to_subset, subset_to_mask};

/// Widest dataset for which every subset expectation is tabulated up front.
const TARGET_TABLE_LIMIT: usize = 20;

/// Anything that can report `⟨O_A⟩` for a subset of modes.
pub trait ExpvalSource: Sync {
    fn modes(&self) -> usize;
    fn expval(&self, subset: &[usize]) -> Result<f64>;
}

/// Empirical expectations of a dataset, tabulated when the width allows.
#[derive(Clone, Debug)]
pub struct DatasetExpvals<'a> {
    dataset: &'a BitDataset,
    table: Option<Vec<f64>>,
}

impl<'a> DatasetExpvals<'a> {
    pub fn new(dataset: &'a BitDataset) -> Result<Self> {
        if dataset.is_empty() {
            return invalid("target dataset is empty");
        }
        let table = if dataset.width() <= TARGET_TABLE_LIMIT {
            Some(dataset.parity_table()?)
        } else {
            None
        };
        Ok(Self { dataset, table })
    }
}

impl ExpvalSource for DatasetExpvals<'_> {
    fn modes(&self) -> usize {
        self.dataset.width()
    }

    fn expval(&self, subset: &[usize]) -> Result<f64> {
        match &self.table {
            Some(t) => Ok(t[subset_to_mask(subset)]),
            None => Ok(self.dataset.parity_mean(subset)),
        }
    }
}

/// Closed-form expectations of a Gaussian state under one measurement kind.
#[derive(Clone, Debug)]
pub struct ModelExpvals<'a> {
    pub state: &'a GaussianState,
    pub kind: MeasurementKind,
    pub locality_cutoff: usize,
}

impl ExpvalSource for ModelExpvals<'_> {
    fn modes(&self) -> usize {
        self.state.modes()
    }

    fn expval(&self, subset: &[usize]) -> Result<f64> {
        let s = OperatorString::new(subset.to_vec(), self.kind, self.state.modes())?;
        expval(self.state, &s, self.locality_cutoff)
    }
}

/// Sampled operator strings with their targets, grouped by bandwidth.
///
/// Repeated subsets within a group are merged; `weights[i]` is the multiplicity
/// of string `i` divided by the group size, so each group's weights sum to 1.
#[derive(Clone, Debug, PartialEq)]
pub struct LossBatch {
    pub kind: MeasurementKind,
    pub locality_cutoff: usize,
    pub bandwidths: Vec<Bandwidth>,
    pub strings: Vec<OperatorString>,
    pub targets: Vec<f64>,
    pub group: Vec<usize>,
    pub weights: Vec<f64>,
    /// Draws rejected for exceeding the locality cutoff.
    pub resampled: usize,
}

/// Splits `total` into `groups` near-equal parts, remainder to the first groups.
fn group_sizes(total: usize, groups: usize) -> Vec<usize> {
    (0..groups)
        .map(|g| total / groups + usize::from(g < total % groups))
        .collect()
}

impl LossBatch {
    /// Draws `strings_per_step` subsets split evenly over the bandwidths and
    /// looks up their targets.
    pub fn sample<R: Rng + ?Sized>(
        targets: &dyn ExpvalSource,
        kind: MeasurementKind,
        bandwidths: &[Bandwidth],
        strings_per_step: usize,
        locality_cutoff: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if bandwidths.is_empty() {
            return invalid("at least one kernel bandwidth is required");
        }
        if strings_per_step < bandwidths.len() {
            return invalid(format!(
                "{strings_per_step} strings cannot cover {} bandwidths",
                bandwidths.len()
            ));
        }
        if kind == MeasurementKind::Threshold && locality_cutoff == 0 {
            return invalid("threshold strings need a locality cutoff of at least 1");
        }
        let d = targets.modes();
        let mut batch = Self {
            kind,
            locality_cutoff,
            bandwidths: bandwidths.to_vec(),
            strings: Vec::new(),
            targets: Vec::new(),
            group: Vec::new(),
            weights: Vec::new(),
            resampled: 0,
        };
        for (g, (&bw, size)) in bandwidths.iter().zip(group_sizes(strings_per_step, bandwidths.len())).enumerate() {
            let mut counts: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
            for _ in 0..size {
                let subset = loop {
                    let s = sample_subset(bw, d, rng);
                    if kind == MeasurementKind::Threshold && s.len() > locality_cutoff {
                        batch.resampled += 1;
                        continue;
                    }
                    break s;
                };
                *counts.entry(subset).or_default() += 1;
            }
            for (subset, count) in counts {
                batch.targets.push(targets.expval(&subset)?);
                batch.strings.push(OperatorString::new(subset, kind, d)?);
                batch.group.push(g);
                batch.weights.push(count as f64 / size as f64);
            }
        }
        Ok(batch)
    }

    /// A batch from explicit strings, each weighted equally within its group.
    pub fn from_strings(
        targets: &dyn ExpvalSource,
        kind: MeasurementKind,
        bandwidths: &[Bandwidth],
        strings: Vec<(usize, Vec<usize>)>,
        locality_cutoff: usize,
    ) -> Result<Self> {
        let mut sizes = vec![0usize; bandwidths.len()];
        for (g, _) in &strings {
            if *g >= bandwidths.len() {
                return invalid(format!("bandwidth group {g} out of range"));
            }
            sizes[*g] += 1;
        }
        let d = targets.modes();
        let mut batch = Self {
            kind,
            locality_cutoff,
            bandwidths: bandwidths.to_vec(),
            strings: Vec::with_capacity(strings.len()),
            targets: Vec::with_capacity(strings.len()),
            group: Vec::with_capacity(strings.len()),
            weights: Vec::with_capacity(strings.len()),
            resampled: 0,
        };
        for (g, subset) in strings {
            batch.targets.push(targets.expval(&subset)?);
            batch.strings.push(OperatorString::new(subset, kind, d)?);
            batch.group.push(g);
            batch.weights.push(1.0 / sizes[g] as f64);
        }
        Ok(batch)
    }

    pub fn len(&self) -> usize {
        self.strings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.strings.is_empty()
    }

    fn groups_present(&self) -> Vec<bool> {
        let mut present = vec![false; self.bandwidths.len()];
        self.group.iter().for_each(|&g| present[g] = true);
        present
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossReport {
    pub per_bandwidth: Vec<f64>,
    pub total: f64,
}

fn report(batch: &LossBatch, values: &[f64]) -> LossReport {
    let mut per_bandwidth = vec![0.0; batch.bandwidths.len()];
    for i in 0..batch.len() {
        let r = batch.targets[i] - values[i];
        per_bandwidth[batch.group[i]] += batch.weights[i] * r * r;
    }
    let present = batch.groups_present();
    let n = present.iter().filter(|&&p| p).count().max(1) as f64;
    let total = per_bandwidth.iter().zip(&present).filter(|(_, &p)| p).map(|(v, _)| v).sum::<f64>() / n;
    LossReport { per_bandwidth, total }
}

/// Loss of a fixed state against a batch.
pub fn mmd2_state(state: &GaussianState, batch: &LossBatch) -> Result<LossReport> {
    let values: Vec<f64> = batch
        .strings
        .par_iter()
        .map(|s| expval(state, s, batch.locality_cutoff))
        .collect::<Result<_>>()?;
    Ok(report(batch, &values))
}

pub fn mmd2(spec: &CircuitSpec, params: &ModelParams, batch: &LossBatch) -> Result<LossReport> {
    mmd2_state(&crate::ansatz::forward(spec, params)?, batch)
}

/// Loss and its gradient with respect to every circuit parameter.
pub fn loss_and_gradient(spec: &CircuitSpec, params: &ModelParams, batch: &LossBatch) -> Result<(LossReport, Vec<f64>)> {
    let tape = ForwardTape::record(spec, params)?;
    let state = tape.state();
    let grads: Vec<_> = batch
        .strings
        .par_iter()
        .map(|s| expval_grad(state, s, batch.locality_cutoff))
        .collect::<Result<_>>()?;
    let values: Vec<f64> = grads.iter().map(|g| g.value).collect();
    let loss = report(batch, &values);

    let present = batch.groups_present();
    let n_groups = present.iter().filter(|&&p| p).count().max(1) as f64;
    let n = 2 * spec.modes;
    let mut mean_bar = DVector::zeros(n);
    let mut cov_bar = DMatrix::zeros(n, n);
    for (i, g) in grads.iter().enumerate() {
        let dl_dm = -2.0 * batch.weights[i] * (batch.targets[i] - g.value) / n_groups;
        g.scatter(dl_dm, &mut mean_bar, &mut cov_bar);
    }
    Ok((loss, tape.backward(&mean_bar, &cov_bar)))
}

/// Central differences of the total loss; a slow reference for the analytic gradient.
pub fn finite_difference_gradient(
    spec: &CircuitSpec,
    params: &ModelParams,
    batch: &LossBatch,
    step: f64,
) -> Result<Vec<f64>> {
    let mut probe = params.clone();
    let mut grad = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let x = params.0[i];
        probe.0[i] = x + step;
        let up = mmd2(spec, &probe, batch)?.total;
        probe.0[i] = x - step;
        let down = mmd2(spec, &probe, batch)?.total;
        probe.0[i] = x;
        grad.push((up - down) / (2.0 * step));
    }
    Ok(grad)
}

/// Median pairwise Hamming distance over `pair_budget` random pairs, halved.
pub fn median_heuristic<R: Rng + ?Sized>(dataset: &BitDataset, pair_budget: usize, rng: &mut R) -> Result<f64> {
    let n = dataset.len();
    if n < 2 {
        return invalid("median heuristic needs at least two samples");
    }
    if pair_budget == 0 {
        return invalid("median heuristic needs a positive pair budget");
    }
    let mut dists: Vec<usize> = (0..pair_budget)
        .map(|_| {
            let a = rng.random_range(0..n);
            let mut b = rng.random_range(0..n - 1);
            if b >= a {
                b += 1;
            }
            dataset.hamming_distance(a, b)
        })
        .collect();
    dists.sort_unstable();
    let mid = dists.len() / 2;
    let median = if dists.len() % 2 == 1 {
        dists[mid] as f64
    } else {
        (dists[mid - 1] + dists[mid]) as f64 / 2.0
    };
    if median == 0.0 {
        return Err(GbbmError::ZeroDistance);
    }
    Ok(median / 2.0)
}

/// `{σ, 2σ, 4σ}`.
pub fn default_bandwidths(base: f64) -> Vec<f64> {
    vec![base, 2.0 * base, 4.0 * base]
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }
}

/// One Adam update in place. Parameters and state are untouched on error.
pub fn adam_step(
    params: &mut [f64],
    gradient: &[f64],
    state: &mut AdamState,
    learning_rate: f64,
    config: &AdamConfig,
) -> Result<()> {
    if params.len() != gradient.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return invalid(format!(
            "Adam length mismatch: params {}, gradient {}, state {}",
            params.len(),
            gradient.len(),
            state.m.len()
        ));
    }
    if let Some(i) = gradient.iter().position(|g| !g.is_finite()) {
        return Err(GbbmError::Diverged(format!("gradient entry {i} is {}", gradient[i])));
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - config.beta1.powi(t);
    let c2 = 1.0 - config.beta2.powi(t);
    for i in 0..params.len() {
        let g = gradient[i];
        state.m[i] = config.beta1 * state.m[i] + (1.0 - config.beta1) * g;
        state.v[i] = config.beta2 * state.v[i] + (1.0 - config.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= learning_rate * m_hat / (v_hat.sqrt() + config.epsilon);
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// `lr · (1 + cos(π·e/E))/2` over `E` episodes.
    Cosine,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub spec: CircuitSpec,
    #[serde(default = "default_kind")]
    pub kind: MeasurementKind,
    pub bandwidths: Vec<f64>,
    pub strings_per_step: usize,
    pub learning_rate: f64,
    /// `0` evaluates the initial parameters only.
    pub episodes: usize,
    pub seed: u64,
    #[serde(default = "default_true")]
    pub resample_strings_each_step: bool,
    #[serde(default = "default_eval_interval")]
    pub eval_interval: usize,
    #[serde(default = "default_cutoff")]
    pub locality_cutoff: usize,
    #[serde(default)]
    pub schedule: LrSchedule,
    #[serde(default)]
    pub adam: AdamConfig,
}

fn default_kind() -> MeasurementKind {
    MeasurementKind::Parity
}
fn default_true() -> bool {
    true
}
fn default_eval_interval() -> usize {
    1
}
fn default_cutoff() -> usize {
    DEFAULT_LOCALITY_CUTOFF
}

impl TrainConfig {
    pub fn new(spec: CircuitSpec, bandwidths: Vec<f64>, strings_per_step: usize, learning_rate: f64, episodes: usize, seed: u64) -> Self {
        Self {
            spec,
            kind: MeasurementKind::Parity,
            bandwidths,
            strings_per_step,
            learning_rate,
            episodes,
            seed,
            resample_strings_each_step: true,
            eval_interval: 1,
            locality_cutoff: DEFAULT_LOCALITY_CUTOFF,
            schedule: LrSchedule::Constant,
            adam: AdamConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        if self.strings_per_step == 0 {
            return invalid("strings_per_step must be at least 1");
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return invalid(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.eval_interval == 0 {
            return invalid("eval_interval must be at least 1");
        }
        self.bandwidth_list().map(|_| ())
    }

    pub fn bandwidth_list(&self) -> Result<Vec<Bandwidth>> {
        if self.bandwidths.is_empty() {
            return invalid("at least one kernel bandwidth is required");
        }
        self.bandwidths.iter().map(|&s| Bandwidth::new(s)).collect()
    }

    pub fn learning_rate_at(&self, episode: usize) -> f64 {
        match self.schedule {
            LrSchedule::Constant => self.learning_rate,
            LrSchedule::Cosine => {
                let frac = episode as f64 / self.episodes.max(1) as f64;
                self.learning_rate * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HistoryRow {
    pub episode: usize,
    pub seconds: f64,
    pub per_bandwidth: Vec<f64>,
    pub total: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    pub sigmas: Vec<f64>,
    pub rows: Vec<HistoryRow>,
}

impl TrainHistory {
    pub fn csv_header(&self) -> String {
        let mut cols = vec!["episode".to_string(), "seconds".to_string()];
        cols.extend(self.sigmas.iter().map(|s| format!("loss_sigma_{s}")));
        cols.push("total".into());
        cols.join(",")
    }

    pub fn csv_row(row: &HistoryRow) -> String {
        let mut cols = vec![row.episode.to_string(), format!("{:.6}", row.seconds)];
        cols.extend(row.per_bandwidth.iter().map(|v| format!("{v:.17e}")));
        cols.push(format!("{:.17e}", row.total));
        cols.join(",")
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.csv_header();
        out.push('\n');
        for r in &self.rows {
            out.push_str(&Self::csv_row(r));
            out.push('\n');
        }
        out
    }
}

/// Resumable optimization state.
///
/// Parameters are initialized from `seed`; string batches come from a separate
/// ChaCha stream of the same seed so the two never interact. In fixed-batch
/// mode a third stream draws the single batch once.
pub struct Trainer<'a> {
    pub config: TrainConfig,
    targets: DatasetExpvals<'a>,
    bandwidths: Vec<Bandwidth>,
    pub params: ModelParams,
    pub adam: AdamState,
    pub rng: ChaCha8Rng,
    pub episode: usize,
    pub history: TrainHistory,
    fixed_batch: Option<LossBatch>,
    /// Wall-clock seconds spent in [`Trainer::step`], carried across resumes.
    pub elapsed: f64,
}

const STRING_STREAM: u64 = 1;
const FIXED_BATCH_STREAM: u64 = 2;

impl<'a> Trainer<'a> {
    pub fn new(config: TrainConfig, dataset: &'a BitDataset) -> Result<Self> {
        config.validate()?;
        if dataset.width() != config.spec.modes {
            return invalid(format!(
                "dataset width {} does not match circuit modes {}",
                dataset.width(),
                config.spec.modes
            ));
        }
        let params = init_params(&config.spec, config.seed);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(STRING_STREAM);
        let adam = AdamState::new(params.len());
        Self::assemble(config, dataset, params, adam, rng, 0)
    }

    /// Continues from saved state; `rng` must be the saved string stream.
    pub fn resume(
        config: TrainConfig,
        dataset: &'a BitDataset,
        params: ModelParams,
        adam: AdamState,
        rng: ChaCha8Rng,
        episode: usize,
    ) -> Result<Self> {
        config.validate()?;
        params.check(&config.spec)?;
        if adam.m.len() != params.len() || adam.v.len() != params.len() {
            return invalid("optimizer state length does not match the parameter vector");
        }
        if dataset.width() != config.spec.modes {
            return invalid(format!(
                "dataset width {} does not match circuit modes {}",
                dataset.width(),
                config.spec.modes
            ));
        }
        Self::assemble(config, dataset, params, adam, rng, episode)
    }

    fn assemble(
        config: TrainConfig,
        dataset: &'a BitDataset,
        params: ModelParams,
        adam: AdamState,
        rng: ChaCha8Rng,
        episode: usize,
    ) -> Result<Self> {
        let targets = DatasetExpvals::new(dataset)?;
        let bandwidths = config.bandwidth_list()?;
        let fixed_batch = if config.resample_strings_each_step {
            None
        } else {
            let mut brng = ChaCha8Rng::seed_from_u64(config.seed);
            brng.set_stream(FIXED_BATCH_STREAM);
            Some(LossBatch::sample(
                &targets,
                config.kind,
                &bandwidths,
                config.strings_per_step,
                config.locality_cutoff,
                &mut brng,
            )?)
        };
        let history = TrainHistory {
            sigmas: config.bandwidths.clone(),
            rows: Vec::new(),
        };
        Ok(Self {
            config,
            targets,
            bandwidths,
            params,
            adam,
            rng,
            episode,
            history,
            fixed_batch,
            elapsed: 0.0,
        })
    }

    pub fn finished(&self) -> bool {
        self.episode >= self.config.episodes
    }

    fn batch(&self, rng: &mut ChaCha8Rng) -> Result<LossBatch> {
        match &self.fixed_batch {
            Some(b) => Ok(b.clone()),
            None => LossBatch::sample(
                &self.targets,
                self.config.kind,
                &self.bandwidths,
                self.config.strings_per_step,
                self.config.locality_cutoff,
                rng,
            ),
        }
    }

    /// One optimization step. On error nothing is modified except that the
    /// string stream may have advanced.
    pub fn step(&mut self) -> Result<LossReport> {
        let start = Instant::now();
        let mut rng = self.rng.clone();
        let batch = self.batch(&mut rng)?;
        let (loss, grad) = loss_and_gradient(&self.config.spec, &self.params, &batch)?;
        if !loss.total.is_finite() {
            return Err(GbbmError::Diverged(format!("loss is {} at episode {}", loss.total, self.episode)));
        }
        let mut params = self.params.clone();
        let mut adam = self.adam.clone();
        adam_step(
            &mut params.0,
            &grad,
            &mut adam,
            self.config.learning_rate_at(self.episode),
            &self.config.adam,
        )?;
        self.elapsed += start.elapsed().as_secs_f64();
        if self.episode % self.config.eval_interval == 0 {
            self.history.rows.push(HistoryRow {
                episode: self.episode,
                seconds: self.elapsed,
                per_bandwidth: loss.per_bandwidth.clone(),
                total: loss.total,
            });
        }
        self.params = params;
        self.adam = adam;
        self.rng = rng;
        self.episode += 1;
        Ok(loss)
    }

    /// Loss of the current parameters on a fresh batch, without advancing the
    /// training stream.
    pub fn evaluate(&self) -> Result<LossReport> {
        let mut rng = self.rng.clone();
        let batch = self.batch(&mut rng)?;
        mmd2(&self.config.spec, &self.params, &batch)
    }

    /// Appends a history row for the current parameters.
    pub fn record_final(&mut self) -> Result<()> {
        if self.history.rows.last().is_some_and(|r| r.episode == self.episode) {
            return Ok(());
        }
        let loss = self.evaluate()?;
        self.history.rows.push(HistoryRow {
            episode: self.episode,
            seconds: self.elapsed,
            per_bandwidth: loss.per_bandwidth,
            total: loss.total,
        });
        Ok(())
    }
}

/// Runs the full loop and returns final parameters and history.
pub fn train(config: TrainConfig, dataset: &BitDataset) -> Result<(ModelParams, TrainHistory)> {
    let mut trainer = Trainer::new(config, dataset)?;
    while !trainer.finished() {
        trainer.step()?;
    }
    trainer.record_final()?;
    Ok((trainer.params, trainer.history))
}

/// Sampled MMD² estimate between two sources at one bandwidth, with
/// `strings` subsets (locality-violating threshold draws are redrawn).
/// Returns the estimate and the number of redraws.
pub fn estimate_mmd2<R: Rng + ?Sized>(
    p: &dyn ExpvalSource,
    q: &dyn ExpvalSource,
    bandwidth: Bandwidth,
    strings: usize,
    max_len: Option<usize>,
    rng: &mut R,
) -> Result<(f64, usize)> {
    if p.modes() != q.modes() {
        return invalid(format!("mode counts differ: {} vs {}", p.modes(), q.modes()));
    }
    if strings == 0 {
        return invalid("at least one string per estimate is required");
    }
    let d = p.modes();
    let mut redraws = 0;
    let subsets: Vec<Vec<usize>> = (0..strings)
        .map(|_| loop {
            let s = sample_subset(bandwidth, d, rng);
            match max_len {
                Some(m) if s.len() > m => redraws += 1,
                _ => break s,
            }
        })
        .collect();
    let terms: Vec<f64> = subsets
        .par_iter()
        .map(|s| Ok((p.expval(s)? - q.expval(s)?).powi(2)))
        .collect::<Result<_>>()?;
    Ok((terms.iter().sum::<f64>() / strings as f64, redraws))
}

/// `Σ_A π_σ(A) (a_A − b_A)²` over subset-indexed tables. With `max_len`, only
/// subsets up to that size enter and the weights are renormalized over them.
pub fn table_mmd2(a: &[f64], b: &[f64], modes: usize, bandwidth: Bandwidth, max_len: Option<usize>) -> Result<f64> {
    if a.len() != 1 << modes || b.len() != 1 << modes {
        return invalid("subset tables must have 2^d entries");
    }
    let mut sum = 0.0;
    let mut norm = 0.0;
    for mask in 0..a.len() {
        let len = mask.count_ones() as usize;
        if max_len.is_some_and(|m| len > m) {
            continue;
        }
        let w = bandwidth.subset_weight(modes, len);
        norm += w;
        sum += w * (a[mask] - b[mask]).powi(2);
    }
    Ok(sum / norm)
}

/// `⟨O_A⟩` of every subset up to `max_len` (others left at zero).
pub fn model_table(state: &GaussianState, kind: MeasurementKind, max_len: usize) -> Result<Vec<f64>> {
    let d = state.modes();
    if d > TARGET_TABLE_LIMIT {
        return Err(GbbmError::ResourceLimit {
            what: "subset expectation table",
            modes: d,
            limit: TARGET_TABLE_LIMIT,
        });
    }
    if kind == MeasurementKind::Parity && max_len >= d {
        return all_parities(state);
    }
    let src = ModelExpvals {
        state,
        kind,
        locality_cutoff: max_len,
    };
    (0..1usize << d)
        .into_par_iter()
        .map(|mask| {
            if mask.count_ones() as usize > max_len {
                Ok(0.0)
            } else {
                src.expval(&mask_to_subset(mask))
            }
        })
        .collect()
}

/// Exact MMD² of a model against a dataset at desk scale.
pub fn exact_mmd2(
    state: &GaussianState,
    kind: MeasurementKind,
    dataset: &BitDataset,
    bandwidth: Bandwidth,
    max_len: Option<usize>,
) -> Result<f64> {
    let d = state.modes();
    if dataset.width() != d {
        return invalid(format!("dataset width {} does not match model modes {d}", dataset.width()));
    }
    let model = model_table(state, kind, max_len.unwrap_or(d))?;
    table_mmd2(&model, &dataset.parity_table()?, d, bandwidth, max_len)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::sample_parity;

    fn bw(s: f64) -> Bandwidth {
        Bandwidth::new(s).unwrap()
    }

    #[test]
    fn median_heuristic_cases() {
        let ds = BitDataset::from_rows(12, &[vec![1; 12], {
            let mut r = vec![1; 12];
            r[..10].iter_mut().for_each(|b| *b = 0);
            r
        }])
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(median_heuristic(&ds, 101, &mut rng).unwrap(), 5.0);
        let same = BitDataset::from_rows(3, &vec![vec![1, 0, 1]; 5]).unwrap();
        assert!(matches!(median_heuristic(&same, 50, &mut rng), Err(GbbmError::ZeroDistance)));
        assert_eq!(default_bandwidths(5.0), vec![5.0, 10.0, 20.0]);
    }

    #[test]
    fn median_heuristic_bernoulli_scale() {
        // p(1−p)·2·d = 36 with d = 200 ⇒ p ≈ 0.1; σ_base should be ≈ 18
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<Vec<u8>> = (0..500)
            .map(|_| (0..200).map(|_| u8::from(rng.random::<f64>() < 0.1)).collect())
            .collect();
        let ds = BitDataset::from_rows(200, &rows).unwrap();
        let s = median_heuristic(&ds, 2000, &mut rng).unwrap();
        assert!((15.0..=25.0).contains(&s), "{s}");
    }

    #[test]
    fn single_string_loss() {
        let spec = CircuitSpec::clements(2, 1).unwrap();
        let params = init_params(&spec, 5);
        let state = crate::ansatz::forward(&spec, &params).unwrap();
        let ds = BitDataset::from_rows(2, &[vec![0, 0]]).unwrap();
        let t = DatasetExpvals::new(&ds).unwrap();
        let batch = LossBatch::from_strings(&t, MeasurementKind::Parity, &[bw(1.0)], vec![(0, vec![0, 1])], 7).unwrap();
        assert_eq!(batch.targets, vec![1.0]);
        let m = crate::observables::parity_expval(&state, &[0, 1]).unwrap();
        let l = mmd2(&spec, &params, &batch).unwrap();
        assert!((l.total - (1.0 - m).powi(2)).abs() < 1e-15);
    }

    #[test]
    fn zero_residual_is_stationary() {
        let spec = CircuitSpec::clements(3, 2).unwrap();
        let params = init_params(&spec, 9);
        let state = crate::ansatz::forward(&spec, &params).unwrap();
        let model = ModelExpvals {
            state: &state,
            kind: MeasurementKind::Parity,
            locality_cutoff: 7,
        };
        let strings = vec![(0, vec![0]), (0, vec![1, 2]), (1, vec![0, 1, 2])];
        let batch = LossBatch::from_strings(&model, MeasurementKind::Parity, &[bw(1.0), bw(3.0)], strings, 7).unwrap();
        let (loss, grad) = loss_and_gradient(&spec, &params, &batch).unwrap();
        assert!(loss.total.abs() < 1e-28);
        assert!(grad.iter().all(|g| g.abs() < 1e-14));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let spec = CircuitSpec::clements(3, 2).unwrap();
        let mut params = init_params(&spec, 4);
        params.0.iter_mut().take(3).for_each(|a| *a += 0.3);
        let ds = BitDataset::from_rows(3, &[vec![1, 0, 1], vec![0, 0, 1], vec![1, 1, 1]]).unwrap();
        let t = DatasetExpvals::new(&ds).unwrap();
        for kind in [MeasurementKind::Parity, MeasurementKind::Threshold] {
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let batch = LossBatch::sample(&t, kind, &[bw(0.8), bw(2.0)], 12, 7, &mut rng).unwrap();
            let (_, g) = loss_and_gradient(&spec, &params, &batch).unwrap();
            let fd = finite_difference_gradient(&spec, &params, &batch, 1e-5).unwrap();
            for (a, b) in g.iter().zip(&fd) {
                assert!((a - b).abs() <= 1e-7 + 1e-5 * b.abs(), "{kind}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn adam_first_step_and_noops() {
        let cfg = AdamConfig::default();
        let mut p = vec![1.0, -2.0, 0.5];
        let mut st = AdamState::new(3);
        adam_step(&mut p, &[0.0; 3], &mut st, 0.1, &cfg).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
        let mut st = AdamState::new(3);
        adam_step(&mut p, &[1.0, -3.0, 2.0], &mut st, 0.0, &cfg).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
        let mut st = AdamState::new(3);
        let g = [1.0, -3.0, 2.0];
        adam_step(&mut p, &g, &mut st, 0.01, &cfg).unwrap();
        for (i, (&x, &g)) in p.iter().zip(&g).enumerate() {
            let before = [1.0, -2.0, 0.5][i];
            assert!((x - (before - 0.01 * g.signum())).abs() < 1e-9);
        }
        let mut st = AdamState::new(3);
        let before = p.clone();
        assert!(matches!(
            adam_step(&mut p, &[1.0, f64::NAN, 0.0], &mut st, 0.1, &cfg),
            Err(GbbmError::Diverged(_))
        ));
        assert_eq!(p, before);
        assert_eq!(st.t, 0);
    }

    #[test]
    fn batch_grouping_and_threshold_cutoff() {
        let ds = BitDataset::from_rows(10, &[vec![0; 10], vec![1; 10]]).unwrap();
        let t = DatasetExpvals::new(&ds).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let batch = LossBatch::sample(&t, MeasurementKind::Threshold, &[bw(0.3), bw(5.0)], 301, 2, &mut rng).unwrap();
        assert!(batch.strings.iter().all(|s| s.len() <= 2));
        assert!(batch.resampled > 0);
        for g in 0..2 {
            let w: f64 = (0..batch.len()).filter(|&i| batch.group[i] == g).map(|i| batch.weights[i]).sum();
            assert!((w - 1.0).abs() < 1e-12);
        }
        assert!(batch.targets.iter().all(|t| (-1.0..=1.0).contains(t)));
        assert!(LossBatch::sample(&t, MeasurementKind::Parity, &[bw(1.0), bw(2.0)], 1, 7, &mut rng).is_err());
    }

    #[test]
    fn eval_only_and_determinism() {
        let spec = CircuitSpec::clements(3, 1).unwrap();
        let ds = BitDataset::from_rows(3, &[vec![1, 0, 0], vec![0, 1, 1], vec![0, 0, 0]]).unwrap();
        let cfg = TrainConfig::new(spec.clone(), vec![1.0], 16, 0.01, 0, 3);
        let (p, h) = train(cfg, &ds).unwrap();
        assert_eq!(p, init_params(&spec, 3));
        assert_eq!(h.rows.len(), 1);

        let cfg = TrainConfig::new(spec, vec![1.0, 2.0], 16, 0.01, 5, 3);
        let (p1, h1) = train(cfg.clone(), &ds).unwrap();
        let (p2, h2) = train(cfg, &ds).unwrap();
        assert_eq!(p1, p2);
        let losses = |h: &TrainHistory| h.rows.iter().map(|r| (r.episode, r.total.to_bits())).collect::<Vec<_>>();
        assert_eq!(losses(&h1), losses(&h2));
        assert_eq!(h1.rows.len(), 6);
        assert!(h1.csv_header().starts_with("episode,seconds,loss_sigma_1,loss_sigma_2,total"));
    }

    #[test]
    fn resume_matches_uninterrupted() {
        let spec = CircuitSpec::clements(3, 1).unwrap();
        let ds = BitDataset::from_rows(3, &[vec![1, 0, 0], vec![0, 1, 1], vec![1, 1, 0]]).unwrap();
        let cfg = TrainConfig::new(spec, vec![1.5], 20, 0.02, 6, 11);
        let (full, _) = train(cfg.clone(), &ds).unwrap();
        let mut a = Trainer::new(cfg.clone(), &ds).unwrap();
        for _ in 0..3 {
            a.step().unwrap();
        }
        let mut b = Trainer::resume(cfg, &ds, a.params.clone(), a.adam.clone(), a.rng.clone(), a.episode).unwrap();
        while !b.finished() {
            b.step().unwrap();
        }
        assert_eq!(b.params, full);
    }

    #[test]
    fn row_order_invariance() {
        let spec = CircuitSpec::clements(3, 1).unwrap();
        let rows = vec![vec![1, 0, 0], vec![0, 1, 1], vec![1, 1, 0], vec![0, 0, 1]];
        let mut rev = rows.clone();
        rev.reverse();
        let cfg = TrainConfig::new(spec, vec![1.0], 8, 0.05, 4, 2);
        let a = train(cfg.clone(), &BitDataset::from_rows(3, &rows).unwrap()).unwrap().0;
        let b = train(cfg, &BitDataset::from_rows(3, &rev).unwrap()).unwrap().0;
        assert_eq!(a, b);
    }

    #[test]
    fn self_consistent_estimate_is_small() {
        let spec = CircuitSpec::clements(4, 1).unwrap();
        let params = init_params(&spec, 6);
        let state = crate::ansatz::forward(&spec, &params).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 20_000;
        let ds = sample_parity(&state, n, &mut rng, 20).unwrap();
        let t = DatasetExpvals::new(&ds).unwrap();
        let batch = LossBatch::sample(&t, MeasurementKind::Parity, &[bw(1.0)], 4000, 7, &mut rng).unwrap();
        let l = mmd2_state(&state, &batch).unwrap().total;
        assert!(l < (3.0 / (n as f64).sqrt()).powi(2), "{l}");
        let exact = exact_mmd2(&state, MeasurementKind::Parity, &ds, bw(1.0), None).unwrap();
        assert!(exact < 9.0 / n as f64);
    }

    #[test]
    fn estimate_converges_to_exact() {
        let spec = CircuitSpec::clements(4, 1).unwrap();
        let mut params = init_params(&spec, 2);
        params.0.iter_mut().for_each(|v| *v *= 4.0);
        let state = crate::ansatz::forward(&spec, &params).unwrap();
        let ds = BitDataset::from_rows(4, &[vec![0, 0, 0, 1], vec![1, 1, 0, 0]]).unwrap();
        let model = ModelExpvals {
            state: &state,
            kind: MeasurementKind::Parity,
            locality_cutoff: 7,
        };
        let data = DatasetExpvals::new(&ds).unwrap();
        let exact = exact_mmd2(&state, MeasurementKind::Parity, &ds, bw(2.0), None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (est, redraws) = estimate_mmd2(&model, &data, bw(2.0), 200_000, None, &mut rng).unwrap();
        assert_eq!(redraws, 0);
        assert!((est - exact).abs() < 0.01 * exact.max(0.01), "{est} vs {exact}");
    }
}
