//! Bitstring datasets: storage, the text file format, synthetic generators
//! and empirical diagnostics.
//!
//! File format: one sample per line made of `0`/`1` characters. Lines starting
//! with `#` carry `key=value` metadata (`width`, `generator`, `seed`, `params`,
//! …). An empty file is only valid when a `# width=` header is present.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, GbbmError, Result};
use crate::walsh::fwht;

/// `N × d` binary samples packed 64 per word.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BitDataset {
    width: usize,
    words: usize,
    data: Vec<u64>,
    rows: usize,
    pub metadata: BTreeMap<String, String>,
}

impl BitDataset {
    pub fn new(width: usize) -> Self {
        Self {
            width,
            words: width.div_ceil(64).max(1),
            data: Vec::new(),
            rows: 0,
            metadata: BTreeMap::new(),
        }
    }

    pub fn from_rows(width: usize, rows: &[Vec<u8>]) -> Result<Self> {
        let mut ds = Self::new(width);
        for row in rows {
            ds.push_row(row)?;
        }
        Ok(ds)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    pub fn push_row(&mut self, bits: &[u8]) -> Result<()> {
        if bits.len() != self.width {
            return invalid(format!("row has {} bits, dataset width is {}", bits.len(), self.width));
        }
        let start = self.data.len();
        self.data.resize(start + self.words, 0);
        for (i, &b) in bits.iter().enumerate() {
            match b {
                0 => {}
                1 => self.data[start + i / 64] |= 1 << (i % 64),
                other => {
                    self.data.truncate(start);
                    return invalid(format!("bit value {other} is not 0 or 1"));
                }
            }
        }
        self.rows += 1;
        Ok(())
    }

    /// Appends a row given as a bitmask (bit `i` ↔ column `i`); `width ≤ 64`.
    pub(crate) fn push_mask(&mut self, mask: u64) {
        debug_assert!(self.width <= 64);
        self.data.push(mask);
        self.rows += 1;
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        ((self.data[row * self.words + col / 64] >> (col % 64)) & 1) as u8
    }

    pub fn row(&self, row: usize) -> Vec<u8> {
        (0..self.width).map(|c| self.get(row, c)).collect()
    }

    pub fn rows(&self) -> impl Iterator<Item = Vec<u8>> + '_ {
        (0..self.rows).map(|r| self.row(r))
    }

    pub(crate) fn row_words(&self, row: usize) -> &[u64] {
        &self.data[row * self.words..(row + 1) * self.words]
    }

    /// Row as an outcome index; only meaningful for `width ≤ 64`.
    pub fn row_index(&self, row: usize) -> usize {
        self.data[row * self.words] as usize
    }

    pub fn hamming_weight(&self, row: usize) -> usize {
        self.row_words(row).iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn hamming_distance(&self, a: usize, b: usize) -> usize {
        self.row_words(a)
            .iter()
            .zip(self.row_words(b))
            .map(|(x, y)| (x ^ y).count_ones() as usize)
            .sum()
    }

    /// Packs a column subset into a row-aligned mask.
    pub(crate) fn subset_mask(&self, subset: &[usize]) -> Vec<u64> {
        let mut mask = vec![0u64; self.words];
        for &i in subset {
            mask[i / 64] |= 1 << (i % 64);
        }
        mask
    }

    /// Mean of `(−1)^{|x_A|}`; `1` for an empty dataset or subset.
    pub(crate) fn parity_mean(&self, subset: &[usize]) -> f64 {
        if self.rows == 0 || subset.is_empty() {
            return 1.0;
        }
        let mask = self.subset_mask(subset);
        let odd: usize = (0..self.rows)
            .filter(|&r| {
                let ones: u32 = self.row_words(r).iter().zip(&mask).map(|(w, m)| (w & m).count_ones()).sum();
                ones % 2 == 1
            })
            .count();
        1.0 - 2.0 * odd as f64 / self.rows as f64
    }

    /// Empirical `⟨O_A⟩` for all `2^d` subsets at once (indexed by mask).
    pub fn parity_table(&self) -> Result<Vec<f64>> {
        if self.width > 24 {
            return Err(GbbmError::ResourceLimit {
                what: "full parity table",
                modes: self.width,
                limit: 24,
            });
        }
        if self.rows == 0 {
            return invalid("parity table of an empty dataset");
        }
        let mut hist = vec![0.0; 1 << self.width];
        for r in 0..self.rows {
            hist[self.row_index(r)] += 1.0;
        }
        fwht(&mut hist);
        let n = self.rows as f64;
        hist.iter_mut().for_each(|v| *v /= n);
        Ok(hist)
    }

    pub fn bit_means(&self) -> DVector<f64> {
        let n = self.rows.max(1) as f64;
        DVector::from_iterator(
            self.width,
            (0..self.width).map(|c| (0..self.rows).map(|r| self.get(r, c) as f64).sum::<f64>() / n),
        )
    }

    /// First `ratio·N` rows and the remainder.
    pub fn split(&self, ratio: f64) -> (Self, Self) {
        let cut = ((self.rows as f64) * ratio).round() as usize;
        let cut = cut.min(self.rows);
        let mut a = self.clone();
        let mut b = self.clone();
        a.data.truncate(cut * self.words);
        a.rows = cut;
        b.data.drain(..cut * self.words);
        b.rows = self.rows - cut;
        (a, b)
    }

    pub fn extend(&mut self, other: &BitDataset) -> Result<()> {
        if other.width != self.width {
            return invalid(format!("cannot concatenate widths {} and {}", self.width, other.width));
        }
        self.data.extend_from_slice(&other.data);
        self.rows += other.rows;
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut metadata = BTreeMap::new();
        let mut width: Option<usize> = None;
        let mut ds: Option<BitDataset> = None;
        for (lineno, line) in text.lines().enumerate() {
            let line_no = lineno + 1;
            let line = line.trim_end_matches('\r');
            if let Some(header) = line.strip_prefix('#') {
                if let Some((k, v)) = header.trim().split_once('=') {
                    let (k, v) = (k.trim().to_string(), v.trim().to_string());
                    if k == "width" {
                        let w = v.parse::<usize>().map_err(|_| GbbmError::Parse {
                            line: line_no,
                            msg: format!("invalid width '{v}'"),
                        })?;
                        width = Some(w);
                    }
                    metadata.insert(k, v);
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let bits = line
                .chars()
                .map(|c| match c {
                    '0' => Ok(0u8),
                    '1' => Ok(1u8),
                    other => Err(GbbmError::Parse {
                        line: line_no,
                        msg: format!("unexpected character '{other}'"),
                    }),
                })
                .collect::<Result<Vec<u8>>>()?;
            let w = *width.get_or_insert(bits.len());
            let target = ds.get_or_insert_with(|| BitDataset::new(w));
            if bits.len() != w {
                return Err(GbbmError::Parse {
                    line: line_no,
                    msg: format!("row has {} bits, expected {w}", bits.len()),
                });
            }
            target.push_row(&bits).map_err(|e| GbbmError::Parse {
                line: line_no,
                msg: e.to_string(),
            })?;
        }
        let mut ds = match (ds, width) {
            (Some(ds), _) => ds,
            (None, Some(w)) => BitDataset::new(w),
            (None, None) => {
                return Err(GbbmError::Parse {
                    line: 1,
                    msg: "empty dataset without a '# width=' header".into(),
                })
            }
        };
        ds.metadata = metadata;
        Ok(ds)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Text serialization; `width` is always written first.
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.rows * (self.width + 1) + 64);
        let _ = writeln!(out, "# width={}", self.width);
        for (k, v) in &self.metadata {
            if k != "width" {
                let _ = writeln!(out, "# {k}={v}");
            }
        }
        for r in 0..self.rows {
            for c in 0..self.width {
                out.push(if self.get(r, c) == 1 { '1' } else { '0' });
            }
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

/// Plug-in covariance `E[x_i x_j] − E[x_i]E[x_j]` of the empirical distribution.
pub fn empirical_bit_covariance(dataset: &BitDataset) -> Result<DMatrix<f64>> {
    if dataset.len() < 2 {
        return invalid("bit covariance needs at least two samples");
    }
    let d = dataset.width();
    let n = dataset.len() as f64;
    let means = dataset.bit_means();
    let mut second = DMatrix::zeros(d, d);
    for r in 0..dataset.len() {
        let ones: Vec<usize> = (0..d).filter(|&c| dataset.get(r, c) == 1).collect();
        for &i in &ones {
            for &j in &ones {
                second[(i, j)] += 1.0;
            }
        }
    }
    second /= n;
    Ok(second - &means * means.transpose())
}

/// Counts of samples per Hamming weight `0…d`.
pub fn hamming_histogram(dataset: &BitDataset) -> Vec<usize> {
    let mut hist = vec![0; dataset.width() + 1];
    for r in 0..dataset.len() {
        hist[dataset.hamming_weight(r)] += 1;
    }
    hist
}

/// Normalizes grayscale values to `[0, 1]` and thresholds at `0.5`.
pub fn binarize_grayscale(values: &[f64]) -> Vec<u8> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    values
        .iter()
        .map(|&v| {
            let x = if span > 0.0 { (v - lo) / span } else { 0.0 };
            u8::from(x >= 0.5)
        })
        .collect()
}

/// One Game-of-Life generation. `wrap` selects a torus instead of a dead border.
pub fn life_step(grid: &[u8], rows: usize, cols: usize, wrap: bool) -> Vec<u8> {
    let mut next = vec![0u8; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            let mut live = 0;
            for dr in [-1i64, 0, 1] {
                for dc in [-1i64, 0, 1] {
                    if dr == 0 && dc == 0 {
                        continue;
                    }
                    let (mut nr, mut nc) = (r as i64 + dr, c as i64 + dc);
                    if wrap {
                        nr = nr.rem_euclid(rows as i64);
                        nc = nc.rem_euclid(cols as i64);
                    } else if nr < 0 || nc < 0 || nr >= rows as i64 || nc >= cols as i64 {
                        continue;
                    }
                    live += grid[nr as usize * cols + nc as usize];
                }
            }
            let alive = grid[r * cols + c] == 1;
            next[r * cols + c] = u8::from(live == 3 || (alive && live == 2));
        }
    }
    next
}

/// Cellular-automaton settings for [`gol_generate`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LifeConfig {
    pub rows: usize,
    pub cols: usize,
    pub steps: usize,
    pub wrap: bool,
}

impl Default for LifeConfig {
    fn default() -> Self {
        Self {
            rows: 6,
            cols: 18,
            steps: 1000,
            wrap: false,
        }
    }
}

/// Random grids evolved under Conway's rules; all-zero end states are redrawn.
pub fn gol_generate<R: Rng + ?Sized>(config: &LifeConfig, n_samples: usize, rng: &mut R) -> Result<BitDataset> {
    let (rows, cols) = (config.rows, config.cols);
    if rows == 0 || cols == 0 {
        return invalid("grid dimensions must be positive");
    }
    let mut ds = BitDataset::new(rows * cols);
    let mut attempts = 0usize;
    while ds.len() < n_samples {
        attempts += 1;
        if attempts > 1000 * (n_samples + 1) {
            return Err(GbbmError::Numerical(
                "cellular automaton keeps dying out; cannot collect nonzero samples".into(),
            ));
        }
        let mut grid: Vec<u8> = (0..rows * cols).map(|_| u8::from(rng.random::<bool>())).collect();
        for _ in 0..config.steps {
            grid = life_step(&grid, rows, cols, config.wrap);
        }
        if grid.iter().any(|&b| b == 1) {
            ds.push_row(&grid)?;
        }
    }
    ds.metadata.insert("generator".into(), "game_of_life".into());
    ds.metadata.insert(
        "params".into(),
        format!(
            "rows={rows};cols={cols};steps={};boundary={}",
            config.steps,
            if config.wrap { "periodic" } else { "dead" }
        ),
    );
    Ok(ds)
}

/// Metropolis settings for [`ising_generate`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IsingConfig {
    pub rows: usize,
    pub cols: usize,
    pub coupling: f64,
    /// Magnitude of the checkerboard field: `+h` where `(row + col)` is even.
    pub field: f64,
    pub temperature: f64,
    /// Single-spin update attempts before the first sample.
    pub warmup: usize,
    /// Single-spin update attempts between recorded samples.
    pub thin: usize,
    /// Start from the all-up configuration instead of a random one.
    pub aligned_start: bool,
}

impl Default for IsingConfig {
    fn default() -> Self {
        Self {
            rows: 14,
            cols: 14,
            coupling: 1.0,
            field: 0.08,
            temperature: 2.4,
            warmup: 1_000_000,
            thin: 2000,
            aligned_start: false,
        }
    }
}

/// Single-spin-flip Metropolis chain on a periodic lattice. Spins `−1/+1`
/// are recorded as `0/1`.
pub fn ising_generate<R: Rng + ?Sized>(config: &IsingConfig, n_samples: usize, rng: &mut R) -> Result<BitDataset> {
    let (rows, cols) = (config.rows, config.cols);
    if rows == 0 || cols == 0 {
        return invalid("lattice dimensions must be positive");
    }
    if !(config.temperature > 0.0) {
        return invalid("temperature must be positive");
    }
    if config.thin == 0 {
        return invalid("thinning interval must be positive");
    }
    let n = rows * cols;
    let beta = 1.0 / config.temperature;
    let mut spins: Vec<i8> = if config.aligned_start {
        vec![1; n]
    } else {
        (0..n).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect()
    };
    let field: Vec<f64> = (0..n)
        .map(|i| if (i / cols + i % cols) % 2 == 0 { config.field } else { -config.field })
        .collect();
    let neighbours = |i: usize| {
        let (r, c) = (i / cols, i % cols);
        [
            ((r + rows - 1) % rows) * cols + c,
            ((r + 1) % rows) * cols + c,
            r * cols + (c + cols - 1) % cols,
            r * cols + (c + 1) % cols,
        ]
    };
    let attempt_flip = |spins: &mut Vec<i8>, rng: &mut R| {
        let i = rng.random_range(0..n);
        let s = spins[i] as f64;
        let local: f64 = neighbours(i).iter().map(|&j| spins[j] as f64).sum();
        // E = −J Σ s_i s_j − Σ h_i s_i
        let delta = 2.0 * s * (config.coupling * local + field[i]);
        if delta <= 0.0 || rng.random::<f64>() < (-beta * delta).exp() {
            spins[i] = -spins[i];
        }
    };
    for _ in 0..config.warmup {
        attempt_flip(&mut spins, rng);
    }
    let mut ds = BitDataset::new(n);
    let mut row = vec![0u8; n];
    for _ in 0..n_samples {
        for _ in 0..config.thin {
            attempt_flip(&mut spins, rng);
        }
        for (dst, &s) in row.iter_mut().zip(&spins) {
            *dst = u8::from(s > 0);
        }
        ds.push_row(&row)?;
    }
    ds.metadata.insert("generator".into(), "ising".into());
    ds.metadata.insert(
        "params".into(),
        format!(
            "rows={rows};cols={cols};J={};h={};T={};warmup={};thin={};field=checkerboard;boundary=periodic",
            config.coupling, config.field, config.temperature, config.warmup, config.thin
        ),
    );
    Ok(ds)
}

/// Bits along a chain `0 → 1 → … → d−1`: a fair first bit, then each bit
/// copies its predecessor and flips with probability `flip`.
pub fn markov_chain_generate<R: Rng + ?Sized>(
    modes: usize,
    flip: f64,
    n_samples: usize,
    rng: &mut R,
) -> Result<BitDataset> {
    if modes == 0 {
        return invalid("chain needs at least one bit");
    }
    if !(0.0..=1.0).contains(&flip) {
        return invalid(format!("flip probability must lie in [0, 1], got {flip}"));
    }
    let mut ds = BitDataset::new(modes);
    let mut row = vec![0u8; modes];
    for _ in 0..n_samples {
        row[0] = u8::from(rng.random::<bool>());
        for i in 1..modes {
            row[i] = row[i - 1] ^ u8::from(rng.random::<f64>() < flip);
        }
        ds.push_row(&row)?;
    }
    ds.metadata.insert("generator".into(), "chain".into());
    ds.metadata.insert("params".into(), format!("modes={modes},flip={flip}"));
    Ok(ds)
}
