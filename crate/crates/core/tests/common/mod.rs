//! Truncated Fock-space simulator used as an independent reference.
//!
//! States live on all occupation tuples with total photon number `≤ cutoff`.
//! Passive gates conserve photon number and act exactly; single-mode
//! displacement and squeezing are exponentials of their ladder-operator
//! generators built on a larger single-mode space, then truncated. Whatever
//! is pushed past the cutoff is dropped, so `1 − norm²` bounds the truncation error.
#![allow(dead_code)]

use std::collections::HashMap;

use gbbm::ansatz::LayerParams;
use gbbm::{CircuitSpec, ModelParams};
use nalgebra::DMatrix;
use num_complex::Complex64;

pub struct FockState {
    pub modes: usize,
    pub cutoff: usize,
    pub basis: Vec<Vec<usize>>,
    index: HashMap<Vec<usize>, usize>,
    pub amps: Vec<Complex64>,
}

fn enumerate(modes: usize, budget: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if prefix.len() == modes {
        out.push(prefix.clone());
        return;
    }
    for n in 0..=budget {
        prefix.push(n);
        enumerate(modes, budget - n, prefix, out);
        prefix.pop();
    }
}

/// `exp(G)` of a real generator on `0..big`, truncated to `0..=cutoff`.
fn single_mode_exp(generator: impl Fn(usize, usize) -> f64, cutoff: usize) -> DMatrix<f64> {
    let big = cutoff + 200;
    let g = DMatrix::from_fn(big, big, |i, j| generator(i, j));
    g.exp().view((0, 0), (cutoff + 1, cutoff + 1)).into_owned()
}

/// `D(α) = exp(α a† − α a)` for real `α`.
pub fn displacement_matrix(alpha: f64, cutoff: usize) -> DMatrix<f64> {
    single_mode_exp(
        |i, j| {
            if i == j + 1 {
                alpha * (i as f64).sqrt()
            } else if j == i + 1 {
                -alpha * (j as f64).sqrt()
            } else {
                0.0
            }
        },
        cutoff,
    )
}

/// `S(r) = exp(r/2 (a² − a†²))`.
pub fn squeeze_matrix(r: f64, cutoff: usize) -> DMatrix<f64> {
    single_mode_exp(
        |i, j| {
            if j == i + 2 {
                0.5 * r * ((j * (j - 1)) as f64).sqrt()
            } else if i == j + 2 {
                -0.5 * r * ((i * (i - 1)) as f64).sqrt()
            } else {
                0.0
            }
        },
        cutoff,
    )
}

impl FockState {
    pub fn vacuum(modes: usize, cutoff: usize) -> Self {
        let mut basis = Vec::new();
        enumerate(modes, cutoff, &mut Vec::new(), &mut basis);
        let index = basis.iter().enumerate().map(|(k, n)| (n.clone(), k)).collect();
        let mut amps = vec![Complex64::new(0.0, 0.0); basis.len()];
        amps[0] = Complex64::new(1.0, 0.0);
        Self {
            modes,
            cutoff,
            basis,
            index,
            amps,
        }
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    /// Applies a single-mode matrix on `mode`, dropping amplitude past the cutoff.
    pub fn apply_single(&mut self, mode: usize, m: &DMatrix<f64>) {
        let mut out = vec![Complex64::new(0.0, 0.0); self.amps.len()];
        for (k, n) in self.basis.iter().enumerate() {
            if n[mode] != 0 {
                continue;
            }
            let room = self.cutoff - n.iter().sum::<usize>();
            let mut idx = Vec::with_capacity(room + 1);
            let mut key = n.clone();
            for j in 0..=room {
                key[mode] = j;
                idx.push(if j == 0 { k } else { self.index[&key] });
            }
            for (row, &target) in idx.iter().enumerate() {
                let mut acc = Complex64::new(0.0, 0.0);
                for (col, &src) in idx.iter().enumerate() {
                    acc += self.amps[src] * m[(row, col)];
                }
                out[target] = acc;
            }
        }
        self.amps = out;
    }

    pub fn displace(&mut self, mode: usize, alpha: f64) {
        let m = displacement_matrix(alpha, self.cutoff);
        self.apply_single(mode, &m);
    }

    pub fn squeeze(&mut self, mode: usize, r: f64) {
        let m = squeeze_matrix(r, self.cutoff);
        self.apply_single(mode, &m);
    }

    /// `e^{−iθ n}` on one mode.
    pub fn phase(&mut self, mode: usize, theta: f64) {
        for (k, n) in self.basis.iter().enumerate() {
            self.amps[k] *= Complex64::from_polar(1.0, -theta * n[mode] as f64);
        }
    }

    /// Real beamsplitter mapping `(a_i, a_j) → (c a_i − s a_j, s a_i + c a_j)`
    /// in the Heisenberg picture: `exp(θ (a_j† a_i − a_i† a_j))`.
    pub fn beamsplitter(&mut self, i: usize, j: usize, theta: f64) {
        let mut out = self.amps.clone();
        let mut blocks: HashMap<usize, DMatrix<f64>> = HashMap::new();
        for n in self.basis.iter() {
            if n[j] != 0 {
                continue;
            }
            let m = n[i];
            let block = blocks.entry(m).or_insert_with(|| {
                let g = DMatrix::from_fn(m + 1, m + 1, |row, col| {
                    let a = col as f64;
                    let mf = m as f64;
                    if row + 1 == col {
                        theta * (a * (mf - a + 1.0)).sqrt()
                    } else if row == col + 1 {
                        -theta * ((a + 1.0) * (mf - a)).sqrt()
                    } else {
                        0.0
                    }
                });
                g.exp()
            });
            let idx: Vec<usize> = (0..=m)
                .map(|a| {
                    let mut key = n.clone();
                    key[i] = a;
                    key[j] = m - a;
                    self.index[&key]
                })
                .collect();
            for (row, &target) in idx.iter().enumerate() {
                let mut acc = Complex64::new(0.0, 0.0);
                for (col, &src) in idx.iter().enumerate() {
                    acc += self.amps[src] * block[(row, col)];
                }
                out[target] = acc;
            }
        }
        self.amps = out;
    }

    /// Phase `φ` on the first arm, then the real beamsplitter.
    pub fn unit(&mut self, i: usize, j: usize, theta: f64, phi: f64) {
        self.phase(i, phi);
        self.beamsplitter(i, j, theta);
    }

    pub fn interferometer(&mut self, units: &[(usize, usize)], params: &[f64]) {
        for (k, &(i, j)) in units.iter().enumerate() {
            self.unit(i, j, params[2 * k], params[2 * k + 1]);
        }
        for (mode, &psi) in params[2 * units.len()..].iter().enumerate() {
            self.phase(mode, psi);
        }
    }

    pub fn layer(&mut self, units: &[(usize, usize)], layer: LayerParams<'_>) {
        self.interferometer(units, layer.theta1);
        for (mode, &r) in layer.r.iter().enumerate() {
            self.squeeze(mode, r);
        }
        self.interferometer(units, layer.theta2);
        for (mode, &a) in layer.alpha.iter().enumerate() {
            self.displace(mode, a);
        }
    }

    pub fn circuit(spec: &CircuitSpec, params: &ModelParams, cutoff: usize) -> Self {
        let mut state = Self::vacuum(spec.modes, cutoff);
        let mesh = spec.mesh();
        for k in 0..spec.layers {
            state.layer(mesh.units(), params.layer(spec, k));
        }
        state
    }

    /// `⟨a_mode⟩`.
    pub fn mean_field(&self, mode: usize) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for (k, n) in self.basis.iter().enumerate() {
            if n[mode] == 0 {
                continue;
            }
            let mut lower = n.clone();
            lower[mode] -= 1;
            acc += self.amps[self.index[&lower]].conj() * self.amps[k] * (n[mode] as f64).sqrt();
        }
        acc
    }

    /// `⟨a_i† a_j⟩`.
    pub fn correlation(&self, i: usize, j: usize) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for (k, n) in self.basis.iter().enumerate() {
            if n[j] == 0 {
                continue;
            }
            let mut m = n.clone();
            m[j] -= 1;
            let coeff_j = (n[j] as f64).sqrt();
            let coeff_i = (m[i] + 1) as f64;
            m[i] += 1;
            if let Some(&t) = self.index.get(&m) {
                acc += self.amps[t].conj() * self.amps[k] * coeff_j * coeff_i.sqrt();
            }
        }
        acc
    }

    pub fn parity(&self, subset: &[usize]) -> f64 {
        self.basis
            .iter()
            .zip(&self.amps)
            .map(|(n, a)| {
                let odd = subset.iter().map(|&i| n[i]).sum::<usize>() % 2 == 1;
                if odd {
                    -a.norm_sqr()
                } else {
                    a.norm_sqr()
                }
            })
            .sum()
    }

    pub fn threshold(&self, subset: &[usize]) -> f64 {
        self.basis
            .iter()
            .zip(&self.amps)
            .map(|(n, a)| {
                let clicks = subset.iter().filter(|&&i| n[i] > 0).count();
                if clicks % 2 == 1 {
                    -a.norm_sqr()
                } else {
                    a.norm_sqr()
                }
            })
            .sum()
    }
}

/// Circuit parameters with `|α|, |r| ≤ bound` and uniform angles.
pub fn bounded_params<R: rand::Rng>(spec: &CircuitSpec, bound: f64, rng: &mut R) -> ModelParams {
    let d = spec.modes;
    let p = spec.interferometer_param_count();
    let tau = 2.0 * std::f64::consts::PI;
    let mut out = Vec::with_capacity(spec.param_count());
    for _ in 0..spec.layers {
        out.extend((0..d).map(|_| rng.random_range(-bound..=bound)));
        out.extend((0..p).map(|_| rng.random_range(0.0..tau)));
        out.extend((0..d).map(|_| rng.random_range(-bound..=bound)));
        out.extend((0..p).map(|_| rng.random_range(0.0..tau)));
    }
    ModelParams(out)
}

/// All subsets of `0..d` (including the empty one).
pub fn all_subsets(d: usize) -> Vec<Vec<usize>> {
    (0..1usize << d)
        .map(|m| (0..d).filter(|i| m & (1 << i) != 0).collect())
        .collect()
}

pub fn fock_cutoff(modes: usize) -> usize {
    match modes {
        1 => 160,
        2 => 90,
        _ => 55,
    }
}

/// Largest deviation of the phase-space expectation values (parity and
/// threshold over every subset, plus `⟨a⟩` and `⟨a†a⟩`) from the Fock
/// reference, together with the truncated norm.
pub fn oracle_deviation(spec: &CircuitSpec, params: &ModelParams) -> (f64, f64) {
    use gbbm::observables::{parity_expval, threshold_expval};
    let d = spec.modes;
    let state = gbbm::ansatz::forward(spec, params).unwrap();
    let fock = FockState::circuit(spec, params, fock_cutoff(d));
    let tail = 1.0 - fock.norm_sqr();
    let mu = state.mean();
    let sigma = state.cov();
    let moment = |a: usize, b: usize| sigma[(a, b)] / 2.0 + mu[a] * mu[b];
    let mut worst: f64 = 0.0;
    for i in 0..d {
        let expected = Complex64::new(mu[i], mu[d + i]) / std::f64::consts::SQRT_2;
        worst = worst.max((fock.mean_field(i) - expected).norm());
        for j in 0..d {
            let re = 0.5 * (moment(i, j) + moment(d + i, d + j)) - if i == j { 0.5 } else { 0.0 };
            let im = 0.5 * (moment(i, d + j) - moment(d + i, j));
            worst = worst.max((fock.correlation(i, j) - Complex64::new(re, im)).norm());
        }
    }
    for subset in all_subsets(d) {
        worst = worst.max((parity_expval(&state, &subset).unwrap() - fock.parity(&subset)).abs());
        worst = worst.max((threshold_expval(&state, &subset, 7).unwrap() - fock.threshold(&subset)).abs());
    }
    (worst, tail)
}

/// Kernel double sum `E_pp K + E_qq K − 2 E_pq K` over outcome tables.
pub fn kernel_mmd2(p: &[f64], q: &[f64], d: usize, bw: gbbm::observables::Bandwidth) -> f64 {
    let bits = |x: usize| -> Vec<u8> { (0..d).map(|i| ((x >> i) & 1) as u8).collect() };
    let mut total = 0.0;
    for x in 0..p.len() {
        for y in 0..p.len() {
            let k = bw.kernel(&bits(x), &bits(y));
            total += k * (p[x] * p[y] + q[x] * q[y] - 2.0 * p[x] * q[y]);
        }
    }
    total
}

/// `⟨(−1)^{|x_A|}⟩_q` for every subset mask of an outcome distribution.
pub fn expval_table(q: &[f64]) -> Vec<f64> {
    let mut t = q.to_vec();
    gbbm::walsh::fwht(&mut t);
    t
}

pub fn random_distribution<R: rand::Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let s: f64 = w.iter().sum();
    w.iter().map(|v| v / s).collect()
}

/// Pearson chi-square p-value, pooling outcomes with expected count < 5.
pub fn chi_square_p(counts: &[usize], probs: &[f64], n: usize) -> f64 {
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    let mut stat = 0.0;
    let mut bins = 0;
    let (mut pooled_obs, mut pooled_exp) = (0.0, 0.0);
    for (&c, &p) in counts.iter().zip(probs) {
        let e = p * n as f64;
        if e < 5.0 {
            pooled_obs += c as f64;
            pooled_exp += e;
        } else {
            stat += (c as f64 - e).powi(2) / e;
            bins += 1;
        }
    }
    if pooled_exp >= 5.0 {
        stat += (pooled_obs - pooled_exp).powi(2) / pooled_exp;
        bins += 1;
    }
    1.0 - ChiSquared::new((bins - 1) as f64).unwrap().cdf(stat)
}

pub fn outcome_counts(data: &gbbm::BitDataset) -> Vec<usize> {
    let mut counts = vec![0usize; 1 << data.width()];
    for r in 0..data.len() {
        counts[data.row_index(r)] += 1;
    }
    counts
}
