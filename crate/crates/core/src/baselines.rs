//! Classical reference models: Chow–Liu trees and uniform bits.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::BitDataset;
use crate::error::{invalid, Result};

/// Plug-in mutual information (nats) between columns `i` and `j`.
pub fn mutual_information(dataset: &BitDataset, i: usize, j: usize) -> f64 {
    let n = dataset.len();
    if n == 0 {
        return 0.0;
    }
    let mut counts = [[0usize; 2]; 2];
    for r in 0..n {
        counts[dataset.get(r, i) as usize][dataset.get(r, j) as usize] += 1;
    }
    let n = n as f64;
    let pi = [
        (counts[0][0] + counts[0][1]) as f64 / n,
        (counts[1][0] + counts[1][1]) as f64 / n,
    ];
    let pj = [
        (counts[0][0] + counts[1][0]) as f64 / n,
        (counts[0][1] + counts[1][1]) as f64 / n,
    ];
    let mut mi = 0.0;
    for a in 0..2 {
        for b in 0..2 {
            let p = counts[a][b] as f64 / n;
            if p > 0.0 {
                mi += p * (p / (pi[a] * pj[b])).ln();
            }
        }
    }
    mi.max(0.0)
}

/// Tree-structured Bayesian network over binary variables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeModel {
    pub modes: usize,
    pub root: usize,
    pub parent: Vec<Option<usize>>,
    /// `(parent, child)` pairs in breadth-first order from the root.
    pub edges: Vec<(usize, usize)>,
    /// `P(x_i = 1 | x_parent = v)` for `v ∈ {0, 1}`; the root uses its marginal twice.
    pub p_one: Vec<[f64; 2]>,
    pub smoothing: f64,
}

/// Maximum-MI spanning tree rooted at variable 0, with additively smoothed
/// maximum-likelihood tables. Ties between equal weights resolve to the
/// lexicographically smaller edge.
pub fn chow_liu_fit(dataset: &BitDataset, smoothing: f64) -> Result<TreeModel> {
    let d = dataset.width();
    if dataset.len() < 2 && smoothing <= 0.0 {
        return invalid("Chow-Liu fit needs at least two samples without smoothing");
    }
    if dataset.is_empty() {
        return invalid("Chow-Liu fit needs a nonempty dataset");
    }
    if d < 2 {
        return invalid("Chow-Liu fit needs at least two variables");
    }
    if smoothing < 0.0 {
        return invalid("smoothing pseudo-count must be nonnegative");
    }
    let mut weighted: Vec<(f64, usize, usize)> = (0..d)
        .flat_map(|i| ((i + 1)..d).map(move |j| (i, j)))
        .map(|(i, j)| (mutual_information(dataset, i, j), i, j))
        .collect();
    weighted.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.1, a.2).cmp(&(b.1, b.2))));

    // Kruskal on descending weights.
    let mut uf: Vec<usize> = (0..d).collect();
    fn find(uf: &mut [usize], mut x: usize) -> usize {
        while uf[x] != x {
            uf[x] = uf[uf[x]];
            x = uf[x];
        }
        x
    }
    let mut adjacency = vec![Vec::new(); d];
    let mut taken = 0;
    for &(_, i, j) in &weighted {
        let (ri, rj) = (find(&mut uf, i), find(&mut uf, j));
        if ri != rj {
            uf[ri] = rj;
            adjacency[i].push(j);
            adjacency[j].push(i);
            taken += 1;
            if taken == d - 1 {
                break;
            }
        }
    }
    adjacency.iter_mut().for_each(|a| a.sort_unstable());

    let root = 0;
    let mut parent = vec![None; d];
    let mut seen = vec![false; d];
    let mut edges = Vec::with_capacity(d - 1);
    let mut queue = VecDeque::from([root]);
    seen[root] = true;
    while let Some(u) = queue.pop_front() {
        for &v in &adjacency[u] {
            if !seen[v] {
                seen[v] = true;
                parent[v] = Some(u);
                edges.push((u, v));
                queue.push_back(v);
            }
        }
    }

    let n = dataset.len() as f64;
    let mut p_one = vec![[0.0; 2]; d];
    for i in 0..d {
        match parent[i] {
            None => {
                let ones = (0..dataset.len()).filter(|&r| dataset.get(r, i) == 1).count() as f64;
                let p = (ones + smoothing) / (n + 2.0 * smoothing);
                p_one[i] = [p, p];
            }
            Some(pa) => {
                let mut counts = [[0.0f64; 2]; 2];
                for r in 0..dataset.len() {
                    counts[dataset.get(r, pa) as usize][dataset.get(r, i) as usize] += 1.0;
                }
                for v in 0..2 {
                    let total = counts[v][0] + counts[v][1] + 2.0 * smoothing;
                    p_one[i][v] = if total > 0.0 {
                        (counts[v][1] + smoothing) / total
                    } else {
                        0.5
                    };
                }
            }
        }
    }
    Ok(TreeModel {
        modes: d,
        root,
        parent,
        edges,
        p_one,
        smoothing,
    })
}

impl TreeModel {
    /// Ancestral sampling from the root down.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> BitDataset {
        let mut ds = BitDataset::new(self.modes);
        let mut order = vec![self.root];
        order.extend(self.edges.iter().map(|&(_, c)| c));
        let mut row = vec![0u8; self.modes];
        for _ in 0..n {
            for &v in &order {
                let cond = self.parent[v].map_or(0, |p| row[p] as usize);
                row[v] = u8::from(rng.random::<f64>() < self.p_one[v][cond]);
            }
            ds.push_row(&row).expect("row width matches model");
        }
        ds
    }

    pub fn log_likelihood(&self, dataset: &BitDataset) -> f64 {
        let mut ll = 0.0;
        for r in 0..dataset.len() {
            for v in 0..self.modes {
                let cond = self.parent[v].map_or(0, |p| dataset.get(r, p) as usize);
                let p1 = self.p_one[v][cond];
                ll += if dataset.get(r, v) == 1 { p1.ln() } else { (1.0 - p1).ln() };
            }
        }
        ll
    }

    /// Undirected edge set with `(min, max)` ordering, sorted.
    pub fn edge_set(&self) -> Vec<(usize, usize)> {
        let mut e: Vec<_> = self.edges.iter().map(|&(a, b)| (a.min(b), a.max(b))).collect();
        e.sort_unstable();
        e
    }
}

/// Independent fair bits.
pub fn uniform_sample<R: Rng + ?Sized>(modes: usize, n: usize, rng: &mut R) -> BitDataset {
    let mut ds = BitDataset::new(modes);
    let mut row = vec![0u8; modes];
    for _ in 0..n {
        row.iter_mut().for_each(|b| *b = u8::from(rng.random::<bool>()));
        ds.push_row(&row).expect("row width matches");
    }
    ds
}
