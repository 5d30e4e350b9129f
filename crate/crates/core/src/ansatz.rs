//! Circuit layouts, parameter vectors and the forward/backward pass.
//!
//! One layer maps the state through `S = S(U₂)·Sq(r)·S(U₁)` followed by the
//! position displacement `√2·α`. Interferometers are built from two-parameter
//! units (a phase `φ` on the first arm followed by a real beamsplitter of
//! angle `θ`) and a terminal column of `d` phase shifters. The Clements layout
//! places `d(d−1)/2` units in a rectangular mesh; a graph layout places one unit
//! per edge, in edge order.
//!
//! Flat parameter layout per layer: `[α (d) | θ₁ (P) | r (d) | θ₂ (P)]`, where
//! each interferometer block is `[θ₀, φ₀, θ₁, φ₁, …, ψ₀ … ψ_{d−1}]`.

use std::f64::consts::{PI, SQRT_2};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::gaussian::{passive_symplectic, symmetrize, AffineSymplectic, GaussianState};

/// Interferometer layout.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    Clements,
    /// Beamsplitter units placed along the edges in the given order.
    Graph { edges: Vec<(usize, usize)> },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CircuitSpec {
    pub modes: usize,
    pub layers: usize,
    pub layout: Layout,
}

impl CircuitSpec {
    pub fn new(modes: usize, layers: usize, layout: Layout) -> Result<Self> {
        let spec = Self {
            modes,
            layers,
            layout,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn clements(modes: usize, layers: usize) -> Result<Self> {
        Self::new(modes, layers, Layout::Clements)
    }

    pub fn graph(modes: usize, layers: usize, edges: Vec<(usize, usize)>) -> Result<Self> {
        Self::new(modes, layers, Layout::Graph { edges })
    }

    /// All-to-all layout whose edge order is a seeded uniform permutation.
    pub fn complete_graph(modes: usize, layers: usize, seed: u64) -> Result<Self> {
        let mut edges: Vec<(usize, usize)> = (0..modes)
            .flat_map(|i| ((i + 1)..modes).map(move |j| (i, j)))
            .collect();
        edges.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        Self::graph(modes, layers, edges)
    }

    pub fn validate(&self) -> Result<()> {
        if self.modes == 0 {
            return invalid("circuit needs at least one mode");
        }
        if self.layers == 0 {
            return invalid("circuit needs at least one layer");
        }
        if let Layout::Graph { edges } = &self.layout {
            for &(i, j) in edges {
                if i == j || i >= self.modes || j >= self.modes {
                    return invalid(format!(
                        "edge ({i}, {j}) is not a pair of distinct modes below {}",
                        self.modes
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn mesh(&self) -> Mesh {
        match &self.layout {
            Layout::Clements => Mesh::clements(self.modes),
            Layout::Graph { edges } => Mesh {
                modes: self.modes,
                units: edges.clone(),
            },
        }
    }

    /// Parameters per interferometer: two per unit plus `d` terminal phases.
    pub fn interferometer_param_count(&self) -> usize {
        let units = match &self.layout {
            Layout::Clements => self.modes * (self.modes - 1) / 2,
            Layout::Graph { edges } => edges.len(),
        };
        2 * units + self.modes
    }

    pub fn layer_param_count(&self) -> usize {
        2 * self.interferometer_param_count() + 2 * self.modes
    }

    pub fn param_count(&self) -> usize {
        self.layers * self.layer_param_count()
    }
}

/// Ordered list of two-mode units of one interferometer.
#[derive(Clone, Debug, PartialEq)]
pub struct Mesh {
    modes: usize,
    units: Vec<(usize, usize)>,
}

impl Mesh {
    /// Rectangular mesh: column `c` couples `(i, i+1)` for `i ≡ c (mod 2)`.
    pub fn clements(modes: usize) -> Self {
        let mut units = Vec::with_capacity(modes * modes.saturating_sub(1) / 2);
        for column in 0..modes {
            let mut i = column % 2;
            while i + 1 < modes {
                units.push((i, i + 1));
                i += 2;
            }
        }
        Self { modes, units }
    }

    pub fn units(&self) -> &[(usize, usize)] {
        &self.units
    }

    pub fn param_count(&self) -> usize {
        2 * self.units.len() + self.modes
    }

    /// Mode unitary `diag(e^{−iψ})·G_n⋯G_1`.
    pub fn unitary(&self, params: &[f64]) -> DMatrix<Complex64> {
        debug_assert_eq!(params.len(), self.param_count());
        let d = self.modes;
        let mut u = DMatrix::<Complex64>::identity(d, d);
        for (k, &(i, j)) in self.units.iter().enumerate() {
            let g = unit_matrix(params[2 * k], params[2 * k + 1]);
            rotate_rows(&mut u, i, j, &g);
        }
        let phases = &params[2 * self.units.len()..];
        for (i, &psi) in phases.iter().enumerate() {
            let z = Complex64::from_polar(1.0, -psi);
            u.row_mut(i).iter_mut().for_each(|v| *v *= z);
        }
        u
    }

    /// Accumulates `∂L/∂params` given `u = unitary(params)` and
    /// `u_bar = ∂L/∂Re U + i ∂L/∂Im U`. Walks the mesh backwards, undoing each
    /// unit on a copy of `u` to recover the intermediate products.
    pub fn backward(
        &self,
        params: &[f64],
        u: &DMatrix<Complex64>,
        mut u_bar: DMatrix<Complex64>,
        grad: &mut [f64],
    ) {
        let d = self.modes;
        let n_units = self.units.len();
        let mut cur = u.clone();
        let phases = &params[2 * n_units..];
        for (i, &psi) in phases.iter().enumerate() {
            // ∂U_i/∂ψ = −i·U_i
            let mut acc = 0.0;
            for c in 0..d {
                acc += (u_bar[(i, c)].conj() * Complex64::new(0.0, -1.0) * cur[(i, c)]).re;
            }
            grad[2 * n_units + i] += acc;
            let z = Complex64::from_polar(1.0, psi);
            cur.row_mut(i).iter_mut().for_each(|v| *v *= z);
            u_bar.row_mut(i).iter_mut().for_each(|v| *v *= z);
        }
        for (k, &(i, j)) in self.units.iter().enumerate().rev() {
            let (theta, phi) = (params[2 * k], params[2 * k + 1]);
            let g = unit_matrix(theta, phi);
            let gh = [
                [g[0][0].conj(), g[1][0].conj()],
                [g[0][1].conj(), g[1][1].conj()],
            ];
            rotate_rows(&mut cur, i, j, &gh);
            // Ḡ = Ū[rows]·U_prev[rows]ᴴ
            let mut gbar = [[Complex64::new(0.0, 0.0); 2]; 2];
            let rows = [i, j];
            for c in 0..d {
                for a in 0..2 {
                    let ub = u_bar[(rows[a], c)];
                    for b in 0..2 {
                        gbar[a][b] += ub * cur[(rows[b], c)].conj();
                    }
                }
            }
            let (dg_theta, dg_phi) = unit_derivatives(theta, phi);
            let contract = |m: &[[Complex64; 2]; 2]| -> f64 {
                let mut s = 0.0;
                for a in 0..2 {
                    for b in 0..2 {
                        s += (gbar[a][b].conj() * m[a][b]).re;
                    }
                }
                s
            };
            grad[2 * k] += contract(&dg_theta);
            grad[2 * k + 1] += contract(&dg_phi);
            rotate_rows(&mut u_bar, i, j, &gh);
        }
    }
}

/// `BS(θ)·diag(e^{−iφ}, 1)`.
fn unit_matrix(theta: f64, phi: f64) -> [[Complex64; 2]; 2] {
    let (s, c) = theta.sin_cos();
    let e = Complex64::from_polar(1.0, -phi);
    [[e * c, Complex64::new(-s, 0.0)], [e * s, Complex64::new(c, 0.0)]]
}

fn unit_derivatives(theta: f64, phi: f64) -> ([[Complex64; 2]; 2], [[Complex64; 2]; 2]) {
    let (s, c) = theta.sin_cos();
    let e = Complex64::from_polar(1.0, -phi);
    let mi = Complex64::new(0.0, -1.0);
    let zero = Complex64::new(0.0, 0.0);
    (
        [[-e * s, Complex64::new(-c, 0.0)], [e * c, Complex64::new(-s, 0.0)]],
        [[mi * e * c, zero], [mi * e * s, zero]],
    )
}

fn rotate_rows(m: &mut DMatrix<Complex64>, i: usize, j: usize, g: &[[Complex64; 2]; 2]) {
    for c in 0..m.ncols() {
        let (a, b) = (m[(i, c)], m[(j, c)]);
        m[(i, c)] = g[0][0] * a + g[0][1] * b;
        m[(j, c)] = g[1][0] * a + g[1][1] * b;
    }
}

/// Flat trainable parameter vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams(pub Vec<f64>);

/// Borrowed view of one layer's parameters.
#[derive(Clone, Copy, Debug)]
pub struct LayerParams<'a> {
    pub alpha: &'a [f64],
    pub theta1: &'a [f64],
    pub r: &'a [f64],
    pub theta2: &'a [f64],
}

impl ModelParams {
    pub fn zeros(spec: &CircuitSpec) -> Self {
        Self(vec![0.0; spec.param_count()])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn check(&self, spec: &CircuitSpec) -> Result<()> {
        if self.0.len() != spec.param_count() {
            return invalid(format!(
                "parameter vector has {} entries, circuit expects {}",
                self.0.len(),
                spec.param_count()
            ));
        }
        Ok(())
    }

    pub fn layer<'a>(&'a self, spec: &CircuitSpec, k: usize) -> LayerParams<'a> {
        split_layer(spec, &self.0[k * spec.layer_param_count()..(k + 1) * spec.layer_param_count()])
    }
}

fn split_layer<'a>(spec: &CircuitSpec, block: &'a [f64]) -> LayerParams<'a> {
    let d = spec.modes;
    let p = spec.interferometer_param_count();
    let (alpha, rest) = block.split_at(d);
    let (theta1, rest) = rest.split_at(p);
    let (r, theta2) = rest.split_at(d);
    LayerParams {
        alpha,
        theta1,
        r,
        theta2,
    }
}

/// Angles uniform in `[0, 2π)`; displacements and squeezing `N(0, 0.1)`.
pub fn init_params(spec: &CircuitSpec, seed: u64) -> ModelParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 0.1).expect("valid normal");
    let d = spec.modes;
    let p = spec.interferometer_param_count();
    let mut out = Vec::with_capacity(spec.param_count());
    for _ in 0..spec.layers {
        out.extend((0..d).map(|_| normal.sample(&mut rng)));
        out.extend((0..p).map(|_| rng.random_range(0.0..2.0 * PI)));
        out.extend((0..d).map(|_| normal.sample(&mut rng)));
        out.extend((0..p).map(|_| rng.random_range(0.0..2.0 * PI)));
    }
    ModelParams(out)
}

/// Intermediate products of one layer, kept for the backward pass.
struct LayerTape {
    u1: DMatrix<Complex64>,
    u2: DMatrix<Complex64>,
    /// `S(U₂)`
    a: DMatrix<f64>,
    /// `Sq(r)·S(U₁)`
    c: DMatrix<f64>,
    /// `S(U₁)`
    b: DMatrix<f64>,
    s: DMatrix<f64>,
}

fn layer_parts(spec: &CircuitSpec, mesh: &Mesh, layer: LayerParams<'_>) -> (LayerTape, DVector<f64>) {
    let d = spec.modes;
    let u1 = mesh.unitary(layer.theta1);
    let u2 = mesh.unitary(layer.theta2);
    let a = passive_symplectic(&u2);
    let b = passive_symplectic(&u1);
    let mut c = b.clone();
    for i in 0..d {
        let (lo, hi) = ((-layer.r[i]).exp(), layer.r[i].exp());
        c.row_mut(i).iter_mut().for_each(|v| *v *= lo);
        c.row_mut(d + i).iter_mut().for_each(|v| *v *= hi);
    }
    let s = &a * &c;
    let mut t = DVector::zeros(2 * d);
    for i in 0..d {
        t[i] = SQRT_2 * layer.alpha[i];
    }
    (LayerTape { u1, u2, a, c, b, s }, t)
}

/// The affine map of one layer.
pub fn layer_to_affine(spec: &CircuitSpec, layer_params: &[f64]) -> Result<AffineSymplectic> {
    spec.validate()?;
    if layer_params.len() != spec.layer_param_count() {
        return invalid(format!(
            "layer block has {} entries, expected {}",
            layer_params.len(),
            spec.layer_param_count()
        ));
    }
    let (tape, t) = layer_parts(spec, &spec.mesh(), split_layer(spec, layer_params));
    Ok(AffineSymplectic::from_parts_unchecked(tape.s, t))
}

/// Vacuum evolved through every layer in order.
pub fn forward(spec: &CircuitSpec, params: &ModelParams) -> Result<GaussianState> {
    Ok(ForwardTape::record(spec, params)?.state)
}

/// Forward pass with enough intermediates to run reverse-mode differentiation.
pub struct ForwardTape {
    spec: CircuitSpec,
    mesh: Mesh,
    params: ModelParams,
    layers: Vec<LayerTape>,
    /// Input state of every layer.
    inputs: Vec<GaussianState>,
    state: GaussianState,
}

impl ForwardTape {
    pub fn record(spec: &CircuitSpec, params: &ModelParams) -> Result<Self> {
        spec.validate()?;
        params.check(spec)?;
        let mesh = spec.mesh();
        let mut state = GaussianState::vacuum(spec.modes)?;
        let mut layers = Vec::with_capacity(spec.layers);
        let mut inputs = Vec::with_capacity(spec.layers);
        for k in 0..spec.layers {
            let (tape, t) = layer_parts(spec, &mesh, params.layer(spec, k));
            let op = AffineSymplectic::from_parts_unchecked(tape.s.clone(), t);
            let next = if k == 0 {
                // Vacuum input: SΣSᵀ = SSᵀ, μ = t.
                let mut cov = &tape.s * tape.s.transpose();
                symmetrize(&mut cov);
                GaussianState::new(op.displacement_vector().clone(), cov)?
            } else {
                state.apply(&op)?
            };
            inputs.push(std::mem::replace(&mut state, next));
            layers.push(tape);
        }
        Ok(Self {
            spec: spec.clone(),
            mesh,
            params: params.clone(),
            layers,
            inputs,
            state,
        })
    }

    pub fn state(&self) -> &GaussianState {
        &self.state
    }

    /// Gradient with respect to every parameter given `∂L/∂μ` and `∂L/∂Σ` of
    /// the final state.
    pub fn backward(&self, mean_bar: &DVector<f64>, cov_bar: &DMatrix<f64>) -> Vec<f64> {
        let spec = &self.spec;
        let d = spec.modes;
        let n_layer = spec.layer_param_count();
        let p = spec.interferometer_param_count();
        let mut grad = vec![0.0; spec.param_count()];
        let mut mu_bar = mean_bar.clone();
        let mut sig_bar = (cov_bar + cov_bar.transpose()) * 0.5;

        for k in (0..spec.layers).rev() {
            let tape = &self.layers[k];
            let input = &self.inputs[k];
            let layer = self.params.layer(spec, k);
            let g = &mut grad[k * n_layer..(k + 1) * n_layer];

            // μ' = Sμ + t, Σ' = SΣSᵀ
            for i in 0..d {
                g[i] += SQRT_2 * mu_bar[i];
            }
            let mut s_bar = if k == 0 {
                &sig_bar * &tape.s * 2.0
            } else {
                &sig_bar * &tape.s * input.cov() * 2.0
            };
            if k > 0 {
                s_bar += &mu_bar * input.mean().transpose();
            }
            if k > 0 {
                let next_mu_bar = tape.s.transpose() * &mu_bar;
                let mut next_sig_bar = tape.s.transpose() * &sig_bar * &tape.s;
                symmetrize(&mut next_sig_bar);
                mu_bar = next_mu_bar;
                sig_bar = next_sig_bar;
            }

            // S = A·C, C = D·B
            let a_bar = &s_bar * tape.c.transpose();
            let c_bar = tape.a.transpose() * &s_bar;
            let mut b_bar = c_bar.clone();
            for i in 0..d {
                let (lo, hi) = ((-layer.r[i]).exp(), layer.r[i].exp());
                let mut d_lo = 0.0;
                let mut d_hi = 0.0;
                for col in 0..2 * d {
                    d_lo += c_bar[(i, col)] * tape.b[(i, col)];
                    d_hi += c_bar[(d + i, col)] * tape.b[(d + i, col)];
                }
                g[d + p + i] += -lo * d_lo + hi * d_hi;
                b_bar.row_mut(i).iter_mut().for_each(|v| *v *= lo);
                b_bar.row_mut(d + i).iter_mut().for_each(|v| *v *= hi);
            }

            let (g_theta1, rest) = g[d..].split_at_mut(p);
            let g_theta2 = &mut rest[d..];
            self.mesh
                .backward(layer.theta1, &tape.u1, unitary_adjoint(&b_bar), g_theta1);
            self.mesh
                .backward(layer.theta2, &tape.u2, unitary_adjoint(&a_bar), g_theta2);
        }
        grad
    }
}

/// `Ū = ∂L/∂X + i ∂L/∂Y` from the adjoint of `[[X, −Y], [Y, X]]`.
fn unitary_adjoint(s_bar: &DMatrix<f64>) -> DMatrix<Complex64> {
    let d = s_bar.nrows() / 2;
    DMatrix::from_fn(d, d, |i, j| {
        Complex64::new(
            s_bar[(i, j)] + s_bar[(d + i, d + j)],
            s_bar[(d + i, j)] - s_bar[(i, d + j)],
        )
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_count_goldens() {
        assert_eq!(CircuitSpec::clements(108, 1).unwrap().layer_param_count(), 23_544);
        assert_eq!(CircuitSpec::clements(805, 1).unwrap().param_count(), 1_297_660);
        let chain: Vec<_> = (0..107).map(|i| (i, i + 1)).collect();
        assert_eq!(CircuitSpec::graph(108, 1, chain).unwrap().layer_param_count(), 860);
        let all = CircuitSpec::complete_graph(256, 3, 0).unwrap();
        assert_eq!(all.param_count(), 394_752);
    }

    #[test]
    fn clements_mesh_counts_match_formula() {
        for d in 2..=64 {
            let spec = CircuitSpec::clements(d, 1).unwrap();
            let mesh = spec.mesh();
            assert_eq!(mesh.units().len(), d * (d - 1) / 2);
            assert_eq!(mesh.param_count(), d * d);
            assert_eq!(spec.layer_param_count(), 2 * d * d + 2 * d);
            for &(i, j) in mesh.units() {
                assert_eq!(j, i + 1);
            }
        }
    }

    #[test]
    fn invalid_specs() {
        assert!(CircuitSpec::clements(0, 1).is_err());
        assert!(CircuitSpec::clements(3, 0).is_err());
        assert!(CircuitSpec::graph(3, 1, vec![(0, 0)]).is_err());
        assert!(CircuitSpec::graph(3, 1, vec![(0, 3)]).is_err());
    }

    #[test]
    fn zero_parameters_give_identity() {
        let spec = CircuitSpec::clements(4, 2).unwrap();
        let op = layer_to_affine(&spec, &vec![0.0; spec.layer_param_count()]).unwrap();
        assert!((op.matrix() - DMatrix::<f64>::identity(8, 8)).amax() < 1e-15);
        assert_eq!(op.displacement_vector().amax(), 0.0);
        let state = forward(&spec, &ModelParams::zeros(&spec)).unwrap();
        assert_eq!(state, GaussianState::vacuum(4).unwrap());
    }

    #[test]
    fn unit_unitary_matches_gate_composition() {
        let spec = CircuitSpec::graph(3, 1, vec![(0, 2), (1, 2)]).unwrap();
        let mesh = spec.mesh();
        let params = [0.3, 1.1, -0.7, 0.4, 0.2, 0.5, -0.9];
        let u = mesh.unitary(&params);
        let mut op = AffineSymplectic::identity(3).unwrap();
        for (k, &(i, j)) in mesh.units().iter().enumerate() {
            op = op
                .then(&AffineSymplectic::phase_shifter(params[2 * k + 1], i, 3).unwrap())
                .unwrap()
                .then(&AffineSymplectic::beamsplitter(params[2 * k], 0.0, (i, j), 3).unwrap())
                .unwrap();
        }
        for i in 0..3 {
            op = op
                .then(&AffineSymplectic::phase_shifter(params[4 + i], i, 3).unwrap())
                .unwrap();
        }
        assert!((passive_symplectic(&u) - op.matrix()).amax() < 1e-14);
    }

    #[test]
    fn single_mode_layer() {
        let spec = CircuitSpec::clements(1, 1).unwrap();
        let (alpha, psi1, r, psi2) = (0.3, 0.8, 0.25, -1.2);
        let params = ModelParams(vec![alpha, psi1, r, psi2]);
        let state = forward(&spec, &params).unwrap();
        let rot = |t: f64| DMatrix::from_row_slice(2, 2, &[t.cos(), t.sin(), -t.sin(), t.cos()]);
        let sq = DMatrix::from_diagonal(&DVector::from_vec(vec![(-2.0 * r).exp(), (2.0 * r).exp()]));
        let expected = rot(psi2) * sq * rot(psi2).transpose();
        assert!((state.cov() - expected).amax() < 1e-14);
        assert!((state.mean()[0] - SQRT_2 * alpha).abs() < 1e-15);
    }

    #[test]
    fn identity_interferometers_give_squeezed_displaced_vacuum() {
        let spec = CircuitSpec::clements(3, 1).unwrap();
        let mut params = ModelParams::zeros(&spec);
        let r = [0.1, -0.2, 0.3];
        let alpha = [0.5, 0.0, -0.4];
        params.0[..3].copy_from_slice(&alpha);
        let p = spec.interferometer_param_count();
        params.0[3 + p..6 + p].copy_from_slice(&r);
        let state = forward(&spec, &params).unwrap();
        for i in 0..3 {
            assert!((state.cov()[(i, i)] - (-2.0 * r[i]).exp()).abs() < 1e-14);
            assert!((state.cov()[(3 + i, 3 + i)] - (2.0 * r[i]).exp()).abs() < 1e-14);
            assert!((state.mean()[i] - SQRT_2 * alpha[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn two_layers_equal_composed_affine() {
        let spec2 = CircuitSpec::clements(3, 2).unwrap();
        let params = init_params(&spec2, 5);
        let n = spec2.layer_param_count();
        let a = layer_to_affine(&spec2, &params.0[..n]).unwrap();
        let b = layer_to_affine(&spec2, &params.0[n..]).unwrap();
        let composed = a.then(&b).unwrap();
        let via_layers = forward(&spec2, &params).unwrap();
        let direct = GaussianState::vacuum(3).unwrap().apply(&composed).unwrap();
        assert!((via_layers.cov() - direct.cov()).amax() < 1e-12);
        assert!((via_layers.mean() - direct.mean()).amax() < 1e-12);
    }

    #[test]
    fn init_params_contract() {
        let spec = CircuitSpec::clements(6, 2).unwrap();
        let a = init_params(&spec, 42);
        assert_eq!(a, init_params(&spec, 42));
        assert_ne!(a, init_params(&spec, 43));
        for k in 0..2 {
            let layer = a.layer(&spec, k);
            for &t in layer.theta1.iter().chain(layer.theta2) {
                assert!((0.0..2.0 * PI).contains(&t));
            }
        }
    }

    #[test]
    fn init_amplitude_spread() {
        let spec = CircuitSpec::graph(50_000, 1, vec![]).unwrap();
        let params = init_params(&spec, 9);
        let layer = params.layer(&spec, 0);
        let vals: Vec<f64> = layer.alpha.iter().chain(layer.r).copied().collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!((0.095..=0.105).contains(&sd), "sd {sd}");
    }
}
