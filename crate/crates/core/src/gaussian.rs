//! Gaussian states in phase space and the affine symplectic gate algebra.
//!
//! Quadratures are ordered `(x₁…x_d, p₁…p_d)`. Covariances use the
//! anticommutator without the ½ factor, so the vacuum has `Σ = I`, and a
//! coherent state with real amplitude `α` has mean `(√2·α, 0)`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{invalid, Result};
use crate::linalg::{quadrature_indices, select_matrix, select_vector};

/// The canonical symplectic form `Ω = [[0, I], [-I, 0]]` on `d` modes.
pub fn symplectic_form(modes: usize) -> DMatrix<f64> {
    let mut omega = DMatrix::zeros(2 * modes, 2 * modes);
    for i in 0..modes {
        omega[(i, modes + i)] = 1.0;
        omega[(modes + i, i)] = -1.0;
    }
    omega
}

/// Mean vector and covariance matrix of a `d`-mode Gaussian state.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianState {
    modes: usize,
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl GaussianState {
    pub fn vacuum(modes: usize) -> Result<Self> {
        if modes == 0 {
            return invalid("a Gaussian state needs at least one mode");
        }
        Ok(Self {
            modes,
            mean: DVector::zeros(2 * modes),
            cov: DMatrix::identity(2 * modes, 2 * modes),
        })
    }

    /// Builds a state from explicit moments. The covariance must be square,
    /// of size `2d`, and symmetric to `1e-12` relative to its largest entry.
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let n = mean.len();
        if n == 0 || n % 2 != 0 {
            return invalid(format!("mean vector length {n} is not a positive even number"));
        }
        if cov.nrows() != n || cov.ncols() != n {
            return invalid(format!(
                "covariance is {}x{}, expected {n}x{n}",
                cov.nrows(),
                cov.ncols()
            ));
        }
        if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return invalid("state moments must be finite");
        }
        let scale = cov.amax().max(f64::MIN_POSITIVE);
        let asym = (&cov - cov.transpose()).amax();
        if asym > 1e-12 * scale {
            return invalid(format!("covariance is not symmetric (defect {asym:.3e})"));
        }
        Ok(Self {
            modes: n / 2,
            mean,
            cov,
        })
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// `μ ↦ Sμ + t`, `Σ ↦ SΣSᵀ`.
    pub fn apply(&self, op: &AffineSymplectic) -> Result<Self> {
        let mut out = self.clone();
        out.apply_in_place(op)?;
        Ok(out)
    }

    pub fn apply_in_place(&mut self, op: &AffineSymplectic) -> Result<()> {
        if op.modes != self.modes {
            return invalid(format!(
                "operation acts on {} modes but the state has {}",
                op.modes, self.modes
            ));
        }
        self.mean = &op.s * &self.mean + &op.t;
        let sc = &op.s * &self.cov;
        self.cov = sc * op.s.transpose();
        symmetrize(&mut self.cov);
        Ok(())
    }

    /// Restriction to the modes in `subset` (strictly increasing, nonempty).
    pub fn reduce(&self, subset: &[usize]) -> Result<Self> {
        if subset.is_empty() {
            return invalid("cannot reduce to an empty mode subset");
        }
        check_subset(subset, self.modes)?;
        Ok(self.reduce_unchecked(subset))
    }

    pub(crate) fn reduce_unchecked(&self, subset: &[usize]) -> Self {
        let idx = quadrature_indices(self.modes, subset);
        Self {
            modes: subset.len(),
            mean: select_vector(&self.mean, &idx),
            cov: select_matrix(&self.cov, &idx),
        }
    }

    /// Husimi covariance `Q = (Σ + I)/2`.
    pub fn husimi(&self) -> DMatrix<f64> {
        let n = 2 * self.modes;
        (&self.cov + DMatrix::<f64>::identity(n, n)) * 0.5
    }

    /// Mean total photon number `Σᵢ (Σ_xx + Σ_pp − 2)/4 + (μ_x² + μ_p²)/2`.
    pub fn mean_photon_number(&self) -> f64 {
        let d = self.modes;
        (0..d)
            .map(|i| {
                (self.cov[(i, i)] + self.cov[(d + i, d + i)] - 2.0) / 4.0
                    + (self.mean[i].powi(2) + self.mean[d + i].powi(2)) / 2.0
            })
            .sum()
    }
}

/// Checks that `subset` is strictly increasing and below `modes`.
pub(crate) fn check_subset(subset: &[usize], modes: usize) -> Result<()> {
    for w in subset.windows(2) {
        if w[0] >= w[1] {
            return invalid(format!("mode subset {subset:?} is not strictly increasing"));
        }
    }
    if let Some(&last) = subset.last() {
        if last >= modes {
            return invalid(format!("mode {last} out of range for {modes} modes"));
        }
    }
    Ok(())
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Real image `[[X, -Y], [Y, X]]` of a complex mode unitary `U = X + iY`
/// acting on annihilation operators.
pub fn passive_symplectic(u: &DMatrix<Complex64>) -> DMatrix<f64> {
    let d = u.nrows();
    let mut s = DMatrix::zeros(2 * d, 2 * d);
    for i in 0..d {
        for j in 0..d {
            let z = u[(i, j)];
            s[(i, j)] = z.re;
            s[(i, d + j)] = -z.im;
            s[(d + i, j)] = z.im;
            s[(d + i, d + j)] = z.re;
        }
    }
    s
}

/// A Gaussian unitary's phase-space action `χ ↦ Sχ + t`.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineSymplectic {
    modes: usize,
    s: DMatrix<f64>,
    t: DVector<f64>,
}

impl AffineSymplectic {
    pub fn identity(modes: usize) -> Result<Self> {
        if modes == 0 {
            return invalid("an operation needs at least one mode");
        }
        Ok(Self {
            modes,
            s: DMatrix::identity(2 * modes, 2 * modes),
            t: DVector::zeros(2 * modes),
        })
    }

    /// Wraps an explicit matrix and displacement; rejects non-symplectic `S`
    /// (defect above `1e-8`).
    pub fn new(s: DMatrix<f64>, t: DVector<f64>) -> Result<Self> {
        let n = t.len();
        if n == 0 || n % 2 != 0 || s.nrows() != n || s.ncols() != n {
            return invalid("symplectic matrix and displacement have inconsistent sizes");
        }
        let op = Self { modes: n / 2, s, t };
        let defect = op.symplectic_defect();
        if !(defect <= 1e-8) {
            return invalid(format!("matrix is not symplectic (defect {defect:.3e})"));
        }
        Ok(op)
    }

    pub(crate) fn from_parts_unchecked(s: DMatrix<f64>, t: DVector<f64>) -> Self {
        Self {
            modes: t.len() / 2,
            s,
            t,
        }
    }

    /// Phase rotation on one mode: `x ↦ cosθ·x + sinθ·p`, `p ↦ −sinθ·x + cosθ·p`.
    pub fn phase_shifter(theta: f64, mode: usize, modes: usize) -> Result<Self> {
        if mode >= modes {
            return invalid(format!("mode {mode} out of range for {modes} modes"));
        }
        let mut op = Self::identity(modes)?;
        let (sin, cos) = theta.sin_cos();
        let (x, p) = (mode, modes + mode);
        op.s[(x, x)] = cos;
        op.s[(x, p)] = sin;
        op.s[(p, x)] = -sin;
        op.s[(p, p)] = cos;
        Ok(op)
    }

    /// Two-mode mixer with unitary `[[cosθ, −e^{−iφ} sinθ], [e^{iφ} sinθ, cosθ]]`
    /// on the annihilation operators of `(i, j)`.
    pub fn beamsplitter(theta: f64, phi: f64, pair: (usize, usize), modes: usize) -> Result<Self> {
        let (i, j) = pair;
        if i == j || i >= modes || j >= modes {
            return invalid(format!("invalid beamsplitter modes ({i}, {j}) for {modes} modes"));
        }
        let mut u = DMatrix::<Complex64>::identity(modes, modes);
        let (sin, cos) = theta.sin_cos();
        let phase = Complex64::from_polar(1.0, phi);
        u[(i, i)] = cos.into();
        u[(i, j)] = -phase.conj() * sin;
        u[(j, i)] = phase * sin;
        u[(j, j)] = cos.into();
        Self::passive(&u)
    }

    /// Single-mode squeezers `S = diag(e^{−r}, e^{r})` on every mode.
    pub fn squeezer(r: &[f64]) -> Result<Self> {
        if r.iter().any(|v| !v.is_finite()) {
            return invalid("squeezing amplitudes must be finite");
        }
        let mut op = Self::identity(r.len())?;
        let d = r.len();
        for (i, &ri) in r.iter().enumerate() {
            op.s[(i, i)] = (-ri).exp();
            op.s[(d + i, d + i)] = ri.exp();
        }
        Ok(op)
    }

    /// Position displacements; shifts `x_i` by `√2·α_i`.
    pub fn displacement(alpha: &[f64]) -> Result<Self> {
        if alpha.iter().any(|v| !v.is_finite()) {
            return invalid("displacement amplitudes must be finite");
        }
        let mut op = Self::identity(alpha.len())?;
        for (i, &a) in alpha.iter().enumerate() {
            op.t[i] = std::f64::consts::SQRT_2 * a;
        }
        Ok(op)
    }

    /// Passive (photon-number preserving) operation from a mode unitary.
    pub fn passive(u: &DMatrix<Complex64>) -> Result<Self> {
        if u.nrows() != u.ncols() || u.nrows() == 0 {
            return invalid("mode unitary must be square and nonempty");
        }
        let d = u.nrows();
        Ok(Self {
            modes: d,
            s: passive_symplectic(u),
            t: DVector::zeros(2 * d),
        })
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.s
    }

    pub fn displacement_vector(&self) -> &DVector<f64> {
        &self.t
    }

    /// `next ∘ self`: apply `self` first, then `next`.
    pub fn then(&self, next: &AffineSymplectic) -> Result<Self> {
        if next.modes != self.modes {
            return invalid("cannot compose operations on different mode counts");
        }
        Ok(Self {
            modes: self.modes,
            s: &next.s * &self.s,
            t: &next.s * &self.t + &next.t,
        })
    }

    /// `max |SΩSᵀ − Ω|`.
    pub fn symplectic_defect(&self) -> f64 {
        let omega = symplectic_form(self.modes);
        (&self.s * &omega * self.s.transpose() - omega).amax()
    }
}
