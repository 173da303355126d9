//! Modal state space of a damped second-order system `w'' + 𝒜w + 𝓑𝓑*w' = 0`.
//!
//! A state is stored as a pair of real coefficient vectors `(a, b)` in the
//! X-orthonormal eigenbasis `φ_j` of `𝒜`: `w = Σ a_j φ_j`, `w' = Σ b_j φ_j`.
//! The damping enters only through the Gram matrix
//! `D_jm = ⟨𝓑*φ_j, 𝓑*φ_m⟩_Y`, so `‖𝓑*v‖²_Y = bᵀ D b` for `v = Σ b_j φ_j`.
//!
//! Graded norms use the weights `η_j^{2s}`; with this convention the pair
//! norm `X_{-β} × X_{-β-1/2}` is `Σ η^{-2β} a² + Σ η^{-2β-1} b²` and the
//! energy space `H = V × X` corresponds to `β = -1/2`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Plus,
    Minus,
}

impl Branch {
    pub fn sign(self) -> f64 {
        match self {
            Branch::Plus => 1.0,
            Branch::Minus => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModeLabel {
    Index { j: usize },
    Branch { branch: Branch, k: usize },
}

impl std::fmt::Display for ModeLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ModeLabel::Index { j } => write!(f, "{j}"),
            ModeLabel::Branch { branch, k } => {
                let s = if *branch == Branch::Plus { '+' } else { '-' };
                write!(f, "({s},{k})")
            }
        }
    }
}

/// Sobolev-scale exponent `s`: the weight of mode `j` is `η_j^{2s}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradedLevel(pub f64);

impl GradedLevel {
    /// `X`, the pivot space.
    pub const X: GradedLevel = GradedLevel(0.0);
    /// `V = D(𝒜^{1/2})`.
    pub const V: GradedLevel = GradedLevel(0.5);

    fn weight(self, eta: f64) -> f64 {
        graded_weight(eta, 2.0 * self.0)
    }
}

#[inline]
pub(crate) fn graded_weight(eta: f64, exponent: f64) -> f64 {
    if exponent == 0.0 {
        1.0
    } else if exponent == 1.0 {
        eta
    } else {
        eta.powf(exponent)
    }
}

/// Finite modal truncation. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalSystem {
    eta: DVector<f64>,
    mu: DVector<f64>,
    damp_gram: DMatrix<f64>,
    bstar_norms: DVector<f64>,
    labels: Vec<ModeLabel>,
}

impl ModalSystem {
    /// Validates and stores `(η, D)`. `η` must be positive and nondecreasing,
    /// `D` symmetric positive semidefinite.
    pub fn new(eta: Vec<f64>, damp_gram: DMatrix<f64>, labels: Vec<ModeLabel>) -> Result<Self> {
        let n = eta.len();
        if n == 0 {
            return Err(invalid("eta", "at least one mode is required"));
        }
        check_len("damping Gram rows", n, damp_gram.nrows())?;
        check_len("damping Gram columns", n, damp_gram.ncols())?;
        check_len("mode labels", n, labels.len())?;

        for (j, &e) in eta.iter().enumerate() {
            if !e.is_finite() || e <= 0.0 {
                return Err(invalid("eta", format!("eta[{j}] = {e} is not a positive finite number")));
            }
            if j > 0 && e < eta[j - 1] {
                return Err(invalid("eta", format!("not nondecreasing at index {j}")));
            }
        }
        if damp_gram.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("damping Gram matrix"));
        }

        let scale = damp_gram.amax();
        for i in 0..n {
            for j in 0..i {
                let d = (damp_gram[(i, j)] - damp_gram[(j, i)]).abs();
                if d > 1e-14 * scale {
                    return Err(invalid(
                        "damp_gram",
                        format!("not symmetric at ({i},{j}): deviation {d:e}"),
                    ));
                }
            }
            if damp_gram[(i, i)] < 0.0 {
                return Err(invalid("damp_gram", format!("negative diagonal entry at {i}")));
            }
        }
        if scale > 0.0 {
            let sym = (&damp_gram + damp_gram.transpose()) * 0.5;
            let lmin = SymmetricEigen::new(sym).eigenvalues.min();
            if lmin < -1e-12 * scale {
                return Err(invalid(
                    "damp_gram",
                    format!("not positive semidefinite: min eigenvalue {lmin:e}"),
                ));
            }
        }

        let eta = DVector::from_vec(eta);
        let mu = eta.map(f64::sqrt);
        let bstar_norms = damp_gram.diagonal().map(f64::sqrt);
        Ok(ModalSystem {
            eta,
            mu,
            damp_gram,
            bstar_norms,
            labels,
        })
    }

    /// System with index labels, handy for synthetic tests.
    pub fn from_parts(eta: Vec<f64>, damp_gram: DMatrix<f64>) -> Result<Self> {
        let labels = (0..eta.len()).map(|j| ModeLabel::Index { j }).collect();
        Self::new(eta, damp_gram, labels)
    }

    pub fn undamped(eta: Vec<f64>) -> Result<Self> {
        let n = eta.len();
        Self::from_parts(eta, DMatrix::zeros(n, n))
    }

    pub fn dim(&self) -> usize {
        self.eta.len()
    }

    pub fn eta(&self) -> &DVector<f64> {
        &self.eta
    }

    pub fn mu(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn damp_gram(&self) -> &DMatrix<f64> {
        &self.damp_gram
    }

    pub fn bstar_norms(&self) -> &DVector<f64> {
        &self.bstar_norms
    }

    pub fn labels(&self) -> &[ModeLabel] {
        &self.labels
    }

    pub fn is_damped(&self) -> bool {
        self.damp_gram.amax() > 0.0
    }

    pub fn check_state(&self, state: &ModalState) -> Result<()> {
        check_len("state displacement", self.dim(), state.a.len())?;
        check_len("state velocity", self.dim(), state.b.len())?;
        if !state.is_finite() {
            return Err(Error::NonFinite("modal state"));
        }
        Ok(())
    }

    /// `√(Σ η_j^{2s} w_j²)`.
    pub fn norm_graded(&self, w: &DVector<f64>, s: GradedLevel) -> Result<f64> {
        check_len("graded norm argument", self.dim(), w.len())?;
        Ok(self
            .eta
            .iter()
            .zip(w.iter())
            .map(|(&e, &x)| s.weight(e) * x * x)
            .sum::<f64>()
            .sqrt())
    }

    /// Norm of `X_{-β} × X_{-β-1/2}`.
    pub fn norm_pair(&self, state: &ModalState, beta: f64) -> Result<f64> {
        Ok(self.norm_pair_sq(state, beta)?.sqrt())
    }

    pub fn norm_pair_sq(&self, state: &ModalState, beta: f64) -> Result<f64> {
        self.check_state(state)?;
        let (ea, eb) = (-2.0 * beta, -2.0 * beta - 1.0);
        Ok(self
            .eta
            .iter()
            .zip(state.a.iter().zip(state.b.iter()))
            .map(|(&e, (&a, &b))| graded_weight(e, ea) * a * a + graded_weight(e, eb) * b * b)
            .sum())
    }

    /// Norm of `D(A) = D(𝒜) × V`.
    pub fn norm_domain(&self, state: &ModalState) -> Result<f64> {
        self.norm_pair(state, -1.0)
    }

    pub fn norm_h(&self, state: &ModalState) -> Result<f64> {
        Ok(self.inner_h(state, state)?.sqrt())
    }

    /// `⟨z1, z2⟩_H = Σ η a1 a2 + Σ b1 b2`.
    pub fn inner_h(&self, z1: &ModalState, z2: &ModalState) -> Result<f64> {
        self.check_state(z1)?;
        self.check_state(z2)?;
        let mut acc = 0.0;
        for j in 0..self.dim() {
            acc += self.eta[j] * z1.a[j] * z2.a[j] + z1.b[j] * z2.b[j];
        }
        Ok(acc)
    }

    /// `E = ½(Σ η a² + Σ b²)`.
    pub fn energy(&self, state: &ModalState) -> Result<f64> {
        self.check_state(state)?;
        let mut acc = 0.0;
        for j in 0..self.dim() {
            acc += self.eta[j] * state.a[j] * state.a[j] + state.b[j] * state.b[j];
        }
        Ok(0.5 * acc)
    }

    /// `‖B*z‖²_Y = bᵀ D b`.
    pub fn observation_sq(&self, state: &ModalState) -> Result<f64> {
        self.check_state(state)?;
        Ok(state.b.dot(&(&self.damp_gram * &state.b)))
    }

    /// Splits into the span of modes with `μ_j ≤ cutoff` and its complement.
    pub fn project_filter(&self, state: &ModalState, cutoff: f64) -> Result<(ModalState, ModalState)> {
        if !(cutoff > 0.0) {
            return Err(invalid("cutoff", format!("must be positive, got {cutoff}")));
        }
        self.check_state(state)?;
        let n = self.dim();
        let mut low = ModalState::zeros(n);
        let mut high = ModalState::zeros(n);
        for j in 0..n {
            let dst = if self.mu[j] <= cutoff { &mut low } else { &mut high };
            dst.a[j] = state.a[j];
            dst.b[j] = state.b[j];
        }
        Ok((low, high))
    }

    /// Indices of modes with `μ_j ≤ cutoff`.
    pub fn low_modes(&self, cutoff: f64) -> Vec<usize> {
        (0..self.dim()).filter(|&j| self.mu[j] <= cutoff).collect()
    }

    /// Block operator `A(a, b) = (b, -η∘a)`.
    pub fn apply_a(&self, state: &ModalState) -> Result<ModalState> {
        self.check_state(state)?;
        Ok(ModalState {
            a: state.b.clone(),
            b: -state.a.component_mul(&self.eta),
        })
    }

    /// Unit-`H`-norm state on mode `j`, displacement only.
    pub fn displacement_mode(&self, j: usize) -> Result<ModalState> {
        if j >= self.dim() {
            return Err(invalid("mode", format!("index {j} out of range 0..{}", self.dim())));
        }
        let mut s = ModalState::zeros(self.dim());
        s.a[j] = 1.0 / self.mu[j];
        Ok(s)
    }

    /// Unit-`H`-norm state on mode `j`, velocity only.
    pub fn velocity_mode(&self, j: usize) -> Result<ModalState> {
        if j >= self.dim() {
            return Err(invalid("mode", format!("index {j} out of range 0..{}", self.dim())));
        }
        let mut s = ModalState::zeros(self.dim());
        s.b[j] = 1.0;
        Ok(s)
    }
}

/// Modal displacement and velocity coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalState {
    pub a: DVector<f64>,
    pub b: DVector<f64>,
}

impl ModalState {
    pub fn new(a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        check_len("velocity coefficients", a.len(), b.len())?;
        let s = ModalState {
            a: DVector::from_vec(a),
            b: DVector::from_vec(b),
        };
        if !s.is_finite() {
            return Err(Error::NonFinite("modal state"));
        }
        Ok(s)
    }

    pub fn zeros(n: usize) -> Self {
        ModalState {
            a: DVector::zeros(n),
            b: DVector::zeros(n),
        }
    }

    pub fn dim(&self) -> usize {
        self.a.len()
    }

    pub fn is_finite(&self) -> bool {
        self.a.iter().chain(self.b.iter()).all(|x| x.is_finite())
    }

    pub fn scaled(&self, c: f64) -> Self {
        ModalState {
            a: &self.a * c,
            b: &self.b * c,
        }
    }

    pub fn add(&self, other: &ModalState) -> Self {
        ModalState {
            a: &self.a + &other.a,
            b: &self.b + &other.b,
        }
    }

    /// Stacked energy coordinates `(μ∘a, b)`, in which the `H` norm is Euclidean.
    pub fn to_energy_coords(&self, mu: &DVector<f64>) -> DVector<f64> {
        let n = self.dim();
        let mut y = DVector::zeros(2 * n);
        for j in 0..n {
            y[j] = mu[j] * self.a[j];
            y[n + j] = self.b[j];
        }
        y
    }

    pub fn from_energy_coords(y: &DVector<f64>, mu: &DVector<f64>) -> Self {
        let n = mu.len();
        ModalState {
            a: DVector::from_fn(n, |j, _| y[j] / mu[j]),
            b: DVector::from_fn(n, |j, _| y[n + j]),
        }
    }
}
