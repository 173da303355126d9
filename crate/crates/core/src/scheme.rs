//! Two-stage viscous time stepping and its energy bookkeeping.
//!
//! One step of the damped viscous scheme is
//!
//! ```text
//! (z̃ − z^k)/Δt     = (A − BB*) (z^k + z̃)/2          midpoint stage
//! (z^{k+1} − z̃)/Δt = Δt² A² z^{k+1}                  viscosity stage
//! ```
//!
//! Dropping `BB*` gives the conservative viscous scheme, dropping the second
//! stage gives the plain midpoint (Crank–Nicolson) scheme. Every step obeys
//!
//! ```text
//! E^{k+1} + Δt³‖Az^{k+1}‖²_H + (Δt⁶/2)‖A²z^{k+1}‖²_H + Δt‖B*(z^k+z̃)/2‖²_Y = E^k
//! ```
//!
//! and [`StepRecord`] carries each term together with the residual.
//!
//! Internally the state is stacked in energy coordinates `y = (μ∘a, b)`,
//! where the `H` norm is Euclidean and the generator is
//! `G = [[0, diag μ], [−diag μ, −D]]`. The symmetric part of
//! `I − (Δt/2)G` is then `I + (Δt/2) diag(0, D) ⪰ I`, so the midpoint
//! matrix is well conditioned for every `Δt`.

use nalgebra::{DMatrix, DVector, LU};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, invalid, Error, Result};
use crate::modal::{graded_weight, ModalState, ModalSystem};

/// Step count `l = ⌊T/Δt⌋`. The small relative slack absorbs `T/Δt`
/// landing one ulp below an integer.
pub fn step_count(t_final: f64, dt: f64) -> usize {
    (t_final / dt * (1.0 + 1e-12)).floor() as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchemeConfig {
    pub dt: f64,
    pub t_final: f64,
    pub viscosity: bool,
    pub damping: bool,
    pub solve_tol: f64,
}

impl SchemeConfig {
    pub const DEFAULT_SOLVE_TOL: f64 = 1e-13;

    pub fn damped_viscous(dt: f64, t_final: f64) -> Self {
        SchemeConfig {
            dt,
            t_final,
            viscosity: true,
            damping: true,
            solve_tol: Self::DEFAULT_SOLVE_TOL,
        }
    }

    pub fn conservative_viscous(dt: f64, t_final: f64) -> Self {
        SchemeConfig {
            damping: false,
            ..Self::damped_viscous(dt, t_final)
        }
    }

    pub fn midpoint(dt: f64, t_final: f64) -> Self {
        SchemeConfig {
            viscosity: false,
            damping: false,
            ..Self::damped_viscous(dt, t_final)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(invalid("dt", format!("must be positive, got {}", self.dt)));
        }
        if !(self.t_final >= self.dt && self.t_final.is_finite()) {
            return Err(invalid(
                "t_final",
                format!("must be finite and at least dt = {}, got {}", self.dt, self.t_final),
            ));
        }
        if !(self.solve_tol > 0.0 && self.solve_tol <= 1e-6) {
            return Err(invalid(
                "solve_tol",
                format!("must lie in (0, 1e-6], got {}", self.solve_tol),
            ));
        }
        Ok(())
    }

    /// `l = ⌊T/Δt⌋`; a run performs `l + 1` steps.
    pub fn last_index(&self) -> usize {
        step_count(self.t_final, self.dt)
    }

    pub fn kind(&self) -> SchemeKind {
        match (self.damping, self.viscosity) {
            (true, true) => SchemeKind::DampedViscous,
            (false, true) => SchemeKind::ConservativeViscous,
            (true, false) => SchemeKind::DampedMidpoint,
            (false, false) => SchemeKind::Midpoint,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeKind {
    DampedViscous,
    ConservativeViscous,
    DampedMidpoint,
    Midpoint,
}

/// Midpoint multiplier data of a single mode: `e^{iαΔt} = (1 + iμΔt/2)/(1 − iμΔt/2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Multiplier {
    /// Discrete frequency `α = (2/Δt) arctan(μΔt/2)`.
    pub alpha: f64,
    /// `cos²(αΔt/2) = 1/(1 + (μΔt)²/4)`.
    pub cos2: f64,
}

pub fn modal_multiplier(mu: f64, dt: f64) -> Multiplier {
    let h = mu * dt / 2.0;
    Multiplier {
        alpha: 2.0 / dt * h.atan(),
        cos2: 1.0 / (1.0 + h * h),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub k: usize,
    pub z_tilde: ModalState,
    pub z_next: ModalState,
    pub energy_before: f64,
    pub energy_after: f64,
    /// `Δt‖B*((z^k+z̃)/2)‖²_Y` when damping acts in the midpoint stage, else 0.
    pub damp_term: f64,
    /// `Δt‖B*((z^k+z̃)/2)‖²_Y` regardless of the damping flag.
    pub observed: f64,
    /// `Δt³‖Az^{k+1}‖²_H`.
    pub visc1: f64,
    /// `(Δt⁶/2)‖A²z^{k+1}‖²_H`.
    pub visc2: f64,
    pub identity_residual: f64,
}

/// Precomputed solver for one `(system, Δt)` pair.
#[derive(Debug, Clone)]
pub struct SchemeSolver<'a> {
    sys: &'a ModalSystem,
    cfg: SchemeConfig,
    matrix: DMatrix<f64>,
    lu: LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    visc: DVector<f64>,
}

struct StepTerms {
    energy_before: f64,
    energy_after: f64,
    damp_term: f64,
    visc1: f64,
    visc2: f64,
    identity_residual: f64,
}

/// Raw step output in energy coordinates.
struct RawStep {
    tilde: DVector<f64>,
    next: DVector<f64>,
    observed: f64,
}

pub fn factorize<'a>(sys: &'a ModalSystem, cfg: &SchemeConfig) -> Result<SchemeSolver<'a>> {
    SchemeSolver::new(sys, *cfg)
}

impl<'a> SchemeSolver<'a> {
    pub fn new(sys: &'a ModalSystem, cfg: SchemeConfig) -> Result<Self> {
        cfg.validate()?;
        let n = sys.dim();
        let h = cfg.dt / 2.0;
        let mut matrix = DMatrix::identity(2 * n, 2 * n);
        for j in 0..n {
            let m = sys.mu()[j];
            matrix[(j, n + j)] = -h * m;
            matrix[(n + j, j)] = h * m;
        }
        if cfg.damping {
            let d = sys.damp_gram();
            for i in 0..n {
                for j in 0..n {
                    matrix[(n + i, n + j)] += h * d[(i, j)];
                }
            }
        }
        let lu = matrix.clone().lu();
        assert!(
            lu.is_invertible(),
            "midpoint matrix is singular; its symmetric part is bounded below by I"
        );
        let visc = if cfg.viscosity {
            let dt3 = cfg.dt.powi(3);
            sys.eta().map(|e| 1.0 / (1.0 + dt3 * e))
        } else {
            DVector::from_element(n, 1.0)
        };
        Ok(SchemeSolver {
            sys,
            cfg,
            matrix,
            lu,
            visc,
        })
    }

    pub fn system(&self) -> &ModalSystem {
        self.sys
    }

    pub fn config(&self) -> &SchemeConfig {
        &self.cfg
    }

    /// `I − (Δt/2)(A − BB*)` in energy coordinates `(μ∘a, b)`.
    pub fn midpoint_matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Per-mode factors `(1 + Δt³η_j)⁻¹` of the viscosity stage, applied to
    /// both blocks (all ones when viscosity is off).
    pub fn viscosity_factors(&self) -> &DVector<f64> {
        &self.visc
    }

    /// `G y` with `G = A − BB*` (or `A` when damping is off).
    fn apply_generator(&self, y: &DVector<f64>) -> DVector<f64> {
        let n = self.sys.dim();
        let mu = self.sys.mu();
        let mut out = DVector::zeros(2 * n);
        for j in 0..n {
            out[j] = mu[j] * y[n + j];
            out[n + j] = -mu[j] * y[j];
        }
        if self.cfg.damping {
            let q = y.rows(n, n);
            let dq = self.sys.damp_gram() * q;
            for j in 0..n {
                out[n + j] -= dq[j];
            }
        }
        out
    }

    /// Solves `(I − (Δt/2)G) x = rhs` with one refinement pass when the
    /// relative residual exceeds `solve_tol`.
    fn solve_stage(&self, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        let mut x = self
            .lu
            .solve(rhs)
            .ok_or(Error::NonFinite("midpoint stage solve"))?;
        let h = self.cfg.dt / 2.0;
        let residual = rhs - (&x - self.apply_generator(&x) * h);
        let scale = rhs.amax();
        if residual.amax() > self.cfg.solve_tol * scale {
            if let Some(dx) = self.lu.solve(&residual) {
                x += dx;
            }
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("midpoint stage solution"));
        }
        Ok(x)
    }

    fn observation(&self, y: &DVector<f64>, tilde: &DVector<f64>) -> f64 {
        let n = self.sys.dim();
        let q = (y.rows(n, n) + tilde.rows(n, n)) * 0.5;
        self.cfg.dt * q.dot(&(self.sys.damp_gram() * &q))
    }

    fn raw_step(&self, y: &DVector<f64>) -> Result<RawStep> {
        let h = self.cfg.dt / 2.0;
        let rhs = y + self.apply_generator(y) * h;
        let tilde = self.solve_stage(&rhs)?;
        let observed = self.observation(y, &tilde);
        let n = self.sys.dim();
        let next = DVector::from_fn(2 * n, |i, _| tilde[i] * self.visc[i % n]);
        Ok(RawStep {
            tilde,
            next,
            observed,
        })
    }

    /// `(Δt³‖Ay‖²_H, (Δt⁶/2)‖A²y‖²_H)` for `y` in energy coordinates.
    fn viscous_terms(&self, y: &DVector<f64>) -> (f64, f64) {
        if !self.cfg.viscosity {
            return (0.0, 0.0);
        }
        let n = self.sys.dim();
        let eta = self.sys.eta();
        let (mut s1, mut s2) = (0.0, 0.0);
        for j in 0..n {
            let w = y[j] * y[j] + y[n + j] * y[n + j];
            s1 += eta[j] * w;
            s2 += eta[j] * eta[j] * w;
        }
        let dt = self.cfg.dt;
        (dt.powi(3) * s1, 0.5 * dt.powi(6) * s2)
    }

    fn terms(&self, y: &DVector<f64>, raw: &RawStep) -> StepTerms {
        let energy_before = 0.5 * y.norm_squared();
        let energy_after = 0.5 * raw.next.norm_squared();
        let (visc1, visc2) = self.viscous_terms(&raw.next);
        let damp_term = if self.cfg.damping { raw.observed } else { 0.0 };
        StepTerms {
            energy_before,
            energy_after,
            damp_term,
            visc1,
            visc2,
            identity_residual: (energy_after + visc1 + visc2 + damp_term - energy_before).abs(),
        }
    }

    fn record(&self, k: usize, y: &DVector<f64>, raw: RawStep) -> StepRecord {
        let mu = self.sys.mu();
        let t = self.terms(y, &raw);
        StepRecord {
            k,
            z_tilde: ModalState::from_energy_coords(&raw.tilde, mu),
            z_next: ModalState::from_energy_coords(&raw.next, mu),
            energy_before: t.energy_before,
            energy_after: t.energy_after,
            damp_term: t.damp_term,
            observed: raw.observed,
            visc1: t.visc1,
            visc2: t.visc2,
            identity_residual: t.identity_residual,
        }
    }

    fn weak_norm_sq_energy_coords(&self, y: &DVector<f64>, beta: f64) -> f64 {
        let n = self.sys.dim();
        let eta = self.sys.eta();
        (0..n)
            .map(|j| graded_weight(eta[j], -2.0 * beta - 1.0) * (y[j] * y[j] + y[n + j] * y[n + j]))
            .sum()
    }

    /// One step of the configured scheme.
    pub fn step(&self, k: usize, z: &ModalState) -> Result<StepRecord> {
        self.sys.check_state(z)?;
        let y = z.to_energy_coords(self.sys.mu());
        let raw = self.raw_step(&y)?;
        Ok(self.record(k, &y, raw))
    }

    pub fn step_viscous_damped(&self, k: usize, z: &ModalState) -> Result<StepRecord> {
        if self.cfg.kind() != SchemeKind::DampedViscous {
            return Err(Error::SchemeMismatch(
                "solver is not configured with damping and viscosity",
            ));
        }
        self.step(k, z)
    }

    pub fn step_viscous_conservative(&self, k: usize, u: &ModalState) -> Result<StepRecord> {
        if self.cfg.kind() != SchemeKind::ConservativeViscous {
            return Err(Error::SchemeMismatch(
                "solver is not configured as conservative with viscosity",
            ));
        }
        self.step(k, u)
    }

    /// `y^{k+1} = (I − (Δt/2)A)⁻¹(I + (Δt/2)A) y^k`.
    pub fn step_midpoint(&self, y: &ModalState) -> Result<ModalState> {
        if self.cfg.kind() != SchemeKind::Midpoint {
            return Err(Error::SchemeMismatch(
                "solver is not configured as the plain midpoint scheme",
            ));
        }
        self.sys.check_state(y)?;
        let v = y.to_energy_coords(self.sys.mu());
        let raw = self.raw_step(&v)?;
        Ok(ModalState::from_energy_coords(&raw.next, self.sys.mu()))
    }

    /// Runs `l + 1 = ⌊T/Δt⌋ + 1` steps from `z0`, recording weak norms at
    /// scale `beta`, and checks the telescoped energy identity.
    pub fn run(&self, z0: &ModalState, beta: f64) -> Result<EnergyTrace> {
        self.sys.check_state(z0)?;
        let steps = self.cfg.last_index() + 1;
        let mu = self.sys.mu();
        let e0 = self.sys.energy(z0)?;
        let mut points = Vec::with_capacity(steps + 1);
        points.push(TracePoint {
            k: 0,
            t: 0.0,
            energy: e0,
            weak_norm_sq: self.sys.norm_pair_sq(z0, beta)?,
            damp_term: 0.0,
            observed: 0.0,
            visc1: 0.0,
            visc2: 0.0,
            identity_residual: 0.0,
        });

        let mut y = z0.to_energy_coords(mu);
        let slack = 10.0 * self.cfg.solve_tol * e0;
        let mut dissipated = 0.0;
        let mut max_step_residual: f64 = 0.0;
        for k in 0..steps {
            let raw = self.raw_step(&y)?;
            let t = self.terms(&y, &raw);
            dissipated += t.damp_term + t.visc1 + t.visc2;
            max_step_residual = max_step_residual.max(t.identity_residual);
            points.push(TracePoint {
                k: k + 1,
                t: (k + 1) as f64 * self.cfg.dt,
                energy: t.energy_after,
                weak_norm_sq: self.weak_norm_sq_energy_coords(&raw.next, beta),
                damp_term: t.damp_term,
                observed: raw.observed,
                visc1: t.visc1,
                visc2: t.visc2,
                identity_residual: t.identity_residual,
            });
            y = raw.next;
        }

        let e_final = points.last().map(|p| p.energy).unwrap_or(e0);
        let telescoped_residual = (e0 - e_final - dissipated).abs();
        let telescoped_tolerance = steps as f64 * slack;
        let identity_ok = max_step_residual <= slack && telescoped_residual <= telescoped_tolerance;
        Ok(EnergyTrace {
            beta,
            dt: self.cfg.dt,
            e0,
            domain_norm_sq0: self.sys.norm_pair_sq(z0, -1.0)?,
            points,
            telescoped_residual,
            step_tolerance: slack,
            telescoped_tolerance,
            max_step_residual,
            identity_ok,
            final_state: ModalState::from_energy_coords(&y, mu),
        })
    }

    pub fn ensemble(&self) -> Result<EnsembleStepper> {
        EnsembleStepper::new(self)
    }
}

/// One row of an [`EnergyTrace`]: the state after `k` steps together with
/// the dissipation terms of the step that produced it (zero at `k = 0`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub k: usize,
    pub t: f64,
    pub energy: f64,
    pub weak_norm_sq: f64,
    pub damp_term: f64,
    pub observed: f64,
    pub visc1: f64,
    pub visc2: f64,
    pub identity_residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyTrace {
    pub beta: f64,
    pub dt: f64,
    pub e0: f64,
    pub domain_norm_sq0: f64,
    pub points: Vec<TracePoint>,
    /// `|E⁰ − E^{l+1} − Σ(damp + visc1 + visc2)|`.
    pub telescoped_residual: f64,
    /// `10·solve_tol·E⁰`.
    pub step_tolerance: f64,
    /// `(l+1)·10·solve_tol·E⁰`.
    pub telescoped_tolerance: f64,
    pub max_step_residual: f64,
    pub identity_ok: bool,
    pub final_state: ModalState,
}

impl EnergyTrace {
    pub fn times(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.t).collect()
    }

    pub fn energies(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.energy).collect()
    }

    /// `E^{k+1} ≤ E^k + slack` for every step.
    pub fn is_nonincreasing(&self, slack: f64) -> bool {
        self.points
            .windows(2)
            .all(|w| w[1].energy <= w[0].energy + slack)
    }
}

/// Advances many states at once through the same scheme. Columns are
/// states in energy coordinates `(μ∘a, b)`.
#[derive(Debug, Clone)]
pub struct EnsembleStepper {
    dt: f64,
    stage: DMatrix<f64>,
    visc: DVector<f64>,
    mu: DVector<f64>,
    eta: DVector<f64>,
    damp_gram: DMatrix<f64>,
    viscosity: bool,
}

/// Per-column quantities of one ensemble step.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleTerms {
    /// `Δt‖B*((y+ỹ)/2)‖²_Y`.
    pub observed: DVector<f64>,
    /// `Δt³‖Ay^{k+1}‖²_H`.
    pub visc1: DVector<f64>,
    /// `Δt⁶‖A²y^{k+1}‖²_H` (note: the full term, not halved).
    pub visc2_full: DVector<f64>,
}

impl EnsembleStepper {
    fn new(solver: &SchemeSolver<'_>) -> Result<Self> {
        let n = solver.sys.dim();
        let h = solver.cfg.dt / 2.0;
        let mut rhs = DMatrix::identity(2 * n, 2 * n);
        for c in 0..2 * n {
            let col = DVector::from_fn(2 * n, |i, _| if i == c { 1.0 } else { 0.0 });
            let g = solver.apply_generator(&col);
            for i in 0..2 * n {
                rhs[(i, c)] += h * g[i];
            }
        }
        let stage = solver
            .lu
            .solve(&rhs)
            .ok_or(Error::NonFinite("midpoint stage matrix"))?;
        Ok(EnsembleStepper {
            dt: solver.cfg.dt,
            stage,
            visc: DVector::from_fn(2 * n, |i, _| solver.visc[i % n]),
            mu: solver.sys.mu().clone(),
            eta: solver.sys.eta().clone(),
            damp_gram: solver.sys.damp_gram().clone(),
            viscosity: solver.cfg.viscosity,
        })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn mu(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn pack(&self, states: &[ModalState]) -> Result<DMatrix<f64>> {
        let n = self.dim();
        let mut y = DMatrix::zeros(2 * n, states.len());
        for (c, s) in states.iter().enumerate() {
            check_len("ensemble state", n, s.dim())?;
            y.set_column(c, &s.to_energy_coords(&self.mu));
        }
        Ok(y)
    }

    /// Advances `y` in place by one step without computing observations.
    pub fn advance(&self, y: &mut DMatrix<f64>) {
        let mut next = &self.stage * &*y;
        for mut col in next.column_iter_mut() {
            col.component_mul_assign(&self.visc);
        }
        *y = next;
    }

    /// Advances `y` in place and returns the per-column terms of the step.
    pub fn advance_observed(&self, y: &mut DMatrix<f64>) -> EnsembleTerms {
        let n = self.dim();
        let m = y.ncols();
        let tilde = &self.stage * &*y;
        let q = (y.rows(n, n) + tilde.rows(n, n)) * 0.5;
        let dq = &self.damp_gram * &q;
        let observed = DVector::from_fn(m, |c, _| self.dt * q.column(c).dot(&dq.column(c)));
        let mut next = tilde;
        for mut col in next.column_iter_mut() {
            col.component_mul_assign(&self.visc);
        }
        let (mut visc1, mut visc2_full) = (DVector::zeros(m), DVector::zeros(m));
        if self.viscosity {
            let dt3 = self.dt.powi(3);
            let dt6 = self.dt.powi(6);
            for c in 0..m {
                let (mut s1, mut s2) = (0.0, 0.0);
                for j in 0..n {
                    let w = next[(j, c)].powi(2) + next[(n + j, c)].powi(2);
                    s1 += self.eta[j] * w;
                    s2 += self.eta[j] * self.eta[j] * w;
                }
                visc1[c] = dt3 * s1;
                visc2_full[c] = dt6 * s2;
            }
        }
        *y = next;
        EnsembleTerms {
            observed,
            visc1,
            visc2_full,
        }
    }

    /// `½‖y_c‖²` per column.
    pub fn energies(&self, y: &DMatrix<f64>) -> DVector<f64> {
        DVector::from_fn(y.ncols(), |c, _| 0.5 * y.column(c).norm_squared())
    }

    /// `‖y_c‖²_{X_{-β}×X_{-β-1/2}}` per column, in energy coordinates.
    pub fn weak_norms_sq(&self, y: &DMatrix<f64>, beta: f64) -> DVector<f64> {
        let n = self.dim();
        let w = self.eta.map(|e| graded_weight(e, -2.0 * beta - 1.0));
        DVector::from_fn(y.ncols(), |c, _| {
            (0..n)
                .map(|j| w[j] * (y[(j, c)].powi(2) + y[(n + j, c)].powi(2)))
                .sum()
        })
    }
}

/// Splits the modes into the connected components of the damping coupling
/// (nonzero off-diagonal entries of `D`). The generator is block diagonal
/// under this split, so each block can be stepped on its own.
pub fn coupling_components(sys: &ModalSystem) -> Vec<Vec<usize>> {
    let n = sys.dim();
    let d = sys.damp_gram();
    let mut parent: Vec<usize> = (0..n).collect();
    fn root(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for i in 0..n {
        for j in i + 1..n {
            if d[(i, j)] != 0.0 {
                let (ri, rj) = (root(&mut parent, i), root(&mut parent, j));
                if ri != rj {
                    parent[ri.max(rj)] = ri.min(rj);
                }
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut slot = vec![usize::MAX; n];
    for i in 0..n {
        let r = root(&mut parent, i);
        if slot[r] == usize::MAX {
            slot[r] = groups.len();
            groups.push(Vec::new());
        }
        groups[slot[r]].push(i);
    }
    groups
}

/// [`EnsembleStepper`] over the decoupled blocks of a system. Exact for any
/// system; cheap when `D` is block diagonal.
#[derive(Debug, Clone)]
pub struct BlockEnsemble {
    n: usize,
    blocks: Vec<(Vec<usize>, EnsembleStepper)>,
}

/// Ensemble state: one energy-coordinate matrix per block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockState {
    parts: Vec<DMatrix<f64>>,
    cols: usize,
}

impl BlockState {
    pub fn ncols(&self) -> usize {
        self.cols
    }
}

impl BlockEnsemble {
    pub fn new(sys: &ModalSystem, cfg: &SchemeConfig) -> Result<Self> {
        cfg.validate()?;
        let comps = if cfg.damping {
            coupling_components(sys)
        } else {
            (0..sys.dim()).map(|j| vec![j]).collect()
        };
        let mut blocks = Vec::with_capacity(comps.len());
        for idx in comps {
            let eta: Vec<f64> = idx.iter().map(|&j| sys.eta()[j]).collect();
            let d = DMatrix::from_fn(idx.len(), idx.len(), |r, c| sys.damp_gram()[(idx[r], idx[c])]);
            let sub = ModalSystem::from_parts(eta, d)?;
            let stepper = SchemeSolver::new(&sub, *cfg)?.ensemble()?;
            blocks.push((idx, stepper));
        }
        Ok(BlockEnsemble { n: sys.dim(), blocks })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    /// Splits full energy-coordinate columns (`2n × m`) into blocks.
    pub fn split(&self, y: &DMatrix<f64>) -> Result<BlockState> {
        check_len("ensemble rows", 2 * self.n, y.nrows())?;
        let m = y.ncols();
        let parts = self
            .blocks
            .iter()
            .map(|(idx, _)| {
                let nb = idx.len();
                DMatrix::from_fn(2 * nb, m, |r, c| {
                    if r < nb {
                        y[(idx[r], c)]
                    } else {
                        y[(self.n + idx[r - nb], c)]
                    }
                })
            })
            .collect();
        Ok(BlockState { parts, cols: m })
    }

    pub fn pack(&self, states: &[ModalState], mu: &DVector<f64>) -> Result<BlockState> {
        check_len("ensemble frequencies", self.n, mu.len())?;
        let mut y = DMatrix::zeros(2 * self.n, states.len());
        for (c, s) in states.iter().enumerate() {
            check_len("ensemble state", self.n, s.dim())?;
            y.set_column(c, &s.to_energy_coords(mu));
        }
        self.split(&y)
    }

    /// Reassembles full energy-coordinate columns.
    pub fn join(&self, state: &BlockState) -> DMatrix<f64> {
        let mut y = DMatrix::zeros(2 * self.n, state.cols);
        for ((idx, _), part) in self.blocks.iter().zip(&state.parts) {
            let nb = idx.len();
            for c in 0..state.cols {
                for (r, &j) in idx.iter().enumerate() {
                    y[(j, c)] = part[(r, c)];
                    y[(self.n + j, c)] = part[(nb + r, c)];
                }
            }
        }
        y
    }

    pub fn advance(&self, state: &mut BlockState) {
        for ((_, stepper), part) in self.blocks.iter().zip(state.parts.iter_mut()) {
            stepper.advance(part);
        }
    }

    pub fn advance_observed(&self, state: &mut BlockState) -> EnsembleTerms {
        let m = state.cols;
        let mut total = EnsembleTerms {
            observed: DVector::zeros(m),
            visc1: DVector::zeros(m),
            visc2_full: DVector::zeros(m),
        };
        for ((_, stepper), part) in self.blocks.iter().zip(state.parts.iter_mut()) {
            let t = stepper.advance_observed(part);
            total.observed += t.observed;
            total.visc1 += t.visc1;
            total.visc2_full += t.visc2_full;
        }
        total
    }

    pub fn energies(&self, state: &BlockState) -> DVector<f64> {
        let mut e = DVector::zeros(state.cols);
        for ((_, stepper), part) in self.blocks.iter().zip(&state.parts) {
            e += stepper.energies(part);
        }
        e
    }

    pub fn weak_norms_sq(&self, state: &BlockState, beta: f64) -> DVector<f64> {
        let mut w = DVector::zeros(state.cols);
        for ((_, stepper), part) in self.blocks.iter().zip(&state.parts) {
            w += stepper.weak_norms_sq(part, beta);
        }
        w
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_damped(n: usize, seed: u64) -> ModalSystem {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut eta: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..2000.0)).collect();
        eta.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let r = DMatrix::from_fn(n, 3, |_, _| rng.random_range(-1.0..1.0));
        ModalSystem::from_parts(eta, &r * r.transpose()).unwrap()
    }

    fn random_state(n: usize, seed: u64) -> ModalState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ModalState::new(
            (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
            (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn factorization_single_mode() {
        let sys = ModalSystem::undamped(vec![1.0]).unwrap();
        let solver = factorize(&sys, &SchemeConfig::damped_viscous(2.0, 2.0)).unwrap();
        assert_eq!(
            solver.midpoint_matrix(),
            &DMatrix::from_row_slice(2, 2, &[1.0, -1.0, 1.0, 1.0])
        );
        assert_relative_eq!(solver.viscosity_factors()[0], 1.0 / 9.0);

        let tiny = factorize(&sys, &SchemeConfig::damped_viscous(1e-6, 1.0)).unwrap();
        assert!((tiny.viscosity_factors()[0] - 1.0).abs() < 1e-17);
    }

    #[test]
    fn damping_flag_off_ignores_gram() {
        let damped = random_damped(5, 3);
        let bare = ModalSystem::undamped(damped.eta().iter().copied().collect()).unwrap();
        let cfg = SchemeConfig::conservative_viscous(0.1, 1.0);
        let a = factorize(&damped, &cfg).unwrap();
        let b = factorize(&bare, &cfg).unwrap();
        assert_eq!(a.midpoint_matrix(), b.midpoint_matrix());
    }

    #[test]
    fn config_validation() {
        assert!(SchemeConfig::damped_viscous(0.0, 1.0).validate().is_err());
        assert!(SchemeConfig::damped_viscous(0.1, 0.05).validate().is_err());
        let mut c = SchemeConfig::damped_viscous(0.1, 1.0);
        c.solve_tol = 1e-3;
        assert!(c.validate().is_err());
        assert_eq!(SchemeConfig::damped_viscous(0.01, 20.0).last_index(), 2000);
        assert_eq!(SchemeConfig::damped_viscous(0.1, 0.3).last_index(), 3);
    }

    #[test]
    fn single_mode_hand_solved_step() {
        let sys = ModalSystem::undamped(vec![1.0]).unwrap();
        let solver = factorize(&sys, &SchemeConfig::damped_viscous(1.0, 1.0)).unwrap();
        let z = ModalState::new(vec![1.0], vec![0.0]).unwrap();
        let rec = solver.step_viscous_damped(0, &z).unwrap();
        // (I - G/2)^{-1}(I + G/2)(1, 0) with G = [[0, 1], [-1, 0]]
        assert_relative_eq!(rec.z_tilde.a[0], 0.6, epsilon = 1e-15);
        assert_relative_eq!(rec.z_tilde.b[0], -0.8, epsilon = 1e-15);
        assert_relative_eq!(rec.z_next.a[0], 0.3, epsilon = 1e-15);
        assert_relative_eq!(rec.z_next.b[0], -0.4, epsilon = 1e-15);
    }

    #[test]
    fn undamped_inviscid_step_conserves() {
        let sys = random_damped(16, 1);
        let mut cfg = SchemeConfig::midpoint(0.05, 1.0);
        cfg.damping = false;
        let solver = factorize(&sys, &cfg).unwrap();
        let z = random_state(16, 2);
        let rec = solver.step(0, &z).unwrap();
        assert_relative_eq!(rec.energy_after, rec.energy_before, max_relative = 1e-13);
        assert_eq!(rec.damp_term, 0.0);
        assert!(rec.observed > 0.0);
    }

    #[test]
    fn conservative_viscous_factor_and_first_stage() {
        let sys = ModalSystem::undamped(vec![100.0]).unwrap();
        let solver = factorize(&sys, &SchemeConfig::conservative_viscous(0.1, 1.0)).unwrap();
        assert_relative_eq!(solver.viscosity_factors()[0], 1.0 / 1.1, max_relative = 1e-15);
        let zero = ModalState::zeros(1);
        let rec = solver.step_viscous_conservative(0, &zero).unwrap();
        assert_eq!(rec.z_next, zero);

        let sys = random_damped(256, 5);
        let solver = factorize(&sys, &SchemeConfig::conservative_viscous(0.01, 1.0)).unwrap();
        for seed in 0..4 {
            let u = random_state(256, 10 + seed);
            let rec = solver.step_viscous_conservative(0, &u).unwrap();
            let before = sys.norm_h(&u).unwrap();
            let after = sys.norm_h(&rec.z_tilde).unwrap();
            assert_relative_eq!(before, after, max_relative = 1e-13);
        }
    }

    #[test]
    fn identity_residual_on_random_systems() {
        for (n, seed) in [(8usize, 1u64), (64, 2), (256, 3)] {
            let sys = random_damped(n, seed);
            let cfg = SchemeConfig::damped_viscous(0.02, 0.2);
            let solver = factorize(&sys, &cfg).unwrap();
            let z = random_state(n, seed + 100);
            let e0 = sys.energy(&z).unwrap();
            let mut cur = z;
            for k in 0..10 {
                let rec = solver.step_viscous_damped(k, &cur).unwrap();
                assert!(rec.damp_term >= 0.0 && rec.visc1 >= 0.0 && rec.visc2 >= 0.0);
                assert!(
                    rec.identity_residual <= 10.0 * cfg.solve_tol * e0,
                    "n={n} k={k} residual {:e}",
                    rec.identity_residual
                );
                // oracle: evaluate both sides of the identity from the states themselves
                let az = sys.apply_a(&rec.z_next).unwrap();
                let aaz = sys.apply_a(&az).unwrap();
                let mid = cur.add(&rec.z_tilde).scaled(0.5);
                let lhs = sys.energy(&rec.z_next).unwrap()
                    + cfg.dt.powi(3) * sys.inner_h(&az, &az).unwrap()
                    + 0.5 * cfg.dt.powi(6) * sys.inner_h(&aaz, &aaz).unwrap()
                    + cfg.dt * sys.observation_sq(&mid).unwrap();
                let rhs = sys.energy(&cur).unwrap();
                assert!((lhs - rhs).abs() <= 10.0 * cfg.solve_tol * e0);
                cur = rec.z_next;
            }
        }
    }

    #[test]
    fn midpoint_rotation_angle() {
        let sys = ModalSystem::undamped(vec![4.0]).unwrap();
        let solver = factorize(&sys, &SchemeConfig::midpoint(1.0, 1.0)).unwrap();
        let y = ModalState::new(vec![0.5], vec![0.0]).unwrap();
        let next = solver.step_midpoint(&y).unwrap();
        // a quarter turn in (μa, b): (1, 0) -> (0, -1)
        assert!((2.0 * next.a[0]).abs() < 1e-15);
        assert_relative_eq!(next.b[0], -1.0, epsilon = 1e-15);
        let m = modal_multiplier(2.0, 1.0);
        assert_relative_eq!(m.alpha, std::f64::consts::FRAC_PI_2, epsilon = 1e-15);
        assert_relative_eq!(m.cos2, 0.5);
    }

    #[test]
    fn multiplier_limits() {
        let m = modal_multiplier(1e-9, 0.1);
        assert_relative_eq!(m.alpha, 1e-9, max_relative = 1e-12);
        assert_relative_eq!(m.cos2, 1.0);
        for mu in [0.1, 1.0, 10.0, 1e3, 1e8] {
            let m = modal_multiplier(mu, 0.5);
            assert!(m.alpha * 0.5 < std::f64::consts::PI && m.alpha > 0.0);
        }
    }

    #[test]
    fn wrong_scheme_is_rejected() {
        let sys = ModalSystem::undamped(vec![1.0]).unwrap();
        let solver = factorize(&sys, &SchemeConfig::damped_viscous(0.1, 1.0)).unwrap();
        let z = ModalState::zeros(1);
        assert!(solver.step_midpoint(&z).is_err());
        assert!(solver.step_viscous_conservative(0, &z).is_err());
        assert!(solver.step(0, &ModalState::zeros(2)).is_err());
    }

    #[test]
    fn run_constant_when_nothing_dissipates() {
        let sys = ModalSystem::undamped(vec![1.0, 9.0, 25.0]).unwrap();
        let solver = factorize(&sys, &SchemeConfig::midpoint(0.1, 5.0)).unwrap();
        let z = ModalState::new(vec![0.3, -0.1, 0.2], vec![1.0, 0.0, -0.5]).unwrap();
        let trace = solver.run(&z, 0.0).unwrap();
        assert_eq!(trace.points.len(), 52);
        for p in &trace.points {
            assert_relative_eq!(p.energy, trace.e0, max_relative = 1e-13);
        }
        assert!(trace.identity_ok);
    }

    #[test]
    fn ensemble_matches_single_steps() {
        let sys = random_damped(12, 8);
        let cfg = SchemeConfig::damped_viscous(0.03, 1.0);
        let solver = factorize(&sys, &cfg).unwrap();
        let ens = solver.ensemble().unwrap();
        let states: Vec<_> = (0..3).map(|s| random_state(12, 40 + s)).collect();
        let mut y = ens.pack(&states).unwrap();
        let terms = ens.advance_observed(&mut y);
        for (c, s) in states.iter().enumerate() {
            let rec = solver.step(0, s).unwrap();
            let yc = rec.z_next.to_energy_coords(sys.mu());
            assert!((y.column(c) - yc).amax() < 1e-13);
            assert_relative_eq!(terms.observed[c], rec.observed, max_relative = 1e-11);
            assert_relative_eq!(terms.visc1[c], rec.visc1, max_relative = 1e-12);
            assert_relative_eq!(terms.visc2_full[c], 2.0 * rec.visc2, max_relative = 1e-12);
        }
    }

    #[test]
    fn block_ensemble_matches_full_ensemble() {
        let p = crate::spectra::ExampleParams::new(0.5, 1.0, 6);
        let sys = crate::spectra::build_coupled_waves(&p).unwrap();
        let comps = coupling_components(&sys);
        assert_eq!(comps.len(), 6);
        assert!(comps.iter().all(|c| c.len() == 2 && c[1] == c[0] + 1));
        let cfg = SchemeConfig::damped_viscous(0.02, 1.0);
        let full = factorize(&sys, &cfg).unwrap().ensemble().unwrap();
        let blocks = BlockEnsemble::new(&sys, &cfg).unwrap();
        let states: Vec<_> = (0..4).map(|s| random_state(12, 70 + s)).collect();
        let mut y = full.pack(&states).unwrap();
        let mut b = blocks.pack(&states, sys.mu()).unwrap();
        assert_eq!(blocks.join(&b), y);
        for _ in 0..25 {
            let tf = full.advance_observed(&mut y);
            let tb = blocks.advance_observed(&mut b);
            assert!((&tf.observed - &tb.observed).amax() < 1e-13);
            assert!((&tf.visc1 - &tb.visc1).amax() < 1e-13);
        }
        assert!((blocks.join(&b) - &y).amax() < 1e-12);
        assert!((blocks.energies(&b) - full.energies(&y)).amax() < 1e-12);
        assert!((blocks.weak_norms_sq(&b, 0.0) - full.weak_norms_sq(&y, 0.0)).amax() < 1e-12);

        let dense = random_damped(5, 3);
        assert_eq!(coupling_components(&dense).len(), 1);
    }
}
