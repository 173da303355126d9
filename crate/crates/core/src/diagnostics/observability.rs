//! Observability functional of the conservative viscous scheme and the
//! high-frequency estimates that feed it.
//!
//! For a solution `u^k` of the conservative viscous scheme, the right-hand
//! side collected over `k = 0..⌊T/Δt⌋` is
//!
//! ```text
//! Δt Σ ‖B*(u^k + ũ^{k+1})/2‖²_Y + Δt Σ Δt²‖Au^{k+1}‖²_H + Δt Σ Δt⁵‖A²u^{k+1}‖²_H
//! ```
//!
//! and the ratio against `‖u⁰‖²_{X_{−β}×X_{−β−1/2}}` is the empirical
//! observability constant.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{is_high, random_state, Band};
use crate::error::{invalid, Error, Result};
use crate::modal::{ModalState, ModalSystem};
use crate::scheme::{step_count, BlockEnsemble, SchemeConfig};
use crate::spectra::{check_gap, delta0};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservabilityReport {
    pub beta: f64,
    pub dt: f64,
    pub t_star: f64,
    /// Number of summed steps, `⌊T/Δt⌋ + 1`.
    pub steps: usize,
    pub weak_norm_sq: f64,
    pub damp_sum: f64,
    pub visc_sum1: f64,
    pub visc_sum2: f64,
    pub ratio: f64,
}

impl ObservabilityReport {
    pub fn rhs_total(&self) -> f64 {
        self.damp_sum + self.visc_sum1 + self.visc_sum2
    }

    pub fn viscous_ratio(&self) -> f64 {
        (self.visc_sum1 + self.visc_sum2) / self.weak_norm_sq
    }
}

/// Runs the conservative viscous scheme on many initial states at once.
pub fn observability_batch(
    sys: &ModalSystem,
    states: &[ModalState],
    beta: f64,
    dt: f64,
    t_star: f64,
) -> Result<Vec<ObservabilityReport>> {
    observability_batch_with(sys, states, beta, SchemeConfig::conservative_viscous(dt, t_star))
}

fn observability_batch_with(
    sys: &ModalSystem,
    states: &[ModalState],
    beta: f64,
    cfg: SchemeConfig,
) -> Result<Vec<ObservabilityReport>> {
    let ens = BlockEnsemble::new(sys, &cfg)?;
    let mut y = ens.pack(states, sys.mu())?;
    let weak = ens.weak_norms_sq(&y, beta);
    if weak.iter().any(|&w| !(w > 0.0)) {
        return Err(Error::UndefinedRatio("initial state has zero weak norm"));
    }
    let m = states.len();
    let steps = step_count(cfg.t_final, cfg.dt) + 1;
    let (mut damp, mut v1, mut v2) = (DVector::zeros(m), DVector::zeros(m), DVector::zeros(m));
    for _ in 0..steps {
        let t = ens.advance_observed(&mut y);
        damp += t.observed;
        v1 += t.visc1;
        v2 += t.visc2_full;
    }
    Ok((0..m)
        .map(|c| ObservabilityReport {
            beta,
            dt: cfg.dt,
            t_star: cfg.t_final,
            steps,
            weak_norm_sq: weak[c],
            damp_sum: damp[c],
            visc_sum1: v1[c],
            visc_sum2: v2[c],
            ratio: (damp[c] + v1[c] + v2[c]) / weak[c],
        })
        .collect())
}

pub fn observability_functional(
    sys: &ModalSystem,
    u0: &ModalState,
    beta: f64,
    dt: f64,
    t_star: f64,
) -> Result<ObservabilityReport> {
    observability_batch(sys, std::slice::from_ref(u0), beta, dt, t_star).map(|mut v| v.remove(0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservabilityOptions {
    /// Overrides the observation time from the gap audit.
    pub t_star: Option<f64>,
    /// Low-pass variant keeps modes with `μ ≤ δ/Δt`.
    pub delta: f64,
    pub viscosity: bool,
    /// Declared uniformity factor between the per-Δt minima.
    pub factor: f64,
}

impl Default for ObservabilityOptions {
    fn default() -> Self {
        ObservabilityOptions {
            t_star: None,
            delta: 1.0,
            viscosity: true,
            factor: 4.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservabilityRow {
    pub dt: f64,
    pub t_star: f64,
    pub gamma: f64,
    pub gamma1: f64,
    pub delta: f64,
    pub delta0: f64,
    pub cutoff: f64,
    pub trials: usize,
    pub min_ratio: f64,
    pub max_ratio: f64,
    pub min_ratio_lowpass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservabilityStudy {
    pub beta: f64,
    pub seed: u64,
    pub rows: Vec<ObservabilityRow>,
    /// Max over min of the per-Δt minimum ratios.
    pub spread: f64,
    pub spread_lowpass: f64,
    pub factor: f64,
    pub uniform: bool,
}

fn spread(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let lo = values.clone().fold(f64::INFINITY, f64::min);
    let hi = values.fold(0.0, f64::max);
    if lo > 0.0 {
        hi / lo
    } else {
        f64::INFINITY
    }
}

/// Minimum observability ratio per Δt over `trials` random initial states,
/// both unrestricted and low-pass filtered at `δ/Δt`.
pub fn observability_constant_study(
    sys: &ModalSystem,
    beta: f64,
    dt_list: &[f64],
    trials: usize,
    seed: u64,
    opts: &ObservabilityOptions,
) -> Result<ObservabilityStudy> {
    if dt_list.is_empty() {
        return Err(invalid("dt_list", "must not be empty"));
    }
    if trials == 0 {
        return Err(invalid("trials", "must be positive"));
    }
    let audit = check_gap(sys);
    let t_star = match opts.t_star {
        Some(t) => t,
        None => audit.t_star()?,
    };
    let mut rows = Vec::with_capacity(dt_list.len());
    for &dt in dt_list {
        let cutoff = opts.delta / dt;
        let mut states: Vec<ModalState> = (0..trials)
            .map(|i| random_state(sys, seed, i as u64, Band::All))
            .collect();
        let lowpass: Vec<ModalState> = (0..trials)
            .map(|i| random_state(sys, seed, i as u64, Band::Low(cutoff)))
            .collect();
        if lowpass.iter().any(|s| sys.energy(s).map_or(true, |e| e == 0.0)) {
            return Err(invalid("delta", format!("cutoff {cutoff} retains no modes")));
        }
        states.extend(lowpass);
        let mut cfg = SchemeConfig::conservative_viscous(dt, t_star);
        cfg.viscosity = opts.viscosity;
        let reports = observability_batch_with(sys, &states, beta, cfg)?;
        let (plain, low) = reports.split_at(trials);
        let min_of = |r: &[ObservabilityReport]| r.iter().map(|x| x.ratio).fold(f64::INFINITY, f64::min);
        rows.push(ObservabilityRow {
            dt,
            t_star,
            gamma: audit.gamma,
            gamma1: audit.gamma1,
            delta: opts.delta,
            delta0: delta0(&audit, dt),
            cutoff,
            trials,
            min_ratio: min_of(plain),
            max_ratio: plain.iter().map(|x| x.ratio).fold(0.0, f64::max),
            min_ratio_lowpass: min_of(low),
        });
    }
    let s = spread(rows.iter().map(|r| r.min_ratio));
    let s_low = spread(rows.iter().map(|r| r.min_ratio_lowpass));
    Ok(ObservabilityStudy {
        beta,
        seed,
        uniform: s <= opts.factor && s_low <= opts.factor,
        spread: s,
        spread_lowpass: s_low,
        factor: opts.factor,
        rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InverseInequality {
    pub dt: f64,
    pub delta: f64,
    pub cutoff: f64,
    pub beta: f64,
    pub high_modes: usize,
    /// `min Δt‖Ay‖_H/‖y‖_H` over high basis states; `None` when vacuous.
    pub min_ratio_h: Option<f64>,
    /// Same quotient in the `X_{−β}×X_{−β−1/2}` norm.
    pub min_ratio_weak: Option<f64>,
    pub holds: bool,
}

/// `Δt‖Az‖/‖z‖` in the `H` norm and in the weak pair norm at `beta`.
pub fn rayleigh_ratios(sys: &ModalSystem, z: &ModalState, dt: f64, beta: f64) -> Result<(f64, f64)> {
    let az = sys.apply_a(z)?;
    let h = dt * sys.norm_h(&az)? / sys.norm_h(z)?;
    let w = dt * sys.norm_pair(&az, beta)? / sys.norm_pair(z, beta)?;
    Ok((h, w))
}

/// Checks `Δt‖Ay‖ ≥ δ‖y‖` over the modes above `δ/Δt`, on displacement and
/// velocity basis states. Rounding of the two norms is allowed a few ulps.
pub fn inverse_inequality_check(sys: &ModalSystem, dt: f64, delta: f64, beta: f64) -> Result<InverseInequality> {
    if !(dt > 0.0 && delta > 0.0) {
        return Err(invalid("dt/delta", "must be positive"));
    }
    let cutoff = delta / dt;
    let high: Vec<usize> = (0..sys.dim()).filter(|&j| sys.mu()[j] > cutoff).collect();
    let (mut min_h, mut min_w): (Option<f64>, Option<f64>) = (None, None);
    for &j in &high {
        for z in [sys.displacement_mode(j)?, sys.velocity_mode(j)?] {
            let (h, w) = rayleigh_ratios(sys, &z, dt, beta)?;
            min_h = Some(min_h.map_or(h, |m| m.min(h)));
            min_w = Some(min_w.map_or(w, |m| m.min(w)));
        }
    }
    let floor = delta * (1.0 - 8.0 * f64::EPSILON);
    let holds = min_h.map_or(true, |m| m >= floor) && min_w.map_or(true, |m| m >= floor);
    Ok(InverseInequality {
        dt,
        delta,
        cutoff,
        beta,
        high_modes: high.len(),
        min_ratio_h: min_h,
        min_ratio_weak: min_w,
        holds,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionReport {
    pub dt: f64,
    pub delta: f64,
    pub beta: f64,
    /// `1/(1 + 2Δtδ²)`.
    pub bound: f64,
    /// Per-step weak-norm ratios (the max over states for a batch).
    pub ratios: Vec<f64>,
    pub max_ratio: f64,
    pub holds: bool,
}

/// Weak norms below this are treated as underflowed.
const NORM_FLOOR: f64 = 1e-250;

/// Per-step contraction of the conservative viscous scheme on states that
/// live above the cutoff `δ/Δt`.
pub fn high_freq_contraction_batch(
    sys: &ModalSystem,
    states: &[ModalState],
    beta: f64,
    dt: f64,
    delta: f64,
    steps: usize,
) -> Result<ContractionReport> {
    if !(delta > 0.0) {
        return Err(invalid("delta", format!("must be positive, got {delta}")));
    }
    let cutoff = delta / dt;
    for s in states {
        sys.check_state(s)?;
        if !is_high(sys, s, cutoff) {
            return Err(invalid("u0_high", format!("state has components with mu <= {cutoff}")));
        }
    }
    let bound = 1.0 / (1.0 + 2.0 * dt * delta * delta);
    let cfg = SchemeConfig::conservative_viscous(dt, dt);
    let ens = BlockEnsemble::new(sys, &cfg)?;
    let mut y = ens.pack(states, sys.mu())?;
    let mut prev = ens.weak_norms_sq(&y, beta);
    let mut ratios = Vec::with_capacity(steps);
    for _ in 0..steps {
        if prev.iter().all(|&w| w < NORM_FLOOR) {
            break;
        }
        ens.advance(&mut y);
        let next = ens.weak_norms_sq(&y, beta);
        let worst = prev
            .iter()
            .zip(next.iter())
            .filter(|(&p, _)| p >= NORM_FLOOR)
            .map(|(&p, &q)| q / p)
            .fold(0.0, f64::max);
        ratios.push(worst);
        prev = next;
    }
    let max_ratio = ratios.iter().copied().fold(0.0, f64::max);
    Ok(ContractionReport {
        dt,
        delta,
        beta,
        bound,
        holds: max_ratio <= bound + 1e-12,
        max_ratio,
        ratios,
    })
}

pub fn high_freq_contraction(
    sys: &ModalSystem,
    u0_high: &ModalState,
    beta: f64,
    dt: f64,
    delta: f64,
    steps: usize,
) -> Result<ContractionReport> {
    high_freq_contraction_batch(sys, std::slice::from_ref(u0_high), beta, dt, delta, steps)
}

/// Viscosity sums over `[0, T*]` against the weak norm of a high state.
pub fn high_freq_observability(
    sys: &ModalSystem,
    u0_high: &ModalState,
    beta: f64,
    dt: f64,
    delta: f64,
    t_star: f64,
) -> Result<f64> {
    if !is_high(sys, u0_high, delta / dt) {
        return Err(invalid("u0_high", "state has components below the cutoff"));
    }
    Ok(observability_functional(sys, u0_high, beta, dt, t_star)?.viscous_ratio())
}
