//! Power-law decay fits and Δt-uniformity of the decay constant.
//!
//! Energies of the damped viscous scheme are compared with
//! `M (1+t)^{−p₀} ‖z⁰‖²_{D(A)}`, `p₀ = 1/(1+2β)`. A [`DecayFit`] reports the
//! least-squares exponent of `log E` against `log(1+t)` inside a window and
//! `M̂ = sup_k (1+t_k)^{p₀} E^k / ‖z⁰‖²_{D(A)}` over the whole trace.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::modal::{ModalState, ModalSystem};
use crate::scheme::{step_count, BlockEnsemble, EnergyTrace, SchemeConfig};
use crate::spectra::{check_gap, system_partition, Cluster};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    /// Fitted `p` in `E ≈ M(1+t)^{−p}`.
    pub exponent: f64,
    pub m_hat: f64,
    /// Theoretical exponent used for `m_hat`.
    pub p0: f64,
    pub fit_window: (f64, f64),
    pub r_squared: f64,
    pub points: usize,
}

fn theoretical_exponent(beta: f64) -> Result<f64> {
    if !(beta > -0.5 && beta.is_finite()) {
        return Err(invalid("beta", format!("need beta > -1/2, got {beta}")));
    }
    Ok(1.0 / (1.0 + 2.0 * beta))
}

/// Streaming version of [`decay_fit_series`]; feed `(t, E)` in time order.
#[derive(Debug, Clone)]
pub struct DecayAccumulator {
    p0: f64,
    window: (f64, f64),
    norm0_sq: f64,
    first_t: Option<f64>,
    last_t: f64,
    m_hat: f64,
    bad_in_window: bool,
    // sums of shifted log coordinates
    shift: Option<(f64, f64)>,
    n: usize,
    sx: f64,
    sy: f64,
    sxx: f64,
    sxy: f64,
    syy: f64,
}

impl DecayAccumulator {
    pub fn new(beta: f64, window: (f64, f64), norm0_sq: f64) -> Result<Self> {
        let p0 = theoretical_exponent(beta)?;
        if !(window.0 >= 0.0 && window.1 > window.0) {
            return Err(invalid("fit_window", format!("need 0 <= t_lo < t_hi, got {window:?}")));
        }
        if !(norm0_sq > 0.0 && norm0_sq.is_finite()) {
            return Err(Error::UndefinedRatio("initial D(A) norm is zero"));
        }
        Ok(DecayAccumulator {
            p0,
            window,
            norm0_sq,
            first_t: None,
            last_t: f64::NEG_INFINITY,
            m_hat: 0.0,
            bad_in_window: false,
            shift: None,
            n: 0,
            sx: 0.0,
            sy: 0.0,
            sxx: 0.0,
            sxy: 0.0,
            syy: 0.0,
        })
    }

    pub fn push(&mut self, t: f64, e: f64) {
        self.first_t.get_or_insert(t);
        self.last_t = t;
        let scaled = (1.0 + t).powf(self.p0) * e / self.norm0_sq;
        if scaled > self.m_hat || scaled.is_nan() {
            self.m_hat = scaled;
        }
        let eps = 1e-12 * self.window.1.max(1.0);
        if t < self.window.0 - eps || t > self.window.1 + eps {
            return;
        }
        if !(e > 0.0 && e.is_finite()) {
            self.bad_in_window = true;
            return;
        }
        let (x, y) = ((1.0 + t).ln(), e.ln());
        let (x0, y0) = *self.shift.get_or_insert((x, y));
        let (dx, dy) = (x - x0, y - y0);
        self.n += 1;
        self.sx += dx;
        self.sy += dy;
        self.sxx += dx * dx;
        self.sxy += dx * dy;
        self.syy += dy * dy;
    }

    pub fn m_hat(&self) -> f64 {
        self.m_hat
    }

    pub fn finish(&self) -> Result<DecayFit> {
        let eps = 1e-12 * self.window.1.max(1.0);
        let covers = self.first_t.is_some_and(|t0| t0 <= self.window.0 + eps)
            && self.last_t >= self.window.1 - eps;
        if !covers {
            return Err(invalid("fit_window", "trace does not cover the fit window"));
        }
        if self.bad_in_window {
            return Err(invalid("trace", "nonpositive energy inside the fit window"));
        }
        if self.n < 2 {
            return Err(invalid("fit_window", "fewer than two samples in the window"));
        }
        let n = self.n as f64;
        let cxx = self.sxx - self.sx * self.sx / n;
        let cxy = self.sxy - self.sx * self.sy / n;
        let cyy = self.syy - self.sy * self.sy / n;
        if !(cxx > 0.0) {
            return Err(invalid("fit_window", "window holds a single time value"));
        }
        let slope = cxy / cxx;
        let r_squared = if cyy > 0.0 { (cxy * cxy / (cxx * cyy)).min(1.0) } else { 1.0 };
        if !self.m_hat.is_finite() {
            return Err(Error::NonFinite("decay constant"));
        }
        Ok(DecayFit {
            exponent: -slope,
            m_hat: self.m_hat,
            p0: self.p0,
            fit_window: self.window,
            r_squared,
            points: self.n,
        })
    }
}

pub fn decay_fit_series(
    times: &[f64],
    energies: &[f64],
    norm0_sq: f64,
    beta: f64,
    window: (f64, f64),
) -> Result<DecayFit> {
    if times.len() != energies.len() {
        return Err(Error::DimensionMismatch {
            what: "decay series",
            expected: times.len(),
            actual: energies.len(),
        });
    }
    let mut acc = DecayAccumulator::new(beta, window, norm0_sq)?;
    for (&t, &e) in times.iter().zip(energies) {
        acc.push(t, e);
    }
    acc.finish()
}

pub fn decay_fit(trace: &EnergyTrace, beta: f64, window: (f64, f64)) -> Result<DecayFit> {
    let mut acc = DecayAccumulator::new(beta, window, trace.domain_norm_sq0)?;
    for p in &trace.points {
        acc.push(p.t, p.energy);
    }
    acc.finish()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FamilyMember {
    pub label: String,
    pub state: ModalState,
}

fn unit_domain(sys: &ModalSystem, s: ModalState) -> Result<ModalState> {
    let n = sys.norm_domain(&s)?;
    Ok(s.scaled(1.0 / n))
}

/// Unit-`D(A)` single modes (displacement and velocity), and the `±`
/// equal-energy combinations inside every 2-cluster.
pub fn worst_case_family(sys: &ModalSystem) -> Result<Vec<FamilyMember>> {
    let mut out = Vec::new();
    for j in 0..sys.dim() {
        out.push(FamilyMember {
            label: format!("disp:{}", sys.labels()[j]),
            state: unit_domain(sys, sys.displacement_mode(j)?)?,
        });
        out.push(FamilyMember {
            label: format!("vel:{}", sys.labels()[j]),
            state: unit_domain(sys, sys.velocity_mode(j)?)?,
        });
    }
    for c in system_partition(sys).clusters {
        let Cluster::Pair { first } = c else { continue };
        let (i, j) = (first, first + 1);
        for (kind, (si, sj)) in [
            ("disp", (sys.displacement_mode(i)?, sys.displacement_mode(j)?)),
            ("vel", (sys.velocity_mode(i)?, sys.velocity_mode(j)?)),
        ] {
            for sign in [1.0, -1.0] {
                let tag = if sign > 0.0 { '+' } else { '-' };
                out.push(FamilyMember {
                    label: format!("{kind}:{}{tag}{}", sys.labels()[i], sys.labels()[j]),
                    state: unit_domain(sys, si.add(&sj.scaled(sign)))?,
                });
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayOptions {
    pub t_final: f64,
    /// Defaults to `[T*/2, t_final]`.
    pub window: Option<(f64, f64)>,
    pub t_star: Option<f64>,
    /// Declared bound on `max M̂ / min M̂` across Δt.
    pub factor: f64,
    /// Smallest accepted envelope exponent, as a fraction of `p₀`.
    pub min_exponent_fraction: f64,
}

impl Default for DecayOptions {
    fn default() -> Self {
        DecayOptions {
            t_final: 200.0,
            window: None,
            t_star: None,
            factor: 4.0,
            min_exponent_fraction: 0.7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Uniform,
    NonUniform,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberFit {
    pub label: String,
    pub m_hat: f64,
    pub fit: Option<DecayFit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayRow {
    pub dt: f64,
    /// Fit of the family envelope `max_m E_m(t)/‖z_m⁰‖²_{D(A)}`.
    pub envelope: Option<DecayFit>,
    pub envelope_error: Option<String>,
    pub members: Vec<MemberFit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayStudy {
    pub beta: f64,
    pub p0: f64,
    pub t_final: f64,
    pub t_star: f64,
    pub window: (f64, f64),
    pub rows: Vec<DecayRow>,
    pub m_hat_min: f64,
    pub m_hat_max: f64,
    pub m_hat_ratio: f64,
    pub min_envelope_exponent: f64,
    pub factor: f64,
    pub min_exponent: f64,
    pub verdict: Verdict,
}

fn decay_row(
    sys: &ModalSystem,
    family: &[FamilyMember],
    beta: f64,
    dt: f64,
    t_final: f64,
    window: (f64, f64),
) -> Result<DecayRow> {
    let cfg = SchemeConfig::damped_viscous(dt, t_final);
    let ens = BlockEnsemble::new(sys, &cfg)?;
    let states: Vec<ModalState> = family.iter().map(|m| m.state.clone()).collect();
    let norms: DVector<f64> = DVector::from_iterator(
        family.len(),
        family.iter().map(|m| sys.norm_pair_sq(&m.state, -1.0)).collect::<Result<Vec<_>>>()?,
    );
    let mut accs = family
        .iter()
        .zip(norms.iter())
        .map(|(_, &n)| DecayAccumulator::new(beta, window, n))
        .collect::<Result<Vec<_>>>()?;
    let mut env = DecayAccumulator::new(beta, window, 1.0)?;
    let mut y = ens.pack(&states, sys.mu())?;
    let steps = step_count(t_final, dt) + 1;
    for k in 0..=steps {
        if k > 0 {
            ens.advance(&mut y);
        }
        let t = k as f64 * dt;
        let e = ens.energies(&y);
        let mut worst: f64 = 0.0;
        for (c, acc) in accs.iter_mut().enumerate() {
            acc.push(t, e[c]);
            worst = worst.max(e[c] / norms[c]);
        }
        env.push(t, worst);
    }
    let members = family
        .iter()
        .zip(&accs)
        .map(|(m, a)| MemberFit {
            label: m.label.clone(),
            m_hat: a.m_hat(),
            fit: a.finish().ok(),
        })
        .collect();
    let (envelope, envelope_error) = match env.finish() {
        Ok(f) => (Some(f), None),
        Err(e) => (None, Some(e.to_string())),
    };
    Ok(DecayRow {
        dt,
        envelope,
        envelope_error,
        members,
    })
}

/// Runs the damped viscous scheme from every family member for each Δt and
/// compares the envelope decay constants across Δt.
pub fn uniform_decay_study(
    sys: &ModalSystem,
    beta: f64,
    dt_list: &[f64],
    family: Option<&[FamilyMember]>,
    opts: &DecayOptions,
) -> Result<DecayStudy> {
    if dt_list.is_empty() {
        return Err(invalid("dt_list", "must not be empty"));
    }
    let p0 = theoretical_exponent(beta)?;
    let t_star = match opts.t_star {
        Some(t) => t,
        None => check_gap(sys).t_star()?,
    };
    let window = opts.window.unwrap_or((0.5 * t_star, opts.t_final));
    let owned;
    let family = match family {
        Some(f) => f,
        None => {
            owned = worst_case_family(sys)?;
            &owned
        }
    };
    if family.is_empty() {
        return Err(invalid("z0_family", "must not be empty"));
    }
    let rows = dt_list
        .iter()
        .map(|&dt| decay_row(sys, family, beta, dt, opts.t_final, window))
        .collect::<Result<Vec<_>>>()?;

    let fits: Vec<&DecayFit> = rows.iter().filter_map(|r| r.envelope.as_ref()).collect();
    let min_exponent = opts.min_exponent_fraction * p0;
    let m_hat_min = fits.iter().map(|f| f.m_hat).fold(f64::INFINITY, f64::min);
    let m_hat_max = fits.iter().map(|f| f.m_hat).fold(0.0, f64::max);
    let m_hat_ratio = if m_hat_min > 0.0 { m_hat_max / m_hat_min } else { f64::INFINITY };
    let min_envelope_exponent = fits.iter().map(|f| f.exponent).fold(f64::INFINITY, f64::min);
    let verdict = if fits.len() < rows.len() {
        Verdict::Inconclusive
    } else if m_hat_ratio <= opts.factor && min_envelope_exponent >= min_exponent {
        Verdict::Uniform
    } else {
        Verdict::NonUniform
    };
    Ok(DecayStudy {
        beta,
        p0,
        t_final: opts.t_final,
        t_star,
        window,
        rows,
        m_hat_min,
        m_hat_max,
        m_hat_ratio,
        min_envelope_exponent,
        factor: opts.factor,
        min_exponent,
        verdict,
    })
}
