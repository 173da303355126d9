//! Empirical constants of discrete Ingham-type inequalities.
//!
//! For frequencies `ω_k` and coefficients `x_k`, the sampled exponential sum
//!
//! ```text
//! S(t) = σ Σ_{j=−J..J} |Σ_k x_k e^{iω_k(t + jσ)}|²
//! ```
//!
//! is compared with `Σ|x_k|²` (isolated frequencies) or with the clustered
//! form [`q_form`]. The theorems only assert that two-sided constants exist;
//! here they are estimated by the min/max ratio over seeded random draws,
//! plus adversarial draws that cancel inside close pairs.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, invalid, Error, Result};
use crate::spectra::{partition_clusters, Cluster, Partition};

fn default_trials() -> usize {
    1000
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InghamConfig {
    /// Sampling step `σ` (or `σ₁` for the clustered inequality).
    pub sigma: f64,
    /// Samples run over `j = −J..J`.
    pub j: usize,
    /// Gap `γ` (or `γ₁`) the configuration is built for.
    pub gap: f64,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    /// Append pair-canceling draws to the random ones.
    #[serde(default = "default_true")]
    pub adversarial: bool,
}

impl InghamConfig {
    pub fn new(sigma: f64, j: usize, gap: f64, trials: usize, seed: u64) -> Result<Self> {
        let cfg = InghamConfig {
            sigma,
            j,
            gap,
            trials,
            seed,
            adversarial: true,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Smallest admissible configuration whose support window keeps every
    /// frequency: `σ = π/(ω_max + γ)`, `J = ⌊π/(γσ)⌋ + 1`.
    pub fn covering(freqs: &[f64], gap: f64, trials: usize, seed: u64) -> Result<Self> {
        let w_max = freqs.iter().fold(0.0_f64, |m, w| m.max(w.abs()));
        if !(gap > 0.0) {
            return Err(invalid("gap", format!("must be positive, got {gap}")));
        }
        let (sigma, j) = if gap.is_finite() {
            let sigma = PI / (w_max + gap);
            (sigma, (PI / (gap * sigma)).floor() as usize + 1)
        } else {
            (PI / (2.0 * w_max.max(1.0)), 1)
        };
        Self::new(sigma, j, gap, trials, seed)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(invalid("sigma", format!("must be positive, got {}", self.sigma)));
        }
        if self.j == 0 {
            return Err(invalid("J", "must be a positive integer"));
        }
        if self.trials == 0 {
            return Err(invalid("trials", "must be positive"));
        }
        if !(self.gap > 0.0) {
            return Err(invalid("gap", format!("must be positive, got {}", self.gap)));
        }
        if self.gap.is_finite() {
            let limit = PI / self.gap;
            if self.sigma > limit * (1.0 + 1e-15) {
                return Err(invalid("sigma", format!("{} exceeds pi/gap = {limit}", self.sigma)));
            }
            if self.j as f64 * self.sigma <= limit {
                return Err(invalid(
                    "J",
                    format!("J*sigma = {} must exceed pi/gap = {limit}", self.j as f64 * self.sigma),
                ));
            }
        }
        Ok(())
    }

    /// Frequencies at or beyond this modulus must carry zero coefficients.
    pub fn support_limit(&self) -> f64 {
        if self.gap.is_finite() {
            PI / self.sigma - self.gap / 2.0
        } else {
            PI / self.sigma
        }
    }

    pub fn sample_count(&self) -> usize {
        2 * self.j + 1
    }

    pub fn sample_times(&self, t: f64) -> impl Iterator<Item = f64> + '_ {
        let j = self.j as i64;
        (-j..=j).map(move |i| t + i as f64 * self.sigma)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InghamEstimate {
    pub c_lo: f64,
    pub c_hi: f64,
    /// Coefficients passing the support condition.
    pub n_active: usize,
    pub zeroed: usize,
    /// Number of evaluated draws (random plus adversarial).
    pub draws: usize,
    pub t: f64,
}

/// Indices passing the support condition of `cfg`.
pub fn active_support(freqs: &[f64], cfg: &InghamConfig) -> Vec<usize> {
    let limit = cfg.support_limit();
    (0..freqs.len()).filter(|&k| freqs[k].abs() < limit).collect()
}

/// `σ Σ_j |Σ_k x_k e^{iω_k(t+jσ)}|²` without any support restriction.
pub fn sampled_energy(freqs: &[f64], coeffs: &[Complex64], sigma: f64, j: usize, t: f64) -> f64 {
    let j = j as i64;
    let mut total = 0.0;
    for i in -j..=j {
        let s = t + i as f64 * sigma;
        let sum: Complex64 = freqs
            .iter()
            .zip(coeffs)
            .map(|(&w, &x)| x * Complex64::from_polar(1.0, w * s))
            .sum();
        total += sum.norm_sqr();
    }
    sigma * total
}

fn zero_unsupported(freqs: &[f64], coeffs: &[Complex64], cfg: &InghamConfig) -> (Vec<Complex64>, usize) {
    let limit = cfg.support_limit();
    let mut zeroed = 0;
    let kept = freqs
        .iter()
        .zip(coeffs)
        .map(|(&w, &x)| {
            if w.abs() >= limit && x != Complex64::new(0.0, 0.0) {
                zeroed += 1;
                Complex64::new(0.0, 0.0)
            } else {
                x
            }
        })
        .collect();
    (kept, zeroed)
}

/// Ratio of the sampled sum to `Σ|x_k|²`; coefficients violating the support
/// condition are zeroed first (with a warning).
pub fn ingham_ratio_scalar(freqs: &[f64], coeffs: &[Complex64], cfg: &InghamConfig, t: f64) -> Result<f64> {
    check_len("Ingham coefficients", freqs.len(), coeffs.len())?;
    cfg.validate()?;
    let (x, zeroed) = zero_unsupported(freqs, coeffs, cfg);
    if zeroed > 0 {
        log::warn!("{zeroed} coefficients violate the support condition and were zeroed");
    }
    let denom: f64 = x.iter().map(|c| c.norm_sqr()).sum();
    if denom == 0.0 {
        return Err(Error::UndefinedRatio("no coefficient survives the support condition"));
    }
    Ok(sampled_energy(freqs, &x, cfg.sigma, cfg.j, t) / denom)
}

/// `Q(x) = Σ_{isolated} |x_k|² + Σ_{pairs} |x_k + x_{k+1}|² + g²(|x_k|² + |x_{k+1}|²)`
/// with `g = ω_{k+1} − ω_k`.
pub fn q_form(freqs: &[f64], coeffs: &[Complex64], partition: &Partition) -> Result<f64> {
    check_len("Q-form coefficients", freqs.len(), coeffs.len())?;
    if !partition.covers(freqs.len()) {
        return Err(invalid("partition", "does not cover the frequency family"));
    }
    let mut q = 0.0;
    for c in &partition.clusters {
        match *c {
            Cluster::Single { index } => q += coeffs[index].norm_sqr(),
            Cluster::Pair { first } => {
                let (a, b) = (coeffs[first], coeffs[first + 1]);
                let g = freqs[first + 1] - freqs[first];
                q += (a + b).norm_sqr() + g * g * (a.norm_sqr() + b.norm_sqr());
            }
        }
    }
    Ok(q)
}

/// `Σ ‖B_n⁻¹ C_n‖²` for `Y`-valued coefficients, with `B_n⁻¹ = [[1, 1], [0, g]]`
/// on pairs and the identity on isolated modes; `‖v‖²_Y = vᵀ G v`.
pub fn cluster_seminorm(
    freqs: &[f64],
    coeffs: &[DVector<f64>],
    gram: &DMatrix<f64>,
    partition: &Partition,
) -> Result<f64> {
    check_len("seminorm coefficients", freqs.len(), coeffs.len())?;
    if !gram.is_square() {
        return Err(invalid("gram", "must be square"));
    }
    for c in coeffs {
        check_len("Y-valued coefficient", gram.nrows(), c.len())?;
    }
    if !partition.covers(freqs.len()) {
        return Err(invalid("partition", "does not cover the frequency family"));
    }
    let ynorm = |v: &DVector<f64>| v.dot(&(gram * v));
    let mut total = 0.0;
    for c in &partition.clusters {
        match *c {
            Cluster::Single { index } => total += ynorm(&coeffs[index]),
            Cluster::Pair { first } => {
                let g = freqs[first + 1] - freqs[first];
                let top = &coeffs[first] + &coeffs[first + 1];
                let bottom = &coeffs[first + 1] * g;
                total += ynorm(&top) + ynorm(&bottom);
            }
        }
    }
    Ok(total)
}

/// Vector-valued ratio: `σ Σ_j ‖Σ_k x_k e^{iω_k(t+jσ)}‖²_Y / Σ_k ‖x_k‖²_Y`,
/// with `‖v‖²_Y = v* G v` for a real symmetric Gram matrix `G`.
pub fn ingham_ratio_vector(
    freqs: &[f64],
    coeffs: &[DVector<Complex64>],
    gram: &DMatrix<f64>,
    cfg: &InghamConfig,
    t: f64,
) -> Result<f64> {
    check_len("vector coefficients", freqs.len(), coeffs.len())?;
    cfg.validate()?;
    let m = gram.nrows();
    for c in coeffs {
        check_len("Y-valued coefficient", m, c.len())?;
    }
    let g = gram.map(|v| Complex64::new(v, 0.0));
    let ynorm = |v: &DVector<Complex64>| v.dotc(&(&g * v)).re;
    let limit = cfg.support_limit();
    let active: Vec<usize> = (0..freqs.len()).filter(|&k| freqs[k].abs() < limit).collect();
    let denom: f64 = active.iter().map(|&k| ynorm(&coeffs[k])).sum();
    if !(denom > 0.0) {
        return Err(Error::UndefinedRatio("no coefficient survives the support condition"));
    }
    let mut total = 0.0;
    for s in cfg.sample_times(t) {
        let mut sum = DVector::<Complex64>::zeros(m);
        for &k in &active {
            sum += &coeffs[k] * Complex64::from_polar(1.0, freqs[k] * s);
        }
        total += ynorm(&sum);
    }
    Ok(cfg.sigma * total / denom)
}

/// Sampled-exponential matrix `E_{jk} = e^{iω_k(t+jσ)}` over active columns.
fn exp_matrix(freqs: &[f64], active: &[usize], cfg: &InghamConfig, t: f64) -> DMatrix<Complex64> {
    let times: Vec<f64> = cfg.sample_times(t).collect();
    DMatrix::from_fn(times.len(), active.len(), |r, c| {
        Complex64::from_polar(1.0, freqs[active[c]] * times[r])
    })
}

fn random_draw(n: usize, seed: u64, trial: usize) -> DVector<Complex64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64);
    DVector::from_fn(n, |_, _| {
        Complex64::new(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal))
    })
}

/// Unit draws `x_k = 1, x_{k+1} = −1` for each consecutive active pair.
fn canceling_draws(n: usize) -> Vec<DVector<Complex64>> {
    (0..n.saturating_sub(1))
        .map(|k| {
            let mut x = DVector::zeros(n);
            x[k] = Complex64::new(1.0, 0.0);
            x[k + 1] = Complex64::new(-1.0, 0.0);
            x
        })
        .collect()
}

fn check_sorted(freqs: &[f64]) -> Result<()> {
    if freqs.is_empty() {
        return Err(invalid("freqs", "empty frequency family"));
    }
    if freqs.iter().any(|w| !w.is_finite()) {
        return Err(Error::NonFinite("Ingham frequencies"));
    }
    if freqs.windows(2).any(|w| w[1] < w[0]) {
        return Err(invalid("freqs", "frequencies must be ascending"));
    }
    Ok(())
}

/// Min/max over the draws of `σ‖Ex‖² / denom(x)`.
fn envelope(
    freqs: &[f64],
    cfg: &InghamConfig,
    t: f64,
    denom: impl Fn(&DVector<Complex64>) -> f64 + Sync,
) -> Result<InghamEstimate> {
    cfg.validate()?;
    check_sorted(freqs)?;
    let active = active_support(freqs, cfg);
    if active.is_empty() {
        return Err(Error::UndefinedRatio("no frequency passes the support condition"));
    }
    let zeroed = freqs.len() - active.len();
    if zeroed > 0 {
        log::warn!("{zeroed} frequencies lie outside the support window and carry zero coefficients");
    }
    let e = exp_matrix(freqs, &active, cfg, t);
    let n = active.len();
    let embed = |x: &DVector<Complex64>| {
        let mut full = DVector::zeros(freqs.len());
        for (c, &k) in active.iter().enumerate() {
            full[k] = x[c];
        }
        full
    };
    let ratio = |x: &DVector<Complex64>| -> f64 {
        let s = (&e * x).norm_squared();
        cfg.sigma * s / denom(&embed(x))
    };
    let mut ratios: Vec<f64> = (0..cfg.trials)
        .into_par_iter()
        .map(|trial| ratio(&random_draw(n, cfg.seed, trial)))
        .collect();
    if cfg.adversarial {
        ratios.extend(canceling_draws(n).iter().map(ratio));
    }
    if ratios.iter().any(|r| !r.is_finite()) {
        return Err(Error::NonFinite("Ingham ratio (zero denominator on a nonzero draw)"));
    }
    let c_lo = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let c_hi = ratios.iter().copied().fold(0.0, f64::max);
    Ok(InghamEstimate {
        c_lo,
        c_hi,
        n_active: n,
        zeroed,
        draws: ratios.len(),
        t,
    })
}

/// Empirical constants of the isolated-gap inequality at `t = 0`.
pub fn estimate_scalar(freqs: &[f64], cfg: &InghamConfig) -> Result<InghamEstimate> {
    estimate_scalar_at(freqs, cfg, 0.0)
}

pub fn estimate_scalar_at(freqs: &[f64], cfg: &InghamConfig, t: f64) -> Result<InghamEstimate> {
    envelope(freqs, cfg, t, |x| x.norm_squared())
}

/// Empirical constants of the clustered inequality: ratios against [`q_form`]
/// with pairs formed below `gap/2`.
pub fn estimate_clustered(freqs: &[f64], cfg: &InghamConfig) -> Result<InghamEstimate> {
    check_sorted(freqs)?;
    let threshold = if cfg.gap.is_finite() { 0.5 * cfg.gap } else { 0.0 };
    let partition = partition_clusters(freqs, threshold)?;
    envelope(freqs, cfg, 0.0, |x| {
        q_form(freqs, x.as_slice(), &partition).expect("partition covers the family")
    })
}

/// `t = 0` followed by `count` uniform shifts in `[0, 2π/gap]`.
pub fn shift_times(cfg: &InghamConfig, count: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0f_5417);
    let period = if cfg.gap.is_finite() { 2.0 * PI / cfg.gap } else { 2.0 * PI };
    std::iter::once(0.0)
        .chain((0..count).map(|_| rng.random_range(0.0..period)))
        .collect()
}
