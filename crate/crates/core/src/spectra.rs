//! Example spectra and audits of their spectral hypotheses.
//!
//! Two builders produce modal truncations of coupled wave systems on `(0,1)`
//! with the second component damped by `γ y_t`:
//!
//! * [`build_coupled_waves`]: internal coupling `α`, Dirichlet ends, with
//!   `η_{±,k} = k²π² ± α`;
//! * [`build_boundary_coupled_waves`]: coupling through `y_x(1) = α u(1)`,
//!   with `μ_{±,k} = π/2 + kπ ± arctan(α/μ_{±,k})`.
//!
//! The audits measure the pairwise gap, the 2-separated gap, the
//! observability lower bounds for isolated modes and for 2-clusters, and the
//! filtering cutoff `δ/Δt`.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::modal::{Branch, ModalSystem, ModeLabel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExampleParams {
    pub alpha: f64,
    pub gamma: f64,
    pub k_max: usize,
}

impl ExampleParams {
    pub fn new(alpha: f64, gamma: f64, k_max: usize) -> Self {
        ExampleParams { alpha, gamma, k_max }
    }

    fn validate(&self, alpha_max: f64, bound: &str) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < alpha_max) {
            return Err(invalid(
                "alpha",
                format!("{} violates 0 < alpha < {bound}, required for a skew-adjoint generator", self.alpha),
            ));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(invalid("gamma", format!("must be a nonnegative damping, got {}", self.gamma)));
        }
        if self.k_max == 0 {
            return Err(invalid("k_max", "need at least one mode per branch"));
        }
        Ok(())
    }
}

/// Internally coupled waves: `u_tt − u_xx + αy = 0`, `y_tt − y_xx + αu + γy_t = 0`.
///
/// Eigenfunctions `(sin kπx, ±sin kπx)` are X-orthonormal, so the damping
/// Gram matrix is block diagonal per `k` with blocks `(γ/2)[[1, −1], [−1, 1]]`.
pub fn build_coupled_waves(p: &ExampleParams) -> Result<ModalSystem> {
    p.validate(PI * PI, "pi^2")?;
    let n = 2 * p.k_max;
    let mut eta = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for k in 1..=p.k_max {
        let base = (k as f64 * PI).powi(2);
        eta.push(base - p.alpha);
        labels.push(ModeLabel::Branch { branch: Branch::Minus, k });
        eta.push(base + p.alpha);
        labels.push(ModeLabel::Branch { branch: Branch::Plus, k });
    }
    let sign = |l: &ModeLabel| match l {
        ModeLabel::Branch { branch, .. } => branch.sign(),
        ModeLabel::Index { .. } => 1.0,
    };
    let kof = |l: &ModeLabel| match l {
        ModeLabel::Branch { k, .. } => *k,
        ModeLabel::Index { j } => *j,
    };
    let d = DMatrix::from_fn(n, n, |i, j| {
        if kof(&labels[i]) == kof(&labels[j]) {
            0.5 * p.gamma * sign(&labels[i]) * sign(&labels[j])
        } else {
            0.0
        }
    });
    ModalSystem::new(eta, d, labels)
}

/// `sin(x)/x` with a series near the origin.
fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        let x2 = x * x;
        1.0 - x2 / 6.0 + x2 * x2 / 120.0
    } else {
        x.sin() / x
    }
}

/// `∫₀¹ sin(ax) sin(cx) dx = sin(a−c)/(2(a−c)) − sin(a+c)/(2(a+c))`,
/// continuous across `a = c`.
pub fn sine_overlap(a: f64, c: f64) -> f64 {
    0.5 * (sinc(a - c) - sinc(a + c))
}

/// One root of the boundary-coupled frequency equation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryMode {
    pub branch: Branch,
    pub k: usize,
    pub mu: f64,
    /// Normalization so that the eigenfunction pair has unit `L²(0,1)²` norm.
    pub b: f64,
    /// `|μ − (π/2 + kπ ± arctan(α/μ))|`.
    pub residual: f64,
    pub iterations: usize,
}

impl BoundaryMode {
    /// Sign of the first component; the second component is `+b sin(μx)`.
    fn first_sign(&self) -> f64 {
        match self.branch {
            Branch::Plus => -1.0,
            Branch::Minus => 1.0,
        }
    }
}

const FIXED_POINT_TOL: f64 = 1e-13;
const FIXED_POINT_MAX_ITER: usize = 200;

fn solve_boundary_frequency(branch: Branch, k: usize, alpha: f64) -> Result<BoundaryMode> {
    let centre = PI / 2.0 + k as f64 * PI;
    let s = branch.sign();
    // contraction factor of the map is at most α/μ² < 1
    let map = |mu: f64| centre + s * (alpha / mu).atan();
    let mut mu = centre;
    for it in 1..=FIXED_POINT_MAX_ITER {
        let next = map(mu);
        let step = (next - mu).abs();
        mu = next;
        if step <= FIXED_POINT_TOL {
            let overlap = sine_overlap(mu, mu);
            return Ok(BoundaryMode {
                branch,
                k,
                mu,
                b: 1.0 / (2.0 * overlap).sqrt(),
                residual: (mu - map(mu)).abs(),
                iterations: it,
            });
        }
    }
    Err(Error::NoConvergence {
        what: "boundary-coupled frequency fixed point",
        iterations: FIXED_POINT_MAX_ITER,
        residual: (mu - map(mu)).abs(),
    })
}

/// Frequencies of the boundary-coupled system in ascending order.
pub fn boundary_coupled_modes(p: &ExampleParams) -> Result<Vec<BoundaryMode>> {
    p.validate(1.0, "1")?;
    let mut modes = Vec::with_capacity(2 * p.k_max);
    for k in 1..=p.k_max {
        modes.push(solve_boundary_frequency(Branch::Minus, k, p.alpha)?);
        modes.push(solve_boundary_frequency(Branch::Plus, k, p.alpha)?);
    }
    modes.sort_by(|x, y| x.mu.total_cmp(&y.mu));
    Ok(modes)
}

/// `max |⟨φ_j, φ_m⟩_X − δ_jm|` over the boundary-coupled eigenfunctions.
pub fn boundary_orthogonality_defect(modes: &[BoundaryMode]) -> f64 {
    let mut worst: f64 = 0.0;
    for (i, mi) in modes.iter().enumerate() {
        for (j, mj) in modes.iter().enumerate().skip(i) {
            let g = mi.b
                * mj.b
                * (mi.first_sign() * mj.first_sign() + 1.0)
                * sine_overlap(mi.mu, mj.mu);
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g - target).abs());
        }
    }
    worst
}

/// Boundary-coupled waves: `u_tt − u_xx = 0`, `y_tt − y_xx + γy_t = 0`,
/// `y_x(1) = αu(1)`.
///
/// Eigenfunctions are `b(∓sin μx, sin μx)`; the damping Gram matrix is
/// `D_jm = γ b_j b_m ∫₀¹ sin(μ_j x) sin(μ_m x) dx`.
pub fn build_boundary_coupled_waves(p: &ExampleParams) -> Result<ModalSystem> {
    let modes = boundary_coupled_modes(p)?;
    let defect = boundary_orthogonality_defect(&modes);
    if defect > 1e-10 {
        log::warn!(
            "boundary-coupled eigenfunctions deviate from X-orthonormality by {defect:.3e}; \
             proceeding without re-orthogonalization"
        );
    }
    let n = modes.len();
    let d = DMatrix::from_fn(n, n, |i, j| {
        p.gamma * modes[i].b * modes[j].b * sine_overlap(modes[i].mu, modes[j].mu)
    });
    // force exact symmetry; the overlap formula is symmetric up to rounding
    let d = (&d + d.transpose()) * 0.5;
    let eta = modes.iter().map(|m| m.mu * m.mu).collect();
    let labels = modes
        .iter()
        .map(|m| ModeLabel::Branch { branch: m.branch, k: m.k })
        .collect();
    ModalSystem::new(eta, d, labels)
}

/// Grouping of sorted frequencies into isolated modes and 2-clusters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Cluster {
    Single { index: usize },
    /// Modes `first` and `first + 1`.
    Pair { first: usize },
}

impl Cluster {
    pub fn first(&self) -> usize {
        match *self {
            Cluster::Single { index } => index,
            Cluster::Pair { first } => first,
        }
    }

    pub fn indices(&self) -> Vec<usize> {
        match *self {
            Cluster::Single { index } => vec![index],
            Cluster::Pair { first } => vec![first, first + 1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub clusters: Vec<Cluster>,
}

impl Partition {
    pub fn isolated(n: usize) -> Self {
        Partition {
            clusters: (0..n).map(|index| Cluster::Single { index }).collect(),
        }
    }

    pub fn pair_count(&self) -> usize {
        self.clusters
            .iter()
            .filter(|c| matches!(c, Cluster::Pair { .. }))
            .count()
    }

    pub fn covers(&self, n: usize) -> bool {
        let mut seen = vec![false; n];
        for c in &self.clusters {
            for i in c.indices() {
                if i >= n || seen[i] {
                    return false;
                }
                seen[i] = true;
            }
        }
        seen.into_iter().all(|s| s)
    }
}

/// Greedy left-to-right pairing of consecutive frequencies closer than
/// `threshold`.
pub fn partition_clusters(freqs: &[f64], threshold: f64) -> Result<Partition> {
    if freqs.windows(2).any(|w| w[1] < w[0]) {
        return Err(invalid("freqs", "cluster partition needs ascending frequencies"));
    }
    let mut clusters = Vec::new();
    let mut i = 0;
    while i < freqs.len() {
        if i + 1 < freqs.len() && freqs[i + 1] - freqs[i] < threshold {
            clusters.push(Cluster::Pair { first: i });
            i += 2;
        } else {
            clusters.push(Cluster::Single { index: i });
            i += 1;
        }
    }
    Ok(Partition { clusters })
}

/// Gap constants of the (positive) frequencies of a system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapAudit {
    /// `min_{k≠n} |μ_k − μ_n|`; `+∞` for a single mode.
    pub min_pairwise_gap: f64,
    /// `min_k (μ_{k+2} − μ_k)`; `+∞` for fewer than three modes.
    pub weak_gap_2: f64,
    /// Candidate `γ` of the pairwise condition.
    pub gamma: f64,
    /// Candidate `γ₁ = weak_gap_2 / 2` of the 2-separated condition.
    pub gamma1: f64,
    /// True when no 2-clusters form, i.e. the pairwise condition is the
    /// operative hypothesis alongside the 2-separated one.
    pub pairwise_holds: bool,
    pub pair_count: usize,
    /// `2π/γ` when the pairwise hypothesis is operative.
    pub t0: Option<f64>,
    pub t1: Option<f64>,
    /// `2·max(applicable T₀, T₁)`.
    pub t_star: Option<f64>,
}

impl GapAudit {
    pub fn t_star(&self) -> Result<f64> {
        self.t_star
            .ok_or_else(|| invalid("t_star", "spectrum too small to define an observation time"))
    }

    /// Threshold below which consecutive frequencies are paired: `γ₁/2`.
    pub fn cluster_threshold(&self) -> f64 {
        if self.gamma1.is_finite() {
            0.5 * self.gamma1
        } else {
            0.0
        }
    }
}

pub fn gap_audit_freqs(freqs: &[f64]) -> Result<GapAudit> {
    let min_pairwise_gap = freqs
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::INFINITY, f64::min);
    let weak_gap_2 = freqs
        .windows(3)
        .map(|w| w[2] - w[0])
        .fold(f64::INFINITY, f64::min);
    let gamma1 = 0.5 * weak_gap_2;
    let threshold = if gamma1.is_finite() { 0.5 * gamma1 } else { 0.0 };
    let partition = partition_clusters(freqs, threshold)?;
    let pair_count = partition.pair_count();
    let pairwise_holds = pair_count == 0;
    let finite_pos = |g: f64| g.is_finite() && g > 0.0;
    let t0 = (pairwise_holds && finite_pos(min_pairwise_gap)).then(|| 2.0 * PI / min_pairwise_gap);
    let t1 = finite_pos(gamma1).then(|| 2.0 * PI / gamma1);
    let t_star = match (t0, t1) {
        (Some(a), Some(b)) => Some(2.0 * a.max(b)),
        (Some(a), None) | (None, Some(a)) => Some(2.0 * a),
        (None, None) => None,
    };
    Ok(GapAudit {
        min_pairwise_gap,
        weak_gap_2,
        gamma: min_pairwise_gap,
        gamma1,
        pairwise_holds,
        pair_count,
        t0,
        t1,
        t_star,
    })
}

pub fn check_gap(sys: &ModalSystem) -> GapAudit {
    let freqs: Vec<f64> = sys.mu().iter().copied().collect();
    gap_audit_freqs(&freqs).expect("system frequencies are sorted by construction")
}

/// Cluster partition of a system's frequencies under its own gap audit.
pub fn system_partition(sys: &ModalSystem) -> Partition {
    let audit = check_gap(sys);
    let freqs: Vec<f64> = sys.mu().iter().copied().collect();
    partition_clusters(&freqs, audit.cluster_threshold()).expect("sorted frequencies")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterBound {
    pub cluster: Cluster,
    /// `ω_{n+1} − ω_n` for pairs, 0 for isolated modes.
    pub gap: f64,
    /// Smallest singular value of `ξ ↦ B_n⁻¹Φ_nξ`, times `μ_n^{2β+1}`.
    pub theta: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservabilityBound {
    pub beta: f64,
    /// `min_j ‖B*φ_j‖_Y μ_j^{2β+1}`.
    pub theta_hat: f64,
    /// Minimum of [`ClusterBound::theta`] over non-degenerate clusters.
    pub cluster_theta_hat: f64,
    pub degenerate_clusters: usize,
    pub clusters: Vec<ClusterBound>,
}

/// Smallest eigenvalue of a symmetric 2×2 matrix.
fn sym2_min_eig(a: f64, b: f64, d: f64) -> f64 {
    let mean = 0.5 * (a + d);
    let rad = (0.25 * (a - d).powi(2) + b * b).sqrt();
    let hi = mean + rad;
    // det/λ_max avoids the cancellation in mean − rad
    if hi > 0.0 {
        (a * d - b * b) / hi
    } else {
        mean - rad
    }
}

/// Lower-bound constants for the single-mode and the clustered
/// observability conditions.
///
/// For a pair `(n, n+1)` with gap `g`, the clustered map uses the matrix
/// `[[1, 1], [0, g]]` applied to `(ξ₁ 𝓑*φ_n, ξ₂ 𝓑*φ_{n+1})`; its squared norm
/// is `ξᵀ (MᵀM ∘ D_cluster) ξ`, whose smallest eigenvalue gives the bound.
pub fn check_obs_lower_bound(sys: &ModalSystem, beta: f64) -> ObservabilityBound {
    let mu = sys.mu();
    let d = sys.damp_gram();
    let p = 2.0 * beta + 1.0;
    let theta_hat = (0..sys.dim())
        .map(|j| sys.bstar_norms()[j] * mu[j].powf(p))
        .fold(f64::INFINITY, f64::min);

    let partition = system_partition(sys);
    let mut clusters = Vec::with_capacity(partition.clusters.len());
    let mut degenerate_clusters = 0;
    for &c in &partition.clusters {
        let bound = match c {
            Cluster::Single { index } => ClusterBound {
                cluster: c,
                gap: 0.0,
                theta: sys.bstar_norms()[index] * mu[index].powf(p),
                degenerate: false,
            },
            Cluster::Pair { first } => {
                let (i, j) = (first, first + 1);
                let g = mu[j] - mu[i];
                if g <= 0.0 {
                    degenerate_clusters += 1;
                    ClusterBound {
                        cluster: c,
                        gap: g,
                        theta: 0.0,
                        degenerate: true,
                    }
                } else {
                    // MᵀM for M = [[1, 1], [0, g]] is [[1, 1], [1, 1 + g²]]
                    let a = d[(i, i)];
                    let b = d[(i, j)];
                    let dd = (1.0 + g * g) * d[(j, j)];
                    let lmin = sym2_min_eig(a, b, dd).max(0.0);
                    ClusterBound {
                        cluster: c,
                        gap: g,
                        theta: lmin.sqrt() * mu[i].powf(p),
                        degenerate: false,
                    }
                }
            }
        };
        clusters.push(bound);
    }
    let cluster_theta_hat = clusters
        .iter()
        .filter(|c| !c.degenerate)
        .map(|c| c.theta)
        .fold(f64::INFINITY, f64::min);
    ObservabilityBound {
        beta,
        theta_hat,
        cluster_theta_hat,
        degenerate_clusters,
        clusters,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterCutoff {
    pub dt: f64,
    pub delta: f64,
    /// `min(π − Δtγ/2, π − Δtγ₁/2)` over the finite audited gaps.
    pub delta0: f64,
    /// `δ/Δt`.
    pub cutoff: f64,
    pub retained: Vec<usize>,
}

pub fn delta0(audit: &GapAudit, dt: f64) -> f64 {
    [audit.gamma, audit.gamma1]
        .into_iter()
        .filter(|g| g.is_finite())
        .map(|g| PI - dt * g / 2.0)
        .fold(PI, f64::min)
}

pub fn filtering_cutoff(sys: &ModalSystem, dt: f64, delta: f64) -> Result<FilterCutoff> {
    if !(dt > 0.0) {
        return Err(invalid("dt", format!("must be positive, got {dt}")));
    }
    let audit = check_gap(sys);
    let d0 = delta0(&audit, dt);
    if !(delta > 0.0 && delta < d0) {
        return Err(invalid("delta", format!("{delta} is outside (0, delta0 = {d0})")));
    }
    let cutoff = delta / dt;
    Ok(FilterCutoff {
        dt,
        delta,
        delta0: d0,
        cutoff,
        retained: sys.low_modes(cutoff),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub label: ModeLabel,
    pub mu: f64,
    pub bstar_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub min_pairwise_gap: f64,
    pub weak_gap_2: f64,
    pub theta_hat: f64,
    pub cluster_theta_hat: f64,
    pub cutoff: f64,
    pub delta0: f64,
    pub gaps: GapAudit,
    pub bound: ObservabilityBound,
    pub filter: FilterCutoff,
    pub modes: Vec<ModeSummary>,
}

pub fn spectrum_report(sys: &ModalSystem, beta: f64, dt: f64, delta: f64) -> Result<SpectrumReport> {
    let gaps = check_gap(sys);
    let bound = check_obs_lower_bound(sys, beta);
    let filter = filtering_cutoff(sys, dt, delta)?;
    let modes = (0..sys.dim())
        .map(|j| ModeSummary {
            label: sys.labels()[j],
            mu: sys.mu()[j],
            bstar_norm: sys.bstar_norms()[j],
        })
        .collect();
    Ok(SpectrumReport {
        min_pairwise_gap: gaps.min_pairwise_gap,
        weak_gap_2: gaps.weak_gap_2,
        theta_hat: bound.theta_hat,
        cluster_theta_hat: bound.cluster_theta_hat,
        cutoff: filter.cutoff,
        delta0: filter.delta0,
        gaps,
        bound,
        filter,
        modes,
    })
}
