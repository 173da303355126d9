//! Composite verification quantities built on top of the schemes.
//!
//! * [`observability`]: the discrete observability functional, the inverse
//!   inequality and high-frequency contraction;
//! * [`decay`]: power-law fits of energy traces and Δt-uniformity studies;
//! * [`lemma`]: the extremal scalar recursion behind the decay rate.

pub mod decay;
pub mod lemma;
pub mod observability;

pub use decay::{
    decay_fit, decay_fit_series, uniform_decay_study, worst_case_family, DecayAccumulator, DecayFit,
    DecayOptions, DecayStudy, FamilyMember, Verdict,
};
pub use lemma::{recursion_oracle, RecursionReport};
pub use observability::{
    high_freq_contraction, high_freq_contraction_batch, high_freq_observability,
    inverse_inequality_check, observability_batch, observability_constant_study,
    observability_functional, ContractionReport, InverseInequality, ObservabilityOptions,
    ObservabilityReport, ObservabilityStudy,
};

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::modal::{ModalState, ModalSystem};

/// Frequency band of a random initial state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "band", content = "cutoff", rename_all = "snake_case")]
pub enum Band {
    All,
    /// Modes with `μ ≤ cutoff`.
    Low(f64),
    /// Modes with `μ > cutoff`.
    High(f64),
}

impl Band {
    pub fn keeps(&self, mu: f64) -> bool {
        match *self {
            Band::All => true,
            Band::Low(c) => mu <= c,
            Band::High(c) => mu > c,
        }
    }
}

/// Random state with iid standard normal energy coordinates `(μ∘a, b)` on
/// the modes of `band`. Each `(seed, stream)` pair is an independent draw.
pub fn random_state(sys: &ModalSystem, seed: u64, stream: u64, band: Band) -> ModalState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let n = sys.dim();
    let mut y = DVector::zeros(2 * n);
    for i in 0..2 * n {
        let v: f64 = rng.sample(StandardNormal);
        if band.keeps(sys.mu()[i % n]) {
            y[i] = v;
        }
    }
    ModalState::from_energy_coords(&y, sys.mu())
}

/// Whether `state` vanishes on every mode with `μ ≤ cutoff`.
pub(crate) fn is_high(sys: &ModalSystem, state: &ModalState, cutoff: f64) -> bool {
    (0..sys.dim()).all(|j| sys.mu()[j] > cutoff || (state.a[j] == 0.0 && state.b[j] == 0.0))
}
