//! Time semi-discrete approximations of damped second-order systems with
//! polynomially decaying energy.
//!
//! The crate works on modal truncations ([`modal::ModalSystem`]) and
//! provides the viscous two-stage scheme and its conservative and midpoint
//! relatives ([`scheme`]), the two coupled-wave example spectra
//! ([`spectra`]), empirical constants for discrete Ingham-type inequalities
//! ([`ingham`]), and the observability and decay studies built on top of
//! them ([`diagnostics`]).

pub mod diagnostics;
pub mod error;
pub mod ingham;
pub mod modal;
pub mod scheme;
pub mod spectra;

pub use error::{Error, Result};
pub use modal::{Branch, GradedLevel, ModalState, ModalSystem, ModeLabel};
pub use scheme::{
    factorize, modal_multiplier, BlockEnsemble, EnergyTrace, SchemeConfig, SchemeSolver, StepRecord,
};
