//! Subcommand drivers. Each returns the paths it wrote.

use std::path::{Path, PathBuf};

use polydecay::diagnostics::{
    decay_fit_series, observability_constant_study, uniform_decay_study, DecayOptions, ObservabilityOptions,
};
use polydecay::ingham::{estimate_clustered, estimate_scalar, InghamConfig, InghamEstimate};
use polydecay::scheme::step_count;
use polydecay::spectra::{boundary_coupled_modes, check_gap, spectrum_report, ExampleParams};
use polydecay::factorize;
use serde::Serialize;

use crate::config::{ExperimentConfig, StudyKind, SystemSpec};
use crate::output::{trace_csv, write_atomic, write_json};
use crate::CliError;

#[derive(Serialize)]
struct TraceSummary<'a> {
    config: &'a ExperimentConfig,
    steps: usize,
    e0: f64,
    e_final: f64,
    telescoped_residual: f64,
    telescoped_tolerance: f64,
    max_step_residual: f64,
    step_tolerance: f64,
    identity_ok: bool,
}

pub fn cmd_trace(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    cfg.check_study(StudyKind::Trace)?;
    let sys = cfg.build_system()?;
    let z0 = cfg.initial_state(&sys)?;
    let solver = factorize(&sys, &cfg.scheme_config(cfg.single_dt()?))?;
    let trace = solver.run(&z0, cfg.study.beta)?;
    let prefix = &cfg.output.prefix;
    let csv = write_atomic(out, &format!("{prefix}_trace.csv"), trace_csv(&trace).as_bytes())?;
    let summary = TraceSummary {
        config: cfg,
        steps: trace.points.len() - 1,
        e0: trace.e0,
        e_final: trace.points.last().map_or(trace.e0, |p| p.energy),
        telescoped_residual: trace.telescoped_residual,
        telescoped_tolerance: trace.telescoped_tolerance,
        max_step_residual: trace.max_step_residual,
        step_tolerance: trace.step_tolerance,
        identity_ok: trace.identity_ok,
    };
    let json = write_json(out, &format!("{prefix}_trace.json"), &summary)?;
    if !trace.identity_ok {
        return Err(CliError::Numerical(format!(
            "energy identity violated: step residual {:.3e} (tol {:.3e}), telescoped {:.3e} (tol {:.3e})",
            trace.max_step_residual, trace.step_tolerance, trace.telescoped_residual, trace.telescoped_tolerance
        )));
    }
    Ok(vec![csv, json])
}

#[derive(Serialize)]
struct Report<'a, T: Serialize> {
    config: &'a ExperimentConfig,
    #[serde(flatten)]
    body: T,
}

#[derive(Serialize)]
struct SyntheticDecay {
    synthetic_exponent: f64,
    fit: polydecay::diagnostics::DecayFit,
}

pub fn cmd_decay(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    cfg.check_study(StudyKind::Decay)?;
    let t_final = cfg.scheme.t_final;
    let window = cfg.study.window.map(|[a, b]| (a, b));
    let name = format!("{}_decay.json", cfg.output.prefix);
    if let Some(p) = cfg.study.synthetic_exponent {
        let dt = cfg.dts()[0];
        let times: Vec<f64> = (0..=step_count(t_final, dt) + 1).map(|k| k as f64 * dt).collect();
        let energies: Vec<f64> = times.iter().map(|&t| (1.0 + t).powf(-p)).collect();
        let w = window.unwrap_or((0.5 * t_final, t_final));
        let fit = decay_fit_series(&times, &energies, 1.0, cfg.study.beta, w)?;
        let body = SyntheticDecay {
            synthetic_exponent: p,
            fit,
        };
        return Ok(vec![write_json(out, &name, &Report { config: cfg, body })?]);
    }
    let sys = cfg.build_system()?;
    let opts = DecayOptions {
        t_final,
        window,
        t_star: cfg.study.t_star,
        factor: cfg.study.factor,
        ..Default::default()
    };
    let study = uniform_decay_study(&sys, cfg.study.beta, &cfg.dts(), None, &opts)?;
    Ok(vec![write_json(out, &name, &Report { config: cfg, body: study })?])
}

pub fn cmd_observability(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    cfg.check_study(StudyKind::Observability)?;
    let sys = cfg.build_system()?;
    let opts = ObservabilityOptions {
        t_star: cfg.study.t_star,
        delta: cfg.study.delta,
        viscosity: cfg.scheme.viscosity,
        factor: cfg.study.factor,
    };
    let study = observability_constant_study(&sys, cfg.study.beta, &cfg.dts(), cfg.study.trials, cfg.study.seed, &opts)?;
    let name = format!("{}_observability.json", cfg.output.prefix);
    Ok(vec![write_json(out, &name, &Report { config: cfg, body: study })?])
}

#[derive(Serialize)]
struct SpectrumBody {
    report: polydecay::spectra::SpectrumReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    boundary_modes: Option<Vec<polydecay::spectra::BoundaryMode>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_fixed_point_residual: Option<f64>,
}

pub fn cmd_spectrum(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    cfg.check_study(StudyKind::SpectrumAudit)?;
    let sys = cfg.build_system()?;
    let report = spectrum_report(&sys, cfg.study.beta, cfg.dts()[0], cfg.study.delta)?;
    let boundary_modes = match &cfg.system {
        SystemSpec::BoundaryCoupledWaves { alpha, gamma, k_max } => {
            Some(boundary_coupled_modes(&ExampleParams::new(*alpha, *gamma, *k_max))?)
        }
        _ => None,
    };
    let max_fixed_point_residual = boundary_modes
        .as_ref()
        .map(|m| m.iter().map(|x| x.residual).fold(0.0, f64::max));
    let body = SpectrumBody {
        report,
        boundary_modes,
        max_fixed_point_residual,
    };
    let name = format!("{}_spectrum.json", cfg.output.prefix);
    Ok(vec![write_json(out, &name, &Report { config: cfg, body })?])
}

#[derive(Serialize)]
struct InghamCell {
    config: InghamConfig,
    estimate: InghamEstimate,
}

#[derive(Serialize)]
struct InghamBody {
    seed: u64,
    gamma: f64,
    gamma1: f64,
    /// Isolated-gap inequality built on the pairwise gap.
    scalar: InghamCell,
    /// Isolated-gap ratio on the clustered configuration, for comparison.
    scalar_clustered_config: InghamCell,
    clustered: InghamCell,
}

pub fn cmd_ingham(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    cfg.check_study(StudyKind::Ingham)?;
    let sys = cfg.build_system()?;
    let freqs: Vec<f64> = sys.mu().iter().copied().collect();
    let audit = check_gap(&sys);
    let (trials, seed) = (cfg.study.trials, cfg.study.seed);
    let make = |gap: f64| -> Result<InghamConfig, CliError> {
        Ok(match (cfg.study.sigma, cfg.study.j) {
            (Some(sigma), Some(j)) => InghamConfig::new(sigma, j, gap, trials, seed)?,
            (None, None) => InghamConfig::covering(&freqs, gap, trials, seed)?,
            _ => return Err(CliError::Config("study.sigma and study.j go together".into())),
        })
    };
    let scalar_cfg = make(audit.gamma)?;
    let gap1 = if audit.gamma1.is_finite() { audit.gamma1 } else { audit.gamma };
    let clustered_cfg = make(gap1)?;
    let body = InghamBody {
        seed,
        gamma: audit.gamma,
        gamma1: audit.gamma1,
        scalar: InghamCell {
            config: scalar_cfg,
            estimate: estimate_scalar(&freqs, &scalar_cfg)?,
        },
        scalar_clustered_config: InghamCell {
            config: clustered_cfg,
            estimate: estimate_scalar(&freqs, &clustered_cfg)?,
        },
        clustered: InghamCell {
            config: clustered_cfg,
            estimate: estimate_clustered(&freqs, &clustered_cfg)?,
        },
    };
    let name = format!("{}_ingham.json", cfg.output.prefix);
    Ok(vec![write_json(out, &name, &Report { config: cfg, body })?])
}
