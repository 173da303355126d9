//! Experiment configuration, read from TOML.
//!
//! ```toml
//! [system]
//! type = "coupled_waves"        # boundary_coupled_waves | custom
//! alpha = 0.5
//! gamma = 1.0
//! k_max = 32
//!
//! [scheme]
//! dt = 0.01                     # or dt_list = [0.02, 0.01]
//! t_final = 20.0
//!
//! [init]
//! kind = "random"               # single_mode | cluster_pair | highpass
//! seed = 1
//!
//! [study]
//! kind = "trace"                # optional; must match the subcommand
//! beta = 0.0
//!
//! [output]
//! dir = "out"
//! prefix = "run"
//! ```

use std::path::PathBuf;

use nalgebra::DMatrix;
use polydecay::diagnostics::{random_state, Band};
use polydecay::spectra::{build_boundary_coupled_waves, build_coupled_waves, system_partition, Cluster, ExampleParams};
use polydecay::{ModalState, ModalSystem, SchemeConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: SystemSpec,
    pub scheme: SchemeSpec,
    #[serde(default)]
    pub init: InitSpec,
    #[serde(default)]
    pub study: StudySpec,
    #[serde(default)]
    pub output: OutputSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum SystemSpec {
    CoupledWaves { alpha: f64, gamma: f64, k_max: usize },
    BoundaryCoupledWaves { alpha: f64, gamma: f64, k_max: usize },
    Custom { eta: Vec<f64>, damp_gram: Vec<Vec<f64>> },
}

fn default_true() -> bool {
    true
}

fn default_tol() -> f64 {
    SchemeConfig::DEFAULT_SOLVE_TOL
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt_list: Option<Vec<f64>>,
    pub t_final: f64,
    #[serde(default = "default_true")]
    pub viscosity: bool,
    #[serde(default = "default_true")]
    pub damping: bool,
    #[serde(default = "default_tol")]
    pub solve_tol: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    #[default]
    Displacement,
    Velocity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitSpec {
    SingleMode {
        j: usize,
        #[serde(default)]
        component: Component,
    },
    Random {
        #[serde(default)]
        seed: u64,
    },
    /// The `k`-th 2-cluster (0-based) of the spectrum, `φ_n ± φ_{n+1}`.
    ClusterPair {
        k: usize,
        #[serde(default = "default_sign")]
        sign: f64,
        #[serde(default)]
        component: Component,
    },
    Highpass { seed: u64, cutoff: f64 },
}

fn default_sign() -> f64 {
    1.0
}

impl Default for InitSpec {
    fn default() -> Self {
        InitSpec::Random { seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StudyKind {
    Trace,
    Decay,
    Observability,
    Ingham,
    #[serde(alias = "spectrum")]
    SpectrumAudit,
}

impl StudyKind {
    pub fn name(self) -> &'static str {
        match self {
            StudyKind::Trace => "trace",
            StudyKind::Decay => "decay",
            StudyKind::Observability => "observability",
            StudyKind::Ingham => "ingham",
            StudyKind::SpectrumAudit => "spectrum",
        }
    }
}

fn default_trials() -> usize {
    200
}

fn default_delta() -> f64 {
    1.0
}

fn default_factor() -> f64 {
    4.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudySpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<StudyKind>,
    #[serde(default)]
    pub beta: f64,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_star: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<[f64; 2]>,
    #[serde(default = "default_factor")]
    pub factor: f64,
    /// Decay self-test: fit `E = (1+t)^{−p}` on the scheme grid instead of
    /// running a study.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic_exponent: Option<f64>,
    /// Ingham overrides of the covering `σ` and `J`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub j: Option<usize>,
}

impl Default for StudySpec {
    fn default() -> Self {
        StudySpec {
            kind: None,
            beta: 0.0,
            trials: default_trials(),
            seed: 0,
            delta: default_delta(),
            t_star: None,
            window: None,
            factor: default_factor(),
            synthetic_exponent: None,
            sigma: None,
            j: None,
        }
    }
}

fn default_prefix() -> String {
    "polydecay".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    #[serde(default = "default_prefix")]
    pub prefix: String,
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec {
            dir: None,
            prefix: default_prefix(),
        }
    }
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| config_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| config_err(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        match (&self.scheme.dt, &self.scheme.dt_list) {
            (Some(_), Some(_)) => return Err(config_err("scheme: give either dt or dt_list, not both")),
            (None, None) => return Err(config_err("scheme: dt or dt_list is required")),
            (None, Some(l)) if l.is_empty() => return Err(config_err("scheme: dt_list must not be empty")),
            _ => {}
        }
        let sys = self.build_system()?;
        for dt in self.dts() {
            self.scheme_config(dt).validate().map_err(|e| config_err(e.to_string()))?;
        }
        self.initial_state(&sys)?;
        if self.output.prefix.is_empty() || self.output.prefix.contains(['/', '\\']) {
            return Err(config_err("output.prefix must be a plain file name stem"));
        }
        Ok(())
    }

    pub fn dts(&self) -> Vec<f64> {
        match (&self.scheme.dt, &self.scheme.dt_list) {
            (Some(dt), _) => vec![*dt],
            (None, Some(l)) => l.clone(),
            (None, None) => Vec::new(),
        }
    }

    pub fn single_dt(&self) -> Result<f64, CliError> {
        match self.dts().as_slice() {
            [dt] => Ok(*dt),
            _ => Err(config_err("this subcommand needs a single scheme.dt")),
        }
    }

    pub fn scheme_config(&self, dt: f64) -> SchemeConfig {
        SchemeConfig {
            dt,
            t_final: self.scheme.t_final,
            viscosity: self.scheme.viscosity,
            damping: self.scheme.damping,
            solve_tol: self.scheme.solve_tol,
        }
    }

    pub fn build_system(&self) -> Result<ModalSystem, CliError> {
        let built = match &self.system {
            SystemSpec::CoupledWaves { alpha, gamma, k_max } => {
                build_coupled_waves(&ExampleParams::new(*alpha, *gamma, *k_max))
            }
            SystemSpec::BoundaryCoupledWaves { alpha, gamma, k_max } => {
                build_boundary_coupled_waves(&ExampleParams::new(*alpha, *gamma, *k_max))
            }
            SystemSpec::Custom { eta, damp_gram } => {
                let n = eta.len();
                if damp_gram.len() != n || damp_gram.iter().any(|r| r.len() != n) {
                    return Err(config_err(format!("system.damp_gram must be {n} x {n}")));
                }
                let d = DMatrix::from_fn(n, n, |i, j| damp_gram[i][j]);
                ModalSystem::from_parts(eta.clone(), d)
            }
        };
        built.map_err(|e| config_err(format!("system: {e}")))
    }

    pub fn initial_state(&self, sys: &ModalSystem) -> Result<ModalState, CliError> {
        let n = sys.dim();
        let mode = |j: usize, c: Component| {
            if j >= n {
                return Err(config_err(format!("init: mode index {j} out of range 0..{n}")));
            }
            let s = match c {
                Component::Displacement => sys.displacement_mode(j),
                Component::Velocity => sys.velocity_mode(j),
            };
            s.map_err(|e| config_err(e.to_string()))
        };
        match &self.init {
            InitSpec::SingleMode { j, component } => mode(*j, *component),
            InitSpec::Random { seed } => Ok(random_state(sys, *seed, 0, Band::All)),
            InitSpec::Highpass { seed, cutoff } => {
                let s = random_state(sys, *seed, 0, Band::High(*cutoff));
                if sys.energy(&s).unwrap_or(0.0) == 0.0 {
                    return Err(config_err(format!("init: no mode above cutoff {cutoff}")));
                }
                Ok(s)
            }
            InitSpec::ClusterPair { k, sign, component } => {
                let pairs: Vec<usize> = system_partition(sys)
                    .clusters
                    .into_iter()
                    .filter_map(|c| match c {
                        Cluster::Pair { first } => Some(first),
                        Cluster::Single { .. } => None,
                    })
                    .collect();
                let first = *pairs.get(*k).ok_or_else(|| {
                    config_err(format!("init: cluster {k} out of range ({} clusters)", pairs.len()))
                })?;
                if !(sign.abs() == 1.0) {
                    return Err(config_err("init.sign must be 1 or -1"));
                }
                Ok(mode(first, *component)?.add(&mode(first + 1, *component)?.scaled(*sign)))
            }
        }
    }

    /// Applies the global `--seed` override to every seeded block.
    pub fn override_seed(&mut self, seed: u64) {
        self.study.seed = seed;
        match &mut self.init {
            InitSpec::Random { seed: s } | InitSpec::Highpass { seed: s, .. } => *s = seed,
            _ => {}
        }
    }

    pub fn check_study(&self, wanted: StudyKind) -> Result<(), CliError> {
        match self.study.kind {
            Some(k) if k != wanted => Err(config_err(format!(
                "study.kind is {} but the subcommand is {}",
                k.name(),
                wanted.name()
            ))),
            _ => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASIC: &str = r#"
[system]
type = "coupled_waves"
alpha = 0.5
gamma = 1.0
k_max = 4

[scheme]
dt = 0.01
t_final = 1.0
"#;

    #[test]
    fn defaults_fill_in() {
        let cfg = ExperimentConfig::from_toml(BASIC).unwrap();
        assert_eq!(cfg.init, InitSpec::Random { seed: 0 });
        assert!(cfg.scheme.viscosity && cfg.scheme.damping);
        assert_eq!(cfg.study.trials, 200);
        assert_eq!(cfg.dts(), vec![0.01]);
    }

    #[test]
    fn rejects_bad_configs() {
        let both = BASIC.replace("dt = 0.01", "dt = 0.01\ndt_list = [0.1]");
        assert!(matches!(ExperimentConfig::from_toml(&both), Err(CliError::Config(_))));
        let empty = BASIC.replace("dt = 0.01", "dt_list = []");
        assert!(ExperimentConfig::from_toml(&empty).is_err());
        let alpha = BASIC.replace("alpha = 0.5", "alpha = 20.0");
        assert!(ExperimentConfig::from_toml(&alpha).is_err());
        let range = format!("{BASIC}\n[init]\nkind = \"single_mode\"\nj = 8\n");
        assert!(ExperimentConfig::from_toml(&range).is_err());
        let typo = BASIC.replace("t_final", "t_end");
        assert!(ExperimentConfig::from_toml(&typo).is_err());
    }

    #[test]
    fn cluster_pair_init() {
        let text = format!("{BASIC}\n[init]\nkind = \"cluster_pair\"\nk = 1\nsign = -1.0\n");
        let cfg = ExperimentConfig::from_toml(&text).unwrap();
        let sys = cfg.build_system().unwrap();
        let s = cfg.initial_state(&sys).unwrap();
        assert!(s.a[2] > 0.0 && s.a[3] < 0.0 && s.a[0] == 0.0);
    }

    #[test]
    fn study_kind_must_match() {
        let text = format!("{BASIC}\n[study]\nkind = \"decay\"\n");
        let cfg = ExperimentConfig::from_toml(&text).unwrap();
        assert!(cfg.check_study(StudyKind::Decay).is_ok());
        assert!(cfg.check_study(StudyKind::Trace).is_err());
        let alias = format!("{BASIC}\n[study]\nkind = \"spectrum\"\n");
        let cfg = ExperimentConfig::from_toml(&alias).unwrap();
        assert_eq!(cfg.study.kind, Some(StudyKind::SpectrumAudit));
    }
}
