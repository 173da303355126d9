//! Atomic file output and the trace CSV format.

use std::io::Write;
use std::path::{Path, PathBuf};

use polydecay::EnergyTrace;
use serde::Serialize;

use crate::CliError;

pub const TRACE_HEADER: &str = "k,t,E,E_weak,damp_term,visc1,visc2,identity_residual";

/// Writes `bytes` to `dir/name` through a temporary file in the same
/// directory, so readers never see a partial file.
pub fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    let path = dir.join(name);
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(&path)
        .map_err(|e| CliError::Io(format!("{}: {}", path.display(), e.error)))?;
    Ok(path)
}

pub fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<PathBuf, CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    text.push('\n');
    write_atomic(dir, name, text.as_bytes())
}

fn num(x: f64) -> String {
    format!("{x:.16e}")
}

/// One row per trace point; `E_weak` is half the squared weak pair norm.
pub fn trace_csv(trace: &EnergyTrace) -> String {
    let mut out = String::with_capacity(64 * (trace.points.len() + 1));
    out.push_str(TRACE_HEADER);
    out.push('\n');
    for p in &trace.points {
        let row = [
            num(p.t),
            num(p.energy),
            num(0.5 * p.weak_norm_sq),
            num(p.damp_term),
            num(p.visc1),
            num(p.visc2),
            num(p.identity_residual),
        ];
        out.push_str(&p.k.to_string());
        for v in row {
            out.push(',');
            out.push_str(&v);
        }
        out.push('\n');
    }
    out
}
