//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::Instant;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use polydecay::diagnostics::{
    high_freq_contraction_batch, inverse_inequality_check, recursion_oracle,
    observability_constant_study, random_state, uniform_decay_study, Band, DecayOptions,
    ObservabilityOptions, Verdict,
};
use polydecay::ingham::{estimate_clustered, estimate_scalar, ingham_ratio_scalar, InghamConfig};
use polydecay::spectra::{
    boundary_coupled_modes, build_boundary_coupled_waves, build_coupled_waves, check_gap,
    ExampleParams,
};
use polydecay::{factorize, modal_multiplier, Branch, ModalState, ModalSystem, ModeLabel, SchemeConfig};

type Check = Result<(bool, String), String>;

fn e(err: polydecay::Error) -> String {
    err.to_string()
}

fn coupled(alpha: f64, gamma: f64, k_max: usize) -> Result<ModalSystem, String> {
    build_coupled_waves(&ExampleParams::new(alpha, gamma, k_max)).map_err(e)
}

fn energy_identity() -> Check {
    let start = Instant::now();
    let sys = coupled(0.5, 1.0, 64)?;
    let cfg = SchemeConfig::damped_viscous(0.01, 20.0);
    let solver = factorize(&sys, &cfg).map_err(e)?;
    let z0 = random_state(&sys, 2024, 0, Band::All);
    let trace = solver.run(&z0, 0.0).map_err(e)?;
    let secs = start.elapsed().as_secs_f64();
    let step_tol = 10.0 * cfg.solve_tol * trace.e0;
    let steps = (cfg.last_index() + 1) as f64;
    let ok = trace.max_step_residual <= step_tol
        && trace.telescoped_residual <= steps * step_tol
        && secs < 5.0;
    Ok((
        ok,
        format!(
            "max step residual {:.2e} (tol {:.2e}), telescoped {:.2e} (tol {:.2e}), {:.2}s",
            trace.max_step_residual,
            step_tol,
            trace.telescoped_residual,
            steps * step_tol,
            secs
        ),
    ))
}

fn midpoint_conservation() -> Check {
    let sys = coupled(0.5, 1.0, 64)?;
    assert_eq!(sys.dim(), 128);
    let solver = factorize(&sys, &SchemeConfig::midpoint(0.01, 100.0)).map_err(e)?;
    let mut y = random_state(&sys, 7, 0, Band::All);
    let e0 = sys.energy(&y).map_err(e)?;
    let mut drift: f64 = 0.0;
    for _ in 0..10_000 {
        y = solver.step_midpoint(&y).map_err(e)?;
        drift = drift.max((sys.energy(&y).map_err(e)? - e0).abs() / e0);
    }
    Ok((drift < 1e-11, format!("max relative drift {drift:.2e} over 10^4 steps, n = 128")))
}

fn multiplier_law() -> Check {
    let mut worst: f64 = 0.0;
    for mu in [1.0, PI, 50.0] {
        for dt in [0.5, 0.01] {
            let sys = ModalSystem::undamped(vec![mu * mu]).map_err(e)?;
            let solver = factorize(&sys, &SchemeConfig::midpoint(dt, dt)).map_err(e)?;
            let z = sys.displacement_mode(0).map_err(e)?;
            let next = solver.step_midpoint(&z).map_err(e)?;
            // energy coordinates (μa, b) turn clockwise
            let (p, q) = (mu * next.a[0], next.b[0]);
            let measured = (-q).atan2(p) / dt;
            worst = worst.max((measured - modal_multiplier(mu, dt).alpha).abs());
        }
    }
    Ok((worst <= 1e-10, format!("max |measured - predicted| = {worst:.2e}")))
}

fn high_frequency_contraction() -> Check {
    let sys = coupled(0.5, 1.0, 64)?;
    let delta = 1.0;
    let mut parts = Vec::new();
    let mut ok = true;
    for dt in [0.1, 0.01] {
        let cutoff = delta / dt;
        let states: Vec<ModalState> = (0..100)
            .map(|i| random_state(&sys, 31, i, Band::High(cutoff)))
            .collect();
        let r = high_freq_contraction_batch(&sys, &states, 0.0, dt, delta, 200).map_err(e)?;
        ok &= r.holds && !r.ratios.is_empty();
        parts.push(format!("dt={dt}: max ratio {:.6} <= bound {:.6}", r.max_ratio, r.bound));
    }
    Ok((ok, parts.join("; ")))
}

fn inverse_inequality() -> Check {
    let sys = coupled(0.5, 1.0, 64)?;
    let delta = 1.0;
    let mut ok = true;
    let mut parts = Vec::new();
    for dt in [0.1, 0.01] {
        let r = inverse_inequality_check(&sys, dt, delta, 0.0).map_err(e)?;
        let oracle = (0..sys.dim())
            .filter(|&j| sys.mu()[j] > delta / dt)
            .map(|j| dt * sys.mu()[j])
            .fold(f64::INFINITY, f64::min);
        let (h, w) = (r.min_ratio_h.unwrap_or(f64::NAN), r.min_ratio_weak.unwrap_or(f64::NAN));
        ok &= r.holds && r.high_modes > 0 && oracle >= delta;
        ok &= ((h - oracle) / oracle).abs() < 1e-14 && ((w - oracle) / oracle).abs() < 1e-14;
        parts.push(format!("dt={dt}: H {h:.6}, weak {w:.6}, diagonal {oracle:.6} >= {delta}"));
    }
    Ok((ok, parts.join("; ")))
}

fn observability_uniformity() -> Check {
    let start = Instant::now();
    let sys = coupled(0.5, 1.0, 32)?;
    let study = observability_constant_study(
        &sys,
        0.0,
        &[0.02, 0.01, 0.005],
        200,
        2025,
        &ObservabilityOptions::default(),
    )
    .map_err(e)?;
    let secs = start.elapsed().as_secs_f64();
    let mins: Vec<f64> = study.rows.iter().map(|r| r.min_ratio).collect();
    let ok = mins.iter().all(|&m| m > 0.0) && study.spread <= 4.0 && secs < 60.0;
    Ok((
        ok,
        format!(
            "T*={:.4}, min ratios {:?}, spread {:.3} (low-pass spread {:.3}), {:.2}s",
            study.rows[0].t_star,
            mins.iter().map(|m| format!("{m:.3}")).collect::<Vec<_>>(),
            study.spread,
            study.spread_lowpass,
            secs
        ),
    ))
}

fn uniform_decay() -> Check {
    let sys = coupled(0.5, 1.0, 32)?;
    let dts = [0.02, 0.01, 0.005];
    let opts = DecayOptions::default();
    let study = uniform_decay_study(&sys, 0.0, &dts, None, &opts).map_err(e)?;
    let exps: Vec<String> = study
        .rows
        .iter()
        .map(|r| r.envelope.map_or("none".into(), |f| format!("{:.3}", f.exponent)))
        .collect();
    let mhat: Vec<String> = study
        .rows
        .iter()
        .map(|r| r.envelope.map_or("none".into(), |f| format!("{:.4}", f.m_hat)))
        .collect();
    let control_sys = coupled(0.5, 0.0, 32)?;
    let control = uniform_decay_study(&control_sys, 0.0, &dts, None, &opts).map_err(e)?;
    let all_finite = study.rows.iter().all(|r| r.envelope.is_some_and(|f| f.m_hat.is_finite()));
    let ok = all_finite
        && study.m_hat_ratio <= 4.0
        && study.min_envelope_exponent >= 0.7
        && study.verdict == Verdict::Uniform
        && control.verdict == Verdict::NonUniform;
    Ok((
        ok,
        format!(
            "window [{:.3}, {}], M_hat {:?} (ratio {:.3}), exponents {:?}, verdict {:?}; gamma=0 control {:?}",
            study.window.0, study.window.1, mhat, study.m_hat_ratio, exps, study.verdict, control.verdict
        ),
    ))
}

fn ingham_estimates() -> Check {
    // single frequency
    let cfg = InghamConfig::new(0.25, 20, 1.0, 1000, 1).map_err(e)?;
    let exact = 0.25 * 41.0;
    let single = estimate_scalar(&[3.0], &cfg).map_err(e)?;
    let direct = ingham_ratio_scalar(&[3.0], &[Complex64::new(0.6, 0.8)], &cfg, 0.0).map_err(e)?;
    let self_test = [single.c_lo, single.c_hi, direct]
        .iter()
        .all(|&v| ((v - exact) / exact).abs() <= 4.0 * f64::EPSILON);

    // boundary-coupled spectrum, isolated-gap inequality
    let bsys = build_boundary_coupled_waves(&ExampleParams::new(0.5, 1.0, 8)).map_err(e)?;
    let bfreqs: Vec<f64> = bsys.mu().iter().copied().collect();
    let bcfg = InghamConfig::covering(&bfreqs, check_gap(&bsys).gamma, 1000, 8).map_err(e)?;
    let bscalar = estimate_scalar(&bfreqs, &bcfg).map_err(e)?;

    // internally coupled spectrum: clustered vs scalar
    let mut clo = Vec::new();
    let mut slo = Vec::new();
    for k_max in [8, 64] {
        let sys = coupled(0.5, 1.0, k_max)?;
        let freqs: Vec<f64> = sys.mu().iter().copied().collect();
        let gamma1 = check_gap(&sys).gamma1;
        let cfg = InghamConfig::covering(&freqs, gamma1, 1000, 64).map_err(e)?;
        clo.push(estimate_clustered(&freqs, &cfg).map_err(e)?.c_lo);
        slo.push(estimate_scalar(&freqs, &cfg).map_err(e)?.c_lo);
    }
    let degrade = slo[0] / slo[1];
    let ok = self_test
        && bscalar.c_lo > 0.0
        && bscalar.draws >= 1000
        && clo.iter().all(|&c| c > 0.0)
        && degrade >= 10.0;
    Ok((
        ok,
        format!(
            "single {:.15} vs {exact}; boundary scalar c_lo {:.3e}; clustered c_lo {:.3e}/{:.3e}; scalar c_lo {:.3e} -> {:.3e} ({degrade:.1}x)",
            single.c_lo, bscalar.c_lo, clo[0], clo[1], slo[0], slo[1]
        ),
    ))
}

/// Damped viscous scheme written directly in sine coefficients `(u_k, y_k)`
/// for one wavenumber: `w'' + Kw + Cw' = 0`, `K = [[k²π², α], [α, k²π²]]`,
/// `C = diag(0, γ)`. Returns the energy `½(wᵀKw + |v|²)` after every step.
struct PhysicalBlock {
    k_mat: DMatrix<f64>,
    mid_lhs_inv: DMatrix<f64>,
    mid_rhs: DMatrix<f64>,
    visc_inv: DMatrix<f64>,
}

impl PhysicalBlock {
    fn new(k: usize, alpha: f64, gamma: f64, dt: f64) -> Self {
        let kk = (k as f64 * PI).powi(2);
        let k_mat = DMatrix::from_row_slice(2, 2, &[kk, alpha, alpha, kk]);
        let mut f = DMatrix::zeros(4, 4);
        f.view_mut((0, 2), (2, 2)).copy_from(&DMatrix::identity(2, 2));
        f.view_mut((2, 0), (2, 2)).copy_from(&(-&k_mat));
        f[(3, 3)] = -gamma;
        let eye = DMatrix::identity(4, 4);
        let mid_lhs_inv = (&eye - &f * (dt / 2.0)).try_inverse().unwrap();
        let mid_rhs = &eye + &f * (dt / 2.0);
        let mut a2 = DMatrix::zeros(4, 4);
        a2.view_mut((0, 0), (2, 2)).copy_from(&(-&k_mat));
        a2.view_mut((2, 2), (2, 2)).copy_from(&(-&k_mat));
        let visc_inv = (&eye - a2 * dt.powi(3)).try_inverse().unwrap();
        PhysicalBlock {
            k_mat,
            mid_lhs_inv,
            mid_rhs,
            visc_inv,
        }
    }

    fn step(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.visc_inv * (&self.mid_lhs_inv * (&self.mid_rhs * x))
    }

    fn energy(&self, x: &DVector<f64>) -> f64 {
        let w = x.rows(0, 2);
        let v = x.rows(2, 2);
        0.5 * (w.dot(&(&self.k_mat * w)) + v.norm_squared())
    }
}

fn physical_vs_modal(alpha: f64, gamma: f64, k_max: usize, dt: f64, t_final: f64) -> Result<f64, String> {
    let sys = coupled(alpha, gamma, k_max)?;
    let z0 = random_state(&sys, 99, 0, Band::All);
    let trace = factorize(&sys, &SchemeConfig::damped_viscous(dt, t_final))
        .map_err(e)?
        .run(&z0, 0.0)
        .map_err(e)?;
    // modal (a_±, b_±) on (sin, ±sin) to sine coefficients of (u, y)
    let mut blocks = Vec::new();
    let mut xs = Vec::new();
    for k in 1..=k_max {
        let mut x = DVector::zeros(4);
        for (j, label) in sys.labels().iter().enumerate() {
            if let ModeLabel::Branch { branch, k: kk } = *label {
                if kk == k {
                    let s = if branch == Branch::Plus { 1.0 } else { -1.0 };
                    let r = 1.0 / 2f64.sqrt();
                    x[0] += r * z0.a[j];
                    x[1] += s * r * z0.a[j];
                    x[2] += r * z0.b[j];
                    x[3] += s * r * z0.b[j];
                }
            }
        }
        blocks.push(PhysicalBlock::new(k, alpha, gamma, dt));
        xs.push(x);
    }
    let e_phys = |xs: &[DVector<f64>]| -> f64 { blocks.iter().zip(xs).map(|(b, x)| b.energy(x)).sum() };
    let e0 = e_phys(&xs);
    let mut worst = (e0 - trace.e0).abs() / e0;
    for p in &trace.points[1..] {
        for (b, x) in blocks.iter().zip(xs.iter_mut()) {
            *x = b.step(x);
        }
        worst = worst.max((e_phys(&xs) - p.energy).abs() / e0);
    }
    Ok(worst)
}

fn spectrum_oracles() -> Check {
    let alpha = 0.5;
    let sys = coupled(alpha, 1.0, 64)?;
    let mut eig_err: f64 = 0.0;
    for k in 1..=64 {
        let kk = (k as f64 * PI).powi(2);
        let block = DMatrix::from_row_slice(2, 2, &[kk, alpha, alpha, kk]);
        let mut ev: Vec<f64> = SymmetricEigen::new(block).eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        for (i, v) in ev.iter().enumerate() {
            let eta = sys.eta()[2 * (k - 1) + i];
            eig_err = eig_err.max((eta - v).abs() / v);
        }
    }
    let bparams = ExampleParams::new(alpha, 1.0, 64);
    let residual = boundary_coupled_modes(&bparams)
        .map_err(e)?
        .iter()
        .map(|m| m.residual)
        .fold(0.0, f64::max);
    let bsys = build_boundary_coupled_waves(&bparams).map_err(e)?;
    let min_ev = |s: &ModalSystem| SymmetricEigen::new(s.damp_gram().clone()).eigenvalues.min();
    let (psd1, psd2) = (min_ev(&sys), min_ev(&bsys));
    let phys = physical_vs_modal(alpha, 1.0, 16, 0.01, 5.0)?;
    let ok = eig_err <= 1e-12 && residual <= 1e-12 && psd1 >= -1e-12 && psd2 >= -1e-12 && phys <= 1e-10;
    Ok((
        ok,
        format!(
            "eigen rel err {eig_err:.1e}; fixed-point residual {residual:.1e}; min eig D {psd1:.1e}, {psd2:.1e}; physical vs modal {phys:.1e}"
        ),
    ))
}

fn lemma_oracle() -> Check {
    let r = recursion_oracle(1.0, 0.0, 1.0, 1_000_000).map_err(e)?;
    Ok((
        r.bounded && r.fitted_m.is_finite() && r.max_violation <= 1e-13,
        format!(
            "sup E_k(k+1) = {:.6}, tail slope {:.2e}, max recursion violation {:.1e}",
            r.fitted_m, r.tail_slope, r.max_violation
        ),
    ))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Check); 10] = [
        ("energy identity", energy_identity),
        ("midpoint conservation", midpoint_conservation),
        ("multiplier law", multiplier_law),
        ("high-frequency contraction", high_frequency_contraction),
        ("inverse inequality", inverse_inequality),
        ("observability uniformity", observability_uniformity),
        ("uniform polynomial decay", uniform_decay),
        ("Ingham estimates", ingham_estimates),
        ("spectrum oracles", spectrum_oracles),
        ("scalar recursion oracle", lemma_oracle),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let (ok, detail) = match check() {
            Ok(r) => r,
            Err(msg) => (false, format!("error: {msg}")),
        };
        if !ok {
            failed += 1;
        }
        println!("{} [{}] {name}: {detail}", if ok { "PASS" } else { "FAIL" }, i + 1);
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
