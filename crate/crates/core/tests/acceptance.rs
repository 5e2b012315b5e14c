//! End-to-end acceptance checks. Run with
//! `cargo test --release --test acceptance -- --nocapture` to see one
//! PASS/FAIL line per criterion.

use std::path::Path;
use std::time::Instant;

use asgdlab::harness::{
    compare_asgd_sme, kappa_sweep, pde_decay, run_config, speedup_experiment, stationary_check, threshold_sweep,
    CompareSpec, ExperimentConfig, ExperimentKind, Format, PdeDecaySpec, RunOptions, SpeedupSpec, ThresholdSpec,
};
use asgdlab::hypo::{build_matrices, check_certificate, sup_certified_rate, sym2_min_eigenvalue};
use asgdlab::kfp::{
    assemble_generator, check_poincare, poincare_d2_counterexample, polynomial_battery, verify_identities,
    verify_perturbation_bounds, GaussianMeasure, HermiteField,
};
use asgdlab::loss::{perturbation_bounds, EpsilonModel, GradientOracle};
use asgdlab::params::{derive_params, lr_threshold, mu_matrix, theorem_rate, Params};
use asgdlab::sme::default_dt;

fn report(id: u32, pass: bool, started: Instant, detail: String) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    println!(
        "criterion {id:>2}: {verdict} ({:.2}s) {detail}",
        started.elapsed().as_secs_f64()
    );
}

#[test]
fn criterion_01_certificate_sharpness() {
    let t0 = Instant::now();
    let mut pass = true;
    let mut detail = Vec::new();
    for (g, w) in [(1.0, 1.0), (2.5, 1.0), (4.0, 1.5)] {
        let case = theorem_rate(g, w, 0.1).unwrap();
        let mats = build_matrices(g, w, case.c.unwrap(), case.c_hat.unwrap());
        let mu = mu_matrix(g, w);
        let margin = sym2_min_eigenvalue(&(mats.k2 - mats.p2 * (2.0 * mu)));
        let sup = sup_certified_rate(&mats, 1e-12).unwrap();
        let ok = (-1e-10..=1e-8).contains(&margin) && (sup - mu).abs() <= 1e-6 && check_certificate(&mats, mu).is_ok();
        pass &= ok;
        detail.push(format!("(γ={g}, ω₀={w}): margin {margin:.1e}, sup μ {sup:.9} vs {mu:.9}"));
    }
    report(1, pass, t0, detail.join("; "));
    assert!(pass);
}

#[test]
fn criterion_02_spectral_oracle() {
    let t0 = Instant::now();
    let mut pass = true;
    let mut detail = Vec::new();
    for g in [2.5, 1.0] {
        let w = 1.0;
        let gen = assemble_generator(12, g, 2.0, w, EpsilonModel::Zero).unwrap();
        let spec = gen.mean_zero_spectrum().unwrap();
        let disc = nalgebra::Complex::new(g * g - 4.0 * w * w, 0.0).sqrt();
        let roots = [(-g + disc) / 2.0, (-g - disc) / 2.0];
        let mut worst = 0.0f64;
        for r in roots {
            let d = spec.iter().map(|z| (z - r).norm()).fold(f64::INFINITY, f64::min);
            worst = worst.max(d);
        }
        let abscissa = gen.spectral_abscissa().unwrap();
        let ok = worst < 1e-8 && (abscissa - roots[0].re).abs() < 1e-8;
        pass &= ok;
        detail.push(format!("γ={g}: roots {:.4}, {:.4}, max distance {worst:.1e}, abscissa {abscissa:.10}", roots[0], roots[1]));
    }
    report(2, pass, t0, detail.join("; "));
    assert!(pass);
}

fn decay_run(gamma: f64, truncation: usize) -> asgdlab::harness::PdeDecayReport {
    let mut spec = PdeDecaySpec::new(gamma, 1.0, 2.0);
    spec.truncation = truncation;
    pde_decay(&spec, 17).unwrap().0
}

#[test]
fn criterion_03_hypocoercive_decay() {
    let t0 = Instant::now();
    let mut pass = true;
    let mut detail = Vec::new();
    for g in [1.0, 2.5] {
        let r = decay_run(g, 12);
        let fine = decay_run(g, 16);
        let refinement = (fine.fit.rate / r.fit.rate - 1.0).abs();
        let ok = r.certificate.holds && r.fit_rel_error < 0.01 && refinement < 0.005;
        pass &= ok;
        detail.push(format!(
            "γ={g}: H step ratio max {:.8} at rate {:.4}, fit {:.5} vs mode {:.5} ({:.3}%), N 12→16 change {:.3}%",
            r.certificate.worst_step_ratio,
            r.certificate.rate,
            r.fit.rate,
            r.slowest_norm_rate,
            100.0 * r.fit_rel_error,
            100.0 * refinement
        ));
    }
    report(3, pass, t0, detail.join("; "));
    assert!(pass);
}

#[test]
fn criterion_04_rate_convention() {
    let t0 = Instant::now();
    let mut pass = true;
    let mut detail = Vec::new();
    for g in [1.0, 2.5] {
        let r = decay_run(g, 12);
        let ok = (r.ratio_to_2mu_matrix - 1.0).abs() < 0.02;
        pass &= ok;
        detail.push(format!(
            "γ={g}: fit {:.5}, 2·mu_matrix {:.5} (ratio {:.4}), 2·mu_thm {:.5} (ratio {:.4})",
            r.fit.rate,
            2.0 * r.mu_matrix,
            r.ratio_to_2mu_matrix,
            2.0 * r.mu_thm,
            r.ratio_to_2mu_thm
        ));
    }
    report(4, pass, t0, detail.join("; "));
    assert!(pass);
}

#[test]
fn criterion_05_weak_consistency() {
    let t0 = Instant::now();
    let spec = CompareSpec {
        kappa: 0.5,
        omega0: 1.0,
        sigma_grad: 1.0,
        epsilon: EpsilonModel::Zero,
        theta0: 1.0,
        etas: vec![0.04, 0.02, 0.01],
        t_target: 1.0,
        ensemble: 10_000,
    };
    let r = compare_asgd_sme(&spec, 1).unwrap();
    let pass = r.monotone_within_3se && r.finest_within_3se;
    let rows: Vec<String> = r
        .rows
        .iter()
        .map(|row| format!("η={}: |Δmean| {:.2e} (se {:.1e}) at t={:.3}", row.eta, row.mean_error, row.mean_se, row.t))
        .collect();
    report(5, pass, t0, format!("{}; reference {}", rows.join(", "), r.reference));
    assert!(pass);
}

#[test]
fn criterion_06_stationary_measure() {
    let t0 = Instant::now();
    let params = Params::new(0.25, 0.75, 1.0, 1.0).unwrap();
    let derived = derive_params(&params).unwrap();
    let oracle = GradientOracle::new(1.0, EpsilonModel::Zero, 1.0);
    let t_final = 20.0 / derived.gamma;
    // the default Euler step biases the stationary variance by about 6% here
    let dt = default_dt(&derived).min(0.01);
    let (r, _) = stationary_check(&params, &oracle, &[1.0], t_final, dt, 10_000, 99).unwrap();
    let pass = r.rel_err_x < 0.05 && r.rel_err_v < 0.05;
    report(
        6,
        pass,
        t0,
        format!(
            "var x {:.5} vs {:.5} ({:.2}%), var v {:.5} vs {:.5} ({:.2}%)",
            r.var_x,
            r.target_x,
            100.0 * r.rel_err_x,
            r.var_v,
            r.target_v,
            100.0 * r.rel_err_v
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_07_threshold() {
    let t0 = Instant::now();
    let (kappa, w) = (0.5, 1.0);
    let es = lr_threshold(kappa, w);
    let mut spec = ThresholdSpec::standard(kappa, w);
    spec.etas = [0.125, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0, 4.0].iter().map(|f| f * es).collect();
    let r = threshold_sweep(&spec).unwrap();
    // above the threshold of every κ in the sweep
    let eta = 1.5 * lr_threshold(0.25, w);
    let ks = kappa_sweep(&[0.25, 0.5, 0.75], w, eta, spec.window, spec.points).unwrap();
    let pass = r.plateau_variation < 0.01 && r.below_threshold_monotone && ks.fit.r_squared > 0.999;
    report(
        7,
        pass,
        t0,
        format!(
            "plateau variation {:.3}%, strictly smaller below η*: {}, jump at η* {:.1e} (se {:.1e}), κ-sweep slope {:.5} R² {:.8}",
            100.0 * r.plateau_variation,
            r.below_threshold_monotone,
            r.threshold_jump,
            r.threshold_jump_se,
            ks.fit.slope,
            ks.fit.r_squared
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_08_speedup() {
    let t0 = Instant::now();
    let spec = SpeedupSpec {
        omega0: 1.0,
        eta: 0.4,
        sigma_grad: 0.0,
        theta0: 1.0,
        workers: vec![1, 2, 4, 8],
        kappas: vec![0.25, 0.5, 0.75],
        target: 1e-8,
        ensemble: 2000,
        horizon: 3000,
        boundary: 0.2,
    };
    let r = speedup_experiment(&spec, 8).unwrap();
    let cells: Vec<String> = r
        .rows
        .iter()
        .map(|row| {
            let verdict = match row.agrees {
                Some(true) => "agree",
                Some(false) => "DISAGREE",
                None => "boundary",
            };
            format!("m={} κ={}: {:.1} vs {:.1} {verdict}", row.m, row.kappa, row.time_asgd, row.time_sgd)
        })
        .collect();
    report(8, r.all_agree, t0, cells.join(", "));
    assert!(r.all_agree);
}

#[test]
fn criterion_09_operator_appendix() {
    let t0 = Instant::now();
    let (g, w, beta) = (1.0, 1.0, 2.0);
    let measure = GaussianMeasure::new(beta, w).unwrap();
    let battery = polynomial_battery(measure, 3);
    let ids = verify_identities(&battery, g).unwrap();
    let eps = EpsilonModel::tanh_gauss(0.01);
    let bounds = perturbation_bounds(&GradientOracle::new(w, eps, 1.0), g, 1, 6.0, 401);
    let checks = verify_perturbation_bounds(&battery, eps, g, &bounds).unwrap();
    let failed: Vec<&str> = checks.iter().filter(|c| !c.holds).map(|c| c.label.as_str()).collect();
    let poincare_ok = battery
        .iter()
        .map(|h| {
            let mut c = h.clone();
            c.coeffs[(0, 0)] = 0.0;
            c
        })
        .chain([HermiteField::monomial(measure, 3, 1, 0)])
        .all(|h| check_poincare(&h, 1).unwrap().holds);
    let d2 = poincare_d2_counterexample(beta, w);
    let pass = ids.max_residual() < 1e-12 && failed.is_empty() && poincare_ok && !d2.holds;
    report(
        9,
        pass,
        t0,
        format!(
            "identity residual {:.1e}, {} inequality checks ({} failed), Poincaré d=1 {}, d=2 counterexample ‖h‖²={} > bound {}",
            ids.max_residual(),
            checks.len(),
            failed.len(),
            poincare_ok,
            d2.lhs,
            d2.rhs
        ),
    );
    assert!(pass);
}

const DETERMINISM_CONFIG: &str = r#"{
  "params": {"eta": 0.25, "kappa": 0.75, "omega0": 1.0, "sigma_grad": 1.0},
  "epsilon": {"kind": "tanh_gauss", "amplitude": 0.01},
  "numerics": {"ensemble": 200, "steps": 100, "stride": 10, "truncation": 6, "t_final": 5.0, "dt": 0.05},
  "sweep": {"etas": [0.02, 0.01], "kappas": [0.25, 0.5], "workers": [1, 4], "target": 0.5, "horizon": 2000}
}"#;

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn criterion_10_determinism() {
    let t0 = Instant::now();
    let kinds = [
        ExperimentKind::Analyze,
        ExperimentKind::SampleStaleness,
        ExperimentKind::SimAsgd,
        ExperimentKind::SimSme,
        ExperimentKind::SolvePde,
        ExperimentKind::Compare,
        ExperimentKind::SweepThreshold,
        ExperimentKind::Speedup,
    ];
    let mut mismatched = Vec::new();
    for kind in kinds {
        let mut runs = Vec::new();
        for _ in 0..2 {
            let dir = tempfile::tempdir().unwrap();
            let cfg = ExperimentConfig::from_json(DETERMINISM_CONFIG).unwrap();
            let opts = RunOptions {
                kind: Some(kind),
                seed: Some(42),
                out: Some(dir.path().to_path_buf()),
                format: Format::Csv,
            };
            run_config(cfg, &opts).unwrap_or_else(|e| panic!("{}: {e}", kind.name()));
            runs.push(dir_bytes(dir.path()));
        }
        if runs[0] != runs[1] || runs[0].is_empty() {
            mismatched.push(kind.name());
        }
    }
    let pass = mismatched.is_empty();
    report(
        10,
        pass,
        t0,
        format!("{} kinds rerun with seed 42, mismatched: {:?}", kinds.len(), mismatched),
    );
    assert!(pass);
}
