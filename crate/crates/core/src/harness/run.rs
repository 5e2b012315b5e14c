use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde_json::{json, Value};

use super::config::{ExperimentConfig, ExperimentKind};
use super::experiments::{
    compare_asgd_sme, kappa_sweep, pde_decay, speedup_experiment, stationary_check, threshold_sweep,
    CompareSpec, PdeDecaySpec, SpeedupSpec, ThresholdSpec,
};
use super::table::{Format, Table};
use crate::asgd::{asgd_to_sme_state, run_ensemble, AsgdSetup};
use crate::error::{Error, Result};
use crate::hypo::hypo_report;
use crate::kfp::{assemble_generator, compute_steady_state};
use crate::loss::{perturbation_bounds, GradientOracle};
use crate::moments::trajectory_rng;
use crate::params::{
    classify, derive_params, lr_threshold, per_step_exponent, speedup_predicate, theorem_rate,
};
use crate::sme::{default_dt, OuOracle};
use crate::staleness::{sample_trace, staleness_stats};

/// Version of the `report.json` layout.
pub const SCHEMA_VERSION: u32 = 1;

/// Command-line overrides applied on top of a config file.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub kind: Option<ExperimentKind>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub format: Format,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: Value,
    pub out_dir: PathBuf,
    pub files: Vec<PathBuf>,
}

impl RunOutcome {
    /// `key = value` lines for the scalar entries of the results.
    pub fn summary(&self) -> Vec<String> {
        let mut lines = vec![format!("kind = {}", self.report["kind"].as_str().unwrap_or("?"))];
        if let Some(obj) = self.report["results"].as_object() {
            for (k, v) in obj {
                if v.is_number() || v.is_boolean() || v.is_string() {
                    lines.push(format!("{k} = {v}"));
                }
            }
        }
        lines.extend(self.files.iter().map(|f| format!("wrote {}", f.display())));
        lines
    }
}

pub fn run_experiment(config_path: &Path, opts: &RunOptions) -> Result<RunOutcome> {
    run_config(ExperimentConfig::load(config_path)?, opts)
}

pub fn run_config(mut cfg: ExperimentConfig, opts: &RunOptions) -> Result<RunOutcome> {
    let kind = opts
        .kind
        .or(cfg.kind)
        .ok_or_else(|| Error::Config("experiment kind missing (set \"kind\" or use a subcommand)".into()))?;
    cfg.kind = Some(kind);
    if opts.seed.is_some() {
        cfg.seed = opts.seed;
    }
    if kind.needs_seed() && cfg.seed.is_none() {
        return Err(Error::Config(format!("{} requires --seed", kind.name())));
    }
    let out_dir = opts
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&out_dir)?;
    let seed = cfg.seed.unwrap_or(0);
    let mut series: Vec<(&str, Table)> = Vec::new();
    let results = match kind {
        ExperimentKind::Analyze => analyze(&cfg)?,
        ExperimentKind::SampleStaleness => {
            let model = cfg.staleness();
            let mut rng = trajectory_rng(seed, 0);
            let trace = sample_trace(&model, cfg.numerics.steps, &mut rng)?;
            let stats = staleness_stats(&trace)?;
            let mut t = Table::new(["k", "tau"]);
            for (k, &tau) in trace.iter().enumerate() {
                t.push(vec![k as f64, tau as f64]);
            }
            series.push(("staleness", t));
            json!({ "model": model, "stats": stats })
        }
        ExperimentKind::SimAsgd => {
            let oracle = oracle(&cfg);
            let setup = AsgdSetup::new(cfg.params, oracle, cfg.staleness(), cfg.numerics.steps, cfg.theta0());
            let m = run_ensemble(&setup, cfg.numerics.ensemble, cfg.numerics.stride, seed)?;
            let last = m.len() - 1;
            let mut res = json!({
                "steps": cfg.numerics.steps,
                "t_final": m.times[last],
                "final_mean": m.means[last].as_slice(),
                "final_cov_trace": m.covs[last].trace(),
                "ensemble": m.ensemble_size,
            });
            if oracle.epsilon.is_zero() {
                let derived = derive_params(&cfg.params)?;
                let ou = OuOracle::new(&derived, &oracle)?;
                let (th, y) = asgd_to_sme_state(&DVector::from_vec(cfg.theta0()), &cfg.params, &oracle);
                let m0 = DVector::from_iterator(2 * th.len(), th.iter().chain(y.iter()).copied());
                let om = ou.mean(&m0, m.times[last]);
                let d = th.len();
                res["oracle_final_mean"] = json!(om.rows(0, d).as_slice());
                res["final_mean_error"] = json!((m.means[last].clone() - om.rows(0, d)).norm());
            }
            series.push(("asgd", Table::from_moments(&m)));
            res
        }
        ExperimentKind::SimSme => {
            let oracle = oracle(&cfg);
            let derived = derive_params(&cfg.params)?;
            let t_final = cfg.numerics.t_final.unwrap_or(20.0 / derived.gamma);
            let dt = cfg.numerics.dt.unwrap_or(default_dt(&derived));
            let (report, m) = stationary_check(&cfg.params, &oracle, &cfg.theta0(), t_final, dt, cfg.numerics.ensemble, seed)?;
            series.push(("sme", Table::from_moments(&m)));
            serde_json::to_value(report)?
        }
        ExperimentKind::SolvePde => {
            let derived = derive_params(&cfg.params)?;
            let n = &cfg.numerics;
            let mut spec = PdeDecaySpec::new(derived.gamma, cfg.params.omega0, derived.beta()?);
            spec.epsilon = cfg.epsilon;
            spec.truncation = n.truncation;
            spec.t_final = n.t_final.unwrap_or(spec.t_final);
            spec.dt = n.dt.unwrap_or(spec.dt);
            spec.output_dt = n.output_dt;
            spec.fit_window = n.fit_window.unwrap_or((spec.t_final / 6.0, spec.t_final));
            spec.scheme = n.scheme;
            spec.delta = n.delta;
            spec.half_width = n.half_width;
            spec.resolution = n.resolution;
            let (report, s) = pde_decay(&spec, seed)?;
            let gen = assemble_generator(spec.truncation, spec.gamma, spec.beta, spec.omega0, spec.epsilon)?;
            let f = compute_steady_state(&gen)?;
            let mut res = serde_json::to_value(report)?;
            res["steady_state_residual"] = json!((&gen.a * f.to_vector()).norm());
            res["steady_state_deviation"] = json!((f.norm_sq() - 1.0).max(0.0).sqrt());
            series.push(("pde", Table::from_evolve(&s)));
            res
        }
        ExperimentKind::Compare => {
            let p = &cfg.params;
            let spec = CompareSpec {
                kappa: p.kappa,
                omega0: p.omega0,
                sigma_grad: p.sigma_grad,
                epsilon: cfg.epsilon,
                theta0: cfg.theta0()[0],
                etas: if cfg.sweep.etas.is_empty() {
                    vec![0.04, 0.02, 0.01]
                } else {
                    cfg.sweep.etas.clone()
                },
                t_target: cfg.sweep.t_compare,
                ensemble: cfg.numerics.ensemble,
            };
            let r = compare_asgd_sme(&spec, seed)?;
            let mut t = Table::new(["eta", "steps", "t", "asgd_mean", "reference_mean", "mean_error", "mean_se", "var_error"]);
            for row in &r.rows {
                t.push(vec![row.eta, row.steps as f64, row.t, row.asgd_mean, row.reference_mean, row.mean_error, row.mean_se, row.var_error]);
            }
            series.push(("compare", t));
            serde_json::to_value(r)?
        }
        ExperimentKind::SweepThreshold => {
            let p = &cfg.params;
            let mut spec = ThresholdSpec::standard(p.kappa, p.omega0);
            spec.etas = if cfg.sweep.etas.is_empty() {
                let es = lr_threshold(p.kappa, p.omega0);
                cfg.sweep.eta_factors.iter().map(|f| f * es).collect()
            } else {
                cfg.sweep.etas.clone()
            };
            let r = threshold_sweep(&spec)?;
            let mut t = Table::new(["eta", "theory_per_step", "matrix_per_step", "empirical_per_step"]);
            for row in &r.rows {
                t.push(vec![row.eta, row.theory_per_step, row.matrix_per_step, row.empirical_per_step]);
            }
            series.push(("threshold", t));
            let mut res = serde_json::to_value(r)?;
            if !cfg.sweep.kappas.is_empty() {
                res["kappa_sweep"] = serde_json::to_value(kappa_sweep(&cfg.sweep.kappas, p.omega0, p.eta, spec.window, spec.points)?)?;
            }
            res
        }
        ExperimentKind::Speedup => {
            let p = &cfg.params;
            let spec = SpeedupSpec {
                omega0: p.omega0,
                eta: p.eta,
                sigma_grad: p.sigma_grad,
                theta0: cfg.theta0()[0],
                workers: cfg.sweep.workers.clone(),
                kappas: if cfg.sweep.kappas.is_empty() {
                    vec![0.25, 0.5, 0.75]
                } else {
                    cfg.sweep.kappas.clone()
                },
                target: cfg.sweep.target,
                ensemble: cfg.numerics.ensemble,
                horizon: cfg.sweep.horizon,
                boundary: cfg.sweep.boundary,
            };
            let r = speedup_experiment(&spec, seed)?;
            let mut t = Table::new(["m", "kappa", "margin", "time_asgd", "time_sgd"]);
            for row in &r.rows {
                t.push(vec![row.m as f64, row.kappa, row.margin, row.time_asgd, row.time_sgd]);
            }
            series.push(("speedup", t));
            serde_json::to_value(r)?
        }
    };
    let report = json!({
        "schema_version": SCHEMA_VERSION,
        "kind": kind.name(),
        "seed": cfg.seed,
        "config": cfg,
        "results": results,
    });
    let mut files = Vec::new();
    for (name, table) in &series {
        let path = out_dir.join(format!("series_{name}.{}", opts.format.extension()));
        table.write(&path, opts.format)?;
        files.push(path);
    }
    let report_path = out_dir.join("report.json");
    std::fs::write(&report_path, serde_json::to_string_pretty(&report)? + "\n")?;
    files.push(report_path);
    Ok(RunOutcome {
        report,
        out_dir,
        files,
    })
}

fn oracle(cfg: &ExperimentConfig) -> GradientOracle {
    GradientOracle::new(cfg.params.omega0, cfg.epsilon, cfg.params.sigma_grad)
}

/// Closed-form quantities: constants, regime, rates and the decay certificate.
fn analyze(cfg: &ExperimentConfig) -> Result<Value> {
    let p = &cfg.params;
    let derived = derive_params(p)?;
    let case = theorem_rate(derived.gamma, p.omega0, cfg.numerics.delta)?;
    let oracle = oracle(cfg);
    let bounds = perturbation_bounds(&oracle, derived.gamma, p.d, cfg.numerics.half_width, cfg.numerics.resolution);
    let mut res = json!({
        "gamma": derived.gamma,
        "tau_noise": derived.tau_noise,
        "dt_map": derived.dt_map,
        "beta": derived.beta().ok(),
        "regime": classify(derived.gamma, p.omega0),
        "mu_thm": case.mu_thm,
        "mu_matrix": case.mu_matrix,
        "per_step_exponent": per_step_exponent(p.eta, p.kappa, p.omega0),
        "lr_threshold": lr_threshold(p.kappa, p.omega0),
        "speedup_predicate": speedup_predicate(p.m, p.kappa),
        "staleness_pmf_mean": p.kappa / (1.0 - p.kappa),
        "expected_staleness": 1.0 / (1.0 - p.kappa),
        "eps0": bounds.eps0,
        "perturbation_bounds": bounds,
    });
    match derived.beta() {
        Ok(beta) => {
            let h = hypo_report(derived.gamma, p.omega0, beta, bounds.eps0, cfg.numerics.delta)?;
            for (k, v) in serde_json::to_value(h)?.as_object().unwrap() {
                res[k] = v.clone();
            }
        }
        Err(e) => res["hypo_skipped"] = json!(e.to_string()),
    }
    Ok(res)
}
