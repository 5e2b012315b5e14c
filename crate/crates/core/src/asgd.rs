//! Discrete asynchronous SGD on a shared parameter with delayed reads.
//!
//! One step is one gradient commit. Reads that would reach before step 0
//! return the initial point.

use std::collections::VecDeque;
use std::path::Path;

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::GradientOracle;
use crate::moments::{reduce_ensemble, trajectory_rng, EnsembleMoments};
use crate::params::{derive_params, Params};
use crate::staleness::{StalenessModel, StalenessProcess};

pub const DEFAULT_HISTORY_CAP: usize = 10_000;

/// Recent iterates, newest last, plus the pinned initial point.
#[derive(Debug, Clone)]
pub struct History {
    initial: DVector<f64>,
    recent: VecDeque<DVector<f64>>,
    /// Index of the newest iterate.
    k: usize,
    cap: usize,
}

impl History {
    pub fn new(theta0: DVector<f64>, cap: usize) -> Self {
        let mut recent = VecDeque::with_capacity(cap.min(1024));
        recent.push_back(theta0.clone());
        History {
            initial: theta0,
            recent,
            k: 0,
            cap: cap.max(1),
        }
    }

    pub fn step(&self) -> usize {
        self.k
    }

    pub fn current(&self) -> &DVector<f64> {
        self.recent.back().expect("history is never empty")
    }

    /// `θ_{k−τ}`, clamped to `θ_0` when `τ > k`.
    pub fn read(&self, tau: usize) -> Result<&DVector<f64>> {
        if tau >= self.k {
            return Ok(&self.initial);
        }
        if tau >= self.recent.len() {
            return Err(Error::HistoryCapExceeded { tau, cap: self.cap });
        }
        Ok(&self.recent[self.recent.len() - 1 - tau])
    }

    pub fn push(&mut self, theta: DVector<f64>) {
        if self.recent.len() == self.cap {
            self.recent.pop_front();
        }
        self.recent.push_back(theta);
        self.k += 1;
    }
}

/// `θ_{k+1} = θ_k − η·g(θ_{k−τ})` with `g` the stochastic gradient.
pub fn asgd_step<R: Rng + ?Sized>(
    history: &History,
    eta: f64,
    tau: usize,
    oracle: &GradientOracle,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let stale = history.read(tau)?;
    let g = oracle.stochastic_grad(stale, rng);
    Ok(history.current() - g * eta)
}

/// Everything needed to reproduce one ASGD configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsgdSetup {
    pub params: Params,
    pub oracle: GradientOracle,
    pub staleness: StalenessModel,
    pub steps: usize,
    pub theta0: Vec<f64>,
    #[serde(default = "default_cap")]
    pub history_cap: usize,
}

fn default_cap() -> usize {
    DEFAULT_HISTORY_CAP
}

impl AsgdSetup {
    pub fn new(
        params: Params,
        oracle: GradientOracle,
        staleness: StalenessModel,
        steps: usize,
        theta0: Vec<f64>,
    ) -> Self {
        AsgdSetup {
            params,
            oracle,
            staleness,
            steps,
            theta0,
            history_cap: DEFAULT_HISTORY_CAP,
        }
    }

    fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.staleness.validate()?;
        if self.theta0.len() != self.params.d {
            return Err(Error::Domain(format!(
                "theta0 has {} components, d = {}",
                self.theta0.len(),
                self.params.d
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub theta: Vec<DVector<f64>>,
    /// `−sqrt(η/(1−κ))·∇f(θ_k)`, the initialization map applied at every step.
    pub y: Vec<DVector<f64>>,
    /// `tau[k]` is the delay used to produce `theta[k + 1]`.
    pub tau: Vec<usize>,
}

impl Trajectory {
    /// Columns: `k, tau, theta_0.., y_0..`; the last row has an empty `tau`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let d = self.theta.first().map_or(0, |t| t.len());
        let mut header = vec!["k".to_string(), "tau".to_string()];
        header.extend((0..d).map(|i| format!("theta_{i}")));
        header.extend((0..d).map(|i| format!("y_{i}")));
        w.write_record(&header)?;
        for k in 0..self.theta.len() {
            let mut row = vec![
                k.to_string(),
                self.tau.get(k).map(|t| t.to_string()).unwrap_or_default(),
            ];
            row.extend(self.theta[k].iter().map(|x| format!("{x:e}")));
            row.extend(self.y[k].iter().map(|x| format!("{x:e}")));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Maps an iterate to the initial state `(Θ, Y)` of the modified equation.
pub fn asgd_to_sme_state(
    theta: &DVector<f64>,
    params: &Params,
    oracle: &GradientOracle,
) -> (DVector<f64>, DVector<f64>) {
    let scale = (params.eta / (1.0 - params.kappa)).sqrt();
    (theta.clone(), oracle.grad(theta) * -scale)
}

fn simulate<R: Rng + ?Sized, F: FnMut(usize, &DVector<f64>)>(
    setup: &AsgdSetup,
    rng: &mut R,
    mut tau_trace: Option<&mut Vec<usize>>,
    mut visit: F,
) -> Result<()> {
    let theta0 = DVector::from_column_slice(&setup.theta0);
    let mut process = StalenessProcess::new(&setup.staleness)?;
    let mut history = History::new(theta0, setup.history_cap);
    visit(0, history.current());
    for k in 0..setup.steps {
        let tau = process.sample(rng);
        let next = asgd_step(&history, setup.params.eta, tau, &setup.oracle, rng)?;
        if !next.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite { step: k + 1 });
        }
        if let Some(trace) = tau_trace.as_deref_mut() {
            trace.push(tau);
        }
        history.push(next);
        visit(k + 1, history.current());
    }
    Ok(())
}

/// Single trajectory; identical to member 0 of [`run_ensemble`] under the same seed.
pub fn run_asgd(setup: &AsgdSetup, seed: u64) -> Result<Trajectory> {
    setup.validate()?;
    let mut rng = trajectory_rng(seed, 0);
    let mut theta = Vec::with_capacity(setup.steps + 1);
    let mut tau = Vec::with_capacity(setup.steps);
    simulate(setup, &mut rng, Some(&mut tau), |_, th| theta.push(th.clone()))?;
    let y = theta
        .iter()
        .map(|th| asgd_to_sme_state(th, &setup.params, &setup.oracle).1)
        .collect();
    Ok(Trajectory { theta, y, tau })
}

/// Record indices `0, stride, 2·stride, …` plus the final step.
pub fn record_steps(steps: usize, stride: usize) -> Vec<usize> {
    let stride = stride.max(1);
    let mut ks: Vec<usize> = (0..=steps).step_by(stride).collect();
    if *ks.last().unwrap() != steps {
        ks.push(steps);
    }
    ks
}

/// Moments of θ over `n` independent runs, recorded every `stride` steps.
pub fn run_ensemble(setup: &AsgdSetup, n: usize, stride: usize, seed: u64) -> Result<EnsembleMoments> {
    setup.validate()?;
    if n < 2 {
        return Err(Error::Domain("ensemble size must be >= 2".into()));
    }
    let ks = record_steps(setup.steps, stride);
    let dt_map = derive_params(&setup.params)?.dt_map;
    let d = setup.params.d;
    let acc = reduce_ensemble(n, d, ks.len(), |i| {
        let mut rng = trajectory_rng(seed, i as u64);
        let mut out = Vec::with_capacity(ks.len());
        let mut next = 0;
        simulate(setup, &mut rng, None, |k, th| {
            if next < ks.len() && ks[next] == k {
                out.push(th.clone());
                next += 1;
            }
        })?;
        Ok(out)
    })?;
    Ok(EnsembleMoments {
        times: ks.iter().map(|&k| k as f64 * dt_map).collect(),
        steps: Some(ks),
        means: acc.iter().map(|a| a.mean().clone()).collect(),
        covs: acc.iter().map(|a| a.covariance()).collect(),
        ensemble_size: n,
    })
}
