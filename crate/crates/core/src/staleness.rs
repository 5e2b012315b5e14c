//! Delay models for the stale parameter reads.
//!
//! The geometric law is the modeling assumption behind the modified
//! equation. The worker-queue model produces delays from an explicit
//! read → compute → commit schedule on a single event timeline, and is
//! only used to compare against the geometric law.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};

/// Per-worker gradient computation time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case", deny_unknown_fields)]
pub enum ServiceTime {
    Deterministic { mean: f64 },
    Exponential { mean: f64 },
}

impl ServiceTime {
    fn mean(&self) -> f64 {
        match *self {
            ServiceTime::Deterministic { mean } | ServiceTime::Exponential { mean } => mean,
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            ServiceTime::Deterministic { mean } => mean,
            ServiceTime::Exponential { mean } => Exp::new(1.0 / mean)
                .expect("validated positive mean")
                .sample(rng),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StalenessModel {
    /// `P(τ = l) = (1−κ)κ^l`.
    Geometric { kappa: f64 },
    /// `τ ≡ lag`.
    Fixed { lag: usize },
    /// `workers` processes sharing one step counter.
    WorkerQueue { workers: usize, service: ServiceTime },
}

impl StalenessModel {
    pub fn validate(&self) -> Result<()> {
        match *self {
            StalenessModel::Geometric { kappa } if !(0.0..1.0).contains(&kappa) => Err(
                Error::Domain(format!("geometric kappa must lie in [0, 1), got {kappa}")),
            ),
            StalenessModel::WorkerQueue { workers: 0, .. } => {
                Err(Error::Domain("worker_queue needs at least one worker".into()))
            }
            StalenessModel::WorkerQueue { service, .. }
                if !(service.mean() > 0.0 && service.mean().is_finite()) =>
            {
                Err(Error::Domain(format!(
                    "service time mean must be positive, got {}",
                    service.mean()
                )))
            }
            _ => Ok(()),
        }
    }
}

/// `(1−κ)κ^l`.
pub fn geometric_pmf(kappa: f64, l: usize) -> f64 {
    (1.0 - kappa) * kappa.powi(l as i32)
}

/// Inversion sampler for the geometric law.
pub fn sample_geometric<R: Rng + ?Sized>(kappa: f64, rng: &mut R) -> usize {
    if kappa <= 0.0 {
        return 0;
    }
    // 1 − U lies in (0, 1], so the log is finite
    let u = 1.0 - rng.random::<f64>();
    (u.ln() / kappa.ln()).floor() as usize
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Commit {
    time: f64,
    worker: usize,
    read_at: u64,
}

impl Eq for Commit {}

impl Ord for Commit {
    // min-heap on (time, worker)
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.worker.cmp(&self.worker))
    }
}

impl PartialOrd for Commit {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Discrete-event schedule of `m` workers around a shared step counter.
#[derive(Debug, Clone)]
pub struct WorkerQueue {
    service: ServiceTime,
    counter: u64,
    pending: BinaryHeap<Commit>,
    started: bool,
    workers: usize,
}

impl WorkerQueue {
    pub fn new(workers: usize, service: ServiceTime) -> Self {
        WorkerQueue {
            service,
            counter: 0,
            pending: BinaryHeap::with_capacity(workers),
            started: false,
            workers,
        }
    }

    /// Delay of the next committed gradient.
    pub fn next_commit<R: Rng + ?Sized>(&mut self, rng: &mut R) -> usize {
        if !self.started {
            for worker in 0..self.workers {
                let time = self.service.sample(rng);
                self.pending.push(Commit {
                    time,
                    worker,
                    read_at: 0,
                });
            }
            self.started = true;
        }
        let ev = self.pending.pop().expect("at least one worker");
        let tau = (self.counter - ev.read_at) as usize;
        self.counter += 1;
        let time = ev.time + self.service.sample(rng);
        self.pending.push(Commit {
            time,
            worker: ev.worker,
            read_at: self.counter,
        });
        tau
    }
}

/// Stateful delay generator for one trajectory.
#[derive(Debug, Clone)]
pub enum StalenessProcess {
    Geometric(f64),
    Fixed(usize),
    Queue(WorkerQueue),
}

impl StalenessProcess {
    pub fn new(model: &StalenessModel) -> Result<Self> {
        model.validate()?;
        Ok(match *model {
            StalenessModel::Geometric { kappa } => StalenessProcess::Geometric(kappa),
            StalenessModel::Fixed { lag } => StalenessProcess::Fixed(lag),
            StalenessModel::WorkerQueue { workers, service } => {
                StalenessProcess::Queue(WorkerQueue::new(workers, service))
            }
        })
    }

    pub fn sample<R: Rng + ?Sized>(&mut self, rng: &mut R) -> usize {
        match self {
            StalenessProcess::Geometric(kappa) => sample_geometric(*kappa, rng),
            StalenessProcess::Fixed(lag) => *lag,
            StalenessProcess::Queue(q) => q.next_commit(rng),
        }
    }
}

pub fn sample_trace<R: Rng + ?Sized>(
    model: &StalenessModel,
    len: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let mut process = StalenessProcess::new(model)?;
    Ok((0..len).map(|_| process.sample(rng)).collect())
}

/// Summary of an observed delay trace against a fitted geometric law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StalenessStats {
    pub samples: usize,
    /// Arithmetic mean of the trace, the pmf mean `κ/(1−κ)` under the geometric law.
    pub mean: f64,
    /// `1 + mean`, i.e. `1/(1−κ̂)`; the quantity compared against the worker count.
    pub expected_staleness: f64,
    pub kappa_hat: f64,
    /// Empirical pmf for `l = 0..max_observed`.
    pub pmf: Vec<f64>,
    /// Number of individually tested bins; the last bin pools `l ≥ bins − 1`.
    pub bins: usize,
    pub chi_square: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Minimum expected count in the pooled tail bin.
const MIN_EXPECTED: f64 = 5.0;

pub fn staleness_stats(trace: &[usize]) -> Result<StalenessStats> {
    if trace.is_empty() {
        return Err(Error::EmptyTrace);
    }
    let n = trace.len() as f64;
    let mean = trace.iter().map(|&t| t as f64).sum::<f64>() / n;
    let kappa_hat = mean / (1.0 + mean);
    let max_tau = *trace.iter().max().unwrap();
    let mut counts = vec![0usize; max_tau + 1];
    for &t in trace {
        counts[t] += 1;
    }
    let pmf: Vec<f64> = counts.iter().map(|&c| c as f64 / n).collect();

    // tail starts at the last l whose expected tail count is still ≥ MIN_EXPECTED
    let mut tail_start = 0usize;
    if kappa_hat > 0.0 {
        while tail_start < 500 && n * kappa_hat.powi(tail_start as i32 + 1) >= MIN_EXPECTED {
            tail_start += 1;
        }
    }
    let bins = tail_start + 1;
    let mut chi_square = 0.0;
    for l in 0..bins {
        let (observed, expected) = if l < tail_start {
            (counts.get(l).copied().unwrap_or(0) as f64, n * geometric_pmf(kappa_hat, l))
        } else {
            let obs: usize = counts.iter().skip(l).sum();
            (obs as f64, n * kappa_hat.powi(l as i32))
        };
        if expected > 0.0 {
            chi_square += (observed - expected).powi(2) / expected;
        }
    }
    // one dof lost to normalization, one to the fitted κ̂
    let dof = bins.saturating_sub(2);
    let p_value = if dof == 0 {
        1.0
    } else {
        ChiSquared::new(dof as f64)
            .map(|d| 1.0 - d.cdf(chi_square))
            .unwrap_or(f64::NAN)
    };
    Ok(StalenessStats {
        samples: trace.len(),
        mean,
        expected_staleness: 1.0 + mean,
        kappa_hat,
        pmf,
        bins,
        chi_square,
        dof,
        p_value,
    })
}

/// Writes `k,tau` rows.
pub fn write_trace_csv(path: &Path, trace: &[usize]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["k", "tau"])?;
    for (k, tau) in trace.iter().enumerate() {
        w.write_record([k.to_string(), tau.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
