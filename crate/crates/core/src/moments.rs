//! Ensemble statistics shared by the ASGD and SME simulators.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::Result;

/// Trajectories per work unit. Fixed so reductions do not depend on the thread count.
const CHUNK: usize = 64;

/// Independent stream for trajectory `index` under `seed`.
pub fn trajectory_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Running mean and scatter matrix (Welford, with Chan's merge).
#[derive(Debug, Clone)]
pub struct MomentAccumulator {
    n: usize,
    mean: DVector<f64>,
    m2: DMatrix<f64>,
}

impl MomentAccumulator {
    pub fn new(dim: usize) -> Self {
        MomentAccumulator {
            n: 0,
            mean: DVector::zeros(dim),
            m2: DMatrix::zeros(dim, dim),
        }
    }

    pub fn push(&mut self, x: &DVector<f64>) {
        self.n += 1;
        let delta = x - &self.mean;
        let n = self.n as f64;
        self.mean += &delta / n;
        self.m2.ger(1.0 - 1.0 / n, &delta, &delta, 1.0);
    }

    pub fn merge(&mut self, other: &MomentAccumulator) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = other.clone();
            return;
        }
        let (na, nb) = (self.n as f64, other.n as f64);
        let n = na + nb;
        let delta = &other.mean - &self.mean;
        self.mean += &delta * (nb / n);
        self.m2 += &other.m2;
        self.m2.ger(na * nb / n, &delta, &delta, 1.0);
        self.n += other.n;
    }

    pub fn count(&self) -> usize {
        self.n
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    /// Unbiased sample covariance.
    pub fn covariance(&self) -> DMatrix<f64> {
        if self.n < 2 {
            return DMatrix::zeros(self.mean.len(), self.mean.len());
        }
        (&self.m2 + self.m2.transpose()) / (2.0 * (self.n as f64 - 1.0))
    }
}

/// Per-time ensemble mean and covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleMoments {
    pub times: Vec<f64>,
    /// Iteration index of each record, when the series comes from a discrete algorithm.
    pub steps: Option<Vec<usize>>,
    pub means: Vec<DVector<f64>>,
    pub covs: Vec<DMatrix<f64>>,
    pub ensemble_size: usize,
}

impl EnsembleMoments {
    /// Standard error of the ensemble mean of component `comp` at record `idx`.
    pub fn mean_se(&self, idx: usize, comp: usize) -> f64 {
        (self.covs[idx][(comp, comp)] / self.ensemble_size as f64).sqrt()
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Smallest eigenvalue over all recorded covariances.
    pub fn min_cov_eigenvalue(&self) -> f64 {
        self.covs
            .iter()
            .map(|c| {
                c.clone()
                    .symmetric_eigen()
                    .eigenvalues
                    .iter()
                    .copied()
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// Columns: `[k,] t, mean_0.., cov_i_j..` (upper triangle).
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let dim = self.means.first().map_or(0, |m| m.len());
        let mut header = Vec::new();
        if self.steps.is_some() {
            header.push("k".to_string());
        }
        header.push("t".to_string());
        header.extend((0..dim).map(|i| format!("mean_{i}")));
        for i in 0..dim {
            for j in i..dim {
                header.push(format!("cov_{i}_{j}"));
            }
        }
        w.write_record(&header)?;
        for r in 0..self.len() {
            let mut row = Vec::with_capacity(header.len());
            if let Some(steps) = &self.steps {
                row.push(steps[r].to_string());
            }
            row.push(format!("{:e}", self.times[r]));
            row.extend(self.means[r].iter().map(|x| format!("{x:e}")));
            for i in 0..dim {
                for j in i..dim {
                    row.push(format!("{:e}", self.covs[r][(i, j)]));
                }
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs `n` trajectories in parallel and reduces their recorded states in index order.
///
/// `path(i)` returns the states of trajectory `i` at each of the `records` record times.
pub(crate) fn reduce_ensemble<F>(n: usize, dim: usize, records: usize, path: F) -> Result<Vec<MomentAccumulator>>
where
    F: Fn(usize) -> Result<Vec<DVector<f64>>> + Sync,
{
    let chunks: Vec<Result<Vec<MomentAccumulator>>> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut acc = vec![MomentAccumulator::new(dim); records];
            for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
                let states = path(i)?;
                debug_assert_eq!(states.len(), records);
                for (a, s) in acc.iter_mut().zip(&states) {
                    a.push(s);
                }
            }
            Ok(acc)
        })
        .collect();
    let mut total = vec![MomentAccumulator::new(dim); records];
    for chunk in chunks {
        for (t, a) in total.iter_mut().zip(chunk?) {
            t.merge(&a);
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn merge_matches_single_pass() {
        let xs: Vec<DVector<f64>> = (0..50)
            .map(|i| {
                let t = i as f64;
                DVector::from_vec(vec![t.sin(), (0.3 * t).cos() + t / 50.0])
            })
            .collect();
        let mut whole = MomentAccumulator::new(2);
        xs.iter().for_each(|x| whole.push(x));
        let mut a = MomentAccumulator::new(2);
        let mut b = MomentAccumulator::new(2);
        xs[..17].iter().for_each(|x| a.push(x));
        xs[17..].iter().for_each(|x| b.push(x));
        a.merge(&b);
        assert_eq!(a.count(), 50);
        assert_relative_eq!(a.mean(), whole.mean(), epsilon = 1e-14);
        assert_relative_eq!(a.covariance(), whole.covariance(), epsilon = 1e-14);
        let c = whole.covariance();
        assert_eq!(c[(0, 1)], c[(1, 0)]);
    }

    #[test]
    fn identical_samples_have_zero_covariance() {
        let mut acc = MomentAccumulator::new(3);
        let x = DVector::from_vec(vec![0.1, -2.7, 1e-3]);
        acc.push(&x);
        acc.push(&x);
        assert!(acc.covariance().iter().all(|&c| c == 0.0));
    }
}
