//! The stochastic modified equation
//!
//! ```text
//! dΘ = Y dt + τ dB,    dY = −∇f(Θ) dt − γ Y dt
//! ```
//!
//! its Euler–Maruyama ensembles, the exact Gaussian moments when `ε = 0`,
//! and the linear change of variables to phase space `(x, v)`.

use nalgebra::{DMatrix, DVector, Matrix2, Matrix4, Vector4};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::loss::GradientOracle;
use crate::moments::{reduce_ensemble, trajectory_rng, EnsembleMoments};
use crate::params::DerivedParams;

#[derive(Debug, Clone, PartialEq)]
pub struct SmeState {
    pub theta: DVector<f64>,
    pub y: DVector<f64>,
    pub t: f64,
}

impl SmeState {
    pub fn new(theta: DVector<f64>, y: DVector<f64>) -> Self {
        SmeState { theta, y, t: 0.0 }
    }

    /// `(Θ, Y)` stacked into one vector.
    pub fn stacked(&self) -> DVector<f64> {
        let d = self.theta.len();
        DVector::from_fn(2 * d, |i, _| if i < d { self.theta[i] } else { self.y[i - d] })
    }
}

/// Default step: `min(0.05/γ, δ_t)`.
pub fn default_dt(derived: &DerivedParams) -> f64 {
    (0.05 / derived.gamma).min(derived.dt_map)
}

/// One Euler–Maruyama step; the noise enters the Θ equation only.
pub fn em_step<R: Rng + ?Sized>(
    state: &SmeState,
    dt: f64,
    derived: &DerivedParams,
    oracle: &GradientOracle,
    rng: &mut R,
) -> Result<SmeState> {
    let grad = oracle.grad(&state.theta);
    let mut theta = &state.theta + &state.y * dt;
    if derived.tau_noise > 0.0 {
        let amp = derived.tau_noise * dt.sqrt();
        for th in theta.iter_mut() {
            let xi: f64 = rng.sample(StandardNormal);
            *th += amp * xi;
        }
    }
    let y = &state.y + (-grad - &state.y * derived.gamma) * dt;
    if !(theta.iter().chain(y.iter()).all(|v| v.is_finite())) {
        return Err(Error::NonFinite {
            step: (state.t / dt).round() as usize + 1,
        });
    }
    Ok(SmeState {
        theta,
        y,
        t: state.t + dt,
    })
}

/// Ensemble of SME paths from a common deterministic start.
#[derive(Debug, Clone, PartialEq)]
pub struct SmeEnsembleSpec {
    pub init: SmeState,
    pub t_final: f64,
    pub dt: f64,
    pub paths: usize,
    /// Record every `stride` steps (and at the final step).
    pub stride: usize,
}

/// Moments of the stacked state `(Θ, Y)` on the stride grid.
pub fn run_sme_ensemble(
    spec: &SmeEnsembleSpec,
    derived: &DerivedParams,
    oracle: &GradientOracle,
    seed: u64,
) -> Result<EnsembleMoments> {
    if spec.paths < 2 {
        return Err(Error::Domain("ensemble size must be >= 2".into()));
    }
    if !(spec.dt > 0.0) {
        return Err(Error::Domain(format!("dt must be > 0, got {}", spec.dt)));
    }
    if spec.dt > 0.1 / derived.gamma {
        log::warn!(
            "dt = {} exceeds the stability guard 0.1/gamma = {}",
            spec.dt,
            0.1 / derived.gamma
        );
    }
    let n_steps = (spec.t_final / spec.dt).round() as usize;
    let ks = crate::asgd::record_steps(n_steps, spec.stride);
    let dim = 2 * spec.init.theta.len();
    let acc = reduce_ensemble(spec.paths, dim, ks.len(), |i| {
        let mut rng = trajectory_rng(seed, i as u64);
        let mut state = spec.init.clone();
        let mut out = Vec::with_capacity(ks.len());
        let mut next = 0;
        for k in 0..=n_steps {
            if k > 0 {
                state = em_step(&state, spec.dt, derived, oracle, &mut rng)?;
            }
            if next < ks.len() && ks[next] == k {
                out.push(state.stacked());
                next += 1;
            }
        }
        Ok(out)
    })?;
    Ok(EnsembleMoments {
        times: ks.iter().map(|&k| spec.init.t + k as f64 * spec.dt).collect(),
        steps: None,
        means: acc.iter().map(|a| a.mean().clone()).collect(),
        covs: acc.iter().map(|a| a.covariance()).collect(),
        ensemble_size: spec.paths,
    })
}

/// `sinh(x)/x`, accurate near zero.
fn sinhc(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        1.0 + x * x / 6.0
    } else {
        x.sinh() / x
    }
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

/// `exp(A t)` for the per-coordinate drift `A = [[0, 1], [−ω₀², −γ]]`.
///
/// With `s = −γ/2` and `q² = γ²/4 − ω₀²`, Cayley–Hamilton gives
/// `exp(At) = e^{st}[c(t)·I + S(t)·(A − sI)]` where `c = cosh(qt)` and
/// `S = sinh(qt)/q`, continued through `q = 0` and imaginary `q`.
pub fn drift_exp(gamma: f64, omega0: f64, t: f64) -> Matrix2<f64> {
    let a = Matrix2::new(0.0, 1.0, -omega0 * omega0, -gamma);
    let s = -0.5 * gamma;
    let q2 = 0.25 * gamma * gamma - omega0 * omega0;
    let (c, big_s) = if q2 >= 0.0 {
        let q = q2.sqrt();
        let qt = q * t;
        if qt > 20.0 {
            // split the exponentials so neither factor overflows
            let up = ((s + q) * t).exp();
            let down = ((s - q) * t).exp();
            let c = 0.5 * (up + down);
            let sh = 0.5 * (up - down) / q;
            return Matrix2::identity() * c + (a - Matrix2::identity() * s) * sh;
        }
        (qt.cosh(), t * sinhc(qt))
    } else {
        let w = (-q2).sqrt();
        ((w * t).cos(), t * sinc(w * t))
    };
    let e = (s * t).exp();
    (Matrix2::identity() * c + (a - Matrix2::identity() * s) * big_s) * e
}

/// Stationary covariance `Σ∞` with `AΣ∞ + Σ∞Aᵀ + diag(τ², 0) = 0`.
pub fn stationary_cov2(gamma: f64, omega0: f64, tau_noise: f64) -> Matrix2<f64> {
    let a = Matrix2::new(0.0, 1.0, -omega0 * omega0, -gamma);
    let i2 = Matrix2::<f64>::identity();
    // vec(AΣ + ΣAᵀ) = (I ⊗ A + A ⊗ I) vec(Σ), column-major vec
    let mut k = Matrix4::<f64>::zeros();
    for r in 0..2 {
        for c in 0..2 {
            for p in 0..2 {
                for q in 0..2 {
                    k[(2 * r + p, 2 * c + q)] += i2[(r, c)] * a[(p, q)] + a[(r, c)] * i2[(p, q)];
                }
            }
        }
    }
    let rhs = -Vector4::new(tau_noise * tau_noise, 0.0, 0.0, 0.0);
    let v = k.lu().solve(&rhs).expect("drift is Hurwitz for gamma, omega0 > 0");
    let m = Matrix2::new(v[0], v[2], v[1], v[3]);
    (m + m.transpose()) * 0.5
}

/// Expands a 2×2 per-coordinate matrix into the `(Θ-block, Y-block)` 2d×2d layout.
fn block_kron(m: &Matrix2<f64>, d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(2 * d, 2 * d, |i, j| {
        if i % d == j % d {
            m[(i / d, j / d)]
        } else {
            0.0
        }
    })
}

/// Exact mean and covariance of the stacked state.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentState {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub t: f64,
}

/// Closed-form Gaussian moments of the linear SME (`ε = 0`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OuOracle {
    pub gamma: f64,
    pub omega0: f64,
    pub tau_noise: f64,
}

impl OuOracle {
    pub fn new(derived: &DerivedParams, oracle: &GradientOracle) -> Result<Self> {
        if !oracle.epsilon.is_zero() {
            return Err(Error::PerturbedOracle);
        }
        Ok(OuOracle {
            gamma: derived.gamma,
            omega0: oracle.omega0,
            tau_noise: derived.tau_noise,
        })
    }

    pub fn moments(&self, m0: &DVector<f64>, cov0: &DMatrix<f64>, t: f64) -> MomentState {
        if t == 0.0 {
            return MomentState {
                mean: m0.clone(),
                cov: cov0.clone(),
                t,
            };
        }
        let d = m0.len() / 2;
        let e = block_kron(&drift_exp(self.gamma, self.omega0, t), d);
        let inf = block_kron(&stationary_cov2(self.gamma, self.omega0, self.tau_noise), d);
        let et = e.transpose();
        // Σ(t) = E Σ0 Eᵀ + Σ∞ − E Σ∞ Eᵀ
        let mut cov = &e * cov0 * &et + &inf - &e * &inf * &et;
        cov = (&cov + cov.transpose()) * 0.5;
        MomentState {
            mean: &e * m0,
            cov,
            t,
        }
    }

    pub fn mean(&self, m0: &DVector<f64>, t: f64) -> DVector<f64> {
        let d = m0.len() / 2;
        block_kron(&drift_exp(self.gamma, self.omega0, t), d) * m0
    }
}

pub fn ou_moment_oracle(
    m0: &DVector<f64>,
    cov0: &DMatrix<f64>,
    t: f64,
    derived: &DerivedParams,
    oracle: &GradientOracle,
) -> Result<MomentState> {
    Ok(OuOracle::new(derived, oracle)?.moments(m0, cov0, t))
}

/// `x = y`, `v = −ω₀²θ − γy`.
pub fn to_phase(theta: f64, y: f64, gamma: f64, omega0: f64) -> (f64, f64) {
    (y, -omega0 * omega0 * theta - gamma * y)
}

pub fn from_phase(x: f64, v: f64, gamma: f64, omega0: f64) -> Result<(f64, f64)> {
    if omega0 == 0.0 {
        return Err(Error::Domain("from_phase requires omega0 != 0".into()));
    }
    Ok((-(v + gamma * x) / (omega0 * omega0), x))
}

/// Covariance of `(x, v)` given the covariance of `(Θ, Y)` (same block layout).
pub fn phase_covariance(cov: &DMatrix<f64>, gamma: f64, omega0: f64) -> DMatrix<f64> {
    let d = cov.nrows() / 2;
    let map = block_kron(&Matrix2::new(0.0, 1.0, -omega0 * omega0, -gamma), d);
    &map * cov * map.transpose()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::EpsilonModel;
    use crate::params::{derive_params, Params};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn derived(gamma: f64, tau: f64) -> DerivedParams {
        // η = (1−κ)/γ² at κ = 0; Σ tuned so τ_noise matches
        let eta = 1.0 / (gamma * gamma);
        let sigma = if tau == 0.0 { 0.0 } else { tau / eta.powf(0.75) };
        derive_params(&Params::new(eta, 0.0, 1.0, sigma).unwrap()).unwrap()
    }

    #[test]
    fn deterministic_step() {
        let d = derived(2.5, 0.0);
        let o = GradientOracle::new(1.0, EpsilonModel::Zero, 0.0);
        let s = SmeState::new(DVector::from_vec(vec![1.0]), DVector::from_vec(vec![0.0]));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let n = em_step(&s, 0.01, &d, &o, &mut rng).unwrap();
        assert_relative_eq!(n.theta[0], 1.0, epsilon = 1e-15);
        assert_relative_eq!(n.y[0], -0.01, epsilon = 1e-15);

        let z = SmeState::new(DVector::from_vec(vec![0.0]), DVector::from_vec(vec![0.0]));
        let n = em_step(&z, 0.01, &d, &o, &mut rng).unwrap();
        assert_eq!((n.theta[0], n.y[0]), (0.0, 0.0));
    }

    #[test]
    fn step_halving_is_first_order() {
        // deterministic EM error against the exact flow; halving dt halves the error
        let d = derived(2.5, 0.0);
        let o = GradientOracle::new(1.0, EpsilonModel::Zero, 0.0);
        let exact = drift_exp(2.5, 1.0, 1.0) * nalgebra::Vector2::new(1.0, 0.0);
        let err = |dt: f64| {
            let mut s = SmeState::new(DVector::from_vec(vec![1.0]), DVector::from_vec(vec![0.0]));
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            for _ in 0..(1.0 / dt).round() as usize {
                s = em_step(&s, dt, &d, &o, &mut rng).unwrap();
            }
            ((s.theta[0] - exact[0]).powi(2) + (s.y[0] - exact[1]).powi(2)).sqrt()
        };
        let ratio = err(1e-2) / err(5e-3);
        assert!((ratio - 2.0).abs() < 0.1, "ratio {ratio}");
    }

    #[test]
    fn overdamped_mean_closed_form() {
        let m = drift_exp(2.5, 1.0, 1.0) * nalgebra::Vector2::new(1.0, 0.0);
        let expect = 4.0 / 3.0 * (-0.5f64).exp() - 1.0 / 3.0 * (-2.0f64).exp();
        assert_relative_eq!(m[0], expect, epsilon = 1e-14);
        assert_relative_eq!(m[0], 0.763596, epsilon = 1e-6);
    }

    #[test]
    fn drift_exp_matches_taylor_series() {
        // independent route: truncated power series of exp(At)
        for &(g, w, t) in &[(1.0, 1.0, 0.7), (2.5, 1.0, 1.3), (2.0, 1.0, 0.9), (2.0 + 1e-7, 1.0, 2.0)] {
            let a = Matrix2::new(0.0, 1.0, -w * w, -g) * t;
            let mut term = Matrix2::<f64>::identity();
            let mut sum = term;
            for n in 1..60 {
                term = term * a / n as f64;
                sum += term;
            }
            assert_relative_eq!(drift_exp(g, w, t), sum, epsilon = 1e-12);
        }
    }

    #[test]
    fn large_time_exp_is_finite() {
        let e = drift_exp(40.0, 1.0, 500.0);
        assert!(e.iter().all(|x| x.is_finite()));
        // slow root of λ² + 40λ + 1 is ≈ −0.025
        let slow = -(40.0 - (1600.0f64 - 4.0).sqrt()) / 2.0;
        let ratio = drift_exp(40.0, 1.0, 501.0)[(0, 0)] / e[(0, 0)];
        assert_relative_eq!(ratio.ln(), slow, epsilon = 1e-9);
    }

    #[test]
    fn oracle_identity_at_zero_time() {
        let d = derived(2.5, 0.3);
        let o = GradientOracle::new(1.0, EpsilonModel::Zero, 1.0);
        let m0 = DVector::from_vec(vec![1.0, -0.5]);
        let c0 = DMatrix::from_row_slice(2, 2, &[0.2, 0.05, 0.05, 0.1]);
        let r = ou_moment_oracle(&m0, &c0, 0.0, &d, &o).unwrap();
        assert_eq!(r.mean, m0);
        assert_eq!(r.cov, c0);
    }

    #[test]
    fn oracle_rejects_perturbed_loss() {
        let d = derived(2.5, 0.3);
        let o = GradientOracle::new(1.0, EpsilonModel::tanh_gauss(0.01), 1.0);
        assert!(matches!(OuOracle::new(&d, &o), Err(Error::PerturbedOracle)));
    }

    #[test]
    fn oracle_mean_decay_rate() {
        let d = derived(2.5, 0.0);
        let o = OuOracle::new(&d, &GradientOracle::new(1.0, EpsilonModel::Zero, 0.0)).unwrap();
        let m0 = DVector::from_vec(vec![1.0, 0.0]);
        let ts: Vec<f64> = (0..=150).map(|i| 5.0 + 0.1 * i as f64).collect();
        let ys: Vec<f64> = ts.iter().map(|&t| o.mean(&m0, t)[0].ln()).collect();
        let n = ts.len() as f64;
        let (mt, my) = (ts.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
        let slope = ts.iter().zip(&ys).map(|(t, y)| (t - mt) * (y - my)).sum::<f64>()
            / ts.iter().map(|t| (t - mt).powi(2)).sum::<f64>();
        assert!((-slope - 0.5).abs() < 1e-3, "rate {}", -slope);
    }

    #[test]
    fn covariance_solves_lyapunov_ode() {
        // finite-difference check of dΣ/dt = AΣ + ΣAᵀ + D
        let (g, w, tau) = (1.3, 0.8, 0.4);
        let o = OuOracle {
            gamma: g,
            omega0: w,
            tau_noise: tau,
        };
        let m0 = DVector::from_vec(vec![0.3, 0.1]);
        let c0 = DMatrix::from_row_slice(2, 2, &[0.05, 0.01, 0.01, 0.02]);
        let (t, h) = (0.8, 1e-5);
        let dc = (o.moments(&m0, &c0, t + h).cov - o.moments(&m0, &c0, t - h).cov) / (2.0 * h);
        let c = o.moments(&m0, &c0, t).cov;
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -w * w, -g]);
        let mut rhs = &a * &c + &c * a.transpose();
        rhs[(0, 0)] += tau * tau;
        assert_relative_eq!(dc, rhs, epsilon = 1e-8);
    }

    #[test]
    fn stationary_phase_variances() {
        let (g, w, tau) = (1.7f64, 1.3f64, 0.6f64);
        let beta = 2.0 * g / (tau * tau * w.powi(4));
        let s = stationary_cov2(g, w, tau);
        let c = phase_covariance(&DMatrix::from_fn(2, 2, |i, j| s[(i, j)]), g, w);
        assert_relative_eq!(c[(0, 0)], 1.0 / (beta * w * w), max_relative = 1e-12);
        assert_relative_eq!(c[(1, 1)], 1.0 / beta, max_relative = 1e-12);
        assert!(c[(0, 1)].abs() < 1e-14);
    }

    #[test]
    fn noiseless_ensemble_has_no_spread() {
        let d = derived(2.5, 0.0);
        let o = GradientOracle::new(1.0, EpsilonModel::Zero, 0.0);
        let spec = SmeEnsembleSpec {
            init: SmeState::new(DVector::from_vec(vec![1.0]), DVector::from_vec(vec![0.0])),
            t_final: 1.0,
            dt: 0.01,
            paths: 8,
            stride: 10,
        };
        let m = run_sme_ensemble(&spec, &d, &o, 1).unwrap();
        assert!(m.covs.iter().all(|c| c.iter().all(|&x| x == 0.0)));
        assert_eq!(m.len(), 11);
    }

    #[test]
    fn phase_map_examples() {
        assert_eq!(to_phase(0.0, 0.0, 2.5, 1.0), (0.0, -0.0));
        assert_eq!(to_phase(1.0, 0.0, 2.5, 1.0), (0.0, -1.0));
        assert!(from_phase(1.0, 1.0, 1.0, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn phase_round_trip(th in -10.0f64..10.0, y in -10.0f64..10.0, g in 0.1f64..5.0, w in 0.2f64..3.0) {
            let (x, v) = to_phase(th, y, g, w);
            let (th2, y2) = from_phase(x, v, g, w).unwrap();
            prop_assert!((th2 - th).abs() < 1e-14 * (1.0 + th.abs()) * (1.0 + g / (w * w)) * 10.0);
            prop_assert!((y2 - y).abs() == 0.0);
        }
    }
}
