//! Parameter algebra: algorithmic inputs, the constants of the modified
//! equation, and the closed-form decay rates.

use nalgebra::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance on `|γ − 2ω₀| / γ` below which the damping is treated as critical.
pub const CRITICAL_RTOL: f64 = 1e-9;

/// User-facing ASGD inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Params {
    /// Learning rate η.
    pub eta: f64,
    /// Staleness rate κ; 0 is the synchronous limit.
    pub kappa: f64,
    /// Curvature scale ω₀ of the quadratic part of the loss.
    pub omega0: f64,
    /// Gradient-noise scale Σ (isotropic covariance Σ²·I).
    pub sigma_grad: f64,
    /// Parameter dimension.
    #[serde(default = "one")]
    pub d: usize,
    /// Number of local workers.
    #[serde(default = "one")]
    pub m: usize,
}

fn one() -> usize {
    1
}

impl Params {
    pub fn new(eta: f64, kappa: f64, omega0: f64, sigma_grad: f64) -> Result<Self> {
        let p = Params {
            eta,
            kappa,
            omega0,
            sigma_grad,
            d: 1,
            m: 1,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_dim(mut self, d: usize) -> Self {
        self.d = d;
        self
    }

    pub fn with_workers(mut self, m: usize) -> Self {
        self.m = m;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::Domain(format!("eta must be > 0, got {}", self.eta)));
        }
        if !(0.0..1.0).contains(&self.kappa) {
            return Err(Error::Domain(format!(
                "kappa must lie in [0, 1), got {}",
                self.kappa
            )));
        }
        if !(self.omega0 > 0.0 && self.omega0.is_finite()) {
            return Err(Error::Domain(format!(
                "omega0 must be > 0, got {}",
                self.omega0
            )));
        }
        if !(self.sigma_grad >= 0.0 && self.sigma_grad.is_finite()) {
            return Err(Error::Domain(format!(
                "sigma_grad must be >= 0, got {}",
                self.sigma_grad
            )));
        }
        if self.d == 0 {
            return Err(Error::Domain("d must be >= 1".into()));
        }
        if self.m == 0 {
            return Err(Error::Domain("m must be >= 1".into()));
        }
        Ok(())
    }
}

/// Constants of the stochastic modified equation derived from [`Params`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedParams {
    /// Friction γ = sqrt((1−κ)/η).
    pub gamma: f64,
    /// Diffusion amplitude η^{3/4}(1−κ)^{−1/4}Σ on the Θ equation.
    pub tau_noise: f64,
    /// Time elapsed per ASGD step, δ_t = sqrt(η(1−κ)).
    pub dt_map: f64,
    /// Inverse temperature; `None` when the diffusion vanishes.
    beta: Option<f64>,
}

impl DerivedParams {
    /// Inverse temperature β = 2γ / (τ²ω₀⁴).
    pub fn beta(&self) -> Result<f64> {
        self.beta.ok_or(Error::DegenerateDiffusion)
    }
}

pub fn derive_params(p: &Params) -> Result<DerivedParams> {
    p.validate()?;
    let one_minus_kappa = 1.0 - p.kappa;
    let gamma = (one_minus_kappa / p.eta).sqrt();
    let tau_noise = p.eta.powf(0.75) / one_minus_kappa.powf(0.25) * p.sigma_grad;
    let dt_map = (p.eta * one_minus_kappa).sqrt();
    let beta = if p.sigma_grad > 0.0 {
        Some(2.0 * gamma / (tau_noise * tau_noise * p.omega0.powi(4)))
    } else {
        None
    };
    Ok(DerivedParams {
        gamma,
        tau_noise,
        dt_map,
        beta,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Underdamped,
    Overdamped,
    Critical,
}

pub fn classify(gamma: f64, omega0: f64) -> Regime {
    let gap = gamma - 2.0 * omega0;
    if gap.abs() <= CRITICAL_RTOL * gamma {
        Regime::Critical
    } else if gap < 0.0 {
        Regime::Underdamped
    } else {
        Regime::Overdamped
    }
}

/// One row of the decay-rate case table together with the eigenvalue rate of `Q`.
///
/// `c` and `c_hat` are `None` in the critical regime; see [`crate::hypo::find_c_chat`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateCase {
    pub regime: Regime,
    pub mu_thm: f64,
    #[serde(rename = "C")]
    pub c: Option<f64>,
    #[serde(rename = "C_hat")]
    pub c_hat: Option<f64>,
    pub mu_matrix: f64,
}

/// Eigenvalues of a real 2×2 matrix `[[a, b], [c, d]]`, ordered by ascending real part.
pub fn eig2(a: f64, b: f64, c: f64, d: f64) -> [Complex<f64>; 2] {
    let half_tr = 0.5 * (a + d);
    let det = a * d - b * c;
    let disc = half_tr * half_tr - det;
    if disc >= 0.0 {
        let s = disc.sqrt();
        [
            Complex::new(half_tr - s, 0.0),
            Complex::new(half_tr + s, 0.0),
        ]
    } else {
        let s = (-disc).sqrt();
        [Complex::new(half_tr, -s), Complex::new(half_tr, s)]
    }
}

/// Smallest real part among the eigenvalues of `Q = [[0, 1], [−ω₀², γ]]`.
pub fn mu_matrix(gamma: f64, omega0: f64) -> f64 {
    let ev = eig2(0.0, 1.0, -omega0 * omega0, gamma);
    ev[0].re.min(ev[1].re)
}

/// Evaluates the case table. `delta` only matters in the critical regime,
/// where the reported rate is `γ − δ`.
pub fn theorem_rate(gamma: f64, omega0: f64, delta: f64) -> Result<RateCase> {
    if !(gamma > 0.0 && omega0 > 0.0) {
        return Err(Error::Domain(format!(
            "gamma and omega0 must be positive, got ({gamma}, {omega0})"
        )));
    }
    let regime = classify(gamma, omega0);
    let mu_matrix = mu_matrix(gamma, omega0);
    let w2 = omega0 * omega0;
    let case = match regime {
        Regime::Underdamped => RateCase {
            regime,
            mu_thm: gamma,
            c: Some(w2),
            c_hat: Some(gamma / 2.0),
            mu_matrix,
        },
        Regime::Overdamped => RateCase {
            regime,
            mu_thm: gamma - (gamma * gamma - 4.0 * w2).sqrt(),
            c: Some(gamma * gamma / 2.0 - w2),
            c_hat: Some(gamma / 2.0),
            mu_matrix,
        },
        Regime::Critical => RateCase {
            regime,
            mu_thm: gamma - delta,
            c: None,
            c_hat: None,
            mu_matrix,
        },
    };
    Ok(case)
}

/// Decay exponent per ASGD iteration, `μ·δ_t` written in terms of (η, κ, ω₀).
pub fn per_step_exponent(eta: f64, kappa: f64, omega0: f64) -> f64 {
    let q = 1.0 - kappa;
    if eta > lr_threshold(kappa, omega0) {
        q
    } else {
        // clamp guards the threshold point against rounding
        q - (q * q - 4.0 * omega0 * omega0 * q * eta).max(0.0).sqrt()
    }
}

/// Learning rate below which the per-step exponent starts to shrink.
pub fn lr_threshold(kappa: f64, omega0: f64) -> f64 {
    (1.0 - kappa) / (4.0 * omega0 * omega0)
}

/// Whether `m` asynchronous workers beat single-worker SGD: `(1−κ)m > 1`.
pub fn speedup_predicate(m: usize, kappa: f64) -> bool {
    (1.0 - kappa) * m as f64 > 1.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn derive_examples() {
        let d = derive_params(&Params::new(0.01, 0.5, 1.0, 1.0).unwrap()).unwrap();
        assert_relative_eq!(d.gamma, 7.0710678, epsilon = 1e-7);
        assert_relative_eq!(d.dt_map, 0.0707107, epsilon = 1e-7);
        assert_relative_eq!(d.tau_noise, 0.0376060, epsilon = 1e-7);
        assert_relative_eq!(d.beta().unwrap(), 10000.0, max_relative = 1e-12);

        let d = derive_params(&Params::new(1.0, 0.0, 1.0, 1.0).unwrap()).unwrap();
        assert_eq!((d.gamma, d.dt_map, d.tau_noise), (1.0, 1.0, 1.0));
        assert_relative_eq!(d.beta().unwrap(), 2.0, max_relative = 1e-15);

        let d = derive_params(&Params::new(0.04, 0.75, 2.0, 0.5).unwrap()).unwrap();
        assert_relative_eq!(d.gamma, 2.5, max_relative = 1e-15);
        assert_relative_eq!(d.dt_map, 0.1, max_relative = 1e-15);
        assert_relative_eq!(d.beta().unwrap(), 78.125, max_relative = 1e-12);
    }

    #[test]
    fn domain_errors() {
        assert!(matches!(Params::new(0.1, 1.0, 1.0, 1.0), Err(Error::Domain(_))));
        assert!(matches!(Params::new(0.0, 0.5, 1.0, 1.0), Err(Error::Domain(_))));
        assert!(matches!(Params::new(-1.0, 0.5, 1.0, 1.0), Err(Error::Domain(_))));
        let p = Params::new(0.1, 0.5, 1.0, 0.0).unwrap();
        assert!(matches!(
            derive_params(&p).unwrap().beta(),
            Err(Error::DegenerateDiffusion)
        ));
    }

    #[test]
    fn rate_table() {
        let r = theorem_rate(1.0, 1.0, 0.0).unwrap();
        assert_eq!(r.regime, Regime::Underdamped);
        assert_eq!((r.mu_thm, r.c, r.c_hat), (1.0, Some(1.0), Some(0.5)));
        assert_relative_eq!(r.mu_matrix, 0.5, epsilon = 1e-15);

        let r = theorem_rate(2.5, 1.0, 0.0).unwrap();
        assert_eq!(r.regime, Regime::Overdamped);
        assert_relative_eq!(r.mu_thm, 1.0, epsilon = 1e-15);
        assert_relative_eq!(r.c.unwrap(), 2.125, epsilon = 1e-15);
        assert_relative_eq!(r.c_hat.unwrap(), 1.25, epsilon = 1e-15);
        assert_relative_eq!(r.mu_matrix, 0.5, epsilon = 1e-15);

        let r = theorem_rate(2.0, 1.0, 0.3).unwrap();
        assert_eq!(r.regime, Regime::Critical);
        assert_relative_eq!(r.mu_thm, 1.7, epsilon = 1e-15);
        assert!(r.c.is_none() && r.c_hat.is_none());
        assert_eq!(classify(2.0 * (1.0 + 1e-11), 1.0), Regime::Critical);
    }

    #[test]
    fn step_exponent_and_threshold() {
        assert_eq!(per_step_exponent(0.2, 0.5, 1.0), 0.5);
        assert_relative_eq!(per_step_exponent(0.08, 0.5, 1.0), 0.2, epsilon = 1e-12);
        assert_relative_eq!(per_step_exponent(0.125, 0.5, 1.0), 0.5, epsilon = 1e-12);
        assert_eq!(lr_threshold(0.5, 1.0), 0.125);
        assert_eq!(lr_threshold(0.0, 1.0), 0.25);
        assert_relative_eq!(lr_threshold(0.9, 2.0), 0.00625, epsilon = 1e-15);
    }

    #[test]
    fn speedup_cases() {
        assert!(speedup_predicate(4, 0.6));
        assert!(!speedup_predicate(2, 0.5));
        assert!(!speedup_predicate(1, 0.0));
    }

    proptest! {
        #[test]
        fn beta_identity(eta in 1e-4f64..2.0, kappa in 0.0f64..0.99, w in 0.1f64..5.0, s in 0.01f64..5.0) {
            let p = Params::new(eta, kappa, w, s).unwrap();
            let d = derive_params(&p).unwrap();
            let beta = d.beta().unwrap();
            let lhs = beta * d.tau_noise.powi(2) * w.powi(4);
            prop_assert!((lhs - 2.0 * d.gamma).abs() <= 1e-12 * 2.0 * d.gamma);
            let alt = 2.0 * (1.0 - kappa) / (eta * eta * s * s * w.powi(4));
            prop_assert!((beta - alt).abs() <= 1e-12 * alt);
        }

        #[test]
        fn lyapunov_weight_dominates(gamma in 0.01f64..10.0, w in 0.01f64..5.0) {
            prop_assume!(classify(gamma, w) != Regime::Critical);
            let r = theorem_rate(gamma, w, 0.0).unwrap();
            let (c, ch) = (r.c.unwrap(), r.c_hat.unwrap());
            prop_assert!(c - ch * ch > 0.0);
            prop_assert!((r.mu_thm - 2.0 * r.mu_matrix).abs() <= 1e-9 * r.mu_thm.max(1.0));
        }

        #[test]
        fn step_exponent_monotone(kappa in 0.0f64..0.95, w in 0.2f64..3.0, f1 in 0.01f64..4.0, f2 in 0.01f64..4.0) {
            let star = lr_threshold(kappa, w);
            let (lo, hi) = if f1 < f2 { (f1, f2) } else { (f2, f1) };
            let a = per_step_exponent(lo * star, kappa, w);
            let b = per_step_exponent(hi * star, kappa, w);
            prop_assert!(a <= b + 1e-12);
            if lo >= 1.0 {
                prop_assert_eq!(a, b);
            }
        }
    }
}
