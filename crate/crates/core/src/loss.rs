//! Perturbed-quadratic loss family `∇f(θ) = ω₀²θ + ε(θ)`.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Componentwise perturbation of the linear gradient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EpsilonModel {
    Zero,
    /// `ε_i(θ) = a·tanh(θ_i)·exp(−θ_i²)`.
    TanhGauss { amplitude: f64 },
}

impl EpsilonModel {
    pub fn tanh_gauss(amplitude: f64) -> Self {
        if amplitude == 0.0 {
            EpsilonModel::Zero
        } else {
            EpsilonModel::TanhGauss { amplitude }
        }
    }

    pub fn amplitude(&self) -> f64 {
        match *self {
            EpsilonModel::Zero => 0.0,
            EpsilonModel::TanhGauss { amplitude } => amplitude,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.amplitude() == 0.0
    }

    /// Scalar profile value at one coordinate.
    pub fn value(&self, theta: f64) -> f64 {
        let a = self.amplitude();
        if a == 0.0 {
            return 0.0;
        }
        a * theta.tanh() * (-theta * theta).exp()
    }

    /// Derivative of [`EpsilonModel::value`].
    pub fn derivative(&self, theta: f64) -> f64 {
        let a = self.amplitude();
        if a == 0.0 {
            return 0.0;
        }
        let t = theta.tanh();
        a * ((1.0 - t * t) - 2.0 * theta * t) * (-theta * theta).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradientOracle {
    pub omega0: f64,
    pub epsilon: EpsilonModel,
    pub sigma_grad: f64,
}

impl GradientOracle {
    pub fn new(omega0: f64, epsilon: EpsilonModel, sigma_grad: f64) -> Self {
        GradientOracle {
            omega0,
            epsilon,
            sigma_grad,
        }
    }

    pub fn grad(&self, theta: &DVector<f64>) -> DVector<f64> {
        let w2 = self.omega0 * self.omega0;
        theta.map(|t| w2 * t + self.epsilon.value(t))
    }

    /// Exact gradient plus isotropic Gaussian noise of variance Σ².
    pub fn stochastic_grad<R: Rng + ?Sized>(
        &self,
        theta: &DVector<f64>,
        rng: &mut R,
    ) -> DVector<f64> {
        let mut g = self.grad(theta);
        if self.sigma_grad > 0.0 {
            for gi in g.iter_mut() {
                let xi: f64 = rng.sample(StandardNormal);
                *gi += self.sigma_grad * xi;
            }
        }
        g
    }
}

/// Sup-seminorms of ε over `[−L, L]^{2d}` in phase-space coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationBounds {
    pub max_eps: f64,
    pub eps_dot_x: f64,
    pub eps_dot_v: f64,
    pub d_max_deps: f64,
    pub sum_deps: f64,
    pub deps_dot_x: f64,
    pub deps_dot_v: f64,
    pub eps0: f64,
    pub half_width: f64,
    pub resolution: usize,
}

impl PerturbationBounds {
    pub fn as_array(&self) -> [f64; 7] {
        [
            self.max_eps,
            self.eps_dot_x,
            self.eps_dot_v,
            self.d_max_deps,
            self.sum_deps,
            self.deps_dot_x,
            self.deps_dot_v,
        ]
    }
}

/// Parameter coordinate seen from phase space: `θ = −(v + γx)/ω₀²`.
pub fn theta_of_phase(x: f64, v: f64, gamma: f64, omega0: f64) -> f64 {
    -(v + gamma * x) / (omega0 * omega0)
}

/// Grid maxima of the seminorms. The profile acts componentwise and the
/// domain is a product of identical `(x_i, v_i)` squares, so sums over
/// coordinates peak at `d` times the single-pair maximum.
pub fn perturbation_bounds(
    oracle: &GradientOracle,
    gamma: f64,
    d: usize,
    half_width: f64,
    resolution: usize,
) -> PerturbationBounds {
    let eps = oracle.epsilon;
    let n = resolution.max(2);
    let h = 2.0 * half_width / (n - 1) as f64;
    let (mut e, mut ex, mut ev, mut de, mut dex, mut dev) = (0f64, 0f64, 0f64, 0f64, 0f64, 0f64);
    if !eps.is_zero() {
        for i in 0..n {
            let x = -half_width + i as f64 * h;
            for j in 0..n {
                let v = -half_width + j as f64 * h;
                let th = theta_of_phase(x, v, gamma, oracle.omega0);
                let val = eps.value(th);
                let der = eps.derivative(th);
                e = e.max(val.abs());
                ex = ex.max((val * x).abs());
                ev = ev.max((val * v).abs());
                de = de.max(der.abs());
                dex = dex.max((der * x).abs());
                dev = dev.max((der * v).abs());
            }
        }
    }
    let df = d as f64;
    let mut b = PerturbationBounds {
        max_eps: e,
        eps_dot_x: df * ex,
        eps_dot_v: df * ev,
        d_max_deps: df * de,
        sum_deps: df * de,
        deps_dot_x: df * dex,
        deps_dot_v: df * dev,
        eps0: 0.0,
        half_width,
        resolution: n,
    };
    b.eps0 = b.as_array().into_iter().fold(0.0, f64::max);
    b
}
