//! Hypocoercivity certificates.
//!
//! All `d`-block matrices are scalar multiples of `I_d`, so everything here
//! works on the reduced 2×2 blocks:
//!
//! ```text
//! Q = [[0, 1], [−ω₀², γ]]     P = [[1, Ĉ], [Ĉ, C]]     K = QP + PQᵀ
//! ```
//!
//! A pair `(P, μ)` certifies decay of the Lyapunov functional at rate `2μ`
//! when `K − 2μP ⪰ 0`.

use nalgebra::Matrix2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{classify, theorem_rate, Regime, CRITICAL_RTOL};

/// Tolerance on the smallest eigenvalue for a certificate to pass.
pub const CERT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HypoMatrices {
    pub q2: Matrix2<f64>,
    pub p2: Matrix2<f64>,
    pub k2: Matrix2<f64>,
    pub c: f64,
    pub c_hat: f64,
}

impl HypoMatrices {
    /// Largest entry of `K − (QP + PQᵀ)`.
    pub fn decomposition_residual(&self) -> f64 {
        (self.k2 - (self.q2 * self.p2 + self.p2 * self.q2.transpose())).amax()
    }

    pub fn p_positive_definite(&self) -> bool {
        self.c > self.c_hat * self.c_hat
    }
}

pub fn build_matrices(gamma: f64, omega0: f64, c: f64, c_hat: f64) -> HypoMatrices {
    let w2 = omega0 * omega0;
    let q2 = Matrix2::new(0.0, 1.0, -w2, gamma);
    let p2 = Matrix2::new(1.0, c_hat, c_hat, c);
    let off = c - w2 + gamma * c_hat;
    let k2 = Matrix2::new(2.0 * c_hat, off, off, 2.0 * gamma * c - 2.0 * w2 * c_hat);
    let m = HypoMatrices {
        q2,
        p2,
        k2,
        c,
        c_hat,
    };
    debug_assert!(m.decomposition_residual() <= 1e-12 * (1.0 + k2.amax()));
    m
}

/// Smallest eigenvalue of a symmetric 2×2 matrix.
pub fn sym2_min_eigenvalue(m: &Matrix2<f64>) -> f64 {
    let mid = 0.5 * (m[(0, 0)] + m[(1, 1)]);
    let half_diff = 0.5 * (m[(0, 0)] - m[(1, 1)]);
    let off = 0.5 * (m[(0, 1)] + m[(1, 0)]);
    mid - half_diff.hypot(off)
}

/// `λ_min(K − 2μP)`; the certificate holds when this is `≥ −CERT_TOL`.
pub fn check_certificate(mats: &HypoMatrices, mu: f64) -> Result<f64> {
    if !mats.p_positive_definite() {
        return Err(Error::NotPositiveDefinite {
            c: mats.c,
            c_hat_sq: mats.c_hat * mats.c_hat,
        });
    }
    Ok(sym2_min_eigenvalue(&(mats.k2 - mats.p2 * (2.0 * mu))))
}

/// Largest `μ` with `K − 2μP ⪰ 0`, by bisection to `tol`.
pub fn sup_certified_rate(mats: &HypoMatrices, tol: f64) -> Result<f64> {
    let margin = |mu: f64| check_certificate(mats, mu);
    if margin(0.0)? < 0.0 {
        return Err(Error::NoCertificate { delta: f64::NAN });
    }
    let mut lo = 0.0;
    let mut hi = 1.0;
    while margin(hi)? >= 0.0 {
        lo = hi;
        hi *= 2.0;
        if hi > 1e12 {
            return Err(Error::Instability("certified rate is unbounded".into()));
        }
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if margin(mid)? >= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

fn margin_at(gamma: f64, omega0: f64, c: f64, c_hat: f64, mu: f64) -> f64 {
    if c <= c_hat * c_hat {
        return f64::NEG_INFINITY;
    }
    check_certificate(&build_matrices(gamma, omega0, c, c_hat), mu).unwrap_or(f64::NEG_INFINITY)
}

/// Searches `(C, Ĉ)` certifying rate `mu_matrix − δ` at critical damping.
///
/// Log grid over `Ĉ ∈ (0, γ]` and `C − Ĉ² ∈ (0, 4γ² − Ĉ²]`, followed by
/// alternating bisection-style line refinement of the best cell.
pub fn find_c_chat(gamma: f64, omega0: f64, delta: f64) -> Result<(f64, f64)> {
    if (gamma - 2.0 * omega0).abs() > CRITICAL_RTOL * gamma {
        return Err(Error::Domain(format!(
            "find_c_chat is for critical damping, got gamma = {gamma}, omega0 = {omega0}"
        )));
    }
    let mu_m = crate::params::mu_matrix(gamma, omega0);
    if !(delta > 0.0 && delta <= mu_m) {
        return Err(Error::Domain(format!(
            "delta must lie in (0, {mu_m}], got {delta}"
        )));
    }
    let mu = mu_m - delta;
    let res = 1e-4;
    let n = 160;
    let log_span = |lo: f64, hi: f64, i: usize| lo * (hi / lo).powf(i as f64 / (n - 1) as f64);
    let mut best = (f64::NEG_INFINITY, 0.0, 0.0);
    for i in 0..n {
        let c_hat = log_span(res * gamma, gamma, i);
        let room = 4.0 * gamma * gamma - c_hat * c_hat;
        for j in 0..n {
            let gap = log_span(res, room, j);
            let c = c_hat * c_hat + gap;
            let m = margin_at(gamma, omega0, c, c_hat, mu);
            if m > best.0 {
                best = (m, c_hat, gap);
            }
        }
    }
    // refine each coordinate with a shrinking multiplicative step
    let (mut m_best, mut c_hat, mut gap) = best;
    let mut step = (gamma / (res * gamma)).powf(1.0 / (n - 1) as f64);
    while step - 1.0 > res {
        let mut improved = true;
        while improved {
            improved = false;
            for (dh, dg) in [(step, 1.0), (1.0 / step, 1.0), (1.0, step), (1.0, 1.0 / step)] {
                let (h2, g2) = ((c_hat * dh).min(gamma), gap * dg);
                let m = margin_at(gamma, omega0, h2 * h2 + g2, h2, mu);
                if m > m_best {
                    (m_best, c_hat, gap) = (m, h2, g2);
                    improved = true;
                }
            }
        }
        step = step.sqrt();
    }
    if m_best >= 0.0 {
        Ok((c_hat * c_hat + gap, c_hat))
    } else {
        Err(Error::NoCertificate { delta })
    }
}

/// `C₂ = max{1, γ, γ², βγ, βω₀²} / min{1, ω₀²}`.
pub fn c2_constant(gamma: f64, beta: f64, omega0: f64) -> f64 {
    let w2 = omega0 * omega0;
    [1.0, gamma, gamma * gamma, beta * gamma, beta * w2]
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max)
        / w2.min(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationConstants {
    #[serde(rename = "C2")]
    pub c2: f64,
    pub eps_shift: f64,
    pub net_rate: f64,
}

/// Perturbation shift `ε = (11 + 11C + 15Ĉ)·ε₀·C₂²·max{1,C}/(C − Ĉ²)` and `2(μ − ε)`.
pub fn constants(
    gamma: f64,
    beta: f64,
    omega0: f64,
    c: f64,
    c_hat: f64,
    eps0: f64,
    mu: f64,
) -> Result<PerturbationConstants> {
    let gap = c - c_hat * c_hat;
    if !(gap > 0.0) {
        return Err(Error::NotPositiveDefinite {
            c,
            c_hat_sq: c_hat * c_hat,
        });
    }
    let c2 = c2_constant(gamma, beta, omega0);
    let eps_shift = (11.0 + 11.0 * c + 15.0 * c_hat) * eps0 * c2 * c2 * c.max(1.0) / gap;
    Ok(PerturbationConstants {
        c2,
        eps_shift,
        net_rate: 2.0 * (mu - eps_shift),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MuConvention {
    /// Smallest real part of the eigenvalues of `Q`.
    Matrix,
    /// The value printed in the case table.
    Theorem,
}

/// Full decay-rate certificate for one `(γ, ω₀, β, ε₀)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypoReport {
    pub regime: Regime,
    pub mu_matrix: f64,
    pub mu_thm: f64,
    #[serde(rename = "C")]
    pub c: f64,
    #[serde(rename = "C_hat")]
    pub c_hat: f64,
    /// `λ_min(K − 2μP)` at the certified `μ` (`mu_matrix`, minus `δ` when critical).
    pub psd_margin: f64,
    /// Same quantity at `μ = mu_thm`.
    pub psd_margin_thm: f64,
    #[serde(rename = "C2")]
    pub c2: f64,
    pub eps0: f64,
    pub eps_shift: f64,
    pub net_rate: f64,
    pub mu_convention: MuConvention,
    /// `δ` used for critical damping, zero otherwise.
    pub critical_delta: f64,
}

/// Builds the certificate: `(C, Ĉ)` from the case table, or from
/// [`find_c_chat`] at critical damping; `net_rate` uses `mu_matrix`.
pub fn hypo_report(gamma: f64, omega0: f64, beta: f64, eps0: f64, delta: f64) -> Result<HypoReport> {
    let case = theorem_rate(gamma, omega0, delta)?;
    let (c, c_hat, mu, used_delta) = match case.regime {
        Regime::Critical => {
            let (c, c_hat) = find_c_chat(gamma, omega0, delta)?;
            (c, c_hat, case.mu_matrix - delta, delta)
        }
        _ => (case.c.unwrap(), case.c_hat.unwrap(), case.mu_matrix, 0.0),
    };
    let mats = build_matrices(gamma, omega0, c, c_hat);
    let psd_margin = check_certificate(&mats, mu)?;
    let psd_margin_thm = check_certificate(&mats, case.mu_thm)?;
    let k = constants(gamma, beta, omega0, c, c_hat, eps0, mu)?;
    debug_assert_eq!(classify(gamma, omega0), case.regime);
    Ok(HypoReport {
        regime: case.regime,
        mu_matrix: case.mu_matrix,
        mu_thm: case.mu_thm,
        c,
        c_hat,
        psd_margin,
        psd_margin_thm,
        c2: k.c2,
        eps0,
        eps_shift: k.eps_shift,
        net_rate: k.net_rate,
        mu_convention: MuConvention::Matrix,
        critical_delta: used_delta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn k_matrices() {
        let m = build_matrices(1.0, 1.0, 1.0, 0.5);
        assert_relative_eq!(m.k2, Matrix2::new(1.0, 0.5, 0.5, 1.0), epsilon = 1e-15);
        let m = build_matrices(2.5, 1.0, 2.125, 1.25);
        assert_relative_eq!(m.k2, Matrix2::new(2.5, 4.25, 4.25, 8.125), epsilon = 1e-14);
    }

    #[test]
    fn certificate_margins() {
        let m = build_matrices(1.0, 1.0, 1.0, 0.5);
        assert!(check_certificate(&m, 0.5).unwrap().abs() < 1e-15);
        let over = check_certificate(&m, 1.0).unwrap();
        // K − 2P = −P/… has eigenvalues −0.5 and −1.5
        assert_relative_eq!(over, -1.5, epsilon = 1e-14);

        let m = build_matrices(2.5, 1.0, 2.125, 1.25);
        let diff = m.k2 - m.p2 * 1.0;
        assert_relative_eq!(diff, Matrix2::new(1.5, 3.0, 3.0, 6.0), epsilon = 1e-14);
        assert!(check_certificate(&m, 0.5).unwrap().abs() < 1e-14);
    }

    #[test]
    fn indefinite_p_is_rejected() {
        let m = build_matrices(1.0, 1.0, 0.2, 0.5);
        assert!(matches!(
            check_certificate(&m, 0.1),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn sharpness_by_bisection() {
        for &(g, w) in &[(1.0, 1.0), (2.5, 1.0), (4.0, 1.5)] {
            let case = theorem_rate(g, w, 0.0).unwrap();
            let m = build_matrices(g, w, case.c.unwrap(), case.c_hat.unwrap());
            let sup = sup_certified_rate(&m, 1e-9).unwrap();
            assert!((sup - case.mu_matrix).abs() < 1e-6, "{g} {w}: {sup}");
        }
    }

    #[test]
    fn critical_search() {
        let (c, c_hat) = find_c_chat(2.0, 1.0, 0.2).unwrap();
        assert!(c - c_hat * c_hat > 0.0);
        let m = build_matrices(2.0, 1.0, c, c_hat);
        assert!(check_certificate(&m, 0.8).unwrap() >= 0.0);

        let (c, c_hat) = find_c_chat(2.0, 1.0, 1.0).unwrap();
        let m = build_matrices(2.0, 1.0, c, c_hat);
        assert!(check_certificate(&m, 0.0).unwrap() >= 0.0);
        assert!(c - c_hat * c_hat > 0.0);

        assert!(find_c_chat(2.5, 1.0, 0.1).is_err());
    }

    #[test]
    fn perturbation_constants() {
        assert_eq!(c2_constant(1.0, 2.0, 1.0), 2.0);
        let k = constants(1.0, 2.0, 1.0, 1.0, 0.5, 1e-4, 0.5).unwrap();
        assert_relative_eq!(k.eps_shift, 29.5 * 1e-4 * 4.0 / 0.75, max_relative = 1e-14);
        assert_relative_eq!(k.eps_shift, 0.0157333, epsilon = 1e-7);
        let k0 = constants(1.0, 2.0, 1.0, 1.0, 0.5, 0.0, 0.5).unwrap();
        assert_eq!((k0.eps_shift, k0.net_rate), (0.0, 1.0));
        assert!(constants(1.0, 2.0, 1.0, 0.25, 0.5, 1e-4, 0.5).is_err());
    }

    #[test]
    fn report_fields() {
        let r = hypo_report(2.5, 1.0, 2.0, 1e-4, 0.0).unwrap();
        assert_eq!(r.regime, Regime::Overdamped);
        assert!(r.psd_margin.abs() < 1e-12);
        assert!(r.psd_margin_thm < 0.0);
        let js = serde_json::to_value(&r).unwrap();
        for key in ["mu_thm", "mu_matrix", "psd_margin", "C2", "eps_shift", "C", "C_hat", "net_rate"] {
            assert!(js.get(key).is_some(), "{key}");
        }
        let crit = hypo_report(2.0, 1.0, 2.0, 0.0, 0.1).unwrap();
        assert!(crit.psd_margin >= 0.0);
        assert_eq!(crit.critical_delta, 0.1);
    }

    #[test]
    fn theorem_rate_overshoots_in_both_regimes() {
        let mut seen = (false, false);
        let mut state = 12345u64;
        let mut uniform = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..1000 {
            let g = 0.05 + 8.0 * uniform();
            let w = 0.05 + 3.0 * uniform();
            if classify(g, w) == Regime::Critical {
                continue;
            }
            let case = theorem_rate(g, w, 0.0).unwrap();
            let m = build_matrices(g, w, case.c.unwrap(), case.c_hat.unwrap());
            assert!(m.p_positive_definite());
            let scale = 1.0 + m.k2.amax();
            assert!(check_certificate(&m, case.mu_matrix).unwrap() >= -CERT_TOL * scale);
            if check_certificate(&m, case.mu_thm).unwrap() < 0.0 {
                match case.regime {
                    Regime::Underdamped => seen.0 = true,
                    Regime::Overdamped => seen.1 = true,
                    Regime::Critical => {}
                }
            }
        }
        assert!(seen.0 && seen.1);
    }

    proptest! {
        #[test]
        fn decomposition_identity(g in 0.01f64..10.0, w in 0.01f64..5.0, c in 0.0f64..20.0, ch in -5.0f64..5.0) {
            let m = build_matrices(g, w, c, ch);
            prop_assert!(m.decomposition_residual() <= 1e-12 * (1.0 + m.k2.amax()));
        }

        #[test]
        fn shift_is_linear_in_eps0(e in 1e-8f64..1e-2, g in 0.1f64..5.0) {
            let a = constants(g, 3.0, 1.0, 2.0, 0.5, e, 0.3).unwrap().eps_shift;
            let b = constants(g, 3.0, 1.0, 2.0, 0.5, 2.0 * e, 0.3).unwrap().eps_shift;
            prop_assert!((b / a - 2.0).abs() < 1e-12);
        }
    }
}
