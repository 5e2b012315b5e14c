use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Least-squares fit of `y(t) ≈ c·e^{−λt}` on `(t, log y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub rate: f64,
    /// Fitted `log c`.
    pub intercept: f64,
    pub r_squared: f64,
    /// Standard error of the fitted rate (zero for exact data).
    pub rate_se: f64,
    pub t_lo: f64,
    pub t_hi: f64,
    pub points: usize,
}

/// Fits the decay rate over samples with `t` in `window` (all samples if `None`).
pub fn fit_rate(t: &[f64], y: &[f64], window: Option<(f64, f64)>) -> Result<RateFit> {
    assert_eq!(t.len(), y.len(), "fit_rate needs paired samples");
    let (lo, hi) = window.unwrap_or((f64::NEG_INFINITY, f64::INFINITY));
    let mut pts = Vec::new();
    for (&ti, &yi) in t.iter().zip(y) {
        if ti < lo || ti > hi {
            continue;
        }
        if !(yi > 0.0) {
            return Err(Error::NonPositiveSample(ti));
        }
        pts.push((ti, yi.ln()));
    }
    fit_points(&pts)
}

/// Same fit from samples already in log space, for values below the
/// floating-point range.
pub fn fit_log_rate(t: &[f64], log_y: &[f64]) -> Result<RateFit> {
    assert_eq!(t.len(), log_y.len(), "fit_log_rate needs paired samples");
    let pts: Vec<(f64, f64)> = t.iter().copied().zip(log_y.iter().copied()).collect();
    fit_points(&pts)
}

fn fit_points(pts: &[(f64, f64)]) -> Result<RateFit> {
    let n = pts.len();
    if n < 3 {
        return Err(Error::InsufficientPoints(n));
    }
    let nf = n as f64;
    let tm = pts.iter().map(|p| p.0).sum::<f64>() / nf;
    let lm = pts.iter().map(|p| p.1).sum::<f64>() / nf;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for &(ti, li) in pts {
        sxx += (ti - tm) * (ti - tm);
        sxy += (ti - tm) * (li - lm);
        syy += (li - lm) * (li - lm);
    }
    if sxx == 0.0 {
        return Err(Error::InsufficientPoints(1));
    }
    let slope = sxy / sxx;
    let intercept = lm - slope * tm;
    let ss_res: f64 = pts
        .iter()
        .map(|&(ti, li)| (li - intercept - slope * ti).powi(2))
        .sum();
    let r_squared = if syy == 0.0 {
        1.0
    } else {
        (1.0 - ss_res / syy).clamp(0.0, 1.0)
    };
    Ok(RateFit {
        rate: -slope,
        intercept,
        r_squared,
        rate_se: (ss_res / (nf - 2.0) / sxx).sqrt(),
        t_lo: pts[0].0,
        t_hi: pts[n - 1].0,
        points: n,
    })
}

/// Fit of `y = c·x` through the origin, with the usual (centred) `R²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProportionalFit {
    pub slope: f64,
    pub r_squared: f64,
}

pub fn proportional_fit(x: &[f64], y: &[f64]) -> Result<ProportionalFit> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::InsufficientPoints(x.len().min(y.len())));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    let slope = sxy / sxx;
    let ym = y.iter().sum::<f64>() / y.len() as f64;
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - slope * a).powi(2)).sum();
    let ss_tot: f64 = y.iter().map(|b| (b - ym).powi(2)).sum();
    let r_squared = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Ok(ProportionalFit { slope, r_squared })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn log_fit_handles_values_below_f64_range() {
        let t: Vec<f64> = (0..50).map(|i| 1000.0 + i as f64).collect();
        let log_y: Vec<f64> = t.iter().map(|ti| 3.0 - 0.9 * ti).collect();
        let f = fit_log_rate(&t, &log_y).unwrap();
        assert_relative_eq!(f.rate, 0.9, max_relative = 1e-12);
        assert_relative_eq!(f.r_squared, 1.0);
    }

    #[test]
    fn exact_exponential() {
        let t: Vec<f64> = (0..50).map(|i| i as f64 * 0.2).collect();
        let y: Vec<f64> = t.iter().map(|t| 5.0 * (-0.7 * t).exp()).collect();
        let f = fit_rate(&t, &y, None).unwrap();
        assert!((f.rate - 0.7).abs() < 1e-10);
        assert_relative_eq!(f.intercept, 5f64.ln(), epsilon = 1e-10);
        assert!(f.r_squared > 1.0 - 1e-12);
        assert!(f.rate_se < 1e-10);
    }

    #[test]
    fn constant_series() {
        let t = [0.0, 1.0, 2.0, 3.0];
        let f = fit_rate(&t, &[2.0; 4], None).unwrap();
        assert_eq!(f.rate, 0.0);
        assert_eq!(f.r_squared, 1.0);
    }

    #[test]
    fn window_and_errors() {
        let t: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let mut y: Vec<f64> = t.iter().map(|t| (-t).exp()).collect();
        let f = fit_rate(&t, &y, Some((2.0, 6.0))).unwrap();
        assert_eq!((f.points, f.t_lo, f.t_hi), (5, 2.0, 6.0));
        assert!(matches!(
            fit_rate(&t, &y, Some((2.0, 3.0))),
            Err(Error::InsufficientPoints(2))
        ));
        y[8] = 0.0;
        assert!(matches!(fit_rate(&t, &y, None), Err(Error::NonPositiveSample(t)) if t == 8.0));
        assert!(fit_rate(&t, &y, Some((0.0, 7.0))).is_ok());
    }

    #[test]
    fn proportional() {
        let p = proportional_fit(&[0.25, 0.5, 0.75], &[0.125, 0.25, 0.375]).unwrap();
        assert_relative_eq!(p.slope, 0.5, epsilon = 1e-15);
        assert_relative_eq!(p.r_squared, 1.0, epsilon = 1e-15);
    }
}
