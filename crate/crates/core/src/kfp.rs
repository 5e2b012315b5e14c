//! Hermite–Galerkin calculus for the kinetic Fokker–Planck equation
//! `∂ₜh + Th = Lh + Rh` in one phase-space dimension.
//!
//! Functions of `(x, v)` are expanded in `φᵢ(x)·φⱼ(v)`, where `φᵢ` is the
//! probabilists' Hermite polynomial `Heᵢ(x/s)/√(i!)` scaled to the standard
//! deviation of the Gaussian weight. The basis is orthonormal under `M`, so
//! `⟨f, g⟩_*` is the Euclidean product of coefficient tensors.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{Complex, DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypo::c2_constant;
use crate::loss::{EpsilonModel, PerturbationBounds};
use crate::moments::trajectory_rng;

/// Mass a truncation may drop before it is reported.
pub const TRUNCATION_TOL: f64 = 1e-8;

/// Gauss–Hermite rule for the standard normal weight: `(nodes, weights)`.
///
/// Nodes come from the Jacobi matrix and are polished by Newton steps;
/// weights use the Christoffel formula `1/Σₖ φₖ(ξ)²`.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    if n == 1 {
        return (vec![0.0], vec![1.0]);
    }
    let jacobi = DMatrix::from_fn(n, n, |i, j| {
        if i.abs_diff(j) == 1 {
            (i.max(j) as f64).sqrt()
        } else {
            0.0
        }
    });
    let mut nodes: Vec<f64> = jacobi
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .collect();
    nodes.sort_by(|a, b| a.total_cmp(b));
    let mut weights = Vec::with_capacity(n);
    for x in nodes.iter_mut() {
        for _ in 0..3 {
            let p = hermite_values(*x, n);
            let dp = (n as f64).sqrt() * p[n - 1];
            if dp != 0.0 {
                *x -= p[n] / dp;
            }
        }
        let p = hermite_values(*x, n - 1);
        weights.push(1.0 / p.iter().map(|q| q * q).sum::<f64>());
    }
    // enforce the reflection symmetry of the rule
    for i in 0..n / 2 {
        let j = n - 1 - i;
        let x = 0.5 * (nodes[j] - nodes[i]);
        let w = 0.5 * (weights[i] + weights[j]);
        (nodes[i], nodes[j], weights[i], weights[j]) = (-x, x, w, w);
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

/// `[φ₀(ξ), …, φ_n(ξ)]` for the orthonormal probabilists' Hermite family.
pub fn hermite_values(xi: f64, n: usize) -> Vec<f64> {
    let mut p = Vec::with_capacity(n + 1);
    p.push(1.0);
    if n >= 1 {
        p.push(xi);
    }
    for k in 1..n {
        let next = (xi * p[k] - (k as f64).sqrt() * p[k - 1]) / ((k + 1) as f64).sqrt();
        p.push(next);
    }
    p
}

/// `M(x, v) = Z₁⁻¹e^{−βω₀²x²/2} · Z₂⁻¹e^{−βv²/2}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianMeasure {
    pub beta: f64,
    pub omega0: f64,
}

impl GaussianMeasure {
    pub fn new(beta: f64, omega0: f64) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite() && omega0 > 0.0 && omega0.is_finite()) {
            return Err(Error::Domain(format!(
                "measure needs beta > 0 and omega0 > 0, got {beta}, {omega0}"
            )));
        }
        Ok(GaussianMeasure { beta, omega0 })
    }

    pub fn var_x(&self) -> f64 {
        1.0 / (self.beta * self.omega0 * self.omega0)
    }

    pub fn var_v(&self) -> f64 {
        1.0 / self.beta
    }

    pub fn sx(&self) -> f64 {
        self.var_x().sqrt()
    }

    pub fn sv(&self) -> f64 {
        self.var_v().sqrt()
    }

    pub fn z1(&self) -> f64 {
        (2.0 * PI * self.var_x()).sqrt()
    }

    pub fn z2(&self) -> f64 {
        (2.0 * PI * self.var_v()).sqrt()
    }

    pub fn density(&self, x: f64, v: f64) -> f64 {
        (-0.5 * x * x / self.var_x()).exp() / self.z1() * (-0.5 * v * v / self.var_v()).exp() / self.z2()
    }

    /// Tensor Gauss–Hermite rule with `n` nodes per axis.
    pub fn quadrature(&self, n: usize) -> Quadrature2 {
        let (xi, w) = gauss_hermite(n);
        Quadrature2 {
            measure: *self,
            x: xi.iter().map(|t| t * self.sx()).collect(),
            v: xi.iter().map(|t| t * self.sv()).collect(),
            xi,
            w,
        }
    }
}

/// Tensor quadrature for `∫ f M dx dv`.
#[derive(Debug, Clone)]
pub struct Quadrature2 {
    pub measure: GaussianMeasure,
    /// Standardized nodes.
    pub xi: Vec<f64>,
    pub w: Vec<f64>,
    pub x: Vec<f64>,
    pub v: Vec<f64>,
}

impl Quadrature2 {
    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    pub fn integrate<F: FnMut(f64, f64) -> f64>(&self, mut f: F) -> f64 {
        let mut s = 0.0;
        for (a, &x) in self.x.iter().enumerate() {
            for (b, &v) in self.v.iter().enumerate() {
                s += self.w[a] * self.w[b] * f(x, v);
            }
        }
        s
    }

    /// Weighted sum of a grid of values (rows follow `x`, columns `v`).
    pub fn sum_grid(&self, g: &DMatrix<f64>) -> f64 {
        let mut s = 0.0;
        for a in 0..self.len() {
            for b in 0..self.len() {
                s += self.w[a] * self.w[b] * g[(a, b)];
            }
        }
        s
    }

    fn basis_table(&self, n: usize) -> DMatrix<f64> {
        let mut t = DMatrix::zeros(n + 1, self.len());
        for (a, &xi) in self.xi.iter().enumerate() {
            for (i, p) in hermite_values(xi, n).into_iter().enumerate() {
                t[(i, a)] = p;
            }
        }
        t
    }
}

/// Coefficients `c[(i, j)]` of `Σ cᵢⱼ φᵢ(x) φⱼ(v)` with `i, j ≤ n`.
#[derive(Debug, Clone, PartialEq)]
pub struct HermiteField {
    pub measure: GaussianMeasure,
    pub coeffs: DMatrix<f64>,
}

impl HermiteField {
    pub fn zeros(measure: GaussianMeasure, n: usize) -> Self {
        HermiteField {
            measure,
            coeffs: DMatrix::zeros(n + 1, n + 1),
        }
    }

    pub fn constant(measure: GaussianMeasure, n: usize, value: f64) -> Self {
        let mut h = Self::zeros(measure, n);
        h.coeffs[(0, 0)] = value;
        h
    }

    pub fn basis(measure: GaussianMeasure, n: usize, i: usize, j: usize) -> Self {
        let mut h = Self::zeros(measure, n);
        h.coeffs[(i, j)] = 1.0;
        h
    }

    /// `x^p v^q`, held at degree `n` (which must be at least `max(p, q)`).
    pub fn monomial(measure: GaussianMeasure, n: usize, p: usize, q: usize) -> Self {
        assert!(n >= p.max(q), "degree {n} cannot hold x^{p} v^{q}");
        let mut h = Self::constant(measure, 0, 1.0);
        for _ in 0..p {
            h = h.mul_x();
        }
        for _ in 0..q {
            h = h.mul_v();
        }
        h.resize(n)
    }

    pub fn from_vector(measure: GaussianMeasure, n: usize, c: &DVector<f64>) -> Self {
        assert_eq!(c.len(), (n + 1) * (n + 1));
        HermiteField {
            measure,
            coeffs: DMatrix::from_fn(n + 1, n + 1, |i, j| c[i * (n + 1) + j]),
        }
    }

    /// Row-major flattening, index `i·(n+1) + j`.
    pub fn to_vector(&self) -> DVector<f64> {
        let m = self.size();
        DVector::from_fn(m * m, |k, _| self.coeffs[(k / m, k % m)])
    }

    pub fn degree(&self) -> usize {
        self.coeffs.nrows() - 1
    }

    fn size(&self) -> usize {
        self.coeffs.nrows()
    }

    /// Pads with zeros or drops modes beyond degree `n`, silently.
    pub fn resize(&self, n: usize) -> Self {
        let mut out = Self::zeros(self.measure, n);
        let k = self.size().min(n + 1);
        out.coeffs.view_mut((0, 0), (k, k)).copy_from(&self.coeffs.view((0, 0), (k, k)));
        out
    }

    /// Squared norm of the modes beyond degree `n`.
    pub fn mass_beyond(&self, n: usize) -> f64 {
        let mut s = 0.0;
        for i in 0..self.size() {
            for j in 0..self.size() {
                if i > n || j > n {
                    s += self.coeffs[(i, j)].powi(2);
                }
            }
        }
        s
    }

    /// Like [`HermiteField::resize`], failing if the dropped mass exceeds [`TRUNCATION_TOL`].
    pub fn truncate(&self, n: usize) -> Result<Self> {
        let dropped = self.mass_beyond(n);
        if dropped > TRUNCATION_TOL {
            return Err(Error::TruncationOverflow(dropped));
        }
        Ok(self.resize(n))
    }

    pub fn mean(&self) -> f64 {
        self.coeffs[(0, 0)]
    }

    pub fn is_mean_zero(&self, tol: f64) -> bool {
        self.mean().abs() <= tol
    }

    pub fn norm_sq(&self) -> f64 {
        self.coeffs.norm_squared()
    }

    fn check_same(&self, other: &HermiteField) -> Result<()> {
        if self.measure != other.measure || self.size() != other.size() {
            return Err(Error::MeasureMismatch);
        }
        Ok(())
    }

    pub fn add(&self, other: &HermiteField) -> Result<Self> {
        self.check_same(other)?;
        Ok(HermiteField {
            measure: self.measure,
            coeffs: &self.coeffs + &other.coeffs,
        })
    }

    pub fn scale(&self, a: f64) -> Self {
        HermiteField {
            measure: self.measure,
            coeffs: &self.coeffs * a,
        }
    }

    /// Adds two fields of possibly different degree, returning the larger degree.
    fn add_padded(&self, other: &HermiteField, a: f64) -> Self {
        let n = self.degree().max(other.degree());
        let mut out = self.resize(n);
        out.coeffs += other.resize(n).coeffs * a;
        out
    }

    /// `∂ₓh`, exact at the same degree.
    pub fn dx(&self) -> Self {
        let m = self.size();
        let s = self.measure.sx();
        let mut out = Self::zeros(self.measure, m - 1);
        for i in 1..m {
            let f = (i as f64).sqrt() / s;
            for j in 0..m {
                out.coeffs[(i - 1, j)] = f * self.coeffs[(i, j)];
            }
        }
        out
    }

    /// `∂ᵥh`, exact at the same degree.
    pub fn dv(&self) -> Self {
        let m = self.size();
        let s = self.measure.sv();
        let mut out = Self::zeros(self.measure, m - 1);
        for j in 1..m {
            let f = (j as f64).sqrt() / s;
            for i in 0..m {
                out.coeffs[(i, j - 1)] = f * self.coeffs[(i, j)];
            }
        }
        out
    }

    /// `x·h`, exact at degree `n + 1`.
    pub fn mul_x(&self) -> Self {
        let m = self.size();
        let s = self.measure.sx();
        let mut out = Self::zeros(self.measure, m);
        for i in 0..m {
            for j in 0..m {
                let c = s * self.coeffs[(i, j)];
                out.coeffs[(i + 1, j)] += ((i + 1) as f64).sqrt() * c;
                if i > 0 {
                    out.coeffs[(i - 1, j)] += (i as f64).sqrt() * c;
                }
            }
        }
        out
    }

    /// `v·h`, exact at degree `n + 1`.
    pub fn mul_v(&self) -> Self {
        let m = self.size();
        let s = self.measure.sv();
        let mut out = Self::zeros(self.measure, m);
        for i in 0..m {
            for j in 0..m {
                let c = s * self.coeffs[(i, j)];
                out.coeffs[(i, j + 1)] += ((j + 1) as f64).sqrt() * c;
                if j > 0 {
                    out.coeffs[(i, j - 1)] += (j as f64).sqrt() * c;
                }
            }
        }
        out
    }

    /// Values on the quadrature grid (rows follow `x` nodes, columns `v` nodes).
    pub fn grid_values(&self, q: &Quadrature2) -> DMatrix<f64> {
        let t = q.basis_table(self.degree());
        t.transpose() * &self.coeffs * t
    }

    pub fn eval(&self, x: f64, v: f64) -> f64 {
        let n = self.degree();
        let px = hermite_values(x / self.measure.sx(), n);
        let pv = hermite_values(v / self.measure.sv(), n);
        let mut s = 0.0;
        for (i, a) in px.iter().enumerate() {
            for (j, b) in pv.iter().enumerate() {
                s += self.coeffs[(i, j)] * a * b;
            }
        }
        s
    }
}

/// `⟨f, g⟩_* = Σ cᶠᵢⱼ cᵍᵢⱼ`.
pub fn weighted_inner(f: &HermiteField, g: &HermiteField) -> Result<f64> {
    f.check_same(g)?;
    Ok(f.coeffs.dot(&g.coeffs))
}

/// `⟨f, g⟩_*` by quadrature, for fields of any degrees.
pub fn quadrature_inner(q: &Quadrature2, f: &HermiteField, g: &HermiteField) -> Result<f64> {
    if f.measure != q.measure || g.measure != q.measure {
        return Err(Error::MeasureMismatch);
    }
    Ok(q.sum_grid(&f.grid_values(q).component_mul(&g.grid_values(q))))
}

/// `Th = v∂ₓh − ω₀²x∂ᵥh`, exact at degree `n + 1`.
pub fn apply_t(h: &HermiteField) -> HermiteField {
    let w2 = h.measure.omega0.powi(2);
    h.dx().mul_v().add_padded(&h.dv().mul_x(), -w2)
}

/// `Lh = γ(−v∂ᵥh + β⁻¹∂ᵥ²h)`, exact at the same degree.
pub fn apply_l(h: &HermiteField, gamma: f64) -> HermiteField {
    let hv = h.dv();
    let out = hv.dv().scale(1.0 / h.measure.beta).add_padded(&hv.mul_v(), -1.0);
    out.resize(h.degree()).scale(gamma)
}

/// Polynomial factor of `R`: `(∂ₓ − γ∂ᵥ)h − β(ω₀²x − γv)h` at degree `n + 1`.
fn r_factor(h: &HermiteField, gamma: f64) -> HermiteField {
    let beta = h.measure.beta;
    let w2 = h.measure.omega0.powi(2);
    let grad = h.dx().add_padded(&h.dv(), -gamma);
    let q = h.mul_x().scale(w2).add_padded(&h.mul_v(), -gamma);
    grad.add_padded(&q, -beta)
}

/// Galerkin form of multiplication by `ε(θ)`, `θ = −(v + γx)/ω₀²`.
#[derive(Debug, Clone)]
pub struct EpsilonGalerkin {
    pub measure: GaussianMeasure,
    pub epsilon: EpsilonModel,
    pub gamma: f64,
    /// Output degree; inputs have degree `n + 1`.
    pub n: usize,
    /// `E[(k,l),(i,j)] = ⟨ε φᵢφⱼ, φₖφₗ⟩_*`.
    pub matrix: DMatrix<f64>,
}

impl EpsilonGalerkin {
    pub fn new(measure: GaussianMeasure, epsilon: EpsilonModel, gamma: f64, n: usize) -> Self {
        let rows = (n + 1) * (n + 1);
        let cols = (n + 2) * (n + 2);
        if epsilon.is_zero() {
            return EpsilonGalerkin {
                measure,
                epsilon,
                gamma,
                n,
                matrix: DMatrix::zeros(rows, cols),
            };
        }
        let q = measure.quadrature(2 * n + 40);
        let nq = q.len();
        let tx = q.basis_table(n + 1);
        let tv = tx.clone();
        let w2 = measure.omega0.powi(2);
        let mut b_in = DMatrix::zeros(cols, nq * nq);
        let mut b_out = DMatrix::zeros(rows, nq * nq);
        for a in 0..nq {
            for b in 0..nq {
                let col = a * nq + b;
                let theta = -(q.v[b] + gamma * q.x[a]) / w2;
                let weight = q.w[a] * q.w[b] * epsilon.value(theta);
                for i in 0..n + 2 {
                    for j in 0..n + 2 {
                        let p = tx[(i, a)] * tv[(j, b)];
                        b_in[(i * (n + 2) + j, col)] = p;
                        if i <= n && j <= n {
                            b_out[(i * (n + 1) + j, col)] = p * weight;
                        }
                    }
                }
            }
        }
        EpsilonGalerkin {
            measure,
            epsilon,
            gamma,
            n,
            matrix: b_out * b_in.transpose(),
        }
    }

    /// `R h` projected to degree `n`.
    pub fn apply(&self, h: &HermiteField) -> Result<HermiteField> {
        if h.measure != self.measure || h.degree() > self.n {
            return Err(Error::MeasureMismatch);
        }
        let s = r_factor(&h.resize(self.n), self.gamma).resize(self.n + 1);
        let out = &self.matrix * s.to_vector();
        Ok(HermiteField::from_vector(self.measure, self.n, &out))
    }
}

/// `Rh = ε·(∂ₓh − γ∂ᵥh) − βε·(ω₀²x − γv)h`, projected to the degree of `h`.
pub fn apply_r(h: &HermiteField, epsilon: EpsilonModel, gamma: f64) -> Result<HermiteField> {
    if epsilon.is_zero() {
        return Ok(HermiteField::zeros(h.measure, h.degree()));
    }
    EpsilonGalerkin::new(h.measure, epsilon, gamma, h.degree()).apply(h)
}

/// Gradient Gram entries `(‖∂ₓh‖², ‖∂ᵥh‖², ⟨∂ₓh, ∂ᵥh⟩)` under `M`.
pub fn gradient_gram(h: &HermiteField) -> (f64, f64, f64) {
    let (hx, hv) = (h.dx(), h.dv());
    (hx.norm_sq(), hv.norm_sq(), hx.coeffs.dot(&hv.coeffs))
}

/// `H = ‖∂ₓh‖²_* + C‖∂ᵥh‖²_* + 2Ĉ⟨∂ₓh, ∂ᵥh⟩_*`.
pub fn lyapunov_h(h: &HermiteField, c: f64, c_hat: f64) -> f64 {
    debug_assert!(c > c_hat * c_hat);
    let (xx, vv, xv) = gradient_gram(h);
    xx + c * vv + 2.0 * c_hat * xv
}

/// The monomials `1, x, v, x², xv, v²` at degree `n`.
pub fn polynomial_battery(measure: GaussianMeasure, n: usize) -> Vec<HermiteField> {
    [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)]
        .into_iter()
        .map(|(p, q)| HermiteField::monomial(measure, n, p, q))
        .collect()
}

fn default_nodes(n: usize) -> usize {
    (2 * n + 5).max(60)
}

/// Worst residuals of the transport and diffusion identities over a battery.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentityReport {
    /// `max |⟨Tg,h⟩ + ⟨Th,g⟩|`.
    pub antisymmetry: f64,
    /// `max |⟨Th,h⟩|`.
    pub skew: f64,
    /// `max |⟨Lg,h⟩ + (γ/β)⟨∂ᵥg, ∂ᵥh⟩|`.
    pub dissipation: f64,
    /// `max |quadrature − coefficient|` over all products formed.
    pub parseval: f64,
}

impl IdentityReport {
    pub fn max_residual(&self) -> f64 {
        self.antisymmetry.max(self.skew).max(self.dissipation)
    }
}

/// Checks the integration-by-parts identities of `T` and `L` by quadrature.
pub fn verify_identities(battery: &[HermiteField], gamma: f64) -> Result<IdentityReport> {
    let Some(first) = battery.first() else {
        return Err(Error::EmptyTrace);
    };
    let measure = first.measure;
    let n = battery.iter().map(|h| h.degree()).max().unwrap_or(0);
    let q = measure.quadrature(default_nodes(n + 1));
    let fields: Vec<HermiteField> = battery.iter().map(|h| h.resize(n)).collect();
    let t: Vec<HermiteField> = fields.iter().map(apply_t).collect();
    let l: Vec<HermiteField> = fields.iter().map(|h| apply_l(h, gamma)).collect();
    let mut r = IdentityReport {
        antisymmetry: 0.0,
        skew: 0.0,
        dissipation: 0.0,
        parseval: 0.0,
    };
    let ratio = gamma / measure.beta;
    for (a, g) in fields.iter().enumerate() {
        for (b, h) in fields.iter().enumerate() {
            let tg_h = quadrature_inner(&q, &t[a], h)?;
            let th_g = quadrature_inner(&q, &t[b], g)?;
            r.antisymmetry = r.antisymmetry.max((tg_h + th_g).abs());
            if a == b {
                r.skew = r.skew.max(tg_h.abs());
            }
            let lg_h = quadrature_inner(&q, &l[a], h)?;
            let gv_hv = quadrature_inner(&q, &g.dv(), &h.dv())?;
            r.dissipation = r.dissipation.max((lg_h + ratio * gv_hv).abs());
            let coef = weighted_inner(&l[a], h)?;
            r.parseval = r.parseval.max((coef - lg_h).abs());
        }
    }
    Ok(r)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InequalityCheck {
    pub label: String,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// Values of `(g, ∂ₓg, ∂ᵥg, ∂ₓₓg, ∂ₓᵥg, ∂ᵥᵥg)` on the grid.
struct Jet {
    h: DMatrix<f64>,
    hx: DMatrix<f64>,
    hv: DMatrix<f64>,
    hxx: DMatrix<f64>,
    hxv: DMatrix<f64>,
    hvv: DMatrix<f64>,
}

impl Jet {
    fn new(h: &HermiteField, q: &Quadrature2) -> Self {
        let (dx, dv) = (h.dx(), h.dv());
        Jet {
            h: h.grid_values(q),
            hx: dx.grid_values(q),
            hv: dv.grid_values(q),
            hxx: dx.dx().grid_values(q),
            hxv: dx.dv().grid_values(q),
            hvv: dv.dv().grid_values(q),
        }
    }
}

/// Pointwise `(Rh, ∂ₓRh, ∂ᵥRh)` on the grid using the exact derivative of ε.
fn r_jet(j: &Jet, q: &Quadrature2, eps: EpsilonModel, gamma: f64) -> [DMatrix<f64>; 3] {
    let beta = q.measure.beta;
    let w2 = q.measure.omega0.powi(2);
    let (tx, tv) = (-gamma / w2, -1.0 / w2);
    let nq = q.len();
    let mut out = [DMatrix::zeros(nq, nq), DMatrix::zeros(nq, nq), DMatrix::zeros(nq, nq)];
    for a in 0..nq {
        for b in 0..nq {
            let (x, v) = (q.x[a], q.v[b]);
            let theta = -(v + gamma * x) / w2;
            let (e, de) = (eps.value(theta), eps.derivative(theta));
            let qf = w2 * x - gamma * v;
            let g = j.hx[(a, b)] - gamma * j.hv[(a, b)];
            let core = g - beta * qf * j.h[(a, b)];
            let gx = j.hxx[(a, b)] - gamma * j.hxv[(a, b)];
            let gv = j.hxv[(a, b)] - gamma * j.hvv[(a, b)];
            out[0][(a, b)] = e * core;
            out[1][(a, b)] = de * tx * core + e * (gx - beta * (w2 * j.h[(a, b)] + qf * j.hx[(a, b)]));
            out[2][(a, b)] = de * tv * core + e * (gv - beta * (-gamma * j.h[(a, b)] + qf * j.hv[(a, b)]));
        }
    }
    out
}

/// Evaluates the four perturbation inequalities on a battery by quadrature.
///
/// The gradient inequalities are applied to mean-centred battery members,
/// since their derivation controls `‖h‖_*` through the Poincaré inequality.
pub fn verify_perturbation_bounds(
    battery: &[HermiteField],
    epsilon: EpsilonModel,
    gamma: f64,
    bounds: &PerturbationBounds,
) -> Result<Vec<InequalityCheck>> {
    let Some(first) = battery.first() else {
        return Err(Error::EmptyTrace);
    };
    let m = first.measure;
    let n = battery.iter().map(|h| h.degree()).max().unwrap_or(0);
    let q = m.quadrature(default_nodes(n + 2));
    let c2 = c2_constant(gamma, m.beta, m.omega0);
    let (e0c2, e0c22) = (bounds.eps0 * c2, bounds.eps0 * c2 * c2);
    let tol = 1e-10;
    let mut checks = Vec::new();
    let mut push = |label: String, lhs: f64, rhs: f64| {
        checks.push(InequalityCheck {
            holds: lhs <= rhs + tol,
            label,
            lhs,
            rhs,
        })
    };
    let jets: Vec<Jet> = battery.iter().map(|h| Jet::new(h, &q)).collect();
    let rs: Vec<[DMatrix<f64>; 3]> = jets.iter().map(|j| r_jet(j, &q, epsilon, gamma)).collect();
    let dot = |a: &DMatrix<f64>, b: &DMatrix<f64>| q.sum_grid(&a.component_mul(b));
    for (a, ja) in jets.iter().enumerate() {
        let na = dot(&ja.h, &ja.h);
        push(format!("c1[{a}]"), dot(&rs[a][0], &ja.h), e0c2 * na);
        for (b, jb) in jets.iter().enumerate().skip(a + 1) {
            let lhs = dot(&rs[a][0], &jb.h) + dot(&rs[b][0], &ja.h);
            push(format!("c2[{a},{b}]"), lhs, e0c2 * (na + dot(&jb.h, &jb.h)));
        }
    }
    for (a, h) in battery.iter().enumerate() {
        let mut centred = h.clone();
        centred.coeffs[(0, 0)] = 0.0;
        let j = Jet::new(&centred, &q);
        let r = r_jet(&j, &q, epsilon, gamma);
        let (gx, gv) = (dot(&j.hx, &j.hx), dot(&j.hv, &j.hv));
        push(format!("d[{a}]"), dot(&r[1], &j.hx), e0c22 * (5.5 * gx + 2.0 * gv));
        push(format!("e[{a}]"), dot(&r[2], &j.hv), e0c22 * (5.5 * gv + 2.0 * gx));
        push(
            format!("f[{a}]"),
            dot(&r[1], &j.hv) + dot(&r[2], &j.hx),
            7.5 * e0c22 * (gx + gv),
        );
    }
    Ok(checks)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoincareCheck {
    pub d: usize,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// `‖h‖²_* ≤ (‖∇ₓh‖²_* + ‖∇ᵥh‖²_*) / (dβ·min{ω₀², 1})` for a mean-zero field.
pub fn check_poincare(h: &HermiteField, d: usize) -> Result<PoincareCheck> {
    if !h.is_mean_zero(1e-14) {
        return Err(Error::NotMeanZero(h.mean()));
    }
    let m = h.measure;
    let (xx, vv, _) = gradient_gram(h);
    let lhs = h.norm_sq();
    let rhs = (xx + vv) / (d as f64 * m.beta * m.omega0.powi(2).min(1.0));
    Ok(PoincareCheck {
        d,
        lhs,
        rhs,
        holds: lhs <= rhs + 1e-12,
    })
}

/// Closed-form moments of `h = x₁` in `d = 2`: `‖h‖² = 1/(βω₀²)`, `‖∇h‖² = 1`.
pub fn poincare_d2_counterexample(beta: f64, omega0: f64) -> PoincareCheck {
    let lhs = 1.0 / (beta * omega0 * omega0);
    let rhs = 1.0 / (2.0 * beta * omega0.powi(2).min(1.0));
    PoincareCheck {
        d: 2,
        lhs,
        rhs,
        holds: lhs <= rhs + 1e-12,
    }
}

/// The generator `−T + L + R` on coefficient vectors of degree `n`.
#[derive(Debug, Clone)]
pub struct GeneratorMatrix {
    pub a: DMatrix<f64>,
    pub n: usize,
    pub gamma: f64,
    pub measure: GaussianMeasure,
    pub epsilon: EpsilonModel,
}

pub fn assemble_generator(
    n: usize,
    gamma: f64,
    beta: f64,
    omega0: f64,
    epsilon: EpsilonModel,
) -> Result<GeneratorMatrix> {
    if n < 2 {
        return Err(Error::Domain(format!("generator needs N >= 2, got {n}")));
    }
    if !(gamma > 0.0) {
        return Err(Error::Domain(format!("gamma must be positive, got {gamma}")));
    }
    let measure = GaussianMeasure::new(beta, omega0)?;
    let dim = (n + 1) * (n + 1);
    let mut a = DMatrix::zeros(dim, dim);
    let r = (!epsilon.is_zero()).then(|| EpsilonGalerkin::new(measure, epsilon, gamma, n));
    for i in 0..=n {
        for j in 0..=n {
            let e = HermiteField::basis(measure, n, i, j);
            let mut col = apply_l(&e, gamma).add_padded(&apply_t(&e), -1.0).resize(n);
            if let Some(r) = &r {
                col = col.add(&r.apply(&e)?)?;
            }
            a.set_column(i * (n + 1) + j, &col.to_vector());
        }
    }
    Ok(GeneratorMatrix {
        a,
        n,
        gamma,
        measure,
        epsilon,
    })
}

impl GeneratorMatrix {
    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn spectrum(&self) -> Result<Vec<Complex<f64>>> {
        sorted_spectrum(self.a.clone())
    }

    /// Spectrum restricted to the mean-zero coordinates.
    pub fn mean_zero_spectrum(&self) -> Result<Vec<Complex<f64>>> {
        sorted_spectrum(self.a.clone().remove_row(0).remove_column(0))
    }

    /// Largest real part over mean-zero modes.
    pub fn spectral_abscissa(&self) -> Result<f64> {
        Ok(self
            .mean_zero_spectrum()?
            .iter()
            .map(|z| z.re)
            .fold(f64::NEG_INFINITY, f64::max))
    }

    /// Power-iteration estimate of `‖A‖₂`, an upper bound on the spectral radius.
    pub fn norm_estimate(&self) -> f64 {
        let mut x = DVector::from_element(self.dim(), 1.0 / (self.dim() as f64).sqrt());
        let at = self.a.transpose();
        let mut est = 0.0;
        for _ in 0..200 {
            let y = &at * (&self.a * &x);
            let n = y.norm();
            if n == 0.0 {
                return 0.0;
            }
            est = n.sqrt();
            x = y / n;
        }
        est
    }
}

/// Eigenvalues by block: the matrix is split into the connected components
/// of its sparsity graph, ignoring entries below `1e-14·max|a_ij|` (the degree shells when `ε = 0`) and each block is
/// reduced by a Schur iteration with a bounded iteration count.
fn sorted_spectrum(m: DMatrix<f64>) -> Result<Vec<Complex<f64>>> {
    let n = m.nrows();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    // couplings at rounding level would otherwise merge the shells
    let floor = 1e-14 * m.amax();
    for i in 0..n {
        for j in 0..n {
            if i != j && m[(i, j)].abs() > floor {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let mut blocks: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for i in 0..n {
        let r = find(&mut parent, i);
        blocks.entry(r).or_default().push(i);
    }
    let mut ev = Vec::with_capacity(n);
    for idx in blocks.values() {
        let b = DMatrix::from_fn(idx.len(), idx.len(), |r, c| m[(idx[r], idx[c])]);
        if idx.len() == 1 {
            ev.push(Complex::new(b[(0, 0)], 0.0));
            continue;
        }
        ev.extend(block_eigenvalues(b)?);
    }
    ev.sort_by(|a, b| b.re.total_cmp(&a.re).then(a.im.total_cmp(&b.im)));
    Ok(ev)
}

/// Schur eigenvalues of one block. The unshifted iteration can stall on
/// structured (tridiagonal, sign-patterned) blocks; a fixed Householder
/// similarity breaks the structure without moving the spectrum.
fn block_eigenvalues(b: DMatrix<f64>) -> Result<Vec<Complex<f64>>> {
    let n = b.nrows();
    for attempt in 0..4 {
        let m = if attempt == 0 {
            b.clone()
        } else {
            let u = DVector::from_fn(n, |i, _| (1.0 + (i * attempt) as f64 * 0.618_033_988_749_895).sin());
            let q = DMatrix::identity(n, n) - (&u * u.transpose()) * (2.0 / u.norm_squared());
            &q * &b * &q
        };
        if let Some(schur) = nalgebra::linalg::Schur::try_new(m, f64::EPSILON, 100_000) {
            return Ok(schur.complex_eigenvalues().iter().copied().collect());
        }
    }
    Err(Error::Instability("Schur iteration did not converge".into()))
}

/// Random mean-zero data confined to total degree `≤ max_total` (an
/// invariant subspace of the unperturbed generator).
pub fn random_mean_zero(measure: GaussianMeasure, n: usize, max_total: usize, seed: u64) -> HermiteField {
    let mut rng = trajectory_rng(seed, 0);
    let mut h = HermiteField::zeros(measure, n);
    for i in 0..=n {
        for j in 0..=n {
            let z: f64 = StandardNormal.sample(&mut rng);
            if i + j <= max_total && i + j > 0 {
                h.coeffs[(i, j)] = z;
            }
        }
    }
    h
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    /// Classical fourth-order Runge–Kutta.
    Rk4,
    /// Implicit trapezoidal rule, unconditionally stable.
    Trapezoidal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvolveOptions {
    pub scheme: Scheme,
    /// Requested internal step; capped at `0.5/‖A‖` for RK4.
    pub dt: f64,
    pub output_dt: f64,
    /// `(C, Ĉ)` for recording `H(t)`.
    pub lyapunov: Option<(f64, f64)>,
    pub keep_snapshots: bool,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        EvolveOptions {
            scheme: Scheme::Rk4,
            dt: 0.01,
            output_dt: 0.1,
            lyapunov: None,
            keep_snapshots: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvolveSeries {
    pub times: Vec<f64>,
    pub norm_sq: Vec<f64>,
    pub lyapunov: Option<Vec<f64>>,
    /// Coefficient snapshots at output times, when requested.
    pub snapshots: Vec<HermiteField>,
    pub final_state: HermiteField,
    pub dt_used: f64,
}

impl EvolveSeries {
    /// Columns `t, norm_h_sq, H[, coeffs]`; coefficients are a JSON matrix.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let snaps = !self.snapshots.is_empty();
        let mut header = vec!["t", "norm_h_sq", "H"];
        if snaps {
            header.push("coeffs");
        }
        w.write_record(&header)?;
        for k in 0..self.times.len() {
            let mut row = vec![
                format!("{:e}", self.times[k]),
                format!("{:e}", self.norm_sq[k]),
                self.lyapunov.as_ref().map_or(String::new(), |h| format!("{:e}", h[k])),
            ];
            if snaps {
                let c = &self.snapshots[k].coeffs;
                let rows: Vec<Vec<f64>> = c.row_iter().map(|r| r.iter().copied().collect()).collect();
                row.push(serde_json::to_string(&rows)?);
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Integrates `dc/dt = A c` from `h0` to `t_final`.
///
/// For `ε = 0` the Euclidean norm of the coefficients must not grow; growth
/// beyond a relative `1e-8` aborts with [`Error::Instability`].
pub fn evolve(h0: &HermiteField, gen: &GeneratorMatrix, t_final: f64, opts: &EvolveOptions) -> Result<EvolveSeries> {
    if h0.measure != gen.measure || h0.degree() != gen.n {
        return Err(Error::MeasureMismatch);
    }
    if !(t_final >= 0.0 && opts.dt > 0.0 && opts.output_dt > 0.0) {
        return Err(Error::Domain("evolve needs t_final >= 0 and positive steps".into()));
    }
    let outputs = (t_final / opts.output_dt).round() as usize;
    let mut dt_max = opts.dt.min(opts.output_dt);
    if opts.scheme == Scheme::Rk4 {
        let rho = gen.norm_estimate();
        if rho > 0.0 {
            dt_max = dt_max.min(0.5 / rho);
        }
    }
    let sub = (opts.output_dt / dt_max).ceil().max(1.0) as usize;
    let dt = opts.output_dt / sub as f64;
    let a = &gen.a;
    let step: Box<dyn Fn(&DVector<f64>) -> DVector<f64>> = match opts.scheme {
        Scheme::Rk4 => Box::new(move |c: &DVector<f64>| {
            let k1 = a * c;
            let k2 = a * (c + &k1 * (0.5 * dt));
            let k3 = a * (c + &k2 * (0.5 * dt));
            let k4 = a * (c + &k3 * dt);
            c + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)
        }),
        Scheme::Trapezoidal => {
            let id = DMatrix::<f64>::identity(gen.dim(), gen.dim());
            let lu = (&id - a * (0.5 * dt)).lu();
            let rhs = &id + a * (0.5 * dt);
            Box::new(move |c: &DVector<f64>| lu.solve(&(&rhs * c)).expect("trapezoidal system is nonsingular"))
        }
    };
    let dissipative = gen.epsilon.is_zero();
    let n0 = h0.norm_sq();
    let record = |c: &DVector<f64>| HermiteField::from_vector(gen.measure, gen.n, c);
    let mut c = h0.to_vector();
    let mut series = EvolveSeries {
        times: Vec::with_capacity(outputs + 1),
        norm_sq: Vec::with_capacity(outputs + 1),
        lyapunov: opts.lyapunov.map(|_| Vec::with_capacity(outputs + 1)),
        snapshots: Vec::new(),
        final_state: h0.clone(),
        dt_used: dt,
    };
    let push = |series: &mut EvolveSeries, t: f64, c: &DVector<f64>| {
        let h = record(c);
        series.times.push(t);
        series.norm_sq.push(h.norm_sq());
        if let (Some(hs), Some((cc, ch))) = (series.lyapunov.as_mut(), opts.lyapunov) {
            hs.push(lyapunov_h(&h, cc, ch));
        }
        if opts.keep_snapshots {
            series.snapshots.push(h);
        }
    };
    push(&mut series, 0.0, &c);
    let mut prev = n0;
    for k in 1..=outputs {
        for _ in 0..sub {
            c = step(&c);
        }
        let t = k as f64 * opts.output_dt;
        let ns = c.norm_squared();
        if !ns.is_finite() {
            return Err(Error::Instability(format!("non-finite coefficients at t = {t}")));
        }
        if dissipative && ns > prev * (1.0 + 1e-8) + 1e-300 {
            return Err(Error::Instability(format!(
                "norm grew from {prev:e} to {ns:e} at t = {t}"
            )));
        }
        if !dissipative && ns > 1e12 * (n0 + 1.0) {
            return Err(Error::Instability(format!("norm blow-up at t = {t}")));
        }
        prev = ns;
        push(&mut series, t, &c);
    }
    series.final_state = record(&c);
    Ok(series)
}

/// Null vector of the generator with unit mass (`c₀₀ = 1`).
///
/// The reduced system `A[r, r] c_r = −A[r, 0]` over the non-constant modes
/// is solved by LU; the null space must be one-dimensional.
pub fn compute_steady_state(gen: &GeneratorMatrix) -> Result<HermiteField> {
    let sv = gen.a.clone().singular_values();
    let mut s: Vec<f64> = sv.iter().copied().collect();
    s.sort_by(|a, b| a.total_cmp(b));
    let scale = s.last().copied().unwrap_or(1.0).max(1.0);
    if s.len() < 2 || s[0] > 1e-8 * scale || s[1] < 1e-6 * scale {
        return Err(Error::NullSpace(s.get(1).copied().unwrap_or(0.0)));
    }
    let dim = gen.dim();
    let sub = gen.a.view((1, 1), (dim - 1, dim - 1)).clone_owned();
    let rhs = -gen.a.view((1, 0), (dim - 1, 1)).column(0).clone_owned();
    let cr = sub
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::NullSpace(s[1]))?;
    let mut c = DVector::zeros(dim);
    c[0] = 1.0;
    c.rows_mut(1, dim - 1).copy_from(&cr);
    Ok(HermiteField::from_vector(gen.measure, gen.n, &c))
}
