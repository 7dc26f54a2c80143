//! First eigenvalues and related infima of p-homogeneous quotients.
//!
//! Every quantity here is `inf A(w)/B(w)` with `A(w) = ‖∇w‖_p^p` and `B`
//! p-homogeneous: either a weighted `Σ ω ρ |w|^p` (ρ may change sign) or
//! `‖w‖_t^p`. The infimum is computed by a nonlinear inverse iteration: with
//! `q_k = A(w_k)/B(w_k)` the next iterate minimizes the convex functional
//! `(A + q_k B⁻)/p − q_k ⟨∂B⁺(w_k)/p, w⟩` and is renormalized. The
//! quotient decreases monotonically. Twenty seeded random restarts are run
//! and the smallest value kept.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::grid::{gradient_power_integral, norm_lq, Field, Grid};
use crate::linalg::sup;
use crate::operators::{p_laplacian, Functional, NodalPotential};
use crate::problem::ProblemSpec;
use crate::solvers::newton::{minimize, NewtonOptions};

/// A value that may legitimately be `+∞` (empty admissible set).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SpectralValue {
    Finite(f64),
    PlusInfinity,
}

impl SpectralValue {
    pub fn as_f64(&self) -> f64 {
        match self {
            SpectralValue::Finite(v) => *v,
            SpectralValue::PlusInfinity => f64::INFINITY,
        }
    }

    pub fn finite(&self) -> Option<f64> {
        match self {
            SpectralValue::Finite(v) => Some(*v),
            SpectralValue::PlusInfinity => None,
        }
    }
}

impl Serialize for SpectralValue {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            SpectralValue::Finite(v) => s.serialize_f64(*v),
            SpectralValue::PlusInfinity => s.serialize_str("+inf"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SpectralReport {
    pub quantity: String,
    pub value: SpectralValue,
    /// Minimizer with unit `‖∇w‖_p`, when one exists.
    pub minimizer: Option<Field>,
    pub iterations: usize,
    /// Sup of the strong-form residual of the Euler-Lagrange equation.
    pub residual: f64,
    pub converged: bool,
    pub constraint_active: Option<String>,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct SpectraOptions {
    pub restarts: usize,
    pub seed: u64,
    pub max_iter: usize,
    /// Relative change of the quotient at which the iteration stops.
    pub rel_tol: f64,
}

impl Default for SpectraOptions {
    fn default() -> Self {
        Self { restarts: 20, seed: 0, max_iter: 2000, rel_tol: 1e-13 }
    }
}

/// Denominator of the quotient.
#[derive(Debug, Clone)]
enum Target {
    Weighted { plus: Vec<f64>, minus: Vec<f64> },
    Lebesgue { t: f64 },
}

struct RatioRun {
    value: f64,
    w: Vec<f64>,
    iterations: usize,
    residual: f64,
    converged: bool,
}

/// Inner convex potential `F(j, s) = −(q/p) ρ⁻_j |s|^p + b_j s`.
struct InnerPotential<'a> {
    p: f64,
    q: f64,
    minus: Option<&'a [f64]>,
    b: Vec<f64>,
}

impl NodalPotential for InnerPotential<'_> {
    fn value(&self, j: usize, s: f64) -> f64 {
        let m = self.minus.map_or(0.0, |m| m[j]);
        -(self.q / self.p) * m * s.abs().powf(self.p) + self.b[j] * s
    }

    fn derivative(&self, j: usize, s: f64) -> f64 {
        let m = self.minus.map_or(0.0, |m| m[j]);
        let pow = if s == 0.0 { 0.0 } else { s.abs().powf(self.p - 2.0) * s };
        -self.q * m * pow + self.b[j]
    }

    fn curvature(&self, j: usize, s: f64, eps: f64) -> f64 {
        let m = self.minus.map_or(0.0, |m| m[j]);
        if m == 0.0 {
            return 0.0;
        }
        let e = if self.p < 2.0 { eps.max(1e-12) } else { eps };
        -self.q * m * (self.p - 1.0) * (s * s + e * e).powf(0.5 * (self.p - 2.0))
    }
}

fn lt_norm(grid: &Grid, w: &[f64], t: f64) -> f64 {
    if t.is_infinite() {
        return sup(w);
    }
    grid.node_weights().iter().zip(w).map(|(o, x)| o * x.abs().powf(t)).sum::<f64>().powf(1.0 / t)
}

impl Target {
    fn value(&self, grid: &Grid, p: f64, w: &[f64]) -> f64 {
        match self {
            Target::Weighted { plus, minus } => grid.node_weights().iter().enumerate().map(|(j, o)| o * (plus[j] - minus[j]) * w[j].abs().powf(p)).sum(),
            Target::Lebesgue { t } => lt_norm(grid, w, *t).powf(p),
        }
    }

    /// `∂(B⁺/p)` divided by the nodal weights.
    fn plus_gradient(&self, grid: &Grid, p: f64, w: &[f64]) -> Vec<f64> {
        match self {
            Target::Weighted { plus, .. } => w.iter().zip(plus).map(|(x, r)| if *x == 0.0 { 0.0 } else { r * x.abs().powf(p - 2.0) * x }).collect(),
            Target::Lebesgue { t } => {
                let norm = lt_norm(grid, w, *t);
                w.iter().map(|x| if *x == 0.0 { 0.0 } else { norm.powf(p - t) * x.abs().powf(t - 2.0) * x }).collect()
            }
        }
    }

    fn minus(&self) -> Option<&[f64]> {
        match self {
            Target::Weighted { minus, .. } => Some(minus),
            Target::Lebesgue { .. } => None,
        }
    }

    fn residual(&self, grid: &Grid, p: f64, q: f64, w: &[f64], pinned: &[bool]) -> f64 {
        let lap = p_laplacian(grid, w, p);
        let rhs: Vec<f64> = match self {
            Target::Weighted { plus, minus } => w.iter().enumerate().map(|(j, x)| if *x == 0.0 { 0.0 } else { (plus[j] - minus[j]) * x.abs().powf(p - 2.0) * x }).collect(),
            Target::Lebesgue { .. } => self.plus_gradient(grid, p, w),
        };
        (0..grid.n()).filter(|&j| !grid.is_fixed(j) && !pinned[j]).map(|j| (lap[j] - q * rhs[j]).abs()).fold(0.0, f64::max)
    }
}

fn normalize(grid: &Grid, p: f64, w: &mut [f64]) -> bool {
    let a = gradient_power_integral(grid, w, p);
    if !(a > 0.0 && a.is_finite()) {
        return false;
    }
    let s = a.powf(-1.0 / p);
    for x in w.iter_mut() {
        *x *= s;
    }
    true
}

fn ratio_descent(grid: &Grid, p: f64, target: &Target, pinned: &[bool], start: Vec<f64>, opts: &SpectraOptions) -> Option<RatioRun> {
    let mut w = start;
    if !normalize(grid, p, &mut w) {
        return None;
    }
    let mut b = target.value(grid, p, &w);
    if !(b > 0.0) {
        return None;
    }
    let mut q = 1.0 / b;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iter {
        iterations += 1;
        let lin = target.plus_gradient(grid, p, &w);
        let pot = InnerPotential { p, q, minus: target.minus(), b: lin.iter().map(|x| q * x).collect() };
        let f = Functional::new(grid, p, &pot).with_pinned(pinned);
        let scale = sup(&pot.b).max(1e-300);
        let inner = minimize(&f, &w, None, &NewtonOptions { tol: 1e-12 * scale, max_iter: 200, ..Default::default() });
        let mut next = inner.values;
        for (j, x) in next.iter_mut().enumerate() {
            if pinned[j] || grid.is_fixed(j) {
                *x = 0.0;
            }
        }
        if !normalize(grid, p, &mut next) {
            break;
        }
        let bn = target.value(grid, p, &next);
        if !(bn > 0.0) {
            break;
        }
        let qn = 1.0 / bn;
        if qn > q * (1.0 + 1e-12) {
            converged = true;
            break;
        }
        let change = (q - qn).abs() / q;
        let step = w.iter().zip(&next).fold(0.0f64, |m, (a, c)| m.max((a - c).abs()));
        w = next;
        b = bn;
        q = qn;
        if change <= opts.rel_tol && step <= 1e-8 {
            converged = true;
            break;
        }
    }
    let _ = b;
    let residual = target.residual(grid, p, q, &w, pinned);
    Some(RatioRun { value: q, w, iterations, residual, converged })
}

fn random_starts(grid: &Grid, target: &Target, pinned: &[bool], opts: &SpectraOptions, p: f64) -> Vec<Vec<f64>> {
    let n = grid.n();
    let weight_support: Vec<bool> = match target {
        Target::Weighted { plus, .. } => plus.iter().map(|&r| r > 0.0).collect(),
        Target::Lebesgue { .. } => vec![true; n],
    };
    (0..opts.restarts.max(1))
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(i as u64));
            let mut w: Vec<f64> = (0..n).map(|j| if grid.is_fixed(j) || pinned[j] { 0.0 } else { rng.random_range(0.1..1.0) }).collect();
            if target.value(grid, p, &w) <= 0.0 {
                for (j, x) in w.iter_mut().enumerate() {
                    if !weight_support[j] {
                        *x = 0.0;
                    }
                }
            }
            w
        })
        .collect()
}

fn best_run(grid: &Arc<Grid>, p: f64, target: Target, pinned: Vec<bool>, opts: &SpectraOptions) -> Option<RatioRun> {
    let starts = random_starts(grid, &target, &pinned, opts, p);
    let runs = crate::parallel::map(starts, |s| ratio_descent(grid, p, &target, &pinned, s, opts));
    runs.into_iter().flatten().fold(None, |best: Option<RatioRun>, r| match best {
        Some(b) if b.value <= r.value => Some(b),
        _ => Some(r),
    })
}

fn orient(grid: &Arc<Grid>, mut w: Vec<f64>) -> Field {
    let s: f64 = w.iter().zip(grid.node_weights()).map(|(x, o)| x * o).sum();
    if s < 0.0 {
        for x in &mut w {
            *x = -*x;
        }
    }
    Field::from_raw(grid, w)
}

fn free_mask(grid: &Grid) -> Vec<bool> {
    vec![false; grid.n()]
}

fn check_p(p: f64) -> Result<()> {
    if !(p.is_finite() && p > 1.0) {
        return Err(Error::InvalidParameter(format!("exponent must exceed 1, got {p}")));
    }
    Ok(())
}

fn check_mu(mu: f64) -> Result<()> {
    if !(mu.is_finite() && mu > 0.0) {
        return Err(Error::InvalidParameter(format!("gradient coefficient must be positive, got {mu}")));
    }
    Ok(())
}

/// Infimum of `A(w) / Σ ω ρ |w|^p` over fields vanishing on `pinned`;
/// `None` when no admissible field has a positive denominator.
fn weighted_quotient(grid: &Arc<Grid>, p: f64, rho: &[f64], pinned: Vec<bool>, opts: &SpectraOptions) -> Option<RatioRun> {
    let plus: Vec<f64> = rho.iter().map(|r| r.max(0.0)).collect();
    let minus: Vec<f64> = rho.iter().map(|r| (-r).max(0.0)).collect();
    let any_plus = (0..grid.n()).any(|j| !grid.is_fixed(j) && !pinned[j] && plus[j] > 0.0);
    if !any_plus {
        return None;
    }
    best_run(grid, p, Target::Weighted { plus, minus }, pinned, opts)
}

/// First eigenvalue of `−Δ_p u = γ c |u|^{p−2}u`.
pub fn gamma1(c: &Field, p: f64, opts: &SpectraOptions) -> Result<SpectralReport> {
    check_p(p)?;
    if c.min() < 0.0 || c.max() <= 0.0 {
        return Err(Error::InvalidParameter("weight must be nonnegative and not identically zero".into()));
    }
    let grid = c.grid();
    let run = weighted_quotient(grid, p, c.values(), free_mask(grid), opts).ok_or_else(|| Error::InvalidParameter("weight vanishes at every free node".into()))?;
    Ok(SpectralReport {
        quantity: "gamma1".into(),
        value: SpectralValue::Finite(run.value),
        minimizer: Some(orient(grid, run.w)),
        iterations: run.iterations,
        residual: run.residual,
        converged: run.converged,
        constraint_active: None,
        seed: opts.seed,
    })
}

/// `inf {‖∇w‖_p^p − β Σ ω h |w|^p : ‖∇w‖_p = 1, w = 0 on pinned}`.
fn coercivity_constant(h: &Field, p: f64, beta: f64, pinned: Vec<bool>, quantity: &str, opts: &SpectraOptions) -> SpectralReport {
    let grid = h.grid();
    let constraint = pinned.iter().any(|&b| b).then(|| "w = 0 on the support of c".to_string());
    let base = SpectralReport {
        quantity: quantity.into(),
        value: SpectralValue::Finite(1.0),
        minimizer: None,
        iterations: 0,
        residual: 0.0,
        converged: true,
        constraint_active: constraint,
        seed: opts.seed,
    };
    if beta == 0.0 {
        return base;
    }
    let rho: Vec<f64> = h.values().iter().map(|x| beta * x).collect();
    match weighted_quotient(grid, p, &rho, pinned.clone(), opts) {
        Some(run) => SpectralReport {
            value: SpectralValue::Finite(1.0 - 1.0 / run.value),
            minimizer: Some(orient(grid, run.w)),
            iterations: run.iterations,
            residual: run.residual,
            converged: run.converged,
            ..base
        },
        None => {
            // nonpositive weight: 1 + β inf B⁻/A, zero if some free node has no weight
            let free: Vec<usize> = (0..grid.n()).filter(|&j| !grid.is_fixed(j) && !pinned[j]).collect();
            if free.iter().any(|&j| rho[j] == 0.0) {
                let j = *free.iter().find(|&&j| rho[j] == 0.0).unwrap();
                let mut w = vec![0.0; grid.n()];
                w[j] = 1.0;
                normalize(grid, p, &mut w);
                return SpectralReport { minimizer: Some(Field::from_raw(grid, w)), ..base };
            }
            let minus: Vec<f64> = rho.iter().map(|r| -r).collect();
            let (max_ratio, w, iterations) = max_quotient(grid, p, &minus, &free);
            SpectralReport { value: SpectralValue::Finite(1.0 + 1.0 / max_ratio), minimizer: Some(Field::from_raw(grid, w)), iterations, ..base }
        }
    }
}

/// `sup A(w) / Σ ω σ |w|^p` for `σ > 0` on the free nodes, by the ascent
/// iteration `w ← (∂A(w) / (ω σ))^{1/(p−1)}`.
fn max_quotient(grid: &Arc<Grid>, p: f64, sigma: &[f64], free: &[usize]) -> (f64, Vec<f64>, usize) {
    let n = grid.n();
    let mut w = vec![0.0; n];
    for (k, &j) in free.iter().enumerate() {
        w[j] = if k % 2 == 0 { 1.0 } else { -1.0 };
    }
    let denom = |w: &[f64]| -> f64 { free.iter().map(|&j| grid.node_weights()[j] * sigma[j] * w[j].abs().powf(p)).sum() };
    let mut ratio = gradient_power_integral(grid, &w, p) / denom(&w);
    let mut it = 0;
    for _ in 0..500 {
        it += 1;
        let lap = p_laplacian(grid, &w, p);
        let mut next = vec![0.0; n];
        for &j in free {
            let g = lap[j] / sigma[j];
            next[j] = g.signum() * g.abs().powf(1.0 / (p - 1.0));
        }
        let r = gradient_power_integral(grid, &next, p) / denom(&next);
        if !(r.is_finite()) || r <= ratio * (1.0 + 1e-14) {
            break;
        }
        ratio = r;
        w = next;
    }
    normalize(grid, p, &mut w);
    (ratio, w, it)
}

/// The coercivity constant of the problem without zero-order term:
/// `inf {‖∇w‖_p^p − (μ/(p−1))^{p−1} Σ ω h|w|^p : ‖∇w‖_p = 1}`.
pub fn m_p(h: &Field, p: f64, mu: f64, opts: &SpectraOptions) -> Result<SpectralReport> {
    check_p(p)?;
    check_mu(mu)?;
    let beta = (mu / (p - 1.0)).powf(p - 1.0);
    Ok(coercivity_constant(h, p, beta, free_mask(h.grid()), "m_p", opts))
}

/// The pair of constants for variable gradient coefficients, restricted to
/// fields vanishing on the support of `c` when `λ ≠ 0`. The `+` constant
/// uses `‖μ⁺‖_∞` and `h`, the `−` constant `‖μ⁻‖_∞` and `−h`.
pub fn m_p_lambda_pm(spec: &ProblemSpec, opts: &SpectraOptions) -> Result<(SpectralReport, SpectralReport)> {
    check_p(spec.p)?;
    let grid = spec.grid();
    let pinned: Vec<bool> = if spec.lambda != 0.0 { spec.c_support() } else { vec![false; grid.n()] };
    let all_pinned = (0..grid.n()).all(|j| grid.is_fixed(j) || pinned[j]);
    let make = |mu: f64, h: &Field, name: &str| -> SpectralReport {
        if all_pinned {
            return SpectralReport {
                quantity: name.into(),
                value: SpectralValue::PlusInfinity,
                minimizer: None,
                iterations: 0,
                residual: 0.0,
                converged: true,
                constraint_active: Some("admissible set is empty".into()),
                seed: opts.seed,
            };
        }
        let beta = (mu / (spec.p - 1.0)).powf(spec.p - 1.0);
        coercivity_constant(h, spec.p, beta, pinned.clone(), name, opts)
    };
    let h = spec.forcing_field();
    let plus = make(spec.mu_plus, &h, "m_p_lambda_plus");
    let minus = make(spec.mu_minus, &h.scaled(-1.0), "m_p_lambda_minus");
    Ok((plus, minus))
}

#[derive(Debug, Clone, Serialize)]
pub struct K0Report {
    pub value: SpectralValue,
    pub method: &'static str,
    /// Sign of `m_p(k h)` at `0.95 k₀` (positive) and `1.05 k₀` (negative).
    pub certificate: Option<(bool, bool)>,
    pub iterations: usize,
}

/// Largest datum scaling for which the unperturbed problem stays coercive:
/// `k₀ = ((p−1)/μ)^{p−1} γ₁(h)`, `+∞` when `h ≤ 0`.
pub fn k0(h: &Field, p: f64, mu: f64, opts: &SpectraOptions) -> Result<K0Report> {
    check_p(p)?;
    check_mu(mu)?;
    let grid = h.grid();
    if !(0..grid.n()).any(|j| !grid.is_fixed(j) && h.values()[j] > 0.0) {
        return Ok(K0Report { value: SpectralValue::PlusInfinity, method: "nonpositive datum", certificate: None, iterations: 0 });
    }
    let factor = ((p - 1.0) / mu).powf(p - 1.0);
    let run = weighted_quotient(grid, p, h.values(), free_mask(grid), opts);
    let (value, method, iterations) = match run {
        Some(r) if r.converged => (factor * r.value, "weighted eigenvalue", r.iterations),
        _ => {
            let (v, it) = k0_bisection(h, p, mu, opts)?;
            (v, "bisection on the sign of m_p", it)
        }
    };
    let sign_at = |k: f64| -> Result<f64> { Ok(m_p(&h.scaled(k), p, mu, opts)?.value.as_f64()) };
    let certificate = Some((sign_at(0.95 * value)? > 0.0, sign_at(1.05 * value)? < 0.0));
    Ok(K0Report { value: SpectralValue::Finite(value), method, certificate, iterations })
}

/// Bisection on `k ↦ sign m_p(k h)`, which is concave and non-increasing.
pub fn k0_bisection(h: &Field, p: f64, mu: f64, opts: &SpectraOptions) -> Result<(f64, usize)> {
    let light = SpectraOptions { restarts: opts.restarts.min(4), ..opts.clone() };
    let sign = |k: f64| -> Result<f64> { Ok(m_p(&h.scaled(k), p, mu, &light)?.value.as_f64()) };
    let mut lo = 0.0;
    let mut hi = 1.0;
    let mut it = 0;
    while sign(hi)? > 0.0 {
        lo = hi;
        hi *= 2.0;
        it += 1;
        if hi > 1e12 {
            return Err(Error::NoConvergence("no sign change of m_p found".into()));
        }
    }
    while hi - lo > 1e-10 * hi {
        let mid = 0.5 * (lo + hi);
        if sign(mid)? > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        it += 1;
    }
    Ok((0.5 * (lo + hi), it))
}

#[derive(Debug, Clone, Serialize)]
pub struct AppendixReport {
    pub holds: bool,
    /// `((p−1)/μ)^{p−1} S − ‖h⁺‖`.
    pub margin: f64,
    pub norm_of_h_plus: f64,
    pub sobolev_constant: f64,
    /// `"p<N"`, `"p=N"` or `"p>N"`.
    pub case: &'static str,
    /// Norm exponent applied to `h⁺`.
    pub h_exponent: f64,
    /// The constant is the optimal one for the mesh, not the continuum one.
    pub discrete_surrogate: bool,
}

/// Sufficient condition for positivity of `m_p` through a discrete Sobolev
/// constant. An interval counts as dimension 1.
pub fn appendix_sufficient(h: &Field, p: f64, mu: f64, q: Option<f64>, opts: &SpectraOptions) -> Result<AppendixReport> {
    check_p(p)?;
    check_mu(mu)?;
    let grid = h.grid();
    let dim = grid.dim() as f64;
    let h_plus = h.map(|x| x.max(0.0));
    let (case, h_exp, s) = if p < dim {
        if q.is_some_and(|q| (q - dim / p).abs() > 1e-12) {
            return Err(Error::InvalidParameter(format!("for p < N the datum norm is L^(N/p); got q = {:?}", q)));
        }
        let t = dim * p / (dim - p);
        ("p<N", dim / p, sobolev_lt(grid, p, t, opts)?)
    } else if p == dim {
        let q = q.ok_or_else(|| Error::InvalidParameter("p = N requires an exponent q in (1, ∞)".into()))?;
        if !(q > 1.0 && q.is_finite()) {
            return Err(Error::InvalidParameter(format!("q must lie in (1, ∞), got {q}")));
        }
        let t = dim * q / (q - 1.0);
        ("p=N", q, sobolev_lt(grid, p, t, opts)?)
    } else {
        if q.is_some_and(|q| q != 1.0) {
            return Err(Error::InvalidParameter(format!("for p > N the datum norm is L^1; got q = {:?}", q)));
        }
        ("p>N", 1.0, sobolev_sup(grid, p))
    };
    let lhs = norm_lq(&h_plus, h_exp)?;
    let rhs = ((p - 1.0) / mu).powf(p - 1.0) * s;
    Ok(AppendixReport { holds: lhs < rhs, margin: rhs - lhs, norm_of_h_plus: lhs, sobolev_constant: s, case, h_exponent: h_exp, discrete_surrogate: true })
}

/// `inf {‖∇u‖_p^p : ‖u‖_t = 1}` on the mesh.
fn sobolev_lt(grid: &Arc<Grid>, p: f64, t: f64, opts: &SpectraOptions) -> Result<f64> {
    best_run(grid, p, Target::Lebesgue { t }, vec![false; grid.n()], opts).map(|r| r.value).ok_or_else(|| Error::NoConvergence("Sobolev quotient iteration failed".into()))
}

/// `inf {‖∇u‖_p^p : max |u| = 1}` on the mesh, exactly: on each side of the
/// peak node the optimal slopes satisfy `w_i |s_i|^{p−1} = const`, giving
/// `h^{−p} (Σ w_i^{−1/(p−1)})^{1−p}` per side. A radial centre is free.
pub fn sobolev_sup(grid: &Grid, p: f64) -> f64 {
    let h = grid.spacing();
    let e = -1.0 / (p - 1.0);
    let w = grid.cell_weights();
    let cells = w.len();
    let side = |range: std::ops::Range<usize>| -> f64 {
        let s: f64 = w[range].iter().map(|x| x.powf(e)).sum();
        h.powf(-p) * s.powf(1.0 - p)
    };
    let first = if grid.is_fixed(0) { 1 } else { 0 };
    (first..cells)
        .map(|m| {
            let left = if grid.is_fixed(0) { side(0..m) } else { 0.0 };
            left + side(m..cells)
        })
        .fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Domain;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn interval(n: usize) -> Arc<Grid> {
        Arc::new(Grid::new(Domain::Interval { a: 0.0, b: 1.0 }, n).unwrap())
    }

    fn quick() -> SpectraOptions {
        SpectraOptions { restarts: 3, ..Default::default() }
    }

    #[test]
    fn laplacian_eigenvalue_and_scaling() {
        let g = interval(257);
        let r = gamma1(&Field::constant(&g, 1.0), 2.0, &quick()).unwrap();
        assert_relative_eq!(r.value.as_f64(), PI * PI, max_relative = 1e-3);
        let w = r.minimizer.unwrap();
        assert!(g.interior_nodes().all(|j| w.values()[j] > 0.0));
        assert_relative_eq!(crate::grid::norm_w1p(&w, 2.0).unwrap(), 1.0, max_relative = 1e-10);
        let r2 = gamma1(&Field::constant(&g, 2.0), 2.0, &quick()).unwrap();
        assert_relative_eq!(r2.value.as_f64(), r.value.as_f64() / 2.0, max_relative = 1e-9);
    }

    #[test]
    fn m_p_examples() {
        let g = interval(129);
        let z = m_p(&Field::zeros(&g), 2.0, 1.0, &quick()).unwrap();
        assert_eq!(z.value.as_f64(), 1.0);
        let neg = m_p(&Field::constant(&g, -1.0), 2.0, 1.0, &quick()).unwrap();
        assert!(neg.value.as_f64() >= 1.0);
        let kappa = 5.0;
        let pos = m_p(&Field::constant(&g, kappa), 2.0, 1.0, &quick()).unwrap();
        let gamma = gamma1(&Field::constant(&g, 1.0), 2.0, &quick()).unwrap().value.as_f64();
        assert_relative_eq!(pos.value.as_f64(), 1.0 - kappa / gamma, max_relative = 1e-8);
    }

    #[test]
    fn empty_constraint_gives_infinity() {
        let g = interval(33);
        let spec = ProblemSpec::new(2.0, 1.0, -1.0, Field::constant(&g, 1.0), Field::constant(&g, 1.0)).unwrap();
        let (plus, minus) = m_p_lambda_pm(&spec, &quick()).unwrap();
        assert_eq!(plus.value, SpectralValue::PlusInfinity);
        assert_eq!(minus.value, SpectralValue::PlusInfinity);
        assert_eq!(serde_json::to_string(&plus.value).unwrap(), "\"+inf\"");
    }

    #[test]
    fn k0_scales_with_mu() {
        let g = interval(65);
        let h = Field::constant(&g, 1.0);
        let a = k0(&h, 3.0, 1.0, &quick()).unwrap();
        let b = k0(&h, 3.0, 2.0, &quick()).unwrap();
        assert_relative_eq!(b.value.as_f64(), a.value.as_f64() / 4.0, max_relative = 1e-8);
        assert_eq!(a.certificate, Some((true, true)));
        assert_eq!(k0(&Field::constant(&g, -1.0), 3.0, 1.0, &quick()).unwrap().value, SpectralValue::PlusInfinity);
    }

    /// First zero of the solution of `(|u'|^{p−2}u')' + |u|^{p−2}u = 0`,
    /// `u(0) = 0`, `|u'|^{p−2}u'(0) = 1`, integrated with RK4 in the flux
    /// variable. The first eigenvalue on (0, 1) is `z^p`.
    fn shooting_gamma1(p: f64) -> f64 {
        let rhs = |u: f64, phi: f64| -> (f64, f64) { (phi.signum() * phi.abs().powf(1.0 / (p - 1.0)), -u.signum() * u.abs().powf(p - 1.0)) };
        let dt = 1e-5;
        let (mut t, mut u, mut phi) = (0.0, 0.0, 1.0);
        loop {
            let (k1u, k1p) = rhs(u, phi);
            let (k2u, k2p) = rhs(u + 0.5 * dt * k1u, phi + 0.5 * dt * k1p);
            let (k3u, k3p) = rhs(u + 0.5 * dt * k2u, phi + 0.5 * dt * k2p);
            let (k4u, k4p) = rhs(u + dt * k3u, phi + dt * k3p);
            let un = u + dt / 6.0 * (k1u + 2.0 * k2u + 2.0 * k3u + k4u);
            let pn = phi + dt / 6.0 * (k1p + 2.0 * k2p + 2.0 * k3p + k4p);
            if t > 0.1 && un < 0.0 {
                let z = t + dt * u / (u - un);
                return z.powf(p);
            }
            t += dt;
            u = un;
            phi = pn;
        }
    }

    #[test]
    fn p3_eigenvalue_matches_shooting() {
        let g = interval(513);
        let r = gamma1(&Field::constant(&g, 1.0), 3.0, &quick()).unwrap();
        let oracle = shooting_gamma1(3.0);
        assert_relative_eq!(r.value.as_f64(), oracle, max_relative = 5e-3);
        assert!(r.converged);
    }

    #[test]
    fn singular_exponent_eigenvalue_matches_shooting() {
        let g = interval(513);
        let r = gamma1(&Field::constant(&g, 1.0), 1.5, &quick()).unwrap();
        assert_relative_eq!(r.value.as_f64(), shooting_gamma1(1.5), max_relative = 1e-2);
    }

    #[test]
    fn constrained_infimum_matches_subdomain_eigenvalue() {
        let g = interval(1025);
        let c = Field::from_fn(&g, |x| if x < 0.5 { 1.0 } else { 0.0 });
        let kappa = 10.0;
        let spec = ProblemSpec::new(2.0, 1.0, -1.0, c, Field::constant(&g, kappa)).unwrap();
        let (plus, minus) = m_p_lambda_pm(&spec, &quick()).unwrap();
        let w = plus.minimizer.as_ref().unwrap();
        assert!(w.values()[..512].iter().all(|&x| x == 0.0));
        // Dirichlet problem on (1/2 − h, 1): first eigenvalue π²/L²
        let len = 0.5 + 1.0 / 1024.0;
        let oracle = 1.0 - kappa * len * len / (PI * PI);
        assert_relative_eq!(plus.value.as_f64(), oracle, max_relative = 1e-3);
        assert!(minus.value.as_f64() >= 1.0);
    }

    #[test]
    fn unconstrained_pair_reduces_to_m_p() {
        let g = interval(129);
        let h = Field::from_fn(&g, |x| 4.0 * (2.0 * PI * x).sin());
        let spec = ProblemSpec::new(2.0, 1.0, 0.0, Field::constant(&g, 1.0), h.clone()).unwrap();
        let (plus, minus) = m_p_lambda_pm(&spec, &quick()).unwrap();
        let direct = m_p(&h, 2.0, 1.0, &quick()).unwrap();
        assert_relative_eq!(plus.value.as_f64(), direct.value.as_f64(), max_relative = 1e-9);
        // constant μ > 0 has no negative part
        assert_eq!(minus.value.as_f64(), 1.0);
    }

    #[test]
    fn sup_sobolev_constant_on_unit_interval() {
        // continuum value 2^p for the hat function
        let g = interval(101);
        assert_relative_eq!(sobolev_sup(&g, 3.0), 8.0, max_relative = 1e-12);
    }

    #[test]
    fn appendix_zero_datum_margin() {
        let g = interval(65);
        let r = appendix_sufficient(&Field::zeros(&g), 2.0, 1.0, None, &quick()).unwrap();
        assert!(r.holds);
        assert_relative_eq!(r.margin, 4.0, max_relative = 1e-12);
        assert!(appendix_sufficient(&Field::zeros(&g), 2.0, 1.0, Some(3.0), &quick()).is_err());
    }
}
