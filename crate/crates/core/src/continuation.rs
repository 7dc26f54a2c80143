//! Solution branches in `λ` or in the datum scaling `k`: natural-parameter
//! continuation with a switch to pseudo-arclength, fold detection, and the
//! existence-region diagram in the `(λ, k)` plane.

use std::fmt::Write as _;

use log::{debug, info};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::Field;
use crate::linalg::{dot, solve_bordered, sup, SymTridiag};
use crate::nonlinearity::from_transformed;
use crate::operators::{p_laplacian, EnergyModel};
use crate::problem::{ProblemSpec, TruncationData};
use crate::solvers::lower::build_lower_solution;
use crate::solvers::newton::{minimize, NewtonOptions, Status};
use crate::solvers::pipeline::{solve_Plambda, OrderedPair, SolveOptions};
use crate::spectra::{gamma1, k0, SpectraOptions};

/// A smooth family `G(x, t) = 0` with tridiagonal Jacobian in `x`.
pub trait Continuable: Sync {
    fn dim(&self) -> usize;
    fn residual(&self, x: &[f64], t: f64) -> Vec<f64>;
    fn jacobian(&self, x: &[f64], t: f64) -> SymTridiag;
    fn d_param(&self, x: &[f64], t: f64) -> Vec<f64>;
    /// Weights of the inner product used for arclength (zero on fixed entries).
    fn weights(&self) -> Vec<f64>;
    /// Scale for the residual tolerance at `x`.
    fn scale(&self, _x: &[f64]) -> f64 {
        1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Parameter {
    Lambda,
    K,
}

impl Parameter {
    pub fn name(&self) -> &'static str {
        match self {
            Parameter::Lambda => "lambda",
            Parameter::K => "k",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BranchPoint {
    pub param: f64,
    pub energy: f64,
    pub min_value: f64,
    pub sup_norm: f64,
    /// Sup of the strong residual of the transformed problem.
    pub residual: f64,
    /// Parameter component of the unit tangent; `None` on natural steps.
    pub dparam_ds: Option<f64>,
    /// Interior values negative and inward boundary slopes negative.
    pub negative: bool,
    pub fold_flag: bool,
    /// Transformed state; kept at every `store_every`-th point.
    #[serde(skip)]
    pub state: Option<Vec<f64>>,
    /// Solution of the original problem, kept alongside `state`.
    #[serde(skip)]
    pub solution: Option<Field>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Fold {
    /// Midpoint of the window.
    pub param: f64,
    /// Last parameter with a found solution, first parameter without.
    pub window: (f64, f64),
    /// Turning point estimated from the branch points around the sign change.
    pub branch_estimate: f64,
    /// Index of the branch point after which the tangent turns.
    pub index: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct Branch {
    pub parameter: Parameter,
    pub points: Vec<BranchPoint>,
    pub fold: Option<Fold>,
    /// Tracing stopped because no step could be taken.
    pub truncated: bool,
    pub lineage: Vec<String>,
}

impl Branch {
    /// `param,energy,min_value,sup_norm,fold_flag` rows, 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{},energy,min_value,sup_norm,fold_flag\n", self.parameter.name());
        for p in &self.points {
            let _ = writeln!(out, "{:.16e},{:.16e},{:.16e},{:.16e},{}", p.param, p.energy, p.min_value, p.sup_norm, u8::from(p.fold_flag));
        }
        out
    }

    pub fn max_param(&self) -> Option<f64> {
        self.points.iter().map(|p| p.param).max_by(f64::total_cmp)
    }
}

#[derive(Debug, Clone)]
pub struct ContinuationOptions {
    /// Minimal parameter step of the natural phase, relative to the initial step.
    pub min_step_ratio: f64,
    pub max_points: usize,
    pub tol: f64,
    /// Tracing stops once the solution exceeds this sup norm.
    pub sup_bound: f64,
    /// Width of the solvability window around a fold (absolute).
    pub window: Option<f64>,
    pub store_every: usize,
}

impl Default for ContinuationOptions {
    fn default() -> Self {
        Self { min_step_ratio: 1.0 / 64.0, max_points: 400, tol: 1e-9, sup_bound: 20.0, window: None, store_every: 10 }
    }
}

/// The transformed problem as a one-parameter family.
pub struct Family {
    pub base: ProblemSpec,
    pub parameter: Parameter,
    pub trunc: TruncationData,
}

impl Family {
    /// Floor valid over `[t0, t1]`: nodewise minimum of the lower solutions at both ends.
    pub fn new(base: &ProblemSpec, parameter: Parameter, t0: f64, t1: f64) -> Result<Self> {
        let mut lowest: Option<Field> = None;
        for t in [t0, t1] {
            let spec = Self::with(base, parameter, t);
            let floor = build_lower_solution(&spec)?.underline_u;
            lowest = Some(match lowest {
                None => floor,
                Some(prev) => Field::from_raw(prev.grid(), prev.values().iter().zip(floor.values()).map(|(a, b)| a.min(*b)).collect()),
            });
        }
        let trunc = TruncationData::from_lower(lowest.expect("two ends"), base.p, base.mu)?;
        Ok(Self { base: base.clone(), parameter, trunc })
    }

    fn with(base: &ProblemSpec, parameter: Parameter, t: f64) -> ProblemSpec {
        match parameter {
            Parameter::Lambda => base.with_lambda(t),
            Parameter::K => base.with_k(t),
        }
    }

    pub fn spec_at(&self, t: f64) -> ProblemSpec {
        Self::with(&self.base, self.parameter, t)
    }

    pub fn model_at(&self, t: f64) -> EnergyModel {
        EnergyModel::new(self.spec_at(t), self.trunc.clone()).expect("validated family")
    }

    fn rate(&self) -> f64 {
        self.base.kernel().rate()
    }

    fn to_original(&self, x: &[f64]) -> Field {
        let a = self.rate();
        Field::from_raw(self.base.grid(), x.iter().map(|&v| if 1.0 + a * v > 0.0 { from_transformed(v, a) } else { f64::NEG_INFINITY }).collect())
    }
}

impl Continuable for Family {
    fn dim(&self) -> usize {
        self.base.grid().n()
    }

    fn residual(&self, x: &[f64], t: f64) -> Vec<f64> {
        if self.parameter == Parameter::K && t < 0.0 {
            // affine in k: extend past k = 0 for the arclength corrector
            let g0 = self.model_at(0.0).functional().gradient(x);
            let g1 = self.model_at(1.0).functional().gradient(x);
            return g0.iter().zip(&g1).map(|(a, b)| a + t * (b - a)).collect();
        }
        self.model_at(t).functional().gradient(x)
    }

    fn jacobian(&self, x: &[f64], t: f64) -> SymTridiag {
        if self.parameter == Parameter::K && t < 0.0 {
            let h0 = self.model_at(0.0).functional().hessian(x);
            let h1 = self.model_at(1.0).functional().hessian(x);
            let mix = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(u, v)| u + t * (v - u)).collect();
            return SymTridiag { diag: mix(&h0.diag, &h1.diag), off: mix(&h0.off, &h1.off) };
        }
        self.model_at(t).functional().hessian(x)
    }

    fn d_param(&self, x: &[f64], t: f64) -> Vec<f64> {
        let model = self.model_at(t.max(0.0));
        let grid = model.grid();
        let r = model.reaction();
        (0..grid.n())
            .map(|j| {
                if grid.is_fixed(j) {
                    return 0.0;
                }
                let w = grid.node_weights()[j];
                match self.parameter {
                    Parameter::Lambda => -w * r.df_dlambda(j, x[j], self.base.c.values()[j]),
                    Parameter::K => -w * r.df_dk(j, x[j], self.base.h.values()[j]),
                }
            })
            .collect()
    }

    fn weights(&self) -> Vec<f64> {
        let grid = self.base.grid();
        let m = grid.measure();
        (0..grid.n()).map(|j| if grid.is_fixed(j) { 0.0 } else { grid.node_weights()[j] / m }).collect()
    }

    fn scale(&self, x: &[f64]) -> f64 {
        let grid = self.base.grid();
        let lap = p_laplacian(grid, x, self.base.p);
        let w = grid.node_weights();
        // gradient entries carry the nodal weight
        sup(&lap.iter().zip(w).map(|(a, b)| a * b).collect::<Vec<_>>()).max(w.iter().copied().fold(0.0, f64::max))
    }
}

/// Scaled residual: entries of `G` over the arclength weights where positive.
fn res_norm<C: Continuable + ?Sized>(c: &C, g: &[f64], x: &[f64]) -> f64 {
    sup(g) / c.scale(x)
}

/// Unit tangent at `(x, t)` oriented along `prev`.
fn tangent<C: Continuable + ?Sized>(c: &C, x: &[f64], t: f64, prev: (&[f64], f64)) -> Option<(Vec<f64>, f64)> {
    let w = c.weights();
    let j = c.jacobian(x, t);
    let b = c.d_param(x, t);
    let cv: Vec<f64> = prev.0.iter().zip(&w).map(|(a, b)| a * b).collect();
    let (z, s) = solve_bordered(&j, &b, &cv, prev.1, &vec![0.0; x.len()], 1.0)?;
    let norm = (z.iter().zip(&w).map(|(a, b)| b * a * a).sum::<f64>() + s * s).sqrt();
    if !(norm > 0.0 && norm.is_finite()) {
        return None;
    }
    Some((z.iter().map(|a| a / norm).collect(), s / norm))
}

/// One pseudo-arclength step of length `ds` from `(x0, t0)` along `tau`.
fn arclength_step<C: Continuable + ?Sized>(c: &C, x0: &[f64], t0: f64, tau: (&[f64], f64), ds: f64, tol: f64) -> Option<(Vec<f64>, f64, usize)> {
    let w = c.weights();
    let mut x: Vec<f64> = x0.iter().zip(tau.0).map(|(a, b)| a + ds * b).collect();
    let mut t = t0 + ds * tau.1;
    let cv: Vec<f64> = tau.0.iter().zip(&w).map(|(a, b)| a * b).collect();
    for it in 0..12 {
        let g = c.residual(&x, t);
        let nres = dot(&cv, &x.iter().zip(x0).map(|(a, b)| a - b).collect::<Vec<_>>()) + tau.1 * (t - t0) - ds;
        if res_norm(c, &g, &x) <= tol && nres.abs() <= 1e-10 * (1.0 + ds.abs()) {
            return Some((x, t, it));
        }
        let j = c.jacobian(&x, t);
        let b = c.d_param(&x, t);
        let neg: Vec<f64> = g.iter().map(|v| -v).collect();
        let (dx, dt) = solve_bordered(&j, &b, &cv, tau.1, &neg, -nres)?;
        if dx.iter().any(|v| !v.is_finite()) || !dt.is_finite() {
            return None;
        }
        for (xi, d) in x.iter_mut().zip(&dx) {
            *xi += d;
        }
        t += dt;
    }
    let g = c.residual(&x, t);
    (res_norm(c, &g, &x) <= tol).then_some((x, t, 12))
}

/// Raw states of a traced family, before they are turned into branch points.
pub struct Trace {
    pub states: Vec<(Vec<f64>, f64, Option<f64>)>,
    pub truncated: bool,
    pub lineage: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct TraceLimits {
    pub t_min: f64,
    pub t_max: f64,
    pub step: f64,
    pub min_step: f64,
    pub max_points: usize,
    pub tol: f64,
    /// Stop once `sup |x|` exceeds this.
    pub x_bound: f64,
}

/// Natural-parameter continuation from `(x0, t0)` towards `t_max`, then
/// pseudo-arclength once the natural steps fail.
pub fn trace<C: Continuable + ?Sized>(c: &C, x0: Vec<f64>, t0: f64, limits: &TraceLimits) -> Trace {
    let mut states: Vec<(Vec<f64>, f64, Option<f64>)> = vec![(x0, t0, None)];
    let mut lineage = vec!["natural-parameter continuation".to_string()];
    let mut step = limits.step;
    let dir = if limits.step >= 0.0 { 1.0 } else { -1.0 };
    let inside = |t: f64| t >= limits.t_min - 1e-12 && t <= limits.t_max + 1e-12;
    let bounded = |x: &[f64]| sup(x) <= limits.x_bound;

    // natural phase
    loop {
        if states.len() >= limits.max_points {
            return Trace { states, truncated: false, lineage };
        }
        let (x, t, _) = states.last().expect("seeded").clone();
        let target = t + step;
        if !inside(target) {
            if (t - if dir > 0.0 { limits.t_max } else { limits.t_min }).abs() < 1e-12 {
                return Trace { states, truncated: false, lineage };
            }
            step = if dir > 0.0 { limits.t_max - t } else { limits.t_min - t };
            continue;
        }
        let pred: Vec<f64> = if states.len() >= 2 {
            let (xp, tp, _) = &states[states.len() - 2];
            let r = (target - t) / (t - tp);
            x.iter().zip(xp).map(|(a, b)| a + r * (a - b)).collect()
        } else {
            x.clone()
        };
        let out = root_at(c, target, &pred, limits.tol, 60).filter(|y| sup(&y.iter().zip(&pred).map(|(a, b)| a - b).collect::<Vec<_>>()) <= 0.25 * (1.0 + sup(&x)) && bounded(y));
        if let Some(y) = out {
            states.push((y, target, None));
            step *= 1.25;
            step = step.clamp(-limits.step.abs() * 4.0, limits.step.abs() * 4.0);
        } else {
            step *= 0.5;
            if step.abs() < limits.min_step {
                break;
            }
        }
    }

    // pseudo-arclength phase
    if states.len() < 2 {
        lineage.push("no natural step succeeded; arclength start from the seed".into());
    }
    lineage.push(format!("switched to pseudo-arclength near {:.6e}", states.last().expect("seeded").1));
    let (prev_dir, mut prev_t) = {
        let n = states.len();
        if n >= 2 {
            let (xa, ta, _) = &states[n - 2];
            let (xb, tb, _) = &states[n - 1];
            (xb.iter().zip(xa).map(|(a, b)| a - b).collect::<Vec<_>>(), tb - ta)
        } else {
            (vec![0.0; c.dim()], dir)
        }
    };
    let (x, t, _) = states.last().expect("seeded").clone();
    let Some(mut tau) = tangent(c, &x, t, (&prev_dir, prev_t)) else {
        lineage.push("singular tangent system".into());
        return Trace { states, truncated: true, lineage };
    };
    let w = c.weights();
    let ds_max = 4.0 * (limits.step.abs() + sup(&x) * 0.0).max(limits.min_step);
    let mut ds = {
        let n = states.len();
        if n >= 2 {
            let (xa, ta, _) = &states[n - 2];
            let d2: f64 = x.iter().zip(xa).zip(&w).map(|((a, b), ww)| ww * (a - b) * (a - b)).sum::<f64>() + (t - ta) * (t - ta);
            d2.sqrt().max(limits.min_step)
        } else {
            limits.step.abs()
        }
    };
    let ds_min = limits.min_step * 1e-2;
    if let Some(last) = states.last_mut() {
        last.2 = Some(tau.1);
    }
    prev_t = tau.1;
    let _ = prev_t;
    loop {
        if states.len() >= limits.max_points {
            return Trace { states, truncated: false, lineage };
        }
        let (x, t, _) = states.last().expect("seeded").clone();
        match arclength_step(c, &x, t, (&tau.0, tau.1), ds, limits.tol) {
            Some((xn, tn, its)) => {
                let Some(tn_tau) = tangent(c, &xn, tn, (&tau.0, tau.1)) else {
                    lineage.push("singular tangent system".into());
                    return Trace { states, truncated: true, lineage };
                };
                let leaving = !inside(tn) || !bounded(&xn);
                states.push((xn, tn, Some(tn_tau.1)));
                tau = tn_tau;
                if leaving {
                    return Trace { states, truncated: false, lineage };
                }
                if its <= 3 {
                    ds = (ds * 1.5).min(ds_max);
                }
            }
            None => {
                ds *= 0.5;
                if ds < ds_min {
                    lineage.push(format!("branch lost at {t:.6e}: arclength step below {ds_min:.3e}"));
                    return Trace { states, truncated: true, lineage };
                }
            }
        }
    }
}

/// Damped Newton on `G(·, t)` with merit `Σ G²`.
fn root_at<C: Continuable + ?Sized>(c: &C, t: f64, start: &[f64], tol: f64, max_iter: usize) -> Option<Vec<f64>> {
    let merit = |g: &[f64]| g.iter().map(|a| a * a).sum::<f64>();
    let mut x = start.to_vec();
    let mut g = c.residual(&x, t);
    let mut m = merit(&g);
    for _ in 0..max_iter {
        if res_norm(c, &g, &x) <= tol {
            return Some(x);
        }
        let neg: Vec<f64> = g.iter().map(|v| -v).collect();
        let d = c.jacobian(&x, t).solve_lu(&neg)?;
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let trial: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + step * b).collect();
            let gt = c.residual(&trial, t);
            let mt = merit(&gt);
            if mt.is_finite() && mt <= (1.0 - 1e-4 * step) * m {
                x = trial;
                g = gt;
                m = mt;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    (res_norm(c, &g, &x) <= tol).then_some(x)
}

/// Fold from a sign change of the parameter component of the tangent.
pub fn detect_fold(branch: &Branch) -> Option<Fold> {
    let pts = &branch.points;
    for i in 1..pts.len() {
        let (Some(a), Some(b)) = (pts[i - 1].dparam_ds, pts[i].dparam_ds) else { continue };
        if a * b < 0.0 {
            // quadratic through three neighbours in point index
            let lo = i.saturating_sub(1).min(pts.len().saturating_sub(3));
            let (y0, y1, y2) = (pts[lo].param, pts[lo + 1].param, pts[(lo + 2).min(pts.len() - 1)].param);
            let denom = y0 - 2.0 * y1 + y2;
            let est = if denom < 0.0 || denom > 0.0 {
                let s = 0.5 * (y0 - y2) / denom;
                if s.abs() <= 1.0 {
                    y1 - 0.25 * (y0 - y2) * s
                } else {
                    y1.max(y0).max(y2)
                }
            } else {
                y1
            };
            let hi = pts[i - 1].param.max(pts[i].param);
            let est = if b < 0.0 { est.max(hi) } else { est.min(pts[i - 1].param.min(pts[i].param)) };
            let window = (pts[i - 1].param.min(pts[i].param), pts[i - 1].param.max(pts[i].param));
            return Some(Fold { param: est, window, branch_estimate: est, index: i - 1 });
        }
    }
    None
}

fn negative(u: &Field) -> bool {
    let g = u.grid();
    let v = u.values();
    let n = g.n();
    let interior = g.free_nodes().all(|j| v[j] < 0.0);
    let inward = if g.is_radial() { v[n - 2] < v[n - 1] } else { v[1] < v[0] && v[n - 2] < v[n - 1] };
    interior && inward
}

fn make_branch(family: &Family, mut tr: Trace, store_every: usize) -> Branch {
    if family.parameter == Parameter::K {
        if let Some(i) = tr.states.iter().position(|s| s.1 < 0.0) {
            tr.states.truncate(i);
        }
    }
    let n = tr.states.len();
    let points = tr
        .states
        .into_iter()
        .enumerate()
        .map(|(i, (x, t, dt))| {
            let model = family.model_at(t);
            let f = model.functional();
            let u = family.to_original(&x);
            let keep = i % store_every.max(1) == 0 || i + 1 == n;
            BranchPoint {
                param: t,
                energy: f.energy(&x),
                min_value: u.min(),
                sup_norm: u.sup_norm(),
                residual: f.residual(&x),
                dparam_ds: dt,
                negative: negative(&u),
                fold_flag: false,
                solution: keep.then(|| u.clone()),
                state: Some(x),
            }
        })
        .collect();
    let mut b = Branch { parameter: family.parameter, points, fold: None, truncated: tr.truncated, lineage: tr.lineage };
    b.fold = detect_fold(&b);
    if let Some(f) = &b.fold {
        b.points[f.index].fold_flag = true;
    }
    b
}

/// Whether a solution is reached from `(x, t0)` at `t1` by short natural
/// continuation with step halving.
fn reachable(family: &Family, x: &[f64], t0: f64, t1: f64, tol: f64) -> Option<Vec<f64>> {
    let mut cur = x.to_vec();
    let mut t = t0;
    let mut step = t1 - t0;
    let min = (t1 - t0).abs() / 256.0;
    while (t1 - t).abs() > 1e-15 * (1.0 + t1.abs()) {
        let target = if (t + step - t1) * step.signum() > 0.0 { t1 } else { t + step };
        let out = root_at(family, target, &cur, tol, 80).filter(|y| sup(&y.iter().zip(&cur).map(|(a, b)| a - b).collect::<Vec<_>>()) <= 0.25 * (1.0 + sup(&cur)));
        if let Some(y) = out {
            cur = y;
            t = target;
        } else {
            step *= 0.5;
            if step.abs() < min {
                return None;
            }
        }
    }
    Some(cur)
}

/// Solvability bisection between the last branch point before a fold and a
/// parameter beyond the branch maximum, to a window of width `width`.
fn refine_fold(family: &Family, branch: &Branch, fold: &Fold, width: f64, tol: f64) -> Fold {
    let upward = branch.points[fold.index].dparam_ds.unwrap_or(1.0) > 0.0;
    let sign = if upward { 1.0 } else { -1.0 };
    // extremal point on the branch before the turn
    let (mut lo, mut state) = {
        let p = branch.points[..=fold.index + 1].iter().filter(|p| p.state.is_some()).max_by(|a, b| (sign * a.param).total_cmp(&(sign * b.param))).expect("points before the fold");
        (p.param, p.state.clone().expect("filtered"))
    };
    let mut gap = width.max((fold.branch_estimate - lo).abs() * 2.0);
    let mut hi = lo + sign * gap;
    for _ in 0..20 {
        match reachable(family, &state, lo, hi, tol) {
            Some(x) => {
                lo = hi;
                state = x;
                gap *= 2.0;
                hi = lo + sign * gap;
            }
            None => break,
        }
    }
    while (hi - lo).abs() > width {
        let mid = 0.5 * (lo + hi);
        match reachable(family, &state, lo, mid, tol) {
            Some(x) => {
                lo = mid;
                state = x;
            }
            None => hi = mid,
        }
    }
    Fold { param: 0.5 * (lo + hi), window: (lo.min(hi), lo.max(hi)), branch_estimate: fold.branch_estimate, index: fold.index }
}

/// Default `λ` step: one hundredth of the first eigenvalue.
pub fn default_lambda_step(spec: &ProblemSpec) -> Result<f64> {
    let g = gamma1(&spec.c, spec.p, &SpectraOptions { restarts: 1, ..Default::default() })?;
    Ok(g.value.as_f64() / 100.0)
}

fn seed(family: &Family, t0: f64, tol: f64) -> Result<Vec<f64>> {
    let spec = family.spec_at(t0);
    let model = family.model_at(t0);
    let n = spec.grid().n();
    let f = model.functional();
    let opts = NewtonOptions { tol, max_iter: 800, blowup: 1e3 * spec.forcing_field().sup_norm().max(1.0) };
    let trivial = (0..n).all(|j| spec.forcing(j) == 0.0);
    if trivial {
        return Ok(vec![0.0; n]);
    }
    if spec.lambda <= 0.0 {
        let out = minimize(&f, &vec![0.0; n], None, &opts);
        if out.status == Status::Converged {
            return Ok(out.values);
        }
        return Err(Error::NoConvergence(format!("no seed solution at {t0}: {:?}", out.status)));
    }
    let reps = solve_Plambda(&spec, &SolveOptions { tol, ..Default::default() })?;
    reps.into_iter().find(|r| r.converged()).map(|r| r.transformed.into_values()).ok_or_else(|| Error::NoConvergence(format!("no seed solution at {t0}")))
}

fn trace_family(family: &Family, x0: Vec<f64>, range: (f64, f64), step: f64, opts: &ContinuationOptions) -> Branch {
    let a = family.rate();
    let limits = TraceLimits {
        t_min: range.0.min(range.1),
        t_max: range.0.max(range.1),
        step,
        min_step: step.abs() * opts.min_step_ratio,
        max_points: opts.max_points,
        tol: opts.tol,
        x_bound: ((a * opts.sup_bound).exp() - 1.0) / a,
    };
    let tr = trace(family, x0, range.0, &limits);
    let mut branch = make_branch(family, tr, opts.store_every);
    if let Some(f) = branch.fold.clone() {
        let width = opts.window.unwrap_or(step.abs() / 10.0);
        let refined = refine_fold(family, &branch, &f, width, opts.tol);
        branch.lineage.push(format!("fold refined by solvability bisection to [{:.6e}, {:.6e}]", refined.window.0, refined.window.1));
        branch.fold = Some(refined);
    }
    for (i, p) in branch.points.iter_mut().enumerate() {
        if i % opts.store_every.max(1) != 0 && !p.fold_flag {
            p.state = None;
        }
    }
    branch
}

/// Branch of solutions for `λ` from `lambda_range.0` towards `lambda_range.1`.
pub fn trace_lambda(spec: &ProblemSpec, lambda_range: (f64, f64), step: f64, opts: &ContinuationOptions) -> Result<Branch> {
    if !(step.is_finite() && step != 0.0) || (lambda_range.1 - lambda_range.0) * step < 0.0 {
        return Err(Error::InvalidParameter("step must be nonzero and point into the range".into()));
    }
    let family = Family::new(spec, Parameter::Lambda, lambda_range.0, lambda_range.1)?;
    let x0 = seed(&family, lambda_range.0, opts.tol)?;
    let branch = trace_family(&family, x0, lambda_range, step, opts);
    info!("lambda branch: {} points, fold {:?}", branch.points.len(), branch.fold.as_ref().map(|f| f.window));
    Ok(branch)
}

/// Branch of solutions in the datum scaling `k` at fixed `λ`, starting from `k_range.0`.
pub fn trace_k(spec: &ProblemSpec, k_range: (f64, f64), step: f64, opts: &ContinuationOptions) -> Result<Branch> {
    if !(step.is_finite() && step != 0.0) || (k_range.1 - k_range.0) * step < 0.0 {
        return Err(Error::InvalidParameter("step must be nonzero and point into the range".into()));
    }
    let family = Family::new(spec, Parameter::K, k_range.0, k_range.1)?;
    let x0 = seed(&family, k_range.0, opts.tol)?;
    Ok(trace_family(&family, x0, k_range, step, opts))
}

/// Empirical nonexistence: every pipeline fails at each of the given resolutions.
pub fn nonexistence_evidence(spec_at: impl Fn(usize) -> Result<ProblemSpec> + Sync, resolutions: &[usize], opts: &SolveOptions) -> Result<bool> {
    for &n in resolutions {
        let spec = spec_at(n)?;
        let reps = solve_Plambda(&spec, opts)?;
        if reps.iter().any(|r| r.accepted()) {
            debug!("solution found at n = {n}");
            return Ok(false);
        }
    }
    Ok(true)
}

/// The three resolutions used for nonexistence evidence.
pub fn refinements(n: usize) -> [usize; 3] {
    [n, 2 * n - 1, 4 * n - 3]
}

#[derive(Debug, Clone, Serialize)]
pub struct RegionColumn {
    pub lambda: f64,
    /// Upper existence bound for `λ < γ₁`.
    pub kbar: Option<f64>,
    /// Bound of the negative-solution region for `λ > γ₁`.
    pub ktilde1: Option<f64>,
    /// Upper existence bound for `λ > γ₁`.
    pub ktilde2: Option<f64>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RegionDiagram {
    pub columns: Vec<RegionColumn>,
    pub gamma1: f64,
    pub k0: f64,
}

impl RegionDiagram {
    pub fn lambda_samples(&self) -> Vec<f64> {
        self.columns.iter().map(|c| c.lambda).collect()
    }

    /// `lambda,kbar,ktilde1,ktilde2` with empty cells where undefined.
    pub fn to_csv(&self) -> String {
        let cell = |v: Option<f64>| v.map(|x| format!("{x:.16e}")).unwrap_or_default();
        let mut out = String::from("lambda,kbar,ktilde1,ktilde2\n");
        for c in &self.columns {
            let _ = writeln!(out, "{:.16e},{},{},{}", c.lambda, cell(c.kbar), cell(c.ktilde1), cell(c.ktilde2));
        }
        out
    }

    /// `(k̄ non-increasing, k̃₁ non-decreasing, k̄ < k₀)` over the resolved cells.
    pub fn monotonicity(&self) -> (bool, bool, bool) {
        let kbar: Vec<f64> = self.columns.iter().filter(|c| c.lambda < self.gamma1).filter_map(|c| c.kbar).collect();
        let kt1: Vec<f64> = self.columns.iter().filter(|c| c.lambda > self.gamma1).filter_map(|c| c.ktilde1).collect();
        let slack = 1e-9;
        (kbar.windows(2).all(|w| w[1] <= w[0] + slack * (1.0 + w[0])), kt1.windows(2).all(|w| w[1] >= w[0] - slack * (1.0 + w[0])), kbar.iter().all(|&k| k < self.k0))
    }
}

#[derive(Debug, Clone)]
pub struct RegionOptions {
    pub continuation: ContinuationOptions,
    /// Bisection width relative to `k₀`.
    pub rel_window: f64,
    /// Initial `k` step relative to `k₀`.
    pub rel_step: f64,
}

impl Default for RegionOptions {
    fn default() -> Self {
        Self { continuation: ContinuationOptions::default(), rel_window: 1e-3, rel_step: 0.02 }
    }
}

/// Negative solution at `k = 0` for `λ > γ₁`: minimizer in `[u̲, 0]`.
fn negative_seed(family: &Family, lambda: f64, tol: f64) -> Option<Vec<f64>> {
    let spec = family.spec_at(0.0);
    let model = family.model_at(0.0);
    let pair = OrderedPair::new(family.trunc.underline_u.clone(), Field::zeros(spec.grid())).ok()?;
    let a = family.rate();
    let lo: Vec<f64> = pair.lower.values().iter().map(|&u| crate::nonlinearity::to_transformed(u, a)).collect();
    let hi = vec![0.0; lo.len()];
    // start from the scaled eigen-direction: 0 itself is a critical point
    let bump: Vec<f64> = spec.grid().nodes().iter().enumerate().map(|(j, _)| if spec.grid().is_fixed(j) { 0.0 } else { 0.5 * lo[j] }).collect();
    let f = model.functional();
    let out = minimize(&f, &bump, Some((&lo, &hi)), &NewtonOptions { tol, max_iter: 1000, ..Default::default() });
    let u = family.to_original(&out.values);
    debug!("negative seed at lambda = {lambda}: {:?}, min {:.4e}", out.status, u.min());
    (out.status == Status::Converged && negative(&u)).then_some(out.values)
}

fn column(spec: &ProblemSpec, lambda: f64, g1: f64, k0v: f64, opts: &RegionOptions) -> RegionColumn {
    let base = spec.with_lambda(lambda);
    let k_max = 2.0 * k0v;
    let step = opts.rel_step * k0v;
    let copts = ContinuationOptions { window: Some(opts.rel_window * k0v), ..opts.continuation.clone() };
    let mut col = RegionColumn { lambda, kbar: None, ktilde1: None, ktilde2: None, note: None };
    let family = match Family::new(&base, Parameter::K, 0.0, k_max) {
        Ok(f) => f,
        Err(e) => {
            col.note = Some(format!("no floor: {e}"));
            return col;
        }
    };
    if lambda < g1 {
        let branch = trace_family(&family, vec![0.0; spec.grid().n()], (0.0, k_max), step, &copts);
        match &branch.fold {
            Some(f) => col.kbar = Some(f.window.0),
            None => col.note = Some("no fold in k found".into()),
        }
    } else if lambda > g1 {
        let Some(x0) = negative_seed(&family, lambda, copts.tol) else {
            col.note = Some("no negative solution at k = 0".into());
            return col;
        };
        let branch = trace_family(&family, x0, (0.0, k_max), step, &copts);
        let fold_k = branch.fold.as_ref().map(|f| f.window.0);
        let upto = branch.fold.as_ref().map(|f| f.index + 1).unwrap_or(branch.points.len());
        // last negative point before the fold
        let pts = &branch.points[..upto];
        let last_neg = pts.iter().rposition(|p| p.negative);
        col.ktilde2 = fold_k;
        col.ktilde1 = match last_neg {
            Some(i) if i + 1 == pts.len() => fold_k.or(Some(pts[i].param)),
            Some(i) => {
                // bisection on the sign property between points i and i + 1
                let (mut lo, mut hi) = (pts[i].param, pts[i + 1].param);
                let mut state = pts[i].state.clone();
                if state.is_none() {
                    state = branch.points[..=i].iter().rev().find_map(|p| p.state.clone().map(|s| (s, p.param))).and_then(|(s, k)| reachable(&family, &s, k, lo, copts.tol));
                }
                if let Some(mut st) = state {
                    while hi - lo > copts.window.unwrap_or(1e-3) {
                        let mid = 0.5 * (lo + hi);
                        match reachable(&family, &st, lo, mid, copts.tol) {
                            Some(x) if negative(&family.to_original(&x)) => {
                                lo = mid;
                                st = x;
                            }
                            _ => hi = mid,
                        }
                    }
                }
                Some(lo)
            }
            None => None,
        };
        if fold_k.is_none() {
            col.note = Some("no fold in k found".into());
        }
    }
    col
}

/// Existence regions in the `(λ, k)` plane for a datum `h ⪈ 0`: per column
/// a continuation in `k` from `k = 0` and solvability bisection at its fold.
pub fn region_diagram(spec: &ProblemSpec, lambda_samples: &[f64], opts: &RegionOptions) -> Result<RegionDiagram> {
    if spec.h.min() < 0.0 || spec.h.max() <= 0.0 {
        return Err(Error::InvalidField("the region diagram needs a nonnegative, nonzero datum".into()));
    }
    let sopts = SpectraOptions::default();
    let g1 = gamma1(&spec.c, spec.p, &sopts)?.value.as_f64();
    let k0v = k0(&spec.h, spec.p, spec.mu, &sopts)?.value.as_f64();
    if !k0v.is_finite() {
        return Err(Error::InvalidParameter("k0 is infinite for this datum".into()));
    }
    let columns = crate::parallel::map(lambda_samples.to_vec(), |lambda| column(spec, lambda, g1, k0v, opts));
    Ok(RegionDiagram { columns, gamma1: g1, k0: k0v })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Domain, Grid};
    use std::sync::Arc;

    /// `G(x, t) = x² − t` on one free entry.
    struct Toy;
    impl Continuable for Toy {
        fn dim(&self) -> usize {
            1
        }
        fn residual(&self, x: &[f64], t: f64) -> Vec<f64> {
            vec![x[0] * x[0] - t]
        }
        fn jacobian(&self, x: &[f64], _: f64) -> SymTridiag {
            SymTridiag { diag: vec![2.0 * x[0]], off: vec![] }
        }
        fn d_param(&self, _: &[f64], _: f64) -> Vec<f64> {
            vec![-1.0]
        }
        fn weights(&self) -> Vec<f64> {
            vec![1.0]
        }
    }

    #[test]
    fn toy_fold_at_zero() {
        let limits = TraceLimits { t_min: -1.0, t_max: 1.0, step: -0.05, min_step: 1e-3, max_points: 200, tol: 1e-12, x_bound: 10.0 };
        let tr = trace(&Toy, vec![-1.0], 1.0, &limits);
        let points: Vec<BranchPoint> = tr
            .states
            .iter()
            .map(|(x, t, d)| BranchPoint {
                param: *t,
                energy: 0.0,
                min_value: x[0],
                sup_norm: x[0].abs(),
                residual: 0.0,
                dparam_ds: d.map(|v| -v),
                negative: false,
                fold_flag: false,
                state: Some(x.clone()),
                solution: None,
            })
            .collect();
        assert!(points.iter().any(|p| p.min_value > 0.5), "branch did not pass the fold");
        let branch = Branch { parameter: Parameter::Lambda, points, fold: None, truncated: tr.truncated, lineage: vec![] };
        let fold = detect_fold(&branch).expect("fold");
        assert!(fold.branch_estimate.abs() < 1e-2, "{fold:?}");
        assert!(fold.window.0 <= 1e-2);
    }

    fn spec(n: usize, h: f64) -> ProblemSpec {
        let g = Arc::new(Grid::new(Domain::Interval { a: 0.0, b: 1.0 }, n).unwrap());
        ProblemSpec::new(2.0, 1.0, 0.0, Field::constant(&g, 1.0), Field::constant(&g, h)).unwrap()
    }

    #[test]
    fn zero_datum_gives_trivial_branch() {
        let b = trace_lambda(&spec(33, 0.0), (0.0, 15.0), 0.5, &ContinuationOptions::default()).unwrap();
        assert!(b.points.last().unwrap().param >= 15.0 - 1e-9);
        assert!(b.points.iter().all(|p| p.sup_norm < 1e-12));
    }

    #[test]
    fn negative_datum_branch_is_monotone() {
        let b = trace_lambda(&spec(65, -1.0), (0.0, 12.0), 0.1, &ContinuationOptions::default()).unwrap();
        assert!(b.fold.is_none());
        assert!(b.points.last().unwrap().param >= 12.0 - 1e-9);
        assert!(b.points.iter().skip(1).all(|p| p.min_value < 0.0));
    }

    #[test]
    fn positive_datum_branch_folds_below_first_eigenvalue() {
        let s = spec(65, 1.0).with_k(1.0);
        let opts = ContinuationOptions { window: Some(1e-3 * 9.87), ..Default::default() };
        let b = trace_lambda(&s, (0.0, 12.0), 0.1, &opts).unwrap();
        let f = b.fold.clone().expect("fold");
        assert!(f.window.1 - f.window.0 <= 1e-3 * 9.87 + 1e-12);
        assert!(f.param > 0.0 && f.param < 9.87);
        // the branch maximum lies close to the solvability window
        let top = b.max_param().unwrap();
        assert!(top <= f.window.1 + 1e-6 && f.window.0 - top < 0.05, "{top} {f:?}");
    }
}
