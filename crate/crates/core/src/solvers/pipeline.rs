//! End-to-end solution pipelines: box minimization between ordered lower and
//! upper solutions, unconstrained local minimization, mountain pass, and the
//! orchestration that returns every solution found at one parameter value.

use log::{debug, info};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::Field;
use crate::nonlinearity::{from_transformed, to_transformed};
use crate::operators::{p_laplacian, residual_P, EnergyModel};
use crate::problem::{ProblemSpec, TruncationData};
use crate::solvers::lower::build_lower_solution;
use crate::solvers::mountain::{pass, PathOptions};
use crate::solvers::newton::{minimize, NewtonOptions, Outcome, Status};

/// Divergence is only evidence that no solution exists.
pub const DIVERGENCE_CAVEAT: &str = "divergence is evidence of nonexistence, not a proof";

#[derive(Debug, Clone)]
pub struct SolveOptions {
    /// Tolerance on the sup of the strong-form residual of the transformed problem.
    pub tol: f64,
    pub max_iter: usize,
    pub path: PathOptions,
    /// Initial number of steps of the `λ`-homotopy.
    pub homotopy_steps: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { tol: 1e-9, max_iter: 800, path: PathOptions::default(), homotopy_steps: 20 }
    }
}

impl SolveOptions {
    fn newton(&self, blowup: f64) -> NewtonOptions {
        NewtonOptions { tol: self.tol, max_iter: self.max_iter, blowup }
    }
}

/// Ordered pair `lower ≤ upper` of lower and upper solutions.
#[derive(Debug, Clone)]
pub struct OrderedPair {
    pub lower: Field,
    pub upper: Field,
}

impl OrderedPair {
    pub fn new(lower: Field, upper: Field) -> Result<Self> {
        if lower.grid().n() != upper.grid().n() {
            return Err(Error::InvalidField("pair lives on different grids".into()));
        }
        if let Some(j) = (0..lower.grid().n()).find(|&j| lower.values()[j] > upper.values()[j]) {
            return Err(Error::Infeasible(format!("pair is not ordered at node {j}")));
        }
        Ok(Self { lower, upper })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveReport {
    pub status: Status,
    /// Solution of the original problem.
    #[serde(skip)]
    pub solution: Field,
    /// The same solution in transformed variables.
    #[serde(skip)]
    pub transformed: Field,
    pub lambda: f64,
    pub k: f64,
    pub energy: f64,
    /// Sup of the strong-form residual of the transformed problem.
    pub grad_norm: f64,
    /// Sup of the strong-form residual of the original problem.
    pub residual_p: f64,
    /// Mesh-scaled tolerance the original residual is compared with.
    pub residual_p_tol: f64,
    pub min_value: f64,
    pub sup_norm: f64,
    /// Whether the regularized Hessian is positive definite at the solution.
    pub local_min: bool,
    /// Whether the solution stays above the floor `u̲` (to 1e−8 in transformed variables).
    pub above_floor: bool,
    pub iterations: usize,
    pub lineage: Vec<String>,
}

impl SolveReport {
    pub fn converged(&self) -> bool {
        self.status == Status::Converged
    }

    /// Converged and the original residual is within its mesh tolerance.
    pub fn accepted(&self) -> bool {
        self.converged() && self.residual_p <= self.residual_p_tol && self.above_floor
    }
}

/// Scale of the terms of the original equation at `u`, used to turn the
/// first-order consistency of the strong residual into a tolerance.
pub(crate) fn residual_tolerance(u: &Field, spec: &ProblemSpec) -> f64 {
    let grid = u.grid();
    let v = u.values();
    let lap = p_laplacian(grid, v, spec.p);
    let mut scale = 1.0f64;
    for j in grid.free_nodes() {
        let xi = grid.nodal_gradient(v, j);
        let terms = [lap[j].abs(), (spec.lambda * spec.c.values()[j]).abs() * v[j].abs().powf(spec.p - 1.0), spec.mu * xi.abs().powf(spec.p), spec.forcing(j).abs()];
        scale = scale.max(terms.into_iter().fold(0.0, f64::max));
    }
    10.0 * grid.spacing() * scale
}

pub(crate) fn make_report(model: &EnergyModel, out: Outcome, mut lineage: Vec<String>) -> SolveReport {
    let grid = model.grid();
    let a = model.reaction().kernel().rate();
    let f = model.functional();
    let v = out.values;
    let u: Vec<f64> = v.iter().map(|&x| if 1.0 + a * x > 0.0 { from_transformed(x, a) } else { f64::NEG_INFINITY }).collect();
    let solution = Field::from_raw(grid, u);
    let transformed = Field::from_raw(grid, v.clone());
    let finite = solution.values().iter().all(|x| x.is_finite());
    let (residual_p, residual_p_tol) = if finite { (residual_P(&solution, &model.spec).sup_norm(), residual_tolerance(&solution, &model.spec)) } else { (f64::INFINITY, 0.0) };
    let local_min = finite && f.hessian(&v).ldlt().is_some();
    let above_floor = v.iter().zip(model.trunc.alpha_lambda.values()).all(|(x, al)| *x >= al - 1e-8);
    if out.status == Status::Diverged {
        lineage.push(DIVERGENCE_CAVEAT.into());
    }
    SolveReport {
        status: out.status,
        lambda: model.spec.lambda,
        k: model.spec.k,
        energy: out.energy,
        grad_norm: f.residual(&v),
        residual_p,
        residual_p_tol,
        min_value: solution.min(),
        sup_norm: solution.sup_norm(),
        solution,
        transformed,
        local_min,
        above_floor,
        iterations: out.iterations,
        lineage,
    }
}

fn blowup_radius(spec: &ProblemSpec) -> f64 {
    1e3 * spec.forcing_field().sup_norm().max(1.0)
}

fn transformed_values(u: &Field, a: f64) -> Result<Vec<f64>> {
    if u.values().iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidField("field has non-finite values".into()));
    }
    Ok(u.values().iter().map(|&x| to_transformed(x, a)).collect())
}

/// Minimizes the transformed energy over the box `[α, β]` built from an
/// ordered pair of lower and upper solutions.
pub fn solve_between(spec: &ProblemSpec, pair: &OrderedPair, opts: &SolveOptions) -> Result<SolveReport> {
    spec.validate()?;
    let pair = OrderedPair::new(pair.lower.clone(), pair.upper.clone())?;
    let trunc = TruncationData::from_lower(pair.lower.map(|x| x.min(0.0)), spec.p, spec.mu)?;
    let model = EnergyModel::new(spec.clone(), trunc)?;
    solve_between_model(&model, &pair, opts, vec!["box minimization between an ordered pair".into()])
}

pub(crate) fn solve_between_model(model: &EnergyModel, pair: &OrderedPair, opts: &SolveOptions, mut lineage: Vec<String>) -> Result<SolveReport> {
    let a = model.reaction().kernel().rate();
    let lo = transformed_values(&pair.lower, a)?;
    let hi = transformed_values(&pair.upper, a)?;
    let tol_lo = residual_tolerance(&pair.lower, &model.spec);
    let tol_hi = residual_tolerance(&pair.upper, &model.spec);
    let lower_ok = residual_P(&pair.lower, &model.spec).max() <= tol_lo;
    let upper_ok = residual_P(&pair.upper, &model.spec).min() >= -tol_hi;
    if !(lower_ok && upper_ok) {
        lineage.push(format!("pair not verified by residual signs (lower {lower_ok}, upper {upper_ok})"));
    }
    let start: Vec<f64> = lo.iter().zip(&hi).map(|(l, h)| 0.0f64.clamp(*l, *h)).collect();
    let f = model.functional();
    let out = minimize(&f, &start, Some((&lo, &hi)), &opts.newton(f64::INFINITY));
    Ok(make_report(model, out, lineage))
}

/// Damped Newton descent on the unconstrained transformed energy from `start`
/// (given in original variables).
pub fn find_local_min(spec: &ProblemSpec, start: &Field, opts: &SolveOptions) -> Result<SolveReport> {
    let trunc = build_lower_solution(spec)?;
    let model = EnergyModel::new(spec.clone(), trunc)?;
    let a = model.reaction().kernel().rate();
    let v0 = transformed_values(start, a)?;
    Ok(local_min_model(&model, &v0, opts, vec!["unconstrained local minimization".into()]))
}

pub(crate) fn local_min_model(model: &EnergyModel, start: &[f64], opts: &SolveOptions, lineage: Vec<String>) -> SolveReport {
    let f = model.functional();
    let out = minimize(&f, start, None, &opts.newton(blowup_radius(&model.spec)));
    make_report(model, out, lineage)
}

/// Critical point at the mountain-pass level between `e1` and `e2` (given in
/// original variables).
pub fn mountain_pass(spec: &ProblemSpec, e1: &Field, e2: &Field, opts: &SolveOptions) -> Result<SolveReport> {
    let trunc = build_lower_solution(spec)?;
    let model = EnergyModel::new(spec.clone(), trunc)?;
    let a = model.reaction().kernel().rate();
    let v1 = transformed_values(e1, a)?;
    let v2 = transformed_values(e2, a)?;
    Ok(mountain_pass_model(&model, &v1, &v2, opts, vec!["mountain pass".into()]))
}

pub(crate) fn mountain_pass_model(model: &EnergyModel, v1: &[f64], v2: &[f64], opts: &SolveOptions, mut lineage: Vec<String>) -> SolveReport {
    let f = model.functional();
    let (i1, i2) = (f.energy(v1), f.energy(v2));
    let path = PathOptions { tol: opts.tol, ..opts.path.clone() };
    let out = pass(&f, v1, v2, &path);
    lineage.push(format!("path of {} images settled after {} sweeps at level {:.8e}", path.images, out.sweeps, out.path_level));
    let mut saddle = out.saddle;
    let scale = 1.0 + crate::linalg::sup(v1);
    let dist = saddle.values.iter().zip(v1).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    if saddle.status == Status::Converged {
        if dist <= 1e-6 * scale {
            lineage.push("polish fell back onto the first endpoint".into());
            saddle.status = Status::Diverged;
        } else if saddle.energy <= i1.max(i2) {
            lineage.push("critical point below the endpoint levels".into());
            saddle.status = Status::Diverged;
        }
    } else {
        lineage.push("saddle polish did not converge".into());
    }
    make_report(model, saddle, lineage)
}

/// Nonnegative direction `c · bump` used for the ray descent.
fn ray_direction(spec: &ProblemSpec) -> Vec<f64> {
    let grid = spec.grid();
    let nodes = grid.nodes();
    let (lo, hi) = (nodes[0], nodes[grid.n() - 1]);
    let w: Vec<f64> = (0..grid.n())
        .map(|j| {
            let x = nodes[j];
            let bump = if grid.is_radial() { hi * hi - x * x } else { (x - lo) * (hi - x) };
            if grid.is_fixed(j) {
                0.0
            } else {
                spec.c.values()[j].max(0.0) * bump
            }
        })
        .collect();
    let top = crate::linalg::sup(&w).max(1e-300);
    w.into_iter().map(|x| x / top).collect()
}

/// Point `v1 + t w` with energy below `I(v1)`: doubling in `t`, then
/// bisection to the first crossing so that the pass lies well inside the path.
fn ray_endpoint(model: &EnergyModel, v1: &[f64]) -> Option<Vec<f64>> {
    let f = model.functional();
    let w = ray_direction(&model.spec);
    let base = f.energy(v1);
    let margin = 1e-6 * (1.0 + base.abs());
    let at = |t: f64| -> Vec<f64> { v1.iter().zip(&w).map(|(a, b)| a + t * b).collect() };
    let below = |t: f64| {
        let e = f.energy(&at(t));
        e.is_finite() && e < base - margin
    };
    let mut lo = 0.0;
    let mut hi = 1.0;
    let mut found = false;
    for _ in 0..80 {
        if below(hi) {
            found = true;
            break;
        }
        lo = hi;
        hi *= 2.0;
    }
    if !found {
        return None;
    }
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if below(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Some(at(hi))
}

/// First solution for `λ > 0` by continuation from `λ = 0` through local
/// minima, with step halving.
fn homotopy(model: &EnergyModel, opts: &SolveOptions) -> Result<SolveReport> {
    let target = model.spec.lambda;
    let trunc = model.trunc.clone();
    let at = |lam: f64| EnergyModel::new(model.spec.with_lambda(lam), trunc.clone());
    let m0 = at(0.0)?;
    let zero = vec![0.0; model.grid().n()];
    let first = local_min_model(&m0, &zero, opts, vec![]);
    let mut lineage = vec![format!("lambda-homotopy from 0 to {target}")];
    if !first.converged() {
        lineage.push(format!("no solution at lambda = 0 ({:?})", first.status));
        return Ok(SolveReport { lineage, ..first });
    }
    let mut v = first.transformed.values().to_vec();
    let mut lam = 0.0;
    let mut dl = target / opts.homotopy_steps.max(1) as f64;
    let min_step = target / (opts.homotopy_steps.max(1) as f64 * 128.0);
    let mut steps = 0;
    while lam < target {
        let next = (lam + dl).min(target);
        let m = at(next)?;
        let f = m.functional();
        let out = minimize(&f, &v, None, &opts.newton(blowup_radius(&m.spec)));
        let ok = out.status == Status::Converged && f.hessian(&out.values).ldlt().is_some();
        if ok {
            v = out.values;
            lam = next;
            steps += 1;
            dl *= 1.5;
        } else {
            dl *= 0.5;
            if dl < min_step {
                lineage.push(format!("branch of local minima lost near lambda = {lam:.6e} after {steps} steps"));
                let mut rep = make_report(
                    model,
                    Outcome { values: v.clone(), status: Status::MaxIter, energy: model.functional().energy(&v), residual: f64::INFINITY, iterations: steps },
                    lineage,
                );
                rep.status = Status::MaxIter;
                return Ok(rep);
            }
        }
    }
    let out = minimize(&model.functional(), &v, None, &opts.newton(blowup_radius(&model.spec)));
    lineage.push(format!("{steps} continuation steps"));
    Ok(make_report(model, out, lineage))
}

fn sort_reports(reports: &mut [SolveReport]) {
    reports.sort_by(|a, b| a.status.cmp(&b.status).then(a.energy.total_cmp(&b.energy)));
}

/// All solutions the pipelines find at the parameters of `spec`: one for
/// `λ ≤ 0`, a local minimum and a mountain-pass point for `λ > 0`.
#[allow(non_snake_case)]
pub fn solve_Plambda(spec: &ProblemSpec, opts: &SolveOptions) -> Result<Vec<SolveReport>> {
    spec.validate()?;
    let trunc = build_lower_solution(spec).map_err(|e| match e {
        Error::Infeasible(m) => Error::Infeasible(format!("lower solution: {m}")),
        Error::NoConvergence(m) => Error::NoConvergence(format!("lower solution: {m}")),
        other => other,
    })?;
    let model = EnergyModel::new(spec.clone(), trunc)?;
    let n = model.grid().n();
    if spec.lambda <= 0.0 {
        let rep = local_min_model(&model, &vec![0.0; n], opts, vec!["uniqueness mode: local minimization from 0".into()]);
        info!("lambda = {} (uniqueness mode): {:?}", spec.lambda, rep.status);
        return Ok(vec![rep]);
    }

    let datum_nonpositive = (0..n).all(|j| spec.forcing(j) <= 0.0);
    let mut first = if datum_nonpositive {
        let pair = OrderedPair::new(model.trunc.underline_u.clone(), Field::zeros(model.grid()))?;
        solve_between_model(&model, &pair, opts, vec!["box minimization in [u_lower, 0]".into()])?
    } else {
        homotopy(&model, opts)?
    };
    if !first.converged() {
        debug!("first pipeline failed ({:?}); trying local minimization from 0", first.status);
        let fallback = local_min_model(&model, &vec![0.0; n], opts, vec!["local minimization from 0 after pipeline failure".into()]);
        if fallback.converged() {
            first = fallback;
        } else {
            first.lineage.push(format!("fallback local minimization: {:?}", fallback.status));
            return Ok(vec![first]);
        }
    }

    let v1 = first.transformed.values().to_vec();
    let second = match ray_endpoint(&model, &v1) {
        Some(e2) => {
            let mut lineage = first.lineage.clone();
            lineage.push("mountain pass from the first solution along a ray".into());
            mountain_pass_model(&model, &v1, &e2, opts, lineage)
        }
        None => {
            let mut rep = first.clone();
            rep.status = Status::Diverged;
            rep.lineage.push("ray descent found no lower endpoint".into());
            rep
        }
    };
    info!("lambda = {}: first {:?}, second {:?}", spec.lambda, first.status, second.status);
    let mut out = vec![first, second];
    sort_reports(&mut out);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Domain, Grid};
    use approx::assert_relative_eq;
    use std::sync::Arc;

    fn spec(n: usize, p: f64, lambda: f64, h: f64) -> ProblemSpec {
        let g = Arc::new(Grid::new(Domain::Interval { a: 0.0, b: 1.0 }, n).unwrap());
        ProblemSpec::new(p, 1.0, lambda, Field::constant(&g, 1.0), Field::constant(&g, h)).unwrap()
    }

    #[test]
    fn zero_datum_at_zero_lambda_gives_zero() {
        let s = spec(33, 2.0, 0.0, 0.0);
        let r = find_local_min(&s, &Field::zeros(s.grid()), &SolveOptions::default()).unwrap();
        assert!(r.converged());
        assert!(r.solution.sup_norm() < 1e-12);
    }

    #[test]
    fn box_solution_matches_unconstrained_newton() {
        let s = spec(65, 2.0, 0.0, -1.0);
        let t = build_lower_solution(&s).unwrap();
        let pair = OrderedPair::new(t.underline_u.clone(), Field::zeros(s.grid())).unwrap();
        let boxed = solve_between(&s, &pair, &SolveOptions::default()).unwrap();
        let free = find_local_min(&s, &Field::zeros(s.grid()), &SolveOptions::default()).unwrap();
        assert!(boxed.converged() && free.converged());
        assert!(boxed.solution.sup_distance(&free.solution) < 1e-8);
        assert!(boxed.solution.values()[1..64].iter().all(|&x| x < 0.0));
    }

    #[test]
    fn degenerate_box_returns_the_solution() {
        let s = spec(33, 2.0, 0.0, -1.0);
        let sol = find_local_min(&s, &Field::zeros(s.grid()), &SolveOptions::default()).unwrap().solution;
        let pair = OrderedPair::new(sol.clone(), sol.clone()).unwrap();
        let r = solve_between(&s, &pair, &SolveOptions::default()).unwrap();
        assert!(r.converged());
        assert_relative_eq!(r.solution.sup_distance(&sol), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn unordered_pair_is_infeasible() {
        let g = Arc::new(Grid::new(Domain::Interval { a: 0.0, b: 1.0 }, 9).unwrap());
        let e = OrderedPair::new(Field::constant(&g, 1.0), Field::constant(&g, 0.0)).unwrap_err();
        assert!(matches!(e, Error::Infeasible(_)));
    }

    #[test]
    fn large_lambda_positive_datum_diverges() {
        let s = spec(65, 2.0, 40.0, 1.0);
        let r = find_local_min(&s, &Field::zeros(s.grid()), &SolveOptions::default()).unwrap();
        assert_ne!(r.status, Status::Converged);
    }

    #[test]
    fn two_solutions_for_negative_datum() {
        let s = spec(129, 2.0, 4.93, -1.0);
        let reps = solve_Plambda(&s, &SolveOptions::default()).unwrap();
        assert_eq!(reps.len(), 2);
        assert!(reps.iter().all(|r| r.converged()), "{:?}", reps.iter().map(|r| (&r.status, &r.lineage)).collect::<Vec<_>>());
        let (a, b) = (&reps[0], &reps[1]);
        assert!(a.solution.sup_distance(&b.solution) >= 1e-3);
        assert!(a.local_min);
        assert!(a.solution.values()[1..128].iter().all(|&x| x < 0.0));
        assert!(a.grad_norm <= 1e-6 && b.grad_norm <= 1e-6);
        assert!(b.energy > a.energy);
    }

    #[test]
    fn uniqueness_mode_returns_one_report() {
        let s = spec(65, 3.0, -1.0, 0.5);
        let reps = solve_Plambda(&s, &SolveOptions::default()).unwrap();
        assert_eq!(reps.len(), 1);
        assert!(reps[0].accepted(), "{:?}", reps[0]);
    }

    #[test]
    fn two_solutions_above_floor_for_small_lambda() {
        let s = spec(129, 2.0, 4.93, 1.0).with_k(0.3);
        let reps = solve_Plambda(&s, &SolveOptions::default()).unwrap();
        assert_eq!(reps.len(), 2);
        for r in &reps {
            assert!(r.accepted(), "{:?} {:?} {} {}", r.status, r.lineage, r.residual_p, r.residual_p_tol);
        }
        assert!(reps[0].solution.values()[1..128].iter().all(|&x| x > 0.0));
    }
}
