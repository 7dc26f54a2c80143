//! Executable checks of the qualitative properties on discrete data:
//! comparison of ordered lower and upper solutions, uniqueness for `λ ≤ 0`,
//! the Picone identity, non-uniqueness for a mismatched gradient exponent,
//! and the a priori lower bound.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::grid::{Domain, Field, Grid};
use crate::operators::{residual_P, residual_general, GeneralQuasilinearProblem};
use crate::problem::ProblemSpec;
use crate::solvers::lower::estimate_lower_bound;
use crate::solvers::pipeline::{find_local_min, residual_tolerance, solve_Plambda, SolveOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PropertyStatus {
    Pass,
    Fail,
    Inconclusive,
}

/// Worst offending location.
#[derive(Debug, Clone, Serialize)]
pub struct Witness {
    pub node: usize,
    pub x: f64,
    pub values: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PropertyReport {
    pub id: String,
    pub status: PropertyStatus,
    pub witness: Option<Witness>,
    pub tol: f64,
    pub metrics: BTreeMap<String, f64>,
    pub note: String,
}

impl PropertyReport {
    fn new(id: &str, tol: f64) -> Self {
        Self { id: id.into(), status: PropertyStatus::Pass, witness: None, tol, metrics: BTreeMap::new(), note: String::new() }
    }

    fn metric(mut self, key: &str, v: f64) -> Self {
        self.metrics.insert(key.into(), v);
        self
    }

    fn inconclusive(mut self, note: impl Into<String>) -> Self {
        self.status = PropertyStatus::Inconclusive;
        self.note = note.into();
        self
    }

    fn fail(mut self, witness: Witness, note: impl Into<String>) -> Self {
        self.status = PropertyStatus::Fail;
        self.witness = Some(witness);
        self.note = note.into();
        self
    }

    pub fn passed(&self) -> bool {
        self.status == PropertyStatus::Pass
    }
}

fn witness(grid: &Grid, node: usize, values: &[(&str, f64)]) -> Witness {
    Witness { node, x: grid.nodes()[node], values: values.iter().map(|(k, v)| (k.to_string(), *v)).collect() }
}

/// Comparison for `λ ≤ 0`: a lower solution lies below an upper solution.
/// The lower/upper property is checked by the sign of the strong residual up
/// to the mesh tolerance; pairs failing it are inconclusive.
pub fn check_comparison(spec: &ProblemSpec, u1: &Field, u2: &Field) -> PropertyReport {
    let scale = 1.0 + u1.sup_norm().max(u2.sup_norm());
    let tol = 1e-8 * scale;
    let rep = PropertyReport::new("comparison", tol);
    if spec.lambda > 0.0 {
        return rep.inconclusive("comparison needs lambda <= 0");
    }
    if u1.grid().n() != spec.grid().n() || u2.grid().n() != spec.grid().n() {
        return rep.inconclusive("fields live on a different grid");
    }
    let r1 = residual_P(u1, spec);
    let r2 = residual_P(u2, spec);
    let t1 = residual_tolerance(u1, spec);
    let t2 = residual_tolerance(u2, spec);
    let free: Vec<usize> = spec.grid().free_nodes().collect();
    let r1max = free.iter().map(|&j| r1.values()[j]).fold(f64::NEG_INFINITY, f64::max);
    let r2min = free.iter().map(|&j| r2.values()[j]).fold(f64::INFINITY, f64::min);
    let rep = rep.metric("lower_residual_max", r1max).metric("upper_residual_min", r2min);
    if r1max > t1 || r2min < -t2 || u1.values().iter().chain(u2.values()).any(|v| !v.is_finite()) {
        return rep.inconclusive("residual signs do not certify a lower/upper pair");
    }
    let (j, gap) = free.iter().map(|&j| (j, u1.values()[j] - u2.values()[j])).max_by(|a, b| a.1.total_cmp(&b.1)).expect("nonempty grid");
    let rep = rep.metric("max_excess", gap);
    if gap > tol {
        let w = witness(u1.grid(), j, &[("lower", u1.values()[j]), ("upper", u2.values()[j])]);
        return rep.fail(w, "lower solution exceeds upper solution");
    }
    rep
}

/// The pair `0`, `(R² − r²)/8` for `−Δ₄ u = |∇u|²` in the disc is outside the
/// comparison setting (gradient exponent differs from `p`).
pub fn check_comparison_mismatched(radius: f64) -> PropertyReport {
    PropertyReport::new("comparison_mismatched_growth", 0.0).metric("radius", radius).inconclusive("gradient exponent 2 differs from p = 4: outside the comparison hypotheses")
}

/// Forward-mode dual number for the quotient derivative.
#[derive(Clone, Copy)]
struct Dual(f64, f64);

impl Dual {
    fn powf(self, e: f64) -> Dual {
        let v = self.0.powf(e);
        Dual(v, e * self.0.powf(e - 1.0) * self.1)
    }
    fn mul(self, o: Dual) -> Dual {
        Dual(self.0 * o.0, self.0 * o.1 + self.1 * o.0)
    }
}

/// Cellwise terms `(L, R)` of the Picone identity at cell midpoints for the
/// piecewise linear interpolants of `u` and `v`.
pub fn picone_terms(u: &Field, v: &Field, p: f64) -> Vec<(f64, f64)> {
    let g = u.grid();
    let (a, b) = (u.values(), v.values());
    (0..g.cells())
        .map(|i| {
            let su = g.slope(a, i);
            let sv = g.slope(b, i);
            let um = 0.5 * (a[i] + a[i + 1]);
            let vm = 0.5 * (b[i] + b[i + 1]);
            let q = um / vm;
            let flux = sv.abs().powf(p - 2.0) * sv;
            let l = su.abs().powf(p) + (p - 1.0) * q.powf(p) * sv.abs().powf(p) - p * q.powf(p - 1.0) * flux * su;
            // derivative of u^p v^{1−p} along the cell by dual numbers
            let d = Dual(um, su).powf(p).mul(Dual(vm, sv).powf(1.0 - p)).1;
            let r = su.abs().powf(p) - d * flux;
            (l, r)
        })
        .collect()
}

/// Picone identity `L(u, v) = R(u, v) ≥ 0` cellwise; equality `L ≡ 0` must
/// come with `u = k v` (least-squares `k`).
pub fn check_picone(u: &Field, v: &Field, p: f64, tol: f64) -> PropertyReport {
    let rep = PropertyReport::new("picone", tol);
    let g = u.grid().clone();
    if v.grid().n() != g.n() {
        return rep.inconclusive("fields live on different grids");
    }
    let interior: Vec<usize> = g.interior_nodes().chain(g.is_radial().then_some(0)).collect();
    if interior.iter().any(|&j| u.values()[j] < 0.0 || v.values()[j] <= 0.0) || g.free_nodes().any(|j| v.values()[j] <= 0.0) {
        return rep.inconclusive("needs u >= 0 and v > 0 inside");
    }
    let terms = picone_terms(u, v, p);
    let mut worst = (0, 0.0f64);
    let mut lowest = (0, f64::INFINITY);
    let mut l1 = 0.0;
    for (i, (l, r)) in terms.iter().enumerate() {
        if (l - r).abs() > worst.1 {
            worst = (i, (l - r).abs());
        }
        if *l < lowest.1 {
            lowest = (i, *l);
        }
        l1 += g.cell_weights()[i] * l.abs();
    }
    let (uu, vv) = (u.values(), v.values());
    let w = g.node_weights();
    let k = (0..g.n()).map(|j| w[j] * uu[j] * vv[j]).sum::<f64>() / (0..g.n()).map(|j| w[j] * vv[j] * vv[j]).sum::<f64>();
    let misfit = (0..g.n()).map(|j| (uu[j] - k * vv[j]).abs()).fold(0.0, f64::max);
    let equality = l1 <= 1e-10;
    let mut rep = rep
        .metric("max_identity_gap", worst.1)
        .metric("min_l", lowest.1)
        .metric("l1_norm_l", l1)
        .metric("fitted_k", k)
        .metric("proportionality_misfit", misfit)
        .metric("equality_detected", f64::from(u8::from(equality)));
    if worst.1 > tol {
        let (l, r) = terms[worst.0];
        return rep.fail(witness(&g, worst.0, &[("l", l), ("r", r)]), "L and R differ");
    }
    if lowest.1 < -tol {
        return rep.fail(witness(&g, lowest.0, &[("l", lowest.1)]), "L negative");
    }
    if equality && misfit > 1e-8 * (1.0 + u.sup_norm()) {
        return rep.fail(witness(&g, 0, &[("fitted_k", k), ("misfit", misfit)]), "L vanishes for a non-proportional pair");
    }
    rep.note = if equality { format!("equality case, u = {k:.12} v") } else { "strict inequality somewhere".into() };
    rep
}

/// `u ≡ 0` and `u = (R² − r²)/8` both solve `−Δ₄ u = |∇u|²` in the disc of
/// radius `R`: strong residuals on radial grids of the given node counts,
/// required to decrease by `min_ratio` per refinement and to stay below
/// `coarse_tol` on the first grid.
pub fn check_nonuniqueness_counterexample(radius: f64, nodes: &[usize], coarse_tol: f64, min_ratio: f64) -> Result<PropertyReport> {
    let mut rep = PropertyReport::new("nonuniqueness_counterexample", coarse_tol);
    let mut residuals = Vec::new();
    let mut zero_residual = 0.0f64;
    for &n in nodes {
        let grid = Arc::new(Grid::new(Domain::Radial { radius, dim: 2 }, n)?);
        let prob = GeneralQuasilinearProblem::new(|_, _, xi| -xi * xi, Field::zeros(&grid));
        let zero = Field::zeros(&grid);
        zero_residual = zero_residual.max(residual_general(&zero, &prob, 4.0)?.sup_norm());
        let bump = Field::dirichlet_from_fn(&grid, |r| (radius * radius - r * r) / 8.0);
        let r = residual_general(&bump, &prob, 4.0)?;
        rep.metrics.insert(format!("residual_n{n}"), r.sup_norm());
        residuals.push((n, r));
        if n == nodes[0] {
            rep.metrics.insert("centre_value".into(), bump.values()[0]);
            rep.metrics.insert("distance".into(), bump.sup_norm());
        }
    }
    rep.metrics.insert("zero_residual".into(), zero_residual);
    let mut worst_ratio = f64::INFINITY;
    for w in residuals.windows(2) {
        let ratio = w[0].1.sup_norm() / w[1].1.sup_norm();
        worst_ratio = worst_ratio.min(ratio);
    }
    rep.metrics.insert("min_refinement_ratio".into(), worst_ratio);
    let (n0, r0) = &residuals[0];
    let j = (0..*n0).max_by(|a, b| r0.values()[*a].abs().total_cmp(&r0.values()[*b].abs())).expect("nonempty");
    if zero_residual != 0.0 {
        return Ok(rep.fail(witness(r0.grid(), 0, &[("zero_residual", zero_residual)]), "zero field has a residual"));
    }
    if r0.sup_norm() > coarse_tol {
        return Ok(rep.fail(witness(r0.grid(), j, &[("residual", r0.values()[j])]), "residual above tolerance on the coarsest grid"));
    }
    if residuals.len() > 1 && worst_ratio < min_ratio {
        return Ok(rep.fail(witness(r0.grid(), j, &[("ratio", worst_ratio)]), "residual does not decrease at the expected rate"));
    }
    rep.note = "two distinct solutions of the mismatched-growth problem".into();
    Ok(rep)
}

/// Every solution satisfies `min u > −M` for the surrogate bound `M`, which
/// must not change when the positive part of the datum is doubled. Solutions
/// of the doubled problem are checked against the same bound.
pub fn check_lower_bound(spec: &ProblemSpec, solutions: &[Field], opts: &SolveOptions) -> Result<PropertyReport> {
    let rep = PropertyReport::new("lower_bound", 0.0);
    if spec.lambda < 0.0 {
        return Ok(rep.inconclusive("the bound is stated for lambda >= 0"));
    }
    let m = estimate_lower_bound(spec)?;
    let mut doubled = spec.clone();
    doubled.h = spec.h.map(|x| if x > 0.0 { 2.0 * x } else { x });
    let m2 = estimate_lower_bound(&doubled)?;
    let mut rep = rep.metric("bound", m).metric("bound_doubled_positive_part", m2);
    rep.tol = 1e-12 * (1.0 + m);
    if m2 != m {
        return Ok(rep.fail(witness(spec.grid(), 0, &[("bound", m), ("doubled", m2)]), "bound depends on the positive part"));
    }
    let extra: Vec<Field> = solve_Plambda(&doubled, opts)?.into_iter().filter(|r| r.accepted()).map(|r| r.solution).collect();
    rep.metrics.insert("solutions".into(), solutions.len() as f64);
    rep.metrics.insert("solutions_doubled".into(), extra.len() as f64);
    let mut margin = f64::INFINITY;
    for u in solutions.iter().chain(&extra) {
        let (j, lo) = (0..u.grid().n()).map(|j| (j, u.values()[j])).min_by(|a, b| a.1.total_cmp(&b.1)).expect("nonempty");
        margin = margin.min(lo + m);
        // Dirichlet values sit exactly at −M when the bound vanishes
        if lo < -m - rep.tol {
            rep.metrics.insert("margin".into(), margin);
            return Ok(rep.fail(witness(u.grid(), j, &[("min_value", lo), ("bound", -m)]), "solution below the bound"));
        }
    }
    rep.metrics.insert("margin".into(), margin);
    if solutions.is_empty() && extra.is_empty() {
        return Ok(rep.inconclusive("no solutions to check"));
    }
    Ok(rep)
}

/// Smooth random field vanishing on the Dirichlet boundary: a few sine
/// modes (quarter-wave cosines on radial grids) with decaying amplitudes.
pub fn random_dirichlet_field(grid: &Arc<Grid>, rng: &mut impl Rng, modes: usize, amplitude: f64) -> Field {
    let coeffs: Vec<(f64, f64)> = (1..=modes).map(|k| (rng.random_range(-1.0..1.0) / k as f64, k as f64)).collect();
    let (a, len, radial) = match grid.domain() {
        Domain::Interval { a, b } => (a, b - a, false),
        Domain::Radial { radius, .. } => (0.0, radius, true),
    };
    Field::dirichlet_from_fn(grid, |x| {
        let t = (x - a) / len;
        amplitude * coeffs.iter().map(|(c, k)| if radial { c * ((k - 0.5) * std::f64::consts::PI * t).cos() } else { c * (k * std::f64::consts::PI * t).sin() }).sum::<f64>()
    })
}

/// Multistart for `λ ≤ 0`: local minimization from zero and from random
/// smooth starts; the sup-norm diameter of the results must not exceed `tol`.
pub fn check_uniqueness(spec: &ProblemSpec, starts: usize, seed: u64, tol: f64, opts: &SolveOptions) -> Result<PropertyReport> {
    let rep = PropertyReport::new("uniqueness", tol);
    if spec.lambda > 0.0 {
        return Ok(rep.inconclusive("uniqueness is stated for lambda <= 0"));
    }
    let grid = spec.grid().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // keep the transformed starts of moderate size when the gradient term is strong
    let shrink = (spec.mu / (spec.p - 1.0)).max(1.0);
    let mut fields = vec![Field::zeros(&grid)];
    for _ in 1..starts {
        let amp = rng.random_range(0.5..5.0) / shrink;
        fields.push(random_dirichlet_field(&grid, &mut rng, 6, amp));
    }
    let reports = crate::parallel::map(fields, |s| find_local_min(spec, &s, opts));
    let mut sols = Vec::new();
    let mut failed = 0usize;
    for r in reports {
        let r = r?;
        if r.converged() {
            sols.push(r.solution);
        } else {
            failed += 1;
        }
    }
    let mut diameter = 0.0f64;
    let mut pair = (0, 0);
    for i in 0..sols.len() {
        for j in i + 1..sols.len() {
            let d = sols[i].sup_distance(&sols[j]);
            if d > diameter {
                diameter = d;
                pair = (i, j);
            }
        }
    }
    let rep = rep.metric("diameter", diameter).metric("converged", sols.len() as f64).metric("failed", failed as f64);
    if sols.len() < 2 {
        return Ok(rep.inconclusive("fewer than two starts converged"));
    }
    if diameter > tol {
        let (a, b) = (&sols[pair.0], &sols[pair.1]);
        let j = (0..grid.n()).max_by(|x, y| (a.values()[*x] - b.values()[*x]).abs().total_cmp(&(a.values()[*y] - b.values()[*y]).abs())).expect("nonempty");
        return Ok(rep.fail(witness(&grid, j, &[("first", a.values()[j]), ("second", b.values()[j])]), "distinct solutions found"));
    }
    if failed > 0 {
        let mut rep = rep;
        rep.note = format!("{failed} starts did not converge");
        return Ok(rep);
    }
    Ok(rep)
}

/// Default property suite on small data, in deterministic id order.
pub fn default_suite(seed: u64) -> Result<Vec<PropertyReport>> {
    let grid = Arc::new(Grid::new(Domain::Interval { a: 0.0, b: 1.0 }, 129)?);
    let opts = SolveOptions::default();
    let c = Field::constant(&grid, 1.0);
    let base = ProblemSpec::new(2.0, 1.0, -1.0, c.clone(), Field::constant(&grid, 1.0))?;
    let jobs: Vec<usize> = (0..6).collect();
    let results = crate::parallel::map(jobs, |i| -> Result<PropertyReport> {
        match i {
            0 => {
                let lo = find_local_min(&base.with_k(0.5), &Field::zeros(&grid), &opts)?;
                let hi = find_local_min(&base.with_k(1.5), &Field::zeros(&grid), &opts)?;
                Ok(check_comparison(&base, &lo.solution, &hi.solution))
            }
            1 => Ok(check_comparison_mismatched(1.0)),
            2 => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let v = Field::dirichlet_from_fn(&grid, |x| (std::f64::consts::PI * x).sin());
                let bump = random_dirichlet_field(&grid, &mut rng, 4, 0.3).map(|x| 1.0 + x.abs());
                let u = Field::new(grid.clone(), v.values().iter().zip(bump.values()).map(|(a, b)| a * b).collect())?;
                Ok(check_picone(&u, &v, 3.0, 1e-10))
            }
            3 => check_nonuniqueness_counterexample(1.0, &[128, 256, 512, 1024], 0.5, 1.8),
            4 => {
                let spec = ProblemSpec::new(2.0, 1.0, 1.0, c.clone(), Field::constant(&grid, -1.0))?;
                let sols: Vec<Field> = solve_Plambda(&spec, &opts)?.into_iter().filter(|r| r.accepted()).map(|r| r.solution).collect();
                check_lower_bound(&spec, &sols, &opts)
            }
            _ => check_uniqueness(&base, 8, seed, 1e-6, &opts),
        }
    });
    let mut out = results.into_iter().collect::<Result<Vec<_>>>()?;
    out.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(out)
}
