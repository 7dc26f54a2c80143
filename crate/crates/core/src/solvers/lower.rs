//! A priori lower bound and construction of the lower solution used as the
//! floor of the transformed problem.

use log::debug;

use crate::error::{Error, Result};
use crate::grid::Field;
use crate::nonlinearity::{from_transformed, hopf_cole, to_transformed, ReactionKernel};
use crate::operators::{Functional, NodalPotential};
use crate::problem::{ProblemSpec, TruncationData};
use crate::solvers::newton::{minimize, NewtonOptions, Status};

/// Fixed nodal datum: minimizing with it solves `−Δ_p w = datum`.
pub(crate) struct Datum(pub Vec<f64>);

impl NodalPotential for Datum {
    fn value(&self, j: usize, s: f64) -> f64 {
        self.0[j] * s
    }
    fn derivative(&self, j: usize, _: f64) -> f64 {
        self.0[j]
    }
    fn curvature(&self, _: usize, _: f64, _: f64) -> f64 {
        0.0
    }
}

/// Solves `−Δ_p w = datum` with homogeneous Dirichlet data.
pub fn solve_datum(spec: &ProblemSpec, datum: Vec<f64>) -> Result<Field> {
    let grid = spec.grid();
    let pot = Datum(datum);
    let f = Functional::new(grid, spec.p, &pot);
    let scale = crate::linalg::sup(&pot.0).max(1e-300);
    let out = minimize(&f, &vec![0.0; grid.n()], None, &NewtonOptions { tol: 1e-10 * scale, max_iter: 500, ..Default::default() });
    // degenerate fluxes (p > 2) can stall a little above the target at rounding level
    if out.status != Status::Converged && !(out.status == Status::MaxIter && out.residual <= 1e-7 * scale) {
        return Err(Error::NoConvergence(format!("datum problem stopped with {:?}, residual {:.3e}", out.status, out.residual)));
    }
    Ok(Field::from_raw(grid, out.values))
}

fn negative_part(spec: &ProblemSpec) -> Vec<f64> {
    (0..spec.grid().n()).map(|j| (-spec.forcing(j)).max(0.0)).collect()
}

/// Surrogate for the bound `min u > −M` valid for every upper solution when
/// `λ ≥ 0`: iterate `M ← 2 max(−w)` with `−Δ_p w = −λ c⁺ M^{p−1} − h⁻` to a
/// fixed point. Independent of the positive part of the datum.
pub fn estimate_lower_bound(spec: &ProblemSpec) -> Result<f64> {
    if spec.lambda < 0.0 {
        return Err(Error::InvalidParameter("the lower bound estimate needs lambda >= 0".into()));
    }
    let hm = negative_part(spec);
    let p = spec.p;
    let mut m = 0.0f64;
    for it in 0..200 {
        let datum: Vec<f64> = spec.c.values().iter().zip(&hm).map(|(c, h)| -spec.lambda * c.max(0.0) * m.powf(p - 1.0) - h).collect();
        if datum.iter().all(|&d| d == 0.0) {
            return Ok(0.0);
        }
        let w = solve_datum(spec, datum)?;
        let next = 2.0 * (-w.min()).max(0.0);
        debug!("lower bound iteration {it}: M = {next:.6e}");
        if !next.is_finite() || next > 1e8 {
            return Err(Error::Infeasible("lower bound fixed point diverges".into()));
        }
        if (next - m).abs() <= 1e-10 * (1.0 + next) {
            return Ok(next);
        }
        m = next;
    }
    Err(Error::Infeasible("lower bound fixed point did not settle".into()))
}

/// Extra shift applied below the estimated bound so that the floor is a
/// strict lower solution even when the estimate is zero.
pub const FLOOR_MARGIN: f64 = 0.1;

/// Potential of the truncated auxiliary problem in transformed variables:
/// reaction `λ c |T(u)|^{p−2}T(u) − h⁻ − 1` with `T(u) = max(u, −k)`,
/// multiplied by `(1 + a v)^{p−1}`.
struct Truncated {
    kernel: ReactionKernel,
    lambda_c: Vec<f64>,
    sink: Vec<f64>,
    k: f64,
    v_k: f64,
}

impl Truncated {
    fn y(&self, s: f64) -> f64 {
        1.0 + self.kernel.rate() * s
    }
}

impl NodalPotential for Truncated {
    fn value(&self, j: usize, s: f64) -> f64 {
        let p = self.kernel.p();
        let a = self.kernel.rate();
        let y = self.y(s);
        let reaction =
            if s >= self.v_k { self.kernel.primitive(s) } else { self.kernel.primitive(self.v_k) - self.k.powf(p - 1.0) * (y.powf(p) - self.y(self.v_k).powf(p)) / (a * p) };
        self.lambda_c[j] * reaction - self.sink[j] * y.powf(p) / (a * p)
    }

    fn derivative(&self, j: usize, s: f64) -> f64 {
        let p = self.kernel.p();
        let y = self.y(s);
        let reaction = if s >= self.v_k { self.kernel.value(s) } else { -self.k.powf(p - 1.0) * y.powf(p - 1.0) };
        self.lambda_c[j] * reaction - self.sink[j] * y.powf(p - 1.0)
    }

    fn curvature(&self, j: usize, s: f64, eps: f64) -> f64 {
        let p = self.kernel.p();
        let a = self.kernel.rate();
        let y = self.y(s);
        let dy = (p - 1.0) * a * y.powf(p - 2.0);
        let reaction = if s >= self.v_k { self.kernel.derivative_regularized(s, eps) } else { -self.k.powf(p - 1.0) * dy };
        self.lambda_c[j] * reaction - self.sink[j] * dy
    }
}

/// Lower solution `u̲ ≤ 0` lying below every upper solution, and its image
/// under the transform.
pub fn build_lower_solution(spec: &ProblemSpec) -> Result<TruncationData> {
    spec.validate()?;
    let (p, mu) = (spec.p, spec.mu);
    let grid = spec.grid();
    let hm = negative_part(spec);
    if spec.lambda <= 0.0 {
        let alpha = solve_datum(spec, hm.iter().map(|h| -h).collect())?;
        let m = estimate_lower_bound(&spec.with_lambda(0.0))?;
        let shift = m + FLOOR_MARGIN;
        let lower = alpha.map(|x| x - shift);
        return TruncationData::from_lower(lower, p, mu);
    }

    let kernel = spec.kernel();
    let a = kernel.rate();
    let mut k = match estimate_lower_bound(spec) {
        Ok(m) => (2.0 * m).max(1.0),
        Err(e) => {
            debug!("lower bound estimate unavailable ({e}); starting the truncation at k = 1");
            1.0
        }
    };
    for _ in 0..12 {
        let datum: Vec<f64> = spec.c.values().iter().zip(&hm).map(|(c, h)| -spec.lambda * c * k.powf(p - 1.0) - h - 1.0).collect();
        let alpha = solve_datum(spec, datum)?;
        let lower_v: Vec<f64> = alpha.values().iter().map(|&x| to_transformed(x, a)).collect();
        let upper_v = vec![0.0; grid.n()];
        let pot =
            Truncated { kernel, lambda_c: spec.c.values().iter().map(|c| spec.lambda * c).collect(), sink: hm.iter().map(|h| h + 1.0).collect(), k, v_k: to_transformed(-k, a) };
        let f = Functional::new(grid, p, &pot);
        let out = minimize(&f, &lower_v, Some((&lower_v, &upper_v)), &NewtonOptions { tol: 1e-9, max_iter: 800, ..Default::default() });
        if out.status == Status::Converged {
            let u: Vec<f64> = out.values.iter().map(|&v| from_transformed(v, a)).collect();
            let min_u = u.iter().copied().fold(f64::INFINITY, f64::min);
            if min_u > -k {
                let lower = Field::from_raw(grid, u.iter().map(|x| x.min(0.0)).collect());
                return TruncationData::from_lower(lower, p, mu);
            }
            debug!("truncation level {k} reached (min u = {min_u:.4e}); doubling");
        } else {
            debug!("truncated problem stopped with {:?} at k = {k}; doubling", out.status);
        }
        k *= 2.0;
    }
    Err(Error::Infeasible("truncated lower-solution problem keeps hitting its truncation level".into()))
}

/// Convenience wrapper returning the transformed floor of a given lower
/// solution.
pub fn truncation_from_lower(lower: Field, spec: &ProblemSpec) -> Result<TruncationData> {
    let _ = hopf_cole(&lower, spec.p, spec.mu)?;
    TruncationData::from_lower(lower, spec.p, spec.mu)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Domain, Grid};
    use crate::operators::residual_P;
    use approx::assert_relative_eq;
    use std::sync::Arc;

    fn spec(n: usize, p: f64, lambda: f64, h: f64) -> ProblemSpec {
        let g = Arc::new(Grid::new(Domain::Interval { a: 0.0, b: 1.0 }, n).unwrap());
        ProblemSpec::new(p, 1.0, lambda, Field::constant(&g, 1.0), Field::constant(&g, h)).unwrap()
    }

    #[test]
    fn poisson_lower_solution_for_negative_datum() {
        let s = spec(65, 2.0, 0.0, -1.0);
        let alpha = solve_datum(&s, vec![-1.0; 65]).unwrap();
        for (x, v) in s.grid().nodes().iter().zip(alpha.values()) {
            assert_relative_eq!(*v, -x * (1.0 - x) / 2.0, epsilon = 1e-12);
        }
        let m = estimate_lower_bound(&s).unwrap();
        assert!(m >= 0.125 - 1e-12, "M = {m}");
        let t = build_lower_solution(&s).unwrap();
        let lower = &t.underline_u;
        for j in 0..65 {
            assert_relative_eq!(lower.values()[j], alpha.values()[j] - m - FLOOR_MARGIN, epsilon = 1e-12);
        }
        assert!(t.gap(2.0, 1.0) > 0.0);
    }

    #[test]
    fn nonnegative_datum_gives_zero_estimate() {
        let s = spec(33, 2.0, 0.0, 1.0);
        assert_eq!(estimate_lower_bound(&s).unwrap(), 0.0);
        let t = build_lower_solution(&s).unwrap();
        assert!(t.underline_u.values().iter().all(|&x| (x + FLOOR_MARGIN).abs() < 1e-15));
        assert!(t.alpha_lambda.min() > -1.0);
    }

    #[test]
    fn estimate_grows_with_negative_part() {
        let a = estimate_lower_bound(&spec(33, 3.0, 0.5, -1.0)).unwrap();
        let b = estimate_lower_bound(&spec(33, 3.0, 0.5, -2.0)).unwrap();
        assert!(b >= a);
    }

    #[test]
    fn positive_lambda_lower_solution_is_a_lower_solution() {
        let s = spec(65, 2.0, 1.0, 1.0);
        let t = build_lower_solution(&s).unwrap();
        assert!(t.underline_u.max() <= 0.0);
        let r = residual_P(&t.underline_u, &s);
        // −Δ_p u̲ − RHS ≤ 0 with slack from the −1 − h⁻ forcing
        assert!(r.values().iter().all(|&x| x < 1e-6), "max residual {}", r.max());
    }
}
