//! Newton-type kernels on a [`Functional`]: a damped minimizer (optionally
//! box constrained, projected-Newton style) and a Newton root finder for
//! critical points that are not minima.

use serde::{Deserialize, Serialize};

use crate::linalg::{sup, SymTridiag};
use crate::operators::{Functional, NodalPotential};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Converged,
    MaxIter,
    Diverged,
    Infeasible,
}

#[derive(Debug, Clone)]
pub struct NewtonOptions {
    /// Tolerance on the sup of the weight-scaled gradient.
    pub tol: f64,
    pub max_iter: usize,
    /// Iterates with a larger sup norm count as divergence.
    pub blowup: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self { tol: 1e-9, max_iter: 400, blowup: f64::INFINITY }
    }
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub values: Vec<f64>,
    pub status: Status,
    pub energy: f64,
    pub residual: f64,
    pub iterations: usize,
}

const ARMIJO: f64 = 1e-4;

fn shifted_factor(h: &SymTridiag) -> crate::linalg::Ldlt {
    if let Some(f) = h.ldlt() {
        return f;
    }
    let scale = h.diag.iter().fold(0.0f64, |m, d| m.max(d.abs())).max(1e-300);
    let mut tau = 1e-8 * scale;
    loop {
        let mut shifted = h.clone();
        for d in &mut shifted.diag {
            *d += tau;
        }
        if let Some(f) = shifted.ldlt() {
            return f;
        }
        tau *= 4.0;
    }
}

fn blew_up(v: &[f64], energy: f64, blowup: f64) -> bool {
    !energy.is_finite() || energy < -1e200 || v.iter().any(|x| !x.is_finite() || x.abs() > blowup)
}

/// Projected residual: scaled gradient with components that push against
/// an active bound removed.
fn projected_residual<P: NodalPotential + ?Sized>(f: &Functional<'_, P>, v: &[f64], g: &[f64], lower: &[f64], upper: &[f64]) -> f64 {
    let w = f.grid.node_weights();
    let mut r = 0.0f64;
    for j in 0..v.len() {
        if f.is_fixed(j) {
            continue;
        }
        if (v[j] <= lower[j] && g[j] > 0.0) || (v[j] >= upper[j] && g[j] < 0.0) {
            continue;
        }
        r = r.max((g[j] / w[j]).abs());
    }
    r
}

/// Damped Newton descent on the energy. Bounds may be infinite.
pub fn minimize<P: NodalPotential + ?Sized>(f: &Functional<'_, P>, start: &[f64], bounds: Option<(&[f64], &[f64])>, opts: &NewtonOptions) -> Outcome {
    let n = start.len();
    let (lower, upper): (Vec<f64>, Vec<f64>) = match bounds {
        Some((l, u)) => (l.to_vec(), u.to_vec()),
        None => (vec![f64::NEG_INFINITY; n], vec![f64::INFINITY; n]),
    };
    if lower.iter().zip(&upper).any(|(l, u)| l > u) {
        return Outcome { values: start.to_vec(), status: Status::Infeasible, energy: f.energy(start), residual: f64::INFINITY, iterations: 0 };
    }
    let project = |x: &mut [f64]| {
        for j in 0..n {
            if !f.is_fixed(j) {
                x[j] = x[j].clamp(lower[j], upper[j]);
            }
        }
    };
    let mut v = start.to_vec();
    project(&mut v);
    let weights = f.grid.node_weights();
    let mut e = f.energy(&v);
    let mut iterations = 0;
    let mut residual = f64::INFINITY;
    while iterations < opts.max_iter {
        if blew_up(&v, e, opts.blowup) {
            return Outcome { values: v, status: Status::Diverged, energy: e, residual, iterations };
        }
        let g = f.gradient(&v);
        residual = projected_residual(f, &v, &g, &lower, &upper);
        if residual <= opts.tol {
            return Outcome { values: v, status: Status::Converged, energy: e, residual, iterations };
        }
        iterations += 1;

        let mut h = f.hessian(&v);
        // epsilon-active set from a Jacobi-scaled projected step
        let mut eps_act = 0.0f64;
        for j in 0..n {
            if f.is_fixed(j) {
                continue;
            }
            let step = g[j] / h.diag[j].abs().max(1e-300);
            let moved = (v[j] - step).clamp(lower[j], upper[j]);
            eps_act = eps_act.max((v[j] - moved).abs());
        }
        let eps_act = eps_act.min(1e-3);
        let active: Vec<bool> = (0..n)
            .map(|j| {
                !f.is_fixed(j)
                    && ((v[j] <= lower[j] + eps_act.min(0.5 * (upper[j] - lower[j])) && g[j] > 0.0) || (v[j] >= upper[j] - eps_act.min(0.5 * (upper[j] - lower[j])) && g[j] < 0.0))
            })
            .collect();
        for j in 0..n {
            if active[j] {
                h.diag[j] = 1.0;
                if j > 0 {
                    h.off[j - 1] = 0.0;
                }
                if j + 1 < n {
                    h.off[j] = 0.0;
                }
            }
        }
        let rhs: Vec<f64> = (0..n).map(|j| if active[j] || f.is_fixed(j) { 0.0 } else { -g[j] }).collect();
        let mut d = shifted_factor(&h).solve(&rhs);
        for j in 0..n {
            if active[j] {
                // scaled gradient step onto the bound
                d[j] = -g[j] / h_diag_scale(f, &v, j, weights);
            }
        }
        let slope: f64 = g.iter().zip(&d).map(|(a, b)| a * b).sum();
        if !(slope < 0.0) || d.iter().any(|x| !x.is_finite()) {
            d = (0..n).map(|j| if f.is_fixed(j) { 0.0 } else { -g[j] / h_diag_scale(f, &v, j, weights) }).collect();
        }

        // predicted decrease below rounding of the energy: judge steps by the residual
        let rounding = -slope <= 1e-12 * (1.0 + e.abs());
        let mut t = 1.0;
        let mut accepted = None;
        if !rounding {
            for _ in 0..60 {
                let mut trial: Vec<f64> = v.iter().zip(&d).map(|(a, b)| a + t * b).collect();
                project(&mut trial);
                let et = f.energy(&trial);
                let decrease: f64 = g.iter().zip(trial.iter().zip(&v)).map(|(gj, (a, b))| gj * (a - b)).sum();
                if et.is_finite() && et <= e + ARMIJO * decrease.min(0.0) && decrease < 0.0 {
                    accepted = Some((trial, et));
                    break;
                }
                t *= 0.5;
            }
        }
        match accepted {
            Some((trial, et)) => {
                v = trial;
                e = et;
            }
            None => {
                let mut improved = false;
                let mut t = 1.0;
                for _ in 0..20 {
                    let mut trial: Vec<f64> = v.iter().zip(&d).map(|(a, b)| a + t * b).collect();
                    project(&mut trial);
                    let gt = f.gradient(&trial);
                    let rt = projected_residual(f, &trial, &gt, &lower, &upper);
                    if rt < residual {
                        e = f.energy(&trial);
                        v = trial;
                        improved = true;
                        break;
                    }
                    t *= 0.5;
                }
                if !improved {
                    break;
                }
            }
        }
    }
    let g = f.gradient(&v);
    residual = projected_residual(f, &v, &g, &lower, &upper);
    let status = if blew_up(&v, e, opts.blowup) {
        Status::Diverged
    } else if residual <= opts.tol {
        Status::Converged
    } else {
        Status::MaxIter
    };
    Outcome { values: v, status, energy: e, residual, iterations }
}

fn h_diag_scale<P: NodalPotential + ?Sized>(f: &Functional<'_, P>, v: &[f64], j: usize, weights: &[f64]) -> f64 {
    // Laplacian-sized diagonal so that the fallback step is dimensionally a step in v
    let h = f.grid.spacing();
    let _ = v;
    (2.0 * weights[j] / (h * h)).max(1e-300)
}

/// Newton iteration on the gradient, damped on the merit `Σ g_j²/ω_j`.
/// Converges to nearby critical points of any Morse index.
pub fn find_root<P: NodalPotential + ?Sized>(f: &Functional<'_, P>, start: &[f64], opts: &NewtonOptions) -> Outcome {
    let w = f.grid.node_weights();
    let merit = |g: &[f64]| -> f64 { g.iter().zip(w).map(|(a, b)| a * a / b).sum() };
    let mut v = start.to_vec();
    let mut g = f.gradient(&v);
    let mut m = merit(&g);
    let mut iterations = 0;
    let scaled_sup = |g: &[f64]| sup(&g.iter().zip(w).map(|(a, b)| a / b).collect::<Vec<_>>());
    while iterations < opts.max_iter {
        let residual = scaled_sup(&g);
        let e = f.energy(&v);
        if blew_up(&v, e, opts.blowup) {
            return Outcome { values: v, status: Status::Diverged, energy: e, residual, iterations };
        }
        if residual <= opts.tol {
            return Outcome { values: v, status: Status::Converged, energy: e, residual, iterations };
        }
        iterations += 1;
        let h = f.hessian(&v);
        let neg: Vec<f64> = g.iter().map(|x| -x).collect();
        let Some(d) = h.solve_lu(&neg) else { break };
        let mut t = 1.0;
        let mut best: Option<(Vec<f64>, Vec<f64>, f64)> = None;
        for _ in 0..40 {
            let trial: Vec<f64> = v.iter().zip(&d).map(|(a, b)| a + t * b).collect();
            let gt = f.gradient(&trial);
            let mt = merit(&gt);
            if mt.is_finite() && mt <= (1.0 - ARMIJO * t) * m {
                best = Some((trial, gt, mt));
                break;
            }
            t *= 0.5;
        }
        match best {
            Some((trial, gt, mt)) => {
                v = trial;
                g = gt;
                m = mt;
            }
            None => break,
        }
    }
    let residual = scaled_sup(&g);
    let e = f.energy(&v);
    let status = if blew_up(&v, e, opts.blowup) {
        Status::Diverged
    } else if residual <= opts.tol {
        Status::Converged
    } else {
        Status::MaxIter
    };
    Outcome { values: v, status, energy: e, residual, iterations }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Domain, Grid};

    /// `F(j, s) = c s` (Poisson) or a double well.
    struct Linear(f64);
    impl NodalPotential for Linear {
        fn value(&self, _: usize, s: f64) -> f64 {
            self.0 * s
        }
        fn derivative(&self, _: usize, _: f64) -> f64 {
            self.0
        }
        fn curvature(&self, _: usize, _: f64, _: f64) -> f64 {
            0.0
        }
    }

    fn grid(n: usize) -> Grid {
        Grid::new(Domain::Interval { a: 0.0, b: 1.0 }, n).unwrap()
    }

    #[test]
    fn poisson_minimum_is_exact_for_p2() {
        let g = grid(33);
        let pot = Linear(1.0);
        let f = Functional::new(&g, 2.0, &pot);
        let out = minimize(&f, &vec![0.0; 33], None, &NewtonOptions::default());
        assert_eq!(out.status, Status::Converged);
        for (x, v) in g.nodes().iter().zip(&out.values) {
            assert!((v - 0.5 * x * (1.0 - x)).abs() < 1e-12);
        }
    }

    #[test]
    fn p_laplacian_torsion_matches_closed_form() {
        // −(|u'|u')' = 1 on (0,1): u' = sgn(½−x)|½−x|^{1/2}
        let g = grid(401);
        let pot = Linear(1.0);
        let f = Functional::new(&g, 3.0, &pot);
        let out = minimize(&f, &vec![0.0; 401], None, &NewtonOptions { tol: 1e-8, ..Default::default() });
        assert_eq!(out.status, Status::Converged);
        let peak = (2.0 / 3.0) * 0.5f64.powf(1.5);
        assert!((out.values[200] - peak).abs() < 1e-3, "{} vs {peak}", out.values[200]);
    }

    #[test]
    fn box_constraint_is_respected_and_active() {
        let g = grid(33);
        let pot = Linear(1.0);
        let f = Functional::new(&g, 2.0, &pot);
        let lower = vec![f64::NEG_INFINITY; 33];
        let upper = vec![0.05; 33];
        let out = minimize(&f, &vec![0.0; 33], Some((&lower, &upper)), &NewtonOptions::default());
        assert_eq!(out.status, Status::Converged);
        assert!(out.values.iter().all(|&v| v <= 0.05));
        assert!((out.values[16] - 0.05).abs() < 1e-15);
    }

    #[test]
    fn degenerate_box_returns_bound() {
        let g = grid(9);
        let pot = Linear(1.0);
        let f = Functional::new(&g, 2.0, &pot);
        let b: Vec<f64> = g.nodes().iter().map(|x| 0.5 * x * (1.0 - x)).collect();
        let out = minimize(&f, &b, Some((&b, &b)), &NewtonOptions::default());
        assert_eq!(out.values, b);
        let bad_upper: Vec<f64> = b.iter().map(|x| x - 1.0).collect();
        let out = minimize(&f, &b, Some((&b, &bad_upper)), &NewtonOptions::default());
        assert_eq!(out.status, Status::Infeasible);
    }

    #[test]
    fn root_finder_agrees_with_minimizer() {
        let g = grid(65);
        let pot = Linear(-2.0);
        let f = Functional::new(&g, 2.5, &pot);
        let a = minimize(&f, &vec![0.0; 65], None, &NewtonOptions::default());
        let b = find_root(&f, &vec![0.0; 65], &NewtonOptions::default());
        assert_eq!(b.status, Status::Converged);
        assert!(a.values.iter().zip(&b.values).all(|(x, y)| (x - y).abs() < 1e-8));
    }
}
