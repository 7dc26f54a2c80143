//! Discretized-path mountain pass: a string of images between two low
//! points relaxed by preconditioned descent orthogonal to the path, then a
//! Newton polish of the highest image.

use log::debug;

use crate::linalg::{dot, SymTridiag};
use crate::operators::{Functional, NodalPotential};
use crate::solvers::newton::{find_root, NewtonOptions, Outcome, Status};

#[derive(Debug, Clone)]
pub struct PathOptions {
    /// Number of path nodes including both endpoints.
    pub images: usize,
    pub max_sweeps: usize,
    /// Relative stabilization threshold for the path maximum.
    pub level_tol: f64,
    /// Gradient tolerance of the final Newton polish.
    pub tol: f64,
}

impl Default for PathOptions {
    fn default() -> Self {
        Self { images: 41, max_sweeps: 600, level_tol: 1e-10, tol: 1e-9 }
    }
}

#[derive(Debug, Clone)]
pub struct PassOutcome {
    pub saddle: Outcome,
    /// Highest energy along the relaxed path.
    pub path_level: f64,
    pub sweeps: usize,
    pub path: Vec<Vec<f64>>,
}

/// Stiffness matrix of the `p = 2` Dirichlet energy: the path metric and the
/// preconditioner.
fn stiffness<P: NodalPotential + ?Sized>(f: &Functional<'_, P>) -> SymTridiag {
    let g = f.grid;
    let n = g.n();
    let h = g.spacing();
    let mut m = SymTridiag::zeros(n);
    for (i, w) in g.cell_weights().iter().enumerate() {
        let k = w / (h * h);
        m.diag[i] += k;
        m.diag[i + 1] += k;
        m.off[i] -= k;
    }
    for j in 0..n {
        if f.is_fixed(j) {
            m.diag[j] = 1.0;
            if j > 0 {
                m.off[j - 1] = 0.0;
            }
            if j + 1 < n {
                m.off[j] = 0.0;
            }
        }
    }
    m
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn kdot(k: &SymTridiag, a: &[f64], b: &[f64]) -> f64 {
    dot(&k.mul(a), b)
}

/// Redistributes the images at equal arclength in the stiffness metric.
fn reparametrize(path: &mut [Vec<f64>], k: &SymTridiag) -> f64 {
    let m = path.len();
    let mut arc = vec![0.0; m];
    for i in 1..m {
        let d = sub(&path[i], &path[i - 1]);
        arc[i] = arc[i - 1] + kdot(k, &d, &d).max(0.0).sqrt();
    }
    let total = arc[m - 1];
    if !(total > 0.0) {
        return total;
    }
    let old = path.to_vec();
    let mut seg = 1;
    for (i, img) in path.iter_mut().enumerate().take(m - 1).skip(1) {
        let target = total * i as f64 / (m - 1) as f64;
        while seg < m - 1 && arc[seg] < target {
            seg += 1;
        }
        let span = arc[seg] - arc[seg - 1];
        let t = if span > 0.0 { (target - arc[seg - 1]) / span } else { 0.0 };
        *img = old[seg - 1].iter().zip(&old[seg]).map(|(a, b)| a + t * (b - a)).collect();
    }
    total
}

/// One descent step of a single interior image along the preconditioned
/// gradient with its tangential component removed.
fn relax_image<P: NodalPotential + ?Sized>(f: &Functional<'_, P>, k: &SymTridiag, prev: &[f64], img: &[f64], next: &[f64], step: f64, max_disp: f64) -> (Vec<f64>, f64, f64) {
    let g = f.gradient(img);
    let d = k.ldlt().map(|l| l.solve(&g)).unwrap_or_else(|| g.clone());
    let tau = sub(next, prev);
    let tkt = kdot(k, &tau, &tau);
    let coef = if tkt > 0.0 { dot(&g, &tau) / tkt } else { 0.0 };
    let dperp: Vec<f64> = d.iter().zip(&tau).map(|(a, b)| a - coef * b).collect();
    let slope = dot(&g, &dperp);
    let e0 = f.energy(img);
    if !(slope > 0.0) {
        return (img.to_vec(), e0, step);
    }
    // images may not overtake their neighbours
    let norm = kdot(k, &dperp, &dperp).max(0.0).sqrt();
    let cap = if norm > 0.0 { max_disp / norm } else { 1e6 };
    let mut t = (2.0 * step).min(1e6).min(cap);
    for _ in 0..60 {
        let trial: Vec<f64> = img.iter().zip(&dperp).map(|(a, b)| a - t * b).collect();
        let et = f.energy(&trial);
        if et.is_finite() && et <= e0 - 1e-4 * t * slope {
            return (trial, et, t);
        }
        t *= 0.5;
    }
    (img.to_vec(), e0, t)
}

struct Relaxed {
    path: Vec<Vec<f64>>,
    energies: Vec<f64>,
    level: f64,
    sweeps: usize,
    collapsed: bool,
}

fn relax<P: NodalPotential + ?Sized>(f: &Functional<'_, P>, k: &SymTridiag, e1: &[f64], e2: &[f64], opts: &PathOptions) -> Relaxed {
    let m = opts.images.max(3);
    let mut path: Vec<Vec<f64>> = (0..m)
        .map(|i| {
            let t = i as f64 / (m - 1) as f64;
            e1.iter().zip(e2).map(|(a, b)| a + t * (b - a)).collect()
        })
        .collect();
    let mut steps = vec![1.0; m];
    let mut energies: Vec<f64> = path.iter().map(|x| f.energy(x)).collect();
    let mut level = energies.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut calm = 0;
    let mut sweeps = 0;
    let mut spacing = {
        let d = sub(e2, e1);
        kdot(k, &d, &d).max(0.0).sqrt() / (m - 1) as f64
    };
    while sweeps < opts.max_sweeps {
        sweeps += 1;
        let moved = crate::parallel::map((1..m - 1).collect(), |i| relax_image(f, k, &path[i - 1], &path[i], &path[i + 1], steps[i], 0.5 * spacing));
        for (off, (img, _, t)) in moved.into_iter().enumerate() {
            path[off + 1] = img;
            steps[off + 1] = t;
        }
        let total = reparametrize(&mut path, k);
        if !(total > 1e-12) || !total.is_finite() {
            return Relaxed { path, energies, level, sweeps, collapsed: true };
        }
        spacing = total / (m - 1) as f64;
        energies = path.iter().map(|x| f.energy(x)).collect();
        let new_level = energies.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if (new_level - level).abs() <= opts.level_tol * (1.0 + new_level.abs()) {
            calm += 1;
        } else {
            calm = 0;
        }
        level = new_level;
        if calm >= 5 {
            break;
        }
    }
    Relaxed { path, energies, level, sweeps, collapsed: false }
}

/// Relaxes a path from `e1` to `e2` and polishes its highest point into a
/// critical point. When the barrier is not resolved by the images (the top
/// sits next to an endpoint) the path is shortened to the first image below
/// the level of `e1` and relaxed again.
pub fn pass<P: NodalPotential + ?Sized>(f: &Functional<'_, P>, e1: &[f64], e2: &[f64], opts: &PathOptions) -> PassOutcome {
    let m = opts.images.max(5);
    let opts = PathOptions { images: m, ..opts.clone() };
    let k = stiffness(f);
    let base = f.energy(e1);
    let mut end = e2.to_vec();
    let mut sweeps = 0;
    let mut r = relax(f, &k, e1, &end, &opts);
    sweeps += r.sweeps;
    for zoom in 0..12 {
        if r.collapsed {
            break;
        }
        let top = (1..m - 1).max_by(|&a, &b| r.energies[a].total_cmp(&r.energies[b])).unwrap_or(m / 2);
        if top >= 2 && r.energies[top] > base {
            break;
        }
        let Some(cut) = (top.max(1)..m).find(|&i| r.energies[i] < base) else { break };
        debug!("mountain-pass zoom {zoom}: barrier unresolved, shortening the path to image {cut}");
        end = r.path[cut].clone();
        r = relax(f, &k, e1, &end, &opts);
        sweeps += r.sweeps;
    }
    let Relaxed { path, energies, level, collapsed, .. } = r;
    if collapsed {
        let values = e1.to_vec();
        return PassOutcome {
            saddle: Outcome { energy: f.energy(&values), values, status: Status::Diverged, residual: f64::INFINITY, iterations: sweeps },
            path_level: level,
            sweeps,
            path,
        };
    }
    debug!("mountain-pass path settled after {sweeps} sweeps at level {level:.10e}");

    let top = (1..m - 1).max_by(|&a, &b| energies[a].total_cmp(&energies[b])).unwrap_or(m / 2);
    // parabolic refinement of the top along the path
    let (el, ec, er) = (energies[top - 1], energies[top], energies[top + 1]);
    let denom = el - 2.0 * ec + er;
    let shift = if denom < 0.0 { (0.5 * (el - er) / denom).clamp(-0.5, 0.5) } else { 0.0 };
    let other = if shift >= 0.0 { &path[top + 1] } else { &path[top - 1] };
    let refined: Vec<f64> = path[top].iter().zip(other).map(|(a, b)| a + shift.abs() * (b - a)).collect();

    // relative to the size of the operator terms, which is large on tall saddles
    let scale = crate::linalg::sup(&crate::operators::p_laplacian(f.grid, &refined, f.p)).max(1.0);
    let nopts = NewtonOptions { tol: opts.tol * scale, max_iter: 200, ..Default::default() };
    let mut best: Option<Outcome> = None;
    for start in [refined, path[top].clone(), path[top - 1].clone(), path[top + 1].clone()] {
        let out = find_root(f, &start, &nopts);
        let better = match &best {
            None => true,
            Some(b) => out.status == Status::Converged && b.status != Status::Converged,
        };
        if better {
            best = Some(out);
        }
        if best.as_ref().is_some_and(|b| b.status == Status::Converged) {
            break;
        }
    }
    let mut saddle = best.expect("at least one polish attempt");
    saddle.iterations += sweeps;
    PassOutcome { saddle, path_level: level, sweeps, path }
}
