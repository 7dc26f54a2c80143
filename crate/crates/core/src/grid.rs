//! Uniform meshes on an interval or on the radial section of a ball, with
//! cell-wise constant gradients and lumped nodal quadrature.
//!
//! A grid with `n` nodes has `n - 1` cells. Cell `i` joins nodes `i` and
//! `i + 1`; its weight is the exact measure `∫ r^{N-1} dr` over the cell (the
//! cell length on an interval). Nodal weights are half the sum of the adjacent
//! cell weights, so both families sum to the measure of the domain.

use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Domain {
    Interval {
        a: f64,
        b: f64,
    },
    /// Ball of radius `radius` in dimension `dim`, reduced to `r ∈ [0, radius]`.
    Radial {
        radius: f64,
        dim: u32,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    domain: Domain,
    nodes: Vec<f64>,
    spacing: f64,
    cell_weights: Vec<f64>,
    node_weights: Vec<f64>,
}

pub fn make_grid(domain: Domain, n: usize) -> Result<Grid> {
    Grid::new(domain, n)
}

impl Grid {
    pub fn new(domain: Domain, n: usize) -> Result<Self> {
        if n < 4 {
            return Err(Error::InvalidGrid(format!("need at least 4 nodes, got {n}")));
        }
        let (start, end) = match domain {
            Domain::Interval { a, b } => {
                if !(a.is_finite() && b.is_finite() && a < b) {
                    return Err(Error::InvalidGrid(format!("interval ({a}, {b}) is empty")));
                }
                (a, b)
            }
            Domain::Radial { radius, dim } => {
                if !(radius.is_finite() && radius > 0.0) {
                    return Err(Error::InvalidGrid(format!("radius must be positive, got {radius}")));
                }
                if dim < 2 {
                    return Err(Error::InvalidGrid(format!("radial dimension must be >= 2, got {dim}")));
                }
                (0.0, radius)
            }
        };
        let spacing = (end - start) / (n - 1) as f64;
        let mut nodes: Vec<f64> = (0..n).map(|j| start + spacing * j as f64).collect();
        nodes[n - 1] = end;

        let cell_weights: Vec<f64> = nodes
            .windows(2)
            .map(|w| match domain {
                Domain::Interval { .. } => w[1] - w[0],
                Domain::Radial { dim, .. } => {
                    let d = dim as i32;
                    (w[1].powi(d) - w[0].powi(d)) / d as f64
                }
            })
            .collect();
        let mut node_weights = vec![0.0; n];
        for (i, w) in cell_weights.iter().enumerate() {
            node_weights[i] += 0.5 * w;
            node_weights[i + 1] += 0.5 * w;
        }
        Ok(Self { domain, nodes, spacing, cell_weights, node_weights })
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn n(&self) -> usize {
        self.nodes.len()
    }

    pub fn cells(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn cell_weights(&self) -> &[f64] {
        &self.cell_weights
    }

    pub fn node_weights(&self) -> &[f64] {
        &self.node_weights
    }

    /// Per-cell `r^{N-1}` factor (cell measure divided by the cell width).
    pub fn radial_factor(&self, cell: usize) -> f64 {
        self.cell_weights[cell] / self.spacing
    }

    /// Total measure: the length, or `∫_0^R r^{N-1} dr` for a radial grid.
    pub fn measure(&self) -> f64 {
        self.cell_weights.iter().sum()
    }

    /// Dimension of the underlying geometry (1 for an interval).
    pub fn dim(&self) -> u32 {
        match self.domain {
            Domain::Interval { .. } => 1,
            Domain::Radial { dim, .. } => dim,
        }
    }

    pub fn is_radial(&self) -> bool {
        matches!(self.domain, Domain::Radial { .. })
    }

    /// Nodes carrying the homogeneous Dirichlet condition. The centre of a
    /// radial grid is a symmetry point, not a boundary.
    pub fn is_fixed(&self, j: usize) -> bool {
        match self.domain {
            Domain::Interval { .. } => j == 0 || j + 1 == self.n(),
            Domain::Radial { .. } => j + 1 == self.n(),
        }
    }

    pub fn free_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n()).filter(move |&j| !self.is_fixed(j))
    }

    /// Nodes that lie strictly inside the domain (excludes both ends, the
    /// centre of a radial grid included).
    pub fn interior_nodes(&self) -> std::ops::Range<usize> {
        1..self.n() - 1
    }

    pub fn slope(&self, values: &[f64], cell: usize) -> f64 {
        (values[cell + 1] - values[cell]) / self.spacing
    }

    /// Nodal gradient: central difference inside, zero at a radial centre,
    /// one-sided at Dirichlet ends.
    pub fn nodal_gradient(&self, values: &[f64], j: usize) -> f64 {
        let n = self.n();
        if j == 0 {
            if self.is_radial() {
                0.0
            } else {
                self.slope(values, 0)
            }
        } else if j + 1 == n {
            self.slope(values, n - 2)
        } else {
            (values[j + 1] - values[j - 1]) / (2.0 * self.spacing)
        }
    }

    /// Same geometry, different resolution.
    pub fn with_nodes(&self, n: usize) -> Result<Grid> {
        Grid::new(self.domain, n)
    }
}

/// Nodal real-valued function on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: Arc<Grid>,
    values: Vec<f64>,
}

impl Field {
    pub fn new(grid: Arc<Grid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n() {
            return Err(Error::InvalidField(format!("expected {} values, got {}", grid.n(), values.len())));
        }
        if let Some(j) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidField(format!("non-finite value at node {j}")));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: &Arc<Grid>) -> Self {
        Self { grid: grid.clone(), values: vec![0.0; grid.n()] }
    }

    pub fn constant(grid: &Arc<Grid>, value: f64) -> Self {
        Self { grid: grid.clone(), values: vec![value; grid.n()] }
    }

    pub fn from_fn(grid: &Arc<Grid>, mut f: impl FnMut(f64) -> f64) -> Self {
        let values = grid.nodes().iter().map(|&x| f(x)).collect();
        Self { grid: grid.clone(), values }
    }

    /// Like [`Field::from_fn`] but with the Dirichlet nodes forced to zero.
    pub fn dirichlet_from_fn(grid: &Arc<Grid>, f: impl FnMut(f64) -> f64) -> Self {
        let mut field = Self::from_fn(grid, f);
        field.clamp_boundary();
        field
    }

    pub(crate) fn from_raw(grid: &Arc<Grid>, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.n());
        Self { grid: grid.clone(), values }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn clamp_boundary(&mut self) {
        for j in 0..self.grid.n() {
            if self.grid.is_fixed(j) {
                self.values[j] = 0.0;
            }
        }
    }

    pub fn is_dirichlet(&self) -> bool {
        (0..self.grid.n()).all(|j| !self.grid.is_fixed(j) || self.values[j] == 0.0)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field { grid: self.grid.clone(), values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub fn scaled(&self, t: f64) -> Field {
        self.map(|v| t * v)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn sup_distance(&self, other: &Field) -> f64 {
        self.values.iter().zip(&other.values).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Piecewise-linear interpolation onto another grid of the same domain.
    pub fn resample(&self, target: &Arc<Grid>) -> Field {
        let src = &self.grid;
        let x0 = src.nodes()[0];
        let h = src.spacing();
        let last = src.n() - 1;
        let values = target
            .nodes()
            .iter()
            .map(|&x| {
                let t = ((x - x0) / h).clamp(0.0, last as f64);
                let i = (t.floor() as usize).min(last - 1);
                let frac = t - i as f64;
                (1.0 - frac) * self.values[i] + frac * self.values[i + 1]
            })
            .collect();
        let mut out = Field { grid: target.clone(), values };
        if self.is_dirichlet() {
            out.clamp_boundary();
        }
        out
    }

    /// CSV with header `x,value` and 17 significant digits, LF endings.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,value\n");
        for (x, v) in self.grid.nodes().iter().zip(&self.values) {
            let _ = writeln!(out, "{x:.16e},{v:.16e}");
        }
        out
    }

    /// Reads the `x,value` format back; `#` lines are comments. Node
    /// coordinates must match the grid.
    pub fn from_csv(grid: &Arc<Grid>, text: &str) -> Result<Field> {
        let values = parse_csv_values(text)?;
        if values.len() != grid.n() {
            return Err(Error::InvalidField(format!("csv has {} rows, grid has {} nodes", values.len(), grid.n())));
        }
        for ((x, _), node) in values.iter().zip(grid.nodes()) {
            if (x - node).abs() > 1e-9 * (1.0 + node.abs()) {
                return Err(Error::InvalidField(format!("csv node {x} does not match grid node {node}")));
            }
        }
        Field::new(grid.clone(), values.into_iter().map(|(_, v)| v).collect())
    }
}

/// Parses `x,value` rows, skipping the header and `#` comment lines.
pub fn parse_csv_values(text: &str) -> Result<Vec<(f64, f64)>> {
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("x,") {
            continue;
        }
        let mut parts = line.split(',');
        let parse = |s: Option<&str>| -> Result<f64> {
            s.map(str::trim).and_then(|s| s.parse::<f64>().ok()).ok_or_else(|| Error::InvalidField(format!("line {}: malformed row `{line}`", lineno + 1)))
        };
        let x = parse(parts.next())?;
        let v = parse(parts.next())?;
        rows.push((x, v));
    }
    Ok(rows)
}

fn check_exponent(p: f64) -> Result<()> {
    if !(p.is_finite() && p > 1.0) {
        return Err(Error::InvalidParameter(format!("exponent must exceed 1, got {p}")));
    }
    Ok(())
}

/// `(Σ_cells w |slope|^p)^{1/p}`, the W^{1,p}_0 norm with the radial factor.
pub fn norm_w1p(f: &Field, p: f64) -> Result<f64> {
    check_exponent(p)?;
    Ok(gradient_power_integral(f.grid(), f.values(), p).powf(1.0 / p))
}

/// `Σ_cells w |slope|^p`.
pub fn gradient_power_integral(grid: &Grid, values: &[f64], p: f64) -> f64 {
    grid.cell_weights().iter().enumerate().map(|(i, w)| w * grid.slope(values, i).abs().powf(p)).sum()
}

/// Lumped-quadrature L^q norm; `q = f64::INFINITY` gives the max norm.
pub fn norm_lq(f: &Field, q: f64) -> Result<f64> {
    if q.is_nan() || q < 1.0 {
        return Err(Error::InvalidParameter(format!("L^q norm needs q >= 1, got {q}")));
    }
    if q.is_infinite() {
        return Ok(f.sup_norm());
    }
    let s: f64 = f.grid().node_weights().iter().zip(f.values()).map(|(w, v)| w * v.abs().powf(q)).sum();
    Ok(s.powf(1.0 / q))
}

/// Lumped-quadrature integral of nodal values.
pub fn integrate(f: &Field) -> f64 {
    f.grid().node_weights().iter().zip(f.values()).map(|(w, v)| w * v).sum()
}
