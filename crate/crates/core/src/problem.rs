//! Problem data and the truncated reaction term of the transformed problem.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::{Field, Grid};
use crate::nonlinearity::{hopf_cole, ReactionKernel};

/// Relative threshold below which a coefficient node counts as zero.
pub const SUPPORT_TOL: f64 = 1e-14;

/// Everything defining `−Δ_p u = λ c |u|^{p−2}u + μ|∇u|^p + k h`, `u = 0`
/// on the boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    pub p: f64,
    pub mu: f64,
    pub lambda: f64,
    /// Scaling of the datum; 1 unless a `k`-family is explored.
    pub k: f64,
    pub c: Field,
    pub h: Field,
    /// Bounds `‖μ⁺‖_∞`, `‖μ⁻‖_∞` for the variable-coefficient coercivity test.
    pub mu_plus: f64,
    pub mu_minus: f64,
}

impl ProblemSpec {
    pub fn new(p: f64, mu: f64, lambda: f64, c: Field, h: Field) -> Result<Self> {
        let spec = Self { p, mu, lambda, k: 1.0, c, h, mu_plus: mu.max(0.0), mu_minus: (-mu).max(0.0) };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p.is_finite() && self.p > 1.0) {
            return Err(Error::InvalidParameter(format!("exponent must exceed 1, got {}", self.p)));
        }
        if !(self.mu.is_finite() && self.mu > 0.0) {
            return Err(Error::InvalidParameter(format!("gradient coefficient must be positive, got {}", self.mu)));
        }
        if !self.lambda.is_finite() {
            return Err(Error::InvalidParameter("lambda must be finite".into()));
        }
        if !(self.k.is_finite() && self.k >= 0.0) {
            return Err(Error::InvalidParameter(format!("datum scaling must be >= 0, got {}", self.k)));
        }
        if !(self.mu_plus >= 0.0 && self.mu_minus >= 0.0) {
            return Err(Error::InvalidParameter("coefficient bounds must be nonnegative".into()));
        }
        if self.c.grid() != self.h.grid() && **self.c.grid() != **self.h.grid() {
            return Err(Error::InvalidParameter("c and h live on different grids".into()));
        }
        if self.c.min() < 0.0 {
            return Err(Error::InvalidParameter("c must be nonnegative".into()));
        }
        if self.c.max() <= 0.0 {
            return Err(Error::InvalidParameter("c must be positive somewhere".into()));
        }
        Ok(())
    }

    pub fn grid(&self) -> &Arc<Grid> {
        self.c.grid()
    }

    pub fn kernel(&self) -> ReactionKernel {
        ReactionKernel::new(self.p, self.mu).expect("validated spec")
    }

    pub fn with_lambda(&self, lambda: f64) -> Self {
        Self { lambda, ..self.clone() }
    }

    pub fn with_k(&self, k: f64) -> Self {
        Self { k, ..self.clone() }
    }

    /// Scaled datum `k h` at node `j`.
    pub fn forcing(&self, j: usize) -> f64 {
        self.k * self.h.values()[j]
    }

    pub fn forcing_field(&self) -> Field {
        self.h.scaled(self.k)
    }

    /// Nodes where `c` is numerically positive.
    pub fn c_support(&self) -> Vec<bool> {
        let cut = SUPPORT_TOL * self.c.max();
        self.c.values().iter().map(|&c| c > cut).collect()
    }

    /// Same data resampled onto a grid of `n` nodes.
    pub fn resampled(&self, n: usize) -> Result<Self> {
        let grid = Arc::new(self.grid().with_nodes(n)?);
        let mut out = self.clone();
        out.c = self.c.resample(&grid);
        out.h = self.h.resample(&grid);
        Ok(out)
    }
}

/// A lower solution of the original problem and its transformed image,
/// which is where the transformed reaction gets frozen.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncationData {
    pub alpha_lambda: Field,
    pub underline_u: Field,
}

impl TruncationData {
    pub fn from_lower(underline_u: Field, p: f64, mu: f64) -> Result<Self> {
        if underline_u.max() > 0.0 {
            return Err(Error::InvalidField("lower solution must be nonpositive".into()));
        }
        let alpha_lambda = hopf_cole(&underline_u, p, mu)?;
        Ok(Self { alpha_lambda, underline_u })
    }

    /// Distance of the floor to the transform threshold, `min(α) + (p−1)/μ`.
    pub fn gap(&self, p: f64, mu: f64) -> f64 {
        self.alpha_lambda.min() + (p - 1.0) / mu
    }
}

/// Nodewise reaction of the transformed problem, frozen below the floor.
#[derive(Debug, Clone)]
pub struct Reaction {
    kernel: ReactionKernel,
    lambda_c: Vec<f64>,
    forcing: Vec<f64>,
    alpha: Vec<f64>,
}

impl Reaction {
    pub fn new(spec: &ProblemSpec, trunc: &TruncationData) -> Self {
        let n = spec.grid().n();
        Self {
            kernel: spec.kernel(),
            lambda_c: spec.c.values().iter().map(|c| spec.lambda * c).collect(),
            forcing: (0..n).map(|j| spec.forcing(j)).collect(),
            alpha: trunc.alpha_lambda.values().to_vec(),
        }
    }

    pub fn kernel(&self) -> &ReactionKernel {
        &self.kernel
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    fn upper(&self, j: usize, s: f64) -> f64 {
        let y = 1.0 + self.kernel.rate() * s;
        self.lambda_c[j] * self.kernel.value(s) + y.powf(self.kernel.p() - 1.0) * self.forcing[j]
    }

    fn upper_primitive(&self, j: usize, s: f64) -> f64 {
        let a = self.kernel.rate();
        let p = self.kernel.p();
        let y = 1.0 + a * s;
        self.lambda_c[j] * self.kernel.primitive(s) + y.powf(p) * self.forcing[j] / (a * p)
    }

    /// Reaction `f(x_j, s)`.
    pub fn f(&self, j: usize, s: f64) -> f64 {
        let alpha = self.alpha[j];
        if s >= alpha {
            self.upper(j, s)
        } else {
            self.upper(j, alpha)
        }
    }

    /// `∂f/∂s`, with the kernel derivative regularized by `eps` when positive.
    pub fn df(&self, j: usize, s: f64, eps: f64) -> f64 {
        if s < self.alpha[j] {
            return 0.0;
        }
        let a = self.kernel.rate();
        let p = self.kernel.p();
        let y = 1.0 + a * s;
        self.lambda_c[j] * self.kernel.derivative_regularized(s, eps) + self.kernel.mu() * y.powf(p - 2.0) * self.forcing[j]
    }

    /// Primitive `F(x_j, s)`; affine continuation below the floor.
    pub fn big_f(&self, j: usize, s: f64) -> f64 {
        let alpha = self.alpha[j];
        if s >= alpha {
            self.upper_primitive(j, s)
        } else {
            self.upper(j, alpha) * (s - alpha) + self.upper_primitive(j, alpha)
        }
    }

    /// `∂f/∂λ`, used by continuation in `λ`.
    pub fn df_dlambda(&self, j: usize, s: f64, c: f64) -> f64 {
        c * self.kernel.value(s.max(self.alpha[j]))
    }

    /// `∂f/∂k` for a unit datum `h`.
    pub fn df_dk(&self, j: usize, s: f64, h: f64) -> f64 {
        let y = 1.0 + self.kernel.rate() * s.max(self.alpha[j]);
        y.powf(self.kernel.p() - 1.0) * h
    }
}

pub fn f_lambda(j: usize, s: f64, spec: &ProblemSpec, trunc: &TruncationData) -> f64 {
    Reaction::new(spec, trunc).f(j, s)
}

#[allow(non_snake_case)]
pub fn F_lambda(j: usize, s: f64, spec: &ProblemSpec, trunc: &TruncationData) -> f64 {
    Reaction::new(spec, trunc).big_f(j, s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Domain;
    use approx::assert_relative_eq;

    fn setup(lambda: f64, h: f64, alpha: f64) -> (ProblemSpec, TruncationData) {
        let g = Arc::new(Grid::new(Domain::Interval { a: 0.0, b: 1.0 }, 9).unwrap());
        let spec = ProblemSpec::new(2.0, 1.0, lambda, Field::constant(&g, 1.0), Field::constant(&g, h)).unwrap();
        let u = Field::dirichlet_from_fn(&g, |_| (1.0 + alpha).ln());
        (spec, TruncationData::from_lower(u, 2.0, 1.0).unwrap())
    }

    #[test]
    fn spec_examples() {
        let (spec, trunc) = setup(1.0, 0.0, -0.5);
        assert_relative_eq!(f_lambda(3, std::f64::consts::E - 1.0, &spec, &trunc), std::f64::consts::E, max_relative = 1e-15);
        let (spec, trunc) = setup(0.0, 0.0, -0.5);
        for &s in &[-0.5, 0.0, 2.0] {
            assert_eq!(f_lambda(3, s, &spec, &trunc), 0.0);
        }
        let (spec, trunc) = setup(0.0, 0.7, -0.5);
        assert_relative_eq!(F_lambda(3, 0.0, &spec, &trunc), 0.5 * 0.7, max_relative = 1e-15);
    }

    #[test]
    fn seam_is_c1() {
        let (spec, trunc) = setup(2.0, -1.3, -0.6);
        let r = Reaction::new(&spec, &trunc);
        let a = r.alpha()[4];
        assert_relative_eq!(a, -0.6, max_relative = 1e-14);
        let d = 1e-7;
        let fd = (r.big_f(4, a + d) - r.big_f(4, a - d)) / (2.0 * d);
        assert_relative_eq!(fd, r.f(4, a), max_relative = 1e-6);
        assert_eq!(r.f(4, a - 1.0), r.f(4, a));
        let step1 = r.big_f(4, a - 2.0) - r.big_f(4, a - 1.0);
        let step2 = r.big_f(4, a - 3.0) - r.big_f(4, a - 2.0);
        assert_relative_eq!(step1, step2, max_relative = 1e-12);
    }

    #[test]
    fn validation() {
        let g = Arc::new(Grid::new(Domain::Interval { a: 0.0, b: 1.0 }, 9).unwrap());
        let h = Field::constant(&g, 1.0);
        assert!(ProblemSpec::new(2.0, 1.0, 0.0, Field::zeros(&g), h.clone()).is_err());
        assert!(ProblemSpec::new(2.0, 1.0, 0.0, Field::constant(&g, -1.0), h.clone()).is_err());
        assert!(ProblemSpec::new(2.0, -1.0, 0.0, Field::constant(&g, 1.0), h).is_err());
    }
}
