//! The scalar reaction kernel that appears after the Hopf-Cole change of
//! unknown, its primitive, and the transform pair itself.
//!
//! Throughout, `a = μ/(p−1)` and `Z = ln(1 + a s)`. On `s > −1/a`
//!
//! ```text
//! g(s)  = a^{1−p} |Z|^{p−2} Z e^{(p−1)Z}
//! g'(s) = (p−1) a^{2−p} |Z|^{p−2} (1 + Z) e^{(p−2)Z}
//! G(s)  = a^{−p} ∫_0^Z sgn(z)|z|^{p−1} e^{pz} dz
//! ```
//!
//! and `g ≡ 0` below. The primitive is evaluated with a positive power
//! series for `Z > 0` and with the regularized lower incomplete gamma
//! function for `Z < 0`, so it is accurate to rounding on the whole line.

use statrs::function::gamma::{gamma_lr, ln_gamma};

use crate::error::{Error, Result};
use crate::grid::Field;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReactionKernel {
    p: f64,
    mu: f64,
    a: f64,
}

impl ReactionKernel {
    pub fn new(p: f64, mu: f64) -> Result<Self> {
        if !(p.is_finite() && p > 1.0) {
            return Err(Error::InvalidParameter(format!("exponent must exceed 1, got {p}")));
        }
        if !(mu.is_finite() && mu > 0.0) {
            return Err(Error::InvalidParameter(format!("gradient coefficient must be positive, got {mu}")));
        }
        Ok(Self { p, mu, a: mu / (p - 1.0) })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    /// `μ/(p−1)`.
    pub fn rate(&self) -> f64 {
        self.a
    }

    /// `−(p−1)/μ`; the kernel is identically zero at and below this point.
    pub fn threshold(&self) -> f64 {
        -1.0 / self.a
    }

    fn log_arg(&self, s: f64) -> Option<f64> {
        let y = 1.0 + self.a * s;
        (y > 0.0).then(|| y.ln())
    }

    pub fn value(&self, s: f64) -> f64 {
        let Some(z) = self.log_arg(s) else { return 0.0 };
        let p = self.p;
        if z == 0.0 {
            return 0.0;
        }
        self.a.powf(1.0 - p) * z.abs().powf(p - 2.0) * z * ((p - 1.0) * z).exp()
    }

    /// Exact derivative; infinite at `s = 0` when `p < 2`, zero on the flat
    /// branch and at the threshold.
    pub fn derivative(&self, s: f64) -> f64 {
        self.derivative_regularized(s, 0.0)
    }

    /// Derivative with `|Z|^{p−2}` replaced by `(Z² + ε²)^{(p−2)/2}`.
    pub fn derivative_regularized(&self, s: f64, eps: f64) -> f64 {
        let Some(z) = self.log_arg(s) else { return 0.0 };
        let p = self.p;
        let weight = if eps > 0.0 { (z * z + eps * eps).powf(0.5 * (p - 2.0)) } else { z.abs().powf(p - 2.0) };
        let d = (p - 1.0) * self.a.powf(2.0 - p) * weight * (1.0 + z) * ((p - 2.0) * z).exp();
        if d.is_nan() {
            0.0
        } else {
            d
        }
    }

    /// `G(s) = ∫_0^s g`.
    pub fn primitive(&self, s: f64) -> f64 {
        let p = self.p;
        let scale = self.a.powf(-p);
        match self.log_arg(s) {
            None => scale * negative_branch_limit(p),
            Some(z) if z > 0.0 => scale * positive_branch(p, z),
            Some(z) if z < 0.0 => {
                let x = -p * z;
                if x.is_infinite() {
                    scale * negative_branch_limit(p)
                } else {
                    scale * negative_branch_limit(p) * gamma_lr(p, x)
                }
            }
            Some(_) => 0.0,
        }
    }

    /// `H(s) = g(s) s / p − G(s)`.
    pub fn homogeneity_defect(&self, s: f64) -> f64 {
        self.value(s) * s / self.p - self.primitive(s)
    }
}

/// `∫_0^∞ t^{p−1} e^{−pt} dt = Γ(p) p^{−p}`.
fn negative_branch_limit(p: f64) -> f64 {
    (ln_gamma(p) - p * p.ln()).exp()
}

/// `∫_0^z t^{p−1} e^{pt} dt = Σ_k p^k z^{p+k} / (k! (p+k))` for `z > 0`.
fn positive_branch(p: f64, z: f64) -> f64 {
    let x = p * z;
    // term_k = x^k / k!, accumulated in scaled form
    let mut term = 1.0;
    let mut sum = 1.0 / p;
    let mut k = 0usize;
    loop {
        k += 1;
        term *= x / k as f64;
        let add = term / (p + k as f64);
        sum += add;
        if !sum.is_finite() {
            return f64::INFINITY;
        }
        if (k as f64) > x && add <= 1e-17 * sum {
            break;
        }
        if k > 100_000 {
            break;
        }
    }
    z.powf(p) * sum
}

pub fn g_fun(s: f64, p: f64, mu: f64) -> Result<f64> {
    Ok(ReactionKernel::new(p, mu)?.value(s))
}

pub fn g_prime(s: f64, p: f64, mu: f64) -> Result<f64> {
    Ok(ReactionKernel::new(p, mu)?.derivative(s))
}

#[allow(non_snake_case)]
pub fn G_fun(s: f64, p: f64, mu: f64) -> Result<f64> {
    Ok(ReactionKernel::new(p, mu)?.primitive(s))
}

#[allow(non_snake_case)]
pub fn H_fun(s: f64, p: f64, mu: f64) -> Result<f64> {
    Ok(ReactionKernel::new(p, mu)?.homogeneity_defect(s))
}

/// Closed-form primitive for `p = 2`, `μ = 1` on `s > −1`.
pub fn primitive_p2_mu1(s: f64) -> f64 {
    if s <= -1.0 {
        return 0.25;
    }
    let y = 1.0 + s;
    0.5 * y * y * y.ln() - 0.25 * s * s - 0.5 * s
}

/// `v = (e^{a u} − 1)/a` nodewise.
pub fn hopf_cole(u: &Field, p: f64, mu: f64) -> Result<Field> {
    let kernel = ReactionKernel::new(p, mu)?;
    let a = kernel.rate();
    let v = u.map(|x| (a * x).exp_m1() / a);
    if v.values().iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidField("transform overflowed".into()));
    }
    Ok(v)
}

/// `u = ln(1 + a v)/a` nodewise; rejects nodes at or below `−1/a`.
pub fn hopf_cole_inv(v: &Field, p: f64, mu: f64) -> Result<Field> {
    let kernel = ReactionKernel::new(p, mu)?;
    let a = kernel.rate();
    if let Some(j) = v.values().iter().position(|&x| a * x <= -1.0) {
        return Err(Error::InvalidField(format!("value {} at node {j} is at or below the transform threshold {}", v.values()[j], kernel.threshold())));
    }
    Ok(v.map(|x| (a * x).ln_1p() / a))
}

/// Scalar versions used inside solvers.
pub fn to_transformed(u: f64, a: f64) -> f64 {
    (a * u).exp_m1() / a
}

pub fn from_transformed(v: f64, a: f64) -> f64 {
    (a * v).ln_1p() / a
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::E;

    #[test]
    fn spec_values() {
        assert_eq!(g_fun(0.0, 3.0, 1.0).unwrap(), 0.0);
        assert_relative_eq!(g_fun(E - 1.0, 2.0, 1.0).unwrap(), E, max_relative = 1e-15);
        assert_eq!(g_fun(-5.0, 2.0, 1.0).unwrap(), 0.0);
        assert_eq!(G_fun(0.0, 2.5, 0.7).unwrap(), 0.0);
        assert_eq!(H_fun(0.0, 2.5, 0.7).unwrap(), 0.0);
        let want = E * E / 2.0 - (E - 1.0).powi(2) / 4.0 - (E - 1.0) / 2.0;
        assert_relative_eq!(G_fun(E - 1.0, 2.0, 1.0).unwrap(), want, max_relative = 1e-14);
        assert_relative_eq!(primitive_p2_mu1(E - 1.0), want, max_relative = 1e-15);
    }

    #[test]
    fn closed_form_matches_everywhere_for_p2() {
        let k = ReactionKernel::new(2.0, 1.0).unwrap();
        for i in 0..200 {
            let s = -1.5 + 0.05 * i as f64;
            assert!((k.primitive(s) - primitive_p2_mu1(s)).abs() <= 1e-13 * (1.0 + primitive_p2_mu1(s).abs()), "s={s}");
        }
    }

    #[test]
    fn flat_branch_is_constant() {
        for &(p, mu) in &[(1.5, 0.5), (2.0, 1.0), (3.0, 2.0)] {
            let k = ReactionKernel::new(p, mu).unwrap();
            let t = k.threshold();
            let g0 = k.primitive(t - 1.0);
            assert_eq!(k.primitive(t - 5.0), g0);
            assert_relative_eq!(k.primitive(t + 1e-300), g0, max_relative = 1e-12);
            assert_eq!(k.homogeneity_defect(t - 1.0), -g0);
            assert_eq!(k.derivative(t - 0.5), 0.0);
        }
    }

    #[test]
    fn sign_pattern() {
        let k = ReactionKernel::new(3.0, 1.0).unwrap();
        assert!(k.value(0.3) > 0.0);
        assert!(k.value(-0.3) < 0.0);
        assert!(k.primitive(-0.3) > 0.0);
        assert!(k.primitive(0.3) > 0.0);
    }

    #[test]
    fn derivative_matches_difference_quotient() {
        for &(p, mu) in &[(1.5, 0.5), (2.0, 1.0), (3.0, 2.0), (4.0, 1.0)] {
            let k = ReactionKernel::new(p, mu).unwrap();
            for &s in &[-0.4, -0.1, 0.2, 1.0, 3.0] {
                let d = 1e-6;
                let fd = (k.value(s + d) - k.value(s - d)) / (2.0 * d);
                assert_relative_eq!(k.derivative(s), fd, max_relative = 1e-6);
                let fd = (k.primitive(s + d) - k.primitive(s - d)) / (2.0 * d);
                assert_relative_eq!(k.value(s), fd, max_relative = 1e-7, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn transform_examples() {
        let g = std::sync::Arc::new(crate::grid::Grid::new(crate::grid::Domain::Interval { a: 0.0, b: 1.0 }, 9).unwrap());
        let z = Field::zeros(&g);
        assert_eq!(hopf_cole(&z, 2.0, 1.0).unwrap(), z);
        let u = Field::dirichlet_from_fn(&g, |_| 2f64.ln());
        let v = hopf_cole(&u, 2.0, 1.0).unwrap();
        for j in g.interior_nodes() {
            assert_relative_eq!(v.values()[j], 1.0, max_relative = 1e-15);
        }
        let bad = Field::dirichlet_from_fn(&g, |_| -1.0);
        assert!(hopf_cole_inv(&bad, 2.0, 1.0).is_err());
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(ReactionKernel::new(1.0, 1.0).is_err());
        assert!(ReactionKernel::new(2.0, 0.0).is_err());
    }
}
