//! Tridiagonal kernels: symmetric LDLᵀ with definiteness detection, LU with
//! partial pivoting for indefinite systems, and a bordered solve.

/// Symmetric tridiagonal matrix; `off[i]` couples rows `i` and `i + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymTridiag {
    pub diag: Vec<f64>,
    pub off: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Ldlt {
    d: Vec<f64>,
    l: Vec<f64>,
}

impl SymTridiag {
    pub fn zeros(n: usize) -> Self {
        Self { diag: vec![0.0; n], off: vec![0.0; n.saturating_sub(1)] }
    }

    pub fn n(&self) -> usize {
        self.diag.len()
    }

    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        let n = self.n();
        let mut y = vec![0.0; n];
        for i in 0..n {
            let mut acc = self.diag[i] * x[i];
            if i > 0 {
                acc += self.off[i - 1] * x[i - 1];
            }
            if i + 1 < n {
                acc += self.off[i] * x[i + 1];
            }
            y[i] = acc;
        }
        y
    }

    /// Factorization without pivoting; `None` unless every pivot is positive.
    pub fn ldlt(&self) -> Option<Ldlt> {
        let n = self.n();
        let mut d = vec![0.0; n];
        let mut l = vec![0.0; n.saturating_sub(1)];
        for i in 0..n {
            let mut di = self.diag[i];
            if i > 0 {
                di -= l[i - 1] * l[i - 1] * d[i - 1];
            }
            if !(di > 0.0) || !di.is_finite() {
                return None;
            }
            d[i] = di;
            if i + 1 < n {
                l[i] = self.off[i] / di;
            }
        }
        Some(Ldlt { d, l })
    }

    /// Gaussian elimination with partial pivoting. Returns `None` for an
    /// exactly singular matrix.
    pub fn solve_lu(&self, rhs: &[f64]) -> Option<Vec<f64>> {
        Tridiag::from_sym(self).solve(rhs)
    }
}

impl Ldlt {
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let n = self.d.len();
        let mut x = rhs.to_vec();
        for i in 1..n {
            x[i] -= self.l[i - 1] * x[i - 1];
        }
        for i in 0..n {
            x[i] /= self.d[i];
        }
        for i in (0..n.saturating_sub(1)).rev() {
            x[i] -= self.l[i] * x[i + 1];
        }
        x
    }
}

/// General tridiagonal matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Tridiag {
    pub lower: Vec<f64>,
    pub diag: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Tridiag {
    pub fn from_sym(m: &SymTridiag) -> Self {
        Self { lower: m.off.clone(), diag: m.diag.clone(), upper: m.off.clone() }
    }

    pub fn solve(&self, rhs: &[f64]) -> Option<Vec<f64>> {
        let n = self.diag.len();
        if n == 0 {
            return Some(Vec::new());
        }
        let mut dl = self.lower.clone();
        let mut d = self.diag.clone();
        let mut du = self.upper.clone();
        let mut b = rhs.to_vec();
        // after elimination dl[i] holds the second superdiagonal of row i
        for i in 0..n - 1 {
            if d[i].abs() >= dl[i].abs() {
                if d[i] == 0.0 {
                    return None;
                }
                let fact = dl[i] / d[i];
                d[i + 1] -= fact * du[i];
                b[i + 1] -= fact * b[i];
                dl[i] = 0.0;
            } else {
                let fact = d[i] / dl[i];
                d[i] = dl[i];
                let temp = d[i + 1];
                d[i + 1] = du[i] - fact * temp;
                if i + 2 < n {
                    dl[i] = du[i + 1];
                    du[i + 1] = -fact * dl[i];
                } else {
                    dl[i] = 0.0;
                }
                du[i] = temp;
                let tb = b[i];
                b[i] = b[i + 1];
                b[i + 1] = tb - fact * b[i + 1];
            }
        }
        if d[n - 1] == 0.0 {
            return None;
        }
        let mut x = b;
        x[n - 1] /= d[n - 1];
        if n >= 2 {
            x[n - 2] = (x[n - 2] - du[n - 2] * x[n - 1]) / d[n - 2];
        }
        for i in (0..n.saturating_sub(2)).rev() {
            x[i] = (x[i] - du[i] * x[i + 1] - dl[i] * x[i + 2]) / d[i];
        }
        if x.iter().all(|v| v.is_finite()) {
            Some(x)
        } else {
            None
        }
    }
}

/// Solves `[[J, b], [cᵀ, d]] [x; y] = [f; g]` by block elimination with one
/// step of iterative refinement, which stays accurate close to a singular `J`.
pub fn solve_bordered(j: &SymTridiag, b: &[f64], c: &[f64], d: f64, f: &[f64], g: f64) -> Option<(Vec<f64>, f64)> {
    let once = |f: &[f64], g: f64| -> Option<(Vec<f64>, f64)> {
        let xf = j.solve_lu(f)?;
        let xb = j.solve_lu(b)?;
        let denom = d - dot(c, &xb);
        if denom == 0.0 || !denom.is_finite() {
            return None;
        }
        let y = (g - dot(c, &xf)) / denom;
        let x: Vec<f64> = xf.iter().zip(&xb).map(|(a, bb)| a - y * bb).collect();
        Some((x, y))
    };
    let (mut x, mut y) = once(f, g)?;
    let jx = j.mul(&x);
    let rf: Vec<f64> = (0..f.len()).map(|i| f[i] - jx[i] - b[i] * y).collect();
    let rg = g - dot(c, &x) - d * y;
    if let Some((dx, dy)) = once(&rf, rg) {
        for (xi, di) in x.iter_mut().zip(&dx) {
            *xi += di;
        }
        y += dy;
    }
    Some((x, y))
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn sup(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
