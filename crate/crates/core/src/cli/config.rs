//! Scenario files: `key = value` lines under `[problem]` and `[run]`
//! headers, `#` comments. Coefficients are `const <v>`, `expr <table>` or
//! `file <csv>`; a table is `x0: a0 a1 ...; x1: b0 b1 ...`, the polynomial
//! `a0 + a1 x + ...` on `[x0, x1)` and so on.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use sha2::{Digest, Sha256};

use crate::grid::{parse_csv_values, Domain, Field, Grid};
use crate::problem::ProblemSpec;

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    /// 1-based line, 0 when the error concerns a missing key.
    pub line: usize,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.line == 0 {
            write!(f, "{}", self.message)
        } else {
            write!(f, "line {}: {}", self.line, self.message)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subcommand {
    Solve,
    Branch,
    Regions,
    Spectra,
    Verify,
}

impl Subcommand {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "solve" => Self::Solve,
            "branch" => Self::Branch,
            "regions" => Self::Regions,
            "spectra" => Self::Spectra,
            "verify" => Self::Verify,
            _ => return None,
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Solve => "solve",
            Self::Branch => "branch",
            Self::Regions => "regions",
            Self::Spectra => "spectra",
            Self::Verify => "verify",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Coefficient {
    Const(f64),
    /// Breakpoints with polynomial coefficients in increasing degree.
    Expr(Vec<(f64, Vec<f64>)>),
    File(PathBuf),
}

#[derive(Debug, Clone)]
pub struct RunBlock {
    pub subcommand: Subcommand,
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
    /// Continuation step; defaults depend on the parameter.
    pub step: Option<f64>,
    /// Region-diagram columns on each side of the first eigenvalue.
    pub samples: usize,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub spec: ProblemSpec,
    pub lambda_range: Option<(f64, f64)>,
    pub k_range: Option<(f64, f64)>,
    pub c: Coefficient,
    pub h: Coefficient,
    pub run: RunBlock,
    /// Hex SHA-256 of the configuration text and coefficient files.
    pub hash: String,
}

const PROBLEM_KEYS: &[&str] = &["p", "mu", "lambda", "lambda_range", "k", "k_range", "c", "h", "domain", "n"];
const RUN_KEYS: &[&str] = &["subcommand", "tol", "max_iter", "seed", "out", "step", "samples"];

fn parse_f64(s: &str) -> Option<f64> {
    s.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

fn parse_pair(s: &str) -> Option<(f64, f64)> {
    let parts: Vec<&str> = s.split_whitespace().collect();
    match parts.as_slice() {
        [a, b] => Some((parse_f64(a)?, parse_f64(b)?)),
        _ => None,
    }
}

fn parse_coefficient(s: &str) -> Result<Coefficient, String> {
    let s = s.trim();
    let (kind, rest) = s.split_once(char::is_whitespace).unwrap_or((s, ""));
    let rest = rest.trim();
    match kind {
        "const" => parse_f64(rest).map(Coefficient::Const).ok_or_else(|| format!("bad constant `{rest}`")),
        "expr" => {
            let mut pieces = Vec::new();
            for seg in rest.split(';').map(str::trim).filter(|x| !x.is_empty()) {
                let (x0, coeffs) = seg.split_once(':').ok_or_else(|| format!("segment `{seg}` lacks `x0:`"))?;
                let x0 = parse_f64(x0).ok_or_else(|| format!("bad breakpoint `{x0}`"))?;
                let cs: Option<Vec<f64>> = coeffs.split_whitespace().map(parse_f64).collect();
                let cs = cs.filter(|c| !c.is_empty()).ok_or_else(|| format!("bad coefficients `{coeffs}`"))?;
                pieces.push((x0, cs));
            }
            if pieces.is_empty() {
                return Err("empty expression table".into());
            }
            if pieces.windows(2).any(|w| w[1].0 <= w[0].0) {
                return Err("breakpoints must increase".into());
            }
            Ok(Coefficient::Expr(pieces))
        }
        "file" if !rest.is_empty() => Ok(Coefficient::File(PathBuf::from(rest))),
        _ => Err(format!("coefficient must be `const`, `expr` or `file`, got `{s}`")),
    }
}

fn parse_domain(s: &str) -> Result<Domain, String> {
    let parts: Vec<&str> = s.split_whitespace().collect();
    match parts.as_slice() {
        ["interval", a, b] => Ok(Domain::Interval { a: parse_f64(a).ok_or("bad interval end")?, b: parse_f64(b).ok_or("bad interval end")? }),
        ["radial", r, d] => Ok(Domain::Radial { radius: parse_f64(r).ok_or("bad radius")?, dim: d.parse().map_err(|_| "bad dimension")? }),
        _ => Err(format!("domain must be `interval a b` or `radial R N`, got `{s}`")),
    }
}

fn eval_table(pieces: &[(f64, Vec<f64>)], x: f64) -> f64 {
    let idx = pieces.iter().rposition(|(x0, _)| x >= *x0).unwrap_or(0);
    pieces[idx].1.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

/// Nodal values of a coefficient; files are linearly interpolated.
fn sample(coef: &Coefficient, grid: &Arc<Grid>, base: &Path, bytes: &mut Vec<u8>) -> Result<Field, String> {
    match coef {
        Coefficient::Const(v) => Ok(Field::constant(grid, *v)),
        Coefficient::Expr(pieces) => Ok(Field::from_fn(grid, |x| eval_table(pieces, x))),
        Coefficient::File(path) => {
            let full = base.join(path);
            let text = std::fs::read_to_string(&full).map_err(|e| format!("cannot read {}: {e}", full.display()))?;
            bytes.extend_from_slice(text.as_bytes());
            let rows = parse_csv_values(&text).map_err(|e| e.to_string())?;
            if rows.len() < 2 || rows.windows(2).any(|w| w[1].0 <= w[0].0) {
                return Err(format!("{}: need at least two rows with increasing x", full.display()));
            }
            Ok(Field::from_fn(grid, |x| {
                let i = rows.partition_point(|r| r.0 <= x).clamp(1, rows.len() - 1);
                let ((x0, y0), (x1, y1)) = (rows[i - 1], rows[i]);
                let t = ((x - x0) / (x1 - x0)).clamp(0.0, 1.0);
                y0 + t * (y1 - y0)
            }))
        }
    }
}

/// Parses and validates a scenario; coefficient files are resolved against `base`.
pub fn parse_config_at(text: &str, base: &Path) -> Result<Scenario, Vec<ConfigError>> {
    let mut errors = Vec::new();
    let mut section = String::new();
    let mut problem: BTreeMap<&str, (usize, String)> = BTreeMap::new();
    let mut run: BTreeMap<&str, (usize, String)> = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(name) = content.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            section = name.trim().to_string();
            if section != "problem" && section != "run" {
                errors.push(ConfigError { line, message: format!("unknown section [{section}]") });
            }
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            errors.push(ConfigError { line, message: format!("expected `key = value`, got `{content}`") });
            continue;
        };
        let key = key.trim();
        let (table, known) = match section.as_str() {
            "problem" => (&mut problem, PROBLEM_KEYS),
            "run" => (&mut run, RUN_KEYS),
            _ => {
                errors.push(ConfigError { line, message: "key outside a [problem] or [run] section".into() });
                continue;
            }
        };
        let Some(k) = known.iter().find(|k| **k == key) else {
            errors.push(ConfigError { line, message: format!("unknown key `{key}` in [{section}]") });
            continue;
        };
        if table.insert(k, (line, value.trim().to_string())).is_some() {
            errors.push(ConfigError { line, message: format!("duplicate key `{key}`") });
        }
    }

    let num = |table: &BTreeMap<&str, (usize, String)>, key: &str, errors: &mut Vec<ConfigError>| -> Option<f64> {
        let (line, v) = table.get(key)?;
        let parsed = parse_f64(v);
        if parsed.is_none() {
            errors.push(ConfigError { line: *line, message: format!("`{key}` must be a finite number, got `{v}`") });
        }
        parsed
    };
    let line_of = |table: &BTreeMap<&str, (usize, String)>, key: &str| table.get(key).map(|x| x.0).unwrap_or(0);

    let p = num(&problem, "p", &mut errors);
    let mu = num(&problem, "mu", &mut errors);
    let lambda = num(&problem, "lambda", &mut errors);
    let k = num(&problem, "k", &mut errors).unwrap_or(1.0);
    for key in ["p", "mu", "c", "h", "domain", "n"] {
        if !problem.contains_key(key) {
            errors.push(ConfigError { line: 0, message: format!("missing key `{key}` in [problem]") });
        }
    }
    let range = |key: &str, errors: &mut Vec<ConfigError>| -> Option<(f64, f64)> {
        let (line, v) = problem.get(key)?;
        let r = parse_pair(v).filter(|(a, b)| a != b);
        if r.is_none() {
            errors.push(ConfigError { line: *line, message: format!("`{key}` must be two distinct numbers") });
        }
        r
    };
    let lambda_range = range("lambda_range", &mut errors);
    let k_range = range("k_range", &mut errors);
    let coef = |key: &str, errors: &mut Vec<ConfigError>| -> Option<Coefficient> {
        let (line, v) = problem.get(key)?;
        parse_coefficient(v).map_err(|m| errors.push(ConfigError { line: *line, message: m })).ok()
    };
    let c = coef("c", &mut errors);
    let h = coef("h", &mut errors);
    let domain = problem.get("domain").and_then(|(line, v)| parse_domain(v).map_err(|m| errors.push(ConfigError { line: *line, message: m })).ok());
    let n = problem
        .get("n")
        .and_then(|(line, v)| v.parse::<usize>().map_err(|_| errors.push(ConfigError { line: *line, message: format!("`n` must be a node count, got `{v}`") })).ok());

    let subcommand = match run.get("subcommand") {
        None => {
            errors.push(ConfigError { line: 0, message: "missing key `subcommand` in [run]".into() });
            None
        }
        Some((line, v)) => {
            let s = Subcommand::parse(v);
            if s.is_none() {
                errors.push(ConfigError { line: *line, message: format!("unknown subcommand `{v}`") });
            }
            s
        }
    };
    let tol = num(&run, "tol", &mut errors).unwrap_or(1e-9);
    if tol <= 0.0 {
        errors.push(ConfigError { line: line_of(&run, "tol"), message: "`tol` must be positive".into() });
    }
    let count = |key: &str, default: usize, errors: &mut Vec<ConfigError>| -> usize {
        match run.get(key) {
            None => default,
            Some((line, v)) => v.parse().unwrap_or_else(|_| {
                errors.push(ConfigError { line: *line, message: format!("`{key}` must be a nonnegative integer") });
                default
            }),
        }
    };
    let max_iter = count("max_iter", 800, &mut errors);
    let seed = count("seed", 0, &mut errors) as u64;
    let samples = count("samples", 8, &mut errors);
    let step = num(&run, "step", &mut errors);
    if step == Some(0.0) {
        errors.push(ConfigError { line: line_of(&run, "step"), message: "`step` must be nonzero".into() });
    }
    let out = run.get("out").map(|(_, v)| PathBuf::from(v));

    if let Some(sub) = subcommand {
        let branch = sub == Subcommand::Branch;
        if lambda_range.is_some() && !branch {
            errors.push(ConfigError { line: line_of(&problem, "lambda_range"), message: format!("`lambda_range` requires the branch subcommand, not {}", sub.name()) });
        }
        if k_range.is_some() && !branch {
            errors.push(ConfigError { line: line_of(&problem, "k_range"), message: format!("`k_range` requires the branch subcommand, not {}", sub.name()) });
        }
        if branch && problem.contains_key("lambda_range") == problem.contains_key("k_range") {
            errors.push(ConfigError { line: 0, message: "branch needs exactly one of `lambda_range` and `k_range`".into() });
        }
    }
    if lambda.is_some() && lambda_range.is_some() {
        errors.push(ConfigError { line: line_of(&problem, "lambda"), message: "`lambda` and `lambda_range` are exclusive".into() });
    }
    if problem.contains_key("k") && k_range.is_some() {
        errors.push(ConfigError { line: line_of(&problem, "k"), message: "`k` and `k_range` are exclusive".into() });
    }

    if !errors.is_empty() {
        return Err(errors);
    }
    let (p, mu, c, h, domain, n, subcommand) = (p.unwrap(), mu.unwrap(), c.unwrap(), h.unwrap(), domain.unwrap(), n.unwrap(), subcommand.unwrap());
    let grid = match Grid::new(domain, n) {
        Ok(g) => Arc::new(g),
        Err(e) => {
            let line = if n < 4 { line_of(&problem, "n") } else { line_of(&problem, "domain") };
            return Err(vec![ConfigError { line, message: e.to_string() }]);
        }
    };
    let mut bytes = text.as_bytes().to_vec();
    let c_field = sample(&c, &grid, base, &mut bytes).map_err(|m| vec![ConfigError { line: line_of(&problem, "c"), message: m }])?;
    let h_field = sample(&h, &grid, base, &mut bytes).map_err(|m| vec![ConfigError { line: line_of(&problem, "h"), message: m }])?;
    if h_field.values().iter().any(|v| !v.is_finite()) {
        return Err(vec![ConfigError { line: line_of(&problem, "h"), message: "h has non-finite values".into() }]);
    }
    let start_lambda = lambda.or(lambda_range.map(|r| r.0)).unwrap_or(0.0);
    let spec = ProblemSpec::new(p, mu, start_lambda, c_field, h_field).map_err(|e| {
        let msg = e.to_string();
        let key = if msg.contains("c must") {
            "c"
        } else if msg.contains("exponent") {
            "p"
        } else if msg.contains("gradient coefficient") {
            "mu"
        } else {
            "lambda"
        };
        vec![ConfigError { line: line_of(&problem, key), message: msg }]
    })?;
    let start_k = k_range.map(|r| r.0).unwrap_or(k);
    if start_k < 0.0 || k_range.is_some_and(|r| r.1 < 0.0) {
        let key = if k_range.is_some() { "k_range" } else { "k" };
        return Err(vec![ConfigError { line: line_of(&problem, key), message: "datum scaling must be >= 0".into() }]);
    }
    let spec = spec.with_k(start_k);
    let hash = Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect();
    Ok(Scenario { spec, lambda_range, k_range, c, h, run: RunBlock { subcommand, tol, max_iter, seed, out, step, samples }, hash })
}

/// [`parse_config_at`] with coefficient files resolved against the working directory.
pub fn parse_config(text: &str) -> Result<Scenario, Vec<ConfigError>> {
    parse_config_at(text, Path::new("."))
}
