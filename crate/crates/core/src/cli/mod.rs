//! Scenario runner behind the `plap` binary: dispatch, output files and plots.
//! Every file starts with (or embeds) `plap config_hash=<sha256> seed=<n>`.

pub mod config;
pub mod plot;

use std::fs;
use std::path::{Path, PathBuf};

use log::{error, info, warn};
use serde::Serialize;

pub use config::{parse_config, parse_config_at, Coefficient, ConfigError, RunBlock, Scenario, Subcommand};
use plot::{Plot, Series};

use crate::continuation::{default_lambda_step, region_diagram, trace_k, trace_lambda, ContinuationOptions, RegionOptions};
use crate::error::Error;
use crate::solvers::pipeline::{solve_Plambda, SolveOptions};
use crate::spectra::{gamma1, k0, m_p, m_p_lambda_pm, SpectraOptions, SpectralValue};
use crate::verify::{check_lower_bound, check_uniqueness, default_suite, PropertyStatus};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_SOLVER: i32 = 2;
pub const EXIT_PROPERTY: i32 = 3;

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::NoConvergence(_) | Error::Infeasible(_) => EXIT_SOLVER,
        _ => EXIT_CONFIG,
    }
}

/// Where a run writes and what it stamps on its files.
#[derive(Debug, Clone)]
pub struct RunContext {
    pub out: PathBuf,
    pub seed: u64,
    pub hash: String,
}

impl RunContext {
    pub fn new(scenario: &Scenario, out: Option<PathBuf>, seed: Option<u64>) -> Self {
        Self { out: out.or_else(|| scenario.run.out.clone()).unwrap_or_else(|| PathBuf::from("out")), seed: seed.unwrap_or(scenario.run.seed), hash: scenario.hash.clone() }
    }

    fn stamp(&self) -> String {
        format!("plap config_hash={} seed={}", self.hash, self.seed)
    }

    fn write(&self, name: &str, body: &str) -> Result<PathBuf, Error> {
        let path = self.out.join(name);
        fs::write(&path, body).map_err(|e| Error::Config(format!("cannot write {}: {e}", path.display())))?;
        info!("wrote {}", path.display());
        Ok(path)
    }

    fn csv(&self, name: &str, body: &str) -> Result<PathBuf, Error> {
        self.write(name, &format!("# {}\n{body}", self.stamp()))
    }

    fn json<T: Serialize>(&self, name: &str, data: &T) -> Result<PathBuf, Error> {
        #[derive(Serialize)]
        struct Stamped<'a, T> {
            config_hash: &'a str,
            seed: u64,
            data: &'a T,
        }
        let text = serde_json::to_string_pretty(&Stamped { config_hash: &self.hash, seed: self.seed, data }).map_err(|e| Error::Config(format!("serialization failed: {e}")))?;
        self.write(name, &(text + "\n"))
    }
}

fn solve_options(s: &Scenario) -> SolveOptions {
    SolveOptions { tol: s.run.tol, max_iter: s.run.max_iter, ..Default::default() }
}

#[derive(Serialize)]
struct SolveEntry<'a> {
    lambda: f64,
    k: f64,
    p: f64,
    mu: f64,
    status: &'a str,
    accepted: bool,
    energy: f64,
    sup_norm: f64,
    min_value: f64,
    residual_inf: f64,
    residual_tol: f64,
    local_min: bool,
    file: String,
    lineage: &'a [String],
}

fn run_solve(s: &Scenario, ctx: &RunContext) -> Result<i32, Error> {
    let reports = solve_Plambda(&s.spec, &solve_options(s))?;
    let mut entries = Vec::new();
    for (i, r) in reports.iter().enumerate() {
        let file = format!("solution_{i}.csv");
        if r.solution.values().iter().all(|v| v.is_finite()) {
            ctx.csv(&file, &r.solution.to_csv())?;
        }
        let status = serde_json::to_value(r.status).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default();
        entries.push((status, r, file));
    }
    let json: Vec<SolveEntry> = entries
        .iter()
        .map(|(status, r, file)| SolveEntry {
            lambda: r.lambda,
            k: r.k,
            p: s.spec.p,
            mu: s.spec.mu,
            status,
            accepted: r.accepted(),
            energy: r.energy,
            sup_norm: r.sup_norm,
            min_value: r.min_value,
            residual_inf: r.residual_p,
            residual_tol: r.residual_p_tol,
            local_min: r.local_min,
            file: file.clone(),
            lineage: &r.lineage,
        })
        .collect();
    ctx.json("solve.json", &json)?;
    let accepted = reports.iter().filter(|r| r.accepted()).count();
    println!("{accepted} solution(s) accepted out of {}", reports.len());
    if accepted == 0 {
        for r in &reports {
            eprintln!("{:?}: {}", r.status, r.lineage.join(" | "));
        }
        return Ok(EXIT_SOLVER);
    }
    Ok(EXIT_OK)
}

fn run_branch(s: &Scenario, ctx: &RunContext) -> Result<i32, Error> {
    let opts = ContinuationOptions { tol: s.run.tol, ..Default::default() };
    let branch = if let Some(range) = s.lambda_range {
        let mut step = s.run.step.map(f64::abs).unwrap_or(default_lambda_step(&s.spec)?);
        if range.1 < range.0 {
            step = -step;
        }
        trace_lambda(&s.spec, range, step, &opts)?
    } else {
        let range = s.k_range.expect("validated");
        let step = s.run.step.map(f64::abs).unwrap_or((range.1 - range.0).abs() / 50.0) * (range.1 - range.0).signum();
        trace_k(&s.spec, range, step, &opts)?
    };
    ctx.csv("branch.csv", &branch.to_csv())?;
    ctx.json("branch.json", &branch)?;
    let name = branch.parameter.name();
    let mut plot = Plot {
        title: format!("solution branch in {name}"),
        x_label: name.into(),
        y_label: "sup |u|".into(),
        series: vec![Series { name: "sup |u|".into(), points: branch.points.iter().map(|p| (p.param, p.sup_norm)).collect(), color: "#1f77b4", dashed: false }],
        comment: ctx.stamp(),
        ..Default::default()
    };
    if let Some(f) = &branch.fold {
        plot.vlines.push((f.param, "fold".into()));
    }
    ctx.write("branch.svg", &plot.to_svg())?;
    ctx.write("branch.gp", &plot.gnuplot("branch.csv", &[(1, 4, "sup |u|")]))?;
    match &branch.fold {
        Some(f) => println!("{} points, fold in [{:.8}, {:.8}]", branch.points.len(), f.window.0, f.window.1),
        None => println!("{} points, no fold", branch.points.len()),
    }
    if branch.truncated {
        warn!("branch truncated: {}", branch.lineage.join(" | "));
    }
    Ok(EXIT_OK)
}

/// `s` columns on each side of `γ₁`: `γ₁ i/(s+1)` and `γ₁ (1 + i/s)`.
pub fn region_samples(g1: f64, s: usize) -> Vec<f64> {
    let below = (1..=s).map(|i| g1 * i as f64 / (s + 1) as f64);
    let above = (1..=s).map(|i| g1 * (1.0 + i as f64 / s as f64));
    below.chain(above).collect()
}

fn run_regions(s: &Scenario, ctx: &RunContext) -> Result<i32, Error> {
    let g1 = gamma1(&s.spec.c, s.spec.p, &SpectraOptions { seed: ctx.seed, ..Default::default() })?.value.as_f64();
    let samples = region_samples(g1, s.run.samples.max(1));
    let mut opts = RegionOptions::default();
    opts.continuation.tol = s.run.tol;
    let d = region_diagram(&s.spec, &samples, &opts)?;
    ctx.csv("regions.csv", &d.to_csv())?;
    ctx.json("regions.json", &d)?;
    let nan = f64::NAN;
    let col = |f: &dyn Fn(&crate::continuation::RegionColumn) -> Option<f64>| -> Vec<(f64, f64)> { d.columns.iter().map(|c| (c.lambda, f(c).unwrap_or(nan))).collect() };
    let mut kbar = vec![(0.0, d.k0)];
    kbar.extend(col(&|c| c.kbar).into_iter().filter(|p| p.0 < d.gamma1));
    let plot = Plot {
        title: "existence regions".into(),
        x_label: "lambda".into(),
        y_label: "k".into(),
        series: vec![
            Series { name: "k bar".into(), points: kbar, color: "#1f77b4", dashed: false },
            Series { name: "k tilde 1".into(), points: col(&|c| c.ktilde1).into_iter().filter(|p| p.0 > d.gamma1).collect(), color: "#d62728", dashed: false },
            Series { name: "k tilde 2".into(), points: col(&|c| c.ktilde2).into_iter().filter(|p| p.0 > d.gamma1).collect(), color: "#2ca02c", dashed: true },
        ],
        vlines: vec![(d.gamma1, "gamma_1".into())],
        yticks: vec![(d.k0, "k_0".into())],
        comment: ctx.stamp(),
    };
    ctx.write("regions.svg", &plot.to_svg())?;
    ctx.write("regions.gp", &plot.gnuplot("regions.csv", &[(1, 2, "k bar"), (1, 3, "k tilde 1"), (1, 4, "k tilde 2")]))?;
    let (a, b, c) = d.monotonicity();
    println!("kbar non-increasing: {a}; ktilde1 non-decreasing: {b}; kbar < k0: {c}");
    let unresolved = d.columns.iter().filter(|c| c.note.is_some()).count();
    if unresolved > 0 {
        warn!("{unresolved} unresolved column(s)");
    }
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct SpectraEntry {
    quantity: String,
    value: SpectralValue,
    iterations: usize,
    residual: Option<f64>,
    seed: u64,
}

fn run_spectra(s: &Scenario, ctx: &RunContext) -> Result<i32, Error> {
    let opts = SpectraOptions { seed: ctx.seed, ..Default::default() };
    let spec = &s.spec;
    let mut out = Vec::new();
    let mut push =
        |r: crate::spectra::SpectralReport| out.push(SpectraEntry { quantity: r.quantity, value: r.value, iterations: r.iterations, residual: Some(r.residual), seed: r.seed });
    push(gamma1(&spec.c, spec.p, &opts)?);
    push(m_p(&spec.forcing_field(), spec.p, spec.mu, &opts)?);
    let (plus, minus) = m_p_lambda_pm(spec, &opts)?;
    push(plus);
    push(minus);
    let k = k0(&spec.h, spec.p, spec.mu, &opts)?;
    out.push(SpectraEntry { quantity: "k0".into(), value: k.value, iterations: k.iterations, residual: None, seed: ctx.seed });
    for e in &out {
        println!("{} = {}", e.quantity, e.value.finite().map(|v| format!("{v:.10}")).unwrap_or("+inf".into()));
    }
    ctx.json("spectra.json", &out)?;
    Ok(EXIT_OK)
}

fn run_verify(s: &Scenario, ctx: &RunContext) -> Result<i32, Error> {
    let mut reports = default_suite(ctx.seed)?;
    let opts = solve_options(s);
    if s.spec.lambda <= 0.0 {
        let mut r = check_uniqueness(&s.spec, 8, ctx.seed, 1e-6, &opts)?;
        r.id = format!("scenario_{}", r.id);
        reports.push(r);
    }
    if s.spec.lambda >= 0.0 {
        let sols: Vec<_> = solve_Plambda(&s.spec, &opts)?.into_iter().filter(|r| r.accepted()).map(|r| r.solution).collect();
        let mut r = check_lower_bound(&s.spec, &sols, &opts)?;
        r.id = format!("scenario_{}", r.id);
        reports.push(r);
    }
    for r in &reports {
        println!("{:<32} {:?}", r.id, r.status);
    }
    ctx.json("verify.json", &reports)?;
    Ok(if reports.iter().any(|r| r.status == PropertyStatus::Fail) { EXIT_PROPERTY } else { EXIT_OK })
}

/// Runs a validated scenario; returns the process exit code.
pub fn run(scenario: &Scenario, ctx: &RunContext) -> i32 {
    if let Err(e) = fs::create_dir_all(&ctx.out) {
        error!("cannot create {}: {e}", ctx.out.display());
        return EXIT_CONFIG;
    }
    let result = match scenario.run.subcommand {
        Subcommand::Solve => run_solve(scenario, ctx),
        Subcommand::Branch => run_branch(scenario, ctx),
        Subcommand::Regions => run_regions(scenario, ctx),
        Subcommand::Spectra => run_spectra(scenario, ctx),
        Subcommand::Verify => run_verify(scenario, ctx),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        exit_code(&e)
    })
}

/// Reads, parses and runs a scenario file, with command-line overrides.
pub fn run_file(path: &Path, subcommand: Option<Subcommand>, seed: Option<u64>, out: Option<PathBuf>) -> i32 {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("cannot read {}: {e}", path.display());
            return EXIT_CONFIG;
        }
    };
    let text = match subcommand {
        Some(sub) => override_subcommand(&text, sub),
        None => text,
    };
    let base = path.parent().unwrap_or(Path::new("."));
    match parse_config_at(&text, base) {
        Ok(s) => run(&s, &RunContext::new(&s, out, seed)),
        Err(errs) => {
            for e in errs {
                eprintln!("{}: {e}", path.display());
            }
            EXIT_CONFIG
        }
    }
}

/// The subcommand given on the command line replaces the one in `[run]`.
fn override_subcommand(text: &str, sub: Subcommand) -> String {
    let mut out = String::new();
    let mut section = "";
    let mut done = false;
    for line in text.lines() {
        let t = line.split('#').next().unwrap_or("").trim();
        if t.starts_with('[') {
            if section == "run" && !done {
                out.push_str(&format!("subcommand = {}\n", sub.name()));
                done = true;
            }
            section = if t == "[run]" { "run" } else { "other" };
        }
        if section == "run" && t.split_once('=').is_some_and(|(k, _)| k.trim() == "subcommand") {
            out.push_str(&format!("subcommand = {}\n", sub.name()));
            done = true;
            continue;
        }
        out.push_str(line);
        out.push('\n');
    }
    if !done {
        if section != "run" {
            out.push_str("[run]\n");
        }
        out.push_str(&format!("subcommand = {}\n", sub.name()));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = "[problem]\np = 2\nmu = 1\nlambda = -1\nc = const 1\nh = const -1\ndomain = interval 0 1\nn = 65\n\n[run]\nsubcommand = solve\n";

    #[test]
    fn subcommand_override_replaces_or_appends() {
        let t = override_subcommand(BASE, Subcommand::Spectra);
        assert_eq!(parse_config(&t).unwrap().run.subcommand, Subcommand::Spectra);
        let no_run = BASE.split("[run]").next().unwrap();
        let t = override_subcommand(no_run, Subcommand::Verify);
        assert_eq!(parse_config(&t).unwrap().run.subcommand, Subcommand::Verify);
    }

    #[test]
    fn solve_writes_stamped_outputs_deterministically() {
        let s = parse_config(BASE).unwrap();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        for dir in [&a, &b] {
            assert_eq!(run(&s, &RunContext::new(&s, Some(dir.path().to_path_buf()), Some(3))), EXIT_OK);
        }
        for f in ["solve.json", "solution_0.csv"] {
            let x = fs::read(a.path().join(f)).unwrap();
            assert_eq!(x, fs::read(b.path().join(f)).unwrap());
            assert!(String::from_utf8(x).unwrap().contains(&s.hash));
        }
        let csv = fs::read_to_string(a.path().join("solution_0.csv")).unwrap();
        assert!(csv.starts_with(&format!("# plap config_hash={} seed=3\n", s.hash)));
    }

    #[test]
    fn samples_straddle_the_eigenvalue() {
        let s = region_samples(10.0, 8);
        assert_eq!(s.len(), 16);
        assert!(s[..8].iter().all(|&l| l > 0.0 && l < 10.0));
        assert!(s[8..].iter().all(|&l| l > 10.0));
        assert_eq!(s[15], 20.0);
    }
}
