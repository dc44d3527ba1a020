use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use conic_core::cone::{CenterMode, ConeSpec, DiscretizedCone, LinkSpec, SampleSpec, DEFAULT_EPSILON};
use conic_core::covering::{patch_dirichlet, patch_neumann, Exponent, GoodCovering, PatchingInput};
use conic_core::graph::{IsoMode, Order, WeightedGraph};
use conic_core::hypersurface::{
    bp_crepant_chain, bp_table_csv, cy_link_condition, weighted_degree, BrieskornPham, Monomial, WeightedPolynomial,
};
use conic_core::spectral::{
    gaussian_fit, greens_function, heat_kernel, indicial_spectrum, kernel_csv, scale_invariant_poincare_scan, Boundary,
    GreenOptions, HeatOptions,
};
use conic_core::toric::{
    cross_section, gorenstein_covector, invariant_a_both, kahler_class, maximal_triangulation,
    support_function_check, FanSpec, ToricCone,
};
use conic_core::Error;

use crate::GlobalArgs;

/// Exit-code class of a failed run.
#[derive(Debug)]
pub enum Failure {
    /// Bad input or a violated precondition (exit 2).
    Input(String),
    /// Anything else (exit 1).
    Internal(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Convergence(_) => Failure::Internal(e.to_string()),
            _ => Failure::Input(e.to_string()),
        }
    }
}

type Res<T> = std::result::Result<T, Failure>;

/// A finished analysis: the JSON report, side files for plotting and any
/// warnings for stderr.
pub struct Output {
    pub report: Value,
    pub files: Vec<(String, String)>,
    pub warnings: Vec<String>,
    /// Printed instead of the report when no output directory is given.
    pub stdout: Option<String>,
}

fn envelope(command: &str, config: Value, result: Value) -> Value {
    json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "config": config,
        "result": result,
    })
}

fn globals(g: &GlobalArgs) -> Value {
    json!({ "seed": g.seed, "tol_rel": g.tol_rel, "enum_cap": g.enum_cap })
}

fn to_value<T: Serialize>(v: &T) -> Res<Value> {
    serde_json::to_value(v).map_err(|e| Failure::Internal(e.to_string()))
}

fn read(path: &Path) -> Res<String> {
    fs::read_to_string(path).map_err(|e| Failure::Input(format!("cannot read {}: {e}", path.display())))
}

pub fn emit(out: &Output, dir: Option<&Path>) -> Res<()> {
    let text = serde_json::to_string_pretty(&out.report).map_err(|e| Failure::Internal(e.to_string()))? + "\n";
    match dir {
        None => {
            print!("{}", out.stdout.as_deref().unwrap_or(&text));
            Ok(())
        }
        Some(dir) => {
            let io = |e: std::io::Error| Failure::Internal(format!("writing {}: {e}", dir.display()));
            fs::create_dir_all(dir).map_err(io)?;
            fs::write(dir.join("report.json"), text).map_err(io)?;
            for (name, body) in &out.files {
                fs::write(dir.join(name), body).map_err(io)?;
            }
            Ok(())
        }
    }
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct GraphArgs {
    /// Graph JSON.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Order ν of the isoperimetric constants (default ∞).
    #[arg(long)]
    pub nu: Option<f64>,
}

pub fn run_graph(a: &GraphArgs, g: &GlobalArgs) -> Res<Output> {
    let graph = WeightedGraph::from_json(&read(&a.input)?)?;
    if graph.is_empty() {
        return Err(Failure::Input("graph has no vertices".into()));
    }
    let cut = graph.cheeger_cut(g.enum_cap)?;
    let lambda = graph.spectral_gap()?;
    let report = graph.cheeger_gap_report()?;
    let order = match a.nu {
        Some(nu) => Order::new(nu)?,
        None => Order::Infinite,
    };
    let all: Vec<usize> = (0..graph.len()).collect();
    let iso_d = graph.isoperimetric_constant_within(&all, order, IsoMode::Dirichlet, g.enum_cap)?;
    let iso_n = graph.isoperimetric_constant_within(&all, order, IsoMode::Neumann, g.enum_cap)?;
    let mut warnings = Vec::new();
    if !report.upper_ok {
        warnings.push(format!("upper_ok=false: spectral gap {} exceeds Cheeger constant {}", report.lambda, report.h));
    }
    if !report.lower_ok {
        warnings.push(format!("lower_ok=false: h²/(8m₀) exceeds the spectral gap {}", report.lambda));
    }
    let result = json!({
        "vertices": graph.len(),
        "edges": graph.edges().len(),
        "total_measure": graph.total_measure(),
        "connected": graph.is_connected(),
        "cheeger": { "h": cut.ratio(), "cut": to_value(&cut)? },
        "spectral_gap": lambda,
        "m0": report.m0,
        "cheeger_gap": to_value(&report)?,
        "isoperimetric": { "nu": a.nu, "dirichlet": iso_d, "neumann": iso_n },
    });
    let config = json!({ "args": to_value(a)?, "global": globals(g) });
    Ok(Output { report: envelope("graph", config, result), files: vec![], warnings, stdout: None })
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct CoverArgs {
    /// Covering JSON.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Local constant S_c; enables the patched constants.
    #[arg(long = "s-c")]
    pub s_c: Option<f64>,
    #[arg(long, default_value_t = 2.0)]
    pub p: f64,
    /// Exponent ν (default ∞).
    #[arg(long)]
    pub nu: Option<f64>,
}

pub fn run_cover(a: &CoverArgs, g: &GlobalArgs) -> Res<Output> {
    let cov = GoodCovering::from_json(&read(&a.input)?)?;
    let validation = cov.validate();
    let mut warnings = Vec::new();
    let graph_part = if validation.is_good() {
        let graph = cov.associated_graph()?;
        let gap = if graph.len() > 1 { graph.spectral_gap()? } else { f64::INFINITY };
        if gap == 0.0 {
            warnings.push("associated graph is disconnected; no patched constants".to_string());
        }
        let patching = match a.s_c {
            Some(s_c) if gap > 0.0 => {
                let input = PatchingInput {
                    s_c,
                    s_d: 1.0 / gap,
                    q1: validation.q1 as u32,
                    q2: validation.q2,
                    p: a.p,
                    nu: a.nu.map_or(Exponent::Infinite, Exponent::Finite),
                };
                json!({ "input": to_value(&input)?, "dirichlet": patch_dirichlet(&input)?, "neumann": patch_neumann(&input)? })
            }
            _ => Value::Null,
        };
        json!({
            "associated_graph": { "vertices": graph.len(), "edges": graph.edges().len(), "spectral_gap": gap, "s_d": 1.0 / gap },
            "patching": patching,
        })
    } else {
        warnings.push(format!("covering is not good: {} violation(s)", validation.violations.len()));
        json!({ "associated_graph": null, "patching": null })
    };
    let result = json!({
        "atoms": cov.atoms().len(),
        "cells": cov.cells().len(),
        "good": validation.is_good(),
        "validation": to_value(&validation)?,
        "associated_graph": graph_part["associated_graph"],
        "patching": graph_part["patching"],
    });
    let config = json!({ "args": to_value(a)?, "global": globals(g) });
    Ok(Output { report: envelope("cover", config, result), files: vec![], warnings, stdout: None })
}

/// Reads a cone spec, resolving a graph link file against the spec's
/// directory.
fn load_cone(path: &Path) -> Res<(ConeSpec, DiscretizedCone)> {
    let mut spec: ConeSpec =
        serde_json::from_str(&read(path)?).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    if let LinkSpec::Graph { file } = &mut spec.link {
        let p = Path::new(file.as_str());
        if p.is_relative() {
            if let Some(dir) = path.parent() {
                *file = dir.join(p).to_string_lossy().into_owned();
            }
        }
    }
    let cone = DiscretizedCone::from_spec(&spec)?;
    Ok((spec, cone))
}

fn cone_summary(cone: &DiscretizedCone) -> Value {
    json!({
        "dim": cone.dim(),
        "vertices": cone.len(),
        "rings": cone.rings(),
        "apex": cone.apex().is_some(),
        "r_inner": cone.r_inner(),
        "r_outer": cone.r_outer(),
        "total_measure": cone.total_measure(),
        "link_volume": cone.link().volume(),
        "max_edge_length": cone.max_edge_length(),
    })
}

fn nearest_ring(cone: &DiscretizedCone, r: f64) -> usize {
    (0..cone.rings())
        .min_by(|&a, &b| (cone.ring_radius(a) - r).abs().total_cmp(&(cone.ring_radius(b) - r).abs()))
        .unwrap_or(0)
}

/// Explicit vertex, else node 0 of the ring nearest `radius`, else the apex
/// (or the middle ring without one).
fn pick_source(cone: &DiscretizedCone, source: Option<usize>, radius: Option<f64>) -> Res<usize> {
    if let Some(s) = source {
        if s >= cone.len() {
            return Err(Failure::Input(format!("source {s} out of range (cone has {} vertices)", cone.len())));
        }
        return Ok(s);
    }
    if let Some(r) = radius {
        return Ok(cone.vertex(nearest_ring(cone, r), 0));
    }
    Ok(cone.apex().unwrap_or_else(|| cone.vertex(cone.rings() / 2, 0)))
}

#[derive(ValueEnum, Debug, Clone, Copy, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Centers {
    Any,
    Base,
    Remote,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct ConeArgs {
    /// Cone spec JSON.
    #[arg(long = "in", alias = "cone")]
    pub input: PathBuf,
    /// Sampled balls per scan.
    #[arg(long, default_value_t = 100)]
    pub samples: usize,
    #[arg(long, value_enum, default_value_t = Centers::Any)]
    pub centers: Centers,
    #[arg(long = "r-lo")]
    pub r_lo: Option<f64>,
    #[arg(long = "r-hi")]
    pub r_hi: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    pub epsilon: f64,
    /// Also scan `Λ(B(x, δr), B(x, r))/r²` with this δ.
    #[arg(long)]
    pub poincare_delta: Option<f64>,
    /// Complex dimension m for the indicial spectrum of the link.
    #[arg(long)]
    pub indicial_m: Option<u32>,
    /// Number of nonzero link eigenvalues to use.
    #[arg(long, default_value_t = 8)]
    pub indicial_count: usize,
}

pub fn run_cone(a: &ConeArgs, g: &GlobalArgs) -> Res<Output> {
    let (spec, cone) = load_cone(&a.input)?;
    let base = cone.apex().unwrap_or(0);
    let span = cone.r_outer() - cone.r_inner();
    let sample = SampleSpec {
        count: a.samples,
        seed: g.seed,
        radius_range: (a.r_lo.unwrap_or(span / 32.0), a.r_hi.unwrap_or(span / 4.0)),
        centers: match a.centers {
            Centers::Any => CenterMode::Any,
            Centers::Base => CenterMode::Base,
            Centers::Remote => CenterMode::Remote,
        },
        base,
        epsilon: a.epsilon,
    };
    let doubling = cone.doubling_scan(&sample)?;
    let field = cone.radius_field(base);
    let poincare = match a.poincare_delta {
        Some(d) => to_value(&scale_invariant_poincare_scan(&cone, &sample, d)?)?,
        None => Value::Null,
    };
    let indicial = match a.indicial_m {
        Some(m) => {
            let eig = cone.link().laplacian_eigenvalues()?;
            let nonzero: Vec<f64> = eig.into_iter().filter(|&l| l > 1e-9).take(a.indicial_count).collect();
            to_value(&indicial_spectrum(m, &nonzero)?)?
        }
        None => Value::Null,
    };
    let mut csv = String::from("center,radius,ratio,case\n");
    for s in &doubling.samples {
        csv.push_str(&format!("{},{},{},{}\n", s.center, s.radius, s.ratio, to_value(&s.case)?.as_str().unwrap_or("")));
    }
    let result = json!({
        "cone": cone_summary(&cone),
        "sampling": to_value(&sample)?,
        "doubling": to_value(&doubling)?,
        "radius_field_constant": field.equivalence_constant,
        "poincare": poincare,
        "indicial": indicial,
    });
    let config = json!({ "args": to_value(a)?, "cone": to_value(&spec)?, "global": globals(g) });
    Ok(Output {
        report: envelope("cone", config, result),
        files: vec![("doubling.csv".into(), csv)],
        warnings: vec![],
        stdout: None,
    })
}

#[derive(ValueEnum, Debug, Clone, Copy, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryArg {
    Neumann,
    Radiating,
}

impl BoundaryArg {
    fn resolve(self, cone: &DiscretizedCone) -> Boundary {
        match self {
            BoundaryArg::Neumann => Boundary::Neumann,
            BoundaryArg::Radiating => Boundary::radiating(cone),
        }
    }
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct HeatArgs {
    /// Cone spec JSON.
    #[arg(long = "in", alias = "cone")]
    pub input: PathBuf,
    /// Sample times, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub times: Vec<f64>,
    /// Source vertex (default: the apex).
    #[arg(long)]
    pub source: Option<usize>,
    /// Put the source on the ring nearest this radius.
    #[arg(long)]
    pub source_radius: Option<f64>,
    #[arg(long, value_enum, default_value_t = BoundaryArg::Neumann)]
    pub boundary: BoundaryArg,
    #[arg(long, default_value_t = 4)]
    pub steps_per_doubling: usize,
}

pub fn run_heat(a: &HeatArgs, g: &GlobalArgs) -> Res<Output> {
    let (spec, cone) = load_cone(&a.input)?;
    let source = pick_source(&cone, a.source, a.source_radius)?;
    let mut opts = HeatOptions {
        boundary: a.boundary.resolve(&cone),
        steps_per_doubling: a.steps_per_doubling,
        ..HeatOptions::default()
    };
    if let Some(t) = g.tol_rel {
        opts.rel_tol = t;
    }
    let sol = heat_kernel(&cone, source, &a.times, &opts)?;
    let fit = gaussian_fit(&sol.samples, &cone)?;
    let masses: Vec<Value> =
        sol.samples.iter().map(|s| json!({ "t": s.t, "mass": s.mass(cone.measures()) })).collect();
    let mut warnings = Vec::new();
    if !fit.pass {
        warnings.push("Gaussian fit did not pass".to_string());
    }
    let result = json!({
        "cone": cone_summary(&cone),
        "source": source,
        "options": to_value(&opts)?,
        "steps_per_doubling": sol.steps_per_doubling,
        "probe_change": sol.probe_change,
        "masses": masses,
        "fit": to_value(&fit)?,
    });
    let config = json!({ "args": to_value(a)?, "cone": to_value(&spec)?, "global": globals(g) });
    Ok(Output {
        report: envelope("heat", config, result),
        files: vec![("kernel.csv".into(), kernel_csv(&cone, &sol.samples))],
        warnings,
        stdout: None,
    })
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct GreenArgs {
    /// Cone spec JSON (dimension at least 3).
    #[arg(long = "in", alias = "cone")]
    pub input: PathBuf,
    #[arg(long)]
    pub source: Option<usize>,
    #[arg(long)]
    pub source_radius: Option<f64>,
    #[arg(long, value_enum, default_value_t = BoundaryArg::Radiating)]
    pub boundary: BoundaryArg,
}

pub fn run_green(a: &GreenArgs, g: &GlobalArgs) -> Res<Output> {
    let (spec, cone) = load_cone(&a.input)?;
    let source = pick_source(&cone, a.source, a.source_radius)?;
    let mut opts = GreenOptions { boundary: Some(a.boundary.resolve(&cone)), ..GreenOptions::default() };
    if let Some(t) = g.tol_rel {
        opts.rel_tol = t;
    }
    let green = greens_function(&cone, source, &opts)?;
    let n = cone.dim() as i32;
    let mut csv = String::from("node,radius,distance,value,scaled\n");
    for (y, v) in green.values.iter().enumerate() {
        let d = cone.distance(source, y);
        csv.push_str(&format!("{},{},{},{:e},{:e}\n", y, cone.radius(y), d, v, v * d.powi(n - 2)));
    }
    let mut warnings = Vec::new();
    if !green.positive {
        warnings.push("Green's function is not positive at every vertex".to_string());
    }
    let result = json!({
        "cone": cone_summary(&cone),
        "source": source,
        "options": to_value(&opts)?,
        "bound_constant": green.bound_constant,
        "bound_witness": green.bound_witness,
        "positive": green.positive,
        "iterations": green.iterations,
    });
    let config = json!({ "args": to_value(a)?, "cone": to_value(&spec)?, "global": globals(g) });
    Ok(Output { report: envelope("green", config, result), files: vec![("green.csv".into(), csv)], warnings, stdout: None })
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct ToricArgs {
    /// Fan JSON.
    #[arg(long = "in", alias = "fan")]
    pub input: PathBuf,
}

pub fn run_toric(a: &ToricArgs, g: &GlobalArgs) -> Res<Output> {
    let fan = FanSpec::from_json(&read(&a.input)?)?;
    let cone = ToricCone::new(fan.rays.clone())?;
    let gor = gorenstein_covector(&cone)?;
    let Some(gamma) = gor.covector.clone() else {
        return Err(Failure::Input(format!(
            "cone is not Gorenstein: {}",
            serde_json::to_string(&gor.obstruction).unwrap_or_default()
        )));
    };
    let section = cross_section(&cone, &gamma)?;
    let tri = maximal_triangulation(&section)?;
    let values = fan.values_for(&tri)?;
    let support = support_function_check(&tri, &values)?;
    let class = kahler_class(&tri, &values)?;
    let a_inv = invariant_a_both(&tri, &values, fan.omega_link)?;
    if !a_inv.agree {
        return Err(Failure::Internal(format!(
            "invariant A disagrees between methods: {} vs {}",
            a_inv.divisor_sum, a_inv.polytope_volume
        )));
    }
    let mut warnings = Vec::new();
    if !tri.basic {
        warnings.push("triangulation is not basic".to_string());
    }
    let result = json!({
        "gorenstein": to_value(&gor)?,
        "cross_section": to_value(&section)?,
        "interior_points": section.interior_points().len(),
        "triangulation": to_value(&tri)?,
        "support": to_value(&support)?,
        "kahler_class": to_value(&class)?,
        "invariant_a": to_value(&a_inv)?,
    });
    let config = json!({ "args": to_value(a)?, "fan": to_value(&fan)?, "global": globals(g) });
    Ok(Output { report: envelope("toric", config, result), files: vec![], warnings, stdout: None })
}

#[derive(ValueEnum, Debug, Clone, Copy, Serialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct BpArgs {
    /// m for the family z₀^m+…+z_{m−1}^m+z_m^k.
    #[arg(long)]
    pub m: Option<u64>,
    /// Inclusive range of k, e.g. `3..12`.
    #[arg(long = "k-range")]
    pub k_range: Option<String>,
    /// Brieskorn–Pham exponents a₀,…,a_m.
    #[arg(long, value_delimiter = ',')]
    pub exponents: Option<Vec<u64>>,
    /// Weights of a weighted polynomial, with `--monomials`.
    #[arg(long, value_delimiter = ',')]
    pub weights: Option<Vec<u64>>,
    /// Exponent vectors separated by `;`, e.g. `3,0;0,2`.
    #[arg(long)]
    pub monomials: Option<String>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

fn parse_range(s: &str) -> Res<(u64, u64)> {
    let bad = || Failure::Input(format!("bad range {s:?}, expected a..b"));
    let (lo, hi) = s.split_once("..").ok_or_else(bad)?;
    let hi = hi.strip_prefix('=').unwrap_or(hi);
    let lo: u64 = lo.trim().parse().map_err(|_| bad())?;
    let hi: u64 = hi.trim().parse().map_err(|_| bad())?;
    if lo > hi {
        return Err(bad());
    }
    Ok((lo, hi))
}

fn link_check(p: &WeightedPolynomial) -> Res<Value> {
    let (d, homogeneous) = weighted_degree(p)?;
    let cy = if homogeneous { Some(cy_link_condition(p)?) } else { None };
    Ok(json!({
        "weights": p.weights(),
        "degree": d,
        "homogeneous": homogeneous,
        "weight_sum": p.weight_sum(),
        "cy_link_condition": cy,
    }))
}

pub fn run_bp(a: &BpArgs, g: &GlobalArgs) -> Res<Output> {
    let mut result = serde_json::Map::new();
    let mut stdout = None;
    let mut files = Vec::new();
    match (a.m, &a.k_range) {
        (Some(m), Some(range)) => {
            let (lo, hi) = parse_range(range)?;
            if m < 2 || lo < 2 {
                return Err(Failure::Input("need m ≥ 2 and k ≥ 2".into()));
            }
            let rows: Vec<_> = (lo..=hi).map(|k| bp_crepant_chain(m, k)).collect();
            let csv = bp_table_csv(m..=m, lo..=hi);
            result.insert("table".into(), to_value(&rows)?);
            if a.format == Format::Csv {
                stdout = Some(csv.clone());
            }
            files.push(("bp.csv".into(), csv));
        }
        (None, None) => {}
        _ => return Err(Failure::Input("--m and --k-range go together".into())),
    }
    if let Some(e) = &a.exponents {
        let bp = BrieskornPham::new(e.clone())?;
        result.insert("brieskorn_pham".into(), link_check(&bp.to_polynomial())?);
    }
    match (&a.weights, &a.monomials) {
        (Some(w), Some(ms)) => {
            let monos = ms
                .split(';')
                .map(|m| {
                    let exponents = m
                        .split(',')
                        .map(|x| x.trim().parse::<u64>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|_| Failure::Input(format!("bad monomial {m:?}")))?;
                    Ok(Monomial { exponents, coefficient: 1.0 })
                })
                .collect::<Res<Vec<_>>>()?;
            let p = WeightedPolynomial::new(w.clone(), monos)?;
            result.insert("polynomial".into(), link_check(&p)?);
        }
        (None, None) => {}
        _ => return Err(Failure::Input("--weights and --monomials go together".into())),
    }
    if result.is_empty() {
        return Err(Failure::Input("nothing to do: give --m/--k-range, --exponents or --weights/--monomials".into()));
    }
    let config = json!({ "args": to_value(a)?, "global": globals(g) });
    Ok(Output { report: envelope("bp", config, Value::Object(result)), files, warnings: vec![], stdout })
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct ReportArgs {
    /// Job file: `{"jobs": [{"name": .., "command": .., "args": [..]}]}`;
    /// input paths in `args` are relative to the job file.
    #[arg(long = "in")]
    pub input: PathBuf,
}

#[derive(serde::Deserialize)]
struct JobFile {
    jobs: Vec<Job>,
}

#[derive(serde::Deserialize)]
struct Job {
    name: String,
    command: String,
    #[serde(default)]
    args: Vec<String>,
}

/// Runs every job on the worker pool; job order is preserved in the report.
pub fn run_report(a: &ReportArgs, g: &GlobalArgs, dispatch: impl Fn(Vec<String>) -> Res<Output> + Sync) -> Res<Output> {
    use rayon::prelude::*;
    let file: JobFile =
        serde_json::from_str(&read(&a.input)?).map_err(|e| Failure::Input(format!("{}: {e}", a.input.display())))?;
    let dir = a.input.parent().map(Path::to_path_buf).unwrap_or_default();
    for job in &file.jobs {
        if job.command == "report" {
            return Err(Failure::Input(format!("job {:?}: reports cannot nest", job.name)));
        }
    }
    let entries: Vec<Value> = file
        .jobs
        .par_iter()
        .map(|job| {
            let mut argv = vec!["conic".to_string(), job.command.clone()];
            let mut path_next = false;
            for arg in &job.args {
                if path_next && Path::new(arg).is_relative() {
                    argv.push(dir.join(arg).to_string_lossy().into_owned());
                } else {
                    argv.push(arg.clone());
                }
                path_next = matches!(arg.as_str(), "--in" | "--cone" | "--fan");
            }
            match dispatch(argv) {
                Ok(out) => json!({ "name": job.name, "command": job.command, "exit": 0, "report": out.report, "warnings": out.warnings }),
                Err(Failure::Input(msg)) => json!({ "name": job.name, "command": job.command, "exit": 2, "error": msg }),
                Err(Failure::Internal(msg)) => json!({ "name": job.name, "command": job.command, "exit": 1, "error": msg }),
            }
        })
        .collect();
    let failed = entries.iter().filter(|e| e["exit"] != 0).count();
    let mut warnings = Vec::new();
    if failed > 0 {
        warnings.push(format!("{failed} job(s) failed"));
    }
    let config = json!({ "args": to_value(a)?, "global": globals(g) });
    Ok(Output { report: envelope("report", config, json!({ "jobs": entries, "failed": failed })), files: vec![], warnings, stdout: None })
}
