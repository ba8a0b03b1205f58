//! Command-line front end: problem files, dispatch and report emission.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::cpmap::KrausFamily;
use crate::ergodic::{
    canonical_decomposition, classify_solution, fixed_point_space, wold_decomposition,
};
use crate::error::{Error, Result};
use crate::fock::build_fock;
use crate::invariants::{euler_characteristic, star_curvature, CurvatureOptions, CurvatureReport};
use crate::numerics::{c64, ComplexMatrix, HermitianOperator, IterationOptions, Tolerance};
use crate::poisson::{
    build_kernel, intertwining_residual, intertwining_top_defect, kernel_gram, KernelLevel,
};
use crate::similarity::{
    find_contractive_similarity, find_pure_contractive_similarity,
    find_strict_contraction_similarity, find_unital_similarity, polynomial_bound_checks,
    SimilarityCertificate, Verdict,
};

/// Matrix as rows of `[re, im]` pairs.
pub type EncodedMatrix = Vec<Vec<[f64; 2]>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreationSpec {
    pub generators: usize,
    pub level: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToleranceSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub atol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rtol: Option<f64>,
}

/// On-disk problem description. Either `kraus` (with `dim`) or `creation`
/// (the creation operators of a truncated Fock space) gives the family.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kraus: Option<Vec<EncodedMatrix>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub creation: Option<CreationSpec>,
    #[serde(rename = "D", default, skip_serializing_if = "Option::is_none")]
    pub d: Option<EncodedMatrix>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<ToleranceSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Problem {
    pub family: KrausFamily,
    /// `D`, the identity when the file has none.
    pub d: HermitianOperator,
    pub d_given: bool,
    pub tolerance: ToleranceSpec,
    pub level: Option<usize>,
    pub radius: Option<f64>,
    /// Truncation level when the family was given as creation operators.
    pub creation_level: Option<usize>,
    /// SHA-256 of the file contents.
    pub digest: String,
}

pub fn encode_matrix(m: &ComplexMatrix) -> EncodedMatrix {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect())
        .collect()
}

pub fn decode_matrix(rows: &EncodedMatrix, what: &str) -> Result<ComplexMatrix> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|row| row.len() != c) {
        return Err(Error::MalformedInput(format!("{what}: rows of unequal length")));
    }
    let mut m = ComplexMatrix::zeros(r, c);
    for (i, row) in rows.iter().enumerate() {
        for (j, &[re, im]) in row.iter().enumerate() {
            if !(re.is_finite() && im.is_finite()) {
                return Err(Error::MalformedInput(format!("{what}: non-finite entry")));
            }
            m[(i, j)] = c64(re, im);
        }
    }
    Ok(m)
}

fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn check_generator_marker(n: &Value, count: usize) -> Result<()> {
    match n.as_u64() {
        Some(v) if v as usize == count => Ok(()),
        Some(v) => Err(Error::MalformedInput(format!(
            "n = {v} but {count} Kraus operators were given"
        ))),
        None => Err(Error::MalformedInput(format!(
            "n must be a finite generator count, found {n}; infinite families are not supported"
        ))),
    }
}

impl ProblemFile {
    pub fn into_problem(self, digest: String) -> Result<Problem> {
        let (family, creation_level) = match (&self.kraus, &self.creation) {
            (Some(_), Some(_)) => {
                return Err(Error::MalformedInput(
                    "give either \"kraus\" or \"creation\", not both".into(),
                ))
            }
            (None, None) => {
                return Err(Error::MalformedInput("missing \"kraus\"".into()));
            }
            (Some(kraus), None) => {
                let dim = self
                    .dim
                    .ok_or_else(|| Error::MalformedInput("missing \"dim\"".into()))?;
                let mut ops = Vec::with_capacity(kraus.len());
                for (i, enc) in kraus.iter().enumerate() {
                    let m = decode_matrix(enc, &format!("kraus[{i}]"))?;
                    if m.shape() != (dim, dim) {
                        return Err(Error::MalformedInput(format!(
                            "kraus[{i}] has shape {}x{}, expected {dim}x{dim}",
                            m.nrows(),
                            m.ncols()
                        )));
                    }
                    ops.push(m);
                }
                (KrausFamily::new(ops)?, None)
            }
            (None, Some(spec)) => {
                let fock = build_fock(spec.generators, spec.level, crate::fock::DEFAULT_DIM_CAP)?;
                let family = fock.as_kraus_family();
                if let Some(dim) = self.dim {
                    if dim != family.dim() {
                        return Err(Error::DimensionMismatch {
                            expected: family.dim(),
                            found: dim,
                        });
                    }
                }
                (family, Some(spec.level))
            }
        };
        if let Some(n) = &self.n {
            check_generator_marker(n, family.len())?;
        }
        let (d, d_given) = match &self.d {
            Some(enc) => {
                let m = decode_matrix(enc, "D")?;
                if m.shape() != (family.dim(), family.dim()) {
                    return Err(Error::MalformedInput(format!(
                        "D has shape {}x{}, expected {d}x{d}",
                        m.nrows(),
                        m.ncols(),
                        d = family.dim()
                    )));
                }
                (HermitianOperator::new(m)?, true)
            }
            None => (HermitianOperator::identity(family.dim()), false),
        };
        let tolerance = self.tolerance.clone().unwrap_or_default();
        if let Some(r) = self.radius {
            if !(r > 0.0 && r <= 1.0) {
                return Err(Error::MalformedInput(format!("radius {r} outside (0, 1]")));
            }
        }
        Ok(Problem {
            family,
            d,
            d_given,
            tolerance,
            level: self.level,
            radius: self.radius,
            creation_level,
            digest,
        })
    }
}

impl Problem {
    /// Explicit encoding of the validated problem.
    pub fn to_file(&self) -> ProblemFile {
        ProblemFile {
            dim: Some(self.family.dim()),
            n: None,
            kraus: Some(self.family.operators().iter().map(encode_matrix).collect()),
            creation: None,
            d: self.d_given.then(|| encode_matrix(self.d.matrix())),
            tolerance: (self.tolerance != ToleranceSpec::default()).then(|| self.tolerance.clone()),
            level: self.level.or(self.creation_level),
            radius: self.radius,
        }
    }
}

pub fn parse_problem_str(text: &str) -> Result<Problem> {
    let file: ProblemFile =
        serde_json::from_str(text).map_err(|e| Error::MalformedInput(format!("invalid problem file: {e}")))?;
    file.into_problem(hex_digest(text.as_bytes()))
}

pub fn parse_problem(path: &Path) -> Result<Problem> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_problem_str(&text)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TargetArg {
    Unital,
    Contractive,
    Strict,
    Pure,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Map properties and the classification of D
    Classify,
    /// Canonical decomposition D = B + C
    Decompose,
    /// Wold decomposition from phi^∞(I)
    Wold,
    /// Basis of the fixed-point space
    FixedPoints,
    /// Poisson kernel identities
    Poisson,
    /// Similarity certificate for the chosen target
    Similarity {
        #[arg(long, value_enum)]
        target: TargetArg,
    },
    /// *-curvature and the F invariant
    Curvature,
    /// Euler characteristic
    Euler,
    /// Every report that applies to the input
    CheckAll,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    #[arg(long, global = true)]
    pub input: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value = "text")]
    pub format: Format,
    #[arg(long, global = true)]
    pub tol_atol: Option<f64>,
    #[arg(long, global = true)]
    pub tol_rtol: Option<f64>,
    #[arg(long, global = true)]
    pub max_iter: Option<usize>,
    #[arg(long, global = true)]
    pub level: Option<usize>,
    #[arg(long, global = true)]
    pub radius: Option<f64>,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Exit with status 2 when a verdict is "no"
    #[arg(long, global = true)]
    pub require: bool,
    /// Exit with status 3 when a verdict is "undetermined"
    #[arg(long, global = true)]
    pub strict: bool,
    /// Omit timing and version metadata
    #[arg(long, global = true)]
    pub no_meta: bool,
}

#[derive(Debug, Clone, Parser)]
#[command(name = "cpmaps", version, about = "Analysis of completely positive maps given by Kraus operators")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub global: GlobalArgs,
}

#[derive(Debug, Clone, Serialize)]
pub struct Meta {
    pub version: &'static str,
    pub wall_time_ms: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub command: String,
    pub flags: Value,
    pub input_digest: String,
    pub tolerance: Tolerance,
    pub max_iter: usize,
    pub results: Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub meta: Option<Meta>,
}

pub struct Outcome {
    pub report: Report,
    pub exit_code: i32,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Classify => "classify",
            Command::Decompose => "decompose",
            Command::Wold => "wold",
            Command::FixedPoints => "fixed-points",
            Command::Poisson => "poisson",
            Command::Similarity { .. } => "similarity",
            Command::Curvature => "curvature",
            Command::Euler => "euler",
            Command::CheckAll => "check-all",
        }
    }
}

struct Context<'a> {
    problem: &'a Problem,
    opts: IterationOptions,
    level: Option<usize>,
    radius: Option<f64>,
    seed: u64,
}

fn herm(h: &HermitianOperator) -> Value {
    json!(encode_matrix(h.matrix()))
}

fn columns(basis: &ComplexMatrix) -> Value {
    let cols: Vec<Vec<[f64; 2]>> = (0..basis.ncols())
        .map(|j| basis.column(j).iter().map(|z| [z.re, z.im]).collect())
        .collect();
    json!(cols)
}

fn classify(ctx: &Context) -> Result<Value> {
    let p = ctx.problem;
    let map = p.family.classify(ctx.opts.tol);
    let sol = classify_solution(&p.family, &p.d, ctx.opts)?;
    Ok(json!({
        "map": map,
        "solution": {
            "kind": sol.kind,
            "fixed_residual": sol.fixed_residual,
            "min_eigenvalue": sol.min_eigenvalue,
            "subinvariance_margin": sol.subinvariance_margin,
            "purity_residual": sol.purity_residual,
            "purity_iterations": sol.purity_iterations,
            "row_contraction": sol.witnesses.as_ref().map(|w| json!({
                "row_sum_norm": w.row_sum.norm(),
                "intertwining_residual": w.intertwining_residual,
            })),
        },
    }))
}

fn decompose(ctx: &Context) -> Result<Value> {
    let c = canonical_decomposition(&ctx.problem.family, &ctx.problem.d, ctx.opts)?;
    Ok(json!({
        "fixed_part": herm(&c.b),
        "pure_part": herm(&c.c),
        "iterations": c.iterations,
        "fixed_residual": c.fixed_residual,
        "purity_residual": c.purity_residual,
    }))
}

fn wold(ctx: &Context) -> Result<Value> {
    let w = wold_decomposition(&ctx.problem.family, ctx.opts)?;
    let (m, unit, null_dim) = w.dims();
    Ok(json!({
        "dims": { "m": m, "unit": unit, "null": null_dim },
        "phi_infinity_identity": herm(&w.phi_infinity_i),
        "basis_m": columns(&w.basis_m),
        "basis_unit": columns(&w.basis_unit),
        "basis_null": columns(&w.basis_null),
        "adjoint_invariance_residual": w.adjoint_invariance_residual,
        "direct_invariance_residual": w.direct_invariance_residual,
        "is_projection": w.is_projection,
        "reducing": w.reducing,
    }))
}

fn fixed_points(ctx: &Context) -> Result<Value> {
    let basis = fixed_point_space(&ctx.problem.family, ctx.opts.tol);
    Ok(json!({
        "dimension": basis.len(),
        "basis": basis.iter().map(herm).collect::<Vec<_>>(),
    }))
}

fn poisson(ctx: &Context) -> Result<Value> {
    let p = ctx.problem;
    let r = ctx.radius.unwrap_or(0.5);
    let level = match ctx.level {
        Some(l) => KernelLevel::Fixed(l),
        None => KernelLevel::default(),
    };
    let k = build_kernel(&p.family, &p.d, r, level, ctx.opts)?;
    let gram_residual = (&kernel_gram(&k) - &p.d).norm();
    let allowance = k.tail_bound + 1e-10 * (1.0 + p.d.norm());
    Ok(json!({
        "radius": r,
        "level": k.level(),
        "fock_dim": k.fock().dim(),
        "tail_bound": k.tail_bound,
        "gram_residual": gram_residual,
        "gram_within_bound": gram_residual <= allowance,
        "intertwining_residual": intertwining_residual(&k),
        "intertwining_top_defect": intertwining_top_defect(&k),
        "kernel_norm": k.norm(),
    }))
}

fn certificate(phi: &KrausFamily, target: TargetArg, ctx: &Context) -> SimilarityCertificate {
    let mut cert = match target {
        TargetArg::Unital => find_unital_similarity(phi, ctx.opts.tol),
        TargetArg::Contractive => find_contractive_similarity(phi, ctx.opts),
        TargetArg::Strict => find_strict_contraction_similarity(phi, ctx.opts),
        TargetArg::Pure => find_pure_contractive_similarity(phi, ctx.opts),
    };
    if let (Verdict::Yes, Some(bounds)) = (cert.verdict, cert.bounds) {
        cert.polynomial_checks = polynomial_bound_checks(phi, bounds, ctx.seed);
    }
    cert
}

fn certificate_json(c: &SimilarityCertificate) -> Value {
    json!({
        "target": c.target,
        "verdict": c.verdict,
        "spectral_radius": c.spectral_radius,
        "witness_q": c.witness_q.as_ref().map(herm),
        "bounds": c.bounds.map(|(a, b)| json!({ "a": a, "b": b })),
        "residual": c.residual,
        "route": c.route,
        "obstruction": c.obstruction,
        "candidate": c.candidate.as_ref().map(herm),
        "polynomial_checks": c.polynomial_checks,
        "notes": c.notes,
    })
}

fn curvature_options(ctx: &Context) -> CurvatureOptions {
    let mut o = CurvatureOptions {
        tol: ctx.opts.tol,
        exact_level: ctx.level.or(ctx.problem.creation_level),
        ..Default::default()
    };
    if let Some(k) = ctx.opts_max_iter_override() {
        o.k_max = k;
    }
    o
}

impl Context<'_> {
    fn opts_max_iter_override(&self) -> Option<usize> {
        (self.opts.max_iter != IterationOptions::default().max_iter).then_some(self.opts.max_iter)
    }
}

fn curvature_json(r: &CurvatureReport) -> Value {
    json!({
        "star_curvature": if r.infinite { Value::Null } else { json!(r.star_curvature) },
        "infinite": r.infinite,
        "alpha": r.alpha,
        "branch": r.branch,
        "converged": r.converged,
        "converged_at": r.converged_at,
        "sequence": r.sequence,
        "defect_trace": r.defect_trace,
        "defect_rank": r.defect_rank,
        "defect_norm": r.defect_norm,
        "kernel_crosscheck": r.kernel_crosscheck,
        "f_invariant": [r.alpha, r.star_curvature],
    })
}

fn curvature(ctx: &Context) -> Result<Value> {
    let r = star_curvature(&ctx.problem.family, &ctx.problem.d, &curvature_options(ctx))?;
    Ok(curvature_json(&r))
}

fn euler(ctx: &Context) -> Result<Value> {
    let r = euler_characteristic(&ctx.problem.family, &ctx.problem.d, &curvature_options(ctx))?;
    Ok(serde_json::to_value(r).expect("serializable"))
}

fn section(r: Result<Value>) -> Value {
    match r {
        Ok(v) => json!({ "ok": v }),
        Err(e) => json!({ "error": e.to_string() }),
    }
}

/// Runs one command on a parsed problem; the report excludes metadata.
fn dispatch(command: &Command, ctx: &Context) -> Result<(Value, Vec<Verdict>)> {
    let phi = &ctx.problem.family;
    Ok(match command {
        Command::Classify => (classify(ctx)?, vec![]),
        Command::Decompose => (decompose(ctx)?, vec![]),
        Command::Wold => (wold(ctx)?, vec![]),
        Command::FixedPoints => (fixed_points(ctx)?, vec![]),
        Command::Poisson => (poisson(ctx)?, vec![]),
        Command::Similarity { target } => {
            let c = certificate(phi, *target, ctx);
            (certificate_json(&c), vec![c.verdict])
        }
        Command::Curvature => (curvature(ctx)?, vec![]),
        Command::Euler => (euler(ctx)?, vec![]),
        Command::CheckAll => {
            let mut sim = serde_json::Map::new();
            for (name, t) in [
                ("unital", TargetArg::Unital),
                ("contractive", TargetArg::Contractive),
                ("strict", TargetArg::Strict),
                ("pure", TargetArg::Pure),
            ] {
                sim.insert(name.into(), certificate_json(&certificate(phi, t, ctx)));
            }
            let v = json!({
                "classify": section(classify(ctx)),
                "decompose": section(decompose(ctx)),
                "wold": section(wold(ctx)),
                "fixed_points": section(fixed_points(ctx)),
                "poisson": section(poisson(ctx)),
                "similarity": sim,
                "curvature": section(curvature(ctx)),
                "euler": section(euler(ctx)),
            });
            (v, vec![])
        }
    })
}

fn effective_tolerance(g: &GlobalArgs, p: &Problem) -> Result<Tolerance> {
    let d = Tolerance::default();
    Tolerance::new(
        g.tol_atol.or(p.tolerance.atol).unwrap_or(d.atol),
        g.tol_rtol.or(p.tolerance.rtol).unwrap_or(d.rtol),
    )
}

pub fn run(cli: &Cli) -> Result<Outcome> {
    let start = Instant::now();
    let g = &cli.global;
    let path = g
        .input
        .as_ref()
        .ok_or_else(|| Error::MalformedInput("--input is required".into()))?;
    let problem = parse_problem(path)?;
    let tol = effective_tolerance(g, &problem)?;
    let opts = IterationOptions {
        max_iter: g.max_iter.unwrap_or(IterationOptions::default().max_iter),
        tol,
    };
    let radius = g.radius.or(problem.radius);
    if let Some(r) = radius {
        if !(r > 0.0 && r <= 1.0) {
            return Err(Error::MalformedInput(format!("radius {r} outside (0, 1]")));
        }
    }
    let ctx = Context {
        problem: &problem,
        opts,
        level: g.level.or(problem.level),
        radius,
        seed: g.seed,
    };
    let (results, verdicts) = dispatch(&cli.command, &ctx)?;
    let mut exit_code = 0;
    if g.strict && verdicts.contains(&Verdict::Undetermined) {
        exit_code = 3;
    }
    if g.require && verdicts.contains(&Verdict::No) {
        exit_code = 2;
    }
    let target = match &cli.command {
        Command::Similarity { target } => Some(format!("{target:?}").to_lowercase()),
        _ => None,
    };
    let flags = json!({
        "target": target,
        "level": ctx.level,
        "radius": ctx.radius,
        "seed": g.seed,
        "require": g.require,
        "strict": g.strict,
    });
    let report = Report {
        command: cli.command.name().into(),
        flags,
        input_digest: problem.digest.clone(),
        tolerance: tol,
        max_iter: opts.max_iter,
        results,
        meta: (!g.no_meta).then(|| Meta {
            version: env!("CARGO_PKG_VERSION"),
            wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
        }),
    };
    Ok(Outcome { report, exit_code })
}

pub fn render_json(report: &Report) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("serializable report");
    s.push('\n');
    s
}

fn render_value(out: &mut String, key: &str, v: &Value, indent: usize) {
    let pad = "  ".repeat(indent);
    match v {
        Value::Object(map) => {
            out.push_str(&format!("{pad}{key}:\n"));
            for (k, v) in map {
                render_value(out, k, v, indent + 1);
            }
        }
        Value::Array(items) if items.iter().any(|i| i.is_object()) => {
            out.push_str(&format!("{pad}{key}:\n"));
            for (i, item) in items.iter().enumerate() {
                render_value(out, &format!("[{i}]"), item, indent + 1);
            }
        }
        Value::String(text) => out.push_str(&format!("{pad}{key}: {text}\n")),
        other => out.push_str(&format!("{pad}{key}: {other}\n")),
    }
}

pub fn render_text(report: &Report) -> String {
    let v = serde_json::to_value(report).expect("serializable report");
    let mut out = String::new();
    if let Value::Object(map) = v {
        for (k, v) in &map {
            render_value(&mut out, k, v, 0);
        }
    }
    out
}

/// Parses arguments, runs, prints, and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(outcome) => {
            let text = match cli.global.format {
                Format::Json => render_json(&outcome.report),
                Format::Text => render_text(&outcome.report),
            };
            print!("{text}");
            outcome.exit_code
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
