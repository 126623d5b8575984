//! Command-line front end: one subcommand per module, CSV or JSON tables,
//! and a manifest next to the output.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adelic::{
    intersect, non_integrability_demo, AdelicArithDivisor, AdelicError, BoundaryDivisor, CauchySequence, DivisorJson,
    RationalFunctionJson,
};
use crate::berkovich::{
    canonical_green, model_green_compare, random_subharmonic_perturbation, slope_rule_holds, BerkTree, Point,
    TreeDivisor, TreeError,
};
use crate::degree::{geometric_coefficient, replay, DegreeError, Param};
use crate::energy::{
    mixed_relative_energy, mixed_trace, polarization_check, relative_energy, AdditivePshTuple, EnergyError, TraceConfig,
    TraceVerdict,
};
use crate::hessian::{
    finite_difference_hessian, hessian_gram, inequality_19, integrand_bound_check, log_grid, stability, verify_bounds,
    FamilyJson, HessianError,
};
use crate::psh1d::{ConvexProfile, ProfileJson};
use crate::rational::{fmt_f64, fmt_q, parse_q, to_f64, Q};

pub const EXIT_INVALID: i32 = 1;
pub const EXIT_TOLERANCE: i32 = 2;
pub const EXIT_PRECONDITION: i32 = 3;

#[derive(Parser, Debug, Clone, Serialize)]
#[command(name = "adelic-energy", version, about = "Relative energies, adelic divisors on P1, Berkovich Green functions")]
pub struct Cli {
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Subcommand, Debug, Clone, Serialize)]
pub enum Command {
    /// Relative and mixed relative energies of additive profile tuples
    Energy(EnergyArgs),
    /// Canonical Green functions on a Berkovich skeleton
    Tree(TreeArgs),
    /// Arithmetic intersection of two (adelic) divisors
    Intersect(IntersectArgs),
    /// Gram Hessian and bound verifiers
    Hessian(HessianArgs),
    /// Degree formula by rewrite replay
    Degree(DegreeArgs),
    /// Demonstrations
    #[command(subcommand)]
    Demo(Demo),
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum EnergyMode {
    Single,
    Mixed,
    Polarization,
    Trace,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct EnergyArgs {
    #[arg(long)]
    pub tuple: PathBuf,
    #[arg(long, value_enum, default_value_t = EnergyMode::Mixed)]
    pub mode: EnergyMode,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TreeCheck {
    Harmonic,
    Slopes,
    Maxprinciple,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct TreeArgs {
    #[arg(long)]
    pub p: u64,
    #[arg(long, allow_hyphen_values = true)]
    pub divisor: String,
    #[arg(long, allow_hyphen_values = true)]
    pub eval: Vec<String>,
    #[arg(long, value_enum)]
    pub check: Option<TreeCheck>,
    /// trials for the maximum-principle check
    #[arg(long, default_value_t = 100)]
    pub trials: u64,
    /// write tree.json here
    #[arg(long)]
    pub emit_tree: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct IntersectArgs {
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long)]
    pub boundary: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct HessianArgs {
    #[arg(long)]
    pub family: PathBuf,
    /// log:lo:hi:n per axis
    #[arg(long, default_value = "log:1e0:1e6:25")]
    pub grid: String,
    #[arg(long, value_delimiter = ',', default_value = "gram,bounds,ineq19,integrand")]
    pub check: Vec<String>,
    #[arg(long, default_value_t = 100_000)]
    pub trials: u64,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct DegreeArgs {
    #[arg(long)]
    pub g: u64,
    #[arg(long, default_value = "1")]
    pub k: String,
    #[arg(long, default_value = "1")]
    pub m: String,
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Subcommand, Debug, Clone, Serialize)]
pub enum Demo {
    /// Truncations of the cusp Green function
    Nonint {
        #[arg(long, default_value_t = 40)]
        nmax: u32,
        #[arg(long, default_value_t = 2048)]
        grid: usize,
    },
}

#[derive(Debug, thiserror::Error)]
#[error("{message}")]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn invalid(m: impl Into<String>) -> CliError {
        CliError { code: EXIT_INVALID, message: m.into() }
    }

    fn tolerance(m: impl Into<String>) -> CliError {
        CliError { code: EXIT_TOLERANCE, message: m.into() }
    }

    fn precondition(m: impl Into<String>) -> CliError {
        CliError { code: EXIT_PRECONDITION, message: m.into() }
    }
}

impl From<EnergyError> for CliError {
    fn from(e: EnergyError) -> CliError {
        match e {
            EnergyError::Shape(_) | EnergyError::Profile(_) => CliError::invalid(e.to_string()),
            _ => CliError::precondition(e.to_string()),
        }
    }
}

impl From<TreeError> for CliError {
    fn from(e: TreeError) -> CliError {
        match e {
            TreeError::EvaluationAtPole(_) | TreeError::NotSubharmonic(_) | TreeError::NotNormalized(_) | TreeError::RaySlopeMismatch(_) => {
                CliError::precondition(e.to_string())
            }
            _ => CliError::invalid(e.to_string()),
        }
    }
}

impl From<AdelicError> for CliError {
    fn from(e: AdelicError) -> CliError {
        match e {
            AdelicError::ToleranceNotReached(_) => CliError::tolerance(e.to_string()),
            AdelicError::Invalid(_) | AdelicError::Profile(_) | AdelicError::BadProfile(_) => CliError::invalid(e.to_string()),
            AdelicError::Tree(t) => t.into(),
            AdelicError::Energy(t) => t.into(),
            _ => CliError::precondition(e.to_string()),
        }
    }
}

impl From<HessianError> for CliError {
    fn from(e: HessianError) -> CliError {
        match e {
            HessianError::Shape(_) | HessianError::BadIndexSets => CliError::invalid(e.to_string()),
            _ => CliError::precondition(e.to_string()),
        }
    }
}

impl From<DegreeError> for CliError {
    fn from(e: DegreeError) -> CliError {
        match e {
            DegreeError::ClosedFormMismatch(..) => CliError::tolerance(e.to_string()),
            _ => CliError::invalid(e.to_string()),
        }
    }
}

/// Output rows; all cells already rendered.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(headers: &[&str]) -> Table {
        Table { headers: headers.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }

    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Csv => {
                let mut s = self.headers.join(",");
                s.push('\n');
                for r in &self.rows {
                    s.push_str(&r.iter().map(|c| csv_cell(c)).collect::<Vec<_>>().join(","));
                    s.push('\n');
                }
                s
            }
            Format::Json => {
                let rows: Vec<serde_json::Map<String, serde_json::Value>> = self
                    .rows
                    .iter()
                    .map(|r| self.headers.iter().cloned().zip(r.iter().map(|c| serde_json::Value::String(c.clone()))).collect())
                    .collect();
                let mut s = serde_json::to_string_pretty(&rows).expect("serializable");
                s.push('\n');
                s
            }
        }
    }
}

fn csv_cell(c: &str) -> String {
    if c.contains(',') || c.contains('"') || c.contains('\n') {
        format!("\"{}\"", c.replace('"', "\"\""))
    } else {
        c.to_string()
    }
}

/// Outcome of a subcommand: the table plus a failure to report after writing it.
pub struct Outcome {
    pub table: Table,
    pub failure: Option<CliError>,
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de)
        .map_err(|e| CliError::invalid(format!("{}: at {}: {}", path.display(), e.path(), e.inner())))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TupleJson {
    phi: Vec<Vec<ProfileJson>>,
    psi: Vec<Vec<ProfileJson>>,
    #[serde(with = "crate::rational::serde_vec_q")]
    degrees: Vec<Q>,
}

fn profiles(rows: Vec<Vec<ProfileJson>>, name: &str) -> Result<Vec<Vec<ConvexProfile>>, CliError> {
    rows.into_iter()
        .enumerate()
        .map(|(j, r)| {
            r.into_iter()
                .enumerate()
                .map(|(i, p)| p.into_profile().map_err(|e| CliError::invalid(format!("{name}[{j}][{i}]: {e}"))))
                .collect()
        })
        .collect()
}

fn run_energy(a: &EnergyArgs) -> Result<Outcome, CliError> {
    let t: TupleJson = read_json(&a.tuple)?;
    let tuple = AdditivePshTuple::new(profiles(t.phi, "phi")?, profiles(t.psi, "psi")?, t.degrees)?;
    let mut table = Table::new(&["mode", "value"]);
    let mut failure = None;
    match a.mode {
        EnergyMode::Single => {
            let v = relative_energy(&tuple.phi()[0], &tuple.psi()[0])?;
            table.push(vec!["single".into(), v.render()]);
        }
        EnergyMode::Mixed => {
            let v = mixed_relative_energy(&tuple)?;
            table.push(vec!["mixed".into(), v.render()]);
        }
        EnergyMode::Polarization => {
            let v = polarization_check(&tuple)?;
            let zero = match &v {
                crate::rational::ExtReal::Exact(q) => num::Zero::is_zero(q),
                other => other.to_f64().abs() <= 1e-9,
            };
            if !zero {
                failure = Some(CliError::tolerance(format!("polarization residual {}", v.render())));
            }
            table.push(vec!["polarization_residual".into(), v.render()]);
        }
        EnergyMode::Trace => {
            table = Table::new(&["c", "value"]);
            let tr = mixed_trace(&tuple, &TraceConfig::default())?;
            for (c, v) in &tr.entries {
                table.push(vec![fmt_q(c), v.render()]);
            }
            let verdict = match &tr.verdict {
                TraceVerdict::Stabilized(v) => format!("stabilized {}", v.render()),
                TraceVerdict::Diverged => "diverged".to_string(),
                TraceVerdict::Unresolved(v) => format!("unresolved {}", v.render()),
            };
            table.push(vec!["verdict".into(), verdict]);
        }
    }
    Ok(Outcome { table, failure })
}

fn run_tree(a: &TreeArgs, seed: u64) -> Result<Outcome, CliError> {
    let d = TreeDivisor::parse(&a.divisor)?;
    let evals: Vec<Point> = a.eval.iter().map(|s| s.parse()).collect::<Result<_, _>>()?;
    let mut pts = d.support();
    for x in &evals {
        if !pts.contains(x) {
            pts.push(x.clone());
        }
    }
    let tree = BerkTree::build_skeleton(a.p, &pts)?;
    if let Some(path) = &a.emit_tree {
        write_file(path, &(serde_json::to_string_pretty(&tree.to_json()).expect("json") + "\n"))?;
    }
    let g = canonical_green(&tree, &d)?;
    let logp = (a.p as f64).ln();
    let mut failure = None;
    let table = match a.check {
        None => {
            let mut t = Table::new(&["x", "value_log_p", "value"]);
            for x in &evals {
                let v = g.eval(x)?;
                t.push(vec![x.to_string(), fmt_q(&v), fmt_f64(to_f64(&v) * logp)]);
            }
            t
        }
        Some(TreeCheck::Harmonic) => {
            let mut t = Table::new(&["vertex", "depth", "laplacian", "expected"]);
            for v in 0..tree.vertices().len() {
                let lap = g.laplacian_at(v);
                let want = if v == 0 { d.degree() } else { Q::from_integer(0.into()) };
                if lap != want {
                    failure = Some(CliError::tolerance(format!("Laplacian {} at vertex {v}", fmt_q(&lap))));
                }
                t.push(vec![format!("v{v}"), fmt_q(&tree.vertices()[v].depth), fmt_q(&lap), fmt_q(&want)]);
            }
            t
        }
        Some(TreeCheck::Slopes) => {
            let ok = slope_rule_holds(&g, &d);
            if !ok {
                failure = Some(CliError::tolerance("slope rule fails"));
            }
            let mut t = Table::new(&["check", "holds"]);
            t.push(vec!["slope_rule".into(), ok.to_string()]);
            t
        }
        Some(TreeCheck::Maxprinciple) => {
            let mut t = Table::new(&["trial", "max_violation"]);
            for k in 0..a.trials {
                let f = random_subharmonic_perturbation(&tree, seed.wrapping_add(k));
                let worst = model_green_compare(&g.add(&f)?, &d)?;
                if worst > Q::from_integer(0.into()) {
                    failure = Some(CliError::tolerance(format!("trial {k} exceeds the canonical Green function")));
                }
                t.push(vec![k.to_string(), fmt_q(&worst)]);
            }
            t
        }
    };
    Ok(Outcome { table, failure })
}

#[derive(Deserialize)]
#[serde(untagged)]
enum DivisorOrSequence {
    Sequence {
        terms: Vec<DivisorJson>,
        #[serde(with = "crate::rational::serde_vec_q")]
        tail_eps: Vec<Q>,
    },
    Model(DivisorJson),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BoundaryJson {
    divisor: DivisorJson,
    #[serde(with = "crate::rational::serde_q")]
    eta: Q,
    mover: RationalFunctionJson,
}

fn load_adelic(path: &Path) -> Result<AdelicArithDivisor, CliError> {
    Ok(match read_json::<DivisorOrSequence>(path)? {
        DivisorOrSequence::Model(d) => AdelicArithDivisor::model(d.into_divisor()?),
        DivisorOrSequence::Sequence { terms, tail_eps } => {
            let terms = terms.into_iter().map(|d| d.into_divisor()).collect::<Result<Vec<_>, _>>()?;
            AdelicArithDivisor { seq: CauchySequence::new(terms, tail_eps)? }
        }
    })
}

fn run_intersect(a: &IntersectArgs) -> Result<Outcome, CliError> {
    let da = load_adelic(&a.a)?;
    let db = load_adelic(&a.b)?;
    let boundary = match &a.boundary {
        Some(p) => {
            let b: BoundaryJson = read_json(p)?;
            let bd = BoundaryDivisor::new(b.divisor.into_divisor()?, b.eta, &b.mover.into_function()?)?;
            da.seq.verify(&bd)?;
            db.seq.verify(&bd)?;
            Some(bd)
        }
        None => None,
    };
    let r = intersect(&da, &db, boundary.as_ref(), a.tol)?;
    let mut table = Table::new(&["value", "exact", "tail_bound", "index"]);
    table.push(vec![fmt_f64(r.value), r.exact_term.to_string(), fmt_f64(r.tail_bound), r.index.to_string()]);
    Ok(Outcome { table, failure: None })
}

fn parse_grid(spec: &str, d: usize) -> Result<(f64, f64, usize, Vec<Vec<f64>>), CliError> {
    let parts: Vec<&str> = spec.split(':').collect();
    let bad = || CliError::invalid(format!("grid must be log:lo:hi:n, got {spec}"));
    if parts.len() != 4 || parts[0] != "log" {
        return Err(bad());
    }
    let lo: f64 = parts[1].parse().map_err(|_| bad())?;
    let hi: f64 = parts[2].parse().map_err(|_| bad())?;
    let n: usize = parts[3].parse().map_err(|_| bad())?;
    if !(lo > 0.0 && hi > lo && n >= 2) {
        return Err(bad());
    }
    Ok((lo, hi, n, log_grid(d, lo, hi, n)))
}

fn run_hessian(a: &HessianArgs, seed: u64) -> Result<Outcome, CliError> {
    let fam = read_json::<FamilyJson>(&a.family)?.into_family()?;
    let (lo, hi, n, grid) = parse_grid(&a.grid, fam.d())?;
    let mut table = Table::new(&["check", "item", "value", "pass"]);
    let mut failure = None;
    let mut fail = |m: String| failure.get_or_insert(CliError::tolerance(m)).code;
    for check in &a.check {
        match check.as_str() {
            "gram" => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut worst = 0.0f64;
                let mut residual = 0.0f64;
                // φ grows like y while H decays like y⁻³, so central differences
                // of φ are only meaningful near the unit cube
                for _ in 0..200 {
                    let y: Vec<f64> = (0..fam.d()).map(|_| rng.gen_range(-1.5..1.5f64).exp()).collect();
                    let e = hessian_gram(&fam, &y);
                    let fd = finite_difference_hessian(&fam, &y, 1e-4);
                    worst = worst.max((&fd - &e.hessian).amax() / e.hessian.amax().max(f64::MIN_POSITIVE));
                    residual = residual.max(e.relation_residual);
                }
                let pass = worst <= 1e-5;
                if !pass {
                    fail(format!("finite differences differ by {worst:e}"));
                }
                table.push(vec!["gram".into(), "fd_rel_error".into(), fmt_f64(worst), pass.to_string()]);
                table.push(vec!["gram".into(), "relation_residual".into(), fmt_f64(residual), (residual <= 1e-9).to_string()]);
            }
            "bounds" => {
                let coarse = verify_bounds(&fam, &grid)?;
                let fine = verify_bounds(&fam, &log_grid(fam.d(), lo, hi, 2 * n - 1))?;
                for s in stability(&coarse, &fine, 1.05) {
                    if !s.stable {
                        fail(format!("{} unstable: ratio {}", s.name, s.ratio));
                    }
                    table.push(vec!["bounds".into(), s.name.into(), fmt_f64(s.fine), s.stable.to_string()]);
                }
            }
            "ineq19" => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 19);
                let mut worst = 0.0f64;
                for _ in 0..a.trials {
                    let (m, k) = (rng.gen_range(1..=4), rng.gen_range(1..=4));
                    let eps: f64 = rng.gen_range(0.1..2.0);
                    let s: Vec<f64> = (0..m).map(|_| eps * (rng.gen_range(0.0..8.0f64)).exp()).collect();
                    let t: Vec<f64> = (0..k).map(|_| eps * (rng.gen_range(0.0..8.0f64)).exp()).collect();
                    let (l, r, _) = inequality_19(&s, &t, eps)?;
                    worst = worst.max(l / r);
                }
                let pass = worst <= 1.0 + 1e-12;
                if !pass {
                    fail(format!("inequality ratio {worst}"));
                }
                table.push(vec!["ineq19".into(), "max_lhs_over_rhs".into(), fmt_f64(worst), pass.to_string()]);
            }
            "integrand" => {
                let g = fam.g();
                if g > fam.d() {
                    return Err(CliError::precondition("integrand check needs g <= d"));
                }
                let set: Vec<usize> = (0..g).collect();
                let r = integrand_bound_check(&set, &set, g, fam.d(), 3)?;
                let pass = r.exponents_match && r.final_stable && r.assembled_stable && r.transfer_ratio_max <= r.transfer_constant;
                if !pass {
                    fail("integrand bound check failed".into());
                }
                for l in &r.final_levels {
                    table.push(vec!["integrand".into(), format!("final_w{}", l.w_max), fmt_f64(l.value), r.final_stable.to_string()]);
                }
                for l in &r.assembled_levels {
                    table.push(vec!["integrand".into(), format!("assembled_w{}", l.w_max), fmt_f64(l.value), r.assembled_stable.to_string()]);
                }
                for l in &r.control_levels {
                    table.push(vec!["integrand".into(), format!("control_w{}", l.w_max), fmt_f64(l.value), r.control_diverges.to_string()]);
                }
            }
            other => return Err(CliError::invalid(format!("unknown check {other}"))),
        }
    }
    Ok(Outcome { table, failure })
}

fn parse_param(s: &str) -> Result<Param, CliError> {
    if s == "k" || s == "m" || s == "sym" {
        return Ok(Param::Symbolic);
    }
    parse_q(s).map(Param::Value).map_err(|e| CliError::invalid(e.0))
}

fn run_degree(a: &DegreeArgs) -> Result<Outcome, CliError> {
    let (k, m) = (parse_param(&a.k)?, parse_param(&a.m)?);
    let (geo, _) = geometric_coefficient(a.g)?;
    let (r, log) = replay(a.g, &k, &m)?;
    if let Some(path) = &a.log {
        write_file(path, &(log.join("\n") + "\n"))?;
    }
    let ari = match (&k, &m) {
        (Param::Value(kv), Param::Value(mv)) => fmt_q(&r.coefficient.eval(kv, mv)),
        _ => r.coefficient.to_string(),
    };
    let mut table = Table::new(&["g", "geometric", "arithmetic"]);
    table.push(vec![a.g.to_string(), fmt_q(&geo), ari]);
    Ok(Outcome { table, failure: None })
}

fn run_demo(d: &Demo) -> Result<Outcome, CliError> {
    let Demo::Nonint { nmax, grid } = d;
    if *grid < 3 {
        return Err(CliError::invalid("grid needs at least 3 points"));
    }
    let mut table = Table::new(&["n", "value", "margin"]);
    let mut failure = None;
    for r in non_integrability_demo(*nmax, *grid) {
        if r.margin <= 0.0 {
            failure = Some(CliError::tolerance(format!("convexity margin {} at n = {}", r.margin, r.n)));
        }
        table.push(vec![r.n.to_string(), fmt_f64(r.value_at_cusp), fmt_f64(r.margin)]);
    }
    Ok(Outcome { table, failure })
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))
}

fn input_paths(c: &Command) -> Vec<PathBuf> {
    match c {
        Command::Energy(a) => vec![a.tuple.clone()],
        Command::Intersect(a) => [Some(a.a.clone()), Some(a.b.clone()), a.boundary.clone()].into_iter().flatten().collect(),
        Command::Hessian(a) => vec![a.family.clone()],
        _ => vec![],
    }
}

/// sha256 over the parsed configuration and the bytes of every input file.
pub fn config_hash(cli: &Cli) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(cli).expect("config serializes"));
    for p in input_paths(&cli.command) {
        h.update(std::fs::read(&p).unwrap_or_default());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub fn dispatch(cli: &Cli) -> Result<Outcome, CliError> {
    match &cli.command {
        Command::Energy(a) => run_energy(a),
        Command::Tree(a) => run_tree(a, cli.seed),
        Command::Intersect(a) => run_intersect(a),
        Command::Hessian(a) => run_hessian(a, cli.seed),
        Command::Degree(a) => run_degree(a),
        Command::Demo(d) => run_demo(d),
    }
}

/// Run and return the exit code; errors go to stderr.
pub fn run(cli: Cli) -> i32 {
    let start = Instant::now();
    let outcome = match dispatch(&cli) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {}", e.message);
            return e.code;
        }
    };
    let text = outcome.table.render(cli.format);
    let manifest = serde_json::json!({
        "tool": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "config_hash": config_hash(&cli),
        "seed": cli.seed,
        "wall_time_s": start.elapsed().as_secs_f64(),
        "status": outcome.failure.as_ref().map(|f| f.code).unwrap_or(0),
    });
    match &cli.out {
        Some(path) => {
            if let Err(e) = write_file(path, &text) {
                eprintln!("error: {}", e.message);
                return e.code;
            }
            let mpath = PathBuf::from(format!("{}.manifest.json", path.display()));
            if let Err(e) = write_file(&mpath, &(serde_json::to_string_pretty(&manifest).expect("json") + "\n")) {
                eprintln!("error: {}", e.message);
                return e.code;
            }
        }
        None => {
            let mut out = std::io::stdout().lock();
            let _ = out.write_all(text.as_bytes());
            eprintln!("{manifest}");
        }
    }
    match outcome.failure {
        Some(f) => {
            eprintln!("failure: {}", f.message);
            f.code
        }
        None => 0,
    }
}
