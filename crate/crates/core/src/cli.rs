//! Command-line front end: `certify`, `solve` and `experiment`.
//!
//! Exit codes: 0 when every instance succeeds, 2 when some instance fails a
//! precondition (the run still completes and records it), 1 on hard errors.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::DVector;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::certify::{
    closed_form_solution, constants, ic, lambda_range, noiseless_certificate, Verdict,
};
use crate::ensemble::PRNG_NAME;
use crate::error::{Error, Result};
use crate::experiment::{
    run_negative_ic, run_noise_scaling, run_support_recovery, ExperimentConfig, ExperimentKind,
    Outcome, Summary,
};
use crate::gauge::{HSupport, DEFAULT_SUPPORT_TOL};
use crate::instance::{parse_instances, Instance, InstanceSpec, SCHEMA_VERSION};
use crate::numlin::{SupportGeometry, DEFAULT_RANK_TOL};
use crate::qp::{solve_p0, solve_p_lambda, SolveStatus, DEFAULT_QP_TOL};

#[derive(Debug, Parser)]
#[command(name = "polyreg", version, about = "Certify and solve polyhedral-gauge regularized inverse problems")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute the identifiability criterion, constants, admissible lambda
    /// range and noiseless certificate of every instance.
    Certify {
        #[arg(long = "in")]
        input: PathBuf,
        /// Report path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Relative tolerance used to detect the H-support of `x0`.
        #[arg(long, default_value_t = DEFAULT_SUPPORT_TOL)]
        tol: f64,
    },
    /// Solve every instance with the chosen method.
    Solve {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum)]
        method: Method,
        /// Overrides the instance's own lambda.
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Solver tolerance (KKT residual for `qp`, verification for `lp0`).
        #[arg(long, default_value_t = DEFAULT_QP_TOL)]
        tol: f64,
    },
    /// Run a seeded experiment, writing `<kind>.csv` and `<kind>.summary.json`.
    Experiment {
        #[arg(long, value_enum)]
        kind: Kind,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long = "out-dir")]
        out_dir: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Method {
    ClosedForm,
    Qp,
    Lp0,
}

impl Method {
    fn as_str(&self) -> &'static str {
        match self {
            Method::ClosedForm => "closed-form",
            Method::Qp => "qp",
            Method::Lp0 => "lp0",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Kind {
    NoiseScaling,
    SupportRecovery,
    NegativeIc,
}

impl From<Kind> for ExperimentKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::NoiseScaling => ExperimentKind::NoiseScaling,
            Kind::SupportRecovery => ExperimentKind::SupportRecovery,
            Kind::NegativeIc => ExperimentKind::NegativeIc,
        }
    }
}

#[derive(Serialize)]
struct Report<R> {
    schema: u32,
    command: &'static str,
    config_hash: String,
    prng: &'static str,
    records: Vec<R>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Status {
    Ok,
    Infeasible,
    PreconditionFailure,
    Error,
}

#[derive(Serialize)]
struct ConstantsOut {
    c1: f64,
    c2: f64,
    t: f64,
    rho_sq: f64,
}

#[derive(Serialize)]
struct IntervalOut {
    lower: f64,
    upper: f64,
    empty: bool,
}

#[derive(Serialize)]
struct DualOut {
    eta: Vec<f64>,
    v: Vec<f64>,
    source_residual: f64,
    min_v: f64,
}

#[derive(Serialize)]
struct ClosedFormOut {
    lambda: f64,
    x_hat: Vec<f64>,
    mu: f64,
    certified: bool,
    reason: Option<String>,
    recovered_support: Vec<usize>,
    error_l2: f64,
    oracle_gap: Option<f64>,
}

#[derive(Default, Serialize)]
struct CertifyRecord {
    index: usize,
    name: Option<String>,
    seed: Option<u64>,
    status: Option<Status>,
    message: Option<String>,
    true_support: Option<Vec<usize>>,
    restricted_injectivity: Option<bool>,
    ic: Option<f64>,
    ic_error_bar: Option<f64>,
    verdict: Option<&'static str>,
    constants: Option<ConstantsOut>,
    lambda_interval: Option<IntervalOut>,
    noiseless_certificate: Option<DualOut>,
    closed_form: Option<ClosedFormOut>,
    notes: Vec<String>,
}

#[derive(Default, Serialize)]
struct SolveRecord {
    index: usize,
    name: Option<String>,
    seed: Option<u64>,
    method: &'static str,
    status: Option<Status>,
    message: Option<String>,
    lambda: Option<f64>,
    x: Option<Vec<f64>>,
    objective: Option<f64>,
    gauge: Option<f64>,
    recovered_support: Option<Vec<usize>>,
    true_support: Option<Vec<usize>>,
    error_l2: Option<f64>,
    kkt_residual: Option<f64>,
    iterations: Option<usize>,
    verified: Option<bool>,
    ic: Option<f64>,
    verdict: Option<&'static str>,
    mu: Option<f64>,
    reason: Option<String>,
    lambda_interval: Option<IntervalOut>,
}

#[derive(Serialize)]
struct SummaryOut<'a> {
    schema: u32,
    config_hash: String,
    #[serde(flatten)]
    summary: &'a Summary,
    csv: String,
}

fn vec_of(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

fn hash_hex(parts: &[&[u8]]) -> String {
    let mut hasher = Sha256::new();
    for p in parts {
        hasher.update((p.len() as u64).to_le_bytes());
        hasher.update(p);
    }
    hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn write_output(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text)?,
        None => println!("{text}"),
    }
    Ok(())
}

fn status_of(e: &Error) -> Status {
    if e.is_precondition() {
        Status::PreconditionFailure
    } else {
        Status::Error
    }
}

fn exit_code(statuses: impl Iterator<Item = Status>) -> i32 {
    let mut code = 0;
    for s in statuses {
        match s {
            Status::Error => return 1,
            Status::PreconditionFailure => code = 2,
            _ => {}
        }
    }
    code
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let result = match cli.command {
        Command::Certify { input, out, tol } => cmd_certify(&input, out.as_deref(), tol),
        Command::Solve { input, method, lambda, out, tol } => {
            cmd_solve(&input, method, lambda, out.as_deref(), tol)
        }
        Command::Experiment { kind, config, seed, out_dir } => {
            cmd_experiment(kind.into(), &config, seed, &out_dir).map(|_| 0)
        }
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn load(input: &Path) -> Result<(Vec<u8>, Vec<InstanceSpec>)> {
    let bytes = fs::read(input)?;
    let text = String::from_utf8(bytes.clone())
        .map_err(|_| Error::InvalidInput(format!("{} is not UTF-8", input.display())))?;
    Ok((bytes, parse_instances(&text)?))
}

/// Certifies every instance of `input` and writes the report; returns the
/// exit code.
pub fn cmd_certify(input: &Path, out: Option<&Path>, tol: f64) -> Result<i32> {
    if !(tol >= 0.0) {
        return Err(Error::InvalidInput(format!("--tol must be nonnegative, got {tol}")));
    }
    let (bytes, specs) = load(input)?;
    let flags = format!("certify tol={tol:e}");
    let records: Vec<CertifyRecord> = specs
        .iter()
        .enumerate()
        .map(|(index, spec)| {
            let mut rec = CertifyRecord { index, name: spec.name.clone(), ..Default::default() };
            rec.seed = spec.noise.map(|n| n.seed);
            if let Err(e) = certify_one(spec, tol, &mut rec) {
                rec.status = Some(status_of(&e));
                rec.message = Some(e.to_string());
            } else {
                rec.status = Some(Status::Ok);
            }
            rec
        })
        .collect();
    let code = exit_code(records.iter().filter_map(|r| r.status));
    let report = Report {
        schema: SCHEMA_VERSION,
        command: "certify",
        config_hash: hash_hex(&[&bytes, flags.as_bytes()]),
        prng: PRNG_NAME,
        records,
    };
    write_output(out, &serde_json::to_string_pretty(&report)?)?;
    Ok(code)
}

fn certify_one(spec: &InstanceSpec, tol: f64, rec: &mut CertifyRecord) -> Result<()> {
    let inst = spec.resolve()?;
    let Some(x0) = inst.x0.clone() else {
        return Err(Error::InvalidInput("certify needs x0".into()));
    };
    let support = inst.h.h_support(&x0, tol)?;
    rec.true_support = Some(support.indices().to_vec());
    let geom = match SupportGeometry::new(&inst.phi, &inst.h, &support, DEFAULT_RANK_TOL) {
        Ok(g) => g,
        Err(e) => {
            rec.restricted_injectivity = Some(false);
            return Err(e);
        }
    };
    rec.restricted_injectivity = Some(true);
    let cert = ic(&geom)?;
    rec.ic = Some(cert.ic_value);
    rec.ic_error_bar = Some(cert.error_bar);
    rec.verdict = Some(cert.verdict.as_str());
    match constants(&inst.h, &x0, &geom) {
        Ok(c) => rec.constants = Some(ConstantsOut { c1: c.c1, c2: c.c2, t: c.t, rho_sq: c.rho_sq }),
        Err(e) => rec.notes.push(format!("constants: {e}")),
    }
    if cert.verdict != Verdict::CertifiedPositive {
        return Ok(());
    }
    let w = inst.effective_noise().unwrap_or_else(|| DVector::zeros(inst.phi.nrows()));
    match lambda_range(&geom, &inst.h, &x0, &w, &cert) {
        Ok(r) => {
            rec.lambda_interval = Some(IntervalOut { lower: r.lower, upper: r.upper, empty: r.is_empty() })
        }
        Err(e) => rec.notes.push(format!("lambda range: {e}")),
    }
    match noiseless_certificate(&geom, &cert) {
        Ok(d) => {
            rec.noiseless_certificate = Some(DualOut {
                eta: vec_of(&d.eta),
                v: vec_of(&d.v),
                source_residual: d.source_residual,
                min_v: d.min_v,
            })
        }
        Err(e) => rec.notes.push(format!("noiseless certificate: {e}")),
    }
    if let Some(lambda) = inst.lambda {
        let y = inst.observations()?;
        let cf = closed_form_solution(&geom, &inst.h, &y, lambda)?;
        let oracle_gap = solve_p_lambda(&inst.phi, &inst.h, &y, lambda, DEFAULT_QP_TOL)
            .map(|o| (&cf.x_hat - &o.x).norm() / cf.x_hat.norm().max(f64::MIN_POSITIVE))
            .ok();
        let recovered = inst
            .h
            .h_support(&cf.x_hat, tol)
            .map(|s| s.indices().to_vec())
            .unwrap_or_default();
        rec.closed_form = Some(ClosedFormOut {
            lambda,
            error_l2: (&cf.x_hat - &x0).norm(),
            x_hat: vec_of(&cf.x_hat),
            mu: cf.mu,
            certified: cf.certified,
            reason: cf.reason,
            recovered_support: recovered,
            oracle_gap,
        });
    }
    Ok(())
}

/// Solves every instance of `input`; returns the exit code.
pub fn cmd_solve(
    input: &Path,
    method: Method,
    lambda: Option<f64>,
    out: Option<&Path>,
    tol: f64,
) -> Result<i32> {
    if let Some(l) = lambda {
        if !(l > 0.0) || !l.is_finite() {
            return Err(Error::InvalidInput(format!("--lambda must be positive, got {l}")));
        }
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidInput(format!("--tol must be positive, got {tol}")));
    }
    let (bytes, specs) = load(input)?;
    let flags = format!("solve method={} lambda={lambda:?} tol={tol:e}", method.as_str());
    let records: Vec<SolveRecord> = specs
        .iter()
        .enumerate()
        .map(|(index, spec)| {
            let mut rec = SolveRecord {
                index,
                name: spec.name.clone(),
                seed: spec.noise.map(|n| n.seed),
                method: method.as_str(),
                ..Default::default()
            };
            match solve_one(spec, method, lambda, tol, &mut rec) {
                Ok(status) => rec.status = Some(status),
                Err(e) => {
                    rec.status = Some(status_of(&e));
                    rec.message = Some(e.to_string());
                }
            }
            rec
        })
        .collect();
    let code = exit_code(records.iter().filter_map(|r| r.status));
    let report = Report {
        schema: SCHEMA_VERSION,
        command: "solve",
        config_hash: hash_hex(&[&bytes, flags.as_bytes()]),
        prng: PRNG_NAME,
        records,
    };
    write_output(out, &serde_json::to_string_pretty(&report)?)?;
    Ok(code)
}

fn solve_one(
    spec: &InstanceSpec,
    method: Method,
    lambda: Option<f64>,
    tol: f64,
    rec: &mut SolveRecord,
) -> Result<Status> {
    let inst = spec.resolve()?;
    let y = inst.observations()?;
    let true_support = match &inst.x0 {
        Some(x0) => Some(inst.h.h_support(x0, DEFAULT_SUPPORT_TOL)?),
        None => None,
    };
    rec.true_support = true_support.as_ref().map(|s| s.indices().to_vec());
    let lambda = lambda.or(inst.lambda);
    rec.lambda = lambda;
    let need_lambda = || lambda.ok_or_else(|| Error::InvalidInput("method needs lambda".into()));

    let (x, status) = match method {
        Method::Qp => {
            let r = solve_p_lambda(&inst.phi, &inst.h, &y, need_lambda()?, tol)?;
            rec.kkt_residual = Some(r.kkt_residual);
            rec.iterations = Some(r.iterations);
            rec.verified = r.verified;
            (r.x, Status::Ok)
        }
        Method::Lp0 => {
            let r = solve_p0(&inst.phi, &inst.h, &y, tol)?;
            rec.iterations = Some(r.iterations);
            if r.status == SolveStatus::Infeasible {
                rec.message = Some("y is not in the range of phi".into());
                return Ok(Status::Infeasible);
            }
            (r.x, Status::Ok)
        }
        Method::ClosedForm => {
            let Some(support) = true_support.as_ref() else {
                return Err(Error::InvalidInput("closed-form needs x0 to fix the face".into()));
            };
            (closed_form(&inst, support, need_lambda()?, &y, rec)?, Status::Ok)
        }
    };
    let gauge = inst.h.eval(&x)?;
    rec.gauge = Some(gauge);
    rec.objective = Some(match (method, lambda) {
        (Method::Lp0, _) | (_, None) => gauge,
        (_, Some(l)) => 0.5 * (&y - &inst.phi * &x).norm_squared() + l * gauge,
    });
    rec.recovered_support = inst.h.h_support(&x, DEFAULT_SUPPORT_TOL).ok().map(|s| s.indices().to_vec());
    rec.error_l2 = inst.x0.as_ref().map(|x0| (&x - x0).norm());
    rec.x = Some(vec_of(&x));
    Ok(status)
}

fn closed_form(
    inst: &Instance,
    support: &HSupport,
    lambda: f64,
    y: &DVector<f64>,
    rec: &mut SolveRecord,
) -> Result<DVector<f64>> {
    let geom = SupportGeometry::new(&inst.phi, &inst.h, support, DEFAULT_RANK_TOL)?;
    let cert = ic(&geom)?;
    rec.ic = Some(cert.ic_value);
    let cf = closed_form_solution(&geom, &inst.h, y, lambda)?;
    rec.mu = Some(cf.mu);
    rec.reason = cf.reason.clone();
    let mut verdict = cert.verdict;
    if verdict == Verdict::CertifiedPositive {
        let x0 = inst.x0.as_ref().expect("support comes from x0");
        let w = inst.effective_noise().unwrap_or_else(|| DVector::zeros(inst.phi.nrows()));
        let in_range = match lambda_range(&geom, &inst.h, x0, &w, &cert) {
            Ok(r) => {
                let inside = r.contains(lambda);
                rec.lambda_interval = Some(IntervalOut { lower: r.lower, upper: r.upper, empty: r.is_empty() });
                inside
            }
            Err(_) => false,
        };
        if !in_range {
            verdict = Verdict::Inconclusive;
            rec.reason.get_or_insert_with(|| format!("lambda = {lambda} is outside the admissible range"));
        } else if !cf.certified {
            verdict = Verdict::Inconclusive;
        }
    }
    rec.verdict = Some(verdict.as_str());
    Ok(cf.x_hat)
}

/// Runs an experiment and writes its CSV and JSON summary into `out_dir`.
/// Returns the summary.
pub fn cmd_experiment(kind: ExperimentKind, config: &Path, seed: u64, out_dir: &Path) -> Result<Summary> {
    let bytes = fs::read(config)?;
    let cfg: ExperimentConfig = serde_json::from_slice(&bytes)?;
    cfg.validate()?;
    fs::create_dir_all(out_dir)?;
    let csv_name = format!("{}.csv", kind.as_str());
    let csv_path = out_dir.join(&csv_name);
    let summary = match kind {
        ExperimentKind::NoiseScaling => write_rows(run_noise_scaling(&cfg, seed)?, &csv_path)?,
        ExperimentKind::SupportRecovery => write_rows(run_support_recovery(&cfg, seed)?, &csv_path)?,
        ExperimentKind::NegativeIc => write_rows(run_negative_ic(&cfg, seed)?, &csv_path)?,
    };
    let flags = format!("experiment kind={} seed={seed}", kind.as_str());
    let out = SummaryOut {
        schema: SCHEMA_VERSION,
        config_hash: hash_hex(&[&bytes, flags.as_bytes()]),
        summary: &summary,
        csv: csv_name,
    };
    let json_path = out_dir.join(format!("{}.summary.json", kind.as_str()));
    fs::write(json_path, serde_json::to_string_pretty(&out)? + "\n")?;
    println!("{}: {} = {} over {} instances", kind.as_str(), summary.metric_name, summary.metric, summary.accepted);
    Ok(summary)
}

fn write_rows<R: Serialize>(outcome: Outcome<R>, path: &Path) -> Result<Summary> {
    let mut w = csv::Writer::from_path(path)?;
    for row in &outcome.rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(outcome.summary)
}
