//! The four subcommands. Each writes its artifacts under the output
//! directory and returns the process exit status.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use anyhow::Context;
use regula_core::iteration::fmt17;
use regula_core::verify::monotone_outcome;
use regula_core::{
    certify, empirical_index, par, run_full_suite, run_mann_with, BallSampler, CertificationReport, CertifyOptions,
    CheckKind, CheckOutcome, RecordMode, StepSchedule, SuiteConfig,
};
use serde::Serialize;

use crate::config::{ExperimentConfig, Resolved, DEFAULT_RUN_HORIZON};

/// Process exit statuses.
pub mod exit {
    pub const OK: u8 = 0;
    /// The residual was not below `eps` somewhere in `[Φ, N]`.
    pub const BOUND_VIOLATED: u8 = 1;
    /// Invalid configuration or violated precondition.
    pub const CONFIG: u8 = 2;
    /// A hypothesis of the rate could not be verified.
    pub const HYPOTHESIS: u8 = 3;
    /// An inequality check or the strictness check failed.
    pub const INEQUALITY: u8 = 4;
    /// `verify` found a failing check.
    pub const VERIFY_FAILED: u8 = 5;
}

const AFP_BUDGET: u64 = 100_000;

#[derive(Serialize)]
struct Provenance<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    seed: u64,
    operator: &'a str,
    kappa: f64,
    schedule: String,
    theta: String,
    config: &'a ExperimentConfig,
}

fn provenance<'a>(r: &'a Resolved, command: &'static str) -> Provenance<'a> {
    Provenance {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        command,
        seed: r.seed,
        operator: r.operator.label(),
        kappa: r.operator.kappa(),
        schedule: r.schedule.label(),
        theta: r.rate.describe(),
        config: &r.config,
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn ensure_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

#[derive(Serialize)]
struct EmpiricalIndex {
    eps: f64,
    index: Option<u64>,
}

#[derive(Serialize)]
struct RunSummary<'a> {
    horizon: u64,
    final_residual: f64,
    empirical: Vec<EmpiricalIndex>,
    provenance: Provenance<'a>,
}

pub fn run(r: &Resolved) -> anyhow::Result<u8> {
    let horizon = r.config.horizon.unwrap_or(DEFAULT_RUN_HORIZON);
    let mode = if r.config.record_points { RecordMode::Full } else { RecordMode::ResidualsOnly };
    let mut trace = run_mann_with(&r.operator, &r.schedule, &r.x0, horizon, mode, &mut ())?;
    trace.operator_id = r.operator.label().to_string();
    trace.schedule_id = r.schedule.label();

    ensure_dir(&r.out_dir)?;
    let path = r.out_dir.join("trace.csv");
    let mut w = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
    trace.write_csv(&mut w, r.config.record_points)?;
    w.flush()?;

    let summary = RunSummary {
        horizon,
        final_residual: *trace.residuals().last().expect("nonempty trace"),
        empirical: r.eps.iter().map(|&eps| EmpiricalIndex { eps, index: empirical_index(&trace, eps) }).collect(),
        provenance: provenance(r, "run"),
    };
    write_json(&r.out_dir.join("summary.json"), &summary)?;
    println!("wrote {} and summary.json (final residual {:e})", path.display(), summary.final_residual);
    Ok(exit::OK)
}

/// Exit status for one certification: hypotheses first, then inequalities,
/// then the bound itself.
pub fn certify_status(rep: &CertificationReport) -> u8 {
    if !rep.hypotheses_ok() {
        exit::HYPOTHESIS
    } else if !rep.inequalities_ok() {
        exit::INEQUALITY
    } else if !rep.bound_holds {
        exit::BOUND_VIOLATED
    } else {
        exit::OK
    }
}

fn severity(code: u8) -> u8 {
    match code {
        exit::HYPOTHESIS => 3,
        exit::INEQUALITY => 2,
        exit::BOUND_VIOLATED => 1,
        _ => 0,
    }
}

#[derive(Serialize)]
struct CertifyArtifact<'a> {
    #[serde(flatten)]
    report: &'a CertificationReport,
    horizon: u64,
    provenance: Provenance<'a>,
}

pub fn certify_cmd(r: &Resolved) -> anyhow::Result<u8> {
    let b = r.b()?;
    let opts = CertifyOptions {
        horizon_extra: r.horizon_extra,
        seed: r.seed,
        strict_samples: r.samples,
        afp_budget: AFP_BUDGET,
    };
    ensure_dir(&r.out_dir)?;
    let mut status = exit::OK;
    for (i, &eps) in r.eps.iter().enumerate() {
        let rep = certify(&r.operator, &r.schedule, &r.rate, &r.x0, b, eps, &opts)?;
        let name = if r.eps.len() == 1 { "report.json".to_string() } else { format!("report_{i}.json") };
        write_json(
            &r.out_dir.join(&name),
            &CertifyArtifact { report: &rep, horizon: rep.horizon, provenance: provenance(r, "certify") },
        )?;
        let code = certify_status(&rep);
        println!(
            "eps={eps} phi={} empirical_idx={} bound_holds={} status={code}",
            rep.phi,
            rep.empirical_idx.map_or("none".into(), |v| v.to_string()),
            rep.bound_holds
        );
        for c in rep.checks.iter().filter(|c| !c.ok) {
            if c.kind == CheckKind::Diagnostic {
                eprintln!("note: {} flagged (a residual lies within 1e-12 of eps)", c.name);
            } else {
                eprintln!("check {} failed (worst defect {:e})", c.name, c.worst_defect);
            }
        }
        if severity(code) > severity(status) {
            status = code;
        }
    }
    Ok(status)
}

struct Cell {
    eps: f64,
    lambda: Option<f64>,
}

#[derive(Default)]
struct Row {
    phi: Option<u64>,
    empirical_idx: Option<u64>,
    tightness: Option<f64>,
    bound_holds: Option<bool>,
    error: Option<String>,
}

fn sweep_cell(r: &Resolved, b: f64, cell: &Cell) -> anyhow::Result<Row> {
    let schedule = match cell.lambda {
        Some(l) => Arc::new(StepSchedule::constant(l, r.operator.kappa())?),
        None => Arc::clone(&r.schedule),
    };
    let rate = r.rate_for(&schedule)?;
    let opts =
        CertifyOptions { horizon_extra: r.horizon_extra, seed: r.seed, strict_samples: 0, afp_budget: AFP_BUDGET };
    let rep = certify(&r.operator, &schedule, &rate, &r.x0, b, cell.eps, &opts)?;
    Ok(Row {
        phi: Some(rep.phi),
        empirical_idx: rep.empirical_idx,
        tightness: rep.tightness,
        bound_holds: Some(rep.bound_holds),
        error: None,
    })
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or(String::new(), |v| v.to_string())
}

pub fn sweep(r: &Resolved) -> anyhow::Result<u8> {
    let b = r.b()?;
    let lambdas: Vec<Option<f64>> =
        if r.lambda_grid.is_empty() { vec![None] } else { r.lambda_grid.iter().copied().map(Some).collect() };
    let cells: Vec<Cell> =
        r.eps.iter().flat_map(|&eps| lambdas.iter().map(move |&lambda| Cell { eps, lambda })).collect();
    let rows = par::map_slice(&cells, |cell| {
        sweep_cell(r, b, cell).unwrap_or_else(|e| Row { error: Some(format!("{e:#}")), ..Row::default() })
    });

    ensure_dir(&r.out_dir)?;
    let path = r.out_dir.join("sweep.csv");
    let mut w = csv::Writer::from_path(&path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(["eps", "lambda", "phi", "empirical_idx", "tightness", "bound_holds", "error"])?;
    for (cell, row) in cells.iter().zip(&rows) {
        w.write_record([
            fmt17(cell.eps),
            cell.lambda.map_or_else(|| r.schedule.label(), fmt17),
            opt(row.phi),
            opt(row.empirical_idx),
            row.tightness.map_or(String::new(), fmt17),
            opt(row.bound_holds),
            row.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    let failed = rows.iter().filter(|row| row.error.is_some()).count();
    println!("wrote {} ({} cells, {failed} with errors)", path.display(), cells.len());
    Ok(exit::OK)
}

#[derive(Serialize)]
struct VerifyArtifact<'a, P: Serialize> {
    ok: bool,
    checks: &'a [CheckOutcome],
    provenance: P,
}

fn finish_verify<P: Serialize>(out_dir: &Path, checks: &[CheckOutcome], provenance: P) -> anyhow::Result<u8> {
    ensure_dir(out_dir)?;
    let ok = checks.iter().all(|c| c.ok || c.kind == CheckKind::Diagnostic);
    write_json(&out_dir.join("verify.json"), &VerifyArtifact { ok, checks, provenance })?;
    for c in checks {
        println!("{:<34} {}", c.name, if c.ok { "ok" } else { "FAILED" });
    }
    Ok(if ok { exit::OK } else { exit::VERIFY_FAILED })
}

pub fn verify(r: &Resolved) -> anyhow::Result<u8> {
    let sampler = BallSampler::for_operator(&r.operator, r.seed);
    let cfg = SuiteConfig {
        x0: r.x0.clone(),
        b: r.b()?,
        eps: r.eps[0],
        rate: r.rate.clone(),
        sampler: &sampler,
        n_samples: r.samples,
        horizon: None,
        seed: r.seed,
    };
    let checks = run_full_suite(&r.operator, &r.schedule, &cfg)?;
    finish_verify(&r.out_dir, &checks, provenance(r, "verify"))
}

#[derive(Serialize)]
struct TraceProvenance<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    trace: &'a str,
}

/// Reads the residual column of a trace CSV.
pub fn read_residuals(path: &Path) -> anyhow::Result<Vec<f64>> {
    let mut rd = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let col = rd
        .headers()?
        .iter()
        .position(|h| h == "residual")
        .with_context(|| format!("{} has no residual column", path.display()))?;
    let mut out = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let rec = rec?;
        let field = rec.get(col).with_context(|| format!("row {i} is short"))?;
        out.push(field.trim().parse().with_context(|| format!("row {i}: bad residual {field:?}"))?);
    }
    if out.is_empty() {
        anyhow::bail!("{} has no rows", path.display());
    }
    Ok(out)
}

pub fn verify_trace(trace: &Path, out_dir: &Path) -> anyhow::Result<u8> {
    let residuals = read_residuals(trace)?;
    let checks = [monotone_outcome(&residuals)];
    let shown = trace.to_string_lossy();
    let prov = TraceProvenance {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        command: "verify",
        trace: &shown,
    };
    finish_verify(out_dir, &checks, prov)
}
