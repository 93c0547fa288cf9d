//! Command-line front end: certificate reports, boundary/field simulation,
//! and named experiments, all driven by one JSON configuration.
//!
//! Exit codes: 0 success, 2 config error, 3 criterion failed, 4 solver
//! failure.

mod config;
mod output;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use marrow_core::dde::{self, DdeOptions, ScalarHistory};
use marrow_core::field::{self, experiments};
use marrow_core::model::ValidatedModel;
use marrow_core::stability;

use config::{HistorySpec, RunConfig};
use output::{fmt_f64, write_json, CsvWriter};

#[derive(Parser)]
#[command(
    name = "marrow",
    version,
    about = "Maturity-structured blood cell production: solvers and stability certificates"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Evaluate every stability certificate and write report.json
    Report {
        config: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Integrate the boundary delay equation and write dde.csv
    SimulateDde {
        config: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Solve the full surface and write field.csv
    SimulateField {
        config: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Worker threads for the per-slice node loop (never changes output
        /// bytes)
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Run a named experiment (decay, extinction, agreement, equilibrium)
    Experiment {
        name: String,
        config: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
}

enum Failure {
    Config(String),
    Criterion(String),
    Solver(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Criterion(_) => 3,
            Failure::Solver(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Criterion(m) | Failure::Solver(m) => m,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.cmd {
        Cmd::Report { config, out } => cmd_report(&config, &out),
        Cmd::SimulateDde { config, out } => cmd_simulate_dde(&config, &out),
        Cmd::SimulateField {
            config,
            out,
            workers,
        } => cmd_simulate_field(&config, &out, workers),
        Cmd::Experiment {
            name,
            config,
            out,
            workers,
        } => cmd_experiment(&name, &config, &out, workers),
    }
}

fn load_config(path: &Path) -> Result<(RunConfig, ValidatedModel), Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
    let cfg: RunConfig = serde_json::from_str(&text).map_err(|e| {
        let offset = byte_offset(&text, e.line(), e.column());
        Failure::Config(format!("{}: {e} (byte offset {offset})", path.display()))
    })?;
    let model = cfg
        .model
        .clone()
        .validate()
        .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    Ok((cfg, model))
}

fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    text.lines()
        .take(line.saturating_sub(1))
        .map(|l| l.len() + 1)
        .sum::<usize>()
        + column.saturating_sub(1)
}

fn ensure_out(out: &Path) -> Result<(), Failure> {
    fs::create_dir_all(out)
        .map_err(|e| Failure::Solver(format!("cannot create {}: {e}", out.display())))
}

fn cmd_report(config: &Path, out: &Path) -> Result<(), Failure> {
    let (cfg, model) = load_config(config)?;
    let report = stability::evaluate(&model);
    ensure_out(out)?;
    write_json(&out.join("report.json"), &report)
        .map_err(|e| Failure::Solver(format!("writing report.json: {e}")))?;
    println!(
        "{}",
        serde_json::to_string_pretty(&report).expect("report serializes")
    );
    let mut failed = Vec::new();
    for name in &cfg.report.require {
        let holds = match name.as_str() {
            "local" => report.local_exp_stable.holds,
            "dde" => report.dde_global_stable.holds,
            "structural" => report.structural.holds,
            "global_lipschitz" => report.global_lipschitz_stable.holds,
            other => {
                return Err(Failure::Config(format!(
                    "unknown report criterion `{other}` (expected local, dde, structural, global_lipschitz)"
                )))
            }
        };
        if !holds {
            failed.push(name.clone());
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Criterion(format!(
            "criteria failed: {}",
            failed.join(", ")
        )))
    }
}

/// Find a history sampling step that divides both the delay span and the
/// kernel width.
fn build_history(model: &ValidatedModel, spec: &HistorySpec) -> Result<ScalarHistory, Failure> {
    let tau_u = model.tau_upper();
    for div in [64usize, 128, 192, 256, 384, 512, 1024, 2048, 4096] {
        let dt = tau_u / div as f64;
        if let Ok(h) = ScalarHistory::from_fn(model, 0.0, dt, |t| spec.eval(t), |t| spec.eval_dt(t))
        {
            return Ok(h);
        }
    }
    Err(Failure::Config(
        "cannot align a history grid with the kernel ages; choose kernel ages with a rational ratio"
            .into(),
    ))
}

#[derive(Serialize)]
struct DdeSidecar {
    horizon: f64,
    rows: usize,
    meta: dde::DdeMeta,
}

fn cmd_simulate_dde(config: &Path, out: &Path) -> Result<(), Failure> {
    let (cfg, model) = load_config(config)?;
    let dcfg = cfg
        .dde
        .as_ref()
        .ok_or_else(|| Failure::Config("config has no `dde` block".into()))?;
    let psi = build_history(&model, &dcfg.history)?;
    let mut opts = DdeOptions::new(dcfg.dt);
    opts.quad_order = cfg.grid.quad_order;
    opts.with_lyapunov = dcfg.with_lyapunov;
    let sol = dde::integrate(&model, &psi, dcfg.horizon, &opts)
        .map_err(|e| Failure::Solver(e.to_string()))?;
    ensure_out(out)?;
    let mut csv = CsvWriter::new(if dcfg.with_lyapunov { "t,x,H" } else { "t,x" });
    let hs = sol.h_series.clone();
    for (i, (t, x)) in sol.series().into_iter().enumerate() {
        match &hs {
            Some(h) => csv.row(&[t, x, h[i]]),
            None => csv.row(&[t, x]),
        }
    }
    csv.write_to(&out.join("dde.csv"))
        .map_err(|e| Failure::Solver(format!("writing dde.csv: {e}")))?;
    let sidecar = DdeSidecar {
        horizon: sol.end(),
        rows: sol.values().len(),
        meta: sol.meta.clone(),
    };
    write_json(&out.join("dde.meta.json"), &sidecar)
        .map_err(|e| Failure::Solver(format!("writing dde.meta.json: {e}")))?;
    println!(
        "dde.csv: {} rows on [{}, {}], final x = {}",
        sol.values().len(),
        fmt_f64(sol.start()),
        fmt_f64(sol.end()),
        fmt_f64(sol.final_x())
    );
    Ok(())
}

#[derive(Serialize)]
struct FieldSidecar {
    output_stride: usize,
    rows: usize,
    proliferating: bool,
    meta: field::FieldMeta,
}

fn cmd_simulate_field(config: &Path, out: &Path, workers: usize) -> Result<(), Failure> {
    let (cfg, model) = load_config(config)?;
    let fcfg = cfg
        .field
        .as_ref()
        .ok_or_else(|| Failure::Config("config has no `field` block".into()))?;
    let data = fcfg.initial.build().map_err(Failure::Config)?;
    let params = cfg.grid.to_params(workers);
    let solved = field::solve_field(&model, &data, fcfg.horizon, &params)
        .map_err(|e| Failure::Solver(e.to_string()))?;
    ensure_out(out)?;
    let stride = fcfg.output_stride.max(1);
    let mut csv = CsvWriter::new("t,m,N");
    let mut rows = 0usize;
    for k in (solved.first_solved()..solved.num_slices()).step_by(stride) {
        let t = solved.slice_time(k);
        csv.row(&[t, 0.0, solved.boundary_x(t)]);
        rows += 1;
        for (j, &m) in solved.grid().ms().iter().enumerate() {
            csv.row(&[t, m, solved.slice(k)[j]]);
            rows += 1;
        }
    }
    csv.write_to(&out.join("field.csv"))
        .map_err(|e| Failure::Solver(format!("writing field.csv: {e}")))?;

    if let Some(p) = &fcfg.proliferating {
        let profile = p.initial.build();
        let p_field =
            field::reconstruct_p(&model, &solved, |m| profile.value(m), params.quad_order)
                .map_err(|e| Failure::Solver(e.to_string()))?;
        let mut pcsv = CsvWriter::new("t,m,P");
        for k in (0..p_field.num_slices()).step_by(stride) {
            let t = p_field.slice_time(k);
            pcsv.row(&[t, 0.0, p_field.boundary_x(t)]);
            for (j, &m) in p_field.grid().ms().iter().enumerate() {
                pcsv.row(&[t, m, p_field.slice(k)[j]]);
            }
        }
        pcsv.write_to(&out.join("field_p.csv"))
            .map_err(|e| Failure::Solver(format!("writing field_p.csv: {e}")))?;
    }

    let sidecar = FieldSidecar {
        output_stride: stride,
        rows,
        proliferating: fcfg.proliferating.is_some(),
        meta: solved.meta.clone(),
    };
    write_json(&out.join("field.meta.json"), &sidecar)
        .map_err(|e| Failure::Solver(format!("writing field.meta.json: {e}")))?;
    println!(
        "field.csv: {rows} rows, {} slices x {} nodes",
        (solved.num_slices() - solved.first_solved()).div_ceil(stride),
        solved.grid().len() + 1
    );
    Ok(())
}

#[derive(Serialize)]
struct Verdict {
    experiment: String,
    verdict: &'static str,
    measured: f64,
    expected: f64,
    tolerance: f64,
    detail: serde_json::Value,
}

fn emit_verdict(out: &Path, v: &Verdict) -> Result<(), Failure> {
    ensure_out(out)?;
    let path = out.join(format!("experiment-{}.json", v.experiment));
    write_json(&path, v).map_err(|e| Failure::Solver(format!("writing verdict: {e}")))?;
    println!(
        "{}",
        serde_json::to_string_pretty(v).expect("verdict serializes")
    );
    if v.verdict == "pass" {
        Ok(())
    } else {
        Err(Failure::Criterion(format!(
            "experiment {} failed (measured {}, tolerance {})",
            v.experiment,
            fmt_f64(v.measured),
            fmt_f64(v.tolerance)
        )))
    }
}

fn not_applicable(out: &Path, name: &str, reason: String) -> Result<(), Failure> {
    let v = Verdict {
        experiment: name.to_string(),
        verdict: "fail",
        measured: f64::NAN,
        expected: f64::NAN,
        tolerance: f64::NAN,
        detail: serde_json::json!({ "reason": reason }),
    };
    ensure_out(out)?;
    let path = out.join(format!("experiment-{name}.json"));
    write_json(&path, &v).map_err(|e| Failure::Solver(format!("writing verdict: {e}")))?;
    println!(
        "{}",
        serde_json::to_string_pretty(&v).expect("verdict serializes")
    );
    Err(Failure::Criterion(format!(
        "experiment {name} not applicable: {}",
        v.detail["reason"].as_str().unwrap_or("")
    )))
}

fn cmd_experiment(name: &str, config: &Path, out: &Path, workers: usize) -> Result<(), Failure> {
    let (cfg, model) = load_config(config)?;
    let params = cfg.grid.to_params(workers);
    match name {
        "decay" => {
            let block =
                cfg.experiments.decay.as_ref().ok_or_else(|| {
                    Failure::Config("config has no `experiments.decay` block".into())
                })?;
            let data = block.initial.build().map_err(Failure::Config)?;
            match experiments::run_decay(
                &model,
                &data,
                block.horizon,
                &params,
                block.min_rate_fraction,
                block.check_floor,
            ) {
                Ok(o) => emit_verdict(
                    out,
                    &Verdict {
                        experiment: name.into(),
                        verdict: if o.pass { "pass" } else { "fail" },
                        measured: o.fitted_rate,
                        expected: o.min_rate_fraction * o.rho,
                        tolerance: 0.0,
                        detail: serde_json::to_value(&o).expect("outcome serializes"),
                    },
                ),
                Err(field::FieldError::NotApplicable(r)) => not_applicable(out, name, r),
                Err(e) => Err(Failure::Solver(format!("decay experiment: {e}"))),
            }
        }
        "extinction" => {
            let block = cfg.experiments.extinction.as_ref().ok_or_else(|| {
                Failure::Config("config has no `experiments.extinction` block".into())
            })?;
            let data = block.initial.build().map_err(Failure::Config)?;
            match experiments::run_extinction(&model, &data, block.b, block.margin, &params) {
                Ok(o) => emit_verdict(
                    out,
                    &Verdict {
                        experiment: name.into(),
                        verdict: if o.pass { "pass" } else { "fail" },
                        measured: o.sup_at_probe,
                        expected: 0.0,
                        tolerance: o.tolerance,
                        detail: serde_json::to_value(&o).expect("outcome serializes"),
                    },
                ),
                Err(field::FieldError::NotApplicable(r)) => not_applicable(out, name, r),
                Err(e) => Err(Failure::Solver(format!("extinction experiment: {e}"))),
            }
        }
        "agreement" => {
            let block = cfg.experiments.agreement.as_ref().ok_or_else(|| {
                Failure::Config("config has no `experiments.agreement` block".into())
            })?;
            let phi1 = block.phi1.build().map_err(Failure::Config)?;
            let phi2 = block.phi2.build().map_err(Failure::Config)?;
            match experiments::run_agreement(&model, &phi1, &phi2, block.b, block.horizon, &params)
            {
                Ok(o) => emit_verdict(
                    out,
                    &Verdict {
                        experiment: name.into(),
                        verdict: if o.pass { "pass" } else { "fail" },
                        measured: o.max_diff_after,
                        expected: 0.0,
                        tolerance: o.tolerance,
                        detail: serde_json::to_value(&o).expect("outcome serializes"),
                    },
                ),
                Err(field::FieldError::NotApplicable(r)) => not_applicable(out, name, r),
                Err(e) => Err(Failure::Solver(format!("agreement experiment: {e}"))),
            }
        }
        "equilibrium" => {
            let block = cfg.experiments.equilibrium.as_ref().ok_or_else(|| {
                Failure::Config("config has no `experiments.equilibrium` block".into())
            })?;
            match experiments::run_equilibrium(&model, block.horizon, block.dt, block.tolerance) {
                Ok(o) => emit_verdict(
                    out,
                    &Verdict {
                        experiment: name.into(),
                        verdict: if o.pass { "pass" } else { "fail" },
                        measured: o.max_drift,
                        expected: 0.0,
                        tolerance: o.tolerance,
                        detail: serde_json::to_value(&o).expect("outcome serializes"),
                    },
                ),
                Err(field::FieldError::NotApplicable(r)) => not_applicable(out, name, r),
                Err(e) => Err(Failure::Solver(format!("equilibrium experiment: {e}"))),
            }
        }
        other => Err(Failure::Config(format!(
            "unknown experiment `{other}` (expected decay, extinction, agreement, equilibrium)"
        ))),
    }
}
