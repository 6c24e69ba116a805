//! CSV and JSON writers. Floats carry 17 significant digits; missing values are empty.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::CliResult;
use crate::experiment::RunResult;

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

fn writer(path: &Path) -> CliResult<csv::Writer<BufWriter<File>>> {
    Ok(csv::Writer::from_writer(BufWriter::new(File::create(path)?)))
}

/// `loss_history.csv`. With `keyed` every row is prefixed by batch size and realization.
pub fn write_loss_history(path: &Path, runs: &[RunResult], keyed: bool) -> CliResult<()> {
    let mut w = writer(path)?;
    let mut header = vec![
        "iteration",
        "psi_quadratic",
        "psi_misfit",
        "batch_objective",
        "gn_iters",
        "wall_ms",
    ];
    if keyed {
        header.splice(0..0, ["batch_size", "realization"]);
    }
    w.write_record(&header)?;
    for run in runs {
        let Some(h) = &run.history else { continue };
        for r in &h.records {
            let mut row = vec![
                r.k.to_string(),
                fmt_opt(r.psi_quadratic),
                fmt_opt(r.psi_misfit),
                fmt_f64(r.batch_objective),
                r.gn_iters.to_string(),
                fmt_opt(r.wall_ms),
            ];
            if keyed {
                row.splice(0..0, [run.key.batch_size.to_string(), run.key.realization.to_string()]);
            }
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `error_grid.csv`, keyed like [`write_loss_history`].
pub fn write_error_grid(path: &Path, runs: &[RunResult], keyed: bool) -> CliResult<()> {
    let mut w = writer(path)?;
    let mut header = vec!["x1", "x2", "u_true", "u_num", "abs_err"];
    if keyed {
        header.splice(0..0, ["batch_size", "realization"]);
    }
    w.write_record(&header)?;
    for run in runs {
        for g in &run.grid {
            let mut row = vec![
                fmt_f64(g.x[0]),
                fmt_f64(g.x[1]),
                fmt_f64(g.u_true),
                fmt_f64(g.u_num),
                fmt_f64(g.abs_err),
            ];
            if keyed {
                row.splice(0..0, [run.key.batch_size.to_string(), run.key.realization.to_string()]);
            }
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticRow {
    pub name: String,
    pub measured: f64,
    pub threshold: f64,
    pub pass: bool,
}

pub fn write_diagnostics(path: &Path, rows: &[DiagnosticRow]) -> CliResult<()> {
    let mut w = writer(path)?;
    w.write_record(["name", "measured", "threshold", "pass"])?;
    for r in rows {
        w.write_record([
            r.name.clone(),
            fmt_f64(r.measured),
            fmt_f64(r.threshold),
            r.pass.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct RunSummary {
    pub batch_size: usize,
    pub realization: usize,
    pub seed: u64,
    pub collocation_seed: u64,
    pub iterations: usize,
    pub initial_psi: Option<f64>,
    pub final_psi_quadratic: Option<f64>,
    pub final_psi_misfit: Option<f64>,
    pub final_psi: Option<f64>,
    pub linf_error: Option<f64>,
    pub rel_l2_error: Option<f64>,
    pub nonconverged_gn_steps: usize,
    pub final_solve_converged: Option<bool>,
    pub loss_unavailable: bool,
    pub warning: Option<String>,
    pub failure: Option<String>,
}

impl From<&RunResult> for RunSummary {
    fn from(r: &RunResult) -> Self {
        let fin = r.final_psi();
        RunSummary {
            batch_size: r.key.batch_size,
            realization: r.key.realization,
            seed: r.key.seed,
            collocation_seed: r.key.collocation_seed,
            iterations: r.history.as_ref().map_or(0, |h| h.records.len()),
            initial_psi: r.initial_psi(),
            final_psi_quadratic: fin.map(|f| f.0),
            final_psi_misfit: fin.map(|f| f.1),
            final_psi: fin.map(|f| f.0 + f.1),
            linf_error: r.errors.as_ref().map(|e| e.linf),
            rel_l2_error: r.errors.as_ref().map(|e| e.rel_l2),
            nonconverged_gn_steps: r.nonconverged_steps(),
            final_solve_converged: r.final_gn_converged,
            loss_unavailable: r.loss_unavailable,
            warning: r.warning.clone(),
            failure: r.failure.clone(),
        }
    }
}

/// Means over the successful realizations of one batch size.
#[derive(Debug, Serialize)]
pub struct BatchMean {
    pub batch_size: usize,
    pub runs: usize,
    pub mean_final_psi: Option<f64>,
    pub mean_linf_error: Option<f64>,
    pub mean_rel_l2_error: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct Summary<'a> {
    pub command: &'a str,
    /// `ok`, or `failed` when any run reported a failure.
    pub status: &'static str,
    pub elapsed_seconds: f64,
    pub config: &'a ExperimentConfig,
    pub runs: Vec<RunSummary>,
    pub means: Vec<BatchMean>,
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Option<Vec<f64>> = values.collect();
    let v = v?;
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

pub fn summarize<'a>(command: &'a str, config: &'a ExperimentConfig, runs: &[RunResult], elapsed: f64) -> Summary<'a> {
    let rows: Vec<RunSummary> = runs.iter().map(RunSummary::from).collect();
    let mut sizes: Vec<usize> = rows.iter().map(|r| r.batch_size).collect();
    sizes.dedup();
    let means = sizes
        .into_iter()
        .map(|m| {
            let group: Vec<&RunSummary> = rows
                .iter()
                .filter(|r| r.batch_size == m && r.failure.is_none())
                .collect();
            BatchMean {
                batch_size: m,
                runs: group.len(),
                mean_final_psi: mean(group.iter().map(|r| r.final_psi)),
                mean_linf_error: mean(group.iter().map(|r| r.linf_error)),
                mean_rel_l2_error: mean(group.iter().map(|r| r.rel_l2_error)),
            }
        })
        .collect();
    let status = if rows.iter().any(|r| r.failure.is_some()) {
        "failed"
    } else {
        "ok"
    };
    Summary {
        command,
        status,
        elapsed_seconds: elapsed,
        config,
        runs: rows,
        means,
    }
}

pub fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let mut f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut f, value).map_err(std::io::Error::from)?;
    writeln!(f)?;
    f.flush()?;
    Ok(())
}
