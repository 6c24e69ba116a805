use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use mbgp_cli::config::ExperimentConfig;
use mbgp_cli::diagnostics::run_diagnostics;
use mbgp_cli::experiment::{run_single, run_sweep};
use mbgp_cli::output::{self, summarize};
use mbgp_cli::{parse_config, CliError, CliResult};

#[derive(Parser)]
#[command(name = "mbgp", version, about = "Mini-batch proximal GP collocation solver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// One run with loss history, final solve and error grid.
    Run(Common),
    /// Every batch size in [sweep] over several realizations.
    Sweep(Common),
    /// Self-checks on a small instance; writes diagnostics.csv.
    Diagnose(Common),
    /// One run without loss recording; writes the error grid only.
    Predict(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Overrides solver.seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides output.dir.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Validate and print the resolved configuration, then stop.
    #[arg(long)]
    dry_run: bool,
    /// Worker threads for sweep realizations.
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

fn load(c: &Common) -> CliResult<ExperimentConfig> {
    let mut cfg = parse_config(&c.config)?;
    if let Some(s) = c.seed {
        cfg.solver.seed = s;
    }
    if let Some(o) = &c.out {
        cfg.output.dir = o.clone();
    }
    if c.threads == 0 {
        return Err(CliError::Config("--threads must be at least 1".into()));
    }
    Ok(cfg)
}

fn execute(cli: Cli) -> CliResult<()> {
    let (name, common) = match &cli.command {
        Command::Run(c) => ("run", c),
        Command::Sweep(c) => ("sweep", c),
        Command::Diagnose(c) => ("diagnose", c),
        Command::Predict(c) => ("predict", c),
    };
    let cfg = load(common)?;
    if name == "sweep" && cfg.sweep.is_none() {
        return Err(CliError::Config("sweep: the config has no [sweep] section".into()));
    }
    if common.dry_run {
        println!("{}", serde_json::to_string_pretty(&cfg).expect("config serializes"));
        return Ok(());
    }
    let dir = cfg.output.dir.clone();
    std::fs::create_dir_all(&dir)?;
    let start = Instant::now();
    let runs = match name {
        "diagnose" => {
            let rows = run_diagnostics(&cfg)?;
            output::write_diagnostics(&dir.join("diagnostics.csv"), &rows)?;
            for r in &rows {
                println!(
                    "{:<28} {:>24} {:>24} {}",
                    r.name,
                    output::fmt_f64(r.measured),
                    output::fmt_f64(r.threshold),
                    if r.pass { "PASS" } else { "FAIL" }
                );
            }
            let failed = rows.iter().filter(|r| !r.pass).count();
            return if failed == 0 {
                Ok(())
            } else {
                Err(CliError::ChecksFailed(failed))
            };
        }
        "sweep" => run_sweep(&cfg, common.threads)?,
        "predict" => vec![run_single(&cfg, false)?],
        _ => vec![run_single(&cfg, true)?],
    };
    let keyed = name == "sweep";
    if name != "predict" {
        output::write_loss_history(&dir.join("loss_history.csv"), &runs, keyed)?;
    }
    if cfg.output.error_grid {
        output::write_error_grid(&dir.join("error_grid.csv"), &runs, keyed)?;
    }
    let summary = summarize(name, &cfg, &runs, start.elapsed().as_secs_f64());
    output::write_json(&dir.join("summary.json"), &summary)?;
    for r in &summary.runs {
        if let Some(w) = &r.warning {
            eprintln!("warning (M={}, realization {}): {w}", r.batch_size, r.realization);
        }
    }
    match runs.iter().find_map(|r| r.failure.clone()) {
        Some(msg) => Err(CliError::RunFailed(msg)),
        None => Ok(()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
