//! `fairot`: command-line front end for the post-training experiments.
//!
//!   fairot run --config exp.toml --method cot --desk-scale
//!   fairot sweep-batch --config exp.toml --sizes 10,20,64
//!   fairot drift --config drift.toml --out runs/drift
//!   fairot export-duals --checkpoint runs/x/checkpoint.json --out duals.csv
//!   fairot table runs/*

use std::collections::BTreeMap;
use std::io::{self, Write};
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use fairot::cot::CotState;
use fairot::harness::{
    self, ExperimentConfig, Method, Overrides, RunReport, OUT_ROOT_ENV,
};

#[derive(Parser, Debug)]
#[command(name = "fairot", version, about = "Optimal-transport post-training for strong demographic parity")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit the logistic baseline and report its test metrics.
    TrainLr(RunArgs),
    /// Run one experiment with the configured method.
    Run(RunArgs),
    /// Final Wass1 and Err-.5 over a grid of batch sizes.
    SweepBatch {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated batch sizes.
        #[arg(long, value_delimiter = ',', default_value = "10,20,64")]
        sizes: Vec<usize>,
        /// Comma-separated methods.
        #[arg(long, value_delimiter = ',', default_value = "cot,dot")]
        methods: Vec<Method>,
    },
    /// Run a changing-unfairness schedule and report per-phase recovery.
    Drift(RunArgs),
    /// Evaluate the dual potentials of a COT checkpoint on a grid.
    ExportDuals {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Number of grid intervals over [0, 1].
        #[arg(long, default_value_t = 100)]
        grid: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Aggregate run manifests into a summary table.
    Table {
        /// Run directories containing manifest.json.
        dirs: Vec<PathBuf>,
        /// Emit CSV instead of fixed-width text.
        #[arg(long)]
        csv: bool,
    },
}

#[derive(Args, Debug, Clone)]
struct RunArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to a subdirectory of $FAIROT_OUT when set.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    method: Option<Method>,
    /// Score and target batch size.
    #[arg(long)]
    batch_size: Option<usize>,
    /// Number of parameter updates.
    #[arg(long)]
    updates: Option<usize>,
    #[arg(long)]
    trace_every: Option<usize>,
    /// Cap updates and rows at the desk-scale preset.
    #[arg(long)]
    desk_scale: bool,
}

impl RunArgs {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        cfg.apply(&Overrides {
            seed: self.seed,
            out: self.out.clone(),
            method: self.method,
            batch_size: self.batch_size,
            updates: self.updates,
            trace_every: self.trace_every,
            desk_scale: self.desk_scale,
        });
        Ok(cfg)
    }
}

fn print_report(out: &mut impl Write, r: &RunReport) -> io::Result<()> {
    let m = r.final_metrics;
    writeln!(
        out,
        "{} {}: Err-.5 {:.4}  Wass1 {:.4}  SDD {:.4}  SPDD {:.4}",
        r.config.name, r.config.method, m.err05, m.wass1, m.sdd, m.spdd
    )?;
    if r.config.method != Method::Lr {
        let b = r.lr_metrics;
        writeln!(
            out,
            "  baseline lr: Err-.5 {:.4}  Wass1 {:.4}  SDD {:.4}  SPDD {:.4}",
            b.err05, b.wass1, b.sdd, b.spdd
        )?;
    }
    if let Some(dir) = &r.config.out_dir {
        writeln!(out, "  wrote {}", dir.display())?;
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        // A closed stdout (e.g. piping into `head`) is not an error.
        Err(e) if e.downcast_ref::<io::Error>().is_some_and(|e| e.kind() == io::ErrorKind::BrokenPipe) => Ok(()),
        other => other,
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut out = io::stdout().lock();
    match cli.command {
        Command::TrainLr(args) => {
            let mut cfg = args.config()?;
            cfg.method = Method::Lr;
            print_report(&mut out, &harness::run_experiment(&cfg)?)?;
        }
        Command::Run(args) => print_report(&mut out, &harness::run_experiment(&args.config()?)?)?,
        Command::SweepBatch { run, sizes, methods } => {
            let cfg = run.config()?;
            let rows = harness::run_batch_sweep(&cfg, &methods, &sizes)?;
            writeln!(out, "{:<6} {:>6} {:>8} {:>8}", "method", "batch", "Err-.5", "Wass1")?;
            for r in rows {
                writeln!(out, "{:<6} {:>6} {:>8.4} {:>8.4}", r.method, r.batch_size, r.err05, r.wass1)?;
            }
        }
        Command::Drift(args) => {
            let report = harness::run_drift(&args.config()?)?;
            print_report(&mut out, &report)?;
            writeln!(out, "{:>5} {:>5} {:>8} {:>10} {:>10}", "phase", "rate", "min W1", "to min", "recovery")?;
            for p in &report.phases {
                let rec = p.updates_to_recovery.map_or("-".to_string(), |u| u.to_string());
                writeln!(
                    out,
                    "{:>5} {:>5.2} {:>8.4} {:>10} {:>10}",
                    p.phase, p.rate, p.min_wass1, p.updates_to_min, rec
                )?;
            }
        }
        Command::ExportDuals { checkpoint, grid, out: path } => {
            let text = std::fs::read_to_string(&checkpoint)
                .with_context(|| format!("reading {}", checkpoint.display()))?;
            let state = CotState::from_checkpoint(&text)?;
            let labels: BTreeMap<_, _> = state.pairs.keys().map(|k| (k.clone(), k.to_string())).collect();
            let rows = harness::export_dual_snapshot(&state.pairs, &labels, &harness::unit_grid(grid));
            harness::write_dual_snapshot(&path, &rows)?;
            writeln!(out, "wrote {} rows to {}", rows.len(), path.display())?;
        }
        Command::Table { dirs, csv } => {
            if dirs.is_empty() {
                bail!("no run directories given (set them explicitly or use ${OUT_ROOT_ENV}/*)");
            }
            let manifests = dirs
                .iter()
                .map(|d| harness::read_manifest(d).with_context(|| format!("reading {}", d.display())))
                .collect::<Result<Vec<_>>>()?;
            let rows = harness::aggregate(&manifests);
            if csv {
                write!(out, "{}", harness::table_csv(&rows)?)?;
            } else {
                write!(out, "{}", harness::format_table(&rows))?;
            }
        }
    }
    Ok(())
}
