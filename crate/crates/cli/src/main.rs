use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nebpeak::harness::MatchRadius;
use nebpeak::pipeline::{self, PipelineConfig, Stage, StageError};

#[derive(Parser)]
#[command(name = "nebpeak", version, about = "GC×GC-MS peak detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Full pipeline: NEB fit, segmentation, peak picking, merging.
    Run(Settings),
    /// Fit the NEB model and write per-scan diagnostics.
    FitNeb(Settings),
    /// Segment the processed matrix into peak regions.
    Segment(Settings),
    /// Fit mixtures to the stored regions and extract peaks.
    Pick(Settings),
    /// Merge stored peaks into the final table.
    Merge(Settings),
    /// Search the cutoff and shape family.
    Optimize(Settings),
    /// Generate a synthetic chromatogram from a JSON spec.
    Simulate {
        spec: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Score a peak table against planted peaks.
    Score {
        #[arg(long)]
        peaks: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long, default_value_t = 1)]
        row_radius: usize,
        #[arg(long, default_value_t = 3)]
        col_radius: usize,
        #[command(flatten)]
        settings: Settings,
    },
}

/// Mirrors the keys of the config file; flags override the file.
#[derive(Args, Default)]
struct Settings {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    scans: Option<String>,
    #[arg(long)]
    spectra: Option<String>,
    #[arg(long)]
    library: Option<String>,
    #[arg(long)]
    n1: Option<String>,
    #[arg(long)]
    n2: Option<String>,
    #[arg(long)]
    rt1_step: Option<String>,
    #[arg(long)]
    rt2_step: Option<String>,
    /// 1, 10, 100 (or any positive number) or `optimize`.
    #[arg(long)]
    nu: Option<String>,
    /// Comma-separated cutoffs searched by `--nu optimize`.
    #[arg(long)]
    cutoffs: Option<String>,
    /// pmm, tgmm, gmm, gamm, egmm or `optimize`.
    #[arg(long)]
    family: Option<String>,
    /// mse, aic or bic.
    #[arg(long)]
    objective: Option<String>,
    #[arg(long)]
    merge_cutoff: Option<String>,
    #[arg(long)]
    em_tol: Option<String>,
    #[arg(long)]
    em_max_iter: Option<String>,
    #[arg(long)]
    em_restarts: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    threads: Option<String>,
    #[arg(long)]
    out: Option<String>,
}

impl Settings {
    fn resolve(&self) -> Result<PipelineConfig, StageError> {
        let at_config = |error| StageError {
            stage: Stage::Config,
            error,
        };
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::from_file(p).map_err(at_config)?,
            None => PipelineConfig::default(),
        };
        let flags = [
            ("scans", &self.scans),
            ("spectra", &self.spectra),
            ("library", &self.library),
            ("n1", &self.n1),
            ("n2", &self.n2),
            ("rt1_step", &self.rt1_step),
            ("rt2_step", &self.rt2_step),
            ("nu", &self.nu),
            ("cutoffs", &self.cutoffs),
            ("family", &self.family),
            ("objective", &self.objective),
            ("merge_cutoff", &self.merge_cutoff),
            ("em_tol", &self.em_tol),
            ("em_max_iter", &self.em_max_iter),
            ("em_restarts", &self.em_restarts),
            ("seed", &self.seed),
            ("threads", &self.threads),
            ("out", &self.out),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, v).map_err(at_config)?;
            }
        }
        cfg.validate().map_err(at_config)?;
        Ok(cfg)
    }
}

fn execute(command: Command) -> Result<serde_json::Value, StageError> {
    Ok(match command {
        Command::Run(s) => value(&pipeline::run_pipeline(&s.resolve()?)?),
        Command::FitNeb(s) => {
            let fit = pipeline::stage_fit_neb(&s.resolve()?)?;
            serde_json::json!({ "params": fit.params, "iterations": fit.iterations, "converged": fit.converged })
        }
        Command::Segment(s) => serde_json::json!({ "regions": pipeline::stage_segment(&s.resolve()?)?.len() }),
        Command::Pick(s) => serde_json::json!({ "peaks": pipeline::stage_pick(&s.resolve()?)?.len() }),
        Command::Merge(s) => serde_json::json!({ "peaks": pipeline::stage_merge(&s.resolve()?)?.len() }),
        Command::Optimize(s) => {
            let res = pipeline::stage_optimize(&s.resolve()?)?;
            serde_json::json!({ "nu_tilde": res.nu_tilde, "objective": res.objective })
        }
        Command::Simulate { spec, out } => {
            let (run, truth) = pipeline::simulate(&spec, &out)?;
            serde_json::json!({ "scans": run.len(), "planted": truth.len() })
        }
        Command::Score {
            peaks,
            truth,
            row_radius,
            col_radius,
            settings,
        } => {
            let cfg = settings.resolve()?;
            let geometry = cfg.geometry().map_err(|error| StageError {
                stage: Stage::Config,
                error,
            })?;
            let radius = MatchRadius {
                rows: row_radius,
                cols: col_radius,
            };
            value(&pipeline::score_files(&peaks, &truth, geometry, radius)?)
        }
    })
}

fn value<T: serde::Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).unwrap_or(serde_json::Value::Null)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(v) => {
            println!("{v}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::FAILURE
        }
    }
}
