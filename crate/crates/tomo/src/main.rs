use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tomo::config::{preset, preset_names, Estimator, ExperimentConfig};
use tomo::graph::RandomGraphConfig;
use tomo::pipeline::{run_tomography_pipeline, PipelineOptions};
use tomo::rank_study::{run_rank_study, write_rank_csv};
use tomo::report::{emit_report, load_report, render_summary};
use tomo::{Result, TomoError};

#[derive(Parser)]
#[command(name = "tomo", version, about = "Ancilla-assisted Rydberg tomography experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a reconstruction experiment and write its report.
    Run {
        /// Preset name or path to a TOML config.
        config: String,
        /// Replace the configured seed list with this single seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        shots: Option<u64>,
        #[arg(long, value_enum)]
        estimator: Option<Estimator>,
        #[arg(long, env = "TOMO_OUT_DIR", default_value = "runs")]
        out: PathBuf,
        /// Worker threads.
        #[arg(long)]
        parallel: Option<usize>,
        /// Allow system sizes above 4.
        #[arg(long)]
        long_runtime: bool,
    },
    /// Numerical rank of Q over random layouts, written as CSV.
    RankStudy {
        /// TOML random-graph config.
        config: PathBuf,
        #[arg(long, env = "TOMO_OUT_DIR", default_value = "runs")]
        out: PathBuf,
        #[arg(long)]
        parallel: Option<usize>,
    },
    /// Parse and check a config without running it.
    Validate { config: String },
    /// Validate a run directory's report and print a summary.
    Report { run_dir: PathBuf },
    /// List the built-in presets.
    Presets,
}

fn load_config(arg: &str) -> Result<ExperimentConfig> {
    let path = Path::new(arg);
    if path.exists() {
        return ExperimentConfig::load(path);
    }
    if preset_names().contains(&arg) {
        return preset(arg);
    }
    Err(TomoError::Config(format!(
        "{arg:?} is neither a config file nor a preset ({})",
        preset_names().join(", ")
    )))
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, seed, shots, estimator, out, parallel, long_runtime } => {
            let mut cfg = load_config(&config)?;
            if let Some(s) = seed {
                cfg.sampling.seeds = vec![s];
            }
            if let Some(s) = shots {
                cfg.sampling.shots = s;
            }
            if let Some(e) = estimator {
                cfg.estimator = e;
            }
            cfg.long_runtime |= long_runtime;
            cfg.validate()?;
            let dir = out.join(&cfg.name);
            let options = PipelineOptions {
                threads: parallel,
                checkpoint_dir: cfg.output.checkpoint_interval.map(|_| dir.join("checkpoints")),
            };
            let output = run_tomography_pipeline(&cfg, &options)?;
            emit_report(&output, &dir)?;
            render_summary(&output.report, &mut std::io::stdout()).map_err(|e| TomoError::io("<stdout>", e))?;
            println!("report          {}", dir.display());
        }
        Command::RankStudy { config, out, parallel } => {
            let cfg = RandomGraphConfig::load(&config)?;
            let rows = tomo::parallel::with_parallelism(parallel, || run_rank_study(&cfg))??;
            std::fs::create_dir_all(&out).map_err(|e| TomoError::io(&out, e))?;
            let path = out.join(format!("rank_n{}.csv", cfg.system_count));
            write_rank_csv(&rows, &path)?;
            for &m in &cfg.arrangements {
                let sel: Vec<_> = rows.iter().filter(|r| r.m == m).collect();
                let full = sel.iter().filter(|r| r.full_rank()).count();
                let mean = sel.iter().map(|r| r.ratio).sum::<f64>() / sel.len() as f64;
                println!("M={m:<3} K={:<5} mean ratio {mean:.4}  full rank {full}/{}", sel[0].k, sel.len());
            }
            println!("wrote {}", path.display());
        }
        Command::Validate { config } => {
            let cfg = load_config(&config)?;
            let m = cfg.arrangements()?.len();
            println!("{}: N={} N_A={} M={m} ok", cfg.name, cfg.num_system(), cfg.num_ancilla());
        }
        Command::Report { run_dir } => {
            let report = load_report(&run_dir)?;
            render_summary(&report, &mut std::io::stdout()).map_err(|e| TomoError::io("<stdout>", e))?;
        }
        Command::Presets => {
            for name in preset_names() {
                println!("{name}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
