use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use wavefind::embedding::{gradcheck, GRADCHECK_TOLERANCE};
use wavefind::pipeline::{self, emit_report, generate_data, run_case, write_atomic, SCHEMA_VERSION};
use wavefind::ExperimentConfig;

/// Default number of random instances checked by `gradcheck`.
const GRADCHECK_TRIALS: usize = 20;

#[derive(Parser)]
#[command(name = "wavefind", about = "Discover and invert 1D wave equations from sparse measurements")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a full discovery/embedding experiment and write its report.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `output_dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Noise level as a fraction of the data's standard deviation.
        #[arg(long)]
        noise: Option<f64>,
    },
    /// Write the ground-truth wavefield and the coarse measurements.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare adjoint gradients against finite differences on random instances.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = GRADCHECK_TRIALS)]
        trials: usize,
    },
    /// Print the version and supported config schema.
    Version,
}

fn load(path: &Path) -> anyhow::Result<ExperimentConfig> {
    ExperimentConfig::load(path).with_context(|| format!("loading config {}", path.display()))
}

fn run(cmd: Command) -> anyhow::Result<()> {
    match cmd {
        Command::Run {
            config,
            out,
            seed,
            noise,
        } => {
            let mut cfg = load(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(n) = noise {
                cfg.noise_level = n;
            }
            cfg.validate()?;
            let Some(dir) = out.or_else(|| cfg.output_dir.clone()) else {
                bail!("no output directory: pass --out or set output_dir in the config");
            };
            let report = run_case(&cfg)?;
            emit_report(&report, &dir)?;
            let metrics = std::fs::read_to_string(dir.join("metrics.json"))?;
            print!("{metrics}");
            if let Some(f) = &report.failure {
                bail!("loop {} failed during {}: {}", f.loop_index, f.stage, f.message);
            }
        }
        Command::Simulate { config, out } => {
            let cfg = load(&config)?;
            let (truth, m) = generate_data(&cfg)?;
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            write_atomic(&out.join("wavefield_true.csv"), pipeline::wavefield_csv(&truth).as_bytes())?;
            let coarse = wavefind::Wavefield::from_rows(m.nt(), m.nx(), m.values.clone())?;
            write_atomic(&out.join("measurements.csv"), pipeline::wavefield_csv(&coarse).as_bytes())?;
            let mut json = serde_json::to_string_pretty(&serde_json::json!({
                "time_indices": m.time_indices,
                "space_indices": m.space_indices,
                "noise_level": m.noise_level,
                "seed": m.seed,
            }))?;
            json.push('\n');
            write_atomic(&out.join("measurement_lattice.json"), json.as_bytes())?;
        }
        Command::Gradcheck { seed, trials } => {
            let report = gradcheck(seed, trials)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            if !report.passed() {
                bail!(
                    "max relative error {:.3e} exceeds {:.0e}",
                    report.max_rel_error(),
                    GRADCHECK_TOLERANCE
                );
            }
        }
        Command::Version => {
            println!("wavefind {} (config schema {SCHEMA_VERSION})", env!("CARGO_PKG_VERSION"));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = e.downcast_ref::<wavefind::Error>().map_or("error", |w| w.kind());
            let body = serde_json::json!({ "error": kind, "message": format!("{e:#}") });
            eprintln!("{body}");
            ExitCode::FAILURE
        }
    }
}
