use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use macect::fbp::{FbpConfig, Padding};
use macect::mbir::{QggmrfOptions, QggmrfPrior, QggmrfSolver};
use macect::phantom::NoiseModel;
use macect_cli::commands::{
    cmd_evaluate, cmd_fbp, cmd_mbir, cmd_phantom, cmd_project, cmd_reconstruct, label_for, metrics_table,
};
use macect_cli::config::DEFAULT_RUN_JSON;
use macect_cli::export::write_json;
use macect_cli::{CliError, CliResult, Method, RunConfig};

const DEFAULT_SEED: u64 = 7;

#[derive(Parser)]
#[command(name = "macect", version, about = "Sparse-view CT reconstruction with multi-agent consensus equilibrium")]
struct Cli {
    /// Seed of the simulated noise.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Directory receiving every output file.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Log progress (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the cracked-cylinder phantom.
    Phantom {
        /// Phantom spec JSON; the built-in 121x121x100 phantom when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
    },
    /// Forward project a volume and add seeded Gaussian noise.
    Project {
        volume: PathBuf,
        /// Geometry JSON; the built-in four-view geometry when omitted.
        #[arg(long)]
        geometry: Option<PathBuf>,
        /// Noise standard deviation relative to the rms projection value.
        #[arg(long, default_value_t = 0.2)]
        noise: f64,
    },
    /// Filtered back projection.
    Fbp {
        sinogram: PathBuf,
        /// Volume whose grid the reconstruction uses.
        #[arg(long)]
        like: Option<PathBuf>,
        /// Raised-cosine cutoff as a fraction of Nyquist; pure ramp when omitted.
        #[arg(long)]
        apodization: Option<f64>,
        /// Detector-row padding: zero or edge.
        #[arg(long, default_value = "edge")]
        padding: String,
    },
    /// qGGMRF model-based reconstruction.
    Mbir {
        sinogram: PathBuf,
        #[arg(long)]
        like: Option<PathBuf>,
        #[arg(long, default_value_t = 0.1)]
        sigma_x: f64,
        #[arg(long, default_value_t = 1.05)]
        q: f64,
        #[arg(long, default_value_t = 0.1)]
        t: f64,
        #[arg(long, default_value_t = 8)]
        passes: usize,
        /// Stop once a pass lowers the cost by less than this fraction.
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        /// Use raster coordinate descent instead of the majorize-minimize solver.
        #[arg(long)]
        icd: bool,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        #[arg(long, default_value_t = 0.3)]
        init_apodization: f64,
    },
    /// Run a full reconstruction from a run config.
    Reconstruct {
        /// Run config JSON; the built-in msf-ri run when omitted.
        config: Option<PathBuf>,
        /// Override the configured method (fbp, mbir, pnp, msf, msf-ri).
        #[arg(long)]
        method: Option<String>,
    },
    /// Score reconstructions against a ground truth.
    Evaluate {
        recons: Vec<PathBuf>,
        #[arg(long)]
        truth: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let CliError::Numerical { log: Some(path), .. } = &e {
                eprintln!("convergence log: {}", path.display());
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("cannot start {n} threads: {e}")))?;
    }
    let out_dir = cli.out_dir.clone().unwrap_or_else(|| PathBuf::from("."));
    let seed = cli.seed.unwrap_or(DEFAULT_SEED);
    match cli.command {
        Command::Phantom { spec } => {
            let summary = cmd_phantom(spec.as_deref(), &out_dir.join("phantom.raw"))?;
            println!("{}", summary.describe());
        }
        Command::Project { volume, geometry, noise } => {
            let out = out_dir.join("sinogram.raw");
            let s = cmd_project(&volume, geometry.as_deref(), &NoiseModel::new(noise, seed), &out)?;
            let g = s.geometry();
            println!(
                "sinogram {} views x {} channels x {} slices -> {}\nview angles {:?}",
                g.n_views(),
                g.n_channels,
                g.n_slices,
                out.display(),
                g.view_angles_deg
            );
        }
        Command::Fbp {
            sinogram,
            like,
            apodization,
            padding,
        } => {
            let cfg = FbpConfig {
                apodization,
                padding: parse_padding(&padding)?,
            };
            cfg.validate()?;
            let out = out_dir.join("fbp.raw");
            cmd_fbp(&sinogram, like.as_deref(), &cfg, &out)?;
            println!("fbp -> {}", out.display());
        }
        Command::Mbir {
            sinogram,
            like,
            sigma_x,
            q,
            t,
            passes,
            tol,
            icd,
            alpha,
            init_apodization,
        } => {
            let prior = QggmrfPrior {
                sigma_x,
                q,
                t,
                ..Default::default()
            };
            prior.validate()?;
            let opts = QggmrfOptions {
                max_passes: passes,
                stop_rel_change: tol,
                solver: if icd { QggmrfSolver::Icd } else { QggmrfSolver::Majorize { inner: 10 } },
            };
            let out = out_dir.join("mbir.raw");
            cmd_mbir(&sinogram, like.as_deref(), &prior, &opts, alpha, Some(init_apodization), &out)?;
            println!("mbir -> {}", out.display());
        }
        Command::Reconstruct { config, method } => {
            let mut cfg = match &config {
                Some(p) => RunConfig::load(p)?,
                None => RunConfig::from_json(DEFAULT_RUN_JSON)?,
            };
            if let Some(m) = method {
                cfg.method = m.parse::<Method>()?;
            }
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            if let Some(d) = cli.out_dir {
                cfg.out_dir = d;
            }
            let summary = cmd_reconstruct(&cfg)?;
            println!("{}", summary.describe());
        }
        Command::Evaluate { recons, truth } => {
            if recons.is_empty() {
                return Err(CliError::Config("evaluate needs at least one reconstruction".into()));
            }
            let named: Vec<(String, PathBuf)> = recons.iter().map(|p| (label_for(p), p.clone())).collect();
            let rows = cmd_evaluate(&named, &truth)?;
            print!("{}", metrics_table(&rows));
            write_report(&out_dir, &rows)?;
        }
    }
    Ok(())
}

fn parse_padding(s: &str) -> CliResult<Padding> {
    serde_json::from_value(serde_json::Value::String(s.into()))
        .map_err(|_| CliError::Config(format!("unknown padding {s:?} (expected zero or edge)")))
}

fn write_report(dir: &Path, rows: &[macect_cli::commands::EvaluationRow]) -> CliResult<()> {
    macect_cli::export::ensure_dir(dir)?;
    write_json(&dir.join("metrics.json"), &rows)
}
