use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use glyrl::cohort::write_cohort;
use glyrl::config::PipelineConfig;
use glyrl::pipeline::{self, Layout};
use glyrl::synthgen::{self, GeneratorConfig};
use glyrl::{Error, Result};

#[derive(Parser)]
#[command(
    name = "glyrl",
    version,
    about = "Glycemic-target policies from logged ICU trajectories"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Config file (TOML): the pipeline config, or the generator config for
    /// `synth`. Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Caps worker threads; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Parse, filter, impute, split and normalize a cohort CSV.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the sparse autoencoder on a state table.
    TrainEncoder {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cluster a state or latent table into discrete states.
    Cluster {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build trajectories and the estimated MDP.
    BuildMdp {
        /// Assignments CSV from `cluster`.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        states: PathBuf,
        #[arg(long)]
        clusters: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve for the optimal policy and evaluate the real one.
    Solve {
        #[arg(long, alias = "input")]
        mdp: PathBuf,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the mortality versus expected-return curve.
    Calibrate {
        #[arg(long)]
        solution: PathBuf,
        #[arg(long)]
        trajectories: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score real and optimal policies into report.json.
    Evaluate {
        #[arg(long)]
        mdp: PathBuf,
        #[arg(long)]
        solution: PathBuf,
        #[arg(long)]
        curve: PathBuf,
        #[arg(long)]
        trajectories: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic cohort with a known latent MDP.
    /// Without --config the planted-harm preset is used.
    Synth {
        #[arg(long)]
        n_patients: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        /// Ground-truth JSON; defaults to `<out>.truth.json`.
        #[arg(long)]
        ground_truth: Option<PathBuf>,
    },
    /// Run every stage end to end.
    Run {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the default pipeline config.
    DefaultConfig,
}

fn load_config(common: &Common) -> Result<PipelineConfig> {
    let mut cfg = match &common.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn write_json<A: serde::Serialize>(path: &Path, value: &A) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

fn synth(
    common: &Common,
    generator: Option<&Path>,
    n_patients: Option<usize>,
    out: &Path,
    ground_truth: Option<&Path>,
) -> Result<()> {
    let mut gen = match generator {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            toml::from_str::<GeneratorConfig>(&text)
                .map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))?
        }
        None => GeneratorConfig::planted(2000, common.seed.unwrap_or(0)),
    };
    if let Some(seed) = common.seed {
        gen.seed = seed;
    }
    if let Some(n) = n_patients {
        gen.n_patients = n;
    }
    let cohort = synthgen::generate(&gen)?;
    let mut w = BufWriter::new(File::create(out).map_err(|e| Error::io(out, e))?);
    write_cohort(&mut w, &cohort.series, &gen.covariates)?;
    w.flush().map_err(|e| Error::io(out, e))?;
    let truth_path = ground_truth
        .map(Path::to_path_buf)
        .unwrap_or_else(|| out.with_extension("truth.json"));
    write_json(&truth_path, &cohort.ground_truth)?;
    let died = cohort.series.iter().filter(|s| s.died()).count();
    log::info!(
        "synth: {} patients ({} died), ground truth in {}",
        cohort.series.len(),
        died,
        truth_path.display()
    );
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    let common = &cli.common;
    if let Some(n) = common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::arg(format!("cannot size the thread pool: {e}")))?;
    }
    match cli.command {
        Command::Synth {
            n_patients,
            out,
            ground_truth,
        } => synth(
            common,
            common.config.as_deref(),
            n_patients,
            &out,
            ground_truth.as_deref(),
        ),
        Command::DefaultConfig => {
            print!("{}", PipelineConfig::default().to_toml());
            Ok(())
        }
        command => {
            let mut cfg = load_config(common)?;
            match command {
                Command::Ingest { input, out } => pipeline::ingest(&cfg, &input, &out).map(drop),
                Command::TrainEncoder { input, out } => {
                    pipeline::train_encoder(&cfg, &input, &out).map(drop)
                }
                Command::Cluster { input, k, out } => {
                    if let Some(k) = k {
                        cfg.clustering.k = k;
                    }
                    pipeline::cluster(&cfg, &input, &out).map(drop)
                }
                Command::BuildMdp {
                    input,
                    states,
                    clusters,
                    out,
                } => pipeline::build_mdp(&cfg, &states, &input, &clusters, &out).map(drop),
                Command::Solve { mdp, epsilon, out } => {
                    if let Some(eps) = epsilon {
                        cfg.solver.epsilon = eps;
                        cfg.validate()?;
                    }
                    pipeline::solve(&cfg, &mdp, &out).map(drop)
                }
                Command::Calibrate {
                    solution,
                    trajectories,
                    out,
                } => pipeline::calibrate(&cfg, &solution, &trajectories, &out).map(drop),
                Command::Evaluate {
                    mdp,
                    solution,
                    curve,
                    trajectories,
                    out,
                } => {
                    let report =
                        pipeline::evaluate(&cfg, &mdp, &solution, &curve, &trajectories, &out)?;
                    println!("{}", serde_json::to_string_pretty(&report)?);
                    Ok(())
                }
                Command::Run { input, out } => {
                    let run = pipeline::run_pipeline(&cfg, &input, &out)?;
                    println!("{}", serde_json::to_string_pretty(&run.report)?);
                    log::info!("artifacts in {}", Layout::new(&out).root.display());
                    Ok(())
                }
                Command::Synth { .. } | Command::DefaultConfig => unreachable!("handled above"),
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
