use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fwilab::geomodel::Family;
use fwilab::pipeline::{self, EvalOptions, ExperimentConfig, TrainOptions};

#[derive(Debug, Parser)]
#[command(name = "fwilab", version, about = "Synthetic full-waveform inversion laboratory")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// Experiment config (JSON). Without it the desk-scale FlatVel defaults apply.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Start from the full-scale preset of a family (flat or curved) instead of the desk defaults.
    #[arg(long, global = true, conflicts_with = "config")]
    full_scale: Option<Family>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for generation, evaluation and CRF fitting.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Grid spacing in metres.
    #[arg(long, global = true)]
    dx: Option<f64>,
    /// Simulation time step in seconds.
    #[arg(long, global = true)]
    dt: Option<f64>,
    /// Absorbing sponge width in cells.
    #[arg(long, global = true)]
    sponge_width: Option<usize>,
    /// Ricker peak frequency in Hz.
    #[arg(long, global = true)]
    freq: Option<f64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the train and test datasets.
    Gen,
    /// Train the inversion network.
    Train {
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Insert residual blocks after the strided encoder convolutions.
        #[arg(long)]
        residual: bool,
        /// Continue from last.ckpt.
        #[arg(long)]
        resume: bool,
    },
    /// Fit the CRF on the validation split and store it in best.ckpt.
    FitCrf,
    /// Score best.ckpt on the test split.
    Eval {
        /// Refine predictions with the fitted CRF.
        #[arg(long)]
        crf: bool,
        /// Add white noise at this SNR (dB) before prediction.
        #[arg(long)]
        snr_db: Option<f64>,
        /// Also write the nearest-neighbour audit.
        #[arg(long)]
        nn_audit: bool,
    },
    /// Score the no-fault, two-fault and smooth generalization suites.
    Scenarios,
    /// Nearest training model for every test model.
    NnAudit,
    /// Print the effective config as JSON.
    ShowConfig,
}

fn build_config(g: &GlobalArgs) -> fwilab::Result<ExperimentConfig> {
    let mut cfg = match (&g.config, g.full_scale) {
        (Some(path), _) => ExperimentConfig::load(path)?,
        (None, Some(family)) => ExperimentConfig::full_scale(family)?,
        (None, None) => ExperimentConfig::default(),
    };
    if let Some(v) = g.seed {
        cfg.seed = v;
    }
    if let Some(v) = &g.out {
        cfg.out_dir = v.clone();
    }
    if g.workers.is_some() {
        cfg.workers = g.workers;
    }
    if let Some(v) = g.dx {
        cfg.sim.dx = v;
    }
    if let Some(v) = g.dt {
        cfg.sim.dt = v;
    }
    if let Some(v) = g.sponge_width {
        cfg.sim.sponge_width = v;
    }
    if let Some(v) = g.freq {
        cfg.sim.source_freq = v;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> fwilab::Result<()> {
    let mut cfg = build_config(&cli.global)?;
    if let Command::Train { lr, batch_size, epochs, residual, .. } = &cli.command {
        if let Some(v) = lr {
            cfg.training.lr.base = *v;
        }
        if let Some(v) = batch_size {
            cfg.training.batch_size = *v;
        }
        if let Some(v) = epochs {
            cfg.training.epochs = *v;
        }
        cfg.network.residual |= *residual;
    }
    cfg.validate()?;
    let workers = cfg.workers;
    pipeline::with_workers(workers, || match cli.command {
        Command::Gen => {
            let r = pipeline::cmd_gen(&cfg)?;
            println!("config {}", r.config_hash);
            println!("{}\n{}\n{}", r.train.display(), r.test.display(), r.manifest.display());
            Ok(())
        }
        Command::Train { resume, .. } => {
            let r = pipeline::cmd_train(&cfg, TrainOptions { resume })?;
            println!("parameters {}", r.param_count);
            println!("loss {:.4e} -> {:.4e}, best validation mae {:.3} m/s", r.initial_loss(), r.final_loss(), r.best_val_mae);
            Ok(())
        }
        Command::FitCrf => {
            let r = pipeline::cmd_fit_crf(&cfg)?;
            let s = r.settings;
            println!("w {:.6} lambda1 {} lambda2 {} window {}", s.w, s.lambda1, s.lambda2, s.window);
            println!("validation mae {:.3} -> {:.3} m/s", r.val_mae_nn, r.val_mae_crf);
            Ok(())
        }
        Command::Eval { crf, snr_db, nn_audit } => {
            let r = pipeline::cmd_eval(&cfg, EvalOptions { crf, snr_db, nn_audit })?;
            println!("{}", fwilab::metrics::MetricReport::csv_header());
            println!("{}", r.aggregate.csv_row(&r.tag));
            Ok(())
        }
        Command::Scenarios => {
            println!("{}", fwilab::metrics::MetricReport::csv_header());
            for r in pipeline::cmd_scenarios(&cfg)? {
                println!("{}", r.nn.csv_row(&format!("{}_nn", r.name)));
                if let Some(c) = r.crf {
                    println!("{}", c.csv_row(&format!("{}_crf", r.name)));
                }
            }
            Ok(())
        }
        Command::NnAudit => {
            let m = pipeline::cmd_nn_audit(&cfg)?;
            let mean = m.iter().map(|x| x.distance).sum::<f64>() / m.len().max(1) as f64;
            println!("{} test models, mean nearest distance {mean:.3}", m.len());
            Ok(())
        }
        Command::ShowConfig => {
            println!("{}", serde_json::to_string_pretty(&cfg)?);
            Ok(())
        }
    })?
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(u8::try_from(e.code()).unwrap_or(1))
        }
    }
}
