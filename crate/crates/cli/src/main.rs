use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rffp_core::pipeline::{self, EvalSource, PipelineConfig, GRAD_CHECK_TOLERANCE};
use rffp_core::signal::SnrDb;
use rffp_core::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "rffp", version, about = "RF emitter fingerprinting from turn-on transients")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// JSON pipeline config; omitted fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Print the effective config as JSON and exit.
    #[arg(long, global = true)]
    print_config: bool,
    /// Output directory (defaults to the config's output_dir).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate the device fleet and write an IQ corpus.
    Synth {
        #[arg(long)]
        bursts_per_device: Option<usize>,
    },
    /// Extract transients and chirplet features from a corpus.
    Extract {
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Convert a CSV or RFFD feature file into the canonical dataset pair.
    Import { path: PathBuf },
    /// Score candidate window sizes on a corpus.
    OptimizeWindow {
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Train one model and save its checkpoint.
    Train {
        #[arg(long)]
        model: String,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        max_epochs: Option<usize>,
    },
    /// Cross-validate the selected models across SNR levels.
    Evaluate {
        #[arg(long, conflicts_with = "dataset")]
        corpus: Option<PathBuf>,
        /// Imported features, evaluated clean.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        models: Option<Vec<String>>,
        /// SNR levels in dB, or `clean`.
        #[arg(long, value_delimiter = ',', value_parser = parse_snr)]
        snr: Option<Vec<SnrDb>>,
        #[arg(long)]
        folds: Option<usize>,
        #[arg(long)]
        max_epochs: Option<usize>,
        /// Gradient-check every selected architecture first.
        #[arg(long)]
        grad_check: bool,
    },
    /// Print the comparison table from a saved report.
    Report {
        #[arg(long)]
        report: PathBuf,
    },
}

fn parse_snr(s: &str) -> std::result::Result<SnrDb, String> {
    if s.eq_ignore_ascii_case("clean") {
        return Ok(SnrDb::Clean);
    }
    s.parse::<f64>().map(SnrDb::from_db).map_err(|_| format!("bad SNR {s:?}"))
}

fn effective_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.global.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.global.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.global.out {
        cfg.output_dir = o.clone();
    }
    match &cli.command {
        Command::Synth { bursts_per_device: Some(n) } => cfg.bursts_per_device = *n,
        Command::Train { max_epochs, .. } => cfg.max_epochs = max_epochs.or(cfg.max_epochs),
        Command::Evaluate { dataset, models, snr, folds, max_epochs, .. } => {
            if let Some(m) = models {
                cfg.models = m.clone();
            }
            if let Some(s) = snr {
                cfg.snr_levels = s.clone();
            }
            if let Some(k) = folds {
                cfg.folds = *k;
            }
            cfg.max_epochs = max_epochs.or(cfg.max_epochs);
            if dataset.is_some() {
                cfg.import_path = dataset.clone();
            }
        }
        _ => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var("RFFP_THREADS") else { return Ok(()) };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Parameter(format!("RFFP_THREADS={v:?} is not a positive integer")))?;
    // fails only if a pool already exists, which cannot happen this early
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    init_threads()?;
    let cfg = effective_config(&cli)?;
    if cli.global.print_config {
        println!("{}", cfg.to_json()?);
        return Ok(ExitCode::SUCCESS);
    }
    let out = cfg.output_dir.as_path();
    match &cli.command {
        Command::Synth { .. } => {
            let m = pipeline::cmd_synth(&cfg, out)?;
            println!("wrote {} bursts for {} devices to {}", m.bursts.len(), m.devices.len(), out.display());
        }
        Command::Extract { corpus } => {
            let s = pipeline::cmd_extract(&cfg, corpus, out)?;
            println!("window size {}", s.window_size);
            println!("{} samples, histogram {:?}", s.samples, s.histogram);
        }
        Command::Import { path } => {
            let d = pipeline::cmd_import(path, out)?;
            println!("{} rows, histogram {:?}", d.len(), d.histogram());
        }
        Command::OptimizeWindow { corpus } => {
            let best = pipeline::cmd_optimize_window(&cfg, corpus, out)?;
            println!("best window {} (score {:.6})", best.window_size, best.score);
        }
        Command::Train { model, dataset, .. } => {
            let t = pipeline::cmd_train(&cfg, model, dataset, out)?;
            let best = t.best_epoch.and_then(|e| t.train_log.iter().find(|l| l.epoch == e));
            print!("{}: {} params, {} epochs", t.config.architecture, t.param_count, t.train_log.len());
            match best {
                Some(l) => println!(", best epoch {} (val accuracy {:.2}%)", l.epoch, 100.0 * l.val_accuracy),
                None => println!(),
            }
        }
        Command::Evaluate { corpus, dataset, grad_check, .. } => {
            if *grad_check {
                let mut ok = true;
                for (name, err) in pipeline::grad_check_models(&cfg.models, cfg.seed)? {
                    let pass = err < GRAD_CHECK_TOLERANCE;
                    ok &= pass;
                    println!("grad-check {name}: max relative error {err:.3e} {}", if pass { "ok" } else { "FAIL" });
                }
                if !ok {
                    return Ok(ExitCode::FAILURE);
                }
                if corpus.is_none() && cfg.import_path.is_none() {
                    return Ok(ExitCode::SUCCESS);
                }
            }
            let dataset = dataset.as_ref().or(cfg.import_path.as_ref());
            let source = match (corpus, dataset) {
                (Some(c), _) => EvalSource::Corpus(c),
                (None, Some(d)) => EvalSource::Dataset(d),
                (None, None) => return Err(Error::Parameter("evaluate needs --corpus or --dataset".into())),
            };
            let report = pipeline::cmd_evaluate(&cfg, source, out)?;
            print!("{}", report.comparison_text());
        }
        Command::Report { report } => {
            print!("{}", pipeline::cmd_report(report)?.comparison_text());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn error_json(e: &Error) -> String {
    let mut v = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
    match e {
        Error::Io { path, .. } => v["path"] = path.display().to_string().into(),
        Error::Stage { stage, sample, .. } => {
            v["stage"] = (*stage).into();
            v["sample"] = sample.clone().into();
        }
        _ => {}
    }
    v.to_string()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).format_target(false).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("{}", error_json(&e));
            ExitCode::FAILURE
        }
    }
}
