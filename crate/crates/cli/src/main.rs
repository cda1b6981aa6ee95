//! `overshadow` command-line driver.
//!
//! Every command reads an experiment config (`--config`), or the desk defaults
//! for `--seed` when no config is given. Flags override config fields. On
//! failure a single `error: <reason>: <detail>` line goes to stderr and the
//! process exits nonzero (2 when an input file is missing).

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use overshadow::experiment::{self, ExperimentConfig, ExperimentError, ProviderSource};
use overshadow::lm::Precision;
use overshadow::provider::{LocalProvider, LogprobServer};
use overshadow::scaling_law::LawVariable;

#[derive(Parser)]
#[command(name = "overshadow", version, about = "Knowledge-overshadowing laboratory")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Global seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for sweeps and evaluation.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Plausibility alpha for detection and CoDA; overrides the config.
    #[arg(long, global = true)]
    alpha: Option<f64>,
    /// Remote log-probability server used instead of a checkpoint.
    #[arg(long, global = true)]
    endpoint: Option<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Var {
    P,
    L,
    S,
}

impl From<Var> for LawVariable {
    fn from(v: Var) -> Self {
        match v {
            Var::P => LawVariable::P,
            Var::L => LawVariable::L,
            Var::S => LawVariable::S,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Prec {
    F32,
    F64,
}

#[derive(Subcommand)]
enum Command {
    /// Write the effective config (defaults plus overrides) as JSON.
    Config,
    /// Generate the corpus.
    Gen,
    /// Train a model on a corpus.
    Train {
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Continue training a checkpoint on another corpus.
    Finetune {
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Measure RR, HR and R of a checkpoint on a corpus.
    Probe {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Fit a log-linear law to a rate table.
    Fit {
        #[arg(long)]
        rates: PathBuf,
        #[arg(long, value_enum, ignore_case = true)]
        variable: Var,
    },
    /// Evaluate a fitted law at the given x values.
    Predict {
        #[arg(long)]
        fit: PathBuf,
        #[arg(long = "x", required = true, value_delimiter = ',')]
        xs: Vec<f64>,
    },
    /// Greedy vs CoDA exact match with detection rates.
    CodaEval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Overshadowing reports for every probe.
    Detect {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Run gen, train and probe over one schedule, then fit the law.
    Sweep {
        #[arg(long, value_enum, ignore_case = true)]
        variable: Var,
    },
    /// Finite-difference check of the micro model's gradients.
    GradCheck {
        #[arg(long, default_value_t = 1e-5)]
        epsilon: f64,
        #[arg(long, value_enum, default_value_t = Prec::F64)]
        precision: Prec,
    },
    /// Serve a checkpoint over the log-probability wire protocol.
    Serve {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8765")]
        addr: String,
    },
}

fn config(g: &Global) -> Result<ExperimentConfig, ExperimentError> {
    let mut cfg = match (&g.config, g.seed) {
        (Some(path), _) => ExperimentConfig::load(path)?,
        (None, Some(seed)) => ExperimentConfig::desk(seed),
        (None, None) => return Err(ExperimentError::Config("pass --config or --seed; there is no default seed".into())),
    };
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &g.out {
        cfg.out_dir = out.clone();
    }
    if let Some(alpha) = g.alpha {
        cfg.plausibility_alpha = alpha;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn source(g: &Global, checkpoint: Option<&PathBuf>) -> Result<ProviderSource, ExperimentError> {
    match (checkpoint, &g.endpoint) {
        (Some(_), Some(_)) => Err(ExperimentError::Config("pass either --checkpoint or --endpoint, not both".into())),
        (Some(path), None) => Ok(ProviderSource::Checkpoint(path.clone())),
        (None, Some(url)) => Ok(ProviderSource::Remote(url.clone())),
        (None, None) => Err(ExperimentError::Config("pass --checkpoint or --endpoint".into())),
    }
}

fn sibling(path: &Path, name: &str, out: Option<&PathBuf>) -> PathBuf {
    match out {
        Some(dir) => dir.join(name),
        None => path.parent().unwrap_or(Path::new(".")).join(name),
    }
}

fn show(path: &Path) {
    println!("{}", path.display());
}

fn run(cli: Cli) -> Result<(), ExperimentError> {
    let g = &cli.global;
    match cli.command {
        Command::Config => {
            let cfg = config(g)?;
            println!("{}", serde_json::to_string_pretty(&cfg).expect("config serializes"));
        }
        Command::Gen => show(&experiment::cmd_gen(&config(g)?)?),
        Command::Train { corpus } => show(&experiment::cmd_train(&config(g)?, &corpus)?),
        Command::Finetune { base, corpus } => show(&experiment::cmd_finetune(&config(g)?, &base, &corpus)?),
        Command::Probe { checkpoint, corpus } => {
            let cfg = config(g)?;
            show(&experiment::cmd_probe(&cfg, &checkpoint, &corpus)?);
        }
        Command::Fit { rates, variable } => {
            let variable = LawVariable::from(variable);
            let out = sibling(&rates, &format!("law_{variable}.json"), g.out.as_ref());
            let rec = experiment::cmd_fit(&rates, variable, &out)?;
            println!("{}", out.display());
            println!("coef={} x_c={} r2={}", rec.coef, rec.x_c.map_or("undefined".into(), |x| x.to_string()), rec.r2);
        }
        Command::Predict { fit, xs } => {
            let out = sibling(&fit, experiment::PREDICTIONS_FILE, g.out.as_ref());
            let preds = experiment::cmd_predict(&fit, &xs, &out)?;
            println!("{}", out.display());
            for p in preds {
                println!("x={} r={}", p.x, p.r);
            }
        }
        Command::CodaEval { checkpoint, corpus } => {
            let cfg = config(g)?;
            let ev = experiment::cmd_coda(&cfg, &source(g, checkpoint.as_ref())?, &corpus, g.jobs)?;
            println!("{}", cfg.out_dir.join(experiment::CODA_FILE).display());
            for (name, s) in [("dominant", &ev.dominant), ("suppressed", &ev.suppressed)] {
                println!("{name}: em_greedy={:.1} em_coda={:.1} flag_rate={:.1}", s.em_greedy, s.em_coda, s.flag_rate);
            }
        }
        Command::Detect { checkpoint, corpus } => {
            let cfg = config(g)?;
            experiment::cmd_detect(&cfg, &source(g, checkpoint.as_ref())?, &corpus, g.jobs)?;
            show(&cfg.out_dir.join(experiment::DETECT_FILE));
        }
        Command::Sweep { variable } => {
            let cfg = config(g)?;
            let out = experiment::cmd_sweep(&cfg, variable.into(), g.jobs)?;
            show(&out.rates_path);
            show(&out.fit_path);
        }
        Command::GradCheck { epsilon, precision } => {
            let precision = match precision {
                Prec::F32 => Precision::F32,
                Prec::F64 => Precision::F64,
            };
            let seed = g.seed.unwrap_or(overshadow::lm::GRAD_CHECK_SEED);
            let r = experiment::cmd_grad_check(seed, epsilon, precision)?;
            println!("max_rel_error={:e} max_abs_error={:e} params={}", r.max_rel_error, r.max_abs_error, r.n_params);
        }
        Command::Serve { checkpoint, addr } => {
            let ckpt = experiment::load_checkpoint(&checkpoint)?;
            let server = LogprobServer::spawn(Arc::new(LocalProvider::new(ckpt)), &addr)
                .map_err(|source| ExperimentError::Io { path: PathBuf::from(&addr), source })?;
            println!("{}", server.url());
            server.join();
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 64 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}: {}", e.reason(), e.to_string().replace('\n', " "));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
