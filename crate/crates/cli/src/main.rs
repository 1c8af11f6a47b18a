//! `fade`: run simulated speech recognition threshold experiments.
//!
//! Exit codes: 0 success, 1 a condition or run failed, 2 configuration or
//! usage error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::info;

use fade_core::features::{Frontend, FrontendConfig, MfccConfig, SgbfbConfig};
use fade_core::frontend::{read_wav, write_wav, AudioBuffer};
use fade_core::noise::{gen_gated, gen_stationary_speech_shaped, GateConfig};
use fade_core::runner::{
    emit_evaluation, emit_reports, evaluate, load_results, output_dir, run_conditions, summary_csv, ConditionKey,
    EmpiricalTable, ExperimentConfig, ResultBundle, RowCache,
};
use fade_core::sim::{srt_uncertainty, srt_with_method, RecognitionMatrix, SrtMethod};
use fade_core::Error;

#[derive(Parser)]
#[command(name = "fade", version, about = "Simulation-based speech recognition threshold prediction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every condition of an experiment and write reports.
    Run {
        #[command(flatten)]
        common: RunArgs,
    },
    /// Compare a finished run with listener data.
    Evaluate {
        /// Directory written by `fade run`.
        #[arg(long)]
        results: PathBuf,
        /// CSV: speaker,language,effort,noise,srt_db,sem_db,listeners
        #[arg(long)]
        empirical: PathBuf,
        /// CSV: speaker,language,noise,listener,srt_plain_db,srt_lombard_db
        #[arg(long)]
        listeners: Option<PathBuf>,
        /// Defaults to the results directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// SRT of one recognition matrix, or of one condition of a config.
    Srt {
        /// Matrix CSV (train_snr,test_snr,rate,count).
        #[arg(long, conflicts_with = "condition")]
        matrix: Option<PathBuf>,
        /// Condition to simulate, as feature/speaker/language/effort/noise.
        #[arg(long, requires = "config")]
        condition: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long, default_value_t = 0.5)]
        criterion: f64,
        /// Logistic fits use `--floor` as the lower asymptote.
        #[arg(long, value_enum, default_value_t = Method::Linear)]
        method: Method,
        #[arg(long, default_value_t = 0.25)]
        floor: f64,
    },
    /// Dump the features of a WAV file as CSV (one row per frame).
    Features {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Feature type when no config is given.
        #[arg(long, value_enum, default_value_t = Kind::Sgbfb)]
        kind: Kind,
        /// Take the named feature from this experiment config instead.
        #[arg(long, requires = "feature")]
        config: Option<PathBuf>,
        #[arg(long)]
        feature: Option<String>,
    },
    /// Generate a surrogate masker from reference speech.
    Noise {
        #[arg(long, value_enum)]
        kind: NoiseKindArg,
        /// One or more WAV files whose pooled spectrum shapes the noise.
        #[arg(long, required = true, num_args = 1..)]
        reference: Vec<PathBuf>,
        #[arg(long, default_value_t = 30.0)]
        duration: f64,
        #[arg(long, default_value_t = 250.0)]
        max_gap_ms: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the effective configuration as TOML (the desk default without
    /// `--config`).
    PrintConfig {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(clap::Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    /// Reuse finished rows from an earlier run with the same configuration.
    #[arg(long)]
    resume: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Linear,
    Logistic,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Sgbfb,
    Mfcc,
    /// MFCC without delta coefficients.
    MfccStatic,
}

#[derive(Clone, Copy, ValueEnum)]
enum NoiseKindArg {
    Stationary,
    Gated,
}

enum Failure {
    Run(String),
    Config(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::Manifest(_) => Failure::Config(e.to_string()),
            other => Failure::Run(other.to_string()),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Run(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}

fn load_config(path: &Path, seed: Option<u64>, workers: Option<usize>) -> Result<ExperimentConfig, Failure> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if workers.is_some() {
        cfg.workers = workers;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn report_failures(bundle: &ResultBundle) -> Result<(), Failure> {
    let failed: Vec<String> =
        bundle.failed().map(|c| format!("{}: {}", c.key, c.failure.as_deref().unwrap_or(""))).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Run(format!("{} condition(s) failed:\n  {}", failed.len(), failed.join("\n  "))))
    }
}

fn dispatch(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Run { common } => {
            let mut cfg = load_config(&common.config, common.seed, common.workers)?;
            let out = output_dir(&cfg, common.out.as_deref());
            cfg.out_dir = Some(out.clone());
            std::fs::create_dir_all(&out).map_err(|e| Error::Io { path: out.clone(), source: e })?;
            let cache = RowCache { dir: out.clone(), resume: common.resume };
            let bundle = run_conditions(&cfg, Some(&cache), |_| true)?;
            emit_reports(&bundle, &cfg, &out)?;
            if let Some(e) = &cfg.empirical {
                let emp = EmpiricalTable::read(&e.table, e.listeners.as_deref())?;
                emit_evaluation(&evaluate(&bundle, &emp)?, &out)?;
            }
            print!("{}", summary_csv(&bundle));
            info!("reports written to {}", out.display());
            report_failures(&bundle)
        }
        Command::Evaluate { results, empirical, listeners, out } => {
            let (bundle, _) = load_results(&results)?;
            let emp = EmpiricalTable::read(&empirical, listeners.as_deref())?;
            let eval = evaluate(&bundle, &emp)?;
            let out = out.unwrap_or(results);
            emit_evaluation(&eval, &out)?;
            for p in &eval.panels {
                let s = &p.summary;
                let show = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.3}"));
                println!(
                    "{}: n={} r={} rms={:.2} dB bias={:.2} dB chi2/dof={}",
                    p.name,
                    s.n,
                    show(s.pearson_r),
                    s.rms_db,
                    s.bias_db,
                    show(s.chi2_per_dof)
                );
            }
            Ok(())
        }
        Command::Srt { matrix, condition, config, seed, workers, criterion, method, floor } => {
            let method = match method {
                Method::Linear => SrtMethod::Linear,
                Method::Logistic => SrtMethod::Logistic { floor },
            };
            let m = match (matrix, condition, config) {
                (Some(path), _, _) => RecognitionMatrix::read_csv(&path)?,
                (None, Some(cond), Some(config)) => {
                    let cfg = load_config(&config, seed, workers)?;
                    let key: ConditionKey = cond.parse()?;
                    let bundle = run_conditions(&cfg, None, |k| k == &key)?;
                    let result = bundle.conditions.into_iter().next().expect("one selected condition");
                    result.matrix.ok_or_else(|| Failure::Run(result.failure.unwrap_or_default()))?
                }
                _ => return Err(Failure::Config("give --matrix, or --config with --condition".into())),
            };
            let est = srt_with_method(&m, criterion, method)?;
            println!(
                "srt_db={} sigma_sim_db={} winning_train_snr_db={} uncertainty_db={}",
                est.srt_db,
                est.sigma_sim,
                est.winning_train_snr,
                srt_uncertainty(&est)
            );
            Ok(())
        }
        Command::Features { input, out, kind, config, feature } => {
            let audio = read_wav(&input)?;
            let fe_cfg =
                match (config, feature) {
                    (Some(path), Some(name)) => {
                        let cfg = ExperimentConfig::load(&path)?;
                        cfg.features.into_iter().find(|f| f.name == name).map(|f| f.frontend).ok_or_else(|| {
                            Failure::Config(format!("no feature named '{name}' in {}", path.display()))
                        })?
                    }
                    _ => match kind {
                        Kind::Sgbfb => FrontendConfig::sgbfb(SgbfbConfig::default()),
                        Kind::Mfcc => FrontendConfig::mfcc(MfccConfig::default()),
                        Kind::MfccStatic => FrontendConfig::mfcc(MfccConfig::without_deltas()),
                    },
                };
            let fm = Frontend::new(&fe_cfg, audio.sample_rate())?.extract(&audio)?;
            fm.write_csv(&out)?;
            info!("{} frames × {} coefficients written to {}", fm.frames(), fm.dim(), out.display());
            Ok(())
        }
        Command::Noise { kind, reference, duration, max_gap_ms, seed, out } => {
            let mut samples = Vec::new();
            let mut sr = None;
            for p in &reference {
                let a = read_wav(p)?;
                if sr.is_some_and(|r| r != a.sample_rate()) {
                    return Err(Failure::Config("reference files differ in sample rate".into()));
                }
                sr = Some(a.sample_rate());
                samples.extend_from_slice(a.samples());
            }
            let reference = AudioBuffer::new(samples, sr.expect("at least one reference"))?;
            let base = gen_stationary_speech_shaped(&reference, duration, seed)?;
            let noise = match kind {
                NoiseKindArg::Stationary => base,
                NoiseKindArg::Gated => gen_gated(&base, max_gap_ms, &GateConfig::default(), seed)?.source,
            };
            write_wav(&out, &noise.audio)?;
            Ok(())
        }
        Command::PrintConfig { config, seed } => {
            let mut cfg = match config {
                Some(p) => ExperimentConfig::load(&p)?,
                None => ExperimentConfig::desk(1),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            print!("{}", cfg.to_toml()?);
            Ok(())
        }
    }
}
