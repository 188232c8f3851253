use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use chromactl::api;
use chromactl::config::{AppConfig, DEFAULT_CONFIG_PATH};
use chromactl::eval::{chart_eval, reliability_trials};
use chromactl::pipeline::{App, MixOptions, PipelineError, EXIT_DEVICE, EXIT_OK, EXIT_VALIDATION};
use chromactl_core::calibrate::DEFAULT_SWEEP_POINTS;
use chromactl_core::dataset::{generate_dataset, write_jsonl};
use chromactl_core::translate::BackendKind;
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "chromactl", version, about = "Natural-language color mixing on a simulated EHD pump rig")]
struct Cli {
    /// Configuration file. Defaults apply when it does not exist.
    #[arg(long, global = true, default_value = DEFAULT_CONFIG_PATH)]
    config: PathBuf,
    /// Override the history file; an empty value disables history.
    #[arg(long, global = true)]
    history: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Rule,
    Llm,
}

impl From<BackendArg> for BackendKind {
    fn from(b: BackendArg) -> Self {
        match b {
            BackendArg::Rule => BackendKind::RuleBased,
            BackendArg::Llm => BackendKind::Llm,
        }
    }
}

#[derive(clap::Args, Clone)]
struct DeviceArgs {
    /// Turn flow noise off.
    #[arg(long)]
    no_noise: bool,
    /// Device seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Translate, check and dispense a request; prints the run record.
    Mix {
        text: String,
        #[arg(long)]
        volume: Option<f64>,
        #[arg(long, value_enum, default_value = "rule")]
        backend: BackendArg,
        #[command(flatten)]
        device: DeviceArgs,
    },
    /// Print the mix plan for a request.
    Plan {
        text: String,
        #[arg(long)]
        volume: Option<f64>,
    },
    /// Print the pump program for a request.
    Gen {
        text: String,
        #[arg(long)]
        volume: Option<f64>,
        #[arg(long, value_enum, default_value = "rule")]
        backend: BackendArg,
    },
    /// Statically check a program file.
    Check { file: PathBuf },
    /// Run a program file on the simulated device.
    Simulate {
        file: PathBuf,
        #[command(flatten)]
        device: DeviceArgs,
    },
    /// Sweep and fit pump models, then save them to the config file.
    Calibrate {
        /// Pump number; all pumps when omitted.
        #[arg(long)]
        pump: Option<usize>,
        #[arg(long, default_value_t = DEFAULT_SWEEP_POINTS)]
        points: usize,
        /// Print the fit without saving it.
        #[arg(long)]
        no_save: bool,
        #[command(flatten)]
        device: DeviceArgs,
    },
    /// Export a fine-tuning dataset as JSON lines.
    Dataset {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluation harnesses.
    Eval {
        #[command(subcommand)]
        which: EvalCommand,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[command(flatten)]
        device: DeviceArgs,
    },
}

#[derive(Subcommand)]
enum EvalCommand {
    /// Match rate over the procedural color chart.
    Chart {
        #[command(flatten)]
        device: DeviceArgs,
        #[arg(long)]
        threshold: Option<f64>,
        /// Include per-target entries in the output.
        #[arg(long)]
        verbose: bool,
    },
    /// Repeat one request and report the success rate.
    Reliability {
        text: String,
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[arg(long, value_enum, default_value = "rule")]
        backend: BackendArg,
        #[command(flatten)]
        device: DeviceArgs,
        #[arg(long)]
        verbose: bool,
    },
}

fn load_config(cli: &Cli) -> Result<AppConfig, PipelineError> {
    let mut cfg = if cli.config.exists() {
        AppConfig::load(&cli.config)?
    } else {
        AppConfig::default()
    };
    if let Some(h) = &cli.history {
        cfg.history_path = h.clone();
    }
    Ok(cfg)
}

fn apply_device(cfg: &mut AppConfig, d: &DeviceArgs) {
    if d.no_noise {
        cfg.device.noise_on = false;
    }
    if let Some(seed) = d.seed {
        cfg.device.seed = seed;
    }
}

/// Pretty JSON on stdout. A closed pipe (e.g. `| head`) is not an error.
fn print_json<T: Serialize>(value: &T) {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn read_file(path: &Path) -> Result<String, PipelineError> {
    Ok(fs::read_to_string(path)?)
}

fn run(cli: Cli) -> Result<i32, PipelineError> {
    let mut cfg = load_config(&cli)?;
    match cli.command {
        Command::Mix {
            text,
            volume,
            backend,
            device,
        } => {
            apply_device(&mut cfg, &device);
            let app = App::from_config(cfg)?;
            let out = app.mix(
                &text,
                &MixOptions {
                    volume_ml: volume,
                    backend: backend.into(),
                },
            )?;
            print_json(&out.record);
            eprintln!(
                "run {}: distance {:.4} ({}), translation {:.1} ms, dispense {:.2} s",
                out.record.id,
                out.record.distance,
                if out.record.matched { "matched" } else { "no match" },
                out.translate_latency_s * 1e3,
                out.record.result.duration_s
            );
        }
        Command::Plan { text, volume } => {
            print_json(&App::new(cfg, chromactl::history::History::in_memory())?.plan(&text, volume)?);
        }
        Command::Gen { text, volume, backend } => {
            let app = App::new(cfg, chromactl::history::History::in_memory())?;
            let t = app.gen(
                &text,
                &MixOptions {
                    volume_ml: volume,
                    backend: backend.into(),
                },
            )?;
            let _ = writeln!(std::io::stdout().lock(), "{}", t.program);
            eprintln!("provenance: {}", t.provenance);
        }
        Command::Check { file } => {
            let app = App::new(cfg, chromactl::history::History::in_memory())?;
            let report = app.check(&read_file(&file)?)?;
            print_json(&report);
            if !report.ok {
                eprintln!("{report}");
                return Ok(EXIT_VALIDATION);
            }
        }
        Command::Simulate { file, device } => {
            apply_device(&mut cfg, &device);
            let app = App::new(cfg, chromactl::history::History::in_memory())?;
            let result = app.execute(&read_file(&file)?)?;
            print_json(&result);
            if !result.ok() {
                return Ok(EXIT_DEVICE);
            }
        }
        Command::Calibrate {
            pump,
            points,
            no_save,
            device,
        } => {
            apply_device(&mut cfg, &device);
            let mut app = App::new(cfg, chromactl::history::History::in_memory())?;
            if !no_save {
                app = app.with_config_path(cli.config.clone());
            }
            print_json(&app.calibrate(pump, points)?);
        }
        Command::Dataset { n, seed, out } => {
            if n == 0 {
                return Err(PipelineError::InvalidOption("--n must be at least 1".into()));
            }
            let records = generate_dataset(n, seed, &cfg.pipeline());
            let file = fs::File::create(&out)?;
            write_jsonl(&records, std::io::BufWriter::new(file))?;
            eprintln!("wrote {} records to {}", records.len(), out.display());
        }
        Command::Eval { which } => match which {
            EvalCommand::Chart {
                device,
                threshold,
                verbose,
            } => {
                apply_device(&mut cfg, &device);
                if let Some(t) = threshold {
                    cfg.match_threshold = t;
                }
                let mut report = chart_eval(&cfg)?;
                eprintln!(
                    "chart: {}/{} matched, match_rate {:.3}",
                    report.matched, report.total, report.match_rate
                );
                if !verbose {
                    report.entries.clear();
                }
                print_json(&report);
            }
            EvalCommand::Reliability {
                text,
                n,
                backend,
                device,
                verbose,
            } => {
                apply_device(&mut cfg, &device);
                let opts = MixOptions {
                    volume_ml: None,
                    backend: backend.into(),
                };
                let mut report = reliability_trials(&text, n, &cfg, &opts)?;
                eprintln!(
                    "reliability: {}/{} matched, success_rate {:.3}, max translation {:.1} ms",
                    report.successes,
                    report.n,
                    report.success_rate,
                    report.max_latency_s * 1e3
                );
                if !verbose {
                    report.latencies_s.clear();
                    report.dispense_s.clear();
                }
                print_json(&report);
            }
        },
        Command::Serve { port, host, device } => {
            apply_device(&mut cfg, &device);
            let app = Arc::new(App::from_config(cfg)?.with_config_path(cli.config.clone()));
            let addr = format!("{host}:{port}")
                .parse()
                .map_err(|e| PipelineError::InvalidOption(format!("address: {e}")))?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(api::serve(app, addr))?;
        }
    }
    Ok(EXIT_OK)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error [{}]: {e}", e.code());
            if let Some(report) = e.report() {
                eprintln!("{report}");
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
