use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use vscreen_core::metrics::read_scored_csv;
use vscreen_core::pipeline::{replay, FileStore, Pipeline, PipelineConfig, ScreeningReport, SessionStore, REPORT_ASSET};
use vscreen_core::stages::{calibrate_operating_point, Policy};

use crate::bench::bench_run;
use crate::screen::{screen_dir, SUMMARY_FILE};
use crate::synth::{synth_generate, LesionKind, SynthSpec};

#[derive(Debug, Parser)]
#[command(name = "vscreen", version, about = "Fundus photo screening pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PolicyArg {
    Youden,
    TargetSensitivity,
    TargetSpecificity,
}

impl From<PolicyArg> for Policy {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::Youden => Policy::Youden,
            PolicyArg::TargetSensitivity => Policy::TargetSensitivity,
            PolicyArg::TargetSpecificity => Policy::TargetSpecificity,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum KindArg {
    BrightBlob,
    DarkBlob,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Screen every image in a directory, one session per image.
    Screen {
        #[arg(long = "in", value_name = "DIR")]
        input: PathBuf,
        #[arg(long, value_name = "FILE")]
        config: PathBuf,
        #[arg(long, value_name = "DIR", default_value = "screening-out")]
        out: PathBuf,
    },
    /// Choose an operating point from a `score,label` CSV.
    Calibrate {
        #[arg(long, value_enum)]
        policy: PolicyArg,
        #[arg(long, required_if_eq_any([("policy", "target-sensitivity"), ("policy", "target-specificity")]))]
        target: Option<f64>,
        scores: PathBuf,
        /// Also write the document to this file.
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic fundus corpus.
    Synth {
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        count: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 0.4)]
        prevalence: f64,
        #[arg(long, default_value_t = 0.1)]
        fraction_ungradable: f64,
        #[arg(long, default_value_t = 0.0)]
        salt: f64,
        #[arg(long, default_value_t = 5)]
        blur: usize,
        #[arg(long, default_value_t = 512)]
        size: usize,
        #[arg(long, value_enum, value_delimiter = ',', default_values_t = [KindArg::BrightBlob, KindArg::DarkBlob])]
        kinds: Vec<KindArg>,
    },
    /// Measure throughput and memory over a corpus.
    Bench {
        #[arg(long, value_name = "DIR")]
        corpus: PathBuf,
        #[arg(long, value_name = "FILE")]
        config: Option<PathBuf>,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, value_name = "FILE")]
        config: PathBuf,
        #[arg(long, value_name = "DIR")]
        store: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
    },
    /// Rebuild a stored session from its event log.
    Replay {
        #[arg(long, value_name = "DIR")]
        store: PathBuf,
        #[arg(long)]
        session: String,
    },
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn load_config(path: &Path) -> Result<PipelineConfig> {
    Ok(PipelineConfig::load(path)?)
}

pub fn execute(command: Command) -> Result<()> {
    match command {
        Command::Screen { input, config, out } => {
            let rows = screen_dir(&input, &out, load_config(&config)?)?;
            let referred = rows.iter().filter(|r| r.referral_recommended).count();
            let ungradable = rows.iter().filter(|r| r.outcome == "ungradable").count();
            eprintln!(
                "screened {} images: {referred} referral recommended, {ungradable} ungradable; summary in {}",
                rows.len(),
                out.join(SUMMARY_FILE).display()
            );
        }
        Command::Calibrate {
            policy,
            target,
            scores,
            out,
        } => {
            let file = fs::File::open(&scores).with_context(|| format!("opening {}", scores.display()))?;
            let samples = read_scored_csv(file).with_context(|| format!("reading {}", scores.display()))?;
            let op = calibrate_operating_point(&samples, policy.into(), target)?;
            let json = serde_json::to_string_pretty(&op)?;
            if let Some(path) = out {
                fs::write(&path, format!("{json}\n")).with_context(|| format!("writing {}", path.display()))?;
            }
            println!("{json}");
        }
        Command::Synth {
            out,
            count,
            seed,
            prevalence,
            fraction_ungradable,
            salt,
            blur,
            size,
            kinds,
        } => {
            let spec = SynthSpec {
                count,
                seed,
                prevalence,
                lesion_kinds: kinds
                    .into_iter()
                    .map(|k| match k {
                        KindArg::BrightBlob => LesionKind::BrightBlob,
                        KindArg::DarkBlob => LesionKind::DarkBlob,
                    })
                    .collect(),
                salt_fraction: salt,
                blur_radius: blur,
                fraction_ungradable,
                size,
            };
            let s = synth_generate(&spec, &out)?;
            eprintln!(
                "wrote {} images ({} positive, {} ungradable) to {}",
                s.images,
                s.positives,
                s.ungradable,
                s.dir.display()
            );
        }
        Command::Bench { corpus, config } => {
            let config = match config {
                Some(p) => load_config(&p)?,
                None => PipelineConfig::default(),
            };
            print_json(&bench_run(&corpus, &config)?)?;
        }
        Command::Serve { config, store, addr } => {
            let pipeline = Pipeline::new(load_config(&config)?, Arc::new(FileStore::open(&store)?))?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(crate::service::serve(Arc::new(pipeline), &addr))?;
        }
        Command::Replay { store, session } => {
            let store = FileStore::open(&store)?;
            let (header, events) = store.load(&session)?;
            let replayed = replay(header, events)?;
            let report = ScreeningReport::from_session(&replayed);
            if let (Some(report), Ok(saved)) = (&report, store.get_asset(&session, REPORT_ASSET)) {
                let saved: ScreeningReport =
                    serde_json::from_slice(&saved).with_context(|| format!("parsing stored {REPORT_ASSET}"))?;
                if &saved != report {
                    bail!("stored {REPORT_ASSET} differs from the replayed session");
                }
            }
            print_json(&serde_json::json!({
                "session_id": replayed.id(),
                "state": replayed.state,
                "events": replayed.events.len(),
                "timings_ms": replayed.timings,
                "report": report,
            }))?;
        }
    }
    Ok(())
}

/// Parses `args` and runs; usage errors exit 2, runtime errors 1.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
