use std::fs::File;
use std::io::{BufReader, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use lspredict::cli::{parse_predict_args, PredictArgs};
use lspredict::evaluation::{run_segmented_evaluation, emit_report, EvalConfig, EvalError};
use lspredict::featurization::bin_to_request_mib;
use lspredict::pipeline::{
    assemble_window, load_model_set, persist_model_set, predict_with_model_set, split_window,
    train_model_set, PipelineConfig, PipelineError, Prediction, Tier,
};
use lspredict::workload::{
    generate_synthetic, parse_trace, serialize_trace, SyntheticConfig, WorkloadError,
};

const EXIT_USAGE: u8 = 2;
const EXIT_STORE_UNREADABLE: u8 = 3;
const EXIT_TRACE_TOO_SHORT: u8 = 4;
const EXIT_STORE_IO: u8 = 5;

const STORE_ENV: &str = "LSPREDICT_MODEL_STORE";

#[derive(Parser)]
#[command(
    name = "lspredict",
    about = "Predict batch job memory requirements from finished-job history",
    version
)]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Args)]
struct StoreArg {
    /// Model store directory; defaults to $LSPREDICT_MODEL_STORE.
    #[arg(long)]
    store: Option<PathBuf>,
}

impl StoreArg {
    fn resolve(&self) -> Option<PathBuf> {
        self.store
            .clone()
            .or_else(|| std::env::var_os(STORE_ENV).map(PathBuf::from))
    }
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum ProfileArg {
    Fast,
    Full,
}

impl From<ProfileArg> for lspredict::learners::GridProfile {
    fn from(p: ProfileArg) -> Self {
        match p {
            ProfileArg::Fast => lspredict::learners::GridProfile::Fast,
            ProfileArg::Full => lspredict::learners::GridProfile::Full,
        }
    }
}

#[derive(Subcommand)]
enum Verb {
    /// Generate a synthetic workload trace (JSONL).
    Generate {
        /// Number of jobs to generate.
        #[arg(long, default_value_t = 1000)]
        jobs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Remap the planted workload structure starting at this job index.
        #[arg(long)]
        drift_at: Option<usize>,
        /// Output path; stdout if omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Validate trace files and write one merged, submit-ordered trace.
    Ingest {
        /// Input trace files (JSONL).
        #[arg(required = true)]
        traces: Vec<PathBuf>,
        /// Output path; stdout if omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a model set on the newest full window of a trace and persist it.
    Train {
        trace: PathBuf,
        #[command(flatten)]
        store: StoreArg,
        /// Pipeline config JSON; defaults apply if omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Grid-search profile for svm-2 and mlp-2; overrides the config file.
        #[arg(long, value_enum)]
        profile: Option<ProfileArg>,
    },
    /// Run the segmented temporal evaluation and write report artifacts.
    Evaluate {
        trace: PathBuf,
        /// Report output directory.
        #[arg(long, default_value = "eval-report")]
        out: PathBuf,
        /// Evaluation config JSON; defaults apply if omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Grid-search profile for svm-2 and mlp-2; overrides the config file.
        #[arg(long, value_enum)]
        profile: Option<ProfileArg>,
    },
    /// Predict memory for a job described with submission-style flags.
    ///
    /// lspredict predict [--store DIR] -- -q normal -u alice -- ./app args
    #[command(disable_help_flag = false)]
    Predict {
        #[command(flatten)]
        store: StoreArg,
        /// Submission flags and job command; see `predict` docs.
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        args: Vec<String>,
    },
}

fn read_trace_file(path: &PathBuf) -> Result<Vec<lspredict::workload::JobRecord>, WorkloadError> {
    let file = File::open(path).map_err(WorkloadError::from)?;
    parse_trace(BufReader::new(file))
}

fn write_out(out: &Option<PathBuf>, bytes: &[u8]) -> std::io::Result<()> {
    match out {
        Some(path) => std::fs::write(path, bytes),
        None => std::io::stdout().write_all(bytes),
    }
}

fn fail(code: u8, msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("lspredict: {msg}");
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.verb {
        Verb::Generate {
            jobs,
            seed,
            drift_at,
            out,
        } => {
            let config = SyntheticConfig {
                drift_at,
                ..SyntheticConfig::new(jobs, seed)
            };
            let records = match generate_synthetic(&config) {
                Ok(r) => r,
                Err(e) => return fail(EXIT_USAGE, e),
            };
            let mut buf = Vec::new();
            if let Err(e) = serialize_trace(&records, &mut buf) {
                return fail(EXIT_STORE_IO, e);
            }
            match write_out(&out, &buf) {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => fail(EXIT_STORE_IO, e),
            }
        }
        Verb::Ingest { traces, out } => {
            let mut all = Vec::new();
            for path in &traces {
                match read_trace_file(path) {
                    Ok(mut records) => all.append(&mut records),
                    Err(e) => return fail(EXIT_USAGE, format!("{}: {e}", path.display())),
                }
            }
            all.sort_by(|a, b| (a.submit_time, &a.job_id).cmp(&(b.submit_time, &b.job_id)));
            let mut seen = std::collections::HashSet::new();
            for r in &all {
                if !seen.insert(r.job_id.as_str()) {
                    return fail(EXIT_USAGE, format!("duplicate job id {}", r.job_id));
                }
            }
            let mut buf = Vec::new();
            if let Err(e) = serialize_trace(&all, &mut buf) {
                return fail(EXIT_STORE_IO, e);
            }
            match write_out(&out, &buf) {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => fail(EXIT_STORE_IO, e),
            }
        }
        Verb::Train {
            trace,
            store,
            config,
            profile,
        } => {
            let Some(store_dir) = store.resolve() else {
                return fail(
                    EXIT_USAGE,
                    format!("no model store given: pass --store or set {STORE_ENV}"),
                );
            };
            let mut pipeline_config = match config {
                Some(path) => match PipelineConfig::from_json_file(&path) {
                    Ok(c) => c,
                    Err(e) => return fail(EXIT_USAGE, e),
                },
                None => PipelineConfig::default(),
            };
            if let Some(p) = profile {
                pipeline_config.grid_profile = p.into();
            }
            let records = match read_trace_file(&trace) {
                Ok(r) => r,
                Err(e) => return fail(EXIT_USAGE, format!("{}: {e}", trace.display())),
            };
            let finished: Vec<_> = records.iter().filter(|r| r.is_finished()).cloned().collect();
            let window = assemble_window(&finished, i64::MAX, pipeline_config.window_size);
            let (train_jobs, valid_jobs) = match split_window(
                &window,
                pipeline_config.train_size,
                pipeline_config.valid_size,
            ) {
                Ok(split) => split,
                Err(PipelineError::ShortWindow(got)) => {
                    return fail(
                        EXIT_TRACE_TOO_SHORT,
                        format!(
                            "trace too short: need {} finished jobs, got {got}",
                            pipeline_config.window_size
                        ),
                    )
                }
                Err(e) => return fail(EXIT_USAGE, e),
            };
            let set = match train_model_set(
                train_jobs,
                valid_jobs,
                i64::MAX,
                finished.len() as u64,
                &pipeline_config,
            ) {
                Ok(set) => set,
                Err(e) => return fail(EXIT_USAGE, e),
            };
            match persist_model_set(&set, &store_dir) {
                Ok(()) => {
                    println!(
                        "trained {} models on {} jobs; store at {}",
                        set.ranked.len(),
                        pipeline_config.window_size,
                        store_dir.display()
                    );
                    ExitCode::SUCCESS
                }
                Err(e) => fail(EXIT_STORE_IO, e),
            }
        }
        Verb::Evaluate {
            trace,
            out,
            config,
            profile,
        } => {
            let mut eval_config = match config {
                Some(path) => {
                    let text = match std::fs::read_to_string(&path) {
                        Ok(t) => t,
                        Err(e) => return fail(EXIT_USAGE, e),
                    };
                    match serde_json::from_str::<EvalConfig>(&text) {
                        Ok(c) => c,
                        Err(e) => return fail(EXIT_USAGE, e),
                    }
                }
                None => EvalConfig::default(),
            };
            if let Some(p) = profile {
                eval_config.pipeline.grid_profile = p.into();
            }
            let records = match read_trace_file(&trace) {
                Ok(r) => r,
                Err(e) => return fail(EXIT_USAGE, format!("{}: {e}", trace.display())),
            };
            let report = match run_segmented_evaluation(&records, &eval_config) {
                Ok(r) => r,
                Err(e @ EvalError::TraceTooShort { .. }) => {
                    return fail(EXIT_TRACE_TOO_SHORT, e)
                }
                Err(e) => return fail(EXIT_USAGE, e),
            };
            match emit_report(&report, &out) {
                Ok(()) => {
                    println!("report written to {}", out.display());
                    ExitCode::SUCCESS
                }
                Err(e) => fail(EXIT_STORE_IO, e),
            }
        }
        Verb::Predict { store, args } => {
            let parsed = match parse_predict_args(&args) {
                Ok(p) => p,
                Err(e) => return fail(EXIT_USAGE, e),
            };
            run_predict(store, parsed)
        }
    }
}

fn run_predict(store: StoreArg, args: PredictArgs) -> ExitCode {
    let config = PipelineConfig::default();
    let store_dir = store.resolve();
    let loaded = match &store_dir {
        Some(dir) => match load_model_set(dir) {
            Ok(set) => Some(set),
            Err(e) => {
                if args.allow_cold {
                    None
                } else {
                    return fail(EXIT_STORE_UNREADABLE, e);
                }
            }
        },
        None => {
            if args.allow_cold {
                None
            } else {
                return fail(
                    EXIT_STORE_UNREADABLE,
                    format!("no model store given: pass --store or set {STORE_ENV}"),
                );
            }
        }
    };

    let prediction = match &loaded {
        Some(set) => {
            let job = args.to_job_record(set.created_at + 1);
            match predict_with_model_set(set, &job, config.top_n) {
                Ok(p) => p,
                Err(e) => return fail(EXIT_STORE_UNREADABLE, e),
            }
        }
        None => Prediction {
            bin: config.default_bin,
            request_mib: bin_to_request_mib(config.default_bin, config.bin_size_mib),
            tier: Tier::Default,
            votes: Vec::new(),
        },
    };

    println!(
        "predicted_bin={} predicted_mem_mib={} tier={}",
        prediction.bin, prediction.request_mib, prediction.tier
    );
    if args.explain {
        if let Some(set) = &loaded {
            for vote in &prediction.votes {
                println!(
                    "voter {} bin={} weight={:.4}",
                    vote.method.name(),
                    vote.bin,
                    vote.weight
                );
            }
            println!(
                "mode_bin={} window_created_at={} finished_consumed={}",
                set.mode_bin, set.created_at, set.finished_consumed
            );
        } else {
            println!("cold start: no model store available, default bin used");
        }
    }
    ExitCode::SUCCESS
}
