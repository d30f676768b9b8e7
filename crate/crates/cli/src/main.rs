use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use seqex::data::{write_feature_task, write_synthetic, FeatureSpec, SynthSpec, SynthTask};
use seqex::runner::{parse_search_space, random_search, run_experiments, RunOptions, SearchOptions, Status};
use seqex_config::load_config;

/// Exit code for errors that stop a command before any experiment runs.
const FATAL: u8 = 255;

#[derive(Parser)]
#[command(name = "seqex", version, about = "Run sequence-to-sequence experiments described in YAML")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every experiment in a config file, or a selection.
    Run {
        config: PathBuf,
        /// Comma-separated experiment names, run in the given order.
        #[arg(long, value_delimiter = ',')]
        experiments: Option<Vec<String>>,
        /// Replaces exp_global.seed for every experiment.
        #[arg(long)]
        seed: Option<u64>,
        /// Run experiments concurrently; output paths must be disjoint.
        #[arg(long)]
        parallel: bool,
    },
    /// Random search over a space of overwrites applied to one experiment.
    Search {
        config: PathBuf,
        #[arg(long)]
        space: PathBuf,
        #[arg(long, default_value_t = 10)]
        trials: usize,
        /// Seeds the sampling of assignments.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// The experiment to search around; defaults to the first.
        #[arg(long)]
        base: Option<String>,
    },
    /// Write a synthetic data set.
    Gendata(GenArgs),
}

#[derive(Args)]
struct GenArgs {
    /// copy, reverse, sum-coded or features
    task: String,
    /// Output prefix; files get .src/.feat, .trg and .vocab appended.
    #[arg(long)]
    out: PathBuf,
    /// Vocabulary size including the reserved tokens.
    #[arg(long, default_value_t = 20)]
    vocab_size: usize,
    #[arg(long, default_value_t = 1)]
    min_len: usize,
    #[arg(long, default_value_t = 10)]
    max_len: usize,
    #[arg(long, short, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 8)]
    feat_dim: usize,
    #[arg(long, default_value_t = 4)]
    frames_per_token: usize,
    #[arg(long, default_value_t = 0.3)]
    noise: f64,
    /// Seeds the token prototypes of the features task; share it across splits.
    #[arg(long, default_value_t = 7)]
    proto_seed: u64,
}

fn exit_count(failed: usize) -> ExitCode {
    ExitCode::from(failed.min(FATAL as usize - 1) as u8)
}

fn run(config: &Path, opts: RunOptions) -> Result<ExitCode, String> {
    let results = run_experiments(config, &opts).map_err(|e| e.to_string())?;
    let mut failed = 0;
    for r in &results {
        match &r.status {
            Status::Ok => {
                let metrics: Vec<String> = r.metrics.iter().map(|s| format!("{}={}", s.metric, s.value)).collect();
                println!("{}: ok {}", r.name, metrics.join(" "));
            }
            Status::Failed(msg) => {
                failed += 1;
                println!("{}: failed {msg}", r.name);
            }
        }
    }
    Ok(exit_count(failed))
}

fn search(config: &Path, space: &Path, opts: SearchOptions) -> Result<ExitCode, String> {
    let read = |p: &Path| {
        let text = fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
        load_config(&text).map_err(|e| format!("{}: {e}", p.display()))
    };
    let doc = read(config)?;
    let slots = parse_search_space(&read(space)?).map_err(|e| e.to_string())?;
    let report = random_search(&doc, &slots, &opts).map_err(|e| e.to_string())?;
    print!("{}", report.summary());
    Ok(exit_count(report.trials.iter().filter(|t| !t.result.is_ok()).count()))
}

fn gendata(a: &GenArgs) -> Result<ExitCode, String> {
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    }
    let files = if a.task == "features" {
        let spec = FeatureSpec {
            vocab_size: a.vocab_size,
            feat_dim: a.feat_dim,
            min_len: a.min_len,
            max_len: a.max_len,
            frames_per_token: a.frames_per_token,
            noise: a.noise,
            n: a.n,
            seed: a.seed,
            proto_seed: a.proto_seed,
        };
        write_feature_task(&spec, &a.out)
    } else {
        let task: SynthTask = a.task.parse().map_err(|e: String| format!("{e}, or features"))?;
        let spec = SynthSpec {
            task,
            vocab_size: a.vocab_size,
            min_len: a.min_len,
            max_len: a.max_len,
            n: a.n,
            seed: a.seed,
        };
        write_synthetic(&spec, &a.out)
    }
    .map_err(|e| e.to_string())?;
    for f in [&files.src, &files.trg, &files.vocab] {
        println!("wrote {}", f.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run {
            config,
            experiments,
            seed,
            parallel,
        } => run(
            &config,
            RunOptions {
                selection: experiments,
                seed_override: seed,
                echo: true,
                parallel,
            },
        ),
        Command::Search {
            config,
            space,
            trials,
            seed,
            base,
        } => search(
            &config,
            &space,
            SearchOptions {
                trials,
                seed,
                base,
                seed_override: None,
                echo: true,
            },
        ),
        Command::Gendata(args) => gendata(&args),
    };
    outcome.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        ExitCode::from(FATAL)
    })
}
