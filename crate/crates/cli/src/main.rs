use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serendipity_cli::{run_job, CliError, Command, JobConfig, Result, TuningConfig};
use serendipity_core::eval::TuningMode;
use serendipity_core::ModelConfig;

/// Topic-level surprise and serendipity experiments.
#[derive(Parser)]
#[command(name = "serendipity", version)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
    #[command(flatten)]
    flags: Flags,
}

#[derive(Subcommand)]
enum Sub {
    /// Per-user surprise and serendipity series.
    Run,
    /// Serendipitous item recommendations for (user, step) queries.
    Recommend,
    /// Surprise detection metrics against the annotations.
    EvalSurprise,
    /// Serendipity recommendation metrics against the annotations.
    EvalSerendipity,
    /// Leave-one-out hyperparameter tuning.
    Tune {
        #[arg(long, value_enum, default_value_t = Mode::Both)]
        mode: Mode,
    },
    /// Synthetic population with planted change-points.
    Synth {
        #[arg(long)]
        users: Option<usize>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        length: Option<usize>,
        #[arg(long)]
        regimes: Option<usize>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Surprise,
    Serendipity,
    Both,
}

#[derive(Args)]
struct Flags {
    /// TOML job configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    topics: Option<PathBuf>,
    #[arg(long, global = true)]
    histories: Option<PathBuf>,
    #[arg(long, global = true)]
    annotations: Option<PathBuf>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Surprise model, e.g. `arow:r1=0.5,r2=4`.
    #[arg(long, global = true)]
    model: Option<String>,
    /// Similarity model for hybrid runs, e.g. `vbblr:tau_v=0.05`.
    #[arg(long, global = true)]
    sim_model: Option<String>,
    #[arg(long, global = true)]
    burn_in: Option<usize>,
    #[arg(long, global = true)]
    min_step: Option<usize>,
    #[arg(long, global = true)]
    tau_s: Option<f64>,
    #[arg(long, global = true)]
    tau_d: Option<f64>,
    #[arg(long, global = true)]
    top_n: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 0 uses all cores.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// `user_id step` pairs to answer in `recommend`.
    #[arg(long, global = true)]
    queries: Option<PathBuf>,
    /// Snapshot index cache, read when valid and rewritten otherwise.
    #[arg(long, global = true)]
    index_cache: Option<PathBuf>,
    /// Comma-separated tuning families, e.g. `arow,vbblr,arow+vbblr`.
    #[arg(long, global = true, value_delimiter = ',')]
    families: Option<Vec<String>>,
}

fn parse_model(label: Option<String>) -> Result<Option<ModelConfig>> {
    label.map(|l| l.parse().map_err(CliError::from)).transpose()
}

fn execute(cli: Cli) -> Result<()> {
    let f = cli.flags;
    let base = match &f.config {
        Some(path) => JobConfig::load(path)?,
        None => JobConfig::default(),
    };
    let tuning = f.families.map(|families| TuningConfig {
        families,
        ..base.tuning.clone().unwrap_or_default()
    });
    let mut synth = base.synth.clone();
    if let Sub::Synth { users, k, length, regimes } = &cli.command {
        let s = synth.get_or_insert_with(Default::default);
        s.users = users.unwrap_or(s.users);
        s.k = k.unwrap_or(s.k);
        s.history_length = length.unwrap_or(s.history_length);
        s.regimes_per_user = regimes.unwrap_or(s.regimes_per_user);
    }
    let overrides = JobConfig {
        topics: f.topics,
        histories: f.histories,
        annotations: f.annotations,
        out: f.out,
        model: parse_model(f.model)?,
        sim_model: parse_model(f.sim_model)?,
        burn_in: f.burn_in,
        min_step: f.min_step,
        tau_s: f.tau_s,
        tau_d: f.tau_d,
        top_n: f.top_n,
        seed: f.seed,
        jobs: f.jobs,
        queries: f.queries,
        index_cache: f.index_cache,
        tuning,
        synth,
    };
    let job = base.merge(overrides).resolve()?;
    if job.jobs > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(job.jobs)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }

    let command = match cli.command {
        Sub::Run => Command::Run,
        Sub::Recommend => Command::Recommend,
        Sub::EvalSurprise => Command::EvalSurprise,
        Sub::EvalSerendipity => Command::EvalSerendipity,
        Sub::Tune { mode } => Command::Tune(match mode {
            Mode::Surprise => Some(TuningMode::Surprise),
            Mode::Serendipity => Some(TuningMode::Serendipity),
            Mode::Both => None,
        }),
        Sub::Synth { .. } => Command::Synth,
    };
    run_job(&job, command)?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let message = e.to_string();
            let first = message.lines().next().unwrap_or("invalid arguments");
            eprintln!("{}", CliError::Usage(first.trim_start_matches("error: ").to_string()).to_json_line());
            return ExitCode::from(2);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json_line());
            ExitCode::FAILURE
        }
    }
}
