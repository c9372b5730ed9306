//! The `gridmind` command line: one subcommand per pipeline stage, plus
//! `pipeline`, which runs them all into a single output directory.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::seq::SliceRandom;

use gridmind::board::{BoardDataset, DatasetError};
use gridmind::rng::rng_from_seed;

pub mod commands;
pub mod config;
pub mod manifest;
pub mod pipeline;
pub mod play;

pub use config::ExperimentConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }

    /// Prefixes the message with a stage or file name.
    pub fn context(self, what: &str) -> Self {
        match self {
            CliError::Validation(m) => CliError::Validation(format!("{what}: {m}")),
            CliError::Runtime(m) => CliError::Runtime(format!("{what}: {m}")),
        }
    }
}

pub fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "gridmind", version, about = "Board priors, program induction and grounded agents")]
pub struct Cli {
    /// JSON experiment config; keys left out keep their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Base seed. Overrides GRIDMIND_SEED and the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample a prior corpus from the rule generators.
    GenPriors(GenPriorsArgs),
    /// Fit the masked-tile conditional model.
    TrainConditional(TrainConditionalArgs),
    /// Gibbs-sample control boards from a conditional model.
    Gibbs(GibbsArgs),
    /// Solve boards with wake-sleep program induction.
    Synthesize(SynthesizeArgs),
    /// Compress a solution set into library functions.
    Compress(CompressArgs),
    /// Write templated descriptions for every board.
    DescribeSynth(DescribeArgs),
    /// Build a grounding embedding file.
    Embed(EmbedArgs),
    /// Train a PPO agent.
    TrainAgent(TrainAgentArgs),
    /// Evaluate an agent on one or more test distributions.
    EvalAgent(EvalAgentArgs),
    /// Description-length and representation analyses.
    Analyze(AnalyzeArgs),
    /// Run the experiment web service.
    Serve(ServeArgs),
    /// Play boards in the terminal.
    Play(PlayArgs),
    /// Run every stage end to end.
    Pipeline(PipelineArgs),
}

#[derive(Debug, Args)]
pub struct GenPriorsArgs {
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub side: Option<usize>,
    /// Restrict to one rule family (e.g. full-row).
    #[arg(long)]
    pub family: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainConditionalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GibbsArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub chains: Option<usize>,
    #[arg(long)]
    pub sweeps: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthesizeArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Number of highest-weight boards to solve.
    #[arg(long)]
    pub tasks: Option<usize>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub no_library: bool,
    #[arg(long)]
    pub max_nodes: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct CompressArgs {
    #[arg(long)]
    pub solutions: PathBuf,
    /// Library the solutions were written against.
    #[arg(long)]
    pub library: Option<PathBuf>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long, default_value_t = 5)]
    pub max_new: usize,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct DescribeArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub per_board: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    /// language | program | autoencoder | ingest
    #[arg(long)]
    pub provider: String,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub descriptions: Option<PathBuf>,
    #[arg(long)]
    pub recognition: Option<PathBuf>,
    /// Externally computed vectors to validate and re-export.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub dim: Option<usize>,
    /// Reassign vectors across boards (a control with the same marginals).
    #[arg(long)]
    pub shuffle: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainAgentArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// grounding | no-grounding; defaults to grounding when embeddings are given.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalAgentArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long = "test", required = true)]
    pub tests: Vec<PathBuf>,
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long)]
    pub boards: Option<usize>,
    #[arg(long)]
    pub traces: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Description corpus treated as the human source.
    #[arg(long)]
    pub descriptions: PathBuf,
    #[arg(long)]
    pub synthetic: PathBuf,
    /// `synthesize` output directory with library learning on.
    #[arg(long)]
    pub lib_dir: PathBuf,
    /// `synthesize` output directory with library learning off.
    #[arg(long)]
    pub nolib_dir: PathBuf,
    /// Embedding files to compare by RSA over their shared boards.
    #[arg(long = "embeddings")]
    pub embeddings: Vec<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub data_dir: PathBuf,
    #[arg(long)]
    pub static_dir: Option<PathBuf>,
    /// `name=path` of a BoardDataset offered to sessions.
    #[arg(long = "dataset")]
    pub datasets: Vec<String>,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: String,
}

#[derive(Debug, Args)]
pub struct PlayArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub board: Option<String>,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| CliError::Validation(e.to_string()))?;
    let cfg = ExperimentConfig::resolve(cli.config.as_deref(), cli.seed)?;
    match &cli.command {
        Command::GenPriors(a) => commands::gen_priors(&cfg, a).map(drop),
        Command::TrainConditional(a) => commands::train_conditional(&cfg, a).map(drop),
        Command::Gibbs(a) => commands::gibbs(&cfg, a).map(drop),
        Command::Synthesize(a) => commands::synthesize(&cfg, a).map(drop),
        Command::Compress(a) => commands::compress(&cfg, a).map(drop),
        Command::DescribeSynth(a) => commands::describe_synth(&cfg, a).map(drop),
        Command::Embed(a) => commands::embed(&cfg, a).map(drop),
        Command::TrainAgent(a) => commands::train_agent(&cfg, a).map(drop),
        Command::EvalAgent(a) => commands::eval_agent(&cfg, a).map(drop),
        Command::Analyze(a) => commands::analyze(&cfg, a).map(drop),
        Command::Serve(a) => commands::serve(&cfg, a),
        Command::Play(a) => {
            let stdin = std::io::stdin();
            play::play(&cfg, a, stdin.lock(), std::io::stdout())
        }
        Command::Pipeline(a) => pipeline::run_pipeline(&cfg, a.out_dir.as_deref()).map(drop),
    }
}

/// Entry point for the binary; returns the process exit code.
pub fn main_with_args(args: Vec<std::ffi::OsString>) -> i32 {
    match Cli::try_parse_from(&args) {
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            let _ = e.print();
            0
        }
        Err(e) => {
            let _ = e.print();
            1
        }
        Ok(_) => match run(args) {
            Ok(()) => 0,
            Err(e) => {
                eprintln!("error: {e}");
                e.exit_code()
            }
        },
    }
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, bytes).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

pub fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(runtime)?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

pub fn require_file(path: &Path) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Validation(format!("{}: no such file", path.display())))
    }
}

pub fn load_dataset(path: &Path) -> Result<BoardDataset, CliError> {
    require_file(path)?;
    BoardDataset::load(path).map_err(|e| match e {
        DatasetError::Io(io) => CliError::Runtime(format!("{}: {io}", path.display())),
        other => CliError::Validation(format!("{}: {other}", path.display())),
    })
}

/// Seeded split of the distinct board ids; `fraction` of them (rounded,
/// at least one on each side when possible) go to the first part.
pub fn split_by_id(dataset: &BoardDataset, fraction: f64, seed: u64) -> (BoardDataset, BoardDataset) {
    let mut ids: Vec<&str> = dataset.ids();
    ids.sort_unstable();
    ids.shuffle(&mut rng_from_seed(seed));
    let len = ids.len();
    let mut k = (fraction * len as f64).round() as usize;
    if len >= 2 {
        k = k.clamp(1, len - 1);
    }
    let train: std::collections::HashSet<&str> = ids[..k.min(len)].iter().copied().collect();
    let (a, b): (Vec<_>, Vec<_>) = dataset.entries.iter().cloned().partition(|e| train.contains(e.id.as_str()));
    (BoardDataset { entries: a }, BoardDataset { entries: b })
}

#[cfg(test)]
mod tests {
    use super::*;
    use gridmind::priors::{generate_prior_corpus, RuleGenerator};

    #[test]
    fn split_is_disjoint_seeded_and_eighty_twenty() {
        let ds = generate_prior_corpus(&RuleGenerator::uniform(4), 400, 3).unwrap();
        let (a, b) = split_by_id(&ds, 0.8, 11);
        assert_eq!(a.len() + b.len(), ds.len());
        assert_eq!(a.len(), (0.8 * ds.len() as f64).round() as usize);
        let ids: std::collections::HashSet<_> = a.ids().into_iter().collect();
        assert!(b.ids().iter().all(|id| !ids.contains(id)));
        assert_eq!(split_by_id(&ds, 0.8, 11), (a.clone(), b));
        assert_ne!(split_by_id(&ds, 0.8, 12).0, a);
    }

    #[test]
    fn tiny_datasets_keep_both_sides() {
        let ds = BoardDataset::from_counts(
            "t",
            (0..2).map(|r| gridmind::board::Board::from_cells(&[(r, 0)], 3).unwrap()),
        );
        let (a, b) = split_by_id(&ds, 0.8, 0);
        assert_eq!((a.len(), b.len()), (1, 1));
    }
}
