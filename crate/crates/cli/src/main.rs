//! `tutorbot`: corpus generation, training, evaluation, chat and serving.

mod chat;
mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tutorbot_core::{Ablation, Decode};

/// Exit status for bad flags or flag combinations.
const EXIT_USAGE: u8 = 1;
/// Exit status for failures while running a valid command.
const EXIT_RUNTIME: u8 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "tutorbot",
    version,
    about = "Instruction-grounded tutoring dialogue: corpus, training, evaluation, chat and serving"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic instruction-aligned tutoring corpus
    GenCorpus(GenCorpusArgs),
    /// Train a model and write a checkpoint plus a JSONL loss history
    Train(TrainArgs),
    /// Evaluate a checkpoint (or the oracle) on a corpus split
    Eval(EvalArgs),
    /// Train and evaluate the four RG / AC / PR configurations
    Ablate(AblateArgs),
    /// Chat with a checkpoint in the terminal
    Chat(ChatArgs),
    /// Run the HTTP service
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Records,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Profile {
    Minimal,
    Standard,
}

#[derive(Debug, Args)]
struct GenCorpusArgs {
    /// Output directory (created if missing)
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Number of dialogues
    #[arg(long, value_name = "N", default_value_t = 200, value_parser = clap::value_parser!(u64).range(1..))]
    dialogues: u64,
    /// Instructions per curriculum
    #[arg(long, value_name = "K", default_value_t = 5, value_parser = clap::value_parser!(u64).range(1..=16))]
    instructions: u64,
    /// Number of distinct curricula
    #[arg(long, value_name = "C", default_value_t = 4, value_parser = clap::value_parser!(u64).range(1..))]
    curricula: u64,
    /// Random seed
    #[arg(long, value_name = "S", default_value_t = 42)]
    seed: u64,
    /// Probability that a student answer is wrong, in [0, 1)
    #[arg(long, value_name = "R", default_value_t = 0.1, value_parser = parse_noise)]
    noise: f64,
    /// Phrase bank used for tutor and student lines
    #[arg(long, value_enum, default_value_t = Profile::Standard)]
    profile: Profile,
    /// Fixed number of turns per instruction block (even, at least 2)
    #[arg(long, value_name = "T")]
    target_turns: Option<u32>,
    /// Output format: human-readable text or JSON records
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Preset {
    /// Small model that trains in minutes on a CPU
    Fast,
    /// Larger model with dropout and a long context window
    Full,
}

#[derive(Debug, Clone, Args)]
struct TrainFlags {
    /// Starting hyperparameters; the flags below override individual values
    #[arg(long, value_enum, default_value_t = Preset::Fast)]
    preset: Preset,
    /// Passes over the training split
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    epochs: Option<u64>,
    /// Examples per optimiser step
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    batch_size: Option<u64>,
    /// Adam learning rate
    #[arg(long)]
    lr: Option<f64>,
    /// Seed for initialisation, shuffling and dropout
    #[arg(long)]
    seed: Option<u64>,
    /// Epochs without validation improvement before stopping (0 disables)
    #[arg(long)]
    patience: Option<usize>,
    /// Hidden width
    #[arg(long)]
    d_model: Option<usize>,
    /// Encoder and decoder layers
    #[arg(long)]
    layers: Option<usize>,
    /// Attention heads (must divide the hidden width)
    #[arg(long)]
    heads: Option<usize>,
    /// Feed-forward inner width
    #[arg(long)]
    ffn_dim: Option<usize>,
    /// Most recent turns fed to the encoder
    #[arg(long)]
    context_turns: Option<usize>,
    /// Dropout probability during training
    #[arg(long)]
    dropout: Option<f64>,
    /// Seed for the 80/10/10 train/valid/test split
    #[arg(long, default_value_t = 1)]
    split_seed: u64,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Corpus directory written by gen-corpus
    #[arg(long, value_name = "DIR")]
    corpus: PathBuf,
    /// Checkpoint path; the history goes next to it as <stem>.history.jsonl
    #[arg(long, value_name = "PATH", default_value = "model.ckpt")]
    out: PathBuf,
    /// Which outputs are trained: RG, RG_AC, RG_PR or RG_AC_PR
    #[arg(long, default_value = "RG_AC_PR", value_parser = parse_ablation)]
    ablation: Ablation,
    #[command(flatten)]
    flags: TrainFlags,
    /// Output format: human-readable text or JSON records
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Split {
    Train,
    Valid,
    Test,
    All,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Corpus directory written by gen-corpus
    #[arg(long, value_name = "DIR")]
    corpus: PathBuf,
    /// Checkpoint to evaluate
    #[arg(long, value_name = "PATH", required_unless_present = "oracle", conflicts_with = "oracle")]
    ckpt: Option<PathBuf>,
    /// Score the reference responses themselves instead of a model
    #[arg(long)]
    oracle: bool,
    /// Which part of the 80/10/10 split to score
    #[arg(long, value_enum, default_value_t = Split::Test)]
    split: Split,
    /// Seed used when the corpus was split for training
    #[arg(long, default_value_t = 1)]
    split_seed: u64,
    /// Beam width; 0 or 1 decodes greedily
    #[arg(long, default_value_t = 0)]
    beam: usize,
    /// Output format: human-readable text or JSON records
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
}

#[derive(Debug, Args)]
struct AblateArgs {
    /// Corpus directory written by gen-corpus
    #[arg(long, value_name = "DIR")]
    corpus: PathBuf,
    /// Table output; JSON records are written next to it with a .jsonl extension
    #[arg(long, value_name = "PATH", default_value = "ablation.txt")]
    out: PathBuf,
    #[command(flatten)]
    flags: TrainFlags,
    /// Beam width; 0 or 1 decodes greedily
    #[arg(long, default_value_t = 0)]
    beam: usize,
    /// Output format: human-readable text or JSON records
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
}

#[derive(Debug, Args)]
struct ChatArgs {
    /// Model checkpoint
    #[arg(long, value_name = "PATH")]
    ckpt: PathBuf,
    /// Curriculum id
    #[arg(long, value_name = "ID")]
    curriculum: String,
    /// Directory holding curricula.jsonl
    #[arg(long, value_name = "DIR", env = "TUTORBOT_DATA_DIR", default_value = "data")]
    data: PathBuf,
    /// Tutor replies per instruction before a transition is forced
    #[arg(long, default_value_t = 12, value_parser = clap::value_parser!(u64).range(2..))]
    max_turns: u64,
    /// Beam width; 0 or 1 decodes greedily
    #[arg(long, default_value_t = 0)]
    beam: usize,
}

#[derive(Debug, Args)]
struct ServeArgs {
    /// Model checkpoint; without one, session routes answer 503
    #[arg(long, value_name = "PATH")]
    ckpt: Option<PathBuf>,
    /// Listening port
    #[arg(long, env = "TUTORBOT_PORT", default_value_t = tutorbot_service::DEFAULT_PORT)]
    port: u16,
    /// Directory holding curricula.jsonl and session logs
    #[arg(long, value_name = "DIR", env = "TUTORBOT_DATA_DIR", default_value = "data")]
    data: PathBuf,
    /// Console assets served at /
    #[arg(long = "static", value_name = "DIR")]
    static_dir: Option<PathBuf>,
    /// Allowed CORS origin; repeat for several, * for any
    #[arg(long, value_name = "ORIGIN")]
    cors: Vec<String>,
    /// Sessions kept in memory before idle ones are evicted
    #[arg(long, default_value_t = 1024, value_parser = clap::value_parser!(u64).range(1..))]
    max_sessions: u64,
    /// Tutor replies per instruction before a transition is forced
    #[arg(long, default_value_t = 12, value_parser = clap::value_parser!(u64).range(2..))]
    max_turns: u64,
}

fn parse_noise(s: &str) -> Result<f64, String> {
    let r: f64 = s.parse().map_err(|_| format!("{s:?} is not a number"))?;
    if (0.0..1.0).contains(&r) {
        Ok(r)
    } else {
        Err(format!("{r} is outside [0, 1)"))
    }
}

fn parse_ablation(s: &str) -> Result<Ablation, String> {
    s.parse()
}

fn decode(beam: usize) -> Decode {
    if beam > 1 {
        Decode::Beam(beam)
    } else {
        Decode::Greedy
    }
}

/// A flag combination that parsed but cannot be used.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// Joins an error chain, skipping causes the outer message already quotes.
fn render_chain(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !out.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let default_level = if matches!(cli.command, Command::Serve(_)) { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(default_level)).init();

    let result = match cli.command {
        Command::GenCorpus(args) => commands::gen_corpus(args),
        Command::Train(args) => commands::train(args),
        Command::Eval(args) => commands::eval(args),
        Command::Ablate(args) => commands::ablate(args),
        Command::Chat(args) => chat::run(args),
        Command::Serve(args) => commands::serve(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<UsageError>() => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(e) => {
            eprintln!("error: {}", render_chain(&e));
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
