//! `eventprompt`: prompt rendering, split generation, training, prediction,
//! scoring and ensembling from the command line.

mod artifacts;
mod commands;
mod exit;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::exit::{exit_code, EXIT_OK, EXIT_VALIDATION};
use crate::settings::Settings;

#[derive(Parser)]
#[command(
    name = "eventprompt",
    version,
    about = "Event trigger detection with event types as prompts"
)]
struct Cli {
    /// Directory that relative input paths are resolved against.
    #[arg(long, global = true, env = "EVENTPROMPT_DATA_ROOT")]
    data_root: Option<PathBuf>,
    /// Flat `key = value` file supplying defaults for any long option.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
#[allow(clippy::large_enum_variant)]
enum Command {
    /// Generate a synthetic corpus and ontology with known answers.
    Synth(SynthArgs),
    /// Render one prompt per event type.
    Prompts(PromptsArgs),
    /// Build a supervised, few-shot or zero-shot dataset bundle.
    Split(SplitArgs),
    /// Train a detector (optionally over a hyperparameter grid).
    Train(TrainArgs),
    /// Decode trigger predictions for a corpus or bundle set.
    Predict(PredictArgs),
    /// Score predictions against gold mentions.
    Eval(EvalArgs),
    /// Majority-vote several prediction files.
    Vote(VoteArgs),
}

#[derive(Args)]
pub struct SynthArgs {
    /// smoke (50 sentences), pipeline (1000) or ace (18 base / 10 novel types).
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Args)]
pub struct PromptsArgs {
    /// Ontology TOML; the bundled ACE 2005 ontology when omitted.
    #[arg(long)]
    pub ontology: Option<PathBuf>,
    /// name, definition, seeds, structure, apex or soft.
    #[arg(long)]
    pub form: Option<String>,
    /// Corpus used to mine seed triggers for types that have none.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Restrict seed mining to the training sets of this bundle.
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    /// Number of seed triggers to mine per type.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub ontology: Option<PathBuf>,
    /// supervised, few_shot or zero_shot.
    #[arg(long)]
    pub regime: Option<String>,
    /// Seed for every random choice of the split.
    #[arg(long, required = true)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub shots: Option<usize>,
    #[arg(long)]
    pub min_instances: Option<usize>,
    /// Leave types below the instance minimum out of the task.
    #[arg(long)]
    pub drop_thin: bool,
    /// Take the N most frequent types as base and the rest as novel.
    #[arg(long)]
    pub base_count: Option<usize>,
    #[arg(long)]
    pub dev_fraction: Option<f64>,
    #[arg(long)]
    pub test_fraction: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub prompts: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Weight of the novel term in few-shot training.
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub warmup: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub threshold: Option<f64>,
    /// overall or novel: the dev F1 used to pick the best epoch.
    #[arg(long)]
    pub selection: Option<String>,
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    #[arg(long)]
    pub ffn_dim: Option<usize>,
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long)]
    pub encoder_seed: Option<u64>,
    /// raw (cosine weights as is) or normalized.
    #[arg(long)]
    pub attention: Option<String>,
    /// identity or mlp: the map from soft-prompt rows to prefix vectors.
    #[arg(long)]
    pub prefix: Option<String>,
    #[arg(long)]
    pub prefix_hidden: Option<usize>,
    /// Grid axis such as `lr=1e-3,3e-3`; repeat for more axes.
    #[arg(long)]
    pub grid: Vec<String>,
    /// Search the standard grid of learning rates, batch sizes and dropouts.
    #[arg(long)]
    pub full_grid: bool,
}

#[derive(Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub prompts: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    /// Predict one set of this bundle instead of the whole corpus.
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    /// train_base, train_novel, dev or test.
    #[arg(long)]
    pub set: Option<String>,
    /// all, base or novel.
    #[arg(long)]
    pub types: Option<String>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub predictions: PathBuf,
    /// Corpus holding the gold mentions.
    #[arg(long)]
    pub gold: PathBuf,
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    #[arg(long)]
    pub set: Option<String>,
    /// all, base or novel.
    #[arg(long)]
    pub types: Option<String>,
    /// Include the per-type table and write it as TSV next to the report.
    #[arg(long)]
    pub per_type: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct VoteArgs {
    #[arg(long, num_args = 2.., required = true)]
    pub predictions: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() {
                EXIT_VALIDATION
            } else {
                EXIT_OK
            };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    let result =
        Settings::new(cli.config.as_deref(), cli.data_root.clone()).and_then(|s| {
            match cli.command {
                Command::Synth(a) => commands::synth(&s, a),
                Command::Prompts(a) => commands::prompts(&s, a),
                Command::Split(a) => commands::split(&s, a),
                Command::Train(a) => commands::train(&s, a),
                Command::Predict(a) => commands::predict(&s, a),
                Command::Eval(a) => commands::eval(&s, a),
                Command::Vote(a) => commands::vote(&s, a),
            }
        });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
