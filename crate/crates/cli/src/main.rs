//! `shapejig` command-line driver.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "shapejig",
    version,
    about = "Shape-biased jigsaw pretext training at desk scale"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand.
#[derive(Args, Clone, Debug)]
pub struct Common {
    /// `key = value` config file.
    pub config: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic shape/texture dataset.
    GenData(Common),
    /// Generate a maximal-Hamming-distance permutation set.
    GenPermset(Common),
    /// Diversify images from a dataset split and log every decision;
    /// trains the decoder first in learned mode.
    Diversify(Common),
    /// Train the model.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from the checkpoint in --out.
        #[arg(long)]
        resume: bool,
    },
    /// Accuracy on every split plus jigsaw accuracy and shape bias.
    Eval(EvalArgs),
    /// Cue-conflict shape-bias score.
    ShapeBias(EvalArgs),
    /// Final-layer attention maps for target-domain images.
    Attention {
        #[command(flatten)]
        eval: EvalArgs,
        /// Number of target images to map.
        #[arg(long, default_value_t = 100)]
        count: usize,
    },
    /// Finite-difference check of every parameter gradient.
    Gradcheck(Common),
}

#[derive(Args, Clone, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    /// Checkpoint to evaluate; defaults to the one in --out.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

fn main() -> ExitCode {
    shapejig::retain_freed_memory();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::GenData(c) => commands::gen_data(&c),
        Command::GenPermset(c) => commands::gen_permset(&c),
        Command::Diversify(c) => commands::diversify(&c),
        Command::Train { common, resume } => commands::train(&common, resume),
        Command::Eval(a) => commands::eval(&a),
        Command::ShapeBias(a) => commands::shape_bias(&a),
        Command::Attention { eval, count } => commands::attention(&eval, count),
        Command::Gradcheck(c) => commands::gradcheck(&c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
