use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use luke_cli::commands::{cmd_annotate, cmd_build_dict, cmd_build_vocab, cmd_eval, cmd_finetune, cmd_pretrain};
use luke_cli::gradcheck::run_suite;
use luke_cli::{CliError, Overrides, Precision, RunConfig};
use luke_core::model::AttentionMode;
use luke_core::tasks::TaskKind;

/// Entity-aware transformer: corpus tooling, pretraining, fine-tuning and checks.
#[derive(Debug, Parser)]
#[command(name = "luke", version)]
struct Cli {
    /// JSON run configuration (or a checkpoint carrying one).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Training steps for pretrain or finetune.
    #[arg(long, global = true)]
    steps: Option<usize>,
    /// Pretrain with the word objective only.
    #[arg(long, global = true)]
    mlm_only: bool,
    /// Feed no entity tokens to the encoder.
    #[arg(long, global = true)]
    no_entities: bool,
    #[arg(long, global = true)]
    attention: Option<AttentionMode>,
    #[arg(long, global = true, value_enum)]
    precision: Option<Precision>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[arg(long, global = true, hide = true)]
    fault_flip_sign: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build the word and entity vocabularies from the corpus.
    BuildVocab,
    /// Count names, links and link probabilities over the corpus.
    BuildDict,
    /// Pretrain on the corpus with masked word and entity prediction.
    Pretrain {
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Fine-tune a pretrained checkpoint on one task.
    Finetune {
        #[arg(long)]
        task: TaskKind,
        #[arg(long)]
        init: PathBuf,
    },
    /// Predict with a fine-tuned checkpoint and score against gold labels.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Compare analytic and numeric gradients of the whole model.
    Gradcheck,
    /// Annotate questions and passages with entity mentions.
    Annotate {
        #[arg(long)]
        questions: PathBuf,
        #[arg(long)]
        passages: PathBuf,
        #[arg(long)]
        dictionary: Option<PathBuf>,
        #[arg(long)]
        threshold: Option<f64>,
    },
}

fn gradcheck(cfg: &RunConfig, attention: Option<AttentionMode>, flip: Option<&str>) -> Result<String, CliError> {
    let modes = match attention {
        Some(m) => vec![m],
        None => vec![AttentionMode::Original, AttentionMode::EntityAware],
    };
    let report = run_suite(cfg, &modes, flip)?;
    let text = report.render();
    if report.passed() {
        Ok(text)
    } else {
        print!("{text}");
        Err(CliError::Check(format!("gradient check failed for: {}", report.failing_groups().join(", "))))
    }
}

fn run(cli: &Cli) -> Result<String, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply(&Overrides {
        seed: cli.seed,
        steps: cli.steps,
        mlm_only: cli.mlm_only,
        no_entities: cli.no_entities,
        attention: cli.attention,
        precision: cli.precision,
    });
    cfg.validate()?;
    let out: &Path = &cli.out;
    std::fs::create_dir_all(out).map_err(|e| CliError::Runtime(format!("{}: {e}", out.display())))?;
    match &cli.command {
        Command::BuildVocab => cmd_build_vocab(&cfg, out),
        Command::BuildDict => cmd_build_dict(&cfg, out),
        Command::Pretrain { resume } => cmd_pretrain(&cfg, out, resume.as_deref()),
        Command::Finetune { task, init } => cmd_finetune(&cfg, out, *task, init),
        Command::Eval { checkpoint, data } => cmd_eval(&cfg, out, checkpoint, data.as_deref()),
        Command::Gradcheck => gradcheck(&cfg, cli.attention, cli.fault_flip_sign.as_deref()),
        Command::Annotate { questions, passages, dictionary, threshold } => {
            cmd_annotate(&cfg, out, questions, passages, dictionary.as_deref(), *threshold)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(msg) => {
            println!("{}", msg.trim_end());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
