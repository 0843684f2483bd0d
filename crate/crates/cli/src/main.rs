//! `segrnn`: train, decode and evaluate frame-semantic argument and frame
//! identification models.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data or I/O
//! error, 3 non-finite loss.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use segrnn::checkpoint;
use segrnn::config::Config;
use segrnn::corpus::{load_corpus, load_treebank, FrameOntology, PretrainedEmbeddings};
use segrnn::model::{ArgModel, FrameIdModel};
use segrnn::predict::{
    evaluate, load_predictions, predict, predictions_to_jsonl, Ensemble, PredictMode,
};
use segrnn::train::{train_arg, train_frame, TrainData, Trained};
use segrnn::Error;

#[derive(Parser)]
#[command(
    name = "segrnn",
    version,
    about = "Segmental RNN frame-semantic parser"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the argument identification model.
    TrainArg {
        #[command(flatten)]
        common: TrainArgs,
        /// Bracketed trees for the syntactic scaffold (one per line).
        #[arg(long)]
        trees: Option<PathBuf>,
    },
    /// Train the frame identification model.
    TrainFrame {
        #[command(flatten)]
        common: TrainArgs,
    },
    /// Decode a corpus with one or more checkpoints.
    Predict {
        /// Argument checkpoints; several are ensembled.
        #[arg(long = "arg", num_args = 1..)]
        arg: Vec<PathBuf>,
        /// Frame checkpoints; several are ensembled.
        #[arg(long = "frame", num_args = 1..)]
        frame: Vec<PathBuf>,
        #[arg(long)]
        corpus: PathBuf,
        /// args-gold-frames, frames or end-to-end.
        #[arg(long, default_value = "args-gold-frames")]
        mode: PredictMode,
        /// Predictions file (JSONL); stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a predictions file against a gold corpus.
    Evaluate {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        #[arg(long, default_value = "args-gold-frames")]
        mode: PredictMode,
        /// Print JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Print the header of a checkpoint after verifying it.
    InspectCheckpoint { path: PathBuf },
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    dev: Option<PathBuf>,
    /// Frame and lexical-unit inventory (JSON).
    #[arg(long)]
    ontology: PathBuf,
    /// Whitespace-separated word vectors, one word per line.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Config file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Config override, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    seed: u64,
    /// Train `ensemble_size` members with seeds seed, seed+1, ... written
    /// to OUT.0, OUT.1, ...
    #[arg(long)]
    ensemble: bool,
    #[arg(long)]
    out: PathBuf,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Numeric(_) => 3,
        Error::Config(_) | Error::InvalidArgument(_) => 1,
        _ => 2,
    }
}

fn load_config(args: &TrainArgs) -> Result<Config, Error> {
    let mut config = match &args.config {
        Some(p) => Config::from_file(p)?,
        None => Config::default(),
    };
    for kv in &args.set {
        config.set(kv)?;
    }
    config.seed = args.seed;
    config.validate()?;
    Ok(config)
}

fn member_path(out: &Path, k: usize) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(format!(".{k}"));
    PathBuf::from(s)
}

fn run_training<M: segrnn::model::Model + Send>(
    args: &TrainArgs,
    trees: Option<&Path>,
    train: impl Fn(&Config, TrainData<'_>) -> Result<Trained<M>, Error> + Sync,
) -> Result<(), Error> {
    let config = load_config(args)?;
    let train_corpus = load_corpus(&args.train)?;
    let dev_corpus = match &args.dev {
        Some(p) => load_corpus(p)?,
        None => Vec::new(),
    };
    let ontology = FrameOntology::load(&args.ontology)?;
    let pretrained = args
        .embeddings
        .as_deref()
        .map(PretrainedEmbeddings::load)
        .transpose()?;
    let tree_corpus = match trees {
        Some(p) => load_treebank(p, config.max_span)?,
        None => Vec::new(),
    };
    let data = TrainData {
        train: &train_corpus,
        dev: &dev_corpus,
        trees: &tree_corpus,
        ontology: &ontology,
        pretrained: pretrained.as_ref(),
    };
    let members = if args.ensemble {
        config.ensemble_size
    } else {
        1
    };
    let results: Vec<Result<(), Error>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..members)
            .map(|k| {
                let mut cfg = config.clone();
                cfg.seed = config.seed.wrapping_add(k as u64);
                let out = if args.ensemble {
                    member_path(&args.out, k)
                } else {
                    args.out.clone()
                };
                let train = &train;
                s.spawn(move || {
                    let trained = train(&cfg, data)?;
                    log::info!(
                        "seed {}: best dev {:?} at epoch {:?}; writing {}",
                        cfg.seed,
                        trained.selection.best_dev,
                        trained.selection.best_epoch,
                        out.display()
                    );
                    checkpoint::save(&trained.model, trained.selection, &out)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("training thread panicked"))
            .collect()
    });
    results.into_iter().collect()
}

fn load_all<M: segrnn::model::Model>(paths: &[PathBuf]) -> Result<Vec<M>, Error> {
    paths
        .iter()
        .map(|p| Ok(checkpoint::load::<M>(p)?.0))
        .collect()
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::TrainArg { common, trees } => run_training(&common, trees.as_deref(), train_arg),
        Command::TrainFrame { common } => run_training(&common, None, train_frame),
        Command::Predict {
            arg,
            frame,
            corpus,
            mode,
            out,
        } => {
            let arg: Vec<ArgModel> = load_all(&arg)?;
            let frame: Vec<FrameIdModel> = load_all(&frame)?;
            let sentences = load_corpus(&corpus)?;
            let records = predict(
                Ensemble {
                    arg: &arg,
                    frame: &frame,
                },
                &sentences,
                mode,
            )?;
            let text = predictions_to_jsonl(&records);
            match out {
                Some(p) => std::fs::write(&p, text).map_err(|e| Error::Io { path: p, source: e }),
                None => {
                    print!("{text}");
                    Ok(())
                }
            }
        }
        Command::Evaluate {
            predictions,
            gold,
            mode,
            json,
        } => {
            let report = evaluate(&load_predictions(&predictions)?, &load_corpus(&gold)?, mode)?;
            if json {
                println!("{}", report.to_json());
            } else {
                println!("{report}");
            }
            Ok(())
        }
        Command::InspectCheckpoint { path } => {
            let h = checkpoint::inspect(&path)?;
            let params: usize = h
                .tensors
                .iter()
                .map(|t| t.shape.iter().product::<usize>())
                .sum();
            let summary = serde_json::json!({
                "kind": h.kind,
                "format_version": checkpoint::FORMAT_VERSION,
                "best_dev": h.best_dev,
                "best_epoch": h.best_epoch,
                "vocab_hash": h.vocab_hash,
                "ontology_hash": h.ontology_hash,
                "tensors_hash": h.tensors_hash,
                "vocabulary_size": h.vocabulary.num_words(),
                "frames": h.ontology.frames.len(),
                "pretrained_words": h.pretrained_words.as_ref().map(Vec::len),
                "parameters": params,
                "tensors": h.tensors,
                "config": h.config,
            });
            println!(
                "{}",
                serde_json::to_string_pretty(&summary).map_err(Error::Json)?
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
