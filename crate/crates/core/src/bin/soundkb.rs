use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use soundkb::embeddings::FeatureKind;
use soundkb::lstm::TrainConfig;
use soundkb::phrase::Hyperparams;
use soundkb::pipeline::{self, PipelineError};

#[derive(Parser)]
#[command(name = "soundkb", version, about = "Build a scene-to-sounds knowledge base from annotated text")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Mine "sound(s) of Y" concepts from annotated corpora
    Mine {
        #[arg(long, required = true)]
        corpus: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        shards: usize,
        /// Write the most frequent concepts of each pattern here
        #[arg(long)]
        top_out: Option<PathBuf>,
        #[arg(long, default_value_t = 100, requires = "top_out")]
        top_k: usize,
    },
    /// Cross-validate and train the sound phrase classifier
    TrainPhrase {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long, default_value = "awv")]
        featurizer: FeatureKind,
        #[arg(long, default_value_t = 4)]
        folds: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = Hyperparams::default().reg)]
        reg: f64,
        #[arg(long, default_value_t = Hyperparams::default().epochs)]
        epochs: usize,
        #[arg(long)]
        out: PathBuf,
        /// Also write the fold report here
        #[arg(long)]
        report_out: Option<PathBuf>,
    },
    /// Label word pairs with a trained phrase classifier
    Classify {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        phrases: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Extract shortest dependency paths between scenes and concepts
    Paths {
        #[arg(long, required = true)]
        corpus: Vec<PathBuf>,
        #[arg(long)]
        concepts: PathBuf,
        /// One environment per line (defaults to the built-in 36)
        #[arg(long)]
        lexicon: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        freq_out: Option<PathBuf>,
        #[arg(long)]
        top_paths: Option<usize>,
    },
    /// Train the LSTM path relation classifier
    TrainRelation {
        #[arg(long)]
        occurrences: PathBuf,
        #[arg(long)]
        seeds_pos: Option<PathBuf>,
        #[arg(long)]
        seeds_neg: Option<PathBuf>,
        #[arg(long)]
        embeddings: Option<PathBuf>,
        /// Embedding width when --embeddings is not given
        #[arg(long, default_value_t = 50)]
        dim: usize,
        #[arg(long, default_value_t = TrainConfig::default().hidden)]
        hidden: usize,
        #[arg(long, default_value_t = TrainConfig::default().learning_rate)]
        lr: f64,
        #[arg(long, default_value_t = TrainConfig::default().epochs)]
        epochs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = TrainConfig::default().clip)]
        clip: f64,
        #[arg(long, default_value_t = TrainConfig::default().init_scale)]
        init_scale: f64,
        /// Also update pretrained embedding rows
        #[arg(long)]
        finetune: bool,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        trace_out: Option<PathBuf>,
    },
    /// Score path occurrences with a relation model
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        occurrences: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the per-scene sound lists
    Report {
        /// Predictions written by `predict`
        #[arg(long)]
        kb: PathBuf,
        #[arg(long)]
        lexicon: Option<PathBuf>,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        #[arg(long)]
        top_k: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(command: Command) -> Result<String, PipelineError> {
    match command {
        Command::Mine {
            corpus,
            out,
            shards,
            top_out,
            top_k,
        } => {
            if shards == 0 {
                return Err(PipelineError::Usage("--shards must be at least 1".into()));
            }
            pipeline::cmd_mine(&pipeline::MineOptions {
                corpus,
                out,
                shards,
                top_out: top_out.map(|p| (p, top_k)),
            })
        }
        Command::TrainPhrase {
            data,
            embeddings,
            featurizer,
            folds,
            seed,
            reg,
            epochs,
            out,
            report_out,
        } => {
            if folds < 2 || reg.is_nan() || reg <= 0.0 || epochs == 0 {
                return Err(PipelineError::Usage(
                    "--folds must be at least 2, --reg positive and --epochs at least 1".into(),
                ));
            }
            pipeline::cmd_train_phrase(&pipeline::TrainPhraseOptions {
                data,
                embeddings,
                featurizer,
                folds,
                hyperparams: Hyperparams { reg, epochs, seed },
                out,
                report_out,
            })
        }
        Command::Classify {
            model,
            embeddings,
            phrases,
            out,
        } => pipeline::cmd_classify(&pipeline::ClassifyOptions {
            model,
            embeddings,
            phrases,
            out,
        }),
        Command::Paths {
            corpus,
            concepts,
            lexicon,
            out,
            freq_out,
            top_paths,
        } => pipeline::cmd_paths(&pipeline::PathsOptions {
            corpus,
            concepts,
            lexicon,
            out,
            freq_out,
            top_paths,
        }),
        Command::TrainRelation {
            occurrences,
            seeds_pos,
            seeds_neg,
            embeddings,
            dim,
            hidden,
            lr,
            epochs,
            seed,
            clip,
            init_scale,
            finetune,
            out,
            trace_out,
        } => {
            let positive = |v: f64| v.is_finite() && v > 0.0;
            if dim == 0 || hidden == 0 || epochs == 0 || !positive(lr) || !positive(clip) || !positive(init_scale) {
                return Err(PipelineError::Usage(
                    "--dim, --hidden, --epochs, --lr, --clip and --init-scale must be positive".into(),
                ));
            }
            pipeline::cmd_train_relation(&pipeline::TrainRelationOptions {
                occurrences,
                seeds_pos,
                seeds_neg,
                embeddings,
                dim,
                config: TrainConfig {
                    learning_rate: lr,
                    epochs,
                    seed,
                    init_scale,
                    clip,
                    hidden,
                    finetune,
                },
                out,
                trace_out,
            })
        }
        Command::Predict {
            model,
            occurrences,
            out,
        } => pipeline::cmd_predict(&pipeline::PredictOptions {
            model,
            occurrences,
            out,
        }),
        Command::Report {
            kb,
            lexicon,
            threshold,
            top_k,
            out,
        } => pipeline::cmd_report(&pipeline::ReportOptions {
            kb,
            lexicon,
            threshold,
            top_k,
            out,
        }),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(summary) => {
            print!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
