mod config;
mod error;
mod manifest;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use textrep::cnnvae::Variant;

use crate::config::{EmbeddingMode, PipelineConfig};
use crate::error::CliResult;
use crate::stages::Stage;

/// Text representation pipeline: word2vec, LDA, topical word embeddings and
/// a CNN-VAE document encoder evaluated with KNN, random forest and SVM.
#[derive(Debug, Parser)]
#[command(name = "textrep", version)]
struct Cli {
    /// TOML configuration file; defaults apply when omitted.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,

    /// Override a configuration key, e.g. `--set vae.epochs=5`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum VariantArg {
    Vae,
    Ae,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum EmbeddingArg {
    Word2vec,
    Twe,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build the vocabulary and encode the corpus.
    Preprocess,
    /// Train word2vec embeddings.
    TrainW2v,
    /// Fit LDA and tag every token with a topic.
    TrainLda,
    /// Held-out perplexity and classification accuracy across topic counts.
    LdaSweep,
    /// Train topical word embeddings from the LDA tags.
    TrainTwe,
    /// Train a CNN-VAE or CNN-AE document encoder.
    TrainVae {
        #[arg(long, value_enum, default_value = "vae")]
        variant: VariantArg,
        /// Embeddings the document matrices are built from; defaults to
        /// `embedding.mode` in the configuration.
        #[arg(long, value_enum)]
        embedding: Option<EmbeddingArg>,
    },
    /// Write document vectors for every trained representation.
    Encode,
    /// Compare all representations under every configured classifier.
    Evaluate,
    /// Run every stage in order.
    Pipeline,
}

fn run(cli: &Cli) -> CliResult<()> {
    let config = PipelineConfig::load(cli.config.as_deref(), &cli.overrides)?;
    let mut stage = Stage::open(&config)?;
    match &cli.command {
        Command::Preprocess => stage.preprocess(),
        Command::TrainW2v => stage.train_w2v(),
        Command::TrainLda => stage.train_lda(),
        Command::LdaSweep => stage.lda_sweep(),
        Command::TrainTwe => stage.train_twe(),
        Command::TrainVae { variant, embedding } => {
            let variant = match variant {
                VariantArg::Vae => Variant::Vae,
                VariantArg::Ae => Variant::Ae,
            };
            let mode = match embedding {
                Some(EmbeddingArg::Word2vec) => EmbeddingMode::Word2vec,
                Some(EmbeddingArg::Twe) => EmbeddingMode::Twe,
                None => config.embedding.mode,
            };
            stage.train_vae(variant, mode)
        }
        Command::Encode => stage.encode(),
        Command::Evaluate => stage.evaluate(),
        Command::Pipeline => stage.pipeline(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error [{}]: {e}", e.category());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
