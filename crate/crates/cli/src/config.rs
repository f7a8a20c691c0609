use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use textrep::classify::{ClassifierSpec, Distance, ForestConfig, SvmConfig};
use textrep::cnnvae::VaeConfig;
use textrep::lda::{LdaConfig, TagMode};
use textrep::word2vec::{Architecture, TrainConfig};

use crate::error::{CliError, CliResult};

pub const OUTPUT_DIR_ENV: &str = "TEXTREP_OUTPUT_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmbeddingMode {
    Word2vec,
    Twe,
}

impl EmbeddingMode {
    pub fn short(self) -> &'static str {
        match self {
            EmbeddingMode::Word2vec => "w2v",
            EmbeddingMode::Twe => "twe",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InputScaling {
    /// Document matrices are multiplied by one global factor so that their
    /// non-padding entries have unit RMS.
    UnitRms,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingSection {
    pub mode: EmbeddingMode,
    pub architecture: Architecture,
    pub input_scaling: InputScaling,
}

impl Default for EmbeddingSection {
    fn default() -> Self {
        Self {
            mode: EmbeddingMode::Twe,
            architecture: Architecture::SkipGram,
            input_scaling: InputScaling::UnitRms,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LdaSection {
    pub topics: usize,
    /// Defaults to `50 / topics`.
    pub alpha: Option<f64>,
    pub beta: f64,
    pub sweeps: usize,
    pub burn_in: usize,
    pub tag_mode: TagMode,
    /// Sweeps between training-log rows.
    pub log_every: usize,
}

impl Default for LdaSection {
    fn default() -> Self {
        Self {
            topics: 65,
            alpha: None,
            beta: 0.01,
            sweeps: 500,
            burn_in: 100,
            tag_mode: TagMode::FinalSample,
            log_every: 10,
        }
    }
}

impl LdaSection {
    pub fn lda_config(&self, seed: u64) -> LdaConfig {
        LdaConfig {
            alpha: self.alpha.unwrap_or(50.0 / self.topics.max(1) as f64),
            beta: self.beta,
            sweeps: self.sweeps,
            burn_in: self.burn_in,
            seed,
            ..LdaConfig::new(self.topics)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub topics: Vec<usize>,
    pub heldout_fraction: f64,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            topics: vec![5, 20, 35, 50, 65, 80, 95],
            heldout_fraction: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct TweSection {
    /// Start word and output vectors from the trained word2vec model.
    pub warm_start: bool,
    pub freeze_topics: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSection {
    pub runs: usize,
    pub test_fraction: f64,
    pub classifiers: Vec<ClassifierSpec>,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        Self {
            runs: 10,
            test_fraction: 0.2,
            classifiers: vec![
                ClassifierSpec::Knn {
                    k: 5,
                    distance: Distance::Euclidean,
                },
                ClassifierSpec::RandomForest(ForestConfig::default()),
                ClassifierSpec::LinearSvm(SvmConfig::default()),
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub corpus: PathBuf,
    pub stopwords: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub vocab_size: usize,
    pub pad_len: usize,
    pub embedding: EmbeddingSection,
    pub word2vec: TrainConfig,
    pub lda: LdaSection,
    pub lda_sweep: SweepSection,
    pub twe: TweSection,
    pub vae: VaeConfig,
    /// Share of documents held out of VAE training to log a validation
    /// loss per epoch.
    pub vae_validation_fraction: f64,
    pub evaluate: EvaluateSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            corpus: PathBuf::from("corpus.tsv"),
            stopwords: None,
            output_dir: PathBuf::from("out"),
            vocab_size: 10000,
            pad_len: 100,
            embedding: EmbeddingSection::default(),
            word2vec: TrainConfig::default(),
            lda: LdaSection::default(),
            lda_sweep: SweepSection::default(),
            twe: TweSection::default(),
            vae: VaeConfig::default(),
            vae_validation_fraction: 0.1,
            evaluate: EvaluateSection::default(),
        }
    }
}

/// Keys filled in from other settings; setting them directly is an error.
const DERIVED_KEYS: [&str; 5] = [
    "word2vec.seed",
    "vae.seed",
    "vae.input_rows",
    "vae.input_cols",
    "lda.seed",
];

impl PipelineConfig {
    /// Reads `path` (or starts from defaults), applies `key=value`
    /// overrides and the output-directory environment override, then fills
    /// derived fields and checks that referenced input files exist.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> CliResult<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
                text.parse::<toml::Table>()
                    .map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        for key in DERIVED_KEYS {
            if lookup(&table, key).is_some() {
                return Err(CliError::Input(format!("`{key}` is derived and cannot be set")));
            }
        }
        let mut config: PipelineConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Input(format!("config: {}", e.message())))?;
        if let Some(dir) = std::env::var_os(OUTPUT_DIR_ENV) {
            config.output_dir = PathBuf::from(dir);
        }
        config.finish()?;
        Ok(config)
    }

    fn finish(&mut self) -> CliResult<()> {
        self.word2vec.seed = self.seed;
        self.vae.seed = self.seed;
        self.vae.input_rows = self.pad_len;
        self.word2vec.validate()?;
        self.lda.lda_config(self.seed).validate()?;
        if self.pad_len == 0 {
            return Err(CliError::Input("pad_len must be at least 1".into()));
        }
        self.vae_config(self.embedding.mode).validate()?;
        if !(0.0..1.0).contains(&self.vae_validation_fraction) {
            return Err(CliError::Input("vae_validation_fraction must be in [0, 1)".into()));
        }
        if self.lda.log_every == 0 {
            return Err(CliError::Input("lda.log_every must be at least 1".into()));
        }
        for p in std::iter::once(&self.corpus).chain(self.stopwords.as_ref()) {
            if !p.is_file() {
                return Err(CliError::Input(format!("input file not found: {}", p.display())));
            }
        }
        Ok(())
    }

    /// VAE settings for documents built from `mode` embeddings.
    pub fn vae_config(&self, mode: EmbeddingMode) -> VaeConfig {
        let width = match mode {
            EmbeddingMode::Word2vec => self.word2vec.dim,
            EmbeddingMode::Twe => 2 * self.word2vec.dim,
        };
        VaeConfig {
            input_cols: width,
            ..self.vae.clone()
        }
    }
}

fn lookup<'a>(table: &'a toml::Table, key: &str) -> Option<&'a toml::Value> {
    let mut parts = key.split('.');
    let mut v = table.get(parts.next()?)?;
    for p in parts {
        v = v.as_table()?.get(p)?;
    }
    Some(v)
}

/// `a.b.c=value`: the value is parsed as TOML and falls back to a plain
/// string.
fn apply_override(table: &mut toml::Table, assignment: &str) -> CliResult<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Input(format!("override `{assignment}` is not key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_owned()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Input(format!("override key `{key}` is malformed")));
    }
    let (last, parents) = parts.split_last().expect("split yields at least one part");
    let mut cur = table;
    for p in parents {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Input(format!("override key `{key}`: `{p}` is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}
