use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use textrep::classify::{evaluate_representation, write_report_csv, ClassifierSpec, Distance, EvaluationReport};
use textrep::cnnvae::{self, unit_rms_scale, EmbeddedDocs, MatrixSource, Subset, TaggedDocs, Variant};
use textrep::corpus::{self, load_labeled_corpus, load_stopwords, LabelSet, LineFormat, Vocabulary};
use textrep::io::{load_dense, save_dense, save_text_embeddings};
use textrep::lda::{self, perplexity, select_topic_count, LdaState, TopicTaggedCorpus};
use textrep::twe::{train_twe_with_log, RowSource, TweOptions};
use textrep::word2vec::{self, average_document_vector};
use textrep::{Embeddings32, Matrix32, TopicalEmbeddings32, VaeModel32};

use crate::config::{EmbeddingMode, InputScaling, PipelineConfig};
use crate::error::{CliError, CliResult};
use crate::manifest::{sha256_hex, Manifest};

const VOCAB: &str = "vocab.txt";
const LABELS: &str = "labels.txt";
const CORPUS: &str = "corpus.txt";
const W2V: &str = "w2v.bin";
const W2V_OUTPUT: &str = "w2v_output.bin";
const LDA: &str = "lda.json";
const TOPICS: &str = "topics.txt";
const TWE_WORDS: &str = "twe_words.bin";
const TWE_TOPICS: &str = "twe_topics.bin";
const TWE_OUTPUT: &str = "twe_output.bin";
const W2V_AVG: &str = "repr_w2v-avg.bin";

/// Every VAE model the pipeline trains, as (variant, embedding mode).
pub const PIPELINE_MODELS: [(Variant, EmbeddingMode); 3] = [
    (Variant::Ae, EmbeddingMode::Word2vec),
    (Variant::Vae, EmbeddingMode::Word2vec),
    (Variant::Vae, EmbeddingMode::Twe),
];

type GridRow = (&'static str, Option<(Variant, EmbeddingMode)>, &'static str);

/// Report rows: representation name, the model it is read from and the
/// stages that produce it.
const GRID: [GridRow; 5] = [
    ("w2v-avg", None, "train-w2v, then encode"),
    (
        "cnn-ae",
        Some((Variant::Ae, EmbeddingMode::Word2vec)),
        "train-vae --variant ae --embedding word2vec, then encode",
    ),
    (
        "cnn-vae",
        Some((Variant::Vae, EmbeddingMode::Word2vec)),
        "train-vae --variant vae --embedding word2vec, then encode",
    ),
    (
        "word2vec+cnn-vae",
        Some((Variant::Vae, EmbeddingMode::Word2vec)),
        "train-vae --variant vae --embedding word2vec, then encode",
    ),
    (
        "twe+cnn-vae",
        Some((Variant::Vae, EmbeddingMode::Twe)),
        "train-vae --variant vae --embedding twe, then encode",
    ),
];

fn variant_name(v: Variant) -> &'static str {
    match v {
        Variant::Vae => "vae",
        Variant::Ae => "ae",
    }
}

pub fn model_name(variant: Variant, mode: EmbeddingMode) -> String {
    format!("{}-{}", variant_name(variant), mode.short())
}

fn repr_file(model: Option<(Variant, EmbeddingMode)>) -> String {
    match model {
        None => W2V_AVG.to_owned(),
        Some((v, m)) => format!("repr_{}.bin", model_name(v, m)),
    }
}

fn json_of(bin: &str) -> String {
    Path::new(bin).with_extension("json").to_string_lossy().into_owned()
}

/// Input scale and source used to train a VAE model; `encode` reuses it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct VaeInputs {
    embedding: EmbeddingMode,
    pad_len: usize,
    scale: f32,
}

pub struct Stage<'a> {
    config: &'a PipelineConfig,
    dir: PathBuf,
    manifest: Manifest,
    config_sha: String,
}

struct Corpus {
    labels: Vec<usize>,
    docs: Vec<Vec<u32>>,
}

impl<'a> Stage<'a> {
    pub fn open(config: &'a PipelineConfig) -> CliResult<Self> {
        let dir = config.output_dir.clone();
        fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        let manifest = Manifest::load(&dir)?;
        let mut hashed = config.clone();
        hashed.output_dir = PathBuf::new();
        let json = serde_json::to_string(&hashed).map_err(|e| CliError::Internal(e.to_string()))?;
        Ok(Self {
            config,
            dir,
            manifest,
            config_sha: sha256_hex(json.as_bytes()),
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Ensures an input artifact exists and matches its provenance record.
    fn input(&self, name: &str, stage: &'static str) -> CliResult<PathBuf> {
        let path = self.path(name);
        if !path.is_file() {
            return Err(CliError::MissingDependency { artifact: path, stage });
        }
        self.manifest.verify(&self.dir, name)?;
        Ok(path)
    }

    fn finish(&mut self, stage: &str, inputs: &[&str], outputs: &[String]) -> CliResult<()> {
        self.manifest
            .record(&self.dir, stage, self.config_sha.clone(), inputs, outputs)?;
        self.manifest.save(&self.dir)?;
        println!("{stage}: {} artifact(s) in {}", outputs.len(), self.dir.display());
        Ok(())
    }

    fn write(&self, name: &str, text: &str) -> CliResult<()> {
        let p = self.path(name);
        fs::write(&p, text).map_err(|e| CliError::io(&p, e))
    }

    fn load_corpus(&self) -> CliResult<Corpus> {
        let path = self.input(CORPUS, "preprocess")?;
        let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        let mut labels = Vec::new();
        let mut docs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let bad = || CliError::Input(format!("{}: malformed line {}", path.display(), i + 1));
            let (label, ids) = line.split_once('\t').ok_or_else(bad)?;
            labels.push(label.parse().map_err(|_| bad())?);
            docs.push(
                ids.split(' ')
                    .filter(|t| !t.is_empty())
                    .map(|t| t.parse().map_err(|_| bad()))
                    .collect::<CliResult<Vec<u32>>>()?,
            );
        }
        Ok(Corpus { labels, docs })
    }

    fn load_vocab(&self) -> CliResult<Vocabulary> {
        Ok(Vocabulary::load(self.input(VOCAB, "preprocess")?)?)
    }

    pub fn preprocess(&mut self) -> CliResult<()> {
        let c = self.config;
        let raw = load_labeled_corpus(&c.corpus, LineFormat::default())?;
        let stop = match &c.stopwords {
            Some(p) => load_stopwords(p)?,
            None => HashSet::new(),
        };
        let vocab = Vocabulary::build(raw.iter().map(|d| d.tokens.as_slice()), c.vocab_size, &stop)?;
        let labels = LabelSet::from_documents(&raw);
        let docs = corpus::encode_corpus(&raw, &vocab, &labels, &stop)?;
        vocab.save(self.path(VOCAB))?;
        let mut names = labels.names().join("\n");
        names.push('\n');
        self.write(LABELS, &names)?;
        let mut text = String::new();
        for d in &docs {
            let ids: Vec<String> = d.tokens.iter().map(u32::to_string).collect();
            let _ = writeln!(text, "{}\t{}", d.label, ids.join(" "));
        }
        self.write(CORPUS, &text)?;
        self.finish("preprocess", &[], &[VOCAB.into(), LABELS.into(), CORPUS.into()])
    }

    pub fn train_w2v(&mut self) -> CliResult<()> {
        let c = self.config;
        let vocab = self.load_vocab()?;
        let corpus = self.load_corpus()?;
        let (emb, log) = word2vec::train_with_log::<f32>(&corpus.docs, &vocab, c.embedding.architecture, &c.word2vec)?;
        save_dense(self.path(W2V), &emb.input, Some(vocab.tokens()))?;
        save_dense(self.path(W2V_OUTPUT), &emb.output, Some(vocab.tokens()))?;
        save_text_embeddings(self.path("w2v.txt"), vocab.tokens(), &emb.input)?;
        self.write("w2v_log.csv", &epoch_log(&log))?;
        let outputs = [
            W2V,
            &json_of(W2V),
            W2V_OUTPUT,
            &json_of(W2V_OUTPUT),
            "w2v.txt",
            "w2v_log.csv",
        ];
        self.finish("train-w2v", &[VOCAB, CORPUS], &owned(&outputs))
    }

    pub fn train_lda(&mut self) -> CliResult<()> {
        let c = self.config;
        let vocab = self.load_vocab()?;
        let corpus = self.load_corpus()?;
        let cfg = c.lda.lda_config(c.seed);
        let mut state = LdaState::init(&corpus.docs, vocab.len(), &cfg)?;
        let mut log = String::from("sweep,perplexity\n");
        while state.sweeps_done() < cfg.sweeps {
            state.run(c.lda.log_every.min(cfg.sweeps - state.sweeps_done()));
            let p = perplexity(&state.estimate_theta(), &state.estimate_phi(), &corpus.docs)?;
            let _ = writeln!(log, "{},{p}", state.sweeps_done());
        }
        state.save_checkpoint(self.path(LDA))?;
        state.tag_corpus(c.lda.tag_mode).save(self.path(TOPICS))?;
        save_dense(self.path("lda_phi.bin"), &state.estimate_phi(), None)?;
        save_dense(self.path("lda_theta.bin"), &state.estimate_theta(), None)?;
        self.write("lda_log.csv", &log)?;
        let outputs = [
            LDA,
            "lda.z",
            TOPICS,
            "lda_phi.bin",
            "lda_phi.json",
            "lda_theta.bin",
            "lda_theta.json",
            "lda_log.csv",
        ];
        self.finish("train-lda", &[VOCAB, CORPUS], &owned(&outputs))
    }

    pub fn lda_sweep(&mut self) -> CliResult<()> {
        let c = self.config;
        let vocab = self.load_vocab()?;
        let corpus = self.load_corpus()?;
        let base = c.lda.lda_config(c.seed);
        let knn = ClassifierSpec::Knn {
            k: 5,
            distance: Distance::Euclidean,
        };
        let labels = &corpus.labels;
        let ev = &c.evaluate;
        let mut classify = |theta: &textrep::Matrix<f64>, rows: &[usize]| {
            let y: Vec<usize> = rows.iter().map(|&d| labels[d]).collect();
            let r = evaluate_representation("lda-theta", theta, &y, &knn, ev.runs, ev.test_fraction, c.seed)?;
            Ok(r.metric("accuracy").map_or(0.0, |m| m.mean))
        };
        let points = select_topic_count(
            &corpus.docs,
            vocab.len(),
            &c.lda_sweep.topics,
            &base,
            c.lda_sweep.heldout_fraction,
            &mut classify,
        )?;
        let mut csv = String::from("topics,perplexity,accuracy\n");
        for p in &points {
            let _ = writeln!(csv, "{},{},{}", p.topics, p.perplexity, p.accuracy);
        }
        self.write("lda_sweep.csv", &csv)?;
        if let (Some(min), Some(elbow)) = (lda::perplexity_minimum(&points), lda::perplexity_elbow(&points, 0.01)) {
            println!("lda-sweep: perplexity minimum at {min} topics, first elbow at {elbow}");
        }
        self.finish("lda-sweep", &[VOCAB, CORPUS], &["lda_sweep.csv".into()])
    }

    pub fn train_twe(&mut self) -> CliResult<()> {
        let c = self.config;
        let vocab = self.load_vocab()?;
        let tagged = TopicTaggedCorpus::load(self.input(TOPICS, "train-lda")?)?;
        let mut inputs = vec![VOCAB, TOPICS];
        let warm = if c.twe.warm_start {
            inputs.extend([W2V, W2V_OUTPUT]);
            let (input, _) = load_dense::<f32>(self.input(W2V, "train-w2v")?)?;
            let (output, _) = load_dense::<f32>(self.input(W2V_OUTPUT, "train-w2v")?)?;
            Some(Embeddings32 { input, output })
        } else {
            None
        };
        let options = TweOptions {
            warm_start: warm.as_ref(),
            freeze_topics: c.twe.freeze_topics,
            zero_topics: false,
        };
        let (emb, log) = train_twe_with_log::<f32>(&tagged, &vocab, &c.word2vec, &options)?;
        save_dense(self.path(TWE_WORDS), &emb.words, Some(vocab.tokens()))?;
        save_dense(self.path(TWE_TOPICS), &emb.topics, None)?;
        save_dense(self.path(TWE_OUTPUT), &emb.output, Some(vocab.tokens()))?;
        self.write("twe_log.csv", &epoch_log(&log))?;
        let outputs = [
            TWE_WORDS,
            &json_of(TWE_WORDS),
            TWE_TOPICS,
            &json_of(TWE_TOPICS),
            TWE_OUTPUT,
            &json_of(TWE_OUTPUT),
            "twe_log.csv",
        ];
        self.finish("train-twe", &inputs, &owned(&outputs))
    }

    fn load_twe(&self) -> CliResult<TopicalEmbeddings32> {
        Ok(TopicalEmbeddings32 {
            words: load_dense(self.input(TWE_WORDS, "train-twe")?)?.0,
            topics: load_dense(self.input(TWE_TOPICS, "train-twe")?)?.0,
            output: load_dense(self.input(TWE_OUTPUT, "train-twe")?)?.0,
        })
    }

    /// Runs `f` on the document source for `mode` and returns the inputs it
    /// consumed.
    fn with_source<R>(
        &self,
        mode: EmbeddingMode,
        scale: f32,
        f: impl FnOnce(&dyn MatrixSource<f32>) -> CliResult<R>,
    ) -> CliResult<(R, Vec<&'static str>)> {
        let pad_len = self.config.pad_len;
        match mode {
            EmbeddingMode::Word2vec => {
                let corpus = self.load_corpus()?;
                let (table, _) = load_dense::<f32>(self.input(W2V, "train-w2v")?)?;
                let docs = EmbeddedDocs {
                    docs: &corpus.docs,
                    table: &table,
                    pad_len,
                    scale,
                };
                Ok((f(&docs)?, vec![CORPUS, W2V]))
            }
            EmbeddingMode::Twe => {
                let tagged = TopicTaggedCorpus::load(self.input(TOPICS, "train-lda")?)?;
                let emb = self.load_twe()?;
                let docs = TaggedDocs {
                    docs: &tagged.docs,
                    source: RowSource::Topical(&emb),
                    pad_len,
                    scale,
                };
                Ok((f(&docs)?, vec![TOPICS, TWE_WORDS, TWE_TOPICS]))
            }
        }
    }

    pub fn train_vae(&mut self, variant: Variant, mode: EmbeddingMode) -> CliResult<()> {
        let c = self.config;
        let scale = match c.embedding.input_scaling {
            InputScaling::UnitRms => self.with_source(mode, 1.0, |d| Ok(unit_rms_scale(d)?))?.0,
            InputScaling::None => 1.0,
        };
        let vc = c.vae_config(mode);
        let fraction = c.vae_validation_fraction;
        let ((model, log), inputs) = self.with_source(mode, scale, |d| {
            let (train, validation) = holdout(d.len(), fraction, c.seed)?;
            let train = Subset {
                source: d,
                indices: &train,
            };
            let validation = Subset {
                source: d,
                indices: &validation,
            };
            let validation = (!validation.is_empty()).then_some(&validation as &dyn MatrixSource<f32>);
            Ok(cnnvae::train(&train, validation, &vc, variant)?)
        })?;
        let name = model_name(variant, mode);
        let bin = format!("{name}.bin");
        model.save(self.path(&bin))?;
        let mut log_csv = Vec::new();
        cnnvae::write_training_log(&log, &mut log_csv).map_err(|e| CliError::Internal(e.to_string()))?;
        self.write(&format!("{name}_log.csv"), &String::from_utf8_lossy(&log_csv))?;
        let meta = VaeInputs {
            embedding: mode,
            pad_len: c.pad_len,
            scale,
        };
        self.write(&format!("{name}_inputs.json"), &to_json(&meta)?)?;
        let outputs = [
            bin.clone(),
            json_of(&bin),
            format!("{name}_log.csv"),
            format!("{name}_inputs.json"),
        ];
        self.finish(&format!("train-vae:{name}"), &inputs, &outputs)
    }

    /// Writes the averaged word2vec representation and the encoding of every
    /// trained VAE model.
    pub fn encode(&mut self) -> CliResult<()> {
        let corpus = self.load_corpus()?;
        let (table, _) = load_dense::<f32>(self.input(W2V, "train-w2v")?)?;
        let avg: Vec<Vec<f32>> = corpus.docs.iter().map(|d| average_document_vector(d, &table)).collect();
        save_dense(self.path(W2V_AVG), &Matrix32::from_rows(&avg)?, None)?;
        let mut inputs = vec![CORPUS, W2V];
        let mut outputs = vec![W2V_AVG.to_owned(), json_of(W2V_AVG)];
        let mut models = Vec::new();
        for variant in [Variant::Ae, Variant::Vae] {
            for mode in [EmbeddingMode::Word2vec, EmbeddingMode::Twe] {
                if self.path(&format!("{}.bin", model_name(variant, mode))).is_file() {
                    models.push((variant, mode));
                }
            }
        }
        let names: Vec<(String, String)> = models
            .iter()
            .map(|&(v, m)| {
                let name = model_name(v, m);
                (format!("{name}.bin"), format!("{name}_inputs.json"))
            })
            .collect();
        for (&(variant, mode), (bin, meta)) in models.iter().zip(&names) {
            let stage = "train-vae";
            let model = VaeModel32::load(self.input(bin, stage)?)?;
            let meta_path = self.input(meta, stage)?;
            let text = fs::read_to_string(&meta_path).map_err(|e| CliError::io(&meta_path, e))?;
            let meta_v: VaeInputs = serde_json::from_str(&text).map_err(|e| CliError::Input(e.to_string()))?;
            if meta_v.embedding != mode || meta_v.pad_len != self.config.pad_len {
                return Err(CliError::Input(format!(
                    "{meta} does not match the current configuration"
                )));
            }
            let (encoded, used) = self.with_source(mode, meta_v.scale, |d| Ok(cnnvae::encode_corpus(&model, d)?))?;
            let out = repr_file(Some((variant, mode)));
            save_dense(self.path(&out), &encoded, None)?;
            inputs.extend(used);
            inputs.extend([bin.as_str(), meta.as_str()]);
            outputs.extend([out.clone(), json_of(&out)]);
        }
        inputs.sort_unstable();
        inputs.dedup();
        self.finish("encode", &inputs, &outputs)
    }

    pub fn evaluate(&mut self) -> CliResult<()> {
        let c = self.config;
        let corpus = self.load_corpus()?;
        let mut reports: Vec<EvaluationReport> = Vec::new();
        let mut inputs = vec![CORPUS];
        let mut cache: Vec<(String, Vec<EvaluationReport>)> = Vec::new();
        for (name, model, stage) in GRID {
            let file = repr_file(model);
            let path = self.input(&file, stage)?;
            if let Some((_, done)) = cache.iter().find(|(f, _)| *f == file) {
                reports.extend(done.iter().cloned().map(|mut r| {
                    r.representation = name.to_owned();
                    r
                }));
                continue;
            }
            let (vectors, _) = load_dense::<f32>(path)?;
            let mut done = Vec::new();
            for spec in &c.evaluate.classifiers {
                let r = evaluate_representation(
                    name,
                    &vectors,
                    &corpus.labels,
                    spec,
                    c.evaluate.runs,
                    c.evaluate.test_fraction,
                    c.seed,
                )?;
                done.push(r);
            }
            reports.extend(done.iter().cloned());
            cache.push((file, done));
        }
        let files: Vec<String> = cache.iter().map(|(f, _)| f.clone()).collect();
        inputs.extend(files.iter().map(String::as_str));
        let mut csv = Vec::new();
        write_report_csv(&reports, &mut csv).map_err(|e| CliError::Internal(e.to_string()))?;
        self.write("report.csv", &String::from_utf8_lossy(&csv))?;
        self.write("report.json", &to_json(&reports)?)?;
        self.finish("evaluate", &inputs, &owned(&["report.csv", "report.json"]))
    }

    pub fn pipeline(&mut self) -> CliResult<()> {
        self.preprocess()?;
        self.train_w2v()?;
        self.train_lda()?;
        self.lda_sweep()?;
        self.train_twe()?;
        for (variant, mode) in PIPELINE_MODELS {
            self.train_vae(variant, mode)?;
        }
        self.encode()?;
        self.evaluate()
    }
}

fn owned(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

fn epoch_log(losses: &[f64]) -> String {
    let mut s = String::from("epoch,loss\n");
    for (i, l) in losses.iter().enumerate() {
        let _ = writeln!(s, "{},{l}", i + 1);
    }
    s
}

fn to_json<T: Serialize>(value: &T) -> CliResult<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::Internal(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

/// Splits `0..n` into training and validation indices, with
/// `round(n * fraction)` validation documents chosen by `seed`.
fn holdout(n: usize, fraction: f64, seed: u64) -> CliResult<(Vec<usize>, Vec<usize>)> {
    let mut ids: Vec<usize> = (0..n).collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let k = (n as f64 * fraction).round() as usize;
    if k >= n {
        return Err(CliError::Input(format!(
            "vae_validation_fraction {fraction} leaves no training documents out of {n}"
        )));
    }
    let mut validation = ids.split_off(n - k);
    ids.sort_unstable();
    validation.sort_unstable();
    Ok((ids, validation))
}
