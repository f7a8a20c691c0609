//! Topical word embeddings.
//!
//! Word vectors and topic vectors are trained skip-gram style over a
//! topic-tagged corpus: every (center, context) pair gets one
//! negative-sampling step from the center word's vector and a second step,
//! against the same context word and negatives, from the center token's
//! topic vector. Both share the output vectors. A word's representation
//! under a topic is the concatenation of the two.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Vocabulary, PAD_ID};
use crate::error::{Error, Result};
use crate::lda::TopicTaggedCorpus;
use crate::matrix::Matrix;
use crate::scalar::{axpy, Scalar};
use crate::word2vec::{
    keep_probabilities, ns_step, run_epochs, uniform_rows, Architecture, EmbeddingMatrix, Params, SamplingTable,
    TrainConfig, WalkDoc, Walker,
};

#[derive(Debug, Clone, PartialEq)]
pub struct TopicalEmbeddings<T> {
    /// V×D
    pub words: Matrix<T>,
    /// K×D
    pub topics: Matrix<T>,
    /// V×D, shared by both update kinds.
    pub output: Matrix<T>,
}

impl<T: Scalar> TopicalEmbeddings<T> {
    pub fn dim(&self) -> usize {
        self.words.cols()
    }

    pub fn num_topics(&self) -> usize {
        self.topics.rows()
    }

    pub fn topical_word_vector(&self, word: u32, topic: u32) -> Result<Vec<T>> {
        topical_word_vector(word, topic, self)
    }
}

#[derive(Debug, Clone, Default)]
pub struct TweOptions<'a, T> {
    /// Initial word (and output) vectors, e.g. from a word2vec run.
    pub warm_start: Option<&'a EmbeddingMatrix<T>>,
    /// Keep topic vectors at their initial values.
    pub freeze_topics: bool,
    /// Start topic vectors at zero instead of the uniform initialization.
    pub zero_topics: bool,
}

/// Trains word and topic vectors. With `freeze_topics` and `zero_topics`
/// set, the word vectors equal a plain skip-gram run with the same seed.
pub fn train_twe<T: Scalar>(
    tagged: &TopicTaggedCorpus,
    vocab: &Vocabulary,
    config: &TrainConfig,
    options: &TweOptions<'_, T>,
) -> Result<TopicalEmbeddings<T>> {
    train_twe_with_log(tagged, vocab, config, options).map(|(e, _)| e)
}

pub fn train_twe_with_log<T: Scalar>(
    tagged: &TopicTaggedCorpus,
    vocab: &Vocabulary,
    config: &TrainConfig,
    options: &TweOptions<'_, T>,
) -> Result<(TopicalEmbeddings<T>, Vec<f64>)> {
    config.validate()?;
    let k = tagged.topics;
    if k == 0 {
        return Err(Error::Config("tagged corpus declares zero topics".into()));
    }
    if tagged.docs.iter().all(|d| d.iter().all(|&(w, _)| w == PAD_ID)) {
        return Err(Error::EmptyCorpus);
    }
    for &(w, t) in tagged.docs.iter().flatten() {
        if w as usize >= vocab.len() {
            return Err(Error::Range(format!(
                "word id {w} outside vocabulary of {}",
                vocab.len()
            )));
        }
        if t as usize >= k {
            return Err(Error::Range(format!("topic id {t} not below {k}")));
        }
    }
    let table = SamplingTable::new(vocab, config.sampling_power)?;
    let keep = config.subsample.map(|t| keep_probabilities(vocab.counts(), t));
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let base = EmbeddingMatrix::initialize(vocab.len(), config.dim, &mut rng);
    let (mut words, mut output) = match options.warm_start {
        Some(w) => {
            if w.input.shape() != (vocab.len(), config.dim) {
                return Err(Error::Shape(format!(
                    "warm start is {:?}, expected ({}, {})",
                    w.input.shape(),
                    vocab.len(),
                    config.dim
                )));
            }
            (w.input.clone(), w.output.clone())
        }
        None => (base.input, base.output),
    };
    let mut topics = if options.zero_topics {
        Matrix::zeros(k, config.dim)
    } else {
        uniform_rows(
            k,
            config.dim,
            &mut ChaCha8Rng::seed_from_u64(config.seed ^ 0x7419_c5e1),
            false,
        )
    };

    let split: Vec<(Vec<u32>, Vec<u32>)> = tagged.docs.iter().map(|d| d.iter().copied().unzip()).collect();
    let walk: Vec<WalkDoc<'_>> = split
        .iter()
        .map(|(w, t)| WalkDoc {
            words: w,
            topics: Some(t),
        })
        .collect();
    let walker = Walker {
        arch: Architecture::SkipGram,
        config,
        table: &table,
        keep: keep.as_deref(),
    };
    let mut params = Params {
        input: words.as_mut_slice(),
        output: output.as_mut_slice(),
        topics: Some(topics.as_mut_slice()),
        freeze_topics: options.freeze_topics,
        dim: config.dim,
    };
    let history = run_epochs(&walker, &walk, &mut params, &mut rng)?;
    Ok((TopicalEmbeddings { words, topics, output }, history))
}

/// One (center, context) step: the center word's vector and then its topic
/// vector are each scored against `positive` and `negatives`, sharing the
/// output vectors. Returns the word and topic losses before the update.
#[allow(clippy::too_many_arguments)]
pub fn twe_update<T: Scalar>(
    center: u32,
    topic: u32,
    positive: u32,
    negatives: &[u32],
    emb: &mut TopicalEmbeddings<T>,
    lr: T,
    freeze_topics: bool,
) -> Result<(T, T)> {
    let v_len = emb.words.rows();
    if center == PAD_ID {
        return Err(Error::Domain("padding cannot be a center word".into()));
    }
    for &id in negatives.iter().chain([&center, &positive]) {
        if id as usize >= v_len {
            return Err(Error::Range(format!("word id {id} outside vocabulary of {v_len}")));
        }
    }
    if topic as usize >= emb.num_topics() {
        return Err(Error::Range(format!("topic id {topic} not below {}", emb.num_topics())));
    }
    let d = emb.dim();
    let v = emb.words.row(center as usize).to_vec();
    let mut step = vec![T::zero(); d];
    let word_loss = ns_step(&v, &mut step, emb.output.as_mut_slice(), positive, negatives, lr)?;
    axpy(T::one(), &step, emb.words.row_mut(center as usize));
    let tv = emb.topics.row(topic as usize).to_vec();
    step.iter_mut().for_each(|x| *x = T::zero());
    let topic_loss = ns_step(&tv, &mut step, emb.output.as_mut_slice(), positive, negatives, lr)?;
    if !freeze_topics {
        axpy(T::one(), &step, emb.topics.row_mut(topic as usize));
    }
    Ok((word_loss, topic_loss))
}

/// `word ⊕ topic`: the first D entries are the word vector, the last D the
/// topic vector.
pub fn topical_word_vector<T: Scalar>(word: u32, topic: u32, emb: &TopicalEmbeddings<T>) -> Result<Vec<T>> {
    if word as usize >= emb.words.rows() {
        return Err(Error::Range(format!(
            "word id {word} outside vocabulary of {}",
            emb.words.rows()
        )));
    }
    if topic as usize >= emb.topics.rows() {
        return Err(Error::Range(format!(
            "topic id {topic} not below {}",
            emb.topics.rows()
        )));
    }
    let mut v = Vec::with_capacity(2 * emb.dim());
    v.extend_from_slice(emb.words.row(word as usize));
    v.extend_from_slice(emb.topics.row(topic as usize));
    Ok(v)
}

/// Where document-matrix rows come from.
#[derive(Debug, Clone, Copy)]
pub enum RowSource<'a, T> {
    /// `word ⊕ topic` rows, 2D wide.
    Topical(&'a TopicalEmbeddings<T>),
    /// Plain word vectors (topics ignored), D wide.
    WordOnly(&'a Matrix<T>),
}

impl<T: Scalar> RowSource<'_, T> {
    pub fn width(&self) -> usize {
        match self {
            RowSource::Topical(e) => 2 * e.dim(),
            RowSource::WordOnly(m) => m.cols(),
        }
    }

    pub(crate) fn fill_row(&self, word: u32, topic: u32, out: &mut [T]) -> Result<()> {
        match self {
            RowSource::Topical(e) => {
                if word as usize >= e.words.rows() || topic as usize >= e.topics.rows() {
                    return Err(Error::Range(format!("token {word}:{topic} outside the embeddings")));
                }
                let d = e.dim();
                out[..d].copy_from_slice(e.words.row(word as usize));
                out[d..].copy_from_slice(e.topics.row(topic as usize));
            }
            RowSource::WordOnly(m) => {
                if word as usize >= m.rows() {
                    return Err(Error::Range(format!("word id {word} outside the embeddings")));
                }
                out.copy_from_slice(m.row(word as usize));
            }
        }
        Ok(())
    }
}

/// Stacks one row per tagged token, truncated or zero-padded to `pad_len`
/// rows.
pub fn encode_document_matrix<T: Scalar>(
    doc: &[(u32, u32)],
    source: RowSource<'_, T>,
    pad_len: usize,
) -> Result<Matrix<T>> {
    let mut m = Matrix::zeros(pad_len, source.width());
    for (r, &(w, t)) in doc.iter().take(pad_len).enumerate() {
        if w != PAD_ID {
            source.fill_row(w, t, m.row_mut(r))?;
        }
    }
    Ok(m)
}
