//! CBOW and skip-gram word embeddings trained with negative sampling.
//!
//! Input vectors (`EmbeddingMatrix::input`) are the word embeddings; the
//! output matrix holds the per-word parameters that the input side is
//! scored against. The padding row is zero and never touched.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Vocabulary, PAD_ID};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::{axpy, cosine, dot, sigmoid, softplus, Scalar};

/// Cumulative distribution over word ids, proportional to `count^power`.
/// Padding and unknown ids always have probability zero.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingTable {
    cdf: Vec<f64>,
    support: usize,
}

impl SamplingTable {
    pub fn new(vocab: &Vocabulary, power: f64) -> Result<Self> {
        Self::from_counts(vocab.counts(), power)
    }

    /// `counts[0]` and `counts[1]` (pad, unknown) are ignored.
    pub fn from_counts(counts: &[u64], power: f64) -> Result<Self> {
        if !power.is_finite() {
            return Err(Error::Config(format!("sampling power must be finite, got {power}")));
        }
        let weights: Vec<f64> = counts
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                if Vocabulary::is_special(i as u32) || c == 0 {
                    0.0
                } else {
                    (c as f64).powf(power)
                }
            })
            .collect();
        let total: f64 = weights.iter().sum();
        if total <= 0.0 || !total.is_finite() {
            return Err(Error::EmptyVocabulary);
        }
        let mut acc = 0.0;
        let mut cdf: Vec<f64> = weights
            .iter()
            .map(|w| {
                acc += w / total;
                acc
            })
            .collect();
        // Pin the last positive entry (and everything after) to exactly 1.
        let last = weights.iter().rposition(|&w| w > 0.0).expect("total > 0");
        for c in &mut cdf[last..] {
            *c = 1.0;
        }
        Ok(Self {
            cdf,
            support: weights.iter().filter(|&&w| w > 0.0).count(),
        })
    }

    pub fn len(&self) -> usize {
        self.cdf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cdf.is_empty()
    }

    pub fn probability(&self, id: u32) -> f64 {
        let i = id as usize;
        match i {
            0 => self.cdf[0],
            _ if i < self.cdf.len() => self.cdf[i] - self.cdf[i - 1],
            _ => 0.0,
        }
    }

    /// Number of ids with non-zero probability.
    pub fn support(&self) -> usize {
        self.support
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        let u: f64 = rng.random();
        self.cdf.partition_point(|&c| c <= u) as u32
    }

    /// Fills `out` with `n` negatives, rejecting `target`. Produces nothing
    /// when `target` is the only word that can be drawn.
    pub fn draw_negatives<R: Rng + ?Sized>(&self, rng: &mut R, target: u32, n: usize, out: &mut Vec<u32>) {
        out.clear();
        if self.support <= 1 && self.probability(target) > 0.0 {
            return;
        }
        while out.len() < n {
            let id = self.sample(rng);
            if id != target {
                out.push(id);
            }
        }
    }
}

pub fn build_sampling_table(vocab: &Vocabulary, power: f64) -> Result<SamplingTable> {
    SamplingTable::new(vocab, power)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix<T> {
    pub input: Matrix<T>,
    pub output: Matrix<T>,
}

impl<T: Scalar> EmbeddingMatrix<T> {
    /// Input rows uniform in `[-0.5/dim, 0.5/dim]` (padding row zero),
    /// output rows zero.
    pub fn initialize<R: Rng + ?Sized>(vocab_len: usize, dim: usize, rng: &mut R) -> Self {
        Self {
            input: uniform_rows(vocab_len, dim, rng, true),
            output: Matrix::zeros(vocab_len, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.input.cols()
    }

    pub fn vocab_len(&self) -> usize {
        self.input.rows()
    }
}

pub(crate) fn uniform_rows<T: Scalar, R: Rng + ?Sized>(
    rows: usize,
    dim: usize,
    rng: &mut R,
    zero_pad: bool,
) -> Matrix<T> {
    let mut m = Matrix::zeros(rows, dim);
    let half = 0.5 / dim as f64;
    for r in 0..rows {
        if zero_pad && r == PAD_ID as usize {
            continue;
        }
        for x in m.row_mut(r) {
            *x = T::of((rng.random::<f64>() * 2.0 - 1.0) * half);
        }
    }
    m
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Architecture {
    Cbow,
    SkipGram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub dim: usize,
    /// Context half-width in tokens.
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Exponent of the negative-sampling distribution.
    pub sampling_power: f64,
    /// Draw each window's half-width uniformly from `1..=window`.
    pub dynamic_window: bool,
    /// Frequent-word subsampling threshold; `None` disables subsampling.
    pub subsample: Option<f64>,
    /// More than one thread switches to lock-free shared updates, which
    /// gives up run-to-run reproducibility.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dim: 128,
            window: 5,
            negatives: 5,
            epochs: 30,
            learning_rate: 0.025,
            seed: 1,
            sampling_power: 0.75,
            dynamic_window: false,
            subsample: None,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_owned()));
        if self.dim == 0 {
            return bad("dim must be at least 1");
        }
        if self.window == 0 {
            return bad("window must be at least 1");
        }
        if self.negatives == 0 {
            return bad("negatives must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if let Some(t) = self.subsample {
            if !(t > 0.0) {
                return bad("subsample threshold must be positive");
            }
        }
        if self.threads == 0 {
            return bad("threads must be at least 1");
        }
        Ok(())
    }
}

fn check_id(id: u32, len: usize, what: &str) -> Result<()> {
    if (id as usize) < len {
        Ok(())
    } else {
        Err(Error::Range(format!("{what} id {id} outside vocabulary of {len}")))
    }
}

/// One negative-sampling step for a single input vector `v` against the
/// rows of `output` (flat, `dim` columns). Output rows are updated in place;
/// the input-side gradient step is accumulated into `input_step`. Returns
/// the step's negative log-likelihood.
pub(crate) fn ns_step<T: Scalar>(
    v: &[T],
    input_step: &mut [T],
    output: &mut [T],
    positive: u32,
    negatives: &[u32],
    lr: T,
) -> Result<T> {
    let dim = v.len();
    let mut loss = T::zero();
    let targets = std::iter::once((positive, T::one())).chain(negatives.iter().map(|&n| (n, T::zero())));
    for (target, label) in targets {
        let row = &mut output[target as usize * dim..(target as usize + 1) * dim];
        let score = dot(v, row);
        if !score.is_finite() {
            return Err(Error::NumericOverflow(format!(
                "non-finite score {score} against word {target}"
            )));
        }
        loss += if label == T::one() {
            softplus(-score)
        } else {
            softplus(score)
        };
        let g = lr * (label - sigmoid(score));
        axpy(g, row, input_step);
        axpy(g, v, row);
    }
    Ok(loss)
}

/// Skip-gram step: `center` predicts `positive` against `negatives`.
pub fn sgns_update<T: Scalar>(
    center: u32,
    positive: u32,
    negatives: &[u32],
    emb: &mut EmbeddingMatrix<T>,
    lr: T,
) -> Result<T> {
    let v_len = emb.vocab_len();
    if center == PAD_ID {
        return Err(Error::Domain("padding cannot be a center word".into()));
    }
    check_id(center, v_len, "center")?;
    check_id(positive, v_len, "positive")?;
    for &n in negatives {
        check_id(n, v_len, "negative")?;
    }
    let v = emb.input.row(center as usize).to_vec();
    let mut step = vec![T::zero(); v.len()];
    let loss = ns_step(&v, &mut step, emb.output.as_mut_slice(), positive, negatives, lr)?;
    axpy(T::one(), &step, emb.input.row_mut(center as usize));
    Ok(loss)
}

/// CBOW step: the sum of the context vectors predicts `center`. Every
/// context word receives the full input-side step. Padding entries in
/// `context` are ignored; an empty context is a zero-loss no-op.
pub fn cbow_update<T: Scalar>(
    context: &[u32],
    center: u32,
    negatives: &[u32],
    emb: &mut EmbeddingMatrix<T>,
    lr: T,
) -> Result<T> {
    let v_len = emb.vocab_len();
    check_id(center, v_len, "center")?;
    for &n in negatives.iter().chain(context) {
        check_id(n, v_len, "word")?;
    }
    let dim = emb.dim();
    let mut sum = vec![T::zero(); dim];
    let mut any = false;
    for &c in context.iter().filter(|&&c| c != PAD_ID) {
        axpy(T::one(), emb.input.row(c as usize), &mut sum);
        any = true;
    }
    if !any {
        return Ok(T::zero());
    }
    let mut step = vec![T::zero(); dim];
    let loss = ns_step(&sum, &mut step, emb.output.as_mut_slice(), center, negatives, lr)?;
    for &c in context.iter().filter(|&&c| c != PAD_ID) {
        axpy(T::one(), &step, emb.input.row_mut(c as usize));
    }
    Ok(loss)
}

/// Mutable parameter storage seen by the training loop. Slices are flat
/// row-major with `dim` columns.
pub(crate) struct Params<'a, T> {
    pub input: &'a mut [T],
    pub output: &'a mut [T],
    /// Topic vectors, present only for topical training.
    pub topics: Option<&'a mut [T]>,
    pub freeze_topics: bool,
    pub dim: usize,
}

/// Linearly decaying learning rate shared by all workers.
pub(crate) struct Schedule {
    initial: f64,
    total: u64,
    processed: AtomicU64,
}

impl Schedule {
    pub fn new(initial: f64, total: u64) -> Self {
        Self {
            initial,
            total: total.max(1),
            processed: AtomicU64::new(0),
        }
    }

    fn advance(&self, n: u64) {
        self.processed.fetch_add(n, Ordering::Relaxed);
    }

    fn rate(&self) -> f64 {
        let done = self.processed.load(Ordering::Relaxed) as f64 / self.total as f64;
        self.initial * (1.0 - done).max(1e-4)
    }
}

/// A document for the window walker: word ids plus optional per-token topics.
pub(crate) struct WalkDoc<'a> {
    pub words: &'a [u32],
    pub topics: Option<&'a [u32]>,
}

pub(crate) struct Walker<'a> {
    pub arch: Architecture,
    pub config: &'a TrainConfig,
    pub table: &'a SamplingTable,
    /// Per-id probability of keeping a token when subsampling is on.
    pub keep: Option<&'a [f64]>,
}

impl Walker<'_> {
    /// One pass over `docs`. Returns (summed loss, number of scored pairs).
    pub fn pass<T: Scalar, R: Rng>(
        &self,
        docs: &[WalkDoc<'_>],
        params: &mut Params<'_, T>,
        schedule: &Schedule,
        rng: &mut R,
    ) -> Result<(f64, u64)> {
        let dim = params.dim;
        let mut loss = 0.0;
        let mut pairs = 0u64;
        let mut negs = Vec::with_capacity(self.config.negatives);
        let mut step = vec![T::zero(); dim];
        let mut sum = vec![T::zero(); dim];
        let mut positions: Vec<usize> = Vec::new();

        for doc in docs {
            positions.clear();
            for (i, &w) in doc.words.iter().enumerate() {
                if w == PAD_ID {
                    continue;
                }
                if let Some(keep) = self.keep {
                    let p = keep.get(w as usize).copied().unwrap_or(1.0);
                    if p < 1.0 && rng.random::<f64>() >= p {
                        continue;
                    }
                }
                positions.push(i);
            }
            let n = positions.len();
            for (pi, &i) in positions.iter().enumerate() {
                let lr = T::of(schedule.rate());
                schedule.advance(1);
                let b = if self.config.dynamic_window {
                    rng.random_range(1..=self.config.window)
                } else {
                    self.config.window
                };
                let lo = pi.saturating_sub(b);
                let hi = (pi + b + 1).min(n);
                let center = doc.words[i];
                match self.arch {
                    Architecture::SkipGram => {
                        for pj in (lo..hi).filter(|&pj| pj != pi) {
                            let target = doc.words[positions[pj]];
                            self.table.draw_negatives(rng, target, self.config.negatives, &mut negs);

                            let c = center as usize;
                            let v = params.input[c * dim..(c + 1) * dim].to_vec();
                            step.iter_mut().for_each(|x| *x = T::zero());
                            loss += ns_step(&v, &mut step, params.output, target, &negs, lr)?.as_f64();
                            axpy(T::one(), &step, &mut params.input[c * dim..(c + 1) * dim]);
                            pairs += 1;

                            if let (Some(topics), Some(doc_topics)) = (params.topics.as_deref_mut(), doc.topics) {
                                let z = doc_topics[i] as usize;
                                let tv = topics[z * dim..(z + 1) * dim].to_vec();
                                step.iter_mut().for_each(|x| *x = T::zero());
                                ns_step(&tv, &mut step, params.output, target, &negs, lr)?;
                                if !params.freeze_topics {
                                    axpy(T::one(), &step, &mut topics[z * dim..(z + 1) * dim]);
                                }
                            }
                        }
                    }
                    Architecture::Cbow => {
                        sum.iter_mut().for_each(|x| *x = T::zero());
                        let mut any = false;
                        for pj in (lo..hi).filter(|&pj| pj != pi) {
                            let c = doc.words[positions[pj]] as usize;
                            axpy(T::one(), &params.input[c * dim..(c + 1) * dim], &mut sum);
                            any = true;
                        }
                        if !any {
                            continue;
                        }
                        self.table.draw_negatives(rng, center, self.config.negatives, &mut negs);
                        step.iter_mut().for_each(|x| *x = T::zero());
                        loss += ns_step(&sum, &mut step, params.output, center, &negs, lr)?.as_f64();
                        for pj in (lo..hi).filter(|&pj| pj != pi) {
                            let c = doc.words[positions[pj]] as usize;
                            axpy(T::one(), &step, &mut params.input[c * dim..(c + 1) * dim]);
                        }
                        pairs += 1;
                    }
                }
            }
            // Tokens dropped by subsampling still count toward the schedule.
            schedule.advance((doc.words.iter().filter(|&&w| w != PAD_ID).count() - n) as u64);
        }
        Ok((loss, pairs))
    }
}

pub(crate) fn keep_probabilities(vocab_counts: &[u64], threshold: f64) -> Vec<f64> {
    let total: u64 = vocab_counts.iter().sum();
    vocab_counts
        .iter()
        .map(|&c| {
            if c == 0 || total == 0 {
                return 1.0;
            }
            let f = c as f64 / total as f64;
            ((f / threshold).sqrt() + 1.0) * threshold / f
        })
        .collect()
}

/// Raw pointers to the shared matrices for lock-free multi-threaded
/// training. Concurrent writes to the same row are tolerated: updates are
/// small and sparse, and the lost-update rate is negligible in practice.
#[derive(Clone, Copy)]
pub(crate) struct SharedParams<T> {
    input: (*mut T, usize),
    output: (*mut T, usize),
    topics: Option<(*mut T, usize)>,
    freeze_topics: bool,
    dim: usize,
}

unsafe impl<T: Send> Send for SharedParams<T> {}
unsafe impl<T: Send> Sync for SharedParams<T> {}

impl<T> SharedParams<T> {
    pub fn new(p: &mut Params<'_, T>) -> Self {
        Self {
            input: (p.input.as_mut_ptr(), p.input.len()),
            output: (p.output.as_mut_ptr(), p.output.len()),
            topics: p.topics.as_deref_mut().map(|t| (t.as_mut_ptr(), t.len())),
            freeze_topics: p.freeze_topics,
            dim: p.dim,
        }
    }

    /// # Safety
    /// The backing storage must outlive the returned view, and callers must
    /// accept racy (non-atomic) element updates from other threads.
    pub unsafe fn view<'a>(self) -> Params<'a, T> {
        Params {
            input: std::slice::from_raw_parts_mut(self.input.0, self.input.1),
            output: std::slice::from_raw_parts_mut(self.output.0, self.output.1),
            topics: self.topics.map(|(p, n)| std::slice::from_raw_parts_mut(p, n)),
            freeze_topics: self.freeze_topics,
            dim: self.dim,
        }
    }
}

/// Runs `config.epochs` passes. Returns the mean loss per scored pair for
/// each epoch.
pub(crate) fn run_epochs<T: Scalar>(
    walker: &Walker<'_>,
    docs: &[WalkDoc<'_>],
    params: &mut Params<'_, T>,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    let config = walker.config;
    let tokens: u64 = docs
        .iter()
        .map(|d| d.words.iter().filter(|&&w| w != PAD_ID).count() as u64)
        .sum();
    let schedule = Schedule::new(config.learning_rate, tokens * config.epochs as u64);
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let (loss, pairs) = if config.threads <= 1 {
            walker.pass(docs, params, &schedule, rng)?
        } else {
            let shared = SharedParams::new(params);
            let chunk = docs.len().div_ceil(config.threads).max(1);
            let seeds: Vec<u64> = (0..config.threads).map(|_| rng.random()).collect();
            let results: Vec<Result<(f64, u64)>> = std::thread::scope(|s| {
                let handles: Vec<_> = docs
                    .chunks(chunk)
                    .zip(&seeds)
                    .map(|(shard, &seed)| {
                        let schedule = &schedule;
                        s.spawn(move || {
                            // SAFETY: `params` outlives the scope; races are accepted in this mode.
                            let mut view = unsafe { shared.view() };
                            let mut rng = ChaCha8Rng::seed_from_u64(seed);
                            walker.pass(shard, &mut view, schedule, &mut rng)
                        })
                    })
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("worker panicked"))
                    .collect()
            });
            let mut total = (0.0, 0);
            for r in results {
                let (l, p) = r?;
                total.0 += l;
                total.1 += p;
            }
            total
        };
        let mean = if pairs == 0 { 0.0 } else { loss / pairs as f64 };
        if !mean.is_finite() {
            return Err(Error::NumericOverflow(format!("epoch {epoch} loss is {mean}")));
        }
        history.push(mean);
    }
    Ok(history)
}

/// Trains embeddings over encoded documents (padding ignored). Returns
/// the matrices and the mean per-pair loss of each epoch.
pub fn train_with_log<T: Scalar>(
    docs: &[Vec<u32>],
    vocab: &Vocabulary,
    arch: Architecture,
    config: &TrainConfig,
) -> Result<(EmbeddingMatrix<T>, Vec<f64>)> {
    config.validate()?;
    if docs.iter().all(|d| d.iter().all(|&w| w == PAD_ID)) {
        return Err(Error::EmptyCorpus);
    }
    let v_len = vocab.len();
    for d in docs {
        for &w in d {
            check_id(w, v_len, "corpus")?;
        }
    }
    let table = SamplingTable::new(vocab, config.sampling_power)?;
    let keep = config.subsample.map(|t| keep_probabilities(vocab.counts(), t));
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut emb = EmbeddingMatrix::initialize(v_len, config.dim, &mut rng);
    let walker = Walker {
        arch,
        config,
        table: &table,
        keep: keep.as_deref(),
    };
    let walk: Vec<WalkDoc<'_>> = docs.iter().map(|d| WalkDoc { words: d, topics: None }).collect();
    let EmbeddingMatrix { input, output } = &mut emb;
    let mut params = Params {
        input: input.as_mut_slice(),
        output: output.as_mut_slice(),
        topics: None,
        freeze_topics: false,
        dim: config.dim,
    };
    let history = run_epochs(&walker, &walk, &mut params, &mut rng)?;
    Ok((emb, history))
}

pub fn train<T: Scalar>(
    docs: &[Vec<u32>],
    vocab: &Vocabulary,
    arch: Architecture,
    config: &TrainConfig,
) -> Result<EmbeddingMatrix<T>> {
    train_with_log(docs, vocab, arch, config).map(|(emb, _)| emb)
}

/// Mean of the non-padding rows; the zero vector for an all-padding document.
pub fn average_document_vector<T: Scalar>(doc: &[u32], embeddings: &Matrix<T>) -> Vec<T> {
    let mut acc = vec![T::zero(); embeddings.cols()];
    let mut n = 0usize;
    for &w in doc.iter().filter(|&&w| w != PAD_ID) {
        axpy(T::one(), embeddings.row(w as usize), &mut acc);
        n += 1;
    }
    if n > 0 {
        let inv = T::one() / T::of(n as f64);
        acc.iter_mut().for_each(|x| *x *= inv);
    }
    acc
}

/// Stacks embedding rows for a document, padded or truncated to `pad_len`
/// rows. Padding rows are zero.
pub fn document_matrix<T: Scalar>(doc: &[u32], embeddings: &Matrix<T>, pad_len: usize) -> Matrix<T> {
    let mut m = Matrix::zeros(pad_len, embeddings.cols());
    for (r, &w) in doc.iter().take(pad_len).enumerate() {
        if w != PAD_ID {
            m.row_mut(r).copy_from_slice(embeddings.row(w as usize));
        }
    }
    m
}

/// Ranks rows of `candidates` by cosine similarity to `query`. Zero-norm
/// rows rank last with similarity 0; equal scores keep ascending id order.
pub fn nearest_to_vector<T: Scalar>(query: &[T], candidates: &Matrix<T>, k: usize, exclude: &[u32]) -> Vec<(u32, T)> {
    let mut scored: Vec<(u32, T, bool)> = candidates
        .iter_rows()
        .enumerate()
        .filter(|(i, _)| !exclude.contains(&(*i as u32)))
        .map(|(i, row)| {
            let zero = row.iter().all(|x| *x == T::zero());
            (i as u32, if zero { T::zero() } else { cosine(query, row) }, zero)
        })
        .collect();
    scored.sort_by(|a, b| {
        a.2.cmp(&b.2)
            .then_with(|| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal))
            .then_with(|| a.0.cmp(&b.0))
    });
    scored.truncate(k);
    scored.into_iter().map(|(i, s, _)| (i, s)).collect()
}

pub fn nearest_neighbors<T: Scalar>(query: u32, embeddings: &Matrix<T>, k: usize) -> Result<Vec<(u32, T)>> {
    check_id(query, embeddings.rows(), "query")?;
    if k >= embeddings.rows() {
        return Err(Error::Config(format!(
            "k = {k} must be smaller than the vocabulary ({})",
            embeddings.rows()
        )));
    }
    Ok(nearest_to_vector(
        embeddings.row(query as usize),
        embeddings,
        k,
        &[query],
    ))
}
