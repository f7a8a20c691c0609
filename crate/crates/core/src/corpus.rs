//! Labeled corpus loading, vocabulary construction and document encoding.
//!
//! Input corpora are pre-tokenized: one document per line, a label, a tab,
//! then space-separated tokens. Ids 0 and 1 are reserved for padding and
//! unknown tokens respectively; real tokens follow in descending frequency.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// A document as read from disk, before any vocabulary lookup.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawDocument {
    pub label: String,
    pub tokens: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LineFormat {
    pub label_delimiter: char,
    pub token_delimiter: char,
}

impl Default for LineFormat {
    fn default() -> Self {
        Self {
            label_delimiter: '\t',
            token_delimiter: ' ',
        }
    }
}

pub fn load_labeled_corpus(path: impl AsRef<Path>, format: LineFormat) -> Result<Vec<RawDocument>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_labeled_corpus(BufReader::new(file), format).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

/// Parses `label<TAB>tok tok ...` lines. Blank lines are skipped; line
/// numbers in errors are 1-based.
pub fn parse_labeled_corpus<R: BufRead>(reader: R, format: LineFormat) -> Result<Vec<RawDocument>> {
    let mut docs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<reader>", e))?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let (label, body) = line
            .split_once(format.label_delimiter)
            .ok_or_else(|| Error::MalformedLine {
                line: i + 1,
                reason: format!("no {:?} separating label from tokens", format.label_delimiter),
            })?;
        if label.is_empty() {
            return Err(Error::MalformedLine {
                line: i + 1,
                reason: "empty label".into(),
            });
        }
        let tokens = body
            .split(format.token_delimiter)
            .filter(|t| !t.is_empty())
            .map(str::to_owned)
            .collect();
        docs.push(RawDocument {
            label: label.to_owned(),
            tokens,
        });
    }
    if docs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Ok(docs)
}

/// One stopword per line; blank lines ignored.
pub fn load_stopwords(path: impl AsRef<Path>) -> Result<HashSet<String>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut set = HashSet::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let word = line.trim();
        if !word.is_empty() {
            set.insert(word.to_owned());
        }
    }
    Ok(set)
}

/// Token/id map. Id 0 is padding, id 1 is unknown, ids `2..len()` are real
/// tokens sorted by descending count with lexicographic tie-breaks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    counts: Vec<u64>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    /// Counts tokens after stopword removal and keeps the `max_vocab - 2`
    /// most frequent.
    pub fn build<'a, I>(docs: I, max_vocab: usize, stopwords: &HashSet<String>) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [String]>,
    {
        if max_vocab < 3 {
            return Err(Error::Config(format!(
                "max_vocab must be at least 3 (pad, unknown, one token), got {max_vocab}"
            )));
        }
        let mut freq: HashMap<&str, u64> = HashMap::new();
        for doc in docs {
            for tok in doc {
                let tok = tok.as_str();
                if stopwords.contains(tok) || tok == PAD_TOKEN || tok == UNK_TOKEN {
                    continue;
                }
                *freq.entry(tok).or_default() += 1;
            }
        }
        if freq.is_empty() {
            return Err(Error::EmptyVocabulary);
        }
        let mut ranked: Vec<(&str, u64)> = freq.into_iter().collect();
        ranked.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        ranked.truncate(max_vocab - 2);

        let mut tokens = vec![PAD_TOKEN.to_owned(), UNK_TOKEN.to_owned()];
        let mut counts = vec![0, 0];
        for (tok, c) in ranked {
            tokens.push(tok.to_owned());
            counts.push(c);
        }
        Self::from_parts(tokens, counts)
    }

    fn from_parts(tokens: Vec<String>, counts: Vec<u64>) -> Result<Self> {
        let index = tokens
            .iter()
            .enumerate()
            .skip(2)
            .map(|(i, t)| (t.clone(), i as u32))
            .collect::<HashMap<_, _>>();
        if index.len() != tokens.len().saturating_sub(2) {
            return Err(Error::Format("duplicate token in vocabulary".into()));
        }
        Ok(Self { tokens, counts, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    /// Never true for a built vocabulary; the special ids are always present.
    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Id of a real token; `None` for unknown strings and for the special
    /// token names themselves.
    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn id_or_unk(&self, token: &str) -> u32 {
        self.id(token).unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn count(&self, id: u32) -> u64 {
        self.counts.get(id as usize).copied().unwrap_or(0)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn is_special(id: u32) -> bool {
        id == PAD_ID || id == UNK_ID
    }

    /// Ids of real (non-special) tokens.
    pub fn real_ids(&self) -> std::ops::Range<u32> {
        2..self.tokens.len() as u32
    }

    /// Header line `V`, then `token<TAB>count` for every id in order.
    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", self.tokens.len())?;
        for (t, c) in self.tokens.iter().zip(&self.counts) {
            writeln!(w, "{t}\t{c}")?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Format("vocabulary file is empty".into()))?
            .map_err(|e| Error::io("<vocabulary>", e))?;
        let size: usize = header.trim().parse().map_err(|_| Error::MalformedLine {
            line: 1,
            reason: format!("expected vocabulary size, found {header:?}"),
        })?;
        let mut tokens = Vec::with_capacity(size);
        let mut counts = Vec::with_capacity(size);
        for (i, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::io("<vocabulary>", e))?;
            if line.is_empty() {
                continue;
            }
            let (tok, count) = line.rsplit_once('\t').ok_or_else(|| Error::MalformedLine {
                line: i + 2,
                reason: "expected token<TAB>count".into(),
            })?;
            let count: u64 = count.parse().map_err(|_| Error::MalformedLine {
                line: i + 2,
                reason: format!("bad count {count:?}"),
            })?;
            tokens.push(tok.to_owned());
            counts.push(count);
        }
        if tokens.len() != size {
            return Err(Error::Format(format!(
                "vocabulary header says {size} entries, found {}",
                tokens.len()
            )));
        }
        if size < 3 || tokens[0] != PAD_TOKEN || tokens[1] != UNK_TOKEN {
            return Err(Error::Format(
                "vocabulary must start with <pad> and <unk> and hold a real token".into(),
            ));
        }
        Self::from_parts(tokens, counts)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(BufReader::new(file))
    }
}

/// Maps tokens to ids and pads or truncates to exactly `pad_len` entries.
pub fn encode_document<S: AsRef<str>>(tokens: &[S], vocab: &Vocabulary, pad_len: usize) -> Vec<u32> {
    let mut ids: Vec<u32> = tokens
        .iter()
        .take(pad_len)
        .map(|t| vocab.id_or_unk(t.as_ref()))
        .collect();
    ids.resize(pad_len, PAD_ID);
    ids
}

/// Pads or truncates an already-encoded id sequence.
pub fn pad_ids(ids: &[u32], pad_len: usize) -> Vec<u32> {
    let mut out: Vec<u32> = ids.iter().take(pad_len).copied().collect();
    out.resize(pad_len, PAD_ID);
    out
}

/// Sorted, de-duplicated class names; a class id is its index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSet {
    names: Vec<String>,
}

impl LabelSet {
    pub fn from_documents(docs: &[RawDocument]) -> Self {
        let names: BTreeSet<&str> = docs.iter().map(|d| d.label.as_str()).collect();
        Self {
            names: names.into_iter().map(str::to_owned).collect(),
        }
    }

    pub fn from_names(mut names: Vec<String>) -> Self {
        names.sort();
        names.dedup();
        Self { names }
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.names.binary_search_by(|n| n.as_str().cmp(name)).ok()
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        self.names.get(id).map(String::as_str)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

/// A document reduced to class id and unpadded token ids (stopwords removed,
/// out-of-vocabulary tokens mapped to [`UNK_ID`]).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledDocument {
    pub label: usize,
    pub tokens: Vec<u32>,
}

pub fn encode_corpus(
    docs: &[RawDocument],
    vocab: &Vocabulary,
    labels: &LabelSet,
    stopwords: &HashSet<String>,
) -> Result<Vec<LabeledDocument>> {
    docs.iter()
        .enumerate()
        .map(|(i, d)| {
            let label = labels
                .id(&d.label)
                .ok_or_else(|| Error::Config(format!("document {i} has unknown label {:?}", d.label)))?;
            let tokens = d
                .tokens
                .iter()
                .filter(|t| !stopwords.contains(t.as_str()))
                .map(|t| vocab.id_or_unk(t))
                .collect();
            Ok(LabeledDocument { label, tokens })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitFractions {
    pub train: f64,
    pub test: f64,
    pub validation: f64,
}

impl SplitFractions {
    pub fn new(train: f64, test: f64, validation: f64) -> Result<Self> {
        let f = Self {
            train,
            test,
            validation,
        };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("train", self.train),
            ("test", self.test),
            ("validation", self.validation),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} fraction must be positive, got {v}")));
            }
        }
        let sum = self.train + self.test + self.validation;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split fractions sum to {sum}, not 1")));
        }
        Ok(())
    }
}

/// Document indices of each split part.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub validation: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusSplit {
    pub train: Vec<LabeledDocument>,
    pub test: Vec<LabeledDocument>,
    pub validation: Vec<LabeledDocument>,
}

fn by_class(labels: &[usize]) -> BTreeMap<usize, Vec<usize>> {
    let mut classes: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        classes.entry(l).or_default().push(i);
    }
    classes
}

/// Stratified three-way split of document indices. Each class is shuffled
/// independently and cut by rounded fractions; each part receives at least
/// one document of every class.
pub fn split_indices(labels: &[usize], fractions: SplitFractions, seed: u64) -> Result<SplitIndices> {
    fractions.validate()?;
    if labels.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = SplitIndices {
        train: Vec::new(),
        test: Vec::new(),
        validation: Vec::new(),
    };
    for (class, mut members) in by_class(labels) {
        let n = members.len();
        if n < 3 {
            return Err(Error::Stratification(format!(
                "class {class} has {n} documents, need at least 3 for a three-way split"
            )));
        }
        let mut test = ((n as f64 * fractions.test).round() as usize).max(1);
        let mut val = ((n as f64 * fractions.validation).round() as usize).max(1);
        while test + val >= n {
            if test >= val {
                test -= 1;
            } else {
                val -= 1;
            }
        }
        members.shuffle(&mut rng);
        out.test.extend_from_slice(&members[..test]);
        out.validation.extend_from_slice(&members[test..test + val]);
        out.train.extend_from_slice(&members[test + val..]);
    }
    out.train.shuffle(&mut rng);
    out.test.shuffle(&mut rng);
    out.validation.shuffle(&mut rng);
    Ok(out)
}

pub fn split_corpus(docs: Vec<LabeledDocument>, fractions: SplitFractions, seed: u64) -> Result<CorpusSplit> {
    let labels: Vec<usize> = docs.iter().map(|d| d.label).collect();
    let idx = split_indices(&labels, fractions, seed)?;
    let mut slots: Vec<Option<LabeledDocument>> = docs.into_iter().map(Some).collect();
    let mut take = |ids: &[usize]| -> Vec<LabeledDocument> {
        ids.iter()
            .map(|&i| slots[i].take().expect("indices are disjoint"))
            .collect()
    };
    Ok(CorpusSplit {
        train: take(&idx.train),
        test: take(&idx.test),
        validation: take(&idx.validation),
    })
}

/// Stratified two-way split used for classifier resampling. Classes with a
/// single document go entirely to the training side.
pub fn stratified_holdout<R: Rng>(labels: &[usize], test_fraction: f64, rng: &mut R) -> (Vec<usize>, Vec<usize>) {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (_, mut members) in by_class(labels) {
        members.shuffle(rng);
        let n = members.len();
        let k = if n < 2 {
            0
        } else {
            ((n as f64 * test_fraction).round() as usize).clamp(1, n - 1)
        };
        test.extend_from_slice(&members[..k]);
        train.extend_from_slice(&members[k..]);
    }
    train.shuffle(rng);
    test.shuffle(rng);
    (train, test)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_owned).collect()
    }

    #[test]
    fn parses_label_and_tokens() {
        let docs = parse_labeled_corpus("sports\tball game win\n".as_bytes(), LineFormat::default()).unwrap();
        assert_eq!(
            docs,
            vec![RawDocument {
                label: "sports".into(),
                tokens: toks("ball game win")
            }]
        );
    }

    #[test]
    fn missing_tab_names_line() {
        let err = parse_labeled_corpus("a\tx y\n\nno tab here\n".as_bytes(), LineFormat::default()).unwrap_err();
        match err {
            Error::MalformedLine { line, .. } => assert_eq!(line, 3),
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn empty_input_is_empty_corpus() {
        let err = parse_labeled_corpus("\n\n".as_bytes(), LineFormat::default()).unwrap_err();
        assert!(matches!(err, Error::EmptyCorpus));
    }

    #[test]
    fn preserves_file_order() {
        let docs = parse_labeled_corpus("a\t1\nb\t2\nc\t3\n".as_bytes(), LineFormat::default()).unwrap();
        let labels: Vec<_> = docs.iter().map(|d| d.label.as_str()).collect();
        assert_eq!(labels, ["a", "b", "c"]);
    }

    #[test]
    fn vocabulary_keeps_most_frequent() {
        let docs = [toks("a a a"), toks("b b"), toks("c")];
        let v = Vocabulary::build(docs.iter().map(Vec::as_slice), 4, &HashSet::new()).unwrap();
        assert_eq!(v.tokens(), ["<pad>", "<unk>", "a", "b"]);
        assert_eq!(v.counts(), [0, 0, 3, 2]);
        assert_eq!(v.id_or_unk("c"), UNK_ID);
    }

    #[test]
    fn all_stopwords_is_empty_vocabulary() {
        let docs = [toks("a")];
        let stop: HashSet<String> = ["a".to_owned()].into();
        let err = Vocabulary::build(docs.iter().map(Vec::as_slice), 10, &stop).unwrap_err();
        assert!(matches!(err, Error::EmptyVocabulary));
    }

    #[test]
    fn large_cap_keeps_everything() {
        let docs = [toks("x y z y")];
        let v = Vocabulary::build(docs.iter().map(Vec::as_slice), 100, &HashSet::new()).unwrap();
        assert_eq!(v.len(), 5);
        for t in ["x", "y", "z"] {
            assert_ne!(v.id_or_unk(t), UNK_ID);
        }
    }

    #[test]
    fn ties_break_lexicographically() {
        let docs = [toks("q p r p q r")];
        let v = Vocabulary::build(docs.iter().map(Vec::as_slice), 10, &HashSet::new()).unwrap();
        assert_eq!(&v.tokens()[2..], ["p", "q", "r"]);
    }

    #[test]
    fn special_names_are_not_real_tokens() {
        let docs = [toks("<pad> <unk> w")];
        let v = Vocabulary::build(docs.iter().map(Vec::as_slice), 10, &HashSet::new()).unwrap();
        assert_eq!(v.len(), 3);
        assert_eq!(encode_document(&["<pad>", "w"], &v, 2), vec![UNK_ID, 2]);
    }

    #[test]
    fn max_vocab_below_three_rejected() {
        let docs = [toks("a")];
        assert!(matches!(
            Vocabulary::build(docs.iter().map(Vec::as_slice), 2, &HashSet::new()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn encode_pads_and_truncates() {
        let docs = [toks("a b")];
        let v = Vocabulary::build(docs.iter().map(Vec::as_slice), 10, &HashSet::new()).unwrap();
        let (a, b) = (v.id("a").unwrap(), v.id("b").unwrap());
        assert_eq!(encode_document(&["a", "b"], &v, 4), vec![a, b, PAD_ID, PAD_ID]);
        assert_eq!(encode_document(&["a", "zzz"], &v, 2), vec![a, UNK_ID]);

        let long: Vec<String> = (0..150)
            .map(|i| if i % 2 == 0 { "a" } else { "b" }.to_owned())
            .collect();
        let enc = encode_document(&long, &v, 100);
        assert_eq!(enc.len(), 100);
        assert_eq!(enc[99], b);
    }

    #[test]
    fn vocabulary_file_round_trip() {
        let docs = [toks("a a b c")];
        let v = Vocabulary::build(docs.iter().map(Vec::as_slice), 10, &HashSet::new()).unwrap();
        let mut buf = Vec::new();
        v.write_to(&mut buf).unwrap();
        assert!(buf.starts_with(b"5\n<pad>\t0\n<unk>\t0\na\t2\n"));
        let back = Vocabulary::read_from(buf.as_slice()).unwrap();
        assert_eq!(back, v);
    }

    #[test]
    fn truncated_vocabulary_file_rejected() {
        assert!(Vocabulary::read_from("4\n<pad>\t0\n<unk>\t0\na\t1\n".as_bytes()).is_err());
    }

    fn synthetic_labels(per_class: &[usize]) -> Vec<usize> {
        per_class
            .iter()
            .enumerate()
            .flat_map(|(c, &n)| std::iter::repeat_n(c, n))
            .collect()
    }

    #[test]
    fn split_matches_reference_proportions() {
        let labels = synthetic_labels(&[6500; 10]);
        let f = SplitFractions::new(50000.0 / 65000.0, 10000.0 / 65000.0, 5000.0 / 65000.0).unwrap();
        let s = split_indices(&labels, f, 7).unwrap();
        assert_eq!((s.train.len(), s.test.len(), s.validation.len()), (50000, 10000, 5000));
        let mut all: Vec<usize> = s.train.iter().chain(&s.test).chain(&s.validation).copied().collect();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), labels.len());
    }

    #[test]
    fn zero_fraction_rejected() {
        assert!(SplitFractions::new(1.0, 0.0, 0.0).is_err());
        assert!(SplitFractions::new(0.5, 0.3, 0.3).is_err());
    }

    #[test]
    fn split_is_seed_deterministic() {
        let labels = synthetic_labels(&[20, 13, 7]);
        let f = SplitFractions::new(0.7, 0.2, 0.1).unwrap();
        assert_eq!(
            split_indices(&labels, f, 3).unwrap(),
            split_indices(&labels, f, 3).unwrap()
        );
        assert_ne!(
            split_indices(&labels, f, 3).unwrap(),
            split_indices(&labels, f, 4).unwrap()
        );
    }

    #[test]
    fn tiny_class_fails_stratification() {
        let labels = synthetic_labels(&[10, 2]);
        let f = SplitFractions::new(0.8, 0.1, 0.1).unwrap();
        assert!(matches!(split_indices(&labels, f, 0), Err(Error::Stratification(_))));
    }

    #[test]
    fn split_corpus_moves_documents() {
        let docs: Vec<LabeledDocument> = (0..30)
            .map(|i| LabeledDocument {
                label: i % 3,
                tokens: vec![i as u32],
            })
            .collect();
        let f = SplitFractions::new(0.6, 0.2, 0.2).unwrap();
        let s = split_corpus(docs, f, 1).unwrap();
        assert_eq!(s.train.len() + s.test.len() + s.validation.len(), 30);
        let train_classes: BTreeSet<_> = s.train.iter().map(|d| d.label).collect();
        assert!(s.test.iter().all(|d| train_classes.contains(&d.label)));
    }

    #[test]
    fn holdout_keeps_singletons_in_train() {
        let labels = vec![0, 0, 0, 0, 1];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (train, test) = stratified_holdout(&labels, 0.5, &mut rng);
        assert!(train.contains(&4));
        assert_eq!(test.len(), 2);
    }
}
