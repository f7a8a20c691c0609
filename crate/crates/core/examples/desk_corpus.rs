//! Writes the bundled four-class desk corpus and its stopword list.
//!
//! Each document mixes shared background words, class words that leak into
//! other classes, and short phrases built from a shared phrase vocabulary.
//! The phrases of different classes use overlapping words in different
//! orders, so part of the class signal is only visible in word order.
//!
//! Usage: `cargo run --release -p textrep --example desk_corpus -- <out-dir>`

use std::fs;
use std::io::Write;
use std::path::PathBuf;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CLASSES: [&str; 4] = ["finance", "health", "sports", "travel"];
const DOCS_PER_CLASS: usize = 500;
const SEED: u64 = 20240917;

const STOPWORDS: [&str; 12] = [
    "the", "a", "of", "and", "to", "in", "on", "for", "with", "at", "by", "from",
];

const BACKGROUND: &str = "report today people new time week year day group local city official \
    public plan change number part place case point world area second early late small large \
    recent major local news morning evening month season state country team member office \
    program level issue result reason term side kind head house service friend story idea \
    night hour line end course moment family price control power order study job book word \
    community school question experience water room mother system market health game trip";

const CLASS_WORDS: [&str; 4] = [
    "stock bond shares investor dividend earnings bank lender equity fund portfolio yield \
     inflation currency trader broker merger revenue profit loss quarter forecast budget debt credit",
    "doctor patient clinic hospital nurse vaccine symptom therapy diet fitness sleep protein \
     virus infection diagnosis surgery medicine dose trial cancer heart blood brain immune",
    "coach player league match goal striker referee stadium tournament score champion season \
     defender keeper final playoff medal sprint rally racket innings pitch injury transfer squad",
    "flight hotel passport luggage airport beach island cruise resort tourist guide museum \
     ticket train visa border coast mountain hiking journey booking destination ferry hostel map",
];

/// Words shared by every class's phrases.
const PHRASE_WORDS: [&str; 12] = [
    "sharp", "rise", "fall", "after", "before", "strong", "weak", "gain", "drop", "slow", "fast", "turn",
];

/// Phrase templates as indices into `PHRASE_WORDS`; each class gets three
/// and every phrase's words also appear in another class's phrases.
const PHRASES: [[[usize; 3]; 3]; 4] = [
    [[0, 1, 3], [5, 6, 7], [8, 9, 10]],
    [[3, 1, 0], [7, 6, 5], [10, 9, 8]],
    [[1, 0, 4], [6, 5, 11], [9, 8, 2]],
    [[4, 0, 1], [11, 5, 6], [2, 8, 9]],
];

fn words(s: &str) -> Vec<&str> {
    s.split_whitespace().collect()
}

/// Zipf-like pick: earlier entries are more frequent.
fn zipf<'a, R: Rng>(list: &[&'a str], rng: &mut R) -> &'a str {
    let n = list.len() as f64;
    let u: f64 = rng.random();
    let i = ((n + 1.0).powf(u) - 1.0) as usize;
    list[i.min(list.len() - 1)]
}

fn document<R: Rng>(class: usize, rng: &mut R) -> Vec<String> {
    let background = words(BACKGROUND);
    let class_words: Vec<Vec<&str>> = CLASS_WORDS.iter().map(|s| words(s)).collect();
    let len = rng.random_range(40..=80);
    let mut out: Vec<String> = Vec::with_capacity(len + 6);
    while out.len() < len {
        let u: f64 = rng.random();
        if u < 0.66 {
            out.push(zipf(&background, rng).to_owned());
        } else if u < 0.74 {
            out.push(STOPWORDS.choose(rng).unwrap().to_string());
        } else if u < 0.86 {
            // class words come from a random class 55% of the time
            let source = if rng.random_bool(0.45) {
                class
            } else {
                rng.random_range(0..CLASSES.len())
            };
            out.push(zipf(&class_words[source], rng).to_owned());
        } else {
            let phrase = PHRASES[class].choose(rng).unwrap();
            out.extend(phrase.iter().map(|&i| PHRASE_WORDS[i].to_owned()));
        }
    }
    out
}

fn main() -> std::io::Result<()> {
    let dir: PathBuf = std::env::args().nth(1).unwrap_or_else(|| "data/desk".into()).into();
    fs::create_dir_all(&dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut docs: Vec<(usize, Vec<String>)> = Vec::new();
    for class in 0..CLASSES.len() {
        for _ in 0..DOCS_PER_CLASS {
            docs.push((class, document(class, &mut rng)));
        }
    }
    // interleave classes deterministically
    for i in (1..docs.len()).rev() {
        let j = rng.random_range(0..=i);
        docs.swap(i, j);
    }
    let mut f = fs::File::create(dir.join("corpus.tsv"))?;
    for (class, tokens) in &docs {
        writeln!(f, "{}\t{}", CLASSES[*class], tokens.join(" "))?;
    }
    let mut s = fs::File::create(dir.join("stopwords.txt"))?;
    for w in STOPWORDS {
        writeln!(s, "{w}")?;
    }
    Ok(())
}
