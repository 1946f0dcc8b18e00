//! Tokenization, vocabulary construction, AG News CSV loading, and a
//! deterministic synthetic dataset generator.
//!
//! Tokens are lowercased, split on Unicode whitespace, and stripped of
//! leading/trailing sentence punctuation (`. , ; : ! ? ' " ( ) [ ] { }`).
//! Symbols that carry meaning in news text (`%`, `$`, `#`, ...) are kept,
//! so "2%" survives while "world!" becomes "world".

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;
use thiserror::Error;

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

const STRIP_CHARS: &[char] = &[
    '.', ',', ';', ':', '!', '?', '\'', '"', '(', ')', '[', ']', '{', '}',
];

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed row at line {line}: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error("class {class} out of range 1..=4 at line {line}")]
    ClassOutOfRange { class: String, line: u64 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("dataset is empty")]
    Empty,
}

/// Token-to-id map with dense ids. Id 0 is PAD, id 1 is UNK; remaining
/// tokens are ordered by (frequency desc, lexicographic asc) so identical
/// corpora always produce identical maps.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    token_to_id: HashMap<String, u32>,
    id_to_token: Vec<String>,
}

impl Vocab {
    /// Counts tokens over the corpus and keeps the most frequent ones up to
    /// `max_size` total entries (PAD and UNK included), dropping tokens seen
    /// fewer than `min_freq` times.
    pub fn build<'a, I>(corpus: I, max_size: usize, min_freq: usize) -> Result<Vocab, IngestError>
    where
        I: IntoIterator<Item = &'a str>,
    {
        if max_size < 2 {
            return Err(IngestError::Config(format!(
                "vocab max_size must be >= 2, got {max_size}"
            )));
        }
        let mut counts: HashMap<String, usize> = HashMap::new();
        for text in corpus {
            for token in tokenize(text) {
                *counts.entry(token).or_insert(0) += 1;
            }
        }
        let mut ranked: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(_, c)| *c >= min_freq.max(1))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(max_size.saturating_sub(2));

        let mut id_to_token = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
        id_to_token.extend(ranked.into_iter().map(|(t, _)| t));
        Ok(Vocab::from_tokens(id_to_token))
    }

    /// Builds a vocabulary from an explicit id-ordered token list. The first
    /// two entries must be the PAD and UNK tokens.
    pub fn from_tokens(id_to_token: Vec<String>) -> Vocab {
        debug_assert!(id_to_token.len() >= 2);
        let token_to_id = id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocab {
            token_to_id,
            id_to_token,
        }
    }

    /// Synthetic vocabulary of exactly `size` entries named by index.
    pub fn synthetic(size: usize) -> Vocab {
        let mut tokens = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
        for i in 2..size {
            tokens.push(format!("w{i:04}"));
        }
        Vocab::from_tokens(tokens)
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        false // PAD and UNK are always present
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.id_to_token.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.id_to_token
    }

    /// Encodes a text, mapping out-of-vocabulary tokens to UNK and keeping
    /// the first `max_len` tokens. Empty texts encode as a single UNK so the
    /// downstream pipeline always sees at least one position.
    pub fn encode(&self, text: &str, max_len: usize) -> Vec<u32> {
        let mut ids: Vec<u32> = tokenize(text)
            .into_iter()
            .take(max_len)
            .map(|t| self.id(&t).unwrap_or(UNK_ID))
            .collect();
        if ids.is_empty() {
            ids.push(UNK_ID);
        }
        ids
    }

    /// SHA-256 over the id-ordered token list, hex encoded. Used to refuse
    /// checkpoint/dataset pairs built from different vocabularies.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        for (i, t) in self.id_to_token.iter().enumerate() {
            hasher.update(i.to_le_bytes());
            hasher.update(t.as_bytes());
            hasher.update([0u8]);
        }
        hex::encode(hasher.finalize())
    }
}

/// Lowercase, split on Unicode whitespace, strip sentence punctuation from
/// token edges, drop anything left empty.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split_whitespace()
        .map(|t| t.trim_matches(STRIP_CHARS))
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// One labeled token sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub label: usize,
    pub token_ids: Vec<u32>,
}

/// A labeled split sharing one vocabulary.
#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub examples: Vec<Example>,
    pub num_classes: usize,
    pub vocab: Arc<Vocab>,
}

impl DatasetSplit {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        if self.num_classes < 2 {
            return Err(IngestError::Config(format!(
                "num_classes must be >= 2, got {}",
                self.num_classes
            )));
        }
        for (i, ex) in self.examples.iter().enumerate() {
            if ex.label >= self.num_classes {
                return Err(IngestError::Config(format!(
                    "example {i} has label {} outside 0..{}",
                    ex.label, self.num_classes
                )));
            }
            if ex.token_ids.is_empty() {
                return Err(IngestError::Config(format!("example {i} is empty")));
            }
            if let Some(&id) = ex.token_ids.iter().find(|&&id| id as usize >= self.vocab.len()) {
                return Err(IngestError::Config(format!(
                    "example {i} holds token id {id} outside the vocabulary of {}",
                    self.vocab.len()
                )));
            }
        }
        Ok(())
    }
}

/// Raw AG News row before tokenization.
#[derive(Debug, Clone)]
pub struct LabeledText {
    pub label: usize,
    pub text: String,
}

pub const AGNEWS_CLASSES: [&str; 4] = ["World", "Sports", "Business", "Sci/Tech"];

/// Reads the public AG News CSV layout: quoted `class,title,description`
/// rows with class in 1..=4. Labels are shifted to 0-based. The text is
/// `title + " " + description`. Malformed rows abort with their line number;
/// nothing is silently dropped. A leading header row (non-numeric class
/// field on line 1) is tolerated and skipped.
pub fn load_agnews_texts(path: &Path) -> Result<Vec<LabeledText>, IngestError> {
    let file = File::open(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(BufReader::new(file));

    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i as u64 + 1;
        let record = record.map_err(|e| IngestError::MalformedRow {
            line,
            reason: e.to_string(),
        })?;
        let class_field = record.get(0).unwrap_or("").trim();
        if line == 1 && class_field.parse::<i64>().is_err() {
            continue; // header row variant of the release
        }
        if record.len() != 3 {
            return Err(IngestError::MalformedRow {
                line,
                reason: format!("expected 3 fields, found {}", record.len()),
            });
        }
        let class: i64 = class_field.parse().map_err(|_| IngestError::MalformedRow {
            line,
            reason: format!("class field {class_field:?} is not an integer"),
        })?;
        if !(1..=4).contains(&class) {
            return Err(IngestError::ClassOutOfRange {
                class: class_field.to_string(),
                line,
            });
        }
        let title = record.get(1).unwrap_or("");
        let description = record.get(2).unwrap_or("");
        rows.push(LabeledText {
            label: (class - 1) as usize,
            text: format!("{title} {description}"),
        });
    }
    Ok(rows)
}

/// Tokenizes pre-loaded rows under an existing vocabulary.
pub fn split_from_texts(
    rows: &[LabeledText],
    vocab: Arc<Vocab>,
    max_len: usize,
) -> Result<DatasetSplit, IngestError> {
    if rows.is_empty() {
        return Err(IngestError::Empty);
    }
    let examples = rows
        .iter()
        .map(|r| Example {
            label: r.label,
            token_ids: vocab.encode(&r.text, max_len),
        })
        .collect();
    let split = DatasetSplit {
        examples,
        num_classes: 4,
        vocab,
    };
    split.validate()?;
    Ok(split)
}

/// Loads an AG News CSV and tokenizes it with the given vocabulary.
pub fn load_agnews_csv(
    path: &Path,
    vocab: Arc<Vocab>,
    max_len: usize,
) -> Result<DatasetSplit, IngestError> {
    let rows = load_agnews_texts(path)?;
    split_from_texts(&rows, vocab, max_len)
}

/// Parameters of the separable synthetic dataset. Each class owns a disjoint
/// block of signal token ids; every example draws a fixed fraction of noise
/// positions (anything outside its own signal block) and fills the rest with
/// its own signal tokens, so at least `1 - noise_frac` of each sequence is
/// own-class signal by construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub n_per_class: usize,
    pub num_classes: usize,
    pub vocab_size: usize,
    pub signal_tokens_per_class: usize,
    #[serde(default)]
    pub noise_frac: f64,
    #[serde(default = "default_min_len")]
    pub min_len: usize,
    #[serde(default = "default_max_len")]
    pub max_len: usize,
}

fn default_min_len() -> usize {
    10
}

fn default_max_len() -> usize {
    16
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<(), IngestError> {
        if self.num_classes < 2 {
            return Err(IngestError::Config(format!(
                "num_classes must be >= 2, got {}",
                self.num_classes
            )));
        }
        if self.signal_tokens_per_class == 0 {
            return Err(IngestError::Config(
                "signal_tokens_per_class must be >= 1".into(),
            ));
        }
        if self.vocab_size < self.num_classes * self.signal_tokens_per_class + 2 {
            return Err(IngestError::Config(format!(
                "vocab_size {} too small for {} classes x {} signal tokens plus PAD/UNK",
                self.vocab_size, self.num_classes, self.signal_tokens_per_class
            )));
        }
        if !(0.0..=0.4).contains(&self.noise_frac) {
            return Err(IngestError::Config(format!(
                "noise_frac must lie in [0, 0.4] so sequences stay >= 60% own-class signal, got {}",
                self.noise_frac
            )));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(IngestError::Config(format!(
                "invalid length range {}..={}",
                self.min_len, self.max_len
            )));
        }
        if self.n_per_class == 0 {
            return Err(IngestError::Config("n_per_class must be >= 1".into()));
        }
        Ok(())
    }

    /// Signal token ids owned by `class`: a contiguous block after PAD/UNK.
    pub fn signal_ids(&self, class: usize) -> std::ops::Range<u32> {
        let s = self.signal_tokens_per_class as u32;
        let start = 2 + class as u32 * s;
        start..start + s
    }
}

/// Generates the synthetic split. Identical configs produce bit-identical
/// datasets; examples are emitted class-by-class in a fixed order.
pub fn make_synthetic(config: &SyntheticConfig) -> Result<DatasetSplit, IngestError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let vocab = Arc::new(Vocab::synthetic(config.vocab_size));

    let mut examples = Vec::with_capacity(config.n_per_class * config.num_classes);
    for class in 0..config.num_classes {
        let own = config.signal_ids(class);
        // noise pool: every real token id outside this class's signal block
        let noise_pool: Vec<u32> = (2..config.vocab_size as u32)
            .filter(|id| !own.contains(id))
            .collect();
        for _ in 0..config.n_per_class {
            let len = rng.gen_range(config.min_len..=config.max_len);
            let noise_count = (config.noise_frac * len as f64).floor() as usize;
            let mut token_ids = Vec::with_capacity(len);
            for _ in 0..len - noise_count {
                token_ids.push(rng.gen_range(own.clone()));
            }
            for _ in 0..noise_count {
                token_ids.push(noise_pool[rng.gen_range(0..noise_pool.len())]);
            }
            // deterministic position shuffle so noise is not always suffixed
            for i in (1..token_ids.len()).rev() {
                let j = rng.gen_range(0..=i);
                token_ids.swap(i, j);
            }
            examples.push(Example {
                label: class,
                token_ids,
            });
        }
    }
    let split = DatasetSplit {
        examples,
        num_classes: config.num_classes,
        vocab,
    };
    split.validate()?;
    Ok(split)
}

/// Writes a split as JSON lines `{"label": .., "token_ids": [..]}`.
pub fn write_jsonl(split: &DatasetSplit, path: &Path) -> Result<(), IngestError> {
    let file = File::create(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut w = BufWriter::new(file);
    for ex in &split.examples {
        let line = serde_json::to_string(ex).expect("examples serialize");
        writeln!(w, "{line}").map_err(|source| IngestError::Io {
            path: path.display().to_string(),
            source,
        })?;
    }
    w.flush().map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(())
}

/// Reads a JSON-lines fixture produced by [`write_jsonl`]. The caller
/// supplies the vocabulary the ids were minted under.
pub fn read_jsonl(
    path: &Path,
    vocab: Arc<Vocab>,
    num_classes: usize,
) -> Result<DatasetSplit, IngestError> {
    let file = File::open(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut examples = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| IngestError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let ex: Example = serde_json::from_str(&line).map_err(|e| IngestError::MalformedRow {
            line: i as u64 + 1,
            reason: e.to_string(),
        })?;
        examples.push(ex);
    }
    if examples.is_empty() {
        return Err(IngestError::Empty);
    }
    let split = DatasetSplit {
        examples,
        num_classes,
        vocab,
    };
    split.validate()?;
    Ok(split)
}
