//! Dataset construction and persistence: synthetic toy captioning corpora,
//! vocabulary building, JSON Lines dataset files, and versioned JSON
//! checkpoints.

use crate::error::{Error, Result};
use crate::metrics::{tokenize, TokenSeq};
use crate::training::ModelParams;
use crate::vocab::Vocab;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

/// One captioning record: a feature vector standing in for an encoded image,
/// plus one or more tokenized reference captions.
#[derive(Clone, Debug, PartialEq)]
pub struct CaptionSample {
    pub id: String,
    pub feature: Vec<f64>,
    pub references: Vec<TokenSeq>,
}

/// Shape of a synthetic corpus.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub n_samples: usize,
    pub feature_width: usize,
    /// Inclusive caption-length range in tokens (before START/END wrapping).
    pub min_len: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            n_samples: 200,
            feature_width: 32,
            min_len: 5,
            max_len: 9,
            seed: 7,
        }
    }
}

const DETS: [&str; 2] = ["a", "the"];
const ADJS: [&str; 8] = ["red", "blue", "green", "small", "big", "old", "young", "quiet"];
const NOUNS: [&str; 10] = [
    "bird", "cat", "dog", "fox", "horse", "owl", "frog", "bear", "mouse", "wolf",
];
const VERBS: [&str; 6] = ["sits", "sleeps", "runs", "jumps", "waits", "hides"];
const PREPS: [&str; 4] = ["on", "near", "under", "behind"];
const PLACES: [&str; 8] = [
    "fence", "tree", "rock", "house", "river", "bridge", "field", "hill",
];
const ADVERBS: [&str; 4] = ["quickly", "slowly", "calmly", "happily"];

/// Deterministic synthetic corpus: seeded feature vectors paired injectively
/// with template captions, so memorization is achievable. Lengths cycle
/// through [min_len, max_len].
pub fn synth_dataset(spec: &DatasetSpec) -> Result<Vec<CaptionSample>> {
    if spec.n_samples == 0 || spec.feature_width == 0 {
        return Err(Error::Config("dataset needs samples and a feature width".into()));
    }
    if spec.min_len < 4 || spec.max_len > 9 || spec.min_len > spec.max_len {
        return Err(Error::Config(format!(
            "caption length range [{}, {}] outside the supported [4, 9]",
            spec.min_len, spec.max_len
        )));
    }
    // The (noun, verb, place, det) tuple is a mixed-radix encoding of i and
    // appears in every template length, so captions are injective in i.
    let capacity = NOUNS.len() * VERBS.len() * PLACES.len() * DETS.len();
    if spec.n_samples > capacity {
        return Err(Error::Config(format!(
            "at most {capacity} distinct samples are available, {} requested",
            spec.n_samples
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let span = spec.max_len - spec.min_len + 1;
    let mut samples = Vec::with_capacity(spec.n_samples);
    for i in 0..spec.n_samples {
        let noun = NOUNS[i % NOUNS.len()];
        let verb = VERBS[(i / NOUNS.len()) % VERBS.len()];
        let place = PLACES[(i / (NOUNS.len() * VERBS.len())) % PLACES.len()];
        let det = DETS[(i / (NOUNS.len() * VERBS.len() * PLACES.len())) % DETS.len()];
        let prep = PREPS[(i / 3) % PREPS.len()];
        let adj = ADJS[i % ADJS.len()];
        let adj2 = ADJS[(i + 3) % ADJS.len()];
        let adverb = ADVERBS[(i / 2) % ADVERBS.len()];

        let len = spec.min_len + i % span;
        let caption: Vec<&str> = match len {
            4 => vec![det, noun, verb, place],
            5 => vec![det, noun, verb, prep, place],
            6 => vec![det, adj, noun, verb, prep, place],
            7 => vec![det, adj, noun, verb, prep, "the", place],
            8 => vec![det, adj, noun, verb, prep, "the", adj2, place],
            _ => vec![det, adj, noun, verb, adverb, prep, "the", adj2, place],
        };
        debug_assert_eq!(caption.len(), len);

        let feature = (0..spec.feature_width)
            .map(|_| rng.random_range(-1.0..=1.0))
            .collect();
        samples.push(CaptionSample {
            id: format!("s{i:04}"),
            feature,
            references: vec![caption.into_iter().map(|w| w.to_string()).collect()],
        });
    }
    Ok(samples)
}

/// Vocabulary over every reference of every sample: tokens with count >=
/// min_count get real ids, the rest fall to UNK.
pub fn build_vocab(samples: &[CaptionSample], min_count: usize) -> Vocab {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for s in samples {
        for r in &s.references {
            for t in r {
                *counts.entry(t.clone()).or_insert(0) += 1;
            }
        }
    }
    Vocab::from_counts(&counts, min_count)
}

#[derive(Serialize, Deserialize)]
struct RawSample {
    id: String,
    feature: Vec<f64>,
    captions: Vec<String>,
}

/// Reads a JSON Lines dataset: one {id, feature, captions} object per line.
/// Captions are tokenized on load.
pub fn load_dataset_jsonl(path: &Path) -> Result<Vec<CaptionSample>> {
    let file = std::fs::File::open(path)?;
    let mut samples = Vec::new();
    let mut width: Option<usize> = None;
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawSample = serde_json::from_str(&line).map_err(|e| {
            Error::Malformed(format!("dataset line {}: {e}", lineno + 1))
        })?;
        if raw.feature.is_empty() || raw.feature.iter().any(|v| !v.is_finite()) {
            return Err(Error::Malformed(format!(
                "dataset line {}: feature must be nonempty and finite",
                lineno + 1
            )));
        }
        match width {
            None => width = Some(raw.feature.len()),
            Some(w) if w != raw.feature.len() => {
                return Err(Error::Malformed(format!(
                    "dataset line {}: feature width {} differs from {w}",
                    lineno + 1,
                    raw.feature.len()
                )))
            }
            _ => {}
        }
        let references: Vec<TokenSeq> = raw.captions.iter().map(|c| tokenize(c)).collect();
        if references.is_empty() || references.iter().any(|r| r.is_empty()) {
            return Err(Error::Malformed(format!(
                "dataset line {}: every sample needs nonempty captions",
                lineno + 1
            )));
        }
        samples.push(CaptionSample {
            id: raw.id,
            feature: raw.feature,
            references,
        });
    }
    if samples.is_empty() {
        return Err(Error::Malformed("dataset contains no samples".into()));
    }
    Ok(samples)
}

pub fn save_dataset_jsonl(path: &Path, samples: &[CaptionSample]) -> Result<()> {
    let mut out = std::fs::File::create(path)?;
    for s in samples {
        let raw = RawSample {
            id: s.id.clone(),
            feature: s.feature.clone(),
            captions: s.references.iter().map(|r| r.join(" ")).collect(),
        };
        let line = serde_json::to_string(&raw)
            .map_err(|e| Error::Malformed(format!("serialize sample {}: {e}", s.id)))?;
        writeln!(out, "{line}")?;
    }
    Ok(())
}

pub const CHECKPOINT_VERSION: u64 = 1;

/// Versioned checkpoint document: configuration snapshot, vocabulary, and
/// every named parameter array with its shape (batch-norm running statistics
/// ride inside the cell parameters).
#[derive(Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u64,
    pub config: BTreeMap<String, String>,
    pub vocab: Vocab,
    pub model: ModelParams,
}

pub fn save_checkpoint(
    path: &Path,
    model: &ModelParams,
    vocab: &Vocab,
    config: &BTreeMap<String, String>,
) -> Result<()> {
    let doc = Checkpoint {
        format_version: CHECKPOINT_VERSION,
        config: config.clone(),
        vocab: vocab.clone(),
        model: model.clone(),
    };
    let json = serde_json::to_string_pretty(&doc)
        .map_err(|e| Error::Malformed(format!("serialize checkpoint: {e}")))?;
    std::fs::write(path, json)?;
    Ok(())
}

/// Loads and fully validates a checkpoint: version first, then document
/// shape, then parameter-shape consistency.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path)?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Error::Malformed(format!("checkpoint is not valid JSON: {e}")))?;
    let found = value
        .get("format_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::Malformed("checkpoint lacks a format_version field".into()))?;
    if found != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch {
            found,
            expected: CHECKPOINT_VERSION,
        });
    }
    let doc: Checkpoint = serde_json::from_value(value)
        .map_err(|e| Error::Malformed(format!("checkpoint document: {e}")))?;
    doc.model.validate()?;
    if doc.model.vocab_size() != doc.vocab.size() {
        return Err(Error::Malformed(format!(
            "embedding rows {} do not match vocabulary size {}",
            doc.model.vocab_size(),
            doc.vocab.size()
        )));
    }
    Ok(doc)
}
