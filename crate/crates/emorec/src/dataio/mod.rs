//! Dataset schema, JSONL ingestion, stratified splitting, batching, and a
//! class-conditional synthetic generator.
//!
//! File formats:
//! - dataset: UTF-8 JSON Lines, one sample object per line with keys `id`,
//!   `visual`/`audio`/`text` (arrays of equal-width float arrays), `emotion`,
//!   `intent`, `positives`
//! - manifest: one JSON object with keys `emotion_space`, `intent_space`,
//!   `d_v`, `d_a`, `d_t`
//! - catalog: JSON Lines with `id`, `embedding`, `metadata`

mod synth;

pub use synth::{synthesize, SynthConfig, SyntheticDataset};

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::recommender::{Catalog, ContentItem};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: parse error: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}:{line}: {issue}")]
    Sample {
        path: PathBuf,
        line: usize,
        issue: SampleIssue,
    },
    #[error("invalid manifest: {0}")]
    Manifest(String),
    #[error("invalid split spec: {0}")]
    Split(String),
    #[error("stratification: emotion class {0:?} has no samples")]
    EmptyClass(String),
    #[error("sample {id:?}: {issue}")]
    InvalidSample { id: String, issue: SampleIssue },
    #[error("{op}: {name} = {value}: must be {requirement}")]
    Parameter {
        op: &'static str,
        name: &'static str,
        value: String,
        requirement: String,
    },
    #[error(transparent)]
    Catalog(#[from] crate::recommender::RecError),
}

/// A single schema violation inside one sample.
#[derive(Debug, thiserror::Error)]
pub enum SampleIssue {
    #[error("field {field}: sequence is empty")]
    EmptySequence { field: &'static str },
    #[error("field {field}: vector {index} has {got} dims, manifest declares {expected}")]
    DimensionMismatch {
        field: &'static str,
        index: usize,
        got: usize,
        expected: usize,
    },
    #[error("field {field}: vector {index} contains non-finite value")]
    NonFinite { field: &'static str, index: usize },
    #[error("field {field}: unknown label {label:?}")]
    UnknownLabel { field: &'static str, label: String },
}

/// One user interaction record: three embedding sequences, the two labels,
/// and the content the user engaged with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultimodalSample {
    pub id: String,
    pub visual: Vec<Vec<f64>>,
    pub audio: Vec<Vec<f64>>,
    pub text: Vec<Vec<f64>>,
    pub emotion: String,
    pub intent: String,
    pub positives: Vec<String>,
}

impl MultimodalSample {
    /// Check sequences and labels against a manifest.
    pub fn validate(&self, manifest: &DatasetManifest) -> Result<(), SampleIssue> {
        for (field, seq, expected) in [
            ("visual", &self.visual, manifest.d_v),
            ("audio", &self.audio, manifest.d_a),
            ("text", &self.text, manifest.d_t),
        ] {
            if seq.is_empty() {
                return Err(SampleIssue::EmptySequence { field });
            }
            for (index, vector) in seq.iter().enumerate() {
                if vector.len() != expected {
                    return Err(SampleIssue::DimensionMismatch {
                        field,
                        index,
                        got: vector.len(),
                        expected,
                    });
                }
                if vector.iter().any(|v| !v.is_finite()) {
                    return Err(SampleIssue::NonFinite { field, index });
                }
            }
        }
        if manifest.emotion_index(&self.emotion).is_none() {
            return Err(SampleIssue::UnknownLabel {
                field: "emotion",
                label: self.emotion.clone(),
            });
        }
        if manifest.intent_index(&self.intent).is_none() {
            return Err(SampleIssue::UnknownLabel {
                field: "intent",
                label: self.intent.clone(),
            });
        }
        Ok(())
    }
}

/// Declares the label spaces and per-modality embedding widths of a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub emotion_space: Vec<String>,
    pub intent_space: Vec<String>,
    pub d_v: usize,
    pub d_a: usize,
    pub d_t: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_count: Option<usize>,
}

impl Default for DatasetManifest {
    fn default() -> Self {
        Self {
            emotion_space: ["anger", "disgust", "fear", "joy", "neutral", "sadness", "surprise"]
                .map(String::from)
                .to_vec(),
            intent_space: ["relaxing", "learning", "exploring_creativity"]
                .map(String::from)
                .to_vec(),
            d_v: 16,
            d_a: 16,
            d_t: 16,
            sample_count: None,
        }
    }
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<(), DataError> {
        for (name, space) in [
            ("emotion_space", &self.emotion_space),
            ("intent_space", &self.intent_space),
        ] {
            if space.is_empty() {
                return Err(DataError::Manifest(format!("{name} is empty")));
            }
            let mut seen = std::collections::HashSet::new();
            for label in space {
                if !seen.insert(label) {
                    return Err(DataError::Manifest(format!(
                        "{name} has duplicate label {label:?}"
                    )));
                }
            }
        }
        for (name, dim) in [("d_v", self.d_v), ("d_a", self.d_a), ("d_t", self.d_t)] {
            if dim == 0 {
                return Err(DataError::Manifest(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }

    pub fn emotion_index(&self, label: &str) -> Option<usize> {
        self.emotion_space.iter().position(|l| l == label)
    }

    pub fn intent_index(&self, label: &str) -> Option<usize> {
        self.intent_space.iter().position(|l| l == label)
    }
}

/// Train/validation/test fractions plus the shuffle seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_frac: 0.7,
            val_frac: 0.15,
            test_frac: 0.15,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        let fracs = [self.train_frac, self.val_frac, self.test_frac];
        if fracs.iter().any(|f| *f <= 0.0) {
            return Err(DataError::Split("all fractions must be positive".into()));
        }
        let sum: f64 = fracs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(DataError::Split(format!("fractions sum to {sum}, not 1")));
        }
        Ok(())
    }

    fn fractions(&self) -> [f64; 3] {
        [self.train_frac, self.val_frac, self.test_frac]
    }
}

// ── File IO ──────────────────────────────────────────────────────────────

fn read_to_string(path: &Path) -> Result<String, DataError> {
    fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_string(path: &Path, contents: &str) -> Result<(), DataError> {
    let mut file = fs::File::create(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    file.write_all(contents.as_bytes())
        .map_err(|source| DataError::Io {
            path: path.to_path_buf(),
            source,
        })
}

fn parse_jsonl<T: serde::de::DeserializeOwned>(
    path: &Path,
    contents: &str,
) -> Result<Vec<(usize, T)>, DataError> {
    let mut out = Vec::new();
    for (idx, line) in contents.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(line).map_err(|e| DataError::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        out.push((idx + 1, record));
    }
    Ok(out)
}

/// Load and validate a JSONL dataset. Samples come back in file order.
pub fn load_dataset(
    path: &Path,
    manifest: &DatasetManifest,
) -> Result<Vec<MultimodalSample>, DataError> {
    manifest.validate()?;
    let contents = read_to_string(path)?;
    let mut samples = Vec::new();
    for (line, sample) in parse_jsonl::<MultimodalSample>(path, &contents)? {
        sample.validate(manifest).map_err(|issue| DataError::Sample {
            path: path.to_path_buf(),
            line,
            issue,
        })?;
        samples.push(sample);
    }
    Ok(samples)
}

/// Serialize samples to the JSONL dataset format.
pub fn dataset_to_jsonl(samples: &[MultimodalSample]) -> String {
    let mut out = String::new();
    for sample in samples {
        out.push_str(&serde_json::to_string(sample).expect("sample serialization cannot fail"));
        out.push('\n');
    }
    out
}

pub fn save_dataset(path: &Path, samples: &[MultimodalSample]) -> Result<(), DataError> {
    write_string(path, &dataset_to_jsonl(samples))
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest, DataError> {
    let contents = read_to_string(path)?;
    let manifest: DatasetManifest =
        serde_json::from_str(&contents).map_err(|e| DataError::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: e.to_string(),
        })?;
    manifest.validate()?;
    Ok(manifest)
}

pub fn save_manifest(path: &Path, manifest: &DatasetManifest) -> Result<(), DataError> {
    let mut body = serde_json::to_string_pretty(manifest).expect("manifest serialization");
    body.push('\n');
    write_string(path, &body)
}

pub fn load_catalog(path: &Path) -> Result<Catalog, DataError> {
    let contents = read_to_string(path)?;
    let items = parse_jsonl::<ContentItem>(path, &contents)?
        .into_iter()
        .map(|(_, item)| item)
        .collect();
    Ok(Catalog::new(items)?)
}

pub fn catalog_to_jsonl(catalog: &Catalog) -> String {
    let mut out = String::new();
    for item in catalog.items() {
        out.push_str(&serde_json::to_string(item).expect("item serialization cannot fail"));
        out.push('\n');
    }
    out
}

pub fn save_catalog(path: &Path, catalog: &Catalog) -> Result<(), DataError> {
    write_string(path, &catalog_to_jsonl(catalog))
}

// ── Stratified splitting ─────────────────────────────────────────────────

/// Per-class largest-remainder apportionment of `total` over the three
/// splits. Leftover units follow descending remainders; runs of exactly
/// tied remainders are rotated by the class's manifest index, so tied units
/// alternate between splits across classes instead of all landing in the
/// same one.
fn class_split_sizes(total: usize, fractions: &[f64; 3], class_index: usize) -> [usize; 3] {
    let mut counts = [0usize; 3];
    let mut remainders = [0.0f64; 3];
    let mut assigned = 0;
    for s in 0..3 {
        let exact = total as f64 * fractions[s];
        counts[s] = exact.floor() as usize;
        remainders[s] = exact - exact.floor();
        assigned += counts[s];
    }
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        remainders[b]
            .partial_cmp(&remainders[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    // Rotate each run of equal remainders by the class index.
    let mut start = 0;
    while start < 3 {
        let mut end = start + 1;
        while end < 3 && remainders[order[end]] == remainders[order[start]] {
            end += 1;
        }
        order[start..end].rotate_left(class_index % (end - start));
        start = end;
    }
    let mut leftover = total - assigned;
    for &s in &order {
        if leftover == 0 {
            break;
        }
        counts[s] += 1;
        leftover -= 1;
    }
    counts
}

/// The train/validation/test partition produced by [`split`].
pub type SplitSets = (
    Vec<MultimodalSample>,
    Vec<MultimodalSample>,
    Vec<MultimodalSample>,
);

/// Stratified 3-way split by emotion label.
///
/// Samples are shuffled once with the spec seed, grouped by emotion, and cut
/// per class by largest-remainder apportionment, which keeps every class
/// within one sample of its fractional targets. Tied remainders rotate by
/// manifest label order so class-balanced inputs hit the global fractions
/// exactly.
pub fn split(
    samples: &[MultimodalSample],
    manifest: &DatasetManifest,
    spec: &SplitSpec,
) -> Result<SplitSets, DataError> {
    spec.validate()?;
    manifest.validate()?;

    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); manifest.emotion_space.len()];
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut rng = StdRng::seed_from_u64(spec.seed);
    order.shuffle(&mut rng);
    for &idx in &order {
        let class = manifest.emotion_index(&samples[idx].emotion).ok_or_else(|| {
            DataError::InvalidSample {
                id: samples[idx].id.clone(),
                issue: SampleIssue::UnknownLabel {
                    field: "emotion",
                    label: samples[idx].emotion.clone(),
                },
            }
        })?;
        by_class[class].push(idx);
    }
    for (class, members) in by_class.iter().enumerate() {
        if members.is_empty() {
            return Err(DataError::EmptyClass(manifest.emotion_space[class].clone()));
        }
    }

    let fractions = spec.fractions();
    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut test = Vec::new();
    for (c, members) in by_class.iter().enumerate() {
        let [t, v, _] = class_split_sizes(members.len(), &fractions, c);
        for (pos, &idx) in members.iter().enumerate() {
            let sample = samples[idx].clone();
            if pos < t {
                train.push(sample);
            } else if pos < t + v {
                val.push(sample);
            } else {
                test.push(sample);
            }
        }
    }
    Ok((train, val, test))
}

// ── Batching ─────────────────────────────────────────────────────────────

/// Mix a base seed with stream labels; used so every consumer of randomness
/// gets an independent, reproducible stream.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mut state = base ^ 0x9e37_79b9_7f4a_7c15;
    for &part in parts {
        state = state.wrapping_add(part).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        state ^= state >> 27;
        state = state.wrapping_mul(0x94d0_49bb_1331_11eb);
        state ^= state >> 31;
    }
    state
}

/// Per-epoch reshuffled batches of indices into the sample slice. The final
/// short batch is emitted, not dropped.
pub fn batch_indices(
    n: usize,
    batch_size: usize,
    seed: u64,
    epoch: u64,
) -> Result<Vec<Vec<usize>>, DataError> {
    if batch_size == 0 {
        return Err(DataError::Parameter {
            op: "batches",
            name: "batch_size",
            value: "0".into(),
            requirement: "at least 1".into(),
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = StdRng::seed_from_u64(derive_seed(seed, &[0x_ba7c, epoch]));
    order.shuffle(&mut rng);
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

/// Convenience wrapper returning sample references instead of indices.
pub fn batches(
    samples: &[MultimodalSample],
    batch_size: usize,
    seed: u64,
    epoch: u64,
) -> Result<Vec<Vec<&MultimodalSample>>, DataError> {
    Ok(batch_indices(samples.len(), batch_size, seed, epoch)?
        .into_iter()
        .map(|chunk| chunk.into_iter().map(|i| &samples[i]).collect())
        .collect())
}
