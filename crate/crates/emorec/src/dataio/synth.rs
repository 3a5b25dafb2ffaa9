//! Class-conditional synthetic data: one Gaussian cluster per
//! (emotion, intent) pair in each modality space and in the content space,
//! with per-sample positives drawn from the catalog items nearest the
//! sample's own cluster center.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;

use super::{DataError, DatasetManifest, MultimodalSample};
use crate::recommender::{Catalog, ContentItem};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n: usize,
    pub seed: u64,
    /// Minimum pairwise distance between cluster centers; 0 makes every
    /// class statistically indistinguishable.
    pub separation: f64,
    /// Width of catalog content embeddings (the unified model dimension).
    pub content_dim: usize,
    pub items_per_pair: usize,
    pub positives_per_sample: usize,
    pub seq_len_min: usize,
    pub seq_len_max: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n: 210,
            seed: 0,
            separation: 10.0,
            content_dim: 16,
            items_per_pair: 5,
            positives_per_sample: 3,
            seq_len_min: 2,
            seq_len_max: 6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub samples: Vec<MultimodalSample>,
    pub catalog: Catalog,
    /// Input manifest with `sample_count` filled in.
    pub manifest: DatasetManifest,
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Draw `count` centers of width `dim` with pairwise distance at least
/// `separation`. Centers are Gaussian with a scale that grows with the
/// packing pressure `count^(1/dim)` so rejection stays cheap in low
/// dimensions.
fn cluster_centers(
    rng: &mut StdRng,
    count: usize,
    dim: usize,
    separation: f64,
) -> Result<Vec<Vec<f64>>, DataError> {
    let scale = separation * (count as f64).powf(1.0 / dim as f64);
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(count);
    for _ in 0..count {
        let mut tries = 0;
        loop {
            let candidate: Vec<f64> = (0..dim)
                .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
                .collect();
            if centers.iter().all(|c| distance(c, &candidate) >= separation) {
                centers.push(candidate);
                break;
            }
            tries += 1;
            if tries > 10_000 {
                return Err(DataError::Parameter {
                    op: "synthesize",
                    name: "separation",
                    value: separation.to_string(),
                    requirement: format!(
                        "small enough to place {count} centers in {dim} dimensions"
                    ),
                });
            }
        }
    }
    Ok(centers)
}

fn noisy_point(rng: &mut StdRng, center: &[f64]) -> Vec<f64> {
    center
        .iter()
        .map(|&c| c + rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Generate `config.n` samples plus a content catalog.
///
/// Pair assignment is round-robin over the emotion×intent product so label
/// marginals stay balanced; everything is a pure function of
/// `(manifest, config)`.
pub fn synthesize(
    manifest: &DatasetManifest,
    config: &SynthConfig,
) -> Result<SyntheticDataset, DataError> {
    manifest.validate()?;
    let pairs: Vec<(usize, usize)> = (0..manifest.emotion_space.len())
        .flat_map(|e| (0..manifest.intent_space.len()).map(move |i| (e, i)))
        .collect();
    if config.n < pairs.len() {
        return Err(DataError::Parameter {
            op: "synthesize",
            name: "n",
            value: config.n.to_string(),
            requirement: format!("at least one sample per class pair ({} pairs)", pairs.len()),
        });
    }
    if config.separation < 0.0 {
        return Err(DataError::Parameter {
            op: "synthesize",
            name: "separation",
            value: config.separation.to_string(),
            requirement: "non-negative".into(),
        });
    }
    if config.content_dim == 0 || config.items_per_pair == 0 {
        return Err(DataError::Parameter {
            op: "synthesize",
            name: "content_dim/items_per_pair",
            value: "0".into(),
            requirement: "at least 1".into(),
        });
    }
    if config.seq_len_min == 0 || config.seq_len_min > config.seq_len_max {
        return Err(DataError::Parameter {
            op: "synthesize",
            name: "seq_len_min/seq_len_max",
            value: format!("{}..{}", config.seq_len_min, config.seq_len_max),
            requirement: "1 <= min <= max".into(),
        });
    }

    let mut rng = StdRng::seed_from_u64(config.seed);
    let visual_centers = cluster_centers(&mut rng, pairs.len(), manifest.d_v, config.separation)?;
    let audio_centers = cluster_centers(&mut rng, pairs.len(), manifest.d_a, config.separation)?;
    let text_centers = cluster_centers(&mut rng, pairs.len(), manifest.d_t, config.separation)?;
    let content_centers =
        cluster_centers(&mut rng, pairs.len(), config.content_dim, config.separation)?;

    // Catalog first so positives can reference it.
    let mut items = Vec::with_capacity(pairs.len() * config.items_per_pair);
    for (pair_idx, &(e, i)) in pairs.iter().enumerate() {
        for _ in 0..config.items_per_pair {
            let id = format!("c{:04}", items.len());
            let mut metadata = serde_json::Map::new();
            metadata.insert(
                "emotion".into(),
                manifest.emotion_space[e].clone().into(),
            );
            metadata.insert("intent".into(), manifest.intent_space[i].clone().into());
            items.push(ContentItem {
                id,
                embedding: noisy_point(&mut rng, &content_centers[pair_idx]),
                metadata,
            });
        }
    }
    let catalog = Catalog::new(items)?;

    // Items nearest each pair's content center, precomputed once.
    let pools: Vec<Vec<usize>> = content_centers
        .iter()
        .map(|center| {
            let mut order: Vec<usize> = (0..catalog.len()).collect();
            order.sort_by(|&a, &b| {
                let da = distance(&catalog.items()[a].embedding, center);
                let db = distance(&catalog.items()[b].embedding, center);
                da.partial_cmp(&db)
                    .unwrap()
                    .then_with(|| catalog.items()[a].id.cmp(&catalog.items()[b].id))
            });
            order.truncate(config.items_per_pair);
            order
        })
        .collect();

    let mut samples = Vec::with_capacity(config.n);
    for s in 0..config.n {
        let pair_idx = s % pairs.len();
        let (e, i) = pairs[pair_idx];
        let sequence = |rng: &mut StdRng, center: &[f64], min: usize, max: usize| {
            let len = rng.random_range(min..=max);
            (0..len).map(|_| noisy_point(rng, center)).collect::<Vec<_>>()
        };
        let visual = sequence(
            &mut rng,
            &visual_centers[pair_idx],
            config.seq_len_min,
            config.seq_len_max,
        );
        let audio = sequence(
            &mut rng,
            &audio_centers[pair_idx],
            config.seq_len_min,
            config.seq_len_max,
        );
        let text = sequence(
            &mut rng,
            &text_centers[pair_idx],
            config.seq_len_min,
            config.seq_len_max,
        );

        let pool = &pools[pair_idx];
        let take = config.positives_per_sample.min(pool.len());
        let chosen = rand::seq::index::sample(&mut rng, pool.len(), take);
        let positives: Vec<String> = chosen
            .iter()
            .map(|p| catalog.items()[pool[p]].id.clone())
            .collect();

        samples.push(MultimodalSample {
            id: format!("s{s:05}"),
            visual,
            audio,
            text,
            emotion: manifest.emotion_space[e].clone(),
            intent: manifest.intent_space[i].clone(),
            positives,
        });
    }

    let mut manifest = manifest.clone();
    manifest.sample_count = Some(config.n);
    Ok(SyntheticDataset {
        samples,
        catalog,
        manifest,
    })
}
