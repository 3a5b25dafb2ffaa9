//! Content scoring, top-k ranking, and an online implicit-feedback loop.
//!
//! A user's fused state vector is matched against catalog items by dot
//! product. Implicit satisfaction signals (dwell time, replays, likes) are
//! shaped into a `[0, 1]` reward, and each consumed item's embedding takes a
//! logistic-bandit-style gradient step toward or away from the user state.

use std::collections::{HashMap, HashSet};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::metrics::{hit_ratio_at_k, RankingJudgment};
use crate::ndcore::sigmoid_raw;

#[derive(Debug, thiserror::Error)]
pub enum RecError {
    #[error("dimension mismatch: user state has width {user}, item {item:?} has width {width}")]
    DimensionMismatch {
        user: usize,
        item: String,
        width: usize,
    },
    #[error("duplicate content id {0:?}")]
    DuplicateId(String),
    #[error("content id {0:?} not in catalog")]
    UnknownContentId(String),
    #[error("catalog is empty")]
    EmptyCatalog,
    #[error("{op}: {name} must be {requirement}, got {value}")]
    Parameter {
        op: &'static str,
        name: &'static str,
        requirement: &'static str,
        value: String,
    },
    #[error("item {id:?}: embedding invalid: {reason}")]
    BadEmbedding { id: String, reason: String },
}

/// Catalog entry: a piece of recommendable content with its embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContentItem {
    pub id: String,
    pub embedding: Vec<f64>,
    #[serde(default)]
    pub metadata: serde_json::Map<String, serde_json::Value>,
}

/// Id-unique collection of [`ContentItem`]s with equal embedding widths.
#[derive(Debug, Clone)]
pub struct Catalog {
    items: Vec<ContentItem>,
    by_id: HashMap<String, usize>,
}

impl Catalog {
    pub fn new(items: Vec<ContentItem>) -> Result<Self, RecError> {
        let width = items.first().map_or(0, |i| i.embedding.len());
        let mut by_id = HashMap::with_capacity(items.len());
        for (idx, item) in items.iter().enumerate() {
            if item.embedding.is_empty() {
                return Err(RecError::BadEmbedding {
                    id: item.id.clone(),
                    reason: "empty".into(),
                });
            }
            if item.embedding.len() != width {
                return Err(RecError::BadEmbedding {
                    id: item.id.clone(),
                    reason: format!("width {} != {}", item.embedding.len(), width),
                });
            }
            if let Some(bad) = item.embedding.iter().find(|v| !v.is_finite()) {
                return Err(RecError::BadEmbedding {
                    id: item.id.clone(),
                    reason: format!("non-finite value {bad}"),
                });
            }
            if by_id.insert(item.id.clone(), idx).is_some() {
                return Err(RecError::DuplicateId(item.id.clone()));
            }
        }
        Ok(Self { items, by_id })
    }

    pub fn items(&self) -> &[ContentItem] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Embedding width, 0 for an empty catalog.
    pub fn width(&self) -> usize {
        self.items.first().map_or(0, |i| i.embedding.len())
    }

    pub fn get(&self, id: &str) -> Option<&ContentItem> {
        self.by_id.get(id).map(|&i| &self.items[i])
    }

    fn get_mut(&mut self, id: &str) -> Option<&mut ContentItem> {
        let idx = *self.by_id.get(id)?;
        Some(&mut self.items[idx])
    }

    /// Replace every item's embedding from `(id, embedding)` pairs, used to
    /// install trained content representations.
    pub fn set_embeddings(&mut self, embeddings: &[(String, Vec<f64>)]) -> Result<(), RecError> {
        for (id, embedding) in embeddings {
            let item = self
                .get_mut(id)
                .ok_or_else(|| RecError::UnknownContentId(id.clone()))?;
            item.embedding = embedding.clone();
        }
        Ok(())
    }
}

/// Content ids with scores in non-increasing order; ties broken by
/// ascending id so rankings are reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub entries: Vec<RankedEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub id: String,
    pub score: f64,
}

impl RankedList {
    pub fn ids(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.id.clone()).collect()
    }

    /// 1-based rank of `id`, if present.
    pub fn rank_of(&self, id: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.id == id).map(|p| p + 1)
    }
}

/// Dot-product affinity between a fused user state and a content embedding.
pub fn score(user_state: &[f64], item: &ContentItem) -> Result<f64, RecError> {
    if user_state.len() != item.embedding.len() {
        return Err(RecError::DimensionMismatch {
            user: user_state.len(),
            item: item.id.clone(),
            width: item.embedding.len(),
        });
    }
    Ok(user_state
        .iter()
        .zip(&item.embedding)
        .map(|(a, b)| a * b)
        .sum())
}

/// The `k` highest-scoring catalog items (all of them when `k` exceeds the
/// catalog size).
pub fn rank_top_k(user_state: &[f64], catalog: &Catalog, k: usize) -> Result<RankedList, RecError> {
    if k == 0 {
        return Err(RecError::Parameter {
            op: "rank_top_k",
            name: "k",
            requirement: "at least 1",
            value: "0".into(),
        });
    }
    if catalog.is_empty() {
        return Err(RecError::EmptyCatalog);
    }
    let mut entries: Vec<RankedEntry> = catalog
        .items()
        .iter()
        .map(|item| {
            Ok(RankedEntry {
                id: item.id.clone(),
                score: score(user_state, item)?,
            })
        })
        .collect::<Result<_, RecError>>()?;
    entries.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .expect("scores are finite")
            .then_with(|| a.id.cmp(&b.id))
    });
    entries.truncate(k);
    Ok(RankedList { entries })
}

/// Implicit satisfaction signals gathered after one content consumption.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackEvent {
    /// Fused user-state vector at consumption time.
    pub user_state: Vec<f64>,
    pub content_id: String,
    /// Seconds spent on the item.
    pub dwell_time: f64,
    pub replays: u32,
    pub liked: bool,
}

/// Weights and saturation constants mapping implicit signals to `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub dwell_weight: f64,
    pub replay_weight: f64,
    pub like_weight: f64,
    /// Dwell time in seconds at which the dwell term saturates.
    pub dwell_saturation: f64,
    /// Replay count at which the replay term saturates.
    pub replay_saturation: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            dwell_weight: 0.5,
            replay_weight: 0.2,
            like_weight: 0.3,
            dwell_saturation: 60.0,
            replay_saturation: 3.0,
        }
    }
}

/// Shape an event's implicit signals into a reward in `[0, 1]`.
pub fn reward(event: &FeedbackEvent, config: &RewardConfig) -> f64 {
    let dwell = (event.dwell_time / config.dwell_saturation).clamp(0.0, 1.0);
    let replays = (f64::from(event.replays) / config.replay_saturation).min(1.0);
    let liked = if event.liked { 1.0 } else { 0.0 };
    (config.dwell_weight * dwell + config.replay_weight * replays + config.like_weight * liked)
        .clamp(0.0, 1.0)
}

/// Online adaptation step: move the consumed item's embedding along the user
/// state by `step · (reward − σ(score))`. No other item changes.
pub fn feedback_update(
    event: &FeedbackEvent,
    catalog: &mut Catalog,
    step: f64,
    config: &RewardConfig,
) -> Result<f64, RecError> {
    let r = reward(event, config);
    let width = event.user_state.len();
    let item = catalog
        .get(&event.content_id)
        .ok_or_else(|| RecError::UnknownContentId(event.content_id.clone()))?;
    let s = score(&event.user_state, item)?;
    let gain = step * (r - sigmoid_raw(s));
    let item = catalog
        .get_mut(&event.content_id)
        .expect("id checked above");
    debug_assert_eq!(item.embedding.len(), width);
    for (e, u) in item.embedding.iter_mut().zip(&event.user_state) {
        *e += gain * u;
    }
    Ok(r)
}

// ── Feedback-loop simulation ─────────────────────────────────────────────

/// One simulated user: fused state plus the items they genuinely favor.
#[derive(Debug, Clone)]
pub struct SimUser {
    pub id: String,
    pub state: Vec<f64>,
    pub positives: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub rounds: usize,
    pub seed: u64,
    /// Learning rate of [`feedback_update`].
    pub step: f64,
    /// Cutoff for the hit-ratio summary.
    pub k: usize,
    pub reward: RewardConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            rounds: 200,
            seed: 0,
            step: 0.1,
            k: 10,
            reward: RewardConfig::default(),
        }
    }
}

/// Per-round log line of the simulation trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub round: usize,
    pub user_id: String,
    pub recommended_id: String,
    pub reward: f64,
    /// 1-based rank of the user's best-ranked favored item this round.
    pub rank_of_best_item: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimSummary {
    /// Mean over (user, favored item) of the item's 1-based rank.
    pub mean_positive_rank: f64,
    pub hit_ratio_at_k: f64,
}

#[derive(Debug, Clone)]
pub struct Simulation {
    pub trace: Vec<TraceRow>,
    pub before: SimSummary,
    pub after: SimSummary,
}

fn summarize(users: &[SimUser], catalog: &Catalog, k: usize) -> Result<SimSummary, RecError> {
    let mut rank_sum = 0.0;
    let mut rank_count = 0usize;
    let mut judgments = Vec::with_capacity(users.len());
    for user in users {
        let ranking = rank_top_k(&user.state, catalog, catalog.len())?;
        for positive in &user.positives {
            if let Some(rank) = ranking.rank_of(positive) {
                rank_sum += rank as f64;
                rank_count += 1;
            }
        }
        let relevant: HashSet<String> = user.positives.iter().cloned().collect();
        judgments.push(
            RankingJudgment::new(ranking.ids(), relevant).expect("catalog ids are unique"),
        );
    }
    Ok(SimSummary {
        mean_positive_rank: if rank_count == 0 {
            0.0
        } else {
            rank_sum / rank_count as f64
        },
        hit_ratio_at_k: hit_ratio_at_k(&judgments, k),
    })
}

/// Run `rounds` of recommend → synthesize implicit feedback → update.
///
/// Each round serves the next user round-robin, recommends their current
/// top-ranked item, and synthesizes signals that favor the user's positive
/// items: generous dwell/replays/likes when the recommendation hits a
/// positive, grudging ones otherwise.
pub fn simulate_feedback(
    users: &[SimUser],
    catalog: &mut Catalog,
    config: &SimConfig,
) -> Result<Simulation, RecError> {
    if users.is_empty() {
        return Err(RecError::Parameter {
            op: "simulate_feedback",
            name: "users",
            requirement: "non-empty",
            value: "0".into(),
        });
    }
    let before = summarize(users, catalog, config.k)?;
    let mut rng = StdRng::seed_from_u64(config.seed);
    let mut trace = Vec::with_capacity(config.rounds);

    for round in 1..=config.rounds {
        let user = &users[(round - 1) % users.len()];
        let ranking = rank_top_k(&user.state, catalog, catalog.len())?;
        let recommended = ranking.entries[0].id.clone();
        let hit = user.positives.contains(&recommended);
        let event = FeedbackEvent {
            user_state: user.state.clone(),
            content_id: recommended.clone(),
            dwell_time: if hit {
                rng.random_range(45.0..120.0)
            } else {
                rng.random_range(0.0..20.0)
            },
            replays: if hit { rng.random_range(1..=3) } else { 0 },
            liked: rng.random::<f64>() < if hit { 0.8 } else { 0.05 },
        };
        let r = feedback_update(&event, catalog, config.step, &config.reward)?;
        let rank_of_best_item = user
            .positives
            .iter()
            .filter_map(|p| ranking.rank_of(p))
            .min()
            .unwrap_or(0);
        trace.push(TraceRow {
            round,
            user_id: user.id.clone(),
            recommended_id: recommended,
            reward: r,
            rank_of_best_item,
        });
    }

    let after = summarize(users, catalog, config.k)?;
    Ok(Simulation {
        trace,
        before,
        after,
    })
}

/// Render a trace as CSV with the canonical column order.
pub fn trace_to_csv(trace: &[TraceRow]) -> String {
    let mut out = String::from("round,user_id,recommended_id,reward,rank_of_best_item\n");
    for row in trace {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            row.round, row.user_id, row.recommended_id, row.reward, row.rank_of_best_item
        ));
    }
    out
}
