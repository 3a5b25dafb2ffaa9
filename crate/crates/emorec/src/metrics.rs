//! Classification and ranking evaluation: accuracy/precision/recall/F1 with
//! macro averaging, and MAP, NDCG@k, HR@k over binary relevance judgments.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("predictions ({predictions}) and labels ({labels}) differ in length")]
    LengthMismatch { predictions: usize, labels: usize },
    #[error("empty input: need at least one prediction")]
    Empty,
    #[error("class index {index} out of range for {classes} classes")]
    ClassOutOfRange { index: usize, classes: usize },
    #[error("ranked ids contain duplicate {0:?}")]
    DuplicateRankedId(String),
}

/// Per-class confusion tallies for a multi-class problem.
#[derive(Debug, Clone)]
pub struct ConfusionCounts {
    true_positive: Vec<usize>,
    false_positive: Vec<usize>,
    false_negative: Vec<usize>,
    total: usize,
}

impl ConfusionCounts {
    pub fn from_predictions(
        predictions: &[usize],
        labels: &[usize],
        classes: usize,
    ) -> Result<Self, MetricsError> {
        if predictions.len() != labels.len() {
            return Err(MetricsError::LengthMismatch {
                predictions: predictions.len(),
                labels: labels.len(),
            });
        }
        if predictions.is_empty() {
            return Err(MetricsError::Empty);
        }
        let mut counts = Self {
            true_positive: vec![0; classes],
            false_positive: vec![0; classes],
            false_negative: vec![0; classes],
            total: predictions.len(),
        };
        for (&p, &l) in predictions.iter().zip(labels) {
            for (index, name) in [(p, "prediction"), (l, "label")] {
                if index >= classes {
                    let _ = name;
                    return Err(MetricsError::ClassOutOfRange { index, classes });
                }
            }
            if p == l {
                counts.true_positive[p] += 1;
            } else {
                counts.false_positive[p] += 1;
                counts.false_negative[l] += 1;
            }
        }
        Ok(counts)
    }

    pub fn classes(&self) -> usize {
        self.true_positive.len()
    }

    pub fn accuracy(&self) -> f64 {
        self.true_positive.iter().sum::<usize>() as f64 / self.total as f64
    }

    /// Per-class precision; 0/0 is defined as 0.
    pub fn precision(&self, class: usize) -> f64 {
        ratio_or_zero(
            self.true_positive[class],
            self.true_positive[class] + self.false_positive[class],
        )
    }

    /// Per-class recall; 0/0 is defined as 0.
    pub fn recall(&self, class: usize) -> f64 {
        ratio_or_zero(
            self.true_positive[class],
            self.true_positive[class] + self.false_negative[class],
        )
    }

    /// Per-class F1 = 2PR/(P+R); 0 when P+R = 0.
    pub fn f1(&self, class: usize) -> f64 {
        let p = self.precision(class);
        let r = self.recall(class);
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    fn macro_over(&self, f: impl Fn(usize) -> f64) -> f64 {
        (0..self.classes()).map(f).sum::<f64>() / self.classes() as f64
    }
}

fn ratio_or_zero(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Accuracy plus macro-averaged precision/recall/F1. Absent classes
/// contribute 0 to the macro means.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    pub precision_macro: f64,
    pub recall_macro: f64,
    pub f1_macro: f64,
}

pub fn classification_metrics(
    predictions: &[usize],
    labels: &[usize],
    classes: usize,
) -> Result<ClassificationMetrics, MetricsError> {
    let counts = ConfusionCounts::from_predictions(predictions, labels, classes)?;
    Ok(ClassificationMetrics {
        accuracy: counts.accuracy(),
        precision_macro: counts.macro_over(|c| counts.precision(c)),
        recall_macro: counts.macro_over(|c| counts.recall(c)),
        f1_macro: counts.macro_over(|c| counts.f1(c)),
    })
}

/// One user's ranking against the set of ids judged relevant.
#[derive(Debug, Clone)]
pub struct RankingJudgment {
    ranked: Vec<String>,
    relevant: HashSet<String>,
}

impl RankingJudgment {
    pub fn new(ranked: Vec<String>, relevant: HashSet<String>) -> Result<Self, MetricsError> {
        let mut seen = HashSet::with_capacity(ranked.len());
        for id in &ranked {
            if !seen.insert(id) {
                return Err(MetricsError::DuplicateRankedId(id.clone()));
            }
        }
        Ok(Self { ranked, relevant })
    }

    pub fn ranked(&self) -> &[String] {
        &self.ranked
    }

    pub fn relevant(&self) -> &HashSet<String> {
        &self.relevant
    }
}

/// Average precision: mean over all relevant items of precision at that
/// item's rank. Relevant items missing from the ranking contribute 0; a
/// judgment with no relevant items scores 0.
pub fn average_precision(judgment: &RankingJudgment) -> f64 {
    if judgment.relevant.is_empty() {
        return 0.0;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, id) in judgment.ranked.iter().enumerate() {
        if judgment.relevant.contains(id) {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    sum / judgment.relevant.len() as f64
}

/// Mean of [`average_precision`] over judgments.
pub fn mean_average_precision(judgments: &[RankingJudgment]) -> f64 {
    if judgments.is_empty() {
        return 0.0;
    }
    judgments.iter().map(average_precision).sum::<f64>() / judgments.len() as f64
}

/// Binary-relevance NDCG@k with gain 1 and log₂ discounts; 0 when the
/// judgment has no relevant items.
pub fn ndcg_at_k(judgment: &RankingJudgment, k: usize) -> f64 {
    let dcg: f64 = judgment
        .ranked
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, id)| judgment.relevant.contains(*id))
        .map(|(i, _)| discount(i))
        .sum();
    let ideal: f64 = (0..k.min(judgment.relevant.len())).map(discount).sum();
    if ideal == 0.0 {
        0.0
    } else {
        dcg / ideal
    }
}

fn discount(zero_based_rank: usize) -> f64 {
    1.0 / ((zero_based_rank + 2) as f64).log2()
}

/// Fraction of judgments whose top-k contains at least one relevant id.
pub fn hit_ratio_at_k(judgments: &[RankingJudgment], k: usize) -> f64 {
    if judgments.is_empty() {
        return 0.0;
    }
    let hits = judgments
        .iter()
        .filter(|j| j.ranked.iter().take(k).any(|id| j.relevant.contains(id)))
        .count();
    hits as f64 / judgments.len() as f64
}

/// Per-head classification metrics plus ranking metrics, serialized as the
/// evaluation report. `ndcg_at_10`/`hr_at_10` hold the values at the
/// configured cutoff, which `k` records (10 by default).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub emotion_accuracy: f64,
    pub emotion_precision_macro: f64,
    pub emotion_recall_macro: f64,
    pub emotion_f1_macro: f64,
    pub intent_accuracy: f64,
    pub intent_precision_macro: f64,
    pub intent_recall_macro: f64,
    pub intent_f1_macro: f64,
    pub mean_accuracy: f64,
    pub mean_f1_macro: f64,
    pub map: f64,
    pub ndcg_at_10: f64,
    pub hr_at_10: f64,
    pub k: usize,
}

impl MetricReport {
    pub fn assemble(
        emotion: ClassificationMetrics,
        intent: ClassificationMetrics,
        judgments: &[RankingJudgment],
        k: usize,
    ) -> Self {
        let ndcg = if judgments.is_empty() {
            0.0
        } else {
            judgments.iter().map(|j| ndcg_at_k(j, k)).sum::<f64>() / judgments.len() as f64
        };
        Self {
            emotion_accuracy: emotion.accuracy,
            emotion_precision_macro: emotion.precision_macro,
            emotion_recall_macro: emotion.recall_macro,
            emotion_f1_macro: emotion.f1_macro,
            intent_accuracy: intent.accuracy,
            intent_precision_macro: intent.precision_macro,
            intent_recall_macro: intent.recall_macro,
            intent_f1_macro: intent.f1_macro,
            mean_accuracy: (emotion.accuracy + intent.accuracy) / 2.0,
            mean_f1_macro: (emotion.f1_macro + intent.f1_macro) / 2.0,
            map: mean_average_precision(judgments),
            ndcg_at_10: ndcg,
            hr_at_10: hit_ratio_at_k(judgments, k),
            k,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }
}
