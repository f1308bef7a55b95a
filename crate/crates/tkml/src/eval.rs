//! Label consistency score, top-k set extraction, ASR/Pert/UASR metrics, and
//! the Best/Random/Worst target-selection strategies.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::str::FromStr;

use crate::attack::TargetSet;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::predictor::Predictor;
use crate::topk::{rank_desc, ScoreVector};

/// A non-empty set of label indices over `m` labels; the set view of a
/// multi-hot label vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSet {
    indices: BTreeSet<usize>,
    m: usize,
}

impl LabelSet {
    pub fn new(indices: impl IntoIterator<Item = usize>, m: usize) -> Result<Self> {
        let indices: BTreeSet<usize> = indices.into_iter().collect();
        if indices.is_empty() {
            return Err(Error::invalid_parameter("labels", "empty label set"));
        }
        if let Some(&max) = indices.iter().next_back() {
            if max >= m {
                return Err(Error::invalid_parameter(
                    "labels",
                    format!("label index {max} out of range for m = {m}"),
                ));
            }
        }
        Ok(Self { indices, m })
    }

    pub fn from_multi_hot(y: &[u8]) -> Result<Self> {
        Self::new(
            y.iter()
                .enumerate()
                .filter(|(_, &b)| b != 0)
                .map(|(j, _)| j),
            y.len(),
        )
    }

    pub fn multi_hot(&self) -> Vec<u8> {
        let mut y = vec![0u8; self.m];
        for &j in &self.indices {
            y[j] = 1;
        }
        y
    }

    #[inline]
    pub fn num_labels(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false // construction requires at least one label
    }

    #[inline]
    pub fn contains(&self, j: usize) -> bool {
        self.indices.contains(&j)
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.indices.iter().copied()
    }

    pub fn is_subset(&self, other: &LabelSet) -> bool {
        self.indices.is_subset(&other.indices)
    }
}

/// Indices of the k largest scores under the consistent tie-break.
pub fn top_k_set(scores: &ScoreVector, k: usize) -> Result<LabelSet> {
    let m = scores.len();
    if k < 1 || k >= m {
        return Err(Error::invalid_parameter(
            "k",
            format!("k = {k} out of range [1, {})", m),
        ));
    }
    let ranked = rank_desc(scores);
    LabelSet::new(ranked.sorted_indices[..k].iter().copied(), m)
}

/// Top-k label consistency score E: 1 iff one set contains the other
/// (equality included), else 0. E = 0 defines attack success.
pub fn consistency(truth: &LabelSet, predicted: &LabelSet) -> u8 {
    debug_assert_eq!(truth.num_labels(), predicted.num_labels());
    u8::from(truth.is_subset(predicted) || predicted.is_subset(truth))
}

/// Per-instance outcome feeding the ASR/Pert aggregates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalRecord {
    pub instance_id: usize,
    pub truth: LabelSet,
    pub success: bool,
    pub perturbation_norm: f64,
    pub input_dim: usize,
}

/// Attack success rate: fraction of records with E = 0.
pub fn asr(records: &[EvalRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::invalid_parameter("records", "no records"));
    }
    let successes = records.iter().filter(|r| r.success).count();
    Ok(successes as f64 / records.len() as f64)
}

/// Average per-dimension l2 perturbation over successful attacks:
/// `(1/(n*ASR)) * sum_i ||z_i||_2 * 1[success_i] / d_i`.
///
/// Returns `None` when no attack succeeded (the metric is undefined).
pub fn pert(records: &[EvalRecord]) -> Result<Option<f64>> {
    let rate = asr(records)?;
    if rate == 0.0 {
        return Ok(None);
    }
    let masked_sum: f64 = records
        .iter()
        .filter(|r| r.success)
        .map(|r| r.perturbation_norm / r.input_dim as f64)
        .sum();
    Ok(Some(masked_sum / (records.len() as f64 * rate)))
}

/// Universal attack success rate: fraction of instances fooled by one shared
/// perturbation, evaluated at the box-clipped `x_i + z`.
pub fn uasr(model: &dyn Predictor, dataset: &Dataset, z: &[f64], k: usize) -> Result<f64> {
    if dataset.instances.is_empty() {
        return Err(Error::invalid_parameter("dataset", "no instances"));
    }
    if z.len() != dataset.d {
        return Err(Error::ShapeMismatch {
            expected: dataset.d,
            actual: z.len(),
        });
    }
    let mut fooled = 0usize;
    for inst in &dataset.instances {
        let x: Vec<f64> = inst
            .x
            .iter()
            .zip(z)
            .map(|(&xi, &zi)| (xi + zi).clamp(-1.0, 1.0))
            .collect();
        let scores = model.predict(&x)?;
        if consistency(&inst.truth, &top_k_set(&scores, k)?) == 0 {
            fooled += 1;
        }
    }
    Ok(fooled as f64 / dataset.instances.len() as f64)
}

/// How target labels are picked among the non-true labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TargetStrategy {
    /// Highest-scoring non-true labels (the runner-ups, easiest to plant).
    Best,
    /// Uniform sample without replacement.
    Random,
    /// Lowest-scoring non-true labels (hardest to plant).
    Worst,
}

impl FromStr for TargetStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "best" => Ok(TargetStrategy::Best),
            "random" => Ok(TargetStrategy::Random),
            "worst" => Ok(TargetStrategy::Worst),
            other => Err(Error::invalid_parameter(
                "strategy",
                format!("unknown strategy `{other}` (expected best|random|worst)"),
            )),
        }
    }
}

impl std::fmt::Display for TargetStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            TargetStrategy::Best => "best",
            TargetStrategy::Random => "random",
            TargetStrategy::Worst => "worst",
        };
        f.write_str(name)
    }
}

/// Pick k non-true labels per the strategy. Random selection is
/// seed-deterministic.
pub fn select_targets(
    scores: &ScoreVector,
    truth: &LabelSet,
    k: usize,
    strategy: TargetStrategy,
    seed: u64,
) -> Result<TargetSet> {
    let m = scores.len();
    let non_true: Vec<usize> = (0..m).filter(|&j| !truth.contains(j)).collect();
    if non_true.len() < k {
        return Err(Error::invalid_parameter(
            "k",
            format!("only {} non-true labels available, need {k}", non_true.len()),
        ));
    }
    let chosen: Vec<usize> = match strategy {
        TargetStrategy::Best => rank_desc(scores)
            .sorted_indices
            .into_iter()
            .filter(|j| !truth.contains(*j))
            .take(k)
            .collect(),
        TargetStrategy::Worst => rank_desc(scores)
            .sorted_indices
            .into_iter()
            .rev()
            .filter(|j| !truth.contains(*j))
            .take(k)
            .collect(),
        TargetStrategy::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            non_true.choose_multiple(&mut rng, k).copied().collect()
        }
    };
    TargetSet::new(chosen, truth, k)
}
