//! Numerical kernel for hinge, ranking, top-k sums, and the variational
//! reformulation of the average-top-k function.
//!
//! The key identity: for scores `f_1..f_m` in `[0,1]` and `1 <= k <= m`,
//!
//! ```text
//! avg_top_k(F) = min over lambda in [0,1] of (1/k)(k*lambda + sum_j [f_j - lambda]_+)
//! ```
//!
//! with the minimum attained at `lambda = f_[k]`, the k-th largest score.
//! This removes the explicit sorting operation from the attack objectives and
//! makes them amenable to subgradient descent.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hinge function `[a]_+ = max(0, a)`.
#[inline]
pub fn hinge(a: f64) -> f64 {
    a.max(0.0)
}

/// Calibrated per-label prediction scores for one instance, each in `[0,1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreVector(Vec<f64>);

impl ScoreVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::invalid_parameter(
                "scores",
                format!("need at least 2 labels, got {}", values.len()),
            ));
        }
        for (j, &v) in values.iter().enumerate() {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid_parameter(
                    "scores",
                    format!("entry {j} = {v} is not a finite value in [0,1]"),
                ));
            }
        }
        Ok(Self(values))
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.0.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false // construction requires at least two entries
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    #[inline]
    pub fn get(&self, j: usize) -> f64 {
        self.0[j]
    }
}

/// Scores sorted in descending order together with the permutation that
/// produced them. Ties keep ascending original-index order.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedScores {
    pub sorted_values: Vec<f64>,
    pub sorted_indices: Vec<usize>,
}

/// Stable descending sort; among equal values the smaller original index
/// ranks first.
pub fn rank_desc(scores: &ScoreVector) -> RankedScores {
    let v = scores.values();
    let mut indices: Vec<usize> = (0..v.len()).collect();
    // stable sort: equal values keep ascending index order
    indices.sort_by(|&a, &b| v[b].partial_cmp(&v[a]).expect("scores are finite"));
    let sorted_values = indices.iter().map(|&i| v[i]).collect();
    RankedScores {
        sorted_values,
        sorted_indices: indices,
    }
}

fn check_k(k: usize, m: usize) -> Result<()> {
    if k < 1 || k > m {
        return Err(Error::invalid_parameter(
            "k",
            format!("k = {k} out of range [1, {m}]"),
        ));
    }
    Ok(())
}

/// Sum of the k largest scores.
pub fn top_k_sum(scores: &ScoreVector, k: usize) -> Result<f64> {
    check_k(k, scores.len())?;
    let ranked = rank_desc(scores);
    Ok(ranked.sorted_values[..k].iter().sum())
}

/// Average of the k largest scores; a tight convex upper bound on the k-th
/// largest score.
pub fn avg_top_k(scores: &ScoreVector, k: usize) -> Result<f64> {
    Ok(top_k_sum(scores, k)? / k as f64)
}

/// Variational form `(1/k)(k*lambda + sum_j [f_j - lambda]_+)`.
///
/// Minimizing over `lambda in [0,1]` recovers [`avg_top_k`].
pub fn avg_top_k_variational(scores: &ScoreVector, k: usize, lambda: f64) -> Result<f64> {
    check_k(k, scores.len())?;
    if !lambda.is_finite() || !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid_parameter(
            "lambda",
            format!("lambda = {lambda} must lie in [0,1]"),
        ));
    }
    let hinge_sum: f64 = scores.values().iter().map(|&f| hinge(f - lambda)).sum();
    Ok((k as f64 * lambda + hinge_sum) / k as f64)
}

/// A minimizer of the variational form: the k-th largest score `f_[k]`.
pub fn optimal_lambda(scores: &ScoreVector, k: usize) -> Result<f64> {
    check_k(k, scores.len())?;
    Ok(rank_desc(scores).sorted_values[k - 1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sv(values: &[f64]) -> ScoreVector {
        ScoreVector::new(values.to_vec()).unwrap()
    }

    #[test]
    fn hinge_branches() {
        assert_eq!(hinge(0.5), 0.5);
        assert_eq!(hinge(-0.3), 0.0);
        assert_eq!(hinge(0.0), 0.0);
    }

    #[test]
    fn score_vector_rejects_bad_entries() {
        assert!(ScoreVector::new(vec![0.5]).is_err());
        assert!(ScoreVector::new(vec![0.5, 1.5]).is_err());
        assert!(ScoreVector::new(vec![0.5, f64::NAN]).is_err());
        assert!(ScoreVector::new(vec![0.0, 1.0]).is_ok());
    }

    #[test]
    fn rank_desc_sorts_descending() {
        let r = rank_desc(&sv(&[0.1, 0.9, 0.5]));
        assert_eq!(r.sorted_values, vec![0.9, 0.5, 0.1]);
        assert_eq!(r.sorted_indices, vec![1, 2, 0]);
    }

    #[test]
    fn rank_desc_tie_break_is_ascending_index() {
        let r = rank_desc(&sv(&[0.5, 0.5, 0.1]));
        assert_eq!(r.sorted_indices, vec![0, 1, 2]);
        let r = rank_desc(&sv(&[0.2, 0.2, 0.2]));
        assert_eq!(r.sorted_indices, vec![0, 1, 2]);
    }

    #[test]
    fn top_k_sum_basic() {
        let s = sv(&[0.9, 0.5, 0.1]);
        assert!((top_k_sum(&s, 2).unwrap() - 1.4).abs() < 1e-15);
        assert!((top_k_sum(&s, 3).unwrap() - 1.5).abs() < 1e-15);
        assert!(top_k_sum(&s, 0).is_err());
        assert!(top_k_sum(&s, 4).is_err());
    }

    #[test]
    fn top_k_sum_matches_sort_oracle() {
        // independent oracle: sort a copy and sum the prefix
        let values: Vec<f64> = (0..20).map(|i| ((i * 7919 % 97) as f64) / 97.0).collect();
        let s = sv(&values);
        let mut sorted = values.clone();
        sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let oracle: f64 = sorted[..7].iter().sum();
        assert!((top_k_sum(&s, 7).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn avg_top_k_basic() {
        let s = sv(&[0.9, 0.5, 0.1]);
        assert!((avg_top_k(&s, 2).unwrap() - 0.7).abs() < 1e-15);
        let c = sv(&[0.3, 0.3, 0.3, 0.3]);
        for k in 1..=4 {
            assert!((avg_top_k(&c, k).unwrap() - 0.3).abs() < 1e-15);
        }
    }

    #[test]
    fn variational_direct_evaluation() {
        // (2*0.5 + [0.9-0.5]_+ + [0.5-0.5]_+ + [0.1-0.5]_+)/2 = (1.0 + 0.4)/2
        let s = sv(&[0.9, 0.5, 0.1]);
        assert!((avg_top_k_variational(&s, 2, 0.5).unwrap() - 0.7).abs() < 1e-15);
        assert!(avg_top_k_variational(&s, 2, -0.1).is_err());
        assert!(avg_top_k_variational(&s, 2, 1.1).is_err());
    }

    #[test]
    fn variational_at_zero_lambda_k_equals_m_is_mean() {
        let s = sv(&[0.2, 0.4, 0.8, 0.6]);
        let mean = 0.5;
        assert!((avg_top_k_variational(&s, 4, 0.0).unwrap() - mean).abs() < 1e-15);
    }

    #[test]
    fn optimal_lambda_is_kth_largest() {
        let s = sv(&[0.9, 0.5, 0.1]);
        assert_eq!(optimal_lambda(&s, 2).unwrap(), 0.5);
        assert_eq!(optimal_lambda(&s, 1).unwrap(), 0.9);
    }

    #[test]
    fn grid_search_attains_minimum_at_optimal_lambda() {
        let values: Vec<f64> = (0..12).map(|i| ((i * 31 % 13) as f64) / 13.0).collect();
        let s = sv(&values);
        let k = 5;
        let at_opt = avg_top_k_variational(&s, k, optimal_lambda(&s, k).unwrap()).unwrap();
        let mut grid_min = f64::INFINITY;
        let mut lam = 0.0;
        while lam <= 1.0 {
            grid_min = grid_min.min(avg_top_k_variational(&s, k, lam).unwrap());
            lam += 1e-4;
        }
        assert!(at_opt <= grid_min + 1e-6);
    }

    proptest! {
        #[test]
        fn lemma1_equivalence(values in proptest::collection::vec(0.0f64..=1.0, 2..30), k_seed in 0usize..100) {
            let s = ScoreVector::new(values).unwrap();
            let k = 1 + k_seed % s.len();
            let direct = avg_top_k(&s, k).unwrap();
            let lam = optimal_lambda(&s, k).unwrap();
            let var = avg_top_k_variational(&s, k, lam).unwrap();
            prop_assert!((direct - var).abs() <= 1e-12 * direct.abs().max(1.0));
        }

        #[test]
        fn lemma1_minimality(values in proptest::collection::vec(0.0f64..=1.0, 2..20), k_seed in 0usize..100, lam in 0.0f64..=1.0) {
            let s = ScoreVector::new(values).unwrap();
            let k = 1 + k_seed % s.len();
            let direct = avg_top_k(&s, k).unwrap();
            prop_assert!(avg_top_k_variational(&s, k, lam).unwrap() >= direct - 1e-12);
        }

        #[test]
        fn lemma2_double_hinge_identity(a in -10.0f64..10.0, x in -10.0f64..10.0, lam in 0.0f64..10.0) {
            // exact equality, not approximate
            prop_assert_eq!(hinge(hinge(a - x) - lam), hinge(a - x - lam));
        }

        #[test]
        fn avg_top_k_bounds_kth_largest(values in proptest::collection::vec(0.0f64..=1.0, 2..20), k_seed in 0usize..100) {
            let s = ScoreVector::new(values).unwrap();
            let k = 1 + k_seed % s.len();
            let fk = rank_desc(&s).sorted_values[k - 1];
            prop_assert!(avg_top_k(&s, k).unwrap() >= fk - 1e-15);
        }

        #[test]
        fn rank_desc_is_permutation(values in proptest::collection::vec(0.0f64..=1.0, 2..20)) {
            let s = ScoreVector::new(values.clone()).unwrap();
            let r = rank_desc(&s);
            let mut seen = vec![false; values.len()];
            for &i in &r.sorted_indices {
                prop_assert!(!seen[i]);
                seen[i] = true;
            }
            // applying the permutation reconstructs the sorted copy
            for (pos, &i) in r.sorted_indices.iter().enumerate() {
                prop_assert_eq!(values[i], r.sorted_values[pos]);
            }
            for w in r.sorted_values.windows(2) {
                prop_assert!(w[0] >= w[1]);
            }
        }
    }
}
