//! Nearest-neighbor matching on propensity scores without replacement.

use std::collections::BTreeSet;

use crate::error::{Error, Result};

/// Matched (treated index, control index) pairs plus treated members left
/// over once the control pool ran out.
#[derive(Debug, Clone)]
pub struct MatchResult {
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_treated: Vec<usize>,
}

impl MatchResult {
    pub fn n_pairs(&self) -> usize {
        self.pairs.len()
    }
}

/// Greedy pass over treated members in descending score order; each consumes
/// the unused control with the closest score. On an exact distance tie the
/// lower-score control wins. An optional caliper drops pairs whose score gap
/// exceeds it.
pub fn match_nearest(
    scores: &[f64],
    treated: &[bool],
    caliper: Option<f64>,
) -> Result<MatchResult> {
    if scores.len() != treated.len() {
        return Err(Error::Validation(
            "scores and treatment flags differ in length".into(),
        ));
    }
    let mut treated_idx: Vec<usize> = (0..scores.len()).filter(|&i| treated[i]).collect();
    let control_idx: Vec<usize> = (0..scores.len()).filter(|&i| !treated[i]).collect();
    if treated_idx.is_empty() {
        return Err(Error::Matching("no treated members".into()));
    }
    if control_idx.is_empty() {
        return Err(Error::Matching("no control members".into()));
    }
    for &i in treated_idx.iter().chain(&control_idx) {
        if !scores[i].is_finite() || scores[i] < 0.0 {
            return Err(Error::Matching(format!("invalid score {}", scores[i])));
        }
    }

    // Descending score, index as tie-break for determinism.
    treated_idx.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap()
            .then(a.cmp(&b))
    });

    // Scores are nonnegative, so the IEEE bit pattern orders like the value.
    let mut pool: BTreeSet<(u64, usize)> = control_idx
        .iter()
        .map(|&i| (scores[i].to_bits(), i))
        .collect();

    let mut pairs = Vec::new();
    let mut unmatched_treated = Vec::new();
    for &t in &treated_idx {
        if pool.is_empty() {
            unmatched_treated.push(t);
            continue;
        }
        let key = (scores[t].to_bits(), usize::MAX);
        let above = pool.range(key..).next().copied();
        let below = pool.range(..key).next_back().copied();
        let chosen = match (below, above) {
            (Some(lo), Some(hi)) => {
                let d_lo = scores[t] - f64::from_bits(lo.0);
                let d_hi = f64::from_bits(hi.0) - scores[t];
                if d_lo <= d_hi {
                    lo
                } else {
                    hi
                }
            }
            (Some(lo), None) => lo,
            (None, Some(hi)) => hi,
            (None, None) => unreachable!("pool checked non-empty"),
        };
        if let Some(cal) = caliper {
            if (scores[t] - f64::from_bits(chosen.0)).abs() > cal {
                unmatched_treated.push(t);
                continue;
            }
        }
        pool.remove(&chosen);
        pairs.push((t, chosen.1));
    }
    Ok(MatchResult {
        pairs,
        unmatched_treated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn picks_nearest_control() {
        let scores = vec![0.9, 0.1, 0.85];
        let treated = vec![true, false, false];
        let m = match_nearest(&scores, &treated, None).unwrap();
        assert_eq!(m.pairs, vec![(0, 2)]);
        assert!(m.unmatched_treated.is_empty());
    }

    #[test]
    fn exhausted_controls_are_reported() {
        let scores = vec![0.9, 0.8, 0.7, 0.5, 0.4];
        let treated = vec![true, true, true, false, false];
        let m = match_nearest(&scores, &treated, None).unwrap();
        assert_eq!(m.n_pairs(), 2);
        assert_eq!(m.unmatched_treated.len(), 1);
        // Lowest-score treated member loses out.
        assert_eq!(m.unmatched_treated[0], 2);
    }

    #[test]
    fn identical_multisets_match_at_zero_distance() {
        let scores = vec![0.2, 0.5, 0.8, 0.2, 0.5, 0.8];
        let treated = vec![true, true, true, false, false, false];
        let m = match_nearest(&scores, &treated, None).unwrap();
        assert_eq!(m.n_pairs(), 3);
        for &(t, c) in &m.pairs {
            assert_eq!(scores[t], scores[c]);
        }
    }

    #[test]
    fn controls_are_never_reused() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let n = rng.gen_range(2..200);
            let scores: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
            let treated: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
            if !treated.iter().any(|&t| t) || treated.iter().all(|&t| t) {
                continue;
            }
            let m = match_nearest(&scores, &treated, None).unwrap();
            let mut used = std::collections::BTreeSet::new();
            for &(_, c) in &m.pairs {
                assert!(used.insert(c), "control {c} reused");
                assert!(!treated[c]);
            }
            let n_treated = treated.iter().filter(|&&t| t).count();
            let n_control = n - n_treated;
            assert_eq!(m.n_pairs(), n_treated.min(n_control));
            assert_eq!(m.n_pairs() + m.unmatched_treated.len(), n_treated);
        }
    }

    #[test]
    fn zero_controls_is_matching_error() {
        let err = match_nearest(&[0.4, 0.6], &[true, true], None);
        assert!(matches!(err, Err(Error::Matching(_))));
    }

    #[test]
    fn caliper_drops_distant_pairs() {
        let scores = vec![0.9, 0.1];
        let treated = vec![true, false];
        let m = match_nearest(&scores, &treated, Some(0.2)).unwrap();
        assert_eq!(m.n_pairs(), 0);
        assert_eq!(m.unmatched_treated, vec![0]);
    }
}
