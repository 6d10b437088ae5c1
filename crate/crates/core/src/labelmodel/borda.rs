//! Borda popularity of ranked heuristic strategies.
//!
//! A respondent's Borda count for a strategy is the number of other strategies
//! ranked strictly below it. Strategies the respondent did not mention share
//! one implicit rank just below their worst explicit rank.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::vote::VoteWeights;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StrategyRanking {
    pub respondent_id: String,
    /// 1 = most preferred; equal values are ties.
    pub ranks: BTreeMap<String, u32>,
}

impl StrategyRanking {
    pub fn new<S: Into<String>>(respondent_id: impl Into<String>, ranks: impl IntoIterator<Item = (S, u32)>) -> Self {
        StrategyRanking {
            respondent_id: respondent_id.into(),
            ranks: ranks.into_iter().map(|(k, v)| (k.into(), v)).collect(),
        }
    }

    fn effective_ranks(&self, strategies: &[String]) -> Result<Vec<u32>> {
        if self.ranks.is_empty() {
            return Err(Error::Data(format!("ranking of `{}` has no explicit ranks", self.respondent_id)));
        }
        for (name, &rank) in &self.ranks {
            if !strategies.iter().any(|s| s == name) {
                return Err(Error::Data(format!(
                    "ranking of `{}` names unknown strategy `{name}`",
                    self.respondent_id
                )));
            }
            if rank == 0 {
                return Err(Error::Data(format!(
                    "ranking of `{}` gives `{name}` non-positive rank",
                    self.respondent_id
                )));
            }
        }
        let implicit = self.ranks.values().max().copied().unwrap_or(0) + 1;
        Ok(strategies
            .iter()
            .map(|s| self.ranks.get(s).copied().unwrap_or(implicit))
            .collect())
    }

    /// Borda count of every strategy for this respondent, in `strategies` order.
    pub fn borda(&self, strategies: &[String]) -> Result<Vec<u32>> {
        let ranks = self.effective_ranks(strategies)?;
        Ok(ranks
            .iter()
            .map(|r| ranks.iter().filter(|other| *other > r).count() as u32)
            .collect())
    }
}

/// Mean Borda count per strategy over all respondents.
pub fn borda_counts(rankings: &[StrategyRanking], strategies: &[String]) -> Result<Vec<f64>> {
    if rankings.is_empty() {
        return Err(Error::Data("no strategy rankings supplied".into()));
    }
    let mut sums = vec![0u64; strategies.len()];
    for r in rankings {
        for (acc, c) in sums.iter_mut().zip(r.borda(strategies)?) {
            *acc += u64::from(c);
        }
    }
    let n = rankings.len() as f64;
    Ok(sums.into_iter().map(|s| s as f64 / n).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scaling {
    /// Divide by the largest possible count, S - 1.
    #[default]
    MaxCount,
    /// Min-max normalize the observed counts.
    MinMax,
}

impl Scaling {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "max" | "max_count" => Ok(Scaling::MaxCount),
            "minmax" | "min_max" => Ok(Scaling::MinMax),
            other => Err(Error::Config(format!("unknown scaling `{other}` (expected max or minmax)"))),
        }
    }
}

/// Maps mean Borda counts onto vote weights in [0, 1].
pub fn scale_weights(counts: &[f64], n_strategies: usize, scaling: Scaling) -> Result<VoteWeights> {
    if n_strategies < 2 {
        return Err(Error::Data(format!("need at least 2 strategies, got {n_strategies}")));
    }
    let max_count = (n_strategies - 1) as f64;
    if let Some(bad) = counts.iter().find(|c| !(0.0..=max_count).contains(*c)) {
        return Err(Error::Data(format!("Borda count {bad} outside [0, {max_count}]")));
    }
    let weights = match scaling {
        Scaling::MaxCount => counts.iter().map(|c| (c / max_count).clamp(0.0, 1.0)).collect(),
        Scaling::MinMax => {
            let lo = counts.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = counts.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if hi > lo {
                counts.iter().map(|c| ((c - lo) / (hi - lo)).clamp(0.0, 1.0)).collect()
            } else {
                vec![1.0; counts.len()]
            }
        }
    };
    VoteWeights::new(weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heuristics::KE_STRATEGIES;

    fn strategies() -> Vec<String> {
        KE_STRATEGIES.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn younger_then_drinks_less() {
        let r = StrategyRanking::new("r1", [("choose_younger", 1), ("choose_drinks_less", 2)]);
        assert_eq!(r.borda(&strategies()).unwrap(), vec![5, 4, 0, 0, 0, 0]);
    }

    #[test]
    fn all_tied_scores_zero() {
        let r = StrategyRanking::new("r1", KE_STRATEGIES.iter().map(|s| (*s, 1)));
        assert_eq!(r.borda(&strategies()).unwrap(), vec![0; 6]);
    }

    #[test]
    fn mean_over_respondents() {
        let rs = vec![
            StrategyRanking::new("a", [("choose_younger", 1)]),
            StrategyRanking::new("b", [("choose_drinks_less", 1)]),
        ];
        let c = borda_counts(&rs, &strategies()).unwrap();
        assert_eq!(c, vec![2.5, 2.5, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn unknown_strategy_and_zero_rank_rejected() {
        let bad = StrategyRanking::new("a", [("choose_taller", 1)]);
        assert!(borda_counts(&[bad], &strategies()).is_err());
        let zero = StrategyRanking::new("a", [("choose_younger", 0)]);
        assert!(borda_counts(&[zero], &strategies()).is_err());
        assert!(borda_counts(&[], &strategies()).is_err());
    }

    #[test]
    fn scaling_by_max_count() {
        let w = scale_weights(&[3.42, 0.0, 5.0], 6, Scaling::MaxCount).unwrap();
        assert!((w.as_slice()[0] - 0.684).abs() < 1e-12);
        assert_eq!(w.as_slice()[1], 0.0);
        assert_eq!(w.as_slice()[2], 1.0);
        assert!(scale_weights(&[5.5], 6, Scaling::MaxCount).is_err());
        assert!(scale_weights(&[-0.1], 6, Scaling::MaxCount).is_err());
        assert!(scale_weights(&[0.0], 1, Scaling::MaxCount).is_err());
    }

    #[test]
    fn scaling_min_max() {
        let w = scale_weights(&[1.0, 2.0, 3.0], 6, Scaling::MinMax).unwrap();
        assert_eq!(w.as_slice(), &[0.0, 0.5, 1.0]);
        let w = scale_weights(&[2.0, 2.0], 6, Scaling::MinMax).unwrap();
        assert_eq!(w.as_slice(), &[1.0, 1.0]);
    }
}
