//! Synthetic kidney-exchange respondents who decide lexicographically.
//!
//! A respondent's strategy is an ordering of (feature, direction) pairs over
//! the three patient features: the first feature on which the two patients
//! differ decides, in that strategy's direction. Orderings are built by
//! drawing strategies one at a time with probability proportional to their
//! popularity, never reusing a feature; the population receives each of the
//! 48 possible orderings in proportion to its probability (largest-remainder
//! quotas), so small populations still match the target mix.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::domain::{Alternative, Choice, Dataset, Scenario, Schema};
use crate::error::{Error, Result};
use crate::heuristics::KE_STRATEGIES;
use crate::ingest::{ke_factorial_design, ke_scenario_type};
use crate::labelmodel::StrategyRanking;

/// Mean Borda counts reported for the six strategies, in [`KE_STRATEGIES`] order.
pub const PUBLISHED_BORDA: [f64; 6] = [3.42, 2.71, 2.10, 0.11, 0.04, 0.19];

/// Contests per respondent in the complete design.
pub const CONTESTS: usize = 28;

#[derive(Debug, Clone, PartialEq)]
pub struct PopulationConfig {
    pub n_rows: usize,
    /// Strategy popularity, in [`KE_STRATEGIES`] order.
    pub popularity: [f64; 6],
    /// Probability that a respondent answers against their own strategy.
    pub noise: f64,
    pub seed: u64,
}

impl Default for PopulationConfig {
    fn default() -> Self {
        PopulationConfig { n_rows: 5000, popularity: PUBLISHED_BORDA, noise: 0.05, seed: 0 }
    }
}

/// Strategy `s` on features `(first, second)`: `None` when the feature ties.
pub fn strategy_choice(s: usize, first: &[i64; 3], second: &[i64; 3]) -> Option<Choice> {
    let f = s % 3;
    if first[f] == second[f] {
        return None;
    }
    // The first three strategies prefer the 0 value (younger, drinks less, healthy).
    let prefers_zero = s < 3;
    let first_wins = (first[f] == 0) == prefers_zero;
    Some(if first_wins { Choice::First } else { Choice::Second })
}

/// Decision of a lexicographic ordering of strategies.
pub fn ordering_choice(ordering: &[usize], first: &[i64; 3], second: &[i64; 3]) -> Option<Choice> {
    ordering.iter().find_map(|&s| strategy_choice(s, first, second))
}

/// Every ordering of three strategies that use distinct features, with its
/// probability under sequential popularity-proportional draws.
pub fn ordering_distribution(popularity: &[f64; 6]) -> Result<Vec<(Vec<usize>, f64)>> {
    if popularity.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err(Error::Config("strategy popularity must be finite and non-negative".into()));
    }
    fn go(pop: &[f64; 6], prefix: &mut Vec<usize>, p: f64, out: &mut Vec<(Vec<usize>, f64)>) {
        if prefix.len() == 3 {
            out.push((prefix.clone(), p));
            return;
        }
        let open: Vec<usize> = (0..6).filter(|s| prefix.iter().all(|u| u % 3 != s % 3)).collect();
        let total: f64 = open.iter().map(|&s| pop[s]).sum();
        for s in open {
            // A feature nobody prefers in either direction is drawn uniformly.
            let q = if total > 0.0 { pop[s] / total } else { 1.0 / (6 - 2 * prefix.len()) as f64 };
            if q > 0.0 {
                prefix.push(s);
                go(pop, prefix, p * q, out);
                prefix.pop();
            }
        }
    }
    let mut out = Vec::new();
    go(popularity, &mut Vec::new(), 1.0, &mut out);
    Ok(out)
}

/// Largest-remainder allocation of `n` units over `probs`; ties go to the earlier entry.
fn quotas(probs: &[f64], n: usize) -> Vec<usize> {
    let exact: Vec<f64> = probs.iter().map(|p| p * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut left = n - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    for i in order {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    counts
}

#[derive(Debug, Clone)]
pub struct Population {
    pub dataset: Dataset,
    /// Coded rankings: the respondent's ordering as ranks 1, 2, 3.
    pub rankings: Vec<StrategyRanking>,
    /// Each respondent's ordering, as indices into [`KE_STRATEGIES`].
    pub orderings: Vec<(String, Vec<usize>)>,
}

fn profile(a: &Alternative) -> [i64; 3] {
    [0, 1, 2].map(|k| a.counts[k].expect("factorial profiles are complete"))
}

/// Respondents answer all 28 contests, each in a shuffled order with randomly
/// presented sides; the output is cut at `n_rows` scenarios.
pub fn ke_population(cfg: &PopulationConfig) -> Result<Population> {
    if !(0.0..=1.0).contains(&cfg.noise) {
        return Err(Error::Config("noise must lie in [0, 1]".into()));
    }
    if cfg.n_rows == 0 {
        return Err(Error::Config("population needs at least one row".into()));
    }
    let dist = ordering_distribution(&cfg.popularity)?;
    let n_resp = cfg.n_rows.div_ceil(CONTESTS);
    let counts = quotas(&dist.iter().map(|(_, p)| *p).collect::<Vec<_>>(), n_resp);
    let mut assigned: Vec<&Vec<usize>> = dist.iter().zip(&counts).flat_map(|((o, _), &c)| std::iter::repeat_n(o, c)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    assigned.shuffle(&mut rng);

    let design = ke_factorial_design();
    let mut scenarios = Vec::with_capacity(cfg.n_rows);
    let mut rankings = Vec::with_capacity(n_resp);
    let mut orderings = Vec::with_capacity(n_resp);
    'outer: for (r, ordering) in assigned.into_iter().enumerate() {
        let rid = format!("r{r:04}");
        rankings.push(StrategyRanking::new(rid.clone(), ordering.iter().enumerate().map(|(k, &s)| (KE_STRATEGIES[s], k as u32 + 1))));
        orderings.push((rid.clone(), ordering.clone()));
        let mut contests: Vec<&Scenario> = design.scenarios.iter().collect();
        contests.shuffle(&mut rng);
        for c in contests {
            if scenarios.len() == cfg.n_rows {
                break 'outer;
            }
            let (mut first, mut second) = (c.first.clone(), c.second.clone());
            if rng.gen_bool(0.5) {
                std::mem::swap(&mut first, &mut second);
            }
            let mut truth = ordering_choice(ordering, &profile(&first), &profile(&second)).expect("distinct profiles differ");
            if rng.gen_bool(cfg.noise) {
                truth = truth.flip();
            }
            let mut s = Scenario::new(format!("{rid}:{}", c.id), first, second);
            s.scenario_type = ke_scenario_type(&s.first, &s.second);
            s.respondent_id = Some(rid.clone());
            s.truth = Some(truth);
            scenarios.push(s);
        }
    }
    Ok(Population { dataset: Dataset::new(Schema::kidney_exchange(), scenarios), rankings, orderings })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forty_eight_orderings_sum_to_one() {
        let d = ordering_distribution(&PUBLISHED_BORDA).unwrap();
        assert_eq!(d.len(), 48);
        assert!((d.iter().map(|(_, p)| p).sum::<f64>() - 1.0).abs() < 1e-12);
        let first_younger: f64 = d.iter().filter(|(o, _)| o[0] == 0).map(|(_, p)| p).sum();
        assert!((first_younger - 3.42 / 8.57).abs() < 1e-12);
    }

    #[test]
    fn zero_popularity_orderings_skipped() {
        let d = ordering_distribution(&[1.0, 1.0, 1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(d.len(), 6);
    }

    #[test]
    fn quotas_are_exact_totals() {
        assert_eq!(quotas(&[0.5, 0.3, 0.2], 7), vec![4, 2, 1]);
        assert_eq!(quotas(&[1.0 / 3.0; 3], 4), vec![2, 1, 1]);
    }

    #[test]
    fn strategies_and_opposites() {
        let (old, young) = ([1, 0, 0], [0, 0, 0]);
        assert_eq!(strategy_choice(0, &old, &young), Some(Choice::Second));
        assert_eq!(strategy_choice(3, &old, &young), Some(Choice::First));
        assert_eq!(strategy_choice(1, &old, &young), None);
        assert_eq!(ordering_choice(&[1, 0, 2], &[1, 0, 0], &[0, 1, 0]), Some(Choice::First));
    }

    #[test]
    fn population_shape_and_determinism() {
        let cfg = PopulationConfig { n_rows: 100, ..Default::default() };
        let p = ke_population(&cfg).unwrap();
        assert_eq!(p.dataset.len(), 100);
        assert_eq!(p.rankings.len(), 4);
        let q = ke_population(&cfg).unwrap();
        assert_eq!(p.dataset, q.dataset);
        let noiseless = ke_population(&PopulationConfig { noise: 0.0, ..cfg }).unwrap();
        for s in &noiseless.dataset.scenarios {
            let o = &noiseless.orderings.iter().find(|(r, _)| Some(r) == s.respondent_id.as_ref()).unwrap().1;
            assert_eq!(Some(s.truth.unwrap()), ordering_choice(o, &profile(&s.first), &profile(&s.second)));
        }
    }
}
