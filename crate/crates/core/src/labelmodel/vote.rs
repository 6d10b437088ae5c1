use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{CandidateLabel, Choice, ProbLabel};
use crate::error::{Error, Result};
use crate::heuristics::LabelMatrix;

use super::generative::GenerativeModel;

/// Relative tolerance under which two tallies count as tied.
pub const TIE_TOLERANCE: f64 = 1e-12;

/// Per-heuristic vote weights in [0, 1], aligned with label-matrix columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VoteWeights(Vec<f64>);

impl VoteWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if let Some(bad) = weights.iter().find(|w| !(0.0..=1.0).contains(*w)) {
            return Err(Error::Data(format!("vote weight {bad} outside [0, 1]")));
        }
        Ok(VoteWeights(weights))
    }

    pub fn uniform(n: usize) -> Self {
        VoteWeights(vec![1.0; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// How a tied row is resolved.
#[derive(Debug, Clone, Copy)]
pub enum TiePolicy<'a> {
    /// Seeded fair coin, one draw per tied row in row order.
    Random { seed: u64 },
    /// Re-tally with the generative model's accuracy weights, then a seeded coin.
    GenerativeWeights { model: &'a GenerativeModel, seed: u64 },
    AbstainOnTie,
}

impl TiePolicy<'_> {
    fn seed(&self) -> u64 {
        match self {
            TiePolicy::Random { seed } | TiePolicy::GenerativeWeights { seed, .. } => *seed,
            TiePolicy::AbstainOnTie => 0,
        }
    }
}

fn tied(a: f64, b: f64) -> bool {
    (a - b).abs() <= TIE_TOLERANCE * (a.abs() + b.abs()).max(1.0)
}

fn tally(row: &[CandidateLabel], weights: &[f64]) -> (f64, f64) {
    row.iter().zip(weights).fold((0.0, 0.0), |(f, s), (c, w)| match c {
        CandidateLabel::First => (f + w, s),
        CandidateLabel::Second => (f, s + w),
        CandidateLabel::Abstain => (f, s),
    })
}

fn coin(rng: &mut ChaCha8Rng) -> CandidateLabel {
    if rng.gen_bool(0.5) {
        CandidateLabel::First
    } else {
        CandidateLabel::Second
    }
}

fn resolve_tie(row: &[CandidateLabel], policy: &TiePolicy<'_>, rng: &mut ChaCha8Rng) -> CandidateLabel {
    match policy {
        TiePolicy::AbstainOnTie => CandidateLabel::Abstain,
        TiePolicy::Random { .. } => coin(rng),
        TiePolicy::GenerativeWeights { model, .. } => {
            let (f, s) = tally(row, &model.w_acc);
            if tied(f, s) {
                coin(rng)
            } else if f > s {
                CandidateLabel::First
            } else {
                CandidateLabel::Second
            }
        }
    }
}

fn check_policy(policy: &TiePolicy<'_>, m: usize) -> Result<()> {
    if let TiePolicy::GenerativeWeights { model, .. } = policy {
        if model.n_heuristics() != m {
            return Err(Error::Dimension { expected: m, actual: model.n_heuristics() });
        }
    }
    Ok(())
}

/// Unweighted vote per row; abstentions are ignored and all-abstain rows are ties.
pub fn majority_vote(l: &LabelMatrix, tie: TiePolicy<'_>) -> Result<Vec<CandidateLabel>> {
    check_policy(&tie, l.n_heuristics())?;
    let mut rng = ChaCha8Rng::seed_from_u64(tie.seed());
    Ok(l
        .rows()
        .map(|row| {
            let first = row.iter().filter(|c| **c == CandidateLabel::First).count();
            let second = row.iter().filter(|c| **c == CandidateLabel::Second).count();
            match first.cmp(&second) {
                std::cmp::Ordering::Greater => CandidateLabel::First,
                std::cmp::Ordering::Less => CandidateLabel::Second,
                std::cmp::Ordering::Equal => resolve_tie(row, &tie, &mut rng),
            }
        })
        .collect())
}

/// Popularity-weighted vote: each heuristic contributes its weight to the side it votes for.
pub fn weighted_vote(l: &LabelMatrix, weights: &VoteWeights, tie: TiePolicy<'_>) -> Result<Vec<CandidateLabel>> {
    if weights.len() != l.n_heuristics() {
        return Err(Error::Dimension { expected: l.n_heuristics(), actual: weights.len() });
    }
    check_policy(&tie, l.n_heuristics())?;
    let mut rng = ChaCha8Rng::seed_from_u64(tie.seed());
    Ok(l
        .rows()
        .map(|row| {
            let (f, s) = tally(row, weights.as_slice());
            if tied(f, s) {
                resolve_tie(row, &tie, &mut rng)
            } else if f > s {
                CandidateLabel::First
            } else {
                CandidateLabel::Second
            }
        })
        .collect())
}

/// Most probable label per row; rows at exactly 0.5 take a seeded coin.
pub fn round_labels(p: &[ProbLabel], seed: u64) -> Vec<Choice> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    p.iter()
        .map(|p| {
            let v = p.p_first();
            if tied(v, 0.5) {
                if rng.gen_bool(0.5) {
                    Choice::First
                } else {
                    Choice::Second
                }
            } else if v > 0.5 {
                Choice::First
            } else {
                Choice::Second
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use CandidateLabel::{Abstain as A, First as F, Second as S};

    fn m(rows: &[&[CandidateLabel]]) -> LabelMatrix {
        LabelMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn strict_majority_wins() {
        let l = m(&[&[F, F, S]]);
        assert_eq!(majority_vote(&l, TiePolicy::AbstainOnTie).unwrap(), vec![F]);
    }

    #[test]
    fn tie_abstains_under_abstain_policy() {
        let l = m(&[&[F, S, A]]);
        assert_eq!(majority_vote(&l, TiePolicy::AbstainOnTie).unwrap(), vec![A]);
    }

    #[test]
    fn all_abstain_row_is_seeded_coin() {
        let l = m(&[&[A, A, A], &[A, A, A], &[A, A, A], &[A, A, A], &[A, A, A], &[A, A, A]]);
        let a = majority_vote(&l, TiePolicy::Random { seed: 7 }).unwrap();
        let b = majority_vote(&l, TiePolicy::Random { seed: 7 }).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|c| *c != A));
    }

    #[test]
    fn weights_one_hot_follow_column() {
        let l = m(&[&[F, S, S], &[S, F, F], &[A, F, S], &[F, A, A]]);
        let w = VoteWeights::new(vec![1.0, 0.0, 0.0]).unwrap();
        let out = weighted_vote(&l, &w, TiePolicy::AbstainOnTie).unwrap();
        assert_eq!(out[0], F);
        assert_eq!(out[1], S);
        assert_eq!(out[3], F);
        // column 0 abstains on row 2: zero-weight tallies tie
        assert_eq!(out[2], A);
    }

    #[test]
    fn popularity_weights_outvote_single_heuristic() {
        // younger 0.684 says First, drinks-less 0.542 and no-health 0.420 say Second.
        let l = m(&[&[F, S, S]]);
        let w = VoteWeights::new(vec![0.684, 0.542, 0.420]).unwrap();
        assert_eq!(weighted_vote(&l, &w, TiePolicy::AbstainOnTie).unwrap(), vec![S]);
    }

    #[test]
    fn uniform_weights_match_majority() {
        let l = m(&[&[F, S, A], &[F, F, S], &[A, A, A], &[S, A, A]]);
        let w = VoteWeights::new(vec![0.3, 0.3, 0.3]).unwrap();
        let tie = TiePolicy::Random { seed: 3 };
        assert_eq!(weighted_vote(&l, &w, tie).unwrap(), majority_vote(&l, tie).unwrap());
    }

    #[test]
    fn weight_length_mismatch() {
        let l = m(&[&[F, S]]);
        let w = VoteWeights::new(vec![0.5]).unwrap();
        assert!(matches!(weighted_vote(&l, &w, TiePolicy::AbstainOnTie), Err(Error::Dimension { .. })));
    }

    #[test]
    fn weights_outside_unit_interval_rejected() {
        assert!(VoteWeights::new(vec![1.5]).is_err());
        assert!(VoteWeights::new(vec![f64::NAN]).is_err());
    }

    #[test]
    fn generative_tie_break_uses_accuracy_weights() {
        let model = GenerativeModel::from_weights(vec![0.0, 0.0], vec![2.0, 0.5], vec![], vec![]).unwrap();
        let l = m(&[&[F, S], &[S, F]]);
        let out = majority_vote(&l, TiePolicy::GenerativeWeights { model: &model, seed: 1 }).unwrap();
        assert_eq!(out, vec![F, S]);
        let three = m(&[&[F, S, A]]);
        assert!(majority_vote(&three, TiePolicy::GenerativeWeights { model: &model, seed: 1 }).is_err());
    }

    #[test]
    fn rounding() {
        let p: Vec<_> = [0.9, 0.2].iter().map(|v| ProbLabel::new(*v).unwrap()).collect();
        assert_eq!(round_labels(&p, 0), vec![Choice::First, Choice::Second]);
        let half = vec![ProbLabel::new(0.5).unwrap(); 32];
        let a = round_labels(&half, 11);
        assert_eq!(a, round_labels(&half, 11));
        assert!(a.contains(&Choice::First) && a.contains(&Choice::Second));
    }
}
