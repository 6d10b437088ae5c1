//! One entry point for every label model, so experiments can swap them by configuration.

use std::collections::{BTreeMap, BTreeSet};

use crate::domain::{CandidateLabel, Choice, ProbLabel};
use crate::error::{Error, Result};
use crate::heuristics::LabelMatrix;

use super::borda::{borda_counts, scale_weights, Scaling, StrategyRanking};
use super::generative::{fit_generative, GenerativeConfig, GenerativeModel};
use super::vote::{majority_vote, round_labels, weighted_vote, TiePolicy, VoteWeights, TIE_TOLERANCE};

/// Where popularity weights come from; both resolve by heuristic name.
#[derive(Debug, Clone, PartialEq)]
pub enum WeightSource {
    Fixed(BTreeMap<String, f64>),
    /// Borda counts of the coded rankings, restricted to training respondents
    /// when they are known, scaled over `strategies`.
    Rankings { rankings: Vec<StrategyRanking>, strategies: Vec<String>, scaling: Scaling },
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelKind {
    Majority,
    Weighted(WeightSource),
    Generative,
}

impl ModelKind {
    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::Majority => "majority",
            ModelKind::Weighted(_) => "weighted",
            ModelKind::Generative => "generative",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TieKind {
    #[default]
    Random,
    GenerativeWeights,
    Abstain,
}

impl TieKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "random" => Ok(TieKind::Random),
            "genweights" => Ok(TieKind::GenerativeWeights),
            "abstain" => Ok(TieKind::Abstain),
            other => Err(Error::Config(format!("unknown tie policy `{other}` (expected random, genweights or abstain)"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TieKind::Random => "random",
            TieKind::GenerativeWeights => "genweights",
            TieKind::Abstain => "abstain",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregatorSpec {
    pub kind: ModelKind,
    pub tie: TieKind,
    /// Used by the generative model and by the generative tie-break.
    pub generative: GenerativeConfig,
    /// Seed of tie coins and of label rounding.
    pub seed: u64,
}

impl AggregatorSpec {
    pub fn new(kind: ModelKind) -> Self {
        AggregatorSpec { kind, tie: TieKind::Random, generative: GenerativeConfig::default(), seed: 0 }
    }
}

/// An aggregator with its data-dependent parts (weights, generative fit) resolved.
#[derive(Debug, Clone)]
pub struct FittedAggregator {
    pub spec: AggregatorSpec,
    pub heuristic_names: Vec<String>,
    pub weights: Option<VoteWeights>,
    pub model: Option<GenerativeModel>,
}

#[derive(Debug, Clone)]
pub struct Aggregate {
    pub labels: Vec<CandidateLabel>,
    /// Generative marginals, when the generative model produced the labels.
    pub marginals: Option<Vec<ProbLabel>>,
}

fn resolve_weights(source: &WeightSource, names: &[String], respondents: Option<&BTreeSet<String>>) -> Result<VoteWeights> {
    match source {
        WeightSource::Fixed(map) => VoteWeights::new(
            names
                .iter()
                .map(|n| map.get(n).copied().ok_or_else(|| Error::Config(format!("no vote weight for heuristic `{n}`"))))
                .collect::<Result<_>>()?,
        ),
        WeightSource::Rankings { rankings, strategies, scaling } => {
            let chosen: Vec<StrategyRanking> = match respondents {
                Some(rs) => rankings.iter().filter(|r| rs.contains(&r.respondent_id)).cloned().collect(),
                None => rankings.clone(),
            };
            let chosen = if chosen.is_empty() {
                log::warn!("no rankings from training respondents; using all {} rankings", rankings.len());
                rankings.clone()
            } else {
                chosen
            };
            let counts = borda_counts(&chosen, strategies)?;
            let all = scale_weights(&counts, strategies.len(), *scaling)?;
            VoteWeights::new(
                names
                    .iter()
                    .map(|n| {
                        strategies
                            .iter()
                            .position(|s| s == n)
                            .map(|i| all.as_slice()[i])
                            .ok_or_else(|| Error::Config(format!("heuristic `{n}` is not a ranked strategy")))
                    })
                    .collect::<Result<_>>()?,
            )
        }
    }
}

/// Resolves weights and fits the generative model (when needed) on `l`.
/// `respondents` restricts ranking-derived weights to those respondents.
pub fn fit_aggregator(l: &LabelMatrix, spec: &AggregatorSpec, respondents: Option<&BTreeSet<String>>) -> Result<FittedAggregator> {
    let names = l.heuristic_names().to_vec();
    let weights = match &spec.kind {
        ModelKind::Weighted(source) => Some(resolve_weights(source, &names, respondents)?),
        _ => None,
    };
    let needs_model = spec.kind == ModelKind::Generative || spec.tie == TieKind::GenerativeWeights;
    let model = if needs_model { Some(fit_generative(l, &spec.generative)?) } else { None };
    Ok(FittedAggregator { spec: spec.clone(), heuristic_names: names, weights, model })
}

impl FittedAggregator {
    pub fn apply(&self, l: &LabelMatrix) -> Result<Aggregate> {
        if l.heuristic_names() != self.heuristic_names.as_slice() {
            return Err(Error::Data("label matrix columns differ from the ones the aggregator was fit on".into()));
        }
        let seed = self.spec.seed;
        let tie = match self.spec.tie {
            TieKind::Random => TiePolicy::Random { seed },
            TieKind::Abstain => TiePolicy::AbstainOnTie,
            TieKind::GenerativeWeights => TiePolicy::GenerativeWeights { model: self.model.as_ref().expect("fitted"), seed },
        };
        match &self.spec.kind {
            ModelKind::Majority => Ok(Aggregate { labels: majority_vote(l, tie)?, marginals: None }),
            ModelKind::Weighted(_) => Ok(Aggregate { labels: weighted_vote(l, self.weights.as_ref().expect("resolved"), tie)?, marginals: None }),
            ModelKind::Generative => {
                let p = self.model.as_ref().expect("fitted").predict_marginals(l)?;
                let labels = if self.spec.tie == TieKind::Abstain {
                    p.iter()
                        .map(|p| match p.p_first() - 0.5 {
                            d if d.abs() <= TIE_TOLERANCE => CandidateLabel::Abstain,
                            d if d > 0.0 => CandidateLabel::First,
                            _ => CandidateLabel::Second,
                        })
                        .collect()
                } else {
                    round_labels(&p, seed).into_iter().map(CandidateLabel::from).collect()
                };
                Ok(Aggregate { labels, marginals: Some(p) })
            }
        }
    }
}

/// Fits on `l` and labels the same rows.
pub fn aggregate(l: &LabelMatrix, spec: &AggregatorSpec, respondents: Option<&BTreeSet<String>>) -> Result<Aggregate> {
    fit_aggregator(l, spec, respondents)?.apply(l)
}

/// Hard training labels from an aggregate; abstentions become `None`.
pub fn hard_labels(a: &Aggregate) -> Vec<Option<Choice>> {
    a.labels.iter().map(|c| c.choice()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use CandidateLabel::{Abstain as A, First as F, Second as S};

    fn named(rows: &[&[CandidateLabel]], names: &[&str]) -> LabelMatrix {
        let ids = (0..rows.len()).map(|i| format!("s{i}")).collect();
        LabelMatrix::new(ids, names.iter().map(|s| s.to_string()).collect(), rows.iter().flat_map(|r| r.to_vec()).collect()).unwrap()
    }

    #[test]
    fn fixed_weights_resolve_by_name() {
        let l = named(&[&[F, S]], &["b", "a"]);
        let map: BTreeMap<_, _> = [("a".to_string(), 1.0), ("b".to_string(), 0.2)].into();
        let spec = AggregatorSpec::new(ModelKind::Weighted(WeightSource::Fixed(map)));
        let fitted = fit_aggregator(&l, &spec, None).unwrap();
        assert_eq!(fitted.weights.as_ref().unwrap().as_slice(), &[0.2, 1.0]);
        assert_eq!(fitted.apply(&l).unwrap().labels, vec![S]);
        let missing = AggregatorSpec::new(ModelKind::Weighted(WeightSource::Fixed(BTreeMap::new())));
        assert!(fit_aggregator(&l, &missing, None).is_err());
    }

    #[test]
    fn ranking_weights_use_training_respondents() {
        let strategies: Vec<String> = ["x", "y"].iter().map(|s| s.to_string()).collect();
        let rankings = vec![StrategyRanking::new("r1", [("x", 1)]), StrategyRanking::new("r2", [("y", 1)])];
        let l = named(&[&[F, S]], &["x", "y"]);
        let spec = AggregatorSpec::new(ModelKind::Weighted(WeightSource::Rankings { rankings, strategies, scaling: Scaling::MaxCount }));
        let only_r1: BTreeSet<String> = ["r1".to_string()].into();
        let fitted = fit_aggregator(&l, &spec, Some(&only_r1)).unwrap();
        assert_eq!(fitted.weights.unwrap().as_slice(), &[1.0, 0.0]);
        let fitted = fit_aggregator(&l, &spec, None).unwrap();
        assert_eq!(fitted.weights.unwrap().as_slice(), &[0.5, 0.5]);
    }

    #[test]
    fn generative_zero_epochs_gives_halves() {
        let l = named(&[&[F, S], &[F, A]], &["a", "b"]);
        let mut spec = AggregatorSpec::new(ModelKind::Generative);
        spec.generative.epochs = 0;
        let out = aggregate(&l, &spec, None).unwrap();
        assert!(out.marginals.unwrap().iter().all(|p| p.p_first() == 0.5));
        spec.tie = TieKind::Abstain;
        assert_eq!(aggregate(&l, &spec, None).unwrap().labels, vec![A, A]);
    }

    #[test]
    fn column_mismatch_rejected() {
        let l = named(&[&[F, S]], &["a", "b"]);
        let fitted = fit_aggregator(&l, &AggregatorSpec::new(ModelKind::Majority), None).unwrap();
        assert!(fitted.apply(&named(&[&[F, S]], &["b", "a"])).is_err());
    }

    #[test]
    fn tie_names_parse() {
        for t in [TieKind::Random, TieKind::GenerativeWeights, TieKind::Abstain] {
            assert_eq!(TieKind::parse(t.name()).unwrap(), t);
        }
        assert!(TieKind::parse("coin").is_err());
    }
}
