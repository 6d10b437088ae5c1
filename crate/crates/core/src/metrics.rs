//! Diagnostics over heuristics and label models, plus the experiment loops
//! (leave-one-out perturbation, learning curves).

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::json;

use crate::domain::{CandidateLabel, Choice, Dataset};
use crate::error::{Error, Result};
use crate::forest::{fit_forest, fit_on_problabels, DecisionForest, ForestConfig};
use crate::heuristics::{apply_all, HeuristicSpec, LabelMatrix};
use crate::ingest::{impute_median, k_fold, make_split, SplitFractions};
use crate::io::{fixed, fixed_json, fixed_json_opt};
use crate::labelmodel::{fit_aggregator, AggregatorSpec, GenerativeModel};

/// Anything that may cast a vote for one alternative.
pub trait Vote: Copy {
    fn vote(self) -> Option<Choice>;
}

impl Vote for Choice {
    fn vote(self) -> Option<Choice> {
        Some(self)
    }
}

impl Vote for CandidateLabel {
    fn vote(self) -> Option<Choice> {
        self.choice()
    }
}

impl Vote for Option<Choice> {
    fn vote(self) -> Option<Choice> {
        self
    }
}

fn check_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Dimension { expected: a, actual: b });
    }
    Ok(())
}

fn check_column(l: &LabelMatrix, m: usize) -> Result<()> {
    if m >= l.n_heuristics() {
        return Err(Error::Data(format!("heuristic index {m} out of range for {} heuristics", l.n_heuristics())));
    }
    Ok(())
}

/// Fraction of rows where heuristic `m` votes.
pub fn coverage(l: &LabelMatrix, m: usize) -> Result<f64> {
    check_column(l, m)?;
    if l.n_scenarios() == 0 {
        return Ok(0.0);
    }
    Ok(l.column(m).filter(|c| !c.is_abstain()).count() as f64 / l.n_scenarios() as f64)
}

/// Shares of heuristic `m`'s votes that go to (First, Second); `None` if it never votes.
pub fn polarity(l: &LabelMatrix, m: usize) -> Result<Option<(f64, f64)>> {
    check_column(l, m)?;
    let (f, s) = l.column(m).fold((0usize, 0usize), |(f, s), c| match c {
        CandidateLabel::First => (f + 1, s),
        CandidateLabel::Second => (f, s + 1),
        CandidateLabel::Abstain => (f, s),
    });
    let n = f + s;
    Ok((n > 0).then(|| (f as f64 / n as f64, s as f64 / n as f64)))
}

/// Accuracy over the rows where `pred` votes; `None` when it never does.
pub fn accuracy<P: Vote>(pred: &[P], truth: &[Choice]) -> Result<Option<f64>> {
    check_len(pred.len(), truth.len())?;
    let (hit, n) = pred.iter().zip(truth).fold((0usize, 0usize), |(h, n), (p, t)| match p.vote() {
        Some(c) => (h + usize::from(c == *t), n + 1),
        None => (h, n),
    });
    Ok((n > 0).then(|| hit as f64 / n as f64))
}

/// Accuracy of an aggregate model: every row is scored and an abstention counts as wrong.
pub fn model_accuracy<P: Vote>(pred: &[P], truth: &[Choice]) -> Result<f64> {
    check_len(pred.len(), truth.len())?;
    if pred.is_empty() {
        return Err(Error::Evaluation("no rows to evaluate".into()));
    }
    let hit = pred.iter().zip(truth).filter(|(p, t)| p.vote() == Some(**t)).count();
    Ok(hit as f64 / pred.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Density {
    pub per_row: Vec<usize>,
    pub mean: f64,
}

/// Number of voting heuristics on each row.
pub fn density(l: &LabelMatrix) -> Density {
    let per_row: Vec<usize> = l.rows().map(|r| r.iter().filter(|c| !c.is_abstain()).count()).collect();
    let mean = if per_row.is_empty() { 0.0 } else { per_row.iter().sum::<usize>() as f64 / per_row.len() as f64 };
    Density { per_row, mean }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairStats {
    pub j: usize,
    pub k: usize,
    /// Fraction of rows where both vote.
    pub overlap: f64,
    /// Fraction of rows where both vote and disagree.
    pub conflict: f64,
}

/// Overlap and conflict for every pair `j < k`.
pub fn conflict_overlap(l: &LabelMatrix) -> Vec<PairStats> {
    let m = l.n_heuristics();
    let n = l.n_scenarios().max(1) as f64;
    let mut out = Vec::with_capacity(m * m.saturating_sub(1) / 2);
    for j in 0..m {
        for k in j + 1..m {
            let (mut both, mut differ) = (0usize, 0usize);
            for r in l.rows() {
                if let (Some(a), Some(b)) = (r[j].choice(), r[k].choice()) {
                    both += 1;
                    differ += usize::from(a != b);
                }
            }
            out.push(PairStats { j, k, overlap: both as f64 / n, conflict: differ as f64 / n });
        }
    }
    out
}

/// Bucket used for rows without a scenario type.
pub const DEFAULT_TYPE: &str = "Random";

/// [`accuracy`] per scenario type; untagged rows join [`DEFAULT_TYPE`].
pub fn accuracy_by_type<P: Vote>(pred: &[P], truth: &[Choice], types: &[Option<String>]) -> Result<BTreeMap<String, Option<f64>>> {
    check_len(pred.len(), truth.len())?;
    check_len(pred.len(), types.len())?;
    let mut groups: BTreeMap<String, (Vec<P>, Vec<Choice>)> = BTreeMap::new();
    for ((p, t), ty) in pred.iter().zip(truth).zip(types) {
        let g = groups.entry(ty.clone().unwrap_or_else(|| DEFAULT_TYPE.to_string())).or_default();
        g.0.push(*p);
        g.1.push(*t);
    }
    groups.into_iter().map(|(k, (p, t))| Ok((k, accuracy(&p, &t)?))).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeuristicStats {
    pub name: String,
    pub coverage: f64,
    pub polarity: Option<(f64, f64)>,
    /// Accuracy on the ground-truthed rows the heuristic votes on.
    pub accuracy: Option<f64>,
    pub scored: usize,
    pub estimated_weight: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeuristicReport {
    pub heuristics: Vec<HeuristicStats>,
}

/// Per-heuristic diagnostics; `truth` may leave rows unlabeled.
pub fn heuristic_report(l: &LabelMatrix, truth: &[Option<Choice>], model: Option<&GenerativeModel>) -> Result<HeuristicReport> {
    check_len(l.n_scenarios(), truth.len())?;
    if let Some(g) = model {
        check_len(l.n_heuristics(), g.n_heuristics())?;
    }
    let labeled: Vec<usize> = (0..truth.len()).filter(|&i| truth[i].is_some()).collect();
    let t: Vec<Choice> = labeled.iter().map(|&i| truth[i].expect("labeled")).collect();
    let heuristics = (0..l.n_heuristics())
        .map(|m| {
            let pred: Vec<CandidateLabel> = labeled.iter().map(|&i| l.get(i, m)).collect();
            Ok(HeuristicStats {
                name: l.heuristic_names()[m].clone(),
                coverage: coverage(l, m)?,
                polarity: polarity(l, m)?,
                accuracy: accuracy(&pred, &t)?,
                scored: pred.iter().filter(|c| !c.is_abstain()).count(),
                estimated_weight: model.map(|g| g.w_acc[m]),
            })
        })
        .collect::<Result<_>>()?;
    Ok(HeuristicReport { heuristics })
}

fn opt(x: Option<f64>) -> String {
    x.map(fixed).unwrap_or_default()
}

impl HeuristicReport {
    /// Long format: `heuristic,metric,value`; undefined values are empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("heuristic,metric,value\n");
        for h in &self.heuristics {
            let cells = [
                ("coverage", fixed(h.coverage)),
                ("polarity_first", opt(h.polarity.map(|p| p.0))),
                ("polarity_second", opt(h.polarity.map(|p| p.1))),
                ("accuracy", opt(h.accuracy)),
                ("scored", h.scored.to_string()),
                ("estimated_weight", opt(h.estimated_weight)),
            ];
            for (metric, value) in cells {
                out.push_str(&format!("{},{metric},{value}\n", csv_field(&h.name)));
            }
        }
        out
    }

    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "heuristics": self.heuristics.iter().map(|h| json!({
                "name": h.name,
                "coverage": fixed_json(h.coverage),
                "polarity": h.polarity.map_or(serde_json::Value::Null, |(f, s)| json!({"first": fixed_json(f), "second": fixed_json(s)})),
                "accuracy": fixed_json_opt(h.accuracy),
                "scored": h.scored,
                "estimated_weight": fixed_json_opt(h.estimated_weight),
            })).collect::<Vec<_>>()
        })
    }
}

/// Quotes a CSV field when it needs it.
pub fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationRow {
    pub heuristic: String,
    /// Baseline accuracy minus accuracy without this heuristic, or why the refit failed.
    pub gain: std::result::Result<f64, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    pub baseline: f64,
    pub rows: Vec<PerturbationRow>,
}

fn aggregate_accuracy(l: &LabelMatrix, truth: &[Choice], spec: &AggregatorSpec, respondents: Option<&BTreeSet<String>>) -> Result<f64> {
    let out = fit_aggregator(l, spec, respondents)?.apply(l)?;
    model_accuracy(&out.labels, truth)
}

/// Leave-one-heuristic-out: refits the label model without each column in turn.
pub fn perturbation(l: &LabelMatrix, truth: &[Choice], spec: &AggregatorSpec, respondents: Option<&BTreeSet<String>>) -> Result<Perturbation> {
    if l.n_heuristics() < 2 {
        return Err(Error::Config("perturbation needs at least 2 heuristics".into()));
    }
    check_len(l.n_scenarios(), truth.len())?;
    let baseline = aggregate_accuracy(l, truth, spec, respondents)?;
    let rows = (0..l.n_heuristics())
        .into_par_iter()
        .map(|m| {
            let gain = l
                .without_column(m)
                .and_then(|lm| aggregate_accuracy(&lm, truth, spec, respondents))
                .map(|acc| baseline - acc)
                .map_err(|e| e.to_string());
            PerturbationRow { heuristic: l.heuristic_names()[m].clone(), gain }
        })
        .collect();
    Ok(Perturbation { baseline, rows })
}

impl Perturbation {
    /// `heuristic,gain,error`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("heuristic,gain,error\n");
        for r in &self.rows {
            let (gain, err) = match &r.gain {
                Ok(g) => (fixed(*g), String::new()),
                Err(e) => (String::new(), csv_field(e)),
            };
            out.push_str(&format!("{},{gain},{err}\n", csv_field(&r.heuristic)));
        }
        out
    }
}

/// What a learning curve (or a single train/evaluate run) fits.
#[derive(Debug, Clone, PartialEq)]
pub enum CurveModel {
    /// Forest on ground truth.
    Supervised,
    /// Forest on the label model's output for the training rows.
    Weak(AggregatorSpec),
    /// The label model itself, applied to the test rows.
    Vote(AggregatorSpec),
}

impl CurveModel {
    pub fn name(&self) -> String {
        match self {
            CurveModel::Supervised => "supervised".into(),
            CurveModel::Weak(s) => format!("weak_{}", s.kind.name()),
            CurveModel::Vote(s) => format!("vote_{}", s.kind.name()),
        }
    }
}

/// Result of fitting one model on `train` rows and scoring it on `test` rows.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    /// Test rows that carry ground truth, in order.
    pub scored: Vec<usize>,
    pub predictions: Vec<CandidateLabel>,
    pub accuracy: f64,
    pub forest: Option<DecisionForest>,
}

fn respondents_of(d: &Dataset, rows: &[usize]) -> BTreeSet<String> {
    rows.iter().filter_map(|&i| d.scenarios[i].respondent_id.clone()).collect()
}

/// Fits `model` on `train` and evaluates on the labeled rows of `test`.
/// Every seed (forest, tie coins, label rounding, generative sampling) is `seed`.
pub fn train_and_evaluate(
    d: &Dataset,
    l: Option<&LabelMatrix>,
    train: &[usize],
    test: &[usize],
    model: &CurveModel,
    forest: &ForestConfig,
    seed: u64,
) -> Result<RunOutcome> {
    let matrix = || -> Result<&LabelMatrix> {
        let l = l.ok_or_else(|| Error::Config("label-model runs need a heuristic suite".into()))?;
        check_len(d.len(), l.n_scenarios())?;
        Ok(l)
    };
    let scored: Vec<usize> = test.iter().copied().filter(|&i| d.scenarios[i].truth.is_some()).collect();
    if scored.is_empty() {
        return Err(Error::Evaluation("test split has no labeled rows".into()));
    }
    if train.is_empty() {
        return Err(Error::Evaluation("training split is empty".into()));
    }
    let truth: Vec<Choice> = scored.iter().map(|&i| d.scenarios[i].truth.expect("filtered")).collect();
    let fcfg = ForestConfig { seed, ..forest.clone() };
    let seeded = |s: &AggregatorSpec| {
        let mut s = s.clone();
        s.seed = seed;
        s.generative.seed = seed;
        s
    };
    let features = |rows: &[usize], data: &Dataset| -> Result<Vec<Vec<f64>>> { data.subset(rows).feature_matrix() };
    let imputed = || impute_median(d, train);

    let (predictions, forest) = match model {
        CurveModel::Vote(spec) => {
            let l = matrix()?;
            let fitted = fit_aggregator(&l.select_rows(train), &seeded(spec), Some(&respondents_of(d, train)))?;
            (fitted.apply(&l.select_rows(&scored))?.labels, None)
        }
        CurveModel::Supervised => {
            let rows: Vec<usize> = train.iter().copied().filter(|&i| d.scenarios[i].truth.is_some()).collect();
            if rows.is_empty() {
                return Err(Error::Evaluation("no labeled training rows".into()));
            }
            let data = imputed()?;
            let y: Vec<Choice> = rows.iter().map(|&i| d.scenarios[i].truth.expect("filtered")).collect();
            let f = fit_forest(&features(&rows, &data)?, &y, &fcfg)?;
            let pred = f.predict(&features(&scored, &data)?, seed)?;
            (pred.into_iter().map(CandidateLabel::from).collect(), Some(f))
        }
        CurveModel::Weak(spec) => {
            let lt = matrix()?.select_rows(train);
            let out = fit_aggregator(&lt, &seeded(spec), Some(&respondents_of(d, train)))?.apply(&lt)?;
            let data = imputed()?;
            let f = match out.marginals {
                Some(p) => fit_on_problabels(&features(train, &data)?, &p, &fcfg, seed)?,
                None => {
                    let kept: Vec<(usize, Choice)> =
                        train.iter().zip(&out.labels).filter_map(|(&i, c)| c.choice().map(|c| (i, c))).collect();
                    if kept.is_empty() {
                        return Err(Error::Evaluation("label model abstained on every training row".into()));
                    }
                    let rows: Vec<usize> = kept.iter().map(|k| k.0).collect();
                    let y: Vec<Choice> = kept.iter().map(|k| k.1).collect();
                    fit_forest(&features(&rows, &data)?, &y, &fcfg)?
                }
            };
            let pred = f.predict(&features(&scored, &data)?, seed)?;
            (pred.into_iter().map(CandidateLabel::from).collect(), Some(f))
        }
    };
    let accuracy = model_accuracy(&predictions, &truth)?;
    Ok(RunOutcome { scored, predictions, accuracy, forest })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CurveAxis {
    /// x counts training rows.
    Rows,
    /// x counts training respondents.
    Respondents,
}

impl CurveAxis {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "rows" => Ok(CurveAxis::Rows),
            "respondents" => Ok(CurveAxis::Respondents),
            other => Err(Error::Config(format!("unknown curve axis `{other}` (expected rows or respondents)"))),
        }
    }
}

/// How each run's held-out rows are chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum Evaluation {
    /// k-fold cross-validation; x is drawn from each fold's training part.
    KFold(usize),
    /// One seeded split; x is drawn from its train part, scored on its test part.
    Split(SplitFractions),
    /// Respondent axis only: each sampled respondent trains on their first
    /// `train_rows` scenarios and is tested on the rest.
    WithinRespondent { train_rows: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurveConfig {
    pub axis: CurveAxis,
    pub sizes: Vec<usize>,
    pub evaluation: Evaluation,
    pub seeds: Vec<u64>,
    pub forest: ForestConfig,
    /// Keep each respondent's rows in one fold (always on for the respondent axis).
    pub group_by_respondent: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub x: usize,
    pub model: String,
    pub mean: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub runs: usize,
}

/// Mean and 95% interval `mean ± 1.96·sd/√n` (sample sd; zero width for one run).
pub fn mean_ci95(values: &[f64]) -> (f64, f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, mean, mean);
    }
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let half = 1.96 * sd / n.sqrt();
    (mean, mean - half, mean + half)
}

/// Respondent ids in first-appearance order with their rows in dataset order.
fn respondent_rows(d: &Dataset, rows: &[usize]) -> Result<Vec<Vec<usize>>> {
    let mut order: Vec<Vec<usize>> = Vec::new();
    let mut index: BTreeMap<&str, usize> = BTreeMap::new();
    for &i in rows {
        let r = d.scenarios[i]
            .respondent_id
            .as_deref()
            .ok_or_else(|| Error::Data(format!("scenario `{}` has no respondent id", d.scenarios[i].id)))?;
        let slot = *index.entry(r).or_insert_with(|| {
            order.push(Vec::new());
            order.len() - 1
        });
        order[slot].push(i);
    }
    Ok(order)
}

/// Seeded draw of `x` units from `pool`, returned as sorted row indices.
fn draw(pool: &[Vec<usize>], x: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut rows: Vec<usize> = order.into_iter().take(x).flat_map(|u| pool[u].iter().copied()).collect();
    rows.sort_unstable();
    rows
}

struct Job {
    x: usize,
    seed: u64,
    train: Vec<usize>,
    test: Vec<usize>,
}

fn jobs(d: &Dataset, cfg: &CurveConfig) -> Result<Vec<Job>> {
    let respondents = cfg.axis == CurveAxis::Respondents;
    let grouped = respondents || cfg.group_by_respondent;
    let units = |rows: &[usize]| -> Result<Vec<Vec<usize>>> {
        if respondents {
            respondent_rows(d, rows)
        } else {
            Ok(rows.iter().map(|&i| vec![i]).collect())
        }
    };
    let mut out = Vec::new();
    for &seed in &cfg.seeds {
        let partitions = match &cfg.evaluation {
            Evaluation::KFold(k) => k_fold(d, *k, seed, grouped)?,
            Evaluation::Split(f) => {
                let s = make_split(d, f, seed, grouped)?;
                vec![(s.train, s.test)]
            }
            Evaluation::WithinRespondent { train_rows } => {
                if !respondents {
                    return Err(Error::Config("within-respondent evaluation needs the respondent axis".into()));
                }
                let pool = respondent_rows(d, &(0..d.len()).collect::<Vec<_>>())?;
                for &x in &cfg.sizes {
                    let chosen = draw(&pool.iter().map(|r| vec![r[0]]).collect::<Vec<_>>(), x, seed);
                    let (mut train, mut test) = (Vec::new(), Vec::new());
                    for r in pool.iter().filter(|r| chosen.contains(&r[0])) {
                        let cut = (*train_rows).min(r.len());
                        train.extend_from_slice(&r[..cut]);
                        test.extend_from_slice(&r[cut..]);
                    }
                    train.sort_unstable();
                    test.sort_unstable();
                    out.push(Job { x, seed, train, test });
                }
                continue;
            }
        };
        for (train, test) in partitions {
            let pool = units(&train)?;
            for &x in &cfg.sizes {
                out.push(Job { x, seed, train: draw(&pool, x, seed), test: test.clone() });
            }
        }
    }
    Ok(out)
}

/// Mean accuracy with a 95% interval for each (x, model), over seeds and folds.
/// Rows come out by x in `cfg.sizes` order, then by model in `models` order.
pub fn learning_curve(d: &Dataset, suite: &[HeuristicSpec], cfg: &CurveConfig, models: &[CurveModel]) -> Result<Vec<CurvePoint>> {
    if cfg.sizes.is_empty() || cfg.seeds.is_empty() || models.is_empty() {
        return Err(Error::Config("a learning curve needs sizes, seeds and models".into()));
    }
    if cfg.sizes.contains(&0) {
        return Err(Error::Config("curve sizes must be positive".into()));
    }
    if let Evaluation::KFold(k) = cfg.evaluation {
        if k < 2 {
            return Err(Error::Config(format!("need at least 2 folds, got {k}")));
        }
    }
    let needs_matrix = models.iter().any(|m| !matches!(m, CurveModel::Supervised));
    let l = if needs_matrix { Some(apply_all(suite, d)?) } else { None };
    let jobs = jobs(d, cfg)?;
    let tasks: Vec<(usize, usize)> = (0..jobs.len()).flat_map(|j| (0..models.len()).map(move |m| (j, m))).collect();
    let accs: Vec<f64> = tasks
        .par_iter()
        .map(|&(j, m)| {
            let job = &jobs[j];
            train_and_evaluate(d, l.as_ref(), &job.train, &job.test, &models[m], &cfg.forest, job.seed).map(|r| r.accuracy)
        })
        .collect::<Result<_>>()?;
    let mut out = Vec::new();
    for &x in &cfg.sizes {
        for (m, model) in models.iter().enumerate() {
            let values: Vec<f64> = tasks.iter().zip(&accs).filter(|((j, mm), _)| *mm == m && jobs[*j].x == x).map(|(_, a)| *a).collect();
            let (mean, ci_lo, ci_hi) = mean_ci95(&values);
            out.push(CurvePoint { x, model: model.name(), mean, ci_lo, ci_hi, runs: values.len() });
        }
    }
    Ok(out)
}

/// `x,model,mean,ci_lo,ci_hi,runs`.
pub fn curve_csv(points: &[CurvePoint]) -> String {
    let mut out = String::from("x,model,mean,ci_lo,ci_hi,runs\n");
    for p in points {
        out.push_str(&format!("{},{},{},{},{},{}\n", p.x, csv_field(&p.model), fixed(p.mean), fixed(p.ci_lo), fixed(p.ci_hi), p.runs));
    }
    out
}
