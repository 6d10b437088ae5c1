//! Shared domain types: pairwise dilemmas, their alternatives, labels and datasets.
//!
//! A [`Scenario`] always holds exactly two alternatives. For the Moral Machine
//! domain `first` is the alternative where the vehicle stays on course and
//! `second` the one where it swerves.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The 17 abstract count features of the Moral Machine domain, in schema order.
pub const MM_FEATURES: [&str; 17] = [
    "male",
    "female",
    "young",
    "old",
    "infant",
    "pregnant",
    "fat",
    "fit",
    "working",
    "medical",
    "homeless",
    "criminal",
    "human",
    "non_human",
    "passenger",
    "law_abiding",
    "law_violating",
];

/// The binary patient features of the kidney-exchange domain, in schema order.
pub const KE_FEATURES: [&str; 3] = ["age_old", "drinks_frequently", "has_health_issue"];

/// Number of context entries per alternative in the concatenated layout:
/// intervention, is_green, is_red, is_passengers.
pub const CONTEXT_WIDTH: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    #[serde(rename = "mm")]
    MoralMachine,
    #[serde(rename = "ke")]
    KidneyExchange,
}

impl Domain {
    pub fn id(self) -> &'static str {
        match self {
            Domain::MoralMachine => "mm",
            Domain::KidneyExchange => "ke",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "mm" => Ok(Domain::MoralMachine),
            "ke" => Ok(Domain::KidneyExchange),
            other => Err(Error::Config(format!("unknown domain `{other}` (expected mm or ke)"))),
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

/// Domain id plus the ordered, closed set of count features.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub domain: Domain,
    pub features: Vec<String>,
}

impl Schema {
    pub fn for_domain(domain: Domain) -> Self {
        let names: &[&str] = match domain {
            Domain::MoralMachine => &MM_FEATURES,
            Domain::KidneyExchange => &KE_FEATURES,
        };
        Schema {
            domain,
            features: names.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn moral_machine() -> Self {
        Self::for_domain(Domain::MoralMachine)
    }

    pub fn kidney_exchange() -> Self {
        Self::for_domain(Domain::KidneyExchange)
    }

    /// Whether alternatives carry intervention / signal / passenger context.
    pub fn has_context(&self) -> bool {
        self.domain == Domain::MoralMachine
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f == name)
    }

    /// Width of one alternative's block in [`concat_features`].
    pub fn side_width(&self) -> usize {
        self.features.len() + if self.has_context() { CONTEXT_WIDTH } else { 0 }
    }

    /// Column names of the concatenated feature vector.
    pub fn column_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(2 * self.side_width());
        for side in ["first", "second"] {
            for f in &self.features {
                names.push(format!("{side}.{f}"));
            }
            if self.has_context() {
                for c in ["intervention", "is_green", "is_red", "is_passengers"] {
                    names.push(format!("{side}.{c}"));
                }
            }
        }
        names
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CrossingSignal {
    Green,
    Red,
    None,
}

impl CrossingSignal {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "green" => Some(CrossingSignal::Green),
            "red" => Some(CrossingSignal::Red),
            "none" => Some(CrossingSignal::None),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CrossingSignal::Green => "green",
            CrossingSignal::Red => "red",
            CrossingSignal::None => "none",
        }
    }
}

/// Situational flags of a Moral Machine alternative. `None` fields are missing values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Context {
    /// The alternative results from swerving.
    pub intervention: Option<bool>,
    pub signal: Option<CrossingSignal>,
    /// The saved group are vehicle passengers.
    pub is_passengers: Option<bool>,
}

/// One alternative of a dilemma: per-feature counts in schema order.
///
/// `None` marks a missing value; imputation happens in [`crate::ingest`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Alternative {
    pub counts: Vec<Option<i64>>,
    pub context: Option<Context>,
}

impl Alternative {
    pub fn from_counts(counts: impl IntoIterator<Item = i64>) -> Self {
        Alternative {
            counts: counts.into_iter().map(Some).collect(),
            context: None,
        }
    }

    pub fn with_context(mut self, context: Context) -> Self {
        self.context = Some(context);
        self
    }

    pub fn count(&self, schema: &Schema, name: &str) -> Option<i64> {
        schema.feature_index(name).and_then(|i| self.counts.get(i).copied().flatten())
    }

    pub fn has_missing(&self) -> bool {
        self.counts.iter().any(Option::is_none)
            || self.context.is_some_and(|c| {
                c.intervention.is_none() || c.signal.is_none() || c.is_passengers.is_none()
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Choice {
    First,
    Second,
}

impl Choice {
    pub fn flip(self) -> Self {
        match self {
            Choice::First => Choice::Second,
            Choice::Second => Choice::First,
        }
    }

    /// 0 for First, 1 for Second.
    pub fn as_index(self) -> u8 {
        match self {
            Choice::First => 0,
            Choice::Second => 1,
        }
    }

    pub fn from_index(v: u8) -> Option<Self> {
        match v {
            0 => Some(Choice::First),
            1 => Some(Choice::Second),
            _ => None,
        }
    }
}

/// A heuristic's output: one of the alternatives or an abstention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CandidateLabel {
    First,
    Second,
    Abstain,
}

impl CandidateLabel {
    pub fn choice(self) -> Option<Choice> {
        match self {
            CandidateLabel::First => Some(Choice::First),
            CandidateLabel::Second => Some(Choice::Second),
            CandidateLabel::Abstain => None,
        }
    }

    pub fn flip(self) -> Self {
        match self {
            CandidateLabel::First => CandidateLabel::Second,
            CandidateLabel::Second => CandidateLabel::First,
            CandidateLabel::Abstain => CandidateLabel::Abstain,
        }
    }

    pub fn is_abstain(self) -> bool {
        self == CandidateLabel::Abstain
    }

    /// Single-character cell code used in label-matrix files.
    pub fn code(self) -> char {
        match self {
            CandidateLabel::First => 'F',
            CandidateLabel::Second => 'S',
            CandidateLabel::Abstain => '-',
        }
    }

    pub fn from_code(s: &str) -> Option<Self> {
        match s.trim() {
            "F" => Some(CandidateLabel::First),
            "S" => Some(CandidateLabel::Second),
            "-" => Some(CandidateLabel::Abstain),
            _ => None,
        }
    }
}

impl From<Choice> for CandidateLabel {
    fn from(c: Choice) -> Self {
        match c {
            Choice::First => CandidateLabel::First,
            Choice::Second => CandidateLabel::Second,
        }
    }
}

/// Probability mass on the first alternative.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct ProbLabel(f64);

impl ProbLabel {
    pub fn new(p_first: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&p_first) {
            Ok(ProbLabel(p_first))
        } else {
            Err(Error::Data(format!("probability {p_first} outside [0, 1]")))
        }
    }

    /// Clamps into [0, 1]; NaN maps to 0.5.
    pub fn clamped(p_first: f64) -> Self {
        if p_first.is_nan() {
            ProbLabel(0.5)
        } else {
            ProbLabel(p_first.clamp(0.0, 1.0))
        }
    }

    pub fn p_first(self) -> f64 {
        self.0
    }

    pub fn p_second(self) -> f64 {
        1.0 - self.0
    }
}

/// One pairwise dilemma.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: String,
    pub first: Alternative,
    pub second: Alternative,
    pub respondent_id: Option<String>,
    pub truth: Option<Choice>,
    pub scenario_type: Option<String>,
}

impl Scenario {
    pub fn new(id: impl Into<String>, first: Alternative, second: Alternative) -> Self {
        Scenario {
            id: id.into(),
            first,
            second,
            respondent_id: None,
            truth: None,
            scenario_type: None,
        }
    }

    /// The same dilemma with the alternatives listed in the opposite order.
    pub fn swapped(&self) -> Self {
        Scenario {
            id: self.id.clone(),
            first: self.second.clone(),
            second: self.first.clone(),
            respondent_id: self.respondent_id.clone(),
            truth: self.truth.map(Choice::flip),
            scenario_type: self.scenario_type.clone(),
        }
    }

    pub fn has_missing(&self) -> bool {
        self.first.has_missing() || self.second.has_missing()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub schema: Schema,
    pub scenarios: Vec<Scenario>,
}

impl Dataset {
    pub fn new(schema: Schema, scenarios: Vec<Scenario>) -> Self {
        Dataset { schema, scenarios }
    }

    pub fn len(&self) -> usize {
        self.scenarios.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenarios.is_empty()
    }

    /// A new dataset holding the given rows, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            schema: self.schema.clone(),
            scenarios: indices.iter().map(|&i| self.scenarios[i].clone()).collect(),
        }
    }

    pub fn truths(&self) -> Option<Vec<Choice>> {
        self.scenarios.iter().map(|s| s.truth).collect()
    }

    /// Concatenated feature vectors for every scenario.
    pub fn feature_matrix(&self) -> Result<Vec<Vec<f64>>> {
        self.scenarios
            .iter()
            .map(|s| concat_features(&self.schema, s))
            .collect()
    }
}

/// Disjoint index lists into a [`Dataset`].
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<usize>,
    pub dev: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
}

impl DatasetSplit {
    pub fn parts(&self) -> [&[usize]; 4] {
        [&self.train, &self.dev, &self.valid, &self.test]
    }

    pub fn is_disjoint(&self) -> bool {
        let mut seen = HashSet::new();
        self.parts().iter().flat_map(|p| p.iter()).all(|i| seen.insert(*i))
    }
}

fn check_alternative(schema: &Schema, alt: &Alternative, side: &str) -> Result<()> {
    if alt.counts.len() != schema.features.len() {
        return Err(Error::Schema(format!(
            "{side} alternative has {} counts, schema `{}` has {} features",
            alt.counts.len(),
            schema.domain,
            schema.features.len()
        )));
    }
    if alt.context.is_some() != schema.has_context() {
        return Err(Error::Schema(format!(
            "{side} alternative context presence does not match domain `{}`",
            schema.domain
        )));
    }
    Ok(())
}

fn push_side(out: &mut Vec<f64>, alt: &Alternative) {
    let flag = |b: Option<bool>| b.map_or(f64::NAN, |v| if v { 1.0 } else { 0.0 });
    out.extend(alt.counts.iter().map(|c| c.map_or(f64::NAN, |v| v as f64)));
    if let Some(ctx) = alt.context {
        out.push(flag(ctx.intervention));
        let (green, red) = match ctx.signal {
            Some(CrossingSignal::Green) => (1.0, 0.0),
            Some(CrossingSignal::Red) => (0.0, 1.0),
            Some(CrossingSignal::None) => (0.0, 0.0),
            None => (f64::NAN, f64::NAN),
        };
        out.push(green);
        out.push(red);
        out.push(flag(ctx.is_passengers));
    }
}

/// Concatenates the two alternatives into one real vector.
///
/// Layout per side: counts in schema order, then (context domains only)
/// intervention, is_green, is_red, is_passengers. Missing values are NaN.
pub fn concat_features(schema: &Schema, s: &Scenario) -> Result<Vec<f64>> {
    check_alternative(schema, &s.first, "first")?;
    check_alternative(schema, &s.second, "second")?;
    let mut out = Vec::with_capacity(2 * schema.side_width());
    push_side(&mut out, &s.first);
    push_side(&mut out, &s.second);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    DuplicateId { id: String },
    Schema { id: String, message: String },
    NegativeCount { id: String, side: String, feature: String, value: i64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DuplicateId { id } => write!(f, "duplicate scenario id `{id}`"),
            Violation::Schema { id, message } => write!(f, "scenario `{id}`: {message}"),
            Violation::NegativeCount { id, side, feature, value } => {
                write!(f, "scenario `{id}`: {side}.{feature} = {value} is negative")
            }
        }
    }
}

/// Lists every invariant violation in the dataset; empty iff it is well formed.
pub fn validate_dataset(d: &Dataset) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for s in &d.scenarios {
        if !seen.insert(s.id.as_str()) {
            out.push(Violation::DuplicateId { id: s.id.clone() });
        }
        for (side, alt) in [("first", &s.first), ("second", &s.second)] {
            if let Err(e) = check_alternative(&d.schema, alt, side) {
                out.push(Violation::Schema { id: s.id.clone(), message: e.to_string() });
                continue;
            }
            for (name, c) in d.schema.features.iter().zip(&alt.counts) {
                if let Some(v) = *c {
                    if v < 0 {
                        out.push(Violation::NegativeCount {
                            id: s.id.clone(),
                            side: side.to_string(),
                            feature: name.clone(),
                            value: v,
                        });
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mm_alt(seed: i64, ctx: Context) -> Alternative {
        Alternative::from_counts((0..17).map(|i| (i + seed) % 3)).with_context(ctx)
    }

    fn ctx(intervention: bool, signal: CrossingSignal, pass: bool) -> Context {
        Context {
            intervention: Some(intervention),
            signal: Some(signal),
            is_passengers: Some(pass),
        }
    }

    #[test]
    fn mm_vector_has_42_entries() {
        let schema = Schema::moral_machine();
        let s = Scenario::new(
            "a",
            mm_alt(0, ctx(false, CrossingSignal::Green, true)),
            mm_alt(1, ctx(true, CrossingSignal::Red, false)),
        );
        let v = concat_features(&schema, &s).unwrap();
        assert_eq!(v.len(), 42);
        assert_eq!(&v[17..21], &[0.0, 1.0, 0.0, 1.0]);
        assert_eq!(&v[38..42], &[1.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn ke_vector_is_identity_layout() {
        let schema = Schema::kidney_exchange();
        let s = Scenario::new(
            "k",
            Alternative::from_counts([0, 1, 0]),
            Alternative::from_counts([1, 0, 0]),
        );
        assert_eq!(concat_features(&schema, &s).unwrap(), vec![0.0, 1.0, 0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn swap_swaps_blocks() {
        let schema = Schema::moral_machine();
        let s = Scenario::new(
            "a",
            mm_alt(0, ctx(false, CrossingSignal::None, true)),
            mm_alt(2, ctx(true, CrossingSignal::Green, false)),
        );
        let v = concat_features(&schema, &s).unwrap();
        let w = concat_features(&schema, &s.swapped()).unwrap();
        assert_eq!(&v[..21], &w[21..]);
        assert_eq!(&v[21..], &w[..21]);
    }

    #[test]
    fn missing_values_become_nan() {
        let schema = Schema::kidney_exchange();
        let mut first = Alternative::from_counts([0, 1, 0]);
        first.counts[1] = None;
        let s = Scenario::new("k", first, Alternative::from_counts([1, 0, 0]));
        let v = concat_features(&schema, &s).unwrap();
        assert!(v[1].is_nan());
        assert_eq!(v[0], 0.0);
    }

    #[test]
    fn schema_mismatch_is_an_error() {
        let schema = Schema::kidney_exchange();
        let s = Scenario::new("k", Alternative::from_counts([0, 1]), Alternative::from_counts([1, 0, 0]));
        assert!(matches!(concat_features(&schema, &s), Err(Error::Schema(_))));
        let mm = Schema::moral_machine();
        let s = Scenario::new("k", Alternative::from_counts([0; 17]), Alternative::from_counts([0; 17]));
        assert!(concat_features(&mm, &s).is_err());
    }

    fn ke_dataset(n: usize) -> Dataset {
        let scenarios = (0..n)
            .map(|i| {
                Scenario::new(
                    format!("s{i}"),
                    Alternative::from_counts([(i % 2) as i64, 0, 1]),
                    Alternative::from_counts([1, (i % 2) as i64, 0]),
                )
            })
            .collect();
        Dataset::new(Schema::kidney_exchange(), scenarios)
    }

    #[test]
    fn well_formed_dataset_has_no_violations() {
        assert!(validate_dataset(&ke_dataset(10)).is_empty());
    }

    #[test]
    fn negative_count_is_reported() {
        let mut d = ke_dataset(10);
        d.scenarios[3].second.counts[2] = Some(-1);
        let v = validate_dataset(&d);
        assert_eq!(v.len(), 1);
        match &v[0] {
            Violation::NegativeCount { id, feature, .. } => {
                assert_eq!(id, "s3");
                assert_eq!(feature, "has_health_issue");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_id_is_reported() {
        let mut d = ke_dataset(10);
        d.scenarios[7].id = "s2".into();
        assert_eq!(validate_dataset(&d), vec![Violation::DuplicateId { id: "s2".into() }]);
    }

    #[test]
    fn split_disjointness() {
        let split = DatasetSplit { train: vec![0, 1], dev: vec![2], valid: vec![], test: vec![3] };
        assert!(split.is_disjoint());
        let bad = DatasetSplit { train: vec![0, 1], dev: vec![1], ..Default::default() };
        assert!(!bad.is_disjoint());
    }
}
