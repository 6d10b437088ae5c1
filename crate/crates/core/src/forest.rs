//! Random forest of Gini decision trees over concatenated scenario features.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{Choice, ProbLabel};
use crate::error::{Error, Result};
use crate::labelmodel::round_labels;

const FOREST_FILE_VERSION: u32 = 1;

/// A split is accepted when its Gini gain exceeds this (so zero-gain splits
/// are allowed and XOR-like structure can still be memorized).
const MIN_GAIN: f64 = -1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitCriterion {
    #[default]
    Gini,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub criterion: SplitCriterion,
    /// `None` grows until the stopping rules fire.
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub bootstrap: bool,
    pub seed: u64,
    /// Train trees on the rayon pool; the result is identical either way.
    pub parallel: bool,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 100,
            criterion: SplitCriterion::Gini,
            max_depth: None,
            min_samples_split: 2,
            bootstrap: true,
            seed: 0,
            parallel: true,
        }
    }
}

impl ForestConfig {
    fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::Config("n_trees must be >= 1".into()));
        }
        if self.min_samples_split < 2 {
            return Err(Error::Config("min_samples_split must be >= 2".into()));
        }
        Ok(())
    }
}

/// One tree as flat node arrays. `feature[i] == -1` marks a leaf; internal
/// nodes send `x[feature] <= threshold` to `left`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub feature: Vec<i64>,
    pub threshold: Vec<f64>,
    pub left: Vec<i64>,
    pub right: Vec<i64>,
    pub leaf_p: Vec<f64>,
}

impl Tree {
    fn push_node(&mut self) -> usize {
        self.feature.push(-1);
        self.threshold.push(0.0);
        self.left.push(-1);
        self.right.push(-1);
        self.leaf_p.push(0.0);
        self.feature.len() - 1
    }

    pub fn n_nodes(&self) -> usize {
        self.feature.len()
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, i: usize) -> usize {
            if t.feature[i] < 0 {
                0
            } else {
                1 + go(t, t.left[i] as usize).max(go(t, t.right[i] as usize))
            }
        }
        go(self, 0)
    }

    /// First-probability of the leaf `x` falls into.
    pub fn leaf_value(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        while self.feature[i] >= 0 {
            let f = self.feature[i] as usize;
            i = if x[f] <= self.threshold[i] { self.left[i] } else { self.right[i] } as usize;
        }
        self.leaf_p[i]
    }

    fn validate(&self, n_features: usize) -> Result<()> {
        let n = self.n_nodes();
        let bad = |m: String| Err(Error::Data(format!("invalid tree: {m}")));
        if n == 0 || [self.threshold.len(), self.left.len(), self.right.len(), self.leaf_p.len()].iter().any(|l| *l != n) {
            return bad("node arrays are empty or of unequal length".into());
        }
        for i in 0..n {
            if !(0.0..=1.0).contains(&self.leaf_p[i]) {
                return bad(format!("leaf probability {} at node {i}", self.leaf_p[i]));
            }
            if self.feature[i] >= 0 {
                if self.feature[i] as usize >= n_features {
                    return bad(format!("feature {} at node {i} exceeds dimension {n_features}", self.feature[i]));
                }
                // Children must come after their parent, which also rules out cycles.
                for c in [self.left[i], self.right[i]] {
                    if c <= i as i64 || c as usize >= n {
                        return bad(format!("child {c} of node {i} out of order"));
                    }
                }
            }
        }
        Ok(())
    }
}

/// How probabilistic labels were turned into training labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRounding {
    pub seed: u64,
    /// Rows whose label sat at exactly 0.5 and took the seeded coin.
    pub ties: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionForest {
    pub n_features: usize,
    pub config: ForestConfig,
    pub schema_fingerprint: Option<String>,
    pub label_rounding: Option<LabelRounding>,
    pub trees: Vec<Tree>,
}

/// `1 − Σ p_c²` for a node with `first` of `n` labels First.
pub fn gini_impurity(first: usize, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let p = first as f64 / n as f64;
    1.0 - p * p - (1.0 - p) * (1.0 - p)
}

/// `n · gini`, computed from counts so equal splits give bit-identical values.
fn weighted_impurity(first: usize, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let (f, s) = (first as f64, (n - first) as f64);
    n as f64 - (f * f + s * s) / n as f64
}

struct Split {
    feature: usize,
    threshold: f64,
    gain: f64,
}

struct Builder<'a> {
    x: &'a [Vec<f64>],
    y: &'a [bool],
    /// Features in the order they are tried; earlier wins equal gains.
    order: &'a [usize],
    min_samples_split: usize,
    max_depth: Option<usize>,
}

impl Builder<'_> {
    fn best_split(&self, idx: &[usize]) -> Option<Split> {
        let n = idx.len();
        let total_first = idx.iter().filter(|&&i| self.y[i]).count();
        let parent = weighted_impurity(total_first, n);
        let mut best: Option<Split> = None;
        let mut pairs: Vec<(f64, bool)> = Vec::with_capacity(n);
        for &f in self.order {
            pairs.clear();
            pairs.extend(idx.iter().map(|&i| (self.x[i][f], self.y[i])));
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut left_first = 0;
            for k in 1..n {
                if pairs[k - 1].1 {
                    left_first += 1;
                }
                if pairs[k].0 == pairs[k - 1].0 {
                    continue;
                }
                let child = weighted_impurity(left_first, k) + weighted_impurity(total_first - left_first, n - k);
                let gain = (parent - child) / n as f64;
                if gain > MIN_GAIN && best.as_ref().is_none_or(|b| gain > b.gain) {
                    best = Some(Split { feature: f, threshold: (pairs[k - 1].0 + pairs[k].0) / 2.0, gain });
                }
            }
        }
        best
    }

    fn build(&self, sample: Vec<usize>) -> Tree {
        let mut tree = Tree { feature: vec![], threshold: vec![], left: vec![], right: vec![], leaf_p: vec![] };
        let root = tree.push_node();
        let mut stack = vec![(root, sample, 0usize)];
        while let Some((node, idx, depth)) = stack.pop() {
            let n = idx.len();
            let first = idx.iter().filter(|&&i| self.y[i]).count();
            tree.leaf_p[node] = first as f64 / n as f64;
            let pure = first == 0 || first == n;
            let depth_capped = self.max_depth.is_some_and(|d| depth >= d);
            if pure || n < self.min_samples_split || depth_capped {
                continue;
            }
            let Some(split) = self.best_split(&idx) else { continue };
            let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| self.x[i][split.feature] <= split.threshold);
            let left = tree.push_node();
            let right = tree.push_node();
            tree.feature[node] = split.feature as i64;
            tree.threshold[node] = split.threshold;
            tree.left[node] = left as i64;
            tree.right[node] = right as i64;
            stack.push((right, r, depth + 1));
            stack.push((left, l, depth + 1));
        }
        tree
    }
}

fn check_inputs(x: &[Vec<f64>], n_labels: usize) -> Result<usize> {
    if x.is_empty() {
        return Err(Error::Data("cannot fit a forest on zero rows".into()));
    }
    if x.len() != n_labels {
        return Err(Error::Dimension { expected: x.len(), actual: n_labels });
    }
    let d = x[0].len();
    if d == 0 {
        return Err(Error::Data("feature vectors are empty".into()));
    }
    for (i, row) in x.iter().enumerate() {
        if row.len() != d {
            return Err(Error::Dimension { expected: d, actual: row.len() });
        }
        if let Some(f) = row.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("row {i} feature {f} is missing or non-finite; impute first")));
        }
    }
    Ok(d)
}

/// Trains a forest; equal-gain splits go to the lowest feature index, then the lowest threshold.
pub fn fit_forest(x: &[Vec<f64>], y: &[Choice], cfg: &ForestConfig) -> Result<DecisionForest> {
    let d = x.first().map_or(0, Vec::len);
    fit_forest_with_priority(x, y, cfg, &(0..d).collect::<Vec<_>>())
}

/// As [`fit_forest`], but equal-gain splits go to the feature with the lowest
/// `priority` value. `priority` must be a permutation of `0..d`.
pub fn fit_forest_with_priority(x: &[Vec<f64>], y: &[Choice], cfg: &ForestConfig, priority: &[usize]) -> Result<DecisionForest> {
    cfg.validate()?;
    let d = check_inputs(x, y.len())?;
    let mut order: Vec<usize> = (0..d).collect();
    let mut seen = vec![false; d];
    if priority.len() != d || priority.iter().any(|&p| p >= d || std::mem::replace(&mut seen[p], true)) {
        return Err(Error::Config(format!("feature priority must be a permutation of 0..{d}")));
    }
    order.sort_by_key(|&f| priority[f]);
    let labels: Vec<bool> = y.iter().map(|c| *c == Choice::First).collect();
    let builder = Builder { x, y: &labels, order: &order, min_samples_split: cfg.min_samples_split, max_depth: cfg.max_depth };
    let n = x.len();
    let grow = |t: usize| {
        let sample = if cfg.bootstrap {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(t as u64));
            (0..n).map(|_| rng.gen_range(0..n)).collect()
        } else {
            (0..n).collect()
        };
        builder.build(sample)
    };
    let trees = if cfg.parallel {
        (0..cfg.n_trees).into_par_iter().map(grow).collect()
    } else {
        (0..cfg.n_trees).map(grow).collect()
    };
    Ok(DecisionForest { n_features: d, config: cfg.clone(), schema_fingerprint: None, label_rounding: None, trees })
}

/// Rounds probabilistic labels (seeded coin at exactly 0.5), then trains.
pub fn fit_on_problabels(x: &[Vec<f64>], p: &[ProbLabel], cfg: &ForestConfig, seed: u64) -> Result<DecisionForest> {
    let labels = round_labels(p, seed);
    let ties = p.iter().filter(|p| (p.p_first() - 0.5).abs() <= crate::labelmodel::TIE_TOLERANCE).count();
    let mut forest = fit_forest(x, &labels, cfg)?;
    forest.label_rounding = Some(LabelRounding { seed, ties });
    Ok(forest)
}

impl DecisionForest {
    pub fn with_fingerprint(mut self, fingerprint: impl Into<String>) -> Self {
        self.schema_fingerprint = Some(fingerprint.into());
        self
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<ProbLabel> {
        if x.len() != self.n_features {
            return Err(Error::Dimension { expected: self.n_features, actual: x.len() });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("feature vector has a missing or non-finite value".into()));
        }
        let sum: f64 = self.trees.iter().map(|t| t.leaf_value(x)).sum();
        Ok(ProbLabel::clamped(sum / self.trees.len() as f64))
    }

    pub fn predict_proba_all(&self, xs: &[Vec<f64>]) -> Result<Vec<ProbLabel>> {
        xs.iter().map(|x| self.predict_proba(x)).collect()
    }

    /// Hard predictions; exact 0.5 takes a seeded coin.
    pub fn predict(&self, xs: &[Vec<f64>], seed: u64) -> Result<Vec<Choice>> {
        Ok(round_labels(&self.predict_proba_all(xs)?, seed))
    }

    pub fn to_json(&self) -> Result<String> {
        let f = self.clone();
        let file = ForestFile {
            version: FOREST_FILE_VERSION,
            n_features: f.n_features,
            config: f.config,
            schema_fingerprint: f.schema_fingerprint,
            label_rounding: f.label_rounding,
            trees: f.trees,
        };
        let mut s = serde_json::to_string(&file)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ForestFile = serde_json::from_str(text)?;
        if file.version != FOREST_FILE_VERSION {
            return Err(Error::Data(format!("unsupported forest file version {}", file.version)));
        }
        let f = DecisionForest {
            n_features: file.n_features,
            config: file.config,
            schema_fingerprint: file.schema_fingerprint,
            label_rounding: file.label_rounding,
            trees: file.trees,
        };
        if f.trees.is_empty() {
            return Err(Error::Data("forest file has no trees".into()));
        }
        for t in &f.trees {
            t.validate(f.n_features)?;
        }
        Ok(f)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[derive(Serialize, Deserialize)]
struct ForestFile {
    version: u32,
    n_features: usize,
    config: ForestConfig,
    schema_fingerprint: Option<String>,
    label_rounding: Option<LabelRounding>,
    trees: Vec<Tree>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use Choice::{First as F, Second as S};

    fn xor() -> (Vec<Vec<f64>>, Vec<Choice>) {
        let x = vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 1.0]];
        (x, vec![F, S, S, F])
    }

    #[test]
    fn gini_of_three_to_one() {
        assert!((gini_impurity(3, 4) - 0.375).abs() < 1e-15);
        assert_eq!(gini_impurity(4, 4), 0.0);
        assert_eq!(gini_impurity(2, 4), 0.5);
    }

    #[test]
    fn single_row_gives_single_leaves() {
        let f = fit_forest(&[vec![1.0, 2.0]], &[S], &ForestConfig { n_trees: 5, ..Default::default() }).unwrap();
        assert!(f.trees.iter().all(|t| t.n_nodes() == 1 && t.leaf_p[0] == 0.0));
        assert_eq!(f.predict_proba(&[9.0, 9.0]).unwrap().p_first(), 0.0);
    }

    #[test]
    fn zero_gain_split_memorizes_xor() {
        let (x, y) = xor();
        let cfg = ForestConfig { n_trees: 1, bootstrap: false, ..Default::default() };
        let f = fit_forest(&x, &y, &cfg).unwrap();
        assert_eq!(f.predict(&x, 0).unwrap(), y);
        // The root split gains nothing on XOR; lowest feature wins.
        assert_eq!(f.trees[0].feature[0], 0);
        assert_eq!(f.trees[0].threshold[0], 0.5);
    }

    #[test]
    fn single_tree_equals_leaf_value() {
        let (x, y) = xor();
        let f = fit_forest(&x, &y, &ForestConfig { n_trees: 1, ..Default::default() }).unwrap();
        for row in &x {
            assert_eq!(f.predict_proba(row).unwrap().p_first(), f.trees[0].leaf_value(row));
        }
    }

    #[test]
    fn max_depth_caps_growth() {
        let (x, y) = xor();
        let cfg = ForestConfig { n_trees: 1, bootstrap: false, max_depth: Some(1), ..Default::default() };
        let f = fit_forest(&x, &y, &cfg).unwrap();
        assert_eq!(f.trees[0].depth(), 1);
    }

    #[test]
    fn two_trees_average() {
        let mut f = fit_forest(&[vec![0.0], vec![1.0]], &[F, S], &ForestConfig { n_trees: 2, bootstrap: false, ..Default::default() }).unwrap();
        f.trees[0] = Tree { feature: vec![-1], threshold: vec![0.0], left: vec![-1], right: vec![-1], leaf_p: vec![1.0] };
        f.trees[1] = Tree { feature: vec![-1], threshold: vec![0.0], left: vec![-1], right: vec![-1], leaf_p: vec![0.0] };
        assert_eq!(f.predict_proba(&[0.3]).unwrap().p_first(), 0.5);
    }

    #[test]
    fn input_errors() {
        let cfg = ForestConfig::default();
        assert!(fit_forest(&[], &[], &cfg).is_err());
        assert!(matches!(fit_forest(&[vec![1.0], vec![1.0, 2.0]], &[F, S], &cfg), Err(Error::Dimension { .. })));
        assert!(matches!(fit_forest(&[vec![f64::NAN]], &[F], &cfg), Err(Error::Data(_))));
        assert!(fit_forest(&[vec![1.0]], &[F], &ForestConfig { n_trees: 0, ..cfg.clone() }).is_err());
        assert!(fit_forest(&[vec![1.0]], &[F], &ForestConfig { min_samples_split: 1, ..cfg.clone() }).is_err());
        let f = fit_forest(&[vec![1.0]], &[F], &cfg).unwrap();
        assert!(f.predict_proba(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn problabels_all_first_match_hard_labels() {
        let (x, _) = xor();
        let cfg = ForestConfig { n_trees: 3, ..Default::default() };
        let p = vec![ProbLabel::new(1.0).unwrap(); 4];
        let soft = fit_on_problabels(&x, &p, &cfg, 5).unwrap();
        let hard = fit_forest(&x, &[F; 4], &cfg).unwrap();
        assert_eq!(soft.trees, hard.trees);
        assert_eq!(soft.label_rounding, Some(LabelRounding { seed: 5, ties: 0 }));
    }

    #[test]
    fn json_round_trip() {
        let (x, y) = xor();
        let f = fit_forest(&x, &y, &ForestConfig { n_trees: 4, ..Default::default() }).unwrap().with_fingerprint("ke:6");
        let back = DecisionForest::from_json(&f.to_json().unwrap()).unwrap();
        assert_eq!(back, f);
        assert!(f.to_json().unwrap().contains("\"leaf_p\""));
    }

    #[test]
    fn corrupt_tree_rejected() {
        let (x, y) = xor();
        let mut f = fit_forest(&x, &y, &ForestConfig { n_trees: 1, bootstrap: false, ..Default::default() }).unwrap();
        f.trees[0].left[0] = 0;
        assert!(DecisionForest::from_json(&f.to_json().unwrap()).is_err());
    }
}
