//! Generative label model: a factor graph over the label matrix and a latent
//! true choice per scenario, with labeling-propensity, accuracy and pairwise
//! correlation factors.
//!
//! For a row `Λ_i` and latent `y_i`,
//!
//! ```text
//! score(Λ_i, y_i) = Σ_j w_lab[j]·1{Λ_ij ≠ abstain}
//!                 + Σ_j w_acc[j]·1{Λ_ij = y_i}
//!                 + Σ_{(j,k)∈C} w_corr[(j,k)]·1{Λ_ij = Λ_ik}
//! p_w(Λ, Y) = exp(Σ_i score(Λ_i, y_i)) / Z_w
//! ```
//!
//! Weights are fit by minimizing the marginal pseudolikelihood
//! `Σ_i Σ_j −log Σ_y p_w(Λ_ij, y | Λ_i,¬j)` plus an L1 penalty. Because the
//! factors decompose per row and `y` is binary, each conditional involves only
//! the 3 × 2 table of (candidate value, latent choice), so the gradient is
//! available in closed form. A Gibbs-sampling estimator of the same gradient
//! is also provided.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{CandidateLabel, ProbLabel};
use crate::error::{Error, Result};
use crate::heuristics::LabelMatrix;

const FIRST: u8 = 0;
const SECOND: u8 = 1;
const ABSTAIN: u8 = 2;

/// Largest M for which the row partition function is enumerated over 3^M rows
/// when correlation factors are present.
const MAX_ENUMERATED_HEURISTICS: usize = 14;

fn code(c: CandidateLabel) -> u8 {
    match c {
        CandidateLabel::First => FIRST,
        CandidateLabel::Second => SECOND,
        CandidateLabel::Abstain => ABSTAIN,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GradientMode {
    #[default]
    Exact,
    Gibbs,
}

impl GradientMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "exact" => Ok(GradientMode::Exact),
            "gibbs" => Ok(GradientMode::Gibbs),
            other => Err(Error::Config(format!("unknown gradient mode `{other}` (expected exact or gibbs)"))),
        }
    }
}

/// Which heuristic pairs receive a correlation factor.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Correlations {
    #[default]
    None,
    Pairs(Vec<(usize, usize)>),
    /// Every pair whose both-vote overlap is at least `tau` of the rows.
    Overlap { tau: f64 },
}

impl Correlations {
    /// `none`, `overlap` / `overlap:0.3`, or an explicit list `0-1,2-3`.
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "none" || s.is_empty() {
            return Ok(Correlations::None);
        }
        if let Some(rest) = s.strip_prefix("overlap") {
            let tau = match rest.strip_prefix(':') {
                Some(t) => t
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Config(format!("bad overlap threshold in `{s}`")))?,
                None if rest.is_empty() => 0.25,
                None => return Err(Error::Config(format!("bad correlation spec `{s}`"))),
            };
            return Ok(Correlations::Overlap { tau });
        }
        let pairs = s
            .split(',')
            .map(|p| {
                let (a, b) = p
                    .split_once('-')
                    .ok_or_else(|| Error::Config(format!("bad correlation pair `{p}`")))?;
                let parse = |x: &str| {
                    x.trim()
                        .parse::<usize>()
                        .map_err(|_| Error::Config(format!("bad correlation pair `{p}`")))
                };
                Ok((parse(a)?, parse(b)?))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Correlations::Pairs(pairs))
    }

    fn resolve(&self, l: &LabelMatrix) -> Result<Vec<(usize, usize)>> {
        match self {
            Correlations::None => Ok(Vec::new()),
            Correlations::Pairs(p) => Ok(p.clone()),
            Correlations::Overlap { tau } => {
                let m = l.n_heuristics();
                let n = l.n_scenarios().max(1) as f64;
                let mut out = Vec::new();
                for j in 0..m {
                    for k in j + 1..m {
                        let both = l
                            .rows()
                            .filter(|r| !r[j].is_abstain() && !r[k].is_abstain())
                            .count() as f64;
                        if both / n >= *tau {
                            out.push((j, k));
                        }
                    }
                }
                Ok(out)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerativeConfig {
    /// L1 strength on the summed objective.
    pub epsilon: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub gradient_mode: GradientMode,
    pub gibbs_samples: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub correlations: Correlations,
    /// Keep the fit in the orientation where heuristics beat chance on
    /// average (see [`fit_generative`]).
    pub canonical_orientation: bool,
}

impl Default for GenerativeConfig {
    fn default() -> Self {
        GenerativeConfig {
            epsilon: 0.01,
            learning_rate: 0.05,
            epochs: 500,
            gradient_mode: GradientMode::Exact,
            gibbs_samples: 200,
            burn_in: 50,
            seed: 0,
            correlations: Correlations::None,
            canonical_orientation: true,
        }
    }
}

impl GenerativeConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("invalid generative config: {m}")));
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return bad("epsilon must be finite and >= 0");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be finite and > 0");
        }
        if self.gradient_mode == GradientMode::Gibbs && self.gibbs_samples == 0 {
            return bad("gibbs_samples must be >= 1 in gibbs mode");
        }
        if let Correlations::Overlap { tau } = self.correlations {
            if !(0.0..=1.0).contains(&tau) {
                return bad("overlap threshold must lie in [0, 1]");
            }
        }
        Ok(())
    }
}

/// Fitted (or hand-set) weights plus the configuration that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerativeModel {
    pub pairs: Vec<(usize, usize)>,
    pub w_lab: Vec<f64>,
    pub w_acc: Vec<f64>,
    pub w_corr: Vec<f64>,
    pub config: GenerativeConfig,
}

/// Distinct label-matrix rows with their multiplicities, in a fixed order.
struct Patterns {
    rows: Vec<Vec<u8>>,
    counts: Vec<f64>,
    total: f64,
}

impl Patterns {
    fn from_matrix(l: &LabelMatrix) -> Self {
        let mut map: BTreeMap<Vec<u8>, usize> = BTreeMap::new();
        for r in l.rows() {
            *map.entry(r.iter().map(|c| code(*c)).collect()).or_default() += 1;
        }
        let (rows, counts): (Vec<_>, Vec<_>) = map.into_iter().map(|(r, c)| (r, c as f64)).unzip();
        Patterns { rows, counts, total: l.n_scenarios() as f64 }
    }
}

/// Flat weight vector `[w_lab (M), w_acc (M), w_corr (|C|)]` with the
/// correlation pairs indexed by column.
struct Layout {
    m: usize,
    /// For each column, the (pair index, other column) of every pair touching it.
    corr_of: Vec<Vec<(usize, usize)>>,
}

impl Layout {
    fn new(m: usize, pairs: &[(usize, usize)]) -> Self {
        let mut corr_of = vec![Vec::new(); m];
        for (c, &(j, k)) in pairs.iter().enumerate() {
            corr_of[j].push((c, k));
            corr_of[k].push((c, j));
        }
        Layout { m, corr_of }
    }

    fn lab(&self, j: usize) -> usize {
        j
    }

    fn acc(&self, j: usize) -> usize {
        self.m + j
    }

    fn corr(&self, c: usize) -> usize {
        2 * self.m + c
    }

    /// Unnormalized log potentials of (candidate value of column j, latent y),
    /// keeping only terms that vary with either.
    fn scores(&self, w: &[f64], row: &[u8], j: usize) -> [[f64; 2]; 3] {
        let mut base = [0.0f64; 2];
        for (k, &v) in row.iter().enumerate() {
            if k != j && v != ABSTAIN {
                base[v as usize] += w[self.acc(k)];
            }
        }
        let mut s = [[0.0f64; 2]; 3];
        for (lam, sl) in s.iter_mut().enumerate() {
            let lam = lam as u8;
            let mut shared = 0.0;
            if lam != ABSTAIN {
                shared += w[self.lab(j)];
            }
            for &(c, k) in &self.corr_of[j] {
                if row[k] == lam {
                    shared += w[self.corr(c)];
                }
            }
            for (y, v) in sl.iter_mut().enumerate() {
                *v = base[y] + shared + if lam == y as u8 { w[self.acc(j)] } else { 0.0 };
            }
        }
        s
    }

    /// Adds `weight · (E_joint[φ] − E_post[φ])` to `grad`, the gradient of
    /// `−log p(Λ_ij | Λ_i,¬j)`. `post[y]` is the posterior of y given the
    /// observed row; `joint[λ][y]` the conditional of (Λ_ij, y) given Λ_i,¬j.
    fn add_gradient(&self, row: &[u8], j: usize, post: &[f64; 2], joint: &[[f64; 2]; 3], weight: f64, grad: &mut [f64]) {
        let obs = row[j];
        let marg_y = [joint[0][0] + joint[1][0] + joint[2][0], joint[0][1] + joint[1][1] + joint[2][1]];
        let marg_l = [joint[0][0] + joint[0][1], joint[1][0] + joint[1][1], joint[2][0] + joint[2][1]];

        let post_lab = if obs != ABSTAIN { 1.0 } else { 0.0 };
        grad[self.lab(j)] += weight * ((marg_l[0] + marg_l[1]) - post_lab);

        let post_acc = if obs != ABSTAIN { post[obs as usize] } else { 0.0 };
        grad[self.acc(j)] += weight * ((joint[0][0] + joint[1][1]) - post_acc);

        for (k, &v) in row.iter().enumerate() {
            if k != j && v != ABSTAIN {
                grad[self.acc(k)] += weight * (marg_y[v as usize] - post[v as usize]);
            }
        }
        for &(c, k) in &self.corr_of[j] {
            let post_corr = if row[k] == obs { 1.0 } else { 0.0 };
            grad[self.corr(c)] += weight * (marg_l[row[k] as usize] - post_corr);
        }
    }
}

fn logsumexp(xs: impl IntoIterator<Item = f64>) -> f64 {
    let xs: Vec<f64> = xs.into_iter().collect();
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// `(−log p(Λ_ij | Λ_i,¬j), posterior over y, joint over (λ, y))`, exactly.
fn exact_terms(s: &[[f64; 2]; 3], obs: u8) -> (f64, [f64; 2], [[f64; 2]; 3]) {
    let lse_obs = logsumexp(s[obs as usize]);
    let lse_all = logsumexp(s.iter().flatten().copied());
    let post = [(s[obs as usize][0] - lse_obs).exp(), (s[obs as usize][1] - lse_obs).exp()];
    let mut joint = [[0.0; 2]; 3];
    for (jl, sl) in joint.iter_mut().zip(s) {
        for (v, x) in jl.iter_mut().zip(sl) {
            *v = (x - lse_all).exp();
        }
    }
    (lse_all - lse_obs, post, joint)
}

fn sample_index(rng: &mut ChaCha8Rng, logits: &[f64]) -> usize {
    let lse = logsumexp(logits.iter().copied());
    let mut u: f64 = rng.gen();
    for (i, l) in logits.iter().enumerate() {
        u -= (l - lse).exp();
        if u < 0.0 {
            return i;
        }
    }
    logits.len() - 1
}

/// Sampled estimates of the posterior over y and the joint over (λ, y).
///
/// The positive phase draws y from its conditional given the observed row;
/// the negative phase runs a Gibbs chain alternating y | λ and λ | y, started
/// at the observed value.
fn gibbs_terms(s: &[[f64; 2]; 3], obs: u8, samples: usize, burn_in: usize, rng: &mut ChaCha8Rng) -> ([f64; 2], [[f64; 2]; 3]) {
    let per = 1.0 / samples as f64;
    let mut post = [0.0; 2];
    for _ in 0..samples {
        post[sample_index(rng, &s[obs as usize])] += per;
    }
    let mut joint = [[0.0; 2]; 3];
    let mut lam = obs as usize;
    let mut y = sample_index(rng, &s[lam]);
    for step in 0..burn_in + samples {
        y = sample_index(rng, &s[lam]);
        lam = sample_index(rng, &[s[0][y], s[1][y], s[2][y]]);
        if step >= burn_in {
            joint[lam][y] += per;
        }
    }
    let _ = y;
    (post, joint)
}

impl GenerativeModel {
    /// A model with the given weights and default configuration.
    pub fn from_weights(w_lab: Vec<f64>, w_acc: Vec<f64>, pairs: Vec<(usize, usize)>, w_corr: Vec<f64>) -> Result<Self> {
        let model = GenerativeModel { pairs, w_lab, w_acc, w_corr, config: GenerativeConfig::default() };
        model.validate()?;
        Ok(model)
    }

    /// All-zero weights for `m` heuristics and the given pairs.
    pub fn zeros(m: usize, pairs: Vec<(usize, usize)>, config: GenerativeConfig) -> Result<Self> {
        let c = pairs.len();
        let model = GenerativeModel { pairs, w_lab: vec![0.0; m], w_acc: vec![0.0; m], w_corr: vec![0.0; c], config };
        model.validate()?;
        Ok(model)
    }

    pub fn n_heuristics(&self) -> usize {
        self.w_lab.len()
    }

    fn validate(&self) -> Result<()> {
        let m = self.w_lab.len();
        if m == 0 {
            return Err(Error::Model("generative model needs at least one heuristic".into()));
        }
        if self.w_acc.len() != m || self.w_corr.len() != self.pairs.len() {
            return Err(Error::Model(format!(
                "weight lengths ({}, {}, {}) do not match M = {m}, |C| = {}",
                m,
                self.w_acc.len(),
                self.w_corr.len(),
                self.pairs.len()
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for &(j, k) in &self.pairs {
            if j >= k || k >= m {
                return Err(Error::Model(format!("invalid correlation pair ({j}, {k}) for M = {m}")));
            }
            if !seen.insert((j, k)) {
                return Err(Error::Model(format!("duplicate correlation pair ({j}, {k})")));
            }
        }
        self.config.validate()
    }

    /// Weights as one vector `[w_lab, w_acc, w_corr]`.
    pub fn flat_weights(&self) -> Vec<f64> {
        let mut w = self.w_lab.clone();
        w.extend(&self.w_acc);
        w.extend(&self.w_corr);
        w
    }

    pub fn set_flat_weights(&mut self, w: &[f64]) -> Result<()> {
        let m = self.n_heuristics();
        let expected = 2 * m + self.pairs.len();
        if w.len() != expected {
            return Err(Error::Dimension { expected, actual: w.len() });
        }
        self.w_lab = w[..m].to_vec();
        self.w_acc = w[m..2 * m].to_vec();
        self.w_corr = w[2 * m..].to_vec();
        Ok(())
    }

    fn check_matrix(&self, l: &LabelMatrix) -> Result<()> {
        if l.n_heuristics() != self.n_heuristics() {
            return Err(Error::Dimension { expected: self.n_heuristics(), actual: l.n_heuristics() });
        }
        Ok(())
    }

    /// Unregularized negative log pseudolikelihood, summed over rows and columns.
    pub fn pseudolikelihood_loss(&self, l: &LabelMatrix) -> Result<f64> {
        Ok(self.loss_and_gradient(l)?.0)
    }

    /// Regularized training objective (sum form): loss + ε‖w‖₁.
    pub fn objective(&self, l: &LabelMatrix) -> Result<f64> {
        let l1: f64 = self.flat_weights().iter().map(|w| w.abs()).sum();
        Ok(self.pseudolikelihood_loss(l)? + self.config.epsilon * l1)
    }

    /// Exact loss and its gradient with respect to [`Self::flat_weights`].
    pub fn loss_and_gradient(&self, l: &LabelMatrix) -> Result<(f64, Vec<f64>)> {
        self.check_matrix(l)?;
        let layout = Layout::new(self.n_heuristics(), &self.pairs);
        let patterns = Patterns::from_matrix(l);
        let w = self.flat_weights();
        let mut grad = vec![0.0; w.len()];
        let loss = exact_pass(&layout, &patterns, &w, &mut grad);
        Ok((loss, grad))
    }

    /// `p(y_i | Λ_i)` per row. Propensity and correlation factors do not depend
    /// on `y_i` and cancel.
    pub fn predict_marginals(&self, l: &LabelMatrix) -> Result<Vec<ProbLabel>> {
        self.check_matrix(l)?;
        Ok(l
            .rows()
            .map(|row| {
                let (mut a_first, mut a_second) = (0.0, 0.0);
                for (c, w) in row.iter().zip(&self.w_acc) {
                    match c {
                        CandidateLabel::First => a_first += w,
                        CandidateLabel::Second => a_second += w,
                        CandidateLabel::Abstain => {}
                    }
                }
                ProbLabel::clamped(1.0 / (1.0 + (a_second - a_first).exp()))
            })
            .collect())
    }

    fn row_score(&self, row: &[u8], y: u8) -> f64 {
        let mut s = 0.0;
        for (j, &v) in row.iter().enumerate() {
            if v != ABSTAIN {
                s += self.w_lab[j];
                if v == y {
                    s += self.w_acc[j];
                }
            }
        }
        for (c, &(j, k)) in self.pairs.iter().enumerate() {
            if row[j] == row[k] {
                s += self.w_corr[c];
            }
        }
        s
    }

    /// `log Σ_{Λ_i, y_i} exp(score)` for a single row.
    pub fn log_row_partition(&self) -> Result<f64> {
        let m = self.n_heuristics();
        if self.pairs.is_empty() {
            // Columns are independent given y, and the per-column sum does not depend on y.
            let per_col: f64 = self
                .w_lab
                .iter()
                .zip(&self.w_acc)
                .map(|(lab, acc)| (1.0 + lab.exp() * (1.0 + acc.exp())).ln())
                .sum();
            return Ok(std::f64::consts::LN_2 + per_col);
        }
        if m > MAX_ENUMERATED_HEURISTICS {
            return Err(Error::Model(format!(
                "partition function with correlations is enumerated only for M <= {MAX_ENUMERATED_HEURISTICS}"
            )));
        }
        let total = 3usize.pow(m as u32);
        let mut row = vec![0u8; m];
        let mut terms = Vec::with_capacity(2 * total);
        for idx in 0..total {
            let mut x = idx;
            for v in row.iter_mut() {
                *v = (x % 3) as u8;
                x /= 3;
            }
            terms.push(self.row_score(&row, FIRST));
            terms.push(self.row_score(&row, SECOND));
        }
        Ok(logsumexp(terms))
    }

    /// `log p_w(Λ) = Σ_i [log Σ_{y_i} exp(score(Λ_i, y_i)) − log Z_row]`.
    pub fn log_marginal_likelihood(&self, l: &LabelMatrix) -> Result<f64> {
        self.check_matrix(l)?;
        let log_z = self.log_row_partition()?;
        Ok(l
            .rows()
            .map(|r| {
                let row: Vec<u8> = r.iter().map(|c| code(*c)).collect();
                logsumexp([self.row_score(&row, FIRST), self.row_score(&row, SECOND)]) - log_z
            })
            .sum())
    }

    /// Implied probability that a heuristic's vote matches the latent choice
    /// when it is the only voter: `σ(w_acc)`.
    pub fn implied_accuracies(&self) -> Vec<f64> {
        self.w_acc.iter().map(|w| 1.0 / (1.0 + (-w).exp())).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        let file = ModelFile {
            version: MODEL_FILE_VERSION,
            m: self.n_heuristics(),
            pairs: self.pairs.clone(),
            w_lab: to_numbers(&self.w_lab)?,
            w_acc: to_numbers(&self.w_acc)?,
            w_corr: to_numbers(&self.w_corr)?,
            config: self.config.clone(),
        };
        let mut s = serde_json::to_string_pretty(&file)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        if file.version != MODEL_FILE_VERSION {
            return Err(Error::Data(format!("unsupported model file version {}", file.version)));
        }
        let from = |v: &[serde_json::Number]| -> Result<Vec<f64>> {
            v.iter()
                .map(|n| n.as_f64().ok_or_else(|| Error::Data(format!("bad weight {n}"))))
                .collect()
        };
        let model = GenerativeModel {
            pairs: file.pairs,
            w_lab: from(&file.w_lab)?,
            w_acc: from(&file.w_acc)?,
            w_corr: from(&file.w_corr)?,
            config: file.config,
        };
        if model.n_heuristics() != file.m {
            return Err(Error::Data(format!("model file declares M = {} but has {} weights", file.m, model.n_heuristics())));
        }
        model.validate()?;
        Ok(model)
    }
}

const MODEL_FILE_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelFile {
    version: u32,
    #[serde(rename = "M")]
    m: usize,
    pairs: Vec<(usize, usize)>,
    w_lab: Vec<serde_json::Number>,
    w_acc: Vec<serde_json::Number>,
    w_corr: Vec<serde_json::Number>,
    config: GenerativeConfig,
}

/// Decimal with 17 significant digits.
fn to_numbers(ws: &[f64]) -> Result<Vec<serde_json::Number>> {
    ws.iter()
        .map(|w| {
            if !w.is_finite() {
                return Err(Error::Model(format!("cannot serialize non-finite weight {w}")));
            }
            format!("{w:.16e}")
                .parse::<serde_json::Number>()
                .map_err(Error::from)
        })
        .collect()
}

fn exact_pass(layout: &Layout, patterns: &Patterns, w: &[f64], grad: &mut [f64]) -> f64 {
    let mut loss = 0.0;
    for (row, &count) in patterns.rows.iter().zip(&patterns.counts) {
        for j in 0..layout.m {
            let s = layout.scores(w, row, j);
            let (nll, post, joint) = exact_terms(&s, row[j]);
            loss += count * nll;
            layout.add_gradient(row, j, &post, &joint, count, grad);
        }
    }
    loss
}

fn gibbs_pass(layout: &Layout, patterns: &Patterns, w: &[f64], grad: &mut [f64], cfg: &GenerativeConfig, rng: &mut ChaCha8Rng) {
    for (row, &count) in patterns.rows.iter().zip(&patterns.counts) {
        for j in 0..layout.m {
            let s = layout.scores(w, row, j);
            let (post, joint) = gibbs_terms(&s, row[j], cfg.gibbs_samples, cfg.burn_in, rng);
            layout.add_gradient(row, j, &post, &joint, count, grad);
        }
    }
}

/// Maps `(w_lab, w_acc)` to the equivalent `(w_lab + w_acc, −w_acc)` when
/// the coverage-weighted accuracy weight is negative.
fn reflect_if_mirrored(w: &mut [f64], coverage: &[f64]) -> bool {
    let m = coverage.len();
    let lean: f64 = coverage.iter().zip(&w[m..2 * m]).map(|(c, a)| c * a).sum();
    if lean >= 0.0 {
        return false;
    }
    for j in 0..m {
        w[j] += w[m + j];
        w[m + j] = -w[m + j];
    }
    true
}

fn check_finite(values: &[f64], loss: f64, epoch: usize) -> Result<()> {
    if !loss.is_finite() || values.iter().any(|x| !x.is_finite()) {
        return Err(Error::Model(format!("fit diverged at epoch {epoch}: non-finite objective or weights")));
    }
    Ok(())
}

/// Fits weights by proximal gradient descent from `w = 0`.
///
/// Steps are taken on the per-row mean of the objective, so the gradient
/// step is `learning_rate / N` and the soft threshold `learning_rate · ε / N`.
///
/// The pseudolikelihood only sees the distribution of Λ, which is unchanged by
/// relabeling y: `(w_lab, w_acc) → (w_lab + w_acc, −w_acc)` gives the same
/// loss. From `w = 0` the first step is driven by coverage rather than
/// agreement and often lands in the mirrored basin, where every heuristic is
/// judged worse than chance. With `canonical_orientation`, any iterate whose
/// coverage-weighted `Σ w_acc` is negative is reflected back.
pub fn fit_generative(l: &LabelMatrix, config: &GenerativeConfig) -> Result<GenerativeModel> {
    config.validate()?;
    if l.n_scenarios() == 0 {
        return Err(Error::Data("cannot fit a generative model on an empty label matrix".into()));
    }
    let pairs = config.correlations.resolve(l)?;
    let mut model = GenerativeModel::zeros(l.n_heuristics(), pairs, config.clone())?;
    let layout = Layout::new(model.n_heuristics(), &model.pairs);
    let patterns = Patterns::from_matrix(l);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut w = model.flat_weights();
    let mut grad = vec![0.0; w.len()];
    let step = config.learning_rate / patterns.total;
    let shrink = step * config.epsilon;
    let coverage: Vec<f64> = (0..layout.m)
        .map(|j| l.column(j).filter(|c| !c.is_abstain()).count() as f64 / patterns.total)
        .collect();

    for epoch in 0..config.epochs {
        grad.iter_mut().for_each(|g| *g = 0.0);
        match config.gradient_mode {
            GradientMode::Exact => {
                let loss = exact_pass(&layout, &patterns, &w, &mut grad);
                check_finite(&grad, loss, epoch)?;
            }
            GradientMode::Gibbs => {
                gibbs_pass(&layout, &patterns, &w, &mut grad, config, &mut rng);
                check_finite(&grad, 0.0, epoch)?;
            }
        }
        for (wi, g) in w.iter_mut().zip(&grad) {
            let v = *wi - step * g;
            *wi = v.signum() * (v.abs() - shrink).max(0.0);
        }
        check_finite(&w, 0.0, epoch)?;
        if config.canonical_orientation {
            reflect_if_mirrored(&mut w, &coverage);
        }
    }
    model.set_flat_weights(&w)?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use CandidateLabel::{Abstain as A, First as F, Second as S};

    fn matrix(rows: &[&[CandidateLabel]]) -> LabelMatrix {
        LabelMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn zero_weights_give_uniform_conditionals() {
        let l = matrix(&[&[F, S, A], &[A, A, A], &[S, S, F]]);
        let model = GenerativeModel::zeros(3, vec![], GenerativeConfig::default()).unwrap();
        let loss = model.pseudolikelihood_loss(&l).unwrap();
        assert!((loss - 9.0 * 3f64.ln()).abs() < 1e-12);
        assert!(model.predict_marginals(&l).unwrap().iter().all(|p| p.p_first() == 0.5));
    }

    #[test]
    fn single_heuristic_marginal() {
        let model = GenerativeModel::from_weights(vec![0.0], vec![3f64.ln()], vec![], vec![]).unwrap();
        let p = model.predict_marginals(&matrix(&[&[F], &[S], &[A]])).unwrap();
        assert!((p[0].p_first() - 0.75).abs() < 1e-12);
        assert!((p[1].p_first() - 0.25).abs() < 1e-12);
        assert_eq!(p[2].p_first(), 0.5);
    }

    #[test]
    fn zero_epochs_keep_zero_weights() {
        let l = matrix(&[&[F, S], &[F, F]]);
        let cfg = GenerativeConfig { epochs: 0, ..Default::default() };
        let model = fit_generative(&l, &cfg).unwrap();
        assert!(model.flat_weights().iter().all(|w| *w == 0.0));
    }

    #[test]
    fn invalid_config_rejected() {
        let l = matrix(&[&[F]]);
        let cfg = GenerativeConfig { epsilon: -1.0, ..Default::default() };
        assert!(matches!(fit_generative(&l, &cfg), Err(Error::Config(_))));
        let cfg = GenerativeConfig { learning_rate: 0.0, ..Default::default() };
        assert!(fit_generative(&l, &cfg).is_err());
    }

    #[test]
    fn reflection_preserves_the_loss() {
        let l = matrix(&[&[F, S, A], &[F, F, A], &[A, S, S], &[S, S, F], &[A, A, F]]);
        let mut model = GenerativeModel::from_weights(vec![0.3, -0.2, 0.1], vec![-0.5, -0.1, 0.2], vec![(0, 2)], vec![0.4]).unwrap();
        let before = model.pseudolikelihood_loss(&l).unwrap();
        let mut w = model.flat_weights();
        assert!(reflect_if_mirrored(&mut w, &[1.0, 1.0, 1.0]));
        model.set_flat_weights(&w).unwrap();
        assert_eq!(model.w_acc, vec![0.5, 0.1, -0.2]);
        assert!((model.pseudolikelihood_loss(&l).unwrap() - before).abs() < 1e-9);
        assert!(!reflect_if_mirrored(&mut w, &[1.0, 1.0, 1.0]));
    }

    #[test]
    fn non_finite_weights_reported() {
        assert!(matches!(check_finite(&[0.0, f64::NAN], 0.0, 3), Err(Error::Model(_))));
        assert!(matches!(check_finite(&[0.0], f64::INFINITY, 3), Err(Error::Model(_))));
        assert!(check_finite(&[1e300], 1.0, 3).is_ok());
    }

    #[test]
    fn bad_pairs_rejected() {
        assert!(GenerativeModel::from_weights(vec![0.0; 2], vec![0.0; 2], vec![(1, 0)], vec![0.0]).is_err());
        assert!(GenerativeModel::from_weights(vec![0.0; 2], vec![0.0; 2], vec![(0, 1), (0, 1)], vec![0.0; 2]).is_err());
        assert!(GenerativeModel::from_weights(vec![0.0; 2], vec![0.0; 2], vec![(0, 2)], vec![0.0]).is_err());
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let model = GenerativeModel::from_weights(
            vec![0.1, -2.0 / 3.0],
            vec![std::f64::consts::PI, 1e-300],
            vec![(0, 1)],
            vec![0.3],
        )
        .unwrap();
        let text = model.to_json().unwrap();
        assert!(text.contains("\"M\": 2"));
        assert!(text.contains("3.1415926535897931e+0"));
        let back = GenerativeModel::from_json(&text).unwrap();
        assert_eq!(back, model);
    }

    #[test]
    fn correlation_spec_parsing() {
        assert_eq!(Correlations::parse("none").unwrap(), Correlations::None);
        assert_eq!(Correlations::parse("overlap").unwrap(), Correlations::Overlap { tau: 0.25 });
        assert_eq!(Correlations::parse("overlap:0.5").unwrap(), Correlations::Overlap { tau: 0.5 });
        assert_eq!(Correlations::parse("0-1, 1-2").unwrap(), Correlations::Pairs(vec![(0, 1), (1, 2)]));
        assert!(Correlations::parse("0:1").is_err());
    }

    #[test]
    fn overlap_correlations_resolve() {
        let l = matrix(&[&[F, F, A], &[S, F, A], &[A, A, F], &[F, S, A]]);
        let pairs = Correlations::Overlap { tau: 0.5 }.resolve(&l).unwrap();
        assert_eq!(pairs, vec![(0, 1)]);
    }

    #[test]
    fn fitted_model_prefers_agreeing_heuristics() {
        // Three mostly-agreeing voters; the fit should trust agreement.
        let mut rows = Vec::new();
        for i in 0..60 {
            let y = if i % 2 == 0 { F } else { S };
            let noisy = if i % 5 == 0 { y.flip() } else { y };
            rows.push(vec![y, y, noisy]);
        }
        let l = LabelMatrix::from_rows(&rows).unwrap();
        let model = fit_generative(&l, &GenerativeConfig::default()).unwrap();
        assert!(model.w_acc.iter().all(|w| *w > 0.0), "{:?}", model.w_acc);
        let p = model.predict_marginals(&l).unwrap();
        assert!(p[0].p_first() > 0.5);
        assert!(p[1].p_first() < 0.5);
    }
}
