//! Batch command-line front end.
//!
//! Every command reads a flat `key = value` configuration (defaults, then the
//! `--config` file, then `--set` pairs, then the dedicated flags), writes its
//! outputs atomically under the output directory and records a manifest with
//! the resolved configuration and its SHA-256.

use std::collections::{BTreeMap, BTreeSet};
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::domain::{CandidateLabel, Choice, Dataset, Domain, Schema};
use crate::error::{Error, Result};
use crate::forest::ForestConfig;
use crate::heuristics::{apply_all, builtin_suite, load_suite, HeuristicSpec, LabelMatrix, KE_STRATEGIES};
use crate::ingest::{load_ke_csv, load_mm_csv, load_rankings_csv, make_split, AbstractionMap, MmLoadOptions, SplitFractions};
use crate::io::{fixed, fixed_json, json_bytes, write_atomic};
use crate::labelmodel::{
    borda_counts, fit_aggregator, scale_weights, AggregatorSpec, Correlations, GenerativeConfig, GradientMode, ModelKind,
    Scaling, StrategyRanking, TieKind, WeightSource,
};
use crate::metrics::{
    conflict_overlap, csv_field, curve_csv, density, heuristic_report, learning_curve, model_accuracy, perturbation,
    train_and_evaluate, CurveAxis, CurveConfig, CurveModel, Evaluation, DEFAULT_TYPE,
};
use crate::synth::{ke_population, PopulationConfig};

/// Every accepted key with its default. An empty default means "unset".
pub const CONFIG_KEYS: &[(&str, &str)] = &[
    ("domain", "auto"),
    ("data", ""),
    ("matrix", ""),
    ("suite", ""),
    ("rankings", ""),
    ("weights", ""),
    ("scaling", "max"),
    ("abstraction", ""),
    ("session_filter", "true"),
    ("synthetic.rows", "5000"),
    ("synthetic.noise", "0.05"),
    ("seed", "0"),
    ("out", "out"),
    ("model", "majority"),
    ("tie", "random"),
    ("mode", "weak"),
    ("split", "train=0.8,test=0.2"),
    ("group_by_respondent", "false"),
    ("generative.epsilon", "0.01"),
    ("generative.learning_rate", "0.05"),
    ("generative.epochs", "500"),
    ("generative.gradient", "exact"),
    ("generative.gibbs_samples", "200"),
    ("generative.burn_in", "50"),
    ("generative.correlations", "none"),
    ("generative.canonical_orientation", "true"),
    ("forest.n_trees", "100"),
    ("forest.max_depth", "none"),
    ("forest.min_samples_split", "2"),
    ("forest.bootstrap", "true"),
    ("forest.parallel", "true"),
    ("curve.axis", "rows"),
    ("curve.sizes", ""),
    ("curve.evaluation", "kfold:5"),
    ("curve.seeds", ""),
    ("curve.models", "supervised"),
];

/// Keys whose relative values resolve against the config file's directory.
const PATH_KEYS: [&str; 7] = ["data", "matrix", "suite", "rankings", "weights", "abstraction", "out"];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

fn known(key: &str) -> Result<()> {
    if CONFIG_KEYS.iter().any(|(k, _)| *k == key) {
        Ok(())
    } else {
        Err(Error::Config(format!("unknown config key `{key}`")))
    }
}

fn is_path_value(key: &str, value: &str) -> bool {
    PATH_KEYS.contains(&key)
        && !value.is_empty()
        && !value.starts_with("builtin:")
        && !value.starts_with("synthetic:")
        && !(key == "weights" && value.contains('='))
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig { values: CONFIG_KEYS.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect() }
    }
}

impl RunConfig {
    /// Applies a config file's `key = value` lines. `#` starts a comment; a key
    /// may appear once per file.
    pub fn apply_text(&mut self, text: &str, base: Option<&Path>) -> Result<()> {
        let mut seen = BTreeSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("config line {}: expected `key = value`", n + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            known(k).map_err(|e| Error::Config(format!("config line {}: {e}", n + 1)))?;
            if !seen.insert(k.to_string()) {
                return Err(Error::Config(format!("config line {}: `{k}` set twice", n + 1)));
            }
            let v = match base {
                Some(b) if is_path_value(k, v) && Path::new(v).is_relative() => b.join(v).display().to_string(),
                _ => v.to_string(),
            };
            self.values.insert(k.to_string(), v);
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<()> {
        known(key)?;
        self.values.insert(key.to_string(), value.into());
        Ok(())
    }

    pub fn get(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).expect("key validated")
    }

    fn opt(&self, key: &str) -> Option<&str> {
        Some(self.get(key)).filter(|v| !v.is_empty())
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self.get(key);
        v.parse().map_err(|_| Error::Config(format!("bad value `{v}` for `{key}`")))
    }

    fn flag(&self, key: &str) -> Result<bool> {
        match self.get(key) {
            "true" | "yes" | "1" => Ok(true),
            "false" | "no" | "0" => Ok(false),
            v => Err(Error::Config(format!("bad boolean `{v}` for `{key}`"))),
        }
    }

    /// Sorted `key = value` lines; the hashed form.
    pub fn canonical(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }

    pub fn seed(&self) -> Result<u64> {
        self.parse("seed")
    }

    pub fn generative(&self) -> Result<GenerativeConfig> {
        let c = GenerativeConfig {
            epsilon: self.parse("generative.epsilon")?,
            learning_rate: self.parse("generative.learning_rate")?,
            epochs: self.parse("generative.epochs")?,
            gradient_mode: GradientMode::parse(self.get("generative.gradient"))?,
            gibbs_samples: self.parse("generative.gibbs_samples")?,
            burn_in: self.parse("generative.burn_in")?,
            seed: self.seed()?,
            correlations: Correlations::parse(self.get("generative.correlations"))?,
            canonical_orientation: self.flag("generative.canonical_orientation")?,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn forest(&self) -> Result<ForestConfig> {
        let max_depth = match self.get("forest.max_depth") {
            "none" | "" => None,
            _ => Some(self.parse("forest.max_depth")?),
        };
        Ok(ForestConfig {
            n_trees: self.parse("forest.n_trees")?,
            max_depth,
            min_samples_split: self.parse("forest.min_samples_split")?,
            bootstrap: self.flag("forest.bootstrap")?,
            seed: self.seed()?,
            parallel: self.flag("forest.parallel")?,
            ..ForestConfig::default()
        })
    }

    pub fn split(&self) -> Result<SplitFractions> {
        SplitFractions::parse(self.get("split"))
    }
}

#[derive(Debug, Parser)]
#[command(name = "dilemma-forge", version, about = "Weakly supervised aggregation of moral-dilemma heuristics")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Apply a heuristic suite and write the label matrix with per-heuristic diagnostics.
    Label(CommonArgs),
    /// Aggregate the label matrix into one label per scenario.
    Aggregate(CommonArgs),
    /// Train a forest (supervised or on aggregate labels) and evaluate it on the test split.
    Train(CommonArgs),
    /// Accuracy against training-set size.
    Curve(CommonArgs),
    /// Accuracy lost when each heuristic is left out.
    Perturb(CommonArgs),
    /// Coverage, density, overlap/conflict and Borda tables.
    Report(CommonArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_parser = ["majority", "weighted", "generative"])]
    pub model: Option<String>,
    #[arg(long, value_parser = ["random", "genweights", "abstain"])]
    pub tie: Option<String>,
    /// Suite file, or `builtin:mm` / `builtin:ke`.
    #[arg(long)]
    pub suite: Option<String>,
    /// Override any config key.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

impl CommonArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
            cfg.apply_text(&text, path.parent())?;
        }
        for kv in &self.set {
            let (k, v) = kv.split_once('=').ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        if let Some(s) = self.seed {
            cfg.set("seed", s.to_string())?;
        }
        if let Some(o) = &self.out {
            cfg.set("out", o.display().to_string())?;
        }
        if let Some(m) = &self.model {
            cfg.set("model", m.clone())?;
        }
        if let Some(t) = &self.tie {
            cfg.set("tie", t.clone())?;
        }
        if let Some(s) = &self.suite {
            cfg.set("suite", s.clone())?;
        }
        Ok(cfg)
    }
}

/// Everything a command may need, loaded lazily from the config.
struct Inputs {
    dataset: Option<Dataset>,
    /// Rankings that came with a synthetic population.
    population_rankings: Option<Vec<StrategyRanking>>,
    domain: Domain,
}

fn sniff_domain(path: &Path) -> Result<Domain> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    let first = text.lines().next().unwrap_or("");
    if first.contains("ke-contests") {
        Ok(Domain::KidneyExchange)
    } else if first.contains("mm-") {
        Ok(Domain::MoralMachine)
    } else {
        Err(Error::Config(format!("cannot tell the domain of {}; set `domain`", path.display())))
    }
}

fn load_inputs(cfg: &RunConfig) -> Result<Inputs> {
    let explicit = match cfg.get("domain") {
        "auto" => None,
        d => Some(Domain::parse(d)?),
    };
    let Some(data) = cfg.opt("data") else {
        let domain = explicit
            .or_else(|| match cfg.get("suite") {
                "builtin:mm" => Some(Domain::MoralMachine),
                s if s.starts_with("builtin:ke") => Some(Domain::KidneyExchange),
                _ => None,
            })
            .unwrap_or(Domain::KidneyExchange);
        return Ok(Inputs { dataset: None, population_rankings: None, domain });
    };
    let (dataset, rankings) = match data {
        "synthetic:ke-factorial" => (crate::ingest::ke_factorial_design(), None),
        "synthetic:ke-population" => {
            let pop = ke_population(&PopulationConfig {
                n_rows: cfg.parse("synthetic.rows")?,
                noise: cfg.parse("synthetic.noise")?,
                seed: cfg.seed()?,
                ..PopulationConfig::default()
            })?;
            (pop.dataset, Some(pop.rankings))
        }
        s if s.starts_with("synthetic:") => return Err(Error::Config(format!("unknown synthetic source `{s}`"))),
        path => {
            let path = Path::new(path);
            let domain = match explicit {
                Some(d) => d,
                None => sniff_domain(path)?,
            };
            let d = match domain {
                Domain::KidneyExchange => load_ke_csv(path)?,
                Domain::MoralMachine => {
                    let abstraction = match cfg.opt("abstraction") {
                        Some(p) => AbstractionMap::load(Path::new(p))?,
                        None => AbstractionMap::default(),
                    };
                    load_mm_csv(path, &MmLoadOptions { session_filter: cfg.flag("session_filter")?, abstraction })?
                }
            };
            (d, None)
        }
    };
    let domain = dataset.schema.domain;
    if let Some(e) = explicit {
        if e != domain {
            return Err(Error::Config(format!("`domain = {e}` but the data is `{domain}`")));
        }
    }
    Ok(Inputs { dataset: Some(dataset), population_rankings: rankings, domain })
}

fn load_heuristics(cfg: &RunConfig, domain: Domain) -> Result<Vec<HeuristicSpec>> {
    let suite = match cfg.opt("suite") {
        Some(s) => s.to_string(),
        None => format!("builtin:{}", domain.id()),
    };
    let specs = match suite.strip_prefix("builtin:") {
        Some(id) => builtin_suite(id)?,
        None => load_suite(Path::new(&suite), &Schema::for_domain(domain))?,
    };
    if specs.is_empty() {
        return Err(Error::Config(format!("suite `{suite}` defines no heuristics")));
    }
    Ok(specs)
}

fn need_data(inputs: &Inputs) -> Result<&Dataset> {
    inputs.dataset.as_ref().ok_or_else(|| Error::Config("`data` is required for this command".into()))
}

/// The label matrix from `matrix`, or by applying the suite to the data.
fn label_matrix(cfg: &RunConfig, inputs: &Inputs) -> Result<LabelMatrix> {
    match cfg.opt("matrix") {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::Data(format!("cannot read matrix {p}: {e}")))?;
            let l = LabelMatrix::parse_csv(&text)?;
            if let Some(d) = &inputs.dataset {
                let ids: Vec<&str> = d.scenarios.iter().map(|s| s.id.as_str()).collect();
                if l.scenario_ids().iter().map(String::as_str).ne(ids.iter().copied()) {
                    return Err(Error::Data("matrix scenario ids do not match the data".into()));
                }
            }
            Ok(l)
        }
        None => apply_all(&load_heuristics(cfg, inputs.domain)?, need_data(inputs)?),
    }
}

fn parse_weights_csv(text: &str) -> Result<BTreeMap<String, f64>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    if rdr.headers()?.iter().collect::<Vec<_>>() != ["heuristic", "weight"] {
        return Err(Error::Data("weights file needs columns `heuristic,weight`".into()));
    }
    let mut out = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let w: f64 = rec[1].parse().map_err(|_| Error::Data(format!("bad weight `{}`", &rec[1])))?;
        out.insert(rec[0].to_string(), w);
    }
    Ok(out)
}

fn rankings(cfg: &RunConfig, inputs: &Inputs) -> Result<Option<Vec<StrategyRanking>>> {
    match cfg.opt("rankings") {
        Some(p) => Ok(Some(load_rankings_csv(Path::new(p))?)),
        None => Ok(inputs.population_rankings.clone()),
    }
}

fn strategies() -> Vec<String> {
    KE_STRATEGIES.iter().map(|s| s.to_string()).collect()
}

fn weight_source(cfg: &RunConfig, inputs: &Inputs) -> Result<WeightSource> {
    if let Some(w) = cfg.opt("weights") {
        let map = if w.contains('=') {
            w.split(',')
                .map(|kv| {
                    let (k, v) = kv.split_once('=').ok_or_else(|| Error::Config(format!("bad weight `{kv}`")))?;
                    let v: f64 = v.trim().parse().map_err(|_| Error::Config(format!("bad weight `{kv}`")))?;
                    Ok((k.trim().to_string(), v))
                })
                .collect::<Result<_>>()?
        } else {
            let text = std::fs::read_to_string(w).map_err(|e| Error::Data(format!("cannot read weights {w}: {e}")))?;
            parse_weights_csv(&text)?
        };
        return Ok(WeightSource::Fixed(map));
    }
    match rankings(cfg, inputs)? {
        Some(r) => Ok(WeightSource::Rankings { rankings: r, strategies: strategies(), scaling: Scaling::parse(cfg.get("scaling"))? }),
        None => Err(Error::Config("weighted voting needs `weights` or `rankings`".into())),
    }
}

fn model_kind(name: &str, cfg: &RunConfig, inputs: &Inputs) -> Result<ModelKind> {
    match name {
        "majority" => Ok(ModelKind::Majority),
        "weighted" => Ok(ModelKind::Weighted(weight_source(cfg, inputs)?)),
        "generative" => Ok(ModelKind::Generative),
        other => Err(Error::Config(format!("unknown model `{other}` (expected majority, weighted or generative)"))),
    }
}

fn aggregator(cfg: &RunConfig, inputs: &Inputs, kind: Option<&str>) -> Result<AggregatorSpec> {
    Ok(AggregatorSpec {
        kind: model_kind(kind.unwrap_or(cfg.get("model")), cfg, inputs)?,
        tie: TieKind::parse(cfg.get("tie"))?,
        generative: cfg.generative()?,
        seed: cfg.seed()?,
    })
}

fn all_respondents(d: Option<&Dataset>) -> Option<BTreeSet<String>> {
    d.map(|d| d.scenarios.iter().filter_map(|s| s.respondent_id.clone()).collect())
}

/// Files produced by one command, in write order.
pub struct Outputs(Vec<(String, Vec<u8>)>);

impl Outputs {
    fn add(&mut self, name: &str, bytes: impl Into<Vec<u8>>) {
        self.0.push((name.to_string(), bytes.into()));
    }
}

fn manifest(command: &str, cfg: &RunConfig, outputs: &Outputs) -> Result<Vec<u8>> {
    let files: Vec<_> = outputs
        .0
        .iter()
        .map(|(name, bytes)| json!({"file": name, "sha256": hex::encode(Sha256::digest(bytes))}))
        .collect();
    let mut seeds = json!({"seed": cfg.seed()?});
    if command == "curve" {
        seeds["curve.seeds"] = json!(curve_seeds(cfg)?);
    }
    Ok(json_bytes(&json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "config_hash": cfg.hash(),
        "config": cfg.values,
        "seeds": seeds,
        "outputs": files,
    })))
}

fn schema_fingerprint(schema: &Schema) -> String {
    let cols = schema.column_names().join(",");
    format!("{}:{}", schema.domain, &hex::encode(Sha256::digest(cols.as_bytes()))[..16])
}

fn cmd_label(cfg: &RunConfig, out: &mut Outputs) -> Result<()> {
    let inputs = load_inputs(cfg)?;
    let d = need_data(&inputs)?;
    let l = apply_all(&load_heuristics(cfg, inputs.domain)?, d)?;
    let truth: Vec<Option<Choice>> = d.scenarios.iter().map(|s| s.truth).collect();
    let report = heuristic_report(&l, &truth, None)?;
    out.add("matrix.csv", l.to_csv()?);
    out.add("report.csv", report.to_csv());
    out.add("report.json", json_bytes(&report.to_json()));
    Ok(())
}

fn cmd_aggregate(cfg: &RunConfig, out: &mut Outputs) -> Result<()> {
    let inputs = load_inputs(cfg)?;
    let l = label_matrix(cfg, &inputs)?;
    let spec = aggregator(cfg, &inputs, None)?;
    let fitted = fit_aggregator(&l, &spec, all_respondents(inputs.dataset.as_ref()).as_ref())?;
    let agg = fitted.apply(&l)?;
    let mut labels = String::from("scenario_id,label,p_first\n");
    for (i, id) in l.scenario_ids().iter().enumerate() {
        let p = agg.marginals.as_ref().map_or(String::new(), |m| fixed(m[i].p_first()));
        labels.push_str(&format!("{},{},{p}\n", csv_field(id), agg.labels[i].code()));
    }
    out.add("labels.csv", labels);
    if let Some(w) = &fitted.weights {
        let mut text = String::from("heuristic,weight\n");
        for (name, w) in l.heuristic_names().iter().zip(w.as_slice()) {
            text.push_str(&format!("{},{}\n", csv_field(name), fixed(*w)));
        }
        out.add("weights.csv", text);
    }
    if let Some(g) = &fitted.model {
        let mut text = String::from("heuristic,w_lab,w_acc,implied_accuracy\n");
        for (m, name) in l.heuristic_names().iter().enumerate() {
            text.push_str(&format!(
                "{},{},{},{}\n",
                csv_field(name),
                fixed(g.w_lab[m]),
                fixed(g.w_acc[m]),
                fixed(g.implied_accuracies()[m])
            ));
        }
        out.add("estimated_weights.csv", text);
        out.add("model.json", g.to_json()?);
    }
    Ok(())
}

fn evaluation_model(cfg: &RunConfig, inputs: &Inputs, mode: &str) -> Result<CurveModel> {
    let (what, kind) = match mode.split_once(':') {
        Some((w, k)) => (w, Some(k)),
        None => (mode, None),
    };
    match what {
        "supervised" if kind.is_none() => Ok(CurveModel::Supervised),
        "weak" => Ok(CurveModel::Weak(aggregator(cfg, inputs, kind)?)),
        "vote" => Ok(CurveModel::Vote(aggregator(cfg, inputs, kind)?)),
        _ => Err(Error::Config(format!("unknown model `{mode}` (expected supervised, weak[:kind] or vote[:kind])"))),
    }
}

fn cmd_train(cfg: &RunConfig, out: &mut Outputs) -> Result<()> {
    let inputs = load_inputs(cfg)?;
    let d = need_data(&inputs)?;
    let model = evaluation_model(cfg, &inputs, cfg.get("mode"))?;
    let fractions = cfg.split()?;
    if fractions.test <= 0.0 {
        return Err(Error::Evaluation("the test split is empty".into()));
    }
    let split = make_split(d, &fractions, cfg.seed()?, cfg.flag("group_by_respondent")?).map_err(|e| match e {
        Error::Data(m) if m.contains("`test`") => Error::Evaluation(m),
        e => e,
    })?;
    let l = match model {
        CurveModel::Supervised => None,
        _ => Some(label_matrix(cfg, &inputs)?),
    };
    let run = train_and_evaluate(d, l.as_ref(), &split.train, &split.test, &model, &cfg.forest()?, cfg.seed()?)?;
    let truth: Vec<Choice> = run.scored.iter().map(|&i| d.scenarios[i].truth.expect("scored rows are labeled")).collect();
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (k, &i) in run.scored.iter().enumerate() {
        groups.entry(d.scenarios[i].scenario_type.clone().unwrap_or_else(|| DEFAULT_TYPE.into())).or_default().push(k);
    }
    let mut csv = format!("group,accuracy,n\nall,{},{}\n", fixed(run.accuracy), run.scored.len());
    let mut by_type = serde_json::Map::new();
    for (ty, ks) in &groups {
        let p: Vec<CandidateLabel> = ks.iter().map(|&k| run.predictions[k]).collect();
        let t: Vec<Choice> = ks.iter().map(|&k| truth[k]).collect();
        let acc = model_accuracy(&p, &t)?;
        csv.push_str(&format!("{},{},{}\n", csv_field(ty), fixed(acc), ks.len()));
        by_type.insert(ty.clone(), json!({"accuracy": fixed_json(acc), "n": ks.len()}));
    }
    out.add("metrics.csv", csv);
    out.add(
        "metrics.json",
        json_bytes(&json!({
            "model": model.name(),
            "train_rows": split.train.len(),
            "test_rows": run.scored.len(),
            "accuracy": fixed_json(run.accuracy),
            "by_type": by_type,
        })),
    );
    if let Some(f) = run.forest {
        out.add("forest.json", f.with_fingerprint(schema_fingerprint(&d.schema)).to_json()?);
    }
    Ok(())
}

fn list<T: std::str::FromStr>(cfg: &RunConfig, key: &str) -> Result<Vec<T>> {
    cfg.get(key)
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| Error::Config(format!("bad entry `{s}` in `{key}`"))))
        .collect()
}

fn curve_seeds(cfg: &RunConfig) -> Result<Vec<u64>> {
    let seeds = list(cfg, "curve.seeds")?;
    Ok(if seeds.is_empty() { vec![cfg.seed()?] } else { seeds })
}

fn cmd_curve(cfg: &RunConfig, out: &mut Outputs) -> Result<()> {
    let inputs = load_inputs(cfg)?;
    let d = need_data(&inputs)?;
    let evaluation = match cfg.get("curve.evaluation") {
        "split" => Evaluation::Split(cfg.split()?),
        e => match e.split_once(':') {
            Some(("kfold", k)) => Evaluation::KFold(k.trim().parse().map_err(|_| Error::Config(format!("bad fold count in `{e}`")))?),
            Some(("within", n)) => Evaluation::WithinRespondent {
                train_rows: n.trim().parse().map_err(|_| Error::Config(format!("bad row count in `{e}`")))?,
            },
            _ => return Err(Error::Config(format!("unknown curve evaluation `{e}` (expected kfold:K, split or within:N)"))),
        },
    };
    let sizes: Vec<usize> = list(cfg, "curve.sizes")?;
    if sizes.is_empty() {
        return Err(Error::Config("`curve.sizes` is required".into()));
    }
    let curve = CurveConfig {
        axis: CurveAxis::parse(cfg.get("curve.axis"))?,
        sizes,
        evaluation,
        seeds: curve_seeds(cfg)?,
        forest: cfg.forest()?,
        group_by_respondent: cfg.flag("group_by_respondent")?,
    };
    let models = cfg
        .get("curve.models")
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|m| evaluation_model(cfg, &inputs, m))
        .collect::<Result<Vec<_>>>()?;
    let needs_suite = models.iter().any(|m| !matches!(m, CurveModel::Supervised));
    let suite = if needs_suite { load_heuristics(cfg, inputs.domain)? } else { Vec::new() };
    out.add("curve.csv", curve_csv(&learning_curve(d, &suite, &curve, &models)?));
    Ok(())
}

fn cmd_perturb(cfg: &RunConfig, out: &mut Outputs) -> Result<()> {
    let inputs = load_inputs(cfg)?;
    let d = need_data(&inputs)?;
    let l = label_matrix(cfg, &inputs)?;
    let labeled: Vec<usize> = (0..d.len()).filter(|&i| d.scenarios[i].truth.is_some()).collect();
    if labeled.is_empty() {
        return Err(Error::Evaluation("perturbation needs ground-truth labels".into()));
    }
    let truth: Vec<Choice> = labeled.iter().map(|&i| d.scenarios[i].truth.expect("labeled")).collect();
    let spec = aggregator(cfg, &inputs, None)?;
    let p = perturbation(&l.select_rows(&labeled), &truth, &spec, all_respondents(Some(d)).as_ref())?;
    for r in &p.rows {
        if let Err(e) = &r.gain {
            log::warn!("refit without `{}` failed: {e}", r.heuristic);
        }
    }
    out.add("perturb.csv", p.to_csv());
    Ok(())
}

fn cmd_report(cfg: &RunConfig, out: &mut Outputs) -> Result<()> {
    let inputs = load_inputs(cfg)?;
    let l = label_matrix(cfg, &inputs)?;
    let truth: Vec<Option<Choice>> = match &inputs.dataset {
        Some(d) => d.scenarios.iter().map(|s| s.truth).collect(),
        None => vec![None; l.n_scenarios()],
    };
    let model = if cfg.get("model") == "generative" { Some(crate::labelmodel::fit_generative(&l, &cfg.generative()?)?) } else { None };
    let report = heuristic_report(&l, &truth, model.as_ref())?;
    let dens = density(&l);
    let mut hist: BTreeMap<usize, usize> = BTreeMap::new();
    for &k in &dens.per_row {
        *hist.entry(k).or_default() += 1;
    }
    let names = l.heuristic_names();
    let pairs = conflict_overlap(&l);
    let mut pairs_csv = String::from("heuristic_a,heuristic_b,overlap,conflict\n");
    for p in &pairs {
        pairs_csv.push_str(&format!("{},{},{},{}\n", csv_field(&names[p.j]), csv_field(&names[p.k]), fixed(p.overlap), fixed(p.conflict)));
    }
    let mut density_csv = String::from("density,rows\n");
    for (k, n) in &hist {
        density_csv.push_str(&format!("{k},{n}\n"));
    }
    let mut doc = json!({
        "heuristics": report.to_json()["heuristics"],
        "density": {"mean": fixed_json(dens.mean), "histogram": hist.iter().map(|(k, n)| json!({"density": k, "rows": n})).collect::<Vec<_>>()},
        "pairs": pairs.iter().map(|p| json!({"a": names[p.j], "b": names[p.k], "overlap": fixed_json(p.overlap), "conflict": fixed_json(p.conflict)})).collect::<Vec<_>>(),
    });
    if let Some(r) = rankings(cfg, &inputs)? {
        let strategies = strategies();
        let counts = borda_counts(&r, &strategies)?;
        let weights = scale_weights(&counts, strategies.len(), Scaling::parse(cfg.get("scaling"))?)?;
        let mut text = String::from("strategy,mean_borda,weight\n");
        let mut rows = Vec::new();
        for (k, s) in strategies.iter().enumerate() {
            text.push_str(&format!("{s},{},{}\n", fixed(counts[k]), fixed(weights.as_slice()[k])));
            rows.push(json!({"strategy": s, "mean_borda": fixed_json(counts[k]), "weight": fixed_json(weights.as_slice()[k])}));
        }
        out.add("borda.csv", text);
        doc["borda"] = json!(rows);
    }
    out.add("report.csv", report.to_csv());
    out.add("pairs.csv", pairs_csv);
    out.add("density.csv", density_csv);
    out.add("report.json", json_bytes(&doc));
    Ok(())
}

/// Runs one command and writes its outputs plus `manifest.json`.
pub fn execute(command: &Command) -> Result<PathBuf> {
    let (name, args, run): (&str, &CommonArgs, fn(&RunConfig, &mut Outputs) -> Result<()>) = match command {
        Command::Label(a) => ("label", a, cmd_label),
        Command::Aggregate(a) => ("aggregate", a, cmd_aggregate),
        Command::Train(a) => ("train", a, cmd_train),
        Command::Curve(a) => ("curve", a, cmd_curve),
        Command::Perturb(a) => ("perturb", a, cmd_perturb),
        Command::Report(a) => ("report", a, cmd_report),
    };
    let cfg = args.resolve()?;
    let mut outputs = Outputs(Vec::new());
    run(&cfg, &mut outputs)?;
    let dir = PathBuf::from(cfg.get("out"));
    let manifest = manifest(name, &cfg, &outputs)?;
    for (file, bytes) in &outputs.0 {
        write_atomic(&dir.join(file), bytes)?;
    }
    write_atomic(&dir.join("manifest.json"), &manifest)?;
    Ok(dir)
}

/// `{"error": {...}}` as written to stderr.
pub fn error_json(e: &Error) -> String {
    json!({"error": {"kind": e.kind(), "exit_code": e.exit_code(), "message": e.to_string()}}).to_string()
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli.command) {
        Ok(_) => 0,
        Err(e) => {
            eprintln!("{}", error_json(&e));
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_library_defaults() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.generative().unwrap(), GenerativeConfig::default());
        assert_eq!(cfg.forest().unwrap(), ForestConfig::default());
    }

    #[test]
    fn config_text_rules() {
        let mut cfg = RunConfig::default();
        cfg.apply_text("# comment\nseed = 7\ndata = d.csv  # trailing\nsuite = builtin:ke\n", Some(Path::new("/base"))).unwrap();
        assert_eq!(cfg.get("seed"), "7");
        assert_eq!(cfg.get("data"), "/base/d.csv");
        assert_eq!(cfg.get("suite"), "builtin:ke");
        assert!(RunConfig::default().apply_text("colour = red\n", None).is_err());
        assert!(RunConfig::default().apply_text("seed = 1\nseed = 2\n", None).is_err());
        assert!(RunConfig::default().apply_text("seed\n", None).is_err());
    }

    #[test]
    fn flags_win_over_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        std::fs::write(&path, "seed = 1\nmodel = weighted\n").unwrap();
        let args = CommonArgs { config: Some(path), seed: Some(9), model: Some("majority".into()), ..Default::default() };
        let cfg = args.resolve().unwrap();
        assert_eq!(cfg.get("seed"), "9");
        assert_eq!(cfg.get("model"), "majority");
    }

    #[test]
    fn hash_tracks_content() {
        let mut a = RunConfig::default();
        let b = a.clone();
        assert_eq!(a.hash(), b.hash());
        a.set("seed", "3").unwrap();
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn error_json_shape() {
        let v: serde_json::Value = serde_json::from_str(&error_json(&Error::Config("x".into()))).unwrap();
        assert_eq!(v["error"]["exit_code"], 2);
        assert_eq!(v["error"]["kind"], "config");
    }
}
