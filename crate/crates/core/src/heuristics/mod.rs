//! Heuristic labeling functions: parsing, evaluation, built-in suites and the label matrix.

mod builtin;
pub mod dsl;

use std::collections::HashSet;
use std::path::Path;

use rayon::prelude::*;

use crate::domain::{CandidateLabel, Dataset, Schema, Scenario};
use crate::error::{Error, Result};

pub use builtin::{builtin_suite, BuiltinSuite, KE_OPPOSITES, KE_STRATEGIES};
pub use dsl::{Action, Rule};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HeuristicSource {
    Dsl(String),
    Builtin(String),
}

/// A named, schema-bound decision rule.
#[derive(Debug, Clone, PartialEq)]
pub struct HeuristicSpec {
    pub name: String,
    pub source: HeuristicSource,
    pub rules: Vec<Rule>,
    pub schema: Schema,
}

impl HeuristicSpec {
    /// First rule that fires decides; otherwise the heuristic abstains.
    pub fn evaluate(&self, s: &Scenario) -> Result<CandidateLabel> {
        self.check_scenario(s)?;
        Ok(self.evaluate_unchecked(s))
    }

    fn evaluate_unchecked(&self, s: &Scenario) -> CandidateLabel {
        self.rules
            .iter()
            .find_map(|r| r.fire(s))
            .unwrap_or(CandidateLabel::Abstain)
    }

    fn check_scenario(&self, s: &Scenario) -> Result<()> {
        let n = self.schema.features.len();
        let ctx = self.schema.has_context();
        for alt in [&s.first, &s.second] {
            if alt.counts.len() != n || alt.context.is_some() != ctx {
                return Err(Error::Schema(format!(
                    "scenario `{}` does not match the `{}` schema of heuristic `{}`",
                    s.id, self.schema.domain, self.name
                )));
            }
        }
        Ok(())
    }
}

/// Parses exactly one heuristic block.
pub fn parse_heuristic(text: &str, schema: &Schema) -> Result<HeuristicSpec> {
    let mut suite = parse_suite(text, schema)?;
    match suite.len() {
        1 => Ok(suite.remove(0)),
        0 => Err(Error::Syntax { line: 1, column: 1, message: "no heuristic block found".into() }),
        n => Err(Error::Syntax {
            line: 1,
            column: 1,
            message: format!("expected one heuristic block, found {n}"),
        }),
    }
}

/// Parses every heuristic block in `text`, in order.
pub fn parse_suite(text: &str, schema: &Schema) -> Result<Vec<HeuristicSpec>> {
    let suite: Vec<HeuristicSpec> = dsl::parse_file(text, schema)?
        .into_iter()
        .map(|p| HeuristicSpec {
            name: p.name,
            source: HeuristicSource::Dsl(p.source),
            rules: p.rules,
            schema: schema.clone(),
        })
        .collect();
    check_unique_names(&suite)?;
    Ok(suite)
}

pub(crate) fn check_unique_names(suite: &[HeuristicSpec]) -> Result<()> {
    let mut seen = HashSet::new();
    for h in suite {
        if !seen.insert(h.name.as_str()) {
            return Err(Error::Config(format!("duplicate heuristic name `{}` in suite", h.name)));
        }
    }
    Ok(())
}

/// Loads a suite from a DSL file, or from every regular file in a directory
/// taken in lexicographic filename order.
pub fn load_suite(path: &Path, schema: &Schema) -> Result<Vec<HeuristicSpec>> {
    let mut files = Vec::new();
    if path.is_dir() {
        let entries = std::fs::read_dir(path).map_err(|e| Error::io(path, e))?;
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(path, e))?;
            if entry.path().is_file() {
                files.push(entry.path());
            }
        }
        files.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    } else {
        files.push(path.to_path_buf());
    }
    let mut suite = Vec::new();
    for f in files {
        let text = std::fs::read_to_string(&f).map_err(|e| Error::io(&f, e))?;
        let parsed = parse_suite(&text, schema).map_err(|e| match e {
            Error::Syntax { line, column, message } => Error::Syntax {
                line,
                column,
                message: format!("{}: {message}", f.display()),
            },
            other => other,
        })?;
        suite.extend(parsed);
    }
    check_unique_names(&suite)?;
    Ok(suite)
}

/// N scenarios by M heuristics grid of candidate labels, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMatrix {
    cells: Vec<CandidateLabel>,
    heuristic_names: Vec<String>,
    scenario_ids: Vec<String>,
}

impl LabelMatrix {
    pub fn new(
        scenario_ids: Vec<String>,
        heuristic_names: Vec<String>,
        cells: Vec<CandidateLabel>,
    ) -> Result<Self> {
        if heuristic_names.is_empty() {
            return Err(Error::Data("label matrix needs at least one heuristic".into()));
        }
        let expected = scenario_ids.len() * heuristic_names.len();
        if cells.len() != expected {
            return Err(Error::Dimension { expected, actual: cells.len() });
        }
        Ok(LabelMatrix { cells, heuristic_names, scenario_ids })
    }

    /// Builds a matrix from rows with synthetic ids `r0..` and names `h0..`.
    pub fn from_rows(rows: &[Vec<CandidateLabel>]) -> Result<Self> {
        let m = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != m) {
            return Err(Error::Dimension { expected: m, actual: bad.len() });
        }
        LabelMatrix::new(
            (0..rows.len()).map(|i| format!("r{i}")).collect(),
            (0..m).map(|j| format!("h{j}")).collect(),
            rows.iter().flatten().copied().collect(),
        )
    }

    pub fn n_scenarios(&self) -> usize {
        self.scenario_ids.len()
    }

    pub fn n_heuristics(&self) -> usize {
        self.heuristic_names.len()
    }

    pub fn heuristic_names(&self) -> &[String] {
        &self.heuristic_names
    }

    pub fn scenario_ids(&self) -> &[String] {
        &self.scenario_ids
    }

    pub fn get(&self, i: usize, m: usize) -> CandidateLabel {
        self.cells[i * self.n_heuristics() + m]
    }

    pub fn row(&self, i: usize) -> &[CandidateLabel] {
        let m = self.n_heuristics();
        &self.cells[i * m..(i + 1) * m]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[CandidateLabel]> {
        self.cells.chunks(self.n_heuristics())
    }

    pub fn column(&self, m: usize) -> impl Iterator<Item = CandidateLabel> + '_ {
        self.rows().map(move |r| r[m])
    }

    /// The matrix restricted to the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> LabelMatrix {
        LabelMatrix {
            cells: rows.iter().flat_map(|&i| self.row(i).iter().copied()).collect(),
            heuristic_names: self.heuristic_names.clone(),
            scenario_ids: rows.iter().map(|&i| self.scenario_ids[i].clone()).collect(),
        }
    }

    /// The matrix with column `m` removed.
    pub fn without_column(&self, m: usize) -> Result<LabelMatrix> {
        if m >= self.n_heuristics() {
            return Err(Error::Dimension { expected: self.n_heuristics(), actual: m });
        }
        let cells = self
            .rows()
            .flat_map(|r| r.iter().enumerate().filter(|(j, _)| *j != m).map(|(_, c)| *c))
            .collect();
        let mut names = self.heuristic_names.clone();
        names.remove(m);
        LabelMatrix::new(self.scenario_ids.clone(), names, cells)
    }

    /// Every non-abstain cell swapped First <-> Second.
    pub fn flipped(&self) -> LabelMatrix {
        LabelMatrix {
            cells: self.cells.iter().map(|c| c.flip()).collect(),
            ..self.clone()
        }
    }

    /// `scenario_id,<heuristic names>` then one row of `F`/`S`/`-` cells per scenario.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        w.write_record(std::iter::once("scenario_id").chain(self.heuristic_names.iter().map(String::as_str)))?;
        for (id, row) in self.scenario_ids.iter().zip(self.rows()) {
            let codes: Vec<String> = row.iter().map(|c| c.code().to_string()).collect();
            w.write_record(std::iter::once(id.as_str()).chain(codes.iter().map(String::as_str)))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }

    pub fn parse_csv(text: &str) -> Result<LabelMatrix> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let head = rdr.headers()?.clone();
        if head.get(0) != Some("scenario_id") {
            return Err(Error::Data("label matrix must start with a `scenario_id` column".into()));
        }
        let names: Vec<String> = head.iter().skip(1).map(str::to_string).collect();
        let mut ids = Vec::new();
        let mut cells = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            ids.push(rec[0].to_string());
            for (j, cell) in rec.iter().skip(1).enumerate() {
                cells.push(CandidateLabel::from_code(cell).ok_or_else(|| {
                    Error::Data(format!("label matrix row {}: bad cell `{cell}` for `{}`", i + 1, names[j]))
                })?);
            }
        }
        LabelMatrix::new(ids, names, cells)
    }
}

/// Evaluates every heuristic on every scenario; row and column order follow the inputs.
pub fn apply_all(suite: &[HeuristicSpec], d: &Dataset) -> Result<LabelMatrix> {
    if suite.is_empty() {
        return Err(Error::Config("heuristic suite is empty".into()));
    }
    for h in suite {
        if h.schema != d.schema {
            return Err(Error::Schema(format!(
                "heuristic `{}` targets `{}`, dataset is `{}`",
                h.name, h.schema.domain, d.schema.domain
            )));
        }
    }
    let rows: Vec<Vec<CandidateLabel>> = d
        .scenarios
        .par_iter()
        .map(|s| {
            suite[0].check_scenario(s)?;
            Ok(suite.iter().map(|h| h.evaluate_unchecked(s)).collect())
        })
        .collect::<Result<_>>()?;
    LabelMatrix::new(
        d.scenarios.iter().map(|s| s.id.clone()).collect(),
        suite.iter().map(|h| h.name.clone()).collect(),
        rows.into_iter().flatten().collect(),
    )
}
