use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use crate::domain::{Alternative, Choice, Context, CrossingSignal, Dataset, Scenario, Schema, MM_FEATURES};
use crate::error::{Error, Result};

use super::{check_columns, csv_reader, header_line, read_text, record_line, split_header};

/// Decisions per complete Moral Machine session.
pub const SESSION_LENGTH: usize = 13;

pub const MM_CHARACTERS: [&str; 20] = [
    "man",
    "woman",
    "pregnant",
    "stroller",
    "old_man",
    "old_woman",
    "boy",
    "girl",
    "homeless",
    "large_woman",
    "large_man",
    "criminal",
    "male_executive",
    "female_executive",
    "female_athlete",
    "male_athlete",
    "female_doctor",
    "male_doctor",
    "dog",
    "cat",
];

const DEFAULT_MAP: &str = include_str!("../../data/abstraction_map.csv");

fn feature_idx(name: &str) -> usize {
    MM_FEATURES.iter().position(|f| *f == name).expect("known feature")
}

/// Binary character-to-feature matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AbstractionMap {
    rows: BTreeMap<String, [u8; 17]>,
}

impl Default for AbstractionMap {
    fn default() -> Self {
        AbstractionMap::parse(DEFAULT_MAP).expect("shipped abstraction map is valid")
    }
}

impl AbstractionMap {
    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_text(path)?)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let (_, body) = split_header(text, &["abstraction-map"])?;
        let mut rdr = csv_reader(body);
        let mut expected = vec!["character".to_string()];
        expected.extend(MM_FEATURES.iter().map(|f| f.to_string()));
        check_columns(rdr.headers()?, &expected)?;
        let mut rows = BTreeMap::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let line = record_line(&rec, i);
            let name = rec[0].to_string();
            let mut row = [0u8; 17];
            for (f, cell) in row.iter_mut().enumerate() {
                *cell = match &rec[f + 1] {
                    "0" => 0,
                    "1" => 1,
                    other => return Err(Error::Data(format!("line {line}: abstraction cell `{other}` is not 0 or 1"))),
                };
            }
            if rows.insert(name.clone(), row).is_some() {
                return Err(Error::Data(format!("line {line}: duplicate character `{name}`")));
            }
        }
        let map = AbstractionMap { rows };
        map.validate()?;
        Ok(map)
    }

    fn validate(&self) -> Result<()> {
        let (human, non_human) = (feature_idx("human"), feature_idx("non_human"));
        for (name, row) in &self.rows {
            if row[human] + row[non_human] != 1 {
                return Err(Error::Data(format!("character `{name}` must be exactly one of human and non_human")));
            }
        }
        Ok(())
    }

    pub fn characters(&self) -> impl Iterator<Item = &str> {
        self.rows.keys().map(String::as_str)
    }

    pub fn row(&self, character: &str) -> Option<&[u8; 17]> {
        self.rows.get(character)
    }

    /// `Bᵀ · counts` over the 17 abstract features.
    pub fn abstract_characters(&self, char_counts: &BTreeMap<String, i64>) -> Result<Vec<i64>> {
        let mut out = vec![0i64; 17];
        for (name, &n) in char_counts {
            let row = self.rows.get(name).ok_or_else(|| Error::Data(format!("unknown character `{name}`")))?;
            for (o, &b) in out.iter_mut().zip(row) {
                *o += i64::from(b) * n;
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub struct MmLoadOptions {
    /// Keep only respondents with exactly [`SESSION_LENGTH`] rows.
    pub session_filter: bool,
    pub abstraction: AbstractionMap,
}

impl Default for MmLoadOptions {
    fn default() -> Self {
        MmLoadOptions { session_filter: true, abstraction: AbstractionMap::default() }
    }
}

fn context_columns(side: &str) -> [String; 3] {
    [format!("{side}_intervention"), format!("{side}_signal"), format!("{side}_passengers")]
}

fn columns(value_names: &[&str]) -> Vec<String> {
    let mut cols: Vec<String> = ["scenario_id", "respondent_id", "scenario_type", "choice"].iter().map(|s| s.to_string()).collect();
    for side in ["a", "b"] {
        cols.extend(value_names.iter().map(|c| format!("{side}_{c}")));
        cols.extend(context_columns(side));
    }
    cols
}

fn parse_count(cell: &str, line: u64, col: &str) -> Result<Option<i64>> {
    if cell.is_empty() {
        return Ok(None);
    }
    match cell.parse::<i64>() {
        Ok(v) if v >= 0 => Ok(Some(v)),
        _ => Err(Error::Data(format!("line {line}: `{col}` = `{cell}` is not a non-negative integer"))),
    }
}

fn parse_flag(cell: &str, line: u64, col: &str) -> Result<Option<bool>> {
    match cell {
        "" => Ok(None),
        "0" | "false" => Ok(Some(false)),
        "1" | "true" => Ok(Some(true)),
        other => Err(Error::Data(format!("line {line}: `{col}` = `{other}` is not a 0/1 flag"))),
    }
}

fn parse_signal(cell: &str, line: u64, col: &str) -> Result<Option<CrossingSignal>> {
    if cell.is_empty() {
        return Ok(None);
    }
    CrossingSignal::parse(cell)
        .map(Some)
        .ok_or_else(|| Error::Data(format!("line {line}: `{col}` = `{cell}` is not green, red or none")))
}

fn parse_choice(cell: &str, line: u64) -> Result<Option<Choice>> {
    match cell {
        "" => Ok(None),
        "0" => Ok(Some(Choice::First)),
        "1" => Ok(Some(Choice::Second)),
        other => Err(Error::Data(format!("line {line}: choice `{other}` is not 0 or 1"))),
    }
}

fn opt_str(cell: &str) -> Option<String> {
    (!cell.is_empty()).then(|| cell.to_string())
}

/// Abstract counts from character counts; a feature is missing when any
/// character that maps onto it is missing. Role features come from context.
fn abstract_side(map: &AbstractionMap, chars: &[Option<i64>], ctx: &Context) -> Vec<Option<i64>> {
    let mut out: Vec<Option<i64>> = vec![Some(0); 17];
    for (name, n) in MM_CHARACTERS.iter().zip(chars) {
        let row = map.row(name).expect("default characters are in the map");
        for (o, &b) in out.iter_mut().zip(row) {
            if b == 1 {
                *o = match (*o, n) {
                    (Some(acc), Some(n)) => Some(acc + n),
                    _ => None,
                };
            }
        }
    }
    let total: Option<i64> = chars.iter().try_fold(0i64, |acc, n| n.map(|n| acc + n));
    let role = |flag: Option<bool>| match (flag, total) {
        (Some(true), Some(t)) => Some(t),
        (Some(false), _) => Some(0),
        _ => None,
    };
    out[feature_idx("passenger")] = role(ctx.is_passengers);
    let pedestrians_with = |s: CrossingSignal| match (ctx.is_passengers, ctx.signal) {
        (Some(true), _) => Some(false),
        (_, None) | (None, _) => None,
        (Some(false), Some(sig)) => Some(sig == s),
    };
    out[feature_idx("law_abiding")] = role(pedestrians_with(CrossingSignal::Green));
    out[feature_idx("law_violating")] = role(pedestrians_with(CrossingSignal::Red));
    out
}

/// Parses a Moral Machine scenario file (`mm-characters` or `mm-abstract`).
///
/// The `a` side must be the stay-on-course alternative; rows that list the
/// swerving alternative first are swapped (and their choice flipped).
pub fn parse_mm_csv(text: &str, opts: &MmLoadOptions) -> Result<Dataset> {
    let (schema_tag, body) = split_header(text, &["mm-characters", "mm-abstract"])?;
    let characters = schema_tag == "mm-characters";
    let value_names: Vec<&str> = if characters { MM_CHARACTERS.to_vec() } else { MM_FEATURES.to_vec() };
    let cols = columns(&value_names);
    let mut rdr = csv_reader(body);
    check_columns(rdr.headers()?, &cols)?;
    let width = value_names.len();
    let mut scenarios = Vec::new();
    let mut seen = HashMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = record_line(&rec, i);
        let side = |offset: usize| -> Result<Alternative> {
            let values = (0..width)
                .map(|k| parse_count(&rec[offset + k], line, &cols[offset + k]))
                .collect::<Result<Vec<_>>>()?;
            let ctx = Context {
                intervention: parse_flag(&rec[offset + width], line, &cols[offset + width])?,
                signal: parse_signal(&rec[offset + width + 1], line, &cols[offset + width + 1])?,
                is_passengers: parse_flag(&rec[offset + width + 2], line, &cols[offset + width + 2])?,
            };
            let counts = if characters { abstract_side(&opts.abstraction, &values, &ctx) } else { values };
            Ok(Alternative { counts, context: Some(ctx) })
        };
        let id = rec[0].to_string();
        if id.is_empty() {
            return Err(Error::Data(format!("line {line}: empty scenario_id")));
        }
        if let Some(prev) = seen.insert(id.clone(), line) {
            return Err(Error::Data(format!("line {line}: duplicate scenario_id `{id}` (first on line {prev})")));
        }
        let mut s = Scenario::new(id, side(4)?, side(4 + width + 3)?);
        s.respondent_id = opt_str(&rec[1]);
        s.scenario_type = opt_str(&rec[2]);
        s.truth = parse_choice(&rec[3], line)?;
        let swerves = |a: &Alternative| a.context.and_then(|c| c.intervention);
        if swerves(&s.first) == Some(true) && swerves(&s.second) == Some(false) {
            s = s.swapped();
        }
        scenarios.push(s);
    }
    if opts.session_filter {
        let mut per: HashMap<Option<String>, usize> = HashMap::new();
        for s in &scenarios {
            *per.entry(s.respondent_id.clone()).or_default() += 1;
        }
        let before = scenarios.len();
        scenarios.retain(|s| s.respondent_id.is_some() && per[&s.respondent_id] == SESSION_LENGTH);
        let dropped = before - scenarios.len();
        if dropped > 0 {
            log::warn!("dropped {dropped} scenarios from incomplete {SESSION_LENGTH}-decision sessions");
        }
    }
    Ok(Dataset::new(Schema::moral_machine(), scenarios))
}

pub fn load_mm_csv(path: &Path, opts: &MmLoadOptions) -> Result<Dataset> {
    parse_mm_csv(&read_text(path)?, opts)
}

fn cell<T: ToString>(v: Option<T>) -> String {
    v.map_or(String::new(), |v| v.to_string())
}

fn flag(v: Option<bool>) -> String {
    cell(v.map(u8::from))
}

/// Serializes a Moral Machine dataset in the `mm-abstract` schema.
pub fn write_mm_csv(d: &Dataset) -> Result<String> {
    if d.schema != Schema::moral_machine() {
        return Err(Error::Schema("write_mm_csv needs a Moral Machine dataset".into()));
    }
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(columns(&MM_FEATURES))?;
    for s in &d.scenarios {
        let mut row = vec![
            s.id.clone(),
            s.respondent_id.clone().unwrap_or_default(),
            s.scenario_type.clone().unwrap_or_default(),
            cell(s.truth.map(Choice::as_index)),
        ];
        for alt in [&s.first, &s.second] {
            row.extend(alt.counts.iter().map(|c| cell(*c)));
            let ctx = alt.context.unwrap_or_default();
            row.push(flag(ctx.intervention));
            row.push(cell(ctx.signal.map(CrossingSignal::as_str)));
            row.push(flag(ctx.is_passengers));
        }
        w.write_record(&row)?;
    }
    let body = String::from_utf8(w.into_inner().map_err(|e| Error::Data(e.to_string()))?).expect("csv output is UTF-8");
    Ok(header_line("mm-abstract") + &body)
}
