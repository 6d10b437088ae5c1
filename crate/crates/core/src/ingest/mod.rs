//! Case-study data: versioned CSV loaders and writers, median imputation,
//! and train/dev/valid/test splits.
//!
//! Every file starts with a comment line `# dilemma-forge v1 <schema>`,
//! followed by a header row. Empty cells are missing values.

mod ke;
mod mm;

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::domain::{Alternative, CrossingSignal, Dataset, DatasetSplit};
use crate::error::{Error, Result};

pub use ke::{
    ke_factorial_design, ke_profiles, ke_scenario_type, load_ke_csv, load_rankings_csv, parse_ke_csv, parse_rankings_csv,
    write_ke_csv, write_rankings_csv,
};
pub use mm::{load_mm_csv, parse_mm_csv, write_mm_csv, AbstractionMap, MmLoadOptions, MM_CHARACTERS, SESSION_LENGTH};

pub const FORMAT_VERSION: &str = "v1";

/// Splits `text` into its schema tag and the CSV body, checking the version line.
pub(crate) fn split_header<'a>(text: &'a str, expected: &[&str]) -> Result<(&'a str, &'a str)> {
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    let (first, body) = match text.find('\n') {
        Some(i) => (&text[..i], &text[i + 1..]),
        None => (text, ""),
    };
    let first = first.trim_end_matches('\r');
    let tag = first
        .strip_prefix("# dilemma-forge ")
        .ok_or_else(|| Error::Data("missing `# dilemma-forge v1 <schema>` header line".into()))?;
    let (version, schema) = tag
        .split_once(' ')
        .ok_or_else(|| Error::Data(format!("malformed header line `{first}`")))?;
    if version != FORMAT_VERSION {
        return Err(Error::Data(format!("unsupported format version `{version}`")));
    }
    let schema = schema.trim();
    if !expected.contains(&schema) {
        return Err(Error::Data(format!("file schema `{schema}` is not one of {expected:?}")));
    }
    Ok((schema, body))
}

pub(crate) fn header_line(schema: &str) -> String {
    format!("# dilemma-forge {FORMAT_VERSION} {schema}\n")
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn csv_reader(body: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(body.as_bytes())
}

pub(crate) fn check_columns(found: &csv::StringRecord, expected: &[String]) -> Result<()> {
    let found: Vec<&str> = found.iter().collect();
    if found != expected.iter().map(String::as_str).collect::<Vec<_>>() {
        return Err(Error::Data(format!("malformed header: expected {expected:?}, found {found:?}")));
    }
    Ok(())
}

/// 1-based file line of a data record (after the version and header lines).
pub(crate) fn record_line(record: &csv::StringRecord, fallback_index: usize) -> u64 {
    record.position().map_or(fallback_index as u64 + 3, |p| p.line() + 1)
}

/// Lower-middle element of the sorted values (keeps integer data integral).
fn lower_median<T: Ord + Copy>(values: &mut [T]) -> Option<T> {
    if values.is_empty() {
        return None;
    }
    values.sort();
    Some(values[(values.len() - 1) / 2])
}

fn signal_rank(s: CrossingSignal) -> u8 {
    match s {
        CrossingSignal::Green => 0,
        CrossingSignal::Red => 1,
        CrossingSignal::None => 2,
    }
}

/// Most frequent signal; ties go to green, then red, then none.
fn signal_mode(values: &[CrossingSignal]) -> Option<CrossingSignal> {
    let mut counts: BTreeMap<u8, (usize, CrossingSignal)> = BTreeMap::new();
    for &v in values {
        counts.entry(signal_rank(v)).or_insert((0, v)).0 += 1;
    }
    let best = counts.values().map(|(c, _)| *c).max()?;
    counts.values().find(|(c, _)| *c == best).map(|(_, s)| *s)
}

/// Fill values computed from one side of the training rows.
struct SideFill {
    counts: Vec<Option<i64>>,
    intervention: Option<bool>,
    signal: Option<CrossingSignal>,
    is_passengers: Option<bool>,
}

fn side_fill(d: &Dataset, fit_on: &[usize], pick: fn(&crate::domain::Scenario) -> &Alternative) -> SideFill {
    let alts: Vec<&Alternative> = fit_on.iter().map(|&i| pick(&d.scenarios[i])).collect();
    let counts = (0..d.schema.features.len())
        .map(|f| lower_median(&mut alts.iter().filter_map(|a| a.counts[f]).collect::<Vec<_>>()))
        .collect();
    let ctxs: Vec<_> = alts.iter().filter_map(|a| a.context).collect();
    SideFill {
        counts,
        intervention: lower_median(&mut ctxs.iter().filter_map(|c| c.intervention).collect::<Vec<_>>()),
        signal: signal_mode(&ctxs.iter().filter_map(|c| c.signal).collect::<Vec<_>>()),
        is_passengers: lower_median(&mut ctxs.iter().filter_map(|c| c.is_passengers).collect::<Vec<_>>()),
    }
}

fn fill_side(alt: &mut Alternative, fill: &SideFill, schema: &crate::domain::Schema, side: &str) -> Result<()> {
    let missing = |what: &str| Error::Data(format!("{side}.{what} is missing in every imputation row"));
    for (f, c) in alt.counts.iter_mut().enumerate() {
        if c.is_none() {
            *c = Some(fill.counts[f].ok_or_else(|| missing(&schema.features[f]))?);
        }
    }
    if let Some(ctx) = alt.context.as_mut() {
        if ctx.intervention.is_none() {
            ctx.intervention = Some(fill.intervention.ok_or_else(|| missing("intervention"))?);
        }
        if ctx.signal.is_none() {
            ctx.signal = Some(fill.signal.ok_or_else(|| missing("signal"))?);
        }
        if ctx.is_passengers.is_none() {
            ctx.is_passengers = Some(fill.is_passengers.ok_or_else(|| missing("is_passengers"))?);
        }
    }
    Ok(())
}

/// Replaces every missing value with the per-column median of the `fit_on`
/// rows (lower-middle element for even counts; the crossing signal uses the
/// mode). Non-missing cells are untouched, so the operation is idempotent.
pub fn impute_median(d: &Dataset, fit_on: &[usize]) -> Result<Dataset> {
    if fit_on.is_empty() {
        return Err(Error::Data("imputation needs at least one fitting row".into()));
    }
    if let Some(&bad) = fit_on.iter().find(|&&i| i >= d.len()) {
        return Err(Error::Data(format!("imputation row {bad} out of range for {} scenarios", d.len())));
    }
    if !d.scenarios.iter().any(|s| s.has_missing()) {
        return Ok(d.clone());
    }
    let first = side_fill(d, fit_on, |s| &s.first);
    let second = side_fill(d, fit_on, |s| &s.second);
    let mut out = d.clone();
    for s in out.scenarios.iter_mut().filter(|s| s.has_missing()) {
        fill_side(&mut s.first, &first, &d.schema, "first")?;
        fill_side(&mut s.second, &second, &d.schema, "second")?;
    }
    Ok(out)
}

/// Fractions of the shuffled units assigned to each part; the remainder is unused.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SplitFractions {
    pub train: f64,
    pub dev: f64,
    pub valid: f64,
    pub test: f64,
}

impl SplitFractions {
    pub fn train_test(train: f64, test: f64) -> Self {
        SplitFractions { train, test, ..Default::default() }
    }

    /// `train=0.8,test=0.2` (any subset of train, dev, valid, test).
    pub fn parse(s: &str) -> Result<Self> {
        let mut f = SplitFractions::default();
        for part in s.split(',').filter(|p| !p.trim().is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("bad split part `{part}` (expected name=fraction)")))?;
            let v: f64 = v.trim().parse().map_err(|_| Error::Config(format!("bad split fraction `{part}`")))?;
            let slot = match k.trim() {
                "train" => &mut f.train,
                "dev" => &mut f.dev,
                "valid" => &mut f.valid,
                "test" => &mut f.test,
                other => return Err(Error::Config(format!("unknown split part `{other}`"))),
            };
            *slot = v;
        }
        Ok(f)
    }

    fn as_array(&self) -> [f64; 4] {
        [self.train, self.dev, self.valid, self.test]
    }
}

/// Row indices grouped into atomic units: one per row, or one per respondent
/// (in first-appearance order; rows without a respondent stand alone).
fn units(d: &Dataset, group_by_respondent: bool) -> Vec<Vec<usize>> {
    if !group_by_respondent {
        return (0..d.len()).map(|i| vec![i]).collect();
    }
    let mut order: Vec<Vec<usize>> = Vec::new();
    let mut index: BTreeMap<&str, usize> = BTreeMap::new();
    for (i, s) in d.scenarios.iter().enumerate() {
        match s.respondent_id.as_deref() {
            Some(r) => {
                let slot = *index.entry(r).or_insert_with(|| {
                    order.push(Vec::new());
                    order.len() - 1
                });
                order[slot].push(i);
            }
            None => order.push(vec![i]),
        }
    }
    order
}

/// Seeded shuffle of rows (or respondent groups), then contiguous assignment
/// by cumulative fraction, with boundaries at `round(cumulative · units)`.
pub fn make_split(d: &Dataset, fractions: &SplitFractions, seed: u64, group_by_respondent: bool) -> Result<DatasetSplit> {
    let fr = fractions.as_array();
    if fr.iter().any(|f| !(0.0..=1.0).contains(f)) {
        return Err(Error::Config("split fractions must lie in [0, 1]".into()));
    }
    if fr.iter().sum::<f64>() > 1.0 + 1e-9 {
        return Err(Error::Config("split fractions sum to more than 1".into()));
    }
    let mut units = units(d, group_by_respondent);
    units.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = units.len();
    let mut parts: [Vec<usize>; 4] = Default::default();
    let names = ["train", "dev", "valid", "test"];
    let mut cum = 0.0;
    let mut start = 0;
    for (k, f) in fr.iter().enumerate() {
        cum += f;
        let end = ((cum * n as f64).round() as usize).clamp(start, n);
        if *f > 0.0 && end == start {
            return Err(Error::Data(format!("split part `{}` would be empty ({n} units)", names[k])));
        }
        let mut idx: Vec<usize> = units[start..end].iter().flatten().copied().collect();
        idx.sort_unstable();
        parts[k] = idx;
        start = end;
    }
    let [train, dev, valid, test] = parts;
    Ok(DatasetSplit { train, dev, valid, test })
}

/// `k` (train, test) index pairs over a seeded shuffle; every unit is tested exactly once.
pub fn k_fold(d: &Dataset, k: usize, seed: u64, group_by_respondent: bool) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    let mut units = units(d, group_by_respondent);
    if k < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {k}")));
    }
    if units.len() < k {
        return Err(Error::Data(format!("{} units cannot fill {k} folds", units.len())));
    }
    units.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = units.len();
    Ok((0..k)
        .map(|f| {
            let (lo, hi) = (f * n / k, (f + 1) * n / k);
            let mut test: Vec<usize> = units[lo..hi].iter().flatten().copied().collect();
            let mut train: Vec<usize> = units[..lo].iter().chain(&units[hi..]).flatten().copied().collect();
            test.sort_unstable();
            train.sort_unstable();
            (train, test)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Context, Scenario, Schema};

    fn ke_dataset(n: usize, per_respondent: usize) -> Dataset {
        let scenarios = (0..n)
            .map(|i| {
                let mut s = Scenario::new(format!("s{i}"), Alternative::from_counts([0, 0, 0]), Alternative::from_counts([1, 0, 0]));
                s.respondent_id = Some(format!("r{}", i / per_respondent));
                s
            })
            .collect();
        Dataset::new(Schema::kidney_exchange(), scenarios)
    }

    #[test]
    fn header_checks() {
        assert!(split_header("# dilemma-forge v1 ke-contests\na,b\n", &["ke-contests"]).is_ok());
        assert!(split_header("a,b\n", &["ke-contests"]).is_err());
        assert!(split_header("# dilemma-forge v2 ke-contests\n", &["ke-contests"]).is_err());
        assert!(split_header("# dilemma-forge v1 mm-abstract\n", &["ke-contests"]).is_err());
        assert!(split_header("# dilemma-forge v1 ke-contests\r\na\r\n", &["ke-contests"]).is_ok());
    }

    #[test]
    fn median_even_count_takes_lower_middle() {
        let mut d = ke_dataset(3, 3);
        d.scenarios[0].first.counts[0] = Some(1);
        d.scenarios[1].first.counts[0] = None;
        d.scenarios[2].first.counts[0] = Some(3);
        let out = impute_median(&d, &[0, 1, 2]).unwrap();
        assert_eq!(out.scenarios[1].first.counts[0], Some(1));
        assert_eq!(impute_median(&out, &[0, 1, 2]).unwrap(), out);
    }

    #[test]
    fn median_uses_only_fit_rows() {
        let mut d = ke_dataset(4, 4);
        for (i, v) in [Some(0), Some(1), Some(1), None].into_iter().enumerate() {
            d.scenarios[i].second.counts[2] = v;
        }
        let out = impute_median(&d, &[0]).unwrap();
        assert_eq!(out.scenarios[3].second.counts[2], Some(0));
        let out = impute_median(&d, &[0, 1, 2]).unwrap();
        assert_eq!(out.scenarios[3].second.counts[2], Some(1));
    }

    #[test]
    fn imputation_errors() {
        let mut d = ke_dataset(2, 2);
        d.scenarios[0].first.counts[1] = None;
        assert!(impute_median(&d, &[]).is_err());
        assert!(impute_median(&d, &[0]).is_err());
        assert!(impute_median(&d, &[1]).is_ok());
    }

    #[test]
    fn signal_imputed_by_mode() {
        let alt = |sig| {
            Alternative::from_counts([0; 17]).with_context(Context { intervention: Some(false), signal: sig, is_passengers: Some(false) })
        };
        let scenarios = [Some(CrossingSignal::Red), Some(CrossingSignal::Red), Some(CrossingSignal::Green), None]
            .into_iter()
            .enumerate()
            .map(|(i, s)| Scenario::new(format!("m{i}"), alt(s), alt(Some(CrossingSignal::None))))
            .collect();
        let d = Dataset::new(Schema::moral_machine(), scenarios);
        let out = impute_median(&d, &[0, 1, 2, 3]).unwrap();
        assert_eq!(out.scenarios[3].first.context.unwrap().signal, Some(CrossingSignal::Red));
    }

    #[test]
    fn split_sizes() {
        let d = ke_dataset(10, 1);
        let s = make_split(&d, &SplitFractions::train_test(0.8, 0.2), 1, false).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (8, 2));
        assert!(s.is_disjoint());
        assert_eq!(make_split(&d, &SplitFractions::train_test(0.8, 0.2), 1, false).unwrap(), s);
    }

    #[test]
    fn grouped_split_keeps_sessions_whole() {
        let d = ke_dataset(13 * 10, 13);
        let s = make_split(&d, &SplitFractions::train_test(0.7, 0.3), 9, true).unwrap();
        assert_eq!(s.train.len(), 13 * 7);
        for part in s.parts() {
            for &i in part {
                let r = &d.scenarios[i].respondent_id;
                let all: Vec<_> = (0..d.len()).filter(|&j| &d.scenarios[j].respondent_id == r).collect();
                assert!(all.iter().all(|j| part.contains(j)));
            }
        }
    }

    #[test]
    fn split_errors() {
        let d = ke_dataset(3, 1);
        assert!(make_split(&d, &SplitFractions::train_test(0.9, 0.2), 0, false).is_err());
        assert!(make_split(&d, &SplitFractions::train_test(0.99, 0.01), 0, false).is_err());
        assert_eq!(
            SplitFractions::parse("train=0.6, valid=0.2,test=0.2").unwrap(),
            SplitFractions { train: 0.6, dev: 0.0, valid: 0.2, test: 0.2 }
        );
        assert!(SplitFractions::parse("holdout=0.2").is_err());
    }

    #[test]
    fn folds_cover_each_unit_once() {
        let d = ke_dataset(23, 1);
        let folds = k_fold(&d, 5, 3, false).unwrap();
        let mut tested: Vec<usize> = folds.iter().flat_map(|(_, t)| t.clone()).collect();
        tested.sort_unstable();
        assert_eq!(tested, (0..23).collect::<Vec<_>>());
        for (train, test) in &folds {
            assert_eq!(train.len() + test.len(), 23);
        }
        assert!(k_fold(&d, 1, 0, false).is_err());
        assert!(k_fold(&d, 24, 0, false).is_err());
    }
}
