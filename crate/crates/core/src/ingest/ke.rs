use std::collections::HashMap;
use std::path::Path;

use crate::domain::{Alternative, Choice, Dataset, Scenario, Schema};
use crate::error::{Error, Result};
use crate::heuristics::KE_STRATEGIES;
use crate::labelmodel::StrategyRanking;

use super::{check_columns, csv_reader, header_line, read_text, record_line, split_header};

const KE_COLUMNS: [&str; 9] = ["respondent_id", "contest_id", "a_age", "a_drink", "a_health", "b_age", "b_drink", "b_health", "choice"];
const RANKING_COLUMNS: [&str; 3] = ["respondent_id", "strategy", "rank"];
const TYPE_NAMES: [&str; 3] = ["Age", "Drinking", "Health"];

fn strings(cols: &[&str]) -> Vec<String> {
    cols.iter().map(|s| s.to_string()).collect()
}

/// Scenario type from which features differ; all three differing is "Random".
pub fn ke_scenario_type(first: &Alternative, second: &Alternative) -> Option<String> {
    let differing: Vec<&str> = TYPE_NAMES
        .iter()
        .zip(first.counts.iter().zip(&second.counts))
        .filter(|(_, (a, b))| a != b)
        .map(|(n, _)| *n)
        .collect();
    match differing.len() {
        0 => None,
        3 => Some("Random".to_string()),
        _ => Some(differing.join(" & ")),
    }
}

/// The 8 patient profiles (age_old, drinks_frequently, has_health_issue), in binary order.
pub fn ke_profiles() -> Vec<[i64; 3]> {
    (0..8).map(|p| [(p >> 2) & 1, (p >> 1) & 1, p & 1]).collect()
}

/// Every unordered pair of distinct profiles, lower profile first: 28 contests.
pub fn ke_factorial_design() -> Dataset {
    let profiles = ke_profiles();
    let mut scenarios = Vec::new();
    for p in 0..profiles.len() {
        for q in p + 1..profiles.len() {
            let mut s = Scenario::new(format!("c{p}-{q}"), Alternative::from_counts(profiles[p]), Alternative::from_counts(profiles[q]));
            s.scenario_type = ke_scenario_type(&s.first, &s.second);
            scenarios.push(s);
        }
    }
    Dataset::new(Schema::kidney_exchange(), scenarios)
}

fn binary(cell: &str, line: u64, col: &str) -> Result<i64> {
    match cell {
        "0" => Ok(0),
        "1" => Ok(1),
        "" => Err(Error::Data(format!("line {line}: missing value in `{col}`"))),
        other => Err(Error::Data(format!("line {line}: `{col}` = `{other}` is not binary"))),
    }
}

/// Parses a kidney-exchange contest file. Scenario ids are `respondent:contest`;
/// an empty choice cell leaves the scenario unlabeled.
pub fn parse_ke_csv(text: &str) -> Result<Dataset> {
    let (_, body) = split_header(text, &["ke-contests"])?;
    let mut rdr = csv_reader(body);
    check_columns(rdr.headers()?, &strings(&KE_COLUMNS))?;
    let mut scenarios = Vec::new();
    let mut seen = HashMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = record_line(&rec, i);
        let side = |o: usize| -> Result<Alternative> {
            Ok(Alternative::from_counts(
                (o..o + 3).map(|k| binary(&rec[k], line, KE_COLUMNS[k])).collect::<Result<Vec<_>>>()?,
            ))
        };
        let (first, second) = (side(2)?, side(5)?);
        let id = format!("{}:{}", &rec[0], &rec[1]);
        if let Some(prev) = seen.insert(id.clone(), line) {
            return Err(Error::Data(format!("line {line}: duplicate contest `{id}` (first on line {prev})")));
        }
        let mut s = Scenario::new(id, first, second);
        s.respondent_id = (!rec[0].is_empty()).then(|| rec[0].to_string());
        s.scenario_type = ke_scenario_type(&s.first, &s.second);
        s.truth = match &rec[8] {
            "" => None,
            c => Some(Choice::from_index(binary(c, line, "choice")? as u8).expect("binary")),
        };
        scenarios.push(s);
    }
    Ok(Dataset::new(Schema::kidney_exchange(), scenarios))
}

pub fn load_ke_csv(path: &Path) -> Result<Dataset> {
    parse_ke_csv(&read_text(path)?)
}

fn finish(w: csv::Writer<Vec<u8>>, schema: &str) -> Result<String> {
    let body = String::from_utf8(w.into_inner().map_err(|e| Error::Data(e.to_string()))?).expect("csv output is UTF-8");
    Ok(header_line(schema) + &body)
}

fn writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new())
}

/// Serializes a kidney-exchange dataset. Ids of the form `respondent:contest`
/// are split back into their columns; other ids become the contest id.
pub fn write_ke_csv(d: &Dataset) -> Result<String> {
    if d.schema != Schema::kidney_exchange() {
        return Err(Error::Schema("write_ke_csv needs a kidney-exchange dataset".into()));
    }
    let mut w = writer();
    w.write_record(KE_COLUMNS)?;
    for s in &d.scenarios {
        let respondent = s.respondent_id.clone().unwrap_or_default();
        let contest = s.id.strip_prefix(&format!("{respondent}:")).unwrap_or(&s.id).to_string();
        let mut row = vec![respondent, contest];
        for alt in [&s.first, &s.second] {
            for c in &alt.counts {
                row.push(c.ok_or_else(|| Error::Data(format!("scenario `{}` has a missing value", s.id)))?.to_string());
            }
        }
        row.push(s.truth.map_or(String::new(), |c| c.as_index().to_string()));
        w.write_record(&row)?;
    }
    finish(w, "ke-contests")
}

/// Parses coded strategy rankings; respondents appear in first-appearance order.
pub fn parse_rankings_csv(text: &str) -> Result<Vec<StrategyRanking>> {
    let (_, body) = split_header(text, &["ke-rankings"])?;
    let mut rdr = csv_reader(body);
    check_columns(rdr.headers()?, &strings(&RANKING_COLUMNS))?;
    let mut out: Vec<StrategyRanking> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = record_line(&rec, i);
        let (respondent, strategy) = (&rec[0], &rec[1]);
        if !KE_STRATEGIES.contains(&strategy) {
            return Err(Error::Data(format!("line {line}: unknown strategy `{strategy}`")));
        }
        let rank: u32 = match rec[2].parse::<i64>() {
            Ok(r) if r >= 1 => r as u32,
            _ => return Err(Error::Data(format!("line {line}: rank `{}` is not a positive integer", &rec[2]))),
        };
        let slot = *index.entry(respondent.to_string()).or_insert_with(|| {
            out.push(StrategyRanking::new(respondent, Vec::<(String, u32)>::new()));
            out.len() - 1
        });
        if out[slot].ranks.insert(strategy.to_string(), rank).is_some() {
            return Err(Error::Data(format!("line {line}: `{respondent}` ranks `{strategy}` twice")));
        }
    }
    Ok(out)
}

pub fn load_rankings_csv(path: &Path) -> Result<Vec<StrategyRanking>> {
    parse_rankings_csv(&read_text(path)?)
}

/// Rankings in respondent order, strategies by rank then name.
pub fn write_rankings_csv(rankings: &[StrategyRanking]) -> Result<String> {
    let mut w = writer();
    w.write_record(RANKING_COLUMNS)?;
    for r in rankings {
        let mut entries: Vec<_> = r.ranks.iter().collect();
        entries.sort_by(|a, b| a.1.cmp(b.1).then(a.0.cmp(b.0)));
        for (name, rank) in entries {
            w.write_record([r.respondent_id.as_str(), name.as_str(), &rank.to_string()])?;
        }
    }
    finish(w, "ke-rankings")
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEAD: &str = "# dilemma-forge v1 ke-contests\nrespondent_id,contest_id,a_age,a_drink,a_health,b_age,b_drink,b_health,choice\n";

    #[test]
    fn factorial_has_28_contests() {
        let d = ke_factorial_design();
        assert_eq!(d.len(), 28);
        let distinct: std::collections::HashSet<_> = d.scenarios.iter().map(|s| (s.first.clone(), s.second.clone())).collect();
        assert_eq!(distinct.len(), 28);
        assert_eq!(d.scenarios.iter().filter(|s| s.scenario_type.as_deref() == Some("Random")).count(), 4);
        assert_eq!(d.scenarios.iter().filter(|s| s.scenario_type.as_deref() == Some("Age")).count(), 4);
    }

    #[test]
    fn parses_contests() {
        let text = format!("{HEAD}r1,3,1,0,0,0,0,1,1\nr1,4,0,0,0,0,1,0,0\n");
        let d = parse_ke_csv(&text).unwrap();
        assert_eq!(d.len(), 2);
        let s = &d.scenarios[0];
        assert_eq!(s.id, "r1:3");
        assert_eq!(s.truth, Some(Choice::Second));
        assert_eq!(s.scenario_type.as_deref(), Some("Age & Health"));
        assert_eq!(s.first.counts, vec![Some(1), Some(0), Some(0)]);
    }

    #[test]
    fn non_binary_and_missing_rejected() {
        let err = parse_ke_csv(&format!("{HEAD}r1,1,2,0,0,0,0,1,1\n")).unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
        assert!(parse_ke_csv(&format!("{HEAD}r1,1,,0,0,0,0,1,1\n")).is_err());
        assert!(parse_ke_csv(&format!("{HEAD}r1,1,0,0,0,0,0,1,1\nr1,1,0,0,0,0,0,1,1\n")).is_err());
    }

    #[test]
    fn ke_round_trip() {
        let text = format!("{HEAD}r1,3,1,0,0,0,0,1,1\nr2,4,0,0,0,0,1,0,\n");
        let d = parse_ke_csv(&text).unwrap();
        assert_eq!(write_ke_csv(&d).unwrap(), text);
    }

    #[test]
    fn rankings() {
        let text = "# dilemma-forge v1 ke-rankings\nrespondent_id,strategy,rank\nr1,choose_younger,1\nr1,choose_drinks_less,2\nr2,choose_older,1\nr2,choose_health_issues,1\n";
        let rs = parse_rankings_csv(text).unwrap();
        assert_eq!(rs.len(), 2);
        assert_eq!(rs[0].ranks.len(), 2);
        assert_eq!(rs[1].ranks["choose_older"], rs[1].ranks["choose_health_issues"]);
        assert_eq!(parse_rankings_csv(&write_rankings_csv(&rs).unwrap()).unwrap(), rs);
        let bad = text.replace("choose_older", "choose_taller");
        assert!(parse_rankings_csv(&bad).is_err());
        let zero = text.replace("r1,choose_younger,1", "r1,choose_younger,0");
        assert!(parse_rankings_csv(&zero).is_err());
    }
}
