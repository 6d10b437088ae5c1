use crate::domain::Schema;
use crate::error::{Error, Result};

use super::{check_unique_names, parse_suite, HeuristicSource, HeuristicSpec};

/// Moral Machine suite. Every rule is written for both orderings so that no
/// heuristic prefers an alternative because of its position.
const MM_SUITE: &str = r#"
# If one alternative saves only pets, choose the other.
heuristic "save_humans" {
    when first.human > 0 and second.human == 0 and second.non_human > 0 -> choose first
    when second.human > 0 and first.human == 0 and first.non_human > 0 -> choose second
}

# Save the most human lives.
heuristic "utilitarian" {
    when argmax(first.human, second.human)
}

heuristic "save_females" {
    when argmax(first.female, second.female)
}

heuristic "save_youth" {
    when argmax(first.young - first.old, second.young - second.old)
}

heuristic "save_infants" {
    when argmax(first.infant, second.infant)
}

heuristic "save_pregnant" {
    when argmax(first.pregnant, second.pregnant)
}

heuristic "save_doctors" {
    when argmax(first.medical, second.medical)
}

heuristic "save_fit" {
    when argmax(first.fit - first.fat, second.fit - second.fat)
}

heuristic "save_higher_status" {
    when argmax(first.working - first.homeless, second.working - second.homeless)
}

heuristic "sacrifice_criminals" {
    when argmin(first.criminal, second.criminal)
}

heuristic "sacrifice_homeless" {
    when argmin(first.homeless, second.homeless)
}

# Do not hit the pedestrians if they are crossing legally.
heuristic "spare_lawful_pedestrians" {
    when argmax(first.law_abiding, second.law_abiding)
}

heuristic "sacrifice_jaywalkers" {
    when argmin(first.law_violating, second.law_violating)
}

# With equal lives at stake, do not intervene.
heuristic "prefer_inaction" {
    when first.human == second.human and not first.intervention and second.intervention -> choose first
    when first.human == second.human and first.intervention and not second.intervention -> choose second
}

heuristic "save_passengers" {
    when first.is_passengers and not second.is_passengers and first.human >= second.human -> choose first
    when second.is_passengers and not first.is_passengers and second.human >= first.human -> choose second
}

heuristic "save_pedestrians" {
    when second.is_passengers and not first.is_passengers and first.human >= second.human -> choose first
    when first.is_passengers and not second.is_passengers and second.human >= first.human -> choose second
}
"#;

const KE_SUITE: &str = r#"
heuristic "choose_younger" {
    when argmin(first.age_old, second.age_old)
}

heuristic "choose_drinks_less" {
    when argmin(first.drinks_frequently, second.drinks_frequently)
}

heuristic "choose_no_health_issues" {
    when argmin(first.has_health_issue, second.has_health_issue)
}
"#;

const KE_OPPOSITE_SUITE: &str = r#"
heuristic "choose_older" {
    when argmax(first.age_old, second.age_old)
}

heuristic "choose_drinks_more" {
    when argmax(first.drinks_frequently, second.drinks_frequently)
}

heuristic "choose_health_issues" {
    when argmax(first.has_health_issue, second.has_health_issue)
}
"#;

/// The six kidney-exchange strategies: the three heuristics followed by their contradictions.
pub const KE_STRATEGIES: [&str; 6] = [
    "choose_younger",
    "choose_drinks_less",
    "choose_no_health_issues",
    "choose_older",
    "choose_drinks_more",
    "choose_health_issues",
];

/// (heuristic, contradiction) pairs.
pub const KE_OPPOSITES: [(&str, &str); 3] = [
    ("choose_younger", "choose_older"),
    ("choose_drinks_less", "choose_drinks_more"),
    ("choose_no_health_issues", "choose_health_issues"),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BuiltinSuite {
    Mm,
    Ke,
    KeWithOpposites,
}

impl BuiltinSuite {
    pub fn parse(id: &str) -> Result<Self> {
        match id.trim() {
            "mm" => Ok(BuiltinSuite::Mm),
            "ke" => Ok(BuiltinSuite::Ke),
            "ke_with_opposites" => Ok(BuiltinSuite::KeWithOpposites),
            other => Err(Error::Config(format!(
                "unknown builtin suite `{other}` (expected mm, ke or ke_with_opposites)"
            ))),
        }
    }

    pub fn id(self) -> &'static str {
        match self {
            BuiltinSuite::Mm => "mm",
            BuiltinSuite::Ke => "ke",
            BuiltinSuite::KeWithOpposites => "ke_with_opposites",
        }
    }

    pub fn schema(self) -> Schema {
        match self {
            BuiltinSuite::Mm => Schema::moral_machine(),
            BuiltinSuite::Ke | BuiltinSuite::KeWithOpposites => Schema::kidney_exchange(),
        }
    }

    pub fn load(self) -> Vec<HeuristicSpec> {
        let schema = self.schema();
        let texts: &[&str] = match self {
            BuiltinSuite::Mm => &[MM_SUITE],
            BuiltinSuite::Ke => &[KE_SUITE],
            BuiltinSuite::KeWithOpposites => &[KE_SUITE, KE_OPPOSITE_SUITE],
        };
        let mut suite = Vec::new();
        for text in texts {
            let parsed = parse_suite(text, &schema).expect("builtin suites parse");
            suite.extend(parsed.into_iter().map(|h| HeuristicSpec {
                source: HeuristicSource::Builtin(format!("{}:{}", self.id(), h.name)),
                ..h
            }));
        }
        check_unique_names(&suite).expect("builtin names are unique");
        suite
    }
}

/// Built-in suite by id: `mm` (16 heuristics), `ke` (3) or `ke_with_opposites` (6).
pub fn builtin_suite(id: &str) -> Result<Vec<HeuristicSpec>> {
    Ok(BuiltinSuite::parse(id)?.load())
}
