use std::collections::HashSet;

use super::llm::LlmClient;
use crate::error::{Error, Result};

/// The aspects a scenario's prompts ask the LLM to reason about.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScenarioFactors {
    /// Singular item noun, e.g. "movie".
    pub scenario: String,
    /// Plural noun used in prompt text, e.g. "movies".
    pub item_noun: String,
    names: Vec<String>,
}

impl ScenarioFactors {
    pub fn new(scenario: &str, item_noun: &str, names: Vec<String>) -> Result<Self> {
        let names: Vec<String> = names.into_iter().map(|n| n.trim().to_string()).collect();
        if names.is_empty() || names.iter().any(String::is_empty) {
            return Err(Error::Config("scenario factor list must be non-empty".into()));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = names.iter().find(|n| !seen.insert(n.to_lowercase())) {
            return Err(Error::Config(format!("duplicate scenario factor {dup:?}")));
        }
        Ok(Self {
            scenario: scenario.to_string(),
            item_noun: item_noun.to_string(),
            names,
        })
    }

    pub fn movie() -> Self {
        let names = [
            "genre",
            "actors",
            "directors",
            "theme",
            "mood",
            "production quality",
            "critical acclaim",
        ];
        Self::new("movie", "movies", names.map(String::from).to_vec()).expect("valid preset")
    }

    pub fn news() -> Self {
        let names = ["topic", "source", "region", "style", "freshness", "clarity", "impact"];
        Self::new("news", "news articles", names.map(String::from).to_vec()).expect("valid preset")
    }

    pub fn preset(scenario: &str) -> Option<Self> {
        match scenario {
            "movie" => Some(Self::movie()),
            "news" => Some(Self::news()),
            _ => None,
        }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// "a", "a and b", "a, b, and c".
    pub fn joined(&self) -> String {
        match self.names.as_slice() {
            [one] => one.clone(),
            [a, b] => format!("{a} and {b}"),
            [init @ .., last] => format!("{}, and {last}", init.join(", ")),
            [] => unreachable!("factor list is non-empty"),
        }
    }
}

pub fn elicitation_prompt(scenario: &str) -> String {
    format!(
        "List the important factors or features that determine whether a user will be \
         interested in a {scenario}. Answer with a numbered list, one factor per line."
    )
}

/// Extracts factor names from a numbered or bulleted list. A line such as
/// `"3. **Mood**: the emotional tone"` yields `"mood"`. A single line of
/// comma-separated names is also accepted.
pub fn parse_factor_list(raw: &str) -> Result<Vec<String>> {
    let clean = |s: &str| {
        let s = s.replace("**", "");
        let head = s.split([':', '(']).next().unwrap_or("");
        let head = head.split(" - ").next().unwrap_or("");
        head.trim().trim_end_matches('.').trim().to_lowercase()
    };
    let mut out = Vec::new();
    for line in raw.lines().map(str::trim).filter(|l| !l.is_empty()) {
        let digits = line.chars().take_while(char::is_ascii_digit).count();
        let rest = if digits > 0 {
            line[digits..].strip_prefix(['.', ')'])
        } else {
            line.strip_prefix(['-', '*', '•'])
        };
        if let Some(rest) = rest {
            let name = clean(rest);
            if !name.is_empty() && !out.contains(&name) {
                out.push(name);
            }
        }
    }
    if out.is_empty() {
        let lines: Vec<&str> = raw.lines().filter(|l| !l.trim().is_empty()).collect();
        if let [line] = lines.as_slice() {
            for part in line.split(',') {
                let part = part.trim();
                let part = part.strip_prefix("and ").unwrap_or(part);
                let name = clean(part);
                if !name.is_empty() && !out.contains(&name) {
                    out.push(name);
                }
            }
            if out.len() < 2 {
                out.clear();
            }
        }
    }
    if out.is_empty() {
        return Err(Error::FactorParse { raw: raw.to_string() });
    }
    Ok(out)
}

/// Asks `llm` for the scenario's factors. A non-empty `override_names`
/// replaces the elicited list without querying the model; this is where a
/// reviewed list from configuration enters.
pub fn elicit_factors(
    scenario: &str,
    item_noun: &str,
    llm: &dyn LlmClient,
    override_names: Option<Vec<String>>,
) -> Result<ScenarioFactors> {
    if let Some(names) = override_names.filter(|n| !n.is_empty()) {
        return ScenarioFactors::new(scenario, item_noun, names);
    }
    let raw = llm
        .complete(&elicitation_prompt(scenario))
        .map_err(|e| Error::Generation {
            attempts: 1,
            message: e.to_string(),
        })?;
    ScenarioFactors::new(scenario, item_noun, parse_factor_list(&raw)?)
}
