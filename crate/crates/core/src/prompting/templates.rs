//! Preference-reasoning and item-factual prompt templates.
//!
//! The rendered wording is frozen by golden files under
//! `crates/core/tests/golden/`; change those together with this module.

use sha2::{Digest, Sha256};

use super::factors::ScenarioFactors;
use crate::kind::KnowledgeKind;

/// One rated item of a user's history as shown to the LLM.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HistoryLine {
    pub title: String,
    pub category: String,
    pub rating: u8,
}

/// Text description of a candidate item.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ItemDescription {
    pub title: String,
    /// Extra attribute strings such as `"genres: Drama|Romance"`.
    pub attributes: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PromptRequest {
    pub kind: KnowledgeKind,
    pub entity_id: String,
    pub rendered_text: String,
}

impl PromptRequest {
    /// Hex SHA-256 of the rendered text.
    pub fn prompt_hash(&self) -> String {
        prompt_hash(&self.rendered_text)
    }
}

pub fn prompt_hash(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

// Newlines inside values would break the one-entry-per-line layout.
fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Prompt asking the LLM to infer a user's preferences factor by factor.
pub fn build_preference_prompt(
    entity_id: &str,
    profile: &[String],
    history: &[HistoryLine],
    factors: &ScenarioFactors,
) -> PromptRequest {
    let mut text = String::new();
    text.push_str(&format!(
        "You are an expert in {} recommendation. Analyze the preferences of the user described below.\n\n",
        factors.scenario
    ));
    let profile: Vec<String> = profile.iter().map(|p| one_line(p)).collect();
    if profile.is_empty() {
        text.push_str("User profile: not available.\n\n");
    } else {
        text.push_str(&format!("User profile: {}.\n\n", profile.join(", ")));
    }
    if history.is_empty() {
        text.push_str(&format!(
            "The user has no prior history: no {} have been rated yet.\n\n",
            factors.item_noun
        ));
    } else {
        text.push_str(&format!(
            "The user rated the following {}, oldest first:\n",
            factors.item_noun
        ));
        for (i, h) in history.iter().enumerate() {
            text.push_str(&format!(
                "{}. {} ({}) — rated {}/5\n",
                i + 1,
                one_line(&h.title),
                one_line(&h.category),
                h.rating
            ));
        }
        text.push('\n');
    }
    text.push_str(&format!(
        "Factors to consider: {}.\n\n",
        factors.joined()
    ));
    text.push_str(&format!(
        "Analyze the user's preferences on {} with respect to each factor above. \
         For each factor, state what the user likely prefers and briefly explain the reasoning.\n",
        factors.item_noun
    ));
    PromptRequest {
        kind: KnowledgeKind::Preference,
        entity_id: entity_id.to_string(),
        rendered_text: text,
    }
}

/// Prompt asking the LLM for facts about an item along the same factors.
pub fn build_item_prompt(entity_id: &str, item: &ItemDescription, factors: &ScenarioFactors) -> PromptRequest {
    let mut text = String::new();
    text.push_str(&format!(
        "You are an expert with broad factual knowledge about {}.\n\n",
        factors.item_noun
    ));
    text.push_str(&format!("Target {}: {}\n", factors.scenario, one_line(&item.title)));
    for attr in &item.attributes {
        text.push_str(&format!("- {}\n", one_line(attr)));
    }
    text.push_str(&format!("\nFactors to consider: {}.\n\n", factors.joined()));
    text.push_str(&format!(
        "Introduce this {} with respect to each factor above. \
         For each factor, give concise factual information.\n",
        factors.scenario
    ));
    PromptRequest {
        kind: KnowledgeKind::ItemFactual,
        entity_id: entity_id.to_string(),
        rendered_text: text,
    }
}
