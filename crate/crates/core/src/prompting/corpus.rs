//! Builds the full prompt set for a MovieLens-style catalog.

use std::collections::BTreeSet;

use super::factors::ScenarioFactors;
use super::templates::{build_item_prompt, build_preference_prompt, HistoryLine, ItemDescription, PromptRequest};
use crate::dataset::{age_label, chronological_by_user, occupation_label, Catalog, RawInteraction, UserProfile};

/// Default number of interactions shown in a preference prompt.
pub const DEFAULT_PROMPT_HISTORY: usize = 30;

pub fn profile_strings(profile: Option<&UserProfile>) -> Vec<String> {
    let Some(p) = profile else { return Vec::new() };
    let gender = match p.gender.as_str() {
        "M" => "male",
        "F" => "female",
        _ => "unknown gender",
    };
    vec![
        gender.to_string(),
        format!("age {}", age_label(&p.age)),
        format!("occupation {}", occupation_label(&p.occupation)),
    ]
}

/// One preference prompt per user, built from that user's earliest
/// `window` interactions. Users come out in id order.
pub fn preference_requests(
    interactions: &[RawInteraction],
    catalog: &Catalog,
    factors: &ScenarioFactors,
    window: usize,
) -> Vec<PromptRequest> {
    chronological_by_user(interactions)
        .into_iter()
        .map(|(user, events)| {
            let history: Vec<HistoryLine> = events
                .iter()
                .take(window)
                .map(|e| HistoryLine {
                    title: catalog.title(&e.item_id),
                    category: catalog.category(&e.item_id).to_string(),
                    rating: e.rating,
                })
                .collect();
            build_preference_prompt(user, &profile_strings(catalog.users.get(user)), &history, factors)
        })
        .collect()
}

/// One factual prompt per item that appears in `interactions`, in id order.
pub fn item_requests(
    interactions: &[RawInteraction],
    catalog: &Catalog,
    factors: &ScenarioFactors,
) -> Vec<PromptRequest> {
    let items: BTreeSet<&str> = interactions.iter().map(|i| i.item_id.as_str()).collect();
    items
        .into_iter()
        .map(|id| {
            let attributes = catalog
                .movies
                .get(id)
                .map(|m| vec![format!("genres: {}", m.genres.join("|"))])
                .unwrap_or_default();
            let desc = ItemDescription {
                title: catalog.title(id),
                attributes,
            };
            build_item_prompt(id, &desc, factors)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Movie;
    use crate::kind::KnowledgeKind;

    fn inter(u: &str, i: &str, r: u8, ts: u64) -> RawInteraction {
        RawInteraction {
            user_id: u.into(),
            item_id: i.into(),
            rating: r,
            timestamp: ts,
        }
    }

    #[test]
    fn window_takes_earliest_interactions() {
        let mut catalog = Catalog::default();
        for (id, t) in [("1", "A (1990)"), ("2", "B (1991)"), ("3", "C (1992)")] {
            catalog.movies.insert(
                id.into(),
                Movie {
                    title: t.into(),
                    genres: vec!["Drama".into()],
                },
            );
        }
        let xs = vec![inter("u", "3", 5, 30), inter("u", "1", 2, 10), inter("u", "2", 4, 20)];
        let reqs = preference_requests(&xs, &catalog, &ScenarioFactors::movie(), 2);
        assert_eq!(reqs.len(), 1);
        let t = &reqs[0].rendered_text;
        assert!(t.contains("1. A (1990) (Drama) — rated 2/5"));
        assert!(t.contains("2. B (1991) (Drama) — rated 4/5"));
        assert!(!t.contains("C (1992)"));
        assert!(t.contains("User profile: not available."));

        let items = item_requests(&xs, &catalog, &ScenarioFactors::movie());
        assert_eq!(items.iter().map(|r| r.entity_id.as_str()).collect::<Vec<_>>(), ["1", "2", "3"]);
        assert!(items.iter().all(|r| r.kind == KnowledgeKind::ItemFactual));
        assert!(items[0].rendered_text.contains("genres: Drama"));
    }
}
