use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::movielens::{Catalog, RawInteraction};
use super::vocab::FeatureVocabulary;
use crate::error::{Error, Result};

/// Categorical fields of every MovieLens sample, in order.
pub const FIELD_NAMES: [&str; 6] = ["user_id", "gender", "age", "occupation", "item_id", "category"];
pub const ITEM_FIELD: usize = 4;
pub const CATEGORY_FIELD: usize = 5;
/// Ratings are embedded directly: index r for rating r, 0 for padding.
pub const RATING_VOCAB: usize = 6;
pub const DEFAULT_MAX_HISTORY: usize = 30;

/// Ratings of 4 and 5 are positive, 1 to 3 negative.
pub fn binarize_rating(rating: i64) -> Result<u8> {
    match rating {
        4 | 5 => Ok(1),
        1..=3 => Ok(0),
        _ => Err(Error::Domain(format!("rating {rating} outside [1, 5]"))),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HistoryEntry {
    pub item: u32,
    pub category: u32,
    pub rating: u8,
}

/// One labeled CTR instance.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sample {
    pub user_id: String,
    pub item_id: String,
    pub timestamp: u64,
    /// One vocabulary index per field of the schema.
    pub fields: Vec<u32>,
    /// Prior interactions of the same user, oldest first.
    pub history: Vec<HistoryEntry>,
    pub label: u8,
}

/// Describes the categorical layout shared by a set of samples.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SampleSchema {
    pub field_names: Vec<String>,
    /// Vocabulary size per field, OOV slot included.
    pub field_sizes: Vec<usize>,
    /// Field whose vocabulary indexes history items.
    pub item_field: usize,
    /// Field whose vocabulary indexes history categories.
    pub category_field: usize,
    pub rating_size: usize,
    pub max_history: usize,
}

impl SampleSchema {
    pub fn num_fields(&self) -> usize {
        self.field_names.len()
    }

    pub fn movielens(vocab: &FeatureVocabulary, max_history: usize) -> Self {
        Self {
            field_names: vocab.fields.iter().map(|f| f.name.clone()).collect(),
            field_sizes: vocab.sizes(),
            item_field: ITEM_FIELD,
            category_field: CATEGORY_FIELD,
            rating_size: RATING_VOCAB,
            max_history,
        }
    }

    /// Checks that every index of `s` fits this schema.
    pub fn validate(&self, s: &Sample) -> Result<()> {
        if s.fields.len() != self.num_fields() {
            return Err(Error::Input(format!(
                "sample has {} fields, schema has {}",
                s.fields.len(),
                self.num_fields()
            )));
        }
        for (i, (&v, &size)) in s.fields.iter().zip(&self.field_sizes).enumerate() {
            if v as usize >= size {
                return Err(Error::Input(format!(
                    "field {} index {v} >= vocabulary size {size}",
                    self.field_names[i]
                )));
            }
        }
        if s.history.len() > self.max_history {
            return Err(Error::Input(format!(
                "history length {} exceeds {}",
                s.history.len(),
                self.max_history
            )));
        }
        for h in &s.history {
            if h.item as usize >= self.field_sizes[self.item_field]
                || h.category as usize >= self.field_sizes[self.category_field]
                || h.rating as usize >= self.rating_size
            {
                return Err(Error::Input(format!("history entry {h:?} out of vocabulary")));
            }
        }
        if s.label > 1 {
            return Err(Error::Input(format!("label {} not in {{0, 1}}", s.label)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Part {
    Train,
    Test,
}

/// User-disjoint train/test partition.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit<T> {
    pub train: Vec<T>,
    pub test: Vec<T>,
    pub assignment: BTreeMap<String, Part>,
}

impl<T> DatasetSplit<T> {
    pub fn users(&self, part: Part) -> impl Iterator<Item = &str> {
        self.assignment
            .iter()
            .filter(move |(_, &p)| p == part)
            .map(|(u, _)| u.as_str())
    }
}

/// Assigns `round(ratio * users)` users (at least one on each side) to the
/// training part. Users are sorted before a seeded shuffle, so the result
/// depends only on the set of users, `ratio` and `seed`.
pub fn split_by_user(
    interactions: &[RawInteraction],
    split_ratio: f64,
    seed: u64,
) -> Result<DatasetSplit<RawInteraction>> {
    if !(split_ratio > 0.0 && split_ratio < 1.0) {
        return Err(Error::Split(format!("split ratio {split_ratio} not in (0, 1)")));
    }
    let mut users: Vec<&str> = interactions.iter().map(|r| r.user_id.as_str()).collect();
    users.sort_unstable();
    users.dedup();
    if users.len() < 2 {
        return Err(Error::Split(format!(
            "need at least 2 users to split, found {}",
            users.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    users.shuffle(&mut rng);
    let n_train = ((split_ratio * users.len() as f64).round() as usize).clamp(1, users.len() - 1);
    let assignment: BTreeMap<String, Part> = users
        .iter()
        .enumerate()
        .map(|(i, u)| (u.to_string(), if i < n_train { Part::Train } else { Part::Test }))
        .collect();
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for r in interactions {
        match assignment[&r.user_id] {
            Part::Train => train.push(r.clone()),
            Part::Test => test.push(r.clone()),
        }
    }
    Ok(DatasetSplit {
        train,
        test,
        assignment,
    })
}

/// Field values of the interaction `r`, before vocabulary lookup.
fn raw_fields(r: &RawInteraction, catalog: &Catalog) -> [String; 6] {
    let profile = catalog.users.get(&r.user_id);
    let get = |f: fn(&super::movielens::UserProfile) -> &String| {
        profile.map_or_else(|| "unknown".to_string(), |p| f(p).clone())
    };
    [
        r.user_id.clone(),
        get(|p| &p.gender),
        get(|p| &p.age),
        get(|p| &p.occupation),
        r.item_id.clone(),
        catalog.category(&r.item_id).to_string(),
    ]
}

/// Builds the vocabulary from training interactions only.
pub fn build_vocabulary(train: &[RawInteraction], catalog: &Catalog) -> FeatureVocabulary {
    let mut vocab = FeatureVocabulary::new(&FIELD_NAMES);
    for r in train {
        for (field, value) in vocab.fields.iter_mut().zip(raw_fields(r, catalog)) {
            field.insert(&value);
        }
    }
    vocab
}

/// Groups interactions per user in chronological order. Equal timestamps
/// keep their file order.
pub fn chronological_by_user(interactions: &[RawInteraction]) -> BTreeMap<&str, Vec<&RawInteraction>> {
    let mut by_user: BTreeMap<&str, Vec<&RawInteraction>> = BTreeMap::new();
    for r in interactions {
        by_user.entry(r.user_id.as_str()).or_default().push(r);
    }
    for rows in by_user.values_mut() {
        rows.sort_by_key(|r| r.timestamp);
    }
    by_user
}

fn samples_for(
    interactions: &[RawInteraction],
    catalog: &Catalog,
    vocab: &FeatureVocabulary,
    max_history: usize,
) -> Result<Vec<Sample>> {
    let mut out = Vec::with_capacity(interactions.len());
    for rows in chronological_by_user(interactions).into_values() {
        let encoded: Vec<HistoryEntry> = rows
            .iter()
            .map(|r| HistoryEntry {
                item: vocab.fields[ITEM_FIELD].lookup(&r.item_id),
                category: vocab.fields[CATEGORY_FIELD].lookup(catalog.category(&r.item_id)),
                rating: r.rating,
            })
            .collect();
        // `prior` counts interactions strictly earlier than the current one.
        let mut prior = 0;
        for (k, r) in rows.iter().enumerate() {
            while rows[prior].timestamp < r.timestamp {
                prior += 1;
            }
            debug_assert!(prior <= k);
            let start = prior.saturating_sub(max_history);
            let fields = vocab
                .fields
                .iter()
                .zip(raw_fields(r, catalog))
                .map(|(f, v)| f.lookup(&v))
                .collect();
            out.push(Sample {
                user_id: r.user_id.clone(),
                item_id: r.item_id.clone(),
                timestamp: r.timestamp,
                fields,
                history: encoded[start..prior].to_vec(),
                label: binarize_rating(r.rating as i64)?,
            });
        }
    }
    Ok(out)
}

/// Emits one sample per interaction. Each sample's history holds up to
/// `max_history` of the same user's interactions with a strictly earlier
/// timestamp, oldest first.
pub fn build_samples(
    split: &DatasetSplit<RawInteraction>,
    catalog: &Catalog,
    vocab: &FeatureVocabulary,
    max_history: usize,
) -> Result<DatasetSplit<Sample>> {
    Ok(DatasetSplit {
        train: samples_for(&split.train, catalog, vocab, max_history)?,
        test: samples_for(&split.test, catalog, vocab, max_history)?,
        assignment: split.assignment.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn inter(user: &str, item: &str, rating: u8, ts: u64) -> RawInteraction {
        RawInteraction {
            user_id: user.into(),
            item_id: item.into(),
            rating,
            timestamp: ts,
        }
    }

    fn users(n: usize) -> Vec<RawInteraction> {
        (0..n).map(|u| inter(&format!("u{u}"), "i", 3, 0)).collect()
    }

    #[test]
    fn binarize_exhaustive() {
        for r in 1..=5 {
            assert_eq!(binarize_rating(r).unwrap() == 1, r == 4 || r == 5);
        }
        assert!(matches!(binarize_rating(0), Err(Error::Domain(_))));
        assert!(matches!(binarize_rating(6), Err(Error::Domain(_))));
    }

    #[test]
    fn ninety_ten_split_of_ten_users() {
        let s = split_by_user(&users(10), 0.9, 7).unwrap();
        assert_eq!(s.users(Part::Train).count(), 9);
        assert_eq!(s.users(Part::Test).count(), 1);
    }

    #[test]
    fn halving_two_users() {
        let s = split_by_user(&users(2), 0.5, 1).unwrap();
        assert_eq!(s.users(Part::Train).count(), 1);
        assert_eq!(s.users(Part::Test).count(), 1);
    }

    #[test]
    fn split_is_deterministic() {
        let a = split_by_user(&users(50), 0.9, 3).unwrap();
        let b = split_by_user(&users(50), 0.9, 3).unwrap();
        assert_eq!(a.assignment, b.assignment);
    }

    #[test]
    fn split_errors() {
        assert!(matches!(split_by_user(&users(1), 0.9, 0), Err(Error::Split(_))));
        assert!(matches!(split_by_user(&users(5), 1.0, 0), Err(Error::Split(_))));
    }

    fn one_user(n: u64) -> (DatasetSplit<RawInteraction>, FeatureVocabulary) {
        let rows: Vec<_> = (1..=n).map(|t| inter("u", &format!("m{t}"), 4, t)).collect();
        let split = DatasetSplit {
            train: rows.clone(),
            test: vec![],
            assignment: BTreeMap::from([("u".to_string(), Part::Train)]),
        };
        let vocab = build_vocabulary(&rows, &Catalog::default());
        (split, vocab)
    }

    #[test]
    fn history_counts_and_first_interaction() {
        let (split, vocab) = one_user(3);
        let s = build_samples(&split, &Catalog::default(), &vocab, 30).unwrap();
        assert_eq!(s.train.len(), 3);
        assert!(s.train[0].history.is_empty());
        assert_eq!(s.train[2].history.len(), 2);
    }

    #[test]
    fn history_keeps_most_recent() {
        // 41 interactions; the last one has 40 predecessors.
        let (split, vocab) = one_user(41);
        let s = build_samples(&split, &Catalog::default(), &vocab, 30).unwrap();
        let last = s.train.last().unwrap();
        let items: Vec<u32> = last.history.iter().map(|h| h.item).collect();
        // Independent recomputation: timestamps 11..=40 are the 30 most recent
        // before t=41, and item m{t} was inserted with index t.
        let want: Vec<u32> = (11..=40).collect();
        assert_eq!(items, want);
    }

    #[test]
    fn equal_timestamps_do_not_leak() {
        let rows = vec![inter("u", "a", 5, 10), inter("u", "b", 1, 10), inter("u", "c", 4, 11)];
        let split = DatasetSplit {
            train: rows.clone(),
            test: vec![],
            assignment: BTreeMap::from([("u".to_string(), Part::Train)]),
        };
        let vocab = build_vocabulary(&rows, &Catalog::default());
        let s = build_samples(&split, &Catalog::default(), &vocab, 30).unwrap();
        assert!(s.train[0].history.is_empty());
        assert!(s.train[1].history.is_empty());
        assert_eq!(s.train[2].history.len(), 2);
    }

    #[test]
    fn test_only_values_map_to_oov() {
        let train = vec![inter("u1", "a", 5, 1)];
        let test = vec![inter("u2", "z", 2, 1)];
        let vocab = build_vocabulary(&train, &Catalog::default());
        let split = DatasetSplit {
            train,
            test,
            assignment: BTreeMap::from([
                ("u1".to_string(), Part::Train),
                ("u2".to_string(), Part::Test),
            ]),
        };
        let s = build_samples(&split, &Catalog::default(), &vocab, 30).unwrap();
        assert_eq!(s.test[0].fields[0], 0);
        assert_eq!(s.test[0].fields[ITEM_FIELD], 0);
    }

    proptest! {
        #[test]
        fn split_partitions_users(n in 2usize..60, ratio in 0.05f64..0.95, seed in any::<u64>()) {
            let s = split_by_user(&users(n), ratio, seed).unwrap();
            let train: Vec<_> = s.users(Part::Train).collect();
            let test: Vec<_> = s.users(Part::Test).collect();
            prop_assert_eq!(train.len() + test.len(), n);
            prop_assert!(train.iter().all(|u| !test.contains(u)));
            let want = ratio * n as f64;
            prop_assert!((train.len() as f64 - want).abs() <= 1.0);
        }

        #[test]
        fn history_strictly_precedes_target(
            ts in proptest::collection::vec(0u64..20, 1..40),
            max_history in 1usize..10,
        ) {
            let rows: Vec<_> = ts.iter().enumerate()
                .map(|(i, &t)| inter("u", &format!("m{i}"), 3, t)).collect();
            let split = DatasetSplit {
                train: rows.clone(),
                test: vec![],
                assignment: BTreeMap::from([("u".to_string(), Part::Train)]),
            };
            let vocab = build_vocabulary(&rows, &Catalog::default());
            let s = build_samples(&split, &Catalog::default(), &vocab, max_history).unwrap();
            let ts_of = |item: u32| rows[vocab.fields[ITEM_FIELD].value(item).unwrap()[1..].parse::<usize>().unwrap()].timestamp;
            for sample in &s.train {
                prop_assert!(sample.history.len() <= max_history);
                for h in &sample.history {
                    prop_assert!(ts_of(h.item) < sample.timestamp);
                }
                let earlier = rows.iter().filter(|r| r.timestamp < sample.timestamp).count();
                prop_assert_eq!(sample.history.len(), earlier.min(max_history));
            }
        }
    }
}
