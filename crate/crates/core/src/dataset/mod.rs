//! MovieLens ingestion, vocabularies, user-disjoint splitting and sample
//! assembly with behavior histories.

mod format;
mod movielens;
mod samples;
mod vocab;

pub use format::{decode_samples, encode_samples, read_samples, write_samples};
pub use movielens::{
    age_label, occupation_label, parse_interactions, parse_interactions_str, parse_movies,
    parse_users, Catalog, Movie, RawInteraction, UserProfile,
};
pub use samples::{
    binarize_rating, build_samples, build_vocabulary, chronological_by_user, split_by_user,
    DatasetSplit, HistoryEntry, Part, Sample, SampleSchema, CATEGORY_FIELD, DEFAULT_MAX_HISTORY,
    FIELD_NAMES, ITEM_FIELD, RATING_VOCAB,
};
pub use vocab::{FeatureVocabulary, FieldVocab, OOV};
