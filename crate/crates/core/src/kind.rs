use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which side of a sample a piece of knowledge describes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KnowledgeKind {
    /// Reasoning about a user's preferences.
    Preference,
    /// Facts about a candidate item.
    ItemFactual,
}

impl KnowledgeKind {
    pub const ALL: [KnowledgeKind; 2] = [KnowledgeKind::Preference, KnowledgeKind::ItemFactual];

    /// Kind byte used in the vector cache format.
    pub fn as_byte(self) -> u8 {
        match self {
            KnowledgeKind::Preference => 0,
            KnowledgeKind::ItemFactual => 1,
        }
    }

    pub fn from_byte(b: u8) -> Result<Self> {
        match b {
            0 => Ok(KnowledgeKind::Preference),
            1 => Ok(KnowledgeKind::ItemFactual),
            _ => Err(Error::Format(format!("unknown knowledge kind byte {b}"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            KnowledgeKind::Preference => "preference",
            KnowledgeKind::ItemFactual => "item_factual",
        }
    }
}

impl fmt::Display for KnowledgeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for KnowledgeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "preference" => Ok(KnowledgeKind::Preference),
            "item_factual" | "item" => Ok(KnowledgeKind::ItemFactual),
            _ => Err(Error::Config(format!("unknown knowledge kind {s:?}"))),
        }
    }
}

/// Key of a knowledge record, representation or augmented vector.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntityKey {
    pub entity_id: String,
    pub kind: KnowledgeKind,
}

impl EntityKey {
    pub fn new(entity_id: impl Into<String>, kind: KnowledgeKind) -> Self {
        Self {
            entity_id: entity_id.into(),
            kind,
        }
    }

    pub fn user(id: impl Into<String>) -> Self {
        Self::new(id, KnowledgeKind::Preference)
    }

    pub fn item(id: impl Into<String>) -> Self {
        Self::new(id, KnowledgeKind::ItemFactual)
    }
}

impl fmt::Display for EntityKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.kind, self.entity_id)
    }
}
