use std::collections::HashMap;

use serde::{Deserialize, Serialize};

/// Index reserved for values never seen while building the vocabulary.
pub const OOV: u32 = 0;

/// Value-to-index map for one categorical field. Seen values get dense
/// indices starting at 1, in first-seen order.
#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
pub struct FieldVocab {
    pub name: String,
    values: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, u32>,
}

impl FieldVocab {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            ..Default::default()
        }
    }

    pub fn insert(&mut self, value: &str) -> u32 {
        if let Some(&i) = self.index.get(value) {
            return i;
        }
        self.values.push(value.to_string());
        let i = self.values.len() as u32;
        self.index.insert(value.to_string(), i);
        i
    }

    pub fn lookup(&self, value: &str) -> u32 {
        self.index.get(value).copied().unwrap_or(OOV)
    }

    /// Inverse lookup; `None` for the OOV slot and out-of-range indices.
    pub fn value(&self, index: u32) -> Option<&str> {
        index
            .checked_sub(1)
            .and_then(|i| self.values.get(i as usize))
            .map(String::as_str)
    }

    /// Number of indices including the OOV slot.
    pub fn size(&self) -> usize {
        self.values.len() + 1
    }

    fn rebuild_index(&mut self) {
        self.index = self
            .values
            .iter()
            .enumerate()
            .map(|(i, v)| (v.clone(), i as u32 + 1))
            .collect();
    }
}

/// One [`FieldVocab`] per categorical field.
#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
pub struct FeatureVocabulary {
    pub fields: Vec<FieldVocab>,
}

impl FeatureVocabulary {
    pub fn new(names: &[&str]) -> Self {
        Self {
            fields: names.iter().map(|n| FieldVocab::new(*n)).collect(),
        }
    }

    pub fn field_index(&self, name: &str) -> Option<usize> {
        self.fields.iter().position(|f| f.name == name)
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.fields.iter().map(FieldVocab::size).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("vocabulary serializes")
    }

    pub fn from_json(text: &str) -> crate::Result<Self> {
        let mut v: Self = serde_json::from_str(text)
            .map_err(|e| crate::Error::Format(format!("vocabulary json: {e}")))?;
        v.fields.iter_mut().for_each(FieldVocab::rebuild_index);
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bijective_on_seen_values_and_oov_is_zero() {
        let mut f = FieldVocab::new("genre");
        let vals = ["Drama", "Comedy", "Action", "Drama"];
        let idx: Vec<u32> = vals.iter().map(|v| f.insert(v)).collect();
        assert_eq!(idx, vec![1, 2, 3, 1]);
        for v in &vals {
            let i = f.lookup(v);
            assert_ne!(i, OOV);
            assert_eq!(f.value(i), Some(*v));
        }
        assert_eq!(f.lookup("Western"), OOV);
        assert_eq!(f.size(), 4);
    }

    #[test]
    fn json_round_trip_restores_lookup() {
        let mut v = FeatureVocabulary::new(&["a", "b"]);
        v.fields[0].insert("x");
        v.fields[1].insert("y");
        v.fields[1].insert("z");
        let back = FeatureVocabulary::from_json(&v.to_json()).unwrap();
        assert_eq!(back.fields[1].lookup("z"), 2);
        assert_eq!(back.sizes(), vec![2, 3]);
    }
}
