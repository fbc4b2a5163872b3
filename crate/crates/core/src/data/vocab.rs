use crate::error::{Error, Result};

/// Ordered class names with an optional ignored index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVocabulary {
    names: Vec<String>,
    ignore_index: Option<usize>,
}

/// Part classes in label order; index 0 is "unspecified".
pub const PART_NAMES: [&str; 32] = [
    "unspecified", "wall", "window", "vehicle", "roof", "plant", "door", "tower", "furniture", "ground",
    "beam", "stairs", "column", "banister", "floor", "chimney", "ceiling", "fence", "pool", "corridor",
    "balcony", "garage", "dome", "road", "gate", "parapet", "buttress", "dormer", "lighting", "arch",
    "awning", "shutters",
];

/// Building subtypes in label order.
pub const BUILDING_TYPES: [&str; 15] = [
    "castle", "cathedral", "church", "city hall", "factory", "hotel building", "house", "monastery", "mosque",
    "museum", "office building", "palace", "school building", "temple", "villa",
];

impl LabelVocabulary {
    pub fn new(names: Vec<String>, ignore_index: Option<usize>) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::invalid("empty vocabulary"));
        }
        for (i, n) in names.iter().enumerate() {
            if n.is_empty() {
                return Err(Error::invalid(format!("empty class name at index {i}")));
            }
            if names[..i].contains(n) {
                return Err(Error::invalid(format!("duplicate class name {n:?}")));
            }
        }
        if let Some(ix) = ignore_index {
            if ix >= names.len() {
                return Err(Error::invalid(format!("ignore index {ix} outside vocabulary")));
            }
        }
        Ok(LabelVocabulary { names, ignore_index })
    }

    /// The 32-entry part vocabulary with class 0 ignored.
    pub fn parts() -> Self {
        Self::new(PART_NAMES.iter().map(|s| s.to_string()).collect(), Some(0)).unwrap()
    }

    /// The 15 building types.
    pub fn building_types() -> Self {
        Self::new(BUILDING_TYPES.iter().map(|s| s.to_string()).collect(), None).unwrap()
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, index: usize) -> Option<&str> {
        self.names.get(index).map(String::as_str)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn ignore_index(&self) -> Option<usize> {
        self.ignore_index
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_vocabularies() {
        let parts = LabelVocabulary::parts();
        assert_eq!(parts.len(), 32);
        assert_eq!(parts.ignore_index(), Some(0));
        assert_eq!(parts.index_of("roof"), Some(4));
        assert_eq!(parts.index_of("shutters"), Some(31));
        let types = LabelVocabulary::building_types();
        assert_eq!(types.len(), 15);
        assert_eq!(types.index_of("office building"), Some(10));
    }

    #[test]
    fn rejects_duplicates_and_bad_ignore() {
        assert!(LabelVocabulary::new(vec!["a".into(), "a".into()], None).is_err());
        assert!(LabelVocabulary::new(vec!["a".into(), "".into()], None).is_err());
        assert!(LabelVocabulary::new(vec!["a".into()], Some(1)).is_err());
    }
}
