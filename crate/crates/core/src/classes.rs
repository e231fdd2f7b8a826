use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{GpsmError, Result};
use crate::pointcloud::UNLABELED;

/// One semantic class: the label id used in point clouds, a display name and
/// an RGB display color.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassInfo {
    pub id: u16,
    pub name: String,
    pub color: [u8; 3],
}

/// Ordered set of semantic classes. Class *indices* (positions in this list)
/// address probability vectors throughout the crate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassSet {
    classes: Vec<ClassInfo>,
}

impl ClassSet {
    pub fn new(classes: Vec<ClassInfo>) -> Result<Self> {
        if classes.len() < 2 {
            return Err(GpsmError::input("a class set needs at least two classes"));
        }
        let mut seen = HashSet::new();
        for c in &classes {
            if c.id == UNLABELED {
                return Err(GpsmError::input(format!(
                    "class id {UNLABELED} is reserved for unlabeled points"
                )));
            }
            if !seen.insert(c.id) {
                return Err(GpsmError::input(format!("duplicate class id {}", c.id)));
            }
        }
        Ok(ClassSet { classes })
    }

    /// Classes `1..=n` named `class_<id>` with a fixed palette.
    pub fn numbered(n: u16) -> Result<Self> {
        Self::new(
            (1..=n)
                .map(|id| ClassInfo {
                    id,
                    name: format!("class_{id}"),
                    color: PALETTE[(id as usize - 1) % PALETTE.len()],
                })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<&ClassInfo> {
        self.classes.get(index)
    }

    pub fn iter(&self) -> impl Iterator<Item = &ClassInfo> {
        self.classes.iter()
    }

    pub fn ids(&self) -> Vec<u16> {
        self.classes.iter().map(|c| c.id).collect()
    }

    pub fn index_of(&self, id: u16) -> Option<usize> {
        self.classes.iter().position(|c| c.id == id)
    }

    pub fn require_index(&self, id: u16) -> Result<usize> {
        self.index_of(id)
            .ok_or_else(|| GpsmError::input(format!("label {id} is not in the class set")))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let raw: ClassSet = serde_json::from_str(s)?;
        Self::new(raw.classes)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

const PALETTE: [[u8; 3]; 8] = [
    [230, 25, 75],
    [60, 180, 75],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
    [210, 245, 60],
];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_side_file_roundtrip() {
        let json = r#"{"classes": [
            {"id": 1, "name": "floor", "color": [10, 20, 30]},
            {"id": 4, "name": "wall", "color": [200, 200, 200]}
        ]}"#;
        let set = ClassSet::from_json(json).unwrap();
        assert_eq!(set.len(), 2);
        assert_eq!(set.index_of(4), Some(1));
        assert_eq!(set.index_of(2), None);
        assert_eq!(ClassSet::from_json(&set.to_json().unwrap()).unwrap(), set);
    }

    #[test]
    fn rejects_duplicates_and_singletons() {
        let c = |id| ClassInfo {
            id,
            name: String::new(),
            color: [0; 3],
        };
        assert!(ClassSet::new(vec![c(1), c(1)]).is_err());
        assert!(ClassSet::new(vec![c(1)]).is_err());
        assert!(ClassSet::new(vec![c(1), c(UNLABELED)]).is_err());
    }
}
