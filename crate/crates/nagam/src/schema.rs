//! Concept vocabulary: rating scales, category encodings, and normalization rules.
//!
//! The schema is the single source of truth for which nodule attributes exist,
//! how raters score them, and how raw ratings map onto the unit-interval
//! feature vectors consumed by the models. It is immutable after construction
//! and safe to share across workers.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Slack allowed when checking a raw rating against its scale bounds.
pub const SCALE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum SchemaError {
    #[error("rating {value} outside scale [{min}, {max}] for concept '{concept}'")]
    OutOfRange {
        concept: String,
        value: f64,
        min: f64,
        max: f64,
    },
    #[error("unknown class code {code} for concept '{concept}'")]
    UnknownCode { concept: String, code: i64 },
}

/// An attribute rated on an integer severity scale (consensus means may be
/// fractional).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrdinalConceptDef {
    pub name: String,
    pub scale_min: i64,
    pub scale_max: i64,
    pub low_label: String,
    pub high_label: String,
}

impl OrdinalConceptDef {
    fn new(name: &str, low_label: &str, high_label: &str) -> Self {
        OrdinalConceptDef {
            name: name.to_string(),
            scale_min: 1,
            scale_max: 5,
            low_label: low_label.to_string(),
            high_label: high_label.to_string(),
        }
    }

    /// Maps a raw rating onto [0, 1]. Accepts fractional values (rater means).
    pub fn normalize(&self, raw: f64) -> Result<f64, SchemaError> {
        let (min, max) = (self.scale_min as f64, self.scale_max as f64);
        if raw < min - SCALE_TOLERANCE || raw > max + SCALE_TOLERANCE {
            return Err(SchemaError::OutOfRange {
                concept: self.name.clone(),
                value: raw,
                min,
                max,
            });
        }
        Ok(((raw - min) / (max - min)).clamp(0.0, 1.0))
    }

    /// Inverse of [`normalize`](Self::normalize): unit value back to the raw scale.
    pub fn denormalize(&self, unit: f64) -> f64 {
        let (min, max) = (self.scale_min as f64, self.scale_max as f64);
        min + unit * (max - min)
    }
}

/// An attribute taking one of a fixed set of classes, stored in source
/// annotations as integer codes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalConceptDef {
    pub name: String,
    pub classes: Vec<String>,
    /// Integer code of each class as it appears in annotation files;
    /// parallel to `classes`.
    pub class_codes: Vec<i64>,
}

impl CategoricalConceptDef {
    fn new(name: &str, classes: &[&str], class_codes: &[i64]) -> Self {
        assert_eq!(classes.len(), class_codes.len());
        CategoricalConceptDef {
            name: name.to_string(),
            classes: classes.iter().map(|s| s.to_string()).collect(),
            class_codes: class_codes.to_vec(),
        }
    }

    pub fn class_count(&self) -> usize {
        self.classes.len()
    }

    /// Index of the class carrying `code`.
    pub fn class_index(&self, code: i64) -> Result<usize, SchemaError> {
        self.class_codes
            .iter()
            .position(|&c| c == code)
            .ok_or_else(|| SchemaError::UnknownCode {
                concept: self.name.clone(),
                code,
            })
    }

    /// One-hot encoding of a class code.
    pub fn encode(&self, code: i64) -> Result<Vec<f64>, SchemaError> {
        let idx = self.class_index(code)?;
        let mut onehot = vec![0.0; self.classes.len()];
        onehot[idx] = 1.0;
        Ok(onehot)
    }
}

/// The full concept vocabulary: six ordinal attributes, two categorical
/// attributes, and the ordinal malignancy target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptSchema {
    pub ordinals: Vec<OrdinalConceptDef>,
    pub categoricals: Vec<CategoricalConceptDef>,
    pub target: OrdinalConceptDef,
}

impl ConceptSchema {
    /// Length of a normalized feature vector: one slot per ordinal concept
    /// plus one one-hot slot per categorical class.
    pub fn input_dim(&self) -> usize {
        self.ordinals.len()
            + self
                .categoricals
                .iter()
                .map(|c| c.class_count())
                .sum::<usize>()
    }

    pub fn ordinal(&self, name: &str) -> Option<&OrdinalConceptDef> {
        self.ordinals.iter().find(|c| c.name == name)
    }

    pub fn categorical(&self, name: &str) -> Option<&CategoricalConceptDef> {
        self.categoricals.iter().find(|c| c.name == name)
    }

    /// Concept names in canonical order: ordinals, then categoricals.
    pub fn concept_names(&self) -> Vec<&str> {
        self.ordinals
            .iter()
            .map(|c| c.name.as_str())
            .chain(self.categoricals.iter().map(|c| c.name.as_str()))
            .collect()
    }

    /// Hex SHA-256 of the canonical JSON serialization; used to pin model
    /// checkpoints to the schema they were trained under.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_string(self).expect("schema serializes");
        let mut hasher = Sha256::new();
        hasher.update(json.as_bytes());
        let out = hasher.finalize();
        out.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// The standard nodule attribute vocabulary: six 1-5 ordinal concepts, the
/// 1-5 malignancy target, and the internal-structure / calcification
/// categories with their source-annotation integer codes.
pub fn default_schema() -> ConceptSchema {
    ConceptSchema {
        ordinals: vec![
            OrdinalConceptDef::new("subtlety", "Extremely Subtle", "Obvious"),
            OrdinalConceptDef::new("sphericity", "Linear", "Round"),
            OrdinalConceptDef::new("margin", "Poorly Defined", "Sharp"),
            OrdinalConceptDef::new("lobulation", "No Lobulation", "Marked"),
            OrdinalConceptDef::new("spiculation", "No Spiculation", "Marked"),
            OrdinalConceptDef::new("texture", "GGO", "Solid"),
        ],
        categoricals: vec![
            CategoricalConceptDef::new(
                "internal_structure",
                &["Soft Tissue", "Fluid", "Fat", "Air"],
                &[1, 2, 3, 4],
            ),
            CategoricalConceptDef::new(
                "calcification",
                &[
                    "Popcorn",
                    "Laminated",
                    "Solid",
                    "Non-central",
                    "Central",
                    "Absent",
                ],
                &[1, 2, 3, 4, 5, 6],
            ),
        ],
        target: OrdinalConceptDef::new("malignancy", "Unlikely", "Suspicious"),
    }
}
