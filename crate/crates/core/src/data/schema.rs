use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{FivesError, Result};

/// Bucket counts allowed for numeric columns.
pub const GRANULARITIES: [u32; 3] = [10, 100, 1000];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Categorical,
    Numeric,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub granularity: Option<u32>,
}

impl ColumnSpec {
    pub fn categorical(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: ColumnKind::Categorical,
            granularity: None,
        }
    }

    pub fn numeric(name: impl Into<String>, granularity: u32) -> Self {
        Self {
            name: name.into(),
            kind: ColumnKind::Numeric,
            granularity: Some(granularity),
        }
    }
}

/// Column layout of an input CSV: feature columns plus the label column.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub columns: Vec<ColumnSpec>,
    pub label_column: String,
}

impl Schema {
    pub fn new(columns: Vec<ColumnSpec>, label_column: impl Into<String>) -> Result<Self> {
        let s = Self {
            columns,
            label_column: label_column.into(),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.columns.is_empty() {
            return Err(FivesError::Schema("schema declares no feature columns".into()));
        }
        let mut seen = HashSet::new();
        for c in &self.columns {
            if !seen.insert(c.name.as_str()) {
                return Err(FivesError::Schema(format!("duplicate column name {:?}", c.name)));
            }
            match (c.kind, c.granularity) {
                (ColumnKind::Numeric, Some(g)) if GRANULARITIES.contains(&g) => {}
                (ColumnKind::Numeric, Some(g)) => {
                    return Err(FivesError::Schema(format!(
                        "column {:?}: granularity {g} not in {GRANULARITIES:?}",
                        c.name
                    )))
                }
                (ColumnKind::Numeric, None) => {
                    return Err(FivesError::Schema(format!(
                        "numeric column {:?} needs a granularity",
                        c.name
                    )))
                }
                (ColumnKind::Categorical, Some(_)) => {
                    return Err(FivesError::Schema(format!(
                        "categorical column {:?} cannot have a granularity",
                        c.name
                    )))
                }
                (ColumnKind::Categorical, None) => {}
            }
        }
        if seen.contains(self.label_column.as_str()) {
            return Err(FivesError::Schema(format!(
                "label column {:?} is also declared as a feature",
                self.label_column
            )));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let s: Schema = serde_json::from_str(text)
            .map_err(|e| FivesError::Schema(format!("invalid schema JSON: {e}")))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| FivesError::Schema(format!("cannot read schema {}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}
