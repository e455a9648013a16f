use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{FivesError, Result};

/// Shared identifier that replaces infrequent raw values.
pub const RARE: &str = "__RARE__";

pub const TABLE_FORMAT_VERSION: u32 = 1;

/// One integer-coded categorical column with its code -> raw value map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedColumn {
    pub name: String,
    /// `vocab[code]` is the raw value for `code`.
    pub vocab: Vec<String>,
    pub codes: Vec<u32>,
}

impl EncodedColumn {
    pub fn cardinality(&self) -> usize {
        self.vocab.len()
    }

    pub fn decode(&self, code: u32) -> Option<&str> {
        self.vocab.get(code as usize).map(String::as_str)
    }

    pub fn lookup(&self, raw: &str) -> Option<u32> {
        self.vocab.iter().position(|v| v == raw).map(|p| p as u32)
    }

    /// Code for `raw`, falling back to the RARE code for unseen values.
    pub fn lookup_or_rare(&self, raw: &str) -> Option<u32> {
        self.lookup(raw).or_else(|| self.lookup(RARE))
    }
}

/// Integer-encoded categorical features plus binary labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedTable {
    pub columns: Vec<EncodedColumn>,
    pub labels: Vec<u8>,
}

#[derive(Serialize, Deserialize)]
struct TableArtifact {
    format_version: u32,
    #[serde(flatten)]
    table: EncodedTable,
}

impl EncodedTable {
    pub fn new(columns: Vec<EncodedColumn>, labels: Vec<u8>) -> Result<Self> {
        let t = Self { columns, labels };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.labels.len();
        if let Some(l) = self.labels.iter().find(|&&l| l > 1) {
            return Err(FivesError::Contract(format!("label {l} is not binary")));
        }
        for c in &self.columns {
            if c.codes.len() != n {
                return Err(FivesError::Contract(format!(
                    "column {:?} has {} rows, labels have {n}",
                    c.name,
                    c.codes.len()
                )));
            }
            let card = c.cardinality();
            if let Some(code) = c.codes.iter().find(|&&x| x as usize >= card) {
                return Err(FivesError::Contract(format!(
                    "column {:?}: code {code} >= cardinality {card}",
                    c.name
                )));
            }
        }
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn n_features(&self) -> usize {
        self.columns.len()
    }

    pub fn cardinalities(&self) -> Vec<usize> {
        self.columns.iter().map(EncodedColumn::cardinality).collect()
    }

    pub fn names(&self) -> Vec<&str> {
        self.columns.iter().map(|c| c.name.as_str()).collect()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn code(&self, row: usize, col: usize) -> u32 {
        self.columns[col].codes[row]
    }

    /// Rows `indices` in the given order; vocabularies are shared.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        Self {
            columns: self
                .columns
                .iter()
                .map(|c| EncodedColumn {
                    name: c.name.clone(),
                    vocab: c.vocab.clone(),
                    codes: indices.iter().map(|&i| c.codes[i]).collect(),
                })
                .collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// True when both tables carry identical column names and vocabularies.
    pub fn shares_vocab_with(&self, other: &EncodedTable) -> bool {
        self.columns.len() == other.columns.len()
            && self
                .columns
                .iter()
                .zip(&other.columns)
                .all(|(a, b)| a.name == b.name && a.vocab == b.vocab)
    }

    pub fn positive_rate(&self) -> f64 {
        let pos = self.labels.iter().filter(|&&l| l == 1).count();
        pos as f64 / self.n_rows().max(1) as f64
    }

    pub fn to_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Out<'a> {
            format_version: u32,
            #[serde(flatten)]
            table: &'a EncodedTable,
        }
        Ok(serde_json::to_string(&Out {
            format_version: TABLE_FORMAT_VERSION,
            table: self,
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let art: TableArtifact = serde_json::from_str(text)?;
        if art.format_version != TABLE_FORMAT_VERSION {
            return Err(FivesError::Format(format!(
                "unsupported table format_version {}",
                art.format_version
            )));
        }
        art.table.validate()?;
        Ok(art.table)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Raw value -> code maps, one per column.
    pub fn reverse_vocab(&self) -> Vec<HashMap<&str, u32>> {
        self.columns
            .iter()
            .map(|c| {
                c.vocab
                    .iter()
                    .enumerate()
                    .map(|(i, v)| (v.as_str(), i as u32))
                    .collect()
            })
            .collect()
    }
}
