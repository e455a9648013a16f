use std::io::Read;
use std::path::Path;

use crate::data::schema::{ColumnKind, ColumnSpec, Schema};
use crate::error::{FivesError, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum RawValues {
    Categorical(Vec<String>),
    Numeric(Vec<f64>),
}

impl RawValues {
    pub fn len(&self) -> usize {
        match self {
            RawValues::Categorical(v) => v.len(),
            RawValues::Numeric(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawColumn {
    pub spec: ColumnSpec,
    pub values: RawValues,
}

/// Ingested CSV contents before discretization and encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub columns: Vec<RawColumn>,
    pub labels: Vec<u8>,
}

impl RawTable {
    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    /// Appends the rows of `other` (same schema) after the rows of `self`.
    pub fn concat(mut self, other: RawTable) -> Result<RawTable> {
        if self.columns.len() != other.columns.len() {
            return Err(FivesError::Schema("cannot concatenate tables with different column counts".into()));
        }
        for (a, b) in self.columns.iter_mut().zip(other.columns) {
            if a.spec != b.spec {
                return Err(FivesError::Schema(format!(
                    "cannot concatenate column {:?} with {:?}",
                    a.spec.name, b.spec.name
                )));
            }
            match (&mut a.values, b.values) {
                (RawValues::Categorical(x), RawValues::Categorical(y)) => x.extend(y),
                (RawValues::Numeric(x), RawValues::Numeric(y)) => x.extend(y),
                _ => unreachable!("equal specs imply equal kinds"),
            }
        }
        self.labels.extend(other.labels);
        Ok(self)
    }
}

pub fn load_csv(path: &Path, schema: &Schema) -> Result<RawTable> {
    let file = std::fs::File::open(path)?;
    read_csv(file, schema)
}

/// Reads an RFC-4180 CSV with a header row. Columns not named in the schema
/// are ignored; cells are whitespace-trimmed.
pub fn read_csv<R: Read>(reader: R, schema: &Schema) -> Result<RawTable> {
    schema.validate()?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| FivesError::Schema(format!("column {name:?} missing from CSV header")))
    };
    let positions: Vec<usize> = schema
        .columns
        .iter()
        .map(|c| find(&c.name))
        .collect::<Result<_>>()?;
    let label_pos = find(&schema.label_column)?;

    let mut values: Vec<RawValues> = schema
        .columns
        .iter()
        .map(|c| match c.kind {
            ColumnKind::Categorical => RawValues::Categorical(Vec::new()),
            ColumnKind::Numeric => RawValues::Numeric(Vec::new()),
        })
        .collect();
    let mut labels = Vec::new();

    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let label = record.get(label_pos).unwrap_or("");
        labels.push(match label {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(FivesError::Label {
                    line,
                    value: other.to_string(),
                })
            }
        });
        for ((spec, &pos), col) in schema.columns.iter().zip(&positions).zip(values.iter_mut()) {
            let cell = record.get(pos).unwrap_or("");
            match col {
                RawValues::Categorical(v) => v.push(cell.to_string()),
                RawValues::Numeric(v) => {
                    let x = cell.parse::<f64>().map_err(|_| FivesError::Parse {
                        line,
                        column: spec.name.clone(),
                        value: cell.to_string(),
                    })?;
                    v.push(x);
                }
            }
        }
    }
    if labels.is_empty() {
        return Err(FivesError::EmptyTable);
    }
    Ok(RawTable {
        columns: schema
            .columns
            .iter()
            .cloned()
            .zip(values)
            .map(|(spec, values)| RawColumn { spec, values })
            .collect(),
        labels,
    })
}
