//! Equal-width discretization, rare-value merging and dense encoding.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::data::raw::{RawTable, RawValues};
use crate::data::schema::GRANULARITIES;
use crate::data::table::{EncodedColumn, EncodedTable, RARE};
use crate::error::{FivesError, Result};

/// Bucket ids for `values` under `buckets` equal-width bins spanning
/// `[min, max]`. The maximum falls into the last bucket; a constant column
/// maps to bucket 0.
pub fn discretize_numeric(values: &[f64], buckets: u32) -> Result<Vec<u32>> {
    if buckets < 2 {
        return Err(FivesError::Config(format!("bucket count {buckets} < 2")));
    }
    if values.is_empty() {
        return Err(FivesError::EmptyTable);
    }
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(FivesError::NumericDomain(format!("cannot discretize {v}")));
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == min {
        return Ok(vec![0; values.len()]);
    }
    let width = (max - min) / buckets as f64;
    let last = buckets - 1;
    Ok(values
        .iter()
        .map(|&v| {
            let b = ((v - min) / width).floor();
            (b.max(0.0) as u32).min(last)
        })
        .collect())
}

/// Replaces every value occurring fewer than `min_freq` times with [`RARE`].
pub fn merge_rare_values(column: &[String], min_freq: usize) -> Vec<String> {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for v in column {
        *counts.entry(v.as_str()).or_default() += 1;
    }
    column
        .iter()
        .map(|v| {
            if counts[v.as_str()] < min_freq {
                RARE.to_string()
            } else {
                v.clone()
            }
        })
        .collect()
}

/// Dense codes in first-appearance order.
pub fn encode_column(name: impl Into<String>, values: &[String]) -> EncodedColumn {
    let mut index: HashMap<&str, u32> = HashMap::new();
    let mut vocab = Vec::new();
    let codes = values
        .iter()
        .map(|v| {
            *index.entry(v.as_str()).or_insert_with(|| {
                vocab.push(v.clone());
                (vocab.len() - 1) as u32
            })
        })
        .collect();
    EncodedColumn {
        name: name.into(),
        vocab,
        codes,
    }
}

/// Categorical-valued columns ready for encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalTable {
    pub columns: Vec<(String, Vec<String>)>,
    pub labels: Vec<u8>,
}

pub fn encode_categorical(table: &CategoricalTable) -> Result<EncodedTable> {
    EncodedTable::new(
        table
            .columns
            .iter()
            .map(|(name, values)| encode_column(name.clone(), values))
            .collect(),
        table.labels.clone(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreprocessOptions {
    /// Values seen fewer times than this become [`RARE`].
    pub min_freq: usize,
    /// Expand each numeric column into one column per granularity in
    /// {10, 100, 1000}, named `<column>@<buckets>`.
    pub multi_granularity: bool,
}

impl Default for PreprocessOptions {
    fn default() -> Self {
        Self {
            min_freq: 5,
            multi_granularity: false,
        }
    }
}

/// Discretizes numeric columns, merges rare values, and encodes.
///
/// Bucket edges come from all rows of `raw`, so tables later split from
/// the result share one vocabulary.
pub fn preprocess(raw: &RawTable, opts: &PreprocessOptions) -> Result<EncodedTable> {
    let mut columns = Vec::new();
    for col in &raw.columns {
        match &col.values {
            RawValues::Categorical(v) => columns.push((col.spec.name.clone(), v.clone())),
            RawValues::Numeric(v) => {
                let grans: Vec<u32> = if opts.multi_granularity {
                    GRANULARITIES.to_vec()
                } else {
                    vec![col.spec.granularity.ok_or_else(|| {
                        FivesError::Schema(format!("numeric column {:?} has no granularity", col.spec.name))
                    })?]
                };
                for g in grans {
                    let ids = discretize_numeric(v, g)?;
                    let name = if opts.multi_granularity {
                        format!("{}@{g}", col.spec.name)
                    } else {
                        col.spec.name.clone()
                    };
                    columns.push((name, ids.iter().map(u32::to_string).collect()));
                }
            }
        }
    }
    let min_freq = opts.min_freq.max(1);
    let merged = CategoricalTable {
        columns: columns
            .into_iter()
            .map(|(n, v)| {
                let m = merge_rare_values(&v, min_freq);
                (n, m)
            })
            .collect(),
        labels: raw.labels.clone(),
    };
    encode_categorical(&merged)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::raw::RawColumn;
    use crate::data::schema::ColumnSpec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn strings(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn equal_width_buckets() {
        assert_eq!(discretize_numeric(&[0.0, 5.0, 10.0], 10).unwrap(), vec![0, 5, 9]);
        assert_eq!(discretize_numeric(&[7.0, 7.0, 7.0], 10).unwrap(), vec![0, 0, 0]);
        assert!(discretize_numeric(&[1.0, f64::NAN], 10).is_err());
        assert!(discretize_numeric(&[1.0, f64::INFINITY], 10).is_err());
        assert!(discretize_numeric(&[1.0, 2.0], 1).is_err());
        assert!(discretize_numeric(&[], 10).is_err());
    }

    #[test]
    fn uniform_samples_fill_buckets_evenly() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut values: Vec<f64> = (0..1000).map(|_| rng.random::<f64>()).collect();
        // Pin the range to [0, 1] so edges line up with the histogram oracle.
        values[0] = 0.0;
        values[1] = 1.0 - 1e-12;
        let ids = discretize_numeric(&values, 10).unwrap();
        let mut oracle = [0usize; 10];
        for v in &values {
            oracle[((v * 10.0).floor() as usize).min(9)] += 1;
        }
        let mut got = [0usize; 10];
        for &b in &ids {
            got[b as usize] += 1;
        }
        for (g, o) in got.iter().zip(oracle) {
            assert!((60..=140).contains(g), "{got:?}");
            assert!(g.abs_diff(o) <= 1, "{got:?} vs {oracle:?}");
        }
    }

    #[test]
    fn rare_values_merge() {
        let mut col = vec!["a"; 6];
        col.extend(["b", "b", "c"]);
        let out = merge_rare_values(&strings(&col), 5);
        let mut expect = vec!["a"; 6];
        expect.extend([RARE; 3]);
        assert_eq!(out, strings(&expect));

        let frequent = strings(&["x", "x", "y", "y"]);
        assert_eq!(merge_rare_values(&frequent, 2), frequent);
        assert_eq!(
            merge_rare_values(&strings(&["p", "q", "r"]), 2),
            strings(&[RARE, RARE, RARE])
        );
    }

    #[test]
    fn first_appearance_codes() {
        let c = encode_column("c", &strings(&["x", "y", "x"]));
        assert_eq!(c.codes, vec![0, 1, 0]);
        assert_eq!(c.cardinality(), 2);
        let twin = encode_column("d", &strings(&["x", "y", "x"]));
        assert_eq!(c.codes, twin.codes);
        let raw = strings(&["q", "", "q", "z", ""]);
        let e = encode_column("e", &raw);
        for (code, v) in e.codes.iter().zip(&raw) {
            assert_eq!(e.decode(*code), Some(v.as_str()));
        }
    }

    fn raw_table() -> RawTable {
        RawTable {
            columns: vec![
                RawColumn {
                    spec: ColumnSpec::numeric("age", 10),
                    values: RawValues::Numeric(vec![0.0, 10.0, 5.0, 5.0, 2.0, 9.0]),
                },
                RawColumn {
                    spec: ColumnSpec::categorical("city"),
                    values: RawValues::Categorical(strings(&["a", "a", "b", "a", "c", "a"])),
                },
            ],
            labels: vec![0, 1, 0, 1, 1, 0],
        }
    }

    #[test]
    fn preprocess_pipeline() {
        let t = preprocess(&raw_table(), &PreprocessOptions { min_freq: 2, multi_granularity: false }).unwrap();
        assert_eq!(t.n_rows(), 6);
        assert_eq!(t.names(), vec!["age", "city"]);
        // age buckets 0,9,5,5,2,9 -> 0 and 2 are rare.
        assert_eq!(t.columns[0].vocab, strings(&[RARE, "9", "5"]));
        assert_eq!(t.columns[0].codes, vec![0, 1, 2, 2, 0, 1]);
        assert_eq!(t.columns[1].vocab, strings(&["a", RARE]));
        assert_eq!(t.labels, vec![0, 1, 0, 1, 1, 0]);
        for c in &t.columns {
            assert_eq!(*c.codes.iter().max().unwrap() as usize + 1, c.cardinality());
        }
        let again = preprocess(&raw_table(), &PreprocessOptions { min_freq: 2, multi_granularity: false }).unwrap();
        assert_eq!(t, again);
    }

    #[test]
    fn multi_granularity_expands_numeric_columns() {
        let t = preprocess(&raw_table(), &PreprocessOptions { min_freq: 1, multi_granularity: true }).unwrap();
        assert_eq!(t.names(), vec!["age@10", "age@100", "age@1000", "city"]);
    }
}
