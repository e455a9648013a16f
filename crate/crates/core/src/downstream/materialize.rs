use std::collections::HashMap;

use crate::data::{EncodedColumn, EncodedTable};
use crate::error::{FivesError, Result};
use crate::graph::CrossFeature;

/// Default limit on the cardinality of one materialized cross column.
pub const DEFAULT_CROSS_CARDINALITY_CAP: usize = 1_000_000;

/// Column name of a cross: member names joined by `&`.
pub fn cross_name(cross: &CrossFeature, names: &[&str]) -> String {
    cross.key().iter().map(|&i| names[i]).collect::<Vec<_>>().join("&")
}

fn check_cross(cross: &CrossFeature, m: usize) -> Result<()> {
    if !cross.has_distinct_members() {
        return Err(FivesError::Contract(format!(
            "cross {:?} repeats a feature; members must be distinct",
            cross.members()
        )));
    }
    if let Some(&bad) = cross.members().iter().find(|&&i| i >= m) {
        return Err(FivesError::Lookup(format!("cross member {bad} out of range for {m} features")));
    }
    Ok(())
}

/// Appends one column per cross to every table. Codes come from a single
/// dictionary of observed member tuples built over the tables in order, so
/// the same tuple has the same code everywhere and earlier tables get the
/// lower codes. Original columns and row order are unchanged; crosses with
/// an already materialized member set are skipped.
pub fn materialize_crosses_many(
    tables: &[&EncodedTable],
    crosses: &[CrossFeature],
    cap: usize,
) -> Result<Vec<EncodedTable>> {
    let Some(first) = tables.first() else {
        return Ok(Vec::new());
    };
    if let Some(t) = tables.iter().find(|t| !first.shares_vocab_with(t)) {
        return Err(FivesError::Contract(format!(
            "tables to augment do not share vocabularies ({} vs {} columns)",
            first.n_features(),
            t.n_features()
        )));
    }
    let m = first.n_features();
    let names = first.names();
    let mut out: Vec<EncodedTable> = tables.iter().map(|t| (*t).clone()).collect();
    let mut seen = std::collections::HashSet::new();
    for cross in crosses {
        check_cross(cross, m)?;
        let key = cross.key();
        if !seen.insert(key.clone()) {
            continue;
        }
        let mut dict: HashMap<Vec<u32>, u32> = HashMap::new();
        let mut vocab = Vec::new();
        let mut per_table = Vec::with_capacity(tables.len());
        for t in tables {
            let mut codes = Vec::with_capacity(t.n_rows());
            for r in 0..t.n_rows() {
                let tuple: Vec<u32> = key.iter().map(|&c| t.code(r, c)).collect();
                let next = dict.len() as u32;
                let code = *dict.entry(tuple).or_insert_with_key(|tuple| {
                    vocab.push(
                        key.iter()
                            .zip(tuple)
                            .map(|(&c, &v)| first.columns[c].vocab[v as usize].as_str())
                            .collect::<Vec<_>>()
                            .join("|"),
                    );
                    next
                });
                codes.push(code);
            }
            if dict.len() > cap {
                return Err(FivesError::Cap(format!(
                    "cross {} has more than {cap} observed values",
                    cross_name(cross, &names)
                )));
            }
            per_table.push(codes);
        }
        let name = cross_name(cross, &names);
        for (t, codes) in out.iter_mut().zip(per_table) {
            t.columns.push(EncodedColumn {
                name: name.clone(),
                vocab: vocab.clone(),
                codes,
            });
        }
    }
    for t in &out {
        t.validate()?;
    }
    Ok(out)
}

/// Single-table form of [`materialize_crosses_many`].
pub fn materialize_crosses(table: &EncodedTable, crosses: &[CrossFeature], cap: usize) -> Result<EncodedTable> {
    Ok(materialize_crosses_many(&[table], crosses, cap)?.remove(0))
}
