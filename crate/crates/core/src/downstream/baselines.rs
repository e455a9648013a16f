use std::collections::{BTreeSet, HashMap};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::EncodedTable;
use crate::downstream::metrics::{auc, spearman};
use crate::error::{FivesError, Result};
use crate::graph::CrossFeature;

/// Plug-in estimate (natural log) of the mutual information between a
/// discrete variable and binary labels.
pub fn plugin_mutual_information<K: std::hash::Hash + Eq>(values: &[K], labels: &[u8]) -> f64 {
    let n = values.len() as f64;
    if values.is_empty() {
        return 0.0;
    }
    let mut cells: HashMap<(&K, u8), usize> = HashMap::new();
    let mut marg: HashMap<&K, usize> = HashMap::new();
    for (v, &y) in values.iter().zip(labels) {
        *cells.entry((v, y)).or_default() += 1;
        *marg.entry(v).or_default() += 1;
    }
    let pos = labels.iter().filter(|&&y| y == 1).count() as f64;
    let py = [(n - pos) / n, pos / n];
    let mut mi = 0.0;
    for ((v, y), &c) in &cells {
        let pxy = c as f64 / n;
        let px = marg[v] as f64 / n;
        mi += pxy * (pxy / (px * py[*y as usize])).ln();
    }
    mi.max(0.0)
}

/// Scores every unordered feature pair by the plug-in mutual information
/// between the pair's joint value and the label; returns the `top_n` best,
/// ties broken by `(i, j)`.
pub fn cmi_rank_pairs(table: &EncodedTable, top_n: usize) -> Result<Vec<CrossFeature>> {
    if top_n == 0 {
        return Err(FivesError::Config("top_n must be at least 1".into()));
    }
    let m = table.n_features();
    let mut scored = Vec::with_capacity(m * m.saturating_sub(1) / 2);
    for i in 0..m {
        for j in i + 1..m {
            let pairs: Vec<(u32, u32)> = table.columns[i]
                .codes
                .iter()
                .zip(&table.columns[j].codes)
                .map(|(&a, &b)| (a, b))
                .collect();
            scored.push(CrossFeature::new(i, vec![j], plugin_mutual_information(&pairs, &table.labels)));
        }
    }
    scored.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.key().cmp(&b.key())));
    scored.truncate(top_n);
    Ok(scored)
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Distinct feature subsets of size `2..=max_order` drawn uniformly from
/// all such subsets, as crosses anchored at their smallest member.
pub fn random_cross_baseline(m: usize, count: usize, max_order: usize, seed: u64) -> Result<Vec<CrossFeature>> {
    if count == 0 || max_order < 2 {
        return Err(FivesError::Config(format!(
            "random crosses need count >= 1 and max_order >= 2, got {count} and {max_order}"
        )));
    }
    let max_order = max_order.min(m);
    if max_order < 2 {
        return Err(FivesError::Config(format!("cannot cross features of a {m}-column table")));
    }
    let sizes: Vec<usize> = (2..=max_order).collect();
    let weights: Vec<f64> = sizes.iter().map(|&k| binomial(m, k)).collect();
    let total: f64 = weights.iter().sum();
    let count = if (count as f64) > total {
        log::warn!("requested {count} random crosses but only {total} subsets exist; using all of them");
        total as usize
    } else {
        count
    };
    let dist = rand::distr::weighted::WeightedIndex::new(&weights)
        .map_err(|e| FivesError::Config(format!("subset sizes: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let k = sizes[rng.sample(&dist)];
        let mut members = sample(&mut rng, m, k).into_vec();
        members.sort_unstable();
        if seen.insert(members.clone()) {
            out.push(CrossFeature::new(members[0], members[1..].to_vec(), 0.0));
        }
    }
    Ok(out)
}

/// AUC of predicting the label from one cross alone: each row is scored
/// by the Laplace-smoothed positive rate `(pos + 1) / (n + 2)` of its
/// member tuple in `table`.
pub fn per_feature_auc(cross: &CrossFeature, table: &EncodedTable) -> Result<f64> {
    let key = cross.key();
    if let Some(&bad) = key.iter().find(|&&i| i >= table.n_features()) {
        return Err(FivesError::Lookup(format!("cross member {bad} out of range")));
    }
    let tuples: Vec<Vec<u32>> = (0..table.n_rows())
        .map(|r| key.iter().map(|&c| table.code(r, c)).collect())
        .collect();
    let mut counts: HashMap<&[u32], (usize, usize)> = HashMap::new();
    for (t, &y) in tuples.iter().zip(&table.labels) {
        let e = counts.entry(t.as_slice()).or_default();
        e.0 += usize::from(y);
        e.1 += 1;
    }
    let scores: Vec<f64> = tuples
        .iter()
        .map(|t| {
            let (pos, n) = counts[t.as_slice()];
            (pos as f64 + 1.0) / (n as f64 + 2.0)
        })
        .collect();
    auc(&scores, &table.labels)
}

/// Spearman correlation between cross scores and their standalone AUCs.
pub fn score_auc_correlation(crosses: &[CrossFeature], table: &EncodedTable) -> Result<f64> {
    let scores: Vec<f64> = crosses.iter().map(|c| c.score).collect();
    let aucs = crosses.iter().map(|c| per_feature_auc(c, table)).collect::<Result<Vec<_>>>()?;
    spearman(&scores, &aucs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossSummary {
    pub members: Vec<String>,
    pub score: f64,
    pub solo_auc: f64,
}

/// Result of one downstream pipeline run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub pipeline: String,
    pub auc: f64,
    pub n_crosses: usize,
    pub per_cross: Vec<CrossSummary>,
}

impl EvaluationReport {
    /// Standalone AUCs are measured on `table` (the original columns).
    pub fn new(pipeline: impl Into<String>, auc: f64, crosses: &[CrossFeature], table: &EncodedTable) -> Result<Self> {
        let names = table.names();
        let per_cross = crosses
            .iter()
            .map(|c| {
                Ok(CrossSummary {
                    members: c.key().iter().map(|&i| names[i].to_string()).collect(),
                    score: c.score,
                    solo_auc: per_feature_auc(c, table)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            pipeline: pipeline.into(),
            auc,
            n_crosses: crosses.len(),
            per_cross,
        })
    }
}
