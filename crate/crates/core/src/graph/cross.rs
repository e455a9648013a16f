use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{FivesError, Result};
use crate::graph::adjacency::{AdjMode, AdjTensor};

/// Explicit cross `f_anchor x f_partners[0] x ...`; partner `l - 1` was
/// selected by slice `l` of the adjacency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossFeature {
    pub anchor: usize,
    pub partners: Vec<usize>,
    pub order: usize,
    pub score: f64,
}

impl CrossFeature {
    pub fn new(anchor: usize, partners: Vec<usize>, score: f64) -> Self {
        let order = partners.len() + 1;
        Self {
            anchor,
            partners,
            order,
            score,
        }
    }

    /// Member feature indices, anchor first.
    pub fn members(&self) -> Vec<usize> {
        std::iter::once(self.anchor).chain(self.partners.iter().copied()).collect()
    }

    /// Sorted members; two crosses with equal keys are the same Cartesian
    /// product.
    pub fn key(&self) -> Vec<usize> {
        let mut k = self.members();
        k.sort_unstable();
        k
    }

    pub fn has_distinct_members(&self) -> bool {
        let k = self.key();
        k.windows(2).all(|w| w[0] != w[1])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrossOptions {
    /// Highest order emitted; clamped to `K`.
    pub max_order: usize,
    /// Merge crosses over the same member set, keeping the best score.
    pub dedupe: bool,
    /// Maximum number of crosses before dedupe.
    pub cap: usize,
}

impl Default for CrossOptions {
    fn default() -> Self {
        Self {
            max_order: usize::MAX,
            dedupe: true,
            cap: 100_000,
        }
    }
}

/// Enumerates anchor-rooted paths `A^(l)[anchor][c_l] = 1`, `l = 1..k-1`,
/// for every order `2..=min(max_order, K)`.
///
/// Paths revisiting a feature are dropped with their extensions. Scores are
/// products of the matching `soft` entries (1.0 when `soft` is `None`).
pub fn derive_cross_features(
    binary: &AdjTensor,
    soft: Option<&AdjTensor>,
    opts: &CrossOptions,
) -> Result<Vec<CrossFeature>> {
    if binary.mode() != AdjMode::Binarized {
        return Err(FivesError::Contract("cross derivation needs a binarized adjacency".into()));
    }
    if let Some(s) = soft {
        if s.tensor().shape() != binary.tensor().shape() {
            return Err(FivesError::Dimension {
                left: s.tensor().shape().to_vec(),
                right: binary.tensor().shape().to_vec(),
                context: "soft vs binarized adjacency",
            });
        }
    }
    let (k, m) = (binary.k(), binary.m());
    let max_order = opts.max_order.min(k);
    let depth = max_order.saturating_sub(1);

    // Active partners per (layer, anchor).
    let active: Vec<Vec<Vec<usize>>> = (0..k)
        .map(|l| {
            (0..m)
                .map(|i| (0..m).filter(|&j| binary.entry(l, i, j) == 1.0).collect())
                .collect()
        })
        .collect();

    let mut out = Vec::new();
    for anchor in 0..m {
        let mut stack: Vec<(Vec<usize>, f64)> = vec![(Vec::new(), 1.0)];
        while let Some((path, score)) = stack.pop() {
            let layer = path.len() + 1;
            if layer <= depth {
                // Reverse so pops visit partners in ascending order.
                for &c in active[layer][anchor].iter().rev() {
                    if c == anchor || path.contains(&c) {
                        continue;
                    }
                    let s = score * soft.map_or(1.0, |a| a.entry(layer, anchor, c));
                    let mut next = path.clone();
                    next.push(c);
                    stack.push((next, s));
                }
            }
            if !path.is_empty() {
                out.push(CrossFeature::new(anchor, path, score));
                if out.len() > opts.cap {
                    return Err(cap_error(opts.cap, &active, depth));
                }
            }
        }
    }
    sort_crosses(&mut out);
    if opts.dedupe {
        out = dedupe_crosses(out);
    }
    Ok(out)
}

fn cap_error(cap: usize, active: &[Vec<Vec<usize>>], depth: usize) -> FivesError {
    let fan_out: Vec<usize> = (1..=depth)
        .map(|l| active[l].iter().map(Vec::len).max().unwrap_or(0))
        .collect();
    FivesError::Cap(format!("more than {cap} crosses; max row fan-out per layer {fan_out:?}"))
}

fn sort_crosses(v: &mut [CrossFeature]) {
    v.sort_by(|a, b| {
        (a.order, a.anchor, &a.partners).cmp(&(b.order, b.anchor, &b.partners))
    });
}

/// Keeps one cross per member set: the highest score, first on ties.
pub fn dedupe_crosses(crosses: Vec<CrossFeature>) -> Vec<CrossFeature> {
    let mut best: BTreeMap<Vec<usize>, CrossFeature> = BTreeMap::new();
    for c in crosses {
        match best.get(&c.key()) {
            Some(b) if b.score >= c.score => {}
            _ => {
                best.insert(c.key(), c);
            }
        }
    }
    let mut out: Vec<CrossFeature> = best.into_values().collect();
    sort_crosses(&mut out);
    out
}

#[derive(Debug, Serialize, Deserialize)]
struct CrossRow {
    order: usize,
    anchor_name: String,
    partner_names: String,
    score: f64,
}

/// CSV with columns `order, anchor_name, partner_names, score`; partner
/// names are `|`-joined.
pub fn write_crosses_csv<W: std::io::Write>(writer: W, crosses: &[CrossFeature], names: &[&str]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    w.write_record(["order", "anchor_name", "partner_names", "score"])?;
    for c in crosses {
        let name = |i: usize| {
            names
                .get(i)
                .copied()
                .ok_or_else(|| FivesError::Lookup(format!("feature index {i} has no name")))
        };
        let partners = c.partners.iter().map(|&p| name(p)).collect::<Result<Vec<_>>>()?;
        w.serialize(CrossRow {
            order: c.order,
            anchor_name: name(c.anchor)?.to_string(),
            partner_names: partners.join("|"),
            score: c.score,
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_crosses_csv<R: std::io::Read>(reader: R, names: &[&str]) -> Result<Vec<CrossFeature>> {
    let index = |n: &str| {
        names
            .iter()
            .position(|x| *x == n)
            .ok_or_else(|| FivesError::Lookup(format!("unknown feature {n:?} in cross list")))
    };
    let mut out = Vec::new();
    for row in csv::Reader::from_reader(reader).deserialize() {
        let row: CrossRow = row?;
        let partners = row
            .partner_names
            .split('|')
            .filter(|s| !s.is_empty())
            .map(index)
            .collect::<Result<Vec<_>>>()?;
        let c = CrossFeature::new(index(&row.anchor_name)?, partners, row.score);
        if c.order != row.order {
            return Err(FivesError::Format(format!(
                "cross {:?} declares order {} but has {} members",
                row.anchor_name, row.order, c.order
            )));
        }
        out.push(c);
    }
    Ok(out)
}

pub fn save_crosses_csv(path: &Path, crosses: &[CrossFeature], names: &[&str]) -> Result<()> {
    write_crosses_csv(std::fs::File::create(path)?, crosses, names)
}

pub fn load_crosses_csv(path: &Path, names: &[&str]) -> Result<Vec<CrossFeature>> {
    read_crosses_csv(std::fs::File::open(path)?, names)
}
