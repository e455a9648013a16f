use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::table::EncodedTable;

/// A materialized group of rows: codes are `len() x m`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub codes: Vec<u32>,
    pub labels: Vec<f64>,
    pub n_features: usize,
}

impl Batch {
    pub fn from_rows(table: &EncodedTable, indices: Vec<usize>) -> Self {
        let m = table.n_features();
        let mut codes = Vec::with_capacity(indices.len() * m);
        for &r in &indices {
            for c in &table.columns {
                codes.push(c.codes[r]);
            }
        }
        let labels = indices.iter().map(|&r| f64::from(table.labels[r])).collect();
        Self {
            indices,
            codes,
            labels,
            n_features: m,
        }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn row(&self, i: usize) -> &[u32] {
        &self.codes[i * self.n_features..(i + 1) * self.n_features]
    }
}

/// One epoch of batches; every row appears exactly once and the final batch
/// may be short.
pub fn iter_batches(
    table: &EncodedTable,
    batch_size: usize,
    shuffle: bool,
    seed: u64,
) -> impl Iterator<Item = Batch> + '_ {
    let batch_size = batch_size.max(1);
    let mut order: Vec<usize> = (0..table.n_rows()).collect();
    if shuffle {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    let chunks: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    chunks.into_iter().map(move |idx| Batch::from_rows(table, idx))
}

pub fn n_batches(n_rows: usize, batch_size: usize) -> usize {
    n_rows.div_ceil(batch_size.max(1))
}
