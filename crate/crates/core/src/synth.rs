//! Synthetic XOR data with optional independent distractor columns.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{EncodedColumn, EncodedTable};
use crate::error::{FivesError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XorOptions {
    pub n: usize,
    /// Probability of flipping each label.
    pub noise: f64,
    pub n_distractors: usize,
    pub seed: u64,
}

impl Default for XorOptions {
    fn default() -> Self {
        Self {
            n: 2000,
            noise: 0.05,
            n_distractors: 0,
            seed: 0,
        }
    }
}

/// Columns `f1`, `f2`, `d1`, ... of fair bits; the label is `f1 xor f2`,
/// flipped with probability `noise`. Every column has vocabulary `["0", "1"]`
/// so code and raw value coincide.
pub fn xor_table(opts: &XorOptions) -> Result<EncodedTable> {
    if opts.n == 0 || !(0.0..=1.0).contains(&opts.noise) {
        return Err(FivesError::Config(format!(
            "xor table needs n >= 1 and noise in [0, 1], got {} and {}",
            opts.n, opts.noise
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let width = 2 + opts.n_distractors;
    let mut codes = vec![Vec::with_capacity(opts.n); width];
    let mut labels = Vec::with_capacity(opts.n);
    for _ in 0..opts.n {
        for col in codes.iter_mut() {
            col.push(u32::from(rng.random::<bool>()));
        }
        let clean = (codes[0].last().unwrap() ^ codes[1].last().unwrap()) as u8;
        let flip = rng.random::<f64>() < opts.noise;
        labels.push(if flip { 1 - clean } else { clean });
    }
    let names = ["f1".to_string(), "f2".to_string()]
        .into_iter()
        .chain((1..=opts.n_distractors).map(|i| format!("d{i}")));
    let columns = names
        .zip(codes)
        .map(|(name, codes)| EncodedColumn {
            name,
            vocab: vec!["0".into(), "1".into()],
            codes,
        })
        .collect();
    EncodedTable::new(columns, labels)
}

/// Raw CSV with a header, feature columns followed by `label`.
pub fn write_table_csv<W: Write>(table: &EncodedTable, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = table.names();
    header.push("label");
    w.write_record(&header)?;
    for r in 0..table.n_rows() {
        let mut rec: Vec<&str> = table
            .columns
            .iter()
            .map(|c| c.decode(c.codes[r]).unwrap_or(""))
            .collect();
        rec.push(if table.labels[r] == 1 { "1" } else { "0" });
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
