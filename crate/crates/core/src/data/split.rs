use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::table::EncodedTable;
use crate::error::{FivesError, Result};

/// Train / validation / test partition of one table.
#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: EncodedTable,
    pub val: EncodedTable,
    pub test: EncodedTable,
}

impl Splits {
    pub const FILES: [&'static str; 3] = ["train.json", "val.json", "test.json"];

    /// Writes `train.json`, `val.json` and `test.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (name, t) in Self::FILES.iter().zip([&self.train, &self.val, &self.test]) {
            t.save(&dir.join(name))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let [train, val, test] = Self::FILES.map(|name| EncodedTable::load(&dir.join(name)));
        let s = Self {
            train: train?,
            val: val?,
            test: test?,
        };
        if !s.train.shares_vocab_with(&s.val) || !s.train.shares_vocab_with(&s.test) {
            return Err(FivesError::Split(format!("splits in {} do not share vocabularies", dir.display())));
        }
        Ok(s)
    }
}

/// Row-index partition behind [`split_dataset`]; each part is sorted.
pub fn split_indices(n: usize, fractions: (f64, f64, f64), seed: u64) -> Result<[Vec<usize>; 3]> {
    let (a, b, c) = fractions;
    if !(a > 0.0 && b > 0.0 && c > 0.0) || ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(FivesError::Split(format!(
            "fractions {fractions:?} must be positive and sum to 1"
        )));
    }
    let n_val = (n as f64 * b).round() as usize;
    let n_test = (n as f64 * c).round() as usize;
    let n_train = n.saturating_sub(n_val + n_test);
    if n_train == 0 || n_val == 0 || n_test == 0 || n_val + n_test > n {
        return Err(FivesError::Split(format!(
            "{n} rows cannot fill splits {fractions:?} (sizes {n_train}/{n_val}/{n_test})"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut train = idx[..n_train].to_vec();
    let mut val = idx[n_train..n_train + n_val].to_vec();
    let mut test = idx[n_train + n_val..].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Ok([train, val, test])
}

/// Random disjoint partition. Validation and test sizes are
/// `round(N * fraction)`; training takes the remainder.
pub fn split_dataset(table: &EncodedTable, fractions: (f64, f64, f64), seed: u64) -> Result<Splits> {
    let [tr, va, te] = split_indices(table.n_rows(), fractions, seed)?;
    Ok(Splits {
        train: table.select_rows(&tr),
        val: table.select_rows(&va),
        test: table.select_rows(&te),
    })
}

/// Two-way random split: `(rest, holdout)` with `round(N * fraction)`
/// holdout rows.
pub fn holdout_split(table: &EncodedTable, fraction: f64, seed: u64) -> Result<(EncodedTable, EncodedTable)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(FivesError::Split(format!("holdout fraction {fraction} outside (0, 1)")));
    }
    let n = table.n_rows();
    let n_hold = (n as f64 * fraction).round() as usize;
    if n_hold == 0 || n_hold >= n {
        return Err(FivesError::Split(format!("{n} rows cannot hold out {fraction}")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut rest = idx[..n - n_hold].to_vec();
    let mut hold = idx[n - n_hold..].to_vec();
    rest.sort_unstable();
    hold.sort_unstable();
    Ok((table.select_rows(&rest), table.select_rows(&hold)))
}
