use serde::{Deserialize, Serialize};

use crate::data::EncodedTable;
use crate::diffcore::kernels::sigmoid_scalar;
use crate::error::{FivesError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LrConfig {
    pub l1: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for LrConfig {
    fn default() -> Self {
        Self {
            l1: 1.0,
            max_iter: 100,
            tol: 1e-6,
        }
    }
}

/// Logistic regression over the one-hot encoding of categorical columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrModel {
    pub config: LrConfig,
    /// Weight of category `c` of column `j` is `weights[offsets[j] + c]`.
    pub offsets: Vec<usize>,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after initialization and after every pass.
    pub objective_trace: Vec<f64>,
}

/// `log(1 + exp(-s z))` for label sign `s`, stable for large `|z|`.
fn logloss(z: f64, y: u8) -> f64 {
    let t = if y == 1 { -z } else { z };
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

fn objective(z: &[f64], labels: &[u8], weights: &[f64], l1: f64) -> f64 {
    z.iter().zip(labels).map(|(&z, &y)| logloss(z, y)).sum::<f64>() + l1 * weights.iter().map(|w| w.abs()).sum::<f64>()
}

fn soft_threshold(x: f64, t: f64) -> f64 {
    x.signum() * (x.abs() - t).max(0.0)
}

/// Second-order proposal for one coordinate, shrunk by halving until the
/// objective over the affected rows does not increase.
fn coordinate_update(
    rows: &[usize],
    z: &mut [f64],
    labels: &[u8],
    w: f64,
    l1: f64,
) -> f64 {
    let (mut g, mut h) = (0.0, 0.0);
    for &r in rows {
        let p = sigmoid_scalar(z[r]);
        g += p - f64::from(labels[r]);
        h += p * (1.0 - p);
    }
    let h = h.max(1e-12);
    let target = soft_threshold(w * h - g, l1) / h;
    let mut delta = target - w;
    if delta == 0.0 {
        return w;
    }
    let before: f64 = rows.iter().map(|&r| logloss(z[r], labels[r])).sum::<f64>() + l1 * w.abs();
    for _ in 0..30 {
        let after: f64 = rows.iter().map(|&r| logloss(z[r] + delta, labels[r])).sum::<f64>() + l1 * (w + delta).abs();
        if after <= before {
            for &r in rows {
                z[r] += delta;
            }
            return w + delta;
        }
        delta *= 0.5;
    }
    w
}

/// Minimizes the summed logistic loss plus `l1 * |w|_1` (bias unpenalized)
/// by cyclic coordinate descent over the bias and every category weight.
/// Stops after `max_iter` passes or when a pass changes the objective by
/// less than `tol` relative to its magnitude.
pub fn train_logistic_regression(table: &EncodedTable, config: &LrConfig) -> Result<LrModel> {
    if !(config.l1 >= 0.0) || !(config.tol >= 0.0) {
        return Err(FivesError::Config(format!("invalid LR config {config:?}")));
    }
    let n = table.n_rows();
    let pos = table.labels.iter().filter(|&&y| y == 1).count();
    if n == 0 || pos == 0 || pos == n {
        return Err(FivesError::DegenerateData(format!(
            "logistic regression needs both classes, got {pos} positives in {n} rows"
        )));
    }
    let mut offsets = Vec::with_capacity(table.n_features());
    let mut total = 0;
    for c in &table.columns {
        offsets.push(total);
        total += c.cardinality();
    }
    let mut rows_of: Vec<Vec<usize>> = vec![Vec::new(); total];
    for (j, c) in table.columns.iter().enumerate() {
        for (r, &code) in c.codes.iter().enumerate() {
            rows_of[offsets[j] + code as usize].push(r);
        }
    }
    let all_rows: Vec<usize> = (0..n).collect();
    let labels = &table.labels;
    let mut weights = vec![0.0; total];
    let mut z = vec![0.0; n];
    let mut bias = 0.0;
    let mut trace = vec![objective(&z, labels, &weights, config.l1)];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < config.max_iter {
        iterations += 1;
        bias = coordinate_update(&all_rows, &mut z, labels, bias, 0.0);
        for (w, rows) in weights.iter_mut().zip(&rows_of) {
            if !rows.is_empty() {
                *w = coordinate_update(rows, &mut z, labels, *w, config.l1);
            }
        }
        let obj = objective(&z, labels, &weights, config.l1);
        if !obj.is_finite() {
            return Err(FivesError::Numeric(format!("LR objective became {obj} at pass {iterations}")));
        }
        let prev = *trace.last().unwrap();
        trace.push(obj);
        if (prev - obj).abs() <= config.tol * prev.abs().max(1.0) {
            converged = true;
            break;
        }
    }
    Ok(LrModel {
        config: *config,
        offsets,
        weights,
        bias,
        iterations,
        converged,
        objective_trace: trace,
    })
}

impl LrModel {
    pub fn n_nonzero(&self) -> usize {
        self.weights.iter().filter(|&&w| w != 0.0).count()
    }

    /// Positive-class probabilities; the table must have the training
    /// table's column layout.
    pub fn predict_proba(&self, table: &EncodedTable) -> Result<Vec<f64>> {
        if table.n_features() != self.offsets.len() {
            return Err(FivesError::Dimension {
                left: vec![table.n_features()],
                right: vec![self.offsets.len()],
                context: "LR columns",
            });
        }
        let ends: Vec<usize> = self.offsets.iter().skip(1).copied().chain([self.weights.len()]).collect();
        (0..table.n_rows())
            .map(|r| {
                let mut z = self.bias;
                for (j, c) in table.columns.iter().enumerate() {
                    let idx = self.offsets[j] + c.codes[r] as usize;
                    if idx >= ends[j] {
                        return Err(FivesError::Lookup(format!(
                            "code {} of column {} beyond the trained vocabulary",
                            c.codes[r], c.name
                        )));
                    }
                    z += self.weights[idx];
                }
                Ok(sigmoid_scalar(z))
            })
            .collect()
    }
}

/// Augments `train` and `eval` with `crosses`, fits the regression on the
/// augmented training table and returns it with its AUC on `eval`.
pub fn fit_and_score(
    train: &EncodedTable,
    eval: &EncodedTable,
    crosses: &[crate::graph::CrossFeature],
    config: &LrConfig,
    cap: usize,
) -> Result<(LrModel, f64)> {
    let aug = crate::downstream::materialize_crosses_many(&[train, eval], crosses, cap)?;
    let model = train_logistic_regression(&aug[0], config)?;
    let score = crate::downstream::auc(&model.predict_proba(&aug[1])?, &aug[1].labels)?;
    Ok((model, score))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::EncodedColumn;
    use crate::downstream::{auc, materialize_crosses};
    use crate::graph::CrossFeature;
    use crate::synth::{xor_table, XorOptions};
    use proptest::prelude::*;

    fn one_col(codes: Vec<u32>, card: usize, labels: Vec<u8>) -> EncodedTable {
        EncodedTable::new(
            vec![EncodedColumn {
                name: "x".into(),
                vocab: (0..card).map(|i| i.to_string()).collect(),
                codes,
            }],
            labels,
        )
        .unwrap()
    }

    #[test]
    fn separable_column_gives_perfect_auc() {
        let t = one_col(vec![0, 1, 2, 0, 1, 2, 2], 3, vec![0, 1, 1, 0, 1, 1, 1]);
        let m = train_logistic_regression(&t, &LrConfig::default()).unwrap();
        assert_eq!(auc(&m.predict_proba(&t).unwrap(), &t.labels).unwrap(), 1.0);
    }

    #[test]
    fn huge_penalty_predicts_the_prior() {
        let t = one_col(vec![0, 1, 2, 0, 1, 2, 2, 0], 3, vec![0, 1, 1, 0, 1, 1, 1, 0]);
        let m = train_logistic_regression(&t, &LrConfig { l1: 1e6, ..Default::default() }).unwrap();
        assert_eq!(m.n_nonzero(), 0);
        let p = m.predict_proba(&t).unwrap();
        assert!(p.iter().all(|&v| (v - 5.0 / 8.0).abs() < 1e-6), "{p:?}");
    }

    #[test]
    fn single_class_is_degenerate() {
        let t = one_col(vec![0, 1], 2, vec![1, 1]);
        assert!(matches!(train_logistic_regression(&t, &LrConfig::default()), Err(FivesError::DegenerateData(_))));
    }

    #[test]
    fn xor_needs_the_cross() {
        let t = xor_table(&XorOptions { n: 4000, noise: 0.0, n_distractors: 0, seed: 0 }).unwrap();
        let (train, test) = (t.select_rows(&(0..3000).collect::<Vec<_>>()), t.select_rows(&(3000..4000).collect::<Vec<_>>()));
        let raw = train_logistic_regression(&train, &LrConfig::default()).unwrap();
        let a = auc(&raw.predict_proba(&test).unwrap(), &test.labels).unwrap();
        assert!((0.4..=0.6).contains(&a), "{a}");

        let cross = [CrossFeature::new(0, vec![1], 1.0)];
        let aug = crate::downstream::materialize_crosses_many(&[&train, &test], &cross, 100).unwrap();
        let m = train_logistic_regression(&aug[0], &LrConfig::default()).unwrap();
        let a = auc(&m.predict_proba(&aug[1]).unwrap(), &aug[1].labels).unwrap();
        assert!(a > 0.99, "{a}");
        assert!(materialize_crosses(&train, &cross, 100).is_ok());
    }

    #[test]
    fn stable_logloss() {
        assert!((logloss(0.0, 1) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((logloss(800.0, 0) - 800.0).abs() < 1e-9);
        assert!(logloss(800.0, 1) < 1e-300);
    }

    proptest! {
        #[test]
        fn objective_trace_is_monotone(
            rows in prop::collection::vec((0u32..4, 0u32..3, 0u8..2), 4..80),
            l1 in 0.0f64..3.0,
        ) {
            let labels: Vec<u8> = rows.iter().map(|r| r.2).collect();
            prop_assume!(labels.contains(&0) && labels.contains(&1));
            let t = EncodedTable::new(
                vec![
                    EncodedColumn { name: "a".into(), vocab: (0..4).map(|i| i.to_string()).collect(), codes: rows.iter().map(|r| r.0).collect() },
                    EncodedColumn { name: "b".into(), vocab: (0..3).map(|i| i.to_string()).collect(), codes: rows.iter().map(|r| r.1).collect() },
                ],
                labels,
            ).unwrap();
            let m = train_logistic_regression(&t, &LrConfig { l1, max_iter: 30, tol: 0.0 }).unwrap();
            for w in m.objective_trace.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-9 * w[0].abs().max(1.0), "{:?}", m.objective_trace);
            }
            prop_assert!(m.weights.iter().all(|w| w.is_finite()));
            prop_assert_eq!(m.weights.len(), 7);
        }
    }
}
