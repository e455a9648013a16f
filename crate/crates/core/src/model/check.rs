use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Batch, EncodedColumn, EncodedTable};
use crate::diffcore::{finite_diff_check, GradCheckOptions, GradCheckReport, ParamStore};
use crate::error::Result;
use crate::graph::{AdjacencyBuild, AdjacencyMode, Thresholds};
use crate::model::{forward_full, AdjSource, GradTarget, ModelLayout, ModelSpec};

/// A finite-difference check of the full multi-head loss on a random toy
/// table, repeated over independent parameter draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelGradCheck {
    pub m: usize,
    pub d: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub rows: usize,
    pub cardinality: usize,
    pub tau: f64,
    pub adjacency_mode: AdjacencyMode,
    /// Parameter draws are added until at least this many coordinates
    /// have been compared.
    pub min_coords: usize,
    pub step: f64,
    pub seed: u64,
    /// Scales the analytic node-transform gradient by 1.5 before the
    /// comparison; the check must then fail.
    pub inject_bug: bool,
}

impl Default for ModelGradCheck {
    fn default() -> Self {
        Self {
            m: 3,
            d: 2,
            k: 2,
            rows: 4,
            cardinality: 3,
            tau: 0.8,
            adjacency_mode: AdjacencyMode::Recursive,
            min_coords: 200,
            step: 1e-5,
            seed: 0,
            inject_bug: false,
        }
    }
}

fn toy_table(opts: &ModelGradCheck, rng: &mut ChaCha8Rng) -> Result<EncodedTable> {
    let columns = (0..opts.m)
        .map(|c| EncodedColumn {
            name: format!("f{c}"),
            vocab: (0..opts.cardinality).map(|v| v.to_string()).collect(),
            codes: (0..opts.rows).map(|_| rng.random_range(0..opts.cardinality as u32)).collect(),
        })
        .collect();
    let labels = (0..opts.rows).map(|r| (r % 2) as u8).collect();
    EncodedTable::new(columns, labels)
}

fn one_draw(opts: &ModelGradCheck, draw: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(draw));
    let table = toy_table(opts, &mut rng)?;
    let spec = ModelSpec::for_table(&table, opts.k, opts.d)?;
    let (layout, mut store) = ModelLayout::init(spec, &mut rng)?;
    let m = opts.m;
    for v in &mut store.value_mut(layout.adj_logits).data_mut()[m * m..] {
        // Entries stay away from the 0.5 threshold so the binarized support
        // is locally constant under the finite-difference step.
        let s: f64 = rng.random_range(0.4..2.0);
        *v = if rng.random::<bool>() { s } else { -s };
    }
    for v in store.value_mut(layout.head_bias).data_mut() {
        *v = rng.random_range(-0.5..0.5);
    }
    let batch = Batch::from_rows(&table, (0..table.n_rows()).collect());
    let build = AdjacencyBuild {
        mode: opts.adjacency_mode,
        thresholds: Thresholds::uniform(opts.k, 0.5),
        tau: Some(opts.tau),
        straight_through: false,
    };
    let loss = |s: &ParamStore| {
        forward_full::<ChaCha8Rng>(s, &layout, &batch, AdjSource::Learned(&build), GradTarget::None, None, 1e-6)
            .map(|f| f.loss_value())
    };
    let grad = |s: &mut ParamStore| {
        let f = forward_full::<ChaCha8Rng>(s, &layout, &batch, AdjSource::Learned(&build), GradTarget::Both, None, 1e-6)?;
        f.tape.backward(f.loss, s)?;
        if opts.inject_bug {
            for g in s.grad_mut(layout.transforms).data_mut() {
                *g *= 1.5;
            }
        }
        Ok(())
    };
    let fd = GradCheckOptions {
        step: opts.step,
        max_coords: usize::MAX,
        seed: opts.seed,
        ..Default::default()
    };
    finite_diff_check(&mut store, loss, grad, &fd)
}

pub fn check_model_gradients(opts: &ModelGradCheck) -> Result<GradCheckReport> {
    let mut total = GradCheckReport {
        max_rel_error: 0.0,
        coords_checked: 0,
        worst_per_param: Vec::new(),
    };
    let mut draw = 0;
    while total.coords_checked < opts.min_coords.max(1) {
        let r = one_draw(opts, draw)?;
        total.max_rel_error = total.max_rel_error.max(r.max_rel_error);
        total.coords_checked += r.coords_checked;
        for w in r.worst_per_param {
            match total.worst_per_param.iter_mut().find(|c| c.param == w.param) {
                Some(c) if w.rel_error > c.rel_error => *c = w,
                Some(_) => {}
                None => total.worst_per_param.push(w),
            }
        }
        draw += 1;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_check_passes_and_covers_every_group() {
        let r = check_model_gradients(&ModelGradCheck::default()).unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
        assert!(r.coords_checked >= 200);
        let names: Vec<&str> = r.worst_per_param.iter().map(|c| c.param.as_str()).collect();
        for p in ["embeddings", "node_transforms", "head_weights", "head_bias", "adj_logits"] {
            assert!(names.contains(&p), "{names:?}");
        }
    }

    #[test]
    fn injected_bug_is_detected() {
        let r = check_model_gradients(&ModelGradCheck { inject_bug: true, min_coords: 1, ..Default::default() }).unwrap();
        assert!(r.max_rel_error > 0.1, "{r:?}");
    }

    #[test]
    fn deeper_models_pass() {
        for mode in [AdjacencyMode::Recursive, AdjacencyMode::Independent] {
            let opts = ModelGradCheck { k: 3, m: 4, adjacency_mode: mode, seed: 5, ..Default::default() };
            let r = check_model_gradients(&opts).unwrap();
            assert!(r.max_rel_error < 1e-4, "{mode:?} {r:?}");
        }
    }
}
