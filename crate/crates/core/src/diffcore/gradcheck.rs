//! Central finite-difference verification of analytic gradients.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::params::{ParamId, ParamStore};
use crate::error::{FivesError, Result};

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    /// Central-difference step, within `[1e-7, 1e-3]`.
    pub step: f64,
    /// Check every coordinate when the store holds at most this many
    /// scalars; otherwise sample this many.
    pub max_coords: usize,
    /// Minimum coordinates per parameter when sampling.
    pub min_per_param: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            max_coords: 400,
            min_per_param: 8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoordinateCheck {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub coords_checked: usize,
    /// Worst coordinate for each parameter that had any coordinate checked.
    pub worst_per_param: Vec<CoordinateCheck>,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn choose_coords(store: &ParamStore, opts: &GradCheckOptions) -> Vec<(ParamId, usize)> {
    let all: Vec<(ParamId, usize)> = store
        .ids()
        .flat_map(|id| (0..store.value(id).len()).map(move |i| (id, i)))
        .collect();
    if all.len() <= opts.max_coords {
        return all;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut chosen = Vec::new();
    let mut rest = Vec::new();
    for id in store.ids() {
        let mut idx: Vec<usize> = (0..store.value(id).len()).collect();
        idx.shuffle(&mut rng);
        let take = opts.min_per_param.min(idx.len());
        chosen.extend(idx[..take].iter().map(|&i| (id, i)));
        rest.extend(idx[take..].iter().map(|&i| (id, i)));
    }
    rest.shuffle(&mut rng);
    let remaining = opts.max_coords.saturating_sub(chosen.len());
    chosen.extend(rest.into_iter().take(remaining));
    chosen.sort();
    chosen
}

/// Compares gradients from `gradient` (which must leave d(loss)/d(param) in
/// the store's accumulators) against central differences of `loss`.
///
/// Returns the report; `max_rel_error` is the maximum over checked
/// coordinates of `|g_ad - g_fd| / max(|g_ad|, |g_fd|, 1e-8)`.
pub fn finite_diff_check<L, G>(
    store: &mut ParamStore,
    mut loss: L,
    mut gradient: G,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    L: FnMut(&ParamStore) -> Result<f64>,
    G: FnMut(&mut ParamStore) -> Result<()>,
{
    if !(1e-7..=1e-3).contains(&opts.step) {
        return Err(FivesError::Config(format!(
            "finite-difference step {} outside [1e-7, 1e-3]",
            opts.step
        )));
    }
    store.zero_grad();
    gradient(store)?;
    let analytic: Vec<Vec<f64>> = store.ids().map(|id| store.grad(id).data().to_vec()).collect();
    store.zero_grad();

    let coords = choose_coords(store, opts);
    let mut worst: Vec<Option<CoordinateCheck>> = vec![None; store.len()];
    let mut max_err: f64 = 0.0;
    let h = opts.step;
    for &(id, i) in &coords {
        let orig = store.value(id).data()[i];
        store.value_mut(id).data_mut()[i] = orig + h;
        let up = loss(store)?;
        store.value_mut(id).data_mut()[i] = orig - h;
        let down = loss(store)?;
        store.value_mut(id).data_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let a = analytic[id.0][i];
        let err = relative_error(a, numeric);
        if !err.is_finite() {
            return Err(FivesError::Numeric(format!(
                "non-finite gradient check at {}[{i}]",
                store.name(id)
            )));
        }
        max_err = max_err.max(err);
        let slot = &mut worst[id.0];
        if slot.as_ref().is_none_or(|w| err > w.rel_error) {
            *slot = Some(CoordinateCheck {
                param: store.name(id).to_string(),
                index: i,
                analytic: a,
                numeric,
                rel_error: err,
            });
        }
    }
    Ok(GradCheckReport {
        max_rel_error: max_err,
        coords_checked: coords.len(),
        worst_per_param: worst.into_iter().flatten().collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::tape::Tape;
    use crate::tensor::Tensor;

    fn quadratic_store() -> ParamStore {
        let mut s = ParamStore::new();
        s.add("a", Tensor::vector(vec![0.3, -1.2, 2.0])).unwrap();
        s.add("b", Tensor::matrix(2, 2, vec![0.5, 0.25, -0.75, 1.5]).unwrap())
            .unwrap();
        s
    }

    // loss = sum(a^2) + sum(b * b) * 0.5
    fn quad_loss(s: &ParamStore, flip: bool) -> (Tape, crate::diffcore::tape::Var) {
        let mut tape = Tape::new();
        let a = tape.param(s, s.id("a").unwrap());
        let b = tape.param(s, s.id("b").unwrap());
        let a2 = tape.mul(a, a).unwrap();
        let b2 = tape.mul(b, b).unwrap();
        let sa = tape.sum(a2);
        let sb = tape.sum(b2);
        let sb = tape.scale(sb, if flip { -0.5 } else { 0.5 });
        let loss = tape.add(sa, sb).unwrap();
        (tape, loss)
    }

    #[test]
    fn quadratic_is_exact() {
        let mut s = quadratic_store();
        let report = finite_diff_check(
            &mut s,
            |s| {
                let (t, l) = quad_loss(s, false);
                Ok(t.scalar(l))
            },
            |s| {
                let (t, l) = quad_loss(s, false);
                t.backward(l, s)
            },
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-9, "{report:?}");
        assert_eq!(report.coords_checked, 7);
        assert_eq!(report.worst_per_param.len(), 2);
    }

    #[test]
    fn sign_flip_is_detected() {
        let mut s = quadratic_store();
        let report = finite_diff_check(
            &mut s,
            |s| {
                let (t, l) = quad_loss(s, false);
                Ok(t.scalar(l))
            },
            |s| {
                let (t, l) = quad_loss(s, true);
                t.backward(l, s)
            },
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!((report.max_rel_error - 2.0).abs() < 1e-6, "{report:?}");
    }

    #[test]
    fn step_out_of_range() {
        let mut s = quadratic_store();
        let opts = GradCheckOptions { step: 0.1, ..Default::default() };
        assert!(finite_diff_check(&mut s, |_| Ok(0.0), |_| Ok(()), &opts).is_err());
    }

    #[test]
    fn sampling_covers_every_param() {
        let mut s = ParamStore::new();
        s.add("big", Tensor::zeros(&[1000])).unwrap();
        s.add("small", Tensor::zeros(&[3])).unwrap();
        let opts = GradCheckOptions { max_coords: 50, ..Default::default() };
        let coords = choose_coords(&s, &opts);
        assert_eq!(coords.len(), 50);
        assert_eq!(coords.iter().filter(|(id, _)| id.0 == 1).count(), 3);
    }
}
