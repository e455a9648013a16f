use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::data::EncodedColumn;
use crate::diffcore::{finite_diff_check, GradCheckOptions, Optimizer, UpdateRule};
use crate::graph::{AdjMode, AdjacencyMode, Thresholds};

type NoRng = ChaCha8Rng;

fn table(codes: &[&[u32]], labels: &[u8], cards: &[usize]) -> EncodedTable {
    let m = cards.len();
    let columns = (0..m)
        .map(|c| EncodedColumn {
            name: format!("f{c}"),
            vocab: (0..cards[c]).map(|v| v.to_string()).collect(),
            codes: codes.iter().map(|r| r[c]).collect(),
        })
        .collect();
    EncodedTable::new(columns, labels.to_vec()).unwrap()
}

fn all_rows(t: &EncodedTable) -> Batch {
    Batch::from_rows(t, (0..t.n_rows()).collect())
}

fn toy() -> EncodedTable {
    table(
        &[&[0, 1, 2], &[1, 0, 1], &[1, 1, 0], &[0, 0, 2]],
        &[1, 0, 1, 0],
        &[2, 2, 3],
    )
}

fn xor_table() -> EncodedTable {
    table(&[&[0, 0], &[0, 1], &[1, 0], &[1, 1]], &[0, 1, 1, 0], &[2, 2])
}

fn learned(k: usize, tau: f64) -> AdjacencyBuild {
    AdjacencyBuild {
        mode: AdjacencyMode::Recursive,
        thresholds: Thresholds::uniform(k, 0.5),
        tau: Some(tau),
        straight_through: false,
    }
}

fn randomize_h(store: &mut ParamStore, layout: &ModelLayout, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = layout.spec.m;
    let h = store.value_mut(layout.adj_logits).data_mut();
    for v in &mut h[m * m..] {
        // Keep entries well away from the 0.5 threshold so phi is locally constant.
        let s: f64 = rng.random_range(0.4..2.0);
        *v = if rng.random::<bool>() { s } else { -s };
    }
}

#[test]
fn one_hot_embeddings_reproduce_codes() {
    let t = toy();
    let spec = ModelSpec::for_table(&t, 1, 7).unwrap();
    let (layout, mut store) = ModelLayout::init(spec, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let eye = Tensor::identity(7);
    store.value_mut(layout.embeddings).data_mut().copy_from_slice(eye.data());
    for r in 0..t.n_rows() {
        let codes: Vec<u32> = (0..3).map(|c| t.code(r, c)).collect();
        let n0 = embed_sample(&store, &layout, &codes).unwrap();
        for (c, &code) in codes.iter().enumerate() {
            let row = &n0.data()[c * 7..(c + 1) * 7];
            let hot = row.iter().position(|&v| v == 1.0).unwrap();
            assert_eq!(hot, layout.offsets[c] + code as usize);
        }
    }
    let a = embed_sample(&store, &layout, &[1, 0, 2]).unwrap();
    assert_eq!(a, embed_sample(&store, &layout, &[1, 0, 2]).unwrap());
    assert!(embed_sample(&store, &layout, &[2, 0, 0]).is_err());
}

#[test]
fn unused_embedding_rows_get_no_gradient() {
    let t = toy();
    let spec = ModelSpec::for_table(&t, 1, 2).unwrap();
    let (layout, mut store) = ModelLayout::init(spec, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let batch = Batch::from_rows(&t, vec![0]);
    let mut tape = Tape::new();
    let table_var = tape.param(&store, layout.embeddings);
    let n0 = tape.gather(table_var, layout.embedding_rows(&batch).unwrap()).unwrap();
    let s = tape.sum(n0);
    tape.backward(s, &mut store).unwrap();
    let g = store.grad(layout.embeddings).data();
    // Row 0 is (f0 = 0), row 3 is (f1 = 1), row 6 is (f2 = 2).
    for row in 0..7 {
        let used = [0, 3, 6].contains(&row);
        let expect = if used { 1.0 } else { 0.0 };
        assert_eq!(&g[row * 2..row * 2 + 2], &[expect, expect], "row {row}");
    }
}

#[test]
fn propagate_layer_cases() {
    let n0 = Tensor::matrix(2, 2, vec![1.0, 2.0, -1.0, 0.5]).unwrap();
    let prev = Tensor::matrix(2, 2, vec![3.0, -1.0, 2.0, 2.0]).unwrap();
    let mut w = Tensor::zeros(&[2, 2, 2]);
    for j in 0..2 {
        w.set(&[j, 0, 0], 1.0);
        w.set(&[j, 1, 1], 1.0);
    }
    let eye = [1.0, 0.0, 0.0, 1.0];
    let out = propagate_layer(&prev, &n0, &eye, &w, 1e-12).unwrap();
    let expect: Vec<f64> = n0.data().iter().zip(prev.data()).map(|(a, b)| a * b).collect();
    assert_eq!(out.data(), expect.as_slice());

    let zero = propagate_layer(&prev, &n0, &[0.0; 4], &w, 1e-12).unwrap();
    assert_eq!(zero.data(), &[0.0; 4]);

    let n0 = Tensor::matrix(2, 1, vec![2.0, 3.0]).unwrap();
    let w1 = Tensor::new(vec![2, 1, 1], vec![1.0, 1.0]).unwrap();
    let out = propagate_layer(&n0, &n0, &[0.0, 1.0, 0.0, 1.0], &w1, 1e-12).unwrap();
    assert_eq!(out.data()[0], 6.0);
}

#[test]
fn predict_head_cases() {
    let n = Tensor::matrix(2, 1, vec![1.0, -1.0]).unwrap();
    assert_eq!(predict_head(&n, &[0.0, 0.0], 0.0).unwrap(), 0.5);
    assert!((predict_head(&n, &[0.0, 0.0], 50.0).unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(predict_head(&n, &[2.0, 2.0], 0.0).unwrap(), 0.5);
}

#[test]
fn multi_head_loss_cases() {
    let ln2 = std::f64::consts::LN_2;
    assert!((multi_head_loss(&[vec![0.5], vec![0.5]], &[1.0]).unwrap() - ln2).abs() < 1e-15);
    assert!(multi_head_loss(&[vec![1.0, 0.0]], &[1.0, 0.0]).unwrap() < 1e-11);
    let oracle = 0.25 * -(0.9f64.ln() + 0.8f64.ln() + 0.7f64.ln() + 0.6f64.ln());
    let got = multi_head_loss(&[vec![0.9, 0.3], vec![0.8, 0.4]], &[1.0, 0.0]).unwrap();
    assert!((got - oracle).abs() < 1e-15);
    assert!((got - 0.299_001_158_669_189_8).abs() < 1e-15);
}

fn model(t: &EncodedTable, k: usize, d: usize, seed: u64) -> (ModelLayout, ParamStore) {
    let spec = ModelSpec::for_table(t, k, d).unwrap();
    ModelLayout::init(spec, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

#[test]
fn tape_forward_matches_value_level_composition() {
    let t = toy();
    for mode in [AdjacencyMode::Recursive, AdjacencyMode::Independent] {
        let (layout, mut store) = model(&t, 3, 2, 4);
        randomize_h(&mut store, &layout, 9);
        let build = AdjacencyBuild { mode, ..learned(3, 0.7) };
        let f = forward_full::<NoRng>(&store, &layout, &all_rows(&t), AdjSource::Learned(&build), GradTarget::None, None, 1e-6).unwrap();

        let h = layout.adj_logits(&store).unwrap();
        let a = crate::graph::compute_adjacency(&h, &build.thresholds, mode).unwrap();
        let a = crate::graph::rescale(&a, 0.7).unwrap();
        let w = store.value(layout.transforms);
        let hw = store.value(layout.head_weights).data();
        let hb = store.value(layout.head_bias).data();
        for r in 0..t.n_rows() {
            let codes: Vec<u32> = (0..3).map(|c| t.code(r, c)).collect();
            let n0 = embed_sample(&store, &layout, &codes).unwrap();
            let mut n = n0.clone();
            for k in 0..3 {
                if k > 0 {
                    n = propagate_layer(&n, &n0, a.slice(k), w, 1e-6).unwrap();
                }
                let p = predict_head(&n, &hw[k * 6..(k + 1) * 6], hb[k]).unwrap();
                assert!((p - f.head_probs[k][r]).abs() < 1e-13, "k={k} r={r}");
            }
        }
        let labels: Vec<f64> = t.labels.iter().map(|&l| f64::from(l)).collect();
        let loss = multi_head_loss(&f.head_probs, &labels).unwrap();
        assert!((loss - f.loss_value()).abs() < 1e-13);
    }
}

#[test]
fn single_layer_is_logistic_on_embeddings() {
    let t = toy();
    let (layout, store) = model(&t, 1, 3, 2);
    let a = AdjTensor::from_slices(3, &[], AdjMode::Binarized).unwrap();
    let f = forward_full::<NoRng>(&store, &layout, &all_rows(&t), AdjSource::Fixed(&a), GradTarget::None, None, 1e-6).unwrap();
    let w = store.value(layout.head_weights).data();
    for r in 0..t.n_rows() {
        let codes: Vec<u32> = (0..3).map(|c| t.code(r, c)).collect();
        let n0 = embed_sample(&store, &layout, &codes).unwrap();
        let z: f64 = n0.data().iter().zip(w).map(|(a, b)| a * b).sum();
        assert!((f.head_probs[0][r] - sigmoid_scalar(z)).abs() < 1e-15);
    }
}

#[test]
fn forward_is_deterministic_and_permutation_invariant() {
    let t = toy();
    let (layout, store) = model(&t, 2, 3, 5);
    let build = learned(2, 1.0);
    let run = |b: &Batch| {
        forward_full::<NoRng>(&store, &layout, b, AdjSource::Learned(&build), GradTarget::None, None, 1e-6)
            .unwrap()
            .loss_value()
    };
    let base = run(&all_rows(&t));
    assert_eq!(base, run(&all_rows(&t)));
    let mut idx: Vec<usize> = (0..4).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(3));
    assert!((run(&Batch::from_rows(&t, idx)) - base).abs() < 1e-14);
}

#[test]
fn head_zero_ignores_transforms_and_adjacency() {
    let t = toy();
    let (layout, mut store) = model(&t, 3, 2, 6);
    randomize_h(&mut store, &layout, 2);
    let build = learned(3, 0.5);
    let f = forward_full::<NoRng>(&store, &layout, &all_rows(&t), AdjSource::Learned(&build), GradTarget::Both, None, 1e-6).unwrap();
    f.tape.backward(f.head_losses[0], &mut store).unwrap();
    assert!(store.grad(layout.transforms).data().iter().all(|&g| g == 0.0));
    assert!(store.grad(layout.adj_logits).data().iter().all(|&g| g == 0.0));
    assert!(store.grad(layout.embeddings).data().iter().any(|&g| g != 0.0));
    assert!(store.grad(layout.head_weights).data()[..6].iter().any(|&g| g != 0.0));
    assert!(store.grad(layout.head_weights).data()[6..].iter().all(|&g| g == 0.0));
}

#[test]
fn one_hot_adjacency_selects_a_single_message() {
    let t = toy();
    let (layout, store) = model(&t, 2, 2, 8);
    let sel = [2usize, 0, 1];
    let mut slice = vec![0.0; 9];
    for (i, &j) in sel.iter().enumerate() {
        slice[i * 3 + j] = 1.0;
    }
    let a = AdjTensor::from_slices(3, &[slice.clone()], AdjMode::Binarized).unwrap();
    let w = store.value(layout.transforms);
    for r in 0..t.n_rows() {
        let codes: Vec<u32> = (0..3).map(|c| t.code(r, c)).collect();
        let n0 = embed_sample(&store, &layout, &codes).unwrap();
        let n1 = propagate_layer(&n0, &n0, &slice, w, 1e-12).unwrap();
        for (i, &j) in sel.iter().enumerate() {
            for c in 0..2 {
                let msg: f64 = (0..2).map(|q| w.get(&[j, c, q]) * n0.get(&[j, q])).sum();
                assert_eq!(n1.get(&[i, c]), msg * n0.get(&[i, c]));
            }
        }
    }
    let f = forward_full::<NoRng>(&store, &layout, &all_rows(&t), AdjSource::Fixed(&a), GradTarget::None, None, 1e-12).unwrap();
    assert!(f.loss_value().is_finite());
}

fn grad_check(k: usize, mode: AdjacencyMode, tau: f64) -> f64 {
    let t = toy();
    let (layout, mut store) = model(&t, k, 2, 11);
    randomize_h(&mut store, &layout, 12);
    let batch = all_rows(&t);
    let build = AdjacencyBuild { mode, ..learned(k, tau) };
    let loss = |s: &ParamStore| {
        forward_full::<NoRng>(s, &layout, &batch, AdjSource::Learned(&build), GradTarget::None, None, 1e-6)
            .map(|f| f.loss_value())
    };
    let grad = |s: &mut ParamStore| {
        s.zero_grad();
        let f = forward_full::<NoRng>(s, &layout, &batch, AdjSource::Learned(&build), GradTarget::Both, None, 1e-6)?;
        f.tape.backward(f.loss, s)
    };
    let opts = GradCheckOptions { max_coords: 400, ..Default::default() };
    let report = finite_diff_check(&mut store, loss, grad, &opts).unwrap();
    assert!(report.coords_checked >= 200 || report.coords_checked == store.num_scalars());
    report.max_rel_error
}

#[test]
fn full_loss_passes_finite_differences() {
    assert!(grad_check(2, AdjacencyMode::Recursive, 1.0) < 1e-4);
    assert!(grad_check(2, AdjacencyMode::Recursive, 0.5) < 1e-4);
    assert!(grad_check(3, AdjacencyMode::Recursive, 0.8) < 1e-4);
    assert!(grad_check(3, AdjacencyMode::Independent, 0.8) < 1e-4);
}

fn train_steps(
    t: &EncodedTable,
    layout: &ModelLayout,
    store: &mut ParamStore,
    adj: AdjSource<'_>,
    steps: usize,
    lr: f64,
) -> Vec<f64> {
    let mut opt = Optimizer::new(UpdateRule::Adam, lr, 0.0);
    let batch = all_rows(t);
    let ids = layout.theta_ids();
    let mut trace = Vec::with_capacity(steps);
    for _ in 0..steps {
        store.zero_grad();
        let f = forward_full::<NoRng>(store, layout, &batch, adj, GradTarget::Theta, None, 1e-6).unwrap();
        trace.push(f.loss_value());
        f.tape.backward(f.loss, store).unwrap();
        opt.step(store, &ids).unwrap();
    }
    trace
}

#[test]
fn loss_decreases_on_separable_data() {
    let t = table(
        &[&[0, 0], &[0, 1], &[1, 0], &[1, 1], &[0, 2], &[1, 2]],
        &[0, 0, 1, 1, 0, 1],
        &[2, 3],
    );
    let (layout, mut store) = model(&t, 2, 4, 13);
    let build = learned(2, 1.0);
    let trace = train_steps(&t, &layout, &mut store, AdjSource::Learned(&build), 50, 5e-3);
    let first: f64 = trace[..10].iter().sum::<f64>() / 10.0;
    let last: f64 = trace[40..].iter().sum::<f64>() / 10.0;
    assert!(last < first, "{first} -> {last}");
    assert!(trace.windows(10).all(|w| w[9] < w[0]));
}

#[test]
fn all_ones_adjacency_fits_xor_at_layer_one() {
    let t = xor_table();
    let (layout, mut store) = model(&t, 2, 4, 14);
    let a = AdjTensor::from_slices(2, &[vec![1.0; 4]], AdjMode::Binarized).unwrap();
    let trace = train_steps(&t, &layout, &mut store, AdjSource::Fixed(&a), 2000, 0.01);
    let f = forward_full::<NoRng>(&store, &layout, &all_rows(&t), AdjSource::Fixed(&a), GradTarget::None, None, 1e-6).unwrap();
    let labels: Vec<f64> = t.labels.iter().map(|&l| f64::from(l)).collect();
    let head1 = multi_head_loss(&f.head_probs[1..], &labels).unwrap();
    let head0 = multi_head_loss(&f.head_probs[..1], &labels).unwrap();
    assert!(head1 < 0.05, "layer-1 head loss {head1}");
    // Head 0 is linear in two independent embeddings and stays at ln 2.
    assert!((head0 - std::f64::consts::LN_2).abs() < 1e-3, "head 0 loss {head0}");
    assert!(trace.last().unwrap() < &(std::f64::consts::LN_2 / 2.0 + 0.03));
}
