use super::*;
use crate::data::split_dataset;
use crate::synth::{xor_table, XorOptions};

fn xor_splits(noise: f64, n_distractors: usize, seed: u64) -> crate::data::Splits {
    let t = xor_table(&XorOptions { n: 2000, noise, n_distractors, seed }).unwrap();
    split_dataset(&t, (0.6, 0.2, 0.2), seed).unwrap()
}

fn quick(epochs: usize) -> SearchConfig {
    SearchConfig {
        epochs,
        batch_size: 64,
        d: 4,
        alpha1: 0.02,
        alpha2: 0.02,
        ..Default::default()
    }
}

#[test]
fn config_defaults_and_json() {
    let c = SearchConfig::from_json("{}").unwrap();
    assert_eq!(c, SearchConfig::default());
    assert_eq!((c.alpha1, c.l2, c.dropout, c.tau_start, c.tau_end), (5e-3, 1e-4, 0.3, 1.0, 0.02));
    let c = SearchConfig::from_json(r#"{"K": 3, "adjacency_mode": "independent", "thresholds": [0.4, 0.6]}"#).unwrap();
    assert_eq!(c.k, 3);
    assert_eq!(c.thresholds().get(2), 0.6);
    assert!(SearchConfig::from_json(r#"{"K": 0}"#).is_err());
    assert!(SearchConfig::from_json(r#"{"tau_start": 0.01}"#).is_err());
    assert!(SearchConfig::from_json(r#"{"alpha1": 0}"#).is_err());
    assert!(SearchConfig::from_json(r#"{"typo": 1}"#).is_err());
}

#[test]
fn alternation_touches_only_its_own_parameters() {
    let s = xor_splits(0.05, 1, 0);
    let config = quick(1);
    let spec = ModelSpec::for_table(&s.train, 2, 4).unwrap();
    let (layout, mut store) = ModelLayout::init(spec, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut opt_t = Optimizer::new(UpdateRule::Adam, 0.05, 1e-4);
    let mut opt_h = Optimizer::new(UpdateRule::Adam, 0.05, 0.0);
    let build = config.build(0.7);
    let tb = iter_batches(&s.train, 64, true, 0).next().unwrap();
    let vb = iter_batches(&s.val, 64, true, 0).next().unwrap();
    for _ in 0..3 {
        let before = store.clone();
        theta_step(&mut store, &layout, &mut opt_t, &tb, AdjSource::Learned(&build), &config, &mut rng).unwrap();
        assert_eq!(store.value(layout.adj_logits), before.value(layout.adj_logits));
        assert_ne!(store.value(layout.embeddings), before.value(layout.embeddings));

        let before = store.clone();
        arch_step(&mut store, &layout, &mut opt_h, &vb, &build, &config, &mut rng).unwrap();
        assert_ne!(store.value(layout.adj_logits), before.value(layout.adj_logits));
        for id in layout.theta_ids() {
            assert_eq!(store.value(id), before.value(id), "{}", store.name(id));
        }
    }
}

#[test]
fn tau_trace_spans_schedule() {
    let s = xor_splits(0.05, 0, 1);
    let r = fit(&s.train, &s.val, &quick(2)).unwrap();
    let steps = s.train.n_rows().div_ceil(64).max(s.val.n_rows().div_ceil(64));
    assert_eq!(r.tau_trace.len(), 2 * steps);
    assert_eq!(r.tau_trace[0], 1.0);
    assert!((r.tau_trace.last().unwrap() - 0.02).abs() < 1e-12);
    assert!(r.tau_trace.windows(2).all(|w| w[1] <= w[0]));
    assert_eq!(r.metrics.len(), 2);
    assert!((r.metrics[1].tau - 0.02).abs() < 1e-12);
}

#[test]
fn zero_arch_rate_freezes_h() {
    let s = xor_splits(0.05, 0, 2);
    let r = fit(&s.train, &s.val, &SearchConfig { alpha2: 0.0, ..quick(1) }).unwrap();
    let h = r.layout.adj_logits(&r.params).unwrap();
    assert!(h.slice(1).iter().all(|&v| v == 0.0));
    assert!(r.adjacency.soft.slice(1).iter().all(|&v| (v - 0.5).abs() < 1e-15));
}

#[test]
fn deterministic_given_seed() {
    let s = xor_splits(0.05, 1, 3);
    let a = fit(&s.train, &s.val, &quick(2)).unwrap();
    let b = fit(&s.train, &s.val, &quick(2)).unwrap();
    let strip = |r: &SearchResult| r.metrics.iter().map(EpochMetrics::without_timing).collect::<Vec<_>>();
    assert_eq!(strip(&a), strip(&b));
    assert_eq!(a.params.to_json().unwrap(), b.params.to_json().unwrap());
    let c = fit(&s.train, &s.val, &SearchConfig { seed: 9, ..quick(2) }).unwrap();
    assert_ne!(strip(&a), strip(&c));
}

#[test]
fn empty_split_and_single_feature_rejected() {
    let s = xor_splits(0.05, 0, 4);
    let empty = s.val.select_rows(&[]);
    assert!(matches!(fit(&s.train, &empty, &quick(1)), Err(FivesError::Config(_))));
    let mut one = s.train.clone();
    one.columns.truncate(1);
    let mut one_val = s.val.clone();
    one_val.columns.truncate(1);
    assert!(matches!(fit(&one, &one_val, &quick(1)), Err(FivesError::Config(_))));
}

#[test]
fn xor_search_finds_the_cross_edge() {
    let s = xor_splits(0.05, 0, 0);
    let r = fit(&s.train, &s.val, &quick(10)).unwrap();
    let b = &r.adjacency.binarized;
    assert!(b.entry(1, 0, 1) == 1.0 || b.entry(1, 1, 0) == 1.0, "{:?}", r.adjacency.soft.to_nested());
    assert!(r.final_val_auc().unwrap() > 0.9, "{:?}", r.metrics);
}

#[test]
fn independent_mode_runs() {
    let s = xor_splits(0.05, 2, 5);
    let config = SearchConfig { k: 3, adjacency_mode: AdjacencyMode::Independent, ..quick(1) };
    let r = fit(&s.train, &s.val, &config).unwrap();
    assert_eq!(r.adjacency.soft.k(), 3);
    assert_eq!(r.metrics.len(), 1);
    let h = r.layout.adj_logits(&r.params).unwrap();
    let again = compute_adjacency(&h, &config.thresholds(), AdjacencyMode::Independent).unwrap();
    assert_eq!(again, r.adjacency.soft);
}

#[test]
fn fine_tune_without_epochs_reproduces_final_auc() {
    let s = xor_splits(0.05, 0, 6);
    let r = fit(&s.train, &s.val, &quick(2)).unwrap();
    let ft = fine_tune(&r, &s.train, &s.val, &SearchConfig { epochs: 0, ..quick(0) }).unwrap();
    assert_eq!(ft.val_auc, r.final_val_auc().unwrap());
    assert!(ft.metrics.is_empty());
}

#[test]
fn learn_from_scratch_is_deterministic_and_zero_adjacency_is_linear() {
    let s = xor_splits(0.05, 0, 7);
    let zero = AdjTensor::from_slices(2, &[vec![0.0; 4]], AdjMode::Binarized).unwrap();
    let config = quick(3);
    let a = learn_from_scratch(&zero, &s.train, &s.val, &config).unwrap();
    let b = learn_from_scratch(&zero, &s.train, &s.val, &config).unwrap();
    assert_eq!(a.val_auc, b.val_auc);
    assert!((0.4..=0.6).contains(&a.val_auc), "{}", a.val_auc);
    let wrong_k = random_adjacency(2, 3, 0.5, 0).unwrap();
    assert!(learn_from_scratch(&wrong_k, &s.train, &s.val, &config).is_err());
}

#[test]
fn search_result_round_trips_through_directory() {
    let s = xor_splits(0.05, 0, 8);
    let r = fit(&s.train, &s.val, &quick(1)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    r.save(dir.path()).unwrap();
    let back = SearchResult::load(dir.path()).unwrap();
    assert_eq!(back.params.to_json().unwrap(), r.params.to_json().unwrap());
    assert_eq!(back.adjacency, r.adjacency);
    assert_eq!(back.metrics, r.metrics);
    assert_eq!(back.config, r.config);
    assert_eq!(back.layout, r.layout);
}

#[test]
fn random_adjacency_cases() {
    let full = random_adjacency(4, 3, 1.0, 0).unwrap();
    assert!(full.slice(1).iter().chain(full.slice(2)).all(|&v| v == 1.0));
    assert_eq!(full.slice(0), Tensor::identity(4).data());

    // 900 draws: the 6 sigma band of Binomial(900, 0.5) is 450 +- 90; the
    // tighter 450 +- 60 band is 4 sigma.
    let a = random_adjacency(10, 10, 0.5, 42).unwrap();
    let ones = (1..10).flat_map(|k| a.slice(k).iter()).filter(|&&v| v == 1.0).count();
    assert!((390..=510).contains(&ones), "{ones}");
    assert_eq!(a, random_adjacency(10, 10, 0.5, 42).unwrap());
    assert_ne!(a, random_adjacency(10, 10, 0.5, 43).unwrap());
    let small = random_adjacency(10, 3, 0.5, 42).unwrap();
    let ones = small.slice(1).iter().chain(small.slice(2)).filter(|&&v| v == 1.0).count();
    assert!((55..=145).contains(&ones), "{ones}");
    assert!(random_adjacency(3, 2, 0.0, 0).is_err());
}
