use super::*;
use proptest::prelude::*;

const LN2: f64 = std::f64::consts::LN_2;

fn uniform_given(y_cells: [[f64; 4]; 2]) -> JointPmf {
    JointPmf::from_conditionals(0.5, y_cells).unwrap()
}

#[test]
fn entropy_examples() {
    assert!((entropy(&[0.5, 0.5]).unwrap() - LN2).abs() < 1e-15);
    assert_eq!(entropy(&[1.0, 0.0]).unwrap(), 0.0);
    let h = entropy(&[0.25, 0.75]).unwrap();
    assert!((h - (-(0.25f64.ln() * 0.25 + 0.75 * 0.75f64.ln()))).abs() < 1e-15);
    assert!((h - 0.5623351446188083).abs() < 1e-15);
    assert!(matches!(entropy(&[-0.1, 1.1]), Err(FivesError::NumericDomain(_))));
    assert!(entropy(&[0.3, 0.3]).is_err());
}

#[test]
fn mutual_information_examples() {
    let indep = vec![vec![0.12, 0.28], vec![0.18, 0.42]];
    assert!(mutual_information(&indep).unwrap().abs() < 1e-12);
    assert!((mutual_information(&[vec![0.5, 0.0], vec![0.0, 0.5]]).unwrap() - LN2).abs() < 1e-15);
    // Direct double sum over the four cells with marginals 0.5.
    let direct: f64 = [0.4f64, 0.1, 0.1, 0.4].iter().map(|&p| p * (p / 0.25).ln()).sum();
    let mi = mutual_information(&[vec![0.4, 0.1], vec![0.1, 0.4]]).unwrap();
    assert!((mi - direct).abs() < 1e-15);
    assert!((mi - 0.1927447570217573).abs() < 1e-15);
}

#[test]
fn conditional_correlation_examples() {
    let product = uniform_given([[0.06, 0.14, 0.24, 0.56], [0.25, 0.25, 0.25, 0.25]]);
    assert!(conditional_correlation(&product, 0).unwrap().abs() < 1e-12);
    let equal = uniform_given([[0.5, 0.0, 0.0, 0.5], [0.5, 0.0, 0.0, 0.5]]);
    assert!((conditional_correlation(&equal, 1).unwrap() - 1.0).abs() < 1e-12);
    let cells = uniform_given([[0.4, 0.1, 0.1, 0.4], [0.25; 4]]);
    assert!((conditional_correlation(&cells, 0).unwrap() - 0.6).abs() < 1e-12);
    let degenerate = uniform_given([[0.5, 0.5, 0.0, 0.0], [0.25; 4]]);
    assert_eq!(conditional_correlation(&degenerate, 0), None);
    assert!(matches!(prop1_check(&degenerate, 1e-9), Err(FivesError::DegenerateData(_))));
}

#[test]
fn product_variable_examples() {
    let indep = uniform_given([[0.25; 4], [0.25; 4]]);
    assert!(product_variable_mi(&indep).abs() < 1e-15);
    // Y = X1 X2 with uniform inputs: Y = 1 only on the (1, 1) cell.
    let mut p = [[[0.0; 2]; 2]; 2];
    p[0][0][0] = 0.25;
    p[0][1][0] = 0.25;
    p[1][0][0] = 0.25;
    p[1][1][1] = 0.25;
    let pmf = JointPmf::new(p).unwrap();
    let hz = -(0.25f64 * 0.25f64.ln() + 0.75 * 0.75f64.ln());
    assert!((product_variable_mi(&pmf) - hz).abs() < 1e-15);
}

#[test]
fn prop1_examples() {
    let product = uniform_given([[0.06, 0.14, 0.24, 0.56], [0.25, 0.25, 0.25, 0.25]]);
    let r = prop1_check(&product, 1e-9).unwrap();
    assert!(r.rho < 1e-12);
    assert!((r.rhs - 2.0 * r.c).abs() < 1e-12);
    assert!(r.holds && r.lhs < 2.0 * r.c);

    let equal = JointPmf::from_conditionals(0.3, [[0.5, 0.0, 0.0, 0.5], [0.2, 0.0, 0.0, 0.8]]).unwrap();
    let r = prop1_check(&equal, 1e-9).unwrap();
    assert!((r.rho - 1.0).abs() < 1e-12);
    assert!((r.rhs - (2.0 * r.c + 3f64.ln())).abs() < 1e-12);
    assert!(r.holds);

    let indep = uniform_given([[0.25; 4], [0.25; 4]]);
    let r = prop1_check(&indep, 1e-3).unwrap();
    assert!(r.lhs.abs() < 1e-15);
    assert!((r.rhs - 2e-3).abs() < 1e-12);
    assert!(r.holds);
    assert!(prop1_check(&indep, 0.0).is_err());
}

#[test]
fn samplers() {
    let a = sample_random_pmf(1, SamplerMode::Dirichlet);
    assert!((a.cells().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert_ne!(a, sample_random_pmf(2, SamplerMode::Dirichlet));
    for seed in 0..50 {
        let c = sample_random_pmf(seed, SamplerMode::ConditionalProduct);
        assert!((c.cells().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for y in 0..2 {
            if let Some(r) = conditional_correlation(&c, y) {
                assert!(r.abs() < 1e-10);
            }
        }
    }
}

#[test]
fn fuzz_small_run_is_thread_independent() {
    let opts = FuzzOptions { n_samples: 2000, seed: 3, ..Default::default() };
    let one = fuzz_prop1(&opts).unwrap();
    let four = fuzz_prop1(&FuzzOptions { threads: 4, ..opts }).unwrap();
    assert_eq!(one, four);
    assert_eq!(one.n_samples, 2000);
    assert!(one.bound_verified(), "{one:?}");
    let empty = fuzz_prop1(&FuzzOptions { n_samples: 0, ..opts }).unwrap();
    assert_eq!((empty.n_samples, empty.n_violations, empty.tightest_sample), (0, 0, None));
}

#[test]
fn literal_additivity_fails_on_a_correlated_sample() {
    // X1 = X2 independent of Y: I(X1;Y) = I(X2;Y) = I(X1,X2;Y) = 0 and
    // 1/d = I(X1;X2|Y) = log 2, so the identity without -I(X1;X2) is off by log 2.
    let pmf = uniform_given([[0.5, 0.0, 0.0, 0.5], [0.5, 0.0, 0.0, 0.5]]);
    assert!(pair_mi(&pmf).abs() < 1e-15);
    assert!((incremental_entropy_inverse(&pmf) - LN2).abs() < 1e-15);
    assert!((feature_feature_mi(&pmf) - LN2).abs() < 1e-15);
}

fn arb_pmf() -> impl Strategy<Value = JointPmf> {
    prop::array::uniform8(0.001f64..1.0).prop_map(|c| {
        let t: f64 = c.iter().sum();
        let mut p = [[[0.0; 2]; 2]; 2];
        for (i, v) in c.iter().enumerate() {
            p[i >> 2][(i >> 1) & 1][i & 1] = v / t;
        }
        JointPmf { p }
    })
}

proptest! {
    #[test]
    fn information_inequalities(pmf in arb_pmf()) {
        let r = prop1_check(&pmf, 1e-9).unwrap();
        prop_assert!(r.holds);
        prop_assert!(r.lhs >= 0.0 && r.rhs >= 2.0 * r.c);
        prop_assert!(r.lhs <= pair_mi(&pmf) + 1e-12);
        prop_assert!(r.mi_x1 >= -1e-12 && r.mi_x2 >= -1e-12);
        let chain = r.mi_x1 + r.mi_x2 + r.incremental_entropy_inverse - feature_feature_mi(&pmf);
        prop_assert!((chain - pair_mi(&pmf)).abs() < 1e-10);
        prop_assert!(r.incremental_entropy_inverse <= (2.0 * r.rho * r.rho + 1.0).ln() + 1e-10);
        for j in [pmf.marginal_joint(0), pmf.marginal_joint(1)] {
            let px: Vec<f64> = j.iter().map(|row| row.iter().sum()).collect();
            let h = entropy(&px).unwrap();
            prop_assert!((0.0..=LN2 + 1e-12).contains(&h));
        }
    }
}
