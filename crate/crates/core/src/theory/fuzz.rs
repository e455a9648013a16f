use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{feature_feature_mi, pair_mi, prop1_check, sample_pmf, JointPmf};
use crate::error::{FivesError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerMode {
    Dirichlet,
    ConditionalProduct,
    /// Alternates the two samplers by sample index.
    #[default]
    Both,
}

impl std::str::FromStr for SamplerMode {
    type Err = FivesError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dirichlet" | "dirichlet-general" => Ok(Self::Dirichlet),
            "conditional-product" => Ok(Self::ConditionalProduct),
            "both" => Ok(Self::Both),
            other => Err(FivesError::Config(format!(
                "unknown sampler mode {other:?} (dirichlet, conditional-product, both)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FuzzOptions {
    pub n_samples: u64,
    pub seed: u64,
    pub mode: SamplerMode,
    pub margin: f64,
    pub threads: usize,
    /// Tolerance of the identity and incremental-bound checks.
    pub tol: f64,
}

impl Default for FuzzOptions {
    fn default() -> Self {
        Self {
            n_samples: 100_000,
            seed: 0,
            mode: SamplerMode::Both,
            margin: 1e-9,
            threads: 1,
            tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuzzReport {
    pub n_samples: u64,
    pub n_skipped_degenerate: u64,
    pub n_violations: u64,
    /// Largest `lhs / rhs` seen.
    pub max_ratio: f64,
    pub tightest_sample: Option<JointPmf>,
    /// `I(X1;Y) + I(X1;Y) + 1/d = I(X1,X2;Y)` as printed in the proof.
    pub additivity_literal_max_residual: f64,
    pub additivity_literal_violations: u64,
    /// `I(X1;Y) + I(X2;Y) + 1/d = I(X1,X2;Y)`.
    pub additivity_x2_max_residual: f64,
    pub additivity_x2_violations: u64,
    /// Chain rule `I(X1;Y) + I(X2;Y) + 1/d - I(X1;X2) = I(X1,X2;Y)`.
    pub chain_rule_max_residual: f64,
    pub chain_rule_violations: u64,
    /// Samples with `1/d > log(2 rho^2 + 1) + tol`.
    pub incremental_bound_violations: u64,
    /// Samples with `I(X1 X2; Y) > I((X1, X2); Y) + tol`.
    pub data_processing_violations: u64,
}

impl FuzzReport {
    fn empty() -> Self {
        Self {
            n_samples: 0,
            n_skipped_degenerate: 0,
            n_violations: 0,
            max_ratio: 0.0,
            tightest_sample: None,
            additivity_literal_max_residual: 0.0,
            additivity_literal_violations: 0,
            additivity_x2_max_residual: 0.0,
            additivity_x2_violations: 0,
            chain_rule_max_residual: 0.0,
            chain_rule_violations: 0,
            incremental_bound_violations: 0,
            data_processing_violations: 0,
        }
    }

    /// Folds `later` (covering higher sample indices) into `self`.
    fn merge(&mut self, later: Self) {
        self.n_samples += later.n_samples;
        self.n_skipped_degenerate += later.n_skipped_degenerate;
        self.n_violations += later.n_violations;
        if later.tightest_sample.is_some() && (later.max_ratio > self.max_ratio || self.tightest_sample.is_none()) {
            self.max_ratio = later.max_ratio;
            self.tightest_sample = later.tightest_sample;
        }
        self.additivity_literal_max_residual = self.additivity_literal_max_residual.max(later.additivity_literal_max_residual);
        self.additivity_literal_violations += later.additivity_literal_violations;
        self.additivity_x2_max_residual = self.additivity_x2_max_residual.max(later.additivity_x2_max_residual);
        self.additivity_x2_violations += later.additivity_x2_violations;
        self.chain_rule_max_residual = self.chain_rule_max_residual.max(later.chain_rule_max_residual);
        self.chain_rule_violations += later.chain_rule_violations;
        self.incremental_bound_violations += later.incremental_bound_violations;
        self.data_processing_violations += later.data_processing_violations;
    }

    /// Whether the bound and the checks that hold mathematically all passed.
    pub fn bound_verified(&self) -> bool {
        self.n_violations == 0
            && self.chain_rule_violations == 0
            && self.incremental_bound_violations == 0
            && self.data_processing_violations == 0
    }
}

fn sample_at(opts: &FuzzOptions, index: u64) -> JointPmf {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    rng.set_stream(index);
    let mode = match opts.mode {
        SamplerMode::Both if index.is_multiple_of(2) => SamplerMode::Dirichlet,
        SamplerMode::Both => SamplerMode::ConditionalProduct,
        m => m,
    };
    sample_pmf(&mut rng, mode)
}

fn run_range(opts: &FuzzOptions, range: std::ops::Range<u64>) -> FuzzReport {
    let mut rep = FuzzReport::empty();
    for i in range {
        rep.n_samples += 1;
        let pmf = sample_at(opts, i);
        let Ok(r) = prop1_check(&pmf, opts.margin) else {
            rep.n_skipped_degenerate += 1;
            continue;
        };
        if !r.holds {
            rep.n_violations += 1;
        }
        let ratio = r.lhs / r.rhs;
        if ratio > rep.max_ratio || rep.tightest_sample.is_none() {
            rep.max_ratio = ratio;
            rep.tightest_sample = Some(pmf);
        }
        let joint = pair_mi(&pmf);
        let inv_d = r.incremental_entropy_inverse;
        let literal = (r.mi_x1 + r.mi_x1 + inv_d - joint).abs();
        let x2 = (r.mi_x1 + r.mi_x2 + inv_d - joint).abs();
        let chain = (r.mi_x1 + r.mi_x2 + inv_d - feature_feature_mi(&pmf) - joint).abs();
        rep.additivity_literal_max_residual = rep.additivity_literal_max_residual.max(literal);
        rep.additivity_x2_max_residual = rep.additivity_x2_max_residual.max(x2);
        rep.chain_rule_max_residual = rep.chain_rule_max_residual.max(chain);
        rep.additivity_literal_violations += u64::from(literal > opts.tol);
        rep.additivity_x2_violations += u64::from(x2 > opts.tol);
        rep.chain_rule_violations += u64::from(chain > opts.tol);
        rep.incremental_bound_violations += u64::from(inv_d > (2.0 * r.rho * r.rho + 1.0).ln() + opts.tol);
        rep.data_processing_violations += u64::from(r.lhs > joint + opts.tol);
    }
    rep
}

/// Checks the bound on `n_samples` sampled pmfs. Sample `i` is drawn from
/// its own generator stream, so the report does not depend on `threads`.
pub fn fuzz_prop1(opts: &FuzzOptions) -> Result<FuzzReport> {
    if !(opts.margin > 0.0) {
        return Err(FivesError::Config(format!("margin {} must be positive", opts.margin)));
    }
    let threads = opts.threads.max(1) as u64;
    let n = opts.n_samples;
    if threads == 1 || n < 2 * threads {
        return Ok(run_range(opts, 0..n));
    }
    let chunk = n.div_ceil(threads);
    let parts: Vec<FuzzReport> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..threads)
            .map(|t| {
                let range = (t * chunk).min(n)..((t + 1) * chunk).min(n);
                s.spawn(move || run_range(opts, range))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("fuzz worker panicked")).collect()
    });
    let mut total = FuzzReport::empty();
    for p in parts {
        total.merge(p);
    }
    Ok(total)
}
