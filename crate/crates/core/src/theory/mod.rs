//! Exact information quantities of three binary variables and a fuzzer
//! for the product-feature mutual information bound.

mod fuzz;

pub use fuzz::{fuzz_prop1, FuzzOptions, FuzzReport, SamplerMode};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{FivesError, Result};

const SUM_TOL: f64 = 1e-9;

/// Shannon entropy in nats, `0 log 0 = 0`.
pub fn entropy(p: &[f64]) -> Result<f64> {
    if let Some(bad) = p.iter().find(|v| !(**v >= 0.0)) {
        return Err(FivesError::NumericDomain(format!("probability {bad} is negative or NaN")));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > SUM_TOL {
        return Err(FivesError::NumericDomain(format!("probabilities sum to {total}, not 1")));
    }
    Ok(entropy_unchecked(p))
}

fn entropy_unchecked(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum::<f64>()
}

/// `I(X;Y) = H(X) + H(Y) - H(X,Y)` of a joint given as `joint[x][y]`.
pub fn mutual_information(joint: &[Vec<f64>]) -> Result<f64> {
    let cols = joint.first().map_or(0, Vec::len);
    if joint.iter().any(|r| r.len() != cols) {
        return Err(FivesError::NumericDomain("ragged joint distribution".into()));
    }
    let flat: Vec<f64> = joint.iter().flatten().copied().collect();
    let hxy = entropy(&flat)?;
    let px: Vec<f64> = joint.iter().map(|r| r.iter().sum()).collect();
    let py: Vec<f64> = (0..cols).map(|j| joint.iter().map(|r| r[j]).sum()).collect();
    Ok(entropy_unchecked(&px) + entropy_unchecked(&py) - hxy)
}

/// Joint distribution of binary `X1`, `X2`, `Y`, indexed `p[x1][x2][y]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointPmf {
    pub p: [[[f64; 2]; 2]; 2],
}

impl JointPmf {
    pub fn new(p: [[[f64; 2]; 2]; 2]) -> Result<Self> {
        let pmf = Self { p };
        pmf.validate()?;
        Ok(pmf)
    }

    pub fn validate(&self) -> Result<()> {
        let cells = self.cells();
        if let Some(bad) = cells.iter().find(|v| !(**v >= 0.0)) {
            return Err(FivesError::NumericDomain(format!("cell probability {bad} is negative or NaN")));
        }
        let total: f64 = cells.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(FivesError::NumericDomain(format!("cells sum to {total}, not 1")));
        }
        Ok(())
    }

    /// Builds `p[x1][x2][y] = P(y) P(x1, x2 | y)` from the class prior and
    /// the conditional cells `[p00, p01, p10, p11]` of each class.
    pub fn from_conditionals(prior_y1: f64, given: [[f64; 4]; 2]) -> Result<Self> {
        let py = [1.0 - prior_y1, prior_y1];
        let mut p = [[[0.0; 2]; 2]; 2];
        for y in 0..2 {
            for x1 in 0..2 {
                for x2 in 0..2 {
                    p[x1][x2][y] = py[y] * given[y][2 * x1 + x2];
                }
            }
        }
        Self::new(p)
    }

    pub fn cells(&self) -> [f64; 8] {
        let mut out = [0.0; 8];
        for (i, v) in out.iter_mut().enumerate() {
            *v = self.p[i >> 2][(i >> 1) & 1][i & 1];
        }
        out
    }

    pub fn prior(&self) -> [f64; 2] {
        let mut py = [0.0; 2];
        for x1 in 0..2 {
            for x2 in 0..2 {
                for (y, v) in py.iter_mut().enumerate() {
                    *v += self.p[x1][x2][y];
                }
            }
        }
        py
    }

    /// `[p00, p01, p10, p11]` of `(X1, X2)` given `Y = y`, or `None` when
    /// `P(Y = y) = 0`.
    pub fn conditional_cells(&self, y: usize) -> Option<[f64; 4]> {
        let py = self.prior()[y];
        if py <= 0.0 {
            return None;
        }
        Some([
            self.p[0][0][y] / py,
            self.p[0][1][y] / py,
            self.p[1][0][y] / py,
            self.p[1][1][y] / py,
        ])
    }

    /// `joint[x][y]` of one feature and the label.
    pub fn marginal_joint(&self, feature: usize) -> Vec<Vec<f64>> {
        let mut j = vec![vec![0.0; 2]; 2];
        for x1 in 0..2 {
            for x2 in 0..2 {
                for y in 0..2 {
                    let x = if feature == 0 { x1 } else { x2 };
                    j[x][y] += self.p[x1][x2][y];
                }
            }
        }
        j
    }

    /// `joint[2 x1 + x2][y]`.
    pub fn pair_joint(&self) -> Vec<Vec<f64>> {
        (0..4).map(|i| self.p[i >> 1][i & 1].to_vec()).collect()
    }
}

/// Pearson correlation of `X1` and `X2` given `Y = y`; `None` when either
/// conditional marginal is degenerate.
pub fn conditional_correlation(pmf: &JointPmf, y: usize) -> Option<f64> {
    let [p00, p01, p10, p11] = pmf.conditional_cells(y)?;
    let denom = (p10 + p11) * (p00 + p01) * (p00 + p10) * (p01 + p11);
    if denom <= 0.0 {
        return None;
    }
    Some(((p00 * p11 - p01 * p10) / denom.sqrt()).clamp(-1.0, 1.0))
}

pub fn feature_mi(pmf: &JointPmf, feature: usize) -> f64 {
    mutual_information(&pmf.marginal_joint(feature)).expect("validated pmf")
}

/// `I((X1, X2); Y)`.
pub fn pair_mi(pmf: &JointPmf) -> f64 {
    mutual_information(&pmf.pair_joint()).expect("validated pmf")
}

/// `I(Z; Y)` for the product `Z = X1 X2`.
pub fn product_variable_mi(pmf: &JointPmf) -> f64 {
    let mut j = vec![vec![0.0; 2]; 2];
    for x1 in 0..2 {
        for x2 in 0..2 {
            for y in 0..2 {
                j[x1 * x2][y] += pmf.p[x1][x2][y];
            }
        }
    }
    mutual_information(&j).expect("validated pmf")
}

/// `H(X1|Y) + H(X2|Y) - H(X1, X2|Y)`, i.e. `I(X1; X2 | Y)`.
pub fn incremental_entropy_inverse(pmf: &JointPmf) -> f64 {
    let py = pmf.prior();
    let mut total = 0.0;
    for (y, &w) in py.iter().enumerate() {
        let Some([p00, p01, p10, p11]) = pmf.conditional_cells(y) else {
            continue;
        };
        let h1 = entropy_unchecked(&[p00 + p01, p10 + p11]);
        let h2 = entropy_unchecked(&[p00 + p10, p01 + p11]);
        let h12 = entropy_unchecked(&[p00, p01, p10, p11]);
        total += w * (h1 + h2 - h12);
    }
    total
}

/// `I(X1; X2)`.
pub fn feature_feature_mi(pmf: &JointPmf) -> f64 {
    let mut j = vec![vec![0.0; 2]; 2];
    for (x1, row) in j.iter_mut().enumerate() {
        for (x2, v) in row.iter_mut().enumerate() {
            *v = pmf.p[x1][x2][0] + pmf.p[x1][x2][1];
        }
    }
    mutual_information(&j).expect("validated pmf")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prop1Report {
    pub mi_x1: f64,
    pub mi_x2: f64,
    pub c: f64,
    pub rho: f64,
    /// `I(X1 X2; Y)` of the product feature.
    pub lhs: f64,
    /// `2C + log(2 rho^2 + 1)`.
    pub rhs: f64,
    pub incremental_entropy_inverse: f64,
    pub holds: bool,
}

/// Evaluates the bound `I(X1 X2; Y) < 2C + log(2 rho^2 + 1)` with
/// `C = max(I(X1;Y), I(X2;Y)) + margin` and `rho` the larger absolute
/// conditional correlation.
pub fn prop1_check(pmf: &JointPmf, margin: f64) -> Result<Prop1Report> {
    if !(margin > 0.0) {
        return Err(FivesError::Config(format!("margin {margin} must be positive")));
    }
    let mut rho: f64 = 0.0;
    for y in 0..2 {
        let r = conditional_correlation(pmf, y)
            .ok_or_else(|| FivesError::DegenerateData(format!("correlation given Y = {y} is undefined")))?;
        rho = rho.max(r.abs());
    }
    let mi_x1 = feature_mi(pmf, 0);
    let mi_x2 = feature_mi(pmf, 1);
    let c = mi_x1.max(mi_x2) + margin;
    let lhs = product_variable_mi(pmf);
    let rhs = 2.0 * c + (2.0 * rho * rho + 1.0).ln();
    Ok(Prop1Report {
        mi_x1,
        mi_x2,
        c,
        rho,
        lhs,
        rhs,
        incremental_entropy_inverse: incremental_entropy_inverse(pmf),
        holds: lhs < rhs,
    })
}

/// Draws one pmf: `Dirichlet` puts a flat Dirichlet on the 8 cells;
/// `ConditionalProduct` makes `X1` and `X2` independent given `Y`.
pub fn sample_pmf<R: Rng>(rng: &mut R, mode: SamplerMode) -> JointPmf {
    match mode {
        SamplerMode::Dirichlet => {
            let mut cells = [0.0f64; 8];
            for c in &mut cells {
                *c = rng.sample::<f64, _>(Exp1);
            }
            let total: f64 = cells.iter().sum();
            let mut p = [[[0.0; 2]; 2]; 2];
            for (i, c) in cells.iter().enumerate() {
                p[i >> 2][(i >> 1) & 1][i & 1] = c / total;
            }
            JointPmf { p }
        }
        SamplerMode::ConditionalProduct => {
            let prior: f64 = rng.random();
            let mut given = [[0.0; 4]; 2];
            for g in &mut given {
                let (a, b): (f64, f64) = (rng.random(), rng.random());
                *g = [(1.0 - a) * (1.0 - b), (1.0 - a) * b, a * (1.0 - b), a * b];
            }
            JointPmf::from_conditionals(prior, given).expect("product cells sum to one")
        }
        SamplerMode::Both => {
            let mode = if rng.random::<bool>() { SamplerMode::Dirichlet } else { SamplerMode::ConditionalProduct };
            sample_pmf(rng, mode)
        }
    }
}

pub fn sample_random_pmf(seed: u64, mode: SamplerMode) -> JointPmf {
    sample_pmf(&mut ChaCha8Rng::seed_from_u64(seed), mode)
}

#[cfg(test)]
mod tests;
