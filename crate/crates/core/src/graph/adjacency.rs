use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diffcore::kernels::{logit_scalar, sigmoid_scalar, LOGIT_EPS};
use crate::diffcore::{ParamId, ParamStore, Tape, Var};
use crate::error::{FivesError, Result};
use crate::tensor::Tensor;

pub const ADJACENCY_FORMAT_VERSION: u32 = 1;

/// Default binarization threshold used during search.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Architecture logits `H` of shape `[K, m, m]`.
///
/// Slice 0 holds the identity as logits and is never trained.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjLogits {
    h: Tensor,
}

impl AdjLogits {
    /// Logits with every trainable entry at zero, i.e. `sigma(H) = 0.5`.
    pub fn zeros(k: usize, m: usize) -> Result<Self> {
        if k == 0 || m == 0 {
            return Err(FivesError::Config(format!("adjacency needs K >= 1 and m >= 1, got K={k}, m={m}")));
        }
        let mut h = Tensor::zeros(&[k, m, m]);
        identity_logits(&mut h.data_mut()[..m * m], m);
        Ok(Self { h })
    }

    pub fn from_tensor(h: Tensor) -> Result<Self> {
        match h.shape() {
            &[k, m, m2] if k >= 1 && m >= 1 && m == m2 => {
                let mut h = h;
                identity_logits(&mut h.data_mut()[..m * m], m);
                Ok(Self { h })
            }
            s => Err(FivesError::Dimension {
                left: s.to_vec(),
                right: vec![],
                context: "adjacency logits must be [K, m, m]",
            }),
        }
    }

    pub fn k(&self) -> usize {
        self.h.shape()[0]
    }

    pub fn m(&self) -> usize {
        self.h.shape()[1]
    }

    pub fn tensor(&self) -> &Tensor {
        &self.h
    }

    pub fn slice(&self, k: usize) -> &[f64] {
        let mm = self.m() * self.m();
        &self.h.data()[k * mm..(k + 1) * mm]
    }

    pub fn slice_mut(&mut self, k: usize) -> &mut [f64] {
        assert!(k >= 1, "slice 0 of H is fixed");
        let mm = self.m() * self.m();
        &mut self.h.data_mut()[k * mm..(k + 1) * mm]
    }
}

/// Writes the identity as clipped logits into an `m x m` block.
pub(crate) fn identity_logits(block: &mut [f64], m: usize) {
    let hi = logit_scalar(1.0 - LOGIT_EPS);
    for i in 0..m {
        for j in 0..m {
            block[i * m + j] = if i == j { hi } else { -hi };
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdjMode {
    Soft,
    Binarized,
}

/// How trainable slices are derived from `H`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdjacencyMode {
    /// `A^(k) = D^-1 phi(A^(k-1)) sigma(H^(k))`.
    #[default]
    Recursive,
    /// `A^(k) = sigma(H^(k))`.
    Independent,
}

/// Per-slice binarization thresholds for slices `1..K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Thresholds(pub Vec<f64>);

impl Thresholds {
    pub fn uniform(k: usize, value: f64) -> Self {
        Self(vec![value; k.saturating_sub(1)])
    }

    /// Threshold for slice `k >= 1`.
    pub fn get(&self, k: usize) -> f64 {
        self.0[k - 1]
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        if self.0.len() != k.saturating_sub(1) {
            return Err(FivesError::Config(format!(
                "{} thresholds given for {} trainable slices",
                self.0.len(),
                k.saturating_sub(1)
            )));
        }
        if let Some(t) = self.0.iter().find(|t| !(**t > 0.0 && **t <= 1.0)) {
            return Err(FivesError::Config(format!("threshold {t} outside (0, 1]")));
        }
        Ok(())
    }
}

/// Adjacency tensor `A` of shape `[K, m, m]` with `A^(0) = I`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjTensor {
    a: Tensor,
    mode: AdjMode,
}

impl AdjTensor {
    pub fn new(a: Tensor, mode: AdjMode) -> Result<Self> {
        let &[k, m, m2] = a.shape() else {
            return Err(FivesError::Dimension {
                left: a.shape().to_vec(),
                right: vec![],
                context: "adjacency must be [K, m, m]",
            });
        };
        if m != m2 || k == 0 {
            return Err(FivesError::Dimension {
                left: a.shape().to_vec(),
                right: vec![],
                context: "adjacency must be [K, m, m] with K >= 1",
            });
        }
        if let Some(v) = a.data().iter().find(|v| !(**v >= 0.0 && **v <= 1.0)) {
            return Err(FivesError::NumericDomain(format!("adjacency entry {v} outside [0, 1]")));
        }
        if mode == AdjMode::Binarized && a.data().iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(FivesError::Contract("binarized adjacency holds non-binary entries".into()));
        }
        let t = Self { a, mode };
        if t.slice(0) != Tensor::identity(m).data() {
            return Err(FivesError::Contract("A^(0) must be the identity".into()));
        }
        Ok(t)
    }

    /// `A^(0) = I` and every later slice filled by `slices`.
    pub fn from_slices(m: usize, slices: &[Vec<f64>], mode: AdjMode) -> Result<Self> {
        let mut data = Tensor::identity(m).into_data();
        for s in slices {
            if s.len() != m * m {
                return Err(FivesError::Dimension {
                    left: vec![s.len()],
                    right: vec![m, m],
                    context: "adjacency slice",
                });
            }
            data.extend_from_slice(s);
        }
        Self::new(Tensor::new(vec![slices.len() + 1, m, m], data)?, mode)
    }

    pub fn k(&self) -> usize {
        self.a.shape()[0]
    }

    pub fn m(&self) -> usize {
        self.a.shape()[1]
    }

    pub fn mode(&self) -> AdjMode {
        self.mode
    }

    pub fn tensor(&self) -> &Tensor {
        &self.a
    }

    pub fn slice(&self, k: usize) -> &[f64] {
        let mm = self.m() * self.m();
        &self.a.data()[k * mm..(k + 1) * mm]
    }

    pub fn entry(&self, k: usize, i: usize, j: usize) -> f64 {
        let m = self.m();
        self.a.data()[(k * m + i) * m + j]
    }

    /// Nested `[K][m][m]` copy.
    pub fn to_nested(&self) -> Vec<Vec<Vec<f64>>> {
        let m = self.m();
        (0..self.k())
            .map(|k| self.slice(k).chunks(m).map(<[f64]>::to_vec).collect())
            .collect()
    }

    pub fn from_nested(nested: &[Vec<Vec<f64>>], mode: AdjMode) -> Result<Self> {
        let k = nested.len();
        let m = nested.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(k * m * m);
        for slice in nested {
            if slice.len() != m || slice.iter().any(|r| r.len() != m) {
                return Err(FivesError::Format("ragged adjacency slice".into()));
            }
            for row in slice {
                data.extend_from_slice(row);
            }
        }
        Self::new(Tensor::new(vec![k, m, m], data)?, mode)
    }
}

/// `phi` on one slice: entries `>= threshold` become 1.
fn binarize_slice(slice: &[f64], threshold: f64) -> Vec<f64> {
    slice.iter().map(|&v| if v >= threshold { 1.0 } else { 0.0 }).collect()
}

/// Row-normalized `D^-1 phi(prev)`; rows of degree zero stay zero.
fn normalized_support(prev: &[f64], m: usize, threshold: Option<f64>) -> Vec<f64> {
    let mut out = match threshold {
        Some(t) => binarize_slice(prev, t),
        None => prev.to_vec(),
    };
    for row in out.chunks_mut(m) {
        let deg: f64 = row.iter().sum();
        let deg = if deg == 0.0 { 1.0 } else { deg };
        for v in row.iter_mut() {
            *v /= deg;
        }
    }
    out
}

/// Where the adjacency slices in [`adjacency_on_tape`] get their logits.
#[derive(Debug, Clone, Copy)]
pub enum LogitSource<'a> {
    /// Bind `H` to a stored parameter so backward reaches it.
    Param(&'a ParamStore, ParamId),
    /// Constant logits; no gradient.
    Fixed(&'a AdjLogits),
}

/// Options for building `A` from `H` on a tape.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencyBuild {
    pub mode: AdjacencyMode,
    pub thresholds: Thresholds,
    /// Temperature of the re-scaling; `None` skips it.
    pub tau: Option<f64>,
    /// Pass gradients through `phi` and `D^-1` as if they were the identity.
    pub straight_through: bool,
}

/// Records the `K` adjacency slices (each `[m, m]`) on `tape`.
///
/// Returns the propagation slices (re-scaled when `tau` is set) and the raw
/// soft slices they came from.
pub fn adjacency_on_tape(
    tape: &mut Tape,
    source: LogitSource<'_>,
    build: &AdjacencyBuild,
) -> Result<(Vec<Var>, Vec<Var>)> {
    let (k, m) = match source {
        LogitSource::Param(store, id) => {
            let s = store.value(id).shape();
            if s.len() != 3 || s[1] != s[2] {
                return Err(FivesError::Dimension {
                    left: s.to_vec(),
                    right: vec![],
                    context: "adjacency logits must be [K, m, m]",
                });
            }
            (s[0], s[1])
        }
        LogitSource::Fixed(h) => (h.k(), h.m()),
    };
    build.thresholds.validate(k)?;
    let mm = m * m;
    let mut raw = vec![tape.constant(Tensor::identity(m))];
    for layer in 1..k {
        let h = match source {
            LogitSource::Param(store, id) => tape.param_slice(store, id, layer * mm, &[m, m])?,
            LogitSource::Fixed(h) => tape.constant(Tensor::matrix(m, m, h.slice(layer).to_vec())?),
        };
        let s = tape.sigmoid(h);
        let a = match build.mode {
            AdjacencyMode::Independent => s,
            AdjacencyMode::Recursive => {
                let prev = raw[layer - 1];
                let threshold = (layer > 1).then(|| build.thresholds.get(layer - 1));
                let support = normalized_support(tape.value(prev).data(), m, threshold);
                let support = Tensor::matrix(m, m, support)?;
                let p = if build.straight_through && layer > 1 {
                    tape.straight_through(prev, support)?
                } else {
                    tape.constant(support)
                };
                tape.matmul(p, s)?
            }
        };
        raw.push(a);
    }
    let scaled = match build.tau {
        None => raw.clone(),
        Some(tau) => {
            if !(tau > 0.0) {
                return Err(FivesError::Config(format!("temperature {tau} must be positive")));
            }
            let mut out = vec![raw[0]];
            for &a in &raw[1..] {
                out.push(rescale_on_tape(tape, a, tau));
            }
            out
        }
    };
    Ok((scaled, raw))
}

fn rescale_on_tape(tape: &mut Tape, a: Var, tau: f64) -> Var {
    if tau == 1.0 {
        return a;
    }
    let l = tape.logit(a);
    let l = tape.scale(l, 1.0 / tau);
    tape.sigmoid(l)
}

fn collect(tape: &Tape, slices: &[Var], mode: AdjMode) -> Result<AdjTensor> {
    let m = tape.value(slices[0]).shape()[0];
    let data: Vec<f64> = slices.iter().flat_map(|&v| tape.value(v).data().to_vec()).collect();
    AdjTensor::new(Tensor::new(vec![slices.len(), m, m], data)?, mode)
}

/// Soft adjacency from logits: `A^(0) = I` and for `k >= 1`
/// `A^(k) = D^-1 phi(A^(k-1)) sigma(H^(k))`, with `phi` binarizing the
/// previous soft slice at its threshold and zero-degree rows kept at zero.
pub fn compute_soft_adjacency(h: &AdjLogits, thresholds: &Thresholds) -> Result<AdjTensor> {
    build_soft(h, thresholds, AdjacencyMode::Recursive)
}

/// Ablation variant: `A^(k) = sigma(H^(k))` for every trainable slice.
pub fn compute_independent_adjacency(h: &AdjLogits, thresholds: &Thresholds) -> Result<AdjTensor> {
    build_soft(h, thresholds, AdjacencyMode::Independent)
}

pub fn compute_adjacency(h: &AdjLogits, thresholds: &Thresholds, mode: AdjacencyMode) -> Result<AdjTensor> {
    build_soft(h, thresholds, mode)
}

fn build_soft(h: &AdjLogits, thresholds: &Thresholds, mode: AdjacencyMode) -> Result<AdjTensor> {
    let mut tape = Tape::new();
    let build = AdjacencyBuild {
        mode,
        thresholds: thresholds.clone(),
        tau: None,
        straight_through: false,
    };
    let (_, raw) = adjacency_on_tape(&mut tape, LogitSource::Fixed(h), &build)?;
    collect(&tape, &raw, AdjMode::Soft)
}

/// Entrywise `a <- sigma(logit(a) / tau)` on slices `k >= 1`.
pub fn rescale(a: &AdjTensor, tau: f64) -> Result<AdjTensor> {
    if !(tau > 0.0) {
        return Err(FivesError::Config(format!("temperature {tau} must be positive")));
    }
    let mm = a.m() * a.m();
    let mut t = a.tensor().clone();
    if tau != 1.0 {
        for v in &mut t.data_mut()[mm..] {
            *v = sigmoid_scalar(logit_scalar(*v) * (1.0 / tau));
        }
    }
    AdjTensor::new(t, AdjMode::Soft)
}

/// `phi` on every trainable slice; `A^(0)` stays `I`.
pub fn binarize(a: &AdjTensor, thresholds: &Thresholds) -> Result<AdjTensor> {
    thresholds.validate(a.k())?;
    let mut data = a.slice(0).to_vec();
    for k in 1..a.k() {
        data.extend(binarize_slice(a.slice(k), thresholds.get(k)));
    }
    AdjTensor::new(Tensor::new(a.tensor().shape().to_vec(), data)?, AdjMode::Binarized)
}

#[derive(Debug, Serialize, Deserialize)]
struct AdjacencyArtifact {
    format_version: u32,
    #[serde(rename = "K")]
    k: usize,
    m: usize,
    thresholds: Thresholds,
    soft_a: Vec<Vec<Vec<f64>>>,
    binarized_a: Vec<Vec<Vec<f64>>>,
}

/// Soft adjacency, its binarization, and the thresholds that link them.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencySnapshot {
    pub soft: AdjTensor,
    pub binarized: AdjTensor,
    pub thresholds: Thresholds,
}

impl AdjacencySnapshot {
    pub fn from_soft(soft: AdjTensor, thresholds: Thresholds) -> Result<Self> {
        let binarized = binarize(&soft, &thresholds)?;
        Ok(Self {
            soft,
            binarized,
            thresholds,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&AdjacencyArtifact {
            format_version: ADJACENCY_FORMAT_VERSION,
            k: self.soft.k(),
            m: self.soft.m(),
            thresholds: self.thresholds.clone(),
            soft_a: self.soft.to_nested(),
            binarized_a: self.binarized.to_nested(),
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let art: AdjacencyArtifact = serde_json::from_str(text)?;
        if art.format_version != ADJACENCY_FORMAT_VERSION {
            return Err(FivesError::Format(format!(
                "unsupported adjacency format_version {}",
                art.format_version
            )));
        }
        let soft = AdjTensor::from_nested(&art.soft_a, AdjMode::Soft)?;
        let binarized = AdjTensor::from_nested(&art.binarized_a, AdjMode::Binarized)?;
        if soft.k() != art.k || soft.m() != art.m || binarized.tensor().shape() != soft.tensor().shape() {
            return Err(FivesError::Format("adjacency artifact dimensions disagree".into()));
        }
        art.thresholds.validate(art.k)?;
        Ok(Self {
            soft,
            binarized,
            thresholds: art.thresholds,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
