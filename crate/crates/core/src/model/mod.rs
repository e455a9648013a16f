//! The feature-graph network: embeddings, layer-wise propagation over the
//! adjacency slices, one logistic head per layer and the multi-head loss.

mod check;

pub use check::{check_model_gradients, ModelGradCheck};

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{iter_batches, Batch, EncodedTable};
use crate::diffcore::kernels::{sigmoid_scalar, weighted_mean_aggregate};
use crate::diffcore::tape::PROB_CLIP;
use crate::diffcore::{ParamId, ParamStore, Tape, Var};
use crate::downstream::metrics::auc;
use crate::error::{FivesError, Result};
use crate::graph::{adjacency_on_tape, AdjLogits, AdjTensor, AdjacencyBuild, LogitSource};
use crate::tensor::Tensor;

pub const EMBEDDINGS: &str = "embeddings";
pub const NODE_TRANSFORMS: &str = "node_transforms";
pub const HEAD_WEIGHTS: &str = "head_weights";
pub const HEAD_BIAS: &str = "head_bias";
pub const ADJ_LOGITS: &str = "adj_logits";

/// Dimensions of one model; serialized as the checkpoint sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    #[serde(rename = "K")]
    pub k: usize,
    pub m: usize,
    pub d: usize,
    pub cardinalities: Vec<usize>,
    #[serde(default)]
    pub names: Vec<String>,
}

impl ModelSpec {
    pub fn for_table(table: &EncodedTable, k: usize, d: usize) -> Result<Self> {
        let spec = Self {
            k,
            m: table.n_features(),
            d,
            cardinalities: table.cardinalities(),
            names: table.names().iter().map(|s| s.to_string()).collect(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.d == 0 || self.m == 0 {
            return Err(FivesError::Config(format!(
                "model needs K, m, d >= 1, got K={}, m={}, d={}",
                self.k, self.m, self.d
            )));
        }
        if self.cardinalities.len() != self.m || self.cardinalities.contains(&0) {
            return Err(FivesError::Config(format!(
                "{} positive cardinalities expected, got {:?}",
                self.m, self.cardinalities
            )));
        }
        Ok(())
    }

    pub fn vocab_size(&self) -> usize {
        self.cardinalities.iter().sum()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        s.validate()?;
        Ok(s)
    }
}

/// Parameter handles of one model inside a [`ParamStore`].
///
/// The store holds the predictive parameters and the adjacency logits `H`
/// side by side.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelLayout {
    pub spec: ModelSpec,
    /// First embedding row of each column.
    pub offsets: Vec<usize>,
    pub embeddings: ParamId,
    pub transforms: ParamId,
    pub head_weights: ParamId,
    pub head_bias: ParamId,
    pub adj_logits: ParamId,
}

fn uniform(rng: &mut impl Rng, n: usize, bound: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-bound..=bound)).collect()
}

impl ModelLayout {
    /// Allocates and initializes every parameter; `H` starts at zero.
    pub fn init(spec: ModelSpec, rng: &mut impl Rng) -> Result<(Self, ParamStore)> {
        spec.validate()?;
        let (k, m, d) = (spec.k, spec.m, spec.d);
        let mut store = ParamStore::new();
        let embeddings = store.add(EMBEDDINGS, Tensor::zeros(&[spec.vocab_size(), d]))?;
        let transforms = store.add(NODE_TRANSFORMS, Tensor::zeros(&[m, d, d]))?;
        let head_weights = store.add(HEAD_WEIGHTS, Tensor::zeros(&[k, m * d]))?;
        let head_bias = store.add(HEAD_BIAS, Tensor::zeros(&[k]))?;
        let adj_logits = store.add(ADJ_LOGITS, AdjLogits::zeros(k, m)?.tensor().clone())?;
        let mut offsets = Vec::with_capacity(m);
        let mut acc = 0;
        for &c in &spec.cardinalities {
            offsets.push(acc);
            acc += c;
        }
        let layout = Self {
            spec,
            offsets,
            embeddings,
            transforms,
            head_weights,
            head_bias,
            adj_logits,
        };
        layout.reinit_theta(&mut store, rng);
        Ok((layout, store))
    }

    /// Rebinds a layout to a store loaded from a checkpoint.
    pub fn attach(spec: ModelSpec, store: &ParamStore) -> Result<Self> {
        spec.validate()?;
        let get = |name: &str, shape: &[usize]| -> Result<ParamId> {
            let id = store
                .id(name)
                .ok_or_else(|| FivesError::Format(format!("checkpoint lacks parameter {name:?}")))?;
            if store.value(id).shape() != shape {
                return Err(FivesError::Dimension {
                    left: store.value(id).shape().to_vec(),
                    right: shape.to_vec(),
                    context: "checkpoint parameter shape",
                });
            }
            Ok(id)
        };
        let (k, m, d) = (spec.k, spec.m, spec.d);
        let mut offsets = Vec::with_capacity(m);
        let mut acc = 0;
        for &c in &spec.cardinalities {
            offsets.push(acc);
            acc += c;
        }
        Ok(Self {
            embeddings: get(EMBEDDINGS, &[acc, d])?,
            transforms: get(NODE_TRANSFORMS, &[m, d, d])?,
            head_weights: get(HEAD_WEIGHTS, &[k, m * d])?,
            head_bias: get(HEAD_BIAS, &[k])?,
            adj_logits: get(ADJ_LOGITS, &[k, m, m])?,
            offsets,
            spec,
        })
    }

    /// Fan-in uniform init of the predictive parameters; heads get zero bias.
    pub fn reinit_theta(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        let (m, d) = (self.spec.m, self.spec.d);
        let bd = 1.0 / (d as f64).sqrt();
        let bh = 1.0 / ((m * d) as f64).sqrt();
        for (id, bound) in [(self.embeddings, bd), (self.transforms, bd), (self.head_weights, bh)] {
            let n = store.value(id).len();
            store.value_mut(id).data_mut().copy_from_slice(&uniform(rng, n, bound));
        }
        store.value_mut(self.head_bias).data_mut().fill(0.0);
    }

    pub fn theta_ids(&self) -> Vec<ParamId> {
        vec![self.embeddings, self.transforms, self.head_weights, self.head_bias]
    }

    pub fn adj_logits(&self, store: &ParamStore) -> Result<AdjLogits> {
        AdjLogits::from_tensor(store.value(self.adj_logits).clone())
    }

    /// Embedding rows looked up by a batch, row-major `[B, m]`.
    pub fn embedding_rows(&self, batch: &Batch) -> Result<Vec<usize>> {
        let m = self.spec.m;
        if batch.n_features != m {
            return Err(FivesError::Dimension {
                left: vec![batch.len(), batch.n_features],
                right: vec![m],
                context: "batch features vs model",
            });
        }
        batch
            .codes
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let col = i % m;
                let c = c as usize;
                if c >= self.spec.cardinalities[col] {
                    return Err(FivesError::Lookup(format!(
                        "code {c} outside vocabulary of column {col} (size {})",
                        self.spec.cardinalities[col]
                    )));
                }
                Ok(self.offsets[col] + c)
            })
            .collect()
    }
}

/// Which parameters a forward pass records for backward.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradTarget {
    None,
    /// Predictive parameters only; `H` is a constant.
    Theta,
    /// `H` only; the predictive parameters are constants.
    Arch,
    Both,
}

impl GradTarget {
    fn theta(self) -> bool {
        matches!(self, Self::Theta | Self::Both)
    }

    fn arch(self) -> bool {
        matches!(self, Self::Arch | Self::Both)
    }
}

/// Adjacency used by a forward pass.
#[derive(Debug, Clone, Copy)]
pub enum AdjSource<'a> {
    /// Built from the stored `H` (re-scaled at `build.tau`).
    Learned(&'a AdjacencyBuild),
    /// A frozen tensor used as-is.
    Fixed(&'a AdjTensor),
}

/// Recorded forward pass.
#[derive(Debug)]
pub struct Forward {
    pub tape: Tape,
    pub loss: Var,
    pub head_losses: Vec<Var>,
    /// `head_probs[k][b]`.
    pub head_probs: Vec<Vec<f64>>,
}

impl Forward {
    pub fn loss_value(&self) -> f64 {
        self.tape.scalar(self.loss)
    }

    /// Mean of the head probabilities per sample.
    pub fn mean_probs(&self) -> Vec<f64> {
        mean_of_heads(&self.head_probs)
    }
}

pub fn mean_of_heads(head_probs: &[Vec<f64>]) -> Vec<f64> {
    let k = head_probs.len() as f64;
    let n = head_probs.first().map_or(0, Vec::len);
    (0..n).map(|b| head_probs.iter().map(|h| h[b]).sum::<f64>() / k).collect()
}

/// Inverted dropout: rate and the generator that draws masks.
pub struct Dropout<'a, R: Rng> {
    pub rate: f64,
    pub rng: &'a mut R,
}

fn leaf(tape: &mut Tape, store: &ParamStore, id: ParamId, train: bool) -> Var {
    if train {
        tape.param(store, id)
    } else {
        tape.constant(store.value(id).clone())
    }
}

fn leaf_slice(tape: &mut Tape, store: &ParamStore, id: ParamId, offset: usize, shape: &[usize], train: bool) -> Result<Var> {
    if train {
        tape.param_slice(store, id, offset, shape)
    } else {
        let n: usize = shape.iter().product();
        let data = store.value(id).data()[offset..offset + n].to_vec();
        Ok(tape.constant(Tensor::new(shape.to_vec(), data)?))
    }
}

/// Full forward pass of a batch: embeddings, `K - 1` propagation layers,
/// `K` heads and the multi-head loss.
pub fn forward_full<R: Rng>(
    store: &ParamStore,
    layout: &ModelLayout,
    batch: &Batch,
    adj: AdjSource<'_>,
    target: GradTarget,
    dropout: Option<Dropout<'_, R>>,
    aggregate_eps: f64,
) -> Result<Forward> {
    let ModelSpec { k, m, d, .. } = layout.spec;
    let bsz = batch.len();
    if bsz == 0 {
        return Err(FivesError::Contract("empty batch".into()));
    }
    let mut tape = Tape::new();

    let slices: Vec<Var> = match adj {
        AdjSource::Learned(build) => {
            let h;
            let source = if target.arch() {
                LogitSource::Param(store, layout.adj_logits)
            } else {
                h = layout.adj_logits(store)?;
                LogitSource::Fixed(&h)
            };
            adjacency_on_tape(&mut tape, source, build)?.0
        }
        AdjSource::Fixed(a) => {
            if a.k() != k || a.m() != m {
                return Err(FivesError::Dimension {
                    left: a.tensor().shape().to_vec(),
                    right: vec![k, m, m],
                    context: "fixed adjacency vs model",
                });
            }
            (0..k)
                .map(|l| Tensor::matrix(m, m, a.slice(l).to_vec()).map(|t| tape.constant(t)))
                .collect::<Result<_>>()?
        }
    };

    let train = target.theta();
    let table = leaf(&mut tape, store, layout.embeddings, train);
    let rows = layout.embedding_rows(batch)?;
    let n0 = tape.gather(table, rows)?;
    let n0 = tape.reshape(n0, vec![bsz, m, d])?;

    let mut states = vec![n0];
    if k > 1 {
        let w = leaf(&mut tape, store, layout.transforms, train);
        let messages = tape.node_transform(n0, w)?;
        let mut dropout = dropout;
        for &a_k in &slices[1..] {
            let prev = *states.last().expect("n0 present");
            let p = tape.aggregate(messages, a_k, aggregate_eps)?;
            let mut n = tape.mul(p, prev)?;
            if let Some(dr) = dropout.as_mut() {
                if dr.rate > 0.0 {
                    let keep = 1.0 - dr.rate;
                    let mask: Vec<f64> = (0..bsz * m * d)
                        .map(|_| if dr.rng.random::<f64>() < dr.rate { 0.0 } else { 1.0 / keep })
                        .collect();
                    n = tape.mask_mul(n, mask)?;
                }
            }
            states.push(n);
        }
    }

    let mut head_losses = Vec::with_capacity(k);
    let mut head_probs = Vec::with_capacity(k);
    for (layer, &n) in states.iter().enumerate() {
        let flat = tape.reshape(n, vec![bsz, m * d])?;
        let w = leaf_slice(&mut tape, store, layout.head_weights, layer * m * d, &[1, m * d], train)?;
        let b = leaf_slice(&mut tape, store, layout.head_bias, layer, &[1], train)?;
        let z = tape.linear(flat, w, b)?;
        let p = tape.sigmoid(z);
        head_probs.push(tape.value(p).data().to_vec());
        head_losses.push(tape.bce(p, batch.labels.clone())?);
    }
    let mut total = head_losses[0];
    for &l in &head_losses[1..] {
        total = tape.add(total, l)?;
    }
    let loss = tape.scale(total, 1.0 / k as f64);
    Ok(Forward {
        tape,
        loss,
        head_losses,
        head_probs,
    })
}

/// `-(1/N) sum_b (1/K) sum_k [y log p + (1 - y) log(1 - p)]` with
/// probabilities clipped to `[1e-12, 1 - 1e-12]`; `probs[k][b]`.
pub fn multi_head_loss(probs: &[Vec<f64>], labels: &[f64]) -> Result<f64> {
    if probs.is_empty() || labels.is_empty() || probs.iter().any(|h| h.len() != labels.len()) {
        return Err(FivesError::Dimension {
            left: vec![probs.len(), probs.first().map_or(0, Vec::len)],
            right: vec![labels.len()],
            context: "head predictions vs labels",
        });
    }
    let k = probs.len() as f64;
    let n = labels.len() as f64;
    let mut total = 0.0;
    for head in probs {
        for (&p, &y) in head.iter().zip(labels) {
            let p = p.clamp(PROB_CLIP, 1.0 - PROB_CLIP);
            total -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
        }
    }
    Ok(total / (k * n))
}

/// `n^(0)` for one sample: the looked-up embedding rows, `[m, d]`.
pub fn embed_sample(store: &ParamStore, layout: &ModelLayout, codes: &[u32]) -> Result<Tensor> {
    let batch = Batch {
        indices: vec![0],
        codes: codes.to_vec(),
        labels: vec![0.0],
        n_features: codes.len(),
    };
    let rows = layout.embedding_rows(&batch)?;
    let d = layout.spec.d;
    let table = store.value(layout.embeddings).data();
    let data = rows.iter().flat_map(|&r| table[r * d..(r + 1) * d].to_vec()).collect();
    Tensor::matrix(rows.len(), d, data)
}

/// One propagation step for a single sample: `p_i` is the weighted mean of
/// `W_j n0_j` under row `i` of `a_k`, and `n_i = p_i * n_prev_i`.
pub fn propagate_layer(n_prev: &Tensor, n0: &Tensor, a_k: &[f64], transforms: &Tensor, eps: f64) -> Result<Tensor> {
    let &[m, d] = n0.shape() else {
        return Err(FivesError::Dimension {
            left: n0.shape().to_vec(),
            right: vec![],
            context: "n0 must be [m, d]",
        });
    };
    if n_prev.shape() != n0.shape() || a_k.len() != m * m || transforms.shape() != [m, d, d] {
        return Err(FivesError::Dimension {
            left: n_prev.shape().to_vec(),
            right: transforms.shape().to_vec(),
            context: "propagate_layer shapes",
        });
    }
    let mut messages = Vec::with_capacity(m * d);
    for j in 0..m {
        let wj = &transforms.data()[j * d * d..(j + 1) * d * d];
        let x = &n0.data()[j * d..(j + 1) * d];
        for r in 0..d {
            messages.push(wj[r * d..(r + 1) * d].iter().zip(x).map(|(a, b)| a * b).sum());
        }
    }
    let messages = Tensor::matrix(m, d, messages)?;
    let mut out = Vec::with_capacity(m * d);
    for i in 0..m {
        let p = weighted_mean_aggregate(&messages, &a_k[i * m..(i + 1) * m], eps)?;
        out.extend(p.data().iter().zip(&n_prev.data()[i * d..(i + 1) * d]).map(|(a, b)| a * b));
    }
    Tensor::matrix(m, d, out)
}

/// `sigma(w . concat(n) + b)` for one sample's `[m, d]` representations.
pub fn predict_head(n: &Tensor, w: &[f64], b: f64) -> Result<f64> {
    if w.len() != n.len() {
        return Err(FivesError::Dimension {
            left: n.shape().to_vec(),
            right: vec![w.len()],
            context: "head weights vs representations",
        });
    }
    let z: f64 = n.data().iter().zip(w).map(|(a, c)| a * c).sum::<f64>() + b;
    Ok(sigmoid_scalar(z))
}

/// Loss and AUC of a model over a whole table, dropout off.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub loss: f64,
    pub auc: f64,
}

/// Per-row mean-of-heads probabilities and the mean multi-head loss.
pub fn predict_table(
    store: &ParamStore,
    layout: &ModelLayout,
    table: &EncodedTable,
    adj: AdjSource<'_>,
    aggregate_eps: f64,
    batch_size: usize,
) -> Result<(Vec<f64>, f64)> {
    let mut probs = Vec::with_capacity(table.n_rows());
    let mut loss_sum = 0.0;
    for batch in iter_batches(table, batch_size.max(1), false, 0) {
        let f = forward_full::<rand_chacha::ChaCha8Rng>(store, layout, &batch, adj, GradTarget::None, None, aggregate_eps)?;
        loss_sum += f.loss_value() * batch.len() as f64;
        probs.extend(f.mean_probs());
    }
    Ok((probs, loss_sum / table.n_rows().max(1) as f64))
}

pub fn evaluate(
    store: &ParamStore,
    layout: &ModelLayout,
    table: &EncodedTable,
    adj: AdjSource<'_>,
    aggregate_eps: f64,
    batch_size: usize,
) -> Result<Evaluation> {
    let (probs, loss) = predict_table(store, layout, table, adj, aggregate_eps, batch_size)?;
    Ok(Evaluation {
        loss,
        auc: auc(&probs, &table.labels)?,
    })
}

#[cfg(test)]
mod tests;
