//! Alternating optimization of the predictive parameters (training split)
//! and the adjacency logits (validation split) under an annealed
//! temperature, plus fixed-architecture retraining.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{iter_batches, Batch, EncodedTable};
use crate::diffcore::{Optimizer, ParamStore, UpdateRule};
use crate::error::{FivesError, Result};
use crate::graph::{
    compute_adjacency, rescale, AdjMode, AdjTensor, AdjacencyBuild, AdjacencyMode, AdjacencySnapshot,
    ScheduleShape, TemperatureSchedule, Thresholds, DEFAULT_THRESHOLD,
};
use crate::model::{evaluate, forward_full, AdjSource, Dropout, Evaluation, GradTarget, ModelLayout, ModelSpec};
use crate::tensor::Tensor;

/// Hyperparameters of one search run; the JSON config file mirrors it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    /// Highest interaction order; the model has `K` heads and `K - 1`
    /// propagation layers.
    #[serde(rename = "K")]
    pub k: usize,
    /// Embedding dimension.
    pub d: usize,
    /// Learning rate of the predictive parameters.
    pub alpha1: f64,
    /// Learning rate of the adjacency logits.
    pub alpha2: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub l2: f64,
    pub dropout: f64,
    pub tau_start: f64,
    pub tau_end: f64,
    pub tau_shape: ScheduleShape,
    /// Per trainable slice; defaults to 0.5 everywhere.
    pub thresholds: Option<Vec<f64>>,
    pub seed: u64,
    pub adjacency_mode: AdjacencyMode,
    pub straight_through: bool,
    pub optimizer: UpdateRule,
    pub aggregate_eps: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            k: 2,
            d: 8,
            alpha1: 5e-3,
            alpha2: 5e-3,
            epochs: 10,
            batch_size: 128,
            l2: 1e-4,
            dropout: 0.3,
            tau_start: 1.0,
            tau_end: 0.02,
            tau_shape: ScheduleShape::Linear,
            thresholds: None,
            seed: 0,
            adjacency_mode: AdjacencyMode::Recursive,
            straight_through: false,
            optimizer: UpdateRule::Adam,
            aggregate_eps: 1e-6,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(FivesError::Config(msg));
        if self.k == 0 {
            return bad("K must be at least 1".into());
        }
        if self.d == 0 || self.batch_size == 0 {
            return bad(format!("d and batch_size must be positive, got {} and {}", self.d, self.batch_size));
        }
        if !(self.alpha1 > 0.0) || !(self.alpha2 >= 0.0) || !(self.l2 >= 0.0) {
            return bad(format!(
                "need alpha1 > 0, alpha2 >= 0, l2 >= 0, got {}, {}, {}",
                self.alpha1, self.alpha2, self.l2
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(self.aggregate_eps > 0.0) {
            return bad(format!("aggregate_eps {} must be positive", self.aggregate_eps));
        }
        self.schedule(0)?;
        self.thresholds().validate(self.k)
    }

    pub fn thresholds(&self) -> Thresholds {
        match &self.thresholds {
            Some(t) => Thresholds(t.clone()),
            None => Thresholds::uniform(self.k, DEFAULT_THRESHOLD),
        }
    }

    pub fn schedule(&self, total_steps: u64) -> Result<TemperatureSchedule> {
        TemperatureSchedule::new(self.tau_start, self.tau_end, total_steps, self.tau_shape)
    }

    pub fn build(&self, tau: f64) -> AdjacencyBuild {
        AdjacencyBuild {
            mode: self.adjacency_mode,
            thresholds: self.thresholds(),
            tau: Some(tau),
            straight_through: self.straight_through,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Metrics recorded at the end of each epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_auc: f64,
    pub tau: f64,
    pub seconds: f64,
}

impl EpochMetrics {
    /// Same metrics with the wall-clock field cleared.
    pub fn without_timing(&self) -> Self {
        Self { seconds: 0.0, ..self.clone() }
    }
}

/// Output of [`fit`].
#[derive(Debug, Clone)]
pub struct SearchResult {
    pub config: SearchConfig,
    pub layout: ModelLayout,
    /// Predictive parameters and the final adjacency logits.
    pub params: ParamStore,
    /// Soft adjacency from the final logits (before re-scaling) and its
    /// binarization.
    pub adjacency: AdjacencySnapshot,
    pub metrics: Vec<EpochMetrics>,
    /// Temperature used by every step.
    pub tau_trace: Vec<f64>,
}

impl SearchResult {
    pub fn final_val_auc(&self) -> Option<f64> {
        self.metrics.last().map(|m| m.val_auc)
    }

    /// The soft adjacency re-scaled at the final temperature, as seen by
    /// the model at the end of the search.
    pub fn final_adjacency(&self) -> Result<AdjTensor> {
        rescale(&self.adjacency.soft, self.config.tau_end)
    }

    /// Writes `adjacency.json`, `params.json`, `model.json`, `config.json`
    /// and `metrics.ndjson` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.adjacency.save(&dir.join("adjacency.json"))?;
        self.params.save(&dir.join("params.json"))?;
        self.layout.spec.save(&dir.join("model.json"))?;
        std::fs::write(dir.join("config.json"), serde_json::to_string_pretty(&self.config)?)?;
        let mut f = std::fs::File::create(dir.join("metrics.ndjson"))?;
        for m in &self.metrics {
            writeln!(f, "{}", serde_json::to_string(m)?)?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let config = SearchConfig::load(&dir.join("config.json"))?;
        let params = ParamStore::load(&dir.join("params.json"))?;
        let spec = ModelSpec::load(&dir.join("model.json"))?;
        let layout = ModelLayout::attach(spec, &params)?;
        let adjacency = AdjacencySnapshot::load(&dir.join("adjacency.json"))?;
        let text = std::fs::read_to_string(dir.join("metrics.ndjson"))?;
        let metrics = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<std::result::Result<Vec<EpochMetrics>, _>>()?;
        Ok(Self {
            config,
            layout,
            params,
            adjacency,
            metrics,
            tau_trace: Vec::new(),
        })
    }
}

/// SplitMix64 finalizer; derives independent seeds from one run seed.
fn derive_seed(seed: u64, tag: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(tag.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const INIT: u64 = 1;
const DROPOUT: u64 = 2;
const TRAIN_ORDER: u64 = 3;
const VAL_ORDER: u64 = 4;

fn check_inputs(train: &EncodedTable, val: &EncodedTable, config: &SearchConfig) -> Result<()> {
    config.validate()?;
    if train.n_rows() == 0 || val.n_rows() == 0 {
        return Err(FivesError::Config(format!(
            "search needs non-empty splits, got {} train and {} validation rows",
            train.n_rows(),
            val.n_rows()
        )));
    }
    if !train.shares_vocab_with(val) {
        return Err(FivesError::Config("train and validation tables do not share vocabularies".into()));
    }
    if train.n_features() < 2 {
        return Err(FivesError::Config(format!("search needs m >= 2 features, got {}", train.n_features())));
    }
    Ok(())
}

fn with_position(err: FivesError, epoch: usize, step: u64, tau: f64) -> FivesError {
    match err {
        FivesError::Numeric(what) => FivesError::Numeric(format!("{what} at epoch {epoch}, step {step}, tau {tau}")),
        other => other,
    }
}

/// One update of the predictive parameters; `H` is read but not recorded.
fn theta_step(
    store: &mut ParamStore,
    layout: &ModelLayout,
    opt: &mut Optimizer,
    batch: &Batch,
    adj: AdjSource<'_>,
    config: &SearchConfig,
    drop_rng: &mut ChaCha8Rng,
) -> Result<f64> {
    store.zero_grad();
    let dropout = Dropout { rate: config.dropout, rng: drop_rng };
    let f = forward_full(store, layout, batch, adj, GradTarget::Theta, Some(dropout), config.aggregate_eps)?;
    let loss = f.loss_value();
    if !loss.is_finite() {
        return Err(FivesError::Numeric("non-finite training loss".into()));
    }
    f.tape.backward(f.loss, store)?;
    opt.step(store, &layout.theta_ids())
        .map_err(|_| FivesError::Numeric("non-finite parameter gradient".into()))?;
    Ok(loss)
}

/// One update of the adjacency logits; the predictive parameters are
/// constants.
fn arch_step(
    store: &mut ParamStore,
    layout: &ModelLayout,
    opt: &mut Optimizer,
    batch: &Batch,
    build: &AdjacencyBuild,
    config: &SearchConfig,
    drop_rng: &mut ChaCha8Rng,
) -> Result<f64> {
    store.zero_grad();
    let dropout = Dropout { rate: config.dropout, rng: drop_rng };
    let f = forward_full(store, layout, batch, AdjSource::Learned(build), GradTarget::Arch, Some(dropout), config.aggregate_eps)?;
    let loss = f.loss_value();
    if !loss.is_finite() {
        return Err(FivesError::Numeric("non-finite validation loss".into()));
    }
    f.tape.backward(f.loss, store)?;
    opt.step(store, &[layout.adj_logits])
        .map_err(|_| FivesError::Numeric("non-finite adjacency gradient".into()))?;
    Ok(loss)
}

fn epoch_batches(table: &EncodedTable, config: &SearchConfig, tag: u64, epoch: usize) -> Vec<Batch> {
    iter_batches(table, config.batch_size, true, derive_seed(config.seed, tag, epoch as u64)).collect()
}

/// Runs the alternating search: per step one update of the predictive
/// parameters on a training batch, then one update of `H` on a validation
/// batch, cycling the shorter split.
pub fn fit(train: &EncodedTable, val: &EncodedTable, config: &SearchConfig) -> Result<SearchResult> {
    check_inputs(train, val, config)?;
    let spec = ModelSpec::for_table(train, config.k, config.d)?;
    let (layout, mut store) = ModelLayout::init(spec, &mut ChaCha8Rng::seed_from_u64(derive_seed(config.seed, INIT, 0)))?;
    let mut drop_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, DROPOUT, 0));

    let nb_train = train.n_rows().div_ceil(config.batch_size);
    let nb_val = val.n_rows().div_ceil(config.batch_size);
    let steps_per_epoch = nb_train.max(nb_val);
    // The last step runs at exactly tau_end.
    let schedule = config.schedule((config.epochs * steps_per_epoch).saturating_sub(1) as u64)?;

    let mut opt_theta = Optimizer::new(config.optimizer, config.alpha1, config.l2);
    let mut opt_arch = Optimizer::new(config.optimizer, config.alpha2, 0.0);

    let mut metrics = Vec::with_capacity(config.epochs);
    let mut tau_trace = Vec::with_capacity(config.epochs * steps_per_epoch);
    let mut step: u64 = 0;
    for epoch in 0..config.epochs {
        let started = Instant::now();
        let train_batches = epoch_batches(train, config, TRAIN_ORDER, epoch);
        let val_batches = epoch_batches(val, config, VAL_ORDER, epoch);
        let mut loss_sum = 0.0;
        let mut rows = 0usize;
        for s in 0..steps_per_epoch {
            let tau = schedule.at(step);
            tau_trace.push(tau);
            let build = config.build(tau);

            let tb = &train_batches[s % train_batches.len()];
            let loss = theta_step(&mut store, &layout, &mut opt_theta, tb, AdjSource::Learned(&build), config, &mut drop_rng)
                .map_err(|e| with_position(e, epoch, step, tau))?;
            if s < nb_train {
                loss_sum += loss * tb.len() as f64;
                rows += tb.len();
            }
            if config.alpha2 > 0.0 && config.k > 1 {
                let vb = &val_batches[s % val_batches.len()];
                arch_step(&mut store, &layout, &mut opt_arch, vb, &build, config, &mut drop_rng)
                    .map_err(|e| with_position(e, epoch, step, tau))?;
            }
            step += 1;
        }
        let tau = schedule.at(step);
        let eval = evaluate(&store, &layout, val, AdjSource::Learned(&config.build(tau)), config.aggregate_eps, config.batch_size.max(256))?;
        let m = EpochMetrics {
            epoch,
            train_loss: loss_sum / rows.max(1) as f64,
            val_loss: eval.loss,
            val_auc: eval.auc,
            tau,
            seconds: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: train_loss {:.5} val_loss {:.5} val_auc {:.5} tau {:.4}",
            m.train_loss,
            m.val_loss,
            m.val_auc,
            m.tau
        );
        metrics.push(m);
    }
    store.zero_grad();

    let h = layout.adj_logits(&store)?;
    let thresholds = config.thresholds();
    let soft = compute_adjacency(&h, &thresholds, config.adjacency_mode)?;
    let adjacency = AdjacencySnapshot::from_soft(soft, thresholds)?;
    Ok(SearchResult {
        config: config.clone(),
        layout,
        params: store,
        adjacency,
        metrics,
        tau_trace,
    })
}

/// Predictive parameters trained under a frozen adjacency.
#[derive(Debug, Clone)]
pub struct FixedArchOutcome {
    pub layout: ModelLayout,
    pub params: ParamStore,
    pub adjacency: AdjTensor,
    pub metrics: Vec<EpochMetrics>,
    pub val_auc: f64,
}

fn train_fixed(
    train: &EncodedTable,
    val: &EncodedTable,
    config: &SearchConfig,
    layout: ModelLayout,
    mut store: ParamStore,
    adjacency: AdjTensor,
    tau: f64,
) -> Result<FixedArchOutcome> {
    let mut drop_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, DROPOUT, 1));
    let mut opt = Optimizer::new(config.optimizer, config.alpha1, config.l2);
    let adj = AdjSource::Fixed(&adjacency);
    let eval_batch = config.batch_size.max(256);
    let mut metrics = Vec::with_capacity(config.epochs);
    let mut step = 0u64;
    for epoch in 0..config.epochs {
        let started = Instant::now();
        let mut loss_sum = 0.0;
        for tb in epoch_batches(train, config, TRAIN_ORDER, epoch) {
            let loss = theta_step(&mut store, &layout, &mut opt, &tb, adj, config, &mut drop_rng)
                .map_err(|e| with_position(e, epoch, step, tau))?;
            loss_sum += loss * tb.len() as f64;
            step += 1;
        }
        let Evaluation { loss, auc } = evaluate(&store, &layout, val, adj, config.aggregate_eps, eval_batch)?;
        metrics.push(EpochMetrics {
            epoch,
            train_loss: loss_sum / train.n_rows() as f64,
            val_loss: loss,
            val_auc: auc,
            tau,
            seconds: started.elapsed().as_secs_f64(),
        });
    }
    store.zero_grad();
    let val_auc = match metrics.last() {
        Some(m) => m.val_auc,
        None => evaluate(&store, &layout, val, adj, config.aggregate_eps, eval_batch)?.auc,
    };
    Ok(FixedArchOutcome {
        layout,
        params: store,
        adjacency,
        metrics,
        val_auc,
    })
}

/// Re-initializes the predictive parameters and trains them with `fixed`
/// as the adjacency throughout.
pub fn learn_from_scratch(
    fixed: &AdjTensor,
    train: &EncodedTable,
    val: &EncodedTable,
    config: &SearchConfig,
) -> Result<FixedArchOutcome> {
    check_inputs(train, val, config)?;
    if fixed.k() != config.k || fixed.m() != train.n_features() {
        return Err(FivesError::Dimension {
            left: fixed.tensor().shape().to_vec(),
            right: vec![config.k, train.n_features(), train.n_features()],
            context: "fixed adjacency vs config",
        });
    }
    let spec = ModelSpec::for_table(train, config.k, config.d)?;
    let (layout, store) = ModelLayout::init(spec, &mut ChaCha8Rng::seed_from_u64(derive_seed(config.seed, INIT, 0)))?;
    train_fixed(train, val, config, layout, store, fixed.clone(), 1.0)
}

/// Continues training the searched parameters with the adjacency frozen at
/// its final re-scaled value.
pub fn fine_tune(
    result: &SearchResult,
    train: &EncodedTable,
    val: &EncodedTable,
    config: &SearchConfig,
) -> Result<FixedArchOutcome> {
    check_inputs(train, val, config)?;
    let adjacency = result.final_adjacency()?;
    train_fixed(train, val, config, result.layout.clone(), result.params.clone(), adjacency, result.config.tau_end)
}

/// Binarized adjacency whose trainable entries are independent
/// Bernoulli(`density`) draws.
pub fn random_adjacency(m: usize, k: usize, density: f64, seed: u64) -> Result<AdjTensor> {
    if !(density > 0.0 && density <= 1.0) {
        return Err(FivesError::Config(format!("density {density} outside (0, 1]")));
    }
    if k == 0 || m == 0 {
        return Err(FivesError::Config(format!("random adjacency needs K, m >= 1, got {k}, {m}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Tensor::identity(m).into_data();
    for _ in 0..(k - 1) * m * m {
        data.push(if rng.random::<f64>() < density { 1.0 } else { 0.0 });
    }
    AdjTensor::new(Tensor::new(vec![k, m, m], data)?, AdjMode::Binarized)
}

#[cfg(test)]
mod tests;
