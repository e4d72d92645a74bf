//! Dataset splitting, class re-weighting, Adam, and the training loop with
//! validation-F1 early stopping.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor};
use crate::diffusion::AugmentedFeatures;
use crate::error::{Error, Result};
use crate::graph::{SharedGraph, SupermoduleMap};
use crate::metrics;
use crate::model::{
    bind_params, compound_loss, forward, init_params, softmax2, ModelConfig, ModelContext,
    ModelDims, ModelParams,
};

/// Split ratios and shuffle seed. Stratification is always on labels.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitSpec {
    pub ratios: (f64, f64, f64),
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            ratios: (0.8, 0.1, 0.1),
            seed: 0,
        }
    }
}

impl SplitSpec {
    fn validate(&self) -> Result<()> {
        let (a, b, c) = self.ratios;
        if a < 0.0 || b < 0.0 || c < 0.0 {
            return Err(Error::invalid("split ratios must be non-negative"));
        }
        if (a + b + c - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "split ratios must sum to 1, got {}",
                a + b + c
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Largest-remainder apportionment of `n` items over three quotas.
/// Every bucket lands within one item of its exact proportional share.
fn apportion(n: usize, ratios: (f64, f64, f64)) -> [usize; 3] {
    let quotas = [n as f64 * ratios.0, n as f64 * ratios.1, n as f64 * ratios.2];
    let mut counts = [0usize; 3];
    let mut assigned = 0;
    for (i, q) in quotas.iter().enumerate() {
        counts[i] = q.floor() as usize;
        assigned += counts[i];
    }
    // hand leftovers to the largest fractional parts; ties favor the
    // earlier bucket (train, then val, then test)
    let mut rema: Vec<(usize, f64)> = quotas
        .iter()
        .enumerate()
        .map(|(i, q)| (i, q - q.floor()))
        .collect();
    rema.sort_by(|x, y| y.1.partial_cmp(&x.1).unwrap().then(x.0.cmp(&y.0)));
    for k in 0..(n - assigned) {
        counts[rema[k % 3].0] += 1;
    }
    counts
}

/// Deterministic stratified split: within each class, indices are shuffled
/// by the seed and apportioned 8:1:1 (or as configured) with largest
/// remainders, so per-class counts sit within one sample of exact
/// proportionality. Requires at least 10 samples of each class.
pub fn stratified_split(labels: &[u8], spec: &SplitSpec) -> Result<Split> {
    spec.validate()?;
    if let Some(&bad) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::invalid(format!("label {bad} is not binary")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut split = Split {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for class in [0u8, 1u8] {
        let mut members: Vec<usize> = labels
            .iter()
            .enumerate()
            .filter(|&(_, &l)| l == class)
            .map(|(i, _)| i)
            .collect();
        if members.len() < 10 {
            return Err(Error::invalid(format!(
                "class {class} has only {} samples; stratified 8:1:1 splitting needs at least 10 per class",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        let counts = apportion(members.len(), spec.ratios);
        let (train_n, val_n) = (counts[0], counts[1]);
        split.train.extend(&members[..train_n]);
        split.val.extend(&members[train_n..train_n + val_n]);
        split.test.extend(&members[train_n + val_n..]);
    }
    split.train.sort_unstable();
    split.val.sort_unstable();
    split.test.sort_unstable();
    Ok(split)
}

/// Inverse-frequency class weights w_c = n / (2 n_c); the weighted average
/// weight over the samples is exactly 1.
pub fn class_weights(labels: &[u8]) -> Result<[f64; 2]> {
    let n1 = labels.iter().filter(|&&l| l == 1).count();
    let n0 = labels.len() - n1;
    if n0 == 0 || n1 == 0 {
        return Err(Error::invalid(
            "class weights need both classes in the training split",
        ));
    }
    let n = labels.len() as f64;
    Ok([n / (2.0 * n0 as f64), n / (2.0 * n1 as f64)])
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    fn validate(&self) -> Result<()> {
        if self.lr <= 0.0 || self.eps <= 0.0 {
            return Err(Error::invalid("learning rate and eps must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::invalid("Adam betas must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// First and second moment accumulators, one pair per parameter tensor.
pub struct AdamState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
}

impl AdamState {
    pub fn for_shapes(shapes: &[(usize, usize)]) -> Self {
        AdamState {
            m: shapes.iter().map(|&s| Array2::zeros(s)).collect(),
            v: shapes.iter().map(|&s| Array2::zeros(s)).collect(),
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }
}

/// One bias-corrected Adam update over an aligned parameter/gradient list.
pub fn adam_step(
    params: &mut [&mut Tensor],
    grads: &[Tensor],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    cfg.validate()?;
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::shape(
            "parameter, gradient, and optimizer-state lengths differ",
        ));
    }
    state.t += 1;
    let bc1 = 1.0 - cfg.beta1.powi(state.t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(state.t as i32);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        if p.dim() != g.dim() {
            return Err(Error::shape(format!(
                "gradient shape {:?} does not match parameter {:?}",
                g.dim(),
                p.dim()
            )));
        }
        azip(m, g, |m, &g| *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g);
        azip(v, g, |v, &g| *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g);
        for ((p, &m), &v) in p.iter_mut().zip(m.iter()).zip(v.iter()) {
            let mhat = m / bc1;
            let vhat = v / bc2;
            *p -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

fn azip(a: &mut Tensor, b: &Tensor, f: impl Fn(&mut f64, &f64)) {
    a.zip_mut_with(b, f);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassWeightMode {
    InverseFrequency,
    None,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub max_epochs: usize,
    /// Consecutive non-improving epochs tolerated before stopping; 0 stops
    /// at the first epoch that fails to improve validation F1.
    pub patience: usize,
    /// None trains full-batch.
    pub batch_size: Option<usize>,
    pub seed: u64,
    pub class_weight_mode: ClassWeightMode,
    /// Reduce per-compound gradients in index order so runs are
    /// bit-reproducible regardless of thread scheduling.
    pub deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            adam: AdamConfig::default(),
            max_epochs: 500,
            patience: 30,
            batch_size: None,
            seed: 0,
            class_weight_mode: ClassWeightMode::InverseFrequency,
            deterministic: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.adam.validate()?;
        if self.max_epochs == 0 {
            return Err(Error::invalid("max_epochs must be at least 1"));
        }
        if self.batch_size == Some(0) {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        Ok(())
    }
}

/// One line of the JSON-lines training log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub lc: f64,
    pub lr_loss: f64,
    pub val_acc: f64,
    pub val_f1: f64,
    pub val_aupr: f64,
}

pub struct TrainOutcome {
    /// Parameters of the best validation-F1 epoch (initial parameters if
    /// training diverged before completing an epoch).
    pub params: ModelParams,
    pub log: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_f1: f64,
    pub epochs_run: usize,
    pub stopped_early: bool,
    /// Loss or parameters became non-finite; `params` holds the last good
    /// checkpoint.
    pub diverged: bool,
}

/// Summed loss components and per-tensor gradient sums over a batch.
struct BatchGrads {
    grads: Vec<Tensor>,
    total: f64,
    lc: f64,
    lr: f64,
}

fn compound_grads(
    params: &ModelParams,
    ctx: &ModelContext,
    feats: &AugmentedFeatures,
    label: u8,
    weight: f64,
    gamma: f64,
) -> Result<BatchGrads> {
    let tape = Tape::new();
    let bp = bind_params(&tape, params, true);
    let xg = tape.input(feats.matrix.clone());
    let fwd = forward(&tape, &bp, ctx, xg)?;
    let loss = compound_loss(&tape, &fwd, xg, label, weight, gamma)?;
    let total = tape.value(loss.total)[(0, 0)];
    let lc = tape.value(loss.classification)[(0, 0)];
    let lr = tape.value(loss.reconstruction)[(0, 0)];
    tape.backward(loss.total)?;
    let grads = bp
        .ordered
        .iter()
        .map(|&id| {
            tape.grad(id)
                .unwrap_or_else(|| Tensor::zeros(tape.shape(id)))
        })
        .collect();
    Ok(BatchGrads {
        grads,
        total,
        lc,
        lr,
    })
}

fn merge(mut acc: BatchGrads, other: BatchGrads) -> BatchGrads {
    for (a, b) in acc.grads.iter_mut().zip(&other.grads) {
        *a += b;
    }
    acc.total += other.total;
    acc.lc += other.lc;
    acc.lr += other.lr;
    acc
}

/// Gradients and losses summed over `batch`. In deterministic mode the
/// per-compound results are reduced in index order; otherwise reduction
/// order follows thread scheduling.
fn batch_gradients(
    params: &ModelParams,
    ctx: &ModelContext,
    feats: &[AugmentedFeatures],
    labels: &[u8],
    weights: [f64; 2],
    gamma: f64,
    batch: &[usize],
    deterministic: bool,
) -> Result<BatchGrads> {
    let one = |&c: &usize| -> Result<BatchGrads> {
        compound_grads(
            params,
            ctx,
            &feats[c],
            labels[c],
            weights[labels[c] as usize],
            gamma,
        )
    };
    if deterministic {
        let parts: Vec<BatchGrads> = batch.par_iter().map(one).collect::<Result<_>>()?;
        parts
            .into_iter()
            .reduce(merge)
            .ok_or_else(|| Error::invalid("empty batch"))
    } else {
        batch
            .par_iter()
            .map(one)
            .try_reduce_with(|a, b| Ok(merge(a, b)))
            .unwrap_or_else(|| Err(Error::invalid("empty batch")))
    }
}

/// Positive-class scores for the given compounds under frozen parameters.
pub fn predict_scores(
    params: &ModelParams,
    ctx: &ModelContext,
    feats: &[AugmentedFeatures],
    ids: &[usize],
) -> Result<Vec<f64>> {
    ids.par_iter()
        .map(|&c| {
            let tape = Tape::new();
            let bp = bind_params(&tape, params, false);
            let xg = tape.input(feats[c].matrix.clone());
            let fwd = forward(&tape, &bp, ctx, xg)?;
            let (_, p1) = softmax2(&tape.value(fwd.logits));
            Ok(p1)
        })
        .collect()
}

fn params_healthy(params: &ModelParams) -> bool {
    // bound well below sqrt(f64::MAX) so downstream squares stay finite
    params
        .flatten()
        .iter()
        .all(|(_, t)| t.iter().all(|v| v.is_finite() && v.abs() < 1e50))
}

/// Train the autoencoder. Labels must cover every compound; the split
/// indexes into the feature/label arrays.
#[allow(clippy::too_many_arguments)]
pub fn train_gaa(
    graph: &SharedGraph,
    modules: &SupermoduleMap,
    feats: &[AugmentedFeatures],
    labels: &[u8],
    split: &Split,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    model_cfg.validate()?;
    if feats.len() != labels.len() {
        return Err(Error::shape("feature count differs from label count"));
    }
    if split.train.is_empty() || split.val.is_empty() {
        return Err(Error::invalid("training and validation splits must be non-empty"));
    }
    let f_prime = feats[0].width();
    if feats.iter().any(|f| f.width() != f_prime) {
        return Err(Error::shape("augmented feature widths differ across compounds"));
    }
    let dims = ModelDims {
        n_nodes: graph.n_nodes(),
        f_prime,
        n_modules: modules.n_modules(),
    };
    let ctx = ModelContext::new(graph, modules, model_cfg.aggregator);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = init_params(model_cfg, &dims, &mut rng)?;

    let train_labels: Vec<u8> = split.train.iter().map(|&i| labels[i]).collect();
    let weights = match cfg.class_weight_mode {
        ClassWeightMode::InverseFrequency => class_weights(&train_labels)?,
        ClassWeightMode::None => [1.0, 1.0],
    };
    let val_labels: Vec<u8> = split.val.iter().map(|&i| labels[i]).collect();

    let shapes: Vec<(usize, usize)> = params
        .flatten()
        .iter()
        .map(|(_, t)| (t.nrows(), t.ncols()))
        .collect();
    let mut adam = AdamState::for_shapes(&shapes);

    let mut best_params = params.clone();
    let mut best_f1 = f64::NEG_INFINITY;
    let mut best_epoch = 0usize;
    let mut bad_epochs = 0usize;
    let mut log = Vec::new();
    let mut diverged = false;
    let mut stopped_early = false;
    let mut epochs_run = 0usize;

    'epochs: for epoch in 1..=cfg.max_epochs {
        let mut order = split.train.clone();
        let batches: Vec<Vec<usize>> = match cfg.batch_size {
            None => vec![order],
            Some(bs) => {
                order.shuffle(&mut rng);
                order.chunks(bs).map(|c| c.to_vec()).collect()
            }
        };
        let mut sum_total = 0.0;
        let mut sum_lc = 0.0;
        let mut sum_lr = 0.0;
        for batch in &batches {
            let bg = batch_gradients(
                &params,
                &ctx,
                feats,
                labels,
                weights,
                model_cfg.gamma,
                batch,
                cfg.deterministic,
            )?;
            if !(bg.total.is_finite() && bg.lc.is_finite() && bg.lr.is_finite()) {
                diverged = true;
                break 'epochs;
            }
            sum_total += bg.total;
            sum_lc += bg.lc;
            sum_lr += bg.lr;
            let scale = 1.0 / batch.len() as f64;
            let grads: Vec<Tensor> = bg.grads.into_iter().map(|g| g.mapv(|v| v * scale)).collect();
            let mut slots: Vec<&mut Tensor> = params
                .flatten_mut()
                .into_iter()
                .map(|(_, t)| t)
                .collect();
            adam_step(&mut slots, &grads, &mut adam, &cfg.adam)?;
            if !params_healthy(&params) {
                diverged = true;
                break 'epochs;
            }
        }
        epochs_run = epoch;
        let n_train = split.train.len() as f64;

        let val_scores = predict_scores(&params, &ctx, feats, &split.val)?;
        let val = metrics::evaluate(&val_scores, &val_labels, 0.5)?;
        log.push(EpochRecord {
            epoch,
            train_loss: sum_total / n_train,
            lc: sum_lc / n_train,
            lr_loss: sum_lr / n_train,
            val_acc: val.acc,
            val_f1: val.f1,
            val_aupr: val.aupr,
        });

        if val.f1 > best_f1 {
            best_f1 = val.f1;
            best_params = params.clone();
            best_epoch = epoch;
            bad_epochs = 0;
        } else {
            bad_epochs += 1;
            if bad_epochs > cfg.patience {
                stopped_early = true;
                break;
            }
        }
    }

    if diverged {
        log::warn!("training diverged; keeping the last good checkpoint");
    }
    Ok(TrainOutcome {
        params: best_params,
        log,
        best_epoch,
        best_val_f1: best_f1,
        epochs_run,
        stopped_early,
        diverged,
    })
}
