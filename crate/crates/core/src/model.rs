//! Graph attentional autoencoder: a two-layer GAT encoder, supermodule
//! pooling to a pathway-aligned embedding, a GAT decoder reconstructing the
//! diffused features, and a small MLP classification head.
//!
//! All model math is recorded on an autodiff [`Tape`]; the functions here
//! are pure in (parameters, graph structure, features). Parameters live in
//! plain structs and are bound onto a tape per forward pass, either
//! trainable or frozen.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{NodeId, PoolKind, Tape, Tensor};
use crate::error::{Error, Result};
use crate::graph::{SharedGraph, SupermoduleMap};

/// Negative slope of the LeakyReLU applied to attention logits.
pub const LEAKY_SLOPE: f64 = 0.2;
/// ELU saturation constant used by every nonlinearity in the model.
pub const ELU_ALPHA: f64 = 1.0;

/// One attention head: a projection and an attention vector over the
/// concatenated (destination, source) projected features.
#[derive(Debug, Clone)]
pub struct GatHead {
    /// F_out x F_in projection.
    pub w: Tensor,
    /// 2*F_out x 1 attention vector, destination half first.
    pub a: Tensor,
}

#[derive(Debug, Clone)]
pub struct GatLayerParams {
    pub heads: Vec<GatHead>,
}

impl GatLayerParams {
    pub fn n_heads(&self) -> usize {
        self.heads.len()
    }

    pub fn f_in(&self) -> usize {
        self.heads[0].w.ncols()
    }

    /// Width after concatenating all heads.
    pub fn out_width(&self) -> usize {
        self.heads.iter().map(|h| h.w.nrows()).sum()
    }
}

#[derive(Debug, Clone)]
pub struct EncoderParams {
    pub gat1: GatLayerParams,
    /// Single-head second layer.
    pub gat2: GatLayerParams,
    /// C x 1 projection of pooled module rows.
    pub pool_w: Tensor,
    /// D x 1 per-module bias.
    pub pool_b: Tensor,
}

#[derive(Debug, Clone)]
pub struct DecoderParams {
    /// N x D lift of the embedding into node space.
    pub lift_w: Tensor,
    /// N x 1 per-node bias.
    pub lift_b: Tensor,
    /// Single-head GAT over the lifted 1-wide node feature.
    pub gat: GatLayerParams,
    /// F' x F_dec output map back to feature width.
    pub out_w: Tensor,
}

#[derive(Debug, Clone)]
pub struct MlpParams {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

#[derive(Debug, Clone)]
pub struct ModelParams {
    pub encoder: EncoderParams,
    pub decoder: DecoderParams,
    pub mlp: MlpParams,
}

/// Pathway-aligned compound embedding; entry i corresponds to module i of
/// the supermodule map the model was built with.
#[derive(Debug, Clone)]
pub struct GraphEmbedding {
    /// D x 1 column.
    pub z: Tensor,
}

impl GraphEmbedding {
    pub fn values(&self) -> Vec<f64> {
        self.z.column(0).to_vec()
    }
}

/// Architecture hyperparameters. Widths are per-head where applicable.
/// Partial config sections fall back to these defaults field by field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub n_heads: usize,
    pub gat1_dim: usize,
    pub gat2_dim: usize,
    pub decoder_dim: usize,
    pub mlp_hidden: usize,
    pub aggregator: PoolKind,
    /// Weight of the reconstruction term in the loss; must lie in [0, 1].
    pub gamma: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n_heads: 4,
            gat1_dim: 16,
            gat2_dim: 16,
            decoder_dim: 16,
            mlp_hidden: 64,
            aggregator: PoolKind::Mean,
            gamma: 0.5,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_heads == 0
            || self.gat1_dim == 0
            || self.gat2_dim == 0
            || self.decoder_dim == 0
            || self.mlp_hidden == 0
        {
            return Err(Error::invalid("model widths must all be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::invalid(format!(
                "gamma must lie in [0, 1], got {}",
                self.gamma
            )));
        }
        Ok(())
    }
}

/// Problem sizes the parameter shapes depend on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub n_nodes: usize,
    /// Augmented feature width (one column per grid alpha).
    pub f_prime: usize,
    pub n_modules: usize,
}

fn glorot<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Tensor {
    let s = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-s..s))
}

fn gat_params_with<F: FnMut(usize, usize) -> Tensor>(
    n_heads: usize,
    f_out: usize,
    f_in: usize,
    mut make: F,
) -> GatLayerParams {
    GatLayerParams {
        heads: (0..n_heads)
            .map(|_| GatHead {
                w: make(f_out, f_in),
                a: make(2 * f_out, 1),
            })
            .collect(),
    }
}

fn params_with<F: FnMut(usize, usize) -> Tensor>(
    cfg: &ModelConfig,
    dims: &ModelDims,
    mut make: F,
) -> ModelParams {
    // biases start at zero; weights come from the supplied source
    let gat1 = gat_params_with(cfg.n_heads, cfg.gat1_dim, dims.f_prime, &mut make);
    let gat2 = gat_params_with(1, cfg.gat2_dim, cfg.n_heads * cfg.gat1_dim, &mut make);
    let pool_w = make(cfg.gat2_dim, 1);
    let pool_b = Tensor::zeros((dims.n_modules, 1));
    let lift_w = make(dims.n_nodes, dims.n_modules);
    let lift_b = Tensor::zeros((dims.n_nodes, 1));
    let dec_gat = gat_params_with(1, cfg.decoder_dim, 1, &mut make);
    let out_w = make(dims.f_prime, cfg.decoder_dim);
    let mlp_w1 = make(cfg.mlp_hidden, dims.n_modules);
    let mlp_b1 = Tensor::zeros((cfg.mlp_hidden, 1));
    let mlp_w2 = make(2, cfg.mlp_hidden);
    let mlp_b2 = Tensor::zeros((2, 1));
    ModelParams {
        encoder: EncoderParams {
            gat1,
            gat2,
            pool_w,
            pool_b,
        },
        decoder: DecoderParams {
            lift_w,
            lift_b,
            gat: dec_gat,
            out_w,
        },
        mlp: MlpParams {
            w1: mlp_w1,
            b1: mlp_b1,
            w2: mlp_w2,
            b2: mlp_b2,
        },
    }
}

/// Glorot-uniform initialization with zero biases, deterministic per rng
/// state. Tensors are drawn in the fixed parameter order.
pub fn init_params<R: Rng>(cfg: &ModelConfig, dims: &ModelDims, rng: &mut R) -> Result<ModelParams> {
    cfg.validate()?;
    if dims.n_nodes < 2 || dims.f_prime == 0 || dims.n_modules == 0 {
        return Err(Error::invalid("model dimensions must be positive"));
    }
    Ok(params_with(cfg, dims, |r, c| glorot(rng, r, c)))
}

fn zeros_params(cfg: &ModelConfig, dims: &ModelDims) -> ModelParams {
    params_with(cfg, dims, |r, c| Tensor::zeros((r, c)))
}

impl ModelParams {
    /// Named tensors in a fixed traversal order. Optimizer state,
    /// checkpoints, and gradient vectors all align with this order.
    pub fn flatten(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (k, h) in self.encoder.gat1.heads.iter().enumerate() {
            out.push((format!("encoder.gat1.head{k}.w"), &h.w));
            out.push((format!("encoder.gat1.head{k}.a"), &h.a));
        }
        for (k, h) in self.encoder.gat2.heads.iter().enumerate() {
            out.push((format!("encoder.gat2.head{k}.w"), &h.w));
            out.push((format!("encoder.gat2.head{k}.a"), &h.a));
        }
        out.push(("encoder.pool_w".into(), &self.encoder.pool_w));
        out.push(("encoder.pool_b".into(), &self.encoder.pool_b));
        out.push(("decoder.lift_w".into(), &self.decoder.lift_w));
        out.push(("decoder.lift_b".into(), &self.decoder.lift_b));
        for (k, h) in self.decoder.gat.heads.iter().enumerate() {
            out.push((format!("decoder.gat.head{k}.w"), &h.w));
            out.push((format!("decoder.gat.head{k}.a"), &h.a));
        }
        out.push(("decoder.out_w".into(), &self.decoder.out_w));
        out.push(("mlp.w1".into(), &self.mlp.w1));
        out.push(("mlp.b1".into(), &self.mlp.b1));
        out.push(("mlp.w2".into(), &self.mlp.w2));
        out.push(("mlp.b2".into(), &self.mlp.b2));
        out
    }

    pub fn flatten_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = Vec::new();
        for (k, h) in self.encoder.gat1.heads.iter_mut().enumerate() {
            out.push((format!("encoder.gat1.head{k}.w"), &mut h.w));
            out.push((format!("encoder.gat1.head{k}.a"), &mut h.a));
        }
        for (k, h) in self.encoder.gat2.heads.iter_mut().enumerate() {
            out.push((format!("encoder.gat2.head{k}.w"), &mut h.w));
            out.push((format!("encoder.gat2.head{k}.a"), &mut h.a));
        }
        out.push(("encoder.pool_w".into(), &mut self.encoder.pool_w));
        out.push(("encoder.pool_b".into(), &mut self.encoder.pool_b));
        out.push(("decoder.lift_w".into(), &mut self.decoder.lift_w));
        out.push(("decoder.lift_b".into(), &mut self.decoder.lift_b));
        for (k, h) in self.decoder.gat.heads.iter_mut().enumerate() {
            out.push((format!("decoder.gat.head{k}.w"), &mut h.w));
            out.push((format!("decoder.gat.head{k}.a"), &mut h.a));
        }
        out.push(("decoder.out_w".into(), &mut self.decoder.out_w));
        out.push(("mlp.w1".into(), &mut self.mlp.w1));
        out.push(("mlp.b1".into(), &mut self.mlp.b1));
        out.push(("mlp.w2".into(), &mut self.mlp.w2));
        out.push(("mlp.b2".into(), &mut self.mlp.b2));
        out
    }

    pub fn n_tensors(&self) -> usize {
        self.flatten().len()
    }
}

/// Directed attention edges: both directions of every undirected edge plus
/// one self-loop per node, sorted by (destination, source). Destinations
/// double as segment ids for the attention softmax, and the self-loops
/// guarantee every segment is non-empty.
#[derive(Debug, Clone)]
pub struct AttentionEdges {
    pub src: Arc<Vec<usize>>,
    pub dst: Arc<Vec<usize>>,
    pub n_nodes: usize,
}

impl AttentionEdges {
    pub fn build(graph: &SharedGraph) -> Self {
        let n = graph.n_nodes();
        let mut pairs: Vec<(usize, usize)> = Vec::with_capacity(n + 2 * graph.n_edges());
        for i in 0..n {
            pairs.push((i, i));
            for &j in graph.neighbors(i) {
                pairs.push((i, j));
            }
        }
        pairs.sort_unstable();
        let (dst, src) = pairs.into_iter().unzip();
        AttentionEdges {
            src: Arc::new(src),
            dst: Arc::new(dst),
            n_nodes: n,
        }
    }

    pub fn n_edges(&self) -> usize {
        self.src.len()
    }
}

/// Immutable per-dataset structure shared by every forward pass.
#[derive(Debug, Clone)]
pub struct ModelContext {
    pub edges: AttentionEdges,
    pub modules: Arc<Vec<Vec<usize>>>,
    pub aggregator: PoolKind,
}

impl ModelContext {
    pub fn new(graph: &SharedGraph, modules: &SupermoduleMap, aggregator: PoolKind) -> Self {
        ModelContext {
            edges: AttentionEdges::build(graph),
            modules: Arc::new(modules.assignments().to_vec()),
            aggregator,
        }
    }

    pub fn n_modules(&self) -> usize {
        self.modules.len()
    }
}

/// Tape node ids for one bound GAT layer, (w, a) per head.
pub type BoundGat = Vec<(NodeId, NodeId)>;

/// Model parameters registered on a tape, plus the flat id list aligned
/// with [`ModelParams::flatten`] for gradient extraction.
pub struct BoundParams {
    pub gat1: BoundGat,
    pub gat2: BoundGat,
    pub pool_w: NodeId,
    pub pool_b: NodeId,
    pub lift_w: NodeId,
    pub lift_b: NodeId,
    pub dec_gat: BoundGat,
    pub out_w: NodeId,
    pub mlp_w1: NodeId,
    pub mlp_b1: NodeId,
    pub mlp_w2: NodeId,
    pub mlp_b2: NodeId,
    pub ordered: Vec<NodeId>,
}

/// Register every parameter tensor on the tape, trainable or frozen.
pub fn bind_params(tape: &Tape, params: &ModelParams, trainable: bool) -> BoundParams {
    let mut ordered = Vec::with_capacity(params.n_tensors());
    let mut reg = |t: &Tensor| {
        let id = if trainable {
            tape.param(t.clone())
        } else {
            tape.input(t.clone())
        };
        ordered.push(id);
        id
    };
    let bind_gat = |layer: &GatLayerParams, reg: &mut dyn FnMut(&Tensor) -> NodeId| -> BoundGat {
        layer.heads.iter().map(|h| (reg(&h.w), reg(&h.a))).collect()
    };
    let gat1 = bind_gat(&params.encoder.gat1, &mut reg);
    let gat2 = bind_gat(&params.encoder.gat2, &mut reg);
    let pool_w = reg(&params.encoder.pool_w);
    let pool_b = reg(&params.encoder.pool_b);
    let lift_w = reg(&params.decoder.lift_w);
    let lift_b = reg(&params.decoder.lift_b);
    let dec_gat = bind_gat(&params.decoder.gat, &mut reg);
    let out_w = reg(&params.decoder.out_w);
    let mlp_w1 = reg(&params.mlp.w1);
    let mlp_b1 = reg(&params.mlp.b1);
    let mlp_w2 = reg(&params.mlp.w2);
    let mlp_b2 = reg(&params.mlp.b2);
    BoundParams {
        gat1,
        gat2,
        pool_w,
        pool_b,
        lift_w,
        lift_b,
        dec_gat,
        out_w,
        mlp_w1,
        mlp_b1,
        mlp_w2,
        mlp_b2,
        ordered,
    }
}

/// Rebuild the bound structure from an externally registered flat id list
/// (in [`ModelParams::flatten`] order). Used by gradient-check harnesses.
pub fn bound_from_ordered(cfg: &ModelConfig, ids: &[NodeId]) -> Result<BoundParams> {
    // gat1 heads + gat2 + pool pair + lift pair + decoder gat + out_w + mlp
    let expected = 2 * cfg.n_heads + 2 + 2 + 2 + 2 + 1 + 4;
    if ids.len() != expected {
        return Err(Error::shape(format!(
            "expected {expected} parameter tensors, got {}",
            ids.len()
        )));
    }
    let mut it = ids.iter().copied();
    let mut take = || it.next().expect("length checked");
    let gat1: BoundGat = (0..cfg.n_heads).map(|_| (take(), take())).collect();
    let gat2: BoundGat = vec![(take(), take())];
    let pool_w = take();
    let pool_b = take();
    let lift_w = take();
    let lift_b = take();
    let dec_gat: BoundGat = vec![(take(), take())];
    let out_w = take();
    let mlp_w1 = take();
    let mlp_b1 = take();
    let mlp_w2 = take();
    let mlp_b2 = take();
    Ok(BoundParams {
        gat1,
        gat2,
        pool_w,
        pool_b,
        lift_w,
        lift_b,
        dec_gat,
        out_w,
        mlp_w1,
        mlp_b1,
        mlp_w2,
        mlp_b2,
        ordered: ids.to_vec(),
    })
}

/// Attention coefficients of one head over the given edges: a column with
/// one weight per directed edge, softmax-normalized within each
/// destination's neighborhood.
pub fn attention_coefficients(
    tape: &Tape,
    w: NodeId,
    a: NodeId,
    h: NodeId,
    edges: &AttentionEdges,
) -> Result<(NodeId, NodeId)> {
    let wt = tape.transpose(w);
    let hw = tape.matmul(h, wt)?;
    let f_out = tape.shape(hw).1;
    let a_dim = tape.shape(a);
    if a_dim != (2 * f_out, 1) {
        return Err(Error::shape(format!(
            "attention vector must be {}x1, got {}x{}",
            2 * f_out,
            a_dim.0,
            a_dim.1
        )));
    }
    let a_dst = tape.gather(a, Arc::new((0..f_out).collect()))?;
    let a_src = tape.gather(a, Arc::new((f_out..2 * f_out).collect()))?;
    let dst_score = tape.matmul(hw, a_dst)?;
    let src_score = tape.matmul(hw, a_src)?;
    let e_dst = tape.gather(dst_score, edges.dst.clone())?;
    let e_src = tape.gather(src_score, edges.src.clone())?;
    let logits = tape.leaky_relu(tape.add(e_dst, e_src)?, LEAKY_SLOPE);
    let att = tape.segment_softmax(logits, edges.dst.clone())?;
    Ok((att, hw))
}

/// One GAT layer: per-head attention-weighted neighbor aggregation,
/// head concatenation, ELU.
pub fn gat_layer(
    tape: &Tape,
    heads: &BoundGat,
    h: NodeId,
    edges: &AttentionEdges,
) -> Result<NodeId> {
    let mut outs = Vec::with_capacity(heads.len());
    for &(w, a) in heads {
        let (att, hw) = attention_coefficients(tape, w, a, h, edges)?;
        let msgs = tape.gather(hw, edges.src.clone())?;
        let weighted = tape.scale_rows(msgs, att)?;
        outs.push(tape.segment_sum(weighted, edges.dst.clone(), edges.n_nodes)?);
    }
    let cat = tape.concat_cols(&outs)?;
    Ok(tape.elu(cat, ELU_ALPHA))
}

/// Encoder: two GAT layers, supermodule pooling, projection to the D x 1
/// embedding z = X_y w + b.
pub fn encode(tape: &Tape, bp: &BoundParams, ctx: &ModelContext, xg: NodeId) -> Result<NodeId> {
    let h1 = gat_layer(tape, &bp.gat1, xg, &ctx.edges)?;
    let h2 = gat_layer(tape, &bp.gat2, h1, &ctx.edges)?;
    let pooled = tape.sup_pool(h2, ctx.modules.clone(), ctx.aggregator)?;
    let zw = tape.matmul(pooled, bp.pool_w)?;
    tape.add(zw, bp.pool_b)
}

/// Decoder: lift z to one scalar per node, run a single-head GAT, and map
/// node outputs back to the feature width.
pub fn decode(tape: &Tape, bp: &BoundParams, ctx: &ModelContext, z: NodeId) -> Result<NodeId> {
    let lifted = tape.matmul(bp.lift_w, z)?;
    let h0 = tape.add(lifted, bp.lift_b)?;
    let g = gat_layer(tape, &bp.dec_gat, h0, &ctx.edges)?;
    let out_wt = tape.transpose(bp.out_w);
    tape.matmul(g, out_wt)
}

/// Class logits (2 x 1) from the embedding.
pub fn classify_logits(tape: &Tape, bp: &BoundParams, z: NodeId) -> Result<NodeId> {
    let a1 = tape.add(tape.matmul(bp.mlp_w1, z)?, bp.mlp_b1)?;
    let h1 = tape.elu(a1, ELU_ALPHA);
    tape.add(tape.matmul(bp.mlp_w2, h1)?, bp.mlp_b2)
}

pub struct ForwardOutputs {
    pub z: NodeId,
    pub logits: NodeId,
    pub xhat: NodeId,
}

/// Full forward pass for one compound's augmented feature matrix.
pub fn forward(
    tape: &Tape,
    bp: &BoundParams,
    ctx: &ModelContext,
    xg: NodeId,
) -> Result<ForwardOutputs> {
    let z = encode(tape, bp, ctx, xg)?;
    let xhat = decode(tape, bp, ctx, z)?;
    let logits = classify_logits(tape, bp, z)?;
    Ok(ForwardOutputs { z, logits, xhat })
}

pub struct LossNodes {
    pub total: NodeId,
    pub classification: NodeId,
    pub reconstruction: NodeId,
}

/// Total loss for one compound: weighted cross-entropy plus gamma times the
/// Frobenius norm of the reconstruction gap.
pub fn compound_loss(
    tape: &Tape,
    fwd: &ForwardOutputs,
    xg: NodeId,
    label: u8,
    class_weight: f64,
    gamma: f64,
) -> Result<LossNodes> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::invalid(format!(
            "gamma must lie in [0, 1], got {gamma}"
        )));
    }
    let lc = tape.weighted_cross_entropy(fwd.logits, label as usize, class_weight)?;
    let lr = tape.l2_loss(fwd.xhat, xg)?;
    let total = tape.add(lc, tape.scale(lr, gamma))?;
    Ok(LossNodes {
        total,
        classification: lc,
        reconstruction: lr,
    })
}

/// Numerically stable two-class softmax of a 2 x 1 logit column.
pub fn softmax2(logits: &Tensor) -> (f64, f64) {
    let (l0, l1) = (logits[(0, 0)], logits[(1, 0)]);
    let m = l0.max(l1);
    let (e0, e1) = ((l0 - m).exp(), (l1 - m).exp());
    let s = e0 + e1;
    (e0 / s, e1 / s)
}

/// MLP head as a pure function, for inference paths that already have z.
pub fn classify(mlp: &MlpParams, z: &Tensor) -> Result<(f64, f64)> {
    if z.ncols() != 1 || z.nrows() != mlp.w1.ncols() {
        return Err(Error::shape(format!(
            "embedding must be {}x1, got {}x{}",
            mlp.w1.ncols(),
            z.nrows(),
            z.ncols()
        )));
    }
    let a1 = mlp.w1.dot(z) + &mlp.b1;
    let h1 = a1.mapv(|v| if v > 0.0 { v } else { ELU_ALPHA * (v.exp() - 1.0) });
    let logits = mlp.w2.dot(&h1) + &mlp.b2;
    Ok(softmax2(&logits))
}

/// Frozen-parameter inference for one compound: positive-class probability
/// and the pathway-aligned embedding.
pub fn predict_one(
    params: &ModelParams,
    ctx: &ModelContext,
    xg: &Tensor,
) -> Result<(f64, GraphEmbedding)> {
    let tape = Tape::new();
    let bp = bind_params(&tape, params, false);
    let x = tape.input(xg.clone());
    let fwd = forward(&tape, &bp, ctx, x)?;
    let (_, p1) = softmax2(&tape.value(fwd.logits));
    Ok((
        p1,
        GraphEmbedding {
            z: tape.value(fwd.z),
        },
    ))
}

pub const CHECKPOINT_VERSION: u32 = 1;

/// Serialized tensor: shape plus row-major data.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TensorData {
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

impl TensorData {
    pub fn from_tensor(t: &Tensor) -> Self {
        TensorData {
            shape: [t.nrows(), t.ncols()],
            data: t.iter().copied().collect(),
        }
    }

    pub fn to_tensor(&self) -> Result<Tensor> {
        Array2::from_shape_vec((self.shape[0], self.shape[1]), self.data.clone())
            .map_err(|_| Error::shape("tensor data length does not match its shape"))
    }
}

/// Single-file JSON checkpoint shared by the autoencoder and the baseline.
/// Keys in `params` are sorted, so serialization is byte-stable.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    /// "gaa" or "baseline".
    pub kind: String,
    pub graph_hash: String,
    #[serde(default)]
    pub modules_hash: String,
    pub alphas: Vec<f64>,
    #[serde(default)]
    pub module_names: Vec<String>,
    #[serde(default)]
    pub config: Option<ModelConfig>,
    pub params: BTreeMap<String, TensorData>,
}

impl Checkpoint {
    pub fn for_model(
        params: &ModelParams,
        cfg: &ModelConfig,
        graph: &SharedGraph,
        modules: &SupermoduleMap,
        alphas: &[f64],
    ) -> Self {
        let named = params
            .flatten()
            .into_iter()
            .map(|(name, t)| (name, TensorData::from_tensor(t)))
            .collect();
        Checkpoint {
            version: CHECKPOINT_VERSION,
            kind: "gaa".into(),
            graph_hash: graph.hash().to_string(),
            modules_hash: modules.hash().to_string(),
            alphas: alphas.to_vec(),
            module_names: modules.module_names().to_vec(),
            config: Some(cfg.clone()),
            params: named,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut body = serde_json::to_string_pretty(self)?;
        body.push('\n');
        crate::diffusion::atomic_write(path, body.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let ckpt: Checkpoint = serde_json::from_str(&text)?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::invalid(format!(
                "checkpoint version {} unsupported (expected {CHECKPOINT_VERSION})",
                ckpt.version
            )));
        }
        Ok(ckpt)
    }

    /// Reconstruct model parameters, rejecting any name or shape drift
    /// against what (config, dims) prescribe.
    pub fn model_params(&self, dims: &ModelDims) -> Result<(ModelConfig, ModelParams)> {
        if self.kind != "gaa" {
            return Err(Error::invalid(format!(
                "checkpoint kind {:?} is not an autoencoder model",
                self.kind
            )));
        }
        let cfg = self
            .config
            .clone()
            .ok_or_else(|| Error::invalid("checkpoint lacks a model config"))?;
        cfg.validate()?;
        if self.module_names.len() != dims.n_modules {
            return Err(Error::shape(format!(
                "checkpoint has {} modules, dataset has {}",
                self.module_names.len(),
                dims.n_modules
            )));
        }
        if self.alphas.len() != dims.f_prime {
            return Err(Error::shape(format!(
                "checkpoint carries {} alphas, features have width {}",
                self.alphas.len(),
                dims.f_prime
            )));
        }
        let mut params = zeros_params(&cfg, dims);
        let mut used = 0usize;
        for (name, slot) in params.flatten_mut() {
            let td = self
                .params
                .get(&name)
                .ok_or_else(|| Error::shape(format!("checkpoint is missing tensor {name:?}")))?;
            let want = (slot.nrows(), slot.ncols());
            if td.shape != [want.0, want.1] {
                return Err(Error::shape(format!(
                    "tensor {name:?} has shape {}x{}, expected {}x{}",
                    td.shape[0], td.shape[1], want.0, want.1
                )));
            }
            *slot = td.to_tensor()?;
            used += 1;
        }
        if used != self.params.len() {
            return Err(Error::shape(format!(
                "checkpoint carries {} tensors, model expects {used}",
                self.params.len()
            )));
        }
        Ok((cfg, params))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_graph;
    use crate::testkit::{
        check_gradients, dense_reference_gat, random_connected_graph, random_tensor,
    };
    use ndarray::arr2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn path_graph(n: usize) -> SharedGraph {
        let edges: Vec<(String, String)> = (1..n)
            .map(|i| (format!("n{:02}", i - 1), format!("n{i:02}")))
            .collect();
        build_graph(&edges).unwrap()
    }

    fn toy_modules(graph: &SharedGraph) -> SupermoduleMap {
        let n = graph.n_nodes();
        let first: Vec<usize> = (0..n / 2).collect();
        let second: Vec<usize> = (n / 2 - 1..n - 1).collect(); // overlaps, skips last node
        SupermoduleMap::from_assignments(
            vec!["M00".into(), "M01".into()],
            vec![first, second],
            n,
        )
        .unwrap()
    }

    fn toy_config() -> ModelConfig {
        ModelConfig {
            n_heads: 2,
            gat1_dim: 3,
            gat2_dim: 3,
            decoder_dim: 3,
            mlp_hidden: 4,
            aggregator: PoolKind::Mean,
            gamma: 0.7,
        }
    }

    #[test]
    fn attention_sums_to_one_per_destination() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..10 {
            let graph = random_connected_graph(&mut rng, 2, 25);
            let edges = AttentionEdges::build(&graph);
            let n = graph.n_nodes();
            let tape = Tape::new();
            let w = tape.param(random_tensor(&mut rng, 3, 2));
            let a = tape.param(random_tensor(&mut rng, 6, 1));
            let h = tape.input(random_tensor(&mut rng, n, 2));
            let (att, _) = attention_coefficients(&tape, w, a, h, &edges).unwrap();
            let v = tape.value(att);
            let mut sums = vec![0.0f64; n];
            for (r, &d) in edges.dst.iter().enumerate() {
                sums[d] += v[(r, 0)];
            }
            for (i, s) in sums.iter().enumerate() {
                assert!((s - 1.0).abs() <= 1e-12, "node {i}: attention sum {s}");
            }
        }
    }

    #[test]
    fn two_node_graph_attends_over_self_and_neighbor() {
        let graph = path_graph(2);
        let edges = AttentionEdges::build(&graph);
        // 2 self-loops + 2 directed edges
        assert_eq!(edges.n_edges(), 4);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let tape = Tape::new();
        let w = tape.param(random_tensor(&mut rng, 2, 1));
        let a = tape.param(random_tensor(&mut rng, 4, 1));
        let h = tape.input(random_tensor(&mut rng, 2, 1));
        let (att, _) = attention_coefficients(&tape, w, a, h, &edges).unwrap();
        let v = tape.value(att);
        assert!((v[(0, 0)] + v[(1, 0)] - 1.0).abs() <= 1e-12);
        assert!((v[(2, 0)] + v[(3, 0)] - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn zero_attention_vector_gives_uniform_neighborhood_mean() {
        let graph = path_graph(4);
        let edges = AttentionEdges::build(&graph);
        let h0 = arr2(&[[1.0, 0.0], [0.0, 2.0], [3.0, 1.0], [5.0, -1.0]]);
        let tape = Tape::new();
        let w = tape.param(Tensor::eye(2));
        let a = tape.param(Tensor::zeros((4, 1)));
        let h = tape.input(h0.clone());
        let out = gat_layer(&tape, &vec![(w, a)], h, &edges).unwrap();
        let v = tape.value(out);
        // node 1's neighborhood is {0, 1, 2}; ELU of the plain mean
        let expect = |vals: &[f64]| {
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            if m > 0.0 {
                m
            } else {
                m.exp() - 1.0
            }
        };
        assert!((v[(1, 0)] - expect(&[1.0, 0.0, 3.0])).abs() <= 1e-12);
        assert!((v[(1, 1)] - expect(&[0.0, 2.0, 1.0])).abs() <= 1e-12);
        assert!((v[(0, 0)] - expect(&[1.0, 0.0])).abs() <= 1e-12);
    }

    #[test]
    fn gat_layer_matches_dense_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for round in 0..20 {
            let graph = random_connected_graph(&mut rng, 2, 12);
            let edges = AttentionEdges::build(&graph);
            let n = graph.n_nodes();
            let f_in = 3;
            let f_out = 2;
            let n_heads = 1 + round % 3;
            let layer = GatLayerParams {
                heads: (0..n_heads)
                    .map(|_| GatHead {
                        w: random_tensor(&mut rng, f_out, f_in),
                        a: random_tensor(&mut rng, 2 * f_out, 1),
                    })
                    .collect(),
            };
            let h0 = random_tensor(&mut rng, n, f_in);
            let reference = dense_reference_gat(&graph, &layer, &h0, LEAKY_SLOPE, ELU_ALPHA).unwrap();

            let tape = Tape::new();
            let heads: BoundGat = layer
                .heads
                .iter()
                .map(|hd| (tape.input(hd.w.clone()), tape.input(hd.a.clone())))
                .collect();
            let h = tape.input(h0);
            let out = gat_layer(&tape, &heads, h, &edges).unwrap();
            let v = tape.value(out);
            let diff = (&v - &reference)
                .iter()
                .fold(0.0f64, |m, &d| m.max(d.abs()));
            assert!(diff <= 1e-10, "round {round}: max deviation {diff:.3e}");
        }
    }

    #[test]
    fn encode_zero_features_returns_pool_bias() {
        let graph = path_graph(6);
        let modules = toy_modules(&graph);
        let cfg = toy_config();
        let dims = ModelDims {
            n_nodes: 6,
            f_prime: 3,
            n_modules: 2,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut params = init_params(&cfg, &dims, &mut rng).unwrap();
        params.encoder.pool_b = arr2(&[[0.25], [-1.5]]);
        let ctx = ModelContext::new(&graph, &modules, cfg.aggregator);
        let tape = Tape::new();
        let bp = bind_params(&tape, &params, false);
        let xg = tape.input(Tensor::zeros((6, 3)));
        let z = encode(&tape, &bp, &ctx, xg).unwrap();
        assert_eq!(tape.value(z), params.encoder.pool_b);
    }

    #[test]
    fn embedding_length_tracks_module_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let graph = random_connected_graph(&mut rng, 200, 200);
        let n = graph.n_nodes();
        let names: Vec<String> = (0..186).map(|m| format!("P{m:03}")).collect();
        let assignments: Vec<Vec<usize>> = (0..186).map(|m| vec![m % n, (m * 7 + 1) % n]).collect();
        let modules = SupermoduleMap::from_assignments(names, assignments, n).unwrap();
        let cfg = ModelConfig {
            n_heads: 1,
            gat1_dim: 2,
            gat2_dim: 2,
            decoder_dim: 2,
            mlp_hidden: 2,
            ..ModelConfig::default()
        };
        let dims = ModelDims {
            n_nodes: n,
            f_prime: 2,
            n_modules: 186,
        };
        let params = init_params(&cfg, &dims, &mut rng).unwrap();
        let ctx = ModelContext::new(&graph, &modules, cfg.aggregator);
        let (_, emb) = predict_one(&params, &ctx, &random_tensor(&mut rng, n, 2)).unwrap();
        assert_eq!(emb.values().len(), 186);
    }

    #[test]
    fn reconstruction_shape_matches_input_across_configs() {
        let graph = path_graph(7);
        let modules = toy_modules(&graph);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (heads, fp) in [(1usize, 1usize), (3, 4)] {
            let cfg = ModelConfig {
                n_heads: heads,
                gat1_dim: 2,
                gat2_dim: 3,
                decoder_dim: 5,
                mlp_hidden: 4,
                ..ModelConfig::default()
            };
            let dims = ModelDims {
                n_nodes: 7,
                f_prime: fp,
                n_modules: 2,
            };
            let params = init_params(&cfg, &dims, &mut rng).unwrap();
            let ctx = ModelContext::new(&graph, &modules, cfg.aggregator);
            let tape = Tape::new();
            let bp = bind_params(&tape, &params, false);
            let xg = tape.input(random_tensor(&mut rng, 7, fp));
            let fwd = forward(&tape, &bp, &ctx, xg).unwrap();
            assert_eq!(tape.shape(fwd.xhat), (7, fp));
            assert_eq!(tape.shape(fwd.z), (2, 1));
            assert_eq!(tape.shape(fwd.logits), (2, 1));
        }
    }

    #[test]
    fn zero_embedding_and_biases_reconstruct_zero() {
        let graph = path_graph(5);
        let modules = toy_modules(&graph);
        let cfg = toy_config();
        let dims = ModelDims {
            n_nodes: 5,
            f_prime: 3,
            n_modules: 2,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let params = init_params(&cfg, &dims, &mut rng).unwrap();
        let ctx = ModelContext::new(&graph, &modules, cfg.aggregator);
        let tape = Tape::new();
        let bp = bind_params(&tape, &params, false);
        let z = tape.input(Tensor::zeros((2, 1)));
        let xhat = decode(&tape, &bp, &ctx, z).unwrap();
        // zero z and zero lift bias put zero node features through the GAT;
        // ELU(0) = 0 and the output map preserves it
        assert!(tape.value(xhat).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn classify_closed_forms() {
        let mlp = MlpParams {
            w1: Tensor::zeros((3, 2)),
            b1: Tensor::zeros((3, 1)),
            w2: Tensor::zeros((2, 3)),
            b2: Tensor::zeros((2, 1)),
        };
        let z = Tensor::zeros((2, 1));
        let (p0, p1) = classify(&mlp, &z).unwrap();
        assert_eq!((p0, p1), (0.5, 0.5));

        let (p0, p1) = softmax2(&arr2(&[[0.0], [3.0f64.ln()]]));
        assert!((p0 - 0.25).abs() <= 1e-12);
        assert!((p1 - 0.75).abs() <= 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(15);
        for _ in 0..20 {
            let mlp = MlpParams {
                w1: random_tensor(&mut rng, 4, 3),
                b1: random_tensor(&mut rng, 4, 1),
                w2: random_tensor(&mut rng, 2, 4),
                b2: random_tensor(&mut rng, 2, 1),
            };
            let z = random_tensor(&mut rng, 3, 1);
            let (p0, p1) = classify(&mlp, &z).unwrap();
            assert!(p0 > 0.0 && p0 < 1.0 && p1 > 0.0 && p1 < 1.0);
            assert!((p0 + p1 - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn pure_classify_agrees_with_tape_forward() {
        let graph = path_graph(6);
        let modules = toy_modules(&graph);
        let cfg = toy_config();
        let dims = ModelDims {
            n_nodes: 6,
            f_prime: 3,
            n_modules: 2,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let params = init_params(&cfg, &dims, &mut rng).unwrap();
        let ctx = ModelContext::new(&graph, &modules, cfg.aggregator);
        let xg = random_tensor(&mut rng, 6, 3);
        let (p1_tape, emb) = predict_one(&params, &ctx, &xg).unwrap();
        let (_, p1_pure) = classify(&params.mlp, &emb.z).unwrap();
        assert!((p1_tape - p1_pure).abs() <= 1e-14);
    }

    #[test]
    fn node_relabeling_leaves_embedding_unchanged() {
        // same topology under two labelings; per-node decoder rows permuted
        let perm = [3usize, 0, 4, 1, 5, 2];
        let edges_idx = [(0usize, 1usize), (1, 2), (2, 3), (3, 4), (4, 5), (1, 4)];
        let name1 = |i: usize| format!("a{i}");
        let name2 = |i: usize| format!("a{}", perm[i]);
        let g1 = build_graph(
            &edges_idx
                .iter()
                .map(|&(u, v)| (name1(u), name1(v)))
                .collect::<Vec<_>>(),
        )
        .unwrap();
        let g2 = build_graph(
            &edges_idx
                .iter()
                .map(|&(u, v)| (name2(u), name2(v)))
                .collect::<Vec<_>>(),
        )
        .unwrap();

        let cfg = toy_config();
        let dims = ModelDims {
            n_nodes: 6,
            f_prime: 3,
            n_modules: 2,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let params1 = init_params(&cfg, &dims, &mut rng).unwrap();
        let xg1 = random_tensor(&mut rng, 6, 3);
        let members1: Vec<Vec<usize>> = vec![vec![0, 1, 2], vec![2, 3, 4, 5]];

        let mut params2 = params1.clone();
        let mut xg2 = Tensor::zeros((6, 3));
        for i in 0..6 {
            xg2.row_mut(perm[i]).assign(&xg1.row(i));
            params2.decoder.lift_w.row_mut(perm[i]).assign(&params1.decoder.lift_w.row(i));
            params2.decoder.lift_b[(perm[i], 0)] = params1.decoder.lift_b[(i, 0)];
        }
        let members2: Vec<Vec<usize>> = members1
            .iter()
            .map(|m| m.iter().map(|&i| perm[i]).collect())
            .collect();

        let mk_modules = |members: Vec<Vec<usize>>| {
            SupermoduleMap::from_assignments(vec!["M00".into(), "M01".into()], members, 6).unwrap()
        };
        let ctx1 = ModelContext::new(&g1, &mk_modules(members1), cfg.aggregator);
        let ctx2 = ModelContext::new(&g2, &mk_modules(members2), cfg.aggregator);

        let (p1_a, emb_a) = predict_one(&params1, &ctx1, &xg1).unwrap();
        let (p1_b, emb_b) = predict_one(&params2, &ctx2, &xg2).unwrap();
        assert!((p1_a - p1_b).abs() <= 1e-10);
        for (x, y) in emb_a.values().iter().zip(emb_b.values()) {
            assert!((x - y).abs() <= 1e-10);
        }
    }

    #[test]
    fn loss_composition_and_gamma_validation() {
        let graph = path_graph(6);
        let modules = toy_modules(&graph);
        let cfg = toy_config();
        let dims = ModelDims {
            n_nodes: 6,
            f_prime: 3,
            n_modules: 2,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let params = init_params(&cfg, &dims, &mut rng).unwrap();
        let ctx = ModelContext::new(&graph, &modules, cfg.aggregator);
        let xg0 = random_tensor(&mut rng, 6, 3);

        let run = |gamma: f64| -> Result<(f64, f64, f64)> {
            let tape = Tape::new();
            let bp = bind_params(&tape, &params, false);
            let xg = tape.input(xg0.clone());
            let fwd = forward(&tape, &bp, &ctx, xg)?;
            let loss = compound_loss(&tape, &fwd, xg, 1, 2.5, gamma)?;
            Ok((
                tape.value(loss.total)[(0, 0)],
                tape.value(loss.classification)[(0, 0)],
                tape.value(loss.reconstruction)[(0, 0)],
            ))
        };
        let (t0, lc0, _) = run(0.0).unwrap();
        assert_eq!(t0, lc0);
        let (t_half, lc, lr) = run(0.5).unwrap();
        assert!((t_half - (lc + 0.5 * lr)).abs() <= 1e-12);
        assert!(run(1.5).is_err());
        assert!(run(-0.1).is_err());

        // cross-entropy closed form: p1 = 0.75, label 1, weight w
        let tape = Tape::new();
        let logits = tape.input(arr2(&[[0.0], [3.0f64.ln()]]));
        let lc = tape.weighted_cross_entropy(logits, 1, 3.0).unwrap();
        assert!((tape.value(lc)[(0, 0)] + 3.0 * 0.75f64.ln()).abs() <= 1e-12);

        // perfect reconstruction contributes nothing
        let tape = Tape::new();
        let a = tape.input(xg0.clone());
        let b = tape.input(xg0.clone());
        assert_eq!(tape.value(tape.l2_loss(a, b).unwrap())[(0, 0)], 0.0);
    }

    #[test]
    fn end_to_end_gradients_match_finite_differences() {
        let graph = path_graph(6);
        let modules = toy_modules(&graph);
        let cfg = toy_config();
        let dims = ModelDims {
            n_nodes: 6,
            f_prime: 3,
            n_modules: 2,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let params = init_params(&cfg, &dims, &mut rng).unwrap();
        let ctx = ModelContext::new(&graph, &modules, cfg.aggregator);
        let xg0 = random_tensor(&mut rng, 6, 3);

        let tensors: Vec<Tensor> = params.flatten().into_iter().map(|(_, t)| t.clone()).collect();
        check_gradients(&tensors, 1e-4, |tape, ids| {
            let bp = bound_from_ordered(&cfg, ids)?;
            let xg = tape.input(xg0.clone());
            let fwd = forward(tape, &bp, &ctx, xg)?;
            let loss = compound_loss(tape, &fwd, xg, 1, 1.8, cfg.gamma)?;
            Ok(loss.total)
        });
    }

    #[test]
    fn checkpoint_round_trip_and_rejections() {
        let data = crate::testkit::generate(&crate::testkit::SynthSpec {
            n_nodes: 30,
            extra_edges: 20,
            n_modules: 4,
            module_size_min: 3,
            module_size_max: 6,
            n_compounds: 20,
            positive_ratio: 0.3,
            ..crate::testkit::SynthSpec::default()
        })
        .unwrap();
        let cfg = toy_config();
        let dims = ModelDims {
            n_nodes: data.graph.n_nodes(),
            f_prime: 2,
            n_modules: data.modules.n_modules(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let params = init_params(&cfg, &dims, &mut rng).unwrap();
        let ckpt = Checkpoint::for_model(&params, &cfg, &data.graph, &data.modules, &[0.3, 0.6]);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt.json");
        ckpt.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(loaded.graph_hash, data.graph.hash());
        let (cfg2, params2) = loaded.model_params(&dims).unwrap();
        assert_eq!(cfg2, cfg);
        for ((n1, t1), (n2, t2)) in params.flatten().iter().zip(params2.flatten().iter()) {
            assert_eq!(n1, n2);
            assert_eq!(t1, t2, "tensor {n1} drifted through the round trip");
        }

        // wrong dims must be rejected
        let bad_dims = ModelDims {
            n_nodes: dims.n_nodes + 1,
            ..dims
        };
        assert!(loaded.model_params(&bad_dims).is_err());
        let bad_fp = ModelDims {
            f_prime: 9,
            ..dims
        };
        assert!(loaded.model_params(&bad_fp).is_err());

        // unsupported version must be rejected at load
        let mut tampered = ckpt.clone();
        tampered.version = 99;
        let p2 = dir.path().join("bad.ckpt.json");
        let body = serde_json::to_string(&tampered).unwrap();
        std::fs::write(&p2, body).unwrap();
        assert!(Checkpoint::load(&p2).is_err());

        // baseline-kind checkpoints are not model checkpoints
        let mut wrong_kind = ckpt.clone();
        wrong_kind.kind = "baseline".into();
        assert!(wrong_kind.model_params(&dims).is_err());
    }

    #[test]
    fn saved_checkpoints_are_byte_stable() {
        let graph = path_graph(5);
        let modules = toy_modules(&graph);
        let cfg = toy_config();
        let dims = ModelDims {
            n_nodes: 5,
            f_prime: 2,
            n_modules: 2,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let params = init_params(&cfg, &dims, &mut rng).unwrap();
        let ckpt = Checkpoint::for_model(&params, &cfg, &graph, &modules, &[0.5]);
        let dir = tempfile::tempdir().unwrap();
        let (p1, p2) = (dir.path().join("a.json"), dir.path().join("b.json"));
        ckpt.save(&p1).unwrap();
        ckpt.save(&p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }
}
