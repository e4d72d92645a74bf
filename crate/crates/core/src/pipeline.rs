//! File-backed pipeline behind the CLI: run configuration with dotted-path
//! overrides, the subcommand implementations, and report emission.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baseline::{
    baseline_feature_matrix, baseline_scores, fit_logistic, LinearModel, DEFAULT_BASELINE_ALPHA,
    DEFAULT_BASELINE_L2,
};
use crate::diffusion::{
    atomic_write, augment_features_cached, AlphaGrid, AugmentedFeatures, FeatureCache,
    DEFAULT_MAX_ITER, DEFAULT_TOL,
};
use crate::error::{Error, Result};
use crate::graph::{
    build_graph, load_supermodules, parse_compound_features, parse_edge_list, parse_labels,
    CompoundSet, SharedGraph, SupermoduleMap,
};
use crate::metrics::{self, EvalReport};
use crate::model::{
    predict_one, Checkpoint, ModelConfig, ModelContext, ModelDims, TensorData, CHECKPOINT_VERSION,
};
use crate::testkit::{generate, SynthDataset, SynthSpec};
use crate::training::{
    predict_scores, stratified_split, train_gaa, ClassWeightMode, Split, SplitSpec, TrainConfig,
};

// ---------------------------------------------------------------- config

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub edges: PathBuf,
    pub features: PathBuf,
    pub labels: PathBuf,
    pub modules: PathBuf,
    pub cache_dir: Option<PathBuf>,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiffusionSection {
    pub alphas: Vec<f64>,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for DiffusionSection {
    fn default() -> Self {
        DiffusionSection {
            alphas: AlphaGrid::nine_step().alphas().to_vec(),
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub ratios: (f64, f64, f64),
}

impl Default for SplitSection {
    fn default() -> Self {
        SplitSection {
            ratios: (0.8, 0.1, 0.1),
        }
    }
}

/// Training knobs as they appear in the config file. The seed lives at the
/// top level of [`RunConfig`] so one value drives splits, initialization,
/// and batch order.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: Option<usize>,
    pub class_weight_mode: ClassWeightMode,
    pub deterministic: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            lr: t.adam.lr,
            beta1: t.adam.beta1,
            beta2: t.adam.beta2,
            eps: t.adam.eps,
            max_epochs: t.max_epochs,
            patience: t.patience,
            batch_size: t.batch_size,
            class_weight_mode: t.class_weight_mode,
            deterministic: t.deterministic,
        }
    }
}

impl TrainSection {
    pub fn to_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            adam: crate::training::AdamConfig {
                lr: self.lr,
                beta1: self.beta1,
                beta2: self.beta2,
                eps: self.eps,
            },
            max_epochs: self.max_epochs,
            patience: self.patience,
            batch_size: self.batch_size,
            seed,
            class_weight_mode: self.class_weight_mode,
            deterministic: self.deterministic,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineSection {
    pub alpha: f64,
    pub l2: f64,
}

impl Default for BaselineSection {
    fn default() -> Self {
        BaselineSection {
            alpha: DEFAULT_BASELINE_ALPHA,
            l2: DEFAULT_BASELINE_L2,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    /// Master seed: drives the stratified split, parameter initialization,
    /// and minibatch shuffling.
    pub seed: u64,
    pub diffusion: DiffusionSection,
    pub split: SplitSection,
    pub model: ModelConfig,
    pub train: TrainSection,
    pub baseline: BaselineSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            paths: Paths::default(),
            seed: 0,
            diffusion: DiffusionSection::default(),
            split: SplitSection::default(),
            model: ModelConfig::default(),
            train: TrainSection::default(),
            baseline: BaselineSection::default(),
        }
    }
}

impl RunConfig {
    pub fn grid(&self) -> Result<AlphaGrid> {
        AlphaGrid::new(self.diffusion.alphas.clone())
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            ratios: self.split.ratios,
            seed: self.seed,
        }
    }

    pub fn resolved_toml(&self) -> Result<String> {
        toml::to_string_pretty(self)
            .map_err(|e| Error::invalid(format!("cannot serialize config: {e}")))
    }
}

/// Apply one `section.key=value` override to a parsed TOML tree. The value
/// is parsed as TOML; anything that does not parse becomes a string.
fn apply_override(root: &mut toml::Table, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::invalid(format!("override {spec:?} is not KEY=VALUE")))?;
    let segments: Vec<&str> = path.split('.').collect();
    if segments.iter().any(|s| s.is_empty()) {
        return Err(Error::invalid(format!("override key {path:?} is malformed")));
    }
    let value: toml::Value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(t) => t["v"].clone(),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let mut table = root;
    for seg in &segments[..segments.len() - 1] {
        table = table
            .entry(seg.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::invalid(format!("{seg:?} in {path:?} is not a table")))?;
    }
    table.insert(segments[segments.len() - 1].to_string(), value);
    Ok(())
}

/// Parse a config file (or start from defaults when absent) and fold in
/// CLI overrides.
pub fn load_run_config(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
    let text = match path {
        Some(p) => fs::read_to_string(p)
            .map_err(|e| Error::invalid(format!("cannot read config {}: {e}", p.display())))?,
        None => String::new(),
    };
    let mut table: toml::Table = text
        .parse()
        .map_err(|e| Error::invalid(format!("config is not valid TOML: {e}")))?;
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    toml::Value::Table(table)
        .try_into()
        .map_err(|e| Error::invalid(format!("config: {e}")))
}

/// Callers invoke this only after their inputs load, so a config that fails
/// validation never drops a file into the working directory.
fn write_resolved_config(cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(&cfg.paths.out_dir)?;
    let body = cfg.resolved_toml()?;
    atomic_write(&cfg.paths.out_dir.join("resolved-config.toml"), body.as_bytes())
}

// ---------------------------------------------------------------- loading

pub struct Dataset {
    pub graph: SharedGraph,
    pub modules: SupermoduleMap,
    pub compounds: CompoundSet,
}

fn read(path: &Path, what: &str) -> Result<String> {
    if path.as_os_str().is_empty() {
        return Err(Error::invalid(format!("paths.{what} is not set")));
    }
    fs::read_to_string(path)
        .map_err(|e| Error::invalid(format!("cannot read {what} file {}: {e}", path.display())))
}

/// Load graph, supermodules, and compounds. Labels are attached when
/// `need_labels` is set; `features_path` overrides the configured
/// compound-target file.
pub fn load_dataset(
    cfg: &RunConfig,
    need_labels: bool,
    features_path: Option<&Path>,
) -> Result<Dataset> {
    let edges = parse_edge_list(&read(&cfg.paths.edges, "edges")?)?;
    let graph = build_graph(&edges)?;
    let modules = load_supermodules(&read(&cfg.paths.modules, "modules")?, &graph)?;
    let fpath = features_path.unwrap_or(&cfg.paths.features);
    let mut compounds = parse_compound_features(&read(fpath, "features")?, &graph)?;
    if need_labels {
        let pairs = parse_labels(&read(&cfg.paths.labels, "labels")?)?;
        compounds = compounds.with_labels(&pairs)?;
    }
    log::info!(
        "loaded graph ({} nodes, {} edges), {} supermodules, {} compounds",
        graph.n_nodes(),
        graph.n_edges(),
        modules.n_modules(),
        compounds.n_compounds()
    );
    Ok(Dataset {
        graph,
        modules,
        compounds,
    })
}

fn labels_of(compounds: &CompoundSet) -> Result<Vec<u8>> {
    compounds
        .labels()
        .map(<[u8]>::to_vec)
        .ok_or_else(|| Error::invalid("this command needs labeled compounds"))
}

fn augmented(
    cfg: &RunConfig,
    graph: &SharedGraph,
    compounds: &CompoundSet,
    grid: &AlphaGrid,
) -> Result<Vec<AugmentedFeatures>> {
    let cache = cfg.paths.cache_dir.as_ref().map(FeatureCache::new);
    augment_features_cached(
        graph,
        compounds,
        grid,
        cfg.diffusion.tol,
        cfg.diffusion.max_iter,
        cache.as_ref(),
    )
}

// ---------------------------------------------------------------- commands

/// Warm the diffusion feature cache for the configured grid.
pub fn cmd_diffuse(cfg: &RunConfig) -> Result<()> {
    if cfg.paths.cache_dir.is_none() {
        return Err(Error::invalid(
            "diffuse needs paths.cache_dir so results can be stored",
        ));
    }
    let data = load_dataset(cfg, false, None)?;
    write_resolved_config(cfg)?;
    let grid = cfg.grid()?;
    let feats = augmented(cfg, &data.graph, &data.compounds, &grid)?;
    println!(
        "cached diffusion features for {} compounds over {} restart probabilities in {}",
        feats.len(),
        grid.len(),
        cfg.paths.cache_dir.as_ref().unwrap().display()
    );
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Gaa,
    Baseline,
}

impl ModelKind {
    fn checkpoint_name(self) -> &'static str {
        match self {
            ModelKind::Gaa => "checkpoint-gaa.json",
            ModelKind::Baseline => "checkpoint-baseline.json",
        }
    }
}

fn print_baseline_assumptions() {
    println!(
        "note: baseline restart probability and classifier family are not pinned \
         by the method being compared; this run assumes single-alpha diffusion \
         features with an L2-regularized logistic classifier"
    );
}

/// Train a model, write the checkpoint and epoch log, and report where
/// they landed. Returns the checkpoint path.
pub fn cmd_train(cfg: &RunConfig, kind: ModelKind) -> Result<PathBuf> {
    let data = load_dataset(cfg, true, None)?;
    write_resolved_config(cfg)?;
    let labels = labels_of(&data.compounds)?;
    let split = stratified_split(&labels, &cfg.split_spec())?;
    let out = &cfg.paths.out_dir;
    let ckpt_path = out.join(kind.checkpoint_name());
    match kind {
        ModelKind::Gaa => {
            let grid = cfg.grid()?;
            let feats = augmented(cfg, &data.graph, &data.compounds, &grid)?;
            let train_cfg = cfg.train.to_config(cfg.seed);
            let outcome = train_gaa(
                &data.graph,
                &data.modules,
                &feats,
                &labels,
                &split,
                &cfg.model,
                &train_cfg,
            )?;
            let mut log_body = String::new();
            for rec in &outcome.log {
                log_body.push_str(&serde_json::to_string(rec)?);
                log_body.push('\n');
            }
            atomic_write(&out.join("train-log.jsonl"), log_body.as_bytes())?;
            Checkpoint::for_model(
                &outcome.params,
                &cfg.model,
                &data.graph,
                &data.modules,
                grid.alphas(),
            )
            .save(&ckpt_path)?;
            if outcome.diverged {
                return Err(Error::Numerical(format!(
                    "training diverged after epoch {}; last good checkpoint saved to {}",
                    outcome.epochs_run,
                    ckpt_path.display()
                )));
            }
            println!(
                "trained {} epochs{}; best validation F1 {:.4} at epoch {}; checkpoint {}",
                outcome.epochs_run,
                if outcome.stopped_early {
                    " (stopped early)"
                } else {
                    ""
                },
                outcome.best_val_f1,
                outcome.best_epoch,
                ckpt_path.display()
            );
        }
        ModelKind::Baseline => {
            let x = baseline_feature_matrix(&data.graph, &data.compounds, cfg.baseline.alpha)?;
            let train_labels: Vec<u8> = split.train.iter().map(|&i| labels[i]).collect();
            let weights = match cfg.train.class_weight_mode {
                ClassWeightMode::InverseFrequency => {
                    crate::training::class_weights(&train_labels)?
                }
                ClassWeightMode::None => [1.0, 1.0],
            };
            let rows = select_rows(&x, &split.train);
            let model = fit_logistic(&rows, &train_labels, weights, cfg.baseline.l2)?;
            baseline_checkpoint(&model, &data.graph, cfg.baseline.alpha).save(&ckpt_path)?;
            print_baseline_assumptions();
            println!(
                "fitted baseline on {} compounds; checkpoint {}",
                split.train.len(),
                ckpt_path.display()
            );
        }
    }
    Ok(ckpt_path)
}

fn select_rows(x: &Array2<f64>, ids: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((ids.len(), x.ncols()));
    for (r, &i) in ids.iter().enumerate() {
        out.row_mut(r).assign(&x.row(i));
    }
    out
}

fn baseline_checkpoint(model: &LinearModel, graph: &SharedGraph, alpha: f64) -> Checkpoint {
    let mut params = std::collections::BTreeMap::new();
    params.insert(
        "w".to_string(),
        TensorData {
            shape: [1, model.w.len()],
            data: model.w.clone(),
        },
    );
    params.insert(
        "b".to_string(),
        TensorData {
            shape: [1, 1],
            data: vec![model.b],
        },
    );
    params.insert(
        "l2".to_string(),
        TensorData {
            shape: [1, 1],
            data: vec![model.l2],
        },
    );
    Checkpoint {
        version: CHECKPOINT_VERSION,
        kind: "baseline".into(),
        graph_hash: graph.hash().to_string(),
        modules_hash: String::new(),
        alphas: vec![alpha],
        module_names: Vec::new(),
        config: None,
        params,
    }
}

fn baseline_from_checkpoint(ckpt: &Checkpoint, n_nodes: usize) -> Result<LinearModel> {
    let get = |name: &str| {
        ckpt.params
            .get(name)
            .ok_or_else(|| Error::invalid(format!("baseline checkpoint lacks tensor {name:?}")))
    };
    let w = get("w")?;
    if w.shape != [1, n_nodes] {
        return Err(Error::shape(format!(
            "baseline weights cover {} nodes, graph has {n_nodes}",
            w.shape[1]
        )));
    }
    Ok(LinearModel {
        w: w.data.clone(),
        b: get("b")?.data[0],
        l2: get("l2")?.data[0],
    })
}

fn check_graph_hash(ckpt: &Checkpoint, graph: &SharedGraph) -> Result<()> {
    if ckpt.graph_hash != graph.hash() {
        return Err(Error::HashMismatch(format!(
            "checkpoint was trained on graph {} but the loaded graph hashes to {}",
            &ckpt.graph_hash[..12.min(ckpt.graph_hash.len())],
            &graph.hash()[..12]
        )));
    }
    Ok(())
}

fn check_modules_hash(ckpt: &Checkpoint, modules: &SupermoduleMap) -> Result<()> {
    if ckpt.modules_hash != modules.hash() {
        return Err(Error::HashMismatch(
            "checkpoint was trained on a different supermodule map".into(),
        ));
    }
    Ok(())
}

/// Scores for the listed compounds under a loaded checkpoint, routed by
/// checkpoint kind.
fn checkpoint_scores(
    cfg: &RunConfig,
    ckpt: &Checkpoint,
    data: &Dataset,
    ids: &[usize],
) -> Result<Vec<f64>> {
    check_graph_hash(ckpt, &data.graph)?;
    match ckpt.kind.as_str() {
        "gaa" => {
            check_modules_hash(ckpt, &data.modules)?;
            let dims = ModelDims {
                n_nodes: data.graph.n_nodes(),
                f_prime: ckpt.alphas.len(),
                n_modules: data.modules.n_modules(),
            };
            let (mcfg, params) = ckpt.model_params(&dims)?;
            // features must use the grid the model was trained on
            let grid = AlphaGrid::new(ckpt.alphas.clone())?;
            let feats = augmented(cfg, &data.graph, &data.compounds, &grid)?;
            let ctx = ModelContext::new(&data.graph, &data.modules, mcfg.aggregator);
            predict_scores(&params, &ctx, &feats, ids)
        }
        "baseline" => {
            let model = baseline_from_checkpoint(ckpt, data.graph.n_nodes())?;
            let x = baseline_feature_matrix(&data.graph, &data.compounds, ckpt.alphas[0])?;
            baseline_scores(&model, &x, ids)
        }
        other => Err(Error::invalid(format!("unknown checkpoint kind {other:?}"))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitChoice {
    Train,
    Val,
    Test,
}

impl SplitChoice {
    fn name(self) -> &'static str {
        match self {
            SplitChoice::Train => "train",
            SplitChoice::Val => "val",
            SplitChoice::Test => "test",
        }
    }

    fn pick(self, split: &Split) -> &[usize] {
        match self {
            SplitChoice::Train => &split.train,
            SplitChoice::Val => &split.val,
            SplitChoice::Test => &split.test,
        }
    }
}

/// Score one split of the labeled compounds and print a metrics row.
pub fn cmd_evaluate(cfg: &RunConfig, ckpt_path: &Path, choice: SplitChoice) -> Result<EvalReport> {
    let data = load_dataset(cfg, true, None)?;
    write_resolved_config(cfg)?;
    let labels = labels_of(&data.compounds)?;
    let split = stratified_split(&labels, &cfg.split_spec())?;
    let ids = choice.pick(&split);
    let ckpt = Checkpoint::load(ckpt_path)?;
    let scores = checkpoint_scores(cfg, &ckpt, &data, ids)?;
    let subset: Vec<u8> = ids.iter().map(|&i| labels[i]).collect();
    let report = metrics::evaluate(&scores, &subset, 0.5)?;

    let label = match ckpt.kind.as_str() {
        "gaa" => "GAA",
        _ => "Baseline",
    };
    if ckpt.kind == "baseline" {
        print_baseline_assumptions();
    }
    println!(
        "{:<10} {:<6} {:>8} {:>8} {:>8} {:>6}",
        "model", "split", "ACC", "F1", "AUPR", "n"
    );
    println!(
        "{:<10} {:<6} {:>8.4} {:>8.4} {:>8.4} {:>6}",
        label,
        choice.name(),
        report.acc,
        report.f1,
        report.aupr,
        report.n
    );
    let json_path = cfg
        .paths
        .out_dir
        .join(format!("eval-{}-{}.json", ckpt.kind, choice.name()));
    let mut body = serde_json::to_string_pretty(&report)?;
    body.push('\n');
    atomic_write(&json_path, body.as_bytes())?;
    log::info!("evaluation report written to {}", json_path.display());
    Ok(report)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub rank: usize,
    pub compound_id: String,
    pub probability: f64,
    pub flagged: bool,
}

/// Rank compounds by positive-class probability. Ties are broken by
/// compound id so output order is fully deterministic.
pub fn cmd_predict(
    cfg: &RunConfig,
    ckpt_path: &Path,
    threshold: f64,
    features_path: Option<&Path>,
) -> Result<Vec<PredictionRecord>> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::invalid(format!(
            "threshold {threshold} must lie in [0, 1]"
        )));
    }
    let data = load_dataset(cfg, false, features_path)?;
    write_resolved_config(cfg)?;
    let ckpt = Checkpoint::load(ckpt_path)?;
    let ids: Vec<usize> = (0..data.compounds.n_compounds()).collect();
    let scores = checkpoint_scores(cfg, &ckpt, &data, &ids)?;

    let mut order: Vec<usize> = ids;
    order.sort_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then_with(|| data.compounds.compound_ids()[a].cmp(&data.compounds.compound_ids()[b]))
    });
    let records: Vec<PredictionRecord> = order
        .iter()
        .enumerate()
        .map(|(r, &i)| PredictionRecord {
            rank: r + 1,
            compound_id: data.compounds.compound_ids()[i].clone(),
            probability: scores[i],
            flagged: scores[i] >= threshold,
        })
        .collect();

    let mut tsv = String::from("rank\tcompound_id\tprobability\tflagged\n");
    for rec in &records {
        tsv.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            rec.rank,
            rec.compound_id,
            rec.probability,
            if rec.flagged { 1 } else { 0 }
        ));
    }
    let tsv_path = cfg.paths.out_dir.join("predictions.tsv");
    atomic_write(&tsv_path, tsv.as_bytes())?;
    if ckpt.kind == "baseline" {
        print_baseline_assumptions();
    }
    println!(
        "scored {} compounds; {} at or above probability {}; rankings in {}",
        records.len(),
        records.iter().filter(|r| r.flagged).count(),
        threshold,
        tsv_path.display()
    );
    Ok(records)
}

#[derive(Debug, Clone, Serialize)]
pub struct ReportRow {
    pub pathway: String,
    pub mean_abs_pos: f64,
    pub mean_abs_neg: f64,
    pub difference: f64,
}

/// Per-pathway mean absolute embedding values, grouped by compound label.
/// This is the table behind bar-plot comparisons of embedding magnitude
/// between classes.
pub fn cmd_report(
    cfg: &RunConfig,
    ckpt_path: &Path,
    pathways: Option<&[String]>,
) -> Result<Vec<ReportRow>> {
    let data = load_dataset(cfg, true, None)?;
    write_resolved_config(cfg)?;
    let labels = labels_of(&data.compounds)?;
    let ckpt = Checkpoint::load(ckpt_path)?;
    if ckpt.kind != "gaa" {
        return Err(Error::invalid(
            "report needs pathway embeddings, which only the autoencoder checkpoint has",
        ));
    }
    check_graph_hash(&ckpt, &data.graph)?;
    check_modules_hash(&ckpt, &data.modules)?;

    let selected: Vec<usize> = match pathways {
        None => (0..data.modules.n_modules()).collect(),
        Some(names) => names
            .iter()
            .map(|n| {
                data.modules
                    .module_index(n)
                    .ok_or_else(|| Error::invalid(format!("unknown pathway {n:?}")))
            })
            .collect::<Result<_>>()?,
    };

    let dims = ModelDims {
        n_nodes: data.graph.n_nodes(),
        f_prime: ckpt.alphas.len(),
        n_modules: data.modules.n_modules(),
    };
    let (mcfg, params) = ckpt.model_params(&dims)?;
    let grid = AlphaGrid::new(ckpt.alphas.clone())?;
    let feats = augmented(cfg, &data.graph, &data.compounds, &grid)?;
    let ctx = ModelContext::new(&data.graph, &data.modules, mcfg.aggregator);
    let embeddings: Vec<Vec<f64>> = (0..data.compounds.n_compounds())
        .into_par_iter()
        .map(|c| Ok(predict_one(&params, &ctx, &feats[c].matrix)?.1.values()))
        .collect::<Result<_>>()?;

    let mut sums = [
        Array1::<f64>::zeros(data.modules.n_modules()),
        Array1::<f64>::zeros(data.modules.n_modules()),
    ];
    let mut counts = [0usize; 2];
    for (z, &l) in embeddings.iter().zip(&labels) {
        counts[l as usize] += 1;
        for (i, v) in z.iter().enumerate() {
            sums[l as usize][i] += v.abs();
        }
    }
    if counts[0] == 0 || counts[1] == 0 {
        return Err(Error::invalid(
            "report needs compounds from both classes to compare",
        ));
    }

    let rows: Vec<ReportRow> = selected
        .iter()
        .map(|&m| {
            let pos = sums[1][m] / counts[1] as f64;
            let neg = sums[0][m] / counts[0] as f64;
            ReportRow {
                pathway: data.modules.module_names()[m].clone(),
                mean_abs_pos: pos,
                mean_abs_neg: neg,
                difference: pos - neg,
            }
        })
        .collect();

    let mut tsv = String::from("pathway\tmean_abs_pos\tmean_abs_neg\tdifference\n");
    for row in &rows {
        tsv.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            row.pathway, row.mean_abs_pos, row.mean_abs_neg, row.difference
        ));
    }
    print!("{tsv}");
    let path = cfg.paths.out_dir.join("pathway-report.tsv");
    atomic_write(&path, tsv.as_bytes())?;
    log::info!("pathway report written to {}", path.display());
    Ok(rows)
}

/// Materialize a synthetic dataset as the TSV/GMT files the other
/// subcommands consume, plus a ready-to-run config and a metadata sidecar
/// describing the planted signal.
pub fn cmd_synth(spec: &SynthSpec, out_dir: &Path) -> Result<PathBuf> {
    let data = generate(spec)?;
    fs::create_dir_all(out_dir)?;
    let out_abs = out_dir
        .canonicalize()
        .map_err(|e| Error::invalid(format!("cannot resolve {}: {e}", out_dir.display())))?;
    write_dataset_files(&data, &out_abs)?;

    let cfg = RunConfig {
        paths: Paths {
            edges: out_abs.join("edges.tsv"),
            features: out_abs.join("targets.tsv"),
            labels: out_abs.join("labels.tsv"),
            modules: out_abs.join("modules.gmt"),
            cache_dir: Some(out_abs.join("cache")),
            out_dir: out_abs.join("out"),
        },
        seed: spec.seed,
        ..RunConfig::default()
    };
    let cfg_path = out_abs.join("config.toml");
    atomic_write(&cfg_path, cfg.resolved_toml()?.as_bytes())?;

    #[derive(Serialize)]
    struct Meta<'a> {
        spec: &'a SynthSpec,
        signal_module: &'a str,
        threshold: f64,
    }
    let meta = serde_json::to_string_pretty(&Meta {
        spec,
        signal_module: data.modules.module_names()[data.signal_module].as_str(),
        threshold: data.threshold,
    })?;
    atomic_write(&out_abs.join("meta.json"), format!("{meta}\n").as_bytes())?;

    println!(
        "wrote synthetic dataset ({} nodes, {} edges, {} modules, {} compounds) and config {}",
        data.graph.n_nodes(),
        data.graph.n_edges(),
        data.modules.n_modules(),
        data.compounds.n_compounds(),
        cfg_path.display()
    );
    Ok(cfg_path)
}

fn write_dataset_files(data: &SynthDataset, dir: &Path) -> Result<()> {
    let mut edges = String::new();
    for (a, b) in data.graph.edge_id_pairs() {
        edges.push_str(&format!("{a}\t{b}\n"));
    }
    atomic_write(&dir.join("edges.tsv"), edges.as_bytes())?;

    let node_ids = data.graph.node_ids();
    let mut gmt = String::new();
    for m in 0..data.modules.n_modules() {
        gmt.push_str(&data.modules.module_names()[m]);
        gmt.push_str("\tsynthetic");
        for &member in data.modules.members(m) {
            gmt.push('\t');
            gmt.push_str(&node_ids[member]);
        }
        gmt.push('\n');
    }
    atomic_write(&dir.join("modules.gmt"), gmt.as_bytes())?;

    let mut targets = String::new();
    let mut labels = String::new();
    let label_vec = data.compounds.labels().expect("synthetic data is labeled");
    for c in 0..data.compounds.n_compounds() {
        let cid = &data.compounds.compound_ids()[c];
        for &t in data.compounds.targets(c) {
            targets.push_str(&format!("{cid}\t{}\n", node_ids[t]));
        }
        labels.push_str(&format!("{cid}\t{}\n", label_vec[c]));
    }
    atomic_write(&dir.join("targets.tsv"), targets.as_bytes())?;
    atomic_write(&dir.join("labels.tsv"), labels.as_bytes())?;
    Ok(())
}
