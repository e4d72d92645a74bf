//! Random-walk-with-restart diffusion and graph-augmented features.
//!
//! The steady state of `x^{t+1} = alpha*x0 + (1-alpha)*Â*x^t` weighs each
//! node by proximity to the seed set; concatenating steady states over a
//! grid of restart probabilities yields the augmented feature matrix the
//! model consumes. The iteration is a contraction with factor `(1-alpha)`,
//! so the production path is fixed-point iteration; a dense LU solve of
//! `(I - (1-alpha)Â) x = alpha*x0` serves as the small-graph oracle.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::{CompoundSet, SharedGraph};

pub const DEFAULT_TOL: f64 = 1e-9;
pub const DEFAULT_MAX_ITER: usize = 10_000;

/// Ordered grid of restart probabilities, each in (0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaGrid {
    alphas: Vec<f64>,
}

impl AlphaGrid {
    pub fn new(alphas: Vec<f64>) -> Result<Self> {
        if alphas.is_empty() {
            return Err(Error::invalid("alpha grid must be non-empty"));
        }
        for &a in &alphas {
            if !(a > 0.0 && a <= 1.0) {
                return Err(Error::invalid(format!(
                    "restart probability {a} outside (0, 1]"
                )));
            }
        }
        if alphas.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("alpha grid must be strictly increasing"));
        }
        Ok(AlphaGrid { alphas })
    }

    /// The grid used throughout evaluation: 0.1, 0.2, ..., 0.9.
    pub fn nine_step() -> Self {
        AlphaGrid::new((1..=9).map(|i| i as f64 / 10.0).collect()).unwrap()
    }

    /// Raw features only (alpha = 1 leaves the input unchanged).
    pub fn raw() -> Self {
        AlphaGrid::new(vec![1.0]).unwrap()
    }

    /// Parse either a comma list (`0.1,0.5,0.9`) or a range
    /// (`start:stop:step`, inclusive of `stop` up to rounding).
    pub fn parse(text: &str) -> Result<Self> {
        let parse_f = |s: &str| -> Result<f64> {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::invalid(format!("bad alpha value {s:?}")))
        };
        if text.contains(':') {
            let parts: Vec<&str> = text.split(':').collect();
            if parts.len() != 3 {
                return Err(Error::invalid(format!(
                    "alpha range must be start:stop:step, got {text:?}"
                )));
            }
            let (start, stop, step) = (parse_f(parts[0])?, parse_f(parts[1])?, parse_f(parts[2])?);
            if step <= 0.0 {
                return Err(Error::invalid("alpha range step must be positive"));
            }
            let mut alphas = Vec::new();
            let mut k = 0usize;
            loop {
                let a = start + step * k as f64;
                if a > stop + 1e-9 {
                    break;
                }
                // snap to a clean decimal so 0.1:0.9:0.1 gives exactly 0.3
                alphas.push((a * 1e9).round() / 1e9);
                k += 1;
            }
            AlphaGrid::new(alphas)
        } else {
            let alphas = text
                .split(',')
                .map(parse_f)
                .collect::<Result<Vec<f64>>>()?;
            AlphaGrid::new(alphas)
        }
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn len(&self) -> usize {
        self.alphas.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Stable key used in cache file names.
    pub fn cache_key(&self) -> String {
        let joined = self
            .alphas
            .iter()
            .map(|a| a.to_string())
            .collect::<Vec<_>>()
            .join(",");
        let mut hasher = Sha256::new();
        hasher.update(joined.as_bytes());
        crate::graph::hex_digest(hasher)[..12].to_string()
    }
}

/// Dense N x F' matrix of concatenated steady states, one column block per
/// alpha (F = 1 raw feature per compound, so block s is column s).
#[derive(Debug, Clone)]
pub struct AugmentedFeatures {
    pub matrix: Array2<f64>,
    pub alphas: Vec<f64>,
}

impl AugmentedFeatures {
    pub fn width(&self) -> usize {
        self.matrix.ncols()
    }
}

/// Fixed-point RWR solve for a single seed vector.
///
/// Returns the steady state once the sup-norm step difference drops to
/// `tol`; errors if `max_iter` is exhausted first (a sign of a pathological
/// tolerance, since the contraction factor bounds the iteration count).
pub fn rwr_steady_state(
    graph: &SharedGraph,
    x0: &[f64],
    alpha: f64,
    tol: f64,
    max_iter: usize,
) -> Result<Vec<f64>> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::invalid(format!(
            "restart probability {alpha} outside (0, 1]"
        )));
    }
    if tol <= 0.0 {
        return Err(Error::invalid("tolerance must be positive"));
    }
    if x0.len() != graph.n_nodes() {
        return Err(Error::shape(format!(
            "seed vector length {} does not match {} nodes",
            x0.len(),
            graph.n_nodes()
        )));
    }
    let mut x = x0.to_vec();
    let mut residual = f64::INFINITY;
    for _ in 0..max_iter {
        let ax = graph.spmv_colnorm(&x)?;
        let mut diff: f64 = 0.0;
        for i in 0..x.len() {
            let next = alpha * x0[i] + (1.0 - alpha) * ax[i];
            diff = diff.max((next - x[i]).abs());
            x[i] = next;
        }
        residual = diff;
        if diff <= tol {
            return Ok(x);
        }
    }
    Err(Error::NoConvergence { max_iter, residual })
}

/// Exact steady state via dense LU of `(I - (1-alpha)Â)`; test oracle for
/// the iterative solver, guarded to small graphs.
pub fn dense_rwr_oracle(graph: &SharedGraph, x: &Array2<f64>, alpha: f64) -> Result<Array2<f64>> {
    const MAX_DENSE_NODES: usize = 2000;
    let n = graph.n_nodes();
    if n > MAX_DENSE_NODES {
        return Err(Error::invalid(format!(
            "dense oracle guarded to {MAX_DENSE_NODES} nodes, graph has {n}"
        )));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::invalid(format!(
            "restart probability {alpha} outside (0, 1]"
        )));
    }
    if x.nrows() != n {
        return Err(Error::shape(format!(
            "feature matrix has {} rows, graph has {n} nodes",
            x.nrows()
        )));
    }
    let mut system = graph.colnorm_dense();
    system.mapv_inplace(|v| -(1.0 - alpha) * v);
    for i in 0..n {
        system[(i, i)] += 1.0;
    }
    let rhs = x.mapv(|v| alpha * v);
    lu_solve(system, rhs)
}

/// LU factorization with partial pivoting, solving `A X = B` for dense `A`.
fn lu_solve(mut a: Array2<f64>, mut b: Array2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n {
        return Err(Error::shape("lu_solve expects square A and matching B"));
    }
    for col in 0..n {
        let mut pivot = col;
        let mut best = a[(col, col)].abs();
        for row in col + 1..n {
            let v = a[(row, col)].abs();
            if v > best {
                best = v;
                pivot = row;
            }
        }
        if best == 0.0 {
            return Err(Error::Numerical("singular diffusion system".into()));
        }
        if pivot != col {
            for k in 0..n {
                a.swap((col, k), (pivot, k));
            }
            for k in 0..b.ncols() {
                b.swap((col, k), (pivot, k));
            }
        }
        let d = a[(col, col)];
        for row in col + 1..n {
            let factor = a[(row, col)] / d;
            if factor == 0.0 {
                continue;
            }
            for k in col..n {
                a[(row, k)] -= factor * a[(col, k)];
            }
            for k in 0..b.ncols() {
                b[(row, k)] -= factor * b[(col, k)];
            }
        }
    }
    // back substitution
    for col in (0..n).rev() {
        let d = a[(col, col)];
        for k in 0..b.ncols() {
            b[(col, k)] /= d;
        }
        for row in 0..col {
            let factor = a[(row, col)];
            if factor == 0.0 {
                continue;
            }
            for k in 0..b.ncols() {
                let v = b[(col, k)];
                b[(row, k)] -= factor * v;
            }
        }
    }
    Ok(b)
}

/// Compute augmented features for every compound, in parallel.
///
/// Each compound contributes one raw binary column; the output per compound
/// is the N x t matrix of steady states over the grid. Compounds with no
/// targets yield an all-zero matrix with a warning.
pub fn augment_features(
    graph: &SharedGraph,
    compounds: &CompoundSet,
    grid: &AlphaGrid,
    tol: f64,
    max_iter: usize,
) -> Result<Vec<AugmentedFeatures>> {
    if compounds.n_nodes() != graph.n_nodes() {
        return Err(Error::shape(format!(
            "compound set built for {} nodes, graph has {}",
            compounds.n_nodes(),
            graph.n_nodes()
        )));
    }
    (0..compounds.n_compounds())
        .into_par_iter()
        .map(|c| {
            if compounds.targets(c).is_empty() {
                log::warn!(
                    "compound {:?} has no targets; features are all zero",
                    compounds.compound_ids()[c]
                );
            }
            augment_one(graph, &compounds.dense_features(c), grid, tol, max_iter)
        })
        .collect()
}

pub fn augment_one(
    graph: &SharedGraph,
    x0: &[f64],
    grid: &AlphaGrid,
    tol: f64,
    max_iter: usize,
) -> Result<AugmentedFeatures> {
    let n = graph.n_nodes();
    let mut matrix = Array2::zeros((n, grid.len()));
    for (s, &alpha) in grid.alphas().iter().enumerate() {
        let x = rwr_steady_state(graph, x0, alpha, tol, max_iter)?;
        for i in 0..n {
            matrix[(i, s)] = x[i];
        }
    }
    Ok(AugmentedFeatures {
        matrix,
        alphas: grid.alphas().to_vec(),
    })
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
struct CacheSidecar {
    graph_hash: String,
    compound_id: String,
    alphas: Vec<f64>,
    tol: f64,
    n_nodes: usize,
}

/// Disk cache of augmented features keyed by (graph hash, compound id,
/// grid). Writers stage to a temp file and atomically rename, so concurrent
/// readers never observe partial matrices.
pub struct FeatureCache {
    root: PathBuf,
}

impl FeatureCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        FeatureCache { root: root.into() }
    }

    fn entry_path(&self, graph: &SharedGraph, grid: &AlphaGrid, compound_id: &str) -> PathBuf {
        let mut hasher = Sha256::new();
        hasher.update(compound_id.as_bytes());
        let id_hash = &crate::graph::hex_digest(hasher)[..8];
        let safe: String = compound_id
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
            .collect();
        self.root
            .join(&graph.hash()[..16])
            .join(format!("{safe}__{id_hash}__{}.tsv", grid.cache_key()))
    }

    pub fn load(
        &self,
        graph: &SharedGraph,
        grid: &AlphaGrid,
        compound_id: &str,
        tol: f64,
    ) -> Option<AugmentedFeatures> {
        let path = self.entry_path(graph, grid, compound_id);
        let sidecar_path = path.with_extension("json");
        let sidecar: CacheSidecar = serde_json::from_str(&fs::read_to_string(sidecar_path).ok()?).ok()?;
        let expected = CacheSidecar {
            graph_hash: graph.hash().to_string(),
            compound_id: compound_id.to_string(),
            alphas: grid.alphas().to_vec(),
            tol,
            n_nodes: graph.n_nodes(),
        };
        if sidecar != expected {
            return None;
        }
        let text = fs::read_to_string(&path).ok()?;
        let mut rows = Vec::new();
        for line in text.lines() {
            let row: Option<Vec<f64>> = line.split('\t').map(|v| v.parse::<f64>().ok()).collect();
            rows.push(row?);
        }
        if rows.len() != graph.n_nodes() || rows.iter().any(|r| r.len() != grid.len()) {
            return None;
        }
        let mut matrix = Array2::zeros((rows.len(), grid.len()));
        for (i, row) in rows.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                matrix[(i, j)] = v;
            }
        }
        Some(AugmentedFeatures {
            matrix,
            alphas: grid.alphas().to_vec(),
        })
    }

    pub fn store(
        &self,
        graph: &SharedGraph,
        grid: &AlphaGrid,
        compound_id: &str,
        tol: f64,
        features: &AugmentedFeatures,
    ) -> Result<()> {
        let path = self.entry_path(graph, grid, compound_id);
        fs::create_dir_all(path.parent().unwrap())?;
        let mut body = String::new();
        for i in 0..features.matrix.nrows() {
            for j in 0..features.matrix.ncols() {
                if j > 0 {
                    body.push('\t');
                }
                body.push_str(&features.matrix[(i, j)].to_string());
            }
            body.push('\n');
        }
        atomic_write(&path, body.as_bytes())?;
        let sidecar = CacheSidecar {
            graph_hash: graph.hash().to_string(),
            compound_id: compound_id.to_string(),
            alphas: grid.alphas().to_vec(),
            tol,
            n_nodes: graph.n_nodes(),
        };
        atomic_write(
            &path.with_extension("json"),
            serde_json::to_string_pretty(&sidecar)?.as_bytes(),
        )?;
        Ok(())
    }
}

/// Write via a unique temp file in the same directory, then rename.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!("tmp.{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Compute augmented features for all compounds, reusing cached solves when
/// a cache directory is provided.
pub fn augment_features_cached(
    graph: &SharedGraph,
    compounds: &CompoundSet,
    grid: &AlphaGrid,
    tol: f64,
    max_iter: usize,
    cache: Option<&FeatureCache>,
) -> Result<Vec<AugmentedFeatures>> {
    let Some(cache) = cache else {
        return augment_features(graph, compounds, grid, tol, max_iter);
    };
    (0..compounds.n_compounds())
        .into_par_iter()
        .map(|c| {
            let id = &compounds.compound_ids()[c];
            if let Some(hit) = cache.load(graph, grid, id, tol) {
                return Ok(hit);
            }
            if compounds.targets(c).is_empty() {
                log::warn!("compound {id:?} has no targets; features are all zero");
            }
            let computed = augment_one(graph, &compounds.dense_features(c), grid, tol, max_iter)?;
            cache.store(graph, grid, id, tol, &computed)?;
            Ok(computed)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_graph;
    use crate::testkit::random_connected_graph;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn alpha_grid_validation() {
        assert!(AlphaGrid::new(vec![]).is_err());
        assert!(AlphaGrid::new(vec![0.0]).is_err());
        assert!(AlphaGrid::new(vec![0.5, 0.5]).is_err());
        assert!(AlphaGrid::new(vec![0.9, 0.1]).is_err());
        assert!(AlphaGrid::new(vec![1.1]).is_err());
        assert_eq!(AlphaGrid::nine_step().len(), 9);
        assert_eq!(AlphaGrid::nine_step().alphas()[2], 0.3);
    }

    #[test]
    fn alpha_grid_parsing() {
        let g = AlphaGrid::parse("0.1:0.9:0.1").unwrap();
        assert_eq!(g.alphas(), AlphaGrid::nine_step().alphas());
        let g = AlphaGrid::parse("0.25,0.5,1.0").unwrap();
        assert_eq!(g.alphas(), &[0.25, 0.5, 1.0]);
        assert!(AlphaGrid::parse("0.5:0.1:0.1").is_err());
        assert!(AlphaGrid::parse("abc").is_err());
    }

    #[test]
    fn alpha_one_returns_seed_exactly() {
        let g = build_graph(&[("a", "b"), ("b", "c")]).unwrap();
        let x0 = vec![0.3, 0.0, 1.5];
        let x = rwr_steady_state(&g, &x0, 1.0, 1e-12, 10).unwrap();
        assert_eq!(x, x0);
    }

    #[test]
    fn zero_seed_stays_zero() {
        let g = build_graph(&[("a", "b"), ("b", "c")]).unwrap();
        let x = rwr_steady_state(&g, &[0.0; 3], 0.5, 1e-12, 100).unwrap();
        assert_eq!(x, vec![0.0; 3]);
    }

    #[test]
    fn two_node_closed_form() {
        // (I - 0.5*Â)^{-1} with Â = [[0,1],[1,0]] is (1/0.75)*[[1,0.5],[0.5,1]];
        // x* = 0.5 * that * e1 = (2/3, 1/3)
        let g = build_graph(&[("a", "b")]).unwrap();
        let x = rwr_steady_state(&g, &[1.0, 0.0], 0.5, 1e-14, 1000).unwrap();
        assert!((x[0] - 2.0 / 3.0).abs() <= 1e-10);
        assert!((x[1] - 1.0 / 3.0).abs() <= 1e-10);

        let oracle = dense_rwr_oracle(&g, &ndarray::arr2(&[[1.0], [0.0]]), 0.5).unwrap();
        assert!((oracle[(0, 0)] - 2.0 / 3.0).abs() <= 1e-12);
        assert!((oracle[(1, 0)] - 1.0 / 3.0).abs() <= 1e-12);
    }

    #[test]
    fn oracle_identity_at_alpha_one() {
        let g = build_graph(&[("a", "b"), ("b", "c")]).unwrap();
        let x = ndarray::arr2(&[[1.0, 2.0], [0.5, -1.0], [0.0, 3.0]]);
        let out = dense_rwr_oracle(&g, &x, 1.0).unwrap();
        for (a, b) in out.iter().zip(x.iter()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn two_node_identity_features_closed_form() {
        // X = I2, alpha = 0.5: columns are the solves for e1 and e2.
        let g = build_graph(&[("a", "b")]).unwrap();
        let out = dense_rwr_oracle(&g, &Array2::eye(2), 0.5).unwrap();
        let expected = [[2.0 / 3.0, 1.0 / 3.0], [1.0 / 3.0, 2.0 / 3.0]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((out[(i, j)] - expected[i][j]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn iterative_matches_oracle_on_random_graphs() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..25 {
            let g = random_connected_graph(&mut rng, 2, 50);
            let n = g.n_nodes();
            let x0: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
            let xmat = Array2::from_shape_fn((n, 1), |(i, _)| x0[i]);
            for &alpha in &[0.1, 0.5, 0.9] {
                let iter = rwr_steady_state(&g, &x0, alpha, 1e-10, DEFAULT_MAX_ITER).unwrap();
                let exact = dense_rwr_oracle(&g, &xmat, alpha).unwrap();
                let gap = iter
                    .iter()
                    .enumerate()
                    .map(|(i, v)| (v - exact[(i, 0)]).abs())
                    .fold(0.0f64, f64::max);
                assert!(gap <= 1e-8, "gap {gap} at alpha {alpha}");
            }
        }
    }

    #[test]
    fn mass_conservation_and_linearity() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for _ in 0..10 {
            let g = random_connected_graph(&mut rng, 3, 40);
            let n = g.n_nodes();
            let x0: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
            let y0: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
            let alpha = 0.3;
            let xs = rwr_steady_state(&g, &x0, alpha, 1e-12, DEFAULT_MAX_ITER).unwrap();
            let ys = rwr_steady_state(&g, &y0, alpha, 1e-12, DEFAULT_MAX_ITER).unwrap();
            assert!((xs.iter().sum::<f64>() - x0.iter().sum::<f64>()).abs() <= 1e-8);

            let (a, b) = (1.7, -0.4);
            let combo: Vec<f64> = (0..n).map(|i| a * x0[i] + b * y0[i]).collect();
            let cs = rwr_steady_state(&g, &combo, alpha, 1e-12, DEFAULT_MAX_ITER).unwrap();
            for i in 0..n {
                assert!((cs[i] - (a * xs[i] + b * ys[i])).abs() <= 1e-8);
            }
        }
    }

    #[test]
    fn monotone_localization_in_alpha() {
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        for _ in 0..10 {
            let g = random_connected_graph(&mut rng, 4, 40);
            let n = g.n_nodes();
            let n_src = rng.random_range(1..=n.min(4));
            let mut src: Vec<usize> = (0..n).collect();
            for i in 0..n_src {
                let j = rng.random_range(i..n);
                src.swap(i, j);
            }
            let src = &src[..n_src];
            let mut x0 = vec![0.0; n];
            for &s in src {
                x0[s] = 1.0;
            }
            let mut prev = -1.0;
            for &alpha in AlphaGrid::nine_step().alphas() {
                let x = rwr_steady_state(&g, &x0, alpha, 1e-12, DEFAULT_MAX_ITER).unwrap();
                let on_src: f64 = src.iter().map(|&s| x[s]).sum();
                assert!(on_src >= prev - 1e-12, "mass dropped as alpha grew");
                prev = on_src;
            }
        }
    }

    #[test]
    fn pathological_tolerance_reports_residual() {
        let g = build_graph(&[("a", "b"), ("b", "c")]).unwrap();
        match rwr_steady_state(&g, &[1.0, 0.0, 0.0], 0.1, 1e-30, 5) {
            Err(Error::NoConvergence { max_iter, residual }) => {
                assert_eq!(max_iter, 5);
                assert!(residual > 0.0);
            }
            other => panic!("expected NoConvergence, got {other:?}"),
        }
    }

    #[test]
    fn augmented_block_for_alpha_one_is_raw() {
        let g = build_graph(&[("a", "b"), ("b", "c"), ("c", "d")]).unwrap();
        let set = crate::graph::parse_compound_features("k1\ta\nk1\tc\nk2\tb\n", &g).unwrap();
        let grid = AlphaGrid::new(vec![0.5, 1.0]).unwrap();
        let feats = augment_features(&g, &set, &grid, 1e-12, DEFAULT_MAX_ITER).unwrap();
        assert_eq!(feats.len(), 2);
        assert_eq!(feats[0].width(), 2);
        let raw = set.dense_features(0);
        for i in 0..g.n_nodes() {
            assert_eq!(feats[0].matrix[(i, 1)], raw[i]); // alpha = 1 block exact
            assert!(feats[0].matrix[(i, 0)] >= 0.0);
        }
        // per-alpha column sums equal the number of targets
        let col0: f64 = (0..g.n_nodes()).map(|i| feats[0].matrix[(i, 0)]).sum();
        assert!((col0 - 2.0).abs() <= 1e-8);
    }

    #[test]
    fn nine_grid_width_and_zero_target_compound() {
        let g = build_graph(&[("a", "b"), ("b", "c")]).unwrap();
        let set =
            crate::graph::CompoundSet::from_targets(vec!["e".into()], vec![vec![]], None, 3)
                .unwrap();
        let feats = augment_features(&g, &set, &AlphaGrid::nine_step(), 1e-9, 1000).unwrap();
        assert_eq!(feats[0].width(), 9);
        assert!(feats[0].matrix.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cache_round_trip_and_invalidation() {
        let dir = tempfile::tempdir().unwrap();
        let cache = FeatureCache::new(dir.path());
        let g = build_graph(&[("a", "b"), ("b", "c")]).unwrap();
        let set = crate::graph::parse_compound_features("k1\ta\n", &g).unwrap();
        let grid = AlphaGrid::new(vec![0.5]).unwrap();

        let feats = augment_features(&g, &set, &grid, 1e-9, 1000).unwrap();
        cache.store(&g, &grid, "k1", 1e-9, &feats[0]).unwrap();
        let hit = cache.load(&g, &grid, "k1", 1e-9).unwrap();
        assert_eq!(hit.matrix, feats[0].matrix);

        // different tolerance or grid is a miss
        assert!(cache.load(&g, &grid, "k1", 1e-6).is_none());
        let other = AlphaGrid::new(vec![0.9]).unwrap();
        assert!(cache.load(&g, &other, "k1", 1e-9).is_none());

        // cached path returns identical values
        let via_cache =
            augment_features_cached(&g, &set, &grid, 1e-9, 1000, Some(&cache)).unwrap();
        assert_eq!(via_cache[0].matrix, feats[0].matrix);
    }
}
