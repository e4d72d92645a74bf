//! Shared sparse graph, supermodule (gene-set) map, and compound feature set.
//!
//! All samples in this pipeline share one undirected network topology and
//! differ only in their node features. The graph is immutable after
//! construction: deduplicated, symmetrized, self-loop free, and restricted
//! to its largest connected component, with node indices assigned in
//! sorted-id order so builds are reproducible across runs and platforms.

use std::collections::{HashMap, HashSet};

use ndarray::Array2;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Immutable undirected graph in CSR form with column-normalized adjacency.
///
/// The column-normalized matrix `Â[i][j] = A[i][j] / deg(j)` is represented
/// implicitly by the CSR structure plus the degree vector; every column of
/// `Â` sums to 1 because every node has degree >= 1 post-construction.
#[derive(Debug, Clone)]
pub struct SharedGraph {
    node_ids: Vec<String>,
    id_to_index: HashMap<String, usize>,
    /// CSR row pointers into `indices`.
    indptr: Vec<usize>,
    /// CSR neighbor lists, sorted within each row.
    indices: Vec<usize>,
    degrees: Vec<usize>,
    /// Canonical undirected edge list with i < j.
    edges: Vec<(usize, usize)>,
    hash: String,
}

impl SharedGraph {
    pub fn n_nodes(&self) -> usize {
        self.node_ids.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn node_ids(&self) -> &[String] {
        &self.node_ids
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.id_to_index.get(id).copied()
    }

    pub fn degree(&self, node: usize) -> usize {
        self.degrees[node]
    }

    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.indices[self.indptr[node]..self.indptr[node + 1]]
    }

    /// Canonical undirected edges as (i, j) index pairs with i < j.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Canonical edge list as external id pairs; rebuilding from this list
    /// yields an identical graph.
    pub fn edge_id_pairs(&self) -> Vec<(String, String)> {
        self.edges
            .iter()
            .map(|&(i, j)| (self.node_ids[i].clone(), self.node_ids[j].clone()))
            .collect()
    }

    /// Content hash over node ids and the canonical edge list.
    pub fn hash(&self) -> &str {
        &self.hash
    }

    /// Sparse matrix-vector product `y = Â x` with the column-normalized
    /// adjacency. Pure and reentrant.
    pub fn spmv_colnorm(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n_nodes() {
            return Err(Error::shape(format!(
                "spmv expects a vector of length {}, got {}",
                self.n_nodes(),
                x.len()
            )));
        }
        let mut y = vec![0.0; x.len()];
        for i in 0..self.n_nodes() {
            let mut acc = 0.0;
            for &j in self.neighbors(i) {
                acc += x[j] / self.degrees[j] as f64;
            }
            y[i] = acc;
        }
        Ok(y)
    }

    /// Dense materialization of `Â`; intended for small-graph tests and the
    /// dense diffusion oracle.
    pub fn colnorm_dense(&self) -> Array2<f64> {
        let n = self.n_nodes();
        let mut a = Array2::zeros((n, n));
        for i in 0..n {
            for &j in self.neighbors(i) {
                a[(i, j)] = 1.0 / self.degrees[j] as f64;
            }
        }
        a
    }
}

/// Build the shared graph from external-id edge pairs.
///
/// Self-loops are dropped, duplicate and reversed pairs are merged, and only
/// the largest connected component is kept (ties broken by the component
/// containing the lexicographically smallest id). Node indices follow sorted
/// external ids.
pub fn build_graph<S: AsRef<str>>(edge_list: &[(S, S)]) -> Result<SharedGraph> {
    if edge_list.is_empty() {
        return Err(Error::invalid("empty edge list"));
    }
    let mut pairs: HashSet<(&str, &str)> = HashSet::new();
    for (a, b) in edge_list {
        let (a, b) = (a.as_ref(), b.as_ref());
        if a == b {
            continue; // self-loop
        }
        let key = if a < b { (a, b) } else { (b, a) };
        pairs.insert(key);
    }
    if pairs.is_empty() {
        return Err(Error::invalid("no edges remain after self-loop removal"));
    }

    // Provisional indexing over all ids, for component search.
    let mut all_ids: Vec<&str> = pairs.iter().flat_map(|&(a, b)| [a, b]).collect();
    all_ids.sort_unstable();
    all_ids.dedup();
    let tmp_index: HashMap<&str, usize> =
        all_ids.iter().enumerate().map(|(i, &s)| (s, i)).collect();

    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); all_ids.len()];
    for &(a, b) in &pairs {
        let (ia, ib) = (tmp_index[a], tmp_index[b]);
        adj[ia].push(ib);
        adj[ib].push(ia);
    }

    // Largest connected component; ids are sorted, so scanning components in
    // index order makes the smallest-id tie-break automatic with strict `>`.
    let mut comp = vec![usize::MAX; all_ids.len()];
    let mut best_comp = 0usize;
    let mut best_size = 0usize;
    let mut n_comps = 0usize;
    for start in 0..all_ids.len() {
        if comp[start] != usize::MAX {
            continue;
        }
        let c = n_comps;
        n_comps += 1;
        let mut stack = vec![start];
        comp[start] = c;
        let mut size = 0usize;
        while let Some(u) = stack.pop() {
            size += 1;
            for &v in &adj[u] {
                if comp[v] == usize::MAX {
                    comp[v] = c;
                    stack.push(v);
                }
            }
        }
        if size > best_size {
            best_size = size;
            best_comp = c;
        }
    }

    let node_ids: Vec<String> = all_ids
        .iter()
        .enumerate()
        .filter(|&(i, _)| comp[i] == best_comp)
        .map(|(_, &s)| s.to_string())
        .collect();
    let id_to_index: HashMap<String, usize> = node_ids
        .iter()
        .enumerate()
        .map(|(i, s)| (s.clone(), i))
        .collect();

    let mut edges: Vec<(usize, usize)> = pairs
        .iter()
        .filter(|&&(a, _)| comp[tmp_index[a]] == best_comp)
        .map(|&(a, b)| {
            let (i, j) = (id_to_index[a], id_to_index[b]);
            if i < j {
                (i, j)
            } else {
                (j, i)
            }
        })
        .collect();
    edges.sort_unstable();

    let n = node_ids.len();
    let mut degrees = vec![0usize; n];
    for &(i, j) in &edges {
        degrees[i] += 1;
        degrees[j] += 1;
    }
    // Largest-component rule means no isolated nodes can survive.
    assert!(
        degrees.iter().all(|&d| d >= 1),
        "zero-degree node after component restriction"
    );

    let mut neighbor_lists: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &(i, j) in &edges {
        neighbor_lists[i].push(j);
        neighbor_lists[j].push(i);
    }
    let mut indptr = Vec::with_capacity(n + 1);
    let mut indices = Vec::with_capacity(2 * edges.len());
    indptr.push(0);
    for mut row in neighbor_lists {
        row.sort_unstable();
        indices.extend_from_slice(&row);
        indptr.push(indices.len());
    }

    let hash = graph_hash(&node_ids, &edges);
    Ok(SharedGraph {
        node_ids,
        id_to_index,
        indptr,
        indices,
        degrees,
        edges,
        hash,
    })
}

fn graph_hash(node_ids: &[String], edges: &[(usize, usize)]) -> String {
    let mut hasher = Sha256::new();
    for id in node_ids {
        hasher.update(id.as_bytes());
        hasher.update([0u8]);
    }
    for &(i, j) in edges {
        hasher.update(i.to_le_bytes());
        hasher.update(j.to_le_bytes());
    }
    hex_digest(hasher)
}

pub(crate) fn hex_digest(hasher: Sha256) -> String {
    let out = hasher.finalize();
    let mut s = String::with_capacity(out.len() * 2);
    for b in out {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

/// Parse a two-column TSV edge list (`id_a<TAB>id_b`); `#`-prefixed comment
/// lines and blank lines are skipped.
pub fn parse_edge_list(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split('\t');
        match (fields.next(), fields.next(), fields.next()) {
            (Some(a), Some(b), None) if !a.is_empty() && !b.is_empty() => {
                out.push((a.to_string(), b.to_string()));
            }
            _ => {
                return Err(Error::Parse {
                    line: lineno + 1,
                    msg: "expected exactly two tab-separated ids".into(),
                })
            }
        }
    }
    Ok(out)
}

/// Named, possibly overlapping node groups used as pooling units.
#[derive(Debug, Clone)]
pub struct SupermoduleMap {
    module_names: Vec<String>,
    /// Member node indices per module, sorted and deduplicated.
    assignments: Vec<Vec<usize>>,
    /// Nodes that belong to no module.
    unassigned: Vec<usize>,
    hash: String,
}

impl SupermoduleMap {
    pub fn n_modules(&self) -> usize {
        self.module_names.len()
    }

    pub fn module_names(&self) -> &[String] {
        &self.module_names
    }

    pub fn members(&self, module: usize) -> &[usize] {
        &self.assignments[module]
    }

    pub fn assignments(&self) -> &[Vec<usize>] {
        &self.assignments
    }

    pub fn unassigned(&self) -> &[usize] {
        &self.unassigned
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn module_index(&self, name: &str) -> Option<usize> {
        self.module_names.iter().position(|n| n == name)
    }

    /// Construct from already-resolved member indices. Used by the synthetic
    /// generator; file input goes through [`load_supermodules`].
    pub fn from_assignments(
        names: Vec<String>,
        assignments: Vec<Vec<usize>>,
        n_nodes: usize,
    ) -> Result<Self> {
        if names.len() != assignments.len() {
            return Err(Error::shape("module names/assignments length mismatch"));
        }
        let mut seen = HashSet::new();
        for name in &names {
            if !seen.insert(name.clone()) {
                return Err(Error::invalid(format!("duplicate module name {name:?}")));
            }
        }
        if names.len() >= n_nodes {
            return Err(Error::invalid(format!(
                "number of modules ({}) must be smaller than the number of nodes ({})",
                names.len(),
                n_nodes
            )));
        }
        let mut covered = vec![false; n_nodes];
        let mut cleaned = Vec::with_capacity(assignments.len());
        for (name, mut members) in names.iter().zip(assignments) {
            members.sort_unstable();
            members.dedup();
            if members.is_empty() {
                return Err(Error::invalid(format!("module {name:?} is empty")));
            }
            if let Some(&bad) = members.iter().find(|&&m| m >= n_nodes) {
                return Err(Error::invalid(format!(
                    "module {name:?} references node index {bad} >= {n_nodes}"
                )));
            }
            for &m in &members {
                covered[m] = true;
            }
            cleaned.push(members);
        }
        let unassigned: Vec<usize> = (0..n_nodes).filter(|&i| !covered[i]).collect();
        let hash = modules_hash(&names, &cleaned);
        Ok(SupermoduleMap {
            module_names: names,
            assignments: cleaned,
            unassigned,
            hash,
        })
    }
}

fn modules_hash(names: &[String], assignments: &[Vec<usize>]) -> String {
    let mut hasher = Sha256::new();
    for (name, members) in names.iter().zip(assignments) {
        hasher.update(name.as_bytes());
        hasher.update([0u8]);
        for &m in members {
            hasher.update(m.to_le_bytes());
        }
        hasher.update([1u8]);
    }
    hex_digest(hasher)
}

/// Load supermodules from GMT text (`name<TAB>description<TAB>member...`).
///
/// Members absent from the graph are silently dropped; modules that become
/// empty are removed. Malformed lines (fewer than three fields) fail with
/// their line number.
pub fn load_supermodules(gmt_text: &str, graph: &SharedGraph) -> Result<SupermoduleMap> {
    let mut names = Vec::new();
    let mut assignments = Vec::new();
    let mut dropped = 0usize;
    for (lineno, line) in gmt_text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 3 {
            return Err(Error::Parse {
                line: lineno + 1,
                msg: format!(
                    "GMT line needs name, description and at least one member (got {} fields)",
                    fields.len()
                ),
            });
        }
        let name = fields[0];
        let mut members: Vec<usize> = Vec::new();
        for &m in &fields[2..] {
            match graph.node_index(m) {
                Some(i) => members.push(i),
                None => dropped += 1,
            }
        }
        members.sort_unstable();
        members.dedup();
        if members.is_empty() {
            log::warn!("module {name:?} has no members in the graph; removed");
            continue;
        }
        names.push(name.to_string());
        assignments.push(members);
    }
    if dropped > 0 {
        log::warn!("dropped {dropped} supermodule members absent from the graph");
    }
    SupermoduleMap::from_assignments(names, assignments, graph.n_nodes())
}

/// Per-compound sparse binary target vectors with optional binary labels.
#[derive(Debug, Clone)]
pub struct CompoundSet {
    compound_ids: Vec<String>,
    /// Sorted unique node indices targeted by each compound.
    targets: Vec<Vec<usize>>,
    labels: Option<Vec<u8>>,
    n_nodes: usize,
}

impl CompoundSet {
    pub fn n_compounds(&self) -> usize {
        self.compound_ids.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn compound_ids(&self) -> &[String] {
        &self.compound_ids
    }

    pub fn targets(&self, compound: usize) -> &[usize] {
        &self.targets[compound]
    }

    pub fn labels(&self) -> Option<&[u8]> {
        self.labels.as_deref()
    }

    /// Dense binary target vector for one compound.
    pub fn dense_features(&self, compound: usize) -> Vec<f64> {
        let mut x = vec![0.0; self.n_nodes];
        for &t in &self.targets[compound] {
            x[t] = 1.0;
        }
        x
    }

    pub fn from_targets(
        compound_ids: Vec<String>,
        targets: Vec<Vec<usize>>,
        labels: Option<Vec<u8>>,
        n_nodes: usize,
    ) -> Result<Self> {
        if compound_ids.len() != targets.len() {
            return Err(Error::shape("compound ids/targets length mismatch"));
        }
        if let Some(ref l) = labels {
            if l.len() != compound_ids.len() {
                return Err(Error::shape("labels length differs from compound count"));
            }
            if let Some(&bad) = l.iter().find(|&&v| v > 1) {
                return Err(Error::invalid(format!("label {bad} is not binary")));
            }
        }
        let mut cleaned = Vec::with_capacity(targets.len());
        for (id, mut t) in compound_ids.iter().zip(targets) {
            t.sort_unstable();
            t.dedup();
            if let Some(&bad) = t.iter().find(|&&i| i >= n_nodes) {
                return Err(Error::invalid(format!(
                    "compound {id:?} targets node index {bad} >= {n_nodes}"
                )));
            }
            cleaned.push(t);
        }
        Ok(CompoundSet {
            compound_ids,
            targets: cleaned,
            labels,
            n_nodes,
        })
    }

    /// Attach labels from (compound id -> {0,1}) pairs. Every compound must
    /// receive a label, and every label must refer to a known compound.
    pub fn with_labels(mut self, label_pairs: &[(String, u8)]) -> Result<Self> {
        let mut by_id: HashMap<&str, u8> = HashMap::new();
        for (id, v) in label_pairs {
            if *v > 1 {
                return Err(Error::invalid(format!(
                    "label for {id:?} must be 0 or 1, got {v}"
                )));
            }
            if by_id.insert(id.as_str(), *v).is_some() {
                return Err(Error::invalid(format!("duplicate label for {id:?}")));
            }
        }
        let mut labels = Vec::with_capacity(self.compound_ids.len());
        for id in &self.compound_ids {
            match by_id.remove(id.as_str()) {
                Some(v) => labels.push(v),
                None => return Err(Error::invalid(format!("no label for compound {id:?}"))),
            }
        }
        if let Some((id, _)) = by_id.into_iter().next() {
            return Err(Error::invalid(format!(
                "label refers to unknown compound {id:?}"
            )));
        }
        self.labels = Some(labels);
        Ok(self)
    }
}

/// Parse sparse compound features (`compound_id<TAB>node_id`, one target per
/// line). Targets naming nodes outside the graph are dropped with a warning;
/// compound order is sorted by id so builds are deterministic.
pub fn parse_compound_features(text: &str, graph: &SharedGraph) -> Result<CompoundSet> {
    let mut by_compound: HashMap<String, Vec<usize>> = HashMap::new();
    let mut order_seen: Vec<String> = Vec::new();
    let mut dropped = 0usize;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 2 || fields[0].is_empty() || fields[1].is_empty() {
            return Err(Error::Parse {
                line: lineno + 1,
                msg: "expected compound_id<TAB>node_id".into(),
            });
        }
        let entry = match by_compound.get_mut(fields[0]) {
            Some(e) => e,
            None => {
                order_seen.push(fields[0].to_string());
                by_compound.entry(fields[0].to_string()).or_default()
            }
        };
        match graph.node_index(fields[1]) {
            Some(i) => entry.push(i),
            None => dropped += 1,
        }
    }
    if dropped > 0 {
        log::warn!("dropped {dropped} compound targets absent from the graph");
    }
    let mut ids = order_seen;
    ids.sort_unstable();
    let targets: Vec<Vec<usize>> = ids
        .iter()
        .map(|id| by_compound.remove(id).unwrap_or_default())
        .collect();
    CompoundSet::from_targets(ids, targets, None, graph.n_nodes())
}

/// Parse a labels TSV (`compound_id<TAB>{0|1}`).
pub fn parse_labels(text: &str) -> Result<Vec<(String, u8)>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 2 {
            return Err(Error::Parse {
                line: lineno + 1,
                msg: "expected compound_id<TAB>label".into(),
            });
        }
        let v = match fields[1] {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(Error::Parse {
                    line: lineno + 1,
                    msg: format!("label must be 0 or 1, got {other:?}"),
                })
            }
        };
        out.push((fields[0].to_string(), v));
    }
    Ok(out)
}
