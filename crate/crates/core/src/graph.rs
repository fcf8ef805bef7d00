//! Graph storage, link splits and triplet sampling.
//!
//! A [`Graph`] is what the model sees: node count, edges, a symmetric
//! adjacency and optional dense features. Ground-truth node types never live
//! on it; they are carried next to it in [`LoadedGraph`] and only read by the
//! node-type probe.

use std::collections::{HashMap, VecDeque};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::rng;

pub type NodeId = usize;
pub type Edge = (NodeId, NodeId);

/// Immutable node/edge store.
#[derive(Debug, Clone)]
pub struct Graph {
    node_count: usize,
    edges: Vec<Edge>,
    adjacency: Vec<Vec<NodeId>>,
    features: Option<Tensor>,
}

impl Graph {
    /// Builds a graph from ordered pairs. Exact duplicate pairs and
    /// self-loops are dropped; adjacency is symmetrized.
    pub fn new(node_count: usize, edges: &[Edge], features: Option<Tensor>) -> Result<Self> {
        if let Some(f) = &features {
            if f.rows() != node_count {
                return Err(Error::Data(format!(
                    "feature matrix has {} rows for {node_count} nodes",
                    f.rows()
                )));
            }
        }
        let mut seen = std::collections::HashSet::with_capacity(edges.len());
        let mut kept = Vec::with_capacity(edges.len());
        let mut adjacency = vec![Vec::new(); node_count];
        for &(u, v) in edges {
            if u >= node_count || v >= node_count {
                return Err(Error::Data(format!(
                    "edge ({u}, {v}) out of range for {node_count} nodes"
                )));
            }
            if u == v || !seen.insert((u, v)) {
                continue;
            }
            kept.push((u, v));
            adjacency[u].push(v);
            adjacency[v].push(u);
        }
        for nbrs in &mut adjacency {
            nbrs.sort_unstable();
            nbrs.dedup();
        }
        Ok(Graph {
            node_count,
            edges: kept,
            adjacency,
            features,
        })
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Sorted, deduplicated neighbors in either direction.
    pub fn neighbors(&self, v: NodeId) -> &[NodeId] {
        &self.adjacency[v]
    }

    pub fn degree(&self, v: NodeId) -> usize {
        self.adjacency[v].len()
    }

    /// Whether `u` and `v` are linked in either direction.
    pub fn has_link(&self, u: NodeId, v: NodeId) -> bool {
        self.adjacency[u].binary_search(&v).is_ok()
    }

    /// SHA-256 over node count and edge list, for cache and checkpoint keys.
    pub fn digest(&self) -> [u8; 32] {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update((self.node_count as u64).to_le_bytes());
        for &(u, v) in &self.edges {
            h.update((u as u64).to_le_bytes());
            h.update((v as u64).to_le_bytes());
        }
        h.finalize().into()
    }

    pub fn features(&self) -> Option<&Tensor> {
        self.features.as_ref()
    }

    pub fn feature_dim(&self) -> Option<usize> {
        self.features.as_ref().map(Tensor::cols)
    }

    /// Same nodes and features, different edges.
    pub fn with_edges(&self, edges: &[Edge]) -> Result<Graph> {
        Graph::new(self.node_count, edges, self.features.clone())
    }

    /// Breadth-first order from `start`, restarting from the lowest unvisited
    /// node when a component is exhausted, truncated at `limit` nodes.
    pub fn bfs_order(&self, start: NodeId, limit: usize) -> Vec<NodeId> {
        let limit = limit.min(self.node_count);
        let mut visited = vec![false; self.node_count];
        let mut order = Vec::with_capacity(limit);
        let mut queue = VecDeque::new();
        let mut next_root = 0;
        let mut root = Some(start);
        while order.len() < limit {
            let r = match root.take() {
                Some(r) => r,
                None => {
                    while next_root < self.node_count && visited[next_root] {
                        next_root += 1;
                    }
                    if next_root == self.node_count {
                        break;
                    }
                    next_root
                }
            };
            if visited[r] {
                continue;
            }
            visited[r] = true;
            queue.push_back(r);
            while let Some(v) = queue.pop_front() {
                order.push(v);
                if order.len() == limit {
                    break;
                }
                for &u in &self.adjacency[v] {
                    if !visited[u] {
                        visited[u] = true;
                        queue.push_back(u);
                    }
                }
            }
            queue.clear();
        }
        order
    }

    /// Subgraph induced by `nodes`; node `nodes[i]` becomes node `i`.
    pub fn induced(&self, nodes: &[NodeId]) -> Result<Graph> {
        let mut local = vec![usize::MAX; self.node_count];
        for (i, &v) in nodes.iter().enumerate() {
            local[v] = i;
        }
        let edges: Vec<Edge> = self
            .edges
            .iter()
            .filter(|&&(u, v)| local[u] != usize::MAX && local[v] != usize::MAX)
            .map(|&(u, v)| (local[u], local[v]))
            .collect();
        let features = self.features.as_ref().map(|f| f.gather_rows(nodes));
        Graph::new(nodes.len(), &edges, features)
    }
}

/// Dense-id ↔ raw-id mapping.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IdMap {
    raw: Vec<String>,
    dense: HashMap<String, NodeId>,
}

impl IdMap {
    /// Numeric ids sort numerically, anything else lexicographically.
    fn from_raw(mut ids: Vec<String>) -> Self {
        ids.sort_unstable();
        ids.dedup();
        if ids.iter().all(|s| s.parse::<u64>().is_ok()) {
            ids.sort_unstable_by_key(|s| s.parse::<u64>().unwrap());
        }
        let dense = ids.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        IdMap { raw: ids, dense }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_raw((0..n).map(|i| i.to_string()).collect())
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    pub fn dense(&self, raw: &str) -> Option<NodeId> {
        self.dense.get(raw).copied()
    }

    pub fn raw(&self, dense: NodeId) -> &str {
        &self.raw[dense]
    }

    /// Whether raw id `i` maps to dense id `i` for every node.
    pub fn is_identity(&self) -> bool {
        self.raw.iter().enumerate().all(|(i, s)| s == &i.to_string())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for (i, s) in self.raw.iter().enumerate() {
            writeln!(w, "{s}\t{i}")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let mut raw = Vec::new();
        for (no, line) in reader.lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let (r, d) = line.split_once('\t').ok_or_else(|| parse_err(path, no, "expected raw<TAB>dense"))?;
            let d: usize = d.parse().map_err(|_| parse_err(path, no, "dense id is not an integer"))?;
            if d != raw.len() {
                return Err(parse_err(path, no, "dense ids must be consecutive"));
            }
            raw.push(r.to_string());
        }
        let dense = raw.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        Ok(IdMap { raw, dense })
    }
}

/// Ground-truth node types, held apart from the model-facing [`Graph`].
#[derive(Debug, Clone, PartialEq)]
pub struct TypeLabels {
    /// Per dense node, index into `names`.
    pub label: Vec<Option<usize>>,
    pub names: Vec<String>,
}

impl TypeLabels {
    pub fn num_classes(&self) -> usize {
        self.names.len()
    }

    pub fn labeled(&self) -> impl Iterator<Item = (NodeId, usize)> + '_ {
        self.label
            .iter()
            .enumerate()
            .filter_map(|(v, l)| l.map(|l| (v, l)))
    }

    pub fn subset(&self, nodes: &[NodeId]) -> TypeLabels {
        TypeLabels {
            label: nodes.iter().map(|&v| self.label[v]).collect(),
            names: self.names.clone(),
        }
    }
}

/// A graph together with its id map and out-of-band labels.
#[derive(Debug, Clone)]
pub struct LoadedGraph {
    pub graph: Graph,
    pub id_map: IdMap,
    pub labels: Option<TypeLabels>,
}

impl LoadedGraph {
    /// Induced subgraph on the first `limit` nodes of a BFS from `start`.
    pub fn bfs_subgraph(&self, start: NodeId, limit: usize) -> Result<LoadedGraph> {
        let nodes = self.graph.bfs_order(start, limit);
        let graph = self.graph.induced(&nodes)?;
        let raw: Vec<String> = nodes.iter().map(|&v| self.id_map.raw(v).to_string()).collect();
        let dense = raw.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        Ok(LoadedGraph {
            graph,
            id_map: IdMap { raw, dense },
            labels: self.labels.as_ref().map(|l| l.subset(&nodes)),
        })
    }
}

fn parse_err(path: &Path, line_index: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line: line_index + 1,
        message: message.into(),
    }
}

const FEATURE_MAGIC: &[u8; 4] = b"LHGF";

/// Raw feature rows, keyed either by position or by explicit raw id.
enum RawFeatures {
    Positional(Tensor),
    Keyed(Vec<(String, Vec<f64>)>, usize),
}

fn read_features(path: &Path) -> Result<RawFeatures> {
    let mut file = File::open(path)?;
    let mut magic = [0u8; 4];
    let n = file.read(&mut magic)?;
    if n == 4 && &magic == FEATURE_MAGIC {
        let version = file.read_u32::<LittleEndian>()?;
        if version != 1 {
            return Err(Error::Data(format!("unsupported feature file version {version}")));
        }
        let rows = file.read_u64::<LittleEndian>()? as usize;
        let cols = file.read_u64::<LittleEndian>()? as usize;
        let mut data = vec![0.0; rows * cols];
        file.read_f64_into::<LittleEndian>(&mut data)?;
        return Ok(RawFeatures::Positional(Tensor::from_vec(rows, cols, data)?));
    }
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines().enumerate();
    let (rows, cols) = loop {
        let Some((no, line)) = lines.next() else {
            return Err(parse_err(path, 0, "missing `rows cols` header"));
        };
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let dims: Vec<usize> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| parse_err(path, no, "header must be `rows cols`"))?;
        match dims[..] {
            [r, c] => break (r, c),
            _ => return Err(parse_err(path, no, "header must be `rows cols`")),
        }
    };
    let mut positional = Vec::with_capacity(rows * cols);
    let mut keyed = Vec::new();
    for (no, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let (key, values) = if fields.len() == cols + 1 {
            (Some(fields[0]), &fields[1..])
        } else if fields.len() == cols {
            (None, &fields[..])
        } else {
            return Err(parse_err(
                path,
                no,
                format!("expected {cols} values, found {}", fields.len()),
            ));
        };
        let parsed: Vec<f64> = values
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| parse_err(path, no, "feature value is not a number"))?;
        match key {
            Some(k) => keyed.push((k.to_string(), parsed)),
            None if keyed.is_empty() => positional.extend(parsed),
            None => return Err(parse_err(path, no, "mixed keyed and positional rows")),
        }
    }
    if !keyed.is_empty() {
        if keyed.len() != rows {
            return Err(Error::Data(format!(
                "{}: header declares {rows} rows, found {}",
                path.display(),
                keyed.len()
            )));
        }
        return Ok(RawFeatures::Keyed(keyed, cols));
    }
    if positional.len() != rows * cols {
        return Err(Error::Data(format!(
            "{}: header declares {rows} rows, found {}",
            path.display(),
            positional.len() / cols.max(1)
        )));
    }
    Ok(RawFeatures::Positional(Tensor::from_vec(rows, cols, positional)?))
}

/// Writes features in the binary format accepted by [`load_edge_list`].
pub fn write_features_binary(path: &Path, features: &Tensor) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(FEATURE_MAGIC)?;
    w.write_u32::<LittleEndian>(1)?;
    w.write_u64::<LittleEndian>(features.rows() as u64)?;
    w.write_u64::<LittleEndian>(features.cols() as u64)?;
    for &x in features.data() {
        w.write_f64::<LittleEndian>(x)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes positional text features (`rows cols` header, one row per line).
pub fn write_features_text(path: &Path, features: &Tensor) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{} {}", features.rows(), features.cols())?;
    for r in 0..features.rows() {
        let row: Vec<String> = features.row_slice(r).iter().map(|x| format!("{x}")).collect();
        writeln!(w, "{}", row.join(" "))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_edge_list(path: &Path, edges: &[Edge], ids: &IdMap) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for &(u, v) in edges {
        writeln!(w, "{}\t{}", ids.raw(u), ids.raw(v))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_labels(path: &Path, labels: &TypeLabels, ids: &IdMap) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for (v, l) in labels.labeled() {
        writeln!(w, "{}\t{}", ids.raw(v), labels.names[l])?;
    }
    w.flush()?;
    Ok(())
}

fn read_pairs(path: &Path, what: &str) -> Result<Vec<(String, String)>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (no, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim_end_matches(['\r', '\n']);
        if trimmed.trim().is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut fields = trimmed.split('\t');
        let (Some(a), Some(b)) = (fields.next(), fields.next()) else {
            return Err(parse_err(path, no, format!("expected {what}")));
        };
        let (a, b) = (a.trim(), b.trim());
        if a.is_empty() || b.is_empty() {
            return Err(parse_err(path, no, format!("empty field, expected {what}")));
        }
        out.push((a.to_string(), b.to_string()));
    }
    Ok(out)
}

/// Reads `head<TAB>tail` lines whose ids must all be in `ids`.
pub fn read_edge_file(path: &Path, ids: &IdMap) -> Result<Vec<Edge>> {
    let pairs = read_pairs(path, "head<TAB>tail")?;
    pairs
        .iter()
        .enumerate()
        .map(|(no, (a, b))| match (ids.dense(a), ids.dense(b)) {
            (Some(u), Some(v)) => Ok((u, v)),
            _ => Err(parse_err(path, no, format!("unknown node in `{a}\t{b}`"))),
        })
        .collect()
}

/// Reads features for the nodes of `ids`. Positional rows are taken in
/// dense order and must number exactly `ids.len()`.
pub fn read_feature_file(path: &Path, ids: &IdMap) -> Result<Tensor> {
    match read_features(path)? {
        RawFeatures::Positional(t) => {
            if t.rows() != ids.len() {
                return Err(Error::Data(format!(
                    "{}: {} feature rows for {} nodes",
                    path.display(),
                    t.rows(),
                    ids.len()
                )));
            }
            Ok(t)
        }
        RawFeatures::Keyed(rows, cols) => {
            let mut t = Tensor::zeros(ids.len(), cols);
            let mut covered = vec![false; ids.len()];
            for (k, vals) in rows {
                if let Some(v) = ids.dense(&k) {
                    t.row_slice_mut(v).copy_from_slice(&vals);
                    covered[v] = true;
                }
            }
            if let Some(v) = covered.iter().position(|c| !c) {
                return Err(Error::Data(format!("features do not cover node {}", ids.raw(v))));
            }
            Ok(t)
        }
    }
}

/// Reads `node_id<TAB>type_label` lines. Class indices follow first
/// appearance in the file.
pub fn read_label_file(path: &Path, ids: &IdMap) -> Result<TypeLabels> {
    let mut names: Vec<String> = Vec::new();
    let mut label = vec![None; ids.len()];
    for (no, (node, name)) in read_pairs(path, "node_id<TAB>type_label")?.into_iter().enumerate() {
        let v = ids
            .dense(&node)
            .ok_or_else(|| parse_err(path, no, format!("unknown node id `{node}`")))?;
        let idx = match names.iter().position(|s| *s == name) {
            Some(i) => i,
            None => {
                names.push(name);
                names.len() - 1
            }
        };
        label[v] = Some(idx);
    }
    Ok(TypeLabels { label, names })
}

/// Loads a `head<TAB>tail` edge list with optional features and labels.
///
/// Node ids may be arbitrary strings; they are remapped to a dense range
/// (see [`IdMap`]). Positional feature rows are keyed by numeric raw id, and
/// rows without edges become isolated nodes.
pub fn load_edge_list(
    path: &Path,
    feature_path: Option<&Path>,
    label_path: Option<&Path>,
) -> Result<LoadedGraph> {
    let pairs = read_pairs(path, "head<TAB>tail")?;
    let features = feature_path.map(read_features).transpose()?;

    let mut raw: Vec<String> = pairs
        .iter()
        .flat_map(|(a, b)| [a.clone(), b.clone()])
        .collect();
    match &features {
        Some(RawFeatures::Positional(t)) => raw.extend((0..t.rows()).map(|i| i.to_string())),
        Some(RawFeatures::Keyed(rows, _)) => raw.extend(rows.iter().map(|(k, _)| k.clone())),
        None => {}
    }
    let id_map = IdMap::from_raw(raw);
    let n = id_map.len();

    let features = match features {
        None => None,
        Some(RawFeatures::Positional(t)) => {
            if !id_map.is_identity() {
                return Err(Error::Data(format!(
                    "{}: positional feature rows need numeric node ids 0..{}; use keyed rows",
                    path.display(),
                    t.rows()
                )));
            }
            Some(t)
        }
        Some(RawFeatures::Keyed(rows, cols)) => {
            let mut t = Tensor::zeros(n, cols);
            let mut covered = vec![false; n];
            for (k, vals) in rows {
                let v = id_map.dense(&k).expect("feature ids are in the map");
                t.row_slice_mut(v).copy_from_slice(&vals);
                covered[v] = true;
            }
            if let Some(v) = covered.iter().position(|c| !c) {
                return Err(Error::Data(format!(
                    "features do not cover node {}",
                    id_map.raw(v)
                )));
            }
            Some(t)
        }
    };

    let edges: Vec<Edge> = pairs
        .iter()
        .map(|(a, b)| (id_map.dense(a).unwrap(), id_map.dense(b).unwrap()))
        .collect();
    let graph = Graph::new(n, &edges, features)?;

    let labels = label_path.map(|lp| read_label_file(lp, &id_map)).transpose()?;

    Ok(LoadedGraph {
        graph,
        id_map,
        labels,
    })
}

/// `(train, val, test)` fractions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl SplitRatios {
    pub const DEFAULT: SplitRatios = SplitRatios {
        train: 0.8,
        val: 0.1,
        test: 0.1,
    };

    pub fn new(train: f64, val: f64, test: f64) -> Result<Self> {
        let r = SplitRatios { train, val, test };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::Config(format!("split ratios {parts:?} must be nonnegative")));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split ratios {parts:?} sum to {sum}, expected 1"
            )));
        }
        Ok(())
    }
}

/// Train/validation/test partition of the edges.
#[derive(Debug, Clone)]
pub struct LinkSplit {
    pub train_edges: Vec<Edge>,
    pub val_edges: Vec<Edge>,
    pub test_edges: Vec<Edge>,
    /// Rebuilt from the training edges only.
    pub train_graph: Graph,
    /// All edges; used to reject false negatives.
    pub full_graph: Graph,
}

/// Random link split.
///
/// The two directions of a reciprocal pair `(u, v)`, `(v, u)` always land in
/// the same part, so the training graph never contains a held-out link.
/// Group counts are `round(G · train)`, `round(G · val)` and the remainder.
pub fn split_links(g: &Graph, ratios: SplitRatios, seed: u64) -> Result<LinkSplit> {
    ratios.validate()?;
    let mut group_of: HashMap<Edge, usize> = HashMap::new();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (i, &(u, v)) in g.edges().iter().enumerate() {
        let key = (u.min(v), u.max(v));
        let gi = *group_of.entry(key).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[gi].push(i);
    }
    let total = groups.len();
    let mut order: Vec<usize> = (0..total).collect();
    order.shuffle(&mut rng::stream(seed, "split", 0));
    let n_train = ((total as f64 * ratios.train).round() as usize).min(total);
    let n_val = ((total as f64 * ratios.val).round() as usize).min(total - n_train);

    let mut part = vec![2u8; g.edge_count()];
    for (rank, &gi) in order.iter().enumerate() {
        let p = if rank < n_train {
            0
        } else if rank < n_train + n_val {
            1
        } else {
            2
        };
        for &e in &groups[gi] {
            part[e] = p;
        }
    }
    let pick = |p: u8| -> Vec<Edge> {
        g.edges()
            .iter()
            .zip(&part)
            .filter(|(_, &q)| q == p)
            .map(|(&e, _)| e)
            .collect()
    };
    let train_edges = pick(0);
    let val_edges = pick(1);
    let test_edges = pick(2);
    let train_graph = g.with_edges(&train_edges)?;
    Ok(LinkSplit {
        train_edges,
        val_edges,
        test_edges,
        train_graph,
        full_graph: g.clone(),
    })
}

/// `(anchor, positive, negative)` training unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Triplet {
    pub a: NodeId,
    pub b: NodeId,
    pub c: NodeId,
}

/// Rejections before falling back to any node other than the anchor.
pub const MAX_NEGATIVE_REJECTIONS: usize = 100;

/// Draws a negative for `a`: uniform over all nodes, redrawn while it is `a`
/// or linked to `a` in `full`.
pub fn sample_negative<R: Rng + ?Sized>(full: &Graph, a: NodeId, rng: &mut R) -> Option<NodeId> {
    let n = full.node_count();
    if n < 2 {
        return None;
    }
    for _ in 0..MAX_NEGATIVE_REJECTIONS {
        let c = rng.random_range(0..n);
        if c != a && !full.has_link(a, c) {
            return Some(c);
        }
    }
    log::warn!(
        "no valid negative for node {a} after {MAX_NEGATIVE_REJECTIONS} draws; accepting a linked node"
    );
    loop {
        let c = rng.random_range(0..n);
        if c != a {
            return Some(c);
        }
    }
}

pub fn sample_triplets<R: Rng + ?Sized>(
    split: &LinkSplit,
    batch_size: usize,
    rng: &mut R,
) -> Result<Vec<Triplet>> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    if split.train_edges.is_empty() {
        return Err(Error::Data("no training edges to sample from".into()));
    }
    let mut out = Vec::with_capacity(batch_size);
    for _ in 0..batch_size {
        let (a, b) = split.train_edges[rng.random_range(0..split.train_edges.len())];
        let c = sample_negative(&split.full_graph, a, rng)
            .ok_or_else(|| Error::Data("graph has fewer than two nodes".into()))?;
        out.push(Triplet { a, b, c });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;
    use std::io::Write;

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        std::fs::File::create(&p).unwrap().write_all(body.as_bytes()).unwrap();
        p
    }

    #[test]
    fn empty_file_gives_empty_graph() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "e.tsv", "");
        let g = load_edge_list(&p, None, None).unwrap();
        assert_eq!((g.graph.node_count(), g.graph.edge_count()), (0, 0));
    }

    #[test]
    fn duplicate_edge_is_collapsed() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "e.tsv", "0\t1\n1\t2\n0\t1\n");
        let g = load_edge_list(&p, None, None).unwrap();
        assert_eq!(g.graph.node_count(), 3);
        assert_eq!(g.graph.edge_count(), 2);
        assert_eq!(g.graph.neighbors(1), &[0, 2]);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "e.tsv", "0\t1\n1 2\n");
        match load_edge_list(&p, None, None) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn id_gaps_and_string_ids_are_remapped() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "e.tsv", "0\t10\n10\t5\tauthored\n");
        let g = load_edge_list(&p, None, None).unwrap();
        assert_eq!(g.graph.node_count(), 3);
        assert_eq!(g.id_map.dense("10"), Some(2));
        assert_eq!(g.id_map.dense("5"), Some(1));
        let p = write(&dir, "s.tsv", "alice\tbob\nbob\tcarol\n");
        let g = load_edge_list(&p, None, None).unwrap();
        assert_eq!(g.id_map.raw(0), "alice");
        let out = dir.path().join("ids.tsv");
        g.id_map.write(&out).unwrap();
        assert_eq!(IdMap::read(&out).unwrap(), g.id_map);
    }

    #[test]
    fn self_loops_are_dropped() {
        let g = Graph::new(2, &[(0, 0), (0, 1)], None).unwrap();
        assert_eq!(g.edges(), &[(0, 1)]);
        assert!(g.neighbors(0) == [1]);
    }

    #[test]
    fn features_and_labels_attach() {
        let dir = tempfile::tempdir().unwrap();
        let e = write(&dir, "e.tsv", "0\t1\n");
        let f = write(&dir, "f.txt", "3 2\n1 0\n0 1\n0.5 0.5\n");
        let l = write(&dir, "l.tsv", "0\tpaper\n1\tauthor\n2\tpaper\n");
        let g = load_edge_list(&e, Some(&f), Some(&l)).unwrap();
        assert_eq!(g.graph.node_count(), 3, "feature rows add isolated nodes");
        assert_eq!(g.graph.features().unwrap().row_slice(2), &[0.5, 0.5]);
        let labels = g.labels.unwrap();
        assert_eq!(labels.names, vec!["paper", "author"]);
        assert_eq!(labels.label, vec![Some(0), Some(1), Some(0)]);

        let bin = dir.path().join("f.bin");
        write_features_binary(&bin, g.graph.features().unwrap()).unwrap();
        let g2 = load_edge_list(&e, Some(&bin), None).unwrap();
        assert_eq!(g2.graph.features(), g.graph.features());
    }

    #[test]
    fn features_must_cover_every_node() {
        let dir = tempfile::tempdir().unwrap();
        let e = write(&dir, "e.tsv", "a\tb\n");
        let f = write(&dir, "f.txt", "1 2\na 1 0\n");
        assert!(matches!(load_edge_list(&e, Some(&f), None), Err(Error::Data(_))));
    }

    fn ring(n: usize) -> Graph {
        let edges: Vec<Edge> = (0..n).map(|i| (i, (i + 1) % n)).collect();
        Graph::new(n, &edges, None).unwrap()
    }

    #[test]
    fn split_is_a_deterministic_partition() {
        let g = ring(10);
        let a = split_links(&g, SplitRatios::DEFAULT, 3).unwrap();
        let b = split_links(&g, SplitRatios::DEFAULT, 3).unwrap();
        assert_eq!(a.train_edges, b.train_edges);
        assert_eq!(a.test_edges, b.test_edges);
        assert_eq!((a.train_edges.len(), a.val_edges.len(), a.test_edges.len()), (8, 1, 1));
        let all: HashSet<Edge> = a
            .train_edges
            .iter()
            .chain(&a.val_edges)
            .chain(&a.test_edges)
            .copied()
            .collect();
        assert_eq!(all.len(), 10);
        for &(u, v) in a.val_edges.iter().chain(&a.test_edges) {
            assert!(!a.train_graph.has_link(u, v));
        }
    }

    #[test]
    fn reciprocal_pairs_split_together() {
        let mut edges = Vec::new();
        for i in 0..20 {
            edges.push((i, (i + 1) % 20));
            edges.push(((i + 1) % 20, i));
        }
        let g = Graph::new(20, &edges, None).unwrap();
        let s = split_links(&g, SplitRatios::DEFAULT, 1).unwrap();
        assert_eq!((s.train_edges.len(), s.val_edges.len(), s.test_edges.len()), (32, 4, 4));
        for &(u, v) in &s.test_edges {
            assert!(s.test_edges.contains(&(v, u)));
            assert!(!s.train_graph.has_link(u, v));
        }
    }

    #[test]
    fn all_train_ratio_keeps_graph() {
        let g = ring(6);
        let s = split_links(&g, SplitRatios::new(1.0, 0.0, 0.0).unwrap(), 0).unwrap();
        assert!(s.val_edges.is_empty() && s.test_edges.is_empty());
        assert_eq!(s.train_graph.edges(), g.edges());
    }

    #[test]
    fn bad_ratios_are_config_errors() {
        assert!(matches!(SplitRatios::new(0.8, 0.1, 0.2), Err(Error::Config(_))));
        assert!(SplitRatios::new(0.7, 0.2, 0.1).is_ok());
    }

    #[test]
    fn complete_graph_falls_back() {
        let g = Graph::new(3, &[(0, 1), (1, 2), (0, 2)], None).unwrap();
        let mut r = rng::stream(0, "t", 0);
        let c = sample_negative(&g, 0, &mut r).unwrap();
        assert_ne!(c, 0);
        assert!(g.has_link(0, c));
    }

    #[test]
    fn star_negatives_come_from_isolated_node() {
        let edges: Vec<Edge> = (1..=5).map(|i| (0, i)).collect();
        let g = Graph::new(7, &edges, None).unwrap();
        let split = split_links(&g, SplitRatios::new(1.0, 0.0, 0.0).unwrap(), 0).unwrap();
        let mut r = rng::stream(0, "t", 1);
        for t in sample_triplets(&split, 500, &mut r).unwrap() {
            if t.a == 0 {
                assert_eq!(t.c, 6);
            }
        }
    }

    #[test]
    fn batch_size_contract() {
        let g = ring(8);
        let split = split_links(&g, SplitRatios::DEFAULT, 0).unwrap();
        let mut r = rng::stream(0, "t", 2);
        assert_eq!(sample_triplets(&split, 256, &mut r).unwrap().len(), 256);
        assert!(sample_triplets(&split, 0, &mut r).is_err());
    }

    #[test]
    fn bfs_subgraph_is_connected_prefix() {
        let g = ring(12);
        let order = g.bfs_order(0, 5);
        assert_eq!(order.len(), 5);
        assert_eq!(order[0], 0);
        let sub = g.induced(&order).unwrap();
        assert_eq!(sub.node_count(), 5);
        assert_eq!(sub.edge_count(), 4);
    }
}
