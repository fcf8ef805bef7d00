//! Translational baselines and K-means pseudo node types.
//!
//! TransE sees no types. Its pseudo-typed variant clusters nodes into `K`
//! groups and gives every ordered pair of groups its own relation vector, so
//! a link `(x, y)` is translated by `r[type(x) · K + type(y)]`.

mod kmeans;
mod transe;

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

pub use kmeans::{kmeans, KMeansReport};
pub use transe::{transe_train, TransEConfig, TransEEpoch, TransEOutcome, TransEParams};

use crate::error::{Error, Result};
use crate::graph::{IdMap, NodeId};

/// Cluster id per node and the derived edge types.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PseudoTypes {
    k: usize,
    node_type: Vec<usize>,
}

impl PseudoTypes {
    pub fn new(k: usize, node_type: Vec<usize>) -> Result<Self> {
        if k == 0 {
            return Err(Error::Config("K must be at least 1".into()));
        }
        if let Some(&bad) = node_type.iter().find(|&&t| t >= k) {
            return Err(Error::Contract(format!("cluster id {bad} outside [0, {k})")));
        }
        Ok(PseudoTypes { k, node_type })
    }

    /// Every node in one cluster.
    pub fn single(n: usize) -> Self {
        PseudoTypes {
            k: 1,
            node_type: vec![0; n],
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn node_type(&self, v: NodeId) -> usize {
        self.node_type[v]
    }

    pub fn node_types(&self) -> &[usize] {
        &self.node_type
    }

    pub fn num_edge_types(&self) -> usize {
        self.k * self.k
    }

    /// Always defined, also for pairs never seen in training.
    pub fn edge_type(&self, head: NodeId, tail: NodeId) -> usize {
        self.node_type[head] * self.k + self.node_type[tail]
    }

    /// `raw_id<TAB>cluster` per node, in dense order.
    pub fn write(&self, path: &Path, ids: &IdMap) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "# k\t{}", self.k)?;
        for (v, t) in self.node_type.iter().enumerate() {
            writeln!(w, "{}\t{t}", ids.raw(v))?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a file written by [`PseudoTypes::write`]; every node must be
    /// listed. Without a `# k` header, K is one more than the largest id.
    pub fn read(path: &Path, ids: &IdMap) -> Result<Self> {
        let r = BufReader::new(std::fs::File::open(path)?);
        let parse_err = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut k = None;
        let mut node_type = vec![None; ids.len()];
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            let line = line.trim_end();
            if let Some(rest) = line.strip_prefix("# k\t") {
                k = Some(rest.parse::<usize>().map_err(|e| parse_err(i + 1, e.to_string()))?);
                continue;
            }
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (node, cluster) = line
                .split_once('\t')
                .ok_or_else(|| parse_err(i + 1, "expected node<TAB>cluster".into()))?;
            let v = ids
                .dense(node)
                .ok_or_else(|| parse_err(i + 1, format!("unknown node {node}")))?;
            let c = cluster
                .trim()
                .parse::<usize>()
                .map_err(|e| parse_err(i + 1, e.to_string()))?;
            node_type[v] = Some(c);
        }
        let node_type: Vec<usize> = node_type
            .into_iter()
            .enumerate()
            .map(|(v, t)| t.ok_or_else(|| Error::Data(format!("node {} has no cluster", ids.raw(v)))))
            .collect::<Result<_>>()?;
        let k = k.unwrap_or_else(|| node_type.iter().max().map_or(1, |m| m + 1));
        Self::new(k, node_type)
    }
}
