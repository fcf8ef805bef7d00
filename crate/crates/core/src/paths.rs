//! Random-walk context paths.
//!
//! Each target node `v` gets a fixed set of paths: the self-loop `[v]` plus
//! one truncated random walk per sampled walk. The terminal node of a path is
//! its context node; the same context may appear several times.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path as FsPath;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::rng;

/// A node sequence starting at the target. One node means self-loop.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Path {
    nodes: Vec<NodeId>,
}

impl Path {
    pub fn self_loop(v: NodeId) -> Self {
        Path { nodes: vec![v] }
    }

    /// `nodes` must hold at least two entries.
    pub fn from_nodes(nodes: Vec<NodeId>) -> Result<Self> {
        if nodes.len() < 2 {
            return Err(Error::Contract(
                "a non-self-loop path needs at least one hop".into(),
            ));
        }
        Ok(Path { nodes })
    }

    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }

    pub fn target(&self) -> NodeId {
        self.nodes[0]
    }

    pub fn context(&self) -> NodeId {
        *self.nodes.last().unwrap()
    }

    /// Hop count.
    pub fn len(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn is_self_loop(&self) -> bool {
        self.nodes.len() == 1
    }

    /// Equivalent to `is_self_loop`; paths always hold at least one node.
    pub fn is_empty(&self) -> bool {
        self.is_self_loop()
    }
}

/// How a full walk is cut into paths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Truncation {
    /// One prefix per walk, length uniform in `1..=L_max`.
    #[default]
    RandomPrefix,
    /// Every prefix of every walk; `N · L_max` paths per target.
    AllPrefixes,
}

impl Truncation {
    fn code(self) -> u8 {
        match self {
            Truncation::RandomPrefix => 0,
            Truncation::AllPrefixes => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathConfig {
    pub num_paths: usize,
    pub max_len: usize,
    pub truncation: Truncation,
}

impl Default for PathConfig {
    fn default() -> Self {
        PathConfig {
            num_paths: 50,
            max_len: 4,
            truncation: Truncation::RandomPrefix,
        }
    }
}

impl PathConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_len == 0 {
            return Err(Error::Config("maximum path length must be at least 1".into()));
        }
        Ok(())
    }
}

/// `n` uniform random walks of `max_len` hops from `v`. Empty for an
/// isolated node.
pub fn sample_walks<R: Rng + ?Sized>(
    g: &Graph,
    v: NodeId,
    n: usize,
    max_len: usize,
    rng: &mut R,
) -> Result<Vec<Vec<NodeId>>> {
    if max_len == 0 {
        return Err(Error::Config("maximum path length must be at least 1".into()));
    }
    if v >= g.node_count() {
        return Err(Error::Contract(format!(
            "node {v} out of range for {} nodes",
            g.node_count()
        )));
    }
    if g.degree(v) == 0 {
        return Ok(Vec::new());
    }
    let mut walks = Vec::with_capacity(n);
    for _ in 0..n {
        let mut walk = Vec::with_capacity(max_len + 1);
        walk.push(v);
        let mut cur = v;
        for _ in 0..max_len {
            // Every node reached by a step has the reverse edge, so walks
            // never dead-end.
            let nbrs = g.neighbors(cur);
            cur = nbrs[rng.random_range(0..nbrs.len())];
            walk.push(cur);
        }
        walks.push(walk);
    }
    Ok(walks)
}

/// Keeps the first `L` hops of `walk`, `L` uniform in `1..=hops(walk)`.
pub fn truncate<R: Rng + ?Sized>(walk: &[NodeId], rng: &mut R) -> Result<Path> {
    if walk.len() < 2 {
        return Err(Error::Contract("cannot truncate a walk without hops".into()));
    }
    let hops = rng.random_range(1..walk.len());
    Path::from_nodes(walk[..=hops].to_vec())
}

/// Self-loop first, then the sampled paths in walk order.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextSet {
    pub target: NodeId,
    pub paths: Vec<Path>,
}

impl ContextSet {
    /// Decay weight per path, aligned with `paths`.
    pub fn weights(&self, lambda: f64) -> Result<Vec<f64>> {
        self.paths.iter().map(|p| decay_weight(p, lambda)).collect()
    }

    /// Non-self-loop paths.
    pub fn sampled(&self) -> &[Path] {
        &self.paths[1..]
    }
}

pub fn build_context_set<R: Rng + ?Sized>(
    g: &Graph,
    v: NodeId,
    cfg: &PathConfig,
    rng: &mut R,
) -> Result<ContextSet> {
    cfg.validate()?;
    let walks = sample_walks(g, v, cfg.num_paths, cfg.max_len, rng)?;
    let mut paths = Vec::with_capacity(1 + walks.len());
    paths.push(Path::self_loop(v));
    for walk in &walks {
        match cfg.truncation {
            Truncation::RandomPrefix => paths.push(truncate(walk, rng)?),
            Truncation::AllPrefixes => {
                for hops in 1..walk.len() {
                    paths.push(Path::from_nodes(walk[..=hops].to_vec())?);
                }
            }
        }
    }
    Ok(ContextSet { target: v, paths })
}

/// `e^{-λ L}`; 1 for the self-loop.
pub fn decay_weight(p: &Path, lambda: f64) -> Result<f64> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::Config(format!("decay rate {lambda} must be positive")));
    }
    Ok((-lambda * p.len() as f64).exp())
}

/// Context sets for every node of a graph.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSets {
    pub config: PathConfig,
    pub seed: u64,
    pub graph_digest: [u8; 32],
    pub sets: Vec<ContextSet>,
}

impl PathSets {
    /// Samples every node from its own stream `(seed, "paths/<round>", v)`,
    /// so the result does not depend on worker count. `round` distinguishes
    /// per-epoch resamples.
    pub fn sample(g: &Graph, cfg: PathConfig, seed: u64, round: u64, parallel: bool) -> Result<Self> {
        cfg.validate()?;
        let subsystem = format!("paths/{round}");
        let one = |v: NodeId| {
            let mut r = rng::stream(seed, &subsystem, v as u64);
            build_context_set(g, v, &cfg, &mut r)
        };
        let sets: Result<Vec<ContextSet>> = if parallel {
            (0..g.node_count()).into_par_iter().map(one).collect()
        } else {
            (0..g.node_count()).map(one).collect()
        };
        Ok(PathSets {
            config: cfg,
            seed,
            graph_digest: g.digest(),
            sets: sets?,
        })
    }

    pub fn get(&self, v: NodeId) -> &ContextSet {
        &self.sets[v]
    }

    pub fn total_paths(&self) -> usize {
        self.sets.iter().map(|s| s.paths.len()).sum()
    }

    pub fn save(&self, path: &FsPath) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(CACHE_MAGIC)?;
        w.write_u32::<LittleEndian>(CACHE_VERSION)?;
        w.write_u64::<LittleEndian>(self.seed)?;
        w.write_u64::<LittleEndian>(self.config.num_paths as u64)?;
        w.write_u64::<LittleEndian>(self.config.max_len as u64)?;
        w.write_u8(self.config.truncation.code())?;
        w.write_all(&self.graph_digest)?;
        w.write_u64::<LittleEndian>(self.sets.len() as u64)?;
        for set in &self.sets {
            w.write_u32::<LittleEndian>(set.paths.len() as u32)?;
            for p in &set.paths {
                w.write_u32::<LittleEndian>(p.nodes.len() as u32)?;
                for &v in &p.nodes {
                    w.write_u32::<LittleEndian>(v as u32)?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Loads a cache written for exactly this graph, config and seed;
    /// `Ok(None)` when the key differs.
    pub fn load(path: &FsPath, g: &Graph, cfg: PathConfig, seed: u64) -> Result<Option<Self>> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != CACHE_MAGIC || r.read_u32::<LittleEndian>()? != CACHE_VERSION {
            return Err(Error::Data(format!("{} is not a path cache", path.display())));
        }
        let file_seed = r.read_u64::<LittleEndian>()?;
        let n = r.read_u64::<LittleEndian>()? as usize;
        let l = r.read_u64::<LittleEndian>()? as usize;
        let mode = r.read_u8()?;
        let mut digest = [0u8; 32];
        r.read_exact(&mut digest)?;
        if file_seed != seed
            || n != cfg.num_paths
            || l != cfg.max_len
            || mode != cfg.truncation.code()
            || digest != g.digest()
        {
            return Ok(None);
        }
        let count = r.read_u64::<LittleEndian>()? as usize;
        let mut sets = Vec::with_capacity(count);
        for target in 0..count {
            let k = r.read_u32::<LittleEndian>()? as usize;
            let mut paths = Vec::with_capacity(k);
            for _ in 0..k {
                let len = r.read_u32::<LittleEndian>()? as usize;
                let mut nodes = vec![0u32; len];
                r.read_u32_into::<LittleEndian>(&mut nodes)?;
                paths.push(Path {
                    nodes: nodes.into_iter().map(|v| v as NodeId).collect(),
                });
            }
            sets.push(ContextSet { target, paths });
        }
        Ok(Some(PathSets {
            config: cfg,
            seed,
            graph_digest: digest,
            sets,
        }))
    }
}

const CACHE_MAGIC: &[u8; 4] = b"LHGP";
const CACHE_VERSION: u32 = 1;

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn line3() -> Graph {
        Graph::new(3, &[(0, 1), (1, 2)], None).unwrap()
    }

    fn cfg(n: usize, l: usize) -> PathConfig {
        PathConfig {
            num_paths: n,
            max_len: l,
            truncation: Truncation::RandomPrefix,
        }
    }

    #[test]
    fn one_hop_walks_on_a_path_graph() {
        let mut r = rng::stream(0, "t", 0);
        let walks = sample_walks(&line3(), 1, 20, 1, &mut r).unwrap();
        assert_eq!(walks.len(), 20);
        for w in walks {
            assert!(w == [1, 0] || w == [1, 2], "{w:?}");
        }
    }

    #[test]
    fn isolated_node_has_only_the_self_loop() {
        let g = Graph::new(2, &[], None).unwrap();
        let mut r = rng::stream(0, "t", 0);
        assert!(sample_walks(&g, 0, 5, 3, &mut r).unwrap().is_empty());
        let cs = build_context_set(&g, 0, &cfg(5, 3), &mut r).unwrap();
        assert_eq!(cs.paths, vec![Path::self_loop(0)]);
    }

    #[test]
    fn truncation_keeps_a_prefix() {
        let mut r = rng::stream(0, "t", 0);
        let p = truncate(&[1, 0], &mut r).unwrap();
        assert_eq!(p.nodes(), &[1, 0]);
        for _ in 0..50 {
            let p = truncate(&[1, 0, 2], &mut r).unwrap();
            assert!(p.nodes() == [1, 0] || p.nodes() == [1, 0, 2]);
            if p.len() == 1 {
                assert_eq!(p.context(), 0);
            }
        }
        assert!(truncate(&[1], &mut r).is_err());
    }

    #[test]
    fn truncated_lengths_are_uniform() {
        // χ² with 3 degrees of freedom; 11.345 is the 1% critical value.
        let mut r = rng::stream(5, "chi", 0);
        let walk = [0, 1, 0, 1, 0];
        let mut counts = [0usize; 4];
        let n = 10_000;
        for _ in 0..n {
            counts[truncate(&walk, &mut r).unwrap().len() - 1] += 1;
        }
        let expected = n as f64 / 4.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        assert!(chi2 < 11.345, "chi2 = {chi2}, counts = {counts:?}");
    }

    #[test]
    fn single_neighbor_is_forced() {
        let g = Graph::new(2, &[(0, 1)], None).unwrap();
        let mut r = rng::stream(0, "t", 0);
        let cs = build_context_set(&g, 0, &cfg(3, 1), &mut r).unwrap();
        let p01 = Path::from_nodes(vec![0, 1]).unwrap();
        assert_eq!(cs.paths, vec![Path::self_loop(0), p01.clone(), p01.clone(), p01]);
    }

    #[test]
    fn duplicate_contexts_keep_multiplicity() {
        // Target 1 with neighbors 4, 7, 8; many one-hop paths must repeat
        // contexts rather than dedupe them.
        let g = Graph::new(9, &[(1, 4), (1, 7), (1, 8)], None).unwrap();
        let mut r = rng::stream(2, "t", 0);
        let cs = build_context_set(&g, 1, &cfg(4, 1), &mut r).unwrap();
        assert_eq!(cs.paths.len(), 5);
        let ctx: Vec<NodeId> = cs.sampled().iter().map(Path::context).collect();
        assert!(ctx.iter().all(|c| [4, 7, 8].contains(c)));
        let mut uniq = ctx.clone();
        uniq.sort();
        uniq.dedup();
        assert!(uniq.len() < ctx.len(), "pigeonhole: 4 paths over 3 contexts");
    }

    #[test]
    fn decay_weights() {
        let p2 = Path::from_nodes(vec![0, 1, 2]).unwrap();
        assert_eq!(decay_weight(&Path::self_loop(3), 0.1).unwrap(), 1.0);
        assert!((decay_weight(&p2, 0.1).unwrap() - 0.818_730_753_077_981_8).abs() < 1e-6);
        assert!(matches!(decay_weight(&p2, 0.0), Err(Error::Config(_))));
        assert!(matches!(decay_weight(&p2, -1.0), Err(Error::Config(_))));
    }

    #[test]
    fn all_prefixes_mode() {
        let g = line3();
        let mut r = rng::stream(0, "t", 0);
        let c = PathConfig {
            truncation: Truncation::AllPrefixes,
            ..cfg(3, 2)
        };
        let cs = build_context_set(&g, 1, &c, &mut r).unwrap();
        assert_eq!(cs.paths.len(), 1 + 3 * 2);
    }

    #[test]
    fn sampling_is_independent_of_workers_and_cacheable() {
        let edges: Vec<_> = (0..30).map(|i| (i, (i * 7 + 3) % 30)).collect();
        let g = Graph::new(30, &edges, None).unwrap();
        let c = cfg(6, 3);
        let a = PathSets::sample(&g, c, 11, 0, false).unwrap();
        let b = PathSets::sample(&g, c, 11, 0, true).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, PathSets::sample(&g, c, 11, 1, false).unwrap());

        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("paths.bin");
        a.save(&f).unwrap();
        assert_eq!(PathSets::load(&f, &g, c, 11).unwrap(), Some(a));
        assert_eq!(PathSets::load(&f, &g, c, 12).unwrap(), None);
    }

    fn arb_graph() -> impl Strategy<Value = Graph> {
        (2usize..15).prop_flat_map(|n| {
            proptest::collection::vec((0..n, 0..n), 0..40)
                .prop_map(move |e| Graph::new(n, &e, None).unwrap())
        })
    }

    proptest! {
        #[test]
        fn context_sets_are_well_formed(g in arb_graph(), n in 1usize..8, l in 1usize..5, seed in 0u64..1000) {
            let sets = PathSets::sample(&g, cfg(n, l), seed, 0, false).unwrap();
            for (v, cs) in sets.sets.iter().enumerate() {
                prop_assert_eq!(cs.paths.iter().filter(|p| p.is_self_loop()).count(), 1);
                prop_assert!(cs.paths[0].is_self_loop());
                prop_assert_eq!(decay_weight(&cs.paths[0], 0.1).unwrap(), 1.0);
                if g.degree(v) > 0 {
                    prop_assert_eq!(cs.paths.len(), n + 1);
                }
                for p in cs.sampled() {
                    prop_assert!(p.len() >= 1 && p.len() <= l);
                    prop_assert_eq!(p.target(), v);
                    for w in p.nodes().windows(2) {
                        prop_assert!(g.has_link(w[0], w[1]));
                    }
                }
            }
        }

        #[test]
        fn weights_decrease_with_length(lambda in 1e-3f64..5.0, a in 0usize..10, b in 0usize..10) {
            prop_assume!(a < b);
            let mk = |k: usize| if k == 0 { Path::self_loop(0) } else { Path::from_nodes(vec![0; k + 1]).unwrap() };
            prop_assert!(decay_weight(&mk(a), lambda).unwrap() > decay_weight(&mk(b), lambda).unwrap());
        }
    }
}
