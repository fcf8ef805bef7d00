//! Prepared dataset directories.
//!
//! A prepared directory fixes the node numbering, the link split and the
//! evaluation queries, so every later command sees the same data:
//!
//! ```text
//! manifest.json        provenance, sizes and digests; no timestamps
//! nodes.tsv            raw<TAB>dense id map
//! train.tsv val.tsv test.tsv
//! features.bin         when the graph has features
//! labels.tsv           when type labels were supplied
//! val_queries.json test_queries.json
//! paths-<seed>.bin     optional context-path cache
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use lhgnn::config::hex;
use lhgnn::eval::{build_queries, EvalQuery};
use lhgnn::graph::{
    load_edge_list, read_edge_file, read_feature_file, read_label_file, split_links, write_edge_list,
    write_features_binary, write_labels, Edge, Graph, IdMap, LinkSplit, LoadedGraph, SplitRatios, TypeLabels,
};
use lhgnn::paths::{PathConfig, PathSets};
use lhgnn::synth::{generate, SynthConfig};
use serde::{Deserialize, Serialize};

use crate::Usage;

pub const MANIFEST: &str = "manifest.json";
const FORMAT: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Source {
    EdgeList {
        edges: PathBuf,
        features: Option<PathBuf>,
        labels: Option<PathBuf>,
    },
    Synthetic {
        config: SynthConfig,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bfs {
    /// Raw id of the start node.
    pub start: String,
    pub limit: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: u32,
    pub source: Source,
    pub bfs: Option<Bfs>,
    pub seed: u64,
    pub ratios: [f64; 3],
    pub nodes: usize,
    pub edges: usize,
    pub feature_dim: Option<usize>,
    pub classes: Vec<String>,
    pub train_edges: usize,
    pub val_edges: usize,
    pub test_edges: usize,
    pub val_queries: usize,
    pub test_queries: usize,
    /// Digest of the training graph, checked on every load.
    pub train_digest: String,
}

pub struct Prepare {
    pub source: Source,
    pub bfs: Option<(Option<String>, usize)>,
    pub ratios: SplitRatios,
    pub seed: u64,
    /// Also cache context paths for this configuration.
    pub cache_paths: Option<PathConfig>,
}

/// A loaded prepared directory.
pub struct Dataset {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub id_map: IdMap,
    pub labels: Option<TypeLabels>,
    pub split: LinkSplit,
    pub val_queries: Vec<EvalQuery>,
    pub test_queries: Vec<EvalQuery>,
}

fn require(path: &Path, flag: &str) -> Result<()> {
    if !path.is_file() {
        return Err(Usage(format!(
            "{flag} {}: no such file; pass an existing path (see `lhgnn prepare --help`)",
            path.display()
        ))
        .into());
    }
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn path_cache(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("paths-{seed}.bin"))
}

/// Writes a prepared directory and returns its manifest.
pub fn prepare(spec: &Prepare, dir: &Path, parallel: bool) -> Result<Manifest> {
    let loaded = match &spec.source {
        Source::EdgeList {
            edges,
            features,
            labels,
        } => {
            require(edges, "--edges")?;
            if let Some(f) = features {
                require(f, "--features")?;
            }
            if let Some(l) = labels {
                require(l, "--labels")?;
            }
            load_edge_list(edges, features.as_deref(), labels.as_deref())?
        }
        Source::Synthetic { config } => generate(config)?,
    };
    let (loaded, bfs) = match &spec.bfs {
        None => (loaded, None),
        Some((start, limit)) => {
            let start_raw = start.clone().unwrap_or_else(|| loaded.id_map.raw(0).to_string());
            let Some(v) = loaded.id_map.dense(&start_raw) else {
                return Err(Usage(format!("--bfs-start {start_raw}: not a node of the graph")).into());
            };
            let sub = loaded.bfs_subgraph(v, *limit)?;
            (
                sub,
                Some(Bfs {
                    start: start_raw,
                    limit: *limit,
                }),
            )
        }
    };
    let LoadedGraph {
        graph,
        id_map,
        labels,
    } = loaded;
    if graph.edge_count() == 0 {
        bail!("the graph has no edges");
    }
    let split = split_links(&graph, spec.ratios, spec.seed)?;
    let val_queries = build_queries(&split.full_graph, &split.val_edges, spec.seed)?;
    let test_queries = build_queries(&split.full_graph, &split.test_edges, spec.seed + 1)?;

    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    id_map.write(&dir.join("nodes.tsv"))?;
    write_edge_list(&dir.join("train.tsv"), &split.train_edges, &id_map)?;
    write_edge_list(&dir.join("val.tsv"), &split.val_edges, &id_map)?;
    write_edge_list(&dir.join("test.tsv"), &split.test_edges, &id_map)?;
    let features = dir.join("features.bin");
    match graph.features() {
        Some(f) => write_features_binary(&features, f)?,
        None if features.exists() => fs::remove_file(&features)?,
        None => {}
    }
    let label_file = dir.join("labels.tsv");
    match &labels {
        Some(l) => write_labels(&label_file, l, &id_map)?,
        None if label_file.exists() => fs::remove_file(&label_file)?,
        None => {}
    }
    write_json(&dir.join("val_queries.json"), &val_queries)?;
    write_json(&dir.join("test_queries.json"), &test_queries)?;
    if let Some(cfg) = spec.cache_paths {
        let paths = PathSets::sample(&split.train_graph, cfg, spec.seed, 0, parallel)?;
        paths.save(&path_cache(dir, spec.seed))?;
    }

    let manifest = Manifest {
        format: FORMAT,
        source: spec.source.clone(),
        bfs,
        seed: spec.seed,
        ratios: [spec.ratios.train, spec.ratios.val, spec.ratios.test],
        nodes: graph.node_count(),
        edges: graph.edge_count(),
        feature_dim: graph.feature_dim(),
        classes: labels.map(|l| l.names).unwrap_or_default(),
        train_edges: split.train_edges.len(),
        val_edges: split.val_edges.len(),
        test_edges: split.test_edges.len(),
        val_queries: val_queries.len(),
        test_queries: test_queries.len(),
        train_digest: hex(&split.train_graph.digest()),
    };
    write_json(&dir.join(MANIFEST), &manifest)?;
    Ok(manifest)
}

fn read_queries(path: &Path, n: usize) -> Result<Vec<EvalQuery>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let queries: Vec<EvalQuery> = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    for q in &queries {
        if q.anchor >= n || q.truth >= n || q.negatives.iter().any(|&c| c >= n) {
            bail!("{}: query node out of range", path.display());
        }
    }
    Ok(queries)
}

impl Dataset {
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join(MANIFEST);
        if !manifest_path.is_file() {
            return Err(Usage(format!(
                "{}: not a prepared dataset; run `lhgnn prepare --out {}` first",
                dir.display(),
                dir.display()
            ))
            .into());
        }
        let manifest: Manifest = serde_json::from_str(&fs::read_to_string(&manifest_path)?)
            .with_context(|| format!("parsing {}", manifest_path.display()))?;
        if manifest.format != FORMAT {
            bail!("{}: unsupported format {}", manifest_path.display(), manifest.format);
        }
        let id_map = IdMap::read(&dir.join("nodes.tsv"))?;
        let n = id_map.len();
        let part = |name: &str| -> Result<Vec<Edge>> { Ok(read_edge_file(&dir.join(name), &id_map)?) };
        let (train, val, test) = (part("train.tsv")?, part("val.tsv")?, part("test.tsv")?);
        let features_path = dir.join("features.bin");
        let features = if manifest.feature_dim.is_some() {
            Some(read_feature_file(&features_path, &id_map)?)
        } else {
            None
        };
        let labels_path = dir.join("labels.tsv");
        let labels = if manifest.classes.is_empty() {
            None
        } else {
            Some(read_label_file(&labels_path, &id_map)?)
        };
        let all: Vec<Edge> = train.iter().chain(&val).chain(&test).copied().collect();
        let full_graph = Graph::new(n, &all, features)?;
        let train_graph = full_graph.with_edges(&train)?;
        if hex(&train_graph.digest()) != manifest.train_digest {
            bail!("{}: training edges do not match the manifest digest", dir.display());
        }
        let val_queries = read_queries(&dir.join("val_queries.json"), n)?;
        let test_queries = read_queries(&dir.join("test_queries.json"), n)?;
        Ok(Dataset {
            dir: dir.to_path_buf(),
            manifest,
            id_map,
            labels,
            split: LinkSplit {
                train_edges: train,
                val_edges: val,
                test_edges: test,
                train_graph,
                full_graph,
            },
            val_queries,
            test_queries,
        })
    }

    /// Context paths for `(cfg, seed, round)`, using the cache for round 0.
    pub fn paths(&self, cfg: PathConfig, seed: u64, round: u64, parallel: bool) -> Result<PathSets> {
        let g = &self.split.train_graph;
        if round != 0 {
            return Ok(PathSets::sample(g, cfg, seed, round, parallel)?);
        }
        let cache = path_cache(&self.dir, seed);
        if cache.is_file() {
            match PathSets::load(&cache, g, cfg, seed) {
                Ok(Some(p)) => return Ok(p),
                Ok(None) => log::info!("{} is for another path configuration; resampling", cache.display()),
                Err(e) => log::warn!("ignoring {}: {e}", cache.display()),
            }
        }
        Ok(PathSets::sample(g, cfg, seed, round, parallel)?)
    }
}
