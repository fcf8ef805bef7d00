//! Synthetic bibliographic graphs with hidden node types.
//!
//! Papers link to their authors and to one venue; there are no paper-paper,
//! author-author or author-venue links. Every venue and author belongs to a
//! research area. Each paper has a lead author whose research group supplies
//! most co-authors and whose favourite venues receive most papers, so
//! collaborations and venue choices recur. Papers draw keywords mostly from
//! their area's block of the vocabulary; authors and venues carry the mean
//! of their papers' keyword vectors. Types are returned out-of-band as
//! [`TypeLabels`].
//!
//! The defaults match the DBLP benchmark's type proportions and edge counts
//! per type.

use rand::Rng;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::graph::{Graph, IdMap, LoadedGraph, TypeLabels};
use crate::rng;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SynthConfig {
    pub papers: usize,
    pub authors: usize,
    pub venues: usize,
    pub areas: usize,
    pub feature_dim: usize,
    pub words_per_paper: usize,
    /// Probability that a keyword comes from the paper's area block.
    pub topical_words: f64,
    /// Mean number of authors per paper, at least 1.
    pub mean_authors: f64,
    /// Authors per research group; groups never span areas.
    pub group_size: usize,
    /// Probability that a co-author comes from the lead author's group
    /// rather than from the whole area.
    pub group_coauthors: f64,
    /// Venues each author favours, drawn from their area.
    pub favourite_venues: usize,
    /// Probability that a paper goes to one of its lead author's favourites.
    pub venue_loyalty: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            papers: 14_328,
            authors: 4_057,
            venues: 20,
            areas: 4,
            feature_dim: 334,
            words_per_paper: 8,
            topical_words: 0.7,
            mean_authors: 1.37,
            group_size: 6,
            group_coauthors: 0.8,
            favourite_venues: 2,
            venue_loyalty: 0.8,
            seed: 0,
        }
    }
}

impl SynthConfig {
    /// Default proportions with `nodes` total nodes (venues fixed).
    pub fn with_nodes(nodes: usize, seed: u64) -> Self {
        let base = SynthConfig::default();
        let total = (base.papers + base.authors) as f64;
        let rest = nodes.saturating_sub(base.venues) as f64;
        let papers = (rest * base.papers as f64 / total).round() as usize;
        SynthConfig {
            papers,
            authors: nodes.saturating_sub(base.venues + papers),
            seed,
            ..base
        }
    }

    pub fn node_count(&self) -> usize {
        self.papers + self.authors + self.venues
    }
}

pub const PAPER: usize = 0;
pub const AUTHOR: usize = 1;
pub const VENUE: usize = 2;

/// Cumulative weights over a list of ids.
struct Weighted {
    ids: Vec<usize>,
    cum: Vec<f64>,
}

impl Weighted {
    fn new() -> Self {
        Weighted {
            ids: Vec::new(),
            cum: Vec::new(),
        }
    }

    fn push(&mut self, id: usize, w: f64) {
        let last = self.cum.last().copied().unwrap_or(0.0);
        self.ids.push(id);
        self.cum.push(last + w);
    }

    fn pick(&self, r: &mut rng::StreamRng) -> usize {
        let x = r.random::<f64>() * self.cum.last().unwrap();
        self.ids[self.cum.partition_point(|&c| c <= x).min(self.cum.len() - 1)]
    }
}

/// Nodes are numbered papers first, then authors, then venues.
pub fn generate(cfg: &SynthConfig) -> Result<LoadedGraph> {
    if cfg.papers == 0 || cfg.authors == 0 || cfg.venues == 0 || cfg.areas == 0 {
        return Err(Error::Config("every node type needs at least one node".into()));
    }
    if cfg.feature_dim < cfg.areas {
        return Err(Error::Config("feature_dim must be at least the number of areas".into()));
    }
    if cfg.mean_authors < 1.0 {
        return Err(Error::Config("mean_authors must be at least 1".into()));
    }
    if cfg.group_size == 0 || cfg.favourite_venues == 0 {
        return Err(Error::Config("group_size and favourite_venues must be at least 1".into()));
    }
    let mut r = rng::stream(cfg.seed, "synth", 0);
    let n = cfg.node_count();
    let author0 = cfg.papers;
    let venue0 = cfg.papers + cfg.authors;
    let block = cfg.feature_dim / cfg.areas;

    let area_venues: Vec<Vec<usize>> = (0..cfg.areas)
        .map(|a| (0..cfg.venues).filter(|v| v % cfg.areas == a).collect())
        .collect();
    // Heavy-tailed productivity: weight u^{-1/2} for u uniform in (0, 1].
    let weight: Vec<f64> = (0..cfg.authors)
        .map(|_| (1.0 - r.random::<f64>()).powf(-0.5))
        .collect();
    let author_area: Vec<usize> = (0..cfg.authors).map(|a| a % cfg.areas).collect();
    let mut everyone = Weighted::new();
    let mut by_area: Vec<Weighted> = (0..cfg.areas).map(|_| Weighted::new()).collect();
    for a in 0..cfg.authors {
        everyone.push(a, weight[a]);
        by_area[author_area[a]].push(a, weight[a]);
    }
    // Consecutive same-area authors form groups.
    let group_of: Vec<usize> = (0..cfg.authors)
        .map(|a| (a / cfg.areas) / cfg.group_size * cfg.areas + author_area[a])
        .collect();
    let mut groups: Vec<Weighted> = Vec::new();
    for a in 0..cfg.authors {
        let g = group_of[a];
        if groups.len() <= g {
            groups.resize_with(g + 1, Weighted::new);
        }
        groups[g].push(a, weight[a]);
    }
    let favourites: Vec<Vec<usize>> = (0..cfg.authors)
        .map(|a| {
            let pool = &area_venues[author_area[a]];
            let pool = if pool.is_empty() { &area_venues[0] } else { pool };
            let pool = if pool.is_empty() {
                (0..cfg.venues).collect::<Vec<_>>()
            } else {
                pool.clone()
            };
            (0..cfg.favourite_venues)
                .map(|_| pool[r.random_range(0..pool.len())])
                .collect()
        })
        .collect();

    let mut edges = Vec::new();
    let mut features = Tensor::zeros(n, cfg.feature_dim);
    let mut authored = vec![false; cfg.authors];
    let mut paper_lead = Vec::with_capacity(cfg.papers);
    let extra = cfg.mean_authors - 1.0;
    for p in 0..cfg.papers {
        let lead = everyone.pick(&mut r);
        paper_lead.push(lead);
        let area = author_area[lead];
        let v = if r.random::<f64>() < cfg.venue_loyalty {
            favourites[lead][r.random_range(0..cfg.favourite_venues)]
        } else {
            r.random_range(0..cfg.venues)
        };
        edges.push((p, venue0 + v));
        // 1 + Poisson-like count via repeated Bernoulli trials.
        let mut k = 1;
        let mut budget = extra;
        while budget > 0.0 && k < 8 {
            if r.random::<f64>() < budget.min(0.5) {
                k += 1;
            }
            budget -= 0.5;
        }
        let group = &groups[group_of[lead]];
        let mut chosen = vec![lead];
        let mut tries = 0;
        while chosen.len() < k && tries < 100 {
            tries += 1;
            let a = if r.random::<f64>() < cfg.group_coauthors {
                group.pick(&mut r)
            } else {
                by_area[area].pick(&mut r)
            };
            if !chosen.contains(&a) {
                chosen.push(a);
            }
        }
        for a in chosen {
            authored[a] = true;
            edges.push((p, author0 + a));
        }
        for _ in 0..cfg.words_per_paper {
            let w = if r.random::<f64>() < cfg.topical_words {
                area * block + r.random_range(0..block)
            } else {
                r.random_range(0..cfg.feature_dim)
            };
            features.set(p, w, 1.0);
        }
    }
    // Authors who never led or joined a paper join one led from their group
    // when possible, else one from their area.
    let mut led_by_group: Vec<Vec<usize>> = vec![Vec::new(); groups.len()];
    let mut led_by_area: Vec<Vec<usize>> = vec![Vec::new(); cfg.areas];
    for (p, &lead) in paper_lead.iter().enumerate() {
        led_by_group[group_of[lead]].push(p);
        led_by_area[author_area[lead]].push(p);
    }
    for a in 0..cfg.authors {
        if !authored[a] {
            let pool = if !led_by_group[group_of[a]].is_empty() {
                &led_by_group[group_of[a]]
            } else {
                &led_by_area[author_area[a]]
            };
            let p = if pool.is_empty() {
                r.random_range(0..cfg.papers)
            } else {
                pool[r.random_range(0..pool.len())]
            };
            edges.push((p, author0 + a));
        }
    }
    // Authors and venues take the mean of their papers' keyword vectors.
    let mut count = vec![0usize; n];
    for &(p, other) in &edges {
        count[other] += 1;
        for w in 0..cfg.feature_dim {
            let x = features.get(p, w);
            if x != 0.0 {
                features.set(other, w, features.get(other, w) + x);
            }
        }
    }
    for (v, &c) in count.iter().enumerate() {
        if c > 1 {
            for w in 0..cfg.feature_dim {
                features.set(v, w, features.get(v, w) / c as f64);
            }
        }
    }
    // Both directions, as in the benchmark's edge list.
    let mut both = Vec::with_capacity(2 * edges.len());
    for &(u, v) in &edges {
        both.push((u, v));
        both.push((v, u));
    }
    let graph = Graph::new(n, &both, Some(features))?;
    let label = (0..n)
        .map(|v| {
            Some(if v < author0 {
                PAPER
            } else if v < venue0 {
                AUTHOR
            } else {
                VENUE
            })
        })
        .collect();
    Ok(LoadedGraph {
        graph,
        id_map: IdMap::identity(n),
        labels: Some(TypeLabels {
            label,
            names: vec!["paper".into(), "author".into(), "venue".into()],
        }),
    })
}
