//! TransE with one relation vector per pseudo edge type.
//!
//! The loss, margin, negatives and evaluation queries are the ones used for
//! the main model; only the link translation differs.

use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::PseudoTypes;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::eval::{evaluate_with, EvalQuery, RankMetrics};
use crate::graph::{sample_triplets, LinkSplit, NodeId, Triplet};
use crate::optim::{Optimizer, OptimizerKind};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransEConfig {
    pub seed: u64,
    pub dim: usize,
    pub margin: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Steps per epoch; `ceil(train edges / batch size)` when unset.
    pub steps_per_epoch: Option<usize>,
}

impl Default for TransEConfig {
    fn default() -> Self {
        TransEConfig {
            seed: 0,
            dim: 200,
            margin: 0.2,
            learning_rate: 0.005,
            batch_size: 256,
            max_epochs: 100,
            patience: 5,
            steps_per_epoch: None,
        }
    }
}

impl TransEConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config("dim, batch_size and max_epochs must be at least 1".into()));
        }
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return Err(Error::Config(format!("margin {} must be positive", self.margin)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate {} must be positive",
                self.learning_rate
            )));
        }
        if self.steps_per_epoch == Some(0) {
            return Err(Error::Config("steps_per_epoch must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransEParams {
    /// Unit rows, `n × dim`.
    pub entity: Tensor,
    /// `K² × dim`; rows of types absent from training stay zero.
    pub relation: Tensor,
    pub types: PseudoTypes,
}

impl TransEParams {
    /// `(e_x + r_{type(x, y)} − e_y, ‖·‖₂)`.
    fn residual(&self, x: NodeId, y: NodeId, out: &mut [f64]) -> f64 {
        let r = self.relation.row_slice(self.types.edge_type(x, y));
        let (ex, ey) = (self.entity.row_slice(x), self.entity.row_slice(y));
        let mut sq = 0.0;
        for i in 0..out.len() {
            out[i] = ex[i] + r[i] - ey[i];
            sq += out[i] * out[i];
        }
        sq.sqrt()
    }

    pub fn distance(&self, x: NodeId, y: NodeId) -> f64 {
        let mut buf = vec![0.0; self.entity.cols()];
        self.residual(x, y, &mut buf)
    }

    /// `−‖e_x + r_{type(x, y)} − e_y‖₂`.
    pub fn score(&self, x: NodeId, y: NodeId) -> f64 {
        -self.distance(x, y)
    }

    pub fn evaluate(&self, queries: &[EvalQuery], parallel: bool) -> Result<RankMetrics> {
        evaluate_with(queries, |a, c| self.score(a, c), parallel)
    }

    /// Mean hinge `max(d(a,b) − d(a,c) + margin, 0)`.
    pub fn loss(&self, triplets: &[Triplet], margin: f64) -> f64 {
        let total: f64 = triplets
            .iter()
            .map(|t| (self.distance(t.a, t.b) - self.distance(t.a, t.c) + margin).max(0.0))
            .sum();
        total / triplets.len().max(1) as f64
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransEEpoch {
    pub epoch: usize,
    pub loss: f64,
    pub val: Option<RankMetrics>,
    pub secs: f64,
}

#[derive(Debug, Clone)]
pub struct TransEOutcome {
    /// Parameters at the best validation MAP, or the last ones without
    /// validation queries.
    pub best: TransEParams,
    pub epochs: Vec<TransEEpoch>,
    pub best_epoch: usize,
    pub best_val_map: Option<f64>,
    pub total_secs: f64,
}

fn normalize_rows(t: &mut Tensor) {
    for i in 0..t.rows() {
        let row = t.row_slice_mut(i);
        let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 0.0 {
            row.iter_mut().for_each(|x| *x /= n);
        }
    }
}

fn uniform(rows: usize, cols: usize, r: &mut rng::StreamRng) -> Tensor {
    let bound = 6.0 / (cols as f64).sqrt();
    let data = (0..rows * cols).map(|_| r.random_range(-bound..bound)).collect();
    Tensor::from_vec(rows, cols, data).expect("sized")
}

/// Trains on `split.train_edges` with early stopping on `val_queries`.
pub fn transe_train(
    split: &LinkSplit,
    types: &PseudoTypes,
    cfg: &TransEConfig,
    val_queries: &[EvalQuery],
    parallel: bool,
) -> Result<TransEOutcome> {
    cfg.validate()?;
    let n = split.train_graph.node_count();
    if types.node_types().len() != n {
        return Err(Error::Contract(format!(
            "{} pseudo types for {n} nodes",
            types.node_types().len()
        )));
    }
    if split.train_edges.is_empty() {
        return Err(Error::Data("no training edges".into()));
    }
    let started = Instant::now();
    let d = cfg.dim;
    let mut init = rng::stream(cfg.seed, "transe/init", 0);
    let mut entity = uniform(n, d, &mut init);
    normalize_rows(&mut entity);
    let mut relation = uniform(types.num_edge_types(), d, &mut init);
    normalize_rows(&mut relation);
    // Types never realized by a training link keep a zero, frozen vector.
    let mut seen = vec![false; types.num_edge_types()];
    for &(a, b) in &split.train_edges {
        seen[types.edge_type(a, b)] = true;
    }
    for (t, &s) in seen.iter().enumerate() {
        if !s {
            relation.row_slice_mut(t).fill(0.0);
        }
    }
    let mut params = TransEParams {
        entity,
        relation,
        types: types.clone(),
    };
    let mut opt = Optimizer::new(
        OptimizerKind::Adam,
        cfg.learning_rate,
        &[&params.entity, &params.relation],
    )?;
    let mut batch_rng = rng::stream(cfg.seed, "transe/batches", 0);
    let steps = cfg
        .steps_per_epoch
        .unwrap_or_else(|| split.train_edges.len().div_ceil(cfg.batch_size));
    let mut epochs = Vec::new();
    let mut best: Option<(f64, usize, TransEParams)> = None;
    let mut since_best = 0;
    let (mut pos, mut neg) = (vec![0.0; d], vec![0.0; d]);
    for epoch in 1..=cfg.max_epochs {
        let t0 = Instant::now();
        let mut loss_sum = 0.0;
        for _ in 0..steps {
            let batch = sample_triplets(split, cfg.batch_size, &mut batch_rng)?;
            let mut ge = Tensor::zeros(n, d);
            let mut gr = Tensor::zeros(params.relation.rows(), d);
            let inv = 1.0 / batch.len() as f64;
            let mut loss = 0.0;
            for t in &batch {
                let dp = params.residual(t.a, t.b, &mut pos);
                let dn = params.residual(t.a, t.c, &mut neg);
                let h = dp - dn + cfg.margin;
                if h <= 0.0 {
                    continue;
                }
                loss += h;
                let (rp, rn) = (types.edge_type(t.a, t.b), types.edge_type(t.a, t.c));
                // ∂d/∂e_x = u, ∂d/∂r = u, ∂d/∂e_y = −u with u = residual / d.
                for (res, dist, y, r, sign) in [(&pos, dp, t.b, rp, 1.0), (&neg, dn, t.c, rn, -1.0)] {
                    if dist == 0.0 {
                        continue;
                    }
                    let k = sign * inv / dist;
                    for i in 0..d {
                        let u = k * res[i];
                        ge.row_slice_mut(t.a)[i] += u;
                        ge.row_slice_mut(y)[i] -= u;
                        if seen[r] {
                            gr.row_slice_mut(r)[i] += u;
                        }
                    }
                }
            }
            loss_sum += loss * inv;
            opt.step(&mut [&mut params.entity, &mut params.relation], &[ge, gr], &[true, true])?;
            normalize_rows(&mut params.entity);
        }
        let val = if val_queries.is_empty() {
            None
        } else {
            Some(params.evaluate(val_queries, parallel)?)
        };
        let record = TransEEpoch {
            epoch,
            loss: loss_sum / steps as f64,
            val,
            secs: t0.elapsed().as_secs_f64(),
        };
        log::info!(
            "transe epoch {epoch} loss {:.6} val_map {}",
            record.loss,
            val.map_or("-".to_string(), |m| format!("{:.4}", m.map))
        );
        epochs.push(record);
        if let Some(m) = val {
            if best.as_ref().is_none_or(|(b, _, _)| m.map > *b) {
                best = Some((m.map, epoch, params.clone()));
                since_best = 0;
            } else {
                since_best += 1;
                if since_best > cfg.patience {
                    break;
                }
            }
        }
    }
    let (best_val_map, best_epoch, best) = match best {
        Some((m, e, p)) => (Some(m), e, p),
        None => (None, epochs.len(), params),
    };
    Ok(TransEOutcome {
        best,
        epochs,
        best_epoch,
        best_val_map,
        total_secs: started.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{split_links, Graph, SplitRatios};

    fn cycle_split() -> LinkSplit {
        let edges: Vec<_> = (0..4).flat_map(|i| [(i, (i + 1) % 4), ((i + 1) % 4, i)]).collect();
        let g = Graph::new(4, &edges, None).unwrap();
        LinkSplit {
            train_edges: g.edges().to_vec(),
            val_edges: Vec::new(),
            test_edges: Vec::new(),
            train_graph: g.clone(),
            full_graph: g,
        }
    }

    #[test]
    fn loss_decreases_on_a_cycle() {
        let split = cycle_split();
        let types = PseudoTypes::single(4);
        let cfg = TransEConfig {
            dim: 8,
            max_epochs: 500,
            batch_size: 8,
            steps_per_epoch: Some(1),
            ..TransEConfig::default()
        };
        let out = transe_train(&split, &types, &cfg, &[], false).unwrap();
        let first: f64 = out.epochs[..20].iter().map(|e| e.loss).sum::<f64>() / 20.0;
        let last: f64 = out.epochs[480..].iter().map(|e| e.loss).sum::<f64>() / 20.0;
        assert!(last < first, "{first} -> {last}");
        for v in 0..4 {
            let n: f64 = out.best.entity.row_slice(v).iter().map(|x| x * x).sum();
            assert!((n - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn perfect_translation_scores_zero() {
        let entity = Tensor::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let relation = Tensor::from_vec(1, 2, vec![-1.0, 1.0]).unwrap();
        let p = TransEParams {
            entity,
            relation,
            types: PseudoTypes::single(2),
        };
        assert_eq!(p.score(0, 1), 0.0);
        assert!((p.score(1, 0) - (-(8.0f64).sqrt())).abs() < 1e-15);
    }

    #[test]
    fn unseen_types_stay_zero() {
        // Types: nodes 0,1 → 0, nodes 2,3 → 1; training links only go 0→1.
        let edges = vec![(0, 2), (1, 3), (0, 3)];
        let g = Graph::new(4, &edges, None).unwrap();
        let split = LinkSplit {
            train_edges: edges.clone(),
            val_edges: Vec::new(),
            test_edges: Vec::new(),
            train_graph: g.clone(),
            full_graph: g,
        };
        let types = PseudoTypes::new(2, vec![0, 0, 1, 1]).unwrap();
        let cfg = TransEConfig {
            dim: 4,
            max_epochs: 30,
            batch_size: 4,
            ..TransEConfig::default()
        };
        let out = transe_train(&split, &types, &cfg, &[], false).unwrap();
        for t in [0, 2, 3] {
            assert!(out.best.relation.row_slice(t).iter().all(|&x| x == 0.0), "type {t}");
        }
        assert!(out.best.relation.row_slice(1).iter().any(|&x| x != 0.0));
    }

    #[test]
    fn training_is_seeded() {
        let g = {
            let edges: Vec<_> = (0..30).flat_map(|i| [(i, (i + 1) % 30), ((i + 1) % 30, i)]).collect();
            Graph::new(30, &edges, None).unwrap()
        };
        let split = split_links(&g, SplitRatios::DEFAULT, 0).unwrap();
        let cfg = TransEConfig {
            dim: 6,
            max_epochs: 3,
            ..TransEConfig::default()
        };
        let types = PseudoTypes::single(30);
        let a = transe_train(&split, &types, &cfg, &[], false).unwrap();
        let b = transe_train(&split, &types, &cfg, &[], false).unwrap();
        assert_eq!(a.best, b.best);
    }
}
