//! Mini-batch training with validation-based early stopping.
//!
//! One step samples a batch of triplets, runs the stack only over the nodes
//! the batch needs (see [`BatchPlan`]), and applies one optimizer update.
//! An epoch is `ceil(train edges / batch size)` steps followed by a
//! validation pass over the full graph.

use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::checkpoint::Checkpoint;
use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalQuery, RankMetrics};
use crate::graph::{sample_triplets, split_links, Graph, LinkSplit, NodeId, SplitRatios};
use crate::link::batch_loss;
use crate::model::{embed_all, forward_vars, input_var, BatchPlan, Embeddings, InputSpec, ModelParams};
use crate::optim::Optimizer;
use crate::paths::PathSets;
use crate::rng;

/// Per-step loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub task: f64,
    /// Summed FiLM norms; 0 without personalization.
    pub film: f64,
    pub total: f64,
    /// Batch means of `‖γ‖₂` and `‖β‖₂` over realized paths, when tracked.
    pub mean_gamma_norm: Option<f64>,
    pub mean_beta_norm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean total loss over the epoch's steps.
    pub loss: f64,
    pub task_loss: f64,
    pub val: Option<RankMetrics>,
    pub secs: f64,
    /// Wall-clock seconds of the optimization steps alone.
    pub train_secs: f64,
}

impl EpochRecord {
    /// `epoch <i> loss <x> val_map <y> secs <z>`.
    pub fn progress_line(&self) -> String {
        let map = self
            .val
            .map(|m| format!("{:.4}", m.map))
            .unwrap_or_else(|| "nan".into());
        format!(
            "epoch {} loss {:.6} val_map {map} secs {:.2}",
            self.epoch, self.loss, self.secs
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub fingerprint: String,
    pub seed: u64,
    pub config: TrainConfig,
    pub epochs: Vec<EpochRecord>,
    pub steps: Vec<StepRecord>,
    /// Epoch with the highest validation MAP (1-based), 0 without validation.
    pub best_epoch: usize,
    pub best_val_map: Option<f64>,
    pub stopped_early: bool,
    pub best_checkpoint: Option<PathBuf>,
    pub total_secs: f64,
}

impl TrainReport {
    /// Per-step total losses.
    pub fn loss_curve(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.total).collect()
    }
}

/// Knobs that do not change the numbers a run produces.
#[derive(Default)]
pub struct TrainOptions<'a> {
    /// Run the parallel regions on the rayon pool.
    pub parallel: bool,
    /// Where to write the best checkpoint.
    pub checkpoint: Option<PathBuf>,
    /// Record batch-mean FiLM norms per step.
    pub film_stats: bool,
    /// Stop after this many steps in total.
    pub max_steps: Option<usize>,
    /// Called after every epoch.
    pub on_epoch: Option<Box<dyn FnMut(&EpochRecord) + 'a>>,
}

pub struct TrainOutcome {
    pub report: TrainReport,
    /// Parameters at the best validation epoch, or the last epoch without
    /// validation.
    pub best: ModelParams,
    pub last: ModelParams,
    pub paths: PathSets,
}

fn param_norms(params: &ModelParams) -> String {
    params
        .names()
        .iter()
        .zip(params.tensors())
        .map(|(n, t)| format!("{n}={:.3e}", t.frobenius_norm()))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Trains on `split.train_graph` with precomputed context `paths`.
/// Validation uses `val_queries` if nonempty.
pub fn train(
    cfg: &TrainConfig,
    split: &LinkSplit,
    paths: PathSets,
    val_queries: &[EvalQuery],
    mut opts: TrainOptions<'_>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let g = &split.train_graph;
    if paths.sets.len() != g.node_count() {
        return Err(Error::Contract(format!(
            "{} context sets for {} nodes",
            paths.sets.len(),
            g.node_count()
        )));
    }
    if split.train_edges.is_empty() {
        return Err(Error::Data("no training edges".into()));
    }
    let started = Instant::now();
    let mut params = ModelParams::init(
        &cfg.model,
        InputSpec::for_graph(g),
        &mut rng::stream(cfg.seed, "init", 0),
    )?;
    let mask = params.trainable_mask();
    let mut optimizer = Optimizer::new(cfg.optimizer, cfg.learning_rate, &params.tensors())?;
    let mut batch_rng = rng::stream(cfg.seed, "batches", 0);
    let steps_per_epoch = cfg
        .steps_per_epoch
        .unwrap_or_else(|| split.train_edges.len().div_ceil(cfg.batch_size));
    let fingerprint = cfg.fingerprint();

    let mut paths = paths;
    let mut epochs = Vec::new();
    let mut steps = Vec::new();
    let mut best: Option<(f64, usize, ModelParams)> = None;
    let mut since_best = 0usize;
    let mut stopped_early = false;
    let mut global_step = 0usize;

    'epochs: for epoch in 1..=cfg.max_epochs {
        let epoch_start = Instant::now();
        if cfg.resample_paths && epoch > 1 {
            paths = PathSets::sample(g, cfg.paths, cfg.seed, epoch as u64 - 1, opts.parallel)?;
        }
        let (mut loss_sum, mut task_sum, mut n_steps) = (0.0, 0.0, 0usize);
        for _ in 0..steps_per_epoch {
            if opts.max_steps.is_some_and(|m| global_step >= m) {
                break;
            }
            global_step += 1;
            let record = train_step(
                cfg,
                split,
                &paths,
                &mut params,
                &mut optimizer,
                &mask,
                &mut batch_rng,
                opts.parallel,
                opts.film_stats,
                global_step,
            )?;
            loss_sum += record.total;
            task_sum += record.task;
            n_steps += 1;
            steps.push(record);
        }
        let train_secs = epoch_start.elapsed().as_secs_f64();
        if n_steps == 0 {
            break;
        }
        let val = if val_queries.is_empty() {
            None
        } else {
            let emb = embed_all(&params, g, &paths, opts.parallel)?;
            Some(evaluate(&emb, params.config.link_encoder.then_some(&params.link), val_queries, opts.parallel)?)
        };
        let record = EpochRecord {
            epoch,
            loss: loss_sum / n_steps as f64,
            task_loss: task_sum / n_steps as f64,
            val,
            secs: epoch_start.elapsed().as_secs_f64(),
            train_secs,
        };
        log::info!("{}", record.progress_line());
        if let Some(cb) = opts.on_epoch.as_mut() {
            cb(&record);
        }
        epochs.push(record);

        if let Some(m) = val {
            let improved = best.as_ref().is_none_or(|(b, _, _)| m.map > *b);
            if improved {
                since_best = 0;
                if let Some(path) = &opts.checkpoint {
                    Checkpoint {
                        fingerprint: fingerprint.clone(),
                        seed: cfg.seed,
                        epoch: epoch as u64,
                        val_map: m.map,
                        params: params.clone(),
                    }
                    .save(path)?;
                }
                best = Some((m.map, epoch, params.clone()));
            } else {
                since_best += 1;
                if since_best > cfg.patience {
                    stopped_early = true;
                    break 'epochs;
                }
            }
        }
        if opts.max_steps.is_some_and(|m| global_step >= m) {
            break;
        }
    }

    let (best_val_map, best_epoch, best_params) = match best {
        Some((m, e, p)) => (Some(m), e, p),
        None => {
            if let Some(path) = &opts.checkpoint {
                Checkpoint {
                    fingerprint: fingerprint.clone(),
                    seed: cfg.seed,
                    epoch: epochs.len() as u64,
                    val_map: f64::NAN,
                    params: params.clone(),
                }
                .save(path)?;
            }
            (None, 0, params.clone())
        }
    };
    let report = TrainReport {
        fingerprint,
        seed: cfg.seed,
        config: cfg.clone(),
        epochs,
        steps,
        best_epoch,
        best_val_map,
        stopped_early,
        best_checkpoint: opts.checkpoint.clone(),
        total_secs: started.elapsed().as_secs_f64(),
    };
    Ok(TrainOutcome {
        report,
        best: best_params,
        last: params,
        paths,
    })
}

#[allow(clippy::too_many_arguments)]
fn train_step(
    cfg: &TrainConfig,
    split: &LinkSplit,
    paths: &PathSets,
    params: &mut ModelParams,
    optimizer: &mut Optimizer,
    mask: &[bool],
    batch_rng: &mut rng::StreamRng,
    parallel: bool,
    film_stats: bool,
    step: usize,
) -> Result<StepRecord> {
    let triplets = sample_triplets(split, cfg.batch_size, batch_rng)?;
    let nodes: Vec<NodeId> = triplets.iter().flat_map(|t| [t.a, t.b, t.c]).collect();
    let plan = BatchPlan::new(paths, &nodes, params.config.layers, params.config.decay)?;
    let mut tape = Tape::new().with_parallel(parallel);
    let vars = params.to_tape(&mut tape, true);
    let input = input_var(&mut tape, &vars, split.train_graph.features(), &plan)?;
    let fwd = forward_vars(&mut tape, &params.config, &vars, input, &plan)?;
    let link = params.config.link_encoder.then_some(vars.link);
    let loss = batch_loss(
        &mut tape,
        &fwd,
        &plan,
        link,
        &triplets,
        &cfg.loss,
        params.config.leaky_slope,
    )?;
    let task = tape.value(loss.task).item()?;
    let film = loss.film.map(|f| tape.value(f).item()).transpose()?.unwrap_or(0.0);
    let total = tape.value(loss.total).item()?;
    if !total.is_finite() {
        return Err(Error::NonFinite(format!(
            "loss {total} at step {step} (lr {}); parameter norms: {}",
            cfg.learning_rate,
            param_norms(params)
        )));
    }
    let (mean_gamma_norm, mean_beta_norm) = if film_stats && !fwd.film.is_empty() {
        let (mut sg, mut sb, mut count) = (0.0, 0.0, 0usize);
        for f in &fwd.film {
            for (g, b) in tape.film_path_norms(f, params.config.leaky_slope)? {
                sg += g;
                sb += b;
                count += 1;
            }
        }
        let c = count.max(1) as f64;
        (Some(sg / c), Some(sb / c))
    } else {
        (None, None)
    };
    let grads = tape.backward(loss.total)?;
    let grad_list: Vec<_> = vars.all().into_iter().map(|v| grads.get(v)).collect();
    optimizer
        .step(&mut params.tensors_mut(), &grad_list, mask)
        .map_err(|e| match e {
            Error::NonFinite(m) => Error::NonFinite(format!(
                "{m} at step {step} (lr {}); parameter norms: {}",
                cfg.learning_rate,
                param_norms(params)
            )),
            other => other,
        })?;
    if !params.is_finite() {
        return Err(Error::NonFinite(format!(
            "parameters after step {step} (lr {}); norms: {}",
            cfg.learning_rate,
            param_norms(params)
        )));
    }
    Ok(StepRecord {
        step,
        task,
        film,
        total,
        mean_gamma_norm,
        mean_beta_norm,
    })
}

/// Final embeddings of a trained model over the training graph.
pub fn embeddings(params: &ModelParams, split: &LinkSplit, paths: &PathSets, parallel: bool) -> Result<Embeddings> {
    embed_all(params, &split.train_graph, paths, parallel)
}

/// One row of a scaling measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub label: String,
    pub nodes: usize,
    pub edges: usize,
    /// Mean optimization seconds per epoch.
    pub secs_per_epoch: f64,
    pub epochs: usize,
    pub steps_per_epoch: usize,
}

/// Times `epochs` training epochs (without validation) on each graph.
///
/// The batch size and steps per epoch follow `cfg`, so per-epoch work is
/// proportional to the number of training edges.
pub fn measure_scaling(
    graphs: &[(String, Graph)],
    cfg: &TrainConfig,
    epochs: usize,
    parallel: bool,
) -> Result<Vec<ScalingRow>> {
    let mut rows = Vec::with_capacity(graphs.len());
    for (label, g) in graphs {
        let split = split_links(g, SplitRatios::DEFAULT, cfg.seed)?;
        let steps_per_epoch = cfg
            .steps_per_epoch
            .unwrap_or_else(|| split.train_edges.len().div_ceil(cfg.batch_size));
        if split.train_edges.is_empty() {
            rows.push(ScalingRow {
                label: label.clone(),
                nodes: g.node_count(),
                edges: g.edge_count(),
                secs_per_epoch: 0.0,
                epochs: 0,
                steps_per_epoch: 0,
            });
            continue;
        }
        let paths = PathSets::sample(&split.train_graph, cfg.paths, cfg.seed, 0, parallel)?;
        let run_cfg = TrainConfig {
            max_epochs: epochs,
            ..cfg.clone()
        };
        let out = train(
            &run_cfg,
            &split,
            paths,
            &[],
            TrainOptions {
                parallel,
                ..Default::default()
            },
        )?;
        let secs: f64 = out.report.epochs.iter().map(|e| e.train_secs).sum();
        rows.push(ScalingRow {
            label: label.clone(),
            nodes: g.node_count(),
            edges: g.edge_count(),
            secs_per_epoch: secs / out.report.epochs.len().max(1) as f64,
            epochs: out.report.epochs.len(),
            steps_per_epoch,
        });
    }
    Ok(rows)
}
