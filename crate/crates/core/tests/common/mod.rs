//! Shared toy fixtures and a tape-free reference forward pass.
#![allow(dead_code)]

use lhgnn::autodiff::Tensor;
use lhgnn::graph::{Graph, Triplet};
use lhgnn::model::{InputSpec, LayerParams, ModelConfig, ModelParams};
use lhgnn::paths::{PathConfig, PathSets, Truncation};
use lhgnn::rng;
use rand::Rng;

pub const TOY_FEATURES: usize = 5;

/// Six nodes: a hexagon with one chord, links in both directions.
pub fn toy_graph(features: bool) -> Graph {
    let undirected = [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 0), (0, 3)];
    let edges: Vec<_> = undirected.iter().flat_map(|&(u, v)| [(u, v), (v, u)]).collect();
    let feats = features.then(|| random_tensor(6, TOY_FEATURES, 99, 1.0));
    Graph::new(6, &edges, feats).unwrap()
}

pub fn toy_config() -> ModelConfig {
    ModelConfig {
        layers: 2,
        hidden_dim: 8,
        semantic_dim: 4,
        entity_dim: 6,
        ..ModelConfig::default()
    }
}

pub fn toy_path_config() -> PathConfig {
    PathConfig {
        num_paths: 5,
        max_len: 3,
        truncation: Truncation::RandomPrefix,
    }
}

pub fn toy_paths(g: &Graph, seed: u64) -> PathSets {
    PathSets::sample(g, toy_path_config(), seed, 0, false).unwrap()
}

pub fn random_tensor(rows: usize, cols: usize, seed: u64, scale: f64) -> Tensor {
    let mut r = rng::stream(seed, "fixture", rows as u64 * 1000 + cols as u64);
    let data = (0..rows * cols).map(|_| r.random_range(-scale..scale)).collect();
    Tensor::from_vec(rows, cols, data).unwrap()
}

/// Initialized parameters with every bias perturbed away from zero, so
/// that bias paths are exercised too.
pub fn toy_params(cfg: &ModelConfig, g: &Graph, seed: u64) -> ModelParams {
    let mut p = ModelParams::init(cfg, InputSpec::for_graph(g), &mut rng::stream(seed, "init", 0)).unwrap();
    for (i, l) in p.layers.iter_mut().enumerate() {
        let s = seed + 10 * i as u64;
        l.b_s = random_tensor(1, l.b_s.cols(), s + 1, 0.3);
        l.b_gamma = random_tensor(1, l.b_gamma.cols(), s + 2, 0.3);
        l.b_beta = random_tensor(1, l.b_beta.cols(), s + 3, 0.3);
        l.b_h = random_tensor(1, l.b_h.cols(), s + 4, 0.3);
    }
    p.link.b = random_tensor(1, p.link.b.cols(), seed + 100, 0.3);
    p
}

pub fn toy_triplets() -> Vec<Triplet> {
    vec![
        Triplet { a: 0, b: 1, c: 2 },
        Triplet { a: 3, b: 4, c: 1 },
        Triplet { a: 5, b: 0, c: 3 },
        Triplet { a: 2, b: 3, c: 5 },
    ]
}

fn lrelu(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

/// `act(W x + b)` with plain loops.
fn affine(w: &Tensor, b: &Tensor, x: &[f64], slope: f64) -> Vec<f64> {
    (0..w.rows())
        .map(|i| {
            let mut acc = b.get(0, i);
            for j in 0..w.cols() {
                acc += w.get(i, j) * x[j];
            }
            lrelu(acc, slope)
        })
        .collect()
}

/// One layer for every node, written directly from the model equations.
/// Returns `(h, s)` as nested rows.
pub fn oracle_layer(
    h_prev: &[Vec<f64>],
    paths: &PathSets,
    layer: &LayerParams,
    cfg: &ModelConfig,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let slope = cfg.leaky_slope;
    let s: Vec<Vec<f64>> = h_prev.iter().map(|h| affine(&layer.w_s, &layer.b_s, h, slope)).collect();
    let d_in = h_prev[0].len();
    let mut h_out = Vec::with_capacity(h_prev.len());
    for v in 0..h_prev.len() {
        let set = paths.get(v);
        // Self-loop: the unmodulated own row with weight 1.
        let mut c = h_prev[v].clone();
        let mut count = 1usize;
        for p in &set.paths {
            if p.is_self_loop() {
                continue;
            }
            count += 1;
            let mut sp = vec![0.0; s[0].len()];
            for &u in p.nodes() {
                for k in 0..sp.len() {
                    sp[k] += s[u][k] / p.nodes().len() as f64;
                }
            }
            let gamma = affine(&layer.w_gamma, &layer.b_gamma, &sp, slope);
            let beta = affine(&layer.w_beta, &layer.b_beta, &sp, slope);
            let w = (-cfg.decay * p.len() as f64).exp();
            let hu = &h_prev[p.context()];
            for i in 0..d_in {
                let msg = if cfg.personalization {
                    (gamma[i] + 1.0) * hu[i] + beta[i]
                } else {
                    hu[i]
                };
                c[i] += w * msg;
            }
        }
        c.iter_mut().for_each(|x| *x /= count as f64);
        let a = affine(&layer.w_h, &layer.b_h, &c, slope);
        let n = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        h_out.push(a.iter().map(|x| x / n).collect());
    }
    (h_out, s)
}

pub fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|i| t.row_slice(i).to_vec()).collect()
}

pub fn max_abs_diff(a: &[Vec<f64>], b: &Tensor) -> f64 {
    assert_eq!(a.len(), b.rows());
    let mut m: f64 = 0.0;
    for (i, row) in a.iter().enumerate() {
        assert_eq!(row.len(), b.cols());
        for (j, x) in row.iter().enumerate() {
            m = m.max((x - b.get(i, j)).abs());
        }
    }
    m
}

/// Gradient check of the total batch loss (hinge plus FiLM penalty) on the
/// toy graph, over every parameter tensor.
pub fn toy_loss_grad_check(
    features: bool,
    film_weight: f64,
    margin: f64,
    seed: u64,
) -> (lhgnn::autodiff::GradCheckReport, f64) {
    use lhgnn::autodiff::{grad_check, Tape};
    use lhgnn::link::{batch_loss, LossConfig};
    use lhgnn::model::{forward_vars, input_var, BatchPlan};

    let g = toy_graph(features);
    let paths = toy_paths(&g, seed);
    let cfg = toy_config();
    let params = toy_params(&cfg, &g, seed + 1);
    let triplets = toy_triplets();
    let loss_cfg = LossConfig { margin, film_weight };
    let nodes: Vec<usize> = triplets.iter().flat_map(|t| [t.a, t.b, t.c]).collect();
    let plan = BatchPlan::new(&paths, &nodes, cfg.layers, cfg.decay).unwrap();
    let objective = |t: &mut Tape, vars: &[lhgnn::autodiff::Var]| {
        let pv = params.vars_from(vars)?;
        let input = input_var(t, &pv, g.features(), &plan)?;
        let fwd = forward_vars(t, &cfg, &pv, input, &plan)?;
        let l = batch_loss(t, &fwd, &plan, Some(pv.link), &triplets, &loss_cfg, cfg.leaky_slope)?;
        let task = t.value(l.task).item()?;
        TASK.with(|c| c.set(task));
        Ok(l.total)
    };
    let tensors: Vec<Tensor> = params.tensors().into_iter().cloned().collect();
    let report = grad_check(objective, &tensors, 1e-4).unwrap();
    (report, TASK.with(|c| c.get()))
}

thread_local! {
    /// Hinge term of the last objective evaluation.
    static TASK: std::cell::Cell<f64> = const { std::cell::Cell::new(0.0) };
}
