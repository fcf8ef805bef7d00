//! The layered encoder.
//!
//! Layer `l` maps previous-layer primary embeddings `H` to
//!
//! ```text
//! S     = LeakyReLU(H W_sᵀ + b_s)                         node semantics
//! s_p   = mean of S over the nodes of p                   path semantics
//! γ, β  = LeakyReLU(W_γ s_p + b_γ), LeakyReLU(W_β s_p + b_β)
//! c_v   = (h_v + Σ_p e^{-λ L(p)} ((γ + 1) ⊙ h_u + β)) / (|P_v| + 1)
//! h'_v  = normalize(LeakyReLU(W_h c_v + b_h))
//! ```
//!
//! where `u` is the terminal node of `p` and the leading `h_v` is the
//! self-loop, which is never modulated.
//!
//! Training runs the stack on a [`BatchPlan`]: only the nodes whose outputs
//! feed the batch loss are computed at each layer.

use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{film_vectors, FilmInputs, FilmPlan, PathMembers, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::paths::{decay_weight, ContextSet, Path, PathSets};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub layers: usize,
    pub hidden_dim: usize,
    pub semantic_dim: usize,
    /// Input vector size when the graph has no features.
    pub entity_dim: usize,
    pub leaky_slope: f64,
    /// λ in the path decay `e^{-λ L}`.
    pub decay: f64,
    /// FiLM modulation of context messages; off means identity messages.
    pub personalization: bool,
    /// Pairwise link encoding; off means `s_xy = 0`.
    pub link_encoder: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            layers: 2,
            hidden_dim: 32,
            semantic_dim: 10,
            entity_dim: 200,
            leaky_slope: 0.01,
            decay: 0.1,
            personalization: true,
            link_encoder: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(Error::Config("model needs at least one layer".into()));
        }
        if self.hidden_dim == 0 || self.semantic_dim == 0 || self.entity_dim == 0 {
            return Err(Error::Config("embedding dimensions must be positive".into()));
        }
        if !(self.decay > 0.0 && self.decay.is_finite()) {
            return Err(Error::Config(format!("decay rate {} must be positive", self.decay)));
        }
        if !(0.0..1.0).contains(&self.leaky_slope) {
            return Err(Error::Config(format!(
                "leaky slope {} outside [0, 1)",
                self.leaky_slope
            )));
        }
        Ok(())
    }
}

/// Parameters of one layer. Weight matrices are stored output-major, so a
/// batch of row vectors `X` maps to `X Wᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    /// `d_s × d_in`
    pub w_s: Tensor,
    pub b_s: Tensor,
    /// `d_in × d_s`
    pub w_gamma: Tensor,
    pub b_gamma: Tensor,
    pub w_beta: Tensor,
    pub b_beta: Tensor,
    /// `d_out × d_in`
    pub w_h: Tensor,
    pub b_h: Tensor,
}

impl LayerParams {
    pub fn init<R: Rng + ?Sized>(d_in: usize, d_s: usize, d_out: usize, rng: &mut R) -> Self {
        LayerParams {
            w_s: Tensor::glorot(d_s, d_in, rng),
            b_s: Tensor::zeros(1, d_s),
            w_gamma: Tensor::glorot(d_in, d_s, rng),
            b_gamma: Tensor::zeros(1, d_in),
            w_beta: Tensor::glorot(d_in, d_s, rng),
            b_beta: Tensor::zeros(1, d_in),
            w_h: Tensor::glorot(d_out, d_in, rng),
            b_h: Tensor::zeros(1, d_out),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_s.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.w_h.rows()
    }

    pub fn semantic_dim(&self) -> usize {
        self.w_s.rows()
    }

    fn tensors(&self) -> [&Tensor; 8] {
        [
            &self.w_s,
            &self.b_s,
            &self.w_gamma,
            &self.b_gamma,
            &self.w_beta,
            &self.b_beta,
            &self.w_h,
            &self.b_h,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Tensor; 8] {
        [
            &mut self.w_s,
            &mut self.b_s,
            &mut self.w_gamma,
            &mut self.b_gamma,
            &mut self.w_beta,
            &mut self.b_beta,
            &mut self.w_h,
            &mut self.b_h,
        ]
    }

    /// Whether every FiLM generator weight and bias is zero.
    pub fn film_is_zero(&self) -> bool {
        [&self.w_gamma, &self.b_gamma, &self.w_beta, &self.b_beta]
            .iter()
            .all(|t| t.data().iter().all(|&x| x == 0.0))
    }
}

/// `s_ab = tanh(W s_b + U s_a + b)`; `W`, `U` are `d_h × d_s`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkParams {
    pub w: Tensor,
    pub u: Tensor,
    pub b: Tensor,
}

impl LinkParams {
    pub fn init<R: Rng + ?Sized>(d_h: usize, d_s: usize, rng: &mut R) -> Self {
        LinkParams {
            w: Tensor::glorot(d_h, d_s, rng),
            u: Tensor::glorot(d_h, d_s, rng),
            b: Tensor::zeros(1, d_h),
        }
    }
}

/// Where layer-0 embeddings come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputSpec {
    Features { dim: usize },
    /// A learnable row per node.
    Entities { nodes: usize },
}

impl InputSpec {
    pub fn for_graph(g: &Graph) -> Self {
        match g.feature_dim() {
            Some(dim) => InputSpec::Features { dim },
            None => InputSpec::Entities {
                nodes: g.node_count(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    /// `nodes × entity_dim`, present for featureless graphs.
    pub entity: Option<Tensor>,
    pub layers: Vec<LayerParams>,
    pub link: LinkParams,
}

impl ModelParams {
    /// Glorot-uniform weights, zero biases. Entity rows are uniform in
    /// `±√(3 / entity_dim)`.
    pub fn init<R: Rng + ?Sized>(config: &ModelConfig, input: InputSpec, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let (entity, d0) = match input {
            InputSpec::Features { dim } => {
                if dim == 0 {
                    return Err(Error::Config("feature dimension must be positive".into()));
                }
                (None, dim)
            }
            InputSpec::Entities { nodes } => {
                let d = config.entity_dim;
                let bound = (3.0 / d as f64).sqrt();
                let data = (0..nodes * d).map(|_| rng.random_range(-bound..=bound)).collect();
                (Some(Tensor::from_vec(nodes, d, data)?), d)
            }
        };
        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let d_in = if l == 0 { d0 } else { config.hidden_dim };
            layers.push(LayerParams::init(d_in, config.semantic_dim, config.hidden_dim, rng));
        }
        let link = LinkParams::init(config.hidden_dim, config.semantic_dim, rng);
        Ok(ModelParams {
            config: config.clone(),
            entity,
            layers,
            link,
        })
    }

    /// Every tensor in a fixed order: entity table, then each layer's eight
    /// tensors, then the link encoder.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out: Vec<&Tensor> = self.entity.iter().collect();
        for l in &self.layers {
            out.extend(l.tensors());
        }
        out.extend([&self.link.w, &self.link.u, &self.link.b]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = self.entity.iter_mut().collect();
        for l in &mut self.layers {
            out.extend(l.tensors_mut());
        }
        out.extend([&mut self.link.w, &mut self.link.u, &mut self.link.b]);
        out
    }

    /// Names aligned with [`ModelParams::tensors`].
    pub fn names(&self) -> Vec<String> {
        const LAYER: [&str; 8] = ["w_s", "b_s", "w_gamma", "b_gamma", "w_beta", "b_beta", "w_h", "b_h"];
        let mut out: Vec<String> = self.entity.iter().map(|_| "entity".to_string()).collect();
        for l in 0..self.layers.len() {
            out.extend(LAYER.iter().map(|n| format!("layer{}.{n}", l + 1)));
        }
        out.extend(["link.w", "link.u", "link.b"].map(String::from));
        out
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }

    /// Per tensor, whether an optimizer may update it under this config.
    pub fn trainable_mask(&self) -> Vec<bool> {
        let film = self.config.personalization;
        let link = self.config.link_encoder;
        let mut out: Vec<bool> = self.entity.iter().map(|_| true).collect();
        for _ in &self.layers {
            out.extend([true, true, film, film, film, film, true, true]);
        }
        out.extend([link, link, link]);
        out
    }

    /// Registers every tensor on `tape`, as parameters or as constants.
    pub fn to_tape(&self, tape: &mut Tape, trainable: bool) -> ParamVars {
        let mut put = |t: &Tensor| {
            if trainable {
                tape.param(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        let entity = self.entity.as_ref().map(&mut put);
        let layers = self
            .layers
            .iter()
            .map(|l| LayerVars {
                w_s: put(&l.w_s),
                b_s: put(&l.b_s),
                w_gamma: put(&l.w_gamma),
                b_gamma: put(&l.b_gamma),
                w_beta: put(&l.w_beta),
                b_beta: put(&l.b_beta),
                w_h: put(&l.w_h),
                b_h: put(&l.b_h),
            })
            .collect();
        let link = LinkVars {
            w: put(&self.link.w),
            u: put(&self.link.u),
            b: put(&self.link.b),
        };
        ParamVars { entity, layers, link }
    }

    /// Rebuilds tape handles from vars listed in [`ModelParams::tensors`]
    /// order, e.g. those issued by a gradient check.
    pub fn vars_from(&self, vars: &[Var]) -> Result<ParamVars> {
        let expected = self.tensors().len();
        if vars.len() != expected {
            return Err(Error::Contract(format!(
                "{} vars for {expected} parameter tensors",
                vars.len()
            )));
        }
        let mut it = vars.iter().copied();
        let entity = self.entity.as_ref().map(|_| it.next().unwrap());
        let layers = self
            .layers
            .iter()
            .map(|_| {
                let mut next = || it.next().unwrap();
                LayerVars {
                    w_s: next(),
                    b_s: next(),
                    w_gamma: next(),
                    b_gamma: next(),
                    w_beta: next(),
                    b_beta: next(),
                    w_h: next(),
                    b_h: next(),
                }
            })
            .collect();
        let mut next = || it.next().unwrap();
        let link = LinkVars {
            w: next(),
            u: next(),
            b: next(),
        };
        Ok(ParamVars { entity, layers, link })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LayerVars {
    pub w_s: Var,
    pub b_s: Var,
    pub w_gamma: Var,
    pub b_gamma: Var,
    pub w_beta: Var,
    pub b_beta: Var,
    pub w_h: Var,
    pub b_h: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct LinkVars {
    pub w: Var,
    pub u: Var,
    pub b: Var,
}

/// Tape handles mirroring [`ModelParams`].
#[derive(Debug, Clone)]
pub struct ParamVars {
    pub entity: Option<Var>,
    pub layers: Vec<LayerVars>,
    pub link: LinkVars,
}

impl ParamVars {
    /// Same order as [`ModelParams::tensors`].
    pub fn all(&self) -> Vec<Var> {
        let mut out: Vec<Var> = self.entity.iter().copied().collect();
        for l in &self.layers {
            out.extend([l.w_s, l.b_s, l.w_gamma, l.b_gamma, l.w_beta, l.b_beta, l.w_h, l.b_h]);
        }
        out.extend([self.link.w, self.link.u, self.link.b]);
        out
    }
}

struct LayerPlan {
    film: Rc<FilmPlan>,
    /// Rows of the previous level on each sampled path, in path order.
    members: Rc<PathMembers>,
}

/// Which nodes each layer computes, and how they aggregate.
///
/// `levels[ℓ]` holds the requested output nodes; `levels[l - 1]` adds every
/// node on a path of a node in `levels[l]`. All levels are sorted.
pub struct BatchPlan {
    levels: Vec<Vec<NodeId>>,
    layers: Vec<LayerPlan>,
}

impl BatchPlan {
    pub fn new(paths: &PathSets, outputs: &[NodeId], layers: usize, decay: f64) -> Result<Self> {
        if layers == 0 {
            return Err(Error::Config("model needs at least one layer".into()));
        }
        let n = paths.sets.len();
        let mut top: Vec<NodeId> = outputs.to_vec();
        top.sort_unstable();
        top.dedup();
        if let Some(&bad) = top.iter().find(|&&v| v >= n) {
            return Err(Error::Contract(format!("node {bad} has no context set")));
        }
        let max_len = paths
            .sets
            .iter()
            .flat_map(|s| s.paths.iter().map(Path::len))
            .max()
            .unwrap_or(0);
        let weight_of: Vec<f64> = (0..=max_len)
            .map(|len| {
                let p = if len == 0 {
                    Path::self_loop(0)
                } else {
                    Path::from_nodes(vec![0; len + 1]).expect("len ≥ 1")
                };
                decay_weight(&p, decay)
            })
            .collect::<Result<_>>()?;

        let mut levels = vec![top];
        let mut mark = vec![false; n];
        for _ in 0..layers {
            let upper = levels.last().unwrap();
            let mut lower = upper.clone();
            for &v in upper {
                mark[v] = true;
            }
            for &v in upper {
                for p in paths.get(v).sampled() {
                    for &u in p.nodes() {
                        if !mark[u] {
                            mark[u] = true;
                            lower.push(u);
                        }
                    }
                }
            }
            for &u in &lower {
                mark[u] = false;
            }
            lower.sort_unstable();
            levels.push(lower);
        }
        levels.reverse();

        let mut pos = vec![usize::MAX; n];
        let mut plans = Vec::with_capacity(layers);
        for l in 1..=layers {
            for (i, &v) in levels[l - 1].iter().enumerate() {
                pos[v] = i;
            }
            let mut film = FilmPlan::default();
            film.path_offsets.push(0);
            let mut members = Vec::new();
            let mut offsets = vec![0];
            for &v in &levels[l] {
                film.self_rows.push(pos[v]);
                for p in paths.get(v).sampled() {
                    film.context_rows.push(pos[p.context()]);
                    film.weights.push(weight_of[p.len()]);
                    members.extend(p.nodes().iter().map(|&u| pos[u]));
                    offsets.push(members.len());
                }
                film.path_offsets.push(film.context_rows.len());
            }
            plans.push(LayerPlan {
                film: Rc::new(film),
                members: Rc::new(PathMembers {
                    rows: members,
                    offsets,
                }),
            });
        }
        Ok(BatchPlan {
            levels,
            layers: plans,
        })
    }

    /// Plan for every node of the graph.
    pub fn full(paths: &PathSets, layers: usize, decay: f64) -> Result<Self> {
        let all: Vec<NodeId> = (0..paths.sets.len()).collect();
        Self::new(paths, &all, layers, decay)
    }

    pub fn inputs(&self) -> &[NodeId] {
        &self.levels[0]
    }

    pub fn outputs(&self) -> &[NodeId] {
        self.levels.last().unwrap()
    }

    /// Node ids computed at level `l` (0 = inputs).
    pub fn level(&self, l: usize) -> &[NodeId] {
        &self.levels[l]
    }

    /// Output row of node `v`.
    pub fn output_row(&self, v: NodeId) -> Option<usize> {
        self.outputs().binary_search(&v).ok()
    }

    /// Sampled (non-self-loop) paths aggregated across all layers.
    pub fn realized_paths(&self) -> usize {
        self.layers.iter().map(|p| p.film.num_paths()).sum()
    }
}

/// Tape outputs of a stacked forward pass, one row per planned output node.
pub struct ForwardVars {
    pub h: Var,
    pub s: Var,
    /// FiLM generator inputs per layer, empty without personalization.
    pub film: Vec<FilmInputs>,
}

/// Layer-0 embeddings for the plan's input nodes.
pub fn input_var(
    tape: &mut Tape,
    vars: &ParamVars,
    features: Option<&Tensor>,
    plan: &BatchPlan,
) -> Result<Var> {
    match (vars.entity, features) {
        (Some(e), _) => tape.gather_rows(e, Rc::new(plan.inputs().to_vec())),
        (None, Some(f)) => Ok(tape.constant(f.gather_rows(plan.inputs()))),
        (None, None) => Err(Error::Contract(
            "featureless graph needs an entity table".into(),
        )),
    }
}

/// Runs every layer of the plan on the tape.
pub fn forward_vars(
    tape: &mut Tape,
    config: &ModelConfig,
    vars: &ParamVars,
    input: Var,
    plan: &BatchPlan,
) -> Result<ForwardVars> {
    if vars.layers.len() != plan.layers.len() {
        return Err(Error::Contract(format!(
            "{} parameter layers for a {}-layer plan",
            vars.layers.len(),
            plan.layers.len()
        )));
    }
    let slope = config.leaky_slope;
    let mut h = input;
    let mut s = input;
    let mut film = Vec::new();
    for (lv, lp) in vars.layers.iter().zip(&plan.layers) {
        let pre_s = tape.matmul_t(h, lv.w_s)?;
        let pre_s = tape.add(pre_s, lv.b_s)?;
        let s_all = tape.leaky_relu(pre_s, slope);
        let inputs = if config.personalization {
            let f = FilmInputs {
                g_gamma: tape.matmul_t(s_all, lv.w_gamma)?,
                b_gamma: lv.b_gamma,
                g_beta: tape.matmul_t(s_all, lv.w_beta)?,
                b_beta: lv.b_beta,
                members: lp.members.clone(),
            };
            film.push(f.clone());
            Some(f)
        } else {
            None
        };
        let c = tape.film_aggregate(h, inputs, lp.film.clone(), slope)?;
        let pre_h = tape.matmul_t(c, lv.w_h)?;
        let pre_h = tape.add(pre_h, lv.b_h)?;
        let act = tape.leaky_relu(pre_h, slope);
        // Targets are the self rows of the plan, in output order.
        s = tape.gather_rows(s_all, Rc::new(lp.film.self_rows.clone()))?;
        h = tape.l2_normalize(act);
    }
    Ok(ForwardVars { h, s, film })
}

/// Final-layer embeddings, rows indexed by node id.
#[derive(Debug, Clone, PartialEq)]
pub struct Embeddings {
    pub h: Tensor,
    pub s: Tensor,
}

/// Forward pass over every node without recording gradients.
pub fn embed_all(params: &ModelParams, g: &Graph, paths: &PathSets, parallel: bool) -> Result<Embeddings> {
    if paths.sets.len() != g.node_count() {
        return Err(Error::Contract(format!(
            "{} context sets for {} nodes",
            paths.sets.len(),
            g.node_count()
        )));
    }
    let plan = BatchPlan::full(paths, params.config.layers, params.config.decay)?;
    let mut tape = Tape::new().with_parallel(parallel);
    let vars = params.to_tape(&mut tape, false);
    let input = input_var(&mut tape, &vars, g.features(), &plan)?;
    let out = forward_vars(&mut tape, &params.config, &vars, input, &plan)?;
    let emb = Embeddings {
        h: tape.value(out.h).clone(),
        s: tape.value(out.s).clone(),
    };
    if !emb.h.is_finite() || !emb.s.is_finite() {
        return Err(Error::NonFinite("embeddings".into()));
    }
    Ok(emb)
}

/// Output of one layer over all nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerState {
    pub h: Tensor,
    pub s: Tensor,
}

/// One layer over every node of `paths`, given all previous-layer rows.
pub fn layer_forward(
    h_prev: &Tensor,
    paths: &PathSets,
    layer: &LayerParams,
    config: &ModelConfig,
) -> Result<LayerState> {
    if h_prev.rows() != paths.sets.len() {
        return Err(Error::dim(
            "layer_forward",
            format!("{} rows for {} context sets", h_prev.rows(), paths.sets.len()),
        ));
    }
    let plan = BatchPlan::full(paths, 1, config.decay)?;
    let mut tape = Tape::new();
    let lv = LayerVars {
        w_s: tape.constant(layer.w_s.clone()),
        b_s: tape.constant(layer.b_s.clone()),
        w_gamma: tape.constant(layer.w_gamma.clone()),
        b_gamma: tape.constant(layer.b_gamma.clone()),
        w_beta: tape.constant(layer.w_beta.clone()),
        b_beta: tape.constant(layer.b_beta.clone()),
        w_h: tape.constant(layer.w_h.clone()),
        b_h: tape.constant(layer.b_h.clone()),
    };
    let zero = tape.constant(Tensor::zeros(1, 1));
    let vars = ParamVars {
        entity: None,
        layers: vec![lv],
        link: LinkVars {
            w: zero,
            u: zero,
            b: zero,
        },
    };
    let input = tape.constant(h_prev.clone());
    let out = forward_vars(&mut tape, config, &vars, input, &plan)?;
    Ok(LayerState {
        h: tape.value(out.h).clone(),
        s: tape.value(out.s).clone(),
    })
}

/// `LeakyReLU(H W_sᵀ + b_s)`, row by row.
pub fn semantic_encode(h_prev: &Tensor, layer: &LayerParams, slope: f64) -> Result<Tensor> {
    if h_prev.cols() != layer.input_dim() {
        return Err(Error::dim(
            "semantic_encode",
            format!("{} columns, layer expects {}", h_prev.cols(), layer.input_dim()),
        ));
    }
    let mut s = h_prev.matmul_t(&layer.w_s)?;
    for r in 0..s.rows() {
        for (x, b) in s.row_slice_mut(r).iter_mut().zip(layer.b_s.data()) {
            *x = crate::autodiff::leaky(*x + b, slope);
        }
    }
    Ok(s)
}

/// Mean of the semantic rows of every node on `p`.
pub fn path_encode(p: &Path, s: &Tensor) -> Vec<f64> {
    let mut out = vec![0.0; s.cols()];
    for &v in p.nodes() {
        for (o, x) in out.iter_mut().zip(s.row_slice(v)) {
            *o += x;
        }
    }
    let k = p.nodes().len() as f64;
    out.iter_mut().for_each(|o| *o /= k);
    out
}

/// `(γ + 1) ⊙ h_u + β` for one path.
pub fn film_modulate(h_u: &[f64], s_p: &[f64], layer: &LayerParams, slope: f64) -> Result<Vec<f64>> {
    let (gamma, beta) = film_vectors(
        &Tensor::row(s_p),
        &layer.w_gamma,
        &layer.b_gamma,
        &layer.w_beta,
        &layer.b_beta,
        slope,
    )?;
    if gamma.cols() != h_u.len() {
        return Err(Error::dim(
            "film_modulate",
            format!("message of {} entries, generators give {}", h_u.len(), gamma.cols()),
        ));
    }
    Ok(h_u
        .iter()
        .zip(gamma.data().iter().zip(beta.data()))
        .map(|(h, (g, b))| (g + 1.0) * h + b)
        .collect())
}

/// Decay-weighted mean of one message per path of `ctx`, self-loop first.
pub fn aggregate_contexts(ctx: &ContextSet, messages: &[Vec<f64>], decay: f64) -> Result<Vec<f64>> {
    if messages.len() != ctx.paths.len() || messages.is_empty() {
        return Err(Error::Contract(format!(
            "{} messages for {} paths",
            messages.len(),
            ctx.paths.len()
        )));
    }
    let d = messages[0].len();
    let mut out = vec![0.0; d];
    for (p, m) in ctx.paths.iter().zip(messages) {
        if m.len() != d {
            return Err(Error::dim("aggregate_contexts", "messages differ in length"));
        }
        let w = decay_weight(p, decay)?;
        for (o, x) in out.iter_mut().zip(m) {
            *o += w * x;
        }
    }
    let k = messages.len() as f64;
    out.iter_mut().for_each(|o| *o /= k);
    Ok(out)
}
