//! Fused path-level operations: FiLM modulation of context messages followed
//! by decay-weighted mean aggregation, and the summed norms of the FiLM
//! vectors.
//!
//! The generators are affine in the path semantic embedding, and that
//! embedding is a mean of node rows, so `W s_p = mean_{u ∈ p} (W s_u)`. The
//! fused ops therefore take node-level products `G = S Wᵀ` and average the
//! rows of each path on the fly, costing `O(|p| d_h)` per path instead of
//! `O(d_s d_h)`.

use std::rc::Rc;

use rayon::prelude::*;

use super::{leaky, leaky_grad, norm, Op, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Aggregation structure for one layer.
///
/// Target `t` aggregates its own previous-layer row `self_rows[t]` with
/// weight 1 plus one message per path in
/// `path_offsets[t]..path_offsets[t + 1]`; path `p` carries the previous-layer
/// row `context_rows[p]`, weighted by `weights[p]`. The result is divided by
/// the number of paths including the self-loop.
#[derive(Debug, Clone, Default)]
pub struct FilmPlan {
    pub self_rows: Vec<usize>,
    pub path_offsets: Vec<usize>,
    pub context_rows: Vec<usize>,
    pub weights: Vec<f64>,
}

impl FilmPlan {
    pub fn num_targets(&self) -> usize {
        self.self_rows.len()
    }

    pub fn num_paths(&self) -> usize {
        self.context_rows.len()
    }

    fn validate(&self, prev_rows: usize) -> Result<()> {
        let t = self.self_rows.len();
        if self.path_offsets.len() != t + 1
            || self.path_offsets.first() != Some(&0)
            || *self.path_offsets.last().unwrap() != self.context_rows.len()
            || self.weights.len() != self.context_rows.len()
            || self.path_offsets.windows(2).any(|w| w[0] > w[1])
        {
            return Err(Error::dim("film_aggregate", "inconsistent aggregation plan"));
        }
        if let Some(&bad) = self
            .self_rows
            .iter()
            .chain(&self.context_rows)
            .find(|&&r| r >= prev_rows)
        {
            return Err(Error::dim(
                "film_aggregate",
                format!("row {bad} out of range for {prev_rows} rows"),
            ));
        }
        Ok(())
    }
}

/// Node rows on each path: path `p` is `rows[offsets[p]..offsets[p + 1]]`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PathMembers {
    pub rows: Vec<usize>,
    pub offsets: Vec<usize>,
}

impl PathMembers {
    pub fn num_paths(&self) -> usize {
        self.offsets.len().saturating_sub(1)
    }

    pub fn path(&self, p: usize) -> &[usize] {
        &self.rows[self.offsets[p]..self.offsets[p + 1]]
    }

    fn validate(&self, node_rows: usize) -> Result<()> {
        if self.offsets.first() != Some(&0)
            || *self.offsets.last().unwrap() != self.rows.len()
            || self.offsets.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(Error::dim("film", "every path needs at least one member"));
        }
        if let Some(&bad) = self.rows.iter().find(|&&r| r >= node_rows) {
            return Err(Error::dim(
                "film",
                format!("member row {bad} out of range for {node_rows} rows"),
            ));
        }
        Ok(())
    }
}

/// Tape handles for the FiLM generators of one layer.
///
/// `g_gamma` is `S W_γᵀ` over the previous level's nodes (`rows × d_h`), so
/// path `p` gets `γ_p = LeakyReLU(mean_{r ∈ p} g_gamma[r] + b_γ)`; likewise
/// for β.
#[derive(Debug, Clone)]
pub struct FilmInputs {
    pub g_gamma: Var,
    /// `1 × d_h`.
    pub b_gamma: Var,
    pub g_beta: Var,
    pub b_beta: Var,
    pub members: Rc<PathMembers>,
}

#[derive(Debug, Clone)]
pub(super) struct FilmAggregate {
    h_prev: Var,
    film: Option<FilmInputs>,
    plan: Rc<FilmPlan>,
    slope: f64,
}

#[derive(Debug, Clone)]
pub(super) struct FilmNormSum {
    film: FilmInputs,
    slope: f64,
}

struct Generators<'a> {
    gg: &'a Tensor,
    bg: &'a [f64],
    gb: &'a Tensor,
    bb: &'a [f64],
    members: &'a PathMembers,
    slope: f64,
}

impl Generators<'_> {
    fn resolve<'t>(tape: &'t Tape, f: &'t FilmInputs, slope: f64) -> Generators<'t> {
        Generators {
            gg: tape.value(f.g_gamma),
            bg: tape.value(f.b_gamma).data(),
            gb: tape.value(f.g_beta),
            bb: tape.value(f.b_beta).data(),
            members: &f.members,
            slope,
        }
    }

    fn d(&self) -> usize {
        self.gg.cols()
    }

    /// Pre-activations of the scaling and shifting vectors for path `p`.
    fn pre(&self, p: usize, pre_g: &mut [f64], pre_b: &mut [f64]) {
        let rows = self.members.path(p);
        pre_g.fill(0.0);
        pre_b.fill(0.0);
        for &r in rows {
            for (o, x) in pre_g.iter_mut().zip(self.gg.row_slice(r)) {
                *o += x;
            }
            for (o, x) in pre_b.iter_mut().zip(self.gb.row_slice(r)) {
                *o += x;
            }
        }
        let inv = 1.0 / rows.len() as f64;
        for i in 0..pre_g.len() {
            pre_g[i] = pre_g[i] * inv + self.bg[i];
            pre_b[i] = pre_b[i] * inv + self.bb[i];
        }
    }

    fn check(&self, d_h: usize) -> Result<()> {
        for (name, g) in [("g_gamma", self.gg), ("g_beta", self.gb)] {
            if g.cols() != d_h {
                return Err(Error::dim(
                    "film",
                    format!("{name} has {} columns, expected {d_h}", g.cols()),
                ));
            }
        }
        if self.gg.rows() != self.gb.rows() {
            return Err(Error::dim("film", "g_gamma and g_beta differ in rows"));
        }
        if self.bg.len() != d_h || self.bb.len() != d_h {
            return Err(Error::dim("film", format!("biases must have {d_h} entries")));
        }
        self.members.validate(self.gg.rows())
    }
}

/// Plain evaluation of the scaling and shifting vectors for every row of
/// `s_paths`: `γ = LeakyReLU(W_γ s + b_γ)`, `β = LeakyReLU(W_β s + b_β)`.
pub fn film_vectors(
    s_paths: &Tensor,
    w_gamma: &Tensor,
    b_gamma: &Tensor,
    w_beta: &Tensor,
    b_beta: &Tensor,
    slope: f64,
) -> Result<(Tensor, Tensor)> {
    let d = w_gamma.rows();
    let ds = s_paths.cols();
    for (name, w) in [("w_gamma", w_gamma), ("w_beta", w_beta)] {
        if w.shape() != [d, ds] {
            return Err(Error::dim(
                "film",
                format!("{name} is {}x{}, expected {d}x{ds}", w.rows(), w.cols()),
            ));
        }
    }
    if b_gamma.len() != d || b_beta.len() != d {
        return Err(Error::dim("film", format!("biases must have {d} entries")));
    }
    let mut gamma = Tensor::zeros(s_paths.rows(), d);
    let mut beta = Tensor::zeros(s_paths.rows(), d);
    for p in 0..s_paths.rows() {
        let sp = s_paths.row_slice(p);
        for i in 0..d {
            let pg = super::dot(w_gamma.row_slice(i), sp) + b_gamma.data()[i];
            let pb = super::dot(w_beta.row_slice(i), sp) + b_beta.data()[i];
            gamma.set(p, i, leaky(pg, slope));
            beta.set(p, i, leaky(pb, slope));
        }
    }
    Ok((gamma, beta))
}

fn aggregate_row(
    t: usize,
    plan: &FilmPlan,
    h: &Tensor,
    gen: Option<&Generators<'_>>,
    out: &mut [f64],
    scratch: &mut (Vec<f64>, Vec<f64>),
) {
    let d = out.len();
    out.copy_from_slice(h.row_slice(plan.self_rows[t]));
    let (lo, hi) = (plan.path_offsets[t], plan.path_offsets[t + 1]);
    for p in lo..hi {
        let w = plan.weights[p];
        let hu = h.row_slice(plan.context_rows[p]);
        match gen {
            Some(gen) => {
                let (pg, pb) = scratch;
                gen.pre(p, pg, pb);
                for i in 0..d {
                    let gamma = leaky(pg[i], gen.slope);
                    let beta = leaky(pb[i], gen.slope);
                    out[i] += w * ((gamma + 1.0) * hu[i] + beta);
                }
            }
            None => {
                for i in 0..d {
                    out[i] += w * hu[i];
                }
            }
        }
    }
    let inv = 1.0 / (hi - lo + 1) as f64;
    out.iter_mut().for_each(|x| *x *= inv);
}

impl Tape {
    /// Personalized, decay-weighted context aggregation for every target of
    /// `plan`. With `film = None` messages pass through unmodulated
    /// (`γ = β = 0`).
    pub fn film_aggregate(
        &mut self,
        h_prev: Var,
        film: Option<FilmInputs>,
        plan: Rc<FilmPlan>,
        slope: f64,
    ) -> Result<Var> {
        let h = self.value(h_prev);
        plan.validate(h.rows())?;
        let d = h.cols();
        let gen = film.as_ref().map(|f| Generators::resolve(self, f, slope));
        if let Some(g) = &gen {
            g.check(d)?;
            if g.members.num_paths() != plan.num_paths() {
                return Err(Error::dim(
                    "film_aggregate",
                    format!(
                        "{} member lists for {} paths",
                        g.members.num_paths(),
                        plan.num_paths()
                    ),
                ));
            }
        }
        let mut out = Tensor::zeros(plan.num_targets(), d);
        if d > 0 {
            let plan_ref: &FilmPlan = &plan;
            if self.parallel {
                out.data_mut().par_chunks_mut(d).enumerate().for_each_init(
                    || (vec![0.0; d], vec![0.0; d]),
                    |scratch, (t, row)| aggregate_row(t, plan_ref, h, gen.as_ref(), row, scratch),
                );
            } else {
                let mut scratch = (vec![0.0; d], vec![0.0; d]);
                for t in 0..plan.num_targets() {
                    aggregate_row(t, plan_ref, h, gen.as_ref(), out.row_slice_mut(t), &mut scratch);
                }
            }
        }
        let mut parents = vec![h_prev];
        if let Some(f) = &film {
            parents.extend([f.g_gamma, f.b_gamma, f.g_beta, f.b_beta]);
        }
        let op = FilmAggregate {
            h_prev,
            film,
            plan,
            slope,
        };
        Ok(self.push_op(out, Op::FilmAggregate(op), &parents))
    }

    /// `(‖γ_p‖₂, ‖β_p‖₂)` for every path of `film`, without recording.
    pub fn film_path_norms(&self, film: &FilmInputs, slope: f64) -> Result<Vec<(f64, f64)>> {
        let gen = Generators::resolve(self, film, slope);
        gen.check(gen.d())?;
        let per_path = |p: usize| {
            let d = gen.d();
            let (mut pg, mut pb) = (vec![0.0; d], vec![0.0; d]);
            gen.pre(p, &mut pg, &mut pb);
            pg.iter_mut().for_each(|x| *x = leaky(*x, slope));
            pb.iter_mut().for_each(|x| *x = leaky(*x, slope));
            (norm(&pg), norm(&pb))
        };
        let n = gen.members.num_paths();
        Ok(if self.parallel {
            (0..n).into_par_iter().map(per_path).collect()
        } else {
            (0..n).map(per_path).collect()
        })
    }

    /// `Σ_p (‖γ_p‖₂ + ‖β_p‖₂)` over every path of `film`.
    pub fn film_norm_sum(&mut self, film: FilmInputs, slope: f64) -> Result<Var> {
        let total = self
            .film_path_norms(&film, slope)?
            .iter()
            .map(|(g, b)| g + b)
            .sum();
        let parents = [film.g_gamma, film.b_gamma, film.g_beta, film.b_beta];
        Ok(self.push_op(
            Tensor::scalar(total),
            Op::FilmNormSum(FilmNormSum { film, slope }),
            &parents,
        ))
    }
}

struct FilmGrads {
    gg: Tensor,
    bg: Tensor,
    gb: Tensor,
    bb: Tensor,
}

impl FilmGrads {
    fn new(gen: &Generators<'_>) -> Self {
        let d = gen.d();
        FilmGrads {
            gg: Tensor::zeros(gen.gg.rows(), d),
            bg: Tensor::zeros(1, d),
            gb: Tensor::zeros(gen.gb.rows(), d),
            bb: Tensor::zeros(1, d),
        }
    }

    /// Accumulates gradients given `∂/∂pre_γ` and `∂/∂pre_β` for path `p`.
    fn push(&mut self, gen: &Generators<'_>, p: usize, dpre_g: &[f64], dpre_b: &[f64]) {
        let rows = gen.members.path(p);
        let inv = 1.0 / rows.len() as f64;
        for &r in rows {
            for (o, x) in self.gg.row_slice_mut(r).iter_mut().zip(dpre_g) {
                *o += x * inv;
            }
            for (o, x) in self.gb.row_slice_mut(r).iter_mut().zip(dpre_b) {
                *o += x * inv;
            }
        }
        for (o, x) in self.bg.data_mut().iter_mut().zip(dpre_g) {
            *o += x;
        }
        for (o, x) in self.bb.data_mut().iter_mut().zip(dpre_b) {
            *o += x;
        }
    }

    fn into_parts(self, f: &FilmInputs, out: &mut Vec<(Var, Tensor)>) {
        out.push((f.g_gamma, self.gg));
        out.push((f.b_gamma, self.bg));
        out.push((f.g_beta, self.gb));
        out.push((f.b_beta, self.bb));
    }
}

impl FilmAggregate {
    pub(super) fn backward(&self, tape: &Tape, g: &Tensor) -> Result<Vec<(Var, Tensor)>> {
        let h = tape.value(self.h_prev);
        let d = h.cols();
        let plan = &self.plan;
        let gen = self
            .film
            .as_ref()
            .map(|f| Generators::resolve(tape, f, self.slope));
        let mut dh = Tensor::zeros(h.rows(), d);
        let mut fg = gen.as_ref().map(FilmGrads::new);
        let (mut pg, mut pb) = (vec![0.0; d], vec![0.0; d]);
        let (mut dpg, mut dpb) = (vec![0.0; d], vec![0.0; d]);
        let mut gt = vec![0.0; d];
        for t in 0..plan.num_targets() {
            let (lo, hi) = (plan.path_offsets[t], plan.path_offsets[t + 1]);
            let inv = 1.0 / (hi - lo + 1) as f64;
            for (o, x) in gt.iter_mut().zip(g.row_slice(t)) {
                *o = x * inv;
            }
            for (o, x) in dh.row_slice_mut(plan.self_rows[t]).iter_mut().zip(&gt) {
                *o += x;
            }
            for p in lo..hi {
                let w = plan.weights[p];
                let u = plan.context_rows[p];
                match (&gen, &mut fg) {
                    (Some(gen), Some(fg)) => {
                        gen.pre(p, &mut pg, &mut pb);
                        let hu = h.row_slice(u);
                        for i in 0..d {
                            let dm = w * gt[i];
                            dpg[i] = dm * hu[i] * leaky_grad(pg[i], self.slope);
                            dpb[i] = dm * leaky_grad(pb[i], self.slope);
                        }
                        let dhu = dh.row_slice_mut(u);
                        for i in 0..d {
                            let gamma = leaky(pg[i], self.slope);
                            dhu[i] += w * gt[i] * (gamma + 1.0);
                        }
                        fg.push(gen, p, &dpg, &dpb);
                    }
                    _ => {
                        for (o, x) in dh.row_slice_mut(u).iter_mut().zip(&gt) {
                            *o += w * x;
                        }
                    }
                }
            }
        }
        let mut out = vec![(self.h_prev, dh)];
        if let (Some(f), Some(fg)) = (&self.film, fg) {
            fg.into_parts(f, &mut out);
        }
        Ok(out)
    }
}

impl FilmNormSum {
    pub(super) fn backward(&self, tape: &Tape, g: f64) -> Vec<(Var, Tensor)> {
        let gen = Generators::resolve(tape, &self.film, self.slope);
        let d = gen.d();
        let mut fg = FilmGrads::new(&gen);
        let (mut pg, mut pb) = (vec![0.0; d], vec![0.0; d]);
        let (mut vg, mut vb) = (vec![0.0; d], vec![0.0; d]);
        let (mut dpg, mut dpb) = (vec![0.0; d], vec![0.0; d]);
        for p in 0..gen.members.num_paths() {
            gen.pre(p, &mut pg, &mut pb);
            for i in 0..d {
                vg[i] = leaky(pg[i], self.slope);
                vb[i] = leaky(pb[i], self.slope);
            }
            let (ng, nb) = (norm(&vg), norm(&vb));
            for i in 0..d {
                // Subgradient zero at the origin.
                dpg[i] = if ng > 0.0 {
                    g * vg[i] / ng * leaky_grad(pg[i], self.slope)
                } else {
                    0.0
                };
                dpb[i] = if nb > 0.0 {
                    g * vb[i] / nb * leaky_grad(pb[i], self.slope)
                } else {
                    0.0
                };
            }
            fg.push(&gen, p, &dpg, &dpb);
        }
        let mut out = Vec::with_capacity(4);
        fg.into_parts(&self.film, &mut out);
        out
    }
}
