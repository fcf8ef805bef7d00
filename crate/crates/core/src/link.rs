//! Pairwise link encoding, translational scoring and the training loss.
//!
//! A candidate link `(x, y)` has distance `d(x, y) = ‖h_x + s_xy − h_y‖₂`,
//! where `s_xy = tanh(W s_y + U s_x + b)` is built from the last layer's
//! semantic embeddings. The score is `−d`.

use std::rc::Rc;

use crate::autodiff::{norm, FilmInputs, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::graph::Triplet;
use crate::model::{BatchPlan, Embeddings, ForwardVars, LinkParams, LinkVars};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    /// Hinge margin α.
    pub margin: f64,
    /// Weight μ of the FiLM norm penalty.
    pub film_weight: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            margin: 0.2,
            film_weight: 1e-4,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return Err(Error::Config(format!("margin {} must be positive", self.margin)));
        }
        if !(self.film_weight >= 0.0 && self.film_weight.is_finite()) {
            return Err(Error::Config(format!(
                "FiLM weight {} must be nonnegative",
                self.film_weight
            )));
        }
        Ok(())
    }
}

/// `tanh(W s_b + U s_a + b)`.
pub fn encode_link(s_a: &[f64], s_b: &[f64], p: &LinkParams) -> Vec<f64> {
    let (w, u) = (&p.w, &p.u);
    (0..w.rows())
        .map(|i| {
            let wb: f64 = w.row_slice(i).iter().zip(s_b).map(|(x, y)| x * y).sum();
            let ua: f64 = u.row_slice(i).iter().zip(s_a).map(|(x, y)| x * y).sum();
            (wb + ua + p.b.data()[i]).tanh()
        })
        .collect()
}

/// `‖h_x + s_xy − h_y‖₂`.
pub fn distance(h_x: &[f64], h_y: &[f64], s_xy: &[f64]) -> f64 {
    h_x.iter()
        .zip(h_y)
        .zip(s_xy)
        .map(|((a, b), s)| {
            let d = a + s - b;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// `−d(x, y)`; never positive.
pub fn score(h_x: &[f64], h_y: &[f64], s_xy: &[f64]) -> f64 {
    -distance(h_x, h_y, s_xy)
}

/// Scores `(x, y)` from final embeddings, with or without the encoder.
pub fn score_pair(emb: &Embeddings, link: Option<&LinkParams>, x: usize, y: usize) -> f64 {
    let (hx, hy) = (emb.h.row_slice(x), emb.h.row_slice(y));
    match link {
        Some(p) => score(hx, hy, &encode_link(emb.s.row_slice(x), emb.s.row_slice(y), p)),
        None => score(hx, hy, &vec![0.0; hx.len()]),
    }
}

/// Mean hinge `max(d(a,b) − d(a,c) + α, 0)` over `triplets`.
pub fn task_loss(
    triplets: &[Triplet],
    emb: &Embeddings,
    link: Option<&LinkParams>,
    margin: f64,
) -> Result<f64> {
    if triplets.is_empty() {
        return Err(Error::Contract("task loss over no triplets".into()));
    }
    let total: f64 = triplets
        .iter()
        .map(|t| {
            let pos = -score_pair(emb, link, t.a, t.b);
            let neg = -score_pair(emb, link, t.a, t.c);
            (pos - neg + margin).max(0.0)
        })
        .sum();
    Ok(total / triplets.len() as f64)
}

/// `Σ_p (‖γ_p‖₂ + ‖β_p‖₂)` over rows of the scaling and shifting matrices.
pub fn film_reg(gamma: &Tensor, beta: &Tensor) -> f64 {
    (0..gamma.rows())
        .map(|p| norm(gamma.row_slice(p)) + norm(beta.row_slice(p)))
        .sum()
}

/// `task + μ · film`.
pub fn total_loss(task: f64, film: f64, mu: f64) -> f64 {
    task + mu * film
}

/// Loss terms on a tape.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub task: Var,
    /// `None` when personalization is off.
    pub film: Option<Var>,
    pub total: Var,
}

/// Builds the batch loss from a forward pass over `plan`, whose outputs must
/// include every triplet node.
pub fn batch_loss(
    tape: &mut Tape,
    fwd: &ForwardVars,
    plan: &BatchPlan,
    link: Option<LinkVars>,
    triplets: &[Triplet],
    loss: &LossConfig,
    slope: f64,
) -> Result<LossVars> {
    if triplets.is_empty() {
        return Err(Error::Contract("task loss over no triplets".into()));
    }
    let row = |v: usize| {
        plan.output_row(v)
            .ok_or_else(|| Error::Contract(format!("node {v} missing from the batch plan")))
    };
    let mut ia = Vec::with_capacity(triplets.len());
    let mut ib = Vec::with_capacity(triplets.len());
    let mut ic = Vec::with_capacity(triplets.len());
    for t in triplets {
        ia.push(row(t.a)?);
        ib.push(row(t.b)?);
        ic.push(row(t.c)?);
    }
    let (ia, ib, ic) = (Rc::new(ia), Rc::new(ib), Rc::new(ic));
    let ha = tape.gather_rows(fwd.h, ia.clone())?;
    let hb = tape.gather_rows(fwd.h, ib.clone())?;
    let hc = tape.gather_rows(fwd.h, ic.clone())?;

    let (tb, tc) = match link {
        Some(lv) => {
            let sa = tape.gather_rows(fwd.s, ia)?;
            let sb = tape.gather_rows(fwd.s, ib)?;
            let sc = tape.gather_rows(fwd.s, ic)?;
            let ua = tape.matmul_t(sa, lv.u)?;
            let enc = |tape: &mut Tape, sy: Var| -> Result<Var> {
                let wy = tape.matmul_t(sy, lv.w)?;
                let pre = tape.add(wy, ua)?;
                let pre = tape.add(pre, lv.b)?;
                Ok(tape.tanh(pre))
            };
            let s_ab = enc(tape, sb)?;
            let s_ac = enc(tape, sc)?;
            (tape.add(ha, s_ab)?, tape.add(ha, s_ac)?)
        }
        None => (ha, ha),
    };
    let diff_b = tape.sub(tb, hb)?;
    let diff_c = tape.sub(tc, hc)?;
    let d_ab = tape.l2_norm(diff_b);
    let d_ac = tape.l2_norm(diff_c);
    let gap = tape.sub(d_ab, d_ac)?;
    let margin = tape.constant(Tensor::full(triplets.len(), 1, loss.margin));
    let pre = tape.add(gap, margin)?;
    let hinge = tape.max_with_zero(pre);
    let sum = tape.sum(hinge);
    let task = tape.scale(sum, 1.0 / triplets.len() as f64);

    let film = film_penalty(tape, &fwd.film, slope)?;
    let total = match film {
        Some(f) => {
            let weighted = tape.scale(f, loss.film_weight);
            tape.add(task, weighted)?
        }
        None => task,
    };
    Ok(LossVars { task, film, total })
}

/// Summed FiLM norms over every layer's realized paths.
pub fn film_penalty(tape: &mut Tape, film: &[FilmInputs], slope: f64) -> Result<Option<Var>> {
    let mut acc: Option<Var> = None;
    for f in film {
        let term = tape.film_norm_sum(f.clone(), slope)?;
        acc = Some(match acc {
            Some(a) => tape.add(a, term)?,
            None => term,
        });
    }
    Ok(acc)
}
