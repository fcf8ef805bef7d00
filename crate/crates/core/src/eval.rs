//! Ranking evaluation, the node-type probe and ablation variants.
//!
//! Each held-out link `(a, b)` becomes a query with nine negatives that are
//! not linked to `a`. With one relevant candidate, average precision is
//! `1 / rank` and NDCG is `1 / log₂(rank + 1)`.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::graph::{Edge, Graph, NodeId, TypeLabels};
use crate::link::score_pair;
use crate::model::{Embeddings, LinkParams, ModelConfig};
use crate::rng;

pub const NEGATIVES_PER_QUERY: usize = 9;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalQuery {
    pub anchor: NodeId,
    pub truth: NodeId,
    pub negatives: Vec<NodeId>,
}

impl EvalQuery {
    /// The true node followed by the negatives.
    pub fn candidates(&self) -> Vec<NodeId> {
        let mut c = Vec::with_capacity(1 + self.negatives.len());
        c.push(self.truth);
        c.extend_from_slice(&self.negatives);
        c
    }
}

/// One query per edge; query `i` draws from stream `(seed, "queries", i)`.
pub fn build_queries(full: &Graph, edges: &[Edge], seed: u64) -> Result<Vec<EvalQuery>> {
    if edges.is_empty() {
        return Err(Error::Contract("no held-out edges to build queries from".into()));
    }
    let n = full.node_count();
    edges
        .iter()
        .enumerate()
        .map(|(i, &(a, b))| {
            let eligible = |c: NodeId| c != a && c != b && !full.has_link(a, c);
            let available = n - 1 - full.degree(a) - usize::from(!full.has_link(a, b) && a != b);
            if available < NEGATIVES_PER_QUERY {
                return Err(Error::Data(format!(
                    "anchor {a} has only {available} eligible negatives, needs {NEGATIVES_PER_QUERY}"
                )));
            }
            let mut r = rng::stream(seed, "queries", i as u64);
            let mut negatives = Vec::with_capacity(NEGATIVES_PER_QUERY);
            let mut draws = 0;
            while negatives.len() < NEGATIVES_PER_QUERY && draws < 1000 {
                draws += 1;
                let c = r.random_range(0..n);
                if eligible(c) && !negatives.contains(&c) {
                    negatives.push(c);
                }
            }
            if negatives.len() < NEGATIVES_PER_QUERY {
                // Dense neighborhoods: choose among the enumerated remainder.
                let mut rest: Vec<NodeId> =
                    (0..n).filter(|&c| eligible(c) && !negatives.contains(&c)).collect();
                rest.shuffle(&mut r);
                negatives.extend(rest.into_iter().take(NEGATIVES_PER_QUERY - negatives.len()));
            }
            Ok(EvalQuery {
                anchor: a,
                truth: b,
                negatives,
            })
        })
        .collect()
}

/// 1-based rank of the first candidate. Equal scores rank the smaller node
/// id first.
pub fn rank_of_true(candidates: &[NodeId], scores: &[f64]) -> Result<usize> {
    if candidates.len() != scores.len() || candidates.is_empty() {
        return Err(Error::Contract(format!(
            "{} candidates, {} scores",
            candidates.len(),
            scores.len()
        )));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::NonFinite(format!(
            "score of candidate {} is {}",
            candidates[i], scores[i]
        )));
    }
    let (b, sb) = (candidates[0], scores[0]);
    let better = candidates[1..]
        .iter()
        .zip(&scores[1..])
        .filter(|&(&c, &s)| s > sb || (s == sb && c < b))
        .count();
    Ok(1 + better)
}

/// Mean of `1 / rank`.
pub fn map_metric(ranks: &[usize]) -> Result<f64> {
    mean_of(ranks, |r| 1.0 / r as f64)
}

/// Mean of `1 / log₂(rank + 1)`.
pub fn ndcg_metric(ranks: &[usize]) -> Result<f64> {
    mean_of(ranks, |r| 1.0 / ((r + 1) as f64).log2())
}

fn mean_of(ranks: &[usize], f: impl Fn(usize) -> f64) -> Result<f64> {
    if ranks.is_empty() {
        return Err(Error::Contract("metric over no queries".into()));
    }
    if ranks.contains(&0) {
        return Err(Error::Contract("ranks are 1-based".into()));
    }
    Ok(ranks.iter().map(|&r| f(r)).sum::<f64>() / ranks.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankMetrics {
    pub map: f64,
    pub ndcg: f64,
    pub queries: usize,
}

/// Ranks every query with `score(anchor, candidate)`.
pub fn evaluate_with<F>(queries: &[EvalQuery], score: F, parallel: bool) -> Result<RankMetrics>
where
    F: Fn(NodeId, NodeId) -> f64 + Sync,
{
    let one = |q: &EvalQuery| {
        let cands = q.candidates();
        let scores: Vec<f64> = cands.iter().map(|&c| score(q.anchor, c)).collect();
        rank_of_true(&cands, &scores)
    };
    let ranks: Vec<usize> = if parallel {
        queries.par_iter().map(one).collect::<Result<_>>()?
    } else {
        queries.iter().map(one).collect::<Result<_>>()?
    };
    Ok(RankMetrics {
        map: map_metric(&ranks)?,
        ndcg: ndcg_metric(&ranks)?,
        queries: ranks.len(),
    })
}

/// Ranks queries with the model's translational score.
pub fn evaluate(
    emb: &Embeddings,
    link: Option<&LinkParams>,
    queries: &[EvalQuery],
    parallel: bool,
) -> Result<RankMetrics> {
    evaluate_with(queries, |a, c| score_pair(emb, link, a, c), parallel)
}

/// Stratified train/test partition of the labeled nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeSplit {
    pub train: Vec<NodeId>,
    pub test: Vec<NodeId>,
}

impl ProbeSplit {
    /// Per class, `round(train_fraction · count)` nodes go to training.
    pub fn stratified(labels: &TypeLabels, train_fraction: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&train_fraction) {
            return Err(Error::Config(format!(
                "probe train fraction {train_fraction} outside [0, 1]"
            )));
        }
        let mut by_class: Vec<Vec<NodeId>> = vec![Vec::new(); labels.num_classes()];
        for (v, l) in labels.labeled() {
            by_class[l].push(v);
        }
        let mut train = Vec::new();
        let mut test = Vec::new();
        for (k, mut nodes) in by_class.into_iter().enumerate() {
            nodes.shuffle(&mut rng::stream(seed, "probe", k as u64));
            let cut = (nodes.len() as f64 * train_fraction).round() as usize;
            train.extend_from_slice(&nodes[..cut]);
            test.extend_from_slice(&nodes[cut..]);
        }
        train.sort_unstable();
        test.sort_unstable();
        Ok(ProbeSplit { train, test })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub lr: f64,
    pub l2: f64,
    pub train_fraction: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            epochs: 500,
            lr: 0.5,
            l2: 1e-4,
            train_fraction: 0.6,
        }
    }
}

/// Multinomial logistic regression on standardized inputs, trained by
/// full-batch gradient descent from zero weights.
#[derive(Debug, Clone)]
pub struct Logistic {
    mean: Vec<f64>,
    scale: Vec<f64>,
    /// `classes × (dim + 1)`; the last column is the bias.
    weights: Tensor,
}

impl Logistic {
    pub fn fit(x: &Tensor, y: &[usize], classes: usize, cfg: &ProbeConfig) -> Result<Self> {
        let (n, d) = (x.rows(), x.cols());
        if n == 0 || y.len() != n {
            return Err(Error::Contract(format!("{n} rows for {} labels", y.len())));
        }
        let mut mean = vec![0.0; d];
        for r in 0..n {
            for (m, v) in mean.iter_mut().zip(x.row_slice(r)) {
                *m += v / n as f64;
            }
        }
        let mut scale = vec![0.0; d];
        for r in 0..n {
            for ((s, v), m) in scale.iter_mut().zip(x.row_slice(r)).zip(&mean) {
                *s += (v - m) * (v - m) / n as f64;
            }
        }
        // Constant columns keep unit scale and standardize to zero.
        scale.iter_mut().for_each(|s| *s = if *s > 1e-24 { s.sqrt() } else { 1.0 });
        let z = standardize(x, &mean, &scale);
        let dim = d + 1;
        let mut w = Tensor::zeros(classes, dim);
        let mut grad = Tensor::zeros(classes, dim);
        let mut p = vec![0.0; classes];
        for _ in 0..cfg.epochs {
            grad.data_mut().iter_mut().for_each(|g| *g = 0.0);
            for r in 0..n {
                let zr = z.row_slice(r);
                softmax_row(&w, zr, &mut p);
                p[y[r]] -= 1.0;
                for k in 0..classes {
                    let gk = grad.row_slice_mut(k);
                    for (g, v) in gk[..d].iter_mut().zip(zr) {
                        *g += p[k] * v;
                    }
                    gk[d] += p[k];
                }
            }
            for (wi, gi) in w.data_mut().iter_mut().zip(grad.data()) {
                *wi -= cfg.lr * (gi / n as f64 + cfg.l2 * *wi);
            }
        }
        Ok(Logistic {
            mean,
            scale,
            weights: w,
        })
    }

    pub fn predict(&self, x: &Tensor) -> Vec<usize> {
        let z = standardize(x, &self.mean, &self.scale);
        let mut p = vec![0.0; self.weights.rows()];
        (0..z.rows())
            .map(|r| {
                softmax_row(&self.weights, z.row_slice(r), &mut p);
                argmax(&p)
            })
            .collect()
    }
}

fn standardize(x: &Tensor, mean: &[f64], scale: &[f64]) -> Tensor {
    let mut z = x.clone();
    for r in 0..z.rows() {
        for ((v, m), s) in z.row_slice_mut(r).iter_mut().zip(mean).zip(scale) {
            *v = (*v - m) / s;
        }
    }
    z
}

fn softmax_row(w: &Tensor, z: &[f64], out: &mut [f64]) {
    let d = z.len();
    for (k, o) in out.iter_mut().enumerate() {
        let wk = w.row_slice(k);
        *o = wk[..d].iter().zip(z).map(|(a, b)| a * b).sum::<f64>() + wk[d];
    }
    let m = out.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for o in out.iter_mut() {
        *o = (*o - m).exp();
        total += *o;
    }
    out.iter_mut().for_each(|o| *o /= total);
}

/// First index of the maximum.
fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Accuracy and the unweighted mean of per-class F1 over every class that
/// occurs in `truth` or `pred`.
pub fn classification_scores(truth: &[usize], pred: &[usize], classes: usize) -> (f64, f64) {
    let n = truth.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mut tp = vec![0usize; classes];
    let mut fp = vec![0usize; classes];
    let mut fneg = vec![0usize; classes];
    for (&t, &p) in truth.iter().zip(pred) {
        if t == p {
            tp[t] += 1;
        } else {
            fp[p] += 1;
            fneg[t] += 1;
        }
    }
    let correct: usize = tp.iter().sum();
    let mut f_sum = 0.0;
    let mut present = 0;
    for k in 0..classes {
        if tp[k] + fp[k] + fneg[k] == 0 {
            continue;
        }
        present += 1;
        f_sum += 2.0 * tp[k] as f64 / (2 * tp[k] + fp[k] + fneg[k]) as f64;
    }
    (correct as f64 / n as f64, f_sum / present as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub macro_f: f64,
    pub accuracy: f64,
    /// Scores of always predicting the most frequent training class.
    pub majority_macro_f: f64,
    pub majority_accuracy: f64,
    pub train_nodes: usize,
    pub test_nodes: usize,
}

/// Classifies node types from `[h_v, s_v]`.
pub fn node_type_probe(
    emb: &Embeddings,
    labels: &TypeLabels,
    split: &ProbeSplit,
    cfg: &ProbeConfig,
) -> Result<ProbeReport> {
    let classes = labels.num_classes();
    let label_of = |v: NodeId| labels.label[v].expect("split holds labeled nodes");
    let mut seen = vec![false; classes];
    for &v in &split.train {
        seen[label_of(v)] = true;
    }
    if let Some(k) = seen.iter().position(|s| !s) {
        return Err(Error::Data(format!(
            "class `{}` has no training nodes",
            labels.names[k]
        )));
    }
    let features = |nodes: &[NodeId]| -> Result<Tensor> {
        let rows: Vec<Vec<f64>> = nodes
            .iter()
            .map(|&v| {
                let mut r = emb.h.row_slice(v).to_vec();
                r.extend_from_slice(emb.s.row_slice(v));
                r
            })
            .collect();
        if rows.is_empty() {
            return Ok(Tensor::zeros(0, emb.h.cols() + emb.s.cols()));
        }
        Tensor::from_rows(&rows)
    };
    let y_train: Vec<usize> = split.train.iter().map(|&v| label_of(v)).collect();
    let y_test: Vec<usize> = split.test.iter().map(|&v| label_of(v)).collect();
    let model = Logistic::fit(&features(&split.train)?, &y_train, classes, cfg)?;
    let pred = model.predict(&features(&split.test)?);
    let (accuracy, macro_f) = classification_scores(&y_test, &pred, classes);

    let mut counts = vec![0usize; classes];
    for &y in &y_train {
        counts[y] += 1;
    }
    let majority = argmax(&counts.iter().map(|&c| c as f64).collect::<Vec<_>>());
    let (majority_accuracy, majority_macro_f) =
        classification_scores(&y_test, &vec![majority; y_test.len()], classes);
    Ok(ProbeReport {
        macro_f,
        accuracy,
        majority_macro_f,
        majority_accuracy,
        train_nodes: split.train.len(),
        test_nodes: split.test.len(),
    })
}

/// Ablation variants of the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    NoLinkEncoder,
    NoPersonalization,
    Neither,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Full,
        Variant::NoLinkEncoder,
        Variant::NoPersonalization,
        Variant::Neither,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoLinkEncoder => "no_link_encoder",
            Variant::NoPersonalization => "no_personalization",
            Variant::Neither => "neither",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == s)
    }

    /// Switches the corresponding components off, for training and testing
    /// alike.
    pub fn apply(self, cfg: &ModelConfig) -> ModelConfig {
        let mut c = cfg.clone();
        c.personalization = matches!(self, Variant::Full | Variant::NoLinkEncoder);
        c.link_encoder = matches!(self, Variant::Full | Variant::NoPersonalization);
        c
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn sparse20() -> Graph {
        let edges: Vec<Edge> = (0..20).map(|i| (i, (i + 1) % 20)).collect();
        Graph::new(20, &edges, None).unwrap()
    }

    #[test]
    fn queries_have_ten_distinct_valid_candidates() {
        let g = sparse20();
        let qs = build_queries(&g, g.edges(), 4).unwrap();
        assert_eq!(qs.len(), 20);
        for q in &qs {
            let c: HashSet<_> = q.candidates().into_iter().collect();
            assert_eq!(c.len(), 10);
            for &n in &q.negatives {
                assert!(n != q.anchor && !g.has_link(q.anchor, n));
            }
        }
        assert_eq!(qs, build_queries(&g, g.edges(), 4).unwrap());
        assert_ne!(qs, build_queries(&g, g.edges(), 5).unwrap());
    }

    #[test]
    fn too_few_negatives_names_the_anchor() {
        let edges: Vec<Edge> = (1..6).map(|i| (0, i)).collect();
        let g = Graph::new(8, &edges, None).unwrap();
        let err = build_queries(&g, &[(0, 1)], 0).unwrap_err().to_string();
        assert!(err.contains("anchor 0"), "{err}");
    }

    #[test]
    fn rank_cases() {
        let c = [5, 1, 2, 3, 4, 6, 7, 8, 9, 10];
        let mut s = [0.0; 10];
        s[0] = 1.0;
        assert_eq!(rank_of_true(&c, &s).unwrap(), 1);
        s[0] = -1.0;
        assert_eq!(rank_of_true(&c, &s).unwrap(), 10);
        // b = 5 ties with 6 (larger id) and with 4 (smaller id)
        let mut s = [-5.0; 10];
        s[0] = 0.0;
        s[5] = 0.0;
        assert_eq!(rank_of_true(&c, &s).unwrap(), 1);
        s[4] = 0.0;
        assert_eq!(rank_of_true(&c, &s).unwrap(), 2);
        s[1] = f64::NAN;
        assert!(matches!(rank_of_true(&c, &s), Err(Error::NonFinite(_))));
    }

    #[test]
    fn metric_closed_forms() {
        assert_eq!(map_metric(&[1, 1, 1]).unwrap(), 1.0);
        assert_eq!(ndcg_metric(&[1, 1, 1]).unwrap(), 1.0);
        assert_eq!(map_metric(&[2]).unwrap(), 0.5);
        assert!((ndcg_metric(&[2]).unwrap() - 1.0 / 3f64.log2()).abs() < 1e-12);
        assert!((map_metric(&[1, 10]).unwrap() - 0.55).abs() < 1e-12);
        assert!(map_metric(&[]).is_err());
    }

    proptest! {
        #[test]
        fn metrics_monotone_and_bounded(ranks in proptest::collection::vec(1usize..=10, 1..30), i in 0usize..30) {
            let i = i % ranks.len();
            let (m, n) = (map_metric(&ranks).unwrap(), ndcg_metric(&ranks).unwrap());
            prop_assert!(m > 0.0 && m <= 1.0 && n > 0.0 && n <= 1.0);
            prop_assert_eq!(m == 1.0, ranks.iter().all(|&r| r == 1));
            if ranks[i] < 10 {
                let mut worse = ranks.clone();
                worse[i] += 1;
                prop_assert!(map_metric(&worse).unwrap() <= m);
                prop_assert!(ndcg_metric(&worse).unwrap() <= n);
            }
        }
    }

    fn labels(classes: &[usize]) -> TypeLabels {
        let k = classes.iter().max().unwrap() + 1;
        TypeLabels {
            label: classes.iter().map(|&c| Some(c)).collect(),
            names: (0..k).map(|i| format!("t{i}")).collect(),
        }
    }

    #[test]
    fn stratified_split_partitions() {
        let classes: Vec<usize> = (0..100).map(|i| usize::from(i % 5 == 0)).collect();
        let l = labels(&classes);
        let s = ProbeSplit::stratified(&l, 0.6, 1).unwrap();
        assert_eq!(s.train.len() + s.test.len(), 100);
        let tr: HashSet<_> = s.train.iter().collect();
        assert!(s.test.iter().all(|v| !tr.contains(v)));
        assert_eq!(s.train.iter().filter(|&&v| classes[v] == 1).count(), 12);
    }

    #[test]
    fn separable_probe_is_perfect() {
        let n = 40;
        let classes: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let h: Vec<Vec<f64>> = classes
            .iter()
            .map(|&c| vec![if c == 1 { 1.0 } else { -1.0 }, 0.3])
            .collect();
        let emb = Embeddings {
            h: Tensor::from_rows(&h).unwrap(),
            s: Tensor::zeros(n, 1),
        };
        let l = labels(&classes);
        let split = ProbeSplit::stratified(&l, 0.6, 0).unwrap();
        let r = node_type_probe(&emb, &l, &split, &ProbeConfig::default()).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.macro_f, 1.0);
    }

    #[test]
    fn majority_predictor_closed_form() {
        let truth: Vec<usize> = (0..100).map(|i| usize::from(i >= 78)).collect();
        let (acc, f) = classification_scores(&truth, &[0; 100], 2);
        assert!((acc - 0.78).abs() < 1e-12);
        let expected = 0.5 * (2.0 * 0.78 / 1.78);
        assert!((f - expected).abs() < 1e-12);
        assert!((f - 0.438).abs() < 1e-3);
    }

    #[test]
    fn variants_toggle_components() {
        let base = ModelConfig::default();
        let n = Variant::Neither.apply(&base);
        assert!(!n.personalization && !n.link_encoder);
        let p = Variant::NoPersonalization.apply(&base);
        assert!(!p.personalization && p.link_encoder);
        assert_eq!(Variant::parse("no_link_encoder"), Some(Variant::NoLinkEncoder));
    }
}
