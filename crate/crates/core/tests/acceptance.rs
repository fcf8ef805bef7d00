//! Acceptance checks, one `[PASS]`/`[FAIL]` line per criterion.
//!
//! Environment:
//! - `LHGNN_DBLP_DIR`: converted DBLP benchmark (`edges.tsv`, `features.txt`,
//!   `labels.tsv`), default `data/dblp` at the workspace root. The 2,000-node
//!   ablation uses it when present and the synthetic bibliographic graph
//!   otherwise; the full-benchmark checks fail without it.
//! - `LHGNN_ACCEPTANCE_ONLY`: comma-separated ids such as `C1,C3`.
//! - `LHGNN_ACCEPTANCE_STRICT=1`: exit with status 1 if any check fails.

mod common;

use std::path::{Path, PathBuf};
use std::time::Instant;

use lhgnn::baselines::{kmeans, transe_train, PseudoTypes, TransEConfig};
use lhgnn::config::TrainConfig;
use lhgnn::eval::{
    build_queries, evaluate, map_metric, ndcg_metric, node_type_probe, EvalQuery, ProbeConfig, ProbeSplit,
    RankMetrics, Variant,
};
use lhgnn::graph::{load_edge_list, split_links, LinkSplit, LoadedGraph, SplitRatios};
use lhgnn::model::{embed_all, layer_forward};
use lhgnn::paths::PathSets;
use lhgnn::synth::{generate, SynthConfig};
use lhgnn::train::{measure_scaling, train, TrainOptions, TrainOutcome};

struct Check {
    id: &'static str,
    pass: bool,
    detail: String,
}

impl Check {
    fn new(id: &'static str, pass: bool, detail: impl Into<String>) -> Self {
        let c = Check {
            id,
            pass,
            detail: detail.into(),
        };
        println!("[{}] {} {}", if c.pass { "PASS" } else { "FAIL" }, c.id, c.detail);
        c
    }
}

fn dblp_dir() -> PathBuf {
    std::env::var_os("LHGNN_DBLP_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/dblp"))
}

fn load_dblp() -> Result<LoadedGraph, String> {
    let dir = dblp_dir();
    let edges = dir.join("edges.tsv");
    if !edges.is_file() {
        return Err(format!(
            "DBLP not found at {}; convert it with scripts/convert_gtn_dblp.py",
            dir.display()
        ));
    }
    let features = dir.join("features.txt");
    let labels = dir.join("labels.tsv");
    load_edge_list(
        &edges,
        features.is_file().then_some(features.as_path()),
        labels.is_file().then_some(labels.as_path()),
    )
    .map_err(|e| e.to_string())
}

struct Prepared {
    split: LinkSplit,
    val: Vec<EvalQuery>,
    test: Vec<EvalQuery>,
}

fn prepare(g: &lhgnn::graph::Graph, seed: u64) -> lhgnn::Result<Prepared> {
    let split = split_links(g, SplitRatios::DEFAULT, seed)?;
    let val = build_queries(&split.full_graph, &split.val_edges, seed)?;
    let test = build_queries(&split.full_graph, &split.test_edges, seed + 1)?;
    Ok(Prepared { split, val, test })
}

fn fit(cfg: &TrainConfig, data: &Prepared) -> lhgnn::Result<(TrainOutcome, RankMetrics)> {
    let paths = PathSets::sample(&data.split.train_graph, cfg.paths, cfg.seed, 0, false)?;
    let out = train(cfg, &data.split, paths, &data.val, TrainOptions::default())?;
    let emb = embed_all(&out.best, &data.split.train_graph, &out.paths, false)?;
    let link = out.best.config.link_encoder.then_some(&out.best.link);
    let test = evaluate(&emb, link, &data.test, false)?;
    Ok((out, test))
}

fn c1() -> Vec<Check> {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut cases = 0;
    for (features, mu, margin, seed) in [(true, 1e-4, 0.2, 4), (true, 1e-4, 1.0, 4), (true, 0.5, 1.0, 5), (false, 0.1, 1.0, 9)] {
        let (rep, _) = common::toy_loss_grad_check(features, mu, margin, seed);
        worst = worst.max(rep.max_rel_error);
        cases += 1;
    }
    let secs = start.elapsed().as_secs_f64();
    vec![Check::new(
        "C1",
        worst < 1e-4 && secs < 60.0,
        format!("gradient check: max relative error {worst:.2e} (< 1e-4) over {cases} toy objectives, {secs:.1}s (< 60s)"),
    )]
}

fn c2() -> Vec<Check> {
    let mut worst = 0.0f64;
    for (features, seed) in [(true, 0), (true, 1), (true, 2), (false, 3)] {
        let g = common::toy_graph(features);
        let paths = common::toy_paths(&g, seed);
        let cfg = common::toy_config();
        let params = common::toy_params(&cfg, &g, seed + 20);
        let h0 = match g.features() {
            Some(f) => f.clone(),
            None => params.entity.clone().expect("entity table"),
        };
        let out = layer_forward(&h0, &paths, &params.layers[0], &cfg).unwrap();
        let (h1, s1) = common::oracle_layer(&common::rows(&h0), &paths, &params.layers[0], &cfg);
        let emb = embed_all(&params, &g, &paths, false).unwrap();
        let (h2, s2) = common::oracle_layer(&h1, &paths, &params.layers[1], &cfg);
        for d in [
            common::max_abs_diff(&h1, &out.h),
            common::max_abs_diff(&s1, &out.s),
            common::max_abs_diff(&h2, &emb.h),
            common::max_abs_diff(&s2, &emb.s),
        ] {
            worst = worst.max(d);
        }
    }
    vec![Check::new(
        "C2",
        worst < 1e-10,
        format!("forward oracle: max elementwise difference {worst:.2e} (< 1e-10) over 4 toy graphs, 1 and 2 layers"),
    )]
}

fn c3() -> Vec<Check> {
    let m2 = map_metric(&[2]).unwrap();
    let n2 = ndcg_metric(&[2]).unwrap();
    let m1 = map_metric(&[1; 20]).unwrap();
    let n1 = ndcg_metric(&[1; 20]).unwrap();
    let err = [(m2 - 0.5).abs(), (n2 - 1.0 / 3f64.log2()).abs(), (m1 - 1.0).abs(), (n1 - 1.0).abs()]
        .into_iter()
        .fold(0.0, f64::max);
    vec![Check::new(
        "C3",
        err < 1e-12,
        format!("metric closed forms: rank 2 gives MAP {m2} NDCG {n2:.15}, all rank 1 gives {m1}/{n1}; max error {err:.1e} (< 1e-12)"),
    )]
}

/// BFS subgraph of DBLP when available, else of the synthetic graph.
fn ablation_graph() -> (LoadedGraph, &'static str) {
    let base = match load_dblp() {
        Ok(g) => (g, "DBLP"),
        Err(_) => (generate(&SynthConfig::default()).unwrap(), "synthetic DBLP-shaped graph"),
    };
    (base.0.bfs_subgraph(0, 2000).unwrap(), base.1)
}

fn c4() -> Vec<Check> {
    let start = Instant::now();
    let (g, source) = ablation_graph();
    let variants = [Variant::Full, Variant::NoPersonalization, Variant::NoLinkEncoder];
    let seeds = [0u64, 1, 2];
    let mut maps = vec![Vec::new(); variants.len()];
    for &seed in &seeds {
        let data = prepare(&g.graph, seed).unwrap();
        for (k, v) in variants.iter().enumerate() {
            let mut cfg = TrainConfig {
                seed,
                ..TrainConfig::default()
            };
            cfg.model = v.apply(&cfg.model);
            let (_, test) = fit(&cfg, &data).unwrap();
            println!("  C4 {source} {} nodes, {v} seed {seed}: test MAP {:.4}", g.graph.node_count(), test.map);
            maps[k].push(test.map);
        }
    }
    let mean: Vec<f64> = maps.iter().map(|m| m.iter().sum::<f64>() / m.len() as f64).collect();
    let secs = start.elapsed().as_secs_f64();
    vec![
        Check::new(
            "C4",
            mean[0] > mean[1] && mean[0] > mean[2],
            format!(
                "ablation direction on {source} ({} nodes, 3 seeds): mean test MAP full {:.4} vs no_personalization {:.4} and no_link_encoder {:.4}",
                g.graph.node_count(),
                mean[0],
                mean[1],
                mean[2]
            ),
        ),
        Check::new("C4-time", secs < 1800.0, format!("ablation runtime {:.1} min (< 30 min)", secs / 60.0)),
    ]
}

fn dblp_checks() -> Vec<Check> {
    let g = match load_dblp() {
        Ok(g) => g,
        Err(e) => {
            return vec![
                Check::new("C5", false, format!("full-DBLP MAP >= 0.88 and NDCG >= 0.91: {e}")),
                Check::new("C6", false, format!("baseline ordering on DBLP: {e}")),
                Check::new("C7", false, format!("type probe on DBLP: {e}")),
            ]
        }
    };
    let start = Instant::now();
    let data = prepare(&g.graph, 0).unwrap();
    let cfg = TrainConfig::default();
    let (out, test) = fit(&cfg, &data).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let mut checks = vec![Check::new(
        "C5",
        test.map >= 0.88 && test.ndcg >= 0.91 && secs <= 4.0 * 3600.0,
        format!(
            "DBLP test MAP {:.4} (>= 0.88), NDCG {:.4} (>= 0.91), {:.2} h (<= 4 h)",
            test.map,
            test.ndcg,
            secs / 3600.0
        ),
    )];

    let tc = TransEConfig::default();
    let n = data.split.train_graph.node_count();
    let plain = transe_train(&data.split, &PseudoTypes::single(n), &tc, &data.val, false).unwrap();
    let plain_map = plain.best.evaluate(&data.test, false).unwrap().map;
    let types = match data.split.train_graph.features() {
        Some(f) => kmeans(f, 10, 0, false).unwrap().types,
        None => kmeans(&plain.best.entity, 10, 0, false).unwrap().types,
    };
    let typed = transe_train(&data.split, &types, &tc, &data.val, false).unwrap();
    let typed_map = typed.best.evaluate(&data.test, false).unwrap().map;
    checks.push(Check::new(
        "C6",
        test.map - plain_map >= 0.20 && typed_map - plain_map >= 0.05,
        format!("DBLP test MAP LHGNN {:.4}, TransE {plain_map:.4}, TransE-10 {typed_map:.4}; gaps >= 0.20 and >= 0.05", test.map),
    ));

    match &g.labels {
        None => checks.push(Check::new("C7", false, "type probe: DBLP labels.tsv missing")),
        Some(labels) => {
            let emb = embed_all(&out.best, &data.split.train_graph, &out.paths, false).unwrap();
            let pc = ProbeConfig::default();
            let split = ProbeSplit::stratified(labels, pc.train_fraction, 0).unwrap();
            let r = node_type_probe(&emb, labels, &split, &pc).unwrap();
            checks.push(Check::new(
                "C7",
                r.accuracy >= 0.90 && r.macro_f >= 0.55 && r.macro_f > r.majority_macro_f,
                format!(
                    "type probe accuracy {:.4} (>= 0.90), macro-F {:.4} (>= 0.55, majority {:.4})",
                    r.accuracy, r.macro_f, r.majority_macro_f
                ),
            ));
        }
    }
    checks
}

fn c8() -> Vec<Check> {
    let g = generate(&SynthConfig::default()).unwrap().bfs_subgraph(0, 1000).unwrap();
    let data = prepare(&g.graph, 0).unwrap();
    let norms = |mu: f64| {
        let mut cfg = TrainConfig::default();
        cfg.loss.film_weight = mu;
        cfg.max_epochs = 1000;
        let paths = PathSets::sample(&data.split.train_graph, cfg.paths, cfg.seed, 0, false).unwrap();
        let out = train(
            &cfg,
            &data.split,
            paths,
            &[],
            TrainOptions {
                film_stats: true,
                max_steps: Some(200),
                ..Default::default()
            },
        )
        .unwrap();
        let s = out.report.steps.iter().find(|s| s.step == 200).expect("200 steps ran");
        (s.mean_gamma_norm.unwrap(), s.mean_beta_norm.unwrap())
    };
    let (g_reg, b_reg) = norms(1e3);
    let (g_free, b_free) = norms(0.0);
    vec![Check::new(
        "C8",
        g_reg < g_free && b_reg < b_free,
        format!(
            "FiLM norms at step 200: mu=1e3 gives |gamma| {g_reg:.3e}, |beta| {b_reg:.3e}; mu=0 gives {g_free:.3e}, {b_free:.3e}"
        ),
    )]
}

fn c9() -> Vec<Check> {
    let sizes = [5_000usize, 10_000, 20_000];
    let base = generate(&SynthConfig::with_nodes(25_000, 0)).unwrap();
    let graphs: Vec<_> = sizes
        .iter()
        .map(|&s| (s.to_string(), base.bfs_subgraph(0, s).unwrap().graph))
        .collect();
    let rows = measure_scaling(&graphs, &TrainConfig::default(), 1, false).unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for r in &rows {
        let allowed = 1.5 * r.nodes as f64 / rows[0].nodes as f64;
        let ratio = r.secs_per_epoch / rows[0].secs_per_epoch;
        pass &= ratio <= allowed;
        parts.push(format!(
            "{} nodes {:.1}s ({} steps, x{ratio:.2} vs allowed x{allowed:.2})",
            r.nodes, r.secs_per_epoch, r.steps_per_epoch
        ));
    }
    vec![Check::new("C9", pass, format!("seconds per epoch: {}", parts.join("; ")))]
}

fn c10() -> Vec<Check> {
    let g = generate(&SynthConfig::default()).unwrap().bfs_subgraph(0, 500).unwrap();
    let data = prepare(&g.graph, 3).unwrap();
    let cfg = TrainConfig {
        seed: 3,
        max_epochs: 3,
        ..TrainConfig::default()
    };
    let (a, ta) = fit(&cfg, &data).unwrap();
    let (b, tb) = fit(&cfg, &data).unwrap();
    let bits = |o: &TrainOutcome| -> Vec<u64> { o.report.loss_curve().iter().map(|x| x.to_bits()).collect() };
    let vals = |o: &TrainOutcome| -> Vec<(u64, u64)> {
        o.report
            .epochs
            .iter()
            .filter_map(|e| e.val)
            .map(|m| (m.map.to_bits(), m.ndcg.to_bits()))
            .collect()
    };
    let same = bits(&a) == bits(&b)
        && vals(&a) == vals(&b)
        && ta.map.to_bits() == tb.map.to_bits()
        && ta.ndcg.to_bits() == tb.ndcg.to_bits()
        && a.best == b.best;
    vec![Check::new(
        "C10",
        same,
        format!(
            "determinism: {} step losses, {} validation checks, test MAP {:.6} and parameters {} across two runs",
            a.report.steps.len(),
            a.report.epochs.len(),
            ta.map,
            if same { "bitwise identical" } else { "differ" }
        ),
    )]
}

fn main() {
    let only: Option<Vec<String>> = std::env::var("LHGNN_ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').map(|x| x.trim().to_uppercase()).collect());
    let wanted = |id: &str| only.as_ref().is_none_or(|o| o.iter().any(|x| x == id));
    let all: [(&str, fn() -> Vec<Check>); 8] = [
        ("C1", c1),
        ("C2", c2),
        ("C3", c3),
        ("C8", c8),
        ("C10", c10),
        ("C4", c4),
        ("C9", c9),
        ("C5", dblp_checks),
    ];
    let mut checks = Vec::new();
    for (id, run) in all {
        let dblp = id == "C5" && (wanted("C5") || wanted("C6") || wanted("C7"));
        if wanted(id) || dblp {
            checks.extend(run());
        }
    }
    let failed: Vec<&str> = checks.iter().filter(|c| !c.pass).map(|c| c.id).collect();
    println!(
        "acceptance: {} passed, {} failed{}",
        checks.len() - failed.len(),
        failed.len(),
        if failed.is_empty() { String::new() } else { format!(" ({})", failed.join(", ")) }
    );
    if !failed.is_empty() && std::env::var("LHGNN_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
