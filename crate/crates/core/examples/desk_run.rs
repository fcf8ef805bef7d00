//! Trains on a breadth-first subgraph of a synthetic bibliographic graph and
//! reports test ranking metrics.
//!
//! ```text
//! cargo run --release -p lhgnn --example desk_run -- [nodes] [seed] [variant] [film_weight]
//! ```

use lhgnn::config::TrainConfig;
use lhgnn::eval::{build_queries, evaluate, Variant};
use lhgnn::graph::{split_links, SplitRatios};
use lhgnn::paths::PathSets;
use lhgnn::synth::{generate, SynthConfig};
use lhgnn::train::{train, TrainOptions};

fn main() -> lhgnn::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let nodes: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let seed: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0);
    let variant = args.get(3).and_then(|s| Variant::parse(s)).unwrap_or(Variant::Full);

    let full = generate(&SynthConfig::default())?;
    let sub = full.bfs_subgraph(0, nodes)?;
    let split = split_links(&sub.graph, SplitRatios::DEFAULT, seed)?;
    let val = build_queries(&split.full_graph, &split.val_edges, seed)?;
    let test = build_queries(&split.full_graph, &split.test_edges, seed + 1)?;

    let mut cfg = TrainConfig { seed, ..TrainConfig::default() };
    if let Some(mu) = args.get(4).and_then(|s| s.parse().ok()) {
        cfg.loss.film_weight = mu;
    }
    cfg.model = variant.apply(&cfg.model);
    let paths = PathSets::sample(&split.train_graph, cfg.paths, seed, 0, false)?;
    let out = train(
        &cfg,
        &split,
        paths,
        &val,
        TrainOptions {
            on_epoch: Some(Box::new(|e| println!("{}", e.progress_line()))),
            ..Default::default()
        },
    )?;
    let emb = lhgnn::model::embed_all(&out.best, &split.train_graph, &out.paths, false)?;
    let link = out.best.config.link_encoder.then_some(&out.best.link);
    let m = evaluate(&emb, link, &test, false)?;
    println!(
        "{variant} nodes {} edges {} test_map {:.4} test_ndcg {:.4} secs {:.1}",
        sub.graph.node_count(),
        sub.graph.edge_count(),
        m.map,
        m.ndcg,
        out.report.total_secs
    );
    Ok(())
}
