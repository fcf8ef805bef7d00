use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use lhgnn::baselines::{kmeans, transe_train, PseudoTypes, TransEConfig, TransEEpoch};
use lhgnn::checkpoint::Checkpoint;
use lhgnn::config::{hex, TrainConfig};
use lhgnn::eval::{evaluate, node_type_probe, ProbeConfig, ProbeReport, ProbeSplit, RankMetrics, Variant};
use lhgnn::graph::LoadedGraph;
use lhgnn::model::ModelConfig;
use lhgnn::synth::{generate, SynthConfig};
use lhgnn::train::{embeddings, measure_scaling, train as train_model, ScalingRow, StepRecord, TrainOptions, TrainOutcome};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::dataset::{prepare as prepare_dir, Dataset, Prepare, Source};
use crate::plot::{bar_chart, line_chart};
use crate::{
    AblateArgs, ConfigArgs, EvalArgs, PrepareArgs, ProbeArgs, ScalingArgs, SplitArg, TrainArgs, TransEArgs,
    Usage, VariantArg,
};

pub struct Ctx {
    pub out: PathBuf,
    pub parallel: bool,
}

/// Envelope shared by every JSON report.
#[derive(Serialize)]
struct Artifact<'a, C: Serialize, B: Serialize> {
    command: &'a str,
    fingerprint: String,
    seed: u64,
    dataset: Option<&'a Path>,
    config: &'a C,
    #[serde(flatten)]
    body: B,
}

fn fingerprint<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_string(value).expect("serializable");
    hex(&Sha256::digest(json.as_bytes()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// Configuration errors are the caller's to fix.
fn usage_on_config(e: lhgnn::Error) -> anyhow::Error {
    match e {
        lhgnn::Error::Config(m) => Usage(m).into(),
        other => other.into(),
    }
}

fn read_config(path: &Path) -> Result<TrainConfig> {
    if !path.is_file() {
        return Err(Usage(format!("{}: no such configuration file", path.display())).into());
    }
    TrainConfig::from_toml_file(path).map_err(usage_on_config)
}

/// Defaults, then the config file, then flags, then the variant switches.
fn resolve_config(args: &ConfigArgs, variant: Option<Variant>) -> Result<TrainConfig> {
    let mut cfg = match &args.config {
        Some(p) => read_config(p)?,
        None => TrainConfig::default(),
    };
    macro_rules! set {
        ($($field:ident => $($target:ident).+),* $(,)?) => {
            $(if let Some(v) = args.$field { cfg.$($target).+ = v; })*
        };
    }
    set! {
        seed => seed,
        layers => model.layers,
        hidden_dim => model.hidden_dim,
        semantic_dim => model.semantic_dim,
        entity_dim => model.entity_dim,
        num_paths => paths.num_paths,
        max_len => paths.max_len,
        decay => model.decay,
        margin => loss.margin,
        film_weight => loss.film_weight,
        learning_rate => learning_rate,
        batch_size => batch_size,
        max_epochs => max_epochs,
        patience => patience,
    }
    if args.steps_per_epoch.is_some() {
        cfg.steps_per_epoch = args.steps_per_epoch;
    }
    if args.resample_paths {
        cfg.resample_paths = true;
    }
    if let Some(v) = variant {
        cfg.model = v.apply(&cfg.model);
    }
    cfg.validate().map_err(usage_on_config)?;
    Ok(cfg)
}

fn variants(arg: VariantArg) -> Vec<Variant> {
    match arg {
        VariantArg::Full => vec![Variant::Full],
        VariantArg::NoLinkEncoder => vec![Variant::NoLinkEncoder],
        VariantArg::NoPersonalization => vec![Variant::NoPersonalization],
        VariantArg::Neither => vec![Variant::Neither],
        VariantArg::All => Variant::ALL.to_vec(),
    }
}

fn variant_of(model: &ModelConfig) -> Variant {
    match (model.personalization, model.link_encoder) {
        (true, true) => Variant::Full,
        (true, false) => Variant::NoLinkEncoder,
        (false, true) => Variant::NoPersonalization,
        (false, false) => Variant::Neither,
    }
}

pub fn prepare(ctx: &Ctx, a: PrepareArgs) -> Result<()> {
    let source = match (a.edges, a.synthetic) {
        (Some(edges), _) => Source::EdgeList {
            edges,
            features: a.features,
            labels: a.labels,
        },
        (None, Some(n)) => Source::Synthetic {
            config: SynthConfig::with_nodes(n, a.seed),
        },
        (None, None) => return Err(Usage("pass --edges FILE or --synthetic N".into()).into()),
    };
    let cache_paths = if a.cache_paths {
        let cfg = match &a.config {
            Some(p) => read_config(p)?,
            None => TrainConfig::default(),
        };
        Some(cfg.paths)
    } else {
        None
    };
    let spec = Prepare {
        source,
        bfs: a.bfs.map(|n| (a.bfs_start.clone(), n)),
        ratios: a.ratios,
        seed: a.seed,
        cache_paths,
    };
    let m = prepare_dir(&spec, &ctx.out, ctx.parallel)?;
    println!(
        "prepared {} nodes {} edges train {} val {} test {} in {}",
        m.nodes,
        m.edges,
        m.train_edges,
        m.val_edges,
        m.test_edges,
        ctx.out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct TrainBody<'a> {
    variant: Variant,
    best_epoch: usize,
    best_val_map: Option<f64>,
    stopped_early: bool,
    checkpoint: Option<&'a Path>,
    total_secs: f64,
    epochs: &'a [lhgnn::train::EpochRecord],
    steps: &'a [StepRecord],
}

/// Trains into `dir`: config, checkpoint, report and loss curve.
fn train_into(ctx: &Ctx, data: &Dataset, cfg: &TrainConfig, dir: &Path, tag: &str) -> Result<TrainOutcome> {
    create_dir(dir)?;
    write_text(&dir.join("config.toml"), &cfg.to_toml())?;
    let paths = data.paths(cfg.paths, cfg.seed, 0, ctx.parallel)?;
    let ckpt = dir.join("best.ckpt");
    let out = train_model(
        cfg,
        &data.split,
        paths,
        &data.val_queries,
        TrainOptions {
            parallel: ctx.parallel,
            checkpoint: Some(ckpt),
            on_epoch: Some(Box::new(|e| println!("{tag}{}", e.progress_line()))),
            ..Default::default()
        },
    )?;
    let r = &out.report;
    write_json(
        &dir.join("train_report.json"),
        &Artifact {
            command: "train",
            fingerprint: r.fingerprint.clone(),
            seed: r.seed,
            dataset: Some(&data.dir),
            config: cfg,
            body: TrainBody {
                variant: variant_of(&cfg.model),
                best_epoch: r.best_epoch,
                best_val_map: r.best_val_map,
                stopped_early: r.stopped_early,
                checkpoint: r.best_checkpoint.as_deref(),
                total_secs: r.total_secs,
                epochs: &r.epochs,
                steps: &r.steps,
            },
        },
    )?;
    let curve: Vec<(f64, f64)> = r.steps.iter().map(|s| (s.step as f64, s.total)).collect();
    let epoch_loss: Vec<(f64, f64)> = r
        .epochs
        .iter()
        .map(|e| ((e.epoch * r.steps.len() / r.epochs.len().max(1)) as f64, e.loss))
        .collect();
    write_text(
        &dir.join("loss_curve.svg"),
        &line_chart(
            &format!("training loss ({})", variant_of(&cfg.model)),
            "step",
            "loss",
            &[("step loss".into(), curve), ("epoch mean".into(), epoch_loss)],
        ),
    )?;
    Ok(out)
}

pub fn train(ctx: &Ctx, a: TrainArgs) -> Result<()> {
    let [variant] = variants(a.variant)[..] else {
        return Err(Usage("train takes a single --variant".into()).into());
    };
    let cfg = resolve_config(&a.config, Some(variant))?;
    let data = Dataset::load(&a.data)?;
    log::info!(
        "training {variant} on {} nodes, {} training edges",
        data.manifest.nodes,
        data.manifest.train_edges
    );
    let out = train_into(ctx, &data, &cfg, &ctx.out, "")?;
    println!(
        "trained {variant} best_epoch {} val_map {} fingerprint {}",
        out.report.best_epoch,
        out.report.best_val_map.map_or("nan".into(), |m| format!("{m:.4}")),
        out.report.fingerprint
    );
    Ok(())
}

/// A checkpoint with its verified configuration and dataset.
struct Loaded {
    ckpt: Checkpoint,
    cfg: TrainConfig,
    data: Dataset,
}

fn load_checkpoint(checkpoint: &Path, config: Option<PathBuf>, data: Option<PathBuf>) -> Result<Loaded> {
    if !checkpoint.is_file() {
        return Err(Usage(format!("--checkpoint {}: no such file", checkpoint.display())).into());
    }
    let dir = checkpoint.parent().unwrap_or(Path::new("."));
    let config = config.unwrap_or_else(|| dir.join("config.toml"));
    let cfg = read_config(&config)?;
    let ckpt = Checkpoint::load(checkpoint)?;
    let expected = cfg.fingerprint();
    if ckpt.fingerprint != expected {
        bail!(
            "refusing to evaluate: checkpoint {} has config fingerprint {}, but {} has fingerprint {}",
            checkpoint.display(),
            ckpt.fingerprint,
            config.display(),
            expected
        );
    }
    let data = match data {
        Some(d) => d,
        None => {
            let report = dir.join("train_report.json");
            let text = fs::read_to_string(&report).map_err(|_| {
                Usage(format!("pass --data DIR; {} is not readable", report.display()))
            })?;
            let v: serde_json::Value = serde_json::from_str(&text)?;
            match v["dataset"].as_str() {
                Some(s) => PathBuf::from(s),
                None => return Err(Usage(format!("pass --data DIR; {} names no dataset", report.display())).into()),
            }
        }
    };
    let data = Dataset::load(&data)?;
    Ok(Loaded { ckpt, cfg, data })
}

impl Loaded {
    fn embeddings(&self, parallel: bool) -> Result<lhgnn::model::Embeddings> {
        // With resampling, the best epoch `e` ran on paths of round `e - 1`.
        let round = if self.cfg.resample_paths {
            self.ckpt.epoch.saturating_sub(1)
        } else {
            0
        };
        let paths = self.data.paths(self.cfg.paths, self.cfg.seed, round, parallel)?;
        Ok(embeddings(&self.ckpt.params, &self.data.split, &paths, parallel)?)
    }
}

#[derive(Serialize)]
struct EvalBody<'a> {
    variant: Variant,
    split: &'a str,
    checkpoint: &'a Path,
    epoch: u64,
    map: f64,
    ndcg: f64,
    queries: usize,
}

pub fn eval(ctx: &Ctx, a: EvalArgs) -> Result<()> {
    let l = load_checkpoint(&a.checkpoint, a.config, a.data)?;
    let (split, queries) = match a.split {
        SplitArg::Val => ("val", &l.data.val_queries),
        SplitArg::Test => ("test", &l.data.test_queries),
    };
    let emb = l.embeddings(ctx.parallel)?;
    let params = &l.ckpt.params;
    let m = evaluate(&emb, params.config.link_encoder.then_some(&params.link), queries, ctx.parallel)?;
    let report = Artifact {
        command: "eval",
        fingerprint: l.ckpt.fingerprint.clone(),
        seed: l.cfg.seed,
        dataset: Some(&l.data.dir),
        config: &l.cfg,
        body: EvalBody {
            variant: variant_of(&l.cfg.model),
            split,
            checkpoint: &a.checkpoint,
            epoch: l.ckpt.epoch,
            map: m.map,
            ndcg: m.ndcg,
            queries: m.queries,
        },
    };
    create_dir(&ctx.out)?;
    write_json(&ctx.out.join(format!("metrics_{split}.json")), &report)?;
    println!("{}", serde_json::to_string(&report)?);
    Ok(())
}

#[derive(Serialize)]
struct AblationRow {
    variant: Variant,
    seed: u64,
    fingerprint: String,
    best_epoch: usize,
    val_map: Option<f64>,
    test: RankMetrics,
    secs: f64,
}

#[derive(Serialize)]
struct VariantMean {
    variant: Variant,
    runs: usize,
    mean_test_map: f64,
    mean_test_ndcg: f64,
}

#[derive(Serialize)]
struct AblationBody<'a> {
    variant: &'a str,
    seeds: &'a [u64],
    rows: Vec<AblationRow>,
    means: Vec<VariantMean>,
}

pub fn ablate(ctx: &Ctx, a: AblateArgs) -> Result<()> {
    let chosen = variants(a.variant);
    let tag = match a.variant {
        VariantArg::All => "all",
        _ => chosen[0].name(),
    };
    let base = resolve_config(&a.config, None)?;
    let data = Dataset::load(&a.data)?;
    let mut rows = Vec::new();
    for &variant in &chosen {
        for &seed in &a.seeds {
            let args = ConfigArgs {
                seed: Some(seed),
                ..a.config.clone()
            };
            let cfg = resolve_config(&args, Some(variant))?;
            let dir = ctx.out.join("ablate").join(format!("{variant}-seed{seed}"));
            let out = train_into(ctx, &data, &cfg, &dir, &format!("{variant} seed {seed} "))?;
            let emb = embeddings(&out.best, &data.split, &out.paths, ctx.parallel)?;
            let link = out.best.config.link_encoder.then_some(&out.best.link);
            let test = evaluate(&emb, link, &data.test_queries, ctx.parallel)?;
            println!("{variant} seed {seed} test_map {:.4} test_ndcg {:.4}", test.map, test.ndcg);
            rows.push(AblationRow {
                variant,
                seed,
                fingerprint: out.report.fingerprint.clone(),
                best_epoch: out.report.best_epoch,
                val_map: out.report.best_val_map,
                test,
                secs: out.report.total_secs,
            });
        }
    }
    let means: Vec<VariantMean> = chosen
        .iter()
        .map(|&v| {
            let runs: Vec<&AblationRow> = rows.iter().filter(|r| r.variant == v).collect();
            let k = runs.len().max(1) as f64;
            VariantMean {
                variant: v,
                runs: runs.len(),
                mean_test_map: runs.iter().map(|r| r.test.map).sum::<f64>() / k,
                mean_test_ndcg: runs.iter().map(|r| r.test.ndcg).sum::<f64>() / k,
            }
        })
        .collect();
    let bars: Vec<(String, f64)> = means.iter().map(|m| (m.variant.to_string(), m.mean_test_map)).collect();
    create_dir(&ctx.out)?;
    write_text(
        &ctx.out.join(format!("ablation-{tag}.svg")),
        &bar_chart("mean test MAP by variant", "MAP", &bars),
    )?;
    write_json(
        &ctx.out.join(format!("ablation-{tag}.json")),
        &Artifact {
            command: "ablate",
            fingerprint: base.fingerprint(),
            seed: base.seed,
            dataset: Some(&data.dir),
            config: &base,
            body: AblationBody {
                variant: tag,
                seeds: &a.seeds,
                rows,
                means,
            },
        },
    )?;
    Ok(())
}

#[derive(Serialize)]
struct ProbeBody<'a> {
    variant: Variant,
    checkpoint: &'a Path,
    probe_config: ProbeConfig,
    classes: &'a [String],
    #[serde(flatten)]
    report: ProbeReport,
    beats_majority: bool,
}

pub fn probe(ctx: &Ctx, a: ProbeArgs) -> Result<()> {
    let l = load_checkpoint(&a.checkpoint, a.config, a.data)?;
    let Some(labels) = &l.data.labels else {
        return Err(Usage(format!(
            "{} has no type labels; prepare it with --labels",
            l.data.dir.display()
        ))
        .into());
    };
    let mut pc = ProbeConfig {
        train_fraction: a.train_fraction,
        ..ProbeConfig::default()
    };
    if let Some(e) = a.epochs {
        pc.epochs = e;
    }
    let split = ProbeSplit::stratified(labels, pc.train_fraction, l.cfg.seed).map_err(usage_on_config)?;
    let emb = l.embeddings(ctx.parallel)?;
    let report = node_type_probe(&emb, labels, &split, &pc)?;
    let out = Artifact {
        command: "probe",
        fingerprint: l.ckpt.fingerprint.clone(),
        seed: l.cfg.seed,
        dataset: Some(&l.data.dir),
        config: &l.cfg,
        body: ProbeBody {
            variant: variant_of(&l.cfg.model),
            checkpoint: &a.checkpoint,
            probe_config: pc,
            classes: &labels.names,
            report,
            beats_majority: report.macro_f > report.majority_macro_f,
        },
    };
    create_dir(&ctx.out)?;
    write_json(&ctx.out.join("probe.json"), &out)?;
    println!("{}", serde_json::to_string(&out)?);
    Ok(())
}

#[derive(Serialize)]
struct BaselineConfig<'a> {
    transe: &'a TransEConfig,
    pseudo_k: usize,
    type_source: &'a str,
}

#[derive(Serialize)]
struct BaselineBody<'a> {
    model: &'a str,
    pseudo_types: &'a Path,
    test: RankMetrics,
    best_epoch: usize,
    best_val_map: Option<f64>,
    total_secs: f64,
    epochs: &'a [TransEEpoch],
}

pub fn transe(ctx: &Ctx, a: TransEArgs) -> Result<()> {
    if a.pseudo_k == 0 {
        return Err(Usage("--pseudo-k must be at least 1".into()).into());
    }
    let data = Dataset::load(&a.data)?;
    let mut tc = TransEConfig {
        seed: a.seed,
        ..TransEConfig::default()
    };
    if let Some(v) = a.dim {
        tc.dim = v;
    }
    if let Some(v) = a.margin {
        tc.margin = v;
    }
    if let Some(v) = a.learning_rate {
        tc.learning_rate = v;
    }
    if let Some(v) = a.batch_size {
        tc.batch_size = v;
    }
    if let Some(v) = a.max_epochs {
        tc.max_epochs = v;
    }
    if let Some(v) = a.patience {
        tc.patience = v;
    }
    if a.steps_per_epoch.is_some() {
        tc.steps_per_epoch = a.steps_per_epoch;
    }
    tc.validate().map_err(usage_on_config)?;

    let split = &data.split;
    let (types, source) = match &a.types {
        Some(p) => {
            if !p.is_file() {
                return Err(Usage(format!("--types {}: no such file", p.display())).into());
            }
            (PseudoTypes::read(p, &data.id_map)?, "file")
        }
        None if a.pseudo_k == 1 => (PseudoTypes::single(data.id_map.len()), "single"),
        None => match split.train_graph.features() {
            Some(f) => (kmeans(f, a.pseudo_k, a.seed, ctx.parallel)?.types, "features"),
            None => {
                let single = PseudoTypes::single(data.id_map.len());
                let first = transe_train(split, &single, &tc, &data.val_queries, ctx.parallel)?;
                let km = kmeans(&first.best.entity, a.pseudo_k, a.seed, ctx.parallel)?;
                (km.types, "transe_embeddings")
            }
        },
    };
    let k = types.k();
    let name = if k == 1 { "TransE".to_string() } else { format!("TransE-{k}") };
    create_dir(&ctx.out)?;
    let types_path = ctx.out.join(format!("pseudo_types_{k}.tsv"));
    types.write(&types_path, &data.id_map)?;
    let out = transe_train(split, &types, &tc, &data.val_queries, ctx.parallel)?;
    for e in &out.epochs {
        let map = e.val.map_or("nan".into(), |m| format!("{:.4}", m.map));
        println!("{name} epoch {} loss {:.6} val_map {map} secs {:.2}", e.epoch, e.loss, e.secs);
    }
    let test = out.best.evaluate(&data.test_queries, ctx.parallel)?;
    let config = BaselineConfig {
        transe: &tc,
        pseudo_k: k,
        type_source: source,
    };
    write_json(
        &ctx.out.join(format!("baseline-{name}.json")),
        &Artifact {
            command: "baseline transe",
            fingerprint: fingerprint(&config),
            seed: tc.seed,
            dataset: Some(&data.dir),
            config: &config,
            body: BaselineBody {
                model: &name,
                pseudo_types: &types_path,
                test,
                best_epoch: out.best_epoch,
                best_val_map: out.best_val_map,
                total_secs: out.total_secs,
                epochs: &out.epochs,
            },
        },
    )?;
    println!("{name} test_map {:.4} test_ndcg {:.4}", test.map, test.ndcg);
    Ok(())
}

#[derive(Serialize)]
struct Ratio {
    from: usize,
    to: usize,
    node_ratio: f64,
    time_ratio: f64,
    /// Time ratio divided by node ratio; at most 1.5 is within linear slack.
    relative: f64,
}

#[derive(Serialize)]
struct ScalingBody<'a> {
    source: String,
    epochs: usize,
    rows: &'a [ScalingRow],
    ratios: Vec<Ratio>,
}

pub fn scaling(ctx: &Ctx, a: ScalingArgs) -> Result<()> {
    if a.epochs == 0 {
        return Err(Usage("--epochs must be at least 1".into()).into());
    }
    let cfg = resolve_config(&a.config, None)?;
    let largest = *a.sizes.iter().max().expect("nonempty list");
    let (base, source, dataset) = match &a.data {
        Some(d) => {
            let data = Dataset::load(d)?;
            let g = LoadedGraph {
                graph: data.split.full_graph.clone(),
                id_map: data.id_map.clone(),
                labels: None,
            };
            (g, d.display().to_string(), Some(d.as_path()))
        }
        None => {
            let synth = SynthConfig::with_nodes(largest + largest / 4, cfg.seed);
            (generate(&synth)?, format!("synthetic {}", synth.node_count()), None)
        }
    };
    if largest > base.graph.node_count() {
        return Err(Usage(format!(
            "--sizes asks for {largest} nodes but the graph has {}",
            base.graph.node_count()
        ))
        .into());
    }
    let graphs = a
        .sizes
        .iter()
        .map(|&s| Ok((s.to_string(), base.bfs_subgraph(0, s)?.graph)))
        .collect::<Result<Vec<_>>>()?;
    let rows = measure_scaling(&graphs, &cfg, a.epochs, ctx.parallel)?;
    for r in &rows {
        println!(
            "nodes {} edges {} steps {} secs_per_epoch {:.3}",
            r.nodes, r.edges, r.steps_per_epoch, r.secs_per_epoch
        );
    }
    let ratios: Vec<Ratio> = rows
        .windows(2)
        .map(|w| {
            let node_ratio = w[1].nodes as f64 / w[0].nodes as f64;
            let time_ratio = w[1].secs_per_epoch / w[0].secs_per_epoch;
            Ratio {
                from: w[0].nodes,
                to: w[1].nodes,
                node_ratio,
                time_ratio,
                relative: time_ratio / node_ratio,
            }
        })
        .collect();
    let measured: Vec<(f64, f64)> = rows.iter().map(|r| (r.nodes as f64, r.secs_per_epoch)).collect();
    let linear: Vec<(f64, f64)> = rows
        .iter()
        .map(|r| {
            let (n0, t0) = (rows[0].nodes as f64, rows[0].secs_per_epoch);
            (r.nodes as f64, t0 * r.nodes as f64 / n0)
        })
        .collect();
    create_dir(&ctx.out)?;
    write_text(
        &ctx.out.join("scaling.svg"),
        &line_chart(
            "seconds per epoch",
            "nodes",
            "seconds",
            &[("measured".into(), measured), ("linear from smallest".into(), linear)],
        ),
    )?;
    write_json(
        &ctx.out.join("scaling.json"),
        &Artifact {
            command: "scaling",
            fingerprint: cfg.fingerprint(),
            seed: cfg.seed,
            dataset,
            config: &cfg,
            body: ScalingBody {
                source,
                epochs: a.epochs,
                rows: &rows,
                ratios,
            },
        },
    )?;
    Ok(())
}
