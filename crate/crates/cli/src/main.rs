use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use shopfocus_core::catalog::{load_catalog, load_taxonomy};
use shopfocus_core::focus::{evaluate_run, TruthExhibition};
use shopfocus_core::fusion::FusionModel;
use shopfocus_core::records::read_jsonl;
use shopfocus_core::NodeId;
use shopfocus_engine::api::serve;
use shopfocus_engine::{default_providers, Engine, EngineConfig, StreamSource};
use shopfocus_simgen::bench::render_all;
use shopfocus_simgen::training::{late_fusion, train_multimodal};
use shopfocus_simgen::{benchmark, gen_scenario, render_streams, BenchParams, NoiseParams, SimWorld, TruthItem};
use tracing::info;

#[derive(Parser)]
#[command(name = "shopfocus", version, about = "Locate exhibited products in livestreams")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one stream through the engine, optionally serving the API meanwhile.
    Run(RunArgs),
    /// Write a synthetic catalog, engine config and stream to a directory.
    Gen(GenArgs),
    /// Train the multimodal model on synthetic streams.
    Train(TrainArgs),
    /// Run the retrieval ablation on synthetic streams and print the table.
    Bench(BenchArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    catalog: PathBuf,
    #[arg(long)]
    taxonomy: PathBuf,
    #[arg(long)]
    detections: PathBuf,
    #[arg(long)]
    transcripts: Option<PathBuf>,
    #[arg(long)]
    comments: Option<PathBuf>,
    /// Fusion model file; defaults to raw descriptors (plus hashed text in multimodal mode).
    #[arg(long)]
    model: Option<PathBuf>,
    /// Engine config (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Serve the HTTP API on this address while the stream runs.
    #[arg(long)]
    bind: Option<String>,
    /// Keep serving after the stream ends, until interrupted.
    #[arg(long, requires = "bind")]
    linger: bool,
    /// Pace ingestion to the record timestamps.
    #[arg(long)]
    realtime: bool,
    #[arg(long)]
    stream_id: Option<String>,
    /// Ground truth (JSONL) to score the segments against.
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Benchmark parameters (TOML); their catalog, scenario and engine sections are used.
    #[arg(long)]
    config: Option<PathBuf>,
    /// No noise, no filler speech, no comments.
    #[arg(long)]
    clean: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Train on this many scenarios, seeded from 1001.
    #[arg(long)]
    scenes: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Evaluate on seeds 1..=N.
    #[arg(long)]
    seeds: Option<u64>,
    /// Retrieval depth for voting and recall.
    #[arg(long)]
    k: Option<usize>,
    /// Also write the full report as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

fn bench_params(path: Option<&Path>) -> Result<BenchParams> {
    match path {
        None => Ok(BenchParams::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))
        }
    }
}

fn default_model(config: &EngineConfig) -> FusionModel {
    let (dv, dt) = (config.visual_dim(), config.features.text_dim);
    if config.retrieval.mode.uses_text() {
        late_fusion(dv, dt, 0.5, 0.2)
    } else {
        FusionModel::identity_visual(dv, dt, 0.2)
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

async fn run(args: RunArgs) -> Result<()> {
    let mut config = match &args.config {
        Some(p) => EngineConfig::load(p)?,
        None => EngineConfig::default(),
    };
    config.realtime |= args.realtime;
    let taxonomy = load_taxonomy(&args.taxonomy)?;
    let catalog = load_catalog(&args.catalog, &taxonomy)?;
    let model = match &args.model {
        Some(p) => FusionModel::load(p)?,
        None => default_model(&config),
    };
    let (visual, text) = default_providers(&config);
    let engine = Arc::new(Engine::new(config, taxonomy, catalog, visual, text, model)?);
    info!(products = engine.products().len(), mode = %engine.config().retrieval.mode, "engine ready");

    let stream_id = args.stream_id.clone().unwrap_or_else(|| {
        let stem = args.detections.file_stem().and_then(|s| s.to_str()).unwrap_or("stream");
        if stem == "detections" { "live".into() } else { stem.into() }
    });
    let source = StreamSource::from_files(&stream_id, &args.detections, args.transcripts.as_deref(), args.comments.as_deref())
        .context("opening stream files")?;

    let (stop_tx, stop_rx) = tokio::sync::oneshot::channel::<()>();
    let server = args.bind.clone().map(|bind| {
        let engine = engine.clone();
        info!(%bind, "serving API");
        tokio::spawn(async move {
            serve(engine, &bind, async {
                stop_rx.await.ok();
            })
            .await
        })
    });

    let summary = {
        let engine = engine.clone();
        tokio::task::spawn_blocking(move || engine.run_stream(source)).await??
    };
    info!(
        frames = summary.frames,
        detections = summary.detections,
        segments = summary.segments,
        "stream finished"
    );

    let state = engine.stream(&stream_id).context("stream vanished")?;
    let records = state.segments(0);
    let mut out = std::io::stdout().lock();
    for r in &records {
        writeln!(out, "{}", serde_json::to_string(r)?)?;
    }
    drop(out);

    if let Some(path) = &args.truth {
        let truth: Vec<TruthItem> = read_jsonl(BufReader::new(File::open(path)?))?;
        let truth: Vec<TruthExhibition> = truth.iter().map(TruthItem::exhibition).collect();
        let categories: Vec<NodeId> = truth.iter().map(|t| t.category.clone()).collect::<BTreeSet<_>>().into_iter().collect();
        let segments: Vec<_> = records.into_iter().map(|r| r.segment).collect();
        let cfg = engine.config();
        let eval = evaluate_run(&segments, &truth, &categories, cfg.retrieval.k, cfg.focus.min_tiou)?;
        info!(recalled = eval.recalled, total = eval.total, mean = eval.report.mean, "recall against truth");
    }

    if let Some(server) = server {
        if args.linger {
            info!("stream done; serving until interrupted");
            tokio::signal::ctrl_c().await?;
        }
        stop_tx.send(()).ok();
        server.await??;
    }
    Ok(())
}

fn gen(args: GenArgs) -> Result<()> {
    let mut params = bench_params(args.config.as_deref())?;
    if args.clean {
        params.scenario.noise = NoiseParams::clean();
    }
    let world = SimWorld::generate(&params.catalog)?;
    let scenario = gen_scenario(&world, args.seed, &params.scenario)?;
    let rendered = render_streams(&world, &scenario);
    rendered.write_dir(&args.out)?;

    let mut w = create(&args.out.join("taxonomy.tsv"))?;
    world.taxonomy.write_tsv(&mut w)?;
    w.flush()?;
    let mut w = create(&args.out.join("catalog.jsonl"))?;
    world.catalog.write_jsonl(&mut w)?;
    w.flush()?;
    std::fs::write(args.out.join("engine.toml"), params.engine.to_toml())?;
    info!(
        dir = %args.out.display(),
        products = world.products.len(),
        detections = rendered.detections.len(),
        exhibitions = rendered.truth.len(),
        "wrote synthetic stream"
    );
    Ok(())
}

fn train(args: TrainArgs) -> Result<()> {
    let mut params = bench_params(args.config.as_deref())?;
    if let Some(n) = args.scenes {
        if n == 0 {
            bail!("--scenes must be positive");
        }
        params.train_seeds = (1001..1001 + n).collect();
    }
    if let Some(e) = args.epochs {
        params.train.epochs = e;
    }
    if let Some(lr) = args.lr {
        params.train.lr = lr;
    }
    if let Some(s) = args.seed {
        params.train.seed = s;
    }
    let world = SimWorld::generate(&params.catalog)?;
    let scenes = render_all(&world, &params.train_seeds, &params.scenario)?;
    let cfg = &params.engine;
    let init = late_fusion(cfg.visual_dim(), cfg.features.text_dim, params.text_weight, 0.2);
    let trained = train_multimodal(&world, &scenes, cfg, init, &params.train)?;
    trained.model.save(&args.out)?;
    info!(
        anchors = trained.anchors,
        first_loss = trained.curve.first().copied().unwrap_or(0.0),
        last_loss = trained.curve.last().copied().unwrap_or(0.0),
        out = %args.out.display(),
        "model trained"
    );
    Ok(())
}

fn bench(args: BenchArgs) -> Result<()> {
    let mut params = bench_params(args.config.as_deref())?;
    if let Some(n) = args.seeds {
        params.seeds = (1..=n).collect();
    }
    if let Some(k) = args.k {
        params.engine.retrieval.k = k;
    }
    let started = std::time::Instant::now();
    let report = benchmark(&params)?;
    println!("{}", report.table());
    info!(seconds = started.elapsed().as_secs_f64(), "benchmark done");
    if let Some(path) = &args.json {
        let mut w = create(path)?;
        serde_json::to_writer_pretty(&mut w, &report)?;
        w.flush()?;
    }
    Ok(())
}

#[tokio::main]
async fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
        )
        .with_writer(std::io::stderr)
        .init();
    match Cli::parse().command {
        Command::Run(a) => run(a).await,
        Command::Gen(a) => gen(a),
        Command::Train(a) => train(a),
        Command::Bench(a) => bench(a),
    }
}
