use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use sphereloc::config::PipelineConfig;
use sphereloc::dataset::{load_frame, write_dataset, Dataset, Split};
use sphereloc::descriptor::{mine_triplets, train_embedding, EmbeddingModel, Triplet, MODEL_MAGIC};
use sphereloc::eval::{
    build_map, encode_frames, prepare_run, recall_at_n, recall_csv, rotation_experiment, selection_csv, selection_experiment,
    timing_breakdown, timing_csv, Benchmark, BenchmarkParams, EncodedFrames, ExperimentReport, Fidelity, RecallCurve,
};
use sphereloc::formats::{read_spheres, write_spheres, RigFile, FSPH_MAGIC};
use sphereloc::map_store::{PlaceMap, MAP_MAGIC};
use sphereloc::pipeline::Pipeline;
use sphereloc::taper::{TaperBank, TAPER_MAGIC};
use sphereloc::voting::vote;
use sphereloc::{Error, Result};

#[derive(Parser)]
#[command(name = "sphereloc", version, about = "Place recognition on the sphere")]
struct Cli {
    /// Pipeline config (TOML); missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed; overrides `seed` and `training.seed` in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Report format on stdout.
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic dataset directory.
    Synth(SynthArgs),
    /// Mine training triplets from a dataset trajectory.
    Mine {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the descriptor embedding.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        /// Precomputed feature spheres (FSPH) for the dataset frames.
        #[arg(long)]
        spheres: Option<PathBuf>,
        /// Triplet CSV; mined from the trajectory when absent.
        #[arg(long)]
        triplets: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a place map; the model is copied next to it as `<map>.embd`.
    BuildMap {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        spheres: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Localize one frame against a map; prints one JSON line.
    Query {
        #[arg(long)]
        map: PathBuf,
        /// Defaults to the map's `.embd` sidecar.
        #[arg(long)]
        model: Option<PathBuf>,
        /// XYZI scan.
        #[arg(long)]
        frame: PathBuf,
        #[arg(long)]
        rig: Option<PathBuf>,
        /// PGM images in rig camera order.
        #[arg(long = "image")]
        images: Vec<PathBuf>,
        #[arg(long, default_value_t = 15)]
        k: usize,
        /// Taper bank (TAPR); built from the config when absent.
        #[arg(long)]
        taper: Option<PathBuf>,
    },
    /// Vote among candidate feature spheres; prints one JSON line.
    Vote {
        /// FSPH file holding the query sphere.
        #[arg(long)]
        query: PathBuf,
        #[arg(long, default_value_t = 0)]
        query_index: usize,
        /// FSPH file holding the candidate spheres.
        #[arg(long)]
        candidates: PathBuf,
        #[arg(long)]
        taper: Option<PathBuf>,
    },
    /// Run an experiment on a synthetic benchmark.
    Eval(EvalArgs),
    /// Write the taper bank for the configured grid.
    TaperGen {
        #[arg(long)]
        out: PathBuf,
    },
    /// Project dataset frames onto the grid (FSPH).
    Project {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Keep only the LiDAR channels.
        #[arg(long)]
        lidar_only: bool,
    },
}

#[derive(Args)]
struct BenchArgs {
    /// Benchmark parameters (TOML); flags below override it.
    #[arg(long)]
    bench: Option<PathBuf>,
    #[arg(long)]
    places: Option<usize>,
    #[arg(long)]
    queries: Option<usize>,
    #[arg(long, value_enum)]
    map_setup: Option<Setup>,
    #[arg(long, value_enum)]
    query_setup: Option<Setup>,
    #[arg(long)]
    lidar_only: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Setup {
    High,
    Low,
}

impl From<Setup> for Fidelity {
    fn from(s: Setup) -> Self {
        match s {
            Setup::High => Fidelity::High,
            Setup::Low => Fidelity::Low,
        }
    }
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitArg::Map)]
    split: SplitArg,
    #[command(flatten)]
    bench: BenchArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Map,
    Query,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(value_enum)]
    experiment: Experiment,
    /// Output directory for CSV files and `summary.json`.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    bench: BenchArgs,
    /// Yaw angles in degrees (rotation).
    #[arg(long, value_delimiter = ',', default_values_t = [0.0, 45.0, 90.0, 135.0, 180.0])]
    angles: Vec<f64>,
    /// Largest n of the recall curve.
    #[arg(long, default_value_t = 15)]
    n_max: usize,
    /// Candidate counts (selection).
    #[arg(long, value_delimiter = ',', default_values_t = [1, 5, 10, 15])]
    ks: Vec<usize>,
    /// Timed queries (timing).
    #[arg(long, default_value_t = 1000)]
    samples: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum Experiment {
    Recall,
    Rotation,
    Selection,
    Timing,
}

impl Experiment {
    fn name(self) -> &'static str {
        match self {
            Experiment::Recall => "recall",
            Experiment::Rotation => "rotation",
            Experiment::Selection => "selection",
            Experiment::Timing => "timing",
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            eprintln!("{}", text.lines().next().unwrap_or("invalid arguments"));
            return ExitCode::from(2);
        }
    };
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
        )
        .with_writer(std::io::stderr)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.to_string().replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    let config = resolve_config(&cli)?;
    match cli.command {
        Command::Synth(a) => synth(&config, &a),
        Command::Mine { dataset, out } => mine(&config, &dataset, &out),
        Command::Train {
            dataset,
            spheres,
            triplets,
            out,
        } => train(&config, &dataset, spheres.as_deref(), triplets.as_deref(), &out),
        Command::BuildMap {
            dataset,
            model,
            spheres,
            out,
        } => build(&config, &dataset, &model, spheres.as_deref(), &out),
        Command::Query {
            map,
            model,
            frame,
            rig,
            images,
            k,
            taper,
        } => query(&config, &map, model.as_deref(), &frame, rig.as_deref(), &images, k, taper.as_deref()),
        Command::Vote {
            query,
            query_index,
            candidates,
            taper,
        } => vote_cmd(&config, &query, query_index, &candidates, taper.as_deref()),
        Command::Eval(a) => eval(&config, &a, cli.format),
        Command::TaperGen { out } => taper_gen(&config, &out),
        Command::Project { dataset, out, lidar_only } => project(&config, &dataset, &out, lidar_only),
    }
}

fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var("SPHERELOC_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("`SPHERELOC_THREADS`: expected a count, got {value:?}")))?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("`SPHERELOC_THREADS`: {e}")))?;
    }
    Ok(())
}

fn resolve_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut config = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        config.seed = s;
        config.training.seed = s;
    }
    config.validate()?;
    tracing::info!("resolved config:\n{}", config.to_toml()?);
    Ok(config)
}

fn bench_params(config: &PipelineConfig, a: &BenchArgs) -> Result<BenchmarkParams> {
    let mut p: BenchmarkParams = match &a.bench {
        Some(path) => toml::from_str(&std::fs::read_to_string(path)?).map_err(|e| Error::Config(e.message().to_string()))?,
        None => BenchmarkParams::default(),
    };
    p.seed = config.seed;
    if let Some(v) = a.places {
        p.places = v;
    }
    if let Some(v) = a.queries {
        p.queries = v;
    }
    if let Some(v) = a.map_setup {
        p.map_setup = v.into();
    }
    if let Some(v) = a.query_setup {
        p.query_setup = v.into();
    }
    p.lidar_only |= a.lidar_only;
    p.validate()?;
    tracing::info!("benchmark parameters:\n{}", toml::to_string(&p).map_err(|e| Error::Config(e.to_string()))?);
    Ok(p)
}

/// Confirms that `path` was written and starts with `magic`.
fn check_magic(path: &Path, magic: &[u8]) -> Result<()> {
    let bytes = std::fs::read(path)?;
    if !bytes.starts_with(magic) {
        return Err(Error::Format {
            offset: 0,
            message: format!("{} does not start with {:?}", path.display(), String::from_utf8_lossy(magic)),
        });
    }
    Ok(())
}

fn synth(config: &PipelineConfig, a: &SynthArgs) -> Result<()> {
    let bench = Benchmark::generate(bench_params(config, &a.bench)?)?;
    let split = match a.split {
        SplitArg::Map => Split::Map,
        SplitArg::Query => Split::Query,
    };
    let n = write_dataset(&a.out, &bench, split)?;
    Dataset::open(&a.out)?;
    tracing::info!(frames = n, dir = %a.out.display(), "dataset written");
    Ok(())
}

const TRIPLET_HEADER: &str = "anchor,positive,negative";

fn write_triplets(path: &Path, triplets: &[Triplet]) -> Result<()> {
    let mut text = format!("{TRIPLET_HEADER}\n");
    for t in triplets {
        text.push_str(&format!("{},{},{}\n", t.anchor, t.positive, t.negative));
    }
    std::fs::write(path, text)?;
    check_magic(path, TRIPLET_HEADER.as_bytes())
}

fn read_triplets(path: &Path) -> Result<Vec<Triplet>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(TRIPLET_HEADER) {
        return Err(Error::Format {
            offset: 0,
            message: format!("{} lacks the `{TRIPLET_HEADER}` header", path.display()),
        });
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let ids: Vec<usize> = l.split(',').map(|f| f.trim().parse()).collect::<std::result::Result<_, _>>().map_err(|_| {
                Error::Format {
                    offset: 0,
                    message: format!("{} line {}: expected three ids", path.display(), i + 2),
                }
            })?;
            match ids[..] {
                [anchor, positive, negative] => Ok(Triplet { anchor, positive, negative }),
                _ => Err(Error::Format {
                    offset: 0,
                    message: format!("{} line {}: expected three ids", path.display(), i + 2),
                }),
            }
        })
        .collect()
}

fn mine(config: &PipelineConfig, dataset: &Path, out: &Path) -> Result<()> {
    let ds = Dataset::open(dataset)?;
    let triplets = mine_triplets(&ds.positions(), &config.mining, config.seed)?;
    write_triplets(out, &triplets)?;
    tracing::info!(triplets = triplets.len(), "triplets written");
    Ok(())
}

fn encode_dataset(pipeline: &Pipeline, ds: &Dataset, spheres: Option<&Path>) -> Result<EncodedFrames> {
    match spheres {
        Some(path) => {
            let spheres = read_spheres(path)?;
            if spheres.len() != ds.len() {
                return Err(Error::InvalidParameter(format!(
                    "{} holds {} spheres for {} poses",
                    path.display(),
                    spheres.len(),
                    ds.len()
                )));
            }
            let features = spheres.iter().map(|s| pipeline.features(s)).collect::<Result<Vec<_>>>()?;
            Ok(EncodedFrames { spheres, features })
        }
        None => encode_frames(pipeline, ds.len(), |i| ds.frame(i)),
    }
}

fn train(config: &PipelineConfig, dataset: &Path, spheres: Option<&Path>, triplets: Option<&Path>, out: &Path) -> Result<()> {
    let pipeline = Pipeline::new(config.clone())?;
    let ds = Dataset::open(dataset)?;
    let encoded = encode_dataset(&pipeline, &ds, spheres)?;
    let triplets = match triplets {
        Some(p) => read_triplets(p)?,
        None => mine_triplets(&ds.positions(), &config.mining, config.seed)?,
    };
    if triplets.is_empty() {
        return Err(Error::InvalidParameter("no training triplets".into()));
    }
    let initial = EmbeddingModel::random(encoded.features[0].len(), config.training.seed)?;
    let outcome = train_embedding(initial, &encoded.features, &triplets, &config.training)?;
    tracing::info!(
        triplets = triplets.len(),
        initial_loss = outcome.loss_trace[0],
        final_loss = outcome.loss_trace.last().copied().unwrap_or(f64::NAN),
        "training finished"
    );
    outcome.model.save(out)?;
    check_magic(out, MODEL_MAGIC)
}

fn sidecar(map: &Path) -> PathBuf {
    map.with_extension("embd")
}

fn build(config: &PipelineConfig, dataset: &Path, model: &Path, spheres: Option<&Path>, out: &Path) -> Result<()> {
    let pipeline = Pipeline::new(config.clone())?;
    let ds = Dataset::open(dataset)?;
    let model = EmbeddingModel::load(model)?;
    let encoded = encode_dataset(&pipeline, &ds, spheres)?;
    let map = build_map(&model, &encoded, &ds.poses)?;
    map.save(out)?;
    check_magic(out, MAP_MAGIC)?;
    let side = sidecar(out);
    model.save(&side)?;
    check_magic(&side, MODEL_MAGIC)?;
    tracing::info!(entries = map.len(), map = %out.display(), model = %side.display(), "map written");
    Ok(())
}

fn pipeline_with(config: &PipelineConfig, taper: Option<&Path>) -> Result<Pipeline> {
    match taper {
        Some(p) => {
            let grid = sphereloc::SphericalGrid::new(config.grid.bandwidth)?;
            Pipeline::with_bank(config.clone(), TaperBank::load(p, &grid)?)
        }
        None => Pipeline::new(config.clone()),
    }
}

#[allow(clippy::too_many_arguments)]
fn query(
    config: &PipelineConfig,
    map_path: &Path,
    model: Option<&Path>,
    frame: &Path,
    rig: Option<&Path>,
    images: &[PathBuf],
    k: usize,
    taper: Option<&Path>,
) -> Result<()> {
    let pipeline = pipeline_with(config, taper)?;
    let map = PlaceMap::load(map_path)?;
    let model = EmbeddingModel::load(model.map(Path::to_path_buf).unwrap_or_else(|| sidecar(map_path)))?;
    let rig = rig.map(RigFile::load).transpose()?;
    let frame = load_frame(frame, rig.as_ref(), images)?;
    let sphere = pipeline.project(&frame)?.quantized();
    let out = pipeline.query(&map, &model, &sphere, k, None)?;
    let ids: Vec<u32> = out.candidates.iter().map(|c| map.entry(c.index).id).collect();
    let line = json!({
        "candidates": ids,
        "distances": out.candidates.iter().map(|c| c.sq_dist.sqrt()).collect::<Vec<_>>(),
        "scores": out.vote.scores,
        "selected": map.entry(out.selected_id).id,
        "margin": out.vote.margin.is_finite().then_some(out.vote.margin),
        "pose": map.entry(out.selected_id).pose.to_array(),
    });
    println!("{line}");
    Ok(())
}

fn vote_cmd(config: &PipelineConfig, query: &Path, index: usize, candidates: &Path, taper: Option<&Path>) -> Result<()> {
    let pipeline = pipeline_with(config, taper)?;
    let queries = read_spheres(query)?;
    let q = queries.get(index).ok_or_else(|| {
        Error::InvalidParameter(format!("query index {index} out of range for {} spheres", queries.len()))
    })?;
    let cands = read_spheres(candidates)?;
    let result = vote(q, &cands, pipeline.analyzer(), config.voting.vote_config())?;
    let line = json!({
        "selected": result.selected,
        "scores": result.scores,
        "margin": result.margin.is_finite().then_some(result.margin),
    });
    println!("{line}");
    Ok(())
}

fn write_checked(path: &Path, text: &str, header: &str) -> Result<()> {
    std::fs::write(path, text)?;
    check_magic(path, header.as_bytes())
}

fn eval(config: &PipelineConfig, a: &EvalArgs, format: Format) -> Result<()> {
    let mut params = bench_params(config, &a.bench)?;
    if matches!(a.experiment, Experiment::Rotation) && !params.lidar_only {
        tracing::info!("rotation lookup uses LiDAR channels only; dropping cameras");
        params.lidar_only = true;
    }
    let pipeline = Pipeline::new(config.clone())?;
    let bench = Benchmark::generate(params.clone())?;
    let parameters = json!({
        "benchmark": params,
        "angles": a.angles,
        "n_max": a.n_max,
        "ks": a.ks,
        "samples": a.samples,
    });
    let mut report = ExperimentReport::new(a.experiment.name(), parameters, config)?;
    let run = prepare_run(&pipeline, &bench)?;
    report.stage_ms = run.stage_ms.clone();
    let radius = config.eval.success_radius;
    std::fs::create_dir_all(&a.out)?;
    let csv = match a.experiment {
        Experiment::Recall => {
            let recall = recall_at_n(&run.map, &run.queries, a.n_max, radius)?;
            report.recall = vec![RecallCurve { angle_deg: None, recall }];
            let text = recall_csv(&report.recall);
            write_checked(&a.out.join("recall.csv"), &text, "n,recall")?;
            text
        }
        Experiment::Rotation => {
            let outcome = rotation_experiment(
                &pipeline,
                &run.model,
                |i| Ok(bench.map_frame(i)?.scan),
                &bench.map_positions(),
                &a.angles,
                &run.queries,
                a.n_max,
                radius,
            )?;
            tracing::info!(max_feature_diff = outcome.max_feature_diff, "rotated maps encoded");
            report.recall = outcome.curves;
            let text = recall_csv(&report.recall);
            write_checked(&a.out.join("recall.csv"), &text, "angle,n,recall")?;
            text
        }
        Experiment::Selection => {
            let outcome = selection_experiment(&pipeline, &run.map, &run.prepared, &run.queries, &run.query_spheres, &a.ks, radius)?;
            report.selection = outcome.rows;
            report.trials = outcome.trials;
            let text = selection_csv(&report.selection);
            write_checked(&a.out.join("selection.csv"), &text, "k,wrong_rate")?;
            text
        }
        Experiment::Timing => {
            let frames = (0..bench.query_poses.len().min(10))
                .map(|i| bench.query_frame(i))
                .collect::<Result<Vec<_>>>()?;
            let k = a.ks.last().copied().unwrap_or(15);
            let outcome = timing_breakdown(&pipeline, &run.model, &run.map, &frames, k, a.samples)?;
            report.timing = outcome.components;
            report.timing.push(outcome.total);
            let text = timing_csv(&report.timing);
            write_checked(&a.out.join("timing.csv"), &text, "component,mean_ms,std_ms")?;
            text
        }
    };
    let summary = report.to_json()?;
    let path = a.out.join("summary.json");
    std::fs::write(&path, &summary)?;
    serde_json::from_str::<serde_json::Value>(&std::fs::read_to_string(&path)?)
        .map_err(|e| Error::Format { offset: 0, message: format!("{}: {e}", path.display()) })?;
    match format {
        Format::Json => println!("{}", serde_json::to_string(&report).map_err(|e| Error::InvalidParameter(e.to_string()))?),
        Format::Csv => print!("{csv}"),
    }
    Ok(())
}

fn taper_gen(config: &PipelineConfig, out: &Path) -> Result<()> {
    let grid = sphereloc::SphericalGrid::new(config.grid.bandwidth)?;
    let bank = TaperBank::from_params(&config.taper, &grid)?;
    bank.save(out)?;
    check_magic(out, TAPER_MAGIC)?;
    tracing::info!(tapers = bank.len(), concentrations = ?bank.concentrations(), "taper bank written");
    Ok(())
}

fn project(config: &PipelineConfig, dataset: &Path, out: &Path, lidar_only: bool) -> Result<()> {
    let pipeline = Pipeline::new(config.clone())?;
    let ds = Dataset::open(dataset)?;
    let mut encoded = encode_frames(&pipeline, ds.len(), |i| ds.frame(i))?;
    if lidar_only {
        encoded.spheres = encoded.spheres.iter().map(|s| s.lidar_only()).collect();
    }
    write_spheres(out, &encoded.spheres)?;
    check_magic(out, FSPH_MAGIC)?;
    tracing::info!(spheres = encoded.spheres.len(), "feature spheres written");
    Ok(())
}
