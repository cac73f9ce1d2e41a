use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use playtree::ingest::{
    extract_windows, generate_synthetic, near_duplicates, parse_tracking, read_plays, write_labels, write_plays, DuplicateSpec,
    ExtractConfig, OffenseRule, SyntheticSpec,
};
use playtree::model::{validate_play, AgentSelection, GameId, Play, RosterConfig};
use playtree::retrieval::{build_index, IndexConfig, PlayIndex};
use playtree::{CostMetric, KRange, Method, TreeConfig};
use playtree_service::{run_query, AppState, QueryRequest, ServiceConfig, WirePlay};

mod eval;

#[derive(Parser)]
#[command(name = "playtree", version, about = "Align, index and search multi-agent plays")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic corpus with ground-truth labels.
    Generate(GenerateArgs),
    /// Cut tracking files into validated plays.
    Ingest(IngestArgs),
    /// Build an index directory from a play store.
    Build(BuildArgs),
    /// Rank indexed plays against a query play.
    Query(QueryArgs),
    /// Compressibility, retrieval metrics and interleaving.
    Eval(eval::EvalArgs),
    /// Run the HTTP query service.
    Serve(ServeArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, default_value_t = 8)]
    formations: usize,
    #[arg(long, default_value_t = 250)]
    plays_per_formation: usize,
    /// Per-frame noise standard deviation, feet.
    #[arg(long, default_value_t = 1.0)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    window_seconds: u32,
    /// Formation movement over the window, feet.
    #[arg(long)]
    motion: Option<f64>,
    /// Smooth per-play deviation from the formation, feet.
    #[arg(long)]
    jitter: Option<f64>,
    /// Near-duplicates written for each duplicated play.
    #[arg(long, default_value_t = 0)]
    duplicates: usize,
    /// Duplicate every n-th play.
    #[arg(long, default_value_t = 1)]
    duplicate_every: usize,
    #[arg(long, default_value_t = 2.0)]
    duplicate_jitter: f64,
    #[arg(long, default_value_t = 0.5)]
    duplicate_noise: f64,
    /// Play store output.
    #[arg(long)]
    out: PathBuf,
    /// Label sidecar: play_id,formation_label,true_permutation.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Judgments marking each duplicated play and its copies relevant to
    /// each other (query id = source play id).
    #[arg(long)]
    judgments: Option<PathBuf>,
}

#[derive(Args)]
struct IngestArgs {
    /// Tracking files; the game id is the file stem.
    inputs: Vec<PathBuf>,
    /// File listing tracking files, one per line, relative to the manifest.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Window lengths to extract, seconds.
    #[arg(long, value_delimiter = ',', default_values_t = [1u32, 2, 3, 4, 5])]
    window_seconds: Vec<u32>,
    #[arg(long, default_value_t = 1.0)]
    stride: f64,
    /// Treat this team id as offense in every window instead of the team
    /// nearest the ball.
    #[arg(long)]
    offense_team: Option<i64>,
    #[arg(long, default_value_t = 5)]
    players_per_team: usize,
    #[arg(long, default_value_t = 25.0)]
    sample_rate: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Euclidean,
    Squared,
}

impl From<MetricArg> for CostMetric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Euclidean => CostMetric::Euclidean,
            MetricArg::Squared => CostMetric::Squared,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Tree,
    Baseline,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Tree => Method::Tree,
            MethodArg::Baseline => Method::Baseline,
        }
    }
}

#[derive(Args, Clone)]
pub(crate) struct TreeArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 2000)]
    max_leaf_size: usize,
    #[arg(long, default_value_t = 6)]
    max_depth: usize,
    #[arg(long, default_value = "2..10")]
    k_range: KRange,
    #[arg(long, value_enum, default_value = "squared")]
    metric: MetricArg,
    /// Fit each node's K-means on at most this many plays (0 = all).
    #[arg(long, default_value_t = 4000)]
    partition_sample: usize,
}

impl TreeArgs {
    pub(crate) fn config(&self) -> TreeConfig {
        let mut cfg = TreeConfig::with_seed(self.seed);
        cfg.max_leaf_size = self.max_leaf_size;
        cfg.max_depth = self.max_depth;
        cfg.k_range = self.k_range;
        cfg.template.cost_metric = self.metric.into();
        cfg.partition_sample_limit = (self.partition_sample > 0).then_some(self.partition_sample);
        cfg
    }
}

#[derive(Args)]
struct BuildArgs {
    /// Play store.
    #[arg(long)]
    plays: PathBuf,
    /// Index directory.
    #[arg(long)]
    out: PathBuf,
    /// Only index these window lengths.
    #[arg(long, value_delimiter = ',')]
    window_seconds: Vec<u32>,
    #[command(flatten)]
    tree: TreeArgs,
    /// Leaves probed per query.
    #[arg(long, default_value_t = 1)]
    probe_leaves: usize,
    /// Skip the ball-only baseline.
    #[arg(long)]
    no_baseline: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Table,
    Csv,
    Json,
}

#[derive(Args)]
struct QueryArgs {
    #[arg(long)]
    index: PathBuf,
    /// Use an indexed play as the query.
    #[arg(long, conflicts_with = "play_file")]
    play_id: Option<String>,
    /// Use the first play (or --play-position) of a play store file.
    #[arg(long)]
    play_file: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    play_position: usize,
    /// Selected agents in the query's own order (offense 0..M, defense M..2M).
    #[arg(long, value_delimiter = ',')]
    agents: Vec<usize>,
    /// Select the ball.
    #[arg(long)]
    ball: bool,
    /// Select every agent and the ball.
    #[arg(long)]
    all: bool,
    /// Agents actually observed; the rest are filled from the root templates.
    #[arg(long, value_delimiter = ',')]
    present: Option<Vec<usize>>,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long, value_enum, default_value = "tree")]
    method: MethodArg,
    /// play_id=factor, repeatable.
    #[arg(long = "boost")]
    boosts: Vec<String>,
    /// Query id written in csv output.
    #[arg(long)]
    query_id: Option<String>,
    #[arg(long, value_enum, default_value = "table")]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, env = "PLAYTREE_INDEX")]
    index: Option<PathBuf>,
    #[arg(long, env = "PLAYTREE_LISTEN", default_value = "127.0.0.1:8080")]
    listen: String,
    #[arg(long, env = "PLAYTREE_K", default_value_t = 10)]
    k: usize,
    #[arg(long, env = "PLAYTREE_METHOD", value_enum, default_value = "tree")]
    method: MethodArg,
}

fn main() {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(a) => generate(a),
        Command::Ingest(a) => ingest(a),
        Command::Build(a) => build(a),
        Command::Query(a) => query(a),
        Command::Eval(a) => eval::run(a),
        Command::Serve(a) => serve(a),
    }
}

pub(crate) fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(fs::File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

pub(crate) fn load_plays(path: &Path) -> Result<Vec<Play<f32>>> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_plays(BufReader::new(file)).with_context(|| format!("reading {}", path.display()))
}

fn generate(a: GenerateArgs) -> Result<()> {
    let mut spec = SyntheticSpec::new(a.formations, a.plays_per_formation, a.noise, a.seed);
    spec.window_seconds = a.window_seconds;
    if let Some(m) = a.motion {
        spec.motion_ft = m;
    }
    if let Some(j) = a.jitter {
        spec.jitter_ft = j;
    }
    let corpus = generate_synthetic::<f64>(&spec)?;
    let mut plays = corpus.plays.clone();
    let mut labels = corpus.labels.clone();
    let mut judgments = String::from("query_id,play_id,relevant\n");
    if a.duplicates > 0 {
        if a.duplicate_every == 0 {
            bail!("--duplicate-every must be at least 1");
        }
        for (i, (play, label)) in corpus.plays.iter().zip(&corpus.labels).enumerate().step_by(a.duplicate_every) {
            let dup = DuplicateSpec {
                count: a.duplicates,
                jitter_ft: a.duplicate_jitter,
                noise_ft: a.duplicate_noise,
                seed: duplicate_seed(a.seed, i),
            };
            judgments.push_str(&format!("{0},{0},1\n", play.play_id));
            for (copy, shuffle) in near_duplicates(play, &dup)? {
                judgments.push_str(&format!("{},{},1\n", play.play_id, copy.play_id));
                labels.push(playtree::ingest::SyntheticLabel {
                    play_id: copy.play_id.clone(),
                    formation: label.formation,
                    true_permutation: label.true_permutation.then(&shuffle),
                });
                plays.push(copy);
            }
        }
    }
    write_plays(create(&a.out)?, &plays)?;
    if let Some(path) = &a.labels {
        write_labels(create(path)?, &labels)?;
    }
    if let Some(path) = &a.judgments {
        create(path)?.write_all(judgments.as_bytes())?;
    }
    eprintln!("wrote {} plays to {}", plays.len(), a.out.display());
    Ok(())
}

fn duplicate_seed(seed: u64, i: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (i as u64).wrapping_add(0x51)
}

fn ingest(a: IngestArgs) -> Result<()> {
    let mut inputs = a.inputs.clone();
    if let Some(manifest) = &a.manifest {
        let text = fs::read_to_string(manifest).with_context(|| format!("reading {}", manifest.display()))?;
        let base = manifest.parent().unwrap_or(Path::new("."));
        inputs.extend(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(|l| base.join(l)),
        );
    }
    if inputs.is_empty() {
        bail!("no tracking files given");
    }
    let roster = RosterConfig {
        players_per_team: a.players_per_team,
        sample_rate_hz: a.sample_rate,
    };
    let cfg = ExtractConfig {
        window_lengths: a.window_seconds.clone(),
        stride_seconds: a.stride,
        offense: a.offense_team.map_or(OffenseRule::BallProximity, OffenseRule::Team),
        roster,
    };
    let mut plays: Vec<Play<f64>> = Vec::new();
    for path in &inputs {
        let game = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .with_context(|| format!("no file name in {}", path.display()))?;
        let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
        let stream = parse_tracking(BufReader::new(file), GameId(game), &roster).with_context(|| format!("parsing {}", path.display()))?;
        let windows = extract_windows(&stream, &cfg).with_context(|| format!("windowing {}", path.display()))?;
        for play in &windows {
            if let Some(v) = validate_play(play, &roster).first() {
                bail!("{} fails validation: {v}", play.play_id);
            }
        }
        eprintln!("{}: {} frames, {} plays", path.display(), stream.frames.len(), windows.len());
        plays.extend(windows);
    }
    write_plays(create(&a.out)?, &plays)?;
    eprintln!("wrote {} plays to {}", plays.len(), a.out.display());
    Ok(())
}

fn build(a: BuildArgs) -> Result<()> {
    let mut plays = load_plays(&a.plays)?;
    if !a.window_seconds.is_empty() {
        plays.retain(|p| a.window_seconds.contains(&p.window_seconds));
    }
    if plays.is_empty() {
        bail!("no plays to index");
    }
    let cfg = IndexConfig {
        tree: a.tree.config(),
        probe_leaves: a.probe_leaves,
        build_baseline: !a.no_baseline,
    };
    let started = Instant::now();
    let index = build_index(plays, &cfg)?;
    index.save_dir(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
    for w in index.stats().windows {
        eprintln!(
            "{} s: {} plays, depth {}, {} leaves (largest {}), layer costs {:?}",
            w.window_seconds, w.plays, w.depth, w.leaf_count, w.max_leaf_size, w.layer_costs
        );
    }
    eprintln!("built in {:.1?}", started.elapsed());
    Ok(())
}

fn parse_boosts(raw: &[String]) -> Result<BTreeMap<String, f64>> {
    raw.iter()
        .map(|b| {
            let (id, f) = b.split_once('=').with_context(|| format!("boost {b:?} is not play_id=factor"))?;
            Ok((id.to_string(), f.parse().with_context(|| format!("bad boost factor in {b:?}"))?))
        })
        .collect()
}

fn query(a: QueryArgs) -> Result<()> {
    let index = PlayIndex::<f32>::load_dir(&a.index).with_context(|| format!("loading {}", a.index.display()))?;
    let play = match (&a.play_id, &a.play_file) {
        (Some(id), _) => index
            .play(&playtree::PlayId(id.clone()))
            .with_context(|| format!("unknown play {id}"))?
            .clone(),
        (None, Some(path)) => load_plays(path)?
            .into_iter()
            .nth(a.play_position)
            .with_context(|| format!("{} has no play at position {}", path.display(), a.play_position))?,
        (None, None) => bail!("give --play-id or --play-file"),
    };
    let selected = if a.all {
        AgentSelection::all(play.players_per_team)
    } else {
        AgentSelection::new(a.agents.iter().copied(), a.ball)
    };
    let query_id = a.query_id.clone().unwrap_or_else(|| play.play_id.0.clone());
    let method: Method = a.method.into();
    let request = QueryRequest {
        play: WirePlay::from(&play),
        selected,
        k: Some(a.k),
        method: Some(method),
        boosts: parse_boosts(&a.boosts)?,
        present: a.present.as_ref().map(|p| AgentSelection::new(p.iter().copied(), true)),
    };
    let started = Instant::now();
    let response = run_query(&index, request, ServiceConfig::default())?;
    let elapsed = started.elapsed();
    let mut out = String::new();
    match a.format {
        Format::Json => out = serde_json::to_string_pretty(&response)? + "\n",
        Format::Csv => {
            out.push_str("query_id,method,rank,play_id,distance\n");
            for r in &response.results {
                out.push_str(&format!("{query_id},{method},{},{},{}\n", r.rank, r.play_id, r.distance));
            }
        }
        Format::Table => {
            out.push_str(&format!("{:>4}  {:<28} {:>12}\n", "rank", "play", "distance"));
            for r in &response.results {
                out.push_str(&format!("{:>4}  {:<28} {:>12.3}\n", r.rank, r.play_id, r.distance));
            }
        }
    }
    match &a.out {
        Some(path) => create(path)?.write_all(out.as_bytes())?,
        None => std::io::stdout().write_all(out.as_bytes())?,
    }
    eprintln!("{} candidates from keys {:?} in {elapsed:.1?}", response.candidates, response.keys);
    Ok(())
}

fn serve(a: ServeArgs) -> Result<()> {
    let config = ServiceConfig {
        default_k: a.k,
        default_method: a.method.into(),
    };
    let state = AppState::new(config);
    if let Some(dir) = &a.index {
        state.load(dir).map_err(|e| anyhow::anyhow!("{e}"))?;
    }
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(&a.listen)
            .await
            .with_context(|| format!("binding {}", a.listen))?;
        eprintln!("listening on {}", listener.local_addr()?);
        playtree_service::serve(listener, state).await?;
        Ok(())
    })
}
