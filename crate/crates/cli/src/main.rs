use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use geoagg_core::bench::{self, BenchPlan, Viewport};
use geoagg_core::ingest::{load_file, DEFAULT_BATCH_SIZE};
use geoagg_core::simulator::{simulate, GridSpec, RoadNetwork, SimConfig, SpeedRange};
use geoagg_core::{BoundingBox, ColumnarStore, GeoPoint, Retriever, ZoomLevel};
use geoagg_server::wire::ExtentJson;
use geoagg_server::{HttpRetriever, ServerConfig};
use serde::Deserialize;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

/// Spatial event aggregation engine.
///
/// Options showing an `[env: GEOAGG_...]` hint can also be set through that
/// environment variable. Log verbosity follows GEOAGG_LOG (default `info`).
#[derive(Parser)]
#[command(name = "geoagg", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic street-grid road network as JSON.
    GenNetwork(GenNetworkArgs),
    /// Drive simulated vehicles over a road network and emit NDJSON events.
    Simulate(SimulateArgs),
    /// Load NDJSON events into a store and report what was accepted.
    Ingest(IngestArgs),
    /// Serve the HTTP API over a store.
    Serve(ServeArgs),
    /// Run the viewport latency benchmark.
    Bench(BenchArgs),
}

#[derive(Args)]
struct GridArgs {
    /// Latitude of the south-west grid corner.
    #[arg(long, default_value_t = 43.0, allow_hyphen_values = true)]
    south: f64,
    /// Longitude of the south-west grid corner.
    #[arg(long, default_value_t = -8.8, allow_hyphen_values = true)]
    west: f64,
    #[arg(long, default_value_t = 20)]
    rows: usize,
    #[arg(long, default_value_t = 20)]
    cols: usize,
    /// Distance between neighbouring intersections, degrees.
    #[arg(long, default_value_t = 0.01)]
    spacing: f64,
    /// Every n-th row and column is a faster arterial road (0 = none).
    #[arg(long, default_value_t = 5)]
    arterial_every: usize,
    /// m/s
    #[arg(long, default_value_t = 25.0)]
    arterial_speed: f64,
    /// m/s
    #[arg(long, default_value_t = 13.9)]
    street_speed: f64,
}

impl GridArgs {
    fn spec(&self) -> GridSpec {
        GridSpec {
            south_west: GeoPoint::new(self.south, self.west),
            rows: self.rows,
            cols: self.cols,
            spacing_deg: self.spacing,
            arterial_every: self.arterial_every,
            arterial_speed: self.arterial_speed,
            street_speed: self.street_speed,
        }
    }
}

#[derive(Args)]
struct GenNetworkArgs {
    #[command(flatten)]
    grid: GridArgs,
    /// Output file; stdout when omitted.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Road network JSON; a generated grid when omitted.
    #[arg(long, env = "GEOAGG_NETWORK")]
    network: Option<PathBuf>,
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long, default_value_t = 50, env = "GEOAGG_DRIVERS")]
    drivers: u32,
    #[arg(long, default_value_t = 0, env = "GEOAGG_SEED")]
    seed: u64,
    /// Epoch milliseconds of the first tick.
    #[arg(long, default_value_t = 1_514_764_800_000)]
    start_ts: i64,
    /// Slowest speed as a fraction of the segment speed limit.
    #[arg(long, default_value_t = 0.8)]
    speed_min: f64,
    /// Fastest speed as a fraction of the segment speed limit.
    #[arg(long, default_value_t = 1.1)]
    speed_max: f64,
    /// Output file; stdout when omitted.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DataArgs {
    /// NDJSON event files to load at startup.
    #[arg(long = "data", value_name = "FILE")]
    data: Vec<PathBuf>,
    /// Snapshot file to load at startup.
    #[arg(long, env = "GEOAGG_SNAPSHOT")]
    snapshot: Option<PathBuf>,
    /// Maximum number of stored events (0 = unbounded).
    #[arg(long, default_value_t = 0, env = "GEOAGG_CAPACITY")]
    capacity: u64,
    /// Events per ingest batch.
    #[arg(long, default_value_t = DEFAULT_BATCH_SIZE, env = "GEOAGG_BATCH_SIZE")]
    batch_size: usize,
}

impl DataArgs {
    fn load(&self) -> Result<ColumnarStore> {
        let store = match &self.snapshot {
            Some(path) => {
                let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
                let store =
                    ColumnarStore::load_snapshot(file).with_context(|| format!("loading {}", path.display()))?;
                tracing::info!(events = store.len(), path = %path.display(), "snapshot loaded");
                store
            }
            None if self.capacity > 0 => ColumnarStore::with_capacity_limit(self.capacity),
            None => ColumnarStore::new(),
        };
        for path in &self.data {
            let started = Instant::now();
            let report = load_file(path, &store, self.batch_size)?;
            tracing::info!(
                path = %path.display(),
                accepted = report.accepted,
                rejected = report.rejected,
                parse_errors = report.parse_errors,
                seconds = started.elapsed().as_secs_f64(),
                "loaded"
            );
        }
        Ok(store)
    }
}

#[derive(Args)]
struct IngestArgs {
    /// NDJSON file to load.
    input: PathBuf,
    /// Events per ingest batch.
    #[arg(long, default_value_t = DEFAULT_BATCH_SIZE, env = "GEOAGG_BATCH_SIZE")]
    batch_size: usize,
    /// Send the events to a running server instead of a local store.
    #[arg(long, env = "GEOAGG_HTTP")]
    http: Option<String>,
    /// Write the loaded store to this snapshot file.
    #[arg(long)]
    save_snapshot: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080", env = "GEOAGG_BIND")]
    bind: SocketAddr,
    /// Per-request timeout, seconds.
    #[arg(long, default_value_t = 10.0, env = "GEOAGG_TIMEOUT")]
    timeout: f64,
    /// Largest number of cells one aggregate response may hold.
    #[arg(long, default_value_t = 50_000, env = "GEOAGG_MAX_CELLS")]
    max_cells: usize,
    /// Largest accepted POST /events body, bytes.
    #[arg(long, default_value_t = 256 << 20, env = "GEOAGG_MAX_BODY")]
    max_body: usize,
    /// Allowed CORS origin; repeat for several, `*` for any.
    #[arg(long = "cors-origin", env = "GEOAGG_CORS_ORIGINS", value_delimiter = ',')]
    cors_origins: Vec<String>,
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Args)]
struct BenchArgs {
    /// JSON plan file; flags below override its fields.
    #[arg(long)]
    plan: Option<PathBuf>,
    /// Zoom levels, comma separated.
    #[arg(long, value_delimiter = ',')]
    zooms: Option<Vec<u8>>,
    /// Queries per zoom level.
    #[arg(long)]
    queries: Option<usize>,
    /// Viewport width, pixels.
    #[arg(long)]
    width: Option<u32>,
    /// Viewport height, pixels.
    #[arg(long)]
    height: Option<u32>,
    #[arg(long, env = "GEOAGG_SEED")]
    seed: Option<u64>,
    /// Worker threads; 1 runs the queries strictly one after another.
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Per-query CSV output.
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Query a running server instead of a local store.
    #[arg(long, env = "GEOAGG_HTTP")]
    http: Option<String>,
    #[command(flatten)]
    data: DataArgs,
}

/// Bench plan file. Every field is optional; the defaults are zooms 10-15,
/// 100 queries per zoom, a 600x400 viewport, seed 0 and the store's extent.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlanFile {
    zooms: Option<Vec<u8>>,
    queries_per_zoom: Option<usize>,
    viewport: Option<Viewport>,
    seed: Option<u64>,
    extent: Option<ExtentJson>,
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn gen_network(args: GenNetworkArgs) -> Result<()> {
    let net = RoadNetwork::grid(&args.grid.spec())?;
    let mut out = output(args.out.as_deref())?;
    out.write_all(net.to_json().as_bytes())?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

fn run_simulation(args: SimulateArgs) -> Result<()> {
    let net = match &args.network {
        Some(path) => RoadNetwork::load(path)?,
        None => RoadNetwork::grid(&args.grid.spec())?,
    };
    let cfg = SimConfig {
        drivers: args.drivers,
        seed: args.seed,
        speed: SpeedRange {
            min: args.speed_min,
            max: args.speed_max,
        },
        start_ts: args.start_ts,
    };
    let started = Instant::now();
    let out = output(args.out.as_deref())?;
    let n = simulate(&net, &cfg, out)?;
    tracing::info!(
        events = n,
        seconds = started.elapsed().as_secs_f64(),
        "simulation written"
    );
    Ok(())
}

fn ingest(args: IngestArgs) -> Result<()> {
    let started = Instant::now();
    let report = match &args.http {
        Some(url) => {
            if args.save_snapshot.is_some() {
                bail!("--save-snapshot needs a local store; drop --http");
            }
            let remote = HttpRetriever::new(url.clone(), Duration::from_secs(60))?;
            load_file(&args.input, &remote, args.batch_size)?
        }
        None => {
            let store = ColumnarStore::new();
            let report = load_file(&args.input, &store, args.batch_size)?;
            if let Some(path) = &args.save_snapshot {
                let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
                store.save_snapshot(file)?;
            }
            report
        }
    };
    tracing::info!(seconds = started.elapsed().as_secs_f64(), "ingest finished");
    println!("{}", serde_json::to_string(&report)?);
    Ok(())
}

fn serve(args: ServeArgs) -> Result<()> {
    if !(args.timeout > 0.0 && args.timeout.is_finite()) {
        bail!("--timeout must be a positive number of seconds");
    }
    let config = ServerConfig {
        bind: args.bind,
        timeout: Duration::from_secs_f64(args.timeout),
        max_cells: args.max_cells,
        max_body_bytes: args.max_body,
        cors_origins: args.cors_origins,
    };
    config.validate()?;
    let store: Arc<dyn Retriever> = Arc::new(args.data.load()?);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(geoagg_server::serve(store, config))?;
    Ok(())
}

fn bench_plan(args: &BenchArgs, store_extent: Option<BoundingBox>) -> Result<BenchPlan> {
    let file: PlanFile = match &args.plan {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => PlanFile::default(),
    };
    let mut plan = BenchPlan::with_extent(store_extent, 0);
    if let Some(zooms) = args.zooms.clone().or(file.zooms) {
        plan.zooms = zooms
            .into_iter()
            .map(|z| ZoomLevel::new(z as i64))
            .collect::<Result<_, _>>()?;
    }
    if let Some(q) = args.queries.or(file.queries_per_zoom) {
        plan.queries_per_zoom = q;
    }
    if let Some(v) = file.viewport {
        plan.viewport = v;
    }
    if let Some(w) = args.width {
        plan.viewport.width = w;
    }
    if let Some(h) = args.height {
        plan.viewport.height = h;
    }
    if let Some(seed) = args.seed.or(file.seed) {
        plan.seed = seed;
    }
    if let Some(e) = file.extent {
        plan.extent = Some(BoundingBox::from_bounds(e.min_lat, e.min_lon, e.max_lat, e.max_lon)?);
    }
    plan.validate()?;
    Ok(plan)
}

fn run_bench(args: BenchArgs) -> Result<()> {
    let retriever: Box<dyn Retriever> = match &args.http {
        Some(url) => Box::new(HttpRetriever::new(url.clone(), Duration::from_secs(60))?),
        None => Box::new(args.data.load()?),
    };
    let plan = bench_plan(&args, retriever.stats()?.extent)?;
    let started = Instant::now();
    let report = if args.threads > 1 {
        bench::run_concurrent(&plan, &*retriever, args.threads)?
    } else {
        bench::run(&plan, &*retriever)?
    };
    tracing::info!(
        queries = report.records.len(),
        seconds = started.elapsed().as_secs_f64(),
        "bench finished"
    );
    if let Some(path) = &args.out {
        let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        report.write_csv(BufWriter::new(file))?;
    }
    print!("{report}");
    Ok(())
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_env("GEOAGG_LOG").unwrap_or_else(|_| "info".into()))
        .with_writer(io::stderr)
        .init();
    match Cli::parse().command {
        Command::GenNetwork(a) => gen_network(a),
        Command::Simulate(a) => run_simulation(a),
        Command::Ingest(a) => ingest(a),
        Command::Serve(a) => serve(a),
        Command::Bench(a) => run_bench(a),
    }
}
