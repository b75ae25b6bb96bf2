mod graph_source;
mod plot;
mod record;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use amtgraph::bfs::{run_roots, BfsOptions, BfsResult, DistributedBfs};
use amtgraph::graph::{build_csr, build_symmetric_csr, write_edge_list, CsrGraph, EdgeListFormat, UrandRng, VertexId};
use amtgraph::pagerank::{
    pagerank_sequential, run_on, DistributedPageRank, PageRankOptions, PageRankParams, PageRankResult,
};
use amtgraph::runtime::{default_workers, Hosting, LocalityId, Runtime, RuntimeBuilder, RuntimeConfig};
use amtgraph::transport::TransportConfig;
use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use graph_source::GraphSource;
use record::{series, RunRecord};

/// PageRank results within this relative distance of the sequential
/// reference (run for the same number of iterations) count as verified.
const PAGERANK_VERIFY_TOL: f64 = 1e-8;

#[derive(Parser, Debug)]
#[command(
    name = "amtgraph",
    version,
    about = "Distributed BFS and PageRank on a many-task runtime"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Locality counts; bench sweeps the list, other commands take one value.
    #[arg(long, global = true, value_delimiter = ',')]
    localities: Option<Vec<usize>>,
    /// Worker threads per locality [default: cores / L]
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true, value_enum, default_value_t = Transport::Inproc)]
    transport: Transport,
    /// host:port per locality for tcp; without it tcp uses loopback ports.
    #[arg(long, global = true, value_delimiter = ',')]
    endpoints: Option<Vec<String>>,
    /// Host only this locality (multi-process tcp runs).
    #[arg(long, global = true, requires = "endpoints")]
    rank: Option<u32>,
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    /// Check results against the sequential references.
    #[arg(long, global = true)]
    verify: bool,
    /// Print JSON instead of CSV.
    #[arg(long, global = true)]
    json: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Transport {
    Inproc,
    Tcp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Binary,
    Text,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Algorithm {
    Bfs,
    Pagerank,
}

impl Algorithm {
    fn name(self) -> &'static str {
        match self {
            Algorithm::Bfs => "bfs",
            Algorithm::Pagerank => "pagerank",
        }
    }
}

#[derive(Args, Debug, Clone)]
struct PageRankArgs {
    #[arg(long, default_value_t = 0.85)]
    alpha: f64,
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    #[arg(long, default_value_t = 100)]
    max_iters: usize,
}

impl PageRankArgs {
    fn params(&self) -> PageRankParams {
        PageRankParams {
            alpha: self.alpha,
            tolerance: self.tol,
            max_iters: self.max_iters,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a uniform random edge list.
    Generate {
        #[arg(long)]
        scale: u32,
        #[arg(long, default_value_t = 16)]
        degree: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Binary)]
        format: Format,
    },
    /// Breadth-first search from one root; prints the level histogram.
    Bfs {
        /// Edge-list file or urand:scale,degree,seed
        #[arg(long)]
        graph: GraphSource,
        #[arg(long, default_value_t = 0)]
        root: VertexId,
        /// Coalesce remote expansions per destination locality.
        #[arg(long)]
        batch: bool,
    },
    /// PageRank; prints the highest-ranked vertices.
    Pagerank {
        #[arg(long)]
        graph: GraphSource,
        #[command(flatten)]
        pr: PageRankArgs,
        /// Combine remote contributions per destination locality.
        #[arg(long)]
        batch: bool,
        /// Number of vertices to print.
        #[arg(long, default_value_t = 10)]
        top: usize,
    },
    /// Time trials over a sweep of locality counts; one CSV row per trial.
    Bench {
        #[arg(long, default_value = "urand:10,16,1")]
        graph: GraphSource,
        #[arg(long, value_enum, value_delimiter = ',', default_value = "bfs")]
        algorithm: Vec<Algorithm>,
        #[arg(long, default_value_t = 3)]
        trials: usize,
        #[arg(long)]
        batch: bool,
        #[command(flatten)]
        pr: PageRankArgs,
        /// CSV destination [default: stdout]
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write a speedup chart (SVG) here.
        #[arg(long)]
        plot: Option<PathBuf>,
    },
    /// Draw speedup vs. L from a bench CSV.
    Plot {
        csv: PathBuf,
        #[arg(long, default_value = "speedup.svg")]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: verification failed");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

/// Returns whether every run verified (always true without `--verify`).
fn run(cli: Cli) -> Result<bool> {
    let g = &cli.global;
    match cli.command {
        Command::Generate {
            scale,
            degree,
            out,
            format,
        } => {
            let el = GraphSource::Urand {
                scale,
                degree,
                seed: g.seed,
            }
            .load()?;
            let format = match format {
                Format::Binary => EdgeListFormat::Binary,
                Format::Text => EdgeListFormat::Text,
            };
            write_edge_list(&out, &el, format).with_context(|| format!("writing {}", out.display()))?;
            eprintln!("wrote {} vertices, {} edges to {}", el.n, el.len(), out.display());
            Ok(true)
        }
        Command::Bfs { graph, root, batch } => {
            let l = g.single_locality_count()?;
            let csr = Arc::new(build_symmetric_csr(&graph.load()?)?);
            let mut session = BfsSession::start(g, l, Arc::clone(&csr), batch)?;
            let r = session.run(root)?;
            let verified = g.verify.then(|| r.verify(&csr)).transpose()?.map(|bad| bad == 0);
            report_bfs(g, &session.config, batch, &r, verified)?;
            Ok(verified != Some(false))
        }
        Command::Pagerank { graph, pr, batch, top } => {
            let l = g.single_locality_count()?;
            let csr = Arc::new(build_csr(&graph.load()?)?);
            let params = pr.params();
            let mut session = PageRankSession::start(g, l, Arc::clone(&csr), batch)?;
            let r = session.run(&params)?;
            let verified = g.verify.then(|| verify_pagerank(&csr, &params, &r)).transpose()?;
            report_pagerank(g, &session.config, &r, verified, top)?;
            Ok(verified != Some(false))
        }
        Command::Bench {
            graph,
            algorithm,
            trials,
            batch,
            pr,
            out,
            plot,
        } => bench(g, &graph, &algorithm, trials, batch, &pr.params(), out, plot),
        Command::Plot { csv, out } => {
            let file = File::open(&csv).with_context(|| format!("opening {}", csv.display()))?;
            let records = record::read_csv(file).with_context(|| format!("parsing {}", csv.display()))?;
            let s = series(&records);
            plot::speedup_svg(&out, &s)?;
            eprintln!("wrote {} series to {}", s.len(), out.display());
            Ok(true)
        }
    }
}

impl Global {
    fn single_locality_count(&self) -> Result<usize> {
        match self.localities.as_deref() {
            None => Ok(self.endpoints.as_ref().map_or(1, Vec::len)),
            Some([l]) => Ok(*l),
            Some(ls) => bail!("this command takes one --localities value, got {ls:?}; use bench for sweeps"),
        }
    }

    fn sweep(&self) -> Vec<usize> {
        self.localities.clone().unwrap_or_else(|| vec![1, 2, 4, 8])
    }

    fn runtime_config(&self, l: usize) -> Result<RuntimeConfig> {
        if l == 0 {
            bail!("--localities must be positive");
        }
        let transport = match (self.transport, &self.endpoints) {
            (Transport::Inproc, None) => TransportConfig::in_process(),
            (Transport::Inproc, Some(_)) => bail!("--endpoints needs --transport tcp"),
            (Transport::Tcp, None) => TransportConfig::tcp_loopback(),
            (Transport::Tcp, Some(eps)) => TransportConfig::tcp(eps.clone()),
        };
        let mut config = RuntimeConfig::new(l)
            .with_workers(self.workers.unwrap_or_else(|| default_workers(l)))
            .with_transport(transport);
        if let Some(rank) = self.rank {
            config = config.with_hosting(Hosting::Only(LocalityId(rank)));
        }
        Ok(config)
    }
}

struct BfsSession {
    config: RuntimeConfig,
    rt: Runtime,
    bfs: DistributedBfs,
}

impl BfsSession {
    fn start(g: &Global, l: usize, graph: Arc<CsrGraph>, batch: bool) -> Result<Self> {
        let config = g.runtime_config(l)?;
        let mut b = RuntimeBuilder::new(config.clone())?;
        let bfs = DistributedBfs::register(&mut b, graph, BfsOptions { batch, audit: false })?;
        let rt = b.start()?;
        Ok(BfsSession { config, rt, bfs })
    }

    fn run(&mut self, root: VertexId) -> Result<BfsResult> {
        let mut rs = run_roots(&self.rt, &self.bfs, &[root])?;
        Ok(rs.pop().expect("one result per root"))
    }
}

struct PageRankSession {
    config: RuntimeConfig,
    rt: Runtime,
    pr: DistributedPageRank,
}

impl PageRankSession {
    fn start(g: &Global, l: usize, graph: Arc<CsrGraph>, batch: bool) -> Result<Self> {
        let config = g.runtime_config(l)?;
        let mut b = RuntimeBuilder::new(config.clone())?;
        let opts = PageRankOptions {
            batch,
            record_history: false,
        };
        let pr = DistributedPageRank::register(&mut b, graph, opts)?;
        let rt = b.start()?;
        Ok(PageRankSession { config, rt, pr })
    }

    fn run(&mut self, params: &PageRankParams) -> Result<PageRankResult> {
        Ok(run_on(&self.rt, &self.pr, params)?)
    }
}

/// Compares against the sequential reference run for the same number of
/// iterations, so a tolerance crossing that lands on a different side in
/// the last bits cannot make the two stop at different points.
fn verify_pagerank(g: &CsrGraph, params: &PageRankParams, r: &PageRankResult) -> Result<bool> {
    let fixed = PageRankParams {
        tolerance: 0.0,
        max_iters: r.iterations,
        ..*params
    };
    let seq = pagerank_sequential(g, &fixed)?;
    Ok(r.max_relative_diff(&seq.ranks) <= PAGERANK_VERIFY_TOL)
}

#[derive(Serialize)]
struct BfsReport<'a> {
    root: VertexId,
    localities: usize,
    workers: usize,
    transport: String,
    batch: bool,
    wall_time_s: f64,
    reached: usize,
    /// Vertex count per level.
    levels: &'a [usize],
    remote_messages: u64,
    relaxations: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    verified: Option<bool>,
}

fn report_bfs(g: &Global, config: &RuntimeConfig, batch: bool, r: &BfsResult, verified: Option<bool>) -> Result<()> {
    let hist = r.level_histogram();
    let report = BfsReport {
        root: r.root,
        localities: config.localities,
        workers: config.workers,
        transport: config.transport.kind().to_string(),
        batch,
        wall_time_s: r.elapsed.as_secs_f64(),
        reached: r.reachable(),
        levels: &hist,
        remote_messages: r.stats.remote_messages,
        relaxations: r.stats.relaxations,
        verified,
    };
    let mut out = io::stdout().lock();
    if g.json {
        serde_json::to_writer_pretty(&mut out, &report)?;
        writeln!(out)?;
    } else {
        writeln!(out, "level,vertices")?;
        for (level, count) in hist.iter().enumerate() {
            writeln!(out, "{level},{count}")?;
        }
        eprintln!(
            "bfs from {}: {} reached in {} levels, {:.3} ms at L={} ({} workers, {}){}",
            r.root,
            report.reached,
            hist.len(),
            report.wall_time_s * 1e3,
            report.localities,
            report.workers,
            report.transport,
            verdict(verified)
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct PageRankReport {
    localities: usize,
    workers: usize,
    transport: String,
    wall_time_s: f64,
    iterations: usize,
    error: f64,
    mass: f64,
    top: Vec<(VertexId, f64)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    verified: Option<bool>,
}

fn report_pagerank(
    g: &Global,
    config: &RuntimeConfig,
    r: &PageRankResult,
    verified: Option<bool>,
    top: usize,
) -> Result<()> {
    let report = PageRankReport {
        localities: config.localities,
        workers: config.workers,
        transport: config.transport.kind().to_string(),
        wall_time_s: r.elapsed.as_secs_f64(),
        iterations: r.iterations,
        error: r.error,
        mass: r.masses.last().copied().unwrap_or(0.0),
        top: r.top(top),
        verified,
    };
    let mut out = io::stdout().lock();
    if g.json {
        serde_json::to_writer_pretty(&mut out, &report)?;
        writeln!(out)?;
    } else {
        writeln!(out, "vertex,rank")?;
        for (v, rank) in &report.top {
            writeln!(out, "{v},{rank:.12e}")?;
        }
        eprintln!(
            "pagerank: {} iterations, error {:.3e}, {:.3} ms at L={} ({} workers, {}){}",
            r.iterations,
            r.error,
            report.wall_time_s * 1e3,
            report.localities,
            report.workers,
            report.transport,
            verdict(verified)
        );
    }
    Ok(())
}

fn verdict(verified: Option<bool>) -> &'static str {
    match verified {
        None => "",
        Some(true) => ", verified",
        Some(false) => ", NOT VERIFIED",
    }
}

/// Root for a bench trial: uniform over vertices with at least one edge,
/// the same for every locality count.
fn trial_root(g: &CsrGraph, seed: u64, trial: usize) -> VertexId {
    let n = g.num_vertices() as u64;
    let mut rng = UrandRng::split(seed, trial as u64);
    let mut v = rng.below(n) as VertexId;
    for _ in 0..64 {
        if g.out_degree(v) > 0 {
            break;
        }
        v = rng.below(n) as VertexId;
    }
    v
}

#[derive(Serialize)]
struct SummaryRow {
    algorithm: String,
    graph: String,
    #[serde(rename = "L")]
    localities: usize,
    median_wall_time_s: f64,
    speedup: f64,
}

#[derive(Serialize)]
struct BenchReport<'a> {
    records: &'a [RunRecord],
    summary: Vec<SummaryRow>,
}

#[allow(clippy::too_many_arguments)]
fn bench(
    g: &Global,
    source: &GraphSource,
    algorithms: &[Algorithm],
    trials: usize,
    batch: bool,
    params: &PageRankParams,
    out: Option<PathBuf>,
    plot_to: Option<PathBuf>,
) -> Result<bool> {
    if trials == 0 {
        bail!("--trials must be positive");
    }
    let mut algorithms = algorithms.to_vec();
    algorithms.sort();
    algorithms.dedup();
    let el = source.load()?;
    let directed = algorithms
        .contains(&Algorithm::Pagerank)
        .then(|| build_csr(&el).map(Arc::new))
        .transpose()?;
    let symmetric = algorithms
        .contains(&Algorithm::Bfs)
        .then(|| build_symmetric_csr(&el).map(Arc::new))
        .transpose()?;
    drop(el);

    let graph_name = source.to_string();
    let mut records = Vec::new();
    for &alg in &algorithms {
        for l in g.sweep() {
            let mut push = |config: &RuntimeConfig, trial: usize, secs: f64, verified: Option<bool>, extra: String| {
                records.push(RunRecord {
                    algorithm: alg.name().into(),
                    graph: graph_name.clone(),
                    localities: l,
                    workers: config.workers,
                    transport: config.transport.kind().to_string(),
                    trial,
                    wall_time_s: secs,
                    verified,
                    extra,
                });
            };
            match alg {
                Algorithm::Bfs => {
                    let csr = symmetric.as_ref().unwrap();
                    let mut s = BfsSession::start(g, l, Arc::clone(csr), batch)?;
                    for trial in 0..trials {
                        let root = trial_root(csr, g.seed, trial);
                        let r = s.run(root)?;
                        let verified = g.verify.then(|| r.verify(csr)).transpose()?.map(|bad| bad == 0);
                        let extra = format!(
                            "root={root};reached={};levels={};batch={batch};remote_messages={};relaxations={}",
                            r.reachable(),
                            r.level_histogram().len(),
                            r.stats.remote_messages,
                            r.stats.relaxations
                        );
                        push(&s.config, trial, r.elapsed.as_secs_f64(), verified, extra);
                    }
                }
                Algorithm::Pagerank => {
                    let csr = directed.as_ref().unwrap();
                    let mut s = PageRankSession::start(g, l, Arc::clone(csr), batch)?;
                    for trial in 0..trials {
                        let r = s.run(params)?;
                        let verified = g.verify.then(|| verify_pagerank(csr, params, &r)).transpose()?;
                        let extra = format!("iterations={};error={:e};batch={batch}", r.iterations, r.error);
                        push(&s.config, trial, r.elapsed.as_secs_f64(), verified, extra);
                    }
                }
            }
        }
    }

    let all_verified = records.iter().all(|r| r.verified != Some(false));
    let s = series(&records);
    let summary: Vec<SummaryRow> = s
        .iter()
        .flat_map(|s| {
            s.medians.iter().zip(s.speedups()).map(|(&(l, t), (_, sp))| SummaryRow {
                algorithm: s.algorithm.clone(),
                graph: s.graph.clone(),
                localities: l,
                median_wall_time_s: t,
                speedup: sp,
            })
        })
        .collect();

    if let Some(path) = &out {
        let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        record::write_csv(BufWriter::new(f), &records)?;
    }
    if g.json {
        let mut stdout = io::stdout().lock();
        serde_json::to_writer_pretty(
            &mut stdout,
            &BenchReport {
                records: &records,
                summary,
            },
        )?;
        writeln!(stdout)?;
    } else {
        if out.is_none() {
            record::write_csv(io::stdout().lock(), &records)?;
        }
        eprintln!(
            "{:<9} {:<24} {:>3} {:>14} {:>8}",
            "algorithm", "graph", "L", "median_time_s", "speedup"
        );
        for row in &summary {
            eprintln!(
                "{:<9} {:<24} {:>3} {:>14.6} {:>8.3}",
                row.algorithm, row.graph, row.localities, row.median_wall_time_s, row.speedup
            );
        }
    }
    if let Some(path) = &plot_to {
        plot::speedup_svg(path, &s)?;
    }
    if !all_verified {
        let bad = records.iter().filter(|r| r.verified == Some(false)).count();
        eprintln!("{bad} of {} runs failed verification", records.len());
    }
    Ok(all_verified)
}
