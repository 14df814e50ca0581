//! `mcvrp`: build the synthetic desk-scale dataset, run the experiment
//! matrix, summarize results and serve the live dispatch API.
//!
//! A typical session:
//!
//! ```text
//! mcvrp gen-network --out data/network.txt
//! mcvrp gen-history --out data/history.txt --test-dir data/days
//! mcvrp fit-demand --history data/history.txt --out data/demand.txt
//! mcvrp gen-chains --demand data/demand.txt --out data/chains
//! mcvrp run --config experiment.toml --results results.csv
//! mcvrp summarize --results results.csv
//! ```

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use paratransit_core::demand::{format_history, parse_history};
use paratransit_core::experiment::{
    append_rows, read_rows, robustness, run_experiment, summarize, write_csv, Cell, ResultRow, RobustnessRow,
    SummaryRow,
};
use paratransit_core::network::build_travel_matrix;
use paratransit_core::sim::format_trace;
use paratransit_core::stream::save_stream;
use paratransit_core::synth::{SynthConfig, SyntheticCity};
use paratransit_core::{
    ChainStore, ClockMode, DemandModel, ExperimentConfig, LocationGraph, PolicyKind, Scenario, SyntheticSetup,
};
use paratransit_service::{AppState, Resources};

#[derive(Parser)]
#[command(name = "mcvrp", version, about = "Online non-myopic paratransit dispatch: data, experiments, service")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a street-grid location graph.
    GenNetwork(GenNetwork),
    /// Write synthetic request history (and optionally held-out test days).
    GenHistory(GenHistory),
    /// Fit the demand model to a history file.
    FitDemand(FitDemand),
    /// Pre-sample demand chains from a fitted model.
    GenChains(GenChains),
    /// Run the experiment matrix and append rows to a results table.
    Run(Run),
    /// Per (policy, fleet) service-rate quantiles of a results table.
    Summarize(Summarize),
    /// Re-run the matrix under congestion and join on (policy, fleet, day).
    Robustness(Robustness),
    /// Serve the dispatch HTTP API.
    Serve(Serve),
}

#[derive(Args)]
struct GenNetwork {
    #[arg(long, default_value_t = 20)]
    rows: u32,
    #[arg(long, default_value_t = 20)]
    cols: u32,
    /// Travel time of one grid edge.
    #[arg(long, default_value_t = SyntheticSetup::default().edge_seconds)]
    edge_seconds: u32,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GenHistory {
    #[arg(long, default_value_t = 20)]
    rows: u32,
    #[arg(long, default_value_t = 20)]
    cols: u32,
    /// Seed of the city layout (hotspots and regular riders); keep it fixed
    /// between history and test days.
    #[arg(long, default_value_t = 1)]
    city_seed: u64,
    #[arg(long, default_value_t = 114)]
    days: usize,
    #[arg(long, default_value_t = 10_000)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Also write this many test-day request streams into `--test-dir`.
    #[arg(long, default_value_t = 15)]
    test_days: usize,
    #[arg(long, default_value_t = 30_000)]
    test_seed: u64,
    #[arg(long)]
    test_dir: Option<PathBuf>,
}

#[derive(Args)]
struct FitDemand {
    #[arg(long)]
    history: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GenChains {
    #[arg(long)]
    demand: PathBuf,
    #[arg(long, default_value_t = 100)]
    count: usize,
    /// Chain `k` is drawn with seed `chain_seed + k`.
    #[arg(long, default_value_t = 20_000)]
    chain_seed: u64,
    /// Output directory for `chain_NNNN.txt` files.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct Run {
    #[command(flatten)]
    config: ConfigArgs,
    /// Results table (CSV, appended).
    #[arg(long, default_value = "results.csv")]
    results: PathBuf,
    /// Write one execution trace per cell into this directory.
    #[arg(long)]
    trace_dir: Option<PathBuf>,
}

#[derive(Args)]
struct Summarize {
    #[arg(long, default_value = "results.csv")]
    results: PathBuf,
    /// Also write the summary as CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Robustness {
    #[command(flatten)]
    config: ConfigArgs,
    /// Congestion factor of the second run.
    #[arg(long, default_value_t = 1.43)]
    factor: f64,
    #[arg(long, default_value = "results.csv")]
    results: PathBuf,
    #[arg(long, default_value = "results_congested.csv")]
    congested_results: PathBuf,
    /// Joined per-day table.
    #[arg(long, default_value = "robustness.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct Serve {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
}

/// Experiment config: the TOML file (if any), then these flags on top.
#[derive(Args, Default)]
struct ConfigArgs {
    /// TOML file with `ExperimentConfig` keys; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    fleet_sizes: Option<Vec<usize>>,
    #[arg(long)]
    capacity: Option<u32>,
    #[arg(long)]
    lead_time: Option<i64>,
    #[arg(long)]
    time_window: Option<i64>,
    #[arg(long)]
    day_length: Option<i64>,
    /// Comma-separated: mcvrp-budget, mcvrp-ptt, greedy-budget, greedy-ptt.
    #[arg(long, value_delimiter = ',')]
    policies: Option<Vec<PolicyKind>>,
    /// serialized or strict-realtime.
    #[arg(long, value_parser = parse_clock)]
    clock: Option<ClockMode>,
    #[arg(long)]
    congestion: Option<f64>,
    #[arg(long)]
    network: Option<PathBuf>,
    /// Chain store directory.
    #[arg(long)]
    chains: Option<PathBuf>,
    /// Test-day request streams; a directory means every `*.txt` in it.
    #[arg(long, num_args = 1..)]
    days: Option<Vec<PathBuf>>,
    #[arg(long)]
    iterations: Option<u64>,
    /// Run without an iteration limit (needs --cutoff).
    #[arg(long)]
    unlimited: bool,
    #[arg(long)]
    depth: Option<usize>,
    /// Chains (trees) per decision.
    #[arg(long)]
    n_chains: Option<usize>,
    #[arg(long)]
    c_uct: Option<f64>,
    /// Wall-clock seconds per decision.
    #[arg(long)]
    cutoff: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    k_max: Option<usize>,
}

fn parse_clock(s: &str) -> Result<ClockMode, String> {
    match s {
        "serialized" => Ok(ClockMode::Serialized),
        "strict-realtime" => Ok(ClockMode::StrictRealtime),
        _ => Err(format!("unknown clock {s:?} (expected serialized or strict-realtime)")),
    }
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        macro_rules! set {
            ($($flag:ident => $($field:ident).+),* $(,)?) => {
                $(if let Some(v) = &self.$flag { c.$($field).+ = v.clone(); })*
            };
        }
        set!(
            fleet_sizes => fleet_sizes,
            capacity => capacity,
            lead_time => lead_time,
            time_window => time_window,
            day_length => day_length,
            policies => policies,
            clock => clock,
            congestion => congestion,
            network => network,
            chains => chains,
            depth => mcts.depth,
            n_chains => mcts.n_chains,
            c_uct => mcts.c_uct,
            seed => mcts.seed,
            k_max => mcts.k_max,
        );
        if let Some(days) = &self.days {
            c.days = expand_days(days)?;
        }
        if let Some(n) = self.iterations {
            c.mcts.iterations = Some(n);
        }
        if self.unlimited {
            c.mcts.iterations = None;
        }
        if let Some(s) = self.cutoff {
            c.mcts.cutoff_seconds = Some(s);
        }
        c.validate()?;
        Ok(c)
    }
}

fn expand_days(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut files: Vec<PathBuf> = std::fs::read_dir(p)
                .with_context(|| format!("reading {}", p.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "txt"))
                .collect();
            files.sort();
            out.extend(files);
        } else {
            out.push(p.clone());
        }
    }
    Ok(out)
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::GenNetwork(a) => gen_network(a),
        Command::GenHistory(a) => gen_history(a),
        Command::FitDemand(a) => fit_demand(a),
        Command::GenChains(a) => gen_chains(a),
        Command::Run(a) => run(a),
        Command::Summarize(a) => summarize_cmd(a),
        Command::Robustness(a) => robustness_cmd(a),
        Command::Serve(a) => serve(a),
    }
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

fn gen_network(a: GenNetwork) -> Result<()> {
    let g = LocationGraph::grid(a.rows, a.cols, a.edge_seconds)?;
    create_parent(&a.out)?;
    g.save(&a.out)?;
    println!("{}: {} locations, {} edges, depot {}", a.out.display(), g.node_count(), g.edges().len(), g.depot());
    Ok(())
}

fn gen_history(a: GenHistory) -> Result<()> {
    let city = SyntheticCity::new(
        SynthConfig {
            rows: a.rows,
            cols: a.cols,
            ..SynthConfig::default()
        },
        a.city_seed,
    );
    let history = city.history(a.days, a.seed);
    create_parent(&a.out)?;
    std::fs::write(&a.out, format_history(&history)).with_context(|| format!("writing {}", a.out.display()))?;
    println!("{}: {} requests over {} days", a.out.display(), history.len(), a.days);
    if let Some(dir) = &a.test_dir {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        for k in 0..a.test_days {
            let path = dir.join(format!("test{k:02}.txt"));
            let records = city.test_day(a.test_seed + k as u64);
            save_stream(&path, &records)?;
        }
        println!("{}: {} test days", dir.display(), a.test_days);
    }
    Ok(())
}

fn fit_demand(a: FitDemand) -> Result<()> {
    let text = std::fs::read_to_string(&a.history).with_context(|| format!("reading {}", a.history.display()))?;
    let model = DemandModel::fit(&parse_history(&text)?)?;
    create_parent(&a.out)?;
    model.save(&a.out)?;
    println!(
        "{}: N({:.2}, {:.2}) requests/day, {} templates",
        a.out.display(),
        model.mean,
        model.std,
        model.pool.len()
    );
    Ok(())
}

fn gen_chains(a: GenChains) -> Result<()> {
    let config = a.config.resolve()?;
    let model = DemandModel::load(&a.demand)?;
    let matrix = build_travel_matrix(&LocationGraph::load(&config.network)?)?;
    let store = ChainStore::generate(&model, a.count, a.chain_seed, &matrix, &config.request_params())?;
    store.save_dir(&a.out)?;
    let total: usize = store.chains.iter().map(|c| c.requests.len()).sum();
    println!("{}: {} chains, {total} requests", a.out.display(), store.len());
    Ok(())
}

/// Runs the matrix, appends the rows and fails if any day's audit is dirty
/// (the audit error carries the details).
fn execute(config: &ExperimentConfig, results: &Path, trace_dir: Option<&Path>) -> Result<Vec<ResultRow>> {
    if config.days.is_empty() {
        bail!("no test days; pass --days or set `days` in the config");
    }
    let scenario = Scenario::load(config)?;
    let started = Instant::now();
    let cells = run_experiment(config, &scenario)?;
    eprintln!("{} runs in {:.1?}", cells.len(), started.elapsed());
    if let Some(dir) = trace_dir {
        write_traces(dir, &cells)?;
    }
    let rows: Vec<ResultRow> = cells.into_iter().map(|c| c.row).collect();
    create_parent(results)?;
    let written = append_rows(results, &rows)?;
    let dups = written.iter().filter(|r| r.duplicate).count();
    if dups > 0 {
        eprintln!("{dups} rows repeat an earlier run with the same config hash; flagged as duplicates");
    }
    Ok(written)
}

fn write_traces(dir: &Path, cells: &[Cell]) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    for c in cells {
        let r = &c.row;
        let path = dir.join(format!("{}_{}_{}.trace", r.policy, r.fleet, r.day));
        std::fs::write(&path, format_trace(&c.outcome.trace)).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn print_summary(rows: &[SummaryRow]) {
    println!(
        "{:<14} {:>5} {:>4} {:>7} {:>7} {:>7} {:>7} {:>7} {:>10}",
        "policy", "fleet", "days", "median", "q1", "q3", "min", "max", "compute_s"
    );
    for s in rows {
        println!(
            "{:<14} {:>5} {:>4} {:>7.1} {:>7.1} {:>7.1} {:>7.1} {:>7.1} {:>10.4}",
            s.policy.to_string(),
            s.fleet,
            s.days,
            s.median_rate,
            s.q1_rate,
            s.q3_rate,
            s.min_rate,
            s.max_rate,
            s.median_compute
        );
    }
}

fn run(a: Run) -> Result<()> {
    let config = a.config.resolve()?;
    let rows = execute(&config, &a.results, a.trace_dir.as_deref())?;
    print_summary(&summarize(&rows));
    println!("{} rows appended to {}", rows.len(), a.results.display());
    Ok(())
}

fn summarize_cmd(a: Summarize) -> Result<()> {
    let rows = read_rows(&a.results)?;
    if rows.is_empty() {
        bail!("{} has no rows", a.results.display());
    }
    let summary = summarize(&rows);
    print_summary(&summary);
    if let Some(out) = &a.out {
        write_csv(out, &summary)?;
    }
    Ok(())
}

fn robustness_cmd(a: Robustness) -> Result<()> {
    let base_config = a.config.resolve()?;
    let congested_config = ExperimentConfig {
        congestion: a.factor,
        ..base_config.clone()
    };
    congested_config.validate()?;
    let base = execute(&base_config, &a.results, None)?;
    let congested = execute(&congested_config, &a.congested_results, None)?;
    let joined = robustness(&base, &congested);
    write_csv(&a.out, &joined)?;
    print_robustness(&joined);
    println!("{} joined rows written to {}", joined.len(), a.out.display());
    Ok(())
}

fn print_robustness(rows: &[RobustnessRow]) {
    let mut groups: std::collections::BTreeMap<(PolicyKind, usize), Vec<f64>> = Default::default();
    for r in rows {
        groups.entry((r.policy, r.fleet)).or_default().push(r.delta_points);
    }
    println!("{:<14} {:>5} {:>4} {:>18}", "policy", "fleet", "days", "median_delta_pts");
    for ((policy, fleet), mut d) in groups {
        d.sort_by(f64::total_cmp);
        println!(
            "{:<14} {:>5} {:>4} {:>18.1}",
            policy.to_string(),
            fleet,
            d.len(),
            paratransit_core::experiment::quantile(&d, 0.5)
        );
    }
}

fn serve(a: Serve) -> Result<()> {
    tracing_subscriber::fmt().with_target(false).init();
    let config = a.config.resolve()?;
    let scenario = Scenario::load(&ExperimentConfig {
        days: Vec::new(),
        ..config.clone()
    })?;
    let resources = Resources {
        matrix: scenario.matrix,
        chains: scenario.chains,
        params: config.request_params(),
    };
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(a.addr)
            .await
            .with_context(|| format!("binding {}", a.addr))?;
        eprintln!("listening on http://{}", listener.local_addr()?);
        paratransit_service::serve(listener, AppState::new(resources)).await?;
        Ok(())
    })
}
