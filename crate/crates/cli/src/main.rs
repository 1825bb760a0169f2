// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use orbit_triage::bench::{k_sweep, run_benchmark, BenchConfig, MetricReport};
use orbit_triage::heads::{
    constant_baseline, fit_centroids, fit_ridge_probe, knn_vote, oracle, HeadKind, Prediction, RandomHead, DEFAULT_RIDGE_LAMBDA,
};
use orbit_triage::index::VectorIndex;
use orbit_triage::model::{parse_jsonl, Record, TaskKind};
use orbit_triage::rng::SplitMix64;
use orbit_triage::telemetry::{emit_telemetry, round_trip, uplink_cost, QuantizationScheme};

#[derive(Debug, Error)]
enum CliError {
    /// Bad input or config; exit 1.
    #[error("{0}")]
    Validation(String),
    /// Failure while running; exit 2.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

fn invalid(e: impl std::fmt::Display) -> CliError {
    CliError::Validation(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

#[derive(Parser)]
#[command(name = "orbit-triage", version, about = "Embedding-only triage: index hints, answer queries, benchmark heads")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a hints file and print counts and uplink costs.
    Ingest {
        #[arg(long)]
        hints: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Answer queries against a hint set and emit one telemetry line per query.
    Query(QueryArgs),
    /// Run the benchmark described by a config file.
    Bench {
        #[arg(long)]
        config: PathBuf,
        /// Override the config's seeds: `0..10` or `0,1,2`.
        #[arg(long)]
        seeds: Option<String>,
        #[arg(long)]
        quant: Option<QuantizationScheme>,
        /// Output directory for report.csv and report.json.
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Run the benchmark at several k and write the sweep CSV.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated k values.
        #[arg(long, default_value = "1,5,10")]
        k: String,
        #[arg(long)]
        seeds: Option<String>,
        #[arg(long)]
        quant: Option<QuantizationScheme>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render a JSON report as a markdown table.
    Report {
        /// report.json written by `bench`.
        report: PathBuf,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct QueryArgs {
    #[arg(long)]
    hints: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long, default_value = "retrieval")]
    head: String,
    #[arg(long, default_value_t = 5)]
    k: usize,
    /// Seed for the random head; the first seed is used.
    #[arg(long, default_value = "0")]
    seeds: String,
    /// Codec applied to the hints before indexing.
    #[arg(long, default_value = "fp32")]
    quant: QuantizationScheme,
    /// Telemetry destination; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_seeds(s: &str) -> Result<Vec<u64>, CliError> {
    let bad = || invalid(format!("invalid seed list `{s}` (expected `0..10` or `0,1,2`)"));
    let seeds: Vec<u64> = if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad())?;
        let b: u64 = b.trim().parse().map_err(|_| bad())?;
        (a..b).collect()
    } else {
        s.split(',').map(|x| x.trim().parse().map_err(|_| bad())).collect::<Result<_, _>>()?
    };
    if seeds.is_empty() {
        return Err(invalid(format!("seed list `{s}` is empty")));
    }
    Ok(seeds)
}

fn parse_ks(s: &str) -> Result<Vec<usize>, CliError> {
    let ks: Vec<usize> = s
        .split(',')
        .map(|x| x.trim().parse::<usize>().ok().filter(|&k| k > 0))
        .collect::<Option<_>>()
        .ok_or_else(|| invalid(format!("invalid k list `{s}`")))?;
    if ks.is_empty() {
        return Err(invalid("empty k list"));
    }
    Ok(ks)
}

fn read_records(path: &Path) -> Result<Vec<Record>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    parse_jsonl(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

fn write_output(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| runtime(format!("{}: {e}", path.display()))),
        None => std::io::stdout().write_all(text.as_bytes()).map_err(runtime),
    }
}

fn cmd_ingest(hints: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let records = read_records(hints)?;
    if records.is_empty() {
        return Err(invalid(format!("{}: empty hint set", hints.display())));
    }
    let mut counts: BTreeMap<(TaskKind, &str), usize> = BTreeMap::new();
    let mut dims: BTreeMap<usize, u64> = BTreeMap::new();
    for r in &records {
        *counts.entry((r.task, r.label.as_str())).or_default() += 1;
        *dims.entry(r.embedding.dim()).or_default() += 1;
    }
    let mut text = String::from("task,label,count\n");
    for ((task, label), n) in &counts {
        text += &format!("{task},{label},{n}\n");
    }
    text += "\nn_hints,dim,scheme,bytes\n";
    for (&dim, &n) in &dims {
        for scheme in QuantizationScheme::ALL {
            text += &format!("{n},{dim},{scheme},{}\n", uplink_cost(n, dim as u64, scheme));
        }
    }
    write_output(out, &text)?;
    eprintln!("ingested {} hints", records.len());
    Ok(())
}

enum Head {
    Retrieval,
    Centroid(orbit_triage::heads::CentroidModel),
    Probe(orbit_triage::heads::RidgeProbeModel),
    Random(RandomHead),
    Constant(Prediction),
    Oracle,
}

struct TaskState {
    index: VectorIndex,
    head: Head,
}

fn cmd_query(args: &QueryArgs) -> Result<(), CliError> {
    let kind: HeadKind = args.head.parse().map_err(invalid)?;
    if args.k == 0 {
        return Err(invalid("k must be at least 1"));
    }
    let seed = parse_seeds(&args.seeds)?[0];
    let hints = read_records(&args.hints)?;
    if hints.is_empty() {
        return Err(invalid(format!("{}: empty hint set", args.hints.display())));
    }
    let queries = read_records(&args.queries)?;

    let mut by_task: BTreeMap<TaskKind, Vec<Record>> = BTreeMap::new();
    for h in hints {
        let embedding = round_trip(&h.embedding, args.quant).map_err(invalid)?;
        by_task.entry(h.task).or_default().push(Record { embedding, ..h });
    }
    let mut states: BTreeMap<TaskKind, TaskState> = BTreeMap::new();
    for (task, hints) in by_task {
        let head = match kind {
            HeadKind::Retrieval => Head::Retrieval,
            HeadKind::Centroid => Head::Centroid(fit_centroids(&hints).map_err(invalid)?),
            HeadKind::Probe => Head::Probe(fit_ridge_probe(&hints, DEFAULT_RIDGE_LAMBDA).map_err(invalid)?),
            HeadKind::Random => Head::Random(
                RandomHead::from_hints(&hints, SplitMix64::keyed(&[seed.into(), task.as_str().into(), "random".into()]))
                    .map_err(invalid)?,
            ),
            HeadKind::Constant => Head::Constant(constant_baseline(&hints).map_err(invalid)?),
            HeadKind::Oracle => Head::Oracle,
        };
        let index = VectorIndex::build(hints).map_err(invalid)?;
        states.insert(task, TaskState { index, head });
    }
    for q in &queries {
        let state = states.get(&q.task).ok_or_else(|| invalid(format!("query `{}`: no {} hints", q.id, q.task)))?;
        if q.embedding.dim() != state.index.dim() {
            return Err(invalid(format!(
                "query `{}`: dimension mismatch: index {}, query {}",
                q.id,
                state.index.dim(),
                q.embedding.dim()
            )));
        }
    }

    let mut stream = String::new();
    let mut total_bytes = 0usize;
    let mut latency = 0.0f64;
    for q in &queries {
        let state = states.get_mut(&q.task).expect("checked above");
        let start = Instant::now();
        let matches = state.index.search_topk(&q.embedding, args.k).map_err(runtime)?;
        let index = &state.index;
        let prediction = match &mut state.head {
            Head::Retrieval => knn_vote(&matches, |id| index.get(id).map(|h| h.label.as_str())),
            Head::Centroid(m) => m.predict(&q.embedding),
            Head::Probe(m) => m.predict(&q.embedding),
            Head::Random(r) => Ok(r.predict()),
            Head::Constant(p) => Ok(p.clone()),
            Head::Oracle => Ok(oracle(q)),
        }
        .map_err(runtime)?;
        latency += start.elapsed().as_secs_f64();
        let bytes = emit_telemetry(q, &prediction, &matches, args.k).map_err(runtime)?;
        total_bytes += bytes.len();
        stream.push_str(std::str::from_utf8(&bytes).expect("telemetry is ASCII"));
        stream.push('\n');
    }
    write_output(args.out.as_deref(), &stream)?;
    let n = queries.len().max(1) as f64;
    eprintln!(
        "{} queries, mean payload {:.2} bytes, mean latency {:.3} ms",
        queries.len(),
        total_bytes as f64 / n,
        latency * 1e3 / n
    );
    Ok(())
}

fn load_config(path: &Path, seeds: Option<&str>, quant: Option<QuantizationScheme>) -> Result<BenchConfig, CliError> {
    let mut config = BenchConfig::load(path).map_err(invalid)?;
    if let Some(s) = seeds {
        config.seeds = parse_seeds(s)?;
    }
    if let Some(q) = quant {
        config.quant = q;
    }
    config.validate().map_err(invalid)?;
    Ok(config)
}

fn report_errors(report: &MetricReport) -> Result<(), CliError> {
    if report.has_errors() {
        for e in &report.errors {
            eprintln!("error cell: {} {:?} k={:?} seed={:?}: {}", e.task, e.head, e.k, e.seed, e.message);
        }
        return Err(runtime(format!("{} error cell(s)", report.errors.len())));
    }
    Ok(())
}

fn cmd_bench(config: &Path, seeds: Option<&str>, quant: Option<QuantizationScheme>, out: &Path) -> Result<(), CliError> {
    let config = load_config(config, seeds, quant)?;
    let report = run_benchmark(&config).map_err(runtime)?;
    std::fs::create_dir_all(out).map_err(|e| runtime(format!("{}: {e}", out.display())))?;
    for (name, text) in [("report.csv", report.to_csv()), ("report.json", report.to_json())] {
        let path = out.join(name);
        std::fs::write(&path, text).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    }
    for &k in &config.ks {
        eprint!("{}", report.to_markdown(k));
    }
    report_errors(&report)
}

fn cmd_sweep(
    config: &Path,
    ks: &str,
    seeds: Option<&str>,
    quant: Option<QuantizationScheme>,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let ks = parse_ks(ks)?;
    let config = load_config(config, seeds, quant)?;
    let (report, table) = k_sweep(&config, &ks).map_err(runtime)?;
    write_output(out, &table.to_csv())?;
    report_errors(&report)
}

fn cmd_report(path: &Path, k: usize, out: Option<&Path>) -> Result<(), CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    let report = MetricReport::from_json(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    if !report.ks.contains(&k) {
        return Err(invalid(format!("report has no k = {k} (available: {:?})", report.ks)));
    }
    write_output(out, &report.to_markdown(k))
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Ingest { hints, out } => cmd_ingest(&hints, out.as_deref()),
        Command::Query(args) => cmd_query(&args),
        Command::Bench { config, seeds, quant, out } => cmd_bench(&config, seeds.as_deref(), quant, &out),
        Command::Sweep { config, k, seeds, quant, out } => cmd_sweep(&config, &k, seeds.as_deref(), quant, out.as_deref()),
        Command::Report { report, k, out } => cmd_report(&report, k, out.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
