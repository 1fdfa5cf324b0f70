use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bsc_core::data::{generate_synthetic, read_judgment_rows, write_bias_csv, write_qrels, write_results, write_run, write_tsv, RunEntry, SyntheticSpec};
use bsc_core::harness::{
    all_methods, analyze_bias, overlay, run_experiment, sweep, write_sweep_csv, BackendSpec, ExperimentConfig,
    HarnessError, Method, OrderName, StrategyName,
};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bsc", version, about = "Batched self-consistency relevance assessment and reranking")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its result files.
    Run(RunArgs),
    /// Run a grid of methods and self-consistency counts.
    Sweep(SweepArgs),
    /// Position-bias profiles from a run's judgments.
    AnalyzeBias(BiasArgs),
    /// Write a synthetic dataset as TSV and TREC files.
    Simulate(SimulateArgs),
    /// Run against a live backend and append every response to a replay cache.
    Record(RecordArgs),
}

#[derive(Args, Clone)]
struct Overrides {
    /// TOML experiment file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = parse_strategy)]
    strategy: Option<StrategyName>,
    #[arg(long, value_parser = parse_order)]
    order: Option<OrderName>,
    #[arg(long)]
    batches: Option<usize>,
    #[arg(long)]
    m: Option<u32>,
    #[arg(long)]
    depth: Option<usize>,
    /// live:<adapter>, replay:<path> or sim[:<bias>].
    #[arg(long)]
    backend: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    concurrency: Option<usize>,
    #[arg(long)]
    binarize_threshold: Option<u32>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    overrides: Overrides,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    overrides: Overrides,
    /// Comma-separated self-consistency counts.
    #[arg(long, value_delimiter = ',', default_values_t = vec![1u32, 5, 15])]
    m_values: Vec<u32>,
    /// Comma-separated `strategy:order` pairs; all methods when omitted.
    #[arg(long, value_delimiter = ',')]
    methods: Vec<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BiasArgs {
    /// Result directory of a pointwise run.
    #[arg(long)]
    run: PathBuf,
    /// Result directory of a baseline run (typically one-by-one) to overlay.
    #[arg(long)]
    baseline: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    binarize_threshold: u32,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, default_value_t = 50)]
    num_queries: usize,
    #[arg(long, default_value_t = 90)]
    depth: usize,
    #[arg(long, default_value_t = 0.3)]
    correlation: f64,
    /// Probabilities of grades 0,1,2,3.
    #[arg(long, value_delimiter = ',', num_args = 4, default_values_t = vec![0.6, 0.2, 0.12, 0.08])]
    grade_distribution: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RecordArgs {
    #[command(flatten)]
    overrides: Overrides,
    /// Replay cache to append to.
    #[arg(long)]
    cache: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn parse_strategy(s: &str) -> Result<StrategyName, String> {
    s.parse().map_err(|e: HarnessError| e.to_string())
}

fn parse_order(s: &str) -> Result<OrderName, String> {
    s.parse().map_err(|e: HarnessError| e.to_string())
}

fn resolve(o: &Overrides) -> Result<ExperimentConfig, HarnessError> {
    let mut config = match &o.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(v) = o.strategy {
        config.strategy = v;
    }
    if let Some(v) = o.order {
        config.order = v;
    }
    if let Some(v) = o.batches {
        config.batches = v;
    }
    if let Some(v) = o.m {
        config.m = v;
    }
    if let Some(v) = o.depth {
        config.depth = v;
    }
    if let Some(v) = &o.backend {
        config.backend = v.clone();
    }
    if let Some(v) = o.seed {
        config.seed = v;
    }
    if let Some(v) = o.concurrency {
        config.concurrency = v;
    }
    if let Some(v) = o.binarize_threshold {
        config.binarize_threshold = v;
    }
    Ok(config)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "n/a".into())
}

fn run(config: &ExperimentConfig, out: &Path) -> Result<(), Box<dyn std::error::Error>> {
    config.validate()?;
    let record = run_experiment(config)?;
    write_results(&record, out)?;
    let s = &record.summary;
    println!(
        "{} via {}: {}/{} queries complete, {} calls, NDCG@{} {} (initial {}), AUC-PR {}",
        record.method,
        record.backend,
        s.complete,
        s.queries,
        record.planned_calls,
        config.ndcg_cutoff,
        fmt_opt(s.ndcg),
        fmt_opt(s.initial_ndcg),
        fmt_opt(s.auc_pr),
    );
    for q in record.incomplete() {
        eprintln!("incomplete: {} ({:?})", q.query_id, q.status);
    }
    println!("results written to {}", out.display());
    Ok(())
}

fn parse_method(spec: &str, batches: usize) -> Result<Method, HarnessError> {
    let (strategy, order) = spec.split_once(':').unwrap_or((spec, "init"));
    Method::resolve(strategy.parse()?, order.parse()?, batches)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match dispatch(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command) -> Result<(), Box<dyn std::error::Error>> {
    match command {
        Command::Run(args) => run(&resolve(&args.overrides)?, &args.out),
        Command::Record(args) => {
            let mut config = resolve(&args.overrides)?;
            if !matches!(config.backend_spec()?, BackendSpec::Live(_)) {
                return Err(format!("record needs a live backend, not {}", config.backend).into());
            }
            config.record = Some(args.cache.clone());
            run(&config, &args.out)?;
            println!("responses appended to {}", args.cache.display());
            Ok(())
        }
        Command::Sweep(args) => {
            let config = resolve(&args.overrides)?;
            let methods = if args.methods.is_empty() {
                all_methods(config.batches)
            } else {
                args.methods
                    .iter()
                    .map(|m| parse_method(m, config.batches))
                    .collect::<Result<_, _>>()?
            };
            let rows = sweep(&config, &methods, &args.m_values)?;
            std::fs::create_dir_all(&args.out)?;
            let path = args.out.join("sweep.csv");
            write_sweep_csv(&rows, &path)?;
            for r in &rows {
                println!(
                    "{:<11} {:<8} L={:<3} m={:<3} AUC-PR {} NDCG@10 {} calls {}",
                    r.strategy,
                    r.ordering,
                    r.batch_size,
                    r.m,
                    fmt_opt(r.auc_pr),
                    fmt_opt(r.ndcg),
                    r.calls
                );
            }
            println!("sweep written to {}", path.display());
            Ok(())
        }
        Command::AnalyzeBias(args) => {
            let rows = read_judgment_rows(&args.run.join("judgments.csv"))?;
            let report = analyze_bias(&rows, args.binarize_threshold)?;
            std::fs::create_dir_all(&args.out)?;
            write_bias_csv(&report.in_call, &args.out.join("bias_in_call.csv"))?;
            write_bias_csv(&report.initial_rank, &args.out.join("bias_initial_rank.csv"))?;
            if let Some(baseline) = &args.baseline {
                let base_rows = read_judgment_rows(&baseline.join("judgments.csv"))?;
                let base = analyze_bias(&base_rows, args.binarize_threshold)?;
                let mut w = csv::Writer::from_path(args.out.join("overlay_initial_rank.csv"))?;
                w.write_record(["position", "run_mean", "baseline_mean", "difference"])?;
                let f = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
                for row in overlay(&report.initial_rank, &base.initial_rank) {
                    w.write_record([row.position.to_string(), f(row.run_mean), f(row.baseline_mean), f(row.difference)])?;
                }
                w.flush()?;
            }
            println!(
                "{} in-call positions, {} initial-rank positions written to {}",
                report.in_call.rows.len(),
                report.initial_rank.rows.len(),
                args.out.display()
            );
            Ok(())
        }
        Command::Simulate(args) => {
            let spec = SyntheticSpec {
                num_queries: args.num_queries,
                depth: args.depth,
                grade_distribution: args
                    .grade_distribution
                    .try_into()
                    .map_err(|_| "grade distribution needs four values")?,
                correlation: args.correlation,
                seed: args.seed,
            };
            let data = generate_synthetic(&spec)?;
            std::fs::create_dir_all(&args.out)?;
            write_tsv(
                &args.out.join("queries.tsv"),
                data.queries.values().map(|q| (q.id.as_str(), q.text.as_str())),
            )?;
            write_tsv(
                &args.out.join("corpus.tsv"),
                data.passages.values().map(|p| (p.id.as_str(), p.text.as_str())),
            )?;
            write_qrels(&data.qrels, std::fs::File::create(args.out.join("qrels.txt"))?)?;
            let entries = data.candidates.iter().flat_map(|c| {
                let n = c.depth();
                c.passages().iter().enumerate().map(move |(i, p)| RunEntry {
                    query_id: c.query_id(),
                    passage_id: p,
                    rank: i + 1,
                    score: (n - i) as f64,
                })
            });
            write_run(entries, "synthetic", std::fs::File::create(args.out.join("run.txt"))?)?;
            println!("{} queries x {} passages written to {}", spec.num_queries, spec.depth, args.out.display());
            Ok(())
        }
    }
}
