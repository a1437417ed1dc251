use std::path::PathBuf;
use std::time::Duration;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use tzc_bench::matrix::{parse_size, write_reports};
use tzc_bench::report::{write_subscriber_csv, write_summary_csv};
use tzc_bench::stress::{run_stress, run_worker, StressConfig};
use tzc_bench::{run_case, run_matrix, summarize, worker, CaseConfig, MatrixConfig, Transport};
use tzc_core::schema::{bundled_corpus_dir, CompatibilityReport};
use tzc_core::SchemaRegistry;

#[derive(Parser, Debug)]
#[command(name = "tzc-bench", version, about = "Latency and reliability benchmarks for zero-copy pub/sub")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Run a single case.
    Run(RunArgs),
    /// Run a grid of cases from a key = value config file.
    Matrix {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory for results.csv and summary.csv.
        #[arg(long, default_value = "bench-out")]
        out_dir: PathBuf,
    },
    /// Multi-process block lifetime stress.
    Stress {
        /// Seconds to run; defaults to $TZC_STRESS_SECS or 600.
        #[arg(long)]
        secs: Option<u64>,
        #[arg(long, default_value_t = 3)]
        workers: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Print the classification table for a schema corpus.
    Compat {
        /// Corpus root; defaults to the bundled corpus.
        #[arg(long)]
        dir: Option<PathBuf>,
    },
    #[command(subcommand, hide = true)]
    Worker(WorkerCmd),
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Payload size, e.g. 4096, 64K, 4M.
    #[arg(long, default_value = "4K", value_parser = parse_size)]
    size: u64,
    #[arg(long, default_value_t = 1)]
    subs: u32,
    #[arg(long, default_value_t = 1000)]
    count: u64,
    #[arg(long, default_value_t = 30.0)]
    rate: f64,
    #[arg(long, default_value = "tzc")]
    transport: Transport,
    #[arg(long, default_value = "medium:5")]
    policy: String,
    /// Region size; 0 sizes it for 16 messages.
    #[arg(long, default_value = "0", value_parser = parse_size)]
    region_size: u64,
    /// Milliseconds subscriber 0 sleeps in every callback.
    #[arg(long, default_value_t = 0)]
    slow_ms: u64,
    /// Per-subscriber CSV; a summary CSV is written next to it.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum WorkerCmd {
    Pub {
        #[arg(long)]
        case: PathBuf,
        #[arg(long, default_value_t = 0)]
        index: u32,
        #[arg(long)]
        out: PathBuf,
    },
    Sub {
        #[arg(long)]
        case: PathBuf,
        #[arg(long)]
        index: u32,
        #[arg(long)]
        out: PathBuf,
    },
    Stress {
        #[arg(long)]
        mailbox: PathBuf,
        #[arg(long)]
        region: String,
        #[arg(long)]
        index: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        max_secs: u64,
    },
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    let exe = std::env::current_exe().context("locating own executable")?;
    match cli.command {
        Cmd::Run(a) => {
            let config = CaseConfig {
                payload_size: a.size,
                subscribers: a.subs,
                message_count: a.count,
                publish_rate_hz: a.rate,
                transport: a.transport,
                policy: a.policy,
                region_size: a.region_size,
                slow_subscriber_ms: a.slow_ms,
            };
            let report = run_case(&exe, &config)?;
            print!("{}", summarize(std::slice::from_ref(&report)));
            for e in &report.errors {
                eprintln!("error: {e}");
            }
            if let Some(out) = a.out {
                write_subscriber_csv(std::slice::from_ref(&report), std::fs::File::create(&out)?)?;
                write_summary_csv(std::slice::from_ref(&report), std::fs::File::create(out.with_extension("summary.csv"))?)?;
            }
        }
        Cmd::Matrix { config, out_dir } => {
            let matrix = match config {
                Some(path) => MatrixConfig::load(&path)?,
                None => MatrixConfig::default(),
            };
            let reports = run_matrix(&exe, &matrix, |r| {
                eprintln!("{}: p50 {:?} us, valid {}", r.case_id, r.p50_us(), r.valid);
            });
            print!("{}", summarize(&reports));
            let (results, summary) = write_reports(&out_dir, &reports)?;
            eprintln!("wrote {} and {}", results.display(), summary.display());
        }
        Cmd::Stress { secs, workers, seed, json } => {
            let mut config = StressConfig { workers, ..StressConfig::default() };
            if let Some(s) = secs {
                config.duration = Duration::from_secs(s);
            }
            if let Some(s) = seed {
                config.seed = s;
            }
            let report = run_stress(&exe, &config)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            if let Some(path) = json {
                std::fs::write(path, serde_json::to_vec_pretty(&report)?)?;
            }
            if !report.passed() {
                std::process::exit(1);
            }
        }
        Cmd::Compat { dir } => {
            let mut registry = SchemaRegistry::new();
            registry.load_corpus(&dir.unwrap_or_else(bundled_corpus_dir))?;
            let report = CompatibilityReport::from_registry(&registry);
            print!("{report}");
            for name in &report.unsupported {
                println!("  no DATA: {name}");
            }
        }
        Cmd::Worker(w) => match w {
            WorkerCmd::Pub { case, out, .. } => worker::run_publisher(&case, &out)?,
            WorkerCmd::Sub { case, index, out } => worker::run_subscriber(&case, index, &out)?,
            WorkerCmd::Stress { mailbox, region, index, seed, max_secs } => {
                run_worker(&mailbox, &region, index, seed, Duration::from_secs(max_secs))?
            }
        },
    }
    Ok(())
}
