use std::net::SocketAddr;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use redzone_core::engine::Strategy;
use redzone_service::api::{router, AppState};
use redzone_service::batch::{execute, write_outputs, PreparedRun};
use redzone_service::bench::{render, run_benchmark, BenchmarkPlan};
use redzone_service::config::RunConfig;
use redzone_service::store::Store;

#[derive(Parser)]
#[command(name = "redzone", version, about = "Level-set estimation of red zones on measured surfaces")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one batch session against a simulated oracle and write its outputs.
    Run(RunArgs),
    /// Serve live sessions over HTTP (env LSE_PORT, LSE_DATA_DIR).
    Serve(ServeArgs),
    /// Multi-seed comparison of AL against the baselines on the edge-band map.
    Bench(BenchArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    strategy: Option<Strategy>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    budget: Option<usize>,
    /// Comma-separated steps at which to write label grids.
    #[arg(long, value_delimiter = ',')]
    snapshot_steps: Option<Vec<usize>>,
}

#[derive(Args)]
struct ServeArgs {
    /// Defaults to LSE_PORT, then 8080.
    #[arg(long)]
    port: Option<u16>,
    /// Defaults to LSE_DATA_DIR, then ./sessions.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value_t = 10)]
    seeds: u64,
    #[arg(long, default_value_t = 300)]
    al_cap: usize,
    /// Directory for report.txt and report.json; stdout only when absent.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

fn run(args: RunArgs) -> Result<()> {
    let mut config = RunConfig::load(&args.config)?;
    if let Some(s) = args.strategy {
        config.session.strategy = s;
    }
    if let Some(s) = args.seed {
        config.session.seed = s;
    }
    if let Some(b) = args.budget {
        config.budget = Some(b);
    }
    if let Some(steps) = args.snapshot_steps {
        config.snapshot_steps = steps;
    }
    let prepared = PreparedRun::new(config)?;
    let outcome = execute(&prepared)?;
    let files = write_outputs(&prepared, &outcome, &args.out_dir)?;
    let c = outcome.session.partition().counts();
    println!(
        "{} steps, status {:?}, U={} L={} C={}; wrote {} files to {}",
        outcome.session.step(),
        outcome.session.status(),
        c.upper,
        c.lower,
        c.undetermined,
        files.len(),
        args.out_dir.display()
    );
    Ok(())
}

async fn serve(args: ServeArgs) -> Result<()> {
    let port = match args.port {
        Some(p) => p,
        None => match std::env::var("LSE_PORT") {
            Ok(v) => v.parse().with_context(|| format!("LSE_PORT='{v}' is not a port"))?,
            Err(_) => 8080,
        },
    };
    let data_dir = args
        .data_dir
        .or_else(|| std::env::var_os("LSE_DATA_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("sessions"));
    let (state, problems) = AppState::open(Store::open(&data_dir)?)?;
    for p in &problems {
        eprintln!("warning: {p}");
    }
    let addr: SocketAddr = format!("{}:{port}", args.host)
        .parse()
        .with_context(|| format!("bad listen address {}:{port}", args.host))?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!(
        "serving {} sessions from {} on http://{}",
        state.session_ids().len(),
        data_dir.display(),
        listener.local_addr()?
    );
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

fn bench(args: BenchArgs) -> Result<()> {
    if args.seeds == 0 {
        bail!("--seeds must be at least 1");
    }
    let plan = BenchmarkPlan {
        seeds: (0..args.seeds).collect(),
        al_cap: args.al_cap,
        ..BenchmarkPlan::default()
    };
    let started = std::time::Instant::now();
    let report = run_benchmark(&plan)?;
    let text = render(&report);
    print!("{text}");
    eprintln!("elapsed {:.1}s", started.elapsed().as_secs_f64());
    if let Some(dir) = args.out_dir {
        std::fs::create_dir_all(&dir)?;
        std::fs::write(dir.join("report.txt"), &text)?;
        let mut json = serde_json::to_string_pretty(&report)?;
        json.push('\n');
        std::fs::write(dir.join("report.json"), json)?;
    }
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run(a) => run(a),
        Command::Bench(a) => bench(a),
        Command::Serve(a) => tokio::runtime::Runtime::new()?.block_on(serve(a)),
    }
}
