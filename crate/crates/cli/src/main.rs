//! `alids`: prepare datasets, score outliers, benchmark query strategies and
//! serve labeling sessions.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use alids_core::bench::{self, BenchConfig};
use alids_core::dataset::{self, EncodedSnapshot, FeatureSchema};
use alids_core::outlier::{self, LofParams};
use alids_service::store::{ENCODED_FILE, SPLIT_FILE};
use alids_service::Store;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "alids", version, about = "Active-learning toolkit for flow-record intrusion detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Encode a CSV under a schema and write encoded.json and split.json.
    Prepare {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        schema: PathBuf,
        /// Output directory; usable as a dataset directory for `serve`.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.8)]
        train_fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        stratified: bool,
    },
    /// Score every instance of an encoded dataset with LOF.
    Lof {
        /// encoded.json, or the directory holding it.
        #[arg(long)]
        snapshot: PathBuf,
        #[arg(long, default_value_t = outlier::DEFAULT_K)]
        k: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a strategy benchmark described by a JSON config.
    Bench {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's output directory.
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Serve the labeling API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
        /// Directory of prepared datasets, one sub-directory each.
        #[arg(long)]
        data_dir: PathBuf,
        /// Where session snapshots are kept; resumed on start.
        #[arg(long)]
        snapshot_dir: Option<PathBuf>,
    },
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl From<alids_core::Error> for CliError {
    fn from(e: alids_core::Error) -> Self {
        use alids_core::Error as E;
        match &e {
            E::Schema(_) | E::Config(_) | E::Parameter(_) | E::Capability(_) => CliError::Usage(e.to_string()),
            E::Io { source, .. } if source.kind() == io::ErrorKind::NotFound => CliError::Usage(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn runtime(context: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(format!("{}: {e}", context.display()))
}

fn prepare(csv: &Path, schema_path: &Path, out: &Path, train_fraction: f64, seed: u64, stratified: bool) -> CliResult<()> {
    let schema = FeatureSchema::load(schema_path)?;
    let in_csv = |e: alids_core::Error| match CliError::from(e) {
        CliError::Runtime(m) => CliError::Runtime(format!("{}: {m}", csv.display())),
        usage => usage,
    };
    let records = dataset::load_csv(csv, &schema).map_err(in_csv)?;
    let data = dataset::prepare(&records, &schema)
        .map_err(in_csv)?
        .with_source(csv.display().to_string());
    let manifest = dataset::split_manifest(&data, train_fraction, seed, stratified)?;

    fs::create_dir_all(out).map_err(|e| runtime(out, e))?;
    EncodedSnapshot::new(&schema, &data, true).save(out.join(ENCODED_FILE))?;
    let split_path = out.join(SPLIT_FILE);
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| runtime(&split_path, e))?;
    fs::write(&split_path, text).map_err(|e| runtime(&split_path, e))?;

    let (normal, attack, unlabeled) = data.class_balance();
    println!("instances: {} (width {})", data.len(), data.width());
    println!("class balance: normal {normal}, attack {attack}, unlabeled {unlabeled}");
    println!("split: train {}, test {}", manifest.train_ids.len(), manifest.test_ids.len());
    Ok(())
}

fn lof(snapshot: &Path, k: usize, out: &Path) -> CliResult<()> {
    let path = if snapshot.is_dir() { snapshot.join(ENCODED_FILE) } else { snapshot.to_path_buf() };
    let snap = EncodedSnapshot::load(&path)?;
    let data = snap
        .dataset()
        .ok_or_else(|| CliError::Usage(format!("{}: no encoded matrix cached", path.display())))?;
    let points: Vec<Vec<f64>> = data.instances.iter().map(|i| i.features.clone()).collect();
    let scores = outlier::lof_scores(&points, &data.ids(), LofParams { k })?;
    let file = fs::File::create(out).map_err(|e| runtime(out, e))?;
    outlier::write_scores_csv(io::BufWriter::new(file), &scores)?;
    let top = outlier::rank_pool(&scores, 1.0);
    println!("scored {} instances with k = {k}", scores.len());
    if let Some(first) = top.first() {
        println!("top outlier: id {first}");
    }
    Ok(())
}

fn bench_cmd(config: &Path, output_dir: Option<PathBuf>) -> CliResult<()> {
    let mut cfg = BenchConfig::load(config)?;
    if let Some(dir) = output_dir {
        cfg.output_dir = dir;
    }
    cfg.validate()?;
    let data = cfg.load_dataset()?;
    tracing::info!("benchmark on {} instances, {} repetitions", data.len(), cfg.repetitions);
    let report = bench::run(&cfg, &data).map_err(|e| CliError::Runtime(e.to_string()))?;
    bench::write_report(&report, &cfg.output_dir)?;
    let mut stdout = io::stdout().lock();
    for s in &report.summary.strategies {
        let fmt = |v: Option<f64>| v.map_or("unbounded".to_string(), |x| format!("{x}"));
        let _ = writeln!(
            stdout,
            "{}: {}/{} runs reached the stop rule, median labels {}, ratio to random {}",
            s.strategy,
            s.successes,
            s.runs,
            fmt(s.median_labels_to_success),
            fmt(s.ratio_to_random),
        );
    }
    let _ = writeln!(stdout, "wrote {}", cfg.output_dir.join("summary.json").display());
    Ok(())
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let terminate = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending().await,
        }
    };
    #[cfg(not(unix))]
    let terminate = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = terminate => {},
    }
    tracing::info!("shutdown signal received");
}

fn serve(addr: &str, data_dir: PathBuf, snapshot_dir: Option<PathBuf>) -> CliResult<()> {
    if !data_dir.is_dir() {
        return Err(CliError::Usage(format!("{}: not a directory", data_dir.display())));
    }
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::Runtime(e.to_string()))?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| CliError::Usage(format!("cannot bind {addr}: {e}")))?;
        let store = Store::open(data_dir, snapshot_dir).map_err(|e| CliError::Runtime(e.to_string()))?;
        let local = listener.local_addr().map_err(|e| CliError::Runtime(e.to_string()))?;
        tracing::info!("listening on http://{local}");
        println!("listening on http://{local}");
        alids_service::serve(listener, Arc::new(store), shutdown_signal())
            .await
            .map_err(|e| CliError::Runtime(e.to_string()))
    })
}

fn main() -> ExitCode {
    tracing_subscriber::fmt().with_writer(io::stderr).with_target(false).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Prepare {
            csv,
            schema,
            out,
            train_fraction,
            seed,
            stratified,
        } => prepare(&csv, &schema, &out, train_fraction, seed, stratified),
        Command::Lof { snapshot, k, out } => lof(&snapshot, k, &out),
        Command::Bench { config, output_dir } => bench_cmd(&config, output_dir),
        Command::Serve {
            addr,
            data_dir,
            snapshot_dir,
        } => serve(&addr, data_dir, snapshot_dir),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
