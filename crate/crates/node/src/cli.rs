//! The `blockaudit` command-line tool.
//!
//! Exit codes: 0 success, 1 usage or runtime error, 2 integrity violation.

use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use blockaudit::audit::TransactionScheme;
use blockaudit::netsim::{write_aggregate_csv, write_tx_csv, ScenarioConfig, Simulation};
use blockaudit::ops::{self, ExperimentMatrix, OpsError};
use clap::{Parser, Subcommand, ValueEnum};

use crate::{bootstrap, NodeKey, NodeOptions, PeerMasterList};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_INTEGRITY: i32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Parser)]
#[command(name = "blockaudit", version, about = "Replicated tamper-evident audit ledger")]
pub struct Cli {
    /// Output format.
    #[arg(long, global = true, value_enum, default_value = "csv", env = "BLOCKAUDIT_FORMAT")]
    pub format: Format,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the experiment matrix on the simulator.
    Bench {
        /// Matrix JSON; the built-in default matrix when omitted.
        #[arg(long)]
        matrix: Option<PathBuf>,
        /// Directory for runs.csv and aggregate.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Verify both chains in a data directory.
    Verify {
        #[arg(long, env = "BLOCKAUDIT_DATA_DIR")]
        data_dir: PathBuf,
    },
    /// Flip every stored byte, one at a time, and check each flip is caught.
    TamperDrill {
        #[arg(long, env = "BLOCKAUDIT_DATA_DIR")]
        data_dir: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Reconstruct an entity as of a point in time.
    Restore {
        #[arg(long, env = "BLOCKAUDIT_DATA_DIR")]
        data_dir: PathBuf,
        #[arg(long)]
        class_name: String,
        #[arg(long)]
        entity_id: String,
        /// `/Date(ms+hhmm)/` or RFC 3339.
        #[arg(long)]
        as_of: String,
    },
    /// Start an ingest node.
    RunNode {
        #[arg(long, env = "BLOCKAUDIT_MASTER_LIST")]
        master_list: PathBuf,
        #[arg(long, env = "BLOCKAUDIT_SELF_INDEX")]
        self_index: u32,
        /// Hex Ed25519 seed file.
        #[arg(long, env = "BLOCKAUDIT_KEY")]
        key: PathBuf,
        #[arg(long, env = "BLOCKAUDIT_SCHEME", default_value = "per-tx")]
        scheme: TransactionScheme,
        #[arg(long, env = "BLOCKAUDIT_DATA_DIR")]
        data_dir: Option<PathBuf>,
        /// HTTP API address.
        #[arg(long, env = "BLOCKAUDIT_LISTEN", default_value = "0.0.0.0:8080")]
        listen: SocketAddr,
        #[arg(long, env = "BLOCKAUDIT_NO_VIEW_CHANGE")]
        no_view_change: bool,
    },
    /// Write a new node key and print its public identity.
    Keygen {
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one scenario file on the simulator.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
    },
    /// Fill a data directory with chains produced by a simulated run.
    SeedLedger {
        #[arg(long, env = "BLOCKAUDIT_DATA_DIR")]
        data_dir: PathBuf,
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        replica: usize,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("integrity check failed")]
    Integrity,
    #[error(transparent)]
    Ops(#[from] OpsError),
    #[error(transparent)]
    Node(#[from] crate::NodeError),
    #[error(transparent)]
    Sim(#[from] blockaudit::netsim::SimError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Integrity => EXIT_INTEGRITY,
            _ => EXIT_USAGE,
        }
    }
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let stdout = std::io::stdout();
    match run(cli, &mut stdout.lock()) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            if !matches!(e, CliError::Integrity) {
                eprintln!("error: {e}");
            }
            e.exit_code()
        }
    }
}

pub fn main() -> i32 {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    run_from(std::env::args_os())
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

pub fn run(cli: Cli, out: &mut impl Write) -> Result<(), CliError> {
    let format = cli.format;
    match cli.command {
        Command::Bench { matrix, out: dir } => {
            let matrix = match matrix {
                Some(p) => ExperimentMatrix::from_json(&read(&p)?)?,
                None => ExperimentMatrix::default(),
            };
            let report = ops::run_bench(&matrix, dir.as_deref())?;
            match format {
                Format::Json => serde_json::to_writer_pretty(&mut *out, &report)?,
                Format::Csv => write_aggregate_csv(&mut *out, &report.sweep.rows)?,
            }
            writeln!(out)?;
            for c in &report.curves {
                eprintln!("{c}");
            }
            eprintln!(
                "{} runs, {} curves, {} inversions, {} non-positive latencies",
                report.sweep.runs.len(),
                report.curves.len(),
                report.inversions(),
                report.non_positive_latencies()
            );
        }
        Command::Verify { data_dir } => {
            let report = ops::verify(&data_dir)?;
            match format {
                Format::Json => {
                    serde_json::to_writer_pretty(&mut *out, &report)?;
                    writeln!(out)?;
                }
                Format::Csv => {
                    writeln!(out, "chain,blocks_checked,violations")?;
                    for (name, r) in [("recovery", &report.recovery), ("detection", &report.detection)] {
                        if let Some(r) = r {
                            writeln!(out, "{name},{},{}", r.blocks_checked, r.violations.len())?;
                        }
                    }
                }
            }
            if !report.is_clean() {
                for p in report.problems() {
                    eprintln!("violation: {p}");
                }
                return Err(CliError::Integrity);
            }
        }
        Command::TamperDrill { data_dir, seed } => {
            let report = ops::tamper_drill(&data_dir, seed)?;
            match format {
                Format::Json => serde_json::to_writer_pretty(&mut *out, &report)?,
                Format::Csv => write!(
                    out,
                    "seed,mutations_tried,detected,missed\n{},{},{},{}",
                    report.seed, report.mutations_tried, report.detected, report.missed
                )?,
            }
            writeln!(out)?;
            if report.missed > 0 {
                for (file, offset) in &report.missed_at {
                    eprintln!("undetected mutation: {file} byte {offset}");
                }
                return Err(CliError::Integrity);
            }
        }
        Command::Restore {
            data_dir,
            class_name,
            entity_id,
            as_of,
        } => {
            let state = ops::restore(&data_dir, &class_name, &entity_id, &as_of)?;
            match format {
                Format::Json => serde_json::to_writer_pretty(&mut *out, &state)?,
                Format::Csv => {
                    let mut w = csv::Writer::from_writer(&mut *out);
                    w.write_record(["property", "value", "state"])?;
                    match &state {
                        blockaudit::ledger::RestoredState::Live(props) => {
                            for (k, v) in props {
                                w.write_record([k.as_str(), v.as_deref().unwrap_or(""), "live"])?;
                            }
                        }
                        blockaudit::ledger::RestoredState::Deleted => w.write_record(["", "", "deleted"])?,
                    }
                    w.flush()?;
                }
            }
            writeln!(out)?;
        }
        Command::RunNode {
            master_list,
            self_index,
            key,
            scheme,
            data_dir,
            listen,
            no_view_change,
        } => {
            let master = PeerMasterList::load(&master_list)?;
            let key = NodeKey::load(&key)?;
            let mut opts = NodeOptions::new(master, self_index, key, listen);
            opts.scheme = scheme;
            opts.data_dir = data_dir;
            if no_view_change {
                opts.view_change = None;
            }
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async {
                let node = bootstrap(opts).await?;
                eprintln!("replica {self_index} serving http on {}", node.http_addr);
                tokio::signal::ctrl_c().await?;
                node.shutdown().await;
                Ok::<_, CliError>(())
            })?;
        }
        Command::Keygen { out: path } => {
            let key = NodeKey::generate();
            key.save(&path)?;
            writeln!(out, "{}", key.public_hex())?;
        }
        Command::Simulate { scenario } => {
            let cfg = ScenarioConfig::from_json(&read(&scenario)?)?;
            let mut sim = Simulation::new(cfg)?;
            let metrics = sim.run();
            match format {
                Format::Json => writeln!(out, "{}", metrics.to_json())?,
                Format::Csv => write_tx_csv(&mut *out, [&metrics])?,
            }
        }
        Command::SeedLedger {
            data_dir,
            scenario,
            replica,
        } => {
            let cfg = match scenario {
                Some(p) => ScenarioConfig::from_json(&read(&p)?)?,
                None => ScenarioConfig {
                    max_transactions: Some(20),
                    ..ScenarioConfig::default()
                },
            };
            std::fs::create_dir_all(&data_dir)?;
            let blocks = ops::populate_data_dir(&data_dir, cfg, replica)?;
            writeln!(out, "wrote {blocks} blocks to {}", data_dir.display())?;
        }
    }
    Ok(())
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(std::io::Error::other(e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run_from(["blockaudit", "nonsense"]), EXIT_USAGE);
        assert_eq!(run_from(["blockaudit", "verify"]), EXIT_USAGE);
        assert_eq!(run_from(["blockaudit", "--version"]), EXIT_OK);
    }

    #[test]
    fn scheme_flag_parses() {
        let cli = Cli::try_parse_from([
            "blockaudit",
            "run-node",
            "--master-list",
            "m.json",
            "--self-index",
            "2",
            "--key",
            "k",
            "--scheme",
            "fixed",
        ])
        .unwrap();
        match cli.command {
            Command::RunNode { scheme, self_index, .. } => {
                assert_eq!(scheme, TransactionScheme::FixedLength);
                assert_eq!(self_index, 2);
            }
            other => panic!("parsed {other:?}"),
        }
    }
}
