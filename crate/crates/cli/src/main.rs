use std::net::{IpAddr, SocketAddr};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use walkcoach_cli::commands::{self, ServeOptions};
use walkcoach_cli::CliError;
use walkcoach_core::geo::GeoPoint;
use walkcoach_core::Condition;

#[derive(Parser)]
#[command(name = "walkcoach", version, about = "Walking companion engine, simulator and study analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scripted walk and write its event log
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        profile: PathBuf,
        #[arg(long, default_value = "info-motive")]
        condition: Condition,
        /// Overrides the scenario seed
        #[arg(long)]
        seed: Option<u64>,
        /// JSONL output; printed to stdout when omitted
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rebuild a session from its log and verify the recorded summary
    Replay {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        profile: Option<PathBuf>,
        #[arg(long)]
        condition: Option<Condition>,
    },
    /// Fit the crossover mixed model to questionnaire responses
    Analyze {
        #[arg(long)]
        responses: PathBuf,
        #[arg(long, default_value = "positive_feelings")]
        outcome: String,
        #[arg(long)]
        json: bool,
    },
    /// Internal consistency of one composite
    Reliability {
        #[arg(long)]
        responses: PathBuf,
        #[arg(long, default_value = "positive_feelings")]
        construct: String,
        #[arg(long)]
        json: bool,
    },
    /// Write a synthetic questionnaire dataset with known parameters
    Synthesize {
        #[arg(long, default_value_t = 12)]
        participants: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Start the HTTP service
    Serve {
        #[arg(long, env = "WALKCOACH_PORT", default_value_t = 8080)]
        port: u16,
        #[arg(long, env = "WALKCOACH_HOST", default_value = "127.0.0.1")]
        host: IpAddr,
        #[arg(long, env = "WALKCOACH_GRAPH")]
        graph: Option<PathBuf>,
        #[arg(long, env = "WALKCOACH_POIS")]
        pois: Option<PathBuf>,
        #[arg(long, env = "WALKCOACH_DATA_DIR")]
        data_dir: Option<PathBuf>,
        /// Default planning origin as `lat,lon`
        #[arg(long, env = "WALKCOACH_ORIGIN")]
        origin: Option<String>,
    },
}

fn parse_origin(s: &str) -> Result<GeoPoint, CliError> {
    let bad = || CliError::Usage(format!("origin `{s}` is not `lat,lon`"));
    let (lat, lon) = s.split_once(',').ok_or_else(bad)?;
    let lat = lat.trim().parse().map_err(|_| bad())?;
    let lon = lon.trim().parse().map_err(|_| bad())?;
    GeoPoint::new(lat, lon).map_err(|e| CliError::Usage(e.to_string()))
}

fn pretty<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("report serializes")
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate {
            scenario,
            profile,
            condition,
            seed,
            out,
        } => {
            let profile = commands::load_profile(&profile)?;
            let (report, jsonl) = commands::simulate(&scenario, &profile, condition, seed, out.as_deref())?;
            match out {
                Some(_) => println!("{}", pretty(&report)),
                None => print!("{jsonl}"),
            }
        }
        Command::Replay { log, profile, condition } => {
            let profile = profile.as_deref().map(commands::load_profile).transpose()?;
            println!("{}", pretty(&commands::replay(&log, profile, condition)?));
        }
        Command::Analyze { responses, outcome, json } => {
            let report = commands::analyze_file(&responses, &outcome)?;
            if json {
                println!("{}", pretty(&report));
            } else {
                println!("{report}");
            }
        }
        Command::Reliability {
            responses,
            construct,
            json,
        } => {
            let report = commands::reliability_file(&responses, &construct)?;
            if json {
                println!("{}", pretty(&report));
            } else {
                println!("{report}");
            }
        }
        Command::Synthesize { participants, seed, out } => {
            let csv = commands::synthesize(participants, seed)?;
            match out {
                Some(path) => std::fs::write(&path, csv).map_err(|source| CliError::Io {
                    path: path.display().to_string(),
                    source,
                })?,
                None => print!("{csv}"),
            }
        }
        Command::Serve {
            port,
            host,
            graph,
            pois,
            data_dir,
            origin,
        } => {
            let origin = origin.as_deref().map(parse_origin).transpose()?;
            let rt = tokio::runtime::Runtime::new().map_err(|source| CliError::Io {
                path: "runtime".into(),
                source,
            })?;
            rt.block_on(commands::serve(ServeOptions {
                addr: Some(SocketAddr::new(host, port)),
                graph,
                pois,
                data_dir,
                origin,
            }))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
