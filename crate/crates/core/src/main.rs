// SPDX-License-Identifier: Apache-2.0

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use tracing_subscriber::EnvFilter;

use smsurvey::config::{Config, GatewayKind};
use smsurvey::http::{router, AppState};
use smsurvey::model::filter::{Predicate, Table};
use smsurvey::parse::YesNoVocabulary;
use smsurvey::scenario::{deliver_event, Scenario};
use smsurvey::session::SessionEngine;
use smsurvey::store::{export_csv, Store};
use smsurvey::transport::{Gateway, OutboxGateway, SimulatedNetwork};
use smsurvey::{AdminService, Clock, SystemClock};

type BoxResult<T> = Result<T, Box<dyn std::error::Error + Send + Sync>>;

#[derive(Debug, Parser)]
#[command(name = "smsurvey", version, about = "Two-way SMS survey engine")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, short, global = true, env = "SMSURVEY_CONFIG")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the admin API and gateway callbacks over HTTP.
    Serve {
        #[arg(long)]
        listen: Option<std::net::SocketAddr>,
    },
    /// Run a scenario script against a fresh in-memory store and print the
    /// JSON report. Exits 1 if an expectation fails.
    RunScenario {
        file: PathBuf,
        /// Write the report here instead of stdout.
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Print a table as CSV.
    Export {
        table: Table,
        /// Row filter, e.g. `user.village=Keren`; repeat to combine.
        #[arg(long = "filter", short = 'f')]
        filters: Vec<Predicate>,
    },
    /// Import responses from a CSV export.
    ImportResponses { file: PathBuf },
    /// Staff account administration.
    Staff {
        #[command(subcommand)]
        command: StaffCommand,
    },
}

#[derive(Debug, Subcommand)]
enum StaffCommand {
    /// Create the first superuser. Refused once any staff account exists.
    Bootstrap {
        name: String,
        #[arg(long, env = "SMSURVEY_PASSWORD", hide_env_values = true)]
        password: String,
    },
}

fn open_store(config: &Config) -> BoxResult<Arc<Store>> {
    let store = if config.storage == Path::new(":memory:") {
        Store::open_in_memory()?
    } else {
        Store::open(&config.storage)?
    };
    Ok(Arc::new(store))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.command {
        Command::Serve { .. } => "info",
        _ => "warn",
    };
    tracing_subscriber::fmt()
        .with_env_filter(
            EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(level)),
        )
        .with_writer(std::io::stderr)
        .init();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> BoxResult<ExitCode> {
    if let Command::RunScenario { file, output } = &cli.command {
        return run_scenario(file, output.as_deref());
    }
    let config = Config::load(cli.config.as_deref())?;
    let clock = SystemClock;
    match cli.command {
        Command::RunScenario { .. } => unreachable!("handled above"),
        Command::Serve { listen } => serve(config, listen),
        Command::Export { table, filters } => {
            let store = open_store(&config)?;
            let data = store.load_table(table)?;
            let rows = smsurvey::model::filter::filter_rows(&data, &filters)?;
            print!("{}", export_csv(&data.columns, &rows)?);
            Ok(ExitCode::SUCCESS)
        }
        Command::ImportResponses { file } => {
            let store = open_store(&config)?;
            let doc = std::fs::read_to_string(&file)?;
            let vocabulary = YesNoVocabulary::from_settings(&store.settings()?);
            let report = store.import_responses_csv(&doc, &vocabulary, clock.now())?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(ExitCode::SUCCESS)
        }
        Command::Staff {
            command: StaffCommand::Bootstrap { name, password },
        } => {
            let store = open_store(&config)?;
            let engine = build_engine(&config, store, Arc::new(clock)).0;
            let service = AdminService::new(engine, config.token_lifetime);
            let staff = service.bootstrap_superuser(&name, &password)?;
            println!("{}", serde_json::to_string_pretty(&staff)?);
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn run_scenario(file: &Path, output: Option<&Path>) -> BoxResult<ExitCode> {
    let text = std::fs::read_to_string(file)?;
    let report = Scenario::parse(&text)?.run()?;
    let json = report.to_json();
    match output {
        Some(path) => std::fs::write(path, &json)?,
        None => print!("{json}"),
    }
    let failed = report.expectations.iter().filter(|e| !e.passed).count();
    for e in report.expectations.iter().filter(|e| !e.passed) {
        eprintln!(
            "line {}: expected {}, got {}",
            e.line, e.expectation, e.actual
        );
    }
    eprintln!(
        "{} expectations, {} failed",
        report.expectations.len(),
        failed
    );
    Ok(if report.passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn build_engine(
    config: &Config,
    store: Arc<Store>,
    clock: Arc<dyn Clock>,
) -> (Arc<SessionEngine>, Option<Arc<SimulatedNetwork>>) {
    let (gateway, network): (Arc<dyn Gateway>, _) = match config.gateway {
        GatewayKind::Simulated => {
            let net = Arc::new(SimulatedNetwork::new(
                config.network.model(),
                config.seed,
                clock.clone(),
            ));
            (net.clone(), Some(net))
        }
        GatewayKind::Outbox => (Arc::new(OutboxGateway::new(&config.outbox)), None),
    };
    let engine = Arc::new(SessionEngine::new(
        store,
        gateway,
        clock,
        config.engine_config(),
    ));
    (engine, network)
}

fn serve(config: Config, listen: Option<std::net::SocketAddr>) -> BoxResult<ExitCode> {
    let store = open_store(&config)?;
    let clock: Arc<dyn Clock> = Arc::new(SystemClock);
    let (engine, network) = build_engine(&config, store, clock.clone());
    let service = Arc::new(AdminService::new(engine.clone(), config.token_lifetime));
    let addr = listen.unwrap_or(config.listen);
    let app = router(AppState {
        service,
        gateway_token: std::env::var("SMSURVEY_GATEWAY_TOKEN").ok(),
    });
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?;
    runtime.block_on(async move {
        let tick = config.tick;
        tokio::spawn(async move {
            let mut interval = tokio::time::interval(tick);
            loop {
                interval.tick().await;
                let now = clock.now();
                if let Some(net) = &network {
                    for event in net.simulate_step(now) {
                        if let Err(e) = deliver_event(&engine, &event, now) {
                            tracing::warn!(error = %e, "simulated event not applied");
                        }
                    }
                }
                if let Err(e) = engine.expire_sessions(now) {
                    tracing::warn!(error = %e, "session expiry failed");
                }
            }
        });
        let listener = tokio::net::TcpListener::bind(addr).await?;
        tracing::info!(%addr, gateway = ?config.gateway, "listening");
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok::<_, Box<dyn std::error::Error + Send + Sync>>(())
    })?;
    Ok(ExitCode::SUCCESS)
}
