use std::fs::File;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::Context;
use clap::{Parser, Subcommand};

use pregcare_cli::client::Client;
use pregcare_cli::fleet::{self, FleetScenario, GeoBounds};
use pregcare_cli::{describe_ack, exit, exit_code_for, prepare_payload};
use pregcare_core::config::ServerConfig;
use pregcare_core::protocol::format_timestamp;
use pregcare_core::registry::password::PasswordHasher;
use pregcare_core::registry::seed::SeedReport;
use pregcare_core::registry::{Registry, StoreOptions};
use pregcare_core::SystemClock;

#[derive(Parser)]
#[command(
    name = "pregcare",
    version,
    about = "Pregnancy care and emergency dispatch server tools"
)]
struct Cli {
    /// Server base URL.
    #[arg(
        long,
        global = true,
        env = "PREGCARE_SERVER",
        default_value = "http://127.0.0.1:8080"
    )]
    server: String,
    /// Server config file (TOML).
    #[arg(long, global = true, env = "PREGCARE_CONFIG")]
    config: Option<PathBuf>,
    /// Seed for generated data.
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    /// Key presented to the ingress endpoint.
    #[arg(long, global = true, env = "PREGCARE_INGRESS_KEY", hide_env_values = true)]
    gateway_key: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load facilities, doctors and advice into the data directory. The
    /// server must not be running.
    Seed {
        facilities: PathBuf,
        doctors: PathBuf,
        advice: PathBuf,
        #[arg(long)]
        units: Option<PathBuf>,
        /// Operator and admin accounts.
        #[arg(long)]
        accounts: Option<PathBuf>,
        /// Overrides the config's data directory.
        #[arg(long)]
        data_dir: Option<PathBuf>,
    },
    /// Write the data directory as NDJSON to stdout. The server must not be
    /// running.
    Dump {
        #[arg(long)]
        data_dir: Option<PathBuf>,
    },
    /// Load an NDJSON dump into the data directory in one commit. The server
    /// must not be running.
    Restore {
        file: PathBuf,
        #[arg(long)]
        data_dir: Option<PathBuf>,
    },
    /// Send one client message to the server.
    #[command(disable_help_subcommand = true)]
    Send {
        #[command(subcommand)]
        message: Message,
        /// Sender phone; defaults to the registering phone for `reg`.
        #[arg(long, global = true)]
        sender: Option<String>,
    },
    /// Register synthetic patients and send HELP messages at a fixed rate.
    Fleet {
        #[arg(long, default_value_t = 50)]
        patients: usize,
        /// HELP messages per second.
        #[arg(long, default_value_t = 1.0)]
        rate: f64,
        /// Seconds to run.
        #[arg(long, default_value_t = 60.0)]
        duration: f64,
        /// lat_min,lon_min,lat_max,lon_max
        #[arg(long)]
        bounds: Option<GeoBounds>,
        /// Print the report as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Print server statistics.
    Report {
        #[arg(long)]
        json: bool,
    },
    /// Run the server.
    Serve,
}

#[derive(Subcommand)]
enum Message {
    /// REG: name, phone, lat, lon, LMP date, language [husband phone]
    Reg {
        name: String,
        phone: String,
        #[arg(allow_hyphen_values = true)]
        lat: String,
        #[arg(allow_hyphen_values = true)]
        lon: String,
        lmp: String,
        lang: String,
        husband: Option<String>,
    },
    /// HELP: patient id, lat, lon
    Help {
        patient_id: String,
        #[arg(allow_hyphen_values = true)]
        lat: String,
        #[arg(allow_hyphen_values = true)]
        lon: String,
        /// Client timestamp (RFC 3339); now when omitted.
        #[arg(long)]
        ts: Option<String>,
    },
    /// CHG: patient id, preferred review date
    Chg { patient_id: String, date: String },
}

const DEFAULT_SENDER: &str = "+9647500000000";

fn load_config(path: Option<&Path>) -> anyhow::Result<ServerConfig> {
    ServerConfig::load(path).context("loading config")
}

fn with_data_dir(path: Option<&Path>, data_dir: Option<PathBuf>) -> anyhow::Result<ServerConfig> {
    let mut cfg = load_config(path)?;
    if let Some(d) = data_dir {
        cfg.data_dir = d;
    }
    Ok(cfg)
}

fn print_report(label: &str, path: &Path, report: &SeedReport) {
    for e in &report.errors {
        eprintln!("{}:{}: {}", path.display(), e.line, e.message);
    }
    println!(
        "{label}: {} ingested, {} rejected",
        report.ingested,
        report.errors.len()
    );
}

fn seed(
    config: &ServerConfig,
    files: [&Path; 3],
    units: Option<&Path>,
    accounts: Option<&Path>,
) -> anyhow::Result<i32> {
    let registry = open_registry(config)?;
    let open = |p: &Path| File::open(p).with_context(|| format!("reading {}", p.display()));
    let hasher = PasswordHasher::default();
    let [facilities, doctors, advice] = files;

    let f = registry.seed_facilities_csv(open(facilities)?)?;
    print_report("facilities", facilities, &f);
    let d = registry.seed_doctors_csv(open(doctors)?, &hasher)?;
    print_report("doctors", doctors, &d);
    let a = registry.seed_advice_tsv(open(advice)?)?;
    print_report("advice", advice, &a);
    let mut clean = f.is_clean() && d.is_clean() && a.is_clean();
    if let Some(p) = units {
        let r = registry.seed_units_csv(open(p)?)?;
        print_report("units", p, &r);
        clean &= r.is_clean();
    }
    if let Some(p) = accounts {
        let r = registry.seed_accounts_csv(open(p)?, &hasher)?;
        print_report("accounts", p, &r);
        clean &= r.is_clean();
    }
    registry.checkpoint()?;
    println!("{}/{}/{} ingested", f.ingested, d.ingested, a.ingested);
    Ok(if clean { exit::OK } else { exit::DOMAIN })
}

fn open_registry(config: &ServerConfig) -> anyhow::Result<Registry> {
    std::fs::create_dir_all(&config.data_dir)?;
    Registry::open(
        &config.data_dir,
        Arc::new(SystemClock),
        StoreOptions { fsync: config.fsync },
    )
    .with_context(|| format!("opening {}", config.data_dir.display()))
}

fn dump(config: &ServerConfig) -> anyhow::Result<i32> {
    let registry = open_registry(config)?;
    let stdout = std::io::stdout().lock();
    registry.dump(stdout)?;
    Ok(exit::OK)
}

fn restore(config: &ServerConfig, file: &Path) -> anyhow::Result<i32> {
    let registry = open_registry(config)?;
    let input = File::open(file).with_context(|| format!("reading {}", file.display()))?;
    let n = registry.restore(std::io::BufReader::new(input))?;
    registry.checkpoint()?;
    println!("{n} rows restored");
    Ok(exit::OK)
}

async fn send(client: &Client, message: Message, sender: Option<String>) -> i32 {
    let (raw, default_sender) = match message {
        Message::Reg {
            name,
            phone,
            lat,
            lon,
            lmp,
            lang,
            husband,
        } => {
            let mut raw = format!("REG|{name}|{phone}|{lat}|{lon}|{lmp}|{lang}");
            if let Some(h) = husband {
                raw.push('|');
                raw.push_str(&h);
            }
            (raw, phone)
        }
        Message::Help {
            patient_id,
            lat,
            lon,
            ts,
        } => {
            let ts = ts.unwrap_or_else(|| format_timestamp(chrono::Utc::now()));
            (
                format!("HELP|{patient_id}|{lat}|{lon}|{ts}"),
                DEFAULT_SENDER.to_string(),
            )
        }
        Message::Chg { patient_id, date } => (format!("CHG|{patient_id}|{date}"), DEFAULT_SENDER.to_string()),
    };
    let sender = sender.unwrap_or(default_sender);
    let payload = match prepare_payload(&raw, &sender) {
        Ok(p) => p,
        Err(e) => {
            println!("{}", e.code);
            eprintln!("{}", e.message);
            return exit::DOMAIN;
        }
    };
    match client.send_sms(payload.as_bytes(), &sender).await {
        Ok(Ok(ack)) => {
            println!("{}", describe_ack(&ack));
            exit::OK
        }
        Ok(Err(e)) => {
            println!("{}", e.code);
            eprintln!("{}", e.message);
            exit_code_for(&e)
        }
        Err(e) => {
            eprintln!("{e}");
            exit::TRANSPORT
        }
    }
}

fn fmt_ms(v: Option<f64>) -> String {
    v.map_or("-".into(), |x| format!("{x:.1} ms"))
}

async fn run_fleet(client: &Client, scenario: FleetScenario, json: bool) -> i32 {
    let epoch = chrono::Utc::now().date_naive();
    match fleet::run(client, &scenario, epoch).await {
        Ok(r) => {
            if json {
                println!("{}", serde_json::to_string_pretty(&r).expect("report serializes"));
            } else {
                println!("sent        {}", r.sent);
                println!("accepted    {}", r.accepted);
                println!("errors      {}", r.errors);
                for (code, n) in &r.error_codes {
                    println!("  {code}: {n}");
                }
                println!("p50         {}", fmt_ms(r.p50_ms));
                println!("p95         {}", fmt_ms(r.p95_ms));
                println!("p99         {}", fmt_ms(r.p99_ms));
                println!("rate        {:.2}/s over {:.2} s", r.achieved_rate, r.elapsed_s);
            }
            if r.errors == 0 {
                exit::OK
            } else {
                exit::DOMAIN
            }
        }
        Err(fleet::FleetError::Transport(e)) => {
            eprintln!("{e}");
            exit::TRANSPORT
        }
        Err(e) => {
            eprintln!("{e}");
            exit::DOMAIN
        }
    }
}

async fn report(client: &Client, json: bool) -> i32 {
    match client.stats().await {
        Ok(s) => {
            if json {
                println!("{}", serde_json::to_string_pretty(&s).expect("stats serialize"));
            } else {
                println!("patients       {} ({} active)", s.patients, s.active_patients);
                println!("facilities     {}", s.facilities);
                println!("doctors        {}", s.doctors);
                for (state, n) in &s.requests_by_state {
                    println!("requests.{state:<12} {n}");
                }
                for (status, n) in &s.units_by_status {
                    println!("units.{status:<15} {n}");
                }
                for (status, n) in &s.notifications_by_status {
                    println!("notifications.{status:<7} {n}");
                }
                println!("unit_imbalance {}", s.unit_imbalance);
            }
            exit::OK
        }
        Err(e) => {
            eprintln!("{e}");
            exit::TRANSPORT
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let runtime = tokio::runtime::Runtime::new().expect("tokio runtime");
    let code = runtime.block_on(async {
        let client = Client::new(&cli.server, cli.gateway_key.clone());
        let result: anyhow::Result<i32> = match cli.command {
            Command::Seed {
                facilities,
                doctors,
                advice,
                units,
                accounts,
                data_dir,
            } => with_data_dir(cli.config.as_deref(), data_dir).and_then(|cfg| {
                seed(
                    &cfg,
                    [&facilities, &doctors, &advice],
                    units.as_deref(),
                    accounts.as_deref(),
                )
            }),
            Command::Dump { data_dir } => with_data_dir(cli.config.as_deref(), data_dir).and_then(|cfg| dump(&cfg)),
            Command::Restore { file, data_dir } => {
                with_data_dir(cli.config.as_deref(), data_dir).and_then(|cfg| restore(&cfg, &file))
            }
            Command::Send { message, sender } => Ok(send(&client, message, sender).await),
            Command::Fleet {
                patients,
                rate,
                duration,
                bounds,
                json,
            } => {
                let scenario = FleetScenario {
                    seed: cli.seed,
                    patient_count: patients,
                    help_rate: rate,
                    duration: Duration::from_secs_f64(duration.max(0.0)),
                    geo_bounds: bounds.unwrap_or_default(),
                };
                Ok(run_fleet(&client, scenario, json).await)
            }
            Command::Report { json } => Ok(report(&client, json).await),
            Command::Serve => match load_config(cli.config.as_deref()) {
                Ok(cfg) => {
                    pregcare_service::init_tracing();
                    pregcare_service::serve(cfg).await.map(|_| exit::OK)
                }
                Err(e) => Err(e),
            },
        };
        result.unwrap_or_else(|e| {
            eprintln!("error: {e:#}");
            exit::DOMAIN
        })
    });
    ExitCode::from(code as u8)
}
