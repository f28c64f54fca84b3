//! HTTP server: SMS ingress, the operator and doctor APIs, the delivery
//! pool and the weekly advice scheduler.

pub mod auth;
mod routes;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use anyhow::Context;
use chrono::NaiveDate;
use tokio::net::TcpListener;
use tracing::{info, warn};

use pregcare_core::api::Ingress;
use pregcare_core::care::{CareService, WeeklySchedule};
use pregcare_core::config::ServerConfig;
use pregcare_core::dispatch::Dispatcher;
use pregcare_core::notify::{Deliverer, DeliveryPool, FileSinkGateway, Gateway};
use pregcare_core::protocol::TemplateCatalog;
use pregcare_core::registry::{Registry, StoreOptions};
use pregcare_core::{SharedClock, SystemClock};

pub use routes::router;

use auth::Sessions;

/// Everything a request handler can reach.
pub struct App {
    pub config: ServerConfig,
    pub registry: Arc<Registry>,
    pub care: Arc<CareService>,
    pub dispatcher: Arc<Dispatcher>,
    pub ingress: Ingress,
    pub sessions: Sessions,
    pub pool: DeliveryPool,
    pub clock: SharedClock,
}

impl App {
    /// Opens the store under `config.data_dir` and starts delivery workers.
    pub fn open(config: ServerConfig, clock: SharedClock) -> anyhow::Result<Arc<App>> {
        std::fs::create_dir_all(&config.data_dir).with_context(|| format!("creating {}", config.data_dir.display()))?;
        let registry = Arc::new(
            Registry::open(&config.data_dir, clock.clone(), StoreOptions { fsync: config.fsync })
                .with_context(|| format!("opening store in {}", config.data_dir.display()))?,
        );
        let gateway = FileSinkGateway::open(
            config.sink_path(),
            config.failure_rate,
            config.gateway_seed,
            config.gateway_delay(),
        )
        .with_context(|| format!("opening gateway sink {}", config.sink_path().display()))?;
        Self::with_parts(config, clock, registry, Arc::new(gateway))
    }

    /// Assembles the app around an existing store and gateway.
    pub fn with_parts(
        config: ServerConfig,
        clock: SharedClock,
        registry: Arc<Registry>,
        gateway: Arc<dyn Gateway>,
    ) -> anyhow::Result<Arc<App>> {
        let templates = Arc::new(match &config.templates {
            Some(path) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                TemplateCatalog::parse(&text).map_err(anyhow::Error::msg)?
            }
            None => TemplateCatalog::default(),
        });
        let care = Arc::new(CareService::new(
            registry.clone(),
            templates.clone(),
            config.care_config(),
        ));
        let dispatcher = Arc::new(Dispatcher::new(registry.clone(), templates, config.dispatch_config()));
        let deliverer = Arc::new(Deliverer::new(registry.clone(), gateway, config.retry_policy()));
        let pool = DeliveryPool::start(deliverer, config.delivery_workers);
        Ok(Arc::new(App {
            ingress: Ingress {
                care: care.clone(),
                dispatcher: dispatcher.clone(),
            },
            sessions: Sessions::new(config.token_ttl(), clock.clone()),
            config,
            registry,
            care,
            dispatcher,
            pool,
            clock,
        }))
    }

    /// Startup recovery: routes requests parked without a hospital and
    /// re-drives every notification still queued.
    pub fn recover(&self) -> anyhow::Result<()> {
        let located = self.dispatcher.recover()?;
        let queued = self.pool.submit_queued();
        info!(
            event = "recovery",
            relocated_notifications = located.len(),
            requeued = queued
        );
        Ok(())
    }

    fn weekly_marker(&self) -> PathBuf {
        self.config.data_dir.join("weekly_last_run")
    }

    fn last_weekly_run(&self) -> Option<NaiveDate> {
        std::fs::read_to_string(self.weekly_marker()).ok()?.trim().parse().ok()
    }

    /// Runs the weekly advice batch if the schedule says so. Returns the
    /// local date it ran for.
    pub fn run_weekly_if_due(&self, schedule: WeeklySchedule) -> anyhow::Result<Option<NaiveDate>> {
        let offset = chrono::Duration::minutes(self.config.utc_offset_minutes as i64);
        let now_local = (self.clock.now() + offset).naive_utc();
        let Some(today) = schedule.due(now_local, self.last_weekly_run()) else {
            return Ok(None);
        };
        let batch = self.care.weekly_advice_batch(today)?;
        for m in &batch.missing {
            warn!(event = "advice_missing", patient_id = %m.patient_id, week = m.week, language = %m.language);
        }
        for p in &batch.flagged {
            warn!(event = "patient_past_term", patient_id = %p);
        }
        self.pool
            .submit_all(batch.notifications.iter().map(|n| n.notification_id.clone()));
        std::fs::write(self.weekly_marker(), today.to_string())?;
        info!(event = "weekly_advice", date = %today, queued = batch.notifications.len());
        Ok(Some(today))
    }
}

/// Spawns the periodic jobs: the queued-notification sweep and the weekly
/// advice check.
pub fn spawn_background(app: Arc<App>) {
    let sweep = app.clone();
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(Duration::from_secs(1));
        loop {
            tick.tick().await;
            let app = sweep.clone();
            let _ = tokio::task::spawn_blocking(move || app.pool.submit_queued()).await;
        }
    });
    tokio::spawn(async move {
        let schedule = app.config.weekly_schedule();
        let mut tick = tokio::time::interval(Duration::from_secs(30));
        loop {
            tick.tick().await;
            let app = app.clone();
            let res = tokio::task::spawn_blocking(move || app.run_weekly_if_due(schedule)).await;
            if let Ok(Err(e)) = res {
                warn!(event = "weekly_advice_error", error = %e);
            }
        }
    });
}

/// JSON event log on stdout, one event per line. `RUST_LOG` filters.
pub fn init_tracing() {
    let filter = tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into());
    let _ = tracing_subscriber::fmt()
        .json()
        .flatten_event(true)
        .with_current_span(false)
        .with_env_filter(filter)
        .with_writer(std::io::stdout)
        .try_init();
}

async fn shutdown_signal() {
    #[cfg(unix)]
    {
        use tokio::signal::unix::{signal, SignalKind};
        let mut term = signal(SignalKind::terminate()).expect("install SIGTERM handler");
        tokio::select! {
            _ = tokio::signal::ctrl_c() => {}
            _ = term.recv() => {}
        }
    }
    #[cfg(not(unix))]
    let _ = tokio::signal::ctrl_c().await;
}

/// Opens the store, recovers and serves until Ctrl-C or SIGTERM.
pub async fn serve(config: ServerConfig) -> anyhow::Result<()> {
    let listener = TcpListener::bind(&config.listen)
        .await
        .with_context(|| format!("binding {}", config.listen))?;
    let addr: SocketAddr = listener.local_addr()?;
    let app = tokio::task::spawn_blocking(move || App::open(config, Arc::new(SystemClock))).await??;
    app.recover()?;
    spawn_background(app.clone());
    info!(event = "listening", addr = %addr);
    axum::serve(listener, router(app))
        .with_graceful_shutdown(shutdown_signal())
        .await?;
    info!(event = "shutdown");
    Ok(())
}
