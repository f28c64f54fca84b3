//! Synthetic client fleet: registers patients, then fires HELP messages at
//! a fixed rate and measures send-to-ack latency on the client side.

use std::sync::Arc;
use std::time::{Duration, Instant};

use chrono::{DateTime, NaiveDate, Utc};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::Serialize;
use thiserror::Error;
use tokio::sync::Semaphore;
use tokio::time::MissedTickBehavior;

use pregcare_core::api::Ack;
use pregcare_core::protocol::{serialize_inbound, HelpCall, Language, MessageBody, Registration};
use pregcare_core::{GeoPoint, PatientId, RequestState};

use crate::client::{Client, TransportError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoBounds {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
}

impl Default for GeoBounds {
    /// A box around Erbil.
    fn default() -> Self {
        GeoBounds {
            lat_min: 36.0,
            lat_max: 36.4,
            lon_min: 43.8,
            lon_max: 44.2,
        }
    }
}

impl std::str::FromStr for GeoBounds {
    type Err = String;

    /// `lat_min,lon_min,lat_max,lon_max`
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let v: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
            .collect::<Result<_, _>>()?;
        let [lat_min, lon_min, lat_max, lon_max] = v[..] else {
            return Err("expected lat_min,lon_min,lat_max,lon_max".into());
        };
        Ok(GeoBounds {
            lat_min,
            lat_max,
            lon_min,
            lon_max,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FleetScenario {
    pub seed: u64,
    pub patient_count: usize,
    /// HELP messages per second.
    pub help_rate: f64,
    pub duration: Duration,
    pub geo_bounds: GeoBounds,
}

#[derive(Debug, Error, PartialEq)]
pub enum ScenarioError {
    #[error("patient_count must be positive")]
    NoPatients,
    #[error("help_rate must be a positive finite number")]
    BadRate,
    #[error("geo bounds must satisfy -90 <= lat_min <= lat_max <= 90 and -180 <= lon_min <= lon_max <= 180")]
    BadBounds,
}

impl FleetScenario {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.patient_count == 0 {
            return Err(ScenarioError::NoPatients);
        }
        if !(self.help_rate.is_finite() && self.help_rate > 0.0) {
            return Err(ScenarioError::BadRate);
        }
        let b = &self.geo_bounds;
        let ok = (-90.0..=90.0).contains(&b.lat_min)
            && (-90.0..=90.0).contains(&b.lat_max)
            && (-180.0..=180.0).contains(&b.lon_min)
            && (-180.0..=180.0).contains(&b.lon_max)
            && b.lat_min <= b.lat_max
            && b.lon_min <= b.lon_max;
        if !ok {
            return Err(ScenarioError::BadBounds);
        }
        Ok(())
    }

    /// Number of HELP messages the scenario sends.
    pub fn help_count(&self) -> usize {
        (self.help_rate * self.duration.as_secs_f64()).round() as usize
    }
}

/// One HELP message, before the server has assigned patient ids.
#[derive(Debug, Clone, PartialEq)]
pub struct PlannedHelp {
    /// Index into the plan's registrations.
    pub patient: usize,
    pub location: GeoPoint,
    pub client_time: DateTime<Utc>,
    /// Offset from the start of the run at which to send.
    pub at: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FleetPlan {
    pub registrations: Vec<Registration>,
    pub helps: Vec<PlannedHelp>,
}

fn point(rng: &mut StdRng, b: &GeoBounds) -> GeoPoint {
    // Seven decimals, as a handset GPS reports.
    let round = |x: f64| (x * 1e7).round() / 1e7;
    let lat = round(rng.gen_range(b.lat_min..=b.lat_max));
    let lon = round(rng.gen_range(b.lon_min..=b.lon_max));
    GeoPoint::new(lat, lon).expect("inside validated bounds")
}

impl FleetPlan {
    /// Everything the fleet will send, as a pure function of the scenario
    /// and `epoch` (the date the run happens). Client timestamps start at
    /// midnight UTC of `epoch` and are distinct per message.
    pub fn generate(s: &FleetScenario, epoch: NaiveDate) -> FleetPlan {
        let mut rng = StdRng::seed_from_u64(s.seed);
        let start = epoch.and_hms_opt(0, 0, 0).unwrap().and_utc();
        let prefix = s.seed % 1000;
        let registrations = (0..s.patient_count)
            .map(|i| Registration {
                name: format!("Fleet {i}"),
                phone: format!("+9647{prefix:03}{i:06}"),
                location: point(&mut rng, &s.geo_bounds),
                lmp_date: epoch - chrono::Duration::days(rng.gen_range(0..=280)),
                language: Language::ALL[rng.gen_range(0..Language::ALL.len())],
                husband_phone: Some(format!("+9648{prefix:03}{i:06}")),
            })
            .collect();
        let period_us = 1e6 / s.help_rate;
        let helps = (0..s.help_count())
            .map(|i| {
                let offset_us = (i as f64 * period_us).floor() as i64;
                PlannedHelp {
                    patient: rng.gen_range(0..s.patient_count),
                    location: point(&mut rng, &s.geo_bounds),
                    client_time: start + chrono::Duration::microseconds(offset_us),
                    at: Duration::from_micros(offset_us as u64),
                }
            })
            .collect();
        FleetPlan { registrations, helps }
    }

    pub fn registration_payload(&self, i: usize) -> String {
        serialize_inbound(&MessageBody::Reg(self.registrations[i].clone())).expect("generated fields are valid")
    }

    pub fn help_payload(&self, i: usize, patient_ids: &[PatientId]) -> String {
        let h = &self.helps[i];
        serialize_inbound(&MessageBody::Help(HelpCall {
            patient_id: patient_ids[h.patient].clone(),
            location: h.location,
            client_time: h.client_time,
        }))
        .expect("generated fields are valid")
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct FleetReport {
    pub sent: usize,
    /// HELP messages acknowledged with a request id.
    pub accepted: usize,
    pub errors: usize,
    /// Acknowledged requests that reached `located`.
    pub located: usize,
    pub p50_ms: Option<f64>,
    pub p95_ms: Option<f64>,
    pub p99_ms: Option<f64>,
    pub max_ms: Option<f64>,
    /// Accepted requests per second of wall time.
    pub achieved_rate: f64,
    pub elapsed_s: f64,
    /// Error codes seen, with counts.
    pub error_codes: std::collections::BTreeMap<String, usize>,
}

/// Nearest-rank percentile of sorted samples.
pub fn percentile(sorted: &[f64], p: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let rank = (p / 100.0 * sorted.len() as f64).ceil() as usize;
    Some(sorted[rank.clamp(1, sorted.len()) - 1])
}

#[derive(Debug, Error)]
pub enum FleetError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("registering fleet patient {index} failed: {reason}")]
    Registration { index: usize, reason: String },
}

/// Registers the plan's patients, sequentially so ids come back in order.
pub async fn register_patients(client: &Client, plan: &FleetPlan) -> Result<Vec<PatientId>, FleetError> {
    let mut ids = Vec::with_capacity(plan.registrations.len());
    for (i, reg) in plan.registrations.iter().enumerate() {
        match client
            .send_sms(plan.registration_payload(i).as_bytes(), &reg.phone)
            .await?
        {
            Ok(Ack::Reg { patient_id, .. }) => ids.push(patient_id),
            Ok(other) => {
                return Err(FleetError::Registration {
                    index: i,
                    reason: format!("unexpected ack {other:?}"),
                })
            }
            Err(e) => {
                return Err(FleetError::Registration {
                    index: i,
                    reason: e.to_string(),
                })
            }
        }
    }
    Ok(ids)
}

enum Outcome {
    Accepted { latency: Duration, located: bool },
    Rejected(String),
}

/// Runs the scenario against a live server.
pub async fn run(client: &Client, scenario: &FleetScenario, epoch: NaiveDate) -> Result<FleetReport, FleetError> {
    scenario.validate()?;
    let plan = Arc::new(FleetPlan::generate(scenario, epoch));
    if plan.helps.is_empty() {
        return Ok(FleetReport::default());
    }
    let ids = Arc::new(register_patients(client, &plan).await?);

    let permits = Arc::new(Semaphore::new(((scenario.help_rate * 2.0) as usize).clamp(16, 1024)));
    let period = Duration::from_secs_f64(1.0 / scenario.help_rate);
    let mut tick = tokio::time::interval(period);
    tick.set_missed_tick_behavior(MissedTickBehavior::Burst);
    let started = Instant::now();
    let mut tasks = Vec::with_capacity(plan.helps.len());
    for i in 0..plan.helps.len() {
        tick.tick().await;
        let permit = permits.clone().acquire_owned().await.expect("semaphore open");
        let (client, plan, ids) = (client.clone(), plan.clone(), ids.clone());
        tasks.push(tokio::spawn(async move {
            let _permit = permit;
            let payload = plan.help_payload(i, &ids);
            let sender = plan.registrations[plan.helps[i].patient].phone.clone();
            let t0 = Instant::now();
            let res = client.send_sms(payload.as_bytes(), &sender).await;
            let latency = t0.elapsed();
            match res {
                Ok(Ok(Ack::Help { state, .. })) => Outcome::Accepted {
                    latency,
                    located: state == RequestState::Located,
                },
                Ok(Ok(other)) => Outcome::Rejected(format!("unexpected {other:?}")),
                Ok(Err(e)) => Outcome::Rejected(e.code.to_string()),
                Err(e) => Outcome::Rejected(format!("transport: {e}")),
            }
        }));
    }
    let mut report = FleetReport {
        sent: tasks.len(),
        ..FleetReport::default()
    };
    let mut latencies = Vec::new();
    for t in tasks {
        match t.await {
            Ok(Outcome::Accepted { latency, located }) => {
                report.accepted += 1;
                report.located += located as usize;
                latencies.push(latency.as_secs_f64() * 1e3);
            }
            Ok(Outcome::Rejected(code)) => {
                report.errors += 1;
                *report.error_codes.entry(code).or_default() += 1;
            }
            Err(join) => {
                report.errors += 1;
                *report.error_codes.entry(format!("task: {join}")).or_default() += 1;
            }
        }
    }
    report.elapsed_s = started.elapsed().as_secs_f64();
    report.achieved_rate = report.accepted as f64 / report.elapsed_s.max(f64::EPSILON);
    latencies.sort_by(f64::total_cmp);
    report.p50_ms = percentile(&latencies, 50.0);
    report.p95_ms = percentile(&latencies, 95.0);
    report.p99_ms = percentile(&latencies, 99.0);
    report.max_ms = latencies.last().copied();
    Ok(report)
}
