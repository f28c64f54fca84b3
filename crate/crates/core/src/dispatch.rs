//! The emergency path: HELP ingest, hospital selection, the request state
//! machine and notification fan-out.

use std::collections::BTreeMap;
use std::sync::Arc;

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{info, warn};

use crate::geo::{nearest_facility, EarthModel, FacilityKind, GeoError, Site};
use crate::ids::*;
use crate::protocol::{InboundMessage, Language, MessageBody, OutboundNotification, ProtocolError, TemplateCatalog};
use crate::registry::{
    stage_notification, Facility, HelpRequest, NewNotification, NotificationLog, PatientRecord, Record, Registry,
    RequestState, StateChange, StoreError, SuccoringUnit, Tables, Txn, UnitStatus,
};

/// Actor recorded for automatic transitions.
pub const SERVER_ACTOR: &str = "server";

#[derive(Debug, Error)]
pub enum DispatchError {
    #[error("unknown patient {0}")]
    UnknownPatient(PatientId),
    #[error("no hospital registered; request {0} parked in received")]
    EmptyCandidateSet(RequestId),
    #[error("request {request_id} cannot go from {from} to {to}")]
    IllegalTransition {
        request_id: RequestId,
        from: RequestState,
        to: RequestState,
    },
    #[error("unit {0} is not available")]
    UnitUnavailable(UnitId),
    #[error("{0} not found")]
    NotFound(String),
    #[error("expected a HELP message")]
    WrongKind,
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone)]
pub struct DispatchConfig {
    /// Identical HELP messages within this window are one request.
    pub dedup_window: Duration,
    /// Language for messages to hospital staff.
    pub staff_language: Language,
    pub earth: EarthModel,
}

impl Default for DispatchConfig {
    fn default() -> Self {
        DispatchConfig {
            dedup_window: Duration::seconds(120),
            staff_language: Language::En,
            earth: EarthModel::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestOutcome {
    pub request: HelpRequest,
    /// Notifications queued by this call; empty for a deduplicated retry.
    pub notifications: Vec<NotificationLog>,
    pub duplicate: bool,
}

/// What the control panel shows for one request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestView {
    pub request_id: RequestId,
    pub patient_id: PatientId,
    pub patient_name: String,
    pub request_time: DateTime<Utc>,
    pub received_time: DateTime<Utc>,
    pub lat: f64,
    pub lon: f64,
    pub hospital_id: Option<FacilityId>,
    pub hospital_name: Option<String>,
    pub state: RequestState,
    pub unit_id: Option<UnitId>,
    pub state_history: Vec<StateChange>,
}

impl RequestView {
    fn build(tables: &Tables, r: &HelpRequest) -> RequestView {
        RequestView {
            request_id: r.request_id.clone(),
            patient_id: r.patient_id.clone(),
            patient_name: tables
                .patients
                .get(r.patient_id.as_str())
                .map(|p| p.name.clone())
                .unwrap_or_default(),
            request_time: r.request_time,
            received_time: r.received_time,
            lat: r.location.lat(),
            lon: r.location.lon(),
            hospital_id: r.hospital_id.clone(),
            hospital_name: r
                .hospital_id
                .as_ref()
                .and_then(|h| tables.facilities.get(h.as_str()))
                .map(|f| f.name.clone()),
            state: r.state,
            unit_id: r.unit_id.clone(),
            state_history: r.state_history.clone(),
        }
    }
}

fn hospitals(tables: &Tables) -> Vec<Site> {
    tables
        .facilities
        .values()
        .filter(|f| f.kind == FacilityKind::Hospital)
        .map(|f| Site {
            id: f.facility_id.clone(),
            kind: f.kind,
            location: f.location,
        })
        .collect()
}

/// Appends a history entry, keeping timestamps non-decreasing.
fn push_state(r: &mut HelpRequest, state: RequestState, at: DateTime<Utc>, actor: &str, note: Option<String>) {
    let at = r.state_history.last().map_or(at, |last| at.max(last.at));
    r.state = state;
    r.state_history.push(StateChange {
        state,
        at,
        actor: actor.to_string(),
        note,
    });
}

/// Number of units dispatched minus number of requests in `dispatched`;
/// zero whenever the books balance.
pub fn unit_imbalance(tables: &Tables) -> i64 {
    let units = tables
        .units
        .values()
        .filter(|u| u.status == UnitStatus::Dispatched)
        .count() as i64;
    let requests = tables
        .help_requests
        .values()
        .filter(|r| r.state == RequestState::Dispatched)
        .count() as i64;
    units - requests
}

enum IngestStep {
    Done(IngestOutcome),
    Unknown(PatientId),
    Parked(RequestId),
}

pub struct Dispatcher {
    registry: Arc<Registry>,
    templates: Arc<TemplateCatalog>,
    config: DispatchConfig,
}

impl Dispatcher {
    pub fn new(registry: Arc<Registry>, templates: Arc<TemplateCatalog>, config: DispatchConfig) -> Self {
        Dispatcher {
            registry,
            templates,
            config,
        }
    }

    pub fn config(&self) -> &DispatchConfig {
        &self.config
    }

    /// Messages for every party interested in a located request: the
    /// hospital, each of its doctors, the husband (when known) and the
    /// patient herself.
    pub fn fan_out_targets(
        &self,
        tables: &Tables,
        request: &HelpRequest,
        patient: &PatientRecord,
        hospital: &Facility,
    ) -> Result<Vec<OutboundNotification>, ProtocolError> {
        let staff = self.config.staff_language;
        let mut bindings = BTreeMap::from([
            ("request_id", request.request_id.to_string()),
            ("patient_id", patient.patient_id.to_string()),
            ("name", patient.name.clone()),
            ("hospital", hospital.name.clone()),
            ("lat", request.location.lat().to_string()),
            ("lon", request.location.lon().to_string()),
        ]);
        let mut out =
            vec![self
                .templates
                .render_notification(&hospital.contact_phone, "notify_hospital", staff, &bindings)?];
        for doctor in tables
            .doctors
            .values()
            .filter(|d| d.hospital_id == hospital.facility_id)
        {
            out.push(
                self.templates
                    .render_notification(&doctor.phone, "notify_doctor", staff, &bindings)?,
            );
        }
        if let Some(husband) = &patient.husband_phone {
            out.push(
                self.templates
                    .render_notification(husband, "notify_husband", patient.language, &bindings)?,
            );
        }
        bindings.insert("patient_phone", patient.phone.clone());
        out.push(
            self.templates
                .render_notification(&patient.phone, "help_ack", patient.language, &bindings)?,
        );
        Ok(out)
    }

    /// Renders the fan-out for an already located request without queuing it.
    pub fn fan_out(&self, request_id: &RequestId) -> Result<Vec<OutboundNotification>, DispatchError> {
        let tables = self.registry.read();
        let request = tables
            .help_requests
            .get(request_id.as_str())
            .ok_or_else(|| DispatchError::NotFound(format!("request {request_id}")))?;
        let Some(hospital_id) = &request.hospital_id else {
            return Err(DispatchError::IllegalTransition {
                request_id: request_id.clone(),
                from: request.state,
                to: RequestState::Located,
            });
        };
        let patient = &tables.patients[request.patient_id.as_str()];
        let hospital = &tables.facilities[hospital_id.as_str()];
        Ok(self.fan_out_targets(&tables, request, patient, hospital)?)
    }

    fn stage_fan_out(
        &self,
        tx: &mut Txn<'_>,
        request: &HelpRequest,
        patient: &PatientRecord,
    ) -> Result<Vec<NotificationLog>, DispatchError> {
        let hospital_id = request.hospital_id.as_ref().expect("located requests have a hospital");
        let hospital: Facility = tx.get(hospital_id.as_str()).expect("hospital exists");
        let targets = self.fan_out_targets(tx.base(), request, patient, &hospital)?;
        Ok(targets
            .into_iter()
            .map(|n| {
                stage_notification(
                    tx,
                    NewNotification {
                        recipient_phone: n.recipient_phone,
                        template_id: n.template_id,
                        language: n.language,
                        payload: n.rendered,
                        request_id: Some(request.request_id.clone()),
                        patient_id: Some(patient.patient_id.clone()),
                    },
                )
            })
            .collect())
    }

    /// Moves a received request to located at its nearest hospital and
    /// queues the fan-out. Returns `None` if no hospital is registered.
    fn locate(
        &self,
        tx: &mut Txn<'_>,
        request: &mut HelpRequest,
        patient: &PatientRecord,
    ) -> Result<Option<Vec<NotificationLog>>, DispatchError> {
        let sites = hospitals(tx.base());
        match nearest_facility(request.location, &sites, FacilityKind::Hospital, &self.config.earth) {
            Ok((hospital_id, distance)) => {
                request.hospital_id = Some(hospital_id);
                push_state(
                    request,
                    RequestState::Located,
                    tx.now(),
                    SERVER_ACTOR,
                    Some(format!("distance_km={:.3}", distance.value())),
                );
                tx.put(request.clone());
                Ok(Some(self.stage_fan_out(tx, request, patient)?))
            }
            Err(GeoError::EmptyCandidateSet(_)) => Ok(None),
            Err(e) => unreachable!("routing over validated points: {e}"),
        }
    }

    /// Records a HELP message, routes it to the nearest hospital and queues
    /// the notifications, all in one commit.
    pub fn ingest_help(&self, msg: &InboundMessage) -> Result<IngestOutcome, DispatchError> {
        let MessageBody::Help(help) = &msg.body else {
            return Err(DispatchError::WrongKind);
        };
        let step = self.registry.write(|tx| -> Result<IngestStep, DispatchError> {
            let Some(patient) = tx.get::<PatientRecord>(help.patient_id.as_str()) else {
                let payload = self
                    .templates
                    .render("registration_prompt", Language::En, &BTreeMap::new())?;
                stage_notification(
                    tx,
                    NewNotification {
                        recipient_phone: msg.sender_phone.clone(),
                        template_id: "registration_prompt".into(),
                        language: Language::En,
                        payload,
                        request_id: None,
                        patient_id: None,
                    },
                );
                return Ok(IngestStep::Unknown(help.patient_id.clone()));
            };

            if let Some(existing) = tx
                .base()
                .help_request_by_client_key(&patient.patient_id, help.client_time)
            {
                if msg.received_at - existing.received_time <= self.config.dedup_window {
                    return Ok(IngestStep::Done(IngestOutcome {
                        request: existing.clone(),
                        notifications: Vec::new(),
                        duplicate: true,
                    }));
                }
            }

            let received = msg.received_at;
            let (request_time, note) = if help.client_time > received {
                (
                    received,
                    Some(format!(
                        "client_ts={} clamped",
                        crate::protocol::format_timestamp(help.client_time)
                    )),
                )
            } else {
                (help.client_time, None)
            };
            let mut request = HelpRequest {
                request_id: RequestId::new(tx.next_id(HelpRequest::TABLE)),
                patient_id: patient.patient_id.clone(),
                location: help.location,
                request_time,
                client_time: help.client_time,
                received_time: received,
                state: RequestState::Received,
                hospital_id: None,
                unit_id: None,
                state_history: Vec::new(),
            };
            push_state(&mut request, RequestState::Received, received, SERVER_ACTOR, note);
            tx.put(request.clone());
            match self.locate(tx, &mut request, &patient)? {
                Some(notifications) => Ok(IngestStep::Done(IngestOutcome {
                    request,
                    notifications,
                    duplicate: false,
                })),
                None => Ok(IngestStep::Parked(request.request_id)),
            }
        })?;
        match step {
            IngestStep::Done(outcome) => {
                if !outcome.duplicate {
                    info!(
                        event = "help_located",
                        request_id = %outcome.request.request_id,
                        hospital_id = ?outcome.request.hospital_id,
                        notifications = outcome.notifications.len()
                    );
                }
                Ok(outcome)
            }
            IngestStep::Unknown(pid) => {
                warn!(event = "help_unknown_patient", patient_id = %pid, sender = %msg.sender_phone);
                Err(DispatchError::UnknownPatient(pid))
            }
            IngestStep::Parked(rid) => {
                warn!(event = "operational_alert", alert = "no_hospitals", request_id = %rid);
                Err(DispatchError::EmptyCandidateSet(rid))
            }
        }
    }

    /// Locates every request parked in `received`. Returns the notifications
    /// queued as a result.
    pub fn recover(&self) -> Result<Vec<NotificationLog>, DispatchError> {
        let parked: Vec<RequestId> = self
            .registry
            .read()
            .help_requests
            .values()
            .filter(|r| r.state == RequestState::Received)
            .map(|r| r.request_id.clone())
            .collect();
        let mut queued = Vec::new();
        for id in parked {
            let located = self.registry.write(|tx| {
                let Some(mut request) = tx.get::<HelpRequest>(id.as_str()) else {
                    return Ok(None);
                };
                if request.state != RequestState::Received {
                    return Ok(None);
                }
                let patient: PatientRecord = tx
                    .get(request.patient_id.as_str())
                    .expect("requests reference existing patients");
                self.locate(tx, &mut request, &patient)
            })?;
            match located {
                Some(n) => {
                    info!(event = "help_recovered", request_id = %id);
                    queued.extend(n);
                }
                None => warn!(event = "operational_alert", alert = "no_hospitals", request_id = %id),
            }
        }
        Ok(queued)
    }

    fn transition(
        &self,
        request_id: &RequestId,
        to: RequestState,
        actor: &str,
        unit: Option<&UnitId>,
    ) -> Result<HelpRequest, DispatchError> {
        self.registry.write(|tx| {
            let mut request: HelpRequest = tx
                .get(request_id.as_str())
                .ok_or_else(|| DispatchError::NotFound(format!("request {request_id}")))?;
            if !request.state.can_transition_to(to) {
                return Err(DispatchError::IllegalTransition {
                    request_id: request_id.clone(),
                    from: request.state,
                    to,
                });
            }
            if let Some(unit_id) = unit {
                let mut u: SuccoringUnit = tx
                    .get(unit_id.as_str())
                    .ok_or_else(|| DispatchError::NotFound(format!("unit {unit_id}")))?;
                if u.status != UnitStatus::Available {
                    return Err(DispatchError::UnitUnavailable(unit_id.clone()));
                }
                u.status = UnitStatus::Dispatched;
                tx.put(u);
                request.unit_id = Some(unit_id.clone());
            } else if let Some(unit_id) = request.unit_id.clone() {
                // Leaving `dispatched` frees the unit.
                if request.state == RequestState::Dispatched {
                    let mut u: SuccoringUnit = tx.get(unit_id.as_str()).expect("assigned unit exists");
                    u.status = UnitStatus::Available;
                    tx.put(u);
                }
            }
            push_state(&mut request, to, tx.now(), actor, None);
            tx.put(request.clone());
            Ok(request)
        })
    }

    /// EMC operator sends a succoring unit to a located request.
    pub fn assign_unit(
        &self,
        request_id: &RequestId,
        unit_id: &UnitId,
        actor: &str,
    ) -> Result<HelpRequest, DispatchError> {
        let r = self.transition(request_id, RequestState::Dispatched, actor, Some(unit_id))?;
        info!(event = "help_dispatched", request_id = %request_id, unit_id = %unit_id, actor);
        Ok(r)
    }

    pub fn complete_request(&self, request_id: &RequestId, actor: &str) -> Result<HelpRequest, DispatchError> {
        let r = self.transition(request_id, RequestState::Complete, actor, None)?;
        info!(event = "help_complete", request_id = %request_id, actor);
        Ok(r)
    }

    /// Operator-declared false alarm.
    pub fn cancel_request(&self, request_id: &RequestId, actor: &str) -> Result<HelpRequest, DispatchError> {
        let r = self.transition(request_id, RequestState::Cancelled, actor, None)?;
        info!(event = "help_cancelled", request_id = %request_id, actor);
        Ok(r)
    }

    pub fn get_request(&self, request_id: &RequestId) -> Result<RequestView, DispatchError> {
        let tables = self.registry.read();
        tables
            .help_requests
            .get(request_id.as_str())
            .map(|r| RequestView::build(&tables, r))
            .ok_or_else(|| DispatchError::NotFound(format!("request {request_id}")))
    }

    /// Requests in any of `states` (all states when empty) received at or
    /// after `since`, newest first.
    pub fn list_requests(&self, states: &[RequestState], since: Option<DateTime<Utc>>) -> Vec<RequestView> {
        let tables = self.registry.read();
        let mut views: Vec<RequestView> = tables
            .help_requests
            .values()
            .filter(|r| states.is_empty() || states.contains(&r.state))
            .filter(|r| since.is_none_or(|t| r.received_time >= t))
            .map(|r| RequestView::build(&tables, r))
            .collect();
        views.sort_by(|a, b| {
            b.received_time
                .cmp(&a.received_time)
                .then_with(|| b.request_id.cmp(&a.request_id))
        });
        views
    }
}
