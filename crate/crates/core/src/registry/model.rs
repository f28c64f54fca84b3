//! Row types for the ten registry tables.

use std::fmt;

use chrono::{DateTime, NaiveDate, NaiveTime, Utc};
use serde::{Deserialize, Serialize};

use crate::geo::{FacilityKind, GeoPoint};
use crate::ids::*;
use crate::protocol::Language;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub patient_id: PatientId,
    pub name: String,
    pub phone: String,
    pub husband_phone: Option<String>,
    pub home: GeoPoint,
    pub lmp_date: NaiveDate,
    pub language: Language,
    pub care_center_id: FacilityId,
    pub registered_at: DateTime<Utc>,
    pub active: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Facility {
    pub facility_id: FacilityId,
    pub kind: FacilityKind,
    pub name: String,
    pub location: GeoPoint,
    pub contact_phone: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoctorAccount {
    pub doctor_id: DoctorId,
    pub username: String,
    pub password_hash: String,
    pub hospital_id: FacilityId,
    pub phone: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    EmcOperator,
    Admin,
}

impl std::str::FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "emc_operator" => Ok(Role::EmcOperator),
            "admin" => Ok(Role::Admin),
            other => Err(format!("unknown role {other:?}")),
        }
    }
}

/// EMC operators and administrators. Keyed by username.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdminAccount {
    pub username: String,
    pub password_hash: String,
    pub role: Role,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitKind {
    Car,
    BoatLife,
    Helicopter,
}

impl std::str::FromStr for UnitKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "car" => Ok(UnitKind::Car),
            "boat_life" => Ok(UnitKind::BoatLife),
            "helicopter" => Ok(UnitKind::Helicopter),
            other => Err(format!("unknown unit kind {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitStatus {
    Available,
    Dispatched,
    OutOfService,
}

impl UnitStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            UnitStatus::Available => "available",
            UnitStatus::Dispatched => "dispatched",
            UnitStatus::OutOfService => "out_of_service",
        }
    }
}

impl std::str::FromStr for UnitStatus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "available" => Ok(UnitStatus::Available),
            "dispatched" => Ok(UnitStatus::Dispatched),
            "out_of_service" => Ok(UnitStatus::OutOfService),
            other => Err(format!("unknown unit status {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuccoringUnit {
    pub unit_id: UnitId,
    pub kind: UnitKind,
    pub base: GeoPoint,
    pub status: UnitStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestState {
    Received,
    Located,
    Dispatched,
    Complete,
    Cancelled,
}

impl RequestState {
    pub const ALL: [RequestState; 5] = [
        RequestState::Received,
        RequestState::Located,
        RequestState::Dispatched,
        RequestState::Complete,
        RequestState::Cancelled,
    ];

    pub fn is_terminal(self) -> bool {
        matches!(self, RequestState::Complete | RequestState::Cancelled)
    }

    /// The request lifecycle: received → located → dispatched → complete,
    /// with cancellation from any non-terminal state.
    pub fn can_transition_to(self, next: RequestState) -> bool {
        use RequestState::*;
        matches!(
            (self, next),
            (Received, Located)
                | (Located, Dispatched)
                | (Dispatched, Complete)
                | (Received | Located | Dispatched, Cancelled)
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RequestState::Received => "received",
            RequestState::Located => "located",
            RequestState::Dispatched => "dispatched",
            RequestState::Complete => "complete",
            RequestState::Cancelled => "cancelled",
        }
    }
}

impl fmt::Display for RequestState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for RequestState {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RequestState::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| format!("unknown request state {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateChange {
    pub state: RequestState,
    pub at: DateTime<Utc>,
    pub actor: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HelpRequest {
    pub request_id: RequestId,
    pub patient_id: PatientId,
    pub location: GeoPoint,
    /// Client-claimed time, clamped to `received_time`.
    pub request_time: DateTime<Utc>,
    /// The client timestamp exactly as sent; part of the dedup key.
    pub client_time: DateTime<Utc>,
    pub received_time: DateTime<Utc>,
    pub state: RequestState,
    pub hospital_id: Option<FacilityId>,
    pub unit_id: Option<UnitId>,
    pub state_history: Vec<StateChange>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AppointmentState {
    Scheduled,
    Rescheduled,
    Attended,
    Missed,
}

impl AppointmentState {
    pub fn is_open(self) -> bool {
        matches!(self, AppointmentState::Scheduled | AppointmentState::Rescheduled)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Appointment {
    pub appointment_id: AppointmentId,
    pub patient_id: PatientId,
    pub facility_id: FacilityId,
    /// Local calendar date of the review.
    pub date: NaiveDate,
    /// Local time slot.
    pub slot: NaiveTime,
    pub state: AppointmentState,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdviceEntry {
    pub advice_id: AdviceId,
    pub trimester: u8,
    pub week_min: u32,
    pub week_max: u32,
    pub language: Language,
    pub text: String,
}

impl AdviceEntry {
    pub fn covers(&self, week: u32) -> bool {
        (self.week_min..=self.week_max).contains(&week)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    Soip,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeliveryStatus {
    Queued,
    Sent,
    Failed,
}

impl DeliveryStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            DeliveryStatus::Queued => "queued",
            DeliveryStatus::Sent => "sent",
            DeliveryStatus::Failed => "failed",
        }
    }
}

/// One outbound message. Recipient and payload never change after insert.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NotificationLog {
    pub notification_id: NotificationId,
    pub recipient_phone: String,
    pub channel: Channel,
    pub template_id: String,
    pub language: Language,
    pub payload: String,
    pub status: DeliveryStatus,
    pub attempts: u32,
    pub created_at: DateTime<Utc>,
    pub sent_at: Option<DateTime<Utc>>,
    pub request_id: Option<RequestId>,
    pub patient_id: Option<PatientId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientFile {
    pub file_id: FileId,
    pub patient_id: PatientId,
    pub doctor_id: DoctorId,
    pub request_id: RequestId,
    pub notes: String,
    pub created_at: DateTime<Utc>,
}
