//! Wire types shared by the server and its clients, the stable error codes,
//! and the transport-independent ingress handler.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};

use crate::care::{CareError, CareService};
use crate::dispatch::{unit_imbalance, DispatchError, Dispatcher};
use crate::ids::*;
use crate::protocol::{parse_inbound_bytes, MessageBody, ProtocolError};
use crate::registry::{Appointment, PatientFile, PatientRecord, RegistryError, RequestState, StoreError, Tables};

/// Machine-readable error codes. The strings are part of the API.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ErrorCode {
    UnknownKind,
    FieldCountMismatch,
    MalformedCoordinate,
    OutOfRange,
    OversizedPayload,
    InvalidEncoding,
    MalformedField,
    DuplicatePhone,
    InvalidField,
    UnknownPatient,
    EmptyCandidateSet,
    NoOpenAppointment,
    PastDate,
    FutureLmp,
    OutOfPregnancyRange,
    IllegalTransition,
    UnitUnavailable,
    NotFound,
    BadRequest,
    BadCredentials,
    Unauthorized,
    Forbidden,
    Internal,
}

impl ErrorCode {
    pub const ALL: [ErrorCode; 23] = [
        ErrorCode::UnknownKind,
        ErrorCode::FieldCountMismatch,
        ErrorCode::MalformedCoordinate,
        ErrorCode::OutOfRange,
        ErrorCode::OversizedPayload,
        ErrorCode::InvalidEncoding,
        ErrorCode::MalformedField,
        ErrorCode::DuplicatePhone,
        ErrorCode::InvalidField,
        ErrorCode::UnknownPatient,
        ErrorCode::EmptyCandidateSet,
        ErrorCode::NoOpenAppointment,
        ErrorCode::PastDate,
        ErrorCode::FutureLmp,
        ErrorCode::OutOfPregnancyRange,
        ErrorCode::IllegalTransition,
        ErrorCode::UnitUnavailable,
        ErrorCode::NotFound,
        ErrorCode::BadRequest,
        ErrorCode::BadCredentials,
        ErrorCode::Unauthorized,
        ErrorCode::Forbidden,
        ErrorCode::Internal,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCode::UnknownKind => "UNKNOWN_KIND",
            ErrorCode::FieldCountMismatch => "FIELD_COUNT_MISMATCH",
            ErrorCode::MalformedCoordinate => "MALFORMED_COORDINATE",
            ErrorCode::OutOfRange => "OUT_OF_RANGE",
            ErrorCode::OversizedPayload => "OVERSIZED_PAYLOAD",
            ErrorCode::InvalidEncoding => "INVALID_ENCODING",
            ErrorCode::MalformedField => "MALFORMED_FIELD",
            ErrorCode::DuplicatePhone => "DUPLICATE_PHONE",
            ErrorCode::InvalidField => "INVALID_FIELD",
            ErrorCode::UnknownPatient => "UNKNOWN_PATIENT",
            ErrorCode::EmptyCandidateSet => "EMPTY_CANDIDATE_SET",
            ErrorCode::NoOpenAppointment => "NO_OPEN_APPOINTMENT",
            ErrorCode::PastDate => "PAST_DATE",
            ErrorCode::FutureLmp => "FUTURE_LMP",
            ErrorCode::OutOfPregnancyRange => "OUT_OF_PREGNANCY_RANGE",
            ErrorCode::IllegalTransition => "ILLEGAL_TRANSITION",
            ErrorCode::UnitUnavailable => "UNIT_UNAVAILABLE",
            ErrorCode::NotFound => "NOT_FOUND",
            ErrorCode::BadRequest => "BAD_REQUEST",
            ErrorCode::BadCredentials => "BAD_CREDENTIALS",
            ErrorCode::Unauthorized => "UNAUTHORIZED",
            ErrorCode::Forbidden => "FORBIDDEN",
            ErrorCode::Internal => "INTERNAL",
        }
    }

    /// HTTP status the server answers with.
    pub fn http_status(self) -> u16 {
        match self {
            ErrorCode::UnknownKind
            | ErrorCode::FieldCountMismatch
            | ErrorCode::MalformedCoordinate
            | ErrorCode::OutOfRange
            | ErrorCode::InvalidEncoding
            | ErrorCode::MalformedField
            | ErrorCode::InvalidField
            | ErrorCode::PastDate
            | ErrorCode::FutureLmp
            | ErrorCode::OutOfPregnancyRange
            | ErrorCode::BadRequest => 400,
            ErrorCode::OversizedPayload => 413,
            ErrorCode::BadCredentials | ErrorCode::Unauthorized => 401,
            ErrorCode::Forbidden => 403,
            ErrorCode::NotFound | ErrorCode::UnknownPatient => 404,
            ErrorCode::DuplicatePhone
            | ErrorCode::NoOpenAppointment
            | ErrorCode::IllegalTransition
            | ErrorCode::UnitUnavailable => 409,
            ErrorCode::EmptyCandidateSet => 503,
            ErrorCode::Internal => 500,
        }
    }
}

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Body of every error response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorReply {
    pub code: ErrorCode,
    pub message: String,
    /// Set when the request was recorded despite the error, for example a
    /// help request parked because no hospital is registered.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request_id: Option<RequestId>,
}

impl ErrorReply {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        ErrorReply {
            code,
            message: message.into(),
            request_id: None,
        }
    }
}

impl fmt::Display for ErrorReply {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.code, self.message)
    }
}

fn internal(e: impl fmt::Display) -> ErrorReply {
    ErrorReply::new(ErrorCode::Internal, e.to_string())
}

impl From<ProtocolError> for ErrorReply {
    fn from(e: ProtocolError) -> Self {
        let code = match &e {
            ProtocolError::OversizedPayload(_) => ErrorCode::OversizedPayload,
            ProtocolError::InvalidEncoding => ErrorCode::InvalidEncoding,
            ProtocolError::UnknownKind(_) => ErrorCode::UnknownKind,
            ProtocolError::FieldCountMismatch { .. } => ErrorCode::FieldCountMismatch,
            ProtocolError::MalformedCoordinate(_) => ErrorCode::MalformedCoordinate,
            ProtocolError::OutOfRange { .. } => ErrorCode::OutOfRange,
            ProtocolError::MalformedField { .. } => ErrorCode::MalformedField,
            ProtocolError::MissingTemplate { .. } | ProtocolError::UnboundPlaceholder { .. } => return internal(e),
        };
        ErrorReply::new(code, e.to_string())
    }
}

impl From<StoreError> for ErrorReply {
    fn from(e: StoreError) -> Self {
        internal(e)
    }
}

impl From<RegistryError> for ErrorReply {
    fn from(e: RegistryError) -> Self {
        let code = match &e {
            RegistryError::DuplicatePhone(_) => ErrorCode::DuplicatePhone,
            RegistryError::InvalidField { .. } => ErrorCode::InvalidField,
            RegistryError::NotFound(_) => ErrorCode::NotFound,
            RegistryError::Store(_) => return internal(e),
        };
        ErrorReply::new(code, e.to_string())
    }
}

impl From<CareError> for ErrorReply {
    fn from(e: CareError) -> Self {
        let code = match e {
            CareError::DuplicatePhone(_) => ErrorCode::DuplicatePhone,
            CareError::EmptyCandidateSet => ErrorCode::EmptyCandidateSet,
            CareError::UnknownPatient(_) => ErrorCode::UnknownPatient,
            CareError::NoOpenAppointment(_) => ErrorCode::NoOpenAppointment,
            CareError::PastDate(_) => ErrorCode::PastDate,
            CareError::FutureLmp(_) => ErrorCode::FutureLmp,
            CareError::OutOfPregnancyRange(_) => ErrorCode::OutOfPregnancyRange,
            CareError::InvalidField { .. } => ErrorCode::InvalidField,
            CareError::WrongKind { .. } => ErrorCode::UnknownKind,
            CareError::Protocol(p) => return p.into(),
            CareError::Store(s) => return s.into(),
        };
        ErrorReply::new(code, e.to_string())
    }
}

impl From<DispatchError> for ErrorReply {
    fn from(e: DispatchError) -> Self {
        let code = match e {
            DispatchError::UnknownPatient(_) => ErrorCode::UnknownPatient,
            DispatchError::EmptyCandidateSet(ref rid) => {
                return ErrorReply {
                    request_id: Some(rid.clone()),
                    ..ErrorReply::new(ErrorCode::EmptyCandidateSet, e.to_string())
                }
            }
            DispatchError::IllegalTransition { .. } => ErrorCode::IllegalTransition,
            DispatchError::UnitUnavailable(_) => ErrorCode::UnitUnavailable,
            DispatchError::NotFound(_) => ErrorCode::NotFound,
            DispatchError::WrongKind => ErrorCode::UnknownKind,
            DispatchError::Protocol(p) => return p.into(),
            DispatchError::Store(s) => return s.into(),
        };
        ErrorReply::new(code, e.to_string())
    }
}

/// Successful reply to an inbound message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Ack {
    #[serde(rename = "REG")]
    Reg {
        patient_id: PatientId,
        care_center_id: FacilityId,
        appointment_id: AppointmentId,
        review_date: NaiveDate,
    },
    #[serde(rename = "HELP")]
    Help {
        request_id: RequestId,
        state: RequestState,
        hospital_id: Option<FacilityId>,
        /// True when this message was a retry of an earlier one.
        duplicate: bool,
    },
    #[serde(rename = "CHG")]
    Chg {
        appointment_id: AppointmentId,
        review_date: NaiveDate,
    },
}

/// Result of handling one inbound payload, plus the notifications it queued.
#[derive(Debug, Clone, PartialEq)]
pub struct IngressReply {
    pub result: Result<Ack, ErrorReply>,
    pub queued: Vec<NotificationId>,
}

/// Routes inbound payloads to registration, help or rescheduling.
#[derive(Clone)]
pub struct Ingress {
    pub care: Arc<CareService>,
    pub dispatcher: Arc<Dispatcher>,
}

impl Ingress {
    /// Handles one raw payload. Every input yields exactly one reply.
    pub fn handle(&self, raw: &[u8], sender_phone: &str, now: DateTime<Utc>) -> IngressReply {
        let msg = match parse_inbound_bytes(raw, sender_phone, now) {
            Ok(m) => m,
            Err(e) => {
                return IngressReply {
                    result: Err(e.into()),
                    queued: Vec::new(),
                }
            }
        };
        let ids = |ns: &[crate::registry::NotificationLog]| ns.iter().map(|n| n.notification_id.clone()).collect();
        match &msg.body {
            MessageBody::Reg(_) => match self.care.register(&msg) {
                Ok(out) => IngressReply {
                    queued: ids(&out.notifications),
                    result: Ok(Ack::Reg {
                        patient_id: out.patient.patient_id,
                        care_center_id: out.patient.care_center_id,
                        appointment_id: out.appointment.appointment_id,
                        review_date: out.appointment.date,
                    }),
                },
                Err(e) => IngressReply {
                    result: Err(e.into()),
                    queued: Vec::new(),
                },
            },
            MessageBody::Help(_) => match self.dispatcher.ingest_help(&msg) {
                Ok(out) => IngressReply {
                    queued: ids(&out.notifications),
                    result: Ok(Ack::Help {
                        request_id: out.request.request_id,
                        state: out.request.state,
                        hospital_id: out.request.hospital_id,
                        duplicate: out.duplicate,
                    }),
                },
                Err(e) => IngressReply {
                    result: Err(e.into()),
                    queued: Vec::new(),
                },
            },
            MessageBody::Chg(_) => match self.care.reschedule(&msg) {
                Ok((appointment, note)) => IngressReply {
                    queued: vec![note.notification_id],
                    result: Ok(Ack::Chg {
                        appointment_id: appointment.appointment_id,
                        review_date: appointment.date,
                    }),
                },
                Err(e) => IngressReply {
                    result: Err(e.into()),
                    queued: Vec::new(),
                },
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Principal {
    EmcOperator,
    Admin,
    Doctor { doctor_id: DoctorId },
}

impl Principal {
    /// Operators and admins run the control panel.
    pub fn is_console(&self) -> bool {
        matches!(self, Principal::EmcOperator | Principal::Admin)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LoginRequest {
    pub username: String,
    pub password: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoginResponse {
    pub token: String,
    pub principal: Principal,
    pub expires_at: DateTime<Utc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssignRequest {
    pub unit_id: UnitId,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PatientFileRequest {
    pub request_id: Option<RequestId>,
    pub notes: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientDetail {
    pub patient: PatientRecord,
    pub appointments: Vec<Appointment>,
    pub files: Vec<PatientFile>,
}

impl PatientDetail {
    pub fn collect(tables: &Tables, id: &PatientId) -> Option<PatientDetail> {
        let patient = tables.patients.get(id.as_str())?.clone();
        Some(PatientDetail {
            appointments: tables
                .appointments
                .values()
                .filter(|a| &a.patient_id == id)
                .cloned()
                .collect(),
            files: tables
                .patient_files
                .values()
                .filter(|f| &f.patient_id == id)
                .cloned()
                .collect(),
            patient,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub patients: usize,
    pub active_patients: usize,
    pub facilities: usize,
    pub doctors: usize,
    pub requests_by_state: BTreeMap<String, usize>,
    pub units_by_status: BTreeMap<String, usize>,
    pub notifications_by_status: BTreeMap<String, usize>,
    /// Dispatched units minus dispatched requests; zero when consistent.
    pub unit_imbalance: i64,
    pub poll_interval_ms: u64,
}

impl Stats {
    pub fn collect(tables: &Tables, poll_interval_ms: u64) -> Stats {
        let mut s = Stats {
            patients: tables.patients.len(),
            active_patients: tables.patients.values().filter(|p| p.active).count(),
            facilities: tables.facilities.len(),
            doctors: tables.doctors.len(),
            unit_imbalance: unit_imbalance(tables),
            poll_interval_ms,
            ..Stats::default()
        };
        for state in RequestState::ALL {
            s.requests_by_state.insert(state.as_str().to_string(), 0);
        }
        for r in tables.help_requests.values() {
            *s.requests_by_state.entry(r.state.as_str().to_string()).or_default() += 1;
        }
        for u in tables.units.values() {
            *s.units_by_status.entry(u.status.as_str().to_string()).or_default() += 1;
        }
        for status in ["queued", "sent", "failed"] {
            s.notifications_by_status.insert(status.to_string(), 0);
        }
        for n in tables.notifications.values() {
            *s.notifications_by_status
                .entry(n.status.as_str().to_string())
                .or_default() += 1;
        }
        s
    }

    pub fn queued(&self) -> usize {
        self.notifications_by_status.get("queued").copied().unwrap_or(0)
    }

    pub fn in_state(&self, state: RequestState) -> usize {
        self.requests_by_state.get(state.as_str()).copied().unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes_serialize_as_their_names() {
        for code in ErrorCode::ALL {
            let json = serde_json::to_string(&code).unwrap();
            assert_eq!(json, format!("\"{}\"", code.as_str()));
            let back: ErrorCode = serde_json::from_str(&json).unwrap();
            assert_eq!(back, code);
            assert!((400..600).contains(&code.http_status()));
        }
    }

    #[test]
    fn ack_shape() {
        let ack = Ack::Help {
            request_id: RequestId::new("R000001"),
            state: RequestState::Located,
            hospital_id: Some(FacilityId::new("H1")),
            duplicate: false,
        };
        assert_eq!(
            serde_json::to_value(&ack).unwrap(),
            serde_json::json!({
                "kind": "HELP",
                "request_id": "R000001",
                "state": "located",
                "hospital_id": "H1",
                "duplicate": false
            })
        );
    }

    #[test]
    fn protocol_errors_map() {
        let r: ErrorReply = ProtocolError::UnknownKind("PING".into()).into();
        assert_eq!(r.code, ErrorCode::UnknownKind);
        let r: ErrorReply = ProtocolError::MissingTemplate {
            template_id: "x".into(),
            language: crate::protocol::Language::En,
        }
        .into();
        assert_eq!(r.code, ErrorCode::Internal);
    }
}
