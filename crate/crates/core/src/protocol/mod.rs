//! Wire formats for inbound handset messages and outbound notifications.
//!
//! Inbound payloads are pipe-delimited UTF-8, at most 160 bytes:
//!
//! ```text
//! REG|<name>|<phone>|<lat>|<lon>|<lmp YYYY-MM-DD>|<lang>[|<husband phone>]
//! HELP|<patient_id>|<lat>|<lon>|<client timestamp, RFC 3339>
//! CHG|<patient_id>|<preferred date YYYY-MM-DD>
//! ```
//!
//! There is no escaping, so names may not contain `|`.

mod templates;

pub use templates::{OutboundNotification, TemplateCatalog, DEFAULT_TEMPLATES, TEMPLATE_IDS};

use std::fmt;

use chrono::{DateTime, NaiveDate, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{validate_point, GeoError, GeoPoint};
use crate::ids::{IdScheme, PatientId};

/// Largest accepted payload, in UTF-8 bytes.
pub const MAX_PAYLOAD_BYTES: usize = 160;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolError {
    #[error("payload is {0} bytes, limit is {MAX_PAYLOAD_BYTES}")]
    OversizedPayload(usize),
    #[error("payload is not valid UTF-8")]
    InvalidEncoding,
    #[error("unknown message kind {0:?}")]
    UnknownKind(String),
    #[error("{kind} expects {expected} fields, got {got}")]
    FieldCountMismatch {
        kind: MessageKind,
        expected: &'static str,
        got: usize,
    },
    #[error("malformed coordinate {0:?}")]
    MalformedCoordinate(String),
    #[error("coordinate out of range: {lat}, {lon}")]
    OutOfRange { lat: String, lon: String },
    #[error("malformed {field}: {value:?}")]
    MalformedField { field: &'static str, value: String },
    #[error("no template {template_id} for language {language}")]
    MissingTemplate { template_id: String, language: Language },
    #[error("template {template_id} placeholder {{{placeholder}}} is unbound")]
    UnboundPlaceholder { template_id: String, placeholder: String },
}

impl From<GeoError> for ProtocolError {
    fn from(e: GeoError) -> Self {
        match e {
            GeoError::MalformedCoordinate(raw) => ProtocolError::MalformedCoordinate(raw),
            GeoError::OutOfRange { lat, lon } => ProtocolError::OutOfRange { lat, lon },
            GeoError::EmptyCandidateSet(_) => unreachable!("validation never routes"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    #[default]
    En,
    Ku,
    Ar,
}

impl Language {
    pub const ALL: [Language; 3] = [Language::En, Language::Ku, Language::Ar];

    pub fn code(self) -> &'static str {
        match self {
            Language::En => "en",
            Language::Ku => "ku",
            Language::Ar => "ar",
        }
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl std::str::FromStr for Language {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Language::ALL
            .into_iter()
            .find(|l| l.code() == s)
            .ok_or_else(|| format!("unknown language {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum MessageKind {
    Reg,
    Help,
    Chg,
}

impl MessageKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MessageKind::Reg => "REG",
            MessageKind::Help => "HELP",
            MessageKind::Chg => "CHG",
        }
    }
}

impl fmt::Display for MessageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Registration {
    pub name: String,
    pub phone: String,
    pub location: GeoPoint,
    pub lmp_date: NaiveDate,
    pub language: Language,
    pub husband_phone: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HelpCall {
    pub patient_id: PatientId,
    pub location: GeoPoint,
    pub client_time: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReviewChange {
    pub patient_id: PatientId,
    pub preferred_date: NaiveDate,
}

#[derive(Debug, Clone, PartialEq)]
pub enum MessageBody {
    Reg(Registration),
    Help(HelpCall),
    Chg(ReviewChange),
}

impl MessageBody {
    pub fn kind(&self) -> MessageKind {
        match self {
            MessageBody::Reg(_) => MessageKind::Reg,
            MessageBody::Help(_) => MessageKind::Help,
            MessageBody::Chg(_) => MessageKind::Chg,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InboundMessage {
    pub sender_phone: String,
    pub received_at: DateTime<Utc>,
    pub body: MessageBody,
}

impl InboundMessage {
    pub fn kind(&self) -> MessageKind {
        self.body.kind()
    }
}

/// E.164-style phone: optional `+`, then 7 to 15 digits.
pub fn is_valid_phone(s: &str) -> bool {
    let digits = s.strip_prefix('+').unwrap_or(s);
    (7..=15).contains(&digits.len()) && digits.bytes().all(|b| b.is_ascii_digit())
}

fn malformed(field: &'static str, value: &str) -> ProtocolError {
    ProtocolError::MalformedField {
        field,
        value: value.to_string(),
    }
}

fn parse_date(field: &'static str, raw: &str) -> Result<NaiveDate, ProtocolError> {
    if raw.len() != 10 {
        return Err(malformed(field, raw));
    }
    NaiveDate::parse_from_str(raw, "%Y-%m-%d").map_err(|_| malformed(field, raw))
}

fn parse_patient_id(raw: &str) -> Result<PatientId, ProtocolError> {
    IdScheme::PATIENT
        .parse(raw)
        .map(|_| PatientId::new(raw))
        .ok_or_else(|| malformed("patient_id", raw))
}

fn parse_phone(field: &'static str, raw: &str) -> Result<String, ProtocolError> {
    if is_valid_phone(raw) {
        Ok(raw.to_string())
    } else {
        Err(malformed(field, raw))
    }
}

/// Parses raw bytes as received from the network.
pub fn parse_inbound_bytes(
    raw: &[u8],
    sender_phone: &str,
    now: DateTime<Utc>,
) -> Result<InboundMessage, ProtocolError> {
    if raw.len() > MAX_PAYLOAD_BYTES {
        return Err(ProtocolError::OversizedPayload(raw.len()));
    }
    let text = std::str::from_utf8(raw).map_err(|_| ProtocolError::InvalidEncoding)?;
    parse_inbound(text, sender_phone, now)
}

pub fn parse_inbound(raw: &str, sender_phone: &str, now: DateTime<Utc>) -> Result<InboundMessage, ProtocolError> {
    if raw.len() > MAX_PAYLOAD_BYTES {
        return Err(ProtocolError::OversizedPayload(raw.len()));
    }
    let sender = sender_phone.trim();
    if sender.is_empty() || sender.len() > 32 || sender.chars().any(char::is_control) {
        return Err(malformed("sender_phone", sender_phone));
    }
    let fields: Vec<&str> = raw.split('|').collect();
    let body = match fields[0] {
        "REG" => {
            let got = fields.len() - 1;
            if got != 6 && got != 7 {
                return Err(ProtocolError::FieldCountMismatch {
                    kind: MessageKind::Reg,
                    expected: "6 or 7",
                    got,
                });
            }
            let name = fields[1];
            if name.trim().is_empty() || name.chars().any(char::is_control) {
                return Err(malformed("name", name));
            }
            let phone = parse_phone("phone", fields[2])?;
            let location = validate_point(fields[3], fields[4])?;
            let lmp_date = parse_date("lmp_date", fields[5])?;
            let language = match fields[6] {
                "" => Language::default(),
                code => code.parse().map_err(|_| malformed("lang", code))?,
            };
            let husband_phone = fields.get(7).map(|p| parse_phone("husband_phone", p)).transpose()?;
            MessageBody::Reg(Registration {
                name: name.to_string(),
                phone,
                location,
                lmp_date,
                language,
                husband_phone,
            })
        }
        "HELP" => {
            if fields.len() != 5 {
                return Err(ProtocolError::FieldCountMismatch {
                    kind: MessageKind::Help,
                    expected: "4",
                    got: fields.len() - 1,
                });
            }
            let patient_id = parse_patient_id(fields[1])?;
            let location = validate_point(fields[2], fields[3])?;
            let client_time = DateTime::parse_from_rfc3339(fields[4])
                .map_err(|_| malformed("client_ts", fields[4]))?
                .with_timezone(&Utc);
            MessageBody::Help(HelpCall {
                patient_id,
                location,
                client_time,
            })
        }
        "CHG" => {
            if fields.len() != 3 {
                return Err(ProtocolError::FieldCountMismatch {
                    kind: MessageKind::Chg,
                    expected: "2",
                    got: fields.len() - 1,
                });
            }
            MessageBody::Chg(ReviewChange {
                patient_id: parse_patient_id(fields[1])?,
                preferred_date: parse_date("preferred_date", fields[2])?,
            })
        }
        other => return Err(ProtocolError::UnknownKind(other.to_string())),
    };
    Ok(InboundMessage {
        sender_phone: sender.to_string(),
        received_at: now,
        body,
    })
}

/// Client timestamps always travel in UTC with a `Z` suffix.
pub fn format_timestamp(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::AutoSi, true)
}

/// Renders a message body as its wire payload. Refuses to exceed the
/// payload limit rather than truncating.
pub fn serialize_inbound(body: &MessageBody) -> Result<String, ProtocolError> {
    let text = match body {
        MessageBody::Reg(r) => {
            if r.name.contains('|') {
                return Err(malformed("name", &r.name));
            }
            let mut s = format!(
                "REG|{}|{}|{}|{}|{}|{}",
                r.name,
                r.phone,
                r.location.lat(),
                r.location.lon(),
                r.lmp_date.format("%Y-%m-%d"),
                r.language
            );
            if let Some(h) = &r.husband_phone {
                s.push('|');
                s.push_str(h);
            }
            s
        }
        MessageBody::Help(h) => format!(
            "HELP|{}|{}|{}|{}",
            h.patient_id,
            h.location.lat(),
            h.location.lon(),
            format_timestamp(h.client_time)
        ),
        MessageBody::Chg(c) => format!("CHG|{}|{}", c.patient_id, c.preferred_date.format("%Y-%m-%d")),
    };
    if text.len() > MAX_PAYLOAD_BYTES {
        return Err(ProtocolError::OversizedPayload(text.len()));
    }
    Ok(text)
}
