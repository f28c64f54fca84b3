//! System of record: patients, facilities, accounts, units, help requests,
//! appointments, advice, notifications and patient files.

mod model;
pub mod password;
pub mod seed;
mod store;

pub use model::*;
pub use store::{Record, Registry, Row, StoreError, StoreOptions, Tables, Txn};

use chrono::NaiveDate;
use thiserror::Error;

use crate::care::{gestation_week, MAX_GESTATION_WEEK};
use crate::geo::GeoPoint;
use crate::ids::*;
use crate::protocol::{self, Language};

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("phone {0} is already registered")]
    DuplicatePhone(String),
    #[error("invalid {field}: {reason}")]
    InvalidField { field: &'static str, reason: String },
    #[error("{0} not found")]
    NotFound(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

impl RegistryError {
    fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        RegistryError::InvalidField {
            field,
            reason: reason.into(),
        }
    }
}

/// Validated input for a new patient.
#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationData {
    pub name: String,
    pub phone: String,
    pub husband_phone: Option<String>,
    pub home: GeoPoint,
    pub lmp_date: NaiveDate,
    pub language: Language,
    pub care_center_id: FacilityId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PatientLookup {
    Id(PatientId),
    Phone(String),
}

/// Input for a new notification log row.
#[derive(Debug, Clone, PartialEq)]
pub struct NewNotification {
    pub recipient_phone: String,
    pub template_id: String,
    pub language: Language,
    pub payload: String,
    pub request_id: Option<RequestId>,
    pub patient_id: Option<PatientId>,
}

/// Stages a new patient in `tx`.
pub fn stage_patient(tx: &mut Txn<'_>, reg: RegistrationData) -> Result<PatientRecord, RegistryError> {
    let now = tx.now();
    if reg.name.trim().is_empty() {
        return Err(RegistryError::invalid("name", "empty"));
    }
    if reg.name.contains('|') {
        return Err(RegistryError::invalid("name", "contains '|'"));
    }
    if !protocol::is_valid_phone(&reg.phone) {
        return Err(RegistryError::invalid("phone", reg.phone));
    }
    if let Some(h) = &reg.husband_phone {
        if !protocol::is_valid_phone(h) {
            return Err(RegistryError::invalid("husband_phone", h.clone()));
        }
    }
    let today = now.date_naive();
    match gestation_week(reg.lmp_date, today) {
        Err(_) => return Err(RegistryError::invalid("lmp_date", "after registration date")),
        Ok(w) if w > MAX_GESTATION_WEEK => {
            return Err(RegistryError::invalid(
                "lmp_date",
                format!("{w} weeks ago exceeds {MAX_GESTATION_WEEK}"),
            ))
        }
        Ok(_) => {}
    }
    if tx.base().active_patient_by_phone(&reg.phone).is_some()
        || tx.staged::<PatientRecord>().any(|p| p.active && p.phone == reg.phone)
    {
        return Err(RegistryError::DuplicatePhone(reg.phone));
    }
    let patient = PatientRecord {
        patient_id: PatientId::new(tx.next_id(PatientRecord::TABLE)),
        name: reg.name,
        phone: reg.phone,
        husband_phone: reg.husband_phone,
        home: reg.home,
        lmp_date: reg.lmp_date,
        language: reg.language,
        care_center_id: reg.care_center_id,
        registered_at: now,
        active: true,
    };
    tx.put(patient.clone());
    Ok(patient)
}

/// Stages a queued notification in `tx`.
pub fn stage_notification(tx: &mut Txn<'_>, n: NewNotification) -> NotificationLog {
    let row = NotificationLog {
        notification_id: NotificationId::new(tx.next_id(NotificationLog::TABLE)),
        recipient_phone: n.recipient_phone,
        channel: Channel::Soip,
        template_id: n.template_id,
        language: n.language,
        payload: n.payload,
        status: DeliveryStatus::Queued,
        attempts: 0,
        created_at: tx.now(),
        sent_at: None,
        request_id: n.request_id,
        patient_id: n.patient_id,
    };
    tx.put(row.clone());
    row
}

impl Registry {
    pub fn create_patient(&self, reg: RegistrationData) -> Result<PatientRecord, RegistryError> {
        self.write(|tx| stage_patient(tx, reg))
    }

    pub fn find_patient(&self, by: &PatientLookup) -> Result<PatientRecord, RegistryError> {
        let tables = self.read();
        let found = match by {
            PatientLookup::Id(id) => tables.patients.get(id.as_str()),
            PatientLookup::Phone(phone) => tables.active_patient_by_phone(phone),
        };
        found.cloned().ok_or_else(|| {
            RegistryError::NotFound(match by {
                PatientLookup::Id(id) => format!("patient {id}"),
                PatientLookup::Phone(p) => format!("patient with phone {p}"),
            })
        })
    }

    pub fn append_notification(&self, n: NewNotification) -> Result<NotificationLog, RegistryError> {
        self.write(|tx| Ok(stage_notification(tx, n)))
    }

    pub fn mark_sent(&self, id: &NotificationId, attempts: u32) -> Result<NotificationLog, RegistryError> {
        self.finish_notification(id, DeliveryStatus::Sent, attempts)
    }

    pub fn mark_failed(&self, id: &NotificationId, attempts: u32) -> Result<NotificationLog, RegistryError> {
        self.finish_notification(id, DeliveryStatus::Failed, attempts)
    }

    fn finish_notification(
        &self,
        id: &NotificationId,
        status: DeliveryStatus,
        attempts: u32,
    ) -> Result<NotificationLog, RegistryError> {
        self.write(|tx| {
            let mut row: NotificationLog = tx
                .get(id.as_str())
                .ok_or_else(|| RegistryError::NotFound(format!("notification {id}")))?;
            row.status = status;
            row.attempts = attempts;
            row.sent_at = (status == DeliveryStatus::Sent).then(|| tx.now());
            tx.put(row.clone());
            Ok(row)
        })
    }

    /// Ids of every notification still waiting for delivery.
    pub fn queued_notifications(&self) -> Vec<NotificationId> {
        self.read()
            .notifications
            .values()
            .filter(|n| n.status == DeliveryStatus::Queued)
            .map(|n| n.notification_id.clone())
            .collect()
    }

    pub fn notification(&self, id: &NotificationId) -> Option<NotificationLog> {
        self.read().notifications.get(id.as_str()).cloned()
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use chrono::{Duration, TimeZone, Utc};

    use super::*;
    use crate::clock::ManualClock;
    use crate::geo::FacilityKind;

    fn registry() -> (Registry, ManualClock) {
        let clock = ManualClock::new(Utc.with_ymd_and_hms(2014, 1, 20, 8, 0, 0).unwrap());
        let reg = Registry::in_memory(Arc::new(clock.clone()));
        reg.write(|tx| {
            tx.put(Facility {
                facility_id: "C1".into(),
                kind: FacilityKind::CareCenter,
                name: "Care One".into(),
                location: GeoPoint::new(36.2, 44.0).unwrap(),
                contact_phone: "+9647500000001".into(),
            });
            Ok::<_, StoreError>(())
        })
        .unwrap();
        (reg, clock)
    }

    fn rawshan() -> RegistrationData {
        RegistrationData {
            name: "Rawshan".into(),
            phone: "+9647501234567".into(),
            husband_phone: Some("+9647507654321".into()),
            home: GeoPoint::new(36.2062125, 44.0307111).unwrap(),
            lmp_date: NaiveDate::from_ymd_opt(2013, 10, 1).unwrap(),
            language: Language::En,
            care_center_id: "C1".into(),
        }
    }

    #[test]
    fn create_then_find_by_id_and_phone() {
        let (reg, clock) = registry();
        let p = reg.create_patient(rawshan()).unwrap();
        assert_eq!(p.patient_id.as_str(), "P000001");
        assert_eq!(p.name, "Rawshan");
        assert_eq!(p.home, GeoPoint::new(36.2062125, 44.0307111).unwrap());
        assert_eq!(p.registered_at, clock.now());
        let by_id = reg.find_patient(&PatientLookup::Id(p.patient_id.clone())).unwrap();
        let by_phone = reg.find_patient(&PatientLookup::Phone(p.phone.clone())).unwrap();
        assert_eq!(by_id, p);
        assert_eq!(by_phone, by_id);
    }

    use crate::clock::Clock;

    #[test]
    fn unknown_id_not_found() {
        let (reg, _) = registry();
        assert!(matches!(
            reg.find_patient(&PatientLookup::Id("P999999".into())),
            Err(RegistryError::NotFound(_))
        ));
    }

    #[test]
    fn duplicate_phone_rejected() {
        let (reg, _) = registry();
        reg.create_patient(rawshan()).unwrap();
        assert!(matches!(
            reg.create_patient(rawshan()),
            Err(RegistryError::DuplicatePhone(_))
        ));
    }

    #[test]
    fn stale_lmp_rejected() {
        let (reg, clock) = registry();
        let mut r = rawshan();
        r.lmp_date = clock.now().date_naive() - Duration::weeks(60);
        assert!(matches!(
            reg.create_patient(r),
            Err(RegistryError::InvalidField { field: "lmp_date", .. })
        ));
        let mut r = rawshan();
        r.lmp_date = clock.now().date_naive() + Duration::days(1);
        assert!(matches!(
            reg.create_patient(r),
            Err(RegistryError::InvalidField { field: "lmp_date", .. })
        ));
    }

    #[test]
    fn unknown_care_center_violates_integrity() {
        let (reg, _) = registry();
        let mut r = rawshan();
        r.care_center_id = "C404".into();
        assert!(matches!(
            reg.create_patient(r),
            Err(RegistryError::Store(StoreError::Integrity(_)))
        ));
    }

    #[test]
    fn notification_lifecycle() {
        let (reg, _) = registry();
        let n = reg
            .append_notification(NewNotification {
                recipient_phone: "+9647501234567".into(),
                template_id: "help_ack".into(),
                language: Language::En,
                payload: "hello".into(),
                request_id: None,
                patient_id: None,
            })
            .unwrap();
        assert_eq!(n.status, DeliveryStatus::Queued);
        assert!(n.sent_at.is_none());
        let sent = reg.mark_sent(&n.notification_id, 1).unwrap();
        assert_eq!(sent.status, DeliveryStatus::Sent);
        assert!(sent.sent_at.is_some());
        assert_eq!(sent.payload, "hello");

        let m = reg
            .append_notification(NewNotification {
                recipient_phone: "+9647501234567".into(),
                template_id: "help_ack".into(),
                language: Language::En,
                payload: "again".into(),
                request_id: None,
                patient_id: None,
            })
            .unwrap();
        let failed = reg.mark_failed(&m.notification_id, 3).unwrap();
        assert_eq!(failed.status, DeliveryStatus::Failed);
        assert!(failed.sent_at.is_none());
        assert_eq!(failed.attempts, 3);
        // Terminal rows cannot flip back.
        assert!(reg.mark_sent(&m.notification_id, 4).is_err());
    }

    #[test]
    fn payload_is_immutable() {
        let (reg, _) = registry();
        let n = reg
            .append_notification(NewNotification {
                recipient_phone: "+9647501234567".into(),
                template_id: "help_ack".into(),
                language: Language::En,
                payload: "original".into(),
                request_id: None,
                patient_id: None,
            })
            .unwrap();
        let res = reg.write(|tx| {
            let mut row = n.clone();
            row.payload = "tampered".into();
            tx.put(row);
            Ok::<_, StoreError>(())
        });
        assert!(matches!(res, Err(StoreError::Immutable(_))));
        assert_eq!(reg.notification(&n.notification_id).unwrap().payload, "original");
    }
}
