//! Registration-side services: care-center assignment, review scheduling
//! and weekly trimester advice.

use std::collections::BTreeMap;
use std::sync::Arc;

use chrono::{DateTime, Datelike, Duration, NaiveDate, NaiveTime, Timelike, Utc, Weekday};
use thiserror::Error;

use crate::geo::{nearest_facility, EarthModel, FacilityKind, GeoError, Site};
use crate::ids::*;
use crate::protocol::{InboundMessage, Language, MessageBody, ProtocolError, TemplateCatalog};
use crate::registry::{
    stage_notification, stage_patient, AdviceEntry, Appointment, AppointmentState, Facility, NewNotification,
    NotificationLog, PatientRecord, Record, RegistrationData, Registry, RegistryError, StoreError, Tables, Txn,
};

/// Last gestational week the system serves.
pub const MAX_GESTATION_WEEK: u32 = 44;

#[derive(Debug, Error)]
pub enum CareError {
    #[error("phone {0} is already registered")]
    DuplicatePhone(String),
    #[error("no care center registered")]
    EmptyCandidateSet,
    #[error("unknown patient {0}")]
    UnknownPatient(PatientId),
    #[error("patient {0} has no open appointment")]
    NoOpenAppointment(PatientId),
    #[error("{0} is not in the future")]
    PastDate(NaiveDate),
    #[error("last menstrual period {0} is in the future")]
    FutureLmp(NaiveDate),
    #[error("week {0} is past the end of pregnancy")]
    OutOfPregnancyRange(u32),
    #[error("invalid {field}: {reason}")]
    InvalidField { field: &'static str, reason: String },
    #[error("expected a {expected} message")]
    WrongKind { expected: &'static str },
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

impl From<RegistryError> for CareError {
    fn from(e: RegistryError) -> Self {
        match e {
            RegistryError::DuplicatePhone(p) => CareError::DuplicatePhone(p),
            RegistryError::InvalidField { field, reason } => CareError::InvalidField { field, reason },
            RegistryError::NotFound(what) => CareError::InvalidField {
                field: "reference",
                reason: format!("{what} not found"),
            },
            RegistryError::Store(s) => CareError::Store(s),
        }
    }
}

impl PartialEq for CareError {
    fn eq(&self, other: &Self) -> bool {
        self.to_string() == other.to_string()
    }
}

/// Whole weeks since the last menstrual period.
pub fn gestation_week(lmp: NaiveDate, today: NaiveDate) -> Result<u32, CareError> {
    let days = (today - lmp).num_days();
    if days < 0 {
        return Err(CareError::FutureLmp(lmp));
    }
    Ok((days / 7) as u32)
}

/// Trimester for a gestational week: weeks 0-12 are the first, 13-27 the
/// second, 28-44 the third.
pub fn trimester_of(week: u32) -> Result<u8, CareError> {
    match week {
        0..=12 => Ok(1),
        13..=27 => Ok(2),
        28..=MAX_GESTATION_WEEK => Ok(3),
        _ => Err(CareError::OutOfPregnancyRange(week)),
    }
}

#[derive(Debug, Clone)]
pub struct CareConfig {
    /// Offset of local time from UTC, in minutes.
    pub utc_offset_minutes: i32,
    pub review_slot: NaiveTime,
    /// Minimum days between registration and the first review.
    pub first_review_lead_days: i64,
    pub weekend: Vec<Weekday>,
    pub earth: EarthModel,
}

impl Default for CareConfig {
    fn default() -> Self {
        CareConfig {
            utc_offset_minutes: 180,
            review_slot: NaiveTime::from_hms_opt(9, 0, 0).unwrap(),
            first_review_lead_days: 2,
            weekend: vec![Weekday::Sat, Weekday::Sun],
            earth: EarthModel::default(),
        }
    }
}

impl CareConfig {
    pub fn local_date(&self, t: DateTime<Utc>) -> NaiveDate {
        (t + Duration::minutes(self.utc_offset_minutes as i64)).date_naive()
    }

    /// First business day at least `first_review_lead_days` after `today`.
    pub fn first_review_date(&self, today: NaiveDate) -> NaiveDate {
        let mut d = today + Duration::days(self.first_review_lead_days);
        while self.weekend.contains(&d.weekday()) {
            d += Duration::days(1);
        }
        d
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationOutcome {
    pub patient: PatientRecord,
    pub appointment: Appointment,
    pub notifications: Vec<NotificationLog>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MissingAdvice {
    pub patient_id: PatientId,
    pub week: u32,
    pub language: Language,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdviceBatch {
    pub notifications: Vec<NotificationLog>,
    pub missing: Vec<MissingAdvice>,
    /// Patients past the last served week, flagged for deactivation review.
    pub flagged: Vec<PatientId>,
}

/// When the weekly advice batch runs, in local time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WeeklySchedule {
    pub weekday: Weekday,
    pub hour: u32,
}

impl WeeklySchedule {
    /// The local date to run for, if a run is due at `now_local` and has not
    /// already happened on that date.
    pub fn due(&self, now_local: chrono::NaiveDateTime, last_run: Option<NaiveDate>) -> Option<NaiveDate> {
        let today = now_local.date();
        let due = today.weekday() == self.weekday && now_local.hour() >= self.hour;
        (due && last_run != Some(today)).then_some(today)
    }
}

pub struct CareService {
    registry: Arc<Registry>,
    templates: Arc<TemplateCatalog>,
    config: CareConfig,
}

fn sites_of(tables: &Tables, kind: FacilityKind) -> Vec<Site> {
    tables
        .facilities
        .values()
        .filter(|f| f.kind == kind)
        .map(|f| Site {
            id: f.facility_id.clone(),
            kind: f.kind,
            location: f.location,
        })
        .collect()
}

impl CareService {
    pub fn new(registry: Arc<Registry>, templates: Arc<TemplateCatalog>, config: CareConfig) -> Self {
        CareService {
            registry,
            templates,
            config,
        }
    }

    pub fn config(&self) -> &CareConfig {
        &self.config
    }

    fn notify(
        &self,
        tx: &mut Txn<'_>,
        patient: &PatientRecord,
        template_id: &str,
        bindings: &BTreeMap<&str, String>,
    ) -> Result<NotificationLog, CareError> {
        let payload = self.templates.render(template_id, patient.language, bindings)?;
        Ok(stage_notification(
            tx,
            NewNotification {
                recipient_phone: patient.phone.clone(),
                template_id: template_id.to_string(),
                language: patient.language,
                payload,
                request_id: None,
                patient_id: Some(patient.patient_id.clone()),
            },
        ))
    }

    /// Registers a patient at her nearest care center and books the first review.
    pub fn register(&self, msg: &InboundMessage) -> Result<RegistrationOutcome, CareError> {
        let MessageBody::Reg(reg) = &msg.body else {
            return Err(CareError::WrongKind { expected: "REG" });
        };
        self.registry.write(|tx| {
            let centers = sites_of(tx.base(), FacilityKind::CareCenter);
            let (center_id, _) = nearest_facility(reg.location, &centers, FacilityKind::CareCenter, &self.config.earth)
                .map_err(|e| match e {
                    GeoError::EmptyCandidateSet(_) => CareError::EmptyCandidateSet,
                    other => CareError::InvalidField {
                        field: "location",
                        reason: other.to_string(),
                    },
                })?;
            let center: Facility = tx.get(center_id.as_str()).expect("site came from the table");
            let patient = stage_patient(
                tx,
                RegistrationData {
                    name: reg.name.clone(),
                    phone: reg.phone.clone(),
                    husband_phone: reg.husband_phone.clone(),
                    home: reg.location,
                    lmp_date: reg.lmp_date,
                    language: reg.language,
                    care_center_id: center_id.clone(),
                },
            )?;
            let today = self.config.local_date(tx.now());
            let appointment = Appointment {
                appointment_id: AppointmentId::new(tx.next_id(Appointment::TABLE)),
                patient_id: patient.patient_id.clone(),
                facility_id: center_id,
                date: self.config.first_review_date(today),
                slot: self.config.review_slot,
                state: AppointmentState::Scheduled,
                created_at: tx.now(),
            };
            tx.put(appointment.clone());

            let ack = BTreeMap::from([
                ("name", patient.name.clone()),
                ("patient_id", patient.patient_id.to_string()),
                ("center", center.name.clone()),
            ]);
            let review = BTreeMap::from([
                ("center", center.name.clone()),
                ("date", appointment.date.to_string()),
                ("time", appointment.slot.format("%H:%M").to_string()),
            ]);
            let notifications = vec![
                self.notify(tx, &patient, "registration_ack", &ack)?,
                self.notify(tx, &patient, "first_review", &review)?,
            ];
            Ok(RegistrationOutcome {
                patient,
                appointment,
                notifications,
            })
        })
    }

    /// Moves a patient's open appointment to her preferred date.
    pub fn reschedule(&self, msg: &InboundMessage) -> Result<(Appointment, NotificationLog), CareError> {
        let MessageBody::Chg(chg) = &msg.body else {
            return Err(CareError::WrongKind { expected: "CHG" });
        };
        self.registry.write(|tx| {
            let patient: PatientRecord = tx
                .get(chg.patient_id.as_str())
                .ok_or_else(|| CareError::UnknownPatient(chg.patient_id.clone()))?;
            let mut open: Vec<&Appointment> = tx
                .base()
                .appointments
                .values()
                .filter(|a| a.patient_id == patient.patient_id && a.state.is_open())
                .collect();
            open.sort_by_key(|a| a.appointment_id.clone());
            let mut appointment = open
                .last()
                .map(|a| (*a).clone())
                .ok_or_else(|| CareError::NoOpenAppointment(patient.patient_id.clone()))?;
            let today = self.config.local_date(tx.now());
            if chg.preferred_date <= today {
                return Err(CareError::PastDate(chg.preferred_date));
            }
            appointment.date = chg.preferred_date;
            appointment.state = AppointmentState::Rescheduled;
            tx.put(appointment.clone());
            let center: Facility = tx
                .get(appointment.facility_id.as_str())
                .expect("appointments reference existing centers");
            let bindings = BTreeMap::from([
                ("center", center.name),
                ("date", appointment.date.to_string()),
                ("time", appointment.slot.format("%H:%M").to_string()),
            ]);
            let note = self.notify(tx, &patient, "review_changed", &bindings)?;
            Ok((appointment, note))
        })
    }

    /// Queues one advice message per active patient for the band containing
    /// her gestational week on `today` (local date).
    pub fn weekly_advice_batch(&self, today: NaiveDate) -> Result<AdviceBatch, CareError> {
        let (patients, catalog) = {
            let tables = self.registry.read();
            let patients: Vec<PatientRecord> = tables.patients.values().filter(|p| p.active).cloned().collect();
            let catalog: Vec<AdviceEntry> = tables.advice_catalog.values().cloned().collect();
            (patients, catalog)
        };
        let mut batch = AdviceBatch::default();
        let mut plan = Vec::new();
        for p in &patients {
            let Ok(week) = gestation_week(p.lmp_date, today) else {
                continue;
            };
            if week > MAX_GESTATION_WEEK {
                batch.flagged.push(p.patient_id.clone());
                continue;
            }
            let entry = catalog
                .iter()
                .filter(|a| a.language == p.language && a.covers(week))
                .min_by(|a, b| a.advice_id.cmp(&b.advice_id));
            match entry {
                Some(a) => plan.push((p, week, a)),
                None => batch.missing.push(MissingAdvice {
                    patient_id: p.patient_id.clone(),
                    week,
                    language: p.language,
                }),
            }
        }
        if plan.is_empty() {
            return Ok(batch);
        }
        batch.notifications = self.registry.write(|tx| {
            plan.iter()
                .map(|(p, week, entry)| {
                    let bindings = BTreeMap::from([("week", week.to_string()), ("advice", entry.text.clone())]);
                    self.notify(tx, p, "weekly_advice", &bindings)
                })
                .collect::<Result<Vec<_>, CareError>>()
        })?;
        Ok(batch)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::{Clock, ManualClock};
    use crate::geo::GeoPoint;
    use crate::protocol::parse_inbound;
    use chrono::TimeZone;

    #[test]
    fn week_numbers() {
        let today = NaiveDate::from_ymd_opt(2014, 1, 30).unwrap();
        assert_eq!(gestation_week(today, today).unwrap(), 0);
        assert_eq!(gestation_week(today - Duration::days(14), today).unwrap(), 2);
        assert_eq!(gestation_week(today - Duration::days(13), today).unwrap(), 1);
        assert!(matches!(
            gestation_week(today + Duration::days(1), today),
            Err(CareError::FutureLmp(_))
        ));
    }

    #[test]
    fn trimester_boundaries() {
        assert_eq!(trimester_of(0).unwrap(), 1);
        assert_eq!(trimester_of(12).unwrap(), 1);
        assert_eq!(trimester_of(13).unwrap(), 2);
        assert_eq!(trimester_of(27).unwrap(), 2);
        assert_eq!(trimester_of(28).unwrap(), 3);
        assert_eq!(trimester_of(44).unwrap(), 3);
        assert!(matches!(trimester_of(45), Err(CareError::OutOfPregnancyRange(45))));
    }

    #[test]
    fn trimester_total_and_monotone() {
        let ts: Vec<u8> = (0..=MAX_GESTATION_WEEK).map(|w| trimester_of(w).unwrap()).collect();
        assert!(ts.windows(2).all(|w| w[0] <= w[1]));
        for t in 1..=3 {
            assert!(ts.contains(&t));
        }
    }

    #[test]
    fn first_review_skips_weekend() {
        let cfg = CareConfig::default();
        // Thursday + 2 = Saturday -> Monday.
        let thu = NaiveDate::from_ymd_opt(2014, 1, 30).unwrap();
        assert_eq!(cfg.first_review_date(thu), NaiveDate::from_ymd_opt(2014, 2, 3).unwrap());
        // Monday + 2 = Wednesday.
        let mon = NaiveDate::from_ymd_opt(2014, 2, 3).unwrap();
        assert_eq!(cfg.first_review_date(mon), NaiveDate::from_ymd_opt(2014, 2, 5).unwrap());
    }

    #[test]
    fn schedule_fires_once_per_day() {
        let s = WeeklySchedule {
            weekday: Weekday::Mon,
            hour: 8,
        };
        let mon = NaiveDate::from_ymd_opt(2014, 2, 3).unwrap();
        assert_eq!(s.due(mon.and_hms_opt(7, 59, 0).unwrap(), None), None);
        assert_eq!(s.due(mon.and_hms_opt(8, 0, 0).unwrap(), None), Some(mon));
        assert_eq!(s.due(mon.and_hms_opt(9, 0, 0).unwrap(), Some(mon)), None);
        assert_eq!(
            s.due((mon + Duration::days(1)).and_hms_opt(9, 0, 0).unwrap(), None),
            None
        );
    }

    fn service() -> (CareService, ManualClock) {
        let clock = ManualClock::new(Utc.with_ymd_and_hms(2014, 1, 30, 7, 0, 0).unwrap());
        let registry = Arc::new(Registry::in_memory(Arc::new(clock.clone())));
        registry
            .seed_facilities_csv(
                "facility_id,kind,name,lat,lon,contact_phone
C1,care_center,Near Center,36.2152,44.0307111,+9647500000001
C2,care_center,Far Center,36.2782,44.0307111,+9647500000002
"
                .as_bytes(),
            )
            .unwrap();
        registry
            .seed_advice_tsv(crate::registry::seed::DEFAULT_ADVICE.as_bytes())
            .unwrap();
        let svc = CareService::new(registry, Arc::new(TemplateCatalog::default()), CareConfig::default());
        (svc, clock)
    }

    fn reg_msg(clock: &ManualClock, phone: &str, lang: &str) -> InboundMessage {
        parse_inbound(
            &format!("REG|Rawshan|{phone}|36.2062125|44.0307111|2013-10-01|{lang}"),
            phone,
            clock.now(),
        )
        .unwrap()
    }

    #[test]
    fn register_assigns_nearest_and_books_review() {
        let (svc, clock) = service();
        let out = svc.register(&reg_msg(&clock, "+9647501234567", "ku")).unwrap();
        assert_eq!(out.patient.care_center_id.as_str(), "C1");
        assert_eq!(out.appointment.state, AppointmentState::Scheduled);
        // 2014-01-30 is a Thursday.
        assert_eq!(out.appointment.date, NaiveDate::from_ymd_opt(2014, 2, 3).unwrap());
        let ids: Vec<_> = out.notifications.iter().map(|n| n.template_id.as_str()).collect();
        assert_eq!(ids, ["registration_ack", "first_review"]);
        assert!(out.notifications.iter().all(|n| n.language == Language::Ku));
        assert!(out.notifications[1].payload.contains("Near Center"));
        assert!(out.notifications[1].payload.contains("2014-02-03"));
    }

    #[test]
    fn duplicate_registration() {
        let (svc, clock) = service();
        svc.register(&reg_msg(&clock, "+9647501234567", "en")).unwrap();
        assert!(matches!(
            svc.register(&reg_msg(&clock, "+9647501234567", "en")),
            Err(CareError::DuplicatePhone(_))
        ));
        assert_eq!(svc.registry.read().appointments.len(), 1);
    }

    #[test]
    fn no_centers_seeded() {
        let clock = ManualClock::new(Utc.with_ymd_and_hms(2014, 1, 30, 7, 0, 0).unwrap());
        let registry = Arc::new(Registry::in_memory(Arc::new(clock.clone())));
        let svc = CareService::new(registry, Arc::new(TemplateCatalog::default()), CareConfig::default());
        assert!(matches!(
            svc.register(&reg_msg(&clock, "+9647501234567", "en")),
            Err(CareError::EmptyCandidateSet)
        ));
    }

    #[test]
    fn reschedule_paths() {
        let (svc, clock) = service();
        let out = svc.register(&reg_msg(&clock, "+9647501234567", "en")).unwrap();
        let pid = out.patient.patient_id.clone();
        let chg = |date: &str| parse_inbound(&format!("CHG|{pid}|{date}"), "+9647501234567", clock.now()).unwrap();

        assert!(matches!(
            svc.reschedule(&chg("2014-01-29")),
            Err(CareError::PastDate(_))
        ));
        let (appt, note) = svc.reschedule(&chg("2014-02-10")).unwrap();
        assert_eq!(appt.state, AppointmentState::Rescheduled);
        assert_eq!(appt.date, NaiveDate::from_ymd_opt(2014, 2, 10).unwrap());
        assert_eq!(note.template_id, "review_changed");
        let open = svc
            .registry
            .read()
            .appointments
            .values()
            .filter(|a| a.patient_id == pid && a.state.is_open())
            .count();
        assert_eq!(open, 1);

        let unknown = parse_inbound("CHG|P999999|2014-02-10", "+1234567", clock.now()).unwrap();
        assert!(matches!(svc.reschedule(&unknown), Err(CareError::UnknownPatient(_))));

        svc.registry
            .write(|tx| {
                let mut a: Appointment = tx.get(appt.appointment_id.as_str()).unwrap();
                a.state = AppointmentState::Attended;
                tx.put(a);
                Ok::<_, StoreError>(())
            })
            .unwrap();
        assert!(matches!(
            svc.reschedule(&chg("2014-02-12")),
            Err(CareError::NoOpenAppointment(_))
        ));
    }

    #[test]
    fn advice_batch_bands_and_gaps() {
        let (svc, clock) = service();
        let today = svc.config.local_date(clock.now());
        let mk = |phone: &str, weeks: i64, lang: Language| {
            svc.registry
                .create_patient(RegistrationData {
                    name: "P".into(),
                    phone: phone.into(),
                    husband_phone: None,
                    home: GeoPoint::new(36.2, 44.0).unwrap(),
                    lmp_date: today - Duration::weeks(weeks),
                    language: lang,
                    care_center_id: "C1".into(),
                })
                .unwrap()
        };
        assert!(svc.weekly_advice_batch(today).unwrap().notifications.is_empty());

        let a = mk("+9647500000101", 5, Language::En);
        let b = mk("+9647500000102", 30, Language::Ar);
        let batch = svc.weekly_advice_batch(today).unwrap();
        assert_eq!(batch.notifications.len(), 2);
        let by = |id: &PatientId| {
            batch
                .notifications
                .iter()
                .find(|n| n.patient_id.as_ref() == Some(id))
                .unwrap()
        };
        assert!(by(&a.patient_id).payload.contains("folic acid"));
        assert_eq!(by(&b.patient_id).language, Language::Ar);
        assert!(by(&b.patient_id).payload.contains("الأسبوع 30"));

        let c = mk("+9647500000103", 20, Language::Ku);
        let later = svc.weekly_advice_batch(today).unwrap();
        assert_eq!(later.notifications.len(), 3);
        assert!(later
            .notifications
            .iter()
            .any(|n| n.patient_id.as_ref() == Some(&c.patient_id)));

        // A catalog with only first-trimester entries leaves week 20 uncovered.
        let (svc2, _) = {
            let clock = ManualClock::new(Utc.with_ymd_and_hms(2014, 1, 30, 7, 0, 0).unwrap());
            let registry = Arc::new(Registry::in_memory(Arc::new(clock.clone())));
            registry
                .seed_facilities_csv(
                    "facility_id,kind,name,lat,lon,contact_phone\nC1,care_center,C,36.2,44.0,+9647500000001\n"
                        .as_bytes(),
                )
                .unwrap();
            registry
                .seed_advice_tsv("1\t0\t12\ten\tonly first trimester\n".as_bytes())
                .unwrap();
            (
                CareService::new(registry, Arc::new(TemplateCatalog::default()), CareConfig::default()),
                clock,
            )
        };
        svc2.registry
            .create_patient(RegistrationData {
                name: "Gap".into(),
                phone: "+9647500000201".into(),
                husband_phone: None,
                home: GeoPoint::new(36.2, 44.0).unwrap(),
                lmp_date: today - Duration::weeks(20),
                language: Language::En,
                care_center_id: "C1".into(),
            })
            .unwrap();
        let gap = svc2.weekly_advice_batch(today).unwrap();
        assert!(gap.notifications.is_empty());
        assert_eq!(gap.missing.len(), 1);
        assert_eq!(gap.missing[0].week, 20);
    }

    #[test]
    fn past_term_patients_are_flagged() {
        let (svc, clock) = service();
        let registered = svc.config.local_date(clock.now());
        let p = svc
            .registry
            .create_patient(RegistrationData {
                name: "Late".into(),
                phone: "+9647500000301".into(),
                husband_phone: None,
                home: GeoPoint::new(36.2, 44.0).unwrap(),
                lmp_date: registered - Duration::weeks(44),
                language: Language::En,
                care_center_id: "C1".into(),
            })
            .unwrap();
        let batch = svc.weekly_advice_batch(registered + Duration::weeks(1)).unwrap();
        assert!(batch.notifications.is_empty());
        assert_eq!(batch.flagged, vec![p.patient_id]);
    }
}
