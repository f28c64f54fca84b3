//! Bulk ingestion of reference data: facilities, doctors, units, operator
//! accounts and the advice catalog.
//!
//! Every loader is an idempotent upsert. Invalid rows are reported with
//! their line number and skipped; valid rows still ingest.

use std::io::Read;

use serde::Deserialize;

use super::password::{self, PasswordHasher};
use super::*;
use crate::care::{trimester_of, MAX_GESTATION_WEEK};
use crate::geo::{validate_point, FacilityKind};

/// Starter advice catalog: one placeholder entry per band and language.
pub const DEFAULT_ADVICE: &str = include_str!("../../data/advice.tsv");

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowError {
    /// 1-based line number in the source file.
    pub line: u64,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SeedReport {
    pub ingested: usize,
    pub errors: Vec<RowError>,
}

impl SeedReport {
    pub fn is_clean(&self) -> bool {
        self.errors.is_empty()
    }
}

/// One facility row, as read from the seed file.
#[derive(Debug, Clone, Deserialize)]
pub struct FacilityRow {
    pub facility_id: String,
    pub kind: String,
    pub name: String,
    pub lat: String,
    pub lon: String,
    pub contact_phone: String,
}

impl FacilityRow {
    fn validate(self) -> Result<Facility, String> {
        if self.facility_id.trim().is_empty() {
            return Err("empty facility_id".into());
        }
        let kind: FacilityKind = self.kind.trim().parse()?;
        if self.name.trim().is_empty() {
            return Err("empty name".into());
        }
        let location = validate_point(&self.lat, &self.lon).map_err(|e| e.to_string())?;
        if !protocol::is_valid_phone(self.contact_phone.trim()) {
            return Err(format!("invalid contact_phone {:?}", self.contact_phone));
        }
        Ok(Facility {
            facility_id: FacilityId::new(self.facility_id.trim()),
            kind,
            name: self.name.trim().to_string(),
            location,
            contact_phone: self.contact_phone.trim().to_string(),
        })
    }
}

#[derive(Debug, Deserialize)]
struct DoctorRow {
    doctor_id: String,
    username: String,
    password: String,
    hospital_id: String,
    phone: String,
}

#[derive(Debug, Deserialize)]
struct UnitRow {
    unit_id: String,
    kind: String,
    lat: String,
    lon: String,
    #[serde(default)]
    status: Option<String>,
}

#[derive(Debug, Deserialize)]
struct AccountRow {
    username: String,
    password: String,
    role: String,
}

/// Reads `source` as CSV with headers and hands each record to `each`.
fn for_each_csv<T, F>(source: impl Read, delimiter: u8, mut each: F) -> Result<SeedReport, RegistryError>
where
    T: serde::de::DeserializeOwned,
    F: FnMut(T) -> Result<Result<(), String>, RegistryError>,
{
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .trim(csv::Trim::Headers)
        .comment(Some(b'#'))
        .flexible(true)
        .from_reader(source);
    let headers = reader
        .headers()
        .map_err(|e| RegistryError::invalid("header", e.to_string()))?
        .clone();
    let mut report = SeedReport::default();
    let mut record = csv::StringRecord::new();
    loop {
        match reader.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                report.errors.push(RowError {
                    line,
                    message: e.to_string(),
                });
                continue;
            }
        }
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let outcome = match record.deserialize::<T>(Some(&headers)) {
            Ok(row) => each(row)?,
            Err(e) => Err(e.to_string()),
        };
        match outcome {
            Ok(()) => report.ingested += 1,
            Err(message) => report.errors.push(RowError { line, message }),
        }
    }
    Ok(report)
}

/// Turns a per-row store failure into a row error; other failures abort.
fn row_outcome(res: Result<(), RegistryError>) -> Result<Result<(), String>, RegistryError> {
    match res {
        Ok(()) => Ok(Ok(())),
        Err(RegistryError::Store(StoreError::Io(e))) => Err(RegistryError::Store(StoreError::Io(e))),
        Err(e) => Ok(Err(e.to_string())),
    }
}

impl Registry {
    /// Upserts already-parsed facility rows. Row numbers in errors are
    /// 1-based positions in `rows`.
    pub fn seed_facilities(&self, rows: Vec<FacilityRow>) -> Result<SeedReport, RegistryError> {
        let mut report = SeedReport::default();
        for (i, row) in rows.into_iter().enumerate() {
            match row.validate() {
                Ok(f) => {
                    self.write(|tx| {
                        tx.put(f);
                        Ok::<_, RegistryError>(())
                    })?;
                    report.ingested += 1;
                }
                Err(message) => report.errors.push(RowError {
                    line: i as u64 + 1,
                    message,
                }),
            }
        }
        Ok(report)
    }

    /// Facility seed file: `facility_id,kind,name,lat,lon,contact_phone`.
    pub fn seed_facilities_csv(&self, source: impl Read) -> Result<SeedReport, RegistryError> {
        for_each_csv(source, b',', |row: FacilityRow| {
            let f = match row.validate() {
                Ok(f) => f,
                Err(e) => return Ok(Err(e)),
            };
            row_outcome(self.write(|tx| {
                tx.put(f);
                Ok(())
            }))
        })
    }

    /// Doctor seed file: `doctor_id,username,password,hospital_id,phone`.
    pub fn seed_doctors_csv(&self, source: impl Read, hasher: &PasswordHasher) -> Result<SeedReport, RegistryError> {
        for_each_csv(source, b',', |row: DoctorRow| {
            let id = row.doctor_id.trim().to_string();
            let username = row.username.trim().to_string();
            if id.is_empty() || username.is_empty() || row.password.is_empty() {
                return Ok(Err("doctor_id, username and password are required".into()));
            }
            if !protocol::is_valid_phone(row.phone.trim()) {
                return Ok(Err(format!("invalid phone {:?}", row.phone)));
            }
            row_outcome(self.write(|tx| {
                let existing: Option<DoctorAccount> = tx.get(&id);
                let password_hash = match existing {
                    Some(d) if password::verify(&d.password_hash, &row.password) => d.password_hash,
                    _ => hasher.hash(&row.password),
                };
                tx.put(DoctorAccount {
                    doctor_id: DoctorId::new(id.clone()),
                    username: username.clone(),
                    password_hash,
                    hospital_id: FacilityId::new(row.hospital_id.trim()),
                    phone: row.phone.trim().to_string(),
                });
                Ok(())
            }))
        })
    }

    /// Unit seed file: `unit_id,kind,lat,lon[,status]`. A unit that is
    /// currently dispatched keeps that status.
    pub fn seed_units_csv(&self, source: impl Read) -> Result<SeedReport, RegistryError> {
        for_each_csv(source, b',', |row: UnitRow| {
            let id = row.unit_id.trim().to_string();
            if id.is_empty() {
                return Ok(Err("empty unit_id".into()));
            }
            let kind: UnitKind = match row.kind.trim().parse() {
                Ok(k) => k,
                Err(e) => return Ok(Err(e)),
            };
            let base = match validate_point(&row.lat, &row.lon) {
                Ok(p) => p,
                Err(e) => return Ok(Err(e.to_string())),
            };
            let status: UnitStatus = match row.status.as_deref().map(str::trim) {
                None | Some("") => UnitStatus::Available,
                Some(s) => match s.parse() {
                    Ok(st) => st,
                    Err(e) => return Ok(Err(e)),
                },
            };
            row_outcome(self.write(|tx| {
                let current: Option<SuccoringUnit> = tx.get(&id);
                let status = match current {
                    Some(u) if u.status == UnitStatus::Dispatched => UnitStatus::Dispatched,
                    _ if status == UnitStatus::Dispatched => {
                        return Err(RegistryError::invalid("status", "units cannot be seeded as dispatched"))
                    }
                    _ => status,
                };
                tx.put(SuccoringUnit {
                    unit_id: UnitId::new(id.clone()),
                    kind,
                    base,
                    status,
                });
                Ok(())
            }))
        })
    }

    /// Operator/admin seed file: `username,password,role`.
    pub fn seed_accounts_csv(&self, source: impl Read, hasher: &PasswordHasher) -> Result<SeedReport, RegistryError> {
        for_each_csv(source, b',', |row: AccountRow| {
            let username = row.username.trim().to_string();
            if username.is_empty() || row.password.is_empty() {
                return Ok(Err("username and password are required".into()));
            }
            let role: Role = match row.role.trim().parse() {
                Ok(r) => r,
                Err(e) => return Ok(Err(e)),
            };
            row_outcome(self.write(|tx| {
                let existing: Option<AdminAccount> = tx.get(&username);
                let password_hash = match existing {
                    Some(a) if password::verify(&a.password_hash, &row.password) => a.password_hash,
                    _ => hasher.hash(&row.password),
                };
                tx.put(AdminAccount {
                    username: username.clone(),
                    password_hash,
                    role,
                });
                Ok(())
            }))
        })
    }

    /// Advice catalog: tab separated `trimester, week_min, week_max, lang,
    /// text`, optional header. Entries are keyed by (trimester, band, lang).
    pub fn seed_advice_tsv(&self, source: impl Read) -> Result<SeedReport, RegistryError> {
        let mut text = String::new();
        let mut source = source;
        source
            .read_to_string(&mut text)
            .map_err(|e| RegistryError::Store(StoreError::Io(e)))?;
        let mut report = SeedReport::default();
        for (i, line) in text.lines().enumerate() {
            let line_no = i as u64 + 1;
            if line.trim().is_empty() || line.starts_with('#') || (i == 0 && line.starts_with("trimester")) {
                continue;
            }
            let entry = match parse_advice_line(line) {
                Ok(e) => e,
                Err(message) => {
                    report.errors.push(RowError { line: line_no, message });
                    continue;
                }
            };
            let res = self.write(|tx| {
                let existing = tx
                    .base()
                    .advice_catalog
                    .values()
                    .chain(tx.staged::<AdviceEntry>())
                    .find(|a| {
                        a.trimester == entry.trimester
                            && a.week_min == entry.week_min
                            && a.week_max == entry.week_max
                            && a.language == entry.language
                    })
                    .map(|a| a.advice_id.clone());
                let advice_id = match existing {
                    Some(id) => id,
                    None => AdviceId::new(tx.next_id(AdviceEntry::TABLE)),
                };
                tx.put(AdviceEntry { advice_id, ..entry });
                Ok(())
            });
            match row_outcome(res)? {
                Ok(()) => report.ingested += 1,
                Err(message) => report.errors.push(RowError { line: line_no, message }),
            }
        }
        Ok(report)
    }
}

fn parse_advice_line(line: &str) -> Result<AdviceEntry, String> {
    let cols: Vec<&str> = line.splitn(5, '\t').collect();
    let [trimester, week_min, week_max, lang, text] = cols[..] else {
        return Err(format!("expected 5 tab-separated columns, got {}", cols.len()));
    };
    let trimester: u8 = trimester
        .trim()
        .parse()
        .map_err(|_| format!("bad trimester {trimester:?}"))?;
    let week_min: u32 = week_min
        .trim()
        .parse()
        .map_err(|_| format!("bad week_min {week_min:?}"))?;
    let week_max: u32 = week_max
        .trim()
        .parse()
        .map_err(|_| format!("bad week_max {week_max:?}"))?;
    let language: Language = lang.trim().parse()?;
    if !(1..=3).contains(&trimester) {
        return Err(format!("trimester {trimester} not in 1..=3"));
    }
    if week_min > week_max || week_max > MAX_GESTATION_WEEK {
        return Err(format!("bad week band {week_min}..={week_max}"));
    }
    let band = (trimester_of(week_min), trimester_of(week_max));
    if band != (Ok(trimester), Ok(trimester)) {
        return Err(format!(
            "weeks {week_min}..={week_max} are not all in trimester {trimester}"
        ));
    }
    if text.trim().is_empty() {
        return Err("empty advice text".into());
    }
    Ok(AdviceEntry {
        advice_id: AdviceId::new(""),
        trimester,
        week_min,
        week_max,
        language,
        text: text.trim().to_string(),
    })
}
