//! Embedded transactional store.
//!
//! State lives in memory behind a reader/writer lock. Every commit is first
//! appended to `wal.ndjson` as one JSON array line and fsynced, then applied
//! in memory, so a torn final line drops a whole commit. Opening a data
//! directory replays `snapshot.ndjson` followed by the WAL, writes a fresh
//! snapshot and truncates the WAL.
//!
//! Writers are serialized through one gate; readers never wait on disk I/O.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use parking_lot::{Mutex, RwLock, RwLockReadGuard};
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use super::model::*;
use crate::clock::SharedClock;
use crate::geo::FacilityKind;
use crate::ids::*;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("storage i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt record at {file}:{line}: {reason}")]
    Corrupt { file: String, line: usize, reason: String },
    #[error("referential integrity: {0}")]
    Integrity(String),
    #[error("uniqueness violated: {0}")]
    Unique(String),
    #[error("append-only row modified: {0}")]
    Immutable(String),
    #[error("data directory {0} is locked by another process")]
    Locked(PathBuf),
}

/// One stored row, tagged with its table name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "table", content = "row", rename_all = "snake_case")]
pub enum Row {
    Facilities(Facility),
    AdminAccounts(AdminAccount),
    Doctors(DoctorAccount),
    Units(SuccoringUnit),
    AdviceCatalog(AdviceEntry),
    Patients(PatientRecord),
    Appointments(Appointment),
    HelpRequests(HelpRequest),
    PatientFiles(PatientFile),
    Notifications(NotificationLog),
}

/// Typed access to one table.
pub trait Record: Clone + Serialize + DeserializeOwned {
    const TABLE: &'static str;
    fn key(&self) -> &str;
    fn table(t: &Tables) -> &BTreeMap<String, Self>;
    fn into_row(self) -> Row;
    fn from_row(row: &Row) -> Option<&Self>;
}

macro_rules! record {
    ($ty:ty, $variant:ident, $field:ident, $name:literal, |$r:ident| $key:expr) => {
        impl Record for $ty {
            const TABLE: &'static str = $name;

            fn key(&self) -> &str {
                let $r = self;
                $key
            }

            fn table(t: &Tables) -> &BTreeMap<String, Self> {
                &t.$field
            }

            fn into_row(self) -> Row {
                Row::$variant(self)
            }

            fn from_row(row: &Row) -> Option<&Self> {
                match row {
                    Row::$variant(v) => Some(v),
                    _ => None,
                }
            }
        }
    };
}

record!(Facility, Facilities, facilities, "facilities", |r| r
    .facility_id
    .as_str());
record!(AdminAccount, AdminAccounts, admin_accounts, "admin_accounts", |r| &r
    .username);
record!(DoctorAccount, Doctors, doctors, "doctors", |r| r.doctor_id.as_str());
record!(SuccoringUnit, Units, units, "units", |r| r.unit_id.as_str());
record!(AdviceEntry, AdviceCatalog, advice_catalog, "advice_catalog", |r| r
    .advice_id
    .as_str());
record!(PatientRecord, Patients, patients, "patients", |r| r.patient_id.as_str());
record!(Appointment, Appointments, appointments, "appointments", |r| r
    .appointment_id
    .as_str());
record!(HelpRequest, HelpRequests, help_requests, "help_requests", |r| r
    .request_id
    .as_str());
record!(PatientFile, PatientFiles, patient_files, "patient_files", |r| r
    .file_id
    .as_str());
record!(NotificationLog, Notifications, notifications, "notifications", |r| r
    .notification_id
    .as_str());

impl Row {
    pub fn table(&self) -> &'static str {
        match self {
            Row::Facilities(_) => Facility::TABLE,
            Row::AdminAccounts(_) => AdminAccount::TABLE,
            Row::Doctors(_) => DoctorAccount::TABLE,
            Row::Units(_) => SuccoringUnit::TABLE,
            Row::AdviceCatalog(_) => AdviceEntry::TABLE,
            Row::Patients(_) => PatientRecord::TABLE,
            Row::Appointments(_) => Appointment::TABLE,
            Row::HelpRequests(_) => HelpRequest::TABLE,
            Row::PatientFiles(_) => PatientFile::TABLE,
            Row::Notifications(_) => NotificationLog::TABLE,
        }
    }

    pub fn key(&self) -> &str {
        match self {
            Row::Facilities(r) => r.key(),
            Row::AdminAccounts(r) => r.key(),
            Row::Doctors(r) => r.key(),
            Row::Units(r) => r.key(),
            Row::AdviceCatalog(r) => r.key(),
            Row::Patients(r) => r.key(),
            Row::Appointments(r) => r.key(),
            Row::HelpRequests(r) => r.key(),
            Row::PatientFiles(r) => r.key(),
            Row::Notifications(r) => r.key(),
        }
    }
}

/// The in-memory image of all tables plus secondary indexes.
#[derive(Debug, Default, Clone)]
pub struct Tables {
    pub facilities: BTreeMap<String, Facility>,
    pub admin_accounts: BTreeMap<String, AdminAccount>,
    pub doctors: BTreeMap<String, DoctorAccount>,
    pub units: BTreeMap<String, SuccoringUnit>,
    pub advice_catalog: BTreeMap<String, AdviceEntry>,
    pub patients: BTreeMap<String, PatientRecord>,
    pub appointments: BTreeMap<String, Appointment>,
    pub help_requests: BTreeMap<String, HelpRequest>,
    pub patient_files: BTreeMap<String, PatientFile>,
    pub notifications: BTreeMap<String, NotificationLog>,
    active_phones: HashMap<String, PatientId>,
    help_keys: HashMap<(PatientId, DateTime<Utc>), RequestId>,
    counters: HashMap<&'static str, u64>,
}

const SCHEMES: [(&str, IdScheme); 6] = [
    (PatientRecord::TABLE, IdScheme::PATIENT),
    (HelpRequest::TABLE, IdScheme::REQUEST),
    (Appointment::TABLE, IdScheme::APPOINTMENT),
    (AdviceEntry::TABLE, IdScheme::ADVICE),
    (NotificationLog::TABLE, IdScheme::NOTIFICATION),
    (PatientFile::TABLE, IdScheme::FILE),
];

impl Tables {
    pub fn get<T: Record>(&self, key: &str) -> Option<&T> {
        T::table(self).get(key)
    }

    pub fn active_patient_by_phone(&self, phone: &str) -> Option<&PatientRecord> {
        self.active_phones
            .get(phone)
            .and_then(|id| self.patients.get(id.as_str()))
    }

    pub fn help_request_by_client_key(&self, patient: &PatientId, client_time: DateTime<Utc>) -> Option<&HelpRequest> {
        self.help_keys
            .get(&(patient.clone(), client_time))
            .and_then(|id| self.help_requests.get(id.as_str()))
    }

    fn counter(&self, table: &'static str) -> u64 {
        self.counters.get(table).copied().unwrap_or(0)
    }

    fn bump_counter(&mut self, table: &'static str, key: &str) {
        if let Some((_, scheme)) = SCHEMES.iter().find(|(t, _)| *t == table) {
            if let Some(n) = scheme.parse(key) {
                let c = self.counters.entry(table).or_insert(0);
                *c = (*c).max(n);
            }
        }
    }

    fn apply(&mut self, row: Row) {
        let table = row.table();
        let key = row.key().to_string();
        self.bump_counter(table, &key);
        match row {
            Row::Facilities(r) => {
                self.facilities.insert(key, r);
            }
            Row::AdminAccounts(r) => {
                self.admin_accounts.insert(key, r);
            }
            Row::Doctors(r) => {
                self.doctors.insert(key, r);
            }
            Row::Units(r) => {
                self.units.insert(key, r);
            }
            Row::AdviceCatalog(r) => {
                self.advice_catalog.insert(key, r);
            }
            Row::Patients(r) => {
                if let Some(old) = self.patients.get(&key) {
                    if self.active_phones.get(&old.phone) == Some(&old.patient_id) {
                        self.active_phones.remove(&old.phone);
                    }
                }
                if r.active {
                    self.active_phones.insert(r.phone.clone(), r.patient_id.clone());
                }
                self.patients.insert(key, r);
            }
            Row::Appointments(r) => {
                self.appointments.insert(key, r);
            }
            Row::HelpRequests(r) => {
                self.help_keys
                    .insert((r.patient_id.clone(), r.client_time), r.request_id.clone());
                self.help_requests.insert(key, r);
            }
            Row::PatientFiles(r) => {
                self.patient_files.insert(key, r);
            }
            Row::Notifications(r) => {
                self.notifications.insert(key, r);
            }
        }
    }

    /// All rows in dump order: tables in dependency order, keys ascending.
    pub fn rows(&self) -> impl Iterator<Item = Row> + '_ {
        fn each<T: Record>(m: &BTreeMap<String, T>) -> impl Iterator<Item = Row> + '_ {
            m.values().cloned().map(T::into_row)
        }
        each(&self.facilities)
            .chain(each(&self.admin_accounts))
            .chain(each(&self.doctors))
            .chain(each(&self.units))
            .chain(each(&self.advice_catalog))
            .chain(each(&self.patients))
            .chain(each(&self.appointments))
            .chain(each(&self.help_requests))
            .chain(each(&self.patient_files))
            .chain(each(&self.notifications))
    }
}

/// Staged writes over a consistent view of the tables.
pub struct Txn<'a> {
    base: &'a Tables,
    staged: Vec<Row>,
    index: HashMap<(&'static str, String), usize>,
    counters: HashMap<&'static str, u64>,
    now: DateTime<Utc>,
}

impl<'a> Txn<'a> {
    fn new(base: &'a Tables, now: DateTime<Utc>) -> Self {
        Txn {
            base,
            staged: Vec::new(),
            index: HashMap::new(),
            counters: HashMap::new(),
            now,
        }
    }

    /// Server clock reading taken when the transaction began.
    pub fn now(&self) -> DateTime<Utc> {
        self.now
    }

    /// Committed state, without this transaction's staged rows.
    pub fn base(&self) -> &Tables {
        self.base
    }

    pub fn get<T: Record>(&self, key: &str) -> Option<T> {
        if let Some(&i) = self.index.get(&(T::TABLE, key.to_string())) {
            return T::from_row(&self.staged[i]).cloned();
        }
        self.base.get::<T>(key).cloned()
    }

    pub fn exists<T: Record>(&self, key: &str) -> bool {
        self.index.contains_key(&(T::TABLE, key.to_string())) || self.base.get::<T>(key).is_some()
    }

    pub fn put<T: Record>(&mut self, record: T) {
        let slot = (T::TABLE, record.key().to_string());
        let row = record.into_row();
        match self.index.get(&slot) {
            Some(&i) => self.staged[i] = row,
            None => {
                self.index.insert(slot, self.staged.len());
                self.staged.push(row);
            }
        }
    }

    /// Rows of one table staged so far, in insertion order.
    pub fn staged<T: Record + 'a>(&self) -> impl Iterator<Item = &T> + '_ {
        self.staged.iter().filter_map(T::from_row)
    }

    pub fn next_id(&mut self, table: &'static str) -> String {
        let scheme = SCHEMES
            .iter()
            .find(|(t, _)| *t == table)
            .map(|(_, s)| *s)
            .unwrap_or_else(|| panic!("table {table} has no generated ids"));
        let base = self.base.counter(table);
        let c = self.counters.entry(table).or_insert(base);
        *c += 1;
        scheme.format(*c)
    }

    fn into_rows(self) -> Vec<Row> {
        self.staged
    }
}

/// Committed state overlaid with the rows earlier in the batch being checked.
struct Overlay<'a> {
    base: &'a Tables,
    prior: &'a [Row],
}

impl<'a> Overlay<'a> {
    fn latest<T: Record>(&self, key: &str) -> Option<&'a T> {
        self.prior
            .iter()
            .rev()
            .filter_map(T::from_row)
            .find(|r| r.key() == key)
            .or_else(|| self.base.get::<T>(key))
    }

    fn has<T: Record>(&self, key: &str) -> bool {
        self.latest::<T>(key).is_some()
    }

    fn active_phone_owner(&self, phone: &str) -> Option<PatientId> {
        // Later rows for the same patient supersede earlier ones.
        let mut owner = self.base.active_phones.get(phone).cloned();
        for p in self.prior.iter().filter_map(PatientRecord::from_row) {
            if p.phone == phone && p.active {
                owner = Some(p.patient_id.clone());
            } else if owner.as_ref() == Some(&p.patient_id) {
                owner = None;
            }
        }
        owner
    }

    fn username_owner(&self, name: &str) -> Option<String> {
        if let Some(a) = self.latest::<AdminAccount>(name) {
            return Some(a.username.clone());
        }
        let staged = self.prior.iter().filter_map(DoctorAccount::from_row);
        staged
            .chain(self.base.doctors.values())
            .find(|d| d.username == name)
            .map(|d| d.doctor_id.to_string())
    }
}

/// Checks one row against committed state plus earlier rows of the same batch.
fn check_row(view: &Overlay<'_>, row: &Row) -> Result<(), StoreError> {
    let facility_of = |id: &FacilityId, kind: FacilityKind, what: &str| match view.latest::<Facility>(id.as_str()) {
        Some(f) if f.kind == kind => Ok(()),
        Some(f) => Err(StoreError::Integrity(format!(
            "{what} {id} is a {}, expected {kind}",
            f.kind
        ))),
        None => Err(StoreError::Integrity(format!("{what} {id} does not exist"))),
    };
    let exists = |present: bool, what: &str, id: &str| {
        if present {
            Ok(())
        } else {
            Err(StoreError::Integrity(format!("{what} {id} does not exist")))
        }
    };
    match row {
        Row::Facilities(_) | Row::Units(_) | Row::AdviceCatalog(_) => Ok(()),
        Row::AdminAccounts(a) => match view.username_owner(&a.username) {
            Some(owner) if owner != a.username => Err(StoreError::Unique(format!("username {}", a.username))),
            _ => Ok(()),
        },
        Row::Doctors(d) => {
            facility_of(&d.hospital_id, FacilityKind::Hospital, "hospital")?;
            match view.username_owner(&d.username) {
                Some(owner) if owner != d.doctor_id.as_str() => {
                    Err(StoreError::Unique(format!("username {}", d.username)))
                }
                _ => Ok(()),
            }
        }
        Row::Patients(p) => {
            facility_of(&p.care_center_id, FacilityKind::CareCenter, "care center")?;
            if p.active {
                if let Some(other) = view.active_phone_owner(&p.phone) {
                    if other != p.patient_id {
                        return Err(StoreError::Unique(format!("phone {}", p.phone)));
                    }
                }
            }
            Ok(())
        }
        Row::Appointments(a) => {
            exists(
                view.has::<PatientRecord>(a.patient_id.as_str()),
                "patient",
                a.patient_id.as_str(),
            )?;
            facility_of(&a.facility_id, FacilityKind::CareCenter, "care center")
        }
        Row::HelpRequests(r) => {
            exists(
                view.has::<PatientRecord>(r.patient_id.as_str()),
                "patient",
                r.patient_id.as_str(),
            )?;
            if let Some(h) = &r.hospital_id {
                facility_of(h, FacilityKind::Hospital, "hospital")?;
            }
            if let Some(u) = &r.unit_id {
                exists(view.has::<SuccoringUnit>(u.as_str()), "unit", u.as_str())?;
            }
            Ok(())
        }
        Row::PatientFiles(f) => {
            exists(
                view.has::<PatientRecord>(f.patient_id.as_str()),
                "patient",
                f.patient_id.as_str(),
            )?;
            exists(
                view.has::<DoctorAccount>(f.doctor_id.as_str()),
                "doctor",
                f.doctor_id.as_str(),
            )?;
            exists(
                view.has::<HelpRequest>(f.request_id.as_str()),
                "help request",
                f.request_id.as_str(),
            )
        }
        Row::Notifications(n) => {
            if let Some(old) = view.latest::<NotificationLog>(n.notification_id.as_str()) {
                let same_body = old.recipient_phone == n.recipient_phone
                    && old.payload == n.payload
                    && old.template_id == n.template_id
                    && old.created_at == n.created_at;
                let legal = old.status == n.status
                    || (old.status == DeliveryStatus::Queued && n.status != DeliveryStatus::Queued);
                if !same_body || !legal {
                    return Err(StoreError::Immutable(n.notification_id.to_string()));
                }
            }
            if n.sent_at.is_some() != (n.status == DeliveryStatus::Sent) {
                return Err(StoreError::Integrity(format!(
                    "notification {}: sent_at must be set iff status is sent",
                    n.notification_id
                )));
            }
            if let Some(r) = &n.request_id {
                exists(view.has::<HelpRequest>(r.as_str()), "help request", r.as_str())?;
            }
            if let Some(p) = &n.patient_id {
                exists(view.has::<PatientRecord>(p.as_str()), "patient", p.as_str())?;
            }
            Ok(())
        }
    }
}

struct Wal {
    dir: PathBuf,
    file: File,
    fsync: bool,
    _lock: File,
}

impl Wal {
    fn append(&mut self, rows: &[Row]) -> Result<(), StoreError> {
        let mut buf = Vec::with_capacity(rows.len() * 256);
        serde_json::to_writer(&mut buf, rows).expect("rows always serialize");
        buf.push(b'\n');
        self.file.write_all(&buf)?;
        if self.fsync {
            self.file.sync_data()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct StoreOptions {
    /// fsync the WAL on every commit.
    pub fsync: bool,
}

impl Default for StoreOptions {
    fn default() -> Self {
        StoreOptions { fsync: true }
    }
}

const SNAPSHOT: &str = "snapshot.ndjson";
const WAL: &str = "wal.ndjson";
const LOCK: &str = "LOCK";

/// The system of record.
pub struct Registry {
    tables: RwLock<Tables>,
    gate: Mutex<Option<Wal>>,
    clock: SharedClock,
}

impl Registry {
    /// A registry with no backing files.
    pub fn in_memory(clock: SharedClock) -> Self {
        Registry {
            tables: RwLock::new(Tables::default()),
            gate: Mutex::new(None),
            clock,
        }
    }

    /// Opens (or creates) a data directory, recovering committed state.
    pub fn open(dir: impl AsRef<Path>, clock: SharedClock, opts: StoreOptions) -> Result<Self, StoreError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        let lock = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(dir.join(LOCK))?;
        if lock.try_lock().is_err() {
            return Err(StoreError::Locked(dir));
        }

        let mut tables = Tables::default();
        let snapshot = dir.join(SNAPSHOT);
        if snapshot.exists() {
            for row in read_rows(&snapshot)? {
                tables.apply(row);
            }
        }
        let wal_path = dir.join(WAL);
        if wal_path.exists() {
            // A torn final line is an interrupted commit; it never happened.
            for row in read_commits(&wal_path)? {
                tables.apply(row);
            }
        }

        write_snapshot(&dir, &tables)?;
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(true)
            .open(&wal_path)?;
        file.sync_all()?;

        Ok(Registry {
            tables: RwLock::new(tables),
            gate: Mutex::new(Some(Wal {
                dir,
                file,
                fsync: opts.fsync,
                _lock: lock,
            })),
            clock,
        })
    }

    pub fn clock(&self) -> &SharedClock {
        &self.clock
    }

    pub fn now(&self) -> DateTime<Utc> {
        self.clock.now()
    }

    /// Shared read access to committed state.
    pub fn read(&self) -> RwLockReadGuard<'_, Tables> {
        self.tables.read()
    }

    /// Runs `f` as a transaction. Staged rows are validated, logged and
    /// applied atomically if `f` succeeds; nothing is written if it fails.
    pub fn write<R, E>(&self, f: impl FnOnce(&mut Txn<'_>) -> Result<R, E>) -> Result<R, E>
    where
        E: From<StoreError>,
    {
        let mut gate = self.gate.lock();
        let (result, rows) = {
            let base = self.tables.read();
            let mut txn = Txn::new(&base, self.clock.now());
            let result = f(&mut txn)?;
            let rows = txn.into_rows();
            for (i, row) in rows.iter().enumerate() {
                let view = Overlay {
                    base: &base,
                    prior: &rows[..i],
                };
                check_row(&view, row)?;
            }
            (result, rows)
        };
        if rows.is_empty() {
            return Ok(result);
        }
        if let Some(wal) = gate.as_mut() {
            wal.append(&rows)?;
        }
        let mut tables = self.tables.write();
        for row in rows {
            tables.apply(row);
        }
        Ok(result)
    }

    /// Writes every row as one JSON object per line, in stable order.
    pub fn dump(&self, out: impl Write) -> Result<(), StoreError> {
        let tables = self.tables.read();
        write_rows(out, tables.rows())
    }

    /// Loads dump lines into this registry in a single transaction.
    pub fn restore(&self, input: impl BufRead) -> Result<usize, StoreError> {
        let rows: Vec<Row> = parse_lines(input, "<restore>", false)?;
        let n = rows.len();
        self.write(|tx| {
            for row in rows {
                put_row(tx, row);
            }
            Ok::<_, StoreError>(())
        })?;
        Ok(n)
    }

    /// Folds the WAL into a fresh snapshot.
    pub fn checkpoint(&self) -> Result<(), StoreError> {
        let mut gate = self.gate.lock();
        if let Some(wal) = gate.as_mut() {
            let tables = self.tables.read();
            write_snapshot(&wal.dir, &tables)?;
            wal.file.set_len(0)?;
            wal.file.sync_all()?;
        }
        Ok(())
    }
}

fn put_row(tx: &mut Txn<'_>, row: Row) {
    match row {
        Row::Facilities(r) => tx.put(r),
        Row::AdminAccounts(r) => tx.put(r),
        Row::Doctors(r) => tx.put(r),
        Row::Units(r) => tx.put(r),
        Row::AdviceCatalog(r) => tx.put(r),
        Row::Patients(r) => tx.put(r),
        Row::Appointments(r) => tx.put(r),
        Row::HelpRequests(r) => tx.put(r),
        Row::PatientFiles(r) => tx.put(r),
        Row::Notifications(r) => tx.put(r),
    }
}

fn write_rows(out: impl Write, rows: impl Iterator<Item = Row>) -> Result<(), StoreError> {
    let mut out = BufWriter::new(out);
    for row in rows {
        serde_json::to_writer(&mut out, &row).expect("rows always serialize");
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

fn write_snapshot(dir: &Path, tables: &Tables) -> Result<(), StoreError> {
    let tmp = dir.join(format!("{SNAPSHOT}.tmp"));
    {
        let file = File::create(&tmp)?;
        let mut w = BufWriter::new(&file);
        write_rows(&mut w, tables.rows())?;
        drop(w);
        file.sync_all()?;
    }
    fs::rename(&tmp, dir.join(SNAPSHOT))?;
    if let Ok(d) = File::open(dir) {
        let _ = d.sync_all();
    }
    Ok(())
}

fn read_rows(path: &Path) -> Result<Vec<Row>, StoreError> {
    let file = File::open(path)?;
    parse_lines(BufReader::new(file), &path.display().to_string(), false)
}

/// WAL lines are whole commits.
fn read_commits(path: &Path) -> Result<Vec<Row>, StoreError> {
    let file = File::open(path)?;
    let commits: Vec<Vec<Row>> = parse_lines(BufReader::new(file), &path.display().to_string(), true)?;
    Ok(commits.into_iter().flatten().collect())
}

fn parse_lines<T: DeserializeOwned>(
    input: impl BufRead,
    name: &str,
    tolerate_torn_tail: bool,
) -> Result<Vec<T>, StoreError> {
    let lines: Vec<String> = input.lines().collect::<Result<_, _>>()?;
    let mut rows = Vec::with_capacity(lines.len());
    let last = lines.len();
    for (i, line) in lines.into_iter().enumerate() {
        if line.is_empty() {
            continue;
        }
        match serde_json::from_str::<T>(&line) {
            Ok(row) => rows.push(row),
            Err(e) if tolerate_torn_tail && i + 1 == last => {
                warn!(file = name, line = i + 1, error = %e, "dropping torn wal tail");
            }
            Err(e) => {
                return Err(StoreError::Corrupt {
                    file: name.to_string(),
                    line: i + 1,
                    reason: e.to_string(),
                })
            }
        }
    }
    Ok(rows)
}
