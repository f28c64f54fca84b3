use std::fs::OpenOptions;
use std::path::Path;
use std::sync::Arc;

use chrono::{Duration, TimeZone, Utc};
use proptest::prelude::*;

use pregcare_core::api::{Ack, Ingress};
use pregcare_core::care::{CareConfig, CareService};
use pregcare_core::dispatch::{DispatchConfig, Dispatcher};
use pregcare_core::protocol::TemplateCatalog;
use pregcare_core::registry::password::PasswordHasher;
use pregcare_core::registry::{Registry, StoreError, StoreOptions};
use pregcare_core::{Clock, ManualClock, PatientId, RequestId, UnitId};

const FACILITIES: &str = "facility_id,kind,name,lat,lon,contact_phone
H1,hospital,Near,36.21,44.035,+9647500000010
H2,hospital,Far,36.566,44.0307,+9647500000011
C1,care_center,Care,36.2152,44.0307,+9647500000012
";
const DOCTORS: &str = "doctor_id,username,password,hospital_id,phone
D1,doc1,pw1,H1,+9647501110001
";
const UNITS: &str = "unit_id,kind,lat,lon
U1,car,36.19,44.01
U2,helicopter,36.3,44.1
";

fn clock() -> ManualClock {
    ManualClock::new(Utc.with_ymd_and_hms(2014, 1, 30, 10, 0, 0).unwrap())
}

fn open(dir: &Path, clock: &ManualClock) -> Arc<Registry> {
    Arc::new(Registry::open(dir, Arc::new(clock.clone()), StoreOptions { fsync: false }).unwrap())
}

fn seed(registry: &Registry) {
    registry.seed_facilities_csv(FACILITIES.as_bytes()).unwrap();
    registry
        .seed_doctors_csv(DOCTORS.as_bytes(), &PasswordHasher::new(10))
        .unwrap();
    registry.seed_units_csv(UNITS.as_bytes()).unwrap();
}

fn dump(registry: &Registry) -> Vec<u8> {
    let mut out = Vec::new();
    registry.dump(&mut out).unwrap();
    out
}

#[derive(Debug, Clone)]
enum Op {
    Register(u16),
    Help { patient: usize, client_offset_s: i64 },
    Assign { request: usize, unit: usize },
    Complete(usize),
    Cancel(usize),
    Tick(i64),
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        (0u16..40).prop_map(Op::Register),
        (0usize..8, 0i64..600).prop_map(|(patient, client_offset_s)| Op::Help {
            patient,
            client_offset_s
        }),
        (0usize..8, 0usize..2).prop_map(|(request, unit)| Op::Assign { request, unit }),
        (0usize..8).prop_map(Op::Complete),
        (0usize..8).prop_map(Op::Cancel),
        (1i64..400).prop_map(Op::Tick),
    ]
}

struct World {
    registry: Arc<Registry>,
    ingress: Ingress,
    clock: ManualClock,
    patients: Vec<PatientId>,
    requests: Vec<RequestId>,
}

impl World {
    fn new(registry: Arc<Registry>, clock: ManualClock) -> Self {
        let templates = Arc::new(TemplateCatalog::default());
        let ingress = Ingress {
            care: Arc::new(CareService::new(
                registry.clone(),
                templates.clone(),
                CareConfig::default(),
            )),
            dispatcher: Arc::new(Dispatcher::new(registry.clone(), templates, DispatchConfig::default())),
        };
        World {
            registry,
            ingress,
            clock,
            patients: Vec::new(),
            requests: Vec::new(),
        }
    }

    // Failures are part of the workload; only committed effects matter here.
    fn apply(&mut self, op: &Op) {
        let now = self.clock.now();
        let dispatcher = &self.ingress.dispatcher;
        match *op {
            Op::Register(n) => {
                let phone = format!("+96475020{n:05}");
                let raw = format!("REG|Patient {n}|{phone}|36.2{n:02}|44.0{n:02}|2013-11-01|ar|+96475030{n:05}");
                if let Ok(Ack::Reg { patient_id, .. }) = self.ingress.handle(raw.as_bytes(), &phone, now).result {
                    self.patients.push(patient_id);
                }
            }
            Op::Help {
                patient,
                client_offset_s,
            } => {
                let Some(pid) = self.patients.get(patient % self.patients.len().max(1)) else {
                    return;
                };
                let ts = (now - Duration::seconds(client_offset_s)).to_rfc3339();
                let raw = format!("HELP|{pid}|36.2062125|44.0307111|{ts}");
                if let Ok(Ack::Help { request_id, .. }) =
                    self.ingress.handle(raw.as_bytes(), "+9647500000001", now).result
                {
                    if !self.requests.contains(&request_id) {
                        self.requests.push(request_id);
                    }
                }
            }
            Op::Assign { request, unit } => {
                if let Some(rid) = self.requests.get(request % self.requests.len().max(1)) {
                    let _ = dispatcher.assign_unit(rid, &UnitId::new(format!("U{}", unit + 1)), "op");
                }
            }
            Op::Complete(request) => {
                if let Some(rid) = self.requests.get(request % self.requests.len().max(1)) {
                    let _ = dispatcher.complete_request(rid, "op");
                }
            }
            Op::Cancel(request) => {
                if let Some(rid) = self.requests.get(request % self.requests.len().max(1)) {
                    let _ = dispatcher.cancel_request(rid, "op");
                }
            }
            Op::Tick(s) => self.clock.advance(Duration::seconds(s)),
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn reopen_and_restore_reproduce_state(ops in prop::collection::vec(op(), 1..40)) {
        let dir = tempfile::tempdir().unwrap();
        let clock = clock();
        let registry = open(dir.path(), &clock);
        seed(&registry);
        let mut world = World::new(registry, clock.clone());
        for op in &ops {
            world.apply(op);
        }
        let before = dump(&world.registry);
        drop(world);

        let reopened = open(dir.path(), &clock);
        prop_assert_eq!(&dump(&reopened), &before);

        let copy = Registry::in_memory(Arc::new(clock.clone()));
        copy.restore(before.as_slice()).unwrap();
        prop_assert_eq!(&dump(&copy), &before);
    }
}

#[test]
fn torn_commit_is_dropped_whole() {
    let dir = tempfile::tempdir().unwrap();
    let clock = clock();
    let registry = open(dir.path(), &clock);
    seed(&registry);
    let mut world = World::new(registry, clock.clone());
    world.apply(&Op::Register(1));
    let before = dump(&world.registry);
    // A help call commits the request and its fan-out together.
    world.apply(&Op::Help {
        patient: 0,
        client_offset_s: 5,
    });
    assert_eq!(world.requests.len(), 1);
    drop(world);

    let wal = dir.path().join("wal.ndjson");
    let len = std::fs::metadata(&wal).unwrap().len();
    let text = std::fs::read_to_string(&wal).unwrap();
    let last_line = text.trim_end().rsplit('\n').next().unwrap().len() as u64;
    let file = OpenOptions::new().write(true).open(&wal).unwrap();
    file.set_len(len - last_line / 2).unwrap();
    drop(file);

    let reopened = open(dir.path(), &clock);
    assert_eq!(dump(&reopened), before);
    assert!(reopened.read().help_requests.is_empty());
}

#[test]
fn corrupt_middle_line_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let clock = clock();
    let registry = open(dir.path(), &clock);
    seed(&registry);
    World::new(registry.clone(), clock.clone()).apply(&Op::Register(1));
    drop(registry);
    let wal = dir.path().join("wal.ndjson");
    let text = std::fs::read_to_string(&wal).unwrap();
    std::fs::write(&wal, format!("{{not json\n{text}")).unwrap();
    let Err(err) = Registry::open(dir.path(), Arc::new(clock), StoreOptions { fsync: false }) else {
        panic!("open succeeded");
    };
    assert!(matches!(err, StoreError::Corrupt { line: 1, .. }), "{err:?}");
}

#[test]
fn second_open_is_locked_out() {
    let dir = tempfile::tempdir().unwrap();
    let clock = clock();
    let _first = open(dir.path(), &clock);
    let Err(err) = Registry::open(dir.path(), Arc::new(clock), StoreOptions { fsync: false }) else {
        panic!("open succeeded");
    };
    assert!(matches!(err, StoreError::Locked(_)), "{err:?}");
}
