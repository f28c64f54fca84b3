use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Duration;

use chrono::NaiveDate;
use proptest::prelude::*;

use pregcare_cli::fleet::{FleetPlan, FleetScenario, GeoBounds};
use pregcare_core::protocol::{parse_inbound, MessageBody};
use pregcare_core::PatientId;

fn pregcare(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pregcare"))
        .env_remove("PREGCARE_CONFIG")
        .env_remove("PREGCARE_SERVER")
        .args(args)
        .output()
        .unwrap()
}

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn seed_reports_counts_and_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let (f, d, a) = (data("facilities.csv"), data("doctors.csv"), data("advice.tsv"));
    let args = ["seed", s(&f), s(&d), s(&a), "--data-dir", s(dir.path())];
    let first = pregcare(&args);
    assert_eq!(first.status.code(), Some(0), "{first:?}");
    let again = pregcare(&args);
    assert_eq!(again.status.code(), Some(0));
    assert_eq!(stdout(&first).lines().last(), stdout(&again).lines().last());
    assert!(
        stdout(&first).trim_end().ends_with("5/3/9 ingested"),
        "{}",
        stdout(&first)
    );
}

#[test]
fn seed_counts_match_the_files() {
    let dir = tempfile::tempdir().unwrap();
    let advice = dir.path().join("advice.tsv");
    let rows: String = [("1", "0", "12"), ("2", "13", "27"), ("3", "28", "44")]
        .iter()
        .flat_map(|(t, lo, hi)| ["en", "ku"].map(|l| format!("{t}\t{lo}\t{hi}\t{l}\tPlaceholder advice {t} {l}\n")))
        .collect();
    std::fs::write(&advice, rows).unwrap();
    let (f, d) = (data("facilities.csv"), data("doctors.csv"));
    let out = pregcare(&[
        "seed",
        s(&f),
        s(&d),
        s(&advice),
        "--data-dir",
        s(&dir.path().join("store")),
    ]);
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    assert_eq!(stdout(&out).lines().last(), Some("5/3/6 ingested"));
}

#[test]
fn seed_rejects_bad_rows_with_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("facilities.csv");
    std::fs::write(
        &bad,
        "facility_id,kind,name,lat,lon,contact_phone\nH1,hospital,Good,36.2,44.0,+9647500000010\nH2,hospital,Bad,95,44.0,+9647500000011\n",
    )
    .unwrap();
    let out = pregcare(&[
        "seed",
        s(&bad),
        s(&data("doctors.csv")),
        s(&data("advice.tsv")),
        "--data-dir",
        s(&dir.path().join("store")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("facilities.csv:3:"), "{err}");
}

#[test]
fn send_validates_locally() {
    // Port 9 is discard; nothing should be contacted for an invalid payload.
    let out = pregcare(&[
        "--server",
        "http://127.0.0.1:9",
        "send",
        "help",
        "P000017",
        "95",
        "44.0307111",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stdout(&out).trim(), "OUT_OF_RANGE");
}

#[test]
fn unreachable_server_is_a_transport_failure() {
    let port = std::net::TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let server = format!("http://127.0.0.1:{port}");
    let out = pregcare(&["--server", &server, "send", "chg", "P000017", "2014-02-10"]);
    assert_eq!(out.status.code(), Some(2));
    let out = pregcare(&["--server", &server, "report"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn zero_duration_fleet_is_an_empty_report() {
    let port = std::net::TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let server = format!("http://127.0.0.1:{port}");
    let out = pregcare(&["--server", &server, "fleet", "--duration", "0", "--json"]);
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["sent"], 0);
    assert_eq!(report["accepted"], 0);
    assert!(report["p99_ms"].is_null());
}

fn scenario() -> impl Strategy<Value = FleetScenario> {
    (any::<u64>(), 1usize..30, 1u32..80, 1u64..5).prop_map(|(seed, patients, rate, secs)| FleetScenario {
        seed,
        patient_count: patients,
        help_rate: rate as f64,
        duration: Duration::from_secs(secs),
        geo_bounds: GeoBounds::default(),
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fleet_plans_are_deterministic_and_valid(s in scenario()) {
        let epoch = NaiveDate::from_ymd_opt(2014, 1, 30).unwrap();
        let plan = FleetPlan::generate(&s, epoch);
        prop_assert_eq!(&plan, &FleetPlan::generate(&s, epoch));
        prop_assert_eq!(plan.helps.len(), s.help_count());

        let now = epoch.and_hms_opt(12, 0, 0).unwrap().and_utc();
        let ids: Vec<PatientId> = (0..s.patient_count).map(|i| PatientId::new(format!("P{:06}", i + 1))).collect();
        for i in 0..s.patient_count {
            let raw = plan.registration_payload(i);
            let MessageBody::Reg(r) = parse_inbound(&raw, "+9647500000000", now).unwrap().body else {
                panic!("{raw}");
            };
            prop_assert!(s.geo_bounds.lat_min <= r.location.lat() && r.location.lat() <= s.geo_bounds.lat_max);
        }
        let mut last = None;
        for i in 0..plan.helps.len() {
            let raw = plan.help_payload(i, &ids);
            let MessageBody::Help(h) = parse_inbound(&raw, "+9647500000000", now).unwrap().body else {
                panic!("{raw}");
            };
            prop_assert!(last.is_none_or(|t| t < h.client_time), "client times must be distinct and ordered");
            last = Some(h.client_time);
        }
    }
}

#[test]
fn dump_restore_dump_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let (f, d, adv, u) = (
        data("facilities.csv"),
        data("doctors.csv"),
        data("advice.tsv"),
        data("units.csv"),
    );
    let seeded = pregcare(&["seed", s(&f), s(&d), s(&adv), "--units", s(&u), "--data-dir", s(&a)]);
    assert_eq!(seeded.status.code(), Some(0), "{seeded:?}");

    let first = pregcare(&["dump", "--data-dir", s(&a)]);
    assert_eq!(first.status.code(), Some(0), "{first:?}");
    assert!(first.stdout.ends_with(b"\n"));
    let file = dir.path().join("dump.ndjson");
    std::fs::write(&file, &first.stdout).unwrap();

    let restored = pregcare(&["restore", s(&file), "--data-dir", s(&b)]);
    assert_eq!(restored.status.code(), Some(0), "{restored:?}");
    let lines = first.stdout.iter().filter(|&&c| c == b'\n').count();
    assert_eq!(stdout(&restored).trim(), format!("{lines} rows restored"));

    let second = pregcare(&["dump", "--data-dir", s(&b)]);
    assert_eq!(second.stdout, first.stdout);
}
