use std::hint::black_box;
use std::sync::Arc;

use chrono::{Duration, TimeZone, Utc};
use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use pregcare_core::api::Ingress;
use pregcare_core::care::{CareConfig, CareService};
use pregcare_core::dispatch::{DispatchConfig, Dispatcher};
use pregcare_core::protocol::{parse_inbound, serialize_inbound, TemplateCatalog};
use pregcare_core::registry::Registry;
use pregcare_core::{
    haversine_distance, nearest_facility, Clock, EarthModel, FacilityId, FacilityKind, GeoPoint, ManualClock, Site,
};

fn points(n: usize) -> Vec<GeoPoint> {
    let mut rng = StdRng::seed_from_u64(42);
    (0..n)
        .map(|_| GeoPoint::new(rng.gen_range(35.5..37.0), rng.gen_range(43.0..45.0)).unwrap())
        .collect()
}

fn geo(c: &mut Criterion) {
    let pts = points(1024);
    c.bench_function("haversine", |b| {
        let mut i = 0;
        b.iter(|| {
            i = (i + 1) % (pts.len() - 1);
            black_box(haversine_distance(pts[i], pts[i + 1]))
        })
    });

    let earth = EarthModel::default();
    for n in [10, 100, 1000] {
        let sites: Vec<Site> = points(n)
            .into_iter()
            .enumerate()
            .map(|(i, p)| Site {
                id: FacilityId::new(format!("H{i}")),
                kind: FacilityKind::Hospital,
                location: p,
            })
            .collect();
        let origin = GeoPoint::new(36.2062125, 44.0307111).unwrap();
        c.bench_function(&format!("nearest_facility/{n}"), |b| {
            b.iter(|| nearest_facility(black_box(origin), &sites, FacilityKind::Hospital, &earth).unwrap())
        });
    }
}

fn protocol(c: &mut Criterion) {
    let now = Utc.with_ymd_and_hms(2014, 1, 30, 10, 0, 0).unwrap();
    let help = "HELP|P000017|36.2062125|44.0307111|2014-01-25T05:19:55Z";
    let reg = "REG|ڕەوشەن|+9647501234567|36.2062125|44.0307111|2013-10-01|ku|+9647507654321";
    c.bench_function("parse/help", |b| {
        b.iter(|| parse_inbound(black_box(help), "+9647501234567", now).unwrap())
    });
    c.bench_function("parse/reg", |b| {
        b.iter(|| parse_inbound(black_box(reg), "+9647501234567", now).unwrap())
    });
    let body = parse_inbound(reg, "+9647501234567", now).unwrap().body;
    c.bench_function("serialize/reg", |b| {
        b.iter(|| serialize_inbound(black_box(&body)).unwrap())
    });
}

fn ingest(c: &mut Criterion) {
    let start = Utc.with_ymd_and_hms(2014, 1, 30, 10, 0, 0).unwrap();
    let clock = ManualClock::new(start);
    let registry = Arc::new(Registry::in_memory(Arc::new(clock.clone())));
    let mut csv =
        String::from("facility_id,kind,name,lat,lon,contact_phone\nC1,care_center,Care,36.2,44.0,+9647500000012\n");
    for (i, p) in points(50).into_iter().enumerate() {
        csv.push_str(&format!(
            "H{i:02},hospital,H{i},{},{},+96475000100{i:02}\n",
            p.lat(),
            p.lon()
        ));
    }
    registry.seed_facilities_csv(csv.as_bytes()).unwrap();
    let templates = Arc::new(TemplateCatalog::default());
    let ingress = Ingress {
        care: Arc::new(CareService::new(
            registry.clone(),
            templates.clone(),
            CareConfig::default(),
        )),
        dispatcher: Arc::new(Dispatcher::new(registry.clone(), templates, DispatchConfig::default())),
    };
    let reg = ingress.handle(
        b"REG|Rawshan|+9647501234567|36.2062125|44.0307111|2013-10-01|ku|+9647507654321",
        "+9647501234567",
        start,
    );
    assert!(reg.result.is_ok());

    // Each iteration is a fresh request: the clock moves past the dedup window.
    c.bench_function("ingest_help", |b| {
        b.iter_batched(
            || {
                clock.advance(Duration::seconds(121));
                let now = clock.now();
                let ts = now.to_rfc3339_opts(chrono::SecondsFormat::Secs, true);
                (format!("HELP|P000001|36.2062125|44.0307111|{ts}"), now)
            },
            |(raw, now)| ingress.handle(raw.as_bytes(), "+9647501234567", now),
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(benches, geo, protocol, ingest);
criterion_main!(benches);
