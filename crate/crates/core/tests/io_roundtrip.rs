use proptest::prelude::*;

use semicomp::data::validate_dataset;
use semicomp::io::{parse_dataset, sidecar_for, write_dataset, Sidecar};
use semicomp::simulation::{case_study_dataset, CaseStudyConfig};
use semicomp::{CovariateTrajectory, Dataset, ProcessObservation, SubjectRecord};

fn time() -> impl Strategy<Value = f64> {
    prop_oneof![
        -1e6f64..1e6,
        (-1000i32..1000).prop_map(f64::from),
        Just(1e-300),
        Just(0.1 + 0.2)
    ]
}

fn trajectory(dim: usize, flag: f64) -> impl Strategy<Value = CovariateTrajectory> {
    prop::collection::vec((time(), prop::collection::vec(-1e9f64..1e9, dim - 1)), 1..4).prop_map(move |segs| {
        let mut segs: Vec<(f64, Vec<f64>)> = segs
            .into_iter()
            .map(|(t, mut v)| {
                v.insert(0, flag);
                (t, v)
            })
            .collect();
        segs.sort_by(|a, b| a.0.total_cmp(&b.0));
        segs.dedup_by(|a, b| a.0 == b.0);
        CovariateTrajectory::new(dim, segs).unwrap()
    })
}

fn observation() -> impl Strategy<Value = ProcessObservation> {
    (time(), time(), any::<bool>()).prop_map(|(a, b, e)| ProcessObservation::new(a.min(b), a.max(b), e))
}

fn subject(i: usize) -> impl Strategy<Value = SubjectRecord> {
    (any::<bool>(), observation(), prop::option::of(observation())).prop_flat_map(move |(flag, p, r)| {
        let f = if flag { 1.0 } else { 0.0 };
        (trajectory(3, f), trajectory(2, f)).prop_map(move |(x, z)| SubjectRecord {
            id: format!("id-{i}"),
            promotion: Some(p),
            retirement: r,
            x_traj: x,
            z_traj: if r.is_some() { z } else { CovariateTrajectory::empty(2) },
            protected_flag: flag,
        })
    })
}

fn dataset() -> impl Strategy<Value = Dataset> {
    (1usize..8)
        .prop_flat_map(|n| (0..n).map(subject).collect::<Vec<_>>())
        .prop_map(|subjects| Dataset {
            subjects,
            promo_covariate_names: vec!["flag".into(), "a".into(), "b".into()],
            retire_covariate_names: vec!["flag".into(), "c".into()],
            protected_column: "flag".into(),
        })
}

proptest! {
    #[test]
    fn csv_round_trip_is_exact(ds in dataset()) {
        let text = write_dataset(&ds);
        let back = parse_dataset(&text, &sidecar_for(&ds, None, None)).unwrap();
        prop_assert_eq!(&back, &ds);
        prop_assert_eq!(write_dataset(&back), text);
    }
}

#[test]
fn case_study_survives_round_trip_and_validation() {
    let cs = case_study_dataset(&CaseStudyConfig::default()).unwrap();
    let sidecar = sidecar_for(&cs.dataset, Some(cs.window), Some("1990-01-01".into()));
    let sidecar = Sidecar::from_json(&sidecar.to_json()).unwrap();
    let back = parse_dataset(&write_dataset(&cs.dataset), &sidecar).unwrap();
    assert_eq!(back, cs.dataset);
    assert_eq!(validate_dataset(back.clone()).unwrap(), back);
    assert_eq!(sidecar.restriction_window().unwrap(), Some(cs.window));
}
