use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use semicomp::cox::build_view;
use semicomp::data::Process;
use semicomp::io::{sidecar_for, write_dataset};
use semicomp::simulation::{generate_replicate, SimulationConfig};
use semicomp::CoxFit;
use semicomp_cli::commands::{self, read_means, BUNDLED_DATA, BUNDLED_SIDECAR};
use semicomp_cli::manifest::{sha256_hex, RunManifest};
use semicomp_cli::model::ModelFile;

fn semicomp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_semicomp"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = semicomp(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Bundle {
    dir: tempfile::TempDir,
}

impl Bundle {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        ok(&["example", "--out-dir", s(dir.path())]);
        Self { dir }
    }
    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }
    fn data(&self) -> PathBuf {
        self.path("officers.csv")
    }
    fn sidecar(&self) -> PathBuf {
        self.path("officers.json")
    }
    fn predict(&self, out: &str, extra: &[&str]) -> Output {
        let (data, sidecar, out_dir) = (self.data(), self.sidecar(), self.path(out));
        let mut args = vec![
            "predict",
            "--data",
            s(&data),
            "--sidecar",
            s(&sidecar),
            "--out-dir",
            s(&out_dir),
        ];
        args.extend_from_slice(extra);
        ok(&args)
    }
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap()
}

fn rows(p: &Path) -> Vec<BTreeMap<String, String>> {
    csv::Reader::from_path(p)
        .unwrap()
        .deserialize()
        .map(|r| r.unwrap())
        .collect()
}

fn num(row: &BTreeMap<String, String>, key: &str) -> f64 {
    row[key].parse().unwrap()
}

#[test]
fn bundled_dataset_matches_its_generator() {
    let (data, sidecar) = commands::generate_example().unwrap();
    assert_eq!(data, BUNDLED_DATA);
    assert_eq!(sidecar, BUNDLED_SIDECAR);
}

#[test]
fn validate_accepts_bundled_data() {
    let b = Bundle::new();
    let out = ok(&["validate", "--data", s(&b.data()), "--sidecar", s(&b.sidecar())]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("valid"));
}

#[test]
fn validate_names_the_bad_row() {
    let b = Bundle::new();
    let mut text = read(&b.data());
    let second_line_end = text.match_indices('\n').nth(2).unwrap().0;
    let line: Vec<&str> = text[..second_line_end].lines().collect();
    let fields: Vec<String> = line[2].split(',').map(String::from).collect();
    let mut bad = fields.clone();
    bad[4] = "2".into();
    text = text.replacen(&fields.join(","), &bad.join(","), 1);
    std::fs::write(b.data(), text).unwrap();
    let out = semicomp(&["validate", "--data", s(&b.data()), "--sidecar", s(&b.sidecar())]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 3") && err.contains("event"), "{err}");
}

#[test]
fn validate_reports_violations_with_exit_one() {
    let b = Bundle::new();
    let text = read(&b.data()).replace("officer-001,P,722,2619,", "officer-001,P,722,700,");
    std::fs::write(b.data(), text).unwrap();
    let out = semicomp(&["validate", "--data", s(&b.data()), "--sidecar", s(&b.sidecar())]);
    assert_eq!(out.status.code(), Some(1));
    let report = String::from_utf8_lossy(&out.stdout);
    assert!(
        report.contains("violation") && report.contains("officer-001"),
        "{report}"
    );
}

#[test]
fn sidecar_without_protected_column_is_a_config_error() {
    let b = Bundle::new();
    let mut sidecar: serde_json::Value = serde_json::from_str(&read(&b.sidecar())).unwrap();
    sidecar.as_object_mut().unwrap().remove("protected_column");
    std::fs::write(b.sidecar(), sidecar.to_string()).unwrap();
    let out = semicomp(&["validate", "--data", s(&b.data()), "--sidecar", s(&b.sidecar())]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("protected_column"));
}

#[test]
fn null_covariate_fit_has_baselines_only() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    let sidecar = dir.path().join("s.json");
    std::fs::write(
        &data,
        "subject_id,process,entry,exit,event,segment_start\n\
         a,P,0,5,1,0\nb,P,0,3,1,0\nc,P,1,3,0,1\nd,P,0,6,1,0\n\
         a,R,1,7,1,1\nb,R,0,2,0,0\nc,R,0,3,1,0\n",
    )
    .unwrap();
    std::fs::write(
        &sidecar,
        r#"{"protected_column":"group","promotion_covariates":[],"retirement_covariates":[]}"#,
    )
    .unwrap();
    ok(&[
        "fit",
        "--data",
        s(&data),
        "--sidecar",
        s(&sidecar),
        "--out-dir",
        s(dir.path()),
    ]);
    let model = ModelFile::from_json(&read(&dir.path().join("model.json"))).unwrap();
    assert!(model.promotion.coefficients.is_empty());
    assert!(model.retirement.coefficients.is_empty());
    let jumps: Vec<(&str, &str)> = model
        .promotion
        .baseline_jumps
        .iter()
        .map(|j| (j.time.as_str(), j.jump.as_str()))
        .collect();
    // Nelson-Aalen: 1/4 at t=3 (b), 1/2 at t=5 (a), 1 at t=6 (d)
    assert_eq!(jumps, [("3", "0.25"), ("5", "0.5"), ("6", "1")]);
}

fn simulated_files(dir: &Path) -> (PathBuf, PathBuf, SimulationConfig) {
    let config = SimulationConfig {
        n: 500,
        replicates: 1,
        ..SimulationConfig::table1_middle()
    };
    let ds = generate_replicate(&config, 0).unwrap();
    let data = dir.join("sim.csv");
    let sidecar = dir.join("sim.json");
    std::fs::write(&data, write_dataset(&ds)).unwrap();
    std::fs::write(&sidecar, sidecar_for(&ds, None, None).to_json()).unwrap();
    (data, sidecar, config)
}

#[test]
fn fit_recovers_simulation_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let (data, sidecar, config) = simulated_files(dir.path());
    ok(&[
        "fit",
        "--data",
        s(&data),
        "--sidecar",
        s(&sidecar),
        "--out-dir",
        s(dir.path()),
    ]);
    let model = ModelFile::from_json(&read(&dir.path().join("model.json"))).unwrap();
    for (pm, truth) in [(&model.promotion, config.beta), (&model.retirement, config.theta)] {
        for (c, t) in pm.coefficients.iter().zip(truth) {
            let est: f64 = c.estimate.parse().unwrap();
            let se: f64 = c.std_error.parse().unwrap();
            assert!((est - t).abs() < 3.0 * se, "{}: {est} vs {t}", c.name);
            let hr: f64 = c.hazard_ratio.parse().unwrap();
            assert_eq!(hr, est.exp());
        }
    }
}

#[test]
fn stored_model_reproduces_the_fit() {
    let dir = tempfile::tempdir().unwrap();
    let (data, sidecar, _) = simulated_files(dir.path());
    let out = dir.path().join("a");
    ok(&[
        "fit",
        "--data",
        s(&data),
        "--sidecar",
        s(&sidecar),
        "--out-dir",
        s(&out),
    ]);
    ok(&[
        "fit",
        "--data",
        s(&data),
        "--sidecar",
        s(&sidecar),
        "--out-dir",
        s(&dir.path().join("b")),
    ]);
    let text = read(&out.join("model.json"));
    assert_eq!(text, read(&dir.path().join("b/model.json")));

    let model = ModelFile::from_json(&text).unwrap();
    let (ds, _) = semicomp::io::read_dataset(&data, &sidecar).unwrap();
    for process in [Process::Promotion, Process::Retirement] {
        let view = build_view(&ds, process).unwrap();
        let stored = model.process(process).estimates().unwrap();
        let refit = semicomp::cox::fit(&view, &stored).unwrap();
        for (a, b) in stored.iter().zip(&refit.beta_hat) {
            assert!((a - b).abs() < 1e-12, "{process}: {a} vs {b}");
        }
        let at = CoxFit::evaluate_at(&view, &stored).unwrap();
        assert!(at.converged);
        let jumps: Vec<String> = at.baseline_jumps.iter().map(|j| j.jump.to_string()).collect();
        let saved: Vec<String> = model
            .process(process)
            .baseline_jumps
            .iter()
            .map(|j| j.jump.clone())
            .collect();
        assert_eq!(jumps, saved);
    }
}

#[test]
fn predict_rows_partition_the_window() {
    let b = Bundle::new();
    b.predict("pred", &[]);
    let means = read_means(&b.path("pred/means.csv")).unwrap();
    assert_eq!(means.len(), 400);
    for m in &means {
        assert_eq!(m.unit, "days");
        let span = m.window_end - m.window_start;
        assert!(
            (m.e_lt + m.e_cap + m.e_rt - span).abs() < 1e-10 * span.max(1.0),
            "{}",
            m.subject_id
        );
        for se in [m.se_lt, m.se_cap, m.se_rt] {
            assert!(se.is_finite() && se >= 0.0);
        }
    }
    let curves = rows(&b.path("pred/curves.csv"));
    for r in &curves {
        let total = num(r, "p_lt") + num(r, "p_cap") + num(r, "p_rt");
        assert!((total - 1.0).abs() < 1e-15);
    }
}

#[test]
fn predict_with_stored_model_matches_inline_fit() {
    let b = Bundle::new();
    ok(&[
        "fit",
        "--data",
        s(&b.data()),
        "--sidecar",
        s(&b.sidecar()),
        "--out-dir",
        s(&b.path("fit")),
    ]);
    b.predict("inline", &["--subjects", "officer-001,officer-010"]);
    b.predict(
        "stored",
        &[
            "--subjects",
            "officer-001,officer-010",
            "--model",
            s(&b.path("fit/model.json")),
        ],
    );
    assert_eq!(read(&b.path("inline/means.csv")), read(&b.path("stored/means.csv")));
    assert_eq!(read_means(&b.path("inline/means.csv")).unwrap().len(), 2);
}

#[test]
fn late_entrants_are_skipped_with_a_warning() {
    let b = Bundle::new();
    let means = rows_after_predict(&b, &["--window", "2000-01-01,2004-01-01"]);
    let entries: BTreeMap<String, f64> = rows(&b.data())
        .iter()
        .filter(|r| r["process"] == "P")
        .map(|r| (r["subject_id"].clone(), num(r, "entry")))
        .collect();
    let tau1 = 5113.0;
    let late: Vec<&String> = entries.iter().filter(|(_, &e)| e >= tau1).map(|(id, _)| id).collect();
    assert!(!late.is_empty());
    assert_eq!(means.len(), entries.len() - late.len());
    let out = b.predict("late", &["--window", "2000-01-01,2004-01-01"]);
    let err = String::from_utf8_lossy(&out.stderr);
    for id in late {
        assert!(err.contains(&format!("subject {id} skipped")), "{id}");
    }
}

fn rows_after_predict(b: &Bundle, extra: &[&str]) -> Vec<semicomp_cli::commands::MeansRow> {
    b.predict("tmp", extra);
    read_means(&b.path("tmp/means.csv")).unwrap()
}

#[test]
fn months_are_days_over_the_month_length() {
    let b = Bundle::new();
    let days = rows_after_predict(&b, &["--subjects", "officer-003"]);
    let months = rows_after_predict(&b, &["--subjects", "officer-003", "--months"]);
    assert_eq!(months[0].unit, "months");
    assert_eq!(months[0].e_cap, days[0].e_cap / 30.4375);
    assert_eq!(months[0].se_rt, days[0].se_rt / 30.4375);
}

#[test]
fn probability_of_higher_rank_rises_then_falls() {
    let b = Bundle::new();
    b.predict("pred", &[]);
    let mut by_subject: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in rows(&b.path("pred/curves.csv")) {
        by_subject
            .entry(r["subject_id"].clone())
            .or_default()
            .push(num(&r, "p_cap"));
    }
    let humped = by_subject
        .values()
        .filter(|p| {
            let (k, max) = p
                .iter()
                .enumerate()
                .fold((0, 0.0), |acc, (k, &v)| if v > acc.1 { (k, v) } else { acc });
            k > 0 && k + 1 < p.len() && p[p.len() - 1] < 0.9 * max
        })
        .count();
    assert!(humped * 4 >= by_subject.len(), "{humped} of {}", by_subject.len());
}

#[test]
fn unknown_policy_column_and_model_mismatch_fail() {
    let b = Bundle::new();
    let out = semicomp(&[
        "predict",
        "--data",
        s(&b.data()),
        "--sidecar",
        s(&b.sidecar()),
        "--policy",
        "nope=0",
        "--out-dir",
        s(&b.path("x")),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope"));

    let dir = tempfile::tempdir().unwrap();
    let (data, sidecar, _) = simulated_files(dir.path());
    ok(&[
        "fit",
        "--data",
        s(&data),
        "--sidecar",
        s(&sidecar),
        "--out-dir",
        s(dir.path()),
    ]);
    let out = semicomp(&[
        "predict",
        "--data",
        s(&b.data()),
        "--sidecar",
        s(&b.sidecar()),
        "--model",
        s(&dir.path().join("model.json")),
        "--out-dir",
        s(&b.path("y")),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("do not match"));
}

fn compensate(b: &Bundle, out: &str, schedule: &str, extra: &[&str]) -> Vec<BTreeMap<String, String>> {
    let path = b.path(&format!("{out}.json"));
    std::fs::write(&path, schedule).unwrap();
    let out_dir = b.path(out);
    let means = b.path("pred/means.csv");
    let mut args = vec![
        "compensate",
        "--means",
        s(&means),
        "--schedule",
        s(&path),
        "--out-dir",
        s(&out_dir),
    ];
    args.extend_from_slice(extra);
    ok(&args);
    rows(&out_dir.join("damages.csv"))
}

#[test]
fn compensation_paths_agree() {
    let b = Bundle::new();
    b.predict("pred", &["--months"]);
    let means = read_means(&b.path("pred/means.csv")).unwrap();
    let actual = b.path("actual.csv");
    let mut text = String::from("subject_id,amount\n");
    for (k, m) in means.iter().enumerate() {
        text.push_str(&format!("{},{}\n", m.subject_id, 1000.0 * k as f64));
    }
    std::fs::write(&actual, text).unwrap();
    let curves = b.path("pred/curves.csv");

    // equal rates: damages depend only on the window length
    let flat = compensate(
        &b,
        "flat",
        r#"{"wage_lower": 7, "wage_higher": 7, "pension": 7}"#,
        &["--actual", s(&actual)],
    );
    for (k, (row, m)) in flat.iter().zip(&means).enumerate() {
        let span = (m.window_end - m.window_start) / 30.4375;
        let expect = 7.0 * span - 1000.0 * k as f64;
        assert!((num(row, "damages") - expect).abs() < 1e-9 * expect.abs().max(1.0));
    }

    // no pension, no higher-rank pay
    let lower = compensate(&b, "lower", r#"{"wage_lower": 5, "wage_higher": 0, "pension": 0}"#, &[]);
    for (row, m) in lower.iter().zip(&means) {
        assert_eq!(num(row, "damages"), 5.0 * m.e_lt);
    }

    // read back and re-aggregate: exactly what compensate wrote
    let constant = compensate(
        &b,
        "constant",
        r#"{"wage_lower": 5000, "wage_higher": 6100, "pension": 2900}"#,
        &["--actual", s(&actual)],
    );
    for (k, (row, m)) in constant.iter().zip(&means).enumerate() {
        let expect = 5000.0 * m.e_lt + 6100.0 * m.e_cap + 2900.0 * m.e_rt - 1000.0 * k as f64;
        assert_eq!(num(row, "damages"), expect);
        assert_eq!(row["method"], "constant");
    }

    // a piecewise schedule constant in value integrates to the same thing
    let piecewise = compensate(
        &b,
        "piecewise",
        r#"{"epoch": "1990-01-01", "segments": [
            {"start": "1995-01-01", "wage_lower": 5000, "wage_higher": 6100, "pension": 2900},
            {"start": "2003-06-01", "wage_lower": 5000, "wage_higher": 6100, "pension": 2900}]}"#,
        &["--actual", s(&actual), "--curves", s(&curves)],
    );
    for (p, c) in piecewise.iter().zip(&constant) {
        let (a, b) = (num(p, "gross"), num(c, "gross"));
        assert!((a - b).abs() <= 1e-10 * b.abs(), "{a} vs {b}");
        assert_eq!(p["method"], "piecewise");
    }

    // a raise halfway through increases every award
    let raise = compensate(
        &b,
        "raise",
        r#"{"segments": [
            {"start": 0, "wage_lower": 5000, "wage_higher": 6100, "pension": 2900},
            {"start": 5600, "wage_lower": 5500, "wage_higher": 6700, "pension": 3200}]}"#,
        &["--curves", s(&curves)],
    );
    for (r, c) in raise.iter().zip(&constant) {
        assert!(num(r, "gross") > num(c, "gross"));
    }
}

#[test]
fn schedule_must_cover_the_window() {
    let b = Bundle::new();
    b.predict("pred", &["--subjects", "officer-001"]);
    let schedule = b.path("late.json");
    std::fs::write(
        &schedule,
        r#"{"segments": [{"start": 5000, "wage_lower": 1, "wage_higher": 1, "pension": 1}]}"#,
    )
    .unwrap();
    let out = semicomp(&[
        "compensate",
        "--means",
        s(&b.path("pred/means.csv")),
        "--curves",
        s(&b.path("pred/curves.csv")),
        "--schedule",
        s(&schedule),
        "--out-dir",
        s(&b.path("c")),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("schedule starts at 5000"));
}

#[test]
fn comparison_estimates_are_set_beside_damages() {
    let b = Bundle::new();
    b.predict("pred", &["--subjects", "officer-001,officer-002"]);
    let compare = b.path("jury.csv");
    std::fs::write(&compare, "subject_id,amount\nofficer-001,100\n").unwrap();
    let rows = compensate(
        &b,
        "cmp",
        r#"{"wage_lower": 1, "wage_higher": 2, "pension": 0.5}"#,
        &["--compare", s(&compare)],
    );
    assert_eq!(num(&rows[0], "difference"), num(&rows[0], "damages") - 100.0);
    assert_eq!(rows[1]["comparison"], "NA");
}

#[test]
fn simulate_smoke_run_is_well_formed_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, threads: &str| {
        let out = dir.path().join(name);
        ok(&[
            "--threads",
            threads,
            "simulate",
            "--replicates",
            "10",
            "--n",
            "200",
            "--seed",
            "7",
            "--out-dir",
            s(&out),
        ]);
        out
    };
    let a = run("a", "1");
    let b = run("b", "3");
    for f in ["report.csv", "report.json", "config.json"] {
        assert_eq!(read(&a.join(f)), read(&b.join(f)), "{f}");
    }
    let report = rows(&a.join("report.csv"));
    let quantities: Vec<&str> = report.iter().map(|r| r["quantity"].as_str()).collect();
    assert_eq!(quantities, ["E_lt", "E_cap", "E_rt", "beta1", "theta1"]);
    for r in &report {
        assert_eq!(r["replicates"], "10");
        assert!(r["configuration"].ends_with("n=200"));
    }
    let manifest: RunManifest = serde_json::from_str(&read(&a.join("manifest.json"))).unwrap();
    assert_eq!(manifest.seed, Some(7));
    assert_eq!(
        manifest.outputs["report.csv"],
        sha256_hex(read(&a.join("report.csv")).as_bytes())
    );
}

#[test]
fn simulate_rejects_invalid_configs() {
    let dir = tempfile::tempdir().unwrap();
    let out = semicomp(&["simulate", "--frailty", "-1", "--out-dir", s(dir.path())]);
    assert!(!out.status.success());
    let config = dir.path().join("c.json");
    std::fs::write(&config, r#"{"n": 10}"#).unwrap();
    let out = semicomp(&["simulate", "--config", s(&config), "--out-dir", s(dir.path())]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("c.json"));
}

#[test]
fn manifests_record_inputs_and_outputs() {
    let b = Bundle::new();
    ok(&[
        "fit",
        "--data",
        s(&b.data()),
        "--sidecar",
        s(&b.sidecar()),
        "--out-dir",
        s(&b.path("f1")),
    ]);
    ok(&[
        "fit",
        "--data",
        s(&b.data()),
        "--sidecar",
        s(&b.sidecar()),
        "--out-dir",
        s(&b.path("f2")),
    ]);
    let m1: RunManifest = serde_json::from_str(&read(&b.path("f1/manifest.json"))).unwrap();
    let m2: RunManifest = serde_json::from_str(&read(&b.path("f2/manifest.json"))).unwrap();
    assert_eq!(m1.command, "fit");
    assert_eq!(m1.inputs[s(&b.data())], sha256_hex(BUNDLED_DATA.as_bytes()));
    assert_eq!(m1.outputs, m2.outputs);
    assert_eq!(m1.config_sha256, m2.config_sha256);
    assert_eq!(
        RunManifest {
            timestamp: m2.timestamp.clone(),
            ..m1
        },
        m2
    );
}
