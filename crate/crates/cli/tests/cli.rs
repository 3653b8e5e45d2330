use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use infocomp::io;
use infocomp::{Fingerprint, PosteriorSet, SampleIds, SpaceId};
use ndarray::Array2;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_infocomp"));
    c.env_remove("INFOCOMP_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

/// Parses the single data row of a CSV report into `(header, value)` pairs.
fn row(stdout: &str) -> Vec<(String, String)> {
    let mut lines = stdout.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let values: Vec<&str> = lines.next().unwrap().split(',').collect();
    header.iter().zip(values).map(|(h, v)| (h.to_string(), v.to_string())).collect()
}

fn field(stdout: &str, key: &str) -> String {
    row(stdout).into_iter().find(|(k, _)| k == key).unwrap().1
}

#[test]
fn fingerprint_full_space_and_channels() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["synth", "--kind", "separated", "--k", "4", "--copies", "8", "--d", "3", "--out", p(&d.join("sep"))]);
    let set = d.join("sep/set");
    ok(&["fingerprint", "--input", p(&set), "--out", p(&d.join("fp"))]);
    assert_eq!(io::read_fingerprint(d.join("fp"), false).unwrap().len(), 32);
    ok(&["fingerprint", "--input", p(&set), "--dims", "0,2", "--out", p(&d.join("chs"))]);
    let made = io::artifact_dirs(d.join("chs")).unwrap();
    assert_eq!(made, [d.join("chs/ch0"), d.join("chs/ch2")]);
    assert_eq!(io::read_fingerprint(&made[1], false).unwrap().space_id().channel, Some(2));
    ok(&["fingerprint", "--input", p(&set), "--dims", "all", "--out", p(&d.join("all"))]);
    assert_eq!(io::artifact_dirs(d.join("all")).unwrap().len(), 3);
    let sub = d.join("sub");
    ok(&["fingerprint", "--input", p(&set), "--sample", "10", "--out", p(&sub)]);
    assert_eq!(io::read_manifest(&sub).unwrap().n, 10);
}

#[test]
fn output_dir_resolves_relative_out() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["--output-dir", p(dir.path()), "synth", "--kind", "separated", "--out", "sep"]);
    assert!(dir.path().join("sep/set/manifest.json").is_file());
}

#[test]
fn missing_input_is_a_validation_exit() {
    let out = run(&["fingerprint", "--input", "/nonexistent/set", "--out", "/tmp/unused"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("does not exist"));
}

#[test]
fn bad_flags_are_validation_exits() {
    assert_eq!(code(&run(&["compare", "--a", "x"])), 2);
    let out = bin()
        .env("INFOCOMP_THREADS", "0")
        .args(["synth", "--kind", "nine", "--out", "/tmp/unused-nine"])
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
}

#[test]
fn unreadable_payload_is_an_io_exit() {
    let dir = tempfile::tempdir().unwrap();
    let fp = dir.path().join("fp");
    io::write_fingerprint(&Fingerprint::identity(4), &fp, io::Dtype::F32Le).unwrap();
    std::fs::remove_file(fp.join(io::BC_FILE)).unwrap();
    assert_eq!(code(&run(&["info", "--input", p(&fp)])), 1);
}

#[test]
fn compare_self_and_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["synth", "--kind", "separated", "--out", p(&d.join("sep"))]);
    let set = d.join("sep/set");
    ok(&["fingerprint", "--input", p(&set), "--out", p(&d.join("fp"))]);
    let out = ok(&["compare", "--a", p(&d.join("fp")), "--b", p(&d.join("fp"))]);
    assert_eq!(field(&out, "measure"), "nmi");
    assert_eq!(field(&out, "estimator"), "kt_bound");
    assert!((field(&out, "value").parse::<f64>().unwrap() - 1.0).abs() < 1e-12);
    // A posterior set is fingerprinted on the fly.
    let out = ok(&["compare", "--a", p(&set), "--b", p(&d.join("fp")), "--measure", "vi"]);
    assert!(field(&out, "value").parse::<f64>().unwrap().abs() < 1e-6);

    ok(&["--seed", "1", "fingerprint", "--input", p(&set), "--sample", "20", "--out", p(&d.join("s1"))]);
    ok(&["--seed", "2", "fingerprint", "--input", p(&set), "--sample", "20", "--out", p(&d.join("s2"))]);
    let out = run(&["compare", "--a", p(&d.join("s1")), "--b", p(&d.join("s2"))]);
    assert_eq!(code(&out), 2);
}

#[test]
fn compare_undefined_is_success() {
    let dir = tempfile::tempdir().unwrap();
    let ones = dir.path().join("ones");
    let id = dir.path().join("id");
    io::write_fingerprint(&Fingerprint::ones(6), &ones, io::Dtype::F32Le).unwrap();
    io::write_fingerprint(&Fingerprint::identity(6), &id, io::Dtype::F32Le).unwrap();
    let out = ok(&["compare", "--a", p(&ones), "--b", p(&id)]);
    assert_eq!(field(&out, "value"), "undefined");
    assert_eq!(field(&out, "undefined_reason"), "zero_self_information");
    let out = ok(&["--format", "json", "compare", "--a", p(&ones), "--b", p(&id)]);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["value"], "undefined");
}

#[test]
fn exact_triangle_counterexample_distances() {
    let f = |n: &str| fixture("triangle").join(n);
    let vi = |a: &str, b: &str| -> f64 {
        let out = ok(&["compare", "--exact", "--measure", "vi", "--a", p(&f(a)), "--b", p(&f(b))]);
        assert_eq!(field(&out, "estimator"), "exact_discrete");
        field(&out, "value").parse().unwrap()
    };
    assert!((vi("u.csv", "w.csv") - 2.0).abs() < 1e-12);
    assert!((vi("u.csv", "v.csv") - 0.5).abs() < 1e-12);
    assert!((vi("v.csv", "w.csv") - 0.5).abs() < 1e-12);
}

#[test]
fn compare_mc_reports_std_err() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["synth", "--kind", "so2", "--n", "64", "--members", "2", "--out", p(&d.join("so2"))]);
    let (a, b) = (d.join("so2/sets/m00"), d.join("so2/sets/m01"));
    let out = ok(&["compare-mc", "--a", p(&a), "--b", p(&b), "--n-samples", "500", "--agg-fraction", "0.5"]);
    assert_eq!(field(&out, "estimator"), "monte_carlo");
    let nmi: f64 = field(&out, "value").parse().unwrap();
    assert!(nmi > 0.0 && nmi.is_finite());
    assert!(field(&out, "std_err").parse::<f64>().unwrap() > 0.0);
    assert_eq!(code(&run(&["compare-mc", "--a", p(&a), "--b", p(&b), "--agg-fraction", "0"])), 2);
}

#[test]
fn info_identity_saturates() {
    let dir = tempfile::tempdir().unwrap();
    let fp = dir.path().join("id");
    io::write_fingerprint(&Fingerprint::identity(1024), &fp, io::Dtype::F32Le).unwrap();
    let out = run(&["info", "--input", p(&fp)]);
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!((field(&stdout, "bits").parse::<f64>().unwrap() - 10.0).abs() < 1e-9);
    assert!(String::from_utf8_lossy(&out.stderr).contains("saturates"));
}

#[test]
fn info_kt_and_mc_on_separated_suite() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["synth", "--kind", "separated", "--k", "8", "--copies", "8", "--d", "2", "--out", p(&d.join("sep"))]);
    let out = ok(&["info", "--input", p(&d.join("sep/set")), "--mc", "--n-samples", "4000"]);
    let rows: Vec<Vec<&str>> = out.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 2);
    let (kt, mc, se): (f64, f64, f64) = (rows[0][5].parse().unwrap(), rows[1][5].parse().unwrap(), rows[1][6].parse().unwrap());
    assert!((kt - 3.0).abs() < 1e-3, "kt {kt}");
    assert!((kt - mc).abs() <= 3.0 * se.max(1e-3), "kt {kt} mc {mc} ± {se}");
}

#[test]
fn synth_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for name in ["a", "b"] {
        ok(&["--seed", "7", "synth", "--kind", "so2", "--n", "200", "--members", "2", "--out", p(&d.join(name))]);
    }
    for f in ["sets/m01/means.bin", "sets/m01/stddevs.bin", "angles.csv", "fingerprints/m00/bc.bin"] {
        assert_eq!(std::fs::read(d.join("a").join(f)).unwrap(), std::fs::read(d.join("b").join(f)).unwrap());
    }
    ok(&["--seed", "8", "synth", "--kind", "so2", "--n", "200", "--members", "2", "--out", p(&d.join("c"))]);
    assert_ne!(
        std::fs::read(d.join("a/sets/m01/means.bin")).unwrap(),
        std::fs::read(d.join("c/sets/m01/means.bin")).unwrap()
    );
    ok(&["synth", "--kind", "nine", "--n", "40", "--out", p(&d.join("nine"))]);
    assert_eq!(io::read_posterior_ensemble(d.join("nine")).unwrap().len(), 9);
}

#[test]
fn continuity_of_uniform_circle_is_one() {
    let dir = tempfile::tempdir().unwrap();
    let n = 64;
    let angles: Vec<f64> = (0..n).map(|i| std::f64::consts::TAU * i as f64 / n as f64).collect();
    let means = Array2::from_shape_fn((n, 2), |(i, k)| if k == 0 { angles[i].cos() } else { angles[i].sin() } * 3.0);
    let set = PosteriorSet::new(means, Array2::from_elem((n, 2), 0.2), SampleIds::range(n), SpaceId::new("c")).unwrap();
    io::write_posterior_set(&set, dir.path().join("set")).unwrap();
    io::write_scalar_column(set.sample_ids(), "angle", &angles, dir.path().join("order.csv")).unwrap();
    let out = ok(&["continuity", "--input", p(&dir.path().join("set")), "--order", p(&dir.path().join("order.csv"))]);
    assert!((field(&out, "ratio").parse::<f64>().unwrap() - 1.0).abs() < 1e-9);
}

#[test]
fn fuse_writes_set_trace_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["synth", "--kind", "so2", "--n", "32", "--members", "3", "--out", p(&d.join("so2"))]);
    let ens = d.join("so2/fingerprints");
    let run_fuse = |seed: &str, out: &str| {
        ok(&["--seed", seed, "fuse", "--ensemble", p(&ens), "--steps", "150", "--out", p(&d.join(out))]);
    };
    run_fuse("3", "f1");
    run_fuse("3", "f2");
    let trace = io::read_trace_csv(d.join("f1/trace.csv")).unwrap();
    assert_eq!(trace.len(), 151);
    assert!(trace[150] >= trace[0]);
    let a = io::read_posterior_set(d.join("f1/fused")).unwrap();
    assert_eq!(a, io::read_posterior_set(d.join("f2/fused")).unwrap());
    assert_eq!(a.dim(), 2);
    let report: serde_json::Value = io::read_json(d.join("f1/report.json")).unwrap();
    assert_eq!(report["members"], 3);
    assert!(report["mean_offdiag_bc"].is_number());

    let out = run(&["fuse", "--ensemble", p(&ens), "--lr", "1e300", "--steps", "5", "--out", p(&d.join("bad"))]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("step"));
}

#[test]
fn channels_recovers_planted_groups() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&[
        "synth", "--kind", "planted", "--models", "12", "--groups", "3", "--dims", "4", "--informative", "2", "--n", "200",
        "--out", p(&d.join("pl")),
    ]);
    let out = ok(&[
        "channels", "--ensemble", p(&d.join("pl/models")), "--min-samples", "4", "--truth",
        p(&d.join("pl/channel_groups.csv")), "--out", p(&d.join("ch")),
    ]);
    assert_eq!(field(&out, "channels"), "48");
    assert_eq!(field(&out, "kept"), "24");
    let agreement: f64 = field(&out, "group_agreement").parse().unwrap();
    assert!(agreement >= 0.9, "agreement {agreement}");
    for f in ["similarity.csv", "optics.csv", "report.json"] {
        assert!(d.join("ch").join(f).is_file(), "{f}");
    }
    let (labels, sim) = io::read_labeled_matrix_csv(d.join("ch/similarity.csv")).unwrap();
    assert_eq!(labels.len(), 24);
    assert_eq!(sim.nrows(), 24);

    let out = ok(&["channels", "--ensemble", p(&d.join("pl/models")), "--threshold-bits", "100", "--out", p(&d.join("none"))]);
    assert_eq!(field(&out, "kept"), "0");
    assert_eq!(field(&out, "groups"), "0");
    let report: serde_json::Value = io::read_json(d.join("none/report.json")).unwrap();
    assert_eq!(report["groups"], serde_json::json!([]));
}

#[test]
fn channels_factor_columns() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["synth", "--kind", "separated", "--k", "4", "--copies", "8", "--d", "2", "--out", p(&d.join("m0"))]);
    let ens = d.join("ens");
    std::fs::create_dir(&ens).unwrap();
    std::fs::rename(d.join("m0/set"), ens.join("m0")).unwrap();
    let labels = std::fs::read_to_string(d.join("m0/labels.csv")).unwrap().replace("sample_id,label", "sample_id,point");
    std::fs::write(d.join("factors.csv"), labels).unwrap();
    ok(&[
        "channels", "--ensemble", p(&ens), "--min-samples", "2", "--factors", p(&d.join("factors.csv")), "--out",
        p(&d.join("ch")),
    ]);
    let text = std::fs::read_to_string(d.join("ch/factors.csv")).unwrap();
    assert!(text.starts_with("ref,point\n"));
    assert_eq!(text.lines().count(), 3);
}
