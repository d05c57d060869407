use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_normsample"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn lines(path: &Path) -> usize {
    fs::read_to_string(path).unwrap().lines().filter(|l| !l.trim().is_empty()).count()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn gen_lin_relu_writes_signed_basis_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(tmp.path(), &["gen", "--kind", "lin-relu", "--k", "8", "--out", "h8"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let dir = tmp.path().join("h8");
    // header line plus one line per atom
    assert_eq!(lines(&dir.join("instance.jsonl")), 17);
    assert_eq!(lines(&dir.join("queries.jsonl")), 16);
    let m = json(&dir.join("manifest.json"));
    assert_eq!(m["command"], "gen");
    assert_eq!(m["config"]["kind"], "lin-relu");
    assert_eq!(m["config"]["reg"], "l1");
    assert_eq!(m["artifacts"].as_array().unwrap().len(), 3);
}

#[test]
fn gen_moment_curve_has_three_queries_per_atom() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(tmp.path(), &["gen", "--kind", "moment-curve", "--n", "6", "--d", "2", "--out", "mc"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(lines(&tmp.path().join("mc/instance.jsonl")), 7);
    assert_eq!(lines(&tmp.path().join("mc/queries.jsonl")), 18);
}

#[test]
fn gen_rejects_bad_params_and_unknown_kind() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(tmp.path(), &["gen", "--kind", "lin-relu", "--k", "1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("k must be >= 2"));
    let out = run(tmp.path(), &["gen", "--kind", "no-such-kind", "--k", "4"]);
    assert_eq!(out.status.code(), Some(1));
    let out = run(tmp.path(), &["frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn sample_single_atom_and_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("one.jsonl"), "{\"dim\":2,\"n\":1}\n{\"a\":[3.0,4.0],\"p\":1.0}\n").unwrap();
    let out = run(tmp.path(), &["sample", "--instance", "one.jsonl", "--m", "3", "--out", "s"]);
    assert!(out.status.success());
    let text = fs::read_to_string(tmp.path().join("s/samples.jsonl")).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| *r == rows[0]));
    let v: Value = serde_json::from_str(rows[0]).unwrap();
    assert_eq!(v["w"].as_f64(), Some(1.0));

    run(tmp.path(), &["gen", "--kind", "coupon-relu", "--d", "16", "--k", "16", "--out", "cp"]);
    for d in ["a", "b"] {
        let out = run(tmp.path(), &["--seed", "9", "sample", "--instance", "cp", "--m", "50", "--out", d]);
        assert!(out.status.success());
    }
    for f in ["samples.jsonl", "manifest.json"] {
        assert_eq!(
            fs::read(tmp.path().join("a").join(f)).unwrap(),
            fs::read(tmp.path().join("b").join(f)).unwrap()
        );
    }
}

#[test]
fn sqnorm_weights_stay_below_two_on_heavy_norms() {
    let tmp = tempfile::tempdir().unwrap();
    let mut text = String::from("{\"dim\":1,\"n\":30}\n");
    for i in 0..30 {
        text += &format!("{{\"a\":[{}],\"p\":{}}}\n", 10f64.powi(i - 10), 1.0 / 30.0);
    }
    fs::write(tmp.path().join("heavy.jsonl"), text).unwrap();
    let out = run(
        tmp.path(),
        &["sample", "--instance", "heavy.jsonl", "--score", "sqnorm", "--m", "2000", "--out", "s"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for line in fs::read_to_string(tmp.path().join("s/samples.jsonl")).unwrap().lines() {
        let v: Value = serde_json::from_str(line).unwrap();
        let w = v["w"].as_f64().unwrap();
        assert!(w > 0.0 && w <= 2.0, "w = {w}");
    }
}

#[test]
fn malformed_instance_reports_line_number() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("bad.jsonl"), "{\"dim\":2,\"n\":2}\n{\"a\":[1.0,0.0],\"p\":0.5}\n{\"a\":[1.0],\"p\":0.5}\n").unwrap();
    let out = run(tmp.path(), &["sample", "--instance", "bad.jsonl", "--m", "3"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn eval_exhaustive_sample_and_coupon_miss() {
    let tmp = tempfile::tempdir().unwrap();
    run(tmp.path(), &["gen", "--kind", "coupon-relu", "--d", "64", "--k", "64", "--out", "cp"]);

    // every atom once with unit weight reproduces the uniform objective exactly
    let mut all = String::new();
    for i in 0..64 {
        let mut a = vec!["0.0"; 64];
        a[i] = "1.0";
        all += &format!("{{\"atom_index\":{i},\"a\":[{}],\"w\":1.0,\"s\":2.0}}\n", a.join(","));
    }
    fs::write(tmp.path().join("all.jsonl"), &all).unwrap();
    let out = run(tmp.path(), &["eval", "--hard", "cp", "--sample", "all.jsonl", "--eps", "0.1", "--out", "e0"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r = json(&tmp.path().join("e0/eval.json"));
    assert!(r["max_error"].as_f64().unwrap() < 1e-12);
    assert_eq!(r["pass"], true);

    // atom 0 missed: the stored query sees no loss in the sample
    let missed: String = all.lines().skip(1).map(|l| format!("{l}\n")).collect();
    fs::write(tmp.path().join("missed.jsonl"), &missed).unwrap();
    run(tmp.path(), &["eval", "--hard", "cp", "--sample", "missed.jsonl", "--eps", "0.5", "--out", "e1"]);
    let r = json(&tmp.path().join("e1/eval.json"));
    assert!((r["max_error"].as_f64().unwrap() - 0.6).abs() < 1e-12);
    assert_eq!(r["pass"], false);
    run(tmp.path(), &["eval", "--hard", "cp", "--sample", "missed.jsonl", "--eps", "0.7", "--out", "e2"]);
    assert_eq!(json(&tmp.path().join("e2/eval.json"))["pass"], true);

    let out = run(tmp.path(), &["verify", "--hard", "cp", "--sample", "missed.jsonl", "--eps", "0.5", "--out", "v"]);
    assert!(out.status.success());
    let v = json(&tmp.path().join("v/verify.json"));
    assert_eq!(v["verdict"]["failed"], true);
}

#[test]
fn eval_dimension_mismatch_is_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    run(tmp.path(), &["gen", "--kind", "lin-relu", "--k", "4", "--out", "h"]);
    fs::write(tmp.path().join("s.jsonl"), "{\"atom_index\":0,\"a\":[1.0,0.0],\"w\":1.0,\"s\":2.0}\n").unwrap();
    let out = run(tmp.path(), &["eval", "--hard", "h", "--sample", "s.jsonl", "--eps", "0.1"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn opt_is_bounded_by_loss_at_origin() {
    let tmp = tempfile::tempdir().unwrap();
    run(tmp.path(), &["gen", "--kind", "lin-logistic", "--k", "8", "--out", "h"]);
    let out = run(tmp.path(), &["--seed", "2", "opt", "--hard", "h", "--out", "o"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r = json(&tmp.path().join("o/opt.json"));
    let v = r["opt_value"].as_f64().unwrap();
    assert!(v > 0.0 && v <= 2f64.ln() + 1e-9);
}

#[test]
fn bench_scaling_is_reproducible_across_threads() {
    let tmp = tempfile::tempdir().unwrap();
    let args = |t: &'static str, out: &'static str| {
        vec![
            "--seed", "3", "--threads", t, "bench", "--kind", "lin-relu", "--k-list", "8,16,32,64",
            "--eps", "0.1", "--delta", "0.1", "--trials", "60", "--out", out,
        ]
    };
    let a = run(tmp.path(), &args("1", "b1"));
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    let b = run(tmp.path(), &args("4", "b4"));
    assert!(b.status.success());
    let summary = fs::read_to_string(tmp.path().join("b1/scaling.csv")).unwrap();
    assert_eq!(summary.lines().count(), 5);
    assert!(summary.starts_with("kind,k,m_star,slope,slope_lo,slope_hi\n"));
    let rates = fs::read_to_string(tmp.path().join("b1/rates.csv")).unwrap();
    assert!(rates.starts_with("run_id,kind,loss,reg,k,eps,delta,m,trials,failures,rate,ci_lo,ci_hi\n"));
    for f in ["rates.csv", "scaling.csv", "plot.dat", "bench.json", "manifest.json"] {
        assert_eq!(
            fs::read(tmp.path().join("b1").join(f)).unwrap(),
            fs::read(tmp.path().join("b4").join(f)).unwrap(),
            "{f} differs"
        );
    }
}

#[test]
fn bench_flags_wide_intervals_and_rejects_unknown_kind() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(
        tmp.path(),
        &["bench", "--kind", "lin-relu", "--k-list", "8,16,32", "--eps", "0.1", "--delta", "0.1", "--trials", "1", "--m-cap", "4096", "--out", "w"],
    );
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stderr).contains("wider than 0.5"));
    let r = json(&tmp.path().join("w/bench.json"));
    assert!(!r["wide"].as_array().unwrap().is_empty());
    let out = run(tmp.path(), &["bench", "--kind", "nope", "--k-list", "8,16,32", "--eps", "0.1", "--delta", "0.1"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn bench_config_file_round_trips_through_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(
        tmp.path().join("cfg.json"),
        "{\"kind\":\"lin-relu\",\"k_list\":[4,8,16],\"eps\":0.2,\"delta\":0.2,\"trials\":40,\"seed\":11}",
    )
    .unwrap();
    assert!(run(tmp.path(), &["bench", "--config", "cfg.json", "--out", "r1"]).status.success());
    // the resolved config in the manifest alone reproduces the run
    let m = json(&tmp.path().join("r1/manifest.json"));
    fs::write(tmp.path().join("again.json"), m["config"].to_string()).unwrap();
    let out = run(tmp.path(), &["bench", "--config", "again.json", "--run-id", m["config"]["run_id"].as_str().unwrap(), "--out", "r2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["rates.csv", "scaling.csv", "bench.json"] {
        assert_eq!(
            fs::read(tmp.path().join("r1").join(f)).unwrap(),
            fs::read(tmp.path().join("r2").join(f)).unwrap()
        );
    }
}
