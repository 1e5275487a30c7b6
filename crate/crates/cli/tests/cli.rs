//! End-to-end tests of the `mh` binary: subcommands, file formats, exit
//! codes, and byte-level reproducibility.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::atomic::{AtomicU64, Ordering};

static DIR_SEQ: AtomicU64 = AtomicU64::new(0);

fn workdir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!(
        "mh-cli-test-{}-{}-{}",
        std::process::id(),
        tag,
        DIR_SEQ.fetch_add(1, Ordering::SeqCst)
    ));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn mh(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mh")).args(args).output().unwrap()
}

fn write(path: &Path, content: &str) {
    std::fs::write(path, content).unwrap();
}

const FIXTURE_A: &str = "subject_id,time,event,value\n\
s1,0,enter,\n\
s1,0,cov,1\n\
s1,1,fail,\n\
s2,0,enter,\n\
s2,0,cov,1\n\
s2,3,exit,\n\
s3,0,enter,\n\
s3,2,fail,\n\
s4,0,enter,\n\
s4,1.5,exit,\n";

#[test]
fn estimate_fixture_a_gives_unit_rate_ratio() {
    let dir = workdir("fixture-a");
    let events = dir.join("events.csv");
    write(&events, FIXTURE_A);
    let out_json = dir.join("est.json");
    let out = mh(&[
        "estimate",
        "--events",
        events.to_str().unwrap(),
        "--design",
        "full",
        "--tau",
        "3",
        "--seed",
        "0",
        "--out",
        out_json.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let value: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out_json).unwrap()).unwrap();
    assert!((value["phi_hat"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(value["n"].as_u64().unwrap(), 4);
    assert!(value["sigma2"].as_f64().unwrap().is_finite());
}

#[test]
fn are_m2_is_flat_at_one() {
    let dir = workdir("are");
    let csv = dir.join("are.csv");
    let svg = dir.join("are.svg");
    let out = mh(&[
        "are",
        "--design",
        "srs",
        "--m",
        "2",
        "--f1",
        "0.2",
        "--grid",
        "-3:3:0.1",
        "--out",
        csv.to_str().unwrap(),
        "--svg",
        svg.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut rows = 0;
    for line in text.lines().skip(1) {
        let are: f64 = line.split(',').nth(3).unwrap().parse().unwrap();
        assert!((are - 1.0).abs() < 1e-3, "{}", line);
        rows += 1;
    }
    assert_eq!(rows, 61);
    assert!(std::fs::read_to_string(&svg).unwrap().contains("<polyline"));
}

#[test]
fn mc_single_rep_is_byte_identical() {
    let dir = workdir("mc");
    let config = dir.join("scenario.toml");
    write(
        &config,
        "n = 60\nphi0 = 2.0\ntau = 0.4\nf = [0.8, 0.2]\nseed = 9\nreps = 1\n\n[design]\nkind = \"srs\"\nm = 3\n",
    );
    let out_a = dir.join("a.json");
    let out_b = dir.join("b.json");
    for out in [&out_a, &out_b] {
        let r = mh(&["mc", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    }
    assert_eq!(std::fs::read(&out_a).unwrap(), std::fs::read(&out_b).unwrap());
}

#[test]
fn mc_summary_has_scenario_echo() {
    let dir = workdir("mc-summary");
    let config = dir.join("scenario.toml");
    write(
        &config,
        "n = 80\nphi0 = 1.0\ntau = 0.5\nf = [0.7, 0.3]\nseed = 4\nreps = 6\n\n[design]\nkind = \"full_cohort\"\n",
    );
    let out_json = dir.join("summary.json");
    let echo = dir.join("echo.toml");
    let r = mh(&[
        "mc",
        "--config",
        config.to_str().unwrap(),
        "--echo-config",
        echo.to_str().unwrap(),
        "--out",
        out_json.to_str().unwrap(),
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let value: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out_json).unwrap()).unwrap();
    let summary = &value["summary"];
    assert_eq!(summary["scenario"]["n"].as_u64().unwrap(), 80);
    assert!(summary["excluded"].is_u64());
    assert!(summary["coverage95"].is_f64() || summary["coverage95"].is_u64());
    // echoed config reloads to the same scenario
    let r2 = mh(&["mc", "--config", echo.to_str().unwrap(), "--out", out_json.to_str().unwrap()]);
    assert!(r2.status.success());
}

#[test]
fn pipeline_matches_in_process_library() {
    let dir = workdir("pipeline");
    let events = dir.join("events.csv");
    let sampled = dir.join("sampled.csv");
    let est = dir.join("est.json");
    let sim = mh(&[
        "simulate", "--n", "300", "--phi0", "2.0", "--f1", "0.25", "--tau", "0.4", "--seed", "77",
        "--out", events.to_str().unwrap(),
    ]);
    assert!(sim.status.success(), "{}", String::from_utf8_lossy(&sim.stderr));
    let smp = mh(&[
        "sample", "--events", events.to_str().unwrap(), "--design", "srs", "--m", "3",
        "--seed", "5", "--tau", "0.4", "--out", sampled.to_str().unwrap(),
    ]);
    assert!(smp.status.success(), "{}", String::from_utf8_lossy(&smp.stderr));
    let estr = mh(&[
        "estimate", "--sampled", sampled.to_str().unwrap(), "--n", "300",
        "--out", est.to_str().unwrap(),
    ]);
    assert!(estr.status.success(), "{}", String::from_utf8_lossy(&estr.stderr));
    let cli_value: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&est).unwrap()).unwrap();

    // the same pipeline through the library
    let file = std::fs::File::open(&events).unwrap();
    let records = mh_core::cohort::read_event_csv(file).unwrap();
    let (cohort, _) =
        mh_core::cohort::build_cohort(&records, mh_core::cohort::LevelSet::classical(), 0.4).unwrap();
    let design =
        mh_core::design::DesignSpec::new(mh_core::design::DesignKind::Srs { m: 3 }).unwrap();
    let sampled_lib = mh_core::design::sample_failures(&cohort, &design, 5).unwrap();
    let stats: Vec<mh_core::design::FailureStats> = sampled_lib
        .iter()
        .map(|sf| mh_core::design::FailureStats::from_sampled(sf, 2))
        .collect();
    let lib = mh_core::estimator::estimate(
        &stats,
        cohort.levels(),
        300,
        &mh_core::estimator::EstimateOptions::default(),
    )
    .unwrap();
    assert_eq!(cli_value["phi_hat"].as_f64().unwrap(), lib.phi_hat);
    assert_eq!(cli_value["sigma2"].as_f64().unwrap(), lib.sigma2.unwrap());
}

#[test]
fn baseline_emits_csv_with_se() {
    let dir = workdir("baseline");
    let events = dir.join("events.csv");
    let sampled = dir.join("sampled.csv");
    let baseline = dir.join("baseline.csv");
    write(&events, FIXTURE_A);
    let smp = mh(&[
        "sample", "--events", events.to_str().unwrap(), "--design", "full",
        "--seed", "1", "--tau", "3", "--out", sampled.to_str().unwrap(),
    ]);
    assert!(smp.status.success(), "{}", String::from_utf8_lossy(&smp.stderr));
    let bl = mh(&[
        "baseline", "--sampled", sampled.to_str().unwrap(), "--n", "4",
        "--out", baseline.to_str().unwrap(),
    ]);
    assert!(bl.status.success(), "{}", String::from_utf8_lossy(&bl.stderr));
    let text = std::fs::read_to_string(&baseline).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "t,lambda_hat,omega2_hat,B_hat,se_lambda");
    // phi_hat = 1: jumps 1/4 then 1/2
    let first: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(first[0], "1");
    assert!((first[1].parse::<f64>().unwrap() - 0.25).abs() < 1e-12);
    let second: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert!((second[1].parse::<f64>().unwrap() - 0.75).abs() < 1e-12);
}

#[test]
fn check_verifies_design_identities() {
    let out = mh(&["check", "--n", "7"]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("check full: ok"));
    assert!(text.contains("check srs m=2: ok"));
    assert!(text.contains("check cm m=(1,1): ok"));
}

#[test]
fn exit_codes_are_distinct() {
    let dir = workdir("exits");
    // 1: usage
    let usage = mh(&["estimate", "--bogus-flag"]);
    assert_eq!(usage.status.code(), Some(1));
    // 2: unreadable file
    let io = mh(&[
        "estimate", "--sampled", dir.join("missing.csv").to_str().unwrap(),
    ]);
    assert_eq!(io.status.code(), Some(2));
    // 3: schema violation (bad sampled csv)
    let bad = dir.join("bad.csv");
    write(&bad, "failure_time,n_at_risk,case_id,member_id,level_index,stratum,weight\nx,4,a,a,0,0,1\n");
    let schema = mh(&["estimate", "--sampled", bad.to_str().unwrap()]);
    assert_eq!(schema.status.code(), Some(3));
    // 3: config missing seed for mc
    let cfg = dir.join("noseed.toml");
    write(&cfg, "n = 10\nphi0 = 1.0\ntau = 0.5\nf = [0.8, 0.2]\nreps = 2\n\n[design]\nkind = \"full_cohort\"\n");
    let noseed = mh(&["mc", "--config", cfg.to_str().unwrap()]);
    assert_eq!(noseed.status.code(), Some(3));
    // 4: numerical degeneracy (no exposed subjects -> no finite root)
    let events = dir.join("events.csv");
    write(
        &events,
        "subject_id,time,event,value\na,0,enter,\na,1,fail,\nb,0,enter,\nb,2,exit,\n",
    );
    let degen = mh(&[
        "estimate", "--events", events.to_str().unwrap(), "--design", "full",
        "--tau", "2", "--seed", "0",
    ]);
    assert_eq!(degen.status.code(), Some(4), "{}", String::from_utf8_lossy(&degen.stderr));
}

#[test]
fn simulate_and_sample_are_reproducible() {
    let dir = workdir("repro");
    let a = dir.join("a.csv");
    let b = dir.join("b.csv");
    for out in [&a, &b] {
        let r = mh(&[
            "simulate", "--n", "150", "--phi0", "1.5", "--f1", "0.3", "--tau", "0.5",
            "--seed", "11", "--out", out.to_str().unwrap(),
        ]);
        assert!(r.status.success());
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    let sa = dir.join("sa.csv");
    let sb = dir.join("sb.csv");
    for out in [&sa, &sb] {
        let r = mh(&[
            "sample", "--events", a.to_str().unwrap(), "--design", "cm",
            "--m-per-stratum", "1", "--seed", "3", "--tau", "0.5",
            "--out", out.to_str().unwrap(),
        ]);
        assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    }
    assert_eq!(std::fs::read(&sa).unwrap(), std::fs::read(&sb).unwrap());
}

#[test]
fn stratified_estimate_on_matched_sample() {
    let dir = workdir("stratified");
    let events = dir.join("events.csv");
    // two strata; all sampled sets stay within the case's stratum
    let mut text = String::from("subject_id,time,event,value\n");
    for i in 0..12 {
        let id = format!("s{:02}", i);
        let stratum = if i % 2 == 0 { "u" } else { "v" };
        text.push_str(&format!("{},0,enter,\n{},0,stratum,{}\n", id, id, stratum));
        if i % 3 == 0 {
            text.push_str(&format!("{},0,cov,1\n", id));
        }
        if i < 3 {
            text.push_str(&format!("{},{},fail,\n", id, 0.2 + 0.1 * i as f64));
        }
    }
    write(&events, &text);
    let sampled = dir.join("sampled.csv");
    let r = mh(&[
        "sample", "--events", events.to_str().unwrap(), "--design", "matching",
        "--m-per-stratum", "2,2", "--seed", "8", "--tau", "1", "--out", sampled.to_str().unwrap(),
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let est = mh(&[
        "estimate", "--sampled", sampled.to_str().unwrap(), "--n", "12", "--stratified",
    ]);
    assert!(est.status.success(), "{}", String::from_utf8_lossy(&est.stderr));
    let value: serde_json::Value =
        serde_json::from_slice(&est.stdout).unwrap();
    assert!(value["phi_hat"].as_f64().unwrap() > 0.0);
}
