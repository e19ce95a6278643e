use std::path::PathBuf;
use std::process::Command;

use vlc_precoding::channel::build_channel;
use vlc_precoding::metrics::audit;
use vlc_precoding::sweep::{
    default_layout, run_sweep, uses_default_layout, PrecoderKind, SweepOutcome, SweepSpec,
};

mod common;

fn both(text: &str) -> SweepOutcome {
    let spec = SweepSpec::new(15.0, 30.0, 2.0, vec![PrecoderKind::Zf, PrecoderKind::Olp]);
    run_sweep(&common::case(text), &spec).unwrap()
}

fn min_sinr(out: &SweepOutcome, kind: PrecoderKind) -> Vec<f64> {
    out.rows
        .iter()
        .filter(|r| r.precoder == kind)
        .map(|r| r.outcome.as_ref().unwrap().min_sinr)
        .collect()
}

fn rates(out: &SweepOutcome, kind: PrecoderKind) -> Vec<f64> {
    out.rows
        .iter()
        .filter(|r| r.precoder == kind)
        .map(|r| r.outcome.as_ref().unwrap().rate_per_ue)
        .collect()
}

#[test]
fn shipped_scenarios_use_the_assumed_layout() {
    for text in [common::CASE1, common::CASE2] {
        let sc = common::case(text);
        assert!(uses_default_layout(&sc));
        let ch = build_channel(&sc).unwrap();
        // Every UE sees at least one LED and the channel has full row rank.
        let sv = ch.gains().singular_values();
        assert!(sv.min() > 1e-3 * sv.max());
    }
    assert_eq!(default_layout().len(), 6);
}

#[test]
fn olp_dominates_and_rates_grow_with_power() {
    for text in [common::CASE1, common::CASE2] {
        let out = both(text);
        assert_eq!(out.rows.len(), 16);
        assert_eq!(out.failed_rows(), 0);
        let (zf, olp) = (
            min_sinr(&out, PrecoderKind::Zf),
            min_sinr(&out, PrecoderKind::Olp),
        );
        for (z, o) in zf.iter().zip(&olp) {
            assert!(*o >= z * (1.0 - 1e-6));
        }
        for kind in [PrecoderKind::Zf, PrecoderKind::Olp] {
            let r = rates(&out, kind);
            assert!(r.windows(2).all(|w| w[1] >= w[0]), "{kind:?}: {r:?}");
        }
        let sc = common::case(text);
        for row in &out.rows {
            let ch = build_channel(&sc.with_uniform_power(row.p_dbm, row.p_dbm + 20.0).unwrap())
                .unwrap();
            assert!(audit(&ch, &row.outcome.as_ref().unwrap().precoder).passed());
        }
    }
}

#[test]
fn close_ues_widen_the_gap() {
    let ratio = |text| {
        let out = both(text);
        let (zf, olp) = (
            min_sinr(&out, PrecoderKind::Zf),
            min_sinr(&out, PrecoderKind::Olp),
        );
        olp.iter()
            .zip(&zf)
            .map(|(o, z)| o / z)
            .collect::<Vec<f64>>()
    };
    let (far, close) = (ratio(common::CASE1), ratio(common::CASE2));
    assert!(close[0] > far[0]);
    assert!(close[0] > 10.0);
    // The advantage shrinks as the power grows.
    for r in [&far, &close] {
        assert!(r.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9)), "{r:?}");
    }
}

fn binary() -> Command {
    Command::new(env!("CARGO_BIN_EXE_vlc-precode"))
}

fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("scenarios")
        .join(name)
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("vlc-precode-tests-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

#[test]
fn cli_check_prints_the_channel() {
    let out = binary()
        .args(["check", "--scenario"])
        .arg(scenario_path("case1.json"))
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("quantity,index,led_1"));
    assert!(text.contains("noise_std_a"));
}

#[test]
fn cli_exit_codes() {
    let bad = scratch("bad.json");
    std::fs::write(&bad, r#"{"room": {"x_m": 5}}"#).unwrap();
    let st = binary()
        .args(["check", "--scenario"])
        .arg(&bad)
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(2));

    let st = binary()
        .args(["sweep", "--scenario"])
        .arg(scenario_path("case1.json"))
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(2));

    let st = binary()
        .args([
            "sweep",
            "--precoder",
            "zf",
            "--p-start",
            "20",
            "--p-end",
            "15",
            "--p-step",
            "1",
            "--scenario",
        ])
        .arg(scenario_path("case1.json"))
        .arg("--out")
        .arg(scratch("never.csv"))
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(2));
}

#[test]
fn cli_sweep_writes_table_trace_and_metadata() {
    let (csv, trace) = (scratch("sweep.csv"), scratch("sweep.tsv"));
    let st = binary()
        .args([
            "sweep",
            "--precoder",
            "both",
            "--p-start",
            "15",
            "--p-end",
            "17",
            "--p-step",
            "2",
            "--scenario",
        ])
        .arg(scenario_path("case2.json"))
        .arg("--out")
        .arg(&csv)
        .arg("--trace")
        .arg(&trace)
        .status()
        .unwrap();
    assert!(st.success());
    let table = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(table.lines().count(), 5);
    let meta = std::fs::read_to_string(scratch("sweep.csv.meta.json")).unwrap();
    let meta: serde_json::Value = serde_json::from_str(&meta).unwrap();
    assert_eq!(meta["led_layout"], "ASSUMED");
    let trace = std::fs::read_to_string(&trace).unwrap();
    assert!(trace.lines().skip(1).all(|l| l.split('\t').count() == 6));
}

#[test]
fn cli_random_ues_are_seeded() {
    let run = |name: &str, seed: &str| {
        let csv = scratch(name);
        let st = binary()
            .args([
                "sweep",
                "--precoder",
                "zf",
                "--p-start",
                "20",
                "--p-end",
                "20",
                "--p-step",
                "1",
            ])
            .args(["--random-ues", "3", "--seed", seed, "--scenario"])
            .arg(scenario_path("case1.json"))
            .arg("--out")
            .arg(&csv)
            .status()
            .unwrap();
        let meta = std::fs::read_to_string(scratch(&format!("{name}.meta.json"))).unwrap();
        (st, meta)
    };
    let (_, a) = run("r1.csv", "42");
    let (_, b) = run("r2.csv", "42");
    let va: serde_json::Value = serde_json::from_str(&a).unwrap();
    let vb: serde_json::Value = serde_json::from_str(&b).unwrap();
    assert_eq!(va["random_ue_seed"], 42);
    assert_eq!(va["receivers"], vb["receivers"]);
    assert_eq!(va["receivers"].as_array().unwrap().len(), 3);
}
