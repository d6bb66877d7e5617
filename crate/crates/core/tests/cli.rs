use std::path::{Path, PathBuf};
use std::process::Command;

use idapbc::config::Config;
use proptest::prelude::*;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_idapbc"))
}

fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

const BUCK: &str = r#"{
  "converter": "buck",
  "controller": {"k": 0.1},
  "schedule": {"reference": [{"t": 0.0, "v_star": 20.0}]},
  "sim": {"t_end": 2.0, "x0": [0.015, 1.15], "record_every": 10},
  "verify": {"x1_range": [0.005, 0.1], "x2_range": [0.4, 1.5], "grid_n": 9}
}"#;

#[test]
fn simulate_writes_csv_and_svg() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "buck_adaptive.json", BUCK);
    let out = dir.path().join("out");
    let st = bin().arg("simulate").arg(&cfg).arg(&out).status().unwrap();
    assert_eq!(st.code(), Some(0));
    let csv = std::fs::read_to_string(out.join("buck_adaptive.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 201);
    assert!(std::fs::read_to_string(out.join("buck_adaptive.svg")).unwrap().starts_with("<svg"));
}

#[test]
fn out_flag_is_honored() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "b.json", BUCK);
    let out = dir.path().join("flag");
    let st = bin().args(["--threads", "2", "simulate"]).arg(&cfg).arg("--out").arg(&out).status().unwrap();
    assert_eq!(st.code(), Some(0));
    assert!(out.join("b.csv").exists());
}

#[test]
fn verify_exit_code_tracks_conditions() {
    let dir = tempfile::tempdir().unwrap();
    let ok = write(dir.path(), "ok.json", BUCK);
    let st = bin().arg("verify").arg(&ok).arg(dir.path()).status().unwrap();
    assert_eq!(st.code(), Some(0));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("verify_ok.json")).unwrap()).unwrap();
    assert_eq!(report["all_pass"], true);

    let bad = write(
        dir.path(),
        "bb_k05.json",
        r#"{"converter": "buck_boost", "controller": {"k": 0.5},
            "schedule": {"reference": [{"t": 0, "v_star": 30}]},
            "verify": {"grid_n": 9}}"#,
    );
    let st = bin().arg("verify").arg(&bad).arg(dir.path()).status().unwrap();
    assert_eq!(st.code(), Some(3));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("verify_bb_k05.json")).unwrap()).unwrap();
    assert_eq!(report["pass"]["c5"], false);
}

#[test]
fn parse_error_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.json", r#"{"converter": "buck", "bogus": 1}"#);
    let out = dir.path().join("out");
    for verb in ["simulate", "verify", "roa"] {
        let st = bin().arg(verb).arg(&cfg).arg(&out).status().unwrap();
        assert_eq!(st.code(), Some(1), "{verb}");
    }
    assert!(!out.exists());
}

#[test]
fn model_error_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "low.json",
        r#"{"converter": "buck", "controller": {"k": 0.1},
            "schedule": {"reference": [{"t": 0, "v_star": 5}]}}"#,
    );
    let st = bin().arg("simulate").arg(&cfg).arg(dir.path()).status().unwrap();
    assert_eq!(st.code(), Some(2));
}

#[test]
fn usage_errors() {
    assert_eq!(bin().arg("frobnicate").status().unwrap().code(), Some(1));
    assert_eq!(bin().args(["experiments", "nope"]).status().unwrap().code(), Some(1));
    assert_eq!(bin().arg("--help").output().unwrap().status.code(), Some(0));
}

#[test]
fn roa_without_passing_level() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "tight.json",
        r#"{"converter": "buck", "controller": {"k": 0.1},
            "schedule": {"reference": [{"t": 0, "v_star": 20}]},
            "roa": {"p_bar": [0.01], "x1_range": [0.0, 0.1], "x2_range": [0.01, 2.5], "grid_n": 100, "horizon": 10}}"#,
    );
    let st = bin().arg("roa").arg(&cfg).arg(dir.path()).status().unwrap();
    assert_eq!(st.code(), Some(3));
    assert!(dir.path().join("roa_tight.svg").exists());
    assert!(dir.path().join("roa_tight_levels.csv").exists());
}

fn reference() -> impl Strategy<Value = serde_json::Value> {
    (0.0f64..100.0, prop::bool::ANY, 0.1f64..40.0).prop_map(|(t, volts, v)| {
        if volts {
            serde_json::json!({"t": t, "v_star": v})
        } else {
            serde_json::json!({"t": t, "x2_star": v / 24.0})
        }
    })
}

fn document() -> impl Strategy<Value = serde_json::Value> {
    (
        prop::sample::select(vec!["buck", "boost", "buck_boost"]),
        0.01f64..5.0,
        prop::collection::vec(reference(), 1..4),
        prop::option::of((1e-4f64..1e-2, 1.0f64..500.0, prop::bool::ANY)),
        prop::option::of(prop::collection::vec(1e-5f64..1e-2, 1..4)),
        prop::option::of(1.0f64..30.0),
        prop::option::of((0.001f64..0.1, 0.5f64..2.0)),
    )
        .prop_map(|(conv, k, refs, sim, roa, gamma, load)| {
            let mut doc = serde_json::json!({
                "converter": conv,
                "controller": {"k": k},
                "schedule": {"reference": refs},
            });
            if let Some((dt, t_end, sat)) = sim {
                doc["sim"] = serde_json::json!({"dt": dt, "t_end": t_end, "saturate": sat, "hold": "continuous"});
            }
            if let Some(p) = roa {
                doc["roa"] = serde_json::json!({"p_bar": p, "n_boundary": 16});
            }
            if let Some(g) = gamma {
                doc["estimator"] = serde_json::json!({"gamma": g, "chi0": 1.0, "sigma": 10.0, "f0": 4.0, "theta0": [0.01, 0.002], "kappa": 1e-4});
            }
            if let Some((g, p)) = load {
                doc["schedule"]["load"] = serde_json::json!([{"t": 10.0, "G": g, "P_cpl": p}]);
                doc["physical"] = serde_json::json!({"E": 24.0, "L": 1e-3, "C": 330e-6, "G": 1.0 / 60.0, "P_cpl": 1.2});
            }
            doc
        })
}

proptest! {
    #[test]
    fn config_round_trip(doc in document()) {
        let cfg = Config::parse(&doc.to_string()).unwrap();
        let back: serde_json::Value = serde_json::from_str(&cfg.to_json()).unwrap();
        prop_assert_eq!(back, doc);
    }
}
