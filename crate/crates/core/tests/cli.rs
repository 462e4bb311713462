//! End-to-end runs of the `wsched` binary.

use std::path::{Path, PathBuf};
use std::process::Command;

const MINIMAL: &str = r#"
schema = "wsched-scenario/1"
name = "minimal"
horizon = 1000
seeds = [7]

[channel]
rate_bound = 2.0
[[channel.states]]
probability = 1.0
vertices = [[1.0, 0.0], [0.0, 1.0]]

[arrivals]
family = "constant"
bound = 2.0
load = { factor = 0.9, direction = [1.0, 1.0] }

[policy]
name = "mwm"
"#;

fn run(dir: &Path, scenario: &str, args: &[&str]) -> (i32, String, PathBuf) {
    let path = dir.join("scenario.toml");
    std::fs::write(&path, scenario).unwrap();
    let out = dir.join("out");
    let o = Command::new(env!("CARGO_BIN_EXE_wsched"))
        .args(args)
        .arg("--scenario")
        .arg(&path)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    (o.status.code().unwrap(), String::from_utf8_lossy(&o.stderr).into_owned(), out)
}

fn summary(out: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap()
}

#[test]
fn minimal_simulate() {
    let tmp = tempfile::tempdir().unwrap();
    let (code, err, out) = run(tmp.path(), MINIMAL, &["simulate"]);
    assert_eq!(code, 0, "{err}");
    let csvs: Vec<_> = std::fs::read_dir(&out)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_name().to_string_lossy().starts_with("trace_") && e.file_name().to_string_lossy().ends_with(".csv"))
        .collect();
    assert_eq!(csvs.len(), 1);
    let s = summary(&out);
    assert_eq!(s["runs"][0]["seed"], 7);
    assert!((s["load"]["x_star"].as_f64().unwrap() - 0.5).abs() < 1e-8);
    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("trace_seed7.meta.json")).unwrap()).unwrap();
    assert_eq!(meta["scenario_hash"], s["scenario_hash"]);
    let csv = std::fs::read_to_string(out.join("trace_seed7.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1001);
    assert!(csv.starts_with("n,q_1,q_2,qbar_1,qbar_2,mu_1,mu_2,state,r_1,r_2,a_1,a_2,z_1,z_2\n"));
}

#[test]
fn probability_mass_is_validated() {
    let tmp = tempfile::tempdir().unwrap();
    let (code, err, _) = run(tmp.path(), &MINIMAL.replace("probability = 1.0", "probability = 0.9"), &["simulate"]);
    assert_eq!(code, 2);
    assert!(err.contains("channel.states"), "{err}");
}

#[test]
fn zero_load_factor_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let (code, err, _) = run(tmp.path(), &MINIMAL.replace("factor = 0.9", "factor = 0.0"), &["simulate"]);
    assert_eq!(code, 2);
    assert!(err.contains("arrivals.load.factor"), "{err}");
}

#[test]
fn overload_blows_up() {
    let text = MINIMAL
        .replace("factor = 0.9", "factor = 1.2")
        .replace("name = \"mwm\"", "name = \"exp_counterexample\"")
        .replace("horizon = 1000", "horizon = 5000");
    let tmp = tempfile::tempdir().unwrap();
    let (code, err, out) = run(tmp.path(), &text, &["simulate"]);
    assert_eq!(code, 0, "{err}");
    assert_eq!(summary(&out)["runs"][0]["verdict"], "unstable");
}

#[test]
fn seed_override_replaces_the_list() {
    let tmp = tempfile::tempdir().unwrap();
    let text = MINIMAL.replace("seeds = [7]", "seeds = [1, 2, 3]");
    let (code, err, out) = run(tmp.path(), &text, &["necessity", "--seed-override", "42", "--jobs", "2"]);
    assert_eq!(code, 0, "{err}");
    let s = summary(&out);
    assert_eq!(s["seed_override"], 42);
    assert_eq!(s["runs"].as_array().unwrap().len(), 1);
    assert!(out.join("necessity_seed42.json").exists());
    assert!(!out.join("trace_seed42.csv").exists());
}

#[test]
fn jobs_do_not_change_outputs() {
    let text = MINIMAL.replace("seeds = [7]", "seeds = [3, 1, 2, 0]");
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (ca, _, oa) = run(a.path(), &text, &["simulate", "--jobs", "1"]);
    let (cb, _, ob) = run(b.path(), &text, &["simulate", "--jobs", "4"]);
    assert_eq!((ca, cb), (0, 0));
    for name in ["summary.json", "trace_seed1.csv", "stability_seed2.json"] {
        assert_eq!(std::fs::read(oa.join(name)).unwrap(), std::fs::read(ob.join(name)).unwrap(), "{name}");
    }
    let seeds: Vec<u64> = summary(&oa)["runs"].as_array().unwrap().iter().map(|r| r["seed"].as_u64().unwrap()).collect();
    assert_eq!(seeds, vec![3, 1, 2, 0]);
}

#[test]
fn grid_failure_is_a_runtime_error() {
    let text = format!(
        "{MINIMAL}\n[lyapunov]\npotential = \"grid\"\nsteps_per_unit = 256.0\ndrift_samples = 100\nprobe_count = 4\n\
         probe_l1 = [20.0, 40.0]\ngrid = {{ base = [10.0, 10.0], extent = [20.0, 20.0], init_cell = 1.0 }}\n"
    );
    let tmp = tempfile::tempdir().unwrap();
    let (code, err, _) = run(tmp.path(), &text, &["lyapunov"]);
    assert_eq!(code, 3, "{err}");
    assert!(err.contains("column 0, cell 1"), "{err}");
}

#[test]
fn conditions_report_for_constant_policy() {
    let text = MINIMAL.replace("name = \"mwm\"", "name = \"constant\"\nweights = [0.5, 0.5]");
    let tmp = tempfile::tempdir().unwrap();
    let (code, err, out) = run(tmp.path(), &text, &["check-conditions"]);
    assert_eq!(code, 0, "{err}");
    let r: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("conditions.json")).unwrap()).unwrap();
    for level in r["levels"].as_array().unwrap() {
        assert_eq!(level["delta2"], 0.5);
        assert_eq!(level["delta1"], 0.0);
    }
    assert_eq!(summary(&out)["conditions"]["verdicts"]["condition2"], false);
}
