use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use qd_hom::cli::{read_numeric_csv_file, NumericTable};
use qd_hom::dephasing::{coherence_time, michelson_visibility};
use qd_hom::TrapModelParams;
use tempfile::TempDir;

fn qd_hom(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qd-hom")).current_dir(dir).args(args).output().expect("binary runs")
}

fn table(path: PathBuf) -> NumericTable {
    read_numeric_csv_file(&path).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn row_at(t: &NumericTable, col: &str, x: f64) -> Vec<f64> {
    let i = t.column_index(&[col]).unwrap();
    t.rows.iter().find(|r| (r[i] - x).abs() < 1e-9).unwrap().clone()
}

#[test]
fn coherence_sweep_outputs() {
    let tmp = TempDir::new().unwrap();
    let o = qd_hom(tmp.path(), &["coherence-sweep", "--set", "preset=line-A", "--out", "a"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let t = table(tmp.path().join("a/coherence_sweep.csv"));
    assert_eq!(
        t.headers,
        ["current_uA", "tau_up_ps", "tau_down_ps", "tau_f_ps", "sigma_ueV", "tau_c_ps", "narrowing_ratio"]
    );
    assert_eq!(t.rows.len(), 50);
    let tau_c = t.column(&["tau_c_ps"]).unwrap();
    assert!(tau_c.windows(2).all(|w| w[1] <= w[0]));

    let o = qd_hom(tmp.path(), &["coherence-sweep", "--set", "sweep.currents=[30]", "--out", "b"]);
    assert!(o.status.success());
    let t = table(tmp.path().join("b/coherence_sweep.csv"));
    assert!((t.rows[0][5] - 400.0).abs() < 20.0);

    let o = qd_hom(tmp.path(), &["coherence-sweep", "--set", "sweep.currents=[]", "--out", "c"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!tmp.path().join("c").exists());
}

#[test]
fn csv_conventions() {
    let tmp = TempDir::new().unwrap();
    let o = qd_hom(tmp.path(), &["coherence-sweep", "--set", "sweep.currents={\"start\":100,\"stop\":3000,\"step\":2800}"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(tmp.path().join("out/coherence_sweep.csv")).unwrap();
    assert!(!text.contains('\r'));
    assert!(text.ends_with('\n'));
    // 2900 µA must not pick up a thousands separator
    assert!(text.lines().any(|l| l.starts_with("2900,")), "{text}");
}

#[test]
fn correlate_defaults() {
    let tmp = TempDir::new().unwrap();
    let o = qd_hom(tmp.path(), &["correlate", "--set", "preset=fig3-defaults"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let t = table(tmp.path().join("out/correlate.csv"));
    assert_eq!(
        t.headers,
        ["tau_ps", "g2_source", "g2_perp", "g2_parallel", "g2_perp_conv", "g2_parallel_conv", "v_hom"]
    );
    let zero = row_at(&t, "tau_ps", 0.0);
    assert!((zero[2] - 0.5).abs() < 5e-4);
    assert!((zero[6] - 1.0).abs() < 1e-12);
    for side in [-10_000.0, 10_000.0] {
        assert!((row_at(&t, "tau_ps", side)[3] - 0.75).abs() < 5e-3);
    }
    let conv = t.column(&["g2_parallel_conv"]).unwrap();
    let tau = t.column(&["tau_ps"]).unwrap();
    let min = (0..conv.len()).min_by(|&a, &b| conv[a].total_cmp(&conv[b])).unwrap();
    assert!(tau[min].abs() <= 10.0, "minimum at {}", tau[min]);
    assert_eq!(tau[0], -25_000.0);
}

#[test]
fn correlate_rejects_coarse_grid() {
    let tmp = TempDir::new().unwrap();
    let o = qd_hom(tmp.path(), &["correlate", "--set", "detector.fwhm=20", "--set", "detector.step=50"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("resolution"), "{}", stderr(&o));
    assert!(!tmp.path().join("out").exists());
}

#[test]
fn visibility_map_outputs() {
    let tmp = TempDir::new().unwrap();
    let o = qd_hom(
        tmp.path(),
        &["visibility-map", "--set", "map.delta_t=[100,428,800]", "--set", "map.tau_c=[100,325,800]"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(tmp.path().join("out/visibility_map.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "delta_t_ps/tau_c_ps,100,325,800");
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[0][2] >= 0.70);
    assert!((rows[1][2] - 0.42).abs() < 0.02);
    for j in 1..4 {
        assert!(rows[0][j] > rows[1][j] && rows[1][j] > rows[2][j]);
    }
}

#[test]
fn simulate_is_deterministic_and_matches_analytics() {
    let tmp = TempDir::new().unwrap();
    let args = |out: &'static str| ["simulate", "--seed", "5", "--out", out];
    assert!(qd_hom(tmp.path(), &args("a")).status.success());
    assert!(qd_hom(tmp.path(), &args("b")).status.success());
    for f in ["histogram.csv", "comparison.csv", "simulate_report.json"] {
        assert_eq!(fs::read(tmp.path().join("a").join(f)).unwrap(), fs::read(tmp.path().join("b").join(f)).unwrap());
    }
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(tmp.path().join("a/simulate_report.json")).unwrap()).unwrap();
    assert_eq!(report["mode"], "mzi-orthogonal");
    assert!(report["max_abs_z"].as_f64().unwrap() < 4.0);
    let h = table(tmp.path().join("a/histogram.csv"));
    assert_eq!(h.headers, ["tau_ps", "counts", "normalized_g2"]);
    assert_eq!(h.rows.len(), 501);
    assert!(!tmp.path().join("a/events.csv").exists());

    let o = qd_hom(tmp.path(), &["simulate", "--set", "stream.photons=2000", "--set", "stream.dump_events=true", "--out", "e"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let events = fs::read_to_string(tmp.path().join("e/events.csv")).unwrap();
    assert!(events.starts_with("detector,time_ps\n"));
    assert!(events.lines().skip(1).all(|l| l.starts_with("D1,") || l.starts_with("D2,")));

    let o = qd_hom(tmp.path(), &["simulate", "--set", "stream.pump_rate=0.001", "--out", "c"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!tmp.path().join("c").exists());
}

#[test]
fn hbt_simulation_round_trips_through_fit() {
    let tmp = TempDir::new().unwrap();
    let o = qd_hom(tmp.path(), &["simulate", "--seed", "3", "--set", "stream.mode=hbt", "--out", "sim"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = qd_hom(tmp.path(), &["fit", "--kind", "hbt-lifetime", "--data", "sim/histogram.csv", "--out", "fit"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(tmp.path().join("fit/fit_report.json")).unwrap()).unwrap();
    let tau_r = report["values"]["tau_r"].as_f64().unwrap();
    assert!((tau_r - 800.0).abs() <= 40.0, "{tau_r}");
    assert_eq!(report["kind"], "hbt-lifetime");
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    fs::write(dir.join(name), text).unwrap();
    name.to_string()
}

#[test]
fn fit_coherence_file() {
    let tmp = TempDir::new().unwrap();
    let p = TrapModelParams::line_a();
    let mut text = String::from("current_uA,tau_c_ps\n");
    for k in 0..10 {
        let i = 20.0 + 50.0 * k as f64;
        text.push_str(&format!("{i},{}\n", coherence_time(&p, i).unwrap().tau_c));
    }
    let data = write(tmp.path(), "coh.csv", &text);
    let o = qd_hom(tmp.path(), &["fit", "--set", "fit.kind=coherence", "--data", &data]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(tmp.path().join("out/fit_report.json")).unwrap()).unwrap();
    for (name, truth) in [("tau3", 750.0), ("i0", 300.0), ("sigma_s", 188.0)] {
        let v = report["values"][name].as_f64().unwrap();
        assert!((v - truth).abs() / truth < 1e-3, "{name} = {v}");
    }
    let residuals = table(tmp.path().join("out/fit_residuals.csv"));
    assert_eq!(residuals.rows.len(), 10);
}

#[test]
fn fit_visibility_file() {
    let tmp = TempDir::new().unwrap();
    let mut text = String::from("delay_ps,visibility\n");
    for k in 0..10 {
        let d = k as f64 * 80.0;
        text.push_str(&format!("{d},{}\n", michelson_visibility(d, 400.0)));
    }
    let data = write(tmp.path(), "vis.csv", &text);
    let o = qd_hom(tmp.path(), &["fit", "--kind", "visibility-decay", "--data", &data]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(tmp.path().join("out/fit_report.json")).unwrap()).unwrap();
    assert!((report["values"]["tau_c"].as_f64().unwrap() - 400.0).abs() < 0.4);
}

#[test]
fn fit_input_errors() {
    let tmp = TempDir::new().unwrap();
    let short = write(tmp.path(), "short.csv", "current_uA,tau_c_ps\n10,400\n20,395\n");
    let o = qd_hom(tmp.path(), &["fit", "--kind", "coherence", "--data", &short]);
    assert_eq!(o.status.code(), Some(2));

    let bad = write(tmp.path(), "bad.csv", "current_uA,tau_c_ps\n10,400\n20,395\n30,3 9 0\n40,380\n");
    let o = qd_hom(tmp.path(), &["fit", "--kind", "coherence", "--data", &bad]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 4"), "{}", stderr(&o));

    let o = qd_hom(tmp.path(), &["fit", "--data", &short]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!tmp.path().join("out").exists());
}

#[test]
fn fit_non_convergence_still_writes() {
    let tmp = TempDir::new().unwrap();
    let mut text = String::from("current_uA,tau_c_ps\n");
    for k in 0..6 {
        let i = 20.0 + 80.0 * k as f64;
        text.push_str(&format!("{i},{}\n", coherence_time(&TrapModelParams::line_b(), i).unwrap().tau_c));
    }
    let data = write(tmp.path(), "coh.csv", &text);
    let o = qd_hom(
        tmp.path(),
        &["fit", "--kind", "coherence", "--data", &data, "--set", "fit.max_evaluations=15", "--set", "fit.restarts=1"],
    );
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(tmp.path().join("out/fit_report.json").exists());
    assert!(tmp.path().join("out/fit_residuals.csv").exists());
}

#[test]
fn config_file_and_overrides() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(
        tmp.path(),
        "run.json",
        r#"{
  "preset": "line-B",
  "sweep": { "currents": [50, 100] },
  "output": { "dir": "from-config" }
}
"#,
    );
    let o = qd_hom(tmp.path(), &["coherence-sweep", "--config", &cfg, "--set", "trap.tau3=600"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let t = table(tmp.path().join("from-config/coherence_sweep.csv"));
    let mut p = TrapModelParams::line_b();
    p.tau3 = 600.0;
    assert_eq!(t.rows[1][5], coherence_time(&p, 100.0).unwrap().tau_c);

    let bad = write(tmp.path(), "bad.json", "{ \"source\": { \"tau_c\": 325, \"colour\": 1 } }");
    let o = qd_hom(tmp.path(), &["correlate", "--config", &bad]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("colour"), "{}", stderr(&o));

    let broken = write(tmp.path(), "broken.json", "{\n\"seed\": 1,\n\"trap\": {\n}\n,,\n}");
    let o = qd_hom(tmp.path(), &["correlate", "--config", &broken]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 5"), "{}", stderr(&o));
    assert!(!tmp.path().join("out").exists());

    let o = qd_hom(tmp.path(), &["no-such-command"]);
    assert_eq!(o.status.code(), Some(2));
}
