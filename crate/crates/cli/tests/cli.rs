use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

fn conic(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_conic")).args(args).output().expect("binary runs")
}

fn report(args: &[&str]) -> Value {
    let out = conic(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("report is JSON")
}

fn assert_schema(command: &str, report: &Value) {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join(format!("schemas/{command}.schema.json"));
    let schema: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    let validator = jsonschema::validator_for(&schema).expect("schema compiles");
    let errors: Vec<String> = validator.iter_errors(report).map(|e| format!("{} at {}", e, e.instance_path)).collect();
    assert!(errors.is_empty(), "{command} report violates its schema: {errors:#?}");
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn graph_path_of_three() {
    let r = report(&["graph", "--in", path_str(&data("p3.json"))]);
    assert_schema("graph", &r);
    let res = &r["result"];
    assert!((res["cheeger"]["h"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert!((res["spectral_gap"].as_f64().unwrap() - 1.0).abs() < 1e-9);
    assert_eq!(res["cheeger_gap"]["lower_ok"], true);
    assert_eq!(r["config"]["global"]["seed"], 0);
}

#[test]
fn graph_empty_is_a_validation_failure() {
    let out = conic(&["graph", "--in", path_str(&data("empty.json"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn graph_malformed_json_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\"vertices\": [").unwrap();
    assert_eq!(conic(&["graph", "--in", path_str(&bad)]).status.code(), Some(2));
    let missing = dir.path().join("missing.json");
    assert_eq!(conic(&["graph", "--in", path_str(&missing)]).status.code(), Some(2));
}

#[test]
fn graph_k2_warns_about_upper_bound() {
    let out = conic(&["graph", "--in", path_str(&data("k2.json"))]);
    assert!(out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.lines().any(|l| l.starts_with("WARNING") && l.contains("upper_ok=false")), "{stderr}");
}

#[test]
fn enumeration_cap_is_enforced() {
    let out = conic(&["graph", "--in", path_str(&data("p3.json")), "--enum-cap", "2"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn cover_patching_constants() {
    let r = report(&["cover", "--in", path_str(&data("path_cover.json")), "--s-c", "1"]);
    assert_schema("cover", &r);
    let res = &r["result"];
    assert_eq!(res["good"], true);
    // Q1 = 2, Q2 = 2, S_d = 1/2: 1·2·2·(1 + ½·2·16) = 68.
    assert!((res["patching"]["dirichlet"].as_f64().unwrap() - 68.0).abs() < 1e-9);
    assert!((res["patching"]["neumann"].as_f64().unwrap() - 272.0).abs() < 1e-9);
}

#[test]
fn heat_flat_plane_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = conic(&[
        "heat",
        "--cone",
        path_str(&data("flat2d.json")),
        "--times",
        "0.1,0.5,1",
        "--out",
        path_str(dir.path()),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_schema("heat", &r);
    assert_eq!(r["result"]["fit"]["pass"], true);
    let c2 = r["result"]["fit"]["constants"]["c2"].as_f64().unwrap();
    assert!((c2 - 0.25).abs() < 0.025, "c2 = {c2}");
    let csv = std::fs::read_to_string(dir.path().join("kernel.csv")).unwrap();
    assert!(csv.starts_with("t,source,node,radius,distance,value\n"));
    assert_eq!(r["config"]["cone"]["radial_steps"], 80);
}

#[test]
fn green_three_dimensional_cone() {
    let r = report(&["green", "--in", path_str(&data("flat3d.json")), "--source-radius", "3"]);
    assert_schema("green", &r);
    assert_eq!(r["result"]["positive"], true);
    let c = r["result"]["bound_constant"].as_f64().unwrap() * 4.0 * std::f64::consts::PI;
    assert!(c > 0.9 && c < 1.5, "4π·C = {c}");
}

#[test]
fn green_rejects_planar_cone() {
    let out = conic(&["green", "--in", path_str(&data("flat2d.json"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn toric_z3_pipeline() {
    let r = report(&["toric", "--fan", path_str(&data("z3.json"))]);
    assert_schema("toric", &r);
    let res = &r["result"];
    assert_eq!(res["gorenstein"]["covector"], serde_json::json!([0, 0, 1]));
    assert_eq!(res["triangulation"]["basic"], true);
    assert_eq!(res["interior_points"], 1);
    assert!(res["invariant_a"]["divisor_sum"].as_f64().unwrap() < 0.0);
}

#[test]
fn toric_a1_value() {
    let r = report(&["toric", "--in", path_str(&data("a1.json"))]);
    let a = r["result"]["invariant_a"]["divisor_sum"].as_f64().unwrap();
    assert!((a + 4.0).abs() < 1e-12, "A = {a}");
}

#[test]
fn toric_non_gorenstein_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let fan = dir.path().join("fan.json");
    std::fs::write(&fan, r#"{"dim":3,"rays":[[0,0,1],[1,0,1],[0,1,1],[1,1,2]],"omega_link":1.0}"#).unwrap();
    let out = conic(&["toric", "--fan", path_str(&fan)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("not Gorenstein"));
}

#[test]
fn bp_table_is_byte_exact() {
    let out = conic(&["bp", "--m", "3", "--k-range", "6..8"]);
    assert!(out.status.success());
    assert_eq!(
        String::from_utf8(out.stdout).unwrap(),
        "m,k,se_ok,resolvable,blowup_count,family_count\n3,6,false,true,2,\n3,7,true,true,2,2\n3,8,true,false,2,\n"
    );
    let r = report(&["bp", "--m", "3", "--k-range", "3..12", "--format", "json", "--exponents", "3,3,3,7"]);
    assert_schema("bp", &r);
    assert_eq!(r["result"]["table"].as_array().unwrap().len(), 10);
    assert_eq!(r["result"]["brieskorn_pham"]["degree"], 21);
    assert_eq!(r["result"]["brieskorn_pham"]["cy_link_condition"], true);
}

#[test]
fn bp_inhomogeneous_polynomial() {
    let r = report(&["bp", "--weights", "1,1", "--monomials", "2,0;0,3", "--format", "json"]);
    assert_eq!(r["result"]["polynomial"]["homogeneous"], false);
    assert!(r["result"]["polynomial"]["cy_link_condition"].is_null());
    assert_eq!(conic(&["bp", "--m", "3"]).status.code(), Some(2));
    assert_eq!(conic(&["bp", "--m", "3", "--k-range", "9..3"]).status.code(), Some(2));
}

#[test]
fn cone_reports_are_reproducible() {
    let cone = data("flat2d.json");
    let args = ["cone", "--in", path_str(&cone), "--samples", "15", "--seed", "7"];
    let a = conic(&args);
    let b = conic(&args);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let r: Value = serde_json::from_slice(&a.stdout).unwrap();
    assert_schema("cone", &r);
    assert_eq!(r["result"]["sampling"]["seed"], 7);
    let c = conic(&["cone", "--in", path_str(&cone), "--samples", "15", "--seed", "8"]);
    assert_ne!(a.stdout, c.stdout);
}

#[test]
fn report_runs_a_job_file() {
    let r = report(&["report", "--in", path_str(&data("jobs.json")), "--workers", "2"]);
    assert_schema("report", &r);
    assert_eq!(r["result"]["failed"], 0);
    let jobs = r["result"]["jobs"].as_array().unwrap();
    assert_eq!(jobs.len(), 3);
    assert_eq!(jobs[0]["name"], "p3");
    assert_schema("graph", &jobs[0]["report"]);
    assert_schema("toric", &jobs[1]["report"]);
}

#[test]
fn bad_flags_exit_2() {
    assert_eq!(conic(&["graph", "--bogus"]).status.code(), Some(2));
    assert_eq!(conic(&["graph", "--in", path_str(&data("p3.json")), "--tol-rel", "-1"]).status.code(), Some(2));
}
