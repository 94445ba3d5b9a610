use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_sramyield");

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

fn run(out: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .arg("--out-dir")
        .arg(out)
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path).unwrap();
    let header = rdr.headers().unwrap().iter().map(String::from).collect();
    let rows = rdr
        .records()
        .map(|r| r.unwrap().iter().map(String::from).collect())
        .collect();
    (header, rows)
}

fn column(rows: &[Vec<String>], k: usize) -> Vec<f64> {
    rows.iter().map(|r| r[k].parse().unwrap()).collect()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

#[test]
fn fit_bundled_dataset_converges_and_emits_curves() {
    let dir = tempfile::tempdir().unwrap();
    let iv = fixture("nch_svt_iv.csv");
    let o = run(dir.path(), &["fit", iv.to_str().unwrap(), "--emit-iv"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report = json(&dir.path().join("fit.json"));
    assert_eq!(report["converged"], true);
    assert!(report["max_rel_error_sat"].as_f64().unwrap() <= 0.12);
    assert_eq!(report["manifest"], "manifest-fit.json");
    let (header, rows) = read_csv(&dir.path().join("fit_iv.csv"));
    assert_eq!(header, ["vgs", "vds", "temp_c", "ids_data", "ids_model", "saturated"]);
    assert_eq!(rows.len(), 284);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("max err") && stdout.contains('%'));
}

#[test]
fn fit_rejects_empty_csv_with_parse_code() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.csv");
    fs::write(&empty, "").unwrap();
    assert_eq!(code(&run(dir.path(), &["fit", empty.to_str().unwrap()])), 2);
    let missing = dir.path().join("missing.csv");
    assert_eq!(code(&run(dir.path(), &["fit", missing.to_str().unwrap()])), 2);
}

#[test]
fn fit_out_of_iterations_exits_3_and_keeps_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let iv = fixture("nch_svt_iv.csv");
    let o = run(dir.path(), &["fit", iv.to_str().unwrap(), "--max-iterations", "1"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert_eq!(json(&dir.path().join("fit.json"))["converged"], false);
}

#[test]
fn single_point_grid_gives_a_single_row_table() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["characterize", "--metric", "access", "--grid", "3e-10"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let ch = json(&dir.path().join("characterization.json"));
    assert_eq!(ch["metric"], "access");
    assert_eq!(ch["samples_per_point"], 200);
    assert_eq!(ch["table"].as_array().unwrap().len(), 1);
}

#[test]
fn characterize_defaults_follow_the_sample_budget() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["characterize", "--metric", "write"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(json(&dir.path().join("characterization.json"))["samples"], 1600);
}

#[test]
fn too_few_samples_is_degenerate() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        code(&run(dir.path(), &["characterize", "--metric", "access", "-n", "5"])),
        4
    );
}

#[test]
fn write_median_target_inverts_to_t0_exp_mu_squared() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(dir.path(), &["characterize", "--metric", "write"])), 0);
    let ch_path = dir.path().join("characterization.json");
    let d = &json(&ch_path)["distribution"];
    let median = d["t0"].as_f64().unwrap() * d["mu_w"].as_f64().unwrap().powi(2).exp();
    let o = run(dir.path(), &["yield", ch_path.to_str().unwrap(), "--target", "0.5"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (header, rows) = read_csv(&dir.path().join("yield.csv"));
    assert_eq!(header, ["constraint", "pf"]);
    let t = column(&rows, 0)[0];
    assert!(((t - median) / median).abs() < 1e-12, "{t} vs {median}");
}

#[test]
fn read_yield_curve_is_nonincreasing_and_range_checked() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(dir.path(), &["characterize", "--metric", "access"])), 0);
    let ch = dir.path().join("characterization.json");
    let o = run(dir.path(), &["yield", ch.to_str().unwrap(), "--points", "40"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (_, rows) = read_csv(&dir.path().join("yield.csv"));
    let pf = column(&rows, 1);
    assert_eq!(pf.len(), 40);
    assert!(pf.windows(2).all(|w| w[1] <= w[0]));

    let o = run(dir.path(), &["yield", ch.to_str().unwrap(), "--constraint", "1e-6"]);
    assert_eq!(code(&o), 5);
    assert!(stderr(&o).contains("outside the characterized range"));
    let o = run(dir.path(), &["yield", ch.to_str().unwrap(), "--target", "1e-30"]);
    assert_eq!(code(&o), 5);
}

#[test]
fn yield_offset_override_changes_read_pf() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(dir.path(), &["characterize", "--metric", "access"])), 0);
    let ch = dir.path().join("characterization.json");
    let off = dir.path().join("offset.json");
    fs::write(&off, r#"{"mu_vos": 0.0, "sigma_vos": 0.04}"#).unwrap();
    let args = ["yield", ch.to_str().unwrap(), "--constraint", "3e-10"];
    assert_eq!(code(&run(dir.path(), &args)), 0);
    let base = column(&read_csv(&dir.path().join("yield.csv")).1, 1)[0];
    let mut wide = args.to_vec();
    wide.extend(["--offset", off.to_str().unwrap()]);
    assert_eq!(code(&run(dir.path(), &wide)), 0);
    let widened = column(&read_csv(&dir.path().join("yield.csv")).1, 1)[0];
    assert!(widened > base);
}

#[test]
fn compare_flags_zero_failure_rows() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        dir.path(),
        &["compare", "--metric", "access", "--constraint", "9e-10", "-n", "2000"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (header, rows) = read_csv(&dir.path().join("compare.csv"));
    assert_eq!(
        header,
        [
            "constraint",
            "pf_analytical",
            "pf_mc",
            "mc_lo",
            "mc_hi",
            "rel_error",
            "oracle",
            "flag"
        ]
    );
    assert_eq!(rows[0][2], "0e0");
    assert_eq!(rows[0][5], "");
    assert_eq!(rows[0][6], "closed");
    assert_eq!(rows[0][7], "zero_failures");
}

#[test]
fn sweep_single_point_normalizes_to_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        dir.path(),
        &["sweep", "--axis", "vdd", "--values", "0.5", "--metric", "write"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (header, rows) = read_csv(&dir.path().join("sweep.csv"));
    assert_eq!(header, ["axis_value", "constraint", "normalized"]);
    assert_eq!(column(&rows, 2), [1.0]);
}

#[test]
fn underdrive_sweep_slows_reads_monotonically() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        dir.path(),
        &[
            "sweep",
            "--axis",
            "vwl",
            "--values",
            "0.5,0.475,0.45,0.425,0.4",
            "--metric",
            "access",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let t = column(&read_csv(&dir.path().join("sweep.csv")).1, 1);
    assert!(t.windows(2).all(|w| w[1] > w[0]), "{t:?}");
}

#[test]
fn wrong_assist_direction_names_the_point() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        dir.path(),
        &["sweep", "--axis", "vwl", "--values", "0.5,0.55", "--metric", "access"],
    );
    assert_eq!(code(&o), 5);
    assert!(stderr(&o).contains("vwl = 0.55"));
}

#[test]
fn temperature_sweep_warns_about_fixed_constants() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        dir.path(),
        &[
            "--json-logs",
            "sweep",
            "--axis",
            "temperature",
            "--values",
            "25,85",
            "--metric",
            "access",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let logs: Vec<serde_json::Value> = stderr(&o)
        .lines()
        .map(|l| serde_json::from_str(l).expect("one JSON object per log line"))
        .collect();
    assert!(logs
        .iter()
        .any(|l| l["level"] == "WARN" && l["msg"].as_str().unwrap().contains("temperature")));
}

#[test]
fn qq_reports_tail_correlation() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        dir.path(),
        &["qq", "--metric", "write", "-n", "5000", "--max-rows", "500"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (header, rows) = read_csv(&dir.path().join("qq.csv"));
    assert_eq!(header, ["theoretical", "empirical"]);
    assert_eq!(rows.len(), 500);
    let s = json(&dir.path().join("qq.json"));
    assert_eq!(s["tail"], "upper");
    assert!(s["correlation"].as_f64().unwrap() > 0.99);
}

#[test]
fn mc_export_matches_the_count() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        dir.path(),
        &[
            "--seed",
            "9",
            "mc",
            "--metric",
            "access",
            "--constraint",
            "2.5e-10",
            "-n",
            "3000",
            "--export-samples",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let result = json(&dir.path().join("mc.json"));
    let (header, rows) = read_csv(&dir.path().join("samples.csv"));
    assert_eq!(header, ["i", "vth_n", "vth_p", "v_os", "metric", "fail"]);
    assert_eq!(rows.len(), 3000);
    let fails = rows.iter().filter(|r| r[5] == "true").count() as u64;
    assert_eq!(result["failures"].as_u64().unwrap(), fails);
    assert!(result.get("wall_time").is_none());
    assert_eq!(json(&dir.path().join("manifest-mc.json"))["seed"], 9);

    // the same count without export
    let o = run(
        dir.path(),
        &[
            "--seed",
            "9",
            "mc",
            "--metric",
            "access",
            "--constraint",
            "2.5e-10",
            "-n",
            "3000",
        ],
    );
    assert_eq!(code(&o), 0);
    assert_eq!(json(&dir.path().join("mc.json"))["failures"].as_u64().unwrap(), fails);
}

#[test]
fn write_constraint_past_the_horizon_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        dir.path(),
        &["mc", "--metric", "write", "--constraint", "1", "-n", "100"],
    );
    assert_eq!(code(&o), 5);
}

#[test]
fn bad_configs_are_parse_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cell = dir.path().join("cell.json");
    fs::write(&cell, r#"{"schema": 1, "vdd": 0.5}"#).unwrap();
    let o = run(
        dir.path(),
        &[
            "mc",
            "--metric",
            "access",
            "--constraint",
            "3e-10",
            "--cell",
            cell.to_str().unwrap(),
        ],
    );
    assert_eq!(code(&o), 2);
    let ch = dir.path().join("ch.json");
    fs::write(&ch, "not json").unwrap();
    assert_eq!(code(&run(dir.path(), &["yield", ch.to_str().unwrap()])), 2);
    assert_eq!(
        code(&run(dir.path(), &["mc", "--metric", "sideways", "--constraint", "1"])),
        2
    );
}

#[test]
fn manifest_records_every_output_digest() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(dir.path(), &["qq", "--metric", "access", "-n", "2000"])), 0);
    let m = json(&dir.path().join("manifest-qq.json"));
    assert_eq!(m["seed"], 1);
    assert!(m["config_digests"]["bundled:default_cell"].is_string());
    for out in m["outputs"].as_array().unwrap() {
        let bytes = fs::read(dir.path().join(out["path"].as_str().unwrap())).unwrap();
        let text = String::from_utf8(bytes).unwrap();
        assert!(text.contains("manifest-qq.json"));
        assert_eq!(out["sha256"].as_str().unwrap().len(), 64);
    }
}

#[test]
fn reruns_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["characterize", "--metric", "access", "-n", "300"];
    assert_eq!(code(&run(a.path(), &args)), 0);
    assert_eq!(code(&run(b.path(), &args)), 0);
    let name = "characterization.json";
    assert_eq!(
        fs::read(a.path().join(name)).unwrap(),
        fs::read(b.path().join(name)).unwrap()
    );
}
