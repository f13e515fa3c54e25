use std::path::PathBuf;
use std::process::{Command, Output};

use vecboost::scalar::{self, Image};
use vecboost::vbt;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vecboost")).args(args).output().unwrap()
}

fn configs(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../core/configs")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn verify_exit_codes() {
    let ok = run(&["verify", "fd2nchw", "--c", "33", "--h", "3", "--w", "70", "--maxvl", "32"]);
    assert_eq!(ok.status.code(), Some(0), "{}", stdout(&ok));
    assert!(stdout(&ok).contains("0 mismatching"));
    assert_eq!(run(&["verify", "nosuchkernel"]).status.code(), Some(2));
    let fault = run(&["verify", "quantize", "--c", "4", "--w", "9", "--inject-fault", "3"]);
    assert_eq!(fault.status.code(), Some(1));
    assert!(stdout(&fault).contains("first differing indices [3]"));
}

#[test]
fn verify_sweep_passes_with_small_vectors() {
    let o = run(&["verify", "upsample", "--maxvl", "16", "--soc", &configs("soc_ideal.toml")]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
}

#[test]
fn bench_reports_prefetch_gain() {
    let o = run(&["bench", "--kernel", "fd2nchw", "--size", "large"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let mut rows = csv_rows(&text);
    let header = rows.remove(0);
    let col = |name: &str| header.iter().position(|h| h == name).unwrap();
    let (variant, cycles) = (col("variant"), col("cycles"));
    let get = |v: &str| -> u64 {
        rows.iter().find(|r| r[variant] == v).unwrap()[cycles].parse().unwrap()
    };
    assert!(get("vector+prefetch") < get("vector"));
    assert!(get("vector") < get("scalar"));
}

fn csv_rows(text: &str) -> Vec<Vec<String>> {
    text.lines().map(|l| l.split(',').map(str::to_string).collect()).collect()
}

#[test]
fn bench_ideal_config_has_no_stalls() {
    let o = run(&["bench", "--kernel", "quantize", "--size", "small", "--prefetch", "off", "--soc", &configs("soc_ideal.toml")]);
    assert_eq!(o.status.code(), Some(0));
    let mut rows = csv_rows(&stdout(&o));
    let header = rows.remove(0);
    let stalls = header.iter().position(|h| h == "stalls").unwrap();
    assert!(rows.iter().all(|r| r[stalls] == "0"));
}

#[test]
fn bench_zero_stall_matches_closed_form() {
    let o = run(&["bench", "--kernel", "fd2nchw", "--size", "small", "--prefetch", "off", "--soc", &configs("soc_ideal.toml")]);
    assert_eq!(o.status.code(), Some(0));
    let row = stdout(&o).lines().find(|l| l.starts_with("fd2nchw,small,vector,")).unwrap().to_string();
    let cycles: u64 = row.split(',').nth(3).unwrap().parse().unwrap();
    // 256 channels x 13 rows, one strip per row
    assert_eq!(cycles, 5 + 256 * 13 * 2 + 256 * 13 * 8);
}

#[test]
fn bench_bad_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let soc = dir.path().join("soc.toml");
    std::fs::write(&soc, "[cache]\nl1_ways = 0\n").unwrap();
    assert_eq!(run(&["bench", "--soc", soc.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn pipeline_json_and_remap() {
    let o = run(&["pipeline"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let total = v["before"]["total_ms"].as_f64().unwrap();
    assert!((total - 133.22).abs() < 1e-9);

    let o = run(&["pipeline", "--remap", &configs("remap_scenarios.toml"), "--scenario", "large"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let after = v["ratios"]["remapped_ms_after"].as_f64().unwrap();
    assert!((after - 19.0 / 9.934).abs() < 1e-9);
}

#[test]
fn pipeline_csv_is_long_format() {
    let o = run(&["pipeline", "--format", "csv"]);
    let text = stdout(&o);
    assert!(text.starts_with("metric,value\n"));
    assert!(text.lines().any(|l| l.starts_with("before.total_ms,")));
}

#[test]
fn pipeline_missing_file_exits_2() {
    assert_eq!(run(&["pipeline", "--layers", "/nonexistent.toml"]).status.code(), Some(2));
    let o = run(&["pipeline", "--remap", &configs("remap_scenarios.toml"), "--scenario", "nope"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn convert_letterboxes_ppm() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("wide.ppm");
    let dst = dir.path().join("wide.vbt");
    scalar::write_ppm(&Image::filled(208, 104, [255, 255, 255]).unwrap(), &src).unwrap();
    let o = run(&["convert", src.to_str().unwrap(), dst.to_str().unwrap(), "--compare-vector"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let t = vbt::read_tensor_file(&dst).unwrap();
    let s = t.shape();
    assert_eq!((s.n, s.c, s.h, s.w), (1, 3, 416, 416));
    let plane = &t.as_f32().unwrap()[..416 * 416];
    assert!(plane[..416 * 104].iter().all(|v| *v == scalar::LETTERBOX_FILL));
    assert!(plane[416 * 104..416 * 312].iter().all(|v| *v == 1.0));

    let sq = dir.path().join("square.ppm");
    scalar::write_ppm(&Image::filled(64, 64, [255, 255, 255]).unwrap(), &sq).unwrap();
    let o = run(&["convert", sq.to_str().unwrap(), dst.to_str().unwrap(), "--target", "64"]);
    assert_eq!(o.status.code(), Some(0));
    let t = vbt::read_tensor_file(&dst).unwrap();
    assert!(t.as_f32().unwrap().iter().all(|v| *v == 1.0));
}

#[test]
fn convert_rejects_bad_input() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("bad.ppm");
    std::fs::write(&src, b"not an image").unwrap();
    let o = run(&["convert", src.to_str().unwrap(), dir.path().join("o.vbt").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}
