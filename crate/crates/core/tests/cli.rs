use std::path::PathBuf;
use std::process::Command;

fn glancing(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_glancing")).args(args).output().unwrap();
    (out.status.code().unwrap(), String::from_utf8_lossy(&out.stdout).into_owned())
}

fn scratch_dir(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("glancing-cli-{name}-{}", std::process::id()));
    std::fs::create_dir_all(&d).unwrap();
    d
}

#[test]
fn eval_prints_json() {
    let (code, out) = glancing(&["airy", "eval", "--z", "-2.5,0.5"]);
    assert_eq!(code, 0);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert!(v["digest"].as_str().unwrap().len() == 64);
    assert!(v["report"]["log_deriv"][0].as_f64().is_some());
}

#[test]
fn fault_injection_fails_selftest() {
    assert_eq!(glancing(&["airy", "selftest", "--b0", "0.36"]).0, 1);
}

#[test]
fn configuration_errors_exit_with_two() {
    assert_eq!(glancing(&["parametrix", "g1", "--h", "0.01", "--mu", "0.5"]).0, 2);
    assert_eq!(glancing(&["airy", "eval", "--z", "1"]).0, 2);
    let d = scratch_dir("cfg");
    let path = d.join("run.cfg");
    std::fs::write(&path, "h = 0.01\nbogus = 1\n").unwrap();
    assert_eq!(glancing(&["--config", path.to_str().unwrap(), "parametrix", "g1"]).0, 2);
    std::fs::remove_dir_all(d).unwrap();
}

#[test]
fn config_file_and_flag_override() {
    let d = scratch_dir("out");
    let path = d.join("run.cfg");
    std::fs::write(&path, "# flat q\nq = const\nM = 0\nh = 0.05\n").unwrap();
    let (code, out) = glancing(&["--config", path.to_str().unwrap(), "--out", d.to_str().unwrap(), "parametrix", "g1", "--M", "2"]);
    assert_eq!(code, 0);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["config"]["M"], "2");
    assert!(v["report"]["rows"][0]["exact_max_rel_err"].as_f64().unwrap() <= 1e-8);
    assert!(d.join("parametrix_g1.json").exists());
    std::fs::remove_dir_all(d).unwrap();
}

#[test]
fn root_csv_carries_digest() {
    let d = scratch_dir("te");
    let (code, out) = glancing(&["--out", d.to_str().unwrap(), "te", "find", "--c1", "1", "--c2", "1", "--n1", "4", "--n2", "1", "--m", "0", "--rect", "5,50,-1,1"]);
    assert_eq!(code, 0);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    let csv = std::fs::read_to_string(d.join("te_find_roots.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), format!("# digest={}", v["digest"].as_str().unwrap()));
    assert!(csv.lines().count() >= 4);
    std::fs::remove_dir_all(d).unwrap();
}
