use std::process::Command;

fn brwlab() -> Command {
    Command::new(env!("CARGO_BIN_EXE_brwlab"))
}

#[test]
fn lists_config_keys() {
    let out = brwlab().arg("keys").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().any(|l| l.starts_with("tol_z")));
}

#[test]
fn unknown_key_is_a_usage_error() {
    let out = brwlab().args(["e1", "--set", "no_such_key=1"]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("no_such_key"));
}

#[test]
fn writes_csv_and_summary() {
    let dir = std::env::temp_dir().join(format!("brwlab-cli-{}", std::process::id()));
    let out = brwlab().args(["e1", "--replicas", "20000", "--seed", "3", "--out"]).arg(&dir).output().unwrap();
    let csv = std::fs::read_to_string(dir.join("results.csv")).unwrap();
    let summary = std::fs::read_to_string(dir.join("summary.json")).unwrap();
    assert_eq!(csv.lines().count(), 13);
    assert!(csv.starts_with("experiment,model,alpha,beta,n,replicas,seed,statistic,estimate,se_or_band,target,provenance,pass"));
    let any_false = csv.lines().skip(1).any(|l| l.ends_with(",false"));
    assert_eq!(out.status.success(), !any_false);
    assert!(summary.contains("\"seed\": 3"));
    let _ = std::fs::remove_dir_all(dir);
}
