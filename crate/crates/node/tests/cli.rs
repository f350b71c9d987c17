use std::path::Path;
use std::process::{Command, Output};

fn blockaudit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_blockaudit"))
        .args(args)
        .env_remove("BLOCKAUDIT_DATA_DIR")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn seed(dir: &Path) {
    let scenario = dir.join("scenario.json");
    std::fs::write(&scenario, r#"{"n": 4, "lambda": 200, "maxTransactions": 6, "seed": 3}"#).unwrap();
    let data = dir.join("data");
    let o = blockaudit(&[
        "seed-ledger",
        "--data-dir",
        data.to_str().unwrap(),
        "--scenario",
        scenario.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn verify_then_corrupt_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    seed(tmp.path());
    let data = tmp.path().join("data");
    let data = data.to_str().unwrap();

    let o = blockaudit(&["verify", "--data-dir", data]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).starts_with("chain,blocks_checked,violations\nrecovery,"));

    let o = blockaudit(&["--format", "json", "tamper-drill", "--data-dir", data, "--seed", "9"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(report["missed"], 0);
    assert!(report["mutations_tried"].as_u64().unwrap() > 0);

    let o = blockaudit(&[
        "--format",
        "json",
        "restore",
        "--data-dir",
        data,
        "--class-name",
        "Order",
        "--entity-id",
        "0",
        "--as-of",
        "2100-01-01T00:00:00Z",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let state: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(state["state"], "live");
    assert_eq!(state["properties"]["Status"], "Created");

    let recovery = std::fs::read_dir(data)
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.to_string_lossy().contains("recovery"))
        .unwrap();
    let mut bytes = std::fs::read(&recovery).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    std::fs::write(&recovery, bytes).unwrap();
    let o = blockaudit(&["verify", "--data-dir", data]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("violation"));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&blockaudit(&["frobnicate"])), 1);
    assert_eq!(code(&blockaudit(&["verify"])), 1);
    assert_eq!(code(&blockaudit(&["--format", "xml", "verify", "--data-dir", "x"])), 1);
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&blockaudit(&["verify", "--data-dir", tmp.path().to_str().unwrap()])), 1);
    assert_eq!(code(&blockaudit(&["--help"])), 0);
}

#[test]
fn simulate_emits_tx_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let scenario = tmp.path().join("s.json");
    std::fs::write(&scenario, r#"{"name": "smoke", "n": 4, "maxTransactions": 3}"#).unwrap();
    let o = blockaudit(&["simulate", "--scenario", scenario.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let out = stdout(&o);
    let mut lines = out.lines();
    assert_eq!(lines.next(), Some("scenario,n,payload_bytes,lambda,tx_id,t_g_ms,t_c_ms,l_t_ms"));
    assert_eq!(lines.count(), 3);
}

#[test]
fn keygen_writes_a_loadable_key() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("node.key");
    let o = blockaudit(&["keygen", "--out", path.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let public = stdout(&o).trim().to_string();
    assert_eq!(public.len(), 64);
    assert_eq!(blockaudit_node::NodeKey::load(&path).unwrap().public_hex(), public);
}
