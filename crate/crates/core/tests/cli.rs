// SPDX-License-Identifier: Apache-2.0

use std::path::PathBuf;
use std::process::Command;

use sgx_symex::corpus::default_corpus_dir;
use sgx_symex::report::validate_report;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sgx-symex"))
}

fn pkg(name: &str) -> PathBuf {
    default_corpus_dir().join(name)
}

#[test]
fn analyze_exit_codes() {
    let s = bin().arg("analyze").arg(pkg("gmp_add")).arg("--json").output().unwrap();
    assert_eq!(s.status.code(), Some(1));
    let doc: serde_json::Value = serde_json::from_slice(&s.stdout).unwrap();
    validate_report(&doc).unwrap();
    let s = bin().arg("analyze").arg(pkg("signal_like")).output().unwrap();
    assert_eq!(s.status.code(), Some(0));
    let s = bin().args(["analyze", "missing/"]).output().unwrap();
    assert_eq!(s.status.code(), Some(2));
    let s = bin().arg("analyze").arg(pkg("gmp_add")).args(["--ecall", "nope"]).output().unwrap();
    assert_eq!(s.status.code(), Some(2));
}

#[test]
fn analyze_selected_ecall_to_file_then_explain() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report.json");
    let s = bin()
        .arg("analyze")
        .arg(pkg("synaptics_like"))
        .args(["--ecall", "e_set_flag", "--json", "--seed", "3", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(s.status.code(), Some(1));
    assert!(s.stdout.is_empty());
    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(doc["ecalls"].as_array().unwrap().len(), 1);
    assert_eq!(doc["seed"], 3);
    let s = bin().args(["explain", "1.1"]).arg(&out).output().unwrap();
    assert_eq!(s.status.code(), Some(0));
    let text = String::from_utf8(s.stdout).unwrap();
    assert!(text.contains("flag_store"));
    assert!(text.contains("Witness:"));
    let s = bin().args(["explain", "9.9"]).arg(&out).output().unwrap();
    assert_eq!(s.status.code(), Some(2));
}

#[test]
fn corpus_verify_and_broken_detector() {
    let s = bin().arg("corpus-verify").output().unwrap();
    assert_eq!(s.status.code(), Some(0), "{}", String::from_utf8_lossy(&s.stdout));
    let s = bin().args(["corpus-verify", "--disable-detector", "null-deref"]).output().unwrap();
    assert_ne!(s.status.code(), Some(0));
}
