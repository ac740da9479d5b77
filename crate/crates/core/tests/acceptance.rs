// SPDX-License-Identifier: Apache-2.0

//! Acceptance suite. Every test prints one `PASS`/`FAIL` line for its
//! criterion (written straight to stdout so it shows without
//! `--nocapture`) and then asserts it.

mod common;

use std::collections::BTreeSet;
use std::io::Write;
use std::process::Command;
use std::time::{Duration, Instant};

use common::harness::{
    corpus_paths, exact_corpus_findings, fork_audit, is_patched, kinds_seen, negative_control_arg,
    negative_control_host_read, replay, strip_elapsed, tristate_grid, PATTERNS,
};
use common::{brute_force, random_case, Oracle};
use rand::rngs::StdRng;
use rand::SeedableRng;
use rayon::prelude::*;
use sgx_symex::corpus::{analyze_package, default_corpus_dir, verify_corpus, AnalyzeOptions};
use sgx_symex::detectors::FindingKind;
use sgx_symex::expr::eval;
use sgx_symex::loader::load_package;
use sgx_symex::report::ReplayOutcome;
use sgx_symex::solver::{is_sat, must_hold, SolverConfig, SolverVerdict, Validity};

const CORPUS_BUDGET: Duration = Duration::from_secs(5 * 60);
const ECALL_BUDGET_MS: u64 = 60_000;
const PEAK_MEMORY_KIB: u64 = 1 << 20;
const SOLVER_CASES: u64 = 10_000;

fn verdict(name: &str, ok: bool, detail: &str) {
    let line = format!("{} {name}: {detail}\n", if ok { "PASS" } else { "FAIL" });
    let _ = std::io::stdout().lock().write_all(line.as_bytes());
    assert!(ok, "{name}: {detail}");
}

#[test]
fn detector_pattern_matrix() {
    let start = Instant::now();
    let verdicts = verify_corpus(&default_corpus_dir(), &AnalyzeOptions::default()).unwrap();
    let elapsed = start.elapsed();
    let failed: Vec<String> = verdicts
        .iter()
        .filter(|v| !v.ok())
        .map(|v| format!("{} ({})", v.name, v.problems.join("; ")))
        .collect();
    let reports: Vec<_> = verdicts
        .iter()
        .filter_map(|v| v.report.clone().map(|r| (v.name.clone(), r)))
        .collect();
    let kinds = kinds_seen(&reports);
    let missing_kinds: Vec<_> = FindingKind::ALL.iter().filter(|k| !kinds.contains(k.name())).collect();
    let patterns: BTreeSet<&str> = PATTERNS.iter().flat_map(|(_, p)| p.iter().copied()).collect();
    let ok = failed.is_empty()
        && missing_kinds.is_empty()
        && patterns.len() == 5
        && elapsed <= CORPUS_BUDGET
        && !verdicts.is_empty();
    verdict(
        "detector-pattern matrix",
        ok,
        &format!(
            "{} packages, {} failed {failed:?}, kinds {}/4, patterns {:?}, {:.2} s (limit {} s)",
            verdicts.len(),
            failed.len(),
            4 - missing_kinds.len(),
            patterns,
            elapsed.as_secs_f64(),
            CORPUS_BUDGET.as_secs()
        ),
    );
}

#[test]
fn patched_variant_regression() {
    let mut patched = 0;
    let mut offenders = Vec::new();
    let mut fnptr = Vec::new();
    for p in corpus_paths() {
        let pkg = load_package(&p).unwrap();
        let r = analyze_package(&pkg, &AnalyzeOptions::default()).unwrap();
        if is_patched(&pkg.name) {
            patched += 1;
            for (_, f) in r.findings().filter(|(_, f)| f.severity == "high") {
                offenders.push(format!("{} {}", pkg.name, f.location));
            }
        }
        if pkg.name == "global_fnptr_init" {
            fnptr = r.findings().map(|(_, f)| (f.kind.clone(), f.severity.clone())).collect();
        }
    }
    let one_low_jump = fnptr == [("controlled-jump".to_string(), "low".to_string())];
    verdict(
        "patched-variant regression",
        patched >= 7 && offenders.is_empty() && one_low_jump,
        &format!("{patched} patched packages, high findings {offenders:?}; global_fnptr_init findings {fnptr:?}"),
    );
}

#[test]
fn tri_state_overlap_semantics() {
    let g = tristate_grid();
    verdict(
        "tri-state overlap semantics",
        g.cases == 49 * 16 && g.mismatches.is_empty(),
        &format!(
            "{} placements x (concrete, symbolic), {} mismatches {:?}",
            g.cases,
            g.mismatches.len(),
            g.mismatches.iter().take(3).collect::<Vec<_>>()
        ),
    );
}

/// Check one random query against exhaustive enumeration; `None` when both
/// entry points agree with the oracle.
fn solver_case(i: u64) -> Option<String> {
    let cfg = SolverConfig::default();
    let mut rng = StdRng::seed_from_u64(0xacce_0000 + i);
    let c = random_case(&mut rng, 12);
    let mut all = c.constraints.clone();
    all.push(c.query.clone());
    let sat_expected = brute_force(&c.syms, &all).is_some();
    match is_sat(&c.constraints, &c.query, &cfg) {
        SolverVerdict::Sat(m) => {
            if !sat_expected {
                return Some(format!("case {i}: is_sat says sat, oracle unsat"));
            }
            let env: Vec<u64> = c
                .syms
                .iter()
                .map(|s| m.get(&s.as_symbol().unwrap().id).copied().unwrap_or(0))
                .collect();
            let mut vals = Vec::new();
            let lib_ok = all.iter().all(|f| eval(&m, f).ok() == Some(1));
            if !Oracle::new(&c.syms, &all).all_true(&env, &mut vals) || !lib_ok {
                return Some(format!("case {i}: model does not satisfy the query"));
            }
        }
        SolverVerdict::Unsat if sat_expected => return Some(format!("case {i}: is_sat says unsat, oracle sat")),
        SolverVerdict::Unsat => {}
        SolverVerdict::Unknown(r) => return Some(format!("case {i}: is_sat unknown {r:?}")),
    }
    let mut neg = c.constraints.clone();
    neg.push(c.query.not());
    let valid_expected = brute_force(&c.syms, &neg).is_none();
    match must_hold(&c.constraints, &c.query, &cfg) {
        Validity::Proved if !valid_expected => Some(format!("case {i}: must_hold proved, oracle refutes")),
        Validity::Counterexample(_) if valid_expected => Some(format!("case {i}: must_hold refuted, oracle proves")),
        Validity::Unknown(r) => Some(format!("case {i}: must_hold unknown {r:?}")),
        _ => None,
    }
}

#[test]
fn solver_oracle_equivalence() {
    let start = Instant::now();
    let mismatches: Vec<String> = (0..SOLVER_CASES).into_par_iter().filter_map(solver_case).collect();
    verdict(
        "solver oracle equivalence",
        mismatches.is_empty(),
        &format!(
            "{SOLVER_CASES} queries (<= 3 symbols, <= 8 bits, <= 12 nodes), {} mismatches {:?}, {:.1} s",
            mismatches.len(),
            mismatches.iter().take(3).collect::<Vec<_>>(),
            start.elapsed().as_secs_f64()
        ),
    );
}

#[test]
fn witness_replay_soundness() {
    let all = exact_corpus_findings();
    let failed: Vec<String> = all
        .iter()
        .filter(|(pkg, e, f)| replay(pkg, *e, f) != ReplayOutcome::Confirmed)
        .map(|(pkg, _, f)| format!("{} {}", pkg.name, f.id))
        .collect();
    let (_, host) = negative_control_host_read();
    let (_, arg) = negative_control_arg();
    let diverged = |o: &ReplayOutcome| matches!(o, ReplayOutcome::Diverged(_));
    verdict(
        "witness replay soundness",
        !all.is_empty() && failed.is_empty() && diverged(&host) && diverged(&arg),
        &format!(
            "{}/{} exact findings confirmed {failed:?}; negative controls: host read {host:?}, argument {arg:?}",
            all.len() - failed.len(),
            all.len()
        ),
    );
}

#[test]
fn fork_soundness_audit() {
    let a = fork_audit();
    verdict(
        "fork soundness audit",
        a.forks > 0 && a.problems.is_empty(),
        &format!(
            "{} forks, {} path ends, {} problems {:?}",
            a.forks,
            a.paths,
            a.problems.len(),
            a.problems.iter().take(3).collect::<Vec<_>>()
        ),
    );
}

fn cli_report(pkg: &std::path::Path, seed: &str) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_sgx-symex"))
        .arg("analyze")
        .arg(pkg)
        .args(["--json", "--seed", seed])
        .output()
        .unwrap();
    let mut v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    strip_elapsed(&mut v);
    serde_json::to_string_pretty(&v).unwrap()
}

#[test]
fn determinism() {
    let mut differing = Vec::new();
    let paths = corpus_paths();
    for p in &paths {
        for seed in ["0", "42"] {
            if cli_report(p, seed) != cli_report(p, seed) {
                differing.push(format!("{} seed {seed}", p.display()));
            }
        }
    }
    verdict(
        "determinism",
        differing.is_empty() && !paths.is_empty(),
        &format!("{} packages x 2 seeds, identical JSON modulo elapsed_ms; differing {differing:?}", paths.len()),
    );
}

fn peak_rss_kib() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    line.split_whitespace().nth(1)?.parse().ok()
}

#[test]
fn resource_bounds() {
    let mut slowest = (String::new(), 0u64);
    let mut over = Vec::new();
    let mut ecalls = 0;
    for p in corpus_paths() {
        let pkg = load_package(&p).unwrap();
        let opts = AnalyzeOptions {
            workers: 1,
            ..AnalyzeOptions::default()
        };
        let r = analyze_package(&pkg, &opts).unwrap();
        for e in &r.ecalls {
            ecalls += 1;
            let ms = e.stats.elapsed_ms;
            if ms > slowest.1 {
                slowest = (format!("{}::{}", pkg.name, e.name), ms);
            }
            if ms > ECALL_BUDGET_MS {
                over.push(format!("{}::{} {ms} ms", pkg.name, e.name));
            }
        }
    }
    // Peak of the whole test process, an upper bound for every single ECALL.
    let peak = peak_rss_kib();
    let mem_ok = peak.is_some_and(|k| k <= PEAK_MEMORY_KIB);
    verdict(
        "resource bounds",
        over.is_empty() && mem_ok,
        &format!(
            "{ecalls} ECALLs, slowest {} at {} ms (limit {ECALL_BUDGET_MS} ms), over budget {over:?}; \
             process VmHWM {} KiB (limit {PEAK_MEMORY_KIB} KiB)",
            slowest.0,
            slowest.1,
            peak.map_or("unavailable".to_string(), |k| k.to_string())
        ),
    );
}
