// SPDX-License-Identifier: Apache-2.0

//! Corpus-level checks shared by the integration tests and the acceptance
//! target.

use std::collections::BTreeSet;
use std::path::PathBuf;

use sgx_symex::corpus::{analyze_package, default_corpus_dir, list_packages, run_config, AnalyzeOptions};
use sgx_symex::executor::{explore_package, EndKind, HookRegistry, State, StepKind, TraceStep};
use sgx_symex::expr::{Expr, Provenance, SymbolFactory};
use sgx_symex::loader::{load_from_parts, load_package, EnclavePackage, Section};
use sgx_symex::report::{hex_bytes, parse_hex_bytes, replay_witness, FindingReport, ReplayOutcome};
use sgx_symex::solver::{check, SolverConfig, Validity};
use sgx_symex::executor::{Explorer, RunConfig};

pub fn corpus_paths() -> Vec<PathBuf> {
    list_packages(&default_corpus_dir()).expect("corpus directory")
}

pub fn corpus_package(name: &str) -> EnclavePackage {
    load_package(default_corpus_dir().join(name)).expect("corpus package loads")
}

pub fn is_patched(name: &str) -> bool {
    name.ends_with("_patched")
}

/// Vulnerability patterns each vulnerable package exercises: P1 unchecked
/// nested pointers, P2 enclave pointers accepted back from the host, P3
/// partial-overlap placement, P4 null dereference, P5 double fetch.
pub const PATTERNS: &[(&str, &[&str])] = &[
    ("gmp_add", &["P1"]),
    ("wolfssl_like", &["P2"]),
    ("rust_tls_like", &["P2", "P3"]),
    ("talos_like", &["P1", "P4", "P5"]),
    ("synaptics_like", &["P1", "P4"]),
    ("goodix_like", &["P1", "P4"]),
];

// Tri-state grid.

pub const GRID_ENCLAVE: Section = Section {
    base: 0x10_0000,
    size: 16,
};

const HOOK_MANIFEST: &str = r#"{
  "name": "hooks",
  "enclave_base": "0x100000",
  "enclave_size": "0x40000",
  "ecalls": [{"index": 0, "name": "e", "entry": "e"}],
  "hooks": {
    "sgx_is_within_enclave": "sgx_is_within_enclave",
    "sgx_is_outside_enclave": "sgx_is_outside_enclave"
  }
}"#;

const HOOK_SOURCE: &str = "
.extern sgx_is_within_enclave
.extern sgx_is_outside_enclave
.entry e
e:
    ret
";

/// Byte-by-byte reference: (every byte inside, no byte inside).
pub fn grid_oracle(addr: u64, len: u64, enclave: &Section) -> (bool, bool) {
    let inside = |a: u64| a >= enclave.base && a - enclave.base < enclave.size;
    let n_in = (0..len).filter(|i| inside(addr + i)).count() as u64;
    (len > 0 && n_in == len, n_in == 0)
}

pub struct GridOutcome {
    pub cases: usize,
    pub mismatches: Vec<String>,
}

/// Run both validation hooks on every buffer of length 1..=16 starting
/// anywhere from 16 bytes below to 16 bytes above a 16-byte enclave, once
/// with concrete arguments and once with symbolic arguments bounded to the
/// same values.
pub fn tristate_grid() -> GridOutcome {
    let mut pkg = load_from_parts(HOOK_MANIFEST, HOOK_SOURCE, None).expect("hook package");
    pkg.layout.enclave = GRID_ENCLAVE;
    let hooks = HookRegistry::for_package(&pkg).expect("hooks");
    let cfg = RunConfig::new(&pkg);
    let ecall = &pkg.ecalls[0];
    let mut ex = Explorer::new(&pkg, ecall, &hooks, &cfg);
    let factory = SymbolFactory::new();
    let eb = GRID_ENCLAVE.base;
    let ee = GRID_ENCLAVE.end();
    let mut out = GridOutcome {
        cases: 0,
        mismatches: Vec::new(),
    };
    for addr in eb - 16..=ee + 16 {
        for len in 1..=16u64 {
            out.cases += 1;
            let want = grid_oracle(addr, len, &GRID_ENCLAVE);
            let concrete = run_hooks(&mut ex, &pkg, &hooks, Expr::konst(64, addr), Expr::konst(64, len), &[]);
            let a = factory.fresh(64, Provenance::default());
            let n = factory.fresh(64, Provenance::default());
            let a0 = Expr::konst(64, addr);
            let n0 = Expr::konst(64, len);
            let bounds = [a.ule(&a0), a0.ule(&a), n.ule(&n0), n0.ule(&n)];
            let symbolic = run_hooks(&mut ex, &pkg, &hooks, a, n, &bounds);
            for (how, got) in [("concrete", concrete), ("symbolic", symbolic)] {
                if got != Some(want) {
                    out.mismatches.push(format!(
                        "{how} addr {:#x} len {len}: got {got:?}, want {want:?}",
                        addr
                    ));
                }
            }
        }
    }
    out
}

fn run_hooks(
    ex: &mut Explorer<'_>,
    pkg: &EnclavePackage,
    hooks: &HookRegistry,
    addr: Expr,
    len: Expr,
    bounds: &[Expr],
) -> Option<(bool, bool)> {
    let mut verdict = [false; 2];
    for (i, name) in ["sgx_is_within_enclave", "sgx_is_outside_enclave"].iter().enumerate() {
        let pc = pkg.program.extern_addr(name)?;
        let mut s = State::new(pkg, pc);
        for b in bounds {
            s.path.push(b.clone());
        }
        s.regs[0] = addr.clone();
        s.regs[1] = len.clone();
        let mut rec = TraceStep {
            pc,
            kind: StepKind::Hook(name.to_string()),
            concretized: false,
        };
        let run = hooks.get(name)?.run.clone();
        let mut next = run(ex, s, &mut rec);
        if next.len() != 1 {
            return None;
        }
        let s = next.pop()?;
        let r0 = s.reg(0);
        let cfg = SolverConfig::default();
        let holds = |v: u64| {
            sgx_symex::solver::must_hold(s.path.as_slice(), &r0.eq_const(v), &cfg) == Validity::Proved
        };
        verdict[i] = match (holds(1), holds(0)) {
            (true, false) => true,
            (false, true) => false,
            _ => return None,
        };
    }
    Some((verdict[0], verdict[1]))
}

// Fork audit.

pub struct ForkAudit {
    pub forks: usize,
    pub paths: usize,
    pub problems: Vec<String>,
}

fn sat(formulas: &[Expr]) -> Option<bool> {
    let v = check(formulas, &SolverConfig::default());
    if v.is_unknown() {
        None
    } else {
        Some(v.is_sat())
    }
}

/// Re-check every logged fork of every corpus ECALL: each child extends the
/// parent by exactly the branch condition or its negation and is
/// satisfiable, a missing child is infeasible, and every created state ends
/// with a classification.
pub fn fork_audit() -> ForkAudit {
    let mut audit = ForkAudit {
        forks: 0,
        paths: 0,
        problems: Vec::new(),
    };
    for path in corpus_paths() {
        let pkg = load_package(&path).expect("corpus package loads");
        let hooks = HookRegistry::for_package(&pkg).expect("hooks");
        let mut cfg = run_config(&pkg, &AnalyzeOptions::default());
        cfg.log_forks = true;
        for run in explore_package(&pkg, &hooks, &cfg, None, 1) {
            let at = format!("{}::{}", pkg.name, run.ecall_name);
            for f in &run.forks {
                audit.forks += 1;
                let sides = [(true, &f.then_child, f.cond.clone()), (false, &f.else_child, f.cond.not())];
                for (dir, child, cond) in sides {
                    let mut expect = f.parent.clone();
                    expect.push(cond);
                    match child {
                        Some(c) => {
                            if *c != expect {
                                audit.problems.push(format!("{at} fork at {:#x}: {dir} child is not parent plus condition", f.pc));
                            }
                            if sat(c) == Some(false) {
                                audit.problems.push(format!("{at} fork at {:#x}: {dir} child is unsatisfiable", f.pc));
                            }
                        }
                        None => {
                            if sat(&expect) != Some(false) {
                                audit.problems.push(format!("{at} fork at {:#x}: feasible {dir} side was dropped", f.pc));
                            }
                        }
                    }
                }
            }
            audit.paths += run.ends.len();
            if run.ends.len() as u64 != run.stats.states_created {
                audit.problems.push(format!(
                    "{at}: {} states created but {} path ends",
                    run.stats.states_created,
                    run.ends.len()
                ));
            }
            for e in &run.ends {
                let classified = matches!(
                    e.kind,
                    EndKind::Exit | EndKind::Halt | EndKind::Finding(_) | EndKind::Truncated(_)
                );
                if !classified {
                    audit.problems.push(format!("{at}: path ended at {:#x} as {:?}", e.pc, e.kind));
                }
            }
        }
    }
    audit
}

// Replay.

/// Every exact-confidence finding of the corpus, with its package.
pub fn exact_corpus_findings() -> Vec<(EnclavePackage, u32, FindingReport)> {
    let mut out = Vec::new();
    for path in corpus_paths() {
        let pkg = load_package(&path).expect("corpus package loads");
        let report = analyze_package(&pkg, &AnalyzeOptions::default()).expect("analysis");
        for (e, f) in report.findings() {
            if f.confidence == "exact" {
                out.push((pkg.clone(), e.index, f.clone()));
            }
        }
    }
    out
}

pub fn replay(pkg: &EnclavePackage, ecall: u32, f: &FindingReport) -> ReplayOutcome {
    let spec = pkg.ecalls.iter().find(|e| e.index == ecall).expect("ecall");
    replay_witness(pkg, spec, f).expect("replayable witness")
}

fn flip_first_byte(hex: &str) -> String {
    let mut b = parse_hex_bytes(hex).expect("hex bytes");
    b[0] ^= 0xff;
    hex_bytes(&b)
}

/// The controlled write of `gmp_add` with the last host read it depends on
/// perturbed.
pub fn negative_control_host_read() -> (FindingReport, ReplayOutcome) {
    let pkg = corpus_package("gmp_add");
    let report = analyze_package(&pkg, &AnalyzeOptions::default()).expect("analysis");
    let (e, f) = report.findings().next().expect("gmp_add has a finding");
    let mut f = f.clone();
    let w = f.witness.as_mut().expect("witness");
    let last = w.host_reads.last_mut().expect("host reads");
    last.bytes = flip_first_byte(&last.bytes);
    let outcome = replay(&pkg, e.index, &f);
    (f, outcome)
}

/// The fixed-value write of `synaptics_like` with its pointer argument
/// perturbed.
pub fn negative_control_arg() -> (FindingReport, ReplayOutcome) {
    let pkg = corpus_package("synaptics_like");
    let report = analyze_package(&pkg, &AnalyzeOptions::default()).expect("analysis");
    let (e, f) = report
        .findings()
        .find(|(_, f)| f.kind == "controlled-write")
        .expect("synaptics_like has a controlled write");
    let mut f = f.clone();
    let w = f.witness.as_mut().expect("witness");
    let arg = w.args.get_mut("0").expect("argument 0");
    *arg = flip_first_byte(arg);
    let outcome = replay(&pkg, e.index, &f);
    (f, outcome)
}

// Determinism.

/// Drop the wall-clock fields from a JSON report.
pub fn strip_elapsed(doc: &mut serde_json::Value) {
    match doc {
        serde_json::Value::Object(m) => {
            m.remove("elapsed_ms");
            m.values_mut().for_each(strip_elapsed);
        }
        serde_json::Value::Array(a) => a.iter_mut().for_each(strip_elapsed),
        _ => {}
    }
}

/// Detector kinds reported anywhere in the corpus.
pub fn kinds_seen(reports: &[(String, sgx_symex::report::Report)]) -> BTreeSet<String> {
    reports
        .iter()
        .flat_map(|(_, r)| r.findings().map(|(_, f)| f.kind.clone()).collect::<Vec<_>>())
        .collect()
}
