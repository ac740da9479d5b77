// SPDX-License-Identifier: Apache-2.0

mod common;

use common::harness::{
    corpus_package, exact_corpus_findings, negative_control_arg, negative_control_host_read, replay,
};
use sgx_symex::corpus::{analyze_package, AnalyzeOptions};
use sgx_symex::report::{replay_witness, ReplayError, ReplayOutcome};

#[test]
fn every_exact_corpus_finding_replays() {
    let all = exact_corpus_findings();
    assert!(all.len() >= 10);
    for (pkg, ecall, f) in &all {
        assert_eq!(replay(pkg, *ecall, f), ReplayOutcome::Confirmed, "{} {}", pkg.name, f.id);
    }
}

#[test]
fn perturbed_host_read_diverges() {
    let (f, outcome) = negative_control_host_read();
    assert!(matches!(outcome, ReplayOutcome::Diverged(step) if step < f.trace.len()), "{outcome:?}");
}

#[test]
fn perturbed_argument_diverges() {
    let (_, outcome) = negative_control_arg();
    assert!(matches!(outcome, ReplayOutcome::Diverged(_)), "{outcome:?}");
}

#[test]
fn finding_without_witness_is_rejected() {
    let pkg = corpus_package("gmp_add");
    let r = analyze_package(&pkg, &AnalyzeOptions::default()).unwrap();
    let (_, f) = r.findings().next().unwrap();
    let mut f = f.clone();
    f.witness = None;
    let err = replay_witness(&pkg, &pkg.ecalls[0], &f).unwrap_err();
    assert!(matches!(err, ReplayError::NoWitness(_)));
}
