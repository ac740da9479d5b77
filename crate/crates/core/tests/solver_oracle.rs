// SPDX-License-Identifier: Apache-2.0

mod common;

use std::collections::BTreeMap;

use common::{brute_force, oracle_value, random_case, Gen, Oracle};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use sgx_symex::expr::{eval, Expr, Provenance, SymbolFactory};
use sgx_symex::solver::{is_sat, must_hold, SolverConfig, SolverVerdict, Validity};

fn model_env(syms: &[Expr], m: &BTreeMap<u64, u64>) -> Vec<u64> {
    syms.iter()
        .map(|s| m.get(&s.as_symbol().unwrap().id).copied().unwrap_or(0))
        .collect()
}

#[test]
fn is_sat_matches_exhaustive_search() {
    let mut rng = StdRng::seed_from_u64(0x5eed);
    let cfg = SolverConfig::default();
    for case_no in 0..2000 {
        let c = random_case(&mut rng, 12);
        let mut all = c.constraints.clone();
        all.push(c.query.clone());
        let expected = brute_force(&c.syms, &all);
        match is_sat(&c.constraints, &c.query, &cfg) {
            SolverVerdict::Sat(m) => {
                assert!(expected.is_some(), "case {case_no}: solver Sat, oracle Unsat");
                let env = model_env(&c.syms, &m);
                let mut vals = Vec::new();
                assert!(
                    Oracle::new(&c.syms, &all).all_true(&env, &mut vals),
                    "case {case_no}: model does not satisfy query"
                );
                for f in &all {
                    assert_eq!(eval(&m, f).unwrap(), 1);
                }
            }
            SolverVerdict::Unsat => {
                assert!(expected.is_none(), "case {case_no}: solver Unsat, oracle Sat");
            }
            SolverVerdict::Unknown(r) => panic!("case {case_no}: unknown {r:?}"),
        }
    }
}

#[test]
fn must_hold_matches_exhaustive_search() {
    let mut rng = StdRng::seed_from_u64(0xfeed);
    let cfg = SolverConfig::default();
    for case_no in 0..1000 {
        let c = random_case(&mut rng, 12);
        let mut neg = c.constraints.clone();
        neg.push(c.query.not());
        let expected_proved = brute_force(&c.syms, &neg).is_none();
        match must_hold(&c.constraints, &c.query, &cfg) {
            Validity::Proved => assert!(expected_proved, "case {case_no}"),
            Validity::Counterexample(m) => {
                assert!(!expected_proved, "case {case_no}");
                for f in &neg {
                    assert_eq!(eval(&m, f).unwrap(), 1, "case {case_no}");
                }
            }
            Validity::Unknown(r) => panic!("case {case_no}: unknown {r:?}"),
        }
    }
}

#[test]
fn simplification_preserves_semantics() {
    for seed in 0..3000u64 {
        let f = SymbolFactory::new();
        let mut pick = StdRng::seed_from_u64(seed);
        let syms: Vec<Expr> = (0..pick.gen_range(1..=3))
            .map(|_| f.fresh(pick.gen_range(1..=8), Provenance::default()))
            .collect();
        let w = pick.gen_range(1..=8u32);
        let build = |simplify: bool| {
            let mut rng = StdRng::seed_from_u64(seed ^ 0xabcdef);
            let mut g = Gen {
                rng: &mut rng,
                syms: syms.clone(),
                simplify,
                budget: 14,
            };
            g.bv(w)
        };
        let raw = build(false);
        let simp = build(true);
        assert_eq!(raw.width(), simp.width());
        for _ in 0..16 {
            let env: Vec<u64> = syms.iter().map(|_| pick.gen()).collect();
            let model: BTreeMap<u64, u64> = syms
                .iter()
                .zip(&env)
                .map(|(s, v)| (s.as_symbol().unwrap().id, *v & ((1u64 << s.width()) - 1)))
                .collect();
            let want = oracle_value(&syms, &raw, &env);
            assert_eq!(eval(&model, &raw).unwrap(), want, "eval(raw) seed {seed}: {raw}");
            assert_eq!(eval(&model, &simp).unwrap(), want, "eval(simplified) seed {seed}: {raw} => {simp}");
        }
    }
}

#[test]
fn larger_budget_never_flips_a_verdict() {
    let mut rng = StdRng::seed_from_u64(7);
    for _ in 0..300 {
        let c = random_case(&mut rng, 12);
        let small = is_sat(&c.constraints, &c.query, &SolverConfig { budget: 40, seed: 0 });
        let big = is_sat(&c.constraints, &c.query, &SolverConfig::default());
        match (small, big) {
            (SolverVerdict::Sat(_), SolverVerdict::Unsat) | (SolverVerdict::Unsat, SolverVerdict::Sat(_)) => {
                panic!("verdict flipped")
            }
            _ => {}
        }
    }
}

#[test]
fn documented_examples() {
    let f = SymbolFactory::new();
    let cfg = SolverConfig::default();
    let a = f.fresh(8, Provenance::default());
    let b = f.fresh(8, Provenance::default());
    let cons = [
        a.add(&b).eq_const(0x20),
        a.ult(&Expr::konst(8, 0x10)),
    ];
    let q = a.eq_const(0x0F).and(&b.eq_const(0x11));
    let syms = [a.clone(), b.clone()];
    let mut all = cons.to_vec();
    all.push(q.clone());
    assert!(brute_force(&syms, &all).is_some());
    assert!(is_sat(&cons, &q, &cfg).is_sat());

    // s == t, t <= 0xFFF  ⇒  s < 0x1000; scaled down to 8 bits for the
    // exhaustive check, then asked at full width.
    let s = f.fresh(8, Provenance::default());
    let t = f.fresh(8, Provenance::default());
    let cons = [s.eq_(&t), t.ule(&Expr::konst(8, 0x0F))];
    let pred = s.ult(&Expr::konst(8, 0x10));
    let mut neg = cons.to_vec();
    neg.push(pred.not());
    assert!(brute_force(&[s, t], &neg).is_none());
    assert_eq!(must_hold(&cons, &pred, &cfg), Validity::Proved);

    let s64 = f.fresh(64, Provenance::default());
    let t64 = f.fresh(64, Provenance::default());
    let cons64 = [s64.eq_(&t64), t64.ule(&Expr::konst(64, 0xFFF))];
    assert_eq!(
        must_hold(&cons64, &s64.ult(&Expr::konst(64, 0x1000)), &cfg),
        Validity::Proved
    );
}
