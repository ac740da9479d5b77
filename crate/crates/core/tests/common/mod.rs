// SPDX-License-Identifier: Apache-2.0

//! Shared helpers for integration tests: a random small-expression
//! generator and an exhaustive, independently written evaluator used as the
//! solver oracle.

#![allow(dead_code)]

pub mod harness;

use std::collections::HashMap;

use rand::rngs::StdRng;
use rand::Rng;
use sgx_symex::expr::{apply, apply_unsimplified, Expr, Node, Op, Provenance, SymbolFactory};

pub struct Case {
    pub syms: Vec<Expr>,
    pub constraints: Vec<Expr>,
    pub query: Expr,
}

const BIN_OPS: [Op; 11] = [
    Op::Add,
    Op::Sub,
    Op::Mul,
    Op::UDiv,
    Op::URem,
    Op::And,
    Op::Or,
    Op::Xor,
    Op::Shl,
    Op::LShr,
    Op::AShr,
];
const CMP_OPS: [Op; 6] = [Op::Eq, Op::Ne, Op::Ult, Op::Ule, Op::Slt, Op::Sle];

pub struct Gen<'a> {
    pub rng: &'a mut StdRng,
    pub syms: Vec<Expr>,
    pub simplify: bool,
    /// Remaining operator-node allowance.
    pub budget: usize,
}

impl Gen<'_> {
    fn mk(&self, op: Op, args: &[Expr]) -> Expr {
        if self.simplify {
            apply(op, args).unwrap()
        } else {
            apply_unsimplified(op, args).unwrap()
        }
    }

    fn leaf(&mut self, w: u32) -> Expr {
        let cands: Vec<Expr> = self.syms.iter().filter(|s| s.width() == w).cloned().collect();
        if !cands.is_empty() && self.rng.gen_bool(0.7) {
            return cands[self.rng.gen_range(0..cands.len())].clone();
        }
        if self.budget > 0 && self.rng.gen_bool(0.5) {
            // Adapt a symbol of another width.
            let s = self.syms[self.rng.gen_range(0..self.syms.len())].clone();
            if s.width() > w {
                self.budget -= 1;
                let lo = self.rng.gen_range(0..=s.width() - w);
                return self.mk(Op::Extract { hi: lo + w - 1, lo }, &[s]);
            } else if s.width() < w {
                self.budget -= 1;
                let op = if self.rng.gen_bool(0.5) {
                    Op::ZeroExt(w)
                } else {
                    Op::SignExt(w)
                };
                return self.mk(op, &[s]);
            }
        }
        let v = match self.rng.gen_range(0..4) {
            0 => 0,
            1 => 1,
            2 => u64::MAX,
            _ => self.rng.gen(),
        };
        Expr::konst(w, v)
    }

    /// Random expression of width `w`.
    pub fn bv(&mut self, w: u32) -> Expr {
        if self.budget == 0 || self.rng.gen_bool(0.3) {
            return self.leaf(w);
        }
        self.budget -= 1;
        match self.rng.gen_range(0..10) {
            0..=5 => {
                let op = BIN_OPS[self.rng.gen_range(0..BIN_OPS.len())];
                let a = self.bv(w);
                let b = self.bv(w);
                self.mk(op, &[a, b])
            }
            6 => {
                let op = if self.rng.gen_bool(0.5) { Op::Not } else { Op::Neg };
                let a = self.bv(w);
                self.mk(op, &[a])
            }
            7 => {
                let c = self.boolean();
                let a = self.bv(w);
                let b = self.bv(w);
                self.mk(Op::Ite, &[c, a, b])
            }
            8 if w >= 2 => {
                let hw = self.rng.gen_range(1..w);
                let h = self.bv(hw);
                let l = self.bv(w - hw);
                self.mk(Op::Concat, &[h, l])
            }
            _ => {
                let src = self.rng.gen_range(1..=8u32);
                let a = self.bv(src);
                if src > w {
                    let lo = self.rng.gen_range(0..=src - w);
                    self.mk(Op::Extract { hi: lo + w - 1, lo }, &[a])
                } else if src < w {
                    self.mk(Op::ZeroExt(w), &[a])
                } else {
                    a
                }
            }
        }
    }

    /// Random width-1 expression.
    pub fn boolean(&mut self) -> Expr {
        if self.budget == 0 {
            return self.leaf(1);
        }
        self.budget -= 1;
        match self.rng.gen_range(0..8) {
            0..=4 => {
                let op = CMP_OPS[self.rng.gen_range(0..CMP_OPS.len())];
                let w = self.syms[self.rng.gen_range(0..self.syms.len())].width();
                let a = self.bv(w);
                let b = self.bv(w);
                self.mk(op, &[a, b])
            }
            5 => {
                let a = self.boolean();
                self.mk(Op::Not, &[a])
            }
            _ => {
                let op = [Op::And, Op::Or, Op::Xor][self.rng.gen_range(0..3)];
                let a = self.boolean();
                let b = self.boolean();
                self.mk(op, &[a, b])
            }
        }
    }
}

/// A random query over at most three symbols of at most 8 bits, with at most
/// `max_nodes` operator nodes across constraints and query.
pub fn random_case(rng: &mut StdRng, max_nodes: usize) -> Case {
    let f = SymbolFactory::new();
    let n = rng.gen_range(1..=3);
    let syms: Vec<Expr> = (0..n)
        .map(|_| f.fresh(rng.gen_range(1..=8), Provenance::default()))
        .collect();
    let ncons = rng.gen_range(0..=2);
    let mut g = Gen {
        rng,
        syms: syms.clone(),
        simplify: true,
        budget: max_nodes,
    };
    let mut constraints = Vec::new();
    for _ in 0..ncons {
        if g.budget < 2 {
            break;
        }
        let share = g.budget / 2;
        let rest = g.budget - share;
        g.budget = share;
        constraints.push(g.boolean());
        g.budget += rest;
    }
    let query = g.boolean();
    Case {
        syms,
        constraints,
        query,
    }
}

fn mask(w: u32) -> u64 {
    if w >= 64 {
        u64::MAX
    } else {
        (1 << w) - 1
    }
}

fn sx(v: u64, w: u32) -> i64 {
    let s = 64 - w;
    ((v << s) as i64) >> s
}

enum Step {
    Const(u64),
    Sym(usize),
    Unary(Op, usize),
    Binary(Op, usize, usize, u32),
    Ite(usize, usize, usize),
    Extract(u32, u32, usize),
    Extend(bool, u32, usize),
    Concat(usize, usize, u32),
}

/// Flattened formula list evaluated with reference semantics that are
/// written independently of the library evaluator.
pub struct Oracle {
    steps: Vec<(Step, u32)>,
    roots: Vec<usize>,
    sym_index: HashMap<u64, usize>,
}

impl Oracle {
    pub fn new(syms: &[Expr], formulas: &[Expr]) -> Oracle {
        let sym_index = syms
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_symbol().unwrap().id, i))
            .collect();
        let mut o = Oracle {
            steps: Vec::new(),
            roots: Vec::new(),
            sym_index,
        };
        let mut seen = HashMap::new();
        for f in formulas {
            let r = o.compile(f, &mut seen);
            o.roots.push(r);
        }
        o
    }

    fn compile(&mut self, e: &Expr, seen: &mut HashMap<(u64, u32), usize>) -> usize {
        let key = (e.structural_hash(), e.width());
        if let Some(&i) = seen.get(&key) {
            return i;
        }
        let step = match e.node() {
            Node::Const(v) => Step::Const(*v),
            Node::Sym(s) => Step::Sym(self.sym_index[&s.id]),
            Node::Unary(op, a) => Step::Unary(*op, self.compile(a, seen)),
            Node::Binary(op, a, b) => {
                Step::Binary(*op, self.compile(a, seen), self.compile(b, seen), a.width())
            }
            Node::Ite(c, a, b) => Step::Ite(
                self.compile(c, seen),
                self.compile(a, seen),
                self.compile(b, seen),
            ),
            Node::Extract { hi, lo, arg } => Step::Extract(*hi, *lo, self.compile(arg, seen)),
            Node::Extend { signed, arg } => {
                Step::Extend(*signed, arg.width(), self.compile(arg, seen))
            }
            Node::Concat(h, l) => Step::Concat(self.compile(h, seen), self.compile(l, seen), l.width()),
        };
        self.steps.push((step, e.width()));
        let i = self.steps.len() - 1;
        seen.insert(key, i);
        i
    }

    /// Values of every formula under `env` (indexed like the symbol list).
    pub fn eval(&self, env: &[u64], vals: &mut Vec<u64>) {
        vals.clear();
        for (step, w) in &self.steps {
            let m = mask(*w);
            let r = match *step {
                Step::Const(v) => v,
                Step::Sym(i) => env[i] & m,
                Step::Unary(Op::Not, a) => !vals[a] & m,
                Step::Unary(_, a) => 0u64.wrapping_sub(vals[a]) & m,
                Step::Binary(op, a, b, aw) => {
                    let am = mask(aw);
                    let (x, y) = (vals[a], vals[b]);
                    match op {
                        Op::Add => x.wrapping_add(y) & am,
                        Op::Sub => x.wrapping_sub(y) & am,
                        Op::Mul => x.wrapping_mul(y) & am,
                        Op::UDiv => x.checked_div(y).unwrap_or(am),
                        Op::URem => x.checked_rem(y).unwrap_or(x),
                        Op::And => x & y,
                        Op::Or => x | y,
                        Op::Xor => x ^ y,
                        Op::Shl => (0..y.min(64)).fold(x, |acc, _| (acc << 1) & am),
                        Op::LShr => (0..y.min(64)).fold(x, |acc, _| acc >> 1),
                        Op::AShr => {
                            let top = (x >> (aw - 1)) & 1;
                            (0..y.min(64)).fold(x, |acc, _| (acc >> 1) | (top << (aw - 1)))
                        }
                        Op::Eq => (x == y) as u64,
                        Op::Ne => (x != y) as u64,
                        Op::Ult => (x < y) as u64,
                        Op::Ule => (x <= y) as u64,
                        Op::Slt => (sx(x, aw) < sx(y, aw)) as u64,
                        Op::Sle => (sx(x, aw) <= sx(y, aw)) as u64,
                        _ => unreachable!(),
                    }
                }
                Step::Ite(c, a, b) => {
                    if vals[c] != 0 {
                        vals[a]
                    } else {
                        vals[b]
                    }
                }
                Step::Extract(hi, lo, a) => (vals[a] >> lo) & mask(hi - lo + 1),
                Step::Extend(signed, aw, a) => {
                    if signed {
                        (sx(vals[a], aw) as u64) & m
                    } else {
                        vals[a]
                    }
                }
                Step::Concat(h, l, lw) => ((vals[h] << lw) | vals[l]) & m,
            };
            vals.push(r);
        }
    }

    pub fn all_true(&self, env: &[u64], vals: &mut Vec<u64>) -> bool {
        self.eval(env, vals);
        self.roots.iter().all(|&r| vals[r] == 1)
    }
}

/// Exhaustively search for an assignment making every formula true. The
/// result is indexed like `syms`.
pub fn brute_force(syms: &[Expr], formulas: &[Expr]) -> Option<Vec<u64>> {
    let oracle = Oracle::new(syms, formulas);
    let widths: Vec<u32> = syms.iter().map(|s| s.width()).collect();
    let total: u32 = widths.iter().sum();
    let mut env = vec![0u64; syms.len()];
    let mut vals = Vec::new();
    for code in 0u64..(1u64 << total) {
        let mut shift = 0;
        for (i, w) in widths.iter().enumerate() {
            env[i] = (code >> shift) & mask(*w);
            shift += w;
        }
        if oracle.all_true(&env, &mut vals) {
            return Some(env);
        }
    }
    None
}

/// Evaluate one expression under a symbol-indexed environment.
pub fn oracle_value(syms: &[Expr], e: &Expr, env: &[u64]) -> u64 {
    let o = Oracle::new(syms, std::slice::from_ref(e));
    let mut vals = Vec::new();
    o.eval(env, &mut vals);
    vals[o.roots[0]]
}
