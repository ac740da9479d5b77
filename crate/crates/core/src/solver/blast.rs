// SPDX-License-Identifier: Apache-2.0

//! Tseitin bit-blasting of [`Expr`] trees into the SAT core.

use std::collections::{BTreeMap, HashMap};

use super::sat::{mk_lit, Lit, Sat};
use crate::expr::{Expr, Node, Op, SymbolId};

type Bits = Vec<Lit>;

pub(crate) struct Blaster {
    pub sat: Sat,
    t: Lit,
    cache: HashMap<Expr, Bits>,
    and_cache: HashMap<(Lit, Lit), Lit>,
    xor_cache: HashMap<(Lit, Lit), Lit>,
    pub syms: BTreeMap<SymbolId, Bits>,
}

impl Blaster {
    pub fn new(seed: u64) -> Self {
        let mut sat = Sat::new(seed);
        let v = sat.new_var();
        let t = mk_lit(v, false);
        sat.add_clause(&[t]);
        Blaster {
            sat,
            t,
            cache: HashMap::new(),
            and_cache: HashMap::new(),
            xor_cache: HashMap::new(),
            syms: BTreeMap::new(),
        }
    }

    fn f(&self) -> Lit {
        self.t ^ 1
    }

    fn fresh(&mut self) -> Lit {
        mk_lit(self.sat.new_var(), false)
    }

    pub fn and(&mut self, a: Lit, b: Lit) -> Lit {
        let (t, f) = (self.t, self.f());
        if a == f || b == f || a == b ^ 1 {
            return f;
        }
        if a == t || a == b {
            return b;
        }
        if b == t {
            return a;
        }
        let key = (a.min(b), a.max(b));
        if let Some(&o) = self.and_cache.get(&key) {
            return o;
        }
        let o = self.fresh();
        self.sat.add_clause(&[o ^ 1, a]);
        self.sat.add_clause(&[o ^ 1, b]);
        self.sat.add_clause(&[o, a ^ 1, b ^ 1]);
        self.and_cache.insert(key, o);
        o
    }

    pub fn or(&mut self, a: Lit, b: Lit) -> Lit {
        self.and(a ^ 1, b ^ 1) ^ 1
    }

    fn xor(&mut self, a: Lit, b: Lit) -> Lit {
        let (t, f) = (self.t, self.f());
        if a == f {
            return b;
        }
        if b == f {
            return a;
        }
        if a == t {
            return b ^ 1;
        }
        if b == t {
            return a ^ 1;
        }
        if a == b {
            return f;
        }
        if a == b ^ 1 {
            return t;
        }
        // xor(~a, b) = ~xor(a, b): normalize to positive inputs.
        let flip = (a ^ b) & 1;
        let (a, b) = (a & !1, b & !1);
        let key = (a.min(b), a.max(b));
        let o = match self.xor_cache.get(&key) {
            Some(&o) => o,
            None => {
                let o = self.fresh();
                self.sat.add_clause(&[o ^ 1, a, b]);
                self.sat.add_clause(&[o ^ 1, a ^ 1, b ^ 1]);
                self.sat.add_clause(&[o, a ^ 1, b]);
                self.sat.add_clause(&[o, a, b ^ 1]);
                self.xor_cache.insert(key, o);
                o
            }
        };
        o ^ flip
    }

    fn mux(&mut self, c: Lit, a: Lit, b: Lit) -> Lit {
        if c == self.t || a == b {
            return a;
        }
        if c == self.f() {
            return b;
        }
        let x = self.and(c, a);
        let y = self.and(c ^ 1, b);
        self.or(x, y)
    }

    fn konst(&self, w: u32, v: u64) -> Bits {
        (0..w)
            .map(|i| if (v >> i) & 1 == 1 { self.t } else { self.f() })
            .collect()
    }

    /// Ripple-carry addition; returns the sum and the carry out.
    fn adder(&mut self, a: &[Lit], b: &[Lit], mut carry: Lit) -> (Bits, Lit) {
        let mut out = Vec::with_capacity(a.len());
        for i in 0..a.len() {
            let x = self.xor(a[i], b[i]);
            out.push(self.xor(x, carry));
            let g = self.and(a[i], b[i]);
            let p = self.and(x, carry);
            carry = self.or(g, p);
        }
        (out, carry)
    }

    /// `a - b` and the no-borrow flag (`a >= b`).
    fn subtract(&mut self, a: &[Lit], b: &[Lit]) -> (Bits, Lit) {
        let nb: Bits = b.iter().map(|l| l ^ 1).collect();
        self.adder(a, &nb, self.t)
    }

    fn uge(&mut self, a: &[Lit], b: &[Lit]) -> Lit {
        let mut carry = self.t;
        for i in 0..a.len() {
            let nb = b[i] ^ 1;
            let x = self.xor(a[i], nb);
            let g = self.and(a[i], nb);
            let p = self.and(x, carry);
            carry = self.or(g, p);
        }
        carry
    }

    fn equal(&mut self, a: &[Lit], b: &[Lit]) -> Lit {
        let mut acc = self.t;
        for i in 0..a.len() {
            let d = self.xor(a[i], b[i]);
            acc = self.and(acc, d ^ 1);
        }
        acc
    }

    fn multiply(&mut self, a: &[Lit], b: &[Lit]) -> Bits {
        let w = a.len();
        let mut acc = vec![self.f(); w];
        for i in 0..w {
            if b[i] == self.f() {
                continue;
            }
            let pp: Bits = (0..w - i).map(|j| self.and(a[j], b[i])).collect();
            let (sum, _) = self.adder(&acc[i..], &pp, self.f());
            acc[i..].copy_from_slice(&sum);
        }
        acc
    }

    /// Restoring division. Division by zero falls out as quotient all-ones
    /// and remainder equal to the dividend.
    fn divide(&mut self, a: &[Lit], b: &[Lit]) -> (Bits, Bits) {
        let w = a.len();
        let mut q = vec![self.f(); w];
        let mut r = vec![self.f(); w];
        let mut bx = b.to_vec();
        bx.push(self.f());
        for i in (0..w).rev() {
            let mut sh = Vec::with_capacity(w + 1);
            sh.push(a[i]);
            sh.extend_from_slice(&r);
            let (diff, ge) = self.subtract(&sh, &bx);
            q[i] = ge;
            for k in 0..w {
                r[k] = self.mux(ge, diff[k], sh[k]);
            }
        }
        (q, r)
    }

    fn shift(&mut self, op: Op, a: &[Lit], s: &[Lit]) -> Bits {
        let w = a.len();
        let fill = if op == Op::AShr { a[w - 1] } else { self.f() };
        let mut cur = a.to_vec();
        let mut k = 0;
        while (1usize << k) < w {
            let d = 1usize << k;
            let shifted: Bits = (0..w)
                .map(|i| match op {
                    Op::Shl => {
                        if i >= d {
                            cur[i - d]
                        } else {
                            fill
                        }
                    }
                    _ => {
                        if i + d < w {
                            cur[i + d]
                        } else {
                            fill
                        }
                    }
                })
                .collect();
            for i in 0..w {
                cur[i] = self.mux(s[k], shifted[i], cur[i]);
            }
            k += 1;
        }
        let wc = self.konst(w as u32, w as u64);
        let over = self.uge(s, &wc);
        (0..w).map(|i| self.mux(over, fill, cur[i])).collect()
    }

    fn binary(&mut self, op: Op, a: &[Lit], b: &[Lit]) -> Bits {
        let w = a.len();
        match op {
            Op::Add => self.adder(a, b, self.f()).0,
            Op::Sub => self.subtract(a, b).0,
            Op::Mul => self.multiply(a, b),
            Op::UDiv => self.divide(a, b).0,
            Op::URem => self.divide(a, b).1,
            Op::And => (0..w).map(|i| self.and(a[i], b[i])).collect(),
            Op::Or => (0..w).map(|i| self.or(a[i], b[i])).collect(),
            Op::Xor => (0..w).map(|i| self.xor(a[i], b[i])).collect(),
            Op::Shl | Op::LShr | Op::AShr => self.shift(op, a, b),
            Op::Eq => vec![self.equal(a, b)],
            Op::Ne => vec![self.equal(a, b) ^ 1],
            Op::Ult => vec![self.uge(a, b) ^ 1],
            Op::Ule => vec![self.uge(b, a)],
            Op::Slt | Op::Sle => {
                let mut sa = a.to_vec();
                let mut sb = b.to_vec();
                sa[w - 1] ^= 1;
                sb[w - 1] ^= 1;
                if op == Op::Slt {
                    vec![self.uge(&sa, &sb) ^ 1]
                } else {
                    vec![self.uge(&sb, &sa)]
                }
            }
            _ => unreachable!("not a binary operator: {op:?}"),
        }
    }

    /// Bits of `e`, least significant first.
    pub fn bits(&mut self, e: &Expr) -> Bits {
        if let Some(b) = self.cache.get(e) {
            return b.clone();
        }
        let w = e.width();
        let out = match e.node() {
            Node::Const(v) => self.konst(w, *v),
            Node::Sym(s) => {
                let b: Bits = (0..w).map(|_| self.fresh()).collect();
                self.syms.insert(s.id, b.clone());
                b
            }
            Node::Unary(op, a) => {
                let a = self.bits(a);
                match op {
                    Op::Not => a.iter().map(|l| l ^ 1).collect(),
                    Op::Neg => {
                        let zero = self.konst(w, 0);
                        self.subtract(&zero, &a).0
                    }
                    _ => unreachable!("not a unary operator: {op:?}"),
                }
            }
            Node::Binary(op, a, b) => {
                let a = self.bits(a);
                let b = self.bits(b);
                self.binary(*op, &a, &b)
            }
            Node::Ite(c, a, b) => {
                let c = self.bits(c)[0];
                let a = self.bits(a);
                let b = self.bits(b);
                (0..w as usize).map(|i| self.mux(c, a[i], b[i])).collect()
            }
            Node::Extract { hi, lo, arg } => {
                let a = self.bits(arg);
                a[*lo as usize..=*hi as usize].to_vec()
            }
            Node::Extend { signed, arg } => {
                let mut a = self.bits(arg);
                let pad = if *signed { a[a.len() - 1] } else { self.f() };
                a.resize(w as usize, pad);
                a
            }
            Node::Concat(hi, lo) => {
                let mut l = self.bits(lo);
                l.extend(self.bits(hi));
                l
            }
        };
        self.cache.insert(e.clone(), out.clone());
        out
    }

    /// Literal for a width-1 expression.
    pub fn lit(&mut self, e: &Expr) -> Lit {
        debug_assert_eq!(e.width(), 1);
        self.bits(e)[0]
    }

    pub fn assert(&mut self, e: &Expr) {
        let l = self.lit(e);
        self.sat.add_clause(&[l]);
    }

    pub fn model_value(&self, bits: &[Lit]) -> u64 {
        bits.iter()
            .enumerate()
            .fold(0u64, |acc, (i, &l)| acc | ((self.sat.model_value(l) as u64) << i))
    }
}
