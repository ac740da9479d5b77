// SPDX-License-Identifier: Apache-2.0

//! Local, semantics-preserving rewrites applied at construction time.

use super::eval::{fold_binary, fold_unary};
use super::{mask, raw, to_signed, Expr, Node, Op};

fn konst(w: u32, v: u64) -> Expr {
    Expr::konst(w, v)
}

pub(super) fn unary(op: Op, a: &Expr) -> Expr {
    let w = a.width();
    if let Some(v) = a.as_const() {
        return konst(w, fold_unary(op, v, w));
    }
    if let Node::Unary(inner, x) = a.node() {
        if *inner == op {
            // not(not x) = x, neg(neg x) = x
            return x.clone();
        }
    }
    raw::unary(op, a)
}

fn is_commutative(op: Op) -> bool {
    matches!(
        op,
        Op::Add | Op::Mul | Op::And | Op::Or | Op::Xor | Op::Eq | Op::Ne
    )
}

pub(super) fn binary(op: Op, a: &Expr, b: &Expr) -> Expr {
    let w = a.width();
    let m = mask(w);
    if let (Some(x), Some(y)) = (a.as_const(), b.as_const()) {
        let rw = if op.is_compare() { 1 } else { w };
        return konst(rw, fold_binary(op, x, y, w));
    }
    // Constants go on the right for commutative operators.
    let (a, b) = if is_commutative(op) && a.is_const() && !b.is_const() {
        (b, a)
    } else {
        (a, b)
    };
    let cb = b.as_const();
    let same = a == b;
    match op {
        Op::Add => {
            if cb == Some(0) {
                return a.clone();
            }
            if let (Some(c2), Node::Binary(Op::Add, x, c1)) = (cb, a.node()) {
                if let Some(c1) = c1.as_const() {
                    return binary(Op::Add, x, &konst(w, c1.wrapping_add(c2)));
                }
            }
        }
        Op::Sub => {
            if cb == Some(0) {
                return a.clone();
            }
            if same {
                return konst(w, 0);
            }
            if let Some(c) = cb {
                return binary(Op::Add, a, &konst(w, c.wrapping_neg()));
            }
        }
        Op::Mul => {
            if cb == Some(0) {
                return konst(w, 0);
            }
            if cb == Some(1) {
                return a.clone();
            }
        }
        Op::UDiv => {
            if cb == Some(1) {
                return a.clone();
            }
        }
        Op::URem => {
            if cb == Some(1) {
                return konst(w, 0);
            }
        }
        Op::And => {
            if cb == Some(0) {
                return konst(w, 0);
            }
            if cb == Some(m) || same {
                return a.clone();
            }
        }
        Op::Or => {
            if cb == Some(0) || same {
                return a.clone();
            }
            if cb == Some(m) {
                return konst(w, m);
            }
        }
        Op::Xor => {
            if cb == Some(0) {
                return a.clone();
            }
            if same {
                return konst(w, 0);
            }
            if w == 1 && cb == Some(1) {
                return unary(Op::Not, a);
            }
        }
        Op::Shl | Op::LShr | Op::AShr => {
            if cb == Some(0) {
                return a.clone();
            }
            if let Some(c) = cb {
                if c >= w as u64 && op != Op::AShr {
                    return konst(w, 0);
                }
            }
            if a.as_const() == Some(0) {
                return konst(w, 0);
            }
        }
        Op::Eq => {
            if same {
                return konst(1, 1);
            }
            if w == 1 {
                match cb {
                    Some(1) => return a.clone(),
                    Some(0) => return unary(Op::Not, a),
                    _ => {}
                }
            }
            // (x + c1) == c2  ->  x == c2 - c1
            if let (Some(c2), Node::Binary(Op::Add, x, c1)) = (cb, a.node()) {
                if let Some(c1) = c1.as_const() {
                    return binary(Op::Eq, x, &konst(w, c2.wrapping_sub(c1)));
                }
            }
            // zext(x) == c  ->  x == c  (or false if c does not fit)
            if let (Some(c), Node::Extend { signed: false, arg }) = (cb, a.node()) {
                if c & !mask(arg.width()) != 0 {
                    return konst(1, 0);
                }
                return binary(Op::Eq, arg, &konst(arg.width(), c));
            }
        }
        Op::Ne => {
            if same {
                return konst(1, 0);
            }
            return unary(Op::Not, &binary(Op::Eq, a, b));
        }
        Op::Ult => {
            if same || cb == Some(0) {
                return konst(1, 0);
            }
            if a.as_const() == Some(m) {
                return konst(1, 0);
            }
        }
        Op::Ule => {
            if same || cb == Some(m) || a.as_const() == Some(0) {
                return konst(1, 1);
            }
        }
        Op::Slt => {
            if same {
                return konst(1, 0);
            }
        }
        Op::Sle => {
            if same {
                return konst(1, 1);
            }
        }
        _ => unreachable!("binary simplifier got {op:?}"),
    }
    raw::binary(op, a, b)
}

pub(super) fn ite(c: &Expr, a: &Expr, b: &Expr) -> Expr {
    if let Some(v) = c.as_const() {
        return if v == 1 { a.clone() } else { b.clone() };
    }
    if a == b {
        return a.clone();
    }
    if a.width() == 1 {
        match (a.as_const(), b.as_const()) {
            (Some(1), Some(0)) => return c.clone(),
            (Some(0), Some(1)) => return unary(Op::Not, c),
            _ => {}
        }
    }
    raw::ite(c, a, b)
}

pub(super) fn extract(hi: u32, lo: u32, a: &Expr) -> Expr {
    let w = hi - lo + 1;
    if lo == 0 && hi + 1 == a.width() {
        return a.clone();
    }
    if let Some(v) = a.as_const() {
        return konst(w, (v >> lo) & mask(w));
    }
    match a.node() {
        Node::Extract {
            lo: inner_lo, arg, ..
        } => return extract(hi + inner_lo, lo + inner_lo, arg),
        Node::Concat(h, l) => {
            let lw = l.width();
            if hi < lw {
                return extract(hi, lo, l);
            }
            if lo >= lw {
                return extract(hi - lw, lo - lw, h);
            }
        }
        Node::Extend { signed, arg } => {
            let aw = arg.width();
            if hi < aw {
                return extract(hi, lo, arg);
            }
            if !signed && lo >= aw {
                return konst(w, 0);
            }
        }
        _ => {}
    }
    raw::extract(hi, lo, a)
}

pub(super) fn extend(signed: bool, width: u32, a: &Expr) -> Expr {
    let aw = a.width();
    if width == aw {
        return a.clone();
    }
    if let Some(v) = a.as_const() {
        let v = if signed {
            (to_signed(v, aw) as u64) & mask(width)
        } else {
            v
        };
        return konst(width, v);
    }
    if let Node::Extend {
        signed: inner_signed,
        arg,
    } = a.node()
    {
        if *inner_signed == signed || !inner_signed {
            // zext(zext x) = zext x; sext(sext x) = sext x; sext(zext x) = zext x
            return extend(*inner_signed && signed, width, arg);
        }
    }
    raw::extend(signed, width, a)
}

pub(super) fn concat(h: &Expr, l: &Expr) -> Expr {
    let lw = l.width();
    let w = h.width() + lw;
    if let (Some(x), Some(y)) = (h.as_const(), l.as_const()) {
        return konst(w, (x << lw) | y);
    }
    if h.as_const() == Some(0) {
        return extend(false, w, l);
    }
    // x[hi:m+1] ++ x[m:lo]  ->  x[hi:lo]
    if let (
        Node::Extract {
            hi: h_hi,
            lo: h_lo,
            arg: h_arg,
        },
        Node::Extract {
            hi: l_hi,
            lo: l_lo,
            arg: l_arg,
        },
    ) = (h.node(), l.node())
    {
        if h_arg == l_arg && *h_lo == l_hi + 1 {
            return extract(*h_hi, *l_lo, h_arg);
        }
    }
    // x[hi:m+1] ++ (x[m:lo] ++ rest)  ->  x[hi:lo] ++ rest
    if let (
        Node::Extract {
            hi: h_hi,
            lo: h_lo,
            arg: h_arg,
        },
        Node::Concat(mid, rest),
    ) = (h.node(), l.node())
    {
        if let Node::Extract {
            hi: m_hi,
            lo: m_lo,
            arg: m_arg,
        } = mid.node()
        {
            if h_arg == m_arg && *h_lo == m_hi + 1 {
                return concat(&extract(*h_hi, *m_lo, h_arg), rest);
            }
        }
    }
    raw::concat(h, l)
}
