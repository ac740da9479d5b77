// SPDX-License-Identifier: Apache-2.0

use std::collections::{BTreeMap, HashMap};

use thiserror::Error;

use super::{mask, to_signed, Expr, Node, Op, SymbolId};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EvalError {
    #[error("symbol {0} has no value in the model")]
    Unassigned(String),
}

/// Evaluate `expr` under `model`. Every symbol must be assigned.
pub fn eval(model: &BTreeMap<SymbolId, u64>, expr: &Expr) -> Result<u64, EvalError> {
    let mut memo = HashMap::new();
    eval_inner(model, expr, false, &mut memo)
}

/// Evaluate with unassigned symbols read as zero.
pub fn eval_or_zero(model: &BTreeMap<SymbolId, u64>, expr: &Expr) -> u64 {
    let mut memo = HashMap::new();
    eval_inner(model, expr, true, &mut memo).expect("defaulting eval cannot fail")
}

fn eval_inner(
    model: &BTreeMap<SymbolId, u64>,
    e: &Expr,
    default_zero: bool,
    memo: &mut HashMap<usize, u64>,
) -> Result<u64, EvalError> {
    if let Some(v) = memo.get(&e.ptr_id()) {
        return Ok(*v);
    }
    let w = e.width();
    let v = match e.node() {
        Node::Const(v) => *v,
        Node::Sym(s) => match model.get(&s.id) {
            Some(v) => *v & mask(w),
            None if default_zero => 0,
            None => return Err(EvalError::Unassigned(s.name())),
        },
        Node::Unary(op, a) => {
            let a = eval_inner(model, a, default_zero, memo)?;
            fold_unary(*op, a, w)
        }
        Node::Binary(op, a, b) => {
            let aw = a.width();
            let a = eval_inner(model, a, default_zero, memo)?;
            let b = eval_inner(model, b, default_zero, memo)?;
            fold_binary(*op, a, b, aw)
        }
        Node::Ite(c, a, b) => {
            if eval_inner(model, c, default_zero, memo)? == 1 {
                eval_inner(model, a, default_zero, memo)?
            } else {
                eval_inner(model, b, default_zero, memo)?
            }
        }
        Node::Extract { hi, lo, arg } => {
            let a = eval_inner(model, arg, default_zero, memo)?;
            (a >> lo) & mask(hi - lo + 1)
        }
        Node::Extend { signed, arg } => {
            let a = eval_inner(model, arg, default_zero, memo)?;
            if *signed {
                (to_signed(a, arg.width()) as u64) & mask(w)
            } else {
                a
            }
        }
        Node::Concat(hi, lo) => {
            let lw = lo.width();
            let h = eval_inner(model, hi, default_zero, memo)?;
            let l = eval_inner(model, lo, default_zero, memo)?;
            ((h << lw) | l) & mask(w)
        }
    };
    memo.insert(e.ptr_id(), v);
    Ok(v)
}

pub fn fold_unary(op: Op, a: u64, w: u32) -> u64 {
    match op {
        Op::Not => !a & mask(w),
        Op::Neg => a.wrapping_neg() & mask(w),
        _ => unreachable!("not a unary operator: {op:?}"),
    }
}

/// Concrete semantics of a binary operator on `w`-bit operands. Comparison
/// results are 0/1.
pub fn fold_binary(op: Op, a: u64, b: u64, w: u32) -> u64 {
    let m = mask(w);
    let (a, b) = (a & m, b & m);
    match op {
        Op::Add => a.wrapping_add(b) & m,
        Op::Sub => a.wrapping_sub(b) & m,
        Op::Mul => a.wrapping_mul(b) & m,
        Op::UDiv => a.checked_div(b).unwrap_or(m),
        Op::URem => {
            if b == 0 {
                a
            } else {
                a % b
            }
        }
        Op::And => a & b,
        Op::Or => a | b,
        Op::Xor => a ^ b,
        Op::Shl => {
            if b >= w as u64 {
                0
            } else {
                (a << b) & m
            }
        }
        Op::LShr => {
            if b >= w as u64 {
                0
            } else {
                a >> b
            }
        }
        Op::AShr => {
            let sa = to_signed(a, w);
            let sh = if b >= w as u64 { 63 } else { b as u32 };
            ((sa >> sh) as u64) & m
        }
        Op::Eq => (a == b) as u64,
        Op::Ne => (a != b) as u64,
        Op::Ult => (a < b) as u64,
        Op::Ule => (a <= b) as u64,
        Op::Slt => (to_signed(a, w) < to_signed(b, w)) as u64,
        Op::Sle => (to_signed(a, w) <= to_signed(b, w)) as u64,
        _ => unreachable!("not a binary operator: {op:?}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{Provenance, SymbolFactory};

    #[test]
    fn eval_examples() {
        let f = SymbolFactory::new();
        let s = f.fresh(64, Provenance::default());
        let id = s.as_symbol().unwrap().id;
        let model: BTreeMap<_, _> = [(id, 3)].into();
        assert_eq!(eval(&model, &s.add_const(4)).unwrap(), 7);

        let b = f.fresh(8, Provenance::default());
        let bid = b.as_symbol().unwrap().id;
        let model: BTreeMap<_, _> = [(bid, 255)].into();
        assert_eq!(eval(&model, &b.zext(64)).unwrap(), 255);

        let a = f.fresh(8, Provenance::default());
        let c = f.fresh(8, Provenance::default());
        let model: BTreeMap<_, _> = [
            (a.as_symbol().unwrap().id, 0x0F),
            (c.as_symbol().unwrap().id, 0x11),
        ]
        .into();
        assert_eq!(eval(&model, &a.add(&c)).unwrap(), 0x20);
    }

    #[test]
    fn unassigned_symbol_is_an_error() {
        let f = SymbolFactory::new();
        let s = f.fresh(8, Provenance::default());
        assert!(matches!(
            eval(&BTreeMap::new(), &s),
            Err(EvalError::Unassigned(_))
        ));
        assert_eq!(eval_or_zero(&BTreeMap::new(), &s.add_const(2)), 2);
    }

    #[test]
    fn division_by_zero_is_total() {
        assert_eq!(fold_binary(Op::UDiv, 7, 0, 8), 0xFF);
        assert_eq!(fold_binary(Op::URem, 7, 0, 8), 7);
    }

    #[test]
    fn arithmetic_shift_fills_sign() {
        assert_eq!(fold_binary(Op::AShr, 0x80, 3, 8), 0xF0);
        assert_eq!(fold_binary(Op::AShr, 0x80, 9, 8), 0xFF);
        assert_eq!(fold_binary(Op::AShr, 0x40, 9, 8), 0x00);
        assert_eq!(fold_binary(Op::Shl, 1, 8, 8), 0);
    }
}
