// SPDX-License-Identifier: Apache-2.0

//! Path constraints with a table of symbols they pin to a single value.

use std::collections::BTreeMap;

use crate::expr::{mask, substitute, Expr, Node, Op, SymbolId};

/// Ordered conjunction of width-1 constraints.
///
/// Whenever a constraint has the shape `s == c`, `s + k == c` or
/// `zext(s) == c`, the value of `s` is recorded so that later expressions can
/// be folded with [`PathConstraints::resolve`].
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PathConstraints {
    list: Vec<Expr>,
    known: BTreeMap<SymbolId, u64>,
}

impl PathConstraints {
    pub fn new() -> Self {
        Self::default()
    }

    /// Add a constraint. Constant-true constraints are dropped.
    pub fn push(&mut self, c: Expr) {
        debug_assert_eq!(c.width(), 1);
        if c.is_true() {
            return;
        }
        if let Some((id, v)) = pinned(&c) {
            self.known.insert(id, v);
        }
        self.list.push(c);
    }

    pub fn as_slice(&self) -> &[Expr] {
        &self.list
    }

    pub fn len(&self) -> usize {
        self.list.len()
    }

    pub fn is_empty(&self) -> bool {
        self.list.is_empty()
    }

    pub fn known(&self) -> &BTreeMap<SymbolId, u64> {
        &self.known
    }

    /// Fold pinned symbols of `e` into constants.
    pub fn resolve(&self, e: &Expr) -> Expr {
        substitute(e, &self.known)
    }
}

fn pinned(c: &Expr) -> Option<(SymbolId, u64)> {
    let Node::Binary(Op::Eq, lhs, rhs) = c.node() else {
        return None;
    };
    let (mut e, mut v) = match (lhs.as_const(), rhs.as_const()) {
        (None, Some(v)) => (lhs.clone(), v),
        (Some(v), None) => (rhs.clone(), v),
        _ => return None,
    };
    loop {
        let next = match e.node() {
            Node::Sym(s) => return Some((s.id, v)),
            Node::Binary(Op::Add, x, k) => {
                let k = k.as_const()?;
                v = v.wrapping_sub(k) & mask(e.width());
                x.clone()
            }
            Node::Extend { signed: false, arg } => {
                if v > mask(arg.width()) {
                    return None;
                }
                arg.clone()
            }
            _ => return None,
        };
        e = next;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{Provenance, SymbolFactory};

    #[test]
    fn offsets_are_peeled() {
        let f = SymbolFactory::new();
        let p = f.fresh(64, Provenance::default());
        let mut pc = PathConstraints::new();
        pc.push(p.add_const(8).eq_const(0x2010));
        assert_eq!(pc.known()[&p.as_symbol().unwrap().id], 0x2008);
        assert_eq!(pc.resolve(&p.add_const(16)).as_const(), Some(0x2018));
    }

    #[test]
    fn narrow_symbol_through_zext() {
        let f = SymbolFactory::new();
        let b = f.fresh(8, Provenance::default());
        let mut pc = PathConstraints::new();
        pc.push(b.zext(64).eq_const(0x300));
        assert!(pc.known().is_empty());
        pc.push(b.zext(64).eq_const(0x30));
        assert_eq!(pc.resolve(&b).as_const(), Some(0x30));
    }
}
