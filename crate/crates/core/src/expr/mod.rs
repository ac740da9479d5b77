// SPDX-License-Identifier: Apache-2.0

//! Width-tagged bitvector expressions.
//!
//! An [`Expr`] is an immutable, reference-counted tree. Every node knows its
//! width (1..=64 bits) and a structural hash computed at construction, so
//! equality checks and hash-map lookups stay cheap even for deep trees.
//! Construction goes through [`apply`], which validates operand widths and
//! runs the local simplifier.

mod eval;
mod provenance;
mod simplify;

use std::fmt;
use std::hash::{DefaultHasher, Hash, Hasher};
use std::sync::Arc;

use thiserror::Error;

pub use eval::{eval, eval_or_zero, fold_binary, fold_unary, EvalError};
pub use provenance::{roots_of, Label, Provenance, Root};

/// Maximum supported bit width.
pub const MAX_WIDTH: u32 = 64;

/// Mask with the low `width` bits set.
pub fn mask(width: u32) -> u64 {
    if width >= 64 {
        u64::MAX
    } else {
        (1u64 << width) - 1
    }
}

/// Interpret the low `width` bits of `v` as a two's complement number.
pub fn to_signed(v: u64, width: u32) -> i64 {
    if width >= 64 {
        v as i64
    } else {
        let shift = 64 - width;
        ((v << shift) as i64) >> shift
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ExprError {
    #[error("width {0} out of range 1..=64")]
    BadWidth(u32),
    #[error("operator {op} expects {expected} operands, got {got}")]
    Arity {
        op: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("operator {op}: width mismatch ({detail})")]
    WidthMismatch { op: &'static str, detail: String },
}

/// The closed operator set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Op {
    Add,
    Sub,
    Mul,
    UDiv,
    URem,
    And,
    Or,
    Xor,
    Not,
    Neg,
    Shl,
    LShr,
    AShr,
    Eq,
    Ne,
    Ult,
    Ule,
    Slt,
    Sle,
    Ite,
    /// Zero-extend to the given width.
    ZeroExt(u32),
    /// Sign-extend to the given width.
    SignExt(u32),
    /// Bits `hi..=lo` of the operand.
    Extract { hi: u32, lo: u32 },
    /// First operand supplies the high bits.
    Concat,
}

impl Op {
    pub fn name(self) -> &'static str {
        match self {
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::UDiv => "udiv",
            Op::URem => "urem",
            Op::And => "and",
            Op::Or => "or",
            Op::Xor => "xor",
            Op::Not => "not",
            Op::Neg => "neg",
            Op::Shl => "shl",
            Op::LShr => "lshr",
            Op::AShr => "ashr",
            Op::Eq => "eq",
            Op::Ne => "ne",
            Op::Ult => "ult",
            Op::Ule => "ule",
            Op::Slt => "slt",
            Op::Sle => "sle",
            Op::Ite => "ite",
            Op::ZeroExt(_) => "zext",
            Op::SignExt(_) => "sext",
            Op::Extract { .. } => "extract",
            Op::Concat => "concat",
        }
    }

    /// Parse a binary arithmetic/bitwise operator name.
    pub fn binary_from_name(name: &str) -> Option<Op> {
        Some(match name {
            "add" => Op::Add,
            "sub" => Op::Sub,
            "mul" => Op::Mul,
            "udiv" => Op::UDiv,
            "urem" => Op::URem,
            "and" => Op::And,
            "or" => Op::Or,
            "xor" => Op::Xor,
            "shl" => Op::Shl,
            "lshr" => Op::LShr,
            "ashr" => Op::AShr,
            _ => return None,
        })
    }

    /// Parse a comparison operator name.
    pub fn compare_from_name(name: &str) -> Option<Op> {
        Some(match name {
            "eq" => Op::Eq,
            "ne" => Op::Ne,
            "ult" => Op::Ult,
            "ule" => Op::Ule,
            "slt" => Op::Slt,
            "sle" => Op::Sle,
            _ => return None,
        })
    }

    pub fn is_compare(self) -> bool {
        matches!(self, Op::Eq | Op::Ne | Op::Ult | Op::Ule | Op::Slt | Op::Sle)
    }
}

pub type SymbolId = u64;

/// A free variable together with its origin labels.
#[derive(Clone)]
pub struct Symbol {
    pub id: SymbolId,
    pub width: u32,
    pub origin: Arc<Provenance>,
}

impl PartialEq for Symbol {
    fn eq(&self, other: &Self) -> bool {
        self.id == other.id && self.width == other.width
    }
}
impl Eq for Symbol {}

impl Hash for Symbol {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.id.hash(state);
        self.width.hash(state);
    }
}

impl fmt::Debug for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.name())
    }
}

impl Symbol {
    /// Human-readable name derived from the primary origin label.
    pub fn name(&self) -> String {
        let prefix = match self.origin.labels().first() {
            Some(Label::EcallArg { param, offset }) => format!("arg{param}_{offset}"),
            Some(Label::HostMemory) => "host".to_string(),
            Some(Label::GlobalState) => "glob".to_string(),
            Some(Label::EnclaveAlloc) => "heap".to_string(),
            Some(Label::Constant) => "k".to_string(),
            Some(Label::DerefOf(_)) | None => "s".to_string(),
        };
        format!("{prefix}#{}", self.id)
    }
}

#[derive(Clone, PartialEq, Eq, Hash)]
pub enum Node {
    Const(u64),
    Sym(Symbol),
    Unary(Op, Expr),
    Binary(Op, Expr, Expr),
    Ite(Expr, Expr, Expr),
    Extract { hi: u32, lo: u32, arg: Expr },
    Extend { signed: bool, arg: Expr },
    Concat(Expr, Expr),
}

struct Inner {
    node: Node,
    width: u32,
    hash: u64,
}

/// An immutable bitvector expression.
#[derive(Clone)]
pub struct Expr(Arc<Inner>);

impl PartialEq for Expr {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
            || (self.0.hash == other.0.hash
                && self.0.width == other.0.width
                && self.0.node == other.0.node)
    }
}
impl Eq for Expr {}

impl Hash for Expr {
    fn hash<H: Hasher>(&self, state: &mut H) {
        state.write_u64(self.0.hash);
    }
}

impl Expr {
    fn from_node(node: Node, width: u32) -> Expr {
        let mut h = DefaultHasher::new();
        width.hash(&mut h);
        node.hash(&mut h);
        Expr(Arc::new(Inner {
            node,
            width,
            hash: h.finish(),
        }))
    }

    pub fn node(&self) -> &Node {
        &self.0.node
    }

    pub fn width(&self) -> u32 {
        self.0.width
    }

    /// Structural hash, stable across runs.
    pub fn structural_hash(&self) -> u64 {
        self.0.hash
    }

    /// Pointer identity used for memo tables.
    pub(crate) fn ptr_id(&self) -> usize {
        Arc::as_ptr(&self.0) as usize
    }

    pub fn as_const(&self) -> Option<u64> {
        match self.node() {
            Node::Const(v) => Some(*v),
            _ => None,
        }
    }

    pub fn is_const(&self) -> bool {
        self.as_const().is_some()
    }

    pub fn is_true(&self) -> bool {
        self.width() == 1 && self.as_const() == Some(1)
    }

    pub fn is_false(&self) -> bool {
        self.width() == 1 && self.as_const() == Some(0)
    }

    pub fn as_symbol(&self) -> Option<&Symbol> {
        match self.node() {
            Node::Sym(s) => Some(s),
            _ => None,
        }
    }

    pub fn children(&self) -> Vec<&Expr> {
        match self.node() {
            Node::Const(_) | Node::Sym(_) => vec![],
            Node::Unary(_, a) | Node::Extract { arg: a, .. } | Node::Extend { arg: a, .. } => {
                vec![a]
            }
            Node::Binary(_, a, b) | Node::Concat(a, b) => vec![a, b],
            Node::Ite(c, a, b) => vec![c, a, b],
        }
    }

    /// All distinct symbols in the expression, ordered by id.
    pub fn symbols(&self) -> Vec<Symbol> {
        let mut seen = std::collections::HashSet::new();
        let mut out = std::collections::BTreeMap::new();
        let mut stack = vec![self];
        while let Some(e) = stack.pop() {
            if !seen.insert(e.ptr_id()) {
                continue;
            }
            if let Node::Sym(s) = e.node() {
                out.insert(s.id, s.clone());
            }
            stack.extend(e.children());
        }
        out.into_values().collect()
    }

    /// Number of distinct nodes in the DAG.
    pub fn node_count(&self) -> usize {
        let mut seen = std::collections::HashSet::new();
        let mut stack = vec![self];
        while let Some(e) = stack.pop() {
            if seen.insert(e.ptr_id()) {
                stack.extend(e.children());
            }
        }
        seen.len()
    }

    // Infallible builders for internal use where widths are known to agree.

    pub fn bin(op: Op, a: &Expr, b: &Expr) -> Expr {
        apply(op, &[a.clone(), b.clone()]).expect("operand widths agree")
    }

    pub fn add(&self, o: &Expr) -> Expr {
        Expr::bin(Op::Add, self, o)
    }
    pub fn sub(&self, o: &Expr) -> Expr {
        Expr::bin(Op::Sub, self, o)
    }
    pub fn and(&self, o: &Expr) -> Expr {
        Expr::bin(Op::And, self, o)
    }
    pub fn or(&self, o: &Expr) -> Expr {
        Expr::bin(Op::Or, self, o)
    }
    pub fn eq_(&self, o: &Expr) -> Expr {
        Expr::bin(Op::Eq, self, o)
    }
    pub fn ult(&self, o: &Expr) -> Expr {
        Expr::bin(Op::Ult, self, o)
    }
    pub fn ule(&self, o: &Expr) -> Expr {
        Expr::bin(Op::Ule, self, o)
    }
    pub fn not(&self) -> Expr {
        apply(Op::Not, std::slice::from_ref(self)).expect("unary")
    }
    pub fn add_const(&self, c: u64) -> Expr {
        self.add(&Expr::konst(self.width(), c))
    }
    pub fn eq_const(&self, c: u64) -> Expr {
        self.eq_(&Expr::konst(self.width(), c))
    }
    pub fn zext(&self, width: u32) -> Expr {
        apply(Op::ZeroExt(width), std::slice::from_ref(self)).expect("zext width")
    }
    pub fn extract(&self, hi: u32, lo: u32) -> Expr {
        apply(Op::Extract { hi, lo }, std::slice::from_ref(self)).expect("extract bounds")
    }
    pub fn concat(hi: &Expr, lo: &Expr) -> Expr {
        apply(Op::Concat, &[hi.clone(), lo.clone()]).expect("concat width")
    }
    pub fn ite(c: &Expr, a: &Expr, b: &Expr) -> Expr {
        apply(Op::Ite, &[c.clone(), a.clone(), b.clone()]).expect("ite widths")
    }

    /// Constant with the value reduced modulo `2^width`. Panics on a bad width;
    /// use [`mk_const`] for the checked variant.
    pub fn konst(width: u32, value: u64) -> Expr {
        mk_const(width, value).expect("valid width")
    }

    pub fn bool_const(b: bool) -> Expr {
        Expr::konst(1, b as u64)
    }

    /// Conjunction of width-1 expressions; `true` when empty.
    pub fn all(items: impl IntoIterator<Item = Expr>) -> Expr {
        items
            .into_iter()
            .fold(Expr::bool_const(true), |acc, e| acc.and(&e))
    }

    /// Disjunction of width-1 expressions; `false` when empty.
    pub fn any(items: impl IntoIterator<Item = Expr>) -> Expr {
        items
            .into_iter()
            .fold(Expr::bool_const(false), |acc, e| acc.or(&e))
    }
}

/// Build a constant, reducing `value` modulo `2^width`.
pub fn mk_const(width: u32, value: u64) -> Result<Expr, ExprError> {
    check_width(width)?;
    Ok(Expr::from_node(Node::Const(value & mask(width)), width))
}

/// Build a fresh symbol with a process-unique id drawn from `factory`.
pub fn mk_sym(factory: &SymbolFactory, width: u32, origin: Provenance) -> Result<Expr, ExprError> {
    check_width(width)?;
    Ok(factory.fresh(width, origin))
}

fn check_width(width: u32) -> Result<(), ExprError> {
    if width == 0 || width > MAX_WIDTH {
        Err(ExprError::BadWidth(width))
    } else {
        Ok(())
    }
}

/// Allocates symbol ids. One factory per exploration keeps ids (and thus
/// reports) deterministic regardless of what other explorations run in the
/// same process.
#[derive(Debug, Default)]
pub struct SymbolFactory {
    next: std::sync::atomic::AtomicU64,
}

impl SymbolFactory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn starting_at(first: SymbolId) -> Self {
        SymbolFactory {
            next: std::sync::atomic::AtomicU64::new(first),
        }
    }

    pub fn fresh(&self, width: u32, origin: Provenance) -> Expr {
        let id = self
            .next
            .fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        Expr::from_node(
            Node::Sym(Symbol {
                id,
                width,
                origin: Arc::new(origin),
            }),
            width,
        )
    }

    pub fn issued(&self) -> u64 {
        self.next.load(std::sync::atomic::Ordering::Relaxed)
    }
}

/// Build `op(operands)`, validating the signature and simplifying.
pub fn apply(op: Op, operands: &[Expr]) -> Result<Expr, ExprError> {
    let want = match op {
        Op::Not | Op::Neg | Op::ZeroExt(_) | Op::SignExt(_) | Op::Extract { .. } => 1,
        Op::Ite => 3,
        _ => 2,
    };
    if operands.len() != want {
        return Err(ExprError::Arity {
            op: op.name(),
            expected: want,
            got: operands.len(),
        });
    }
    let mismatch = |detail: String| ExprError::WidthMismatch {
        op: op.name(),
        detail,
    };
    match op {
        Op::Not | Op::Neg => Ok(simplify::unary(op, &operands[0])),
        Op::ZeroExt(w) | Op::SignExt(w) => {
            check_width(w)?;
            let a = &operands[0];
            if w < a.width() {
                return Err(mismatch(format!("cannot extend {} bits to {w}", a.width())));
            }
            Ok(simplify::extend(matches!(op, Op::SignExt(_)), w, a))
        }
        Op::Extract { hi, lo } => {
            let a = &operands[0];
            if hi < lo || hi >= a.width() {
                return Err(mismatch(format!(
                    "extract [{hi}:{lo}] of {}-bit operand",
                    a.width()
                )));
            }
            Ok(simplify::extract(hi, lo, a))
        }
        Op::Concat => {
            let (a, b) = (&operands[0], &operands[1]);
            let w = a.width() + b.width();
            if w > MAX_WIDTH {
                return Err(mismatch(format!("concat result {w} bits exceeds 64")));
            }
            Ok(simplify::concat(a, b))
        }
        Op::Ite => {
            let (c, a, b) = (&operands[0], &operands[1], &operands[2]);
            if c.width() != 1 {
                return Err(mismatch(format!("condition has width {}", c.width())));
            }
            if a.width() != b.width() {
                return Err(mismatch(format!("branches {} vs {}", a.width(), b.width())));
            }
            Ok(simplify::ite(c, a, b))
        }
        _ => {
            let (a, b) = (&operands[0], &operands[1]);
            if a.width() != b.width() {
                return Err(mismatch(format!("{} vs {}", a.width(), b.width())));
            }
            Ok(simplify::binary(op, a, b))
        }
    }
}

/// Raw constructors that bypass simplification; the simplifier itself and
/// property tests use these.
pub(crate) mod raw {
    use super::*;

    pub fn unary(op: Op, a: &Expr) -> Expr {
        Expr::from_node(Node::Unary(op, a.clone()), a.width())
    }
    pub fn binary(op: Op, a: &Expr, b: &Expr) -> Expr {
        let w = if op.is_compare() { 1 } else { a.width() };
        Expr::from_node(Node::Binary(op, a.clone(), b.clone()), w)
    }
    pub fn ite(c: &Expr, a: &Expr, b: &Expr) -> Expr {
        Expr::from_node(Node::Ite(c.clone(), a.clone(), b.clone()), a.width())
    }
    pub fn extract(hi: u32, lo: u32, a: &Expr) -> Expr {
        Expr::from_node(
            Node::Extract {
                hi,
                lo,
                arg: a.clone(),
            },
            hi - lo + 1,
        )
    }
    pub fn extend(signed: bool, width: u32, a: &Expr) -> Expr {
        Expr::from_node(
            Node::Extend {
                signed,
                arg: a.clone(),
            },
            width,
        )
    }
    pub fn concat(a: &Expr, b: &Expr) -> Expr {
        Expr::from_node(Node::Concat(a.clone(), b.clone()), a.width() + b.width())
    }
}

/// Build without simplification (validated). Exposed for tests that need
/// to compare simplified and unsimplified forms.
pub fn apply_unsimplified(op: Op, operands: &[Expr]) -> Result<Expr, ExprError> {
    // Reuse the validation in `apply` by checking the simplified result's
    // width, then construct the raw node.
    let checked = apply(op, operands)?;
    Ok(match op {
        Op::Not | Op::Neg => raw::unary(op, &operands[0]),
        Op::ZeroExt(w) => raw::extend(false, w, &operands[0]),
        Op::SignExt(w) => raw::extend(true, w, &operands[0]),
        Op::Extract { hi, lo } => raw::extract(hi, lo, &operands[0]),
        Op::Concat => raw::concat(&operands[0], &operands[1]),
        Op::Ite => raw::ite(&operands[0], &operands[1], &operands[2]),
        _ => {
            debug_assert_eq!(checked.width(), raw::binary(op, &operands[0], &operands[1]).width());
            raw::binary(op, &operands[0], &operands[1])
        }
    })
}

/// Replace the symbols bound in `values` by constants and re-simplify.
pub fn substitute(e: &Expr, values: &std::collections::BTreeMap<SymbolId, u64>) -> Expr {
    if values.is_empty() || e.is_const() {
        return e.clone();
    }
    let mut memo = std::collections::HashMap::new();
    subst_rec(e, values, &mut memo)
}

fn subst_rec(
    e: &Expr,
    values: &std::collections::BTreeMap<SymbolId, u64>,
    memo: &mut std::collections::HashMap<usize, Expr>,
) -> Expr {
    if let Some(r) = memo.get(&e.ptr_id()) {
        return r.clone();
    }
    let same = |a: &Expr, b: &Expr| a.ptr_id() == b.ptr_id();
    let r = match e.node() {
        Node::Const(_) => e.clone(),
        Node::Sym(s) => match values.get(&s.id) {
            Some(v) => Expr::konst(e.width(), *v),
            None => e.clone(),
        },
        Node::Unary(op, a) => {
            let a2 = subst_rec(a, values, memo);
            if same(a, &a2) {
                e.clone()
            } else {
                simplify::unary(*op, &a2)
            }
        }
        Node::Binary(op, a, b) => {
            let (a2, b2) = (subst_rec(a, values, memo), subst_rec(b, values, memo));
            if same(a, &a2) && same(b, &b2) {
                e.clone()
            } else {
                simplify::binary(*op, &a2, &b2)
            }
        }
        Node::Ite(c, a, b) => {
            let c2 = subst_rec(c, values, memo);
            let (a2, b2) = (subst_rec(a, values, memo), subst_rec(b, values, memo));
            if same(c, &c2) && same(a, &a2) && same(b, &b2) {
                e.clone()
            } else {
                simplify::ite(&c2, &a2, &b2)
            }
        }
        Node::Extract { hi, lo, arg } => {
            let a2 = subst_rec(arg, values, memo);
            if same(arg, &a2) {
                e.clone()
            } else {
                simplify::extract(*hi, *lo, &a2)
            }
        }
        Node::Extend { signed, arg } => {
            let a2 = subst_rec(arg, values, memo);
            if same(arg, &a2) {
                e.clone()
            } else {
                simplify::extend(*signed, e.width(), &a2)
            }
        }
        Node::Concat(a, b) => {
            let (a2, b2) = (subst_rec(a, values, memo), subst_rec(b, values, memo));
            if same(a, &a2) && same(b, &b2) {
                e.clone()
            } else {
                simplify::concat(&a2, &b2)
            }
        }
    };
    memo.insert(e.ptr_id(), r.clone());
    r
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.node() {
            Node::Const(v) => {
                if self.width() == 1 {
                    write!(f, "{}", if *v == 1 { "true" } else { "false" })
                } else if *v < 10 {
                    write!(f, "{v}")
                } else {
                    write!(f, "0x{v:x}")
                }
            }
            Node::Sym(s) => write!(f, "{}", s.name()),
            Node::Unary(op, a) => write!(f, "({} {a})", op.name()),
            Node::Binary(op, a, b) => {
                let sym = match op {
                    Op::Add => "+",
                    Op::Sub => "-",
                    Op::Mul => "*",
                    Op::And => "&",
                    Op::Or => "|",
                    Op::Xor => "^",
                    Op::Eq => "==",
                    Op::Ne => "!=",
                    _ => return write!(f, "({} {a} {b})", op.name()),
                };
                write!(f, "({a} {sym} {b})")
            }
            Node::Ite(c, a, b) => write!(f, "(ite {c} {a} {b})"),
            Node::Extract { hi, lo, arg } => write!(f, "{arg}[{hi}:{lo}]"),
            Node::Extend { signed, arg } => {
                let k = if *signed { "sext" } else { "zext" };
                write!(f, "({k}{} {arg})", self.width())
            }
            Node::Concat(a, b) => write!(f, "({a} ++ {b})"),
        }
    }
}

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}:{}", self.width())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sym(f: &SymbolFactory, w: u32) -> Expr {
        f.fresh(w, Provenance::default())
    }

    #[test]
    fn const_is_reduced() {
        assert_eq!(mk_const(8, 300).unwrap().as_const(), Some(44));
        assert!(mk_const(1, 1).unwrap().is_true());
        assert_eq!(mk_const(64, 0x1000).unwrap().as_const(), Some(0x1000));
        assert_eq!(mk_const(0, 1), Err(ExprError::BadWidth(0)));
        assert_eq!(mk_const(65, 1), Err(ExprError::BadWidth(65)));
    }

    #[test]
    fn folding_examples() {
        let r = apply(Op::Add, &[Expr::konst(8, 1), Expr::konst(8, 255)]).unwrap();
        assert_eq!(r.as_const(), Some(0));
        assert_eq!(r.width(), 8);
        let f = SymbolFactory::new();
        let s = sym(&f, 16);
        let x = apply(Op::Xor, &[s.clone(), s.clone()]).unwrap();
        assert_eq!(x.as_const(), Some(0));
        assert_eq!(x.width(), 16);
        let c = apply(
            Op::Ult,
            &[Expr::konst(64, 0xFFF), Expr::konst(64, 0x1000)],
        )
        .unwrap();
        assert!(c.is_true());
    }

    #[test]
    fn identities() {
        let f = SymbolFactory::new();
        let s = sym(&f, 32);
        assert_eq!(s.add(&Expr::konst(32, 0)), s);
        assert_eq!(s.and(&Expr::konst(32, 0)).as_const(), Some(0));
        let t = sym(&f, 32);
        assert_eq!(Expr::ite(&Expr::bool_const(true), &s, &t), s);
        assert_eq!(Expr::ite(&Expr::bool_const(false), &s, &t), t);
    }

    #[test]
    fn signature_errors() {
        let f = SymbolFactory::new();
        let a = sym(&f, 8);
        let b = sym(&f, 16);
        assert!(matches!(
            apply(Op::Add, &[a.clone(), b.clone()]),
            Err(ExprError::WidthMismatch { .. })
        ));
        assert!(matches!(
            apply(Op::Add, std::slice::from_ref(&a)),
            Err(ExprError::Arity { .. })
        ));
        assert!(apply(Op::Extract { hi: 8, lo: 0 }, std::slice::from_ref(&a)).is_err());
        assert!(apply(Op::Ite, &[a.clone(), a.clone(), a.clone()]).is_err());
        assert!(apply(Op::ZeroExt(4), std::slice::from_ref(&a)).is_err());
        assert!(apply(Op::Concat, &[Expr::konst(64, 0), a]).is_err());
    }

    #[test]
    fn byte_concat_recombines() {
        let f = SymbolFactory::new();
        let s = sym(&f, 64);
        let mut acc = s.extract(7, 0);
        for i in 1..8 {
            acc = Expr::concat(&s.extract(i * 8 + 7, i * 8), &acc);
        }
        assert_eq!(acc, s);
    }

    #[test]
    fn symbols_are_collected_in_id_order() {
        let f = SymbolFactory::new();
        let a = sym(&f, 8);
        let b = sym(&f, 8);
        let e = b.add(&a).add(&b);
        let ids: Vec<_> = e.symbols().iter().map(|s| s.id).collect();
        assert_eq!(ids, vec![0, 1]);
    }
}
