// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeSet;
use std::fmt;

use super::Expr;

/// Origin annotation on a symbolic value.
#[derive(Clone, PartialEq, Eq, Hash)]
pub enum Label {
    /// Bytes `offset..` of ECALL parameter `param`.
    EcallArg { param: u32, offset: u32 },
    /// Untrusted memory outside the enclave.
    HostMemory,
    /// Enclave global state, unconstrained at ECALL entry.
    GlobalState,
    /// Loaded through the given address expression.
    DerefOf(Expr),
    /// Uninitialized enclave heap or stack memory.
    EnclaveAlloc,
    Constant,
}

impl Label {
    pub fn kind(&self) -> &'static str {
        match self {
            Label::EcallArg { .. } => "ecall-arg",
            Label::HostMemory => "host-memory",
            Label::GlobalState => "global-state",
            Label::DerefOf(_) => "deref-of",
            Label::EnclaveAlloc => "enclave-alloc",
            Label::Constant => "constant",
        }
    }
}

impl fmt::Debug for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::EcallArg { param, offset } => write!(f, "ecall-arg({param}, +{offset})"),
            Label::DerefOf(e) => write!(f, "deref-of({e})"),
            other => write!(f, "{}", other.kind()),
        }
    }
}

/// A finite, insertion-ordered set of labels.
#[derive(Clone, Default, PartialEq, Eq, Hash)]
pub struct Provenance {
    labels: Vec<Label>,
}

impl Provenance {
    pub fn new(labels: impl IntoIterator<Item = Label>) -> Self {
        let mut p = Provenance::default();
        for l in labels {
            p.insert(l);
        }
        p
    }

    pub fn single(label: Label) -> Self {
        Provenance {
            labels: vec![label],
        }
    }

    pub fn insert(&mut self, label: Label) {
        if !self.labels.contains(&label) {
            self.labels.push(label);
        }
    }

    pub fn extend(&mut self, other: &Provenance) {
        for l in &other.labels {
            self.insert(l.clone());
        }
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn contains(&self, label: &Label) -> bool {
        self.labels.contains(label)
    }

    pub fn has_kind(&self, kind: &str) -> bool {
        self.labels.iter().any(|l| l.kind() == kind)
    }

    pub fn deref_sources(&self) -> impl Iterator<Item = &Expr> {
        self.labels.iter().filter_map(|l| match l {
            Label::DerefOf(e) => Some(e),
            _ => None,
        })
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Union of the origin labels of every symbol in `e`, or `{constant}`
    /// when `e` has no symbols.
    pub fn of_expr(e: &Expr) -> Provenance {
        let syms = e.symbols();
        if syms.is_empty() {
            return Provenance::single(Label::Constant);
        }
        let mut p = Provenance::default();
        for s in syms {
            p.extend(&s.origin);
        }
        p
    }
}

impl fmt::Debug for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.labels.iter()).finish()
    }
}

/// Attacker-relevant origin of a value, after following dereference links.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Root {
    Arg { param: u32, offset: u32 },
    Host,
    Global,
}

/// Compute the attacker roots of `e`.
///
/// ECALL argument bytes and unconstrained globals are roots by themselves.
/// Host memory read through an address that already has roots inherits the
/// address's roots (the host-ness is then a consequence of that address);
/// host memory at an unrooted address is a `Host` root. Uninitialized enclave
/// memory contributes the roots of the address it was read through, since an
/// attacker-steered read can land on attacker-staged bytes.
pub fn roots_of(e: &Expr) -> BTreeSet<Root> {
    let mut memo = std::collections::HashMap::new();
    expr_roots(e, &mut memo, 0)
}

type RootMemo = std::collections::HashMap<u64, BTreeSet<Root>>;

fn expr_roots(e: &Expr, memo: &mut RootMemo, depth: usize) -> BTreeSet<Root> {
    let mut out = BTreeSet::new();
    for s in e.symbols() {
        out.extend(symbol_roots(&s, memo, depth));
    }
    out
}

fn symbol_roots(s: &super::Symbol, memo: &mut RootMemo, depth: usize) -> BTreeSet<Root> {
    if let Some(r) = memo.get(&s.id) {
        return r.clone();
    }
    let mut out = BTreeSet::new();
    // Deref chains are acyclic by construction; the depth cap only bounds
    // pathological inputs.
    if depth > 256 {
        return out;
    }
    let labels = s.origin.labels();
    for l in labels {
        match l {
            Label::EcallArg { param, offset } => {
                out.insert(Root::Arg {
                    param: *param,
                    offset: *offset,
                });
            }
            Label::GlobalState => {
                out.insert(Root::Global);
            }
            _ => {}
        }
    }
    let host = labels.contains(&Label::HostMemory);
    let alloc = labels.contains(&Label::EnclaveAlloc);
    if host || alloc {
        let mut addr_roots = BTreeSet::new();
        for src in s.origin.deref_sources() {
            addr_roots.extend(expr_roots(src, memo, depth + 1));
        }
        if addr_roots.is_empty() && host {
            out.insert(Root::Host);
        }
        out.extend(addr_roots);
    }
    memo.insert(s.id, out.clone());
    out
}
