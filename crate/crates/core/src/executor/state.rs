// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use crate::constraints::PathConstraints;
use crate::eir::NUM_REGS;
use crate::expr::Expr;
use crate::loader::EnclavePackage;
use crate::memory::SymMemory;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StepKind {
    Exec,
    Branch(bool),
    Hook(String),
}

impl fmt::Display for StepKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StepKind::Exec => f.write_str("exec"),
            StepKind::Branch(t) => write!(f, "branch:{t}"),
            StepKind::Hook(n) => write!(f, "hook:{n}"),
        }
    }
}

impl StepKind {
    pub fn parse(s: &str) -> Option<StepKind> {
        match s {
            "exec" => Some(StepKind::Exec),
            "branch:true" => Some(StepKind::Branch(true)),
            "branch:false" => Some(StepKind::Branch(false)),
            _ => s.strip_prefix("hook:").map(|n| StepKind::Hook(n.to_string())),
        }
    }
}

/// One executed instruction or hook invocation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceStep {
    pub pc: u64,
    pub kind: StepKind,
    /// A symbolic address or size was fixed to one value during this step.
    pub concretized: bool,
}

struct TraceNode {
    step: TraceStep,
    prev: Option<Arc<TraceNode>>,
}

impl Drop for TraceNode {
    // Iterative drop: traces can be tens of thousands of nodes long.
    fn drop(&mut self) {
        let mut prev = self.prev.take();
        while let Some(node) = prev {
            match Arc::try_unwrap(node) {
                Ok(mut n) => prev = n.prev.take(),
                Err(_) => break,
            }
        }
    }
}

/// Append-only step list shared structurally between forked states.
#[derive(Clone, Default)]
pub struct Trace {
    head: Option<Arc<TraceNode>>,
    len: usize,
}

impl Trace {
    pub fn push(&mut self, step: TraceStep) {
        let prev = self.head.take();
        self.head = Some(Arc::new(TraceNode { step, prev }));
        self.len += 1;
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn to_vec(&self) -> Vec<TraceStep> {
        let mut out = Vec::with_capacity(self.len);
        let mut cur = self.head.as_deref();
        while let Some(n) = cur {
            out.push(n.step.clone());
            cur = n.prev.as_deref();
        }
        out.reverse();
        out
    }
}

impl fmt::Debug for Trace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Trace(len {})", self.len)
    }
}

/// Symbol holding bytes `offset..` of ECALL parameter `param`.
#[derive(Debug, Clone)]
pub struct ArgSymbol {
    pub param: u32,
    pub offset: u32,
    pub value: Expr,
}

/// Values produced by one OCALL summary.
#[derive(Debug, Clone)]
pub struct OcallRecord {
    pub ret: Expr,
    /// Havocked out-buffer: address and fresh byte values.
    pub out: Option<(u64, Vec<Expr>)>,
}

/// One symbolic execution path.
#[derive(Debug, Clone)]
pub struct State {
    pub pc: u64,
    pub regs: [Expr; NUM_REGS],
    pub mem: SymMemory,
    pub path: PathConstraints,
    pub trace: Trace,
    pub steps: u64,
    pub fork_depth: u32,
    /// Visits per branch instruction.
    pub visits: BTreeMap<u64, u32>,
    pub args: Vec<ArgSymbol>,
    pub ocalls: Vec<OcallRecord>,
    /// Memory reads issued in the current step.
    pub reads_in_step: u32,
    /// Marks the next trace step as concretized (set by marshalling).
    pub pending_concretized: bool,
}

impl State {
    pub fn new(pkg: &EnclavePackage, pc: u64) -> State {
        State {
            pc,
            regs: std::array::from_fn(|_| Expr::konst(64, 0)),
            mem: SymMemory::new(pkg.layout, &pkg.program.data),
            path: PathConstraints::new(),
            trace: Trace::default(),
            steps: 0,
            fork_depth: 0,
            visits: BTreeMap::new(),
            args: Vec::new(),
            ocalls: Vec::new(),
            reads_in_step: 0,
            pending_concretized: false,
        }
    }

    /// Register value with pinned symbols folded in.
    pub fn reg(&self, r: u8) -> Expr {
        self.path.resolve(&self.regs[r as usize])
    }
}
