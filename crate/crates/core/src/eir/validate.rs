// SPDX-License-Identifier: Apache-2.0

use std::collections::HashSet;
use std::fmt;

use super::{Inst, Program, NUM_REGS};

/// One violated program invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    /// Instruction address, when the problem is tied to one.
    pub addr: Option<u64>,
    pub msg: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.addr {
            Some(a) => write!(f, "{a:#x}: {}", self.msg),
            None => f.write_str(&self.msg),
        }
    }
}

/// Check every structural invariant of `prog`. The list is empty iff the
/// program is well formed.
pub fn validate(prog: &Program) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let mut diag = |addr: Option<u64>, msg: String| out.push(Diagnostic { addr, msg });

    let mut names = HashSet::new();
    for n in prog
        .labels
        .keys()
        .chain(prog.externs.iter())
        .chain(prog.globals.keys())
    {
        if !names.insert(n.as_str()) {
            diag(None, format!("duplicate symbol '{n}'"));
        }
    }
    for (n, a) in &prog.labels {
        if prog.inst_at(*a).is_none() {
            diag(None, format!("label '{n}' at {a:#x} does not mark an instruction"));
        }
    }
    for e in &prog.entries {
        if !prog.labels.contains_key(e) {
            diag(None, format!("entry symbol '{e}' is not a code label"));
        }
    }

    let extern_end = prog.code_end() + prog.externs.len() as u64;
    let valid_target = |t: u64| prog.inst_at(t).is_some() || prog.extern_at(t).is_some();
    for (i, inst) in prog.insts.iter().enumerate() {
        let addr = prog.code_base + i as u64;
        for r in inst.registers() {
            if r as usize >= NUM_REGS {
                diag(Some(addr), format!("register r{r} out of range"));
            }
        }
        match inst {
            Inst::Load { width, .. } | Inst::Store { width, .. } => {
                if !matches!(width, 1 | 2 | 4 | 8) {
                    diag(Some(addr), format!("illegal access width {width}"));
                }
            }
            Inst::Intrinsic { name } => {
                if !prog.externs.contains(name) {
                    diag(Some(addr), format!("intrinsic '{name}' is not a declared symbol"));
                }
            }
            Inst::Unary { op, .. } if !matches!(op, crate::expr::Op::Not | crate::expr::Op::Neg) => {
                diag(Some(addr), format!("'{}' is not a unary operator", op.name()));
            }
            Inst::Binary { op, .. } if Some(*op) != crate::expr::Op::binary_from_name(op.name()) => {
                diag(Some(addr), format!("'{}' is not a binary operator", op.name()));
            }
            Inst::Compare { op, .. } if !op.is_compare() => {
                diag(Some(addr), format!("'{}' is not a comparison", op.name()));
            }
            _ => {}
        }
        for t in inst.targets() {
            if !valid_target(t) {
                diag(Some(addr), format!("branch target {t:#x} is not an instruction or hookable symbol"));
            }
        }
    }

    let mut ranges: Vec<(u64, u64, String)> = prog
        .data
        .iter()
        .map(|d| (d.addr, d.addr.saturating_add(d.bytes.len() as u64), format!("data image at {:#x}", d.addr)))
        .collect();
    ranges.sort();
    for w in ranges.windows(2) {
        if w[1].0 < w[0].1 {
            diag(None, format!("{} overlaps {}", w[1].2, w[0].2));
        }
    }
    for (lo, hi, what) in &ranges {
        if *lo < extern_end && prog.code_base < *hi {
            diag(None, format!("{what} overlaps code"));
        }
    }
    out
}
