// SPDX-License-Identifier: Apache-2.0

//! The enclave IR: a 64-bit, sixteen-register machine with one address unit
//! per instruction.
//!
//! Programs are written in a line-oriented assembly (see [`assemble`]) and
//! can be printed back with [`disassemble`]; the round trip is structurally
//! exact. Register `r15` is the stack pointer by convention: `call` pushes
//! the return address onto the stack and `ret` pops it.

mod asm;
mod validate;

use std::collections::BTreeMap;
use std::fmt;

pub use asm::{assemble, assemble_at, disassemble, render as render_inst, AsmError};
pub use validate::{validate, Diagnostic};

use crate::expr::Op;

pub type Reg = u8;

/// Number of general registers.
pub const NUM_REGS: usize = 16;
/// Stack pointer register.
pub const SP: Reg = 15;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Inst {
    /// `const rd, imm`; `sym` remembers a symbolic operand for printing.
    Const { rd: Reg, imm: u64, sym: Option<String> },
    Mov { rd: Reg, rs: Reg },
    /// `not`/`neg rd, rs`.
    Unary { op: Op, rd: Reg, rs: Reg },
    /// Arithmetic, bitwise and shift operators.
    Binary { op: Op, rd: Reg, rs: Reg, rt: Reg },
    /// Comparisons; `rd` receives 0 or 1.
    Compare { op: Op, rd: Reg, rs: Reg, rt: Reg },
    Load { width: u8, rd: Reg, base: Reg, offset: i32 },
    Store { width: u8, base: Reg, offset: i32, rs: Reg },
    Jmp { target: u64 },
    Jmpr { rs: Reg },
    /// Branch to `then` if `rs` is non-zero, else to `els`.
    Br { rs: Reg, then: u64, els: u64 },
    Call { target: u64 },
    Callr { rs: Reg },
    Ret,
    Halt,
    /// Call to a bodiless symbol served by a hook.
    Intrinsic { name: String },
}

impl Inst {
    pub fn mnemonic(&self) -> String {
        match self {
            Inst::Const { .. } => "const".into(),
            Inst::Mov { .. } => "mov".into(),
            Inst::Unary { op, .. } | Inst::Binary { op, .. } | Inst::Compare { op, .. } => {
                op.name().into()
            }
            Inst::Load { width, .. } => format!("load.{width}"),
            Inst::Store { width, .. } => format!("store.{width}"),
            Inst::Jmp { .. } => "jmp".into(),
            Inst::Jmpr { .. } => "jmpr".into(),
            Inst::Br { .. } => "br".into(),
            Inst::Call { .. } => "call".into(),
            Inst::Callr { .. } => "callr".into(),
            Inst::Ret => "ret".into(),
            Inst::Halt => "halt".into(),
            Inst::Intrinsic { .. } => "intrinsic".into(),
        }
    }

    /// Registers named by the instruction.
    pub fn registers(&self) -> Vec<Reg> {
        match self {
            Inst::Const { rd, .. } => vec![*rd],
            Inst::Mov { rd, rs } | Inst::Unary { rd, rs, .. } => vec![*rd, *rs],
            Inst::Binary { rd, rs, rt, .. } | Inst::Compare { rd, rs, rt, .. } => {
                vec![*rd, *rs, *rt]
            }
            Inst::Load { rd, base, .. } => vec![*rd, *base],
            Inst::Store { base, rs, .. } => vec![*base, *rs],
            Inst::Jmpr { rs } | Inst::Callr { rs } | Inst::Br { rs, .. } => vec![*rs],
            _ => vec![],
        }
    }

    /// Static control-flow targets.
    pub fn targets(&self) -> Vec<u64> {
        match self {
            Inst::Jmp { target } | Inst::Call { target } => vec![*target],
            Inst::Br { then, els, .. } => vec![*then, *els],
            _ => vec![],
        }
    }
}

/// A declared global data object.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GlobalVar {
    pub addr: u64,
    pub size: u64,
}

/// Initial bytes at a fixed address.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataImage {
    pub addr: u64,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Program {
    pub code_base: u64,
    pub insts: Vec<Inst>,
    /// Code labels: name to instruction address.
    pub labels: BTreeMap<String, u64>,
    pub globals: BTreeMap<String, GlobalVar>,
    /// Bodiless hookable symbols in declaration order. The i-th one lives at
    /// `code_end() + i`.
    pub externs: Vec<String>,
    pub data: Vec<DataImage>,
    pub entries: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SymbolKind {
    Code,
    Extern,
    Global,
}

impl Program {
    /// First address past the last instruction.
    pub fn code_end(&self) -> u64 {
        self.code_base + self.insts.len() as u64
    }

    pub fn extern_addr(&self, name: &str) -> Option<u64> {
        self.externs
            .iter()
            .position(|n| n == name)
            .map(|i| self.code_end() + i as u64)
    }

    /// Extern symbol at `addr`, if any.
    pub fn extern_at(&self, addr: u64) -> Option<&str> {
        addr.checked_sub(self.code_end())
            .and_then(|i| self.externs.get(i as usize))
            .map(String::as_str)
    }

    pub fn inst_at(&self, addr: u64) -> Option<&Inst> {
        addr.checked_sub(self.code_base)
            .and_then(|i| self.insts.get(i as usize))
    }

    /// Resolve any symbol (code label, extern, global) to its address.
    pub fn symbol(&self, name: &str) -> Option<(u64, SymbolKind)> {
        if let Some(a) = self.labels.get(name) {
            return Some((*a, SymbolKind::Code));
        }
        if let Some(a) = self.extern_addr(name) {
            return Some((a, SymbolKind::Extern));
        }
        self.globals.get(name).map(|g| (g.addr, SymbolKind::Global))
    }

    /// First code label (by name) or extern naming `addr`.
    pub fn name_at(&self, addr: u64) -> Option<&str> {
        self.labels
            .iter()
            .find(|(_, a)| **a == addr)
            .map(|(n, _)| n.as_str())
            .or_else(|| self.extern_at(addr))
    }

    /// `label+offset` rendering of a code address, relative to the nearest
    /// preceding label.
    pub fn describe_pc(&self, addr: u64) -> String {
        if let Some(n) = self.name_at(addr) {
            return n.to_string();
        }
        let best = self
            .labels
            .iter()
            .filter(|(_, a)| **a <= addr)
            .max_by(|x, y| x.1.cmp(y.1).then(y.0.cmp(x.0)));
        match best {
            Some((n, a)) if addr < self.code_end() => format!("{n}+{}", addr - a),
            _ => format!("{addr:#x}"),
        }
    }
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&disassemble(self))
    }
}
