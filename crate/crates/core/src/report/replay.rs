// SPDX-License-Identifier: Apache-2.0

//! Concrete replay of finding witnesses.
//!
//! The replayer is a plain interpreter over concrete 64-bit values. It
//! rebuilds the ECALL inputs from the witness bytes, serves host reads from
//! the witness and follows the program while checking every step against
//! the recorded trace. The finding is confirmed when the last step produces
//! the predicted event value.

use std::collections::{BTreeMap, HashMap};

use thiserror::Error;

use super::{parse_byte_runs, parse_hex_bytes, parse_hex_u64, FindingReport};
use crate::detectors::FindingKind;
use crate::eir::{Inst, NUM_REGS, SP};
use crate::executor::{StepKind, EXIT_ADDRESS};
use crate::expr::{fold_binary, fold_unary, mask};
use crate::loader::{BuiltinHook, ECallSpec, EnclavePackage, ParamKind, NULL_PAGE_END};
use crate::memory::Bump;
use crate::sgx::{
    concrete_lens, outside_enclave_concrete, plan_marshal, within_enclave_concrete, MAX_HOOK_LEN,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReplayOutcome {
    Confirmed,
    /// Index of the first trace step that did not match.
    Diverged(usize),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ReplayError {
    #[error("finding {0} has no witness")]
    NoWitness(String),
    #[error("malformed witness: {0}")]
    Malformed(String),
    #[error("finding {0} has an empty trace")]
    EmptyTrace(String),
}

/// Why a step could not be replayed faithfully.
struct Mismatch;

enum Flow {
    Next(u64),
    Exit,
    Stop,
}

/// Return value and optional out-buffer contents of one OCALL.
type OcallReply = (u64, Option<(u64, Vec<u8>)>);

struct Machine<'a> {
    pkg: &'a EnclavePackage,
    regs: [u64; NUM_REGS],
    pc: u64,
    mem: BTreeMap<u64, u8>,
    image: BTreeMap<u64, u8>,
    seeds: BTreeMap<u64, u8>,
    host_reads: HashMap<(u64, u32), (u64, Vec<u8>)>,
    ocalls: Vec<OcallReply>,
    next_ocall: usize,
    heap: Bump,
    step: u64,
    seq: u32,
    reads: Vec<u64>,
    writes: Vec<u64>,
    host_fetches: Vec<u64>,
    transfer: Option<u64>,
    /// Serve unlogged null-page reads as zero (last step of a null-deref).
    null_probe: bool,
}

fn le(bytes: &[u8]) -> u64 {
    let mut b = [0u8; 8];
    let n = bytes.len().min(8);
    b[..n].copy_from_slice(&bytes[..n]);
    u64::from_le_bytes(b)
}

fn malformed(what: &str) -> ReplayError {
    ReplayError::Malformed(what.to_string())
}

impl<'a> Machine<'a> {
    fn read(&mut self, addr: u64, width: u64) -> Result<u64, Mismatch> {
        let seq = self.seq;
        self.seq += 1;
        self.reads.push(addr);
        if let Some((a, bytes)) = self.host_reads.get(&(self.step, seq)) {
            if *a != addr || bytes.len() as u64 != width {
                return Err(Mismatch);
            }
            self.host_fetches.push(addr);
            return Ok(le(bytes));
        }
        // The faulting read of a null-deref finding is reported before it
        // is logged, so the witness has no bytes for it.
        if self.null_probe && addr.checked_add(width).is_some_and(|e| e <= NULL_PAGE_END) {
            return Ok(0);
        }
        if !self.pkg.layout.enclave.contains_range(addr, width) {
            return Err(Mismatch);
        }
        let mut v = 0u64;
        for i in (0..width).rev() {
            let a = addr + i;
            let b = self
                .mem
                .get(&a)
                .or_else(|| self.image.get(&a))
                .or_else(|| self.seeds.get(&a))
                .copied()
                .unwrap_or(0);
            v = (v << 8) | b as u64;
        }
        Ok(v)
    }

    fn write(&mut self, addr: u64, value: u64, width: u64) {
        self.writes.push(addr);
        for i in 0..width {
            self.poke(addr.wrapping_add(i), (value >> (8 * i)) as u8);
        }
    }

    fn poke(&mut self, addr: u64, b: u8) {
        if self.pkg.layout.enclave.contains(addr) {
            self.mem.insert(addr, b);
        }
    }

    fn is_code(&self, a: u64) -> bool {
        self.pkg.program.inst_at(a).is_some() || self.pkg.program.extern_at(a).is_some()
    }

    fn push(&mut self, v: u64) {
        let sp = self.regs[SP as usize].wrapping_sub(8);
        self.write(sp, v, 8);
        self.regs[SP as usize] = sp;
    }

    fn ret(&mut self) -> Result<Flow, Mismatch> {
        let sp = self.regs[SP as usize];
        let t = self.read(sp, 8)?;
        self.regs[SP as usize] = sp.wrapping_add(8);
        if t == EXIT_ADDRESS {
            return Ok(Flow::Exit);
        }
        Ok(self.indirect(t))
    }

    fn indirect(&mut self, t: u64) -> Flow {
        self.transfer = Some(t);
        if self.is_code(t) {
            Flow::Next(t)
        } else {
            Flow::Stop
        }
    }

    fn hook(&mut self, name: &str) -> Result<(), Mismatch> {
        let binding = *self.pkg.hooks.get(name).ok_or(Mismatch)?;
        let r = self.regs;
        let enclave = self.pkg.layout.enclave;
        match binding.builtin {
            BuiltinHook::IsWithinEnclave => self.regs[0] = within_enclave_concrete(r[0], r[1], &enclave) as u64,
            BuiltinHook::IsOutsideEnclave => self.regs[0] = outside_enclave_concrete(r[0], r[1], &enclave) as u64,
            BuiltinHook::Memcpy => {
                if r[2] > MAX_HOOK_LEN {
                    return Err(Mismatch);
                }
                for i in 0..r[2] {
                    let b = self.read(r[1].wrapping_add(i), 1)?;
                    self.write(r[0].wrapping_add(i), b, 1);
                }
            }
            BuiltinHook::Memset => {
                if r[2] > MAX_HOOK_LEN {
                    return Err(Mismatch);
                }
                for i in 0..r[2] {
                    self.write(r[0].wrapping_add(i), r[1] & 0xff, 1);
                }
            }
            BuiltinHook::Malloc => {
                if r[0] > MAX_HOOK_LEN {
                    return Err(Mismatch);
                }
                self.regs[0] = self.heap.alloc(r[0]).unwrap_or(0);
            }
            BuiltinHook::Free => {}
            BuiltinHook::Ocall => {
                let (ret, out) = self.ocalls.get(self.next_ocall).cloned().ok_or(Mismatch)?;
                self.next_ocall += 1;
                if let Some((addr, bytes)) = out {
                    for (i, b) in bytes.into_iter().enumerate() {
                        self.poke(addr.wrapping_add(i as u64), b);
                    }
                }
                self.regs[0] = ret;
            }
        }
        Ok(())
    }

    fn exec(&mut self, kind: &StepKind) -> Result<Flow, Mismatch> {
        let pc = self.pc;
        let prog = &self.pkg.program;
        if let Some(name) = prog.extern_at(pc) {
            self.hook(name)?;
            return self.ret();
        }
        let inst = prog.inst_at(pc).ok_or(Mismatch)?;
        let r = |i: &u8| self.regs[*i as usize];
        let next = Flow::Next(pc + 1);
        Ok(match inst {
            Inst::Const { rd, imm, .. } => {
                self.regs[*rd as usize] = *imm;
                next
            }
            Inst::Mov { rd, rs } => {
                self.regs[*rd as usize] = r(rs);
                next
            }
            Inst::Unary { op, rd, rs } => {
                self.regs[*rd as usize] = fold_unary(*op, r(rs), 64);
                next
            }
            Inst::Binary { op, rd, rs, rt } | Inst::Compare { op, rd, rs, rt } => {
                self.regs[*rd as usize] = fold_binary(*op, r(rs), r(rt), 64);
                next
            }
            Inst::Load {
                width,
                rd,
                base,
                offset,
            } => {
                let addr = r(base).wrapping_add(*offset as i64 as u64);
                self.regs[*rd as usize] = self.read(addr, *width as u64)?;
                next
            }
            Inst::Store {
                width,
                base,
                offset,
                rs,
            } => {
                let addr = r(base).wrapping_add(*offset as i64 as u64);
                let v = r(rs) & mask(*width as u32 * 8);
                self.write(addr, v, *width as u64);
                next
            }
            Inst::Jmp { target } => Flow::Next(*target),
            Inst::Jmpr { rs } => self.indirect(r(rs)),
            Inst::Br { rs, then, els } => {
                let taken = r(rs) != 0;
                if let StepKind::Branch(d) = kind {
                    if *d != taken {
                        return Err(Mismatch);
                    }
                }
                Flow::Next(if taken { *then } else { *els })
            }
            Inst::Call { target } => {
                self.push(pc + 1);
                Flow::Next(*target)
            }
            Inst::Callr { rs } => {
                let t = r(rs);
                self.push(pc + 1);
                self.indirect(t)
            }
            Inst::Ret => self.ret()?,
            Inst::Halt => Flow::Stop,
            Inst::Intrinsic { name } => {
                self.hook(name)?;
                next
            }
        })
    }

    fn event_matches(&self, kind: FindingKind, event: u64) -> bool {
        match kind {
            FindingKind::ControlledJump => self.transfer == Some(event),
            FindingKind::ControlledWrite => self.writes.contains(&event),
            FindingKind::NullDeref => {
                event < NULL_PAGE_END && (self.reads.contains(&event) || self.writes.contains(&event))
            }
            FindingKind::DoubleFetch => self.host_fetches.contains(&event),
        }
    }
}

/// Replay `f` (a finding of `ecall`) concretely.
pub fn replay_witness(pkg: &EnclavePackage, ecall: &ECallSpec, f: &FindingReport) -> Result<ReplayOutcome, ReplayError> {
    let w = f.witness.as_ref().ok_or_else(|| ReplayError::NoWitness(f.id.clone()))?;
    if f.trace.is_empty() {
        return Err(ReplayError::EmptyTrace(f.id.clone()));
    }
    let kind = FindingKind::from_name(&f.kind).ok_or_else(|| malformed("finding kind"))?;
    let event = parse_hex_u64(&w.event).ok_or_else(|| malformed("event"))?;

    let mut args: BTreeMap<usize, Vec<u8>> = BTreeMap::new();
    for (k, v) in &w.args {
        let i: usize = k.parse().map_err(|_| malformed("argument index"))?;
        args.insert(i, parse_hex_bytes(v).ok_or_else(|| malformed("argument bytes"))?);
    }
    let mut host_reads = HashMap::new();
    for r in &w.host_reads {
        let addr = parse_hex_u64(&r.addr).ok_or_else(|| malformed("host read address"))?;
        let bytes = parse_hex_bytes(&r.bytes).ok_or_else(|| malformed("host read bytes"))?;
        host_reads.insert((r.step, r.seq), (addr, bytes));
    }
    let seeds = parse_byte_runs(&w.enclave_memory).ok_or_else(|| malformed("enclave memory"))?;
    let mut ocalls = Vec::new();
    for o in &w.ocalls {
        let ret = parse_hex_u64(&o.ret).ok_or_else(|| malformed("ocall return"))?;
        let out = match (&o.out_addr, &o.out) {
            (Some(a), Some(b)) => Some((
                parse_hex_u64(a).ok_or_else(|| malformed("ocall buffer address"))?,
                parse_hex_bytes(b).ok_or_else(|| malformed("ocall buffer"))?,
            )),
            _ => None,
        };
        ocalls.push((ret, out));
    }

    let layout = &pkg.layout;
    let mut image = BTreeMap::new();
    for d in &pkg.program.data {
        for (i, b) in d.bytes.iter().enumerate() {
            let a = d.addr + i as u64;
            if !layout.globals.contains(a) {
                image.insert(a, *b);
            }
        }
    }

    // Inputs, laid out exactly as marshalling does.
    let values: Vec<u64> = ecall
        .params
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let v = args.get(&i).map(|b| le(b)).unwrap_or(0);
            match p.kind {
                ParamKind::Value { width } => v & mask(width),
                _ => v,
            }
        })
        .collect();
    let plan = plan_marshal(layout, ecall, &concrete_lens(ecall, &values))
        .map_err(|e| ReplayError::Malformed(e.to_string()))?;
    let mut m = Machine {
        pkg,
        regs: [0; NUM_REGS],
        pc: ecall.entry_addr,
        mem: BTreeMap::new(),
        image,
        seeds,
        host_reads,
        ocalls,
        next_ocall: 0,
        heap: Bump {
            next: plan.heap_next,
            end: layout.heap.end(),
        },
        step: 0,
        seq: 0,
        reads: Vec::new(),
        writes: Vec::new(),
        host_fetches: Vec::new(),
        transfer: None,
        null_probe: false,
    };
    for (i, p) in ecall.params.iter().enumerate() {
        let slot = match (plan.buffers[i], &p.kind) {
            (Some(ptr), ParamKind::PtrIn(_) | ParamKind::PtrInOut(_)) => {
                let bytes = args.get(&i).cloned().unwrap_or_default();
                for off in 0..plan.lens[i] {
                    m.poke(ptr + off, bytes.get(off as usize).copied().unwrap_or(0));
                }
                ptr
            }
            (Some(ptr), _) => {
                for off in 0..plan.lens[i] {
                    m.poke(ptr + off, 0);
                }
                ptr
            }
            (None, _) => values[i],
        };
        m.write(plan.struct_base + 8 * i as u64, slot, 8);
    }
    let sp = layout.stack.end() - 8;
    m.write(sp, EXIT_ADDRESS, 8);
    m.regs[SP as usize] = sp;
    m.regs[0] = plan.struct_base;

    let last = f.trace.len() - 1;
    for (i, t) in f.trace.iter().enumerate() {
        if m.pc != t.pc {
            return Ok(ReplayOutcome::Diverged(i));
        }
        let kind_of_step = StepKind::parse(&t.kind).ok_or_else(|| malformed("trace step kind"))?;
        m.step = i as u64;
        m.seq = 0;
        m.reads.clear();
        m.writes.clear();
        m.host_fetches.clear();
        m.transfer = None;
        m.null_probe = i == last && kind == FindingKind::NullDeref;
        let flow = match m.exec(&kind_of_step) {
            Ok(flow) => flow,
            Err(Mismatch) => return Ok(ReplayOutcome::Diverged(i)),
        };
        if i == last {
            return Ok(if m.event_matches(kind, event) {
                ReplayOutcome::Confirmed
            } else {
                ReplayOutcome::Diverged(i)
            });
        }
        match flow {
            Flow::Next(pc) => m.pc = pc,
            Flow::Exit | Flow::Stop => return Ok(ReplayOutcome::Diverged(i)),
        }
    }
    unreachable!("the loop returns at the last step")
}
