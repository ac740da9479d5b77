// SPDX-License-Identifier: Apache-2.0

//! SGX runtime model: ECALL argument marshalling, the enclave bounds checks
//! and summaries for the builtin hooks.

use std::sync::Arc;

use thiserror::Error;

use crate::constraints::PathConstraints;
use crate::executor::{ArgSymbol, EndKind, Explorer, HookSummary, OcallRecord, State, TraceStep};
use crate::expr::{Expr, Label, Provenance};
use crate::loader::{BufSize, BuiltinHook, ECallSpec, HookBinding, Layout, ParamKind, Section, DEFAULT_MAX_SIZE};
use crate::memory::{Bump, MemError};
use crate::solver::Solver;

/// Largest concrete length a copy or fill summary processes.
pub const MAX_HOOK_LEN: u64 = 1 << 16;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MarshalError {
    #[error("marshalling: {0}")]
    Memory(#[from] MemError),
    #[error("parameter {param}: no feasible buffer size")]
    Size { param: usize },
}

/// Placement of the marshalled arguments. Buffers are bump-allocated from
/// the heap base in parameter order, followed by the argument structure
/// (one 8-byte slot per parameter).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MarshalPlan {
    /// Enclave copy of each pointer parameter; `None` for scalars and for
    /// empty buffers (passed as a null pointer).
    pub buffers: Vec<Option<u64>>,
    pub lens: Vec<u64>,
    pub struct_base: u64,
    /// Heap cursor after marshalling.
    pub heap_next: u64,
}

/// Lay out the arguments of `ecall`; `lens[i]` is the buffer length of
/// pointer parameter `i` (ignored for scalars).
pub fn plan_marshal(layout: &Layout, ecall: &ECallSpec, lens: &[u64]) -> Result<MarshalPlan, MarshalError> {
    let mut bump = Bump::new(layout.heap);
    let mut buffers = Vec::with_capacity(ecall.params.len());
    let mut out_lens = Vec::with_capacity(ecall.params.len());
    for (i, p) in ecall.params.iter().enumerate() {
        let len = if p.kind.buffer_size().is_some() { lens[i] } else { 0 };
        out_lens.push(len);
        buffers.push(if len > 0 { Some(bump.alloc(len)?) } else { None });
    }
    let struct_base = bump.alloc(8 * ecall.params.len().max(1) as u64)?;
    Ok(MarshalPlan {
        buffers,
        lens: out_lens,
        struct_base,
        heap_next: bump.next,
    })
}

/// Buffer lengths from concrete scalar argument values.
pub fn concrete_lens(ecall: &ECallSpec, values: &[u64]) -> Vec<u64> {
    ecall
        .params
        .iter()
        .map(|p| match p.kind.buffer_size() {
            Some(BufSize::Const(n)) => *n,
            Some(BufSize::Param { index, max }) => values[*index].clamp(1, *max),
            None => 0,
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct Marshalled {
    pub struct_base: u64,
    pub plan: MarshalPlan,
}

/// Fix a symbolic size to its least feasible value in `[lo, max]` and add
/// the equality to the path. Constant sizes pass through unchanged.
pub fn concretize_size(solver: &Solver, path: &mut PathConstraints, e: &Expr, lo: u64, max: u64) -> Option<u64> {
    let e = path.resolve(e);
    if let Some(c) = e.as_const() {
        return Some(c);
    }
    let range = Expr::konst(e.width(), lo)
        .ule(&e)
        .and(&e.ule(&Expr::konst(e.width(), max)));
    let mut cons = path.as_slice().to_vec();
    cons.push(range);
    let v = solver.minimize(&cons, &e).ok().flatten()?;
    path.push(e.eq_const(v));
    Some(v)
}

/// Build the ECALL inputs in `s`: fresh argument symbols, enclave copies of
/// pointer parameters and the argument structure.
pub fn marshal_args(ex: &mut Explorer<'_>, s: &mut State) -> Result<Marshalled, MarshalError> {
    let ecall = ex.ecall;
    let n = ecall.params.len();
    let mut slots: Vec<Expr> = vec![Expr::konst(64, 0); n];
    for (i, p) in ecall.params.iter().enumerate() {
        let width = match p.kind {
            ParamKind::Value { width } => width,
            ParamKind::UserCheck => 64,
            _ => continue,
        };
        let label = Label::EcallArg {
            param: i as u32,
            offset: 0,
        };
        let sym = ex.factory.fresh(width, Provenance::single(label));
        slots[i] = sym.zext(64);
        s.args.push(ArgSymbol {
            param: i as u32,
            offset: 0,
            value: sym,
        });
    }
    let mut lens = vec![0; n];
    for (i, p) in ecall.params.iter().enumerate() {
        lens[i] = match p.kind.buffer_size() {
            None => 0,
            Some(BufSize::Const(c)) => *c,
            Some(BufSize::Param { index, max }) => {
                let v = concretize_size(&ex.solver, &mut s.path, &slots[*index], 1, *max)
                    .ok_or(MarshalError::Size { param: i })?;
                s.pending_concretized = true;
                v
            }
        };
    }
    let plan = plan_marshal(&ex.pkg.layout, ecall, &lens)?;
    for (i, p) in ecall.params.iter().enumerate() {
        let Some(ptr) = plan.buffers[i] else { continue };
        match p.kind {
            ParamKind::PtrIn(_) | ParamKind::PtrInOut(_) => {
                for off in 0..plan.lens[i] {
                    let label = Label::EcallArg {
                        param: i as u32,
                        offset: off as u32,
                    };
                    let b = ex.factory.fresh(8, Provenance::single(label));
                    s.mem.poke(ptr + off, b.clone());
                    s.args.push(ArgSymbol {
                        param: i as u32,
                        offset: off as u32,
                        value: b,
                    });
                }
            }
            _ => {
                for off in 0..plan.lens[i] {
                    s.mem.poke(ptr + off, Expr::konst(8, 0));
                }
            }
        }
        slots[i] = Expr::konst(64, ptr);
    }
    for (i, v) in slots.iter().enumerate() {
        s.mem.write_concrete(plan.struct_base + 8 * i as u64, v);
    }
    s.mem.set_heap_next(plan.heap_next);
    Ok(Marshalled {
        struct_base: plan.struct_base,
        plan,
    })
}

fn k64(v: u64) -> Expr {
    Expr::konst(64, v)
}

/// `sgx_is_within_enclave(addr, size)`: the non-empty range lies entirely in
/// the enclave.
pub fn within_enclave(addr: &Expr, size: &Expr, enclave: &Section) -> Expr {
    let ee = k64(enclave.end());
    Expr::all([
        size.eq_const(0).not(),
        k64(enclave.base).ule(addr),
        addr.ule(&ee),
        size.ule(&ee.sub(addr)),
    ])
}

/// `sgx_is_outside_enclave(addr, size)`: the range does not wrap and shares
/// no byte with the enclave. Empty ranges are outside.
pub fn outside_enclave(addr: &Expr, size: &Expr, enclave: &Section) -> Expr {
    let eb = k64(enclave.base);
    let no_wrap = addr.eq_const(0).or(&size.ule(&k64(0).sub(addr)));
    let below = addr.ule(&eb).and(&size.ule(&eb.sub(addr)));
    let above = k64(enclave.end()).ule(addr);
    size.eq_const(0).or(&no_wrap.and(&below.or(&above)))
}

/// Concrete counterpart of [`within_enclave`].
pub fn within_enclave_concrete(addr: u64, size: u64, enclave: &Section) -> bool {
    let end = addr as u128 + size as u128;
    size != 0 && addr >= enclave.base && end <= enclave.end() as u128
}

/// Concrete counterpart of [`outside_enclave`].
pub fn outside_enclave_concrete(addr: u64, size: u64, enclave: &Section) -> bool {
    let end = addr as u128 + size as u128;
    size == 0 || (end <= 1u128 << 64 && (end <= enclave.base as u128 || addr >= enclave.end()))
}

fn fault(ex: &mut Explorer<'_>, s: State, rec: &TraceStep, msg: String) -> Vec<State> {
    ex.end_path(s, Some(rec.clone()), EndKind::Fault(msg));
    Vec::new()
}

/// Length argument of a copy, fill or allocation summary: concrete values
/// are taken as is, symbolic ones are fixed to their least nonzero value.
fn length_arg(ex: &Explorer<'_>, s: &mut State, rec: &mut TraceStep, e: &Expr) -> Option<u64> {
    let e = s.path.resolve(e);
    if let Some(c) = e.as_const() {
        return (c <= MAX_HOOK_LEN).then_some(c);
    }
    let v = concretize_size(&ex.solver, &mut s.path, &e, 1, DEFAULT_MAX_SIZE)
        .or_else(|| concretize_size(&ex.solver, &mut s.path, &e, 0, 0))?;
    rec.concretized = true;
    Some(v)
}

/// Summary implementing a manifest hook binding.
pub fn builtin_summary(binding: HookBinding) -> HookSummary {
    let run: crate::executor::HookFn = match binding.builtin {
        BuiltinHook::IsWithinEnclave => Arc::new(|ex, mut s, _rec| {
            let c = within_enclave(&s.reg(0), &s.reg(1), &ex.pkg.layout.enclave);
            s.regs[0] = Expr::ite(&c, &k64(1), &k64(0));
            vec![s]
        }),
        BuiltinHook::IsOutsideEnclave => Arc::new(|ex, mut s, _rec| {
            let c = outside_enclave(&s.reg(0), &s.reg(1), &ex.pkg.layout.enclave);
            s.regs[0] = Expr::ite(&c, &k64(1), &k64(0));
            vec![s]
        }),
        BuiltinHook::Memcpy => Arc::new(|ex, mut s, rec| {
            let (dst, src, n) = (s.reg(0), s.reg(1), s.reg(2));
            let Some(n) = length_arg(ex, &mut s, rec, &n) else {
                return fault(ex, s, rec, "memcpy: unsupported length".into());
            };
            for i in 0..n {
                let b = ex.load(&mut s, &src.add_const(i), 1, rec);
                ex.store(&mut s, &dst.add_const(i), &b, 1, rec);
            }
            s.regs[0] = s.path.resolve(&dst);
            vec![s]
        }),
        BuiltinHook::Memset => Arc::new(|ex, mut s, rec| {
            let (dst, val, n) = (s.reg(0), s.reg(1), s.reg(2));
            let Some(n) = length_arg(ex, &mut s, rec, &n) else {
                return fault(ex, s, rec, "memset: unsupported length".into());
            };
            let b = val.extract(7, 0);
            for i in 0..n {
                ex.store(&mut s, &dst.add_const(i), &b, 1, rec);
            }
            s.regs[0] = s.path.resolve(&dst);
            vec![s]
        }),
        BuiltinHook::Malloc => Arc::new(|ex, mut s, rec| {
            let n = s.reg(0);
            let Some(n) = length_arg(ex, &mut s, rec, &n) else {
                return fault(ex, s, rec, "malloc: unsupported size".into());
            };
            s.regs[0] = k64(s.mem.alloc_enclave(n).unwrap_or(0));
            vec![s]
        }),
        BuiltinHook::Free => Arc::new(|_ex, s, _rec| vec![s]),
        BuiltinHook::Ocall => {
            let out_buffer = binding.out_buffer;
            Arc::new(move |ex, mut s, rec| {
                let ret = ex.factory.fresh(64, Provenance::single(Label::HostMemory));
                let mut out = None;
                if let Some((pr, sr)) = out_buffer {
                    let (addr, size) = (s.reg(pr), s.reg(sr));
                    let Some(n) = length_arg(ex, &mut s, rec, &size) else {
                        return fault(ex, s, rec, "ocall: unsupported out-buffer size".into());
                    };
                    let base = match addr.as_const() {
                        Some(a) => a,
                        None => {
                            rec.concretized = true;
                            s.mem.concretize(&ex.solver, &addr, n.max(1), &mut s.path)
                        }
                    };
                    let bytes: Vec<Expr> = (0..n)
                        .map(|_| ex.factory.fresh(8, Provenance::single(Label::HostMemory)))
                        .collect();
                    for (i, b) in bytes.iter().enumerate() {
                        s.mem.poke(base.wrapping_add(i as u64), b.clone());
                    }
                    out = Some((base, bytes));
                }
                s.ocalls.push(OcallRecord { ret: ret.clone(), out });
                s.regs[0] = ret;
                vec![s]
            })
        }
    };
    HookSummary {
        id: binding.builtin.id().to_string(),
        run,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::eval;
    use std::collections::BTreeMap;

    #[test]
    fn formulas_agree_with_concrete_versions() {
        let enc = Section {
            base: 0x1000,
            size: 0x100,
        };
        let m = BTreeMap::new();
        for addr in [0u64, 0xf00, 0xff8, 0x1000, 0x10f8, 0x1100, 0x1101, u64::MAX - 3] {
            for size in [0u64, 1, 8, 0x100, 0x101, 0x2000] {
                let w = within_enclave(&k64(addr), &k64(size), &enc);
                let o = outside_enclave(&k64(addr), &k64(size), &enc);
                assert_eq!(eval(&m, &w).unwrap() == 1, within_enclave_concrete(addr, size, &enc), "{addr:#x} {size}");
                assert_eq!(eval(&m, &o).unwrap() == 1, outside_enclave_concrete(addr, size, &enc), "{addr:#x} {size}");
            }
        }
    }
}
