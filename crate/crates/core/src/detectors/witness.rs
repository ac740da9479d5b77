// SPDX-License-Identifier: Apache-2.0

//! Concrete inputs that drive a path to a finding.

use std::collections::BTreeMap;

use crate::executor::State;
use crate::expr::{eval_or_zero, Expr};
use crate::solver::{Model, Solver, SolverVerdict};

/// One host read served during replay, identified by step and read index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HostRead {
    pub step: u64,
    pub seq: u32,
    pub addr: u64,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OcallWitness {
    pub ret: u64,
    /// Address and contents of the havocked out-buffer.
    pub out: Option<(u64, Vec<u8>)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Witness {
    /// ECALL parameter index to its bytes, little-endian.
    pub args: BTreeMap<u32, Vec<u8>>,
    /// First value read at each host address.
    pub host_memory: BTreeMap<u64, u8>,
    pub host_reads: Vec<HostRead>,
    /// Initial contents of enclave bytes the path read before writing.
    pub enclave_memory: BTreeMap<u64, u8>,
    pub ocalls: Vec<OcallWitness>,
    /// Predicted value of the finding's expression.
    pub event: u64,
}

fn le_bytes(v: u64, width_bits: u32) -> Vec<u8> {
    let n = (width_bits as usize).div_ceil(8);
    v.to_le_bytes()[..n].to_vec()
}

/// Solve the path constraints together with `query` and read every input
/// off the model. Returns `None` when no model is found.
pub fn build_witness(solver: &Solver, s: &State, query: &Expr, event: &Expr) -> Option<Witness> {
    let model: Model = match solver.full_model(s.path.as_slice(), query) {
        SolverVerdict::Sat(m) => m,
        _ => return None,
    };
    let ev = |e: &Expr| eval_or_zero(&model, e);
    let mut args: BTreeMap<u32, Vec<u8>> = BTreeMap::new();
    for a in &s.args {
        let bytes = le_bytes(ev(&a.value), a.value.width());
        let buf = args.entry(a.param).or_default();
        let end = a.offset as usize + bytes.len();
        if buf.len() < end {
            buf.resize(end, 0);
        }
        buf[a.offset as usize..end].copy_from_slice(&bytes);
    }
    let mut host_memory = BTreeMap::new();
    let mut host_reads = Vec::new();
    for r in &s.mem.fetch_log {
        let addr = ev(&r.addr);
        let bytes = le_bytes(ev(&r.value), r.value.width());
        for (i, b) in bytes.iter().enumerate() {
            host_memory.entry(addr.wrapping_add(i as u64)).or_insert(*b);
        }
        host_reads.push(HostRead {
            step: r.step,
            seq: r.seq,
            addr,
            bytes,
        });
    }
    let mut enclave_memory = BTreeMap::new();
    for seed in &s.mem.seeds {
        for (i, b) in le_bytes(ev(&seed.value), seed.value.width()).into_iter().enumerate() {
            enclave_memory.insert(seed.addr + i as u64, b);
        }
    }
    let ocalls = s
        .ocalls
        .iter()
        .map(|o| OcallWitness {
            ret: ev(&o.ret),
            out: o
                .out
                .as_ref()
                .map(|(addr, bytes)| (*addr, bytes.iter().map(|b| ev(b) as u8).collect())),
        })
        .collect();
    Some(Witness {
        args,
        host_memory,
        host_reads,
        enclave_memory,
        ocalls,
        event: ev(event),
    })
}
