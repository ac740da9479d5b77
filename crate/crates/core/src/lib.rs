// SPDX-License-Identifier: Apache-2.0

//! Symbolic-execution vulnerability analysis for SGX-style enclave programs.
//!
//! Each ECALL of an [`loader::EnclavePackage`] is explored independently with
//! fully symbolic attacker inputs and unconstrained global state. Memory
//! accesses and indirect control transfers are routed through the
//! [`detectors`], which report controlled jumps, controlled writes, null-page
//! dereferences and double fetches together with concrete input witnesses.

pub mod constraints;
pub mod corpus;
pub mod detectors;
pub mod eir;
pub mod executor;
pub mod expr;
pub mod loader;
pub mod memory;
pub mod report;
pub mod sgx;
pub mod solver;

pub use expr::{Expr, Label, Op, Provenance, Symbol};
pub use solver::{Model, SolverConfig, SolverVerdict};
