// SPDX-License-Identifier: Apache-2.0

//! Per-ECALL symbolic exploration.
//!
//! An [`Explorer`] owns one ECALL analysis end to end: it builds the initial
//! state, steps states from a FIFO worklist, forks on feasible branches,
//! dispatches hooks, routes memory and control-flow events through the
//! detectors and enforces the resource limits. Explorations of different
//! ECALLs are independent and run in parallel in [`explore_package`].

mod hooks;
mod state;
mod step;

use std::collections::VecDeque;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

pub use hooks::{HookError, HookFn, HookRegistry, HookSummary};
pub use state::{ArgSymbol, OcallRecord, State, StepKind, Trace, TraceStep};

use crate::detectors::{build_witness, DetectorConfig, Finding, FindingKind, FindingSet};
use crate::expr::{Expr, SymbolFactory};
use crate::loader::{ECallSpec, EnclavePackage};
use crate::solver::{Solver, SolverConfig, SolverVerdict, DEFAULT_BUDGET};

/// Return address pushed below the first frame; returning to it ends the
/// ECALL.
pub const EXIT_ADDRESS: u64 = 0xffff_ffff_ffff_f000;
/// Feasible targets enumerated for a symbolic but constrained jump.
pub const MAX_JUMP_TARGETS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Limits {
    /// Steps per state.
    pub max_steps: u64,
    /// States created per ECALL.
    pub max_states: u64,
    /// Visits of one branch instruction per state.
    pub loop_bound: u32,
    pub max_fork_depth: u32,
    pub solver_budget: u64,
    /// Wall clock per ECALL, in seconds.
    pub timeout_sec: u64,
}

impl Default for Limits {
    fn default() -> Self {
        Limits {
            max_steps: 50_000,
            max_states: 4_096,
            loop_bound: 64,
            max_fork_depth: 256,
            solver_budget: DEFAULT_BUDGET,
            timeout_sec: 60,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExplorationStats {
    pub states_created: u64,
    pub states_completed: u64,
    pub truncations: u64,
    pub steps: u64,
    pub solver_unknowns: u64,
    pub elapsed_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Truncation {
    MaxSteps,
    MaxStates,
    LoopBound,
    ForkDepth,
    Timeout,
    /// More feasible jump targets than are enumerated.
    JumpTargets,
    SolverUnknown,
}

/// How a path ended.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EndKind {
    Exit,
    Halt,
    Finding(FindingKind),
    Truncated(Truncation),
    /// Execution left the program, e.g. a jump into host code.
    Fault(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathEnd {
    pub kind: EndKind,
    pub pc: u64,
    pub steps: u64,
}

/// One symbolic branch decision, logged for the fork audit.
#[derive(Debug, Clone)]
pub struct ForkRecord {
    pub pc: u64,
    pub parent: Vec<Expr>,
    pub cond: Expr,
    /// Constraints of the `cond` child, if it was created.
    pub then_child: Option<Vec<Expr>>,
    /// Constraints of the `!cond` child, if it was created.
    pub else_child: Option<Vec<Expr>>,
}

/// Result of exploring one ECALL.
#[derive(Debug, Clone)]
pub struct Exploration {
    pub ecall_index: u32,
    pub ecall_name: String,
    pub findings: Vec<Finding>,
    pub stats: ExplorationStats,
    pub ends: Vec<PathEnd>,
    pub forks: Vec<ForkRecord>,
    /// Set when the initial state could not be built.
    pub init_error: Option<String>,
}

/// Options shared by every ECALL exploration of a run.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub limits: Limits,
    pub seed: u64,
    pub detectors: DetectorConfig,
    /// Keep a [`ForkRecord`] per symbolic branch.
    pub log_forks: bool,
}

impl RunConfig {
    pub fn new(pkg: &EnclavePackage) -> RunConfig {
        RunConfig {
            limits: Limits::default(),
            seed: 0,
            detectors: DetectorConfig::for_layout(&pkg.layout),
            log_forks: false,
        }
    }
}

pub struct Explorer<'a> {
    pub pkg: &'a EnclavePackage,
    pub ecall: &'a ECallSpec,
    pub hooks: &'a HookRegistry,
    pub cfg: &'a RunConfig,
    pub factory: SymbolFactory,
    pub solver: Solver,
    pub findings: FindingSet,
    pub stats: ExplorationStats,
    pub ends: Vec<PathEnd>,
    pub forks: Vec<ForkRecord>,
}

impl<'a> Explorer<'a> {
    pub fn new(
        pkg: &'a EnclavePackage,
        ecall: &'a ECallSpec,
        hooks: &'a HookRegistry,
        cfg: &'a RunConfig,
    ) -> Explorer<'a> {
        Explorer {
            pkg,
            ecall,
            hooks,
            cfg,
            factory: SymbolFactory::new(),
            solver: Solver::new(SolverConfig {
                budget: cfg.limits.solver_budget,
                seed: cfg.seed,
            }),
            findings: FindingSet::default(),
            stats: ExplorationStats::default(),
            ends: Vec::new(),
            forks: Vec::new(),
        }
    }

    /// Explore the ECALL from its initial state until the worklist drains
    /// or a limit is hit.
    pub fn run(mut self) -> Exploration {
        let start = Instant::now();
        let timeout = Duration::from_secs(self.cfg.limits.timeout_sec);
        let mut init_error = None;
        let mut worklist = VecDeque::new();
        match self.init_state() {
            Ok(s) => {
                self.stats.states_created = 1;
                worklist.push_back(s);
            }
            Err(e) => init_error = Some(e),
        }
        while let Some(s) = worklist.pop_front() {
            if start.elapsed() > timeout {
                self.truncate(s, Truncation::Timeout);
                while let Some(rest) = worklist.pop_front() {
                    self.truncate(rest, Truncation::Timeout);
                }
                break;
            }
            if s.steps >= self.cfg.limits.max_steps {
                self.truncate(s, Truncation::MaxSteps);
                continue;
            }
            worklist.extend(self.step(s));
        }
        self.stats.solver_unknowns = self.solver.unknowns();
        self.stats.elapsed_ms = start.elapsed().as_millis() as u64;
        Exploration {
            ecall_index: self.ecall.index,
            ecall_name: self.ecall.name.clone(),
            findings: self.findings.into_vec(),
            stats: self.stats,
            ends: self.ends,
            forks: self.forks,
            init_error,
        }
    }

    /// Initial state: marshalled arguments with the structure address in
    /// `r0`, and the exit address pushed on an otherwise empty stack.
    pub fn init_state(&mut self) -> Result<State, String> {
        let mut s = State::new(self.pkg, self.ecall.entry_addr);
        let args = crate::sgx::marshal_args(self, &mut s).map_err(|e| e.to_string())?;
        s.regs[0] = Expr::konst(64, args.struct_base);
        let sp = self.pkg.layout.stack.end() - 8;
        s.mem.write_concrete(sp, &Expr::konst(64, EXIT_ADDRESS));
        s.regs[crate::eir::SP as usize] = Expr::konst(64, sp);
        Ok(s)
    }

    pub fn truncate(&mut self, s: State, why: Truncation) {
        self.end_path(s, None, EndKind::Truncated(why));
    }

    /// Record the end of a path. `rec` is the step that ended it, if any.
    pub fn end_path(&mut self, mut s: State, rec: Option<TraceStep>, kind: EndKind) {
        if let Some(r) = rec {
            self.finish_step(&mut s, r);
        }
        match &kind {
            EndKind::Truncated(_) => self.stats.truncations += 1,
            _ => self.stats.states_completed += 1,
        }
        if matches!(kind, EndKind::Exit | EndKind::Halt | EndKind::Finding(_)) {
            let found = crate::detectors::check_double_fetch(&self.cfg.detectors, &self.solver, &s);
            for f in found {
                self.report(&s, None, f);
            }
        }
        log::debug!(
            "{}: path ended at {} after {} steps: {:?}",
            self.ecall.name,
            self.pkg.program.describe_pc(s.pc),
            s.steps,
            kind
        );
        self.ends.push(PathEnd {
            kind,
            pc: s.pc,
            steps: s.steps,
        });
    }

    pub fn finish_step(&mut self, s: &mut State, rec: TraceStep) {
        s.trace.push(rec);
        s.steps += 1;
        self.stats.steps += 1;
    }

    /// Record a finding raised in `s`. `rec` is the current, unfinished
    /// step. New findings get a witness, trace and constraints; repeats only
    /// bump the occurrence count.
    pub fn report(&mut self, s: &State, rec: Option<&TraceStep>, mut f: Finding) {
        if self.findings.bump(&f) {
            return;
        }
        log::debug!("{}: {} at {}", self.ecall.name, f.kind, self.pkg.program.describe_pc(f.pc));
        f.witness = build_witness(&self.solver, s, &f.query, &f.expr);
        let mut trace = s.trace.to_vec();
        trace.extend(rec.cloned());
        if let Some(n) = f.trace_len {
            trace.truncate(n);
        }
        f.trace = trace;
        f.constraints = s.path.as_slice().to_vec();
        self.findings.add(f);
    }

    /// Split `parent` on `cond`. Returns the feasible children tagged with
    /// the branch direction; the parent's fork depth and the state limit are
    /// enforced here.
    pub fn fork(&mut self, parent: State, cond: &Expr) -> Vec<(bool, State)> {
        let cond = parent.path.resolve(cond);
        if let Some(v) = cond.as_const() {
            return vec![(v == 1, parent)];
        }
        let feasible = |v: SolverVerdict| !v.is_unsat();
        let then_ok = feasible(self.solver.is_sat(parent.path.as_slice(), &cond));
        let else_ok = feasible(self.solver.is_sat(parent.path.as_slice(), &cond.not()));
        let mut out = Vec::new();
        if then_ok && else_ok {
            if parent.fork_depth >= self.cfg.limits.max_fork_depth {
                self.truncate(parent, Truncation::ForkDepth);
                return out;
            }
            let log = self.cfg.log_forks.then(|| parent.path.as_slice().to_vec());
            let mut a = parent;
            a.fork_depth += 1;
            let mut b = a.clone();
            a.path.push(cond.clone());
            b.path.push(cond.not());
            if let Some(parent) = log {
                self.forks.push(ForkRecord {
                    pc: a.pc,
                    parent,
                    cond: cond.clone(),
                    then_child: Some(a.path.as_slice().to_vec()),
                    else_child: Some(b.path.as_slice().to_vec()),
                });
            }
            out.push((true, a));
            if self.stats.states_created >= self.cfg.limits.max_states {
                self.truncate(b, Truncation::MaxStates);
            } else {
                self.stats.states_created += 1;
                out.push((false, b));
            }
        } else if then_ok || else_ok {
            let log = self.cfg.log_forks.then(|| parent.path.as_slice().to_vec());
            let mut child = parent;
            child.path.push(if then_ok { cond.clone() } else { cond.not() });
            if let Some(parent) = log {
                let c = child.path.as_slice().to_vec();
                self.forks.push(ForkRecord {
                    pc: child.pc,
                    parent,
                    cond: cond.clone(),
                    then_child: then_ok.then(|| c.clone()),
                    else_child: else_ok.then_some(c),
                });
            }
            out.push((then_ok, child));
        } else {
            // Only reachable when the path itself became infeasible.
            self.end_path(parent, None, EndKind::Fault("infeasible path".into()));
        }
        out
    }
}

/// Explore every ECALL of `pkg` (or only `only`), at most `workers` at a
/// time. Results are ordered by ECALL index.
pub fn explore_package(
    pkg: &EnclavePackage,
    hooks: &HookRegistry,
    cfg: &RunConfig,
    only: Option<&[u32]>,
    workers: usize,
) -> Vec<Exploration> {
    let selected: Vec<&ECallSpec> = pkg
        .ecalls
        .iter()
        .filter(|e| only.is_none_or(|o| o.contains(&e.index)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .stack_size(256 << 20)
        .build()
        .expect("thread pool");
    pool.install(|| {
        use rayon::prelude::*;
        selected
            .par_iter()
            .map(|e| Explorer::new(pkg, e, hooks, cfg).run())
            .collect()
    })
}

/// Explore one ECALL on a dedicated thread with a large stack.
pub fn explore(
    pkg: &EnclavePackage,
    ecall: &ECallSpec,
    hooks: &HookRegistry,
    cfg: &RunConfig,
) -> Exploration {
    std::thread::scope(|sc| {
        std::thread::Builder::new()
            .stack_size(256 << 20)
            .spawn_scoped(sc, || Explorer::new(pkg, ecall, hooks, cfg).run())
            .expect("spawn explorer thread")
            .join()
            .expect("explorer thread panicked")
    })
}
