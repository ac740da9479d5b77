// SPDX-License-Identifier: Apache-2.0

//! Single-step semantics.

use super::{EndKind, Explorer, State, StepKind, TraceStep, Truncation, EXIT_ADDRESS, MAX_JUMP_TARGETS};
use crate::detectors;
use crate::eir::{Inst, SP};
use crate::expr::{apply, Expr};
use crate::memory::{MemCtx, Site};

/// Where a hook returns to.
#[derive(Clone, Copy)]
enum Resume {
    /// `intrinsic`: fall through to the next instruction.
    Next(u64),
    /// Reached through `call`: pop the return address.
    Pop,
}

impl<'a> Explorer<'a> {
    /// Execute the instruction (or hook) at `s.pc`. Returns the successor
    /// states; paths that end are recorded in `self.ends`.
    pub fn step(&mut self, mut s: State) -> Vec<State> {
        let pkg = self.pkg;
        let pc = s.pc;
        s.reads_in_step = 0;
        let rec = TraceStep {
            pc,
            kind: StepKind::Exec,
            concretized: std::mem::take(&mut s.pending_concretized),
        };
        if let Some(name) = pkg.program.extern_at(pc) {
            return self.run_hook(s, name, rec, Resume::Pop);
        }
        let Some(inst) = pkg.program.inst_at(pc) else {
            let msg = format!("host-code execution attempt at {pc:#x}");
            self.end_path(s, Some(rec), EndKind::Fault(msg));
            return vec![];
        };
        self.exec(s, inst, rec)
    }

    fn exec(&mut self, mut s: State, inst: &'a Inst, mut rec: TraceStep) -> Vec<State> {
        let pc = s.pc;
        let r = |s: &State, i: u8| s.regs[i as usize].clone();
        match inst {
            Inst::Const { rd, imm, .. } => {
                s.regs[*rd as usize] = Expr::konst(64, *imm);
                self.next(s, pc + 1, rec)
            }
            Inst::Mov { rd, rs } => {
                s.regs[*rd as usize] = r(&s, *rs);
                self.next(s, pc + 1, rec)
            }
            Inst::Unary { op, rd, rs } => {
                s.regs[*rd as usize] = apply(*op, &[r(&s, *rs)]).expect("64-bit unary");
                self.next(s, pc + 1, rec)
            }
            Inst::Binary { op, rd, rs, rt } => {
                s.regs[*rd as usize] = apply(*op, &[r(&s, *rs), r(&s, *rt)]).expect("64-bit binary");
                self.next(s, pc + 1, rec)
            }
            Inst::Compare { op, rd, rs, rt } => {
                let c = apply(*op, &[r(&s, *rs), r(&s, *rt)]).expect("64-bit compare");
                s.regs[*rd as usize] = c.zext(64);
                self.next(s, pc + 1, rec)
            }
            Inst::Load {
                width,
                rd,
                base,
                offset,
            } => {
                let addr = r(&s, *base).add_const(*offset as i64 as u64);
                let v = self.load(&mut s, &addr, *width as u64, &mut rec);
                s.regs[*rd as usize] = v.zext(64);
                self.next(s, pc + 1, rec)
            }
            Inst::Store {
                width,
                base,
                offset,
                rs,
            } => {
                let addr = r(&s, *base).add_const(*offset as i64 as u64);
                let v = r(&s, *rs);
                self.store(&mut s, &addr, &v, *width as u64, &mut rec);
                self.next(s, pc + 1, rec)
            }
            Inst::Jmp { target } => self.goto(s, *target, rec),
            Inst::Jmpr { rs } => {
                let t = r(&s, *rs);
                self.transfer(s, &t, rec)
            }
            Inst::Br { rs, then, els } => {
                let visits = s.visits.entry(pc).or_insert(0);
                *visits += 1;
                if *visits > self.cfg.limits.loop_bound {
                    self.truncate(s, Truncation::LoopBound);
                    return vec![];
                }
                let cond = r(&s, *rs).eq_const(0).not();
                let mut out = Vec::new();
                for (dir, child) in self.fork(s, &cond) {
                    let mut rec = rec.clone();
                    rec.kind = StepKind::Branch(dir);
                    out.extend(self.next(child, if dir { *then } else { *els }, rec));
                }
                out
            }
            Inst::Call { target } => {
                self.push(&mut s, &Expr::konst(64, pc + 1), &mut rec);
                self.goto(s, *target, rec)
            }
            Inst::Callr { rs } => {
                let t = r(&s, *rs);
                self.push(&mut s, &Expr::konst(64, pc + 1), &mut rec);
                self.transfer(s, &t, rec)
            }
            Inst::Ret => self.ret(s, rec),
            Inst::Halt => {
                self.end_path(s, Some(rec), EndKind::Halt);
                vec![]
            }
            Inst::Intrinsic { name } => self.run_hook(s, name, rec, Resume::Next(pc + 1)),
        }
    }

    fn next(&mut self, mut s: State, pc: u64, rec: TraceStep) -> Vec<State> {
        s.pc = pc;
        self.finish_step(&mut s, rec);
        vec![s]
    }

    /// Transfer to a concrete address.
    fn goto(&mut self, s: State, target: u64, rec: TraceStep) -> Vec<State> {
        let prog = &self.pkg.program;
        if prog.inst_at(target).is_some() || prog.extern_at(target).is_some() {
            self.next(s, target, rec)
        } else {
            let msg = format!("host-code execution attempt at {target:#x}");
            self.end_path(s, Some(rec), EndKind::Fault(msg));
            vec![]
        }
    }

    /// Indirect transfer: detector check, then either a concrete jump or a
    /// fork per feasible target.
    fn transfer(&mut self, s: State, target: &Expr, rec: TraceStep) -> Vec<State> {
        let target = s.path.resolve(target);
        if let Some(t) = target.as_const() {
            return self.goto(s, t, rec);
        }
        if let Some(f) = detectors::check_jump(&self.cfg.detectors, &self.solver, &s, &target, &rec) {
            let kind = f.kind;
            self.report(&s, Some(&rec), f);
            self.end_path(s, Some(rec), EndKind::Finding(kind));
            return vec![];
        }
        let (values, complete) = match self.solver.enumerate(s.path.as_slice(), &target, MAX_JUMP_TARGETS) {
            Ok(v) => v,
            Err(_) => {
                self.end_path(s, Some(rec), EndKind::Truncated(Truncation::SolverUnknown));
                return vec![];
            }
        };
        let mut out = Vec::new();
        let mut rest = Some(s);
        for v in values {
            let Some(cur) = rest.take() else { break };
            for (dir, child) in self.fork(cur, &target.eq_const(v)) {
                if dir {
                    out.extend(self.goto(child, v, rec.clone()));
                } else {
                    rest = Some(child);
                }
            }
        }
        if let Some(r) = rest {
            let why = if complete {
                Truncation::SolverUnknown
            } else {
                Truncation::JumpTargets
            };
            self.end_path(r, Some(rec), EndKind::Truncated(why));
        }
        out
    }

    fn ret(&mut self, mut s: State, mut rec: TraceStep) -> Vec<State> {
        let target = self.pop(&mut s, &mut rec);
        if target.as_const() == Some(EXIT_ADDRESS) {
            self.end_path(s, Some(rec), EndKind::Exit);
            return vec![];
        }
        self.transfer(s, &target, rec)
    }

    fn run_hook(&mut self, s: State, name: &str, mut rec: TraceStep, resume: Resume) -> Vec<State> {
        rec.kind = StepKind::Hook(name.to_string());
        let Some(h) = self.hooks.get(name).cloned() else {
            let msg = format!("no hook bound to '{name}'");
            self.end_path(s, Some(rec), EndKind::Fault(msg));
            return vec![];
        };
        let succs = (h.run)(self, s, &mut rec);
        let mut out = Vec::new();
        for succ in succs {
            match resume {
                Resume::Next(pc) => out.extend(self.next(succ, pc, rec.clone())),
                Resume::Pop => out.extend(self.ret(succ, rec.clone())),
            }
        }
        out
    }

    /// Load through the detectors and memory model.
    pub fn load(&mut self, s: &mut State, addr: &Expr, width: u64, rec: &mut TraceStep) -> Expr {
        if let Some(f) = detectors::check_null(&self.cfg.detectors, &self.solver, s, addr, width, rec) {
            self.report(s, Some(rec), f);
        }
        let addr = s.path.resolve(addr);
        let site = Site {
            pc: s.pc,
            step: s.steps,
            seq: s.reads_in_step,
        };
        s.reads_in_step += 1;
        let ctx = MemCtx {
            factory: &self.factory,
            solver: &self.solver,
        };
        let r = s.mem.read(ctx, &addr, width, &mut s.path, site);
        if r.concretized.is_some() {
            rec.concretized = true;
        }
        r.value
    }

    /// Store through the detectors and memory model. A necessary null access
    /// is reported as such and not additionally as a controlled write.
    pub fn store(&mut self, s: &mut State, raw_addr: &Expr, value: &Expr, width: u64, rec: &mut TraceStep) {
        let addr = s.path.resolve(raw_addr);
        let value = s.path.resolve(value);
        let value = if value.width() as u64 > width * 8 {
            value.extract((width * 8) as u32 - 1, 0)
        } else {
            value
        };
        let cfg = self.cfg;
        let d = &cfg.detectors;
        if let Some(f) = detectors::check_null(d, &self.solver, s, raw_addr, width, rec) {
            self.report(s, Some(rec), f);
        } else if let Some(f) = detectors::check_write(d, &self.solver, s, &addr, &value, width, rec) {
            self.report(s, Some(rec), f);
        }
        let site = Site {
            pc: s.pc,
            step: s.steps,
            seq: s.reads_in_step,
        };
        let ctx = MemCtx {
            factory: &self.factory,
            solver: &self.solver,
        };
        let w = s.mem.write(ctx, &addr, &value, width, &mut s.path, site);
        if w.concretized.is_some() {
            rec.concretized = true;
        }
    }

    pub fn push(&mut self, s: &mut State, value: &Expr, rec: &mut TraceStep) {
        let sp = s.reg(SP).sub(&Expr::konst(64, 8));
        self.store(s, &sp, value, 8, rec);
        s.regs[SP as usize] = sp;
    }

    pub fn pop(&mut self, s: &mut State, rec: &mut TraceStep) -> Expr {
        let sp = s.reg(SP);
        let v = self.load(s, &sp, 8, rec);
        s.regs[SP as usize] = sp.add_const(8);
        v
    }
}

