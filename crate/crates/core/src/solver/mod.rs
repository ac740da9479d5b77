// SPDX-License-Identifier: Apache-2.0

//! Exact satisfiability checking over [`Expr`] constraints.
//!
//! Queries are split into independent components (formulas that share no
//! symbols), each component is first tried against the all-zero assignment
//! and otherwise bit-blasted into a CDCL SAT core. Every answer other than
//! `Unknown` is exact; `Unknown` is returned only when the step budget runs
//! out.

mod blast;
mod sat;

use std::collections::{BTreeMap, HashMap};

use blast::Blaster;
use sat::SatResult;

use crate::expr::{eval_or_zero, Expr, SymbolId};

/// A satisfying assignment: symbol id to value (masked to the symbol width).
pub type Model = BTreeMap<SymbolId, u64>;

pub const DEFAULT_BUDGET: u64 = 20_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SolverConfig {
    /// Upper bound on solver steps (propagations plus decisions) per call.
    pub budget: u64,
    /// Selects initial branching phases; 0 prefers small models.
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            budget: DEFAULT_BUDGET,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnknownReason {
    BudgetExhausted,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SolverVerdict {
    Sat(Model),
    Unsat,
    Unknown(UnknownReason),
}

impl SolverVerdict {
    pub fn is_sat(&self) -> bool {
        matches!(self, SolverVerdict::Sat(_))
    }
    pub fn is_unsat(&self) -> bool {
        matches!(self, SolverVerdict::Unsat)
    }
    pub fn is_unknown(&self) -> bool {
        matches!(self, SolverVerdict::Unknown(_))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Validity {
    Proved,
    Counterexample(Model),
    Unknown(UnknownReason),
}

/// Is `constraints ∧ query` satisfiable? Every formula must have width 1.
pub fn is_sat(constraints: &[Expr], query: &Expr, cfg: &SolverConfig) -> SolverVerdict {
    let mut all: Vec<Expr> = constraints.to_vec();
    all.push(query.clone());
    check(&all, cfg)
}

/// Does `pred` hold under every assignment satisfying `constraints`?
pub fn must_hold(constraints: &[Expr], pred: &Expr, cfg: &SolverConfig) -> Validity {
    match is_sat(constraints, &pred.not(), cfg) {
        SolverVerdict::Sat(m) => Validity::Counterexample(m),
        SolverVerdict::Unsat => Validity::Proved,
        SolverVerdict::Unknown(r) => Validity::Unknown(r),
    }
}

/// Satisfiability of a conjunction. The model assigns every symbol of every
/// formula.
pub fn check(formulas: &[Expr], cfg: &SolverConfig) -> SolverVerdict {
    let comps = match components(formulas) {
        Some(c) => c,
        None => return SolverVerdict::Unsat,
    };
    solve_components(&comps, cfg)
}

/// Like [`is_sat`], but only solves the constraints that share symbols
/// (transitively) with `query`. The caller guarantees that `constraints`
/// alone are satisfiable, which holds for path constraints by construction.
/// The model covers only the symbols of the solved slice.
pub fn is_sat_relevant(constraints: &[Expr], query: &Expr, cfg: &SolverConfig) -> SolverVerdict {
    if let Some(v) = query.as_const() {
        return if v == 1 {
            SolverVerdict::Sat(Model::new())
        } else {
            SolverVerdict::Unsat
        };
    }
    let slice = relevant_slice(constraints, query);
    let mut all = slice;
    all.push(query.clone());
    check(&all, cfg)
}

/// Relevant-slice counterpart of [`must_hold`].
pub fn must_hold_relevant(constraints: &[Expr], pred: &Expr, cfg: &SolverConfig) -> Validity {
    match is_sat_relevant(constraints, &pred.not(), cfg) {
        SolverVerdict::Sat(m) => Validity::Counterexample(m),
        SolverVerdict::Unsat => Validity::Proved,
        SolverVerdict::Unknown(r) => Validity::Unknown(r),
    }
}

/// Constraints that share symbols with `query`, transitively.
pub fn relevant_slice(constraints: &[Expr], query: &Expr) -> Vec<Expr> {
    let mut live: std::collections::HashSet<SymbolId> =
        query.symbols().iter().map(|s| s.id).collect();
    let syms: Vec<Vec<SymbolId>> = constraints
        .iter()
        .map(|c| c.symbols().iter().map(|s| s.id).collect())
        .collect();
    let mut taken = vec![false; constraints.len()];
    loop {
        let mut changed = false;
        for (i, ss) in syms.iter().enumerate() {
            if !taken[i] && ss.iter().any(|s| live.contains(s)) {
                taken[i] = true;
                live.extend(ss.iter().copied());
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    constraints
        .iter()
        .zip(taken)
        .filter(|(_, t)| *t)
        .map(|(c, _)| c.clone())
        .collect()
}

/// Group formulas into symbol-disjoint components. Returns `None` if a
/// ground formula is false.
fn components(formulas: &[Expr]) -> Option<Vec<Vec<Expr>>> {
    let mut parent: HashMap<SymbolId, SymbolId> = HashMap::new();
    fn find(p: &mut HashMap<SymbolId, SymbolId>, x: SymbolId) -> SymbolId {
        let mut r = x;
        while let Some(&n) = p.get(&r) {
            if n == r {
                break;
            }
            r = n;
        }
        let mut c = x;
        while c != r {
            let n = p[&c];
            p.insert(c, r);
            c = n;
        }
        r
    }
    let mut keyed: Vec<(SymbolId, Expr)> = Vec::new();
    let mut pending: Vec<(Vec<SymbolId>, Expr)> = Vec::new();
    for f in formulas {
        debug_assert_eq!(f.width(), 1, "constraint must have width 1");
        if let Some(v) = f.as_const() {
            if v == 0 {
                return None;
            }
            continue;
        }
        let ids: Vec<SymbolId> = f.symbols().iter().map(|s| s.id).collect();
        for &id in &ids {
            parent.entry(id).or_insert(id);
        }
        for w in ids.windows(2) {
            let (a, b) = (find(&mut parent, w[0]), find(&mut parent, w[1]));
            if a != b {
                let (lo, hi) = (a.min(b), a.max(b));
                parent.insert(hi, lo);
            }
        }
        pending.push((ids, f.clone()));
    }
    for (ids, f) in pending {
        keyed.push((find(&mut parent, ids[0]), f));
    }
    let mut groups: BTreeMap<SymbolId, Vec<Expr>> = BTreeMap::new();
    for (k, f) in keyed {
        groups.entry(k).or_default().push(f);
    }
    Some(groups.into_values().collect())
}

fn solve_components(comps: &[Vec<Expr>], cfg: &SolverConfig) -> SolverVerdict {
    let mut model = Model::new();
    let mut spent = 0u64;
    for comp in comps {
        let zero = Model::new();
        if comp.iter().all(|f| eval_or_zero(&zero, f) == 1) {
            for f in comp {
                for s in f.symbols() {
                    model.insert(s.id, 0);
                }
            }
            continue;
        }
        let mut bl = Blaster::new(cfg.seed);
        for f in comp {
            bl.assert(f);
        }
        let before = bl.sat.steps;
        let r = bl.sat.solve(&[], cfg.budget.saturating_sub(spent));
        spent += bl.sat.steps - before;
        match r {
            SatResult::Sat => {
                for (id, bits) in &bl.syms {
                    model.insert(*id, bl.model_value(bits));
                }
            }
            SatResult::Unsat => return SolverVerdict::Unsat,
            SatResult::Unknown => return SolverVerdict::Unknown(UnknownReason::BudgetExhausted),
        }
    }
    SolverVerdict::Sat(model)
}

/// An incremental query context over a fixed set of asserted formulas.
///
/// Used where several questions are asked about the same constraints, for
/// example enumerating the feasible values of a jump target or finding the
/// smallest feasible size.
pub struct Session {
    bl: Blaster,
    cfg: SolverConfig,
    spent: u64,
}

impl Session {
    pub fn new(formulas: &[Expr], cfg: &SolverConfig) -> Session {
        let mut bl = Blaster::new(cfg.seed);
        for f in formulas {
            bl.assert(f);
        }
        Session {
            bl,
            cfg: *cfg,
            spent: 0,
        }
    }

    fn run(&mut self, assumptions: &[u32]) -> SatResult {
        let before = self.bl.sat.steps;
        let r = self
            .bl
            .sat
            .solve(assumptions, self.cfg.budget.saturating_sub(self.spent));
        self.spent += self.bl.sat.steps - before;
        r
    }

    fn model(&self) -> Model {
        self.bl
            .syms
            .iter()
            .map(|(id, bits)| (*id, self.bl.model_value(bits)))
            .collect()
    }

    /// Check satisfiability under the extra width-1 `assumptions`.
    pub fn check(&mut self, assumptions: &[Expr]) -> SolverVerdict {
        let lits: Vec<u32> = assumptions.iter().map(|a| self.bl.lit(a)).collect();
        match self.run(&lits) {
            SatResult::Sat => SolverVerdict::Sat(self.model()),
            SatResult::Unsat => SolverVerdict::Unsat,
            SatResult::Unknown => SolverVerdict::Unknown(UnknownReason::BudgetExhausted),
        }
    }

    /// Smallest value of `e` (unsigned) consistent with the session, or
    /// `Ok(None)` if the session is unsatisfiable.
    pub fn minimize(&mut self, e: &Expr) -> Result<Option<(u64, Model)>, UnknownReason> {
        let bits = self.bl.bits(e);
        match self.run(&[]) {
            SatResult::Sat => {}
            SatResult::Unsat => return Ok(None),
            SatResult::Unknown => return Err(UnknownReason::BudgetExhausted),
        }
        let mut best = self.model();
        let mut fixed: Vec<u32> = Vec::new();
        for i in (0..bits.len()).rev() {
            let mut attempt = fixed.clone();
            attempt.push(bits[i] ^ 1);
            match self.run(&attempt) {
                SatResult::Sat => {
                    best = self.model();
                    fixed = attempt;
                }
                SatResult::Unsat => fixed.push(bits[i]),
                SatResult::Unknown => return Err(UnknownReason::BudgetExhausted),
            }
        }
        // The last satisfying assignment respects every fixed bit.
        Ok(Some((self.bl.model_value(&bits), best)))
    }

    /// Up to `limit` distinct feasible values of `e`, ascending order of
    /// discovery. The flag is true when the list is complete.
    pub fn enumerate(&mut self, e: &Expr, limit: usize) -> Result<(Vec<u64>, bool), UnknownReason> {
        let bits = self.bl.bits(e);
        let mut values = Vec::new();
        loop {
            match self.run(&[]) {
                SatResult::Sat => {}
                SatResult::Unsat => return Ok((values, true)),
                SatResult::Unknown => return Err(UnknownReason::BudgetExhausted),
            }
            let v = self.bl.model_value(&bits);
            if values.len() == limit {
                return Ok((values, false));
            }
            values.push(v);
            let block: Vec<u32> = bits
                .iter()
                .enumerate()
                .map(|(i, &l)| if (v >> i) & 1 == 1 { l ^ 1 } else { l })
                .collect();
            self.bl.sat.add_clause(&block);
        }
    }
}

/// Smallest feasible value of `e` under the relevant slice of `constraints`.
pub fn minimize(
    constraints: &[Expr],
    e: &Expr,
    cfg: &SolverConfig,
) -> Result<Option<(u64, Model)>, UnknownReason> {
    if let Some(v) = e.as_const() {
        return Ok(Some((v, Model::new())));
    }
    let slice = relevant_slice(constraints, e);
    Session::new(&slice, cfg).minimize(e)
}

/// Feasible values of `e` under the relevant slice of `constraints`, at most
/// `limit` of them.
pub fn enumerate_values(
    constraints: &[Expr],
    e: &Expr,
    limit: usize,
    cfg: &SolverConfig,
) -> Result<(Vec<u64>, bool), UnknownReason> {
    if let Some(v) = e.as_const() {
        return Ok((vec![v], true));
    }
    let slice = relevant_slice(constraints, e);
    Session::new(&slice, cfg).enumerate(e, limit)
}

/// Solver front end used during exploration. Queries are sliced to the
/// constraints that matter and `Unknown` answers are counted.
#[derive(Debug, Default)]
pub struct Solver {
    pub cfg: SolverConfig,
    unknowns: std::cell::Cell<u64>,
}

impl Solver {
    pub fn new(cfg: SolverConfig) -> Solver {
        Solver {
            cfg,
            unknowns: std::cell::Cell::new(0),
        }
    }

    /// Number of `Unknown` answers so far.
    pub fn unknowns(&self) -> u64 {
        self.unknowns.get()
    }

    fn note<T>(&self, r: Result<T, UnknownReason>) -> Result<T, UnknownReason> {
        if r.is_err() {
            self.unknowns.set(self.unknowns.get() + 1);
        }
        r
    }

    fn note_verdict(&self, v: SolverVerdict) -> SolverVerdict {
        if v.is_unknown() {
            self.unknowns.set(self.unknowns.get() + 1);
        }
        v
    }

    /// Satisfiability of `query` under consistent path constraints.
    pub fn is_sat(&self, constraints: &[Expr], query: &Expr) -> SolverVerdict {
        self.note_verdict(is_sat_relevant(constraints, query, &self.cfg))
    }

    pub fn must_hold(&self, constraints: &[Expr], pred: &Expr) -> Validity {
        match self.is_sat(constraints, &pred.not()) {
            SolverVerdict::Sat(m) => Validity::Counterexample(m),
            SolverVerdict::Unsat => Validity::Proved,
            SolverVerdict::Unknown(r) => Validity::Unknown(r),
        }
    }

    /// A model of every constraint plus `query`, covering all symbols.
    pub fn full_model(&self, constraints: &[Expr], query: &Expr) -> SolverVerdict {
        self.note_verdict(is_sat(constraints, query, &self.cfg))
    }

    pub fn minimize(&self, constraints: &[Expr], e: &Expr) -> Result<Option<u64>, UnknownReason> {
        self.note(minimize(constraints, e, &self.cfg).map(|r| r.map(|(v, _)| v)))
    }

    pub fn enumerate(
        &self,
        constraints: &[Expr],
        e: &Expr,
        limit: usize,
    ) -> Result<(Vec<u64>, bool), UnknownReason> {
        self.note(enumerate_values(constraints, e, limit, &self.cfg))
    }
}
