// SPDX-License-Identifier: Apache-2.0

//! Vulnerability detectors.
//!
//! Each check inspects one event of a path (an indirect jump, a store, a
//! memory access, the end of a path) and returns a candidate [`Finding`].
//! Witnesses and traces are attached by the explorer only when a candidate
//! is new, see [`FindingSet`].

mod witness;

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

pub use witness::{build_witness, HostRead, OcallWitness, Witness};

use crate::executor::{State, TraceStep};
use crate::expr::{mask, roots_of, Expr, Provenance, Root};
use crate::loader::{Layout, Section, NULL_PAGE_END};
use crate::solver::{Solver, SolverVerdict, Validity};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FindingKind {
    ControlledJump,
    ControlledWrite,
    NullDeref,
    DoubleFetch,
}

impl FindingKind {
    pub const ALL: [FindingKind; 4] = [
        FindingKind::ControlledJump,
        FindingKind::ControlledWrite,
        FindingKind::NullDeref,
        FindingKind::DoubleFetch,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FindingKind::ControlledJump => "controlled-jump",
            FindingKind::ControlledWrite => "controlled-write",
            FindingKind::NullDeref => "null-deref",
            FindingKind::DoubleFetch => "double-fetch",
        }
    }

    pub fn from_name(s: &str) -> Option<FindingKind> {
        FindingKind::ALL.into_iter().find(|k| k.name() == s)
    }
}

impl fmt::Display for FindingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Low,
    High,
}

impl Severity {
    pub fn name(self) -> &'static str {
        match self {
            Severity::Low => "low",
            Severity::High => "high",
        }
    }
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Confidence {
    /// Every solver query behind the finding was answered.
    Exact,
    /// A query came back unknown and was resolved toward reporting.
    Possible,
}

impl Confidence {
    pub fn name(self) -> &'static str {
        match self {
            Confidence::Exact => "exact",
            Confidence::Possible => "possible",
        }
    }
}

/// Two distinct values an attacker-controlled expression must be able to
/// take.
pub const SENTINEL_A: u64 = 0x4141_4000;
pub const SENTINEL_B: u64 = 0x4242_4000;

/// Sentinel pair for a `width`-bit value. Narrow values use alternating bit
/// patterns since the address sentinels do not fit.
pub fn sentinels(width: u32) -> (u64, u64) {
    if width >= 32 {
        (SENTINEL_A & mask(width), SENTINEL_B & mask(width))
    } else {
        (0x5555_5555_5555_5555 & mask(width), 0xaaaa_aaaa_aaaa_aaaa & mask(width))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DetectorConfig {
    pub enclave: Section,
    pub enabled: BTreeSet<FindingKind>,
}

impl DetectorConfig {
    /// All detectors on, for a package with the given layout.
    pub fn for_layout(layout: &Layout) -> DetectorConfig {
        DetectorConfig {
            enclave: layout.enclave,
            enabled: FindingKind::ALL.into_iter().collect(),
        }
    }

    pub fn disable(&mut self, kind: FindingKind) {
        self.enabled.remove(&kind);
    }

    pub fn is_enabled(&self, kind: FindingKind) -> bool {
        self.enabled.contains(&kind)
    }
}

#[derive(Debug, Clone)]
pub struct Finding {
    pub kind: FindingKind,
    pub pc: u64,
    pub severity: Severity,
    pub confidence: Confidence,
    /// Controlled writes: some feasible address lies inside the enclave.
    pub reaches_enclave: Option<bool>,
    /// Controlled writes: the stored value is attacker controlled too.
    pub value_controlled: Option<bool>,
    /// The controlled expression (jump target, store or access address).
    pub expr: Expr,
    pub roots: BTreeSet<Root>,
    pub provenance: Provenance,
    /// Second program point for two-site findings (the first fetch of a
    /// double fetch).
    pub related_pc: Option<u64>,
    /// Additional condition the witness model must satisfy.
    pub query: Expr,
    pub witness: Option<Witness>,
    pub trace: Vec<TraceStep>,
    /// Length of the trace prefix that leads to the event, when shorter than
    /// the full trace.
    pub trace_len: Option<usize>,
    pub constraints: Vec<Expr>,
    pub occurrences: u64,
}

impl Finding {
    fn new(kind: FindingKind, pc: u64, severity: Severity, confidence: Confidence, expr: &Expr) -> Finding {
        Finding {
            kind,
            pc,
            severity,
            confidence,
            reaches_enclave: None,
            value_controlled: None,
            roots: roots_of(expr),
            provenance: Provenance::of_expr(expr),
            expr: expr.clone(),
            related_pc: None,
            query: Expr::bool_const(true),
            witness: None,
            trace: Vec::new(),
            trace_len: None,
            constraints: Vec::new(),
            occurrences: 1,
        }
    }

    /// Deduplication key.
    pub fn key(&self) -> (FindingKind, u64, BTreeSet<Root>) {
        (self.kind, self.pc, self.roots.clone())
    }
}

/// Findings of one exploration, deduplicated by kind, pc and roots.
#[derive(Debug, Clone, Default)]
pub struct FindingSet {
    items: Vec<Finding>,
    index: HashMap<(FindingKind, u64, BTreeSet<Root>), usize>,
}

impl FindingSet {
    /// Count another occurrence of a known finding. Returns false when the
    /// finding is new.
    pub fn bump(&mut self, f: &Finding) -> bool {
        match self.index.get(&f.key()) {
            Some(&i) => {
                self.items[i].occurrences += 1;
                true
            }
            None => false,
        }
    }

    pub fn add(&mut self, f: Finding) {
        if self.bump(&f) {
            return;
        }
        self.index.insert(f.key(), self.items.len());
        self.items.push(f);
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn into_vec(self) -> Vec<Finding> {
        self.items
    }
}

/// High when an ECALL argument or host memory reaches the expression; low
/// when global state is the only root.
fn severity_for(roots: &BTreeSet<Root>) -> Severity {
    if roots.iter().any(|r| matches!(r, Root::Arg { .. } | Root::Host)) {
        Severity::High
    } else {
        Severity::Low
    }
}

/// Outcome of a two-sentinel controllability test.
enum Control {
    Yes,
    Unknown,
    No,
}

fn two_sentinel(solver: &Solver, s: &State, e: &Expr) -> Control {
    let (a, b) = sentinels(e.width());
    let mut unknown = false;
    for v in [a, b] {
        match solver.is_sat(s.path.as_slice(), &e.eq_const(v)) {
            SolverVerdict::Sat(_) => {}
            SolverVerdict::Unsat => return Control::No,
            SolverVerdict::Unknown(_) => unknown = true,
        }
    }
    if unknown {
        Control::Unknown
    } else {
        Control::Yes
    }
}

/// Indirect control transfer to a symbolic `target` that can be steered to
/// both sentinels.
pub fn check_jump(cfg: &DetectorConfig, solver: &Solver, s: &State, target: &Expr, rec: &TraceStep) -> Option<Finding> {
    if !cfg.is_enabled(FindingKind::ControlledJump) || target.is_const() {
        return None;
    }
    let roots = roots_of(target);
    if roots.is_empty() {
        return None;
    }
    let confidence = match two_sentinel(solver, s, target) {
        Control::Yes => Confidence::Exact,
        Control::Unknown => Confidence::Possible,
        Control::No => return None,
    };
    let mut f = Finding::new(FindingKind::ControlledJump, rec.pc, severity_for(&roots), confidence, target);
    f.query = target.eq_const(SENTINEL_A);
    Some(f)
}

/// Store through an address with attacker roots that can be steered to
/// both sentinels. Reported regardless of the value written.
#[allow(clippy::too_many_arguments)]
pub fn check_write(
    cfg: &DetectorConfig,
    solver: &Solver,
    s: &State,
    addr: &Expr,
    value: &Expr,
    _width: u64,
    rec: &TraceStep,
) -> Option<Finding> {
    if !cfg.is_enabled(FindingKind::ControlledWrite) || addr.is_const() {
        return None;
    }
    let roots = roots_of(addr);
    if roots.is_empty() {
        return None;
    }
    let confidence = match two_sentinel(solver, s, addr) {
        Control::Yes => Confidence::Exact,
        Control::Unknown => Confidence::Possible,
        Control::No => return None,
    };
    let e = &cfg.enclave;
    let inside = Expr::konst(64, e.base)
        .ule(addr)
        .and(&addr.ult(&Expr::konst(64, e.end())));
    let reaches = solver.is_sat(s.path.as_slice(), &inside).is_sat();
    let value_controlled = !value.is_const()
        && !roots_of(value).is_empty()
        && matches!(two_sentinel(solver, s, value), Control::Yes);
    let mut f = Finding::new(FindingKind::ControlledWrite, rec.pc, severity_for(&roots), confidence, addr);
    f.reaches_enclave = Some(reaches);
    f.value_controlled = Some(value_controlled);
    f.query = addr.eq_const(SENTINEL_A);
    Some(f)
}

/// Access that necessarily falls into the null page.
pub fn check_null(cfg: &DetectorConfig, solver: &Solver, s: &State, addr: &Expr, width: u64, rec: &TraceStep) -> Option<Finding> {
    if !cfg.is_enabled(FindingKind::NullDeref) {
        return None;
    }
    // The finding keeps the unresolved address so provenance survives
    // constants the path has pinned.
    let resolved = s.path.resolve(addr);
    let in_null = resolved.ule(&Expr::konst(64, NULL_PAGE_END - width));
    let hit = match resolved.as_const() {
        Some(a) => a <= NULL_PAGE_END - width,
        None => solver.must_hold(s.path.as_slice(), &in_null) == Validity::Proved,
    };
    hit.then(|| Finding::new(FindingKind::NullDeref, rec.pc, Severity::High, Confidence::Exact, addr))
}

/// Host locations fetched more than once at different program points. Run
/// when a path ends.
pub fn check_double_fetch(cfg: &DetectorConfig, _solver: &Solver, s: &State) -> Vec<Finding> {
    if !cfg.is_enabled(FindingKind::DoubleFetch) {
        return Vec::new();
    }
    let log = &s.mem.fetch_log;
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for (j, second) in log.iter().enumerate() {
        let first = log[..j]
            .iter()
            .find(|f| f.pc != second.pc && f.width == second.width && f.addr == second.addr);
        if let Some(first) = first {
            if !seen.insert((first.pc, second.pc)) {
                continue;
            }
            let mut f = Finding::new(FindingKind::DoubleFetch, second.pc, Severity::Low, Confidence::Exact, &second.addr);
            f.related_pc = Some(first.pc);
            f.trace_len = Some(second.step as usize + 1);
            out.push(f);
        }
    }
    out
}
