// SPDX-License-Identifier: Apache-2.0

//! Vulnerability reports: JSON and text rendering, witness replay and the
//! bundled report schema.

mod replay;
mod schema;

use std::collections::{BTreeMap, HashSet, VecDeque};
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use replay::{replay_witness, ReplayError, ReplayOutcome};
pub use schema::{validate_report, SchemaError, REPORT_SCHEMA};

use crate::detectors::{Finding, Witness};
use crate::executor::{Exploration, ExplorationStats, Limits, RunConfig};
use crate::expr::{Expr, Label};
use crate::loader::EnclavePackage;

/// Provenance hops kept in a report unless verbose output is requested.
pub const MAX_PROVENANCE_HOPS: usize = 16;
/// Longest rendering of an expression kept in a report.
pub const MAX_EXPR_CHARS: usize = 400;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("no finding with id '{0}'")]
    UnknownId(String),
    #[error("report parse error: {0}")]
    Parse(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub package: String,
    pub version: String,
    pub seed: u64,
    pub limits: Limits,
    pub ecalls: Vec<EcallReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EcallReport {
    pub index: u32,
    pub name: String,
    pub stats: ExplorationStats,
    pub findings: Vec<FindingReport>,
    /// Set when the ECALL could not be explored at all.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FindingReport {
    /// `<ecall index>.<n>`, unique within the report.
    pub id: String,
    pub kind: String,
    pub pc: u64,
    /// `label` or `label+offset` of `pc`.
    pub location: String,
    pub severity: String,
    pub confidence: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reaches_enclave: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value_controlled: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub related_pc: Option<u64>,
    pub expr: String,
    pub provenance: Vec<ProvenanceHop>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub witness: Option<WitnessReport>,
    pub trace: Vec<TraceEntry>,
    pub constraints: Vec<String>,
    pub occurrences: u64,
}

/// One label on the way from an attacker root to the controlled expression.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvenanceHop {
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub param: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deref_of: Option<String>,
    /// Elision marker: number of hops left out at this position.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub elided: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub pc: u64,
    pub kind: String,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub concretized: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HostReadReport {
    pub step: u64,
    pub seq: u32,
    pub addr: String,
    pub bytes: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OcallReport {
    pub ret: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_addr: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<String>,
}

/// Concrete inputs. Byte strings are lowercase hex; addresses and wide
/// values are `0x` hex strings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WitnessReport {
    /// Parameter index to argument bytes.
    pub args: BTreeMap<String, String>,
    /// Start address to bytes, for every host range the path read.
    pub host_memory: BTreeMap<String, String>,
    pub host_reads: Vec<HostReadReport>,
    pub enclave_memory: BTreeMap<String, String>,
    pub ocalls: Vec<OcallReport>,
    /// Predicted jump target, store address, null address or re-fetched
    /// host address.
    pub event: String,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ReportOptions {
    /// Keep full provenance chains.
    pub verbose_provenance: bool,
}

pub fn hex_bytes(b: &[u8]) -> String {
    let mut s = String::with_capacity(b.len() * 2);
    for x in b {
        let _ = write!(s, "{x:02x}");
    }
    s
}

pub fn parse_hex_bytes(s: &str) -> Option<Vec<u8>> {
    if !s.len().is_multiple_of(2) {
        return None;
    }
    (0..s.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(s.get(i..i + 2)?, 16).ok())
        .collect()
}

pub fn hex_u64(v: u64) -> String {
    format!("{v:#x}")
}

pub fn parse_hex_u64(s: &str) -> Option<u64> {
    u64::from_str_radix(s.strip_prefix("0x")?, 16).ok()
}

/// Group a byte map into runs of consecutive addresses.
fn byte_runs(m: &BTreeMap<u64, u8>) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    let mut run: Option<(u64, Vec<u8>)> = None;
    for (&a, &b) in m {
        match &mut run {
            Some((start, bytes)) if start.wrapping_add(bytes.len() as u64) == a => bytes.push(b),
            _ => {
                if let Some((start, bytes)) = run.take() {
                    out.insert(hex_u64(start), hex_bytes(&bytes));
                }
                run = Some((a, vec![b]));
            }
        }
    }
    if let Some((start, bytes)) = run {
        out.insert(hex_u64(start), hex_bytes(&bytes));
    }
    out
}

/// Inverse of [`byte_runs`].
pub fn parse_byte_runs(m: &BTreeMap<String, String>) -> Option<BTreeMap<u64, u8>> {
    let mut out = BTreeMap::new();
    for (a, bytes) in m {
        let a = parse_hex_u64(a)?;
        for (i, b) in parse_hex_bytes(bytes)?.into_iter().enumerate() {
            out.insert(a.wrapping_add(i as u64), b);
        }
    }
    Some(out)
}

fn witness_report(w: &Witness) -> WitnessReport {
    WitnessReport {
        args: w.args.iter().map(|(i, b)| (i.to_string(), hex_bytes(b))).collect(),
        host_memory: byte_runs(&w.host_memory),
        host_reads: w
            .host_reads
            .iter()
            .map(|r| HostReadReport {
                step: r.step,
                seq: r.seq,
                addr: hex_u64(r.addr),
                bytes: hex_bytes(&r.bytes),
            })
            .collect(),
        enclave_memory: byte_runs(&w.enclave_memory),
        ocalls: w
            .ocalls
            .iter()
            .map(|o| OcallReport {
                ret: hex_u64(o.ret),
                out_addr: o.out.as_ref().map(|(a, _)| hex_u64(*a)),
                out: o.out.as_ref().map(|(_, b)| hex_bytes(b)),
            })
            .collect(),
        event: hex_u64(w.event),
    }
}

struct Capped {
    s: String,
    limit: usize,
}

impl fmt::Write for Capped {
    fn write_str(&mut self, x: &str) -> fmt::Result {
        if self.s.len() + x.len() > self.limit {
            let room = self.limit - self.s.len();
            let cut = (0..=room).rev().find(|i| x.is_char_boundary(*i)).unwrap_or(0);
            self.s.push_str(&x[..cut]);
            return Err(fmt::Error);
        }
        self.s.push_str(x);
        Ok(())
    }
}

/// Render `e`, stopping after `limit` characters.
pub fn render_expr(e: &Expr, limit: usize) -> String {
    let mut c = Capped {
        s: String::new(),
        limit,
    };
    if write!(c, "{e}").is_err() {
        c.s.push_str("...");
    }
    c.s
}

fn hop(label: &Label) -> ProvenanceHop {
    let mut h = ProvenanceHop {
        label: label.kind().to_string(),
        param: None,
        offset: None,
        deref_of: None,
        elided: None,
    };
    match label {
        Label::EcallArg { param, offset } => {
            h.param = Some(*param);
            h.offset = Some(*offset);
        }
        Label::DerefOf(a) => h.deref_of = Some(render_expr(a, MAX_EXPR_CHARS)),
        _ => {}
    }
    h
}

/// Labels leading from the attacker roots to `e`, roots first. Dereference
/// links are followed breadth-first; repeated hops are dropped.
pub fn provenance_chain(e: &Expr) -> Vec<ProvenanceHop> {
    let mut hops: Vec<ProvenanceHop> = Vec::new();
    let mut seen = HashSet::new();
    let mut queue: VecDeque<_> = e.symbols().into_iter().collect();
    while let Some(sym) = queue.pop_front() {
        if !seen.insert(sym.id) {
            continue;
        }
        for l in sym.origin.labels() {
            let h = hop(l);
            if !hops.contains(&h) {
                hops.push(h);
            }
            if let Label::DerefOf(a) = l {
                queue.extend(a.symbols());
            }
        }
    }
    if hops.is_empty() {
        hops.push(hop(&Label::Constant));
    }
    hops.reverse();
    hops
}

/// Shorten a chain to `max` entries, keeping both ends and marking the gap.
pub fn cap_chain(chain: Vec<ProvenanceHop>, max: usize) -> Vec<ProvenanceHop> {
    if chain.len() <= max || max < 3 {
        return chain;
    }
    let head = (max - 1) / 2;
    let tail = max - 1 - head;
    let elided = chain.len() - head - tail;
    let mut out: Vec<ProvenanceHop> = chain[..head].to_vec();
    out.push(ProvenanceHop {
        label: "elided".into(),
        param: None,
        offset: None,
        deref_of: None,
        elided: Some(elided),
    });
    out.extend_from_slice(&chain[chain.len() - tail..]);
    out
}

fn finding_report(pkg: &EnclavePackage, id: String, f: &Finding, opts: ReportOptions) -> FindingReport {
    let chain = provenance_chain(&f.expr);
    let provenance = if opts.verbose_provenance {
        chain
    } else {
        cap_chain(chain, MAX_PROVENANCE_HOPS)
    };
    FindingReport {
        id,
        kind: f.kind.name().into(),
        pc: f.pc,
        location: pkg.program.describe_pc(f.pc),
        severity: f.severity.name().into(),
        confidence: f.confidence.name().into(),
        reaches_enclave: f.reaches_enclave,
        value_controlled: f.value_controlled,
        related_pc: f.related_pc,
        expr: render_expr(&f.expr, MAX_EXPR_CHARS),
        provenance,
        witness: f.witness.as_ref().map(witness_report),
        trace: f
            .trace
            .iter()
            .map(|t| TraceEntry {
                pc: t.pc,
                kind: t.kind.to_string(),
                concretized: t.concretized,
            })
            .collect(),
        constraints: f.constraints.iter().map(|c| render_expr(c, MAX_EXPR_CHARS)).collect(),
        occurrences: f.occurrences,
    }
}

/// Assemble the report of a run. Findings keep exploration order.
pub fn build_report(pkg: &EnclavePackage, cfg: &RunConfig, runs: &[Exploration], opts: ReportOptions) -> Report {
    let ecalls = runs
        .iter()
        .map(|x| EcallReport {
            index: x.ecall_index,
            name: x.ecall_name.clone(),
            stats: x.stats,
            findings: x
                .findings
                .iter()
                .enumerate()
                .map(|(n, f)| finding_report(pkg, format!("{}.{}", x.ecall_index, n + 1), f, opts))
                .collect(),
            error: x.init_error.clone(),
        })
        .collect();
    Report {
        package: pkg.name.clone(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.seed,
        limits: cfg.limits,
        ecalls,
    }
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(s: &str) -> Result<Report, ReportError> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn findings(&self) -> impl Iterator<Item = (&EcallReport, &FindingReport)> {
        self.ecalls.iter().flat_map(|e| e.findings.iter().map(move |f| (e, f)))
    }

    pub fn finding(&self, id: &str) -> Option<(&EcallReport, &FindingReport)> {
        self.findings().find(|(_, f)| f.id == id)
    }

    pub fn finding_count(&self) -> usize {
        self.ecalls.iter().map(|e| e.findings.len()).sum()
    }

    /// Human-readable digest.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "package {} (seed {})", self.package, self.seed);
        for e in &self.ecalls {
            let st = &e.stats;
            let _ = writeln!(
                s,
                "\necall {} {}: {} finding(s); states {} created, {} completed, {} truncated; {} steps; {} solver unknowns; {} ms",
                e.index,
                e.name,
                e.findings.len(),
                st.states_created,
                st.states_completed,
                st.truncations,
                st.steps,
                st.solver_unknowns,
                st.elapsed_ms
            );
            if let Some(err) = &e.error {
                let _ = writeln!(s, "  error: {err}");
            }
            for f in &e.findings {
                let _ = writeln!(
                    s,
                    "  [{}] {} at {} ({:#x}), severity {}, confidence {}",
                    f.id, f.kind, f.location, f.pc, f.severity, f.confidence
                );
                let mut notes = Vec::new();
                if let Some(r) = f.reaches_enclave {
                    notes.push(format!("reaches enclave: {r}"));
                }
                if let Some(v) = f.value_controlled {
                    notes.push(format!("value controlled: {v}"));
                }
                if f.occurrences > 1 {
                    notes.push(format!("{} occurrences", f.occurrences));
                }
                if !notes.is_empty() {
                    let _ = writeln!(s, "      {}", notes.join(", "));
                }
                let _ = writeln!(s, "      provenance: {}", chain_text(&f.provenance));
                if let Some(w) = &f.witness {
                    if !w.args.is_empty() {
                        let _ = writeln!(s, "      witness args: {}", kv_text(&w.args));
                    }
                    if !w.host_memory.is_empty() {
                        let _ = writeln!(s, "      witness host memory: {}", kv_text(&w.host_memory));
                    }
                }
            }
        }
        s
    }
}

fn kv_text(m: &BTreeMap<String, String>) -> String {
    m.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(" ")
}

fn hop_text(h: &ProvenanceHop) -> String {
    match (h.label.as_str(), h.param, h.offset, &h.deref_of, h.elided) {
        (_, _, _, _, Some(n)) => format!("... {n} hops ..."),
        ("ecall-arg", Some(p), Some(o), _, _) => format!("ecall-arg(param {p}, offset {o})"),
        ("deref-of", _, _, Some(a), _) => format!("deref-of({a})"),
        (l, ..) => l.to_string(),
    }
}

fn chain_text(chain: &[ProvenanceHop]) -> String {
    chain.iter().map(hop_text).collect::<Vec<_>>().join(" -> ")
}

/// Detailed digest of one finding: trace, provenance, constraints and
/// witness bytes.
pub fn explain(report: &Report, id: &str) -> Result<String, ReportError> {
    let (e, f) = report.finding(id).ok_or_else(|| ReportError::UnknownId(id.to_string()))?;
    let mut s = String::new();
    let _ = writeln!(s, "Finding {} in ecall {} ({})", f.id, e.index, e.name);
    let _ = writeln!(s, "  kind:       {}", f.kind);
    let _ = writeln!(s, "  location:   {} ({:#x})", f.location, f.pc);
    if let Some(r) = f.related_pc {
        let _ = writeln!(s, "  related pc: {r:#x}");
    }
    let _ = writeln!(s, "  severity:   {}", f.severity);
    let _ = writeln!(s, "  confidence: {}", f.confidence);
    if let Some(r) = f.reaches_enclave {
        let _ = writeln!(s, "  reaches enclave: {r}");
    }
    if let Some(v) = f.value_controlled {
        let _ = writeln!(s, "  value controlled: {v}");
    }
    let _ = writeln!(s, "  occurrences: {}", f.occurrences);
    let _ = writeln!(s, "  expression: {}", f.expr);
    let _ = writeln!(s, "\nTrace ({} steps):", f.trace.len());
    for (i, t) in f.trace.iter().enumerate() {
        let mark = if t.concretized { "  [concretized]" } else { "" };
        let _ = writeln!(s, "  {i:>5}  {:#x}  {}{mark}", t.pc, t.kind);
    }
    let _ = writeln!(s, "\nProvenance:");
    for h in &f.provenance {
        let _ = writeln!(s, "  {}", hop_text(h));
    }
    let _ = writeln!(s, "\nConstraints:");
    if f.constraints.is_empty() {
        let _ = writeln!(s, "  (none)");
    }
    for c in &f.constraints {
        let _ = writeln!(s, "  {c}");
    }
    let _ = writeln!(s, "\nWitness:");
    match &f.witness {
        None => {
            let _ = writeln!(s, "  (none)");
        }
        Some(w) => {
            for (k, v) in &w.args {
                let _ = writeln!(s, "  arg {k}: {v}");
            }
            for (k, v) in &w.host_memory {
                let _ = writeln!(s, "  host {k}: {v}");
            }
            for (k, v) in &w.enclave_memory {
                let _ = writeln!(s, "  enclave {k}: {v}");
            }
            for (i, o) in w.ocalls.iter().enumerate() {
                let _ = writeln!(s, "  ocall {i}: ret {}", o.ret);
            }
            let _ = writeln!(s, "  event: {}", w.event);
        }
    }
    Ok(s)
}
