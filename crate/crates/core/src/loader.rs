// SPDX-License-Identifier: Apache-2.0

//! Enclave packages: a directory holding `manifest.json` (layout, ECALL
//! table, hook bindings) and `enclave.eir` (the program).

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eir::{self, AsmError, Program, Reg, SymbolKind};

/// First address above the null page.
pub const NULL_PAGE_END: u64 = 0x1000;
/// Default upper bound for sizes taken from a value parameter.
pub const DEFAULT_MAX_SIZE: u64 = 4096;

pub const DEFAULT_CODE_SIZE: u64 = 0x1_0000;
pub const DEFAULT_GLOBALS_SIZE: u64 = 0x1000;
pub const DEFAULT_HEAP_SIZE: u64 = 0x1_0000;
pub const DEFAULT_STACK_SIZE: u64 = 0x1_0000;

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("manifest parse error: {0}")]
    Manifest(String),
    #[error("assembly error in enclave.eir: {0}")]
    Asm(#[from] AsmError),
    #[error("invalid layout: {0}")]
    Layout(String),
    #[error("ecall '{ecall}': entry symbol not found: '{entry}'")]
    MissingEntry { ecall: String, entry: String },
    #[error("invalid ECALL table: {0}")]
    EcallTable(String),
    #[error("ecall '{ecall}', parameter '{param}': {msg}")]
    Param {
        ecall: String,
        param: String,
        msg: String,
    },
    #[error("hook binding: {0}")]
    Hook(String),
    #[error("expected findings: {0}")]
    Expected(String),
}

/// A half-open address range `[base, base + size)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Section {
    pub base: u64,
    pub size: u64,
}

impl Section {
    pub fn end(&self) -> u64 {
        self.base + self.size
    }
    pub fn contains(&self, addr: u64) -> bool {
        addr >= self.base && addr < self.end()
    }
    pub fn contains_range(&self, addr: u64, len: u64) -> bool {
        addr >= self.base && addr.checked_add(len).is_some_and(|e| e <= self.end())
    }
    fn overlaps(&self, o: &Section) -> bool {
        self.base < o.end() && o.base < self.end()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub enclave: Section,
    pub code: Section,
    pub globals: Section,
    pub heap: Section,
    pub stack: Section,
}

impl Layout {
    /// Default layout: code at the base, then globals and heap, with the
    /// stack at the top of the enclave range.
    pub fn default_for(base: u64, size: u64) -> Layout {
        let code = Section {
            base,
            size: DEFAULT_CODE_SIZE,
        };
        let globals = Section {
            base: code.end(),
            size: DEFAULT_GLOBALS_SIZE,
        };
        let heap = Section {
            base: globals.end(),
            size: DEFAULT_HEAP_SIZE,
        };
        let stack = Section {
            base: (base + size).saturating_sub(DEFAULT_STACK_SIZE),
            size: DEFAULT_STACK_SIZE,
        };
        Layout {
            enclave: Section { base, size },
            code,
            globals,
            heap,
            stack,
        }
    }
}

/// How an ECALL parameter crosses the boundary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParamKind {
    /// Scalar of `width` bits.
    Value { width: u32 },
    /// Copied into a fresh enclave buffer.
    PtrIn(BufSize),
    /// Fresh zeroed enclave buffer.
    PtrOut(BufSize),
    PtrInOut(BufSize),
    /// Raw pointer passed through unchecked.
    UserCheck,
}

impl ParamKind {
    pub fn name(&self) -> &'static str {
        match self {
            ParamKind::Value { .. } => "value",
            ParamKind::PtrIn(_) => "ptr_in",
            ParamKind::PtrOut(_) => "ptr_out",
            ParamKind::PtrInOut(_) => "ptr_inout",
            ParamKind::UserCheck => "user_check",
        }
    }

    pub fn buffer_size(&self) -> Option<&BufSize> {
        match self {
            ParamKind::PtrIn(s) | ParamKind::PtrOut(s) | ParamKind::PtrInOut(s) => Some(s),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BufSize {
    Const(u64),
    /// Taken from value parameter `index`, capped at `max`.
    Param { index: usize, max: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub kind: ParamKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ECallSpec {
    pub index: u32,
    pub name: String,
    pub entry: String,
    pub entry_addr: u64,
    pub params: Vec<ParamSpec>,
}

/// Builtin hook identifiers accepted in manifests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BuiltinHook {
    IsWithinEnclave,
    IsOutsideEnclave,
    Memcpy,
    Memset,
    Malloc,
    Free,
    Ocall,
}

impl BuiltinHook {
    pub const ALL: [BuiltinHook; 7] = [
        BuiltinHook::IsWithinEnclave,
        BuiltinHook::IsOutsideEnclave,
        BuiltinHook::Memcpy,
        BuiltinHook::Memset,
        BuiltinHook::Malloc,
        BuiltinHook::Free,
        BuiltinHook::Ocall,
    ];

    pub fn id(self) -> &'static str {
        match self {
            BuiltinHook::IsWithinEnclave => "sgx_is_within_enclave",
            BuiltinHook::IsOutsideEnclave => "sgx_is_outside_enclave",
            BuiltinHook::Memcpy => "memcpy",
            BuiltinHook::Memset => "memset",
            BuiltinHook::Malloc => "malloc",
            BuiltinHook::Free => "free",
            BuiltinHook::Ocall => "ocall",
        }
    }

    pub fn from_id(id: &str) -> Option<BuiltinHook> {
        BuiltinHook::ALL.into_iter().find(|h| h.id() == id)
    }
}

/// Manifest binding of a bodiless symbol to a builtin hook.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HookBinding {
    pub builtin: BuiltinHook,
    /// For `ocall`: registers holding an out-buffer pointer and its size.
    pub out_buffer: Option<(Reg, Reg)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpectedFinding {
    pub ecall: String,
    pub kind: String,
    /// Code label of the reporting instruction.
    pub pc: String,
    pub severity: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpectedFindings {
    /// No high-severity findings beyond the list are allowed.
    #[serde(default = "yes")]
    pub exhaustive: bool,
    pub findings: Vec<ExpectedFinding>,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EnclavePackage {
    pub name: String,
    pub layout: Layout,
    pub program: Program,
    pub ecalls: Vec<ECallSpec>,
    pub hooks: BTreeMap<String, HookBinding>,
    pub expected: Option<ExpectedFindings>,
    /// Non-fatal observations made while loading.
    pub warnings: Vec<String>,
}

impl EnclavePackage {
    pub fn ecall(&self, key: &str) -> Option<&ECallSpec> {
        self.ecalls
            .iter()
            .find(|e| e.name == key || e.index.to_string() == key)
    }
}

// Manifest file format.

#[derive(Deserialize)]
#[serde(untagged)]
enum Num {
    Int(u64),
    Text(String),
}

impl Num {
    fn get(&self, what: &str) -> Result<u64, LoadError> {
        match self {
            Num::Int(v) => Ok(*v),
            Num::Text(s) => eir_number(s)
                .ok_or_else(|| LoadError::Manifest(format!("{what}: bad number '{s}'"))),
        }
    }
}

fn eir_number(s: &str) -> Option<u64> {
    let s = s.trim();
    if let Some(h) = s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        u64::from_str_radix(h, 16).ok()
    } else {
        s.parse().ok()
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SectionFile {
    base: Num,
    size: Num,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct SectionsFile {
    code: Option<SectionFile>,
    globals: Option<SectionFile>,
    heap: Option<SectionFile>,
    stack: Option<SectionFile>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamFile {
    name: String,
    kind: String,
    width: Option<u32>,
    size: Option<Num>,
    size_param: Option<String>,
    max_size: Option<u64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EcallFile {
    index: u32,
    name: String,
    entry: String,
    #[serde(default)]
    params: Vec<ParamFile>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum HookFile {
    Id(String),
    Detailed {
        builtin: String,
        param_reg: Option<Reg>,
        size_reg: Option<Reg>,
    },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestFile {
    name: String,
    enclave_base: Num,
    enclave_size: Num,
    #[serde(default)]
    sections: Option<SectionsFile>,
    #[serde(default)]
    ecalls: Vec<EcallFile>,
    #[serde(default)]
    hooks: BTreeMap<String, HookFile>,
    #[serde(default)]
    expected_findings: Option<Vec<ExpectedFinding>>,
}

/// Load and validate the package in directory `path`.
pub fn load_package(path: impl AsRef<Path>) -> Result<EnclavePackage, LoadError> {
    let dir = path.as_ref();
    let read = |name: &str| {
        let p = dir.join(name);
        fs::read_to_string(&p).map_err(|source| LoadError::Io { path: p, source })
    };
    let manifest = read("manifest.json")?;
    let source = read("enclave.eir")?;
    let expected = match fs::read_to_string(dir.join("expected.json")) {
        Ok(text) => Some(
            serde_json::from_str::<ExpectedFindings>(&text)
                .map_err(|e| LoadError::Expected(e.to_string()))?,
        ),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
        Err(source) => {
            return Err(LoadError::Io {
                path: dir.join("expected.json"),
                source,
            })
        }
    };
    load_from_parts(&manifest, &source, expected)
}

/// Build a package from manifest text, assembly text and optional expected
/// findings (which override `expected_findings` in the manifest).
pub fn load_from_parts(
    manifest: &str,
    source: &str,
    expected: Option<ExpectedFindings>,
) -> Result<EnclavePackage, LoadError> {
    let m: ManifestFile =
        serde_json::from_str(manifest).map_err(|e| LoadError::Manifest(e.to_string()))?;
    let base = m.enclave_base.get("enclave_base")?;
    let size = m.enclave_size.get("enclave_size")?;
    let layout = build_layout(base, size, m.sections.unwrap_or_default())?;

    let program = eir::assemble_at(source, layout.code.base)?;
    check_program_placement(&program, &layout)?;

    let mut warnings = Vec::new();
    let ecalls = build_ecalls(&program, m.ecalls)?;
    if ecalls.is_empty() {
        warnings.push("package declares no ECALLs".to_string());
    }

    let hooks = build_hooks(&program, m.hooks)?;

    let expected = expected.or_else(|| {
        m.expected_findings.map(|findings| ExpectedFindings {
            exhaustive: true,
            findings,
        })
    });
    if let Some(exp) = &expected {
        for f in &exp.findings {
            if !program.labels.contains_key(&f.pc) {
                return Err(LoadError::Expected(format!("label '{}' not found", f.pc)));
            }
            if !ecalls.iter().any(|e| e.name == f.ecall) {
                return Err(LoadError::Expected(format!("unknown ECALL '{}'", f.ecall)));
            }
        }
    }

    Ok(EnclavePackage {
        name: m.name,
        layout,
        program,
        ecalls,
        hooks,
        expected,
        warnings,
    })
}

fn build_layout(base: u64, size: u64, s: SectionsFile) -> Result<Layout, LoadError> {
    if base < NULL_PAGE_END {
        return Err(LoadError::Layout(format!(
            "enclave_base {base:#x} lies in the null page (must be >= {NULL_PAGE_END:#x})"
        )));
    }
    if size == 0 || base.checked_add(size).is_none() {
        return Err(LoadError::Layout(format!("bad enclave_size {size:#x}")));
    }
    let def = Layout::default_for(base, size);
    let pick = |f: Option<SectionFile>, d: Section, what: &str| -> Result<Section, LoadError> {
        match f {
            Some(f) => Ok(Section {
                base: f.base.get(what)?,
                size: f.size.get(what)?,
            }),
            None => Ok(d),
        }
    };
    let layout = Layout {
        enclave: def.enclave,
        code: pick(s.code, def.code, "code")?,
        globals: pick(s.globals, def.globals, "globals")?,
        heap: pick(s.heap, def.heap, "heap")?,
        stack: pick(s.stack, def.stack, "stack")?,
    };
    let named = [
        ("code", layout.code),
        ("globals", layout.globals),
        ("heap", layout.heap),
        ("stack", layout.stack),
    ];
    for (n, sec) in &named {
        if sec.size == 0 {
            return Err(LoadError::Layout(format!("section {n} is empty")));
        }
        if !layout.enclave.contains_range(sec.base, sec.size) {
            return Err(LoadError::Layout(format!(
                "section {n} [{:#x}, {:#x}) lies outside the enclave range [{:#x}, {:#x})",
                sec.base,
                sec.base.saturating_add(sec.size),
                layout.enclave.base,
                layout.enclave.end()
            )));
        }
    }
    for i in 0..named.len() {
        for j in i + 1..named.len() {
            if named[i].1.overlaps(&named[j].1) {
                return Err(LoadError::Layout(format!(
                    "sections {} and {} overlap",
                    named[i].0, named[j].0
                )));
            }
        }
    }
    Ok(layout)
}

fn check_program_placement(p: &Program, layout: &Layout) -> Result<(), LoadError> {
    let extern_end = p.code_end() + p.externs.len() as u64;
    if !layout.code.contains_range(p.code_base, extern_end - p.code_base) {
        return Err(LoadError::Layout(format!(
            "program code [{:#x}, {extern_end:#x}) does not fit the code section",
            p.code_base
        )));
    }
    for d in &p.data {
        if !layout.enclave.contains_range(d.addr, d.bytes.len() as u64) {
            return Err(LoadError::Layout(format!(
                "data image at {:#x} lies outside the enclave",
                d.addr
            )));
        }
    }
    for (n, g) in &p.globals {
        if !layout.enclave.contains_range(g.addr, g.size) {
            return Err(LoadError::Layout(format!(
                "global '{n}' at {:#x} lies outside the enclave",
                g.addr
            )));
        }
    }
    Ok(())
}

fn build_ecalls(p: &Program, files: Vec<EcallFile>) -> Result<Vec<ECallSpec>, LoadError> {
    let mut out = Vec::new();
    let mut seen_idx = BTreeSet::new();
    let mut seen_name = BTreeSet::new();
    for f in files {
        if !seen_idx.insert(f.index) {
            return Err(LoadError::EcallTable(format!("duplicate index {}", f.index)));
        }
        if !seen_name.insert(f.name.clone()) {
            return Err(LoadError::EcallTable(format!("duplicate name '{}'", f.name)));
        }
        let entry_addr = match p.symbol(&f.entry) {
            Some((a, SymbolKind::Code)) => a,
            _ => {
                return Err(LoadError::MissingEntry {
                    ecall: f.name,
                    entry: f.entry,
                })
            }
        };
        let names: Vec<String> = f.params.iter().map(|q| q.name.clone()).collect();
        let mut params = Vec::new();
        for (i, q) in f.params.iter().enumerate() {
            let perr = |msg: String| LoadError::Param {
                ecall: f.name.clone(),
                param: q.name.clone(),
                msg,
            };
            if names[..i].contains(&q.name) {
                return Err(perr("duplicate parameter name".into()));
            }
            let size = || -> Result<BufSize, LoadError> {
                match (&q.size, &q.size_param) {
                    (Some(s), None) => {
                        let v = s.get("size")?;
                        if v == 0 {
                            return Err(perr("size must be positive".into()));
                        }
                        Ok(BufSize::Const(v))
                    }
                    (None, Some(sp)) => {
                        let idx = names
                            .iter()
                            .position(|n| n == sp)
                            .ok_or_else(|| perr(format!("size_param '{sp}' is not a parameter")))?;
                        if f.params[idx].kind != "value" {
                            return Err(perr(format!("size_param '{sp}' is not a value parameter")));
                        }
                        let max = q.max_size.unwrap_or(DEFAULT_MAX_SIZE);
                        if max == 0 {
                            return Err(perr("max_size must be positive".into()));
                        }
                        Ok(BufSize::Param { index: idx, max })
                    }
                    (Some(_), Some(_)) => Err(perr("give either size or size_param, not both".into())),
                    (None, None) => Err(perr("buffer parameter needs size or size_param".into())),
                }
            };
            let kind = match q.kind.as_str() {
                "value" => {
                    let width = q.width.unwrap_or(64);
                    if !matches!(width, 8 | 16 | 32 | 64) {
                        return Err(perr(format!("value width {width} not in {{8,16,32,64}}")));
                    }
                    ParamKind::Value { width }
                }
                "ptr_in" => ParamKind::PtrIn(size()?),
                "ptr_out" => ParamKind::PtrOut(size()?),
                "ptr_inout" => ParamKind::PtrInOut(size()?),
                "user_check" => ParamKind::UserCheck,
                other => return Err(perr(format!("unknown parameter kind '{other}'"))),
            };
            params.push(ParamSpec {
                name: q.name.clone(),
                kind,
            });
        }
        out.push(ECallSpec {
            index: f.index,
            name: f.name,
            entry: f.entry,
            entry_addr,
            params,
        });
    }
    out.sort_by_key(|e| e.index);
    for (i, e) in out.iter().enumerate() {
        if e.index as usize != i {
            return Err(LoadError::EcallTable(format!(
                "indices must be dense from 0; missing {i}"
            )));
        }
    }
    Ok(out)
}

fn build_hooks(
    p: &Program,
    files: BTreeMap<String, HookFile>,
) -> Result<BTreeMap<String, HookBinding>, LoadError> {
    let mut out = BTreeMap::new();
    for (sym, h) in files {
        if p.extern_addr(&sym).is_none() {
            return Err(LoadError::Hook(format!(
                "'{sym}' is not a bodiless symbol of the program"
            )));
        }
        let (id, param_reg, size_reg) = match h {
            HookFile::Id(id) => (id, None, None),
            HookFile::Detailed {
                builtin,
                param_reg,
                size_reg,
            } => (builtin, param_reg, size_reg),
        };
        let builtin = BuiltinHook::from_id(&id)
            .ok_or_else(|| LoadError::Hook(format!("unknown builtin hook id '{id}' for '{sym}'")))?;
        let out_buffer = match (param_reg, size_reg) {
            (None, None) => None,
            (Some(a), Some(b)) if builtin == BuiltinHook::Ocall => {
                if a as usize >= eir::NUM_REGS || b as usize >= eir::NUM_REGS {
                    return Err(LoadError::Hook(format!("'{sym}': register out of range")));
                }
                Some((a, b))
            }
            _ => {
                return Err(LoadError::Hook(format!(
                    "'{sym}': out-buffer metadata needs both param_reg and size_reg and only applies to ocall"
                )))
            }
        };
        out.insert(sym, HookBinding {
            builtin,
            out_buffer,
        });
    }
    for e in &p.externs {
        if !out.contains_key(e) {
            return Err(LoadError::Hook(format!("bodiless symbol '{e}' has no hook binding")));
        }
    }
    Ok(out)
}

/// ECALLs ordered by index.
pub fn ecall_table(pkg: &EnclavePackage) -> &[ECallSpec] {
    &pkg.ecalls
}

#[cfg(test)]
mod tests {
    use super::*;

    const SRC: &str = ".entry e\ne: const r0, 1\nret\n";

    fn manifest(base: &str, entry: &str) -> String {
        format!(
            r#"{{"name":"t","enclave_base":"{base}","enclave_size":"0x40000",
               "ecalls":[{{"index":0,"name":"e","entry":"{entry}","params":[]}}]}}"#
        )
    }

    #[test]
    fn default_layout_is_disjoint_and_inside() {
        let p = load_from_parts(&manifest("0x100000", "e"), SRC, None).unwrap();
        let l = p.layout;
        assert_eq!(l.code.base, 0x100000);
        assert_eq!(l.globals.base, 0x110000);
        assert_eq!(l.heap.base, 0x111000);
        assert_eq!(l.stack.end(), 0x140000);
        assert_eq!(p.ecalls[0].entry_addr, 0x100000);
    }

    #[test]
    fn dangling_entry_is_rejected() {
        let e = load_from_parts(&manifest("0x100000", "nonexistent"), SRC, None).unwrap_err();
        assert!(e.to_string().contains("entry symbol not found"), "{e}");
    }

    #[test]
    fn null_page_base_is_rejected() {
        let e = load_from_parts(&manifest("0x0", "e"), SRC, None).unwrap_err();
        assert!(matches!(e, LoadError::Layout(_)), "{e}");
    }

    #[test]
    fn zero_ecalls_warns() {
        let m = r#"{"name":"t","enclave_base":"0x100000","enclave_size":"0x40000"}"#;
        let p = load_from_parts(m, SRC, None).unwrap();
        assert!(p.ecalls.is_empty());
        assert_eq!(p.warnings.len(), 1);
    }

    #[test]
    fn unknown_builtin_is_rejected() {
        let m = r#"{"name":"t","enclave_base":"0x100000","enclave_size":"0x40000",
                   "hooks":{"f":"teleport"}}"#;
        let e = load_from_parts(m, "intrinsic f\n", None).unwrap_err();
        assert!(e.to_string().contains("unknown builtin hook id"), "{e}");
    }

    #[test]
    fn unbound_intrinsic_is_rejected() {
        let m = r#"{"name":"t","enclave_base":"0x100000","enclave_size":"0x40000"}"#;
        assert!(load_from_parts(m, "intrinsic f\n", None).is_err());
    }
}
