// SPDX-License-Identifier: Apache-2.0

//! Symbolic memory split into enclave, host and null-page regions.
//!
//! Enclave bytes live in a concrete, byte-addressed store. Bytes that were
//! never written read as data-image constants, as stable `global-state`
//! symbols inside the globals section, or as stable `enclave-alloc` symbols
//! elsewhere. Host memory (anything outside the enclave, including the null
//! page) is attacker controlled: every read yields a fresh symbol and is
//! recorded in the fetch log.

use std::collections::BTreeMap;
use std::sync::Arc;

use thiserror::Error;

use crate::constraints::PathConstraints;
use crate::expr::{eval_or_zero, Expr, Label, Provenance, SymbolFactory};
use crate::loader::{Layout, Section, NULL_PAGE_END};
use crate::solver::{Solver, SolverVerdict, Validity};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegionClass {
    MustEnclave,
    MustHost,
    MustNullPage,
    /// Per-region satisfiability of "the access touches this region".
    MayOverlap {
        enclave: bool,
        host: bool,
        null: bool,
    },
}

impl RegionClass {
    pub fn may_touch_outside(&self) -> bool {
        !matches!(self, RegionClass::MustEnclave)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MemError {
    #[error("allocation size must be positive")]
    ZeroSize,
    #[error("enclave heap exhausted: {requested} bytes requested, {available} available")]
    HeapExhausted { requested: u64, available: u64 },
}

/// A host read, kept for double-fetch detection and witness extraction.
#[derive(Debug, Clone)]
pub struct FetchRecord {
    pub addr: Expr,
    pub width: u8,
    pub pc: u64,
    pub step: u64,
    /// Index of the read within its step.
    pub seq: u32,
    pub value: Expr,
}

/// A store whose address was symbolic.
#[derive(Debug, Clone)]
pub struct WriteRecord {
    pub addr: Expr,
    pub value: Expr,
    pub width: u8,
    pub pc: u64,
    /// Address chosen for the store.
    pub concrete: u64,
}

/// A symbol introduced for never-written enclave bytes starting at `addr`.
#[derive(Debug, Clone)]
pub struct Seed {
    pub addr: u64,
    pub value: Expr,
}

/// Where in the program an access happens.
#[derive(Debug, Clone, Copy, Default)]
pub struct Site {
    pub pc: u64,
    pub step: u64,
    /// Index of the access within its step.
    pub seq: u32,
}

/// Solver and symbol source used by accesses.
#[derive(Clone, Copy)]
pub struct MemCtx<'a> {
    pub factory: &'a SymbolFactory,
    pub solver: &'a Solver,
}

#[derive(Debug, Clone)]
pub struct ReadResult {
    pub value: Expr,
    /// Labels of the value plus `deref-of(addr)`.
    pub provenance: Provenance,
    pub class: RegionClass,
    /// Address picked when a symbolic address was concretized.
    pub concretized: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct WriteResult {
    pub class: RegionClass,
    pub concretized: Option<u64>,
}

/// Bump allocator over `[next, end)` with 8-byte granularity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Bump {
    pub next: u64,
    pub end: u64,
}

impl Bump {
    pub fn new(region: Section) -> Bump {
        Bump {
            next: region.base,
            end: region.end(),
        }
    }

    pub fn alloc(&mut self, size: u64) -> Result<u64, MemError> {
        if size == 0 {
            return Err(MemError::ZeroSize);
        }
        let base = self.next;
        let available = self.end - base;
        match size.checked_add(7).map(|s| s & !7) {
            Some(r) if r <= available => {
                self.next = base + r;
                Ok(base)
            }
            _ => Err(MemError::HeapExhausted {
                requested: size,
                available,
            }),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SymMemory {
    layout: Layout,
    image: Arc<BTreeMap<u64, u8>>,
    store: Arc<BTreeMap<u64, Expr>>,
    heap_next: u64,
    pub seeds: Vec<Seed>,
    pub fetch_log: Vec<FetchRecord>,
    pub write_log: Vec<WriteRecord>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Havoc {
    Global,
    Alloc,
}

impl SymMemory {
    /// Fresh memory. Data images inside the globals section are ignored:
    /// globals start unconstrained.
    pub fn new(layout: Layout, data: &[crate::eir::DataImage]) -> SymMemory {
        let mut image = BTreeMap::new();
        for d in data {
            for (i, b) in d.bytes.iter().enumerate() {
                let a = d.addr + i as u64;
                if !layout.globals.contains(a) {
                    image.insert(a, *b);
                }
            }
        }
        SymMemory {
            layout,
            image: Arc::new(image),
            store: Arc::new(BTreeMap::new()),
            heap_next: layout.heap.base,
            seeds: Vec::new(),
            fetch_log: Vec::new(),
            write_log: Vec::new(),
        }
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    /// Next free heap address.
    pub fn heap_next(&self) -> u64 {
        self.heap_next
    }

    /// Bump-allocate `size` bytes (8-byte aligned) in the heap section.
    pub fn alloc_enclave(&mut self, size: u64) -> Result<u64, MemError> {
        let mut bump = Bump {
            next: self.heap_next,
            end: self.layout.heap.end(),
        };
        let p = bump.alloc(size)?;
        self.heap_next = bump.next;
        Ok(p)
    }

    /// Move the heap cursor, e.g. past buffers placed by argument marshalling.
    pub fn set_heap_next(&mut self, next: u64) {
        assert!(self.layout.heap.contains(next) || next == self.layout.heap.end());
        self.heap_next = next;
    }

    fn in_enclave(&self, addr: u64, len: u64) -> bool {
        self.layout.enclave.contains_range(addr, len)
    }

    /// Store one byte expression at a concrete enclave address.
    pub fn poke(&mut self, addr: u64, byte: Expr) {
        debug_assert_eq!(byte.width(), 8);
        if self.layout.enclave.contains(addr) {
            Arc::make_mut(&mut self.store).insert(addr, byte);
        }
    }

    /// Little-endian store of `value` (a multiple of 8 bits wide) at a
    /// concrete address; bytes outside the enclave are dropped.
    pub fn write_concrete(&mut self, addr: u64, value: &Expr) {
        let n = value.width() / 8;
        for i in 0..n {
            let b = value.extract(8 * i + 7, 8 * i);
            self.poke(addr.wrapping_add(i as u64), b);
        }
    }

    /// Read `width` bytes at a concrete address that lies in the enclave.
    pub fn read_enclave(&mut self, factory: &SymbolFactory, addr: u64, width: u64) -> Expr {
        self.materialize(factory, addr, width, None)
    }

    /// Like [`read_enclave`](Self::read_enclave); bytes havocked here record
    /// `via`, the symbolic address they were reached through, as their source.
    fn materialize(&mut self, factory: &SymbolFactory, addr: u64, width: u64, via: Option<&Expr>) -> Expr {
        let mut missing = Vec::new();
        for i in 0..width {
            let a = addr + i;
            if !self.store.contains_key(&a) && !self.image.contains_key(&a) {
                missing.push(a);
            }
        }
        if !missing.is_empty() {
            let globals = self.layout.globals;
            let kind = |a: u64| {
                if globals.contains(a) {
                    Havoc::Global
                } else {
                    Havoc::Alloc
                }
            };
            let origin = |a: u64| {
                let mut p = havoc_origin(kind(a));
                if let Some(v) = via {
                    p.insert(Label::DerefOf(v.clone()));
                }
                p
            };
            let all_same = missing.len() as u64 == width && missing.iter().all(|a| kind(*a) == kind(addr));
            if all_same {
                let sym = factory.fresh((width * 8) as u32, origin(addr));
                self.seeds.push(Seed {
                    addr,
                    value: sym.clone(),
                });
                self.write_concrete(addr, &sym);
            } else {
                for a in missing {
                    let sym = factory.fresh(8, origin(a));
                    self.seeds.push(Seed {
                        addr: a,
                        value: sym.clone(),
                    });
                    self.poke(a, sym);
                }
            }
        }
        let byte = |a: u64| -> Expr {
            match self.store.get(&a) {
                Some(e) => e.clone(),
                None => Expr::konst(8, self.image[&a] as u64),
            }
        };
        let mut acc = byte(addr);
        for i in 1..width {
            acc = Expr::concat(&byte(addr + i), &acc);
        }
        acc
    }

    fn host_read(&mut self, factory: &SymbolFactory, addr: &Expr, width: u64, at: Site) -> Expr {
        let origin = Provenance::new([Label::HostMemory, Label::DerefOf(addr.clone())]);
        let v = factory.fresh((width * 8) as u32, origin);
        self.fetch_log.push(FetchRecord {
            addr: addr.clone(),
            width: width as u8,
            pc: at.pc,
            step: at.step,
            seq: at.seq,
            value: v.clone(),
        });
        v
    }

    /// Symbolic read of `width` bytes, little-endian.
    pub fn read(
        &mut self,
        ctx: MemCtx<'_>,
        addr: &Expr,
        width: u64,
        path: &mut PathConstraints,
        at: Site,
    ) -> ReadResult {
        assert!(matches!(width, 1 | 2 | 4 | 8), "bad access width {width}");
        let addr = path.resolve(addr);
        let class = classify(&self.layout, &addr, width, path.as_slice(), ctx.solver);
        let mut concretized = None;
        let value = match addr.as_const() {
            Some(a) if self.in_enclave(a, width) => self.read_enclave(ctx.factory, a, width),
            Some(_) => self.host_read(ctx.factory, &addr, width, at),
            None if class == RegionClass::MustEnclave => {
                let a = self.concretize(ctx.solver, &addr, width, path);
                concretized = Some(a);
                self.materialize(ctx.factory, a, width, Some(&addr))
            }
            None => self.host_read(ctx.factory, &addr, width, at),
        };
        let mut provenance = Provenance::of_expr(&value);
        provenance.insert(Label::DerefOf(addr));
        ReadResult {
            value,
            provenance,
            class,
            concretized,
        }
    }

    /// Symbolic store. Symbolic addresses are concretized (preferring free
    /// heap, then globals, then stack) and logged.
    pub fn write(
        &mut self,
        ctx: MemCtx<'_>,
        addr: &Expr,
        value: &Expr,
        width: u64,
        path: &mut PathConstraints,
        at: Site,
    ) -> WriteResult {
        assert!(matches!(width, 1 | 2 | 4 | 8), "bad access width {width}");
        let addr = path.resolve(addr);
        let value = if value.width() as u64 > width * 8 {
            value.extract((width * 8) as u32 - 1, 0)
        } else {
            value.clone()
        };
        let class = classify(&self.layout, &addr, width, path.as_slice(), ctx.solver);
        let (target, concretized) = match addr.as_const() {
            Some(a) => (a, None),
            None => {
                let a = self.concretize(ctx.solver, &addr, width, path);
                self.write_log.push(WriteRecord {
                    addr: addr.clone(),
                    value: value.clone(),
                    width: width as u8,
                    pc: at.pc,
                    concrete: a,
                });
                (a, Some(a))
            }
        };
        self.write_concrete(target, &value);
        WriteResult { class, concretized }
    }

    /// Pick a feasible value for `addr`, add the equality to the path unless
    /// the value is already forced, and return it.
    pub fn concretize(
        &self,
        solver: &Solver,
        addr: &Expr,
        width: u64,
        path: &mut PathConstraints,
    ) -> u64 {
        let free_heap = Section {
            base: self.heap_next,
            size: self.layout.heap.end() - self.heap_next,
        };
        let mut chosen = None;
        for region in [free_heap, self.layout.globals, self.layout.stack] {
            if region.size < width {
                continue;
            }
            let q = within(addr, width, &region);
            if let SolverVerdict::Sat(m) = solver.is_sat(path.as_slice(), &q) {
                chosen = Some(eval_or_zero(&m, addr));
                break;
            }
        }
        let v = match chosen {
            Some(v) => v,
            None => solver
                .minimize(path.as_slice(), addr)
                .ok()
                .flatten()
                .unwrap_or(0),
        };
        if solver.must_hold(path.as_slice(), &addr.eq_const(v)) != Validity::Proved {
            path.push(addr.eq_const(v));
        }
        v
    }

    /// Current enclave store contents (written or materialized bytes).
    pub fn enclave_bytes(&self) -> &BTreeMap<u64, Expr> {
        &self.store
    }
}

fn havoc_origin(kind: Havoc) -> Provenance {
    match kind {
        Havoc::Global => Provenance::single(Label::GlobalState),
        Havoc::Alloc => Provenance::single(Label::EnclaveAlloc),
    }
}

fn k64(v: u64) -> Expr {
    Expr::konst(64, v)
}

/// `[addr, addr+len)` lies inside `region` without wrapping.
pub fn within(addr: &Expr, len: u64, region: &Section) -> Expr {
    if len == 0 || len > region.size {
        return Expr::bool_const(false);
    }
    k64(region.base)
        .ule(addr)
        .and(&addr.ule(&k64(region.end() - len)))
}

/// `[addr, addr+len)` (modulo 2^64) shares a byte with `[lo, hi]`.
fn touches(addr: &Expr, len: u64, lo: u64, hi: u64) -> Expr {
    let last = addr.add_const(len - 1);
    let wraps = last.ult(addr);
    let a = addr.ule(&k64(hi));
    let b = k64(lo).ule(&last);
    a.and(&b).or(&wraps.and(&a.or(&b)))
}

/// Byte intervals (inclusive) of the three regions.
fn region_intervals(layout: &Layout) -> [Vec<(u64, u64)>; 3] {
    let eb = layout.enclave.base;
    let ee = layout.enclave.end();
    let mut host = Vec::new();
    if eb > NULL_PAGE_END {
        host.push((NULL_PAGE_END, eb - 1));
    }
    host.push((ee, u64::MAX));
    [vec![(eb, ee - 1)], host, vec![(0, NULL_PAGE_END - 1)]]
}

/// Formulas for "the access touches the enclave / host / null page".
pub fn region_formulas(layout: &Layout, addr: &Expr, len: u64) -> [Expr; 3] {
    region_intervals(layout).map(|ivs| Expr::any(ivs.iter().map(|(lo, hi)| touches(addr, len, *lo, *hi))))
}

fn touches_concrete(addr: u64, len: u64, lo: u64, hi: u64) -> bool {
    let end = addr as u128 + len as u128; // exclusive
    let first = [(addr as u128, end.min(1u128 << 64))];
    let second = if end > 1u128 << 64 {
        Some((0u128, end - (1u128 << 64)))
    } else {
        None
    };
    first
        .iter()
        .chain(second.iter())
        .any(|(s, e)| *s <= hi as u128 && (lo as u128) < *e)
}

fn class_from_flags(enclave: bool, host: bool, null: bool) -> RegionClass {
    match (enclave, host, null) {
        (true, false, false) => RegionClass::MustEnclave,
        (false, true, false) => RegionClass::MustHost,
        (false, false, true) => RegionClass::MustNullPage,
        _ => RegionClass::MayOverlap {
            enclave,
            host,
            null,
        },
    }
}

/// Decide which regions `[addr, addr+len)` may touch.
pub fn classify(
    layout: &Layout,
    addr: &Expr,
    len: u64,
    constraints: &[Expr],
    solver: &Solver,
) -> RegionClass {
    assert!(len >= 1, "classify needs a non-empty range");
    if let Some(a) = addr.as_const() {
        let [e, h, n] = region_intervals(layout)
            .map(|ivs| ivs.iter().any(|(lo, hi)| touches_concrete(a, len, *lo, *hi)));
        return class_from_flags(e, h, n);
    }
    let mut flags = [false; 3];
    for (i, f) in region_formulas(layout, addr, len).iter().enumerate() {
        match solver.is_sat(constraints, f) {
            SolverVerdict::Sat(_) => flags[i] = true,
            SolverVerdict::Unsat => {}
            SolverVerdict::Unknown(_) => {
                return RegionClass::MayOverlap {
                    enclave: true,
                    host: true,
                    null: true,
                }
            }
        }
    }
    class_from_flags(flags[0], flags[1], flags[2])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layout() -> Layout {
        Layout::default_for(0x10_0000, 0x4_0000)
    }

    fn ctx<'a>(f: &'a SymbolFactory, s: &'a Solver) -> MemCtx<'a> {
        MemCtx { factory: f, solver: s }
    }

    #[test]
    fn classify_examples() {
        let l = layout();
        let s = Solver::default();
        assert_eq!(classify(&l, &k64(0x10_0008), 8, &[], &s), RegionClass::MustEnclave);
        assert_eq!(classify(&l, &k64(0x20), 4, &[], &s), RegionClass::MustNullPage);
        assert_eq!(classify(&l, &k64(0x2000), 8, &[], &s), RegionClass::MustHost);
        assert_eq!(
            classify(&l, &k64(0x10_0000 - 0x10), 0x18, &[], &s),
            RegionClass::MayOverlap {
                enclave: true,
                host: true,
                null: false
            }
        );
        let f = SymbolFactory::new();
        let p = f.fresh(64, Provenance::default());
        assert_eq!(
            classify(&l, &p, 8, &[], &s),
            RegionClass::MayOverlap {
                enclave: true,
                host: true,
                null: true
            }
        );
        let inside = within(&p, 8, &l.heap);
        assert_eq!(classify(&l, &p, 8, &[inside], &s), RegionClass::MustEnclave);
    }

    #[test]
    fn read_after_write_and_stable_globals() {
        let l = layout();
        let f = SymbolFactory::new();
        let s = Solver::default();
        let mut m = SymMemory::new(l, &[]);
        let mut path = PathConstraints::new();
        let g = k64(l.globals.base + 16);
        let r1 = m.read(ctx(&f, &s), &g, 8, &mut path, Site::default());
        let r2 = m.read(ctx(&f, &s), &g, 8, &mut path, Site::default());
        assert_eq!(r1.value, r2.value);
        assert!(r1.value.as_symbol().unwrap().origin.contains(&Label::GlobalState));
        m.write(ctx(&f, &s), &g, &k64(0x1122_3344_5566_7788), 8, &mut path, Site::default());
        let r3 = m.read(ctx(&f, &s), &g.add_const(2), 2, &mut path, Site::default());
        assert_eq!(r3.value.as_const(), Some(0x5566));
    }

    #[test]
    fn host_reads_are_fresh_and_logged() {
        let l = layout();
        let f = SymbolFactory::new();
        let s = Solver::default();
        let mut m = SymMemory::new(l, &[]);
        let mut path = PathConstraints::new();
        let p = f.fresh(64, Provenance::single(Label::EcallArg { param: 0, offset: 0 }));
        let a = m.read(ctx(&f, &s), &p, 8, &mut path, Site { pc: 1, step: 0, seq: 0 });
        let b = m.read(ctx(&f, &s), &p, 8, &mut path, Site { pc: 2, step: 1, seq: 0 });
        assert_ne!(a.value, b.value);
        assert!(a.provenance.contains(&Label::HostMemory));
        assert!(a.provenance.contains(&Label::DerefOf(p.clone())));
        assert_eq!(m.fetch_log.len(), 2);
        assert_eq!(m.fetch_log[0].addr, m.fetch_log[1].addr);
        assert!(path.is_empty());
    }

    #[test]
    fn data_images_outside_globals_are_concrete() {
        let l = layout();
        let f = SymbolFactory::new();
        let s = Solver::default();
        let data = [crate::eir::DataImage {
            addr: 0x10_8000,
            bytes: vec![0xaa, 0xbb],
        }];
        let mut m = SymMemory::new(l, &data);
        let mut path = PathConstraints::new();
        let r = m.read(ctx(&f, &s), &k64(0x10_8000), 2, &mut path, Site::default());
        assert_eq!(r.value.as_const(), Some(0xbbaa));
        assert!(r.provenance.contains(&Label::Constant));
        assert!(r.provenance.has_kind("deref-of"));
    }

    #[test]
    fn host_write_leaves_enclave_untouched() {
        let l = layout();
        let f = SymbolFactory::new();
        let s = Solver::default();
        let mut m = SymMemory::new(l, &[]);
        let mut path = PathConstraints::new();
        let w = m.write(ctx(&f, &s), &k64(0x2000), &k64(5), 8, &mut path, Site::default());
        assert_eq!(w.class, RegionClass::MustHost);
        assert!(m.enclave_bytes().is_empty());
    }

    #[test]
    fn symbolic_write_is_concretized_into_free_heap() {
        let l = layout();
        let f = SymbolFactory::new();
        let s = Solver::default();
        let mut m = SymMemory::new(l, &[]);
        let mut path = PathConstraints::new();
        let p = f.fresh(64, Provenance::single(Label::EcallArg { param: 0, offset: 0 }));
        let w = m.write(ctx(&f, &s), &p, &k64(7), 8, &mut path, Site::default());
        let a = w.concretized.unwrap();
        assert!(l.heap.contains_range(a, 8));
        assert_eq!(path.len(), 1);
        let r = m.read(ctx(&f, &s), &p, 8, &mut path, Site::default());
        assert_eq!(r.value.as_const(), Some(7));
    }

    #[test]
    fn bump_allocation() {
        let l = layout();
        let mut m = SymMemory::new(l, &[]);
        let a = m.alloc_enclave(0x20).unwrap();
        let b = m.alloc_enclave(0x20).unwrap();
        assert_eq!(a, l.heap.base);
        assert!(b >= a + 0x20 && l.heap.contains_range(b, 0x20));
        assert!(matches!(
            SymMemory::new(l, &[]).alloc_enclave(l.heap.size + 1),
            Err(MemError::HeapExhausted { .. })
        ));
    }
}
