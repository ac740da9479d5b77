// SPDX-License-Identifier: Apache-2.0

//! A small conflict-driven clause-learning SAT solver.
//!
//! Two watched literals, VSIDS branching with phase saving, first-UIP
//! learning with local minimization and Luby restarts. Assumptions are
//! supported so callers can ask several related questions of one clause
//! database.

pub(crate) type Lit = u32;

pub(crate) fn mk_lit(var: u32, negative: bool) -> Lit {
    (var << 1) | negative as u32
}

fn var_of(l: Lit) -> usize {
    (l >> 1) as usize
}

const UNDEF: i8 = 0;
const TRUE: i8 = 1;
const FALSE: i8 = -1;
const NO_REASON: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum SatResult {
    Sat,
    Unsat,
    Unknown,
}

#[derive(Clone, Copy)]
struct Watch {
    clause: u32,
    blocker: Lit,
}

/// Max-heap of variables keyed by activity.
#[derive(Default)]
struct VarHeap {
    heap: Vec<u32>,
    pos: Vec<i32>,
}

impl VarHeap {
    fn contains(&self, v: u32) -> bool {
        self.pos.get(v as usize).is_some_and(|&p| p >= 0)
    }

    fn grow(&mut self, n: usize) {
        self.pos.resize(n, -1);
    }

    fn insert(&mut self, v: u32, act: &[f64]) {
        if self.contains(v) {
            return;
        }
        self.pos[v as usize] = self.heap.len() as i32;
        self.heap.push(v);
        self.up(self.heap.len() - 1, act);
    }

    fn pop(&mut self, act: &[f64]) -> Option<u32> {
        if self.heap.is_empty() {
            return None;
        }
        let top = self.heap[0];
        let last = self.heap.pop().unwrap();
        self.pos[top as usize] = -1;
        if !self.heap.is_empty() {
            self.heap[0] = last;
            self.pos[last as usize] = 0;
            self.down(0, act);
        }
        Some(top)
    }

    fn bumped(&mut self, v: u32, act: &[f64]) {
        if let Some(&p) = self.pos.get(v as usize) {
            if p >= 0 {
                self.up(p as usize, act);
            }
        }
    }

    fn better(a: u32, b: u32, act: &[f64]) -> bool {
        let (x, y) = (act[a as usize], act[b as usize]);
        x > y || (x == y && a < b)
    }

    fn up(&mut self, mut i: usize, act: &[f64]) {
        let v = self.heap[i];
        while i > 0 {
            let parent = (i - 1) / 2;
            if !Self::better(v, self.heap[parent], act) {
                break;
            }
            self.heap[i] = self.heap[parent];
            self.pos[self.heap[i] as usize] = i as i32;
            i = parent;
        }
        self.heap[i] = v;
        self.pos[v as usize] = i as i32;
    }

    fn down(&mut self, mut i: usize, act: &[f64]) {
        let v = self.heap[i];
        let n = self.heap.len();
        loop {
            let l = 2 * i + 1;
            if l >= n {
                break;
            }
            let r = l + 1;
            let c = if r < n && Self::better(self.heap[r], self.heap[l], act) {
                r
            } else {
                l
            };
            if !Self::better(self.heap[c], v, act) {
                break;
            }
            self.heap[i] = self.heap[c];
            self.pos[self.heap[i] as usize] = i as i32;
            i = c;
        }
        self.heap[i] = v;
        self.pos[v as usize] = i as i32;
    }
}

fn luby(mut x: u64) -> u64 {
    let (mut size, mut seq) = (1u64, 0u32);
    while size < x + 1 {
        seq += 1;
        size = 2 * size + 1;
    }
    while size - 1 != x {
        size = (size - 1) >> 1;
        seq -= 1;
        x %= size;
    }
    1u64 << seq
}

pub(crate) struct Sat {
    clauses: Vec<Vec<Lit>>,
    watches: Vec<Vec<Watch>>,
    vals: Vec<i8>,
    level: Vec<u32>,
    reason: Vec<u32>,
    trail: Vec<Lit>,
    trail_lim: Vec<usize>,
    qhead: usize,
    activity: Vec<f64>,
    var_inc: f64,
    heap: VarHeap,
    polarity: Vec<bool>,
    seen: Vec<bool>,
    ok: bool,
    model: Vec<bool>,
    /// Propagated literals plus decisions; the budget is charged in these.
    pub steps: u64,
    rng: u64,
}

impl Sat {
    pub fn new(seed: u64) -> Self {
        Sat {
            clauses: Vec::new(),
            watches: Vec::new(),
            vals: Vec::new(),
            level: Vec::new(),
            reason: Vec::new(),
            trail: Vec::new(),
            trail_lim: Vec::new(),
            qhead: 0,
            activity: Vec::new(),
            var_inc: 1.0,
            heap: VarHeap::default(),
            polarity: Vec::new(),
            seen: Vec::new(),
            ok: true,
            model: Vec::new(),
            steps: 0,
            rng: seed,
        }
    }

    pub fn num_vars(&self) -> usize {
        self.level.len()
    }

    pub fn new_var(&mut self) -> u32 {
        let v = self.level.len() as u32;
        self.vals.push(UNDEF);
        self.vals.push(UNDEF);
        self.watches.push(Vec::new());
        self.watches.push(Vec::new());
        self.level.push(0);
        self.reason.push(NO_REASON);
        self.activity.push(0.0);
        // Seed 0 keeps the all-false phase, which tends to produce small
        // models. Other seeds pick initial phases pseudo-randomly.
        let phase = if self.rng == 0 {
            true
        } else {
            self.rng ^= self.rng << 13;
            self.rng ^= self.rng >> 7;
            self.rng ^= self.rng << 17;
            self.rng & 1 == 0
        };
        self.polarity.push(phase);
        self.seen.push(false);
        self.heap.grow(self.level.len());
        self.heap.insert(v, &self.activity);
        v
    }

    fn value(&self, l: Lit) -> i8 {
        self.vals[l as usize]
    }

    fn decision_level(&self) -> usize {
        self.trail_lim.len()
    }

    fn enqueue(&mut self, l: Lit, reason: u32) {
        self.vals[l as usize] = TRUE;
        self.vals[(l ^ 1) as usize] = FALSE;
        let v = var_of(l);
        self.level[v] = self.decision_level() as u32;
        self.reason[v] = reason;
        self.trail.push(l);
    }

    /// Add a permanent clause. Returns false once the database is known to be
    /// unsatisfiable.
    pub fn add_clause(&mut self, lits: &[Lit]) -> bool {
        if !self.ok {
            return false;
        }
        self.backtrack(0);
        let mut c: Vec<Lit> = lits.to_vec();
        c.sort_unstable();
        c.dedup();
        let mut out = Vec::with_capacity(c.len());
        for (i, &l) in c.iter().enumerate() {
            if i + 1 < c.len() && c[i + 1] == l ^ 1 {
                return true;
            }
            match self.value(l) {
                TRUE => return true,
                FALSE => {}
                _ => out.push(l),
            }
        }
        match out.len() {
            0 => {
                self.ok = false;
                false
            }
            1 => {
                self.enqueue(out[0], NO_REASON);
                if self.propagate().is_some() {
                    self.ok = false;
                }
                self.ok
            }
            _ => {
                self.attach(out);
                true
            }
        }
    }

    fn attach(&mut self, c: Vec<Lit>) -> u32 {
        let idx = self.clauses.len() as u32;
        self.watches[c[0] as usize].push(Watch {
            clause: idx,
            blocker: c[1],
        });
        self.watches[c[1] as usize].push(Watch {
            clause: idx,
            blocker: c[0],
        });
        self.clauses.push(c);
        idx
    }

    fn propagate(&mut self) -> Option<u32> {
        while self.qhead < self.trail.len() {
            let p = self.trail[self.qhead];
            self.qhead += 1;
            self.steps += 1;
            let false_lit = p ^ 1;
            let mut ws = std::mem::take(&mut self.watches[false_lit as usize]);
            let (mut i, mut j) = (0, 0);
            let mut conflict = None;
            while i < ws.len() {
                let w = ws[i];
                i += 1;
                if self.value(w.blocker) == TRUE {
                    ws[j] = w;
                    j += 1;
                    continue;
                }
                let ci = w.clause as usize;
                if self.clauses[ci][0] == false_lit {
                    self.clauses[ci].swap(0, 1);
                }
                let first = self.clauses[ci][0];
                let nw = Watch {
                    clause: w.clause,
                    blocker: first,
                };
                if first != w.blocker && self.value(first) == TRUE {
                    ws[j] = nw;
                    j += 1;
                    continue;
                }
                let len = self.clauses[ci].len();
                let mut moved = false;
                for k in 2..len {
                    let l = self.clauses[ci][k];
                    if self.value(l) != FALSE {
                        self.clauses[ci].swap(1, k);
                        self.watches[l as usize].push(nw);
                        moved = true;
                        break;
                    }
                }
                if moved {
                    continue;
                }
                ws[j] = nw;
                j += 1;
                if self.value(first) == FALSE {
                    conflict = Some(w.clause);
                    self.qhead = self.trail.len();
                    while i < ws.len() {
                        ws[j] = ws[i];
                        j += 1;
                        i += 1;
                    }
                } else {
                    self.enqueue(first, w.clause);
                }
            }
            ws.truncate(j);
            self.watches[false_lit as usize] = ws;
            if conflict.is_some() {
                return conflict;
            }
        }
        None
    }

    fn bump(&mut self, v: usize) {
        self.activity[v] += self.var_inc;
        if self.activity[v] > 1e100 {
            for a in &mut self.activity {
                *a *= 1e-100;
            }
            self.var_inc *= 1e-100;
        }
        self.heap.bumped(v as u32, &self.activity);
    }

    fn analyze(&mut self, mut confl: u32) -> (Vec<Lit>, usize) {
        let mut learnt: Vec<Lit> = vec![0];
        let mut pathc = 0usize;
        let mut p: Option<Lit> = None;
        let mut idx = self.trail.len();
        let cur = self.decision_level() as u32;
        loop {
            let clause = self.clauses[confl as usize].clone();
            let skip = usize::from(p.is_some());
            for &q in &clause[skip..] {
                let v = var_of(q);
                if !self.seen[v] && self.level[v] > 0 {
                    self.bump(v);
                    self.seen[v] = true;
                    if self.level[v] >= cur {
                        pathc += 1;
                    } else {
                        learnt.push(q);
                    }
                }
            }
            loop {
                idx -= 1;
                if self.seen[var_of(self.trail[idx])] {
                    break;
                }
            }
            let lit = self.trail[idx];
            p = Some(lit);
            self.seen[var_of(lit)] = false;
            pathc -= 1;
            if pathc == 0 {
                break;
            }
            confl = self.reason[var_of(lit)];
        }
        learnt[0] = p.unwrap() ^ 1;

        // Drop literals implied by other literals of the clause.
        let mut keep = vec![learnt[0]];
        for &l in &learnt[1..] {
            let r = self.reason[var_of(l)];
            let redundant = r != NO_REASON
                && self.clauses[r as usize][1..].iter().all(|&q| {
                    let v = var_of(q);
                    self.seen[v] || self.level[v] == 0
                });
            if !redundant {
                keep.push(l);
            }
        }
        for &l in &learnt[1..] {
            self.seen[var_of(l)] = false;
        }
        let mut learnt = keep;

        let bt = if learnt.len() == 1 {
            0
        } else {
            let mut max_i = 1;
            for i in 2..learnt.len() {
                if self.level[var_of(learnt[i])] > self.level[var_of(learnt[max_i])] {
                    max_i = i;
                }
            }
            learnt.swap(1, max_i);
            self.level[var_of(learnt[1])] as usize
        };
        (learnt, bt)
    }

    fn backtrack(&mut self, lvl: usize) {
        if self.decision_level() <= lvl {
            return;
        }
        let start = self.trail_lim[lvl];
        for i in (start..self.trail.len()).rev() {
            let l = self.trail[i];
            let v = var_of(l);
            self.vals[l as usize] = UNDEF;
            self.vals[(l ^ 1) as usize] = UNDEF;
            self.reason[v] = NO_REASON;
            self.polarity[v] = l & 1 == 1;
            self.heap.insert(v as u32, &self.activity);
        }
        self.trail.truncate(start);
        self.trail_lim.truncate(lvl);
        self.qhead = start;
    }

    fn pick_branch(&mut self) -> Option<Lit> {
        while let Some(v) = self.heap.pop(&self.activity) {
            if self.vals[2 * v as usize] == UNDEF {
                return Some(mk_lit(v, self.polarity[v as usize]));
            }
        }
        None
    }

    /// Solve under `assumptions`, charging at most `budget` additional steps.
    pub fn solve(&mut self, assumptions: &[Lit], budget: u64) -> SatResult {
        if !self.ok {
            return SatResult::Unsat;
        }
        self.backtrack(0);
        let limit = self.steps.saturating_add(budget);
        let mut restart = 0u64;
        loop {
            let allowed = luby(restart) * 64;
            restart += 1;
            match self.search(assumptions, allowed, limit) {
                Some(r) => {
                    if r == SatResult::Sat {
                        self.model = (0..self.num_vars())
                            .map(|v| self.vals[2 * v] == TRUE)
                            .collect();
                    }
                    self.backtrack(0);
                    return r;
                }
                None => self.backtrack(0),
            }
        }
    }

    fn search(&mut self, assumptions: &[Lit], allowed: u64, limit: u64) -> Option<SatResult> {
        let mut conflicts = 0u64;
        loop {
            if let Some(confl) = self.propagate() {
                conflicts += 1;
                if self.decision_level() == 0 {
                    self.ok = false;
                    return Some(SatResult::Unsat);
                }
                let (learnt, bt) = self.analyze(confl);
                self.backtrack(bt);
                if learnt.len() == 1 {
                    self.enqueue(learnt[0], NO_REASON);
                } else {
                    let first = learnt[0];
                    let ci = self.attach(learnt);
                    self.enqueue(first, ci);
                }
                self.var_inc /= 0.95;
                continue;
            }
            if self.steps >= limit {
                return Some(SatResult::Unknown);
            }
            if conflicts >= allowed {
                return None;
            }
            let mut next = None;
            while self.decision_level() < assumptions.len() {
                let a = assumptions[self.decision_level()];
                match self.value(a) {
                    TRUE => self.trail_lim.push(self.trail.len()),
                    FALSE => return Some(SatResult::Unsat),
                    _ => {
                        next = Some(a);
                        break;
                    }
                }
            }
            let lit = match next {
                Some(l) => l,
                None => match self.pick_branch() {
                    Some(l) => l,
                    None => return Some(SatResult::Sat),
                },
            };
            self.steps += 1;
            self.trail_lim.push(self.trail.len());
            self.enqueue(lit, NO_REASON);
        }
    }

    /// Value of `l` in the most recent satisfying assignment.
    pub fn model_value(&self, l: Lit) -> bool {
        let v = self.model.get(var_of(l)).copied().unwrap_or(false);
        v != (l & 1 == 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pos(v: u32) -> Lit {
        mk_lit(v, false)
    }
    fn neg(v: u32) -> Lit {
        mk_lit(v, true)
    }

    #[test]
    fn luby_sequence() {
        let s: Vec<u64> = (0..9).map(luby).collect();
        assert_eq!(s, vec![1, 1, 2, 1, 1, 2, 4, 1, 1]);
    }

    #[test]
    fn pigeonhole_three_into_two_is_unsat() {
        let mut s = Sat::new(0);
        // p[i][j]: pigeon i in hole j
        let p: Vec<Vec<u32>> = (0..3).map(|_| (0..2).map(|_| s.new_var()).collect()).collect();
        for row in &p {
            s.add_clause(&[pos(row[0]), pos(row[1])]);
        }
        for j in 0..2 {
            for (a, pa) in p.iter().enumerate() {
                for pb in &p[a + 1..] {
                    s.add_clause(&[neg(pa[j]), neg(pb[j])]);
                }
            }
        }
        assert_eq!(s.solve(&[], u64::MAX), SatResult::Unsat);
    }

    #[test]
    fn assumptions_do_not_poison_the_database() {
        let mut s = Sat::new(0);
        let a = s.new_var();
        let b = s.new_var();
        s.add_clause(&[neg(a), pos(b)]);
        assert_eq!(s.solve(&[pos(a), neg(b)], u64::MAX), SatResult::Unsat);
        assert_eq!(s.solve(&[pos(a)], u64::MAX), SatResult::Sat);
        assert!(s.model_value(pos(b)));
    }

    #[test]
    fn tiny_budget_reports_unknown() {
        let mut s = Sat::new(0);
        let vars: Vec<u32> = (0..40).map(|_| s.new_var()).collect();
        for w in vars.windows(3) {
            s.add_clause(&[pos(w[0]), pos(w[1]), neg(w[2])]);
        }
        assert_eq!(s.solve(&[], 1), SatResult::Unknown);
        assert_eq!(s.solve(&[], u64::MAX), SatResult::Sat);
    }
}
