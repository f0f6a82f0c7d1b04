//! The shared finite-automaton structure and its algebra.
//!
//! An [`Automaton`] is an epsilon-free NFA (deterministic as a special case)
//! over a dense symbol alphabet tagged as bytes or token ids. All algorithms
//! that can grow the state set take an explicit state cap and fail with
//! [`AutomatonError::StateCapExceeded`] instead of truncating.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Write as _;

use num_bigint::BigUint;
use num_traits::{One, Zero};
use thiserror::Error;

pub type StateId = u32;
pub type Symbol = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AlphabetTag {
    Byte,
    Token,
}

impl std::fmt::Display for AlphabetTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AlphabetTag::Byte => write!(f, "BYTE"),
            AlphabetTag::Token => write!(f, "TOKEN"),
        }
    }
}

#[derive(Debug, Error)]
pub enum AutomatonError {
    #[error("state cap exceeded ({cap} states)")]
    StateCapExceeded { cap: usize },
    #[error("alphabet mismatch: {left} vs {right}")]
    AlphabetMismatch { left: AlphabetTag, right: AlphabetTag },
    #[error("operation requires a deterministic automaton")]
    NotDeterministic,
    #[error("malformed automaton dump at line {line}: {reason}")]
    MalformedDump { line: usize, reason: String },
}

/// Epsilon-free finite automaton. Edges are kept sorted by `(symbol, target)`
/// per state so iteration order is deterministic and lookups can binary
/// search.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Automaton {
    tag: AlphabetTag,
    edges: Vec<Vec<(Symbol, StateId)>>,
    initial: StateId,
    finals: Vec<bool>,
}

impl Automaton {
    /// Single-state automaton accepting the empty language.
    pub fn empty(tag: AlphabetTag) -> Self {
        Automaton {
            tag,
            edges: vec![vec![]],
            initial: 0,
            finals: vec![false],
        }
    }

    /// Single-state automaton accepting exactly the empty string.
    pub fn epsilon(tag: AlphabetTag) -> Self {
        Automaton {
            tag,
            edges: vec![vec![]],
            initial: 0,
            finals: vec![true],
        }
    }

    /// Deterministic trie over the given strings (duplicates collapse).
    pub fn from_strings<I, S>(tag: AlphabetTag, strings: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[Symbol]>,
    {
        let mut edges: Vec<Vec<(Symbol, StateId)>> = vec![vec![]];
        let mut finals = vec![false];
        for s in strings {
            let mut at: StateId = 0;
            for &sym in s.as_ref() {
                match edges[at as usize].binary_search_by_key(&sym, |e| e.0) {
                    Ok(i) => at = edges[at as usize][i].1,
                    Err(i) => {
                        let next = edges.len() as StateId;
                        edges.push(vec![]);
                        finals.push(false);
                        edges[at as usize].insert(i, (sym, next));
                        at = next;
                    }
                }
            }
            finals[at as usize] = true;
        }
        Automaton {
            tag,
            edges,
            initial: 0,
            finals,
        }
    }

    pub fn tag(&self) -> AlphabetTag {
        self.tag
    }

    pub fn num_states(&self) -> usize {
        self.edges.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.iter().map(Vec::len).sum()
    }

    pub fn initial(&self) -> StateId {
        self.initial
    }

    pub fn is_final(&self, q: StateId) -> bool {
        self.finals[q as usize]
    }

    pub fn final_states(&self) -> impl Iterator<Item = StateId> + '_ {
        self.finals
            .iter()
            .enumerate()
            .filter(|(_, &f)| f)
            .map(|(q, _)| q as StateId)
    }

    pub fn edges_from(&self, q: StateId) -> &[(Symbol, StateId)] {
        &self.edges[q as usize]
    }

    /// Deterministic transition. Returns `None` when no edge matches; callers
    /// must only rely on this for deterministic automata.
    pub fn step(&self, q: StateId, sym: Symbol) -> Option<StateId> {
        let row = &self.edges[q as usize];
        row.binary_search_by_key(&sym, |e| e.0)
            .ok()
            .map(|i| row[i].1)
    }

    /// All targets reachable from `q` on `sym` (NFA-safe).
    pub fn step_all(&self, q: StateId, sym: Symbol) -> impl Iterator<Item = StateId> + '_ {
        let row = &self.edges[q as usize];
        let start = row.partition_point(|e| e.0 < sym);
        row[start..]
            .iter()
            .take_while(move |e| e.0 == sym)
            .map(|e| e.1)
    }

    pub fn is_deterministic(&self) -> bool {
        self.edges
            .iter()
            .all(|row| row.windows(2).all(|w| w[0].0 != w[1].0))
    }

    /// Membership test; works on NFAs by tracking the reachable state set.
    pub fn accepts(&self, s: &[Symbol]) -> bool {
        let mut current: BTreeSet<StateId> = BTreeSet::from([self.initial]);
        for &sym in s {
            let mut next = BTreeSet::new();
            for &q in &current {
                next.extend(self.step_all(q, sym));
            }
            if next.is_empty() {
                return false;
            }
            current = next;
        }
        current.iter().any(|&q| self.finals[q as usize])
    }

    /// Membership test for deterministic automata; a single state walk.
    pub fn accepts_dfa(&self, s: &[Symbol]) -> bool {
        let mut q = self.initial;
        for &sym in s {
            match self.step(q, sym) {
                Some(next) => q = next,
                None => return false,
            }
        }
        self.finals[q as usize]
    }

    /// States reachable from the initial state.
    fn reachable(&self) -> Vec<bool> {
        let mut seen = vec![false; self.num_states()];
        let mut stack = vec![self.initial];
        seen[self.initial as usize] = true;
        while let Some(q) = stack.pop() {
            for &(_, t) in &self.edges[q as usize] {
                if !seen[t as usize] {
                    seen[t as usize] = true;
                    stack.push(t);
                }
            }
        }
        seen
    }

    /// States from which some final state is reachable.
    fn coreachable(&self) -> Vec<bool> {
        let mut rev: Vec<Vec<StateId>> = vec![vec![]; self.num_states()];
        for (q, row) in self.edges.iter().enumerate() {
            for &(_, t) in row {
                rev[t as usize].push(q as StateId);
            }
        }
        let mut seen = vec![false; self.num_states()];
        let mut stack: Vec<StateId> = self
            .finals
            .iter()
            .enumerate()
            .filter(|(_, &f)| f)
            .map(|(q, _)| q as StateId)
            .collect();
        for &q in &stack {
            seen[q as usize] = true;
        }
        while let Some(q) = stack.pop() {
            for &p in &rev[q as usize] {
                if !seen[p as usize] {
                    seen[p as usize] = true;
                    stack.push(p);
                }
            }
        }
        seen
    }

    /// Drops states that are unreachable or cannot reach an accepting state.
    /// The initial state is always kept, so the empty language trims to a
    /// single dead initial state.
    pub fn trim(&self) -> Automaton {
        let reach = self.reachable();
        let coreach = self.coreachable();
        let keep: Vec<bool> = reach
            .iter()
            .zip(&coreach)
            .enumerate()
            .map(|(q, (&r, &c))| (r && c) || q as StateId == self.initial)
            .collect();
        let mut remap = vec![StateId::MAX; self.num_states()];
        let mut next = 0;
        for (q, &k) in keep.iter().enumerate() {
            if k {
                remap[q] = next;
                next += 1;
            }
        }
        let mut edges = vec![vec![]; next as usize];
        let mut finals = vec![false; next as usize];
        for (q, &k) in keep.iter().enumerate() {
            if !k {
                continue;
            }
            let nq = remap[q] as usize;
            finals[nq] = self.finals[q];
            for &(sym, t) in &self.edges[q] {
                if keep[t as usize] {
                    edges[nq].push((sym, remap[t as usize]));
                }
            }
            edges[nq].sort_unstable();
            edges[nq].dedup();
        }
        Automaton {
            tag: self.tag,
            edges,
            initial: remap[self.initial as usize],
            finals,
        }
    }

    /// True when the trimmed automaton has no cycle, i.e. the language is
    /// finite.
    pub fn has_finite_language(&self) -> bool {
        let t = self.trim();
        // Kahn topological sort; leftover nodes sit on cycles.
        let n = t.num_states();
        let mut indeg = vec![0usize; n];
        for row in &t.edges {
            for &(_, tgt) in row {
                indeg[tgt as usize] += 1;
            }
        }
        let mut queue: VecDeque<usize> = (0..n).filter(|&q| indeg[q] == 0).collect();
        let mut visited = 0;
        while let Some(q) = queue.pop_front() {
            visited += 1;
            for &(_, tgt) in &t.edges[q] {
                indeg[tgt as usize] -= 1;
                if indeg[tgt as usize] == 0 {
                    queue.push_back(tgt as usize);
                }
            }
        }
        visited == n
    }

    /// Subset construction. The result is deterministic, trimmed, and
    /// canonically numbered.
    pub fn determinize(&self, cap: usize) -> Result<Automaton, AutomatonError> {
        let start: BTreeSet<StateId> = BTreeSet::from([self.initial]);
        let mut ids: BTreeMap<BTreeSet<StateId>, StateId> = BTreeMap::new();
        ids.insert(start.clone(), 0);
        let mut order = vec![start];
        let mut edges: Vec<Vec<(Symbol, StateId)>> = vec![vec![]];
        let mut finals = vec![false];
        let mut at = 0;
        while at < order.len() {
            let subset = order[at].clone();
            finals[at] = subset.iter().any(|&q| self.finals[q as usize]);
            let mut by_sym: BTreeMap<Symbol, BTreeSet<StateId>> = BTreeMap::new();
            for &q in &subset {
                for &(sym, t) in &self.edges[q as usize] {
                    by_sym.entry(sym).or_default().insert(t);
                }
            }
            for (sym, targets) in by_sym {
                let id = match ids.get(&targets) {
                    Some(&id) => id,
                    None => {
                        if order.len() >= cap {
                            return Err(AutomatonError::StateCapExceeded { cap });
                        }
                        let id = order.len() as StateId;
                        ids.insert(targets.clone(), id);
                        order.push(targets);
                        edges.push(vec![]);
                        finals.push(false);
                        id
                    }
                };
                edges[at].push((sym, id));
            }
            at += 1;
        }
        let det = Automaton {
            tag: self.tag,
            edges,
            initial: 0,
            finals,
        };
        Ok(det.trim())
    }

    /// Partition-refinement minimization of a deterministic automaton.
    /// Trims first; the result is canonically numbered by breadth-first
    /// discovery order so equal languages produce identical structures.
    pub fn minimize(&self) -> Result<Automaton, AutomatonError> {
        if !self.is_deterministic() {
            return Err(AutomatonError::NotDeterministic);
        }
        let t = self.trim();
        let n = t.num_states();
        // class[q] starts as accepting / rejecting; refinement only ever
        // splits classes, so the fixpoint is reached when the class count
        // stops growing.
        let mut class: Vec<u32> = t.finals.iter().map(|&f| u32::from(f)).collect();
        let mut num_classes = class.iter().collect::<BTreeSet<_>>().len();
        loop {
            let mut sig_ids: BTreeMap<(u32, Vec<(Symbol, u32)>), u32> = BTreeMap::new();
            let mut next_class = vec![0u32; n];
            for q in 0..n {
                let sig: Vec<(Symbol, u32)> = t.edges[q]
                    .iter()
                    .map(|&(sym, tgt)| (sym, class[tgt as usize]))
                    .collect();
                let key = (class[q], sig);
                let next_id = sig_ids.len() as u32;
                let id = *sig_ids.entry(key).or_insert(next_id);
                next_class[q] = id;
            }
            let next_count = sig_ids.len();
            class = next_class;
            if next_count == num_classes {
                break;
            }
            num_classes = next_count;
        }
        let num_classes = class.iter().copied().collect::<BTreeSet<_>>().len();
        let mut edges: Vec<Vec<(Symbol, StateId)>> = vec![vec![]; num_classes];
        let mut finals = vec![false; num_classes];
        // Renumber classes densely in order of first occurrence.
        let mut dense: BTreeMap<u32, StateId> = BTreeMap::new();
        for &c in class.iter().take(n) {
            let next_id = dense.len() as StateId;
            dense.entry(c).or_insert(next_id);
        }
        for q in 0..n {
            let cq = dense[&class[q]] as usize;
            finals[cq] = t.finals[q];
            for &(sym, tgt) in &t.edges[q] {
                let e = (sym, dense[&class[tgt as usize]]);
                if let Err(i) = edges[cq].binary_search(&e) {
                    edges[cq].insert(i, e);
                }
            }
        }
        let merged = Automaton {
            tag: self.tag,
            edges,
            initial: dense[&class[t.initial as usize]],
            finals,
        };
        Ok(merged.canonicalize())
    }

    /// Renumbers states in breadth-first discovery order (edges visited in
    /// symbol order), giving a canonical form for deterministic automata.
    pub fn canonicalize(&self) -> Automaton {
        let mut remap = vec![StateId::MAX; self.num_states()];
        let mut order = Vec::with_capacity(self.num_states());
        let mut queue = VecDeque::from([self.initial]);
        remap[self.initial as usize] = 0;
        order.push(self.initial);
        while let Some(q) = queue.pop_front() {
            for &(_, t) in &self.edges[q as usize] {
                if remap[t as usize] == StateId::MAX {
                    remap[t as usize] = order.len() as StateId;
                    order.push(t);
                    queue.push_back(t);
                }
            }
        }
        // Unreachable states are appended in original order.
        for (q, slot) in remap.iter_mut().enumerate() {
            if *slot == StateId::MAX {
                *slot = order.len() as StateId;
                order.push(q as StateId);
            }
        }
        let mut edges = vec![vec![]; self.num_states()];
        let mut finals = vec![false; self.num_states()];
        for (new_id, &old) in order.iter().enumerate() {
            finals[new_id] = self.finals[old as usize];
            let mut row: Vec<(Symbol, StateId)> = self.edges[old as usize]
                .iter()
                .map(|&(sym, t)| (sym, remap[t as usize]))
                .collect();
            row.sort_unstable();
            edges[new_id] = row;
        }
        Automaton {
            tag: self.tag,
            edges,
            initial: 0,
            finals,
        }
    }

    /// Product construction: accepts exactly the intersection of both
    /// languages. Unreachable and dead product states are pruned.
    pub fn intersect(&self, other: &Automaton, cap: usize) -> Result<Automaton, AutomatonError> {
        if self.tag != other.tag {
            return Err(AutomatonError::AlphabetMismatch {
                left: self.tag,
                right: other.tag,
            });
        }
        let mut ids: BTreeMap<(StateId, StateId), StateId> = BTreeMap::new();
        let start = (self.initial, other.initial);
        ids.insert(start, 0);
        let mut order = vec![start];
        let mut edges: Vec<Vec<(Symbol, StateId)>> = vec![vec![]];
        let mut finals = vec![false];
        let mut at = 0;
        while at < order.len() {
            let (qa, qb) = order[at];
            finals[at] = self.finals[qa as usize] && other.finals[qb as usize];
            let row_a = &self.edges[qa as usize];
            for &(sym, ta) in row_a {
                for tb in other.step_all(qb, sym) {
                    let pair = (ta, tb);
                    let id = match ids.get(&pair) {
                        Some(&id) => id,
                        None => {
                            if order.len() >= cap {
                                return Err(AutomatonError::StateCapExceeded { cap });
                            }
                            let id = order.len() as StateId;
                            ids.insert(pair, id);
                            order.push(pair);
                            edges.push(vec![]);
                            finals.push(false);
                            id
                        }
                    };
                    edges[at].push((sym, id));
                }
            }
            edges[at].sort_unstable();
            edges[at].dedup();
            at += 1;
        }
        let product = Automaton {
            tag: self.tag,
            edges,
            initial: 0,
            finals,
        };
        Ok(product.trim())
    }

    /// Completes a deterministic automaton over `alphabet` and inverts the
    /// accepting set.
    pub fn complement(&self, alphabet: &[Symbol], cap: usize) -> Result<Automaton, AutomatonError> {
        let det = self.determinize(cap)?;
        let sink = det.num_states() as StateId;
        if det.num_states() + 1 > cap {
            return Err(AutomatonError::StateCapExceeded { cap });
        }
        let mut edges = det.edges.clone();
        edges.push(vec![]);
        for q in 0..=sink {
            for &sym in alphabet {
                let row = &mut edges[q as usize];
                if row.binary_search_by_key(&sym, |e| e.0).is_err() {
                    let i = row.partition_point(|e| e.0 < sym);
                    row.insert(i, (sym, sink));
                }
            }
        }
        let mut finals: Vec<bool> = det.finals.iter().map(|f| !f).collect();
        finals.push(true);
        Ok(Automaton {
            tag: det.tag,
            edges,
            initial: det.initial,
            finals,
        })
    }

    /// Language difference `L(self) \ L(deny)` over the given alphabet.
    pub fn difference(
        &self,
        deny: &Automaton,
        alphabet: &[Symbol],
        cap: usize,
    ) -> Result<Automaton, AutomatonError> {
        let not_deny = deny.complement(alphabet, cap)?;
        self.intersect(&not_deny, cap)
    }

    /// Enumerates accepted strings in length-then-lexicographic order, up to
    /// `limit` strings. Reports whether the language was exhausted.
    pub fn enumerate(&self, limit: usize) -> Enumeration {
        let t = self.trim();
        let mut out = Vec::new();
        let mut exhausted = true;
        let mut frontier: Vec<(Vec<Symbol>, BTreeSet<StateId>)> =
            vec![(vec![], BTreeSet::from([t.initial]))];
        'outer: loop {
            for (s, states) in &frontier {
                if states.iter().any(|&q| t.finals[q as usize]) {
                    if out.len() == limit {
                        exhausted = false;
                        break 'outer;
                    }
                    out.push(s.clone());
                }
            }
            let mut next_frontier = Vec::new();
            for (s, states) in &frontier {
                let mut by_sym: BTreeMap<Symbol, BTreeSet<StateId>> = BTreeMap::new();
                for &q in states {
                    for &(sym, tgt) in &t.edges[q as usize] {
                        by_sym.entry(sym).or_default().insert(tgt);
                    }
                }
                for (sym, targets) in by_sym {
                    let mut ext = s.clone();
                    ext.push(sym);
                    next_frontier.push((ext, targets));
                }
            }
            if next_frontier.is_empty() {
                break;
            }
            frontier = next_frontier;
        }
        Enumeration {
            strings: out,
            exhausted,
        }
    }

    /// Counts accepting walks of every length up to `n_max` from every state.
    pub fn count_walks(&self, n_max: usize) -> WalkCountTable {
        let n = self.num_states();
        let mut counts: Vec<Vec<BigUint>> = vec![Vec::with_capacity(n_max + 1); n];
        for (q, row) in counts.iter_mut().enumerate() {
            row.push(if self.finals[q] {
                BigUint::one()
            } else {
                BigUint::zero()
            });
        }
        for len in 1..=n_max {
            for q in 0..n {
                let mut sum = BigUint::zero();
                for &(_, t) in &self.edges[q] {
                    sum += &counts[t as usize][len - 1];
                }
                counts[q].push(sum);
            }
        }
        let totals = counts
            .iter()
            .map(|row| {
                let mut acc = BigUint::zero();
                row.iter()
                    .map(|c| {
                        acc += c;
                        acc.clone()
                    })
                    .collect()
            })
            .collect();
        WalkCountTable {
            n_max,
            counts,
            totals,
        }
    }

    /// Graphviz DOT text with numeric symbol labels.
    pub fn to_dot(&self) -> String {
        self.to_dot_with(|sym| match self.tag {
            AlphabetTag::Byte => byte_label(sym as u8),
            AlphabetTag::Token => format!("t{sym}"),
        })
    }

    /// Graphviz DOT text with caller-provided edge labels. Output is
    /// deterministic for identical automata.
    pub fn to_dot_with<F: Fn(Symbol) -> String>(&self, label: F) -> String {
        let mut out = String::from("digraph automaton {\n  rankdir=LR;\n");
        out.push_str("  __start [shape=point];\n");
        for q in 0..self.num_states() {
            let shape = if self.finals[q] {
                "doublecircle"
            } else {
                "circle"
            };
            let _ = writeln!(out, "  q{q} [shape={shape}];");
        }
        let _ = writeln!(out, "  __start -> q{};", self.initial);
        for q in 0..self.num_states() {
            for &(sym, t) in &self.edges[q] {
                let _ = writeln!(out, "  q{q} -> q{t} [label=\"{}\"];", escape_dot(&label(sym)));
            }
        }
        out.push_str("}\n");
        out
    }

    /// Line-based interchange dump: a header line `TAG<TAB>|Q|<TAB>q0`, one
    /// line per edge `from<TAB>symbol<TAB>to`, one line per final state.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{}\t{}\t{}", self.tag, self.num_states(), self.initial);
        for q in 0..self.num_states() {
            for &(sym, t) in &self.edges[q] {
                let _ = writeln!(out, "{q}\t{sym}\t{t}");
            }
        }
        for q in 0..self.num_states() {
            if self.finals[q] {
                let _ = writeln!(out, "{q}");
            }
        }
        out
    }

    /// Parses the interchange format produced by [`Automaton::dump`].
    pub fn parse_dump(text: &str) -> Result<Automaton, AutomatonError> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(AutomatonError::MalformedDump {
            line: 1,
            reason: "missing header".into(),
        })?;
        let fields: Vec<&str> = header.split('\t').collect();
        if fields.len() != 3 {
            return Err(AutomatonError::MalformedDump {
                line: 1,
                reason: "header must be TAG\\t|Q|\\tq0".into(),
            });
        }
        let tag = match fields[0] {
            "BYTE" => AlphabetTag::Byte,
            "TOKEN" => AlphabetTag::Token,
            other => {
                return Err(AutomatonError::MalformedDump {
                    line: 1,
                    reason: format!("unknown alphabet tag {other:?}"),
                })
            }
        };
        let bad = |line: usize, reason: &str| AutomatonError::MalformedDump {
            line,
            reason: reason.to_string(),
        };
        let n: usize = fields[1].parse().map_err(|_| bad(1, "bad state count"))?;
        let initial: StateId = fields[2].parse().map_err(|_| bad(1, "bad initial state"))?;
        let mut edges: Vec<Vec<(Symbol, StateId)>> = vec![vec![]; n];
        let mut finals = vec![false; n];
        if initial as usize >= n {
            return Err(bad(1, "initial state out of range"));
        }
        for (idx, line) in lines {
            let lineno = idx + 1;
            if line.is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split('\t').collect();
            match parts.len() {
                3 => {
                    let from: usize = parts[0].parse().map_err(|_| bad(lineno, "bad edge source"))?;
                    let sym: Symbol = parts[1].parse().map_err(|_| bad(lineno, "bad edge symbol"))?;
                    let to: StateId = parts[2].parse().map_err(|_| bad(lineno, "bad edge target"))?;
                    if from >= n || to as usize >= n {
                        return Err(bad(lineno, "edge endpoint out of range"));
                    }
                    edges[from].push((sym, to));
                }
                1 => {
                    let q: usize = parts[0].parse().map_err(|_| bad(lineno, "bad final state"))?;
                    if q >= n {
                        return Err(bad(lineno, "final state out of range"));
                    }
                    finals[q] = true;
                }
                _ => return Err(bad(lineno, "expected 1 or 3 tab-separated fields")),
            }
        }
        for row in &mut edges {
            row.sort_unstable();
        }
        Ok(Automaton {
            tag,
            edges,
            initial,
            finals,
        })
    }
}

/// Result of [`Automaton::enumerate`].
#[derive(Debug, Clone)]
pub struct Enumeration {
    pub strings: Vec<Vec<Symbol>>,
    pub exhausted: bool,
}

/// Per-state accepting-walk counts for every length up to `n_max`.
/// Counts are exact big integers; they never overflow or round.
#[derive(Debug, Clone)]
pub struct WalkCountTable {
    n_max: usize,
    counts: Vec<Vec<BigUint>>,
    totals: Vec<Vec<BigUint>>,
}

impl WalkCountTable {
    pub fn n_max(&self) -> usize {
        self.n_max
    }

    /// Number of accepting walks of exactly length `n` starting at `q`.
    pub fn count(&self, q: StateId, n: usize) -> &BigUint {
        &self.counts[q as usize][n]
    }

    /// Number of accepting walks of length at most `r` starting at `q`.
    pub fn total_up_to(&self, q: StateId, r: usize) -> &BigUint {
        let r = r.min(self.n_max);
        &self.totals[q as usize][r]
    }

    /// Total accepting walks from `q` within the length cap.
    pub fn total(&self, q: StateId) -> &BigUint {
        self.total_up_to(q, self.n_max)
    }
}

fn escape_dot(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

/// Human-readable label for a byte symbol in DOT output.
pub fn byte_label(b: u8) -> String {
    match b {
        b' ' => "\u{0120}".to_string(), // space marker
        0x21..=0x7e => (b as char).to_string(),
        b'\n' => "\\n".to_string(),
        b'\t' => "\\t".to_string(),
        _ => format!("\\x{b:02x}"),
    }
}

/// Builder for automata with epsilon moves. `build` eliminates epsilons and
/// returns an epsilon-free NFA with the same state numbering.
#[derive(Debug, Clone)]
pub struct NfaBuilder {
    tag: AlphabetTag,
    edges: Vec<Vec<(Option<Symbol>, StateId)>>,
    initial: StateId,
    finals: Vec<bool>,
    cap: usize,
}

impl NfaBuilder {
    pub fn new(tag: AlphabetTag, cap: usize) -> Self {
        NfaBuilder {
            tag,
            edges: vec![],
            initial: 0,
            finals: vec![],
            cap,
        }
    }

    pub fn add_state(&mut self) -> Result<StateId, AutomatonError> {
        if self.edges.len() >= self.cap {
            return Err(AutomatonError::StateCapExceeded { cap: self.cap });
        }
        self.edges.push(vec![]);
        self.finals.push(false);
        Ok((self.edges.len() - 1) as StateId)
    }

    pub fn add_edge(&mut self, from: StateId, sym: Symbol, to: StateId) {
        self.edges[from as usize].push((Some(sym), to));
    }

    pub fn add_epsilon(&mut self, from: StateId, to: StateId) {
        self.edges[from as usize].push((None, to));
    }

    pub fn set_initial(&mut self, q: StateId) {
        self.initial = q;
    }

    pub fn set_final(&mut self, q: StateId, f: bool) {
        self.finals[q as usize] = f;
    }

    pub fn num_states(&self) -> usize {
        self.edges.len()
    }

    fn epsilon_closure(&self, q: StateId) -> Vec<StateId> {
        let mut seen = BTreeSet::from([q]);
        let mut stack = vec![q];
        while let Some(p) = stack.pop() {
            for &(sym, t) in &self.edges[p as usize] {
                if sym.is_none() && seen.insert(t) {
                    stack.push(t);
                }
            }
        }
        seen.into_iter().collect()
    }

    pub fn build(self) -> Automaton {
        let n = self.edges.len();
        let mut edges: Vec<Vec<(Symbol, StateId)>> = vec![vec![]; n];
        let mut finals = vec![false; n];
        for q in 0..n as StateId {
            let closure = self.epsilon_closure(q);
            for &p in &closure {
                if self.finals[p as usize] {
                    finals[q as usize] = true;
                }
                for &(sym, t) in &self.edges[p as usize] {
                    if let Some(sym) = sym {
                        edges[q as usize].push((sym, t));
                    }
                }
            }
            edges[q as usize].sort_unstable();
            edges[q as usize].dedup();
        }
        Automaton {
            tag: self.tag,
            edges,
            initial: self.initial,
            finals,
        }
    }
}
