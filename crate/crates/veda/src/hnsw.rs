//! From-scratch HNSW graph: standard top-k search, filtered (inflated)
//! search, and a bounded resumable base-layer traversal used by coordinated
//! multi-index execution. Binary persistence included.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::vectors::{distance, Id, IdSet, Neighbor};

#[derive(Debug, Error)]
pub enum HnswError {
    #[error("duplicate vector id {0}")]
    DuplicateId(Id),
    #[error("empty input")]
    Empty,
    #[error("index file format error: {0}")]
    Format(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy)]
pub struct HnswParams {
    pub m: usize,
    pub efc: usize,
    pub seed: u64,
}

impl Default for HnswParams {
    fn default() -> Self {
        HnswParams { m: 16, efc: 200, seed: 0x5eed }
    }
}

impl HnswParams {
    pub fn m0(&self) -> usize {
        2 * self.m
    }

    pub fn level_mult(&self) -> f64 {
        1.0 / (self.m as f64).ln()
    }
}

/// Heap entry ordered by distance, ties by id. Used as max-heap directly and
/// min-heap via Reverse.
#[derive(Debug, Clone, Copy, PartialEq)]
struct DistNode {
    dist: f32,
    node: u32,
}

impl Eq for DistNode {}

impl Ord for DistNode {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.dist
            .total_cmp(&other.dist)
            .then(self.node.cmp(&other.node))
    }
}

impl PartialOrd for DistNode {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

pub struct HnswIndex {
    dim: usize,
    m: usize,
    m0: usize,
    /// Local node -> global vector id.
    ids: Vec<Id>,
    /// Flattened local copies of the indexed vectors.
    vecs: Vec<f32>,
    levels: Vec<u8>,
    /// links[node][level] = neighbor local ids; level 0 is the base layer.
    links: Vec<Vec<Vec<u32>>>,
    entry: u32,
    max_level: u8,
}

impl HnswIndex {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[Id] {
        &self.ids
    }

    pub fn global_id(&self, node: u32) -> Id {
        self.ids[node as usize]
    }

    fn vec(&self, node: u32) -> &[f32] {
        let i = node as usize * self.dim;
        &self.vecs[i..i + self.dim]
    }

    pub fn max_level(&self) -> usize {
        self.max_level as usize
    }

    pub fn degree_caps_ok(&self) -> bool {
        self.links.iter().all(|per_node| {
            per_node.iter().enumerate().all(|(lvl, ns)| {
                ns.len() <= if lvl == 0 { self.m0 } else { self.m }
            })
        })
    }

    pub fn build(
        dim: usize,
        items: &[(Id, Vec<f32>)],
        params: &HnswParams,
    ) -> Result<HnswIndex, HnswError> {
        if items.is_empty() {
            return Err(HnswError::Empty);
        }
        {
            let mut seen = std::collections::HashSet::new();
            for (id, _) in items {
                if !seen.insert(*id) {
                    return Err(HnswError::DuplicateId(*id));
                }
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let n = items.len();
        let mut idx = HnswIndex {
            dim,
            m: params.m,
            m0: params.m0(),
            ids: Vec::with_capacity(n),
            vecs: Vec::with_capacity(n * dim),
            levels: Vec::with_capacity(n),
            links: Vec::with_capacity(n),
            entry: 0,
            max_level: 0,
        };
        let mult = params.level_mult();
        for (gid, v) in items {
            assert_eq!(v.len(), dim);
            idx.ids.push(*gid);
            idx.vecs.extend_from_slice(v);
            let u: f64 = rng.gen_range(f64::EPSILON..1.0);
            let lvl = ((-u.ln() * mult).floor() as usize).min(31) as u8;
            idx.levels.push(lvl);
            idx.links.push(vec![Vec::new(); lvl as usize + 1]);
        }
        // Insert node 0 as the initial graph, then the rest.
        idx.entry = 0;
        idx.max_level = idx.levels[0];
        for node in 1..n as u32 {
            idx.insert(node, params.efc);
        }
        Ok(idx)
    }

    fn insert(&mut self, node: u32, efc: usize) {
        let level = self.levels[node as usize];
        let q = self.vec(node).to_vec();
        let mut ep = self.entry;
        let mut ep_dist = distance(&q, self.vec(ep));
        // Greedy descent through layers above the new node's level.
        let top = self.max_level;
        for lvl in ((level as usize + 1)..=(top as usize)).rev() {
            loop {
                let mut improved = false;
                let neigh = self.links[ep as usize].get(lvl).cloned().unwrap_or_default();
                for u in neigh {
                    let d = distance(&q, self.vec(u));
                    if d < ep_dist {
                        ep = u;
                        ep_dist = d;
                        improved = true;
                    }
                }
                if !improved {
                    break;
                }
            }
        }
        // Beam search and connect on each layer from min(level, top) down.
        let mut eps = vec![ep];
        for lvl in (0..=(level.min(top) as usize)).rev() {
            let found = self.search_layer(&q, &eps, efc, lvl, None);
            let m = if lvl == 0 { self.m0 } else { self.m };
            let selected = self.select_heuristic(&q, &found, m);
            for &DistNode { node: u, .. } in &selected {
                self.connect(node, u, lvl);
                self.connect(u, node, lvl);
            }
            eps = found.iter().map(|dn| dn.node).collect();
            if eps.is_empty() {
                eps = vec![ep];
            }
        }
        if level > self.max_level {
            self.max_level = level;
            self.entry = node;
        }
    }

    fn connect(&mut self, from: u32, to: u32, lvl: usize) {
        if from == to {
            return;
        }
        let cap = if lvl == 0 { self.m0 } else { self.m };
        if self.links[from as usize][lvl].contains(&to) {
            return;
        }
        self.links[from as usize][lvl].push(to);
        if self.links[from as usize][lvl].len() > cap {
            // Re-select the best cap neighbors with the diversity heuristic.
            let base = self.vec(from).to_vec();
            let cands: Vec<DistNode> = self.links[from as usize][lvl]
                .iter()
                .map(|&u| DistNode { dist: distance(&base, self.vec(u)), node: u })
                .collect();
            let kept = self.select_heuristic(&base, &cands, cap);
            self.links[from as usize][lvl] = kept.into_iter().map(|dn| dn.node).collect();
        }
    }

    /// Diversity-preserving neighbor selection with keep-pruned-connections.
    fn select_heuristic(&self, q: &[f32], cands: &[DistNode], m: usize) -> Vec<DistNode> {
        let mut sorted = cands.to_vec();
        sorted.sort();
        sorted.dedup_by_key(|dn| dn.node);
        sorted.sort();
        let mut kept: Vec<DistNode> = Vec::with_capacity(m);
        let mut pruned: Vec<DistNode> = Vec::new();
        for dn in sorted {
            if kept.len() >= m {
                break;
            }
            let dominated = kept
                .iter()
                .any(|k| distance(self.vec(k.node), self.vec(dn.node)) < dn.dist);
            if dominated {
                pruned.push(dn);
            } else {
                kept.push(dn);
            }
        }
        let _ = q;
        for dn in pruned {
            if kept.len() >= m {
                break;
            }
            kept.push(dn);
        }
        kept
    }

    /// Standard layer beam search from entry points. `allowed` restricts
    /// which nodes may appear in the result (they still steer traversal).
    fn search_layer(
        &self,
        q: &[f32],
        eps: &[u32],
        ef: usize,
        lvl: usize,
        allowed: Option<&IdSet>,
    ) -> Vec<DistNode> {
        let mut visited = vec![false; self.len()];
        let mut cands: BinaryHeap<Reverse<DistNode>> = BinaryHeap::new();
        let mut best: BinaryHeap<DistNode> = BinaryHeap::new(); // max-heap, worst on top
        for &e in eps {
            if visited[e as usize] {
                continue;
            }
            visited[e as usize] = true;
            let dn = DistNode { dist: distance(q, self.vec(e)), node: e };
            cands.push(Reverse(dn));
            best.push(dn);
        }
        while let Some(Reverse(v)) = cands.pop() {
            let worst = best.peek().map(|w| w.dist).unwrap_or(f32::INFINITY);
            if best.len() >= ef && v.dist > worst {
                break;
            }
            let neigh = self.links[v.node as usize].get(lvl).cloned().unwrap_or_default();
            for u in neigh {
                if visited[u as usize] {
                    continue;
                }
                visited[u as usize] = true;
                let d = distance(q, self.vec(u));
                let worst = best.peek().map(|w| w.dist).unwrap_or(f32::INFINITY);
                if best.len() < ef || d < worst {
                    let dn = DistNode { dist: d, node: u };
                    cands.push(Reverse(dn));
                    best.push(dn);
                    if best.len() > ef {
                        best.pop();
                    }
                }
            }
        }
        let mut out: Vec<DistNode> = best.into_vec();
        out.sort();
        if let Some(a) = allowed {
            out.retain(|dn| a.contains(self.global_id(dn.node)));
        }
        out
    }

    fn descend_to_base(&self, q: &[f32]) -> u32 {
        let mut ep = self.entry;
        let mut ep_dist = distance(q, self.vec(ep));
        for lvl in (1..=self.max_level as usize).rev() {
            loop {
                let mut improved = false;
                let neigh = self.links[ep as usize].get(lvl).cloned().unwrap_or_default();
                for u in neigh {
                    let d = distance(q, self.vec(u));
                    if d < ep_dist {
                        ep = u;
                        ep_dist = d;
                        improved = true;
                    }
                }
                if !improved {
                    break;
                }
            }
        }
        ep
    }

    /// Exact scan over the index contents; the degenerate regime when the
    /// beam would cover the whole graph.
    fn scan_topk(&self, q: &[f32], k: usize, allowed: Option<&IdSet>) -> Vec<Neighbor> {
        let mut out: Vec<Neighbor> = (0..self.len() as u32)
            .filter(|&n| allowed.map_or(true, |a| a.contains(self.global_id(n))))
            .map(|n| Neighbor { id: self.global_id(n), dist: distance(q, self.vec(n)) })
            .collect();
        out.sort_by(|a, b| a.cmp_asc(b));
        out.truncate(k);
        out
    }

    pub fn search(&self, q: &[f32], k: usize, efs: usize) -> Vec<Neighbor> {
        assert!(k >= 1);
        let ef = efs.max(k);
        if ef >= self.len() {
            return self.scan_topk(q, k, None);
        }
        let ep = self.descend_to_base(q);
        let found = self.search_layer(q, &[ep], ef, 0, None);
        found
            .into_iter()
            .take(k)
            .map(|dn| Neighbor { id: self.global_id(dn.node), dist: dn.dist })
            .collect()
    }

    /// Inflated search for an impure index: beam and request size scaled by
    /// lambda, unauthorized survivors dropped afterwards.
    pub fn search_filtered(
        &self,
        q: &[f32],
        k: usize,
        efs: usize,
        allowed: &IdSet,
        lambda: u64,
    ) -> Vec<Neighbor> {
        assert!(lambda >= 1);
        let k_inf = (k as u64 * lambda) as usize;
        let efs_inf = ((efs.max(k) as u64) * lambda) as usize;
        if efs_inf >= self.len() {
            return self.scan_topk(q, k, Some(allowed));
        }
        let ep = self.descend_to_base(q);
        let found = self.search_layer(q, &[ep], efs_inf, 0, None);
        let mut out: Vec<Neighbor> = found
            .into_iter()
            .filter(|dn| allowed.contains(self.global_id(dn.node)))
            .take(k_inf)
            .map(|dn| Neighbor { id: self.global_id(dn.node), dist: dn.dist })
            .collect();
        out.truncate(k);
        out
    }

    /// Start a bounded base-layer traversal. `ef_max` is the total expansion
    /// cap over all phases; when it covers the whole index the cursor runs
    /// in scan mode (exact, resumable block scan).
    pub fn start_cursor(&self, q: &[f32], k: usize, ef_max: usize) -> SearchCursor {
        let scan_mode = ef_max >= self.len();
        let mut cur = SearchCursor {
            candidates: BinaryHeap::new(),
            visited: vec![false; self.len()],
            local: BinaryHeap::new(),
            unfiltered: BinaryHeap::new(),
            k,
            ef_spent: 0,
            ef_max,
            scan_mode,
            scan_pos: 0,
            seed_done: false,
            exhausted: false,
        };
        if self.is_empty() {
            cur.exhausted = true;
            return cur;
        }
        if !scan_mode {
            let ep = self.descend_to_base(q);
            let d = distance(q, self.vec(ep));
            cur.visited[ep as usize] = true;
            cur.candidates.push(Reverse(DistNode { dist: d, node: ep }));
        }
        cur
    }

    /// Advance the cursor by up to `budget` expansions under the global
    /// bound. Unauthorized nodes steer traversal but never enter the local
    /// result heap. Returns the number of expansions spent in this call.
    pub fn run_cursor(
        &self,
        cur: &mut SearchCursor,
        q: &[f32],
        budget: usize,
        global_bound: f32,
        allowed: Option<&IdSet>,
    ) -> usize {
        let start = cur.ef_spent;
        let limit = cur.ef_spent.saturating_add(budget).min(cur.ef_max);
        if cur.scan_mode {
            while cur.scan_pos < self.len() && cur.ef_spent < limit {
                let node = cur.scan_pos as u32;
                cur.scan_pos += 1;
                cur.ef_spent += 1;
                let d = distance(q, self.vec(node));
                cur.push_unfiltered(DistNode { dist: d, node });
                if d >= global_bound {
                    continue;
                }
                if allowed.map_or(true, |a| a.contains(self.global_id(node))) {
                    cur.push_local(DistNode { dist: d, node });
                }
            }
            cur.exhausted = cur.scan_pos >= self.len();
            return cur.ef_spent - start;
        }
        // The entry seed counts as a visited candidate once, but stays in
        // the frontier so its neighbors still get expanded.
        if !cur.seed_done {
            cur.seed_done = true;
            if let Some(Reverse(v)) = cur.candidates.peek().copied() {
                cur.ef_spent += 1;
                cur.push_unfiltered(v);
                if allowed.map_or(true, |a| a.contains(self.global_id(v.node))) {
                    cur.push_local(v);
                }
            }
        }
        loop {
            if cur.ef_spent >= limit {
                break;
            }
            let v = match cur.candidates.peek() {
                Some(Reverse(v)) => *v,
                None => {
                    cur.exhausted = true;
                    break;
                }
            };
            cur.candidates.pop();
            let neigh = self.links[v.node as usize].first().cloned().unwrap_or_default();
            for u in neigh {
                if cur.visited[u as usize] {
                    continue;
                }
                cur.visited[u as usize] = true;
                cur.ef_spent += 1;
                let d = distance(q, self.vec(u));
                let dn = DistNode { dist: d, node: u };
                cur.push_unfiltered(dn);
                // Navigation must pass through far nodes to descend toward
                // the query, so the frontier is never pruned by the global
                // bound; coordination saves work at phase granularity (the
                // skip test and the per-phase budgets), and local_results
                // filters against the bound on the way out.
                cur.candidates.push(Reverse(dn));
                if allowed.map_or(true, |a| a.contains(self.global_id(u))) {
                    cur.push_local(dn);
                }
                if cur.ef_spent >= limit {
                    break;
                }
            }
        }
        if cur.candidates.is_empty() && !cur.scan_mode {
            cur.exhausted = true;
        }
        cur.ef_spent - start
    }

    /// One-shot bounded search: phase-1 call of coordinated execution.
    pub fn search_bounded(
        &self,
        q: &[f32],
        k: usize,
        ef_default: usize,
        ef_max: usize,
        allowed: Option<&IdSet>,
        global_bound: f32,
    ) -> (Vec<Neighbor>, SearchCursor, bool) {
        let mut cur = self.start_cursor(q, k, ef_max);
        self.run_cursor(&mut cur, q, ef_default, global_bound, allowed);
        let results = cur.local_results(self, global_bound);
        let stopped_early = !cur.exhausted && cur.ef_spent < cur.ef_max;
        (results, cur, stopped_early)
    }

    pub fn save(&self, path: &Path) -> Result<(), HnswError> {
        let mut wr = BufWriter::new(File::create(path)?);
        wr.write_all(b"VHNSW\x01\x00\x00")?;
        for v in [
            self.dim as u32,
            self.m as u32,
            self.m0 as u32,
            self.len() as u32,
            self.entry,
            self.max_level as u32,
        ] {
            wr.write_all(&v.to_le_bytes())?;
        }
        for id in &self.ids {
            wr.write_all(&id.to_le_bytes())?;
        }
        wr.write_all(&self.levels)?;
        for x in &self.vecs {
            wr.write_all(&x.to_le_bytes())?;
        }
        for per_node in &self.links {
            for per_level in per_node {
                wr.write_all(&(per_level.len() as u32).to_le_bytes())?;
                for u in per_level {
                    wr.write_all(&u.to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<HnswIndex, HnswError> {
        let mut rd = BufReader::new(File::open(path)?);
        let mut buf = Vec::new();
        rd.read_to_end(&mut buf)?;
        if buf.len() < 8 + 24 || &buf[0..5] != b"VHNSW" {
            return Err(HnswError::Format("bad magic".into()));
        }
        if buf[5] != 1 {
            return Err(HnswError::Format(format!("unsupported version {}", buf[5])));
        }
        let mut off = 8usize;
        let next_u32 = |buf: &[u8], off: &mut usize| -> Result<u32, HnswError> {
            let v = buf
                .get(*off..*off + 4)
                .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
                .ok_or_else(|| HnswError::Format("truncated".into()))?;
            *off += 4;
            Ok(v)
        };
        let dim = next_u32(&buf, &mut off)? as usize;
        let m = next_u32(&buf, &mut off)? as usize;
        let m0 = next_u32(&buf, &mut off)? as usize;
        let n = next_u32(&buf, &mut off)? as usize;
        let entry = next_u32(&buf, &mut off)?;
        let max_level = next_u32(&buf, &mut off)? as u8;
        let mut ids = Vec::with_capacity(n);
        for _ in 0..n {
            ids.push(next_u32(&buf, &mut off)?);
        }
        let levels: Vec<u8> = buf
            .get(off..off + n)
            .ok_or_else(|| HnswError::Format("truncated levels".into()))?
            .to_vec();
        off += n;
        let mut vecs = Vec::with_capacity(n * dim);
        for _ in 0..n * dim {
            let raw = next_u32(&buf, &mut off)?;
            vecs.push(f32::from_le_bytes(raw.to_le_bytes()));
        }
        let mut links = Vec::with_capacity(n);
        for &lvl in &levels {
            let mut per_node = Vec::with_capacity(lvl as usize + 1);
            for _ in 0..=lvl {
                let cnt = next_u32(&buf, &mut off)? as usize;
                let mut ns = Vec::with_capacity(cnt);
                for _ in 0..cnt {
                    ns.push(next_u32(&buf, &mut off)?);
                }
                per_node.push(ns);
            }
            links.push(per_node);
        }
        Ok(HnswIndex { dim, m, m0, ids, vecs, levels, links, entry, max_level })
    }
}

/// Resumable bounded traversal state over one index's base layer.
pub struct SearchCursor {
    candidates: BinaryHeap<Reverse<DistNode>>,
    visited: Vec<bool>,
    /// Authorized results, max-heap capped at k.
    local: BinaryHeap<DistNode>,
    /// All visited nodes regardless of authorization, max-heap capped at k;
    /// its k-th distance feeds the phase-2 skip test.
    unfiltered: BinaryHeap<DistNode>,
    k: usize,
    pub ef_spent: usize,
    pub ef_max: usize,
    scan_mode: bool,
    scan_pos: usize,
    seed_done: bool,
    pub exhausted: bool,
}

impl SearchCursor {
    fn push_local(&mut self, dn: DistNode) {
        self.local.push(dn);
        if self.local.len() > self.k {
            self.local.pop();
        }
    }

    fn push_unfiltered(&mut self, dn: DistNode) {
        self.unfiltered.push(dn);
        if self.unfiltered.len() > self.k {
            self.unfiltered.pop();
        }
    }

    /// k-th best distance over everything seen (authorized or not); infinity
    /// until k nodes have been visited.
    pub fn unfiltered_kth(&self) -> f32 {
        if self.unfiltered.len() < self.k {
            f32::INFINITY
        } else {
            self.unfiltered.peek().map(|dn| dn.dist).unwrap_or(f32::INFINITY)
        }
    }

    /// Current authorized results strictly under the bound, ascending.
    pub fn local_results(&self, idx: &HnswIndex, global_bound: f32) -> Vec<Neighbor> {
        let mut out: Vec<Neighbor> = self
            .local
            .iter()
            .filter(|dn| dn.dist < global_bound)
            .map(|dn| Neighbor { id: idx.global_id(dn.node), dist: dn.dist })
            .collect();
        out.sort_by(|a, b| a.cmp_asc(b));
        out
    }
}
