//! Query execution over a materialized layout: independent per-index
//! search, and coordinated search that shares one global top-k bound across
//! leftovers, pure indices, and two-phase probes of impure indices.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::access::{ExclusiveLattice, Role, RoleSet};
use crate::finalize::Layout;
use crate::hnsw::{HnswIndex, HnswParams};
use crate::vectors::{distance, Dataset, Id, IdSet, Neighbor};

#[derive(Debug, Error)]
pub enum ExecError {
    #[error("unknown role {0}")]
    UnknownRole(Role),
    #[error("empty role set")]
    EmptyRoleSet,
    #[error("index build failed: {0}")]
    Build(#[from] crate::hnsw::HnswError),
}

/// One step of a role's plan, with the purity data cached at build time.
#[derive(Debug, Clone, Copy)]
pub enum PlanStep {
    /// All vectors in the index are authorized for the role.
    Pure { idx: usize },
    /// Inflated search needed; lambda = ceil(size / authorized part).
    Impure { idx: usize, lambda: u64 },
    /// Linear scan over one leftover block.
    Leftover { lo: usize },
}

/// A layout with its indices built and per-role execution data cached.
pub struct BuiltLayout {
    pub layout: Layout,
    pub indices: Vec<HnswIndex>,
    /// Member tags and sizes per index, for multi-role purity math.
    pub index_members: Vec<Vec<(RoleSet, u64)>>,
    pub leftover_ids: Vec<Vec<Id>>,
    pub steps: Vec<Vec<PlanStep>>,
    pub authorized: Vec<IdSet>,
    pub n_roles: usize,
    pub n_vectors: u64,
}

#[derive(Debug, Clone, Default)]
pub struct ExecStats {
    pub indices_touched: usize,
    pub phase2_skips: usize,
    /// Expansion budget actually consumed, modeled for one-shot searches.
    pub efs_spent: u64,
    /// Phase-2 budget avoided by the skip test.
    pub efs_saved: u64,
    pub leftover_ids_scanned: u64,
    /// Impure indices probed, the denominator for the skip rate.
    pub impure_touched: usize,
    /// Stored sizes of touched indices and their authorized parts, for the
    /// purity metric.
    pub probed_total: u64,
    pub probed_authorized: u64,
    pub used_global: bool,
}

impl BuiltLayout {
    pub fn build(
        layout: Layout,
        ds: &Dataset,
        ex: &ExclusiveLattice,
        params: &HnswParams,
    ) -> Result<BuiltLayout, ExecError> {
        let mut indices = Vec::with_capacity(layout.indexed.len());
        let mut index_members = Vec::with_capacity(layout.indexed.len());
        for (i, node) in layout.indexed.iter().enumerate() {
            let mut items: Vec<(Id, Vec<f32>)> = Vec::new();
            let mut members = Vec::with_capacity(node.members.len());
            for tag in &node.members {
                let block = &ex.blocks[tag];
                members.push((*tag, block.ids.len() as u64));
                for &id in &block.ids {
                    items.push((id, ds.get(id).to_vec()));
                }
            }
            let p = HnswParams { seed: params.seed.wrapping_add(i as u64), ..*params };
            indices.push(HnswIndex::build(ds.dim(), &items, &p)?);
            index_members.push(members);
        }
        let leftover_ids: Vec<Vec<Id>> = layout
            .leftovers
            .iter()
            .map(|t| ex.blocks[t].ids.clone())
            .collect();
        let authorized: Vec<IdSet> = (0..ex.n_roles as Role)
            .map(|r| ex.authorized_idset(r))
            .collect();
        let n_idx = indices.len();
        let steps: Vec<Vec<PlanStep>> = layout
            .plans
            .iter()
            .enumerate()
            .map(|(r, plan)| {
                plan.iter()
                    .map(|&u| {
                        if u < n_idx {
                            let size: u64 =
                                index_members[u].iter().map(|(_, s)| s).sum();
                            let omega: u64 = index_members[u]
                                .iter()
                                .filter(|(t, _)| t.contains(r as Role))
                                .map(|(_, s)| s)
                                .sum();
                            if omega == size {
                                PlanStep::Pure { idx: u }
                            } else {
                                PlanStep::Impure {
                                    idx: u,
                                    lambda: size.div_ceil(omega.max(1)),
                                }
                            }
                        } else {
                            PlanStep::Leftover { lo: u - n_idx }
                        }
                    })
                    .collect()
            })
            .collect();
        Ok(BuiltLayout {
            layout,
            indices,
            index_members,
            leftover_ids,
            steps,
            authorized,
            n_roles: ex.n_roles,
            n_vectors: ex.n_vectors as u64,
        })
    }

    fn check_role(&self, r: Role) -> Result<(), ExecError> {
        if (r as usize) < self.n_roles {
            Ok(())
        } else {
            Err(ExecError::UnknownRole(r))
        }
    }

    fn index_size(&self, idx: usize) -> u64 {
        self.index_members[idx].iter().map(|(_, s)| s).sum()
    }

    fn index_omega(&self, idx: usize, tau: RoleSet) -> u64 {
        self.index_members[idx]
            .iter()
            .filter(|(t, _)| !t.intersect(tau).is_empty())
            .map(|(_, s)| s)
            .sum()
    }
}

/// Cap-k max-heap of neighbors with id-based deduplication; ties broken
/// toward smaller ids because Neighbor orders by distance then id.
struct GlobalHeap {
    heap: std::collections::BinaryHeap<HeapItem>,
    seen: BTreeSet<Id>,
    k: usize,
}

struct HeapItem(Neighbor);

impl PartialEq for HeapItem {
    fn eq(&self, other: &Self) -> bool {
        self.0.cmp_asc(&other.0) == std::cmp::Ordering::Equal
    }
}
impl Eq for HeapItem {}
impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.cmp_asc(&other.0)
    }
}

impl GlobalHeap {
    fn new(k: usize) -> Self {
        GlobalHeap { heap: std::collections::BinaryHeap::new(), seen: BTreeSet::new(), k }
    }

    fn push(&mut self, n: Neighbor) {
        if !self.seen.insert(n.id) {
            return;
        }
        self.heap.push(HeapItem(n));
        if self.heap.len() > self.k {
            let out = self.heap.pop().unwrap();
            self.seen.remove(&out.0.id);
        }
    }

    /// Distance of the current k-th result; infinity while under-full.
    fn bound(&self) -> f32 {
        if self.heap.len() < self.k {
            f32::INFINITY
        } else {
            self.heap.peek().map(|h| h.0.dist).unwrap_or(f32::INFINITY)
        }
    }

    fn into_sorted(self) -> Vec<Neighbor> {
        let mut out: Vec<Neighbor> = self.heap.into_iter().map(|h| h.0).collect();
        out.sort_by(|a, b| a.cmp_asc(b));
        out
    }
}

fn scan_block(
    ds: &Dataset,
    ids: &[Id],
    q: &[f32],
    allowed: &IdSet,
    out: &mut GlobalHeap,
    stats: &mut ExecStats,
) {
    for &id in ids {
        stats.leftover_ids_scanned += 1;
        if allowed.contains(id) {
            out.push(Neighbor { id, dist: distance(q, ds.get(id)) });
        }
    }
}

/// Baseline execution: every plan entry searched in isolation at its own
/// inflated parameters, results merged afterwards.
pub fn exec_independent(
    bl: &BuiltLayout,
    ds: &Dataset,
    q: &[f32],
    r: Role,
    k: usize,
    efs: usize,
) -> Result<(Vec<Neighbor>, ExecStats), ExecError> {
    bl.check_role(r)?;
    let allowed = &bl.authorized[r as usize];
    let mut stats = ExecStats::default();
    let mut rs = GlobalHeap::new(k);
    for step in &bl.steps[r as usize] {
        match *step {
            PlanStep::Leftover { lo } => {
                scan_block(ds, &bl.leftover_ids[lo], q, allowed, &mut rs, &mut stats);
            }
            PlanStep::Pure { idx } => {
                stats.indices_touched += 1;
                stats.efs_spent += efs.max(k).min(bl.indices[idx].len()) as u64;
                stats.probed_total += bl.index_size(idx);
                stats.probed_authorized += bl.index_size(idx);
                for n in bl.indices[idx].search(q, k, efs) {
                    rs.push(n);
                }
            }
            PlanStep::Impure { idx, lambda } => {
                stats.indices_touched += 1;
                stats.impure_touched += 1;
                stats.efs_spent +=
                    (efs.max(k) as u64 * lambda).min(bl.indices[idx].len() as u64);
                stats.probed_total += bl.index_size(idx);
                stats.probed_authorized += bl.index_omega(idx, RoleSet::singleton(r));
                for n in bl.indices[idx].search_filtered(q, k, efs, allowed, lambda) {
                    rs.push(n);
                }
            }
        }
    }
    Ok((rs.into_sorted(), stats))
}

fn run_steps_coordinated(
    bl: &BuiltLayout,
    ds: &Dataset,
    q: &[f32],
    steps: &[PlanStep],
    allowed: &IdSet,
    k: usize,
    efs: usize,
) -> (Vec<Neighbor>, ExecStats) {
    let mut stats = ExecStats::default();
    let mut rs = GlobalHeap::new(k);
    // Phase order: fully authorized work first so the bound is tight before
    // any impure index is touched.
    for step in steps {
        if let PlanStep::Leftover { lo } = *step {
            scan_block(ds, &bl.leftover_ids[lo], q, allowed, &mut rs, &mut stats);
        }
    }
    for step in steps {
        if let PlanStep::Pure { idx } = *step {
            stats.indices_touched += 1;
            stats.efs_spent += efs.max(k).min(bl.indices[idx].len()) as u64;
            stats.probed_total += bl.index_size(idx);
            stats.probed_authorized += bl.index_size(idx);
            for n in bl.indices[idx].search(q, k, efs) {
                rs.push(n);
            }
        }
    }
    for step in steps {
        let PlanStep::Impure { idx, lambda } = *step else { continue };
        let index = &bl.indices[idx];
        stats.indices_touched += 1;
        stats.impure_touched += 1;
        stats.probed_total += bl.index_size(idx);
        let ef_max = (efs.max(k) as u64 * lambda).min(usize::MAX as u64) as usize;
        let bound = rs.bound();
        let (phase1, mut cur, _) =
            index.search_bounded(q, k, efs.max(k), ef_max, Some(allowed), bound);
        for n in phase1 {
            rs.push(n);
        }
        stats.efs_spent += cur.ef_spent as u64;
        if cur.ef_spent >= cur.ef_max {
            continue;
        }
        // Skip test: if even the unfiltered local k-th cannot beat the
        // global k-th, no unseen vector in this index can improve RS.
        let bound = rs.bound();
        if cur.unfiltered_kth() >= bound {
            stats.phase2_skips += 1;
            stats.efs_saved += (cur.ef_max - cur.ef_spent) as u64;
            continue;
        }
        if cur.exhausted {
            continue;
        }
        let budget = cur.ef_max - cur.ef_spent;
        let spent = index.run_cursor(&mut cur, q, budget, bound, Some(allowed));
        stats.efs_spent += spent as u64;
        for n in cur.local_results(index, rs.bound()) {
            rs.push(n);
        }
    }
    // Purity accounting for impure steps needs the role context; callers
    // fill probed_authorized for them via `finish_purity`.
    (rs.into_sorted(), stats)
}

/// Coordinated execution for a single role.
pub fn exec_coordinated(
    bl: &BuiltLayout,
    ds: &Dataset,
    q: &[f32],
    r: Role,
    k: usize,
    efs: usize,
) -> Result<(Vec<Neighbor>, ExecStats), ExecError> {
    bl.check_role(r)?;
    let allowed = &bl.authorized[r as usize];
    let steps = &bl.steps[r as usize];
    let (out, mut stats) = run_steps_coordinated(bl, ds, q, steps, allowed, k, efs);
    for step in steps {
        if let PlanStep::Impure { idx, .. } = *step {
            stats.probed_authorized += bl.index_omega(idx, RoleSet::singleton(r));
        }
    }
    Ok((out, stats))
}

/// Multi-role execution: a near-global role set routes to the global index
/// (strictly more than 80 percent of the data); otherwise the roles' plans
/// are unioned, deduplicated, and run coordinated under the union filter.
pub fn exec_multi_role(
    bl: &BuiltLayout,
    ds: &Dataset,
    q: &[f32],
    tau: RoleSet,
    k: usize,
    efs: usize,
    global_idx: Option<&HnswIndex>,
) -> Result<(Vec<Neighbor>, ExecStats), ExecError> {
    if tau.is_empty() {
        return Err(ExecError::EmptyRoleSet);
    }
    for r in tau.iter() {
        bl.check_role(r)?;
    }
    let mut allowed = IdSet::with_capacity(bl.n_vectors as usize);
    for r in tau.iter() {
        allowed.union_with(&bl.authorized[r as usize]);
    }
    let auth_count = allowed.len() as u64;
    if let Some(g) = global_idx {
        if (auth_count as f64) > 0.8 * bl.n_vectors as f64 {
            let mut stats = ExecStats {
                indices_touched: 1,
                used_global: true,
                probed_total: bl.n_vectors,
                probed_authorized: auth_count,
                ..Default::default()
            };
            let out = if auth_count == bl.n_vectors {
                stats.efs_spent += efs.max(k).min(g.len()) as u64;
                g.search(q, k, efs)
            } else {
                let lambda = bl.n_vectors.div_ceil(auth_count.max(1));
                stats.efs_spent += (efs.max(k) as u64 * lambda).min(g.len() as u64);
                g.search_filtered(q, k, efs, &allowed, lambda)
            };
            return Ok((out, stats));
        }
    }
    // Union of the per-role plans, deduplicated by unit, with purity
    // reassessed against the whole role set.
    let mut unit_ids: BTreeSet<usize> = BTreeSet::new();
    let mut lo_ids: BTreeSet<usize> = BTreeSet::new();
    for r in tau.iter() {
        for step in &bl.steps[r as usize] {
            match *step {
                PlanStep::Pure { idx } | PlanStep::Impure { idx, .. } => {
                    unit_ids.insert(idx);
                }
                PlanStep::Leftover { lo } => {
                    lo_ids.insert(lo);
                }
            }
        }
    }
    let mut steps: Vec<PlanStep> = Vec::new();
    for lo in lo_ids {
        steps.push(PlanStep::Leftover { lo });
    }
    let mut impure_omegas: BTreeMap<usize, u64> = BTreeMap::new();
    for idx in unit_ids {
        let size = bl.index_size(idx);
        let omega = bl.index_omega(idx, tau);
        if omega == size {
            steps.push(PlanStep::Pure { idx });
        } else {
            steps.push(PlanStep::Impure { idx, lambda: size.div_ceil(omega.max(1)) });
            impure_omegas.insert(idx, omega);
        }
    }
    let (out, mut stats) = run_steps_coordinated(bl, ds, q, &steps, &allowed, k, efs);
    for (_, omega) in impure_omegas {
        stats.probed_authorized += omega;
    }
    Ok((out, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::access::{build_exclusive_lattice, AccessMatrix};
    use crate::cost::Theta;
    use crate::effveda::effveda_run;
    use crate::lattice::{Node, NodeKey};
    use crate::vectors::brute_force_topk;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_setup(
        seed: u64,
        n: usize,
        dim: usize,
        n_roles: usize,
    ) -> (Dataset, ExclusiveLattice) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ds = Dataset::new(dim);
        for _ in 0..n {
            let v: Vec<f32> = (0..dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
            ds.push(&v);
        }
        let rows: Vec<Vec<Role>> = (0..n)
            .map(|_| {
                let m = rng.gen_range(1..=3.min(n_roles));
                (0..m).map(|_| rng.gen_range(0..n_roles as Role)).collect()
            })
            .collect();
        let ex =
            build_exclusive_lattice(&AccessMatrix::from_rows(n_roles, &rows).unwrap())
                .unwrap();
        (ds, ex)
    }

    fn built(seed: u64, n: usize, dim: usize, n_roles: usize, beta: f64) -> (Dataset, ExclusiveLattice, BuiltLayout) {
        let (ds, ex) = random_setup(seed, n, dim, n_roles);
        let theta = Theta::reference();
        let out = effveda_run(&ex, &theta, beta, 100.0, 32);
        let params = HnswParams::default();
        let bl = BuiltLayout::build(out.layout, &ds, &ex, &params).unwrap();
        (ds, ex, bl)
    }

    #[test]
    fn single_pure_index_equals_plain_search() {
        // One role, one block: the layout is a single pure index and the
        // independent result must equal that index's own search output.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut ds = Dataset::new(8);
        for _ in 0..300 {
            let v: Vec<f32> = (0..8).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
            ds.push(&v);
        }
        let rows: Vec<Vec<Role>> = (0..300).map(|_| vec![0]).collect();
        let ex =
            build_exclusive_lattice(&AccessMatrix::from_rows(1, &rows).unwrap()).unwrap();
        let theta = Theta::reference();
        let out = effveda_run(&ex, &theta, 1.5, 100.0, 32);
        let bl = BuiltLayout::build(out.layout, &ds, &ex, &HnswParams::default()).unwrap();
        assert_eq!(bl.indices.len(), 1);
        let q: Vec<f32> = (0..8).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        let (got, stats) = exec_independent(&bl, &ds, &q, 0, 10, 50).unwrap();
        let want = bl.indices[0].search(&q, 10, 50);
        assert_eq!(got, want);
        assert_eq!(stats.indices_touched, 1);
    }

    #[test]
    fn inflated_search_worked_example() {
        // Four 1-d vectors in one impure index: the unauthorized u's
        // interleave with the authorized v's; with lambda=2 and k=2 the
        // filtered answer is the two v's in distance order.
        let mut ds = Dataset::new(1);
        for x in [0.03f32, 0.04, 0.06, 0.09] {
            ds.push(&[x * x]); // squared-L2 from 0 gives dists .03^2 etc
        }
        let rows = vec![vec![1], vec![0], vec![1], vec![0]];
        let ex =
            build_exclusive_lattice(&AccessMatrix::from_rows(2, &rows).unwrap()).unwrap();
        let t0 = RoleSet::from_roles(&[0]);
        let t1 = RoleSet::from_roles(&[1]);
        let key = NodeKey::base(t0);
        let node = Node { key, members: [t0, t1].into_iter().collect() };
        let layout = Layout {
            indexed: vec![node],
            leftovers: vec![],
            plans: vec![vec![0], vec![0]],
            storage_amplification: 1.0,
        };
        let bl = BuiltLayout::build(layout, &ds, &ex, &HnswParams::default()).unwrap();
        match bl.steps[0][0] {
            PlanStep::Impure { lambda, .. } => assert_eq!(lambda, 2),
            ref s => panic!("expected impure step, got {s:?}"),
        }
        let q = vec![0.0f32];
        let (got, _) = exec_independent(&bl, &ds, &q, 0, 2, 2).unwrap();
        assert_eq!(got.iter().map(|n| n.id).collect::<Vec<_>>(), vec![1, 3]);
        assert!(got[0].dist < got[1].dist);
    }

    #[test]
    fn authorization_safety_both_strategies() {
        let (ds, ex, bl) = built(31, 1200, 8, 5, 1.4);
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..60 {
            let q: Vec<f32> = (0..8).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
            let r = rng.gen_range(0..5) as Role;
            let (a, _) = exec_independent(&bl, &ds, &q, r, 10, 40).unwrap();
            let (b, _) = exec_coordinated(&bl, &ds, &q, r, 10, 40).unwrap();
            for n in a.iter().chain(b.iter()) {
                assert!(ex.authorized_idset(r).contains(n.id), "role {r} got {}", n.id);
            }
            let tau = RoleSet::from_roles(&[r, ((r + 1) % 5) as Role]);
            let (c, _) = exec_multi_role(&bl, &ds, &q, tau, 10, 40, None).unwrap();
            let mut ok = IdSet::with_capacity(ds.len());
            for rr in tau.iter() {
                ok.union_with(&ex.authorized_idset(rr));
            }
            for n in &c {
                assert!(ok.contains(n.id));
            }
        }
    }

    #[test]
    fn exhaustive_parameters_match_brute_force_and_each_other() {
        let (ds, ex, bl) = built(5, 400, 6, 4, 1.3);
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        for _ in 0..50 {
            let q: Vec<f32> = (0..6).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
            let r = rng.gen_range(0..4) as Role;
            let allowed = ex.authorized_idset(r);
            let (a, _) = exec_independent(&bl, &ds, &q, r, 10, ds.len()).unwrap();
            let (b, _) = exec_coordinated(&bl, &ds, &q, r, 10, ds.len()).unwrap();
            let want = brute_force_topk(&ds, &q, 10, Some(&allowed));
            assert_eq!(a, want);
            assert_eq!(b, want);
        }
    }

    #[test]
    fn coordinated_equals_independent_when_all_pure() {
        // Single-role data: every index in the plan is pure, so the two
        // strategies run identical searches.
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let mut ds = Dataset::new(6);
        for _ in 0..500 {
            let v: Vec<f32> = (0..6).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
            ds.push(&v);
        }
        let rows: Vec<Vec<Role>> = (0..500).map(|_| vec![0]).collect();
        let ex =
            build_exclusive_lattice(&AccessMatrix::from_rows(1, &rows).unwrap()).unwrap();
        let theta = Theta::reference();
        let out = effveda_run(&ex, &theta, 1.2, 100.0, 32);
        let bl = BuiltLayout::build(out.layout, &ds, &ex, &HnswParams::default()).unwrap();
        for _ in 0..20 {
            let q: Vec<f32> = (0..6).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
            let (a, _) = exec_independent(&bl, &ds, &q, 0, 5, 30).unwrap();
            let (b, sb) = exec_coordinated(&bl, &ds, &q, 0, 5, 30).unwrap();
            assert_eq!(a, b);
            assert_eq!(sb.phase2_skips, 0);
        }
    }

    #[test]
    fn zero_distance_hits_skip_every_phase_two() {
        // k exact duplicates of the query live in a leftover block, so the
        // bound is 0 before any impure index runs; every phase 2 skips.
        let dim = 4;
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let mut ds = Dataset::new(dim);
        let q: Vec<f32> = (0..dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        // ids 0..2: exact duplicates tagged {0}; ids 3..102: noise, half
        // tagged {0,1}, half {1}, all in one impure index.
        for _ in 0..3 {
            ds.push(&q);
        }
        let mut rows = vec![vec![0], vec![0], vec![0]];
        for i in 0..100 {
            let v: Vec<f32> = (0..dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
            ds.push(&v);
            rows.push(if i % 2 == 0 { vec![0, 1] } else { vec![1] });
        }
        let ex =
            build_exclusive_lattice(&AccessMatrix::from_rows(2, &rows).unwrap()).unwrap();
        let t0 = RoleSet::from_roles(&[0]);
        let t01 = RoleSet::from_roles(&[0, 1]);
        let t1 = RoleSet::from_roles(&[1]);
        let key = NodeKey::base(t1);
        let node = Node { key, members: [t01, t1].into_iter().collect() };
        let layout = Layout {
            indexed: vec![node],
            leftovers: vec![t0],
            plans: vec![vec![0, 1], vec![0]],
            storage_amplification: 1.0,
        };
        let bl = BuiltLayout::build(layout, &ds, &ex, &HnswParams::default()).unwrap();
        let (got, stats) = exec_coordinated(&bl, &ds, &q, 0, 3, 8).unwrap();
        assert_eq!(got.iter().map(|n| n.id).collect::<Vec<_>>(), vec![0, 1, 2]);
        assert_eq!(stats.phase2_skips, 1);
        assert!(stats.efs_saved > 0);
    }

    #[test]
    fn multi_role_routing_and_boundary() {
        let (ds, ex, bl) = built(61, 1000, 8, 5, 1.3);
        let params = HnswParams::default();
        let items: Vec<(Id, Vec<f32>)> =
            (0..ds.len() as Id).map(|i| (i, ds.get(i).to_vec())).collect();
        let global = HnswIndex::build(ds.dim(), &items, &params).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let q: Vec<f32> = (0..8).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        // Full role set covers everything: pure global path.
        let all = RoleSet::from_roles(&[0, 1, 2, 3, 4]);
        let (got, stats) =
            exec_multi_role(&bl, &ds, &q, all, 10, ds.len(), Some(&global)).unwrap();
        assert!(stats.used_global);
        assert_eq!(got, global.search(&q, 10, ds.len()));
        // Single role without a global index equals coordinated execution.
        let (a, _) = exec_multi_role(&bl, &ds, &q, RoleSet::singleton(2), 10, 50, None)
            .unwrap();
        let (b, _) = exec_coordinated(&bl, &ds, &q, 2, 10, 50).unwrap();
        assert_eq!(a, b);
        // A role set at or below the 80 percent boundary takes the
        // partitioned path even when a global index exists.
        let tau = RoleSet::from_roles(&[0, 1]);
        let mut cov = IdSet::with_capacity(ds.len());
        cov.union_with(&ex.authorized_idset(0));
        cov.union_with(&ex.authorized_idset(1));
        if cov.len() as f64 <= 0.8 * ds.len() as f64 {
            let (_, st) =
                exec_multi_role(&bl, &ds, &q, tau, 10, 50, Some(&global)).unwrap();
            assert!(!st.used_global);
        }
    }

    #[test]
    fn recall_reasonable_at_moderate_efs() {
        let (ds, ex, bl) = built(71, 2000, 12, 4, 1.5);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut hit = 0usize;
        let mut total = 0usize;
        for _ in 0..40 {
            let q: Vec<f32> = (0..12).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
            let r = rng.gen_range(0..4) as Role;
            let allowed = ex.authorized_idset(r);
            let want: BTreeSet<Id> = brute_force_topk(&ds, &q, 10, Some(&allowed))
                .into_iter()
                .map(|n| n.id)
                .collect();
            let (got, _) = exec_coordinated(&bl, &ds, &q, r, 10, 100).unwrap();
            hit += got.iter().filter(|n| want.contains(&n.id)).count();
            total += want.len();
        }
        let recall = hit as f64 / total as f64;
        assert!(recall >= 0.9, "recall {recall}");
    }

    #[test]
    fn unknown_role_and_empty_roleset_rejected() {
        let (ds, _, bl) = built(81, 200, 4, 3, 1.2);
        let q = vec![0.0f32; 4];
        assert!(matches!(
            exec_independent(&bl, &ds, &q, 99, 5, 20),
            Err(ExecError::UnknownRole(99))
        ));
        assert!(matches!(
            exec_multi_role(&bl, &ds, &q, RoleSet::empty(), 5, 20, None),
            Err(ExecError::EmptyRoleSet)
        ));
    }
}
