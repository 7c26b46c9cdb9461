//! Shared finalization for both optimizers: drop nodes too small to index,
//! compute final per-role plans, then peel roles off heavily impure nodes
//! while the storage budget allows it.

use std::collections::{BTreeMap, BTreeSet};

use crate::access::{ExclusiveLattice, Role, RoleSet};
use crate::cost::Theta;
use crate::lattice::{Lattice, Node, NodeKey};
use crate::planner::{
    avg_cost_plans, build_phi, plan_role_exact, Catalog, UnitRef, EXACT_PLAN_LIMIT,
};

/// The deliverable of an optimizer run: which node groups get a graph
/// index, which block tags stay as raw scan lists, and each role's cover.
#[derive(Debug, Clone)]
pub struct Layout {
    pub indexed: Vec<Node>,
    pub leftovers: Vec<RoleSet>,
    /// Per-role plans as indices into `catalog()` (indexed nodes first,
    /// then leftovers, in order).
    pub plans: Vec<Vec<usize>>,
    pub storage_amplification: f64,
}

impl Layout {
    pub fn catalog(&self, ex: &ExclusiveLattice) -> Catalog {
        Catalog::from_parts(&self.indexed, &self.leftovers, ex)
    }

    pub fn avg_cost(
        &self,
        ex: &ExclusiveLattice,
        weights: &[f64],
        theta: &Theta,
        efs: f64,
    ) -> f64 {
        avg_cost_plans(&self.catalog(ex), &self.plans, weights, theta, efs)
    }
}

fn stored_of(indexed: &BTreeMap<NodeKey, Node>, leftovers: &BTreeSet<RoleSet>, ex: &ExclusiveLattice) -> u64 {
    let idx: u64 = indexed.values().map(|n| n.size(ex)).sum();
    let lo: u64 = leftovers.iter().map(|t| ex.block_size(*t)).sum();
    idx + lo
}

pub fn finalize(
    lat: &Lattice,
    ex: &ExclusiveLattice,
    theta: &Theta,
    efs: f64,
    beta: f64,
    min_index_size: u64,
) -> Layout {
    // Split: nodes below the index threshold are dissolved. A dissolved
    // block becomes a leftover only if no surviving node holds it.
    let mut indexed: BTreeMap<NodeKey, Node> = BTreeMap::new();
    let mut dissolved: BTreeSet<RoleSet> = BTreeSet::new();
    for n in lat.nodes.values() {
        if n.size(ex) >= min_index_size {
            indexed.insert(n.key, n.clone());
        } else {
            dissolved.extend(n.members.iter().copied());
        }
    }
    let mut leftovers: BTreeSet<RoleSet> = dissolved
        .into_iter()
        .filter(|t| !indexed.values().any(|n| n.members.contains(t)))
        .collect();

    let budget_total = (beta * ex.n_vectors as f64).floor() as i64;
    let mut buf = budget_total - stored_of(&indexed, &leftovers, ex) as i64;

    // Initial plans over the split catalog, kept as unit references so they
    // survive the node edits below.
    let idx_nodes: Vec<Node> = indexed.values().cloned().collect();
    let lo_tags: Vec<RoleSet> = leftovers.iter().copied().collect();
    let cat = Catalog::from_parts(&idx_nodes, &lo_tags, ex);
    let phi = build_phi(&cat);
    let mut plans: Vec<BTreeSet<UnitRef>> = (0..ex.n_roles as Role)
        .map(|r| {
            plan_role_exact(&cat, &phi, ex, r, theta, efs, EXACT_PLAN_LIMIT)
                .into_iter()
                .map(|i| cat.units[i].uref)
                .collect()
        })
        .collect();

    // Reference counts: how many roles' plans use each indexed node.
    let mut refc: BTreeMap<NodeKey, usize> = BTreeMap::new();
    for p in &plans {
        for u in p {
            if let UnitRef::Node(k) = u {
                *refc.entry(*k).or_default() += 1;
            }
        }
    }

    // Standalone holders already available per block tag.
    let mut standalone: BTreeMap<RoleSet, UnitRef> = BTreeMap::new();
    for n in indexed.values() {
        if n.members.len() == 1 {
            let t = *n.members.iter().next().unwrap();
            standalone.entry(t).or_insert(UnitRef::Node(n.key));
        }
    }
    for t in &leftovers {
        standalone.insert(*t, UnitRef::Block(*t));
    }
    let mut next_salt: BTreeMap<RoleSet, u32> = BTreeMap::new();
    for k in indexed.keys() {
        let e = next_salt.entry(k.roles).or_default();
        *e = (*e).max(k.salt + 1);
    }

    // Refinement candidates: (role, node) where the node is impure for the
    // role, sorted worst impurity first, small pure part first.
    let mut cands: Vec<(Role, NodeKey, u64, u64)> = Vec::new();
    for (r, p) in plans.iter().enumerate() {
        for u in p {
            if let UnitRef::Node(k) = u {
                let n = &indexed[k];
                let size = n.size(ex);
                let pure_s = n.omega(ex, r as Role);
                if pure_s > 0 && pure_s < size {
                    cands.push((r as Role, *k, size, pure_s));
                }
            }
        }
    }
    cands.sort_by(|a, b| {
        let ia = a.2 as f64 / a.3 as f64;
        let ib = b.2 as f64 / b.3 as f64;
        ib.total_cmp(&ia).then(a.3.cmp(&b.3)).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1))
    });

    for (r, k, _, _) in cands {
        let Some(node) = indexed.get(&k) else { continue };
        if !plans[r as usize].contains(&UnitRef::Node(k)) {
            continue;
        }
        let pure_blocks: Vec<RoleSet> = node
            .members
            .iter()
            .copied()
            .filter(|t| t.contains(r))
            .collect();
        let copy_s: u64 = pure_blocks
            .iter()
            .filter(|t| !standalone.contains_key(t))
            .map(|t| ex.block_size(*t))
            .sum();
        if (copy_s as i64) > buf {
            continue;
        }
        buf -= copy_s as i64;
        let mut new_units = Vec::with_capacity(pure_blocks.len());
        for t in pure_blocks {
            let u = *standalone.entry(t).or_insert_with(|| {
                if ex.block_size(t) < min_index_size {
                    leftovers.insert(t);
                    UnitRef::Block(t)
                } else {
                    let salt = next_salt.entry(t).or_insert(1);
                    let key = NodeKey { roles: t, salt: *salt };
                    *salt += 1;
                    indexed.insert(
                        key,
                        Node { key, members: [t].into_iter().collect() },
                    );
                    UnitRef::Node(key)
                }
            });
            new_units.push(u);
        }
        // The role's coverage inside the node is exactly its pure blocks,
        // so the swap keeps the plan a valid cover.
        plans[r as usize].remove(&UnitRef::Node(k));
        plans[r as usize].extend(new_units);
        let rc = refc.get_mut(&k).expect("refcounted");
        *rc -= 1;
        if *rc == 0 {
            let dead = indexed.remove(&k).unwrap();
            buf += dead.size(ex) as i64;
        }
    }
    debug_assert!(buf >= 0, "finalize overspent the budget");

    // Freeze the catalog order and convert plans to indices.
    let indexed: Vec<Node> = indexed.into_values().collect();
    let leftovers: Vec<RoleSet> = leftovers.into_iter().collect();
    let mut pos: BTreeMap<UnitRef, usize> = BTreeMap::new();
    for (i, n) in indexed.iter().enumerate() {
        pos.insert(UnitRef::Node(n.key), i);
    }
    for (j, t) in leftovers.iter().enumerate() {
        pos.insert(UnitRef::Block(*t), indexed.len() + j);
    }
    let plans: Vec<Vec<usize>> = plans
        .into_iter()
        .map(|p| {
            let mut v: Vec<usize> = p.into_iter().map(|u| pos[&u]).collect();
            v.sort_unstable();
            v
        })
        .collect();
    let stored: u64 = indexed.iter().map(|n| n.size(ex)).sum::<u64>()
        + leftovers.iter().map(|t| ex.block_size(*t)).sum::<u64>();
    Layout {
        indexed,
        leftovers,
        plans,
        storage_amplification: stored as f64 / ex.n_vectors as f64,
    }
}
