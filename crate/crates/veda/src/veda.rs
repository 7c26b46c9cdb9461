//! The exhaustive greedy optimizer: alternating copy and merge phases over
//! descendant-ancestor pairs, each candidate scored by its benefit ratio
//! (modeled average-cost reduction per unit of added storage).

use std::collections::{BTreeMap, BTreeSet};

use crate::access::{ExclusiveLattice, Role, RoleSet};
use crate::cost::Theta;
use crate::lattice::{Lattice, Node, NodeKey};
use crate::planner::{build_phi, plan_role_greedy, Catalog};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    Copy,
    Merge,
}

#[derive(Debug, Clone)]
pub struct OpRecord {
    pub kind: OpKind,
    pub anc: NodeKey,
    pub desc: NodeKey,
    pub benefit: f64,
    /// Storage change: positive for copies, zero or negative for merges.
    pub delta_s: i64,
    pub avg_cost_after: f64,
}

/// Per-role plans during optimization, as node-key sets (catalog indices
/// would go stale as nodes come and go).
pub type KeyPlans = Vec<BTreeSet<NodeKey>>;

pub fn plan_role_keys(
    lat: &Lattice,
    ex: &ExclusiveLattice,
    r: Role,
    theta: &Theta,
    efs: f64,
) -> BTreeSet<NodeKey> {
    let cat = Catalog::from_lattice(lat, ex);
    let phi = build_phi(&cat);
    plan_role_greedy(&cat, &phi, ex, r, theta, efs)
        .into_iter()
        .map(|i| match cat.units[i].uref {
            crate::planner::UnitRef::Node(k) => k,
            crate::planner::UnitRef::Block(_) => unreachable!("lattice catalog has only nodes"),
        })
        .collect()
}

pub fn plan_all_keys(lat: &Lattice, ex: &ExclusiveLattice, theta: &Theta, efs: f64) -> KeyPlans {
    (0..ex.n_roles as Role)
        .map(|r| plan_role_keys(lat, ex, r, theta, efs))
        .collect()
}

pub fn node_cost(n: &Node, ex: &ExclusiveLattice, r: Role, theta: &Theta, efs: f64) -> f64 {
    let size = n.size(ex);
    let omega = n.omega(ex, r);
    let pure = omega == size;
    let lambda = if pure { 1 } else { size.div_ceil(omega.max(1)) };
    crate::cost::cost_hnsw(theta, size, efs, pure, lambda).0
}

fn role_plan_cost(
    lat: &Lattice,
    ex: &ExclusiveLattice,
    plan: &BTreeSet<NodeKey>,
    r: Role,
    theta: &Theta,
    efs: f64,
) -> f64 {
    plan.iter()
        .map(|k| node_cost(&lat.nodes[k], ex, r, theta, efs))
        .sum()
}

/// Workload-average modeled cost of the maintained plans.
pub fn avg_cost_lattice(
    lat: &Lattice,
    ex: &ExclusiveLattice,
    plans: &KeyPlans,
    weights: &[f64],
    theta: &Theta,
    efs: f64,
) -> f64 {
    plans
        .iter()
        .enumerate()
        .map(|(r, p)| weights[r] * role_plan_cost(lat, ex, p, r as Role, theta, efs))
        .sum()
}

fn affected_roles(lat: &Lattice, desc: NodeKey, anc: NodeKey) -> Vec<Role> {
    let mut tags = RoleSet::empty();
    for k in [desc, anc] {
        if let Some(n) = lat.nodes.get(&k) {
            for t in &n.members {
                tags = tags.union(*t);
            }
        }
    }
    tags.roles()
}

/// Outcome of scoring one candidate operation: the ratio, the storage
/// delta, and the replanned covers for the affected roles so a commit can
/// apply exactly what was scored.
pub struct Scored {
    pub benefit: f64,
    pub delta_s: i64,
    pub new_plans: Vec<(Role, BTreeSet<NodeKey>)>,
}

fn apply_copy(lat: &mut Lattice, desc: NodeKey, anc: NodeKey) {
    let block = desc.roles;
    lat.nodes.get_mut(&anc).expect("ancestor live").members.insert(block);
}

fn apply_merge(lat: &mut Lattice, desc: NodeKey, anc: NodeKey) {
    let moved = lat.nodes.remove(&desc).expect("descendant live");
    lat.nodes
        .get_mut(&anc)
        .expect("ancestor live")
        .members
        .extend(moved.members);
}

/// Benefit ratio of one candidate operation: exact difference of the
/// workload-average cost, with the affected roles' covers re-derived on the
/// modified lattice, divided by the storage increase plus one.
pub fn benefit_ratio(
    lat: &Lattice,
    plans: &KeyPlans,
    ex: &ExclusiveLattice,
    theta: &Theta,
    efs: f64,
    weights: &[f64],
    kind: OpKind,
    desc: NodeKey,
    anc: NodeKey,
) -> Scored {
    let roles = affected_roles(lat, desc, anc);
    let before: f64 = roles
        .iter()
        .map(|&r| weights[r as usize] * role_plan_cost(lat, ex, &plans[r as usize], r, theta, efs))
        .sum();
    let stored_before = lat.total_stored(ex) as i64;
    let mut lat2 = lat.clone();
    match kind {
        OpKind::Copy => apply_copy(&mut lat2, desc, anc),
        OpKind::Merge => apply_merge(&mut lat2, desc, anc),
    }
    let delta_s = lat2.total_stored(ex) as i64 - stored_before;
    let mut after = 0.0;
    let mut new_plans = Vec::with_capacity(roles.len());
    for &r in &roles {
        let p = plan_role_keys(&lat2, ex, r, theta, efs);
        after += weights[r as usize] * role_plan_cost(&lat2, ex, &p, r, theta, efs);
        new_plans.push((r, p));
    }
    let denom = (delta_s.max(0) + 1) as f64;
    Scored { benefit: (before - after) / denom, delta_s, new_plans }
}

/// Descendant-ancestor pairs over the current salt-0 node keys.
fn da_pairs(lat: &Lattice) -> Vec<(NodeKey, NodeKey)> {
    let keys: Vec<NodeKey> = lat.nodes.keys().copied().collect();
    let mut out = Vec::new();
    for &c in &keys {
        for &a in &keys {
            if a.roles.is_strict_subset(c.roles) {
                out.push((c, a));
            }
        }
    }
    out
}

fn commit(
    lat: &mut Lattice,
    plans: &mut KeyPlans,
    ex: &ExclusiveLattice,
    theta: &Theta,
    efs: f64,
    weights: &[f64],
    kind: OpKind,
    desc: NodeKey,
    anc: NodeKey,
    sc: Scored,
    oplog: &mut Vec<OpRecord>,
) {
    match kind {
        OpKind::Copy => apply_copy(lat, desc, anc),
        OpKind::Merge => apply_merge(lat, desc, anc),
    }
    for (r, p) in sc.new_plans {
        plans[r as usize] = p;
    }
    let avg = avg_cost_lattice(lat, ex, plans, weights, theta, efs);
    oplog.push(OpRecord {
        kind,
        anc,
        desc,
        benefit: sc.benefit,
        delta_s: sc.delta_s,
        avg_cost_after: avg,
    });
}

/// Copy phase: repeatedly apply the best-scoring copy that fits the
/// remaining budget, rescoring pairs whose ancestor was touched.
pub fn copy_phase(
    lat: &mut Lattice,
    plans: &mut KeyPlans,
    ex: &ExclusiveLattice,
    theta: &Theta,
    efs: f64,
    weights: &[f64],
    budget_total: i64,
    oplog: &mut Vec<OpRecord>,
) -> usize {
    let mut buf = budget_total - lat.total_stored(ex) as i64;
    if buf <= 0 {
        return 0;
    }
    let eligible = |lat: &Lattice, c: NodeKey, a: NodeKey| {
        lat.nodes.contains_key(&c)
            && lat.nodes.get(&a).is_some_and(|n| !n.members.contains(&c.roles))
    };
    let mut pr: BTreeMap<(NodeKey, NodeKey), f64> = BTreeMap::new();
    for (c, a) in da_pairs(lat) {
        if eligible(lat, c, a) {
            let sc = benefit_ratio(lat, plans, ex, theta, efs, weights, OpKind::Copy, c, a);
            pr.insert((a, c), sc.benefit);
        }
    }
    let mut applied = 0usize;
    while buf > 0 && !pr.is_empty() {
        // Descending benefit, ties lexicographic on (ancestor, descendant).
        let mut order: Vec<((NodeKey, NodeKey), f64)> =
            pr.iter().map(|(k, v)| (*k, *v)).collect();
        order.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
        if order[0].1 < 0.0 {
            break;
        }
        // Scan descending; the first candidate that fits the budget wins.
        // Nothing is rescored on a skip.
        let mut chosen = None;
        for ((a, c), b) in order {
            if b < 0.0 {
                break;
            }
            let sc = benefit_ratio(lat, plans, ex, theta, efs, weights, OpKind::Copy, c, a);
            if sc.delta_s <= buf && sc.benefit >= 0.0 {
                chosen = Some((a, c, sc));
                break;
            }
        }
        let Some((a, c, sc)) = chosen else { break };
        buf -= sc.delta_s;
        commit(lat, plans, ex, theta, efs, weights, OpKind::Copy, c, a, sc, oplog);
        applied += 1;
        pr.remove(&(a, c));
        // Rescore pairs whose ancestor is the node that just grew.
        let keys: Vec<(NodeKey, NodeKey)> = pr.keys().copied().collect();
        for (pa, pc) in keys {
            if pa == a {
                if !eligible(lat, pc, pa) {
                    pr.remove(&(pa, pc));
                } else {
                    let sc =
                        benefit_ratio(lat, plans, ex, theta, efs, weights, OpKind::Copy, pc, pa);
                    pr.insert((pa, pc), sc.benefit);
                }
            }
        }
    }
    applied
}

/// Merge phase: repeatedly apply the best strictly-positive merge,
/// rescoring pairs that touch either merged node.
pub fn merge_phase(
    lat: &mut Lattice,
    plans: &mut KeyPlans,
    ex: &ExclusiveLattice,
    theta: &Theta,
    efs: f64,
    weights: &[f64],
    oplog: &mut Vec<OpRecord>,
) -> usize {
    let mut pr: BTreeMap<(NodeKey, NodeKey), f64> = BTreeMap::new();
    for (c, a) in da_pairs(lat) {
        let sc = benefit_ratio(lat, plans, ex, theta, efs, weights, OpKind::Merge, c, a);
        pr.insert((a, c), sc.benefit);
    }
    let mut applied = 0usize;
    while let Some(((a, c), cached)) = pr
        .iter()
        .map(|(k, v)| (*k, *v))
        .max_by(|x, y| x.1.total_cmp(&y.1).then(y.0.cmp(&x.0)))
    {
        if cached <= 0.0 {
            break;
        }
        let sc = benefit_ratio(lat, plans, ex, theta, efs, weights, OpKind::Merge, c, a);
        if sc.benefit <= 0.0 {
            pr.insert((a, c), sc.benefit);
            continue;
        }
        commit(lat, plans, ex, theta, efs, weights, OpKind::Merge, c, a, sc, oplog);
        applied += 1;
        // Drop pairs involving the deleted node, rescore pairs touching the
        // surviving one.
        let keys: Vec<(NodeKey, NodeKey)> = pr.keys().copied().collect();
        for (pa, pc) in keys {
            if pa == c || pc == c {
                pr.remove(&(pa, pc));
            } else if pa == a || pc == a {
                let sc2 = benefit_ratio(lat, plans, ex, theta, efs, weights, OpKind::Merge, pc, pa);
                pr.insert((pa, pc), sc2.benefit);
            }
        }
    }
    applied
}

pub struct Optimized {
    pub lat: Lattice,
    pub plans: KeyPlans,
    pub oplog: Vec<OpRecord>,
}

/// Full optimization loop: alternate the two phases until a whole pass
/// applies nothing. Finalization (leftover split + refinement) is separate.
pub fn veda_partition(
    ex: &ExclusiveLattice,
    theta: &Theta,
    beta: f64,
    efs: f64,
    weights: &[f64],
) -> Optimized {
    assert!(beta >= 1.0);
    let mut lat = Lattice::from_exclusive(ex);
    let mut plans = plan_all_keys(&lat, ex, theta, efs);
    let mut oplog = Vec::new();
    let budget_total = (beta * ex.n_vectors as f64).floor() as i64;
    loop {
        let c = copy_phase(&mut lat, &mut plans, ex, theta, efs, weights, budget_total, &mut oplog);
        let m = merge_phase(&mut lat, &mut plans, ex, theta, efs, weights, &mut oplog);
        if c + m == 0 {
            break;
        }
    }
    debug_assert!(lat.total_stored(ex) as i64 <= budget_total);
    Optimized { lat, plans, oplog }
}
