//! Per-role query plans: minimal covers of the role's authorized blocks
//! over the current layout. Mandatory units (sole holders of a block) are
//! fixed first; the rest is covered greedily or by exact branch-and-bound
//! set cover on small instances.

use std::collections::{BTreeMap, BTreeSet};

use crate::access::{ExclusiveLattice, Role, RoleSet};
use crate::cost::{entry_cost, PlanEntryCost, Theta};
use crate::lattice::{Lattice, NodeKey};

pub const EXACT_PLAN_LIMIT: usize = 24;

/// A coverage unit: either a (future) graph index over a node, or a single
/// leftover block scanned linearly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum UnitRef {
    Node(NodeKey),
    Block(RoleSet),
}

#[derive(Debug, Clone)]
pub struct Unit {
    pub uref: UnitRef,
    /// Member block tags with their sizes.
    pub members: Vec<(RoleSet, u64)>,
    pub size: u64,
}

impl Unit {
    pub fn omega(&self, r: Role) -> u64 {
        self.members
            .iter()
            .filter(|(t, _)| t.contains(r))
            .map(|(_, s)| s)
            .sum()
    }

    pub fn entry_for(&self, r: Role) -> PlanEntryCost {
        match self.uref {
            UnitRef::Block(_) => PlanEntryCost::Scan { size: self.size },
            UnitRef::Node(_) => {
                let omega = self.omega(r);
                let pure = omega == self.size;
                let lambda = if pure { 1 } else { self.size.div_ceil(omega.max(1)) };
                PlanEntryCost::Index { size: self.size, pure, lambda }
            }
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Catalog {
    pub units: Vec<Unit>,
}

impl Catalog {
    pub fn from_lattice(lat: &Lattice, ex: &ExclusiveLattice) -> Catalog {
        let units = lat
            .nodes
            .values()
            .map(|n| Unit {
                uref: UnitRef::Node(n.key),
                members: n.members.iter().map(|t| (*t, ex.block_size(*t))).collect(),
                size: n.size(ex),
            })
            .collect();
        Catalog { units }
    }

    /// Indexed nodes followed by leftover blocks.
    pub fn from_parts(
        indexed: &[crate::lattice::Node],
        leftovers: &[RoleSet],
        ex: &ExclusiveLattice,
    ) -> Catalog {
        let mut units: Vec<Unit> = indexed
            .iter()
            .map(|n| Unit {
                uref: UnitRef::Node(n.key),
                members: n.members.iter().map(|t| (*t, ex.block_size(*t))).collect(),
                size: n.size(ex),
            })
            .collect();
        for t in leftovers {
            units.push(Unit {
                uref: UnitRef::Block(*t),
                members: vec![(*t, ex.block_size(*t))],
                size: ex.block_size(*t),
            });
        }
        Catalog { units }
    }

    pub fn unit_cost(&self, i: usize, r: Role, theta: &Theta, efs: f64) -> f64 {
        entry_cost(theta, &self.units[i].entry_for(r), efs)
    }

    pub fn plan_cost(&self, plan: &[usize], r: Role, theta: &Theta, efs: f64) -> f64 {
        plan.iter().map(|&i| self.unit_cost(i, r, theta, efs)).sum()
    }

    /// Branch-and-bound / greedy objective: sum of log2(|unit|+1).
    pub fn plan_objective(&self, plan: &[usize]) -> f64 {
        plan.iter()
            .map(|&i| ((self.units[i].size + 1) as f64).log2())
            .sum()
    }
}

/// Inverted index block tag -> unit indices holding that block.
pub fn build_phi(cat: &Catalog) -> BTreeMap<RoleSet, Vec<usize>> {
    let mut phi: BTreeMap<RoleSet, Vec<usize>> = BTreeMap::new();
    for (i, u) in cat.units.iter().enumerate() {
        for (t, _) in &u.members {
            phi.entry(*t).or_default().push(i);
        }
    }
    phi
}

fn needed_tags(ex: &ExclusiveLattice, r: Role) -> Vec<RoleSet> {
    ex.blocks.keys().copied().filter(|t| t.contains(r)).collect()
}

struct PlanProblem {
    mandatory: Vec<usize>,
    pending: Vec<RoleSet>,
}

fn split_mandatory(
    cat: &Catalog,
    phi: &BTreeMap<RoleSet, Vec<usize>>,
    needed: &[RoleSet],
) -> PlanProblem {
    let mut mandatory: BTreeSet<usize> = BTreeSet::new();
    for t in needed {
        let cands = phi.get(t).unwrap_or_else(|| {
            panic!("coverage violation: block {t} not present in any unit")
        });
        if cands.len() == 1 {
            mandatory.insert(cands[0]);
        }
    }
    let covered: BTreeSet<RoleSet> = mandatory
        .iter()
        .flat_map(|&i| cat.units[i].members.iter().map(|(t, _)| *t))
        .collect();
    let pending = needed
        .iter()
        .copied()
        .filter(|t| !covered.contains(t))
        .collect();
    PlanProblem { mandatory: mandatory.into_iter().collect(), pending }
}

/// Greedy cover. Two deterministic heuristics are built -- one maximizing
/// per-step block coverage, one minimizing per-block marginal model cost --
/// and the cheaper full plan under the cost model wins.
pub fn plan_role_greedy(
    cat: &Catalog,
    phi: &BTreeMap<RoleSet, Vec<usize>>,
    ex: &ExclusiveLattice,
    r: Role,
    theta: &Theta,
    efs: f64,
) -> Vec<usize> {
    let needed = needed_tags(ex, r);
    if needed.is_empty() {
        return Vec::new();
    }
    let prob = split_mandatory(cat, phi, &needed);
    if prob.pending.is_empty() {
        return prob.mandatory;
    }

    // Heuristic A: most remaining blocks covered per step.
    let mut cover_a: BTreeSet<usize> = prob.mandatory.iter().copied().collect();
    let mut pending: BTreeSet<RoleSet> = prob.pending.iter().copied().collect();
    while !pending.is_empty() {
        let mut cands: BTreeSet<usize> = BTreeSet::new();
        for t in &pending {
            cands.extend(phi[t].iter().copied());
        }
        let best = cands
            .into_iter()
            .map(|i| {
                let gain = cat.units[i]
                    .members
                    .iter()
                    .filter(|(t, _)| pending.contains(t))
                    .count();
                (i, gain)
            })
            .max_by(|a, b| {
                a.1.cmp(&b.1)
                    .then(cat.units[b.0].size.cmp(&cat.units[a.0].size))
                    .then(b.0.cmp(&a.0))
            })
            .map(|(i, _)| i)
            .unwrap();
        cover_a.insert(best);
        pending.retain(|t| !cat.units[best].members.iter().any(|(m, _)| m == t));
    }

    // Heuristic B: per pending block, the candidate with the smallest
    // marginal modeled cost (free if already chosen).
    let mut cover_b: BTreeSet<usize> = prob.mandatory.iter().copied().collect();
    for t in &prob.pending {
        if cover_b
            .iter()
            .any(|&i| cat.units[i].members.iter().any(|(m, _)| m == t))
        {
            continue;
        }
        let best = phi[t]
            .iter()
            .copied()
            .min_by(|&a, &b| {
                let ca = if cover_b.contains(&a) { 0.0 } else { cat.unit_cost(a, r, theta, efs) };
                let cb = if cover_b.contains(&b) { 0.0 } else { cat.unit_cost(b, r, theta, efs) };
                ca.total_cmp(&cb)
                    .then(cat.units[a].size.cmp(&cat.units[b].size))
                    .then(a.cmp(&b))
            })
            .unwrap();
        cover_b.insert(best);
    }

    let a: Vec<usize> = cover_a.into_iter().collect();
    let b: Vec<usize> = cover_b.into_iter().collect();
    if cat.plan_cost(&a, r, theta, efs) <= cat.plan_cost(&b, r, theta, efs) {
        a
    } else {
        b
    }
}

/// Exact minimum-objective cover over the pending blocks by depth-first
/// branch and bound; falls back to greedy when the candidate-variable count
/// exceeds `limit`.
pub fn plan_role_exact(
    cat: &Catalog,
    phi: &BTreeMap<RoleSet, Vec<usize>>,
    ex: &ExclusiveLattice,
    r: Role,
    theta: &Theta,
    efs: f64,
    limit: usize,
) -> Vec<usize> {
    let needed = needed_tags(ex, r);
    if needed.is_empty() {
        return Vec::new();
    }
    let prob = split_mandatory(cat, phi, &needed);
    if prob.pending.is_empty() {
        return prob.mandatory;
    }
    let mut vars: BTreeSet<usize> = BTreeSet::new();
    for t in &prob.pending {
        vars.extend(phi[t].iter().copied());
    }
    if vars.len() > limit {
        return plan_role_greedy(cat, phi, ex, r, theta, efs);
    }

    let greedy = plan_role_greedy(cat, phi, ex, r, theta, efs);
    let mandatory_obj = cat.plan_objective(&prob.mandatory);
    let mut best_obj = cat.plan_objective(&greedy) - mandatory_obj;
    let greedy_pending: Vec<usize> = greedy
        .iter()
        .copied()
        .filter(|i| !prob.mandatory.contains(i))
        .collect();
    let mut best_set = greedy_pending;

    fn dfs(
        cat: &Catalog,
        phi: &BTreeMap<RoleSet, Vec<usize>>,
        uncovered: &BTreeSet<RoleSet>,
        chosen: &mut Vec<usize>,
        acc: f64,
        best_obj: &mut f64,
        best_set: &mut Vec<usize>,
    ) {
        if uncovered.is_empty() {
            if acc < *best_obj - 1e-12 {
                *best_obj = acc;
                *best_set = chosen.clone();
            }
            return;
        }
        if acc >= *best_obj - 1e-12 {
            return;
        }
        // Branch on the uncovered block with the fewest candidates.
        let t = uncovered
            .iter()
            .min_by_key(|t| phi[t].len())
            .copied()
            .unwrap();
        let mut cands: Vec<usize> = phi[&t].clone();
        cands.sort_by(|&a, &b| {
            cat.units[a].size.cmp(&cat.units[b].size).then(a.cmp(&b))
        });
        for i in cands {
            let w = ((cat.units[i].size + 1) as f64).log2();
            let mut rest = uncovered.clone();
            rest.retain(|u| !cat.units[i].members.iter().any(|(m, _)| m == u));
            chosen.push(i);
            dfs(cat, phi, &rest, chosen, acc + w, best_obj, best_set);
            chosen.pop();
        }
    }

    let uncovered: BTreeSet<RoleSet> = prob.pending.iter().copied().collect();
    let mut chosen = Vec::new();
    dfs(cat, phi, &uncovered, &mut chosen, 0.0, &mut best_obj, &mut best_set);

    let mut out: BTreeSet<usize> = prob.mandatory.iter().copied().collect();
    out.extend(best_set);
    out.into_iter().collect()
}

/// Per-role plans for every role, plus the role weights of a uniform
/// single-role workload (zero weight for roles without data).
pub fn plan_all_roles(
    cat: &Catalog,
    ex: &ExclusiveLattice,
    theta: &Theta,
    efs: f64,
    exact: bool,
) -> Vec<Vec<usize>> {
    let phi = build_phi(cat);
    (0..ex.n_roles as Role)
        .map(|r| {
            if exact {
                plan_role_exact(cat, &phi, ex, r, theta, efs, EXACT_PLAN_LIMIT)
            } else {
                plan_role_greedy(cat, &phi, ex, r, theta, efs)
            }
        })
        .collect()
}

pub fn uniform_weights(ex: &ExclusiveLattice) -> Vec<f64> {
    let active = ex.active_roles();
    let w = if active.is_empty() { 0.0 } else { 1.0 / active.len() as f64 };
    (0..ex.n_roles as Role)
        .map(|r| if active.contains(&r) { w } else { 0.0 })
        .collect()
}

/// Workload-average modeled cost of a full plan set.
pub fn avg_cost_plans(
    cat: &Catalog,
    plans: &[Vec<usize>],
    weights: &[f64],
    theta: &Theta,
    efs: f64,
) -> f64 {
    plans
        .iter()
        .enumerate()
        .map(|(r, p)| weights[r] * cat.plan_cost(p, r as Role, theta, efs))
        .sum()
}
