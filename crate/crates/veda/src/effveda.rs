//! The fast bottom-up optimizer: a single copy pass that distributes whole
//! nodes into valid partitions of their role sets, then a merge pass that
//! grows sub-threshold nodes via virtual-decomposition scoring. Shares the
//! exhaustive optimizer's finalization.

use std::collections::BTreeMap;

use crate::access::{ExclusiveLattice, RoleSet};
use crate::cost::Theta;
use crate::finalize::{finalize, Layout};
use crate::lattice::{Lattice, Node, NodeKey};

/// Per-role gain of copying a node of size n_c into an ancestor of size
/// n_a: two index probes collapse into one over the combined data.
pub fn delta_c(theta: &Theta, efs: f64, n_a: u64, n_c: u64) -> f64 {
    let logs = ((n_a + 1) as f64).log2() + ((n_c + 1) as f64).log2()
        - ((n_a + n_c + 1) as f64).log2();
    theta.a * logs + theta.b * efs + theta.c
}

/// A valid partition of a node's role set: disjoint present-ancestor role
/// sets, plus the leftover roles (if any) that keep the node alive under a
/// new key.
#[derive(Debug, Clone)]
pub struct Partition {
    pub ancestors: Vec<RoleSet>,
    pub residual: Option<RoleSet>,
    /// Total predicted cost drop, the weighted sum of per-role gains.
    pub gain: f64,
    /// Gain per unit of added storage.
    pub score: f64,
}

impl Partition {
    pub fn parts(&self) -> usize {
        self.ancestors.len() + usize::from(self.residual.is_some())
    }
}

/// Best valid partition for one node: prefer the best two-way exact cover;
/// otherwise extend the best single ancestor greedily over disjoint
/// ancestors (largest role sets first) and relabel what remains.
pub fn find_best_partition(
    lat: &Lattice,
    ex: &ExclusiveLattice,
    key: NodeKey,
    theta: &Theta,
    efs: f64,
    buf: i64,
) -> Option<Partition> {
    let node = &lat.nodes[&key];
    let tau = key.roles;
    let size = node.size(ex);
    if size as i64 > buf {
        return None;
    }
    let mut ancs: Vec<(RoleSet, u64)> = lat
        .nodes
        .values()
        .filter(|n| n.key.roles.is_strict_subset(tau))
        .map(|n| (n.key.roles, n.size(ex)))
        .collect();
    if ancs.is_empty() {
        return None;
    }
    ancs.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then(a.0.cmp(&b.0)));
    let by_tag: BTreeMap<RoleSet, u64> = ancs.iter().copied().collect();

    // Stage 1: two-way exact covers, keeping the best singleton seed as a
    // fallback.
    let mut best: Vec<RoleSet> = Vec::new();
    let mut best_gain = 0.0f64;
    for &(t1, s1) in &ancs {
        let mut p = vec![t1];
        let mut g = t1.len() as f64 * delta_c(theta, efs, s1, size);
        let t2 = tau.minus(t1);
        if let Some(&s2) = by_tag.get(&t2) {
            p.push(t2);
            g += t2.len() as f64 * delta_c(theta, efs, s2, size);
        }
        if g > best_gain {
            best = p;
            best_gain = g;
        }
    }
    if best.len() == 2 {
        return Some(Partition {
            ancestors: best,
            residual: None,
            gain: best_gain,
            score: best_gain / size as f64,
        });
    }

    // Stage 2: greedy disjoint extension from the seed.
    let seed = best[0];
    let mut res = tau.minus(seed);
    let mut chosen = vec![seed];
    let mut gain = best_gain;
    let mut delta_s: i64 = 0;
    for &(t, s) in &ancs {
        if t.is_subset(res) {
            delta_s += size as i64;
            if delta_s > buf {
                break;
            }
            res = res.minus(t);
            chosen.push(t);
            gain += t.len() as f64 * delta_c(theta, efs, s, size);
        }
    }
    let residual = (!res.is_empty()).then_some(res);
    let parts = chosen.len() + usize::from(residual.is_some());
    Some(Partition {
        ancestors: chosen,
        residual,
        gain,
        score: gain / (size as f64 * (parts - 1) as f64),
    })
}

#[derive(Debug, Clone)]
pub struct CopyRecord {
    pub node: NodeKey,
    pub node_size: u64,
    pub partition: Partition,
    /// Storage charged against the budget: node size times added copies.
    pub delta_s: i64,
}

/// Copy phase: one bottom-up sweep, layer by layer down to pairs. All
/// nodes on a layer are scored against the same lower layers, then
/// committed in descending score order while the budget lasts.
pub fn effveda_copy(
    ex: &ExclusiveLattice,
    theta: &Theta,
    beta: f64,
    efs: f64,
) -> (Lattice, Vec<CopyRecord>) {
    let mut lat = Lattice::from_exclusive(ex);
    let mut log = Vec::new();
    let mut buf = (beta * ex.n_vectors as f64).floor() as i64 - ex.n_vectors as i64;
    if buf <= 0 {
        return (lat, log);
    }
    let depth = ex.max_layer();
    for layer in (2..=depth).rev() {
        let mut scored: Vec<(NodeKey, Partition)> = lat
            .nodes
            .keys()
            .copied()
            .filter(|k| k.roles.len() == layer)
            .filter_map(|k| {
                find_best_partition(&lat, ex, k, theta, efs, buf).map(|p| (k, p))
            })
            .collect();
        scored.sort_by(|x, y| y.1.score.total_cmp(&x.1.score).then(x.0.cmp(&y.0)));
        for (k, p) in scored {
            let node_size = lat.nodes[&k].size(ex);
            let delta_s = node_size as i64 * (p.parts() - 1) as i64;
            if delta_s > buf {
                continue;
            }
            let members = lat.nodes[&k].members.clone();
            for &t in &p.ancestors {
                lat.nodes
                    .get_mut(&NodeKey::base(t))
                    .expect("ancestor present")
                    .members
                    .extend(members.iter().copied());
            }
            if let Some(res) = p.residual {
                let rk = NodeKey::base(res);
                match lat.nodes.get_mut(&rk) {
                    Some(n) => n.members.extend(members.iter().copied()),
                    None => {
                        lat.nodes.insert(rk, Node { key: rk, members: members.clone() });
                    }
                }
            }
            lat.nodes.remove(&k);
            buf -= delta_s;
            log.push(CopyRecord { node: k, node_size, partition: p, delta_s });
        }
    }
    (lat, log)
}

/// One frozen post-copy node: its key role set and size at freeze time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct FrozenRec {
    pub tag: RoleSet,
    pub size: u64,
}

/// Virtual decomposition: each live node owns a disjoint set of frozen
/// post-copy records; the family partitions the post-copy lattice.
pub type VDecomp = BTreeMap<NodeKey, Vec<FrozenRec>>;
/// Routed roles per live node.
pub type Routed = BTreeMap<NodeKey, RoleSet>;

/// Inherited-routing cost of one node for one routed role, with the
/// impurity factor read off the virtual decomposition (fractional, since
/// this is a scoring estimate rather than an executed beam width).
fn h_role(theta: &Theta, efs: f64, size: u64, lambda: f64) -> f64 {
    theta.a * ((size + 1) as f64).log2() + theta.b * lambda * efs + theta.c
}

fn h_node(
    theta: &Theta,
    efs: f64,
    size: u64,
    recs: &[FrozenRec],
    routed: RoleSet,
) -> f64 {
    routed
        .iter()
        .map(|r| {
            let omega: u64 = recs.iter().filter(|v| v.tag.contains(r)).map(|v| v.size).sum();
            h_role(theta, efs, size, size as f64 / omega.max(1) as f64)
        })
        .sum()
}

/// Merge benefit under inherited routing: total routed cost of the two
/// nodes minus the routed cost of their union. Zero storage change, so the
/// raw reduction is the ratio.
pub fn merge_benefit(
    lat: &Lattice,
    ex: &ExclusiveLattice,
    vd: &VDecomp,
    routed: &Routed,
    theta: &Theta,
    efs: f64,
    a: NodeKey,
    b: NodeKey,
) -> f64 {
    assert_ne!(a, b, "cannot merge a node with itself");
    let na = &lat.nodes[&a];
    let nb = &lat.nodes[&b];
    let ha = h_node(theta, efs, na.size(ex), &vd[&a], routed[&a]);
    let hb = h_node(theta, efs, nb.size(ex), &vd[&b], routed[&b]);
    let mut union = na.members.clone();
    union.extend(nb.members.iter().copied());
    let msize: u64 = union.iter().map(|t| ex.block_size(*t)).sum();
    let mut recs = vd[&a].clone();
    recs.extend(vd[&b].iter().copied());
    let hm = h_node(theta, efs, msize, &recs, routed[&a].union(routed[&b]));
    ha + hb - hm
}

#[derive(Debug, Clone)]
pub struct MergeRecord {
    pub into: NodeKey,
    pub absorbed: NodeKey,
    pub benefit: f64,
}

fn get_candidates(lat: &Lattice, key: NodeKey) -> Vec<NodeKey> {
    let tau = key.roles;
    lat.nodes
        .keys()
        .copied()
        .filter(|k| {
            *k != key
                && (k.roles.is_strict_subset(tau)
                    || tau.is_strict_subset(k.roles)
                    || (k.roles.len() == tau.len()
                        && k.roles != tau
                        && !k.roles.intersect(tau).is_empty()))
        })
        .collect()
}

pub struct MergeOutcome {
    pub lat: Lattice,
    pub vd: VDecomp,
    pub routed: Routed,
    pub log: Vec<MergeRecord>,
}

/// Merge phase: visit nodes largest first; while a node is below the
/// indexing threshold, absorb related nodes in descending cached benefit,
/// re-scoring after the first absorption, and revisit the node with fresh
/// candidates as long as it keeps making progress.
pub fn effveda_merge(
    post_copy: &Lattice,
    ex: &ExclusiveLattice,
    theta: &Theta,
    efs: f64,
    min_index_size: u64,
) -> MergeOutcome {
    let mut lat = post_copy.clone();
    let mut vd: VDecomp = lat
        .nodes
        .values()
        .map(|n| (n.key, vec![FrozenRec { tag: n.key.roles, size: n.size(ex) }]))
        .collect();
    let mut routed: Routed = lat.nodes.keys().map(|k| (*k, k.roles)).collect();
    let mut log = Vec::new();

    let mut order: Vec<NodeKey> = lat.nodes.keys().copied().collect();
    order.sort_by(|x, y| {
        lat.nodes[y]
            .size(ex)
            .cmp(&lat.nodes[x].size(ex))
            .then(x.cmp(y))
    });
    let mut i = 0usize;
    while i < order.len() {
        let key = order[i];
        if !lat.nodes.contains_key(&key) || lat.nodes[&key].size(ex) >= min_index_size {
            i += 1;
            continue;
        }
        let mut scored: Vec<(NodeKey, f64)> = get_candidates(&lat, key)
            .into_iter()
            .map(|c| (c, merge_benefit(&lat, ex, &vd, &routed, theta, efs, key, c)))
            .collect();
        scored.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
        let mut applied = 0usize;
        for (cand, cached) in scored {
            if !lat.nodes.contains_key(&cand) {
                continue;
            }
            if cached <= 0.0 {
                break;
            }
            let benefit = if applied == 0 {
                cached
            } else {
                let fresh = merge_benefit(&lat, ex, &vd, &routed, theta, efs, key, cand);
                if fresh <= 0.0 {
                    continue;
                }
                fresh
            };
            let moved = lat.nodes.remove(&cand).unwrap();
            lat.nodes.get_mut(&key).unwrap().members.extend(moved.members);
            let recs = vd.remove(&cand).unwrap();
            vd.get_mut(&key).unwrap().extend(recs);
            let pr = routed.remove(&cand).unwrap();
            let e = routed.get_mut(&key).unwrap();
            *e = e.union(pr);
            log.push(MergeRecord { into: key, absorbed: cand, benefit });
            applied += 1;
            if lat.nodes[&key].size(ex) >= min_index_size {
                break;
            }
        }
        if lat.nodes[&key].size(ex) >= min_index_size || applied == 0 {
            i += 1;
        }
        // Otherwise revisit the same node with a fresh candidate set.
    }
    MergeOutcome { lat, vd, routed, log }
}

/// Workload-average cost of the inherited routing: every routed role pays
/// for its containers, impurity read from the decomposition.
pub fn inherited_avg_cost(
    lat: &Lattice,
    ex: &ExclusiveLattice,
    vd: &VDecomp,
    routed: &Routed,
    weights: &[f64],
    theta: &Theta,
    efs: f64,
) -> f64 {
    lat.nodes
        .values()
        .map(|n| {
            let size = n.size(ex);
            routed[&n.key]
                .iter()
                .map(|r| {
                    let omega: u64 = vd[&n.key]
                        .iter()
                        .filter(|v| v.tag.contains(r))
                        .map(|v| v.size)
                        .sum();
                    weights[r as usize]
                        * h_role(theta, efs, size, size as f64 / omega.max(1) as f64)
                })
                .sum::<f64>()
        })
        .sum()
}

pub struct EffVedaOutcome {
    pub post_copy: Lattice,
    pub copy_log: Vec<CopyRecord>,
    pub merge: MergeOutcome,
    pub layout: Layout,
}

pub fn effveda_run(
    ex: &ExclusiveLattice,
    theta: &Theta,
    beta: f64,
    efs: f64,
    min_index_size: u64,
) -> EffVedaOutcome {
    let (post_copy, copy_log) = effveda_copy(ex, theta, beta, efs);
    let merge = effveda_merge(&post_copy, ex, theta, efs, min_index_size);
    let layout = finalize(&merge.lat, ex, theta, efs, beta, min_index_size);
    EffVedaOutcome { post_copy, copy_log, merge, layout }
}
