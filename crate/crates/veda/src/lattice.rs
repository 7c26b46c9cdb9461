//! Mutable partition state shared by both optimizers: nodes keyed by role
//! set, each holding a set of exclusive-block tags.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::access::{ExclusiveLattice, Role, RoleSet};

/// Node key: the role set plus a salt so a separated or relabeled group can
/// coexist with an original node of the same role set. Salt 0 is the
/// original key.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeKey {
    pub roles: RoleSet,
    pub salt: u32,
}

impl NodeKey {
    pub fn base(roles: RoleSet) -> NodeKey {
        NodeKey { roles, salt: 0 }
    }
}

impl fmt::Debug for NodeKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.salt == 0 {
            write!(f, "{}", self.roles)
        } else {
            write!(f, "{}#{}", self.roles, self.salt)
        }
    }
}

impl fmt::Display for NodeKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone)]
pub struct Node {
    pub key: NodeKey,
    /// Tags of the exclusive blocks stored in this node. Blocks are
    /// disjoint, so the node's id set is their exact union.
    pub members: BTreeSet<RoleSet>,
}

impl Node {
    pub fn size(&self, ex: &ExclusiveLattice) -> u64 {
        self.members.iter().map(|t| ex.block_size(*t)).sum()
    }

    /// Total size of the member blocks authorized for role r.
    pub fn omega(&self, ex: &ExclusiveLattice, r: Role) -> u64 {
        self.members
            .iter()
            .filter(|t| t.contains(r))
            .map(|t| ex.block_size(*t))
            .sum()
    }

    pub fn pure_for(&self, ex: &ExclusiveLattice, r: Role) -> bool {
        self.members.iter().all(|t| t.contains(r))
            || self.omega(ex, r) == self.size(ex)
    }
}

#[derive(Debug, Clone, Default)]
pub struct Lattice {
    pub nodes: BTreeMap<NodeKey, Node>,
}

impl Lattice {
    /// The starting layout: one node per exclusive block.
    pub fn from_exclusive(ex: &ExclusiveLattice) -> Lattice {
        let mut nodes = BTreeMap::new();
        for tag in ex.blocks.keys() {
            let key = NodeKey::base(*tag);
            let mut members = BTreeSet::new();
            members.insert(*tag);
            nodes.insert(key, Node { key, members });
        }
        Lattice { nodes }
    }

    /// Stored vectors counting duplicates across nodes.
    pub fn total_stored(&self, ex: &ExclusiveLattice) -> u64 {
        self.nodes.values().map(|n| n.size(ex)).sum()
    }

    pub fn storage_amplification(&self, ex: &ExclusiveLattice) -> f64 {
        self.total_stored(ex) as f64 / ex.n_vectors as f64
    }

    /// Every exclusive block must live in at least one node.
    pub fn coverage_ok(&self, ex: &ExclusiveLattice) -> bool {
        ex.blocks.keys().all(|t| {
            self.nodes.values().any(|n| n.members.contains(t))
        })
    }
}
