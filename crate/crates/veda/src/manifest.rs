//! Layout manifest: the JSON deliverable of a build run. The query
//! executor and the benchmark harness consume it instead of re-running the
//! optimizer.

use std::collections::BTreeSet;
use std::path::Path;

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use crate::access::{ExclusiveLattice, Role, RoleSet};
use crate::finalize::Layout;
use crate::lattice::{Node, NodeKey};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestMember {
    pub roles: Vec<Role>,
    pub size: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestNode {
    pub roles: Vec<Role>,
    #[serde(default)]
    pub salt: u32,
    pub members: Vec<ManifestMember>,
    pub size: u64,
    /// "indexed" or "leftover".
    pub kind: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub optimizer: String,
    pub n_roles: usize,
    pub n_vectors: usize,
    pub beta: f64,
    pub efs: f64,
    pub min_index_size: u64,
    pub achieved_sa: f64,
    /// Indexed nodes first, then leftover blocks, in plan-reference order.
    pub nodes: Vec<ManifestNode>,
    /// Per-role covers as indices into `nodes`.
    pub plans: Vec<Vec<usize>>,
}

impl Manifest {
    pub fn from_layout(
        layout: &Layout,
        ex: &ExclusiveLattice,
        optimizer: &str,
        beta: f64,
        efs: f64,
        min_index_size: u64,
    ) -> Manifest {
        let mut nodes = Vec::new();
        for n in &layout.indexed {
            nodes.push(ManifestNode {
                roles: n.key.roles.roles(),
                salt: n.key.salt,
                members: n
                    .members
                    .iter()
                    .map(|t| ManifestMember { roles: t.roles(), size: ex.block_size(*t) })
                    .collect(),
                size: n.size(ex),
                kind: "indexed".to_string(),
            });
        }
        for t in &layout.leftovers {
            let size = ex.block_size(*t);
            nodes.push(ManifestNode {
                roles: t.roles(),
                salt: 0,
                members: vec![ManifestMember { roles: t.roles(), size }],
                size,
                kind: "leftover".to_string(),
            });
        }
        Manifest {
            optimizer: optimizer.to_string(),
            n_roles: ex.n_roles,
            n_vectors: ex.n_vectors,
            beta,
            efs,
            min_index_size,
            achieved_sa: layout.storage_amplification,
            nodes,
            plans: layout.plans.clone(),
        }
    }

    /// Rebuild the in-memory layout, verifying every member block against
    /// the access metadata.
    pub fn to_layout(&self, ex: &ExclusiveLattice) -> anyhow::Result<Layout> {
        if self.n_roles != ex.n_roles || self.n_vectors != ex.n_vectors {
            bail!(
                "manifest is for {} roles / {} vectors but the access data has {} / {}",
                self.n_roles,
                self.n_vectors,
                ex.n_roles,
                ex.n_vectors
            );
        }
        let mut indexed = Vec::new();
        let mut leftovers = Vec::new();
        for mn in &self.nodes {
            let roles = RoleSet::from_roles(&mn.roles);
            let mut members = BTreeSet::new();
            for m in &mn.members {
                let tag = RoleSet::from_roles(&m.roles);
                let have = ex.block_size(tag);
                if have != m.size || have == 0 {
                    bail!(
                        "manifest block {tag} has size {} but access data says {have}",
                        m.size
                    );
                }
                members.insert(tag);
            }
            match mn.kind.as_str() {
                "indexed" => indexed.push(Node {
                    key: NodeKey { roles, salt: mn.salt },
                    members,
                }),
                "leftover" => {
                    if members.len() != 1 || !members.contains(&roles) {
                        bail!("leftover entry {roles} must hold exactly its own block");
                    }
                    leftovers.push(roles);
                }
                other => bail!("unknown node kind {other:?}"),
            }
        }
        let n_units = indexed.len() + leftovers.len();
        for (r, plan) in self.plans.iter().enumerate() {
            for &u in plan {
                if u >= n_units {
                    bail!("plan for role {r} references unit {u} of {n_units}");
                }
            }
        }
        if self.plans.len() != self.n_roles {
            bail!("manifest has {} plans for {} roles", self.plans.len(), self.n_roles);
        }
        Ok(Layout {
            indexed,
            leftovers,
            plans: self.plans.clone(),
            storage_amplification: self.achieved_sa,
        })
    }

    pub fn save(&self, path: &Path) -> anyhow::Result<()> {
        let f = std::fs::File::create(path)
            .with_context(|| format!("creating {}", path.display()))?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(f), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> anyhow::Result<Manifest> {
        let f = std::fs::File::open(path)
            .with_context(|| format!("opening {}", path.display()))?;
        Ok(serde_json::from_reader(std::io::BufReader::new(f))?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::access::{build_exclusive_lattice, AccessMatrix};
    use crate::bench::{gen_policy, PolicySpec};
    use crate::cost::Theta;
    use crate::effveda::effveda_run;

    #[test]
    fn roundtrip_preserves_layout_and_recount_matches_sa() {
        let am = gen_policy(&PolicySpec::default(), 4_000);
        let ex = build_exclusive_lattice(&am).unwrap();
        let theta = Theta::reference();
        let out = effveda_run(&ex, &theta, 1.5, 100.0, 64);
        let m = Manifest::from_layout(&out.layout, &ex, "effveda", 1.5, 100.0, 64);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("layout.json");
        m.save(&p).unwrap();
        let m2 = Manifest::load(&p).unwrap();
        let back = m2.to_layout(&ex).unwrap();
        assert_eq!(back.plans, out.layout.plans);
        assert_eq!(back.leftovers, out.layout.leftovers);
        assert_eq!(back.indexed.len(), out.layout.indexed.len());
        for (a, b) in back.indexed.iter().zip(&out.layout.indexed) {
            assert_eq!(a.key, b.key);
            assert_eq!(a.members, b.members);
        }
        // Manifest recount equals the reported storage amplification.
        let stored: u64 = m2.nodes.iter().map(|n| n.size).sum();
        let sa = stored as f64 / ex.n_vectors as f64;
        assert!((sa - m2.achieved_sa).abs() < 1e-9);
    }

    #[test]
    fn corrupted_block_size_rejected() {
        let am = AccessMatrix::from_rows(2, &[vec![0], vec![0, 1], vec![1]]).unwrap();
        let ex = build_exclusive_lattice(&am).unwrap();
        let theta = Theta::reference();
        let out = effveda_run(&ex, &theta, 2.0, 10.0, 1);
        let mut m = Manifest::from_layout(&out.layout, &ex, "effveda", 2.0, 10.0, 1);
        m.nodes[0].members[0].size += 1;
        assert!(m.to_layout(&ex).is_err());
    }
}
