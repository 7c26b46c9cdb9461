//! Roles, role-set tags, the CSR access matrix and the exclusive lattice:
//! blocks of vectors that share exactly the same role set, ordered by
//! role-set inclusion.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::vectors::{Id, IdSet};

pub type Role = u16;

pub const MAX_ROLES: usize = 128;

#[derive(Debug, Error)]
pub enum AccessError {
    #[error("vector {0} has an empty role set")]
    EmptyRow(Id),
    #[error("role {0} out of range (max {MAX_ROLES})")]
    RoleRange(Role),
    #[error("unknown role {0}")]
    UnknownRole(Role),
    #[error("access file format error: {0}")]
    Format(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// A set of roles as a 128-bit bitset. Ordering over the raw word gives a
/// canonical map key.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct RoleSet(pub u128);

impl RoleSet {
    pub fn empty() -> Self {
        RoleSet(0)
    }

    pub fn singleton(r: Role) -> Self {
        assert!((r as usize) < MAX_ROLES);
        RoleSet(1u128 << r)
    }

    pub fn from_roles(roles: &[Role]) -> Self {
        let mut s = RoleSet(0);
        for &r in roles {
            s = s.with(r);
        }
        s
    }

    pub fn with(self, r: Role) -> Self {
        assert!((r as usize) < MAX_ROLES);
        RoleSet(self.0 | (1u128 << r))
    }

    pub fn contains(self, r: Role) -> bool {
        (r as usize) < MAX_ROLES && self.0 & (1u128 << r) != 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn union(self, o: RoleSet) -> RoleSet {
        RoleSet(self.0 | o.0)
    }

    pub fn intersect(self, o: RoleSet) -> RoleSet {
        RoleSet(self.0 & o.0)
    }

    pub fn minus(self, o: RoleSet) -> RoleSet {
        RoleSet(self.0 & !o.0)
    }

    /// True when self is a subset of o (possibly equal).
    pub fn is_subset(self, o: RoleSet) -> bool {
        self.0 & !o.0 == 0
    }

    pub fn is_strict_subset(self, o: RoleSet) -> bool {
        self != o && self.is_subset(o)
    }

    pub fn iter(self) -> impl Iterator<Item = Role> {
        (0..MAX_ROLES as Role).filter(move |r| self.contains(*r))
    }

    pub fn roles(self) -> Vec<Role> {
        self.iter().collect()
    }
}

impl fmt::Debug for RoleSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, r) in self.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "r{r}")?;
        }
        write!(f, "}}")
    }
}

impl fmt::Display for RoleSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Vector id -> sorted role list, CSR layout.
#[derive(Debug, Clone)]
pub struct AccessMatrix {
    pub n_roles: usize,
    indptr: Vec<u32>,
    indices: Vec<Role>,
}

impl AccessMatrix {
    pub fn from_rows(n_roles: usize, rows: &[Vec<Role>]) -> Result<Self, AccessError> {
        assert!(n_roles <= MAX_ROLES);
        let mut indptr = Vec::with_capacity(rows.len() + 1);
        let mut indices = Vec::new();
        indptr.push(0u32);
        for (id, row) in rows.iter().enumerate() {
            if row.is_empty() {
                return Err(AccessError::EmptyRow(id as Id));
            }
            let mut sorted = row.clone();
            sorted.sort_unstable();
            sorted.dedup();
            for &r in &sorted {
                if r as usize >= n_roles {
                    return Err(AccessError::RoleRange(r));
                }
                indices.push(r);
            }
            indptr.push(indices.len() as u32);
        }
        Ok(AccessMatrix { n_roles, indptr, indices })
    }

    pub fn n_rows(&self) -> usize {
        self.indptr.len() - 1
    }

    pub fn row(&self, id: Id) -> &[Role] {
        let (s, e) = (self.indptr[id as usize] as usize, self.indptr[id as usize + 1] as usize);
        &self.indices[s..e]
    }

    pub fn roleset(&self, id: Id) -> RoleSet {
        RoleSet::from_roles(self.row(id))
    }

    /// Serialize as four little-endian sections: n_roles, n_rows, nnz,
    /// indptr (u32 each), indices (u16 each).
    pub fn save_csr(&self, path: &Path) -> Result<(), AccessError> {
        let mut wr = BufWriter::new(File::create(path)?);
        wr.write_all(&(self.n_roles as u32).to_le_bytes())?;
        wr.write_all(&(self.n_rows() as u32).to_le_bytes())?;
        wr.write_all(&(self.indices.len() as u32).to_le_bytes())?;
        for v in &self.indptr {
            wr.write_all(&v.to_le_bytes())?;
        }
        for v in &self.indices {
            wr.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn load_csr(path: &Path) -> Result<Self, AccessError> {
        let mut rd = BufReader::new(File::open(path)?);
        let mut buf = Vec::new();
        rd.read_to_end(&mut buf)?;
        let take_u32 = |buf: &[u8], off: usize| -> Result<u32, AccessError> {
            buf.get(off..off + 4)
                .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
                .ok_or_else(|| AccessError::Format("truncated header".into()))
        };
        let n_roles = take_u32(&buf, 0)? as usize;
        let n_rows = take_u32(&buf, 4)? as usize;
        let nnz = take_u32(&buf, 8)? as usize;
        let need = 12 + 4 * (n_rows + 1) + 2 * nnz;
        if buf.len() != need {
            return Err(AccessError::Format(format!(
                "expected {need} bytes, found {}",
                buf.len()
            )));
        }
        let mut indptr = Vec::with_capacity(n_rows + 1);
        for i in 0..=n_rows {
            indptr.push(take_u32(&buf, 12 + 4 * i)?);
        }
        let base = 12 + 4 * (n_rows + 1);
        let mut indices = Vec::with_capacity(nnz);
        for i in 0..nnz {
            indices.push(u16::from_le_bytes(
                buf[base + 2 * i..base + 2 * i + 2].try_into().unwrap(),
            ));
        }
        let am = AccessMatrix { n_roles, indptr, indices };
        for id in 0..am.n_rows() as Id {
            let row = am.row(id);
            if row.is_empty() {
                return Err(AccessError::EmptyRow(id));
            }
            if !row.windows(2).all(|w| w[0] < w[1]) {
                return Err(AccessError::Format(format!(
                    "row {id} not strictly increasing"
                )));
            }
        }
        Ok(am)
    }

    /// JSON-lines alternative: one {"id":..,"roles":[..]} object per line.
    pub fn save_jsonl(&self, path: &Path) -> Result<(), AccessError> {
        let mut wr = BufWriter::new(File::create(path)?);
        for id in 0..self.n_rows() as Id {
            let roles: Vec<Role> = self.row(id).to_vec();
            let line = serde_json::json!({ "id": id, "roles": roles });
            writeln!(wr, "{line}")?;
        }
        Ok(())
    }
}

/// The exclusive block for tag τ: ids of vectors accessible to exactly τ.
#[derive(Debug, Clone)]
pub struct ExclusiveBlock {
    pub tag: RoleSet,
    pub ids: Vec<Id>,
}

/// All exclusive blocks keyed by tag; the base partition of the dataset.
#[derive(Debug, Clone)]
pub struct ExclusiveLattice {
    pub n_roles: usize,
    pub n_vectors: usize,
    pub blocks: BTreeMap<RoleSet, ExclusiveBlock>,
}

/// Parent/ancestor/descendant/sibling maps over the present tags.
#[derive(Debug, Clone, Default)]
pub struct Relations {
    pub parents: BTreeMap<RoleSet, Vec<RoleSet>>,
    pub children: BTreeMap<RoleSet, Vec<RoleSet>>,
    pub ancestors: BTreeMap<RoleSet, Vec<RoleSet>>,
    pub descendants: BTreeMap<RoleSet, Vec<RoleSet>>,
    pub siblings: BTreeMap<RoleSet, Vec<RoleSet>>,
}

pub fn build_exclusive_lattice(am: &AccessMatrix) -> Result<ExclusiveLattice, AccessError> {
    // Single-pass grouping on the canonical role-set signature. The layered
    // subtraction construction is kept in the tests as an oracle.
    let mut blocks: BTreeMap<RoleSet, ExclusiveBlock> = BTreeMap::new();
    for id in 0..am.n_rows() as Id {
        let tag = am.roleset(id);
        if tag.is_empty() {
            return Err(AccessError::EmptyRow(id));
        }
        blocks
            .entry(tag)
            .or_insert_with(|| ExclusiveBlock { tag, ids: Vec::new() })
            .ids
            .push(id);
    }
    Ok(ExclusiveLattice {
        n_roles: am.n_roles,
        n_vectors: am.n_rows(),
        blocks,
    })
}

impl ExclusiveLattice {
    pub fn tags(&self) -> Vec<RoleSet> {
        self.blocks.keys().copied().collect()
    }

    pub fn block_size(&self, tag: RoleSet) -> u64 {
        self.blocks.get(&tag).map(|b| b.ids.len() as u64).unwrap_or(0)
    }

    pub fn max_layer(&self) -> usize {
        self.blocks.keys().map(|t| t.len()).max().unwrap_or(0)
    }

    /// Tags grouped by |τ|, ascending.
    pub fn layers(&self) -> BTreeMap<usize, Vec<RoleSet>> {
        let mut out: BTreeMap<usize, Vec<RoleSet>> = BTreeMap::new();
        for t in self.blocks.keys() {
            out.entry(t.len()).or_default().push(*t);
        }
        out
    }

    /// Union of the blocks whose tag contains r, as a sorted id list.
    pub fn authorized_ids(&self, r: Role) -> Result<Vec<Id>, AccessError> {
        if r as usize >= self.n_roles {
            return Err(AccessError::UnknownRole(r));
        }
        let mut out = Vec::new();
        for b in self.blocks.values() {
            if b.tag.contains(r) {
                out.extend_from_slice(&b.ids);
            }
        }
        out.sort_unstable();
        Ok(out)
    }

    pub fn authorized_idset(&self, r: Role) -> IdSet {
        let mut s = IdSet::with_capacity(self.n_vectors);
        for b in self.blocks.values() {
            if b.tag.contains(r) {
                for &id in &b.ids {
                    s.insert(id);
                }
            }
        }
        s
    }

    pub fn authorized_count(&self, r: Role) -> u64 {
        self.blocks
            .values()
            .filter(|b| b.tag.contains(r))
            .map(|b| b.ids.len() as u64)
            .sum()
    }

    /// Roles that actually own data somewhere.
    pub fn active_roles(&self) -> Vec<Role> {
        (0..self.n_roles as Role)
            .filter(|r| self.blocks.keys().any(|t| t.contains(*r)))
            .collect()
    }

    pub fn relations(&self) -> Relations {
        let tags = self.tags();
        let mut rel = Relations::default();
        for &t in &tags {
            rel.parents.entry(t).or_default();
            rel.children.entry(t).or_default();
            rel.ancestors.entry(t).or_default();
            rel.descendants.entry(t).or_default();
            rel.siblings.entry(t).or_default();
        }
        for &a in &tags {
            for &b in &tags {
                if a == b {
                    continue;
                }
                if a.is_strict_subset(b) {
                    // a has fewer roles: a is an ancestor of b.
                    rel.ancestors.get_mut(&b).unwrap().push(a);
                    rel.descendants.get_mut(&a).unwrap().push(b);
                    // Parent edge requires no present intermediate tag.
                    let adjacent = !tags.iter().any(|&m| {
                        m != a && m != b && a.is_strict_subset(m) && m.is_strict_subset(b)
                    });
                    if adjacent {
                        rel.parents.get_mut(&b).unwrap().push(a);
                        rel.children.get_mut(&a).unwrap().push(b);
                    }
                } else if a.len() == b.len() && !a.intersect(b).is_empty() {
                    rel.siblings.get_mut(&a).unwrap().push(b);
                }
            }
        }
        rel
    }
}
