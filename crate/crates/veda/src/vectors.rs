//! Vector storage, L2-squared distance, the brute-force top-k oracle and
//! fvecs file I/O.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

pub type Id = u32;

#[derive(Debug, Error)]
pub enum VectorError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("fvecs format error at byte offset {offset}: {reason}")]
    Format { offset: u64, reason: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Dense float32 vectors with ids 0..n, all sharing one dimension.
#[derive(Debug, Clone)]
pub struct Dataset {
    dim: usize,
    data: Vec<f32>,
}

impl Dataset {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "dimension must be positive");
        Dataset { dim, data: Vec::new() }
    }

    pub fn from_flat(dim: usize, data: Vec<f32>) -> Self {
        assert!(dim > 0 && data.len() % dim == 0);
        Dataset { dim, data }
    }

    pub fn push(&mut self, coords: &[f32]) -> Id {
        assert_eq!(coords.len(), self.dim);
        let id = self.len() as Id;
        self.data.extend_from_slice(coords);
        id
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, id: Id) -> &[f32] {
        let i = id as usize * self.dim;
        &self.data[i..i + self.dim]
    }
}

/// Squared Euclidean distance. Monotone-equivalent to L2 for ranking, no sqrt.
pub fn distance(a: &[f32], b: &[f32]) -> f32 {
    assert_eq!(a.len(), b.len(), "dimension mismatch");
    let mut acc = 0f32;
    for i in 0..a.len() {
        let d = a[i] - b[i];
        acc += d * d;
    }
    acc
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub id: Id,
    pub dist: f32,
}

impl Neighbor {
    /// Total order: ascending distance, ties broken by smaller id.
    pub fn cmp_asc(&self, other: &Neighbor) -> std::cmp::Ordering {
        self.dist
            .total_cmp(&other.dist)
            .then(self.id.cmp(&other.id))
    }
}

/// Simple bitset over vector ids, used for authorization filters.
#[derive(Debug, Clone, Default)]
pub struct IdSet {
    words: Vec<u64>,
    count: usize,
}

impl IdSet {
    pub fn with_capacity(n: usize) -> Self {
        IdSet { words: vec![0; (n + 63) / 64], count: 0 }
    }

    pub fn insert(&mut self, id: Id) {
        let (w, b) = (id as usize / 64, id as usize % 64);
        if w >= self.words.len() {
            self.words.resize(w + 1, 0);
        }
        if self.words[w] & (1 << b) == 0 {
            self.words[w] |= 1 << b;
            self.count += 1;
        }
    }

    pub fn contains(&self, id: Id) -> bool {
        let (w, b) = (id as usize / 64, id as usize % 64);
        w < self.words.len() && self.words[w] & (1 << b) != 0
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn union_with(&mut self, other: &IdSet) {
        if other.words.len() > self.words.len() {
            self.words.resize(other.words.len(), 0);
        }
        for (i, w) in other.words.iter().enumerate() {
            self.words[i] |= w;
        }
        self.count = self.words.iter().map(|w| w.count_ones() as usize).sum();
    }

    pub fn iter(&self) -> impl Iterator<Item = Id> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, w)| {
            (0..64)
                .filter(move |b| w & (1u64 << b) != 0)
                .map(move |b| (wi * 64 + b) as Id)
        })
    }
}

/// True top-k among `allowed` (or everything), ascending distance, ties by id.
pub fn brute_force_topk(
    ds: &Dataset,
    q: &[f32],
    k: usize,
    allowed: Option<&IdSet>,
) -> Vec<Neighbor> {
    assert!(k >= 1);
    let mut out: Vec<Neighbor> = Vec::new();
    for id in 0..ds.len() as Id {
        if let Some(a) = allowed {
            if !a.contains(id) {
                continue;
            }
        }
        out.push(Neighbor { id, dist: distance(q, ds.get(id)) });
    }
    out.sort_by(|x, y| x.cmp_asc(y));
    out.truncate(k);
    out
}

/// fvecs: per record a 4-byte little-endian i32 dimension, then d float32.
pub fn load_fvecs(path: &Path) -> Result<Dataset, VectorError> {
    let mut rd = BufReader::new(File::open(path)?);
    let mut buf = Vec::new();
    rd.read_to_end(&mut buf)?;
    let mut off = 0usize;
    let mut dim = 0usize;
    let mut data: Vec<f32> = Vec::new();
    while off < buf.len() {
        if off + 4 > buf.len() {
            return Err(VectorError::Format {
                offset: off as u64,
                reason: "truncated dimension header".into(),
            });
        }
        let d = i32::from_le_bytes(buf[off..off + 4].try_into().unwrap());
        if d <= 0 {
            return Err(VectorError::Format {
                offset: off as u64,
                reason: format!("non-positive dimension {d}"),
            });
        }
        let d = d as usize;
        if dim == 0 {
            dim = d;
        } else if d != dim {
            return Err(VectorError::Format {
                offset: off as u64,
                reason: format!("dimension changed from {dim} to {d}"),
            });
        }
        off += 4;
        if off + 4 * d > buf.len() {
            return Err(VectorError::Format {
                offset: off as u64,
                reason: "truncated vector record".into(),
            });
        }
        for i in 0..d {
            let p = off + 4 * i;
            data.push(f32::from_le_bytes(buf[p..p + 4].try_into().unwrap()));
        }
        off += 4 * d;
    }
    if dim == 0 {
        // Empty file: dimension unknown, caller may override. Use 1 as a
        // placeholder so the dataset is still constructible.
        return Ok(Dataset::new(1));
    }
    Ok(Dataset::from_flat(dim, data))
}

pub fn save_fvecs(ds: &Dataset, path: &Path) -> Result<(), VectorError> {
    let mut wr = BufWriter::new(File::create(path)?);
    for id in 0..ds.len() as Id {
        wr.write_all(&(ds.dim() as i32).to_le_bytes())?;
        for x in ds.get(id) {
            wr.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}
