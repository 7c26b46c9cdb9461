//! Access-control-aware vector indexing and retrieval.
//!
//! A tagged vector dataset is partitioned over a role-subset lattice into
//! groups that are either HNSW-indexed or kept as linear-scan leftovers,
//! subject to a storage-amplification budget. Queries carry a role and are
//! answered from the per-role query plan, either independently per index or
//! coordinated through a shared global top-k bound.

pub mod access;
pub mod bench;
pub mod cost;
pub mod effveda;
pub mod exec;
pub mod finalize;
pub mod hnsw;
pub mod lattice;
pub mod manifest;
pub mod planner;
pub mod vectors;
pub mod veda;
