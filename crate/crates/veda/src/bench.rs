//! Benchmark harness: synthetic Zipf policies, query workloads, the Global
//! and Oracle baseline layouts, and the metric suite (storage and query
//! amplification, recall, throughput, purity).

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::access::{AccessMatrix, ExclusiveLattice, Role, RoleSet};
use crate::cost::Theta;
use crate::exec::{
    exec_coordinated, exec_multi_role, BuiltLayout, ExecError, PlanStep,
};
use crate::finalize::Layout;
use crate::lattice::{Node, NodeKey};
use crate::vectors::{brute_force_topk, Dataset, Id, IdSet};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicySpec {
    pub n_roles: usize,
    /// Number of distinct permission groups to aim for.
    pub n_departments: usize,
    /// Shift and exponent of the block-size distribution.
    pub block_shift: f64,
    pub block_alpha: f64,
    /// Shift and exponent of the per-role popularity used when sampling
    /// which roles a group grants.
    pub perm_shift: f64,
    pub perm_alpha: f64,
    pub seed: u64,
}

impl Default for PolicySpec {
    fn default() -> Self {
        PolicySpec {
            n_roles: 8,
            n_departments: 40,
            block_shift: 2.0,
            block_alpha: 1.0,
            perm_shift: 2.0,
            perm_alpha: 0.8,
            seed: 42,
        }
    }
}

/// Sample an index in 0..weights.len() proportionally to the weights.
fn weighted_pick(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut x = rng.gen_range(0.0..total);
    for (i, w) in weights.iter().enumerate() {
        if x < *w {
            return i;
        }
        x -= w;
    }
    weights.len() - 1
}

/// Deterministic synthetic policy: distinct role-set groups whose sizes
/// follow a shifted Zipf law, with skewed role popularity. Every role is
/// guaranteed at least one group.
pub fn gen_policy(spec: &PolicySpec, n_vectors: usize) -> AccessMatrix {
    assert!(spec.block_alpha > 0.0 && spec.perm_alpha > 0.0);
    assert!(spec.n_roles >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let role_w: Vec<f64> = (0..spec.n_roles)
        .map(|r| (r as f64 + 1.0 + spec.perm_shift).powf(-spec.perm_alpha))
        .collect();

    let mut tags: Vec<RoleSet> = Vec::new();
    let mut seen: BTreeSet<RoleSet> = BTreeSet::new();
    let mut attempts = 0usize;
    while tags.len() < spec.n_departments && attempts < spec.n_departments * 64 {
        attempts += 1;
        let mut m = 1usize;
        while m < 4.min(spec.n_roles) && rng.gen_bool(0.45) {
            m += 1;
        }
        let mut t = RoleSet::empty();
        while t.len() < m {
            t = t.with(weighted_pick(&mut rng, &role_w) as Role);
        }
        if seen.insert(t) {
            tags.push(t);
        }
    }
    for r in 0..spec.n_roles as Role {
        if !tags.iter().any(|t| t.contains(r)) {
            let t = RoleSet::singleton(r);
            if seen.insert(t) {
                tags.push(t);
            }
        }
    }
    assert!(
        n_vectors >= tags.len(),
        "need at least one vector per permission group"
    );

    // Block sizes proportional to (i + shift)^-alpha, at least 1 each,
    // summing exactly to n_vectors.
    let w: Vec<f64> = (0..tags.len())
        .map(|i| (i as f64 + 1.0 + spec.block_shift).powf(-spec.block_alpha))
        .collect();
    let total: f64 = w.iter().sum();
    let mut sizes: Vec<usize> = w
        .iter()
        .map(|x| ((x / total) * n_vectors as f64).floor().max(1.0) as usize)
        .collect();
    let mut diff = n_vectors as i64 - sizes.iter().sum::<usize>() as i64;
    let n_blocks = sizes.len();
    let mut i = 0usize;
    while diff != 0 {
        let j = i % n_blocks;
        if diff > 0 {
            sizes[j] += 1;
            diff -= 1;
        } else if sizes[j] > 1 {
            sizes[j] -= 1;
            diff += 1;
        }
        i += 1;
    }

    let mut rows: Vec<Vec<Role>> = Vec::with_capacity(n_vectors);
    for (t, s) in tags.iter().zip(&sizes) {
        for _ in 0..*s {
            rows.push(t.roles());
        }
    }
    AccessMatrix::from_rows(spec.n_roles, &rows).expect("generated policy is valid")
}

pub fn gen_dataset(seed: u64, n: usize, dim: usize) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ds = Dataset::new(dim);
    for _ in 0..n {
        let v: Vec<f32> = (0..dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        ds.push(&v);
    }
    ds
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WorkloadKind {
    UniformSingle,
    WeightedSingle,
    UniformMulti,
    WeightedMulti,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub kind: WorkloadKind,
    pub n_queries: usize,
    /// Fraction of query vectors drawn from the subject's authorized data.
    pub sensitivity: f64,
    pub k: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub enum Subject {
    Single(Role),
    Multi(RoleSet),
}

#[derive(Debug, Clone)]
pub struct Query {
    pub x: Vec<f32>,
    pub subject: Subject,
}

impl Query {
    pub fn allowed(&self, ex: &ExclusiveLattice) -> IdSet {
        match self.subject {
            Subject::Single(r) => ex.authorized_idset(r),
            Subject::Multi(t) => {
                let mut s = IdSet::with_capacity(ex.n_vectors);
                for r in t.iter() {
                    s.union_with(&ex.authorized_idset(r));
                }
                s
            }
        }
    }
}

pub fn gen_workload(spec: &WorkloadSpec, ds: &Dataset, ex: &ExclusiveLattice) -> Vec<Query> {
    assert!((0.0..=1.0).contains(&spec.sensitivity));
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let active = ex.active_roles();
    assert!(!active.is_empty());
    let counts: Vec<f64> = active.iter().map(|&r| ex.authorized_count(r) as f64).collect();
    let uniform = vec![1.0; active.len()];
    let (weights, multi) = match spec.kind {
        WorkloadKind::UniformSingle => (&uniform, false),
        WorkloadKind::WeightedSingle => (&counts, false),
        WorkloadKind::UniformMulti => (&uniform, true),
        WorkloadKind::WeightedMulti => (&counts, true),
    };
    let dim = ds.dim();
    (0..spec.n_queries)
        .map(|_| {
            let subject = if multi {
                let m = rng.gen_range(1..=3.min(active.len()));
                let mut t = RoleSet::empty();
                while t.len() < m {
                    t = t.with(active[weighted_pick(&mut rng, weights)]);
                }
                Subject::Multi(t)
            } else {
                Subject::Single(active[weighted_pick(&mut rng, weights)])
            };
            // Sensitive queries perturb an authorized vector; the rest
            // perturb an arbitrary one.
            let base_id = if rng.gen_bool(spec.sensitivity) {
                let pool: Vec<Id> = match &subject {
                    Subject::Single(r) => ex.authorized_ids(*r).unwrap(),
                    Subject::Multi(t) => {
                        let r = t.iter().next().unwrap();
                        ex.authorized_ids(r).unwrap()
                    }
                };
                pool[rng.gen_range(0..pool.len())]
            } else {
                rng.gen_range(0..ds.len() as Id)
            };
            let x: Vec<f32> = ds
                .get(base_id)
                .iter()
                .map(|v| v + rng.gen_range(-0.02f32..0.02))
                .collect();
            let _ = dim;
            Query { x, subject }
        })
        .collect()
}

/// Baseline layouts: one global index over everything, and one pure index
/// per role over exactly its authorized data.
pub fn global_layout(ex: &ExclusiveLattice) -> Layout {
    let all = ex
        .tags()
        .iter()
        .fold(RoleSet::empty(), |acc, t| acc.union(*t));
    let key = NodeKey::base(all);
    let node = Node { key, members: ex.tags().into_iter().collect() };
    Layout {
        indexed: vec![node],
        leftovers: vec![],
        plans: (0..ex.n_roles).map(|_| vec![0]).collect(),
        storage_amplification: 1.0,
    }
}

pub fn oracle_layout(ex: &ExclusiveLattice) -> Layout {
    let active = ex.active_roles();
    let mut indexed = Vec::with_capacity(active.len());
    let mut plans: Vec<Vec<usize>> = vec![vec![]; ex.n_roles];
    for (i, &r) in active.iter().enumerate() {
        let key = NodeKey::base(RoleSet::singleton(r));
        let members: BTreeSet<RoleSet> =
            ex.tags().into_iter().filter(|t| t.contains(r)).collect();
        indexed.push(Node { key, members });
        plans[r as usize] = vec![i];
    }
    let stored: u64 = active.iter().map(|&r| ex.authorized_count(r)).sum();
    Layout {
        indexed,
        leftovers: vec![],
        plans,
        storage_amplification: stored as f64 / ex.n_vectors as f64,
    }
}

/// Smallest size at which the modeled graph search beats a linear scan;
/// used as the default indexing threshold.
pub fn lambda_crossover(theta: &Theta, efs: f64) -> u64 {
    let mut n = 16u64;
    while n < 1 << 24 {
        let index = crate::cost::c_theta(theta, n, efs);
        let scan = theta.b_scan * n as f64;
        if index < scan {
            return n;
        }
        n = n.saturating_add((n / 8).max(1));
    }
    1 << 24
}

/// Times real HNSW searches and linear scans on this host for cost-model
/// calibration. Indices are cached per size so the efs sweep reuses the
/// largest index from the size sweep.
pub struct HostSweep {
    dim: usize,
    repeats: usize,
    n_queries: usize,
    seed: u64,
    cache: std::collections::BTreeMap<u64, crate::hnsw::HnswIndex>,
}

impl HostSweep {
    pub fn new(dim: usize, repeats: usize) -> HostSweep {
        HostSweep { dim, repeats: repeats.max(1), n_queries: 16, seed: 0xca11, cache: Default::default() }
    }

    fn gen_queries(&self) -> Vec<Vec<f32>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 1);
        (0..self.n_queries)
            .map(|_| (0..self.dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect())
            .collect()
    }

    fn median(mut xs: Vec<f64>) -> f64 {
        xs.sort_by(|x, y| x.total_cmp(y));
        xs[xs.len() / 2]
    }
}

impl crate::cost::SweepRunner for HostSweep {
    /// Mean per-query latency in microseconds, median over repeats.
    fn time_search(&mut self, idx_size: u64, efs: u64) -> f64 {
        let dim = self.dim;
        let seed = self.seed;
        let repeats = self.repeats;
        let qs = self.gen_queries();
        let idx = self.cache.entry(idx_size).or_insert_with(|| {
            let ds = gen_dataset(seed ^ idx_size, idx_size as usize, dim);
            let items: Vec<(Id, Vec<f32>)> = (0..ds.len())
                .map(|i| (i as Id, ds.get(i as Id).to_vec()))
                .collect();
            crate::hnsw::HnswIndex::build(dim, &items, &crate::hnsw::HnswParams::default())
                .expect("sweep sizes are non-zero")
        });
        for q in &qs {
            std::hint::black_box(idx.search(q, 1, efs as usize));
        }
        let mut per_rep = Vec::with_capacity(repeats);
        for _ in 0..repeats {
            let t = Instant::now();
            for q in &qs {
                std::hint::black_box(idx.search(q, 1, efs as usize));
            }
            per_rep.push(t.elapsed().as_secs_f64() * 1e6 / qs.len() as f64);
        }
        Self::median(per_rep)
    }

    fn time_scan(&mut self, n: u64) -> f64 {
        let ds = gen_dataset(self.seed ^ n.rotate_left(32), n as usize, self.dim);
        let qs = self.gen_queries();
        let mut per_rep = Vec::with_capacity(self.repeats);
        for _ in 0..self.repeats {
            let t = Instant::now();
            for q in &qs {
                std::hint::black_box(brute_force_topk(&ds, q, 1, None));
            }
            per_rep.push(t.elapsed().as_secs_f64() * 1e6 / qs.len() as f64);
        }
        Self::median(per_rep)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    pub sa: f64,
    /// Modeled per-query cost and its ratio to the Oracle baseline.
    pub cost_modeled: f64,
    pub qa_modeled: f64,
    /// Mean wall time per query in seconds, and the Oracle ratio.
    pub wall_per_query: f64,
    pub qa_wall: f64,
    pub recall: f64,
    pub qps: f64,
    pub purity: f64,
    pub indices_per_query: f64,
    pub skip_rate: f64,
    pub efs_saved_mean: f64,
    pub n_queries: usize,
}

struct RunAccum {
    wall: f64,
    hits: usize,
    truth: usize,
    indices: usize,
    skips: usize,
    impure: usize,
    efs_saved: u64,
    probed_total: u64,
    probed_auth: u64,
    leftover: u64,
}

fn run_queries(
    bl: &BuiltLayout,
    ds: &Dataset,
    ex: &ExclusiveLattice,
    queries: &[Query],
    k: usize,
    efs: usize,
) -> Result<RunAccum, ExecError> {
    let mut acc = RunAccum {
        wall: 0.0,
        hits: 0,
        truth: 0,
        indices: 0,
        skips: 0,
        impure: 0,
        efs_saved: 0,
        probed_total: 0,
        probed_auth: 0,
        leftover: 0,
    };
    for q in queries {
        let t0 = Instant::now();
        let (res, stats) = match q.subject {
            Subject::Single(r) => exec_coordinated(bl, ds, &q.x, r, k, efs)?,
            Subject::Multi(t) => exec_multi_role(bl, ds, &q.x, t, k, efs, None)?,
        };
        acc.wall += t0.elapsed().as_secs_f64();
        let allowed = q.allowed(ex);
        let want: BTreeSet<Id> = brute_force_topk(ds, &q.x, k, Some(&allowed))
            .into_iter()
            .map(|n| n.id)
            .collect();
        acc.hits += res.iter().filter(|n| want.contains(&n.id)).count();
        acc.truth += want.len();
        acc.indices += stats.indices_touched;
        acc.skips += stats.phase2_skips;
        acc.impure += stats.impure_touched;
        acc.efs_saved += stats.efs_saved;
        acc.probed_total += stats.probed_total + stats.leftover_ids_scanned;
        acc.probed_auth += stats.probed_authorized + stats.leftover_ids_scanned;
        acc.leftover += stats.leftover_ids_scanned;
    }
    Ok(acc)
}

/// Run a workload against a layout and report the paper's metric suite.
/// The Oracle baseline supplies both cost denominators.
pub fn measure(
    bl: &BuiltLayout,
    oracle: &BuiltLayout,
    ds: &Dataset,
    ex: &ExclusiveLattice,
    queries: &[Query],
    theta: &Theta,
    k: usize,
    efs: usize,
) -> Result<MetricsReport, ExecError> {
    let weights = crate::planner::uniform_weights(ex);
    let cost_modeled = bl.layout.avg_cost(ex, &weights, theta, efs as f64);
    let oracle_modeled = oracle.layout.avg_cost(ex, &weights, theta, efs as f64);
    let acc = run_queries(bl, ds, ex, queries, k, efs)?;
    let oracle_acc = run_queries(oracle, ds, ex, queries, k, efs)?;
    let n = queries.len().max(1) as f64;
    let wall_per_query = acc.wall / n;
    let oracle_wall = oracle_acc.wall / n;
    Ok(MetricsReport {
        sa: bl.layout.storage_amplification,
        cost_modeled,
        qa_modeled: cost_modeled / oracle_modeled,
        wall_per_query,
        qa_wall: wall_per_query / oracle_wall.max(1e-12),
        recall: acc.hits as f64 / acc.truth.max(1) as f64,
        qps: if acc.wall > 0.0 { n / acc.wall } else { f64::INFINITY },
        purity: acc.probed_auth as f64 / acc.probed_total.max(1) as f64,
        indices_per_query: acc.indices as f64 / n,
        skip_rate: acc.skips as f64 / acc.impure.max(1) as f64,
        efs_saved_mean: acc.efs_saved as f64 / n,
        n_queries: queries.len(),
    })
}

pub fn count_impure_steps(bl: &BuiltLayout) -> usize {
    bl.steps
        .iter()
        .flatten()
        .filter(|s| matches!(s, PlanStep::Impure { .. }))
        .count()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub n_vectors: usize,
    pub dim: usize,
    pub policy: PolicySpec,
    pub betas: Vec<f64>,
    pub efs_grid: Vec<usize>,
    pub lambda_grid: Vec<u64>,
    pub sensitivities: Vec<f64>,
    pub k: usize,
    pub efs: usize,
    pub min_index_size: u64,
    pub n_queries: usize,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            n_vectors: 50_000,
            dim: 16,
            policy: PolicySpec::default(),
            betas: vec![1.0, 1.1, 1.3, 1.5, 2.0, 3.0],
            efs_grid: vec![10, 50, 100, 300, 500, 1000],
            lambda_grid: vec![64, 256, 1024, 4096],
            sensitivities: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            k: 10,
            efs: 100,
            min_index_size: 64,
            n_queries: 100,
            seed: 7,
        }
    }
}

fn write_csv(path: &Path, header: &str, rows: &[String]) -> std::io::Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "{header}")?;
    for r in rows {
        writeln!(f, "{r}")?;
    }
    Ok(())
}

const METRIC_COLS: &str = "sa,cost_modeled,qa_modeled,wall_per_query,qa_wall,recall,qps,purity,indices_per_query,skip_rate,efs_saved_mean";

fn metric_row(m: &MetricsReport) -> String {
    format!(
        "{:.6},{:.6},{:.6},{:.9},{:.4},{:.4},{:.2},{:.4},{:.3},{:.4},{:.2}",
        m.sa,
        m.cost_modeled,
        m.qa_modeled,
        m.wall_per_query,
        m.qa_wall,
        m.recall,
        m.qps,
        m.purity,
        m.indices_per_query,
        m.skip_rate,
        m.efs_saved_mean
    )
}

/// Full sweep driver: builds both optimizers' layouts over the beta grid,
/// plus efs, indexing-threshold, and sensitivity sweeps, writing one CSV
/// per sweep into `out_dir`.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    theta: &Theta,
    out_dir: &Path,
) -> anyhow::Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let ds = gen_dataset(cfg.seed, cfg.n_vectors, cfg.dim);
    let am = gen_policy(&cfg.policy, cfg.n_vectors);
    let ex = crate::access::build_exclusive_lattice(&am)?;
    let params = crate::hnsw::HnswParams::default();
    let oracle = BuiltLayout::build(oracle_layout(&ex), &ds, &ex, &params)?;
    let global = BuiltLayout::build(global_layout(&ex), &ds, &ex, &params)?;
    let wl = WorkloadSpec {
        kind: WorkloadKind::UniformSingle,
        n_queries: cfg.n_queries,
        sensitivity: 0.5,
        k: cfg.k,
        seed: cfg.seed ^ 0xabcd,
    };
    let queries = gen_workload(&wl, &ds, &ex);

    // QA versus SA over the beta grid, both optimizers plus Global.
    let mut rows = Vec::new();
    for &beta in &cfg.betas {
        for (name, layout) in [
            (
                "veda",
                {
                    let w = crate::planner::uniform_weights(&ex);
                    let opt = crate::veda::veda_partition(&ex, theta, beta, cfg.efs as f64, &w);
                    crate::finalize::finalize(
                        &opt.lat,
                        &ex,
                        theta,
                        cfg.efs as f64,
                        beta,
                        cfg.min_index_size,
                    )
                },
            ),
            (
                "effveda",
                crate::effveda::effveda_run(&ex, theta, beta, cfg.efs as f64, cfg.min_index_size)
                    .layout,
            ),
        ] {
            let bl = BuiltLayout::build(layout, &ds, &ex, &params)?;
            let m = measure(&bl, &oracle, &ds, &ex, &queries, theta, cfg.k, cfg.efs)?;
            rows.push(format!("{name},{beta},{}", metric_row(&m)));
        }
    }
    let mg = measure(&global, &oracle, &ds, &ex, &queries, theta, cfg.k, cfg.efs)?;
    rows.push(format!("global,,{}", metric_row(&mg)));
    write_csv(
        &out_dir.join("qa_vs_sa.csv"),
        &format!("optimizer,beta,{METRIC_COLS}"),
        &rows,
    )?;

    // efs sweep at a fixed mid-grid budget.
    let beta = 1.5;
    let eff = crate::effveda::effveda_run(&ex, theta, beta, cfg.efs as f64, cfg.min_index_size);
    let bl = BuiltLayout::build(eff.layout, &ds, &ex, &params)?;
    let mut rows = Vec::new();
    for &efs in &cfg.efs_grid {
        let m = measure(&bl, &oracle, &ds, &ex, &queries, theta, cfg.k, efs)?;
        rows.push(format!("{efs},{}", metric_row(&m)));
    }
    write_csv(&out_dir.join("efs_sweep.csv"), &format!("efs,{METRIC_COLS}"), &rows)?;

    // Indexing-threshold sweep.
    let mut rows = Vec::new();
    for &lam in &cfg.lambda_grid {
        let eff = crate::effveda::effveda_run(&ex, theta, beta, cfg.efs as f64, lam);
        let bl = BuiltLayout::build(eff.layout, &ds, &ex, &params)?;
        let m = measure(&bl, &oracle, &ds, &ex, &queries, theta, cfg.k, cfg.efs)?;
        rows.push(format!("{lam},{},{}", bl.indices.len(), metric_row(&m)));
    }
    write_csv(
        &out_dir.join("lambda_sweep.csv"),
        &format!("lambda,n_indices,{METRIC_COLS}"),
        &rows,
    )?;

    // Sensitivity sweep over all four workload kinds.
    let mut rows = Vec::new();
    for &s in &cfg.sensitivities {
        for kind in [
            WorkloadKind::UniformSingle,
            WorkloadKind::WeightedSingle,
            WorkloadKind::UniformMulti,
            WorkloadKind::WeightedMulti,
        ] {
            let wl = WorkloadSpec {
                kind,
                n_queries: cfg.n_queries,
                sensitivity: s,
                k: cfg.k,
                seed: cfg.seed ^ 0x5150,
            };
            let qs = gen_workload(&wl, &ds, &ex);
            let m = measure(&bl, &oracle, &ds, &ex, &qs, theta, cfg.k, cfg.efs)?;
            rows.push(format!("{s},{kind:?},{}", metric_row(&m)));
        }
    }
    write_csv(
        &out_dir.join("sensitivity_sweep.csv"),
        &format!("sensitivity,workload,{METRIC_COLS}"),
        &rows,
    )?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::access::build_exclusive_lattice;

    #[test]
    fn policy_deterministic_and_complete() {
        let spec = PolicySpec::default();
        let a = gen_policy(&spec, 5_000);
        let b = gen_policy(&spec, 5_000);
        assert_eq!(a.n_rows(), b.n_rows());
        for id in 0..a.n_rows() as crate::vectors::Id {
            assert_eq!(a.row(id), b.row(id));
        }
        assert_eq!(a.n_rows(), 5_000);
        let ex = build_exclusive_lattice(&a).unwrap();
        for r in 0..spec.n_roles as Role {
            assert!(ex.authorized_count(r) >= 1, "role {r} has no data");
        }
    }

    #[test]
    fn low_alpha_sizes_nearly_uniform() {
        let spec = PolicySpec {
            n_roles: 16,
            n_departments: 1000,
            block_alpha: 0.1,
            block_shift: 100.0,
            ..PolicySpec::default()
        };
        let am = gen_policy(&spec, 100_000);
        let ex = build_exclusive_lattice(&am).unwrap();
        let sizes: Vec<f64> = ex.blocks.values().map(|b| b.ids.len() as f64).collect();
        let mean = sizes.iter().sum::<f64>() / sizes.len() as f64;
        let var = sizes.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / sizes.len() as f64;
        let cv = var.sqrt() / mean;
        assert!(cv < 0.2, "coefficient of variation {cv}");
    }

    #[test]
    fn high_alpha_one_dominant_block() {
        let spec = PolicySpec {
            n_departments: 50,
            block_alpha: 5.0,
            block_shift: 0.0,
            ..PolicySpec::default()
        };
        let am = gen_policy(&spec, 10_000);
        let ex = build_exclusive_lattice(&am).unwrap();
        let max = ex.blocks.values().map(|b| b.ids.len()).max().unwrap();
        assert!(max as f64 > 0.5 * 10_000.0, "largest block {max}");
    }

    #[test]
    fn oracle_sa_toy_and_disjoint() {
        // The three-role toy with half the data shared: duplicating every
        // vector per authorized role costs 1.5x.
        let mut rows: Vec<Vec<Role>> = Vec::new();
        for _ in 0..5 {
            rows.push(vec![0]);
        }
        for _ in 0..3 {
            rows.push(vec![1]);
        }
        for _ in 0..3 {
            rows.push(vec![2]);
        }
        for _ in 0..3 {
            rows.push(vec![0, 1]);
        }
        for _ in 0..5 {
            rows.push(vec![0, 2]);
        }
        rows.push(vec![0, 1, 2]);
        let am = AccessMatrix::from_rows(3, &rows).unwrap();
        let ex = build_exclusive_lattice(&am).unwrap();
        let o = oracle_layout(&ex);
        assert!((o.storage_amplification - 1.5).abs() < 1e-12);
        let rows2: Vec<Vec<Role>> = (0..20).map(|i| vec![(i % 3) as Role]).collect();
        let ex2 =
            build_exclusive_lattice(&AccessMatrix::from_rows(3, &rows2).unwrap()).unwrap();
        assert!((oracle_layout(&ex2).storage_amplification - 1.0).abs() < 1e-12);
        assert!((global_layout(&ex2).storage_amplification - 1.0).abs() < 1e-12);
    }

    #[test]
    fn oracle_measures_as_unit_qa_and_purity() {
        let ds = gen_dataset(3, 2_000, 8);
        let am = gen_policy(&PolicySpec { n_roles: 4, ..PolicySpec::default() }, 2_000);
        let ex = build_exclusive_lattice(&am).unwrap();
        let params = crate::hnsw::HnswParams::default();
        let oracle = BuiltLayout::build(oracle_layout(&ex), &ds, &ex, &params).unwrap();
        let wl = WorkloadSpec {
            kind: WorkloadKind::UniformSingle,
            n_queries: 20,
            sensitivity: 0.5,
            k: 10,
            seed: 1,
        };
        let qs = gen_workload(&wl, &ds, &ex);
        let theta = Theta::reference();
        let m = measure(&oracle, &oracle, &ds, &ex, &qs, &theta, 10, 50).unwrap();
        assert!((m.qa_modeled - 1.0).abs() < 1e-12);
        assert!((m.purity - 1.0).abs() < 1e-12);
        assert!((m.sa - oracle.layout.storage_amplification).abs() < 1e-12);
    }

    #[test]
    fn workload_shapes_and_determinism() {
        let ds = gen_dataset(5, 1_000, 6);
        let am = gen_policy(&PolicySpec { n_roles: 5, ..PolicySpec::default() }, 1_000);
        let ex = build_exclusive_lattice(&am).unwrap();
        for kind in [
            WorkloadKind::UniformSingle,
            WorkloadKind::WeightedSingle,
            WorkloadKind::UniformMulti,
            WorkloadKind::WeightedMulti,
        ] {
            let wl = WorkloadSpec { kind, n_queries: 50, sensitivity: 0.4, k: 5, seed: 9 };
            let a = gen_workload(&wl, &ds, &ex);
            let b = gen_workload(&wl, &ds, &ex);
            assert_eq!(a.len(), 50);
            for (qa, qb) in a.iter().zip(&b) {
                assert_eq!(qa.x, qb.x);
            }
            let multi_expected = matches!(
                kind,
                WorkloadKind::UniformMulti | WorkloadKind::WeightedMulti
            );
            for q in &a {
                match (&q.subject, multi_expected) {
                    (Subject::Single(_), false) | (Subject::Multi(_), true) => {}
                    _ => panic!("wrong subject shape for {kind:?}"),
                }
            }
        }
    }

    #[test]
    fn crossover_threshold_is_positive_and_finite() {
        let theta = Theta::reference();
        let lam = lambda_crossover(&theta, 100.0);
        assert!(lam > 16);
        assert!(lam < 1 << 24);
        // At the crossover the index must actually be cheaper.
        assert!(crate::cost::c_theta(&theta, lam, 100.0) < theta.b_scan * lam as f64);
    }
}
