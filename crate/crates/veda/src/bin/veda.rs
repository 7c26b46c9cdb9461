//! Command-line front end: dataset and policy generation, layout building,
//! query execution, plan inspection, benchmarking, and cost calibration.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use veda::access::{build_exclusive_lattice, AccessMatrix, ExclusiveLattice, Role, RoleSet};
use veda::bench::{
    gen_dataset, gen_policy, lambda_crossover, run_experiment, ExperimentConfig, HostSweep,
    PolicySpec,
};
use veda::cost::{
    calibrate_with, cost_hnsw, inflation, SweepRunner, Theta, DEFAULT_EFS_SWEEP,
};
use veda::exec::{exec_coordinated, exec_independent, exec_multi_role, BuiltLayout};
use veda::finalize::finalize;
use veda::hnsw::{HnswIndex, HnswParams};
use veda::manifest::Manifest;
use veda::planner::uniform_weights;
use veda::vectors::{load_fvecs, save_fvecs, Dataset, Id};

#[derive(Parser)]
#[command(
    name = "veda",
    version,
    about = "Access-control-aware vector indexing and retrieval"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Optimizer {
    Veda,
    Effveda,
}

#[derive(Clone, Copy, ValueEnum)]
enum Strategy {
    Coordinated,
    Independent,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate or inspect raw fvecs vector files.
    Dataset {
        #[command(subcommand)]
        cmd: DatasetCmd,
    },
    /// Generate a synthetic tagged dataset: vectors plus access metadata.
    Gen {
        /// Output directory; receives vectors.fvecs, access.csr, policy.json.
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 50_000)]
        n: usize,
        #[arg(long, default_value_t = 16)]
        dim: usize,
        #[arg(long, default_value_t = 8)]
        roles: usize,
        #[arg(long, default_value_t = 40)]
        departments: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Partition the dataset under a storage budget and write the layout
    /// manifest.
    Build {
        /// Directory produced by `gen` (vectors.fvecs + access.csr).
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        optimizer: Optimizer,
        /// Storage amplification budget, >= 1.
        #[arg(long)]
        beta: f64,
        #[arg(long, default_value_t = 100.0)]
        efs: f64,
        /// Minimum node size for a graph index; defaults to the modeled
        /// scan-vs-index crossover.
        #[arg(long)]
        min_index_size: Option<u64>,
        /// Calibration report JSON; fixed reference coefficients if absent.
        #[arg(long)]
        theta: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Inspect per-role query plans of a built layout.
    Plan {
        #[command(subcommand)]
        cmd: PlanCmd,
    },
    /// Run a batch of queries against a built layout.
    Query {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        layout: PathBuf,
        /// Role for every query; alternatively --roles-file.
        #[arg(long)]
        role: Option<Role>,
        /// One subject per line: a single role `3` or a role set `0,2,5`.
        #[arg(long)]
        roles_file: Option<PathBuf>,
        /// Query vectors in fvecs format.
        #[arg(long)]
        queries: PathBuf,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long, default_value_t = 100)]
        efs: usize,
        #[arg(long, value_enum, default_value_t = Strategy::Coordinated)]
        strategy: Strategy,
        /// Result CSV; stdout if absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Full benchmark sweeps; writes one CSV per sweep.
    Bench {
        /// Experiment config JSON; defaults used if absent.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        theta: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Time real searches on this host and fit the cost model.
    Calibrate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 16)]
        dim: usize,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
        /// Largest index in the size sweep is 2^max_log_size.
        #[arg(long, default_value_t = 14)]
        max_log_size: u32,
    },
}

#[derive(Subcommand)]
enum DatasetCmd {
    Gen {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 16)]
        dim: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    Inspect {
        path: PathBuf,
    },
}

#[derive(Subcommand)]
enum PlanCmd {
    Inspect {
        #[arg(long)]
        layout: PathBuf,
        #[arg(long)]
        role: Role,
        #[arg(long)]
        theta: Option<PathBuf>,
    },
}

fn load_theta(path: &Option<PathBuf>) -> Result<Theta> {
    match path {
        None => Ok(Theta::reference()),
        Some(p) => {
            let s = std::fs::read_to_string(p)
                .with_context(|| format!("reading {}", p.display()))?;
            Ok(serde_json::from_str(&s)?)
        }
    }
}

fn load_data(dir: &Path) -> Result<(Dataset, ExclusiveLattice)> {
    let ds = load_fvecs(&dir.join("vectors.fvecs"))?;
    let am = AccessMatrix::load_csr(&dir.join("access.csr"))?;
    if am.n_rows() != ds.len() {
        bail!(
            "access metadata covers {} rows but the dataset has {} vectors",
            am.n_rows(),
            ds.len()
        );
    }
    let ex = build_exclusive_lattice(&am)?;
    Ok((ds, ex))
}

fn cmd_gen(
    out_dir: &Path,
    n: usize,
    dim: usize,
    roles: usize,
    departments: usize,
    seed: u64,
) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let spec = PolicySpec {
        n_roles: roles,
        n_departments: departments,
        seed,
        ..PolicySpec::default()
    };
    let ds = gen_dataset(seed, n, dim);
    let am = gen_policy(&spec, n);
    save_fvecs(&ds, &out_dir.join("vectors.fvecs"))?;
    am.save_csr(&out_dir.join("access.csr"))?;
    if n <= 10_000 {
        am.save_jsonl(&out_dir.join("access.jsonl"))?;
    }
    let f = std::fs::File::create(out_dir.join("policy.json"))?;
    serde_json::to_writer_pretty(f, &spec)?;
    let ex = build_exclusive_lattice(&am)?;
    println!(
        "wrote {n} vectors (d={dim}), {} roles, {} exclusive blocks to {}",
        roles,
        ex.blocks.len(),
        out_dir.display()
    );
    Ok(())
}

fn cmd_build(
    data: &Path,
    optimizer: Optimizer,
    beta: f64,
    efs: f64,
    min_index_size: Option<u64>,
    theta_path: &Option<PathBuf>,
    out: &Path,
) -> Result<()> {
    if beta < 1.0 {
        bail!("beta must be at least 1.0");
    }
    let theta = load_theta(theta_path)?;
    let (_, ex) = load_data(data)?;
    let min_idx = min_index_size.unwrap_or_else(|| lambda_crossover(&theta, efs));
    let weights = uniform_weights(&ex);
    let t0 = std::time::Instant::now();
    let (name, layout) = match optimizer {
        Optimizer::Veda => {
            let opt = veda::veda::veda_partition(&ex, &theta, beta, efs, &weights);
            ("veda", finalize(&opt.lat, &ex, &theta, efs, beta, min_idx))
        }
        Optimizer::Effveda => {
            let outcm = veda::effveda::effveda_run(&ex, &theta, beta, efs, min_idx);
            ("effveda", outcm.layout)
        }
    };
    let elapsed = t0.elapsed();
    let m = Manifest::from_layout(&layout, &ex, name, beta, efs, min_idx);
    m.save(out)?;
    println!(
        "{name}: {} indexed nodes, {} leftover blocks, SA {:.4} (budget {beta:.2}), \
         modeled avg cost {:.3}, optimized in {:.2?}; manifest at {}",
        layout.indexed.len(),
        layout.leftovers.len(),
        layout.storage_amplification,
        layout.avg_cost(&ex, &weights, &theta, efs),
        elapsed,
        out.display()
    );
    Ok(())
}

fn cmd_plan_inspect(layout: &Path, role: Role, theta_path: &Option<PathBuf>) -> Result<()> {
    let theta = load_theta(theta_path)?;
    let m = Manifest::load(layout)?;
    if role as usize >= m.n_roles {
        bail!("role {role} out of range for {} roles", m.n_roles);
    }
    let plan = &m.plans[role as usize];
    if plan.is_empty() {
        println!("role {role}: no authorized data, empty plan");
        return Ok(());
    }
    println!(
        "role {role}: {} plan entries (layout by {}, beta {:.2}, efs {})",
        plan.len(),
        m.optimizer,
        m.beta,
        m.efs
    );
    let mut total = 0.0;
    for &u in plan {
        let node = &m.nodes[u];
        let tags: Vec<String> = node
            .members
            .iter()
            .map(|mm| RoleSet::from_roles(&mm.roles).to_string())
            .collect();
        let omega: u64 = node
            .members
            .iter()
            .filter(|mm| mm.roles.contains(&role))
            .map(|mm| mm.size)
            .sum();
        let cost = if node.kind == "leftover" {
            let c = theta.b_scan * node.size as f64;
            println!("  scan {:>8} vectors  block {}  cost {c:.3}", node.size, tags[0]);
            c
        } else if omega == node.size {
            let c = cost_hnsw(&theta, node.size, m.efs, true, 1).0;
            println!(
                "  pure index {:>8} vectors  {}#{}  members {}  cost {c:.3}",
                node.size,
                RoleSet::from_roles(&node.roles),
                node.salt,
                tags.join(" ")
            );
            c
        } else {
            let lambda = inflation(node.size, omega).expect("planned index overlaps role");
            let c = cost_hnsw(&theta, node.size, m.efs, false, lambda).0;
            println!(
                "  impure index {:>6} vectors  {}#{}  authorized {omega}  lambda {lambda}  cost {c:.3}",
                node.size,
                RoleSet::from_roles(&node.roles),
                node.salt,
            );
            c
        };
        total += cost;
    }
    println!("total modeled cost {total:.3}");
    Ok(())
}

fn parse_subjects(path: &Path, n: usize) -> Result<Vec<RoleSet>> {
    let s = std::fs::read_to_string(path)?;
    let subjects: Vec<RoleSet> = s
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let roles: Result<Vec<Role>> = l
                .split(',')
                .map(|t| t.trim().parse::<Role>().map_err(Into::into))
                .collect();
            Ok(RoleSet::from_roles(&roles?))
        })
        .collect::<Result<_>>()?;
    if subjects.len() != n {
        bail!("{} subjects for {} queries", subjects.len(), n);
    }
    Ok(subjects)
}

#[allow(clippy::too_many_arguments)]
fn cmd_query(
    data: &Path,
    layout: &Path,
    role: Option<Role>,
    roles_file: &Option<PathBuf>,
    queries: &Path,
    k: usize,
    efs: usize,
    strategy: Strategy,
    out: &Option<PathBuf>,
) -> Result<()> {
    let (ds, ex) = load_data(data)?;
    let m = Manifest::load(layout)?;
    let lay = m.to_layout(&ex)?;
    let qs = load_fvecs(queries)?;
    if qs.dim() != ds.dim() {
        bail!("query dim {} != dataset dim {}", qs.dim(), ds.dim());
    }
    let subjects: Vec<RoleSet> = match (role, roles_file) {
        (Some(r), None) => vec![RoleSet::singleton(r); qs.len()],
        (None, Some(p)) => parse_subjects(p, qs.len())?,
        _ => bail!("provide exactly one of --role or --roles-file"),
    };
    let params = HnswParams::default();
    let bl = BuiltLayout::build(lay, &ds, &ex, &params).context("building indices")?;
    // A near-global multi-role query routes to one index over everything.
    let global: Option<HnswIndex> = if subjects.iter().any(|t| t.len() > 1) {
        let items: Vec<(Id, Vec<f32>)> = (0..ds.len())
            .map(|i| (i as Id, ds.get(i as Id).to_vec()))
            .collect();
        Some(HnswIndex::build(ds.dim(), &items, &params)?)
    } else {
        None
    };

    let mut w: Box<dyn std::io::Write> = match out {
        Some(p) => Box::new(std::fs::File::create(p)?),
        None => Box::new(std::io::stdout()),
    };
    writeln!(
        w,
        "query,subject,ids,efs_spent,efs_saved,phase2_skips,indices_touched,leftover_ids_scanned,used_global"
    )?;
    for (i, tau) in subjects.iter().enumerate() {
        let q = qs.get(i as Id);
        let (res, stats) = if tau.len() == 1 {
            let r = tau.iter().next().unwrap();
            match strategy {
                Strategy::Coordinated => exec_coordinated(&bl, &ds, q, r, k, efs)?,
                Strategy::Independent => exec_independent(&bl, &ds, q, r, k, efs)?,
            }
        } else {
            exec_multi_role(&bl, &ds, q, *tau, k, efs, global.as_ref())?
        };
        let ids: Vec<String> = res.iter().map(|n| n.id.to_string()).collect();
        writeln!(
            w,
            "{i},{},{},{},{},{},{},{},{}",
            tau,
            ids.join(" "),
            stats.efs_spent,
            stats.efs_saved,
            stats.phase2_skips,
            stats.indices_touched,
            stats.leftover_ids_scanned,
            stats.used_global
        )?;
    }
    Ok(())
}

#[derive(serde::Serialize)]
struct Sample {
    op: &'static str,
    n: u64,
    efs: u64,
    micros: f64,
}

/// Wraps the host sweep to record every measurement for the report.
struct Recording {
    inner: HostSweep,
    samples: Vec<Sample>,
}

impl SweepRunner for Recording {
    fn time_search(&mut self, idx_size: u64, efs: u64) -> f64 {
        let t = self.inner.time_search(idx_size, efs);
        self.samples.push(Sample { op: "search", n: idx_size, efs, micros: t });
        t
    }
    fn time_scan(&mut self, n: u64) -> f64 {
        let t = self.inner.time_scan(n);
        self.samples.push(Sample { op: "scan", n, efs: 0, micros: t });
        t
    }
}

fn cmd_calibrate(out: &Path, dim: usize, repeats: usize, max_log_size: u32) -> Result<()> {
    if max_log_size < 11 {
        bail!("size sweep needs at least two points (max_log_size >= 11)");
    }
    let sizes: Vec<u64> = (10..=max_log_size).map(|p| 1u64 << p).collect();
    let mut rec = Recording { inner: HostSweep::new(dim, repeats), samples: Vec::new() };
    let theta = calibrate_with(&mut rec, &sizes, &DEFAULT_EFS_SWEEP)
        .map_err(|e| anyhow::anyhow!("{e}"))?;
    #[derive(serde::Serialize)]
    struct Report {
        #[serde(flatten)]
        theta: Theta,
        samples: Vec<Sample>,
    }
    let f = std::fs::File::create(out)?;
    serde_json::to_writer_pretty(f, &Report { theta: theta.clone(), samples: rec.samples })?;
    println!(
        "a={:.4} b={:.4} c={:.4} b_scan={:.6} (R2 size {:.4}, efs {:.4}); report at {}",
        theta.a,
        theta.b,
        theta.c,
        theta.b_scan,
        theta.r2_size_sweep,
        theta.r2_efs_sweep,
        out.display()
    );
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::Dataset { cmd } => match cmd {
            DatasetCmd::Gen { out, n, dim, seed } => {
                let ds = gen_dataset(seed, n, dim);
                save_fvecs(&ds, &out)?;
                println!("wrote {n} vectors of dim {dim} to {}", out.display());
            }
            DatasetCmd::Inspect { path } => {
                let ds = load_fvecs(&path)?;
                let mut norm_sum = 0.0f64;
                for i in 0..ds.len() {
                    let v = ds.get(i as Id);
                    norm_sum += v.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
                }
                println!(
                    "{}: {} vectors, dim {}, mean L2 norm {:.4}",
                    path.display(),
                    ds.len(),
                    ds.dim(),
                    norm_sum / ds.len().max(1) as f64
                );
            }
        },
        Cmd::Gen { out_dir, n, dim, roles, departments, seed } => {
            cmd_gen(&out_dir, n, dim, roles, departments, seed)?;
        }
        Cmd::Build { data, optimizer, beta, efs, min_index_size, theta, out } => {
            cmd_build(&data, optimizer, beta, efs, min_index_size, &theta, &out)?;
        }
        Cmd::Plan { cmd } => match cmd {
            PlanCmd::Inspect { layout, role, theta } => {
                cmd_plan_inspect(&layout, role, &theta)?;
            }
        },
        Cmd::Query { data, layout, role, roles_file, queries, k, efs, strategy, out } => {
            cmd_query(&data, &layout, role, &roles_file, &queries, k, efs, strategy, &out)?;
        }
        Cmd::Bench { config, theta, out_dir } => {
            let cfg: ExperimentConfig = match config {
                Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)?,
                None => ExperimentConfig::default(),
            };
            let theta = load_theta(&theta)?;
            run_experiment(&cfg, &theta, &out_dir)?;
            println!("sweeps written to {}", out_dir.display());
        }
        Cmd::Calibrate { out, dim, repeats, max_log_size } => {
            cmd_calibrate(&out, dim, repeats, max_log_size)?;
        }
    }
    Ok(())
}
