//! Experiment matrices: (workload × policy × seed) cells, their output files,
//! summaries and policy comparisons.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::ClusterConfig;
use crate::graph::{build_graph, ResourceGraph};
use crate::sim::{self, Deployment, FailureSpec, Policy, RunOutput, SimConfig, SimError, Workload};
use crate::workload::{
    gen_arrivals, gen_distribution, read_trace, DistKind, TraceRecord, WorkloadError, STABLE_SCALE,
};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {reason}")]
    Input { path: PathBuf, reason: String },
    #[error("cell {cell}: {source}")]
    Sim {
        cell: String,
        #[source]
        source: SimError,
    },
    #[error("summaries disagree on workloads: {0}")]
    KeyMismatch(String),
    #[error("workload `{0}` has no faas-peak rows to compare against")]
    MissingBaseline(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn read(path: &Path) -> Result<String, ExperimentError> {
    fs::read_to_string(path).map_err(io_err(path))
}

pub fn load_cluster(path: &Path) -> Result<ClusterConfig, ExperimentError> {
    ClusterConfig::from_json(&read(path)?).map_err(|e| ExperimentError::Input {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

/// A workload file: one application, named after the file stem.
pub fn load_app(path: &Path) -> Result<(String, ResourceGraph), ExperimentError> {
    let g = build_graph(&read(path)?).map_err(|e| ExperimentError::Input {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let name = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or(g.app())
        .to_string();
    Ok((name, g))
}

pub fn load_trace(path: &Path) -> Result<Vec<TraceRecord>, ExperimentError> {
    let f = fs::File::open(path).map_err(io_err(path))?;
    read_trace(f).map_err(|e: WorkloadError| ExperimentError::Input {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

/// `a..b` (inclusive), `a,b,c`, or a single seed.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>, ExperimentError> {
    let bad = || ExperimentError::Config(format!("seeds `{s}` must look like 0..4, 1,2,3 or 7"));
    let seeds: Vec<u64> = if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad())?;
        let b: u64 = b.trim().parse().map_err(|_| bad())?;
        if b < a {
            return Err(bad());
        }
        (a..=b).collect()
    } else {
        s.split(',')
            .map(|x| x.trim().parse().map_err(|_| bad()))
            .collect::<Result<_, _>>()?
    };
    if seeds.is_empty() {
        return Err(bad());
    }
    Ok(seeds)
}

/// Where invocations come from.
#[derive(Debug, Clone)]
pub enum Arrivals {
    Trace(Vec<TraceRecord>),
    /// Poisson arrivals with input scales relative to a typical input of 1.0.
    Generated {
        invocations: usize,
        dist: DistKind,
        mean_gap_s: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Cell {
    pub workload: String,
    pub policy: String,
    pub seed: u64,
}

impl Cell {
    pub fn stem(&self) -> String {
        format!("{}__{}__seed{}", self.workload, self.policy, self.seed)
    }
}

#[derive(Debug, Clone)]
pub struct Matrix {
    pub cluster: ClusterConfig,
    pub apps: Vec<(String, ResourceGraph)>,
    pub policies: Vec<Policy>,
    pub seeds: Vec<u64>,
    pub arrivals: Arrivals,
    /// Invocations replayed before measuring, to build history.
    pub warmup: usize,
    pub failures: Vec<FailureSpec>,
    pub base: SimConfig,
}

impl Matrix {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let cfg = |m: &str| Err(ExperimentError::Config(m.to_string()));
        if self.apps.is_empty() {
            return cfg("at least one workload is required");
        }
        if self.policies.is_empty() {
            return cfg("at least one policy is required");
        }
        if self.seeds.is_empty() {
            return cfg("at least one seed is required");
        }
        let mut names = BTreeSet::new();
        for (n, _) in &self.apps {
            if !names.insert(n) {
                return Err(ExperimentError::Config(format!(
                    "workload name `{n}` appears twice"
                )));
            }
        }
        self.cluster
            .validate()
            .map_err(|e| ExperimentError::Config(e.to_string()))?;
        self.base.cost.validate().map_err(ExperimentError::Config)?;
        match &self.arrivals {
            Arrivals::Trace(recs) => {
                for (_, g) in &self.apps {
                    if !recs.iter().any(|r| r.app == g.app()) {
                        return Err(ExperimentError::Config(format!(
                            "trace has no arrivals for app `{}`",
                            g.app()
                        )));
                    }
                }
            }
            Arrivals::Generated {
                invocations,
                mean_gap_s,
                ..
            } => {
                if *invocations == 0 {
                    return cfg("--invocations must be at least 1");
                }
                if !(*mean_gap_s > 0.0 && mean_gap_s.is_finite()) {
                    return cfg("mean inter-arrival gap must be positive");
                }
            }
        }
        for f in &self.failures {
            if !self
                .apps
                .iter()
                .any(|(_, g)| g.compute_by_name(&f.component).is_some())
            {
                return Err(ExperimentError::Config(format!(
                    "failure names unknown component `{}`",
                    f.component
                )));
            }
        }
        Ok(())
    }

    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for (w, _) in &self.apps {
            for p in &self.policies {
                for &seed in &self.seeds {
                    out.push(Cell {
                        workload: w.clone(),
                        policy: p.name().to_string(),
                        seed,
                    });
                }
            }
        }
        out
    }

    fn arrivals_for(
        &self,
        g: &ResourceGraph,
        seed: u64,
        n_override: Option<usize>,
    ) -> Vec<(f64, f64)> {
        match &self.arrivals {
            Arrivals::Trace(recs) => {
                let mine = recs
                    .iter()
                    .filter(|r| r.app == g.app())
                    .map(|r| (r.arrival_s, r.scale));
                match n_override {
                    Some(n) => mine.take(n).collect(),
                    None => mine.collect(),
                }
            }
            Arrivals::Generated {
                invocations,
                dist,
                mean_gap_s,
            } => {
                let n = n_override.unwrap_or(*invocations);
                let at = gen_arrivals(n, *mean_gap_s, seed);
                let scales = gen_distribution(*dist, n, seed);
                at.into_iter()
                    .zip(scales.into_iter().map(|s| s / STABLE_SCALE))
                    .collect()
            }
        }
    }

    pub fn run_cell(&self, cell: &Cell) -> Result<RunOutput, ExperimentError> {
        let (_, g) = self
            .apps
            .iter()
            .find(|(n, _)| *n == cell.workload)
            .expect("cell from this matrix");
        let mut policy: Policy = cell.policy.parse().map_err(ExperimentError::Config)?;
        if let Policy::MigrationBest { gbps } = &mut policy {
            *gbps = self.cluster.link_gbps;
        }
        let sim_err = |source| ExperimentError::Sim {
            cell: cell.stem(),
            source,
        };
        let mut dep = Deployment::new();
        if self.warmup > 0 {
            let cfg = SimConfig {
                policy,
                seed: cell.seed,
                record_events: false,
                failures: Vec::new(),
                ..self.base.clone()
            };
            let at = self.arrivals_for(g, cell.seed.wrapping_add(0x5eed_0000), Some(self.warmup));
            let wl = Workload::single(g.clone(), at);
            sim::run(&self.cluster, &wl, &cfg, &mut dep).map_err(sim_err)?;
        }
        let cfg = SimConfig {
            policy,
            seed: cell.seed,
            failures: self.failures.clone(),
            ..self.base.clone()
        };
        let wl = Workload::single(g.clone(), self.arrivals_for(g, cell.seed, None));
        let out = sim::run(&self.cluster, &wl, &cfg, &mut dep).map_err(sim_err)?;
        info!(
            "{}: {} invocations, {:.3} GBxmin",
            cell.stem(),
            out.report.invocations.len(),
            out.report.aggregates.total_mem_gb_min
        );
        Ok(out)
    }

    /// Run every cell on up to `jobs` threads; results in cell order.
    pub fn run_all(&self, jobs: usize) -> Result<Vec<(Cell, RunOutput)>, ExperimentError> {
        self.validate()?;
        let cells = self.cells();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build()
            .map_err(|e| ExperimentError::Config(e.to_string()))?;
        let results: Vec<Result<RunOutput, ExperimentError>> =
            pool.install(|| cells.par_iter().map(|c| self.run_cell(c)).collect());
        cells
            .into_iter()
            .zip(results)
            .map(|(c, r)| r.map(|o| (c, o)))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub workload: String,
    pub policy: String,
    pub seed: u64,
    pub mem_gb_min: f64,
    pub used_gb_min: f64,
    pub cpu_core_s: f64,
    pub e2e_p50: f64,
    pub e2e_p99: f64,
    pub local_frac: f64,
    pub recoveries: u32,
}

impl SummaryRow {
    pub fn of(cell: &Cell, out: &RunOutput) -> Self {
        let a = &out.report.aggregates;
        Self {
            workload: cell.workload.clone(),
            policy: cell.policy.clone(),
            seed: cell.seed,
            mem_gb_min: a.total_mem_gb_min,
            used_gb_min: a.total_mem_used_gb_min,
            cpu_core_s: a.total_cpu_core_s,
            e2e_p50: a.end_to_end_s.p50,
            e2e_p99: a.end_to_end_s.p99,
            local_frac: a.local_access_fraction,
            recoveries: a.recoveries,
        }
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), ExperimentError> {
    fs::write(path, bytes).map_err(io_err(path))
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| ExperimentError::Config(e.to_string()))?;
    write_file(path, &bytes)
}

pub fn read_summary(path: &Path) -> Result<Vec<SummaryRow>, ExperimentError> {
    let f = fs::File::open(path).map_err(io_err(path))?;
    let mut rd = csv::Reader::from_reader(f);
    rd.deserialize()
        .map(|r| {
            r.map_err(|e| ExperimentError::Input {
                path: path.to_path_buf(),
                reason: e.to_string(),
            })
        })
        .collect()
}

/// Write reports, event logs and `summary.csv` under `dir`.
pub fn write_outputs(
    dir: &Path,
    results: &[(Cell, RunOutput)],
) -> Result<Vec<SummaryRow>, ExperimentError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut rows = Vec::with_capacity(results.len());
    for (cell, out) in results {
        let stem = cell.stem();
        write_file(
            &dir.join(format!("{stem}.report.json")),
            out.report.to_json().as_bytes(),
        )?;
        write_file(
            &dir.join(format!("{stem}.events.jsonl")),
            out.events.as_bytes(),
        )?;
        rows.push(SummaryRow::of(cell, out));
    }
    write_summary(&dir.join("summary.csv"), &rows)?;
    Ok(rows)
}

pub const BASELINE: &str = "faas-peak";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SavingsRow {
    pub workload: String,
    pub policy: String,
    pub mem_gb_min: f64,
    pub e2e_p50: f64,
    /// (baseline − policy) / baseline × 100 on GB×min.
    pub mem_reduction_pct: f64,
    /// Baseline median latency over the policy's.
    pub speedup: f64,
}

/// Per workload, each policy against the peak-sized function baseline,
/// averaging over seeds.
pub fn compare(summaries: &[Vec<SummaryRow>]) -> Result<Vec<SavingsRow>, ExperimentError> {
    let keys: Vec<BTreeSet<&str>> = summaries
        .iter()
        .map(|rows| rows.iter().map(|r| r.workload.as_str()).collect())
        .collect();
    if let Some(first) = keys.first() {
        for (i, k) in keys.iter().enumerate().skip(1) {
            if k != first {
                return Err(ExperimentError::KeyMismatch(format!(
                    "summary 1 has {first:?}, summary {} has {k:?}",
                    i + 1
                )));
            }
        }
    }
    let mut acc: BTreeMap<(&str, &str), (f64, f64, usize)> = BTreeMap::new();
    for r in summaries.iter().flatten() {
        let e = acc.entry((&r.workload, &r.policy)).or_insert((0.0, 0.0, 0));
        e.0 += r.mem_gb_min;
        e.1 += r.e2e_p50;
        e.2 += 1;
    }
    let mean: BTreeMap<(&str, &str), (f64, f64)> = acc
        .into_iter()
        .map(|(k, (m, l, n))| (k, (m / n as f64, l / n as f64)))
        .collect();
    let mut out = Vec::new();
    for (&(w, p), &(mem, lat)) in &mean {
        let &(bm, bl) = mean
            .get(&(w, BASELINE))
            .ok_or_else(|| ExperimentError::MissingBaseline(w.to_string()))?;
        out.push(SavingsRow {
            workload: w.to_string(),
            policy: p.to_string(),
            mem_gb_min: mem,
            e2e_p50: lat,
            mem_reduction_pct: if bm > 0.0 {
                (bm - mem) / bm * 100.0
            } else {
                0.0
            },
            speedup: if lat > 0.0 { bl / lat } else { 1.0 },
        });
    }
    Ok(out)
}

pub fn format_table(rows: &[SavingsRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<20} {:<16} {:>12} {:>10} {:>12} {:>8}",
        "workload", "policy", "GBxmin", "reduction", "e2e_p50_s", "speedup"
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{:<20} {:<16} {:>12.4} {:>9.1}% {:>12.4} {:>7.2}x",
            r.workload, r.policy, r.mem_gb_min, r.mem_reduction_pct, r.e2e_p50, r.speedup
        );
    }
    s
}

pub fn write_savings(path: &Path, rows: &[SavingsRow]) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| ExperimentError::Config(e.to_string()))?;
    write_file(path, &bytes)
}
