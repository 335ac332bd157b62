//! Synthetic applications, invocation-size distributions, arrival traces,
//! and baseline execution strategies.

use std::collections::BTreeMap;
use std::fmt;
use std::io;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::ClusterConfig;
use crate::graph::{
    AccessEntry, AppLimitSpec, ComputeEntry, DataEntry, GraphError, PiecewiseLinear, ResourceGraph,
    WorkloadSpec,
};
use crate::sim::{self, Arrival, Deployment, Policy, RunReport, SimConfig, SimError, Workload};

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("phase {index} is invalid: {reason}")]
    InvalidPhase { index: usize, reason: String },
    #[error("trace line {line}: {reason}")]
    Trace { line: usize, reason: String },
    #[error("trace names app `{0}` which is not loaded")]
    UnknownApp(String),
    #[error("invalid baseline parameters: {0}")]
    Baseline(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

fn one() -> Vec<(f64, f64)> {
    vec![(1.0, 1.0)]
}

/// One stage of a multi-phase application.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    #[serde(default)]
    pub name: Option<String>,
    /// CPU-seconds per parallel instance.
    pub work_s: f64,
    /// Peak memory per parallel instance, MB.
    pub mem_mb: f64,
    /// Parallel instances as a function of input scale.
    #[serde(default = "one")]
    pub parallelism: Vec<(f64, f64)>,
    /// Size of the intermediate data this phase hands to the next, MB.
    #[serde(default)]
    pub output_mb: f64,
}

impl Phase {
    /// A phase of `vcpus` instances whose combined peak is `mem_mb`.
    pub fn with_peak(vcpus: u32, mem_mb: f64, work_s: f64) -> Self {
        Self {
            name: None,
            work_s,
            mem_mb: mem_mb / f64::from(vcpus.max(1)),
            parallelism: vec![(1.0, f64::from(vcpus.max(1)))],
            output_mb: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiPhase {
    pub app: String,
    pub phases: Vec<Phase>,
    /// Defaults to the largest phase.
    #[serde(default)]
    pub max_cpu: Option<u32>,
    #[serde(default)]
    pub max_mem_mb: Option<u64>,
    /// When set, intermediate data grows linearly with scale over this range.
    #[serde(default)]
    pub scale_range: Option<(f64, f64)>,
}

/// Build a chain application with one compute component per phase.
pub fn gen_multiphase(mp: &MultiPhase) -> Result<WorkloadSpec, WorkloadError> {
    if mp.phases.is_empty() {
        return Err(WorkloadError::InvalidPhase {
            index: 0,
            reason: "an application needs at least one phase".into(),
        });
    }
    let bad = |index, reason: &str| WorkloadError::InvalidPhase {
        index,
        reason: reason.to_string(),
    };
    let mut computes = Vec::new();
    let mut datas = Vec::new();
    let mut triggers = Vec::new();
    let mut names: Vec<String> = Vec::new();
    let (mut max_cpu, mut max_mem) = (1.0f64, 0.0f64);
    for (i, ph) in mp.phases.iter().enumerate() {
        if !(ph.work_s >= 0.0 && ph.work_s.is_finite()) {
            return Err(bad(i, "work_s must be finite and >= 0"));
        }
        if !(ph.mem_mb >= 0.0 && ph.mem_mb.is_finite()) {
            return Err(bad(i, "mem_mb must be finite and >= 0"));
        }
        if !(ph.output_mb >= 0.0 && ph.output_mb.is_finite()) {
            return Err(bad(i, "output_mb must be finite and >= 0"));
        }
        let table = PiecewiseLinear::new(ph.parallelism.clone()).map_err(|e| bad(i, &e))?;
        if table.min_value() < 1.0 {
            return Err(bad(i, "parallelism must be at least 1"));
        }
        let name = ph.name.clone().unwrap_or_else(|| format!("phase{i}"));
        if names.contains(&name) {
            return Err(bad(i, "duplicate phase name"));
        }
        let pmax = table.points().iter().map(|p| p.1).fold(1.0, f64::max);
        max_cpu = max_cpu.max(pmax.round());
        max_mem = max_mem.max(pmax.round() * ph.mem_mb);

        let mut accesses = Vec::new();
        if i > 0 && mp.phases[i - 1].output_mb > 0.0 {
            accesses.push(AccessEntry {
                data: format!("{}_out", names[i - 1]),
                volume_mb: mp.phases[i - 1].output_mb / pmax.max(1.0),
            });
        }
        if ph.output_mb > 0.0 && i + 1 < mp.phases.len() {
            accesses.push(AccessEntry {
                data: format!("{name}_out"),
                volume_mb: ph.output_mb / pmax.max(1.0),
            });
            let size_mb = match mp.scale_range {
                Some((lo, hi)) if hi > lo && lo > 0.0 => {
                    vec![(lo, ph.output_mb * lo / hi), (hi, ph.output_mb)]
                }
                _ => vec![(1.0, ph.output_mb)],
            };
            datas.push(DataEntry {
                id: format!("{name}_out"),
                size_mb,
                growth: Vec::new(),
            });
        }
        computes.push(ComputeEntry {
            id: name.clone(),
            base_work_cpu_s: ph.work_s,
            parallelism: ph.parallelism.clone(),
            peak_mem_local_mb: ph.mem_mb,
            accesses,
        });
        if let Some(prev) = names.last() {
            triggers.push((prev.clone(), name.clone()));
        }
        names.push(name);
    }
    let data_mb: f64 = mp.phases.iter().map(|p| p.output_mb).sum();
    Ok(WorkloadSpec {
        app: mp.app.clone(),
        app_limit: AppLimitSpec {
            max_cpu: mp.max_cpu.unwrap_or(max_cpu as u32),
            max_mem_mb: mp
                .max_mem_mb
                .unwrap_or((max_mem + data_mb).ceil().max(1.0) as u64),
        },
        computes,
        datas,
        triggers,
    })
}

/// Shape of the input-scale distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistKind {
    /// Most invocations are small.
    Small,
    /// Most invocations are large.
    Large,
    /// Bimodal with a heavy large mode.
    Varying,
    /// Every invocation has the same size.
    Stable,
}

impl DistKind {
    pub const ALL: [DistKind; 4] = [
        DistKind::Small,
        DistKind::Large,
        DistKind::Varying,
        DistKind::Stable,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DistKind::Small => "small",
            DistKind::Large => "large",
            DistKind::Varying => "varying",
            DistKind::Stable => "stable",
        }
    }
}

impl fmt::Display for DistKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DistKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DistKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown distribution `{s}` (small, large, varying, stable)"))
    }
}

pub const SMALL_MEDIAN: f64 = 128.0;
pub const LARGE_MEDIAN: f64 = 2048.0;
pub const STABLE_SCALE: f64 = 512.0;

/// `n` input scales drawn from `kind`, deterministic in `seed`.
/// Scales are in the unit of the application's breakpoint tables.
pub fn gen_distribution(kind: DistKind, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lognormal = |median: f64, sigma: f64| LogNormal::new(median.ln(), sigma).expect("valid");
    let small = lognormal(SMALL_MEDIAN, 0.6);
    let large = lognormal(LARGE_MEDIAN, 0.4);
    let (lo, hi) = (lognormal(64.0, 0.3), lognormal(4096.0, 0.3));
    (0..n)
        .map(|_| {
            let s: f64 = match kind {
                DistKind::Small => small.sample(&mut rng),
                DistKind::Large => large.sample(&mut rng),
                DistKind::Varying => {
                    if rng.random_bool(0.75) {
                        lo.sample(&mut rng)
                    } else {
                        hi.sample(&mut rng)
                    }
                }
                DistKind::Stable => STABLE_SCALE,
            };
            s.max(1.0)
        })
        .collect()
}

/// Poisson arrival times with the given mean gap, starting at zero.
pub fn gen_arrivals(n: usize, mean_gap_s: f64, seed: u64) -> Vec<f64> {
    assert!(mean_gap_s > 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let exp = Exp::new(1.0 / mean_gap_s).expect("positive rate");
    let mut t = 0.0;
    (0..n)
        .map(|k| {
            if k > 0 {
                t += exp.sample(&mut rng);
            }
            t
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub app: String,
    pub arrival_s: f64,
    pub scale: f64,
}

/// Read a `app,arrival_s,scale` CSV.
pub fn read_trace<R: io::Read>(r: R) -> Result<Vec<TraceRecord>, WorkloadError> {
    let mut rd = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(r);
    let mut out: Vec<TraceRecord> = Vec::new();
    for (k, rec) in rd.deserialize().enumerate() {
        let line = k + 2;
        let rec: TraceRecord = rec?;
        let err = |reason: &str| WorkloadError::Trace {
            line,
            reason: reason.to_string(),
        };
        if rec.app.is_empty() {
            return Err(err("empty app id"));
        }
        if !(rec.arrival_s >= 0.0 && rec.arrival_s.is_finite()) {
            return Err(err("arrival_s must be finite and >= 0"));
        }
        if !(rec.scale > 0.0 && rec.scale.is_finite()) {
            return Err(err("scale must be positive"));
        }
        if out.last().is_some_and(|p| rec.arrival_s < p.arrival_s) {
            return Err(err("arrival times must be nondecreasing"));
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn write_trace<W: io::Write>(w: W, records: &[TraceRecord]) -> Result<(), WorkloadError> {
    let mut wr = csv::Writer::from_writer(w);
    for r in records {
        wr.serialize(r)?;
    }
    wr.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Bind trace records to loaded applications by app id.
pub fn workload_from_trace(
    apps: Vec<ResourceGraph>,
    records: &[TraceRecord],
) -> Result<Workload, WorkloadError> {
    let index: BTreeMap<&str, usize> = apps.iter().enumerate().map(|(i, g)| (g.app(), i)).collect();
    let arrivals = records
        .iter()
        .map(|r| {
            let app = *index
                .get(r.app.as_str())
                .ok_or_else(|| WorkloadError::UnknownApp(r.app.clone()))?;
            Ok(Arrival {
                app,
                at: r.arrival_s,
                scale: r.scale,
            })
        })
        .collect::<Result<Vec<_>, WorkloadError>>()?;
    Ok(Workload { apps, arrivals })
}

/// A comparison strategy run through the same engine.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "variant")]
pub enum BaselinePolicy {
    /// One function per invocation sized to the historical peak.
    FaasPeak,
    /// One function per component, each sized to its own historical peak.
    DagFixed,
    /// Adaptive placement with all data accessed remotely.
    AlwaysRemote,
    /// All-local execution that migrates state at phase boundaries.
    MigrationBest { gbps: f64 },
}

impl BaselinePolicy {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        match *self {
            BaselinePolicy::MigrationBest { gbps } if !(gbps > 0.0 && gbps.is_finite()) => {
                Err(WorkloadError::Baseline(format!(
                    "migration bandwidth {gbps} Gbps must be positive"
                )))
            }
            _ => Ok(()),
        }
    }

    pub fn policy(&self) -> Policy {
        match *self {
            BaselinePolicy::FaasPeak => Policy::FaasPeak,
            BaselinePolicy::DagFixed => Policy::DagFixed,
            BaselinePolicy::AlwaysRemote => Policy::AlwaysRemote,
            BaselinePolicy::MigrationBest { gbps } => Policy::MigrationBest { gbps },
        }
    }
}

/// Run `workload` under a baseline. `cfg` supplies everything but the policy;
/// `deployment` carries the history the baseline sizes from.
pub fn execute_baseline(
    baseline: BaselinePolicy,
    workload: &Workload,
    cluster: &ClusterConfig,
    cfg: &SimConfig,
    deployment: &mut Deployment,
) -> Result<RunReport, WorkloadError> {
    baseline.validate()?;
    let cfg = SimConfig {
        policy: baseline.policy(),
        ..cfg.clone()
    };
    Ok(sim::run(cluster, workload, &cfg, deployment)?.report)
}
