//! Deterministic discrete-event simulation of invocations on a cluster.

pub mod cost;
mod engine;
#[cfg(test)]
mod engine_tests;
pub mod report;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::{ClusterConfig, ClusterError};
use crate::graph::ResourceGraph;
use crate::history::{ProfileKey, ProfileStore};
use crate::scheduler::SchedulerConfig;
use crate::sizing::{SizingParams, FIXED_INIT, FIXED_STEP};

pub use cost::{
    component_runtime, cpu_autoscale_tick, runtime_parts, AutoscaleConfig, CostModel, Runtime,
    RuntimePlacement,
};
pub use report::{
    Aggregates, DecisionRecord, InvocationMetrics, LifecycleRecord, RecoveryRecord, RunReport,
    SizingDecision, Summary,
};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation input: {0}")]
    Config(String),
    #[error(
        "deadlock at t={t:.6}: {pending} invocation(s) pending with no runnable event ({detail})"
    )]
    Deadlock {
        t: f64,
        pending: usize,
        detail: String,
    },
    #[error("accounting invariant violated at t={t:.6}: {detail}")]
    Invariant { t: f64, detail: String },
    #[error(transparent)]
    Cluster(#[from] ClusterError),
}

/// How memory sizes are chosen under the adaptive policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SizingMode {
    /// Initial and incremental sizes optimized over the component's history.
    History,
    /// Fixed initial and incremental sizes.
    Fixed,
    /// Initial size at the highest usage ever seen.
    Peak,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Policy {
    Adaptive {
        sizing: SizingMode,
    },
    /// One function per invocation sized to the historical peak.
    FaasPeak,
    /// One container per component, each sized to its own historical peak.
    DagFixed,
    /// Adaptive placement with every data access served remotely.
    AlwaysRemote,
    /// All-local execution that migrates resident state instead of splitting.
    MigrationBest {
        gbps: f64,
    },
}

impl Policy {
    pub const ADAPTIVE: Policy = Policy::Adaptive {
        sizing: SizingMode::History,
    };

    pub fn name(&self) -> &'static str {
        match self {
            Policy::Adaptive {
                sizing: SizingMode::History,
            } => "adaptive",
            Policy::Adaptive {
                sizing: SizingMode::Fixed,
            } => "adaptive-fixed",
            Policy::Adaptive {
                sizing: SizingMode::Peak,
            } => "adaptive-peak",
            Policy::FaasPeak => "faas-peak",
            Policy::DagFixed => "dag-fixed",
            Policy::AlwaysRemote => "always-remote",
            Policy::MigrationBest { .. } => "migration-best",
        }
    }

    pub const NAMES: [&'static str; 7] = [
        "adaptive",
        "adaptive-fixed",
        "adaptive-peak",
        "faas-peak",
        "dag-fixed",
        "always-remote",
        "migration-best",
    ];
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Policy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "adaptive" => Policy::ADAPTIVE,
            "adaptive-fixed" => Policy::Adaptive {
                sizing: SizingMode::Fixed,
            },
            "adaptive-peak" => Policy::Adaptive {
                sizing: SizingMode::Peak,
            },
            "faas-peak" => Policy::FaasPeak,
            "dag-fixed" => Policy::DagFixed,
            "always-remote" => Policy::AlwaysRemote,
            "migration-best" => Policy::MigrationBest { gbps: 100.0 },
            other => {
                return Err(format!(
                    "unknown policy `{other}` (expected one of {})",
                    Policy::NAMES.join(", ")
                ))
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SizingConfig {
    /// Weight of scale-up bytes against initial bytes.
    pub cost_factor: f64,
    /// Bound on the aggregate waste ratio.
    pub thres: f64,
    /// Re-solve period in samples once warmed up.
    pub resolve_every: u64,
    pub fixed_init: u64,
    pub fixed_step: u64,
}

impl Default for SizingConfig {
    fn default() -> Self {
        Self {
            cost_factor: 2.0,
            thres: 0.05,
            resolve_every: 1000,
            fixed_init: FIXED_INIT,
            fixed_step: FIXED_STEP,
        }
    }
}

impl SizingConfig {
    /// Sample count at which parameters solved at `at` are solved again:
    /// doubling up to the period, then every period.
    pub fn next_solve(&self, at: u64) -> u64 {
        let k = self.resolve_every.max(1);
        if at.saturating_mul(2) <= k {
            (at * 2).max(1)
        } else {
            (at / k + 1) * k
        }
    }
}

/// Crash the running instance of a named compute component at time `at`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureSpec {
    pub component: String,
    pub at: f64,
}

impl FromStr for FailureSpec {
    type Err = String;

    /// `comp@t`, e.g. `reduce@12.5`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (c, t) = s
            .rsplit_once('@')
            .ok_or_else(|| format!("failure `{s}` must look like comp@seconds"))?;
        let at: f64 = t
            .parse()
            .map_err(|_| format!("failure time `{t}` is not a number"))?;
        if c.is_empty() || !(at >= 0.0 && at.is_finite()) {
            return Err(format!("failure `{s}` needs a component and a time >= 0"));
        }
        Ok(Self {
            component: c.to_string(),
            at,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Arrival {
    /// Index into [`Workload::apps`].
    pub app: usize,
    pub at: f64,
    pub scale: f64,
}

#[derive(Debug, Clone)]
pub struct Workload {
    pub apps: Vec<ResourceGraph>,
    pub arrivals: Vec<Arrival>,
}

impl Workload {
    pub fn single(app: ResourceGraph, arrivals: impl IntoIterator<Item = (f64, f64)>) -> Self {
        Self {
            apps: vec![app],
            arrivals: arrivals
                .into_iter()
                .map(|(at, scale)| Arrival { app: 0, at, scale })
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        for (i, a) in self.arrivals.iter().enumerate() {
            if a.app >= self.apps.len() {
                return Err(SimError::Config(format!(
                    "arrival {i} names unknown app {}",
                    a.app
                )));
            }
            if !(a.at >= 0.0 && a.at.is_finite()) {
                return Err(SimError::Config(format!(
                    "arrival {i} has invalid time {}",
                    a.at
                )));
            }
            if !(a.scale > 0.0 && a.scale.is_finite()) {
                return Err(SimError::Config(format!(
                    "arrival {i} has invalid scale {}",
                    a.scale
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub policy: Policy,
    pub cost: CostModel,
    pub sched: SchedulerConfig,
    pub sizing: SizingConfig,
    pub autoscale: AutoscaleConfig,
    pub seed: u64,
    /// Keep the JSON-lines event log.
    pub record_events: bool,
    /// Run the full conservation check after every event.
    pub check_invariants: bool,
    pub failures: Vec<FailureSpec>,
    /// Stop processing events after this time.
    pub deadline_s: Option<f64>,
    /// Id given to the first arrival.
    pub first_invocation_id: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            policy: Policy::ADAPTIVE,
            cost: CostModel::default(),
            sched: SchedulerConfig::default(),
            sizing: SizingConfig::default(),
            autoscale: AutoscaleConfig::default(),
            seed: 0,
            record_events: true,
            check_invariants: cfg!(debug_assertions),
            failures: Vec::new(),
            deadline_s: None,
            first_invocation_id: 0,
        }
    }
}

impl SimConfig {
    pub fn with_policy(policy: Policy) -> Self {
        Self {
            policy,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub(crate) struct SolvedSizing {
    pub params: SizingParams,
    pub at: u64,
}

/// State that outlives one run: profiles and solved sizing parameters.
#[derive(Debug, Clone, Default)]
pub struct Deployment {
    pub profiles: ProfileStore,
    pub(crate) sizing: BTreeMap<ProfileKey, SolvedSizing>,
}

impl Deployment {
    pub fn new() -> Self {
        Self::default()
    }

    /// Sizing parameters currently in force for a profile key, if solved.
    pub fn solved_sizing(&self, key: &ProfileKey) -> Option<SizingParams> {
        self.sizing.get(key).map(|s| s.params)
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: RunReport,
    /// JSON-lines event log (empty unless recording was enabled).
    pub events: String,
}

/// Run every arrival of `workload` to completion (or the deadline).
pub fn run(
    cluster: &ClusterConfig,
    workload: &Workload,
    cfg: &SimConfig,
    deployment: &mut Deployment,
) -> Result<RunOutput, SimError> {
    cluster
        .validate()
        .map_err(|e| SimError::Config(e.to_string()))?;
    cfg.cost.validate().map_err(SimError::Config)?;
    workload.validate()?;
    if let Policy::MigrationBest { gbps } = cfg.policy {
        if !(gbps > 0.0) {
            return Err(SimError::Config(
                "migration bandwidth must be positive".into(),
            ));
        }
    }
    engine::Engine::new(cluster, workload, cfg, deployment).run()
}
