//! Run reports and event-log records.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvocationMetrics {
    pub id: u64,
    pub app: String,
    pub scale: f64,
    pub arrival_s: f64,
    pub finished: bool,
    pub end_to_end_s: f64,
    /// Allocated memory integrated over time.
    pub mem_gb_min: f64,
    /// Memory actually needed, integrated over the ideal (stall-free) timeline.
    pub mem_used_gb_min: f64,
    pub cpu_core_s: f64,
    pub cpu_used_core_s: f64,
    /// Volume-weighted share of data accesses served locally.
    pub local_access_fraction: f64,
    /// Total data volume accessed, GiB.
    pub access_gb: f64,
    /// Time components spent waiting for an environment after becoming runnable.
    pub startup_overhead_s: f64,
    pub recoveries: u32,
    /// Executions per compute component (above one means re-executed).
    pub executions: Vec<u32>,
    /// Digest over the outputs of all sink components.
    pub output_digest: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub p50: f64,
    pub p99: f64,
}

impl Summary {
    /// Mean and nearest-rank percentiles; all zero for an empty sample.
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self::default();
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let rank = |q: f64| v[((q * v.len() as f64).ceil() as usize).clamp(1, v.len()) - 1];
        Self {
            mean: v.iter().sum::<f64>() / v.len() as f64,
            p50: rank(0.5),
            p99: rank(0.99),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub end_to_end_s: Summary,
    pub mem_gb_min: Summary,
    pub mem_used_gb_min: Summary,
    pub cpu_core_s: Summary,
    pub startup_overhead_s: Summary,
    pub total_mem_gb_min: f64,
    pub total_mem_used_gb_min: f64,
    pub total_cpu_core_s: f64,
    pub total_cpu_used_core_s: f64,
    /// Used over allocated memory, whole run.
    pub mem_utilization: f64,
    pub local_access_fraction: f64,
    pub recoveries: u32,
    pub unfinished: usize,
}

/// A re-solve of a component's sizing parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizingDecision {
    pub app: String,
    pub component: String,
    pub samples: u64,
    pub init_mb: f64,
    pub step_mb: f64,
    /// `ok`, or `infeasible` when peak provisioning was used instead.
    pub status: String,
}

/// What a recovery restarted from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryRecord {
    pub t: f64,
    pub inv: u64,
    pub crashed: String,
    /// Components kept from before the cut.
    pub prefix: Vec<String>,
    /// Components restarted first.
    pub frontier: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub policy: String,
    pub seed: u64,
    pub events_processed: u64,
    pub sim_end_s: f64,
    pub aggregates: Aggregates,
    pub invocations: Vec<InvocationMetrics>,
    pub sizing_decisions: Vec<SizingDecision>,
    pub recoveries: Vec<RecoveryRecord>,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub(crate) fn aggregate(invocations: &[InvocationMetrics]) -> Aggregates {
        let done: Vec<&InvocationMetrics> = invocations.iter().filter(|m| m.finished).collect();
        let col =
            |f: fn(&InvocationMetrics) -> f64| -> Vec<f64> { done.iter().map(|m| f(m)).collect() };
        let total = |f: fn(&InvocationMetrics) -> f64| -> f64 { invocations.iter().map(f).sum() };
        let mem = total(|m| m.mem_gb_min);
        let used = total(|m| m.mem_used_gb_min);
        let (mut lw, mut l) = (0.0, 0.0);
        for m in invocations {
            lw += m.access_gb;
            l += m.local_access_fraction * m.access_gb;
        }
        Aggregates {
            end_to_end_s: Summary::of(&col(|m| m.end_to_end_s)),
            mem_gb_min: Summary::of(&col(|m| m.mem_gb_min)),
            mem_used_gb_min: Summary::of(&col(|m| m.mem_used_gb_min)),
            cpu_core_s: Summary::of(&col(|m| m.cpu_core_s)),
            startup_overhead_s: Summary::of(&col(|m| m.startup_overhead_s)),
            total_mem_gb_min: mem,
            total_mem_used_gb_min: used,
            total_cpu_core_s: total(|m| m.cpu_core_s),
            total_cpu_used_core_s: total(|m| m.cpu_used_core_s),
            mem_utilization: if mem > 0.0 { used / mem } else { 1.0 },
            local_access_fraction: if lw > 0.0 { l / lw } else { 1.0 },
            recoveries: invocations.iter().map(|m| m.recoveries).sum(),
            unfinished: invocations.len() - done.len(),
        }
    }
}

/// One scheduling decision, as written to the event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub t: f64,
    pub app: String,
    pub inv: u64,
    pub comp: String,
    pub server: usize,
    pub cpu: u32,
    pub mem_mb: f64,
    pub mode: String,
    pub colocated: bool,
    pub cache_hit: bool,
}

/// Component lifecycle transition, as written to the event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LifecycleRecord {
    pub t: f64,
    pub event: String,
    pub app: String,
    pub inv: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub comp: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub detail: Option<String>,
}
