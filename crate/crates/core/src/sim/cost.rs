//! Latency and runtime model.

use serde::{Deserialize, Serialize};

use crate::graph::ComputeSpec;
use crate::units::GIB;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostModel {
    pub cold_start_s: f64,
    pub warm_start_s: f64,
    pub conn_setup_s: f64,
    pub compile_s: f64,
    /// Seconds per GiB touched when the data is on the same server.
    pub local_access_s_per_gb: f64,
    /// Seconds per GiB over the network; see [`CostModel::remote_rate_for`].
    pub remote_access_s_per_gb: f64,
    /// Slowdown at 100% memory overflow (random access).
    pub swap_upper: f64,
    /// Minimum slowdown once anything is swapped (sequential access).
    pub swap_lower: f64,
    /// Stall per memory scale-up step.
    pub mem_scale_s: f64,
}

pub const DEFAULT_LINK_GBPS: f64 = 100.0;
pub const DEFAULT_BATCH_EFFICIENCY: f64 = 0.8;

impl Default for CostModel {
    fn default() -> Self {
        Self {
            cold_start_s: 0.5,
            warm_start_s: 0.01,
            conn_setup_s: 0.034,
            compile_s: 0.2,
            local_access_s_per_gb: 0.01,
            remote_access_s_per_gb: Self::remote_rate_for(
                DEFAULT_LINK_GBPS,
                DEFAULT_BATCH_EFFICIENCY,
            ),
            swap_upper: 1.26,
            swap_lower: 1.01,
            mem_scale_s: 0.01,
        }
    }
}

impl CostModel {
    /// Seconds to move one GiB over a `gbps` link at batching efficiency `eta`.
    pub fn remote_rate_for(gbps: f64, eta: f64) -> f64 {
        assert!(gbps > 0.0 && eta > 0.0 && eta <= 1.0);
        GIB as f64 * 8.0 / (gbps * 1e9 * eta)
    }

    /// Model with the remote rate derived from a cluster's link speed.
    pub fn for_link(gbps: f64) -> Self {
        Self {
            remote_access_s_per_gb: Self::remote_rate_for(gbps, DEFAULT_BATCH_EFFICIENCY),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let lat = [
            ("cold_start_s", self.cold_start_s),
            ("warm_start_s", self.warm_start_s),
            ("conn_setup_s", self.conn_setup_s),
            ("compile_s", self.compile_s),
            ("local_access_s_per_gb", self.local_access_s_per_gb),
            ("mem_scale_s", self.mem_scale_s),
        ];
        for (name, v) in lat {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(format!("{name} must be a nonnegative number"));
            }
        }
        if !(self.remote_access_s_per_gb >= self.local_access_s_per_gb) {
            return Err("remote access must cost at least local access".into());
        }
        if !(self.swap_lower >= 1.0 && self.swap_upper >= self.swap_lower) {
            return Err("swap multipliers must satisfy 1 <= lower <= upper".into());
        }
        Ok(())
    }

    /// Compute-time multiplier when `overflow` of the working set is swapped.
    pub fn swap_multiplier(&self, overflow: f64) -> f64 {
        if overflow <= 0.0 {
            1.0
        } else {
            (1.0 + (self.swap_upper - 1.0) * overflow.min(1.0)).max(self.swap_lower)
        }
    }

    /// Seconds per GiB for data of which `local_fraction` sits on the
    /// accessing server.
    pub fn access_rate(&self, local_fraction: f64) -> f64 {
        let l = local_fraction.clamp(0.0, 1.0);
        l * self.local_access_s_per_gb + (1.0 - l) * self.remote_access_s_per_gb
    }

    /// Migration time for `bytes` at `gbps` with no other overhead.
    pub fn migration_s(bytes: u64, gbps: f64) -> f64 {
        bytes as f64 * 8.0 / (gbps * 1e9)
    }
}

/// Where and how a compute component runs.
#[derive(Debug, Clone, PartialEq)]
pub struct RuntimePlacement {
    pub vcpus: u32,
    /// Local fraction of each access, parallel to `ComputeSpec::accesses`.
    pub local_fraction: Vec<f64>,
    /// Fraction of the working set that did not fit in memory.
    pub overflow: f64,
}

/// Split of a runtime into its compute and data-access parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Runtime {
    pub compute_s: f64,
    pub access_s: f64,
}

impl Runtime {
    pub fn total(&self) -> f64 {
        self.compute_s + self.access_s
    }

    /// Share of the runtime spent computing.
    pub fn utilization(&self) -> f64 {
        let t = self.total();
        if t > 0.0 {
            self.compute_s / t
        } else {
            1.0
        }
    }
}

pub fn runtime_parts(
    comp: &ComputeSpec,
    placement: &RuntimePlacement,
    cost: &CostModel,
    scale: f64,
) -> Runtime {
    assert!(placement.vcpus >= 1);
    assert_eq!(placement.local_fraction.len(), comp.accesses.len());
    let p = comp.parallelism_at(scale) as f64;
    let compute_s =
        p * comp.base_work / placement.vcpus as f64 * cost.swap_multiplier(placement.overflow);
    let access_s = comp
        .accesses
        .iter()
        .zip(&placement.local_fraction)
        .map(|(a, &l)| p * a.volume as f64 / GIB as f64 * cost.access_rate(l))
        .sum();
    Runtime {
        compute_s,
        access_s,
    }
}

/// Seconds a compute component takes once running:
/// `p·base_work/vcpus × swap + Σ p·volume × rate(placement)`.
pub fn component_runtime(
    comp: &ComputeSpec,
    placement: &RuntimePlacement,
    cost: &CostModel,
    scale: f64,
) -> f64 {
    runtime_parts(comp, placement, cost, scale).total()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AutoscaleConfig {
    pub period_s: f64,
    pub low_watermark: f64,
    pub low_samples: u32,
}

impl Default for AutoscaleConfig {
    fn default() -> Self {
        Self {
            period_s: 0.25,
            low_watermark: 0.5,
            low_samples: 2,
        }
    }
}

/// One autoscaling step. `low_streak` counts consecutive samples under the
/// watermark; `max_vcpus` is the most the container may grow to right now
/// (application limit, server free CPU, parallelism). Returns the new vCPU
/// count and streak.
pub fn cpu_autoscale_tick(
    vcpus: u32,
    util: f64,
    low_streak: u32,
    max_vcpus: u32,
    cfg: &AutoscaleConfig,
) -> (u32, u32) {
    if util >= 1.0 {
        return (if vcpus < max_vcpus { vcpus + 1 } else { vcpus }, 0);
    }
    if util < cfg.low_watermark {
        let streak = low_streak + 1;
        if streak >= cfg.low_samples && vcpus > 1 {
            return (vcpus - 1, 0);
        }
        return (vcpus, streak);
    }
    (vcpus, 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Access, PiecewiseLinear};
    use proptest::prelude::*;

    fn comp(work: f64, vols_gb: &[f64]) -> ComputeSpec {
        ComputeSpec {
            id: crate::graph::ComponentId {
                app: "a".into(),
                index: 0,
            },
            name: "c".into(),
            base_work: work,
            parallelism: PiecewiseLinear::constant(1.0),
            accesses: vols_gb
                .iter()
                .enumerate()
                .map(|(j, v)| Access {
                    data: j,
                    volume: (v * GIB as f64) as u64,
                })
                .collect(),
            peak_mem_local: 0,
        }
    }

    fn zero_local() -> CostModel {
        CostModel {
            local_access_s_per_gb: 0.0,
            remote_access_s_per_gb: 1.0,
            ..CostModel::default()
        }
    }

    #[test]
    fn closed_form_examples() {
        let c = comp(10.0, &[10.0]);
        let local = RuntimePlacement {
            vcpus: 2,
            local_fraction: vec![1.0],
            overflow: 0.0,
        };
        assert_eq!(component_runtime(&c, &local, &zero_local(), 1.0), 5.0);
        let remote = RuntimePlacement {
            local_fraction: vec![0.0],
            ..local
        };
        assert_eq!(component_runtime(&c, &remote, &zero_local(), 1.0), 15.0);
    }

    #[test]
    fn default_remote_rate_from_link() {
        let c = CostModel::default();
        let expect = 1073741824.0 * 8.0 / (100e9 * 0.8);
        assert!((c.remote_access_s_per_gb - expect).abs() < 1e-15);
        assert!(c.validate().is_ok());
        // 14.7 GB over the full link
        assert!((CostModel::migration_s(14_700_000_000, 100.0) - 1.176).abs() < 1e-9);
    }

    #[test]
    fn swap_envelope() {
        let c = CostModel::default();
        assert_eq!(c.swap_multiplier(0.0), 1.0);
        assert_eq!(c.swap_multiplier(0.01), 1.01);
        assert!((c.swap_multiplier(1.0) - 1.26).abs() < 1e-12);
        assert!((c.swap_multiplier(5.0) - 1.26).abs() < 1e-12);
    }

    #[test]
    fn autoscale_rules() {
        let cfg = AutoscaleConfig::default();
        assert_eq!(cpu_autoscale_tick(2, 1.0, 0, 8, &cfg), (3, 0));
        assert_eq!(cpu_autoscale_tick(2, 1.0, 0, 2, &cfg), (2, 0));
        assert_eq!(cpu_autoscale_tick(2, 0.9, 0, 8, &cfg), (2, 0));
        let (v, s) = cpu_autoscale_tick(4, 0.3, 0, 8, &cfg);
        assert_eq!((v, s), (4, 1));
        assert_eq!(cpu_autoscale_tick(v, 0.3, s, 8, &cfg), (3, 0));
        assert_eq!(cpu_autoscale_tick(1, 0.3, 1, 8, &cfg), (1, 2));
        // a sample above the watermark resets the streak
        assert_eq!(cpu_autoscale_tick(4, 0.6, 1, 8, &cfg), (4, 0));
    }

    proptest! {
        #[test]
        fn runtime_increases_with_remote_volume(
            work in 0.0f64..100.0,
            vcpus in 1u32..16,
            vols in proptest::collection::vec(0.01f64..20.0, 1..5),
            split in proptest::collection::vec(0.0f64..1.0, 5),
            k in 0usize..5,
        ) {
            let c = comp(work, &vols);
            let cost = CostModel::default();
            let mut fr: Vec<f64> = split[..vols.len()].to_vec();
            let before = component_runtime(&c, &RuntimePlacement { vcpus, local_fraction: fr.clone(), overflow: 0.0 }, &cost, 1.0);
            let k = k % vols.len();
            // move more of access k to remote
            fr[k] *= 0.5;
            let after = component_runtime(&c, &RuntimePlacement { vcpus, local_fraction: fr.clone(), overflow: 0.0 }, &cost, 1.0);
            if split[k] > 1e-6 {
                prop_assert!(after > before);
            } else {
                prop_assert!(after >= before);
            }
        }
    }
}
