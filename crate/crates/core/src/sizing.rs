//! History-driven sizing.
//!
//! * [`solve_sizing`] picks an initial allocation and an increment size on a
//!   granule lattice, trading up-front waste against the number of scale-ups.
//! * [`select_parallel_vcpus`] trims the vCPU count of a parallel component by
//!   its historical CPU utilization.
//! * [`solve_aggregation`] is the zero-one program deciding which component
//!   pairs to keep together (or split apart when resources must be reclaimed).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::history::{ResourceProfile, WeightedPeak};
use crate::units::{round_above, MIB};

pub const DEFAULT_GRANULE: u64 = 64 * MIB;
pub const DEFAULT_CHUNK_CAP: u64 = 1024 * MIB;
pub const FIXED_INIT: u64 = 256 * MIB;
pub const FIXED_STEP: u64 = 64 * MIB;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SizingError {
    #[error("no lattice point satisfies the waste bound")]
    Infeasible,
    #[error("invalid sizing problem: {0}")]
    Invalid(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimension {
    Memory,
    Cpu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SizingParams {
    pub init: u64,
    pub step: u64,
    pub dimension: Dimension,
}

impl SizingParams {
    pub fn fixed_default() -> Self {
        Self {
            init: FIXED_INIT,
            step: FIXED_STEP,
            dimension: Dimension::Memory,
        }
    }

    /// Peak provisioning: smallest granule multiple strictly above the peak.
    pub fn peak(max_peak: u64, granule: u64) -> Self {
        Self {
            init: round_above(max_peak, granule),
            step: granule,
            dimension: Dimension::Memory,
        }
    }

    /// Number of increments needed so that `init + k·step > demand`.
    pub fn increments_for(&self, demand: u64) -> u64 {
        increments(self.init, self.step, demand)
    }

    /// Allocation reached once `demand` is covered.
    pub fn covering(&self, demand: u64) -> u64 {
        self.init + self.increments_for(demand) * self.step
    }
}

/// Minimal `k ≥ 0` with `init + k·step > demand`.
pub fn increments(init: u64, step: u64, demand: u64) -> u64 {
    if demand < init {
        0
    } else {
        (demand - init) / step + 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizingProblem {
    pub history: Vec<WeightedPeak>,
    pub cost_factor: f64,
    pub thres: f64,
    pub granule: u64,
    pub max_init: u64,
    pub max_step: u64,
}

impl SizingProblem {
    fn validate(&self) -> Result<(), SizingError> {
        if self.history.is_empty() {
            return Err(SizingError::Invalid("empty history"));
        }
        if !(self.cost_factor > 0.0) {
            return Err(SizingError::Invalid("cost_factor must be positive"));
        }
        if !(self.thres > 0.0 && self.thres <= 1.0) {
            return Err(SizingError::Invalid("thres must lie in (0, 1]"));
        }
        if self.granule == 0 {
            return Err(SizingError::Invalid("granule must be positive"));
        }
        if self.max_init < self.granule || self.max_step < self.granule {
            return Err(SizingError::Invalid("search caps below one granule"));
        }
        Ok(())
    }

    /// Aggregate waste ratio of starting at `init`:
    /// Σ max(init−h,0)·t / Σ h·t (zero when nothing is wasted).
    pub fn waste_ratio(&self, init: u64) -> f64 {
        let mut waste = 0.0;
        let mut used = 0.0;
        for h in &self.history {
            waste += init.saturating_sub(h.peak_mem) as f64 * h.exec_time;
            used += h.peak_mem as f64 * h.exec_time;
        }
        if waste == 0.0 {
            0.0
        } else {
            waste / used
        }
    }

    /// `init + cost_factor · Σ w·step·k`, summed in history order.
    pub fn objective(&self, init: u64, step: u64) -> f64 {
        let mut acc = 0.0;
        for h in &self.history {
            acc += h.weight * step as f64 * increments(init, step, h.peak_mem) as f64;
        }
        init as f64 + self.cost_factor * acc
    }
}

/// Lattice: `init ∈ {g, 2g, …, ⌊max_init/g⌋g}`, `step ∈ {g, …, ⌊max_step/g⌋g}`.
/// The smallest init is one granule, the smallest physical memory component.
///
/// Scans init ascending and stops once init alone reaches the incumbent; the
/// waste ratio is nondecreasing in init, so the feasible inits form a prefix.
pub fn solve_sizing(p: &SizingProblem) -> Result<SizingParams, SizingError> {
    p.validate()?;
    let g = p.granule;
    let n_init = p.max_init / g;
    let n_step = p.max_step / g;

    // largest feasible init index via binary search over the monotone waste ratio
    let feasible = |i: u64| p.waste_ratio(i * g) < p.thres;
    if !feasible(1) {
        return Err(SizingError::Infeasible);
    }
    let (mut lo, mut hi) = (1u64, n_init);
    while lo < hi {
        let mid = lo + (hi - lo).div_ceil(2);
        if feasible(mid) {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    let last_init = lo;

    let mut best: Option<(f64, u64, u64)> = None;
    for i in 1..=last_init {
        let init = i * g;
        if let Some((obj, _, _)) = best {
            if init as f64 >= obj {
                break;
            }
        }
        // weight of samples still uncovered by init alone
        let uncovered: f64 = p
            .history
            .iter()
            .filter(|h| h.peak_mem >= init)
            .map(|h| h.weight)
            .sum();
        if uncovered == 0.0 {
            let obj = p.objective(init, g);
            if best.is_none_or(|(b, _, _)| obj < b) {
                best = Some((obj, init, g));
            }
            continue;
        }
        for j in 1..=n_step {
            let step = j * g;
            if let Some((obj, _, _)) = best {
                // every uncovered sample needs at least one increment
                let lower = init as f64 + p.cost_factor * step as f64 * uncovered;
                if lower > obj * (1.0 + 1e-9) + 1.0 {
                    break;
                }
            }
            let obj = p.objective(init, step);
            if best.is_none_or(|(b, _, _)| obj < b) {
                best = Some((obj, init, step));
            }
        }
    }
    let (_, init, step) = best.expect("feasible lattice point exists");
    Ok(SizingParams {
        init,
        step,
        dimension: Dimension::Memory,
    })
}

/// vCPUs for `requested` parallel instances: `⌈requested × util⌉` clamped to
/// `[1, requested]`, where util is the historical EMA CPU utilization.
pub fn select_parallel_vcpus(profile: Option<&ResourceProfile>, requested: u32) -> u32 {
    assert!(requested >= 1);
    let Some(util) = profile.and_then(ResourceProfile::ema_util) else {
        return requested;
    };
    // absorb float noise such as 10 × 0.3 = 3.0000000000000004
    let want = (f64::from(requested) * util - 1e-9).ceil();
    (want.max(1.0) as u32).min(requested)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregationCandidate {
    pub id: usize,
    /// Bytes per second exchanged by the pair.
    pub bandwidth: u64,
    pub cpu: u32,
    pub mem: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregationProblem {
    pub candidates: Vec<AggregationCandidate>,
    pub pool_cpu: u32,
    pub pool_mem: u64,
    /// When set, the problem is disaggregation: free at least this much.
    pub min_reclaim: Option<(u32, u64)>,
}

/// Candidate counts above this use the greedy heuristic instead of
/// branch and bound.
pub const EXACT_AGGREGATION_LIMIT: usize = 40;
const RECLAIM_RELAX: f64 = 0.8;
const RECLAIM_ROUNDS: usize = 10;

/// Returns selected candidate ids, ascending.
pub fn solve_aggregation(p: &AggregationProblem) -> Vec<usize> {
    let mut ids = match p.min_reclaim {
        None => aggregate(p),
        Some(target) => disaggregate(p, target),
    };
    ids.sort_unstable();
    ids
}

fn aggregate(p: &AggregationProblem) -> Vec<usize> {
    let items: Vec<&AggregationCandidate> = p
        .candidates
        .iter()
        .filter(|c| c.cpu <= p.pool_cpu && c.mem <= p.pool_mem && c.bandwidth > 0)
        .collect();
    if items.len() > EXACT_AGGREGATION_LIMIT {
        return greedy_aggregate(&items, p.pool_cpu, p.pool_mem);
    }
    let mut order = items;
    order.sort_by(|a, b| b.bandwidth.cmp(&a.bandwidth).then(a.id.cmp(&b.id)));
    let mut suffix = vec![0u64; order.len() + 1];
    for i in (0..order.len()).rev() {
        suffix[i] = suffix[i + 1] + order[i].bandwidth;
    }
    let mut search = MaxSearch {
        items: &order,
        suffix: &suffix,
        best_value: 0,
        best: Vec::new(),
        chosen: Vec::new(),
    };
    search.dfs(0, 0, p.pool_cpu, p.pool_mem);
    search.best
}

struct MaxSearch<'a> {
    items: &'a [&'a AggregationCandidate],
    suffix: &'a [u64],
    best_value: u64,
    best: Vec<usize>,
    chosen: Vec<usize>,
}

impl MaxSearch<'_> {
    fn dfs(&mut self, i: usize, value: u64, cpu_left: u32, mem_left: u64) {
        if value > self.best_value {
            self.best_value = value;
            self.best = self.chosen.clone();
        }
        if i == self.items.len() || value + self.suffix[i] <= self.best_value {
            return;
        }
        let it = self.items[i];
        if it.cpu <= cpu_left && it.mem <= mem_left {
            self.chosen.push(it.id);
            self.dfs(
                i + 1,
                value + it.bandwidth,
                cpu_left - it.cpu,
                mem_left - it.mem,
            );
            self.chosen.pop();
        }
        self.dfs(i + 1, value, cpu_left, mem_left);
    }
}

fn greedy_aggregate(items: &[&AggregationCandidate], pool_cpu: u32, pool_mem: u64) -> Vec<usize> {
    // density against the normalized resource footprint
    let norm = |c: &AggregationCandidate| {
        let cpu = if pool_cpu > 0 {
            f64::from(c.cpu) / f64::from(pool_cpu)
        } else {
            0.0
        };
        let mem = if pool_mem > 0 {
            c.mem as f64 / pool_mem as f64
        } else {
            0.0
        };
        c.bandwidth as f64 / (cpu + mem).max(1e-12)
    };
    let mut order: Vec<&AggregationCandidate> = items.to_vec();
    order.sort_by(|a, b| norm(b).total_cmp(&norm(a)).then(a.id.cmp(&b.id)));
    let (mut cpu, mut mem) = (pool_cpu, pool_mem);
    let mut out = Vec::new();
    for c in order {
        if c.cpu <= cpu && c.mem <= mem {
            cpu -= c.cpu;
            mem -= c.mem;
            out.push(c.id);
        }
    }
    out
}

fn disaggregate(p: &AggregationProblem, (min_cpu, min_mem): (u32, u64)) -> Vec<usize> {
    let total_cpu: u64 = p.candidates.iter().map(|c| u64::from(c.cpu)).sum();
    let total_mem: u64 = p.candidates.iter().map(|c| c.mem).sum();
    let mut factor = 1.0;
    for _ in 0..=RECLAIM_ROUNDS {
        let need_cpu = (f64::from(min_cpu) * factor).ceil() as u64;
        let need_mem = (min_mem as f64 * factor).ceil() as u64;
        if total_cpu >= need_cpu && total_mem >= need_mem {
            return min_cover(&p.candidates, need_cpu, need_mem);
        }
        factor *= RECLAIM_RELAX;
    }
    // best effort: everything reclaims the most
    p.candidates.iter().map(|c| c.id).collect()
}

/// Minimum-bandwidth subset whose resources cover the targets.
fn min_cover(cands: &[AggregationCandidate], need_cpu: u64, need_mem: u64) -> Vec<usize> {
    if need_cpu == 0 && need_mem == 0 {
        return Vec::new();
    }
    if cands.len() > EXACT_AGGREGATION_LIMIT {
        let mut order: Vec<&AggregationCandidate> = cands.iter().collect();
        order.sort_by(|a, b| {
            let da = a.bandwidth as f64 / (a.cpu as f64 + a.mem as f64 / MIB as f64).max(1e-12);
            let db = b.bandwidth as f64 / (b.cpu as f64 + b.mem as f64 / MIB as f64).max(1e-12);
            da.total_cmp(&db).then(a.id.cmp(&b.id))
        });
        let (mut cpu, mut mem) = (0u64, 0u64);
        let mut out = Vec::new();
        for c in order {
            if cpu >= need_cpu && mem >= need_mem {
                break;
            }
            cpu += u64::from(c.cpu);
            mem += c.mem;
            out.push(c.id);
        }
        return out;
    }
    let mut order: Vec<&AggregationCandidate> = cands.iter().collect();
    order.sort_by(|a, b| a.bandwidth.cmp(&b.bandwidth).then(a.id.cmp(&b.id)));
    let mut rest_cpu = vec![0u64; order.len() + 1];
    let mut rest_mem = vec![0u64; order.len() + 1];
    for i in (0..order.len()).rev() {
        rest_cpu[i] = rest_cpu[i + 1] + u64::from(order[i].cpu);
        rest_mem[i] = rest_mem[i + 1] + order[i].mem;
    }
    let mut s = MinSearch {
        items: &order,
        rest_cpu: &rest_cpu,
        rest_mem: &rest_mem,
        need_cpu,
        need_mem,
        best_value: u64::MAX,
        best: Vec::new(),
        chosen: Vec::new(),
    };
    s.dfs(0, 0, 0, 0);
    s.best
}

struct MinSearch<'a> {
    items: &'a [&'a AggregationCandidate],
    rest_cpu: &'a [u64],
    rest_mem: &'a [u64],
    need_cpu: u64,
    need_mem: u64,
    best_value: u64,
    best: Vec<usize>,
    chosen: Vec<usize>,
}

impl MinSearch<'_> {
    fn dfs(&mut self, i: usize, value: u64, cpu: u64, mem: u64) {
        if value >= self.best_value {
            return;
        }
        if cpu >= self.need_cpu && mem >= self.need_mem {
            self.best_value = value;
            self.best = self.chosen.clone();
            return;
        }
        if i == self.items.len()
            || cpu + self.rest_cpu[i] < self.need_cpu
            || mem + self.rest_mem[i] < self.need_mem
        {
            return;
        }
        let it = self.items[i];
        self.chosen.push(it.id);
        self.dfs(
            i + 1,
            value + it.bandwidth,
            cpu + u64::from(it.cpu),
            mem + it.mem,
        );
        self.chosen.pop();
        self.dfs(i + 1, value, cpu, mem);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::history::UsageSample;
    use proptest::prelude::*;

    const MB: u64 = MIB;

    fn problem(hist: &[(u64, f64, f64)], cost: f64, thres: f64, cap: u64) -> SizingProblem {
        SizingProblem {
            history: hist
                .iter()
                .map(|&(h, t, w)| WeightedPeak {
                    peak_mem: h,
                    exec_time: t,
                    weight: w,
                })
                .collect(),
            cost_factor: cost,
            thres,
            granule: 64 * MB,
            max_init: cap,
            max_step: cap,
        }
    }

    /// Exhaustive lattice scan, written independently of the solver.
    fn oracle(p: &SizingProblem) -> Option<(f64, u64, u64)> {
        let g = p.granule;
        let mut best: Option<(f64, u64, u64)> = None;
        for i in 1..=p.max_init / g {
            let init = i * g;
            let (mut waste, mut used) = (0.0, 0.0);
            for h in &p.history {
                if init > h.peak_mem {
                    waste += (init - h.peak_mem) as f64 * h.exec_time;
                }
                used += h.peak_mem as f64 * h.exec_time;
            }
            let ratio = if waste == 0.0 { 0.0 } else { waste / used };
            if !(ratio < p.thres) {
                continue;
            }
            for j in 1..=p.max_step / g {
                let step = j * g;
                let mut acc = 0.0;
                for h in &p.history {
                    let mut k = 0u64;
                    while init + k * step <= h.peak_mem {
                        k += 1;
                    }
                    acc += h.weight * step as f64 * k as f64;
                }
                let obj = init as f64 + p.cost_factor * acc;
                if best.is_none_or(|(b, _, _)| obj < b) {
                    best = Some((obj, init, step));
                }
            }
        }
        best
    }

    #[test]
    fn single_sample_prefers_covering_init() {
        let p = problem(&[(256 * MB, 1.0, 1.0)], 2.0, 1.0, 1024 * MB);
        let s = solve_sizing(&p).unwrap();
        let (obj, init, step) = oracle(&p).unwrap();
        assert_eq!((s.init, s.step), (init, step));
        assert_eq!(p.objective(s.init, s.step), obj);
        // strict coverage: 256 MB needs one increment, 320 MB none
        assert_eq!((s.init, s.step), (320 * MB, 64 * MB));
        assert_eq!(increments(256 * MB, 64 * MB, 256 * MB), 1);
    }

    #[test]
    fn low_threshold_forces_small_init() {
        let hist: Vec<_> = (0..5).map(|_| (512 * MB, 1.0, 0.2)).collect();
        let p = problem(&hist, 2.0, 0.01, 2048 * MB);
        let s = solve_sizing(&p).unwrap();
        let (obj, init, step) = oracle(&p).unwrap();
        assert_eq!((s.init, s.step), (init, step));
        assert_eq!(p.objective(s.init, s.step), obj);
        // 576 MB would waste 64/512 = 12.5% > 1%
        assert!(s.init <= 512 * MB);
        assert!(p.waste_ratio(s.init) < 0.01);
    }

    #[test]
    fn infeasible_when_everything_is_tiny() {
        let p = problem(&[(1 * MB, 1.0, 1.0)], 1.0, 0.5, 256 * MB);
        assert_eq!(solve_sizing(&p), Err(SizingError::Infeasible));
        let fallback = SizingParams::peak(1 * MB, 64 * MB);
        assert_eq!(fallback.init, 64 * MB);
        assert_eq!(fallback.covering(1 * MB), 64 * MB);
    }

    #[test]
    fn rejects_invalid_problems() {
        let mut p = problem(&[(64 * MB, 1.0, 1.0)], 1.0, 0.5, 256 * MB);
        p.cost_factor = 0.0;
        assert!(matches!(solve_sizing(&p), Err(SizingError::Invalid(_))));
        let p = problem(&[], 1.0, 0.5, 256 * MB);
        assert!(matches!(solve_sizing(&p), Err(SizingError::Invalid(_))));
    }

    #[test]
    fn fixed_policy_covering() {
        let f = SizingParams::fixed_default();
        assert_eq!(f.covering(100 * MB), 256 * MB);
        assert_eq!(f.covering(256 * MB), 320 * MB);
        assert_eq!(f.increments_for(1000 * MB), 12);
    }

    fn util_profile(util: f64) -> ResourceProfile {
        let mut p = ResourceProfile::default();
        p.record(UsageSample {
            invocation_id: 0,
            peak_cpu: 10.0,
            peak_mem: 0,
            exec_time: 1.0,
            mean_cpu_util: util,
        });
        p
    }

    #[test]
    fn parallel_vcpus() {
        assert_eq!(select_parallel_vcpus(Some(&util_profile(0.5)), 10), 5);
        assert_eq!(select_parallel_vcpus(Some(&util_profile(1.0)), 10), 10);
        assert_eq!(select_parallel_vcpus(Some(&util_profile(0.33)), 7), 3);
        assert_eq!(select_parallel_vcpus(Some(&util_profile(0.3)), 10), 3);
        assert_eq!(select_parallel_vcpus(Some(&util_profile(0.0)), 10), 1);
        assert_eq!(select_parallel_vcpus(None, 6), 6);
        assert_eq!(
            select_parallel_vcpus(Some(&ResourceProfile::default()), 6),
            6
        );
    }

    fn cand(id: usize, bw: u64, cpu: u32, mem_gb: u64) -> AggregationCandidate {
        AggregationCandidate {
            id,
            bandwidth: bw,
            cpu,
            mem: mem_gb << 30,
        }
    }

    #[test]
    fn aggregation_small_cases() {
        let p = AggregationProblem {
            candidates: vec![cand(0, 10, 1, 1), cand(1, 5, 1, 1)],
            pool_cpu: 1,
            pool_mem: 1 << 30,
            min_reclaim: None,
        };
        assert_eq!(solve_aggregation(&p), vec![0]);
        let empty = AggregationProblem {
            candidates: vec![],
            pool_cpu: 4,
            pool_mem: 1 << 30,
            min_reclaim: None,
        };
        assert!(solve_aggregation(&empty).is_empty());
    }

    #[test]
    fn disaggregation_min_bandwidth_and_relaxation() {
        let cands = vec![cand(0, 10, 2, 2), cand(1, 3, 1, 1), cand(2, 4, 1, 1)];
        let p = AggregationProblem {
            candidates: cands.clone(),
            pool_cpu: 0,
            pool_mem: 0,
            min_reclaim: Some((2, 2 << 30)),
        };
        assert_eq!(solve_aggregation(&p), vec![1, 2]);

        // 5 cpu asked, 4 available: relaxed once to 4
        let p = AggregationProblem {
            min_reclaim: Some((5, 0)),
            ..p
        };
        assert_eq!(solve_aggregation(&p), vec![0, 1, 2]);

        // never satisfiable even after ten relaxations: take everything
        let p = AggregationProblem {
            candidates: vec![cand(0, 1, 1, 0)],
            pool_cpu: 0,
            pool_mem: 0,
            min_reclaim: Some((100, 0)),
        };
        assert_eq!(solve_aggregation(&p), vec![0]);
    }

    #[test]
    fn greedy_fallback_respects_pool() {
        let cands: Vec<_> = (0..100).map(|i| cand(i, 100 + i as u64, 1, 1)).collect();
        let p = AggregationProblem {
            candidates: cands,
            pool_cpu: 10,
            pool_mem: 50 << 30,
            min_reclaim: None,
        };
        let s = solve_aggregation(&p);
        assert_eq!(s.len(), 10);
        assert_eq!(s, (90..100).collect::<Vec<_>>());
    }

    fn subset_oracle(p: &AggregationProblem) -> u64 {
        let n = p.candidates.len();
        let mut best = 0;
        for mask in 0u32..(1 << n) {
            let (mut cpu, mut mem, mut bw) = (0u64, 0u64, 0u64);
            for (i, c) in p.candidates.iter().enumerate() {
                if mask & (1 << i) != 0 {
                    cpu += u64::from(c.cpu);
                    mem += c.mem;
                    bw += c.bandwidth;
                }
            }
            if cpu <= u64::from(p.pool_cpu) && mem <= p.pool_mem {
                best = best.max(bw);
            }
        }
        best
    }

    proptest! {
        #[test]
        fn sizing_matches_oracle(
            hist in proptest::collection::vec((1u64..2048, 0.1f64..10.0, 0.01f64..1.0), 1..12),
            cost in 0.1f64..4.0,
            thres in 0.05f64..1.0,
            cap_granules in 1u64..24,
        ) {
            let total: f64 = hist.iter().map(|h| h.2).sum();
            let hist: Vec<_> = hist.iter().map(|&(h, t, w)| (h * MB, t, w / total)).collect();
            let p = problem(&hist, cost, thres, cap_granules * 64 * MB);
            match (solve_sizing(&p), oracle(&p)) {
                (Ok(s), Some((obj, init, step))) => {
                    prop_assert_eq!(p.objective(s.init, s.step), obj);
                    prop_assert_eq!((s.init, s.step), (init, step));
                    prop_assert!(p.waste_ratio(s.init) < p.thres);
                }
                (Err(SizingError::Infeasible), None) => {}
                (a, b) => prop_assert!(false, "solver {:?} vs oracle {:?}", a, b),
            }
        }

        #[test]
        fn larger_threshold_never_worse(
            hist in proptest::collection::vec((1u64..1024, 0.1f64..5.0), 1..8),
            t1 in 0.05f64..1.0,
            t2 in 0.05f64..1.0,
        ) {
            let n = hist.len() as f64;
            let hist: Vec<_> = hist.iter().map(|&(h, t)| (h * MB, t, 1.0 / n)).collect();
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            let a = problem(&hist, 1.5, lo, 1024 * MB);
            let b = problem(&hist, 1.5, hi, 1024 * MB);
            if let Ok(sa) = solve_sizing(&a) {
                let sb = solve_sizing(&b).unwrap();
                prop_assert!(b.objective(sb.init, sb.step) <= a.objective(sa.init, sa.step));
            }
        }

        #[test]
        fn vcpus_within_bounds(p in 1u32..512, util in 0.0f64..=1.0) {
            let v = select_parallel_vcpus(Some(&util_profile(util)), p);
            prop_assert!(v >= 1 && v <= p);
        }

        #[test]
        fn aggregation_matches_enumeration(
            cands in proptest::collection::vec((0u64..1000, 0u32..8, 0u64..16), 0..12),
            pool_cpu in 0u32..24,
            pool_mem in 0u64..48,
        ) {
            let p = AggregationProblem {
                candidates: cands.iter().enumerate().map(|(i, &(b, c, m))| cand(i, b, c, m)).collect(),
                pool_cpu,
                pool_mem: pool_mem << 30,
                min_reclaim: None,
            };
            let s = solve_aggregation(&p);
            let (mut cpu, mut mem, mut bw) = (0u64, 0u64, 0u64);
            for id in &s {
                let c = p.candidates[*id];
                cpu += u64::from(c.cpu);
                mem += c.mem;
                bw += c.bandwidth;
            }
            prop_assert!(cpu <= u64::from(pool_cpu) && mem <= p.pool_mem);
            prop_assert_eq!(bw, subset_oracle(&p));
        }
    }
}
