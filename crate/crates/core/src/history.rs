//! Per-component execution history: a bounded window of usage samples with
//! geometric recency weights, plus EMA summaries that outlive the window.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_WINDOW: usize = 1000;
pub const DEFAULT_ALPHA: f64 = 0.5;
pub const DEFAULT_BETA: f64 = 0.98;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum HistoryError {
    #[error("profile has no samples")]
    EmptyHistory,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UsageSample {
    pub invocation_id: u64,
    /// vCPUs at peak.
    pub peak_cpu: f64,
    /// Bytes at peak.
    pub peak_mem: u64,
    /// Seconds; always positive.
    pub exec_time: f64,
    /// Fraction of allocated CPU time actually busy, in [0, 1].
    pub mean_cpu_util: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightedPeak {
    pub peak_mem: u64,
    pub exec_time: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResourceProfile {
    samples: VecDeque<UsageSample>,
    alpha: f64,
    beta: f64,
    window: usize,
    /// Total samples ever recorded, including evicted ones.
    recorded: u64,
    ema_cpu: f64,
    ema_mem: f64,
    ema_exec_time: f64,
    ema_util: f64,
    max_cpu: f64,
    max_mem: u64,
}

impl Default for ResourceProfile {
    fn default() -> Self {
        Self::new(DEFAULT_ALPHA, DEFAULT_BETA, DEFAULT_WINDOW)
    }
}

impl ResourceProfile {
    pub fn new(alpha: f64, beta: f64, window: usize) -> Self {
        assert!(alpha > 0.0 && alpha <= 1.0, "alpha must lie in (0, 1]");
        assert!(beta > 0.0 && beta <= 1.0, "beta must lie in (0, 1]");
        assert!(window >= 1);
        Self {
            samples: VecDeque::new(),
            alpha,
            beta,
            window,
            recorded: 0,
            ema_cpu: 0.0,
            ema_mem: 0.0,
            ema_exec_time: 0.0,
            ema_util: 0.0,
            max_cpu: 0.0,
            max_mem: 0,
        }
    }

    pub fn record(&mut self, s: UsageSample) {
        debug_assert!(s.peak_cpu >= 0.0 && s.exec_time > 0.0);
        debug_assert!((0.0..=1.0).contains(&s.mean_cpu_util));
        if self.recorded == 0 {
            self.ema_cpu = s.peak_cpu;
            self.ema_mem = s.peak_mem as f64;
            self.ema_exec_time = s.exec_time;
            self.ema_util = s.mean_cpu_util;
        } else {
            let a = self.alpha;
            self.ema_cpu = a * s.peak_cpu + (1.0 - a) * self.ema_cpu;
            self.ema_mem = a * s.peak_mem as f64 + (1.0 - a) * self.ema_mem;
            self.ema_exec_time = a * s.exec_time + (1.0 - a) * self.ema_exec_time;
            self.ema_util = a * s.mean_cpu_util + (1.0 - a) * self.ema_util;
        }
        self.max_cpu = self.max_cpu.max(s.peak_cpu);
        self.max_mem = self.max_mem.max(s.peak_mem);
        self.recorded += 1;
        self.samples.push_back(s);
        while self.samples.len() > self.window {
            self.samples.pop_front();
        }
    }

    pub fn is_empty(&self) -> bool {
        self.recorded == 0
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn recorded(&self) -> u64 {
        self.recorded
    }

    pub fn samples(&self) -> impl Iterator<Item = &UsageSample> {
        self.samples.iter()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn ema_cpu(&self) -> f64 {
        self.ema_cpu
    }

    pub fn ema_mem(&self) -> f64 {
        self.ema_mem
    }

    pub fn ema_exec_time(&self) -> Option<f64> {
        (!self.is_empty()).then_some(self.ema_exec_time)
    }

    pub fn ema_util(&self) -> Option<f64> {
        (!self.is_empty()).then_some(self.ema_util)
    }

    /// Largest peak ever observed, including samples evicted from the window.
    pub fn max_mem(&self) -> u64 {
        self.max_mem
    }

    pub fn max_cpu(&self) -> f64 {
        self.max_cpu
    }

    /// Window samples in insertion order with weights ∝ β^age, normalized.
    pub fn weighted_peaks(&self) -> Result<Vec<WeightedPeak>, HistoryError> {
        let n = self.samples.len();
        if n == 0 {
            return Err(HistoryError::EmptyHistory);
        }
        // newest sample has weight 1, walk backwards multiplying by β
        let mut raw = vec![0.0; n];
        let mut w = 1.0;
        for slot in raw.iter_mut().rev() {
            *slot = w;
            w *= self.beta;
        }
        let total: f64 = raw.iter().sum();
        Ok(self
            .samples
            .iter()
            .zip(raw)
            .map(|(s, r)| WeightedPeak {
                peak_mem: s.peak_mem,
                exec_time: s.exec_time,
                weight: r / total,
            })
            .collect())
    }
}

/// Profile key: an application's component, or the whole invocation when
/// `component` is `None`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ProfileKey {
    pub app: String,
    pub component: Option<usize>,
}

impl ProfileKey {
    pub fn component(app: &str, index: usize) -> Self {
        Self {
            app: app.to_string(),
            component: Some(index),
        }
    }

    pub fn invocation(app: &str) -> Self {
        Self {
            app: app.to_string(),
            component: None,
        }
    }

    fn encode(&self) -> String {
        match self.component {
            Some(i) => format!("{}/{}", self.app, i),
            None => format!("{}/*", self.app),
        }
    }

    fn decode(s: &str) -> Option<Self> {
        let (app, comp) = s.rsplit_once('/')?;
        let component = match comp {
            "*" => None,
            n => Some(n.parse().ok()?),
        };
        Some(Self {
            app: app.to_string(),
            component,
        })
    }
}

/// All profiles of a deployment, persisted between simulated deployments.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ProfileStore {
    profiles: BTreeMap<ProfileKey, ResourceProfile>,
    alpha: Option<f64>,
    beta: Option<f64>,
}

impl ProfileStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_params(alpha: f64, beta: f64) -> Self {
        Self {
            profiles: BTreeMap::new(),
            alpha: Some(alpha),
            beta: Some(beta),
        }
    }

    pub fn get(&self, key: &ProfileKey) -> Option<&ResourceProfile> {
        self.profiles.get(key)
    }

    pub fn record(&mut self, key: ProfileKey, s: UsageSample) {
        let (alpha, beta) = (
            self.alpha.unwrap_or(DEFAULT_ALPHA),
            self.beta.unwrap_or(DEFAULT_BETA),
        );
        self.profiles
            .entry(key)
            .or_insert_with(|| ResourceProfile::new(alpha, beta, DEFAULT_WINDOW))
            .record(s);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ProfileKey, &ResourceProfile)> {
        self.profiles.iter()
    }

    pub fn len(&self) -> usize {
        self.profiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.profiles.is_empty()
    }

    pub fn to_json(&self) -> String {
        let map: BTreeMap<String, &ResourceProfile> =
            self.profiles.iter().map(|(k, v)| (k.encode(), v)).collect();
        serde_json::to_string(&map).expect("profiles serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        let map: BTreeMap<String, ResourceProfile> = serde_json::from_str(text)?;
        let mut profiles = BTreeMap::new();
        for (k, v) in map {
            let key = ProfileKey::decode(&k).ok_or_else(|| {
                <serde_json::Error as serde::de::Error>::custom(format!("bad profile key `{k}`"))
            })?;
            profiles.insert(key, v);
        }
        Ok(Self {
            profiles,
            alpha: None,
            beta: None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample(mem: u64) -> UsageSample {
        UsageSample {
            invocation_id: 0,
            peak_cpu: 1.0,
            peak_mem: mem,
            exec_time: 1.0,
            mean_cpu_util: 0.5,
        }
    }

    #[test]
    fn ema_base_case_and_step() {
        let mut p = ResourceProfile::default();
        p.record(sample(100));
        assert_eq!(p.ema_mem(), 100.0);
        p.record(sample(200));
        assert_eq!(p.ema_mem(), 150.0);
    }

    #[test]
    fn ema_matches_unrolled_recurrence() {
        let mems = [7u64, 91, 3, 55, 1024, 0, 18, 600, 42, 9];
        let mut p = ResourceProfile::default();
        for &m in &mems {
            p.record(sample(m));
        }
        // closed form: ema_n = Σ_i α(1-α)^(n-1-i) x_i for i ≥ 1, plus (1-α)^(n-1) x_0
        let n = mems.len();
        let mut expect = 0.5f64.powi(n as i32 - 1) * mems[0] as f64;
        for (i, &m) in mems.iter().enumerate().skip(1) {
            expect += 0.5 * 0.5f64.powi((n - 1 - i) as i32) * m as f64;
        }
        assert!((p.ema_mem() - expect).abs() < 1e-9);
    }

    #[test]
    fn weights() {
        let mut p = ResourceProfile::default();
        assert_eq!(p.weighted_peaks(), Err(HistoryError::EmptyHistory));
        p.record(sample(1));
        assert_eq!(p.weighted_peaks().unwrap()[0].weight, 1.0);

        let mut p = ResourceProfile::new(0.5, 0.5, 10);
        p.record(sample(1));
        p.record(sample(2));
        let w = p.weighted_peaks().unwrap();
        assert!((w[0].weight - 1.0 / 3.0).abs() < 1e-15);
        assert!((w[1].weight - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(w[0].peak_mem, 1);
    }

    #[test]
    fn weights_closed_form() {
        let beta: f64 = 0.98;
        let mut p = ResourceProfile::new(0.5, beta, 1000);
        for i in 0..100 {
            p.record(sample(i));
        }
        let w = p.weighted_peaks().unwrap();
        let norm = (1.0 - beta.powi(100)) / (1.0 - beta);
        for (i, wp) in w.iter().enumerate() {
            let expect = beta.powi(99 - i as i32) / norm;
            assert!((wp.weight - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn window_evicts_oldest() {
        let mut p = ResourceProfile::new(0.5, 0.9, 3);
        for m in 1..=5 {
            p.record(sample(m));
        }
        let kept: Vec<u64> = p.samples().map(|s| s.peak_mem).collect();
        assert_eq!(kept, [3, 4, 5]);
        assert_eq!(p.recorded(), 5);
        assert_eq!(p.max_mem(), 5);
    }

    #[test]
    fn store_roundtrip() {
        let mut s = ProfileStore::new();
        s.record(ProfileKey::component("app/x", 3), sample(10));
        s.record(ProfileKey::invocation("app/x"), sample(20));
        let back = ProfileStore::from_json(&s.to_json()).unwrap();
        assert_eq!(back.to_json(), s.to_json());
        assert!(back.get(&ProfileKey::component("app/x", 3)).is_some());
    }

    proptest! {
        #[test]
        fn weights_normalized_and_monotone(n in 1usize..300, beta in 0.05f64..1.0) {
            let mut p = ResourceProfile::new(0.5, beta, 1000);
            for i in 0..n {
                p.record(sample(i as u64));
            }
            let w = p.weighted_peaks().unwrap();
            let total: f64 = w.iter().map(|x| x.weight).sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
            prop_assert!(w.windows(2).all(|x| x[0].weight <= x[1].weight));
        }

        #[test]
        fn ema_converges_on_constant(start in 0u64..1_000_000, c in 0u64..1_000_000, n in 1usize..40) {
            let mut p = ResourceProfile::default();
            p.record(sample(start));
            for _ in 0..n {
                p.record(sample(c));
            }
            let bound = 0.5f64.powi(n as i32) * (start as f64 - c as f64).abs();
            prop_assert!((p.ema_mem() - c as f64).abs() <= bound + 1e-9);
        }

        #[test]
        fn replay_is_bit_identical(mems in proptest::collection::vec(0u64..1<<34, 1..50)) {
            let mut a = ResourceProfile::default();
            let mut b = ResourceProfile::default();
            for &m in &mems { a.record(sample(m)); }
            for &m in &mems { b.record(sample(m)); }
            prop_assert_eq!(a, b);
        }
    }
}
