//! Two-level scheduling: a global scheduler that routes invocations to racks
//! by rough free-memory estimates, and per-rack schedulers that place
//! components on servers.
//!
//! Rack placement follows the adaptive materialization rules:
//!
//! 1. A new invocation goes to the fitting server with the *least* free
//!    resources (free memory first, free CPU as tie-break) when some server can
//!    hold the whole estimated application; the remainder of the estimate is
//!    soft-marked there. Otherwise the first component is placed alone.
//! 2. A following component continues in its predecessor's container (resized)
//!    when the server still has room, and otherwise goes to the smallest-fit
//!    server, reaching non-co-located data remotely.
//! 3. Data growth prefers the data component's current server, then servers
//!    running its accessors, then any server.
//!
//! Every tier first honours other applications' soft marks and only then
//! falls back to preempting them.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::{AccessMode, ClusterState, Demand, PhysId, RackId, ServerId};
use crate::graph::{ComponentId, ResourceGraph};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SchedError {
    #[error("rack {0:?} has no server with room for the request")]
    Insufficient(RackId),
    #[error("every rack rejected the invocation")]
    ClusterFull,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchedulerConfig {
    /// Start successors ahead of need, overlapped with their predecessors.
    pub prelaunch: bool,
    /// Continue the next component inside the predecessor's container.
    pub reuse_container: bool,
    /// Start the first component warm when the application has history.
    pub prewarm_first: bool,
    /// One-way global↔rack message latency, seconds.
    pub msg_latency_s: f64,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self {
            prelaunch: true,
            reuse_container: true,
            prewarm_first: false,
            msg_latency_s: 0.0002,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlacementDecision {
    pub component: ComponentId,
    pub server: ServerId,
    pub sized: Demand,
    /// Data component index → access mode from this placement.
    pub access_modes: BTreeMap<usize, AccessMode>,
    /// Container continued in place, if any.
    pub colocated_with: Option<PhysId>,
    pub preempt_soft: bool,
    /// Soft mark to leave on `server` for the rest of the application.
    pub soft_mark: Option<Demand>,
}

/// The container a following component may continue in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PriorContainer {
    pub id: PhysId,
    pub server: ServerId,
    pub current: Demand,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayoutMode {
    None,
    Local,
    Remote,
    Mixed,
}

impl LayoutMode {
    pub fn of(modes: &BTreeMap<usize, AccessMode>) -> Self {
        let local = modes.values().any(|m| *m == AccessMode::Local);
        let remote = modes.values().any(|m| *m == AccessMode::Remote);
        match (local, remote) {
            (false, false) => LayoutMode::None,
            (true, false) => LayoutMode::Local,
            (false, true) => LayoutMode::Remote,
            (true, true) => LayoutMode::Mixed,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LayoutMode::None => "none",
            LayoutMode::Local => "local",
            LayoutMode::Remote => "remote",
            LayoutMode::Mixed => "mixed",
        }
    }
}

/// Global scheduler: keeps a rough free-resource estimate per rack.
#[derive(Debug, Clone)]
pub struct GlobalScheduler {
    estimates: Vec<Demand>,
}

impl GlobalScheduler {
    pub fn new(cluster: &ClusterState) -> Self {
        Self {
            estimates: cluster
                .racks()
                .iter()
                .map(|r| cluster.rack_free(r.id))
                .collect(),
        }
    }

    pub fn from_estimates(estimates: Vec<Demand>) -> Self {
        assert!(!estimates.is_empty());
        Self { estimates }
    }

    pub fn estimate(&self, rack: RackId) -> Demand {
        self.estimates[rack.0]
    }

    /// Route to the rack with the most estimated free memory (lowest id on
    /// ties), skipping racks that already rejected this invocation, and charge
    /// the footprint against that rack's estimate.
    pub fn route(&mut self, footprint: Demand, rejected: &[RackId]) -> Result<RackId, SchedError> {
        let mut best: Option<(u64, usize)> = None;
        for (i, est) in self.estimates.iter().enumerate() {
            if rejected.contains(&RackId(i)) {
                continue;
            }
            if best.is_none_or(|(m, _)| est.mem > m) {
                best = Some((est.mem, i));
            }
        }
        let (_, i) = best.ok_or(SchedError::ClusterFull)?;
        self.estimates[i] = self.estimates[i].saturating_sub(footprint);
        Ok(RackId(i))
    }

    /// A rack reports its accurate free resources.
    pub fn refresh(&mut self, rack: RackId, free: Demand) {
        self.estimates[rack.0] = free;
    }
}

/// Rack-level scheduler. Holds the compilation cache of realized
/// mixed local/remote layouts.
#[derive(Debug, Clone)]
pub struct RackScheduler {
    rack: RackId,
    servers: Vec<ServerId>,
    compiled: BTreeSet<(String, usize, Vec<(usize, AccessMode)>)>,
}

impl RackScheduler {
    pub fn new(cluster: &ClusterState, rack: RackId) -> Self {
        Self {
            rack,
            servers: cluster.rack_servers(rack).to_vec(),
            compiled: BTreeSet::new(),
        }
    }

    pub fn rack(&self) -> RackId {
        self.rack
    }

    pub fn servers(&self) -> &[ServerId] {
        &self.servers
    }

    fn insufficient(&self) -> SchedError {
        SchedError::Insufficient(self.rack)
    }

    /// Smallest-fit server among `candidates` for `need`; `None` if none fits.
    /// With `preempt` only physical capacity counts.
    fn smallest_fit(
        cluster: &ClusterState,
        candidates: impl IntoIterator<Item = ServerId>,
        app: &str,
        need: Demand,
        preempt: bool,
    ) -> Option<ServerId> {
        candidates
            .into_iter()
            .filter_map(|id| {
                let s = &cluster.servers()[id.0];
                let free = if preempt {
                    s.free()
                } else {
                    s.effective_free(app)
                };
                need.fits_in(free).then_some((free.mem, free.cpu, id))
            })
            .min()
            .map(|(_, _, id)| id)
    }

    fn smallest_fit_tiered(
        &self,
        cluster: &ClusterState,
        app: &str,
        need: Demand,
    ) -> Option<(ServerId, bool)> {
        for preempt in [false, true] {
            if let Some(s) =
                Self::smallest_fit(cluster, self.servers.iter().copied(), app, need, preempt)
            {
                return Some((s, preempt));
            }
        }
        None
    }

    /// Place the first component of an invocation whose whole-application
    /// estimate is `footprint`; `first` is the first component's initial size
    /// and `mark` the soft mark left when the whole application fits.
    pub fn place_invocation(
        &self,
        cluster: &ClusterState,
        root: ComponentId,
        footprint: Demand,
        first: Demand,
        mark: Demand,
    ) -> Result<PlacementDecision, SchedError> {
        let app = root.app.clone();
        let whole = Self::smallest_fit(
            cluster,
            self.servers.iter().copied(),
            &app,
            footprint,
            false,
        );
        let (server, preempt, soft_mark) = match whole {
            Some(s) => (s, false, (mark != Demand::ZERO).then_some(mark)),
            None => {
                let (s, p) = self
                    .smallest_fit_tiered(cluster, &app, first)
                    .ok_or_else(|| self.insufficient())?;
                (s, p, None)
            }
        };
        Ok(PlacementDecision {
            component: root,
            server,
            sized: first,
            access_modes: BTreeMap::new(),
            colocated_with: None,
            preempt_soft: preempt,
            soft_mark,
        })
    }

    /// Place a following component. `data_servers` lists, per accessed data
    /// component, the servers currently holding its chunks (empty when not
    /// yet materialized; such data is co-located with the component).
    pub fn place_next(
        &self,
        cluster: &ClusterState,
        comp: ComponentId,
        need: Demand,
        prior: Option<PriorContainer>,
        data_servers: &[(usize, Vec<ServerId>)],
        reuse_container: bool,
    ) -> Result<PlacementDecision, SchedError> {
        let app = comp.app.as_str();
        if let (true, Some(p)) = (reuse_container, prior) {
            let s = &cluster.servers()[p.server.0];
            let residual = s.effective_free(app).add(p.current);
            if need.fits_in(residual) {
                return Ok(PlacementDecision {
                    access_modes: access_modes(p.server, data_servers),
                    component: comp,
                    server: p.server,
                    sized: need,
                    colocated_with: Some(p.id),
                    preempt_soft: false,
                    soft_mark: None,
                });
            }
        }
        let (server, preempt) = self
            .smallest_fit_tiered(cluster, app, need)
            .ok_or_else(|| self.insufficient())?;
        Ok(PlacementDecision {
            access_modes: access_modes(server, data_servers),
            component: comp,
            server,
            sized: need,
            colocated_with: None,
            preempt_soft: preempt,
            soft_mark: None,
        })
    }

    /// Choose a server for `bytes` more of a data component.
    pub fn place_growth(
        &self,
        cluster: &ClusterState,
        app: &str,
        current: Option<ServerId>,
        accessor_servers: &[ServerId],
        bytes: u64,
    ) -> Result<(ServerId, bool), SchedError> {
        let need = Demand::new(0, bytes);
        for preempt in [false, true] {
            if let Some(s) = current {
                if Self::smallest_fit(cluster, [s], app, need, preempt).is_some() {
                    return Ok((s, preempt));
                }
            }
            if let Some(s) = Self::smallest_fit(
                cluster,
                accessor_servers.iter().copied(),
                app,
                need,
                preempt,
            ) {
                return Ok((s, preempt));
            }
            if let Some(s) =
                Self::smallest_fit(cluster, self.servers.iter().copied(), app, need, preempt)
            {
                return Ok((s, preempt));
            }
        }
        Err(self.insufficient())
    }

    /// Look up the compiled version for a layout. Purely local or purely
    /// remote layouts are built ahead of time; a mixed layout is compiled on
    /// first use and cached. Returns `(mode, cache_hit)`.
    pub fn compile_layout(
        &mut self,
        app: &str,
        comp: usize,
        modes: &BTreeMap<usize, AccessMode>,
    ) -> (LayoutMode, bool) {
        let mode = LayoutMode::of(modes);
        if mode != LayoutMode::Mixed {
            return (mode, true);
        }
        let key = (
            app.to_string(),
            comp,
            modes.iter().map(|(d, m)| (*d, *m)).collect(),
        );
        let hit = !self.compiled.insert(key);
        (mode, hit)
    }
}

/// Access modes a component on `server` gets for its data.
pub fn access_modes(
    server: ServerId,
    data_servers: &[(usize, Vec<ServerId>)],
) -> BTreeMap<usize, AccessMode> {
    data_servers
        .iter()
        .map(|(d, servers)| {
            let local = servers.iter().all(|s| *s == server);
            (
                *d,
                if local {
                    AccessMode::Local
                } else {
                    AccessMode::Remote
                },
            )
        })
        .collect()
}

/// Per-component sizes and durations feeding footprint estimates.
#[derive(Debug, Clone)]
pub struct FootprintInput {
    /// Per compute: (vCPU, bytes, expected duration seconds).
    pub computes: Vec<(u32, u64, f64)>,
    /// Per data: bytes.
    pub datas: Vec<u64>,
}

/// Whole-application estimate: every component's size summed, data counted once.
pub fn whole_app_footprint(input: &FootprintInput) -> Demand {
    let cpu = input.computes.iter().map(|c| c.0).sum();
    let mem = input.computes.iter().map(|c| c.1).sum::<u64>() + input.datas.iter().sum::<u64>();
    Demand::new(cpu, mem)
}

/// Peak concurrent footprint over an as-soon-as-possible schedule of the
/// graph with the given durations. Data is live from its first accessor's
/// start to its last accessor's end.
pub fn peak_concurrent_footprint(g: &ResourceGraph, input: &FootprintInput) -> Demand {
    let n = g.computes().len();
    let mut start = vec![0.0f64; n];
    let mut finish = vec![0.0f64; n];
    for &u in g.topo_order() {
        start[u] = g
            .predecessors(u)
            .iter()
            .map(|&p| finish[p])
            .fold(0.0, f64::max);
        finish[u] = start[u] + input.computes[u].2.max(0.0);
    }
    // intervals: (start, end, cpu, mem)
    let mut intervals: Vec<(f64, f64, u32, u64)> = (0..n)
        .map(|u| {
            (
                start[u],
                finish[u],
                input.computes[u].0,
                input.computes[u].1,
            )
        })
        .collect();
    for (j, &mem) in input.datas.iter().enumerate() {
        let acc = g.accessors(j);
        let s = acc.iter().map(|&a| start[a]).fold(f64::INFINITY, f64::min);
        let e = acc.iter().map(|&a| finish[a]).fold(0.0, f64::max);
        intervals.push((s, e, 0, mem));
    }
    // evaluate at every interval start; zero-length intervals count at their instant
    let mut peak = Demand::ZERO;
    for &(t, ..) in &intervals {
        let mut cur = Demand::ZERO;
        for &(s, e, cpu, mem) in &intervals {
            if s <= t && (t < e || (s == e && s == t)) {
                cur = cur.add(Demand::new(cpu, mem));
            }
        }
        peak.cpu = peak.cpu.max(cur.cpu);
        peak.mem = peak.mem.max(cur.mem);
    }
    peak
}

/// A successor start scheduled ahead of need.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrelaunchPlan {
    pub component: usize,
    /// When its container starts launching.
    pub launch_at: f64,
    /// When the container is ready.
    pub ready_at: f64,
    /// When it is predicted to be needed.
    pub needed_at: f64,
}

/// Plan prelaunches for every non-root component from predicted durations.
/// Components whose prediction depends on an unknown duration are skipped
/// and started on demand.
pub fn plan_prelaunch(
    g: &ResourceGraph,
    durations: &[Option<f64>],
    now: f64,
    root_start: f64,
    startup: f64,
) -> Vec<PrelaunchPlan> {
    let n = g.computes().len();
    let mut start: Vec<Option<f64>> = vec![None; n];
    let mut finish: Vec<Option<f64>> = vec![None; n];
    for &u in g.topo_order() {
        start[u] = if u == g.root() {
            Some(root_start)
        } else {
            g.predecessors(u)
                .iter()
                .map(|&p| finish[p])
                .try_fold(f64::NEG_INFINITY, |acc, f| f.map(|f| acc.max(f)))
        };
        finish[u] = match (start[u], durations[u]) {
            (Some(s), Some(d)) => Some(s + d),
            _ => None,
        };
    }
    g.topo_order()
        .iter()
        .filter(|&&u| u != g.root())
        .filter_map(|&u| {
            let needed = start[u]?;
            let launch = (needed - startup).max(now);
            Some(PrelaunchPlan {
                component: u,
                launch_at: launch,
                ready_at: launch + startup,
                needed_at: needed,
            })
        })
        .collect()
}
