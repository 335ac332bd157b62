//! Resource graph: the application IR of compute and data components joined
//! by trigger (control) and access (data) edges.
//!
//! Graphs are built from a declarative JSON workload spec and validated once;
//! afterwards they are immutable and can be shared freely between threads.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::units::MIB;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("workload spec does not parse: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("trigger edges contain a cycle through `{0}`")]
    CyclicTriggers(String),
    #[error("compute `{compute}` accesses undefined data component `{data}`")]
    DanglingAccess { compute: String, data: String },
    #[error("trigger edge references undefined compute component `{0}`")]
    UnknownTrigger(String),
    #[error("graph must have exactly one root compute component, found {0}")]
    NoRoot(usize),
    #[error("duplicate component id `{0}`")]
    DuplicateId(String),
    #[error("data component `{0}` is never accessed")]
    UnaccessedData(String),
    #[error("invalid value for `{field}` of `{id}`: {reason}")]
    InvalidValue {
        id: String,
        field: &'static str,
        reason: String,
    },
}

/// Identity of a virtual component. `index` is unique across computes and datas
/// of one graph: computes take `0..n_computes`, datas follow.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ComponentId {
    pub app: String,
    pub index: usize,
}

impl fmt::Display for ComponentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.app, self.index)
    }
}

/// Piecewise-linear function of the scalar input scale, given by breakpoints
/// with strictly increasing x. Constant outside the breakpoint range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PiecewiseLinear {
    points: Vec<(f64, f64)>,
}

impl PiecewiseLinear {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self, String> {
        if points.is_empty() {
            return Err("breakpoint table is empty".into());
        }
        if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
            return Err("breakpoints must be finite".into());
        }
        if points.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err("breakpoint scales must be strictly increasing".into());
        }
        Ok(Self { points })
    }

    pub fn constant(y: f64) -> Self {
        Self {
            points: vec![(0.0, y)],
        }
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn eval(&self, x: f64) -> f64 {
        let pts = &self.points;
        if x <= pts[0].0 {
            return pts[0].1;
        }
        let last = pts[pts.len() - 1];
        if x >= last.0 {
            return last.1;
        }
        // first breakpoint strictly greater than x
        let hi = pts.partition_point(|p| p.0 <= x);
        let (x0, y0) = pts[hi - 1];
        let (x1, y1) = pts[hi];
        y0 + (y1 - y0) * (x - x0) / (x1 - x0)
    }

    pub fn min_value(&self) -> f64 {
        self.points
            .iter()
            .map(|p| p.1)
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppLimit {
    pub max_cpu: u32,
    pub max_mem: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Access {
    /// Data component index into [`ResourceGraph::datas`].
    pub data: usize,
    /// Bytes accessed per instance.
    pub volume: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComputeSpec {
    pub id: ComponentId,
    pub name: String,
    /// CPU-seconds of work per instance.
    pub base_work: f64,
    pub parallelism: PiecewiseLinear,
    pub accesses: Vec<Access>,
    /// Private working memory per instance, bytes.
    pub peak_mem_local: u64,
}

impl ComputeSpec {
    /// Instance count at the given input scale (rounded, never below one).
    pub fn parallelism_at(&self, scale: f64) -> u32 {
        let p = self.parallelism.eval(scale).round();
        if p < 1.0 {
            1
        } else {
            p as u32
        }
    }

    /// Memory the component's container needs at `scale`.
    pub fn local_mem_at(&self, scale: f64) -> u64 {
        self.peak_mem_local * u64::from(self.parallelism_at(scale))
    }

    /// Total CPU-seconds of work at `scale`.
    pub fn work_at(&self, scale: f64) -> f64 {
        self.base_work * f64::from(self.parallelism_at(scale))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Growth {
    /// Fraction of the first accessor's runtime at which the growth happens.
    pub at_fraction: f64,
    pub extra: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSpec {
    pub id: ComponentId,
    pub name: String,
    /// Bytes allocated, as a function of input scale (values in MiB in the spec file).
    pub size_mb: PiecewiseLinear,
    pub growth: Vec<Growth>,
}

impl DataSpec {
    pub fn base_size_at(&self, scale: f64) -> u64 {
        (self.size_mb.eval(scale) * MIB as f64).round() as u64
    }

    pub fn peak_size_at(&self, scale: f64) -> u64 {
        self.base_size_at(scale) + self.growth.iter().map(|g| g.extra).sum::<u64>()
    }
}

/// A trigger edge. `dst == None` marks the completion record of a sink
/// component (its result delivered to the scheduler).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TriggerEdge {
    pub src: usize,
    pub dst: Option<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ResourceGraph {
    app: String,
    app_limit: AppLimit,
    computes: Vec<ComputeSpec>,
    datas: Vec<DataSpec>,
    edges: Vec<TriggerEdge>,
    #[serde(skip)]
    succ: Vec<Vec<usize>>,
    #[serde(skip)]
    pred: Vec<Vec<usize>>,
    #[serde(skip)]
    out_edges: Vec<Vec<usize>>,
    #[serde(skip)]
    accessors: Vec<Vec<usize>>,
    #[serde(skip)]
    topo: Vec<usize>,
    root: usize,
}

// --- workload spec file schema ---

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub app: String,
    pub app_limit: AppLimitSpec,
    pub computes: Vec<ComputeEntry>,
    #[serde(default)]
    pub datas: Vec<DataEntry>,
    #[serde(default)]
    pub triggers: Vec<(String, String)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AppLimitSpec {
    pub max_cpu: u32,
    pub max_mem_mb: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComputeEntry {
    pub id: String,
    pub base_work_cpu_s: f64,
    pub parallelism: Vec<(f64, f64)>,
    pub peak_mem_local_mb: f64,
    #[serde(default)]
    pub accesses: Vec<AccessEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AccessEntry {
    pub data: String,
    pub volume_mb: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DataEntry {
    pub id: String,
    pub size_mb: Vec<(f64, f64)>,
    #[serde(default)]
    pub growth: Vec<(f64, f64)>,
}

fn invalid(id: &str, field: &'static str, reason: impl Into<String>) -> GraphError {
    GraphError::InvalidValue {
        id: id.to_string(),
        field,
        reason: reason.into(),
    }
}

fn mb_to_bytes(mb: f64) -> u64 {
    (mb * MIB as f64).round() as u64
}

impl WorkloadSpec {
    pub fn from_json(text: &str) -> Result<Self, GraphError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("workload spec serializes")
    }
}

/// Parse and validate a workload spec document.
pub fn build_graph(spec_json: &str) -> Result<ResourceGraph, GraphError> {
    ResourceGraph::from_spec(&WorkloadSpec::from_json(spec_json)?)
}

impl ResourceGraph {
    pub fn from_spec(spec: &WorkloadSpec) -> Result<Self, GraphError> {
        let app = spec.app.clone();
        let mut names: BTreeMap<&str, ()> = BTreeMap::new();
        for id in spec
            .computes
            .iter()
            .map(|c| c.id.as_str())
            .chain(spec.datas.iter().map(|d| d.id.as_str()))
        {
            if names.insert(id, ()).is_some() {
                return Err(GraphError::DuplicateId(id.to_string()));
            }
        }
        let n_computes = spec.computes.len();
        let data_index: BTreeMap<&str, usize> = spec
            .datas
            .iter()
            .enumerate()
            .map(|(i, d)| (d.id.as_str(), i))
            .collect();
        let compute_index: BTreeMap<&str, usize> = spec
            .computes
            .iter()
            .enumerate()
            .map(|(i, c)| (c.id.as_str(), i))
            .collect();

        let mut computes = Vec::with_capacity(n_computes);
        for (i, c) in spec.computes.iter().enumerate() {
            if !(c.base_work_cpu_s >= 0.0 && c.base_work_cpu_s.is_finite()) {
                return Err(invalid(&c.id, "base_work_cpu_s", "must be finite and >= 0"));
            }
            if !(c.peak_mem_local_mb >= 0.0 && c.peak_mem_local_mb.is_finite()) {
                return Err(invalid(
                    &c.id,
                    "peak_mem_local_mb",
                    "must be finite and >= 0",
                ));
            }
            let parallelism = PiecewiseLinear::new(c.parallelism.clone())
                .map_err(|e| invalid(&c.id, "parallelism", e))?;
            if parallelism.min_value() < 1.0 {
                return Err(invalid(&c.id, "parallelism", "instance count must be >= 1"));
            }
            let mut accesses = Vec::with_capacity(c.accesses.len());
            for a in &c.accesses {
                let Some(&d) = data_index.get(a.data.as_str()) else {
                    return Err(GraphError::DanglingAccess {
                        compute: c.id.clone(),
                        data: a.data.clone(),
                    });
                };
                if !(a.volume_mb >= 0.0 && a.volume_mb.is_finite()) {
                    return Err(invalid(&c.id, "volume_mb", "must be finite and >= 0"));
                }
                accesses.push(Access {
                    data: d,
                    volume: mb_to_bytes(a.volume_mb),
                });
            }
            computes.push(ComputeSpec {
                id: ComponentId {
                    app: app.clone(),
                    index: i,
                },
                name: c.id.clone(),
                base_work: c.base_work_cpu_s,
                parallelism,
                accesses,
                peak_mem_local: mb_to_bytes(c.peak_mem_local_mb),
            });
        }

        let mut datas = Vec::with_capacity(spec.datas.len());
        for (j, d) in spec.datas.iter().enumerate() {
            let size_mb = PiecewiseLinear::new(d.size_mb.clone())
                .map_err(|e| invalid(&d.id, "size_mb", e))?;
            if size_mb.min_value() <= 0.0 {
                return Err(invalid(&d.id, "size_mb", "size must be > 0"));
            }
            let mut growth = Vec::with_capacity(d.growth.len());
            let mut prev = -1.0;
            for &(frac, mb) in &d.growth {
                if !(0.0..1.0).contains(&frac) || frac <= prev {
                    return Err(invalid(
                        &d.id,
                        "growth",
                        "fractions must lie in [0,1) and strictly increase",
                    ));
                }
                if !(mb >= 0.0 && mb.is_finite()) {
                    return Err(invalid(&d.id, "growth", "extra size must be >= 0"));
                }
                prev = frac;
                growth.push(Growth {
                    at_fraction: frac,
                    extra: mb_to_bytes(mb),
                });
            }
            datas.push(DataSpec {
                id: ComponentId {
                    app: app.clone(),
                    index: n_computes + j,
                },
                name: d.id.clone(),
                size_mb,
                growth,
            });
        }

        let mut edges = Vec::with_capacity(spec.triggers.len());
        for (src, dst) in &spec.triggers {
            let s = *compute_index
                .get(src.as_str())
                .ok_or_else(|| GraphError::UnknownTrigger(src.clone()))?;
            let d = *compute_index
                .get(dst.as_str())
                .ok_or_else(|| GraphError::UnknownTrigger(dst.clone()))?;
            edges.push(TriggerEdge {
                src: s,
                dst: Some(d),
            });
        }

        let app_limit = AppLimit {
            max_cpu: spec.app_limit.max_cpu,
            max_mem: spec.app_limit.max_mem_mb * MIB,
        };
        if app_limit.max_cpu == 0 || app_limit.max_mem == 0 {
            return Err(invalid(&app, "app_limit", "limits must be positive"));
        }
        Self::assemble(app, app_limit, computes, datas, edges)
    }

    fn assemble(
        app: String,
        app_limit: AppLimit,
        computes: Vec<ComputeSpec>,
        datas: Vec<DataSpec>,
        mut edges: Vec<TriggerEdge>,
    ) -> Result<Self, GraphError> {
        let n = computes.len();
        let mut succ = vec![Vec::new(); n];
        let mut pred = vec![Vec::new(); n];
        for e in &edges {
            let d = e.dst.expect("only real edges before completion records");
            if !succ[e.src].contains(&d) {
                succ[e.src].push(d);
                pred[d].push(e.src);
            }
        }
        for v in succ.iter_mut().chain(pred.iter_mut()) {
            v.sort_unstable();
        }
        let roots: Vec<usize> = (0..n).filter(|&i| pred[i].is_empty()).collect();

        let topo = kahn_order(n, &succ, &pred).ok_or_else(|| {
            // name some node that sits on a cycle: one never released by Kahn
            let placed: BTreeSet<usize> = partial_kahn(n, &succ, &pred).into_iter().collect();
            let stuck = (0..n).find(|i| !placed.contains(i)).unwrap_or(0);
            GraphError::CyclicTriggers(computes[stuck].name.clone())
        })?;
        if roots.len() != 1 {
            return Err(GraphError::NoRoot(roots.len()));
        }

        // completion records of sinks
        for (i, s) in succ.iter().enumerate() {
            if s.is_empty() {
                edges.push(TriggerEdge { src: i, dst: None });
            }
        }
        let mut out_edges = vec![Vec::new(); n];
        for (id, e) in edges.iter().enumerate() {
            out_edges[e.src].push(id);
        }

        let mut accessors = vec![Vec::new(); datas.len()];
        for c in &computes {
            for a in &c.accesses {
                if !accessors[a.data].contains(&c.id.index) {
                    accessors[a.data].push(c.id.index);
                }
            }
        }
        if let Some(j) = accessors.iter().position(|a| a.is_empty()) {
            return Err(GraphError::UnaccessedData(datas[j].name.clone()));
        }

        Ok(Self {
            app,
            app_limit,
            computes,
            datas,
            edges,
            succ,
            pred,
            out_edges,
            accessors,
            topo,
            root: roots[0],
        })
    }

    pub fn app(&self) -> &str {
        &self.app
    }

    pub fn app_limit(&self) -> AppLimit {
        self.app_limit
    }

    pub fn computes(&self) -> &[ComputeSpec] {
        &self.computes
    }

    pub fn datas(&self) -> &[DataSpec] {
        &self.datas
    }

    pub fn compute(&self, i: usize) -> &ComputeSpec {
        &self.computes[i]
    }

    pub fn data(&self, j: usize) -> &DataSpec {
        &self.datas[j]
    }

    pub fn root(&self) -> usize {
        self.root
    }

    /// All recordable edges: declared triggers first, then one completion
    /// record per sink.
    pub fn edges(&self) -> &[TriggerEdge] {
        &self.edges
    }

    /// Edge ids of declared compute-to-compute triggers.
    pub fn trigger_edge_ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.edges
            .iter()
            .enumerate()
            .filter(|(_, e)| e.dst.is_some())
            .map(|(i, _)| i)
    }

    pub fn successors(&self, i: usize) -> &[usize] {
        &self.succ[i]
    }

    pub fn predecessors(&self, i: usize) -> &[usize] {
        &self.pred[i]
    }

    pub fn out_edges(&self, i: usize) -> &[usize] {
        &self.out_edges[i]
    }

    /// Compute components that access data component `j`, ascending index.
    pub fn accessors(&self, j: usize) -> &[usize] {
        &self.accessors[j]
    }

    pub fn sinks(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.computes.len()).filter(|&i| self.succ[i].is_empty())
    }

    pub fn compute_by_name(&self, name: &str) -> Option<usize> {
        self.computes.iter().position(|c| c.name == name)
    }

    pub fn data_by_name(&self, name: &str) -> Option<usize> {
        self.datas.iter().position(|d| d.name == name)
    }

    /// Topological order of compute components, ties broken by ascending index.
    pub fn topo_order(&self) -> &[usize] {
        &self.topo
    }

    pub fn topo_ids(&self) -> Vec<ComponentId> {
        self.topo
            .iter()
            .map(|&i| self.computes[i].id.clone())
            .collect()
    }
}

fn kahn_order(n: usize, succ: &[Vec<usize>], pred: &[Vec<usize>]) -> Option<Vec<usize>> {
    let order = partial_kahn(n, succ, pred);
    (order.len() == n).then_some(order)
}

fn partial_kahn(n: usize, succ: &[Vec<usize>], pred: &[Vec<usize>]) -> Vec<usize> {
    let mut indeg: Vec<usize> = pred.iter().map(Vec::len).collect();
    let mut ready: BinaryHeap<Reverse<usize>> =
        (0..n).filter(|&i| indeg[i] == 0).map(Reverse).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(Reverse(u)) = ready.pop() {
        order.push(u);
        for &v in &succ[u] {
            indeg[v] -= 1;
            if indeg[v] == 0 {
                ready.push(Reverse(v));
            }
        }
    }
    order
}

/// Result of [`graph_cut_before`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphCut {
    /// Components whose every outgoing edge has been durably recorded.
    pub prefix: BTreeSet<usize>,
    /// Components outside the prefix whose predecessors all lie inside it;
    /// re-execution restarts here.
    pub frontier: Vec<usize>,
}

/// Maximal predecessor-closed set of components whose outgoing edges
/// (including sink completion records) are all in `recorded`.
pub fn graph_cut_before(g: &ResourceGraph, recorded: &BTreeSet<usize>) -> GraphCut {
    let mut prefix = BTreeSet::new();
    for &u in g.topo_order() {
        let closed = g.predecessors(u).iter().all(|p| prefix.contains(p));
        let delivered = g.out_edges(u).iter().all(|e| recorded.contains(e));
        if closed && delivered {
            prefix.insert(u);
        }
    }
    let frontier = g
        .topo_order()
        .iter()
        .copied()
        .filter(|u| !prefix.contains(u) && g.predecessors(*u).iter().all(|p| prefix.contains(p)))
        .collect();
    GraphCut { prefix, frontier }
}
