use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use rcsim::cluster::ClusterConfig;
use rcsim::graph::{build_graph as build, ResourceGraph};
use rcsim::history::WeightedPeak;
use rcsim::sim::{self, CostModel, Deployment, FailureSpec, Policy, SimConfig, Workload};
use rcsim::sizing::{solve_sizing, SizingProblem};
use rcsim::units::MIB;
use rcsim::workload::{gen_distribution, DistKind};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// A validated resource graph.
#[pyclass(frozen)]
struct Graph {
    inner: ResourceGraph,
}

#[pymethods]
impl Graph {
    #[new]
    fn new(spec_json: &str) -> PyResult<Self> {
        build(spec_json)
            .map(|inner| Self { inner })
            .map_err(value_err)
    }

    #[getter]
    fn app(&self) -> &str {
        self.inner.app()
    }

    #[getter]
    fn computes(&self) -> Vec<String> {
        self.inner
            .computes()
            .iter()
            .map(|c| c.name.clone())
            .collect()
    }

    #[getter]
    fn datas(&self) -> Vec<String> {
        self.inner.datas().iter().map(|d| d.name.clone()).collect()
    }

    /// Compute names in a deterministic topological order.
    fn topo_order(&self) -> Vec<String> {
        self.inner
            .topo_order()
            .iter()
            .map(|&i| self.inner.compute(i).name.clone())
            .collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "Graph(app={:?}, computes={}, datas={})",
            self.inner.app(),
            self.inner.computes().len(),
            self.inner.datas().len()
        )
    }
}

/// A cluster plus the profile history that carries over between runs.
#[pyclass]
struct Simulator {
    cluster: ClusterConfig,
    cfg: SimConfig,
    dep: Deployment,
}

#[pymethods]
impl Simulator {
    #[new]
    #[pyo3(signature = (cluster_json, policy = "adaptive", seed = 0, record_events = true))]
    fn new(cluster_json: &str, policy: &str, seed: u64, record_events: bool) -> PyResult<Self> {
        let cluster = ClusterConfig::from_json(cluster_json).map_err(value_err)?;
        let mut policy: Policy = policy.parse().map_err(value_err)?;
        if let Policy::MigrationBest { gbps } = &mut policy {
            *gbps = cluster.link_gbps;
        }
        let cfg = SimConfig {
            policy,
            seed,
            record_events,
            cost: CostModel::for_link(cluster.link_gbps),
            check_invariants: false,
            ..SimConfig::default()
        };
        Ok(Self {
            cluster,
            cfg,
            dep: Deployment::new(),
        })
    }

    /// Run `arrivals` of `(time_s, scale)` and return `(report_json, events_jsonl)`.
    #[pyo3(signature = (graph, arrivals, failures = Vec::new()))]
    fn run(
        &mut self,
        py: Python<'_>,
        graph: &Graph,
        arrivals: Vec<(f64, f64)>,
        failures: Vec<String>,
    ) -> PyResult<(String, String)> {
        let failures = failures
            .iter()
            .map(|f| f.parse::<FailureSpec>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(value_err)?;
        let cfg = SimConfig {
            failures,
            ..self.cfg.clone()
        };
        let wl = Workload::single(graph.inner.clone(), arrivals);
        let (cluster, dep) = (&self.cluster, &mut self.dep);
        let out = py
            .detach(|| sim::run(cluster, &wl, &cfg, dep))
            .map_err(value_err)?;
        Ok((out.report.to_json(), out.events))
    }

    /// Profile samples recorded so far, across all profiles.
    fn history_len(&self) -> u64 {
        self.dep.profiles.iter().map(|(_, p)| p.recorded()).sum()
    }

    fn profiles_json(&self) -> String {
        self.dep.profiles.to_json()
    }

    #[getter]
    fn policy(&self) -> &'static str {
        self.cfg.policy.name()
    }
}

/// Best `(init_mb, step_mb)` for a history of `(peak_mb, exec_time_s)` pairs.
#[pyfunction]
#[pyo3(signature = (history, cost_factor = 2.0, thres = 0.05, granule_mb = 64, max_mb = 4096))]
fn solve_sizing_mb(
    history: Vec<(f64, f64)>,
    cost_factor: f64,
    thres: f64,
    granule_mb: u64,
    max_mb: u64,
) -> PyResult<(f64, f64)> {
    let p = SizingProblem {
        history: history
            .into_iter()
            .map(|(mb, t)| WeightedPeak {
                peak_mem: (mb * MIB as f64).round() as u64,
                exec_time: t,
                weight: 1.0,
            })
            .collect(),
        cost_factor,
        thres,
        granule: granule_mb * MIB,
        max_init: max_mb * MIB,
        max_step: max_mb * MIB,
    };
    let s = solve_sizing(&p).map_err(value_err)?;
    Ok((s.init as f64 / MIB as f64, s.step as f64 / MIB as f64))
}

/// `n` synthetic input sizes (MB) from a named distribution.
#[pyfunction]
fn input_sizes(kind: &str, n: usize, seed: u64) -> PyResult<Vec<f64>> {
    let k: DistKind = kind.parse().map_err(value_err)?;
    Ok(gen_distribution(k, n, seed))
}

#[pyfunction]
fn policies() -> Vec<&'static str> {
    Policy::NAMES.to_vec()
}

#[pymodule]
fn rcsim_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Graph>()?;
    m.add_class::<Simulator>()?;
    m.add_function(wrap_pyfunction!(solve_sizing_mb, m)?)?;
    m.add_function(wrap_pyfunction!(input_sizes, m)?)?;
    m.add_function(wrap_pyfunction!(policies, m)?)?;
    Ok(())
}
