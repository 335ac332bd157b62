use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, VecDeque};

use log::{debug, info};

use super::report::{
    DecisionRecord, InvocationMetrics, LifecycleRecord, RecoveryRecord, RunReport, SizingDecision,
};
use super::{
    Deployment, Policy, RunOutput, SimConfig, SimError, SizingMode, SolvedSizing, Workload,
};
use crate::cluster::{
    AccessMode, AllocTag, ClusterConfig, ClusterState, Demand, PhysId, PhysKind, PhysState, RackId,
    ServerId,
};
use crate::graph::{graph_cut_before, ComponentId, ResourceGraph};
use crate::history::{ProfileKey, UsageSample};
use crate::scheduler::{
    peak_concurrent_footprint, plan_prelaunch, whole_app_footprint, FootprintInput,
    GlobalScheduler, LayoutMode, PriorContainer, RackScheduler,
};
use crate::sizing::{
    increments, select_parallel_vcpus, solve_sizing, Dimension, SizingParams, SizingProblem,
};
use crate::units::{bytes_to_mb, round_above, GIB};

use super::cost::CostModel;

#[derive(Debug, Clone, Copy)]
enum Kind {
    Arrival { inv: usize },
    PrelaunchStart { inv: usize, comp: usize, gen: u32 },
    PrelaunchDone { inv: usize, comp: usize, epoch: u64 },
    ComponentStart { inv: usize, comp: usize, epoch: u64 },
    ComponentFinish { inv: usize, comp: usize, epoch: u64 },
    Growth { inv: usize, comp: usize, epoch: u64 },
    CpuSample { inv: usize, comp: usize, exec: u32 },
    Failure { idx: usize },
    RecoveryRestart { inv: usize, gen: u32 },
    Retry,
}

#[derive(Debug)]
struct Ev {
    t: f64,
    seq: u64,
    kind: Kind,
}

impl PartialEq for Ev {
    fn eq(&self, o: &Self) -> bool {
        self.seq == o.seq
    }
}

impl Eq for Ev {}

impl PartialOrd for Ev {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

impl Ord for Ev {
    // reversed: BinaryHeap pops the earliest (time, seq)
    fn cmp(&self, o: &Self) -> Ordering {
        o.t.total_cmp(&self.t).then(o.seq.cmp(&self.seq))
    }
}

#[derive(Debug, Clone, Copy)]
struct Behavior {
    faas: bool,
    sizing: SizingMode,
    scale_up: bool,
    autoscale: bool,
    trim_vcpus: bool,
    hist_vcpus: bool,
    reuse: bool,
    prelaunch: bool,
    coplace: bool,
    force_remote: bool,
    migrate_gbps: Option<f64>,
}

impl Behavior {
    fn of(cfg: &SimConfig) -> Self {
        let adaptive = |sizing| Behavior {
            faas: false,
            sizing,
            scale_up: true,
            autoscale: true,
            trim_vcpus: true,
            hist_vcpus: false,
            reuse: cfg.sched.reuse_container,
            prelaunch: cfg.sched.prelaunch,
            coplace: true,
            force_remote: false,
            migrate_gbps: None,
        };
        match cfg.policy {
            Policy::Adaptive { sizing } => adaptive(sizing),
            Policy::AlwaysRemote => Behavior {
                force_remote: true,
                ..adaptive(SizingMode::History)
            },
            Policy::MigrationBest { gbps } => Behavior {
                migrate_gbps: Some(gbps),
                ..adaptive(SizingMode::History)
            },
            Policy::DagFixed => Behavior {
                faas: false,
                sizing: SizingMode::Peak,
                scale_up: false,
                autoscale: false,
                trim_vcpus: false,
                hist_vcpus: true,
                reuse: false,
                prelaunch: false,
                coplace: false,
                force_remote: false,
                migrate_gbps: None,
            },
            Policy::FaasPeak => Behavior {
                faas: true,
                sizing: SizingMode::Peak,
                scale_up: false,
                autoscale: false,
                trim_vcpus: false,
                hist_vcpus: false,
                reuse: false,
                prelaunch: false,
                coplace: false,
                force_remote: false,
                migrate_gbps: None,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum CState {
    Idle,
    Launching,
    Ready,
    Running,
    Done,
}

#[derive(Debug, Clone)]
struct CompRun {
    state: CState,
    preds_left: usize,
    runnable_at: Option<f64>,
    container: Option<PhysId>,
    server: Option<ServerId>,
    vcpus: u32,
    params: Option<SizingParams>,
    epoch: u64,
    ready_at: f64,
    p: u32,
    demand_mem: u64,
    work: f64,
    access_s: f64,
    swap: f64,
    progress: f64,
    last_t: f64,
    paused_until: f64,
    /// (fraction of this component's progress, data index, extra bytes)
    growth: Vec<(f64, usize, u64)>,
    growth_next: usize,
    low_streak: u32,
    started_at: f64,
    executions: u32,
    mem_overflow: u64,
}

impl CompRun {
    fn new(preds: usize) -> Self {
        Self {
            state: CState::Idle,
            preds_left: preds,
            runnable_at: None,
            container: None,
            server: None,
            vcpus: 1,
            params: None,
            epoch: 0,
            ready_at: 0.0,
            p: 1,
            demand_mem: 0,
            work: 0.0,
            access_s: 0.0,
            swap: 1.0,
            progress: 0.0,
            last_t: 0.0,
            paused_until: 0.0,
            growth: Vec::new(),
            growth_next: 0,
            low_streak: 0,
            started_at: 0.0,
            executions: 0,
            mem_overflow: 0,
        }
    }

    fn compute_s(&self) -> f64 {
        self.work * self.swap / f64::from(self.vcpus)
    }

    fn runtime(&self) -> f64 {
        self.compute_s() + self.access_s
    }

    fn util(&self) -> f64 {
        let r = self.runtime();
        if r > 0.0 {
            self.compute_s() / r
        } else {
            1.0
        }
    }

    fn reset(&mut self, preds: usize) {
        let executions = self.executions;
        let epoch = self.epoch + 1;
        *self = Self::new(preds);
        self.executions = executions;
        self.epoch = epoch;
    }
}

#[derive(Debug, Clone, Default)]
struct DataRun {
    live: bool,
    chunks: Vec<(PhysId, ServerId, u64)>,
    alloc: u64,
    usage: u64,
    peak: u64,
    overflow: u64,
    accessors_left: usize,
    created_at: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum IStatus {
    NotArrived,
    Pending,
    Active,
    Done,
}

#[derive(Debug, Clone)]
struct Ideal {
    used_mem_byte_s: f64,
    used_cpu: f64,
    peak: Demand,
    durations: Vec<f64>,
}

#[derive(Debug, Clone)]
struct Inv {
    id: u64,
    app: usize,
    scale: f64,
    arrival: f64,
    status: IStatus,
    rack: Option<RackId>,
    gen: u32,
    comps: Vec<CompRun>,
    datas: Vec<DataRun>,
    recorded: BTreeSet<usize>,
    outputs: Vec<Option<u64>>,
    remaining: usize,
    soft_mark: Option<(ServerId, Demand)>,
    faas: Option<(PhysId, ServerId, Demand)>,
    mem_byte_s: f64,
    cpu_core_s: f64,
    startup_s: f64,
    local_vol: f64,
    total_vol: f64,
    recoveries: u32,
    finish_t: Option<f64>,
    alloc_cpu: u32,
    ideal: Ideal,
    input: u64,
}

#[derive(Debug, Clone, Copy)]
struct Acct {
    inv: usize,
    last_t: f64,
    cpu: u32,
    mem: u64,
}

pub(crate) struct Engine<'a> {
    cfg: &'a SimConfig,
    wl: &'a Workload,
    dep: &'a mut Deployment,
    b: Behavior,
    cluster: ClusterState,
    global: GlobalScheduler,
    racks: Vec<RackScheduler>,
    max_server: Demand,
    /// Per app, per compute: the successor that may continue in its container.
    cont_target: Vec<Vec<Option<usize>>>,
    is_cont_target: Vec<Vec<bool>>,
    now: f64,
    seq: u64,
    queue: BinaryHeap<Ev>,
    invs: Vec<Inv>,
    acct: BTreeMap<PhysId, Acct>,
    pending_arrivals: VecDeque<usize>,
    pending_comps: VecDeque<(usize, usize, u32)>,
    retry_armed: bool,
    released: bool,
    log: String,
    events_processed: u64,
    sizing_log: Vec<SizingDecision>,
    recoveries: Vec<RecoveryRecord>,
    lat: f64,
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv(mut h: u64, bytes: &[u8]) -> u64 {
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

fn ideal_of(g: &ResourceGraph, scale: f64, cost: &CostModel) -> Ideal {
    let n = g.computes().len();
    let mut durations = vec![0.0; n];
    let mut start = vec![0.0f64; n];
    let mut finish = vec![0.0f64; n];
    let mut used_mem = 0.0;
    let mut used_cpu = 0.0;
    for &u in g.topo_order() {
        let c = g.compute(u);
        let p = f64::from(c.parallelism_at(scale));
        let access: f64 = c
            .accesses
            .iter()
            .map(|a| p * a.volume as f64 / GIB as f64 * cost.local_access_s_per_gb)
            .sum();
        durations[u] = c.base_work + access;
        start[u] = g
            .predecessors(u)
            .iter()
            .map(|&q| finish[q])
            .fold(0.0, f64::max);
        finish[u] = start[u] + durations[u];
        used_mem += c.local_mem_at(scale) as f64 * durations[u];
        used_cpu += c.work_at(scale);
    }
    let mut datas = Vec::with_capacity(g.datas().len());
    for (j, d) in g.datas().iter().enumerate() {
        let acc = g.accessors(j);
        let creator = acc
            .iter()
            .copied()
            .min_by(|&a, &b| start[a].total_cmp(&start[b]).then(a.cmp(&b)))
            .expect("every data component has an accessor");
        let s = start[creator];
        let e = acc.iter().map(|&a| finish[a]).fold(s, f64::max);
        used_mem += d.base_size_at(scale) as f64 * (e - s);
        for gr in &d.growth {
            let at = s + gr.at_fraction * durations[creator];
            used_mem += gr.extra as f64 * (e - at).max(0.0);
        }
        datas.push(d.peak_size_at(scale));
    }
    let input = FootprintInput {
        computes: (0..n)
            .map(|u| {
                let c = g.compute(u);
                (c.parallelism_at(scale), c.local_mem_at(scale), durations[u])
            })
            .collect(),
        datas,
    };
    Ideal {
        used_mem_byte_s: used_mem,
        used_cpu,
        peak: peak_concurrent_footprint(g, &input),
        durations,
    }
}

impl<'a> Engine<'a> {
    pub(crate) fn new(
        cluster_cfg: &ClusterConfig,
        wl: &'a Workload,
        cfg: &'a SimConfig,
        dep: &'a mut Deployment,
    ) -> Self {
        let cluster = ClusterState::new(cluster_cfg);
        let global = GlobalScheduler::new(&cluster);
        let racks = cluster
            .racks()
            .iter()
            .map(|r| RackScheduler::new(&cluster, r.id))
            .collect();
        let max_server = cluster.servers().iter().fold(Demand::ZERO, |m, s| {
            Demand::new(m.cpu.max(s.cpu_cap), m.mem.max(s.mem_cap))
        });
        let mut cont_target = Vec::new();
        let mut is_cont_target = Vec::new();
        for g in &wl.apps {
            let n = g.computes().len();
            let mut ct = vec![None; n];
            let mut is = vec![false; n];
            for (q, slot) in ct.iter_mut().enumerate() {
                *slot = g
                    .successors(q)
                    .iter()
                    .copied()
                    .find(|&s| g.predecessors(s) == [q]);
                if let Some(s) = *slot {
                    is[s] = true;
                }
            }
            cont_target.push(ct);
            is_cont_target.push(is);
        }

        let mut order: Vec<usize> = (0..wl.arrivals.len()).collect();
        order.sort_by(|&a, &b| {
            wl.arrivals[a]
                .at
                .total_cmp(&wl.arrivals[b].at)
                .then(a.cmp(&b))
        });
        let mut invs = Vec::with_capacity(order.len());
        for (k, &ai) in order.iter().enumerate() {
            let a = wl.arrivals[ai];
            let g = &wl.apps[a.app];
            let n = g.computes().len();
            let input = fnv(
                fnv(FNV_OFFSET, g.app().as_bytes()),
                &a.scale.to_bits().to_le_bytes(),
            );
            invs.push(Inv {
                id: cfg.first_invocation_id + k as u64,
                app: a.app,
                scale: a.scale,
                arrival: a.at,
                status: IStatus::NotArrived,
                rack: None,
                gen: 0,
                comps: (0..n)
                    .map(|u| CompRun::new(g.predecessors(u).len()))
                    .collect(),
                datas: vec![DataRun::default(); g.datas().len()],
                recorded: BTreeSet::new(),
                outputs: vec![None; n],
                remaining: n,
                soft_mark: None,
                faas: None,
                mem_byte_s: 0.0,
                cpu_core_s: 0.0,
                startup_s: 0.0,
                local_vol: 0.0,
                total_vol: 0.0,
                recoveries: 0,
                finish_t: None,
                alloc_cpu: 0,
                ideal: ideal_of(g, a.scale, &cfg.cost),
                input,
            });
        }

        let mut e = Self {
            cfg,
            wl,
            dep,
            b: Behavior::of(cfg),
            cluster,
            global,
            racks,
            max_server,
            cont_target,
            is_cont_target,
            now: 0.0,
            seq: 0,
            queue: BinaryHeap::new(),
            invs,
            acct: BTreeMap::new(),
            pending_arrivals: VecDeque::new(),
            pending_comps: VecDeque::new(),
            retry_armed: false,
            released: false,
            log: String::new(),
            events_processed: 0,
            sizing_log: Vec::new(),
            recoveries: Vec::new(),
            lat: cfg.sched.msg_latency_s,
        };
        for i in 0..e.invs.len() {
            let t = e.invs[i].arrival;
            e.schedule(t, Kind::Arrival { inv: i });
        }
        for (idx, f) in cfg.failures.iter().enumerate() {
            e.schedule(f.at, Kind::Failure { idx });
        }
        e
    }

    fn schedule(&mut self, t: f64, kind: Kind) {
        debug_assert!(t >= self.now - 1e-9, "event scheduled in the past");
        self.queue.push(Ev {
            t: t.max(self.now),
            seq: self.seq,
            kind,
        });
        self.seq += 1;
    }

    fn g(&self, i: usize) -> &'a ResourceGraph {
        let wl: &'a Workload = self.wl;
        &wl.apps[self.invs[i].app]
    }

    pub(crate) fn run(mut self) -> Result<RunOutput, SimError> {
        let mut hit_deadline = false;
        while let Some(ev) = self.queue.pop() {
            if let Some(d) = self.cfg.deadline_s {
                if ev.t > d {
                    self.queue.push(ev);
                    hit_deadline = true;
                    break;
                }
            }
            self.now = ev.t;
            self.handle(ev.kind)?;
            self.events_processed += 1;
            if self.cfg.check_invariants {
                self.check_invariants()?;
            }
            if self.released
                && !self.retry_armed
                && (!self.pending_comps.is_empty() || !self.pending_arrivals.is_empty())
            {
                self.retry_armed = true;
                self.schedule(self.now, Kind::Retry);
            }
            self.released = false;
        }
        if !hit_deadline {
            let pending: Vec<u64> = self
                .invs
                .iter()
                .filter(|v| v.status != IStatus::Done)
                .map(|v| v.id)
                .collect();
            if !pending.is_empty() {
                let detail = format!(
                    "invocations {:?}; {} component(s) and {} arrival(s) waiting for resources",
                    &pending[..pending.len().min(8)],
                    self.pending_comps.len(),
                    self.pending_arrivals.len()
                );
                return Err(SimError::Deadlock {
                    t: self.now,
                    pending: pending.len(),
                    detail,
                });
            }
        }
        Ok(self.finish_report())
    }

    fn check_invariants(&self) -> Result<(), SimError> {
        let err = |detail: String| SimError::Invariant {
            t: self.now,
            detail,
        };
        self.cluster.check_invariants().map_err(err)?;
        let live = self.cluster.live_components().count();
        if live != self.acct.len() {
            return Err(err(format!(
                "{live} live physical components but {} accounted",
                self.acct.len()
            )));
        }
        for (id, a) in &self.acct {
            let pc = self
                .cluster
                .phys(*id)
                .ok_or_else(|| err(format!("accounted {id} is not live")))?;
            if pc.cpu != a.cpu || pc.mem != a.mem {
                return Err(err(format!("{id} size differs from its accounting record")));
            }
        }
        Ok(())
    }

    fn handle(&mut self, kind: Kind) -> Result<(), SimError> {
        match kind {
            Kind::Arrival { inv } => self.on_arrival(inv),
            Kind::PrelaunchStart { inv, comp, gen } => self.on_prelaunch_start(inv, comp, gen),
            Kind::PrelaunchDone { inv, comp, epoch } => {
                let c = &mut self.invs[inv].comps[comp];
                if c.epoch != epoch || c.state != CState::Launching {
                    return Ok(());
                }
                c.state = CState::Ready;
                if c.runnable_at.is_some() {
                    self.start(inv, comp)?;
                }
                Ok(())
            }
            Kind::ComponentStart { inv, comp, epoch } => {
                let c = &self.invs[inv].comps[comp];
                if c.epoch == epoch && c.state == CState::Ready {
                    self.start(inv, comp)?;
                }
                Ok(())
            }
            Kind::ComponentFinish { inv, comp, epoch } => {
                let c = &self.invs[inv].comps[comp];
                if c.epoch == epoch && c.state == CState::Running {
                    self.finish(inv, comp)?;
                }
                Ok(())
            }
            Kind::Growth { inv, comp, epoch } => {
                let c = &self.invs[inv].comps[comp];
                if c.epoch == epoch && c.state == CState::Running {
                    self.grow(inv, comp)?;
                }
                Ok(())
            }
            Kind::CpuSample { inv, comp, exec } => self.on_cpu_sample(inv, comp, exec),
            Kind::Failure { idx } => self.on_failure(idx),
            Kind::RecoveryRestart { inv, gen } => self.on_recovery_restart(inv, gen),
            Kind::Retry => self.on_retry(),
        }
    }

    // ---------------------------------------------------------------- logging

    fn log_decision(
        &mut self,
        i: usize,
        comp: &str,
        server: ServerId,
        d: Demand,
        mode: &str,
        colocated: bool,
        cache_hit: bool,
    ) {
        if !self.cfg.record_events {
            return;
        }
        let rec = DecisionRecord {
            t: self.now,
            app: self.g(i).app().to_string(),
            inv: self.invs[i].id,
            comp: comp.to_string(),
            server: server.0,
            cpu: d.cpu,
            mem_mb: bytes_to_mb(d.mem),
            mode: mode.to_string(),
            colocated,
            cache_hit,
        };
        self.log
            .push_str(&serde_json::to_string(&rec).expect("record serializes"));
        self.log.push('\n');
    }

    fn log_life(&mut self, i: usize, event: &str, comp: Option<usize>, detail: Option<String>) {
        if !self.cfg.record_events {
            return;
        }
        let g = self.g(i);
        let rec = LifecycleRecord {
            t: self.now,
            event: event.to_string(),
            app: g.app().to_string(),
            inv: self.invs[i].id,
            comp: comp.map(|u| g.compute(u).name.clone()),
            detail,
        };
        self.log
            .push_str(&serde_json::to_string(&rec).expect("record serializes"));
        self.log.push('\n');
    }

    // ------------------------------------------------------ physical accounting

    fn alloc_phys(
        &mut self,
        i: usize,
        vidx: usize,
        server: ServerId,
        d: Demand,
        preempt: bool,
        kind: PhysKind,
    ) -> Result<PhysId, SimError> {
        let app = self.g(i).app();
        let tag = AllocTag {
            virtual_id: ComponentId {
                app: app.to_string(),
                index: vidx,
            },
            kind,
            state: match kind {
                PhysKind::Container => PhysState::Prelaunching,
                PhysKind::MemoryChunk => PhysState::Running,
            },
        };
        let id = self
            .cluster
            .try_alloc(server, d.cpu, d.mem, preempt, app, tag)?;
        self.acct.insert(
            id,
            Acct {
                inv: i,
                last_t: self.now,
                cpu: d.cpu,
                mem: d.mem,
            },
        );
        self.invs[i].alloc_cpu += d.cpu;
        Ok(id)
    }

    fn accrue_phys(&mut self, id: PhysId) {
        let now = self.now;
        let a = self.acct.get_mut(&id).expect("accounted component");
        let dt = now - a.last_t;
        a.last_t = now;
        let inv = &mut self.invs[a.inv];
        inv.mem_byte_s += a.mem as f64 * dt;
        inv.cpu_core_s += f64::from(a.cpu) * dt;
    }

    fn resize_phys(&mut self, id: PhysId, d: Demand, preempt: bool) -> bool {
        self.accrue_phys(id);
        if self.cluster.resize(id, d.cpu, d.mem, preempt).is_err() {
            return false;
        }
        let a = self.acct.get_mut(&id).expect("accounted component");
        let inv = &mut self.invs[a.inv];
        inv.alloc_cpu = inv.alloc_cpu + d.cpu - a.cpu;
        if d.cpu < a.cpu || d.mem < a.mem {
            self.released = true;
        }
        a.cpu = d.cpu;
        a.mem = d.mem;
        true
    }

    fn release_phys(&mut self, id: PhysId) -> Result<(), SimError> {
        self.accrue_phys(id);
        self.cluster.release(id)?;
        let a = self.acct.remove(&id).expect("accounted component");
        self.invs[a.inv].alloc_cpu -= a.cpu;
        self.released = true;
        Ok(())
    }

    fn container_demand(&self, id: PhysId) -> Demand {
        let a = &self.acct[&id];
        Demand::new(a.cpu, a.mem)
    }

    fn refresh_rack(&mut self, i: usize) {
        if let Some(r) = self.invs[i].rack {
            let free = self.cluster.rack_free(r);
            self.global.refresh(r, free);
        }
    }

    // ------------------------------------------------------------------ sizing

    fn fixed_params(&self) -> SizingParams {
        SizingParams {
            init: self.cfg.sizing.fixed_init,
            step: self.cfg.sizing.fixed_step,
            dimension: Dimension::Memory,
        }
    }

    /// Memory sizing for virtual component `vidx` of invocation `i`'s app.
    fn params_for(&mut self, i: usize, vidx: usize) -> SizingParams {
        let g = self.g(i);
        let gran = self.cluster.granule();
        let key = ProfileKey::component(g.app(), vidx);
        let fixed = self.fixed_params();
        let Some(profile) = self.dep.profiles.get(&key) else {
            return fixed;
        };
        match self.b.sizing {
            SizingMode::Fixed => fixed,
            SizingMode::Peak => SizingParams::peak(profile.max_mem(), gran),
            SizingMode::History => {
                let recorded = profile.recorded();
                if let Some(s) = self.dep.sizing.get(&key) {
                    if recorded < self.cfg.sizing.next_solve(s.at) {
                        return s.params;
                    }
                }
                let history = profile.weighted_peaks().expect("profile has samples");
                let window_max = history.iter().map(|h| h.peak_mem).max().unwrap_or(0);
                let problem = SizingProblem {
                    history,
                    cost_factor: self.cfg.sizing.cost_factor,
                    thres: self.cfg.sizing.thres,
                    granule: gran,
                    max_init: round_above(window_max, gran),
                    max_step: self.cluster.chunk_cap().max(gran),
                };
                let (params, status) = match solve_sizing(&problem) {
                    Ok(p) => (p, "ok"),
                    Err(_) => (SizingParams::peak(window_max, gran), "infeasible"),
                };
                let name = if vidx < g.computes().len() {
                    g.compute(vidx).name.clone()
                } else {
                    g.data(vidx - g.computes().len()).name.clone()
                };
                debug!(
                    "sizing {}/{name}: init {} MiB step {} MiB ({status}, {recorded} samples)",
                    g.app(),
                    bytes_to_mb(params.init),
                    bytes_to_mb(params.step)
                );
                self.sizing_log.push(SizingDecision {
                    app: g.app().to_string(),
                    component: name,
                    samples: recorded,
                    init_mb: bytes_to_mb(params.init),
                    step_mb: bytes_to_mb(params.step),
                    status: status.to_string(),
                });
                self.dep.sizing.insert(
                    key,
                    SolvedSizing {
                        params,
                        at: recorded,
                    },
                );
                params
            }
        }
    }

    /// vCPUs for compute `u`; `credit` is CPU about to be handed back.
    fn vcpus_for(&self, i: usize, u: usize, credit: u32) -> u32 {
        let g = self.g(i);
        let inv = &self.invs[i];
        let p = g.compute(u).parallelism_at(inv.scale);
        let profile = self.dep.profiles.get(&ProfileKey::component(g.app(), u));
        let v = if self.b.hist_vcpus {
            profile.map_or(p, |pr| (pr.max_cpu().ceil() as u32).max(1))
        } else if self.b.trim_vcpus {
            select_parallel_vcpus(profile, p)
        } else {
            p
        };
        let residual = (g.app_limit().max_cpu + credit).saturating_sub(inv.alloc_cpu);
        v.min(residual).min(self.max_server.cpu).max(1)
    }

    fn initial_demand(&mut self, i: usize, u: usize, credit: u32) -> (Demand, SizingParams) {
        let params = self.params_for(i, u);
        let v = self.vcpus_for(i, u, credit);
        (Demand::new(v, params.init.min(self.max_server.mem)), params)
    }

    fn footprint_input(&self, i: usize) -> FootprintInput {
        let g = self.g(i);
        let inv = &self.invs[i];
        let fallback = self.cfg.sizing.fixed_init;
        let n = g.computes().len();
        let computes = (0..n)
            .map(|u| {
                let p = g.compute(u).parallelism_at(inv.scale);
                let pr = self.dep.profiles.get(&ProfileKey::component(g.app(), u));
                let v = select_parallel_vcpus(pr, p);
                let mem = pr.map_or(fallback, |pr| pr.ema_mem().round() as u64);
                let dur = pr
                    .and_then(|pr| pr.ema_exec_time())
                    .unwrap_or(inv.ideal.durations[u]);
                (v, mem, dur)
            })
            .collect();
        let datas = (0..g.datas().len())
            .map(|j| {
                self.dep
                    .profiles
                    .get(&ProfileKey::component(g.app(), n + j))
                    .map_or(fallback, |pr| pr.ema_mem().round() as u64)
            })
            .collect();
        FootprintInput { computes, datas }
    }

    fn data_servers(&self, i: usize, u: usize) -> Vec<(usize, Vec<ServerId>)> {
        let g = self.g(i);
        let inv = &self.invs[i];
        let mut m: BTreeMap<usize, Vec<ServerId>> = BTreeMap::new();
        for a in &g.compute(u).accesses {
            let d = &inv.datas[a.data];
            m.entry(a.data)
                .or_insert_with(|| d.chunks.iter().map(|c| c.1).collect());
        }
        m.into_iter().collect()
    }

    // --------------------------------------------------------------- placement

    #[allow(clippy::too_many_arguments)]
    fn launch(
        &mut self,
        i: usize,
        u: usize,
        server: ServerId,
        need: Demand,
        preempt: bool,
        modes: BTreeMap<usize, AccessMode>,
        startup: f64,
        colocated: bool,
        existing: Option<PhysId>,
        hide_conn: bool,
    ) -> Result<(), SimError> {
        let id = match existing {
            Some(id) => id,
            None => self.alloc_phys(i, u, server, need, preempt, PhysKind::Container)?,
        };
        let modes: BTreeMap<usize, AccessMode> = if self.b.force_remote {
            modes.into_keys().map(|d| (d, AccessMode::Remote)).collect()
        } else {
            modes
        };
        let rack = self.invs[i].rack.expect("placed invocation has a rack");
        let app = self.g(i).app();
        let (layout, hit) = self.racks[rack.0].compile_layout(app, u, &modes);
        let compile = if layout == LayoutMode::Mixed && !hit {
            self.cfg.cost.compile_s
        } else {
            0.0
        };
        let remote = modes.values().any(|m| *m == AccessMode::Remote);
        let conn = if remote && !hide_conn {
            self.cfg.cost.conn_setup_s
        } else {
            0.0
        };
        self.cluster.set_access_mode(
            id,
            if remote {
                AccessMode::Remote
            } else {
                AccessMode::Local
            },
        )?;
        let ready_at = self.now + self.lat + startup.max(conn) + compile;
        let c = &mut self.invs[i].comps[u];
        c.container = Some(id);
        c.server = Some(server);
        c.vcpus = need.cpu;
        c.state = CState::Launching;
        c.ready_at = ready_at;
        c.epoch += 1;
        let epoch = c.epoch;
        self.schedule(
            ready_at,
            Kind::PrelaunchDone {
                inv: i,
                comp: u,
                epoch,
            },
        );
        let name = self.g(i).compute(u).name.clone();
        self.log_decision(i, &name, server, need, layout.as_str(), colocated, hit);
        Ok(())
    }

    fn on_arrival(&mut self, i: usize) -> Result<(), SimError> {
        self.invs[i].status = IStatus::Pending;
        self.log_life(
            i,
            "arrival",
            None,
            Some(format!("scale={}", self.invs[i].scale)),
        );
        if !self.try_start_invocation(i)? {
            self.log_life(i, "queued", None, None);
            self.pending_arrivals.push_back(i);
        }
        Ok(())
    }

    fn try_start_invocation(&mut self, i: usize) -> Result<bool, SimError> {
        if self.b.faas {
            self.place_faas(i)
        } else {
            self.place_root(i)
        }
    }

    fn route(
        &mut self,
        i: usize,
        estimate: Demand,
        mut place: impl FnMut(
            &RackScheduler,
            &ClusterState,
        ) -> Option<crate::scheduler::PlacementDecision>,
    ) -> Option<(RackId, crate::scheduler::PlacementDecision)> {
        let _ = i;
        let mut rejected = Vec::new();
        loop {
            let rack = self.global.route(estimate, &rejected).ok()?;
            match place(&self.racks[rack.0], &self.cluster) {
                Some(d) => return Some((rack, d)),
                None => {
                    let free = self.cluster.rack_free(rack);
                    self.global.refresh(rack, free);
                    rejected.push(rack);
                }
            }
        }
    }

    fn place_root(&mut self, i: usize) -> Result<bool, SimError> {
        let g = self.g(i);
        let u0 = g.root();
        let (first, params) = self.initial_demand(i, u0, 0);
        let (whole, mark) = if self.b.coplace {
            let input = self.footprint_input(i);
            let whole = whole_app_footprint(&input);
            let peak = peak_concurrent_footprint(g, &input);
            (
                whole
                    .add(first)
                    .saturating_sub(Demand::new(input.computes[u0].0, input.computes[u0].1)),
                peak.saturating_sub(first),
            )
        } else {
            (first, Demand::ZERO)
        };
        let cid = ComponentId {
            app: g.app().to_string(),
            index: u0,
        };
        let ds = self.data_servers(i, u0);
        let coplace = self.b.coplace;
        let Some((rack, d)) = self.route(i, whole, |rs, cl| {
            if coplace {
                rs.place_invocation(cl, cid.clone(), whole, first, mark)
                    .ok()
            } else {
                rs.place_next(cl, cid.clone(), first, None, &ds, false).ok()
            }
        }) else {
            return Ok(false);
        };
        let inv = &mut self.invs[i];
        inv.rack = Some(rack);
        inv.status = IStatus::Active;
        inv.comps[u0].params = Some(params);
        inv.comps[u0].runnable_at = Some(self.now);
        if let Some(m) = d.soft_mark {
            self.cluster.add_soft_mark(d.server, g.app(), m);
            self.invs[i].soft_mark = Some((d.server, m));
        }
        let warm = self.cfg.sched.prewarm_first
            && self
                .dep
                .profiles
                .get(&ProfileKey::invocation(g.app()))
                .is_some();
        let startup = if warm {
            self.cfg.cost.warm_start_s
        } else {
            self.cfg.cost.cold_start_s
        };
        let modes = crate::scheduler::access_modes(d.server, &ds);
        self.launch(
            i,
            u0,
            d.server,
            first,
            d.preempt_soft,
            modes,
            startup,
            false,
            None,
            false,
        )?;
        self.refresh_rack(i);
        self.plan_prelaunch(i);
        Ok(true)
    }

    fn place_faas(&mut self, i: usize) -> Result<bool, SimError> {
        let g = self.g(i);
        let gran = self.cluster.granule();
        let need = match self.dep.profiles.get(&ProfileKey::invocation(g.app())) {
            Some(p) => Demand::new(
                (p.max_cpu().ceil() as u32).max(1),
                round_above(p.max_mem(), gran),
            ),
            None => Demand::new(
                g.app_limit().max_cpu.max(1),
                g.app_limit().max_mem.max(gran),
            ),
        };
        let need = Demand::new(
            need.cpu.min(self.max_server.cpu),
            need.mem.min(self.max_server.mem),
        );
        let u0 = g.root();
        let cid = ComponentId {
            app: g.app().to_string(),
            index: u0,
        };
        let Some((rack, d)) = self.route(i, need, |rs, cl| {
            rs.place_next(cl, cid.clone(), need, None, &[], false).ok()
        }) else {
            return Ok(false);
        };
        let id = self.alloc_phys(i, u0, d.server, need, d.preempt_soft, PhysKind::Container)?;
        let ready_at = self.now + self.lat + self.cfg.cost.cold_start_s;
        let inv = &mut self.invs[i];
        inv.rack = Some(rack);
        inv.status = IStatus::Active;
        inv.faas = Some((id, d.server, need));
        let c = &mut inv.comps[u0];
        c.container = Some(id);
        c.server = Some(d.server);
        c.state = CState::Launching;
        c.runnable_at = Some(self.now);
        c.ready_at = ready_at;
        c.epoch += 1;
        let epoch = c.epoch;
        self.schedule(
            ready_at,
            Kind::PrelaunchDone {
                inv: i,
                comp: u0,
                epoch,
            },
        );
        let name = g.compute(u0).name.clone();
        self.log_decision(i, &name, d.server, need, "local", false, true);
        self.refresh_rack(i);
        Ok(true)
    }

    fn plan_prelaunch(&mut self, i: usize) {
        if !(self.b.prelaunch && self.cfg.sched.prelaunch) {
            return;
        }
        let g = self.g(i);
        let inv = &self.invs[i];
        let durations: Vec<Option<f64>> = (0..g.computes().len())
            .map(|u| {
                self.dep
                    .profiles
                    .get(&ProfileKey::component(g.app(), u))
                    .and_then(|p| p.ema_exec_time())
            })
            .collect();
        let root_start = inv.comps[g.root()].ready_at;
        let plans = plan_prelaunch(
            g,
            &durations,
            self.now,
            root_start,
            self.cfg.cost.cold_start_s,
        );
        let gen = inv.gen;
        let app = inv.app;
        for p in plans {
            if self.b.reuse && self.is_cont_target[app][p.component] {
                continue;
            }
            self.schedule(
                p.launch_at,
                Kind::PrelaunchStart {
                    inv: i,
                    comp: p.component,
                    gen,
                },
            );
        }
    }

    fn on_prelaunch_start(&mut self, i: usize, u: usize, gen: u32) -> Result<(), SimError> {
        let inv = &self.invs[i];
        if inv.gen != gen || inv.status != IStatus::Active {
            return Ok(());
        }
        let c = &inv.comps[u];
        if c.state != CState::Idle || c.runnable_at.is_some() {
            return Ok(());
        }
        if self.place_component(i, u)? {
            self.log_life(i, "prelaunch", Some(u), None);
        }
        Ok(())
    }

    /// Fresh container for `u` on the smallest-fit server.
    fn place_component(&mut self, i: usize, u: usize) -> Result<bool, SimError> {
        let (need, params) = self.initial_demand(i, u, 0);
        let ds = self.data_servers(i, u);
        let g = self.g(i);
        let rack = self.invs[i].rack.expect("active invocation has a rack");
        let cid = ComponentId {
            app: g.app().to_string(),
            index: u,
        };
        let Ok(d) = self.racks[rack.0].place_next(&self.cluster, cid, need, None, &ds, false)
        else {
            return Ok(false);
        };
        self.invs[i].comps[u].params = Some(params);
        let cold = self.cfg.cost.cold_start_s;
        self.launch(
            i,
            u,
            d.server,
            need,
            d.preempt_soft,
            d.access_modes,
            cold,
            false,
            None,
            false,
        )?;
        self.refresh_rack(i);
        Ok(true)
    }

    fn make_runnable(&mut self, i: usize, u: usize) -> Result<(), SimError> {
        let now = self.now;
        let c = &mut self.invs[i].comps[u];
        c.runnable_at = Some(now);
        match c.state {
            CState::Ready => {
                c.epoch += 1;
                let epoch = c.epoch;
                let t = if self.b.faas { now } else { now + self.lat };
                self.schedule(
                    t,
                    Kind::ComponentStart {
                        inv: i,
                        comp: u,
                        epoch,
                    },
                );
            }
            CState::Launching => {}
            CState::Idle => {
                if !self.place_component(i, u)? {
                    self.log_life(i, "waiting", Some(u), None);
                    let gen = self.invs[i].gen;
                    self.pending_comps.push_back((i, u, gen));
                }
            }
            CState::Running | CState::Done => unreachable!("component made runnable twice"),
        }
        Ok(())
    }

    // --------------------------------------------------------------- execution

    fn start(&mut self, i: usize, u: usize) -> Result<(), SimError> {
        let g = self.g(i);
        let comp = g.compute(u);
        let scale = self.invs[i].scale;
        let now = self.now;
        let p = comp.parallelism_at(scale);
        let demand = comp.local_mem_at(scale);
        {
            let inv = &mut self.invs[i];
            let c = &mut inv.comps[u];
            c.state = CState::Running;
            c.executions += 1;
            c.started_at = now;
            inv.startup_s += now - c.runnable_at.unwrap_or(now);
        }
        let id = self.invs[i].comps[u]
            .container
            .expect("started component has a container");
        self.cluster.set_state(id, PhysState::Running)?;

        let mut pause = 0.0;
        let vcpus;
        if let Some((_, _, fd)) = self.invs[i].faas {
            vcpus = p.min(fd.cpu).max(1);
        } else {
            vcpus = self.invs[i].comps[u].vcpus;
            let cur = self.container_demand(id);
            let params = self.invs[i].comps[u]
                .params
                .unwrap_or_else(|| self.fixed_params());
            if self.b.scale_up && demand >= cur.mem {
                let k = increments(cur.mem, params.step, demand);
                let mut done = 0;
                if self.resize_phys(id, Demand::new(cur.cpu, cur.mem + k * params.step), false) {
                    done = k;
                } else {
                    // one step at a time until the server is full
                    while done < k
                        && self.resize_phys(
                            id,
                            Demand::new(cur.cpu, cur.mem + (done + 1) * params.step),
                            false,
                        )
                    {
                        done += 1;
                    }
                }
                pause += done as f64 * self.cfg.cost.mem_scale_s;
            }
            let alloc = self.container_demand(id).mem;
            self.invs[i].comps[u].mem_overflow = demand.saturating_sub(alloc);
        }

        // materialize data on first access
        let mut seen = BTreeSet::new();
        for a in &comp.accesses {
            if seen.insert(a.data) && !self.invs[i].datas[a.data].live {
                pause += self.create_data(i, a.data, u)?;
            }
        }

        // access cost by where each data component's bytes live
        let server = self.invs[i].comps[u].server;
        let mut access_s = 0.0;
        let (mut local_vol, mut total_vol) = (0.0, 0.0);
        for a in &comp.accesses {
            let d = &self.invs[i].datas[a.data];
            let frac = if self.invs[i].faas.is_some() {
                1.0
            } else if self.b.force_remote {
                0.0
            } else if d.alloc == 0 {
                1.0
            } else {
                let here: u64 = d
                    .chunks
                    .iter()
                    .filter(|c| Some(c.1) == server)
                    .map(|c| c.2)
                    .sum();
                here as f64 / d.alloc as f64
            };
            let vol = f64::from(p) * a.volume as f64 / GIB as f64;
            access_s += vol * self.cfg.cost.access_rate(frac);
            local_vol += vol * frac;
            total_vol += vol;
        }
        {
            let inv = &mut self.invs[i];
            inv.local_vol += local_vol;
            inv.total_vol += total_vol;
            let c = &mut inv.comps[u];
            c.p = p;
            c.demand_mem = demand;
            c.vcpus = vcpus;
            c.work = comp.work_at(scale);
            c.access_s = access_s;
            c.progress = 0.0;
            c.last_t = now;
            c.paused_until = now + pause;
            c.low_streak = 0;
            c.growth
                .sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            c.growth_next = 0;
        }
        self.invs[i].comps[u].swap = self.swap_for(i, u);
        self.log_life(i, "start", Some(u), None);
        self.reschedule(i, u);
        if self.b.autoscale {
            let c = &self.invs[i].comps[u];
            let t = now + self.cfg.autoscale.period_s;
            let fin = c.paused_until + c.runtime();
            if t < fin {
                let exec = c.executions;
                self.schedule(
                    t,
                    Kind::CpuSample {
                        inv: i,
                        comp: u,
                        exec,
                    },
                );
            }
        }
        Ok(())
    }

    /// Create data component `j` for its first running accessor `u`.
    /// Returns the stall spent on scale-ups.
    fn create_data(&mut self, i: usize, j: usize, u: usize) -> Result<f64, SimError> {
        let g = self.g(i);
        let spec = g.data(j);
        let scale = self.invs[i].scale;
        let accessors_left = g
            .accessors(j)
            .iter()
            .filter(|&&w| self.invs[i].comps[w].state != CState::Done)
            .count();
        let at_start: u64 = spec
            .growth
            .iter()
            .filter(|gr| gr.at_fraction <= 0.0)
            .map(|gr| gr.extra)
            .sum();
        let usage = spec.base_size_at(scale) + at_start;
        {
            let d = &mut self.invs[i].datas[j];
            *d = DataRun {
                live: true,
                usage,
                peak: usage,
                accessors_left,
                created_at: self.now,
                ..DataRun::default()
            };
        }
        let c = &mut self.invs[i].comps[u];
        for gr in spec.growth.iter().filter(|gr| gr.at_fraction > 0.0) {
            c.growth.push((gr.at_fraction, j, gr.extra));
        }
        if self.invs[i].faas.is_some() {
            return Ok(0.0);
        }
        let n = g.computes().len();
        let params = self.params_for(i, n + j);
        let near = self.invs[i].comps[u].server;
        self.alloc_data_bytes(i, j, params.init, near)?;
        let mut pause = 0.0;
        if self.b.scale_up {
            while self.invs[i].datas[j].alloc <= self.invs[i].datas[j].usage {
                if self.alloc_data_bytes(i, j, params.step, near)? < params.step {
                    break;
                }
                pause += self.cfg.cost.mem_scale_s;
            }
        }
        let d = &mut self.invs[i].datas[j];
        d.overflow = d.usage.saturating_sub(d.alloc);
        Ok(pause)
    }

    /// Allocate `bytes` more for data `j` in chunks; returns bytes placed.
    fn alloc_data_bytes(
        &mut self,
        i: usize,
        j: usize,
        bytes: u64,
        near: Option<ServerId>,
    ) -> Result<u64, SimError> {
        let g = self.g(i);
        let n = g.computes().len();
        let rack = self.invs[i].rack.expect("active invocation has a rack");
        let cap = self.cluster.chunk_cap();
        let mut accessor_servers: Vec<ServerId> = near.into_iter().collect();
        for &w in g.accessors(j) {
            let c = &self.invs[i].comps[w];
            if matches!(c.state, CState::Launching | CState::Ready | CState::Running) {
                if let Some(s) = c.server {
                    if !accessor_servers.contains(&s) {
                        accessor_servers.push(s);
                    }
                }
            }
        }
        let mut placed = 0;
        while placed < bytes {
            let chunk = (bytes - placed).min(cap);
            let current = self.invs[i].datas[j].chunks.first().map(|c| c.1);
            let Ok((server, preempt)) = self.racks[rack.0].place_growth(
                &self.cluster,
                g.app(),
                current,
                &accessor_servers,
                chunk,
            ) else {
                break;
            };
            let id = self.alloc_phys(
                i,
                n + j,
                server,
                Demand::new(0, chunk),
                preempt,
                PhysKind::MemoryChunk,
            )?;
            let d = &mut self.invs[i].datas[j];
            d.chunks.push((id, server, chunk));
            d.alloc += chunk;
            placed += chunk;
            let mode = if Some(server) == near {
                "local"
            } else {
                "remote"
            };
            let name = g.data(j).name.clone();
            self.log_decision(
                i,
                &name,
                server,
                Demand::new(0, chunk),
                mode,
                current == Some(server),
                true,
            );
        }
        if placed > 0 {
            self.refresh_rack(i);
        }
        Ok(placed)
    }

    fn release_data(&mut self, i: usize, j: usize) -> Result<(), SimError> {
        let chunks = std::mem::take(&mut self.invs[i].datas[j].chunks);
        for (id, _, _) in chunks {
            self.release_phys(id)?;
        }
        let d = &mut self.invs[i].datas[j];
        d.live = false;
        d.alloc = 0;
        d.usage = 0;
        d.overflow = 0;
        d.accessors_left = 0;
        Ok(())
    }

    /// Compute slowdown from memory that could not be allocated.
    fn swap_for(&self, i: usize, u: usize) -> f64 {
        let g = self.g(i);
        let inv = &self.invs[i];
        let c = &inv.comps[u];
        let frac = if let Some((_, _, fd)) = inv.faas {
            let live: u64 = inv.datas.iter().filter(|d| d.live).map(|d| d.usage).sum();
            let total = c.demand_mem + live;
            if total == 0 {
                0.0
            } else {
                total.saturating_sub(fd.mem) as f64 / total as f64
            }
        } else {
            let mut num = c.mem_overflow;
            let mut den = c.demand_mem;
            let mut seen = BTreeSet::new();
            for a in &g.compute(u).accesses {
                if seen.insert(a.data) {
                    let d = &inv.datas[a.data];
                    num += d.overflow;
                    den += d.usage;
                }
            }
            if den == 0 {
                0.0
            } else {
                num as f64 / den as f64
            }
        };
        self.cfg.cost.swap_multiplier(frac)
    }

    fn accrue(&mut self, i: usize, u: usize) {
        let now = self.now;
        let c = &mut self.invs[i].comps[u];
        if c.state != CState::Running {
            return;
        }
        let from = c.last_t.max(c.paused_until);
        if now > from {
            let r = c.runtime();
            c.progress = if r > 0.0 {
                (c.progress + (now - from) / r).min(1.0)
            } else {
                1.0
            };
        }
        c.last_t = now;
    }

    fn reschedule(&mut self, i: usize, u: usize) {
        let now = self.now;
        let c = &mut self.invs[i].comps[u];
        c.epoch += 1;
        let epoch = c.epoch;
        let base = now.max(c.paused_until);
        let r = c.runtime();
        let finish = base + (1.0 - c.progress).max(0.0) * r;
        let growth_at = c
            .growth
            .get(c.growth_next)
            .map(|&(f, _, _)| base + (f - c.progress).max(0.0) * r);
        if let Some(t) = growth_at {
            self.schedule(
                t,
                Kind::Growth {
                    inv: i,
                    comp: u,
                    epoch,
                },
            );
        }
        self.schedule(
            finish,
            Kind::ComponentFinish {
                inv: i,
                comp: u,
                epoch,
            },
        );
    }

    fn grow(&mut self, i: usize, u: usize) -> Result<(), SimError> {
        self.accrue(i, u);
        let (_, j, extra) = {
            let c = &mut self.invs[i].comps[u];
            let gr = c.growth[c.growth_next];
            c.growth_next += 1;
            gr
        };
        let mut pause = 0.0;
        if self.invs[i].datas[j].live {
            {
                let d = &mut self.invs[i].datas[j];
                d.usage += extra;
                d.peak = d.peak.max(d.usage);
            }
            if self.invs[i].faas.is_none() {
                if self.b.scale_up {
                    let step = self.params_for(i, self.g(i).computes().len() + j).step;
                    let near = self.invs[i].comps[u].server;
                    while self.invs[i].datas[j].alloc <= self.invs[i].datas[j].usage {
                        if self.alloc_data_bytes(i, j, step, near)? < step {
                            break;
                        }
                        pause += self.cfg.cost.mem_scale_s;
                    }
                }
                let d = &mut self.invs[i].datas[j];
                d.overflow = d.usage.saturating_sub(d.alloc);
            }
            // everyone touching the data may now swap
            let g = self.g(i);
            let running: Vec<usize> = if self.invs[i].faas.is_some() {
                vec![u]
            } else {
                g.accessors(j)
                    .iter()
                    .copied()
                    .filter(|&w| w != u && self.invs[i].comps[w].state == CState::Running)
                    .collect()
            };
            for w in running {
                if w == u {
                    continue;
                }
                self.accrue(i, w);
                self.invs[i].comps[w].swap = self.swap_for(i, w);
                self.reschedule(i, w);
            }
            self.invs[i].comps[u].swap = self.swap_for(i, u);
        }
        let now = self.now;
        let c = &mut self.invs[i].comps[u];
        c.paused_until = c.paused_until.max(now) + pause;
        self.reschedule(i, u);
        Ok(())
    }

    fn output_of(&self, i: usize, u: usize) -> u64 {
        let g = self.g(i);
        let inv = &self.invs[i];
        let mut h = fnv(FNV_OFFSET, g.compute(u).name.as_bytes());
        if u == g.root() {
            h = fnv(h, &inv.input.to_le_bytes());
        }
        for &q in g.predecessors(u) {
            let o = inv.outputs[q].expect("predecessor output recorded");
            h = fnv(h, &o.to_le_bytes());
        }
        h
    }

    fn finish(&mut self, i: usize, u: usize) -> Result<(), SimError> {
        self.accrue(i, u);
        let g = self.g(i);
        let out = self.output_of(i, u);
        let now = self.now;
        let (sample, accessed) = {
            let inv = &mut self.invs[i];
            inv.outputs[u] = Some(out);
            // parallelism the component could use, not what it was given,
            // so a small first allocation does not pin later sizing
            let demand_cpu = g.compute(u).parallelism_at(inv.scale);
            let c = &mut inv.comps[u];
            c.state = CState::Done;
            c.progress = 1.0;
            let sample = UsageSample {
                invocation_id: inv.id,
                peak_cpu: f64::from(demand_cpu),
                peak_mem: c.demand_mem,
                exec_time: (now - c.started_at).max(1e-9),
                mean_cpu_util: c.util().clamp(0.0, 1.0),
            };
            let accessed: BTreeSet<usize> = g.compute(u).accesses.iter().map(|a| a.data).collect();
            (sample, accessed)
        };
        self.dep
            .profiles
            .record(ProfileKey::component(g.app(), u), sample);
        self.log_life(i, "finish", Some(u), None);

        for j in accessed {
            let d = &mut self.invs[i].datas[j];
            if d.live {
                d.accessors_left = d.accessors_left.saturating_sub(1);
                if d.accessors_left == 0 {
                    self.retire_data(i, j)?;
                }
            }
        }

        let faas = self.invs[i].faas.is_some();
        if !faas {
            for &e in g.out_edges(u) {
                self.invs[i].recorded.insert(e);
            }
        }
        self.invs[i].remaining -= 1;

        if faas {
            for &s in g.successors(u) {
                self.invs[i].comps[s].preds_left -= 1;
            }
            self.invs[i].comps[u].container = None;
            let next = g.topo_order().iter().copied().find(|&w| {
                let c = &self.invs[i].comps[w];
                c.state == CState::Idle && c.preds_left == 0
            });
            if let Some(w) = next {
                let (id, server, _) = self.invs[i].faas.expect("function container");
                let c = &mut self.invs[i].comps[w];
                c.container = Some(id);
                c.server = Some(server);
                c.state = CState::Ready;
                self.make_runnable(i, w)?;
            }
        } else {
            let mut handed = false;
            for &s in g.successors(u) {
                let c = &mut self.invs[i].comps[s];
                c.preds_left -= 1;
                if c.preds_left > 0 {
                    continue;
                }
                if self.b.reuse
                    && !handed
                    && self.cont_target[self.invs[i].app][u] == Some(s)
                    && self.invs[i].comps[s].state == CState::Idle
                    && self.try_continue(i, u, s)?
                {
                    handed = true;
                    self.invs[i].comps[s].runnable_at = Some(now);
                    continue;
                }
                self.make_runnable(i, s)?;
            }
            if !handed {
                if let Some(id) = self.invs[i].comps[u].container.take() {
                    self.release_phys(id)?;
                }
            }
        }
        if self.invs[i].remaining == 0 {
            self.complete_invocation(i)?;
        }
        Ok(())
    }

    fn retire_data(&mut self, i: usize, j: usize) -> Result<(), SimError> {
        let g = self.g(i);
        let d = &self.invs[i].datas[j];
        let sample = UsageSample {
            invocation_id: self.invs[i].id,
            peak_cpu: 0.0,
            peak_mem: d.peak,
            exec_time: (self.now - d.created_at).max(1e-9),
            mean_cpu_util: 0.0,
        };
        self.dep.profiles.record(
            ProfileKey::component(g.app(), g.computes().len() + j),
            sample,
        );
        self.release_data(i, j)
    }

    /// Continue `s` in `u`'s container when the server has room.
    fn try_continue(&mut self, i: usize, u: usize, s: usize) -> Result<bool, SimError> {
        let Some(id) = self.invs[i].comps[u].container else {
            return Ok(false);
        };
        let current = self.container_demand(id);
        let server = self.invs[i].comps[u]
            .server
            .expect("container has a server");
        let (need, params) = self.initial_demand(i, s, current.cpu);
        let ds = self.data_servers(i, s);
        let g = self.g(i);
        let rack = self.invs[i].rack.expect("active invocation has a rack");
        let cid = ComponentId {
            app: g.app().to_string(),
            index: s,
        };
        let prior = PriorContainer {
            id,
            server,
            current,
        };
        let decision =
            self.racks[rack.0].place_next(&self.cluster, cid, need, Some(prior), &ds, true);
        if let Ok(d) = decision {
            if d.colocated_with == Some(id) && self.resize_phys(id, need, false) {
                // connections were opened while the predecessor ran
                let hide = self.b.prelaunch
                    && self.cfg.sched.prelaunch
                    && self.now - self.invs[i].comps[u].started_at > self.cfg.cost.conn_setup_s;
                self.invs[i].comps[u].container = None;
                self.invs[i].comps[s].params = Some(params);
                self.launch(
                    i,
                    s,
                    server,
                    need,
                    false,
                    d.access_modes,
                    0.0,
                    true,
                    Some(id),
                    hide,
                )?;
                return Ok(true);
            }
        }
        if let Some(gbps) = self.b.migrate_gbps {
            return self.try_migrate(i, u, s, need, params, gbps);
        }
        Ok(false)
    }

    /// Move the invocation's resident state to a server that fits `s` and run
    /// it there, paying only the transfer time.
    fn try_migrate(
        &mut self,
        i: usize,
        u: usize,
        s: usize,
        need: Demand,
        params: SizingParams,
        gbps: f64,
    ) -> Result<bool, SimError> {
        let id = self.invs[i].comps[u].container.expect("checked by caller");
        let from = self.invs[i].comps[u]
            .server
            .expect("container has a server");
        let prior_mem = self.container_demand(id).mem;
        let resident: u64 = self.invs[i]
            .datas
            .iter()
            .filter(|d| d.live)
            .map(|d| d.alloc)
            .sum();
        let total = Demand::new(need.cpu, need.mem + resident);
        let g = self.g(i);
        let rack = self.invs[i].rack.expect("active invocation has a rack");
        let cid = ComponentId {
            app: g.app().to_string(),
            index: s,
        };
        let Ok(d) = self.racks[rack.0].place_next(&self.cluster, cid, total, None, &[], false)
        else {
            return Ok(false);
        };
        if d.server == from {
            return Ok(false);
        }
        for j in 0..self.invs[i].datas.len() {
            if !self.invs[i].datas[j].live {
                continue;
            }
            let chunks = std::mem::take(&mut self.invs[i].datas[j].chunks);
            for (cid, _, bytes) in chunks {
                self.release_phys(cid)?;
                let n = g.computes().len();
                let nid = self.alloc_phys(
                    i,
                    n + j,
                    d.server,
                    Demand::new(0, bytes),
                    d.preempt_soft,
                    PhysKind::MemoryChunk,
                )?;
                self.invs[i].datas[j].chunks.push((nid, d.server, bytes));
            }
        }
        self.invs[i].comps[u].container = None;
        self.release_phys(id)?;
        let moved = resident + prior_mem;
        let delay = CostModel::migration_s(moved, gbps);
        self.log_life(
            i,
            "migrate",
            Some(s),
            Some(format!("bytes={moved} seconds={delay}")),
        );
        self.invs[i].comps[s].params = Some(params);
        let modes = crate::scheduler::access_modes(d.server, &self.data_servers(i, s));
        self.launch(
            i,
            s,
            d.server,
            need,
            d.preempt_soft,
            modes,
            delay,
            false,
            None,
            false,
        )?;
        self.refresh_rack(i);
        Ok(true)
    }

    fn complete_invocation(&mut self, i: usize) -> Result<(), SimError> {
        let g = self.g(i);
        if let Some((server, m)) = self.invs[i].soft_mark.take() {
            self.cluster.remove_soft_mark(server, g.app(), m);
        }
        if let Some((id, _, _)) = self.invs[i].faas.take() {
            self.release_phys(id)?;
        }
        for j in 0..self.invs[i].datas.len() {
            if self.invs[i].datas[j].live {
                self.retire_data(i, j)?;
            }
        }
        let inv = &mut self.invs[i];
        inv.status = IStatus::Done;
        inv.finish_t = Some(self.now);
        let e2e = (self.now - inv.arrival).max(1e-9);
        let util = if inv.cpu_core_s > 0.0 {
            (inv.ideal.used_cpu / inv.cpu_core_s).clamp(0.0, 1.0)
        } else {
            1.0
        };
        let sample = UsageSample {
            invocation_id: inv.id,
            peak_cpu: f64::from(inv.ideal.peak.cpu),
            peak_mem: inv.ideal.peak.mem,
            exec_time: e2e,
            mean_cpu_util: util,
        };
        self.dep
            .profiles
            .record(ProfileKey::invocation(g.app()), sample);
        self.log_life(i, "done", None, Some(format!("e2e={e2e}")));
        self.refresh_rack(i);
        Ok(())
    }

    fn on_cpu_sample(&mut self, i: usize, u: usize, exec: u32) -> Result<(), SimError> {
        {
            let c = &self.invs[i].comps[u];
            if c.state != CState::Running || c.executions != exec {
                return Ok(());
            }
        }
        self.accrue(i, u);
        let g = self.g(i);
        let (v, util, streak, p, server, id) = {
            let c = &self.invs[i].comps[u];
            (c.vcpus, c.util(), c.low_streak, c.p, c.server, c.container)
        };
        let (Some(server), Some(id)) = (server, id) else {
            return Ok(());
        };
        let free = self.cluster.free_resources(server)?.cpu;
        let app_res = g.app_limit().max_cpu.saturating_sub(self.invs[i].alloc_cpu);
        let max_v = (v + free.min(app_res)).min(p).max(v.min(p));
        let (nv, ns) = super::cost::cpu_autoscale_tick(v, util, streak, max_v, &self.cfg.autoscale);
        self.invs[i].comps[u].low_streak = ns;
        if nv != v {
            let cur = self.container_demand(id);
            if self.resize_phys(id, Demand::new(nv, cur.mem), false) {
                let c = &mut self.invs[i].comps[u];
                c.vcpus = nv;
                self.log_life(i, "cpu_scale", Some(u), Some(format!("{v}->{nv}")));
                self.reschedule(i, u);
            } else {
                debug!(
                    "cpu scale-up of {} refused by server pressure",
                    g.compute(u).name
                );
            }
        }
        let c = &self.invs[i].comps[u];
        let t = self.now + self.cfg.autoscale.period_s;
        let fin = self.now.max(c.paused_until) + (1.0 - c.progress) * c.runtime();
        if t < fin {
            self.schedule(
                t,
                Kind::CpuSample {
                    inv: i,
                    comp: u,
                    exec,
                },
            );
        }
        Ok(())
    }

    // ---------------------------------------------------------------- failures

    fn on_failure(&mut self, idx: usize) -> Result<(), SimError> {
        let spec = &self.cfg.failures[idx];
        let target = (0..self.invs.len()).find_map(|i| {
            if self.invs[i].status != IStatus::Active {
                return None;
            }
            let u = self.g(i).compute_by_name(&spec.component)?;
            (self.invs[i].comps[u].state == CState::Running).then_some((i, u))
        });
        match target {
            Some((i, u)) => self.crash(i, u),
            None => {
                info!(
                    "failure of `{}` at {}: no running instance",
                    spec.component, spec.at
                );
                Ok(())
            }
        }
    }

    fn crash(&mut self, i: usize, u: usize) -> Result<(), SimError> {
        self.accrue(i, u);
        self.log_life(i, "crash", Some(u), None);
        let g = self.g(i);
        let cut = graph_cut_before(g, &self.invs[i].recorded);
        let n = g.computes().len();
        let faas = self.invs[i].faas.is_some();
        for w in 0..n {
            if cut.prefix.contains(&w) {
                continue;
            }
            if let Some(id) = self.invs[i].comps[w].container.take() {
                if !faas {
                    self.release_phys(id)?;
                }
            }
            let preds = g
                .predecessors(w)
                .iter()
                .filter(|q| !cut.prefix.contains(q))
                .count();
            self.invs[i].comps[w].reset(preds);
            self.invs[i].outputs[w] = None;
        }
        if let Some((id, _, _)) = self.invs[i].faas.take() {
            self.release_phys(id)?;
        }
        for j in 0..self.invs[i].datas.len() {
            let discard = self.invs[i].datas[j].live
                && g.accessors(j).iter().any(|w| !cut.prefix.contains(w));
            if discard {
                self.release_data(i, j)?;
            }
        }
        let edges = g.edges();
        let inv = &mut self.invs[i];
        inv.recorded.retain(|&e| cut.prefix.contains(&edges[e].src));
        inv.remaining = n - cut.prefix.len();
        inv.gen += 1;
        inv.recoveries += 1;
        let gen = inv.gen;
        let names = |set: &mut dyn Iterator<Item = usize>| -> Vec<String> {
            set.map(|w| g.compute(w).name.clone()).collect()
        };
        let rec = RecoveryRecord {
            t: self.now,
            inv: inv.id,
            crashed: g.compute(u).name.clone(),
            prefix: names(&mut cut.prefix.iter().copied()),
            frontier: names(&mut cut.frontier.iter().copied()),
        };
        self.recoveries.push(rec);
        self.schedule(self.now + self.lat, Kind::RecoveryRestart { inv: i, gen });
        Ok(())
    }

    fn on_recovery_restart(&mut self, i: usize, gen: u32) -> Result<(), SimError> {
        if self.invs[i].gen != gen {
            return Ok(());
        }
        self.log_life(i, "recovery", None, None);
        if self.b.faas {
            self.invs[i].status = IStatus::Pending;
            if !self.try_start_invocation(i)? {
                self.pending_arrivals.push_back(i);
            }
            return Ok(());
        }
        let g = self.g(i);
        for &w in g.topo_order() {
            let c = &self.invs[i].comps[w];
            if c.state == CState::Idle && c.preds_left == 0 && c.runnable_at.is_none() {
                self.make_runnable(i, w)?;
            }
        }
        Ok(())
    }

    fn on_retry(&mut self) -> Result<(), SimError> {
        self.retry_armed = false;
        let comps = std::mem::take(&mut self.pending_comps);
        for (i, u, gen) in comps {
            let inv = &self.invs[i];
            let c = &inv.comps[u];
            if inv.gen != gen || c.state != CState::Idle || c.preds_left > 0 {
                continue;
            }
            if !self.place_component(i, u)? {
                self.pending_comps.push_back((i, u, gen));
            }
        }
        let arrivals = std::mem::take(&mut self.pending_arrivals);
        for i in arrivals {
            if self.invs[i].status != IStatus::Pending {
                continue;
            }
            if !self.try_start_invocation(i)? {
                self.pending_arrivals.push_back(i);
            }
        }
        Ok(())
    }

    // ------------------------------------------------------------------ report

    fn finish_report(mut self) -> RunOutput {
        let ids: Vec<PhysId> = self.acct.keys().copied().collect();
        for id in ids {
            self.accrue_phys(id);
        }
        let mut invocations = Vec::with_capacity(self.invs.len());
        for (i, inv) in self.invs.iter().enumerate() {
            let g = &self.wl.apps[inv.app];
            let mem_gb_min = crate::units::gb_min(inv.mem_byte_s);
            let finished = inv.status == IStatus::Done;
            let digest = if finished {
                let mut h = FNV_OFFSET;
                for s in g.sinks() {
                    h = fnv(h, &inv.outputs[s].unwrap_or(0).to_le_bytes());
                }
                format!("{h:016x}")
            } else {
                String::new()
            };
            let _ = i;
            invocations.push(InvocationMetrics {
                id: inv.id,
                app: g.app().to_string(),
                scale: inv.scale,
                arrival_s: inv.arrival,
                finished,
                end_to_end_s: inv.finish_t.unwrap_or(self.now) - inv.arrival,
                mem_gb_min,
                // the ideal timeline can outlast the real one only under
                // contention-delayed data creation; never report more than held
                mem_used_gb_min: crate::units::gb_min(inv.ideal.used_mem_byte_s).min(mem_gb_min),
                cpu_core_s: inv.cpu_core_s,
                cpu_used_core_s: inv.ideal.used_cpu.min(inv.cpu_core_s),
                local_access_fraction: if inv.total_vol > 0.0 {
                    (inv.local_vol / inv.total_vol).clamp(0.0, 1.0)
                } else {
                    1.0
                },
                access_gb: inv.total_vol,
                startup_overhead_s: inv.startup_s,
                recoveries: inv.recoveries,
                executions: inv.comps.iter().map(|c| c.executions).collect(),
                output_digest: digest,
            });
        }
        let aggregates = RunReport::aggregate(&invocations);
        let report = RunReport {
            policy: self.cfg.policy.name().to_string(),
            seed: self.cfg.seed,
            events_processed: self.events_processed,
            sim_end_s: self.now,
            aggregates,
            invocations,
            sizing_decisions: self.sizing_log,
            recoveries: self.recoveries,
        };
        RunOutput {
            report,
            events: self.log,
        }
    }
}
