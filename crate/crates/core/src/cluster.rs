//! Racks and servers with exact CPU/memory accounting, soft reservation
//! marks, and the physical components hosted on each server.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::ComponentId;
use crate::units::MIB;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ClusterError {
    #[error("insufficient resources on server {server}: want {cpu} vCPU / {mem} B")]
    Insufficient {
        server: ServerId,
        cpu: u32,
        mem: u64,
    },
    #[error("allocation {0} was already released")]
    DoubleRelease(PhysId),
    #[error("unknown allocation {0}")]
    UnknownHandle(PhysId),
    #[error("unknown server {0}")]
    UnknownServer(ServerId),
    #[error("invalid cluster config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ServerId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RackId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PhysId(pub u64);

impl fmt::Display for ServerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "s{}", self.0)
    }
}

impl fmt::Display for PhysId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}", self.0)
    }
}

/// A (vCPU, bytes) pair.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Demand {
    pub cpu: u32,
    pub mem: u64,
}

impl Demand {
    pub const ZERO: Demand = Demand { cpu: 0, mem: 0 };

    pub fn new(cpu: u32, mem: u64) -> Self {
        Self { cpu, mem }
    }

    pub fn fits_in(&self, free: Demand) -> bool {
        self.cpu <= free.cpu && self.mem <= free.mem
    }

    pub fn saturating_sub(self, o: Demand) -> Demand {
        Demand::new(
            self.cpu.saturating_sub(o.cpu),
            self.mem.saturating_sub(o.mem),
        )
    }

    pub fn add(self, o: Demand) -> Demand {
        Demand::new(self.cpu + o.cpu, self.mem + o.mem)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhysKind {
    Container,
    MemoryChunk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccessMode {
    Local,
    Remote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhysState {
    Prelaunching,
    Running,
    Finished,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhysicalComponent {
    pub id: PhysId,
    pub virtual_id: ComponentId,
    pub kind: PhysKind,
    pub server: ServerId,
    pub cpu: u32,
    pub mem: u64,
    pub access_mode: AccessMode,
    pub state: PhysState,
    /// Application owning the allocation; its own soft marks never block it.
    pub app: String,
}

/// Who an allocation is for.
#[derive(Debug, Clone)]
pub struct AllocTag {
    pub virtual_id: ComponentId,
    pub kind: PhysKind,
    pub state: PhysState,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Server {
    pub id: ServerId,
    pub rack: RackId,
    pub cpu_cap: u32,
    pub mem_cap: u64,
    pub cpu_alloc: u32,
    pub mem_alloc: u64,
    /// Per-application aggregate low-priority reservations. Not allocations.
    pub soft_marks: BTreeMap<String, Demand>,
    pub hosted: BTreeSet<PhysId>,
}

impl Server {
    pub fn free(&self) -> Demand {
        Demand::new(self.cpu_cap - self.cpu_alloc, self.mem_cap - self.mem_alloc)
    }

    /// Marks held by applications other than `app`.
    pub fn marks_of_others(&self, app: &str) -> Demand {
        self.soft_marks
            .iter()
            .filter(|(a, _)| a.as_str() != app)
            .fold(Demand::ZERO, |acc, (_, d)| acc.add(*d))
    }

    /// Free capacity once other applications' marks are honoured.
    pub fn effective_free(&self, app: &str) -> Demand {
        self.free().saturating_sub(self.marks_of_others(app))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Rack {
    pub id: RackId,
    pub servers: Vec<ServerId>,
}

// --- config file ---

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub racks: Vec<RackConfig>,
    #[serde(default = "default_link")]
    pub link_gbps: f64,
    #[serde(default = "default_granule")]
    pub granule_mb: u64,
    #[serde(default = "default_chunk_cap")]
    pub chunk_cap_mb: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RackConfig {
    pub servers: Vec<ServerConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ServerConfig {
    pub cpu: u32,
    pub mem_mb: u64,
}

fn default_link() -> f64 {
    100.0
}
fn default_granule() -> u64 {
    64
}
fn default_chunk_cap() -> u64 {
    1024
}

impl Default for ClusterConfig {
    /// Eight 32-vCPU / 64 GB servers in one rack on 100 Gbps links.
    fn default() -> Self {
        Self::uniform(1, 8, 32, 64 * 1024)
    }
}

impl ClusterConfig {
    pub fn uniform(racks: usize, servers_per_rack: usize, cpu: u32, mem_mb: u64) -> Self {
        Self {
            racks: (0..racks)
                .map(|_| RackConfig {
                    servers: vec![ServerConfig { cpu, mem_mb }; servers_per_rack],
                })
                .collect(),
            link_gbps: default_link(),
            granule_mb: default_granule(),
            chunk_cap_mb: default_chunk_cap(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ClusterError> {
        let cfg: Self =
            serde_json::from_str(text).map_err(|e| ClusterError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ClusterError> {
        let bad = |m: &str| Err(ClusterError::Config(m.to_string()));
        if self.racks.is_empty() || self.racks.iter().any(|r| r.servers.is_empty()) {
            return bad("every rack needs at least one server");
        }
        if self.granule_mb == 0 || self.chunk_cap_mb < self.granule_mb {
            return bad("granule must be positive and not exceed the chunk cap");
        }
        if self.chunk_cap_mb % self.granule_mb != 0 {
            return bad("chunk cap must be a multiple of the granule");
        }
        if !(self.link_gbps > 0.0) {
            return bad("link_gbps must be positive");
        }
        Ok(())
    }

    pub fn granule(&self) -> u64 {
        self.granule_mb * MIB
    }

    pub fn chunk_cap(&self) -> u64 {
        self.chunk_cap_mb * MIB
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterState {
    racks: Vec<Rack>,
    servers: Vec<Server>,
    phys: BTreeMap<PhysId, PhysicalComponent>,
    next_id: u64,
    pub clock: f64,
    granule: u64,
    chunk_cap: u64,
    link_gbps: f64,
}

impl ClusterState {
    pub fn new(cfg: &ClusterConfig) -> Self {
        let mut racks = Vec::new();
        let mut servers = Vec::new();
        for (r, rc) in cfg.racks.iter().enumerate() {
            let mut ids = Vec::new();
            for sc in &rc.servers {
                let id = ServerId(servers.len());
                servers.push(Server {
                    id,
                    rack: RackId(r),
                    cpu_cap: sc.cpu,
                    mem_cap: sc.mem_mb * MIB,
                    cpu_alloc: 0,
                    mem_alloc: 0,
                    soft_marks: BTreeMap::new(),
                    hosted: BTreeSet::new(),
                });
                ids.push(id);
            }
            racks.push(Rack {
                id: RackId(r),
                servers: ids,
            });
        }
        Self {
            racks,
            servers,
            phys: BTreeMap::new(),
            next_id: 0,
            clock: 0.0,
            granule: cfg.granule(),
            chunk_cap: cfg.chunk_cap(),
            link_gbps: cfg.link_gbps,
        }
    }

    pub fn racks(&self) -> &[Rack] {
        &self.racks
    }

    pub fn servers(&self) -> &[Server] {
        &self.servers
    }

    pub fn server(&self, id: ServerId) -> Result<&Server, ClusterError> {
        self.servers
            .get(id.0)
            .ok_or(ClusterError::UnknownServer(id))
    }

    pub fn rack_servers(&self, rack: RackId) -> &[ServerId] {
        &self.racks[rack.0].servers
    }

    pub fn granule(&self) -> u64 {
        self.granule
    }

    pub fn chunk_cap(&self) -> u64 {
        self.chunk_cap
    }

    pub fn link_gbps(&self) -> f64 {
        self.link_gbps
    }

    pub fn phys(&self, id: PhysId) -> Option<&PhysicalComponent> {
        self.phys.get(&id)
    }

    pub fn live_components(&self) -> impl Iterator<Item = &PhysicalComponent> {
        self.phys.values()
    }

    pub fn free_resources(&self, server: ServerId) -> Result<Demand, ClusterError> {
        Ok(self.server(server)?.free())
    }

    pub fn soft_marked(&self, server: ServerId) -> Result<Demand, ClusterError> {
        let s = self.server(server)?;
        Ok(s.soft_marks.values().fold(Demand::ZERO, |a, d| a.add(*d)))
    }

    /// Sum of free memory and CPU over a rack.
    pub fn rack_free(&self, rack: RackId) -> Demand {
        self.racks[rack.0]
            .servers
            .iter()
            .map(|s| self.servers[s.0].free())
            .fold(Demand::ZERO, Demand::add)
    }

    /// Reserve `(cpu, mem)` on `server` for `app`.
    ///
    /// Without `preempt_soft` the request must fit beside other applications'
    /// marks; with it, only physical capacity matters and the overlapped marks
    /// of other applications on the server are cleared.
    pub fn try_alloc(
        &mut self,
        server: ServerId,
        cpu: u32,
        mem: u64,
        preempt_soft: bool,
        app: &str,
        tag: AllocTag,
    ) -> Result<PhysId, ClusterError> {
        let want = Demand::new(cpu, mem);
        self.reserve(server, want, preempt_soft, app)?;
        let id = PhysId(self.next_id);
        self.next_id += 1;
        self.phys.insert(
            id,
            PhysicalComponent {
                id,
                virtual_id: tag.virtual_id,
                kind: tag.kind,
                server,
                cpu,
                mem,
                access_mode: AccessMode::Local,
                state: tag.state,
                app: app.to_string(),
            },
        );
        self.servers[server.0].hosted.insert(id);
        self.debug_check_server(server);
        Ok(id)
    }

    fn reserve(
        &mut self,
        server: ServerId,
        want: Demand,
        preempt_soft: bool,
        app: &str,
    ) -> Result<(), ClusterError> {
        let s = self
            .servers
            .get_mut(server.0)
            .ok_or(ClusterError::UnknownServer(server))?;
        let insufficient = ClusterError::Insufficient {
            server,
            cpu: want.cpu,
            mem: want.mem,
        };
        if !want.fits_in(s.free()) {
            return Err(insufficient);
        }
        if !want.fits_in(s.effective_free(app)) {
            if !preempt_soft {
                return Err(insufficient);
            }
            s.soft_marks.retain(|a, _| a == app);
        }
        s.cpu_alloc += want.cpu;
        s.mem_alloc += want.mem;
        Ok(())
    }

    /// Change the size of a live allocation in place. Shrinking always
    /// succeeds; growing needs free room on the same server.
    pub fn resize(
        &mut self,
        id: PhysId,
        cpu: u32,
        mem: u64,
        preempt_soft: bool,
    ) -> Result<(), ClusterError> {
        let pc = self.live(id)?;
        let (server, old_cpu, old_mem, app) = (pc.server, pc.cpu, pc.mem, pc.app.clone());
        let grow = Demand::new(cpu.saturating_sub(old_cpu), mem.saturating_sub(old_mem));
        let shrink = Demand::new(old_cpu.saturating_sub(cpu), old_mem.saturating_sub(mem));
        if grow != Demand::ZERO {
            self.reserve(server, grow, preempt_soft, &app)?;
        }
        let s = &mut self.servers[server.0];
        s.cpu_alloc -= shrink.cpu;
        s.mem_alloc -= shrink.mem;
        let pc = self.phys.get_mut(&id).expect("checked live");
        pc.cpu = cpu;
        pc.mem = mem;
        self.debug_check_server(server);
        Ok(())
    }

    pub fn set_state(&mut self, id: PhysId, state: PhysState) -> Result<(), ClusterError> {
        self.live(id)?;
        self.phys.get_mut(&id).expect("checked live").state = state;
        Ok(())
    }

    pub fn set_access_mode(&mut self, id: PhysId, mode: AccessMode) -> Result<(), ClusterError> {
        self.live(id)?;
        self.phys.get_mut(&id).expect("checked live").access_mode = mode;
        Ok(())
    }

    fn live(&self, id: PhysId) -> Result<&PhysicalComponent, ClusterError> {
        match self.phys.get(&id) {
            Some(pc) => Ok(pc),
            None if id.0 < self.next_id => Err(ClusterError::DoubleRelease(id)),
            None => Err(ClusterError::UnknownHandle(id)),
        }
    }

    pub fn release(&mut self, id: PhysId) -> Result<PhysicalComponent, ClusterError> {
        self.live(id)?;
        let pc = self.phys.remove(&id).expect("checked live");
        let s = &mut self.servers[pc.server.0];
        s.cpu_alloc -= pc.cpu;
        s.mem_alloc -= pc.mem;
        s.hosted.remove(&id);
        self.debug_check_server(pc.server);
        Ok(pc)
    }

    pub fn add_soft_mark(&mut self, server: ServerId, app: &str, d: Demand) {
        if d == Demand::ZERO {
            return;
        }
        let e = self.servers[server.0]
            .soft_marks
            .entry(app.to_string())
            .or_default();
        *e = e.add(d);
    }

    /// Remove up to `d` of `app`'s mark on `server` (marks may already have
    /// been preempted).
    pub fn remove_soft_mark(&mut self, server: ServerId, app: &str, d: Demand) {
        let marks = &mut self.servers[server.0].soft_marks;
        if let Some(e) = marks.get_mut(app) {
            *e = e.saturating_sub(d);
            if *e == Demand::ZERO {
                marks.remove(app);
            }
        }
    }

    fn debug_check_server(&self, server: ServerId) {
        if cfg!(debug_assertions) {
            if let Err(e) = self.check_server(server) {
                panic!("accounting invariant violated: {e}");
            }
        }
    }

    fn check_server(&self, server: ServerId) -> Result<(), String> {
        let s = &self.servers[server.0];
        let (mut cpu, mut mem) = (0u32, 0u64);
        for id in &s.hosted {
            let pc = self
                .phys
                .get(id)
                .ok_or_else(|| format!("{server} hosts released {id}"))?;
            if pc.server != server {
                return Err(format!(
                    "{id} listed on {server} but lives on {}",
                    pc.server
                ));
            }
            cpu += pc.cpu;
            mem += pc.mem;
        }
        if cpu != s.cpu_alloc || mem != s.mem_alloc {
            return Err(format!(
                "{server}: alloc ({}, {}) but hosted sum ({cpu}, {mem})",
                s.cpu_alloc, s.mem_alloc
            ));
        }
        if s.cpu_alloc > s.cpu_cap || s.mem_alloc > s.mem_cap {
            return Err(format!("{server} overcommitted"));
        }
        Ok(())
    }

    /// Full conservation check: per-server allocation equals the sum over
    /// hosted live components, never above capacity, and every live
    /// component is hosted by the server it names.
    pub fn check_invariants(&self) -> Result<(), String> {
        for s in &self.servers {
            self.check_server(s.id)?;
        }
        for pc in self.phys.values() {
            if !self.servers[pc.server.0].hosted.contains(&pc.id) {
                return Err(format!("{} not hosted by {}", pc.id, pc.server));
            }
            if pc.kind == PhysKind::Container && pc.cpu < 1 {
                return Err(format!("container {} without a vCPU", pc.id));
            }
            if pc.kind == PhysKind::MemoryChunk && (pc.cpu != 0 || pc.mem % self.granule != 0) {
                return Err(format!("malformed memory chunk {}", pc.id));
            }
        }
        Ok(())
    }
}
