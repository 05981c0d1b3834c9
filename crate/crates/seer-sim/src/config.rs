//! Scenario/topology configuration: a single versioned key-value file
//! with sections, either naming a generated graph shape or listing
//! servers, nodes, and edges explicitly.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, SeerError};
use crate::predictor::Hyperparams;
use crate::sim::{AllocationState, AnnotateConfig, Edge, EdgeKind, QosSpec, Server, ServerId, ServiceGraph, ServiceNode};
use crate::trace::{MetricKind, MicroserviceId, ResourceKind};

pub const CONFIG_FILE_VERSION: &str = "# seer-sim config v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiagnosisMode {
    Counters,
    Probe,
}

impl DiagnosisMode {
    pub fn parse(s: &str) -> Result<DiagnosisMode> {
        match s {
            "counters" => Ok(DiagnosisMode::Counters),
            "probe" => Ok(DiagnosisMode::Probe),
            other => Err(SeerError::Config(format!("unknown diagnosis mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScenarioSpec {
    pub name: String,
    pub tick_us: f64,
    pub arrivals_per_tick: f64,
    pub episodes: usize,
    pub warmup_ticks: u64,
    pub episode_gap_ticks: u64,
    pub injection_duration_ticks: u64,
    pub intensity_min: f64,
    pub intensity_max: f64,
    pub qos: QosSpec,
    pub horizon: u64,
    pub queue_bound: usize,
    pub deterministic_service: bool,
    pub mem_inertia_ticks: u64,
    pub train_fraction: f64,
    pub diagnosis: DiagnosisMode,
    pub annotate: AnnotateConfig,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        ScenarioSpec {
            name: "scenario".into(),
            tick_us: 10_000.0,
            arrivals_per_tick: 10.0,
            episodes: 20,
            warmup_ticks: 100,
            episode_gap_ticks: 150,
            injection_duration_ticks: 150,
            intensity_min: 1.1,
            intensity_max: 1.7,
            qos: QosSpec { target_us: 10_000.0, window: 50, persistence: 2 },
            horizon: 50,
            queue_bound: 512,
            deterministic_service: false,
            mem_inertia_ticks: 20,
            train_fraction: 0.7,
            diagnosis: DiagnosisMode::Counters,
            annotate: AnnotateConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct MitigationSpec {
    pub step_factor: f64,
    pub max_steps: usize,
    pub probe_intensity: f64,
    pub probe_duration_ticks: u64,
    pub probe_gap_ticks: u64,
    /// Resources mitigated by partitioning (the CAT/HTB analogs); the
    /// rest are handled by share resize (the container-resize analog).
    pub use_partitioning: [bool; ResourceKind::COUNT],
    pub recovery_margin_ticks: u64,
}

impl Default for MitigationSpec {
    fn default() -> Self {
        let mut use_partitioning = [false; ResourceKind::COUNT];
        use_partitioning[ResourceKind::LlcCapacity.index()] = true;
        use_partitioning[ResourceKind::NetBandwidth.index()] = true;
        MitigationSpec {
            step_factor: 1.25,
            max_steps: 4,
            probe_intensity: 0.1,
            probe_duration_ticks: 1,
            probe_gap_ticks: 6,
            use_partitioning,
            recovery_margin_ticks: 100,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainSpec {
    pub metric: MetricKind,
    pub hyper: Hyperparams,
}

impl Default for TrainSpec {
    fn default() -> Self {
        TrainSpec { metric: MetricKind::QueueDepth, hyper: Hyperparams::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeKind {
    Fanout,
    Chain,
    FaninFanout,
}

impl ShapeKind {
    pub fn parse(s: &str) -> Result<ShapeKind> {
        match s {
            "fanout" => Ok(ShapeKind::Fanout),
            "chain" => Ok(ShapeKind::Chain),
            "fanin_fanout" => Ok(ShapeKind::FaninFanout),
            other => Err(SeerError::Config(format!("unknown topology shape `{other}`"))),
        }
    }
}

#[derive(Debug, Clone)]
pub enum TopologySpec {
    Shape { shape: ShapeKind, services: usize, servers: usize },
    Explicit { graph: ServiceGraph, alloc: AllocationState },
}

#[derive(Debug, Clone)]
pub struct Config {
    pub scenario: ScenarioSpec,
    pub topology: TopologySpec,
    pub train: TrainSpec,
    pub mitigation: MitigationSpec,
    pub sweep_sizes: Vec<usize>,
    pub latency_services: usize,
    pub latency_snapshots: usize,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            scenario: ScenarioSpec::default(),
            topology: TopologySpec::Shape { shape: ShapeKind::Fanout, services: 20, servers: 6 },
            train: TrainSpec::default(),
            mitigation: MitigationSpec::default(),
            sweep_sizes: vec![10, 20, 50],
            latency_services: 200,
            latency_snapshots: 2000,
        }
    }
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

struct RawConfig {
    /// section -> key -> value
    values: BTreeMap<String, BTreeMap<String, String>>,
    /// section -> raw rows (for servers/nodes/edges/entry)
    rows: BTreeMap<String, Vec<(usize, String)>>,
}

fn parse_raw(path: &Path, text: &str) -> Result<RawConfig> {
    let mut values: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
    let mut rows: BTreeMap<String, Vec<(usize, String)>> = BTreeMap::new();
    let mut section = String::new();
    let mut saw_version = false;
    for (idx, raw_line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw_line.trim();
        if lineno == 1 {
            if line != CONFIG_FILE_VERSION {
                return Err(SeerError::Config(format!(
                    "{}: first line must be `{CONFIG_FILE_VERSION}`",
                    path.display()
                )));
            }
            saw_version = true;
            continue;
        }
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            section = name.trim().to_string();
            continue;
        }
        if section.is_empty() {
            return Err(SeerError::Config(format!(
                "{}:{}: content before any [section]",
                path.display(),
                lineno
            )));
        }
        match section.as_str() {
            "servers" | "nodes" | "edges" | "entry" => {
                rows.entry(section.clone()).or_default().push((lineno, line.to_string()));
            }
            _ => {
                let (key, value) = line.split_once('=').ok_or_else(|| {
                    SeerError::Config(format!(
                        "{}:{}: expected `key = value`",
                        path.display(),
                        lineno
                    ))
                })?;
                values
                    .entry(section.clone())
                    .or_default()
                    .insert(key.trim().to_string(), value.trim().to_string());
            }
        }
    }
    if !saw_version {
        return Err(SeerError::Config(format!("{}: empty config", path.display())));
    }
    Ok(RawConfig { values, rows })
}

struct Section<'a> {
    name: &'a str,
    map: Option<&'a BTreeMap<String, String>>,
}

impl<'a> Section<'a> {
    fn get(&self, key: &str) -> Option<&'a str> {
        self.map.and_then(|m| m.get(key)).map(|s| s.as_str())
    }

    fn parse<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.get(key) {
            None => Ok(default),
            Some(s) => s.parse::<T>().map_err(|_| {
                SeerError::Config(format!("[{}] {key}: invalid value `{s}`", self.name))
            }),
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path).map_err(|e| SeerError::io(path, e))?;
        Config::parse(path, &text)
    }

    pub fn parse(path: &Path, text: &str) -> Result<Config> {
        let raw = parse_raw(path, text)?;
        let section = |name: &str| Section { name: "", map: raw.values.get(name) }
            .map
            .map(|m| Section { name: Box::leak(name.to_string().into_boxed_str()), map: Some(m) })
            .unwrap_or(Section { name: "", map: None });
        let _ = section;

        let sec = |name: &'static str| Section { name, map: raw.values.get(name) };

        let s = sec("scenario");
        let defaults = ScenarioSpec::default();
        let scenario = ScenarioSpec {
            name: s.get("name").unwrap_or("scenario").to_string(),
            tick_us: s.parse("tick_us", defaults.tick_us)?,
            arrivals_per_tick: s.parse("arrivals_per_tick", defaults.arrivals_per_tick)?,
            episodes: s.parse("episodes", defaults.episodes)?,
            warmup_ticks: s.parse("warmup_ticks", defaults.warmup_ticks)?,
            episode_gap_ticks: s.parse("episode_gap_ticks", defaults.episode_gap_ticks)?,
            injection_duration_ticks: s
                .parse("injection_duration_ticks", defaults.injection_duration_ticks)?,
            intensity_min: s.parse("intensity_min", defaults.intensity_min)?,
            intensity_max: s.parse("intensity_max", defaults.intensity_max)?,
            qos: QosSpec {
                target_us: s.parse("qos_target_us", defaults.qos.target_us)?,
                window: s.parse("qos_window", defaults.qos.window)?,
                persistence: s.parse("qos_persistence", defaults.qos.persistence)?,
            },
            horizon: s.parse("horizon", defaults.horizon)?,
            queue_bound: s.parse("queue_bound", defaults.queue_bound)?,
            deterministic_service: match s.get("service_dist") {
                None | Some("exp") => false,
                Some("deterministic") => true,
                Some(other) => {
                    return Err(SeerError::Config(format!(
                        "[scenario] service_dist: unknown value `{other}`"
                    )))
                }
            },
            mem_inertia_ticks: s.parse("mem_inertia_ticks", defaults.mem_inertia_ticks)?,
            train_fraction: s.parse("train_fraction", defaults.train_fraction)?,
            diagnosis: match s.get("diagnosis") {
                None => DiagnosisMode::Counters,
                Some(v) => DiagnosisMode::parse(v)?,
            },
            annotate: AnnotateConfig {
                factor: s.parse("culprit_factor", defaults.annotate.factor)?,
                floor: s.parse("culprit_floor", defaults.annotate.floor)?,
                pre_window: s.parse("culprit_pre_window", defaults.annotate.pre_window)?,
            },
        };
        scenario.qos.validate()?;
        if scenario.horizon == 0 {
            return Err(SeerError::Config("[scenario] horizon must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&scenario.train_fraction) {
            return Err(SeerError::Config("[scenario] train_fraction outside [0, 1]".into()));
        }

        let t = sec("train");
        let hd = Hyperparams::default();
        let train = TrainSpec {
            metric: match t.get("input_metric") {
                None => MetricKind::QueueDepth,
                Some(v) => MetricKind::parse(v)?,
            },
            hyper: Hyperparams {
                learning_rate: t.parse("learning_rate", hd.learning_rate)?,
                epsilon: t.parse("epsilon", hd.epsilon)?,
                batch_size: t.parse("batch_size", hd.batch_size)?,
                epochs: t.parse("epochs", hd.epochs)?,
                hidden_layers: t.parse("hidden_layers", hd.hidden_layers)?,
                hidden_width: t.parse("hidden_width", hd.hidden_width)?,
                seed: 0, // filled from the CLI seed at run time
                fire_threshold: t.parse("fire_threshold", hd.fire_threshold)?,
                oversample_fraction: t.parse("oversample_fraction", hd.oversample_fraction)?,
            },
        };
        train.hyper.validate()?;

        let m = sec("mitigation");
        let md = MitigationSpec::default();
        let mut use_partitioning = md.use_partitioning;
        if let Some(list) = m.get("partition_resources") {
            use_partitioning = [false; ResourceKind::COUNT];
            for tok in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                use_partitioning[ResourceKind::parse(tok)?.index()] = true;
            }
        }
        let mitigation = MitigationSpec {
            step_factor: m.parse("step_factor", md.step_factor)?,
            max_steps: m.parse("max_steps", md.max_steps)?,
            probe_intensity: m.parse("probe_intensity", md.probe_intensity)?,
            probe_duration_ticks: m.parse("probe_duration_ticks", md.probe_duration_ticks)?,
            probe_gap_ticks: m.parse("probe_gap_ticks", md.probe_gap_ticks)?,
            use_partitioning,
            recovery_margin_ticks: m.parse("recovery_margin_ticks", md.recovery_margin_ticks)?,
        };
        if mitigation.step_factor <= 1.0 {
            return Err(SeerError::Config("[mitigation] step_factor must exceed 1".into()));
        }
        if mitigation.max_steps == 0 {
            return Err(SeerError::Config("[mitigation] max_steps must be >= 1".into()));
        }

        let topology = if raw.rows.contains_key("nodes") || raw.rows.contains_key("servers") {
            parse_explicit_topology(path, &raw)?
        } else {
            let topo = sec("topology");
            TopologySpec::Shape {
                shape: ShapeKind::parse(topo.get("shape").unwrap_or("fanout"))?,
                services: topo.parse("services", 20usize)?,
                servers: topo.parse("servers", 6usize)?,
            }
        };

        let sw = sec("sweep");
        let sweep_sizes = match sw.get("sizes") {
            None => vec![10, 20, 50],
            Some(list) => {
                let mut sizes = Vec::new();
                for tok in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                    sizes.push(tok.parse::<usize>().map_err(|_| {
                        SeerError::Config(format!("[sweep] sizes: invalid entry `{tok}`"))
                    })?);
                }
                if sizes.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(SeerError::Config("[sweep] sizes must be ascending".into()));
                }
                sizes
            }
        };

        let lat = sec("latency");
        let latency_services = lat.parse("n_services", 200usize)?;
        let latency_snapshots = lat.parse("snapshots", 2000usize)?;
        if latency_snapshots < 1000 {
            return Err(SeerError::Config("[latency] snapshots must be >= 1000".into()));
        }

        Ok(Config {
            scenario,
            topology,
            train,
            mitigation,
            sweep_sizes,
            latency_services,
            latency_snapshots,
        })
    }

    /// Materialize the service graph (and its initial allocation) for this
    /// config. Shape topologies are generated deterministically from the
    /// seed; explicit topologies ignore it.
    pub fn build_topology(&self, seed: u64) -> Result<(ServiceGraph, AllocationState)> {
        match &self.topology {
            TopologySpec::Explicit { graph, alloc } => Ok((graph.clone(), alloc.clone())),
            TopologySpec::Shape { shape, services, servers } => {
                let graph = build_shape(
                    *shape,
                    *services,
                    *servers,
                    self.scenario.arrivals_per_tick / self.scenario.tick_us,
                    seed,
                )?;
                let alloc = AllocationState::from_graph(&graph);
                Ok((graph, alloc))
            }
        }
    }

    /// Same config with the topology regenerated at a different size
    /// (used by the scalability sweep).
    pub fn with_services(&self, services: usize) -> Config {
        let mut out = self.clone();
        if let TopologySpec::Shape { shape, servers, .. } = &self.topology {
            let servers = (*servers).max(services / 4).max(2);
            out.topology = TopologySpec::Shape { shape: *shape, services, servers };
        }
        out
    }
}

fn parse_explicit_topology(path: &Path, raw: &RawConfig) -> Result<TopologySpec> {
    let empty = Vec::new();
    let cfg_err = |lineno: usize, msg: String| {
        SeerError::Config(format!("{}:{}: {}", path.display(), lineno, msg))
    };

    let mut servers = Vec::new();
    let mut server_ids: BTreeMap<String, ServerId> = BTreeMap::new();
    for (lineno, line) in raw.rows.get("servers").unwrap_or(&empty) {
        // server <name> [resource=capacity ...]
        let mut toks = line.split_whitespace();
        if toks.next() != Some("server") {
            return Err(cfg_err(*lineno, "expected `server <name> ...`".into()));
        }
        let name = toks
            .next()
            .ok_or_else(|| cfg_err(*lineno, "server needs a name".into()))?;
        let mut capacity = [8.0, 1.0, 1.0, 1.0, 1.0, 1.0];
        for tok in toks {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| cfg_err(*lineno, format!("bad attribute `{tok}`")))?;
            let r = ResourceKind::parse(k).map_err(|_| cfg_err(*lineno, format!("unknown resource `{k}`")))?;
            capacity[r.index()] = v
                .parse::<f64>()
                .map_err(|_| cfg_err(*lineno, format!("bad capacity `{v}`")))?;
        }
        let id = ServerId(servers.len() as u32);
        if server_ids.insert(name.to_string(), id).is_some() {
            return Err(cfg_err(*lineno, format!("duplicate server `{name}`")));
        }
        servers.push(Server { id, name: name.to_string(), capacity });
    }

    let mut nodes: Vec<ServiceNode> = Vec::new();
    let mut node_ids: BTreeMap<String, MicroserviceId> = BTreeMap::new();
    let mut partitions: Vec<(MicroserviceId, ResourceKind, f64)> = Vec::new();
    for (lineno, line) in raw.rows.get("nodes").unwrap_or(&empty) {
        // node <name> server=<s> service_us=<f> workers=<n>
        //      demand=cpu:0.1,llc:0.2 [partition=llc:0.3]
        let mut toks = line.split_whitespace();
        if toks.next() != Some("node") {
            return Err(cfg_err(*lineno, "expected `node <name> ...`".into()));
        }
        let name = toks
            .next()
            .ok_or_else(|| cfg_err(*lineno, "node needs a name".into()))?;
        let id = MicroserviceId(nodes.len() as u32);
        if node_ids.insert(name.to_string(), id).is_some() {
            return Err(cfg_err(*lineno, format!("duplicate node `{name}`")));
        }
        let mut server = None;
        let mut service_us = None;
        let mut workers = 4u32;
        let mut demand = [0.0; ResourceKind::COUNT];
        for tok in toks {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| cfg_err(*lineno, format!("bad attribute `{tok}`")))?;
            match k {
                "server" => {
                    server = Some(*server_ids.get(v).ok_or_else(|| {
                        cfg_err(*lineno, format!("unknown server `{v}`"))
                    })?)
                }
                "service_us" => {
                    service_us = Some(v.parse::<f64>().map_err(|_| {
                        cfg_err(*lineno, format!("bad service_us `{v}`"))
                    })?)
                }
                "workers" => {
                    workers = v
                        .parse::<u32>()
                        .map_err(|_| cfg_err(*lineno, format!("bad workers `{v}`")))?
                }
                "demand" | "partition" => {
                    for pair in v.split(',').filter(|s| !s.is_empty()) {
                        let (rk, val) = pair.split_once(':').ok_or_else(|| {
                            cfg_err(*lineno, format!("bad {k} entry `{pair}`"))
                        })?;
                        let r = ResourceKind::parse(rk)
                            .map_err(|_| cfg_err(*lineno, format!("unknown resource `{rk}`")))?;
                        let val = val
                            .parse::<f64>()
                            .map_err(|_| cfg_err(*lineno, format!("bad fraction `{val}`")))?;
                        if k == "demand" {
                            demand[r.index()] = val;
                        } else {
                            partitions.push((id, r, val));
                        }
                    }
                }
                other => return Err(cfg_err(*lineno, format!("unknown attribute `{other}`"))),
            }
        }
        nodes.push(ServiceNode {
            id,
            name: name.to_string(),
            server: server.ok_or_else(|| cfg_err(*lineno, format!("node `{name}` has no server")))?,
            base_service_us: service_us
                .ok_or_else(|| cfg_err(*lineno, format!("node `{name}` has no service_us")))?,
            workers,
            demand,
            edges: Vec::new(),
        });
    }

    for (lineno, line) in raw.rows.get("edges").unwrap_or(&empty) {
        // edge <caller> <callee> blocking|async [fanout]
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() < 4 || toks[0] != "edge" {
            return Err(cfg_err(*lineno, "expected `edge <caller> <callee> <kind> [fanout]`".into()));
        }
        let caller = *node_ids
            .get(toks[1])
            .ok_or_else(|| cfg_err(*lineno, format!("unknown node `{}`", toks[1])))?;
        let callee = *node_ids
            .get(toks[2])
            .ok_or_else(|| cfg_err(*lineno, format!("unknown node `{}`", toks[2])))?;
        let kind = match toks[3] {
            "blocking" => EdgeKind::Blocking,
            "async" => EdgeKind::Async,
            other => return Err(cfg_err(*lineno, format!("unknown edge kind `{other}`"))),
        };
        let fanout = if toks.len() > 4 {
            toks[4]
                .parse::<u32>()
                .map_err(|_| cfg_err(*lineno, format!("bad fanout `{}`", toks[4])))?
        } else {
            1
        };
        nodes[caller.index()].edges.push(Edge { callee, kind, fanout });
    }

    let entry_rows = raw.rows.get("entry").cloned().unwrap_or_default();
    let entry = match entry_rows.as_slice() {
        [(lineno, line)] => {
            let toks: Vec<&str> = line.split_whitespace().collect();
            if toks.len() != 2 || toks[0] != "entry" {
                return Err(cfg_err(*lineno, "expected `entry <node>`".into()));
            }
            *node_ids
                .get(toks[1])
                .ok_or_else(|| cfg_err(*lineno, format!("unknown node `{}`", toks[1])))?
        }
        [] => MicroserviceId(0),
        _ => return Err(SeerError::Config("multiple entry lines".into())),
    };

    let graph = ServiceGraph { nodes, servers, entry };
    let mut alloc = AllocationState::from_graph(&graph);
    for (id, r, share) in partitions {
        alloc.partitioned[id.index()][r.index()] = true;
        alloc.share[id.index()][r.index()] = share;
    }
    Ok(TopologySpec::Explicit { graph, alloc })
}

// ---------------------------------------------------------------------------
// Shape builders
// ---------------------------------------------------------------------------

const SECONDARY_RESOURCES: [ResourceKind; 5] = [
    ResourceKind::MemCapacity,
    ResourceKind::MemBandwidth,
    ResourceKind::NetBandwidth,
    ResourceKind::IoBandwidth,
    ResourceKind::LlcCapacity,
];

/// Deterministically generate one of the shipped graph shapes.
///
/// `arrival_rate_per_us` drives worker sizing: upper layers hold workers
/// across their whole blocking subtree, so their pools must scale with
/// the subtree's latency or the baseline saturates on its own.
pub fn build_shape(
    shape: ShapeKind,
    services: usize,
    servers: usize,
    arrival_rate_per_us: f64,
    seed: u64,
) -> Result<ServiceGraph> {
    if services < 2 {
        return Err(SeerError::Config("shape topologies need >= 2 services".into()));
    }
    if servers < 1 {
        return Err(SeerError::Config("need at least one server".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0x7090);

    // Level layout per shape.
    let levels: Vec<usize> = match shape {
        ShapeKind::Chain => vec![1; services],
        ShapeKind::Fanout => {
            let rem = services - 1;
            let l1 = (rem as f64 * 0.3).ceil() as usize;
            let l2 = (rem as f64 * 0.35).ceil() as usize;
            let l3 = rem.saturating_sub(l1 + l2);
            let mut v = vec![1, l1.max(1), l2.max(1)];
            if l3 > 0 {
                v.push(l3);
            }
            v
        }
        ShapeKind::FaninFanout => {
            let rem = services - 1;
            let mids = (rem as f64 * 0.55).ceil() as usize;
            let backs = (rem as f64 * 0.3).ceil() as usize;
            let tail = rem.saturating_sub(mids + backs);
            let mut v = vec![1, mids.max(1), backs.max(1)];
            if tail > 0 {
                v.push(tail);
            }
            v
        }
    };

    // Assign ids level by level.
    let mut level_of = Vec::with_capacity(services);
    let mut level_members: Vec<Vec<u32>> = Vec::new();
    let mut next_id = 0u32;
    for (lvl, &width) in levels.iter().enumerate() {
        let mut members = Vec::new();
        for _ in 0..width {
            level_of.push(lvl);
            members.push(next_id);
            next_id += 1;
        }
        level_members.push(members);
    }
    debug_assert_eq!(next_id as usize, services);

    // Base service times: entry and mids light, lower levels heavier.
    let depth = levels.len();
    let mut base_us = Vec::with_capacity(services);
    for i in 0..services {
        let lvl = level_of[i];
        let (lo, hi) = if lvl == 0 {
            (120.0, 250.0)
        } else if lvl + 1 == depth {
            (300.0, 650.0)
        } else {
            (180.0, 420.0)
        };
        base_us.push(rng.gen_range(lo..hi));
    }

    // Blocking edge pattern guaranteeing every node a blocking path from
    // the entry, plus a sprinkle of async edges for texture/load.
    let mut edges: Vec<Vec<Edge>> = vec![Vec::new(); services];
    for lvl in 0..depth - 1 {
        let parents = &level_members[lvl];
        let children = &level_members[lvl + 1];
        match shape {
            ShapeKind::Chain => {
                edges[parents[0] as usize].push(Edge {
                    callee: MicroserviceId(children[0]),
                    kind: EdgeKind::Blocking,
                    fanout: 1,
                });
            }
            ShapeKind::Fanout => {
                if lvl == 0 {
                    for &c in children {
                        edges[parents[0] as usize].push(Edge {
                            callee: MicroserviceId(c),
                            kind: EdgeKind::Blocking,
                            fanout: 1,
                        });
                    }
                } else {
                    // each parent calls two children; coverage by stride
                    for (pi, &p) in parents.iter().enumerate() {
                        for k in 0..2 {
                            let c = children[(2 * pi + k) % children.len()];
                            if edges[p as usize].iter().any(|e| e.callee.0 == c) {
                                continue;
                            }
                            edges[p as usize].push(Edge {
                                callee: MicroserviceId(c),
                                kind: EdgeKind::Blocking,
                                fanout: 1,
                            });
                        }
                    }
                    // guarantee children beyond the stride get a parent
                    for (ci, &c) in children.iter().enumerate() {
                        let covered = parents
                            .iter()
                            .any(|&p| edges[p as usize].iter().any(|e| e.callee.0 == c));
                        if !covered {
                            let p = parents[ci % parents.len()];
                            edges[p as usize].push(Edge {
                                callee: MicroserviceId(c),
                                kind: EdgeKind::Blocking,
                                fanout: 1,
                            });
                        }
                    }
                }
            }
            ShapeKind::FaninFanout => {
                if lvl == 0 {
                    for &c in children {
                        edges[parents[0] as usize].push(Edge {
                            callee: MicroserviceId(c),
                            kind: EdgeKind::Blocking,
                            fanout: 1,
                        });
                    }
                } else {
                    // fan-in: parents share a small backend pool
                    for (pi, &p) in parents.iter().enumerate() {
                        let c = children[pi % children.len()];
                        edges[p as usize].push(Edge {
                            callee: MicroserviceId(c),
                            kind: EdgeKind::Blocking,
                            fanout: 1,
                        });
                    }
                }
            }
        }
    }
    // Async side edges (targets already blocking-covered).
    if depth >= 2 {
        let n_async = (services / 10).max(1);
        for _ in 0..n_async {
            let from_lvl = rng.gen_range(0..depth - 1);
            let to_lvl = rng.gen_range(from_lvl + 1..depth);
            let p = level_members[from_lvl][rng.gen_range(0..level_members[from_lvl].len())];
            let c = level_members[to_lvl][rng.gen_range(0..level_members[to_lvl].len())];
            if edges[p as usize].iter().any(|e| e.callee.0 == c) {
                continue;
            }
            edges[p as usize].push(Edge {
                callee: MicroserviceId(c),
                kind: EdgeKind::Async,
                fanout: 1,
            });
        }
    }

    // Placement: seeded shuffle, then round-robin across servers.
    let mut order: Vec<u32> = (0..services as u32).collect();
    for i in (1..order.len()).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    let mut placement = vec![ServerId(0); services];
    for (slot, &svc) in order.iter().enumerate() {
        placement[svc as usize] = ServerId((slot % servers) as u32);
    }

    // Demands: everyone needs some CPU; two secondary resources each.
    let mut demand = vec![[0.0; ResourceKind::COUNT]; services];
    for i in 0..services {
        demand[i][ResourceKind::CpuShare.index()] = rng.gen_range(0.06..0.14);
        let a = rng.gen_range(0..SECONDARY_RESOURCES.len());
        let mut b = rng.gen_range(0..SECONDARY_RESOURCES.len());
        if b == a {
            b = (b + 1) % SECONDARY_RESOURCES.len();
        }
        demand[i][SECONDARY_RESOURCES[a].index()] = rng.gen_range(0.08..0.18);
        demand[i][SECONDARY_RESOURCES[b].index()] = rng.gen_range(0.08..0.18);
    }
    // Keep every shared pool comfortably under 1 at baseline.
    for server in 0..servers {
        for r in 0..ResourceKind::COUNT {
            let total: f64 = (0..services)
                .filter(|&i| placement[i].index() == server)
                .map(|i| demand[i][r])
                .sum();
            if total > 0.65 {
                let scale = 0.65 / total;
                for i in (0..services).filter(|&i| placement[i].index() == server) {
                    demand[i][r] *= scale;
                }
            }
        }
    }

    // Invocations per external request, over all edge kinds.
    let mut calls_per_request = vec![0.0f64; services];
    calls_per_request[0] = 1.0;
    for i in 0..services {
        let parent_calls = calls_per_request[i];
        for e in &edges[i] {
            calls_per_request[e.callee.index()] += parent_calls * e.fanout as f64;
        }
    }

    // Worker-hold estimate: own service plus the slowest blocking callee,
    // with headroom for queueing inflation.
    let mut hold_us = vec![0.0f64; services];
    for i in (0..services).rev() {
        // ids ascend with level, so children have larger ids
        let child_max = edges[i]
            .iter()
            .filter(|e| e.kind == EdgeKind::Blocking)
            .map(|e| hold_us[e.callee.index()])
            .fold(0.0, f64::max);
        hold_us[i] = base_us[i] * 1.6 + child_max;
    }
    let mut workers = Vec::with_capacity(services);
    for i in 0..services {
        let lambda = arrival_rate_per_us * calls_per_request[i];
        let needed = (lambda * hold_us[i] / 0.5).ceil() as u32;
        workers.push(needed.max(2));
    }

    let nodes: Vec<ServiceNode> = (0..services)
        .map(|i| ServiceNode {
            id: MicroserviceId(i as u32),
            name: format!("svc{i}"),
            server: placement[i],
            base_service_us: base_us[i],
            workers: workers[i],
            demand: demand[i],
            edges: edges[i].clone(),
        })
        .collect();

    let servers: Vec<Server> = (0..servers)
        .map(|s| Server {
            id: ServerId(s as u32),
            name: format!("server{s}"),
            capacity: [8.0, 1.0, 1.0, 1.0, 1.0, 1.0],
        })
        .collect();

    let graph = ServiceGraph { nodes, servers, entry: MicroserviceId(0) };
    graph.validate()?;
    Ok(graph)
}
