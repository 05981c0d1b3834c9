//! Service dependency graph, server inventory, and allocation state.

use std::fmt;

use crate::error::{Result, SeerError};
use crate::trace::{MicroserviceId, ResourceKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ServerId(pub u32);

impl ServerId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for ServerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// RPC edge semantics: a blocking edge holds the caller's worker until the
/// callee replies; an async edge is fire-and-forget.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeKind {
    Blocking,
    Async,
}

#[derive(Debug, Clone)]
pub struct Edge {
    pub callee: MicroserviceId,
    pub kind: EdgeKind,
    pub fanout: u32,
}

/// One microservice node: placement, service-time parameter, worker pool
/// size, and its per-resource demand (fraction of server capacity it
/// consumes while active).
#[derive(Debug, Clone)]
pub struct ServiceNode {
    pub id: MicroserviceId,
    pub name: String,
    pub server: ServerId,
    pub base_service_us: f64,
    pub workers: u32,
    pub demand: [f64; ResourceKind::COUNT],
    pub edges: Vec<Edge>,
}

#[derive(Debug, Clone)]
pub struct Server {
    pub id: ServerId,
    pub name: String,
    /// Abstract capacity units per resource; CPU capacity is the core count.
    pub capacity: [f64; ResourceKind::COUNT],
}

/// Acyclic microservice dependency graph with a single entry node.
#[derive(Debug, Clone)]
pub struct ServiceGraph {
    pub nodes: Vec<ServiceNode>,
    pub servers: Vec<Server>,
    pub entry: MicroserviceId,
}

impl ServiceGraph {
    pub fn n_services(&self) -> usize {
        self.nodes.len()
    }

    pub fn node(&self, id: MicroserviceId) -> &ServiceNode {
        &self.nodes[id.index()]
    }

    /// Services placed on a given server, in id order.
    pub fn services_on(&self, server: ServerId) -> impl Iterator<Item = &ServiceNode> {
        self.nodes.iter().filter(move |n| n.server == server)
    }

    /// Validate all structural invariants. Called by the simulator builder.
    pub fn validate(&self) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(SeerError::Topology("graph has no nodes".into()));
        }
        if self.servers.is_empty() {
            return Err(SeerError::Topology("no servers defined".into()));
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if node.id.index() != i {
                return Err(SeerError::Topology(format!(
                    "node ids must be dense 0..N-1, node {} has id {}",
                    i, node.id
                )));
            }
            if node.server.index() >= self.servers.len() {
                return Err(SeerError::Topology(format!(
                    "node `{}` placed on unknown server {}",
                    node.name, node.server
                )));
            }
            if node.base_service_us <= 0.0 {
                return Err(SeerError::Topology(format!(
                    "node `{}` has non-positive service time",
                    node.name
                )));
            }
            if node.workers == 0 {
                return Err(SeerError::Topology(format!(
                    "node `{}` has zero workers",
                    node.name
                )));
            }
            for d in node.demand {
                if d < 0.0 {
                    return Err(SeerError::Topology(format!(
                        "node `{}` has negative resource demand",
                        node.name
                    )));
                }
            }
            for e in &node.edges {
                if e.callee.index() >= self.nodes.len() {
                    return Err(SeerError::Topology(format!(
                        "node `{}` calls unknown node {}",
                        node.name, e.callee
                    )));
                }
                if e.fanout == 0 {
                    return Err(SeerError::Topology(format!(
                        "edge {} -> {} has zero fanout",
                        node.name, e.callee
                    )));
                }
            }
        }
        for s in &self.servers {
            for c in s.capacity {
                if c <= 0.0 {
                    return Err(SeerError::Topology(format!(
                        "server `{}` has non-positive capacity",
                        s.name
                    )));
                }
            }
        }
        if self.entry.index() >= self.nodes.len() {
            return Err(SeerError::Topology("entry node out of range".into()));
        }
        self.check_acyclic()?;
        Ok(())
    }

    /// DFS cycle check; reports the first cycle found by node names.
    fn check_acyclic(&self) -> Result<()> {
        const WHITE: u8 = 0;
        const GRAY: u8 = 1;
        const BLACK: u8 = 2;
        let n = self.nodes.len();
        let mut color = vec![WHITE; n];
        // Iterative DFS with an explicit stack so deep chains don't recurse.
        for start in 0..n {
            if color[start] != WHITE {
                continue;
            }
            let mut stack: Vec<(usize, usize)> = vec![(start, 0)];
            color[start] = GRAY;
            while let Some(&mut (node, ref mut edge_idx)) = stack.last_mut() {
                if *edge_idx < self.nodes[node].edges.len() {
                    let next = self.nodes[node].edges[*edge_idx].callee.index();
                    *edge_idx += 1;
                    match color[next] {
                        WHITE => {
                            color[next] = GRAY;
                            stack.push((next, 0));
                        }
                        GRAY => {
                            return Err(SeerError::Topology(format!(
                                "dependency cycle involving `{}` and `{}`",
                                self.nodes[node].name, self.nodes[next].name
                            )));
                        }
                        _ => {}
                    }
                } else {
                    color[node] = BLACK;
                    stack.pop();
                }
            }
        }
        Ok(())
    }
}

/// Per-server, per-microservice, per-resource shares and partition flags.
#[derive(Debug, Clone)]
pub struct AllocationState {
    /// share[service][resource], fraction of the hosting server's capacity.
    pub share: Vec<[f64; ResourceKind::COUNT]>,
    pub partitioned: Vec<[bool; ResourceKind::COUNT]>,
}

impl AllocationState {
    /// Initial allocation: every service's share sized to its demand,
    /// nothing partitioned.
    pub fn from_graph(graph: &ServiceGraph) -> Self {
        let share = graph.nodes.iter().map(|n| n.demand).collect();
        let partitioned = vec![[false; ResourceKind::COUNT]; graph.nodes.len()];
        AllocationState { share, partitioned }
    }

    /// Sum of partitioned shares on `server` for `resource`, excluding
    /// `skip` (used when validating a replacement).
    pub fn partitioned_total(
        &self,
        graph: &ServiceGraph,
        server: ServerId,
        resource: ResourceKind,
        skip: Option<MicroserviceId>,
    ) -> f64 {
        let r = resource.index();
        graph
            .services_on(server)
            .filter(|n| Some(n.id) != skip)
            .filter(|n| self.partitioned[n.id.index()][r])
            .map(|n| self.share[n.id.index()][r])
            .sum()
    }
}

/// Injected antagonist demand on one server resource over a tick interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContentionEvent {
    pub server: ServerId,
    pub resource: ResourceKind,
    /// Demand fraction added to the shared pool, in (0, 2].
    pub intensity: f64,
    pub start_tick: u64,
    pub end_tick: u64,
}

impl ContentionEvent {
    pub fn validate(&self) -> Result<()> {
        if self.start_tick >= self.end_tick {
            return Err(SeerError::Config(format!(
                "contention event start {} must precede end {}",
                self.start_tick, self.end_tick
            )));
        }
        if self.intensity <= 0.0 || self.intensity > 2.0 {
            return Err(SeerError::Config(format!(
                "contention intensity {} outside (0, 2]",
                self.intensity
            )));
        }
        Ok(())
    }
}

/// End-to-end QoS target: rolling p99 over `window`-request windows must
/// stay at or below `target_us`; `persistence` consecutive violating
/// windows declare a violation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QosSpec {
    pub target_us: f64,
    pub window: usize,
    pub persistence: usize,
}

impl QosSpec {
    pub fn validate(&self) -> Result<()> {
        if self.target_us <= 0.0 {
            return Err(SeerError::Config("QoS target must be positive".into()));
        }
        if self.window < 20 {
            return Err(SeerError::Config(format!(
                "QoS window {} below minimum of 20 requests",
                self.window
            )));
        }
        if self.persistence == 0 {
            return Err(SeerError::Config("QoS persistence must be >= 1".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn single_node_graph() -> ServiceGraph {
        ServiceGraph {
            nodes: vec![ServiceNode {
                id: MicroserviceId(0),
                name: "only".into(),
                server: ServerId(0),
                base_service_us: 200.0,
                workers: 1,
                demand: [0.1, 0.0, 0.0, 0.0, 0.0, 0.0],
                edges: vec![],
            }],
            servers: vec![Server {
                id: ServerId(0),
                name: "s0".into(),
                capacity: [1.0; 6],
            }],
            entry: MicroserviceId(0),
        }
    }

    #[test]
    fn valid_single_node_graph() {
        single_node_graph().validate().unwrap();
    }

    #[test]
    fn two_cycle_is_rejected_with_names() {
        let mut g = single_node_graph();
        g.nodes[0].edges.push(Edge {
            callee: MicroserviceId(1),
            kind: EdgeKind::Blocking,
            fanout: 1,
        });
        g.nodes.push(ServiceNode {
            id: MicroserviceId(1),
            name: "back".into(),
            server: ServerId(0),
            base_service_us: 100.0,
            workers: 1,
            demand: [0.0; 6],
            edges: vec![Edge {
                callee: MicroserviceId(0),
                kind: EdgeKind::Blocking,
                fanout: 1,
            }],
        });
        match g.validate() {
            Err(SeerError::Topology(msg)) => {
                assert!(msg.contains("cycle"), "msg: {msg}");
                assert!(msg.contains("only") || msg.contains("back"), "msg: {msg}");
            }
            other => panic!("expected cycle error, got {other:?}"),
        }
    }

    #[test]
    fn unplaced_node_is_rejected() {
        let mut g = single_node_graph();
        g.nodes[0].server = ServerId(9);
        assert!(matches!(g.validate(), Err(SeerError::Topology(_))));
    }

    #[test]
    fn qos_spec_bounds() {
        assert!(QosSpec { target_us: 1000.0, window: 20, persistence: 1 }
            .validate()
            .is_ok());
        assert!(QosSpec { target_us: 1000.0, window: 19, persistence: 1 }
            .validate()
            .is_err());
        assert!(QosSpec { target_us: 0.0, window: 50, persistence: 2 }
            .validate()
            .is_err());
    }
}
