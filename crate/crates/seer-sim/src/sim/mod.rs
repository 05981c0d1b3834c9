//! Discrete-event microservice cluster simulator: topology, engine, QoS
//! violation detection, and the ground-truth annotation oracle.

pub mod annotate;
pub mod engine;
pub mod graph;
pub mod qos;

pub use annotate::{annotate_culprit, AnnotateConfig};
pub use engine::{AllocationChange, SimCounters, SimParams, Simulator};
pub use graph::{
    AllocationState, ContentionEvent, Edge, EdgeKind, QosSpec, Server, ServerId, ServiceGraph,
    ServiceNode,
};
pub use qos::{detect_violations, percentile, QosEpisode};
