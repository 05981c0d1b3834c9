//! Ground-truth culprit annotation: the simulator-oracle replacement for
//! the paper's manual labeling.

use crate::error::{Result, SeerError};
use crate::sim::graph::{ContentionEvent, ServiceGraph};
use crate::trace::{MicroserviceId, ResourceKind, TraceRecord};

#[derive(Debug, Clone, Copy)]
pub struct AnnotateConfig {
    /// Queue must exceed `factor * pre_event_mean` to name the culprit.
    pub factor: f64,
    /// Absolute floor on the threshold, for services idling near zero.
    pub floor: f64,
    /// Ticks before the injection used for the pre-event mean.
    pub pre_window: u64,
}

impl Default for AnnotateConfig {
    fn default() -> Self {
        AnnotateConfig { factor: 3.0, floor: 3.0, pre_window: 50 }
    }
}

/// Identify the culprit of one injected contention episode: the
/// microservice on the contended server whose queue depth first exceeds
/// the threshold after injection start. The injected resource is the
/// annotated resource.
pub fn annotate_culprit(
    records: &[TraceRecord],
    graph: &ServiceGraph,
    injection: &ContentionEvent,
    cfg: &AnnotateConfig,
) -> Result<(MicroserviceId, ResourceKind)> {
    let candidates: Vec<MicroserviceId> =
        graph.services_on(injection.server).map(|n| n.id).collect();
    if candidates.is_empty() {
        return Err(SeerError::Annotation(format!(
            "no services on contended server {}",
            injection.server
        )));
    }

    let pre_start = injection.start_tick.saturating_sub(cfg.pre_window);
    let mut pre_sum = vec![0.0f64; graph.n_services()];
    let mut pre_count = vec![0u64; graph.n_services()];
    let mut first_exceed: Vec<Option<(u64, f64)>> = vec![None; graph.n_services()];

    // First pass: pre-event means.
    for rec in records {
        if rec.tick >= pre_start && rec.tick < injection.start_tick {
            pre_sum[rec.service.index()] += rec.queue_depth as f64;
            pre_count[rec.service.index()] += 1;
        }
    }

    // Second pass: first threshold crossing inside the injection window.
    for rec in records {
        if rec.tick < injection.start_tick || rec.tick >= injection.end_tick {
            continue;
        }
        let i = rec.service.index();
        if !candidates.contains(&rec.service) || first_exceed[i].is_some() {
            continue;
        }
        let mean = if pre_count[i] > 0 { pre_sum[i] / pre_count[i] as f64 } else { 0.0 };
        let threshold = (cfg.factor * mean).max(cfg.floor);
        let depth = rec.queue_depth as f64;
        if depth > threshold {
            first_exceed[i] = Some((rec.tick, depth / threshold));
        }
    }

    let mut best: Option<(u64, f64, MicroserviceId)> = None;
    for &id in &candidates {
        if let Some((tick, ratio)) = first_exceed[id.index()] {
            let better = match best {
                None => true,
                Some((bt, br, _)) => tick < bt || (tick == bt && ratio > br),
            };
            if better {
                best = Some((tick, ratio, id));
            }
        }
    }

    match best {
        Some((_, _, id)) => Ok((id, injection.resource)),
        None => Err(SeerError::Annotation(format!(
            "no queue growth on server {} during injection at tick {}",
            injection.server, injection.start_tick
        ))),
    }
}
