//! Streaming online inference: snapshots in, deduplicated per-service
//! alerts out.

use std::time::Instant;

use crate::predictor::model::Model;
use crate::trace::{featurize, snapshots, MicroserviceId, TraceRecord};

/// A fired output neuron: this service is predicted to initiate a QoS
/// violation within the horizon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Alert {
    pub tick: u64,
    pub service: MicroserviceId,
    pub score: f64,
}

/// Streaming state: one alert per (service, episode), where an episode
/// boundary is `horizon` ticks with the score below threshold. Malformed
/// snapshots are counted and skipped, never fatal.
pub struct InferenceStream {
    fire_threshold: f64,
    episode_active: Vec<bool>,
    last_hot: Vec<Option<u64>>,
    /// Data-quality counter: snapshots that failed featurization.
    pub skipped_snapshots: u64,
    /// Wall time of featurize + forward per snapshot, microseconds.
    pub inference_us: Vec<f64>,
}

impl InferenceStream {
    pub fn new(n_services: usize, fire_threshold: f64) -> Self {
        InferenceStream {
            fire_threshold,
            episode_active: vec![false; n_services],
            last_hot: vec![None; n_services],
            skipped_snapshots: 0,
            inference_us: Vec::new(),
        }
    }

    /// Whether the service is inside an alert episode (scored hot less
    /// than a horizon ago).
    pub fn episode_active(&self, service: MicroserviceId) -> bool {
        self.episode_active[service.index()]
    }

    /// Last tick at which the service scored at or above the threshold.
    pub fn last_hot(&self, service: MicroserviceId) -> Option<u64> {
        self.last_hot[service.index()]
    }

    /// Push one complete per-tick snapshot through the network.
    pub fn push_snapshot(&mut self, model: &Model, snapshot: &[TraceRecord]) -> Vec<Alert> {
        let tick = match snapshot.first() {
            Some(rec) => rec.tick,
            None => return Vec::new(),
        };
        let started = Instant::now();
        let scores = match featurize(snapshot, model.input_metric, &model.norm)
            .and_then(|input| model.forward(&input))
        {
            Ok(scores) => scores,
            Err(_) => {
                self.skipped_snapshots += 1;
                return Vec::new();
            }
        };
        self.inference_us.push(started.elapsed().as_secs_f64() * 1e6);

        let mut alerts = Vec::new();
        for (i, &score) in scores.iter().enumerate() {
            if score >= self.fire_threshold {
                if !self.episode_active[i] {
                    self.episode_active[i] = true;
                    alerts.push(Alert { tick, service: MicroserviceId(i as u32), score });
                }
                self.last_hot[i] = Some(tick);
            } else if self.episode_active[i] {
                if let Some(hot) = self.last_hot[i] {
                    if tick.saturating_sub(hot) >= model.horizon {
                        self.episode_active[i] = false;
                    }
                }
            }
        }
        alerts
    }
}

/// Run a full recorded trace through the network and collect every alert.
pub fn infer_stream(model: &Model, records: &[TraceRecord], fire_threshold: f64) -> (Vec<Alert>, InferenceStream) {
    let mut stream = InferenceStream::new(model.n_services(), fire_threshold);
    let mut alerts = Vec::new();
    for snapshot in snapshots(records) {
        alerts.extend(stream.push_snapshot(model, snapshot));
    }
    (alerts, stream)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictor::model::Hyperparams;

    fn rec(tick: u64, service: u32, depth: u32) -> TraceRecord {
        TraceRecord {
            tick,
            service: MicroserviceId(service),
            queue_depth: depth,
            cpu_util: 0.1,
            latency_p50: 1.0,
            latency_p99: 2.0,
            latency_rate: 0.0,
        }
    }

    fn trace(n_ticks: u64) -> Vec<TraceRecord> {
        let mut records = Vec::new();
        for t in 0..n_ticks {
            records.push(rec(t, 0, 1));
            records.push(rec(t, 1, 2));
        }
        records
    }

    #[test]
    fn suppressed_outputs_never_alert() {
        let mut model = Model::init(2, &Hyperparams::default()).unwrap();
        let last = model.n_layers() - 1;
        model.biases[last].fill(-50.0);
        let (alerts, stream) = infer_stream(&model, &trace(100), 0.5);
        assert!(alerts.is_empty());
        assert_eq!(stream.inference_us.len(), 100);
    }

    #[test]
    fn zero_threshold_alerts_everything_once_per_episode() {
        let model = Model::init(2, &Hyperparams::default()).unwrap();
        let (alerts, _) = infer_stream(&model, &trace(100), 0.0);
        // scores stay hot forever, so exactly one alert per service
        assert_eq!(alerts.len(), 2);
        assert!(alerts.iter().all(|a| a.tick == 0));
    }

    #[test]
    fn episode_resets_after_horizon_of_silence() {
        let mut model = Model::init(1, &Hyperparams::default()).unwrap();
        model.horizon = 5;
        // weight the single input straight through so the score tracks it
        for w in &mut model.weights {
            w.fill(0.0);
        }
        for b in &mut model.biases {
            b.fill(0.0);
        }
        model.weights[0][[0, 0]] = 10.0;
        for l in 1..model.n_layers() {
            model.weights[l][[0, 0]] = 1.0;
        }
        let mut records = Vec::new();
        // hot burst, quiet gap longer than the horizon, hot again
        for t in 0..3u64 {
            records.push(rec(t, 0, 10));
        }
        for t in 3..12u64 {
            let mut r = rec(t, 0, 0);
            r.queue_depth = 0;
            records.push(r);
        }
        for t in 12..15u64 {
            records.push(rec(t, 0, 10));
        }
        let (alerts, _) = infer_stream(&model, &records, 0.9);
        assert_eq!(alerts.len(), 2, "alerts: {alerts:?}");
        assert_eq!(alerts[0].tick, 0);
        assert_eq!(alerts[1].tick, 12);
    }

    #[test]
    fn malformed_snapshot_is_skipped_and_counted() {
        let model = Model::init(2, &Hyperparams::default()).unwrap();
        let mut records = trace(10);
        records.retain(|r| !(r.tick == 4 && r.service == MicroserviceId(1)));
        let (_, stream) = infer_stream(&model, &records, 0.5);
        assert_eq!(stream.skipped_snapshots, 1);
        assert_eq!(stream.inference_us.len(), 9);
    }
}
