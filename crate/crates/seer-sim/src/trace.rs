//! Core domain types shared by every stage of the pipeline, the on-disk
//! trace/event formats, and the featurization from raw per-tick samples
//! to network inputs and labels.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Result, SeerError};

/// Version gate written as the first line of trace and event files.
pub const TRACE_FILE_VERSION: &str = "# seer-sim trace v1";

/// Dense index of an active microservice, stable for the lifetime of a
/// scenario (no autoscaling).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MicroserviceId(pub u32);

impl MicroserviceId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for MicroserviceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One per-microservice sample per sampling interval.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub tick: u64,
    pub service: MicroserviceId,
    /// Requests waiting or in service at the sampling instant.
    pub queue_depth: u32,
    /// Fraction of the interval the service's workers spent actively serving.
    pub cpu_util: f64,
    /// Per-microservice latency percentiles over the last interval, in
    /// simulated microseconds; 0 if nothing completed.
    pub latency_p50: f64,
    pub latency_p99: f64,
    /// First difference of `latency_p99` versus the previous tick.
    pub latency_rate: f64,
}

/// The four candidate input metrics compared by the experiment harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MetricKind {
    QueueDepth,
    CpuUtil,
    Latency,
    LatencyRate,
}

impl MetricKind {
    pub const ALL: [MetricKind; 4] = [
        MetricKind::QueueDepth,
        MetricKind::CpuUtil,
        MetricKind::Latency,
        MetricKind::LatencyRate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MetricKind::QueueDepth => "queue_depth",
            MetricKind::CpuUtil => "cpu_util",
            MetricKind::Latency => "latency",
            MetricKind::LatencyRate => "latency_rate",
        }
    }

    pub fn parse(s: &str) -> Result<MetricKind> {
        match s {
            "queue_depth" => Ok(MetricKind::QueueDepth),
            "cpu_util" => Ok(MetricKind::CpuUtil),
            "latency" => Ok(MetricKind::Latency),
            "latency_rate" => Ok(MetricKind::LatencyRate),
            other => Err(SeerError::Config(format!("unknown metric kind `{other}`"))),
        }
    }

    fn select(self, rec: &TraceRecord) -> f64 {
        match self {
            MetricKind::QueueDepth => rec.queue_depth as f64,
            MetricKind::CpuUtil => rec.cpu_util,
            MetricKind::Latency => rec.latency_p99,
            MetricKind::LatencyRate => rec.latency_rate,
        }
    }
}

/// Server resources that an antagonist can contend on and an allocation
/// can shield. Declaration order is the tie-break order for diagnosis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ResourceKind {
    CpuShare,
    MemCapacity,
    MemBandwidth,
    NetBandwidth,
    IoBandwidth,
    LlcCapacity,
}

impl ResourceKind {
    pub const ALL: [ResourceKind; 6] = [
        ResourceKind::CpuShare,
        ResourceKind::MemCapacity,
        ResourceKind::MemBandwidth,
        ResourceKind::NetBandwidth,
        ResourceKind::IoBandwidth,
        ResourceKind::LlcCapacity,
    ];

    pub const COUNT: usize = 6;

    pub fn index(self) -> usize {
        match self {
            ResourceKind::CpuShare => 0,
            ResourceKind::MemCapacity => 1,
            ResourceKind::MemBandwidth => 2,
            ResourceKind::NetBandwidth => 3,
            ResourceKind::IoBandwidth => 4,
            ResourceKind::LlcCapacity => 5,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ResourceKind::CpuShare => "cpu_share",
            ResourceKind::MemCapacity => "mem_capacity",
            ResourceKind::MemBandwidth => "mem_bandwidth",
            ResourceKind::NetBandwidth => "net_bandwidth",
            ResourceKind::IoBandwidth => "io_bandwidth",
            ResourceKind::LlcCapacity => "llc_capacity",
        }
    }

    pub fn parse(s: &str) -> Result<ResourceKind> {
        match s {
            "cpu_share" | "cpu" => Ok(ResourceKind::CpuShare),
            "mem_capacity" | "mem" => Ok(ResourceKind::MemCapacity),
            "mem_bandwidth" | "membw" => Ok(ResourceKind::MemBandwidth),
            "net_bandwidth" | "netbw" => Ok(ResourceKind::NetBandwidth),
            "io_bandwidth" | "iobw" => Ok(ResourceKind::IoBandwidth),
            "llc_capacity" | "llc" => Ok(ResourceKind::LlcCapacity),
            other => Err(SeerError::Config(format!("unknown resource `{other}`"))),
        }
    }
}

impl fmt::Display for ResourceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A ground-truth or predicted QoS violation episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ViolationEvent {
    pub onset_tick: u64,
    pub end_tick: u64,
    pub culprit: MicroserviceId,
    pub resource: ResourceKind,
}

/// One training sample: per-microservice features and per-microservice
/// "initiates a violation within the horizon" labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub tick: u64,
    pub input: Vec<f64>,
    pub label: Vec<bool>,
}

/// Per-feature z-score statistics, computed from the training split only.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizationStats {
    pub kind: MetricKind,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormalizationStats {
    /// Compute per-service mean/std of the selected metric over a trace.
    pub fn from_records(records: &[TraceRecord], n_services: usize, kind: MetricKind) -> Self {
        let mut sum = vec![0.0; n_services];
        let mut sum_sq = vec![0.0; n_services];
        let mut count = vec![0u64; n_services];
        for rec in records {
            let i = rec.service.index();
            let v = kind.select(rec);
            sum[i] += v;
            sum_sq[i] += v * v;
            count[i] += 1;
        }
        let mut mean = vec![0.0; n_services];
        let mut std = vec![0.0; n_services];
        for i in 0..n_services {
            if count[i] > 0 {
                let n = count[i] as f64;
                mean[i] = sum[i] / n;
                let var = (sum_sq[i] / n - mean[i] * mean[i]).max(0.0);
                std[i] = var.sqrt();
            }
        }
        NormalizationStats { kind, mean, std }
    }

    pub fn n_services(&self) -> usize {
        self.mean.len()
    }
}

/// Featurize one tick's snapshot: feature `i` is the selected metric of
/// microservice `i`, z-scored by the training statistics. Services whose
/// training std is zero emit 0.
pub fn featurize(
    records_at_tick: &[TraceRecord],
    kind: MetricKind,
    norm: &NormalizationStats,
) -> Result<Vec<f64>> {
    let n = norm.n_services();
    let mut seen = vec![false; n];
    let mut out = vec![0.0; n];
    for rec in records_at_tick {
        let i = rec.service.index();
        if i >= n {
            return Err(SeerError::MalformedTrace(format!(
                "tick {}: service {} out of range (N={})",
                rec.tick, rec.service, n
            )));
        }
        if seen[i] {
            return Err(SeerError::MalformedTrace(format!(
                "tick {}: duplicate record for service {}",
                rec.tick, rec.service
            )));
        }
        seen[i] = true;
        out[i] = if norm.std[i] == 0.0 {
            0.0
        } else {
            (kind.select(rec) - norm.mean[i]) / norm.std[i]
        };
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        let tick = records_at_tick.first().map(|r| r.tick).unwrap_or(0);
        return Err(SeerError::MalformedTrace(format!(
            "tick {tick}: missing record for service {missing}"
        )));
    }
    Ok(out)
}

/// Label vector for one tick: entry `k` is true iff some event with
/// culprit `k` has its onset in the half-open window `(tick, tick+horizon]`.
pub fn label_window(
    events: &[ViolationEvent],
    tick: u64,
    horizon: u64,
    n_services: usize,
) -> Vec<bool> {
    debug_assert!(horizon >= 1);
    let mut label = vec![false; n_services];
    for ev in events {
        if ev.onset_tick > tick && ev.onset_tick <= tick + horizon {
            if ev.culprit.index() < n_services {
                label[ev.culprit.index()] = true;
            }
        }
    }
    label
}

/// Group a dense trace into per-tick snapshots and attach labels.
/// The records must be sorted by tick (as written by the simulator).
pub fn build_dataset(
    records: &[TraceRecord],
    events: &[ViolationEvent],
    kind: MetricKind,
    norm: &NormalizationStats,
    horizon: u64,
) -> Result<Vec<LabeledSample>> {
    let n = norm.n_services();
    let mut samples = Vec::new();
    for snap in snapshots(records) {
        let tick = snap[0].tick;
        let input = featurize(snap, kind, norm)?;
        let label = label_window(events, tick, horizon, n);
        samples.push(LabeledSample { tick, input, label });
    }
    Ok(samples)
}

/// Iterate over maximal runs of records sharing one tick.
pub fn snapshots(records: &[TraceRecord]) -> impl Iterator<Item = &[TraceRecord]> {
    SnapshotIter { records }
}

struct SnapshotIter<'a> {
    records: &'a [TraceRecord],
}

impl<'a> Iterator for SnapshotIter<'a> {
    type Item = &'a [TraceRecord];

    fn next(&mut self) -> Option<&'a [TraceRecord]> {
        let first = self.records.first()?;
        let tick = first.tick;
        let end = self
            .records
            .iter()
            .position(|r| r.tick != tick)
            .unwrap_or(self.records.len());
        let (head, rest) = self.records.split_at(end);
        self.records = rest;
        Some(head)
    }
}

// ---------------------------------------------------------------------------
// File formats
// ---------------------------------------------------------------------------

const TRACE_HEADER: &str = "tick,service,queue_depth,cpu_util,lat_p50,lat_p99,lat_rate";
const EVENTS_HEADER: &str = "onset_tick,end_tick,culprit,resource";

pub fn write_trace(path: &Path, records: &[TraceRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| SeerError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut emit = || -> std::io::Result<()> {
        writeln!(w, "{TRACE_FILE_VERSION}")?;
        writeln!(w, "{TRACE_HEADER}")?;
        for r in records {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                r.tick, r.service, r.queue_depth, r.cpu_util, r.latency_p50, r.latency_p99, r.latency_rate
            )?;
        }
        w.flush()
    };
    emit().map_err(|e| SeerError::io(path, e))
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRecord>> {
    let file = File::open(path).map_err(|e| SeerError::io(path, e))?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| SeerError::io(path, e))?;
        let lineno = idx + 1;
        let err = |msg: String| SeerError::TraceParse {
            path: path.to_path_buf(),
            line: lineno,
            msg,
        };
        if lineno == 1 {
            if line != TRACE_FILE_VERSION {
                return Err(err(format!("expected `{TRACE_FILE_VERSION}` version line")));
            }
            continue;
        }
        if lineno == 2 {
            if line != TRACE_HEADER {
                return Err(err("unexpected trace header".into()));
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(err(format!("expected 7 fields, got {}", fields.len())));
        }
        let parse_u64 = |s: &str, name: &str| {
            s.parse::<u64>()
                .map_err(|_| err(format!("field {name}: invalid integer `{s}`")))
        };
        let parse_f64 = |s: &str, name: &str| {
            s.parse::<f64>()
                .map_err(|_| err(format!("field {name}: invalid real `{s}`")))
        };
        let tick = parse_u64(fields[0], "tick")?;
        let service = parse_u64(fields[1], "service")? as u32;
        let queue_depth = fields[2]
            .parse::<u32>()
            .map_err(|_| err(format!("field queue_depth: invalid integer `{}`", fields[2])))?;
        let cpu_util = parse_f64(fields[3], "cpu_util")?;
        if !(0.0..=1.0).contains(&cpu_util) {
            return Err(err(format!(
                "field cpu_util: value {cpu_util} outside [0, 1]"
            )));
        }
        let latency_p50 = parse_f64(fields[4], "lat_p50")?;
        let latency_p99 = parse_f64(fields[5], "lat_p99")?;
        if latency_p50 > latency_p99 {
            return Err(err(format!(
                "field lat_p50: {latency_p50} exceeds lat_p99 {latency_p99}"
            )));
        }
        let latency_rate = parse_f64(fields[6], "lat_rate")?;
        records.push(TraceRecord {
            tick,
            service: MicroserviceId(service),
            queue_depth,
            cpu_util,
            latency_p50,
            latency_p99,
            latency_rate,
        });
    }
    Ok(records)
}

pub fn write_events(path: &Path, events: &[ViolationEvent]) -> Result<()> {
    let file = File::create(path).map_err(|e| SeerError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut emit = || -> std::io::Result<()> {
        writeln!(w, "{TRACE_FILE_VERSION}")?;
        writeln!(w, "{EVENTS_HEADER}")?;
        for ev in events {
            writeln!(
                w,
                "{},{},{},{}",
                ev.onset_tick, ev.end_tick, ev.culprit, ev.resource
            )?;
        }
        w.flush()
    };
    emit().map_err(|e| SeerError::io(path, e))
}

pub fn read_events(path: &Path) -> Result<Vec<ViolationEvent>> {
    let file = File::open(path).map_err(|e| SeerError::io(path, e))?;
    let reader = BufReader::new(file);
    let mut events = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| SeerError::io(path, e))?;
        let lineno = idx + 1;
        let err = |msg: String| SeerError::TraceParse {
            path: path.to_path_buf(),
            line: lineno,
            msg,
        };
        if lineno == 1 {
            if line != TRACE_FILE_VERSION {
                return Err(err(format!("expected `{TRACE_FILE_VERSION}` version line")));
            }
            continue;
        }
        if lineno == 2 {
            if line != EVENTS_HEADER {
                return Err(err("unexpected events header".into()));
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(err(format!("expected 4 fields, got {}", fields.len())));
        }
        let onset_tick = fields[0]
            .parse::<u64>()
            .map_err(|_| err(format!("field onset_tick: invalid integer `{}`", fields[0])))?;
        let end_tick = fields[1]
            .parse::<u64>()
            .map_err(|_| err(format!("field end_tick: invalid integer `{}`", fields[1])))?;
        let culprit = fields[2]
            .parse::<u32>()
            .map_err(|_| err(format!("field culprit: invalid integer `{}`", fields[2])))?;
        let resource = ResourceKind::parse(fields[3])
            .map_err(|_| err(format!("field resource: unknown resource `{}`", fields[3])))?;
        if onset_tick >= end_tick {
            return Err(err(format!(
                "onset_tick {onset_tick} must precede end_tick {end_tick}"
            )));
        }
        events.push(ViolationEvent {
            onset_tick,
            end_tick,
            culprit: MicroserviceId(culprit),
            resource,
        });
    }
    Ok(events)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(tick: u64, service: u32, depth: u32) -> TraceRecord {
        TraceRecord {
            tick,
            service: MicroserviceId(service),
            queue_depth: depth,
            cpu_util: 0.5,
            latency_p50: 100.0,
            latency_p99: 200.0,
            latency_rate: 0.0,
        }
    }

    #[test]
    fn featurize_zero_vector_at_training_mean() {
        let norm = NormalizationStats {
            kind: MetricKind::QueueDepth,
            mean: vec![5.0; 3],
            std: vec![2.0; 3],
        };
        let snap = vec![rec(0, 0, 5), rec(0, 1, 5), rec(0, 2, 5)];
        assert_eq!(
            featurize(&snap, MetricKind::QueueDepth, &norm).unwrap(),
            vec![0.0, 0.0, 0.0]
        );
    }

    #[test]
    fn featurize_hand_evaluated_zscores() {
        // depths (0, 5, 12) with mean 5, std 5 -> (-1.0, 0.0, 1.4)
        let norm = NormalizationStats {
            kind: MetricKind::QueueDepth,
            mean: vec![5.0; 3],
            std: vec![5.0; 3],
        };
        let snap = vec![rec(7, 0, 0), rec(7, 1, 5), rec(7, 2, 12)];
        let out = featurize(&snap, MetricKind::QueueDepth, &norm).unwrap();
        assert_eq!(out, vec![-1.0, 0.0, 1.4]);
    }

    #[test]
    fn featurize_degenerate_std_emits_zero() {
        let norm = NormalizationStats {
            kind: MetricKind::CpuUtil,
            mean: vec![0.5, 0.5],
            std: vec![0.0, 0.1],
        };
        let snap = vec![rec(0, 0, 1), rec(0, 1, 1)];
        let out = featurize(&snap, MetricKind::CpuUtil, &norm).unwrap();
        assert_eq!(out[0], 0.0);
        assert!((out[1] - 0.0).abs() < 1e-12);
    }

    #[test]
    fn featurize_rejects_missing_and_duplicate_services() {
        let norm = NormalizationStats {
            kind: MetricKind::QueueDepth,
            mean: vec![0.0; 2],
            std: vec![1.0; 2],
        };
        let missing = vec![rec(0, 0, 1)];
        assert!(matches!(
            featurize(&missing, MetricKind::QueueDepth, &norm),
            Err(SeerError::MalformedTrace(_))
        ));
        let dup = vec![rec(0, 0, 1), rec(0, 0, 2)];
        assert!(matches!(
            featurize(&dup, MetricKind::QueueDepth, &norm),
            Err(SeerError::MalformedTrace(_))
        ));
    }

    #[test]
    fn featurize_is_pure() {
        let norm = NormalizationStats {
            kind: MetricKind::Latency,
            mean: vec![150.0; 2],
            std: vec![30.0; 2],
        };
        let snap = vec![rec(3, 0, 1), rec(3, 1, 9)];
        let a = featurize(&snap, MetricKind::Latency, &norm).unwrap();
        let b = featurize(&snap, MetricKind::Latency, &norm).unwrap();
        assert_eq!(a, b);
    }

    fn ev(onset: u64, end: u64, culprit: u32) -> ViolationEvent {
        ViolationEvent {
            onset_tick: onset,
            end_tick: end,
            culprit: MicroserviceId(culprit),
            resource: ResourceKind::LlcCapacity,
        }
    }

    #[test]
    fn label_window_no_events() {
        assert_eq!(label_window(&[], 10, 50, 3), vec![false; 3]);
    }

    #[test]
    fn label_window_marks_culprit_within_horizon() {
        let events = vec![ev(11, 20, 2)];
        let label = label_window(&events, 10, 50, 4);
        assert_eq!(label, vec![false, false, true, false]);
    }

    #[test]
    fn label_window_onset_at_tick_is_not_upcoming() {
        // Half-open window (tick, tick+horizon]: onset exactly at `tick`
        // is already occurring, not upcoming.
        let events = vec![ev(10, 20, 1)];
        assert_eq!(label_window(&events, 10, 50, 3), vec![false; 3]);
        // Boundary at the far end is inclusive.
        let events = vec![ev(60, 70, 1)];
        assert_eq!(label_window(&events, 10, 50, 3), vec![false, true, false]);
        assert_eq!(label_window(&events, 9, 50, 3), vec![false; 3]);
    }

    #[test]
    fn label_window_monotone_in_horizon() {
        let events = vec![ev(30, 40, 0), ev(90, 95, 2)];
        for tick in 0..100 {
            let mut prev = vec![false; 3];
            for h in 1..120 {
                let cur = label_window(&events, tick, h, 3);
                for i in 0..3 {
                    assert!(!prev[i] || cur[i], "label turned false as horizon grew");
                }
                prev = cur;
            }
        }
    }

    #[test]
    fn trace_roundtrip_identity() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.trace");
        let records = vec![
            TraceRecord {
                tick: 0,
                service: MicroserviceId(0),
                queue_depth: 3,
                cpu_util: 0.421875,
                latency_p50: 812.5,
                latency_p99: 2310.75,
                latency_rate: 0.0,
            },
            TraceRecord {
                tick: 1,
                service: MicroserviceId(0),
                queue_depth: 0,
                cpu_util: 0.0,
                latency_p50: 0.0,
                latency_p99: 0.0,
                latency_rate: -2310.75,
            },
        ];
        write_trace(&path, &records).unwrap();
        assert_eq!(read_trace(&path).unwrap(), records);
    }

    #[test]
    fn empty_trace_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.trace");
        write_trace(&path, &[]).unwrap();
        assert_eq!(read_trace(&path).unwrap(), Vec::new());
    }

    #[test]
    fn trace_parse_error_names_field_and_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.trace");
        let body = format!("{TRACE_FILE_VERSION}\n{TRACE_HEADER}\n0,0,3,1.5,1,2,0\n");
        std::fs::write(&path, body).unwrap();
        match read_trace(&path) {
            Err(SeerError::TraceParse { line, msg, .. }) => {
                assert_eq!(line, 3);
                assert!(msg.contains("cpu_util"), "msg: {msg}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn trace_rejects_wrong_version() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.trace");
        std::fs::write(&path, "# seer-sim trace v9\n").unwrap();
        match read_trace(&path) {
            Err(SeerError::TraceParse { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected version error, got {other:?}"),
        }
    }

    #[test]
    fn events_roundtrip_identity() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.events");
        let events = vec![
            ViolationEvent {
                onset_tick: 120,
                end_tick: 250,
                culprit: MicroserviceId(7),
                resource: ResourceKind::LlcCapacity,
            },
            ViolationEvent {
                onset_tick: 500,
                end_tick: 610,
                culprit: MicroserviceId(2),
                resource: ResourceKind::NetBandwidth,
            },
        ];
        write_events(&path, &events).unwrap();
        assert_eq!(read_events(&path).unwrap(), events);
    }

    #[test]
    fn snapshot_grouping_is_dense_by_tick() {
        let records = vec![rec(0, 0, 1), rec(0, 1, 2), rec(1, 0, 3), rec(1, 1, 4)];
        let snaps: Vec<_> = snapshots(&records).collect();
        assert_eq!(snaps.len(), 2);
        assert_eq!(snaps[0].len(), 2);
        assert_eq!(snaps[1][0].tick, 1);
    }
}
