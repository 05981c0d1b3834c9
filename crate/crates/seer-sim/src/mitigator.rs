//! Alert handling: diagnose the contended resource (host counters, or
//! serial contentious probes when counters are unavailable), adjust the
//! offending microservice's allocation, and drive the closed loop that
//! keeps tail latency nominal.

use std::collections::BTreeMap;

use crate::config::{DiagnosisMode, MitigationSpec, ScenarioSpec};
use crate::error::{Result, SeerError};
use crate::predictor::{Alert, InferenceStream, Model};
use crate::sim::{detect_violations, percentile, ContentionEvent, QosEpisode, Simulator};
use crate::trace::{MicroserviceId, ResourceKind, TraceRecord};

/// Identified cause of an upcoming violation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Diagnosis {
    pub service: MicroserviceId,
    pub resource: ResourceKind,
    pub mode: DiagnosisMode,
    /// Ticks spent probing; 0 in counter mode.
    pub probe_cost: u64,
}

/// Counter mode: the most utilized shared pool on the host wins; exact
/// ties resolve in `ResourceKind` declaration order.
pub fn diagnose_counters(stats: &[f64; ResourceKind::COUNT]) -> ResourceKind {
    let mut best = ResourceKind::CpuShare;
    let mut best_u = stats[0];
    for r in ResourceKind::ALL {
        if stats[r.index()] > best_u {
            best = r;
            best_u = stats[r.index()];
        }
    }
    best
}

/// Serial probe schedule: one small antagonist per resource, fixed order,
/// each measured against a detrended trailing baseline of the target's
/// per-tick median latency.
pub struct ProbeSession {
    target: MicroserviceId,
    duration: u64,
    gap: u64,
    measure_lag: u64,
    baseline_ticks: u64,
    first_probe_tick: u64,
    history: Vec<(u64, f64)>,
    final_tick: u64,
}

impl ProbeSession {
    const BASELINE_TICKS: u64 = 20;

    /// Schedule all six probes on the target's server. The session then
    /// consumes per-tick trace records until `ready`.
    pub fn begin(
        sim: &mut Simulator,
        target: MicroserviceId,
        spec: &MitigationSpec,
    ) -> Result<ProbeSession> {
        if target.index() >= sim.graph().n_services() {
            return Err(SeerError::Diagnosis(format!("unknown service {target}")));
        }
        let server = sim.graph().node(target).server;
        let duration = spec.probe_duration_ticks.max(1);
        let gap = spec.probe_gap_ticks.max(1);
        let measure_lag = gap.min(3);
        let first_probe_tick = sim.current_tick() + Self::BASELINE_TICKS + 1;
        let slot = duration + gap;
        for r in ResourceKind::ALL {
            let start_tick = first_probe_tick + r.index() as u64 * slot;
            sim.inject(&ContentionEvent {
                server,
                resource: r,
                intensity: spec.probe_intensity,
                start_tick,
                end_tick: start_tick + duration,
            })?;
        }
        let last_start = first_probe_tick + 5 * slot;
        Ok(ProbeSession {
            target,
            duration,
            gap,
            measure_lag,
            baseline_ticks: Self::BASELINE_TICKS,
            first_probe_tick,
            history: Vec::new(),
            final_tick: last_start + duration + measure_lag,
        })
    }

    /// Feed one tick's records (p50 latency of the target is retained).
    pub fn observe(&mut self, records: &[TraceRecord]) {
        for rec in records {
            if rec.service == self.target {
                self.history.push((rec.tick, rec.latency_p50));
            }
        }
    }

    pub fn ready(&self) -> bool {
        self.history.last().map_or(false, |&(t, _)| t >= self.final_tick)
    }

    fn series(&self, from: u64, to: u64) -> Vec<(u64, f64)> {
        self.history
            .iter()
            .filter(|&&(t, _)| t >= from && t < to)
            .copied()
            .collect()
    }

    /// Per-resource detrended latency delta and its noise floor.
    fn probe_delta(&self, r: ResourceKind) -> Option<(f64, f64)> {
        let slot = self.duration + self.gap;
        let start = self.first_probe_tick + r.index() as u64 * slot;
        let baseline = self.series(start.saturating_sub(self.baseline_ticks), start);
        let window = self.series(start, start + self.duration + self.measure_lag);
        if baseline.len() < 4 || window.is_empty() {
            return None;
        }
        // Least-squares line over the baseline absorbs any overload trend.
        let n = baseline.len() as f64;
        let x0 = baseline[0].0 as f64;
        let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
        for &(t, y) in &baseline {
            let x = t as f64 - x0;
            sx += x;
            sy += y;
            sxx += x * x;
            sxy += x * y;
        }
        let denom = n * sxx - sx * sx;
        let slope = if denom.abs() < 1e-12 { 0.0 } else { (n * sxy - sx * sy) / denom };
        let intercept = (sy - slope * sx) / n;
        let predict = |t: u64| intercept + slope * (t as f64 - x0);

        let resid_var = baseline
            .iter()
            .map(|&(t, y)| (y - predict(t)).powi(2))
            .sum::<f64>()
            / n;
        let noise_floor = 3.0 * resid_var.sqrt();

        let delta = window
            .iter()
            .map(|&(t, y)| y - predict(t))
            .sum::<f64>()
            / window.len() as f64;
        Some((delta, noise_floor))
    }

    /// Largest positive detrended delta wins; every delta at or below its
    /// noise floor is inconclusive.
    pub fn conclude(&self) -> Result<Diagnosis> {
        let mut best: Option<(ResourceKind, f64)> = None;
        for r in ResourceKind::ALL {
            if let Some((delta, floor)) = self.probe_delta(r) {
                if delta > floor && best.map_or(true, |(_, d)| delta > d) {
                    best = Some((r, delta));
                }
            }
        }
        match best {
            Some((resource, _)) => Ok(Diagnosis {
                service: self.target,
                resource,
                mode: DiagnosisMode::Probe,
                probe_cost: 6 * self.duration,
            }),
            None => Err(SeerError::Diagnosis(format!(
                "probes on service {} inconclusive (all deltas at noise floor)",
                self.target
            ))),
        }
    }

    pub fn probe_cost(&self) -> u64 {
        6 * self.duration
    }
}

/// Synchronous probe diagnosis: advances the simulator through the whole
/// probe schedule and returns what it saw along the way.
pub fn diagnose_probe(
    sim: &mut Simulator,
    target: MicroserviceId,
    spec: &MitigationSpec,
) -> Result<(Diagnosis, Vec<TraceRecord>, Vec<(u64, f64)>)> {
    let mut session = ProbeSession::begin(sim, target, spec)?;
    let mut records = Vec::new();
    let mut latencies = Vec::new();
    while !session.ready() {
        let recs = sim.run_one_tick();
        session.observe(&recs);
        records.extend(recs);
        latencies.extend(sim.drain_latencies());
    }
    let diagnosis = session.conclude()?;
    Ok((diagnosis, records, latencies))
}

/// One applied mitigation action, the audit-log entry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AllocationAction {
    pub tick: u64,
    pub service: MicroserviceId,
    pub resource: ResourceKind,
    pub share: f64,
    pub partitioned: bool,
    /// Which escalation step this was (1-based).
    pub step: usize,
}

/// Adjust the diagnosed microservice's allocation: partition (CAT/HTB
/// analog) or share resize (container-resize analog) per policy.
pub fn mitigate(
    sim: &mut Simulator,
    diagnosis: &Diagnosis,
    spec: &MitigationSpec,
    step: usize,
) -> Result<AllocationAction> {
    let service = diagnosis.service;
    let r = diagnosis.resource;
    let node = sim.graph().node(service);
    let server = node.server;
    let demand = node.demand[r.index()];
    let current_share = sim.allocation().share[service.index()][r.index()];
    let already_partitioned = sim.allocation().partitioned[service.index()][r.index()];

    let (share, partitioned) = if spec.use_partitioning[r.index()] {
        let free = 1.0
            - sim
                .allocation()
                .partitioned_total(sim.graph(), server, r, Some(service));
        if free <= 1e-9 {
            return Err(SeerError::Allocation(format!(
                "headroom exhausted: server `{}` fully partitioned on {}",
                sim.graph().servers[server.index()].name,
                r
            )));
        }
        let target = if already_partitioned {
            current_share * spec.step_factor
        } else {
            demand * spec.step_factor
        };
        (target.min(free).min(1.0), true)
    } else {
        if current_share >= 1.0 - 1e-12 {
            return Err(SeerError::Allocation(format!(
                "headroom exhausted: service {service} already at full {r} share"
            )));
        }
        ((current_share * spec.step_factor).min(1.0), false)
    };

    sim.set_allocation(service, r, share, partitioned)?;
    Ok(AllocationAction {
        tick: sim.current_tick(),
        service,
        resource: r,
        share,
        partitioned,
        step,
    })
}

/// Per-episode outcome of the closed loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    /// Anticipated and p99 never violated during the injection.
    Prevented,
    /// Violated but recovered while the contention was still active.
    MitigatedLate,
    /// No timely alert, or the violation ran through the whole episode.
    Missed,
}

impl Outcome {
    pub fn name(self) -> &'static str {
        match self {
            Outcome::Prevented => "prevented",
            Outcome::MitigatedLate => "mitigated-late",
            Outcome::Missed => "missed",
        }
    }
}

#[derive(Debug, Clone)]
pub struct EpisodeReport {
    pub injection: ContentionEvent,
    pub alert_tick: Option<u64>,
    pub alert_service: Option<MicroserviceId>,
    pub onset_tick: Option<u64>,
    pub recovery_tick: Option<u64>,
    pub diagnosis: Option<Diagnosis>,
    pub outcome: Outcome,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TickRow {
    pub tick: u64,
    /// p99 of end-to-end latencies completed this tick (0 when idle).
    pub p99: f64,
    pub alerts: u32,
    pub actions: u32,
}

#[derive(Debug, Clone)]
pub struct ClosedLoopReport {
    pub qos_target: f64,
    pub timeline: Vec<TickRow>,
    pub episodes: Vec<EpisodeReport>,
    pub audit: Vec<AllocationAction>,
    pub alerts: Vec<Alert>,
    pub violations: Vec<QosEpisode>,
    pub dropped_requests: u64,
    pub probe_cost_total: u64,
}

#[derive(Debug, Clone, Copy)]
pub struct ClosedLoopOptions {
    pub mitigate: bool,
    pub diagnosis: DiagnosisMode,
    pub fire_threshold: f64,
}

/// Ticks between escalation steps, long enough for the previous action
/// to show up in the trace.
const ESCALATION_INTERVAL: u64 = 10;

struct MitigationState {
    steps: usize,
    last_action_tick: u64,
    diagnosis: Diagnosis,
}

/// Run the simulator while streaming traces through the model; on each
/// alert diagnose and (optionally) mitigate. Every allocation action is
/// audited; episodes are classified against the injection schedule.
pub fn run_closed_loop(
    sim: &mut Simulator,
    model: &Model,
    injections: &[ContentionEvent],
    scenario: &ScenarioSpec,
    mitigation: &MitigationSpec,
    opts: &ClosedLoopOptions,
) -> Result<ClosedLoopReport> {
    if model.n_services() != sim.graph().n_services() {
        return Err(SeerError::Model(format!(
            "model N={} does not match scenario N={}",
            model.n_services(),
            sim.graph().n_services()
        )));
    }
    for inj in injections {
        sim.inject(inj)?;
    }
    let end_tick = injections
        .iter()
        .map(|i| i.end_tick)
        .max()
        .unwrap_or(scenario.warmup_ticks + 200)
        + mitigation.recovery_margin_ticks.max(scenario.episode_gap_ticks);

    let mut stream = InferenceStream::new(model.n_services(), opts.fire_threshold);
    let mut timeline = Vec::with_capacity(end_tick as usize);
    let mut alerts_all: Vec<Alert> = Vec::new();
    let mut latencies_all: Vec<(u64, f64)> = Vec::new();
    let mut audit: Vec<AllocationAction> = Vec::new();
    let mut probe: Option<ProbeSession> = None;
    let mut probe_cost_total = 0u64;
    let mut mit_state: BTreeMap<MicroserviceId, MitigationState> = BTreeMap::new();

    while sim.current_tick() < end_tick {
        let records = sim.run_one_tick();
        let tick = sim.current_tick() - 1;
        let lats = sim.drain_latencies();
        let p99_tick = {
            let mut this_tick: Vec<f64> = lats.iter().map(|&(_, l)| l).collect();
            if this_tick.is_empty() {
                0.0
            } else {
                this_tick.sort_by(f64::total_cmp);
                percentile(&this_tick, 0.99)
            }
        };
        latencies_all.extend(lats);

        let new_alerts = stream.push_snapshot(model, &records);
        let mut actions_this_tick = 0u32;

        // Advance any probe session with this tick's observations.
        if let Some(session) = probe.as_mut() {
            session.observe(&records);
            if session.ready() {
                let session = probe.take().unwrap();
                probe_cost_total += session.probe_cost();
                let diagnosis = match session.conclude() {
                    Ok(d) => d,
                    // Inconclusive probes fall back to a CPU share resize.
                    Err(_) => Diagnosis {
                        service: session.target,
                        resource: ResourceKind::CpuShare,
                        mode: DiagnosisMode::Probe,
                        probe_cost: session.probe_cost(),
                    },
                };
                if opts.mitigate {
                    if let Ok(action) = mitigate(sim, &diagnosis, mitigation, 1) {
                        audit.push(action);
                        actions_this_tick += 1;
                        mit_state.insert(
                            diagnosis.service,
                            MitigationState { steps: 1, last_action_tick: tick, diagnosis },
                        );
                    }
                }
            }
        }

        for alert in &new_alerts {
            alerts_all.push(*alert);
            if !opts.mitigate && opts.diagnosis == DiagnosisMode::Counters {
                continue;
            }
            match opts.diagnosis {
                DiagnosisMode::Counters => {
                    let server = sim.graph().node(alert.service).server;
                    let resource = diagnose_counters(&sim.host_stats(server));
                    let diagnosis = Diagnosis {
                        service: alert.service,
                        resource,
                        mode: DiagnosisMode::Counters,
                        probe_cost: 0,
                    };
                    if opts.mitigate {
                        if let Ok(action) = mitigate(sim, &diagnosis, mitigation, 1) {
                            audit.push(action);
                            actions_this_tick += 1;
                            mit_state.insert(
                                alert.service,
                                MitigationState { steps: 1, last_action_tick: tick, diagnosis },
                            );
                        }
                    }
                }
                DiagnosisMode::Probe => {
                    // One probe session at a time; later alerts wait for
                    // their own episodes.
                    if probe.is_none() && !mit_state.contains_key(&alert.service) {
                        probe = Some(ProbeSession::begin(sim, alert.service, mitigation)?);
                    }
                }
            }
        }

        // Escalate while the alert condition persists.
        if opts.mitigate {
            let mut escalations: Vec<Diagnosis> = Vec::new();
            for (service, state) in mit_state.iter() {
                if state.steps >= mitigation.max_steps {
                    continue;
                }
                if !stream.episode_active(*service) {
                    continue;
                }
                let hot_now = stream.last_hot(*service) == Some(tick);
                if hot_now && tick >= state.last_action_tick + ESCALATION_INTERVAL {
                    escalations.push(state.diagnosis);
                }
            }
            for diagnosis in escalations {
                // Counter mode re-reads the host; the contended pool may
                // have shifted since the first action.
                let diagnosis = if diagnosis.mode == DiagnosisMode::Counters {
                    let server = sim.graph().node(diagnosis.service).server;
                    Diagnosis {
                        resource: diagnose_counters(&sim.host_stats(server)),
                        ..diagnosis
                    }
                } else {
                    diagnosis
                };
                let state = mit_state.get_mut(&diagnosis.service).unwrap();
                if let Ok(action) = mitigate(sim, &diagnosis, mitigation, state.steps + 1) {
                    audit.push(action);
                    actions_this_tick += 1;
                    state.steps += 1;
                    state.last_action_tick = tick;
                    state.diagnosis = diagnosis;
                }
            }
            // Episode over: allow a fresh diagnosis next time.
            mit_state.retain(|service, _| stream.episode_active(*service));
        }

        timeline.push(TickRow {
            tick,
            p99: p99_tick,
            alerts: new_alerts.len() as u32,
            actions: actions_this_tick,
        });
    }

    let violations = detect_violations(&latencies_all, &scenario.qos);
    let episodes = classify_episodes(injections, &alerts_all, &violations, scenario.horizon, &audit);

    Ok(ClosedLoopReport {
        qos_target: scenario.qos.target_us,
        timeline,
        episodes,
        audit,
        alerts: alerts_all,
        violations,
        dropped_requests: sim.counters().dropped,
        probe_cost_total,
    })
}

fn classify_episodes(
    injections: &[ContentionEvent],
    alerts: &[Alert],
    violations: &[QosEpisode],
    horizon: u64,
    audit: &[AllocationAction],
) -> Vec<EpisodeReport> {
    let mut out = Vec::with_capacity(injections.len());
    for inj in injections {
        let onset = violations
            .iter()
            .find(|v| v.onset_tick >= inj.start_tick && v.onset_tick < inj.end_tick)
            .copied();
        let alert_limit = onset.map(|v| v.onset_tick).unwrap_or(inj.end_tick);
        let window_start = inj.start_tick.saturating_sub(horizon);
        let alert = alerts
            .iter()
            .find(|a| a.tick >= window_start && a.tick < alert_limit)
            .copied();
        let recovery = onset.map(|v| v.end_tick);
        let outcome = match (alert, onset) {
            (None, _) => Outcome::Missed,
            (Some(_), None) => Outcome::Prevented,
            (Some(_), Some(v)) => {
                if v.end_tick < inj.end_tick {
                    Outcome::MitigatedLate
                } else {
                    Outcome::Missed
                }
            }
        };
        let diagnosis_action = alert.and_then(|a| {
            audit
                .iter()
                .find(|act| act.service == a.service && act.tick >= a.tick)
                .copied()
        });
        out.push(EpisodeReport {
            injection: *inj,
            alert_tick: alert.map(|a| a.tick),
            alert_service: alert.map(|a| a.service),
            onset_tick: onset.map(|v| v.onset_tick),
            recovery_tick: recovery,
            diagnosis: diagnosis_action.map(|act| Diagnosis {
                service: act.service,
                resource: act.resource,
                mode: DiagnosisMode::Counters,
                probe_cost: 0,
            }),
            outcome,
        });
    }
    out
}
