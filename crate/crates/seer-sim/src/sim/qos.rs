//! End-to-end QoS violation detection over the completed-request latency
//! stream.

use crate::sim::graph::QosSpec;

/// Nearest-rank percentile of an ascending-sorted slice, q in (0, 1].
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let n = sorted.len();
    let rank = (q * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

/// A detected QoS violation episode, onset and end only; culprit
/// annotation happens separately against the injection schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QosEpisode {
    pub onset_tick: u64,
    pub end_tick: u64,
}

/// Scan tumbling `window`-request windows over the latency stream. A
/// violation is declared once `persistence` consecutive windows have
/// p99 above target (onset at the tick of the window that completes the
/// run), and ends once `persistence` consecutive windows are back at or
/// below target. An episode still open at stream end is closed at the
/// final tick + 1.
pub fn detect_violations(latencies: &[(u64, f64)], spec: &QosSpec) -> Vec<QosEpisode> {
    let mut episodes = Vec::new();
    let mut window: Vec<f64> = Vec::with_capacity(spec.window);
    let mut bad_run = 0usize;
    let mut good_run = 0usize;
    let mut onset: Option<u64> = None;
    let mut last_tick = 0u64;

    for &(tick, latency) in latencies {
        last_tick = tick;
        window.push(latency);
        if window.len() < spec.window {
            continue;
        }
        let mut sorted = std::mem::take(&mut window);
        sorted.sort_by(f64::total_cmp);
        let p99 = percentile(&sorted, 0.99);
        sorted.clear();
        window = sorted;

        if p99 > spec.target_us {
            bad_run += 1;
            good_run = 0;
            if onset.is_none() && bad_run >= spec.persistence {
                onset = Some(tick);
            }
        } else {
            good_run += 1;
            bad_run = 0;
            if let Some(start) = onset {
                if good_run >= spec.persistence {
                    episodes.push(QosEpisode { onset_tick: start, end_tick: tick });
                    onset = None;
                }
            }
        }
    }
    if let Some(start) = onset {
        episodes.push(QosEpisode { onset_tick: start, end_tick: last_tick + 1 });
    }
    episodes
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(target: f64, window: usize, persistence: usize) -> QosSpec {
        QosSpec { target_us: target, window, persistence }
    }

    /// Stream of `n` requests with one latency each, one per tick.
    fn flat(n: usize, latency: f64, tick_offset: u64) -> Vec<(u64, f64)> {
        (0..n).map(|i| (tick_offset + i as u64, latency)).collect()
    }

    #[test]
    fn percentile_nearest_rank() {
        let v: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        assert_eq!(percentile(&v, 0.50), 50.0);
        assert_eq!(percentile(&v, 0.99), 99.0);
        assert_eq!(percentile(&v, 1.0), 100.0);
        assert_eq!(percentile(&[7.0], 0.99), 7.0);
    }

    #[test]
    fn all_below_target_is_empty() {
        let stream = flat(500, 100.0, 0);
        assert!(detect_violations(&stream, &spec(200.0, 20, 2)).is_empty());
    }

    #[test]
    fn step_increase_declares_once_at_second_window() {
        // 3 clean windows, then a step lasting 10 windows of 20 requests.
        let mut stream = flat(60, 100.0, 0);
        stream.extend(flat(200, 500.0, 60));
        let episodes = detect_violations(&stream, &spec(200.0, 20, 2));
        assert_eq!(episodes.len(), 1, "exactly one event");
        // Windows after the step end at request indexes 79, 99, ... The
        // persistence rule fires on the second bad window, whose last
        // request lands at tick 99.
        assert_eq!(episodes[0].onset_tick, 99);
        // Stream ends still violating: closed at last tick + 1.
        assert_eq!(episodes[0].end_tick, 260);
    }

    #[test]
    fn alternating_windows_never_persist() {
        let mut stream = Vec::new();
        let mut t = 0;
        for i in 0..10 {
            let lat = if i % 2 == 0 { 500.0 } else { 100.0 };
            stream.extend(flat(20, lat, t));
            t += 20;
        }
        assert!(detect_violations(&stream, &spec(200.0, 20, 2)).is_empty());
    }

    #[test]
    fn episode_ends_after_persistent_recovery() {
        let mut stream = flat(40, 100.0, 0);
        stream.extend(flat(80, 500.0, 40)); // 4 bad windows
        stream.extend(flat(80, 100.0, 120)); // 4 good windows
        let episodes = detect_violations(&stream, &spec(200.0, 20, 2));
        assert_eq!(episodes.len(), 1);
        assert_eq!(episodes[0].onset_tick, 79); // second bad window
        assert_eq!(episodes[0].end_tick, 159); // second good window
    }

    #[test]
    fn fewer_requests_than_window_is_empty() {
        let stream = flat(19, 500.0, 0);
        assert!(detect_violations(&stream, &spec(200.0, 20, 1)).is_empty());
    }
}
