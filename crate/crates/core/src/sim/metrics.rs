use super::events::Event;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

/// Mean, median and sample standard deviation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub std: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self::default();
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
        };
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self {
            count: n,
            mean,
            median,
            std,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub customers: usize,
    pub served: usize,
    pub censored: usize,
    /// Minutes from arrival to pickup, served customers only.
    pub wait: Summary,
    /// As `wait`, counting customers still queued at the horizon with their
    /// wait so far.
    pub wait_with_censored: Summary,
    /// Customers waiting, sampled at every epoch.
    pub queue: Summary,
    /// Kilometres per rebalancing action.
    pub rebalance_distance: Summary,
    /// Kilometres issued per epoch.
    pub rebalance_per_epoch: Summary,
    pub rebalance_count: usize,
    pub rebalance_km: f64,
    pub relaxed_epochs: usize,
    pub failed_epochs: usize,
    pub skipped_actions: usize,
    /// Total minutes of waiting, censored waits included.
    pub total_delay: f64,
    pub total_cost: f64,
}

fn minutes(seconds: u64) -> f64 {
    seconds as f64 / 60.0
}

/// Waits, queues and rebalancing statistics from a complete log. The total
/// cost is the accumulated delay plus `theta` per rebalanced kilometre.
pub fn compute_metrics(log: &[Event], theta: f64) -> Metrics {
    let mut m = Metrics::default();
    let mut waits = Vec::new();
    let mut censored = Vec::new();
    let mut queues = Vec::new();
    let mut legs = Vec::new();
    let mut per_epoch: Vec<f64> = Vec::new();
    for e in log {
        match e {
            Event::Arrival { .. } => m.customers += 1,
            Event::Assign { wait, .. } => waits.push(minutes(*wait)),
            Event::Censored { wait, .. } => censored.push(minutes(*wait)),
            Event::Epoch {
                queue,
                relaxed,
                failed,
                ..
            } => {
                queues.push(*queue as f64);
                per_epoch.push(0.0);
                m.relaxed_epochs += usize::from(*relaxed);
                m.failed_epochs += usize::from(*failed);
            }
            Event::Rebalance { km, .. } => {
                legs.push(*km);
                if let Some(last) = per_epoch.last_mut() {
                    *last += km;
                }
            }
            Event::Skipped { .. } => m.skipped_actions += 1,
            _ => {}
        }
    }
    m.served = waits.len();
    m.censored = censored.len();
    m.wait = Summary::of(&waits);
    let all: Vec<f64> = waits.iter().chain(&censored).copied().collect();
    m.wait_with_censored = Summary::of(&all);
    m.queue = Summary::of(&queues);
    m.rebalance_distance = Summary::of(&legs);
    m.rebalance_per_epoch = Summary::of(&per_epoch);
    m.rebalance_count = legs.len();
    m.rebalance_km = legs.iter().fold(0.0, |a, b| a + b);
    m.total_delay = all.iter().fold(0.0, |a, b| a + b);
    m.total_cost = m.total_delay + theta * m.rebalance_km;
    m
}

/// Counts of `values` in unit-width bins `[k, k+1)`, the last bin open ended.
pub fn histogram(values: &[f64], bins: usize) -> Vec<usize> {
    let mut h = vec![0; bins.max(1)];
    let last = h.len() - 1;
    for &v in values {
        let k = if v.is_finite() && v > 0.0 {
            v.floor() as usize
        } else {
            0
        };
        h[k.min(last)] += 1;
    }
    h
}

/// Tab-separated histograms of waits (minutes), queue lengths and
/// kilometres rebalanced per epoch.
pub fn histogram_tables(log: &[Event], bins: usize) -> String {
    let mut waits = Vec::new();
    let mut queues = Vec::new();
    let mut per_epoch: Vec<f64> = Vec::new();
    for e in log {
        match e {
            Event::Assign { wait, .. } => waits.push(minutes(*wait)),
            Event::Epoch { queue, .. } => {
                queues.push(*queue as f64);
                per_epoch.push(0.0);
            }
            Event::Rebalance { km, .. } => {
                if let Some(last) = per_epoch.last_mut() {
                    *last += km;
                }
            }
            _ => {}
        }
    }
    let mut out = String::new();
    for (name, values) in [
        ("wait_min", &waits),
        ("queue", &queues),
        ("rebalance_km", &per_epoch),
    ] {
        writeln!(out, "# {name}\nbin\tcount").unwrap();
        for (k, c) in histogram(values, bins).iter().enumerate() {
            writeln!(out, "{k}\t{c}").unwrap();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_of_skewed_waits() {
        let s = Summary::of(&[2.0, 2.0, 26.0]);
        assert_eq!((s.mean, s.median), (10.0, 2.0));
        assert!((s.std - 192f64.sqrt()).abs() < 1e-12);
        assert!((s.std - 13.856).abs() < 1e-3);
    }

    #[test]
    fn empty_log_gives_zero_metrics() {
        assert_eq!(compute_metrics(&[], 0.02), Metrics::default());
    }

    #[test]
    fn total_cost_is_delay_plus_weighted_distance() {
        let log = vec![
            Event::Epoch {
                t: 0,
                queue: 0,
                idle: 1,
                actions: 1,
                relaxed: false,
                failed: false,
            },
            Event::Rebalance {
                t: 0,
                vehicle: 0,
                route: vec![1, 2],
                km: 500.0,
                charge: None,
            },
            Event::Arrival {
                t: 10,
                customer: 0,
                zone: 2,
                level: 1,
            },
            Event::Assign {
                t: 6010,
                customer: 0,
                vehicle: 0,
                wait: 6000,
                access: 0,
            },
        ];
        let m = compute_metrics(&log, 0.02);
        assert_eq!(m.total_delay, 100.0);
        assert!((m.total_cost - 110.0).abs() < 1e-12);
        assert_eq!((m.rebalance_count, m.served), (1, 1));
    }

    #[test]
    fn histogram_clamps_the_tail() {
        assert_eq!(histogram(&[0.0, 0.5, 1.2, 7.0, 99.0], 3), vec![2, 1, 2]);
    }
}
