//! Monte-Carlo aggregation: worst-case estimation error, worst-case and mean
//! tracking deviation per tick across a batch of seeded runs.

use crate::certify::Certificates;
use crate::harness::baseline::{run_baseline, BaselineKind, BaselineRun};
use crate::harness::episode::{run_episode, EpisodeOptions, EpisodeTrace};
use crate::harness::scenario::Scenario;
use rayon::prelude::*;

/// Per-tick batch metrics. Runs end at different ticks; shorter runs are
/// padded with their final value so every series spans the same horizon.
#[derive(Debug, Clone)]
pub struct Metrics {
    pub t: Vec<usize>,
    /// Worst estimation error over runs and active sensors.
    pub mu: Vec<f64>,
    /// Worst tracking deviation over runs.
    pub tau: Vec<f64>,
    /// Mean tracking deviation over runs.
    pub epsilon: Vec<f64>,
}

/// Per-run error series extracted from a trace.
fn error_series(trace: &EpisodeTrace) -> BaselineRun {
    let mut est_err = Vec::with_capacity(trace.records.len());
    let mut track_err = Vec::with_capacity(trace.records.len());
    for rec in &trace.records {
        let mut worst = 0.0f64;
        for (id, est) in &rec.estimates {
            if rec.active.contains(id) {
                worst = worst.max((est - &rec.x).norm());
            }
        }
        est_err.push(worst);
        track_err.push((&rec.x - &rec.r).norm());
    }
    BaselineRun { est_err, track_err }
}

fn aggregate(series: &[BaselineRun]) -> Metrics {
    let horizon = series.iter().map(|s| s.track_err.len()).max().unwrap_or(0);
    let runs = series.len() as f64;
    let mut mu = Vec::with_capacity(horizon);
    let mut tau = Vec::with_capacity(horizon);
    let mut epsilon = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let mut worst_est = 0.0f64;
        let mut worst_track = 0.0f64;
        let mut sum_track = 0.0f64;
        for s in series {
            let e = padded(&s.est_err, t);
            let d = padded(&s.track_err, t);
            worst_est = worst_est.max(e);
            worst_track = worst_track.max(d);
            sum_track += d;
        }
        mu.push(worst_est);
        tau.push(worst_track);
        epsilon.push(sum_track / runs);
    }
    Metrics { t: (1..=horizon).collect(), mu, tau, epsilon }
}

fn padded(series: &[f64], idx: usize) -> f64 {
    if series.is_empty() {
        0.0
    } else {
        series[idx.min(series.len() - 1)]
    }
}

/// Runs `n_runs` seeded episodes in parallel and aggregates their metrics.
/// Seeds are `seed_base`, `seed_base + 1`, ...; results are ordered by seed
/// regardless of scheduling.
pub fn monte_carlo(
    scenario: &Scenario,
    certs: &Certificates,
    n_runs: usize,
    seed_base: u64,
    opts: &EpisodeOptions,
) -> (Metrics, Vec<EpisodeTrace>) {
    assert!(n_runs >= 1, "need at least one run");
    let traces: Vec<EpisodeTrace> = (0..n_runs as u64)
        .into_par_iter()
        .map(|i| run_episode(scenario, certs, seed_base + i, opts))
        .collect();
    let series: Vec<BaselineRun> = traces.iter().map(error_series).collect();
    (aggregate(&series), traces)
}

/// Monte-Carlo batch for a baseline controller over a fixed horizon.
pub fn monte_carlo_baseline(
    scenario: &Scenario,
    kind: BaselineKind,
    n_runs: usize,
    seed_base: u64,
    horizon: usize,
) -> Metrics {
    assert!(n_runs >= 1, "need at least one run");
    let series: Vec<BaselineRun> = (0..n_runs as u64)
        .into_par_iter()
        .map(|i| run_baseline(scenario, kind, seed_base + i, horizon))
        .collect();
    aggregate(&series)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn padding_repeats_the_final_value() {
        let s = [1.0, 2.0, 3.0];
        assert_eq!(padded(&s, 0), 1.0);
        assert_eq!(padded(&s, 2), 3.0);
        assert_eq!(padded(&s, 99), 3.0);
    }

    #[test]
    fn aggregate_orders_mean_below_max() {
        let series = vec![
            BaselineRun { est_err: vec![1.0, 2.0], track_err: vec![4.0, 1.0] },
            BaselineRun { est_err: vec![3.0], track_err: vec![2.0] },
        ];
        let m = aggregate(&series);
        assert_eq!(m.t, vec![1, 2]);
        assert_eq!(m.mu, vec![3.0, 3.0]);
        assert_eq!(m.tau, vec![4.0, 2.0]);
        assert_eq!(m.epsilon, vec![3.0, 1.5]);
        for (tau, eps) in m.tau.iter().zip(&m.epsilon) {
            assert!(eps <= tau);
        }
    }
}
