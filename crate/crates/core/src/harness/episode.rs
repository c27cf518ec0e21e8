//! Closed-loop episode execution: plant, sensors, estimators, bound
//! sequences and the event-triggered controller composed tick by tick.

use crate::certify::{trigger_bounds, BoundState, Certificates};
use crate::controller::{
    control_input, dwell_update, event_value, make_switch_message, ControllerState, DwellMode,
};
use crate::estimator::{estimator_tick, handle_switch_message, EstimatorState};
use crate::harness::scenario::Scenario;
use crate::matops::{Matrix, Vector};
use crate::plant::{sample_bounded, SensorSpec};
use rand_chacha::ChaCha8Rng;
use rand_core::SeedableRng;
use std::collections::HashMap;

#[derive(Debug, Clone)]
pub struct EpisodeOptions {
    pub dwell_mode: DwellMode,
    /// Overrides the scenario's tick cap when set.
    pub max_ticks: Option<usize>,
}

impl Default for EpisodeOptions {
    fn default() -> Self {
        EpisodeOptions { dwell_mode: DwellMode::default(), max_ticks: None }
    }
}

/// Everything observable about one tick.
#[derive(Debug, Clone)]
pub struct TickRecord {
    pub t: usize,
    /// 1-based index of the task active at the start of the tick.
    pub task: usize,
    pub x: Vector,
    pub u: Vector,
    /// Reference the control law used this tick.
    pub r: Vector,
    pub f: f64,
    pub he_bar: f64,
    pub hc_bar: f64,
    /// Dwell hits counted so far for the current task.
    pub dwell: usize,
    /// Current estimate of every sensor in the scenario union, by id.
    pub estimates: Vec<(usize, Vector)>,
    /// Sensor ids that were sensing during this tick.
    pub active: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct EpisodeTrace {
    pub records: Vec<TickRecord>,
    pub switch_times: Vec<usize>,
    pub tasks_accomplished: usize,
    /// True when every task finished before the tick cap.
    pub completed: bool,
    pub max_ticks_exceeded: bool,
    pub seed: u64,
}

/// Runs one episode to completion or the tick cap. Deterministic in
/// (scenario, certificates, seed, options).
pub fn run_episode(
    scenario: &Scenario,
    certs: &Certificates,
    seed: u64,
    opts: &EpisodeOptions,
) -> EpisodeTrace {
    let model = &scenario.model;
    let n = model.state_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut x = scenario.initial_state.clone();
    let first_task = &scenario.tasks[0];
    let mut sensors_state: HashMap<usize, EstimatorState> = HashMap::new();
    for &id in &scenario.sensor_union {
        // Initial estimates are the true state corrupted elementwise.
        let offset = sample_bounded(n, scenario.init_est_elem, &mut rng);
        sensors_state.insert(
            id,
            EstimatorState {
                sensor_id: id,
                estimate: &x + offset,
                active: first_task.graph.position(id).is_some(),
                task: 1,
                designated: id == first_task.designated_sensor,
            },
        );
    }

    let mut ctrl = ControllerState::new(1);
    let mut bounds = BoundState::new(certs);
    let mut task_idx = 0usize;
    let mut task_start = 1usize;
    let max_ticks = opts.max_ticks.unwrap_or(scenario.max_ticks);

    let mut records: Vec<TickRecord> = Vec::new();
    let mut completed = false;
    let mut tasks_accomplished = 0usize;

    for t in 1..=max_ticks {
        let task = &scenario.tasks[task_idx];
        let (mut r, mut u_r) = task.trajectory.at(task_start, t);

        // Active sensors measure, in sorted id order for reproducibility.
        let active_ids: Vec<usize> = task.graph.vertex_set.clone();
        let sensor_refs: Vec<&SensorSpec> =
            active_ids.iter().map(|id| &scenario.sensors[id]).collect();
        let mut measurements = Vec::with_capacity(active_ids.len());
        for sensor in &sensor_refs {
            let v = sample_bounded(sensor.c.nrows(), scenario.v_elem, &mut rng);
            let y = sensor
                .measure(&x, &v, true, model.q_v)
                .expect("sampled noise respects its bound");
            measurements.push(y);
        }

        let xhat_s = sensors_state[&task.designated_sensor].estimate.clone();
        let (h_e, h_c) = trigger_bounds(&bounds, &task.d);
        let f = event_value(&xhat_s, &r, task, h_e, h_c);
        let accomplished = dwell_update(&mut ctrl, t, f, task, opts.dwell_mode);
        let dwell_count = ctrl.hits.len();
        let he_bar = bounds.he_at(t);
        let hc_bar = bounds.hc_at(t);
        let record_task = task.index;

        let mut switched = false;
        if accomplished {
            tasks_accomplished += 1;
            if task_idx + 1 == scenario.tasks.len() {
                completed = true;
            } else {
                let next = &scenario.tasks[task_idx + 1];
                let (msg, recipients) = make_switch_message(&ctrl, &xhat_s, task, next)
                    .expect("dwell_update set the accomplishment flag");
                for id in &recipients {
                    let state = &sensors_state[id];
                    let updated = handle_switch_message(
                        state,
                        &msg,
                        &task.graph.vertex_set,
                        &next.graph.vertex_set,
                    )
                    .expect("recipients are the union of both networks");
                    sensors_state.insert(*id, updated);
                }
                let jump = (&next.trajectory.states[0] - &r).norm();
                bounds
                    .on_switch(certs, t, jump)
                    .expect("switch tick is in the computed history");
                ctrl.advance(next.index);
                task_idx += 1;
                task_start = t;
                let new_ref = scenario.tasks[task_idx].trajectory.at(t, t);
                r = new_ref.0;
                u_r = new_ref.1;
                switched = true;
            }
        }

        let u = control_input(&xhat_s, &r, &u_r, &scenario.k_gain);

        // Snapshot after switch handling: at switch ticks the incoming
        // network already carries the handoff estimate.
        let estimates_snapshot: Vec<(usize, Vector)> = scenario
            .sensor_union
            .iter()
            .map(|id| (*id, sensors_state[id].estimate.clone()))
            .collect();
        records.push(TickRecord {
            t,
            task: record_task,
            x: x.clone(),
            u: u.clone(),
            r,
            f,
            he_bar,
            hc_bar,
            dwell: dwell_count,
            estimates: estimates_snapshot,
            active: active_ids.clone(),
        });

        if completed {
            break;
        }

        if switched {
            // The incoming network received the handoff this tick but had no
            // measurements; propagate its estimates through the model with
            // the predicted control so they stay aligned with the plant.
            let task = &scenario.tasks[task_idx];
            let r_used = records.last().expect("record pushed above").r.clone();
            for id in &task.graph.vertex_set {
                let state = sensors_state.get_mut(id).expect("known sensor");
                let u_hat = control_input(&state.estimate, &r_used, &u_r, &scenario.k_gain);
                state.estimate = &model.a * &state.estimate + &model.b * &u_hat;
            }
        } else {
            // Regular estimator tick over the task's network.
            let gains: Vec<&Matrix> = sensor_refs
                .iter()
                .map(|s| &s.gain_per_task[&task.index])
                .collect();
            let current: Vec<Vector> = active_ids
                .iter()
                .map(|id| sensors_state[id].estimate.clone())
                .collect();
            let (r_est, u_r_est) = (&records.last().unwrap().r, &u_r);
            let next_estimates = estimator_tick(
                &current,
                &measurements,
                &sensor_refs,
                &gains,
                r_est,
                u_r_est,
                &scenario.k_gain,
                model,
                &task.graph,
            )
            .expect("active set is consistent with the graph");
            for (id, est) in active_ids.iter().zip(next_estimates) {
                sensors_state.get_mut(id).expect("known sensor").estimate = est;
            }
        }

        let w = sample_bounded(n, scenario.w_elem, &mut rng);
        x = model.step_dynamics(&x, &u, &w).expect("sampled noise respects its bound");
        bounds.step(certs);
    }

    EpisodeTrace {
        switch_times: ctrl.switch_times.clone(),
        records,
        tasks_accomplished,
        completed,
        max_ticks_exceeded: !completed,
        seed,
    }
}
