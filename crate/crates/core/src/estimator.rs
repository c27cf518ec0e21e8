//! Per-sensor two-time-scale distributed estimator: a local measurement
//! update driven by a predicted control, followed by a fixed number of
//! synchronous consensus rounds per tick.

use crate::matops::{Matrix, Vector};
use crate::network::SensorGraph;
use crate::plant::{SensorSpec, SystemModel};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("sensor {0} is inactive and cannot update")]
    InactiveSensor(usize),
    #[error("consensus input has {got} states for {want} vertices")]
    SizeMismatch { got: usize, want: usize },
    #[error("switch message delivered to sensor {0} outside both networks")]
    NotAddressed(usize),
}

/// Runtime state of one sensor's estimator.
#[derive(Debug, Clone)]
pub struct EstimatorState {
    pub sensor_id: usize,
    pub estimate: Vector,
    pub active: bool,
    pub task: usize,
    pub designated: bool,
}

/// Control the sensor predicts the robot will apply this tick.
pub fn predicted_control(xhat: &Vector, r: &Vector, u_r: &Vector, k: &Matrix) -> Vector {
    k * (xhat - r) + u_r
}

/// Innovation update: A xhat + B uhat + G (y - C xhat).
pub fn local_update(
    state: &EstimatorState,
    uhat: &Vector,
    y: &Vector,
    model: &SystemModel,
    sensor: &SensorSpec,
    g: &Matrix,
) -> Result<Vector, EstimatorError> {
    if !state.active {
        return Err(EstimatorError::InactiveSensor(state.sensor_id));
    }
    Ok(&model.a * &state.estimate
        + &model.b * uhat
        + g * (y - &sensor.c * &state.estimate))
}

/// One synchronous consensus round over the active graph. All sensors read
/// their neighbors' round l-1 values before any writes round l.
pub fn consensus_round(
    states: &[Vector],
    graph: &SensorGraph,
) -> Result<Vec<Vector>, EstimatorError> {
    let k = graph.vertex_set.len();
    if states.len() != k {
        return Err(EstimatorError::SizeMismatch { got: states.len(), want: k });
    }
    let mut next = Vec::with_capacity(k);
    for i in 0..k {
        let mut x = states[i].clone();
        for j in graph.neighbors(i) {
            x -= (&states[i] - &states[j]) * graph.alpha;
        }
        next.push(x);
    }
    Ok(next)
}

/// Applies `graph.rounds` consensus rounds.
pub fn consensus_rounds(
    states: Vec<Vector>,
    graph: &SensorGraph,
) -> Result<Vec<Vector>, EstimatorError> {
    let mut states = states;
    for _ in 0..graph.rounds {
        states = consensus_round(&states, graph)?;
    }
    Ok(states)
}

/// Full per-tick estimator step for all active sensors of one task, in
/// lockstep: predicted control and local update per sensor, then the
/// consensus exchange. `estimates[i]` must be ordered by the graph's sorted
/// vertex set; the returned vector becomes xhat(t+1).
#[allow(clippy::too_many_arguments)]
pub fn estimator_tick(
    estimates: &[Vector],
    measurements: &[Vector],
    sensors: &[&SensorSpec],
    gains: &[&Matrix],
    r: &Vector,
    u_r: &Vector,
    k_gain: &Matrix,
    model: &SystemModel,
    graph: &SensorGraph,
) -> Result<Vec<Vector>, EstimatorError> {
    let count = graph.vertex_set.len();
    if estimates.len() != count || measurements.len() != count {
        return Err(EstimatorError::SizeMismatch { got: estimates.len(), want: count });
    }
    let mut locals = Vec::with_capacity(count);
    for i in 0..count {
        let state = EstimatorState {
            sensor_id: sensors[i].id,
            estimate: estimates[i].clone(),
            active: true,
            task: 0,
            designated: false,
        };
        let uhat = predicted_control(&estimates[i], r, u_r, k_gain);
        locals.push(local_update(&state, &uhat, &measurements[i], model, sensors[i], gains[i])?);
    }
    consensus_rounds(locals, graph)
}

/// Applies a switch broadcast to one sensor. Sensors outside the incoming
/// vertex set deactivate; members adopt the handoff estimate and the new task
/// immediately, skipping their own measurement update this tick.
pub fn handle_switch_message(
    state: &EstimatorState,
    msg: &crate::controller::SwitchMessage,
    outgoing_vertices: &[usize],
    incoming_vertices: &[usize],
) -> Result<EstimatorState, EstimatorError> {
    let id = state.sensor_id;
    if !outgoing_vertices.contains(&id) && !incoming_vertices.contains(&id) {
        return Err(EstimatorError::NotAddressed(id));
    }
    let mut next = state.clone();
    if incoming_vertices.contains(&id) {
        next.active = true;
        next.task = msg.next_task;
        next.estimate = msg.handoff.clone();
        next.designated = msg.next_designated == id;
    } else {
        next.active = false;
        next.designated = false;
    }
    Ok(next)
}
