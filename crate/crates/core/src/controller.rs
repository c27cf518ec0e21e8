//! Robot-side event-triggered task-switching controller: feedback law,
//! membership certificate f(t), dwell bookkeeping and switch messages.

use crate::matops::{Matrix, Vector};
use crate::plant::TaskSpec;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ControllerError {
    #[error("no estimate received this tick")]
    NoEstimateReceived,
    #[error("task {0} is not accomplished yet")]
    TaskNotAccomplished(usize),
}

/// How dwell hits are counted before a task is declared accomplished.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DwellMode {
    /// Hits accumulate; gaps between hits do not reset the count.
    Cumulative,
    /// A miss clears the count; accomplishment needs a contiguous streak.
    /// Default, since the task definition asks for a contiguous stay.
    #[default]
    Consecutive,
}

/// Broadcast on a task switch: the next task, the handoff estimate taken from
/// the outgoing designated sensor, and the incoming designated sensor.
#[derive(Debug, Clone)]
pub struct SwitchMessage {
    pub next_task: usize,
    pub handoff: Vector,
    pub next_designated: usize,
}

/// Controller bookkeeping for one episode.
#[derive(Debug, Clone)]
pub struct ControllerState {
    pub task: usize,
    /// Ticks at which f(t) <= R held for the current task.
    pub hits: Vec<usize>,
    /// Switch times t_eta of accomplished tasks, in order.
    pub switch_times: Vec<usize>,
    pub accomplished: bool,
}

impl ControllerState {
    pub fn new(first_task: usize) -> Self {
        ControllerState { task: first_task, hits: Vec::new(), switch_times: Vec::new(), accomplished: false }
    }

    /// Moves bookkeeping to the next task after a switch.
    pub fn advance(&mut self, next_task: usize) {
        self.task = next_task;
        self.hits.clear();
        self.accomplished = false;
    }
}

/// u(t) = K (xhat - r) + u_r. Identical in form to the sensors' predicted
/// control, evaluated at the designated sensor's estimate.
pub fn control_input(xhat: &Vector, r: &Vector, u_r: &Vector, k: &Matrix) -> Vector {
    k * (xhat - r) + u_r
}

/// Membership certificate f(t) = min(h_e + g_e, h_c + g_c) with
/// g_e = ||D xhat - c|| and g_c = ||D r - c||. f(t) <= R proves the true
/// state is inside the target set.
pub fn event_value(xhat: &Vector, r: &Vector, task: &TaskSpec, h_e: f64, h_c: f64) -> f64 {
    let g_e = (&task.d * xhat - &task.c).norm();
    let g_c = (&task.d * r - &task.c).norm();
    (h_e + g_e).min(h_c + g_c)
}

/// Records a hit or miss at time `t` and flags accomplishment once the dwell
/// count is reached. Returns true when the task completed this tick.
pub fn dwell_update(
    ctrl: &mut ControllerState,
    t: usize,
    f: f64,
    task: &TaskSpec,
    mode: DwellMode,
) -> bool {
    if ctrl.accomplished {
        return false;
    }
    if f <= task.radius {
        ctrl.hits.push(t);
    } else if mode == DwellMode::Consecutive {
        ctrl.hits.clear();
    }
    if ctrl.hits.len() >= task.dwell {
        ctrl.accomplished = true;
        ctrl.switch_times.push(t);
        return true;
    }
    false
}

/// Builds the switch broadcast once the current task is accomplished.
/// Recipients are all sensors of the outgoing and incoming networks.
pub fn make_switch_message(
    ctrl: &ControllerState,
    handoff: &Vector,
    current: &TaskSpec,
    next: &TaskSpec,
) -> Result<(SwitchMessage, Vec<usize>), ControllerError> {
    if !ctrl.accomplished {
        return Err(ControllerError::TaskNotAccomplished(ctrl.task));
    }
    let mut recipients: Vec<usize> = current
        .graph
        .vertex_set
        .iter()
        .chain(next.graph.vertex_set.iter())
        .copied()
        .collect();
    recipients.sort_unstable();
    recipients.dedup();
    Ok((
        SwitchMessage {
            next_task: next.index,
            handoff: handoff.clone(),
            next_designated: next.designated_sensor,
        },
        recipients,
    ))
}
