//! Comparison controllers: a centralized Kalman filter driving the same
//! feedback law, and open-loop playback of the reference input. Both follow
//! the nominal task schedule (each leg runs for its planned length) instead
//! of event-triggered switching.

use crate::controller::control_input;
use crate::harness::scenario::Scenario;
use crate::matops::{Matrix, Vector};
use crate::plant::sample_bounded;
use rand_chacha::ChaCha8Rng;
use rand_core::SeedableRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineKind {
    /// Centralized Kalman filter over all active sensors, feedback control.
    Ckf,
    /// u(t) = u_r(t), no feedback, no estimator.
    ReferenceInput,
}

/// Per-tick error series of one baseline run.
#[derive(Debug, Clone)]
pub struct BaselineRun {
    pub est_err: Vec<f64>,
    pub track_err: Vec<f64>,
}

/// Nominal schedule: (task index, reference, reference input) at tick t.
fn scheduled_reference(scenario: &Scenario, t: usize) -> (usize, Vector, Vector) {
    let mut start = 1usize;
    for (i, task) in scenario.tasks.iter().enumerate() {
        let end = start + task.trajectory.len() - 1;
        if t <= end || i + 1 == scenario.tasks.len() {
            let (r, u_r) = task.trajectory.at(start, t);
            return (i, r, u_r);
        }
        start = end + 1;
    }
    unreachable!("at least one task exists");
}

pub fn run_baseline(
    scenario: &Scenario,
    kind: BaselineKind,
    seed: u64,
    horizon: usize,
) -> BaselineRun {
    let model = &scenario.model;
    let n = model.state_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = scenario.initial_state.clone();

    // Uniform[-a, a] has variance a^2/3; the filter is tuned to the sampled
    // distributions, not to the worst-case norm bounds.
    let q_cov = Matrix::identity(n, n) * (scenario.w_elem * scenario.w_elem / 3.0);
    let mut xhat = &x + sample_bounded(n, scenario.init_est_elem, &mut rng);
    let mut p_cov =
        Matrix::identity(n, n) * (scenario.init_est_elem * scenario.init_est_elem / 3.0);
    let r_var = scenario.v_elem * scenario.v_elem / 3.0;

    let mut est_err = Vec::with_capacity(horizon);
    let mut track_err = Vec::with_capacity(horizon);

    for t in 1..=horizon {
        let (task_idx, r, u_r) = scheduled_reference(scenario, t);
        let task = &scenario.tasks[task_idx];

        let u = match kind {
            BaselineKind::ReferenceInput => {
                est_err.push(0.0);
                u_r.clone()
            }
            BaselineKind::Ckf => {
                // Measurement update, one active sensor at a time.
                for &id in &task.graph.vertex_set {
                    let sensor = &scenario.sensors[&id];
                    let m_i = sensor.c.nrows();
                    let v = sample_bounded(m_i, scenario.v_elem, &mut rng);
                    let y = &sensor.c * &x + v;
                    let s_mat = &sensor.c * &p_cov * sensor.c.transpose()
                        + Matrix::identity(m_i, m_i) * r_var;
                    let s_inv = s_mat
                        .try_inverse()
                        .expect("innovation covariance is positive definite");
                    let k_gain = &p_cov * sensor.c.transpose() * s_inv;
                    xhat += &k_gain * (y - &sensor.c * &xhat);
                    p_cov = (Matrix::identity(n, n) - &k_gain * &sensor.c) * &p_cov;
                }
                est_err.push((&xhat - &x).norm());
                control_input(&xhat, &r, &u_r, &scenario.k_gain)
            }
        };
        track_err.push((&x - &r).norm());

        let w = sample_bounded(n, scenario.w_elem, &mut rng);
        x = model.step_dynamics(&x, &u, &w).expect("sampled noise respects its bound");
        if kind == BaselineKind::Ckf {
            // Time update with the applied control.
            xhat = &model.a * &xhat + &model.b * &u;
            p_cov = &model.a * &p_cov * model.a.transpose() + &q_cov;
        }
    }

    BaselineRun { est_err, track_err }
}
