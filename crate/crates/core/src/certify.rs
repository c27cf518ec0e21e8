//! Certification core: offline per-task certificates (Riccati solutions,
//! contraction rates, parameter selection, minimum consensus rounds), the
//! online error-bound sequences consumed by the event trigger, feasibility
//! margins and running-time bounds.

use crate::matops::{solve_dlyap, spectral_norm, MatOpsError, Matrix, RiccatiSolution};
use crate::plant::{SensorSpec, SystemModel, TaskSpec};
use std::collections::HashMap;
use thiserror::Error;

pub mod analysis;

#[derive(Debug, Error)]
pub enum CertifyError {
    #[error(transparent)]
    MatOps(#[from] MatOpsError),
    #[error("certificate parameters infeasible: {0}")]
    InfeasibleCertificate(String),
    #[error("consensus contraction rate {0} does not shrink disagreement")]
    DegenerateContraction(f64),
    #[error("estimation-bound history does not cover the requested range")]
    MissingHistory,
    #[error("no finite running-time bound within the search horizon")]
    NoFiniteBound,
    #[error("switch time {0} is not in the computed history")]
    UnknownSwitchTime(usize),
    #[error("sensor {sensor} lacks a gain for task {task}")]
    MissingGain { sensor: usize, task: usize },
}

/// Safety factor applied inside strict parameter inequalities.
const PARAM_SLACK: f64 = 0.99;

/// Offline certificate for one task's estimation network.
#[derive(Debug, Clone)]
pub struct TaskCertificate {
    pub task_index: usize,
    /// Solution of F^T P F + I = P with F = A - (1/N) sum G_i C_i.
    pub p: RiccatiSolution,
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// Estimation-bound decay rate 1 - 1/(3 lambda_max(P)).
    pub varpi: f64,
    /// Consensus contraction rate of the task's network.
    pub lambda_c: f64,
    /// Configured consensus rounds per tick.
    pub rounds: usize,
    /// Per-tick squared noise amplification before scaling.
    pub q_bar: f64,
    /// Noise constant feeding the estimation bound recursion.
    pub q_noise: f64,
    pub gamma: f64,
    pub rho: f64,
    pub tau: f64,
    pub n_sensors: usize,
    /// Smallest round count certified by the contraction conditions.
    pub min_rounds: usize,
    /// max_i ||G_i C_i|| over the active sensors.
    pub q_hat: f64,
}

/// Offline certificate for the tracking loop A + BK.
#[derive(Debug, Clone)]
pub struct TrackingCertificate {
    pub p_star: RiccatiSolution,
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// Tracking-bound decay rate 1 - 1/(2 lambda_max(P*)).
    pub lambda: f64,
    /// ||P*|| + 2 ||P* (A+BK)||^2.
    pub beta: f64,
    /// When true the per-step deviation term enters the bound squared, the
    /// form the guarantee actually establishes; when false the unsquared
    /// term is used for compatibility with the published recursion.
    pub squared_form: bool,
}

/// All certificates for one scenario, plus the shared scalars.
#[derive(Debug, Clone)]
pub struct Certificates {
    pub tasks: Vec<TaskCertificate>,
    pub tracking: TrackingCertificate,
    pub bk_norm: f64,
    pub abk_norm: f64,
    pub q_w: f64,
    pub q_x: f64,
    pub q_r: f64,
}

/// Picks (rho, tau, gamma) satisfying the certificate inequalities with a
/// fixed slack. `avg_gc_norm` is ||(1/N) sum G_i C_i||.
pub fn select_params(
    p: &RiccatiSolution,
    n_sensors: usize,
    bk_norm: f64,
    avg_gc_norm: f64,
) -> Result<(f64, f64, f64), CertifyError> {
    let lmax = p.lambda_max();
    let (rho, tau) = if lmax <= 1.0 + 1e-12 {
        // P = I leaves the inequality unconstrained.
        (1.0, 1.0)
    } else {
        let rhs = (lmax - 2.0 / 3.0) / (lmax - 1.0);
        if rhs <= 1.0 {
            return Err(CertifyError::InfeasibleCertificate(format!(
                "(1+rho)(1+tau) must stay below {rhs}, which leaves no room"
            )));
        }
        let direct = (PARAM_SLACK * rhs).sqrt() - 1.0;
        if direct > 0.0 {
            (direct, direct)
        } else {
            // rhs barely exceeds 1; shrink only the slack above 1 so the
            // product stays strictly inside the admissible interval.
            let v = (1.0 + PARAM_SLACK * (rhs - 1.0)).sqrt() - 1.0;
            (v, v)
        }
    };
    let f_j = (n_sensors as f64).sqrt() * (bk_norm + avg_gc_norm);
    let gamma = (2.0f64)
        .sqrt()
        .max(f_j * (3.0 * (1.0 + rho) * (1.0 + 1.0 / tau) * lmax).sqrt());
    Ok((rho, tau, gamma))
}

/// Smallest consensus round count certified to shrink both coupling terms.
pub fn min_rounds(
    gamma: f64,
    rho: f64,
    tau: f64,
    lambda_c: f64,
    q_hat: f64,
    abk_norm: f64,
) -> Result<usize, CertifyError> {
    if lambda_c >= 1.0 {
        return Err(CertifyError::DegenerateContraction(lambda_c));
    }
    if lambda_c <= 0.0 {
        return Ok(1);
    }
    let log_inv = (1.0 / lambda_c).ln();
    let d_arg = gamma * q_hat * (3.0 * (1.0 + rho) * (1.0 + tau)).sqrt();
    let e_arg = (abk_norm + q_hat) * (3.0 * (1.0 + rho) * (1.0 + 1.0 / tau)).sqrt();
    let d = if d_arg > 0.0 { d_arg.ln() / log_inv } else { f64::NEG_INFINITY };
    let e = if e_arg > 0.0 { e_arg.ln() / log_inv } else { f64::NEG_INFINITY };
    let needed = d.max(e);
    if !needed.is_finite() || needed <= 1.0 {
        return Ok(1);
    }
    // Tiny backoff so exact integers do not round up through float noise.
    Ok((needed - 1e-9).ceil() as usize)
}

/// Builds every certificate needed by one scenario.
pub fn build_certificates(
    model: &SystemModel,
    k_gain: &Matrix,
    tasks: &[TaskSpec],
    sensors: &HashMap<usize, SensorSpec>,
    squared_form: bool,
) -> Result<Certificates, CertifyError> {
    let n = model.state_dim();
    let bk = &model.b * k_gain;
    let abk = &model.a + &bk;
    let bk_norm = spectral_norm(&bk);
    let abk_norm = spectral_norm(&abk);

    let p_star = solve_dlyap(&abk)?;
    let (star_min, star_max) = (p_star.lambda_min(), p_star.lambda_max());
    let tracking = TrackingCertificate {
        lambda: 1.0 - 1.0 / (2.0 * star_max),
        beta: spectral_norm(&p_star.p) + 2.0 * spectral_norm(&(&p_star.p * &abk)).powi(2),
        lambda_min: star_min,
        lambda_max: star_max,
        p_star,
        squared_form,
    };

    let mut task_certs = Vec::with_capacity(tasks.len());
    for task in tasks {
        let count = task.graph.vertex_set.len();
        let mut sum_gc = Matrix::zeros(n, n);
        let mut sum_g_norm = 0.0;
        let mut max_g_norm = 0.0f64;
        let mut q_hat = 0.0f64;
        for &id in &task.graph.vertex_set {
            let sensor = &sensors[&id];
            let gain = sensor
                .gain_per_task
                .get(&task.index)
                .ok_or(CertifyError::MissingGain { sensor: id, task: task.index })?;
            sum_gc += gain * &sensor.c;
            let gn = spectral_norm(gain);
            sum_g_norm += gn;
            max_g_norm = max_g_norm.max(gn);
            q_hat = q_hat.max(spectral_norm(&(gain * &sensor.c)));
        }
        let avg_gc = &sum_gc / count as f64;
        let f = &model.a - &avg_gc;
        let p = solve_dlyap(&f)?;
        let (lambda_min, lambda_max) = (p.lambda_min(), p.lambda_max());
        let (rho, tau, gamma) = select_params(&p, count, bk_norm, spectral_norm(&avg_gc))?;
        let lambda_c = task.graph.contraction();
        let rounds = task.graph.rounds;
        let q_bar = (model.q_w + model.q_v * sum_g_norm / count as f64).powi(2)
            + model.q_v.powi(2)
                * gamma.powi(2)
                * lambda_c.powi(2 * rounds as i32)
                * max_g_norm.powi(2);
        let q_noise = (1.0 + 1.0 / rho) * lambda_max * count as f64 * q_bar;
        let min_l = min_rounds(gamma, rho, tau, lambda_c, q_hat, abk_norm)?;
        task_certs.push(TaskCertificate {
            task_index: task.index,
            p,
            lambda_min,
            lambda_max,
            varpi: 1.0 - 1.0 / (3.0 * lambda_max),
            lambda_c,
            rounds,
            q_bar,
            q_noise,
            gamma,
            rho,
            tau,
            n_sensors: count,
            min_rounds: min_l,
            q_hat,
        });
    }

    Ok(Certificates {
        tasks: task_certs,
        tracking,
        bk_norm,
        abk_norm,
        q_w: model.q_w,
        q_x: model.q_x,
        q_r: model.q_r,
    })
}

/// Decay and accumulation coefficients of the estimation bound at offset
/// `dt = t - task_start` ticks into the task.
pub fn estimation_coeffs(cert: &TaskCertificate, dt: usize) -> (f64, f64) {
    let a = (1.0 + 4.0 * cert.gamma.powi(2))
        * cert.n_sensors as f64
        * (cert.lambda_max / cert.lambda_min)
        * cert.varpi.powi(dt as i32);
    // Geometric partial sum of varpi^l for l in [0, dt).
    let partial = (1.0 - cert.varpi.powi(dt as i32)) / (1.0 - cert.varpi);
    let b = cert.q_noise * partial / cert.lambda_min;
    (a, b)
}

/// Per-step deviation feeding the tracking bound: the feedback acting on the
/// estimation error plus the process uncertainty.
fn tracking_increment(cert: &TrackingCertificate, bk_norm: f64, q_w: f64, he: f64) -> f64 {
    let base = bk_norm * he + q_w;
    if cert.squared_form {
        base * base
    } else {
        base
    }
}

/// Tracking-bound coefficients at time `t` (1-based) for a task started at
/// `task_start`. `he` holds the estimation bounds, `he[s-1]` for time s, and
/// must cover [task_start, t-1].
pub fn tracking_coeffs(
    certs: &Certificates,
    t: usize,
    task_start: usize,
    he: &[f64],
) -> Result<(f64, f64), CertifyError> {
    let cert = &certs.tracking;
    if t < task_start || t > he.len() + 1 || task_start == 0 {
        return Err(CertifyError::MissingHistory);
    }
    let dt = t - task_start;
    let a_hat = (cert.lambda_max / cert.lambda_min) * cert.lambda.powi(dt as i32);
    let mut sum = 0.0;
    for l in 0..dt {
        let s = t - 1 - l; // time index of the deviation term
        let he_s = he[s - 1];
        sum += cert.lambda.powi(l as i32) * tracking_increment(cert, certs.bk_norm, certs.q_w, he_s);
    }
    let b_hat = cert.beta * sum / cert.lambda_min;
    Ok((a_hat, b_hat))
}

/// Online bound sequences, advanced one tick at a time.
#[derive(Debug, Clone)]
pub struct BoundState {
    /// he[t-1] is the estimation bound at time t (1-based).
    pub he: Vec<f64>,
    /// hc[t-1] is the tracking bound at time t.
    pub hc: Vec<f64>,
    /// 0-based index into the certificate list.
    pub task: usize,
    /// Start tick t_{eta-1} of the current task.
    pub task_start: usize,
    he_anchor: f64,
    hc_anchor: f64,
    /// Running geometric accumulation of tracking increments.
    track_sum: f64,
    first_task: bool,
}

impl BoundState {
    pub fn new(certs: &Certificates) -> Self {
        BoundState {
            he: vec![certs.q_x],
            hc: vec![certs.q_r],
            task: 0,
            task_start: 1,
            he_anchor: certs.q_x,
            hc_anchor: certs.q_r,
            track_sum: 0.0,
            first_task: true,
        }
    }

    /// Appends the bounds for time t = current length + 1.
    pub fn step(&mut self, certs: &Certificates) {
        let t = self.he.len() + 1;
        let cert = &certs.tasks[self.task];
        // Estimation bound. The published recursion lags the coefficients by
        // one tick before the first switch; later tasks use the current tick.
        let he_t = if self.first_task {
            let (a, b) = estimation_coeffs(cert, t - 1 - self.task_start);
            (a * self.he_anchor * self.he_anchor + b).sqrt()
        } else {
            let (a, b) = estimation_coeffs(cert, t - self.task_start);
            (a * self.he_anchor * self.he_anchor + b).sqrt()
        };
        // Tracking bound, accumulated incrementally: the sum at t extends the
        // sum at t-1 by the deviation observed at t-1.
        let track = &certs.tracking;
        let dt = t - self.task_start;
        let a_hat = (track.lambda_max / track.lambda_min) * track.lambda.powi(dt as i32);
        self.track_sum = track.lambda * self.track_sum
            + tracking_increment(track, certs.bk_norm, certs.q_w, self.he[t - 2]);
        let b_hat = track.beta * self.track_sum / track.lambda_min;
        let hc_t = (a_hat * self.hc_anchor * self.hc_anchor + b_hat).sqrt();
        self.he.push(he_t);
        self.hc.push(hc_t);
    }

    /// Re-anchors the recursions at a switch that happened at tick `t_eta`.
    /// `reference_jump` is the distance between the incoming trajectory's
    /// first point and the outgoing reference at the switch tick.
    pub fn on_switch(
        &mut self,
        certs: &Certificates,
        t_eta: usize,
        reference_jump: f64,
    ) -> Result<(), CertifyError> {
        if t_eta == 0 || t_eta > self.he.len() {
            return Err(CertifyError::UnknownSwitchTime(t_eta));
        }
        if self.task + 1 >= certs.tasks.len() {
            return Err(CertifyError::InfeasibleCertificate(
                "no certificate for the next task".into(),
            ));
        }
        self.task += 1;
        self.task_start = t_eta;
        self.he_anchor = self.he[t_eta - 1];
        self.hc_anchor = self.hc[t_eta - 1] + reference_jump;
        self.track_sum = 0.0;
        self.first_task = false;
        Ok(())
    }

    pub fn he_at(&self, t: usize) -> f64 {
        self.he[t - 1]
    }

    pub fn hc_at(&self, t: usize) -> f64 {
        self.hc[t - 1]
    }
}

/// Scales the state-space bounds into the constraint space of the trigger:
/// h_e = ||D|| he_bar, h_c = ||D|| hc_bar.
pub fn trigger_bounds(state: &BoundState, d: &Matrix) -> (f64, f64) {
    let dn = spectral_norm(d);
    let t = state.he.len();
    (dn * state.he_at(t), dn * state.hc_at(t))
}

/// Which side of the constraint norm the feasibility threshold uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FeasibilityForm {
    /// Threshold divided by ||D||, as published.
    #[default]
    Paper,
    /// Threshold multiplied by ||D||, the dimensionally consistent variant.
    Corrected,
}

/// Steady-state feasibility test of a task radius against the asymptotic
/// bound level. Returns the verdict and the margin R - threshold.
pub fn task_feasible(
    task: &TaskSpec,
    certs: &Certificates,
    cert: &TaskCertificate,
    form: FeasibilityForm,
) -> (bool, f64) {
    let b_tilde = 3.0 * cert.q_noise * cert.lambda_max / cert.lambda_min;
    let track = &certs.tracking;
    let core = (2.0 * track.beta * track.lambda_max).sqrt()
        * (certs.bk_norm * b_tilde.sqrt() + certs.q_w)
        / track.lambda_min.sqrt();
    let dn = spectral_norm(&task.d);
    let threshold = match form {
        FeasibilityForm::Paper => core / dn,
        FeasibilityForm::Corrected => core * dn,
    };
    let margin = task.radius - threshold;
    (margin > 0.0, margin)
}

/// Smallest task duration `dt >= dwell` such that the trigger level
/// phi stays at or below `radius` over the whole dwell window
/// [dt - dwell, dt). `phi(l)` is the bound level l ticks after the task
/// start; the search gives up after `horizon` ticks.
pub fn runtime_bound(
    dwell: usize,
    radius: f64,
    phi: impl Fn(usize) -> f64,
    horizon: usize,
) -> Result<usize, CertifyError> {
    assert!(dwell >= 1, "dwell must be positive");
    for dt in dwell..=horizon {
        let lo = dt - dwell;
        let worst = (lo..dt).map(&phi).fold(f64::NEG_INFINITY, f64::max);
        if worst <= radius {
            return Ok(dt);
        }
    }
    Err(CertifyError::NoFiniteBound)
}

/// Predicted bound sequences for one task in isolation, starting from the
/// given anchors, over `horizon` ticks after the task start. Index l holds
/// the bounds l ticks after the start; index 0 holds the anchors.
pub fn predicted_bounds(
    certs: &Certificates,
    cert: &TaskCertificate,
    he_anchor: f64,
    hc_anchor: f64,
    first_task: bool,
    horizon: usize,
) -> (Vec<f64>, Vec<f64>) {
    let mut he = Vec::with_capacity(horizon + 1);
    let mut hc = Vec::with_capacity(horizon + 1);
    he.push(he_anchor);
    hc.push(hc_anchor);
    let track = &certs.tracking;
    let mut sum = 0.0;
    for l in 1..=horizon {
        let exponent = if first_task { l - 1 } else { l };
        let (a, b) = estimation_coeffs(cert, exponent);
        he.push((a * he_anchor * he_anchor + b).sqrt());
        let a_hat = (track.lambda_max / track.lambda_min) * track.lambda.powi(l as i32);
        sum = track.lambda * sum + tracking_increment(track, certs.bk_norm, certs.q_w, he[l - 1]);
        let b_hat = track.beta * sum / track.lambda_min;
        hc.push((a_hat * hc_anchor * hc_anchor + b_hat).sqrt());
    }
    (he, hc)
}

/// Asymptotic level the estimation bound settles at inside one task.
pub fn he_limit(cert: &TaskCertificate) -> f64 {
    (cert.q_noise / ((1.0 - cert.varpi) * cert.lambda_min)).sqrt()
}

/// Asymptotic level the tracking bound settles at inside one task, with the
/// estimation bound already at its own limit.
pub fn hc_limit(certs: &Certificates, cert: &TaskCertificate) -> f64 {
    let track = &certs.tracking;
    let g = tracking_increment(track, certs.bk_norm, certs.q_w, he_limit(cert));
    (track.beta * g / (track.lambda_min * (1.0 - track.lambda))).sqrt()
}

/// Predicted worst-case duration of task `k` (1-based): the smallest dwell
/// window inside which the certified trigger level stays below the radius.
/// Earlier tasks are assumed to have run long enough for their bound
/// sequences to settle.
pub fn predicted_runtime_bound(
    certs: &Certificates,
    tasks: &[TaskSpec],
    k: usize,
) -> Result<usize, CertifyError> {
    assert!(k >= 1 && k <= tasks.len(), "task index out of range");
    let task = &tasks[k - 1];
    let cert = &certs.tasks[k - 1];
    let (he_anchor, hc_anchor, first) = if k == 1 {
        (certs.q_x, certs.q_r, true)
    } else {
        let prev_cert = &certs.tasks[k - 2];
        let prev_task = &tasks[k - 2];
        let jump = (&task.trajectory.states[0]
            - prev_task.trajectory.states.last().expect("nonempty"))
        .norm();
        (he_limit(prev_cert), hc_limit(certs, prev_cert) + jump, false)
    };
    let horizon = task.trajectory.len() + 10 * task.dwell;
    let (_, hc) = predicted_bounds(certs, cert, he_anchor, hc_anchor, first, horizon);
    let dn = spectral_norm(&task.d);
    let states = &task.trajectory.states;
    let phi = |l: usize| {
        let r = &states[l.min(states.len() - 1)];
        dn * hc[l] + (&task.d * r - &task.c).norm()
    };
    runtime_bound(task.dwell, task.radius, phi, horizon)
}
