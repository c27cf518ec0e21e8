//! Scenario files: a single JSON document declaring the plant, the sensors,
//! the task sequence and the uncertainty levels. Loading synthesizes gains
//! and reference trajectories and validates the standing assumptions.

use crate::matops::{is_schur, place_observer_gain, place_state_gain, Matrix, Vector};
use crate::network::SensorGraph;
use crate::plant::{
    elementwise_to_norm_bound, synthesize_reference, SensorSpec, SystemModel, TaskSpec,
};
use serde::Deserialize;
use std::collections::HashMap;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("cannot read scenario: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse scenario: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("assumption violated: {0}")]
    AssumptionViolated(String),
    #[error("scenario invalid: {0}")]
    Invalid(String),
    #[error("csv export failed: {0}")]
    Csv(String),
}

#[derive(Debug, Deserialize)]
struct ModelFile {
    a: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
    /// Elementwise half-width of the process uncertainty.
    process_noise_elem: f64,
    /// Elementwise half-width of each measurement's uncertainty.
    measurement_noise_elem: f64,
    /// Elementwise half-width of the initial estimation errors.
    initial_estimate_elem: f64,
    /// Norm bound on the gap between x(1) and the first reference point.
    initial_reference_gap: f64,
}

#[derive(Debug, Deserialize)]
struct SensorFile {
    id: usize,
    c: Vec<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
struct TaskFile {
    d: Vec<Vec<f64>>,
    center: Vec<f64>,
    radius: f64,
    dwell: usize,
    /// Number of reference samples for this leg.
    length: usize,
    vertices: Vec<usize>,
    edges: Vec<[usize; 2]>,
    designated: usize,
    rounds: usize,
    #[serde(default)]
    alpha: Option<f64>,
}

#[derive(Debug, Deserialize)]
struct ScenarioFile {
    #[serde(default)]
    name: Option<String>,
    model: ModelFile,
    initial_state: Vec<f64>,
    /// Start point of the first reference; defaults to the initial state's
    /// positions at rest.
    #[serde(default)]
    first_reference_start: Option<Vec<f64>>,
    controller_poles: Vec<f64>,
    observer_poles: Vec<f64>,
    sensors: Vec<SensorFile>,
    tasks: Vec<TaskFile>,
    #[serde(default = "default_max_ticks")]
    max_ticks: usize,
}

fn default_max_ticks() -> usize {
    100_000
}

/// A fully validated scenario with synthesized gains and trajectories.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub model: SystemModel,
    pub sensors: HashMap<usize, SensorSpec>,
    pub tasks: Vec<TaskSpec>,
    pub k_gain: Matrix,
    pub initial_state: Vector,
    /// First point of the first reference trajectory.
    pub first_reference_start: Vector,
    pub max_ticks: usize,
    /// Elementwise sampling half-widths behind the norm bounds.
    pub w_elem: f64,
    pub v_elem: f64,
    pub init_est_elem: f64,
    /// All sensor ids appearing in any task, sorted.
    pub sensor_union: Vec<usize>,
}

fn to_matrix(rows: &[Vec<f64>], what: &str) -> Result<Matrix, HarnessError> {
    if rows.is_empty() || rows[0].is_empty() {
        return Err(HarnessError::Invalid(format!("{what}: empty matrix")));
    }
    let cols = rows[0].len();
    if rows.iter().any(|r| r.len() != cols) {
        return Err(HarnessError::Invalid(format!("{what}: ragged rows")));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    if flat.iter().any(|x| !x.is_finite()) {
        return Err(HarnessError::Invalid(format!("{what}: non-finite entry")));
    }
    Ok(Matrix::from_row_slice(rows.len(), cols, &flat))
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, HarnessError> {
    let text = std::fs::read_to_string(path)?;
    scenario_from_json(&text)
}

pub fn scenario_from_json(text: &str) -> Result<Scenario, HarnessError> {
    let file: ScenarioFile = serde_json::from_str(text)?;
    build_scenario(file)
}

fn build_scenario(file: ScenarioFile) -> Result<Scenario, HarnessError> {
    let a = to_matrix(&file.model.a, "model.a")?;
    let b = to_matrix(&file.model.b, "model.b")?;
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n {
        return Err(HarnessError::Invalid("plant matrix dimensions disagree".into()));
    }

    let mut sensors: HashMap<usize, SensorSpec> = HashMap::new();
    let mut max_meas_dim = 0usize;
    for s in &file.sensors {
        let c = to_matrix(&s.c, "sensor.c")?;
        if c.ncols() != n {
            return Err(HarnessError::Invalid(format!("sensor {}: C has wrong width", s.id)));
        }
        max_meas_dim = max_meas_dim.max(c.nrows());
        if sensors
            .insert(s.id, SensorSpec { id: s.id, c, gain_per_task: HashMap::new() })
            .is_some()
        {
            return Err(HarnessError::Invalid(format!("duplicate sensor id {}", s.id)));
        }
    }

    let model = SystemModel {
        a: a.clone(),
        b: b.clone(),
        q_w: elementwise_to_norm_bound(file.model.process_noise_elem, n),
        q_v: elementwise_to_norm_bound(file.model.measurement_noise_elem, max_meas_dim),
        q_x: elementwise_to_norm_bound(file.model.initial_estimate_elem, n),
        q_r: file.model.initial_reference_gap,
    };

    // Feedback gain; failure here means (A, B) cannot be stabilized at the
    // requested spectrum.
    let k_gain = place_state_gain(&a, &b, &file.controller_poles)
        .map_err(|e| HarnessError::AssumptionViolated(format!("stabilizability: {e}")))?;
    if !is_schur(&(&a + &b * &k_gain)) {
        return Err(HarnessError::AssumptionViolated("stabilizability".into()));
    }

    let initial_state = Vector::from_vec(file.initial_state.clone());
    if initial_state.len() != n {
        return Err(HarnessError::Invalid("initial_state has wrong length".into()));
    }

    // Per-task graphs, observer gains and chained reference trajectories.
    let mut tasks = Vec::with_capacity(file.tasks.len());
    let mut start_state = match &file.first_reference_start {
        Some(v) => {
            let v = Vector::from_vec(v.clone());
            if v.len() != n {
                return Err(HarnessError::Invalid("first_reference_start has wrong length".into()));
            }
            v
        }
        None => default_reference_start(&initial_state, &file.tasks, n)?,
    };
    let first_reference_start = start_state.clone();
    if (&initial_state - &first_reference_start).norm() > model.q_r + 1e-12 {
        return Err(HarnessError::AssumptionViolated(
            "initial bounds: ||x(1) - r(1)|| exceeds the declared gap".into(),
        ));
    }
    if file.model.initial_estimate_elem * (n as f64).sqrt() > model.q_x + 1e-12 {
        return Err(HarnessError::AssumptionViolated("initial bounds: estimate spread".into()));
    }

    let mut union: Vec<usize> = Vec::new();
    for (ti, tf) in file.tasks.iter().enumerate() {
        let index = ti + 1;
        let d = to_matrix(&tf.d, "task.d")?;
        if d.ncols() != n || d.nrows() >= n {
            return Err(HarnessError::Invalid(format!("task {index}: bad constraint matrix")));
        }
        let center = Vector::from_vec(tf.center.clone());
        if center.len() != d.nrows() {
            return Err(HarnessError::Invalid(format!("task {index}: center length")));
        }
        if tf.radius <= 0.0 || tf.dwell == 0 {
            return Err(HarnessError::Invalid(format!("task {index}: radius/dwell")));
        }
        for &v in &tf.vertices {
            if !sensors.contains_key(&v) {
                return Err(HarnessError::Invalid(format!("task {index}: unknown sensor {v}")));
            }
        }
        let mut verts = tf.vertices.clone();
        verts.sort_unstable();
        let k = verts.len();
        let mut adjacency = Matrix::zeros(k, k);
        for e in &tf.edges {
            let i = verts.binary_search(&e[0]).map_err(|_| {
                HarnessError::Invalid(format!("task {index}: edge endpoint {} not a vertex", e[0]))
            })?;
            let j = verts.binary_search(&e[1]).map_err(|_| {
                HarnessError::Invalid(format!("task {index}: edge endpoint {} not a vertex", e[1]))
            })?;
            if i == j {
                return Err(HarnessError::Invalid(format!("task {index}: self-loop")));
            }
            adjacency[(i, j)] = 1.0;
            adjacency[(j, i)] = 1.0;
        }
        let graph = SensorGraph::new(verts.clone(), adjacency, tf.alpha, tf.rounds)
            .map_err(|e| HarnessError::AssumptionViolated(format!("connectivity: {e}")))?;
        if graph.position(tf.designated).is_none() {
            return Err(HarnessError::Invalid(format!(
                "task {index}: designated sensor {} not in the network",
                tf.designated
            )));
        }

        // Stacked measurement matrix of the active set; the observer gain for
        // it certifies collective detectability.
        let meas_total: usize = graph
            .vertex_set
            .iter()
            .map(|id| sensors[id].c.nrows())
            .sum();
        let mut c_stack = Matrix::zeros(meas_total, n);
        let mut row = 0;
        for id in &graph.vertex_set {
            let c = &sensors[id].c;
            c_stack.view_mut((row, 0), (c.nrows(), n)).copy_from(c);
            row += c.nrows();
        }
        let g_stack = place_observer_gain(&a, &c_stack, &file.observer_poles).map_err(|e| {
            HarnessError::AssumptionViolated(format!("collective detectability: {e}"))
        })?;
        if !is_schur(&(&a - &g_stack * &c_stack)) {
            return Err(HarnessError::AssumptionViolated("collective detectability".into()));
        }
        // The stacked gain averages per-sensor contributions, so each
        // sensor's own gain is its column slice scaled back up by the count.
        let mut col = 0;
        for id in &graph.vertex_set {
            let sensor = sensors.get_mut(id).expect("validated above");
            let m_i = sensor.c.nrows();
            let slice = g_stack.view((0, col), (n, m_i)).into_owned() * k as f64;
            sensor.gain_per_task.insert(index, slice);
            col += m_i;
        }

        let trajectory = synthesize_reference(&start_state, &center, &d, tf.length, &model)
            .map_err(|e| HarnessError::Invalid(format!("task {index}: {e}")))?;
        start_state = trajectory.states.last().expect("nonempty").clone();

        union.extend(graph.vertex_set.iter().copied());
        tasks.push(TaskSpec {
            index,
            d,
            c: center,
            radius: tf.radius,
            dwell: tf.dwell,
            trajectory,
            graph,
            designated_sensor: tf.designated,
        });
    }
    if tasks.is_empty() {
        return Err(HarnessError::Invalid("scenario declares no tasks".into()));
    }
    union.sort_unstable();
    union.dedup();

    Ok(Scenario {
        name: file.name.unwrap_or_else(|| "scenario".into()),
        model,
        sensors,
        tasks,
        k_gain,
        initial_state,
        first_reference_start,
        max_ticks: file.max_ticks,
        w_elem: file.model.process_noise_elem,
        v_elem: file.model.measurement_noise_elem,
        init_est_elem: file.model.initial_estimate_elem,
        sensor_union: union,
    })
}

/// Default first reference point: the initial state's constrained positions
/// at rest (zero velocities), using the first task's selector.
fn default_reference_start(
    initial_state: &Vector,
    tasks: &[TaskFile],
    n: usize,
) -> Result<Vector, HarnessError> {
    let first = tasks
        .first()
        .ok_or_else(|| HarnessError::Invalid("scenario declares no tasks".into()))?;
    let d = to_matrix(&first.d, "task.d")?;
    let mut start = Vector::zeros(n);
    for row in 0..d.nrows() {
        for col in 0..n {
            if d[(row, col)] == 1.0 {
                start[col] = initial_state[col];
            }
        }
    }
    Ok(start)
}
