//! Sensor-network graphs: Laplacians, connectivity, consensus step sizes and
//! the per-round consensus contraction rate.

use crate::matops::{sym_eigvals, Matrix};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("adjacency matrix is not symmetric")]
    NotSymmetric,
    #[error("adjacency entries must be 0 or 1 with a zero diagonal")]
    BadEntries,
    #[error("graph is not connected")]
    NotConnected,
    #[error("consensus step size {0} outside (0, 2/lambda_max)")]
    AlphaOutOfRange(f64),
    #[error("vertex set must have at least 2 sensors")]
    TooFewVertices,
    #[error("vertex ids must be distinct")]
    DuplicateVertex,
}

/// Connectivity threshold on the algebraic connectivity lambda_2.
pub const CONNECTIVITY_TOL: f64 = 1e-9;

/// An undirected sensor graph active during one task.
///
/// `vertex_set` holds sorted global sensor ids; the adjacency and Laplacian
/// index sensors by position in that list.
#[derive(Debug, Clone)]
pub struct SensorGraph {
    pub vertex_set: Vec<usize>,
    pub adjacency: Matrix,
    pub laplacian: Matrix,
    pub alpha: f64,
    pub rounds: usize,
}

impl SensorGraph {
    /// Builds a graph over `vertices` (global ids) with the given adjacency,
    /// the step size rule `alpha = 2/(lambda_2 + lambda_max)` unless
    /// overridden, and `rounds` consensus exchanges per tick.
    pub fn new(
        vertices: Vec<usize>,
        adjacency: Matrix,
        alpha: Option<f64>,
        rounds: usize,
    ) -> Result<Self, NetworkError> {
        let mut vertex_set = vertices;
        vertex_set.sort_unstable();
        if vertex_set.windows(2).any(|w| w[0] == w[1]) {
            return Err(NetworkError::DuplicateVertex);
        }
        if vertex_set.len() < 2 {
            return Err(NetworkError::TooFewVertices);
        }
        if adjacency.nrows() != vertex_set.len() || adjacency.ncols() != vertex_set.len() {
            return Err(NetworkError::BadEntries);
        }
        let laplacian = build_laplacian(&adjacency)?;
        if !check_connected(&laplacian) {
            return Err(NetworkError::NotConnected);
        }
        let alpha = match alpha {
            Some(a) => a,
            None => default_alpha(&laplacian)?,
        };
        let ev = sym_eigvals(&laplacian).expect("Laplacian is symmetric");
        let lmax = ev[ev.len() - 1];
        if alpha <= 0.0 || alpha >= 2.0 / lmax {
            return Err(NetworkError::AlphaOutOfRange(alpha));
        }
        Ok(SensorGraph { vertex_set, adjacency, laplacian, alpha, rounds })
    }

    /// Position of a global sensor id inside the sorted vertex set.
    pub fn position(&self, sensor_id: usize) -> Option<usize> {
        self.vertex_set.binary_search(&sensor_id).ok()
    }

    /// Neighbor positions (local indices) of the sensor at local index `i`.
    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        (0..self.vertex_set.len())
            .filter(|&j| self.adjacency[(i, j)] > 0.5)
            .collect()
    }

    pub fn lambda2(&self) -> f64 {
        let ev = sym_eigvals(&self.laplacian).expect("Laplacian is symmetric");
        ev[1]
    }

    pub fn lambda_max(&self) -> f64 {
        let ev = sym_eigvals(&self.laplacian).expect("Laplacian is symmetric");
        ev[ev.len() - 1]
    }

    /// Per-round shrink factor of disagreement orthogonal to the average.
    pub fn contraction(&self) -> f64 {
        consensus_contraction(&self.laplacian, self.alpha)
            .expect("validated at construction")
    }
}

/// L = D - A with D the degree matrix. Row sums are exactly zero.
pub fn build_laplacian(adjacency: &Matrix) -> Result<Matrix, NetworkError> {
    let n = adjacency.nrows();
    if adjacency.ncols() != n {
        return Err(NetworkError::NotSymmetric);
    }
    for i in 0..n {
        if adjacency[(i, i)] != 0.0 {
            return Err(NetworkError::BadEntries);
        }
        for j in 0..n {
            let a = adjacency[(i, j)];
            if a != 0.0 && a != 1.0 {
                return Err(NetworkError::BadEntries);
            }
            if a != adjacency[(j, i)] {
                return Err(NetworkError::NotSymmetric);
            }
        }
    }
    let mut l = -adjacency.clone();
    for i in 0..n {
        let degree: f64 = (0..n).map(|j| adjacency[(i, j)]).sum();
        l[(i, i)] = degree;
    }
    Ok(l)
}

/// True iff the algebraic connectivity lambda_2 is positive.
pub fn check_connected(laplacian: &Matrix) -> bool {
    if laplacian.nrows() < 2 {
        return true;
    }
    let ev = sym_eigvals(laplacian).expect("Laplacian is symmetric");
    ev[1] > CONNECTIVITY_TOL
}

/// Step size 2/(lambda_2 + lambda_max), always inside (0, 2/lambda_max).
pub fn default_alpha(laplacian: &Matrix) -> Result<f64, NetworkError> {
    if !check_connected(laplacian) {
        return Err(NetworkError::NotConnected);
    }
    let ev = sym_eigvals(laplacian).expect("Laplacian is symmetric");
    Ok(2.0 / (ev[1] + ev[ev.len() - 1]))
}

/// lambda_c = max(|1 - alpha*lambda_2|, |1 - alpha*lambda_max|), in [0, 1).
pub fn consensus_contraction(laplacian: &Matrix, alpha: f64) -> Result<f64, NetworkError> {
    if !check_connected(laplacian) {
        return Err(NetworkError::NotConnected);
    }
    let ev = sym_eigvals(laplacian).expect("Laplacian is symmetric");
    let (l2, lmax) = (ev[1], ev[ev.len() - 1]);
    if alpha <= 0.0 || alpha >= 2.0 / lmax {
        return Err(NetworkError::AlphaOutOfRange(alpha));
    }
    Ok((1.0 - alpha * l2).abs().max((1.0 - alpha * lmax).abs()))
}

/// Ring adjacency over `k` vertices (each connected to its two neighbors).
pub fn ring_adjacency(k: usize) -> Matrix {
    let mut a = Matrix::zeros(k, k);
    for i in 0..k {
        let j = (i + 1) % k;
        if i != j {
            a[(i, j)] = 1.0;
            a[(j, i)] = 1.0;
        }
    }
    a
}

/// Block consensus operator I - alpha*(L (x) I_n) applied `rounds` times is
/// used in tests; exposed for the error-recursion oracle.
pub fn block_consensus_operator(graph: &SensorGraph, n: usize) -> Matrix {
    let k = graph.vertex_set.len();
    let eye = Matrix::identity(k * n, k * n);
    let kron = graph.laplacian.kronecker(&Matrix::identity(n, n));
    eye - kron * graph.alpha
}
