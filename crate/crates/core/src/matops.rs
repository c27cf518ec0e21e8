//! Dense small-matrix linear algebra: discrete Lyapunov/Riccati solving,
//! symmetric eigendecomposition, Schur-stability tests, spectral norms and
//! pole placement for gain synthesis.
//!
//! Everything here operates on `nalgebra` dynamic matrices; the plants and
//! graphs in this crate are tiny (n <= 12), so robustness and determinism
//! matter far more than speed.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use thiserror::Error;

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Numeric tolerances used across the linear-algebra layer.
#[derive(Debug, Clone, Copy)]
pub struct Tolerances {
    /// Spectral radius must be below `1 - schur_margin` to count as Schur stable.
    pub schur_margin: f64,
    /// Max allowed asymmetry `|m_ij - m_ji|` for symmetric-only routines.
    pub symmetry: f64,
    /// Max allowed operator-norm residual of `F^T P F + I - P`.
    pub riccati_residual: f64,
    /// Eigen reconstruction error budget, relative to `1 + ||M||`.
    pub eigen_reconstruction: f64,
    /// Max allowed mismatch between requested and achieved closed-loop poles.
    pub pole_match: f64,
}

pub const TOL: Tolerances = Tolerances {
    schur_margin: 1e-12,
    symmetry: 1e-10,
    riccati_residual: 1e-9,
    eigen_reconstruction: 1e-9,
    pole_match: 1e-6,
};

#[derive(Debug, Error)]
pub enum MatOpsError {
    #[error("matrix is not Schur stable (spectral radius {0})")]
    NotSchurStable(f64),
    #[error("iterative refinement of the Lyapunov solution did not converge")]
    NoConvergence,
    #[error("matrix is not symmetric (max asymmetry {0})")]
    NotSymmetric(f64),
    #[error("(A, B) is not controllable at pole {0}")]
    NotControllable(Complex64),
    #[error("(A, C) is not observable at pole {0}")]
    NotObservable(Complex64),
    #[error("pole placement failed: {0}")]
    PlacementFailed(String),
}

/// Solution of `F^T P F + I = P` together with its residual.
#[derive(Debug, Clone)]
pub struct RiccatiSolution {
    pub p: Matrix,
    pub residual: f64,
}

impl RiccatiSolution {
    pub fn lambda_min(&self) -> f64 {
        let ev = sym_eigvals(&self.p).expect("P is symmetric by construction");
        ev[0]
    }

    pub fn lambda_max(&self) -> f64 {
        let ev = sym_eigvals(&self.p).expect("P is symmetric by construction");
        ev[ev.len() - 1]
    }
}

/// Spectral radius via the complex eigenvalues of a real square matrix.
pub fn spectral_radius(m: &Matrix) -> f64 {
    assert_eq!(m.nrows(), m.ncols(), "spectral_radius needs a square matrix");
    if m.iter().all(|x| *x == 0.0) {
        return 0.0;
    }
    // Bounded QR iteration; the unbounded variant can spin on degenerate
    // inputs. Fall back to a Gelfand estimate via repeated squaring, which
    // overestimates slightly and therefore stays safe for stability checks.
    match nalgebra::linalg::Schur::try_new(m.clone(), 1e-14, 100_000) {
        Some(schur) => schur
            .complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max),
        None => {
            // ||m^64||^(1/64) with the norm factored out of each squaring
            // so large powers cannot overflow.
            let mut q = m.clone();
            let mut log_scale = 0.0f64;
            let mut k = 1u64;
            for _ in 0..6 {
                let n = spectral_norm(&q);
                if n == 0.0 {
                    return 0.0;
                }
                q /= n;
                q = &q * &q;
                log_scale = 2.0 * (log_scale + n.ln());
                k *= 2;
            }
            ((log_scale + spectral_norm(&q).ln()) / k as f64).exp()
        }
    }
}

/// True iff all eigenvalues are strictly inside the unit disk.
pub fn is_schur(m: &Matrix) -> bool {
    spectral_radius(m) < 1.0 - TOL.schur_margin
}

/// Eigenvalues through a bounded QR iteration. Degenerate inputs that defeat
/// the iteration are regularized by a tiny diagonal shift (exact on the
/// spectrum up to the shift, well below the placement tolerance).
pub fn complex_eigs(m: &Matrix) -> Vec<Complex64> {
    assert_eq!(m.nrows(), m.ncols(), "complex_eigs needs a square matrix");
    if let Some(s) = nalgebra::linalg::Schur::try_new(m.clone(), 1e-14, 100_000) {
        return s.complex_eigenvalues().iter().copied().collect();
    }
    let eps = 1e-9 * (1.0 + spectral_norm(m));
    let shifted = m + Matrix::identity(m.nrows(), m.ncols()) * eps;
    let s = nalgebra::linalg::Schur::try_new(shifted, 1e-14, 100_000)
        .expect("shifted QR iteration converges");
    s.complex_eigenvalues().iter().map(|z| z - eps).collect()
}

/// Largest singular value (induced 2-norm).
pub fn spectral_norm(m: &Matrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().svd(false, false).singular_values.max()
}

/// Eigenvalues of a symmetric matrix, sorted ascending.
pub fn sym_eigvals(m: &Matrix) -> Result<Vec<f64>, MatOpsError> {
    assert_eq!(m.nrows(), m.ncols(), "sym_eigvals needs a square matrix");
    let mut asym = 0.0f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            asym = asym.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    let scale = 1.0 + spectral_norm(m);
    if asym > TOL.symmetry * scale {
        return Err(MatOpsError::NotSymmetric(asym));
    }
    let sym = (m + m.transpose()) * 0.5;
    let mut ev: Vec<f64> = sym.symmetric_eigen().eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(ev)
}

/// Solves the discrete Lyapunov equation `F^T P F + I = P` for Schur-stable `F`.
///
/// Small systems are solved exactly through the vectorized linear system
/// `(I - F^T (x) F^T) vec(P) = vec(I)`; larger ones fall back to fixed-point
/// iteration on the defining recursion.
pub fn solve_dlyap(f: &Matrix) -> Result<RiccatiSolution, MatOpsError> {
    let n = f.nrows();
    assert_eq!(n, f.ncols(), "solve_dlyap needs a square matrix");
    let rho = spectral_radius(f);
    if rho >= 1.0 - TOL.schur_margin {
        return Err(MatOpsError::NotSchurStable(rho));
    }

    let p = if n <= 8 {
        dlyap_vectorized(f).or_else(|| dlyap_fixed_point(f))
    } else {
        dlyap_fixed_point(f)
    };
    let p = p.ok_or(MatOpsError::NoConvergence)?;

    let p = (&p + p.transpose()) * 0.5;
    let residual = spectral_norm(&(f.transpose() * &p * f + Matrix::identity(n, n) - &p));
    // One refinement pass through the fixed-point map tightens the residual
    // when the vectorized solve was marginal.
    if residual > TOL.riccati_residual {
        return Err(MatOpsError::NoConvergence);
    }
    Ok(RiccatiSolution { p, residual })
}

fn dlyap_vectorized(f: &Matrix) -> Option<Matrix> {
    let n = f.nrows();
    let ft = f.transpose();
    let kron = ft.kronecker(&ft);
    let system = Matrix::identity(n * n, n * n) - kron;
    let rhs = Vector::from_column_slice(Matrix::identity(n, n).as_slice());
    let sol = system.lu().solve(&rhs)?;
    Some(Matrix::from_column_slice(n, n, sol.as_slice()))
}

fn dlyap_fixed_point(f: &Matrix) -> Option<Matrix> {
    let n = f.nrows();
    let eye = Matrix::identity(n, n);
    let mut p = eye.clone();
    for _ in 0..200_000 {
        let next = f.transpose() * &p * f + &eye;
        let delta = spectral_norm(&(&next - &p));
        p = next;
        if delta < 1e-14 * (1.0 + spectral_norm(&p)) {
            return Some(p);
        }
    }
    None
}

/// Finds `K` with the eigenvalues of `A + B K` at `poles`.
///
/// Eigenstructure assignment: for each desired pole we pick a null vector of
/// `[A - pI, B]`, choosing directions that keep the assembled eigenvector
/// matrix well conditioned. Repeated poles take independent directions from
/// the same null space when available, and Jordan chains otherwise.
pub fn place_state_gain(a: &Matrix, b: &Matrix, poles: &[f64]) -> Result<Matrix, MatOpsError> {
    let poles: Vec<Complex64> = poles.iter().map(|&p| Complex64::new(p, 0.0)).collect();
    place_state_gain_complex(a, b, &poles)
}

/// As [`place_state_gain`] but accepting complex poles (closed under conjugation).
pub fn place_state_gain_complex(
    a: &Matrix,
    b: &Matrix,
    poles: &[Complex64],
) -> Result<Matrix, MatOpsError> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "A must be square");
    assert_eq!(n, b.nrows(), "B must have n rows");
    if poles.len() != n {
        return Err(MatOpsError::PlacementFailed(format!(
            "need {n} poles, got {}",
            poles.len()
        )));
    }
    for p in poles {
        if p.norm() >= 1.0 {
            return Err(MatOpsError::PlacementFailed(format!(
                "pole {p} is not inside the unit disk"
            )));
        }
    }
    let k = eigenstructure_assign(a, b, poles)?;
    if k.iter().any(|x| !x.is_finite()) {
        return Err(MatOpsError::PlacementFailed(
            "assignment produced a non-finite gain".into(),
        ));
    }

    let mut achieved: Vec<Complex64> = complex_eigs(&(a + b * &k));
    let mut wanted = poles.to_vec();
    let order =
        |x: &Complex64, y: &Complex64| x.re.total_cmp(&y.re).then(x.im.total_cmp(&y.im));
    achieved.sort_by(order);
    wanted.sort_by(order);
    let worst = achieved
        .iter()
        .zip(&wanted)
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max);
    if worst > TOL.pole_match {
        return Err(MatOpsError::PlacementFailed(format!(
            "achieved spectrum off by {worst:.3e}"
        )));
    }
    Ok(k)
}

/// Finds `G` with the eigenvalues of `A - G C` at `poles`, by duality.
pub fn place_observer_gain(a: &Matrix, c_stack: &Matrix, poles: &[f64]) -> Result<Matrix, MatOpsError> {
    let at = a.transpose();
    let ct = c_stack.transpose();
    let k = place_state_gain(&at, &ct, poles).map_err(|e| match e {
        MatOpsError::NotControllable(p) => MatOpsError::NotObservable(p),
        other => other,
    })?;
    // A^T + C^T K has the target spectrum, so does A + K^T C; G = -K^T.
    Ok(-k.transpose())
}

type CMatrix = DMatrix<Complex64>;
type CVector = DVector<Complex64>;

fn eigenstructure_assign(
    a: &Matrix,
    b: &Matrix,
    poles: &[Complex64],
) -> Result<Matrix, MatOpsError> {
    let n = a.nrows();
    let m = b.ncols();
    let ac = a.map(|x| Complex64::new(x, 0.0));
    let bc = b.map(|x| Complex64::new(x, 0.0));

    // Group into distinct poles with multiplicities; conjugate pairs are
    // processed once through their upper-half representative.
    let mut groups: Vec<(Complex64, usize)> = Vec::new();
    let mut remaining = poles.to_vec();
    while let Some(p) = remaining.first().copied() {
        if p.im < -1e-12 {
            // Handled through the conjugate; make sure it exists.
            let conj = Complex64::new(p.re, -p.im);
            match remaining.iter().position(|q| (q - conj).norm() < 1e-12) {
                Some(idx) => {
                    remaining.remove(idx);
                    remaining.remove(0);
                    match groups.iter_mut().find(|(g, _)| (*g - conj).norm() < 1e-12) {
                        Some((_, mu)) => *mu += 1,
                        None => groups.push((conj, 1)),
                    }
                    continue;
                }
                None => {
                    return Err(MatOpsError::PlacementFailed(format!(
                        "pole {p} lacks a conjugate partner"
                    )))
                }
            }
        }
        if p.im > 1e-12 {
            let conj = Complex64::new(p.re, -p.im);
            let idx = remaining
                .iter()
                .skip(1)
                .position(|q| (q - conj).norm() < 1e-12)
                .map(|i| i + 1)
                .ok_or_else(|| {
                    MatOpsError::PlacementFailed(format!("pole {p} lacks a conjugate partner"))
                })?;
            remaining.remove(idx);
        }
        remaining.remove(0);
        match groups.iter_mut().find(|(g, _)| (*g - p).norm() < 1e-12) {
            Some((_, mu)) => *mu += 1,
            None => groups.push((p, 1)),
        }
    }

    let mut v_cols: Vec<CVector> = Vec::new(); // eigenvector candidates, complex
    let mut w_cols: Vec<CVector> = Vec::new();
    let mut real_v: Vec<Vector> = Vec::new();
    let mut real_w: Vec<Vector> = Vec::new();

    for (p, mu) in groups {
        let pencil = hstack_c(&(&ac - CMatrix::identity(n, n) * p), &bc);
        let null = nullspace_c(&pencil);
        if null.is_empty() {
            return Err(MatOpsError::NotControllable(p));
        }
        let mut chain_tail: Vec<(CVector, CVector)> = Vec::new();
        for pick in 0..mu {
            let (v, w) = if pick < null.len() {
                pick_null_direction(&null, n, &v_cols)
            } else {
                // Jordan chain: (A - pI) v_{j+1} + B w_{j+1} = v_j.
                let prev = chain_tail
                    .last()
                    .map(|(v, _)| v.clone())
                    .ok_or_else(|| MatOpsError::PlacementFailed("empty chain".into()))?;
                solve_consistent_c(&pencil, &prev).ok_or_else(|| {
                    MatOpsError::PlacementFailed(format!(
                        "cannot extend Jordan chain at pole {p}"
                    ))
                })?
            };
            chain_tail.push((v.clone(), w.clone()));
            v_cols.push(v.clone());
            w_cols.push(w.clone());
            if p.im.abs() > 1e-12 {
                real_v.push(v.map(|z| z.re));
                real_v.push(v.map(|z| z.im));
                real_w.push(w.map(|z| z.re));
                real_w.push(w.map(|z| z.im));
            } else {
                real_v.push(v.map(|z| z.re));
                real_w.push(w.map(|z| z.re));
            }
        }
    }

    if real_v.len() != n {
        return Err(MatOpsError::PlacementFailed(format!(
            "assembled {} eigenvector columns, expected {n}",
            real_v.len()
        )));
    }
    let vmat = Matrix::from_columns(&real_v);
    let wmat = Matrix::from_columns(&real_w);
    let vinv = vmat.clone().try_inverse().ok_or_else(|| {
        MatOpsError::PlacementFailed("eigenvector matrix is singular".into())
    })?;
    let _ = m;
    Ok(wmat * vinv)
}

/// Chooses the null-space combination whose state part is most independent
/// from the eigenvector columns selected so far.
fn pick_null_direction(null: &[CVector], n: usize, chosen: &[CVector]) -> (CVector, CVector) {
    let k = null.len();
    // Residuals of the state parts after projecting out the chosen span.
    let basis: Vec<CVector> = null.iter().map(|z| z.rows(0, n).into_owned()).collect();
    let mut ortho: Vec<CVector> = Vec::new();
    for c in chosen {
        let mut q = c.clone();
        for o in &ortho {
            let coef = o.dotc(&q);
            q -= o * coef;
        }
        let nn = q.norm();
        if nn > 1e-12 {
            ortho.push(q / Complex64::new(nn, 0.0));
        }
    }
    let resid: Vec<CVector> = basis
        .iter()
        .map(|v| {
            let mut r = v.clone();
            for o in &ortho {
                let coef = o.dotc(&r);
                r -= o * coef;
            }
            r
        })
        .collect();
    // Dominant direction of the residual Gram matrix by power iteration.
    let mut gram = CMatrix::zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            gram[(i, j)] = resid[i].dotc(&resid[j]);
        }
    }
    let mut c = CVector::from_element(k, Complex64::new(1.0, 0.0));
    for (i, item) in c.iter_mut().enumerate() {
        *item = Complex64::new(1.0 + 0.1 * i as f64, 0.0);
    }
    for _ in 0..200 {
        let next = &gram * &c;
        let nn = next.norm();
        if nn < 1e-300 {
            break;
        }
        c = next / Complex64::new(nn, 0.0);
    }
    let v = columns_combination(&null.iter().map(|z| z.rows(0, n).into_owned()).collect::<Vec<_>>(), &c);
    let w = columns_combination(
        &null.iter().map(|z| z.rows(n, z.len() - n).into_owned()).collect::<Vec<_>>(),
        &c,
    );
    let nv = v.norm().max(1e-300);
    (v / Complex64::new(nv, 0.0), w / Complex64::new(nv, 0.0))
}

fn columns_combination(cols: &[CVector], coef: &CVector) -> CVector {
    let mut out = CVector::zeros(cols[0].len());
    for (col, &c) in cols.iter().zip(coef.iter()) {
        out += col * c;
    }
    out
}

fn hstack_c(left: &CMatrix, right: &CMatrix) -> CMatrix {
    let rows = left.nrows();
    let mut out = CMatrix::zeros(rows, left.ncols() + right.ncols());
    out.view_mut((0, 0), (rows, left.ncols())).copy_from(left);
    out.view_mut((0, left.ncols()), (rows, right.ncols())).copy_from(right);
    out
}

/// Null-space basis via Gauss-Jordan elimination with partial pivoting.
fn nullspace_c(m: &CMatrix) -> Vec<CVector> {
    let rows = m.nrows();
    let cols = m.ncols();
    let mut a = m.clone();
    let scale: f64 = a.iter().map(|z| z.norm()).fold(0.0, f64::max).max(1.0);
    let eps = 1e-11 * scale;
    let mut pivots: Vec<usize> = Vec::new();
    let mut r = 0usize;
    for c in 0..cols {
        if r >= rows {
            break;
        }
        let (best, mag) = (r..rows)
            .map(|i| (i, a[(i, c)].norm()))
            .max_by(|x, y| x.1.partial_cmp(&y.1).unwrap())
            .unwrap();
        if mag <= eps {
            continue;
        }
        a.swap_rows(r, best);
        let piv = a[(r, c)];
        for j in 0..cols {
            a[(r, j)] /= piv;
        }
        for i in 0..rows {
            if i != r {
                let factor = a[(i, c)];
                if factor.norm() > 0.0 {
                    for j in 0..cols {
                        let sub = factor * a[(r, j)];
                        a[(i, j)] -= sub;
                    }
                }
            }
        }
        pivots.push(c);
        r += 1;
    }
    let free: Vec<usize> = (0..cols).filter(|c| !pivots.contains(c)).collect();
    let mut basis = Vec::new();
    for &fc in &free {
        let mut v = CVector::zeros(cols);
        v[fc] = Complex64::new(1.0, 0.0);
        for (row, &pc) in pivots.iter().enumerate() {
            v[pc] = -a[(row, fc)];
        }
        let nn = v.norm();
        basis.push(v / Complex64::new(nn, 0.0));
    }
    basis
}

/// Solves `M z = rhs` if consistent (minimum-norm through the RREF), else None.
fn solve_consistent_c(m: &CMatrix, rhs: &CVector) -> Option<(CVector, CVector)> {
    let rows = m.nrows();
    let cols = m.ncols();
    let mut a = hstack_c(m, &CMatrix::from_column_slice(rows, 1, rhs.as_slice()));
    let scale: f64 = a.iter().map(|z| z.norm()).fold(0.0, f64::max).max(1.0);
    let eps = 1e-10 * scale;
    let mut pivots: Vec<usize> = Vec::new();
    let mut r = 0usize;
    for c in 0..cols {
        if r >= rows {
            break;
        }
        let (best, mag) = (r..rows)
            .map(|i| (i, a[(i, c)].norm()))
            .max_by(|x, y| x.1.partial_cmp(&y.1).unwrap())
            .unwrap();
        if mag <= eps {
            continue;
        }
        a.swap_rows(r, best);
        let piv = a[(r, c)];
        for j in 0..=cols {
            a[(r, j)] /= piv;
        }
        for i in 0..rows {
            if i != r {
                let factor = a[(i, c)];
                for j in 0..=cols {
                    let sub = factor * a[(r, j)];
                    a[(i, j)] -= sub;
                }
            }
        }
        pivots.push(c);
        r += 1;
    }
    for i in r..rows {
        if a[(i, cols)].norm() > eps {
            return None; // inconsistent
        }
    }
    let mut z = CVector::zeros(cols);
    for (row, &pc) in pivots.iter().enumerate() {
        z[pc] = a[(row, cols)];
    }
    let n = rhs.len();
    Some((z.rows(0, n).into_owned(), z.rows(n, cols - n).into_owned()))
}
