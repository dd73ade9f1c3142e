//! Transition matrices over the macro state space and their spectral
//! analysis: invariant measures, eigenvalue moduli, spectral gaps, second
//! eigenvectors, mixing half-lives, and measure propagation.
//!
//! States `(i, j)` are flattened as `k = j (N+1) + i` (sites fast), a dense
//! enumeration of the `(N+1) x (C(N,2)+1)` grid.
//!
//! The stationary measure is computed structurally: the closed communicating
//! classes of the sparse support graph are found first; an absorbing
//! singleton gives an exact point mass, and a larger closed class is solved
//! by GTH elimination (subtraction-free state reduction, entrywise accurate).
//! The spectral gap from a dense Schur decomposition is refined by power
//! iteration on the transient block (when the chain has a trap) or on the
//! rank-one-deflated operator, with a left/right Rayleigh quotient; the
//! refinement is what resolves gaps of order 1e-6 to well below 1e-8.

use crate::kernel::macro_step_distribution;
use crate::micro::MacroState;
use crate::params::ModelParams;
use nalgebra::{Complex, DMatrix, DVector, Schur};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SpectralError {
    #[error("dimension mismatch: {0} vs {1}")]
    Dimension(usize, usize),
    #[error("state ({i},{j}) out of range for N={n}")]
    Domain { i: usize, j: usize, n: usize },
    #[error("requested {count} eigenvalues of a {dim}-dimensional matrix")]
    Count { count: usize, dim: usize },
    #[error("stationary residual {residual:.3e} exceeds tolerance")]
    Residual { residual: f64 },
    #[error("Schur decomposition did not converge")]
    EigenFailed,
    #[error("second eigenvalue is not numerically real and simple")]
    DegenerateSecond,
}

/// Dimension of the flat state space for `n` sites.
pub fn grid_dim(n: usize) -> usize {
    (n + 1) * (n * (n - 1) / 2 + 1)
}

/// Flat index of a state, `k = j (N+1) + i`. Panics out of range.
pub fn state_index(state: MacroState, n: usize) -> usize {
    try_state_index(state, n).expect("state on the grid")
}

/// Flat index with a domain error instead of a panic.
pub fn try_state_index(state: MacroState, n: usize) -> Result<usize, SpectralError> {
    if state.in_grid(n) {
        Ok(state.up_arcs * (n + 1) + state.up_sites)
    } else {
        Err(SpectralError::Domain { i: state.up_sites, j: state.up_arcs, n })
    }
}

/// Inverse of [`state_index`].
pub fn index_state(k: usize, n: usize) -> MacroState {
    try_index_state(k, n).expect("flat index within the grid")
}

pub fn try_index_state(k: usize, n: usize) -> Result<MacroState, SpectralError> {
    if k >= grid_dim(n) {
        return Err(SpectralError::Dimension(k, grid_dim(n)));
    }
    Ok(MacroState::new(k % (n + 1), k / (n + 1)))
}

/// Row-stochastic sparse transition matrix of the macro chain
/// (at most five nonzeros per row).
#[derive(Debug, Clone)]
pub struct TransitionMatrix {
    n: usize,
    dim: usize,
    rows: Vec<Vec<(usize, f64)>>,
}

impl TransitionMatrix {
    /// Assemble the matrix for one model instance; every row is exactly the
    /// one-step distribution of its state.
    pub fn assemble(params: &ModelParams) -> Self {
        let n = params.n;
        let dim = grid_dim(n);
        let mut rows = Vec::with_capacity(dim);
        for k in 0..dim {
            let s = index_state(k, n);
            let mut row: Vec<(usize, f64)> = macro_step_distribution(s.up_sites, s.up_arcs, params)
                .entries()
                .into_iter()
                .map(|(t, p)| (state_index(t, n), p))
                .collect();
            row.sort_unstable_by_key(|&(c, _)| c);
            rows.push(row);
        }
        TransitionMatrix { n, dim, rows }
    }

    /// Build from explicit rows (mainly for tests). Panics if a column index
    /// is out of range.
    pub fn from_rows(n: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        let dim = rows.len();
        assert!(rows.iter().flatten().all(|&(c, _)| c < dim));
        TransitionMatrix { n, dim, rows }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, a: usize) -> &[(usize, f64)] {
        &self.rows[a]
    }

    pub fn row_sum(&self, a: usize) -> f64 {
        self.rows[a].iter().map(|&(_, p)| p).sum()
    }

    /// Probability of the `a -> b` transition.
    pub fn entry(&self, a: usize, b: usize) -> f64 {
        self.rows[a]
            .iter()
            .find_map(|&(c, p)| (c == b).then_some(p))
            .unwrap_or(0.0)
    }

    /// Left action `mu -> mu M`.
    pub fn left_apply(&self, mu: &[f64]) -> Vec<f64> {
        assert_eq!(mu.len(), self.dim);
        let mut out = vec![0.0; self.dim];
        for (a, row) in self.rows.iter().enumerate() {
            let w = mu[a];
            if w != 0.0 {
                for &(b, p) in row {
                    out[b] += w * p;
                }
            }
        }
        out
    }

    /// Right action `x -> M x`.
    pub fn right_apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.dim);
        self.rows
            .iter()
            .map(|row| row.iter().map(|&(b, p)| p * x[b]).sum())
            .collect()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for (a, row) in self.rows.iter().enumerate() {
            for &(b, p) in row {
                m[(a, b)] = p;
            }
        }
        m
    }

    /// Coordinate triplets `(row, col, value)` in row-major order.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.rows
            .iter()
            .enumerate()
            .flat_map(|(a, row)| row.iter().map(move |&(b, p)| (a, b, p)))
    }
}

/// Whether a grid of values is a probability measure or a signed field
/// (eigenvector).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeasureKind {
    Probability,
    Signed,
}

/// Real values indexed by macro states.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasureGrid {
    n: usize,
    kind: MeasureKind,
    values: Vec<f64>,
}

impl MeasureGrid {
    pub fn from_values(n: usize, kind: MeasureKind, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), grid_dim(n));
        MeasureGrid { n, kind, values }
    }

    pub fn uniform(n: usize) -> Self {
        let dim = grid_dim(n);
        MeasureGrid { n, kind: MeasureKind::Probability, values: vec![1.0 / dim as f64; dim] }
    }

    pub fn point_mass(n: usize, state: MacroState) -> Self {
        let mut values = vec![0.0; grid_dim(n)];
        values[state_index(state, n)] = 1.0;
        MeasureGrid { n, kind: MeasureKind::Probability, values }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn kind(&self) -> MeasureKind {
        self.kind
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, state: MacroState) -> f64 {
        self.values[state_index(state, self.n)]
    }

    pub fn iter(&self) -> impl Iterator<Item = (MacroState, f64)> + '_ {
        self.values.iter().enumerate().map(|(k, &v)| (index_state(k, self.n), v))
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Expectation of a state function under a probability grid.
    pub fn expectation<F: Fn(MacroState) -> f64>(&self, f: F) -> f64 {
        self.iter().map(|(s, v)| v * f(s)).sum()
    }

    /// State with the largest value.
    pub fn argmax(&self) -> MacroState {
        let k = self
            .values
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(k, _)| k)
            .unwrap();
        index_state(k, self.n)
    }
}

/// Sup-norm distance between two grids of the same dimension.
pub fn variation_distance(a: &MeasureGrid, b: &MeasureGrid) -> Result<f64, SpectralError> {
    if a.values.len() != b.values.len() {
        return Err(SpectralError::Dimension(a.values.len(), b.values.len()));
    }
    Ok(a.values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max))
}

/// `n`-fold right propagation `mu -> mu M^n`.
pub fn propagate_measure(m: &TransitionMatrix, mu0: &MeasureGrid, steps: usize) -> MeasureGrid {
    assert_eq!(mu0.values.len(), m.dim);
    let mut v = mu0.values.clone();
    for _ in 0..steps {
        v = m.left_apply(&v);
    }
    MeasureGrid { n: mu0.n, kind: mu0.kind, values: v }
}

/// Strongly connected components of the support graph (iterative Tarjan).
fn strongly_connected_components(m: &TransitionMatrix) -> Vec<Vec<usize>> {
    let dim = m.dim;
    const UNSET: usize = usize::MAX;
    let mut index = vec![UNSET; dim];
    let mut low = vec![0usize; dim];
    let mut on_stack = vec![false; dim];
    let mut stack: Vec<usize> = Vec::new();
    let mut comps: Vec<Vec<usize>> = Vec::new();
    let mut next = 0usize;
    let mut frames: Vec<(usize, usize)> = Vec::new();

    for start in 0..dim {
        if index[start] != UNSET {
            continue;
        }
        index[start] = next;
        low[start] = next;
        next += 1;
        stack.push(start);
        on_stack[start] = true;
        frames.push((start, 0));
        while let Some(frame) = frames.last_mut() {
            let v = frame.0;
            if frame.1 < m.rows[v].len() {
                let (w, p) = m.rows[v][frame.1];
                frame.1 += 1;
                if p == 0.0 {
                    continue;
                }
                if index[w] == UNSET {
                    index[w] = next;
                    low[w] = next;
                    next += 1;
                    stack.push(w);
                    on_stack[w] = true;
                    frames.push((w, 0));
                } else if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                }
            } else {
                frames.pop();
                if let Some(parent) = frames.last() {
                    let u = parent.0;
                    low[u] = low[u].min(low[v]);
                }
                if low[v] == index[v] {
                    let mut comp = Vec::new();
                    loop {
                        let w = stack.pop().unwrap();
                        on_stack[w] = false;
                        comp.push(w);
                        if w == v {
                            break;
                        }
                    }
                    comp.sort_unstable();
                    comps.push(comp);
                }
            }
        }
    }
    comps
}

/// Closed communicating classes (recurrent classes), sorted by smallest
/// member.
pub fn closed_classes(m: &TransitionMatrix) -> Vec<Vec<usize>> {
    let comps = strongly_connected_components(m);
    let mut comp_of = vec![0usize; m.dim];
    for (c, comp) in comps.iter().enumerate() {
        for &v in comp {
            comp_of[v] = c;
        }
    }
    let mut closed: Vec<Vec<usize>> = comps
        .iter()
        .enumerate()
        .filter(|(c, comp)| {
            comp.iter()
                .all(|&v| m.rows[v].iter().all(|&(w, p)| p == 0.0 || comp_of[w] == *c))
        })
        .map(|(_, comp)| comp.clone())
        .collect();
    closed.sort_by_key(|c| c[0]);
    closed
}

/// GTH state-reduction solve of the stationary vector of an irreducible
/// stochastic matrix given densely. No subtractions, so entries keep full
/// relative accuracy.
fn gth_stationary(mut p: Vec<Vec<f64>>) -> Vec<f64> {
    let n = p.len();
    for k in (1..n).rev() {
        let s: f64 = p[k][..k].iter().sum();
        for i in 0..k {
            p[i][k] /= s;
        }
        for i in 0..k {
            let pik = p[i][k];
            if pik != 0.0 {
                let (head, tail) = p.split_at_mut(k);
                let pk = &tail[0];
                for (pij, pkj) in head[i][..k].iter_mut().zip(&pk[..k]) {
                    *pij += pik * pkj;
                }
            }
        }
    }
    let mut mu = vec![0.0; n];
    mu[0] = 1.0;
    for k in 1..n {
        mu[k] = (0..k).map(|i| mu[i] * p[i][k]).sum();
    }
    let total: f64 = mu.iter().sum();
    for x in &mut mu {
        *x /= total;
    }
    mu
}

/// Result of a stationary-measure solve.
#[derive(Debug, Clone)]
pub struct Stationary {
    pub measure: MeasureGrid,
    /// `max_k |(mu M - mu)_k|`.
    pub residual: f64,
    /// Number of closed communicating classes; more than one means the
    /// eigenvalue 1 is structurally multiple and `measure` is the invariant
    /// measure of the first class only.
    pub closed_classes: usize,
}

impl Stationary {
    pub fn multiple(&self) -> bool {
        self.closed_classes > 1
    }
}

/// Invariant measure `mu* M = mu*`.
pub fn stationary_measure(m: &TransitionMatrix) -> Result<Stationary, SpectralError> {
    let classes = closed_classes(m);
    let class = &classes[0];
    let mut values = vec![0.0; m.dim];
    if class.len() == 1 {
        values[class[0]] = 1.0;
    } else {
        let sub: Vec<Vec<f64>> = class
            .iter()
            .map(|&a| {
                let mut row = vec![0.0; class.len()];
                for &(b, p) in &m.rows[a] {
                    if let Ok(pos) = class.binary_search(&b) {
                        row[pos] = p;
                    }
                }
                row
            })
            .collect();
        for (pos, v) in gth_stationary(sub).into_iter().enumerate() {
            values[class[pos]] = v;
        }
    }
    let propagated = m.left_apply(&values);
    let residual = values
        .iter()
        .zip(&propagated)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    if residual > 1e-10 {
        return Err(SpectralError::Residual { residual });
    }
    Ok(Stationary {
        measure: MeasureGrid { n: m.n, kind: MeasureKind::Probability, values },
        residual,
        closed_classes: classes.len(),
    })
}

/// Dimension up to which the full spectrum is computed densely.
pub const DENSE_EIGEN_LIMIT: usize = 2000;

fn dense_eigenvalues(m: &TransitionMatrix) -> Result<Vec<Complex<f64>>, SpectralError> {
    let schur =
        Schur::try_new(m.to_dense(), f64::EPSILON, 0).ok_or(SpectralError::EigenFailed)?;
    Ok(schur.complex_eigenvalues().iter().copied().collect())
}

/// Moduli of the `count` largest eigenvalues, descending. Dense Schur up to
/// [`DENSE_EIGEN_LIMIT`]; a fully reorthogonalized Arnoldi projection above.
pub fn spectrum(m: &TransitionMatrix, count: usize) -> Result<Vec<f64>, SpectralError> {
    if count > m.dim {
        return Err(SpectralError::Count { count, dim: m.dim });
    }
    let eig = if m.dim <= DENSE_EIGEN_LIMIT {
        dense_eigenvalues(m)?
    } else {
        arnoldi_eigenvalues(m, (4 * count + 40).min(m.dim))?
    };
    let mut moduli: Vec<f64> = eig.iter().map(|z| z.norm()).collect();
    moduli.sort_by(|a, b| b.total_cmp(a));
    moduli.truncate(count);
    Ok(moduli)
}

/// Ritz eigenvalues from one Arnoldi sweep with subspace size `subspace`.
fn arnoldi_eigenvalues(
    m: &TransitionMatrix,
    subspace: usize,
) -> Result<Vec<Complex<f64>>, SpectralError> {
    let dim = m.dim;
    // Deterministic, structureless start vector.
    let mut v0: Vec<f64> = (0..dim)
        .map(|k| {
            let x = (k as f64 + 1.0) * 0.754877666246693;
            x - x.floor() + 0.5
        })
        .collect();
    let norm = v0.iter().map(|x| x * x).sum::<f64>().sqrt();
    v0.iter_mut().for_each(|x| *x /= norm);

    let mut basis: Vec<Vec<f64>> = vec![v0];
    let mut h = DMatrix::<f64>::zeros(subspace + 1, subspace);
    let mut steps = subspace;
    for k in 0..subspace {
        let mut w = m.right_apply(&basis[k]);
        // Two Gram-Schmidt passes.
        for _ in 0..2 {
            for (i, vi) in basis.iter().enumerate() {
                let c: f64 = w.iter().zip(vi).map(|(a, b)| a * b).sum();
                h[(i, k)] += c;
                w.iter_mut().zip(vi).for_each(|(a, b)| *a -= c * b);
            }
        }
        let nw = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        h[(k + 1, k)] = nw;
        if nw < 1e-12 {
            steps = k + 1;
            break;
        }
        w.iter_mut().for_each(|x| *x /= nw);
        basis.push(w);
    }
    let hk = h.view((0, 0), (steps, steps)).into_owned();
    let schur = Schur::try_new(hk, f64::EPSILON, 0).ok_or(SpectralError::EigenFailed)?;
    Ok(schur.complex_eigenvalues().iter().copied().collect())
}

/// A second-eigenvalue estimate with provenance.
#[derive(Debug, Clone)]
pub struct Lambda2 {
    /// Second-largest eigenvalue modulus.
    pub value: f64,
    /// Left eigenvector when the refinement converged (full dimension,
    /// unnormalized).
    pub left: Option<Vec<f64>>,
    /// `max |v M - lambda v|` of the refined pair, when available.
    pub residual: Option<f64>,
    /// True when the power-iteration refinement was used; false means the
    /// value comes from the dense (or Arnoldi) eigensolve.
    pub refined: bool,
}

const REFINE_MAX_ITERS: usize = 400_000;
const REFINE_CHECK_EVERY: usize = 64;
const REFINE_RESIDUAL_TOL: f64 = 1e-9;
// Give up early when the iteration is clearly not heading anywhere (complex
// second eigenvalue pairs make the Rayleigh quotient oscillate forever).
const REFINE_BAIL_ITERS: usize = 60_000;
const REFINE_BAIL_RESIDUAL: f64 = 1e-4;

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, &x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Left/right power iteration with Rayleigh-quotient convergence check.
/// Returns `(eigenvalue, left_vector, residual)`.
fn power_refine<R, L>(dim: usize, right: R, left: L) -> Option<(f64, Vec<f64>, f64)>
where
    R: Fn(&[f64]) -> Vec<f64>,
    L: Fn(&[f64]) -> Vec<f64>,
{
    let mut x = vec![1.0; dim];
    let mut y = vec![1.0; dim];
    let mut prev_rho = f64::NAN;
    let mut stable = 0;
    let mut iters = 0;
    while iters < REFINE_MAX_ITERS {
        for _ in 0..REFINE_CHECK_EVERY {
            x = right(&x);
            y = left(&y);
            iters += 1;
        }
        let (nx, ny) = (max_abs(&x), max_abs(&y));
        if nx == 0.0 || ny == 0.0 || !nx.is_finite() || !ny.is_finite() {
            return None;
        }
        x.iter_mut().for_each(|v| *v /= nx);
        y.iter_mut().for_each(|v| *v /= ny);
        let bx = right(&x);
        let denom = dot(&y, &x);
        if denom.abs() < 1e-300 {
            return None;
        }
        let rho = dot(&y, &bx) / denom;
        if iters >= REFINE_BAIL_ITERS {
            let res_r = bx
                .iter()
                .zip(&x)
                .map(|(a, b)| (a - rho * b).abs())
                .fold(0.0f64, f64::max);
            if res_r > REFINE_BAIL_RESIDUAL {
                return None;
            }
        }
        if (rho - prev_rho).abs() <= 1e-14 * rho.abs().max(1e-3) {
            stable += 1;
            if stable >= 3 {
                let yb = left(&y);
                let res_l = yb
                    .iter()
                    .zip(&y)
                    .map(|(a, b)| (a - rho * b).abs())
                    .fold(0.0f64, f64::max);
                let res_r = bx
                    .iter()
                    .zip(&x)
                    .map(|(a, b)| (a - rho * b).abs())
                    .fold(0.0f64, f64::max);
                if res_l.max(res_r) <= REFINE_RESIDUAL_TOL {
                    return Some((rho, y, res_l.max(res_r)));
                }
                stable = 0;
            }
        } else {
            stable = 0;
        }
        prev_rho = rho;
    }
    None
}

/// Try to refine the second eigenvalue by structured power iteration.
/// Returns `(lambda2, full-dimension left eigenvector, residual)`.
fn refine_lambda2(m: &TransitionMatrix, st: &Stationary) -> Option<(f64, Vec<f64>, f64)> {
    if st.closed_classes != 1 {
        return None;
    }
    let classes = closed_classes(m);
    let class = &classes[0];
    if class.len() == 1 {
        // Absorbing chain: the dominant eigenvalue of the transient block is
        // the second eigenvalue of the full matrix.
        let trap = class[0];
        let keep: Vec<usize> = (0..m.dim).filter(|&k| k != trap).collect();
        let pos = |k: usize| if k < trap { k } else { k - 1 };
        let rows: Vec<Vec<(usize, f64)>> = keep
            .iter()
            .map(|&a| {
                m.rows[a]
                    .iter()
                    .filter(|&&(b, p)| b != trap && p != 0.0)
                    .map(|&(b, p)| (pos(b), p))
                    .collect()
            })
            .collect();
        let right = |x: &[f64]| -> Vec<f64> {
            rows.iter()
                .map(|row| row.iter().map(|&(b, p)| p * x[b]).sum())
                .collect()
        };
        let left = |y: &[f64]| -> Vec<f64> {
            let mut out = vec![0.0; y.len()];
            for (a, row) in rows.iter().enumerate() {
                let w = y[a];
                if w != 0.0 {
                    for &(b, p) in row {
                        out[b] += w * p;
                    }
                }
            }
            out
        };
        let (rho, y_t, residual) = power_refine(keep.len(), right, left)?;
        if !(0.0 < rho && rho < 1.0) {
            return None;
        }
        // Embed the left eigenvector: the trap component balances the inflow.
        let mut full = vec![0.0; m.dim];
        for (p, &a) in keep.iter().enumerate() {
            full[a] = y_t[p];
        }
        let inflow: f64 = keep.iter().map(|&a| full[a] * m.entry(a, trap)).sum();
        full[trap] = inflow / (rho - 1.0);
        Some((rho, full, residual))
    } else {
        // Irreducible chain: deflate the Perron pair (1, ones, mu*).
        let mu = st.measure.values();
        let right = |x: &[f64]| -> Vec<f64> {
            let mx = m.right_apply(x);
            let s = dot(mu, x);
            mx.into_iter().map(|v| v - s).collect()
        };
        let left = |y: &[f64]| -> Vec<f64> {
            let ym = m.left_apply(y);
            let s: f64 = y.iter().sum();
            ym.into_iter().zip(mu).map(|(v, w)| v - s * w).collect()
        };
        let (rho, y, residual) = power_refine(m.dim, right, left)?;
        if rho.abs() >= 1.0 {
            return None;
        }
        Some((rho, y, residual))
    }
}

/// Second-largest eigenvalue modulus, refined when the structured iteration
/// converges, otherwise from the dense (or Arnoldi) spectrum.
pub fn lambda2(m: &TransitionMatrix) -> Result<Lambda2, SpectralError> {
    let st = stationary_measure(m)?;
    lambda2_with(m, &st)
}

pub(crate) fn lambda2_with(
    m: &TransitionMatrix,
    st: &Stationary,
) -> Result<Lambda2, SpectralError> {
    if let Some((value, left, residual)) = refine_lambda2(m, st) {
        return Ok(Lambda2 {
            value: value.abs(),
            left: Some(left),
            residual: Some(residual),
            refined: true,
        });
    }
    let moduli = spectrum(m, 2.min(m.dim))?;
    let value = moduli.get(1).copied().unwrap_or(0.0);
    Ok(Lambda2 { value, left: None, residual: None, refined: false })
}

/// Spectral gap `1 - lambda2` (second-largest modulus).
pub fn spectral_gap(m: &TransitionMatrix) -> Result<f64, SpectralError> {
    Ok(1.0 - lambda2(m)?.value)
}

/// Signed left eigenvector for the second eigenvalue, sup-norm 1, with the
/// largest-magnitude component made positive.
#[derive(Debug, Clone)]
pub struct SecondVector {
    pub lambda2: f64,
    pub vector: MeasureGrid,
    /// `max |v M - lambda2 v|`.
    pub residual: f64,
}

fn fix_sign_and_normalize(mut v: Vec<f64>) -> Vec<f64> {
    let scale = max_abs(&v);
    assert!(scale > 0.0);
    v.iter_mut().for_each(|x| *x /= scale);
    let peak = v
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        .map(|(k, _)| k)
        .unwrap();
    if v[peak] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
    v
}

/// Left eigenvector of the second eigenvalue.
pub fn second_eigenvector(m: &TransitionMatrix) -> Result<SecondVector, SpectralError> {
    let st = stationary_measure(m)?;
    if let Some((value, left, _)) = refine_lambda2(m, &st) {
        let v = fix_sign_and_normalize(left);
        let vm = m.left_apply(&v);
        let residual = vm
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - value * b).abs())
            .fold(0.0f64, f64::max);
        if residual <= 1e-8 {
            return Ok(SecondVector {
                lambda2: value.abs(),
                vector: MeasureGrid { n: m.n, kind: MeasureKind::Signed, values: v },
                residual,
            });
        }
    }
    if m.dim > DENSE_EIGEN_LIMIT {
        return Err(SpectralError::DegenerateSecond);
    }
    // Dense fallback: pick the second-largest modulus; require it to be
    // numerically real, then inverse-iterate on the transpose.
    let mut sorted = dense_eigenvalues(m)?;
    sorted.sort_by(|a, b| b.norm().total_cmp(&a.norm()));
    let l2 = sorted[1];
    if l2.im.abs() > 1e-10 * l2.norm().max(1e-12) {
        return Err(SpectralError::DegenerateSecond);
    }
    let lam = l2.re;
    let dense_t = m.to_dense().transpose();
    let shifted = dense_t - DMatrix::identity(m.dim, m.dim) * lam;
    let lu = shifted.lu();
    let mut y = DVector::from_element(m.dim, 1.0);
    for _ in 0..8 {
        match lu.solve(&y) {
            Some(sol) => {
                let norm = sol.amax();
                if norm == 0.0 || !norm.is_finite() {
                    break;
                }
                y = sol / norm;
            }
            None => return Err(SpectralError::DegenerateSecond),
        }
    }
    let v = fix_sign_and_normalize(y.iter().copied().collect());
    let vm = m.left_apply(&v);
    let residual = vm
        .iter()
        .zip(&v)
        .map(|(a, b)| (a - lam * b).abs())
        .fold(0.0f64, f64::max);
    if residual > 1e-8 {
        return Err(SpectralError::DegenerateSecond);
    }
    Ok(SecondVector {
        lambda2: lam.abs(),
        vector: MeasureGrid { n: m.n, kind: MeasureKind::Signed, values: v },
        residual,
    })
}

/// Steps to halve the sup-norm distance to stationarity:
/// `ceil(ln 2 / (-ln lambda2))`. `None` when `lambda2` is outside `(0, 1)`
/// (no geometric mixing).
pub fn mixing_half_life(lambda2: f64) -> Option<u64> {
    if !(lambda2 > 0.0 && lambda2 < 1.0) {
        return None;
    }
    Some((std::f64::consts::LN_2 / -lambda2.ln()).ceil() as u64)
}

/// Bundle of the spectral facts of one instance.
#[derive(Debug, Clone)]
pub struct SpectralSummary {
    /// Leading eigenvalue moduli, descending.
    pub eigenvalue_moduli: Vec<f64>,
    pub lambda2: f64,
    pub gap: f64,
    pub lambda2_refined: bool,
    pub stationary: MeasureGrid,
    pub stationary_residual: f64,
    pub closed_classes: usize,
    pub second_vector: Option<MeasureGrid>,
    pub second_residual: Option<f64>,
    pub half_life: Option<u64>,
    /// Set when the eigenvalue 1 is structurally multiple or the gap is
    /// numerically indistinguishable from zero (gap < 1e-12).
    pub non_ergodic: bool,
}

/// Full spectral analysis: stationary measure, `count` leading moduli,
/// refined gap, second eigenvector, half-life.
pub fn spectral_summary(
    m: &TransitionMatrix,
    count: usize,
) -> Result<SpectralSummary, SpectralError> {
    let st = stationary_measure(m)?;
    let l2 = lambda2_with(m, &st)?;
    let eigenvalue_moduli = spectrum(m, count)?;
    let second = second_eigenvector(m).ok();
    let gap = 1.0 - l2.value;
    Ok(SpectralSummary {
        eigenvalue_moduli,
        lambda2: l2.value,
        gap,
        lambda2_refined: l2.refined,
        stationary: st.measure.clone(),
        stationary_residual: st.residual,
        closed_classes: st.closed_classes,
        second_vector: second.as_ref().map(|s| s.vector.clone()),
        second_residual: second.as_ref().map(|s| s.residual),
        half_life: mixing_half_life(l2.value),
        non_ergodic: st.closed_classes > 1 || gap < 1e-12,
    })
}

/// Best achievable minimum of `|v|` over monotone staircase grid paths from
/// `from` to `to` (each step moves one unit toward the target in one
/// coordinate). Used to test for ridges connecting eigenvector peaks.
pub fn ridge_min(v: &MeasureGrid, from: MacroState, to: MacroState) -> f64 {
    let is: Vec<usize> = axis_range(from.up_sites, to.up_sites);
    let js: Vec<usize> = axis_range(from.up_arcs, to.up_arcs);
    let val = |a: usize, b: usize| v.value(MacroState::new(is[a], js[b])).abs();
    let mut best = vec![vec![0.0f64; js.len()]; is.len()];
    for a in 0..is.len() {
        for b in 0..js.len() {
            let here = val(a, b);
            best[a][b] = match (a, b) {
                (0, 0) => here,
                (0, _) => here.min(best[0][b - 1]),
                (_, 0) => here.min(best[a - 1][0]),
                _ => here.min(best[a - 1][b].max(best[a][b - 1])),
            };
        }
    }
    best[is.len() - 1][js.len() - 1]
}

fn axis_range(from: usize, to: usize) -> Vec<usize> {
    if from <= to {
        (from..=to).collect()
    } else {
        (to..=from).rev().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indexing_round_trip() {
        // Corner cases of the N=3 grid.
        assert_eq!(state_index(MacroState::new(0, 0), 3), 0);
        assert_eq!(state_index(MacroState::new(3, 3), 3), 15);
        assert_eq!(index_state(6, 3), MacroState::new(2, 1));
        for n in [3usize, 10] {
            for k in 0..grid_dim(n) {
                assert_eq!(state_index(index_state(k, n), n), k);
            }
        }
        assert_eq!(grid_dim(10), 506);
        assert!(try_state_index(MacroState::new(4, 0), 3).is_err());
        assert!(try_index_state(16, 3).is_err());
    }

    #[test]
    fn rows_match_step_distribution_bit_for_bit() {
        let params = ModelParams::frozen(5, 3.0);
        let m = TransitionMatrix::assemble(&params);
        for k in 0..m.dim() {
            let s = index_state(k, 5);
            let d = macro_step_distribution(s.up_sites, s.up_arcs, &params);
            for (t, p) in d.entries() {
                assert_eq!(m.entry(k, state_index(t, 5)), p);
            }
            assert!((m.row_sum(k) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn gth_two_state_chain() {
        let mu = gth_stationary(vec![vec![0.7, 0.3], vec![0.2, 0.8]]);
        assert!((mu[0] - 0.4).abs() < 1e-15);
        assert!((mu[1] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn closed_classes_of_absorbing_chain() {
        // 0 <-> 1 -> 2 (absorbing).
        let m = TransitionMatrix::from_rows(
            2,
            vec![
                vec![(0, 0.5), (1, 0.5)],
                vec![(0, 0.25), (1, 0.25), (2, 0.5)],
                vec![(2, 1.0)],
            ],
        );
        let classes = closed_classes(&m);
        assert_eq!(classes, vec![vec![2]]);
        let st = stationary_measure(&m).unwrap();
        assert_eq!(st.measure.values(), &[0.0, 0.0, 1.0]);
        assert_eq!(st.residual, 0.0);
    }

    #[test]
    fn multiplicity_is_flagged() {
        let m = TransitionMatrix::from_rows(2, vec![vec![(0, 1.0)], vec![(1, 1.0)]]);
        let st = stationary_measure(&m).unwrap();
        assert!(st.multiple());
        assert_eq!(st.closed_classes, 2);
        // Identity-like chain: every measure invariant, gap 0.
        let l2 = lambda2(&m).unwrap();
        assert_eq!(l2.value, 1.0);
        assert_eq!(spectral_gap(&m).unwrap(), 0.0);
    }

    #[test]
    fn leading_modulus_is_one() {
        let params = ModelParams::frozen(4, 2.0);
        let m = TransitionMatrix::assemble(&params);
        let moduli = spectrum(&m, 5).unwrap();
        assert!((moduli[0] - 1.0).abs() < 1e-10);
        assert!(moduli.windows(2).all(|w| w[0] >= w[1]));
        assert!(spectrum(&m, m.dim() + 1).is_err());
    }

    #[test]
    fn stationary_equivariant_under_relabeling() {
        let params = ModelParams::frozen(3, 6.0);
        let m = TransitionMatrix::assemble(&params);
        let st = stationary_measure(&m).unwrap();
        // Reverse the state labels.
        let dim = m.dim();
        let perm = |k: usize| dim - 1 - k;
        let rows: Vec<Vec<(usize, f64)>> = (0..dim)
            .map(|a| {
                let mut row: Vec<(usize, f64)> =
                    m.row(perm(a)).iter().map(|&(b, p)| (perm(b), p)).collect();
                row.sort_unstable_by_key(|&(c, _)| c);
                row
            })
            .collect();
        let permuted = TransitionMatrix::from_rows(3, rows);
        let st_p = stationary_measure(&permuted).unwrap();
        for k in 0..dim {
            assert!((st.measure.values()[k] - st_p.measure.values()[perm(k)]).abs() < 1e-13);
        }
    }

    #[test]
    fn half_life_examples() {
        assert_eq!(mixing_half_life(0.9942), Some(120));
        let hl = mixing_half_life(0.9999986235).unwrap();
        assert!((503_558i64 - hl as i64).abs() <= 2, "got {hl}");
        assert_eq!(mixing_half_life(0.5), Some(1));
        assert_eq!(mixing_half_life(1.0), None);
        assert_eq!(mixing_half_life(0.0), None);
    }

    #[test]
    fn variation_distance_properties() {
        let a = MeasureGrid::point_mass(3, MacroState::new(0, 0));
        let b = MeasureGrid::point_mass(3, MacroState::new(3, 3));
        assert_eq!(variation_distance(&a, &a).unwrap(), 0.0);
        assert_eq!(variation_distance(&a, &b).unwrap(), 1.0);
        assert_eq!(
            variation_distance(&a, &b).unwrap(),
            variation_distance(&b, &a).unwrap()
        );
        let c = MeasureGrid::uniform(4);
        assert!(variation_distance(&a, &c).is_err());
    }

    #[test]
    fn propagation_preserves_mass_and_fixes_trap() {
        let params = ModelParams::frozen(10, 3.0);
        let m = TransitionMatrix::assemble(&params);
        let trap = MeasureGrid::point_mass(10, MacroState::new(10, 45));
        let out = propagate_measure(&m, &trap, 50);
        assert_eq!(out.values(), trap.values());
        let mu0 = MeasureGrid::uniform(10);
        assert_eq!(propagate_measure(&m, &mu0, 0).values(), mu0.values());
        let out = propagate_measure(&m, &mu0, 200);
        assert!((out.total() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn ridge_min_prefers_the_high_road() {
        let n = 2;
        let mut vals = vec![0.0; grid_dim(n)];
        let mut set = |i, j, v| vals[state_index(MacroState::new(i, j), n)] = v;
        set(0, 0, 1.0);
        set(1, 0, 0.2);
        set(0, 1, 0.7);
        set(1, 1, 0.9);
        let grid = MeasureGrid::from_values(n, MeasureKind::Signed, vals);
        let got = ridge_min(&grid, MacroState::new(0, 0), MacroState::new(1, 1));
        assert!((got - 0.7).abs() < 1e-15);
    }
}
