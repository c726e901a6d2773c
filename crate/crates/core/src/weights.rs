//! Relay weights: unbiasedness check, aggregate-variance objective, and the
//! cyclic column-wise (Gauss-Seidel) optimizer.
//!
//! `A` is stored row-major. Entry `(j, i)` is `α_ji`, the weight relayer `j`
//! puts on source `i`'s update. Column `i` therefore lists every relayer
//! that forwards client `i`, and row `j` is the combination client `j`
//! transmits.
//!
//! The objective is
//!
//! ```text
//! S(p, A) = Σ_{i,l} Σ_{j ∈ N_il} p_j (1 - p_j) α_ji α_jl
//!         = Σ_j p_j (1 - p_j) (Σ_{i ∈ N_j ∪ {j}} α_ji)^2
//! ```
//!
//! and each column must satisfy `Σ_{j ∈ N_i ∪ {i}} p_j α_ji = 1`, which makes
//! the blind server aggregate unbiased.

use serde::Serialize;
use thiserror::Error;

use crate::scalar::Scalar;
use crate::topology::ConnectivityGraph;

/// Hard cap on bracket doublings in [`bisect_lambda`].
pub const MAX_BRACKET_DOUBLINGS: usize = 60;
const MAX_BISECTION_STEPS: usize = 400;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WeightsError {
    #[error("weight matrix is {got}x{got}, graph has {expected} clients")]
    Shape { expected: usize, got: usize },
    #[error("weight matrix row {row} has length {len}, expected {expected}")]
    RaggedRow { row: usize, len: usize, expected: usize },
    #[error("weight ({row}, {col}) = {value} is negative or non-finite")]
    InvalidEntry { row: usize, col: usize, value: f64 },
    #[error("no member of the closed neighborhood of client(s) {clients:?} can reach the server")]
    Infeasible { clients: Vec<usize> },
    #[error("tolerance must be positive, got {0}")]
    InvalidTolerance(f64),
    #[error("column subproblem: {0}")]
    InvalidSubproblem(String),
    #[error("bisection bracket for column {column} did not close after {MAX_BRACKET_DOUBLINGS} doublings")]
    BracketExpansion { column: usize },
    #[error("bisection for column {column} stalled at residual {residual}")]
    BisectionStalled { column: usize, residual: f64 },
}

/// `n x n` nonnegative relay-weight matrix.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RelayWeights<T> {
    n: usize,
    data: Vec<T>,
}

impl<T: Scalar> RelayWeights<T> {
    pub fn zeros(n: usize) -> Self {
        Self { n, data: vec![T::zero(); n * n] }
    }

    pub fn identity(n: usize) -> Self {
        let mut w = Self::zeros(n);
        for i in 0..n {
            w.data[i * n + i] = T::one();
        }
        w
    }

    /// Builds from row vectors; row `j` holds `α_j0 .. α_j(n-1)`.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self, WeightsError> {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * n);
        for (row, r) in rows.iter().enumerate() {
            if r.len() != n {
                return Err(WeightsError::RaggedRow { row, len: r.len(), expected: n });
            }
            for (col, &value) in r.iter().enumerate() {
                if !(value >= T::zero()) || !value.is_finite() {
                    return Err(WeightsError::InvalidEntry { row, col, value: value.as_f64() });
                }
            }
            data.extend_from_slice(r);
        }
        Ok(Self { n, data })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    /// `α_ji`: weight relayer `j` applies to source `i`.
    #[inline]
    pub fn get(&self, j: usize, i: usize) -> T {
        self.data[j * self.n + i]
    }

    #[inline]
    pub(crate) fn set(&mut self, j: usize, i: usize, v: T) {
        self.data[j * self.n + i] = v;
    }

    /// Row `j`: the weights client `j` uses when relaying.
    #[inline]
    pub fn row(&self, j: usize) -> &[T] {
        &self.data[j * self.n..(j + 1) * self.n]
    }

    /// Column `i`: how every relayer weights source `i`.
    pub fn column(&self, i: usize) -> Vec<T> {
        (0..self.n).map(|j| self.get(j, i)).collect()
    }

    pub fn rows(&self) -> Vec<Vec<T>> {
        self.data.chunks_exact(self.n.max(1)).map(<[T]>::to_vec).collect()
    }

    fn set_column(&mut self, i: usize, col: &[T]) {
        for (j, &v) in col.iter().enumerate() {
            self.set(j, i, v);
        }
    }

    fn check_shape(&self, g: &ConnectivityGraph<T>) -> Result<(), WeightsError> {
        if self.n != g.n() {
            return Err(WeightsError::Shape { expected: g.n(), got: self.n });
        }
        Ok(())
    }
}

/// Uniform split over the reachable members of each closed neighborhood:
/// `α_ji = 1 / ((|N_i| + 1) p_j)` when `j ∈ N_i ∪ {i}` and `p_j > 0`.
///
/// Every column is unbiased when all its members have `p_j > 0`.
pub fn initial_weights<T: Scalar>(g: &ConnectivityGraph<T>) -> RelayWeights<T> {
    let n = g.n();
    let p = g.p();
    let mut a = RelayWeights::zeros(n);
    for i in 0..n {
        let size = T::from_count(g.degree(i) + 1);
        for &j in g.closed(i) {
            if p[j] > T::zero() {
                a.set(j, i, T::one() / (size * p[j]));
            }
        }
    }
    a
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ColumnStatus {
    Pass,
    ResidualExceeded,
    /// Nonzero weights on relayers that cannot hear the source.
    SupportViolation { rows: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ColumnCheck<T> {
    pub column: usize,
    /// `|Σ_j p_j α_ji - 1|` over the closed neighborhood.
    pub residual: T,
    pub status: ColumnStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UnbiasednessReport<T> {
    pub tol: T,
    pub columns: Vec<ColumnCheck<T>>,
}

impl<T: Scalar> UnbiasednessReport<T> {
    pub fn all_pass(&self) -> bool {
        self.columns.iter().all(|c| c.status == ColumnStatus::Pass)
    }

    pub fn max_residual(&self) -> T {
        self.columns.iter().fold(T::zero(), |m, c| m.max(c.residual))
    }

    pub fn failing(&self) -> impl Iterator<Item = &ColumnCheck<T>> {
        self.columns.iter().filter(|c| c.status != ColumnStatus::Pass)
    }

    pub fn residuals(&self) -> Vec<T> {
        self.columns.iter().map(|c| c.residual).collect()
    }
}

fn column_residual<T: Scalar>(g: &ConnectivityGraph<T>, a: &RelayWeights<T>, i: usize) -> T {
    let p = g.p();
    let total: T = g.closed(i).iter().map(|&j| p[j] * a.get(j, i)).sum();
    (total - T::one()).abs()
}

/// Per-column unbiasedness report. Support violations take precedence over
/// residual failures.
pub fn check_unbiasedness<T: Scalar>(
    g: &ConnectivityGraph<T>,
    a: &RelayWeights<T>,
    tol: T,
) -> Result<UnbiasednessReport<T>, WeightsError> {
    a.check_shape(g)?;
    if !(tol >= T::zero()) {
        return Err(WeightsError::InvalidTolerance(tol.as_f64()));
    }
    let n = g.n();
    let columns = (0..n)
        .map(|i| {
            let residual = column_residual(g, a, i);
            let outside: Vec<usize> = (0..n)
                .filter(|&j| !g.in_closed(i, j) && a.get(j, i) != T::zero())
                .collect();
            let status = if !outside.is_empty() {
                ColumnStatus::SupportViolation { rows: outside }
            } else if residual <= tol {
                ColumnStatus::Pass
            } else {
                ColumnStatus::ResidualExceeded
            };
            ColumnCheck { column: i, residual, status }
        })
        .collect();
    Ok(UnbiasednessReport { tol, columns })
}

/// `S(p, A)`, evaluated through the per-relayer row sums.
pub fn variance_objective<T: Scalar>(g: &ConnectivityGraph<T>, a: &RelayWeights<T>) -> T {
    let p = g.p();
    (0..g.n())
        .map(|j| {
            let v = p[j] * (T::one() - p[j]);
            if v == T::zero() {
                return T::zero();
            }
            let s: T = g.closed(j).iter().map(|&i| a.get(j, i)).sum();
            v * s * s
        })
        .sum()
}

/// One column of the Gauss-Seidel update with every other column frozen.
///
/// Minimizes `Σ_j v_j α_j^2 + 2 Σ_j v_j β_j α_j` with `v_j = p_j (1 - p_j)`
/// subject to `Σ_j p_j α_j = 1`, `α ≥ 0`, where `β_j` is relayer `j`'s load
/// from the other sources it hears.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnSubproblem<T> {
    pub column: usize,
    /// Closed-neighborhood members, ascending.
    pub members: Vec<usize>,
    pub beta: Vec<T>,
    pub p: Vec<T>,
    /// Largest member probability.
    pub pbar: T,
}

impl<T: Scalar> ColumnSubproblem<T> {
    pub fn new(column: usize, members: Vec<usize>, beta: Vec<T>, p: Vec<T>) -> Result<Self, WeightsError> {
        if members.len() != beta.len() || members.len() != p.len() {
            return Err(WeightsError::InvalidSubproblem(format!(
                "members/beta/p lengths differ: {}/{}/{}",
                members.len(),
                beta.len(),
                p.len()
            )));
        }
        if let Some(b) = beta.iter().find(|b| !(**b >= T::zero()) || !b.is_finite()) {
            return Err(WeightsError::InvalidSubproblem(format!("beta entry {b} is negative or non-finite")));
        }
        let pbar = p.iter().fold(T::zero(), |m, &x| m.max(x));
        Ok(Self { column, members, beta, p, pbar })
    }

    /// Builds column `i`'s subproblem from the current matrix.
    pub fn from_weights(g: &ConnectivityGraph<T>, a: &RelayWeights<T>, i: usize) -> Self {
        let gp = g.p();
        let members = g.closed(i).to_vec();
        let beta = members
            .iter()
            .map(|&j| g.closed(j).iter().filter(|&&l| l != i).map(|&l| a.get(j, l)).sum())
            .collect();
        let p = members.iter().map(|&j| gp[j]).collect();
        let pbar = members.iter().fold(T::zero(), |m, &j| m.max(gp[j]));
        Self { column: i, members, beta, p, pbar }
    }

    /// `h(λ) = Σ_j p_j (λ / (2(1 - p_j)) - β_j)^+` over members with `p_j ∈ (0, 1)`.
    pub fn h(&self, lambda: T) -> T {
        let two = T::lit(2.0);
        self.p
            .iter()
            .zip(&self.beta)
            .filter(|(&p, _)| p > T::zero() && p < T::one())
            .map(|(&p, &b)| p * (lambda / (two * (T::one() - p)) - b).max(T::zero()))
            .sum()
    }

    /// Column weights `(λ / (2(1 - p_j)) - β_j)^+`, zero for `p_j ∉ (0, 1)`.
    pub fn weights_at(&self, lambda: T) -> Vec<T> {
        let two = T::lit(2.0);
        self.p
            .iter()
            .zip(&self.beta)
            .map(|(&p, &b)| {
                if p > T::zero() && p < T::one() {
                    (lambda / (two * (T::one() - p)) - b).max(T::zero())
                } else {
                    T::zero()
                }
            })
            .collect()
    }

    /// Column part of `S`, up to a constant independent of this column.
    pub fn objective(&self, alpha: &[T]) -> T {
        let two = T::lit(2.0);
        self.p
            .iter()
            .zip(&self.beta)
            .zip(alpha)
            .map(|((&p, &b), &a)| p * (T::one() - p) * (a * a + two * a * b))
            .sum()
    }
}

/// Finds `λ` with `|h(λ) - 1| ≤ tol` by bracket doubling and bisection.
///
/// Every member must have `p_j ∈ (0, 1)`.
pub fn bisect_lambda<T: Scalar>(sub: &ColumnSubproblem<T>, tol: T) -> Result<T, WeightsError> {
    if !(tol > T::zero()) {
        return Err(WeightsError::InvalidTolerance(tol.as_f64()));
    }
    if sub.members.is_empty() {
        return Err(WeightsError::InvalidSubproblem("no members".into()));
    }
    if let Some(&p) = sub.p.iter().find(|&&p| !(p > T::zero() && p < T::one())) {
        return Err(WeightsError::InvalidSubproblem(format!("member probability {p} outside (0, 1)")));
    }
    let one = T::one();
    let column = sub.column;

    let mut lo = T::zero();
    let mut hi = T::one();
    let mut h_hi = sub.h(hi);
    let mut doublings = 0;
    while h_hi < one {
        if doublings == MAX_BRACKET_DOUBLINGS {
            return Err(WeightsError::BracketExpansion { column });
        }
        lo = hi;
        hi = hi + hi;
        h_hi = sub.h(hi);
        doublings += 1;
    }
    if (h_hi - one).abs() <= tol {
        return Ok(hi);
    }

    for _ in 0..MAX_BISECTION_STEPS {
        debug_assert!(sub.h(lo) <= one && one <= sub.h(hi), "bracket lost: [{lo}, {hi}]");
        let mid = (lo + hi) / T::lit(2.0);
        if mid <= lo || mid >= hi {
            break;
        }
        let h_mid = sub.h(mid);
        if (h_mid - one).abs() <= tol {
            return Ok(mid);
        }
        if h_mid < one {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let residual = (sub.h(lo) - one).abs().min((sub.h(hi) - one).abs());
    Err(WeightsError::BisectionStalled { column, residual: residual.as_f64() })
}

/// Exact minimizer of column `i`'s subproblem, returned as a full length-`n`
/// column (zeros outside `N_i ∪ {i}`).
///
/// When some member has `p_j = 1`, the column is split equally among those
/// members and every other entry is zero.
pub fn solve_column<T: Scalar>(
    g: &ConnectivityGraph<T>,
    a_prev: &RelayWeights<T>,
    i: usize,
    bisect_tol: T,
) -> Result<Vec<T>, WeightsError> {
    a_prev.check_shape(g)?;
    if i >= g.n() {
        return Err(WeightsError::InvalidSubproblem(format!("column {i} out of range")));
    }
    let p = g.p();
    let members = g.closed(i);
    if members.iter().all(|&j| p[j] <= T::zero()) {
        return Err(WeightsError::Infeasible { clients: vec![i] });
    }
    let mut column = vec![T::zero(); g.n()];

    let perfect: Vec<usize> = members.iter().copied().filter(|&j| p[j] >= T::one()).collect();
    if !perfect.is_empty() {
        let share = T::one() / T::from_count(perfect.len());
        for j in perfect {
            column[j] = share;
        }
        return Ok(column);
    }

    let full = ColumnSubproblem::from_weights(g, a_prev, i);
    let keep: Vec<usize> = (0..full.members.len()).filter(|&k| full.p[k] > T::zero()).collect();
    let sub = ColumnSubproblem {
        column: i,
        members: keep.iter().map(|&k| full.members[k]).collect(),
        beta: keep.iter().map(|&k| full.beta[k]).collect(),
        p: keep.iter().map(|&k| full.p[k]).collect(),
        pbar: full.pbar,
    };
    let lambda = bisect_lambda(&sub, bisect_tol)?;
    for (&j, w) in sub.members.iter().zip(sub.weights_at(lambda)) {
        column[j] = w;
    }
    Ok(column)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OptimizeOptions<T> {
    /// Upper bound on full sweeps over all columns.
    pub max_sweeps: usize,
    pub bisect_tol: T,
    /// Stop once a sweep lowers `S` by less than this fraction.
    pub stall_tol: T,
}

impl<T: Scalar> Default for OptimizeOptions<T> {
    fn default() -> Self {
        Self { max_sweeps: 100, bisect_tol: T::lit(1e-10), stall_tol: T::lit(1e-12) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimizationResult<T> {
    pub weights: RelayWeights<T>,
    /// `S` of the starting matrix (which may be infeasible).
    pub initial_objective: T,
    /// `S` after each completed sweep.
    pub history: Vec<T>,
    pub sweeps: usize,
    /// Whether the stall criterion fired before `max_sweeps`.
    pub stalled: bool,
}

impl<T: Scalar> OptimizationResult<T> {
    pub fn final_objective(&self) -> T {
        self.history.last().copied().unwrap_or(self.initial_objective)
    }
}

/// Clients whose closed neighborhood has no member with `p_j > 0`.
pub fn unreachable_clients<T: Scalar>(g: &ConnectivityGraph<T>) -> Vec<usize> {
    (0..g.n())
        .filter(|&i| g.closed(i).iter().all(|&j| g.p()[j] <= T::zero()))
        .collect()
}

/// Minimizes `S(p, A)` under per-column unbiasedness, starting from
/// [`initial_weights`].
pub fn optimize_weights<T: Scalar>(
    g: &ConnectivityGraph<T>,
    opts: &OptimizeOptions<T>,
) -> Result<OptimizationResult<T>, WeightsError> {
    optimize_weights_from(g, initial_weights(g), opts)
}

/// Gauss-Seidel over columns `0, 1, .., n-1, 0, ..` from a given start.
///
/// A replacement column is kept only if it does not raise `S`, unless the
/// column it replaces violates the constraint; this makes the per-sweep
/// history nonincreasing in floating point, not just in exact arithmetic.
pub fn optimize_weights_from<T: Scalar>(
    g: &ConnectivityGraph<T>,
    start: RelayWeights<T>,
    opts: &OptimizeOptions<T>,
) -> Result<OptimizationResult<T>, WeightsError> {
    start.check_shape(g)?;
    if !(opts.bisect_tol > T::zero()) {
        return Err(WeightsError::InvalidTolerance(opts.bisect_tol.as_f64()));
    }
    if !(opts.stall_tol >= T::zero()) {
        return Err(WeightsError::InvalidTolerance(opts.stall_tol.as_f64()));
    }
    let bad = unreachable_clients(g);
    if !bad.is_empty() {
        return Err(WeightsError::Infeasible { clients: bad });
    }

    let n = g.n();
    let mut a = start;
    let initial_objective = variance_objective(g, &a);
    let initially_feasible = (0..n).all(|i| column_residual(g, &a, i) <= opts.bisect_tol);
    let mut current = initial_objective;
    let mut history = Vec::with_capacity(opts.max_sweeps);
    let mut stalled = false;

    for sweep in 0..opts.max_sweeps {
        for i in 0..n {
            let old = a.column(i);
            let old_ok = column_residual(g, &a, i) <= opts.bisect_tol
                && (0..n).all(|j| g.in_closed(i, j) || old[j] == T::zero());
            let new = solve_column(g, &a, i, opts.bisect_tol)?;
            a.set_column(i, &new);
            let candidate = variance_objective(g, &a);
            if old_ok && candidate > current {
                a.set_column(i, &old);
            } else {
                current = candidate;
            }
        }
        history.push(current);

        let previous = match sweep {
            0 if initially_feasible => Some(initial_objective),
            0 => None,
            _ => Some(history[sweep - 1]),
        };
        if let Some(prev) = previous {
            if prev <= T::zero() || (prev - current) <= opts.stall_tol * prev {
                stalled = true;
                break;
            }
        }
    }

    let sweeps = history.len();
    Ok(OptimizationResult { weights: a, initial_objective, history, sweeps, stalled })
}
