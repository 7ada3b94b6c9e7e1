//! Exact finite-state analysis of the chain: the closed-form transition
//! kernel, stationary distributions of {S_t} and of the extended pair chain
//! {S̃_t}, and a numerical check of the extended chain's conditional-law
//! identity.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{NetworkParams, StateVec};
use crate::normal;

/// Dense-base-kernel cap: 2^n × 2^n storage.
pub const MAX_AGENTS_DENSE: usize = 10;
/// Dense-extended-kernel cap: 2^{2n} × 2^{2n} storage.
pub const MAX_AGENTS_EXTENDED: usize = 6;
/// Row sums must match 1 this tightly for a matrix to be accepted.
pub const ROW_SUM_TOL: f64 = 1e-12;
/// Default stationary-solve tolerance on ‖πP − π‖_∞.
pub const STATIONARY_TOL: f64 = 1e-12;
/// Default stationary-solve iteration budget.
pub const STATIONARY_MAX_ITER: u64 = 1_000_000;
/// Conditioning masses below this are treated as degenerate.
pub const DEGENERATE_MASS_FLOOR: f64 = 1e-14;

const DIRECT_SOLVE_MAX_DIM: usize = 256;
// The conditional law divides by the conditioning mass, so the extended
// stationary solve must run tighter than the report tolerance.
const LEMMA_SOLVE_TOL: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixKind {
    Base,
    Extended,
}

/// Dense row-stochastic kernel over state indices.
///
/// Base kind: dim = 2^n, entry (u, s) = P{S_t = s | S_{t−1} = u}.
/// Extended kind: dim = 2^{2n} over flat pair indices current·2^n + previous.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    n: usize,
    dim: usize,
    kind: MatrixKind,
    rows: Vec<f64>,
}

impl TransitionMatrix {
    /// Wraps a dense row-major matrix, validating shape, stochasticity, and
    /// the structural zero pattern of extended kernels.
    pub fn from_rows(rows: Vec<f64>, kind: MatrixKind) -> Result<Self> {
        let dim = (rows.len() as f64).sqrt().round() as usize;
        if dim * dim != rows.len() || dim < 2 {
            return Err(Error::ModelMismatch {
                reason: format!("matrix with {} entries is not square", rows.len()),
            });
        }
        if !dim.is_power_of_two() {
            return Err(Error::ModelMismatch {
                reason: format!("dimension {dim} is not a power of two"),
            });
        }
        let bits = dim.trailing_zeros() as usize;
        let n = match kind {
            MatrixKind::Base => bits,
            MatrixKind::Extended => {
                if !bits.is_multiple_of(2) {
                    return Err(Error::ModelMismatch {
                        reason: format!("extended dimension {dim} is not 4^n"),
                    });
                }
                bits / 2
            }
        };
        let m = Self { n, dim, kind, rows };
        for u in 0..dim {
            let row = m.row(u);
            if row.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::ModelMismatch {
                    reason: format!("row {u} has a negative or non-finite entry"),
                });
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::ModelMismatch {
                    reason: format!("row {u} sums to {sum}, not 1"),
                });
            }
        }
        if kind == MatrixKind::Extended {
            let half = 1usize << n;
            for cur in 0..half {
                for prev in 0..half {
                    let row = m.row((cur << n) | prev);
                    for nxt in 0..half {
                        for stale in 0..half {
                            if stale != cur && row[(nxt << n) | stale] != 0.0 {
                                return Err(Error::ModelMismatch {
                                    reason: "extended kernel breaks the pair-consistency zero pattern"
                                        .into(),
                                });
                            }
                        }
                    }
                }
            }
        }
        Ok(m)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> MatrixKind {
        self.kind
    }

    pub fn get(&self, from: usize, to: usize) -> f64 {
        self.rows[from * self.dim + to]
    }

    pub fn row(&self, from: usize) -> &[f64] {
        &self.rows[from * self.dim..(from + 1) * self.dim]
    }

    pub fn entries(&self) -> &[f64] {
        &self.rows
    }

    pub fn min_entry(&self) -> f64 {
        self.rows.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_row_sum_deviation(&self) -> f64 {
        (0..self.dim)
            .map(|u| (self.row(u).iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// Stationary probability vector with the achieved residual ‖πP − π‖_∞.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryDist {
    pi: Vec<f64>,
    residual: f64,
}

impl StationaryDist {
    pub fn probabilities(&self) -> &[f64] {
        &self.pi
    }

    pub fn prob(&self, state: usize) -> f64 {
        self.pi[state]
    }

    pub fn len(&self) -> usize {
        self.pi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pi.is_empty()
    }

    pub fn residual(&self) -> f64 {
        self.residual
    }
}

/// Per-agent log kernel factors for a source state u: entry i holds
/// (log Φ(z_i), log Φ(−z_i)) with z_i = (c_i − A_i·u)/σ_i, i.e. the log
/// probability of bit i being 0 resp. 1.
fn row_log_factors(params: &NetworkParams, u: StateVec) -> (Vec<f64>, Vec<f64>) {
    let n = params.n();
    let mut l0 = Vec::with_capacity(n);
    let mut l1 = Vec::with_capacity(n);
    for i in 0..n {
        let z = params.margin(i, u);
        l0.push(normal::log_cdf(z));
        l1.push(normal::log_cdf(-z));
    }
    (l0, l1)
}

fn log_prob_from_factors(l0: &[f64], l1: &[f64], s: StateVec) -> f64 {
    let mut acc = 0.0;
    for i in 0..l0.len() {
        acc += if s.bit(i) { l1[i] } else { l0[i] };
    }
    acc
}

/// Exact kernel entry P{S_t = s | S_{t−1} = u} = ∏_i (1−Φ(z_i))^{s_i}·Φ(z_i)^{1−s_i},
/// accumulated in log space and exponentiated once.
pub fn transition_probability(params: &NetworkParams, u: StateVec, s: StateVec) -> Result<f64> {
    params.check_width("transition source state", u)?;
    params.check_width("transition target state", s)?;
    let (l0, l1) = row_log_factors(params, u);
    Ok(log_prob_from_factors(&l0, &l1, s).exp())
}

/// Dense 2^n × 2^n kernel; rows are filled independently in parallel.
pub fn build_transition_matrix(params: &NetworkParams) -> Result<TransitionMatrix> {
    let n = params.n();
    if n > MAX_AGENTS_DENSE {
        return Err(Error::Capacity {
            what: "dense base kernel",
            n,
            cap: MAX_AGENTS_DENSE,
        });
    }
    let dim = 1usize << n;
    let mut rows = vec![0.0; dim * dim];
    rows.par_chunks_mut(dim).enumerate().for_each(|(u, row)| {
        let u_state = StateVec::new(u as u32, n).expect("row index fits the width");
        let (l0, l1) = row_log_factors(params, u_state);
        for (s, slot) in row.iter_mut().enumerate() {
            let s_state = StateVec::new(s as u32, n).expect("column index fits the width");
            *slot = log_prob_from_factors(&l0, &l1, s_state).exp();
        }
    });
    let m = TransitionMatrix {
        n,
        dim,
        kind: MatrixKind::Base,
        rows,
    };
    if m.min_entry() <= 0.0 {
        return Err(Error::Numerical(
            "a kernel entry underflowed to zero; margins too extreme for dense analysis".into(),
        ));
    }
    Ok(m)
}

/// Dense kernel of the pair chain S̃_t = (S_t, S_{t−1}) on flat indices:
/// entry ((s,u) → (s̄,s')) is P(s, s̄) when s' = s and 0 otherwise.
pub fn build_extended_matrix(params: &NetworkParams) -> Result<TransitionMatrix> {
    let n = params.n();
    if n > MAX_AGENTS_EXTENDED {
        return Err(Error::Capacity {
            what: "dense extended kernel",
            n,
            cap: MAX_AGENTS_EXTENDED,
        });
    }
    let base = build_transition_matrix(params)?;
    let half = 1usize << n;
    let dim = half * half;
    let mut rows = vec![0.0; dim * dim];
    for cur in 0..half {
        for prev in 0..half {
            let r = (cur << n) | prev;
            let row = &mut rows[r * dim..(r + 1) * dim];
            for nxt in 0..half {
                row[(nxt << n) | cur] = base.get(cur, nxt);
            }
        }
    }
    Ok(TransitionMatrix {
        n,
        dim,
        kind: MatrixKind::Extended,
        rows,
    })
}

fn vec_matrix(x: &[f64], m: &TransitionMatrix, out: &mut [f64]) {
    out.fill(0.0);
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        for (o, &pij) in out.iter_mut().zip(m.row(i)) {
            *o += xi * pij;
        }
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Solves πP = π, Σπ = 1 by power iteration from the uniform vector; when the
/// iteration budget runs out and the matrix is small (dim ≤ 256), a dense
/// direct solve takes over before giving up.
pub fn stationary_distribution(
    p: &TransitionMatrix,
    tol: f64,
    max_iter: u64,
) -> Result<StationaryDist> {
    if tol.is_nan() || tol <= 0.0 {
        return Err(Error::InvalidParams(format!(
            "stationary tolerance must be positive, got {tol}"
        )));
    }
    let dim = p.dim();
    let mut x = vec![1.0 / dim as f64; dim];
    let mut y = vec![0.0; dim];
    let mut residual = f64::INFINITY;
    for _ in 0..=max_iter {
        vec_matrix(&x, p, &mut y);
        residual = max_abs_diff(&y, &x);
        if residual <= tol {
            return Ok(StationaryDist { pi: x, residual });
        }
        let sum: f64 = y.iter().sum();
        for v in &mut y {
            *v /= sum;
        }
        std::mem::swap(&mut x, &mut y);
    }
    if dim <= DIRECT_SOLVE_MAX_DIM {
        if let Some(dist) = direct_solve(p, tol) {
            return Ok(dist);
        }
    }
    Err(Error::IterationLimit {
        tol,
        max_iter,
        residual,
    })
}

/// Dense solve of (Pᵀ − I)π = 0 with the normalization Σπ = 1 replacing the
/// last equation; Gaussian elimination with partial pivoting.
fn direct_solve(p: &TransitionMatrix, tol: f64) -> Option<StationaryDist> {
    let dim = p.dim();
    let mut m = vec![0.0; dim * dim];
    let mut b = vec![0.0; dim];
    for r in 0..dim {
        for c in 0..dim {
            m[r * dim + c] = if r + 1 == dim {
                1.0
            } else {
                p.get(c, r) - f64::from(u8::from(r == c))
            };
        }
    }
    b[dim - 1] = 1.0;

    for col in 0..dim {
        let pivot_row = (col..dim).max_by(|&r1, &r2| {
            m[r1 * dim + col]
                .abs()
                .total_cmp(&m[r2 * dim + col].abs())
        })?;
        if m[pivot_row * dim + col].abs() == 0.0 {
            return None;
        }
        if pivot_row != col {
            for k in 0..dim {
                m.swap(col * dim + k, pivot_row * dim + k);
            }
            b.swap(col, pivot_row);
        }
        let pivot = m[col * dim + col];
        for r in col + 1..dim {
            let f = m[r * dim + col] / pivot;
            if f == 0.0 {
                continue;
            }
            m[r * dim + col] = 0.0;
            for k in col + 1..dim {
                m[r * dim + k] -= f * m[col * dim + k];
            }
            b[r] -= f * b[col];
        }
    }
    let mut pi = vec![0.0; dim];
    for r in (0..dim).rev() {
        let mut acc = b[r];
        for k in r + 1..dim {
            acc -= m[r * dim + k] * pi[k];
        }
        pi[r] = acc / m[r * dim + r];
    }
    for v in &mut pi {
        *v = v.max(0.0);
    }
    let sum: f64 = pi.iter().sum();
    if sum <= 0.0 || !sum.is_finite() {
        return None;
    }
    for v in &mut pi {
        *v /= sum;
    }
    let mut y = vec![0.0; dim];
    vec_matrix(&pi, p, &mut y);
    let residual = max_abs_diff(&y, &pi);
    if residual <= tol {
        Some(StationaryDist { pi, residual })
    } else {
        None
    }
}

/// Outcome of the conditional-law check on the extended chain.
#[derive(Debug, Clone, PartialEq)]
pub struct Lemma1Report {
    pub n: usize,
    pub max_deviation: f64,
    pub tol: f64,
    pub stationary_residual: f64,
}

impl Lemma1Report {
    pub fn passed(&self) -> bool {
        self.max_deviation <= self.tol
    }
}

impl std::fmt::Display for Lemma1Report {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "conditional-law check (n={}): max deviation {:e} vs tol {:e} -> {}",
            self.n,
            self.max_deviation,
            self.tol,
            if self.passed() { "pass" } else { "FAIL" }
        )
    }
}

/// Max deviation between the conditional law of the current half given the
/// previous half under π̃, and the base kernel row of the previous half.
fn conditional_law_deviation(pi_ext: &[f64], base: &TransitionMatrix) -> Result<f64> {
    let n = base.n();
    let dim = base.dim();
    debug_assert_eq!(pi_ext.len(), dim * dim);
    let mut worst = 0.0f64;
    for prev in 0..dim {
        let mass: f64 = (0..dim).map(|cur| pi_ext[(cur << n) | prev]).sum();
        if mass < DEGENERATE_MASS_FLOOR {
            return Err(Error::DegenerateMass { state: prev, mass });
        }
        for cur in 0..dim {
            let cond = pi_ext[(cur << n) | prev] / mass;
            worst = worst.max((cond - base.get(prev, cur)).abs());
        }
    }
    Ok(worst)
}

/// Checks that under the extended stationary law, the current state
/// conditioned on the previous state is distributed exactly by the base
/// kernel. Passes iff the max deviation is below `tol`.
pub fn verify_lemma1(params: &NetworkParams, tol: f64) -> Result<Lemma1Report> {
    if tol.is_nan() || tol <= 0.0 {
        return Err(Error::InvalidParams(format!(
            "report tolerance must be positive, got {tol}"
        )));
    }
    let base = build_transition_matrix(params)?;
    let ext = build_extended_matrix(params)?;
    let solve_tol = LEMMA_SOLVE_TOL.min(tol);
    let pi = stationary_distribution(&ext, solve_tol, STATIONARY_MAX_ITER)?;
    let max_deviation = conditional_law_deviation(pi.probabilities(), &base)?;
    Ok(Lemma1Report {
        n: params.n(),
        max_deviation,
        tol,
        stationary_residual: pi.residual(),
    })
}
