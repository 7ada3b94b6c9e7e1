//! Per-agent conditional likelihood, trajectory log-likelihood, the score
//! vector, and the exact expected objective under the extended stationary
//! law.
//!
//! Notation: for candidate block θ^(i) = (a_i1, …, a_in, c_i) and extended
//! state x̃ = (current, previous), the margin is z_i = c_i − A_i·x with x the
//! PREVIOUS half, and g_i = Φ(−z_i)^{x̃_i}·Φ(z_i)^{1−x̃_i} with x̃_i the
//! CURRENT half's bit i.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::markov::{
    build_extended_matrix, stationary_distribution, StationaryDist, STATIONARY_MAX_ITER,
    STATIONARY_TOL,
};
use crate::model::{bit_dot, ExtState, NetworkParams, ParamVector, Trajectory};
use crate::normal::{inv_mills, log_cdf};

/// Steps dropped from the front of a trajectory before ergodic averaging.
/// Generous for these chains: the kernel is strictly positive, so mixing is
/// geometric.
pub const DEFAULT_BURN_IN: usize = 1_000;

/// One-step log-likelihood gradient K(θ, x̃), flattened like [`ParamVector`]:
/// block i holds (∂/∂a_i1, …, ∂/∂a_in, ∂/∂c_i).
#[derive(Debug, Clone, PartialEq)]
pub struct Score {
    k: Vec<f64>,
    n: usize,
}

impl Score {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.k.len()
    }

    pub fn is_empty(&self) -> bool {
        self.k.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.k
    }

    /// Block K_i = ∇_{θ^(i)} log g_i, n+1 entries.
    pub fn block(&self, i: usize) -> &[f64] {
        &self.k[i * (self.n + 1)..(i + 1) * (self.n + 1)]
    }

    pub fn norm(&self) -> f64 {
        self.k.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// log g_i(x̃ | θ^(i)): agent i's conditional log-probability of its current
/// bit given the previous state, under the candidate block. Always finite
/// and ≤ 0 for finite inputs.
pub fn log_g(theta_block: &[f64], xt: ExtState, agent: usize) -> f64 {
    let n = xt.n();
    assert_eq!(
        theta_block.len(),
        n + 1,
        "block must hold n weights plus a threshold"
    );
    assert!(agent < n, "agent index {agent} out of range for n = {n}");
    let z = theta_block[n] - bit_dot(&theta_block[..n], xt.previous());
    if xt.current().bit(agent) {
        log_cdf(-z)
    } else {
        log_cdf(z)
    }
}

/// Σ_i log g_i at one extended state.
fn step_log_g(theta: &ParamVector, xt: ExtState) -> f64 {
    (0..theta.n()).map(|i| log_g(theta.block(i), xt, i)).sum()
}

/// Trajectory log-likelihood Σ_{t=1..T} Σ_i log g_i(S̃_t | θ^(i)).
///
/// The log P{S_0 = s⁰} term is deliberately EXCLUDED: the initial law is
/// unknown at estimation time and the term is asymptotically irrelevant, so
/// the objective being climbed drops it too.
pub fn log_likelihood(theta: &ParamVector, traj: &Trajectory) -> Result<f64> {
    if traj.is_empty() {
        return Err(Error::EmptyTrajectory);
    }
    if traj.n() != theta.n() {
        return Err(Error::Dimension {
            what: "trajectory state width",
            expected: theta.n(),
            got: traj.n(),
        });
    }
    Ok(traj.pairs().map(|xt| step_log_g(theta, xt)).sum())
}

/// The score K(θ, x̃) = ∇_θ Σ_i log g_i(x̃ | θ^(i)).
///
/// With z = c_i − A_i·x: d log Φ(−z)/dz = −λ(−z) and d log Φ(z)/dz = λ(z)
/// for the inverse Mills ratio λ = φ/Φ, while ∂z/∂c_i = 1 and
/// ∂z/∂a_ij = −x_j. So ∂/∂c_i = x̃_i·(−λ(−z)) + (1−x̃_i)·λ(z) and
/// ∂/∂a_ij = −x_j · ∂/∂c_i.
pub fn score(theta: &ParamVector, xt: ExtState) -> Score {
    let n = theta.n();
    assert_eq!(xt.n(), n, "state width must match the parameter vector");
    let mut k = vec![0.0; n * (n + 1)];
    for i in 0..n {
        let b = theta.block(i);
        let z = b[n] - bit_dot(&b[..n], xt.previous());
        let w = if xt.current().bit(i) {
            -inv_mills(-z)
        } else {
            inv_mills(z)
        };
        let row = &mut k[i * (n + 1)..(i + 1) * (n + 1)];
        let mut bits = xt.previous().bits();
        while bits != 0 {
            let j = bits.trailing_zeros() as usize;
            row[j] = -w;
            bits &= bits - 1;
        }
        row[n] = w;
    }
    Score { k, n }
}

/// Exact value and gradient of E{Σ_i log g_i(S̃ | θ^(i))} with S̃ drawn from
/// the extended stationary law of the GENERATING parameters, evaluated at the
/// CANDIDATE θ.
#[derive(Debug, Clone)]
pub struct ObjectiveReport {
    value: f64,
    gradient: Vec<f64>,
    stationary: StationaryDist,
}

impl ObjectiveReport {
    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn gradient(&self) -> &[f64] {
        &self.gradient
    }

    pub fn gradient_norm(&self) -> f64 {
        self.gradient.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// The extended stationary distribution the expectation was taken under.
    pub fn stationary(&self) -> &StationaryDist {
        &self.stationary
    }
}

/// Builds the extended stationary law of `generating` and evaluates the
/// expected objective and its gradient at `theta`. Exact up to the stationary
/// solve; needs n ≤ 6.
pub fn expected_objective(theta: &ParamVector, generating: &NetworkParams) -> Result<ObjectiveReport> {
    if theta.n() != generating.n() {
        return Err(Error::Dimension {
            what: "candidate parameter width",
            expected: generating.n(),
            got: theta.n(),
        });
    }
    let ext = build_extended_matrix(generating)?;
    let pi = stationary_distribution(&ext, STATIONARY_TOL, STATIONARY_MAX_ITER)?;
    expected_objective_under(theta, &pi)
}

/// Same weighted sums against an already-computed extended stationary law,
/// for sweeps that pin the generating parameters and move only θ.
///
/// Per-state terms are computed in parallel; the final reduction is a
/// sequential sum in state order, so results do not depend on thread count.
pub fn expected_objective_under(
    theta: &ParamVector,
    stationary: &StationaryDist,
) -> Result<ObjectiveReport> {
    let n = theta.n();
    let dim_ext = 1usize << (2 * n);
    if stationary.len() != dim_ext {
        return Err(Error::Dimension {
            what: "extended stationary distribution",
            expected: dim_ext,
            got: stationary.len(),
        });
    }
    let terms: Vec<(f64, Score)> = (0..dim_ext)
        .into_par_iter()
        .map(|flat| {
            let xt = ExtState::from_flat(flat, n).expect("flat index within 4^n");
            let p = stationary.prob(flat);
            (p * step_log_g(theta, xt), score(theta, xt))
        })
        .collect();
    let mut value = 0.0;
    let mut gradient = vec![0.0; n * (n + 1)];
    for (flat, (v, k)) in terms.into_iter().enumerate() {
        let p = stationary.prob(flat);
        value += v;
        for (g, kv) in gradient.iter_mut().zip(k.as_slice()) {
            *g += p * kv;
        }
    }
    Ok(ObjectiveReport {
        value,
        gradient,
        stationary: stationary.clone(),
    })
}

/// One point of an objective slice: the candidate's `component` moved by
/// `offset` from the sweep center.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub component: usize,
    pub offset: f64,
    pub value: f64,
    pub grad_norm: f64,
}

/// Sweeps one coordinate of θ over the given offsets, holding the generating
/// parameters (hence the stationary law) fixed.
pub fn objective_sweep(
    center: &ParamVector,
    generating: &NetworkParams,
    component: usize,
    offsets: &[f64],
) -> Result<Vec<SweepPoint>> {
    if component >= center.len() {
        return Err(Error::InvalidParams(format!(
            "sweep component {component} out of range for a θ of length {}",
            center.len()
        )));
    }
    if center.n() != generating.n() {
        return Err(Error::Dimension {
            what: "sweep center width",
            expected: generating.n(),
            got: center.n(),
        });
    }
    let ext = build_extended_matrix(generating)?;
    let pi = stationary_distribution(&ext, STATIONARY_TOL, STATIONARY_MAX_ITER)?;
    offsets
        .iter()
        .map(|&offset| {
            let mut theta = center.clone();
            theta.as_mut_slice()[component] += offset;
            let report = expected_objective_under(&theta, &pi)?;
            Ok(SweepPoint {
                component,
                offset,
                value: report.value(),
                grad_norm: report.gradient_norm(),
            })
        })
        .collect()
}

/// Time average of Σ_i log g_i over the trajectory after dropping the first
/// `burn_in` steps. Converges to the expected objective as T grows.
pub fn ergodic_objective_estimate(
    theta: &ParamVector,
    traj: &Trajectory,
    burn_in: usize,
) -> Result<f64> {
    if traj.n() != theta.n() {
        return Err(Error::Dimension {
            what: "trajectory state width",
            expected: theta.n(),
            got: traj.n(),
        });
    }
    if traj.len() <= burn_in {
        return Err(Error::InvalidParams(format!(
            "trajectory has {} steps, need more than the burn-in of {}",
            traj.len(),
            burn_in
        )));
    }
    let kept = (traj.len() - burn_in) as f64;
    let total: f64 = traj
        .pairs()
        .skip(burn_in)
        .map(|xt| step_log_g(theta, xt))
        .sum();
    Ok(total / kept)
}
