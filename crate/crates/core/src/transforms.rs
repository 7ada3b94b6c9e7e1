//! Identifiability utilities: scale canonicalization, the absolutely
//! row-stochastic form, kernel separation between parameter sets, and the
//! constructive inverse that rebuilds (A, c) from a kernel.

use crate::error::{Error, Result};
use crate::markov::{build_transition_matrix, MatrixKind, TransitionMatrix};
use crate::model::{NetworkParams, StateVec};
use crate::normal::cdf_inv;

/// Largest rebuild residual at which a matrix still counts as a kernel of
/// the model family.
pub const KERNEL_MATCH_TOL: f64 = 1e-6;

/// Canonical σ = 1 form: divides (A_i, c_i) by σ_i. The margins, and hence
/// the kernel, are unchanged.
pub fn standardize(params: &NetworkParams) -> NetworkParams {
    if params.unit_noise() {
        return params.clone();
    }
    let n = params.n();
    let mut a = Vec::with_capacity(n * n);
    let mut c = Vec::with_capacity(n);
    for i in 0..n {
        let s = params.noise_sd(i);
        a.extend(params.weight_row(i).iter().map(|v| v / s));
        c.push(params.threshold(i) / s);
    }
    NetworkParams::with_unit_noise(n, a, c)
        .expect("scaling a valid row by a positive constant keeps it valid")
}

/// Rescales each block by a^i = Σ_j |a_ij| so that |Ã| is row stochastic:
/// returns (A_i/a^i, c_i/a^i, σ_i/a^i). Kernel unchanged.
pub fn to_row_stochastic(params: &NetworkParams) -> NetworkParams {
    let n = params.n();
    let mut a = Vec::with_capacity(n * n);
    let mut c = Vec::with_capacity(n);
    let mut sigma = Vec::with_capacity(n);
    for i in 0..n {
        let scale: f64 = params.weight_row(i).iter().map(|v| v.abs()).sum();
        a.extend(params.weight_row(i).iter().map(|v| v / scale));
        c.push(params.threshold(i) / scale);
        sigma.push(params.noise_sd(i) / scale);
    }
    NetworkParams::new(n, a, c, sigma)
        .expect("scaling a valid block by a positive constant keeps it valid")
}

/// Max-abs entrywise difference of the two base kernels. Zero exactly when
/// the parameters generate the same chain.
pub fn kernel_distance(p1: &NetworkParams, p2: &NetworkParams) -> Result<f64> {
    if p1.n() != p2.n() {
        return Err(Error::Dimension {
            what: "kernel comparison width",
            expected: p1.n(),
            got: p2.n(),
        });
    }
    let m1 = build_transition_matrix(p1)?;
    let m2 = build_transition_matrix(p2)?;
    Ok(m1
        .entries()
        .iter()
        .zip(m2.entries())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max))
}

/// Rebuilds σ = 1 parameters from a base kernel.
///
/// Works off the per-agent marginals m_i(u) = P{bit i set next | u}, summing
/// each row over the states with bit i set (better conditioned than the
/// single-state products): m_i(u) = 1 − Φ(c_i − A_i·u), so
/// c_i = −Φ^{−1}(m_i(0)) and a_ij = c_i + Φ^{−1}(m_i(e_j)).
///
/// The recovered parameters must reproduce the input kernel within
/// [`KERNEL_MATCH_TOL`]; anything else is rejected as outside the family.
pub fn recover_from_kernel(p: &TransitionMatrix) -> Result<NetworkParams> {
    if p.kind() != MatrixKind::Base {
        return Err(Error::InvalidParams(
            "recovery needs a base kernel, not an extended one".into(),
        ));
    }
    let n = p.n();
    let marginal = |u: usize, i: usize| -> Result<f64> {
        let m: f64 = p
            .row(u)
            .iter()
            .enumerate()
            .filter(|(s, _)| s >> i & 1 == 1)
            .map(|(_, v)| v)
            .sum();
        if m <= 0.0 || m >= 1.0 {
            return Err(Error::ModelMismatch {
                reason: format!(
                    "P{{bit {i} set | state {u}}} = {m}, outside (0, 1); \
                     the family's kernels are strictly positive"
                ),
            });
        }
        Ok(m)
    };
    let mut a = vec![0.0; n * n];
    let mut c = Vec::with_capacity(n);
    for i in 0..n {
        let ci = -cdf_inv(marginal(0, i)?);
        for j in 0..n {
            a[i * n + j] = ci + cdf_inv(marginal(1 << j, i)?);
        }
        c.push(ci);
    }
    let params = NetworkParams::with_unit_noise(n, a, c)?;
    let rebuilt = build_transition_matrix(&params)?;
    let residual = rebuilt
        .entries()
        .iter()
        .zip(p.entries())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    if residual > KERNEL_MATCH_TOL {
        return Err(Error::ModelMismatch {
            reason: format!(
                "best-fitting parameters miss the input kernel by {residual:e} \
                 (tolerance {KERNEL_MATCH_TOL:e})"
            ),
        });
    }
    Ok(params)
}

/// Convenience for building the canonical state u = e_j.
pub fn unit_state(j: usize, n: usize) -> Result<StateVec> {
    StateVec::new(1u32 << j, n)
}
