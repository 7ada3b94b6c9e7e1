//! The quantized network dynamics: parameters, bitmask state encodings, the
//! quantizer, and seeded trajectory simulation.
//!
//! The latent update is Y_t = A·S_{t−1} + D_t with independent Gaussian
//! disturbances D_{t,i} ~ N(0, σ_i²); the only observable is the bit vector
//! S_t with S_{t,i} = I[Y_{t,i} > c_i].

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::normal;

/// Hard cap on simulated network size (bitmask width).
pub const MAX_AGENTS: usize = 20;

/// Network parameters (A, c, σ): the object the estimator recovers.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    n: usize,
    a: Vec<f64>, // row-major n×n
    c: Vec<f64>,
    sigma: Vec<f64>,
}

impl NetworkParams {
    /// Builds params from a row-major weight matrix, thresholds, and noise
    /// standard deviations.
    pub fn new(n: usize, a: Vec<f64>, c: Vec<f64>, sigma: Vec<f64>) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidParams(format!("need n >= 2, got n = {n}")));
        }
        if n > MAX_AGENTS {
            return Err(Error::Capacity {
                what: "NetworkParams",
                n,
                cap: MAX_AGENTS,
            });
        }
        if a.len() != n * n {
            return Err(Error::Dimension {
                what: "weight matrix",
                expected: n * n,
                got: a.len(),
            });
        }
        if c.len() != n {
            return Err(Error::Dimension {
                what: "threshold vector",
                expected: n,
                got: c.len(),
            });
        }
        if sigma.len() != n {
            return Err(Error::Dimension {
                what: "noise-sd vector",
                expected: n,
                got: sigma.len(),
            });
        }
        if a.iter().chain(&c).chain(&sigma).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams("non-finite entry".into()));
        }
        for i in 0..n {
            let abs_row: f64 = a[i * n..(i + 1) * n].iter().map(|v| v.abs()).sum();
            if abs_row <= 0.0 {
                return Err(Error::InvalidParams(format!(
                    "row {i} of |A| sums to zero; every agent must carry some weight"
                )));
            }
            if sigma[i] <= 0.0 {
                return Err(Error::InvalidParams(format!(
                    "sigma[{i}] = {} is not strictly positive",
                    sigma[i]
                )));
            }
        }
        Ok(Self { n, a, c, sigma })
    }

    /// Same, with all noise standard deviations fixed at 1, the canonical
    /// form the identification theory works in.
    pub fn with_unit_noise(n: usize, a: Vec<f64>, c: Vec<f64>) -> Result<Self> {
        let sigma = vec![1.0; n];
        Self::new(n, a, c, sigma)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.n + j]
    }

    pub fn weight_row(&self, i: usize) -> &[f64] {
        &self.a[i * self.n..(i + 1) * self.n]
    }

    pub fn weights(&self) -> &[f64] {
        &self.a
    }

    pub fn threshold(&self, i: usize) -> f64 {
        self.c[i]
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.c
    }

    pub fn noise_sd(&self, i: usize) -> f64 {
        self.sigma[i]
    }

    pub fn noise_sds(&self) -> &[f64] {
        &self.sigma
    }

    pub fn unit_noise(&self) -> bool {
        self.sigma.iter().all(|&s| s == 1.0)
    }

    /// Row activation A_i·s for a bit-vector state.
    pub fn activation(&self, i: usize, s: StateVec) -> f64 {
        bit_dot(self.weight_row(i), s)
    }

    /// Standardized margin z_i = (c_i − A_i·s)/σ_i; the kernel's per-agent
    /// one-probability is 1 − Φ(z_i).
    pub fn margin(&self, i: usize, s: StateVec) -> f64 {
        (self.c[i] - self.activation(i, s)) / self.sigma[i]
    }

    pub(crate) fn check_width(&self, what: &'static str, s: StateVec) -> Result<()> {
        if s.n() != self.n {
            return Err(Error::Dimension {
                what,
                expected: self.n,
                got: s.n(),
            });
        }
        Ok(())
    }
}

/// Dot product of a coefficient row with a 0/1 state, summed in index order.
pub(crate) fn bit_dot(row: &[f64], s: StateVec) -> f64 {
    let mut acc = 0.0;
    let mut bits = s.bits();
    while bits != 0 {
        let j = bits.trailing_zeros() as usize;
        acc += row[j];
        bits &= bits - 1;
    }
    acc
}

/// A point of {0,1}^n packed into a bitmask: bit i−1 carries agent i's value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StateVec {
    bits: u32,
    n: usize,
}

impl StateVec {
    pub fn new(bits: u32, n: usize) -> Result<Self> {
        if n == 0 || n > 32 {
            return Err(Error::InvalidParams(format!("state width {n} out of range")));
        }
        if n < 32 && bits >= 1u32 << n {
            return Err(Error::InvalidParams(format!(
                "bitmask {bits} does not fit in {n} bits"
            )));
        }
        Ok(Self { bits, n })
    }

    pub fn zeros(n: usize) -> Self {
        Self::new(0, n).expect("zero state is valid for any supported width")
    }

    pub fn from_bools(s: &[bool]) -> Result<Self> {
        let mut bits = 0u32;
        for (i, &b) in s.iter().enumerate() {
            if b {
                bits |= 1 << i;
            }
        }
        Self::new(bits, s.len())
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn bit(&self, i: usize) -> bool {
        debug_assert!(i < self.n);
        self.bits >> i & 1 == 1
    }

    /// Row/column index of this state in a dense 2^n kernel.
    pub fn index(&self) -> usize {
        self.bits as usize
    }

    pub fn to_bools(self) -> Vec<bool> {
        (0..self.n).map(|i| self.bit(i)).collect()
    }
}

impl std::fmt::Display for StateVec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "(")?;
        for i in 0..self.n {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{}", u8::from(self.bit(i)))?;
        }
        write!(f, ")")
    }
}

/// The extended chain's point S̃_t = (S_t, S_{t−1}) on {0,1}^{2n}.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ExtState {
    current: StateVec,
    previous: StateVec,
}

impl ExtState {
    pub fn new(current: StateVec, previous: StateVec) -> Result<Self> {
        if current.n() != previous.n() {
            return Err(Error::Dimension {
                what: "extended-state halves",
                expected: current.n(),
                got: previous.n(),
            });
        }
        Ok(Self { current, previous })
    }

    pub fn current(&self) -> StateVec {
        self.current
    }

    pub fn previous(&self) -> StateVec {
        self.previous
    }

    pub fn n(&self) -> usize {
        self.current.n()
    }

    /// Flat index current·2^n + previous, a bijection onto {0,…,2^{2n}−1}.
    pub fn flat_index(&self) -> usize {
        (self.current.index() << self.current.n()) | self.previous.index()
    }

    pub fn from_flat(flat: usize, n: usize) -> Result<Self> {
        let mask = (1usize << n) - 1;
        if flat >> (2 * n) != 0 {
            return Err(Error::InvalidParams(format!(
                "flat index {flat} does not fit in {} bits",
                2 * n
            )));
        }
        Ok(Self {
            current: StateVec::new((flat >> n & mask) as u32, n)?,
            previous: StateVec::new((flat & mask) as u32, n)?,
        })
    }
}

/// Recorded chain: S_0 plus the observations S_1..S_T and the seed that
/// produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    initial: StateVec,
    observations: Vec<StateVec>,
    seed: u64,
}

impl Trajectory {
    pub fn new(initial: StateVec, observations: Vec<StateVec>, seed: u64) -> Result<Self> {
        if observations.is_empty() {
            return Err(Error::EmptyTrajectory);
        }
        if observations.iter().any(|s| s.n() != initial.n()) {
            return Err(Error::Dimension {
                what: "trajectory entry width",
                expected: initial.n(),
                got: observations.iter().find(|s| s.n() != initial.n()).unwrap().n(),
            });
        }
        Ok(Self {
            initial,
            observations,
            seed,
        })
    }

    pub fn initial(&self) -> StateVec {
        self.initial
    }

    pub fn observations(&self) -> &[StateVec] {
        &self.observations
    }

    /// Number of steps T.
    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn n(&self) -> usize {
        self.initial.n()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// S_t for t in 0..=T.
    pub fn state(&self, t: usize) -> StateVec {
        if t == 0 {
            self.initial
        } else {
            self.observations[t - 1]
        }
    }

    /// The extended states S̃_t = (S_t, S_{t−1}) for t = 1..T, in order.
    pub fn pairs(&self) -> impl Iterator<Item = ExtState> + '_ {
        std::iter::once(self.initial)
            .chain(self.observations.iter().copied())
            .scan(None, |prev, cur| {
                let out = prev.map(|p| ExtState::new(cur, p).expect("widths checked at construction"));
                *prev = Some(cur);
                Some(out)
            })
            .flatten()
    }
}

/// Deterministic Gaussian disturbance source.
///
/// The generator is pinned: ChaCha8 keyed by the seed, one ChaCha stream per
/// time step (stream index = t, starting at 1), and agent i's draw is the
/// 64-bit word at position 2i of that stream mapped through
/// u = (w >> 11 + 0.5)·2⁻⁵³ and Φ⁻¹(u). Per-agent draws are therefore
/// addressable independently of evaluation order.
#[derive(Debug, Clone)]
pub struct NoiseStream {
    seed: u64,
    step: u64,
}

impl NoiseStream {
    pub fn new(seed: u64) -> Self {
        Self { seed, step: 1 }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// The time step the next draw belongs to.
    pub fn step(&self) -> u64 {
        self.step
    }

    fn rng(seed: u64, step: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(step);
        rng
    }

    fn advance(&mut self) {
        self.step += 1;
    }
}

fn standard_normal_from_word(w: u64) -> f64 {
    // 53-bit mantissa, centered so u is strictly inside (0, 1).
    let u = ((w >> 11) as f64 + 0.5) * (1.0 / 9_007_199_254_740_992.0);
    normal::cdf_inv(u)
}

/// Agent i's standard-normal disturbance at a given step, addressed directly.
pub fn agent_noise(seed: u64, step: u64, agent: usize) -> f64 {
    let mut rng = NoiseStream::rng(seed, step);
    rng.set_word_pos(2 * agent as u128);
    standard_normal_from_word(rng.next_u64())
}

/// Bit i is 1 iff y_i > c_i (strict; ties map to 0).
pub fn quantize(y: &[f64], c: &[f64]) -> Result<StateVec> {
    if y.len() != c.len() {
        return Err(Error::Dimension {
            what: "quantizer input",
            expected: c.len(),
            got: y.len(),
        });
    }
    if y.len() < 2 {
        return Err(Error::Dimension {
            what: "quantizer width",
            expected: 2,
            got: y.len(),
        });
    }
    let mut bits = 0u32;
    for (i, (&yi, &ci)) in y.iter().zip(c).enumerate() {
        if yi > ci {
            bits |= 1 << i;
        }
    }
    StateVec::new(bits, y.len())
}

/// One transition of the chain: draws D_t from the stream's current step,
/// forms Y = A·s_prev + D, and quantizes. Advances the stream by one step.
pub fn step_dynamics(
    params: &NetworkParams,
    s_prev: StateVec,
    noise: &mut NoiseStream,
) -> Result<StateVec> {
    params.check_width("step_dynamics state", s_prev)?;
    let n = params.n();
    let mut y = [0.0f64; MAX_AGENTS];
    let mut rng = NoiseStream::rng(noise.seed, noise.step);
    for (i, yi) in y[..n].iter_mut().enumerate() {
        let d = standard_normal_from_word(rng.next_u64());
        *yi = params.activation(i, s_prev) + params.noise_sd(i) * d;
    }
    noise.advance();
    quantize(&y[..n], params.thresholds())
}

/// Runs the chain T steps from s0 under the pinned noise stream for `seed`.
pub fn simulate_trajectory(
    params: &NetworkParams,
    s0: StateVec,
    steps: usize,
    seed: u64,
) -> Result<Trajectory> {
    if steps == 0 {
        return Err(Error::EmptyTrajectory);
    }
    params.check_width("initial state", s0)?;
    let mut noise = NoiseStream::new(seed);
    let mut observations = Vec::with_capacity(steps);
    let mut prev = s0;
    for _ in 0..steps {
        prev = step_dynamics(params, prev, &mut noise)?;
        observations.push(prev);
    }
    Trajectory::new(s0, observations, seed)
}

/// Flattened θ = vec{(A c)}: block i is (a_i1, …, a_in, c_i).
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    theta: Vec<f64>,
    n: usize,
}

impl ParamVector {
    pub fn new(theta: Vec<f64>, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidParams(format!("need n >= 2, got n = {n}")));
        }
        if theta.len() != n * (n + 1) {
            return Err(Error::Dimension {
                what: "parameter vector",
                expected: n * (n + 1),
                got: theta.len(),
            });
        }
        Ok(Self { theta, n })
    }

    pub fn zeros(n: usize) -> Result<Self> {
        Self::new(vec![0.0; n * (n + 1)], n)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.theta
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    /// Block θ^(i) = (A_i, c_i), n+1 entries.
    pub fn block(&self, i: usize) -> &[f64] {
        &self.theta[i * (self.n + 1)..(i + 1) * (self.n + 1)]
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.theta[i * (self.n + 1) + j]
    }

    pub fn threshold(&self, i: usize) -> f64 {
        self.theta[i * (self.n + 1) + self.n]
    }

    /// Euclidean distance to another vector of the same shape.
    pub fn distance(&self, other: &ParamVector) -> Result<f64> {
        if other.len() != self.len() {
            return Err(Error::Dimension {
                what: "parameter vector",
                expected: self.len(),
                got: other.len(),
            });
        }
        Ok(self
            .theta
            .iter()
            .zip(&other.theta)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt())
    }
}

/// θ = vec{(A c)} of the given params; refers to the σ = 1 canonical form,
/// so σ is ignored by construction (standardize first if σ ≠ 1 matters).
pub fn vec_params(params: &NetworkParams) -> ParamVector {
    let n = params.n();
    let mut theta = Vec::with_capacity(n * (n + 1));
    for i in 0..n {
        theta.extend_from_slice(params.weight_row(i));
        theta.push(params.threshold(i));
    }
    ParamVector { theta, n }
}

/// Rebuilds NetworkParams (σ = 1) from a flattened θ, enforcing the row-sum
/// invariant.
pub fn unvec_params(theta: &ParamVector) -> Result<NetworkParams> {
    let n = theta.n();
    let mut a = Vec::with_capacity(n * n);
    let mut c = Vec::with_capacity(n);
    for i in 0..n {
        let block = theta.block(i);
        a.extend_from_slice(&block[..n]);
        c.push(block[n]);
    }
    NetworkParams::with_unit_noise(n, a, c)
}
