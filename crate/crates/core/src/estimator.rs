//! Recursive stochastic-approximation estimator: θ_{t+1} = Π_M[θ_t + a_t·K(θ_t, S̃_{t+1})]
//! with harmonic step schedules and an optional box projection Π_M.

use crate::error::{Error, Result};
use crate::likelihood::score;
use crate::model::{
    step_dynamics, vec_params, ExtState, NetworkParams, NoiseStream, ParamVector, StateVec,
};

/// Box half-width for the default projection; wide enough to never bind on
/// the benchmark instances while still guaranteeing bounded iterates.
pub const DEFAULT_BOUND: f64 = 100.0;

/// Snapshot cadence, in updates.
pub const DEFAULT_SNAPSHOT_EVERY: u64 = 100;

/// Step sizes a_t = a/(t + b): positive, non-summable, square-summable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSchedule {
    a: f64,
    b: f64,
}

impl StepSchedule {
    pub fn harmonic(a: f64, b: f64) -> Result<Self> {
        if a <= 0.0 || !a.is_finite() {
            return Err(Error::InvalidParams(format!(
                "step numerator must be positive and finite, got {a}"
            )));
        }
        if b < 0.0 || !b.is_finite() {
            return Err(Error::InvalidParams(format!(
                "step offset must be nonnegative and finite, got {b}"
            )));
        }
        Ok(Self { a, b })
    }

    pub fn numerator(&self) -> f64 {
        self.a
    }

    pub fn offset(&self) -> f64 {
        self.b
    }

    /// a_t for t ≥ 1.
    pub fn step_size(&self, t: u64) -> f64 {
        self.a / (t as f64 + self.b)
    }
}

/// Which extended state feeds the first update when a run starts at S_0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FirstUpdate {
    /// First update consumes (S_1, S_0); natural when S_0 is observed, as in
    /// simulation. The default.
    #[default]
    IncludeInitialPair,
    /// First update consumes (S_2, S_1); for streams whose first state has
    /// no trusted predecessor.
    SkipInitialPair,
}

/// The recursion's full state: current iterate, step counter, schedule, and
/// the projection bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorState {
    theta: ParamVector,
    t: u64,
    schedule: StepSchedule,
    bound: Option<f64>,
    truncation_count: u64,
}

impl EstimatorState {
    /// Starts at t = 1 with iterate θ_1 = theta0.
    pub fn new(theta0: ParamVector, schedule: StepSchedule, bound: Option<f64>) -> Result<Self> {
        if let Some(m) = bound {
            if m <= 0.0 || !m.is_finite() {
                return Err(Error::InvalidParams(format!(
                    "projection bound must be positive and finite, got {m}"
                )));
            }
            if theta0.as_slice().iter().any(|v| v.abs() > m) {
                return Err(Error::InvalidParams(format!(
                    "initial parameters leave the projection box [-{m}, {m}]"
                )));
            }
        }
        if theta0.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams("non-finite initial parameters".into()));
        }
        Ok(Self {
            theta: theta0,
            t: 1,
            schedule,
            bound,
            truncation_count: 0,
        })
    }

    pub fn theta(&self) -> &ParamVector {
        &self.theta
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn schedule(&self) -> StepSchedule {
        self.schedule
    }

    pub fn bound(&self) -> Option<f64> {
        self.bound
    }

    /// Number of updates the projection has clipped so far.
    pub fn truncation_count(&self) -> u64 {
        self.truncation_count
    }
}

/// One update: θ ← Π_M[θ + a_t·K(θ, x̃)], t ← t+1.
pub fn sa_step(state: EstimatorState, xt: ExtState) -> Result<EstimatorState> {
    let k = score(&state.theta, xt);
    apply_step(state, k.as_slice())
}

/// The update with the score supplied directly; seam for injecting synthetic
/// gradients in tests.
fn apply_step(mut state: EstimatorState, k: &[f64]) -> Result<EstimatorState> {
    debug_assert_eq!(k.len(), state.theta.len());
    if let Some(bad) = k.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteScore {
            block: bad / (state.theta.n() + 1),
        });
    }
    let a_t = state.schedule.step_size(state.t);
    let mut clipped = false;
    for (th, kv) in state.theta.as_mut_slice().iter_mut().zip(k) {
        let mut v = *th + a_t * kv;
        if let Some(m) = state.bound {
            let boxed = v.clamp(-m, m);
            clipped |= boxed != v;
            v = boxed;
        }
        *th = v;
    }
    state.t += 1;
    if clipped {
        state.truncation_count += 1;
    }
    Ok(state)
}

/// Iterate recorded mid-run: θ after `t` updates, with ‖θ − θ*‖ when the
/// generating parameters are known.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub t: u64,
    pub theta: ParamVector,
    pub err_norm: Option<f64>,
}

/// Completed run: snapshot trail plus counters.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    n: usize,
    seed: Option<u64>,
    snapshots: Vec<Snapshot>,
    updates: u64,
    truncation_count: u64,
}

impl RunRecord {
    pub fn n(&self) -> usize {
        self.n
    }

    /// Simulation seed; absent for runs over external streams.
    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn snapshots(&self) -> &[Snapshot] {
        &self.snapshots
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn truncation_count(&self) -> u64 {
        self.truncation_count
    }

    /// The last iterate (every run records at least the final snapshot).
    pub fn final_theta(&self) -> &ParamVector {
        &self.snapshots.last().expect("runs record a final snapshot").theta
    }

    /// ‖θ_t − θ*‖ at the snapshot taken after `t` updates, if recorded.
    pub fn err_at(&self, t: u64) -> Option<f64> {
        self.snapshots
            .iter()
            .find(|s| s.t == t)
            .and_then(|s| s.err_norm)
    }
}

/// Run controls shared by the simulation and stream drivers.
/// `initial_state` seeds the simulated chain only (defaults to the all-zeros
/// state) and is ignored when estimating over an external stream.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub bound: Option<f64>,
    pub first_update: FirstUpdate,
    pub initial_state: Option<StateVec>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            bound: Some(DEFAULT_BOUND),
            first_update: FirstUpdate::default(),
            initial_state: None,
        }
    }
}

/// Simulates `steps` transitions of the chain under `params` and applies the
/// recursion along the way. Deterministic given `seed`; snapshots carry
/// ‖θ − θ*‖ against the generating parameters.
pub fn run_estimator(
    params: &NetworkParams,
    theta0: &ParamVector,
    schedule: StepSchedule,
    steps: u64,
    seed: u64,
    snapshot_every: u64,
    opts: &RunOptions,
) -> Result<RunRecord> {
    let n = params.n();
    if theta0.n() != n {
        return Err(Error::Dimension {
            what: "initial parameter width",
            expected: n,
            got: theta0.n(),
        });
    }
    let s0 = match opts.initial_state {
        Some(s) => {
            params.check_width("initial state", s)?;
            s
        }
        None => StateVec::zeros(n),
    };
    if steps == 0 {
        return Err(Error::InvalidParams("need at least one simulated step".into()));
    }
    let state = EstimatorState::new(theta0.clone(), schedule, opts.bound)?;
    let truth = vec_params(params);
    let mut noise = NoiseStream::new(seed);
    let mut cur = s0;
    let mut left = steps;
    let states = std::iter::once(s0).chain(std::iter::from_fn(|| {
        if left == 0 {
            return None;
        }
        left -= 1;
        cur = step_dynamics(params, cur, &mut noise).expect("widths checked above");
        Some(cur)
    }));
    let mut record = estimate_over_states(
        state,
        states,
        opts.first_update,
        snapshot_every,
        Some(&truth),
    )?;
    record.seed = Some(seed);
    Ok(record)
}

/// Same update law over externally observed states (first item is the
/// earliest state). Snapshots carry no error norms: the truth is unknown.
pub fn run_estimator_on_stream<I>(
    theta0: &ParamVector,
    schedule: StepSchedule,
    states: I,
    snapshot_every: u64,
    opts: &RunOptions,
) -> Result<RunRecord>
where
    I: IntoIterator<Item = StateVec>,
{
    let state = EstimatorState::new(theta0.clone(), schedule, opts.bound)?;
    estimate_over_states(state, states, opts.first_update, snapshot_every, None)
}

fn estimate_over_states<I>(
    mut state: EstimatorState,
    states: I,
    first_update: FirstUpdate,
    snapshot_every: u64,
    truth: Option<&ParamVector>,
) -> Result<RunRecord>
where
    I: IntoIterator<Item = StateVec>,
{
    if snapshot_every == 0 {
        return Err(Error::InvalidParams(
            "snapshot cadence must be at least 1 update".into(),
        ));
    }
    let n = state.theta.n();
    let mut iter = states.into_iter();
    let mut prev = match first_update {
        FirstUpdate::IncludeInitialPair => iter.next(),
        FirstUpdate::SkipInitialPair => iter.next().and(iter.next()),
    }
    .ok_or(Error::StreamUnderflow)?;
    if prev.n() != n {
        return Err(Error::Dimension {
            what: "stream state width",
            expected: n,
            got: prev.n(),
        });
    }
    let mut snapshots = Vec::new();
    let mut updates = 0u64;
    for cur in iter {
        let xt = ExtState::new(cur, prev)?;
        state = sa_step(state, xt)?;
        prev = cur;
        updates += 1;
        if updates.is_multiple_of(snapshot_every) {
            snapshots.push(snapshot(&state, updates, truth));
        }
    }
    if updates == 0 {
        return Err(Error::StreamUnderflow);
    }
    if snapshots.last().map(|s| s.t) != Some(updates) {
        snapshots.push(snapshot(&state, updates, truth));
    }
    Ok(RunRecord {
        n,
        seed: None,
        snapshots,
        updates,
        truncation_count: state.truncation_count,
    })
}

fn snapshot(state: &EstimatorState, t: u64, truth: Option<&ParamVector>) -> Snapshot {
    Snapshot {
        t,
        theta: state.theta.clone(),
        err_norm: truth.map(|tr| {
            state
                .theta
                .distance(tr)
                .expect("truth width matches the iterate")
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::simulate_trajectory;
    use crate::normal::SQRT_2_OVER_PI;

    fn fixture() -> NetworkParams {
        NetworkParams::with_unit_noise(2, vec![0.5, -0.3, 0.2, 0.4], vec![0.1, -0.2]).unwrap()
    }

    fn friedkin_standardized() -> NetworkParams {
        NetworkParams::with_unit_noise(
            4,
            vec![
                0.110, 0.060, 0.180, 0.150, //
                0.0735, 0.1075, 0.172, 0.147, //
                0.0, 0.0, 0.5, 0.0, //
                0.045, 0.089, 0.223, 0.143,
            ],
            vec![0.065, 0.14, 0.04, 0.12],
        )
        .unwrap()
    }

    fn xt(cur_bits: u32, prev_bits: u32, n: usize) -> ExtState {
        ExtState::new(
            StateVec::new(cur_bits, n).unwrap(),
            StateVec::new(prev_bits, n).unwrap(),
        )
        .unwrap()
    }

    fn benchmark_schedule() -> StepSchedule {
        StepSchedule::harmonic(10.0, 200.0).unwrap()
    }

    #[test]
    fn harmonic_schedule_is_positive_and_strictly_decreasing() {
        let sched = benchmark_schedule();
        assert_eq!(sched.step_size(1), 10.0 / 201.0);
        let mut last = f64::INFINITY;
        for t in 1..=10_000 {
            let a_t = sched.step_size(t);
            assert!(a_t > 0.0 && a_t < last);
            last = a_t;
        }
    }

    #[test]
    fn harmonic_schedule_rejects_bad_coefficients() {
        assert!(StepSchedule::harmonic(0.0, 1.0).is_err());
        assert!(StepSchedule::harmonic(-1.0, 1.0).is_err());
        assert!(StepSchedule::harmonic(1.0, -0.5).is_err());
        assert!(StepSchedule::harmonic(f64::NAN, 1.0).is_err());
        assert!(StepSchedule::harmonic(1.0, f64::INFINITY).is_err());
    }

    #[test]
    fn first_update_from_zero_matches_hand_computation() {
        // θ = 0 makes every margin zero, so score entries are ±√(2/π).
        let state = EstimatorState::new(
            ParamVector::zeros(2).unwrap(),
            benchmark_schedule(),
            None,
        )
        .unwrap();
        let next = sa_step(state, xt(0b01, 0b01, 2)).unwrap();
        let a1 = 10.0 / 201.0;
        // agent 0: current bit 1 → ∂c = −√(2/π), ∂a_01 = +√(2/π)
        // agent 1: current bit 0 → ∂c = +√(2/π), ∂a_11 = −√(2/π)
        let want = [
            a1 * SQRT_2_OVER_PI,
            0.0,
            -(a1 * SQRT_2_OVER_PI),
            -(a1 * SQRT_2_OVER_PI),
            0.0,
            a1 * SQRT_2_OVER_PI,
        ];
        assert_eq!(next.theta().as_slice(), &want);
        assert_eq!(next.t(), 2);
        assert_eq!(next.truncation_count(), 0);
    }

    #[test]
    fn zero_score_is_a_fixed_point() {
        let theta0 = ParamVector::new(vec![0.3, -0.1, 0.2, 0.5, 0.4, -0.2], 2).unwrap();
        let state = EstimatorState::new(theta0.clone(), benchmark_schedule(), Some(1.0)).unwrap();
        let next = apply_step(state, &[0.0; 6]).unwrap();
        assert_eq!(next.theta(), &theta0);
        assert_eq!(next.t(), 2);
        assert_eq!(next.truncation_count(), 0);
    }

    #[test]
    fn projection_clamps_and_counts() {
        // Unit step of ±√(2/π) ≈ 0.8 exceeds the 0.5 box.
        let state = EstimatorState::new(
            ParamVector::zeros(2).unwrap(),
            StepSchedule::harmonic(1.0, 0.0).unwrap(),
            Some(0.5),
        )
        .unwrap();
        let next = sa_step(state, xt(0b01, 0b01, 2)).unwrap();
        for v in next.theta().as_slice() {
            assert!(v.abs() <= 0.5);
        }
        assert_eq!(next.theta().as_slice()[0], 0.5);
        assert_eq!(next.theta().as_slice()[2], -0.5);
        assert_eq!(next.truncation_count(), 1);
        // a step that stays inside the box leaves the count alone
        let far = apply_step(next, &[0.0, 0.0, 0.0, 0.0, 0.001, 0.0]).unwrap();
        assert_eq!(far.truncation_count(), 1);
    }

    #[test]
    fn non_finite_score_reports_the_offending_block() {
        let state = EstimatorState::new(
            ParamVector::zeros(2).unwrap(),
            benchmark_schedule(),
            None,
        )
        .unwrap();
        let mut k = [0.0; 6];
        k[4] = f64::NAN;
        match apply_step(state, &k) {
            Err(Error::NonFiniteScore { block }) => assert_eq!(block, 1),
            other => panic!("expected NonFiniteScore, got {other:?}"),
        }
    }

    #[test]
    fn initial_iterate_must_sit_inside_the_box() {
        let theta0 = ParamVector::new(vec![0.0, 0.0, 2.0, 0.0, 0.0, 0.0], 2).unwrap();
        assert!(matches!(
            EstimatorState::new(theta0, benchmark_schedule(), Some(1.0)),
            Err(Error::InvalidParams(_))
        ));
    }

    #[test]
    fn blocks_update_independently() {
        // Same inputs, different block-1 iterates: block 0 must move the
        // same way in both runs.
        let mut a = ParamVector::zeros(2).unwrap();
        a.as_mut_slice()[3..6].copy_from_slice(&[0.9, -0.4, 0.7]);
        let b = ParamVector::zeros(2).unwrap();
        let x = xt(0b10, 0b11, 2);
        let sched = benchmark_schedule();
        let na = sa_step(EstimatorState::new(a, sched, None).unwrap(), x).unwrap();
        let nb = sa_step(EstimatorState::new(b, sched, None).unwrap(), x).unwrap();
        assert_eq!(na.theta().block(0), nb.theta().block(0));
        assert_ne!(na.theta().block(1), nb.theta().block(1));
    }

    #[test]
    fn runs_are_deterministic_in_the_seed() {
        let p = fixture();
        let theta0 = ParamVector::zeros(2).unwrap();
        let opts = RunOptions::default();
        let r1 = run_estimator(&p, &theta0, benchmark_schedule(), 3_000, 99, 100, &opts).unwrap();
        let r2 = run_estimator(&p, &theta0, benchmark_schedule(), 3_000, 99, 100, &opts).unwrap();
        assert_eq!(r1, r2);
        let r3 = run_estimator(&p, &theta0, benchmark_schedule(), 3_000, 98, 100, &opts).unwrap();
        assert_ne!(r1.final_theta(), r3.final_theta());
    }

    #[test]
    fn update_and_snapshot_bookkeeping() {
        let p = fixture();
        let theta0 = ParamVector::zeros(2).unwrap();
        let opts = RunOptions::default();
        let r = run_estimator(&p, &theta0, benchmark_schedule(), 250, 7, 100, &opts).unwrap();
        assert_eq!(r.updates(), 250);
        let ts: Vec<u64> = r.snapshots().iter().map(|s| s.t).collect();
        assert_eq!(ts, vec![100, 200, 250]);
        assert!(r.snapshots().iter().all(|s| s.err_norm.is_some()));
        assert_eq!(r.err_at(200), r.snapshots()[1].err_norm);
        assert_eq!(r.err_at(150), None);

        let skip = RunOptions {
            first_update: FirstUpdate::SkipInitialPair,
            ..RunOptions::default()
        };
        let r = run_estimator(&p, &theta0, benchmark_schedule(), 250, 7, 100, &skip).unwrap();
        assert_eq!(r.updates(), 249);
    }

    #[test]
    fn stream_runs_match_simulation_runs_bit_for_bit() {
        let p = fixture();
        let theta0 = ParamVector::zeros(2).unwrap();
        for first_update in [FirstUpdate::IncludeInitialPair, FirstUpdate::SkipInitialPair] {
            let opts = RunOptions {
                first_update,
                ..RunOptions::default()
            };
            let sim =
                run_estimator(&p, &theta0, benchmark_schedule(), 2_000, 5, 100, &opts).unwrap();
            let traj = simulate_trajectory(&p, StateVec::zeros(2), 2_000, 5).unwrap();
            let states = std::iter::once(traj.initial()).chain(traj.observations().iter().copied());
            let streamed =
                run_estimator_on_stream(&theta0, benchmark_schedule(), states, 100, &opts)
                    .unwrap();
            assert_eq!(sim.updates(), streamed.updates());
            assert_eq!(sim.truncation_count(), streamed.truncation_count());
            for (a, b) in sim.snapshots().iter().zip(streamed.snapshots()) {
                assert_eq!(a.t, b.t);
                assert_eq!(a.theta, b.theta);
                assert_eq!(b.err_norm, None);
            }
        }
    }

    #[test]
    fn too_short_streams_underflow() {
        let theta0 = ParamVector::zeros(2).unwrap();
        let sched = benchmark_schedule();
        let one = vec![StateVec::zeros(2)];
        assert!(matches!(
            run_estimator_on_stream(&theta0, sched, one, 100, &RunOptions::default()),
            Err(Error::StreamUnderflow)
        ));
        let two = vec![StateVec::zeros(2); 2];
        let skip = RunOptions {
            first_update: FirstUpdate::SkipInitialPair,
            ..RunOptions::default()
        };
        assert!(matches!(
            run_estimator_on_stream(&theta0, sched, two, 100, &skip),
            Err(Error::StreamUnderflow)
        ));
    }

    #[test]
    fn adversarial_alternating_stream_stays_finite() {
        let theta0 = ParamVector::zeros(2).unwrap();
        let states = (0..100_000u32).map(|i| StateVec::new(if i % 2 == 0 { 0b00 } else { 0b11 }, 2).unwrap());
        let r = run_estimator_on_stream(
            &theta0,
            benchmark_schedule(),
            states,
            10_000,
            &RunOptions::default(),
        )
        .unwrap();
        assert!(r.final_theta().as_slice().iter().all(|v| v.is_finite()));
        assert!(r.final_theta().as_slice().iter().all(|v| v.abs() <= DEFAULT_BOUND));
    }

    #[test]
    fn benchmark_run_approaches_the_truth() {
        let p = friedkin_standardized();
        let theta0 = ParamVector::zeros(4).unwrap();
        let r = run_estimator(
            &p,
            &theta0,
            benchmark_schedule(),
            200_000,
            1,
            DEFAULT_SNAPSHOT_EVERY,
            &RunOptions::default(),
        )
        .unwrap();
        let early = r.err_at(2_000).unwrap();
        let late = r.err_at(200_000).unwrap();
        assert!(late < early, "err at 2e5 {late} vs err at 2e3 {early}");
        assert_eq!(r.truncation_count(), 0);
    }

    #[test]
    fn starting_at_the_truth_stays_near_it() {
        // Pinned-seed stability regression. Early iterates wander while a_t
        // is still large (path maxima ~0.7 in the pilot), so the frozen
        // ceilings are 0.2 on the final error and 1.0 along the path.
        let p = friedkin_standardized();
        let truth = vec_params(&p);
        for seed in [1u64, 2, 3] {
            let r = run_estimator(
                &p,
                &truth,
                benchmark_schedule(),
                100_000,
                seed,
                DEFAULT_SNAPSHOT_EVERY,
                &RunOptions::default(),
            )
            .unwrap();
            let final_err = r.err_at(100_000).unwrap();
            assert!(final_err < 0.2, "seed {seed}: final error {final_err}");
            let worst = r
                .snapshots()
                .iter()
                .filter_map(|s| s.err_norm)
                .fold(0.0f64, f64::max);
            assert!(worst < 1.0, "seed {seed}: worst error {worst}");
        }
    }

    #[test]
    fn median_benchmark_error_decreases_across_checkpoints() {
        let p = friedkin_standardized();
        let theta0 = ParamVector::zeros(4).unwrap();
        let checkpoints = [1_000u64, 10_000, 30_000];
        let mut per_checkpoint = vec![Vec::new(); checkpoints.len()];
        for seed in 1u64..=20 {
            let r = run_estimator(
                &p,
                &theta0,
                benchmark_schedule(),
                30_000,
                seed,
                1_000,
                &RunOptions::default(),
            )
            .unwrap();
            for (errs, &t) in per_checkpoint.iter_mut().zip(&checkpoints) {
                errs.push(r.err_at(t).unwrap());
            }
        }
        let medians: Vec<f64> = per_checkpoint
            .iter_mut()
            .map(|errs| {
                errs.sort_by(f64::total_cmp);
                0.5 * (errs[9] + errs[10])
            })
            .collect();
        assert!(
            medians[0] > medians[1] && medians[1] > medians[2],
            "medians {medians:?}"
        );
    }
}
