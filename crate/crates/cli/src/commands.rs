//! The four subcommands. Each one validates and computes before touching
//! the output directory, so a failed run leaves no partial artifacts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write as _};
use std::path::Path;

use binobs_core::io as core_io;
use binobs_core::markov::{ROW_SUM_TOL, STATIONARY_MAX_ITER, STATIONARY_TOL};
use binobs_core::{
    build_transition_matrix, expected_objective, objective_sweep, recover_from_kernel,
    run_estimator, simulate_trajectory, standardize, stationary_distribution, vec_params,
    verify_lemma1, MatrixKind, NetworkParams, ParamVector, RunOptions, RunRecord, StateVec,
};
use rayon::prelude::*;

use crate::config::{ExperimentConfig, Theta0};
use crate::{CliError, Result};

/// Conditional-law tolerance the analyze report checks at.
pub const ANALYZE_LEMMA_TOL: f64 = 1e-8;
/// Stationarity tolerance for ‖∇ objective(θ*)‖ in the analyze report.
pub const ANALYZE_GRAD_TOL: f64 = 1e-8;

fn io_fail(path: &Path, e: std::io::Error) -> CliError {
    CliError::Usage(format!("cannot write {}: {e}", path.display()))
}

fn create_out_dir(out: &Path) -> Result<()> {
    fs::create_dir_all(out)
        .map_err(|e| CliError::Usage(format!("cannot create {}: {e}", out.display())))
}

fn write_csv(
    path: &Path,
    emit: impl FnOnce(&mut dyn std::io::Write) -> binobs_core::Result<()>,
) -> Result<()> {
    let file = File::create(path).map_err(|e| io_fail(path, e))?;
    let mut w = BufWriter::new(file);
    emit(&mut w)?;
    w.flush().map_err(|e| io_fail(path, e))
}

/// Raw IO errors carry no file name; attach the one we tried to read.
fn annotate_read(path: &Path, e: binobs_core::Error) -> CliError {
    match e {
        binobs_core::Error::Io(io) => {
            CliError::Usage(format!("cannot read {}: {io}", path.display()))
        }
        other => CliError::Core(other),
    }
}

fn read_params(cfg: &ExperimentConfig) -> Result<NetworkParams> {
    let path = cfg.require_params()?;
    core_io::read_params_file(path).map_err(|e| annotate_read(path, e))
}

/// Simulates one trajectory, writes `trajectory.csv`, and summarizes the
/// visit counts (per state for n ≤ 6, as a distinct-state tally above).
pub fn cmd_simulate(cfg: &ExperimentConfig, out: &Path) -> Result<String> {
    let params = read_params(cfg)?;
    let n = params.n();
    let s0 = StateVec::new(cfg.s0, n)?;
    let traj = simulate_trajectory(&params, s0, cfg.steps as usize, cfg.seed)?;
    let mut visits: BTreeMap<u32, u64> = BTreeMap::new();
    for s in traj.observations() {
        *visits.entry(s.bits()).or_default() += 1;
    }

    create_out_dir(out)?;
    let path = out.join("trajectory.csv");
    write_csv(&path, |w| core_io::write_trajectory_csv(w, &traj))?;

    let mut summary = format!(
        "wrote {} ({} steps, n={n}, seed={})",
        path.display(),
        traj.len(),
        cfg.seed
    );
    let _ = write!(summary, "\ndistinct_states={}", visits.len());
    let _ = write!(summary, "\nstate_space={}", 1u64 << n);
    if n <= 6 {
        for (bits, count) in &visits {
            let s = StateVec::new(*bits, n).expect("visited states fit the width");
            let _ = write!(summary, "\nstate {bits} {s}: {count}");
        }
    }
    Ok(summary)
}

fn trial_width(trials: usize) -> usize {
    let digits = trials.saturating_sub(1).to_string().len();
    digits.max(3)
}

/// Per-checkpoint mean squared estimation error over a set of trials,
/// MSE_k = (1/N) Σ_trials ‖θ_k − θ*‖². Squared errors are kept per trial and
/// summed in trial-id order, so merging disjoint curves reproduces the
/// jointly computed curve bit for bit.
#[derive(Debug, Clone, PartialEq)]
pub struct MseCurve {
    checkpoints: Vec<u64>,
    trials: Vec<(usize, Vec<f64>)>,
}

impl MseCurve {
    /// Builds a curve from consecutive trials `first_trial, first_trial+1, ...`
    /// sharing one snapshot grid.
    pub fn from_records(
        first_trial: usize,
        records: &[RunRecord],
        theta_star: &ParamVector,
    ) -> Result<Self> {
        let Some(first) = records.first() else {
            return Err(CliError::Usage("an MSE curve needs at least one trial".into()));
        };
        let checkpoints: Vec<u64> = first.snapshots().iter().map(|s| s.t).collect();
        let mut trials = Vec::with_capacity(records.len());
        for (offset, record) in records.iter().enumerate() {
            if record.snapshots().iter().map(|s| s.t).ne(checkpoints.iter().copied()) {
                return Err(CliError::Usage(
                    "trial snapshot grids differ; cannot aggregate an MSE curve".into(),
                ));
            }
            let mut sq = Vec::with_capacity(checkpoints.len());
            for snap in record.snapshots() {
                let d = snap.theta.distance(theta_star)?;
                sq.push(d * d);
            }
            trials.push((first_trial + offset, sq));
        }
        Ok(Self { checkpoints, trials })
    }

    pub fn checkpoints(&self) -> &[u64] {
        &self.checkpoints
    }

    pub fn n_trials(&self) -> usize {
        self.trials.len()
    }

    /// One mean per checkpoint.
    pub fn mse(&self) -> Vec<f64> {
        let count = self.trials.len() as f64;
        (0..self.checkpoints.len())
            .map(|k| self.trials.iter().map(|(_, sq)| sq[k]).sum::<f64>() / count)
            .collect()
    }

    /// `(checkpoint, mse)` rows in export order.
    pub fn points(&self) -> Vec<(u64, f64)> {
        self.checkpoints.iter().copied().zip(self.mse()).collect()
    }

    /// Union of two disjoint trial sets; the weighted average of the inputs.
    pub fn merge(&self, other: &MseCurve) -> Result<MseCurve> {
        if self.checkpoints != other.checkpoints {
            return Err(CliError::Usage(
                "cannot merge MSE curves over different checkpoints".into(),
            ));
        }
        let mut trials = self.trials.clone();
        trials.extend(other.trials.iter().cloned());
        trials.sort_by_key(|&(id, _)| id);
        if trials.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(CliError::Usage(
                "cannot merge MSE curves with overlapping trial ids".into(),
            ));
        }
        Ok(MseCurve {
            checkpoints: self.checkpoints.clone(),
            trials,
        })
    }
}

/// Runs `trials` independent estimation runs (seeds `seed`, `seed+1`, ...)
/// in parallel, writing one `trial_XXX.csv` per run plus the aggregated
/// `mse.csv`. Estimates are of the standardized (unit-noise) parameters, so
/// the error norms target A_i/σ_i, c_i/σ_i.
pub fn cmd_estimate(cfg: &ExperimentConfig, out: &Path) -> Result<String> {
    let params = read_params(cfg)?;
    let model = standardize(&params);
    let n = model.n();
    let theta0 = match &cfg.theta0 {
        Theta0::Zeros => ParamVector::zeros(n)?,
        Theta0::File(path) => {
            core_io::read_theta_file(path, n).map_err(|e| annotate_read(path, e))?
        }
    };
    let schedule = cfg.schedule()?;
    let s0 = StateVec::new(cfg.s0, n)?;
    let opts = RunOptions {
        bound: cfg.bound,
        first_update: cfg.first_update,
        initial_state: Some(s0),
    };

    let records = (0..cfg.trials)
        .into_par_iter()
        .map(|trial| {
            run_estimator(
                &model,
                &theta0,
                schedule,
                cfg.steps,
                cfg.seed + trial as u64,
                cfg.snapshot_every,
                &opts,
            )
            .map_err(|source| CliError::Trial { trial, source })
        })
        .collect::<Result<Vec<RunRecord>>>()?;

    let theta_star = vec_params(&model);
    let curve = MseCurve::from_records(0, &records, &theta_star)?;

    create_out_dir(out)?;
    let width = trial_width(cfg.trials);
    for (trial, record) in records.iter().enumerate() {
        let path = out.join(format!("trial_{trial:0width$}.csv"));
        write_csv(&path, |w| core_io::write_run_record_csv(w, record))?;
    }
    let mse_path = out.join("mse.csv");
    write_csv(&mse_path, |w| core_io::write_mse_csv(w, &curve.points(), curve.n_trials()))?;

    let final_mse = curve.points().last().map(|&(_, m)| m).unwrap_or(f64::NAN);
    Ok(format!(
        "ran {} trial(s) x {} steps (n={n}, seed base {}) -> {}\nfinal_mse={final_mse}",
        cfg.trials,
        cfg.steps,
        cfg.seed,
        mse_path.display()
    ))
}

/// Exports the transition kernel and its stationary distribution, and writes
/// `report.txt` verifying positivity, row stochasticity, the conditional-law
/// factorization of the extended chain, and stationarity of the expected
/// objective at the generating parameters. Adds `sweep.csv` when the config
/// requests an objective slice.
pub fn cmd_analyze(cfg: &ExperimentConfig, out: &Path) -> Result<String> {
    let params = read_params(cfg)?;
    let n = params.n();
    let kernel = build_transition_matrix(&params)?;
    let pi = stationary_distribution(&kernel, STATIONARY_TOL, STATIONARY_MAX_ITER)?;
    let lemma = verify_lemma1(&params, ANALYZE_LEMMA_TOL)?;
    let theta_star = vec_params(&standardize(&params));
    let objective = expected_objective(&theta_star, &params)?;
    let sweep = match &cfg.sweep {
        Some(spec) => Some(objective_sweep(&theta_star, &params, spec.component, &spec.offsets)?),
        None => None,
    };

    let min_entry = kernel.min_entry();
    let row_dev = kernel.max_row_sum_deviation();
    let grad_norm = objective.gradient_norm();
    let pass = min_entry > 0.0
        && row_dev <= ROW_SUM_TOL
        && lemma.passed()
        && grad_norm < ANALYZE_GRAD_TOL;
    let summary = format!(
        "analyze n={n}: min entry {min_entry:e}; row-sum deviation {row_dev:e} (tol {ROW_SUM_TOL:e}); \
         {lemma}; grad norm at truth {grad_norm:e} (tol {ANALYZE_GRAD_TOL:e}) -> {}",
        if pass { "pass" } else { "FAIL" }
    );

    let mut report = String::new();
    let _ = writeln!(report, "{summary}");
    let _ = writeln!(report, "n={n}");
    let _ = writeln!(report, "dim={}", kernel.dim());
    let _ = writeln!(report, "min_entry={min_entry}");
    let _ = writeln!(report, "max_row_sum_deviation={row_dev}");
    let _ = writeln!(report, "row_sum_tol={ROW_SUM_TOL}");
    let _ = writeln!(report, "lemma1_max_deviation={}", lemma.max_deviation);
    let _ = writeln!(report, "lemma1_tol={}", lemma.tol);
    let _ = writeln!(report, "lemma1_stationary_residual={}", lemma.stationary_residual);
    let _ = writeln!(report, "stationary_residual={}", pi.residual());
    let _ = writeln!(report, "objective_at_truth={}", objective.value());
    let _ = writeln!(report, "grad_norm_at_truth={grad_norm}");
    let _ = writeln!(report, "grad_tol={ANALYZE_GRAD_TOL}");
    let _ = writeln!(report, "pass={pass}");

    create_out_dir(out)?;
    write_csv(&out.join("kernel.csv"), |w| core_io::write_kernel_csv(w, &kernel))?;
    write_csv(&out.join("stationary.csv"), |w| core_io::write_stationary_csv(w, &pi))?;
    if let Some(points) = &sweep {
        write_csv(&out.join("sweep.csv"), |w| core_io::write_sweep_csv(w, points))?;
    }
    let report_path = out.join("report.txt");
    fs::write(&report_path, &report).map_err(|e| io_fail(&report_path, e))?;
    Ok(summary)
}

/// Rebuilds network parameters from an exported kernel CSV and writes
/// `recovered.params`. The config's `n` is cross-checked against the CSV's
/// dimension before any numeric work.
pub fn cmd_recover(cfg: &ExperimentConfig, out: &Path) -> Result<String> {
    let path = cfg.require_kernel()?;
    let want_n = cfg.require_n()?;
    let kernel =
        core_io::read_kernel_csv_file(path, MatrixKind::Base).map_err(|e| annotate_read(path, e))?;
    if kernel.n() != want_n {
        return Err(CliError::Usage(format!(
            "config expects n={want_n} but {} holds a {}-state kernel (n={})",
            path.display(),
            kernel.dim(),
            kernel.n(),
        )));
    }
    let recovered = recover_from_kernel(&kernel)?;
    let rebuilt = build_transition_matrix(&recovered)?;
    let residual = kernel
        .entries()
        .iter()
        .zip(rebuilt.entries())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);

    create_out_dir(out)?;
    let out_path = out.join("recovered.params");
    core_io::write_params_file(&out_path, &recovered)?;
    Ok(format!(
        "recovered n={want_n} parameters from {} -> {} (kernel residual {residual:e})",
        path.display(),
        out_path.display()
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use binobs_core::io::write_params_file;
    use binobs_core::{kernel_distance, StepSchedule};
    use tempfile::TempDir;

    fn small_params() -> NetworkParams {
        NetworkParams::with_unit_noise(
            2,
            vec![0.5, -0.3, 0.2, 0.4],
            vec![0.1, -0.2],
        )
        .unwrap()
    }

    fn dir_with_params(params: &NetworkParams) -> (TempDir, std::path::PathBuf) {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("net.params");
        write_params_file(&path, params).unwrap();
        (dir, path)
    }

    fn cfg_with_params(path: &Path) -> ExperimentConfig {
        ExperimentConfig {
            params: Some(path.to_path_buf()),
            ..ExperimentConfig::default()
        }
    }

    fn run_trials(count: usize, first_seed: u64) -> Vec<RunRecord> {
        let params = small_params();
        let theta0 = ParamVector::zeros(2).unwrap();
        let schedule = StepSchedule::harmonic(2.0, 10.0).unwrap();
        (0..count)
            .map(|i| {
                run_estimator(
                    &params,
                    &theta0,
                    schedule,
                    400,
                    first_seed + i as u64,
                    100,
                    &RunOptions::default(),
                )
                .unwrap()
            })
            .collect()
    }

    #[test]
    fn mse_of_a_single_trial_is_its_squared_error() {
        let records = run_trials(1, 7);
        let theta_star = vec_params(&small_params());
        let curve = MseCurve::from_records(0, &records, &theta_star).unwrap();
        assert_eq!(curve.n_trials(), 1);
        assert_eq!(curve.checkpoints(), &[100, 200, 300, 400]);
        for (snap, mse) in records[0].snapshots().iter().zip(curve.mse()) {
            let d = snap.theta.distance(&theta_star).unwrap();
            assert_eq!(mse, d * d);
        }
    }

    #[test]
    fn merged_disjoint_curves_match_the_joint_curve_bitwise() {
        let records = run_trials(6, 20);
        let theta_star = vec_params(&small_params());
        let full = MseCurve::from_records(0, &records, &theta_star).unwrap();
        let head = MseCurve::from_records(0, &records[..4], &theta_star).unwrap();
        let tail = MseCurve::from_records(4, &records[4..], &theta_star).unwrap();
        let merged = head.merge(&tail).unwrap();
        assert_eq!(merged, full);
        assert_eq!(merged.mse(), full.mse());
        // Order of the merge arguments is immaterial.
        assert_eq!(tail.merge(&head).unwrap(), full);

        let wa: Vec<f64> = head
            .mse()
            .iter()
            .zip(tail.mse())
            .map(|(a, b)| (4.0 * a + 2.0 * b) / 6.0)
            .collect();
        for (got, want) in merged.mse().iter().zip(wa) {
            assert!((got - want).abs() <= 1e-15 * want.abs());
        }
    }

    #[test]
    fn merge_rejects_overlaps_and_grid_mismatches() {
        let records = run_trials(2, 3);
        let theta_star = vec_params(&small_params());
        let a = MseCurve::from_records(0, &records, &theta_star).unwrap();
        let overlap = MseCurve::from_records(1, &records, &theta_star).unwrap();
        assert!(a.merge(&overlap).is_err());

        let short: Vec<RunRecord> = run_trials(1, 9)
            .into_iter()
            .map(|r| {
                // Different steps give a different grid.
                let params = small_params();
                let theta0 = ParamVector::zeros(2).unwrap();
                let schedule = StepSchedule::harmonic(2.0, 10.0).unwrap();
                drop(r);
                run_estimator(&params, &theta0, schedule, 200, 9, 100, &RunOptions::default())
                    .unwrap()
            })
            .collect();
        let b = MseCurve::from_records(10, &short, &theta_star).unwrap();
        assert!(a.merge(&b).is_err());
    }

    #[test]
    fn simulate_writes_the_trajectory_and_counts_visits() {
        let (dir, path) = dir_with_params(&small_params());
        let mut cfg = cfg_with_params(&path);
        cfg.steps = 200;
        cfg.seed = 5;
        let out = dir.path().join("out");
        let summary = cmd_simulate(&cfg, &out).unwrap();
        assert!(summary.contains("200 steps"));
        assert!(summary.contains("state_space=4"));
        let csv = fs::read_to_string(out.join("trajectory.csv")).unwrap();
        assert_eq!(csv.lines().count(), 201);
        assert_eq!(csv.lines().next(), Some("t,s_bits"));

        let visit_total: u64 = summary
            .lines()
            .filter(|l| l.starts_with("state "))
            .map(|l| l.rsplit(": ").next().unwrap().parse::<u64>().unwrap())
            .sum();
        assert_eq!(visit_total, 200);
    }

    #[test]
    fn missing_params_file_leaves_no_partial_output() {
        let dir = TempDir::new().unwrap();
        let cfg = ExperimentConfig {
            params: Some(dir.path().join("absent.params")),
            ..ExperimentConfig::default()
        };
        let out = dir.path().join("out");
        for result in [
            cmd_simulate(&cfg, &out),
            cmd_estimate(&cfg, &out),
            cmd_analyze(&cfg, &out),
        ] {
            let err = result.unwrap_err();
            assert_eq!(err.exit_code(), crate::EXIT_USAGE);
        }
        assert!(!out.exists(), "failed commands must not create the out dir");
    }

    #[test]
    fn estimate_writes_padded_trials_and_a_shared_mse_grid() {
        let (dir, path) = dir_with_params(&small_params());
        let mut cfg = cfg_with_params(&path);
        cfg.trials = 2;
        cfg.steps = 300;
        cfg.snapshot_every = 100;
        cfg.schedule_a = 2.0;
        cfg.schedule_b = 10.0;
        let out = dir.path().join("out");
        let summary = cmd_estimate(&cfg, &out).unwrap();
        assert!(summary.contains("final_mse="));
        assert!(out.join("trial_000.csv").exists());
        assert!(out.join("trial_001.csv").exists());
        assert!(!out.join("trial_002.csv").exists());
        let mse = fs::read_to_string(out.join("mse.csv")).unwrap();
        let lines: Vec<&str> = mse.lines().collect();
        assert_eq!(lines[0], "t,mse,n_trials");
        assert_eq!(lines.len(), 4);
        assert!(lines[1].starts_with("100,"));
        assert!(lines[1].ends_with(",2"));
    }

    #[test]
    fn estimate_reruns_are_byte_identical_across_pool_sizes() {
        let (dir, path) = dir_with_params(&small_params());
        let mut cfg = cfg_with_params(&path);
        cfg.trials = 3;
        cfg.steps = 500;
        cfg.schedule_a = 2.0;
        cfg.schedule_b = 10.0;

        let mut artifacts: Vec<Vec<(String, Vec<u8>)>> = Vec::new();
        for workers in [1usize, 4] {
            let out = dir.path().join(format!("out_{workers}"));
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(workers)
                .build()
                .unwrap();
            pool.install(|| cmd_estimate(&cfg, &out)).unwrap();
            let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(&out)
                .unwrap()
                .map(|e| {
                    let e = e.unwrap();
                    (
                        e.file_name().to_string_lossy().into_owned(),
                        fs::read(e.path()).unwrap(),
                    )
                })
                .collect();
            files.sort();
            artifacts.push(files);
        }
        assert_eq!(artifacts[0], artifacts[1]);
        assert_eq!(artifacts[0].len(), 4); // 3 trials + mse.csv
    }

    #[test]
    fn analyze_reports_all_four_checks_and_optional_sweep() {
        let (dir, path) = dir_with_params(&small_params());
        let mut cfg = cfg_with_params(&path);
        cfg.sweep = Some(crate::SweepSpec {
            component: 0,
            offsets: vec![-0.1, 0.0, 0.1],
        });
        let out = dir.path().join("out");
        let summary = cmd_analyze(&cfg, &out).unwrap();
        assert!(summary.ends_with("-> pass"), "{summary}");

        let report = fs::read_to_string(out.join("report.txt")).unwrap();
        let fields: BTreeMap<&str, &str> = report
            .lines()
            .skip(1)
            .filter_map(|l| l.split_once('='))
            .collect();
        for key in [
            "n",
            "dim",
            "min_entry",
            "max_row_sum_deviation",
            "lemma1_max_deviation",
            "stationary_residual",
            "objective_at_truth",
            "grad_norm_at_truth",
            "pass",
        ] {
            assert!(fields.contains_key(key), "report is missing {key}");
        }
        assert_eq!(fields["pass"], "true");
        assert_eq!(fields["dim"], "4");
        assert!(fields["grad_norm_at_truth"].parse::<f64>().unwrap() < 1e-8);

        let kernel = fs::read_to_string(out.join("kernel.csv")).unwrap();
        assert_eq!(kernel.lines().count(), 4);
        let stationary = fs::read_to_string(out.join("stationary.csv")).unwrap();
        assert_eq!(stationary.lines().count(), 5);
        let sweep = fs::read_to_string(out.join("sweep.csv")).unwrap();
        assert_eq!(sweep.lines().count(), 4);
        assert_eq!(sweep.lines().next(), Some("theta_component,offset,value,grad_norm"));
    }

    #[test]
    fn analyze_forwards_capacity_errors_before_writing() {
        let params =
            NetworkParams::with_unit_noise(12, vec![0.01; 144], vec![0.0; 12]).unwrap();
        let (dir, path) = dir_with_params(&params);
        let cfg = cfg_with_params(&path);
        let out = dir.path().join("out");
        let err = cmd_analyze(&cfg, &out).unwrap_err();
        assert_eq!(err.exit_code(), crate::EXIT_NUMERICAL);
        assert!(!out.exists());
    }

    #[test]
    fn recover_round_trips_an_exported_kernel() {
        let params = small_params();
        let (dir, params_path) = dir_with_params(&params);
        let analyze_out = dir.path().join("analysis");
        cmd_analyze(&cfg_with_params(&params_path), &analyze_out).unwrap();

        let cfg = ExperimentConfig {
            kernel: Some(analyze_out.join("kernel.csv")),
            n: Some(2),
            ..ExperimentConfig::default()
        };
        let out = dir.path().join("recovered");
        let summary = cmd_recover(&cfg, &out).unwrap();
        assert!(summary.contains("recovered n=2"));

        let recovered = core_io::read_params_file(&out.join("recovered.params")).unwrap();
        assert!(kernel_distance(&params, &recovered).unwrap() < 1e-8);
        for (a, b) in params.weights().iter().zip(recovered.weights()) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn recover_cross_checks_the_configured_width() {
        let (dir, params_path) = dir_with_params(&small_params());
        let analyze_out = dir.path().join("analysis");
        cmd_analyze(&cfg_with_params(&params_path), &analyze_out).unwrap();

        let cfg = ExperimentConfig {
            kernel: Some(analyze_out.join("kernel.csv")),
            n: Some(3),
            ..ExperimentConfig::default()
        };
        let err = cmd_recover(&cfg, &dir.path().join("out")).unwrap_err();
        assert_eq!(err.exit_code(), crate::EXIT_USAGE);
        assert!(err.to_string().contains("n=3"));
    }
}
