//! Flat `key=value` experiment configs with `#` comments. Unknown and
//! duplicate keys are hard errors; every key has a default.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use binobs_core::{Error as CoreError, FirstUpdate, StepSchedule, DEFAULT_BOUND};

use crate::{CliError, Result};

/// Starting point for the recursion.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum Theta0 {
    #[default]
    Zeros,
    File(PathBuf),
}

/// One objective slice: vary a single coordinate of θ* by each offset.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub component: usize,
    pub offsets: Vec<f64>,
}

/// Parsed experiment description. Paths are resolved against the config
/// file's directory. Keys and defaults:
///
/// | key               | default   | meaning                                              |
/// |-------------------|-----------|------------------------------------------------------|
/// | `params`          | unset     | network parameter file (simulate/estimate/analyze)   |
/// | `kernel`          | unset     | transition-kernel CSV (recover)                      |
/// | `n`               | unset     | expected agent count for `kernel` (recover)          |
/// | `trials`          | `1`       | independent runs, seeded `seed`, `seed+1`, ...       |
/// | `steps`           | `1000`    | simulated transitions per trial                      |
/// | `schedule_a`      | `1`       | step-size numerator of a_t = a/(t+b)                 |
/// | `schedule_b`      | `0`       | step-size offset                                     |
/// | `theta0`          | `zeros`   | `zeros` or a path to a starting-point file           |
/// | `seed`            | `0`       | base RNG seed                                        |
/// | `snapshot_every`  | `100`     | record the iterate every this many updates           |
/// | `s0`              | `0`       | initial state as a bitmask (agent i = bit i)         |
/// | `bound`           | `100`     | projection box half-width, or `none` to disable      |
/// | `first_update`    | `include` | `include`: first update uses (S_1, S_0); `skip`: (S_2, S_1) |
/// | `sweep_component` | unset     | objective-slice coordinate (analyze)                 |
/// | `sweep_offsets`   | unset     | comma-separated slice offsets (analyze)              |
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub params: Option<PathBuf>,
    pub kernel: Option<PathBuf>,
    pub n: Option<usize>,
    pub trials: usize,
    pub steps: u64,
    pub schedule_a: f64,
    pub schedule_b: f64,
    pub theta0: Theta0,
    pub seed: u64,
    pub snapshot_every: u64,
    pub s0: u32,
    pub bound: Option<f64>,
    pub first_update: FirstUpdate,
    pub sweep: Option<SweepSpec>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            params: None,
            kernel: None,
            n: None,
            trials: 1,
            steps: 1000,
            schedule_a: 1.0,
            schedule_b: 0.0,
            theta0: Theta0::Zeros,
            seed: 0,
            snapshot_every: 100,
            s0: 0,
            bound: Some(DEFAULT_BOUND),
            first_update: FirstUpdate::default(),
            sweep: None,
        }
    }
}

fn bad_line(origin: &str, line: usize, msg: impl Into<String>) -> CliError {
    CliError::Core(CoreError::Parse {
        origin: origin.to_string(),
        line,
        msg: msg.into(),
    })
}

fn parse_value<T: std::str::FromStr>(
    origin: &str,
    line: usize,
    key: &str,
    value: &str,
) -> Result<T> {
    value
        .parse()
        .map_err(|_| bad_line(origin, line, format!("bad value for `{key}`: `{value}`")))
}

impl ExperimentConfig {
    /// Reads and parses a config file; relative paths inside it are taken
    /// relative to its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::Usage(format!("cannot read config {}: {e}", path.display()))
        })?;
        let origin = path.display().to_string();
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, &origin, base)
    }

    pub fn parse(text: &str, origin: &str, base: &Path) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut seen: HashSet<String> = HashSet::new();
        let mut sweep_component: Option<usize> = None;
        let mut sweep_offsets: Option<Vec<f64>> = None;
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let (key, value) = body
                .split_once('=')
                .ok_or_else(|| bad_line(origin, line, "expected key=value"))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(bad_line(origin, line, format!("duplicate key `{key}`")));
            }
            match key {
                "params" => cfg.params = Some(base.join(value)),
                "kernel" => cfg.kernel = Some(base.join(value)),
                "n" => cfg.n = Some(parse_value(origin, line, key, value)?),
                "trials" => {
                    cfg.trials = parse_value(origin, line, key, value)?;
                    if cfg.trials == 0 {
                        return Err(bad_line(origin, line, "trials must be at least 1"));
                    }
                }
                "steps" => {
                    cfg.steps = parse_value(origin, line, key, value)?;
                    if cfg.steps == 0 {
                        return Err(bad_line(origin, line, "steps must be at least 1"));
                    }
                }
                "schedule_a" => cfg.schedule_a = parse_value(origin, line, key, value)?,
                "schedule_b" => cfg.schedule_b = parse_value(origin, line, key, value)?,
                "theta0" => {
                    cfg.theta0 = if value == "zeros" {
                        Theta0::Zeros
                    } else {
                        Theta0::File(base.join(value))
                    }
                }
                "seed" => cfg.seed = parse_value(origin, line, key, value)?,
                "snapshot_every" => {
                    cfg.snapshot_every = parse_value(origin, line, key, value)?;
                    if cfg.snapshot_every == 0 {
                        return Err(bad_line(origin, line, "snapshot_every must be at least 1"));
                    }
                }
                "s0" => cfg.s0 = parse_value(origin, line, key, value)?,
                "bound" => {
                    cfg.bound = if value == "none" {
                        None
                    } else {
                        Some(parse_value(origin, line, key, value)?)
                    }
                }
                "first_update" => {
                    cfg.first_update = match value {
                        "include" => FirstUpdate::IncludeInitialPair,
                        "skip" => FirstUpdate::SkipInitialPair,
                        _ => {
                            return Err(bad_line(
                                origin,
                                line,
                                format!("first_update must be `include` or `skip`, got `{value}`"),
                            ))
                        }
                    }
                }
                "sweep_component" => {
                    sweep_component = Some(parse_value(origin, line, key, value)?)
                }
                "sweep_offsets" => {
                    let offsets = value
                        .split(',')
                        .map(|f| {
                            f.trim().parse::<f64>().map_err(|_| {
                                bad_line(origin, line, format!("bad offset `{}`", f.trim()))
                            })
                        })
                        .collect::<Result<Vec<f64>>>()?;
                    if offsets.is_empty() {
                        return Err(bad_line(origin, line, "sweep_offsets is empty"));
                    }
                    sweep_offsets = Some(offsets);
                }
                _ => return Err(bad_line(origin, line, format!("unknown key `{key}`"))),
            }
        }
        cfg.sweep = match (sweep_component, sweep_offsets) {
            (Some(component), Some(offsets)) => Some(SweepSpec { component, offsets }),
            (None, None) => None,
            _ => {
                return Err(bad_line(
                    origin,
                    0,
                    "sweep_component and sweep_offsets must be set together",
                ))
            }
        };
        Ok(cfg)
    }

    pub fn require_params(&self) -> Result<&Path> {
        self.params
            .as_deref()
            .ok_or_else(|| CliError::Usage("config sets no `params` path".into()))
    }

    pub fn require_kernel(&self) -> Result<&Path> {
        self.kernel
            .as_deref()
            .ok_or_else(|| CliError::Usage("config sets no `kernel` path".into()))
    }

    pub fn require_n(&self) -> Result<usize> {
        self.n
            .ok_or_else(|| CliError::Usage("config sets no `n` (agent count)".into()))
    }

    pub fn schedule(&self) -> Result<StepSchedule> {
        Ok(StepSchedule::harmonic(self.schedule_a, self.schedule_b)?)
    }
}
