use serde::{Deserialize, Serialize};

use super::SimError;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi
    }
}

/// Field of view as a box in measurement space.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fov {
    pub range: Interval,
    pub doppler: Interval,
    pub bearing: Interval,
}

impl Fov {
    pub fn volume(&self) -> f64 {
        self.range.width() * self.doppler.width() * self.bearing.width()
    }

    pub fn contains(&self, z: [f64; 3]) -> bool {
        self.range.contains(z[0]) && self.doppler.contains(z[1]) && self.bearing.contains(z[2])
    }
}

impl Default for Fov {
    fn default() -> Self {
        Self {
            range: Interval::new(0.5, 15.0),
            doppler: Interval::new(0.0, 8.0),
            bearing: Interval::new(-1.3, 1.3),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BirthSchedule {
    /// Poisson births at every time-step.
    EveryStep,
    /// Poisson births at the first time-step only.
    InitialOnly,
}

/// Model constants of one tracking task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub p_d: f64,
    /// Process-noise magnitude, m^2/s^3.
    pub sigma_q2: f64,
    pub sigma_r_min2: f64,
    pub sigma_r_max2: f64,
    pub sigma_rdot2: f64,
    pub sigma_theta_min2: f64,
    pub sigma_theta_max2: f64,
    /// Clutter intensity per unit FOV volume per time-step.
    pub lambda_c: f64,
    /// Expected births per scheduled step.
    pub birth_rate: f64,
    /// Extra expected births at the first step, on top of the schedule.
    #[serde(default)]
    pub initial_birth_rate: f64,
    pub birth_mean: [f64; 4],
    pub birth_cov: [[f64; 4]; 4],
    pub p_s: f64,
    pub delta_t: f64,
    /// Window length in time-steps.
    pub window: usize,
    #[serde(default)]
    pub fov: Fov,
    pub birth_schedule: BirthSchedule,
}

fn default_name() -> String {
    "custom".into()
}

/// Task-specific columns: `(p_d, sigma_q2, sigma_r_min2, sigma_rdot2, sigma_theta_min2, lambda_c)`.
const TASK_TABLE: [(f64, f64, f64, f64, f64, f64); 10] = [
    (0.99, 1.0, 1e-4, 0.01, 1e-4, 1.6e-2),
    (0.99, 1.0, 1e-4, 0.01, 1e-4, 3.2e-2),
    (0.85, 1.0, 1e-4, 0.01, 1e-4, 6.6e-2),
    (0.99, 1.0, 1e-4, 0.01, 1e-4, 1.3e-1),
    (0.70, 4.0, 1e-4, 0.01, 1e-4, 6.6e-2),
    (0.70, 2.0, 1e-3, 1.00, 1e-3, 6.6e-2),
    (0.60, 3.0, 1e-2, 1.00, 1e-2, 6.6e-2),
    (0.70, 3.0, 1e-4, 0.01, 1e-4, 1.3e-1),
    (0.70, 1.0, 1e-3, 1.00, 1e-3, 1.3e-1),
    (0.60, 3.0, 1e-2, 1.00, 1e-2, 1.3e-1),
];

pub const PRESET_NAMES: [&str; 11] = [
    "task1", "task2", "task3", "task4", "task5", "task6", "task7", "task8", "task9", "task10",
    "desk",
];

impl TaskConfig {
    /// Benchmark task `1..=10`.
    pub fn task(number: usize) -> Result<Self, SimError> {
        let &(p_d, sigma_q2, sigma_r_min2, sigma_rdot2, sigma_theta_min2, lambda_c) = TASK_TABLE
            .get(number.wrapping_sub(1))
            .ok_or_else(|| SimError::UnknownPreset(format!("task{number}")))?;
        Ok(Self {
            name: format!("task{number}"),
            p_d,
            sigma_q2,
            sigma_r_min2,
            sigma_r_max2: 0.04,
            sigma_rdot2,
            sigma_theta_min2,
            sigma_theta_max2: 0.04,
            lambda_c,
            birth_rate: 6.0,
            initial_birth_rate: 0.0,
            birth_mean: [7.0, 0.0, 0.0, 0.0],
            birth_cov: [
                [10.0, 0.0, 0.0, 0.0],
                [0.0, 30.0, 0.0, 0.0],
                [0.0, 0.0, 16.0, 0.0],
                [0.0, 0.0, 0.0, 16.0],
            ],
            p_s: 0.98,
            delta_t: 0.1,
            window: 10,
            fov: Fov::default(),
            birth_schedule: BirthSchedule::EveryStep,
        })
    }

    /// Small variant of task 1 that trains on one CPU core.
    pub fn desk() -> Self {
        Self {
            name: "desk".into(),
            p_d: 0.95,
            lambda_c: 5e-3,
            birth_rate: 0.2,
            initial_birth_rate: 1.5,
            window: 5,
            ..Self::task(1).expect("task 1 exists")
        }
    }

    pub fn preset(name: &str) -> Result<Self, SimError> {
        if name == "desk" {
            return Ok(Self::desk());
        }
        name.strip_prefix("task")
            .and_then(|n| n.parse().ok())
            .map_or_else(|| Err(SimError::UnknownPreset(name.into())), Self::task)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |msg: &str| Err(SimError::InvalidConfig(format!("{}: {msg}", self.name)));
        let variances = [
            self.sigma_r_min2,
            self.sigma_r_max2,
            self.sigma_rdot2,
            self.sigma_theta_min2,
            self.sigma_theta_max2,
        ];
        if variances.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return bad("measurement variances must be positive");
        }
        if !(self.sigma_q2.is_finite() && self.sigma_q2 >= 0.0) {
            return bad("process noise must be nonnegative");
        }
        if self.sigma_r_min2 > self.sigma_r_max2 || self.sigma_theta_min2 > self.sigma_theta_max2 {
            return bad("noise floor above ceiling");
        }
        if !(0.0..=1.0).contains(&self.p_d) || !(0.0..=1.0).contains(&self.p_s) {
            return bad("probabilities must lie in [0, 1]");
        }
        if self.window == 0 {
            return bad("window must be at least one step");
        }
        if !(self.delta_t > 0.0) {
            return bad("sampling period must be positive");
        }
        if self.lambda_c < 0.0 || self.birth_rate < 0.0 || self.initial_birth_rate < 0.0 {
            return bad("rates must be nonnegative");
        }
        let f = &self.fov;
        if [f.range, f.doppler, f.bearing]
            .iter()
            .any(|i| !(i.hi > i.lo))
        {
            return bad("FOV intervals must be nonempty");
        }
        Ok(())
    }

    /// Expected number of births at 1-based step `t`.
    pub fn birth_rate_at(&self, t: usize) -> f64 {
        let scheduled = match self.birth_schedule {
            BirthSchedule::EveryStep => self.birth_rate,
            BirthSchedule::InitialOnly if t == 1 => self.birth_rate,
            BirthSchedule::InitialOnly => 0.0,
        };
        scheduled + if t == 1 { self.initial_birth_rate } else { 0.0 }
    }

    /// Expected clutter returns per time-step.
    pub fn clutter_mean_per_step(&self) -> f64 {
        self.lambda_c * self.fov.volume()
    }
}
