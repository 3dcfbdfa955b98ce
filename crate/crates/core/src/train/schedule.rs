use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleMode {
    Default,
    SgdrWarmup,
    Constant,
}

impl std::str::FromStr for ScheduleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "default" => Ok(ScheduleMode::Default),
            "sgdr_warmup" => Ok(ScheduleMode::SgdrWarmup),
            "constant" => Ok(ScheduleMode::Constant),
            _ => Err(Error::Config(format!("unknown schedule {s:?} (default, sgdr_warmup, constant)"))),
        }
    }
}

impl std::fmt::Display for ScheduleMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ScheduleMode::Default => "default",
            ScheduleMode::SgdrWarmup => "sgdr_warmup",
            ScheduleMode::Constant => "constant",
        })
    }
}

/// Learning-rate schedule parameters plus the global step `it`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleState {
    pub mode: ScheduleMode,
    pub it: u64,
    pub warmup_steps: u64,
    pub d_model: usize,
    pub t0_steps: u64,
    pub eta_min: f64,
    pub eta_max: f64,
    pub restarts_enabled: bool,
    /// Rate of the constant schedule.
    pub constant_rate: f64,
}

impl ScheduleState {
    pub fn validate(&self) -> Result<()> {
        if self.mode == ScheduleMode::SgdrWarmup {
            if self.t0_steps == 0 {
                return Err(Error::Config("sgdr_warmup needs a positive cosine period".into()));
            }
            if !(self.eta_min >= 0.0 && self.eta_min <= self.eta_max) {
                return Err(Error::Config(format!(
                    "need 0 <= eta_min <= eta_max, got {} and {}",
                    self.eta_min, self.eta_max
                )));
            }
        }
        if self.mode == ScheduleMode::Default && self.warmup_steps == 0 {
            return Err(Error::Config("the default schedule needs warmup_steps >= 1".into()));
        }
        Ok(())
    }

    /// Rate at the current step.
    pub fn rate(&self) -> f64 {
        match self.mode {
            ScheduleMode::Default => lr_default(self.d_model, self.warmup_steps, self.it),
            ScheduleMode::SgdrWarmup => lr_sgdr_warmup(self),
            ScheduleMode::Constant => self.constant_rate,
        }
    }
}

/// `d_model^-0.5 · min(it^-0.5, it · warmup^-1.5)`.
pub fn lr_default(d_model: usize, warmup_steps: u64, it: u64) -> f64 {
    let it = it.max(1) as f64;
    (d_model as f64).powf(-0.5) * it.powf(-0.5).min(it * (warmup_steps as f64).powf(-1.5))
}

/// Linear warm-up to `eta_max`, then cosine decay to `eta_min` over
/// `t0_steps`; with restarts the cosine repeats, otherwise it stays at
/// `eta_min`.
pub fn lr_sgdr_warmup(s: &ScheduleState) -> f64 {
    let it = s.it.max(1);
    if it < s.warmup_steps {
        return s.eta_max * it as f64 / s.warmup_steps as f64;
    }
    let mut t = it - s.warmup_steps;
    if s.restarts_enabled {
        t %= s.t0_steps;
    } else if t >= s.t0_steps {
        return s.eta_min;
    }
    s.eta_min + 0.5 * (s.eta_max - s.eta_min) * (1.0 + (PI * t as f64 / s.t0_steps as f64).cos())
}
