use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecayType {
    Cosine,
    OneCycle,
}

impl fmt::Display for DecayType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DecayType::Cosine => "cosine",
            DecayType::OneCycle => "onecycle",
        })
    }
}

impl FromStr for DecayType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(DecayType::Cosine),
            "onecycle" => Ok(DecayType::OneCycle),
            other => Err(Error::Config(format!("unknown decay type `{other}` (expected cosine or onecycle)"))),
        }
    }
}

/// One-cycle warmup starts at `lr_start / ONECYCLE_DIV`.
pub const ONECYCLE_DIV: f64 = 25.0;
/// Fraction of steps spent warming up in the one-cycle schedule.
pub const ONECYCLE_WARMUP: f64 = 0.3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Schedule {
    pub decay: DecayType,
    pub lr_start: f64,
    pub lr_min: f64,
}

/// Cosine interpolation from `hi` (progress 0) to `lo` (progress 1); both
/// endpoints are returned exactly.
fn cosine(hi: f64, lo: f64, progress: f64) -> f64 {
    let w = 0.5 * (1.0 + (PI * progress).cos());
    hi * w + lo * (1.0 - w)
}

/// Learning rate at `step` of `total_steps`.
pub fn lr_schedule(step: usize, total_steps: usize, s: &Schedule) -> Result<f64> {
    if step > total_steps {
        return Err(Error::Config(format!("step {step} beyond schedule length {total_steps}")));
    }
    if total_steps == 0 {
        return Ok(s.lr_start);
    }
    Ok(match s.decay {
        DecayType::Cosine => {
            if step == total_steps {
                s.lr_min
            } else {
                cosine(s.lr_start, s.lr_min, step as f64 / total_steps as f64)
            }
        }
        DecayType::OneCycle => {
            let warm = (ONECYCLE_WARMUP * total_steps as f64).round() as usize;
            let low = s.lr_start / ONECYCLE_DIV;
            if step < warm {
                low + (s.lr_start - low) * step as f64 / warm as f64
            } else if step == total_steps {
                s.lr_min
            } else {
                cosine(s.lr_start, s.lr_min, (step - warm) as f64 / (total_steps - warm) as f64)
            }
        }
    })
}
