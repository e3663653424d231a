//! Image corruptions used to elicit dispreferred descriptions: a
//! low-resolution round trip and a color jitter.
//!
//! Both operators are pure and keep the input's dimensions. Resampling
//! weights are exact integers; the jitter uses plain IEEE `f64` (no fused
//! operations). Both round half away from zero, so outputs are identical
//! across platforms.

mod buffer;
mod jitter;
mod lowres;

pub use buffer::{ImageBuffer, ImageError};
pub use jitter::corrupt_jitter;
pub use lowres::{corrupt_lowres, lowres_target};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::fraction::Fraction;
use crate::rng::SeededRng;

pub const HUE_SHIFT_LIMIT: f64 = 180.0;
pub const SCALE_MIN: f64 = 0.2;
pub const SCALE_MAX: f64 = 1.8;
pub const DEFAULT_MIN_SIDE: u32 = 8;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CorruptionError {
    #[error("parameter `{name}` = {value} outside [{min}, {max}]")]
    ParameterRange {
        name: &'static str,
        value: String,
        min: String,
        max: String,
    },
    #[error("expected a {expected} corruption spec")]
    WrongMode { expected: &'static str },
}

fn range_error(name: &'static str, value: impl ToString, min: impl ToString, max: impl ToString) -> CorruptionError {
    CorruptionError::ParameterRange {
        name,
        value: value.to_string(),
        min: min.to_string(),
        max: max.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum CorruptionMode {
    #[serde(rename = "lowres")]
    LowRes {
        factor: Fraction,
        #[serde(default = "default_min_side")]
        min_side: u32,
    },
    ColorJitter {
        hue_shift_deg: f64,
        sat_scale: f64,
        bright_scale: f64,
        contrast_scale: f64,
    },
}

fn default_min_side() -> u32 {
    DEFAULT_MIN_SIDE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorruptionSpec {
    #[serde(flatten)]
    pub mode: CorruptionMode,
    pub seed: u64,
}

impl CorruptionSpec {
    pub fn lowres(factor: Fraction) -> Self {
        Self {
            mode: CorruptionMode::LowRes {
                factor,
                min_side: DEFAULT_MIN_SIDE,
            },
            seed: 0,
        }
    }

    pub fn jitter(hue_shift_deg: f64, sat_scale: f64, bright_scale: f64, contrast_scale: f64) -> Self {
        Self {
            mode: CorruptionMode::ColorJitter {
                hue_shift_deg,
                sat_scale,
                bright_scale,
                contrast_scale,
            },
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), CorruptionError> {
        match &self.mode {
            CorruptionMode::LowRes { factor, .. } => validate_factor(*factor),
            CorruptionMode::ColorJitter {
                hue_shift_deg,
                sat_scale,
                bright_scale,
                contrast_scale,
            } => {
                check_range("hue_shift_deg", *hue_shift_deg, -HUE_SHIFT_LIMIT, HUE_SHIFT_LIMIT)?;
                check_range("sat_scale", *sat_scale, SCALE_MIN, SCALE_MAX)?;
                check_range("bright_scale", *bright_scale, SCALE_MIN, SCALE_MAX)?;
                check_range("contrast_scale", *contrast_scale, SCALE_MIN, SCALE_MAX)
            }
        }
    }

    pub fn is_lowres(&self) -> bool {
        matches!(self.mode, CorruptionMode::LowRes { .. })
    }
}

pub(crate) fn validate_factor(factor: Fraction) -> Result<(), CorruptionError> {
    if factor.is_zero() || factor > Fraction::new(1, 1) {
        return Err(range_error("factor", factor, "0 (exclusive)", 1));
    }
    Ok(())
}

fn check_range(name: &'static str, v: f64, lo: f64, hi: f64) -> Result<(), CorruptionError> {
    if !(lo..=hi).contains(&v) {
        return Err(range_error(name, v, lo, hi));
    }
    Ok(())
}

/// Inclusive sampling range for one jitter parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamRange {
    pub min: f64,
    pub max: f64,
}

impl ParamRange {
    pub const fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }
}

/// Defaults and sampling ranges for [`sample_corruption`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorruptionConfig {
    pub lowres_factor: Fraction,
    pub min_side: u32,
    pub hue_shift_deg: ParamRange,
    pub sat_scale: ParamRange,
    pub bright_scale: ParamRange,
    pub contrast_scale: ParamRange,
}

impl Default for CorruptionConfig {
    fn default() -> Self {
        Self {
            lowres_factor: Fraction::new(1, 8),
            min_side: DEFAULT_MIN_SIDE,
            hue_shift_deg: ParamRange::new(-HUE_SHIFT_LIMIT, HUE_SHIFT_LIMIT),
            sat_scale: ParamRange::new(SCALE_MIN, SCALE_MAX),
            bright_scale: ParamRange::new(SCALE_MIN, SCALE_MAX),
            contrast_scale: ParamRange::new(SCALE_MIN, SCALE_MAX),
        }
    }
}

impl CorruptionConfig {
    pub fn validate(&self) -> Result<(), CorruptionError> {
        validate_factor(self.lowres_factor)?;
        if self.min_side == 0 {
            return Err(range_error("min_side", 0, 1, u32::MAX));
        }
        let ranges = [
            ("hue_shift_deg", self.hue_shift_deg, -HUE_SHIFT_LIMIT, HUE_SHIFT_LIMIT),
            ("sat_scale", self.sat_scale, SCALE_MIN, SCALE_MAX),
            ("bright_scale", self.bright_scale, SCALE_MIN, SCALE_MAX),
            ("contrast_scale", self.contrast_scale, SCALE_MIN, SCALE_MAX),
        ];
        for (name, r, lo, hi) in ranges {
            check_range(name, r.min, lo, hi)?;
            check_range(name, r.max, lo, hi)?;
            if r.min > r.max {
                return Err(range_error(name, r.min, lo, r.max));
            }
        }
        Ok(())
    }
}

fn draw(rng: &mut impl Rng, r: ParamRange) -> f64 {
    if r.min == r.max {
        r.min
    } else {
        rng.random_range(r.min..=r.max)
    }
}

/// Draw number `index`: low resolution or jitter with probability 1/2 each.
pub fn sample_corruption(cfg: &CorruptionConfig, rng: &SeededRng, index: u64) -> CorruptionSpec {
    let mut r = rng.at(index);
    let lowres = r.random::<f64>() < 0.5;
    let seed = r.random::<u64>();
    let mode = if lowres {
        CorruptionMode::LowRes {
            factor: cfg.lowres_factor,
            min_side: cfg.min_side,
        }
    } else {
        jitter_params(cfg, &mut r)
    };
    CorruptionSpec { mode, seed }
}

/// Draw number `index` of a color jitter with parameters uniform in the
/// configured ranges.
pub fn sample_jitter(cfg: &CorruptionConfig, rng: &SeededRng, index: u64) -> CorruptionSpec {
    let mut r = rng.at(index);
    let seed = r.random::<u64>();
    CorruptionSpec {
        mode: jitter_params(cfg, &mut r),
        seed,
    }
}

fn jitter_params(cfg: &CorruptionConfig, r: &mut impl Rng) -> CorruptionMode {
    CorruptionMode::ColorJitter {
        hue_shift_deg: draw(r, cfg.hue_shift_deg),
        sat_scale: draw(r, cfg.sat_scale),
        bright_scale: draw(r, cfg.bright_scale),
        contrast_scale: draw(r, cfg.contrast_scale),
    }
}

/// Applies whichever operator `spec` names.
pub fn apply(img: &ImageBuffer, spec: &CorruptionSpec) -> Result<ImageBuffer, CorruptionError> {
    match &spec.mode {
        CorruptionMode::LowRes { factor, min_side } => lowres::corrupt_lowres_with_floor(img, *factor, *min_side),
        CorruptionMode::ColorJitter { .. } => corrupt_jitter(img, spec),
    }
}
