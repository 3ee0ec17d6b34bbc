use std::f64::consts::FRAC_PI_2;

use super::TrainError;

/// `sin(π/2 · e/e_max + π/2 · (x − L_min)/(L_max − L_min))`.
///
/// The length term is 0 when `L_min = L_max`. The sine is evaluated on its
/// reflected argument past `π/2`, so every endpoint is exact.
pub fn curriculum_weight(
    e: usize,
    e_max: usize,
    x: usize,
    l_min: usize,
    l_max: usize,
) -> Result<f64, TrainError> {
    if x < l_min || x > l_max {
        return Err(TrainError::Weight {
            x,
            min: l_min,
            max: l_max,
        });
    }
    if e_max == 0 || e > e_max {
        return Err(TrainError::Config(format!("epoch {e} outside 0..={e_max}")));
    }
    let epoch_term = e as f64 / e_max as f64;
    let length_term = if l_max == l_min {
        0.0
    } else {
        (x - l_min) as f64 / (l_max - l_min) as f64
    };
    let t = epoch_term + length_term;
    let t = if t > 1.0 { 2.0 - t } else { t };
    Ok((FRAC_PI_2 * t).sin().clamp(0.0, 1.0))
}

/// Epoch and length bounds feeding both sides' curriculum weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CurriculumState {
    pub epoch: usize,
    pub e_max: usize,
    pub user_bounds: (usize, usize),
    pub item_bounds: (usize, usize),
}

impl CurriculumState {
    pub fn user_weight(&self, len: usize) -> Result<f64, TrainError> {
        curriculum_weight(
            self.epoch,
            self.e_max,
            len,
            self.user_bounds.0,
            self.user_bounds.1,
        )
    }

    pub fn item_weight(&self, n_subsequences: usize) -> Result<f64, TrainError> {
        curriculum_weight(
            self.epoch,
            self.e_max,
            n_subsequences,
            self.item_bounds.0,
            self.item_bounds.1,
        )
    }
}
