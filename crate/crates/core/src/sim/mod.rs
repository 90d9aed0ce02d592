//! Scenario construction, Monte-Carlo campaigns and reporting.

pub mod campaign;
pub mod raytrace;
pub mod report;
pub mod ring;

use crate::error::{Error, Result};

/// Fraction of errors beyond three times `ml_std`.
pub fn failure_rate(errors: &[f64], ml_std: f64) -> Result<f64> {
    if !(ml_std > 0.0) {
        return Err(Error::InvalidParameter {
            name: "ml_std",
            reason: format!("must be positive, got {ml_std}"),
        });
    }
    if errors.is_empty() {
        return Ok(0.0);
    }
    let far = errors.iter().filter(|e| **e > 3.0 * ml_std).count();
    Ok(far as f64 / errors.len() as f64)
}
