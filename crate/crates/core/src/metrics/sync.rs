//! Synchrony between listener and speaker: Pearson correlation of 1-D
//! projections and its time-lagged curve.

use serde::{Deserialize, Serialize};

use crate::data::{MotionSequence, PITCH};
use crate::error::{Error, Result};

pub const DEFAULT_MAX_LAG: usize = 60;

/// Pearson correlation coefficient.
pub fn pcc(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::shape("pcc", &[x.len()], &[y.len()]));
    }
    if x.len() < 2 {
        return Err(Error::contract(format!("pcc needs at least 2 points, got {}", x.len())));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    // relative threshold so rounding residue of a constant series counts as constant
    let tiny = |s: f64, m: f64| s <= 1e-24 * n * (1.0 + m * m);
    if tiny(sxx, mx) || tiny(syy, my) {
        return Err(Error::DegenerateInput("pcc of a constant series".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// A linear functional mapping each frame to one number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Projection {
    /// Weighted sum of expression coefficients, a stand-in for lip curvature.
    ExpressionSmile { weights: Vec<f64> },
    /// Pitch (up/down) head rotation.
    RotationNod,
}

impl Projection {
    /// First expression coefficient.
    pub fn smile() -> Self {
        Projection::ExpressionSmile { weights: vec![1.0] }
    }
}

pub fn project_1d(seq: &MotionSequence, projection: &Projection) -> Result<Vec<f64>> {
    match projection {
        Projection::ExpressionSmile { weights } => {
            if weights.len() > seq.expression_dim() {
                return Err(Error::shape("project_1d", &[weights.len()], &[seq.expression_dim()]));
            }
            Ok((0..seq.len())
                .map(|t| seq.expression(t).iter().zip(weights).map(|(&a, b)| a as f64 * b).sum())
                .collect())
        }
        Projection::RotationNod => Ok((0..seq.len()).map(|t| seq.rotation(t)[PITCH] as f64).collect()),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tlcc {
    /// Correlation at shifts `0..=max_lag`.
    pub curve: Vec<f64>,
    pub peak_lag: usize,
}

/// Pearson correlation of `listener[x..]` against `speaker[..n−x]` for each
/// shift `x` in `0..=max_lag`. The peak is the first maximum.
pub fn tlcc(speaker: &[f64], listener: &[f64], max_lag: usize) -> Result<Tlcc> {
    if speaker.len() != listener.len() {
        return Err(Error::shape("tlcc", &[speaker.len()], &[listener.len()]));
    }
    let n = speaker.len();
    if n <= max_lag + 2 {
        return Err(Error::contract(format!("tlcc with max lag {max_lag} needs more than {} points, got {n}", max_lag + 2)));
    }
    let curve = (0..=max_lag)
        .map(|x| pcc(&speaker[..n - x], &listener[x..]))
        .collect::<Result<Vec<_>>>()?;
    let mut peak_lag = 0;
    for (x, &r) in curve.iter().enumerate() {
        if r > curve[peak_lag] {
            peak_lag = x;
        }
    }
    Ok(Tlcc { curve, peak_lag })
}
