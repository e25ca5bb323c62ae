//! Reconstruction error and Fréchet distances.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::{frames, Part};
use crate::data::MotionSequence;
use crate::error::{Error, Result};

/// Mean over sequences of the Euclidean distance between the flattened
/// prediction and ground truth, restricted to `part`.
pub fn l2(pred: &[MotionSequence], gt: &[MotionSequence], part: Part) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::shape("l2", &[pred.len()], &[gt.len()]));
    }
    if pred.is_empty() {
        return Err(Error::EmptyInput("l2 over no sequences".into()));
    }
    let mut total = 0.0;
    for (p, g) in pred.iter().zip(gt) {
        if p.len() != g.len() || p.frame_dim() != g.frame_dim() {
            return Err(Error::shape("l2", &[p.len(), p.frame_dim()], &[g.len(), g.frame_dim()]));
        }
        let range = part.range(p.expression_dim());
        let mut sq = 0.0f64;
        for t in 0..p.len() {
            for c in range.clone() {
                let d = p.row(t)[c] as f64 - g.row(t)[c] as f64;
                sq += d * d;
            }
        }
        total += sq.sqrt();
    }
    Ok(total / pred.len() as f64)
}

fn moments(samples: &[Vec<f64>], side: &str) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::contract(format!("Fréchet distance needs at least 2 samples, {side} has {n}")));
    }
    let d = samples[0].len();
    if let Some(bad) = samples.iter().find(|s| s.len() != d) {
        return Err(Error::shape("frechet_distance", &[d], &[bad.len()]));
    }
    let mut mean = DVector::zeros(d);
    for s in samples {
        for (m, v) in mean.iter_mut().zip(s) {
            *m += v;
        }
    }
    mean /= n as f64;
    let mut centered = DMatrix::zeros(n, d);
    for (i, s) in samples.iter().enumerate() {
        for j in 0..d {
            centered[(i, j)] = s[j] - mean[j];
        }
    }
    let cov = centered.transpose() * &centered / (n - 1) as f64;
    if cov.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!("non-finite covariance for {side}")));
    }
    Ok((mean, cov))
}

/// Principal square root of a symmetric PSD matrix, negative eigenvalues
/// clamped to zero.
fn sqrt_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// `|μa − μb|² + tr(Σa + Σb − 2(Σa Σb)^½)` between two sample sets, each
/// row one sample. Covariances use the `n − 1` normalization. The
/// cross term is evaluated as `tr((Σa^½ Σb Σa^½)^½)`.
pub fn frechet_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    let (mu_a, cov_a) = moments(a, "first set")?;
    let (mu_b, cov_b) = moments(b, "second set")?;
    if mu_a.len() != mu_b.len() {
        return Err(Error::shape("frechet_distance", &[mu_a.len()], &[mu_b.len()]));
    }
    let root_a = sqrt_psd(&cov_a);
    let inner = &root_a * &cov_b * &root_a;
    let sym = (&inner + inner.transpose()) * 0.5;
    let cross: f64 = SymmetricEigen::new(sym).eigenvalues.iter().map(|l| l.max(0.0).sqrt()).sum();
    let fd = (&mu_a - &mu_b).norm_squared() + cov_a.trace() + cov_b.trace() - 2.0 * cross;
    if !fd.is_finite() {
        return Err(Error::Numerical("Fréchet distance is not finite".into()));
    }
    Ok(fd.max(0.0))
}

/// Fréchet distance between the frame distributions of two sequence sets.
pub fn motion_fd(a: &[MotionSequence], b: &[MotionSequence], part: Part) -> Result<f64> {
    frechet_distance(&frames(a, part), &frames(b, part))
}

fn paired_frames(listeners: &[MotionSequence], speakers: &[MotionSequence], part: Part) -> Result<Vec<Vec<f64>>> {
    if listeners.len() != speakers.len() {
        return Err(Error::shape("paired_fd", &[listeners.len()], &[speakers.len()]));
    }
    let mut out = Vec::new();
    for (l, s) in listeners.iter().zip(speakers) {
        if l.len() != s.len() || l.frame_dim() != s.frame_dim() {
            return Err(Error::shape("paired_fd", &[l.len(), l.frame_dim()], &[s.len(), s.frame_dim()]));
        }
        let range = part.range(l.expression_dim());
        for t in 0..l.len() {
            let mut row: Vec<f64> = range.clone().map(|c| l.row(t)[c] as f64).collect();
            row.extend(range.clone().map(|c| s.row(t)[c] as f64));
            out.push(row);
        }
    }
    Ok(out)
}

/// Fréchet distance over listener ⊕ speaker frames: predicted listeners
/// paired with `speakers` against ground-truth listeners paired with the
/// same speakers.
pub fn paired_fd(
    pred: &[MotionSequence],
    gt: &[MotionSequence],
    speakers: &[MotionSequence],
    part: Part,
) -> Result<f64> {
    frechet_distance(&paired_frames(pred, speakers, part)?, &paired_frames(gt, speakers, part)?)
}
