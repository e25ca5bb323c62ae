//! Evaluation suite: L2, Fréchet distance, variation, Shannon index,
//! paired FD, Pearson correlation and time-lagged cross correlation.
//!
//! Metrics are computed in f64 and separately for the expression and
//! rotation parts of each frame.

mod distance;
mod diversity;
mod sync;

use std::fmt::Write as _;
use std::ops::Range;

use serde::{Deserialize, Serialize};

pub use distance::{frechet_distance, l2, motion_fd, paired_fd};
pub use diversity::{fit_clusters, sequence_shannon_index, shannon_index, variation, ClusterModel, KMEANS_ITERATIONS};
pub use sync::{pcc, project_1d, tlcc, Projection, Tlcc, DEFAULT_MAX_LAG};

use crate::data::{MotionSequence, ROTATION_DIM};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Part {
    Expression,
    Rotation,
}

impl Part {
    pub const BOTH: [Part; 2] = [Part::Expression, Part::Rotation];

    pub fn range(self, expression_dim: usize) -> Range<usize> {
        match self {
            Part::Expression => 0..expression_dim,
            Part::Rotation => expression_dim..expression_dim + ROTATION_DIM,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Part::Expression => "expression",
            Part::Rotation => "rotation",
        }
    }
}

/// Every frame of every sequence, restricted to `part`, as f64 rows.
pub fn frames(seqs: &[MotionSequence], part: Part) -> Vec<Vec<f64>> {
    seqs.iter()
        .flat_map(|s| {
            let range = part.range(s.expression_dim());
            (0..s.len()).map(move |t| s.row(t)[range.clone()].iter().map(|&v| v as f64).collect())
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSettings {
    pub k_expression: usize,
    pub k_rotation: usize,
    pub kmeans_seed: u64,
    pub max_lag: usize,
    pub smile_weights: Vec<f64>,
}

impl Default for MetricSettings {
    fn default() -> Self {
        Self {
            k_expression: 15,
            k_rotation: 9,
            kmeans_seed: 0,
            max_lag: DEFAULT_MAX_LAG,
            smile_weights: vec![1.0],
        }
    }
}

impl MetricSettings {
    pub fn k(&self, part: Part) -> usize {
        match part {
            Part::Expression => self.k_expression,
            Part::Rotation => self.k_rotation,
        }
    }

    pub fn projection(&self, part: Part) -> Projection {
        match part {
            Part::Expression => Projection::ExpressionSmile {
                weights: self.smile_weights.clone(),
            },
            Part::Rotation => Projection::RotationNod,
        }
    }
}

/// One part's row of a report. `pcc` and `tlcc_peak_lag` are `None` when
/// every prediction is constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartMetrics {
    pub l2: f64,
    pub fd: f64,
    pub variation: f64,
    pub si: f64,
    pub p_fd: f64,
    pub pcc: Option<f64>,
    pub tlcc_peak_lag: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub method: String,
    pub sequences: usize,
    pub frames: usize,
    pub expression: PartMetrics,
    pub rotation: PartMetrics,
    pub settings: MetricSettings,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl MetricsReport {
    pub fn part(&self, part: Part) -> &PartMetrics {
        match part {
            Part::Expression => &self.expression,
            Part::Rotation => &self.rotation,
        }
    }
}

/// Cluster models fitted on training frames plus the metric settings.
#[derive(Debug, Clone)]
pub struct MetricSuite {
    pub settings: MetricSettings,
    pub expression_clusters: ClusterModel,
    pub rotation_clusters: ClusterModel,
}

impl MetricSuite {
    pub fn fit(train_listeners: &[MotionSequence], settings: MetricSettings) -> Result<Self> {
        let expression_clusters = fit_clusters(
            &frames(train_listeners, Part::Expression),
            settings.k_expression,
            settings.kmeans_seed,
        )?;
        let rotation_clusters =
            fit_clusters(&frames(train_listeners, Part::Rotation), settings.k_rotation, settings.kmeans_seed)?;
        Ok(Self {
            settings,
            expression_clusters,
            rotation_clusters,
        })
    }

    pub fn clusters(&self, part: Part) -> &ClusterModel {
        match part {
            Part::Expression => &self.expression_clusters,
            Part::Rotation => &self.rotation_clusters,
        }
    }

    /// Scores `pred` against `gt`, with synchrony measured against
    /// `speakers`. Ground truth and speakers are truncated at the end to each
    /// prediction's length.
    pub fn evaluate(
        &self,
        method: &str,
        pred: &[MotionSequence],
        gt: &[MotionSequence],
        speakers: &[MotionSequence],
    ) -> Result<MetricsReport> {
        if pred.len() != gt.len() || pred.len() != speakers.len() {
            return Err(Error::shape("evaluate", &[pred.len()], &[gt.len(), speakers.len()]));
        }
        if pred.is_empty() {
            return Err(Error::EmptyInput("evaluate with no sequences".into()));
        }
        let cut = |seqs: &[MotionSequence]| -> Result<Vec<MotionSequence>> {
            seqs.iter()
                .zip(pred)
                .map(|(s, p)| {
                    if s.len() < p.len() {
                        Err(Error::shape("evaluate", &[p.len()], &[s.len()]))
                    } else {
                        s.slice(0, p.len())
                    }
                })
                .collect()
        };
        let gt = cut(gt)?;
        let speakers = cut(speakers)?;
        let row = |part: Part| self.part_metrics(part, pred, &gt, &speakers);
        Ok(MetricsReport {
            method: method.to_string(),
            sequences: pred.len(),
            frames: pred.iter().map(|p| p.len()).sum(),
            expression: row(Part::Expression)?,
            rotation: row(Part::Rotation)?,
            settings: self.settings.clone(),
            note: None,
        })
    }

    fn part_metrics(
        &self,
        part: Part,
        pred: &[MotionSequence],
        gt: &[MotionSequence],
        speakers: &[MotionSequence],
    ) -> Result<PartMetrics> {
        let projection = self.settings.projection(part);
        let mut rs = Vec::new();
        let mut curves: Vec<Vec<f64>> = Vec::new();
        for (p, s) in pred.iter().zip(speakers) {
            let x = project_1d(s, &projection)?;
            let y = project_1d(p, &projection)?;
            match pcc(&x, &y) {
                Ok(r) => rs.push(r),
                Err(Error::DegenerateInput(_)) | Err(Error::Contract(_)) => continue,
                Err(e) => return Err(e),
            }
            match tlcc(&x, &y, self.settings.max_lag) {
                Ok(t) => curves.push(t.curve),
                Err(Error::DegenerateInput(_)) | Err(Error::Contract(_)) => {}
                Err(e) => return Err(e),
            }
        }
        let pcc_mean = (!rs.is_empty()).then(|| rs.iter().sum::<f64>() / rs.len() as f64);
        let tlcc_peak_lag = (!curves.is_empty()).then(|| {
            let mean: Vec<f64> = (0..=self.settings.max_lag)
                .map(|x| curves.iter().map(|c| c[x]).sum::<f64>() / curves.len() as f64)
                .collect();
            let mut peak = 0;
            for (x, &r) in mean.iter().enumerate() {
                if r > mean[peak] {
                    peak = x;
                }
            }
            peak as f64
        });
        Ok(PartMetrics {
            l2: l2(pred, gt, part)?,
            fd: motion_fd(pred, gt, part)?,
            variation: variation(pred, part)?,
            si: sequence_shannon_index(self.clusters(part), pred, part)?,
            p_fd: paired_fd(pred, gt, speakers, part)?,
            pcc: pcc_mean,
            tlcc_peak_lag,
        })
    }
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.3}"))
}

/// Aligned text table, one row per report.
pub fn render_table(reports: &[MetricsReport]) -> String {
    let cols = ["L2", "FD", "Var", "SI", "P-FD", "PCC", "TLCC"];
    let width = reports.iter().map(|r| r.method.len()).max().unwrap_or(6).max(6);
    let mut out = String::new();
    let _ = write!(out, "{:width$}", "method");
    for part in Part::BOTH {
        for c in cols {
            let _ = write!(out, " {:>10}", format!("{}.{}", &part.name()[..3], c));
        }
    }
    out.push('\n');
    for r in reports {
        let _ = write!(out, "{:width$}", r.method);
        for part in Part::BOTH {
            let m = r.part(part);
            for v in [Some(m.l2), Some(m.fd), Some(m.variation), Some(m.si), Some(m.p_fd), m.pcc, m.tlcc_peak_lag] {
                let _ = write!(out, " {:>10}", cell(v));
            }
        }
        out.push('\n');
    }
    for r in reports.iter().filter(|r| r.note.is_some()) {
        let _ = writeln!(out, "note ({}): {}", r.method, r.note.as_deref().unwrap_or_default());
    }
    out
}
