//! End-to-end orchestration: splits, training stages, generation and
//! evaluation reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Checkpoint;
use crate::baselines::{run_baseline, Baseline, TrainBank};
use crate::config::ExperimentConfig;
use crate::data::{split_contiguous, window, windows, DyadDataset, DyadSample, MotionSequence};
use crate::error::{Error, Result};
use crate::fusion::FusionMode;
use crate::metrics::{render_table, MetricSuite, MetricsReport};
use crate::predictor::{build_examples, rollout, train_predictor, ListenerModel, PredictorReport};
use crate::rng::RngStreams;
use crate::vqvae::{train_vqvae, VqTrainReport, VqVae};

/// Row name for predictions read from a generated dataset.
pub const GENERATED: &str = "generated";
/// Row name for ground truth scored against itself.
pub const GROUND_TRUTH: &str = "ground-truth";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Splits {
    pub train: Vec<DyadSample>,
    pub val: Vec<DyadSample>,
    pub test: Vec<DyadSample>,
}

/// Cuts every sample into contiguous train/val/test blocks aligned to `w`.
pub fn split_samples(samples: &[DyadSample], cfg: &ExperimentConfig) -> Result<Splits> {
    let mut out = Splits::default();
    for s in samples {
        let [train, val, test] = split_contiguous(s, cfg.split, cfg.window, cfg.window)?;
        out.train.extend(train);
        out.val.extend(val);
        out.test.extend(test);
    }
    if out.train.is_empty() {
        return Err(Error::EmptyInput("no sample is long enough for a training block".into()));
    }
    Ok(out)
}

/// Listener windows of `len` frames at multiples of `stride`.
pub fn listener_windows(samples: &[DyadSample], len: usize, stride: usize) -> Result<Vec<MotionSequence>> {
    let mut out = Vec::new();
    for s in samples {
        out.extend(windows(s, len, stride)?.into_iter().map(|w| w.listener_motion));
    }
    Ok(out)
}

/// Trains a fresh VQ-VAE, or continues `resume`, on listener windows.
pub fn train_vqvae_stage(
    cfg: &ExperimentConfig,
    dataset: &DyadDataset,
    splits: &Splits,
    resume: Option<VqVae>,
) -> Result<(VqVae, VqTrainReport)> {
    let mut vq = match resume {
        Some(m) => m,
        None => VqVae::new(cfg.vqvae(dataset.expression_dim, dataset.fps), cfg.seed)?,
    };
    let train = listener_windows(&splits.train, cfg.vq_train_len, cfg.stride)?;
    let held_out = listener_windows(&splits.val, cfg.vq_train_len, cfg.stride)?;
    if train.is_empty() {
        return Err(Error::EmptyInput(format!("no {}-frame training windows", cfg.vq_train_len)));
    }
    let report = train_vqvae(&mut vq, &train, &held_out, &cfg.vq_train())?;
    Ok((vq, report))
}

/// Fusion mode after the ablation flags.
pub fn ablation_mode(base: FusionMode, no_audio: bool, no_motion: bool) -> Result<FusionMode> {
    match (no_audio, no_motion) {
        (true, true) => Err(Error::Config("--no-audio and --no-motion leave no speaker input".into())),
        (true, false) => Ok(FusionMode::MotionOnly),
        (false, true) => Ok(FusionMode::AudioOnly),
        (false, false) => Ok(base),
    }
}

/// Trains speaker encoder and predictor against a frozen VQ-VAE.
pub fn train_listener_stage(
    cfg: &ExperimentConfig,
    dataset: &DyadDataset,
    vq: &VqVae,
    splits: &Splits,
) -> Result<(ListenerModel, PredictorReport)> {
    let lc = cfg.listener(dataset.expression_dim, dataset.audio_dim, dataset.rate_multiple);
    let train = build_examples(vq, &lc, &splits.train, 1)?;
    let held_out = build_examples(vq, &lc, &splits.val, 1)?;
    let mut model = ListenerModel::new(lc, cfg.seed)?;
    let report = train_predictor(&mut model, vq, &train, &held_out, &cfg.predictor_train())?;
    Ok((model, report))
}

/// `samples` rollouts per speaker, each `frames` long (all whole tokens when
/// `None`). Output ids are `<speaker id>#<k>`.
pub fn generate(
    model: &ListenerModel,
    vq: &VqVae,
    speakers: &[DyadSample],
    frames: Option<usize>,
    samples: usize,
    nucleus_p: f64,
    seed: u64,
) -> Result<Vec<DyadSample>> {
    if samples == 0 {
        return Err(Error::contract("generate needs at least one sample per speaker"));
    }
    let w = vq.window();
    let streams = RngStreams::new(seed);
    let mut out = Vec::with_capacity(speakers.len() * samples);
    for (i, s) in speakers.iter().enumerate() {
        let len = frames.unwrap_or(s.len() / w * w);
        if len == 0 || len % w != 0 {
            return Err(Error::Config(format!("horizon of {len} frames is not a positive multiple of w = {w}")));
        }
        if len > s.len() {
            return Err(Error::Range(format!("horizon of {len} frames exceeds the {}-frame speaker `{}`", s.len(), s.id)));
        }
        let speaker = window(s, 0, len)?;
        for k in 0..samples {
            let mut rng = streams.substream("generate", ((i as u64) << 32) | k as u64);
            let r = rollout(model, vq, &speaker.speaker_motion, &speaker.speaker_audio, len / w, nucleus_p, &mut rng)?;
            out.push(DyadSample::new(
                format!("{}#{k}", s.id),
                speaker.speaker_motion.clone(),
                speaker.speaker_audio.clone(),
                r.motion,
            )?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub rows: Vec<MetricsReport>,
    /// Mean over speakers of the best L2 among the first `x` rollouts, for
    /// `x = 1..=N`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub multi_sample: Option<Vec<f64>>,
}

impl EvaluationReport {
    pub fn row(&self, method: &str) -> Option<&MetricsReport> {
        self.rows.iter().find(|r| r.method == method)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::contract(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::format(0, e.to_string()))
    }

    pub fn to_text(&self) -> String {
        let mut out = render_table(&self.rows);
        if let Some(curve) = &self.multi_sample {
            out.push_str("multi-sample min L2:");
            for (x, v) in curve.iter().enumerate() {
                let _ = write!(out, " {}:{v:.4}", x + 1);
            }
            out.push('\n');
        }
        out
    }
}

pub struct EvalRequest<'a> {
    /// Ground-truth dyads to score against.
    pub gt: &'a [DyadSample],
    /// Training dyads for the baseline bank and cluster fitting.
    pub train: &'a [DyadSample],
    /// Generated dyads with ids `<gt id>` or `<gt id>#<k>`.
    pub pred: Option<&'a [DyadSample]>,
    pub methods: &'a [Baseline],
    pub vq: Option<&'a VqVae>,
    pub multi_sample: Option<usize>,
}

fn base_id(id: &str) -> &str {
    id.rsplit_once('#').map_or(id, |(b, _)| b)
}

fn flat_l2(a: &MotionSequence, b: &MotionSequence) -> f64 {
    a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| ((x - y) as f64).powi(2)).sum::<f64>().sqrt()
}

/// Scores ground truth, each requested baseline and the generated set on
/// non-overlapping `T`-frame windows.
pub fn evaluate(cfg: &ExperimentConfig, req: &EvalRequest) -> Result<EvaluationReport> {
    let t = cfg.seq_len;
    let bank = TrainBank::from_samples(req.train, t, cfg.stride)?;
    let train_listeners: Vec<MotionSequence> = req.train.iter().map(|s| s.listener_motion.clone()).collect();
    let suite = MetricSuite::fit(&train_listeners, cfg.metrics.clone())?;

    let mut gt_windows = Vec::new();
    for s in req.gt {
        gt_windows.extend(windows(s, t, t)?);
    }
    if gt_windows.is_empty() {
        return Err(Error::EmptyInput(format!("no ground-truth sequence holds {t} frames")));
    }
    let gt_listeners: Vec<MotionSequence> = gt_windows.iter().map(|w| w.listener_motion.clone()).collect();
    let speakers: Vec<MotionSequence> = gt_windows.iter().map(|w| w.speaker_motion.clone()).collect();

    let mut rows = vec![suite.evaluate(GROUND_TRUTH, &gt_listeners, &gt_listeners, &speakers)?];
    let streams = RngStreams::new(cfg.seed);
    for &method in req.methods {
        let mut preds = Vec::with_capacity(gt_windows.len());
        for (j, q) in gt_windows.iter().enumerate() {
            let mut rng = streams.substream(method.name(), j as u64);
            preds.push(run_baseline(method, &bank, q, req.vq, cfg.baselines, &mut rng)?);
        }
        let mut row = suite.evaluate(method.name(), &preds, &gt_listeners, &speakers)?;
        row.note = method.note().map(str::to_string);
        rows.push(row);
    }

    let mut multi_sample = None;
    if let Some(pred) = req.pred {
        let by_id: BTreeMap<&str, &DyadSample> = req.gt.iter().map(|s| (s.id.as_str(), s)).collect();
        let mut groups: BTreeMap<&str, Vec<&DyadSample>> = BTreeMap::new();
        for p in pred {
            let id = base_id(&p.id);
            if !by_id.contains_key(id) {
                return Err(Error::format(0, format!("prediction `{}` has no ground-truth sequence `{id}`", p.id)));
            }
            groups.entry(id).or_default().push(p);
        }
        let (mut pl, mut gl, mut sl) = (Vec::new(), Vec::new(), Vec::new());
        for (id, preds) in &groups {
            let g = by_id[id];
            for p in preds {
                let n = p.len().min(g.len()) / t;
                for k in 0..n {
                    pl.push(p.listener_motion.slice(k * t, (k + 1) * t)?);
                    gl.push(g.listener_motion.slice(k * t, (k + 1) * t)?);
                    sl.push(g.speaker_motion.slice(k * t, (k + 1) * t)?);
                }
            }
        }
        if pl.is_empty() {
            return Err(Error::EmptyInput(format!("no prediction holds {t} frames")));
        }
        rows.push(suite.evaluate(GENERATED, &pl, &gl, &sl)?);

        if let Some(n) = req.multi_sample {
            if n == 0 {
                return Err(Error::Config("--multi-sample needs N ≥ 1".into()));
            }
            let mut curve = vec![0.0; n];
            for (id, preds) in &groups {
                if preds.len() < n {
                    return Err(Error::Config(format!("`{id}` has {} rollouts, fewer than --multi-sample {n}", preds.len())));
                }
                let g = by_id[id];
                let mut best = f64::INFINITY;
                for (slot, p) in curve.iter_mut().zip(preds) {
                    let len = p.len().min(g.len());
                    best = best.min(flat_l2(&p.listener_motion.slice(0, len)?, &g.listener_motion.slice(0, len)?));
                    *slot += best;
                }
            }
            let count = groups.len() as f64;
            multi_sample = Some(curve.into_iter().map(|v| v / count).collect());
        }
    } else if req.multi_sample.is_some() {
        return Err(Error::Config("--multi-sample needs generated predictions".into()));
    }
    Ok(EvaluationReport { rows, multi_sample })
}

/// Synthetic-or-loaded data through both training stages, generation on the
/// test blocks and evaluation with the given baselines.
pub fn run_pipeline(cfg: &ExperimentConfig, dataset: &DyadDataset, methods: &[Baseline]) -> Result<EvaluationReport> {
    cfg.validate()?;
    let splits = split_samples(&dataset.samples, cfg)?;
    let (mut vq, _) = train_vqvae_stage(cfg, dataset, &splits, None)?;
    vq.freeze();
    let (model, _) = train_listener_stage(cfg, dataset, &vq, &splits)?;
    let pred = generate(&model, &vq, &splits.test, None, 1, cfg.nucleus_p, cfg.seed)?;
    evaluate(
        cfg,
        &EvalRequest {
            gt: &splits.test,
            train: &splits.train,
            pred: Some(&pred),
            methods,
            vq: Some(&vq),
            multi_sample: None,
        },
    )
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    ckpt.save(path)
}

pub fn load_vqvae(path: impl AsRef<Path>) -> Result<VqVae> {
    VqVae::from_checkpoint(&Checkpoint::load(path)?)
}

pub fn load_listener(path: impl AsRef<Path>) -> Result<ListenerModel> {
    ListenerModel::from_checkpoint(&Checkpoint::load(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{DyadSynth, SynthConfig};

    fn dataset() -> DyadDataset {
        let synth = DyadSynth::new(SynthConfig {
            expression_dim: 4,
            audio_dim: 3,
            ..SynthConfig::default()
        });
        DyadDataset::new(synth.generate(0, 3, 200).unwrap(), None).unwrap()
    }

    #[test]
    fn splits_are_contiguous_and_aligned() {
        let ds = dataset();
        let s = split_samples(&ds.samples, &ExperimentConfig::default()).unwrap();
        assert_eq!(s.train.len(), 3);
        assert_eq!(s.train[0].len(), 136);
        assert_eq!(s.val[0].len(), 40);
        assert_eq!(s.test[0].len(), 24);
        assert_eq!(s.test[0].listener_motion.row(0), ds.samples[0].listener_motion.row(176));
    }

    #[test]
    fn ground_truth_scores_zero_against_itself() {
        let ds = dataset();
        let cfg = ExperimentConfig {
            metrics: crate::metrics::MetricSettings {
                k_expression: 4,
                k_rotation: 3,
                ..Default::default()
            },
            ..ExperimentConfig::default()
        };
        let report = evaluate(
            &cfg,
            &EvalRequest {
                gt: &ds.samples,
                train: &ds.samples,
                pred: Some(&ds.samples),
                methods: &[Baseline::Median],
                vq: None,
                multi_sample: Some(1),
            },
        )
        .unwrap();
        let g = report.row(GENERATED).unwrap();
        assert_eq!(g.expression.l2, 0.0);
        assert!(g.expression.fd < 1e-6 && g.rotation.p_fd < 1e-6);
        assert_eq!(report.multi_sample, Some(vec![0.0]));
        let m = report.row("median").unwrap();
        assert_eq!(m.expression.variation, 0.0);
        assert_eq!(m.expression.pcc, None);
        let back = EvaluationReport::from_json(&report.to_json().unwrap()).unwrap();
        assert_eq!(back.rows.len(), report.rows.len());
    }

    #[test]
    fn ablation_flags() {
        assert_eq!(ablation_mode(FusionMode::Cross, true, false).unwrap(), FusionMode::MotionOnly);
        assert_eq!(ablation_mode(FusionMode::Concat, false, false).unwrap(), FusionMode::Concat);
        assert!(ablation_mode(FusionMode::Cross, true, true).is_err());
    }
}
