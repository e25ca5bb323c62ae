//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run a subset by number: `cargo test --release --test acceptance -- 4 5`.

mod common;

use std::process::ExitCode;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use common::gradcheck::{self, Input};
use dyad_core::autodiff::Tape;
use dyad_core::baselines::Baseline;
use dyad_core::config::{ExperimentConfig, Profile};
use dyad_core::data::{DyadDataset, DyadSample, DyadSynth, MotionSequence, SynthConfig};
use dyad_core::fusion::FusionMode;
use dyad_core::metrics::{frechet_distance, project_1d, tlcc, Projection};
use dyad_core::pipeline::{evaluate, listener_windows, run_pipeline, EvalRequest};
use dyad_core::predictor::{
    build_examples, evaluate_predictor, history, multi_sample_min_l2, nucleus_sample, nucleus_set, rollout,
    train_predictor, ListenerModel, PredictorReport,
};
use dyad_core::rng::RngStreams;
use dyad_core::vqvae::{quantize, train_vqvae, Codebook, VqVae};
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Criteria that do not reach their target at desk scale; they still run
/// and print FAIL but do not fail the test target.
const KNOWN_UNMET: &[u32] = &[7, 8];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn synth(cfg: SynthConfig, seeds: std::ops::Range<u64>, len: usize) -> Vec<DyadSample> {
    let s = DyadSynth::new(cfg);
    seeds.map(|i| s.sample(i, len).unwrap()).collect()
}

fn noise_free(modes: usize) -> SynthConfig {
    SynthConfig {
        noise: 0.0,
        lag: Some(17),
        mode_count: modes,
        ..SynthConfig::default()
    }
}

fn desk() -> ExperimentConfig {
    ExperimentConfig::profile(Profile::Desk)
}

fn train_vq(cfg: &ExperimentConfig, train: &[DyadSample], stride: usize) -> VqVae {
    let mut vq = VqVae::new(cfg.vqvae(train[0].listener_motion.expression_dim(), 30.0), cfg.seed).unwrap();
    let windows = listener_windows(train, cfg.vq_train_len, stride).unwrap();
    train_vqvae(&mut vq, &windows, &[], &cfg.vq_train()).unwrap();
    vq.freeze();
    vq
}

fn fit_listener(
    cfg: &ExperimentConfig,
    vq: &VqVae,
    train: &[DyadSample],
    test: &[DyadSample],
) -> (ListenerModel, PredictorReport) {
    let s = &train[0];
    let lc = cfg.listener(s.listener_motion.expression_dim(), s.speaker_audio.feature_dim(), s.speaker_audio.rate_multiple());
    let tr = build_examples(vq, &lc, train, 1).unwrap();
    let te = build_examples(vq, &lc, test, 1).unwrap();
    let mut model = ListenerModel::new(lc, cfg.seed).unwrap();
    let report = train_predictor(&mut model, vq, &tr, &te, &cfg.predictor_train()).unwrap();
    (model, report)
}

fn c1_gradients() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut worst_name = "";
    let mut instances = 0;
    for (name, make, f) in gradcheck::cases() {
        for trial in 0..20u64 {
            let mut rng = gradcheck::rng(1000 + trial * 97 + name.len() as u64);
            let inputs = make(&mut rng);
            let err = gradcheck::max_error(&inputs, |x| f(x, trial));
            instances += 1;
            if err > worst {
                worst = err;
                worst_name = name;
            }
        }
    }
    // stop-gradient: every path from x passes through it
    let mut blocked = true;
    for trial in 0..20u64 {
        let mut rng = gradcheck::rng(7 + trial);
        let x = Input::random(&mut rng, &[3, 4]);
        let y = Input::random(&mut rng, &[3, 4]);
        let tape = Tape::<f64>::new();
        let tx = tape.leaf(&x.shape, x.data.clone(), true).unwrap();
        let ty = tape.leaf(&y.shape, y.data.clone(), true).unwrap();
        let sx = tx.stop_gradient();
        let a = sx.mul(&ty).unwrap().sum().unwrap();
        let b = sx.gelu().unwrap().softmax().unwrap().matmul(&ty.transpose().unwrap()).unwrap().sum().unwrap();
        a.add(&b).unwrap().backward().unwrap();
        let gx = tx.grad().unwrap_or_else(|| vec![0.0; 12]);
        let gy = ty.grad().unwrap_or_default();
        blocked &= gx.iter().all(|&g| g == 0.0) && gy.iter().any(|&g| g != 0.0);
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst < gradcheck::TOLERANCE && blocked && secs < 60.0,
        format!(
            "{instances} instances, worst relative error {worst:.2e} ({worst_name}), stop-gradient blocks all: {blocked}, {secs:.1}s"
        ),
    )
}

fn c2_quantize() -> Outcome {
    let start = Instant::now();
    let mut rng = gradcheck::rng(2);
    let mut mismatches = 0;
    let mut ties = 0;
    for case in 0..1000 {
        let k = rng.random_range(1..40);
        let d = rng.random_range(1..7);
        let n = rng.random_range(1..6);
        // small integers make exact distance ties common
        let integer = case % 2 == 0;
        let draw = |r: &mut rand_chacha::ChaCha8Rng| -> f32 {
            if integer {
                r.random_range(-2..=2) as f32
            } else {
                r.random_range(-1.0..1.0)
            }
        };
        let mut book: Vec<f32> = (0..k * d).map(|_| draw(&mut rng)).collect();
        if k > 2 && case % 5 == 0 {
            let (src, dst) = (rng.random_range(0..k), rng.random_range(0..k));
            let row: Vec<f32> = book[src * d..(src + 1) * d].to_vec();
            book[dst * d..(dst + 1) * d].copy_from_slice(&row);
        }
        let latent: Vec<f32> = (0..n * d).map(|_| draw(&mut rng)).collect();
        let cb = Codebook::new(k, d, &book).unwrap();
        let (zq, idx) = quantize(&cb, &latent).unwrap();
        for (r, row) in latent.chunks(d).enumerate() {
            let dists: Vec<f32> = (0..k)
                .map(|j| book[j * d..(j + 1) * d].iter().zip(row).map(|(a, b)| (a - b) * (a - b)).sum())
                .collect();
            let min = dists.iter().copied().fold(f32::INFINITY, f32::min);
            let winners: Vec<usize> = (0..k).filter(|&j| dists[j] == min).collect();
            ties += usize::from(winners.len() > 1);
            if idx[r] != winners[0] || zq[r * d..(r + 1) * d] != book[winners[0] * d..(winners[0] + 1) * d] {
                mismatches += 1;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        mismatches == 0 && secs < 10.0,
        format!("1000 cases, {mismatches} mismatches, {ties} rows with tied distances, {secs:.2}s"),
    )
}

fn c3_vq_convergence() -> Outcome {
    let start = Instant::now();
    let cfg = desk();
    let samples = synth(SynthConfig::default(), 0..64, 64);
    let windows: Vec<MotionSequence> = samples.iter().map(|s| s.listener_motion.slice(0, 32).unwrap()).collect();
    let mut vq = VqVae::new(cfg.vqvae(windows[0].expression_dim(), 30.0), cfg.seed).unwrap();
    train_vqvae(&mut vq, &windows, &[], &cfg.vq_train()).unwrap();
    vq.freeze();
    let (mut err, mut norm, mut frames) = (0.0, 0.0, 0usize);
    let mut used = std::collections::BTreeSet::new();
    for w in &windows {
        let rec = vq.reconstruct(w).unwrap();
        used.extend(vq.tokenize(w).unwrap());
        for t in 0..w.len() {
            err += w.row(t).iter().zip(rec.row(t)).map(|(a, b)| ((a - b) as f64).powi(2)).sum::<f64>().sqrt();
            norm += w.row(t).iter().map(|&a| (a as f64).powi(2)).sum::<f64>().sqrt();
            frames += 1;
        }
    }
    let ratio = err / norm;
    let k = cfg.codebook_size;
    let secs = start.elapsed().as_secs_f64();
    outcome(
        ratio < 0.1 && used.len() * 10 >= k && secs < 1200.0,
        format!(
            "mean frame L2 {:.4} = {:.1}% of mean frame norm {:.4}; {} of {k} codes used; {secs:.0}s",
            err / frames as f64,
            100.0 * ratio,
            norm / frames as f64,
            used.len()
        ),
    )
}

/// `tr((AB)^½)` for 2×2 PSD matrices: `√(tr M + 2√det M)` with `M = AB`.
fn trace_sqrt_2x2(a: [[f64; 2]; 2], b: [[f64; 2]; 2]) -> f64 {
    let m = [
        [a[0][0] * b[0][0] + a[0][1] * b[1][0], a[0][0] * b[0][1] + a[0][1] * b[1][1]],
        [a[1][0] * b[0][0] + a[1][1] * b[1][0], a[1][0] * b[0][1] + a[1][1] * b[1][1]],
    ];
    let tr = m[0][0] + m[1][1];
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    (tr + 2.0 * det.sqrt()).sqrt()
}

fn gaussian_2d(mean: [f64; 2], cov: [[f64; 2]; 2], n: usize, seed: u64) -> Vec<Vec<f64>> {
    let l00 = cov[0][0].sqrt();
    let l10 = cov[1][0] / l00;
    let l11 = (cov[1][1] - l10 * l10).sqrt();
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut rng = gradcheck::rng(seed);
    (0..n)
        .map(|_| {
            let (z0, z1) = (normal.sample(&mut rng), normal.sample(&mut rng));
            vec![mean[0] + l00 * z0, mean[1] + l10 * z0 + l11 * z1]
        })
        .collect()
}

fn c4_fd_closed_forms() -> Outcome {
    let mut rng = gradcheck::rng(4);
    let set: Vec<Vec<f64>> = (0..200).map(|_| (0..5).map(|_| rng.random_range(-3.0..3.0)).collect()).collect();
    let same = frechet_distance(&set, &set).unwrap();
    let col = |v: &[f64]| v.iter().map(|&x| vec![x]).collect::<Vec<_>>();
    let shift = frechet_distance(&col(&[-1.0, 1.0, 0.0]), &col(&[0.0, 2.0, 1.0])).unwrap();
    let s = 2f64.sqrt();
    let var = frechet_distance(&col(&[-s, s]), &col(&[-s / 2.0, s / 2.0])).unwrap();
    let (ma, ca): ([f64; 2], _) = ([0.0, 0.0], [[1.0, 0.5], [0.5, 2.0]]);
    let (mb, cb): ([f64; 2], _) = ([1.0, -1.0], [[2.0, -0.3], [-0.3, 0.5]]);
    let analytic = (ma[0] - mb[0]).powi(2) + (ma[1] - mb[1]).powi(2) + ca[0][0] + ca[1][1] + cb[0][0] + cb[1][1]
        - 2.0 * trace_sqrt_2x2(ca, cb);
    let sampled = frechet_distance(&gaussian_2d(ma, ca, 50_000, 41), &gaussian_2d(mb, cb, 50_000, 42)).unwrap();
    let rel = (sampled - analytic).abs() / analytic;
    outcome(
        same < 1e-6 && (shift - 1.0).abs() < 1e-9 && (var - 1.0).abs() < 1e-9 && rel < 0.02,
        format!(
            "identical {same:.1e}; mean shift {shift:.12}; variances 4,1 {var:.12}; 2-D sampled {sampled:.4} vs analytic {analytic:.4} ({:.2}%)",
            100.0 * rel
        ),
    )
}

fn c5_anchors() -> Outcome {
    let samples = synth(noise_free(1), 0..8, 512);
    let cfg = ExperimentConfig::default();
    let report = evaluate(
        &cfg,
        &EvalRequest {
            gt: &samples,
            train: &samples,
            pred: None,
            methods: &[Baseline::Median, Baseline::Mirror, Baseline::DelayedMirror],
            vq: None,
            multi_sample: None,
        },
    )
    .unwrap();
    let median = report.row("median").unwrap();
    let mirror = report.row("mirror").unwrap();
    let delayed = report.row("delayed-mirror").unwrap();
    let median_ok = [&median.expression, &median.rotation].iter().all(|m| m.variation == 0.0 && m.si == 0.0);
    let mirror_pcc = [mirror.expression.pcc, mirror.rotation.pcc];
    let mirror_ok = mirror_pcc.iter().all(|p| p.is_some_and(|r| r >= 0.98));
    let lags = [delayed.expression.tlcc_peak_lag, delayed.rotation.tlcc_peak_lag];
    let lag_ok = lags.iter().all(|&l| l == Some(17.0));
    outcome(
        median_ok && mirror_ok && lag_ok,
        format!(
            "median variation {}/{} SI {}/{}; mirror PCC {:?}; delayed-mirror TLCC peak {:?}",
            median.expression.variation,
            median.rotation.variation,
            median.expression.si,
            median.rotation.si,
            mirror_pcc,
            lags
        ),
    )
}

fn c6_lag_recovery() -> Outcome {
    let samples = synth(noise_free(1), 100..110, 512);
    let mut peaks = Vec::new();
    for s in &samples {
        for proj in [Projection::smile(), Projection::RotationNod] {
            let x = project_1d(&s.speaker_motion, &proj).unwrap();
            let y = project_1d(&s.listener_motion, &proj).unwrap();
            peaks.push(tlcc(&x, &y, 60).unwrap().peak_lag);
        }
    }
    let ok = peaks.iter().all(|&p| (16..=18).contains(&p));
    outcome(ok, format!("peak lags over 10 dyads (smile, nod): {peaks:?}"))
}

struct Trained {
    cfg: ExperimentConfig,
    vq: VqVae,
    model: ListenerModel,
    report: PredictorReport,
    train: Vec<DyadSample>,
    test: Vec<DyadSample>,
    secs: f64,
}

fn single_mode_model() -> &'static Trained {
    static CELL: OnceLock<Trained> = OnceLock::new();
    CELL.get_or_init(|| {
        let start = Instant::now();
        let cfg = desk();
        // 32 × 512 frames = 256 windows of 64; 4 × 512 = 32 test windows
        let train = synth(noise_free(1), 0..32, 512);
        let test = synth(noise_free(1), 1000..1004, 512);
        let vq = train_vq(&cfg, &train, 64);
        let (model, report) = fit_listener(&cfg, &vq, &train, &test);
        Trained {
            cfg,
            vq,
            model,
            report,
            train,
            test,
            secs: start.elapsed().as_secs_f64(),
        }
    })
}

fn c7_predictor() -> Outcome {
    let t = single_mode_model();
    let acc = t.report.held_out_accuracy.unwrap_or(0.0);
    let init = t.report.initial_loss;
    let ln_k = (t.cfg.codebook_size as f64).ln();
    let train_acc = t.report.epochs.last().map_or(0.0, |e| e.train_accuracy);
    outcome(
        acc > 0.8 && (init - ln_k).abs() <= 0.3 && t.cfg.predictor_epochs <= 500 && t.secs < 1800.0,
        format!(
            "held-out top-1 {acc:.3} after {} epochs (train {train_acc:.3}); initial CE {init:.3} vs ln K {ln_k:.3}; {:.0}s",
            t.cfg.predictor_epochs, t.secs
        ),
    )
}

fn c8_ablation() -> Outcome {
    let data = SynthConfig {
        audio_informative: 1.0,
        ..noise_free(1)
    };
    let train = synth(data.clone(), 0..12, 256);
    let test = synth(data, 500..504, 256);
    let mut base = desk();
    base.predictor_epochs = 60;
    let vq = train_vq(&base, &train, 32);
    let modes = [FusionMode::Cross, FusionMode::Concat, FusionMode::MotionOnly, FusionMode::AudioOnly];
    let mut acc = vec![[0.0f64; 4]; 3];
    for seed in 0..3u64 {
        for (m, &mode) in modes.iter().enumerate() {
            let cfg = ExperimentConfig {
                seed,
                fusion: mode,
                ..base.clone()
            };
            let (model, _) = fit_listener(&cfg, &vq, &train, &test);
            let lc = &model.config;
            let te = build_examples(&vq, lc, &test, 1).unwrap();
            acc[seed as usize][m] = evaluate_predictor(&model, &te, false).unwrap().0;
        }
    }
    let mean = |m: usize| acc.iter().map(|a| a[m]).sum::<f64>() / 3.0;
    let single = mean(2).max(mean(3));
    let strictly_best = acc.iter().all(|a| a[0] > a[1] && a[0] > a[2] && a[0] > a[3]);
    let ordered = mean(0) >= mean(1) && mean(1) >= single;
    let rows: Vec<String> = acc.iter().map(|a| format!("[{:.3} {:.3} {:.3} {:.3}]", a[0], a[1], a[2], a[3])).collect();
    outcome(
        ordered && strictly_best,
        format!("held-out acc per seed [cross concat motion audio]: {}", rows.join(" ")),
    )
}

fn c9_multimodality() -> Outcome {
    let data = SynthConfig {
        mode_count: 3,
        lag: Some(17),
        ..SynthConfig::default()
    };
    let train = synth(data.clone(), 0..12, 256);
    let test = synth(data, 700..706, 256);
    let mut base = desk();
    base.predictor_epochs = 40;
    let vq = train_vq(&base, &train, 32);
    let mut ok = true;
    let mut lines = Vec::new();
    for seed in 0..3u64 {
        let cfg = ExperimentConfig { seed, ..base.clone() };
        let (model, _) = fit_listener(&cfg, &vq, &train, &test);
        let curve = multi_sample_min_l2(&model, &vq, &test, 8, 8, cfg.nucleus_p, seed).unwrap();
        ok &= curve.windows(2).all(|w| w[1] <= w[0]) && curve[7] < curve[0];
        lines.push(format!("seed {seed}: x=1 {:.3} x=8 {:.3}", curve[0], curve[7]));
    }
    outcome(ok, lines.join("; "))
}

fn c10_causality() -> Outcome {
    let cfg = desk();
    let lc = cfg.listener(6, 4, 4);
    let model = ListenerModel::new(lc.clone(), 3).unwrap();
    let tau = lc.tokens();
    let k = lc.predictor.codebook_size;
    let mut rng = RngStreams::new(10).stream("causality");
    let frames = lc.speaker.window_frames;
    let mut identical = 0;
    let mut perturbed = 0;
    for _ in 0..100 {
        let motion: Vec<f32> = (0..frames * 9).map(|_| rng.random_range(-1.0..1.0)).collect();
        let audio: Vec<f32> = (0..frames * 4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let len = rng.random_range(tau + 2..3 * tau);
        let tokens: Vec<usize> = (0..len).map(|_| rng.random_range(0..k)).collect();
        let i = rng.random_range(0..len);
        let hide = rng.random_range(0..=tau);
        let (past, mut visible) = history(&tokens, i, tau);
        visible[..hide].iter_mut().for_each(|v| *v = false);
        let base = model.predict_dist(&motion, &audio, &past, &visible).unwrap();

        let mut other = tokens.clone();
        for t in other.iter_mut().skip(i) {
            *t = rng.random_range(0..k);
        }
        let (mut past2, _) = history(&other, i, tau);
        for (j, p) in past2.iter_mut().enumerate() {
            if !visible[j] {
                *p = rng.random_range(0..k);
            }
        }
        perturbed += usize::from(past2 != past || other != tokens);
        let again = model.predict_dist(&motion, &audio, &past2, &visible).unwrap();
        identical += usize::from(base.iter().zip(&again).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
    outcome(identical == 100, format!("{identical}/100 distributions bit-identical ({perturbed} cases changed some input token)"))
}

fn c11_no_drift() -> Outcome {
    let t = single_mode_model();
    let dim = t.train[0].listener_motion.frame_dim();
    let (mut lo, mut hi) = (vec![f32::INFINITY; dim], vec![f32::NEG_INFINITY; dim]);
    for s in &t.train {
        for f in 0..s.len() {
            for (c, &v) in s.listener_motion.row(f).iter().enumerate() {
                lo[c] = lo[c].min(v);
                hi[c] = hi[c].max(v);
            }
        }
    }
    let streams = RngStreams::new(11);
    let mut worst = 0.0f64;
    let mut inside = 0;
    for seed in 0..20u64 {
        let s = &t.test[seed as usize % t.test.len()];
        let mut rng = streams.substream("drift", seed);
        let r = rollout(&t.model, &t.vq, &s.speaker_motion, &s.speaker_audio, 512 / t.vq.window(), t.cfg.nucleus_p, &mut rng).unwrap();
        let mut seed_worst = 0.0f64;
        for f in 0..r.motion.len() {
            for (c, &v) in r.motion.row(f).iter().enumerate() {
                let mid = (lo[c] + hi[c]) as f64 / 2.0;
                let half = ((hi[c] - lo[c]) as f64 / 2.0).max(1e-12);
                seed_worst = seed_worst.max((v as f64 - mid).abs() / half);
            }
        }
        worst = worst.max(seed_worst);
        inside += usize::from(seed_worst <= 10.0 && r.motion.len() == 512);
    }
    outcome(
        inside == 20,
        format!("{inside}/20 rollouts of 512 frames inside 10x the training range; worst excursion {worst:.2}x half-range"),
    )
}

fn c12_determinism() -> Outcome {
    let samples = synth(SynthConfig::default(), 0..4, 800);
    let ds = DyadDataset::new(samples, None).unwrap();
    let mut cfg = desk();
    cfg.vq_epochs = 4;
    cfg.vq_warmup_epochs = 2;
    cfg.predictor_epochs = 3;
    let methods = Baseline::ALL;
    let a = run_pipeline(&cfg, &ds, &methods).unwrap().to_json().unwrap();
    let b = run_pipeline(&cfg, &ds, &methods).unwrap().to_json().unwrap();
    outcome(a == b, format!("two runs, {} and {} report bytes, identical: {}", a.len(), b.len(), a == b))
}

fn c13_nucleus() -> Outcome {
    let mut rng = RngStreams::new(13).stream("nucleus");
    let k = 20;
    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.2..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let dist: Vec<f64> = raw.iter().map(|v| v / total).collect();
    let mut violations = 0;
    for p in [0.3, 0.6, 0.9] {
        let set = nucleus_set(&dist, p).unwrap();
        for _ in 0..10_000 {
            let i = nucleus_sample(&dist, p, &mut rng).unwrap();
            violations += usize::from(!set.contains(&i));
        }
    }
    let n = 10_000;
    let mut counts = vec![0usize; k];
    for _ in 0..n {
        counts[nucleus_sample(&dist, 1.0, &mut rng).unwrap()] += 1;
    }
    let chi2: f64 = counts
        .iter()
        .zip(&dist)
        .map(|(&c, &q)| {
            let e = q * n as f64;
            (c as f64 - e).powi(2) / e
        })
        .sum();
    // chi-square upper 1% point with 19 degrees of freedom
    let critical = 36.191;
    outcome(
        violations == 0 && chi2 < critical,
        format!("{violations} draws outside the nucleus in 30000; p=1 chi-square {chi2:.2} (1% critical {critical})"),
    )
}

type Criterion = (u32, &'static str, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 13] = [
        (1, "autodiff gradient suite", c1_gradients),
        (2, "quantization oracle", c2_quantize),
        (3, "VQ-VAE convergence", c3_vq_convergence),
        (4, "FD closed forms", c4_fd_closed_forms),
        (5, "metric anchors", c5_anchors),
        (6, "synthetic lag recovery", c6_lag_recovery),
        (7, "predictor learning", c7_predictor),
        (8, "ablation trend", c8_ablation),
        (9, "multimodality curve", c9_multimodality),
        (10, "causality and masking", c10_causality),
        (11, "no drift", c11_no_drift),
        (12, "pipeline determinism", c12_determinism),
        (13, "nucleus sampling", c13_nucleus),
    ];
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut unexpected = 0;
    let mut passed = 0;
    let mut ran = 0;
    for (n, name, run) in criteria {
        if !wanted.is_empty() && !wanted.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let o = run();
        let took = Duration::from_secs_f64(start.elapsed().as_secs_f64());
        ran += 1;
        let tag = if o.pass {
            passed += 1;
            "PASS"
        } else if KNOWN_UNMET.contains(&n) {
            "FAIL (known)"
        } else {
            unexpected += 1;
            "FAIL"
        };
        println!("criterion {n:>2} {tag}: {name}: {} [{:.1}s]", o.detail, took.as_secs_f64());
    }
    println!("acceptance: {passed}/{ran} criteria passed");
    if unexpected > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
