use dyad_core::baselines::{
    codebook_random_walk, delayed_mirror, median_baseline, mirror, nn_motion, random_baseline, TrainBank,
};
use dyad_core::data::{AudioFeatureSequence, DyadSample, MotionSequence};
use dyad_core::rng::RngStreams;
use dyad_core::vqvae::{VqVae, VqVaeConfig};
use proptest::prelude::*;
use rand::Rng;

const EXPR: usize = 2;
const DIM: usize = EXPR + 3;

fn random_motion(rng: &mut impl Rng, len: usize) -> MotionSequence {
    MotionSequence::new(EXPR, 30.0, (0..len * DIM).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn random_bank(n: usize, window: usize, seed: u64) -> TrainBank {
    let mut rng = RngStreams::new(seed).stream("bank");
    let entries = (0..n)
        .map(|i| {
            let audio = AudioFeatureSequence::new(4, 4, (0..window * 16).map(|_| rng.random_range(-1.0..1.0)).collect())
                .unwrap();
            DyadSample::new(format!("w{i}"), random_motion(&mut rng, window), audio, random_motion(&mut rng, window))
                .unwrap()
        })
        .collect();
    TrainBank::new(entries).unwrap()
}

fn motion(len: usize) -> impl Strategy<Value = MotionSequence> {
    prop::collection::vec(-1.0f32..1.0, len * DIM).prop_map(|d| MotionSequence::new(EXPR, 30.0, d).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn zero_delay_is_plain_mirror(seq in motion(25), radius in 0usize..5) {
        prop_assert_eq!(delayed_mirror(&seq, 0, radius).unwrap(), mirror(&seq, radius).unwrap());
    }

    #[test]
    fn delay_shifts_the_mirror(seq in motion(30), delay in 1usize..10) {
        let m = mirror(&seq, 3).unwrap();
        let d = delayed_mirror(&seq, delay, 3).unwrap();
        for t in 0..seq.len() {
            prop_assert_eq!(d.row(t), m.row(t.saturating_sub(delay)));
        }
    }

    #[test]
    fn mirror_of_constant_is_constant(frame in prop::collection::vec(-1.0f32..1.0, DIM), len in 1usize..12) {
        let seq = MotionSequence::new(EXPR, 30.0, frame.repeat(len)).unwrap();
        let m = mirror(&seq, 3).unwrap();
        for t in 0..len {
            for (a, b) in m.row(t).iter().zip(&frame) {
                prop_assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn bank_baselines_return_verbatim_windows(seed in 0u64..1000) {
        let bank = random_bank(12, 8, seed);
        let mut rng = RngStreams::new(seed).stream("query");
        let out = random_baseline(&bank, &mut rng).unwrap();
        prop_assert!((0..bank.len()).any(|i| bank.listener(i) == &out));
        let query = random_motion(&mut rng, 8);
        let nn = nn_motion(&bank, &query).unwrap();
        prop_assert!((0..bank.len()).any(|i| bank.listener(i) == &nn));
    }
}

#[test]
fn nn_motion_matches_exhaustive_search() {
    let bank = random_bank(500, 6, 3);
    let mut rng = RngStreams::new(4).stream("queries");
    for _ in 0..50 {
        let q = random_motion(&mut rng, 6);
        let best = (0..bank.len())
            .min_by(|&a, &b| {
                let d = |i: usize| -> f64 {
                    bank.entries()[i]
                        .speaker_motion
                        .as_slice()
                        .iter()
                        .zip(q.as_slice())
                        .map(|(x, y)| ((x - y) as f64).powi(2))
                        .sum()
                };
                d(a).total_cmp(&d(b))
            })
            .unwrap();
        assert_eq!(&nn_motion(&bank, &q).unwrap(), bank.listener(best));
    }
}

#[test]
fn exact_match_is_retrieved() {
    let bank = random_bank(50, 6, 5);
    let q = bank.entries()[17].speaker_motion.clone();
    assert_eq!(&nn_motion(&bank, &q).unwrap(), bank.listener(17));
}

#[test]
fn random_baseline_is_uniform_over_the_bank() {
    let bank = random_bank(10, 4, 6);
    let mut rng = RngStreams::new(7).stream("uniform");
    let n = 10_000;
    let mut counts = [0usize; 10];
    for _ in 0..n {
        let out = random_baseline(&bank, &mut rng).unwrap();
        counts[(0..10).find(|&i| bank.listener(i) == &out).unwrap()] += 1;
    }
    let e = n as f64 / 10.0;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
    // 1% critical value for 9 degrees of freedom
    assert!(chi2 < 21.666, "{chi2} {counts:?}");
}

#[test]
fn median_matches_sorted_column_oracle() {
    for (n, seed) in [(5, 1), (6, 2)] {
        let bank = random_bank(n, 3, seed);
        let med = median_baseline(&bank).unwrap();
        for c in 0..DIM {
            let mut col: Vec<f32> = (0..n).flat_map(|i| (0..3).map(move |t| (i, t))).map(|(i, t)| bank.listener(i).row(t)[c]).collect();
            col.sort_by(f32::total_cmp);
            let m = col.len();
            let want = if m % 2 == 1 { col[m / 2] } else { ((col[m / 2 - 1] as f64 + col[m / 2] as f64) / 2.0) as f32 };
            for t in 0..3 {
                assert_eq!(med.row(t)[c], want);
            }
        }
    }
}

#[test]
fn random_walk_tokens_are_uniform_and_decode() {
    let cfg = VqVaeConfig {
        expression_dim: EXPR,
        downsample_layers: 2,
        conv_channels: 4,
        hidden: 8,
        heads: 2,
        layers: 1,
        ff_mult: 1,
        codebook_size: 8,
        latent_dim: 4,
        max_tokens: 4,
        ..VqVaeConfig::default()
    };
    let mut vq = VqVae::new(cfg, 0).unwrap();
    let mut rng = RngStreams::new(8).stream("walk");
    assert!(codebook_random_walk(&vq, 4, &mut rng).is_err());
    vq.freeze();
    let (tokens, motion) = codebook_random_walk(&vq, 4000, &mut rng).unwrap();
    assert_eq!(motion.len(), 4000 * vq.window());
    let mut counts = [0usize; 8];
    tokens.iter().for_each(|&t| counts[t] += 1);
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - 500.0).powi(2) / 500.0).sum();
    // 1% critical value for 7 degrees of freedom
    assert!(chi2 < 18.475, "{chi2}");
}
