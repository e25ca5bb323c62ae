//! Central finite-difference oracle for tape gradients (f64).

use dyad_core::autodiff::{Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-3;
pub const TOLERANCE: f64 = 1e-3;
/// Gradients smaller than this are compared absolutely.
const FLOOR: f64 = 1e-2;

pub struct Input {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Input {
    pub fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
        }
    }

    /// Well-separated values (a shuffled ramp) so max/relu kinks stay
    /// further than the FD step from every input.
    pub fn separated(rng: &mut ChaCha8Rng, shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        let mut data: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64 * 2.0 - 1.0).collect();
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            data.swap(i, j);
        }
        Self { shape: shape.to_vec(), data }
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

/// Worst relative error between tape gradients and central differences
/// of `f` with respect to every element of every input.
pub fn max_error<F>(inputs: &[Input], f: F) -> f64
where
    F: Fn(&[Tensor<f64>]) -> Tensor<f64>,
{
    let build = |vals: &[Vec<f64>], grad: bool| {
        let tape = Tape::<f64>::new();
        let leaves: Vec<Tensor<f64>> = inputs
            .iter()
            .zip(vals)
            .map(|(inp, v)| tape.leaf(&inp.shape, v.clone(), grad).unwrap())
            .collect();
        let out = f(&leaves);
        (leaves, out)
    };
    let base: Vec<Vec<f64>> = inputs.iter().map(|i| i.data.clone()).collect();
    let (leaves, out) = build(&base, true);
    out.backward().unwrap();
    let mut worst: f64 = 0.0;
    for (which, leaf) in leaves.iter().enumerate() {
        let analytic = leaf.grad().unwrap_or_else(|| vec![0.0; leaf.numel()]);
        for (e, &a) in analytic.iter().enumerate() {
            let mut plus = base.clone();
            plus[which][e] += STEP;
            let mut minus = base.clone();
            minus[which][e] -= STEP;
            let fp = build(&plus, false).1.item();
            let fm = build(&minus, false).1.item();
            let numeric = (fp - fm) / (2.0 * STEP);
            worst = worst.max(relative_error(a, numeric));
        }
    }
    worst
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Reduces any tensor to a scalar with a fixed random linear functional, so
/// every output element contributes a distinct weight to the gradient.
pub fn project(t: &Tensor<f64>, seed: u64) -> Tensor<f64> {
    let mut r = rng(seed ^ 0xabc);
    let w: Vec<f64> = (0..t.numel()).map(|_| r.random_range(-1.0..1.0)).collect();
    let c = t.tape().constant(&t.shape(), w).unwrap();
    t.mul(&c).unwrap().sum().unwrap()
}

type Case = (&'static str, fn(&mut ChaCha8Rng) -> Vec<Input>, fn(&[Tensor<f64>], u64) -> Tensor<f64>);

/// Every differentiable op (and the attention composite) with an input
/// generator and a scalarizing forward.
pub fn cases() -> Vec<Case> {
    use dyad_core::autodiff::{concat_cols, concat_rows};
    use dyad_core::nn::attention;
    vec![
        ("add", |r| vec![Input::random(r, &[3, 4]), Input::random(r, &[3, 4])], |x, s| project(&x[0].add(&x[1]).unwrap(), s)),
        ("sub", |r| vec![Input::random(r, &[3, 4]), Input::random(r, &[3, 4])], |x, s| project(&x[0].sub(&x[1]).unwrap(), s)),
        ("mul", |r| vec![Input::random(r, &[3, 4]), Input::random(r, &[3, 4])], |x, s| project(&x[0].mul(&x[1]).unwrap(), s)),
        ("add_row", |r| vec![Input::random(r, &[3, 4]), Input::random(r, &[4])], |x, s| project(&x[0].add_row(&x[1]).unwrap(), s)),
        ("mul_row", |r| vec![Input::random(r, &[3, 4]), Input::random(r, &[4])], |x, s| project(&x[0].mul_row(&x[1]).unwrap(), s)),
        ("scale", |r| vec![Input::random(r, &[5])], |x, s| project(&x[0].scale(-1.7).unwrap().add_scalar(0.3).unwrap(), s)),
        ("matmul", |r| vec![Input::random(r, &[2, 3]), Input::random(r, &[3, 4])], |x, s| project(&x[0].matmul(&x[1]).unwrap(), s)),
        ("transpose", |r| vec![Input::random(r, &[2, 5])], |x, s| project(&x[0].transpose().unwrap(), s)),
        ("reshape", |r| vec![Input::random(r, &[2, 6])], |x, s| project(&x[0].reshape(&[3, 4]).unwrap(), s)),
        ("softmax", |r| vec![Input::random(r, &[3, 5])], |x, s| project(&x[0].scale(2.0).unwrap().softmax().unwrap(), s)),
        ("layer_norm", |r| vec![Input::random(r, &[3, 6])], |x, s| project(&x[0].layer_norm(1e-5).unwrap(), s)),
        ("relu", |r| vec![Input::separated(r, &[4, 5])], |x, s| project(&x[0].relu().unwrap(), s)),
        ("gelu", |r| vec![Input::random(r, &[4, 5])], |x, s| project(&x[0].scale(2.0).unwrap().gelu().unwrap(), s)),
        ("conv1d", |r| vec![Input::random(r, &[7, 3]), Input::random(r, &[5, 3, 2])], |x, s| project(&x[0].conv1d(&x[1], 1, 2).unwrap(), s)),
        ("conv1d_strided", |r| vec![Input::random(r, &[9, 2]), Input::random(r, &[3, 2, 3])], |x, s| project(&x[0].conv1d(&x[1], 2, 1).unwrap(), s)),
        ("max_pool", |r| vec![Input::separated(r, &[8, 3])], |x, s| project(&x[0].max_pool(2).unwrap(), s)),
        ("embedding", |r| vec![Input::random(r, &[5, 3])], |x, s| project(&x[0].embedding(&[4, 0, 4, 2]).unwrap(), s)),
        ("concat_rows", |r| vec![Input::random(r, &[2, 3]), Input::random(r, &[1, 3])], |x, s| project(&concat_rows(&[x[0].clone(), x[1].clone()]).unwrap(), s)),
        ("concat_cols", |r| vec![Input::random(r, &[2, 3]), Input::random(r, &[2, 1])], |x, s| project(&concat_cols(&[x[0].clone(), x[1].clone()]).unwrap(), s)),
        ("slice_rows", |r| vec![Input::random(r, &[5, 2])], |x, s| project(&x[0].slice_rows(1, 4).unwrap(), s)),
        ("slice_cols", |r| vec![Input::random(r, &[2, 5])], |x, s| project(&x[0].slice_cols(2, 5).unwrap(), s)),
        ("repeat_rows", |r| vec![Input::random(r, &[3, 2])], |x, s| project(&x[0].repeat_rows(3).unwrap(), s)),
        ("sum", |r| vec![Input::random(r, &[4])], |x, _| x[0].mul(&x[0]).unwrap().sum().unwrap()),
        ("mean", |r| vec![Input::random(r, &[2, 3])], |x, _| x[0].mul(&x[0]).unwrap().mean().unwrap()),
        ("cross_entropy", |r| vec![Input::random(r, &[3, 6])], |x, _| {
            x[0].scale(3.0).unwrap().cross_entropy(&[1, 5, 0], Some(&[1.0, 0.5, 2.0])).unwrap()
        }),
        ("attention", |r| vec![Input::random(r, &[3, 4]), Input::random(r, &[5, 4]), Input::random(r, &[5, 4])], |x, s| {
            let (out, _) = attention(&x[0], &x[1], &x[2], 2, Some(&[true, true, false, true, true])).unwrap();
            project(&out, s)
        }),
        ("mlp", |r| vec![Input::random(r, &[4, 3]), Input::random(r, &[3, 5]), Input::random(r, &[5]), Input::random(r, &[5, 2]), Input::random(r, &[2])], |x, s| {
            let h = x[0].matmul(&x[1]).unwrap().add_row(&x[2]).unwrap().gelu().unwrap();
            let h = h.layer_norm(1e-5).unwrap();
            project(&h.matmul(&x[3]).unwrap().add_row(&x[4]).unwrap(), s)
        }),
    ]
}
