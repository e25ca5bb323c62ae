//! Layers built on the tape. Each layer only remembers parameter names;
//! values live in a [`ParameterStore`] and are bound per forward pass.

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::autodiff::{concat_cols, Binder, Param, ParameterStore, Scalar, Tensor, MASK_LOGIT};
use crate::error::{Error, Result};
use crate::rng::StreamRng;

const LN_EPS: f32 = 1e-5;

fn uniform(rng: &mut StreamRng, n: usize, bound: f32) -> Vec<f32> {
    let d = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    (0..n).map(|_| d.sample(rng)).collect()
}

fn normal(rng: &mut StreamRng, n: usize, std: f32) -> Vec<f32> {
    let d = Normal::new(0.0, std).expect("finite std");
    (0..n).map(|_| d.sample(rng)).collect()
}

fn add_param(store: &mut ParameterStore, name: &str, shape: &[usize], data: Vec<f32>) -> Result<String> {
    store.insert(name, Param::new(shape, data)?)?;
    Ok(name.to_string())
}

#[derive(Debug, Clone)]
pub struct Linear {
    w: String,
    b: String,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new(store: &mut ParameterStore, rng: &mut StreamRng, name: &str, d_in: usize, d_out: usize) -> Result<Self> {
        let bound = 1.0 / (d_in as f32).sqrt();
        Self::with_weights(store, name, d_in, d_out, uniform(rng, d_in * d_out, bound))
    }

    /// Gaussian-initialized weights with the given std; used for output heads
    /// that should start near zero.
    pub fn small(store: &mut ParameterStore, rng: &mut StreamRng, name: &str, d_in: usize, d_out: usize, std: f32) -> Result<Self> {
        Self::with_weights(store, name, d_in, d_out, normal(rng, d_in * d_out, std))
    }

    fn with_weights(store: &mut ParameterStore, name: &str, d_in: usize, d_out: usize, w: Vec<f32>) -> Result<Self> {
        Ok(Self {
            w: add_param(store, &format!("{name}.weight"), &[d_in, d_out], w)?,
            b: add_param(store, &format!("{name}.bias"), &[d_out], vec![0.0; d_out])?,
            d_in,
            d_out,
        })
    }

    pub fn forward(&self, p: &Binder, x: &Tensor) -> Result<Tensor> {
        x.matmul(&p.get(&self.w)?)?.add_row(&p.get(&self.b)?)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    g: String,
    b: String,
}

impl LayerNorm {
    pub fn new(store: &mut ParameterStore, name: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            g: add_param(store, &format!("{name}.gain"), &[dim], vec![1.0; dim])?,
            b: add_param(store, &format!("{name}.bias"), &[dim], vec![0.0; dim])?,
        })
    }

    pub fn forward(&self, p: &Binder, x: &Tensor) -> Result<Tensor> {
        x.layer_norm(LN_EPS)?.mul_row(&p.get(&self.g)?)?.add_row(&p.get(&self.b)?)
    }
}

/// Temporal convolution; weights are stored kernel-major `[k, C_in, C_out]`.
#[derive(Debug, Clone)]
pub struct Conv1d {
    w: String,
    b: String,
    pub stride: usize,
    pub pad: usize,
}

impl Conv1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParameterStore,
        rng: &mut StreamRng,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        let bound = 1.0 / ((c_in * kernel) as f32).sqrt();
        Ok(Self {
            w: add_param(store, &format!("{name}.weight"), &[kernel, c_in, c_out], uniform(rng, kernel * c_in * c_out, bound))?,
            b: add_param(store, &format!("{name}.bias"), &[c_out], vec![0.0; c_out])?,
            stride,
            pad,
        })
    }

    pub fn forward(&self, p: &Binder, x: &Tensor) -> Result<Tensor> {
        x.conv1d(&p.get(&self.w)?, self.stride, self.pad)?.add_row(&p.get(&self.b)?)
    }
}

/// Learned table of `max_len` position vectors.
#[derive(Debug, Clone)]
pub struct LearnedPositions {
    table: String,
    pub max_len: usize,
}

impl LearnedPositions {
    pub fn new(store: &mut ParameterStore, rng: &mut StreamRng, name: &str, max_len: usize, dim: usize) -> Result<Self> {
        Ok(Self {
            table: add_param(store, name, &[max_len, dim], normal(rng, max_len * dim, 0.02))?,
            max_len,
        })
    }

    /// Adds positions `0..len` to the rows of `x`.
    pub fn add_to(&self, p: &Binder, x: &Tensor) -> Result<Tensor> {
        let len = x.shape()[0];
        if len > self.max_len {
            return Err(Error::Range(format!(
                "sequence of {len} steps exceeds {} learned positions",
                self.max_len
            )));
        }
        x.add(&p.get(&self.table)?.slice_rows(0, len)?)
    }
}

/// Token table `[K, d]`.
#[derive(Debug, Clone)]
pub struct Embedding {
    table: String,
    pub count: usize,
}

impl Embedding {
    pub fn new(store: &mut ParameterStore, rng: &mut StreamRng, name: &str, count: usize, dim: usize, std: f32) -> Result<Self> {
        Ok(Self {
            table: add_param(store, name, &[count, dim], normal(rng, count * dim, std))?,
            count,
        })
    }

    pub fn name(&self) -> &str {
        &self.table
    }

    pub fn forward(&self, p: &Binder, idx: &[usize]) -> Result<Tensor> {
        p.get(&self.table)?.embedding(idx)
    }
}

/// Scaled dot-product attention split over `heads` column groups.
///
/// `key_visible[j] == false` hides key `j` from every query. Returns the
/// attended values and each head's attention matrix.
pub fn attention<T: Scalar>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    heads: usize,
    key_visible: Option<&[bool]>,
) -> Result<(Tensor<T>, Vec<Tensor<T>>)> {
    let (qs, ks, vs) = (q.shape(), k.shape(), v.shape());
    if qs.len() != 2 || ks.len() != 2 || vs.len() != 2 || qs[1] != ks[1] || ks[0] != vs[0] {
        return Err(Error::shape("attention", &qs, &ks));
    }
    let dim = qs[1];
    if heads == 0 || dim % heads != 0 || vs[1] % heads != 0 {
        return Err(Error::shape("attention", &qs, &[heads]));
    }
    let (n_q, n_k) = (qs[0], ks[0]);
    let mask = match key_visible {
        Some(vis) => {
            if vis.len() != n_k {
                return Err(Error::shape("attention mask", &[vis.len()], &[n_k]));
            }
            let row: Vec<T> = vis.iter().map(|&b| if b { T::zero() } else { T::of(MASK_LOGIT) }).collect();
            let data: Vec<T> = (0..n_q).flat_map(|_| row.iter().copied()).collect();
            Some(q.tape().constant(&[n_q, n_k], data)?)
        }
        None => None,
    };
    let dh = dim / heads;
    let dv = vs[1] / heads;
    let scale = T::of(1.0 / (dh as f64).sqrt());
    let kt = k.transpose()?;
    let mut outs = Vec::with_capacity(heads);
    let mut weights = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = q.slice_cols(h * dh, (h + 1) * dh)?;
        let kh = kt.slice_rows(h * dh, (h + 1) * dh)?;
        let vh = v.slice_cols(h * dv, (h + 1) * dv)?;
        let mut logits = qh.matmul(&kh)?.scale(scale)?;
        if let Some(m) = &mask {
            logits = logits.add(m)?;
        }
        let w = logits.softmax()?;
        outs.push(w.matmul(&vh)?);
        weights.push(w);
    }
    let out = if outs.len() == 1 { outs.pop().expect("one head") } else { concat_cols(&outs)? };
    Ok((out, weights))
}

#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new(store: &mut ParameterStore, rng: &mut StreamRng, name: &str, dim: usize, heads: usize) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::Config(format!("hidden size {dim} not divisible by {heads} heads")));
        }
        Ok(Self {
            q: Linear::new(store, rng, &format!("{name}.q"), dim, dim)?,
            k: Linear::new(store, rng, &format!("{name}.k"), dim, dim)?,
            v: Linear::new(store, rng, &format!("{name}.v"), dim, dim)?,
            o: Linear::new(store, rng, &format!("{name}.o"), dim, dim)?,
            heads,
        })
    }

    pub fn forward(&self, p: &Binder, query_src: &Tensor, kv_src: &Tensor, key_visible: Option<&[bool]>) -> Result<Tensor> {
        let q = self.q.forward(p, query_src)?;
        let k = self.k.forward(p, kv_src)?;
        let v = self.v.forward(p, kv_src)?;
        let (out, _) = attention(&q, &k, &v, self.heads, key_visible)?;
        self.o.forward(p, &out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TransformerDims {
    pub hidden: usize,
    pub heads: usize,
    pub layers: usize,
    pub ff_mult: usize,
}

/// Pre-norm transformer block. In cross mode the queries come from a
/// separate, fixed query stream while keys/values come from the running
/// residual stream.
#[derive(Debug, Clone)]
pub struct Block {
    ln_kv: LayerNorm,
    ln_q: Option<LayerNorm>,
    attn: MultiHeadAttention,
    ln_ff: LayerNorm,
    ff_in: Linear,
    ff_out: Linear,
}

impl Block {
    pub fn new(store: &mut ParameterStore, rng: &mut StreamRng, name: &str, dims: TransformerDims, cross: bool) -> Result<Self> {
        let h = dims.hidden;
        Ok(Self {
            ln_kv: LayerNorm::new(store, &format!("{name}.ln_kv"), h)?,
            ln_q: if cross { Some(LayerNorm::new(store, &format!("{name}.ln_q"), h)?) } else { None },
            attn: MultiHeadAttention::new(store, rng, &format!("{name}.attn"), h, dims.heads)?,
            ln_ff: LayerNorm::new(store, &format!("{name}.ln_ff"), h)?,
            ff_in: Linear::new(store, rng, &format!("{name}.ff_in"), h, h * dims.ff_mult)?,
            ff_out: Linear::new(store, rng, &format!("{name}.ff_out"), h * dims.ff_mult, h)?,
        })
    }

    pub fn forward(&self, p: &Binder, x: &Tensor, query: Option<&Tensor>, key_visible: Option<&[bool]>) -> Result<Tensor> {
        let kv = self.ln_kv.forward(p, x)?;
        let q = match (&self.ln_q, query) {
            (Some(ln), Some(raw)) => ln.forward(p, raw)?,
            (Some(_), None) => return Err(Error::contract("cross-attention block needs a query stream")),
            (None, _) => kv.clone(),
        };
        let x = x.add(&self.attn.forward(p, &q, &kv, key_visible)?)?;
        let h = self.ln_ff.forward(p, &x)?;
        let h = self.ff_out.forward(p, &self.ff_in.forward(p, &h)?.gelu()?)?;
        x.add(&h)
    }
}

#[derive(Debug, Clone)]
pub struct Transformer {
    blocks: Vec<Block>,
    ln_out: LayerNorm,
    pub dims: TransformerDims,
}

impl Transformer {
    pub fn new(store: &mut ParameterStore, rng: &mut StreamRng, name: &str, dims: TransformerDims, cross: bool) -> Result<Self> {
        let blocks = (0..dims.layers)
            .map(|i| Block::new(store, rng, &format!("{name}.block{i}"), dims, cross))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            blocks,
            ln_out: LayerNorm::new(store, &format!("{name}.ln_out"), dims.hidden)?,
            dims,
        })
    }

    pub fn forward(&self, p: &Binder, x: &Tensor, query: Option<&Tensor>, key_visible: Option<&[bool]>) -> Result<Tensor> {
        let mut x = x.clone();
        for b in &self.blocks {
            x = b.forward(p, &x, query, key_visible)?;
        }
        self.ln_out.forward(p, &x)
    }
}

/// Draws a uniformly random index below `n`; small helper shared by samplers.
pub fn uniform_index(rng: &mut StreamRng, n: usize) -> usize {
    rng.random_range(0..n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use crate::rng::RngStreams;

    #[test]
    fn zero_logits_average_values() {
        let tape = Tape::new();
        let q = tape.zeros(&[3, 4]);
        let k = tape.zeros(&[5, 4]);
        let vdata: Vec<f32> = (0..20).map(|i| i as f32).collect();
        let v = tape.leaf(&[5, 4], vdata.clone(), false).unwrap();
        let (out, w) = attention(&q, &k, &v, 1, None).unwrap();
        let mean: Vec<f32> = (0..4).map(|c| (0..5).map(|r| vdata[r * 4 + c]).sum::<f32>() / 5.0).collect();
        for row in out.value().chunks(4) {
            for (a, b) in row.iter().zip(&mean) {
                assert!((a - b).abs() < 1e-5);
            }
        }
        for row in w[0].value().chunks(5) {
            assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn large_logit_selects_one_value_row() {
        let tape = Tape::new();
        // query aligned with key 2 only, scaled so the softmax saturates
        let q = tape.leaf(&[1, 2], vec![0.0, 400.0], false).unwrap();
        let k = tape.leaf(&[3, 2], vec![0.0, 0.0, 0.0, -1.0, 0.0, 1.0], false).unwrap();
        let v = tape.leaf(&[3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], false).unwrap();
        let (out, _) = attention(&q, &k, &v, 1, None).unwrap();
        assert_eq!(out.value(), vec![5.0, 6.0]);
    }

    #[test]
    fn hidden_keys_get_zero_weight() {
        let tape = Tape::new();
        let q = tape.leaf(&[2, 2], vec![0.1, 0.2, 0.3, 0.4], false).unwrap();
        let k = tape.leaf(&[3, 2], vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0], false).unwrap();
        let v = tape.leaf(&[3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], false).unwrap();
        let (_, w) = attention(&q, &k, &v, 2, Some(&[true, false, true])).unwrap();
        for head in w {
            for row in head.value().chunks(3) {
                assert_eq!(row[1], 0.0);
                assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn transformer_preserves_shape() {
        let mut store = ParameterStore::new(0);
        let mut rng = RngStreams::new(0).stream("init");
        let dims = TransformerDims { hidden: 8, heads: 2, layers: 2, ff_mult: 2 };
        let tf = Transformer::new(&mut store, &mut rng, "tf", dims, false).unwrap();
        let tape = Tape::new();
        let p = Binder::new(&tape, &store, true);
        let x = tape.leaf(&[5, 8], (0..40).map(|i| (i as f32 * 0.1).sin()).collect(), false).unwrap();
        let y = tf.forward(&p, &x, None, None).unwrap();
        assert_eq!(y.shape(), vec![5, 8]);
    }
}
