//! A small transformer encoder that maps one encoded `(error, candidate)`
//! pair to one real score.
//!
//! Architecture (post-LayerNorm, as in BERT):
//!
//! ```text
//! x   = LN(token_emb[id] + segment_emb[seg] + shared_emb[flag] + sinusoid[pos])
//! for each layer:
//!     x = LN(x + MultiHeadAttention(x))
//!     x = LN(x + W2 · gelu(W1 · x))
//! score = head_w · x[0] + head_b          (x[0] is the start marker)
//! ```
//!
//! `flag` marks words present in both segments (see
//! [`TokenSequence::shared`]); its table exists only when
//! [`EncoderConfig::shared_word_embedding`] is set. Positions are fixed sinusoids scaled by the initialization std. Key
//! projections carry no bias. All parameters live in one flat `f64`
//! buffer; gradients are computed by explicit reverse-mode passes over
//! cached activations.

use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::kv::KeyValues;
use crate::tokenizer::TokenSequence;
use crate::{Error, Result};

pub const MAX_TOKENS: usize = 512;
const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncoderConfig {
    pub vocabulary_size: usize,
    pub layer_count: usize,
    pub hidden_width: usize,
    pub attention_heads: usize,
    pub ffn_width: usize,
    pub max_tokens: usize,
    /// Adds a learned embedding for the per-token shared-word flag.
    pub shared_word_embedding: bool,
}

impl EncoderConfig {
    /// Desk-scale configuration that trains on a CPU in minutes.
    pub fn tiny(vocabulary_size: usize) -> Self {
        Self {
            vocabulary_size,
            layer_count: 2,
            hidden_width: 32,
            attention_heads: 2,
            ffn_width: 64,
            max_tokens: MAX_TOKENS,
            shared_word_embedding: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(m));
        if self.max_tokens != MAX_TOKENS {
            return bad(format!("max_tokens must be {MAX_TOKENS}, got {}", self.max_tokens));
        }
        if self.vocabulary_size < 5 {
            return bad(format!("vocabulary_size {} too small", self.vocabulary_size));
        }
        if self.layer_count == 0 || self.hidden_width == 0 || self.ffn_width == 0 {
            return bad("layer_count, hidden_width and ffn_width must be positive".into());
        }
        if self.attention_heads == 0 || !self.hidden_width.is_multiple_of(self.attention_heads) {
            return bad(format!(
                "hidden_width {} not divisible by attention_heads {}",
                self.hidden_width, self.attention_heads
            ));
        }
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        Layout::new(self).total
    }

    pub fn to_kv(&self, kv: &mut KeyValues) {
        kv.set("vocabulary_size", self.vocabulary_size)
            .set("layer_count", self.layer_count)
            .set("hidden_width", self.hidden_width)
            .set("attention_heads", self.attention_heads)
            .set("ffn_width", self.ffn_width)
            .set("max_tokens", self.max_tokens)
            .set("shared_word_embedding", self.shared_word_embedding)
            .set("head_outputs", 1);
    }

    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let get = |k: &str| -> Result<usize> {
            kv.parse_value(k)?
                .ok_or_else(|| Error::invalid(format!("missing key `{k}`")))
        };
        if kv.parse_value::<usize>("head_outputs")?.unwrap_or(1) != 1 {
            return Err(Error::invalid("head_outputs must be 1"));
        }
        let config = Self {
            vocabulary_size: get("vocabulary_size")?,
            layer_count: get("layer_count")?,
            hidden_width: get("hidden_width")?,
            attention_heads: get("attention_heads")?,
            ffn_width: get("ffn_width")?,
            max_tokens: get("max_tokens")?,
            shared_word_embedding: kv.parse_value("shared_word_embedding")?.unwrap_or(false),
        };
        config.validate()?;
        Ok(config)
    }
}

/// Initialization settings. Weights and embeddings are drawn from
/// `N(0, std²)`; LayerNorm gains start at 1 and all biases at 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncoderInit {
    pub seed: u64,
    pub std: f64,
}

impl Default for EncoderInit {
    fn default() -> Self {
        Self { seed: 0, std: 0.02 }
    }
}

#[derive(Debug, Clone)]
struct LayerLayout {
    wq: Range<usize>,
    bq: Range<usize>,
    wk: Range<usize>,
    wv: Range<usize>,
    bv: Range<usize>,
    wo: Range<usize>,
    bo: Range<usize>,
    ln1_g: Range<usize>,
    ln1_b: Range<usize>,
    w1: Range<usize>,
    b1: Range<usize>,
    w2: Range<usize>,
    b2: Range<usize>,
    ln2_g: Range<usize>,
    ln2_b: Range<usize>,
}

#[derive(Debug, Clone)]
struct Layout {
    token: Range<usize>,
    segment: Range<usize>,
    shared: Range<usize>,
    emb_g: Range<usize>,
    emb_b: Range<usize>,
    layers: Vec<LayerLayout>,
    head_w: Range<usize>,
    head_b: Range<usize>,
    total: usize,
}

impl Layout {
    fn new(c: &EncoderConfig) -> Self {
        let mut at = 0usize;
        let mut take = |n: usize| {
            let r = at..at + n;
            at += n;
            r
        };
        let (d, f) = (c.hidden_width, c.ffn_width);
        let token = take(c.vocabulary_size * d);
        let segment = take(2 * d);
        let shared = take(if c.shared_word_embedding { 2 * d } else { 0 });
        let emb_g = take(d);
        let emb_b = take(d);
        let layers = (0..c.layer_count)
            .map(|_| LayerLayout {
                wq: take(d * d),
                bq: take(d),
                wk: take(d * d),
                wv: take(d * d),
                bv: take(d),
                wo: take(d * d),
                bo: take(d),
                ln1_g: take(d),
                ln1_b: take(d),
                w1: take(d * f),
                b1: take(f),
                w2: take(f * d),
                b2: take(d),
                ln2_g: take(d),
                ln2_b: take(d),
            })
            .collect();
        let head_w = take(d);
        let head_b = take(1);
        Self {
            token,
            segment,
            shared,
            emb_g,
            emb_b,
            layers,
            head_w,
            head_b,
            total: at,
        }
    }

    /// Ranges holding LayerNorm gains (initialized to one).
    fn gains(&self) -> impl Iterator<Item = Range<usize>> + '_ {
        std::iter::once(self.emb_g.clone())
            .chain(self.layers.iter().flat_map(|l| [l.ln1_g.clone(), l.ln2_g.clone()]))
    }

    fn biases(&self) -> impl Iterator<Item = Range<usize>> + '_ {
        std::iter::once(self.emb_b.clone())
            .chain(self.layers.iter().flat_map(|l| {
                [
                    l.bq.clone(),
                    l.bv.clone(),
                    l.bo.clone(),
                    l.ln1_b.clone(),
                    l.b1.clone(),
                    l.b2.clone(),
                    l.ln2_b.clone(),
                ]
            }))
            .chain(std::iter::once(self.head_b.clone()))
    }
}

/// Encoder parameters plus the fixed positional table.
#[derive(Debug, Clone)]
pub struct Encoder {
    config: EncoderConfig,
    layout: Layout,
    params: Vec<f64>,
    positions: Vec<f64>,
    position_scale: f64,
}

impl Encoder {
    pub fn initialize(config: EncoderConfig, init: EncoderInit) -> Result<Self> {
        config.validate()?;
        if !(init.std.is_finite() && init.std > 0.0) {
            return Err(Error::invalid(format!("init std {} must be positive", init.std)));
        }
        let layout = Layout::new(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(init.seed);
        let normal = Normal::new(0.0, init.std).expect("std checked above");
        let mut params: Vec<f64> = (0..layout.total).map(|_| normal.sample(&mut rng)).collect();
        for r in layout.gains() {
            params[r].fill(1.0);
        }
        for r in layout.biases() {
            params[r].fill(0.0);
        }
        let positions = sinusoids(config.max_tokens, config.hidden_width, init.std);
        Ok(Self {
            config,
            layout,
            params,
            positions,
            position_scale: init.std,
        })
    }

    /// Rebuilds an encoder from a parameter blob. `position_scale` is the
    /// amplitude of the sinusoidal table (the init std used at creation).
    pub fn from_parameters(config: EncoderConfig, params: Vec<f64>, position_scale: f64) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        if params.len() != layout.total {
            return Err(Error::invalid(format!(
                "parameter blob holds {} values, config expects {}",
                params.len(),
                layout.total
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::invalid("parameter blob contains non-finite values"));
        }
        if !(position_scale.is_finite() && position_scale > 0.0) {
            return Err(Error::invalid(format!("position scale {position_scale} must be positive")));
        }
        let positions = sinusoids(config.max_tokens, config.hidden_width, position_scale);
        Ok(Self {
            config,
            layout,
            params,
            positions,
            position_scale,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn parameters(&self) -> &[f64] {
        &self.params
    }

    pub fn parameters_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn position_scale(&self) -> f64 {
        self.position_scale
    }

    /// Parameter range of the embedding row for token `id`.
    pub fn token_embedding_range(&self, id: u32) -> Range<usize> {
        let d = self.config.hidden_width;
        let start = self.layout.token.start + id as usize * d;
        start..start + d
    }

    pub fn score(&self, seq: &TokenSequence) -> f64 {
        self.forward(seq).0
    }

    /// Runs the encoder and keeps every activation needed by
    /// [`Encoder::backward`].
    pub fn forward(&self, seq: &TokenSequence) -> (f64, PairCache) {
        let c = &self.config;
        let (d, len) = (c.hidden_width, seq.len());
        assert!(len > 0 && len <= c.max_tokens, "sequence length {len} out of range");
        let p = &self.params;
        let lay = &self.layout;

        let mut x = vec![0.0; len * d];
        for (t, (&id, &seg)) in seq.ids.iter().zip(&seq.segments).enumerate() {
            let id = (id as usize).min(c.vocabulary_size - 1);
            let tok = &p[lay.token.start + id * d..][..d];
            let sg = &p[lay.segment.start + seg as usize * d..][..d];
            let pos = &self.positions[t * d..][..d];
            let row = &mut x[t * d..][..d];
            for j in 0..d {
                row[j] = tok[j] + sg[j] + pos[j];
            }
            if c.shared_word_embedding {
                let sh = &p[lay.shared.start + seq.shared[t] as usize * d..][..d];
                for j in 0..d {
                    row[j] += sh[j];
                }
            }
        }
        let (mut h, emb_ln) = layer_norm(&x, len, d, &p[lay.emb_g.clone()], &p[lay.emb_b.clone()]);

        let mut layers = Vec::with_capacity(c.layer_count);
        for ll in &lay.layers {
            let (out, cache) = self.layer_forward(ll, h, len);
            layers.push(cache);
            h = out;
        }
        let score = dot(&p[lay.head_w.clone()], &h[..d]) + p[lay.head_b.start];
        let cache = PairCache {
            ids: seq.ids.clone(),
            segments: seq.segments.clone(),
            shared: seq.shared.clone(),
            emb_ln,
            layers,
            cls: h[..d].to_vec(),
        };
        (score, cache)
    }

    fn layer_forward(&self, ll: &LayerLayout, input: Vec<f64>, len: usize) -> (Vec<f64>, LayerCache) {
        let c = &self.config;
        let p = &self.params;
        let (d, f, heads) = (c.hidden_width, c.ffn_width, c.attention_heads);
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();

        let q = affine(&input, len, d, d, &p[ll.wq.clone()], &p[ll.bq.clone()]);
        let k = affine(&input, len, d, d, &p[ll.wk.clone()], &[]);
        let v = affine(&input, len, d, d, &p[ll.wv.clone()], &p[ll.bv.clone()]);

        let mut probs = vec![0.0; heads * len * len];
        let mut ctx = vec![0.0; len * d];
        for hd in 0..heads {
            let ph = &mut probs[hd * len * len..][..len * len];
            // scores = q_h · k_hᵀ
            gemm(
                len, dh, len, scale,
                Mat::new(&q, hd * dh, d, 1),
                Mat::new(&k, hd * dh, 1, d),
                0.0,
                MatMut::new(ph, 0, len, 1),
            );
            for row in ph.chunks_exact_mut(len) {
                softmax_in_place(row);
            }
            // ctx_h = probs · v_h
            gemm(
                len, len, dh, 1.0,
                Mat::new(ph, 0, len, 1),
                Mat::new(&v, hd * dh, d, 1),
                0.0,
                MatMut::new(&mut ctx, hd * dh, d, 1),
            );
        }
        let mut r1 = affine(&ctx, len, d, d, &p[ll.wo.clone()], &p[ll.bo.clone()]);
        for (r, x) in r1.iter_mut().zip(&input) {
            *r += x;
        }
        let (h1, ln1) = layer_norm(&r1, len, d, &p[ll.ln1_g.clone()], &p[ll.ln1_b.clone()]);

        let u = affine(&h1, len, d, f, &p[ll.w1.clone()], &p[ll.b1.clone()]);
        let g: Vec<f64> = u.iter().map(|&x| gelu(x)).collect();
        let mut r2 = affine(&g, len, f, d, &p[ll.w2.clone()], &p[ll.b2.clone()]);
        for (r, x) in r2.iter_mut().zip(&h1) {
            *r += x;
        }
        let (out, ln2) = layer_norm(&r2, len, d, &p[ll.ln2_g.clone()], &p[ll.ln2_b.clone()]);
        let cache = LayerCache {
            input,
            q,
            k,
            v,
            probs,
            ctx,
            ln1,
            h1,
            u,
            g,
            ln2,
        };
        (out, cache)
    }

    /// Accumulates `dscore · ∂score/∂θ` into `grads`.
    pub fn backward(&self, cache: &PairCache, dscore: f64, grads: &mut [f64]) {
        assert_eq!(grads.len(), self.params.len());
        let c = &self.config;
        let lay = &self.layout;
        let p = &self.params;
        let d = c.hidden_width;
        let len = cache.ids.len();

        let head_w = &p[lay.head_w.clone()];
        for j in 0..d {
            grads[lay.head_w.start + j] += dscore * cache.cls[j];
        }
        grads[lay.head_b.start] += dscore;

        let mut dh = vec![0.0; len * d];
        for j in 0..d {
            dh[j] = dscore * head_w[j];
        }
        for (ll, lc) in lay.layers.iter().zip(&cache.layers).rev() {
            dh = self.layer_backward(ll, lc, &dh, len, grads);
        }

        let (g_range, b_range) = (lay.emb_g.clone(), lay.emb_b.clone());
        let dx = layer_norm_backward(&cache.emb_ln, &dh, len, d, &p[g_range.clone()], grads, g_range, b_range);
        for (t, (&id, &seg)) in cache.ids.iter().zip(&cache.segments).enumerate() {
            let id = (id as usize).min(c.vocabulary_size - 1);
            let row = &dx[t * d..][..d];
            let tok = lay.token.start + id * d;
            let sg = lay.segment.start + seg as usize * d;
            for j in 0..d {
                grads[tok + j] += row[j];
                grads[sg + j] += row[j];
            }
            if c.shared_word_embedding {
                let sh = lay.shared.start + cache.shared[t] as usize * d;
                for j in 0..d {
                    grads[sh + j] += row[j];
                }
            }
        }
    }

    fn layer_backward(
        &self,
        ll: &LayerLayout,
        lc: &LayerCache,
        dout: &[f64],
        len: usize,
        grads: &mut [f64],
    ) -> Vec<f64> {
        let c = &self.config;
        let p = &self.params;
        let (d, f, heads) = (c.hidden_width, c.ffn_width, c.attention_heads);
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();

        // out = LN2(h1 + ffn(h1))
        let dr2 = layer_norm_backward(&lc.ln2, dout, len, d, &p[ll.ln2_g.clone()], grads, ll.ln2_g.clone(), ll.ln2_b.clone());
        let mut dh1 = dr2.clone();
        let dg = affine_backward(&lc.g, &dr2, len, f, d, &p[ll.w2.clone()], grads, ll.w2.clone(), ll.b2.clone());
        let du: Vec<f64> = dg.iter().zip(&lc.u).map(|(g, &u)| g * gelu_grad(u)).collect();
        let dh1_ffn = affine_backward(&lc.h1, &du, len, d, f, &p[ll.w1.clone()], grads, ll.w1.clone(), ll.b1.clone());
        for (a, b) in dh1.iter_mut().zip(&dh1_ffn) {
            *a += b;
        }

        // h1 = LN1(input + attn(input))
        let dr1 = layer_norm_backward(&lc.ln1, &dh1, len, d, &p[ll.ln1_g.clone()], grads, ll.ln1_g.clone(), ll.ln1_b.clone());
        let mut dinput = dr1.clone();
        let dctx = affine_backward(&lc.ctx, &dr1, len, d, d, &p[ll.wo.clone()], grads, ll.wo.clone(), ll.bo.clone());

        let mut dq = vec![0.0; len * d];
        let mut dk = vec![0.0; len * d];
        let mut dv = vec![0.0; len * d];
        let mut dprobs = vec![0.0; len * len];
        for hd in 0..heads {
            let ph = &lc.probs[hd * len * len..][..len * len];
            // dprobs = dctx_h · v_hᵀ
            gemm(
                len, dh, len, 1.0,
                Mat::new(&dctx, hd * dh, d, 1),
                Mat::new(&lc.v, hd * dh, 1, d),
                0.0,
                MatMut::new(&mut dprobs, 0, len, 1),
            );
            // dv_h = probsᵀ · dctx_h
            gemm(
                len, len, dh, 1.0,
                Mat::new(ph, 0, 1, len),
                Mat::new(&dctx, hd * dh, d, 1),
                0.0,
                MatMut::new(&mut dv, hd * dh, d, 1),
            );
            // softmax backward, in place: dscores = P ⊙ (dP − Σ dP⊙P)
            for (drow, prow) in dprobs.chunks_exact_mut(len).zip(ph.chunks_exact(len)) {
                let s: f64 = drow.iter().zip(prow).map(|(a, b)| a * b).sum();
                for (dv, &pv) in drow.iter_mut().zip(prow) {
                    *dv = pv * (*dv - s);
                }
            }
            // dq_h = dscores · k_h · scale ; dk_h = dscoresᵀ · q_h · scale
            gemm(
                len, len, dh, scale,
                Mat::new(&dprobs, 0, len, 1),
                Mat::new(&lc.k, hd * dh, d, 1),
                0.0,
                MatMut::new(&mut dq, hd * dh, d, 1),
            );
            gemm(
                len, len, dh, scale,
                Mat::new(&dprobs, 0, 1, len),
                Mat::new(&lc.q, hd * dh, d, 1),
                0.0,
                MatMut::new(&mut dk, hd * dh, d, 1),
            );
        }
        for (dy, w, b) in [(&dq, &ll.wq, &ll.bq), (&dk, &ll.wk, &(0..0)), (&dv, &ll.wv, &ll.bv)] {
            let dx = affine_backward(&lc.input, dy, len, d, d, &p[w.clone()], grads, w.clone(), b.clone());
            for (a, b) in dinput.iter_mut().zip(&dx) {
                *a += b;
            }
        }
        dinput
    }
}

/// Activations of one forward pass.
#[derive(Debug, Clone)]
pub struct PairCache {
    ids: Vec<u32>,
    segments: Vec<u8>,
    shared: Vec<u8>,
    emb_ln: LnCache,
    layers: Vec<LayerCache>,
    cls: Vec<f64>,
}

#[derive(Debug, Clone)]
struct LayerCache {
    input: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    probs: Vec<f64>,
    ctx: Vec<f64>,
    ln1: LnCache,
    h1: Vec<f64>,
    u: Vec<f64>,
    g: Vec<f64>,
    ln2: LnCache,
}

#[derive(Debug, Clone)]
struct LnCache {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
}

fn sinusoids(max_tokens: usize, d: usize, scale: f64) -> Vec<f64> {
    let mut table = vec![0.0; max_tokens * d];
    for t in 0..max_tokens {
        for i in 0..d {
            let freq = 10000f64.powf(-((i / 2 * 2) as f64) / d as f64);
            let angle = t as f64 * freq;
            table[t * d + i] = scale * if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    table
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let inner = GELU_C * (x + 0.044715 * x * x * x);
    let t = inner.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

fn layer_norm(x: &[f64], rows: usize, d: usize, gain: &[f64], bias: &[f64]) -> (Vec<f64>, LnCache) {
    let mut out = vec![0.0; rows * d];
    let mut xhat = vec![0.0; rows * d];
    let mut inv_std = vec![0.0; rows];
    for r in 0..rows {
        let row = &x[r * d..][..d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let is = 1.0 / (var + LN_EPS).sqrt();
        inv_std[r] = is;
        for j in 0..d {
            let n = (row[j] - mean) * is;
            xhat[r * d + j] = n;
            out[r * d + j] = n * gain[j] + bias[j];
        }
    }
    (out, LnCache { xhat, inv_std })
}

#[allow(clippy::too_many_arguments)]
fn layer_norm_backward(
    cache: &LnCache,
    dy: &[f64],
    rows: usize,
    d: usize,
    gain: &[f64],
    grads: &mut [f64],
    gain_range: Range<usize>,
    bias_range: Range<usize>,
) -> Vec<f64> {
    let mut dx = vec![0.0; rows * d];
    let mut dxhat = vec![0.0; d];
    for r in 0..rows {
        let dyr = &dy[r * d..][..d];
        let xh = &cache.xhat[r * d..][..d];
        let mut mean_dxhat = 0.0;
        let mut mean_dxhat_xhat = 0.0;
        for j in 0..d {
            grads[gain_range.start + j] += dyr[j] * xh[j];
            grads[bias_range.start + j] += dyr[j];
            dxhat[j] = dyr[j] * gain[j];
            mean_dxhat += dxhat[j];
            mean_dxhat_xhat += dxhat[j] * xh[j];
        }
        mean_dxhat /= d as f64;
        mean_dxhat_xhat /= d as f64;
        let is = cache.inv_std[r];
        for j in 0..d {
            dx[r * d + j] = is * (dxhat[j] - mean_dxhat - xh[j] * mean_dxhat_xhat);
        }
    }
    dx
}

/// `x (rows×n_in) · w (n_in×n_out) + b`; an empty `b` means no bias.
fn affine(x: &[f64], rows: usize, n_in: usize, n_out: usize, w: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows * n_out);
    if b.is_empty() {
        out.resize(rows * n_out, 0.0);
    } else {
        for _ in 0..rows {
            out.extend_from_slice(b);
        }
    }
    gemm(
        rows, n_in, n_out, 1.0,
        Mat::new(x, 0, n_in, 1),
        Mat::new(w, 0, n_out, 1),
        1.0,
        MatMut::new(&mut out, 0, n_out, 1),
    );
    out
}

/// Backward of [`affine`]: accumulates weight and bias gradients and
/// returns the gradient with respect to `x`.
#[allow(clippy::too_many_arguments)]
fn affine_backward(
    x: &[f64],
    dy: &[f64],
    rows: usize,
    n_in: usize,
    n_out: usize,
    w: &[f64],
    grads: &mut [f64],
    w_range: Range<usize>,
    b_range: Range<usize>,
) -> Vec<f64> {
    // dW += xᵀ · dy
    gemm(
        n_in, rows, n_out, 1.0,
        Mat::new(x, 0, 1, n_in),
        Mat::new(dy, 0, n_out, 1),
        1.0,
        MatMut::new(&mut grads[w_range], 0, n_out, 1),
    );
    let db = &mut grads[b_range];
    for row in dy.chunks_exact(n_out) {
        for (g, v) in db.iter_mut().zip(row) {
            *g += v;
        }
    }
    let mut dx = vec![0.0; rows * n_in];
    gemm(
        rows, n_out, n_in, 1.0,
        Mat::new(dy, 0, n_out, 1),
        Mat::new(w, 0, 1, n_out),
        0.0,
        MatMut::new(&mut dx, 0, n_in, 1),
    );
    dx
}

/// Strided read-only matrix view: element `(i, j)` is at
/// `data[offset + i * rs + j * cs]`.
struct Mat<'a> {
    data: &'a [f64],
    offset: usize,
    rs: usize,
    cs: usize,
}

impl<'a> Mat<'a> {
    fn new(data: &'a [f64], offset: usize, rs: usize, cs: usize) -> Self {
        Self { data, offset, rs, cs }
    }

    fn check(&self, rows: usize, cols: usize) {
        if rows > 0 && cols > 0 {
            let last = self.offset + (rows - 1) * self.rs + (cols - 1) * self.cs;
            assert!(last < self.data.len(), "matrix view out of bounds");
        }
    }
}

struct MatMut<'a> {
    data: &'a mut [f64],
    offset: usize,
    rs: usize,
    cs: usize,
}

impl<'a> MatMut<'a> {
    fn new(data: &'a mut [f64], offset: usize, rs: usize, cs: usize) -> Self {
        Self { data, offset, rs, cs }
    }
}

/// `c = alpha · a (m×k) · b (k×n) + beta · c`.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, alpha: f64, a: Mat<'_>, b: Mat<'_>, beta: f64, c: MatMut<'_>) {
    a.check(m, k);
    b.check(k, n);
    if m > 0 && n > 0 {
        let last = c.offset + (m - 1) * c.rs + (n - 1) * c.cs;
        assert!(last < c.data.len(), "output view out of bounds");
    }
    // SAFETY: every view was bounds-checked for its logical shape above,
    // and the output never aliases an input (it is a distinct &mut).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr().add(a.offset),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr().add(b.offset),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.data.as_mut_ptr().add(c.offset),
            c.rs as isize,
            c.cs as isize,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::pair_from_ids;

    fn tiny() -> Encoder {
        let config = EncoderConfig {
            vocabulary_size: 12,
            layer_count: 2,
            hidden_width: 8,
            attention_heads: 2,
            ffn_width: 16,
            max_tokens: MAX_TOKENS,
            shared_word_embedding: true,
        };
        Encoder::initialize(config, EncoderInit { seed: 3, std: 0.5 }).unwrap()
    }

    #[test]
    fn gemm_matches_naive_product_with_transposes() {
        let a: Vec<f64> = (0..6).map(|v| v as f64).collect(); // 2x3
        let b: Vec<f64> = (0..12).map(|v| v as f64 * 0.5).collect(); // 3x4
        let mut c = vec![0.0; 8];
        gemm(2, 3, 4, 1.0, Mat::new(&a, 0, 3, 1), Mat::new(&b, 0, 4, 1), 0.0, MatMut::new(&mut c, 0, 4, 1));
        let mut naive = vec![0.0; 8];
        for i in 0..2 {
            for j in 0..4 {
                for t in 0..3 {
                    naive[i * 4 + j] += a[i * 3 + t] * b[t * 4 + j];
                }
            }
        }
        assert_eq!(c, naive);
        // aᵀ (3x2) · a (2x3): uses column strides as transpose
        let mut ata = vec![0.0; 9];
        gemm(3, 2, 3, 1.0, Mat::new(&a, 0, 1, 3), Mat::new(&a, 0, 3, 1), 0.0, MatMut::new(&mut ata, 0, 3, 1));
        assert_eq!(ata[0], 0.0 * 0.0 + 3.0 * 3.0);
        assert_eq!(ata[5], 1.0 * 2.0 + 4.0 * 5.0);
    }

    #[test]
    fn layout_covers_all_parameters() {
        let enc = tiny();
        let c = enc.config();
        let (d, f, v) = (c.hidden_width, c.ffn_width, c.vocabulary_size);
        let per_layer = 4 * d * d + 3 * d + 2 * 2 * d + d * f + f + f * d + d;
        assert_eq!(enc.parameters().len(), v * d + 2 * d + 2 * d + 2 * d + 2 * per_layer + d + 1);
        let plain = EncoderConfig {
            shared_word_embedding: false,
            ..c.clone()
        };
        assert_eq!(plain.parameter_count(), enc.parameters().len() - 2 * d);
    }

    #[test]
    fn gelu_gradient_matches_central_difference() {
        for &x in &[-3.0, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let numeric = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((numeric - gelu_grad(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn score_is_deterministic_and_finite() {
        let enc = tiny();
        let seq = pair_from_ids(vec![4, 5, 6], vec![7, 8], MAX_TOKENS);
        let a = enc.score(&seq);
        let b = enc.score(&seq);
        assert!(a.is_finite());
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn backward_matches_finite_differences_on_a_single_pair() {
        let enc = tiny();
        let seq = pair_from_ids(vec![4, 5, 6, 4], vec![7, 8, 5], MAX_TOKENS);
        let (_, cache) = enc.forward(&seq);
        let mut grads = vec![0.0; enc.parameters().len()];
        enc.backward(&cache, 1.0, &mut grads);
        let mut probe = enc.clone();
        let eps = 1e-5;
        let mut worst: f64 = 0.0;
        for i in (0..grads.len()).step_by(7) {
            let orig = probe.params[i];
            probe.params[i] = orig + eps;
            let up = probe.score(&seq);
            probe.params[i] = orig - eps;
            let down = probe.score(&seq);
            probe.params[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let denom = numeric.abs().max(grads[i].abs()).max(1e-6);
            worst = worst.max((numeric - grads[i]).abs() / denom);
        }
        assert!(worst < 1e-5, "worst relative error {worst}");
    }

    #[test]
    fn rejects_bad_configs_and_blobs() {
        let mut c = EncoderConfig::tiny(50);
        c.max_tokens = 256;
        assert!(c.validate().is_err());
        let mut c = EncoderConfig::tiny(50);
        c.attention_heads = 3;
        assert!(c.validate().is_err());
        let c = EncoderConfig::tiny(50);
        assert!(Encoder::from_parameters(c, vec![0.0; 3], 0.02).is_err());
    }

    #[test]
    fn config_round_trips_through_manifest() {
        let c = EncoderConfig::tiny(321);
        let mut kv = KeyValues::new();
        c.to_kv(&mut kv);
        assert_eq!(EncoderConfig::from_kv(&kv).unwrap(), c);
    }
}
