//! Reference forward pass: pre-norm residual blocks with rotary grouped-query
//! attention and a SwiGLU FFN, RMSNorm throughout.

use alloc::vec;
use alloc::vec::Vec;

use crate::checkpoint::{Checkpoint, LayerWeights};
use crate::tensor::{dot, Matrix};
use crate::{Error, Result};

/// Next-token probabilities over the current vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution {
    pub probs: Vec<f64>,
}

impl Distribution {
    /// Softmax with max subtraction.
    pub fn from_logits(logits: &[f32]) -> Self {
        let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
        let mut probs: Vec<f64> = logits.iter().map(|&z| libm::exp(z as f64 - max)).collect();
        let total: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|p| *p /= total);
        Self { probs }
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Highest-probability id; ties go to the lowest id.
    pub fn argmax(&self) -> u32 {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        best as u32
    }
}

/// Which layers of a checkpoint take part in a forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LayerSelection {
    #[default]
    All,
    /// Every layer except this one; equivalent to a pass over a checkpoint
    /// with that layer removed, without materialising the copy.
    Skip(usize),
}

impl LayerSelection {
    fn includes(self, layer: usize) -> bool {
        match self {
            LayerSelection::All => true,
            LayerSelection::Skip(s) => s != layer,
        }
    }
}

fn check_ids(ckpt: &Checkpoint, ids: &[u32]) -> Result<()> {
    if ids.is_empty() {
        return Err(Error::EmptySequence);
    }
    if ids.len() > ckpt.config.max_seq_len {
        return Err(Error::SequenceTooLong { len: ids.len(), max: ckpt.config.max_seq_len });
    }
    let vocab_size = ckpt.config.vocab_size;
    if let Some(&id) = ids.iter().find(|&&id| id as usize >= vocab_size) {
        return Err(Error::IdOutOfRange { id, vocab_size });
    }
    Ok(())
}

pub(crate) fn rms_norm(x: &[f32], weight: &[f32], eps: f32, out: &mut [f32]) {
    let mean_sq = x.iter().map(|v| v * v).sum::<f32>() / x.len() as f32;
    let inv = 1.0 / libm::sqrtf(mean_sq + eps);
    for ((o, &v), &w) in out.iter_mut().zip(x).zip(weight) {
        *o = v * inv * w;
    }
}

fn silu(x: f32) -> f32 {
    x / (1.0 + libm::expf(-x))
}

/// Rotates dimension pairs `(2i, 2i+1)` by `pos / theta^(2i / head_dim)`.
fn apply_rope(v: &mut [f32], pos: usize, theta: f64) {
    let hd = v.len();
    for i in 0..hd / 2 {
        let freq = libm::pow(theta, -((2 * i) as f64) / hd as f64);
        let angle = pos as f64 * freq;
        let (sin, cos) = (libm::sin(angle) as f32, libm::cos(angle) as f32);
        let (x, y) = (v[2 * i], v[2 * i + 1]);
        v[2 * i] = x * cos - y * sin;
        v[2 * i + 1] = x * sin + y * cos;
    }
}

fn add_bias(v: &mut [f32], bias: &Option<Vec<f32>>) {
    if let Some(b) = bias {
        v.iter_mut().zip(b).for_each(|(x, b)| *x += b);
    }
}

/// Applies one transformer block to the residual stream `h` (`T × d_model`) in place.
fn apply_layer(ckpt: &Checkpoint, layer: &LayerWeights, h: &mut Matrix) {
    let c = &ckpt.config;
    let (t_len, d) = (h.rows, c.d_model);
    let (hd, nh, nkv) = (c.head_dim, c.n_heads, c.n_kv_heads);
    let group = nh / nkv;
    let eps = c.rms_eps as f32;

    let mut x = vec![0.0f32; d];
    let mut q = Matrix::zeros(t_len, c.q_dim());
    let mut k = Matrix::zeros(t_len, c.kv_dim());
    let mut v = Matrix::zeros(t_len, c.kv_dim());
    for t in 0..t_len {
        rms_norm(h.row(t), &layer.attn_norm, eps, &mut x);
        layer.wq.vec_mul(&x, q.row_mut(t));
        layer.wk.vec_mul(&x, k.row_mut(t));
        layer.wv.vec_mul(&x, v.row_mut(t));
        add_bias(q.row_mut(t), &layer.bq);
        add_bias(k.row_mut(t), &layer.bk);
        add_bias(v.row_mut(t), &layer.bv);
        for head in 0..nh {
            apply_rope(&mut q.row_mut(t)[head * hd..(head + 1) * hd], t, c.rope_theta);
        }
        for head in 0..nkv {
            apply_rope(&mut k.row_mut(t)[head * hd..(head + 1) * hd], t, c.rope_theta);
        }
    }

    let scale = 1.0 / libm::sqrtf(hd as f32);
    let mut ctx = vec![0.0f32; c.q_dim()];
    let mut out = vec![0.0f32; d];
    let mut scores = vec![0.0f32; t_len];
    for t in 0..t_len {
        ctx.fill(0.0);
        for head in 0..nh {
            let kvh = head / group;
            let qh = &q.row(t)[head * hd..(head + 1) * hd];
            let mut max = f32::NEG_INFINITY;
            for (s, score) in scores[..=t].iter_mut().enumerate() {
                *score = dot(qh, &k.row(s)[kvh * hd..(kvh + 1) * hd]) * scale;
                max = max.max(*score);
            }
            let mut total = 0.0;
            for score in &mut scores[..=t] {
                *score = libm::expf(*score - max);
                total += *score;
            }
            let ch = &mut ctx[head * hd..(head + 1) * hd];
            for (s, score) in scores[..=t].iter().enumerate() {
                let w = score / total;
                for (o, &vv) in ch.iter_mut().zip(&v.row(s)[kvh * hd..(kvh + 1) * hd]) {
                    *o += w * vv;
                }
            }
        }
        layer.wo.vec_mul(&ctx, &mut out);
        h.row_mut(t).iter_mut().zip(&out).for_each(|(a, b)| *a += b);
    }

    let inter = layer.intermediate();
    let mut gate = vec![0.0f32; inter];
    let mut up = vec![0.0f32; inter];
    for t in 0..t_len {
        rms_norm(h.row(t), &layer.ffn_norm, eps, &mut x);
        layer.w_gate.vec_mul(&x, &mut gate);
        layer.w_up.vec_mul(&x, &mut up);
        gate.iter_mut().zip(&up).for_each(|(g, u)| *g = silu(*g) * u);
        layer.w_down.vec_mul(&gate, &mut out);
        h.row_mut(t).iter_mut().zip(&out).for_each(|(a, b)| *a += b);
    }
}

fn embed(ckpt: &Checkpoint, ids: &[u32]) -> Matrix {
    ckpt.embed.select_rows(&ids.iter().map(|&id| id as usize).collect::<Vec<_>>())
}

/// Residual stream entering each selected layer plus the final one:
/// `states[0]` is the embedding output and `states[i + 1]` leaves the i-th
/// selected layer.
pub fn residual_stream(ckpt: &Checkpoint, ids: &[u32], selection: LayerSelection) -> Result<Vec<Matrix>> {
    check_ids(ckpt, ids)?;
    let mut h = embed(ckpt, ids);
    let mut states = vec![h.clone()];
    for (l, layer) in ckpt.layers.iter().enumerate() {
        if selection.includes(l) {
            apply_layer(ckpt, layer, &mut h);
            states.push(h.clone());
        }
    }
    Ok(states)
}

fn project_logits(ckpt: &Checkpoint, h: &Matrix) -> Matrix {
    let c = &ckpt.config;
    let mut x = vec![0.0f32; c.d_model];
    let mut logits = Matrix::zeros(h.rows, c.vocab_size);
    for t in 0..h.rows {
        rms_norm(h.row(t), &ckpt.final_norm, c.rms_eps as f32, &mut x);
        let row = logits.row_mut(t);
        match &ckpt.lm_head {
            Some(head) => head.vec_mul(&x, row),
            None => ckpt.embed.mul_vec(&x, row),
        }
        add_bias(row, &ckpt.lm_bias);
    }
    logits
}

/// `T × vocab_size` logits for a selection of layers.
pub fn forward_logits_with(ckpt: &Checkpoint, ids: &[u32], selection: LayerSelection) -> Result<Matrix> {
    check_ids(ckpt, ids)?;
    let mut h = embed(ckpt, ids);
    for (l, layer) in ckpt.layers.iter().enumerate() {
        if selection.includes(l) {
            apply_layer(ckpt, layer, &mut h);
        }
    }
    Ok(project_logits(ckpt, &h))
}

/// One row of pre-softmax scores per input position.
pub fn forward_logits(ckpt: &Checkpoint, ids: &[u32]) -> Result<Matrix> {
    forward_logits_with(ckpt, ids, LayerSelection::All)
}

pub fn next_token_distribution(ckpt: &Checkpoint, ids: &[u32]) -> Result<Distribution> {
    let logits = forward_logits(ckpt, ids)?;
    Ok(Distribution::from_logits(logits.row(logits.rows - 1)))
}

/// Element `k` is the distribution over `reference[k]` given
/// `prompt ++ reference[..k]`; computed in one causal pass.
pub fn teacher_forced_distributions(
    ckpt: &Checkpoint,
    prompt: &[u32],
    reference: &[u32],
) -> Result<Vec<Distribution>> {
    teacher_forced_with(ckpt, prompt, reference, LayerSelection::All)
}

pub fn teacher_forced_with(
    ckpt: &Checkpoint,
    prompt: &[u32],
    reference: &[u32],
    selection: LayerSelection,
) -> Result<Vec<Distribution>> {
    if prompt.is_empty() {
        return Err(Error::EmptySequence);
    }
    let total = prompt.len() + reference.len();
    if total > ckpt.config.max_seq_len {
        return Err(Error::SequenceTooLong { len: total, max: ckpt.config.max_seq_len });
    }
    if reference.is_empty() {
        check_ids(ckpt, prompt)?;
        return Ok(Vec::new());
    }
    let input = teacher_forced_input(prompt, reference);
    check_ids(ckpt, reference)?;
    let logits = forward_logits_with(ckpt, &input, selection)?;
    Ok((prompt.len() - 1..input.len()).map(|t| Distribution::from_logits(logits.row(t))).collect())
}

/// `prompt ++ reference[..len - 1]`: the inputs whose next-token rows score
/// every reference token.
pub fn teacher_forced_input(prompt: &[u32], reference: &[u32]) -> Vec<u32> {
    let mut input = prompt.to_vec();
    input.extend_from_slice(&reference[..reference.len().saturating_sub(1)]);
    input
}

/// Appends the argmax token until a stop id is produced (not included),
/// `max_new` tokens were emitted, or the context window is full.
pub fn greedy_decode(ckpt: &Checkpoint, prompt: &[u32], max_new: usize, stop_ids: &[u32]) -> Result<Vec<u32>> {
    check_ids(ckpt, prompt)?;
    let mut context = prompt.to_vec();
    let mut out = Vec::new();
    while out.len() < max_new && context.len() < ckpt.config.max_seq_len {
        let next = next_token_distribution(ckpt, &context)?.argmax();
        if stop_ids.contains(&next) {
            break;
        }
        out.push(next);
        context.push(next);
    }
    Ok(out)
}
