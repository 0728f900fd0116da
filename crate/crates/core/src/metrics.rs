//! Generation metrics (Pass@1, BLEU-4, exact match) and analytic efficiency
//! estimates (parameter count, FLOPs per token, break-even point).

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, TransformerConfig};
use crate::objective::CalibrationSet;
use crate::recovery::{generate_text, passes_all, CodeRunner};
use crate::tokenizer::BpeTokenizer;
use crate::{Error, Result};

/// 1 iff the strings are equal after trimming outer whitespace.
pub fn exact_match(pred: &str, gold: &str) -> u32 {
    (pred.trim() == gold.trim()) as u32
}

fn ngram_counts<'t, 'a>(tokens: &'t [&'a str], n: usize) -> BTreeMap<&'t [&'a str], usize> {
    let mut counts = BTreeMap::new();
    for gram in tokens.windows(n) {
        *counts.entry(gram).or_insert(0) += 1;
    }
    counts
}

/// Sentence BLEU-4 over whitespace tokens: geometric mean of clipped n-gram
/// precisions for n = 1..4 times the brevity penalty, without smoothing.
pub fn bleu4(pred: &str, reference: &str) -> f64 {
    let hyp: Vec<&str> = pred.split_whitespace().collect();
    let refs: Vec<&str> = reference.split_whitespace().collect();
    if hyp.is_empty() || refs.is_empty() {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=4 {
        let total = hyp.len().saturating_sub(n - 1);
        if total == 0 {
            return 0.0;
        }
        let ref_counts = ngram_counts(&refs, n);
        let matched: usize = ngram_counts(&hyp, n)
            .iter()
            .map(|(gram, &c)| c.min(ref_counts.get(gram).copied().unwrap_or(0)))
            .sum();
        if matched == 0 {
            return 0.0;
        }
        log_sum += libm::log(matched as f64 / total as f64);
    }
    let (c, r) = (hyp.len() as f64, refs.len() as f64);
    let bp = if c > r { 1.0 } else { libm::exp(1.0 - r / c) };
    bp * libm::exp(log_sum / 4.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MetricSet {
    pub pass_at_1: bool,
    pub bleu4: bool,
    pub exact_match: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleVerdict {
    pub id: String,
    pub generated: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub passed: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bleu4: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exact_match: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub count: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pass_at_1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bleu4: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exact_match: Option<f64>,
    pub samples: Vec<SampleVerdict>,
}

fn mean_of(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    crate::tensor::pairwise_sum(&v) / v.len() as f64
}

/// Greedy-decodes every sample once and scores the generation with the
/// requested metrics. BLEU-4 and EM compare against the sample reference.
pub fn evaluate(
    samples: &CalibrationSet,
    ckpt: &Checkpoint,
    tok: &BpeTokenizer,
    runner: Option<&dyn CodeRunner>,
    max_new: usize,
    metrics: MetricSet,
) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::EmptyCalibration);
    }
    if metrics.pass_at_1 {
        if runner.is_none() {
            return Err(Error::ExecutorUnavailable(String::from("Pass@1 needs a test executor")));
        }
        if let Some(s) = samples.samples.iter().find(|s| s.tests.as_ref().is_none_or(|t| t.is_empty())) {
            return Err(Error::MissingTests(s.id.clone()));
        }
    }
    let mut verdicts = Vec::with_capacity(samples.len());
    for sample in &samples.samples {
        let generated = generate_text(ckpt, tok, &sample.prompt, max_new)?;
        let passed = match (metrics.pass_at_1, runner) {
            (true, Some(r)) => Some(passes_all(r, &generated, sample.tests.as_deref().unwrap_or(&[]))?),
            _ => None,
        };
        verdicts.push(SampleVerdict {
            id: sample.id.clone(),
            bleu4: metrics.bleu4.then(|| bleu4(&generated, &sample.reference)),
            exact_match: metrics.exact_match.then(|| exact_match(&generated, &sample.reference)),
            passed,
            generated,
        });
    }
    Ok(EvalReport {
        count: verdicts.len(),
        pass_at_1: metrics
            .pass_at_1
            .then(|| mean_of(verdicts.iter().map(|v| v.passed.unwrap_or(false) as u32 as f64))),
        bleu4: metrics.bleu4.then(|| mean_of(verdicts.iter().map(|v| v.bleu4.unwrap_or(0.0)))),
        exact_match: metrics
            .exact_match
            .then(|| mean_of(verdicts.iter().map(|v| v.exact_match.unwrap_or(0) as f64))),
        samples: verdicts,
    })
}

/// Fraction of samples whose single greedy generation passes all tests.
pub fn pass_at_1(
    samples: &CalibrationSet,
    ckpt: &Checkpoint,
    tok: &BpeTokenizer,
    runner: &dyn CodeRunner,
    max_new: usize,
) -> Result<EvalReport> {
    let metrics = MetricSet { pass_at_1: true, ..MetricSet::default() };
    evaluate(samples, ckpt, tok, Some(runner), max_new, metrics)
}

/// Exact parameter count implied by a config.
pub fn param_count(config: &TransformerConfig) -> u64 {
    let c = config;
    let (v, d, h) = (c.vocab_size as u64, c.d_model as u64, c.head_dim as u64);
    let (nh, nkv) = (c.n_heads as u64, c.n_kv_heads as u64);
    let attn = d * nh * h + 2 * d * nkv * h + nh * h * d;
    let bias = if c.qkv_bias { (nh + 2 * nkv) * h } else { 0 };
    let layers: u64 = c.intermediate_size.iter().map(|&i| attn + bias + 3 * i as u64 * d + 2 * d).sum();
    let head = if c.tied_embeddings { 0 } else { d * v };
    let lm_bias = if c.lm_bias && !c.tied_embeddings { v } else { 0 };
    v * d + layers + d + head + lm_bias
}

/// Matmul FLOPs for one generated token at the given context length:
/// two per weight of every projection (the output head included, tied or
/// not) plus `4 · context · d_model` per layer for attention scores and
/// value mixing.
pub fn flops_per_token(config: &TransformerConfig, context: usize) -> f64 {
    let c = config;
    let (v, d, h) = (c.vocab_size as f64, c.d_model as f64, c.head_dim as f64);
    let (nh, nkv) = (c.n_heads as f64, c.n_kv_heads as f64);
    let attn = d * nh * h + 2.0 * d * nkv * h + nh * h * d;
    let per_layer: f64 = c.intermediate_size.iter().map(|&i| attn + 3.0 * i as f64 * d).sum();
    let matmul = per_layer + d * v;
    2.0 * matmul + 4.0 * c.intermediate_size.len() as f64 * context as f64 * d
}

/// Inference runs after which a one-time cost is repaid, rounded to the
/// nearest run.
pub fn break_even(one_time_cost: f64, per_inference_savings: f64) -> Result<u64> {
    if per_inference_savings.is_nan() || per_inference_savings <= 0.0 {
        return Err(Error::ZeroSavings);
    }
    Ok(libm::round(one_time_cost / per_inference_savings) as u64)
}

/// Shape of a uniform pruning plan, for analytic what-if calculations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanShape {
    pub vocab_size: usize,
    pub layers_removed: usize,
    pub neurons_removed: usize,
}

impl PlanShape {
    /// Vocabulary 92,416 → 17,176, four layers, 256 FFN neurons per layer.
    pub const REFERENCE: PlanShape = PlanShape { vocab_size: 17_176, layers_removed: 4, neurons_removed: 256 };

    /// Config after the plan (layers are dropped from the end; with uniform
    /// widths which ones does not matter for counting).
    pub fn apply(&self, config: &TransformerConfig) -> TransformerConfig {
        let mut out = config.clone();
        out.vocab_size = self.vocab_size;
        out.n_layers = config.n_layers.saturating_sub(self.layers_removed);
        out.intermediate_size.truncate(out.n_layers);
        out.intermediate_size.iter_mut().for_each(|i| *i = i.saturating_sub(self.neurons_removed));
        out
    }
}

/// 7B-class code model: 32 layers, d_model 4096, 32 query / 4 key-value
/// heads, SwiGLU width 13,440, vocabulary 92,416, qkv bias, untied head.
pub fn reference_7b_config() -> TransformerConfig {
    TransformerConfig {
        vocab_size: 92_416,
        d_model: 4096,
        n_layers: 32,
        n_heads: 32,
        n_kv_heads: 4,
        head_dim: 128,
        intermediate_size: vec![13_440; 32],
        rope_theta: 1_000_000.0,
        rms_eps: 1e-5,
        max_seq_len: 65_536,
        qkv_bias: true,
        tied_embeddings: false,
        lm_bias: false,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyReport {
    pub context: usize,
    pub dense_params: u64,
    pub pruned_params: u64,
    pub params_removed: u64,
    pub param_reduction: f64,
    pub dense_flops: f64,
    pub pruned_flops: f64,
    pub flops_saved: f64,
    pub flops_ratio: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub one_time_cost: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub break_even_runs: Option<u64>,
}

pub fn efficiency_report(
    dense: &TransformerConfig,
    pruned: &TransformerConfig,
    context: usize,
    one_time_cost: Option<f64>,
) -> Result<EfficiencyReport> {
    let (dp, pp) = (param_count(dense), param_count(pruned));
    let (df, pf) = (flops_per_token(dense, context), flops_per_token(pruned, context));
    let break_even_runs = one_time_cost.map(|cost| break_even(cost, df - pf)).transpose()?;
    Ok(EfficiencyReport {
        context,
        dense_params: dp,
        pruned_params: pp,
        params_removed: dp.saturating_sub(pp),
        param_reduction: 1.0 - pp as f64 / dp as f64,
        dense_flops: df,
        pruned_flops: pf,
        flops_saved: df - pf,
        flops_ratio: pf / df,
        one_time_cost,
        break_even_runs,
    })
}
