//! Structural pruning: vocabulary slicing, iterative layer removal, FFN
//! neuron selection, and the vocab → layer → FFN pipeline.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::model::LayerSelection;
use crate::objective::{layer_scores_encoded, mean_kl_against, Baseline, CalibrationSet, Criterion, EncodedSample};
use crate::recovery::{generate_text, passes_all, CodeRunner};
use crate::rng::Lcg64;
use crate::tokenizer::{count_tokens, prune_tokenizer, BpeTokenizer, IdRemap, TokenSet};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FfnRule {
    TopK,
    BottomK,
    MiddleK,
    Random,
}

impl FfnRule {
    /// Evaluation order, which is also the tie-break order.
    pub const ALL: [FfnRule; 4] = [FfnRule::TopK, FfnRule::BottomK, FfnRule::MiddleK, FfnRule::Random];

    pub fn name(self) -> &'static str {
        match self {
            FfnRule::TopK => "top_k",
            FfnRule::BottomK => "bottom_k",
            FfnRule::MiddleK => "middle_k",
            FfnRule::Random => "random",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|r| r.name() == s)
    }
}

/// One step of iterative layer removal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemovedLayer {
    /// Index in the checkpoint the pruning started from.
    pub original_index: usize,
    /// Index in the checkpoint at the time of removal.
    pub current_index: usize,
    pub score: f64,
    pub criterion: Criterion,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PrunePlan {
    pub kept_token_old_ids: Vec<u32>,
    pub removed_layers: Vec<RemovedLayer>,
    pub ffn_rule: Option<FfnRule>,
    /// Kept FFN neurons per surviving layer, indices into that layer's width
    /// before FFN pruning.
    pub ffn_kept_indices: Vec<Vec<usize>>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerScore {
    pub layer: usize,
    pub score: f64,
    pub criterion: Criterion,
}

/// Scores of every candidate layer at one pruning step.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LayerScoreReport {
    pub entries: Vec<LayerScore>,
}

impl LayerScoreReport {
    /// Most redundant entry under its criterion; ties go to the lowest layer.
    pub fn best(&self) -> Option<&LayerScore> {
        let mut best: Option<&LayerScore> = None;
        for e in &self.entries {
            if best.is_none_or(|b| e.criterion.better(e.score, b.score)) {
                best = Some(e);
            }
        }
        best
    }
}

/// Keeps the samples whose greedy generation passes all of their tests.
pub fn filter_correct_samples(
    calib: &CalibrationSet,
    ckpt: &Checkpoint,
    tok: &BpeTokenizer,
    runner: &dyn CodeRunner,
    max_new: usize,
) -> Result<CalibrationSet> {
    let mut kept = Vec::new();
    for sample in &calib.samples {
        let tests = match &sample.tests {
            Some(t) if !t.is_empty() => t,
            _ => return Err(Error::MissingTests(sample.id.clone())),
        };
        let code = generate_text(ckpt, tok, &sample.prompt, max_new)?;
        if passes_all(runner, &code, tests)? {
            kept.push(sample.clone());
        }
    }
    Ok(CalibrationSet::new(kept, tok))
}

/// Scores every layer of `ckpt` as a removal candidate.
///
/// With [`Criterion::Kl`] each candidate is the model without that layer,
/// compared against `baseline` (the original model's distributions, fixed
/// across steps). Other criteria use statistics of `ckpt` itself.
pub fn score_layers(
    ckpt: &Checkpoint,
    samples: &[EncodedSample],
    criterion: Criterion,
    baseline: Option<&Baseline>,
) -> Result<LayerScoreReport> {
    let scores = match (criterion, baseline) {
        (Criterion::Kl, Some(base)) => (0..ckpt.layers.len())
            .map(|l| mean_kl_against(base, ckpt, samples, LayerSelection::Skip(l)))
            .collect::<Result<Vec<_>>>()?,
        _ => layer_scores_encoded(ckpt, samples, criterion)?,
    };
    Ok(LayerScoreReport {
        entries: scores.into_iter().enumerate().map(|(layer, score)| LayerScore { layer, score, criterion }).collect(),
    })
}

/// Most redundant layer by `criterion` (see [`score_layers`]).
pub fn find_best_layer_by(
    ckpt: &Checkpoint,
    samples: &[EncodedSample],
    criterion: Criterion,
    baseline: Option<&Baseline>,
) -> Result<(usize, f64, LayerScoreReport)> {
    if ckpt.layers.len() < 2 {
        return Err(Error::TooFewLayers { n_layers: ckpt.layers.len() });
    }
    let report = score_layers(ckpt, samples, criterion, baseline)?;
    let best = report.best().expect("at least two candidates");
    Ok((best.layer, best.score, report))
}

/// Layer whose removal moves the model least, in mean KL, away from `baseline`.
pub fn find_best_layer(
    ckpt: &Checkpoint,
    calib: &CalibrationSet,
    tok: &BpeTokenizer,
    baseline: &Baseline,
) -> Result<(usize, f64, LayerScoreReport)> {
    let samples = calib.encode(tok)?;
    find_best_layer_by(ckpt, &samples, Criterion::Kl, Some(baseline))
}

pub fn remove_layer(ckpt: &Checkpoint, layer: usize) -> Result<Checkpoint> {
    let n_layers = ckpt.layers.len();
    if layer >= n_layers {
        return Err(Error::BadLayerIndex { layer, n_layers });
    }
    if n_layers < 2 {
        return Err(Error::TooFewLayers { n_layers });
    }
    let mut out = ckpt.clone();
    out.layers.remove(layer);
    out.config.intermediate_size.remove(layer);
    out.config.n_layers -= 1;
    Ok(out)
}

/// Removes `k` layers one at a time, re-scoring the remaining layers at
/// each step. Returns the pruned checkpoint and the removal trace.
pub fn prune_layers(
    ckpt: &Checkpoint,
    calib: &CalibrationSet,
    tok: &BpeTokenizer,
    k: usize,
    criterion: Criterion,
) -> Result<(Checkpoint, Vec<RemovedLayer>)> {
    if k == 0 {
        return Ok((ckpt.clone(), Vec::new()));
    }
    if k >= ckpt.layers.len() {
        return Err(Error::TooFewLayers { n_layers: ckpt.layers.len() });
    }
    let samples = calib.encode(tok)?;
    let baseline = match criterion {
        Criterion::Kl => Some(Baseline::compute(ckpt, &samples)?),
        _ => None,
    };
    let mut current = ckpt.clone();
    let mut alive: Vec<usize> = (0..ckpt.layers.len()).collect();
    let mut trace = Vec::with_capacity(k);
    for _ in 0..k {
        let (layer, score, _) = find_best_layer_by(&current, &samples, criterion, baseline.as_ref())?;
        current = remove_layer(&current, layer)?;
        trace.push(RemovedLayer { original_index: alive.remove(layer), current_index: layer, score, criterion });
    }
    Ok((current, trace))
}

/// Sorted neuron indices kept by `rule` when keeping `keep` of `intermediate`.
pub fn ffn_keep_indices(rule: FfnRule, intermediate: usize, keep: usize, seed: u64) -> Result<Vec<usize>> {
    if keep == 0 || keep > intermediate {
        return Err(Error::BadK { keep, intermediate });
    }
    Ok(match rule {
        FfnRule::TopK => (0..keep).collect(),
        FfnRule::BottomK => (intermediate - keep..intermediate).collect(),
        FfnRule::MiddleK => {
            let start = (intermediate - keep) / 2;
            (start..start + keep).collect()
        }
        FfnRule::Random => {
            // partial Fisher-Yates
            let mut rng = Lcg64::new(seed);
            let mut pool: Vec<usize> = (0..intermediate).collect();
            for i in 0..keep {
                let j = i + rng.below((intermediate - i) as u32) as usize;
                pool.swap(i, j);
            }
            pool.truncate(keep);
            pool.sort_unstable();
            pool
        }
    })
}

/// Per-layer index lists for a rule applied with the same `keep` everywhere.
/// The random rule draws layer `l` from seed `seed + l`.
pub fn ffn_plan_for_rule(ckpt: &Checkpoint, rule: FfnRule, keep: &[usize], seed: u64) -> Result<Vec<Vec<usize>>> {
    ckpt.layers
        .iter()
        .zip(keep)
        .enumerate()
        .map(|(l, (layer, &k))| ffn_keep_indices(rule, layer.intermediate(), k, seed.wrapping_add(l as u64)))
        .collect()
}

/// Slices every layer's FFN down to the listed neurons: columns of `w_gate`
/// and `w_up`, rows of `w_down`. Attention tensors are not touched.
pub fn apply_ffn_plan(ckpt: &Checkpoint, kept: &[Vec<usize>]) -> Result<Checkpoint> {
    if kept.len() != ckpt.layers.len() {
        return Err(Error::BadIndexList {
            layer: kept.len().min(ckpt.layers.len()),
            reason: format!("{} index lists for {} layers", kept.len(), ckpt.layers.len()),
        });
    }
    let mut out = ckpt.clone();
    for (l, (layer, idx)) in out.layers.iter_mut().zip(kept).enumerate() {
        let width = layer.intermediate();
        if idx.is_empty() {
            return Err(Error::BadIndexList { layer: l, reason: String::from("empty") });
        }
        if idx.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::BadIndexList { layer: l, reason: String::from("not strictly increasing") });
        }
        if idx[idx.len() - 1] >= width {
            return Err(Error::BadIndexList {
                layer: l,
                reason: format!("index {} out of range for width {width}", idx[idx.len() - 1]),
            });
        }
        if idx.len() == width {
            continue;
        }
        layer.w_gate = layer.w_gate.select_cols(idx);
        layer.w_up = layer.w_up.select_cols(idx);
        layer.w_down = layer.w_down.select_rows(idx);
        out.config.intermediate_size[l] = idx.len();
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct FfnSelection {
    pub rule: FfnRule,
    pub checkpoint: Checkpoint,
    pub kept: Vec<Vec<usize>>,
    /// Mean KL against the unpruned checkpoint, in [`FfnRule::ALL`] order.
    pub scores: Vec<(FfnRule, f64)>,
}

/// Tries all four rules with per-layer budgets `keep` and returns the one
/// with the lowest mean KL to `ckpt`; ties follow [`FfnRule::ALL`] order.
pub fn select_ffn_rule_per_layer(
    ckpt: &Checkpoint,
    samples: &[EncodedSample],
    keep: &[usize],
    seed: u64,
) -> Result<FfnSelection> {
    let baseline = Baseline::compute(ckpt, samples)?;
    let mut best: Option<(f64, FfnSelection)> = None;
    let mut scores = Vec::with_capacity(FfnRule::ALL.len());
    for rule in FfnRule::ALL {
        let kept = ffn_plan_for_rule(ckpt, rule, keep, seed)?;
        let candidate = apply_ffn_plan(ckpt, &kept)?;
        let score = mean_kl_against(&baseline, &candidate, samples, LayerSelection::All)?;
        scores.push((rule, score));
        if best.as_ref().is_none_or(|(b, _)| score < *b) {
            best = Some((score, FfnSelection { rule, checkpoint: candidate, kept, scores: Vec::new() }));
        }
    }
    let (_, mut best) = best.expect("four rules evaluated");
    best.scores = scores;
    Ok(best)
}

/// [`select_ffn_rule_per_layer`] with the same `keep` for every layer.
pub fn select_ffn_rule(
    ckpt: &Checkpoint,
    calib: &CalibrationSet,
    tok: &BpeTokenizer,
    keep: usize,
    seed: u64,
) -> Result<FfnSelection> {
    let samples = calib.encode(tok)?;
    let per_layer = alloc::vec![keep; ckpt.layers.len()];
    select_ffn_rule_per_layer(ckpt, &samples, &per_layer, seed)
}

/// Keeps the embedding rows and output-projection columns of the retained
/// token ids, in ascending old-id order.
pub fn apply_vocab_plan(ckpt: &Checkpoint, remap: &IdRemap) -> Result<Checkpoint> {
    let v = ckpt.config.vocab_size;
    if remap.is_empty() {
        return Err(Error::BadRemap(String::from("no tokens kept")));
    }
    if let Some(&bad) = remap.kept_old_ids.iter().find(|&&id| id as usize >= v) {
        return Err(Error::BadRemap(format!("old id {bad} outside vocabulary of {v}")));
    }
    if remap.kept_old_ids.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::BadRemap(String::from("kept ids not strictly increasing")));
    }
    let rows: Vec<usize> = remap.kept_old_ids.iter().map(|&id| id as usize).collect();
    let mut out = ckpt.clone();
    out.embed = ckpt.embed.select_rows(&rows);
    out.lm_head = ckpt.lm_head.as_ref().map(|h| h.select_cols(&rows));
    out.lm_bias = ckpt.lm_bias.as_ref().map(|b| rows.iter().map(|&r| b[r]).collect());
    out.config.vocab_size = rows.len();
    Ok(out)
}

/// Millisecond clock used for pipeline stage timings.
pub trait Clock {
    fn now_ms(&self) -> f64;
}

/// Clock that always reads zero.
pub struct NoClock;

impl Clock for NoClock {
    fn now_ms(&self) -> f64 {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOptions {
    pub k_layers: usize,
    /// Neurons removed from every layer's FFN.
    pub ffn_remove: usize,
    pub criterion: Criterion,
    pub seed: u64,
    /// Usage threshold for vocabulary pruning; 0 keeps every used token.
    pub vocab_threshold: u64,
    /// Generation budget when filtering calibration samples.
    pub max_new: usize,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self { k_layers: 0, ffn_remove: 0, criterion: Criterion::Kl, seed: 0, vocab_threshold: 0, max_new: 512 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub millis: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub vocab_before: usize,
    pub vocab_after: usize,
    pub merges_before: usize,
    pub merges_after: usize,
    pub calibration_samples: usize,
    pub calibration_retained: usize,
    pub params_dense: u64,
    pub params_after_vocab: u64,
    pub params_after_layers: u64,
    pub params_pruned: u64,
    pub ffn_scores: Vec<(FfnRule, f64)>,
    /// Mean KL of the final model against the vocabulary-pruned model.
    pub final_mean_kl: f64,
    pub timings: Vec<StageTiming>,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub checkpoint: Checkpoint,
    pub tokenizer: BpeTokenizer,
    pub plan: PrunePlan,
    pub report: PipelineReport,
}

/// Vocabulary pruning, then layer pruning, then FFN pruning.
///
/// `filter` runs the calibration samples' tests before layer pruning; pass
/// `None` when the references are already trusted.
#[allow(clippy::too_many_arguments)]
pub fn prune_pipeline<D: AsRef<[u8]>>(
    ckpt: &Checkpoint,
    tok: &BpeTokenizer,
    corpus: &[D],
    calib: &CalibrationSet,
    options: &PipelineOptions,
    filter: Option<&dyn CodeRunner>,
    clock: &dyn Clock,
) -> Result<PipelineOutput> {
    ckpt.ensure_valid()?;
    if tok.len() != ckpt.config.vocab_size {
        return Err(Error::VocabMismatch { original: tok.len(), candidate: ckpt.config.vocab_size });
    }
    let mut timings = Vec::new();
    let mut lap = |stage: &str, start: f64| timings.push(StageTiming { stage: String::from(stage), millis: clock.now_ms() - start });

    let t0 = clock.now_ms();
    let usage = count_tokens(corpus, tok);
    let keep = TokenSet::from_usage(&usage, tok, options.vocab_threshold);
    let (pruned_tok, remap) = prune_tokenizer(tok, &keep)?;
    let vocab_model = apply_vocab_plan(ckpt, &remap)?;
    let calib = calib.rebind(&pruned_tok);
    lap("vocab", t0);

    let t1 = clock.now_ms();
    let calibration_samples = calib.len();
    let calib = match filter {
        Some(runner) => filter_correct_samples(&calib, &vocab_model, &pruned_tok, runner, options.max_new)?,
        None => calib,
    };
    lap("filter", t1);

    let t2 = clock.now_ms();
    let (layer_model, trace) = prune_layers(&vocab_model, &calib, &pruned_tok, options.k_layers, options.criterion)?;
    lap("layers", t2);

    let t3 = clock.now_ms();
    let samples = calib.encode(&pruned_tok)?;
    let budgets = layer_model
        .layers
        .iter()
        .map(|l| {
            let width = l.intermediate();
            width
                .checked_sub(options.ffn_remove)
                .filter(|&k| k > 0)
                .ok_or(Error::BadK { keep: width.saturating_sub(options.ffn_remove), intermediate: width })
        })
        .collect::<Result<Vec<_>>>()?;
    let ffn = select_ffn_rule_per_layer(&layer_model, &samples, &budgets, options.seed)?;
    lap("ffn", t3);

    let baseline = Baseline::compute(&vocab_model, &samples)?;
    let final_mean_kl = mean_kl_against(&baseline, &ffn.checkpoint, &samples, LayerSelection::All)?;
    ffn.checkpoint.ensure_valid()?;

    let report = PipelineReport {
        vocab_before: tok.len(),
        vocab_after: pruned_tok.len(),
        merges_before: tok.merges().len(),
        merges_after: pruned_tok.merges().len(),
        calibration_samples,
        calibration_retained: calib.len(),
        params_dense: ckpt.param_count(),
        params_after_vocab: vocab_model.param_count(),
        params_after_layers: layer_model.param_count(),
        params_pruned: ffn.checkpoint.param_count(),
        ffn_scores: ffn.scores.clone(),
        final_mean_kl,
        timings,
    };
    let plan = PrunePlan {
        kept_token_old_ids: remap.kept_old_ids.clone(),
        removed_layers: trace,
        ffn_rule: Some(ffn.rule),
        ffn_kept_indices: ffn.kept.clone(),
        seed: options.seed,
    };
    Ok(PipelineOutput { checkpoint: ffn.checkpoint, tokenizer: pruned_tok, plan, report })
}
