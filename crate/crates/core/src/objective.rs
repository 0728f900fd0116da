//! KL-divergence pruning objective and the baseline layer-redundancy criteria.
//!
//! Divergence is always `D(original ‖ candidate)`, taken per teacher-forced
//! reference position and averaged over every position of every sample.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::model::{residual_stream, teacher_forced_input, teacher_forced_with, Distribution, LayerSelection};
use crate::recovery::TestCase;
use crate::tensor::pairwise_sum;
use crate::tokenizer::BpeTokenizer;
use crate::{Error, Result};

/// Clamp applied to candidate probabilities before taking logs.
pub const Q_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CalibrationSample {
    pub id: String,
    pub prompt: String,
    pub reference: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tests: Option<Vec<TestCase>>,
}

/// Calibration samples bound to the tokenizer that will encode them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CalibrationSet {
    pub samples: Vec<CalibrationSample>,
    fingerprint: u64,
}

/// A calibration sample after tokenisation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedSample {
    pub prompt: Vec<u32>,
    pub reference: Vec<u32>,
}

impl CalibrationSet {
    pub fn new(samples: Vec<CalibrationSample>, tok: &BpeTokenizer) -> Self {
        Self { samples, fingerprint: tok.fingerprint() }
    }

    /// Same samples, bound to another tokenizer (after vocabulary pruning).
    pub fn rebind(&self, tok: &BpeTokenizer) -> Self {
        Self::new(self.samples.clone(), tok)
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn encode(&self, tok: &BpeTokenizer) -> Result<Vec<EncodedSample>> {
        if tok.fingerprint() != self.fingerprint {
            return Err(Error::FingerprintMismatch);
        }
        if self.samples.is_empty() {
            return Err(Error::EmptyCalibration);
        }
        Ok(self
            .samples
            .iter()
            .map(|s| EncodedSample {
                prompt: tok.encode(s.prompt.as_bytes()),
                reference: tok.encode(s.reference.as_bytes()),
            })
            .collect())
    }
}

/// `Σ p·ln(p / max(q, ε))`, skipping terms with `p = 0`.
pub fn kl_divergence(p: &Distribution, q: &Distribution) -> Result<f64> {
    kl_slices(&p.probs, &q.probs)
}

pub fn kl_slices(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::LengthMismatch { left: p.len(), right: q.len() });
    }
    let terms: Vec<f64> = p
        .iter()
        .zip(q)
        .map(|(&pi, &qi)| if pi > 0.0 { pi * libm::log(pi / qi.max(Q_FLOOR)) } else { 0.0 })
        .collect();
    Ok(pairwise_sum(&terms))
}

/// Teacher-forced distributions of a reference model, one list per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Baseline {
    pub per_sample: Vec<Vec<Distribution>>,
}

impl Baseline {
    pub fn compute(ckpt: &Checkpoint, samples: &[EncodedSample]) -> Result<Self> {
        let per_sample = samples
            .iter()
            .map(|s| teacher_forced_with(ckpt, &s.prompt, &s.reference, LayerSelection::All))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { per_sample })
    }

    pub fn positions(&self) -> usize {
        self.per_sample.iter().map(Vec::len).sum()
    }
}

/// Mean per-position KL between a fixed baseline and `candidate` (optionally
/// with one layer skipped).
pub fn mean_kl_against(
    baseline: &Baseline,
    candidate: &Checkpoint,
    samples: &[EncodedSample],
    selection: LayerSelection,
) -> Result<f64> {
    if baseline.positions() == 0 {
        return Err(Error::EmptyCalibration);
    }
    let mut terms = Vec::with_capacity(baseline.positions());
    for (sample, base) in samples.iter().zip(&baseline.per_sample) {
        let dists = teacher_forced_with(candidate, &sample.prompt, &sample.reference, selection)?;
        for (p, q) in base.iter().zip(&dists) {
            terms.push(kl_divergence(p, q)?);
        }
    }
    Ok(pairwise_sum(&terms) / terms.len() as f64)
}

pub fn mean_calibration_kl(
    original: &Checkpoint,
    candidate: &Checkpoint,
    calib: &CalibrationSet,
    tok: &BpeTokenizer,
) -> Result<f64> {
    if original.config.vocab_size != candidate.config.vocab_size {
        return Err(Error::VocabMismatch {
            original: original.config.vocab_size,
            candidate: candidate.config.vocab_size,
        });
    }
    let samples = calib.encode(tok)?;
    let baseline = Baseline::compute(original, &samples)?;
    mean_kl_against(&baseline, candidate, &samples, LayerSelection::All)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    /// Mean KL to the original model's distributions; lower is more redundant.
    Kl,
    /// Mean cosine similarity between the states entering and leaving a layer;
    /// higher is more redundant.
    Cosine,
    /// Mean `arccos(cosine) / π`; lower is more redundant.
    Angular,
    /// Teacher-forced perplexity without the layer; lower is more redundant.
    Perplexity,
}

impl Criterion {
    pub const ALL: [Criterion; 4] = [Criterion::Kl, Criterion::Cosine, Criterion::Angular, Criterion::Perplexity];

    pub fn name(self) -> &'static str {
        match self {
            Criterion::Kl => "kl",
            Criterion::Cosine => "cosine",
            Criterion::Angular => "angular",
            Criterion::Perplexity => "perplexity",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == s)
    }

    pub fn higher_is_more_redundant(self) -> bool {
        matches!(self, Criterion::Cosine)
    }

    /// Whether `a` marks a more redundant layer than `b` (strictly).
    pub fn better(self, a: f64, b: f64) -> bool {
        if self.higher_is_more_redundant() {
            a > b
        } else {
            a < b
        }
    }
}

fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let (mut ab, mut aa, mut bb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        ab += x as f64 * y as f64;
        aa += x as f64 * x as f64;
        bb += y as f64 * y as f64;
    }
    if aa == 0.0 || bb == 0.0 {
        return if a == b { 1.0 } else { 0.0 };
    }
    (ab / libm::sqrt(aa * bb)).clamp(-1.0, 1.0)
}

/// Per-layer cosine similarities between the residual stream entering and
/// leaving each layer, pooled over every teacher-forced input position.
fn layer_cosines(ckpt: &Checkpoint, samples: &[EncodedSample]) -> Result<Vec<Vec<f64>>> {
    let mut per_layer = alloc::vec![Vec::new(); ckpt.layers.len()];
    for s in samples {
        let input = teacher_forced_input(&s.prompt, &s.reference);
        let states = residual_stream(ckpt, &input, LayerSelection::All)?;
        for (l, cosines) in per_layer.iter_mut().enumerate() {
            for t in 0..input.len() {
                cosines.push(cosine(states[l].row(t), states[l + 1].row(t)));
            }
        }
    }
    Ok(per_layer)
}

/// `exp(mean NLL)` of the reference tokens, natural log.
pub fn perplexity(ckpt: &Checkpoint, samples: &[EncodedSample], selection: LayerSelection) -> Result<f64> {
    let mut nll = Vec::new();
    for s in samples {
        let dists = teacher_forced_with(ckpt, &s.prompt, &s.reference, selection)?;
        for (dist, &target) in dists.iter().zip(&s.reference) {
            nll.push(-libm::log(dist.probs[target as usize].max(Q_FLOOR)));
        }
    }
    if nll.is_empty() {
        return Err(Error::EmptyCalibration);
    }
    Ok(libm::exp(pairwise_sum(&nll) / nll.len() as f64))
}

fn mean(values: &[f64]) -> f64 {
    pairwise_sum(values) / values.len() as f64
}

/// Scores every layer of `ckpt` under `criterion`. For [`Criterion::Kl`] the
/// reference distributions are those of `ckpt` itself.
pub fn layer_scores_encoded(
    ckpt: &Checkpoint,
    samples: &[EncodedSample],
    criterion: Criterion,
) -> Result<Vec<f64>> {
    match criterion {
        Criterion::Cosine | Criterion::Angular => {
            let cosines = layer_cosines(ckpt, samples)?;
            cosines
                .iter()
                .map(|c| {
                    if c.is_empty() {
                        return Err(Error::EmptyCalibration);
                    }
                    Ok(match criterion {
                        Criterion::Cosine => mean(c),
                        _ => {
                            let angles: Vec<f64> =
                                c.iter().map(|&x| libm::acos(x) / core::f64::consts::PI).collect();
                            mean(&angles)
                        }
                    })
                })
                .collect()
        }
        Criterion::Perplexity => (0..ckpt.layers.len())
            .map(|l| perplexity(ckpt, samples, LayerSelection::Skip(l)))
            .collect(),
        Criterion::Kl => {
            let baseline = Baseline::compute(ckpt, samples)?;
            (0..ckpt.layers.len())
                .map(|l| mean_kl_against(&baseline, ckpt, samples, LayerSelection::Skip(l)))
                .collect()
        }
    }
}

pub fn layer_score(
    ckpt: &Checkpoint,
    layer: usize,
    calib: &CalibrationSet,
    tok: &BpeTokenizer,
    criterion: Criterion,
) -> Result<f64> {
    let n_layers = ckpt.layers.len();
    if layer >= n_layers {
        return Err(Error::BadLayerIndex { layer, n_layers });
    }
    let samples = calib.encode(tok)?;
    match criterion {
        Criterion::Perplexity => perplexity(ckpt, &samples, LayerSelection::Skip(layer)),
        Criterion::Kl => {
            let baseline = Baseline::compute(ckpt, &samples)?;
            mean_kl_against(&baseline, ckpt, &samples, LayerSelection::Skip(layer))
        }
        _ => Ok(layer_scores_encoded(ckpt, &samples, criterion)?[layer]),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checkpoint::TransformerConfig;
    use crate::toy;
    use alloc::vec;
    use alloc::vec::Vec;

    fn dist(p: &[f64]) -> Distribution {
        Distribution { probs: p.to_vec() }
    }

    #[test]
    fn kl_hand_values() {
        let a = kl_divergence(&dist(&[0.5, 0.5]), &dist(&[0.25, 0.75])).unwrap();
        let want = 0.5 * libm::log(2.0) + 0.5 * libm::log(2.0 / 3.0);
        assert!((a - want).abs() < 1e-15);
        assert!((a - 0.143841).abs() < 1e-6);
        let b = kl_divergence(&dist(&[1.0, 0.0, 0.0, 0.0]), &dist(&[0.25; 4])).unwrap();
        assert!((b - 1.386294).abs() < 1e-6);
        assert_eq!(kl_divergence(&dist(&[0.3, 0.7]), &dist(&[0.3, 0.7])).unwrap(), 0.0);
    }

    #[test]
    fn kl_length_mismatch_and_clamp() {
        assert_eq!(
            kl_divergence(&dist(&[1.0]), &dist(&[0.5, 0.5])),
            Err(Error::LengthMismatch { left: 1, right: 2 })
        );
        let v = kl_divergence(&dist(&[0.5, 0.5]), &dist(&[1.0, 0.0])).unwrap();
        assert!(v.is_finite() && v > 10.0);
    }

    fn fixture() -> (Checkpoint, BpeTokenizer, CalibrationSet) {
        let corpus = toy::code_corpus(40, 11);
        let tok = toy::learn_tokenizer(&corpus, 290);
        let mut cfg = TransformerConfig::toy(tok.len(), 16, 3, 4, 2, 24);
        cfg.lm_bias = true;
        let ckpt = Checkpoint::random(cfg, 5);
        let samples = corpus[..4]
            .iter()
            .enumerate()
            .map(|(i, doc)| {
                let (prompt, reference) = doc.split_at(doc.len() / 2);
                CalibrationSample {
                    id: alloc::format!("s{i}"),
                    prompt: prompt.into(),
                    reference: reference.into(),
                    tests: None,
                }
            })
            .collect();
        let calib = CalibrationSet::new(samples, &tok);
        (ckpt, tok, calib)
    }

    #[test]
    fn mean_kl_of_identical_models_is_zero() {
        let (ckpt, tok, calib) = fixture();
        assert!(mean_calibration_kl(&ckpt, &ckpt, &calib, &tok).unwrap().abs() < 1e-9);
    }

    #[test]
    fn mean_kl_against_uniform_head_has_closed_form() {
        let (ckpt, tok, calib) = fixture();
        let mut flat = ckpt.clone();
        flat.lm_head.as_mut().unwrap().data.fill(0.0);
        flat.lm_bias.as_mut().unwrap().fill(0.0);
        let got = mean_calibration_kl(&ckpt, &flat, &calib, &tok).unwrap();

        let v = ckpt.config.vocab_size as f64;
        let samples = calib.encode(&tok).unwrap();
        let base = Baseline::compute(&ckpt, &samples).unwrap();
        let per_pos: Vec<f64> = base
            .per_sample
            .iter()
            .flatten()
            .map(|d| d.probs.iter().map(|&p| p * libm::log(p * v)).sum())
            .collect();
        let want = per_pos.iter().sum::<f64>() / per_pos.len() as f64;
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    }

    #[test]
    fn vocab_mismatch_and_fingerprint() {
        let (ckpt, tok, calib) = fixture();
        let other = Checkpoint::random(TransformerConfig::toy(300, 16, 3, 4, 2, 24), 1);
        assert!(matches!(mean_calibration_kl(&ckpt, &other, &calib, &tok), Err(Error::VocabMismatch { .. })));
        let tok2 = toy::learn_tokenizer(&toy::code_corpus(10, 1), 290);
        assert_eq!(calib.encode(&tok2), Err(Error::FingerprintMismatch));
        let empty = CalibrationSet::new(vec![], &tok);
        assert_eq!(mean_calibration_kl(&ckpt, &ckpt, &empty, &tok), Err(Error::EmptyCalibration));
    }

    #[test]
    fn identity_layer_scores() {
        let (mut ckpt, tok, calib) = fixture();
        toy::zero_residual_branches(&mut ckpt, 1);
        let samples = calib.encode(&tok).unwrap();
        let base_ppl = perplexity(&ckpt, &samples, LayerSelection::All).unwrap();
        assert!((layer_score(&ckpt, 1, &calib, &tok, Criterion::Cosine).unwrap() - 1.0).abs() < 1e-6);
        assert!(layer_score(&ckpt, 1, &calib, &tok, Criterion::Angular).unwrap().abs() < 1e-6);
        assert!((layer_score(&ckpt, 1, &calib, &tok, Criterion::Perplexity).unwrap() - base_ppl).abs() < 1e-6);
        assert!(layer_score(&ckpt, 1, &calib, &tok, Criterion::Kl).unwrap().abs() < 1e-12);
        assert_eq!(
            layer_score(&ckpt, 3, &calib, &tok, Criterion::Cosine),
            Err(Error::BadLayerIndex { layer: 3, n_layers: 3 })
        );
    }

    #[test]
    fn all_criteria_rank_identity_layer_first() {
        let (mut ckpt, tok, calib) = fixture();
        toy::zero_residual_branches(&mut ckpt, 2);
        let samples = calib.encode(&tok).unwrap();
        for criterion in Criterion::ALL {
            let scores = layer_scores_encoded(&ckpt, &samples, criterion).unwrap();
            let mut best = 0;
            for (l, &s) in scores.iter().enumerate() {
                if criterion.better(s, scores[best]) {
                    best = l;
                }
            }
            assert_eq!(best, 2, "{criterion:?}: {scores:?}");
        }
    }

    #[test]
    fn criterion_names_round_trip() {
        for c in Criterion::ALL {
            assert_eq!(Criterion::parse(c.name()), Some(c));
        }
        assert_eq!(Criterion::parse("taylor"), None);
    }
}
