#![allow(dead_code)]

use prunekit_core::model::{forward_logits, teacher_forced_input};
use prunekit_core::objective::EncodedSample;
use prunekit_core::recovery::TestCase;
use prunekit_core::{toy, BpeTokenizer, CalibrationSample, CalibrationSet, Checkpoint, TransformerConfig};

pub fn sample(id: &str, prompt: &str, reference: &str, tests: Option<Vec<TestCase>>) -> CalibrationSample {
    CalibrationSample { id: id.into(), prompt: prompt.into(), reference: reference.into(), tests }
}

/// Learned 300-token tokenizer, random checkpoint and calibration set of
/// split corpus documents.
pub fn random_setup(n_layers: usize, seed: u64) -> (Checkpoint, BpeTokenizer, CalibrationSet) {
    let corpus = toy::code_corpus(60, 7);
    let tok = toy::learn_tokenizer(&corpus, 300);
    let cfg = TransformerConfig::toy(tok.len(), 16, n_layers, 4, 2, 24);
    let ckpt = Checkpoint::random(cfg, seed);
    let samples = corpus[..4]
        .iter()
        .enumerate()
        .map(|(i, doc)| {
            let (p, r) = doc.split_at(doc.len() / 2);
            sample(&format!("c{i}"), p, r, None)
        })
        .collect();
    let calib = CalibrationSet::new(samples, &tok);
    (ckpt, tok, calib)
}

pub fn softmax(logits: &[f32]) -> Vec<f64> {
    let max = logits.iter().fold(f32::NEG_INFINITY, |m, &x| m.max(x)) as f64;
    let e: Vec<f64> = logits.iter().map(|&x| (x as f64 - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

pub fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).filter(|(p, _)| **p > 0.0).map(|(p, q)| p * (p / q.max(1e-12)).ln()).sum()
}

/// Mean KL over every teacher-forced reference position, computed from
/// full forward passes of two materialized checkpoints.
pub fn oracle_mean_kl(original: &Checkpoint, candidate: &Checkpoint, samples: &[EncodedSample]) -> f64 {
    let (mut total, mut n) = (0.0, 0usize);
    for s in samples {
        let input = teacher_forced_input(&s.prompt, &s.reference);
        let a = forward_logits(original, &input).unwrap();
        let b = forward_logits(candidate, &input).unwrap();
        for row in s.prompt.len() - 1..input.len() {
            total += kl(&softmax(a.row(row)), &softmax(b.row(row)));
            n += 1;
        }
    }
    total / n as f64
}

/// Digit tokenizer, increment model and `inc n` tasks expecting `n + 1`.
pub fn increment_setup(ns: &[u32]) -> (Checkpoint, BpeTokenizer, CalibrationSet) {
    let tok = toy::digit_tokenizer();
    let ckpt = toy::increment_model(&tok);
    let samples = ns
        .iter()
        .map(|n| {
            let want = (n + 1).to_string();
            let tests = vec![TestCase { input: String::new(), expected: want.clone() }];
            sample(&format!("inc{n}"), &format!("inc {n}"), &want, Some(tests))
        })
        .collect();
    let calib = CalibrationSet::new(samples, &tok);
    (ckpt, tok, calib)
}
