//! Deterministic desk-scale fixtures: synthetic code corpora, small BPE
//! vocabularies and hand-wired checkpoints with known behaviour.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::checkpoint::{Checkpoint, TransformerConfig};
use crate::rng::Lcg64;
use crate::tokenizer::BpeTokenizer;

pub const EOS: &str = "<|endoftext|>";

/// Zeroes the attention output and FFN down projections of `layer`, so the
/// block adds exactly zero to the residual stream.
pub fn zero_residual_branches(ckpt: &mut Checkpoint, layer: usize) {
    let l = &mut ckpt.layers[layer];
    l.wo.data.fill(0.0);
    l.w_down.data.fill(0.0);
}

const NAMES: [&str; 16] = [
    "count", "total", "items", "value", "index", "result", "buffer", "left", "right", "node", "key",
    "data", "size", "acc", "word", "line",
];
const FUNCS: [&str; 10] =
    ["add", "merge", "parse", "scale", "find", "update", "flatten", "reverse", "collect", "check"];
const OPS: [&str; 6] = ["+", "-", "*", "//", "%", "**"];

/// `n` small Python-like snippets; identical `(n, seed)` gives identical text.
pub fn code_corpus(n: usize, seed: u64) -> Vec<String> {
    let mut rng = Lcg64::new(seed);
    let mut pick = |items: &[&'static str]| items[rng.below(items.len() as u32) as usize];
    (0..n)
        .map(|i| {
            let (f, a, b, op) = (pick(&FUNCS), pick(&NAMES), pick(&NAMES), pick(&OPS));
            let num = (i * 37 + a.len() * 11) % 100;
            match i % 6 {
                0 => format!("def {f}({a}, {b}):\n    return {a} {op} {b}\n"),
                1 => format!("def {f}({a}):\n    {b} = 0\n    for x in {a}:\n        {b} = {b} {op} x\n    return {b}\n"),
                2 => format!("{a} = [{num}, {}, {}]\nprint({f}({a}))\n", num + 1, num * 2),
                3 => format!("if {a} > {num}:\n    {b} = {a} {op} {num}\nelse:\n    {b} = {num}\n"),
                4 => format!("class {}:\n    def __init__(self, {a}):\n        self.{a} = {a}\n", capitalise(f)),
                _ => format!("while {a} < {num}:\n    {a} = {f}({a}, {b})\n"),
            }
        })
        .collect()
}

fn capitalise(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    if let Some(c) = chars.next() {
        out.extend(c.to_uppercase());
    }
    out.extend(chars);
    out
}

/// Builds a byte-level BPE vocabulary of exactly `vocab_size` ids (one of
/// them the [`EOS`] special) by repeatedly merging the most frequent
/// adjacent pair of `corpus`. Fixture construction only.
pub fn learn_tokenizer<D: AsRef<[u8]>>(corpus: &[D], vocab_size: usize) -> BpeTokenizer {
    assert!(vocab_size >= 257, "vocabulary must hold 256 bytes and one special token");
    let mut pieces: Vec<Vec<u8>> = (0..=255u8).map(|b| vec![b]).collect();
    let mut index: BTreeMap<Vec<u8>, u32> = pieces.iter().enumerate().map(|(i, p)| (p.clone(), i as u32)).collect();
    let mut seqs: Vec<Vec<u32>> =
        corpus.iter().map(|d| d.as_ref().iter().map(|&b| b as u32).collect()).collect();
    let mut merges = Vec::new();

    while pieces.len() < vocab_size - 1 {
        let mut counts: BTreeMap<(u32, u32), usize> = BTreeMap::new();
        for s in &seqs {
            for w in s.windows(2) {
                *counts.entry((w[0], w[1])).or_insert(0) += 1;
            }
        }
        // most frequent; BTreeMap order makes ties deterministic
        let Some((&(l, r), _)) = counts
            .iter()
            .filter(|(pair, _)| !merges.contains(&(pieces[pair.0 as usize].clone(), pieces[pair.1 as usize].clone())))
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
        else {
            break;
        };
        let mut joined = pieces[l as usize].clone();
        joined.extend_from_slice(&pieces[r as usize]);
        let id = match index.get(&joined) {
            Some(&id) => id,
            None => {
                let id = pieces.len() as u32;
                pieces.push(joined.clone());
                index.insert(joined, id);
                id
            }
        };
        merges.push((pieces[l as usize].clone(), pieces[r as usize].clone()));
        for s in &mut seqs {
            let mut out = Vec::with_capacity(s.len());
            let mut i = 0;
            while i < s.len() {
                if i + 1 < s.len() && s[i] == l && s[i + 1] == r {
                    out.push(id);
                    i += 2;
                } else {
                    out.push(s[i]);
                    i += 1;
                }
            }
            *s = out;
        }
    }
    // pad with unused two-byte tokens if the corpus ran out of pairs
    let mut filler = 0u32;
    while pieces.len() < vocab_size - 1 {
        let candidate = vec![0xF0 | (filler >> 8) as u8 & 0x0F, filler as u8];
        filler += 1;
        if index.contains_key(&candidate) {
            continue;
        }
        merges.push((vec![candidate[0]], vec![candidate[1]]));
        index.insert(candidate.clone(), pieces.len() as u32);
        pieces.push(candidate);
    }
    let specials = [(String::from(EOS), pieces.len() as u32)].into_iter().collect();
    let vocab = pieces.into_iter().enumerate().map(|(i, p)| (p, i as u32));
    BpeTokenizer::new(vocab, merges, specials).expect("learned tokenizer is consistent")
}

/// Checkpoint whose greedy next token depends only on the current token:
/// `transitions[t]` follows `t`, every other token is followed by `fallback`.
///
/// Embeddings are one-hot and all layer branches are zero, so the final
/// hidden state is a scaled one-hot vector and the head acts as a lookup.
pub fn lookup_model(
    vocab_size: usize,
    transitions: &BTreeMap<u32, u32>,
    fallback: u32,
    n_layers: usize,
) -> Checkpoint {
    let d = (vocab_size + 1) & !1;
    let mut config = TransformerConfig::toy(vocab_size, d, n_layers, 2, 1, 4);
    config.max_seq_len = 512;
    let mut ckpt = Checkpoint::zeros(config);
    for t in 0..vocab_size {
        ckpt.embed.set(t, t, 1.0);
    }
    let head = ckpt.lm_head.as_mut().expect("toy configs are untied");
    for t in 0..vocab_size as u32 {
        let next = transitions.get(&t).copied().unwrap_or(fallback);
        head.set(t as usize, next as usize, 1.0);
    }
    ckpt
}

/// Byte tokens, one merged token per `" d"` (space + digit) and [`EOS`].
pub fn digit_tokenizer() -> BpeTokenizer {
    let mut vocab: Vec<(Vec<u8>, u32)> = (0..=255u8).map(|b| (vec![b], b as u32)).collect();
    let mut merges = Vec::new();
    for d in b'0'..=b'9' {
        vocab.push((vec![b' ', d], vocab.len() as u32));
        merges.push((vec![b' '], vec![d]));
    }
    let specials = [(String::from(EOS), vocab.len() as u32)].into_iter().collect();
    BpeTokenizer::new(vocab, merges, specials).expect("digit tokenizer is consistent")
}

/// Model over [`digit_tokenizer`] that answers a prompt ending in `" d"`
/// with the single digit `(d + 1) mod 10` and then emits [`EOS`]; any other
/// final token is answered with [`EOS`]. Prompts `"inc n"` are therefore
/// solved exactly for single-digit `n < 9`.
pub fn increment_model(tok: &BpeTokenizer) -> Checkpoint {
    let eos = tok.special_id(EOS).expect("digit tokenizer has EOS");
    let mut transitions = BTreeMap::new();
    for d in 0..10u8 {
        let spaced = tok.token_id(&[b' ', b'0' + d]).expect("spaced digit token");
        let next = tok.token_id(&[b'0' + (d + 1) % 10]).expect("digit token");
        transitions.insert(spaced, next);
    }
    lookup_model(tok.len(), &transitions, eos, 2)
}
