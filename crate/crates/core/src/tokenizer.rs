//! Byte-level BPE and vocabulary pruning.
//!
//! Merges are applied over the whole byte string of a document (there is no
//! pre-tokenisation split). At every step the lowest-ranked applicable merge
//! fires on all of its non-overlapping occurrences, left to right.
//!
//! Pruning keeps a token only if it was produced while encoding the
//! collection corpus, either as a final token or as an intermediate merge
//! product. Recording intermediates keeps every retained token reachable
//! through retained merges, which makes the pruned tokenizer reproduce the
//! original segmentation on that corpus exactly.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct BpeTokenizer {
    /// id → byte sequence; `None` marks a special-token id.
    pieces: Vec<Option<Vec<u8>>>,
    vocab: BTreeMap<Vec<u8>, u32>,
    merges: Vec<(Vec<u8>, Vec<u8>)>,
    special_tokens: BTreeMap<String, u32>,
    byte_ids: [u32; 256],
    /// (left id, right id) → (rank, merged id)
    merge_index: BTreeMap<(u32, u32), (u32, u32)>,
}

impl BpeTokenizer {
    /// Builds a tokenizer and checks its invariants: dense ids across vocab and
    /// specials, every merge side and product in the vocab, all 256 single
    /// bytes present.
    pub fn new(
        vocab: impl IntoIterator<Item = (Vec<u8>, u32)>,
        merges: Vec<(Vec<u8>, Vec<u8>)>,
        special_tokens: BTreeMap<String, u32>,
    ) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (piece, id) in vocab {
            if piece.is_empty() {
                return Err(Error::InvalidTokenizer(String::from("empty token in vocab")));
            }
            if map.insert(piece.clone(), id).is_some() {
                return Err(Error::InvalidTokenizer(format!("duplicate token {piece:?}")));
            }
        }
        let total = map.len() + special_tokens.len();
        let mut pieces: Vec<Option<Vec<u8>>> = Vec::new();
        pieces.resize(total, None);
        let mut seen = alloc::vec![false; total];
        let mut claim = |id: u32, what: &dyn core::fmt::Debug| -> Result<()> {
            let slot = seen.get_mut(id as usize).ok_or_else(|| {
                Error::InvalidTokenizer(format!("id {id} of {what:?} breaks dense numbering 0..{total}"))
            })?;
            if *slot {
                return Err(Error::InvalidTokenizer(format!("id {id} assigned twice ({what:?})")));
            }
            *slot = true;
            Ok(())
        };
        for (piece, &id) in &map {
            claim(id, piece)?;
        }
        for (name, &id) in &special_tokens {
            claim(id, name)?;
        }
        for (piece, &id) in &map {
            pieces[id as usize] = Some(piece.clone());
        }

        let mut byte_ids = [0u32; 256];
        for b in 0..=255u8 {
            byte_ids[b as usize] = *map
                .get(&[b][..])
                .ok_or_else(|| Error::InvalidTokenizer(format!("byte token {b:#04x} missing")))?;
        }

        let mut merge_index = BTreeMap::new();
        for (rank, (left, right)) in merges.iter().enumerate() {
            let mut joined = left.clone();
            joined.extend_from_slice(right);
            let lookup = |p: &Vec<u8>| {
                map.get(p).copied().ok_or_else(|| {
                    Error::InvalidTokenizer(format!("merge {rank} refers to unknown token {p:?}"))
                })
            };
            let (l, r, m) = (lookup(left)?, lookup(right)?, lookup(&joined)?);
            // a repeated pair can never fire at its later rank
            merge_index.entry((l, r)).or_insert((rank as u32, m));
        }

        Ok(Self { pieces, vocab: map, merges, special_tokens, byte_ids, merge_index })
    }

    /// Total number of ids, special tokens included.
    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn vocab(&self) -> &BTreeMap<Vec<u8>, u32> {
        &self.vocab
    }

    pub fn merges(&self) -> &[(Vec<u8>, Vec<u8>)] {
        &self.merges
    }

    pub fn special_tokens(&self) -> &BTreeMap<String, u32> {
        &self.special_tokens
    }

    pub fn token_id(&self, piece: &[u8]) -> Option<u32> {
        self.vocab.get(piece).copied()
    }

    pub fn special_id(&self, name: &str) -> Option<u32> {
        self.special_tokens.get(name).copied()
    }

    /// Byte content of a non-special id.
    pub fn piece(&self, id: u32) -> Option<&[u8]> {
        self.pieces.get(id as usize)?.as_deref()
    }

    pub fn encode(&self, text: &[u8]) -> Vec<u32> {
        self.encode_traced(text, |_, _| {})
    }

    /// Encodes `text`, calling `on_merge(rank, product_id)` for every merge
    /// application in the order they happen.
    pub fn encode_traced(&self, text: &[u8], mut on_merge: impl FnMut(u32, u32)) -> Vec<u32> {
        let mut ids: Vec<u32> = text.iter().map(|&b| self.byte_ids[b as usize]).collect();
        let mut next = Vec::with_capacity(ids.len());
        loop {
            let best = ids
                .windows(2)
                .filter_map(|w| self.merge_index.get(&(w[0], w[1])).map(|&(rank, _)| (rank, w[0], w[1])))
                .min();
            let Some((rank, left, right)) = best else { break };
            let merged = self.merge_index[&(left, right)].1;
            next.clear();
            let mut i = 0;
            while i < ids.len() {
                if i + 1 < ids.len() && ids[i] == left && ids[i + 1] == right {
                    next.push(merged);
                    on_merge(rank, merged);
                    i += 2;
                } else {
                    next.push(ids[i]);
                    i += 1;
                }
            }
            core::mem::swap(&mut ids, &mut next);
        }
        ids
    }

    /// Concatenates token bytes; special ids decode to their names.
    pub fn decode(&self, ids: &[u32]) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        for &id in ids {
            match self.pieces.get(id as usize) {
                Some(Some(piece)) => out.extend_from_slice(piece),
                Some(None) => {
                    let name = self.special_tokens.iter().find(|(_, &v)| v == id).map(|(k, _)| k);
                    out.extend_from_slice(name.map_or(&[][..], |n| n.as_bytes()));
                }
                None => return Err(Error::UnknownId(id)),
            }
        }
        Ok(out)
    }

    /// Token byte strings of an encoding, for comparing segmentations across
    /// tokenizers whose ids differ.
    pub fn token_strings(&self, text: &[u8]) -> Vec<Vec<u8>> {
        self.encode(text)
            .into_iter()
            .filter_map(|id| self.piece(id).map(|p| p.to_vec()))
            .collect()
    }

    /// FNV-1a digest over vocab, merges and special tokens.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Fnv64::new();
        for piece in &self.pieces {
            match piece {
                Some(p) => {
                    h.write(&(p.len() as u64).to_le_bytes());
                    h.write(p);
                }
                None => h.write(&u64::MAX.to_le_bytes()),
            }
        }
        for (l, r) in &self.merges {
            h.write(&(l.len() as u64).to_le_bytes());
            h.write(l);
            h.write(&(r.len() as u64).to_le_bytes());
            h.write(r);
        }
        for (name, id) in &self.special_tokens {
            h.write(name.as_bytes());
            h.write(&id.to_le_bytes());
        }
        h.finish()
    }
}

struct Fnv64(u64);

impl Fnv64 {
    fn new() -> Self {
        Self(0xcbf29ce484222325)
    }

    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x100000001b3);
        }
    }

    fn finish(&self) -> u64 {
        self.0
    }
}

/// Set of tokens a pruned vocabulary keeps.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TokenSet {
    pub tokens: BTreeSet<Vec<u8>>,
    pub specials: BTreeSet<String>,
}

impl TokenSet {
    /// The 256 byte tokens plus every special token of `tok`.
    pub fn floor(tok: &BpeTokenizer) -> Self {
        Self {
            tokens: (0..=255u8).map(|b| alloc::vec![b]).collect(),
            specials: tok.special_tokens.keys().cloned().collect(),
        }
    }

    pub fn contains(&self, piece: &[u8]) -> bool {
        self.tokens.contains(piece)
    }

    pub fn len(&self) -> usize {
        self.tokens.len() + self.specials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty() && self.specials.is_empty()
    }

    /// Keeps tokens whose usage count exceeds `threshold`, then re-adds the
    /// parts of the most used producing merge of any kept token that would
    /// otherwise be unreachable.
    pub fn from_usage(usage: &TokenUsage, tok: &BpeTokenizer, threshold: u64) -> Self {
        let mut set = Self::floor(tok);
        let mut work: Vec<u32> = usage
            .counts
            .iter()
            .filter(|&(_, &n)| n > threshold)
            .map(|(&id, _)| id)
            .collect();
        while let Some(id) = work.pop() {
            let Some(piece) = tok.piece(id) else { continue };
            if !set.tokens.insert(piece.to_vec()) || piece.len() == 1 {
                continue;
            }
            let Some(producers) = usage.producers.get(&id) else { continue };
            let reachable = producers.keys().any(|&rank| {
                let (l, r) = &tok.merges[rank as usize];
                set.tokens.contains(l) && set.tokens.contains(r)
            });
            if reachable {
                continue;
            }
            // most used producing merge, lowest rank on ties
            let (&rank, _) = producers
                .iter()
                .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
                .expect("producer map is never empty");
            let (l, r) = &tok.merges[rank as usize];
            for side in [l, r] {
                if !set.tokens.contains(side) {
                    work.push(tok.vocab[side]);
                }
            }
        }
        set
    }
}

/// Per-token usage statistics over a corpus.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TokenUsage {
    /// id → number of occurrences as a final token or merge product.
    pub counts: BTreeMap<u32, u64>,
    /// product id → (merge rank → applications).
    pub producers: BTreeMap<u32, BTreeMap<u32, u64>>,
}

pub fn count_tokens<D: AsRef<[u8]>>(corpus: &[D], tok: &BpeTokenizer) -> TokenUsage {
    let mut usage = TokenUsage::default();
    for doc in corpus {
        let ids = tok.encode_traced(doc.as_ref(), |rank, product| {
            *usage.producers.entry(product).or_default().entry(rank).or_insert(0) += 1;
            // intermediates count as used; the final occurrence is counted below
            *usage.counts.entry(product).or_insert(0) += 1;
        });
        for id in ids {
            let is_product = tok.piece(id).is_some_and(|p| p.len() > 1);
            if !is_product {
                *usage.counts.entry(id).or_insert(0) += 1;
            }
        }
    }
    usage
}

/// Every token produced while encoding `corpus` (final and intermediate),
/// plus all byte tokens and special tokens.
pub fn collect_tokens<D: AsRef<[u8]>>(corpus: &[D], tok: &BpeTokenizer) -> TokenSet {
    TokenSet::from_usage(&count_tokens(corpus, tok), tok, 0)
}

/// Order-preserving old-id → new-id mapping produced by vocabulary pruning.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdRemap {
    pub old_to_new: BTreeMap<u32, u32>,
    pub kept_old_ids: Vec<u32>,
}

impl IdRemap {
    pub fn from_kept(mut kept_old_ids: Vec<u32>) -> Self {
        kept_old_ids.sort_unstable();
        kept_old_ids.dedup();
        let old_to_new = kept_old_ids.iter().enumerate().map(|(new, &old)| (old, new as u32)).collect();
        Self { old_to_new, kept_old_ids }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_kept((0..n as u32).collect())
    }

    pub fn new_id(&self, old: u32) -> Option<u32> {
        self.old_to_new.get(&old).copied()
    }

    pub fn len(&self) -> usize {
        self.kept_old_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kept_old_ids.is_empty()
    }
}

/// Restricts `tok` to the tokens in `keep`.
///
/// New ids follow ascending original ids. A merge survives when its left side,
/// right side and product are all kept; survivors keep their relative order.
/// Special tokens always survive.
pub fn prune_tokenizer(tok: &BpeTokenizer, keep: &TokenSet) -> Result<(BpeTokenizer, IdRemap)> {
    for b in 0..=255u8 {
        if !keep.contains(&[b]) {
            return Err(Error::ClosureViolation { token: alloc::vec![b] });
        }
    }

    let mut kept: Vec<u32> = tok
        .vocab
        .iter()
        .filter(|(piece, _)| keep.contains(piece))
        .map(|(_, &id)| id)
        .collect();
    kept.extend(tok.special_tokens.values().copied());
    let remap = IdRemap::from_kept(kept);

    let merges: Vec<(Vec<u8>, Vec<u8>)> = tok
        .merges
        .iter()
        .filter(|(l, r)| {
            let mut joined = l.clone();
            joined.extend_from_slice(r);
            keep.contains(l) && keep.contains(r) && keep.contains(&joined)
        })
        .cloned()
        .collect();

    let products: BTreeSet<Vec<u8>> = merges
        .iter()
        .map(|(l, r)| {
            let mut joined = l.clone();
            joined.extend_from_slice(r);
            joined
        })
        .collect();
    for (piece, _) in tok.vocab.iter().filter(|(p, _)| keep.contains(p)) {
        if piece.len() > 1 && !products.contains(piece) {
            return Err(Error::ClosureViolation { token: piece.clone() });
        }
    }

    let vocab = tok
        .vocab
        .iter()
        .filter_map(|(piece, old)| remap.new_id(*old).map(|new| (piece.clone(), new)));
    let specials = tok
        .special_tokens
        .iter()
        .map(|(name, old)| (name.clone(), remap.new_id(*old).expect("specials are always kept")))
        .collect();
    let pruned = BpeTokenizer::new(vocab, merges, specials)?;
    Ok((pruned, remap))
}
