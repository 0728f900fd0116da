//! Tokenizer JSON, JSON-lines datasets, corpora and plain JSON reports.

use std::collections::BTreeMap;
use std::path::Path;

use prunekit_core::recovery::RecoverySample;
use prunekit_core::{BpeTokenizer, CalibrationSample};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TOKENIZER_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenizerFile {
    pub version: u32,
    pub vocab: Vec<(Vec<u8>, u32)>,
    pub merges: Vec<(Vec<u8>, Vec<u8>)>,
    #[serde(default)]
    pub special_tokens: BTreeMap<String, u32>,
}

impl TokenizerFile {
    /// Vocabulary entries are listed in id order.
    pub fn from_tokenizer(tok: &BpeTokenizer) -> Self {
        let mut vocab: Vec<(Vec<u8>, u32)> = tok.vocab().iter().map(|(b, &id)| (b.clone(), id)).collect();
        vocab.sort_by_key(|(_, id)| *id);
        Self {
            version: TOKENIZER_VERSION,
            vocab,
            merges: tok.merges().to_vec(),
            special_tokens: tok.special_tokens().clone(),
        }
    }

    pub fn into_tokenizer(self) -> Result<BpeTokenizer> {
        Ok(BpeTokenizer::new(self.vocab, self.merges, self.special_tokens)?)
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    serde_json::from_slice(&read(path)?).map_err(|e| Error::Format {
        path: path.into(),
        line: e.line(),
        message: e.to_string(),
    })
}

/// Pretty-printed JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    write(path.as_ref(), to_json(value).as_bytes())
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

pub fn load_tokenizer(path: impl AsRef<Path>) -> Result<BpeTokenizer> {
    let file: TokenizerFile = read_json(path.as_ref())?;
    if file.version != TOKENIZER_VERSION {
        return Err(Error::Format {
            path: path.as_ref().into(),
            line: 1,
            message: format!("unsupported tokenizer version {}", file.version),
        });
    }
    file.into_tokenizer()
}

pub fn save_tokenizer(tok: &BpeTokenizer, path: impl AsRef<Path>) -> Result<()> {
    let s = serde_json::to_string(&TokenizerFile::from_tokenizer(tok)).expect("tokenizer serializes");
    write(path.as_ref(), (s + "\n").as_bytes())
}

/// One value per non-blank line.
pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let text = String::from_utf8(read(path)?)
        .map_err(|e| Error::Format { path: path.into(), line: 0, message: e.to_string() })?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(line)
            .map_err(|e| Error::Format { path: path.into(), line: i + 1, message: e.to_string() })?;
        out.push(value);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, values: &[T]) -> Result<()> {
    let mut out = String::new();
    for v in values {
        out.push_str(&serde_json::to_string(v).expect("record serializes"));
        out.push('\n');
    }
    write(path.as_ref(), out.as_bytes())
}

pub fn load_calibration(path: impl AsRef<Path>) -> Result<Vec<CalibrationSample>> {
    read_jsonl(path)
}

pub fn load_recovery(path: impl AsRef<Path>) -> Result<Vec<RecoverySample>> {
    read_jsonl(path)
}

/// Corpus documents: every non-empty line of every file, or every whole
/// file when `whole_files` is set.
pub fn load_corpus(paths: &[impl AsRef<Path>], whole_files: bool) -> Result<Vec<String>> {
    let mut docs = Vec::new();
    for path in paths {
        let path = path.as_ref();
        let text = String::from_utf8(read(path)?)
            .map_err(|e| Error::Format { path: path.into(), line: 0, message: e.to_string() })?;
        if whole_files {
            docs.push(text);
        } else {
            docs.extend(text.lines().filter(|l| !l.is_empty()).map(String::from));
        }
    }
    Ok(docs)
}
