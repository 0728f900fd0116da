//! Writes small self-consistent fixture sets for trying the CLI.

use std::path::{Path, PathBuf};

use prunekit_core::recovery::{RecoverySample, TestCase};
use prunekit_core::{toy, CalibrationSample, Checkpoint, TransformerConfig};

use crate::error::{Error, Result};
use crate::files;
use crate::pfc;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToyOptions {
    pub n_layers: usize,
    pub vocab_size: usize,
    pub d_model: usize,
    pub intermediate: usize,
    pub documents: usize,
    pub calibration: usize,
    pub seed: u64,
}

impl Default for ToyOptions {
    fn default() -> Self {
        Self { n_layers: 4, vocab_size: 300, d_model: 16, intermediate: 24, documents: 120, calibration: 6, seed: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToyPaths {
    pub model: PathBuf,
    pub tokenizer: PathBuf,
    pub corpus: PathBuf,
    pub calib: PathBuf,
}

/// Random checkpoint with a tokenizer learned on the corpus lines, so the
/// corpus file covers every token. Calibration samples split corpus
/// documents in half and carry no tests.
pub fn write_toy(dir: &Path, opts: &ToyOptions) -> Result<ToyPaths> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let docs = toy::code_corpus(opts.documents, opts.seed);
    let lines: Vec<&str> = docs.iter().flat_map(|d| d.lines()).filter(|l| !l.is_empty()).collect();
    let tok = toy::learn_tokenizer(&lines, opts.vocab_size);
    let mut cfg = TransformerConfig::toy(tok.len(), opts.d_model, opts.n_layers, 4, 2, opts.intermediate);
    cfg.max_seq_len = 512;
    let ckpt = Checkpoint::random(cfg, opts.seed);
    let calib: Vec<CalibrationSample> = docs
        .iter()
        .take(opts.calibration)
        .enumerate()
        .map(|(i, d)| {
            let cut = d.find('\n').map_or(d.len() / 2, |p| p + 1);
            CalibrationSample { id: format!("toy{i}"), prompt: d[..cut].into(), reference: d[cut..].into(), tests: None }
        })
        .collect();
    let paths = ToyPaths {
        model: dir.join("model.pfc"),
        tokenizer: dir.join("tokenizer.json"),
        corpus: dir.join("corpus.txt"),
        calib: dir.join("calib.jsonl"),
    };
    pfc::save_checkpoint(&ckpt, &paths.model)?;
    files::save_tokenizer(&tok, &paths.tokenizer)?;
    let corpus = lines.join("\n") + "\n";
    std::fs::write(&paths.corpus, corpus).map_err(|e| Error::io(&paths.corpus, e))?;
    files::write_jsonl(&paths.calib, &calib)?;
    Ok(paths)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IncrementPaths {
    pub model: PathBuf,
    pub tokenizer: PathBuf,
    pub tasks: PathBuf,
    pub recovery: PathBuf,
    pub executor: PathBuf,
}

/// The `inc n` task model (solves single-digit `n < 9`), a task file with
/// tests expecting `n + 1`, the same tasks as a recovery dataset, and an
/// executor script that prints the submitted code.
pub fn write_increment(dir: &Path, ns: &[u32]) -> Result<IncrementPaths> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let tok = toy::digit_tokenizer();
    let ckpt = toy::increment_model(&tok);
    let paths = IncrementPaths {
        model: dir.join("inc.pfc"),
        tokenizer: dir.join("inc_tokenizer.json"),
        tasks: dir.join("inc_tasks.jsonl"),
        recovery: dir.join("inc_recovery.jsonl"),
        executor: dir.join("echo_executor.py"),
    };
    let tests = |n: u32| vec![TestCase { input: String::new(), expected: (n + 1).to_string() }];
    let tasks: Vec<CalibrationSample> = ns
        .iter()
        .map(|&n| CalibrationSample {
            id: format!("inc{n}"),
            prompt: format!("inc {n}"),
            reference: (n + 1).to_string(),
            tests: Some(tests(n)),
        })
        .collect();
    let recovery: Vec<RecoverySample> = ns
        .iter()
        .map(|&n| RecoverySample {
            id: format!("inc{n}"),
            prompt: format!("inc {n}"),
            target: format!("return {n} + 1"),
            tests: tests(n),
            replaced: false,
        })
        .collect();
    pfc::save_checkpoint(&ckpt, &paths.model)?;
    files::save_tokenizer(&tok, &paths.tokenizer)?;
    files::write_jsonl(&paths.tasks, &tasks)?;
    files::write_jsonl(&paths.recovery, &recovery)?;
    let script = "import json, sys\nprint(json.load(sys.stdin)[\"code\"])\n";
    std::fs::write(&paths.executor, script).map_err(|e| Error::io(&paths.executor, e))?;
    Ok(paths)
}
