//! Recovery-dataset construction: regenerate each target with the original
//! model and keep the generation only when it passes every test case.
//!
//! Training on the resulting dataset happens outside this crate.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::model::greedy_decode;
use crate::tokenizer::BpeTokenizer;
use crate::Result;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestCase {
    pub input: String,
    pub expected: String,
}

/// Verdict of one test execution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TestOutcome {
    pub passed: bool,
    pub timed_out: bool,
}

impl TestOutcome {
    pub fn pass() -> Self {
        Self { passed: true, timed_out: false }
    }

    pub fn fail() -> Self {
        Self { passed: false, timed_out: false }
    }
}

/// Runs candidate code against test cases. Test failures are outcomes, not
/// errors; only an unusable executor is an error.
pub trait CodeRunner {
    fn run_tests(&self, code: &str, tests: &[TestCase]) -> Result<Vec<TestOutcome>>;
}

/// In-process runner backed by a predicate, for stubs and fixtures.
pub struct FnRunner<F>(pub F);

impl<F: Fn(&str, &TestCase) -> bool> CodeRunner for FnRunner<F> {
    fn run_tests(&self, code: &str, tests: &[TestCase]) -> Result<Vec<TestOutcome>> {
        Ok(tests
            .iter()
            .map(|t| if (self.0)(code, t) { TestOutcome::pass() } else { TestOutcome::fail() })
            .collect())
    }
}

impl<R: CodeRunner + ?Sized> CodeRunner for &R {
    fn run_tests(&self, code: &str, tests: &[TestCase]) -> Result<Vec<TestOutcome>> {
        (**self).run_tests(code, tests)
    }
}

/// True iff `tests` is non-empty and every test passes.
pub fn passes_all(runner: &dyn CodeRunner, code: &str, tests: &[TestCase]) -> Result<bool> {
    if tests.is_empty() {
        return Ok(false);
    }
    Ok(runner.run_tests(code, tests)?.iter().all(|o| o.passed))
}

/// Greedy generation for `prompt`, stopping at any special token, decoded
/// as (lossy) UTF-8.
pub fn generate_text(ckpt: &Checkpoint, tok: &BpeTokenizer, prompt: &str, max_new: usize) -> Result<String> {
    let stop: Vec<u32> = tok.special_tokens().values().copied().collect();
    let ids = greedy_decode(ckpt, &tok.encode(prompt.as_bytes()), max_new, &stop)?;
    let bytes = tok.decode(&ids)?;
    Ok(String::from_utf8_lossy(&bytes).into_owned())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecoverySample {
    pub id: String,
    pub prompt: String,
    pub target: String,
    #[serde(default)]
    pub tests: Vec<TestCase>,
    /// Set when `target` was replaced by a verified original-model generation.
    #[serde(default)]
    pub replaced: bool,
}

/// Replaces each target with the original model's generation when that
/// generation passes all of the sample's tests. Samples without tests are
/// left untouched; size and order are preserved.
pub fn build_recovery_dataset(
    data: &[RecoverySample],
    original: &Checkpoint,
    tok: &BpeTokenizer,
    runner: &dyn CodeRunner,
    max_new: usize,
) -> Result<Vec<RecoverySample>> {
    original.ensure_valid()?;
    data.iter()
        .map(|sample| {
            let mut out = sample.clone();
            out.replaced = false;
            if sample.tests.is_empty() {
                return Ok(out);
            }
            let code = generate_text(original, tok, &sample.prompt, max_new)?;
            if passes_all(runner, &code, &sample.tests)? {
                out.target = code;
                out.replaced = true;
            }
            Ok(out)
        })
        .collect()
}
