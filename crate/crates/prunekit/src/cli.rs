//! The `prunekit` command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 I/O or file-format error,
//! 3 validation or precondition failure. Failures print one line
//! `error kind=<Kind> exit=<code> message=<json string>` to stderr.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use prunekit_core::metrics::{self, MetricSet, PlanShape};
use prunekit_core::objective::Baseline;
use prunekit_core::pruner::{self, PipelineOptions, PrunePlan};
use prunekit_core::recovery::{build_recovery_dataset, CodeRunner};
use prunekit_core::tokenizer::{count_tokens, prune_tokenizer};
use prunekit_core::{BpeTokenizer, CalibrationSet, Checkpoint, Criterion, IdRemap, TokenSet, TransformerConfig};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::executor::ProcessExecutor;
use crate::files::{self, to_json};
use crate::pfc;
use crate::SystemClock;

#[derive(Debug, Parser)]
#[command(name = "prunekit", version, about = "Structured pruning toolkit for decoder-only code models")]
pub struct Cli {
    /// JSON object of default flag values (keys are flag names, `_` or `-`);
    /// flags given on the command line take precedence.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print a checkpoint's config, tensor shapes and parameter count as JSON.
    Inspect(InspectArgs),
    /// Drop tokens the corpus never uses from the tokenizer and the model.
    PruneVocab(PruneVocabArgs),
    /// Remove layers one at a time by a redundancy criterion.
    PruneLayers(PruneLayersArgs),
    /// Remove FFN neurons from every layer using the best of four keep rules.
    PruneFfn(PruneFfnArgs),
    /// Vocabulary, then layer, then FFN pruning.
    Prune(PruneArgs),
    /// Score every layer as a removal candidate and print CSV.
    ScoreLayers(ScoreLayersArgs),
    /// Greedy-decode calibration prompts and report Pass@1, BLEU-4 and EM.
    Eval(EvalArgs),
    /// Replace dataset targets with verified generations of the original model.
    BuildRecovery(BuildRecoveryArgs),
    /// Analytic parameter count, FLOPs per token and break-even point.
    ReportEfficiency(ReportEfficiencyArgs),
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// PFC1 checkpoint.
    #[arg(long, value_name = "PATH")]
    pub model: PathBuf,
    /// Tokenizer JSON matching the checkpoint vocabulary.
    #[arg(long, value_name = "PATH")]
    pub tokenizer: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExecArgs {
    /// Test executor command line (split on whitespace), invoked as
    /// `<command> --timeout <seconds>` with `{"code","input"}` on stdin.
    #[arg(long, value_name = "COMMAND")]
    pub executor: Option<String>,
    /// Per-test timeout in seconds.
    #[arg(long, default_value_t = 10.0)]
    pub timeout: f64,
    /// Maximum concurrently running test processes (default: available cores).
    #[arg(long)]
    pub procs: Option<usize>,
    /// Environment variables passed through to the executor.
    #[arg(long = "env-allow", value_name = "NAME", default_values_t = [String::from("PATH")])]
    pub env_allow: Vec<String>,
}

impl ExecArgs {
    fn executor(&self) -> Result<Option<ProcessExecutor>> {
        let Some(line) = &self.executor else { return Ok(None) };
        if !(self.timeout.is_finite() && self.timeout > 0.0) {
            return Err(Error::Usage(format!("--timeout must be positive, got {}", self.timeout)));
        }
        let mut exec = ProcessExecutor::from_command_line(line, Duration::from_secs_f64(self.timeout))?
            .with_env_allowlist(self.env_allow.clone());
        if let Some(n) = self.procs {
            exec = exec.with_max_procs(n);
        }
        Ok(Some(exec))
    }

    fn required(&self, what: &str) -> Result<ProcessExecutor> {
        self.executor()?.ok_or_else(|| Error::Usage(format!("{what} needs --executor")))
    }
}

#[derive(Debug, Args)]
pub struct CorpusArgs {
    /// Corpus files; every non-empty line is one document.
    #[arg(long, value_name = "PATH", required = true, num_args = 1..)]
    pub corpus: Vec<PathBuf>,
    /// Treat each corpus file as a single document.
    #[arg(long)]
    pub whole_files: bool,
    /// Keep only tokens used more often than this (0 keeps every used token).
    #[arg(long, default_value_t = 0)]
    pub threshold: u64,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long, value_name = "PATH")]
    pub model: PathBuf,
    /// Write the JSON here instead of stdout.
    #[arg(long, value_name = "PATH")]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PruneVocabArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long, value_name = "PATH")]
    pub out_model: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub out_tokenizer: PathBuf,
    /// Plan JSON (default: `<out-model>.plan.json`).
    #[arg(long, value_name = "PATH")]
    pub plan_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PruneLayersArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Calibration set, JSON lines.
    #[arg(long, value_name = "PATH")]
    pub calib: PathBuf,
    #[arg(long)]
    pub k_layers: usize,
    #[arg(long, value_enum, default_value_t = CriterionArg::Kl)]
    pub criterion: CriterionArg,
    #[command(flatten)]
    pub exec: ExecArgs,
    /// Trust the calibration references and skip test-based filtering.
    #[arg(long)]
    pub pre_verified: bool,
    /// Generation budget for filtering.
    #[arg(long, default_value_t = 512)]
    pub max_new: usize,
    #[arg(long, value_name = "PATH")]
    pub out_model: PathBuf,
    /// Plan JSON (default: `<out-model>.plan.json`).
    #[arg(long, value_name = "PATH")]
    pub plan_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PruneFfnArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Calibration set, JSON lines.
    #[arg(long, value_name = "PATH")]
    pub calib: PathBuf,
    /// Neurons removed from every layer.
    #[arg(long)]
    pub ffn_remove: usize,
    /// Seed of the random keep rule.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_name = "PATH")]
    pub out_model: PathBuf,
    /// Plan JSON (default: `<out-model>.plan.json`).
    #[arg(long, value_name = "PATH")]
    pub plan_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PruneArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Calibration set, JSON lines.
    #[arg(long, value_name = "PATH")]
    pub calib: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub k_layers: usize,
    /// Neurons removed from every layer.
    #[arg(long, default_value_t = 0)]
    pub ffn_remove: usize,
    #[arg(long, value_enum, default_value_t = CriterionArg::Kl)]
    pub criterion: CriterionArg,
    /// Seed of the random keep rule.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub exec: ExecArgs,
    /// Trust the calibration references and skip test-based filtering.
    #[arg(long)]
    pub pre_verified: bool,
    /// Generation budget for filtering.
    #[arg(long, default_value_t = 512)]
    pub max_new: usize,
    #[arg(long, value_name = "PATH")]
    pub out_model: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub out_tokenizer: PathBuf,
    /// Plan JSON (default: `<out-model>.plan.json`).
    #[arg(long, value_name = "PATH")]
    pub plan_out: Option<PathBuf>,
    /// Also write the pipeline report JSON here.
    #[arg(long, value_name = "PATH")]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScoreLayersArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Calibration set, JSON lines.
    #[arg(long, value_name = "PATH")]
    pub calib: PathBuf,
    #[arg(long, value_enum, default_value_t = CriterionArg::Kl)]
    pub criterion: CriterionArg,
    /// Write the CSV here instead of stdout.
    #[arg(long, value_name = "PATH")]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Evaluation samples, JSON lines in the calibration format.
    #[arg(long, value_name = "PATH")]
    pub calib: PathBuf,
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [MetricArg::Bleu4, MetricArg::Em])]
    pub metrics: Vec<MetricArg>,
    #[command(flatten)]
    pub exec: ExecArgs,
    #[arg(long, default_value_t = 512)]
    pub max_new: usize,
    /// Write the JSON report here instead of stdout.
    #[arg(long, value_name = "PATH")]
    pub output: Option<PathBuf>,
    /// Per-sample verdicts as CSV.
    #[arg(long, value_name = "PATH")]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BuildRecoveryArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Dataset, JSON lines of {"id","prompt","target","tests","replaced"}.
    #[arg(long, value_name = "PATH")]
    pub data: PathBuf,
    #[command(flatten)]
    pub exec: ExecArgs,
    #[arg(long, default_value_t = 512)]
    pub max_new: usize,
    #[arg(long, value_name = "PATH")]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportEfficiencyArgs {
    /// Dense model: PFC1 checkpoint or config JSON.
    #[arg(long, value_name = "PATH", conflicts_with = "reference_7b")]
    pub dense: Option<PathBuf>,
    /// Pruned model: PFC1 checkpoint or config JSON.
    #[arg(long, value_name = "PATH")]
    pub pruned: Option<PathBuf>,
    /// Use the built-in 7B code-model config as the dense model and, unless
    /// another pruned model is given, the 92,416→17,176 vocab / 4 layer /
    /// 256 neuron plan.
    #[arg(long)]
    pub reference_7b: bool,
    /// Analytic plan: vocabulary size after pruning.
    #[arg(long)]
    pub vocab_size: Option<usize>,
    /// Analytic plan: layers removed.
    #[arg(long)]
    pub layers_removed: Option<usize>,
    /// Analytic plan: FFN neurons removed per layer.
    #[arg(long)]
    pub neurons_removed: Option<usize>,
    /// Context length for the attention FLOPs term.
    #[arg(long, default_value_t = 2048)]
    pub context: usize,
    /// One-time cost in FLOPs for the break-even point.
    #[arg(long)]
    pub one_time_cost: Option<f64>,
    /// Write the JSON report here instead of stdout.
    #[arg(long, value_name = "PATH")]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CriterionArg {
    Kl,
    Cosine,
    Angular,
    Perplexity,
}

impl From<CriterionArg> for Criterion {
    fn from(c: CriterionArg) -> Self {
        match c {
            CriterionArg::Kl => Criterion::Kl,
            CriterionArg::Cosine => Criterion::Cosine,
            CriterionArg::Angular => Criterion::Angular,
            CriterionArg::Perplexity => Criterion::Perplexity,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MetricArg {
    Pass1,
    Bleu4,
    Em,
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let args = match with_config_defaults(args) {
        Ok(args) => args,
        Err(e) => return report(&e),
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => return clap_failure(e),
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => report(&e),
    }
}

fn report(e: &Error) -> i32 {
    let code = e.exit_code();
    let message = serde_json::to_string(&e.to_string()).expect("string serializes");
    eprintln!("error kind={} exit={code} message={message}", e.kind());
    code
}

/// Help and version exit 0; anything else is a usage error followed by
/// clap's usage text.
fn clap_failure(e: clap::Error) -> i32 {
    use clap::error::ErrorKind;
    if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
        let _ = e.print();
        return 0;
    }
    let rendered = e.render().to_string();
    let head = rendered.split("\n\n").next().unwrap_or_default().trim_start_matches("error: ");
    let code = report(&Error::Usage(head.split_whitespace().collect::<Vec<_>>().join(" ")));
    eprint!("{rendered}");
    code
}

/// Inserts flags from the `--config` JSON right after the subcommand name,
/// skipping any flag the command line already sets and keys the subcommand
/// does not accept.
fn with_config_defaults(mut args: Vec<OsString>) -> Result<Vec<OsString>> {
    let mut config = None;
    let mut sub_pos = None;
    let mut i = 1;
    while i < args.len() {
        let a = args[i].to_string_lossy().into_owned();
        if a == "--config" {
            config = args.get(i + 1).map(PathBuf::from);
            i += 2;
            continue;
        }
        if let Some(p) = a.strip_prefix("--config=") {
            config = Some(PathBuf::from(p));
        } else if !a.starts_with('-') && sub_pos.is_none() {
            sub_pos = Some(i);
        }
        i += 1;
    }
    let (Some(path), Some(pos)) = (config, sub_pos) else { return Ok(args) };
    let defaults: serde_json::Map<String, Value> = files::read_json(&path)?;
    let name = args[pos].to_string_lossy().into_owned();
    let cmd = Cli::command();
    let Some(sub) = cmd.find_subcommand(&name) else { return Ok(args) };
    let given: Vec<String> = args[pos + 1..]
        .iter()
        .filter_map(|a| a.to_str())
        .filter_map(|a| a.strip_prefix("--"))
        .map(|a| a.split('=').next().unwrap_or(a).to_string())
        .collect();
    let mut extra: Vec<OsString> = Vec::new();
    for (key, value) in defaults {
        let long = key.replace('_', "-");
        let known = sub.get_arguments().any(|a| a.get_long() == Some(long.as_str()));
        if !known || long == "config" || given.contains(&long) {
            continue;
        }
        let flag = format!("--{long}");
        let scalar = |v: &Value| match v {
            Value::String(s) => s.clone(),
            other => other.to_string(),
        };
        match value {
            Value::Bool(true) => extra.push(flag.into()),
            Value::Bool(false) | Value::Null => {}
            Value::Array(items) => {
                for item in &items {
                    extra.push(flag.clone().into());
                    extra.push(scalar(item).into());
                }
            }
            other => {
                extra.push(flag.into());
                extra.push(scalar(&other).into());
            }
        }
    }
    args.splice(pos + 1..pos + 1, extra);
    Ok(args)
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Inspect(a) => inspect(a),
        Command::PruneVocab(a) => prune_vocab(a),
        Command::PruneLayers(a) => prune_layers(a),
        Command::PruneFfn(a) => prune_ffn(a),
        Command::Prune(a) => prune(a),
        Command::ScoreLayers(a) => score_layers(a),
        Command::Eval(a) => eval(a),
        Command::BuildRecovery(a) => build_recovery(a),
        Command::ReportEfficiency(a) => report_efficiency(a),
    }
}

fn emit(output: Option<&Path>, text: &str) -> Result<()> {
    match output {
        Some(path) => std::fs::write(path, text).map_err(|e| Error::io(path, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_model(args: &ModelArgs) -> Result<(Checkpoint, BpeTokenizer)> {
    let ckpt = pfc::load_checkpoint(&args.model)?;
    let tok = files::load_tokenizer(&args.tokenizer)?;
    if tok.len() != ckpt.config.vocab_size {
        return Err(prunekit_core::Error::VocabMismatch { original: tok.len(), candidate: ckpt.config.vocab_size }.into());
    }
    Ok((ckpt, tok))
}

fn load_calib(path: &Path, tok: &BpeTokenizer) -> Result<CalibrationSet> {
    let calib = CalibrationSet::new(files::load_calibration(path)?, tok);
    if calib.is_empty() {
        return Err(prunekit_core::Error::EmptyCalibration.into());
    }
    Ok(calib)
}

fn plan_path(plan_out: &Option<PathBuf>, out_model: &Path) -> PathBuf {
    plan_out.clone().unwrap_or_else(|| {
        let mut s = out_model.as_os_str().to_owned();
        s.push(".plan.json");
        PathBuf::from(s)
    })
}

fn identity_ids(n: usize) -> Vec<u32> {
    (0..n as u32).collect()
}

fn inspect(a: InspectArgs) -> Result<()> {
    let ckpt = pfc::load_checkpoint(&a.model)?;
    let tensors: Vec<Value> = ckpt
        .tensors()
        .iter()
        .map(|t| {
            let shape = if t.rank == 1 { vec![t.shape[0]] } else { t.shape.to_vec() };
            json!({ "name": t.name, "shape": shape })
        })
        .collect();
    let out = json!({ "config": ckpt.config, "tensors": tensors, "param_count": ckpt.param_count() });
    emit(a.output.as_deref(), &to_json(&out))
}

fn vocab_stage(
    ckpt: &Checkpoint,
    tok: &BpeTokenizer,
    corpus: &CorpusArgs,
) -> Result<(Checkpoint, BpeTokenizer, IdRemap)> {
    let docs = files::load_corpus(&corpus.corpus, corpus.whole_files)?;
    let keep = TokenSet::from_usage(&count_tokens(&docs, tok), tok, corpus.threshold);
    let (small_tok, remap) = prune_tokenizer(tok, &keep)?;
    let small = pruner::apply_vocab_plan(ckpt, &remap)?;
    Ok((small, small_tok, remap))
}

fn prune_vocab(a: PruneVocabArgs) -> Result<()> {
    let (ckpt, tok) = load_model(&a.model)?;
    let (small, small_tok, remap) = vocab_stage(&ckpt, &tok, &a.corpus)?;
    pfc::save_checkpoint(&small, &a.out_model)?;
    files::save_tokenizer(&small_tok, &a.out_tokenizer)?;
    let plan = PrunePlan { kept_token_old_ids: remap.kept_old_ids.clone(), ..PrunePlan::default() };
    files::write_json(plan_path(&a.plan_out, &a.out_model), &plan)?;
    let report = json!({
        "vocab_before": tok.len(),
        "vocab_after": small_tok.len(),
        "merges_before": tok.merges().len(),
        "merges_after": small_tok.merges().len(),
        "params_before": ckpt.param_count(),
        "params_after": small.param_count(),
    });
    emit(None, &to_json(&report))
}

fn filtered(
    calib: CalibrationSet,
    ckpt: &Checkpoint,
    tok: &BpeTokenizer,
    exec: &ExecArgs,
    pre_verified: bool,
    max_new: usize,
) -> Result<CalibrationSet> {
    if pre_verified {
        return Ok(calib);
    }
    let runner = exec
        .executor()?
        .ok_or_else(|| Error::Usage("calibration filtering needs --executor or --pre-verified".into()))?;
    Ok(pruner::filter_correct_samples(&calib, ckpt, tok, &runner, max_new)?)
}

fn prune_layers(a: PruneLayersArgs) -> Result<()> {
    let (ckpt, tok) = load_model(&a.model)?;
    let calib = load_calib(&a.calib, &tok)?;
    let total = calib.len();
    let calib = filtered(calib, &ckpt, &tok, &a.exec, a.pre_verified, a.max_new)?;
    let (pruned, trace) = pruner::prune_layers(&ckpt, &calib, &tok, a.k_layers, a.criterion.into())?;
    pfc::save_checkpoint(&pruned, &a.out_model)?;
    let plan = PrunePlan {
        kept_token_old_ids: identity_ids(ckpt.config.vocab_size),
        removed_layers: trace.clone(),
        ..PrunePlan::default()
    };
    files::write_json(plan_path(&a.plan_out, &a.out_model), &plan)?;
    let report = json!({
        "calibration_samples": total,
        "calibration_retained": calib.len(),
        "removed_layers": trace,
        "params_before": ckpt.param_count(),
        "params_after": pruned.param_count(),
    });
    emit(None, &to_json(&report))
}

fn ffn_budgets(ckpt: &Checkpoint, remove: usize) -> Result<Vec<usize>> {
    ckpt.layers
        .iter()
        .map(|l| {
            let width = l.intermediate();
            width
                .checked_sub(remove)
                .filter(|&k| k > 0)
                .ok_or_else(|| prunekit_core::Error::BadK { keep: width.saturating_sub(remove), intermediate: width }.into())
        })
        .collect()
}

fn prune_ffn(a: PruneFfnArgs) -> Result<()> {
    let (ckpt, tok) = load_model(&a.model)?;
    let calib = load_calib(&a.calib, &tok)?;
    let samples = calib.encode(&tok)?;
    let budgets = ffn_budgets(&ckpt, a.ffn_remove)?;
    let sel = pruner::select_ffn_rule_per_layer(&ckpt, &samples, &budgets, a.seed)?;
    pfc::save_checkpoint(&sel.checkpoint, &a.out_model)?;
    let plan = PrunePlan {
        kept_token_old_ids: identity_ids(ckpt.config.vocab_size),
        ffn_rule: Some(sel.rule),
        ffn_kept_indices: sel.kept.clone(),
        seed: a.seed,
        ..PrunePlan::default()
    };
    files::write_json(plan_path(&a.plan_out, &a.out_model), &plan)?;
    let scores: Vec<Value> = sel.scores.iter().map(|(r, s)| json!({ "rule": r, "mean_kl": s })).collect();
    let report = json!({
        "rule": sel.rule,
        "scores": scores,
        "params_before": ckpt.param_count(),
        "params_after": sel.checkpoint.param_count(),
    });
    emit(None, &to_json(&report))
}

fn prune(a: PruneArgs) -> Result<()> {
    let (ckpt, tok) = load_model(&a.model)?;
    let calib = load_calib(&a.calib, &tok)?;
    let docs = files::load_corpus(&a.corpus.corpus, a.corpus.whole_files)?;
    let runner = if a.pre_verified {
        None
    } else {
        Some(a.exec.required("calibration filtering without --pre-verified")?)
    };
    let options = PipelineOptions {
        k_layers: a.k_layers,
        ffn_remove: a.ffn_remove,
        criterion: a.criterion.into(),
        seed: a.seed,
        vocab_threshold: a.corpus.threshold,
        max_new: a.max_new,
    };
    let clock = SystemClock::new();
    let filter = runner.as_ref().map(|r| r as &dyn CodeRunner);
    let out = pruner::prune_pipeline(&ckpt, &tok, &docs, &calib, &options, filter, &clock)?;
    pfc::save_checkpoint(&out.checkpoint, &a.out_model)?;
    files::save_tokenizer(&out.tokenizer, &a.out_tokenizer)?;
    files::write_json(plan_path(&a.plan_out, &a.out_model), &out.plan)?;
    let text = to_json(&out.report);
    if let Some(path) = &a.report {
        emit(Some(path), &text)?;
    }
    emit(None, &text)
}

fn score_layers(a: ScoreLayersArgs) -> Result<()> {
    let (ckpt, tok) = load_model(&a.model)?;
    let calib = load_calib(&a.calib, &tok)?;
    let samples = calib.encode(&tok)?;
    let criterion: Criterion = a.criterion.into();
    let baseline = match criterion {
        Criterion::Kl => Some(Baseline::compute(&ckpt, &samples)?),
        _ => None,
    };
    let report = pruner::score_layers(&ckpt, &samples, criterion, baseline.as_ref())?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["layer", "score", "criterion"]).expect("in-memory write");
    for e in &report.entries {
        w.write_record([e.layer.to_string(), e.score.to_string(), e.criterion.name().to_string()])
            .expect("in-memory write");
    }
    let bytes = w.into_inner().expect("in-memory write");
    emit(a.output.as_deref(), &String::from_utf8(bytes).expect("csv is utf-8"))
}

fn eval(a: EvalArgs) -> Result<()> {
    let (ckpt, tok) = load_model(&a.model)?;
    let calib = load_calib(&a.calib, &tok)?;
    let metrics = MetricSet {
        pass_at_1: a.metrics.contains(&MetricArg::Pass1),
        bleu4: a.metrics.contains(&MetricArg::Bleu4),
        exact_match: a.metrics.contains(&MetricArg::Em),
    };
    let runner = if metrics.pass_at_1 { Some(a.exec.required("Pass@1")?) } else { None };
    let report = metrics::evaluate(&calib, &ckpt, &tok, runner.as_ref().map(|r| r as &dyn CodeRunner), a.max_new, metrics)?;
    if let Some(path) = &a.csv {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, std::io::Error::other(e)))?;
        let cell = |v: Option<String>| v.unwrap_or_default();
        let result: csv::Result<()> = (|| {
            w.write_record(["id", "passed", "bleu4", "exact_match", "generated"])?;
            for s in &report.samples {
                w.write_record([
                    s.id.clone(),
                    cell(s.passed.map(|p| p.to_string())),
                    cell(s.bleu4.map(|b| b.to_string())),
                    cell(s.exact_match.map(|e| e.to_string())),
                    s.generated.clone(),
                ])?;
            }
            w.flush()?;
            Ok(())
        })();
        result.map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    }
    emit(a.output.as_deref(), &to_json(&report))
}

fn build_recovery(a: BuildRecoveryArgs) -> Result<()> {
    let (ckpt, tok) = load_model(&a.model)?;
    let data = files::load_recovery(&a.data)?;
    let runner = a.exec.required("build-recovery")?;
    let out = build_recovery_dataset(&data, &ckpt, &tok, &runner, a.max_new)?;
    files::write_jsonl(&a.output, &out)?;
    let replaced = out.iter().filter(|s| s.replaced).count();
    emit(None, &to_json(&json!({ "samples": out.len(), "replaced": replaced })))
}

/// Config of a PFC1 checkpoint (manifest only) or of a config JSON file.
fn load_config(path: &Path) -> Result<TransformerConfig> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if pfc::is_checkpoint(&bytes) {
        return Ok(pfc::read_manifest(&bytes, path)?.0);
    }
    files::read_json(path)
}

fn report_efficiency(a: ReportEfficiencyArgs) -> Result<()> {
    let dense = match (&a.dense, a.reference_7b) {
        (Some(p), _) => load_config(p)?,
        (None, true) => metrics::reference_7b_config(),
        (None, false) => return Err(Error::Usage("report-efficiency needs --dense or --reference-7b".into())),
    };
    let shaped = a.vocab_size.is_some() || a.layers_removed.is_some() || a.neurons_removed.is_some();
    let pruned = match &a.pruned {
        Some(p) => load_config(p)?,
        None if shaped => {
            let shape = PlanShape {
                vocab_size: a.vocab_size.unwrap_or(dense.vocab_size),
                layers_removed: a.layers_removed.unwrap_or(0),
                neurons_removed: a.neurons_removed.unwrap_or(0),
            };
            if shape.layers_removed >= dense.n_layers {
                return Err(prunekit_core::Error::TooFewLayers { n_layers: dense.n_layers }.into());
            }
            shape.apply(&dense)
        }
        None if a.reference_7b => PlanShape::REFERENCE.apply(&dense),
        None => {
            return Err(Error::Usage(
                "report-efficiency needs --pruned, plan flags, or --reference-7b".into(),
            ))
        }
    };
    let report = metrics::efficiency_report(&dense, &pruned, a.context, a.one_time_cost)?;
    emit(a.output.as_deref(), &to_json(&report))
}
