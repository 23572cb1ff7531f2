//! Command-line front end.
//!
//! Exit codes: 0 success, 1 failed check, 2 usage or input error,
//! 3 numerical abort.

mod config;

pub use config::RunConfig;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::autodiff::{grad_check_with, ParamSet, Stencil};
use crate::corpus::{
    build_vocabulary, corpus_stats, filter_corpus, generate_synthetic_corpus, read_corpus, write_corpus,
    CorpusStats, GeneratorSpec, Vocabulary,
};
use crate::decode::{decode_example, write_predictions, read_predictions, Prediction, Strategy};
use crate::entity::{annotate, extract_entities, read_annotated, write_annotated, AnnotateOptions, Gazetteer};
use crate::metrics::{aggregate, example_report};
use crate::model::{ModelConfig, SpanCopyModel, Trainer};
use crate::{Error, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "spancopy", version, about = "Entity span-copy summarization toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides one configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Writes a synthetic corpus and a statistics sidecar.
    GenCorpus {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Output file; defaults to the `corpus` key.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        size: Option<usize>,
    },
    /// Extracts entities and builds copy targets and relevance labels.
    Annotate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Existing vocabulary; when absent one is built from the corpus.
        #[arg(long)]
        vocab: Option<PathBuf>,
        /// Where a newly built vocabulary is written (default `<out>.vocab`).
        #[arg(long)]
        vocab_out: Option<PathBuf>,
    },
    /// Keeps examples whose summary entities all occur in the document.
    Filter {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Trains a model into a run directory.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        run_dir: PathBuf,
        /// Enables the global-relevance prior and its loss.
        #[arg(long)]
        use_gr: bool,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Decodes summaries with a trained checkpoint.
    Generate {
        #[arg(long)]
        run_dir: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Defaults to `<run-dir>/predictions.jsonl`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        strategy: Option<Strategy>,
        #[arg(long)]
        beam_width: Option<usize>,
        #[arg(long)]
        max_steps: Option<usize>,
        #[arg(long)]
        length_penalty: Option<f64>,
    },
    /// Scores predictions against annotated references and documents.
    Evaluate {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Defaults to the directory of the predictions file.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        gazetteer: Option<PathBuf>,
    },
    /// Compares analytic and finite-difference gradients of both losses.
    Gradcheck {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        threshold: Option<f64>,
    },
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::NonFinite(_) => EXIT_NUMERIC,
        _ => EXIT_USAGE,
    }
}

fn dispatch(cmd: Command) -> Result<i32> {
    match cmd {
        Command::GenCorpus { cfg, out, size } => gen_corpus(&load_config(&cfg)?, out, size),
        Command::Annotate {
            cfg,
            corpus,
            out,
            vocab,
            vocab_out,
        } => cmd_annotate(&load_config(&cfg)?, &corpus, &out, vocab.as_deref(), vocab_out),
        Command::Filter { input, out } => cmd_filter(&input, &out),
        Command::Train {
            cfg,
            data,
            vocab,
            run_dir,
            use_gr,
            beta,
            steps,
        } => {
            let mut rc = load_config(&cfg)?;
            if use_gr {
                rc.model.use_gr = true;
            }
            if let Some(b) = beta {
                rc.model.beta = b;
            }
            if let Some(s) = steps {
                rc.train.steps = s;
            }
            rc.validate()?;
            cmd_train(&rc, &data, &vocab, &run_dir)
        }
        Command::Generate {
            run_dir,
            data,
            checkpoint,
            out,
            strategy,
            beam_width,
            max_steps,
            length_penalty,
        } => {
            let mut rc = RunConfig::load(&run_dir.join("config.resolved"))?;
            if let Some(s) = strategy {
                rc.decode.strategy = s;
            }
            if let Some(w) = beam_width {
                rc.decode.beam_width = w;
            }
            if let Some(m) = max_steps {
                rc.decode.max_steps = m;
            }
            if let Some(a) = length_penalty {
                rc.decode.length_penalty = a;
            }
            rc.decode.validate()?;
            let ckpt = checkpoint.unwrap_or_else(|| run_dir.join("checkpoint.bin"));
            let out = out.unwrap_or_else(|| run_dir.join("predictions.jsonl"));
            cmd_generate(&rc, &run_dir, &ckpt, &data, &out)
        }
        Command::Evaluate {
            predictions,
            data,
            out_dir,
            gazetteer,
        } => {
            let out_dir = out_dir.unwrap_or_else(|| {
                predictions
                    .parent()
                    .map(Path::to_path_buf)
                    .unwrap_or_else(|| PathBuf::from("."))
            });
            cmd_evaluate(&predictions, &data, &out_dir, gazetteer.as_deref())
        }
        Command::Gradcheck { cfg, threshold } => {
            let mut rc = load_config(&cfg)?;
            if let Some(t) = threshold {
                rc.gradcheck_threshold = t;
            }
            rc.validate()?;
            cmd_gradcheck(&rc)
        }
    }
}

fn load_config(args: &ConfigArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for o in &args.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {o:?}")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn gazetteer(path: Option<&Path>) -> Result<Gazetteer> {
    match path {
        Some(p) => Gazetteer::load(p),
        None => Ok(Gazetteer::bundled()),
    }
}

fn annotate_options(cfg: &ModelConfig) -> AnnotateOptions {
    AnnotateOptions {
        max_doc_len: cfg.max_doc_len,
        max_summary_len: cfg.max_summary_len,
        e_max: cfg.e_max,
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("value serializes");
    s.push('\n');
    s
}

#[derive(Serialize)]
struct CorpusSidecar {
    seed: u64,
    size: usize,
    generator: GeneratorSpec,
    vocab_size: usize,
    stats: CorpusStats,
}

fn gen_corpus(rc: &RunConfig, out: Option<PathBuf>, size: Option<usize>) -> Result<i32> {
    let out = out
        .or_else(|| rc.corpus.clone())
        .ok_or_else(|| Error::Config("no output path: pass --out or set `corpus`".into()))?;
    let size = size.unwrap_or(rc.corpus_size);
    let gaz = gazetteer(rc.gazetteer.as_deref())?;
    let raw = generate_synthetic_corpus(rc.seed, size, &rc.generator, &gaz)?;
    let vocab = build_vocabulary(&raw, rc.max_vocab)?;
    let opts = annotate_options(&rc.model);
    let ann: Vec<_> = raw.iter().map(|r| annotate(r, &vocab, &gaz, &opts).0).collect();
    let stats = corpus_stats(&ann)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    write_corpus(&out, &raw)?;
    let sidecar = CorpusSidecar {
        seed: rc.seed,
        size,
        generator: rc.generator,
        vocab_size: vocab.len(),
        stats,
    };
    write_text(&with_suffix(&out, ".stats.json"), &json(&sidecar))?;
    write_text(&with_suffix(&out, ".config.resolved"), &rc.to_text())?;
    println!(
        "wrote {size} examples to {} (src_p_gt {:.2})",
        out.display(),
        stats.src_p_gt
    );
    Ok(EXIT_OK)
}

#[derive(Debug, Default, Serialize)]
struct AnnotateReport {
    examples: usize,
    doc_mentions: usize,
    summary_mentions: usize,
    doc_truncated: usize,
    summary_truncated: usize,
    entity_overflow: usize,
    vocab_size: usize,
}

fn cmd_annotate(
    rc: &RunConfig,
    corpus: &Path,
    out: &Path,
    vocab_path: Option<&Path>,
    vocab_out: Option<PathBuf>,
) -> Result<i32> {
    let raw = read_corpus(corpus)?;
    if raw.is_empty() {
        return Err(Error::Input(format!("{} contains no examples", corpus.display())));
    }
    let gaz = gazetteer(rc.gazetteer.as_deref())?;
    let vocab = match vocab_path {
        Some(p) => Vocabulary::load(p)?,
        None => {
            let v = build_vocabulary(&raw, rc.max_vocab)?;
            let vp = vocab_out.unwrap_or_else(|| with_suffix(out, ".vocab"));
            write_text(&vp, &(v.tokens().join("\n") + "\n"))?;
            v
        }
    };
    let opts = annotate_options(&rc.model);
    let mut report = AnnotateReport {
        vocab_size: vocab.len(),
        ..AnnotateReport::default()
    };
    let mut ann = Vec::with_capacity(raw.len());
    for r in &raw {
        let (ex, flags) = annotate(r, &vocab, &gaz, &opts);
        report.examples += 1;
        report.doc_mentions += ex.doc_entities.mentions().len();
        report.summary_mentions += ex.summary_entities.mentions().len();
        report.doc_truncated += usize::from(flags.doc_truncated);
        report.summary_truncated += usize::from(flags.summary_truncated);
        report.entity_overflow += usize::from(flags.entity_overflow);
        ann.push(ex);
    }
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    write_annotated(out, &ann)?;
    write_text(&with_suffix(out, ".report.json"), &json(&report))?;
    println!(
        "annotated {} examples: {} document mentions, {} summary mentions, {} truncated documents, {} truncated summaries, {} entity overflows",
        report.examples,
        report.doc_mentions,
        report.summary_mentions,
        report.doc_truncated,
        report.summary_truncated,
        report.entity_overflow
    );
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct FilterReport {
    input: usize,
    kept: usize,
    dropped: usize,
    stats: Option<CorpusStats>,
}

fn cmd_filter(input: &Path, out: &Path) -> Result<i32> {
    let ann = read_annotated(input)?;
    if ann.is_empty() {
        return Err(Error::Input(format!("{} contains no examples", input.display())));
    }
    let kept = filter_corpus(&ann);
    let stats = if kept.is_empty() { None } else { Some(corpus_stats(&kept)?) };
    let report = FilterReport {
        input: ann.len(),
        kept: kept.len(),
        dropped: ann.len() - kept.len(),
        stats,
    };
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    write_annotated(out, &kept)?;
    write_text(&with_suffix(out, ".stats.json"), &json(&report))?;
    let src = stats.map_or_else(|| "undefined".to_string(), |s| format!("{:.2}", s.src_p_gt));
    println!(
        "kept {} of {} examples ({} dropped), src_p_gt {src}",
        report.kept, report.input, report.dropped
    );
    Ok(EXIT_OK)
}

fn checkpoint_meta(model: &ModelConfig, step: usize) -> serde_json::Value {
    serde_json::json!({ "model": model, "step": step })
}

/// Loads a model checkpoint written by `train`.
pub fn load_model(path: &Path) -> Result<SpanCopyModel> {
    let (params, meta) = ParamSet::load(path)?;
    let cfg: ModelConfig = serde_json::from_value(meta["model"].clone())
        .map_err(|e| Error::Checkpoint(format!("{}: bad model config: {e}", path.display())))?;
    SpanCopyModel::from_params(cfg, params)
}

fn cmd_train(rc: &RunConfig, data: &Path, vocab_path: &Path, run_dir: &Path) -> Result<i32> {
    let ann = read_annotated(data)?;
    if ann.is_empty() {
        return Err(Error::Input(format!("{} contains no examples", data.display())));
    }
    let vocab = Vocabulary::load(vocab_path)?;
    let mut mc = rc.model.clone();
    mc.vocab_size = vocab.len();
    mc.seed = rc.seed;
    if let Some(bad) = ann.iter().find(|e| e.vocab_size != vocab.len()) {
        return Err(Error::Input(format!(
            "example {} was annotated with |V| = {}, vocabulary has {}",
            bad.id(),
            bad.vocab_size,
            vocab.len()
        )));
    }
    fs::create_dir_all(run_dir).map_err(|e| Error::io(run_dir, e))?;
    write_text(&run_dir.join("config.resolved"), &rc.to_text())?;
    write_text(&run_dir.join("vocab.txt"), &(vocab.tokens().join("\n") + "\n"))?;

    let ckpt = run_dir.join("checkpoint.bin");
    let log_path = run_dir.join("train.log");
    let model = SpanCopyModel::init(mc.clone())?;
    model.params().save(&ckpt, checkpoint_meta(&mc, 0))?;
    let mut train_cfg = rc.train.clone();
    train_cfg.seed = rc.seed;
    let mut trainer = Trainer::new(model, train_cfg)?;
    let mut log = String::from("step\tloss\n");
    let mut last = None;
    for _ in 0..rc.train.steps {
        match trainer.step(&ann) {
            Ok(s) => {
                let _ = writeln!(log, "{}\t{}", s.step, s.loss);
                last = Some(s.loss);
                if rc.checkpoint_every > 0 && s.step % rc.checkpoint_every == 0 {
                    trainer.model().params().save(&ckpt, checkpoint_meta(&mc, s.step))?;
                }
            }
            Err(e) => {
                write_text(&log_path, &log)?;
                eprintln!(
                    "training aborted after {} steps; last good checkpoint kept at {}",
                    trainer.steps_done(),
                    ckpt.display()
                );
                return Err(e);
            }
        }
    }
    write_text(&log_path, &log)?;
    trainer
        .model()
        .params()
        .save(&ckpt, checkpoint_meta(&mc, trainer.steps_done()))?;
    match last {
        Some(l) => println!("trained {} steps, final loss {l:.6}", trainer.steps_done()),
        None => println!("no training steps requested; wrote initial checkpoint"),
    }
    Ok(EXIT_OK)
}

fn cmd_generate(rc: &RunConfig, run_dir: &Path, ckpt: &Path, data: &Path, out: &Path) -> Result<i32> {
    let model = load_model(ckpt)?;
    let vocab = Vocabulary::load(&run_dir.join("vocab.txt"))?;
    let ann = read_annotated(data)?;
    let mut preds = Vec::with_capacity(ann.len());
    for ex in &ann {
        let d = decode_example(&model, &vocab, ex, &rc.decode)?;
        preds.push(Prediction::new(ex.id(), &d));
    }
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    write_predictions(out, &preds)?;
    println!("wrote {} predictions to {}", preds.len(), out.display());
    Ok(EXIT_OK)
}

fn cmd_evaluate(predictions: &Path, data: &Path, out_dir: &Path, gaz_path: Option<&Path>) -> Result<i32> {
    let preds = read_predictions(predictions)?;
    if preds.is_empty() {
        return Err(Error::Input(format!("{} contains no predictions", predictions.display())));
    }
    let ann = read_annotated(data)?;
    let by_id: HashMap<&str, usize> = ann.iter().enumerate().map(|(i, e)| (e.id(), i)).collect();
    let gaz = gazetteer(gaz_path)?;
    let mut seen = HashSet::new();
    let mut reports = Vec::with_capacity(preds.len());
    for p in &preds {
        if !seen.insert(p.id.as_str()) {
            return Err(Error::Input(format!("duplicate prediction id {:?}", p.id)));
        }
        let ex = &ann[*by_id
            .get(p.id.as_str())
            .ok_or_else(|| Error::Input(format!("prediction id {:?} not found in {}", p.id, data.display())))?];
        let tokens: Vec<String> = p.summary.split_whitespace().map(str::to_string).collect();
        let gen_entities = extract_entities(&tokens, &gaz, usize::MAX);
        reports.push(example_report(
            &tokens,
            &ex.tokenized.summary_tokens,
            &gen_entities,
            &ex.summary_entities,
            &ex.doc_entities,
        ));
    }
    let report = aggregate(&reports)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    report.write(&out_dir.join("metrics.json"), &out_dir.join("metrics.tsv"))?;
    let show = |v: Option<f64>| v.map_or_else(|| "UNDEFINED".to_string(), |x| format!("{x:.4}"));
    println!(
        "R-1 {:.4}  R-2 {:.4}  R-L {:.4}  sum_f {}  src_p {}  ({} examples)",
        report.rouge1.f1,
        report.rouge2.f1,
        report.rouge_l.f1,
        show(report.sum_f),
        show(report.src_p),
        report.examples
    );
    Ok(EXIT_OK)
}

/// Parameter group of a tensor name: the layer sub-block for stacked
/// layers, the top-level component otherwise.
pub fn param_group(name: &str) -> String {
    let parts: Vec<&str> = name.split('.').collect();
    let n = if parts.len() > 1 && parts[1].chars().all(|c| c.is_ascii_digit()) {
        3
    } else if parts.len() > 2 {
        2
    } else {
        1
    };
    parts[..n.min(parts.len())].join(".")
}

fn cmd_gradcheck(rc: &RunConfig) -> Result<i32> {
    let gaz = gazetteer(rc.gazetteer.as_deref())?;
    let raw = generate_synthetic_corpus(rc.seed, 1, &rc.generator, &gaz)?;
    let vocab = build_vocabulary(&raw, rc.max_vocab)?;
    let (ex, _) = annotate(&raw[0], &vocab, &gaz, &annotate_options(&rc.model));
    let mut failed = false;
    for (label, use_gr) in [("loss_l1", false), ("loss_l2", true)] {
        let mc = ModelConfig {
            vocab_size: vocab.len(),
            use_gr,
            seed: rc.seed,
            ..rc.model.clone()
        };
        let model = SpanCopyModel::init(mc)?;
        let rep = grad_check_with(
            |g, p| model.graph_loss(g, p, &ex),
            model.params().tensors(),
            rc.gradcheck_step,
            Stencil::FivePoint,
        )?;
        let mut groups: BTreeMap<String, f64> = BTreeMap::new();
        for pe in &rep.per_param {
            let e = groups.entry(param_group(&model.params().names()[pe.index])).or_insert(0.0);
            *e = e.max(pe.max_rel_error);
        }
        let ok = rep.max_rel_error < rc.gradcheck_threshold;
        failed |= !ok;
        println!(
            "{label}: max relative error {:.3e} over {} parameters ({})",
            rep.max_rel_error,
            model.params().num_values(),
            if ok { "ok" } else { "FAILED" }
        );
        for (g, e) in groups {
            println!("  {g}\t{e:.3e}");
        }
    }
    Ok(if failed { EXIT_CHECK_FAILED } else { EXIT_OK })
}
