//! Command-line interface.
//!
//! Settings resolve as built-in defaults, then the `--config` TOML file,
//! then command-line flags. Exit codes: 0 success, 1 general failure,
//! 2 unreadable input, 3 render overflow, 4 tokenizer/model vocabulary
//! mismatch.

use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::finetune::{
    adapt_patch_embedding_channels, attach_task_head, evaluate_task, finetune, EvalReport, FinetuneConfig,
    FinetuneModel, InputBuilder, InputModality, Metric, RenderMode, TaskData, TaskKind, TaskSpec, TaskTable, Targets,
};
use crate::finetune::head::{HEAD_BIAS, HEAD_WEIGHT};
use crate::glyphs::GlyphSet;
use crate::model::{Checkpoint, CheckpointMeta, ModelConfig, NamedTensor, Params, Tensor, CKPT_MAGIC};
use crate::patchio::TARGET_EPS;
use crate::pretrain::batch::{pair_record, pixel_record, text_record};
use crate::pretrain::trainer::write_metrics_log;
use crate::pretrain::{train, Corpus, Preset, TrainConfig};
use crate::render::{layout_chunks, render_text, truncate_or_segment, Overflow, RenderConfig, RenderedStrip};
use crate::shard::{read_shard, Modality, ShardReader, ShardRecord, ShardWriter, SHARD_MAGIC};
use crate::tokenizer::{TokenSequence, Vocab, EOS_ID};
use crate::{seed, Error, Result};

#[derive(Debug, Parser)]
#[command(name = "pixeltext", version, about = "Render text to pixel patches and train pixel/token language models")]
pub struct Cli {
    /// TOML file with [render], [model], [train] and [finetune] tables.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Root seed; every component derives its own sub-seed from it.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a directory of text files into a shard.
    Render(RenderArgs),
    /// Train a BPE vocabulary, or encode text with an existing one.
    Tokenize(TokenizeArgs),
    /// Pre-train a model on one or more shards.
    Pretrain(PretrainArgs),
    /// Fine-tune a pre-trained checkpoint on a TSV task.
    Finetune(FinetuneArgs),
    /// Evaluate a fine-tuned checkpoint on a TSV task.
    Eval(EvalArgs),
    /// Describe a shard, checkpoint, or golden strip.
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    /// Directory of UTF-8 text files.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Output shard (default: OUT/corpus.pxshard).
    #[arg(long)]
    pub shard: Option<PathBuf>,
    /// Split documents that overflow one strip instead of failing.
    #[arg(long)]
    pub segment: bool,
    /// Record kind: pixel, text, or pair.
    #[arg(long, default_value = "pixel")]
    pub kind: String,
    /// Tokenizer file, required for text and pair records.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub max_patches: Option<usize>,
    /// Longest token sequence per text record, EOS included.
    #[arg(long, default_value_t = 256)]
    pub max_tokens: usize,
}

#[derive(Debug, Args)]
pub struct TokenizeArgs {
    /// Text file or directory of text files to train on.
    #[arg(long, required_unless_present = "encode")]
    pub corpus: Option<PathBuf>,
    #[arg(long, default_value_t = crate::tokenizer::DEFAULT_VOCAB_SIZE)]
    pub vocab_size: usize,
    /// Vocabulary file: written when training, read when encoding.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Print the ids of this text instead of training.
    #[arg(long, requires = "vocab")]
    pub encode: Option<String>,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    /// Input shard(s).
    #[arg(long, required = true, num_args = 1..)]
    pub shard: Vec<PathBuf>,
    /// text, pixel, mono, or dual.
    #[arg(long, default_value = "dual")]
    pub preset: String,
    /// Model size preset (desk, tiny, large); replaces the [model] table.
    #[arg(long)]
    pub model_size: Option<String>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub warmup: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Batches of text,pixel,pair per period, e.g. 4,4,2.
    #[arg(long, value_delimiter = ',', num_args = 3)]
    pub mix_ratio: Option<Vec<u32>>,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// Tokenizer the shards were encoded with; its size is recorded.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub dev: PathBuf,
    /// Tokenizer file (default: bytes only).
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// pixel, text, or dual.
    #[arg(long, default_value = "pixel")]
    pub modality: String,
    /// rgb, grayscale, or binary.
    #[arg(long, default_value = "rgb")]
    pub render_mode: String,
    /// acc, f1, mcc, or spearman.
    #[arg(long, default_value = "acc")]
    pub metric: String,
    #[arg(long, default_value = "task")]
    pub task_name: String,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub patch_budget: Option<usize>,
    #[arg(long)]
    pub freeze_backbone: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub task: PathBuf,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    pub path: PathBuf,
    /// Shard record (or 0 for a golden strip) to write as a pixmap.
    #[arg(long, requires = "ppm")]
    pub dump_strip: Option<usize>,
    /// Output path for --dump-strip.
    #[arg(long, requires = "dump_strip")]
    pub ppm: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub render: RenderConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub finetune: FinetuneConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(input_error(path))?;
        toml::from_str(&text).map_err(|e| Error::Parse(format!("{}: {}", path.display(), e.message())))
    }

    /// Defaults, overlaid by the config file, overlaid by global flags.
    pub fn resolve(cli: &Cli) -> Result<Self> {
        let mut cfg = match &cli.config {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        if let Some(s) = cli.seed {
            cfg.seed = s;
        }
        cfg.train.seed = cfg.seed;
        cfg.finetune.seed = cfg.seed;
        Ok(cfg)
    }
}

/// Process exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io(_) | Error::CorruptShard(_) | Error::CorruptCheckpoint(_) | Error::CorruptVocab(_) | Error::Parse(_) => 2,
        Error::RenderOverflow { .. } => 3,
        Error::VocabMismatch { .. } => 4,
        _ => 1,
    }
}

fn output_error(path: &Path, e: std::io::Error) -> Error {
    Error::InvalidConfig(format!("cannot write {}: {e}", path.display()))
}

fn input_error(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

/// Prefix I/O errors from loading an input file with its path.
fn with_path(path: &Path) -> impl FnOnce(Error) -> Error + '_ {
    move |e| match e {
        Error::Io(io) => input_error(path)(io),
        other => other,
    }
}

fn out_dir(cli: &Cli) -> Result<PathBuf> {
    let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir).map_err(|e| output_error(&dir, e))?;
    Ok(dir)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| output_error(path, e))
}

fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let f = File::create(path).map_err(|e| output_error(path, e))?;
    ckpt.write(BufWriter::new(f))
}

/// Tokenizer ids must fit the model, and match the recorded tokenizer.
pub fn check_vocab(tokenizer: usize, meta: &CheckpointMeta) -> Result<()> {
    let model = meta.tokenizer_size.unwrap_or(meta.model.vocab_size);
    let fits = match meta.tokenizer_size {
        Some(n) => n == tokenizer,
        None => tokenizer <= meta.model.vocab_size,
    };
    if !fits {
        return Err(Error::VocabMismatch { tokenizer, model });
    }
    Ok(())
}

pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    let cfg = RunConfig::resolve(cli)?;
    match &cli.command {
        Command::Render(a) => cmd_render(cli, &cfg, a, out),
        Command::Tokenize(a) => cmd_tokenize(cli, a, out),
        Command::Pretrain(a) => cmd_pretrain(cli, &cfg, a, out),
        Command::Finetune(a) => cmd_finetune(cli, &cfg, a, out),
        Command::Eval(a) => cmd_eval(cli, a, out),
        Command::Inspect(a) => cmd_inspect(a, out),
    }
}

fn read_documents(dir: &Path) -> Result<Vec<(PathBuf, String)>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(input_error(dir))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(input_error(dir))?
        .into_iter()
        .filter(|p| p.is_file())
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let bytes = fs::read(&p).map_err(input_error(&p))?;
            let text = String::from_utf8(bytes).map_err(|_| Error::Parse(format!("{} is not UTF-8", p.display())))?;
            Ok((p, text))
        })
        .collect()
}

fn text_records(vocab: &Vocab, text: &str, max_tokens: usize) -> Result<Vec<ShardRecord>> {
    let ids = vocab.encode(text).ids;
    let per = max_tokens.saturating_sub(1).max(1);
    let mut out = Vec::new();
    for chunk in ids.chunks(per) {
        let mut seq = chunk.to_vec();
        seq.push(EOS_ID);
        out.push(text_record(&TokenSequence::new(seq))?);
    }
    Ok(out)
}

fn cmd_render(cli: &Cli, cfg: &RunConfig, a: &RenderArgs, out: &mut dyn Write) -> Result<()> {
    let mut rcfg = cfg.render.clone();
    if let Some(m) = a.max_patches {
        rcfg.max_patches = m;
    }
    rcfg.validate()?;
    let kind = match a.kind.as_str() {
        "pixel" => Modality::Pixel,
        "text" => Modality::Text,
        "pair" => Modality::Pair,
        other => return Err(Error::InvalidConfig(format!("unknown record kind `{other}`"))),
    };
    let vocab = match (&a.vocab, kind) {
        (Some(p), _) => Some(Vocab::load(p).map_err(with_path(p))?),
        (None, Modality::Pixel) => None,
        (None, _) => return Err(Error::InvalidConfig("text and pair records need --vocab".into())),
    };
    let mut docs = read_documents(&a.corpus)?;
    docs.shuffle(&mut seed::rng_for(cfg.seed, seed::RENDER_ORDER));
    let glyphs = GlyphSet::builtin();
    let mode = if a.segment { Overflow::Segment } else { Overflow::Truncate };

    let shard_path = match &a.shard {
        Some(p) => p.clone(),
        None => out_dir(cli)?.join("corpus.pxshard"),
    };
    let file = File::create(&shard_path).map_err(|e| output_error(&shard_path, e))?;
    let mut writer = ShardWriter::new(BufWriter::new(file), rcfg.patch_px as u16, rcfg.channels as u8)?;
    let (mut strips, mut content, mut records) = (0usize, 0usize, 0usize);
    for (_, text) in &docs {
        let mut recs = Vec::new();
        if kind == Modality::Text {
            recs = text_records(vocab.as_ref().unwrap(), text, a.max_tokens)?;
        } else {
            let rendered: Vec<(String, RenderedStrip)> = if a.segment {
                let chunks = layout_chunks(text, &rcfg, &glyphs)?;
                let strips = truncate_or_segment(text, &rcfg, &glyphs, mode)?;
                chunks.into_iter().zip(strips).collect()
            } else {
                vec![(text.clone(), render_text(text, &rcfg, &glyphs)?)]
            };
            for (chunk, strip) in rendered {
                strips += 1;
                content += strip.content_patches();
                recs.push(match kind {
                    Modality::Pixel => pixel_record(&strip)?,
                    _ => {
                        let mut ids = vocab.as_ref().unwrap().encode(&chunk).ids;
                        ids.push(EOS_ID);
                        pair_record(&strip, &TokenSequence::new(ids))?
                    }
                });
            }
        }
        for r in &recs {
            writer.push(r)?;
        }
        records += recs.len();
    }
    writer.finish()?;
    writeln!(out, "shard {}", shard_path.display())?;
    writeln!(out, "documents {}", docs.len())?;
    writeln!(out, "strips {strips}")?;
    writeln!(out, "content_patches {content}")?;
    writeln!(out, "records {records}")?;
    Ok(())
}

fn collect_text(path: &Path) -> Result<String> {
    if path.is_dir() {
        Ok(read_documents(path)?.into_iter().map(|(_, t)| t).collect::<Vec<_>>().join("\n"))
    } else {
        let bytes = fs::read(path).map_err(input_error(path))?;
        String::from_utf8(bytes).map_err(|_| Error::Parse(format!("{} is not UTF-8", path.display())))
    }
}

fn cmd_tokenize(cli: &Cli, a: &TokenizeArgs, out: &mut dyn Write) -> Result<()> {
    if let Some(text) = &a.encode {
        let vocab = Vocab::load(a.vocab.as_ref().unwrap())?;
        let ids: Vec<String> = vocab.encode(text).ids.iter().map(u32::to_string).collect();
        writeln!(out, "{}", ids.join(" "))?;
        return Ok(());
    }
    let corpus = collect_text(a.corpus.as_ref().unwrap())?;
    let vocab = Vocab::train(corpus.as_bytes(), a.vocab_size)?;
    let path = match &a.vocab {
        Some(p) => p.clone(),
        None => out_dir(cli)?.join("vocab.txt"),
    };
    write_text(&path, &vocab.to_text())?;
    writeln!(out, "vocab {} size {} merges {}", path.display(), vocab.len(), vocab.merges().len())?;
    Ok(())
}

fn model_preset(name: &str) -> Result<ModelConfig> {
    match name {
        "desk" => Ok(ModelConfig::desk()),
        "tiny" => Ok(ModelConfig::tiny()),
        "large" => Ok(ModelConfig::large()),
        other => Err(Error::InvalidConfig(format!("unknown model size `{other}`"))),
    }
}

fn cmd_pretrain(cli: &Cli, cfg: &RunConfig, a: &PretrainArgs, out: &mut dyn Write) -> Result<()> {
    let preset = Preset::parse(&a.preset).ok_or_else(|| Error::InvalidConfig(format!("unknown preset `{}`", a.preset)))?;
    let mut model = match &a.model_size {
        Some(s) => model_preset(s)?,
        None => cfg.model.clone(),
    };
    let mut tcfg = cfg.train.clone();
    if let Some(v) = a.steps {
        tcfg.steps = v;
        tcfg.warmup_steps = tcfg.warmup_steps.min(v);
    }
    if let Some(v) = a.lr {
        tcfg.peak_lr = v;
    }
    if let Some(v) = a.warmup {
        tcfg.warmup_steps = v;
    }
    if let Some(v) = a.batch_size {
        tcfg.batch_size = v;
    }
    if let Some(v) = &a.mix_ratio {
        tcfg.mix_ratio = [v[0], v[1], v[2]];
    }
    if let Some(v) = a.checkpoint_every {
        tcfg.checkpoint_every = v;
    }
    tcfg.validate()?;
    let tokenizer_size = match &a.vocab {
        Some(p) => {
            let n = Vocab::load(p).map_err(with_path(p))?.len();
            if n > model.vocab_size {
                return Err(Error::VocabMismatch { tokenizer: n, model: model.vocab_size });
            }
            Some(n)
        }
        None => None,
    };

    let mut records = Vec::new();
    let mut patch_dim = None;
    for p in &a.shard {
        let (header, recs) = read_shard(p).map_err(with_path(p))?;
        if header.record_count > 0 || !recs.is_empty() {
            match patch_dim {
                Some(d) if d != header.patch_dim() => {
                    return Err(Error::ConfigMismatch("shards disagree on patch geometry".into()));
                }
                _ => patch_dim = Some(header.patch_dim()),
            }
        }
        records.extend(recs);
    }
    // the patch projection always follows the shard geometry
    if let Some(d) = patch_dim {
        model.patch_dim = d;
    }
    model.validate()?;
    let kinds: BTreeSet<Modality> = preset.kinds();
    let corpus = Corpus::from_records(records.iter().filter(|r| kinds.contains(&r.modality)), model.patch_dim, TARGET_EPS)?;

    let dir = out_dir(cli)?;
    let params: Params<f32> = Params::init(&model, &mut seed::rng_for(tcfg.seed, seed::INIT));
    let meta = |step: usize| CheckpointMeta { model: model.clone(), step: step as u64, tokenizer_size, task: None };
    let outcome = train(params, &model, &corpus, &tcfg, &kinds, |step, p| {
        save_checkpoint(&Checkpoint::from_params(meta(step), p), &dir.join(format!("step-{step:06}.pxckpt")))
    })?;
    let final_path = dir.join("final.pxckpt");
    save_checkpoint(&Checkpoint::from_params(meta(tcfg.steps), &outcome.params), &final_path)?;
    let log_path = dir.join("metrics.tsv");
    let f = File::create(&log_path).map_err(|e| output_error(&log_path, e))?;
    write_metrics_log(BufWriter::new(f), &outcome.log)?;
    if let Some(last) = outcome.log.last() {
        writeln!(out, "step {} loss {:.6}", last.step, last.loss)?;
    }
    writeln!(out, "checkpoint {}", final_path.display())?;
    writeln!(out, "log {}", log_path.display())?;
    Ok(())
}

fn load_vocab(path: &Option<PathBuf>) -> Result<Vocab> {
    match path {
        Some(p) => Vocab::load(p).map_err(with_path(p)),
        None => Ok(Vocab::base()),
    }
}

fn task_data<G: crate::glyphs::Glyphs + ?Sized>(
    table: &TaskTable,
    builder: &InputBuilder<'_, G>,
    spec: &TaskSpec,
    labels: &[String],
) -> Result<TaskData> {
    let inputs = table.rows.iter().map(|r| builder.build(r)).collect::<Result<Vec<_>>>()?;
    let targets = match spec.kind {
        TaskKind::Regression => Targets::Real(table.real_labels()?),
        TaskKind::Classification(_) => Targets::Class(table.class_labels(labels)?),
    };
    TaskData::new(inputs, targets)
}

fn cmd_finetune(cli: &Cli, cfg: &RunConfig, a: &FinetuneArgs, out: &mut dyn Write) -> Result<()> {
    let ckpt = Checkpoint::load(&a.checkpoint).map_err(with_path(&a.checkpoint))?;
    let vocab = load_vocab(&a.vocab)?;
    let modality: InputModality = a.modality.parse()?;
    if modality != InputModality::Pixel {
        check_vocab(vocab.len(), &ckpt.meta)?;
    }
    let train_table = TaskTable::load(&a.train).map_err(with_path(&a.train))?;
    let dev_table = TaskTable::load(&a.dev).map_err(with_path(&a.dev))?;
    let metric: Metric = a.metric.parse()?;
    let labels = train_table.label_names();
    let kind = if metric == Metric::Spearman { TaskKind::Regression } else { TaskKind::Classification(labels.len()) };
    let spec = TaskSpec {
        name: a.task_name.clone(),
        kind,
        pair_input: train_table.has_pair,
        metric,
        render_mode: a.render_mode.parse()?,
        modality,
    };
    spec.validate()?;
    let mut fcfg = cfg.finetune.clone();
    if let Some(v) = a.steps {
        fcfg.steps = v;
    }
    if let Some(v) = a.lr {
        fcfg.lr = v;
    }
    if let Some(v) = a.batch_size {
        fcfg.batch_size = v;
    }
    if let Some(v) = a.patch_budget {
        fcfg.patch_budget = v;
    }
    fcfg.freeze_backbone |= a.freeze_backbone;

    let mut model_cfg = ckpt.meta.model.clone();
    let mut params = ckpt.params()?;
    if spec.render_mode != RenderMode::Rgb && spec.modality != InputModality::Text {
        let (p, c) = adapt_patch_embedding_channels(&params, &model_cfg)?;
        params = p;
        model_cfg = c;
    }
    let model = attach_task_head(params, &model_cfg, spec.kind, &mut seed::rng_for(fcfg.seed, seed::HEAD_INIT))?;
    let glyphs = GlyphSet::builtin();
    let builder = InputBuilder::for_task(&spec, &glyphs, &vocab, fcfg.patch_budget, model_cfg.max_positions);
    let train_data = task_data(&train_table, &builder, &spec, &labels)?;
    let dev_data = task_data(&dev_table, &builder, &spec, &labels)?;
    let outcome = finetune(model, &spec, &train_data, &dev_data, &fcfg)?;

    let dir = out_dir(cli)?;
    let ckpt_path = dir.join("finetuned.pxckpt");
    let meta = CheckpointMeta {
        model: model_cfg,
        step: outcome.report.step as u64,
        tokenizer_size: (spec.modality != InputModality::Pixel).then_some(vocab.len()).or(ckpt.meta.tokenizer_size),
        task: Some(spec.to_meta(&labels, fcfg.patch_budget)),
    };
    save_checkpoint(&finetuned_checkpoint(meta, &outcome.model), &ckpt_path)?;
    let report_path = dir.join("report.txt");
    write_text(&report_path, &format!("{}\n", outcome.report))?;
    writeln!(out, "{}", outcome.report)?;
    Ok(())
}

pub fn finetuned_checkpoint(meta: CheckpointMeta, model: &FinetuneModel<f32>) -> Checkpoint {
    let mut ckpt = Checkpoint::from_params(meta, &model.params);
    for (name, t) in [(HEAD_WEIGHT, &model.head_w), (HEAD_BIAS, &model.head_b)] {
        ckpt.tensors.push(NamedTensor { name: name.into(), shape: t.shape.clone(), data: t.data.clone() });
    }
    ckpt
}

pub fn load_finetuned(ckpt: &Checkpoint) -> Result<(FinetuneModel<f32>, TaskSpec, Vec<String>, usize)> {
    let task = ckpt.meta.task.as_ref().ok_or_else(|| Error::CorruptCheckpoint("checkpoint has no task head".into()))?;
    let spec = TaskSpec::from_meta(task)?;
    let tensor = |name: &str| -> Result<Tensor<f32>> {
        let t = ckpt.get(name).ok_or_else(|| Error::CorruptCheckpoint(format!("missing tensor {name}")))?;
        Ok(Tensor { shape: t.shape.clone(), data: t.data.clone() })
    };
    let model = FinetuneModel {
        cfg: ckpt.meta.model.clone(),
        params: ckpt.params()?,
        head_w: tensor(HEAD_WEIGHT)?,
        head_b: tensor(HEAD_BIAS)?,
    };
    if model.head_w.shape != [model.cfg.hidden_size, task.n_outputs] {
        return Err(Error::CorruptCheckpoint("task head shape does not match its metadata".into()));
    }
    Ok((model, spec, task.labels.clone(), task.patch_budget))
}

fn cmd_eval(cli: &Cli, a: &EvalArgs, out: &mut dyn Write) -> Result<()> {
    let ckpt = Checkpoint::load(&a.checkpoint).map_err(with_path(&a.checkpoint))?;
    let vocab = load_vocab(&a.vocab)?;
    let (model, spec, labels, budget) = load_finetuned(&ckpt)?;
    if spec.modality != InputModality::Pixel || a.vocab.is_some() {
        check_vocab(vocab.len(), &ckpt.meta)?;
    }
    let table = TaskTable::load(&a.task).map_err(with_path(&a.task))?;
    let glyphs = GlyphSet::builtin();
    let builder = InputBuilder::for_task(&spec, &glyphs, &vocab, budget, model.cfg.max_positions);
    let data = task_data(&table, &builder, &spec, &labels)?;
    let report: EvalReport = evaluate_task(&model, &spec, &data, ckpt.meta.step as usize)?;
    if cli.out.is_some() {
        write_text(&out_dir(cli)?.join("eval_report.txt"), &format!("{report}\n"))?;
    }
    writeln!(out, "{report}")?;
    Ok(())
}

/// Binary PPM (P6) of a `height x width` image with 1 or 3 channels.
pub fn write_ppm<W: Write>(mut w: W, height: usize, width: usize, channels: usize, pixels: &[u8]) -> Result<()> {
    write!(w, "P6\n{width} {height}\n255\n")?;
    if channels == 3 {
        w.write_all(pixels)?;
    } else {
        let rgb: Vec<u8> = pixels.iter().flat_map(|&v| [v, v, v]).collect();
        w.write_all(&rgb)?;
    }
    Ok(())
}

/// Lay a record's patches out left to right as one strip.
fn record_strip(rec: &ShardRecord, p: usize, c: usize) -> (usize, usize, Vec<u8>) {
    let width = rec.n_patches * p;
    let mut pixels = vec![0u8; p * width * c];
    let dim = p * p * c;
    for i in 0..rec.n_patches {
        let patch = &rec.patches[i * dim..(i + 1) * dim];
        for r in 0..p {
            let src = &patch[r * p * c..(r + 1) * p * c];
            let at = (r * width + i * p) * c;
            pixels[at..at + p * c].copy_from_slice(src);
        }
    }
    (p, width, pixels)
}

fn cmd_inspect(a: &InspectArgs, out: &mut dyn Write) -> Result<()> {
    let mut magic = [0u8; 8];
    File::open(&a.path).map_err(input_error(&a.path))?.read_exact(&mut magic).map_err(|_| Error::Parse("file too short to identify".into()))?;
    let mut image: Option<(usize, usize, usize, Vec<u8>)> = None;
    if &magic == SHARD_MAGIC {
        let reader = ShardReader::open(&a.path)?;
        let h = reader.header();
        writeln!(out, "shard version {} records {} patch_px {} channels {}", h.version, h.record_count, h.patch_px, h.channels)?;
        for (i, rec) in reader.enumerate() {
            let rec = rec?;
            writeln!(out, "record {i} {} patches {} tokens {}", rec.modality.name(), rec.n_patches, rec.tokens.len())?;
            if a.dump_strip == Some(i) {
                let (hh, ww, px) = record_strip(&rec, h.patch_px as usize, h.channels as usize);
                image = Some((hh, ww, h.channels as usize, px));
            }
        }
    } else if &magic == CKPT_MAGIC {
        let ckpt = Checkpoint::load(&a.path)?;
        let meta = toml::to_string(&ckpt.meta).map_err(|e| Error::Parse(e.to_string()))?;
        writeln!(out, "checkpoint step {}", ckpt.meta.step)?;
        write!(out, "{meta}")?;
        writeln!(out, "tensors {}", ckpt.tensors.len())?;
        for t in &ckpt.tensors {
            writeln!(out, "tensor {} {:?}", t.name, t.shape)?;
        }
    } else if &magic == b"PXSTRIP1" {
        let (h, w, px) = RenderedStrip::read_golden(File::open(&a.path)?)?;
        writeln!(out, "strip height {h} width {w}")?;
        if a.dump_strip == Some(0) {
            image = Some((h, w, 3, px));
        }
    } else {
        return Err(Error::Parse(format!("{} is not a shard, checkpoint, or strip", a.path.display())));
    }
    if let (Some(idx), Some(path)) = (a.dump_strip, &a.ppm) {
        let (h, w, c, px) = image.ok_or_else(|| Error::InvalidConfig(format!("no strip {idx} in {}", a.path.display())))?;
        let f = File::create(path).map_err(|e| output_error(path, e))?;
        write_ppm(BufWriter::new(f), h, w, c, &px)?;
        writeln!(out, "wrote {}", path.display())?;
    }
    Ok(())
}
