use std::path::{Path, PathBuf};

use ror::corpus::{generate_synthetic, load_corpus, write_corpus, Corpus, TypeSchema};
use ror::encoder::{EmbeddingFile, EmbeddingSource};
use ror::model::{holdout_split, train_ensemble, train_two_stage, train_with_validation, Task, TrainLog, Variant};
use ror::{DType, Scalar};

use crate::config::{self, Preset, RunConfig};
use crate::failure::{DataContext, Failure, Result};
use crate::run::{say, write_atomic, write_json, RunRecord};
use crate::store::{read_manifest, Predictor};

#[derive(clap::Args, Debug, Default)]
pub struct Common {
    /// TOML or JSON run config; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Base hyperparameters the config file overrides.
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Type schema JSON (default: the bundled ACE schema).
    #[arg(long)]
    pub schema: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(clap::Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub schema: Option<PathBuf>,
    #[arg(long)]
    pub docs: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub min_entities: Option<usize>,
    #[arg(long)]
    pub max_entities: Option<usize>,
    /// Mean instances of each relation type per document.
    #[arg(long)]
    pub density: Option<f64>,
    /// Corpus JSONL to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(clap::Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Training corpus JSONL.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Selection corpus; without it a share of the training corpus is held out.
    #[arg(long)]
    pub val_corpus: Option<PathBuf>,
    /// Checkpoint directory to write (default: <out>/model).
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Which relation-of-relations learners to use: base, bi_only, multi_only, full.
    #[arg(long, value_parser = parse_variant)]
    pub variant: Option<Variant>,
    /// Train a relation detector, then a typing model on detected cells.
    #[arg(long)]
    pub two_stage: bool,
    /// Number of independently seeded models whose probabilities are averaged.
    #[arg(long)]
    pub ensemble: Option<usize>,
    /// Threads per batch (training) or per corpus (prediction).
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Entity embedding file for the external embedding source.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Float width for training and the checkpoint: f32 or f64.
    #[arg(long, value_parser = parse_dtype)]
    pub precision: Option<DType>,
}

#[derive(clap::Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    /// Gold corpus JSONL; its entities are what the model labels.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Checkpoint directory written by `train` (default: <out>/model).
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Prediction JSONL to write (predict only; default: <out>/predictions.jsonl).
    #[arg(long)]
    pub pred: Option<PathBuf>,
}

fn parse_variant(s: &str) -> std::result::Result<Variant, String> {
    s.parse()
}

fn parse_dtype(s: &str) -> std::result::Result<DType, String> {
    match s {
        "f32" => Ok(DType::F32),
        "f64" => Ok(DType::F64),
        _ => Err(format!("unknown precision {s:?} (f32, f64)")),
    }
}

pub fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = config::load(common.config.as_deref(), common.preset)?;
    if let Some(s) = &common.schema {
        cfg.schema = Some(s.clone());
    }
    if let Some(o) = &common.out {
        cfg.out = Some(o.clone());
    }
    Ok(cfg)
}

pub fn read_corpus(path: &Path, schema: &TypeSchema, strict: bool) -> Result<Corpus> {
    let (corpus, report) = load_corpus(path, schema, strict).data(|| format!("loading corpus {}", path.display()))?;
    log::info!("{}: {} documents", path.display(), report.documents);
    Ok(corpus)
}

fn corpus_bytes(corpus: &Corpus) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_corpus(&mut buf, corpus).data(|| "serializing corpus".into())?;
    Ok(buf)
}

fn external(cfg: &RunConfig, source: EmbeddingSource) -> Result<Option<EmbeddingFile>> {
    match (&cfg.embeddings, source) {
        (Some(p), _) => EmbeddingFile::load(p)
            .data(|| format!("loading embeddings {}", p.display()))
            .map(Some),
        (None, EmbeddingSource::External) => Err(Failure::usage(
            "encoder.source is external but no embedding file was given (--embeddings)",
        )),
        (None, EmbeddingSource::Learned) => Ok(None),
    }
}

pub fn synth(args: &SynthArgs) -> Result<()> {
    let cfg = config::load(args.config.as_deref(), None)?;
    let schema = match args.schema.as_ref().or(cfg.schema.as_ref()) {
        Some(p) => TypeSchema::load(p).data(|| format!("loading schema {}", p.display()))?,
        None => TypeSchema::ace05(),
    };
    let mut sc = cfg.synth.clone();
    if let Some(n) = args.docs {
        sc.docs = n;
    }
    if let Some(n) = args.min_entities {
        sc.min_entities = n;
    }
    if let Some(n) = args.max_entities {
        sc.max_entities = n;
    }
    if let Some(d) = args.density {
        sc.density = d;
    }
    let corpus = generate_synthetic(&schema, &sc, args.seed).map_err(|e| Failure::Usage(e.into()))?;
    write_atomic(&args.out, &corpus_bytes(&corpus)?)?;
    log::info!("wrote {} documents to {}", corpus.len(), args.out.display());
    Ok(())
}

fn apply_train_flags(cfg: &mut RunConfig, a: &TrainArgs) {
    if let Some(p) = &a.corpus {
        cfg.corpus = Some(p.clone());
    }
    if let Some(p) = &a.val_corpus {
        cfg.val_corpus = Some(p.clone());
    }
    if let Some(p) = &a.ckpt {
        cfg.ckpt = Some(p.clone());
    }
    if let Some(p) = &a.embeddings {
        cfg.embeddings = Some(p.clone());
    }
    if let Some(s) = a.seed {
        cfg.model.seed = s;
    }
    if let Some(v) = a.variant {
        cfg.model.variant = v;
    }
    if a.two_stage {
        cfg.model.two_stage = true;
    }
    if let Some(n) = a.ensemble {
        cfg.model.ensemble_size = n;
    }
    if let Some(n) = a.workers {
        cfg.model.workers = n;
    }
    if let Some(n) = a.epochs {
        cfg.model.epochs = n;
    }
    if let Some(lr) = a.lr {
        cfg.model.peak_lr = lr;
    }
    if let Some(p) = a.precision {
        cfg.precision = p;
    }
}

pub fn train(args: &TrainArgs) -> Result<()> {
    let mut run = RunRecord::start("train");
    let mut cfg = load_config(&args.common)?;
    apply_train_flags(&mut cfg, args);
    cfg.model.validate().map_err(Failure::usage)?;
    if cfg.model.two_stage && cfg.model.ensemble_size > 1 {
        return Err(Failure::usage("--two-stage and --ensemble > 1 cannot be combined"));
    }
    let out = cfg.out_dir();
    run.config(&cfg, Some(cfg.model.seed));

    let schema = cfg.schema()?;
    let corpus = read_corpus(cfg.require_corpus()?, &schema, true)?;
    let val = cfg.val_corpus.as_deref().map(|p| read_corpus(p, &schema, true)).transpose()?;
    let ext = external(&cfg, cfg.model.encoder.source)?;
    run.phase("load");

    let (manifest, logs) = match cfg.precision {
        DType::F32 => fit::<f32>(&cfg, &corpus, val.as_ref(), ext.as_ref())?,
        DType::F64 => fit::<f64>(&cfg, &corpus, val.as_ref(), ext.as_ref())?,
    };
    run.phase("train");
    write_json(&out.join("train_log.json"), &logs)?;
    let best: Vec<f64> = logs.iter().map(|l| l.best_val_macro_f1).collect();
    log::info!("best validation macro F1 per model: {best:?}");
    run.output("checkpoint", cfg.ckpt_dir());
    run.output("checkpoint_kind", manifest.kind);
    run.output("best_val_macro_f1", best);
    run.finish(&out)
}

fn fit<T: Scalar>(
    cfg: &RunConfig,
    corpus: &Corpus,
    val: Option<&Corpus>,
    ext: Option<&EmbeddingFile>,
) -> Result<(crate::store::Manifest, Vec<TrainLog>)> {
    let m = &cfg.model;
    let (fit_set, val_set) = match val {
        Some(v) => (corpus.clone(), v.clone()),
        None => holdout_split(corpus, m),
    };
    let (predictor, logs): (Predictor<T>, Vec<TrainLog>) = if m.two_stage {
        let (two, logs) = train_two_stage::<T>(&fit_set, &val_set, m, ext, false)?;
        (Predictor::TwoStage(two), logs)
    } else if m.ensemble_size > 1 {
        let (ens, logs) = match val {
            // members share the explicit selection corpus
            Some(v) => {
                let mut members = Vec::new();
                let mut logs = Vec::new();
                for i in 0..m.ensemble_size {
                    let mut c = m.clone();
                    c.seed = m.seed.wrapping_add(i as u64);
                    let o = train_with_validation::<T>(corpus, v, &c, Task::Relations, ext)?;
                    members.push(o.model);
                    logs.push(o.log);
                }
                (ror::model::Ensemble::new(members)?, logs)
            }
            None => train_ensemble::<T>(corpus, m, m.ensemble_size, Task::Relations, ext)?,
        };
        (Predictor::Ensemble(ens), logs)
    } else {
        let o = train_with_validation::<T>(&fit_set, &val_set, m, Task::Relations, ext)?;
        (Predictor::Single(o.model), vec![o.log])
    };
    let manifest = predictor.save(&cfg.ckpt_dir(), cfg.precision)?;
    Ok((manifest, logs))
}

fn apply_eval_flags(cfg: &mut RunConfig, a: &EvalArgs) {
    if let Some(p) = &a.corpus {
        cfg.corpus = Some(p.clone());
    }
    if let Some(p) = &a.ckpt {
        cfg.ckpt = Some(p.clone());
    }
    if let Some(p) = &a.embeddings {
        cfg.embeddings = Some(p.clone());
    }
    if let Some(n) = a.workers {
        cfg.model.workers = n;
    }
}

/// Shared front half of `eval` and `predict`.
fn load_for_inference<T: Scalar>(cfg: &RunConfig, dir: &Path) -> Result<(Predictor<T>, Corpus, Option<EmbeddingFile>)> {
    let manifest = read_manifest(dir)?;
    let mut predictor = Predictor::<T>::load(dir, &manifest)?;
    predictor.set_workers(cfg.model.workers.max(1));
    let schema = predictor.schema().clone();
    if cfg.schema.is_some() && cfg.schema()? != schema {
        return Err(Failure::Data(anyhow::anyhow!(
            "the given schema differs from the one stored in {}",
            dir.display()
        )));
    }
    let corpus = read_corpus(cfg.require_corpus()?, &schema, true)?;
    let ext = external(cfg, predictor.primary().cfg.encoder.source)?;
    Ok((predictor, corpus, ext))
}

fn precision_of(dir: &Path) -> Result<DType> {
    Ok(read_manifest(dir)?.precision)
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    let mut run = RunRecord::start("eval");
    let mut cfg = load_config(&args.common)?;
    apply_eval_flags(&mut cfg, args);
    let out = cfg.out_dir();
    let dir = cfg.ckpt_dir();
    run.config(&cfg, None);
    let report = match precision_of(&dir)? {
        DType::F32 => evaluate::<f32>(&cfg, &dir, &mut run)?,
        DType::F64 => evaluate::<f64>(&cfg, &dir, &mut run)?,
    };
    write_json(&out.join("metrics.json"), &report)?;
    say(&(serde_json::to_string_pretty(&report).expect("report serializes") + "\n"));
    run.output("metrics", out.join("metrics.json"));
    run.output("macro_f1", report.macro_f1);
    run.finish(&out)
}

fn evaluate<T: Scalar>(cfg: &RunConfig, dir: &Path, run: &mut RunRecord) -> Result<ror::analysis::MetricReport> {
    let (predictor, corpus, ext) = load_for_inference::<T>(cfg, dir)?;
    run.phase("load");
    let report = predictor.evaluate(&corpus, ext.as_ref())?;
    run.phase("eval");
    log::info!("macro F1 {:.2}, micro F1 {:.2}", report.macro_f1, report.micro_f1);
    Ok(report)
}

pub fn predict(args: &EvalArgs) -> Result<()> {
    let mut run = RunRecord::start("predict");
    let mut cfg = load_config(&args.common)?;
    apply_eval_flags(&mut cfg, args);
    let out = cfg.out_dir();
    let dir = cfg.ckpt_dir();
    let target = args.pred.clone().unwrap_or_else(|| out.join("predictions.jsonl"));
    run.config(&cfg, None);
    let n = match precision_of(&dir)? {
        DType::F32 => write_predictions::<f32>(&cfg, &dir, &target, &mut run)?,
        DType::F64 => write_predictions::<f64>(&cfg, &dir, &target, &mut run)?,
    };
    log::info!("wrote {n} predicted documents to {}", target.display());
    run.output("predictions", &target);
    run.finish(&out)
}

fn write_predictions<T: Scalar>(cfg: &RunConfig, dir: &Path, target: &Path, run: &mut RunRecord) -> Result<usize> {
    let (predictor, corpus, ext) = load_for_inference::<T>(cfg, dir)?;
    run.phase("load");
    let pred = Corpus::new(corpus.schema.clone(), predictor.predict_corpus(&corpus, ext.as_ref())?);
    run.phase("predict");
    write_atomic(target, &corpus_bytes(&pred)?)?;
    Ok(pred.len())
}
