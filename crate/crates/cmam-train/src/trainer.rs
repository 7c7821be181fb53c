//! Training loop and evaluation: epoch iteration over width-bucketed
//! mini-batches, per-batch parallel forward/backward, RMSProp updates,
//! greedy-decode validation, and best-checkpoint tracking.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use cmam_core::ctc::{ctc_loss, greedy_decode, min_time_steps, CtcError};
use cmam_core::memory::MemoryConfig;
use cmam_core::metrics::{edit_ops, report, MetricReport};
use cmam_core::model::{cmam_forward, crnn_forward, init_cmam_params, init_crnn_params, CmamConfig, CrnnConfig};
use cmam_core::nn::ConvStack;
use cmam_core::params::{Binder, ParamStore, TensorData};
use cmam_core::tensor::{Result as TResult, Tape, TensorError, Var};
use cmam_synth::dataset::DatasetError;
use cmam_synth::load_dataset;

use crate::checkpoint::{Checkpoint, CheckpointError};
use crate::config::{ConfigError, ModelKind, SizeProfile, TrainConfig};
use crate::optim::RmsProp;

#[derive(Debug)]
pub enum TrainError {
    Config(ConfigError),
    Data(DatasetError),
    VocabMismatch { path: String, expected: usize, found: usize },
    Checkpoint(CheckpointError),
    Numeric(String),
    NoTrainableSamples,
}

impl fmt::Display for TrainError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrainError::Config(e) => write!(f, "config: {e}"),
            TrainError::Data(e) => write!(f, "dataset: {e}"),
            TrainError::VocabMismatch { path, expected, found } => write!(
                f,
                "vocabulary mismatch: config expects {expected} classes but {path} lists {found}"
            ),
            TrainError::Checkpoint(e) => write!(f, "checkpoint: {e}"),
            TrainError::Numeric(msg) => write!(f, "numeric failure: {msg}"),
            TrainError::NoTrainableSamples => {
                write!(f, "every training sample is infeasible for its image width")
            }
        }
    }
}

impl std::error::Error for TrainError {}

impl From<ConfigError> for TrainError {
    fn from(e: ConfigError) -> Self {
        TrainError::Config(e)
    }
}

impl From<DatasetError> for TrainError {
    fn from(e: DatasetError) -> Self {
        TrainError::Data(e)
    }
}

impl From<CheckpointError> for TrainError {
    fn from(e: CheckpointError) -> Self {
        TrainError::Checkpoint(e)
    }
}

impl From<TensorError> for TrainError {
    fn from(e: TensorError) -> Self {
        TrainError::Numeric(e.to_string())
    }
}

/// Model architecture resolved from a config: which forward function, its
/// dimensions, and the conv stack.
#[derive(Debug, Clone)]
pub enum Arch {
    Cmam { cfg: CmamConfig, stack: ConvStack },
    Crnn { cfg: CrnnConfig, stack: ConvStack },
}

impl Arch {
    pub fn from_config(tc: &TrainConfig) -> Arch {
        let stack = match tc.profile {
            SizeProfile::Default => ConvStack::default_ocr(),
            SizeProfile::Tiny => ConvStack::tiny(),
        };
        match tc.model {
            ModelKind::Cmam => Arch::Cmam {
                cfg: CmamConfig {
                    feature: stack.feature_width,
                    hidden: tc.hidden,
                    mem: MemoryConfig {
                        slots: tc.mem_slots,
                        width: tc.mem_width,
                        read_heads: tc.read_heads,
                    },
                    refinements: tc.refinements,
                    vocab: tc.vocab,
                },
                stack,
            },
            ModelKind::Crnn => Arch::Crnn {
                cfg: CrnnConfig {
                    feature: stack.feature_width,
                    hidden: tc.hidden,
                    layers: 2,
                    vocab: tc.vocab,
                },
                stack,
            },
        }
    }

    pub fn init_params(&self, seed: u64) -> ParamStore {
        match self {
            Arch::Cmam { cfg, stack } => init_cmam_params(cfg, stack, seed),
            Arch::Crnn { cfg, stack } => init_crnn_params(cfg, stack, seed),
        }
    }

    pub fn stack(&self) -> &ConvStack {
        match self {
            Arch::Cmam { stack, .. } | Arch::Crnn { stack, .. } => stack,
        }
    }

    pub fn forward(&self, tape: &Tape, bind: &Binder, image: Var) -> TResult<Var> {
        match self {
            Arch::Cmam { cfg, stack } => cmam_forward(tape, bind, cfg, stack, image),
            Arch::Crnn { cfg, stack } => crnn_forward(tape, bind, cfg, stack, image),
        }
    }
}

/// One training/evaluation record: the ink image as a `1xHxW` tensor.
#[derive(Debug, Clone)]
pub struct Sample {
    pub rel_path: String,
    pub image: TensorData,
    pub label: Vec<usize>,
    pub width: usize,
}

/// Loads a dataset given its manifest path; checks the vocabulary size
/// against the config.
pub fn load_samples(manifest: &Path, expect_vocab: usize) -> Result<Vec<Sample>, TrainError> {
    let dir = manifest.parent().unwrap_or_else(|| Path::new("."));
    let data = load_dataset(dir)?;
    if data.vocab.len() != expect_vocab {
        return Err(TrainError::VocabMismatch {
            path: dir.join("vocab.txt").display().to_string(),
            expected: expect_vocab,
            found: data.vocab.len(),
        });
    }
    Ok(data
        .samples
        .into_iter()
        .map(|s| Sample {
            rel_path: s.rel_path,
            width: s.image.width,
            image: TensorData::new(vec![1, s.image.height, s.image.width], s.image.pixels),
            label: s.label,
        })
        .collect())
}

fn pad_image(image: &TensorData, target_width: usize) -> TensorData {
    let (h, w) = (image.shape[1], image.shape[2]);
    if w == target_width {
        return image.clone();
    }
    let mut out = vec![0.0; h * target_width];
    for row in 0..h {
        out[row * target_width..row * target_width + w]
            .copy_from_slice(&image.values[row * w..(row + 1) * w]);
    }
    TensorData::new(vec![1, h, target_width], out)
}

fn forward_loss_grads(
    arch: &Arch,
    params: &ParamStore,
    image: &TensorData,
    label: &[usize],
) -> Result<(f64, BTreeMap<String, Vec<f64>>), TrainError> {
    let tape = Tape::new();
    let bind = Binder::new(&tape, params);
    let img = tape.leaf(&image.shape, image.values.clone())?;
    let logits = arch.forward(&tape, &bind, img)?;
    let loss = ctc_loss(&tape, logits, label).map_err(|e| match e {
        CtcError::Tensor(t) => TrainError::Numeric(t.to_string()),
        other => TrainError::Numeric(other.to_string()),
    })?;
    let value = tape.value_scalar(loss);
    if !value.is_finite() {
        return Err(TrainError::Numeric(format!("non-finite loss {value}")));
    }
    tape.backward(loss)?;
    Ok((value, bind.grads_full()))
}

fn decode_sample(arch: &Arch, params: &ParamStore, image: &TensorData) -> Result<Vec<usize>, TrainError> {
    let tape = Tape::new();
    let bind = Binder::new(&tape, params);
    let img = tape.leaf(&image.shape, image.values.clone())?;
    let logits = arch.forward(&tape, &bind, img)?;
    let shape = tape.shape(logits);
    let values = tape.value_vec(logits);
    Ok(greedy_decode(&values, shape[0], shape[1]))
}

/// Validation CER by greedy decode over the whole corpus, parallel per
/// line with order-preserving aggregation.
pub fn corpus_cer(arch: &Arch, params: &ParamStore, samples: &[Sample]) -> Result<MetricReport, TrainError> {
    let hyps: Vec<Vec<usize>> = samples
        .par_iter()
        .map(|s| decode_sample(arch, params, &s.image))
        .collect::<Result<_, _>>()?;
    let refs: Vec<Vec<usize>> = samples.iter().map(|s| s.label.clone()).collect();
    Ok(report(&refs, &hyps).expect("parallel corpora by construction"))
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// One line per epoch: `epoch <n> loss <f> valid_cer <f> skipped <n>`.
    pub log: String,
    pub best_valid_cer: f64,
    pub epochs_run: usize,
    pub skipped_per_epoch: usize,
}

/// Runs the full training loop and writes the best-validation checkpoint
/// to the configured path. With `echo` set, log lines also go to stdout
/// as they are produced.
pub fn train(cfg: &TrainConfig, echo: bool) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    let arch = Arch::from_config(cfg);
    let train_samples = load_samples(&cfg.train_manifest, cfg.vocab)?;
    let valid_samples = load_samples(&cfg.valid_manifest, cfg.vocab)?;

    let stack = arch.stack();
    let mut feasible: Vec<usize> = Vec::new();
    let mut skipped = 0usize;
    for (i, s) in train_samples.iter().enumerate() {
        let t = stack.output_columns(s.width);
        if min_time_steps(&s.label) <= t {
            feasible.push(i);
        } else {
            skipped += 1;
        }
    }
    if feasible.is_empty() {
        return Err(TrainError::NoTrainableSamples);
    }
    // width buckets: ascending width, stable by index, chunked into batches
    feasible.sort_by_key(|&i| (train_samples[i].width, i));
    let batches: Vec<Vec<usize>> = feasible.chunks(cfg.batch_size).map(|c| c.to_vec()).collect();

    let mut params = arch.init_params(cfg.seed);
    let mut opt = RmsProp::new(cfg.learning_rate, cfg.rmsprop_decay, cfg.rmsprop_eps, cfg.clip_norm, &params);
    let mut step = 0u64;

    let mut log = String::new();
    let mut best_cer = f64::INFINITY;
    let mut stale_epochs = 0usize;
    let mut epochs_run = 0usize;

    for epoch in 1..=cfg.max_epochs {
        epochs_run = epoch;
        let mut order: Vec<usize> = (0..batches.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(epoch as u64).wrapping_mul(0x9E3779B97F4A7C15));
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        let mut loss_count = 0usize;
        for &bi in &order {
            let batch = &batches[bi];
            let max_w = batch.iter().map(|&i| train_samples[i].width).max().unwrap();
            let results: Vec<Result<(f64, BTreeMap<String, Vec<f64>>), TrainError>> = batch
                .par_iter()
                .map(|&i| {
                    let s = &train_samples[i];
                    let padded = pad_image(&s.image, max_w);
                    forward_loss_grads(&arch, &params, &padded, &s.label)
                })
                .collect();
            let mut batch_grads: BTreeMap<String, Vec<f64>> = BTreeMap::new();
            let mut members = 0usize;
            for r in results {
                let (loss, grads) = r?;
                loss_sum += loss;
                loss_count += 1;
                members += 1;
                for (name, g) in grads {
                    batch_grads
                        .entry(name)
                        .and_modify(|acc| {
                            for (a, b) in acc.iter_mut().zip(&g) {
                                *a += b;
                            }
                        })
                        .or_insert(g);
                }
            }
            let inv = 1.0 / members as f64;
            for g in batch_grads.values_mut() {
                for v in g.iter_mut() {
                    *v *= inv;
                }
            }
            opt.step(&mut params, &batch_grads);
            step += 1;
        }

        let valid = corpus_cer(&arch, &params, &valid_samples)?;
        let epoch_loss = loss_sum / loss_count as f64;
        let line = format!(
            "epoch {epoch} loss {epoch_loss:.6} valid_cer {:.6} skipped {skipped}\n",
            valid.cer
        );
        if echo {
            print!("{line}");
        }
        log.push_str(&line);

        if valid.cer < best_cer {
            best_cer = valid.cer;
            stale_epochs = 0;
            let ck = Checkpoint::assemble(&params, &opt.acc, step, cfg.snapshot());
            ck.save(&cfg.checkpoint)?;
        } else {
            stale_epochs += 1;
            if stale_epochs >= cfg.patience {
                break;
            }
        }
    }

    Ok(TrainOutcome { log, best_valid_cer: best_cer, epochs_run, skipped_per_epoch: skipped })
}

/// Checks that a checkpoint's parameter tensors exactly match the shapes
/// the architecture expects; rejects extra, missing, or resized tensors.
pub fn validate_checkpoint_params(arch: &Arch, params: &ParamStore) -> Result<(), TrainError> {
    let expected = arch.init_params(0);
    let mut problems = Vec::new();
    for (name, t) in expected.iter() {
        match params.get(name) {
            None => problems.push(format!("missing tensor {name}")),
            Some(got) if got.shape != t.shape => {
                problems.push(format!("tensor {name}: shape {:?} vs expected {:?}", got.shape, t.shape))
            }
            _ => {}
        }
    }
    for (name, _) in params.iter() {
        if expected.get(name).is_none() {
            problems.push(format!("unexpected tensor {name}"));
        }
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(TrainError::Checkpoint(CheckpointError::ArchMismatch { diff: problems }))
    }
}

#[derive(Debug, Clone)]
pub struct WorstLine {
    pub rel_path: String,
    pub line_cer: f64,
    pub reference: Vec<usize>,
    pub hypothesis: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct EvalOutput {
    pub report: MetricReport,
    pub worst: Vec<WorstLine>,
}

/// Loads a checkpoint, rebuilds its architecture from the embedded config
/// snapshot, and scores a dataset. Deterministic: same checkpoint and data
/// give the identical report.
pub fn evaluate_checkpoint(ckpt_path: &Path, manifest: &Path) -> Result<EvalOutput, TrainError> {
    let ck = Checkpoint::load(ckpt_path)?;
    let cfg = TrainConfig::parse(&ck.config_snapshot)?;
    let arch = Arch::from_config(&cfg);
    let params = ck.params();
    validate_checkpoint_params(&arch, &params)?;
    let samples = load_samples(manifest, cfg.vocab)?;
    evaluate_params(&arch, &params, &samples)
}

pub fn evaluate_params(
    arch: &Arch,
    params: &ParamStore,
    samples: &[Sample],
) -> Result<EvalOutput, TrainError> {
    let hyps: Vec<Vec<usize>> = samples
        .par_iter()
        .map(|s| decode_sample(arch, params, &s.image))
        .collect::<Result<_, _>>()?;
    let refs: Vec<Vec<usize>> = samples.iter().map(|s| s.label.clone()).collect();
    let rep = report(&refs, &hyps).expect("parallel corpora by construction");

    let mut lines: Vec<WorstLine> = samples
        .iter()
        .zip(&hyps)
        .map(|(s, h)| {
            let ops = edit_ops(&s.label, h);
            let denom = s.label.len().max(1) as f64;
            WorstLine {
                rel_path: s.rel_path.clone(),
                line_cer: ops.total() as f64 / denom,
                reference: s.label.clone(),
                hypothesis: h.clone(),
            }
        })
        .collect();
    lines.sort_by(|a, b| b.line_cer.partial_cmp(&a.line_cer).unwrap().then(a.rel_path.cmp(&b.rel_path)));
    lines.truncate(10);
    Ok(EvalOutput { report: rep, worst: lines })
}

/// Greedy decode of a single image through a checkpoint; returns class
/// indices. The CLI resolves glyph names separately.
pub fn decode_with_checkpoint(ckpt_path: &Path, image: &TensorData) -> Result<Vec<usize>, TrainError> {
    let ck = Checkpoint::load(ckpt_path)?;
    let cfg = TrainConfig::parse(&ck.config_snapshot)?;
    let arch = Arch::from_config(&cfg);
    let params = ck.params();
    validate_checkpoint_params(&arch, &params)?;
    decode_sample(&arch, &params, image)
}
