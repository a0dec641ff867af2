//! The training loop: dense warmup, sparse main phase, periodic exact
//! refresh, metrics logging, checkpointing, and resume.

use crate::error::{ElasError, Result};
use crate::model::{ModelGrads, TinyTransformer};
use crate::optim::{AdamHyper, LrSchedule, OptimizerState};
use crate::sparsity::{SparsifierKind, SparsifierVariant};
use crate::train::checkpoint::{Checkpoint, Record};
use crate::train::config::TrainConfig;
use crate::train::corpus::Corpus;
use std::path::Path;
use std::time::Instant;

/// One line of the metrics CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub step: u64,
    pub lr: f64,
    pub train_loss: f64,
    pub eval_loss: f64,
    pub eval_ppl: f64,
    pub ffn_sparsity: f64,
    pub ms_per_step: f64,
}

pub const METRICS_HEADER: &str = "step,lr,train_loss,eval_loss,eval_ppl,ffn_sparsity,ms_per_step";

fn fmt_metric(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.6e}")
    } else {
        "NaN".to_string()
    }
}

impl MetricsRow {
    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.step,
            fmt_metric(self.lr),
            fmt_metric(self.train_loss),
            fmt_metric(self.eval_loss),
            fmt_metric(self.eval_ppl),
            fmt_metric(self.ffn_sparsity),
            fmt_metric(self.ms_per_step),
        )
    }
}

/// How a run ended.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TrainStatus {
    Completed,
    /// A non-finite loss or gradient appeared while executing this step.
    Diverged { step: u64 },
}

/// Everything a finished (or diverged) run reports back.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub status: TrainStatus,
    pub rows: Vec<MetricsRow>,
    /// Sparsifier invocations per executed step, indexed from the first
    /// step this run executed.
    pub sparsifier_calls_per_step: Vec<u64>,
}

impl TrainOutcome {
    pub fn final_eval_loss(&self) -> f64 {
        self.rows.last().map_or(f64::NAN, |r| r.eval_loss)
    }

    pub fn final_eval_ppl(&self) -> f64 {
        self.rows.last().map_or(f64::NAN, |r| r.eval_ppl)
    }
}

/// Model + optimizer + progress counter, as restored from a checkpoint.
pub struct TrainState {
    pub model: TinyTransformer<f32>,
    pub opt: OptimizerState<f32>,
    /// Number of completed optimizer steps.
    pub step: u64,
}

pub fn initial_state(cfg: &TrainConfig) -> Result<TrainState> {
    let variant = SparsifierVariant::of_kind(cfg.sparsifier);
    let model = TinyTransformer::new(cfg.model_config(), cfg.seed, variant)?;
    let opt = OptimizerState::new(&model, AdamHyper::default(), cfg.f_refresh);
    Ok(TrainState { model, opt, step: 0 })
}

/// Train from a fresh initialization.
pub fn run_training(cfg: &TrainConfig) -> Result<TrainOutcome> {
    let state = initial_state(cfg)?;
    let corpus = Corpus::load(Path::new(&cfg.corpus))?;
    run_loop(cfg, &corpus, state)
}

/// Continue a checkpointed run; remaining steps reproduce exactly what an
/// uninterrupted run would have logged.
pub fn resume_training(checkpoint_path: &Path) -> Result<(TrainConfig, TrainOutcome)> {
    let (cfg, state) = load_state(checkpoint_path)?;
    let corpus = Corpus::load(Path::new(&cfg.corpus))?;
    let outcome = run_loop(&cfg, &corpus, state)?;
    Ok((cfg, outcome))
}

/// Evaluate a checkpoint on its corpus' held-out split.
pub fn evaluate_checkpoint(checkpoint_path: &Path) -> Result<(TrainConfig, f64, f64)> {
    let (cfg, state) = load_state(checkpoint_path)?;
    let corpus = Corpus::load(Path::new(&cfg.corpus))?;
    let sparse = state.step >= cfg.n_warmup;
    let loss = eval_loss(&state.model, &corpus, cfg.eval_sequences, cfg.seq_len, sparse)?;
    Ok((cfg, loss, loss.exp()))
}

fn eval_loss(
    model: &TinyTransformer<f32>,
    corpus: &Corpus,
    count: usize,
    seq_len: usize,
    sparsity_on: bool,
) -> Result<f64> {
    let batch = corpus.eval_batch(count, seq_len)?;
    let mut total = 0.0;
    for seq in &batch {
        total += model.forward(seq, sparsity_on)?.loss;
    }
    Ok(total / batch.len() as f64)
}

struct BatchResult {
    loss: f64,
    grads: ModelGrads<f32>,
    ffn_sparsity: f64,
    sparsifier_calls: u64,
}

fn batch_forward_backward(
    model: &TinyTransformer<f32>,
    batch: &[Vec<usize>],
    sparsity_on: bool,
) -> Result<BatchResult> {
    let mut grads = ModelGrads::zeros_like(model);
    let mut loss = 0.0;
    let mut sparsity = 0.0;
    let mut calls = 0;
    for seq in batch {
        let out = model.forward(seq, sparsity_on)?;
        loss += out.loss;
        sparsity += out.saved.ffn_natural_sparsity();
        calls += out.saved.sparsifier_calls;
        let g = model.backward(&out.saved)?;
        grads.add_assign(&g);
    }
    let n = batch.len() as f64;
    grads.scale(1.0 / n as f32);
    Ok(BatchResult {
        loss: loss / n,
        grads,
        ffn_sparsity: sparsity / n,
        sparsifier_calls: calls,
    })
}

fn run_loop(cfg: &TrainConfig, corpus: &Corpus, mut state: TrainState) -> Result<TrainOutcome> {
    let schedule = LrSchedule::new(cfg.base_lr, cfg.min_lr);
    let mut rows = Vec::new();
    let mut calls_per_step = Vec::new();
    let start = state.step;
    let fresh = start == 0;

    // A fresh run logs the untrained model at step 0 so later rows can be
    // compared against the starting point.
    if fresh {
        let sparse0 = cfg.n_warmup == 0;
        let batch0 = corpus.train_batch(cfg.seed, 0, cfg.batch_size, cfg.seq_len)?;
        let mut loss0 = 0.0;
        let mut sp0 = 0.0;
        for seq in &batch0 {
            let out = state.model.forward(seq, sparse0)?;
            loss0 += out.loss;
            sp0 += out.saved.ffn_natural_sparsity();
        }
        let n0 = batch0.len() as f64;
        let ev = eval_loss(&state.model, corpus, cfg.eval_sequences, cfg.seq_len, sparse0)?;
        rows.push(MetricsRow {
            step: 0,
            lr: schedule.lr_at(0, cfg.n_total),
            train_loss: loss0 / n0,
            eval_loss: ev,
            eval_ppl: ev.exp(),
            ffn_sparsity: sp0 / n0,
            ms_per_step: 0.0,
        });
    }

    let mut interval_clock = Instant::now();
    let mut steps_in_interval = 0u64;
    let mut diverged_at = None;

    for step in start..cfg.n_total {
        let sparsity_on = step >= cfg.n_warmup;

        // Soft-activation runs fit their per-layer scales on the first
        // post-warmup batch, once.
        if sparsity_on
            && cfg.sparsifier == SparsifierKind::SoftActivation
            && state.model.blocks[0].ffn.sparsifier.scale.is_none()
        {
            let batch = corpus.train_batch(cfg.seed, step, cfg.batch_size, cfg.seq_len)?;
            state.model.calibrate_soft_activation(&batch)?;
        }

        let batch = corpus.train_batch(cfg.seed, step, cfg.batch_size, cfg.seq_len)?;
        let lr = schedule.lr_at(step, cfg.n_total);
        let result = batch_forward_backward(&state.model, &batch, sparsity_on);
        let (train_loss, ffn_sparsity) = match &result {
            Ok(br) => {
                calls_per_step.push(br.sparsifier_calls);
                (br.loss, br.ffn_sparsity)
            }
            Err(_) => {
                calls_per_step.push(0);
                (f64::NAN, f64::NAN)
            }
        };

        let step_ok = match result {
            Ok(br) if br.loss.is_finite() => {
                state.opt.step_approx(&mut state.model, &br.grads, lr).is_ok()
            }
            _ => false,
        };
        state.step = step + 1;
        steps_in_interval += 1;

        if !step_ok {
            rows.push(MetricsRow {
                step: state.step,
                lr,
                train_loss,
                eval_loss: f64::NAN,
                eval_ppl: f64::NAN,
                ffn_sparsity,
                ms_per_step: 0.0,
            });
            diverged_at = Some(state.step);
            break;
        }

        if cfg.f_refresh > 0 && state.step % cfg.f_refresh == 0 && state.step < cfg.n_total {
            state.opt.refresh_model(&mut state.model);
        }

        if state.step % cfg.eval_interval == 0 || state.step == cfg.n_total {
            let ev = eval_loss(&state.model, corpus, cfg.eval_sequences, cfg.seq_len, sparsity_on)?;
            let ms = if cfg.record_timing {
                interval_clock.elapsed().as_secs_f64() * 1e3 / steps_in_interval as f64
            } else {
                0.0
            };
            rows.push(MetricsRow {
                step: state.step,
                lr,
                train_loss,
                eval_loss: ev,
                eval_ppl: ev.exp(),
                ffn_sparsity,
                ms_per_step: ms,
            });
            interval_clock = Instant::now();
            steps_in_interval = 0;
        }

        // Periodic checkpoints get a step suffix so the final checkpoint
        // never overwrites a mid-run snapshot.
        if cfg.checkpoint_every > 0
            && state.step % cfg.checkpoint_every == 0
            && state.step < cfg.n_total
            && !cfg.checkpoint_path.is_empty()
        {
            let path = format!("{}.step{}", cfg.checkpoint_path, state.step);
            save_state(cfg, &state, Path::new(&path))?;
        }
    }

    if diverged_at.is_none() && !cfg.checkpoint_path.is_empty() {
        save_state(cfg, &state, Path::new(&cfg.checkpoint_path))?;
    }

    if !cfg.metrics_path.is_empty() {
        write_metrics(Path::new(&cfg.metrics_path), &rows)?;
    }

    Ok(TrainOutcome {
        status: match diverged_at {
            Some(step) => TrainStatus::Diverged { step },
            None => TrainStatus::Completed,
        },
        rows,
        sparsifier_calls_per_step: calls_per_step,
    })
}

pub fn write_metrics(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let mut text = String::from(METRICS_HEADER);
    text.push('\n');
    for row in rows {
        text.push_str(&row.to_csv_line());
        text.push('\n');
    }
    std::fs::write(path, text)?;
    Ok(())
}

/// Serialize config, progress counters, parameters, Adam moments, and any
/// calibrated sparsifier scales.
pub fn save_state(cfg: &TrainConfig, state: &TrainState, path: &Path) -> Result<()> {
    let mut ckpt = Checkpoint::default();
    ckpt.push("config", Record::Bytes(cfg.to_text().into_bytes()));
    ckpt.push("train.step", Record::U64(state.step));
    ckpt.push("train.seed", Record::U64(cfg.seed));
    ckpt.push("optim.step", Record::U64(state.opt.step));
    let names = state.model.param_names();
    for ((name, param), moments) in state.model.params().into_iter().zip(&state.opt.moments) {
        ckpt.push(name.clone(), Record::matrix(param));
        ckpt.push(format!("{name}.m"), Record::matrix(&moments.m));
        ckpt.push(format!("{name}.v"), Record::matrix(&moments.v));
    }
    debug_assert_eq!(names.len(), state.opt.moments.len());
    for (i, block) in state.model.blocks.iter().enumerate() {
        if let Some(beta) = block.ffn.sparsifier.scale {
            ckpt.push(format!("layer{i}.ffn.scale"), Record::scalar_f64(beta));
        }
    }
    ckpt.save(path)
}

/// Rebuild config, model, and optimizer from a checkpoint. The file is
/// parsed and validated in full before any state is constructed.
pub fn load_state(path: &Path) -> Result<(TrainConfig, TrainState)> {
    let ckpt = Checkpoint::load(path)?;
    let cfg_text = match ckpt.get("config")? {
        Record::Bytes(b) => String::from_utf8(b.clone())
            .map_err(|_| ElasError::Checkpoint("config record is not utf-8".into()))?,
        _ => return Err(ElasError::Checkpoint("config record has wrong dtype".into())),
    };
    let cfg = TrainConfig::from_text(&cfg_text, &[])?;
    let mut state = initial_state(&cfg)?;
    state.step = ckpt.get("train.step")?.as_u64("train.step")?;
    state.opt.step = ckpt.get("optim.step")?.as_u64("optim.step")?;
    let names = state.model.param_names();
    for ((name, param), moments) in state
        .model
        .params_mut()
        .into_iter()
        .zip(state.opt.moments.iter_mut())
    {
        for (target, suffix) in [(&mut *param, ""), (&mut moments.m, ".m"), (&mut moments.v, ".v")]
        {
            let key = format!("{name}{suffix}");
            let loaded = ckpt.get(&key)?.as_matrix(&key)?;
            if loaded.rows() != target.rows() || loaded.cols() != target.cols() {
                return Err(ElasError::Checkpoint(format!(
                    "record '{key}' has shape {}x{}, expected {}x{}",
                    loaded.rows(),
                    loaded.cols(),
                    target.rows(),
                    target.cols()
                )));
            }
            *target = loaded;
        }
    }
    debug_assert_eq!(names.len(), state.opt.moments.len());
    for (i, block) in state.model.blocks.iter_mut().enumerate() {
        let key = format!("layer{i}.ffn.scale");
        if ckpt.contains(&key) {
            block.ffn.sparsifier.scale = Some(ckpt.get(&key)?.as_f64(&key)?);
        }
    }
    Ok((cfg, state))
}
