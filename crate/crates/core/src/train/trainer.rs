//! The MLM training loop, including the two-phase SAT schedule.
//!
//! Batch composition and masking at step `s` are pure functions of the seed
//! and `s`, so a run restored from a [`TrainerState`] continues exactly as
//! the uninterrupted run would have.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::batch::{make_batch, MaskedSequence};
use super::data::Dataset;
use super::eval::{evaluate, nats_to_bits, EvalConfig, EvalReport};
use super::masking::{mask_tokens, MaskConfig};
use super::mix_seed;
use super::optim::{warmup_lr, Adam, AdamConfig};
use super::substitute::freeze_and_substitute;
use crate::embed::SocialEmbedding;
use crate::error::{Error, Result};
use crate::lm::{loss_and_gradients, Injection, ModelConfig, Params};

const SHUFFLE_SALT: u64 = 0x5348_5546;
const MASK_SALT: u64 = 0x4d41_534b;
const SAT_SALT: u64 = 0x5341_5400;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub warmup_steps: usize,
    /// Total optimizer steps, both SAT phases included.
    pub max_steps: usize,
    pub batch_size: usize,
    pub mask: MaskConfig,
    pub adam: AdamConfig,
    pub seed: u64,
    /// SAT only: length of the plain pretraining phase. `None` means one
    /// pass over the training set.
    pub phase1_steps: Option<usize>,
    /// SAT only: rate for the second phase, defaulting to `learning_rate`.
    pub phase2_learning_rate: Option<f64>,
    /// Evaluate on val-k every this many steps (0 disables early stopping).
    pub eval_every: usize,
    /// Stop after this many consecutive evaluations without improvement.
    pub patience: usize,
    pub eval: EvalConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 3e-4,
            warmup_steps: 500,
            max_steps: 20_000,
            batch_size: 32,
            mask: MaskConfig::default(),
            adam: AdamConfig::default(),
            seed: 0,
            phase1_steps: None,
            phase2_learning_rate: None,
            eval_every: 0,
            patience: 3,
            eval: EvalConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.warmup_steps > self.max_steps {
            return Err(Error::Config(alloc::format!(
                "warmup {} exceeds max_steps {}",
                self.warmup_steps,
                self.max_steps
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate >= 0.0) {
            return Err(Error::Config("learning rate must be >= 0".into()));
        }
        Ok(())
    }
}

/// Which training schedule a target config implies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Schedule {
    Baseline,
    ZeroToken,
    SatTwoPhase { layer: usize, channels: usize },
}

impl Schedule {
    pub fn for_config(config: &ModelConfig) -> Self {
        match config.injection {
            Injection::None => Schedule::Baseline,
            Injection::ZeroToken => Schedule::ZeroToken,
            Injection::Sat { layer, channels } => Schedule::SatTwoPhase { layer, channels },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    /// 1-based global step.
    pub step: usize,
    /// Training batch loss in bits.
    pub loss: f64,
    pub lr: f64,
}

/// Mean loss over the last `window` logged steps.
pub fn curve_average(curve: &[StepLog], window: usize) -> Option<f64> {
    let tail = &curve[curve.len().saturating_sub(window)..];
    (!tail.is_empty()).then(|| tail.iter().map(|s| s.loss).sum::<f64>() / tail.len() as f64)
}

/// Everything needed to continue a run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainerState {
    /// The model being trained right now.
    pub config: ModelConfig,
    /// The model the run ends with; differs from `config` during SAT
    /// pretraining.
    pub target: ModelConfig,
    pub params: Params<f32>,
    pub adam: Adam<f32>,
    /// Optimizer steps completed.
    pub step: usize,
    /// Global step at which the current phase started.
    pub phase_start: usize,
    pub substituted_at: Option<usize>,
    pub curve: Vec<StepLog>,
    pub evals: Vec<(usize, f64)>,
    pub best_eval: Option<f64>,
    pub bad_evals: usize,
    pub stopped_early: bool,
}

pub struct Trainer<'a> {
    pub state: TrainerState,
    pub cfg: TrainConfig,
    train: &'a Dataset,
    val_k: Option<&'a Dataset>,
    embeddings: Option<&'a SocialEmbedding>,
}

impl<'a> Trainer<'a> {
    /// Fresh parameters for `target`, or for its plain encoder when the
    /// target uses SAT.
    pub fn new(
        target: &ModelConfig,
        cfg: &TrainConfig,
        train: &'a Dataset,
        val_k: Option<&'a Dataset>,
        embeddings: Option<&'a SocialEmbedding>,
    ) -> Result<Self> {
        target.validate()?;
        let config = match target.injection {
            Injection::Sat { .. } => ModelConfig {
                injection: Injection::None,
                ..target.clone()
            },
            _ => target.clone(),
        };
        let params = Params::init(&config, cfg.seed)?;
        let adam = Adam::new(cfg.adam, params.entries().len());
        let state = TrainerState {
            config,
            target: target.clone(),
            params,
            adam,
            step: 0,
            phase_start: 0,
            substituted_at: None,
            curve: Vec::new(),
            evals: Vec::new(),
            best_eval: None,
            bad_evals: 0,
            stopped_early: false,
        };
        Self::resume(state, cfg, train, val_k, embeddings)
    }

    pub fn resume(
        state: TrainerState,
        cfg: &TrainConfig,
        train: &'a Dataset,
        val_k: Option<&'a Dataset>,
        embeddings: Option<&'a SocialEmbedding>,
    ) -> Result<Self> {
        cfg.validate()?;
        if train.is_empty() {
            return Err(Error::EmptyBatch);
        }
        if state.target.injection != Injection::None {
            let emb = embeddings
                .ok_or_else(|| Error::Config("social injection needs embeddings".into()))?;
            for d in train
                .documents
                .iter()
                .chain(val_k.iter().flat_map(|v| &v.documents))
            {
                emb.require(&d.group_id)?;
            }
        }
        Ok(Trainer {
            state,
            cfg: cfg.clone(),
            train,
            val_k,
            embeddings,
        })
    }

    pub fn phase1_steps(&self) -> usize {
        self.cfg
            .phase1_steps
            .unwrap_or_else(|| self.train.len().div_ceil(self.cfg.batch_size))
    }

    pub fn finished(&self) -> bool {
        self.state.stopped_early || self.state.step >= self.cfg.max_steps
    }

    fn in_pretraining(&self) -> bool {
        self.state.config != self.state.target
    }

    /// Training documents for global step `step` (0-based): consecutive
    /// slices of per-epoch shuffles.
    fn batch_documents(&self, step: usize) -> Vec<usize> {
        let n = self.train.len();
        let b = self.cfg.batch_size;
        let mut out = Vec::with_capacity(b);
        let mut pos = step * b;
        let mut epoch = usize::MAX;
        let mut perm: Vec<usize> = Vec::new();
        while out.len() < b {
            let e = pos / n;
            if e != epoch {
                epoch = e;
                perm = (0..n).collect();
                let mut rng =
                    ChaCha8Rng::seed_from_u64(mix_seed(self.cfg.seed ^ SHUFFLE_SALT, e as u64));
                perm.shuffle(&mut rng);
            }
            out.push(perm[pos % n]);
            pos += 1;
        }
        out
    }

    fn substitute(&mut self) -> Result<()> {
        let Injection::Sat { layer, channels } = self.state.target.injection else {
            return Ok(());
        };
        let (params, config) = freeze_and_substitute(
            &self.state.params,
            &self.state.config,
            layer,
            channels,
            mix_seed(self.cfg.seed ^ SAT_SALT, 0),
        )?;
        log::info!(
            "step {}: layer {layer} frozen and replaced by {channels} SAT channels",
            self.state.step
        );
        self.state.adam = Adam::new(self.cfg.adam, params.entries().len());
        self.state.params = params;
        self.state.config = config;
        self.state.phase_start = self.state.step;
        self.state.substituted_at = Some(self.state.step);
        self.state.best_eval = None;
        self.state.bad_evals = 0;
        Ok(())
    }

    /// One optimizer step.
    pub fn step(&mut self) -> Result<StepLog> {
        if self.in_pretraining() && self.state.step >= self.phase1_steps() {
            self.substitute()?;
        }
        let step = self.state.step;
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(self.cfg.seed ^ MASK_SALT, step as u64));
        let config = &self.state.config;
        let rows: Vec<MaskedSequence<'_>> = self
            .batch_documents(step)
            .into_iter()
            .map(|i| {
                let d = &self.train.documents[i];
                let (inputs, labels) = mask_tokens(
                    &d.sequence(config.max_seq_len),
                    &self.cfg.mask,
                    config.vocab_size,
                    &mut rng,
                );
                MaskedSequence {
                    document: d,
                    inputs,
                    labels,
                }
            })
            .collect();
        let batch = make_batch(&rows, config, self.embeddings)?;
        let base_lr = match self.state.substituted_at {
            Some(_) => self
                .cfg
                .phase2_learning_rate
                .unwrap_or(self.cfg.learning_rate),
            None => self.cfg.learning_rate,
        };
        let lr = warmup_lr(
            base_lr,
            self.cfg.warmup_steps,
            step - self.state.phase_start + 1,
        );
        let log = match loss_and_gradients(&self.state.params, config, &batch) {
            Ok(out) => {
                let loss = out.loss as f64;
                if !loss.is_finite() {
                    return Err(Error::TrainingDiverged { step: step + 1 });
                }
                self.state.adam.step(&mut self.state.params, &out.grads, lr);
                StepLog {
                    step: step + 1,
                    loss: nats_to_bits(loss),
                    lr,
                }
            }
            // nothing selected for prediction in this batch
            Err(Error::EmptyBatch) => StepLog {
                step: step + 1,
                loss: f64::NAN,
                lr,
            },
            Err(e) => return Err(e),
        };
        if !self.state.params.is_finite() {
            return Err(Error::TrainingDiverged { step: step + 1 });
        }
        self.state.step += 1;
        if log.loss.is_finite() {
            self.state.curve.push(log);
        }
        self.maybe_evaluate()?;
        Ok(log)
    }

    fn maybe_evaluate(&mut self) -> Result<()> {
        let (Some(val), every) = (self.val_k, self.cfg.eval_every) else {
            return Ok(());
        };
        if every == 0 || !self.state.step.is_multiple_of(every) {
            return Ok(());
        }
        let report = self.evaluate(val)?;
        self.state.evals.push((self.state.step, report.loss));
        match self.state.best_eval {
            Some(best) if report.loss >= best => {
                self.state.bad_evals += 1;
                // pretraining always runs to the substitution point
                if self.state.bad_evals >= self.cfg.patience && !self.in_pretraining() {
                    log::info!("step {}: val-k loss stopped improving", self.state.step);
                    self.state.stopped_early = true;
                }
            }
            _ => {
                self.state.best_eval = Some(report.loss);
                self.state.bad_evals = 0;
            }
        }
        Ok(())
    }

    pub fn evaluate(&self, dataset: &Dataset) -> Result<EvalReport> {
        evaluate(
            &self.state.params,
            &self.state.config,
            dataset,
            self.embeddings,
            &self.cfg.eval,
        )
    }

    /// Runs until `max_steps`, early stopping, or `until` steps in total.
    pub fn run(&mut self, until: Option<usize>) -> Result<()> {
        let stop = until.unwrap_or(usize::MAX).min(self.cfg.max_steps);
        while !self.finished() && self.state.step < stop {
            self.step()?;
        }
        // a SAT run must end as SAT even if pretraining used the whole budget
        if self.finished() && self.in_pretraining() {
            self.substitute()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: Params<f32>,
    pub config: ModelConfig,
    pub curve: Vec<StepLog>,
    pub evals: Vec<(usize, f64)>,
    pub substituted_at: Option<usize>,
    pub stopped_early: bool,
}

/// Trains `target` from scratch following its schedule.
pub fn train_mlm(
    target: &ModelConfig,
    train: &Dataset,
    val_k: Option<&Dataset>,
    cfg: &TrainConfig,
    embeddings: Option<&SocialEmbedding>,
) -> Result<TrainOutcome> {
    let mut t = Trainer::new(target, cfg, train, val_k, embeddings)?;
    t.run(None)?;
    let s = t.state;
    Ok(TrainOutcome {
        params: s.params,
        config: s.config,
        curve: s.curve,
        evals: s.evals,
        substituted_at: s.substituted_at,
        stopped_early: s.stopped_early,
    })
}
