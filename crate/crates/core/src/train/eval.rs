//! Held-out evaluation and the loss / perplexity report.

use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::batch::{make_batch, MaskedSequence};
use super::data::{Dataset, DatasetTag};
use super::masking::{mask_tokens, MaskConfig};
use super::mix_seed;
use crate::embed::SocialEmbedding;
use crate::error::{Error, Result};
use crate::lm::{batch_loss, ModelConfig, Params, Real};

/// Natural-log loss to the reported base-2 loss.
pub fn nats_to_bits(loss: f64) -> f64 {
    loss / core::f64::consts::LN_2
}

pub fn perplexity(loss_bits: f64) -> f64 {
    libm::exp2(loss_bits)
}

/// True when `perplexity` is `2^loss` up to `tolerance`.
pub fn check_perplexity(loss_bits: f64, perplexity_value: f64, tolerance: f64) -> bool {
    (perplexity(loss_bits) - perplexity_value).abs() <= tolerance
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tag: DatasetTag,
    /// Mean masked-token cross-entropy in bits.
    pub loss: f64,
    pub perplexity: f64,
    /// Number of masked tokens scored.
    pub count: usize,
}

impl EvalReport {
    pub fn from_nats(tag: DatasetTag, loss_nats: f64, count: usize) -> Result<Self> {
        Self::from_bits(tag, nats_to_bits(loss_nats), count)
    }

    pub fn from_bits(tag: DatasetTag, loss: f64, count: usize) -> Result<Self> {
        if !(loss.is_finite() && loss >= 0.0) {
            return Err(Error::Config(alloc::format!("invalid loss {loss}")));
        }
        Ok(EvalReport {
            tag,
            loss,
            perplexity: perplexity(loss),
            count,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub mask: MaskConfig,
    pub seed: u64,
    pub batch_size: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            mask: MaskConfig::pure(0.15),
            seed: 0x5eed,
            batch_size: 64,
        }
    }
}

/// Mean masked-token loss over `dataset`. Each document is masked with a
/// seed derived from its position, so the result depends only on the inputs.
pub fn evaluate<T: Real>(
    params: &Params<T>,
    config: &ModelConfig,
    dataset: &Dataset,
    embeddings: Option<&SocialEmbedding>,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    if dataset.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut total = 0.0;
    let mut count = 0usize;
    let docs: Vec<(usize, &super::data::Document)> = dataset.documents.iter().enumerate().collect();
    for chunk in docs.chunks(cfg.batch_size.max(1)) {
        let rows: Vec<MaskedSequence<'_>> = chunk
            .iter()
            .map(|&(i, d)| {
                let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, i as u64));
                let (inputs, labels) = mask_tokens(
                    &d.sequence(config.max_seq_len),
                    &cfg.mask,
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
        if rows.iter().all(|r| r.labels.iter().all(Option::is_none)) {
            continue;
        }
        let batch = make_batch(&rows, config, embeddings)?;
        let (mean, n) = batch_loss(params, config, &batch)?;
        total += mean.to_f64_lossy() * n as f64;
        count += n;
    }
    if count == 0 {
        return Err(Error::EmptyBatch);
    }
    EvalReport::from_nats(dataset.tag, total / count as f64, count)
}
