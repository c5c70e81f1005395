use alloc::format;
use alloc::vec::Vec;

use super::data::Document;
use super::vocab::PAD;
use crate::embed::SocialEmbedding;
use crate::error::{Error, Result};
use crate::lm::{Batch, Injection, ModelConfig};

/// A document after masking: model inputs and per-position targets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedSequence<'d> {
    pub document: &'d Document,
    pub inputs: Vec<u32>,
    pub labels: Vec<Option<u32>>,
}

/// Pads the sequences to a common length and attaches social vectors. The
/// social block is left empty when the model does not use it.
pub fn make_batch(
    rows: &[MaskedSequence<'_>],
    config: &ModelConfig,
    embeddings: Option<&SocialEmbedding>,
) -> Result<Batch> {
    let seq_len = rows.iter().map(|r| r.inputs.len()).max().unwrap_or(0);
    let b = rows.len();
    let mut token_ids = Vec::with_capacity(b * seq_len);
    let mut attention_mask = Vec::with_capacity(b * seq_len);
    let mut labels = Vec::with_capacity(b * seq_len);
    for r in rows {
        let pad = seq_len - r.inputs.len();
        token_ids.extend(
            r.inputs
                .iter()
                .copied()
                .chain(core::iter::repeat_n(PAD, pad)),
        );
        attention_mask.extend(
            core::iter::repeat_n(true, r.inputs.len()).chain(core::iter::repeat_n(false, pad)),
        );
        labels.extend(
            r.labels
                .iter()
                .copied()
                .chain(core::iter::repeat_n(None, pad)),
        );
    }
    let mut social = Vec::new();
    if config.injection != Injection::None {
        let emb =
            embeddings.ok_or_else(|| Error::Config("model needs social embeddings".into()))?;
        if emb.dim() != config.social_dim {
            return Err(Error::Shape(format!(
                "embeddings have {} dimensions, model expects {}",
                emb.dim(),
                config.social_dim
            )));
        }
        social.reserve(b * config.social_dim);
        for r in rows {
            social.extend_from_slice(emb.require(&r.document.group_id)?);
        }
    }
    Ok(Batch {
        batch_size: b,
        seq_len,
        token_ids,
        attention_mask,
        labels,
        social,
        social_dim: config.social_dim,
        group_ids: rows.iter().map(|r| r.document.group_id.clone()).collect(),
    })
}
