//! Post-norm transformer encoder with an MLM head and the two social
//! injection paths.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::config::{Injection, ModelConfig};
use super::params::{layer_prefix, sat_channel_prefix, Params};
use super::real::Real;
use super::tape::{Gradients, Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// One padded mini-batch. Position 0 of every row is the classification
/// token.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub batch_size: usize,
    pub seq_len: usize,
    /// `batch_size × seq_len`, row-major.
    pub token_ids: Vec<u32>,
    /// `true` for real tokens, `false` for padding.
    pub attention_mask: Vec<bool>,
    /// Target token at masked positions only.
    pub labels: Vec<Option<u32>>,
    /// `batch_size × social_dim`; may be empty when no injection is used.
    pub social: Vec<f64>,
    pub social_dim: usize,
    pub group_ids: Vec<String>,
}

impl Batch {
    pub fn masked_positions(&self) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter_map(|(i, l)| l.map(|_| i))
            .collect()
    }

    pub fn num_masked(&self) -> usize {
        self.labels.iter().filter(|l| l.is_some()).count()
    }

    fn check(&self, config: &ModelConfig) -> Result<()> {
        let cells = self.batch_size * self.seq_len;
        if self.token_ids.len() != cells
            || self.attention_mask.len() != cells
            || self.labels.len() != cells
        {
            return Err(Error::Shape(format!(
                "batch arrays do not match {}×{}",
                self.batch_size, self.seq_len
            )));
        }
        if self.seq_len > config.max_seq_len {
            return Err(Error::Shape(format!(
                "sequence length {} exceeds {}",
                self.seq_len, config.max_seq_len
            )));
        }
        for &id in self.token_ids.iter().chain(self.labels.iter().flatten()) {
            if id as usize >= config.vocab_size {
                return Err(Error::Vocab {
                    id: id as usize,
                    vocab: config.vocab_size,
                });
            }
        }
        if config.injection != Injection::None
            && self.social.len() != self.batch_size * config.social_dim
        {
            return Err(Error::Shape(format!(
                "social block has {} values, expected {}×{}",
                self.social.len(),
                self.batch_size,
                config.social_dim
            )));
        }
        Ok(())
    }
}

/// A tape plus lazily bound parameter leaves. Trainable tensors become
/// gradient-receiving leaves, frozen ones become constants.
pub struct ForwardPass<'p, T: Real> {
    pub tape: Tape<'p, T>,
    params: &'p Params<T>,
    bound: Vec<Option<Var>>,
}

/// Gradients aligned with [`Params::entries`]; `None` for frozen or unused
/// tensors.
pub type ParamGrads<T> = Vec<Option<Tensor<T>>>;

impl<'p, T: Real> ForwardPass<'p, T> {
    pub fn new(params: &'p Params<T>) -> Self {
        ForwardPass {
            tape: Tape::new(),
            params,
            bound: vec![None; params.entries().len()],
        }
    }

    pub fn param(&mut self, name: &str) -> Result<Var> {
        let idx = self
            .params
            .index_of(name)
            .ok_or_else(|| Error::Config(format!("missing tensor `{name}`")))?;
        if let Some(v) = self.bound[idx] {
            return Ok(v);
        }
        let entry = &self.params.entries()[idx];
        let v = if entry.trainable {
            self.tape.param(&entry.tensor)
        } else {
            self.tape.constant(&entry.tensor)
        };
        self.bound[idx] = Some(v);
        Ok(v)
    }

    fn p(&mut self, prefix: &str, suffix: &str) -> Result<Var> {
        self.param(&format!("{prefix}.{suffix}"))
    }

    /// Reverse sweep from `loss`, collected per parameter tensor.
    pub fn compute_gradients(&self, loss: Var) -> ParamGrads<T> {
        let mut grads: Gradients<T> = self.tape.backward(loss);
        self.bound
            .iter()
            .zip(self.params.entries())
            .map(|(v, e)| match v {
                Some(v) if e.trainable => grads.take(*v),
                _ => None,
            })
            .collect()
    }
}

fn social_tensor<T: Real>(batch: &Batch, dim: usize) -> Tensor<T> {
    Tensor::from_vec(
        &[batch.batch_size, dim],
        batch.social.iter().map(|&x| T::from_f64_lossy(x)).collect(),
    )
}

/// One post-norm encoder layer whose tensors live under `prefix`.
pub fn encoder_layer<T: Real>(
    fp: &mut ForwardPass<'_, T>,
    prefix: &str,
    x: Var,
    config: &ModelConfig,
    batch: &Batch,
) -> Result<Var> {
    let qkv_w = fp.p(prefix, "attention.qkv.weight")?;
    let qkv_b = fp.p(prefix, "attention.qkv.bias")?;
    let qkv = fp.tape.linear(x, qkv_w, Some(qkv_b), false);
    let ctx = fp.tape.attention(
        qkv,
        batch.batch_size,
        batch.seq_len,
        config.num_heads,
        &batch.attention_mask,
    );
    let out_w = fp.p(prefix, "attention.output.weight")?;
    let out_b = fp.p(prefix, "attention.output.bias")?;
    let attn = fp.tape.linear(ctx, out_w, Some(out_b), false);
    let res = fp.tape.add(x, attn);
    let g = fp.p(prefix, "attention.norm.gamma")?;
    let b = fp.p(prefix, "attention.norm.beta")?;
    let x1 = fp.tape.layer_norm(res, g, b);

    let in_w = fp.p(prefix, "ffn.in.weight")?;
    let in_b = fp.p(prefix, "ffn.in.bias")?;
    let inner = fp.tape.linear(x1, in_w, Some(in_b), false);
    let inner = fp.tape.gelu(inner);
    let out_w = fp.p(prefix, "ffn.out.weight")?;
    let out_b = fp.p(prefix, "ffn.out.bias")?;
    let ffn = fp.tape.linear(inner, out_w, Some(out_b), false);
    let res = fp.tape.add(x1, ffn);
    let g = fp.p(prefix, "ffn.norm.gamma")?;
    let b = fp.p(prefix, "ffn.norm.beta")?;
    Ok(fp.tape.layer_norm(res, g, b))
}

/// Adds `P · social` to the position-0 row of each sequence in `embeddings`.
pub fn zero_token_inject<T: Real>(
    fp: &mut ForwardPass<'_, T>,
    embeddings: Var,
    social: Var,
    seq_len: usize,
) -> Result<Var> {
    let proj = fp.param("zero_token.projection")?;
    let shift = fp.tape.linear(social, proj, None, true);
    Ok(fp.tape.add_first_row(embeddings, shift, seq_len))
}

/// Mixture weights `softmax(MLP(social))`, one row per sequence.
pub fn sat_weights<T: Real>(fp: &mut ForwardPass<'_, T>, social: Var) -> Result<Var> {
    let w1 = fp.param("sat.mlp.hidden.weight")?;
    let b1 = fp.param("sat.mlp.hidden.bias")?;
    let h = fp.tape.linear(social, w1, Some(b1), false);
    let h = fp.tape.gelu(h);
    let w2 = fp.param("sat.mlp.output.weight")?;
    let b2 = fp.param("sat.mlp.output.bias")?;
    let logits = fp.tape.linear(h, w2, Some(b2), false);
    Ok(fp.tape.softmax(logits))
}

/// `Σ_c W_c · Layer_c(hidden)` with `W = softmax(MLP(social))` computed once
/// per sequence.
pub fn sat_forward<T: Real>(
    fp: &mut ForwardPass<'_, T>,
    hidden: Var,
    social: Var,
    config: &ModelConfig,
    batch: &Batch,
) -> Result<Var> {
    let Injection::Sat { channels, .. } = config.injection else {
        return Err(Error::Config("sat_forward without SAT injection".into()));
    };
    let weights = sat_weights(fp, social)?;
    let mut outputs = Vec::with_capacity(channels);
    for c in 0..channels {
        outputs.push(encoder_layer(
            fp,
            &sat_channel_prefix(c),
            hidden,
            config,
            batch,
        )?);
    }
    Ok(fp.tape.mix(weights, &outputs, batch.seq_len))
}

/// Final hidden states, `[B·S, H]`.
pub fn encode<T: Real>(
    fp: &mut ForwardPass<'_, T>,
    config: &ModelConfig,
    batch: &Batch,
) -> Result<Var> {
    batch.check(config)?;
    let ids: Vec<usize> = batch.token_ids.iter().map(|&t| t as usize).collect();
    let positions: Vec<usize> = (0..batch.batch_size)
        .flat_map(|_| 0..batch.seq_len)
        .collect();
    let tok_table = fp.param("embeddings.token")?;
    let pos_table = fp.param("embeddings.position")?;
    let tok = fp.tape.embedding(tok_table, &ids);
    let pos = fp.tape.embedding(pos_table, &positions);
    let mut x = fp.tape.add(tok, pos);

    let social = match config.injection {
        Injection::None => None,
        _ => Some(
            fp.tape
                .constant_owned(social_tensor(batch, config.social_dim)),
        ),
    };
    if let (Injection::ZeroToken, Some(s)) = (config.injection, social) {
        x = zero_token_inject(fp, x, s, batch.seq_len)?;
    }
    let g = fp.param("embeddings.norm.gamma")?;
    let b = fp.param("embeddings.norm.beta")?;
    x = fp.tape.layer_norm(x, g, b);

    let sat_layer = match config.injection {
        Injection::Sat { layer, .. } => Some(layer - 1),
        _ => None,
    };
    for l in 0..config.num_layers {
        x = match (sat_layer, social) {
            (Some(s), Some(soc)) if s == l => sat_forward(fp, x, soc, config, batch)?,
            _ => encoder_layer(fp, &layer_prefix(l), x, config, batch)?,
        };
    }
    Ok(x)
}

/// Vocabulary logits for the given rows of `hidden`; the decoder is tied to
/// the token embedding table.
pub fn mlm_logits<T: Real>(
    fp: &mut ForwardPass<'_, T>,
    hidden: Var,
    rows: &[usize],
) -> Result<Var> {
    let picked = fp.tape.gather_rows(hidden, rows);
    let w = fp.param("mlm.transform.weight")?;
    let b = fp.param("mlm.transform.bias")?;
    let h = fp.tape.linear(picked, w, Some(b), false);
    let h = fp.tape.gelu(h);
    let g = fp.param("mlm.norm.gamma")?;
    let beta = fp.param("mlm.norm.beta")?;
    let h = fp.tape.layer_norm(h, g, beta);
    let table = fp.param("embeddings.token")?;
    let bias = fp.param("mlm.output.bias")?;
    Ok(fp.tape.linear(h, table, Some(bias), true))
}

/// Mean natural-log cross-entropy over the masked positions of `batch`.
pub fn mlm_loss<T: Real>(fp: &mut ForwardPass<'_, T>, hidden: Var, batch: &Batch) -> Result<Var> {
    let rows = batch.masked_positions();
    if rows.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let labels: Vec<usize> = rows
        .iter()
        .map(|&r| batch.labels[r].expect("masked") as usize)
        .collect();
    let logits = mlm_logits(fp, hidden, &rows)?;
    Ok(fp.tape.cross_entropy(logits, &labels))
}

#[derive(Debug, Clone)]
pub struct LossAndGrads<T> {
    /// Mean natural-log cross-entropy.
    pub loss: T,
    pub masked: usize,
    pub grads: ParamGrads<T>,
}

/// Forward and backward over one batch.
pub fn loss_and_gradients<T: Real>(
    params: &Params<T>,
    config: &ModelConfig,
    batch: &Batch,
) -> Result<LossAndGrads<T>> {
    let mut fp = ForwardPass::new(params);
    let hidden = encode(&mut fp, config, batch)?;
    let loss = mlm_loss(&mut fp, hidden, batch)?;
    let value = fp.tape.value(loss).item();
    let grads = fp.compute_gradients(loss);
    Ok(LossAndGrads {
        loss: value,
        masked: batch.num_masked(),
        grads,
    })
}

/// Forward only: `(mean natural-log loss, masked count)`.
pub fn batch_loss<T: Real>(
    params: &Params<T>,
    config: &ModelConfig,
    batch: &Batch,
) -> Result<(T, usize)> {
    let mut fp = ForwardPass::new(params);
    let hidden = encode(&mut fp, config, batch)?;
    let loss = mlm_loss(&mut fp, hidden, batch)?;
    Ok((fp.tape.value(loss).item(), batch.num_masked()))
}

/// Final hidden states as a plain tensor.
pub fn hidden_states<T: Real>(
    params: &Params<T>,
    config: &ModelConfig,
    batch: &Batch,
) -> Result<Tensor<T>> {
    let mut fp = ForwardPass::new(params);
    let hidden = encode(&mut fp, config, batch)?;
    Ok(fp.tape.value(hidden).clone())
}
