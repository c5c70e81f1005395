use alloc::format;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::lm::params::{layer_prefix, layer_tensor_shapes, sat_channel_prefix};
use crate::lm::{Injection, ModelConfig, Params, Real};

/// Freezes a trained plain encoder and replaces layer `layer` (1-based) by
/// `channels` trainable copies of it, mixed by a freshly initialized MLP.
pub fn freeze_and_substitute<T: Real>(
    params: &Params<T>,
    config: &ModelConfig,
    layer: usize,
    channels: usize,
    seed: u64,
) -> Result<(Params<T>, ModelConfig)> {
    if config.injection != Injection::None {
        return Err(Error::Config(format!(
            "substitution expects a plain encoder, got {:?}",
            config.injection
        )));
    }
    let new_config = ModelConfig {
        injection: Injection::Sat { layer, channels },
        ..config.clone()
    };
    new_config.validate()?;
    params.check_against(config)?;

    let mut out = params.clone();
    out.freeze_all();
    let prefix = format!("{}.", layer_prefix(layer - 1));
    let original = out.remove_prefix(&prefix);
    for c in 0..channels {
        for (suffix, _) in layer_tensor_shapes(config) {
            let src = original
                .iter()
                .find(|e| e.name.strip_prefix(&prefix) == Some(suffix))
                .ok_or_else(|| Error::Config(format!("missing tensor `{prefix}{suffix}`")))?;
            out.insert(
                &format!("{}.{suffix}", sat_channel_prefix(c)),
                src.tensor.clone(),
                true,
            );
        }
    }
    out.add_sat_mlp(&new_config, &mut ChaCha8Rng::seed_from_u64(seed));
    Ok((out, new_config))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelConfig {
        ModelConfig {
            num_layers: 2,
            hidden_size: 8,
            num_heads: 2,
            ffn_size: 16,
            vocab_size: 20,
            max_seq_len: 8,
            social_dim: 3,
            injection: Injection::None,
        }
    }

    #[test]
    fn layer_out_of_range() {
        let c = small();
        let p = Params::<f64>::init(&c, 1).unwrap();
        assert!(matches!(
            freeze_and_substitute(&p, &c, 0, 2, 0),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            freeze_and_substitute(&p, &c, 3, 2, 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn only_sat_tensors_trainable() {
        let c = small();
        let p = Params::<f64>::init(&c, 1).unwrap();
        let (q, qc) = freeze_and_substitute(&p, &c, 2, 3, 0).unwrap();
        q.check_against(&qc).unwrap();
        for e in q.entries() {
            assert_eq!(e.trainable, e.name.starts_with("sat."), "{}", e.name);
        }
        assert!(q.get("layer.1.ffn.in.weight").is_none());
        assert_eq!(
            q.get("sat.channel.2.ffn.in.weight"),
            p.get("layer.1.ffn.in.weight")
        );
    }
}
