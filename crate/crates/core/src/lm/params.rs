//! Named parameter store.
//!
//! Names follow a dotted layout (`layer.0.attention.qkv.weight`,
//! `sat.channel.2.ffn.out.bias`, ...). The MLM decoder shares its weight
//! with `embeddings.token`.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{Injection, ModelConfig};
use super::real::Real;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry<T> {
    pub name: String,
    pub tensor: Tensor<T>,
    pub trainable: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Params<T> {
    entries: Vec<ParamEntry<T>>,
}

#[derive(Debug, Clone, Copy)]
enum Init {
    Normal,
    Zeros,
    Ones,
    /// U(-1/sqrt(fan_in), 1/sqrt(fan_in))
    FanIn(usize),
}

/// Suffixes and shapes of one encoder layer's tensors.
pub fn layer_tensor_shapes(config: &ModelConfig) -> Vec<(&'static str, Vec<usize>)> {
    let h = config.hidden_size;
    let f = config.ffn_size;
    vec![
        ("attention.qkv.weight", vec![h, 3 * h]),
        ("attention.qkv.bias", vec![3 * h]),
        ("attention.output.weight", vec![h, h]),
        ("attention.output.bias", vec![h]),
        ("attention.norm.gamma", vec![h]),
        ("attention.norm.beta", vec![h]),
        ("ffn.in.weight", vec![h, f]),
        ("ffn.in.bias", vec![f]),
        ("ffn.out.weight", vec![f, h]),
        ("ffn.out.bias", vec![h]),
        ("ffn.norm.gamma", vec![h]),
        ("ffn.norm.beta", vec![h]),
    ]
}

fn default_init(suffix: &str) -> Init {
    if suffix.ends_with("gamma") {
        Init::Ones
    } else if suffix.ends_with("bias") || suffix.ends_with("beta") {
        Init::Zeros
    } else {
        Init::Normal
    }
}

pub fn layer_prefix(index: usize) -> String {
    format!("layer.{index}")
}

pub fn sat_channel_prefix(channel: usize) -> String {
    format!("sat.channel.{channel}")
}

fn truncated_normal(rng: &mut ChaCha8Rng, std: f64) -> f64 {
    loop {
        let u1: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
        let u2: f64 = rng.random();
        let z = libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(core::f64::consts::TAU * u2);
        if z.abs() <= 2.0 {
            return z * std;
        }
    }
}

fn sample<T: Real>(shape: &[usize], init: Init, rng: &mut ChaCha8Rng) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let data = match init {
        Init::Zeros => vec![T::zero(); n],
        Init::Ones => vec![T::one(); n],
        Init::Normal => (0..n)
            .map(|_| T::from_f64_lossy(truncated_normal(rng, INIT_STD)))
            .collect(),
        Init::FanIn(fan_in) => {
            let bound = 1.0 / libm::sqrt(fan_in as f64);
            (0..n)
                .map(|_| T::from_f64_lossy((rng.random::<f64>() * 2.0 - 1.0) * bound))
                .collect()
        }
    };
    Tensor::from_vec(shape, data)
}

impl<T: Real> Params<T> {
    /// Fresh parameters for `config`. SAT tensors are included when the
    /// config asks for SAT; normally they are created by
    /// [`crate::train::freeze_and_substitute`] instead.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Params::default();
        let (h, v) = (config.hidden_size, config.vocab_size);
        p.push_new("embeddings.token", &[v, h], Init::Normal, &mut rng);
        p.push_new(
            "embeddings.position",
            &[config.max_seq_len, h],
            Init::Normal,
            &mut rng,
        );
        p.push_new("embeddings.norm.gamma", &[h], Init::Ones, &mut rng);
        p.push_new("embeddings.norm.beta", &[h], Init::Zeros, &mut rng);
        let sat_layer = match config.injection {
            Injection::Sat { layer, .. } => Some(layer - 1),
            _ => None,
        };
        for l in 0..config.num_layers {
            if Some(l) == sat_layer {
                continue;
            }
            for (suffix, shape) in layer_tensor_shapes(config) {
                let name = format!("{}.{suffix}", layer_prefix(l));
                p.push_new(&name, &shape, default_init(suffix), &mut rng);
            }
        }
        p.push_new("mlm.transform.weight", &[h, h], Init::Normal, &mut rng);
        p.push_new("mlm.transform.bias", &[h], Init::Zeros, &mut rng);
        p.push_new("mlm.norm.gamma", &[h], Init::Ones, &mut rng);
        p.push_new("mlm.norm.beta", &[h], Init::Zeros, &mut rng);
        p.push_new("mlm.output.bias", &[v], Init::Zeros, &mut rng);
        match config.injection {
            Injection::None => {}
            Injection::ZeroToken => {
                // starts as an exact no-op
                p.push_new(
                    "zero_token.projection",
                    &[h, config.social_dim],
                    Init::Zeros,
                    &mut rng,
                );
            }
            Injection::Sat { channels, .. } => {
                for c in 0..channels {
                    for (suffix, shape) in layer_tensor_shapes(config) {
                        let name = format!("{}.{suffix}", sat_channel_prefix(c));
                        p.push_new(&name, &shape, default_init(suffix), &mut rng);
                    }
                }
                p.add_sat_mlp(config, &mut rng);
            }
        }
        Ok(p)
    }

    pub(crate) fn add_sat_mlp(&mut self, config: &ModelConfig, rng: &mut ChaCha8Rng) {
        let Injection::Sat { channels, .. } = config.injection else {
            return;
        };
        let d = config.social_dim;
        self.push_new("sat.mlp.hidden.weight", &[d, d], Init::FanIn(d), rng);
        self.push_new("sat.mlp.hidden.bias", &[d], Init::FanIn(d), rng);
        self.push_new("sat.mlp.output.weight", &[d, channels], Init::FanIn(d), rng);
        self.push_new("sat.mlp.output.bias", &[channels], Init::FanIn(d), rng);
    }

    fn push_new(&mut self, name: &str, shape: &[usize], init: Init, rng: &mut ChaCha8Rng) {
        let tensor = sample(shape, init, rng);
        self.entries.push(ParamEntry {
            name: name.to_string(),
            tensor,
            trainable: true,
        });
    }

    pub fn from_entries(entries: Vec<ParamEntry<T>>) -> Result<Self> {
        for (i, e) in entries.iter().enumerate() {
            if entries[..i].iter().any(|o| o.name == e.name) {
                return Err(Error::Config(format!("duplicate tensor `{}`", e.name)));
            }
        }
        Ok(Params { entries })
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor<T>, trainable: bool) {
        match self.index_of(name) {
            Some(i) => {
                self.entries[i].tensor = tensor;
                self.entries[i].trainable = trainable;
            }
            None => self.entries.push(ParamEntry {
                name: name.to_string(),
                tensor,
                trainable,
            }),
        }
    }

    pub fn remove_prefix(&mut self, prefix: &str) -> Vec<ParamEntry<T>> {
        let (removed, kept) = core::mem::take(&mut self.entries)
            .into_iter()
            .partition(|e| e.name.starts_with(prefix));
        self.entries = kept;
        removed
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry<T>] {
        &mut self.entries
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index_of(name).map(|i| &self.entries[i].tensor)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor<T>> {
        self.get(name)
            .ok_or_else(|| Error::Config(format!("missing tensor `{name}`")))
    }

    pub fn freeze_all(&mut self) {
        self.entries.iter_mut().for_each(|e| e.trainable = false);
    }

    pub fn num_trainable(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.trainable)
            .map(|e| e.tensor.len())
            .sum()
    }

    pub fn num_parameters(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.entries.iter().all(|e| e.tensor.is_finite())
    }

    pub fn cast<U: Real>(&self) -> Params<U> {
        Params {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry {
                    name: e.name.clone(),
                    tensor: e.tensor.cast(),
                    trainable: e.trainable,
                })
                .collect(),
        }
    }

    /// Checks that every tensor the config needs exists with the right shape.
    pub fn check_against(&self, config: &ModelConfig) -> Result<()> {
        let reference = Params::<T>::init(config, 0)?;
        for e in reference.entries() {
            let have = self.require(&e.name)?;
            if have.shape() != e.tensor.shape() {
                return Err(Error::Shape(format!(
                    "`{}` has shape {:?}, expected {:?}",
                    e.name,
                    have.shape(),
                    e.tensor.shape()
                )));
            }
        }
        Ok(())
    }
}
