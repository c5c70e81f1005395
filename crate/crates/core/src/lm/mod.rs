//! Toy transformer encoder for masked language modelling with social
//! conditioning.

pub mod config;
pub mod model;
pub mod params;
pub mod real;
pub mod tape;
pub mod tensor;

pub use config::{Injection, ModelConfig};
pub use model::{
    batch_loss, encode, hidden_states, loss_and_gradients, mlm_logits, mlm_loss, sat_forward,
    sat_weights, zero_token_inject, Batch, ForwardPass, LossAndGrads, ParamGrads,
};
pub use params::{ParamEntry, Params};
pub use real::Real;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
