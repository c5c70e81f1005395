//! Data splits, masking, optimization, the training schedules and
//! evaluation.

pub mod batch;
pub mod data;
pub mod eval;
pub mod masking;
pub mod optim;
pub mod substitute;
pub mod trainer;
pub mod vocab;

pub use batch::{make_batch, MaskedSequence};
pub use data::{split_datasets, Corpus, Dataset, DatasetTag, Document, SplitSpec, Splits};
pub use eval::{check_perplexity, evaluate, nats_to_bits, perplexity, EvalConfig, EvalReport};
pub use masking::{mask_tokens, MaskConfig};
pub use optim::{warmup_lr, Adam, AdamConfig};
pub use substitute::freeze_and_substitute;
pub use trainer::{
    curve_average, train_mlm, Schedule, StepLog, TrainConfig, TrainOutcome, Trainer, TrainerState,
};

/// Derives an independent stream seed from `(seed, index)`.
pub fn mix_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed.wrapping_add(index.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
