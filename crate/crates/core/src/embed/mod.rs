//! Group embeddings: a truncated factorization of a similarity matrix and
//! skip-gram vectors learned from random walks, concatenated per group.

pub mod recipe;
pub mod skipgram;
pub mod social;
pub mod svd;
pub mod walks;

pub use recipe::{build_social_embedding, EmbedConfig, Recipe};
pub use skipgram::{pair_loss_and_gradient, train_skipgram, SkipGramConfig, SkipGramModel};
pub use social::{concat_embeddings, GroupVectors, SocialEmbedding};
pub use svd::{factorize, symmetric_eigen, truncated_svd, SvdFactors};
pub use walks::{
    generate_walks, jaccard_transition_matrix, TransitionMatrix, WalkConfig, WalkCorpus,
};
