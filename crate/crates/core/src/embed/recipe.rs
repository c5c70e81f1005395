use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::skipgram::{train_skipgram, SkipGramConfig};
use super::social::{concat_embeddings, GroupVectors, SocialEmbedding};
use super::svd::truncated_svd;
use super::walks::{generate_walks, jaccard_transition_matrix, WalkConfig};
use crate::error::{Error, Result};
use crate::graph::{compute_intersections, MembershipGraph};
use crate::similarity::{build_similarity_matrix, Metric};

/// How the social vector is assembled. `CorrDw`, `CosDw` and `DwOnly` are
/// the configurations compared in the experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Recipe {
    /// Correlation factorization ‖ walk vectors.
    CorrDw,
    /// Cosine factorization ‖ walk vectors.
    CosDw,
    /// Jaccard factorization ‖ walk vectors.
    JacDw,
    /// Walk vectors only.
    DwOnly,
}

impl Recipe {
    pub fn metric(self) -> Option<Metric> {
        match self {
            Recipe::CorrDw => Some(Metric::Correlation),
            Recipe::CosDw => Some(Metric::Cosine),
            Recipe::JacDw => Some(Metric::Jaccard),
            Recipe::DwOnly => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Recipe::CorrDw => "corr+dw",
            Recipe::CosDw => "cos+dw",
            Recipe::JacDw => "jac+dw",
            Recipe::DwOnly => "dw-only",
        }
    }
}

impl core::str::FromStr for Recipe {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "corr+dw" => Ok(Recipe::CorrDw),
            "cos+dw" => Ok(Recipe::CosDw),
            "jac+dw" => Ok(Recipe::JacDw),
            "dw-only" => Ok(Recipe::DwOnly),
            _ => Err(Error::Config(alloc::format!(
                "unknown recipe `{s}` (expected corr+dw, cos+dw, jac+dw or dw-only)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedConfig {
    pub recipe: Recipe,
    pub d_svd: usize,
    pub walks: WalkConfig,
    pub skipgram: SkipGramConfig,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        EmbedConfig {
            recipe: Recipe::CorrDw,
            d_svd: 16,
            walks: WalkConfig::default(),
            skipgram: SkipGramConfig::default(),
        }
    }
}

impl EmbedConfig {
    /// Uses one seed for walks and skip-gram, and the walk window for both.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.walks.seed = seed;
        self.skipgram.seed = seed;
        self.skipgram.window = self.walks.window;
        self
    }
}

/// Full pipeline from a membership graph to per-group social vectors.
pub fn build_social_embedding(
    graph: &MembershipGraph,
    cfg: &EmbedConfig,
) -> Result<SocialEmbedding> {
    let inter = compute_intersections(graph);
    let ids: Vec<_> = graph.groups().iter().map(|g| g.group_id.clone()).collect();

    let jaccard = build_similarity_matrix(graph, &inter, Metric::Jaccard)?;
    let trans = jaccard_transition_matrix(&jaccard)?;
    let walks = generate_walks(&trans, &cfg.walks)?;
    let sg = train_skipgram(&walks, graph.num_groups(), &cfg.skipgram)?;
    let dw: GroupVectors = ids
        .iter()
        .enumerate()
        .map(|(i, g)| (g.clone(), sg.vector(i).to_vec()))
        .collect();

    let svd = match cfg.recipe.metric() {
        None => None,
        Some(metric) => {
            let sim = if metric == Metric::Jaccard {
                jaccard
            } else {
                build_similarity_matrix(graph, &inter, metric)?
            };
            let f = truncated_svd(&sim, cfg.d_svd)?;
            Some(
                ids.iter()
                    .enumerate()
                    .map(|(i, g)| (g.clone(), f.embedding_row(i).to_vec()))
                    .collect::<GroupVectors>(),
            )
        }
    };
    concat_embeddings(svd.as_ref(), &dw)
}
