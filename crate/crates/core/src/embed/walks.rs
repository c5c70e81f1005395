//! Random walks over the Jaccard-weighted group graph.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::similarity::{Metric, SimilarityMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WalkConfig {
    pub walks_per_node: usize,
    pub walk_length: usize,
    pub window: usize,
    pub seed: u64,
}

impl Default for WalkConfig {
    fn default() -> Self {
        WalkConfig {
            walks_per_node: 80,
            walk_length: 80,
            window: 10,
            seed: 0,
        }
    }
}

impl WalkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.walks_per_node == 0 || self.walk_length == 0 || self.window == 0 {
            return Err(Error::Config(alloc::format!(
                "walk parameters must be >= 1: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Row-stochastic `M × M` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    order: usize,
    probs: Vec<f64>,
    /// Cumulative row sums used for sampling.
    cumulative: Vec<f64>,
}

impl TransitionMatrix {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.probs[i * self.order..(i + 1) * self.order]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.probs[i * self.order + j]
    }

    /// True when the only way out of `i` is back to `i`.
    pub fn is_self_loop(&self, i: usize) -> bool {
        self.get(i, i) == 1.0
    }

    fn step(&self, from: usize, rng: &mut ChaCha8Rng) -> usize {
        let cum = &self.cumulative[from * self.order..(from + 1) * self.order];
        let u = rng.random::<f64>() * cum[self.order - 1];
        cum.partition_point(|&c| c <= u).min(self.order - 1)
    }
}

/// Normalizes off-diagonal Jaccard rows; isolated groups get a self-loop.
pub fn jaccard_transition_matrix(sim: &SimilarityMatrix) -> Result<TransitionMatrix> {
    if sim.metric() != Metric::Jaccard {
        return Err(Error::Config(alloc::format!(
            "transition matrix needs jaccard similarities, got {}",
            sim.metric()
        )));
    }
    let m = sim.order();
    let mut probs = vec![0.0; m * m];
    for i in 0..m {
        let row = &mut probs[i * m..(i + 1) * m];
        let mut total = 0.0;
        for (j, p) in row.iter_mut().enumerate() {
            if j != i {
                *p = sim.get(i, j);
                total += *p;
            }
        }
        if total > 0.0 {
            row.iter_mut().for_each(|p| *p /= total);
        } else {
            row[i] = 1.0;
        }
    }
    let mut cumulative = probs.clone();
    for row in cumulative.chunks_mut(m.max(1)) {
        for j in 1..row.len() {
            row[j] += row[j - 1];
        }
    }
    Ok(TransitionMatrix {
        order: m,
        probs,
        cumulative,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct WalkCorpus {
    pub walks: Vec<Vec<u32>>,
}

impl WalkCorpus {
    pub fn num_steps(&self) -> usize {
        self.walks.iter().map(|w| w.len().saturating_sub(1)).sum()
    }
}

/// Seed for walk `walk` from `node`, independent of scheduling.
fn walk_seed(seed: u64, node: usize, walk: usize) -> u64 {
    let mut z = seed ^ (node as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z ^= (walk as u64).wrapping_mul(0xc2b2_ae3d_27d4_eb4f);
    // splitmix64 finalizer
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn one_walk(trans: &TransitionMatrix, start: usize, length: usize, seed: u64) -> Vec<u32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut walk = Vec::with_capacity(length);
    walk.push(start as u32);
    let mut at = start;
    while walk.len() < length && !trans.is_self_loop(at) {
        at = trans.step(at, &mut rng);
        walk.push(at as u32);
    }
    walk
}

/// `walks_per_node` walks from every group, ordered by walk index then node.
/// A walk stops early only at a node whose row is a pure self-loop.
pub fn generate_walks(trans: &TransitionMatrix, cfg: &WalkConfig) -> Result<WalkCorpus> {
    cfg.validate()?;
    let m = trans.order();
    let jobs = cfg.walks_per_node * m;
    let run = |k: usize| {
        let (walk, node) = (k / m, k % m);
        one_walk(
            trans,
            node,
            cfg.walk_length,
            walk_seed(cfg.seed, node, walk),
        )
    };
    #[cfg(feature = "std")]
    let walks = {
        use rayon::prelude::*;
        (0..jobs).into_par_iter().map(run).collect()
    };
    #[cfg(not(feature = "std"))]
    let walks = (0..jobs).map(run).collect();
    Ok(WalkCorpus { walks })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn jac(values: Vec<f64>, n: usize) -> SimilarityMatrix {
        SimilarityMatrix::new(Metric::Jaccard, n, values).unwrap()
    }

    #[test]
    fn two_groups_single_neighbor() {
        let t = jaccard_transition_matrix(&jac(vec![1.0, 0.4, 0.4, 1.0], 2)).unwrap();
        assert_eq!(t.row(0), &[0.0, 1.0]);
        assert_eq!(t.row(1), &[1.0, 0.0]);
    }

    #[test]
    fn isolated_group_self_loop() {
        let t =
            jaccard_transition_matrix(&jac(vec![1.0, 0.5, 0.0, 0.5, 1.0, 0.0, 0.0, 0.0, 1.0], 3))
                .unwrap();
        assert_eq!(t.row(2), &[0.0, 0.0, 1.0]);
        assert!(t.is_self_loop(2));
    }

    #[test]
    fn rejects_other_metrics() {
        let s = SimilarityMatrix::new(Metric::Cosine, 1, vec![1.0]).unwrap();
        assert!(jaccard_transition_matrix(&s).is_err());
    }

    #[test]
    fn counts_and_lengths() {
        let n = 4;
        let mut v = vec![0.2; n * n];
        (0..n).for_each(|i| v[i * n + i] = 1.0);
        let t = jaccard_transition_matrix(&jac(v, n)).unwrap();
        let cfg = WalkConfig {
            walks_per_node: 2,
            walk_length: 3,
            window: 1,
            seed: 9,
        };
        let c = generate_walks(&t, &cfg).unwrap();
        assert_eq!(c.walks.len(), 8);
        assert!(c.walks.iter().all(|w| w.len() == 3));
        assert_eq!(c, generate_walks(&t, &cfg).unwrap());
    }

    #[test]
    fn isolated_start_truncates() {
        let t = jaccard_transition_matrix(&jac(vec![1.0], 1)).unwrap();
        let c = generate_walks(&t, &WalkConfig::default()).unwrap();
        assert_eq!(c.walks.len(), 80);
        assert!(c.walks.iter().all(|w| w == &[0]));
    }

    #[test]
    fn components_stay_separate() {
        // {0,1} and {2,3}
        let v = vec![
            1.0, 0.3, 0.0, 0.0, //
            0.3, 1.0, 0.0, 0.0, //
            0.0, 0.0, 1.0, 0.7, //
            0.0, 0.0, 0.7, 1.0,
        ];
        let t = jaccard_transition_matrix(&jac(v, 4)).unwrap();
        let c = generate_walks(
            &t,
            &WalkConfig {
                seed: 3,
                ..Default::default()
            },
        )
        .unwrap();
        for w in &c.walks {
            let side = w[0] / 2;
            assert!(w.iter().all(|&g| g / 2 == side));
        }
    }
}
