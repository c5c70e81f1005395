//! Skip-gram with negative sampling over a walk corpus.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::walks::WalkCorpus;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SkipGramConfig {
    pub dim: usize,
    pub window: usize,
    pub epochs: usize,
    pub negatives: usize,
    /// Initial rate, decayed linearly to 1e-4 of itself.
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for SkipGramConfig {
    fn default() -> Self {
        SkipGramConfig {
            dim: 16,
            window: 10,
            epochs: 1,
            negatives: 5,
            learning_rate: 0.025,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkipGramModel {
    dim: usize,
    /// Input vectors, `num_nodes × dim`.
    vectors: Vec<f64>,
    /// Mean pair loss of each epoch.
    pub epoch_losses: Vec<f64>,
}

impl SkipGramModel {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_nodes(&self) -> usize {
        self.vectors.len() / self.dim.max(1)
    }

    pub fn vector(&self, node: usize) -> &[f64] {
        &self.vectors[node * self.dim..(node + 1) * self.dim]
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `-ln σ(x)`, stable for large |x|.
fn neg_log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        libm::log1p(libm::exp(-x))
    } else {
        -x + libm::log1p(libm::exp(x))
    }
}

/// Loss and gradients of one `(center, context, negatives)` example:
/// `-ln σ(v·u_o) - Σ ln σ(-v·u_n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairGradient {
    pub loss: f64,
    pub center: Vec<f64>,
    pub context: Vec<f64>,
    pub negatives: Vec<Vec<f64>>,
}

pub fn pair_loss_and_gradient(
    center: &[f64],
    context: &[f64],
    negatives: &[&[f64]],
) -> PairGradient {
    let s = dot(center, context);
    let mut loss = neg_log_sigmoid(s);
    let g = sigmoid(s) - 1.0;
    let mut d_center: Vec<f64> = context.iter().map(|u| g * u).collect();
    let d_context = center.iter().map(|v| g * v).collect();
    let mut d_neg = Vec::with_capacity(negatives.len());
    for n in negatives {
        let s = dot(center, n);
        loss += neg_log_sigmoid(-s);
        let g = sigmoid(s);
        d_center
            .iter_mut()
            .zip(n.iter())
            .for_each(|(d, u)| *d += g * u);
        d_neg.push(center.iter().map(|v| g * v).collect());
    }
    PairGradient {
        loss,
        center: d_center,
        context: d_context,
        negatives: d_neg,
    }
}

/// Cumulative unigram^0.75 table.
fn noise_table(corpus: &WalkCorpus, num_nodes: usize) -> Vec<f64> {
    let mut counts = vec![0.0f64; num_nodes];
    for w in &corpus.walks {
        for &g in w {
            counts[g as usize] += 1.0;
        }
    }
    let mut acc = 0.0;
    counts
        .iter()
        .map(|&c| {
            acc += libm::pow(c, 0.75);
            acc
        })
        .collect()
}

/// Trains one vector per node. Nodes that never occur in a walk keep a zero
/// vector. Deterministic for a fixed seed.
pub fn train_skipgram(
    corpus: &WalkCorpus,
    num_nodes: usize,
    cfg: &SkipGramConfig,
) -> Result<SkipGramModel> {
    if corpus.walks.iter().all(|w| w.is_empty()) {
        return Err(Error::Config("empty walk corpus".into()));
    }
    if cfg.dim == 0 || cfg.window == 0 {
        return Err(Error::Config(
            "skip-gram needs dim >= 1 and window >= 1".into(),
        ));
    }
    if let Some(&g) = corpus
        .walks
        .iter()
        .flatten()
        .find(|&&g| g as usize >= num_nodes)
    {
        return Err(Error::Config(alloc::format!(
            "walk node {g} outside 0..{num_nodes}"
        )));
    }
    let d = cfg.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut input: Vec<f64> = (0..num_nodes * d)
        .map(|_| (rng.random::<f64>() - 0.5) / d as f64)
        .collect();
    let mut output = vec![0.0; num_nodes * d];
    let noise = noise_table(corpus, num_nodes);
    let noise_total = *noise.last().unwrap_or(&0.0);
    let seen: Vec<bool> = noise
        .iter()
        .enumerate()
        .map(|(i, &c)| c > if i == 0 { 0.0 } else { noise[i - 1] })
        .collect();

    let pairs_per_epoch: usize = corpus
        .walks
        .iter()
        .map(|w| {
            (0..w.len())
                .map(|i| i.min(cfg.window) + (w.len() - 1 - i).min(cfg.window))
                .sum::<usize>()
        })
        .sum();
    let total = (pairs_per_epoch * cfg.epochs).max(1) as f64;
    let mut done = 0usize;
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut grad_center = vec![0.0; d];
    let mut negs = Vec::with_capacity(cfg.negatives);

    for _ in 0..cfg.epochs {
        let mut epoch_loss = 0.0;
        for walk in &corpus.walks {
            for (i, &center) in walk.iter().enumerate() {
                let lo = i.saturating_sub(cfg.window);
                let hi = (i + cfg.window + 1).min(walk.len());
                for j in (lo..hi).filter(|&j| j != i) {
                    let lr = cfg.learning_rate * (1.0 - done as f64 / total).max(1e-4);
                    done += 1;
                    let context = walk[j] as usize;
                    let c = center as usize;
                    negs.clear();
                    for _ in 0..cfg.negatives {
                        let u = rng.random::<f64>() * noise_total;
                        let n = noise.partition_point(|&x| x <= u).min(num_nodes - 1);
                        if n != context {
                            negs.push(n);
                        }
                    }
                    grad_center.iter_mut().for_each(|g| *g = 0.0);
                    let v = &input[c * d..(c + 1) * d];
                    for (target, label) in
                        core::iter::once((context, 1.0)).chain(negs.iter().map(|&n| (n, 0.0)))
                    {
                        let u = &mut output[target * d..(target + 1) * d];
                        let s = dot(v, u);
                        epoch_loss += if label == 1.0 {
                            neg_log_sigmoid(s)
                        } else {
                            neg_log_sigmoid(-s)
                        };
                        let g = sigmoid(s) - label;
                        for k in 0..d {
                            grad_center[k] += g * u[k];
                            u[k] -= lr * g * v[k];
                        }
                    }
                    input[c * d..(c + 1) * d]
                        .iter_mut()
                        .zip(&grad_center)
                        .for_each(|(x, g)| *x -= lr * g);
                }
            }
        }
        epoch_losses.push(epoch_loss / pairs_per_epoch.max(1) as f64);
    }

    for (node, &s) in seen.iter().enumerate() {
        if !s {
            log::warn!("group index {node} never occurs in a walk; using a zero vector");
            input[node * d..(node + 1) * d]
                .iter_mut()
                .for_each(|x| *x = 0.0);
        }
    }
    Ok(SkipGramModel {
        dim: d,
        vectors: input,
        epoch_losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cosine(a: &[f64], b: &[f64]) -> f64 {
        dot(a, b) / libm::sqrt(dot(a, a) * dot(b, b))
    }

    #[test]
    fn pair_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut vecs: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..6).map(|_| rng.random::<f64>() - 0.5).collect())
            .collect();
        let loss = |v: &[Vec<f64>]| pair_loss_and_gradient(&v[0], &v[1], &[&v[2], &v[3]]).loss;
        let g = pair_loss_and_gradient(&vecs[0], &vecs[1], &[&vecs[2], &vecs[3]]);
        let analytic = [&g.center, &g.context, &g.negatives[0], &g.negatives[1]];
        let h = 1e-6;
        for which in 0..4 {
            for k in 0..6 {
                let x = vecs[which][k];
                vecs[which][k] = x + h;
                let up = loss(&vecs);
                vecs[which][k] = x - h;
                let down = loss(&vecs);
                vecs[which][k] = x;
                let fd = (up - down) / (2.0 * h);
                let a = analytic[which][k];
                assert!(
                    (fd - a).abs() <= 1e-4 * a.abs().max(1e-3),
                    "{which} {k}: {fd} vs {a}"
                );
            }
        }
    }

    #[test]
    fn single_node_corpus_finishes() {
        let corpus = WalkCorpus {
            walks: vec![vec![0]; 10],
        };
        let m = train_skipgram(&corpus, 1, &SkipGramConfig::default()).unwrap();
        assert!(m.vector(0).iter().all(|x| x.is_finite()));
    }

    #[test]
    fn empty_corpus_errors() {
        assert!(train_skipgram(&WalkCorpus::default(), 3, &SkipGramConfig::default()).is_err());
    }

    #[test]
    fn unseen_node_gets_zero_vector() {
        let corpus = WalkCorpus {
            walks: vec![vec![0, 1, 0, 1]; 4],
        };
        let m = train_skipgram(&corpus, 3, &SkipGramConfig::default()).unwrap();
        assert!(m.vector(2).iter().all(|&x| x == 0.0));
        assert!(m.vector(0).iter().any(|&x| x != 0.0));
    }

    fn clique_corpus(seed: u64) -> WalkCorpus {
        // two 5-cliques, uniform moves inside each
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut walks = Vec::new();
        for start in 0..10u32 {
            for _ in 0..20 {
                let mut w = vec![start];
                let mut at = start;
                for _ in 0..19 {
                    let base = at / 5 * 5;
                    let mut next = base + rng.random_range(0..4);
                    if next >= at {
                        next += 1;
                    }
                    at = next;
                    w.push(at);
                }
                walks.push(w);
            }
        }
        WalkCorpus { walks }
    }

    #[test]
    fn planted_cliques_separate() {
        let cfg = SkipGramConfig {
            dim: 8,
            window: 3,
            epochs: 3,
            seed: 2,
            ..Default::default()
        };
        let m = train_skipgram(&clique_corpus(1), 10, &cfg).unwrap();
        let (mut intra, mut inter, mut ni, mut nx) = (0.0, 0.0, 0, 0);
        for a in 0..10 {
            for b in 0..a {
                let c = cosine(m.vector(a), m.vector(b));
                if a / 5 == b / 5 {
                    intra += c;
                    ni += 1;
                } else {
                    inter += c;
                    nx += 1;
                }
            }
        }
        assert!(intra / ni as f64 > inter / nx as f64);
    }

    #[test]
    fn objective_decreases_on_cliques() {
        let mut first = 0.0;
        let mut last = 0.0;
        for seed in 0..5 {
            let cfg = SkipGramConfig {
                dim: 8,
                window: 3,
                epochs: 4,
                seed,
                ..Default::default()
            };
            let m = train_skipgram(&clique_corpus(seed + 10), 10, &cfg).unwrap();
            first += m.epoch_losses[0];
            last += *m.epoch_losses.last().unwrap();
        }
        assert!(last < first);
    }

    #[test]
    fn deterministic() {
        let cfg = SkipGramConfig {
            dim: 4,
            window: 2,
            epochs: 2,
            seed: 7,
            ..Default::default()
        };
        let c = clique_corpus(3);
        assert_eq!(
            train_skipgram(&c, 10, &cfg).unwrap(),
            train_skipgram(&c, 10, &cfg).unwrap()
        );
    }
}
