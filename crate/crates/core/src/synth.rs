//! Synthetic membership networks with planted topics, and matching
//! topic-conditioned corpora.
//!
//! Groups are assigned to topics round-robin. Every user has a home topic
//! and joins groups of that topic with probability `p_in`, others with
//! `p_out`. Each topic speaks a Zipf-shaped unigram language over the shared
//! words plus its own exclusive words.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::MembershipGraph;
use crate::train::mix_seed;
use crate::train::vocab::NUM_SPECIAL;
use crate::train::{Corpus, Document};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub num_groups: usize,
    pub num_users: usize,
    pub num_topics: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub vocab_size: usize,
    /// Share of the word vocabulary used by every topic.
    pub alpha: f64,
    pub docs_per_group: usize,
    pub doc_length: usize,
    /// Word weights fall off as `rank^-zipf_exponent`.
    pub zipf_exponent: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            num_groups: 20,
            num_users: 2000,
            num_topics: 2,
            p_in: 0.3,
            p_out: 0.02,
            vocab_size: 2000,
            alpha: 0.5,
            docs_per_group: 200,
            doc_length: 8,
            zipf_exponent: 1.0,
            seed: 0,
        }
    }
}

pub fn group_id(index: usize) -> String {
    format!("group{index:04}")
}

pub fn user_id(index: usize) -> String {
    format!("user{index:06}")
}

impl SynthSpec {
    pub fn topic_of_group(&self, group: usize) -> usize {
        group % self.num_topics
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Spec(m));
        if self.num_topics == 0 || self.num_topics > self.num_groups {
            return bad(format!(
                "need 1 <= topics ({}) <= groups ({})",
                self.num_topics, self.num_groups
            ));
        }
        for (name, p) in [("p_in", self.p_in), ("p_out", self.p_out)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} = {p} is not a probability"));
            }
        }
        if self.p_in <= self.p_out {
            return bad(format!(
                "p_in ({}) must exceed p_out ({})",
                self.p_in, self.p_out
            ));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad(format!("alpha = {} outside [0, 1]", self.alpha));
        }
        if self.alpha == 1.0 {
            log::warn!("alpha = 1: every topic uses the same word distribution");
        }
        let words = self.vocab_size.saturating_sub(NUM_SPECIAL);
        if words < self.num_topics + 1 {
            return bad(format!("vocabulary of {} is too small", self.vocab_size));
        }
        if !(self.zipf_exponent >= 0.0) {
            return bad(format!("zipf exponent {} must be >= 0", self.zipf_exponent));
        }
        let t = self.num_topics as f64;
        let n = self.num_users as f64;
        let expected = n / t * self.p_in + n * (t - 1.0) / t * self.p_out;
        if expected < 1.0 {
            return bad(format!("expected group size {expected:.3} is below 1"));
        }
        if self.doc_length == 0 || self.docs_per_group == 0 {
            return bad("documents must be non-empty".into());
        }
        Ok(())
    }

    /// Word ids of the shared block and of each topic's exclusive block.
    fn vocabulary_blocks(&self) -> (Vec<u32>, Vec<Vec<u32>>) {
        let words: Vec<u32> = (NUM_SPECIAL as u32..self.vocab_size as u32).collect();
        let w = words.len();
        let t = self.num_topics;
        let mut shared = libm::round(self.alpha * w as f64) as usize;
        if self.alpha < 1.0 {
            // leave every topic at least one exclusive word
            shared = shared.min(w - t);
        }
        let per_topic = (w - shared) / t;
        let exclusive = (0..t)
            .map(|k| words[shared + k * per_topic..shared + (k + 1) * per_topic].to_vec())
            .collect();
        (words[..shared].to_vec(), exclusive)
    }

    /// Generating distribution of every topic over the full vocabulary.
    ///
    /// Slot `j` of a topic's support (shared words first, then its exclusive
    /// words) gets the weight of rank `rank[j]`, with one rank permutation
    /// for all topics. Shared words thus have the same probability in every
    /// topic, and `alpha = 1` makes all topics identical.
    pub fn topic_distributions(&self) -> Vec<Vec<f64>> {
        let (shared, exclusive) = self.vocabulary_blocks();
        let support = shared.len() + exclusive[0].len();
        let mut rank: Vec<usize> = (0..support).collect();
        rank.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(self.seed, 0x7a1f)));
        let weight = |r: usize| libm::pow(r as f64 + 1.0, -self.zipf_exponent);
        let total: f64 = (0..support).map(weight).sum();
        exclusive
            .iter()
            .map(|own| {
                let mut p = vec![0.0; self.vocab_size];
                for (j, &word) in shared.iter().chain(own).enumerate() {
                    p[word as usize] = weight(rank[j]) / total;
                }
                p
            })
            .collect()
    }

    /// Mean per-token entropy (bits) of the documents' generating
    /// distributions: the best achievable loss for a model told the topic.
    pub fn entropy_floor(&self) -> f64 {
        let dists = self.topic_distributions();
        let entropy = |p: &Vec<f64>| -> f64 {
            p.iter()
                .filter(|&&x| x > 0.0)
                .map(|&x| -x * libm::log2(x))
                .sum()
        };
        let total: f64 = (0..self.num_groups)
            .map(|g| entropy(&dists[self.topic_of_group(g)]))
            .sum();
        total / self.num_groups as f64
    }
}

/// Raw `(group_id, user_id)` edges, grouped by group. Users subscribe to
/// same-topic groups with `p_in`, to others with `p_out`.
pub fn generate_memberships(spec: &SynthSpec) -> Result<Vec<(String, String)>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, 0x6e65));
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); spec.num_groups];
    for u in 0..spec.num_users {
        let home = rng.random_range(0..spec.num_topics);
        for (g, list) in members.iter_mut().enumerate() {
            let p = if spec.topic_of_group(g) == home {
                spec.p_in
            } else {
                spec.p_out
            };
            if rng.random::<f64>() < p {
                list.push(u);
            }
        }
    }
    if let Some(g) = members.iter().position(Vec::is_empty) {
        return Err(Error::Spec(format!("{} drew no members", group_id(g))));
    }
    Ok(members
        .iter()
        .enumerate()
        .flat_map(|(g, list)| list.iter().map(move |&u| (group_id(g), user_id(u))))
        .collect())
}

pub fn generate_network(spec: &SynthSpec) -> Result<MembershipGraph> {
    MembershipGraph::ingest(generate_memberships(spec)?)
}

/// `docs_per_group` documents of `doc_length` words for every generated
/// group present in `graph`.
pub fn generate_corpus(graph: &MembershipGraph, spec: &SynthSpec) -> Result<Corpus> {
    spec.validate()?;
    let samplers: Vec<WeightedIndex<f64>> = spec
        .topic_distributions()
        .iter()
        .map(|p| WeightedIndex::new(p).map_err(|e| Error::Spec(format!("{e}"))))
        .collect::<Result<_>>()?;
    let mut documents = Vec::with_capacity(spec.num_groups * spec.docs_per_group);
    for g in 0..spec.num_groups {
        let id = group_id(g);
        if graph.group_index(&id).is_none() {
            continue;
        }
        let sampler = &samplers[spec.topic_of_group(g)];
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed ^ 0x636f_7270, g as u64));
        for _ in 0..spec.docs_per_group {
            let tokens = (0..spec.doc_length)
                .map(|_| sampler.sample(&mut rng) as u32)
                .collect();
            documents.push(Document {
                group_id: id.clone(),
                tokens,
            });
        }
    }
    Corpus::new(documents, spec.vocab_size)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::compute_intersections;
    use crate::similarity::{build_similarity_matrix, Metric};

    fn small(seed: u64) -> SynthSpec {
        SynthSpec {
            num_users: 400,
            docs_per_group: 4,
            vocab_size: 100,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn block_diagonal_without_cross_topic_users() {
        let spec = SynthSpec {
            p_out: 0.0,
            ..small(3)
        };
        let g = generate_network(&spec).unwrap();
        let j = build_similarity_matrix(&g, &compute_intersections(&g), Metric::Jaccard).unwrap();
        for a in 0..g.num_groups() {
            for b in 0..g.num_groups() {
                let ia = g.group_index(&group_id(a)).unwrap();
                let ib = g.group_index(&group_id(b)).unwrap();
                if spec.topic_of_group(a) != spec.topic_of_group(b) {
                    assert_eq!(j.get(ia, ib), 0.0);
                }
            }
        }
    }

    #[test]
    fn deterministic() {
        let spec = small(8);
        let g = generate_network(&spec).unwrap();
        assert_eq!(g, generate_network(&spec).unwrap());
        assert_eq!(
            generate_corpus(&g, &spec).unwrap(),
            generate_corpus(&g, &spec).unwrap()
        );
    }

    #[test]
    fn validation() {
        let mut s = small(0);
        s.p_out = 0.5;
        s.p_in = 0.4;
        assert!(matches!(generate_network(&s), Err(Error::Spec(_))));
        let tiny = SynthSpec {
            num_users: 2,
            p_in: 0.3,
            p_out: 0.0,
            ..small(0)
        };
        assert!(matches!(generate_network(&tiny), Err(Error::Spec(_))));
        let topics = SynthSpec {
            num_topics: 30,
            ..small(0)
        };
        assert!(topics.validate().is_err());
    }

    #[test]
    fn distributions_normalized() {
        for alpha in [0.0, 0.5, 1.0] {
            let spec = SynthSpec { alpha, ..small(1) };
            for p in spec.topic_distributions() {
                assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                assert!(p[..NUM_SPECIAL].iter().all(|&x| x == 0.0));
            }
        }
    }

    #[test]
    fn alpha_extremes() {
        let same = SynthSpec {
            alpha: 1.0,
            ..small(2)
        }
        .topic_distributions();
        assert_eq!(same[0], same[1]);
        let apart = SynthSpec {
            alpha: 0.0,
            ..small(2)
        }
        .topic_distributions();
        assert!(apart[0]
            .iter()
            .zip(&apart[1])
            .all(|(a, b)| *a == 0.0 || *b == 0.0));
    }

    #[test]
    fn corpus_shape() {
        let spec = small(4);
        let g = generate_network(&spec).unwrap();
        let c = generate_corpus(&g, &spec).unwrap();
        assert_eq!(c.len(), 20 * 4);
        assert!(c
            .documents
            .iter()
            .all(|d| d.tokens.len() == spec.doc_length));
    }
}
