//! Documents, corpora and the train / val-k / val-u split.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::vocab::{is_special, CLS, NUM_SPECIAL};
use crate::embed::SocialEmbedding;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub group_id: String,
    /// Word ids, without the leading classification token.
    pub tokens: Vec<u32>,
}

impl Document {
    /// `[CLS] tokens…` cut to `max_seq_len` entries.
    pub fn sequence(&self, max_seq_len: usize) -> Vec<u32> {
        let mut s = Vec::with_capacity(self.tokens.len() + 1);
        s.push(CLS);
        s.extend(self.tokens.iter().take(max_seq_len.saturating_sub(1)));
        s
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Corpus {
    pub documents: Vec<Document>,
    pub vocab_size: usize,
}

impl Corpus {
    pub fn new(documents: Vec<Document>, vocab_size: usize) -> Result<Self> {
        for (i, d) in documents.iter().enumerate() {
            if let Some(&bad) = d
                .tokens
                .iter()
                .find(|&&t| is_special(t) || t as usize >= vocab_size)
            {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("token {bad} outside {NUM_SPECIAL}..{vocab_size}"),
                });
            }
        }
        Ok(Corpus {
            documents,
            vocab_size,
        })
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    /// Distinct group ids in order of first appearance.
    pub fn groups(&self) -> Vec<&str> {
        let mut seen = BTreeMap::new();
        let mut out = Vec::new();
        for d in &self.documents {
            if seen.insert(d.group_id.as_str(), ()).is_none() {
                out.push(d.group_id.as_str());
            }
        }
        out
    }

    /// Keeps the first `max_seq_len - 1` words of every document.
    pub fn truncate(&mut self, max_seq_len: usize) {
        let keep = max_seq_len.saturating_sub(1);
        self.documents
            .iter_mut()
            .for_each(|d| d.tokens.truncate(keep));
    }

    /// Every group must have a social vector.
    pub fn check_embeddings(&self, emb: &SocialEmbedding) -> Result<()> {
        for g in self.groups() {
            emb.require(g)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetTag {
    Train,
    ValK,
    ValU,
}

impl DatasetTag {
    pub fn name(self) -> &'static str {
        match self {
            DatasetTag::Train => "train",
            DatasetTag::ValK => "val-k",
            DatasetTag::ValU => "val-u",
        }
    }
}

impl core::fmt::Display for DatasetTag {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

impl core::str::FromStr for DatasetTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(DatasetTag::Train),
            "val-k" => Ok(DatasetTag::ValK),
            "val-u" => Ok(DatasetTag::ValU),
            _ => Err(Error::Config(format!("unknown dataset tag `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub tag: DatasetTag,
    pub documents: Vec<Document>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub known_group_fraction: f64,
    pub val_text_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            known_group_fraction: 0.9,
            val_text_fraction: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Splits {
    pub train: Dataset,
    pub val_k: Dataset,
    pub val_u: Dataset,
}

/// `round(fraction · n)` clamped to `1..=n-1`.
fn portion(n: usize, fraction: f64) -> usize {
    let k = libm::round(fraction * n as f64) as usize;
    k.clamp(1, n - 1)
}

/// Holds out whole groups for val-u and a fraction of each remaining
/// group's documents for val-k. Document order inside each part follows the
/// corpus.
pub fn split_datasets(corpus: &Corpus, spec: &SplitSpec) -> Result<Splits> {
    for (name, f) in [
        ("known_group_fraction", spec.known_group_fraction),
        ("val_text_fraction", spec.val_text_fraction),
    ] {
        if !(f > 0.0 && f < 1.0) {
            return Err(Error::Split(format!("{name} = {f} is outside (0, 1)")));
        }
    }
    let groups = corpus.groups();
    if groups.len() < 2 {
        return Err(Error::Split(format!(
            "need at least 2 groups, corpus has {}",
            groups.len()
        )));
    }
    let mut by_group: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, d) in corpus.documents.iter().enumerate() {
        by_group.entry(d.group_id.as_str()).or_default().push(i);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut order = groups.clone();
    order.shuffle(&mut rng);
    let known = portion(order.len(), spec.known_group_fraction);
    let unknown: BTreeMap<&str, ()> = order[known..].iter().map(|g| (*g, ())).collect();

    let mut held_out = alloc::vec![false; corpus.len()];
    // iterate known groups in corpus order so the rng stream is stable
    for g in groups.iter().filter(|g| !unknown.contains_key(*g)) {
        let mut docs = by_group[g].clone();
        if docs.len() < 2 {
            return Err(Error::Split(format!(
                "known group `{g}` has {} document(s), need at least 2",
                docs.len()
            )));
        }
        docs.shuffle(&mut rng);
        for &i in &docs[..portion(docs.len(), spec.val_text_fraction)] {
            held_out[i] = true;
        }
    }

    let mut train = Vec::new();
    let mut val_k = Vec::new();
    let mut val_u = Vec::new();
    for (i, d) in corpus.documents.iter().enumerate() {
        if unknown.contains_key(d.group_id.as_str()) {
            val_u.push(d.clone());
        } else if held_out[i] {
            val_k.push(d.clone());
        } else {
            train.push(d.clone());
        }
    }
    Ok(Splits {
        train: Dataset {
            tag: DatasetTag::Train,
            documents: train,
        },
        val_k: Dataset {
            tag: DatasetTag::ValK,
            documents: val_k,
        },
        val_u: Dataset {
            tag: DatasetTag::ValU,
            documents: val_u,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::collections::BTreeSet;
    use alloc::vec;

    fn corpus(groups: usize, docs: usize) -> Corpus {
        let mut out = Vec::new();
        for g in 0..groups {
            for d in 0..docs {
                out.push(Document {
                    group_id: format!("g{g}"),
                    tokens: vec![4 + (g * docs + d) as u32 % 50],
                });
            }
        }
        Corpus::new(out, 60).unwrap()
    }

    #[test]
    fn ten_groups_one_unknown() {
        let s = split_datasets(&corpus(10, 5), &SplitSpec::default()).unwrap();
        let unknown: BTreeSet<_> = s.val_u.documents.iter().map(|d| &d.group_id).collect();
        assert_eq!(unknown.len(), 1);
        assert_eq!(s.val_u.len(), 5);
        assert_eq!(s.train.len() + s.val_k.len(), 45);
    }

    #[test]
    fn deterministic() {
        let c = corpus(7, 9);
        let spec = SplitSpec {
            seed: 11,
            ..Default::default()
        };
        assert_eq!(split_datasets(&c, &spec), split_datasets(&c, &spec));
    }

    #[test]
    fn membership_audit() {
        let c = corpus(13, 8);
        let s = split_datasets(
            &c,
            &SplitSpec {
                seed: 5,
                ..Default::default()
            },
        )
        .unwrap();
        let train_groups: BTreeSet<_> = s.train.documents.iter().map(|d| &d.group_id).collect();
        assert!(s
            .val_k
            .documents
            .iter()
            .all(|d| train_groups.contains(&d.group_id)));
        assert!(s
            .val_u
            .documents
            .iter()
            .all(|d| !train_groups.contains(&d.group_id)));
        // every document lands in exactly one part
        assert_eq!(s.train.len() + s.val_k.len() + s.val_u.len(), c.len());
    }

    #[test]
    fn errors() {
        assert!(matches!(
            split_datasets(&corpus(1, 5), &SplitSpec::default()),
            Err(Error::Split(_))
        ));
        assert!(matches!(
            split_datasets(&corpus(5, 1), &SplitSpec::default()),
            Err(Error::Split(_))
        ));
        let bad = SplitSpec {
            known_group_fraction: 1.0,
            ..Default::default()
        };
        assert!(matches!(
            split_datasets(&corpus(5, 5), &bad),
            Err(Error::Split(_))
        ));
    }

    #[test]
    fn rejects_reserved_tokens() {
        let d = Document {
            group_id: "a".into(),
            tokens: vec![2],
        };
        assert!(Corpus::new(vec![d], 10).is_err());
    }

    #[test]
    fn sequence_truncates() {
        let d = Document {
            group_id: "a".into(),
            tokens: (4..20).collect(),
        };
        assert_eq!(d.sequence(4), vec![CLS, 4, 5, 6]);
    }
}
