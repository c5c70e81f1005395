use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Per-group vectors keyed by group id, in a fixed order.
pub type GroupVectors = Vec<(String, Vec<f64>)>;

/// Final per-group vector `[svd part ‖ walk part]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SocialEmbedding {
    d_svd: usize,
    d_dw: usize,
    groups: Vec<String>,
    vectors: Vec<f64>,
    index: BTreeMap<String, usize>,
}

impl SocialEmbedding {
    pub fn new(d_svd: usize, d_dw: usize, rows: GroupVectors) -> Result<Self> {
        let dim = d_svd + d_dw;
        let mut groups = Vec::with_capacity(rows.len());
        let mut vectors = Vec::with_capacity(rows.len() * dim);
        let mut index = BTreeMap::new();
        for (group, v) in rows {
            if v.len() != dim {
                return Err(Error::Shape(alloc::format!(
                    "group `{group}` has {} entries, expected {dim}",
                    v.len()
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Shape(alloc::format!(
                    "group `{group}` has non-finite entries"
                )));
            }
            if index.insert(group.clone(), groups.len()).is_some() {
                return Err(Error::Config(alloc::format!(
                    "group `{group}` appears twice"
                )));
            }
            groups.push(group);
            vectors.extend(v);
        }
        Ok(SocialEmbedding {
            d_svd,
            d_dw,
            groups,
            vectors,
            index,
        })
    }

    pub fn dim(&self) -> usize {
        self.d_svd + self.d_dw
    }

    pub fn parts(&self) -> (usize, usize) {
        (self.d_svd, self.d_dw)
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn groups(&self) -> &[String] {
        &self.groups
    }

    pub fn get(&self, group: &str) -> Option<&[f64]> {
        let d = self.dim();
        self.index
            .get(group)
            .map(|&i| &self.vectors[i * d..(i + 1) * d])
    }

    pub fn require(&self, group: &str) -> Result<&[f64]> {
        self.get(group)
            .ok_or_else(|| Error::MissingEmbedding(group.into()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        let d = self.dim();
        self.groups
            .iter()
            .enumerate()
            .map(move |(i, g)| (g.as_str(), &self.vectors[i * d..(i + 1) * d]))
    }
}

/// Concatenates the factorization rows with the walk vectors. `svd` may be
/// absent (walk-only embeddings). Group order follows `dw`.
pub fn concat_embeddings(svd: Option<&GroupVectors>, dw: &GroupVectors) -> Result<SocialEmbedding> {
    let d_dw = dw.first().map_or(0, |(_, v)| v.len());
    let Some(svd) = svd else {
        return SocialEmbedding::new(0, d_dw, dw.clone());
    };
    let d_svd = svd.first().map_or(0, |(_, v)| v.len());
    let svd_map: BTreeMap<&str, &Vec<f64>> = svd.iter().map(|(g, v)| (g.as_str(), v)).collect();
    let dw_keys: BTreeMap<&str, ()> = dw.iter().map(|(g, _)| (g.as_str(), ())).collect();
    let only_svd: Vec<String> = svd_map
        .keys()
        .filter(|g| !dw_keys.contains_key(*g))
        .map(|g| String::from(*g))
        .collect();
    let only_walks: Vec<String> = dw_keys
        .keys()
        .filter(|g| !svd_map.contains_key(*g))
        .map(|g| String::from(*g))
        .collect();
    if !only_svd.is_empty() || !only_walks.is_empty() {
        return Err(Error::KeyMismatch {
            only_svd,
            only_walks,
        });
    }
    let rows = dw
        .iter()
        .map(|(g, w)| {
            let mut v = svd_map[g.as_str()].clone();
            v.extend_from_slice(w);
            (g.clone(), v)
        })
        .collect();
    SocialEmbedding::new(d_svd, d_dw, rows)
}
