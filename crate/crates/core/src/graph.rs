//! Bipartite user/group membership graph and pairwise intersection counts.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use sha3::{Digest, Sha3_256};

use crate::error::{Error, Result};

/// Stable 64-bit user key: the first eight bytes (big endian) of the
/// SHA3-256 digest of the raw identifier.
pub fn hash_user_id(raw_id: &[u8]) -> Result<u64> {
    if raw_id.is_empty() {
        return Err(Error::InvalidUserId);
    }
    let digest = Sha3_256::digest(raw_id);
    let mut head = [0u8; 8];
    head.copy_from_slice(&digest[..8]);
    Ok(u64::from_be_bytes(head))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupRecord {
    pub group_id: String,
    /// Sorted, duplicate-free user hashes.
    pub subscribers: Vec<u64>,
}

impl GroupRecord {
    pub fn size(&self) -> usize {
        self.subscribers.len()
    }

    pub fn contains(&self, user: u64) -> bool {
        self.subscribers.binary_search(&user).is_ok()
    }
}

/// Immutable after construction. Groups keep the order in which they first
/// appeared in the edge stream.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MembershipGraph {
    groups: Vec<GroupRecord>,
    subscription_counts: BTreeMap<u64, usize>,
}

impl MembershipGraph {
    /// Builds a graph from `(group_id, raw_user_id)` edges. Duplicate edges
    /// collapse; user ids are hashed with [`hash_user_id`].
    pub fn ingest<I, G, U>(edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (G, U)>,
        G: AsRef<str>,
        U: AsRef<[u8]>,
    {
        let mut hashed = Vec::new();
        for (group, user) in edges {
            hashed.push((group, hash_user_id(user.as_ref())?));
        }
        Ok(Self::from_hashed_edges(hashed))
    }

    /// Builds a graph from edges whose user ids are already hashed.
    pub fn from_hashed_edges<I, G>(edges: I) -> Self
    where
        I: IntoIterator<Item = (G, u64)>,
        G: AsRef<str>,
    {
        let mut index: BTreeMap<String, usize> = BTreeMap::new();
        let mut groups: Vec<GroupRecord> = Vec::new();
        for (group, user) in edges {
            let group = group.as_ref();
            let slot = match index.get(group) {
                Some(&slot) => slot,
                None => {
                    index.insert(group.to_string(), groups.len());
                    groups.push(GroupRecord {
                        group_id: group.to_string(),
                        subscribers: Vec::new(),
                    });
                    groups.len() - 1
                }
            };
            groups[slot].subscribers.push(user);
        }
        for g in &mut groups {
            g.subscribers.sort_unstable();
            g.subscribers.dedup();
        }
        Self::from_groups(groups)
    }

    fn from_groups(groups: Vec<GroupRecord>) -> Self {
        let mut subscription_counts = BTreeMap::new();
        for g in &groups {
            for &u in &g.subscribers {
                *subscription_counts.entry(u).or_insert(0) += 1;
            }
        }
        MembershipGraph {
            groups,
            subscription_counts,
        }
    }

    /// Keeps groups with at least `min_size` subscribers; the user universe
    /// and subscription counts are recomputed over what remains.
    pub fn filter_groups(&self, min_size: usize) -> Self {
        let kept = self
            .groups
            .iter()
            .filter(|g| g.size() >= min_size)
            .cloned()
            .collect();
        Self::from_groups(kept)
    }

    pub fn groups(&self) -> &[GroupRecord] {
        &self.groups
    }

    pub fn group(&self, index: usize) -> &GroupRecord {
        &self.groups[index]
    }

    pub fn group_index(&self, group_id: &str) -> Option<usize> {
        self.groups.iter().position(|g| g.group_id == group_id)
    }

    /// M.
    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    /// N: distinct users observed across all groups.
    pub fn universe_size(&self) -> usize {
        self.subscription_counts.len()
    }

    /// c_j for a user hash, zero if the user is unknown.
    pub fn subscription_count(&self, user: u64) -> usize {
        self.subscription_counts.get(&user).copied().unwrap_or(0)
    }

    pub fn subscription_counts(&self) -> &BTreeMap<u64, usize> {
        &self.subscription_counts
    }

    /// Every `(group_id, user_hash)` edge in group order.
    pub fn edges(&self) -> impl Iterator<Item = (&str, u64)> + '_ {
        self.groups
            .iter()
            .flat_map(|g| g.subscribers.iter().map(move |&u| (g.group_id.as_str(), u)))
    }
}

/// Dense symmetric matrix of shared-subscriber counts. Memory is `4·M²`
/// bytes, which is fine up to a few thousand groups.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntersectionMatrix {
    order: usize,
    counts: Vec<u32>,
    group_sizes: Vec<usize>,
    universe_size: usize,
}

impl IntersectionMatrix {
    pub fn from_parts(
        counts: Vec<u32>,
        group_sizes: Vec<usize>,
        universe_size: usize,
    ) -> Result<Self> {
        let order = group_sizes.len();
        if counts.len() != order * order {
            return Err(Error::Shape(alloc::format!(
                "{} counts for order {order}",
                counts.len()
            )));
        }
        Ok(IntersectionMatrix {
            order,
            counts,
            group_sizes,
            universe_size,
        })
    }

    /// Reconstructs a matrix whose diagonal carries the group sizes.
    pub fn from_counts(order: usize, counts: Vec<u32>, universe_size: usize) -> Result<Self> {
        if counts.len() != order * order {
            return Err(Error::Shape(alloc::format!(
                "{} counts for order {order}",
                counts.len()
            )));
        }
        let group_sizes = (0..order).map(|i| counts[i * order + i] as usize).collect();
        Self::from_parts(counts, group_sizes, universe_size)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn universe_size(&self) -> usize {
        self.universe_size
    }

    pub fn group_sizes(&self) -> &[usize] {
        &self.group_sizes
    }

    pub fn get(&self, i: usize, k: usize) -> u32 {
        self.counts[i * self.order + k]
    }

    pub fn row(&self, i: usize) -> &[u32] {
        &self.counts[i * self.order..(i + 1) * self.order]
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }
}

fn sorted_intersection_len(a: &[u64], b: &[u64]) -> u32 {
    let (mut i, mut j, mut n) = (0, 0, 0u32);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            core::cmp::Ordering::Less => i += 1,
            core::cmp::Ordering::Greater => j += 1,
            core::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

const PAIR_CHUNK: usize = 4096;

/// Exact |A_i ∩ A_k| for every pair, by sorted-list merge over the upper
/// triangle. With the `std` feature the pair list is processed in parallel
/// chunks; every output cell is written by exactly one task.
pub fn compute_intersections(graph: &MembershipGraph) -> IntersectionMatrix {
    let m = graph.num_groups();
    let groups = graph.groups();
    let pairs: Vec<(u32, u32)> = (0..m as u32)
        .flat_map(|i| (i + 1..m as u32).map(move |k| (i, k)))
        .collect();

    let merge_chunk = |chunk: &[(u32, u32)]| -> Vec<u32> {
        chunk
            .iter()
            .map(|&(i, k)| {
                sorted_intersection_len(
                    &groups[i as usize].subscribers,
                    &groups[k as usize].subscribers,
                )
            })
            .collect()
    };

    #[cfg(feature = "std")]
    let results: Vec<Vec<u32>> = {
        use rayon::prelude::*;
        pairs.par_chunks(PAIR_CHUNK).map(merge_chunk).collect()
    };
    #[cfg(not(feature = "std"))]
    let results: Vec<Vec<u32>> = pairs.chunks(PAIR_CHUNK).map(merge_chunk).collect();

    let mut counts = alloc::vec![0u32; m * m];
    for (i, g) in groups.iter().enumerate() {
        counts[i * m + i] = g.size() as u32;
    }
    for (&(i, k), n) in pairs.iter().zip(results.into_iter().flatten()) {
        let (i, k) = (i as usize, k as usize);
        counts[i * m + k] = n;
        counts[k * m + i] = n;
    }
    IntersectionMatrix {
        order: m,
        counts,
        group_sizes: groups.iter().map(GroupRecord::size).collect(),
        universe_size: graph.universe_size(),
    }
}
