//! Group-to-group affinity from shared subscribers.
//!
//! Correlation and Jaccard depend only on `|A|`, `|B|`, `|A∩B|` and `N`.
//! Cosine standardizes each user's subscription row first (mean `c_j/M`,
//! dispersion `c_j - c_j²/M`), so it needs the per-user counts as well.

use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{IntersectionMatrix, MembershipGraph};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Correlation,
    Cosine,
    Jaccard,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Correlation => "correlation",
            Metric::Cosine => "cosine",
            Metric::Jaccard => "jaccard",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "correlation" | "corr" => Ok(Metric::Correlation),
            "cosine" | "cos" => Ok(Metric::Cosine),
            "jaccard" | "jac" => Ok(Metric::Jaccard),
            other => Err(Error::Config(alloc::format!("unknown metric `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    metric: Metric,
    order: usize,
    values: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn new(metric: Metric, order: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != order * order {
            return Err(Error::Shape(alloc::format!(
                "{} values for order {order}",
                values.len()
            )));
        }
        Ok(SimilarityMatrix {
            metric,
            order,
            values,
        })
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn get(&self, i: usize, k: usize) -> f64 {
        self.values[i * self.order + k]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.order..(i + 1) * self.order]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

fn degenerate(group: usize, size: usize, universe: usize) -> Error {
    Error::DegenerateGroup {
        group: alloc::format!("#{group}"),
        size,
        universe,
    }
}

/// Pearson correlation of the two groups' 0/1 membership vectors over the
/// user universe.
pub fn correlation(i: usize, k: usize, inter: &IntersectionMatrix) -> Result<f64> {
    let n = inter.universe_size() as f64;
    let sizes = inter.group_sizes();
    for g in [i, k] {
        if sizes[g] == 0 || sizes[g] == inter.universe_size() {
            return Err(degenerate(g, sizes[g], inter.universe_size()));
        }
    }
    let (a, b) = (sizes[i] as f64, sizes[k] as f64);
    let both = inter.get(i, k) as f64;
    Ok((both * n - a * b) / libm::sqrt(a * b * (n - a) * (n - b)))
}

pub fn jaccard(i: usize, k: usize, inter: &IntersectionMatrix) -> Result<f64> {
    let sizes = inter.group_sizes();
    let both = inter.get(i, k) as f64;
    let union = sizes[i] as f64 + sizes[k] as f64 - both;
    if union == 0.0 {
        return Err(degenerate(i, sizes[i], inter.universe_size()));
    }
    Ok(both / union)
}

/// Per-user standardized values and per-group partial sums used by the
/// three-sum cosine evaluation.
///
/// For user `j` with `c_j` subscriptions the standardized entry is
/// `pos_j = (1 - c_j/M)/σ_j` where subscribed and `neg_j = -(c_j/M)/σ_j`
/// otherwise, `σ_j² = c_j - c_j²/M`. Users with `c_j = M` have `σ_j = 0` and
/// are skipped entirely.
#[derive(Debug, Clone)]
pub struct CosineContext {
    /// Subscribers of each group as indices into the per-user tables;
    /// skipped users are dropped.
    members: Vec<Vec<u32>>,
    pos_sq: Vec<f64>,
    neg_sq: Vec<f64>,
    cross: Vec<f64>,
    /// Σ over all users of `neg²`.
    total_neg_sq: f64,
    /// Per group: Σ_A neg², Σ_A pos·neg.
    group_neg_sq: Vec<f64>,
    group_cross: Vec<f64>,
    norms: Vec<f64>,
    skipped_users: usize,
}

impl CosineContext {
    pub fn new(graph: &MembershipGraph) -> Result<Self> {
        let m = graph.num_groups() as f64;
        let counts = graph.subscription_counts();
        let mut slot = Vec::with_capacity(counts.len());
        let (mut pos_sq, mut neg_sq, mut cross) = (Vec::new(), Vec::new(), Vec::new());
        let mut skipped_users = 0;
        // BTreeMap iteration is in hash order, so `slot` can be searched.
        let mut hashes = Vec::with_capacity(counts.len());
        for (&user, &c) in counts {
            let c = c as f64;
            let dispersion = c - c * c / m;
            hashes.push(user);
            if dispersion <= 0.0 {
                skipped_users += 1;
                slot.push(u32::MAX);
                continue;
            }
            slot.push(pos_sq.len() as u32);
            let pos = 1.0 - c / m;
            let neg = -c / m;
            pos_sq.push(pos * pos / dispersion);
            neg_sq.push(neg * neg / dispersion);
            cross.push(pos * neg / dispersion);
        }
        if skipped_users > 0 {
            log::warn!("cosine: skipped {skipped_users} users subscribed to every group");
        }
        let total_neg_sq: f64 = neg_sq.iter().sum();
        let members: Vec<Vec<u32>> = graph
            .groups()
            .iter()
            .map(|g| {
                g.subscribers
                    .iter()
                    .filter_map(|u| {
                        let s = slot[hashes.binary_search(u).expect("user counted")];
                        (s != u32::MAX).then_some(s)
                    })
                    .collect()
            })
            .collect();
        let mut group_neg_sq = Vec::with_capacity(members.len());
        let mut group_cross = Vec::with_capacity(members.len());
        let mut norms = Vec::with_capacity(members.len());
        for (gi, users) in members.iter().enumerate() {
            let (mut p, mut n, mut x) = (0.0, 0.0, 0.0);
            for &u in users {
                p += pos_sq[u as usize];
                n += neg_sq[u as usize];
                x += cross[u as usize];
            }
            group_neg_sq.push(n);
            group_cross.push(x);
            let norm_sq = p + total_neg_sq - n;
            if norm_sq <= 0.0 {
                return Err(Error::DegenerateGroup {
                    group: graph.group(gi).group_id.to_string(),
                    size: graph.group(gi).size(),
                    universe: graph.universe_size(),
                });
            }
            norms.push(libm::sqrt(norm_sq));
        }
        Ok(CosineContext {
            members,
            pos_sq,
            neg_sq,
            cross,
            total_neg_sq,
            group_neg_sq,
            group_cross,
            norms,
            skipped_users,
        })
    }

    pub fn skipped_users(&self) -> usize {
        self.skipped_users
    }

    /// Unnormalized scalar product of the standardized vectors:
    /// Σ_{A∩B} pos² + Σ_{Ω∖(A∪B)} neg² + Σ_{A⊕B} pos·neg.
    pub fn scalar_product(&self, i: usize, k: usize) -> f64 {
        let (a, b) = (&self.members[i], &self.members[k]);
        let (mut both_pos, mut both_neg, mut both_cross) = (0.0, 0.0, 0.0);
        let (mut x, mut y) = (0, 0);
        while x < a.len() && y < b.len() {
            match a[x].cmp(&b[y]) {
                core::cmp::Ordering::Less => x += 1,
                core::cmp::Ordering::Greater => y += 1,
                core::cmp::Ordering::Equal => {
                    let u = a[x] as usize;
                    both_pos += self.pos_sq[u];
                    both_neg += self.neg_sq[u];
                    both_cross += self.cross[u];
                    x += 1;
                    y += 1;
                }
            }
        }
        let union_neg = self.group_neg_sq[i] + self.group_neg_sq[k] - both_neg;
        let neither = self.total_neg_sq - union_neg;
        let sym_diff = self.group_cross[i] + self.group_cross[k] - 2.0 * both_cross;
        both_pos + neither + sym_diff
    }

    pub fn cosine(&self, i: usize, k: usize) -> f64 {
        self.scalar_product(i, k) / (self.norms[i] * self.norms[k])
    }
}

/// Cosine of the row-standardized membership vectors of groups `i` and `k`.
///
/// Builds a [`CosineContext`] for the whole graph; use
/// [`build_similarity_matrix`] to amortize that over all pairs.
pub fn cosine(
    i: usize,
    k: usize,
    graph: &MembershipGraph,
    inter: &IntersectionMatrix,
) -> Result<f64> {
    debug_assert_eq!(graph.num_groups(), inter.order());
    if graph.num_groups() < 2 {
        return Err(Error::Config(
            "cosine needs at least two groups".to_string(),
        ));
    }
    Ok(CosineContext::new(graph)?.cosine(i, k))
}

fn name_group(err: Error, graph: &MembershipGraph) -> Error {
    match err {
        Error::DegenerateGroup {
            group,
            size,
            universe,
        } => {
            let group = group
                .strip_prefix('#')
                .and_then(|s| s.parse::<usize>().ok())
                .and_then(|i| graph.groups().get(i))
                .map(|g| g.group_id.clone())
                .unwrap_or(group);
            Error::DegenerateGroup {
                group,
                size,
                universe,
            }
        }
        other => other,
    }
}

/// Fills the upper triangle, mirrors it, and pins the diagonal to 1.
pub fn build_similarity_matrix(
    graph: &MembershipGraph,
    inter: &IntersectionMatrix,
    metric: Metric,
) -> Result<SimilarityMatrix> {
    let m = inter.order();
    if graph.num_groups() != m {
        return Err(Error::Shape(alloc::format!(
            "graph has {} groups, intersection matrix {m}",
            graph.num_groups()
        )));
    }
    let cosine_ctx = match metric {
        Metric::Cosine => Some(CosineContext::new(graph)?),
        _ => None,
    };
    let pair = |i: usize, k: usize| -> Result<f64> {
        match metric {
            Metric::Correlation => correlation(i, k, inter),
            Metric::Jaccard => jaccard(i, k, inter),
            Metric::Cosine => Ok(cosine_ctx.as_ref().expect("context").cosine(i, k)),
        }
    };
    let upper_row = |i: usize| -> Result<Vec<f64>> { (i + 1..m).map(|k| pair(i, k)).collect() };

    #[cfg(feature = "std")]
    let rows: Vec<Result<Vec<f64>>> = {
        use rayon::prelude::*;
        (0..m).into_par_iter().map(upper_row).collect()
    };
    #[cfg(not(feature = "std"))]
    let rows: Vec<Result<Vec<f64>>> = (0..m).map(upper_row).collect();

    let mut values = vec![0.0; m * m];
    for (i, row) in rows.into_iter().enumerate() {
        let row = row.map_err(|e| name_group(e, graph))?;
        values[i * m + i] = 1.0;
        for (offset, v) in row.into_iter().enumerate() {
            let k = i + 1 + offset;
            values[i * m + k] = v;
            values[k * m + i] = v;
        }
    }
    // A single-group correlation matrix still needs its degeneracy check.
    if m == 1 && metric == Metric::Correlation {
        correlation(0, 0, inter).map_err(|e| name_group(e, graph))?;
    }
    Ok(SimilarityMatrix {
        metric,
        order: m,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::compute_intersections;
    use alloc::format;

    fn graph(edges: &[(&str, &str)]) -> MembershipGraph {
        MembershipGraph::ingest(edges.iter().copied()).unwrap()
    }

    fn synthetic_inter(n: usize, a: usize, b: usize, both: u32) -> IntersectionMatrix {
        IntersectionMatrix::from_parts(vec![a as u32, both, both, b as u32], vec![a, b], n).unwrap()
    }

    #[test]
    fn correlation_cases() {
        let inter = synthetic_inter(10, 2, 5, 1);
        assert_eq!(correlation(0, 1, &inter).unwrap(), 0.0);
        assert!((correlation(0, 0, &inter).unwrap() - 1.0).abs() < 1e-15);
        let universal = synthetic_inter(10, 10, 5, 5);
        assert!(matches!(
            correlation(0, 1, &universal),
            Err(Error::DegenerateGroup { .. })
        ));
    }

    #[test]
    fn jaccard_cases() {
        let inter = synthetic_inter(10, 3, 4, 2);
        assert!((jaccard(0, 1, &inter).unwrap() - 0.4).abs() < 1e-15);
        assert_eq!(jaccard(0, 0, &inter).unwrap(), 1.0);
        let disjoint = synthetic_inter(10, 3, 4, 0);
        assert_eq!(jaccard(0, 1, &disjoint).unwrap(), 0.0);
        let empty = synthetic_inter(10, 0, 0, 0);
        assert!(jaccard(0, 1, &empty).is_err());
    }

    #[test]
    fn identical_groups_give_all_ones() {
        // u3 only in c keeps correlation non-degenerate
        let g = graph(&[
            ("a", "u1"),
            ("a", "u2"),
            ("b", "u1"),
            ("b", "u2"),
            ("c", "u3"),
        ]);
        let inter = compute_intersections(&g);
        for metric in [Metric::Correlation, Metric::Cosine, Metric::Jaccard] {
            let s = build_similarity_matrix(&g, &inter, metric).unwrap();
            assert!(
                (s.get(0, 1) - 1.0).abs() < 1e-12,
                "{metric}: {}",
                s.get(0, 1)
            );
        }
    }

    #[test]
    fn two_identical_groups_matrix() {
        let g = graph(&[("a", "u1"), ("a", "u2"), ("b", "u1"), ("b", "u2")]);
        let inter = compute_intersections(&g);
        let s = build_similarity_matrix(&g, &inter, Metric::Jaccard).unwrap();
        assert_eq!(s.values(), &[1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn disjoint_jaccard_matrix() {
        let g = graph(&[("a", "u1"), ("b", "u2")]);
        let inter = compute_intersections(&g);
        let s = build_similarity_matrix(&g, &inter, Metric::Jaccard).unwrap();
        assert_eq!(s.values(), &[1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn degenerate_group_is_named() {
        // group "all" holds every user
        let g = graph(&[("all", "u1"), ("all", "u2"), ("x", "u1")]);
        let inter = compute_intersections(&g);
        match build_similarity_matrix(&g, &inter, Metric::Correlation) {
            Err(Error::DegenerateGroup { group, .. }) => assert_eq!(group, "all"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn universal_user_is_excluded_from_cosine() {
        let mut edges = Vec::new();
        for (g, users) in [
            ("a", &["u1", "u2"][..]),
            ("b", &["u2", "u3"]),
            ("c", &["u4"]),
        ] {
            for u in users {
                edges.push((g.to_string(), u.to_string()));
            }
        }
        let without = MembershipGraph::ingest(edges.clone()).unwrap();
        for g in ["a", "b", "c"] {
            edges.push((g.to_string(), "everyone".to_string()));
        }
        let with = MembershipGraph::ingest(edges).unwrap();
        let ctx = CosineContext::new(&with).unwrap();
        assert_eq!(ctx.skipped_users(), 1);
        let s_with =
            build_similarity_matrix(&with, &compute_intersections(&with), Metric::Cosine).unwrap();
        let s_without =
            build_similarity_matrix(&without, &compute_intersections(&without), Metric::Cosine)
                .unwrap();
        for (x, y) in s_with.values().iter().zip(s_without.values()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn metric_parsing() {
        assert_eq!("corr".parse::<Metric>().unwrap(), Metric::Correlation);
        assert_eq!("cosine".parse::<Metric>().unwrap(), Metric::Cosine);
        assert_eq!("jac".parse::<Metric>().unwrap(), Metric::Jaccard);
        assert!("pmi".parse::<Metric>().is_err());
        assert_eq!(format!("{}", Metric::Cosine), "cosine");
    }
}
