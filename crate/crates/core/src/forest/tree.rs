//! CART classification trees over the five occupancy levels.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::level::OccupancyLevel;

/// Per-class row counts, indexed by [`OccupancyLevel::index`].
pub type ClassCounts = [u32; 5];

/// Two candidate splits whose impurity decreases differ by less than this
/// are tied, and the lower `(predictor, threshold)` wins.
pub const TIE_EPSILON: f64 = 1e-12;

/// Gini impurity `1 - Σ (c_i / n)^2`.
pub fn gini(counts: &ClassCounts) -> Result<f64> {
    let n: u64 = counts.iter().map(|&c| u64::from(c)).sum();
    if n == 0 {
        return Err(Error::InvalidInput("gini of an empty node".into()));
    }
    let n = n as f64;
    Ok(1.0 - counts.iter().map(|&c| (f64::from(c) / n).powi(2)).sum::<f64>())
}

fn sum_sq_over_n(counts: &ClassCounts, n: u32) -> f64 {
    counts.iter().map(|&c| f64::from(c) * f64::from(c)).sum::<f64>() / f64::from(n)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Split {
    pub predictor: usize,
    pub threshold: f64,
    /// `G(parent) - n_L/n G(left) - n_R/n G(right)`.
    pub decrease: f64,
}

fn counts_of(data: &Dataset, rows: &[usize]) -> ClassCounts {
    let mut counts = [0; 5];
    for &r in rows {
        counts[data.label(r).index()] += 1;
    }
    counts
}

/// Best threshold split of `rows` over the candidate predictors.
///
/// Thresholds are midpoints between consecutive distinct values; rows with
/// a value below the threshold go left. Returns `None` when no split
/// strictly decreases impurity.
pub fn best_split(data: &Dataset, rows: &[usize], candidates: &[usize]) -> Option<Split> {
    if rows.len() < 2 {
        return None;
    }
    let mut candidates = candidates.to_vec();
    candidates.sort_unstable();
    candidates.dedup();

    let parent = counts_of(data, rows);
    let n = rows.len() as u32;
    let parent_term = sum_sq_over_n(&parent, n);
    let mut best: Option<Split> = None;
    let mut pairs: Vec<(f64, usize)> = Vec::with_capacity(rows.len());

    for &p in &candidates {
        pairs.clear();
        pairs.extend(rows.iter().map(|&r| (data.value(r, p), data.label(r).index())));
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut left = [0u32; 5];
        for i in 0..pairs.len() - 1 {
            left[pairs[i].1] += 1;
            let (v, next) = (pairs[i].0, pairs[i + 1].0);
            if v == next {
                continue;
            }
            let n_left = i as u32 + 1;
            let n_right = n - n_left;
            let mut right = parent;
            for (r, l) in right.iter_mut().zip(&left) {
                *r -= l;
            }
            let decrease = (sum_sq_over_n(&left, n_left) + sum_sq_over_n(&right, n_right) - parent_term) / f64::from(n);
            let better = match best {
                None => decrease > TIE_EPSILON,
                Some(b) => decrease > b.decrease + TIE_EPSILON,
            };
            if better {
                best = Some(Split {
                    predictor: p,
                    threshold: v + (next - v) / 2.0,
                    decrease,
                });
            }
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Node {
    Split {
        predictor: usize,
        threshold: f64,
        left: usize,
        right: usize,
        /// Impurity decrease weighted by the node's share of the tree's rows.
        weighted_decrease: f64,
    },
    Leaf {
        class: OccupancyLevel,
        counts: ClassCounts,
    },
}

/// A trained tree, nodes in pre-order with the root at index 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeLimits {
    /// Nodes holding this many rows or fewer become leaves.
    pub min_node_size: usize,
    /// Root is depth 0; `None` is unlimited.
    pub max_depth: Option<usize>,
}

impl Default for TreeLimits {
    fn default() -> Self {
        Self {
            min_node_size: 5,
            max_depth: None,
        }
    }
}

impl Tree {
    pub fn root(&self) -> &Node {
        &self.nodes[0]
    }

    pub fn leaf_for(&self, values: &[f64]) -> &Node {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Split {
                    predictor,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    i = if values[*predictor] < *threshold { *left } else { *right };
                }
                leaf @ Node::Leaf { .. } => return leaf,
            }
        }
    }

    pub fn predict(&self, values: &[f64]) -> OccupancyLevel {
        match self.leaf_for(values) {
            Node::Leaf { class, .. } => *class,
            Node::Split { .. } => unreachable!("leaf_for returns leaves"),
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
                Node::Leaf { .. } => 0,
            }
        }
        walk(&self.nodes, 0)
    }

    /// Sum of weighted impurity decreases per predictor.
    pub fn importance(&self, n_predictors: usize) -> Vec<f64> {
        let mut out = vec![0.0; n_predictors];
        for node in &self.nodes {
            if let Node::Split {
                predictor,
                weighted_decrease,
                ..
            } = node
            {
                out[*predictor] += weighted_decrease;
            }
        }
        out
    }
}

struct Grower<'a, R> {
    data: &'a Dataset,
    mtry: usize,
    limits: TreeLimits,
    rng: &'a mut R,
    n_root: f64,
    nodes: Vec<Node>,
}

impl<R: Rng> Grower<'_, R> {
    fn grow(&mut self, rows: &mut [usize], depth: usize) -> usize {
        let counts = counts_of(self.data, rows);
        let id = self.nodes.len();
        let leaf = Node::Leaf {
            class: OccupancyLevel::argmax(&counts),
            counts,
        };
        self.nodes.push(leaf);

        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        let too_small = rows.len() <= self.limits.min_node_size.max(1);
        let too_deep = self.limits.max_depth.is_some_and(|d| depth >= d);
        if pure || too_small || too_deep {
            return id;
        }

        let p = self.data.n_predictors();
        let candidates = index::sample(self.rng, p, self.mtry.min(p)).into_vec();
        let Some(split) = best_split(self.data, rows, &candidates) else {
            return id;
        };

        let mut mid = 0;
        for i in 0..rows.len() {
            if self.data.value(rows[i], split.predictor) < split.threshold {
                rows.swap(i, mid);
                mid += 1;
            }
        }
        let weighted_decrease = rows.len() as f64 / self.n_root * split.decrease;
        let (left_rows, right_rows) = rows.split_at_mut(mid);
        let left = self.grow(left_rows, depth + 1);
        let right = self.grow(right_rows, depth + 1);
        self.nodes[id] = Node::Split {
            predictor: split.predictor,
            threshold: split.threshold,
            left,
            right,
            weighted_decrease,
        };
        id
    }
}

/// Grows a tree on `rows` (indices into `data`, repeats allowed).
///
/// At each node `mtry` candidate predictors are drawn without replacement
/// from `rng`. Growth stops at pure nodes, small nodes, the depth limit, or
/// when no split decreases impurity.
pub fn train_tree<R: Rng>(
    data: &Dataset,
    rows: &[usize],
    mtry: usize,
    rng: &mut R,
    limits: TreeLimits,
) -> Result<Tree> {
    if rows.is_empty() {
        return Err(Error::InvalidInput("cannot grow a tree on zero rows".into()));
    }
    if mtry == 0 {
        return Err(Error::InvalidInput("mtry must be at least 1".into()));
    }
    let mut rows = rows.to_vec();
    let mut grower = Grower {
        data,
        mtry,
        limits,
        rng,
        n_root: rows.len() as f64,
        nodes: Vec::new(),
    };
    grower.grow(&mut rows, 0);
    Ok(Tree { nodes: grower.nodes })
}
