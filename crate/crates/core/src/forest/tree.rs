use serde::{Deserialize, Serialize};

use super::split::{find_split, is_pure, Criterion, SplitRule};
use super::{Dataset, MaxFeatures};
use crate::rng::SplitMix64;

/// Flat node array; index 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum TreeNode {
    Internal {
        rule: SplitRule,
        left: usize,
        right: usize,
        impurity_decrease: f64,
        samples: usize,
    },
    Leaf {
        /// Class distribution (classifier) or `[mean]` (regressor).
        value: Vec<f64>,
        samples: usize,
    },
}

impl TreeNode {
    pub fn samples(&self) -> usize {
        match self {
            TreeNode::Internal { samples, .. } | TreeNode::Leaf { samples, .. } => *samples,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn leaf_for(&self, row: &[f64]) -> &[f64] {
        let mut idx = 0;
        loop {
            match &self.nodes[idx] {
                TreeNode::Internal { rule, left, right, .. } => idx = if rule.goes_left(row) { *left } else { *right },
                TreeNode::Leaf { value, .. } => return value,
            }
        }
    }

    /// Class with the largest leaf share; ties go to the lower id.
    pub fn vote(&self, row: &[f64]) -> usize {
        argmax(self.leaf_for(row))
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[TreeNode], idx: usize) -> usize {
            match &nodes[idx] {
                TreeNode::Internal { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
                TreeNode::Leaf { .. } => 0,
            }
        }
        walk(&self.nodes, 0)
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

pub(crate) struct TreeParams {
    pub criterion: Criterion,
    pub n_classes: usize,
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub max_features: MaxFeatures,
}

fn leaf_value(data: &Dataset, indices: &[usize], params: &TreeParams) -> Vec<f64> {
    let n = indices.len() as f64;
    match params.criterion {
        Criterion::Gini => {
            let mut counts = vec![0.0; params.n_classes];
            for &i in indices {
                counts[data.class_of(i)] += 1.0;
            }
            counts.iter().map(|c| c / n).collect()
        }
        Criterion::Variance => vec![indices.iter().map(|&i| data.target(i)).sum::<f64>() / n],
    }
}

/// Non-constant features for this node: walk a fresh random permutation and
/// keep the first `k` features that vary within the node, returned ascending.
fn candidate_features(data: &Dataset, indices: &[usize], k: usize, rng: &mut SplitMix64) -> Vec<usize> {
    let d = data.n_features();
    if k >= d {
        return (0..d).collect();
    }
    let order = rng.sample_indices(d, d);
    let mut chosen = Vec::with_capacity(k);
    for f in order {
        let first = data.value(indices[0], f);
        if indices.iter().any(|&i| data.value(i, f) != first) {
            chosen.push(f);
            if chosen.len() == k {
                break;
            }
        }
    }
    chosen.sort_unstable();
    chosen
}

/// Grow one tree over the (possibly repeated) row indices in `sample`.
pub(crate) fn grow(data: &Dataset, sample: Vec<usize>, params: &TreeParams, rng: &mut SplitMix64) -> Tree {
    let k = params.max_features.resolve(data.n_features());
    let mut nodes: Vec<TreeNode> = vec![TreeNode::Leaf {
        value: Vec::new(),
        samples: 0,
    }];
    let mut stack = vec![(0usize, sample, 0usize)];
    let mut scratch = Vec::new();

    while let Some((slot, indices, depth)) = stack.pop() {
        let n = indices.len();
        let can_split = n >= params.min_samples_split.max(2)
            && params.max_depth.is_none_or(|m| depth < m)
            && !is_pure(data, &indices);
        let split = if can_split {
            let features = candidate_features(data, &indices, k, rng);
            find_split(
                data,
                &indices,
                &features,
                params.criterion,
                params.n_classes,
                &mut scratch,
            )
        } else {
            None
        };
        match split {
            Some(candidate) => {
                let (left_rows, right_rows): (Vec<usize>, Vec<usize>) =
                    indices.iter().partition(|&&i| candidate.rule.goes_left(data.row(i)));
                let left = nodes.len();
                let right = left + 1;
                for _ in 0..2 {
                    nodes.push(TreeNode::Leaf {
                        value: Vec::new(),
                        samples: 0,
                    });
                }
                nodes[slot] = TreeNode::Internal {
                    rule: candidate.rule,
                    left,
                    right,
                    impurity_decrease: candidate.gain,
                    samples: n,
                };
                stack.push((right, right_rows, depth + 1));
                stack.push((left, left_rows, depth + 1));
            }
            None => {
                nodes[slot] = TreeNode::Leaf {
                    value: leaf_value(data, &indices, params),
                    samples: n,
                };
            }
        }
    }
    Tree { nodes }
}
