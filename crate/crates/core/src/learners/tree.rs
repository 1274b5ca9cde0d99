//! CART regression trees with exact variance-reduction splits.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy)]
pub(crate) struct TreeParams {
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Features tried per split; `None` tries all of them.
    pub mtry: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) enum Node {
    Leaf {
        value: f64,
        start: u32,
        len: u32,
    },
    Split {
        feature: u32,
        threshold: f64,
        left: u32,
        right: u32,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct RegressionTree {
    nodes: Vec<Node>,
    /// Training row indices per leaf (with bootstrap multiplicity).
    leaf_samples: Vec<u32>,
}

impl RegressionTree {
    /// Grow a tree on `sample` (row indices into `rows`, repeats allowed).
    pub fn grow(
        rows: &[Vec<f64>],
        y: &[f64],
        sample: Vec<usize>,
        params: TreeParams,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let width = rows.first().map_or(0, Vec::len);
        let mut tree = RegressionTree {
            nodes: Vec::new(),
            leaf_samples: Vec::with_capacity(sample.len()),
        };
        // (node slot, depth, members)
        tree.nodes.push(Node::Leaf { value: 0.0, start: 0, len: 0 });
        let mut stack = vec![(0usize, 0usize, sample)];
        let mut features: Vec<usize> = (0..width).collect();
        let mut pairs: Vec<(f64, f64, usize)> = Vec::new();

        while let Some((slot, depth, members)) = stack.pop() {
            let m = members.len();
            let sum: f64 = members.iter().map(|&i| y[i]).sum();
            let mean = if m > 0 { sum / m as f64 } else { 0.0 };

            let mut best: Option<(f64, usize, f64)> = None; // (gain, feature, threshold)
            if depth < params.max_depth && m >= 2 * params.min_leaf.max(1) && width > 0 {
                let sumsq: f64 = members.iter().map(|&i| (y[i] - mean).powi(2)).sum();
                let tried = match params.mtry {
                    Some(k) if k < width => {
                        for i in 0..k {
                            let j = rng.random_range(i..width);
                            features.swap(i, j);
                        }
                        let mut chosen = features[..k].to_vec();
                        chosen.sort_unstable();
                        chosen
                    }
                    _ => (0..width).collect(),
                };
                let min_leaf = params.min_leaf.max(1);
                for &f in &tried {
                    pairs.clear();
                    pairs.extend(members.iter().map(|&i| (rows[i][f], y[i], i)));
                    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.2.cmp(&b.2)));
                    let mut left = 0.0;
                    for k in 1..m {
                        left += pairs[k - 1].1;
                        if k < min_leaf || m - k < min_leaf || pairs[k - 1].0 >= pairs[k].0 {
                            continue;
                        }
                        let right = sum - left;
                        let gain = left * left / k as f64 + right * right / (m - k) as f64 - sum * sum / m as f64;
                        if best.is_none_or(|(g, _, _)| gain > g) {
                            let (lo, hi) = (pairs[k - 1].0, pairs[k].0);
                            let mut thr = lo + (hi - lo) / 2.0;
                            if !(thr >= lo && thr < hi) {
                                thr = lo;
                            }
                            best = Some((gain, f, thr));
                        }
                    }
                }
                if best.is_some_and(|(g, _, _)| g <= 1e-12 * sumsq.max(f64::MIN_POSITIVE)) {
                    best = None;
                }
            }

            match best {
                Some((_, feature, threshold)) => {
                    let (l, r): (Vec<usize>, Vec<usize>) =
                        members.into_iter().partition(|&i| rows[i][feature] <= threshold);
                    let left = tree.nodes.len();
                    tree.nodes.push(Node::Leaf { value: 0.0, start: 0, len: 0 });
                    let right = tree.nodes.len();
                    tree.nodes.push(Node::Leaf { value: 0.0, start: 0, len: 0 });
                    tree.nodes[slot] = Node::Split {
                        feature: feature as u32,
                        threshold,
                        left: left as u32,
                        right: right as u32,
                    };
                    // right first so the left subtree is expanded first
                    stack.push((right, depth + 1, r));
                    stack.push((left, depth + 1, l));
                }
                None => {
                    let start = tree.leaf_samples.len() as u32;
                    tree.leaf_samples.extend(members.iter().map(|&i| i as u32));
                    tree.nodes[slot] = Node::Leaf {
                        value: mean,
                        start,
                        len: m as u32,
                    };
                }
            }
        }
        tree
    }

    fn leaf_index(&self, row: &[f64]) -> usize {
        let mut at = 0usize;
        loop {
            match &self.nodes[at] {
                Node::Leaf { .. } => return at,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if row[*feature as usize] <= *threshold {
                        *left as usize
                    } else {
                        *right as usize
                    };
                }
            }
        }
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        match &self.nodes[self.leaf_index(row)] {
            Node::Leaf { value, .. } => *value,
            Node::Split { .. } => unreachable!(),
        }
    }

    /// Training rows stored in the leaf reached by `row`.
    pub fn leaf_members(&self, row: &[f64]) -> &[u32] {
        match &self.nodes[self.leaf_index(row)] {
            Node::Leaf { start, len, .. } => &self.leaf_samples[*start as usize..(*start + *len) as usize],
            Node::Split { .. } => unreachable!(),
        }
    }

    #[cfg(test)]
    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match &nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => {
                    1 + walk(nodes, *left as usize).max(walk(nodes, *right as usize))
                }
            }
        }
        walk(&self.nodes, 0)
    }
}
