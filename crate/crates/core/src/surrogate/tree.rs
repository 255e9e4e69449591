//! Exact greedy regression-tree growth on gradients with unit hessians.

use super::SurrogateParams;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        /// Accepted split gain (post-regularization); feeds importance.
        gain: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
    Leaf {
        value: f64,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegressionTree {
    pub root: Node,
}

impl RegressionTree {
    pub fn output(&self, x: &[f64]) -> f64 {
        let mut node = &self.root;
        loop {
            match node {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    node = if x[*feature] < *threshold { left } else { right };
                }
            }
        }
    }

    pub fn accumulate_gains(&self, gains: &mut [f64]) {
        fn rec(node: &Node, gains: &mut [f64]) {
            if let Node::Split {
                feature,
                gain,
                left,
                right,
                ..
            } = node
            {
                gains[*feature] += *gain;
                rec(left, gains);
                rec(right, gains);
            }
        }
        rec(&self.root, gains);
    }

    pub fn depth(&self) -> usize {
        fn rec(node: &Node) -> usize {
            match node {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + rec(left).max(rec(right)),
            }
        }
        rec(&self.root)
    }
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    gain: f64,
}

/// Grows one tree on the current gradients. `sorted[f]` holds all sample
/// indices ordered by feature f (computed once per fit).
pub(super) fn grow(
    xs: &[Vec<f64>],
    grads: &[f64],
    sorted: &[Vec<usize>],
    params: &SurrogateParams,
) -> RegressionTree {
    let indices: Vec<usize> = (0..xs.len()).collect();
    let mut in_node = vec![false; xs.len()];
    let root = grow_node(xs, grads, sorted, params, indices, 0, &mut in_node);
    RegressionTree { root }
}

fn grow_node(
    xs: &[Vec<f64>],
    grads: &[f64],
    sorted: &[Vec<usize>],
    params: &SurrogateParams,
    indices: Vec<usize>,
    depth: usize,
    in_node: &mut [bool],
) -> Node {
    let g_sum: f64 = indices.iter().map(|&i| grads[i]).sum();
    let h_sum = indices.len() as f64;
    let leaf = |g: f64, h: f64| Node::Leaf {
        value: -g / (h + params.lambda),
    };
    if depth >= params.max_depth || indices.len() < 2 {
        return leaf(g_sum, h_sum);
    }

    let best = find_best_split(xs, grads, sorted, params, &indices, g_sum, h_sum, in_node);
    let Some(best) = best else {
        return leaf(g_sum, h_sum);
    };

    let (mut left_idx, mut right_idx) = (Vec::new(), Vec::new());
    for &i in &indices {
        if xs[i][best.feature] < best.threshold {
            left_idx.push(i);
        } else {
            right_idx.push(i);
        }
    }
    debug_assert!(!left_idx.is_empty() && !right_idx.is_empty());

    let left = grow_node(xs, grads, sorted, params, left_idx, depth + 1, in_node);
    let right = grow_node(xs, grads, sorted, params, right_idx, depth + 1, in_node);
    Node::Split {
        feature: best.feature,
        threshold: best.threshold,
        gain: best.gain,
        left: Box::new(left),
        right: Box::new(right),
    }
}

/// Scans every feature in ascending index order and every boundary between
/// distinct sorted values in ascending threshold order. A candidate replaces
/// the incumbent only on strictly larger gain, which implements the
/// (lowest feature, lowest threshold) tie-break.
#[allow(clippy::too_many_arguments)]
fn find_best_split(
    xs: &[Vec<f64>],
    grads: &[f64],
    sorted: &[Vec<usize>],
    params: &SurrogateParams,
    indices: &[usize],
    g_sum: f64,
    h_sum: f64,
    in_node: &mut [bool],
) -> Option<BestSplit> {
    for &i in indices {
        in_node[i] = true;
    }
    let parent_score = g_sum * g_sum / (h_sum + params.lambda);

    let mut best: Option<BestSplit> = None;
    for (feature, order) in sorted.iter().enumerate() {
        let mut g_left = 0.0f64;
        let mut h_left = 0.0f64;
        // value of the previous in-node sample along the sorted order
        let mut prev: Option<f64> = None;
        for &i in order {
            if !in_node[i] {
                continue;
            }
            let value = xs[i][feature];
            if let Some(pv) = prev {
                // boundary between distinct values: threshold at the midpoint
                if value > pv {
                    let g_right = g_sum - g_left;
                    let h_right = h_sum - h_left;
                    let gain = 0.5
                        * (g_left * g_left / (h_left + params.lambda)
                            + g_right * g_right / (h_right + params.lambda)
                            - parent_score)
                        - params.gamma;
                    let better = match &best {
                        None => gain > 0.0,
                        Some(b) => gain > b.gain,
                    };
                    if better {
                        best = Some(BestSplit {
                            feature,
                            threshold: 0.5 * (pv + value),
                            gain,
                        });
                    }
                }
            }
            g_left += grads[i];
            h_left += 1.0;
            prev = Some(value);
        }
    }

    for &i in indices {
        in_node[i] = false;
    }
    best
}
