//! Observation trees: a binary test with feedback written out as a labeled
//! complete `|Y|`-ary tree.
//!
//! Internal nodes carry the input each hypothesis sends next; leaves carry
//! the decision. Nodes live in one arena and the children of an internal
//! node occupy a contiguous block, so evaluation is a cache-friendly walk.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::TestError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Hypothesis {
    A,
    N,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TreeNode {
    Leaf(Hypothesis),
    Branch {
        xa: usize,
        xn: usize,
        first_child: usize,
    },
}

/// Nested debug form: `{"xa": _, "xn": _, "children": [...]}` or `{"label": "A"|"N"}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TreeJson {
    Branch {
        xa: usize,
        xn: usize,
        children: Vec<TreeJson>,
    },
    Leaf {
        label: Hypothesis,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObservationTree {
    arity: usize,
    nodes: Vec<TreeNode>,
    max_depth: usize,
}

impl ObservationTree {
    /// Builds a tree from the nested form. The root must be a branch.
    pub fn from_nested(root: &TreeJson) -> Result<Self, TestError> {
        let arity = match root {
            TreeJson::Branch { children, .. } => children.len(),
            TreeJson::Leaf { .. } => return Err(TestError::RootIsLeaf),
        };
        if arity < 2 {
            return Err(TestError::ArityMismatch {
                expected: 2,
                found: arity,
            });
        }
        let mut tree = ObservationTree {
            arity,
            nodes: vec![TreeNode::Leaf(Hypothesis::A)],
            max_depth: 0,
        };
        tree.fill_nested(0, root, 0)?;
        Ok(tree)
    }

    fn fill_nested(&mut self, slot: usize, node: &TreeJson, depth: usize) -> Result<(), TestError> {
        self.max_depth = self.max_depth.max(depth);
        match node {
            TreeJson::Leaf { label } => self.nodes[slot] = TreeNode::Leaf(*label),
            TreeJson::Branch { xa, xn, children } => {
                if children.len() != self.arity {
                    return Err(TestError::ArityMismatch {
                        expected: self.arity,
                        found: children.len(),
                    });
                }
                let first_child = self.nodes.len();
                self.nodes
                    .resize(first_child + self.arity, TreeNode::Leaf(Hypothesis::A));
                self.nodes[slot] = TreeNode::Branch {
                    xa: *xa,
                    xn: *xn,
                    first_child,
                };
                for (k, child) in children.iter().enumerate() {
                    self.fill_nested(first_child + k, child, depth + 1)?;
                }
            }
        }
        Ok(())
    }

    pub fn to_nested(&self) -> TreeJson {
        self.nested_at(0)
    }

    fn nested_at(&self, idx: usize) -> TreeJson {
        match self.nodes[idx] {
            TreeNode::Leaf(label) => TreeJson::Leaf { label },
            TreeNode::Branch {
                xa,
                xn,
                first_child,
            } => TreeJson::Branch {
                xa,
                xn,
                children: (0..self.arity)
                    .map(|k| self.nested_at(first_child + k))
                    .collect(),
            },
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_nested()).expect("tree serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, TestError> {
        let nested: TreeJson =
            serde_json::from_str(text).map_err(|e| TestError::BadTree(e.to_string()))?;
        Self::from_nested(&nested)
    }

    /// Depth-1 tree: send `(xa, xn)` once, then decide per output symbol.
    pub fn single_step(xa: usize, xn: usize, labels: &[Hypothesis]) -> Self {
        let mut nodes = vec![TreeNode::Branch {
            xa,
            xn,
            first_child: 1,
        }];
        nodes.extend(labels.iter().map(|&l| TreeNode::Leaf(l)));
        ObservationTree {
            arity: labels.len(),
            nodes,
            max_depth: 1,
        }
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn max_depth(&self) -> usize {
        self.max_depth
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, TreeNode::Leaf(_)))
            .count()
    }

    /// Largest input symbol referenced by any branch.
    pub fn max_input(&self) -> usize {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                TreeNode::Branch { xa, xn, .. } => Some((*xa).max(*xn)),
                TreeNode::Leaf(_) => None,
            })
            .max()
            .unwrap_or(0)
    }

    /// Random tree: every node above `max_depth` branches with probability
    /// `1 - stop_prob` (the root always branches), inputs and labels uniform.
    pub fn random<R: Rng + ?Sized>(
        rng: &mut R,
        inputs: usize,
        arity: usize,
        max_depth: usize,
        stop_prob: f64,
    ) -> Self {
        let mut tree = ObservationTree {
            arity,
            nodes: vec![TreeNode::Leaf(Hypothesis::A)],
            max_depth: 0,
        };
        let mut stack = vec![(0usize, 0usize)];
        while let Some((slot, depth)) = stack.pop() {
            let branch = depth == 0 || (depth < max_depth && !rng.gen_bool(stop_prob));
            if branch {
                tree.max_depth = tree.max_depth.max(depth + 1);
                let first_child = tree.nodes.len();
                tree.nodes
                    .resize(first_child + arity, TreeNode::Leaf(Hypothesis::A));
                tree.nodes[slot] = TreeNode::Branch {
                    xa: rng.gen_range(0..inputs),
                    xn: rng.gen_range(0..inputs),
                    first_child,
                };
                for k in (0..arity).rev() {
                    stack.push((first_child + k, depth + 1));
                }
            } else {
                let label = if rng.gen_bool(0.5) {
                    Hypothesis::A
                } else {
                    Hypothesis::N
                };
                tree.nodes[slot] = TreeNode::Leaf(label);
            }
        }
        tree
    }

    pub(crate) fn from_parts(arity: usize, nodes: Vec<TreeNode>, max_depth: usize) -> Self {
        ObservationTree {
            arity,
            nodes,
            max_depth,
        }
    }

    pub(crate) fn parts_mut(&mut self) -> (&mut Vec<TreeNode>, &mut usize) {
        (&mut self.nodes, &mut self.max_depth)
    }
}
