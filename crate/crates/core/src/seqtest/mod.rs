//! Binary hypothesis tests across a DMC with feedback.
//!
//! A test is an [`ObservationTree`]; [`evaluate_tree`] computes its leaf
//! distributions under both hypotheses exactly. The checkers compare the
//! result against the divergence/stopping-time inequality and the binary
//! error lower bound. [`fixed_length_np_test`] covers the non-adaptive
//! repetition test used for confirmation, and [`message_partition`] splits a
//! posterior into two heavy halves.

mod enumerate;
mod np;
mod partition;
mod tree;

pub use enumerate::{check_random_trees, exhaustive_check, SliceSummary, TreeEnumerator};
pub use np::{accepts, confirmation_exponent, fixed_length_np_test, stein_test, LlrDistribution};
pub use partition::{message_partition, Partition};
pub use tree::{Hypothesis, ObservationTree, TreeJson, TreeNode};

use serde::Serialize;
use thiserror::Error;

use crate::dmc::{Channel, ChannelConstants};

/// Default cap on `|Y|^max_depth` for exact evaluation.
pub const DEFAULT_NODE_BUDGET: u64 = 10_000_000;
/// Grace allowed on the divergence/stopping-time inequality.
pub const PROP1_GRACE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TestError {
    #[error("tree of depth {depth} and arity {arity} exceeds the node budget {budget}")]
    DepthOverflow {
        depth: usize,
        arity: usize,
        budget: u64,
    },
    #[error("too many trees for {inputs} inputs, {arity} outputs, depth {depth}")]
    TooManyTrees {
        inputs: usize,
        arity: usize,
        depth: usize,
    },
    #[error("the root of an observation tree must be an internal node")]
    RootIsLeaf,
    #[error("node has {found} children, expected {expected}")]
    ArityMismatch { expected: usize, found: usize },
    #[error("malformed tree: {0}")]
    BadTree(String),
    #[error("tree arity {tree} does not match channel output size {channel}")]
    OutputMismatch { tree: usize, channel: usize },
    #[error("input symbol {input} out of range for a channel with {inputs} inputs")]
    InputOutOfRange { input: usize, inputs: usize },
    #[error("priors must be positive and sum to 1, got ({0}, {1})")]
    InvalidPriors(f64, f64),
    #[error("rows {0} and {1} are identical: the test has no power")]
    DegenerateLLR(usize, usize),
    #[error("test length must be at least 1")]
    ZeroLength,
    #[error("delta must lie in (0, 1/2], got {0}")]
    InvalidDelta(f64),
    #[error("posterior is not a probability vector (sum {0})")]
    InvalidPosterior(f64),
    #[error("no certified partition: masses {mass_g} and {mass_rest} against floor {floor}")]
    PartitionInfeasible {
        mass_g: f64,
        mass_rest: f64,
        floor: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TestEvaluation {
    pub div_a_n: f64,
    pub et_given_a: f64,
    pub et_given_n: f64,
    pub err_given_a: f64,
    pub err_given_n: f64,
    pub pe: f64,
    pub priors: (f64, f64),
    /// Divergence between the accept/reject distributions.
    pub div_decision: f64,
}

impl TestEvaluation {
    pub fn expected_time(&self, priors: (f64, f64)) -> f64 {
        priors.0 * self.et_given_a + priors.1 * self.et_given_n
    }

    pub fn error_probability(&self, priors: (f64, f64)) -> f64 {
        priors.0 * self.err_given_a + priors.1 * self.err_given_n
    }
}

/// `d((a1, a2) || (n1, n2))` for two-point distributions given by masses.
pub(crate) fn binary_divergence(a1: f64, a2: f64, n1: f64, n2: f64) -> f64 {
    (xlogy(a1, n1) + xlogy(a2, n2)).max(0.0)
}

/// `p ln(p/q)` with the `0 ln 0 = 0` convention.
fn xlogy(p: f64, q: f64) -> f64 {
    if p <= 0.0 {
        0.0
    } else if q <= 0.0 {
        f64::INFINITY
    } else {
        p * (p / q).ln()
    }
}

fn validate_priors(priors: (f64, f64)) -> Result<(), TestError> {
    let (a, n) = priors;
    if !(a > 0.0 && n > 0.0 && ((a + n) - 1.0).abs() <= 1e-12) {
        return Err(TestError::InvalidPriors(a, n));
    }
    Ok(())
}

#[derive(Debug, Default, Clone, Copy)]
struct LeafSums {
    div: f64,
    et_a: f64,
    et_n: f64,
    err_a: f64,
    err_n: f64,
    acc_a: f64,
    rej_n: f64,
}

pub fn evaluate_tree(
    tree: &ObservationTree,
    ch: &Channel,
    priors: (f64, f64),
) -> Result<TestEvaluation, TestError> {
    evaluate_tree_with_budget(tree, ch, priors, DEFAULT_NODE_BUDGET)
}

pub fn evaluate_tree_with_budget(
    tree: &ObservationTree,
    ch: &Channel,
    priors: (f64, f64),
    budget: u64,
) -> Result<TestEvaluation, TestError> {
    validate_priors(priors)?;
    if tree.arity() != ch.output_size() {
        return Err(TestError::OutputMismatch {
            tree: tree.arity(),
            channel: ch.output_size(),
        });
    }
    let fits = u32::try_from(tree.max_depth())
        .ok()
        .and_then(|d| (tree.arity() as u64).checked_pow(d))
        .is_some_and(|n| n <= budget);
    if !fits {
        return Err(TestError::DepthOverflow {
            depth: tree.max_depth(),
            arity: tree.arity(),
            budget,
        });
    }
    if tree.max_input() >= ch.input_size() {
        return Err(TestError::InputOutOfRange {
            input: tree.max_input(),
            inputs: ch.input_size(),
        });
    }
    Ok(evaluate_unchecked(tree, ch, priors))
}

/// Evaluation without validation; callers guarantee consistency.
pub(crate) fn evaluate_unchecked(
    tree: &ObservationTree,
    ch: &Channel,
    priors: (f64, f64),
) -> TestEvaluation {
    let mut sums = LeafSums::default();
    walk(tree, ch, 0, 1.0, 1.0, 0, &mut sums);
    let mut eval = TestEvaluation {
        div_a_n: sums.div.max(0.0),
        et_given_a: sums.et_a,
        et_given_n: sums.et_n,
        err_given_a: sums.err_a.clamp(0.0, 1.0),
        err_given_n: sums.err_n.clamp(0.0, 1.0),
        pe: 0.0,
        priors,
        div_decision: binary_divergence(sums.acc_a, sums.err_a, sums.err_n, sums.rej_n),
    };
    eval.pe = eval.error_probability(priors);
    eval
}

fn walk(
    tree: &ObservationTree,
    ch: &Channel,
    idx: usize,
    pa: f64,
    pn: f64,
    depth: usize,
    sums: &mut LeafSums,
) {
    match tree.nodes()[idx] {
        TreeNode::Leaf(label) => {
            let t = depth as f64;
            sums.div += xlogy(pa, pn);
            sums.et_a += pa * t;
            sums.et_n += pn * t;
            match label {
                Hypothesis::A => {
                    sums.err_n += pn;
                    sums.acc_a += pa;
                }
                Hypothesis::N => {
                    sums.err_a += pa;
                    sums.rej_n += pn;
                }
            }
        }
        TreeNode::Branch {
            xa,
            xn,
            first_child,
        } => {
            let ra = ch.row(xa);
            let rn = ch.row(xn);
            for y in 0..tree.arity() {
                let (qa, qn) = (pa * ra[y], pn * rn[y]);
                if qa == 0.0 && qn == 0.0 {
                    continue;
                }
                walk(tree, ch, first_child + y, qa, qn, depth + 1, sums);
            }
        }
    }
}

/// Outcome of an inequality check: `slack = rhs_side - lhs_side` oriented so
/// that nonnegative slack means the inequality holds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InequalityCheck {
    pub holds: bool,
    pub slack: f64,
}

/// `D(P_A || P_N) <= C1 * E[T | A]`.
pub fn check_prop1(eval: &TestEvaluation, consts: &ChannelConstants) -> InequalityCheck {
    let slack = consts.c1_nats * eval.et_given_a - eval.div_a_n;
    InequalityCheck {
        holds: slack >= -PROP1_GRACE,
        slack,
    }
}

/// `P_e >= min(p_A, p_N) / 4 * exp(-C1 * E[T])` under the given priors.
pub fn check_lemma1(
    eval: &TestEvaluation,
    consts: &ChannelConstants,
    priors: (f64, f64),
) -> InequalityCheck {
    let floor = lemma1_floor(eval, consts, priors);
    let slack = eval.error_probability(priors) - floor;
    InequalityCheck {
        holds: slack >= 0.0,
        slack,
    }
}

pub(crate) fn lemma1_floor(
    eval: &TestEvaluation,
    consts: &ChannelConstants,
    priors: (f64, f64),
) -> f64 {
    let et = eval.expected_time(priors);
    priors.0.min(priors.1) / 4.0 * (-consts.c1_nats * et).exp()
}

/// Log-sum step: the leaf divergence dominates the divergence of the
/// accept/reject split.
pub fn check_data_processing(eval: &TestEvaluation) -> InequalityCheck {
    let slack = eval.div_a_n - eval.div_decision;
    InequalityCheck {
        holds: slack >= -PROP1_GRACE,
        slack,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dmc::channel_constants;
    use approx::assert_abs_diff_eq;

    fn bsc() -> (Channel, ChannelConstants) {
        let ch = Channel::bsc(0.1).unwrap();
        let c = channel_constants(&ch, 1e-12).unwrap();
        (ch, c)
    }

    #[test]
    fn single_step_best_pair() {
        let (ch, c) = bsc();
        let t = ObservationTree::single_step(0, 1, &[Hypothesis::A, Hypothesis::N]);
        let e = evaluate_tree(&t, &ch, (0.5, 0.5)).unwrap();
        assert_abs_diff_eq!(e.err_given_a, 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(e.err_given_n, 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(e.div_a_n, 0.8 * 9f64.ln(), epsilon = 1e-14);
        assert_eq!((e.et_given_a, e.et_given_n), (1.0, 1.0));
        let p1 = check_prop1(&e, &c);
        assert!(p1.holds && p1.slack.abs() < 1e-12);
        let l1 = check_lemma1(&e, &c, (0.5, 0.5));
        assert!(l1.holds);
        assert_abs_diff_eq!(l1.slack, 0.1 - 0.125 * (-c.c1_nats).exp(), epsilon = 1e-15);
        // also clears the looser floor with the full 1/4 factor
        assert!(0.1 >= 0.25 * (-c.c1_nats).exp());
        assert_abs_diff_eq!(
            0.25 * (-c.c1_nats).exp(),
            0.04310682149764886,
            epsilon = 1e-15
        );
    }

    #[test]
    fn constant_decision_and_identical_inputs() {
        let (ch, c) = bsc();
        let all_a = ObservationTree::single_step(0, 1, &[Hypothesis::A, Hypothesis::A]);
        let e = evaluate_tree(&all_a, &ch, (0.3, 0.7)).unwrap();
        assert_eq!((e.err_given_a, e.err_given_n), (0.0, 1.0));
        assert_abs_diff_eq!(e.pe, 0.7, epsilon = 1e-15);

        let same = ObservationTree::from_json(
            r#"{"xa":1,"xn":1,"children":[{"xa":0,"xn":0,"children":[{"label":"A"},{"label":"N"}]},{"label":"N"}]}"#,
        )
        .unwrap();
        let e = evaluate_tree(&same, &ch, (0.5, 0.5)).unwrap();
        assert_eq!(e.div_a_n, 0.0);
        assert!(check_prop1(&e, &c).holds);
        assert!(e.pe > 0.0);
        assert_abs_diff_eq!(e.et_given_a, 1.0 + 0.1, epsilon = 1e-15);
    }

    #[test]
    fn evaluation_errors() {
        let (ch, _) = bsc();
        let t = ObservationTree::single_step(0, 2, &[Hypothesis::A, Hypothesis::N]);
        assert!(matches!(
            evaluate_tree(&t, &ch, (0.5, 0.5)),
            Err(TestError::InputOutOfRange { .. })
        ));
        let t = ObservationTree::single_step(0, 1, &[Hypothesis::A, Hypothesis::N]);
        assert_eq!(
            evaluate_tree(&t, &ch, (0.6, 0.6)),
            Err(TestError::InvalidPriors(0.6, 0.6))
        );
        assert!(matches!(
            evaluate_tree_with_budget(&t, &ch, (0.5, 0.5), 1),
            Err(TestError::DepthOverflow { .. })
        ));
        let bec = Channel::bec(0.2).unwrap();
        assert!(matches!(
            evaluate_tree(&t, &bec, (0.5, 0.5)),
            Err(TestError::OutputMismatch { .. })
        ));
    }

    #[test]
    fn log_sum_step_on_single_use() {
        let (ch, _) = bsc();
        let t = ObservationTree::single_step(0, 1, &[Hypothesis::A, Hypothesis::N]);
        let e = evaluate_tree(&t, &ch, (0.5, 0.5)).unwrap();
        // a depth-1 tree that labels each output separately loses nothing
        let d = check_data_processing(&e);
        assert!(d.holds && d.slack.abs() < 1e-12);
    }
}
