//! Fixed-length Neyman-Pearson test between two repeated inputs.
//!
//! Both hypotheses send their symbol n times; the decoder compares the
//! accumulated log-likelihood ratio with a threshold. The LLR takes at most
//! `|Y|` values per use, so its distribution after n uses has polynomial
//! support and is carried exactly as a sorted list of buckets.

use crate::dmc::Channel;

use super::{binary_divergence, TestError, TestEvaluation};

/// Two LLR values closer than this (relative) are the same bucket.
const BUCKET_TOLERANCE: f64 = 1e-12;
/// Ties at the threshold resolve to acceptance within this margin.
const ACCEPT_TOLERANCE: f64 = 1e-9;

/// Shared decision rule: accept hypothesis A (or ACK) iff `llr >= threshold`,
/// with a small margin so that sums accumulated in different orders agree.
pub fn accepts(llr: f64, threshold: f64) -> bool {
    llr >= threshold - ACCEPT_TOLERANCE
}

#[derive(Debug, Clone, PartialEq)]
pub struct LlrBucket {
    pub llr: f64,
    pub mass_a: f64,
    pub mass_n: f64,
}

/// Exact distribution of the n-step LLR under both hypotheses.
#[derive(Debug, Clone, PartialEq)]
pub struct LlrDistribution {
    pub n: usize,
    pub buckets: Vec<LlrBucket>,
}

impl LlrDistribution {
    pub fn new(ch: &Channel, pair: (usize, usize), n: usize) -> Result<Self, TestError> {
        let (xa, xn) = pair;
        let inputs = ch.input_size();
        for x in [xa, xn] {
            if x >= inputs {
                return Err(TestError::InputOutOfRange { input: x, inputs });
            }
        }
        if n == 0 {
            return Err(TestError::ZeroLength);
        }
        let (ra, rn) = (ch.row(xa), ch.row(xn));
        if ra == rn {
            return Err(TestError::DegenerateLLR(xa, xn));
        }
        let steps: Vec<LlrBucket> = ra
            .iter()
            .zip(rn)
            .filter(|(a, b)| **a > 0.0 || **b > 0.0)
            .map(|(&a, &b)| LlrBucket {
                llr: step_llr(a, b),
                mass_a: a,
                mass_n: b,
            })
            .collect();
        let mut buckets = vec![LlrBucket {
            llr: 0.0,
            mass_a: 1.0,
            mass_n: 1.0,
        }];
        let mut next = Vec::with_capacity(buckets.len() * steps.len());
        for _ in 0..n {
            next.clear();
            for b in &buckets {
                for s in &steps {
                    let (ma, mn) = (b.mass_a * s.mass_a, b.mass_n * s.mass_n);
                    if ma == 0.0 && mn == 0.0 {
                        continue;
                    }
                    next.push(LlrBucket {
                        llr: b.llr + s.llr,
                        mass_a: ma,
                        mass_n: mn,
                    });
                }
            }
            next.sort_by(|p, q| p.llr.total_cmp(&q.llr));
            buckets.clear();
            for b in next.drain(..) {
                match buckets.last_mut() {
                    Some(last) if same_bucket(last.llr, b.llr) => {
                        last.mass_a += b.mass_a;
                        last.mass_n += b.mass_n;
                    }
                    _ => buckets.push(b),
                }
            }
        }
        Ok(LlrDistribution { n, buckets })
    }

    /// Conditional errors `(P_A(reject), P_N(accept))` at a threshold.
    pub fn errors(&self, threshold: f64) -> (f64, f64) {
        let mut err_a = 0.0;
        let mut err_n = 0.0;
        for b in &self.buckets {
            if accepts(b.llr, threshold) {
                err_n += b.mass_n;
            } else {
                err_a += b.mass_a;
            }
        }
        (err_a.min(1.0), err_n.min(1.0))
    }

    /// Largest bucket value usable as a threshold with `P_A(reject) <= alpha`.
    pub fn stein_threshold(&self, alpha: f64) -> f64 {
        let mut below = 0.0;
        let mut best = f64::NEG_INFINITY;
        for b in &self.buckets {
            if below <= alpha {
                best = b.llr;
            } else {
                break;
            }
            below += b.mass_a;
        }
        best
    }

    fn evaluation(&self, err_a: f64, err_n: f64, div: f64) -> TestEvaluation {
        let t = self.n as f64;
        TestEvaluation {
            div_a_n: div,
            et_given_a: t,
            et_given_n: t,
            err_given_a: err_a,
            err_given_n: err_n,
            pe: 0.5 * (err_a + err_n),
            priors: (0.5, 0.5),
            div_decision: binary_divergence(1.0 - err_a, err_a, err_n, 1.0 - err_n),
        }
    }
}

fn step_llr(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        f64::INFINITY
    } else if a == 0.0 {
        f64::NEG_INFINITY
    } else {
        (a / b).ln()
    }
}

fn same_bucket(x: f64, y: f64) -> bool {
    x == y
        || (x.is_finite()
            && y.is_finite()
            && (x - y).abs() <= BUCKET_TOLERANCE * x.abs().max(y.abs()).max(1.0))
}

fn divergence(ch: &Channel, pair: (usize, usize), n: usize) -> f64 {
    let d = crate::dmc::kl_divergence(ch.row(pair.0), ch.row(pair.1)).unwrap_or(f64::INFINITY);
    d * n as f64
}

/// Exact evaluation of the repetition test; priors are taken uniform.
pub fn fixed_length_np_test(
    ch: &Channel,
    pair: (usize, usize),
    n: usize,
    threshold: f64,
) -> Result<TestEvaluation, TestError> {
    let dist = LlrDistribution::new(ch, pair, n)?;
    let (ea, en) = dist.errors(threshold);
    Ok(dist.evaluation(ea, en, divergence(ch, pair, n)))
}

/// Deterministic Stein-regime test: the most powerful bucket threshold
/// holding `err_given_a <= alpha`. Returns the threshold and its evaluation.
pub fn stein_test(
    ch: &Channel,
    pair: (usize, usize),
    n: usize,
    alpha: f64,
) -> Result<(f64, TestEvaluation), TestError> {
    let dist = LlrDistribution::new(ch, pair, n)?;
    let thr = dist.stein_threshold(alpha);
    let (ea, en) = dist.errors(thr);
    Ok((thr, dist.evaluation(ea, en, divergence(ch, pair, n))))
}

/// Per-use exponent of the false-accept probability between two lengths:
/// `(ln err_N(n_a) - ln err_N(n_b)) / (n_b - n_a)`.
pub fn confirmation_exponent(
    ch: &Channel,
    pair: (usize, usize),
    n_a: usize,
    n_b: usize,
    threshold: f64,
) -> Result<f64, TestError> {
    let ea = fixed_length_np_test(ch, pair, n_a, threshold)?.err_given_n;
    let eb = fixed_length_np_test(ch, pair, n_b, threshold)?.err_given_n;
    Ok((ea.ln() - eb.ln()) / (n_b as f64 - n_a as f64))
}
