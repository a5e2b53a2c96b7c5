//! Discrete memoryless channels.
//!
//! A [`Channel`] is a validated stochastic matrix `p(y|x)`, one row per input
//! symbol. [`channel_constants`] derives the quantities every bound in this
//! crate is parameterized by: the capacity `C`, the largest divergence
//! between two rows `C1`, and the smallest transition probability `lambda`.
//! All logarithms are natural; rates and exponents are in nats.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Rows whose sum is within this distance of 1 are renormalized; others are rejected.
pub const ROW_SUM_TOLERANCE: f64 = 1e-9;

/// Default stopping gap for the capacity iteration.
pub const DEFAULT_BA_TOLERANCE: f64 = 1e-9;

/// Hard cap on capacity iterations.
pub const BA_MAX_ITERATIONS: usize = 100_000;

/// Relative slack used when checking the single-step posterior bounds.
const STEP_BOUND_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ChannelError {
    #[error("transition matrix must be at least 2x2, got {rows}x{cols}")]
    TooSmall { rows: usize, cols: usize },
    #[error("row {row} has {len} entries, expected {expected}")]
    Ragged {
        row: usize,
        len: usize,
        expected: usize,
    },
    #[error("row {row} sums to {sum}, not 1")]
    NonStochasticRow { row: usize, sum: f64 },
    #[error("entry ({row}, {col}) = {value} is negative or not finite")]
    NegativeEntry { row: usize, col: usize, value: f64 },
    #[error("output symbol {col} has zero probability under every input")]
    UselessOutput { col: usize },
    #[error("vectors have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("observed output has zero probability under every message")]
    ZeroEvidence,
    #[error("capacity iteration did not reach the requested gap within {0} iterations")]
    NoConvergence(usize),
    #[error("invalid channel spec `{0}`")]
    BadSpec(String),
}

/// A discrete memoryless channel with validated transition probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Channel {
    inputs: usize,
    outputs: usize,
    // row-major, `inputs * outputs`
    transition: Vec<f64>,
}

/// On-disk form of a channel: `{"transition": [[...], ...]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChannelFile {
    pub transition: Vec<Vec<f64>>,
}

impl Channel {
    /// Validates a raw matrix. See [`validate_channel`].
    pub fn new(rows: &[Vec<f64>]) -> Result<Self, ChannelError> {
        validate_channel(rows)
    }

    /// Binary symmetric channel with crossover probability `epsilon`.
    pub fn bsc(epsilon: f64) -> Result<Self, ChannelError> {
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(ChannelError::BadSpec(format!("bsc:{epsilon}")));
        }
        validate_channel(&[vec![1.0 - epsilon, epsilon], vec![epsilon, 1.0 - epsilon]])
    }

    /// Binary erasure channel; output 1 is the erasure symbol.
    pub fn bec(epsilon: f64) -> Result<Self, ChannelError> {
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(ChannelError::BadSpec(format!("bec:{epsilon}")));
        }
        validate_channel(&[
            vec![1.0 - epsilon, epsilon, 0.0],
            vec![0.0, epsilon, 1.0 - epsilon],
        ])
    }

    /// Parses `bsc:<eps>`, `bec:<eps>`, or a path to a JSON channel file.
    pub fn from_spec(spec: &str) -> Result<Self, ChannelError> {
        let parse_eps = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| ChannelError::BadSpec(spec.to_string()))
        };
        if let Some(eps) = spec.strip_prefix("bsc:") {
            return Channel::bsc(parse_eps(eps)?);
        }
        if let Some(eps) = spec.strip_prefix("bec:") {
            return Channel::bec(parse_eps(eps)?);
        }
        let path = Path::new(spec);
        let text = std::fs::read_to_string(path)
            .map_err(|e| ChannelError::BadSpec(format!("{spec}: {e}")))?;
        Channel::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, ChannelError> {
        let file: ChannelFile =
            serde_json::from_str(text).map_err(|e| ChannelError::BadSpec(e.to_string()))?;
        validate_channel(&file.transition)
    }

    pub fn to_file(&self) -> ChannelFile {
        ChannelFile {
            transition: self.rows(),
        }
    }

    pub fn input_size(&self) -> usize {
        self.inputs
    }

    pub fn output_size(&self) -> usize {
        self.outputs
    }

    #[inline]
    pub fn prob(&self, x: usize, y: usize) -> f64 {
        self.transition[x * self.outputs + y]
    }

    #[inline]
    pub fn row(&self, x: usize) -> &[f64] {
        &self.transition[x * self.outputs..(x + 1) * self.outputs]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.inputs).map(|x| self.row(x).to_vec()).collect()
    }

    /// Smallest transition probability over all `(x, y)`.
    pub fn min_transition(&self) -> f64 {
        self.transition
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    /// Draws one channel output for input `x`.
    pub fn sample_output<R: Rng + ?Sized>(&self, x: usize, rng: &mut R) -> usize {
        let u: f64 = rng.gen();
        let row = self.row(x);
        let mut acc = 0.0;
        let mut last = 0;
        for (y, &p) in row.iter().enumerate() {
            if p > 0.0 {
                acc += p;
                last = y;
                if u < acc {
                    return y;
                }
            }
        }
        last
    }

    /// Relabels inputs and outputs: new row `i` is old row `input_perm[i]`,
    /// new column `j` is old column `output_perm[j]`.
    pub fn permuted(&self, input_perm: &[usize], output_perm: &[usize]) -> Channel {
        let rows: Vec<Vec<f64>> = input_perm
            .iter()
            .map(|&x| output_perm.iter().map(|&y| self.prob(x, y)).collect())
            .collect();
        Channel {
            inputs: self.inputs,
            outputs: self.outputs,
            transition: rows.into_iter().flatten().collect(),
        }
    }
}

/// Checks that `raw` is a usable channel matrix.
///
/// Rows within [`ROW_SUM_TOLERANCE`] of stochastic are renormalized so that
/// every stored row sums to 1 to within rounding.
pub fn validate_channel(raw: &[Vec<f64>]) -> Result<Channel, ChannelError> {
    let rows = raw.len();
    let cols = raw.first().map_or(0, Vec::len);
    if rows < 2 || cols < 2 {
        return Err(ChannelError::TooSmall { rows, cols });
    }
    let mut transition = Vec::with_capacity(rows * cols);
    for (r, row) in raw.iter().enumerate() {
        if row.len() != cols {
            return Err(ChannelError::Ragged {
                row: r,
                len: row.len(),
                expected: cols,
            });
        }
        for (c, &v) in row.iter().enumerate() {
            if !v.is_finite() || v < 0.0 {
                return Err(ChannelError::NegativeEntry {
                    row: r,
                    col: c,
                    value: v,
                });
            }
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
            return Err(ChannelError::NonStochasticRow { row: r, sum });
        }
        transition.extend(row.iter().map(|v| v / sum));
    }
    for c in 0..cols {
        if (0..rows).all(|r| transition[r * cols + c] == 0.0) {
            return Err(ChannelError::UselessOutput { col: c });
        }
    }
    Ok(Channel {
        inputs: rows,
        outputs: cols,
        transition,
    })
}

/// Kullback-Leibler divergence `D(p || q)` in nats.
///
/// Uses `0 ln(0/q) = 0` and returns `f64::INFINITY` when `p` puts mass where
/// `q` has none.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64, ChannelError> {
    if p.len() != q.len() {
        return Err(ChannelError::LengthMismatch(p.len(), q.len()));
    }
    let mut d = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if pi == 0.0 {
            continue;
        }
        if qi == 0.0 {
            return Ok(f64::INFINITY);
        }
        d += pi * (pi / qi).ln();
    }
    // Rounding can push D(p||p) a hair below zero.
    Ok(d.max(0.0))
}

/// Constants of a channel that parameterize the feedback bounds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChannelConstants {
    pub capacity_nats: f64,
    /// `f64::INFINITY` when some transition probability is zero.
    pub c1_nats: f64,
    pub lambda: f64,
    pub optimal_input_dist: Vec<f64>,
    /// Ordered pair `(x_a, x_n)` with `D(p(.|x_a) || p(.|x_n)) = C1`; `None` when `C1` is infinite.
    pub best_pair: Option<(usize, usize)>,
    /// Upper end of the capacity bracket at termination.
    pub capacity_upper_nats: f64,
    pub iterations: usize,
}

impl ChannelConstants {
    pub fn c1_is_finite(&self) -> bool {
        self.c1_nats.is_finite()
    }
}

/// Computes `C`, `C1`, `lambda`, and the maximizing input distribution and pair.
///
/// Capacity uses the alternating-maximization iteration, stopped once the gap
/// between `ln sum_x q(x) exp(D_x)` and `max_x D_x` is at most `ba_tolerance`,
/// where `D_x` is the divergence of row `x` from the current output law.
pub fn channel_constants(
    ch: &Channel,
    ba_tolerance: f64,
) -> Result<ChannelConstants, ChannelError> {
    let (capacity, capacity_upper, q, iterations) = blahut_arimoto(ch, ba_tolerance)?;

    let mut c1 = 0.0_f64;
    let mut divergences = Vec::with_capacity(ch.inputs * ch.inputs);
    for x in 0..ch.inputs {
        for x2 in 0..ch.inputs {
            if x == x2 {
                continue;
            }
            let d = kl_divergence(ch.row(x), ch.row(x2))?;
            c1 = c1.max(d);
            divergences.push(((x, x2), d));
        }
    }
    let best_pair = if c1.is_finite() {
        let slack = 1e-12 * c1.max(1.0);
        divergences
            .iter()
            .find(|(_, d)| *d >= c1 - slack)
            .map(|(pair, _)| *pair)
    } else {
        None
    };

    Ok(ChannelConstants {
        capacity_nats: capacity,
        c1_nats: c1,
        lambda: ch.min_transition(),
        optimal_input_dist: q,
        best_pair,
        capacity_upper_nats: capacity_upper,
        iterations,
    })
}

/// Output law `r = qP` and per-input divergences `d_x = D(P_x || r)`;
/// returns the mutual information `sum q d`.
fn ba_eval(ch: &Channel, q: &[f64], r: &mut [f64], d: &mut [f64]) -> Result<f64, ChannelError> {
    r.iter_mut().for_each(|v| *v = 0.0);
    for (x, &qx) in q.iter().enumerate() {
        for (ry, &p) in r.iter_mut().zip(ch.row(x)) {
            *ry += qx * p;
        }
    }
    for (x, dx) in d.iter_mut().enumerate() {
        *dx = kl_divergence(ch.row(x), r)?;
    }
    Ok(q.iter().zip(d.iter()).map(|(a, b)| a * b).sum())
}

/// Plain update `q_x <- q_x e^{d_x} / Z`.
fn ba_step(q: &[f64], d: &[f64], dmax: f64, out: &mut [f64]) {
    for ((o, qx), dx) in out.iter_mut().zip(q).zip(d) {
        *o = qx * (dx - dmax).exp();
    }
    let z: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= z);
}

/// Inputs at or below this mass are left out of the Newton system.
const SUPPORT_FLOOR: f64 = 1e-12;
/// Mass given back to a dropped input that turns out to be the best one.
const REINSERT_MASS: f64 = 1e-3;

/// Damped Newton step for `max_q I(q)` on the support of `q`, with damping
/// `lam * diag(1/q)` and a fraction-to-boundary cut. Writes the candidate to
/// `out` and returns the gain predicted by the quadratic model.
fn newton_step(
    ch: &Channel,
    q: &[f64],
    r: &[f64],
    d: &[f64],
    lam: f64,
    out: &mut [f64],
) -> Option<f64> {
    let support: Vec<usize> = (0..q.len()).filter(|&x| q[x] > SUPPORT_FLOOR).collect();
    let n = support.len();
    let hess = |i: usize, j: usize| -> f64 {
        let (pi, pj) = (ch.row(support[i]), ch.row(support[j]));
        -(0..r.len())
            .filter(|&y| r[y] > 0.0)
            .map(|y| pi[y] * pj[y] / r[y])
            .sum::<f64>()
    };
    let h = DMatrix::from_fn(n, n, hess);
    let k = DMatrix::from_fn(n + 1, n + 1, |i, j| match (i < n, j < n) {
        (true, true) => -h[(i, j)] + if i == j { lam / q[support[i]] } else { 0.0 },
        (true, false) | (false, true) => 1.0,
        (false, false) => 0.0,
    });
    let g = DVector::from_fn(n, |i, _| d[support[i]] - 1.0);
    let rhs = DVector::from_fn(n + 1, |i, _| if i < n { g[i] } else { 0.0 });
    let sol = k.lu().solve(&rhs)?;
    let mut t: f64 = 1.0;
    for (i, &x) in support.iter().enumerate() {
        if sol[i] < 0.0 {
            t = t.min(0.99 * q[x] / -sol[i]);
        }
    }
    out.copy_from_slice(q);
    for (i, &x) in support.iter().enumerate() {
        out[x] = (q[x] + t * sol[i]).max(0.0);
    }
    let z: f64 = out.iter().sum();
    if !(z > 0.0 && z.is_finite()) {
        return None;
    }
    out.iter_mut().for_each(|v| *v /= z);
    let step = DVector::from_fn(n, |i, _| out[support[i]] - q[support[i]]);
    Some(g.dot(&step) + 0.5 * step.dot(&(&h * &step)))
}

/// Blahut-Arimoto, each plain step followed by a damped Newton candidate
/// that is kept when it realizes a quarter of its predicted gain. The
/// damping shrinks after accepted candidates and grows after rejected
/// ones. Plain steps alone crawl when two inputs are nearly tied.
fn blahut_arimoto(ch: &Channel, tol: f64) -> Result<(f64, f64, Vec<f64>, usize), ChannelError> {
    let nx = ch.inputs;
    let ny = ch.outputs;
    let mut q = vec![1.0 / nx as f64; nx];
    let mut r = vec![0.0; ny];
    let mut d = vec![0.0; nx];
    ba_eval(ch, &q, &mut r, &mut d)?;
    let (mut qs, mut rs, mut ds) = (vec![0.0; nx], vec![0.0; ny], vec![0.0; nx]);
    let (mut qn, mut rn, mut dn) = (vec![0.0; nx], vec![0.0; ny], vec![0.0; nx]);
    let mut lam = 1.0_f64;
    for it in 0..BA_MAX_ITERATIONS {
        // a dropped input can only regrow geometrically slowly
        for _ in 0..nx {
            let top = (0..nx).fold(0, |b, x| if d[x] > d[b] { x } else { b });
            if q[top] > SUPPORT_FLOOR {
                break;
            }
            q[top] = REINSERT_MASS;
            let z: f64 = q.iter().sum();
            q.iter_mut().for_each(|v| *v /= z);
            ba_eval(ch, &q, &mut r, &mut d)?;
            lam = 1.0;
        }
        let dmax = d.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        // ln sum q e^d, shifted by dmax for stability
        let z: f64 = q
            .iter()
            .zip(&d)
            .map(|(qx, dx)| qx * (dx - dmax).exp())
            .sum();
        let lower = dmax + z.ln();
        if dmax - lower <= tol {
            return Ok((lower.max(0.0), dmax, q, it + 1));
        }
        ba_step(&q, &d, dmax, &mut qs);
        let plain = ba_eval(ch, &qs, &mut rs, &mut ds)?;
        let accepted = match newton_step(ch, &qs, &rs, &ds, lam, &mut qn) {
            Some(pred) => {
                let candidate = ba_eval(ch, &qn, &mut rn, &mut dn)?;
                // mutual information carries ~1e-16 absolute rounding noise
                candidate - plain >= 0.25 * pred - 1e-15 * plain.max(1.0)
            }
            None => false,
        };
        if accepted {
            lam = (lam / 10.0).max(1e-12);
            std::mem::swap(&mut q, &mut qn);
            std::mem::swap(&mut r, &mut rn);
            std::mem::swap(&mut d, &mut dn);
        } else {
            lam = (lam * 10.0).min(1e12);
            std::mem::swap(&mut q, &mut qs);
            std::mem::swap(&mut r, &mut rs);
            std::mem::swap(&mut d, &mut ds);
        }
    }
    Err(ChannelError::NoConvergence(BA_MAX_ITERATIONS))
}

/// Deterministic encoding rule `x_n = f_n(w, y^{n-1})`.
pub trait Encoder {
    fn input(&self, message: usize, history: &[usize]) -> usize;
}

impl<F> Encoder for F
where
    F: Fn(usize, &[usize]) -> usize,
{
    fn input(&self, message: usize, history: &[usize]) -> usize {
        self(message, history)
    }
}

/// One Bayes step of the message posterior after observing `y`.
///
/// `history` is the output sequence before `y`; the encoder maps each
/// message and that history to the input that was sent.
pub fn posterior_update<E: Encoder + ?Sized>(
    ch: &Channel,
    prior: &[f64],
    encoder: &E,
    history: &[usize],
    y: usize,
) -> Result<Vec<f64>, ChannelError> {
    let mut post: Vec<f64> = prior
        .iter()
        .enumerate()
        .map(|(w, &pw)| pw * ch.prob(encoder.input(w, history), y))
        .collect();
    let z: f64 = post.iter().sum();
    if z <= 0.0 || !z.is_finite() {
        return Err(ChannelError::ZeroEvidence);
    }
    post.iter_mut().for_each(|p| *p /= z);
    Ok(post)
}

/// Whether `lambda * prev(w) <= next(w) <= prev(w) / lambda` for every message.
pub fn posterior_step_bounded(prev: &[f64], next: &[f64], lambda: f64) -> bool {
    prev.len() == next.len()
        && prev.iter().zip(next).all(|(&p, &n)| {
            let lo = lambda * p * (1.0 - STEP_BOUND_SLACK);
            let hi = p / lambda * (1.0 + STEP_BOUND_SLACK);
            n >= lo && n <= hi
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::{any, prop, prop_assert, prop_assert_eq, proptest, Strategy};

    fn bsc01() -> Channel {
        Channel::bsc(0.1).unwrap()
    }

    #[test]
    fn accepts_bsc() {
        let ch = validate_channel(&[vec![0.9, 0.1], vec![0.1, 0.9]]).unwrap();
        assert_eq!(ch.input_size(), 2);
        assert_eq!(ch.output_size(), 2);
        assert_eq!(ch.prob(0, 1), 0.1);
    }

    #[test]
    fn rejects_bad_matrices() {
        assert!(matches!(
            validate_channel(&[vec![0.5, 0.5], vec![0.6, 0.3]]),
            Err(ChannelError::NonStochasticRow { row: 1, .. })
        ));
        assert_eq!(
            validate_channel(&[vec![1.0, 0.0], vec![1.0, 0.0]]),
            Err(ChannelError::UselessOutput { col: 1 })
        );
        assert!(matches!(
            validate_channel(&[vec![1.2, -0.2], vec![0.5, 0.5]]),
            Err(ChannelError::NegativeEntry { row: 0, col: 1, .. })
        ));
        assert!(matches!(
            validate_channel(&[vec![1.0]]),
            Err(ChannelError::TooSmall { .. })
        ));
        assert!(matches!(
            validate_channel(&[vec![0.5, 0.5], vec![1.0]]),
            Err(ChannelError::Ragged { row: 1, .. })
        ));
    }

    #[test]
    fn renormalizes_nearly_stochastic_rows() {
        let ch = validate_channel(&[vec![0.9, 0.1 + 5e-10], vec![0.1, 0.9]]).unwrap();
        assert_abs_diff_eq!(ch.row(0).iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn parses_specs() {
        assert_eq!(Channel::from_spec("bsc:0.1").unwrap(), bsc01());
        let bec = Channel::from_spec("bec:0.5").unwrap();
        assert_eq!(bec.rows(), vec![vec![0.5, 0.5, 0.0], vec![0.0, 0.5, 0.5]]);
        assert!(Channel::from_spec("bsc:x").is_err());
        assert!(Channel::from_spec("bsc:1.5").is_err());
        let ch = Channel::from_json(r#"{"transition": [[0.8, 0.2], [0.3, 0.7]]}"#).unwrap();
        assert_eq!(ch.prob(1, 0), 0.3);
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_divergence(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert_abs_diff_eq!(
            kl_divergence(&[0.9, 0.1], &[0.1, 0.9]).unwrap(),
            1.757_779_661_868_975_5,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            kl_divergence(&[1.0, 0.0], &[0.5, 0.5]).unwrap(),
            std::f64::consts::LN_2,
            epsilon = 1e-15
        );
        assert_eq!(
            kl_divergence(&[0.5, 0.5], &[1.0, 0.0]).unwrap(),
            f64::INFINITY
        );
        assert_eq!(
            kl_divergence(&[0.5, 0.5], &[1.0]),
            Err(ChannelError::LengthMismatch(2, 1))
        );
    }

    #[test]
    fn bsc_constants() {
        let k = channel_constants(&bsc01(), DEFAULT_BA_TOLERANCE).unwrap();
        assert_abs_diff_eq!(k.capacity_nats, 0.368_064_207_168_497_07, epsilon = 1e-12);
        assert_abs_diff_eq!(k.c1_nats, 1.757_779_661_868_975_5, epsilon = 1e-12);
        assert_eq!(k.lambda, 0.1);
        assert_eq!(k.best_pair, Some((0, 1)));
        assert_abs_diff_eq!(k.optimal_input_dist[0], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn erasure_channel_has_infinite_c1() {
        let k = channel_constants(&Channel::bec(0.5).unwrap(), DEFAULT_BA_TOLERANCE).unwrap();
        assert_eq!(k.c1_nats, f64::INFINITY);
        assert_eq!(k.lambda, 0.0);
        assert_eq!(k.best_pair, None);
        assert_abs_diff_eq!(
            k.capacity_nats,
            0.5 * std::f64::consts::LN_2,
            epsilon = 1e-9
        );
    }

    #[test]
    fn useless_channel_constants() {
        let k = channel_constants(&Channel::bsc(0.5).unwrap(), DEFAULT_BA_TOLERANCE).unwrap();
        assert_eq!(k.capacity_nats, 0.0);
        assert_eq!(k.c1_nats, 0.0);
        assert!(k.best_pair.is_some());
    }

    #[test]
    fn asymmetric_capacity_matches_grid_search() {
        // oracle: brute-force maximization of I(q) over a fine grid
        let ch = Channel::new(&[vec![0.8, 0.2], vec![0.3, 0.7]]).unwrap();
        let k = channel_constants(&ch, 1e-12).unwrap();
        let mutual = |q: f64| {
            let r = [q * 0.8 + (1.0 - q) * 0.3, q * 0.2 + (1.0 - q) * 0.7];
            q * kl_divergence(ch.row(0), &r).unwrap()
                + (1.0 - q) * kl_divergence(ch.row(1), &r).unwrap()
        };
        let grid_best = (0..=200_000)
            .map(|i| mutual(i as f64 / 200_000.0))
            .fold(0.0, f64::max);
        assert!(k.capacity_nats >= grid_best - 1e-10);
        assert!(k.capacity_nats <= grid_best + 1e-9);
        assert!(k.capacity_upper_nats - k.capacity_nats <= 1e-12);
    }

    #[test]
    fn nearly_tied_inputs_converge() {
        // each of these stalled the plain and over-relaxed iterations
        let cases = [
            vec![
                vec![
                    0.16869751552517392,
                    0.44968508588443074,
                    0.38161739859039534,
                ],
                vec![0.17659787058973636, 0.4993211987007589, 0.3240809307095048],
                vec![0.3233023619104084, 0.2034081859709003, 0.47328945211869133],
                vec![0.7164825928760262, 0.13655459187480143, 0.14696281524917237],
            ],
            vec![
                vec![0.6038738601065841, 0.3961261398934159],
                vec![0.6062998723446998, 0.39370012765530005],
            ],
            vec![
                vec![9.7040910495244225e-03, 9.9029590895047548e-01],
                vec![2.0565217283141261e-02, 9.7943478271685880e-01],
                vec![1.1298449194785276e-07, 9.9999988701550802e-01],
                vec![4.4038491205751529e-01, 5.5961508794248471e-01],
                vec![4.1518792723615577e-01, 5.8481207276384428e-01],
            ],
            vec![
                vec![
                    0.12692050017763842,
                    0.08810792964565169,
                    0.20157627434304684,
                    0.1744540718565174,
                    0.4089412239771456,
                ],
                vec![
                    0.12696763841100356,
                    0.08806918892984339,
                    0.20153681443611712,
                    0.17448308568096846,
                    0.4089432725420674,
                ],
                vec![
                    0.4527422763249866,
                    0.08914041581674084,
                    0.18254639785112745,
                    0.05765497597879254,
                    0.2179159340283527,
                ],
                vec![
                    0.29259516518459927,
                    0.16628250951755538,
                    0.16737260382722416,
                    0.19365673104357198,
                    0.18009299042704915,
                ],
                vec![
                    0.10171168481139649,
                    0.24731308403759025,
                    0.15073633473677192,
                    0.0732664065461845,
                    0.42697248986805686,
                ],
                vec![
                    0.1086497951322722,
                    0.40350797073196876,
                    0.08954792576820386,
                    0.19458617220616223,
                    0.20370813616139294,
                ],
                vec![
                    0.22214397564694172,
                    0.1689327707486992,
                    0.12565534114970675,
                    0.2837847540660222,
                    0.19948315838863,
                ],
            ],
        ];
        for rows in cases {
            let ch = Channel::new(&rows).unwrap();
            let k = channel_constants(&ch, DEFAULT_BA_TOLERANCE).unwrap();
            assert!(k.iterations < 1000, "{} iterations", k.iterations);
            assert!(k.capacity_upper_nats - k.capacity_nats <= DEFAULT_BA_TOLERANCE);
        }
    }

    #[test]
    fn posterior_examples() {
        let ch = bsc01();
        let same = |_: usize, _: &[usize]| 0usize;
        assert_eq!(
            posterior_update(&ch, &[0.5, 0.5], &same, &[], 1).unwrap(),
            vec![0.5, 0.5]
        );
        let ident = |w: usize, _: &[usize]| w;
        let post = posterior_update(&ch, &[0.5, 0.5], &ident, &[], 0).unwrap();
        assert_abs_diff_eq!(post[0], 0.9, epsilon = 1e-15);
        assert_abs_diff_eq!(post[1], 0.1, epsilon = 1e-15);
    }

    #[test]
    fn zero_evidence_on_impossible_output() {
        let ch = Channel::new(&[vec![1.0, 0.0], vec![0.5, 0.5]]).unwrap();
        let enc = |_: usize, _: &[usize]| 0usize;
        assert_eq!(
            posterior_update(&ch, &[0.5, 0.5], &enc, &[], 1),
            Err(ChannelError::ZeroEvidence)
        );
    }

    fn random_channel() -> impl Strategy<Value = Channel> {
        (2usize..5, 2usize..5).prop_flat_map(|(nx, ny)| {
            prop::collection::vec(prop::collection::vec(0.01f64..1.0, ny), nx).prop_map(|rows| {
                let rows: Vec<Vec<f64>> = rows
                    .into_iter()
                    .map(|r| {
                        let s: f64 = r.iter().sum();
                        r.into_iter().map(|v| v / s).collect()
                    })
                    .collect();
                Channel::new(&rows).unwrap()
            })
        })
    }

    fn random_dist(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.001f64..1.0, n).prop_map(|v| {
            let s: f64 = v.iter().sum();
            v.into_iter().map(|x| x / s).collect()
        })
    }

    proptest! {
        #[test]
        fn positive_channels_have_finite_constants(ch in random_channel()) {
            let k = channel_constants(&ch, DEFAULT_BA_TOLERANCE).unwrap();
            prop_assert!(k.lambda > 0.0);
            prop_assert!(k.lambda <= 0.5);
            prop_assert!(k.c1_nats.is_finite());
            let (a, n) = k.best_pair.unwrap();
            let d = kl_divergence(ch.row(a), ch.row(n)).unwrap();
            prop_assert!((d - k.c1_nats).abs() <= 1e-9);
            let cap_limit = (ch.input_size().min(ch.output_size()) as f64).ln();
            prop_assert!(k.capacity_nats <= cap_limit + 1e-12);
            for x in 0..ch.input_size() {
                for y in 0..ch.output_size() {
                    prop_assert!(ch.prob(x, y) >= k.lambda);
                }
            }
        }

        #[test]
        fn single_step_posterior_change_is_bounded(
            ch in random_channel(),
            m in 2usize..10,
            seed in any::<u64>(),
        ) {
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let nx = ch.input_size();
            let table: Vec<usize> = (0..m).map(|_| rng.gen_range(0..nx)).collect();
            let enc = move |w: usize, h: &[usize]| (table[w] + h.len()) % nx;
            let mut prior: Vec<f64> = (0..m).map(|_| rng.gen_range(0.01..1.0)).collect();
            let s: f64 = prior.iter().sum();
            prior.iter_mut().for_each(|p| *p /= s);
            let history: Vec<usize> = (0..rng.gen_range(0..5)).map(|_| rng.gen_range(0..ch.output_size())).collect();
            let y = rng.gen_range(0..ch.output_size());
            let post = posterior_update(&ch, &prior, &enc, &history, y).unwrap();
            prop_assert!((post.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!(posterior_step_bounded(&prior, &post, ch.min_transition()));
        }

        #[test]
        fn capacity_invariant_under_relabeling(ch in random_channel(), seed in any::<u64>()) {
            use rand::{seq::SliceRandom, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut ip: Vec<usize> = (0..ch.input_size()).collect();
            let mut op: Vec<usize> = (0..ch.output_size()).collect();
            ip.shuffle(&mut rng);
            op.shuffle(&mut rng);
            let tol = 1e-9;
            let k = channel_constants(&ch, tol).unwrap();
            let kp = channel_constants(&ch.permuted(&ip, &op), tol).unwrap();
            prop_assert!((k.capacity_nats - kp.capacity_nats).abs() <= tol);
            prop_assert!((k.c1_nats - kp.c1_nats).abs() <= 1e-12 * k.c1_nats.max(1.0));
            let (a, n) = kp.best_pair.unwrap();
            let d_orig = kl_divergence(ch.row(ip[a]), ch.row(ip[n])).unwrap();
            prop_assert!((d_orig - k.c1_nats).abs() <= 1e-9);
        }

        #[test]
        fn kl_nonnegative(p in random_dist(4), q in random_dist(4)) {
            let d = kl_divergence(&p, &q).unwrap();
            prop_assert!(d >= 0.0);
            prop_assert_eq!(kl_divergence(&p, &p).unwrap(), 0.0);
            let same = p.iter().zip(&q).all(|(a, b)| (a - b).abs() <= 1e-12);
            if !same {
                prop_assert!(d > 0.0);
            }
        }
    }
}
