//! Statistical verification of the stochastic-process claims behind the
//! converse: entropy drift bounded by C, the single-step posterior bound,
//! Fano's inequality at the stopping time, and the Markov bound on not
//! having stopped.

mod verify;

pub use verify::{run_verify, CheckReport, VerifyConfig};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::dmc::{
    channel_constants, posterior_step_bounded, posterior_update, Channel, ChannelError, Encoder,
    DEFAULT_BA_TOLERANCE,
};
use crate::exponents::binary_entropy;
use crate::seqtest::message_partition;

/// Shannon entropy in nats, `0 ln 0 = 0`.
pub fn entropy(p: &[f64]) -> f64 {
    p.iter().filter(|&&x| x > 0.0).map(|&x| -x * x.ln()).sum()
}

/// MAP error probability of a posterior, `1 - max_w p(w)`.
pub fn map_error(p: &[f64]) -> f64 {
    1.0 - p.iter().copied().fold(0.0, f64::max)
}

/// Smallest index attaining the maximum.
pub fn map_message(p: &[f64]) -> usize {
    let best = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    p.iter().position(|&x| x == best).unwrap_or(0)
}

/// Wilson score interval for `successes` out of `trials` at confidence `level`.
pub fn wilson_interval(successes: u64, trials: u64, level: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let z = Normal::new(0.0, 1.0)
        .expect("standard normal")
        .inverse_cdf(1.0 - (1.0 - level) / 2.0);
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    let lo = if successes == 0 {
        0.0
    } else {
        (centre - half).max(0.0)
    };
    let hi = if successes == trials {
        1.0
    } else {
        (centre + half).min(1.0)
    };
    (lo, hi)
}

/// Sends `w mod |X|` at every step, ignoring feedback.
#[derive(Debug, Clone, Copy)]
pub struct RepetitionEncoder {
    pub inputs: usize,
}

impl Encoder for RepetitionEncoder {
    fn input(&self, message: usize, _history: &[usize]) -> usize {
        message % self.inputs
    }
}

/// Sends the same symbol whatever the message.
#[derive(Debug, Clone, Copy)]
pub struct BlindEncoder(pub usize);

impl Encoder for BlindEncoder {
    fn input(&self, _message: usize, _history: &[usize]) -> usize {
        self.0
    }
}

/// Adaptive encoder whose input is a fixed pseudo-random function of the
/// message and the whole output history.
#[derive(Debug, Clone, Copy)]
pub struct HashedEncoder {
    pub inputs: usize,
    pub key: u64,
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl Encoder for HashedEncoder {
    fn input(&self, message: usize, history: &[usize]) -> usize {
        let mut h = mix(self.key ^ message as u64);
        for &y in history {
            h = mix(h ^ (y as u64 + 1));
        }
        (h % self.inputs as u64) as usize
    }
}

/// Posteriors `p(.|y^0), .., p(.|y^n)` along one simulated run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub message: usize,
    pub outputs: Vec<usize>,
    pub posteriors: Vec<Vec<f64>>,
}

/// Simulates `steps` channel uses under `message` from a uniform prior.
pub fn simulate_trajectory<E: Encoder + ?Sized, R: rand::Rng + ?Sized>(
    ch: &Channel,
    encoder: &E,
    m: usize,
    message: usize,
    steps: usize,
    rng: &mut R,
) -> Result<Trajectory, ChannelError> {
    let mut outputs = Vec::with_capacity(steps);
    let mut posteriors = Vec::with_capacity(steps + 1);
    posteriors.push(vec![1.0 / m as f64; m]);
    for _ in 0..steps {
        let x = encoder.input(message, &outputs);
        let y = ch.sample_output(x, rng);
        let next = posterior_update(ch, posteriors.last().expect("prior"), encoder, &outputs, y)?;
        outputs.push(y);
        posteriors.push(next);
    }
    Ok(Trajectory {
        message,
        outputs,
        posteriors,
    })
}

fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DriftReport {
    /// Entropy drops observed (`trials * steps`).
    pub samples: u64,
    pub trajectories: u64,
    pub mean_drop: f64,
    /// Standard error across trajectories of the per-step mean drop. Zero
    /// when no information flows, e.g. for a message-blind encoder.
    pub se: f64,
    pub capacity_nats: f64,
    pub pass: bool,
}

/// Mean per-step entropy drop of the message posterior against C + k se.
pub fn entropy_drift_check<E: Encoder + Sync + ?Sized>(
    ch: &Channel,
    encoder: &E,
    m: usize,
    steps: usize,
    trials: u64,
    seed: u64,
    sigma: f64,
) -> Result<DriftReport, ChannelError> {
    if m < 2 || steps == 0 || trials < 2 {
        return Err(ChannelError::BadSpec(
            "drift check needs m >= 2, steps >= 1 and trials >= 2".into(),
        ));
    }
    let c = channel_constants(ch, DEFAULT_BA_TOLERANCE)?.capacity_nats;
    let drops: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, i);
            let w = rand::Rng::gen_range(&mut rng, 0..m);
            let t = simulate_trajectory(ch, encoder, m, w, steps, &mut rng)?;
            let h0 = entropy(&t.posteriors[0]);
            let hn = entropy(&t.posteriors[steps]);
            Ok((h0 - hn) / steps as f64)
        })
        .collect::<Result<_, ChannelError>>()?;
    let n = drops.len() as f64;
    let mean = drops.iter().sum::<f64>() / n;
    let var = drops.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let se = (var / n).sqrt();
    Ok(DriftReport {
        samples: trials * steps as u64,
        trajectories: trials,
        mean_drop: mean,
        se,
        capacity_nats: c,
        pass: mean <= c + sigma * se,
    })
}

/// `min { n : P_e(y^n) <= delta }`, or `horizon` if no such n is reached.
pub fn tau_stop(posteriors: &[Vec<f64>], delta: f64, horizon: usize) -> usize {
    let last = horizon.min(posteriors.len().saturating_sub(1));
    (0..=last)
        .find(|&n| map_error(&posteriors[n]) <= delta)
        .unwrap_or(horizon)
}

/// Tallies of the stopping-time experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StoppingReport {
    pub trials: u64,
    pub m: usize,
    pub delta: f64,
    pub horizon: usize,
    pub steps: u64,
    /// Steps where some message's posterior moved by more than a factor 1/lambda.
    pub step_bound_violations: u64,
    /// Stops with `P_e <= delta` checked against Fano's inequality.
    pub fano_checked: u64,
    pub fano_violations: u64,
    pub fano_min_slack: f64,
    /// Runs with `P_e(y^tau) > delta`.
    pub not_stopped: u64,
    /// MAP errors at the horizon.
    pub horizon_errors: u64,
    /// Mean and standard error of `1[P_e(y^tau) > delta] - 1[error] / delta`.
    pub markov_mean: f64,
    pub markov_se: f64,
    pub partition_infeasible: u64,
    /// Smallest `min(mass G, mass rest) - lambda delta` seen.
    pub partition_min_margin: f64,
}

#[derive(Debug, Clone, Copy)]
struct StopTally {
    steps: u64,
    step_violations: u64,
    fano_checked: u64,
    fano_violations: u64,
    fano_min_slack: f64,
    not_stopped: u64,
    errors: u64,
    z_sum: f64,
    z_sq: f64,
    infeasible: u64,
    min_margin: f64,
}

impl StopTally {
    fn empty() -> Self {
        StopTally {
            steps: 0,
            step_violations: 0,
            fano_checked: 0,
            fano_violations: 0,
            fano_min_slack: f64::INFINITY,
            not_stopped: 0,
            errors: 0,
            z_sum: 0.0,
            z_sq: 0.0,
            infeasible: 0,
            min_margin: f64::INFINITY,
        }
    }

    fn merge(self, o: Self) -> Self {
        StopTally {
            steps: self.steps + o.steps,
            step_violations: self.step_violations + o.step_violations,
            fano_checked: self.fano_checked + o.fano_checked,
            fano_violations: self.fano_violations + o.fano_violations,
            fano_min_slack: self.fano_min_slack.min(o.fano_min_slack),
            not_stopped: self.not_stopped + o.not_stopped,
            errors: self.errors + o.errors,
            z_sum: self.z_sum + o.z_sum,
            z_sq: self.z_sq + o.z_sq,
            infeasible: self.infeasible + o.infeasible,
            min_margin: self.min_margin.min(o.min_margin),
        }
    }
}

/// Runs `trials` trajectories to `horizon`, stops them at tau and checks
/// the single-step bound on every step, Fano at tau, the Markov bound
/// `P(P_e(Y^tau) > delta) <= P_e / delta` (with `P_e` the MAP error at the
/// horizon) and the partition floor at tau.
pub fn stopping_experiment<E: Encoder + Sync + ?Sized>(
    ch: &Channel,
    encoder: &E,
    m: usize,
    delta: f64,
    horizon: usize,
    trials: u64,
    seed: u64,
) -> Result<StoppingReport, ChannelError> {
    if m < 2 || trials < 2 || !(delta > 0.0 && delta <= 0.5) {
        return Err(ChannelError::BadSpec(
            "stopping experiment needs m >= 2, trials >= 2, delta in (0, 1/2]".into(),
        ));
    }
    let lambda = ch.min_transition();
    let fano_rhs = binary_entropy(delta) + delta * (m as f64).ln();
    let floor = lambda * delta;
    let tally = (0..trials)
        .into_par_iter()
        .map(|i| -> Result<StopTally, ChannelError> {
            let mut rng = stream(seed, i);
            let w = rand::Rng::gen_range(&mut rng, 0..m);
            let t = simulate_trajectory(ch, encoder, m, w, horizon, &mut rng)?;
            let mut s = StopTally::empty();
            for pair in t.posteriors.windows(2) {
                s.steps += 1;
                s.step_violations += u64::from(!posterior_step_bounded(&pair[0], &pair[1], lambda));
            }
            let tau = tau_stop(&t.posteriors, delta, horizon);
            let post = &t.posteriors[tau];
            let pe_tau = map_error(post);
            let stopped = pe_tau <= delta;
            if stopped {
                let slack = fano_rhs - entropy(post);
                s.fano_checked = 1;
                s.fano_violations = u64::from(slack < -1e-12);
                s.fano_min_slack = slack;
            } else {
                s.not_stopped = 1;
            }
            let err = map_message(&t.posteriors[horizon]) != w;
            s.errors = u64::from(err);
            let z = f64::from(u8::from(!stopped)) - f64::from(u8::from(err)) / delta;
            s.z_sum = z;
            s.z_sq = z * z;
            match message_partition(post, delta, lambda) {
                Ok(p) => s.min_margin = p.mass.min(1.0 - p.mass) - floor,
                Err(_) => s.infeasible = 1,
            }
            Ok(s)
        })
        .try_reduce(StopTally::empty, |a, b| Ok(a.merge(b)))?;
    let n = trials as f64;
    let mean = tally.z_sum / n;
    let var = ((tally.z_sq - n * mean * mean) / (n - 1.0)).max(0.0);
    Ok(StoppingReport {
        trials,
        m,
        delta,
        horizon,
        steps: tally.steps,
        step_bound_violations: tally.step_violations,
        fano_checked: tally.fano_checked,
        fano_violations: tally.fano_violations,
        fano_min_slack: tally.fano_min_slack,
        not_stopped: tally.not_stopped,
        horizon_errors: tally.errors,
        markov_mean: mean,
        markov_se: (var / n).sqrt(),
        partition_infeasible: tally.infeasible,
        partition_min_margin: tally.min_margin,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn wilson_examples() {
        let (lo, hi) = wilson_interval(0, 100, 0.95);
        assert_eq!(lo, 0.0);
        assert_abs_diff_eq!(hi, 0.036993, epsilon = 1e-6);
        let (lo, hi) = wilson_interval(50, 100, 0.95);
        assert_abs_diff_eq!(0.5 - lo, hi - 0.5, epsilon = 1e-12);
        assert_eq!(wilson_interval(100, 100, 0.95).1, 1.0);
        assert_eq!(wilson_interval(0, 0, 0.95), (0.0, 1.0));
        let (lo, hi) = wilson_interval(1, 1, 0.95);
        assert!(lo > 0.0 && hi == 1.0);
    }

    #[test]
    fn entropy_convention() {
        assert_eq!(entropy(&[1.0, 0.0]), 0.0);
        assert_abs_diff_eq!(entropy(&[0.25; 4]), 4f64.ln(), epsilon = 1e-15);
    }

    #[test]
    fn tau_edge_cases() {
        let post = vec![vec![0.95, 0.05], vec![0.5, 0.5]];
        assert_eq!(tau_stop(&post, 0.1, 1), 0);
        let flat = vec![vec![0.5, 0.5]; 4];
        assert_eq!(tau_stop(&flat, 0.1, 3), 3);
        let cross = vec![vec![0.5, 0.5], vec![0.7, 0.3], vec![0.92, 0.08]];
        assert_eq!(tau_stop(&cross, 0.1, 2), 2);
        assert_eq!(tau_stop(&cross, 0.35, 2), 1);
    }

    #[test]
    fn blind_encoder_has_no_drift() {
        let ch = Channel::bsc(0.1).unwrap();
        let r = entropy_drift_check(&ch, &BlindEncoder(0), 2, 10, 200, 1, 3.0).unwrap();
        assert_eq!(r.mean_drop, 0.0);
        assert_eq!(r.se, 0.0);
        assert!(r.pass);
    }

    #[test]
    fn repetition_drift_is_below_capacity() {
        let ch = Channel::bsc(0.1).unwrap();
        let enc = RepetitionEncoder { inputs: 2 };
        let r = entropy_drift_check(&ch, &enc, 2, 20, 2000, 2, 3.0).unwrap();
        assert!(r.pass, "{r:?}");
        assert!(r.mean_drop > 0.0 && r.se > 0.0);
        assert_eq!(r.samples, 40_000);
    }

    #[test]
    fn trajectories_stay_in_entropy_range() {
        let ch = Channel::bsc(0.2).unwrap();
        let enc = HashedEncoder { inputs: 2, key: 5 };
        let mut rng = stream(3, 0);
        for w in 0..8 {
            let t = simulate_trajectory(&ch, &enc, 8, w, 30, &mut rng).unwrap();
            for p in &t.posteriors {
                let h = entropy(p);
                assert!((-1e-12..=8f64.ln() + 1e-12).contains(&h));
            }
        }
    }

    #[test]
    fn hashed_encoder_depends_on_history() {
        let enc = HashedEncoder { inputs: 2, key: 1 };
        let outs: Vec<usize> = (0..64)
            .map(|k| enc.input(0, &[k % 2, k / 2 % 2, k / 4]))
            .collect();
        assert!(outs.contains(&0) && outs.contains(&1));
    }

    #[test]
    fn stopping_checks_hold_and_reproduce() {
        let ch = Channel::bsc(0.1).unwrap();
        let enc = RepetitionEncoder { inputs: 2 };
        // with delta = 0.1 every run crosses after its first output
        let a = stopping_experiment(&ch, &enc, 2, 0.1, 6, 3000, 4).unwrap();
        assert_eq!((a.fano_checked, a.not_stopped), (3000, 0));
        assert!(a.markov_mean <= 3.0 * a.markov_se);
        let a = stopping_experiment(&ch, &enc, 2, 0.05, 6, 3000, 4).unwrap();
        assert_eq!(
            a,
            stopping_experiment(&ch, &enc, 2, 0.05, 6, 3000, 4).unwrap()
        );
        assert_eq!(a.step_bound_violations, 0);
        assert_eq!(a.fano_violations, 0);
        assert_eq!(a.partition_infeasible, 0);
        assert!(a.fano_checked > 0 && a.not_stopped > 0);
        assert!(a.markov_mean <= 3.0 * a.markov_se);
        let h = HashedEncoder { inputs: 2, key: 9 };
        let b = stopping_experiment(&ch, &h, 8, 0.2, 25, 2000, 5).unwrap();
        assert_eq!(
            b.step_bound_violations + b.fano_violations + b.partition_infeasible,
            0
        );
    }
}
