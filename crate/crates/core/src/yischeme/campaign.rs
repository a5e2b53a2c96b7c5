//! Monte Carlo campaigns of the two-phase scheme.
//!
//! Episode `i` draws its message and all channel noise from stream `i` of a
//! ChaCha8 generator seeded with the base seed, so results do not depend on
//! how episodes are spread over threads. Aggregation uses integer tallies
//! only, which makes it associative and exact.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::dmc::{Channel, ChannelConstants};
use crate::exponents::{default_delta_grid, delta_schedule, optimize_delta, BoundReport};
use crate::harness::wilson_interval;

use super::{extended_f64, EpisodeRecord, YiConfig, YiError, YiScheme};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct Tally {
    trials: u64,
    errors: u64,
    aborts: u64,
    sum_t: u64,
    sum_t2: u128,
    rounds: u64,
    ack_rounds: u64,
    false_nacks: u64,
    nack_rounds: u64,
    false_acks: u64,
    mismatches: u64,
}

impl Tally {
    fn of(e: &EpisodeRecord) -> Self {
        let mut t = Tally {
            trials: 1,
            errors: u64::from(e.is_error()),
            aborts: u64::from(e.aborted),
            sum_t: e.stop_time,
            sum_t2: u128::from(e.stop_time) * u128::from(e.stop_time),
            rounds: e.rounds as u64,
            ..Tally::default()
        };
        for r in &e.per_round {
            if r.ack_sent {
                t.ack_rounds += 1;
                t.false_nacks += u64::from(!r.ack_decoded);
            } else {
                t.nack_rounds += 1;
                t.false_acks += u64::from(r.ack_decoded);
            }
            t.mismatches += u64::from(r.tentative != r.encoder_tentative);
        }
        t
    }

    fn merge(self, o: Self) -> Self {
        Tally {
            trials: self.trials + o.trials,
            errors: self.errors + o.errors,
            aborts: self.aborts + o.aborts,
            sum_t: self.sum_t + o.sum_t,
            sum_t2: self.sum_t2 + o.sum_t2,
            rounds: self.rounds + o.rounds,
            ack_rounds: self.ack_rounds + o.ack_rounds,
            false_nacks: self.false_nacks + o.false_nacks,
            nack_rounds: self.nack_rounds + o.nack_rounds,
            false_acks: self.false_acks + o.false_acks,
            mismatches: self.mismatches + o.mismatches,
        }
    }
}

/// Campaign statistics. Aborted episodes count as errors in `pe_hat`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CampaignStats {
    pub m: usize,
    pub n1: usize,
    pub n2: usize,
    #[serde(serialize_with = "extended_f64")]
    pub threshold: f64,
    pub trials: u64,
    pub pe_hat: f64,
    pub pe_ci95: [f64; 2],
    pub et_hat: f64,
    pub et_se: f64,
    pub rate_nats: f64,
    pub aborts: u64,
    /// Lower bound on E[T] at the upper confidence limit of `pe_hat` and
    /// the `-1/ln P_e` schedule; absent when that limit leaves (0, 1).
    pub theorem_bound: Option<f64>,
    pub delta: Option<f64>,
    /// Same bound with `delta` picked from the default grid.
    pub theorem_bound_grid: Option<f64>,
    pub delta_grid: Option<f64>,
    pub seed: u64,
    pub code_seed: u64,
    pub max_rounds: usize,
    pub errors: u64,
    pub total_rounds: u64,
    pub ack_rounds: u64,
    pub false_nacks: u64,
    pub nack_rounds: u64,
    pub false_acks: u64,
    pub feedback_mismatches: u64,
    pub code_duplicates: usize,
}

impl CampaignStats {
    fn from_tally(
        t: &Tally,
        scheme: &YiScheme,
        consts: &ChannelConstants,
        seed: u64,
    ) -> CampaignStats {
        let cfg = scheme.config();
        let n = t.trials as f64;
        let et = t.sum_t as f64 / n;
        let var = if t.trials > 1 {
            ((t.sum_t2 as f64 - n * et * et) / (n - 1.0)).max(0.0)
        } else {
            0.0
        };
        let (lo, hi) = wilson_interval(t.errors, t.trials, 0.95);
        let m = cfg.m as u64;
        let (theorem_bound, delta) = if hi > 0.0 && hi < 1.0 {
            let d = delta_schedule(hi);
            let b = BoundReport::evaluate(consts, m, hi, d)
                .ok()
                .map(|r| r.total);
            (b, b.map(|_| d))
        } else {
            (None, None)
        };
        let grid = (hi > 0.0 && hi < 1.0)
            .then(|| optimize_delta(consts, m, hi, &default_delta_grid()).ok())
            .flatten();
        CampaignStats {
            m: cfg.m,
            n1: cfg.n1,
            n2: cfg.n2,
            threshold: cfg.threshold,
            trials: t.trials,
            pe_hat: t.errors as f64 / n,
            pe_ci95: [lo, hi],
            et_hat: et,
            et_se: (var / n).sqrt(),
            rate_nats: (cfg.m as f64).ln() / et,
            aborts: t.aborts,
            theorem_bound,
            delta,
            theorem_bound_grid: grid.as_ref().map(|r| r.total),
            delta_grid: grid.as_ref().map(|r| r.delta),
            seed,
            code_seed: cfg.code_seed,
            max_rounds: cfg.max_rounds,
            errors: t.errors,
            total_rounds: t.rounds,
            ack_rounds: t.ack_rounds,
            false_nacks: t.false_nacks,
            nack_rounds: t.nack_rounds,
            false_acks: t.false_acks,
            feedback_mismatches: t.mismatches,
            code_duplicates: scheme.code().duplicates(),
        }
    }

    pub fn abort_rate(&self) -> f64 {
        self.aborts as f64 / self.trials as f64
    }

    /// The empirical mean time stays above the bound up to `k` standard errors.
    pub fn respects_bound(&self, bound: f64, k: f64) -> bool {
        self.et_hat >= bound - k * self.et_se
    }

    pub fn mean_rounds(&self) -> f64 {
        self.total_rounds as f64 / self.trials as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct EpisodeSummary {
    pub episode: u64,
    pub true_message: usize,
    pub decoded: usize,
    pub rounds: usize,
    pub stop_time: u64,
    pub aborted: bool,
}

impl EpisodeSummary {
    pub const CSV_HEADER: &'static str = "episode,true,decoded,rounds,T,aborted";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.episode,
            self.true_message,
            self.decoded,
            self.rounds,
            self.stop_time,
            u8::from(self.aborted)
        )
    }
}

pub fn episodes_csv(rows: &[EpisodeSummary]) -> String {
    let mut out = String::with_capacity(24 * (rows.len() + 1));
    out.push_str(EpisodeSummary::CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

fn episode(scheme: &YiScheme, base_seed: u64, index: u64) -> EpisodeRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    rng.set_stream(index);
    let message = rng.gen_range(0..scheme.config().m);
    scheme.run_episode(message, &mut rng)
}

fn prepare(
    cfg: &YiConfig,
    ch: &Channel,
    consts: &ChannelConstants,
    trials: u64,
) -> Result<YiScheme, YiError> {
    if trials == 0 {
        return Err(YiError::InvalidConfig("trials must be at least 1".into()));
    }
    YiScheme::new(cfg.clone(), ch, consts)
}

pub fn simulate(
    cfg: &YiConfig,
    ch: &Channel,
    consts: &ChannelConstants,
    trials: u64,
    base_seed: u64,
) -> Result<CampaignStats, YiError> {
    let scheme = prepare(cfg, ch, consts, trials)?;
    let tally = (0..trials)
        .into_par_iter()
        .map(|i| Tally::of(&episode(&scheme, base_seed, i)))
        .reduce(Tally::default, Tally::merge);
    Ok(CampaignStats::from_tally(
        &tally, &scheme, consts, base_seed,
    ))
}

/// [`simulate`] plus one summary per episode, in episode order.
pub fn simulate_with_episodes(
    cfg: &YiConfig,
    ch: &Channel,
    consts: &ChannelConstants,
    trials: u64,
    base_seed: u64,
) -> Result<(CampaignStats, Vec<EpisodeSummary>), YiError> {
    let scheme = prepare(cfg, ch, consts, trials)?;
    let (tallies, rows): (Vec<Tally>, Vec<EpisodeSummary>) = (0..trials)
        .into_par_iter()
        .map(|i| {
            let e = episode(&scheme, base_seed, i);
            let row = EpisodeSummary {
                episode: i,
                true_message: e.true_message,
                decoded: e.decoded_message,
                rounds: e.rounds,
                stop_time: e.stop_time,
                aborted: e.aborted,
            };
            (Tally::of(&e), row)
        })
        .unzip();
    let tally = tallies.into_iter().fold(Tally::default(), Tally::merge);
    Ok((
        CampaignStats::from_tally(&tally, &scheme, consts, base_seed),
        rows,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dmc::channel_constants;
    use crate::seqtest::fixed_length_np_test;

    fn bsc() -> (Channel, ChannelConstants) {
        let ch = Channel::bsc(0.1).unwrap();
        let k = channel_constants(&ch, 1e-12).unwrap();
        (ch, k)
    }

    #[test]
    fn single_trial_is_well_formed() {
        let (ch, k) = bsc();
        let s = simulate(&YiConfig::new(16, 24, 8), &ch, &k, 1, 5).unwrap();
        assert_eq!(s.trials, 1);
        assert_eq!(s.et_se, 0.0);
        assert!(s.pe_ci95[0] == 0.0 || s.pe_ci95[1] == 1.0);
        assert!(s.pe_ci95[1] - s.pe_ci95[0] > 0.5);
        serde_json::to_string(&s).unwrap();
    }

    #[test]
    fn zero_trials_rejected() {
        let (ch, k) = bsc();
        assert!(simulate(&YiConfig::new(16, 24, 8), &ch, &k, 0, 5).is_err());
    }

    #[test]
    fn campaigns_are_reproducible_and_consistent() {
        let (ch, k) = bsc();
        let cfg = YiConfig::new(16, 24, 8).with_code_seed(2);
        let a = simulate(&cfg, &ch, &k, 3000, 9).unwrap();
        let (b, rows) = simulate_with_episodes(&cfg, &ch, &k, 3000, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(rows.len(), 3000);
        assert_eq!(a.feedback_mismatches, 0);
        let t: u64 = rows.iter().map(|r| r.stop_time).sum();
        assert!((a.et_hat - t as f64 / 3000.0).abs() < 1e-12);
        let errors = rows
            .iter()
            .filter(|r| r.aborted || r.decoded != r.true_message)
            .count();
        assert_eq!(errors as u64, a.errors);
        assert_ne!(a, simulate(&cfg, &ch, &k, 3000, 10).unwrap());
        let csv = episodes_csv(&rows[..2]);
        assert!(csv.starts_with("episode,true,decoded,rounds,T,aborted\n0,"));
        assert_eq!(csv.lines().count(), 3);
    }

    #[test]
    fn round_level_rates_match_the_exact_test() {
        let (ch, k) = bsc();
        let cfg = YiConfig::new(16, 24, 8);
        let s = simulate(&cfg, &ch, &k, 20_000, 1).unwrap();
        let exact = fixed_length_np_test(&ch, k.best_pair.unwrap(), 8, 0.0).unwrap();
        let check = |hits: u64, n: u64, p: f64| {
            let rate = hits as f64 / n as f64;
            (rate - p).abs() <= 4.0 * (p * (1.0 - p) / n as f64).sqrt()
        };
        assert!(check(s.false_nacks, s.ack_rounds, exact.err_given_a));
        assert!(check(s.false_acks, s.nack_rounds, exact.err_given_n));
        // each finished episode has exactly one decoded ACK
        let acked = s.total_rounds - s.false_nacks - (s.nack_rounds - s.false_acks);
        assert_eq!(acked, s.trials - s.aborts);
    }

    #[test]
    fn bound_fields_follow_the_upper_limit() {
        let (ch, k) = bsc();
        let s = simulate(&YiConfig::new(16, 24, 8), &ch, &k, 5000, 4).unwrap();
        let hi = s.pe_ci95[1];
        let d = delta_schedule(hi);
        assert_eq!(s.delta, Some(d));
        let expect = BoundReport::evaluate(&k, 16, hi, d).unwrap().total;
        assert_eq!(s.theorem_bound, Some(expect));
        assert!(s.respects_bound(s.theorem_bound_grid.unwrap(), 3.0));
    }
}
