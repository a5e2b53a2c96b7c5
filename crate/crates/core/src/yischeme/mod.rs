//! Two-phase variable-length scheme with feedback.
//!
//! Each round sends the message's codeword over `n1` uses, after which
//! decoder and encoder (through feedback) both form the same tentative ML
//! decision. The encoder then repeats the best-pair symbol `x_A` (tentative
//! correct, ACK) or `x_N` (NACK) for `n2` uses, and the decoder runs a
//! threshold LLR test on those outputs. A decoded ACK ends transmission; a
//! decoded NACK discards the round and starts over.

mod campaign;
mod code;

pub use campaign::{episodes_csv, simulate, simulate_with_episodes, CampaignStats, EpisodeSummary};
pub use code::{build_code, BlockCode, MlDecoder, Observation, ML_TIE_TOLERANCE};

use rand::Rng;
use serde::Serialize;
use thiserror::Error;

use crate::dmc::{Channel, ChannelConstants};
use crate::seqtest::accepts;

/// Exhaustive ML search caps the message count.
pub const MAX_MESSAGES: usize = 1 << 16;
pub const DEFAULT_MAX_ROUNDS: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum YiError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("C1 is infinite; the confirmation phase needs a finite best pair")]
    InfiniteC1,
    #[error("channel has no distinguishable input pair")]
    NoBestPair,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct YiConfig {
    pub m: usize,
    pub n1: usize,
    pub n2: usize,
    #[serde(serialize_with = "extended_f64")]
    pub threshold: f64,
    pub code_seed: u64,
    pub max_rounds: usize,
}

/// Finite values as numbers, infinities as `"inf"` / `"-inf"`.
pub(crate) fn extended_f64<S: serde::Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else if *v > 0.0 {
        s.serialize_str("inf")
    } else if *v < 0.0 {
        s.serialize_str("-inf")
    } else {
        s.serialize_str("nan")
    }
}

impl YiConfig {
    pub fn new(m: usize, n1: usize, n2: usize) -> Self {
        YiConfig {
            m,
            n1,
            n2,
            threshold: 0.0,
            code_seed: 0,
            max_rounds: DEFAULT_MAX_ROUNDS,
        }
    }

    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.threshold = threshold;
        self
    }

    pub fn with_code_seed(mut self, seed: u64) -> Self {
        self.code_seed = seed;
        self
    }

    pub fn with_max_rounds(mut self, rounds: usize) -> Self {
        self.max_rounds = rounds;
        self
    }

    pub fn validate(&self) -> Result<(), YiError> {
        let bad = |msg: String| Err(YiError::InvalidConfig(msg));
        if self.m < 2 || self.m > MAX_MESSAGES {
            return bad(format!("m must lie in [2, {MAX_MESSAGES}], got {}", self.m));
        }
        if self.n1 == 0 || self.n2 == 0 {
            return bad("n1 and n2 must be at least 1".into());
        }
        if self.max_rounds == 0 {
            return bad("max_rounds must be at least 1".into());
        }
        if self.threshold.is_nan() {
            return bad("threshold is NaN".into());
        }
        Ok(())
    }

    pub fn round_length(&self) -> u64 {
        (self.n1 + self.n2) as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RoundRecord {
    /// Decoder's tentative decision.
    pub tentative: usize,
    /// Encoder's recomputation of it from the fed-back outputs.
    pub encoder_tentative: usize,
    pub ack_sent: bool,
    pub ack_decoded: bool,
    pub llr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeRecord {
    pub true_message: usize,
    pub decoded_message: usize,
    pub stop_time: u64,
    pub rounds: usize,
    pub per_round: Vec<RoundRecord>,
    pub aborted: bool,
}

impl EpisodeRecord {
    pub fn is_error(&self) -> bool {
        self.aborted || self.decoded_message != self.true_message
    }
}

/// Receiver side: collects outputs, decides tentatively, tests the
/// confirmation block.
#[derive(Debug, Clone)]
struct DecoderState {
    obs: Observation,
    scores: Vec<f64>,
    llr: f64,
}

/// Transmitter side: knows the message and sees every output via feedback.
#[derive(Debug, Clone)]
struct EncoderState {
    message: usize,
    feedback: Observation,
    scores: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct YiScheme {
    cfg: YiConfig,
    ch: Channel,
    decoder: MlDecoder,
    pair: (usize, usize),
    llr_table: Vec<f64>,
}

impl YiScheme {
    pub fn new(cfg: YiConfig, ch: &Channel, consts: &ChannelConstants) -> Result<Self, YiError> {
        cfg.validate()?;
        if !consts.c1_is_finite() {
            return Err(YiError::InfiniteC1);
        }
        let pair = consts.best_pair.ok_or(YiError::NoBestPair)?;
        let code = build_code(&cfg, consts)?;
        let (ra, rn) = (ch.row(pair.0), ch.row(pair.1));
        let llr_table = ra
            .iter()
            .zip(rn)
            .map(|(&a, &b)| match (a > 0.0, b > 0.0) {
                (true, true) => (a / b).ln(),
                (true, false) => f64::INFINITY,
                (false, true) => f64::NEG_INFINITY,
                (false, false) => 0.0,
            })
            .collect();
        Ok(YiScheme {
            decoder: MlDecoder::new(code, ch),
            cfg,
            ch: ch.clone(),
            pair,
            llr_table,
        })
    }

    pub fn config(&self) -> &YiConfig {
        &self.cfg
    }

    pub fn code(&self) -> &BlockCode {
        self.decoder.code()
    }

    pub fn confirmation_pair(&self) -> (usize, usize) {
        self.pair
    }

    /// One episode for a given message; all channel noise comes from `rng`.
    pub fn run_episode<R: Rng + ?Sized>(&self, true_message: usize, rng: &mut R) -> EpisodeRecord {
        let mut dec = DecoderState {
            obs: Observation::default(),
            scores: Vec::with_capacity(self.cfg.m),
            llr: 0.0,
        };
        let mut enc = EncoderState {
            message: true_message,
            feedback: Observation::default(),
            scores: Vec::with_capacity(self.cfg.m),
        };
        let mut per_round = Vec::with_capacity(2);
        let codeword = self.decoder.code().codeword(true_message);
        for round in 1..=self.cfg.max_rounds {
            dec.obs.clear();
            enc.feedback.clear();
            for &x in codeword {
                let y = self.ch.sample_output(x, rng);
                dec.obs.push(y);
                enc.feedback.push(y);
            }
            let tentative = self.decoder.decode(&dec.obs, &mut dec.scores);
            let encoder_tentative = self.decoder.decode(&enc.feedback, &mut enc.scores);
            let ack_sent = encoder_tentative == enc.message;
            let x = if ack_sent { self.pair.0 } else { self.pair.1 };
            dec.llr = 0.0;
            for _ in 0..self.cfg.n2 {
                dec.llr += self.llr_table[self.ch.sample_output(x, rng)];
            }
            let ack_decoded = accepts(dec.llr, self.cfg.threshold);
            per_round.push(RoundRecord {
                tentative,
                encoder_tentative,
                ack_sent,
                ack_decoded,
                llr: dec.llr,
            });
            if ack_decoded {
                return EpisodeRecord {
                    true_message,
                    decoded_message: tentative,
                    stop_time: round as u64 * self.cfg.round_length(),
                    rounds: round,
                    per_round,
                    aborted: false,
                };
            }
        }
        let last = per_round.last().map_or(0, |r| r.tentative);
        EpisodeRecord {
            true_message,
            decoded_message: last,
            stop_time: self.cfg.max_rounds as u64 * self.cfg.round_length(),
            rounds: self.cfg.max_rounds,
            per_round,
            aborted: true,
        }
    }
}
