//! Error exponents and expected-decoding-time bounds.
//!
//! Everything here is in nats. The converse bound on `E[T]` is split into its
//! four additive terms so reports can show where the channel uses go.

mod curves;

pub use curves::{classical_curves, critical_rate, default_rate_grid, CurvePoint, CurveSet};

use serde::Serialize;
use thiserror::Error;

use crate::dmc::ChannelConstants;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BoundError {
    #[error("rate {rate} outside [0, {capacity}]")]
    RateOutOfRange { rate: f64, capacity: f64 },
    #[error("C1 is infinite (some transition probability is zero)")]
    InfiniteC1,
    #[error("channel has zero capacity")]
    ZeroCapacity,
    #[error("delta {0} outside (0, 1/2]")]
    DeltaOutOfRange(f64),
    #[error("message count must be at least 2, got {0}")]
    InvalidMessageCount(u64),
    #[error("error probability {0} outside (0, 1)")]
    InvalidErrorProbability(f64),
}

/// Binary entropy in nats, with `0 ln 0 = 0`.
pub fn binary_entropy(p: f64) -> f64 {
    let term = |t: f64| if t > 0.0 { -t * t.ln() } else { 0.0 };
    term(p) + term(1.0 - p)
}

/// Burnashev's exponent `C1 (1 - R/C)`.
pub fn burnashev_exponent(consts: &ChannelConstants, rate: f64) -> Result<f64, BoundError> {
    if !consts.c1_is_finite() {
        return Err(BoundError::InfiniteC1);
    }
    let c = consts.capacity_nats;
    if c <= 0.0 {
        return Err(BoundError::ZeroCapacity);
    }
    if !(0.0..=c).contains(&rate) {
        return Err(BoundError::RateOutOfRange { rate, capacity: c });
    }
    Ok(consts.c1_nats * (1.0 - rate / c))
}

fn check_args(consts: &ChannelConstants, m: u64, pe: f64, delta: f64) -> Result<(), BoundError> {
    if m < 2 {
        return Err(BoundError::InvalidMessageCount(m));
    }
    if !(pe > 0.0 && pe < 1.0) {
        return Err(BoundError::InvalidErrorProbability(pe));
    }
    if !(delta > 0.0 && delta <= 0.5) {
        return Err(BoundError::DeltaOutOfRange(delta));
    }
    if consts.capacity_nats <= 0.0 {
        return Err(BoundError::ZeroCapacity);
    }
    Ok(())
}

/// Lower bound on `E[tau]`, the expected time until the MAP error
/// probability of the posterior first drops to `delta`:
/// `(1 - delta - pe/delta) ln M / C - h(delta) / C`.
///
/// May be negative; callers clamp for display.
pub fn tau_lower_bound(
    consts: &ChannelConstants,
    m: u64,
    pe: f64,
    delta: f64,
) -> Result<f64, BoundError> {
    check_args(consts, m, pe, delta)?;
    let c = consts.capacity_nats;
    let ln_m = (m as f64).ln();
    Ok((1.0 - delta - pe / delta) * ln_m / c - binary_entropy(delta) / c)
}

/// The four additive terms of the lower bound on the expected decoding time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundBreakdown {
    /// `(1 - delta - pe/delta) ln M / C`
    pub communication: f64,
    /// `-ln pe / C1`
    pub confirmation: f64,
    /// `-h(delta) / C`
    pub entropy_penalty: f64,
    /// `(ln(lambda delta) - ln 4) / C1`
    pub partition_penalty: f64,
}

impl BoundBreakdown {
    pub fn total(&self) -> f64 {
        self.communication + self.confirmation + self.entropy_penalty + self.partition_penalty
    }

    /// The part contributed by the stretch after `tau` (the binary test).
    pub fn after_tau(&self) -> f64 {
        self.confirmation + self.partition_penalty
    }
}

/// Lower bound on `E[T]` for any variable-length block code with feedback
/// that sends one of `m` messages with error probability `pe`.
pub fn decoding_time_lower_bound(
    consts: &ChannelConstants,
    m: u64,
    pe: f64,
    delta: f64,
) -> Result<BoundBreakdown, BoundError> {
    check_args(consts, m, pe, delta)?;
    if !consts.c1_is_finite() || consts.lambda <= 0.0 {
        return Err(BoundError::InfiniteC1);
    }
    let c = consts.capacity_nats;
    let c1 = consts.c1_nats;
    let ln_m = (m as f64).ln();
    Ok(BoundBreakdown {
        communication: (1.0 - delta - pe / delta) * ln_m / c,
        confirmation: -pe.ln() / c1,
        entropy_penalty: -binary_entropy(delta) / c,
        partition_penalty: ((consts.lambda * delta).ln() - 4.0_f64.ln()) / c1,
    })
}

/// `delta = -1 / ln pe`, clamped to `(0, 1/2]`.
pub fn delta_schedule(pe: f64) -> f64 {
    let d = -1.0 / pe.ln();
    if d > 0.0 && d <= 0.5 {
        d
    } else if d == 0.0 {
        f64::MIN_POSITIVE
    } else {
        0.5
    }
}

/// `0.01, 0.02, ..., 0.50`.
pub fn default_delta_grid() -> Vec<f64> {
    (1..=50).map(|k| k as f64 / 100.0).collect()
}

/// Evaluated bound together with the parameters it was evaluated at.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub m: u64,
    pub pe: f64,
    pub delta: f64,
    pub tau_bound: f64,
    pub breakdown: BoundBreakdown,
    pub total: f64,
}

impl BoundReport {
    pub fn evaluate(
        consts: &ChannelConstants,
        m: u64,
        pe: f64,
        delta: f64,
    ) -> Result<BoundReport, BoundError> {
        let breakdown = decoding_time_lower_bound(consts, m, pe, delta)?;
        Ok(BoundReport {
            m,
            pe,
            delta,
            tau_bound: tau_lower_bound(consts, m, pe, delta)?,
            breakdown,
            total: breakdown.total(),
        })
    }
}

/// Picks the `delta` from `grid` that maximizes the bound (the tightest one).
pub fn optimize_delta(
    consts: &ChannelConstants,
    m: u64,
    pe: f64,
    grid: &[f64],
) -> Result<BoundReport, BoundError> {
    let mut best: Option<BoundReport> = None;
    for &delta in grid {
        let r = BoundReport::evaluate(consts, m, pe, delta)?;
        if best.as_ref().is_none_or(|b| r.total > b.total) {
            best = Some(r);
        }
    }
    best.ok_or(BoundError::DeltaOutOfRange(f64::NAN))
}
