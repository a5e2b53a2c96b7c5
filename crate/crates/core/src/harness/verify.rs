//! The `verify` suite: exact tree slices plus the statistical process checks,
//! each reported as one [`CheckReport`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dmc::{channel_constants, Channel, ChannelError, DEFAULT_BA_TOLERANCE};
use crate::seqtest::{check_random_trees, exhaustive_check, SliceSummary, TestError};

use super::{
    entropy_drift_check, stopping_experiment, BlindEncoder, HashedEncoder, RepetitionEncoder,
};

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Test(#[from] TestError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckReport {
    pub check: String,
    pub pass: bool,
    pub statistic: f64,
    pub threshold: f64,
    pub trials: u64,
    pub seed: u64,
}

/// Gates and trial counts. Every field has a default, so a config file
/// only lists what it overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub channels: Vec<Vec<Vec<f64>>>,
    /// `p_A` values; each is also checked mirrored.
    pub priors: Vec<f64>,
    /// Depth of the exhaustive slice when no depth is requested.
    pub quick_depth: usize,
    pub sampled_depths: Vec<usize>,
    pub sampled_trees: u64,
    pub drift_m: usize,
    pub drift_steps: usize,
    pub drift_trials: u64,
    pub drift_sigma: f64,
    pub stopping_delta: f64,
    pub stopping_horizon: usize,
    pub stopping_trials: u64,
    pub markov_sigma: f64,
    pub partition_m: usize,
    pub partition_delta: f64,
    pub partition_horizon: usize,
    pub partition_trials: u64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            channels: vec![
                vec![vec![0.9, 0.1], vec![0.1, 0.9]],
                vec![vec![0.7, 0.3], vec![0.3, 0.7]],
                vec![vec![0.8, 0.2], vec![0.3, 0.7]],
            ],
            priors: vec![0.1, 0.3, 0.5],
            quick_depth: 2,
            sampled_depths: vec![4, 5],
            sampled_trees: 10_000,
            drift_m: 2,
            drift_steps: 20,
            drift_trials: 10_000,
            drift_sigma: 3.0,
            stopping_delta: 0.05,
            stopping_horizon: 8,
            stopping_trials: 10_000,
            markov_sigma: 3.0,
            partition_m: 8,
            partition_delta: 0.2,
            partition_horizon: 25,
            partition_trials: 10_000,
        }
    }
}

fn slice_reports(tag: &str, s: &SliceSummary, seed: u64, out: &mut Vec<CheckReport>) {
    out.push(CheckReport {
        check: format!("prop1_{tag}"),
        pass: s.prop1_pass(),
        statistic: s.min_prop1_slack,
        threshold: -crate::seqtest::PROP1_GRACE,
        trials: s.trees,
        seed,
    });
    out.push(CheckReport {
        check: format!("lemma1_{tag}"),
        pass: s.lemma1_pass(),
        statistic: s.min_lemma1_slack,
        threshold: 0.0,
        trials: s.lemma1_cases,
        seed,
    });
    out.push(CheckReport {
        check: format!("log_sum_{tag}"),
        pass: s.data_processing_pass(),
        statistic: s.min_data_processing_slack,
        threshold: -crate::seqtest::PROP1_GRACE,
        trials: s.trees,
        seed,
    });
}

/// Runs every check. `depth` selects the exhaustive slice depth; `None`
/// uses `quick_depth`.
pub fn run_verify(
    cfg: &VerifyConfig,
    seed: u64,
    depth: Option<usize>,
) -> Result<Vec<CheckReport>, VerifyError> {
    let depth = depth.unwrap_or(cfg.quick_depth);
    let mut out = Vec::new();
    for (k, rows) in cfg.channels.iter().enumerate() {
        let ch = Channel::new(rows)?;
        let c = channel_constants(&ch, DEFAULT_BA_TOLERANCE)?;
        let s = exhaustive_check(&ch, &c, depth, &cfg.priors)?;
        slice_reports(&format!("exhaustive_d{depth}_ch{k}"), &s, seed, &mut out);
        let s = check_random_trees(
            &ch,
            &c,
            &cfg.sampled_depths,
            cfg.sampled_trees,
            seed,
            &cfg.priors,
        )?;
        slice_reports(&format!("sampled_ch{k}"), &s, seed, &mut out);
    }

    let bsc = Channel::bsc(0.1)?;
    let rep = RepetitionEncoder { inputs: 2 };
    let d = entropy_drift_check(
        &bsc,
        &rep,
        cfg.drift_m,
        cfg.drift_steps,
        cfg.drift_trials,
        seed,
        cfg.drift_sigma,
    )?;
    out.push(CheckReport {
        check: "entropy_drift_repetition".into(),
        pass: d.pass,
        statistic: d.mean_drop,
        threshold: d.capacity_nats + cfg.drift_sigma * d.se,
        trials: d.samples,
        seed,
    });
    let d = entropy_drift_check(
        &bsc,
        &BlindEncoder(0),
        cfg.drift_m,
        cfg.drift_steps,
        100,
        seed,
        cfg.drift_sigma,
    )?;
    out.push(CheckReport {
        check: "entropy_drift_blind".into(),
        pass: d.pass && d.mean_drop == 0.0,
        statistic: d.mean_drop,
        threshold: d.capacity_nats + cfg.drift_sigma * d.se,
        trials: d.samples,
        seed,
    });

    let runs = [
        (
            "repetition",
            stopping_experiment(
                &bsc,
                &rep,
                2,
                cfg.stopping_delta,
                cfg.stopping_horizon,
                cfg.stopping_trials,
                seed,
            )?,
        ),
        (
            "hashed",
            stopping_experiment(
                &bsc,
                &HashedEncoder {
                    inputs: 2,
                    key: seed,
                },
                cfg.partition_m,
                cfg.partition_delta,
                cfg.partition_horizon,
                cfg.partition_trials,
                seed,
            )?,
        ),
    ];
    for (name, r) in &runs {
        out.push(CheckReport {
            check: format!("posterior_step_bound_{name}"),
            pass: r.step_bound_violations == 0,
            statistic: r.step_bound_violations as f64,
            threshold: 0.0,
            trials: r.steps,
            seed,
        });
        out.push(CheckReport {
            check: format!("fano_at_tau_{name}"),
            pass: r.fano_violations == 0,
            statistic: r.fano_min_slack,
            threshold: 0.0,
            trials: r.fano_checked,
            seed,
        });
        out.push(CheckReport {
            check: format!("markov_at_tau_{name}"),
            pass: r.markov_mean <= cfg.markov_sigma * r.markov_se,
            statistic: r.markov_mean,
            threshold: cfg.markov_sigma * r.markov_se,
            trials: r.trials,
            seed,
        });
        out.push(CheckReport {
            check: format!("partition_floor_{name}"),
            pass: r.partition_infeasible == 0 && r.partition_min_margin >= -1e-12,
            statistic: r.partition_min_margin,
            threshold: 0.0,
            trials: r.trials,
            seed,
        });
    }
    Ok(out)
}
