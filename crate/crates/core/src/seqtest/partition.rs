//! Splitting the message set at the stopping time into two parts that both
//! keep posterior mass at least `lambda * delta`.

use serde::Serialize;

use super::TestError;

const MASS_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Partition {
    /// Members of the distinguished part, ascending.
    pub members: Vec<usize>,
    pub mass: f64,
    /// True when the single most likely message already exceeds `1 - delta`.
    pub single_message: bool,
}

impl Partition {
    pub fn complement_mass(&self) -> f64 {
        1.0 - self.mass
    }
}

/// Case 1: the MAP message carries at least `1 - delta`, so it forms the
/// part alone. Case 2: messages join in ascending index order until the mass
/// exceeds `delta / 2`. Either way both parts are certified against the
/// `lambda * delta` floor.
pub fn message_partition(
    posterior: &[f64],
    delta: f64,
    lambda: f64,
) -> Result<Partition, TestError> {
    if !(delta > 0.0 && delta <= 0.5) {
        return Err(TestError::InvalidDelta(delta));
    }
    let total: f64 = posterior.iter().sum();
    if posterior.is_empty()
        || posterior.iter().any(|p| p.is_nan() || *p < 0.0)
        || (total - 1.0).abs() > 1e-9
    {
        return Err(TestError::InvalidPosterior(total));
    }
    let (argmax, max) =
        posterior
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &p)| {
                if p > best.1 {
                    (i, p)
                } else {
                    best
                }
            });
    let part = if max >= 1.0 - delta {
        Partition {
            members: vec![argmax],
            mass: max,
            single_message: true,
        }
    } else {
        let mut members = Vec::new();
        let mut mass = 0.0;
        for (i, &p) in posterior.iter().enumerate() {
            if mass > delta / 2.0 {
                break;
            }
            members.push(i);
            mass += p;
        }
        Partition {
            members,
            mass,
            single_message: false,
        }
    };
    let floor = lambda * delta;
    let rest = total - part.mass;
    if part.mass < floor - MASS_SLACK || rest < floor - MASS_SLACK {
        return Err(TestError::PartitionInfeasible {
            mass_g: part.mass,
            mass_rest: rest,
            floor,
        });
    }
    Ok(part)
}
