//! Classical (no-feedback) exponent curves, for comparison with Burnashev's.
//!
//! Textbook Gallager forms:
//!
//! ```text
//! E0(rho, q) = -ln sum_y ( sum_x q(x) p(y|x)^(1/(1+rho)) )^(1+rho)
//! Ex(rho, q) = -rho ln sum_{x,x'} q(x) q(x') ( sum_y sqrt(p(y|x) p(y|x')) )^(1/rho)
//!
//! random coding    Er(R)  = max_{0<=rho<=1}   max_q E0 - rho R
//! sphere packing   Esp(R) = sup_{rho>=0}      max_q E0 - rho R   (rho capped)
//! expurgated       Eex(R) = sup_{rho>=1}      max_q Ex - rho R   (rho capped)
//! ```
//!
//! The straight-line bound is the line from `(0, Eex(0))` tangent to the
//! sphere-packing curve, followed by the sphere-packing curve itself above
//! the tangency rate.

use rayon::prelude::*;
use serde::Serialize;

use super::{burnashev_exponent, BoundError};
use crate::dmc::{Channel, ChannelConstants};

/// Cap on `rho` for the sphere-packing supremum.
pub const SPHERE_PACKING_RHO_CAP: f64 = 100.0;
/// Cap on `rho` for the expurgated supremum (and its zero-rate anchor).
pub const EXPURGATED_RHO_CAP: f64 = 1e4;
/// Grace allowed on rates slightly past the computed capacity.
const RATE_SLACK: f64 = 1e-12;

const SCAN_POINTS: usize = 41;
const SIMPLEX_STARTS: usize = 3;
const SIMPLEX_TOLERANCE: f64 = 1e-9;
const SIMPLEX_MAX_ITERATIONS: usize = 500;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvePoint {
    pub rate_nats: f64,
    /// `None` when `C1` is infinite.
    pub e_burnashev: Option<f64>,
    pub e_sphere_packing: f64,
    pub e_random_coding: f64,
    pub e_expurgated: f64,
    pub e_straight_line: f64,
    /// The sphere-packing maximizer sat at the `rho` cap; the true value may be larger.
    pub sp_capped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurveSet {
    pub points: Vec<CurvePoint>,
    pub critical_rate: f64,
    pub zero_rate_expurgated: f64,
    pub tangent_rate: f64,
}

impl CurveSet {
    /// CSV with header `rate_nats,e_burnashev,e_sp,e_rc,e_ex,e_sl`, 9 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("rate_nats,e_burnashev,e_sp,e_rc,e_ex,e_sl\n");
        for p in &self.points {
            let burn = p.e_burnashev.map(sig9).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                sig9(p.rate_nats),
                burn,
                sig9(p.e_sphere_packing),
                sig9(p.e_random_coding),
                sig9(p.e_expurgated),
                sig9(p.e_straight_line)
            ));
        }
        out
    }
}

fn sig9(v: f64) -> String {
    // normalize -0.0
    let v = if v == 0.0 { 0.0 } else { v };
    format!("{v:.8e}")
}

/// `points` evenly spaced rates on `[0, capacity]`, endpoints included.
pub fn default_rate_grid(capacity: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![0.0],
        n => (0..n)
            .map(|i| {
                if i == n - 1 {
                    capacity
                } else {
                    capacity * i as f64 / (n - 1) as f64
                }
            })
            .collect(),
    }
}

struct Gallager<'a> {
    ch: &'a Channel,
    // Bhattacharyya coefficients, row-major over input pairs
    bhatt: Vec<f64>,
}

impl<'a> Gallager<'a> {
    fn new(ch: &'a Channel) -> Self {
        let nx = ch.input_size();
        let mut bhatt = vec![0.0; nx * nx];
        for a in 0..nx {
            for b in 0..nx {
                bhatt[a * nx + b] = ch
                    .row(a)
                    .iter()
                    .zip(ch.row(b))
                    .map(|(p, q)| (p * q).sqrt())
                    .sum();
            }
        }
        Gallager { ch, bhatt }
    }

    fn e0(&self, rho: f64, q: &[f64]) -> f64 {
        let s = 1.0 / (1.0 + rho);
        let total: f64 = (0..self.ch.output_size())
            .map(|y| {
                let inner: f64 = q
                    .iter()
                    .enumerate()
                    .map(|(x, qx)| qx * self.ch.prob(x, y).powf(s))
                    .sum();
                inner.powf(1.0 + rho)
            })
            .sum();
        -total.ln()
    }

    fn e0_grad(&self, rho: f64, q: &[f64], grad: &mut [f64]) {
        let s = 1.0 / (1.0 + rho);
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut total = 0.0;
        for y in 0..self.ch.output_size() {
            let inner: f64 = q
                .iter()
                .enumerate()
                .map(|(x, qx)| qx * self.ch.prob(x, y).powf(s))
                .sum();
            total += inner.powf(1.0 + rho);
            let w = (1.0 + rho) * inner.powf(rho);
            for (x, g) in grad.iter_mut().enumerate() {
                *g += w * self.ch.prob(x, y).powf(s);
            }
        }
        grad.iter_mut().for_each(|g| *g /= -total);
    }

    fn ex(&self, rho: f64, q: &[f64]) -> f64 {
        // ln sum q q' B^(1/rho) = ln1p(-sum q q' (1 - B^(1/rho))), exact for large rho
        let nx = q.len();
        let mut deficit = 0.0;
        for a in 0..nx {
            for b in 0..nx {
                let k = -(self.bhatt[a * nx + b].ln() / rho).exp_m1();
                deficit += q[a] * q[b] * k;
            }
        }
        -rho * (-deficit).ln_1p()
    }

    fn ex_grad(&self, rho: f64, q: &[f64], grad: &mut [f64]) {
        let nx = q.len();
        let mut total = 0.0;
        for (a, g) in grad.iter_mut().enumerate() {
            let row: f64 = self.bhatt[a * nx..(a + 1) * nx]
                .iter()
                .zip(q)
                .map(|(k, qb)| k.powf(1.0 / rho) * qb)
                .sum();
            total += q[a] * row;
            *g = 2.0 * row;
        }
        grad.iter_mut().for_each(|g| *g *= -rho / total);
    }

    fn max_e0(&self, rho: f64) -> (f64, Vec<f64>) {
        // -E0 is the log of a convex function of q: one start suffices
        maximize_on_simplex(
            self.ch.input_size(),
            1,
            |q| self.e0(rho, q),
            |q, g| self.e0_grad(rho, q, g),
        )
    }

    fn max_ex(&self, rho: f64) -> (f64, Vec<f64>) {
        maximize_on_simplex(
            self.ch.input_size(),
            SIMPLEX_STARTS,
            |q| self.ex(rho, q),
            |q, g| self.ex_grad(rho, q, g),
        )
    }

    /// `(value, argmax rho)` of `max_q E0(rho) - rho R` over `rho` in `[lo, hi]`.
    fn e0_line(&self, rate: f64, lo: f64, hi: f64, log_scale: bool) -> (f64, f64) {
        let (rho, v) = maximize_scalar(|rho| self.max_e0(rho).0 - rho * rate, lo, hi, log_scale);
        (v, rho)
    }

    fn random_coding(&self, rate: f64) -> (f64, f64) {
        self.e0_line(rate, 0.0, 1.0, false)
    }

    /// Sphere packing as the better of the `[0, 1]` and `[1, cap]` searches,
    /// so it can never fall below the random-coding value.
    fn sphere_packing(&self, rate: f64, rc: (f64, f64)) -> (f64, f64) {
        let high = self.e0_line(rate, 1.0, SPHERE_PACKING_RHO_CAP, true);
        if high.0 > rc.0 {
            high
        } else {
            rc
        }
    }

    fn expurgated(&self, rate: f64) -> f64 {
        let (_, v) = maximize_scalar(
            |rho| self.max_ex(rho).0 - rho * rate,
            1.0,
            EXPURGATED_RHO_CAP,
            true,
        );
        v.max(0.0)
    }
}

/// Euclidean projection onto the probability simplex.
fn project_to_simplex(v: &mut [f64]) {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (i, &u) in sorted.iter().enumerate() {
        cum += u;
        let t = (cum - 1.0) / (i + 1) as f64;
        if u - t > 0.0 {
            theta = t;
        }
    }
    v.iter_mut().for_each(|x| *x = (*x - theta).max(0.0));
}

/// Projected-gradient ascent with backtracking, best of a few fixed starts.
fn maximize_on_simplex<F, G>(n: usize, starts: usize, f: F, grad: G) -> (f64, Vec<f64>)
where
    F: Fn(&[f64]) -> f64,
    G: Fn(&[f64], &mut [f64]),
{
    let uniform = vec![1.0 / n as f64; n];
    let mut points = vec![uniform];
    for k in 1..starts {
        // tilt toward the first or last input
        let heavy = if k == 1 { 0 } else { n - 1 };
        let mut q = vec![0.4 / (n - 1).max(1) as f64; n];
        q[heavy] = 0.6;
        let s: f64 = q.iter().sum();
        q.iter_mut().for_each(|v| *v /= s);
        points.push(q);
    }

    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut g = vec![0.0; n];
    let mut cand = vec![0.0; n];
    for mut q in points {
        let mut val = f(&q);
        let mut step: f64 = 1.0;
        for _ in 0..SIMPLEX_MAX_ITERATIONS {
            grad(&q, &mut g);
            // only the component tangent to the simplex matters
            let mean = g.iter().sum::<f64>() / n as f64;
            g.iter_mut().for_each(|v| *v -= mean);
            let gmax = g.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
            if gmax <= 1e-15 {
                break;
            }
            step = step.min(1.0 / gmax);
            let mut accepted = None;
            while step > 1e-14 {
                for i in 0..n {
                    cand[i] = q[i] + step * g[i];
                }
                project_to_simplex(&mut cand);
                let total: f64 = cand.iter().sum();
                cand.iter_mut().for_each(|v| *v /= total);
                if cand == q {
                    break;
                }
                let cv = f(&cand);
                if cv > val {
                    accepted = Some(cv);
                    break;
                }
                step *= 0.5;
            }
            let Some(cv) = accepted else { break };
            let gain = cv - val;
            let moved: f64 = cand.iter().zip(&q).map(|(a, b)| (a - b).abs()).sum();
            q.copy_from_slice(&cand);
            val = cv;
            step *= 2.0;
            if gain <= SIMPLEX_TOLERANCE * 1e-3 && moved <= SIMPLEX_TOLERANCE {
                break;
            }
        }
        if best.as_ref().is_none_or(|(bv, _)| val > *bv) {
            best = Some((val, q));
        }
    }
    best.expect("at least one start")
}

/// Coarse scan then golden-section refinement around the best scan point.
/// Returns `(argmax, max)`.
fn maximize_scalar<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, log_scale: bool) -> (f64, f64) {
    let xs: Vec<f64> = (0..SCAN_POINTS)
        .map(|i| {
            let t = i as f64 / (SCAN_POINTS - 1) as f64;
            if i == SCAN_POINTS - 1 {
                hi
            } else if log_scale {
                lo * (hi / lo).powf(t)
            } else {
                lo + (hi - lo) * t
            }
        })
        .collect();
    let vals: Vec<f64> = xs.iter().map(|&x| f(x)).collect();
    let mut i_best = 0;
    for i in 1..vals.len() {
        if vals[i] > vals[i_best] {
            i_best = i;
        }
    }
    let mut a = xs[i_best.saturating_sub(1)];
    let mut b = xs[(i_best + 1).min(xs.len() - 1)];
    let mut best = (xs[i_best], vals[i_best]);

    let inv_phi = (5.0_f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..200 {
        if (b - a) <= 1e-12 * b.abs().max(1.0) {
            break;
        }
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    for (x, v) in [(c, fc), (d, fd)] {
        if v > best.1 {
            best = (x, v);
        }
    }
    best
}

/// Rate above which random coding and sphere packing coincide: the slope of
/// `max_q E0(rho, q)` at `rho = 1`.
pub fn critical_rate(ch: &Channel) -> f64 {
    let g = Gallager::new(ch);
    let (_, q) = g.max_e0(1.0);
    let h = 1e-5;
    (g.e0(1.0 + h, &q) - g.e0(1.0 - h, &q)) / (2.0 * h)
}

/// Evaluates every curve on `rate_grid`. Output order follows the grid.
pub fn classical_curves(
    ch: &Channel,
    consts: &ChannelConstants,
    rate_grid: &[f64],
) -> Result<CurveSet, BoundError> {
    let c = consts.capacity_nats;
    if c <= 0.0 {
        return Err(BoundError::ZeroCapacity);
    }
    if let Some(&bad) = rate_grid
        .iter()
        .find(|&&r| !(r >= 0.0 && r <= c + RATE_SLACK))
    {
        return Err(BoundError::RateOutOfRange {
            rate: bad,
            capacity: c,
        });
    }

    let g = Gallager::new(ch);
    let anchor = g.expurgated(0.0);
    let sp_at = |r: f64| g.sphere_packing(r, g.random_coding(r));

    // Tangent intercept `Esp(R) + R rho*(R)` decreases in R; find where it meets the anchor.
    let intercept = |r: f64| {
        let (v, rho) = sp_at(r);
        v + r * rho
    };
    let tangent_rate = if anchor >= sp_at(0.0).0 {
        0.0
    } else {
        let (mut lo, mut hi) = (0.0, c);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if intercept(mid) > anchor {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-13 {
                break;
            }
        }
        0.5 * (lo + hi)
    };
    let sp_tangent = sp_at(tangent_rate).0;

    let points = rate_grid
        .par_iter()
        .map(|&r| {
            let r_eff = r.min(c);
            let rc = g.random_coding(r_eff);
            let sp = g.sphere_packing(r_eff, rc);
            let ex = g.expurgated(r_eff);
            let sl = if tangent_rate > 0.0 && r_eff < tangent_rate {
                anchor + r_eff * (sp_tangent - anchor) / tangent_rate
            } else {
                sp.0
            };
            let e_burnashev = if consts.c1_is_finite() {
                Some(burnashev_exponent(consts, r_eff)?)
            } else {
                None
            };
            Ok(CurvePoint {
                rate_nats: r,
                e_burnashev,
                e_sphere_packing: sp.0,
                e_random_coding: rc.0,
                e_expurgated: ex,
                e_straight_line: sl,
                sp_capped: sp.1 >= SPHERE_PACKING_RHO_CAP * (1.0 - 1e-9),
            })
        })
        .collect::<Result<Vec<_>, BoundError>>()?;

    Ok(CurveSet {
        points,
        critical_rate: critical_rate(ch),
        zero_rate_expurgated: anchor,
        tangent_rate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dmc::{channel_constants, DEFAULT_BA_TOLERANCE};
    use approx::assert_abs_diff_eq;

    fn bsc(eps: f64) -> (Channel, ChannelConstants) {
        let ch = Channel::bsc(eps).unwrap();
        let k = channel_constants(&ch, DEFAULT_BA_TOLERANCE).unwrap();
        (ch, k)
    }

    #[test]
    fn simplex_projection() {
        let mut v = vec![0.5, 0.5];
        project_to_simplex(&mut v);
        assert_eq!(v, vec![0.5, 0.5]);
        let mut v = vec![2.0, 0.0, -1.0];
        project_to_simplex(&mut v);
        assert_eq!(v, vec![1.0, 0.0, 0.0]);
        let mut v = vec![0.3, 0.3, 0.3];
        project_to_simplex(&mut v);
        for x in v {
            assert_abs_diff_eq!(x, 1.0 / 3.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn bsc_zero_rate_values() {
        // BSC closed forms: E0(1) = ln 2 - 2 ln(sqrt(1-e) + sqrt(e)) = random coding at R = 0;
        // Eex(0) = -ln(2 sqrt(e(1-e))) / 2 in the rho -> infinity limit.
        let eps: f64 = 0.1;
        let (ch, k) = bsc(eps);
        let set = classical_curves(&ch, &k, &[0.0]).unwrap();
        let p = &set.points[0];
        let r0 = std::f64::consts::LN_2 - 2.0 * ((1.0 - eps).sqrt() + eps.sqrt()).ln();
        assert_abs_diff_eq!(p.e_random_coding, r0, epsilon = 1e-9);
        let ex_inf = -(2.0 * (eps * (1.0 - eps)).sqrt()).ln() / 2.0;
        // rho capped at 1e4 leaves an O(1/rho) gap
        assert!((p.e_expurgated - ex_inf).abs() < 1e-4);
        assert!(p.e_expurgated <= ex_inf);
        assert_abs_diff_eq!(p.e_burnashev.unwrap(), k.c1_nats, epsilon = 1e-15);
        assert!(p.e_straight_line <= p.e_sphere_packing);
        assert_abs_diff_eq!(p.e_straight_line, set.zero_rate_expurgated, epsilon = 1e-12);
    }

    #[test]
    fn curves_vanish_at_capacity() {
        let (ch, k) = bsc(0.1);
        let set = classical_curves(&ch, &k, &[k.capacity_nats]).unwrap();
        let p = &set.points[0];
        for v in [
            p.e_burnashev.unwrap(),
            p.e_sphere_packing,
            p.e_random_coding,
            p.e_expurgated,
            p.e_straight_line,
        ] {
            assert!(v.abs() <= 1e-12, "{p:?}");
        }
    }

    #[test]
    fn critical_rate_matches_bsc_closed_form() {
        // For the BSC, R_crit = ln 2 - h(g) with g = sqrt(e) / (sqrt(e) + sqrt(1-e)).
        let eps: f64 = 0.1;
        let (ch, _) = bsc(eps);
        let gam = eps.sqrt() / (eps.sqrt() + (1.0 - eps).sqrt());
        let expected = std::f64::consts::LN_2 - crate::exponents::binary_entropy(gam);
        assert_abs_diff_eq!(critical_rate(&ch), expected, epsilon = 1e-8);
    }

    #[test]
    fn sphere_packing_dominates_random_coding() {
        let (ch, k) = bsc(0.1);
        let grid = default_rate_grid(k.capacity_nats, 21);
        let set = classical_curves(&ch, &k, &grid).unwrap();
        for p in &set.points {
            assert!(p.e_sphere_packing >= p.e_random_coding);
            if p.rate_nats >= set.critical_rate {
                assert!((p.e_sphere_packing - p.e_random_coding).abs() <= 1e-6);
            }
            if p.rate_nats > 0.0 && p.rate_nats < k.capacity_nats {
                assert!(p.e_burnashev.unwrap() >= p.e_sphere_packing);
            }
        }
    }

    #[test]
    fn general_input_distribution_is_optimized() {
        // Asymmetric 3-input channel: random-coding value at R = 0 is E0(1) maximized
        // over q; compare with a brute-force simplex grid.
        let ch = Channel::new(&[
            vec![0.7, 0.2, 0.1],
            vec![0.1, 0.8, 0.1],
            vec![0.3, 0.3, 0.4],
        ])
        .unwrap();
        let g = Gallager::new(&ch);
        let (v, _) = g.max_e0(1.0);
        let mut brute: f64 = f64::NEG_INFINITY;
        let n = 300;
        for i in 0..=n {
            for j in 0..=(n - i) {
                let q = [
                    i as f64 / n as f64,
                    j as f64 / n as f64,
                    (n - i - j) as f64 / n as f64,
                ];
                brute = brute.max(g.e0(1.0, &q));
            }
        }
        assert!(v >= brute - 1e-9, "{v} vs {brute}");
        assert!(v <= brute + 1e-4);
    }

    #[test]
    fn csv_layout() {
        let (ch, k) = bsc(0.1);
        let grid = default_rate_grid(k.capacity_nats, 3);
        let csv = classical_curves(&ch, &k, &grid).unwrap().to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "rate_nats,e_burnashev,e_sp,e_rc,e_ex,e_sl");
        assert_eq!(lines.len(), 4);
        assert!(lines[1].starts_with("0.00000000e0,1.75777966e0,"));
    }

    #[test]
    fn rejects_rates_past_capacity() {
        let (ch, k) = bsc(0.1);
        assert!(matches!(
            classical_curves(&ch, &k, &[0.5]),
            Err(BoundError::RateOutOfRange { .. })
        ));
    }
}
