//! Binding utilization thresholds for the piecewise-linear intensity
//! constraint.
//!
//! For `m` servers, `b` queued customers and reliability `η`, the threshold is
//! the root of
//!
//! ```text
//! Σ_{k=0}^{m-1} (m-k) m! m^b / k! · ρ^-(m+b+1-k) = 1 / (1 - η)
//! ```
//!
//! The left side is strictly decreasing in ρ and equals 1 at ρ = m, so the
//! root lies in `(0, m)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

const BRACKET_LOW: f64 = 1e-12;
const TOLERANCE: f64 = 1e-12;
const MAX_ITERATIONS: usize = 500;
/// Above this `m + b` the sum is evaluated in the log domain.
const DIRECT_LIMIT: usize = 20;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QueueError {
    #[error("reliability threshold must lie in (0, 1), got {0}")]
    Eta(f64),
    #[error("server count must be at least 1")]
    Servers,
    #[error("bisection did not converge for m={m}, b={b}, eta={eta}")]
    NonConvergence { m: usize, b: usize, eta: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueueParams {
    pub eta: f64,
    pub queue_len: usize,
    pub max_servers: usize,
}

impl QueueParams {
    pub fn new(eta: f64, queue_len: usize, max_servers: usize) -> Result<Self, QueueError> {
        let p = Self {
            eta,
            queue_len,
            max_servers,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), QueueError> {
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(QueueError::Eta(self.eta));
        }
        if self.max_servers == 0 {
            return Err(QueueError::Servers);
        }
        Ok(())
    }
}

fn ln_factorial(n: usize) -> f64 {
    (2..=n).map(|i| (i as f64).ln()).sum()
}

/// Natural log of the left-hand side at `rho`.
pub fn ln_intensity_lhs(rho: f64, m: usize, b: usize) -> f64 {
    let ln_rho = rho.ln();
    if m + b <= DIRECT_LIMIT {
        let m_fact: f64 = (1..=m).map(|i| i as f64).product();
        let m_pow_b = (m as f64).powi(b as i32);
        let mut k_fact = 1.0;
        let mut sum = 0.0;
        for k in 0..m {
            if k > 0 {
                k_fact *= k as f64;
            }
            let exponent = (m + b + 1 - k) as f64;
            sum += (m - k) as f64 * m_fact * m_pow_b / k_fact * (-exponent * ln_rho).exp();
        }
        sum.ln()
    } else {
        let base = ln_factorial(m) + b as f64 * (m as f64).ln();
        let terms: Vec<f64> = (0..m)
            .map(|k| {
                ((m - k) as f64).ln() + base - ln_factorial(k) - (m + b + 1 - k) as f64 * ln_rho
            })
            .collect();
        let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
    }
}

/// Largest ρ satisfying the intensity inequality with `m` servers.
pub fn solve_rho(m: usize, b: usize, eta: f64) -> Result<f64, QueueError> {
    if m == 0 {
        return Err(QueueError::Servers);
    }
    if !(eta > 0.0 && eta < 1.0) {
        return Err(QueueError::Eta(eta));
    }
    let target = -(1.0 - eta).ln();
    let (mut lo, mut hi) = (BRACKET_LOW, m as f64);
    // lhs(lo) must exceed the target and lhs(hi) must not.
    if ln_intensity_lhs(lo, m, b) <= target || ln_intensity_lhs(hi, m, b) > target {
        return Err(QueueError::NonConvergence { m, b, eta });
    }
    for _ in 0..MAX_ITERATIONS {
        let mid = 0.5 * (lo + hi);
        if ln_intensity_lhs(mid, m, b) > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= TOLERANCE {
            return Ok(0.5 * (lo + hi));
        }
    }
    Err(QueueError::NonConvergence { m, b, eta })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RhoTable {
    pub params: QueueParams,
    /// `rho[m - 1]` is the threshold for `m` servers.
    pub rho: Vec<f64>,
}

impl RhoTable {
    /// Threshold for `m` servers; zero servers carry no capacity.
    pub fn rho(&self, m: usize) -> f64 {
        if m == 0 {
            0.0
        } else {
            self.rho[m.min(self.rho.len()) - 1]
        }
    }

    /// Arrival rate `m` servers can absorb at service rate `mu`.
    pub fn capacity(&self, m: usize, mu: f64) -> f64 {
        mu * self.rho(m)
    }

    /// Increment the `m`-th server adds: ρ_1 for m = 1, ρ_m − ρ_{m−1} after.
    pub fn increment(&self, m: usize) -> f64 {
        self.rho(m) - self.rho(m - 1)
    }

    pub fn max_servers(&self) -> usize {
        self.params.max_servers
    }
}

pub fn build_rho_table(params: QueueParams) -> Result<RhoTable, QueueError> {
    params.validate()?;
    let rho = (1..=params.max_servers)
        .map(|m| solve_rho(m, params.queue_len, params.eta))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(RhoTable { params, rho })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Direct evaluation of the sum without any shared helper.
    fn lhs_oracle(rho: f64, m: usize, b: usize) -> f64 {
        let fact = |n: usize| (1..=n).fold(1.0, |a, i| a * i as f64);
        (0..m)
            .map(|k| {
                (m - k) as f64 * fact(m) * (m as f64).powi(b as i32)
                    / fact(k)
                    / rho.powi((m + b + 1 - k) as i32)
            })
            .sum()
    }

    /// Plain bisection on the untransformed sum.
    fn rho_oracle(m: usize, b: usize, eta: f64) -> f64 {
        let target = 1.0 / (1.0 - eta);
        let (mut lo, mut hi) = (1e-9, m as f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if lhs_oracle(mid, m, b) > target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }

    #[test]
    fn single_server_cases() {
        assert!((solve_rho(1, 0, 0.95).unwrap() - 0.2236).abs() < 1e-4);
        let r = solve_rho(1, 2, 0.5).unwrap();
        assert!((r - 0.5f64.powf(0.25)).abs() < 1e-9);
        assert!((r - 0.840_90).abs() < 1e-5);
    }

    #[test]
    fn two_servers_match_oracle() {
        let r = solve_rho(2, 0, 0.95).unwrap();
        assert!((r - 0.6416).abs() < 1e-4);
        assert!((r - rho_oracle(2, 0, 0.95)).abs() < 1e-9);
    }

    #[test]
    fn reference_threshold_values() {
        let t = build_rho_table(QueueParams::new(0.95, 0, 4).unwrap()).unwrap();
        for (got, want) in t.rho.iter().zip([0.2236, 0.6416, 1.1576, 1.7345]) {
            assert!((got - want).abs() < 1e-3, "{got} vs {want}");
        }
    }

    #[test]
    fn frozen_values_eta_085_b2() {
        // Computed with 40-digit bisection.
        let t = build_rho_table(QueueParams::new(0.85, 2, 4).unwrap()).unwrap();
        let want = [0.622_332_977, 1.318_316_905, 2.051_675_545, 2.810_146_838];
        for (got, want) in t.rho.iter().zip(want) {
            assert!((got - want).abs() < 1e-8);
        }
    }

    #[test]
    fn log_domain_path_agrees() {
        // m + b > 20 goes through the log-sum-exp branch.
        let r = solve_rho(12, 10, 0.9).unwrap();
        let target = 1.0 / (1.0 - 0.9);
        let rel = (lhs_oracle(r, 12, 10) - target).abs() / target;
        assert!(rel < 1e-6);
        assert!(r > 0.0 && r < 12.0);
        // Continuity across the switch.
        let direct = ln_intensity_lhs(3.0, 10, 10);
        assert!((direct - lhs_oracle(3.0, 10, 10).ln()).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_params() {
        assert_eq!(solve_rho(0, 0, 0.5), Err(QueueError::Servers));
        assert_eq!(solve_rho(1, 0, 1.0), Err(QueueError::Eta(1.0)));
        assert!(QueueParams::new(0.0, 0, 1).is_err());
        assert!(QueueParams::new(0.5, 0, 0).is_err());
    }

    #[test]
    fn single_entry_table() {
        let t = build_rho_table(QueueParams::new(0.8, 3, 1).unwrap()).unwrap();
        assert_eq!(t.rho.len(), 1);
        assert!((t.rho[0] - 0.2f64.powf(0.2)).abs() < 1e-9);
        assert_eq!(t.rho(0), 0.0);
        assert!((t.capacity(1, 10.0) - 10.0 * t.rho[0]).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn monotone_and_residual(m in 1usize..8, b in 0usize..6, eta in 0.05f64..0.95) {
            let r = solve_rho(m, b, eta).unwrap();
            prop_assert!(r > 0.0 && r < m as f64);
            let target = 1.0 / (1.0 - eta);
            prop_assert!((lhs_oracle(r, m, b) - target).abs() / target < 1e-6);
            prop_assert!(solve_rho(m + 1, b, eta).unwrap() > r);
            prop_assert!(solve_rho(m, b + 1, eta).unwrap() > r);
            prop_assert!(solve_rho(m, b, (eta + 0.04).min(0.99)).unwrap() < r);
            if m == 1 {
                prop_assert!((r - (1.0 - eta).powf(1.0 / (b as f64 + 2.0))).abs() < 1e-9);
            }
        }
    }
}
