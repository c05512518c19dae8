//! Gaussian-mechanism calibration for central and distributed noise.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Multiplicative slack that turns the mechanism's strict inequality into an equality.
pub const SIGMA_SAFETY_MARGIN: f64 = 1e-6;

/// An `(epsilon, delta)` pair. `epsilon = inf` is accepted and means "no noise".
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrivacyBudget {
    epsilon: f64,
    delta: f64,
}

impl PrivacyBudget {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        if epsilon.is_nan() || epsilon <= 0.0 || !(delta > 0.0 && delta < 1.0) {
            return Err(Error::InvalidBudget { epsilon, delta });
        }
        Ok(Self { epsilon, delta })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Basic composition: splits into parts proportional to `weights`.
    ///
    /// Weights must be positive and sum to one.
    pub fn split(&self, weights: &[f64]) -> Result<Vec<PrivacyBudget>> {
        let total: f64 = weights.iter().sum();
        if weights.is_empty() || weights.iter().any(|w| !(*w > 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "budget weights {weights:?} must be positive and sum to 1"
            )));
        }
        let mut parts = Vec::with_capacity(weights.len());
        let (mut eps_used, mut delta_used) = (0.0, 0.0);
        for (i, w) in weights.iter().enumerate() {
            // last part takes the remainder so the parts add back exactly
            let (eps, delta) = if i + 1 == weights.len() {
                (self.epsilon - eps_used, self.delta - delta_used)
            } else {
                (self.epsilon * w, self.delta * w)
            };
            let eps = if self.epsilon.is_infinite() {
                f64::INFINITY
            } else {
                eps
            };
            eps_used += eps;
            delta_used += delta;
            parts.push(PrivacyBudget::new(eps, delta)?);
        }
        Ok(parts)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuerySensitivity {
    pub l2: f64,
    pub dimension: usize,
}

impl QuerySensitivity {
    pub fn new(l2: f64, dimension: usize) -> Result<Self> {
        if !(l2 >= 0.0) || !l2.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "sensitivity {l2} must be finite and >= 0"
            )));
        }
        Ok(Self { l2, dimension })
    }
}

/// Per-client noise level that reproduces central-mechanism privacy with up to
/// `collusion_tolerance` colluding or dropped clients.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoisePlan {
    pub sigma_std: f64,
    pub sigma_client: f64,
    pub n_clients: usize,
    pub collusion_tolerance: usize,
}

impl NoisePlan {
    /// `N / (N - T - 1)`: total distributed variance over the central variance.
    pub fn variance_factor(&self) -> f64 {
        scaling_factor(self.n_clients, self.collusion_tolerance)
    }

    /// Variance left after removing the noise of `removed` clients.
    pub fn residual_variance(&self, removed: usize) -> f64 {
        self.n_clients.saturating_sub(removed) as f64 * self.sigma_client.powi(2)
    }
}

/// Extra variance factor `N / (N - T - 1)` of the distributed setting.
pub fn scaling_factor(n_clients: usize, collusion_tolerance: usize) -> f64 {
    n_clients as f64 / (n_clients as f64 - collusion_tolerance as f64 - 1.0)
}

/// Central Gaussian-mechanism standard deviation for the given sensitivity and budget.
pub fn gaussian_sigma(sensitivity: QuerySensitivity, budget: PrivacyBudget) -> Result<f64> {
    let PrivacyBudget { epsilon, delta } = budget;
    if epsilon.is_nan() || epsilon <= 0.0 || !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidBudget { epsilon, delta });
    }
    let ratio = sensitivity.l2 / epsilon;
    let variance = 2.0 * (1.25 / delta).ln() * ratio * ratio * (1.0 + SIGMA_SAFETY_MARGIN);
    Ok(variance.sqrt())
}

/// Splits a central noise level across `n_clients`, tolerating `collusion_tolerance`
/// colluders or dropouts.
pub fn distributed_sigma(
    sigma_std: f64,
    n_clients: usize,
    collusion_tolerance: usize,
) -> Result<NoisePlan> {
    if n_clients <= collusion_tolerance + 1 {
        return Err(Error::InsufficientClients {
            n_clients,
            collusion_tolerance,
        });
    }
    if !(sigma_std >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "sigma {sigma_std} must be >= 0"
        )));
    }
    let honest = (n_clients - collusion_tolerance - 1) as f64;
    let target = sigma_std * sigma_std;
    let mut sigma_client = (target / honest).sqrt();
    // Round upward until the inequality holds in floating point too.
    while honest * (sigma_client * sigma_client) < target {
        sigma_client = sigma_client.next_up();
    }
    Ok(NoisePlan {
        sigma_std,
        sigma_client,
        n_clients,
        collusion_tolerance,
    })
}

/// Number of unique terms in the regression sufficient statistics.
pub fn blr_stat_dimension(d: usize) -> usize {
    d * (d + 1) / 2 + d
}

/// Sensitivity of the regression sufficient statistics with a common feature bound `c_x`
/// and target bound `c_y`: `d(2d-1)c_x^4 + 4d(c_x c_y)^2`.
pub fn blr_sensitivity(c_x: f64, c_y: f64, d: usize) -> Result<QuerySensitivity> {
    if !(c_x > 0.0 && c_y > 0.0) || d == 0 {
        return Err(Error::InvalidParameter(format!(
            "bounds must be positive and d >= 1 (c_x={c_x}, c_y={c_y}, d={d})"
        )));
    }
    let d_f = d as f64;
    let sq = d_f * (2.0 * d_f - 1.0) * c_x.powi(4) + 4.0 * d_f * (c_x * c_y).powi(2);
    QuerySensitivity::new(sq.sqrt(), blr_stat_dimension(d))
}

/// Same bound with one threshold per dimension; `bounds` holds `d` feature bounds
/// followed by the target bound.
pub fn blr_sensitivity_per_dim(bounds: &[f64]) -> Result<QuerySensitivity> {
    if bounds.len() < 2 || bounds.iter().any(|c| !(*c > 0.0)) {
        return Err(Error::InvalidParameter(format!(
            "need d+1 >= 2 positive bounds, got {bounds:?}"
        )));
    }
    let (features, target) = bounds.split_at(bounds.len() - 1);
    let c_y = target[0];
    let mut sq = 0.0;
    for (j, &cj) in features.iter().enumerate() {
        sq += cj.powi(4);
        for &ck in &features[j + 1..] {
            sq += (2.0 * cj * ck).powi(2);
        }
        sq += (2.0 * cj * c_y).powi(2);
    }
    QuerySensitivity::new(sq.sqrt(), blr_stat_dimension(features.len()))
}

pub fn sample_gaussian_noise<R: Rng + ?Sized>(
    sigma: f64,
    dimension: usize,
    rng: &mut R,
) -> Vec<f64> {
    if sigma == 0.0 {
        return vec![0.0; dimension];
    }
    (0..dimension)
        .map(|_| sigma * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Chebyshev bound on `P(||x||_1 >= t)` for `x ~ N(0, sigma^2 I_d)`.
pub fn l1_tail_bound(d: usize, sigma: f64, t: f64) -> Result<f64> {
    let d = d as f64;
    let mean = (2.0 / std::f64::consts::PI).sqrt() * d * sigma;
    if !(t > mean) {
        return Err(Error::InvalidThreshold { t, mean });
    }
    Ok(d * sigma * sigma * (1.0 - 2.0 / std::f64::consts::PI) / (t - mean).powi(2))
}
