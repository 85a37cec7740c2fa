//! Interference covariances, per-user and sum rates, and empirical CDFs.

use crate::error::{Error, Result};
use crate::numerics::{hermitian_part, hermitian_solve, identity, logdet2_hpd, CMat};

/// `Ψ_k = Σ_{k' != k} E_k V_k' V_k'^H E_k^H + N0 I`.
pub fn interference_cov(e_k: &CMat, v: &[CMat], k: usize, noise: f64) -> CMat {
    let m = e_k.nrows();
    let mut psi = identity(m).scale(noise);
    for (j, vj) in v.iter().enumerate() {
        if j != k {
            let ev = e_k * vj;
            psi += &ev * ev.adjoint();
        }
    }
    hermitian_part(&psi)
}

/// `Γ_k = V_k^H E_k^H Ψ_k^{-1} E_k V_k`.
pub fn whitened_cov(e_k: &CMat, v_k: &CMat, psi_k: &CMat) -> Result<CMat> {
    let ev = e_k * v_k;
    let x = hermitian_solve(psi_k, &ev)?;
    Ok(hermitian_part(&(ev.adjoint() * x)))
}

/// `log2 |I + Γ|` in bits/s/Hz.
pub fn user_rate(gamma: &CMat) -> Result<f64> {
    let r = logdet2_hpd(&(identity(gamma.nrows()) + gamma))?;
    Ok(r.max(0.0))
}

/// Per-user rates for equivalent channels `e` and beamformers `v`.
pub fn user_rates(e: &[CMat], v: &[CMat], noise: f64) -> Result<Vec<f64>> {
    e.iter()
        .enumerate()
        .map(|(k, e_k)| {
            let psi = interference_cov(e_k, v, k, noise);
            user_rate(&whitened_cov(e_k, &v[k], &psi)?)
        })
        .collect()
}

pub fn sum_rate(e: &[CMat], v: &[CMat], noise: f64) -> Result<f64> {
    Ok(user_rates(e, v, noise)?.iter().sum())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateReport {
    pub per_user_rate: Vec<f64>,
    pub sum_rate: f64,
    /// Linear watts transmitted by each AP.
    pub per_ap_power: Vec<f64>,
}

impl RateReport {
    pub fn new(per_user_rate: Vec<f64>, per_ap_power: Vec<f64>) -> Self {
        let sum_rate = per_user_rate.iter().sum();
        Self {
            per_user_rate,
            sum_rate,
            per_ap_power,
        }
    }
}

/// Empirical CDF `(value, i/n)` with values sorted ascending.
pub fn cdf_points(samples: &[f64]) -> Result<Vec<(f64, f64)>> {
    if samples.is_empty() {
        return Err(Error::Validation("CDF of an empty sample".into()));
    }
    if samples.iter().any(|x| x.is_nan()) {
        return Err(Error::Validation("CDF sample contains NaN".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    Ok(sorted
        .into_iter()
        .enumerate()
        .map(|(i, x)| (x, (i + 1) as f64 / n))
        .collect())
}

/// Sample mean and (n-1) standard deviation; std is 0 for a single sample.
pub fn mean_std(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    if samples.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = samples.iter().sum::<f64>() / n;
    if samples.len() < 2 {
        return (mean, 0.0);
    }
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
