//! Selection and robustness scores plus the significance-test suite:
//! Newey-West, stationary bootstrap, White's Reality Check, SPA-lite and
//! Benjamini-Hochberg q-values.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::numeric::{mean, sample_std};
use crate::rng::{keys, stream};

pub use crate::metrics::MetricSet;

pub fn compute_metrics(pnl: &[f64], bench: &[f64], alpha_cvar: f64) -> Result<MetricSet> {
    if pnl.len() != bench.len() || pnl.is_empty() {
        return Err(Error::contract("metrics need aligned, non-empty series"));
    }
    Ok(MetricSet::compute(pnl, bench, alpha_cvar))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lambda_std: f64,
    pub lambda_min: f64,
}

impl Default for SelectionWeights {
    fn default() -> Self {
        SelectionWeights {
            lambda1: 1.0,
            lambda2: 1.0,
            lambda3: 10.0,
            lambda_std: 0.5,
            lambda_min: 0.25,
        }
    }
}

impl SelectionWeights {
    pub fn validate(&self) -> Result<()> {
        let l = [self.lambda1, self.lambda2, self.lambda3, self.lambda_std, self.lambda_min];
        if l.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::config("selection weights must be finite and >= 0"));
        }
        Ok(())
    }
}

/// `S = ExSharpe - λ1|min(0, CVaR)| - λ2|min(0, worst)| - λ3 V`.
pub fn selection_score(m: &MetricSet, violation: f64, w: &SelectionWeights) -> f64 {
    m.excess_sharpe - w.lambda1 * m.excess_cvar.min(0.0).abs() - w.lambda2 * m.excess_worst_day.min(0.0).abs()
        - w.lambda3 * violation
}

/// Sample std with n-1; zero for fewer than two points.
pub fn window_std(x: &[f64]) -> f64 {
    if x.len() < 2 {
        0.0
    } else {
        sample_std(x)
    }
}

/// `R = mean - λ_std std - λ_min |min(0, min)|`.
pub fn robust_score(window_sharpes: &[f64], w: &SelectionWeights) -> f64 {
    if window_sharpes.is_empty() {
        return 0.0;
    }
    let worst = window_sharpes.iter().copied().fold(f64::INFINITY, f64::min);
    mean(window_sharpes) - w.lambda_std * window_std(window_sharpes) - w.lambda_min * worst.min(0.0).abs()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    NeweyWest,
    StationaryBootstrap,
    #[serde(rename = "WRC")]
    Wrc,
    #[serde(rename = "SPA-lite")]
    SpaLite,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub method: Method,
    pub statistic: f64,
    pub p_value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_bootstrap: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lag: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_block: Option<f64>,
}

/// `⌊4 (T/100)^{2/9}⌋`.
pub fn default_nw_lag(t: usize) -> usize {
    (4.0 * (t as f64 / 100.0).powf(2.0 / 9.0)).floor() as usize
}

fn normal_upper_tail(z: f64) -> f64 {
    if z.is_nan() {
        return 0.5;
    }
    (1.0 - Normal::standard().cdf(z)).clamp(0.0, 1.0)
}

/// Bartlett-weighted long-run variance of `d`, with a `T/(T-1)` small-sample
/// factor so that lag 0 gives the ordinary sample variance.
pub fn hac_variance(d: &[f64], lag: usize) -> f64 {
    let t = d.len();
    let m = mean(d);
    let gamma = |l: usize| -> f64 { (l..t).map(|i| (d[i] - m) * (d[i - l] - m)).sum::<f64>() / t as f64 };
    let mut v = gamma(0);
    for l in 1..=lag.min(t.saturating_sub(1)) {
        v += 2.0 * (1.0 - l as f64 / (lag + 1) as f64) * gamma(l);
    }
    v * t as f64 / (t as f64 - 1.0)
}

/// One-sided HAC t-test of `mean(d) > 0`.
pub fn newey_west_test(d: &[f64], lag: usize) -> Result<TestResult> {
    if d.len() < lag + 3 {
        return Err(Error::contract(format!("Newey-West needs more than {} observations", lag + 2)));
    }
    let t = d.len() as f64;
    let m = mean(d);
    let v = hac_variance(d, lag);
    let statistic = if m == 0.0 {
        0.0
    } else if v <= 0.0 {
        m.signum() * f64::INFINITY
    } else {
        m / (v / t).sqrt()
    };
    Ok(TestResult {
        method: Method::NeweyWest,
        statistic,
        p_value: normal_upper_tail(statistic),
        n_bootstrap: None,
        lag: Some(lag),
        mean_block: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapConfig {
    pub n_boot: usize,
    pub mean_block: f64,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            n_boot: 2000,
            mean_block: 10.0,
            seed: 0,
        }
    }
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_boot == 0 || !(self.mean_block >= 1.0) {
            return Err(Error::config("bootstrap needs n_boot >= 1 and mean_block >= 1"));
        }
        Ok(())
    }
}

/// One stationary-bootstrap index stream of length `n`: blocks restart with
/// probability `1/mean_block` and wrap around the end of the sample.
pub fn stationary_indices<R: Rng>(n: usize, mean_block: f64, rng: &mut R) -> Vec<usize> {
    let p = 1.0 / mean_block;
    let mut out = Vec::with_capacity(n);
    if n == 0 {
        return out;
    }
    let mut i = rng.random_range(0..n);
    out.push(i);
    while out.len() < n {
        i = if rng.random::<f64>() < p { rng.random_range(0..n) } else { (i + 1) % n };
        out.push(i);
    }
    out
}

/// Index streams for every replicate; replicate `b` uses its own seeded stream.
pub fn stationary_bootstrap(n: usize, cfg: &BootstrapConfig) -> Vec<Vec<usize>> {
    (0..cfg.n_boot)
        .into_par_iter()
        .map(|b| stationary_indices(n, cfg.mean_block, &mut stream(cfg.seed, keys::BOOTSTRAP + b as u64)))
        .collect()
}

fn resampled_mean(x: &[f64], idx: &[usize]) -> f64 {
    idx.iter().map(|&i| x[i]).sum::<f64>() / idx.len() as f64
}

fn boot_p(stats: &[f64], observed: f64) -> f64 {
    stats.iter().filter(|s| **s >= observed).count() as f64 / stats.len() as f64
}

/// Bootstrap p-value for `mean(d) > 0` with recentered replicate means.
pub fn bootstrap_mean_test(d: &[f64], cfg: &BootstrapConfig) -> Result<TestResult> {
    cfg.validate()?;
    if d.is_empty() {
        return Err(Error::contract("bootstrap needs a non-empty series"));
    }
    let m = mean(d);
    let stats: Vec<f64> = stationary_bootstrap(d.len(), cfg)
        .par_iter()
        .map(|idx| resampled_mean(d, idx) - m)
        .collect();
    Ok(TestResult {
        method: Method::StationaryBootstrap,
        statistic: m,
        p_value: boot_p(&stats, m),
        n_bootstrap: Some(cfg.n_boot),
        lag: None,
        mean_block: Some(cfg.mean_block),
    })
}

fn check_models(diffs: &[Vec<f64>]) -> Result<usize> {
    let t = diffs.first().map_or(0, Vec::len);
    if diffs.is_empty() || t == 0 || diffs.iter().any(|d| d.len() != t) {
        return Err(Error::contract("model difference series must be non-empty and aligned"));
    }
    Ok(t)
}

/// White's Reality Check on model-major differences `diffs[j][t]`.
pub fn wrc_test(diffs: &[Vec<f64>], cfg: &BootstrapConfig) -> Result<TestResult> {
    cfg.validate()?;
    let t = check_models(diffs)?;
    let rt = (t as f64).sqrt();
    let means: Vec<f64> = diffs.iter().map(|d| mean(d)).collect();
    let observed = rt * means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let stats: Vec<f64> = stationary_bootstrap(t, cfg)
        .par_iter()
        .map(|idx| {
            diffs
                .iter()
                .zip(&means)
                .map(|(d, m)| rt * (resampled_mean(d, idx) - m))
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    Ok(TestResult {
        method: Method::Wrc,
        statistic: observed,
        p_value: boot_p(&stats, observed),
        n_bootstrap: Some(cfg.n_boot),
        lag: None,
        mean_block: Some(cfg.mean_block),
    })
}

/// Studentized max statistic `max_j max(0, √T d̄_j / σ̂_j)`; zero-variance
/// models are left out.
pub fn spa_lite_test(diffs: &[Vec<f64>], cfg: &BootstrapConfig) -> Result<TestResult> {
    cfg.validate()?;
    let t = check_models(diffs)?;
    let rt = (t as f64).sqrt();
    let kept: Vec<(&Vec<f64>, f64, f64)> = diffs
        .iter()
        .filter_map(|d| {
            let sd = if t < 2 { 0.0 } else { sample_std(d) };
            (sd > crate::metrics::STD_EPS).then(|| (d, mean(d), sd))
        })
        .collect();
    if kept.is_empty() {
        return Err(Error::contract("SPA-lite: every model has zero variance"));
    }
    let observed = kept
        .iter()
        .map(|(_, m, sd)| (rt * m / sd).max(0.0))
        .fold(0.0f64, f64::max);
    let stats: Vec<f64> = stationary_bootstrap(t, cfg)
        .par_iter()
        .map(|idx| {
            kept.iter()
                .map(|(d, m, sd)| (rt * (resampled_mean(d, idx) - m) / sd).max(0.0))
                .fold(0.0f64, f64::max)
        })
        .collect();
    Ok(TestResult {
        method: Method::SpaLite,
        statistic: observed,
        p_value: boot_p(&stats, observed),
        n_bootstrap: Some(cfg.n_boot),
        lag: None,
        mean_block: Some(cfg.mean_block),
    })
}

/// Benjamini-Hochberg step-up q-values in the input order.
pub fn fdr_adjust(p: &[f64]) -> Vec<f64> {
    let m = p.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p[a].total_cmp(&p[b]).then(a.cmp(&b)));
    let mut q = vec![0.0; m];
    let mut running = 1.0f64;
    for rank in (0..m).rev() {
        let i = order[rank];
        running = running.min(p[i] * m as f64 / (rank + 1) as f64);
        q[i] = running.min(1.0);
    }
    q
}
