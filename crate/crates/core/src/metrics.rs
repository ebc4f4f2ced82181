//! Daily return metrics. Annualization uses 252 trading days.

use serde::{Deserialize, Serialize};

use crate::numeric::{mean, sample_cov, sample_std};

pub const TRADING_DAYS: f64 = 252.0;

/// Dispersion below this is rounding noise, not risk.
pub const STD_EPS: f64 = 1e-12;

/// Annualized Sharpe ratio; zero when the series has no dispersion.
pub fn sharpe(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let sd = sample_std(x);
    if sd <= STD_EPS || !sd.is_finite() {
        return 0.0;
    }
    mean(x) / sd * TRADING_DAYS.sqrt()
}

/// Mean of the worst `max(1, ceil(alpha * n))` observations.
pub fn cvar(x: &[f64], alpha: f64) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    let k = ((alpha * x.len() as f64).ceil() as usize).clamp(1, x.len());
    mean(&v[..k])
}

/// Annualized sample std of the negative observations.
pub fn downside_dev(x: &[f64]) -> f64 {
    let neg: Vec<f64> = x.iter().copied().filter(|&v| v < 0.0).collect();
    if neg.len() < 2 {
        return 0.0;
    }
    sample_std(&neg) * TRADING_DAYS.sqrt()
}

/// Daily (not annualized) downside deviation.
pub fn downside_dev_daily(x: &[f64]) -> f64 {
    downside_dev(x) / TRADING_DAYS.sqrt()
}

/// Most negative peak-to-trough move of the equity curve starting at 1.
pub fn max_drawdown(x: &[f64]) -> f64 {
    let mut eq = 1.0;
    let mut peak = 1.0f64;
    let mut mdd = 0.0f64;
    for r in x {
        eq *= 1.0 + r;
        peak = peak.max(eq);
        mdd = mdd.min(eq / peak - 1.0);
    }
    mdd
}

pub fn cum_return(x: &[f64]) -> f64 {
    x.iter().fold(1.0, |acc, r| acc * (1.0 + r)) - 1.0
}

pub fn ann_return(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    let g = 1.0 + cum_return(x);
    if g <= 0.0 {
        return -1.0;
    }
    g.powf(TRADING_DAYS / x.len() as f64) - 1.0
}

/// `Cov(x, y) / Var(y)`, zero when y is constant.
pub fn beta(x: &[f64], y: &[f64]) -> f64 {
    let var = sample_cov(y, y);
    if var <= 0.0 || !var.is_finite() {
        return 0.0;
    }
    sample_cov(x, y) / var
}

pub fn excess(x: &[f64], b: &[f64]) -> Vec<f64> {
    x.iter().zip(b).map(|(x, b)| x - b).collect()
}

/// Share of days where the held position's sign matches the next return's sign.
pub fn hit_ratio(positions_prev: &[f64], returns: &[f64]) -> f64 {
    let mut hits = 0usize;
    let mut n = 0usize;
    for (p, r) in positions_prev.iter().zip(returns) {
        if *p == 0.0 || *r == 0.0 {
            continue;
        }
        n += 1;
        if p.signum() == r.signum() {
            hits += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        hits as f64 / n as f64
    }
}

/// `Π(1 + π_t) / Π(1 + b_t) - 1`.
pub fn excess_cum_return(x: &[f64], b: &[f64]) -> f64 {
    (1.0 + cum_return(x)) / (1.0 + cum_return(b)) - 1.0
}

/// Strategy metrics against a benchmark over one slice.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub excess_sharpe: f64,
    pub excess_cum_return: f64,
    pub mean_excess_1d: f64,
    pub excess_cvar: f64,
    pub excess_worst_day: f64,
    pub beta: f64,
    pub max_drawdown: f64,
    pub down_dev: f64,
    pub annualized_return: f64,
    pub sharpe: f64,
    pub cum_return: f64,
}

impl MetricSet {
    pub fn compute(pnl: &[f64], bench: &[f64], alpha: f64) -> Self {
        let ex = excess(pnl, bench);
        if ex.is_empty() {
            return MetricSet::default();
        }
        MetricSet {
            excess_sharpe: sharpe(&ex),
            excess_cum_return: excess_cum_return(pnl, bench),
            mean_excess_1d: mean(&ex),
            excess_cvar: cvar(&ex, alpha),
            excess_worst_day: ex.iter().copied().fold(f64::INFINITY, f64::min),
            beta: beta(pnl, bench),
            max_drawdown: max_drawdown(pnl),
            down_dev: downside_dev(pnl),
            annualized_return: ann_return(pnl),
            sharpe: sharpe(pnl),
            cum_return: cum_return(pnl),
        }
    }
}
