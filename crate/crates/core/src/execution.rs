//! Signal-to-position scheduling, overlays and the daily PnL model.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{cvar, downside_dev_daily, MetricSet};
use crate::numeric::{mean, sample_std};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TailDelever {
    pub drawdown_trigger: f64,
    pub scale_factor: f64,
}

impl Default for TailDelever {
    fn default() -> Self {
        TailDelever {
            drawdown_trigger: -0.10,
            scale_factor: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExecutionConfig {
    pub tc_bps: f64,
    pub lambda_risk: f64,
    pub lambda_imp: f64,
    pub lambda_cap: f64,
    pub rebalance_days: usize,
    pub smoothing_alpha: f64,
    /// Annualized volatility target; `None` disables the overlay.
    pub vol_target: Option<f64>,
    pub tail_delever: Option<TailDelever>,
    /// Window of the trailing market volatility used for `sigma_t`.
    pub sigma_window: usize,
}

impl Default for ExecutionConfig {
    fn default() -> Self {
        ExecutionConfig {
            tc_bps: 3.0,
            lambda_risk: 0.01,
            lambda_imp: 0.0002,
            lambda_cap: 0.0001,
            rebalance_days: 14,
            smoothing_alpha: 1.0,
            vol_target: None,
            tail_delever: None,
            sigma_window: 20,
        }
    }
}

impl ExecutionConfig {
    /// Friction-free, daily-rebalanced configuration.
    pub fn frictionless() -> Self {
        ExecutionConfig {
            tc_bps: 0.0,
            lambda_risk: 0.0,
            lambda_imp: 0.0,
            lambda_cap: 0.0,
            rebalance_days: 1,
            ..Default::default()
        }
    }

    pub fn c_tc(&self) -> f64 {
        self.tc_bps / 10_000.0
    }

    pub fn validate(&self) -> Result<()> {
        let w = [self.tc_bps, self.lambda_risk, self.lambda_imp, self.lambda_cap];
        if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::config("execution penalty weights must be finite and >= 0"));
        }
        if self.rebalance_days == 0 {
            return Err(Error::config("rebalance_days must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.smoothing_alpha) {
            return Err(Error::config("smoothing_alpha must lie in [0, 1]"));
        }
        if self.sigma_window < 2 {
            return Err(Error::config("sigma_window must be >= 2"));
        }
        if let Some(v) = self.vol_target {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config("vol_target must be positive"));
            }
        }
        if let Some(td) = self.tail_delever {
            if !(td.drawdown_trigger <= 0.0 && td.scale_factor >= 0.0) {
                return Err(Error::config("tail_delever needs trigger <= 0 and scale >= 0"));
            }
        }
        Ok(())
    }

    /// Cost, impact and capacity weights scaled by a scenario.
    pub fn stressed(&self, sc: &StressScenario) -> Self {
        ExecutionConfig {
            tc_bps: self.tc_bps * sc.tc_mult,
            lambda_imp: self.lambda_imp * sc.impact_mult,
            lambda_cap: self.lambda_cap * sc.capacity_mult,
            ..self.clone()
        }
    }
}

/// Executed positions, their turnover and the resulting daily returns.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PnLPath {
    pub pnl: Vec<f64>,
    pub positions: Vec<f64>,
    pub turnover: Vec<f64>,
}

impl PnLPath {
    pub fn slice(&self, from: usize, to: usize) -> PnLPath {
        PnLPath {
            pnl: self.pnl[from..to].to_vec(),
            positions: self.positions[from..to].to_vec(),
            turnover: self.turnover[from..to].to_vec(),
        }
    }

    pub fn mean_turnover(&self) -> f64 {
        if self.turnover.is_empty() {
            0.0
        } else {
            mean(&self.turnover)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PnLSeries {
    pub dates: Vec<NaiveDate>,
    pub path: PnLPath,
}

/// Trailing std of `x` over `window` days ending at each date (inclusive).
/// Early dates use whatever history exists; fewer than two points give 0.
pub fn trailing_sigma(x: &[f64], window: usize) -> Vec<f64> {
    (0..x.len())
        .map(|t| {
            let lo = (t + 1).saturating_sub(window);
            let seg = &x[lo..=t];
            if seg.len() < 2 {
                0.0
            } else {
                sample_std(seg)
            }
        })
        .collect()
}

/// Rebalance every `rebalance_days` with exponential smoothing toward the signal.
/// The book starts flat.
pub fn schedule_positions(signal: &[f64], cfg: &ExecutionConfig) -> Vec<f64> {
    let k = cfg.rebalance_days.max(1);
    let a = cfg.smoothing_alpha;
    let mut p = 0.0;
    signal
        .iter()
        .enumerate()
        .map(|(t, &s)| {
            if t % k == 0 {
                p = (1.0 - a) * p + a * s;
            }
            p
        })
        .collect()
}

/// Multiplier `min(1, target / annualized sigma)`; 1 when sigma is zero.
pub fn vol_target_scale(sigma_daily: f64, target: f64) -> f64 {
    let ann = sigma_daily * crate::metrics::TRADING_DAYS.sqrt();
    if ann <= 0.0 {
        1.0
    } else {
        (target / ann).min(1.0)
    }
}

#[inline]
fn step_pnl(p_prev: f64, p: f64, r: f64, sigma: f64, cfg: &ExecutionConfig) -> (f64, f64) {
    let u = (p - p_prev).abs();
    let pi = p_prev * r
        - cfg.c_tc() * u
        - cfg.lambda_risk * p_prev.abs() * sigma
        - cfg.lambda_imp * u * u
        - cfg.lambda_cap * p_prev * p_prev * (1.0 + sigma);
    (pi, u)
}

fn check_lengths(n: usize, market: &[f64], sigma: &[f64]) -> Result<()> {
    if market.len() != n || sigma.len() != n {
        return Err(Error::contract(format!(
            "length mismatch: {n} positions, {} returns, {} sigmas",
            market.len(),
            sigma.len()
        )));
    }
    if sigma.iter().any(|s| !(*s >= 0.0)) {
        return Err(Error::contract("sigma must be non-negative"));
    }
    Ok(())
}

/// Daily PnL for already-executed positions.
pub fn daily_pnl(positions: &[f64], market: &[f64], sigma: &[f64], cfg: &ExecutionConfig) -> Result<PnLPath> {
    check_lengths(positions.len(), market, sigma)?;
    let mut out = PnLPath {
        positions: positions.to_vec(),
        ..Default::default()
    };
    let mut prev = 0.0;
    for t in 0..positions.len() {
        let (pi, u) = step_pnl(prev, positions[t], market[t], sigma[t], cfg);
        out.pnl.push(pi);
        out.turnover.push(u);
        prev = positions[t];
    }
    Ok(out)
}

/// Vol-target then tail-delever the scheduled positions. The drawdown that
/// triggers delevering is measured on strategy equity through the prior day.
pub fn apply_overlays(scheduled: &[f64], market: &[f64], sigma: &[f64], cfg: &ExecutionConfig) -> Result<Vec<f64>> {
    check_lengths(scheduled.len(), market, sigma)?;
    let mut out = Vec::with_capacity(scheduled.len());
    let vol = |t: usize| cfg.vol_target.map_or(1.0, |v| vol_target_scale(sigma[t], v));
    let Some(td) = cfg.tail_delever else {
        out.extend(scheduled.iter().enumerate().map(|(t, p)| p * vol(t)));
        return Ok(out);
    };
    let (mut eq, mut peak, mut prev) = (1.0f64, 1.0f64, 0.0);
    for t in 0..scheduled.len() {
        let mut p = scheduled[t] * vol(t);
        if eq / peak - 1.0 < td.drawdown_trigger {
            p *= td.scale_factor;
        }
        let (pi, _) = step_pnl(prev, p, market[t], sigma[t], cfg);
        eq *= 1.0 + pi;
        peak = peak.max(eq);
        prev = p;
        out.push(p);
    }
    Ok(out)
}

/// Full pipeline: schedule, overlays, PnL.
pub fn simulate(signal: &[f64], market: &[f64], sigma: &[f64], cfg: &ExecutionConfig) -> Result<PnLPath> {
    let scheduled = schedule_positions(signal, cfg);
    let executed = apply_overlays(&scheduled, market, sigma, cfg)?;
    daily_pnl(&executed, market, sigma, cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScaleGrid {
    pub lower: f64,
    pub upper: f64,
    pub n_steps: usize,
}

impl Default for ScaleGrid {
    fn default() -> Self {
        ScaleGrid {
            lower: 0.5,
            upper: 1.6,
            n_steps: 12,
        }
    }
}

impl ScaleGrid {
    pub fn points(&self) -> Result<Vec<f64>> {
        if self.n_steps == 0 || !(self.lower <= self.upper) {
            return Err(Error::config("scale grid needs n_steps >= 1 and lower <= upper"));
        }
        if self.n_steps == 1 {
            return Ok(vec![self.lower]);
        }
        let h = (self.upper - self.lower) / (self.n_steps - 1) as f64;
        Ok((0..self.n_steps)
            .map(|i| if i + 1 == self.n_steps { self.upper } else { self.lower + h * i as f64 })
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScaleObjective {
    pub lambda_cvar: f64,
    pub lambda_down: f64,
    pub lambda_to: f64,
    pub cvar_alpha: f64,
}

impl Default for ScaleObjective {
    fn default() -> Self {
        ScaleObjective {
            lambda_cvar: 1.0,
            lambda_down: 0.5,
            lambda_to: 0.1,
            cvar_alpha: 0.05,
        }
    }
}

impl ScaleObjective {
    pub fn evaluate(&self, path: &PnLPath, bench: &[f64]) -> f64 {
        let ex: Vec<f64> = path.pnl.iter().zip(bench).map(|(p, b)| p - b).collect();
        if ex.is_empty() {
            return 0.0;
        }
        mean(&ex)
            - self.lambda_cvar * cvar(&ex, self.cvar_alpha).min(0.0).abs()
            - self.lambda_down * downside_dev_daily(&ex)
            - self.lambda_to * path.mean_turnover()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScaleChoice {
    pub scale: f64,
    pub objective: f64,
    /// `(scale, J(scale))` for every grid point.
    pub trace: Vec<(f64, f64)>,
}

/// Grid search over execution scale; ties go to the smaller scale.
pub fn optimize_scale(
    signal: &[f64],
    market: &[f64],
    sigma: &[f64],
    bench: &[f64],
    cfg: &ExecutionConfig,
    grid: &ScaleGrid,
    objective: &ScaleObjective,
) -> Result<ScaleChoice> {
    if bench.len() != signal.len() {
        return Err(Error::contract("benchmark length differs from signal"));
    }
    let mut trace = Vec::new();
    let mut best: Option<(f64, f64)> = None;
    for s in grid.points()? {
        let scaled: Vec<f64> = signal.iter().map(|v| v * s).collect();
        let j = objective.evaluate(&simulate(&scaled, market, sigma, cfg)?, bench);
        trace.push((s, j));
        if best.is_none_or(|(_, bj)| j > bj) {
            best = Some((s, j));
        }
    }
    let (scale, obj) = best.expect("grid is non-empty");
    Ok(ScaleChoice {
        scale,
        objective: obj,
        trace,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StressScenario {
    pub name: String,
    pub tc_mult: f64,
    pub impact_mult: f64,
    pub capacity_mult: f64,
}

impl StressScenario {
    pub fn new(name: &str, tc: f64, imp: f64, cap: f64) -> Self {
        StressScenario {
            name: name.into(),
            tc_mult: tc,
            impact_mult: imp,
            capacity_mult: cap,
        }
    }

    pub fn base() -> Self {
        Self::new("base", 1.0, 1.0, 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        let m = [self.tc_mult, self.impact_mult, self.capacity_mult];
        if m.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::config(format!("scenario {}: multipliers must be finite and >= 0", self.name)));
        }
        Ok(())
    }
}

pub fn default_scenarios() -> Vec<StressScenario> {
    vec![
        StressScenario::base(),
        StressScenario::new("tc_x3", 3.0, 1.0, 1.0),
        StressScenario::new("capacity_x3", 1.0, 1.0, 3.0),
        StressScenario::new("all_x2", 2.0, 2.0, 2.0),
        StressScenario::new("all_x3", 3.0, 3.0, 3.0),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StressRow {
    pub scenario: String,
    pub excess_sharpe: f64,
    pub delta_ex_sharpe: f64,
    pub excess_cum_ret: f64,
    pub delta_ex_cum_ret: f64,
}

pub struct StressResult {
    pub path: PnLPath,
    pub metrics: MetricSet,
}

pub fn run_stress(
    signal: &[f64],
    market: &[f64],
    sigma: &[f64],
    bench: &[f64],
    scenario: &StressScenario,
    cfg: &ExecutionConfig,
) -> Result<StressResult> {
    scenario.validate()?;
    let path = simulate(signal, market, sigma, &cfg.stressed(scenario))?;
    let metrics = MetricSet::compute(&path.pnl, bench, 0.05);
    Ok(StressResult { path, metrics })
}

/// Every scenario rerun on the same signal, with deltas against the unstressed run.
pub fn stress_table(
    signal: &[f64],
    market: &[f64],
    sigma: &[f64],
    bench: &[f64],
    scenarios: &[StressScenario],
    cfg: &ExecutionConfig,
) -> Result<Vec<StressRow>> {
    let base = run_stress(signal, market, sigma, bench, &StressScenario::base(), cfg)?.metrics;
    scenarios
        .iter()
        .map(|sc| {
            let m = run_stress(signal, market, sigma, bench, sc, cfg)?.metrics;
            Ok(StressRow {
                scenario: sc.name.clone(),
                excess_sharpe: m.excess_sharpe,
                delta_ex_sharpe: m.excess_sharpe - base.excess_sharpe,
                excess_cum_ret: m.excess_cum_return,
                delta_ex_cum_ret: m.excess_cum_return - base.excess_cum_return,
            })
        })
        .collect()
}
