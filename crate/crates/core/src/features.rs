//! Trailing-only feature construction and four-state regime labels.
//!
//! Every raw feature at return date `t` reads only rows `<= t`; each is then
//! z-scored against its own trailing window. Dates before every feature is
//! defined are dropped.

use std::io::Write;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{mean, sample_cov, sample_std};
use crate::panel::{PricePanel, ReturnPanel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Regime {
    Bull,
    Bear,
    Sideways,
    Shock,
}

impl Regime {
    pub const ALL: [Regime; 4] = [Regime::Bull, Regime::Bear, Regime::Sideways, Regime::Shock];

    pub fn index(self) -> usize {
        match self {
            Regime::Bull => 0,
            Regime::Bear => 1,
            Regime::Sideways => 2,
            Regime::Shock => 3,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Regime::Bull => "BULL",
            Regime::Bear => "BEAR",
            Regime::Sideways => "SIDEWAYS",
            Regime::Shock => "SHOCK",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegimeThresholds {
    pub theta_bull: f64,
    pub theta_bear: f64,
    pub kappa_shock: f64,
    /// Trailing window for the mean/volatility summaries.
    pub window: usize,
}

impl Default for RegimeThresholds {
    fn default() -> Self {
        RegimeThresholds {
            theta_bull: 0.0008,
            theta_bear: -0.0008,
            kappa_shock: 1.75,
            window: 20,
        }
    }
}

impl RegimeThresholds {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta_bear < self.theta_bull) {
            return Err(Error::config("regime thresholds need theta_bear < theta_bull"));
        }
        if !(self.kappa_shock > 1.0) {
            return Err(Error::config("kappa_shock must exceed 1"));
        }
        if self.window < 2 {
            return Err(Error::config("regime window must be at least 2"));
        }
        Ok(())
    }
}

/// Directional labels take precedence; SHOCK and SIDEWAYS split the residual band.
pub fn classify(bar_r: f64, sigma: f64, sigma_bar: f64, th: &RegimeThresholds) -> Regime {
    if bar_r >= th.theta_bull {
        Regime::Bull
    } else if bar_r <= th.theta_bear {
        Regime::Bear
    } else if sigma > th.kappa_shock * sigma_bar {
        Regime::Shock
    } else {
        Regime::Sideways
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegimeSeries {
    pub dates: Vec<NaiveDate>,
    pub labels: Vec<Regime>,
    pub bar_r: Vec<f64>,
    pub sigma: Vec<f64>,
    pub sigma_bar: Vec<f64>,
}

impl RegimeSeries {
    pub fn label_on(&self, date: NaiveDate) -> Option<Regime> {
        self.dates
            .binary_search(&date)
            .ok()
            .map(|i| self.labels[i])
    }
}

/// Label every return date with a full trailing window of market returns.
pub fn classify_regime(returns: &ReturnPanel, th: &RegimeThresholds) -> RegimeSeries {
    classify_market(&returns.dates, &returns.market_returns(), th)
}

pub fn classify_market(dates: &[NaiveDate], market: &[f64], th: &RegimeThresholds) -> RegimeSeries {
    let w = th.window;
    let mut out = RegimeSeries {
        dates: Vec::new(),
        labels: Vec::new(),
        bar_r: Vec::new(),
        sigma: Vec::new(),
        sigma_bar: Vec::new(),
    };
    let mut sigma_sum = 0.0;
    for t in w.saturating_sub(1)..market.len() {
        let win = &market[t + 1 - w..=t];
        let bar_r = mean(win);
        let sigma = sample_std(win);
        sigma_sum += sigma;
        let sigma_bar = sigma_sum / (out.sigma.len() + 1) as f64;
        out.dates.push(dates[t]);
        out.labels.push(classify(bar_r, sigma, sigma_bar, th));
        out.bar_r.push(bar_r);
        out.sigma.push(sigma);
        out.sigma_bar.push(sigma_bar);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub short_window: usize,
    pub medium_window: usize,
    pub long_window: usize,
    pub standardize_window: usize,
    pub std_floor: f64,
    /// Long-short momentum and low-volatility spread streams.
    pub ls_factors: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            short_window: 5,
            medium_window: 20,
            long_window: 60,
            standardize_window: 60,
            std_floor: 1e-8,
            ls_factors: true,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        let ws = [self.short_window, self.medium_window, self.long_window, self.standardize_window];
        if ws.iter().any(|&w| w < 2) {
            return Err(Error::config("feature windows must be at least 2"));
        }
        if !(self.std_floor > 0.0) {
            return Err(Error::config("std_floor must be positive"));
        }
        Ok(())
    }
}

/// Standardized features, `values[date][feature]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub dates: Vec<NaiveDate>,
    pub names: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl FeatureMatrix {
    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "date,{}", self.names.join(","))?;
        for (d, row) in self.dates.iter().zip(&self.values) {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(out, "{},{}", d.format("%Y-%m-%d"), cells.join(","))?;
        }
        Ok(())
    }
}

pub mod names {
    pub const MKT_MEAN_SHORT: &str = "mkt_mean_short";
    pub const MKT_MEAN_MEDIUM: &str = "mkt_mean_medium";
    pub const MKT_MEAN_LONG: &str = "mkt_mean_long";
    pub const MKT_VOL_MEDIUM: &str = "mkt_vol_medium";
    pub const MKT_VOL_LONG: &str = "mkt_vol_long";
    pub const BREADTH: &str = "breadth";
    pub const DISPERSION: &str = "dispersion";
    pub const SKEW: &str = "skew";
    pub const KURTOSIS: &str = "kurtosis";
    pub const EXCESS_VS_BENCH: &str = "excess_vs_bench";
    pub const BETA: &str = "rolling_beta";
    pub const VOLUME_Z: &str = "volume_z";
    pub const LS_MOMENTUM: &str = "ls_momentum";
    pub const LS_LOWVOL: &str = "ls_lowvol";
}

/// Variances below this are treated as zero in ratio features.
const VAR_FLOOR: f64 = 1e-16;

fn rolling<F>(xs: &[f64], w: usize, f: F) -> Vec<Option<f64>>
where
    F: Fn(&[f64]) -> f64,
{
    (0..xs.len())
        .map(|t| (t + 1 >= w).then(|| f(&xs[t + 1 - w..=t])))
        .collect()
}

fn compounded(xs: &[f64]) -> f64 {
    xs.iter().fold(1.0, |acc, r| acc * (1.0 + r)) - 1.0
}

fn skewness(xs: &[f64]) -> f64 {
    let m = mean(xs);
    let n = xs.len() as f64;
    let m2 = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    if m2 <= VAR_FLOOR {
        return 0.0;
    }
    let m3 = xs.iter().map(|x| (x - m).powi(3)).sum::<f64>() / n;
    m3 / m2.powf(1.5)
}

fn excess_kurtosis(xs: &[f64]) -> f64 {
    let m = mean(xs);
    let n = xs.len() as f64;
    let m2 = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    if m2 <= VAR_FLOOR {
        return 0.0;
    }
    let m4 = xs.iter().map(|x| (x - m).powi(4)).sum::<f64>() / n;
    m4 / (m2 * m2) - 3.0
}

/// Trailing z-score of a partially defined series.
pub fn trailing_zscore(raw: &[Option<f64>], window: usize, floor: f64) -> Vec<Option<f64>> {
    (0..raw.len())
        .map(|t| {
            if t + 1 < window {
                return None;
            }
            let win: Option<Vec<f64>> = raw[t + 1 - window..=t].iter().copied().collect();
            let win = win?;
            let m = mean(&win);
            let s = sample_std(&win).max(floor);
            Some((win[window - 1] - m) / s)
        })
        .collect()
}

/// Daily long-short spread: top-third minus bottom-third return, ranked on trailing data.
fn ls_spread(returns: &ReturnPanel, lookback: usize, rank_key: impl Fn(&[f64]) -> f64, high_minus_low: bool) -> Vec<Option<f64>> {
    let n_sym = returns.symbols.len();
    let n = returns.dates.len();
    let group = (n_sym / 3).max(1);
    (0..n)
        .map(|t| {
            if t < lookback {
                return None;
            }
            if n_sym < 2 {
                return Some(0.0);
            }
            let mut keyed: Vec<(f64, usize)> = (0..n_sym)
                .map(|j| {
                    let hist: Vec<f64> = returns.returns[t - lookback..t].iter().map(|r| r[j]).collect();
                    (rank_key(&hist), j)
                })
                .collect();
            keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let low: f64 = keyed[..group].iter().map(|&(_, j)| returns.returns[t][j]).sum::<f64>() / group as f64;
            let high: f64 = keyed[n_sym - group..].iter().map(|&(_, j)| returns.returns[t][j]).sum::<f64>() / group as f64;
            Some(if high_minus_low { high - low } else { low - high })
        })
        .collect()
}

fn rolling_mean_opt(xs: &[Option<f64>], w: usize) -> Vec<Option<f64>> {
    (0..xs.len())
        .map(|t| {
            if t + 1 < w {
                return None;
            }
            let win: Option<Vec<f64>> = xs[t + 1 - w..=t].iter().copied().collect();
            win.map(|v| mean(&v))
        })
        .collect()
}

/// Raw (unstandardized) feature columns on the return-date axis.
pub fn raw_features(returns: &ReturnPanel, panel: &PricePanel, cfg: &FeatureConfig) -> Vec<(String, Vec<Option<f64>>)> {
    let m = returns.market_returns();
    let b = &returns.benchmark_returns;
    let n = m.len();
    let n_sym = returns.symbols.len();
    let (ws, wm, wl) = (cfg.short_window, cfg.medium_window, cfg.long_window);
    let mut cols: Vec<(String, Vec<Option<f64>>)> = vec![
        (names::MKT_MEAN_SHORT.into(), rolling(&m, ws, mean)),
        (names::MKT_MEAN_MEDIUM.into(), rolling(&m, wm, mean)),
        (names::MKT_MEAN_LONG.into(), rolling(&m, wl, mean)),
        (names::MKT_VOL_MEDIUM.into(), rolling(&m, wm, sample_std)),
        (names::MKT_VOL_LONG.into(), rolling(&m, wl, sample_std)),
    ];

    let cum_medium: Vec<Vec<Option<f64>>> = (0..n_sym)
        .map(|j| {
            let col: Vec<f64> = returns.returns.iter().map(|r| r[j]).collect();
            rolling(&col, wm, compounded)
        })
        .collect();
    let breadth = (0..n)
        .map(|t| {
            let v: Option<Vec<f64>> = cum_medium.iter().map(|c| c[t]).collect();
            v.map(|v| v.iter().filter(|&&x| x > 0.0).count() as f64 / n_sym as f64)
        })
        .collect();
    let dispersion = (0..n)
        .map(|t| {
            let v: Option<Vec<f64>> = cum_medium.iter().map(|c| c[t]).collect();
            v.map(|v| sample_std(&v))
        })
        .collect();
    cols.push((names::BREADTH.into(), breadth));
    cols.push((names::DISPERSION.into(), dispersion));
    cols.push((names::SKEW.into(), rolling(&m, wl, skewness)));
    cols.push((names::KURTOSIS.into(), rolling(&m, wl, excess_kurtosis)));

    let cum_m = rolling(&m, wm, compounded);
    let cum_b = rolling(b, wm, compounded);
    let excess = cum_m
        .iter()
        .zip(&cum_b)
        .map(|(a, c)| Some((*a)? - (*c)?))
        .collect();
    cols.push((names::EXCESS_VS_BENCH.into(), excess));
    let beta = (0..n)
        .map(|t| {
            (t + 1 >= wl).then(|| {
                let mw = &m[t + 1 - wl..=t];
                let bw = &b[t + 1 - wl..=t];
                let var = sample_std(bw).powi(2);
                if var > VAR_FLOOR {
                    sample_cov(mw, bw) / var
                } else {
                    0.0
                }
            })
        })
        .collect();
    cols.push((names::BETA.into(), beta));

    // Total traded volume on the return date (panel row t + 1).
    let log_vol: Vec<f64> = (0..n)
        .map(|t| (panel.volume[t + 1].iter().sum::<f64>() + 1.0).ln())
        .collect();
    let vz = (0..n)
        .map(|t| {
            (t + 1 >= wm).then(|| {
                let w = &log_vol[t + 1 - wm..=t];
                (log_vol[t] - mean(w)) / sample_std(w).max(cfg.std_floor)
            })
        })
        .collect();
    cols.push((names::VOLUME_Z.into(), vz));

    if cfg.ls_factors {
        let mom = ls_spread(returns, wl, compounded, true);
        let lowvol = ls_spread(returns, wl, sample_std, false);
        cols.push((names::LS_MOMENTUM.into(), rolling_mean_opt(&mom, wm)));
        cols.push((names::LS_LOWVOL.into(), rolling_mean_opt(&lowvol, wm)));
    }
    cols
}

pub fn build_features(returns: &ReturnPanel, panel: &PricePanel, cfg: &FeatureConfig) -> Result<FeatureMatrix> {
    cfg.validate()?;
    if panel.dates.len() != returns.dates.len() + 1 {
        return Err(Error::contract("return panel does not belong to the price panel"));
    }
    let raw = raw_features(returns, panel, cfg);
    let z: Vec<Vec<Option<f64>>> = raw
        .iter()
        .map(|(_, col)| trailing_zscore(col, cfg.standardize_window, cfg.std_floor))
        .collect();
    let n = returns.dates.len();
    let start = (0..n).find(|&t| z.iter().all(|c| c[t].is_some()));
    let start = start.ok_or_else(|| {
        Error::data(format!(
            "horizon of {n} return days is shorter than the feature warm-up"
        ))
    })?;
    let values: Vec<Vec<f64>> = (start..n)
        .map(|t| z.iter().map(|c| c[t].expect("defined after warm-up")).collect())
        .collect();
    if values.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::data("non-finite feature value"));
    }
    Ok(FeatureMatrix {
        dates: returns.dates[start..].to_vec(),
        names: raw.into_iter().map(|(n, _)| n).collect(),
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::compute_returns;
    use crate::synthetic::{generate_synthetic, SyntheticSpec};
    use rand::{Rng, SeedableRng};

    #[test]
    fn boundary_is_bull() {
        let th = RegimeThresholds::default();
        assert_eq!(classify(th.theta_bull, 0.01, 0.01, &th), Regime::Bull);
        assert_eq!(classify(th.theta_bear, 0.01, 0.01, &th), Regime::Bear);
    }

    #[test]
    fn shock_and_sideways_split_the_middle_band() {
        let th = RegimeThresholds {
            kappa_shock: 2.0,
            ..Default::default()
        };
        assert_eq!(classify(0.0, 0.03, 0.01, &th), Regime::Shock);
        assert_eq!(classify(0.0, 0.01, 0.01, &th), Regime::Sideways);
        // Directional label wins over a volatility spike.
        assert_eq!(classify(0.01, 0.05, 0.01, &th), Regime::Bull);
    }

    #[test]
    fn every_date_gets_exactly_one_label() {
        let p = generate_synthetic(&SyntheticSpec { horizon: 300, ..Default::default() }, 3).unwrap();
        let r = compute_returns(&p);
        let rs = classify_regime(&r, &RegimeThresholds::default());
        assert_eq!(rs.labels.len(), r.dates.len() - 19);
        assert_eq!(rs.dates.len(), rs.labels.len());
        assert_eq!(rs.dates[0], r.dates[19]);
    }

    #[test]
    fn breadth_is_one_when_all_symbols_rise() {
        let spec = SyntheticSpec {
            horizon: 200,
            symbol_drift: 0.01,
            symbol_vol: 0.0,
            market_drift: 0.0,
            market_vol: 0.0,
            benchmark: crate::synthetic::BenchmarkSpec { drift: 0.0, vol: 0.0, market_beta: 0.0 },
            ..Default::default()
        };
        let p = generate_synthetic(&spec, 5).unwrap();
        let r = compute_returns(&p);
        let raw = raw_features(&r, &p, &FeatureConfig::default());
        let (_, breadth) = raw.iter().find(|(n, _)| n == names::BREADTH).unwrap();
        // benchmark column is flat; the rest rise every day
        let expected = 8.0 / 9.0;
        assert!((breadth[50].unwrap() - expected).abs() < 1e-12);
        let spec_all = SyntheticSpec {
            benchmark: crate::synthetic::BenchmarkSpec { drift: 0.01, vol: 0.0, market_beta: 0.0 },
            ..spec
        };
        let p = generate_synthetic(&spec_all, 5).unwrap();
        let r = compute_returns(&p);
        let raw = raw_features(&r, &p, &FeatureConfig::default());
        let (_, breadth) = raw.iter().find(|(n, _)| n == names::BREADTH).unwrap();
        assert_eq!(breadth[50].unwrap(), 1.0);
    }

    #[test]
    fn constant_returns_standardize_to_zero() {
        let spec = SyntheticSpec {
            horizon: 300,
            symbol_drift: 0.001,
            symbol_vol: 0.0,
            market_drift: 0.0,
            market_vol: 0.0,
            benchmark: crate::synthetic::BenchmarkSpec { drift: 0.001, vol: 0.0, market_beta: 0.0 },
            base_volume: 0.0,
            ..Default::default()
        };
        let p = generate_synthetic(&spec, 5).unwrap();
        let r = compute_returns(&p);
        let fm = build_features(&r, &p, &FeatureConfig::default()).unwrap();
        for v in fm.values.iter().flatten() {
            assert!(v.abs() < 1e-6, "{v}");
        }
    }

    #[test]
    fn short_horizon_is_data_error() {
        let p = generate_synthetic(&SyntheticSpec { horizon: 100, ..Default::default() }, 1).unwrap();
        let r = compute_returns(&p);
        assert!(matches!(build_features(&r, &p, &FeatureConfig::default()), Err(Error::Data(_))));
    }

    #[test]
    fn future_perturbation_leaves_past_features_unchanged() {
        let p = generate_synthetic(&SyntheticSpec { horizon: 400, ..Default::default() }, 9).unwrap();
        let r = compute_returns(&p);
        let fm = build_features(&r, &p, &FeatureConfig::default()).unwrap();
        let cut = 300;
        let mut q = p.clone();
        for row in q.close.iter_mut().skip(cut + 1) {
            for c in row.iter_mut() {
                *c *= 1.07;
            }
        }
        for row in q.volume.iter_mut().skip(cut + 1) {
            row[0] *= 3.0;
        }
        let r2 = compute_returns(&q);
        let fm2 = build_features(&r2, &q, &FeatureConfig::default()).unwrap();
        let cut_date = p.dates[cut];
        for (i, d) in fm.dates.iter().enumerate() {
            if *d <= cut_date {
                assert_eq!(fm.values[i], fm2.values[i], "feature row at {d} changed");
            }
        }
        assert!(fm.values.last() != fm2.values.last());
    }

    #[test]
    fn trailing_zscore_of_stationary_series_is_standard() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        // AR(1) with moderate persistence plus iid noise.
        let mut x = 0.0;
        let raw: Vec<Option<f64>> = (0..2000)
            .map(|_| {
                x = 0.3 * x + rng.random::<f64>() - 0.5;
                Some(x)
            })
            .collect();
        let z: Vec<f64> = trailing_zscore(&raw, 60, 1e-8).into_iter().flatten().collect();
        assert!(z.len() >= 500);
        let m = mean(&z);
        let s = sample_std(&z);
        assert!(m.abs() <= 0.15, "mean {m}");
        assert!((0.7..=1.3).contains(&s), "std {s}");
    }
}
