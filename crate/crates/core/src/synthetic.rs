//! Seeded synthetic market panels with scheduled drift/volatility segments.

use chrono::{Datelike, NaiveDate, Weekday};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::PricePanel;
use crate::rng;

/// One piece of the market-factor schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    pub start: usize,
    pub length: usize,
    /// Daily drift of the common factor inside the segment.
    pub drift: f64,
    /// Daily volatility of the common factor inside the segment.
    pub vol: f64,
}

/// Random alternating bull/bear schedule, expanded from the seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlternatingSchedule {
    pub bull_drift: f64,
    pub bear_drift: f64,
    pub vol: f64,
    pub min_length: usize,
    pub max_length: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkSpec {
    pub drift: f64,
    pub vol: f64,
    /// Loading on the common market factor.
    pub market_beta: f64,
}

impl Default for BenchmarkSpec {
    fn default() -> Self {
        BenchmarkSpec {
            drift: 0.0,
            vol: 0.002,
            market_beta: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_symbols: usize,
    pub horizon: usize,
    pub start_date: NaiveDate,
    pub benchmark_symbol: String,
    /// Per-symbol idiosyncratic drift and volatility (daily).
    pub symbol_drift: f64,
    pub symbol_vol: f64,
    /// Factor drift/vol outside scheduled segments.
    pub market_drift: f64,
    pub market_vol: f64,
    pub segments: Vec<Segment>,
    pub alternating: Option<AlternatingSchedule>,
    pub benchmark: BenchmarkSpec,
    pub initial_price: f64,
    pub base_volume: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_symbols: 8,
            horizon: 1500,
            start_date: NaiveDate::from_ymd_opt(2010, 1, 4).expect("valid date"),
            benchmark_symbol: "SPY".into(),
            symbol_drift: 0.0,
            symbol_vol: 0.01,
            market_drift: 0.0003,
            market_vol: 0.01,
            segments: Vec::new(),
            alternating: None,
            benchmark: BenchmarkSpec::default(),
            initial_price: 100.0,
            base_volume: 1.0e6,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.horizon < 2 {
            return Err(Error::config("synthetic horizon must be at least 2 days"));
        }
        if self.n_symbols == 0 {
            return Err(Error::config("synthetic panel needs at least one symbol"));
        }
        let vols = [self.symbol_vol, self.market_vol, self.benchmark.vol];
        if vols.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::config("synthetic volatilities must be finite and non-negative"));
        }
        if self.segments.iter().any(|s| !(s.vol.is_finite() && s.vol >= 0.0)) {
            return Err(Error::config("segment volatilities must be finite and non-negative"));
        }
        if let Some(a) = &self.alternating {
            if a.min_length == 0 || a.max_length < a.min_length || a.vol < 0.0 {
                return Err(Error::config("alternating schedule needs 0 < min_length <= max_length"));
            }
        }
        if !(self.initial_price > 0.0) || self.base_volume < 0.0 {
            return Err(Error::config("initial price must be positive, base volume non-negative"));
        }
        Ok(())
    }

    /// Factor (drift, vol) per day, after expanding any alternating schedule.
    pub fn factor_path<R: Rng>(&self, rng: &mut R) -> Vec<(f64, f64)> {
        let mut path = vec![(self.market_drift, self.market_vol); self.horizon];
        if let Some(a) = &self.alternating {
            let mut t = 0;
            let mut bull = rng.random_bool(0.5);
            while t < self.horizon {
                let len = rng.random_range(a.min_length..=a.max_length);
                let drift = if bull { a.bull_drift } else { a.bear_drift };
                for slot in path.iter_mut().skip(t).take(len) {
                    *slot = (drift, a.vol);
                }
                t += len;
                bull = !bull;
            }
        }
        for s in &self.segments {
            for slot in path.iter_mut().skip(s.start).take(s.length) {
                *slot = (s.drift, s.vol);
            }
        }
        path
    }
}

fn trading_days(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(n);
    let mut d = start;
    while out.len() < n {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d = d.succ_opt().expect("date overflow");
    }
    out
}

/// Geometric random-walk panel; symbol 0 is the benchmark.
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<PricePanel> {
    spec.validate()?;
    let mut rng = rng::stream(seed, rng::keys::SYNTHETIC);
    let factor = spec.factor_path(&mut rng);
    let n_cols = spec.n_symbols + 1;
    let mut symbols = vec![spec.benchmark_symbol.clone()];
    symbols.extend((0..spec.n_symbols).map(|j| format!("SYN{j:03}")));

    let mut close = Vec::with_capacity(spec.horizon);
    let mut volume = Vec::with_capacity(spec.horizon);
    let mut price = vec![spec.initial_price; n_cols];
    close.push(price.clone());
    volume.push(vec![spec.base_volume; n_cols]);
    for &(drift, vol) in factor.iter().skip(1) {
        let f: f64 = rng.sample(StandardNormal);
        let market = drift + vol * f;
        let mut row_v = Vec::with_capacity(n_cols);
        for (j, p) in price.iter_mut().enumerate() {
            let e: f64 = rng.sample(StandardNormal);
            let r = if j == 0 {
                spec.benchmark.drift + spec.benchmark.market_beta * market + spec.benchmark.vol * e
            } else {
                spec.symbol_drift + market + spec.symbol_vol * e
            };
            *p *= 1.0 + r.max(-0.95);
            let u: f64 = rng.sample(StandardNormal);
            row_v.push((spec.base_volume * (0.25 * u).exp()).round());
        }
        close.push(price.clone());
        volume.push(row_v);
    }
    PricePanel::new(
        trading_days(spec.start_date, spec.horizon),
        symbols,
        close,
        volume,
        spec.benchmark_symbol.clone(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::compute_returns;

    #[test]
    fn zero_drift_zero_vol_gives_constant_prices() {
        let spec = SyntheticSpec {
            n_symbols: 3,
            horizon: 50,
            symbol_vol: 0.0,
            market_drift: 0.0,
            market_vol: 0.0,
            benchmark: BenchmarkSpec {
                drift: 0.0,
                vol: 0.0,
                market_beta: 1.0,
            },
            ..Default::default()
        };
        let p = generate_synthetic(&spec, 1).unwrap();
        let r = compute_returns(&p);
        assert!(r.returns.iter().flatten().all(|&x| x == 0.0));
    }

    #[test]
    fn same_seed_same_panel() {
        let spec = SyntheticSpec::default();
        assert_eq!(generate_synthetic(&spec, 11).unwrap(), generate_synthetic(&spec, 11).unwrap());
        assert_ne!(generate_synthetic(&spec, 11).unwrap(), generate_synthetic(&spec, 12).unwrap());
    }

    #[test]
    fn bad_horizon_or_vol_is_config_error() {
        let spec = SyntheticSpec {
            horizon: 0,
            ..Default::default()
        };
        assert!(matches!(generate_synthetic(&spec, 0), Err(Error::Config(_))));
        let spec = SyntheticSpec {
            market_vol: -0.1,
            ..Default::default()
        };
        assert!(matches!(generate_synthetic(&spec, 0), Err(Error::Config(_))));
    }

    #[test]
    fn planted_bull_segment_mean_matches_drift() {
        // Monte Carlo: mean one-day factor return inside the segment over 1000 paths.
        let spec = SyntheticSpec {
            n_symbols: 1,
            horizon: 120,
            symbol_vol: 0.0,
            symbol_drift: 0.0,
            market_drift: 0.0,
            market_vol: 0.01,
            segments: vec![Segment {
                start: 40,
                length: 60,
                drift: 0.001,
                vol: 0.01,
            }],
            ..Default::default()
        };
        let mut samples = Vec::new();
        for seed in 0..1000 {
            let p = generate_synthetic(&spec, seed).unwrap();
            let r = compute_returns(&p);
            // returns[t-1] is the move into day t; segment covers days 40..100
            for t in 40..100 {
                samples.push(r.returns[t - 1][1]);
            }
        }
        let m = crate::numeric::mean(&samples);
        let se = crate::numeric::sample_std(&samples) / (samples.len() as f64).sqrt();
        assert!((m - 0.001).abs() < 3.0 * se, "mean {m}, se {se}");
    }
}
