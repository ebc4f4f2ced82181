//! Daily price/volume panels: CSV ingest, universe filtering and clipped returns.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::median;

/// Absolute bound applied to every simple return.
pub const RETURN_CLIP: f64 = 0.20;

/// Symbols must cover at least this share of the union of dates to survive alignment.
pub const MIN_COVERAGE: f64 = 0.95;

/// Aligned daily close/volume matrix (`[date][symbol]`).
#[derive(Debug, Clone, PartialEq)]
pub struct PricePanel {
    pub dates: Vec<NaiveDate>,
    pub symbols: Vec<String>,
    pub close: Vec<Vec<f64>>,
    pub volume: Vec<Vec<f64>>,
    pub benchmark: String,
}

impl PricePanel {
    /// Build a panel and check its invariants.
    pub fn new(
        dates: Vec<NaiveDate>,
        symbols: Vec<String>,
        close: Vec<Vec<f64>>,
        volume: Vec<Vec<f64>>,
        benchmark: impl Into<String>,
    ) -> Result<Self> {
        let panel = PricePanel {
            dates,
            symbols,
            close,
            volume,
            benchmark: benchmark.into(),
        };
        panel.validate()?;
        Ok(panel)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::data("panel dates must be strictly increasing"));
        }
        if !self.symbols.iter().any(|s| *s == self.benchmark) {
            return Err(Error::config(format!(
                "benchmark {} not present in panel",
                self.benchmark
            )));
        }
        let unique: HashSet<&String> = self.symbols.iter().collect();
        if unique.len() != self.symbols.len() {
            return Err(Error::data("duplicate symbols in panel"));
        }
        if self.close.len() != self.dates.len() || self.volume.len() != self.dates.len() {
            return Err(Error::data("panel matrices do not match the date axis"));
        }
        for (row_c, row_v) in self.close.iter().zip(&self.volume) {
            if row_c.len() != self.symbols.len() || row_v.len() != self.symbols.len() {
                return Err(Error::data("panel matrices do not match the symbol axis"));
            }
            if row_c.iter().any(|c| !(c.is_finite() && *c > 0.0)) {
                return Err(Error::data("close prices must be positive and finite"));
            }
            if row_v.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::data("volumes must be non-negative and finite"));
            }
        }
        Ok(())
    }

    pub fn symbol_index(&self, symbol: &str) -> Option<usize> {
        self.symbols.iter().position(|s| s == symbol)
    }

    pub fn benchmark_index(&self) -> usize {
        self.symbol_index(&self.benchmark)
            .expect("validated panel contains its benchmark")
    }

    pub fn n_dates(&self) -> usize {
        self.dates.len()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.close.iter().map(|r| r[j]).collect()
    }

    /// Keep a subset of columns, in the given order.
    fn select_symbols(&self, keep: &[usize]) -> PricePanel {
        PricePanel {
            dates: self.dates.clone(),
            symbols: keep.iter().map(|&j| self.symbols[j].clone()).collect(),
            close: self
                .close
                .iter()
                .map(|r| keep.iter().map(|&j| r[j]).collect())
                .collect(),
            volume: self
                .volume
                .iter()
                .map(|r| keep.iter().map(|&j| r[j]).collect())
                .collect(),
            benchmark: self.benchmark.clone(),
        }
    }

    /// Truncate to the first `n` dates.
    pub fn head(&self, n: usize) -> PricePanel {
        let n = n.min(self.dates.len());
        PricePanel {
            dates: self.dates[..n].to_vec(),
            symbols: self.symbols.clone(),
            close: self.close[..n].to_vec(),
            volume: self.volume[..n].to_vec(),
            benchmark: self.benchmark.clone(),
        }
    }
}

/// Simple returns, clipped, on the panel's dates minus the first.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnPanel {
    pub dates: Vec<NaiveDate>,
    pub symbols: Vec<String>,
    pub returns: Vec<Vec<f64>>,
    pub benchmark_returns: Vec<f64>,
    pub benchmark_index: usize,
}

impl ReturnPanel {
    /// Equal-weight universe return per date.
    pub fn market_returns(&self) -> Vec<f64> {
        self.returns
            .iter()
            .map(|r| r.iter().sum::<f64>() / r.len() as f64)
            .collect()
    }

    pub fn column(&self, symbol: &str) -> Option<Vec<f64>> {
        let j = self.symbols.iter().position(|s| s == symbol)?;
        Some(self.returns.iter().map(|r| r[j]).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UniverseFilter {
    pub min_history_days: usize,
    pub min_median_price: f64,
    pub max_symbols: usize,
}

impl Default for UniverseFilter {
    fn default() -> Self {
        UniverseFilter {
            min_history_days: 252,
            min_median_price: 5.0,
            max_symbols: 39,
        }
    }
}

impl UniverseFilter {
    pub fn validate(&self) -> Result<()> {
        if self.min_history_days == 0 || self.max_symbols == 0 || self.min_median_price <= 0.0 {
            return Err(Error::config("universe filter fields must be positive"));
        }
        Ok(())
    }
}

/// Clip a raw return to `[-RETURN_CLIP, RETURN_CLIP]`.
pub fn clip_return(r: f64) -> f64 {
    r.clamp(-RETURN_CLIP, RETURN_CLIP)
}

pub fn compute_returns(panel: &PricePanel) -> ReturnPanel {
    let returns: Vec<Vec<f64>> = panel
        .close
        .windows(2)
        .map(|w| {
            w[1].iter()
                .zip(&w[0])
                .map(|(now, prev)| clip_return(now / prev - 1.0))
                .collect()
        })
        .collect();
    let bi = panel.benchmark_index();
    let benchmark_returns = returns.iter().map(|r: &Vec<f64>| r[bi]).collect();
    ReturnPanel {
        dates: panel.dates.iter().skip(1).copied().collect(),
        symbols: panel.symbols.clone(),
        returns,
        benchmark_returns,
        benchmark_index: bi,
    }
}

/// Load a `date,symbol,close,volume` CSV into an aligned panel.
pub fn load_panel(path: impl AsRef<Path>, benchmark: &str) -> Result<PricePanel> {
    let file = std::fs::File::open(path.as_ref()).map_err(|e| {
        Error::data(format!("cannot open panel {}: {e}", path.as_ref().display()))
    })?;
    parse_panel(file, benchmark)
}

#[derive(Debug, Deserialize)]
struct PanelRow {
    date: String,
    symbol: String,
    close: f64,
    volume: f64,
}

pub fn parse_panel<R: Read>(reader: R, benchmark: &str) -> Result<PricePanel> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let expected = ["date", "symbol", "close", "volume"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header date,symbol,close,volume, got {:?}", headers),
        });
    }
    // symbol -> date -> (close, volume)
    let mut series: BTreeMap<String, BTreeMap<NaiveDate, (f64, f64)>> = BTreeMap::new();
    let mut order: Vec<String> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let row: PanelRow = rec.deserialize(Some(&headers)).map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        let date = NaiveDate::parse_from_str(&row.date, "%Y-%m-%d").map_err(|e| Error::Parse {
            line,
            message: format!("bad date {:?}: {e}", row.date),
        })?;
        if !(row.close.is_finite() && row.close > 0.0) {
            return Err(Error::Parse {
                line,
                message: format!("close must be positive, got {}", row.close),
            });
        }
        if !(row.volume.is_finite() && row.volume >= 0.0) {
            return Err(Error::Parse {
                line,
                message: format!("volume must be non-negative, got {}", row.volume),
            });
        }
        let entry = series.entry(row.symbol.clone()).or_insert_with(|| {
            order.push(row.symbol.clone());
            BTreeMap::new()
        });
        if entry.insert(date, (row.close, row.volume)).is_some() {
            return Err(Error::Parse {
                line,
                message: format!("duplicate row for ({}, {})", row.date, row.symbol),
            });
        }
    }
    if !series.contains_key(benchmark) {
        return Err(Error::config(format!("benchmark {benchmark} absent from panel")));
    }
    for (sym, s) in &series {
        if s.len() < 2 {
            return Err(Error::data(format!("symbol {sym} has fewer than 2 dates")));
        }
    }
    align(series, order, benchmark)
}

fn align(
    series: BTreeMap<String, BTreeMap<NaiveDate, (f64, f64)>>,
    order: Vec<String>,
    benchmark: &str,
) -> Result<PricePanel> {
    let union: BTreeSet<NaiveDate> = series.values().flat_map(|s| s.keys().copied()).collect();
    let n_union = union.len() as f64;
    let survivors: Vec<String> = order
        .into_iter()
        .filter(|s| s == benchmark || series[s].len() as f64 >= MIN_COVERAGE * n_union)
        .collect();
    let dates: Vec<NaiveDate> = union
        .into_iter()
        .filter(|d| survivors.iter().all(|s| series[s].contains_key(d)))
        .collect();
    if dates.is_empty() {
        return Err(Error::data("no dates shared by all surviving symbols"));
    }
    let close = dates
        .iter()
        .map(|d| survivors.iter().map(|s| series[s][d].0).collect())
        .collect();
    let volume = dates
        .iter()
        .map(|d| survivors.iter().map(|s| series[s][d].1).collect())
        .collect();
    PricePanel::new(dates, survivors, close, volume, benchmark)
}

/// Write the panel in the CSV input schema (date-major, panel symbol order).
pub fn write_panel<W: Write>(panel: &PricePanel, mut out: W) -> Result<()> {
    writeln!(out, "date,symbol,close,volume")?;
    for (i, d) in panel.dates.iter().enumerate() {
        for (j, s) in panel.symbols.iter().enumerate() {
            writeln!(
                out,
                "{},{},{},{}",
                d.format("%Y-%m-%d"),
                s,
                panel.close[i][j],
                panel.volume[i][j]
            )?;
        }
    }
    Ok(())
}

pub fn save_panel(panel: &PricePanel, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    write_panel(panel, &mut w)?;
    w.flush()?;
    Ok(())
}

/// Coverage, price and liquidity screen; the benchmark always survives.
pub fn filter_universe(panel: &PricePanel, f: &UniverseFilter) -> Result<PricePanel> {
    f.validate()?;
    let bi = panel.benchmark_index();
    let history = panel.n_dates();
    let mut candidates: Vec<(usize, f64)> = Vec::new();
    for j in 0..panel.symbols.len() {
        if j == bi {
            continue;
        }
        let closes = panel.column(j);
        if history < f.min_history_days || median(&closes) < f.min_median_price {
            continue;
        }
        let dollar: Vec<f64> = panel
            .close
            .iter()
            .zip(&panel.volume)
            .map(|(c, v)| c[j] * v[j])
            .collect();
        candidates.push((j, median(&dollar)));
    }
    let bench_passes = history >= f.min_history_days;
    if candidates.is_empty() && !bench_passes {
        return Err(Error::data("no symbol survives the universe filter"));
    }
    // Descending dollar volume; ties by original column order.
    candidates.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    candidates.truncate(f.max_symbols.saturating_sub(1));
    let mut keep: Vec<usize> = candidates.into_iter().map(|(j, _)| j).collect();
    keep.push(bi);
    keep.sort_unstable();
    Ok(panel.select_symbols(&keep))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(2020, 1, day).unwrap()
    }

    fn small_panel(closes: &[&[f64]], symbols: &[&str], bench: &str) -> PricePanel {
        let n = closes.len();
        PricePanel::new(
            (1..=n as u32).map(d).collect(),
            symbols.iter().map(|s| s.to_string()).collect(),
            closes.iter().map(|r| r.to_vec()).collect(),
            closes.iter().map(|r| vec![1000.0; r.len()]).collect(),
            bench,
        )
        .unwrap()
    }

    #[test]
    fn simple_return_definition() {
        let p = small_panel(&[&[100.0], &[101.0]], &["A"], "A");
        let r = compute_returns(&p);
        assert!((r.returns[0][0] - 0.01).abs() < 1e-15);
    }

    #[test]
    fn large_move_is_clipped() {
        let p = small_panel(&[&[100.0], &[150.0], &[30.0]], &["A"], "A");
        let r = compute_returns(&p);
        assert_eq!(r.returns[0][0], 0.20);
        assert_eq!(r.returns[1][0], -0.20);
    }

    #[test]
    fn constant_prices_give_zero_returns() {
        let p = small_panel(&[&[50.0, 7.0], &[50.0, 7.0], &[50.0, 7.0]], &["A", "B"], "B");
        let r = compute_returns(&p);
        assert!(r.returns.iter().flatten().all(|&x| x == 0.0));
        assert_eq!(r.benchmark_returns, vec![0.0, 0.0]);
    }

    #[test]
    fn complete_case_drops_sparse_symbol() {
        let mut csv = String::from("date,symbol,close,volume\n");
        for day in 1..=5 {
            for s in ["AAA", "BBB", "CCC"] {
                if s == "CCC" && day == 3 {
                    continue;
                }
                csv.push_str(&format!("2020-01-0{day},{s},{}.5,100\n", 10 + day));
            }
        }
        let p = parse_panel(csv.as_bytes(), "AAA").unwrap();
        assert_eq!(p.symbols, vec!["AAA", "BBB"]);
        assert_eq!(p.dates.len(), 5);
    }

    #[test]
    fn missing_benchmark_is_config_error() {
        let csv = "date,symbol,close,volume\n2020-01-01,A,1,1\n2020-01-02,A,1,1\n";
        assert!(matches!(parse_panel(csv.as_bytes(), "SPY"), Err(Error::Config(_))));
    }

    #[test]
    fn duplicate_row_is_parse_error_naming_it() {
        let csv = "date,symbol,close,volume\n2020-01-01,A,1,1\n2020-01-02,A,1,1\n2020-01-02,A,2,1\n";
        match parse_panel(csv.as_bytes(), "A") {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 4);
                assert!(message.contains("2020-01-02") && message.contains('A'));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_row_reports_line() {
        let csv = "date,symbol,close,volume\n2020-01-01,A,1,1\n2020-01-02,A,abc,1\n";
        match parse_panel(csv.as_bytes(), "A") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn save_then_load_round_trips() {
        let p = small_panel(
            &[&[100.125, 3.3], &[101.0, 3.1000000000000001], &[99.99, 1e-3]],
            &["X", "SPY"],
            "SPY",
        );
        let mut buf = Vec::new();
        write_panel(&p, &mut buf).unwrap();
        let back = parse_panel(buf.as_slice(), "SPY").unwrap();
        assert_eq!(back, p);
        let mut buf2 = Vec::new();
        write_panel(&back, &mut buf2).unwrap();
        assert_eq!(buf, buf2);
    }

    #[test]
    fn filter_identity_when_everything_passes() {
        let p = small_panel(&[&[10.0, 20.0], &[11.0, 21.0]], &["A", "B"], "B");
        let f = UniverseFilter {
            min_history_days: 2,
            min_median_price: 1.0,
            max_symbols: 10,
        };
        assert_eq!(filter_universe(&p, &f).unwrap(), p);
    }

    #[test]
    fn filter_drops_cheap_symbol() {
        let p = small_panel(&[&[10.0, 0.5, 20.0], &[11.0, 0.6, 21.0]], &["A", "PENNY", "B"], "B");
        let f = UniverseFilter {
            min_history_days: 2,
            min_median_price: 1.0,
            max_symbols: 10,
        };
        assert_eq!(filter_universe(&p, &f).unwrap().symbols, vec!["A", "B"]);
    }

    #[test]
    fn filter_caps_by_dollar_volume_and_forces_benchmark() {
        let n_sym = 50;
        let symbols: Vec<String> = (0..n_sym).map(|j| format!("S{j:02}")).collect();
        let dates: Vec<NaiveDate> = (1..=3).map(d).collect();
        let close = vec![vec![10.0; n_sym]; 3];
        // Benchmark S00 has the lowest dollar volume.
        let volume = vec![(0..n_sym).map(|j| (j + 1) as f64 * 100.0).collect(); 3];
        let p = PricePanel::new(dates, symbols, close, volume, "S00").unwrap();
        let f = UniverseFilter {
            min_history_days: 3,
            min_median_price: 1.0,
            max_symbols: 39,
        };
        let out = filter_universe(&p, &f).unwrap();
        assert_eq!(out.symbols.len(), 39);
        assert!(out.symbols.contains(&"S00".to_string()));
        assert!(out.symbols.contains(&"S49".to_string()));
        assert!(!out.symbols.contains(&"S11".to_string()));
    }
}
