//! Evidence bundles: every table and diagnostic of one run, the echoed and
//! resolved configs, and a manifest of SHA-256 digests. Nothing time-dependent
//! is written, so identical inputs give byte-identical bundles.
//!
//! The `cmd_*` functions are the library side of the CLI subcommands.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::run_baseline;
use crate::config::{LoadedConfig, RunConfig};
use crate::error::{Error, Result};
use crate::execution::{stress_table, StressRow, StressScenario};
use crate::panel::{compute_returns, save_panel, PricePanel};
use crate::stats::{bootstrap_mean_test, default_nw_lag, fdr_adjust, newey_west_test, spa_lite_test, wrc_test, TestResult};
use crate::synthetic::{generate_synthetic, SyntheticSpec};
use crate::walkforward::{
    cross_benchmark_eval, run_walkforward, Aggregate, CrossRow, OosSeries, WalkForwardReport, WindowResult,
};

pub const CONFIG_ECHO: &str = "config.toml";
pub const RESOLVED_CONFIG: &str = "resolved_config.toml";
pub const REPORT: &str = "report.json";
pub const WINDOWS: &str = "windows.csv";
pub const OOS_DAILY: &str = "oos_daily.csv";
pub const STRESS: &str = "stress.csv";
pub const CROSS_MARKET: &str = "cross_market.csv";
pub const DIAGNOSTICS: &str = "diagnostics";
pub const MANIFEST: &str = "manifest.json";

/// One row of windows.csv; `source` is `engine` or a baseline name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowRow {
    pub source: String,
    pub window: usize,
    pub train_start: NaiveDate,
    pub train_end: NaiveDate,
    pub val_start: NaiveDate,
    pub val_end: NaiveDate,
    pub test_start: NaiveDate,
    pub test_end: NaiveDate,
    pub checkpoint_id: u64,
    pub val_score: f64,
    pub excess_sharpe: f64,
    pub excess_cum_return: f64,
    pub mean_excess_1d: f64,
    pub excess_cvar: f64,
    pub excess_worst_day: f64,
    pub beta: f64,
    pub max_drawdown: f64,
    pub hit_ratio: f64,
    pub final_nash_gap: f64,
    pub generations: usize,
}

impl WindowRow {
    pub fn from_result(source: &str, r: &WindowResult) -> Self {
        let m = &r.test_metrics;
        WindowRow {
            source: source.to_string(),
            window: r.window.index,
            train_start: r.train_range.0,
            train_end: r.train_range.1,
            val_start: r.val_range.0,
            val_end: r.val_range.1,
            test_start: r.test_range.0,
            test_end: r.test_range.1,
            checkpoint_id: r.checkpoint_id,
            val_score: r.val_score,
            excess_sharpe: m.excess_sharpe,
            excess_cum_return: m.excess_cum_return,
            mean_excess_1d: m.mean_excess_1d,
            excess_cvar: m.excess_cvar,
            excess_worst_day: m.excess_worst_day,
            beta: m.beta,
            max_drawdown: m.max_drawdown,
            hit_ratio: r.hit_ratio,
            final_nash_gap: r.nash_gap_trace.last().copied().unwrap_or(0.0),
            generations: r.generations_run,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct OosRow {
    date: NaiveDate,
    strategy_return: f64,
    benchmark_return: f64,
    position: f64,
    signal: f64,
    market_return: f64,
    sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub seed: u64,
    pub benchmark: String,
    pub n_windows: usize,
    pub oos_days: usize,
    pub aggregate: Aggregate,
    pub baselines: BTreeMap<String, Aggregate>,
    pub stress: Vec<StressRow>,
    pub cross_market: Vec<CrossRow>,
    pub windows: Vec<WindowRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub files: BTreeMap<String, String>,
    pub bundle_hash: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub bundle_hash: String,
    pub aggregate: Aggregate,
    pub n_windows: usize,
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::data(format!("cannot read {}: {e}", path.display())))
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = read_text(path)?;
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

pub fn write_oos(path: &Path, oos: &OosSeries) -> Result<()> {
    let rows: Vec<OosRow> = (0..oos.len())
        .map(|i| OosRow {
            date: oos.dates[i],
            strategy_return: oos.pnl[i],
            benchmark_return: oos.bench[i],
            position: oos.positions[i],
            signal: oos.signal[i],
            market_return: oos.market[i],
            sigma: oos.sigma[i],
        })
        .collect();
    write_csv(path, &rows)
}

pub fn read_oos(path: &Path) -> Result<OosSeries> {
    let rows: Vec<OosRow> = read_csv(path)?;
    let mut o = OosSeries::default();
    for r in rows {
        o.dates.push(r.date);
        o.pnl.push(r.strategy_return);
        o.bench.push(r.benchmark_return);
        o.positions.push(r.position);
        o.signal.push(r.signal);
        o.market.push(r.market_return);
        o.sigma.push(r.sigma);
    }
    Ok(o)
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn collect_files(root: &Path, dir: &Path, out: &mut BTreeMap<String, String>) -> Result<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
            continue;
        }
        let rel = path
            .strip_prefix(root)
            .map_err(|e| Error::contract(e.to_string()))?
            .components()
            .map(|c| c.as_os_str().to_string_lossy().into_owned())
            .collect::<Vec<_>>()
            .join("/");
        if rel != MANIFEST {
            out.insert(rel, sha256_hex(&fs::read(&path)?));
        }
    }
    Ok(())
}

/// Hash every file in the bundle and write manifest.json.
pub fn write_manifest(dir: &Path) -> Result<Manifest> {
    let mut files = BTreeMap::new();
    collect_files(dir, dir, &mut files)?;
    let listing: String = files.iter().map(|(name, h)| format!("{h}  {name}\n")).collect();
    let manifest = Manifest {
        bundle_hash: sha256_hex(listing.as_bytes()),
        files,
    };
    fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    Ok(serde_json::from_str(&read_text(&dir.join(MANIFEST))?)?)
}

/// Benchmark return series keyed by date for the named panel symbols.
fn panel_benchmarks(panel: &PricePanel, symbols: &[String]) -> Result<BTreeMap<String, BTreeMap<NaiveDate, f64>>> {
    let ret = compute_returns(panel);
    symbols
        .iter()
        .map(|s| {
            let col = ret
                .column(s)
                .ok_or_else(|| Error::data(format!("benchmark symbol {s} is not in the panel")))?;
            Ok((s.clone(), ret.dates.iter().copied().zip(col).collect()))
        })
        .collect()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn clear_diagnostics(dir: &Path) -> Result<()> {
    if !dir.is_dir() {
        return Ok(());
    }
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        if name.starts_with("window_") && name.ends_with(".json") {
            fs::remove_file(path)?;
        }
    }
    Ok(())
}

/// Full walk-forward run plus baselines, stress and cross-benchmark tables,
/// written as a bundle under `out`.
pub fn execute_run(loaded: &LoadedConfig, out: &Path) -> Result<RunSummary> {
    let cfg = &loaded.config;
    cfg.validate()?;
    let panel = cfg.panel(&loaded.base_dir)?;
    let data = cfg.market_data(&panel)?;
    let run = run_walkforward(&data, &cfg.training, &cfg.walkforward, &cfg.execution, cfg.seed)?;
    let baselines = cfg
        .baselines
        .iter()
        .map(|b| {
            let rep = run_baseline(b, &data, &cfg.walkforward, &cfg.training, &cfg.execution, cfg.seed)?;
            Ok((b.name().to_string(), rep))
        })
        .collect::<Result<Vec<(String, WalkForwardReport)>>>()?;
    let report = &run.report;
    let oos = &report.oos;
    let stress = stress_table(&oos.signal, &oos.market, &oos.sigma, &oos.bench, &cfg.stress.scenarios, &cfg.execution)?;
    let mut symbols = vec![cfg.benchmark_symbol().to_string()];
    symbols.extend(cfg.benchmarks.iter().filter(|s| s.as_str() != cfg.benchmark_symbol()).cloned());
    let cross = cross_benchmark_eval(&oos.dates, &oos.pnl, &panel_benchmarks(&panel, &symbols)?)?;

    let mut rows: Vec<WindowRow> = report.windows.iter().map(|r| WindowRow::from_result("engine", r)).collect();
    for (name, rep) in &baselines {
        rows.extend(rep.windows.iter().map(|r| WindowRow::from_result(name, r)));
    }
    let doc = Report {
        seed: cfg.seed,
        benchmark: cfg.benchmark_symbol().to_string(),
        n_windows: report.windows.len(),
        oos_days: oos.len(),
        aggregate: report.aggregate,
        baselines: baselines.iter().map(|(n, r)| (n.clone(), r.aggregate)).collect(),
        stress: stress.clone(),
        cross_market: cross.clone(),
        windows: rows.clone(),
    };

    let diag_dir = out.join(DIAGNOSTICS);
    fs::create_dir_all(&diag_dir)?;
    clear_diagnostics(&diag_dir)?;
    fs::write(out.join(CONFIG_ECHO), &loaded.raw)?;
    fs::write(out.join(RESOLVED_CONFIG), cfg.to_toml()?)?;
    write_json(&out.join(REPORT), &doc)?;
    write_csv(&out.join(WINDOWS), &rows)?;
    write_oos(&out.join(OOS_DAILY), oos)?;
    write_csv(&out.join(STRESS), &stress)?;
    write_csv(&out.join(CROSS_MARKET), &cross)?;
    for d in &run.diagnostics {
        write_json(&diag_dir.join(format!("window_{:03}.json", d.window.index)), d)?;
    }
    let manifest = write_manifest(out)?;
    Ok(RunSummary {
        out_dir: out.to_path_buf(),
        bundle_hash: manifest.bundle_hash,
        aggregate: report.aggregate,
        n_windows: report.windows.len(),
    })
}

pub fn cmd_run(config: &Path, seed: Option<u64>, out: &Path) -> Result<RunSummary> {
    let mut loaded = RunConfig::load(config)?;
    if let Some(s) = seed {
        loaded.config.seed = s;
    }
    execute_run(&loaded, out)
}

/// The resolved config stored in a bundle.
pub fn bundle_config(bundle: &Path) -> Result<RunConfig> {
    RunConfig::parse(&read_text(&bundle.join(RESOLVED_CONFIG))?)
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    scenarios: Vec<StressScenario>,
}

/// Rerun the stored OOS signal under cost multipliers and rewrite stress.csv.
pub fn cmd_stress(bundle: &Path, scenarios: Option<&Path>) -> Result<Vec<StressRow>> {
    let cfg = bundle_config(bundle)?;
    let scenarios = match scenarios {
        Some(p) => {
            let f: ScenarioFile = toml::from_str(&fs::read_to_string(p).map_err(|e| {
                Error::config(format!("cannot read scenarios {}: {e}", p.display()))
            })?)
            .map_err(|e| Error::config(e.to_string()))?;
            f.scenarios
        }
        None => cfg.stress.scenarios.clone(),
    };
    let oos = read_oos(&bundle.join(OOS_DAILY))?;
    let rows = stress_table(&oos.signal, &oos.market, &oos.sigma, &oos.bench, &scenarios, &cfg.execution)?;
    write_csv(&bundle.join(STRESS), &rows)?;
    write_manifest(bundle)?;
    Ok(rows)
}

/// Parse a wide `date,<name>,...` CSV of daily benchmark returns.
pub fn parse_benchmark_returns(text: &str) -> Result<BTreeMap<String, BTreeMap<NaiveDate, f64>>> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let headers = rdr.headers()?.clone();
    if headers.len() < 2 || &headers[0] != "date" {
        return Err(Error::Parse {
            line: 1,
            message: "expected header `date,<benchmark>,...`".into(),
        });
    }
    let mut out: BTreeMap<String, BTreeMap<NaiveDate, f64>> =
        headers.iter().skip(1).map(|h| (h.to_string(), BTreeMap::new())).collect();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let bad = |message: String| Error::Parse { line, message };
        let date = NaiveDate::parse_from_str(&rec[0], "%Y-%m-%d").map_err(|e| bad(e.to_string()))?;
        for (name, field) in headers.iter().skip(1).zip(rec.iter().skip(1)) {
            if field.is_empty() {
                continue;
            }
            let v: f64 = field.parse().map_err(|_| bad(format!("bad return `{field}`")))?;
            out.get_mut(name).expect("header present").insert(date, v);
        }
    }
    Ok(out)
}

pub fn cmd_crossmarket(bundle: &Path, benchmarks_csv: &Path) -> Result<Vec<CrossRow>> {
    let oos = read_oos(&bundle.join(OOS_DAILY))?;
    let bench = parse_benchmark_returns(&read_text(benchmarks_csv)?)?;
    let rows = cross_benchmark_eval(&oos.dates, &oos.pnl, &bench)?;
    write_csv(&bundle.join(CROSS_MARKET), &rows)?;
    write_manifest(bundle)?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseRow {
    pub candidate: String,
    pub reference: String,
    pub n_days: usize,
    pub mean_diff: f64,
    pub nw_statistic: f64,
    pub nw_p: f64,
    pub nw_q: f64,
    pub bootstrap_p: f64,
    pub bootstrap_q: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub reference: String,
    pub pairwise: Vec<PairwiseRow>,
    pub wrc: TestResult,
    /// `None` when every candidate's differential has zero variance.
    pub spa_lite: Option<TestResult>,
}

fn bundle_name(p: &Path) -> String {
    p.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| p.display().to_string())
}

/// Pairwise and family-wide tests of candidate bundles against a reference:
/// another bundle's strategy returns, or the first bundle's benchmark.
pub fn cmd_stats(bundles: &[PathBuf], reference: Option<&Path>, out: &Path) -> Result<StatsReport> {
    if bundles.is_empty() {
        return Err(Error::config("stats needs at least one bundle"));
    }
    let boot = bundle_config(&bundles[0])?.bootstrap;
    let series = bundles
        .iter()
        .map(|b| read_oos(&b.join(OOS_DAILY)))
        .collect::<Result<Vec<_>>>()?;
    let (ref_name, ref_dates, ref_pnl) = match reference {
        Some(r) => {
            let o = read_oos(&r.join(OOS_DAILY))?;
            (bundle_name(r), o.dates, o.pnl)
        }
        None => ("benchmark".to_string(), series[0].dates.clone(), series[0].bench.clone()),
    };
    let diffs = series
        .iter()
        .zip(bundles)
        .map(|(s, b)| {
            if s.dates != ref_dates {
                return Err(Error::data(format!("bundle {} covers different OOS dates", b.display())));
            }
            Ok(s.pnl.iter().zip(&ref_pnl).map(|(a, r)| a - r).collect::<Vec<f64>>())
        })
        .collect::<Result<Vec<_>>>()?;
    let nw = diffs
        .iter()
        .map(|d| newey_west_test(d, default_nw_lag(d.len())))
        .collect::<Result<Vec<_>>>()?;
    let bs = diffs
        .iter()
        .map(|d| bootstrap_mean_test(d, &boot))
        .collect::<Result<Vec<_>>>()?;
    let nw_q = fdr_adjust(&nw.iter().map(|t| t.p_value).collect::<Vec<_>>());
    let bs_q = fdr_adjust(&bs.iter().map(|t| t.p_value).collect::<Vec<_>>());
    let pairwise: Vec<PairwiseRow> = (0..diffs.len())
        .map(|j| PairwiseRow {
            candidate: bundle_name(&bundles[j]),
            reference: ref_name.clone(),
            n_days: diffs[j].len(),
            mean_diff: crate::numeric::mean(&diffs[j]),
            nw_statistic: nw[j].statistic,
            nw_p: nw[j].p_value,
            nw_q: nw_q[j],
            bootstrap_p: bs[j].p_value,
            bootstrap_q: bs_q[j],
        })
        .collect();
    let wrc = wrc_test(&diffs, &boot)?;
    let spa_lite = match spa_lite_test(&diffs, &boot) {
        Ok(t) => Some(t),
        Err(Error::Contract(_)) => None,
        Err(e) => return Err(e),
    };
    let report = StatsReport {
        reference: ref_name,
        pairwise,
        wrc,
        spa_lite,
    };
    fs::create_dir_all(out)?;
    write_csv(&out.join("pairwise.csv"), &report.pairwise)?;
    write_json(&out.join("stats.json"), &report)?;
    Ok(report)
}

/// Generate a synthetic panel CSV from a TOML spec (empty file = defaults).
pub fn cmd_synth(spec: &Path, out: &Path, seed: u64) -> Result<PricePanel> {
    let text = fs::read_to_string(spec)
        .map_err(|e| Error::config(format!("cannot read spec {}: {e}", spec.display())))?;
    let spec: SyntheticSpec = toml::from_str(&text).map_err(|e| Error::config(e.to_string()))?;
    let panel = generate_synthetic(&spec, seed)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    save_panel(&panel, out)?;
    Ok(panel)
}

/// Run `f` on a dedicated pool of `jobs` threads, or the global pool.
pub fn with_jobs<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    match jobs {
        Some(0) => Err(Error::config("--jobs must be at least 1")),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::contract(e.to_string()))?
            .install(f),
        None => f(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn benchmark_csv_parsing() {
        let b = parse_benchmark_returns("date,QQQ,IWM\n2021-01-04,0.01,-0.02\n2021-01-05,,0.003\n").unwrap();
        assert_eq!(b["QQQ"].len(), 1);
        assert_eq!(b["IWM"][&NaiveDate::from_ymd_opt(2021, 1, 5).unwrap()], 0.003);
        assert!(matches!(parse_benchmark_returns("day,QQQ\n"), Err(Error::Parse { .. })));
        assert!(matches!(
            parse_benchmark_returns("date,QQQ\n2021-01-04,abc\n"),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn manifest_hash_tracks_content() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir_all(dir.path().join("sub")).unwrap();
        fs::write(dir.path().join("a.txt"), "x").unwrap();
        fs::write(dir.path().join("sub/b.txt"), "y").unwrap();
        let m1 = write_manifest(dir.path()).unwrap();
        assert_eq!(m1.files.len(), 2);
        assert!(m1.files.contains_key("sub/b.txt"));
        assert_eq!(write_manifest(dir.path()).unwrap(), m1);
        fs::write(dir.path().join("a.txt"), "z").unwrap();
        assert_ne!(write_manifest(dir.path()).unwrap().bundle_hash, m1.bundle_hash);
        assert_eq!(read_manifest(dir.path()).unwrap().files.len(), 2);
    }

    #[test]
    fn oos_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let o = OosSeries {
            dates: vec![NaiveDate::from_ymd_opt(2020, 2, 3).unwrap()],
            pnl: vec![0.1 + 0.2],
            bench: vec![-1e-17],
            positions: vec![1.0 / 3.0],
            signal: vec![0.5],
            market: vec![0.01],
            sigma: vec![0.0],
        };
        let p = dir.path().join("o.csv");
        write_oos(&p, &o).unwrap();
        assert_eq!(read_oos(&p).unwrap(), o);
    }
}
