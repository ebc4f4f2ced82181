use evonash_core::config::{LoadedConfig, RunConfig};
use evonash_core::execution::ExecutionConfig;
use evonash_core::features::{FeatureConfig, RegimeThresholds};
use evonash_core::panel::{parse_panel, write_panel};
use evonash_core::synthetic::{generate_synthetic, SyntheticSpec};
use evonash_core::walkforward::{run_walkforward, MarketData, TrainingConfig, WalkForwardConfig};

fn small_spec() -> SyntheticSpec {
    SyntheticSpec {
        horizon: 520,
        n_symbols: 4,
        ..Default::default()
    }
}

#[test]
fn csv_round_trip_gives_identical_walkforward() {
    let panel = generate_synthetic(&small_spec(), 3).unwrap();
    let mut buf = Vec::new();
    write_panel(&panel, &mut buf).unwrap();
    let reloaded = parse_panel(buf.as_slice(), "SPY").unwrap();

    let mut training = TrainingConfig::default();
    training.evolution.population_size = 6;
    let wf = WalkForwardConfig {
        max_windows: 3,
        ..Default::default()
    };
    let exec = ExecutionConfig::default();
    let run = |p| {
        let data = MarketData::from_panel(p, &FeatureConfig::default(), &RegimeThresholds::default(), 20).unwrap();
        run_walkforward(&data, &training, &wf, &exec, 1).unwrap().report
    };
    let (a, b) = (run(&panel), run(&reloaded));
    assert_eq!(a.windows.len(), 3);
    for (x, y) in a.oos.pnl.iter().zip(&b.oos.pnl) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn stitched_oos_covers_every_test_day_once() {
    let panel = generate_synthetic(&small_spec(), 4).unwrap();
    let data = MarketData::from_panel(&panel, &FeatureConfig::default(), &RegimeThresholds::default(), 20).unwrap();
    let mut training = TrainingConfig::default();
    training.evolution.population_size = 6;
    let wf = WalkForwardConfig {
        max_windows: 4,
        ..Default::default()
    };
    let report = run_walkforward(&data, &training, &wf, &ExecutionConfig::default(), 2).unwrap().report;
    assert_eq!(report.oos.dates.len(), 4 * wf.test_days);
    assert!(report.oos.dates.windows(2).all(|d| d[0] < d[1]));
    // clipped to [0, 1] before the per-checkpoint scale multiplier
    let top = training.scale_grid.points().unwrap().into_iter().fold(1.0, f64::max);
    assert!(report.oos.signal.iter().all(|s| *s >= 0.0 && *s <= top + 1e-12));
    assert_eq!(report.aggregate.n_windows, 4);
}

#[test]
fn config_round_trips_through_toml() {
    let raw = "seed = 3\n[data.synthetic]\nhorizon = 400\n[walkforward]\nmax_windows = 2\n";
    let cfg = RunConfig::parse(raw).unwrap();
    let again = RunConfig::parse(&cfg.to_toml().unwrap()).unwrap();
    assert_eq!(again.seed, 3);
    assert_eq!(again.walkforward.max_windows, 2);
    let loaded = LoadedConfig {
        config: again,
        raw: raw.into(),
        base_dir: Default::default(),
    };
    let panel = loaded.config.panel(&loaded.base_dir).unwrap();
    assert_eq!(panel.dates.len(), 400);
}
