//! Run configuration: one TOML document with a section per module. Every
//! field has a default, so an empty file is a valid configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::BaselineSpec;
use crate::error::{Error, Result};
use crate::execution::{default_scenarios, ExecutionConfig, StressScenario};
use crate::features::{FeatureConfig, RegimeThresholds};
use crate::panel::{filter_universe, load_panel, PricePanel, UniverseFilter};
use crate::stats::BootstrapConfig;
use crate::synthetic::{generate_synthetic, SyntheticSpec};
use crate::walkforward::{MarketData, TrainingConfig, WalkForwardConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Long-format `date,symbol,close,volume` CSV. Relative paths resolve
    /// against the config file's directory.
    pub csv: Option<PathBuf>,
    pub synthetic: Option<SyntheticSpec>,
    pub benchmark: String,
    pub apply_universe_filter: bool,
    pub universe: UniverseFilter,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            csv: None,
            synthetic: None,
            benchmark: "SPY".into(),
            apply_universe_filter: true,
            universe: UniverseFilter::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StressConfig {
    pub scenarios: Vec<StressScenario>,
}

impl Default for StressConfig {
    fn default() -> Self {
        StressConfig {
            scenarios: default_scenarios(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Panel symbols used as alternative benchmarks in cross_market.csv.
    pub benchmarks: Vec<String>,
    pub baselines: Vec<BaselineSpec>,
    pub data: DataConfig,
    pub features: FeatureConfig,
    pub regimes: RegimeThresholds,
    pub execution: ExecutionConfig,
    pub training: TrainingConfig,
    pub walkforward: WalkForwardConfig,
    pub stress: StressConfig,
    pub bootstrap: BootstrapConfig,
    pub output: OutputConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 7,
            benchmarks: Vec::new(),
            baselines: Vec::new(),
            data: DataConfig::default(),
            features: FeatureConfig::default(),
            regimes: RegimeThresholds::default(),
            execution: ExecutionConfig::default(),
            training: TrainingConfig::default(),
            walkforward: WalkForwardConfig::default(),
            stress: StressConfig::default(),
            bootstrap: BootstrapConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

/// A parsed configuration together with its source text.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub raw: String,
    pub base_dir: PathBuf,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<LoadedConfig> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        let config = RunConfig::parse(&raw)?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(LoadedConfig { config, raw, base_dir })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serialization(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.csv.is_some() && self.data.synthetic.is_some() {
            return Err(Error::config("data.csv and data.synthetic are mutually exclusive"));
        }
        if let Some(s) = &self.data.synthetic {
            s.validate()?;
        }
        self.data.universe.validate()?;
        self.features.validate()?;
        self.regimes.validate()?;
        self.execution.validate()?;
        self.training.validate()?;
        self.walkforward.validate()?;
        self.bootstrap.validate()?;
        for sc in &self.stress.scenarios {
            sc.validate()?;
        }
        for b in &self.baselines {
            b.validate()?;
        }
        Ok(())
    }

    /// Load or generate the price panel. Without a CSV the default
    /// synthetic spec is used.
    pub fn panel(&self, base_dir: &Path) -> Result<PricePanel> {
        let panel = match &self.data.csv {
            Some(p) => {
                let p = if p.is_relative() { base_dir.join(p) } else { p.clone() };
                let raw = load_panel(&p, &self.data.benchmark)?;
                if self.data.apply_universe_filter {
                    filter_universe(&raw, &self.data.universe)?
                } else {
                    raw
                }
            }
            None => {
                let spec = self.data.synthetic.clone().unwrap_or_default();
                generate_synthetic(&spec, self.seed)?
            }
        };
        Ok(panel)
    }

    pub fn market_data(&self, panel: &PricePanel) -> Result<MarketData> {
        MarketData::from_panel(panel, &self.features, &self.regimes, self.execution.sigma_window)
    }

    /// Benchmark symbol actually present in the panel.
    pub fn benchmark_symbol(&self) -> &str {
        match (&self.data.csv, &self.data.synthetic) {
            (None, Some(s)) => &s.benchmark_symbol,
            (None, None) => "SPY",
            _ => &self.data.benchmark,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_default() {
        assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
    }

    #[test]
    fn resolved_config_round_trips() {
        let mut c = RunConfig::default();
        c.baselines = vec![BaselineSpec::ZeroSignal, BaselineSpec::DqnLite { episodes: 12 }];
        c.data.synthetic = Some(SyntheticSpec::default());
        c.benchmarks = vec!["S001".into()];
        let text = c.to_toml().unwrap();
        assert_eq!(RunConfig::parse(&text).unwrap(), c);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(matches!(RunConfig::parse("bogus = 1"), Err(Error::Config(_))));
        assert!(matches!(
            RunConfig::parse("[walkforward]\nval_fraction = 1.5"),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            RunConfig::parse("[[baselines]]\nkind = \"lstm\""),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn missing_file_is_config_error() {
        let e = RunConfig::load("/nonexistent/run.toml").unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }
}
