//! Reference strategies run through the same windows, execution stack and
//! metric code as the engine.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::execution::ExecutionConfig;
use crate::league::{greedy_rollout, train_rl_br, BrConfig, BrData, RlConfig};
use crate::numeric::{ridge_with_intercept, sample_std};
use crate::policy::AgentPolicy;
use crate::rng::{keys, stream};
use crate::walkforward::{
    aggregate, finish_window, make_windows, MarketData, SealedView, TrainingConfig, WalkForwardConfig,
    WalkForwardReport, Window,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BaselineSpec {
    BuyAndHold,
    ZeroSignal,
    RandomSignal,
    PanelRidge {
        #[serde(default = "default_ridge_lambda")]
        lambda: f64,
    },
    DqnLite {
        #[serde(default = "default_episodes")]
        episodes: usize,
    },
}

fn default_ridge_lambda() -> f64 {
    1.0
}

fn default_episodes() -> usize {
    40
}

impl BaselineSpec {
    /// Parse a bare kind name with default parameters.
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "buy_and_hold" => Ok(BaselineSpec::BuyAndHold),
            "zero_signal" => Ok(BaselineSpec::ZeroSignal),
            "random_signal" => Ok(BaselineSpec::RandomSignal),
            "panel_ridge" => Ok(BaselineSpec::PanelRidge {
                lambda: default_ridge_lambda(),
            }),
            "dqn_lite" => Ok(BaselineSpec::DqnLite {
                episodes: default_episodes(),
            }),
            other => Err(Error::config(format!("unknown baseline kind `{other}`"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            BaselineSpec::BuyAndHold => "buy_and_hold",
            BaselineSpec::ZeroSignal => "zero_signal",
            BaselineSpec::RandomSignal => "random_signal",
            BaselineSpec::PanelRidge { .. } => "panel_ridge",
            BaselineSpec::DqnLite { .. } => "dqn_lite",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            BaselineSpec::PanelRidge { lambda } if !(*lambda >= 0.0) => {
                Err(Error::config("panel_ridge lambda must be >= 0"))
            }
            BaselineSpec::DqnLite { episodes: 0 } => Err(Error::config("dqn_lite needs episodes >= 1")),
            _ => Ok(()),
        }
    }
}

/// Baseline signal over `[window.start, window.test_end)`. Anything fitted
/// reads only the window's train split.
pub fn baseline_signal(
    spec: &BaselineSpec,
    data: &MarketData,
    window: Window,
    cfg: &TrainingConfig,
    exec: &ExecutionConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    let n = window.test_end - window.start;
    let view = SealedView::new(data, window);
    let train = view.slice(window.start, window.val_end)?;
    let full = view.unseal().slice(window.start, window.test_end)?;
    let mut rng = stream(seed, keys::BASELINE + window.index as u64);
    Ok(match spec {
        BaselineSpec::BuyAndHold => vec![1.0; n],
        BaselineSpec::ZeroSignal => vec![0.0; n],
        BaselineSpec::RandomSignal => {
            let b = &cfg.bounds;
            (0..n).map(|_| b.lower + (b.upper - b.lower) * rng.random::<f64>()).collect()
        }
        BaselineSpec::PanelRidge { lambda } => {
            let m = train.rows.len() - 1;
            let fit = ridge_with_intercept(&train.rows[..m], &train.market[1..], *lambda)?;
            let in_sample: Vec<f64> = train.rows[..m].iter().map(|x| fit.predict(x)).collect();
            let sd = sample_std(&in_sample);
            full.rows
                .iter()
                .map(|x| {
                    let z = if sd > 0.0 { fit.predict(x) / sd } else { 0.0 };
                    cfg.bounds.clip(0.5 + 0.5 * z)
                })
                .collect()
        }
        BaselineSpec::DqnLite { episodes } => {
            let br = BrConfig {
                rl: RlConfig {
                    episodes: *episodes,
                    ..cfg.br.rl.clone()
                },
                ..cfg.br.clone()
            };
            let flat = vec![0.0; train.rows.len()];
            let train_data = BrData {
                rows: train.rows,
                regimes: train.regimes,
                returns: train.market,
                sigma: train.sigma,
                opp: &flat,
                summary_cols: data.summary_columns(),
            };
            let template = AgentPolicy::zero(0, data.dim());
            let out = train_rl_br(&train_data, &br, exec, &template, 0, &mut rng)?;
            let flat = vec![0.0; n];
            let full_data = BrData {
                rows: full.rows,
                regimes: full.regimes,
                returns: full.market,
                sigma: full.sigma,
                opp: &flat,
                summary_cols: data.summary_columns(),
            };
            greedy_rollout(&out.q, &full_data, &br.rl)
        }
    })
}

pub fn run_baseline(
    spec: &BaselineSpec,
    data: &MarketData,
    wf: &WalkForwardConfig,
    cfg: &TrainingConfig,
    exec: &ExecutionConfig,
    seed: u64,
) -> Result<WalkForwardReport> {
    spec.validate()?;
    exec.validate()?;
    let windows = make_windows(data.len(), wf)?;
    let results = windows
        .par_iter()
        .map(|w| {
            let s = baseline_signal(spec, data, *w, cfg, exec, seed)?;
            finish_window(data, *w, &s, exec, cfg, 0, Vec::new(), 0)
        })
        .collect::<Result<Vec<_>>>()?;
    aggregate(results, &cfg.selection)
}
