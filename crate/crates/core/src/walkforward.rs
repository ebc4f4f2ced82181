//! Walk-forward protocol: windowing, per-window tournament training,
//! constrained checkpoint selection and out-of-sample aggregation.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::execution::{optimize_scale, simulate, trailing_sigma, ExecutionConfig, ScaleGrid, ScaleObjective};
use crate::features::{build_features, classify_market, names, FeatureConfig, Regime, RegimeThresholds};
use crate::game::{build_payoff, ensemble_signal, psro_solve, PsroSolution};
use crate::league::{inject_br, ridge_br, train_rl_br, BrConfig, BrData, BrKind};
use crate::metrics::{beta, excess, hit_ratio, MetricSet};
use crate::numeric::mean;
use crate::panel::{compute_returns, PricePanel};
use crate::policy::{AgentPolicy, SignalBounds};
use crate::population::{
    constraint_violation, diversity_scores, evolve_step, fitness, rank_desc, strategy_utility, AgentScore,
    EvolutionConfig, FitnessWeights, Population, UtilityWeights,
};
use crate::rng::{keys, stream};
use crate::signalproc::{
    amplify_signal, feature_quality_weights, quality_gate, rank_confidence, reweight_rows, AmplifyConfig,
    FactorModel, FeatureQualityConfig, GateConfig, NeutralizeConfig,
};
use crate::stats::{robust_score, selection_score, window_std, SelectionWeights};

/// Date-aligned inputs for the engine. Row `t` holds the trailing features
/// known at the close of `dates[t]`; `market[t]` and `bench[t]` are the
/// returns realized on that date.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketData {
    pub dates: Vec<NaiveDate>,
    pub names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub regimes: Vec<Regime>,
    pub market: Vec<f64>,
    pub bench: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl MarketData {
    pub fn from_panel(panel: &PricePanel, feat: &FeatureConfig, th: &RegimeThresholds, sigma_window: usize) -> Result<Self> {
        let ret = compute_returns(panel);
        let market = ret.market_returns();
        let fm = build_features(&ret, panel, feat)?;
        let rs = classify_market(&ret.dates, &market, th);
        let sigma = trailing_sigma(&market, sigma_window);
        let off = ret.dates.len() - fm.dates.len();
        let regimes = fm
            .dates
            .iter()
            .map(|d| {
                rs.label_on(*d)
                    .ok_or_else(|| Error::data(format!("no regime label on {d}; regime window exceeds feature warm-up")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MarketData {
            dates: fm.dates,
            names: fm.names,
            rows: fm.values,
            regimes,
            market: market[off..].to_vec(),
            bench: ret.benchmark_returns[off..].to_vec(),
            sigma: sigma[off..].to_vec(),
        })
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Columns used as factor exposures for neutralization.
    pub fn factor_columns(&self) -> Vec<usize> {
        [names::BETA, names::LS_MOMENTUM]
            .iter()
            .filter_map(|n| self.column(n))
            .collect()
    }

    /// Two columns summarizing the market state for the Q-learner.
    pub fn summary_columns(&self) -> [usize; 2] {
        let a = self.column(names::MKT_MEAN_MEDIUM).unwrap_or(0);
        let b = self.column(names::MKT_VOL_MEDIUM).unwrap_or(1.min(self.dim().saturating_sub(1)));
        [a, b]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WalkForwardConfig {
    pub train_days: usize,
    pub test_days: usize,
    pub step_days: usize,
    pub max_windows: usize,
    pub val_fraction: f64,
    pub generation_patience: usize,
    pub round_patience: usize,
    /// Average the top checkpoints' signals instead of using only the best.
    pub checkpoint_ensemble: bool,
    pub ensemble_top: usize,
}

impl Default for WalkForwardConfig {
    fn default() -> Self {
        WalkForwardConfig {
            train_days: 252,
            test_days: 21,
            step_days: 21,
            max_windows: 120,
            val_fraction: 0.2,
            generation_patience: 2,
            round_patience: 2,
            checkpoint_ensemble: false,
            ensemble_top: 3,
        }
    }
}

impl WalkForwardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.train_days > self.test_days && self.test_days >= 1) {
            return Err(Error::config("walk-forward needs train_days > test_days >= 1"));
        }
        if self.step_days == 0 || self.max_windows == 0 {
            return Err(Error::config("step_days and max_windows must be >= 1"));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::config("val_fraction must lie in (0, 1)"));
        }
        if self.checkpoint_ensemble && self.ensemble_top == 0 {
            return Err(Error::config("ensemble_top must be >= 1"));
        }
        let fit = self.fit_days();
        if fit < 2 || fit >= self.train_days {
            return Err(Error::config("val_fraction leaves an empty fit or validation split"));
        }
        Ok(())
    }

    /// `floor((1 - val_fraction) * train_days)`.
    pub fn fit_days(&self) -> usize {
        ((1.0 - self.val_fraction) * self.train_days as f64 + 1e-9).floor() as usize
    }
}

/// Absolute index ranges of one window: fit `[start, fit_end)`, validation
/// `[fit_end, val_end)`, test `[val_end, test_end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub index: usize,
    pub start: usize,
    pub fit_end: usize,
    pub val_end: usize,
    pub test_end: usize,
}

impl Window {
    pub fn n_fit(&self) -> usize {
        self.fit_end - self.start
    }

    pub fn n_train(&self) -> usize {
        self.val_end - self.start
    }
}

pub fn make_windows(n_dates: usize, cfg: &WalkForwardConfig) -> Result<Vec<Window>> {
    cfg.validate()?;
    let span = cfg.train_days + cfg.test_days;
    if n_dates < span {
        return Err(Error::data(format!(
            "{n_dates} dates cannot hold one {}-day window",
            span
        )));
    }
    let n = ((n_dates - span) / cfg.step_days + 1).min(cfg.max_windows);
    let fit = cfg.fit_days();
    Ok((0..n)
        .map(|w| {
            let start = w * cfg.step_days;
            Window {
                index: w,
                start,
                fit_end: start + fit,
                val_end: start + cfg.train_days,
                test_end: start + span,
            }
        })
        .collect())
}

/// Window-local view of the data. Until it is unsealed, reading past the
/// validation split or before the window start is a contract error.
pub struct SealedView<'a> {
    data: &'a MarketData,
    window: Window,
    sealed: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct DataSlice<'a> {
    pub dates: &'a [NaiveDate],
    pub rows: &'a [Vec<f64>],
    pub regimes: &'a [Regime],
    pub market: &'a [f64],
    pub bench: &'a [f64],
    pub sigma: &'a [f64],
}

impl<'a> SealedView<'a> {
    pub fn new(data: &'a MarketData, window: Window) -> Self {
        SealedView {
            data,
            window,
            sealed: true,
        }
    }

    pub fn is_sealed(&self) -> bool {
        self.sealed
    }

    pub fn unseal(self) -> Self {
        SealedView { sealed: false, ..self }
    }

    pub fn slice(&self, from: usize, to: usize) -> Result<DataSlice<'a>> {
        let limit = if self.sealed { self.window.val_end } else { self.window.test_end };
        if from < self.window.start || to > limit || from > to {
            return Err(Error::contract(format!(
                "window {} view{} exposes [{}, {limit}); requested [{from}, {to})",
                self.window.index,
                if self.sealed { " (sealed)" } else { "" },
                self.window.start
            )));
        }
        let d = self.data;
        Ok(DataSlice {
            dates: &d.dates[from..to],
            rows: &d.rows[from..to],
            regimes: &d.regimes[from..to],
            market: &d.market[from..to],
            bench: &d.bench[from..to],
            sigma: &d.sigma[from..to],
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PsroConfig {
    pub eta: f64,
    pub iterations: usize,
}

impl Default for PsroConfig {
    fn default() -> Self {
        PsroConfig {
            eta: 0.25,
            iterations: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub evolution: EvolutionConfig,
    pub psro: PsroConfig,
    pub br: BrConfig,
    pub utility: UtilityWeights,
    pub fitness: FitnessWeights,
    pub selection: SelectionWeights,
    pub neutralize: NeutralizeConfig,
    pub amplify: AmplifyConfig,
    pub gate: GateConfig,
    pub feature_quality: FeatureQualityConfig,
    pub scale_enabled: bool,
    pub scale_grid: ScaleGrid,
    pub scale_objective: ScaleObjective,
    pub bounds: SignalBounds,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            evolution: EvolutionConfig::default(),
            psro: PsroConfig::default(),
            br: BrConfig::default(),
            utility: UtilityWeights::default(),
            fitness: FitnessWeights::default(),
            selection: SelectionWeights::default(),
            neutralize: NeutralizeConfig::default(),
            amplify: AmplifyConfig::default(),
            gate: GateConfig::default(),
            feature_quality: FeatureQualityConfig::default(),
            scale_enabled: true,
            scale_grid: ScaleGrid::default(),
            scale_objective: ScaleObjective::default(),
            bounds: SignalBounds::default(),
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        self.evolution.validate()?;
        if !(self.psro.eta >= 0.0) || self.psro.iterations == 0 {
            return Err(Error::config("psro needs eta >= 0 and iterations >= 1"));
        }
        self.br.validate()?;
        self.utility.validate()?;
        self.fitness.validate()?;
        self.selection.validate()?;
        self.neutralize.validate()?;
        self.amplify.validate()?;
        self.gate.validate()?;
        self.feature_quality.validate()?;
        self.scale_grid.points()?;
        self.bounds.validate()
    }
}

/// Frozen meta-policy: the population, its mixture and the post-processing state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub id: u64,
    pub round: usize,
    pub generation: usize,
    pub agents: Vec<AgentPolicy>,
    pub meta: Vec<f64>,
    pub factor: Option<FactorModel>,
    pub scale: f64,
    pub val_score: f64,
    pub val_violation: f64,
    pub val_metrics: MetricSet,
}

/// Neutralize, amplify, gate and clip an ensemble signal.
pub fn post_process(
    ens: &[f64],
    factor_rows: &[Vec<f64>],
    model: Option<&FactorModel>,
    cfg: &TrainingConfig,
) -> Result<Vec<f64>> {
    let mut s = match model {
        Some(m) if cfg.neutralize.enabled => m.apply(ens, factor_rows, cfg.neutralize.omega)?,
        _ => ens.to_vec(),
    };
    if cfg.amplify.enabled {
        s = amplify_signal(&s, &cfg.amplify);
    }
    if cfg.gate.enabled {
        let c = rank_confidence(ens, cfg.gate.window);
        s = quality_gate(&s, &c, &cfg.gate)?;
    }
    Ok(s.into_iter().map(|v| cfg.bounds.clip(v)).collect())
}

impl Checkpoint {
    /// Executable signal over the given rows (reweighted features).
    pub fn signal(&self, rows: &[Vec<f64>], regimes: &[Regime], factor_rows: &[Vec<f64>], cfg: &TrainingConfig) -> Result<Vec<f64>> {
        let signals = self
            .agents
            .iter()
            .map(|a| a.signal_path(rows, regimes, &cfg.bounds))
            .collect::<Result<Vec<_>>>()?;
        let ens = ensemble_signal(&self.meta, &signals)?;
        let processed = post_process(&ens, factor_rows, self.factor.as_ref(), cfg)?;
        Ok(processed.into_iter().map(|v| v * self.scale).collect())
    }
}

fn pick_columns(rows: &[Vec<f64>], cols: &[usize]) -> Vec<Vec<f64>> {
    rows.iter().map(|r| cols.iter().map(|&j| r[j]).collect()).collect()
}

struct Ctx<'a> {
    cfg: &'a TrainingConfig,
    exec: &'a ExecutionConfig,
    train: DataSlice<'a>,
    rows: Vec<Vec<f64>>,
    factors: Vec<Vec<f64>>,
    n_fit: usize,
    summary_cols: [usize; 2],
}

struct GenEval {
    signals: Vec<Vec<f64>>,
    scores: Vec<AgentScore>,
    fitness: Vec<f64>,
    psro: PsroSolution,
}

fn evaluate(pop: &Population, ctx: &Ctx) -> Result<GenEval> {
    let nf = ctx.n_fit;
    let (market, sigma, bench) = (&ctx.train.market[..nf], &ctx.train.sigma[..nf], &ctx.train.bench[..nf]);
    let per_agent = pop
        .agents
        .par_iter()
        .map(|a| {
            let s = a.signal_path(&ctx.rows, ctx.train.regimes, &ctx.cfg.bounds)?;
            let path = simulate(&s[..nf], market, sigma, ctx.exec)?;
            Ok((s, path.pnl))
        })
        .collect::<Result<Vec<_>>>()?;
    let (signals, pnls): (Vec<Vec<f64>>, Vec<Vec<f64>>) = per_agent.into_iter().unzip();
    let means: Vec<f64> = pnls.iter().map(|p| mean(p)).collect();
    let a = build_payoff(&means)?;
    let psro = psro_solve(&a, ctx.cfg.psro.eta, ctx.cfg.psro.iterations)?;
    let fit_signals: Vec<Vec<f64>> = signals.iter().map(|s| s[..nf].to_vec()).collect();
    let ens = ensemble_signal(&psro.average, &fit_signals)?;
    let ens_mean = mean(&simulate(&ens, market, sigma, ctx.exec)?.pnl);
    let u = pnls
        .iter()
        .map(|p| strategy_utility(p, bench, &ctx.cfg.utility))
        .collect::<Result<Vec<_>>>()?;
    let d = diversity_scores(&fit_signals);
    let l: Vec<f64> = means.iter().map(|m| m - ens_mean).collect();
    let betas: Vec<f64> = pnls.iter().map(|p| beta(p, bench)).collect();
    let f = fitness(&a, &psro.average, &u, &d, &l, &betas, &ctx.cfg.fitness)?;
    let scores = (0..pop.len())
        .map(|k| AgentScore {
            id: pop.agents[k].id,
            mean_pnl: means[k],
            utility: u[k],
            violation: constraint_violation(&pnls[k], bench, &ctx.cfg.utility),
            diversity: d[k],
            league: l[k],
            beta: betas[k],
            fitness: f[k],
        })
        .collect();
    Ok(GenEval {
        signals,
        scores,
        fitness: f,
        psro,
    })
}

fn validation_score(signal: &[f64], ctx: &Ctx) -> Result<(f64, f64, MetricSet)> {
    let path = simulate(signal, ctx.train.market, ctx.train.sigma, ctx.exec)?;
    score_slice(&path.pnl[ctx.n_fit..], &ctx.train.bench[ctx.n_fit..], ctx.cfg)
}

fn score_slice(pnl: &[f64], bench: &[f64], cfg: &TrainingConfig) -> Result<(f64, f64, MetricSet)> {
    let m = MetricSet::compute(pnl, bench, cfg.utility.alpha_cvar);
    let v = constraint_violation(pnl, bench, &cfg.utility);
    Ok((selection_score(&m, v, &cfg.selection), v, m))
}

fn build_checkpoint(pop: &Population, ev: &GenEval, ctx: &Ctx, id: u64, round: usize, generation: usize) -> Result<Checkpoint> {
    let nf = ctx.n_fit;
    let cfg = ctx.cfg;
    let ens = ensemble_signal(&ev.psro.average, &ev.signals)?;
    let factor = if cfg.neutralize.enabled && !ctx.factors.first().is_none_or(|r| r.is_empty()) {
        Some(FactorModel::fit(&ens[..nf], &ctx.factors[..nf], cfg.neutralize.lambda_neu)?)
    } else {
        None
    };
    let processed = post_process(&ens, &ctx.factors, factor.as_ref(), cfg)?;
    let scale = if cfg.scale_enabled {
        optimize_scale(
            &processed[..nf],
            &ctx.train.market[..nf],
            &ctx.train.sigma[..nf],
            &ctx.train.bench[..nf],
            ctx.exec,
            &cfg.scale_grid,
            &cfg.scale_objective,
        )?
        .scale
    } else {
        1.0
    };
    let signal: Vec<f64> = processed.iter().map(|v| v * scale).collect();
    let (val_score, val_violation, val_metrics) = validation_score(&signal, ctx)?;
    Ok(Checkpoint {
        id,
        round,
        generation,
        agents: pop.agents.clone(),
        meta: ev.psro.average.clone(),
        factor,
        scale,
        val_score,
        val_violation,
        val_metrics,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationDiag {
    pub round: usize,
    pub generation: usize,
    pub checkpoint_id: u64,
    pub val_score: f64,
    pub improved: bool,
    pub scale: f64,
    pub meta: Vec<f64>,
    pub nash_gap_average: f64,
    pub nash_gap_last: f64,
    pub gap_trace: Vec<f64>,
    pub agents: Vec<AgentScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrDiag {
    pub round: usize,
    pub kind: BrKind,
    pub agent_id: u64,
    pub replaced_slot: usize,
    pub episode_rewards: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowDiagnostics {
    pub window: Window,
    pub feature_quality_weights: Vec<f64>,
    pub generations: Vec<GenerationDiag>,
    pub best_responses: Vec<BrDiag>,
    pub selected: Vec<Checkpoint>,
}

/// Daily out-of-sample series.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OosSeries {
    pub dates: Vec<NaiveDate>,
    pub pnl: Vec<f64>,
    pub bench: Vec<f64>,
    pub positions: Vec<f64>,
    pub signal: Vec<f64>,
    pub market: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl OosSeries {
    fn extend(&mut self, o: &OosSeries) {
        self.dates.extend(&o.dates);
        self.pnl.extend(&o.pnl);
        self.bench.extend(&o.bench);
        self.positions.extend(&o.positions);
        self.signal.extend(&o.signal);
        self.market.extend(&o.market);
        self.sigma.extend(&o.sigma);
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowResult {
    pub window: Window,
    pub train_range: (NaiveDate, NaiveDate),
    pub val_range: (NaiveDate, NaiveDate),
    pub test_range: (NaiveDate, NaiveDate),
    pub checkpoint_id: u64,
    pub val_score: f64,
    pub test_metrics: MetricSet,
    pub nash_gap_trace: Vec<f64>,
    pub hit_ratio: f64,
    pub generations_run: usize,
    pub oos: OosSeries,
}

/// Run a window's executable signal over `[start, test_end)` and score the test slice.
pub fn finish_window(
    data: &MarketData,
    window: Window,
    signal: &[f64],
    exec: &ExecutionConfig,
    cfg: &TrainingConfig,
    checkpoint_id: u64,
    nash_gap_trace: Vec<f64>,
    generations_run: usize,
) -> Result<WindowResult> {
    let full = SealedView::new(data, window).unseal().slice(window.start, window.test_end)?;
    if signal.len() != full.dates.len() {
        return Err(Error::contract("window signal length differs from the window span"));
    }
    let path = simulate(signal, full.market, full.sigma, exec)?;
    let nt = window.n_train();
    let (val_score, _, _) = score_slice(&path.pnl[window.n_fit()..nt], &full.bench[window.n_fit()..nt], cfg)?;
    let pnl = &path.pnl[nt..];
    let bench = &full.bench[nt..];
    let test_metrics = MetricSet::compute(pnl, bench, cfg.utility.alpha_cvar);
    let held = &path.positions[nt - 1..path.positions.len() - 1];
    let d = full.dates;
    Ok(WindowResult {
        window,
        train_range: (d[0], d[window.n_fit() - 1]),
        val_range: (d[window.n_fit()], d[nt - 1]),
        test_range: (d[nt], d[d.len() - 1]),
        checkpoint_id,
        val_score,
        test_metrics,
        nash_gap_trace,
        hit_ratio: hit_ratio(held, &excess(pnl, bench)),
        generations_run,
        oos: OosSeries {
            dates: d[nt..].to_vec(),
            pnl: pnl.to_vec(),
            bench: bench.to_vec(),
            positions: path.positions[nt..].to_vec(),
            signal: signal[nt..].to_vec(),
            market: full.market[nt..].to_vec(),
            sigma: full.sigma[nt..].to_vec(),
        },
    })
}

pub struct WindowOutcome {
    pub result: WindowResult,
    pub diagnostics: WindowDiagnostics,
}

/// Tournament training inside one window, then a single evaluation of the
/// frozen checkpoint on the test slice.
pub fn run_window(
    data: &MarketData,
    window: Window,
    cfg: &TrainingConfig,
    wf: &WalkForwardConfig,
    exec: &ExecutionConfig,
    seed: u64,
) -> Result<WindowOutcome> {
    let mut rng = stream(seed, keys::WINDOW + window.index as u64);
    let view = SealedView::new(data, window);
    let train = view.slice(window.start, window.val_end)?;
    let nf = window.n_fit();
    let d = data.dim();
    let fq = if cfg.feature_quality.enabled {
        feature_quality_weights(&train.rows[..nf], &train.market[..nf], &train.regimes[..nf], &cfg.feature_quality)?
    } else {
        vec![1.0; d]
    };
    let factor_cols = data.factor_columns();
    let ctx = Ctx {
        cfg,
        exec,
        train,
        rows: reweight_rows(train.rows, &fq),
        factors: pick_columns(train.rows, &factor_cols),
        n_fit: nf,
        summary_cols: data.summary_columns(),
    };

    let mut pop = Population::random(&cfg.evolution, d, &mut rng);
    let mut best: Option<Checkpoint> = None;
    let mut top: Vec<Checkpoint> = Vec::new();
    let mut diag = WindowDiagnostics {
        window,
        feature_quality_weights: fq.clone(),
        generations: Vec::new(),
        best_responses: Vec::new(),
        selected: Vec::new(),
    };
    let mut next_ckpt = 0u64;
    let mut round_stall = 0usize;
    let rounds = cfg.evolution.tournament_rounds;
    for round in 0..rounds {
        let mut round_improved = false;
        let mut gen_stall = 0usize;
        for generation in 0..cfg.evolution.generations_per_round {
            let ev = evaluate(&pop, &ctx)?;
            let cand = build_checkpoint(&pop, &ev, &ctx, next_ckpt, round, generation)?;
            next_ckpt += 1;
            let improved = best.as_ref().is_none_or(|b| cand.val_score > b.val_score);
            diag.generations.push(GenerationDiag {
                round,
                generation,
                checkpoint_id: cand.id,
                val_score: cand.val_score,
                improved,
                scale: cand.scale,
                meta: cand.meta.clone(),
                nash_gap_average: ev.psro.average_gap,
                nash_gap_last: ev.psro.last_gap,
                gap_trace: ev.psro.gap_trace.clone(),
                agents: ev.scores.clone(),
            });
            if wf.checkpoint_ensemble {
                top.push(cand.clone());
                top.sort_by(|a, b| b.val_score.total_cmp(&a.val_score).then(a.id.cmp(&b.id)));
                top.truncate(wf.ensemble_top);
            }
            if improved {
                best = Some(cand);
                round_improved = true;
                gen_stall = 0;
            } else {
                gen_stall += 1;
            }
            pop = evolve_step(&pop, &ev.fitness, &cfg.evolution, &mut rng)?;
            if gen_stall >= wf.generation_patience {
                break;
            }
        }
        if round_improved {
            round_stall = 0;
        } else {
            round_stall += 1;
        }
        if round + 1 == rounds || round_stall >= wf.round_patience {
            break;
        }
        // best response against the evolved population's mixture
        let ev = evaluate(&pop, &ctx)?;
        let fit_signals: Vec<Vec<f64>> = ev.signals.iter().map(|s| s[..nf].to_vec()).collect();
        let opp = ensemble_signal(&ev.psro.average, &fit_signals)?;
        let id = pop.fresh_id();
        let template = &pop.agents[rank_desc(&ev.fitness)[0]];
        let br_data = BrData {
            rows: &ctx.rows[..nf],
            regimes: &ctx.train.regimes[..nf],
            returns: &ctx.train.market[..nf],
            sigma: &ctx.train.sigma[..nf],
            opp: &opp,
            summary_cols: ctx.summary_cols,
        };
        let (agent, rewards) = match cfg.br.kind {
            BrKind::Ridge => (ridge_br(&br_data, &cfg.br, template, id)?, Vec::new()),
            BrKind::Rl => {
                let out = train_rl_br(&br_data, &cfg.br, exec, template, id, &mut rng)?;
                (out.agent, out.episode_rewards)
            }
        };
        let (next, slot) = inject_br(&pop, agent, &ev.fitness, cfg.evolution.n_elite(pop.len()))?;
        pop = next;
        diag.best_responses.push(BrDiag {
            round,
            kind: cfg.br.kind,
            agent_id: id,
            replaced_slot: slot,
            episode_rewards: rewards,
        });
    }

    let best = best.ok_or_else(|| Error::contract("no checkpoint was produced"))?;
    let chosen = if wf.checkpoint_ensemble { top } else { vec![best.clone()] };

    // the checkpoint is frozen; only now may the test slice be read
    let full = view.unseal().slice(window.start, window.test_end)?;
    let rows = reweight_rows(full.rows, &fq);
    let factors = pick_columns(full.rows, &factor_cols);
    let signals = chosen
        .iter()
        .map(|c| c.signal(&rows, full.regimes, &factors, cfg))
        .collect::<Result<Vec<_>>>()?;
    let weights = vec![1.0 / signals.len() as f64; signals.len()];
    let signal = ensemble_signal(&weights, &signals)?;
    let gaps: Vec<f64> = diag.generations.iter().map(|g| g.nash_gap_average).collect();
    let result = finish_window(data, window, &signal, exec, cfg, best.id, gaps, diag.generations.len())?;
    diag.selected = chosen;
    Ok(WindowOutcome {
        result,
        diagnostics: diag,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Aggregate {
    pub n_windows: usize,
    pub mean_ex_sharpe: f64,
    pub std_ex_sharpe: f64,
    pub robust_score: f64,
    pub mean_beta: f64,
    pub pos_ratio: f64,
    pub stitched_ex_sharpe: f64,
    pub mean_excess_1d: f64,
    pub cum_return: f64,
    pub bench_cum_return: f64,
    pub excess_cum_return: f64,
    pub ann_return: f64,
    pub bench_ann_return: f64,
    pub mean_hit_ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WalkForwardReport {
    pub windows: Vec<WindowResult>,
    pub aggregate: Aggregate,
    pub oos: OosSeries,
}

pub fn aggregate(windows: Vec<WindowResult>, w: &SelectionWeights) -> Result<WalkForwardReport> {
    if windows.is_empty() {
        return Err(Error::contract("aggregation needs at least one window"));
    }
    let mut oos = OosSeries::default();
    windows.iter().for_each(|r| oos.extend(&r.oos));
    let sharpes: Vec<f64> = windows.iter().map(|r| r.test_metrics.excess_sharpe).collect();
    let n = windows.len() as f64;
    let stitched = MetricSet::compute(&oos.pnl, &oos.bench, 0.05);
    let bench_only = MetricSet::compute(&oos.bench, &vec![0.0; oos.len()], 0.05);
    let aggregate = Aggregate {
        n_windows: windows.len(),
        mean_ex_sharpe: mean(&sharpes),
        std_ex_sharpe: window_std(&sharpes),
        robust_score: robust_score(&sharpes, w),
        mean_beta: windows.iter().map(|r| r.test_metrics.beta).sum::<f64>() / n,
        pos_ratio: sharpes.iter().filter(|s| **s > 0.0).count() as f64 / n,
        stitched_ex_sharpe: stitched.excess_sharpe,
        mean_excess_1d: stitched.mean_excess_1d,
        cum_return: stitched.cum_return,
        bench_cum_return: bench_only.cum_return,
        excess_cum_return: stitched.excess_cum_return,
        ann_return: stitched.annualized_return,
        bench_ann_return: bench_only.annualized_return,
        mean_hit_ratio: windows.iter().map(|r| r.hit_ratio).sum::<f64>() / n,
    };
    Ok(WalkForwardReport {
        windows,
        aggregate,
        oos,
    })
}

pub struct RunOutput {
    pub report: WalkForwardReport,
    pub diagnostics: Vec<WindowDiagnostics>,
}

pub fn run_walkforward(
    data: &MarketData,
    cfg: &TrainingConfig,
    wf: &WalkForwardConfig,
    exec: &ExecutionConfig,
    seed: u64,
) -> Result<RunOutput> {
    cfg.validate()?;
    exec.validate()?;
    let windows = make_windows(data.len(), wf)?;
    let outcomes = windows
        .par_iter()
        .map(|w| run_window(data, *w, cfg, wf, exec, seed))
        .collect::<Result<Vec<_>>>()?;
    let (results, diagnostics): (Vec<_>, Vec<_>) = outcomes.into_iter().map(|o| (o.result, o.diagnostics)).unzip();
    Ok(RunOutput {
        report: aggregate(results, &cfg.selection)?,
        diagnostics,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossRow {
    pub benchmark: String,
    pub excess_sharpe: f64,
    pub excess_cum_return: f64,
    pub mean_excess_1d: f64,
}

/// Fixed strategy PnL against alternative benchmarks keyed by date.
pub fn cross_benchmark_eval(
    dates: &[NaiveDate],
    pnl: &[f64],
    benchmarks: &BTreeMap<String, BTreeMap<NaiveDate, f64>>,
) -> Result<Vec<CrossRow>> {
    if dates.len() != pnl.len() {
        return Err(Error::contract("OOS dates and pnl are misaligned"));
    }
    benchmarks
        .iter()
        .map(|(name, series)| {
            let b = dates
                .iter()
                .map(|d| {
                    series
                        .get(d)
                        .copied()
                        .ok_or_else(|| Error::data(format!("benchmark {name} has no return on {d}")))
                })
                .collect::<Result<Vec<f64>>>()?;
            let m = MetricSet::compute(pnl, &b, 0.05);
            Ok(CrossRow {
                benchmark: name.clone(),
                excess_sharpe: m.excess_sharpe,
                excess_cum_return: m.excess_cum_return,
                mean_excess_1d: m.mean_excess_1d,
            })
        })
        .collect()
}
