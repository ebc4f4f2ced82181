//! Agent scoring and evolutionary replacement.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::Regime;
use crate::game::PayoffMatrix;
use crate::metrics::{cvar, downside_dev, excess, max_drawdown, sharpe};
use crate::numeric::corr;
use crate::policy::AgentPolicy;

/// Smallest temperature a mutation may produce.
pub const TAU_MIN: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UtilityWeights {
    pub lambda_ex: f64,
    pub lambda_down: f64,
    pub lambda_dd: f64,
    pub lambda_cvar: f64,
    pub lambda_worst: f64,
    pub lambda_con: f64,
    pub alpha_cvar: f64,
    pub cvar_floor: f64,
    pub worst_floor: f64,
}

impl Default for UtilityWeights {
    fn default() -> Self {
        UtilityWeights {
            lambda_ex: 1.0,
            lambda_down: 0.5,
            lambda_dd: 0.5,
            lambda_cvar: 1.0,
            lambda_worst: 1.0,
            lambda_con: 2.0,
            alpha_cvar: 0.05,
            cvar_floor: -0.03,
            worst_floor: -0.05,
        }
    }
}

impl UtilityWeights {
    /// Every penalty off; U reduces to the plain Sharpe ratio.
    pub fn zero() -> Self {
        UtilityWeights {
            lambda_ex: 0.0,
            lambda_down: 0.0,
            lambda_dd: 0.0,
            lambda_cvar: 0.0,
            lambda_worst: 0.0,
            lambda_con: 0.0,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let l = [
            self.lambda_ex,
            self.lambda_down,
            self.lambda_dd,
            self.lambda_cvar,
            self.lambda_worst,
            self.lambda_con,
        ];
        if l.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::config("utility weights must be finite and >= 0"));
        }
        if !(self.alpha_cvar > 0.0 && self.alpha_cvar < 1.0) {
            return Err(Error::config("alpha_cvar must lie in (0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitnessWeights {
    pub lambda_div: f64,
    pub lambda_league: f64,
    pub lambda_beta: f64,
    pub beta_target: f64,
}

impl Default for FitnessWeights {
    fn default() -> Self {
        FitnessWeights {
            lambda_div: 0.1,
            lambda_league: 1.0,
            lambda_beta: 0.25,
            beta_target: 0.55,
        }
    }
}

impl FitnessWeights {
    pub fn validate(&self) -> Result<()> {
        let l = [self.lambda_div, self.lambda_league, self.lambda_beta];
        if l.iter().any(|v| !(*v >= 0.0 && v.is_finite())) || !self.beta_target.is_finite() {
            return Err(Error::config("fitness weights must be finite and >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvolutionConfig {
    pub population_size: usize,
    pub elite_fraction: f64,
    pub mutation_scale: f64,
    pub generations_per_round: usize,
    pub tournament_rounds: usize,
    pub risk_head: bool,
    pub ell_min: f64,
    pub ell_max: f64,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        EvolutionConfig {
            population_size: 16,
            elite_fraction: 0.25,
            mutation_scale: 0.05,
            generations_per_round: 4,
            tournament_rounds: 5,
            risk_head: true,
            ell_min: 0.5,
            ell_max: 1.5,
        }
    }
}

impl EvolutionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population_size < 2 {
            return Err(Error::config("population_size must be >= 2"));
        }
        if !(self.elite_fraction > 0.0 && self.elite_fraction <= 1.0) {
            return Err(Error::config("elite_fraction must lie in (0, 1]"));
        }
        if !(self.mutation_scale >= 0.0 && self.mutation_scale.is_finite()) {
            return Err(Error::config("mutation_scale must be >= 0"));
        }
        if self.generations_per_round == 0 || self.tournament_rounds == 0 {
            return Err(Error::config("generations_per_round and tournament_rounds must be >= 1"));
        }
        if !(0.0 <= self.ell_min && self.ell_min <= self.ell_max) {
            return Err(Error::config("risk head needs 0 <= ell_min <= ell_max"));
        }
        Ok(())
    }

    pub fn n_elite(&self, k: usize) -> usize {
        ((self.elite_fraction * k as f64).ceil() as usize).clamp(1, k)
    }

    pub fn leverage_bounds(&self) -> Option<(f64, f64)> {
        self.risk_head.then_some((self.ell_min, self.ell_max))
    }
}

/// `max(0, c*_cvar - CVaR) + max(0, c*_worst - min excess)`.
pub fn constraint_violation(pnl: &[f64], bench: &[f64], w: &UtilityWeights) -> f64 {
    let ex = excess(pnl, bench);
    if ex.is_empty() {
        return 0.0;
    }
    let worst = ex.iter().copied().fold(f64::INFINITY, f64::min);
    (w.cvar_floor - cvar(&ex, w.alpha_cvar)).max(0.0) + (w.worst_floor - worst).max(0.0)
}

/// Risk-adjusted utility of one PnL path against its benchmark.
pub fn strategy_utility(pnl: &[f64], bench: &[f64], w: &UtilityWeights) -> Result<f64> {
    if pnl.len() != bench.len() {
        return Err(Error::contract("pnl and benchmark are misaligned"));
    }
    if pnl.is_empty() {
        return Ok(0.0);
    }
    let ex = excess(pnl, bench);
    let worst = ex.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(sharpe(pnl) + w.lambda_ex * sharpe(&ex)
        - w.lambda_down * downside_dev(pnl)
        - w.lambda_dd * max_drawdown(pnl).abs()
        - w.lambda_cvar * cvar(&ex, w.alpha_cvar).min(0.0).abs()
        - w.lambda_worst * worst.min(0.0).abs()
        - w.lambda_con * constraint_violation(pnl, bench, w))
}

/// `1 - mean_{j != k} |corr(s_k, s_j)|`.
pub fn diversity_score(signals: &[Vec<f64>], k: usize) -> f64 {
    let n = signals.len();
    if n < 2 {
        return 0.0;
    }
    let s: f64 = (0..n).filter(|&j| j != k).map(|j| corr(&signals[k], &signals[j]).abs()).sum();
    (1.0 - s / (n - 1) as f64).clamp(0.0, 1.0)
}

pub fn diversity_scores(signals: &[Vec<f64>]) -> Vec<f64> {
    let n = signals.len();
    if n < 2 {
        return vec![0.0; n];
    }
    let mut c = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let v = corr(&signals[i], &signals[j]).abs();
            c[i][j] = v;
            c[j][i] = v;
        }
    }
    c.iter()
        .map(|row| (1.0 - row.iter().sum::<f64>() / (n - 1) as f64).clamp(0.0, 1.0))
        .collect()
}

/// `F_k = (Am)_k + U_k + λ_div D_k + λ_league L_k - λ_β |β_k - β*|`.
pub fn fitness(
    a: &PayoffMatrix,
    m: &[f64],
    u: &[f64],
    d: &[f64],
    l: &[f64],
    beta: &[f64],
    w: &FitnessWeights,
) -> Result<Vec<f64>> {
    let k = a.k();
    if [m.len(), u.len(), d.len(), l.len(), beta.len()].iter().any(|&n| n != k) {
        return Err(Error::contract("fitness inputs differ in length"));
    }
    let am = a.apply(m);
    Ok((0..k)
        .map(|i| {
            am[i] + u[i] + w.lambda_div * d[i] + w.lambda_league * l[i]
                - w.lambda_beta * (beta[i] - w.beta_target).abs()
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Population {
    pub agents: Vec<AgentPolicy>,
    pub next_id: u64,
}

impl Population {
    pub fn random<R: Rng>(cfg: &EvolutionConfig, dim: usize, rng: &mut R) -> Self {
        let agents = (0..cfg.population_size as u64)
            .map(|id| AgentPolicy::random(id, dim, cfg.leverage_bounds(), rng))
            .collect();
        Population {
            agents,
            next_id: cfg.population_size as u64,
        }
    }

    pub fn len(&self) -> usize {
        self.agents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }

    pub fn fresh_id(&mut self) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        id
    }
}

/// Indices sorted by fitness, best first; ties keep the lower index first.
pub fn rank_desc(f: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..f.len()).collect();
    idx.sort_by(|&i, &j| f[j].total_cmp(&f[i]).then(i.cmp(&j)));
    idx
}

fn jitter<R: Rng>(v: &mut f64, scale: f64, rng: &mut R) {
    let e: f64 = rng.sample(StandardNormal);
    *v += scale * e;
}

/// Gaussian perturbation of every trainable parameter; leverage bounds are kept.
pub fn mutate<R: Rng>(parent: &AgentPolicy, id: u64, scale: f64, rng: &mut R) -> AgentPolicy {
    let mut a = parent.clone();
    a.id = id;
    a.w.iter_mut().for_each(|w| jitter(w, scale, rng));
    jitter(&mut a.b, scale, rng);
    for z in Regime::ALL {
        jitter(a.c.get_mut(z), scale, rng);
    }
    jitter(&mut a.tau, scale, rng);
    a.tau = a.tau.max(TAU_MIN);
    if let Some(rh) = a.risk_head.as_mut() {
        rh.w.iter_mut().for_each(|w| jitter(w, scale, rng));
        jitter(&mut rh.b, scale, rng);
        for z in Regime::ALL {
            jitter(rh.c.get_mut(z), scale, rng);
        }
    }
    a
}

/// Keep the top agents in place and refill the other slots with mutated elites.
pub fn evolve_step<R: Rng>(pop: &Population, f: &[f64], cfg: &EvolutionConfig, rng: &mut R) -> Result<Population> {
    if f.len() != pop.len() {
        return Err(Error::contract("fitness vector length differs from population"));
    }
    let k = pop.len();
    let order = rank_desc(f);
    let n_elite = cfg.n_elite(k);
    let elites = &order[..n_elite];
    let mut is_elite = vec![false; k];
    elites.iter().for_each(|&i| is_elite[i] = true);
    let mut next = pop.clone();
    for slot in 0..k {
        if is_elite[slot] {
            continue;
        }
        let parent = &pop.agents[elites[rng.random_range(0..n_elite)]];
        let id = next.fresh_id();
        next.agents[slot] = mutate(parent, id, cfg.mutation_scale, rng);
    }
    Ok(next)
}

/// Per-agent diagnostics for one generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentScore {
    pub id: u64,
    pub mean_pnl: f64,
    pub utility: f64,
    pub violation: f64,
    pub diversity: f64,
    pub league: f64,
    pub beta: f64,
    pub fitness: f64,
}
