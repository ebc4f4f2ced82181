//! Meta-game over the population: payoff matrix, multiplicative weights,
//! Nash gap and the mixed ensemble signal.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Exponent clamp that keeps `exp` finite.
pub const EXP_CLAMP: f64 = 50.0;
const ANTISYM_TOL: f64 = 1e-12;

/// Square antisymmetric payoff matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PayoffMatrix {
    a: Vec<Vec<f64>>,
}

impl PayoffMatrix {
    /// Validates squareness and antisymmetry.
    pub fn from_rows(a: Vec<Vec<f64>>) -> Result<Self> {
        let k = a.len();
        if k == 0 || a.iter().any(|r| r.len() != k) {
            return Err(Error::contract("payoff matrix must be square and non-empty"));
        }
        for i in 0..k {
            for j in 0..k {
                if !a[i][j].is_finite() || (a[i][j] + a[j][i]).abs() > ANTISYM_TOL {
                    return Err(Error::contract(format!("payoff matrix not antisymmetric at ({i}, {j})")));
                }
            }
        }
        Ok(PayoffMatrix { a })
    }

    pub fn k(&self) -> usize {
        self.a.len()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.a
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.a[i][j]
    }

    /// `max |A_ij|`.
    pub fn bound(&self) -> f64 {
        self.a.iter().flatten().fold(0.0f64, |g, v| g.max(v.abs()))
    }

    /// `A m`.
    pub fn apply(&self, m: &[f64]) -> Vec<f64> {
        matvec(&self.a, m)
    }
}

fn matvec(a: &[Vec<f64>], m: &[f64]) -> Vec<f64> {
    a.iter().map(|r| r.iter().zip(m).map(|(x, y)| x * y).sum()).collect()
}

/// `A_ij = mean_i - mean_j`.
pub fn build_payoff(mean_pnls: &[f64]) -> Result<PayoffMatrix> {
    if mean_pnls.len() < 2 {
        return Err(Error::contract("payoff matrix needs at least two agents"));
    }
    let a = mean_pnls
        .iter()
        .map(|pi| mean_pnls.iter().map(|pj| pi - pj).collect())
        .collect();
    Ok(PayoffMatrix { a })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaStrategy {
    pub m: Vec<f64>,
    pub eta: f64,
    pub iterations: usize,
}

impl MetaStrategy {
    pub fn uniform(k: usize, eta: f64) -> Self {
        MetaStrategy {
            m: vec![1.0 / k as f64; k],
            eta,
            iterations: 0,
        }
    }
}

/// One Hedge update `m_k ∝ m_k exp(eta v_k)`.
pub fn hedge_update(m: &[f64], v: &[f64], eta: f64) -> Vec<f64> {
    let mut out: Vec<f64> = m
        .iter()
        .zip(v)
        .map(|(mk, vk)| mk * (eta * vk).clamp(-EXP_CLAMP, EXP_CLAMP).exp())
        .collect();
    let z: f64 = out.iter().sum();
    if z > 0.0 && z.is_finite() {
        out.iter_mut().for_each(|x| *x /= z);
    } else {
        out = m.to_vec();
    }
    out
}

pub fn mw_step(a: &PayoffMatrix, m: &MetaStrategy) -> MetaStrategy {
    let v = a.apply(&m.m);
    MetaStrategy {
        m: hedge_update(&m.m, &v, m.eta),
        eta: m.eta,
        iterations: m.iterations + 1,
    }
}

/// `max_i (Am)_i - mᵀAm`, floored at zero.
pub fn nash_gap(a: &PayoffMatrix, m: &[f64]) -> f64 {
    let v = a.apply(m);
    let best = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let own: f64 = v.iter().zip(m).map(|(x, y)| x * y).sum();
    (best - own).max(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsroSolution {
    /// Last iterate.
    pub last: MetaStrategy,
    /// Time average of the strategies played, before each update.
    pub average: Vec<f64>,
    /// Nash gap of the iterate played at each step.
    pub gap_trace: Vec<f64>,
    pub last_gap: f64,
    pub average_gap: f64,
}

/// Self-play multiplicative weights from the uniform mixture.
pub fn psro_solve(a: &PayoffMatrix, eta: f64, iterations: usize) -> Result<PsroSolution> {
    psro_solve_from(a, MetaStrategy::uniform(a.k(), eta), iterations)
}

pub fn psro_solve_from(a: &PayoffMatrix, start: MetaStrategy, iterations: usize) -> Result<PsroSolution> {
    if iterations == 0 {
        return Err(Error::config("psro iterations must be >= 1"));
    }
    if start.m.len() != a.k() {
        return Err(Error::contract("meta-strategy length differs from payoff matrix"));
    }
    let k = a.k();
    let mut cur = start;
    let mut sum = vec![0.0; k];
    let mut gap_trace = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        sum.iter_mut().zip(&cur.m).for_each(|(s, x)| *s += x);
        gap_trace.push(nash_gap(a, &cur.m));
        cur = mw_step(a, &cur);
    }
    let average: Vec<f64> = sum.iter().map(|s| s / iterations as f64).collect();
    Ok(PsroSolution {
        last_gap: nash_gap(a, &cur.m),
        average_gap: nash_gap(a, &average),
        last: cur,
        average,
        gap_trace,
    })
}

/// Learning rate that makes the Hedge regret bound `G sqrt(2 ln K / T)` tight.
pub fn theoretical_eta(g: f64, k: usize, t: usize) -> f64 {
    if g <= 0.0 || k < 2 {
        return 0.0;
    }
    (2.0 * (k as f64).ln() / (t as f64 * g * g)).sqrt()
}

pub fn regret_bound(g: f64, k: usize, t: usize) -> f64 {
    g * (2.0 * (k as f64).ln() / t as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZeroSumSolution {
    pub row_average: Vec<f64>,
    pub col_average: Vec<f64>,
    /// `max_i (M ȳ)_i - min_j (x̄ᵀM)_j`.
    pub gap: f64,
}

/// Two-player zero-sum game where the row player maximizes `xᵀMy`. Both sides
/// run multiplicative weights; the time averages approach an equilibrium.
pub fn zero_sum_mw(m: &[Vec<f64>], x0: &[f64], y0: &[f64], eta: f64, iterations: usize) -> Result<ZeroSumSolution> {
    let rows = m.len();
    let cols = m.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 || m.iter().any(|r| r.len() != cols) || x0.len() != rows || y0.len() != cols {
        return Err(Error::contract("zero-sum game dimensions are inconsistent"));
    }
    if iterations == 0 {
        return Err(Error::config("iterations must be >= 1"));
    }
    let mt: Vec<Vec<f64>> = (0..cols).map(|j| m.iter().map(|r| -r[j]).collect()).collect();
    let (mut x, mut y) = (x0.to_vec(), y0.to_vec());
    let (mut sx, mut sy) = (vec![0.0; rows], vec![0.0; cols]);
    for _ in 0..iterations {
        sx.iter_mut().zip(&x).for_each(|(s, v)| *s += v);
        sy.iter_mut().zip(&y).for_each(|(s, v)| *s += v);
        let vx = matvec(m, &y);
        let vy = matvec(&mt, &x);
        x = hedge_update(&x, &vx, eta);
        y = hedge_update(&y, &vy, eta);
    }
    let xa: Vec<f64> = sx.iter().map(|s| s / iterations as f64).collect();
    let ya: Vec<f64> = sy.iter().map(|s| s / iterations as f64).collect();
    let best_row = matvec(m, &ya).into_iter().fold(f64::NEG_INFINITY, f64::max);
    let best_col = matvec(&mt, &xa).into_iter().fold(f64::NEG_INFINITY, f64::max);
    Ok(ZeroSumSolution {
        gap: best_row + best_col,
        row_average: xa,
        col_average: ya,
    })
}

/// `s_t = Σ_k m_k s_{k,t}`.
pub fn ensemble_signal(m: &[f64], signals: &[Vec<f64>]) -> Result<Vec<f64>> {
    if m.len() != signals.len() || signals.is_empty() {
        return Err(Error::contract("ensemble weights and signals differ in count"));
    }
    let n = signals[0].len();
    if signals.iter().any(|s| s.len() != n) {
        return Err(Error::contract("ensemble members are misaligned"));
    }
    Ok((0..n).map(|t| m.iter().zip(signals).map(|(w, s)| w * s[t]).sum()).collect())
}
