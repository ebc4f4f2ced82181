//! Post-processing of the ensemble signal.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::Regime;
use crate::league::forward_return;
use crate::numeric::{corr, median, ridge_solve};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NeutralizeConfig {
    pub enabled: bool,
    pub omega: f64,
    pub lambda_neu: f64,
}

impl Default for NeutralizeConfig {
    fn default() -> Self {
        NeutralizeConfig {
            enabled: true,
            omega: 0.3,
            lambda_neu: 1.0,
        }
    }
}

impl NeutralizeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.omega) || !(self.lambda_neu >= 0.0) {
            return Err(Error::config("neutralize needs omega in [0, 1] and lambda_neu >= 0"));
        }
        Ok(())
    }
}

/// Ridge projection of a signal onto centered factor exposures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorModel {
    pub beta: Vec<f64>,
    pub factor_means: Vec<f64>,
}

impl FactorModel {
    /// `β̂ = (FᵀF + λI)⁻¹ Fᵀ(s - s̄)` with `F` centered column-wise.
    pub fn fit(s: &[f64], factors: &[Vec<f64>], lambda: f64) -> Result<Self> {
        if s.len() != factors.len() || s.is_empty() {
            return Err(Error::contract("signal and factor matrix are misaligned"));
        }
        let f = factors[0].len();
        if f == 0 || factors.iter().any(|r| r.len() != f) {
            return Err(Error::contract("factor matrix needs at least one column"));
        }
        let n = s.len() as f64;
        let means: Vec<f64> = (0..f).map(|j| factors.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let centered: Vec<Vec<f64>> = factors
            .iter()
            .map(|r| r.iter().zip(&means).map(|(x, m)| x - m).collect())
            .collect();
        let s_bar = s.iter().sum::<f64>() / n;
        let y: Vec<f64> = s.iter().map(|v| v - s_bar).collect();
        Ok(FactorModel {
            beta: ridge_solve(&centered, &y, lambda)?,
            factor_means: means,
        })
    }

    pub fn exposure(&self, row: &[f64]) -> f64 {
        row.iter()
            .zip(&self.factor_means)
            .zip(&self.beta)
            .map(|((x, m), b)| (x - m) * b)
            .sum()
    }

    /// `s - ω F β̂`.
    pub fn apply(&self, s: &[f64], factors: &[Vec<f64>], omega: f64) -> Result<Vec<f64>> {
        if s.len() != factors.len() {
            return Err(Error::contract("signal and factor matrix are misaligned"));
        }
        Ok(s.iter()
            .zip(factors)
            .map(|(v, row)| v - omega * self.exposure(row))
            .collect())
    }
}

pub fn factor_neutralize(s: &[f64], factors: &[Vec<f64>], cfg: &NeutralizeConfig) -> Result<Vec<f64>> {
    FactorModel::fit(s, factors, cfg.lambda_neu)?.apply(s, factors, cfg.omega)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AmplifyConfig {
    pub enabled: bool,
    pub tau: f64,
    pub gamma_amp: f64,
    pub gain: f64,
}

impl Default for AmplifyConfig {
    fn default() -> Self {
        AmplifyConfig {
            enabled: true,
            tau: 0.1,
            gamma_amp: 1.6,
            gain: 1.5,
        }
    }
}

impl AmplifyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau >= 0.0) || !(self.gamma_amp > 0.0) || !(self.gain >= 1.0) {
            return Err(Error::config("amplify needs tau >= 0, gamma_amp > 0, gain >= 1"));
        }
        Ok(())
    }
}

/// `s + (g - 1) sign(s) max(|s| - τ, 0)^γ`.
pub fn amplify_value(s: f64, cfg: &AmplifyConfig) -> f64 {
    let m = (s.abs() - cfg.tau).max(0.0);
    if m == 0.0 {
        return s;
    }
    s + (cfg.gain - 1.0) * s.signum() * m.powf(cfg.gamma_amp)
}

pub fn amplify_signal(s: &[f64], cfg: &AmplifyConfig) -> Vec<f64> {
    s.iter().map(|v| amplify_value(*v, cfg)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GateConfig {
    pub enabled: bool,
    pub q_min: f64,
    pub nu: f64,
    /// Trailing window for the rank-based confidence.
    pub window: usize,
}

impl Default for GateConfig {
    fn default() -> Self {
        GateConfig {
            enabled: true,
            q_min: 0.5,
            nu: 1.0,
            window: 60,
        }
    }
}

impl GateConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.q_min > 0.0 && self.q_min <= 1.0) || !(self.nu > 0.0) || self.window == 0 {
            return Err(Error::config("gate needs q_min in (0, 1], nu > 0, window >= 1"));
        }
        Ok(())
    }
}

/// Rank of `|s_t|` among the trailing `window` magnitudes, scaled to [0, 1].
/// Ties count half; a window with a single point has full confidence.
pub fn rank_confidence(s: &[f64], window: usize) -> Vec<f64> {
    (0..s.len())
        .map(|t| {
            let lo = (t + 1).saturating_sub(window);
            let x = s[t].abs();
            let seg = &s[lo..=t];
            if seg.len() < 2 {
                return 1.0;
            }
            let (mut below, mut ties) = (0.0, -1.0);
            for v in seg {
                let v = v.abs();
                if v < x {
                    below += 1.0;
                } else if v == x {
                    ties += 1.0;
                }
            }
            (below + 0.5 * ties) / (seg.len() - 1) as f64
        })
        .collect()
}

pub fn gate_multiplier(c: f64, cfg: &GateConfig) -> f64 {
    cfg.q_min + (1.0 - cfg.q_min) * c.clamp(0.0, 1.0).powf(cfg.nu)
}

pub fn quality_gate(s: &[f64], confidence: &[f64], cfg: &GateConfig) -> Result<Vec<f64>> {
    if s.len() != confidence.len() {
        return Err(Error::contract("signal and confidence are misaligned"));
    }
    Ok(s.iter()
        .zip(confidence)
        .map(|(v, c)| gate_multiplier(*c, cfg) * v)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureQualityConfig {
    pub enabled: bool,
    pub alpha_fq: f64,
    pub omega_r: f64,
    pub epsilon: f64,
    pub horizon: usize,
    /// Correlations over fewer observations count as zero.
    pub min_obs: usize,
}

impl Default for FeatureQualityConfig {
    fn default() -> Self {
        FeatureQualityConfig {
            enabled: true,
            alpha_fq: 0.5,
            omega_r: 0.3,
            epsilon: 1e-6,
            horizon: 21,
            min_obs: 30,
        }
    }
}

impl FeatureQualityConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha_fq) || !(0.0..=1.0).contains(&self.omega_r) {
            return Err(Error::config("alpha_fq and omega_r must lie in [0, 1]"));
        }
        if !(self.epsilon > 0.0) || self.horizon == 0 {
            return Err(Error::config("feature quality needs epsilon > 0 and horizon >= 1"));
        }
        Ok(())
    }
}

pub const FQ_CLIP: (f64, f64) = (0.4, 2.5);

fn guarded_abs_corr(x: &[f64], y: &[f64], min_obs: usize) -> f64 {
    if x.len() < min_obs.max(2) {
        0.0
    } else {
        corr(x, y).abs()
    }
}

/// Quality scores `Q_j` of each feature column against next-day and
/// `h`-day forward returns, plus a within-regime term.
pub fn feature_quality_scores(
    rows: &[Vec<f64>],
    returns: &[f64],
    regimes: &[Regime],
    cfg: &FeatureQualityConfig,
) -> Result<Vec<f64>> {
    let n = rows.len();
    if returns.len() != n || regimes.len() != n {
        return Err(Error::contract("feature quality inputs are misaligned"));
    }
    let d = rows.first().map_or(0, Vec::len);
    let next: Vec<f64> = (0..n.saturating_sub(1)).map(|t| returns[t + 1]).collect();
    let fwd: Vec<f64> = (0..n).map_while(|t| forward_return(returns, t, cfg.horizon)).collect();
    Ok((0..d)
        .map(|j| {
            let col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
            let c1 = guarded_abs_corr(&col[..next.len()], &next, cfg.min_obs);
            let ch = guarded_abs_corr(&col[..fwd.len()], &fwd, cfg.min_obs);
            let per_regime: Vec<f64> = Regime::ALL
                .iter()
                .filter_map(|z| {
                    let idx: Vec<usize> = (0..next.len()).filter(|&t| regimes[t] == *z).collect();
                    (idx.len() >= cfg.min_obs).then(|| {
                        let x: Vec<f64> = idx.iter().map(|&t| col[t]).collect();
                        let y: Vec<f64> = idx.iter().map(|&t| next[t]).collect();
                        guarded_abs_corr(&x, &y, cfg.min_obs)
                    })
                })
                .collect();
            let creg = if per_regime.is_empty() {
                0.0
            } else {
                per_regime.iter().sum::<f64>() / per_regime.len() as f64
            };
            (1.0 - cfg.omega_r) * (0.7 * c1 + 0.3 * ch) + cfg.omega_r * creg
        })
        .collect())
}

/// `w_j = (1 - α) + α clip(Q_j / (median(Q > 0) + ε), 0.4, 2.5)`.
pub fn quality_to_weights(q: &[f64], alpha: f64, epsilon: f64) -> Vec<f64> {
    let pos: Vec<f64> = q.iter().copied().filter(|v| *v > 0.0).collect();
    if pos.is_empty() {
        return vec![1.0; q.len()];
    }
    let med = median(&pos);
    q.iter()
        .map(|v| (1.0 - alpha) + alpha * (v / (med + epsilon)).clamp(FQ_CLIP.0, FQ_CLIP.1))
        .collect()
}

pub fn feature_quality_weights(
    rows: &[Vec<f64>],
    returns: &[f64],
    regimes: &[Regime],
    cfg: &FeatureQualityConfig,
) -> Result<Vec<f64>> {
    let q = feature_quality_scores(rows, returns, regimes, cfg)?;
    Ok(quality_to_weights(&q, cfg.alpha_fq, cfg.epsilon))
}

pub fn reweight_rows(rows: &[Vec<f64>], w: &[f64]) -> Vec<Vec<f64>> {
    rows.iter()
        .map(|r| r.iter().zip(w).map(|(x, w)| x * w).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use proptest::prelude::*;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian_rows(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = stream(seed, 0);
        (0..n)
            .map(|_| (0..d).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect()
    }

    #[test]
    fn neutralize_identity_at_zero_strength() {
        let f = gaussian_rows(50, 2, 1);
        let s: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).sin()).collect();
        let cfg = NeutralizeConfig {
            omega: 0.0,
            ..Default::default()
        };
        assert_eq!(factor_neutralize(&s, &f, &cfg).unwrap(), s);
    }

    #[test]
    fn neutralize_removes_linear_signal() {
        let f = gaussian_rows(80, 2, 2);
        let s: Vec<f64> = f.iter().map(|r| 0.4 + 0.3 * r[0] - 0.2 * r[1]).collect();
        let cfg = NeutralizeConfig {
            omega: 1.0,
            lambda_neu: 0.0,
            ..Default::default()
        };
        let out = factor_neutralize(&s, &f, &cfg).unwrap();
        let s_bar = s.iter().sum::<f64>() / 80.0;
        assert!(out.iter().all(|v| (v - s_bar).abs() < 1e-10));
    }

    #[test]
    fn neutralized_residual_is_orthogonal() {
        let f = gaussian_rows(120, 2, 3);
        let noise = gaussian_rows(120, 1, 4);
        let s: Vec<f64> = f.iter().zip(&noise).map(|(r, e)| 0.5 * r[0] + r[1] + e[0]).collect();
        let cfg = NeutralizeConfig {
            omega: 1.0,
            lambda_neu: 0.0,
            ..Default::default()
        };
        let out = factor_neutralize(&s, &f, &cfg).unwrap();
        for j in 0..2 {
            let col: Vec<f64> = f.iter().map(|r| r[j]).collect();
            assert!(corr(&out, &col).abs() <= 1e-8);
        }
    }

    #[test]
    fn amplification_examples() {
        let cfg = AmplifyConfig::default();
        let v = amplify_value(0.5, &cfg);
        assert!((v - (0.5 + 0.5 * 0.4f64.powf(1.6))).abs() < 1e-15);
        assert!((v - 0.61542).abs() < 1e-5);
        assert_eq!(amplify_value(0.08, &cfg), 0.08);
        let unit = AmplifyConfig { gain: 1.0, ..cfg };
        assert_eq!(amplify_value(0.9, &unit), 0.9);
    }

    #[test]
    fn gate_examples() {
        let cfg = GateConfig {
            q_min: 0.3,
            nu: 2.0,
            ..Default::default()
        };
        assert!((gate_multiplier(0.5, &cfg) - 0.475).abs() < 1e-15);
        assert_eq!(gate_multiplier(1.0, &cfg), 1.0);
        assert_eq!(quality_gate(&[0.8], &[0.0], &cfg).unwrap()[0], 0.8 * 0.3);
    }

    #[test]
    fn confidence_ranks() {
        let c = rank_confidence(&[0.1, 0.3, 0.2, 0.2], 3);
        assert_eq!(c[0], 1.0);
        assert_eq!(c[1], 1.0);
        assert_eq!(c[2], 0.5);
        assert_eq!(c[3], 0.25);
    }

    #[test]
    fn fq_weight_examples() {
        assert_eq!(quality_to_weights(&[0.1, 0.3, 0.0], 0.0, 1e-6), vec![1.0; 3]);
        assert_eq!(quality_to_weights(&[0.0, 0.0], 0.5, 1e-6), vec![1.0; 2]);
        let w = quality_to_weights(&[0.2, 0.2, 0.2], 1.0, 1e-12);
        assert!(w.iter().all(|v| (v - 1.0).abs() < 1e-9));
        let w = quality_to_weights(&[0.1, 0.1, 1.0], 1.0, 1e-6);
        assert_eq!(w[2], 2.5);
    }

    #[test]
    fn fq_detects_predictive_column() {
        let n = 300;
        let rows = gaussian_rows(n, 3, 5);
        let mut returns = vec![0.0; n];
        let noise = gaussian_rows(n, 1, 6);
        for t in 1..n {
            returns[t] = 0.01 * rows[t - 1][1] + 0.002 * noise[t][0];
        }
        let regimes = vec![Regime::Sideways; n];
        let w = feature_quality_weights(&rows, &returns, &regimes, &FeatureQualityConfig::default()).unwrap();
        assert!(w[1] > w[0] && w[1] > w[2]);
        assert!(w[1] <= 0.5 + 0.5 * 2.5);
    }

    proptest! {
        #[test]
        fn amplification_keeps_sign(s in -3.0..3.0f64, tau in 0.0..1.0f64, g in 1.0..4.0f64, gamma in 0.2..3.0f64) {
            let cfg = AmplifyConfig { enabled: true, tau, gamma_amp: gamma, gain: g };
            let v = amplify_value(s, &cfg);
            prop_assert!(v.signum() == s.signum() || s == 0.0);
            prop_assert!(v.abs() >= s.abs());
        }

        #[test]
        fn gate_contracts(s in -2.0..2.0f64, c in 0.0..1.0f64, q in 0.01..1.0f64, nu in 0.1..3.0f64) {
            let cfg = GateConfig { q_min: q, nu, ..Default::default() };
            let g = quality_gate(&[s], &[c], &cfg).unwrap()[0];
            prop_assert!(g.abs() <= s.abs());
        }

        #[test]
        fn fq_weights_bounded(q in prop::collection::vec(0.0..1.0f64, 1..10), alpha in 0.0..1.0f64) {
            for w in quality_to_weights(&q, alpha, 1e-6) {
                prop_assert!(w >= 1.0 - alpha + 0.4 * alpha - 1e-12 && w <= 1.0 - alpha + 2.5 * alpha + 1e-12);
            }
        }
    }
}
