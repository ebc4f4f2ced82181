//! Linear direction head with regime biases and an optional sigmoid risk head.

use chrono::NaiveDate;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureMatrix, Regime, RegimeSeries};
use crate::numeric::dot;

/// Lower bound applied to the temperature inside the tanh.
pub const TAU_FLOOR: f64 = 0.15;

/// Per-regime scalar offsets.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub struct RegimeBias {
    pub bull: f64,
    pub bear: f64,
    pub sideways: f64,
    pub shock: f64,
}

impl RegimeBias {
    pub fn get(&self, z: Regime) -> f64 {
        match z {
            Regime::Bull => self.bull,
            Regime::Bear => self.bear,
            Regime::Sideways => self.sideways,
            Regime::Shock => self.shock,
        }
    }

    pub fn get_mut(&mut self, z: Regime) -> &mut f64 {
        match z {
            Regime::Bull => &mut self.bull,
            Regime::Bear => &mut self.bear,
            Regime::Sideways => &mut self.sideways,
            Regime::Shock => &mut self.shock,
        }
    }

    pub fn values(&self) -> [f64; 4] {
        [self.bull, self.bear, self.sideways, self.shock]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskHead {
    pub w: Vec<f64>,
    pub b: f64,
    pub c: RegimeBias,
    pub ell_min: f64,
    pub ell_max: f64,
}

impl RiskHead {
    /// Zero weights: the sigmoid sits at 0.5, so leverage starts mid-range.
    pub fn neutral(dim: usize, ell_min: f64, ell_max: f64) -> Self {
        RiskHead {
            w: vec![0.0; dim],
            b: 0.0,
            c: RegimeBias::default(),
            ell_min,
            ell_max,
        }
    }

    pub fn leverage(&self, x: &[f64], z: Regime) -> f64 {
        let u = sigmoid(dot(&self.w, x) + self.b + self.c.get(z));
        self.ell_min + (self.ell_max - self.ell_min) * u
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentPolicy {
    pub id: u64,
    pub w: Vec<f64>,
    pub b: f64,
    pub c: RegimeBias,
    pub tau: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub risk_head: Option<RiskHead>,
}

/// Clip interval for emitted signals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SignalBounds {
    pub lower: f64,
    pub upper: f64,
}

impl Default for SignalBounds {
    fn default() -> Self {
        SignalBounds {
            lower: 0.0,
            upper: 1.0,
        }
    }
}

impl SignalBounds {
    pub fn clip(&self, s: f64) -> f64 {
        s.clamp(self.lower, self.upper)
    }

    pub fn long_only(&self) -> bool {
        self.lower >= 0.0
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lower <= self.upper) || !self.lower.is_finite() || !self.upper.is_finite() {
            return Err(Error::config("signal bounds need finite lower <= upper"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignalSeries {
    pub dates: Vec<NaiveDate>,
    pub values: Vec<f64>,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl AgentPolicy {
    pub fn zero(id: u64, dim: usize) -> Self {
        AgentPolicy {
            id,
            w: vec![0.0; dim],
            b: 0.0,
            c: RegimeBias::default(),
            tau: 0.5,
            risk_head: None,
        }
    }

    /// Direction weights uniform in [-0.1, 0.1], biases zero, tau 0.5.
    pub fn random<R: Rng>(id: u64, dim: usize, risk_head: Option<(f64, f64)>, rng: &mut R) -> Self {
        AgentPolicy {
            id,
            w: (0..dim).map(|_| rng.random_range(-0.1..=0.1)).collect(),
            b: 0.0,
            c: RegimeBias::default(),
            tau: 0.5,
            risk_head: risk_head.map(|(lo, hi)| RiskHead::neutral(dim, lo, hi)),
        }
    }

    pub fn dim(&self) -> usize {
        self.w.len()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(Error::contract(format!("agent {}: tau must be positive", self.id)));
        }
        let mut finite = self.w.iter().chain([&self.b, &self.tau]).all(|v| v.is_finite())
            && self.c.values().iter().all(|v| v.is_finite());
        if let Some(rh) = &self.risk_head {
            if !(0.0 <= rh.ell_min && rh.ell_min <= rh.ell_max) {
                return Err(Error::contract(format!(
                    "agent {}: risk head needs 0 <= ell_min <= ell_max",
                    self.id
                )));
            }
            if rh.w.len() != self.w.len() {
                return Err(Error::contract("risk head dimension differs from direction head"));
            }
            finite &= rh.w.iter().chain([&rh.b, &rh.ell_min, &rh.ell_max]).all(|v| v.is_finite())
                && rh.c.values().iter().all(|v| v.is_finite());
        }
        if !finite {
            return Err(Error::contract(format!("agent {}: non-finite parameter", self.id)));
        }
        Ok(())
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.w.len() {
            return Err(Error::contract(format!(
                "agent {} expects {} features, got {}",
                self.id,
                self.w.len(),
                x.len()
            )));
        }
        Ok(())
    }

    /// Composite signal for one date: score, tanh, risk head, clip.
    pub fn signal(&self, x: &[f64], z: Regime, bounds: &SignalBounds) -> Result<f64> {
        let a = base_score(self, x, z)?;
        let s_tilde = base_signal(a, self.tau);
        let s = match &self.risk_head {
            Some(_) => apply_risk_head(self, s_tilde, x, z)?,
            None => s_tilde,
        };
        Ok(bounds.clip(s))
    }

    /// Signals for aligned feature rows and regime labels.
    pub fn signal_path(&self, rows: &[Vec<f64>], regimes: &[Regime], bounds: &SignalBounds) -> Result<Vec<f64>> {
        if rows.len() != regimes.len() {
            return Err(Error::contract("feature rows and regimes are misaligned"));
        }
        rows.iter()
            .zip(regimes)
            .map(|(x, &z)| self.signal(x, z, bounds))
            .collect()
    }
}

/// `a = wᵀx + b + c_z`.
pub fn base_score(agent: &AgentPolicy, x: &[f64], z: Regime) -> Result<f64> {
    agent.check_dim(x)?;
    Ok(dot(&agent.w, x) + agent.b + agent.c.get(z))
}

pub fn base_signal(a: f64, tau: f64) -> f64 {
    (a / tau.max(TAU_FLOOR)).tanh()
}

pub fn apply_risk_head(agent: &AgentPolicy, s_tilde: f64, x: &[f64], z: Regime) -> Result<f64> {
    let rh = agent
        .risk_head
        .as_ref()
        .ok_or_else(|| Error::contract(format!("agent {} has no risk head", agent.id)))?;
    agent.check_dim(x)?;
    let ell = rh.leverage(x, z);
    Ok(s_tilde.signum() * s_tilde.abs() * ell)
}

/// Signal series over a feature matrix; regimes are looked up by date.
pub fn emit_signal(
    agent: &AgentPolicy,
    feats: &FeatureMatrix,
    regimes: &RegimeSeries,
    bounds: &SignalBounds,
) -> Result<SignalSeries> {
    let labels: Result<Vec<Regime>> = feats
        .dates
        .iter()
        .map(|d| {
            regimes
                .label_on(*d)
                .ok_or_else(|| Error::contract(format!("no regime label on {d}")))
        })
        .collect();
    let values = agent.signal_path(&feats.values, &labels?, bounds)?;
    Ok(SignalSeries {
        dates: feats.dates.clone(),
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn agent_with(w: Vec<f64>, b: f64) -> AgentPolicy {
        AgentPolicy {
            w,
            b,
            ..AgentPolicy::zero(1, 2)
        }
    }

    #[test]
    fn zero_agent_scores_zero() {
        let a = AgentPolicy::zero(0, 3);
        assert_eq!(base_score(&a, &[1.0, 2.0, 3.0], Regime::Bull).unwrap(), 0.0);
    }

    #[test]
    fn score_hand_evaluation() {
        let mut a = agent_with(vec![1.0, 0.0], 0.1);
        a.c.sideways = -0.05;
        let s = base_score(&a, &[0.3, 9.0], Regime::Sideways).unwrap();
        assert!((s - 0.35).abs() < 1e-15);
    }

    #[test]
    fn regime_bias_shifts_score_exactly() {
        let mut a = agent_with(vec![0.2, -0.4], 0.0);
        a.c.bull = 0.3;
        a.c.bear = 0.1;
        let x = [0.7, 0.2];
        let d = base_score(&a, &x, Regime::Bull).unwrap() - base_score(&a, &x, Regime::Bear).unwrap();
        assert!((d - 0.2).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch_is_contract_error() {
        let a = AgentPolicy::zero(0, 3);
        assert!(matches!(base_score(&a, &[1.0], Regime::Bull), Err(Error::Contract(_))));
    }

    #[test]
    fn base_signal_values() {
        assert_eq!(base_signal(0.0, 0.5), 0.0);
        assert!((base_signal(10.0, 0.01) - (10.0f64 / 0.15).tanh()).abs() < 1e-15);
        assert!((base_signal(10.0, 0.01) - 1.0).abs() < 1e-9);
        assert_eq!(base_signal(-0.7, 0.4), -base_signal(0.7, 0.4));
    }

    #[test]
    fn risk_head_identity_leverage() {
        let mut a = AgentPolicy::zero(0, 2);
        a.risk_head = Some(RiskHead {
            w: vec![3.0, -1.0],
            b: 0.4,
            ..RiskHead::neutral(2, 1.0, 1.0)
        });
        let s = apply_risk_head(&a, 0.37, &[0.2, 0.5], Regime::Bear).unwrap();
        assert!((s - 0.37).abs() < 1e-15);
    }

    #[test]
    fn risk_head_saturates_at_ell_min() {
        let mut a = AgentPolicy::zero(0, 1);
        a.risk_head = Some(RiskHead {
            b: -800.0,
            ..RiskHead::neutral(1, 0.5, 1.5)
        });
        let s = apply_risk_head(&a, -0.6, &[0.0], Regime::Bull).unwrap();
        assert!((s + 0.3).abs() < 1e-12);
    }

    #[test]
    fn risk_head_mid_sigmoid() {
        let mut a = AgentPolicy::zero(0, 1);
        a.risk_head = Some(RiskHead::neutral(1, 0.5, 1.5));
        let s = apply_risk_head(&a, 0.5, &[0.0], Regime::Bull).unwrap();
        assert!((s - 0.5).abs() < 1e-15);
    }

    #[test]
    fn missing_risk_head_is_contract_error() {
        let a = AgentPolicy::zero(0, 1);
        assert!(matches!(apply_risk_head(&a, 0.5, &[0.0], Regime::Bull), Err(Error::Contract(_))));
    }

    #[test]
    fn clipping_rules() {
        let long_only = SignalBounds::default();
        let mut a = agent_with(vec![0.0, 0.0], -0.2);
        a.tau = 0.5;
        assert_eq!(a.signal(&[0.0, 0.0], Regime::Bull, &long_only).unwrap(), 0.0);
        assert_eq!(AgentPolicy::zero(0, 2).signal(&[1.0, 1.0], Regime::Bull, &long_only).unwrap(), 0.0);
        let wide = SignalBounds { lower: 0.5, upper: 1.6 };
        assert_eq!(wide.clip(2.3), 1.6);
        assert_eq!(long_only.clip(-0.4), 0.0);
    }

    #[test]
    fn checkpoint_json_shape() {
        let mut a = AgentPolicy::zero(7, 2);
        let v: serde_json::Value = serde_json::to_value(&a).unwrap();
        assert!(v.get("risk_head").is_none());
        assert!(v["c"].get("BULL").is_some());
        a.risk_head = Some(RiskHead::neutral(2, 0.5, 1.5));
        let back: AgentPolicy = serde_json::from_str(&serde_json::to_string(&a).unwrap()).unwrap();
        assert_eq!(back, a);
    }

    proptest! {
        #[test]
        fn signal_is_bounded(w in prop::collection::vec(-5.0..5.0f64, 3), x in prop::collection::vec(-5.0..5.0f64, 3),
                             b in -3.0..3.0f64, lo in -1.0..0.5f64, width in 0.0..2.0f64) {
            let mut a = AgentPolicy::zero(0, 3);
            a.w = w; a.b = b;
            a.risk_head = Some(RiskHead::neutral(3, 0.5, 1.5));
            let bounds = SignalBounds { lower: lo, upper: lo + width };
            let s = a.signal(&x, Regime::Shock, &bounds).unwrap();
            prop_assert!(s >= bounds.lower && s <= bounds.upper);
        }

        #[test]
        fn signal_monotone_in_score(a1 in -3.0..3.0f64, da in 0.0..3.0f64, tau in 0.01..2.0f64) {
            prop_assert!(base_signal(a1 + da, tau) >= base_signal(a1, tau));
        }
    }
}
