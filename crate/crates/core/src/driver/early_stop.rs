//! Deactivation test for online learning, run on every fresh batch.
//!
//! Two rules, either of which switches learning off:
//! 1. without a safety reset in the window, the two-sided confidence interval
//!    of the OLS slope of stage cost against update index lies below zero;
//! 2. the mean stage cost of the window is under the cost threshold.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EarlyStopConfig {
    pub ci_level: f64,
    pub cost_threshold: f64,
}

impl Default for EarlyStopConfig {
    fn default() -> Self {
        Self {
            ci_level: 0.95,
            cost_threshold: 0.043,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    DecreasingTrend,
    LowCost,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ContinueReason {
    InsufficientData,
    NoEvidence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum EarlyStopDecision {
    Deactivate(StopReason),
    Continue(ContinueReason),
}

impl EarlyStopDecision {
    pub fn deactivates(self) -> bool {
        matches!(self, EarlyStopDecision::Deactivate(_))
    }

    pub fn label(self) -> &'static str {
        match self {
            EarlyStopDecision::Deactivate(StopReason::DecreasingTrend) => "deactivate_trend",
            EarlyStopDecision::Deactivate(StopReason::LowCost) => "deactivate_low_cost",
            EarlyStopDecision::Continue(ContinueReason::InsufficientData) => "continue_insufficient",
            EarlyStopDecision::Continue(ContinueReason::NoEvidence) => "continue",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SlopeInterval {
    pub slope: f64,
    pub std_err: f64,
    pub t_crit: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Two-sided Student-t quantile `t_{(1+level)/2, df}`.
pub fn t_critical(level: f64, df: f64) -> f64 {
    let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
    dist.inverse_cdf(0.5 + level / 2.0)
}

/// OLS slope of `y` on `t` and its confidence interval. `None` with fewer
/// than three points or constant `t`.
pub fn slope_interval(t: &[f64], y: &[f64], level: f64) -> Option<SlopeInterval> {
    let n = t.len();
    if n < 3 || y.len() != n {
        return None;
    }
    let nf = n as f64;
    let tm = t.iter().sum::<f64>() / nf;
    let ym = y.iter().sum::<f64>() / nf;
    let sxx: f64 = t.iter().map(|v| (v - tm).powi(2)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let sxy: f64 = t.iter().zip(y).map(|(a, b)| (a - tm) * (b - ym)).sum();
    let slope = sxy / sxx;
    let intercept = ym - slope * tm;
    let ssr: f64 = t
        .iter()
        .zip(y)
        .map(|(a, b)| (b - intercept - slope * a).powi(2))
        .sum();
    let std_err = (ssr / (nf - 2.0) / sxx).sqrt();
    let t_crit = t_critical(level, nf - 2.0);
    Some(SlopeInterval {
        slope,
        std_err,
        t_crit,
        lower: slope - t_crit * std_err,
        upper: slope + t_crit * std_err,
    })
}

/// `indices` are the impedance-update indices of `costs`.
pub fn early_stop(costs: &[f64], indices: &[f64], reset_in_window: bool, cfg: &EarlyStopConfig) -> EarlyStopDecision {
    if costs.len() < 3 || indices.len() != costs.len() {
        return EarlyStopDecision::Continue(ContinueReason::InsufficientData);
    }
    if !reset_in_window {
        if let Some(ci) = slope_interval(indices, costs, cfg.ci_level) {
            if ci.upper < 0.0 {
                return EarlyStopDecision::Deactivate(StopReason::DecreasingTrend);
            }
        }
    }
    let mean = costs.iter().sum::<f64>() / costs.len() as f64;
    if mean < cfg.cost_threshold {
        return EarlyStopDecision::Deactivate(StopReason::LowCost);
    }
    EarlyStopDecision::Continue(ContinueReason::NoEvidence)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx(n: usize) -> Vec<f64> {
        (0..n).map(|i| i as f64).collect()
    }

    #[test]
    fn decreasing_series_deactivates_on_trend() {
        let costs: Vec<f64> = (0..10).map(|i| 1.0 - 0.1 * i as f64).collect();
        let ci = slope_interval(&idx(10), &costs, 0.95).unwrap();
        assert!((ci.slope + 0.1).abs() < 1e-12);
        let d = early_stop(&costs, &idx(10), false, &EarlyStopConfig::default());
        assert_eq!(d, EarlyStopDecision::Deactivate(StopReason::DecreasingTrend));
    }

    #[test]
    fn reset_disables_trend_rule() {
        let costs: Vec<f64> = (0..10).map(|i| 1.0 - 0.1 * i as f64).collect();
        let d = early_stop(&costs, &idx(10), true, &EarlyStopConfig::default());
        assert_eq!(d, EarlyStopDecision::Continue(ContinueReason::NoEvidence));
    }

    #[test]
    fn low_constant_cost() {
        let d = early_stop(&[0.02; 10], &idx(10), false, &EarlyStopConfig::default());
        assert_eq!(d, EarlyStopDecision::Deactivate(StopReason::LowCost));
    }

    #[test]
    fn high_constant_cost() {
        let d = early_stop(&[0.5; 10], &idx(10), false, &EarlyStopConfig::default());
        assert_eq!(d, EarlyStopDecision::Continue(ContinueReason::NoEvidence));
    }

    #[test]
    fn too_few_points() {
        let d = early_stop(&[0.01, 0.01], &idx(2), false, &EarlyStopConfig::default());
        assert_eq!(d, EarlyStopDecision::Continue(ContinueReason::InsufficientData));
    }

    #[test]
    fn t_quantile_known_values() {
        // Standard table values.
        assert!((t_critical(0.95, 13.0) - 2.160369).abs() < 1e-5);
        assert!((t_critical(0.95, 1.0) - 12.706205).abs() < 1e-4);
        assert!((t_critical(0.95, 1e6) - 1.959966).abs() < 1e-3);
    }
}
