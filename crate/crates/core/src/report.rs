//! Experiment summaries: per-policy baselines, per-mode comparisons, best modes.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::replay::ConditionRun;
use crate::stats::{compare, mean, median, Comparison, TestKind};
use crate::strategy::StrategyMode;

/// Which unit a TTFT sample is drawn from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TtftSample {
    /// One value per session: its mean call TTFT.
    #[default]
    SessionMean,
    /// Every call pooled.
    PerCall,
}

/// Evaluation samples of one (policy, mode) condition.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionSamples {
    pub policy: String,
    pub mode: StrategyMode,
    /// Total cost of each session.
    pub cost: Vec<f64>,
    pub ttft: Vec<f64>,
    pub warmup_cache_write_tokens: u64,
}

impl ConditionSamples {
    pub fn from_run(run: &ConditionRun, ttft: TtftSample) -> Self {
        let ttft = match ttft {
            TtftSample::SessionMean => run.sessions.iter().map(|s| s.mean_ttft_ms()).collect(),
            TtftSample::PerCall => run
                .sessions
                .iter()
                .flat_map(|s| s.calls.iter().map(|c| c.ttft_ms))
                .collect(),
        };
        Self {
            policy: run.policy.clone(),
            mode: run.mode,
            cost: run.sessions.iter().map(|s| s.total_cost()).collect(),
            ttft,
            warmup_cache_write_tokens: run.warmup_cache_write_tokens(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub mode: StrategyMode,
    pub sessions: usize,
    pub mean_cost_usd: f64,
    pub median_cost_usd: f64,
    pub mean_ttft_ms: f64,
    pub median_ttft_ms: f64,
    pub warmup_cache_write_tokens: u64,
}

impl ModeSummary {
    fn of(s: &ConditionSamples) -> Self {
        Self {
            mode: s.mode,
            sessions: s.cost.len(),
            mean_cost_usd: mean(&s.cost),
            median_cost_usd: median(&s.cost),
            mean_ttft_ms: mean(&s.ttft),
            median_ttft_ms: median(&s.ttft),
            warmup_cache_write_tokens: s.warmup_cache_write_tokens,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeReport {
    #[serde(flatten)]
    pub summary: ModeSummary,
    pub cost: Comparison,
    pub ttft: Comparison,
    /// Variant mean as a percentage of the baseline mean.
    pub normalized_cost_pct: f64,
    pub normalized_ttft_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyReport {
    pub policy: String,
    pub baseline: ModeSummary,
    pub modes: Vec<ModeReport>,
    pub best_cost_mode: Option<StrategyMode>,
    pub best_ttft_mode: Option<StrategyMode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub alpha: f64,
    pub test: TestKind,
    pub ttft_sample: TtftSample,
    pub policies: Vec<PolicyReport>,
}

fn best_by(modes: &[ModeReport], metric: impl Fn(&ModeReport) -> f64) -> Option<StrategyMode> {
    modes
        .iter()
        .fold(None::<&ModeReport>, |best, m| match best {
            Some(b) if metric(b) >= metric(m) => Some(b),
            _ => Some(m),
        })
        .map(|m| m.summary.mode)
}

/// Compare every mode against its policy's no-cache baseline.
///
/// Policies keep their order of first appearance in `conditions`.
pub fn summarize_experiment(
    conditions: &[ConditionSamples],
    alpha: f64,
    test: TestKind,
    ttft_sample: TtftSample,
) -> Result<ExperimentReport> {
    if let Some(c) = conditions.iter().find(|c| c.cost.len() < 2 || c.ttft.len() < 2) {
        return Err(Error::invalid(format!(
            "{} / {}: at least 2 sessions are needed for comparison, got {}",
            c.policy,
            c.mode,
            c.cost.len()
        )));
    }
    let mut order: Vec<&str> = Vec::new();
    for c in conditions {
        if !order.contains(&c.policy.as_str()) {
            order.push(&c.policy);
        }
    }

    let mut policies = Vec::with_capacity(order.len());
    for name in order {
        let of_policy: Vec<_> = conditions.iter().filter(|c| c.policy == name).collect();
        let baseline = of_policy
            .iter()
            .find(|c| c.mode == StrategyMode::NoCache)
            .ok_or_else(|| Error::Config(format!("{name}: no-cache baseline is missing")))?;
        let mut modes = Vec::new();
        for variant in of_policy.iter().filter(|c| c.mode != StrategyMode::NoCache) {
            let cost = compare(&baseline.cost, &variant.cost, alpha, test)?;
            let ttft = compare(&baseline.ttft, &variant.ttft, alpha, test)?;
            modes.push(ModeReport {
                summary: ModeSummary::of(variant),
                normalized_cost_pct: 100.0 * cost.variant_mean / cost.baseline_mean,
                normalized_ttft_pct: 100.0 * ttft.variant_mean / ttft.baseline_mean,
                cost,
                ttft,
            });
        }
        policies.push(PolicyReport {
            policy: name.to_owned(),
            baseline: ModeSummary::of(baseline),
            best_cost_mode: best_by(&modes, |m| m.cost.improvement_pct),
            best_ttft_mode: best_by(&modes, |m| m.ttft.improvement_pct),
            modes,
        });
    }
    Ok(ExperimentReport {
        alpha,
        test,
        ttft_sample,
        policies,
    })
}

impl ExperimentReport {
    /// One row per policy × mode × metric.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        #[derive(Serialize)]
        struct Row<'a> {
            policy: &'a str,
            mode: StrategyMode,
            metric: &'static str,
            baseline_mean: f64,
            variant_mean: f64,
            improvement_pct: f64,
            normalized_pct: f64,
            t_stat: f64,
            dof: f64,
            p_value: f64,
            significant: bool,
        }
        let mut w = csv::Writer::from_writer(out);
        for p in &self.policies {
            for m in &p.modes {
                for (metric, c, norm) in [
                    ("cost", &m.cost, m.normalized_cost_pct),
                    ("ttft", &m.ttft, m.normalized_ttft_pct),
                ] {
                    w.serialize(Row {
                        policy: &p.policy,
                        mode: m.summary.mode,
                        metric,
                        baseline_mean: c.baseline_mean,
                        variant_mean: c.variant_mean,
                        improvement_pct: c.improvement_pct,
                        normalized_pct: norm,
                        t_stat: c.t_stat,
                        dof: c.dof,
                        p_value: c.p_value,
                        significant: c.significant,
                    })?;
                }
            }
        }
        w.flush().map_err(|e| Error::io("<summary csv>", e))?;
        Ok(())
    }

    /// Fixed-width table: one block per policy, one row per mode.
    pub fn render_table(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!(
            "{:<20} {:<22} {:>10} {:>10} {:>10} {:>10}\n",
            "policy", "mode", "cost %", "cost p", "ttft %", "ttft p"
        ));
        for p in &self.policies {
            s.push_str(&format!(
                "{:<20} {:<22} {:>10} {:>10} {:>10} {:>10}\n",
                p.policy, "no-cache (baseline)", "---", "---", "---", "---"
            ));
            for m in &p.modes {
                s.push_str(&format!(
                    "{:<20} {:<22} {:>9.1}% {:>10.2e} {:>9.1}% {:>10.2e}\n",
                    "",
                    m.summary.mode.as_str(),
                    m.cost.improvement_pct,
                    m.cost.p_value,
                    m.ttft.improvement_pct,
                    m.ttft.p_value
                ));
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cond(policy: &str, mode: StrategyMode, cost: &[f64], ttft: &[f64]) -> ConditionSamples {
        ConditionSamples {
            policy: policy.into(),
            mode,
            cost: cost.to_vec(),
            ttft: ttft.to_vec(),
            warmup_cache_write_tokens: 0,
        }
    }

    #[test]
    fn picks_best_mode() {
        let base = cond("claude", StrategyMode::NoCache, &[100.0, 100.0], &[10.0, 12.0]);
        let full = cond("claude", StrategyMode::FullContext, &[22.2, 22.2], &[9.0, 9.5]);
        let sys = cond("claude", StrategyMode::SystemPromptOnly, &[21.5, 21.5], &[8.0, 8.1]);
        let r = summarize_experiment(&[base, full, sys], 0.05, TestKind::Welch, TtftSample::SessionMean)
            .unwrap();
        let p = &r.policies[0];
        assert!((p.modes[0].cost.improvement_pct - 77.8).abs() < 1e-9);
        assert!((p.modes[1].cost.improvement_pct - 78.5).abs() < 1e-9);
        assert_eq!(p.best_cost_mode, Some(StrategyMode::SystemPromptOnly));
        assert!((p.modes[1].normalized_cost_pct - 21.5).abs() < 1e-9);
    }

    #[test]
    fn equal_to_baseline_is_zero() {
        let base = cond("x", StrategyMode::NoCache, &[5.0, 6.0], &[1.0, 2.0]);
        let same = cond("x", StrategyMode::FullContext, &[5.0, 6.0], &[1.0, 2.0]);
        let r = summarize_experiment(&[base, same], 0.05, TestKind::Welch, TtftSample::SessionMean)
            .unwrap();
        let m = &r.policies[0].modes[0];
        assert_eq!(m.cost.improvement_pct, 0.0);
        assert_eq!(m.ttft.improvement_pct, 0.0);
    }

    #[test]
    fn baseline_only_has_no_comparisons() {
        let base = cond("x", StrategyMode::NoCache, &[5.0, 6.0], &[1.0, 2.0]);
        let r = summarize_experiment(&[base], 0.05, TestKind::Welch, TtftSample::SessionMean).unwrap();
        assert!(r.policies[0].modes.is_empty());
        assert_eq!(r.policies[0].best_cost_mode, None);
    }

    #[test]
    fn errors() {
        let lone = cond("x", StrategyMode::FullContext, &[5.0, 6.0], &[1.0, 2.0]);
        assert!(matches!(
            summarize_experiment(&[lone], 0.05, TestKind::Welch, TtftSample::SessionMean),
            Err(Error::Config(_))
        ));
        let single = cond("x", StrategyMode::NoCache, &[5.0], &[1.0]);
        assert!(matches!(
            summarize_experiment(&[single], 0.05, TestKind::Welch, TtftSample::SessionMean),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn json_round_trip_with_degenerate_t() {
        let base = cond("x", StrategyMode::NoCache, &[5.0, 5.0], &[1.0, 2.0]);
        let v = cond("x", StrategyMode::SystemPromptOnly, &[1.0, 1.0], &[1.0, 1.5]);
        let r = summarize_experiment(&[base, v], 0.05, TestKind::Welch, TtftSample::SessionMean)
            .unwrap();
        assert!(r.policies[0].modes[0].cost.t_stat.is_infinite());
        let json = serde_json::to_string(&r).unwrap();
        let back: ExperimentReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
        let mut csv = Vec::new();
        r.write_csv(&mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 3);
    }
}
