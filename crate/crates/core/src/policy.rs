//! Provider caching rules and price schedules.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::replay::UsageRecord;

const PER_MTOK: f64 = 1_000_000.0;

/// USD per million tokens unless noted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceSchedule {
    pub input_per_mtok: f64,
    pub output_per_mtok: f64,
    pub cached_read_per_mtok: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_write_per_mtok: Option<f64>,
    /// USD per million cached tokens per hour (explicit context caches).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub storage_per_mtok_hour: Option<f64>,
    /// Calls whose prompt exceeds this many tokens are billed at the tier-2 rates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tier_boundary_tokens: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tier2_input_per_mtok: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tier2_output_per_mtok: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tier2_cached_read_per_mtok: Option<f64>,
}

impl PriceSchedule {
    pub fn flat(input: f64, output: f64, cached_read: f64) -> Self {
        Self {
            input_per_mtok: input,
            output_per_mtok: output,
            cached_read_per_mtok: cached_read,
            cache_write_per_mtok: None,
            storage_per_mtok_hour: None,
            tier_boundary_tokens: None,
            tier2_input_per_mtok: None,
            tier2_output_per_mtok: None,
            tier2_cached_read_per_mtok: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let prices = [
            Some(self.input_per_mtok),
            Some(self.output_per_mtok),
            Some(self.cached_read_per_mtok),
            self.cache_write_per_mtok,
            self.storage_per_mtok_hour,
            self.tier2_input_per_mtok,
            self.tier2_output_per_mtok,
            self.tier2_cached_read_per_mtok,
        ];
        if prices.iter().flatten().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::Validation("prices must be finite and non-negative".into()));
        }
        if self.cached_read_per_mtok >= self.input_per_mtok {
            return Err(Error::Validation(
                "cached_read_per_mtok must be below input_per_mtok".into(),
            ));
        }
        let tier2 = [
            self.tier2_input_per_mtok,
            self.tier2_output_per_mtok,
            self.tier2_cached_read_per_mtok,
        ];
        if self.tier_boundary_tokens.is_some() && tier2.iter().any(Option::is_none) {
            return Err(Error::Validation(
                "tier_boundary_tokens requires every tier2 price".into(),
            ));
        }
        Ok(())
    }

    /// (input, output, cached_read) rates for a call with `prompt_total_tokens` of prompt.
    fn rates_for(&self, prompt_total_tokens: u64) -> (f64, f64, f64) {
        match self.tier_boundary_tokens {
            Some(boundary) if prompt_total_tokens > boundary => (
                self.tier2_input_per_mtok.unwrap_or(self.input_per_mtok),
                self.tier2_output_per_mtok.unwrap_or(self.output_per_mtok),
                self.tier2_cached_read_per_mtok
                    .unwrap_or(self.cached_read_per_mtok),
            ),
            _ => (
                self.input_per_mtok,
                self.output_per_mtok,
                self.cached_read_per_mtok,
            ),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CacheMode {
    /// The provider caches eligible prefixes on its own.
    Automatic,
    /// Only prefixes ending at a developer-placed breakpoint are cached.
    ExplicitBreakpoints,
    /// The developer creates a cache object up to a boundary and pays storage for it.
    ExplicitCacheObject,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderPolicy {
    pub name: String,
    pub min_cache_tokens: u64,
    pub granularity_tokens: u64,
    pub ttl_seconds: f64,
    pub refresh_on_read: bool,
    pub mode: CacheMode,
    pub prices: PriceSchedule,
    /// Let automatic policies also reuse breaker-delimited interior segments.
    #[serde(default)]
    pub opportunistic_segments: bool,
}

pub const AUTOMATIC_GRANULARITY: u64 = 128;
pub const DEFAULT_TTL_SECONDS: f64 = 300.0;

impl ProviderPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.name.trim().is_empty() {
            return Err(Error::Validation("policy name is empty".into()));
        }
        if self.granularity_tokens == 0 {
            return Err(Error::Validation(format!(
                "{}: granularity_tokens must be at least 1",
                self.name
            )));
        }
        if self.min_cache_tokens < self.granularity_tokens {
            return Err(Error::Validation(format!(
                "{}: min_cache_tokens must be >= granularity_tokens",
                self.name
            )));
        }
        if !(self.ttl_seconds.is_finite() && self.ttl_seconds > 0.0) {
            return Err(Error::Validation(format!(
                "{}: ttl_seconds must be positive",
                self.name
            )));
        }
        self.prices.validate()
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let p: ProviderPolicy = serde_json::from_str(json)?;
        p.validate()?;
        Ok(p)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// The four policies used for the reference cost analysis (January 2026 prices).
///
/// Granularity, TTL and refresh behaviour are not published alongside the
/// prices; the values here are defaults and can be overridden per run.
pub fn builtin_policies() -> Vec<ProviderPolicy> {
    let automatic = |name: &str, min: u64, prices: PriceSchedule| ProviderPolicy {
        name: name.to_owned(),
        min_cache_tokens: min,
        granularity_tokens: AUTOMATIC_GRANULARITY,
        ttl_seconds: DEFAULT_TTL_SECONDS,
        refresh_on_read: false,
        mode: CacheMode::Automatic,
        prices,
        opportunistic_segments: false,
    };

    let claude = ProviderPolicy {
        name: "claude-sonnet-4.5".to_owned(),
        min_cache_tokens: 1024,
        granularity_tokens: 1,
        ttl_seconds: DEFAULT_TTL_SECONDS,
        refresh_on_read: true,
        mode: CacheMode::ExplicitBreakpoints,
        prices: PriceSchedule {
            cache_write_per_mtok: Some(3.75),
            ..PriceSchedule::flat(3.00, 15.00, 0.30)
        },
        opportunistic_segments: false,
    };

    let gemini_prices = PriceSchedule {
        storage_per_mtok_hour: Some(4.50),
        tier_boundary_tokens: Some(200_000),
        tier2_input_per_mtok: Some(2.50),
        tier2_output_per_mtok: Some(15.00),
        tier2_cached_read_per_mtok: Some(0.250),
        ..PriceSchedule::flat(1.25, 10.00, 0.125)
    };

    vec![
        automatic("gpt-4o", 1024, PriceSchedule::flat(2.50, 10.00, 1.25)),
        automatic("gpt-5.2", 1024, PriceSchedule::flat(1.75, 14.00, 0.175)),
        claude,
        automatic("gemini-2.5-pro", 4096, gemini_prices),
    ]
}

pub fn builtin_policy(name: &str) -> Option<ProviderPolicy> {
    builtin_policies().into_iter().find(|p| p.name == name)
}

/// Cost of one API call in USD.
///
/// Tiered schedules pick the tier from the whole prompt size and bill every
/// token of the call at that tier.
pub fn price_call(usage: &UsageRecord, policy: &ProviderPolicy, prompt_total_tokens: u64) -> f64 {
    let prices = &policy.prices;
    let (input, output, cached_read) = prices.rates_for(prompt_total_tokens);
    // Written tokens are also uncached; with a write price they are billed
    // at that rate instead of the input rate, never at both.
    let (write, input_tokens) = match prices.cache_write_per_mtok {
        Some(rate) => (rate, usage.uncached_input.saturating_sub(usage.cache_write)),
        None => (0.0, usage.uncached_input),
    };
    (input_tokens as f64 * input
        + usage.cached_read as f64 * cached_read
        + usage.cache_write as f64 * write
        + usage.output as f64 * output)
        / PER_MTOK
}

/// Storage fee for keeping `cached_tokens` in an explicit cache for `hours`.
pub fn price_storage(cached_tokens: u64, hours: f64, policy: &ProviderPolicy) -> Result<f64> {
    if !(hours.is_finite() && hours >= 0.0) {
        return Err(Error::invalid("hours must be finite and non-negative"));
    }
    Ok(policy
        .prices
        .storage_per_mtok_hour
        .map_or(0.0, |rate| cached_tokens as f64 * hours * rate / PER_MTOK))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn usage(uncached: u64, read: u64, write: u64, output: u64) -> UsageRecord {
        UsageRecord {
            uncached_input: uncached,
            cached_read: read,
            cache_write: write,
            output,
        }
    }

    fn policy(name: &str) -> ProviderPolicy {
        builtin_policy(name).unwrap()
    }

    #[test]
    fn builtins_match_published_tables() {
        let all = builtin_policies();
        assert_eq!(all.len(), 4);
        let names: Vec<_> = all.iter().map(|p| p.name.as_str()).collect();
        assert_eq!(names, ["gpt-4o", "gpt-5.2", "claude-sonnet-4.5", "gemini-2.5-pro"]);
        let mins: Vec<_> = all.iter().map(|p| p.min_cache_tokens).collect();
        assert_eq!(mins, [1024, 1024, 1024, 4096]);
        let modes: Vec<_> = all.iter().map(|p| p.mode).collect();
        assert_eq!(
            modes,
            [
                CacheMode::Automatic,
                CacheMode::Automatic,
                CacheMode::ExplicitBreakpoints,
                CacheMode::Automatic
            ]
        );
        for p in &all {
            p.validate().unwrap();
            assert_eq!(p.ttl_seconds, 300.0);
            assert_eq!(p.refresh_on_read, p.name.starts_with("claude"));
            let expected_gran = if p.mode == CacheMode::Automatic { 128 } else { 1 };
            assert_eq!(p.granularity_tokens, expected_gran);
        }
        assert_eq!(policy("claude-sonnet-4.5").prices.cache_write_per_mtok, Some(3.75));
        let g = policy("gpt-5.2").prices;
        assert!((g.cached_read_per_mtok / g.input_per_mtok - 0.1).abs() < 1e-15);
    }

    #[test]
    fn price_call_examples() {
        let c = price_call(&usage(10_000, 0, 0, 0), &policy("gpt-4o"), 10_000);
        assert!((c - 0.025).abs() <= 1e-12 * 0.025);
        let c = price_call(&usage(0, 0, 10_000, 0), &policy("claude-sonnet-4.5"), 10_000);
        assert!((c - 0.0375).abs() <= 1e-12 * 0.0375);
        let c = price_call(&usage(250_000, 0, 0, 0), &policy("gemini-2.5-pro"), 250_000);
        assert!((c - 0.625).abs() <= 1e-12 * 0.625);
        // exactly at the boundary stays in tier 1
        let c = price_call(&usage(200_000, 0, 0, 0), &policy("gemini-2.5-pro"), 200_000);
        assert!((c - 0.25).abs() <= 1e-12 * 0.25);
    }

    #[test]
    fn written_tokens_are_billed_once() {
        let p = policy("claude-sonnet-4.5");
        let c = price_call(&usage(12_000, 0, 10_000, 0), &p, 12_000);
        let expected = (2_000.0 * 3.0 + 10_000.0 * 3.75) / 1e6;
        assert!((c - expected).abs() <= 1e-12 * expected);
        // Without a write price the written tokens are plain input.
        let g = policy("gpt-4o");
        assert_eq!(
            price_call(&usage(12_000, 0, 10_000, 0), &g, 12_000),
            price_call(&usage(12_000, 0, 0, 0), &g, 12_000)
        );
    }

    #[test]
    fn zero_usage_is_free() {
        for p in builtin_policies() {
            assert_eq!(price_call(&UsageRecord::default(), &p, 0), 0.0);
            assert_eq!(price_call(&UsageRecord::default(), &p, 500_000), 0.0);
        }
    }

    #[test]
    fn read_discount_ratios() {
        for (name, ratio) in [
            ("gpt-5.2", 0.1),
            ("gpt-4o", 0.5),
            ("claude-sonnet-4.5", 0.1),
            ("gemini-2.5-pro", 0.1),
        ] {
            let p = policy(name);
            let read = price_call(&usage(0, 50_000, 0, 0), &p, 50_000);
            let full = price_call(&usage(50_000, 0, 0, 0), &p, 50_000);
            assert!((read / full - ratio).abs() < 1e-12, "{name}");
        }
    }

    #[test]
    fn storage_pricing() {
        let g = policy("gemini-2.5-pro");
        assert!((price_storage(1_000_000, 1.0, &g).unwrap() - 4.5).abs() < 1e-12);
        assert_eq!(price_storage(0, 5.0, &g).unwrap(), 0.0);
        assert_eq!(price_storage(1_000_000, 1.0, &policy("gpt-4o")).unwrap(), 0.0);
        assert!(price_storage(1, -1.0, &g).is_err());
    }

    #[test]
    fn validation_rejects_bad_policies() {
        let mut p = policy("gpt-4o");
        p.granularity_tokens = 0;
        assert!(p.validate().is_err());
        let mut p = policy("gpt-4o");
        p.min_cache_tokens = 64;
        assert!(p.validate().is_err());
        let mut p = policy("gpt-4o");
        p.prices.cached_read_per_mtok = 2.5;
        assert!(p.validate().is_err());
        let mut p = policy("gemini-2.5-pro");
        p.prices.tier2_output_per_mtok = None;
        assert!(p.validate().is_err());
        let mut p = policy("gpt-4o");
        p.ttl_seconds = 0.0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn json_round_trip() {
        for p in builtin_policies() {
            let back = ProviderPolicy::from_json(&p.to_json().unwrap()).unwrap();
            assert_eq!(back, p);
        }
        assert!(ProviderPolicy::from_json(r#"{"name":"x"}"#).is_err());
    }

    #[test]
    fn linear_within_tier() {
        let p = policy("claude-sonnet-4.5");
        let a = usage(1200, 30_000, 500, 80);
        let b = usage(4000, 12_000, 0, 900);
        let sum = usage(5200, 42_000, 500, 980);
        let lhs = price_call(&a, &p, 1000) + price_call(&b, &p, 1000);
        let rhs = price_call(&sum, &p, 1000);
        assert!((lhs - rhs).abs() <= 1e-12 * rhs);
    }
}
