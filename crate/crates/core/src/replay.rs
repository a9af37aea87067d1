//! Session replay under a virtual clock: strategy, cache engine, pricing and
//! the latency model composed per call.

use std::ops::{Add, AddAssign};

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;
use rand_core::SeedableRng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::cache::CacheStore;
use crate::error::{Error, Result};
use crate::policy::{price_call, CacheMode, ProviderPolicy};
use crate::seed;
use crate::strategy::{apply_strategy, cacheable_limit, StrategyMode};
use crate::token::{flatten, Message, TokenSeq};
use crate::workload::SessionTranscript;

/// Token accounting for one API call.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageRecord {
    pub uncached_input: u64,
    pub cached_read: u64,
    pub cache_write: u64,
    pub output: u64,
}

impl UsageRecord {
    pub fn input_total(&self) -> u64 {
        self.uncached_input + self.cached_read
    }
}

impl Add for UsageRecord {
    type Output = UsageRecord;

    fn add(self, o: UsageRecord) -> UsageRecord {
        UsageRecord {
            uncached_input: self.uncached_input + o.uncached_input,
            cached_read: self.cached_read + o.cached_read,
            cache_write: self.cache_write + o.cache_write,
            output: self.output + o.output,
        }
    }
}

impl AddAssign for UsageRecord {
    fn add_assign(&mut self, o: UsageRecord) {
        *self = *self + o;
    }
}

/// Linear prefill model with multiplicative lognormal noise:
/// `(base + u·uncached + c·cached + w·written) · exp(N(0, σ))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatencyModel {
    pub base_ms: f64,
    pub per_uncached_token_ms: f64,
    pub per_cached_token_ms: f64,
    pub per_write_token_ms: f64,
    /// Standard deviation of the noise in log space.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for LatencyModel {
    fn default() -> Self {
        Self {
            base_ms: 400.0,
            per_uncached_token_ms: 0.08,
            per_cached_token_ms: 0.008,
            per_write_token_ms: 0.1,
            noise_sigma: 0.0,
            seed: 0,
        }
    }
}

impl LatencyModel {
    pub fn validate(&self) -> Result<()> {
        let coeffs = [
            self.base_ms,
            self.per_uncached_token_ms,
            self.per_cached_token_ms,
            self.per_write_token_ms,
            self.noise_sigma,
        ];
        if coeffs.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(Error::Validation(
                "latency coefficients must be finite and non-negative".into(),
            ));
        }
        if self.per_cached_token_ms >= self.per_uncached_token_ms {
            return Err(Error::Validation(
                "per_cached_token_ms must be below per_uncached_token_ms".into(),
            ));
        }
        Ok(())
    }

    /// Noise-free TTFT.
    pub fn expected_ms(&self, usage: &UsageRecord) -> f64 {
        self.base_ms
            + self.per_uncached_token_ms * usage.uncached_input as f64
            + self.per_cached_token_ms * usage.cached_read as f64
            + self.per_write_token_ms * usage.cache_write as f64
    }

    /// Multiplicative noise for the call identified by `stream`.
    pub fn noise_factor(&self, stream: u64) -> f64 {
        if self.noise_sigma == 0.0 {
            return 1.0;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(self.seed, &[stream]));
        let normal = Normal::new(0.0, self.noise_sigma).expect("sigma validated");
        normal.sample(&mut rng).exp()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct VirtualClock {
    now_s: f64,
}

impl VirtualClock {
    pub fn now(&self) -> f64 {
        self.now_s
    }

    /// Move to `t`; never moves backwards.
    pub fn advance_to(&mut self, t: f64) {
        self.now_s = self.now_s.max(t);
    }

    pub fn advance_by(&mut self, dt: f64) {
        self.now_s += dt.max(0.0);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallRecord {
    pub call_index: usize,
    pub usage: UsageRecord,
    pub cost_usd: f64,
    pub ttft_ms: f64,
    pub time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionResult {
    pub session_id: String,
    pub calls: Vec<CallRecord>,
}

impl SessionResult {
    /// Sum of per-call costs.
    pub fn total_cost(&self) -> f64 {
        self.calls.iter().map(|c| c.cost_usd).sum()
    }

    pub fn mean_ttft_ms(&self) -> f64 {
        if self.calls.is_empty() {
            return 0.0;
        }
        self.calls.iter().map(|c| c.ttft_ms).sum::<f64>() / self.calls.len() as f64
    }

    pub fn usage(&self) -> UsageRecord {
        self.calls.iter().fold(UsageRecord::default(), |acc, c| acc + c.usage)
    }
}

/// All sessions of one (policy, mode) condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionRun {
    pub policy: String,
    pub mode: StrategyMode,
    pub warmup: Vec<SessionResult>,
    pub sessions: Vec<SessionResult>,
}

impl ConditionRun {
    /// Cache writes made while priming, kept apart from evaluation totals.
    pub fn warmup_cache_write_tokens(&self) -> u64 {
        self.warmup.iter().map(|s| s.usage().cache_write).sum()
    }
}

/// Per-condition replay state: one store, one clock, one noise stream.
pub struct Replayer<'a> {
    policy: &'a ProviderPolicy,
    mode: StrategyMode,
    latency: &'a LatencyModel,
    store: CacheStore,
    segments: CacheStore,
    clock: VirtualClock,
}

impl<'a> Replayer<'a> {
    pub fn new(policy: &'a ProviderPolicy, mode: StrategyMode, latency: &'a LatencyModel) -> Self {
        Self {
            policy,
            mode,
            latency,
            store: CacheStore::new(),
            segments: CacheStore::new(),
            clock: VirtualClock::default(),
        }
    }

    pub fn clock(&self) -> &VirtualClock {
        &self.clock
    }

    pub fn clock_mut(&mut self) -> &mut VirtualClock {
        &mut self.clock
    }

    pub fn store(&self) -> &CacheStore {
        &self.store
    }

    /// Simulate one request at the current virtual time.
    ///
    /// `noise_stream` identifies the call within the latency model's stream.
    pub fn replay_call(
        &mut self,
        messages: &[Message],
        request_index: u64,
        session_seed: u64,
        output_tokens: u64,
        noise_stream: u64,
    ) -> Result<(UsageRecord, f64, f64)> {
        let policy = self.policy;
        let now = self.clock.now();
        let prompt = apply_strategy(messages, self.mode, request_index, session_seed, policy.mode)?;
        let flat = flatten(&prompt);
        let total = flat.len() as u64;

        let hit = self.store.lookup(&flat, now, policy);
        let mut cached = hit.cached_tokens;
        let mut write = self
            .store
            .commit(&flat, cacheable_limit(&prompt, policy.mode), now, policy)?;

        if policy.opportunistic_segments
            && policy.mode == CacheMode::Automatic
            && self.mode != StrategyMode::NoCache
        {
            for (i, &at) in prompt.breakers.iter().enumerate() {
                let start = at + 1;
                let end = prompt.breakers.get(i + 1).copied().unwrap_or(flat.len());
                if start >= end {
                    continue;
                }
                let segment = TokenSeq(flat.as_slice()[start..end].to_vec());
                cached += self.segments.lookup(&segment, now, policy).cached_tokens;
                write += self.segments.commit(&segment, segment.len(), now, policy)?;
            }
        }

        debug_assert!(cached <= total);
        let usage = UsageRecord {
            uncached_input: total - cached,
            cached_read: cached,
            cache_write: write,
            output: output_tokens,
        };
        debug_assert_eq!(usage.input_total(), total);
        let cost = price_call(&usage, policy, total);
        let ttft = self.latency.expected_ms(&usage) * self.latency.noise_factor(noise_stream);
        Ok((usage, cost, ttft))
    }

    /// Replay every request of one session; the clock ends one gap after the last call.
    pub fn replay_session(
        &mut self,
        transcript: &SessionTranscript,
        session_seed: u64,
        session_gap_s: f64,
        output_tokens: Option<u64>,
    ) -> Result<SessionResult> {
        let start = self.clock.now();
        let mut calls = Vec::new();
        for req in transcript.requests() {
            self.clock.advance_to(start + req.timestamp_s);
            let stream = seed::derive(session_seed, &[req.index as u64]);
            let (usage, cost_usd, ttft_ms) = self.replay_call(
                &req.messages,
                req.index as u64,
                session_seed,
                output_tokens.unwrap_or(req.output_tokens),
                stream,
            )?;
            calls.push(CallRecord {
                call_index: req.index,
                usage,
                cost_usd,
                ttft_ms,
                time_s: self.clock.now(),
            });
        }
        self.clock.advance_by(session_gap_s);
        Ok(SessionResult {
            session_id: transcript.session_id.clone(),
            calls,
        })
    }
}

/// Inputs shared by every condition of a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplayOptions {
    /// Root of the condition's breaker and noise streams.
    pub condition_seed: u64,
    /// Idle time between consecutive sessions.
    pub session_gap_s: f64,
    /// Fixed output length for every call instead of the transcript's.
    pub output_tokens: Option<u64>,
}

/// Seed of one condition, derived from names so adding conditions never shifts others.
pub fn condition_seed(master: u64, policy: &str, mode: StrategyMode) -> u64 {
    seed::derive(master, &[seed::label(policy), seed::label(mode.as_str())])
}

/// Run one condition on a fresh store: the first `warmup_sessions` transcripts
/// prime the cache, the rest are evaluated.
pub fn run_condition(
    transcripts: &[SessionTranscript],
    mode: StrategyMode,
    policy: &ProviderPolicy,
    latency: &LatencyModel,
    warmup_sessions: usize,
    options: ReplayOptions,
) -> Result<ConditionRun> {
    if warmup_sessions > transcripts.len() {
        return Err(Error::invalid(format!(
            "warmup_sessions {warmup_sessions} exceeds {} transcripts",
            transcripts.len()
        )));
    }
    let mut replayer = Replayer::new(policy, mode, latency);
    let mut results = Vec::with_capacity(transcripts.len());
    for (i, t) in transcripts.iter().enumerate() {
        let session_seed = seed::derive(options.condition_seed, &[i as u64]);
        results.push(replayer.replay_session(t, session_seed, options.session_gap_s, options.output_tokens)?);
    }
    let sessions = results.split_off(warmup_sessions);
    Ok(ConditionRun {
        policy: policy.name.clone(),
        mode,
        warmup: results,
        sessions,
    })
}

/// Result of fitting the latency model to observations.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub model: LatencyModel,
    pub rmse_ms: f64,
}

/// Least-squares fit of the noise-free latency model to `(usage, ttft_ms)` pairs.
pub fn calibrate_latency(observed: &[(UsageRecord, f64)]) -> Result<Calibration> {
    const COLS: usize = 4;
    if observed.len() < COLS {
        return Err(Error::DegenerateFit(format!(
            "need at least {COLS} observations, got {}",
            observed.len()
        )));
    }
    let row = |u: &UsageRecord| {
        [
            1.0,
            u.uncached_input as f64,
            u.cached_read as f64,
            u.cache_write as f64,
        ]
    };
    let raw = DMatrix::from_fn(observed.len(), COLS, |i, j| row(&observed[i].0)[j]);
    // Column scaling keeps the singular-value test meaningful across units.
    let scale: Vec<f64> = (0..COLS)
        .map(|j| raw.column(j).amax().max(f64::MIN_POSITIVE))
        .collect();
    let design = DMatrix::from_fn(raw.nrows(), COLS, |i, j| raw[(i, j)] / scale[j]);
    let y = DVector::from_iterator(observed.len(), observed.iter().map(|(_, t)| *t));

    let svd = design.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smax > 0.0) || smin <= smax * 1e-10 {
        return Err(Error::DegenerateFit(
            "usage rows do not span all four coefficients".into(),
        ));
    }
    let scaled = svd
        .solve(&y, 0.0)
        .map_err(|e| Error::DegenerateFit(e.to_string()))?;
    let coef: Vec<f64> = (0..COLS).map(|j| scaled[j] / scale[j]).collect();

    let predicted = &design * &scaled;
    let n = observed.len() as f64;
    let rmse_ms = ((&y - &predicted).norm_squared() / n).sqrt();
    let logs: Vec<f64> = y
        .iter()
        .zip(predicted.iter())
        .filter(|(o, p)| **o > 0.0 && **p > 0.0)
        .map(|(o, p)| (o / p).ln())
        .collect();
    let noise_sigma = if logs.is_empty() {
        0.0
    } else {
        (logs.iter().map(|l| l * l).sum::<f64>() / logs.len() as f64).sqrt()
    };

    Ok(Calibration {
        model: LatencyModel {
            base_ms: coef[0],
            per_uncached_token_ms: coef[1],
            per_cached_token_ms: coef[2],
            per_write_token_ms: coef[3],
            noise_sigma,
            seed: 0,
        },
        rmse_ms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cache::oracle_lookup;
    use crate::policy::builtin_policy;
    use crate::token::{synth_tokens, Role};
    use crate::workload::{generate, WorkloadSpec};

    fn gran1(name: &str) -> ProviderPolicy {
        let mut p = builtin_policy(name).unwrap();
        p.granularity_tokens = 1;
        p
    }

    fn spec(system: u64, tool_calls: u64, sessions: u64) -> WorkloadSpec {
        WorkloadSpec {
            system_prompt_tokens: system,
            question_tokens: 40,
            tool_calls,
            tool_call_tokens: 20,
            tool_result_tokens: 300,
            reasoning_tokens_per_turn: 30,
            final_answer_tokens: 60,
            sessions,
            seed: 5,
            ..WorkloadSpec::default()
        }
    }

    fn opts() -> ReplayOptions {
        ReplayOptions {
            condition_seed: 99,
            session_gap_s: 5.0,
            output_tokens: None,
        }
    }

    fn quiet() -> LatencyModel {
        LatencyModel::default()
    }

    #[test]
    fn no_cache_never_reads() {
        let t = generate(&spec(10_000, 3, 3)).unwrap();
        for policy in crate::policy::builtin_policies() {
            let run = run_condition(&t, StrategyMode::NoCache, &policy, &quiet(), 1, opts()).unwrap();
            for s in run.warmup.iter().chain(&run.sessions) {
                assert!(s.calls.iter().all(|c| c.usage.cached_read == 0 && c.usage.cache_write == 0));
            }
        }
    }

    #[test]
    fn system_prompt_second_call_reads_system() {
        let t = generate(&spec(10_000, 3, 1)).unwrap();
        let policy = gran1("gpt-4o");
        let latency = quiet();
        let mut r = Replayer::new(&policy, StrategyMode::SystemPromptOnly, &latency);
        let reqs = t[0].requests();
        let (u0, _, _) = r.replay_call(&reqs[0].messages, 0, 1, 10, 0).unwrap();
        assert_eq!(u0.cached_read, 0);
        assert_eq!(u0.cache_write, 10_001);
        let prompt = apply_strategy(&reqs[1].messages, StrategyMode::SystemPromptOnly, 1, 1, policy.mode)
            .unwrap();
        let oracle = oracle_lookup(&r.store().snapshot(), &flatten(&prompt), 0.0, &policy);
        let (u1, _, _) = r.replay_call(&reqs[1].messages, 1, 1, 10, 1).unwrap();
        assert_eq!(u1.cached_read, 10_001);
        assert_eq!(oracle.cached_tokens, 10_001);
        assert_eq!(u1.cache_write, 0);
    }

    #[test]
    fn exclude_tool_results_matches_expected_prefix() {
        let t = generate(&spec(10_000, 3, 1)).unwrap();
        let policy = gran1("gpt-5.2");
        let run = run_condition(&t, StrategyMode::ExcludeToolResults, &policy, &quiet(), 0, opts())
            .unwrap();
        let reads: Vec<_> = run.sessions[0].calls.iter().map(|c| c.usage.cached_read).collect();
        let expected = crate::strategy::expected_cacheable_prefix(StrategyMode::ExcludeToolResults, 10_000)
            .unwrap();
        assert_eq!(reads, vec![0, expected, expected, expected]);
    }

    #[test]
    fn ttft_without_cache_is_linear() {
        let latency = LatencyModel {
            base_ms: 250.0,
            per_uncached_token_ms: 0.05,
            per_cached_token_ms: 0.01,
            per_write_token_ms: 0.2,
            noise_sigma: 0.0,
            seed: 3,
        };
        let policy = builtin_policy("gpt-4o").unwrap();
        let t = generate(&spec(500, 0, 1)).unwrap();
        let mut r = Replayer::new(&policy, StrategyMode::NoCache, &latency);
        let req = &t[0].requests()[0];
        let (u, _, ttft) = r.replay_call(&req.messages, 0, 1, 1, 0).unwrap();
        assert_eq!(u.cached_read, 0);
        assert_eq!(u.cache_write, 0);
        assert_eq!(ttft, 250.0 + 0.05 * u.uncached_input as f64);
    }

    #[test]
    fn warmup_primes_system_prompt() {
        let t = generate(&spec(10_000, 2, 3)).unwrap();
        let policy = gran1("gpt-5.2");
        let run = run_condition(&t, StrategyMode::SystemPromptOnly, &policy, &quiet(), 1, opts()).unwrap();
        assert_eq!(run.warmup.len(), 1);
        assert_eq!(run.sessions.len(), 2);
        assert_eq!(run.sessions[0].calls[0].usage.cached_read, 10_001);
        assert_eq!(run.warmup_cache_write_tokens(), 10_001);
    }

    #[test]
    fn no_cache_unaffected_by_warmup() {
        let t = generate(&spec(3_000, 2, 3)).unwrap();
        let policy = builtin_policy("gpt-4o").unwrap();
        let a = run_condition(&t[1..], StrategyMode::NoCache, &policy, &quiet(), 0, opts()).unwrap();
        let b = run_condition(&t, StrategyMode::NoCache, &policy, &quiet(), 1, opts()).unwrap();
        let usage = |r: &ConditionRun| -> Vec<UsageRecord> {
            r.sessions.iter().flat_map(|s| s.calls.iter().map(|c| c.usage)).collect()
        };
        assert_eq!(usage(&a), usage(&b));
    }

    #[test]
    fn full_context_cross_session_reads_shared_prefix_only() {
        let t = generate(&spec(10_000, 2, 2)).unwrap();
        let policy = gran1("gpt-4o");
        let run = run_condition(&t, StrategyMode::FullContext, &policy, &quiet(), 0, opts()).unwrap();
        let first_a = flatten_messages_of(&t[0]);
        let first_b = flatten_messages_of(&t[1]);
        let lcp = first_a.common_prefix_len(&first_b) as u64;
        assert_eq!(run.sessions[1].calls[0].usage.cached_read, lcp);
        assert_eq!(lcp, 10_000 + 2);
    }

    fn flatten_messages_of(t: &SessionTranscript) -> TokenSeq {
        let req = &t.requests()[0];
        flatten(&apply_strategy(&req.messages, StrategyMode::FullContext, 0, 0, CacheMode::Automatic).unwrap())
    }

    #[test]
    fn determinism() {
        let t = generate(&spec(2_000, 3, 4)).unwrap();
        let policy = builtin_policy("claude-sonnet-4.5").unwrap();
        let latency = LatencyModel {
            noise_sigma: 0.2,
            seed: 8,
            ..LatencyModel::default()
        };
        let a = run_condition(&t, StrategyMode::FullContext, &policy, &latency, 1, opts()).unwrap();
        let b = run_condition(&t, StrategyMode::FullContext, &policy, &latency, 1, opts()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn token_conservation_and_costs() {
        let t = generate(&spec(5_000, 4, 3)).unwrap();
        for policy in crate::policy::builtin_policies() {
            for mode in StrategyMode::ALL {
                let run = run_condition(&t, mode, &policy, &quiet(), 1, opts()).unwrap();
                for (s, tr) in run.sessions.iter().zip(&t[1..]) {
                    for (c, req) in s.calls.iter().zip(tr.requests()) {
                        let p = apply_strategy(&req.messages, mode, 0, 0, policy.mode).unwrap();
                        assert_eq!(c.usage.input_total(), flatten(&p).len() as u64);
                        assert!(c.usage.cache_write <= c.usage.input_total());
                    }
                    let sum: f64 = s.calls.iter().map(|c| c.cost_usd).sum();
                    assert_eq!(s.total_cost(), sum);
                }
            }
        }
    }

    #[test]
    fn system_prompt_cheaper_than_no_cache() {
        let t = generate(&spec(5_000, 4, 4)).unwrap();
        for policy in crate::policy::builtin_policies() {
            let base = run_condition(&t, StrategyMode::NoCache, &policy, &quiet(), 1, opts()).unwrap();
            let sys = run_condition(&t, StrategyMode::SystemPromptOnly, &policy, &quiet(), 1, opts())
                .unwrap();
            for (b, s) in base.sessions.iter().zip(&sys.sessions) {
                assert!(s.total_cost() <= b.total_cost(), "{}", policy.name);
            }
        }
    }

    #[test]
    fn opportunistic_segments_split_modes() {
        let t = generate(&spec(4_000, 6, 2)).unwrap();
        let mut policy = builtin_policy("gpt-4o").unwrap();
        policy.min_cache_tokens = 128;
        let reads = |p: &ProviderPolicy, mode| -> u64 {
            let run = run_condition(&t, mode, p, &quiet(), 1, opts()).unwrap();
            run.sessions.iter().map(|s| s.usage().cached_read).sum()
        };
        let sys_off = reads(&policy, StrategyMode::SystemPromptOnly);
        let excl_off = reads(&policy, StrategyMode::ExcludeToolResults);
        assert_eq!(sys_off, excl_off);
        policy.opportunistic_segments = true;
        let sys_on = reads(&policy, StrategyMode::SystemPromptOnly);
        let excl_on = reads(&policy, StrategyMode::ExcludeToolResults);
        assert!(sys_on > sys_off);
        assert!(excl_on > excl_off);
        assert_ne!(sys_on, excl_on);
        assert_eq!(reads(&policy, StrategyMode::NoCache), 0);
    }

    #[test]
    fn calibration_recovers_coefficients() {
        let truth = LatencyModel {
            base_ms: 312.5,
            per_uncached_token_ms: 0.071,
            per_cached_token_ms: 0.0093,
            per_write_token_ms: 0.42,
            noise_sigma: 0.0,
            seed: 0,
        };
        let shapes = [
            (1000, 0, 0),
            (12_000, 0, 12_000),
            (500, 10_000, 0),
            (2_000, 30_000, 1_500),
            (40_000, 0, 0),
            (800, 45_000, 800),
            (7_000, 7_000, 3_000),
        ];
        let obs: Vec<_> = shapes
            .iter()
            .map(|&(u, c, w)| {
                let usage = UsageRecord {
                    uncached_input: u,
                    cached_read: c,
                    cache_write: w,
                    output: 1,
                };
                (usage, truth.expected_ms(&usage))
            })
            .collect();
        let fit = calibrate_latency(&obs).unwrap();
        let rel = |a: f64, b: f64| ((a - b) / b).abs();
        assert!(rel(fit.model.base_ms, truth.base_ms) < 1e-9);
        assert!(rel(fit.model.per_uncached_token_ms, truth.per_uncached_token_ms) < 1e-9);
        assert!(rel(fit.model.per_cached_token_ms, truth.per_cached_token_ms) < 1e-9);
        assert!(rel(fit.model.per_write_token_ms, truth.per_write_token_ms) < 1e-9);
        assert!(fit.rmse_ms < 1e-6);
        assert!(fit.model.noise_sigma < 1e-9);
    }

    #[test]
    fn calibration_rejects_degenerate_inputs() {
        let u = UsageRecord {
            uncached_input: 100,
            cached_read: 50,
            cache_write: 10,
            output: 0,
        };
        assert!(matches!(
            calibrate_latency(&[(u, 1.0), (u, 2.0), (u, 3.0)]),
            Err(Error::DegenerateFit(_))
        ));
        assert!(matches!(
            calibrate_latency(&[(u, 1.0), (u, 2.0), (u, 3.0), (u, 4.0), (u, 5.0)]),
            Err(Error::DegenerateFit(_))
        ));
    }

    #[test]
    fn noise_is_seeded() {
        let m = LatencyModel {
            noise_sigma: 0.1,
            seed: 4,
            ..LatencyModel::default()
        };
        assert_eq!(m.noise_factor(17), m.noise_factor(17));
        assert_ne!(m.noise_factor(17), m.noise_factor(18));
        assert_eq!(LatencyModel::default().noise_factor(17), 1.0);
    }

    #[test]
    fn latency_validation() {
        assert!(LatencyModel::default().validate().is_ok());
        let bad = LatencyModel {
            per_cached_token_ms: 1.0,
            ..LatencyModel::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn rejects_workload_breakers() {
        let policy = builtin_policy("gpt-4o").unwrap();
        let latency = quiet();
        let mut r = Replayer::new(&policy, StrategyMode::FullContext, &latency);
        let sys = Message::new(Role::System, synth_tokens(5, 1).unwrap(), 0).unwrap();
        let brk = Message::new(Role::Breaker, synth_tokens(1, 2).unwrap(), 0).unwrap();
        assert!(r.replay_call(&[sys, brk], 0, 0, 0, 0).is_err());
    }
}
