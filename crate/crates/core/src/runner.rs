//! Experiment configuration, the condition matrix, ablation grids, run
//! directories and their verification.
//!
//! A run directory holds `calls.csv`, `warmup_calls.csv`, `sessions.csv`,
//! `summary.json`, `summary.csv` and the resolved `config.json`. Every number
//! in the summary can be recomputed from the two call files.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::policy::{builtin_policies, builtin_policy, CacheMode, ProviderPolicy};
use crate::replay::{
    condition_seed, run_condition, CallRecord, ConditionRun, LatencyModel, ReplayOptions,
    SessionResult, UsageRecord,
};
use crate::report::{summarize_experiment, ConditionSamples, ExperimentReport, TtftSample};
use crate::stats::{TestKind, DEFAULT_ALPHA};
use crate::strategy::StrategyMode;
use crate::workload::{generate, ingest, SessionTranscript, WorkloadSpec};

pub const CALLS_CSV: &str = "calls.csv";
pub const WARMUP_CALLS_CSV: &str = "warmup_calls.csv";
pub const SESSIONS_CSV: &str = "sessions.csv";
pub const SUMMARY_JSON: &str = "summary.json";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const CONFIG_JSON: &str = "config.json";
pub const ABLATION_CSV: &str = "ablation.csv";

/// A policy entry: a built-in name, a built-in with field overrides, or a full definition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PolicySpec {
    Builtin(String),
    Derived {
        base: String,
        #[serde(flatten)]
        overrides: Map<String, Value>,
    },
    Inline(ProviderPolicy),
}

impl PolicySpec {
    pub fn resolve(&self) -> Result<ProviderPolicy> {
        let unknown = |name: &str| Error::Config(format!("unknown built-in policy `{name}`"));
        let policy = match self {
            PolicySpec::Builtin(name) => builtin_policy(name).ok_or_else(|| unknown(name))?,
            PolicySpec::Derived { base, overrides } => {
                let base_policy = builtin_policy(base).ok_or_else(|| unknown(base))?;
                let mut value = serde_json::to_value(base_policy)?;
                let obj = value.as_object_mut().expect("policy serializes to an object");
                for (key, v) in overrides {
                    match (obj.get_mut(key), v) {
                        (Some(Value::Object(dst)), Value::Object(src)) => {
                            for (k, x) in src {
                                dst.insert(k.clone(), x.clone());
                            }
                        }
                        (Some(_), _) => {
                            obj.insert(key.clone(), v.clone());
                        }
                        (None, _) if key == "opportunistic_segments" => {
                            obj.insert(key.clone(), v.clone());
                        }
                        (None, _) => {
                            return Err(Error::Config(format!(
                                "policy `{base}`: unknown override field `{key}`"
                            )))
                        }
                    }
                }
                serde_json::from_value(value)
                    .map_err(|e| Error::Config(format!("policy `{base}`: {e}")))?
            }
            PolicySpec::Inline(p) => p.clone(),
        };
        policy.validate()?;
        Ok(policy)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AblationDimension {
    PromptSize,
    ToolCount,
}

impl AblationDimension {
    pub fn as_str(self) -> &'static str {
        match self {
            AblationDimension::PromptSize => "prompt-size",
            AblationDimension::ToolCount => "tool-count",
        }
    }

    pub fn default_values(self) -> Vec<u64> {
        match self {
            AblationDimension::PromptSize => vec![500, 2_000, 5_000, 10_000, 20_000, 50_000],
            AblationDimension::ToolCount => vec![3, 5, 10, 20, 50],
        }
    }

    pub fn apply(self, workload: &mut WorkloadSpec, value: u64) {
        match self {
            AblationDimension::PromptSize => workload.system_prompt_tokens = value,
            AblationDimension::ToolCount => workload.tool_calls = value,
        }
    }
}

impl FromStr for AblationDimension {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "prompt-size" => Ok(AblationDimension::PromptSize),
            "tool-count" => Ok(AblationDimension::ToolCount),
            _ => Err(Error::Config(format!(
                "unknown ablation dimension `{s}` (expected prompt-size or tool-count)"
            ))),
        }
    }
}

/// Values of one ablated workload field, kept sorted and unique.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawGrid", into = "RawGrid")]
pub struct AblationGrid {
    dimension: AblationDimension,
    values: Vec<u64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    dimension: AblationDimension,
    #[serde(default)]
    values: Option<Vec<u64>>,
}

impl TryFrom<RawGrid> for AblationGrid {
    type Error = Error;

    fn try_from(raw: RawGrid) -> Result<Self> {
        let values = raw.values.unwrap_or_else(|| raw.dimension.default_values());
        AblationGrid::new(raw.dimension, values)
    }
}

impl From<AblationGrid> for RawGrid {
    fn from(g: AblationGrid) -> Self {
        RawGrid {
            dimension: g.dimension,
            values: Some(g.values),
        }
    }
}

impl AblationGrid {
    pub fn new(dimension: AblationDimension, mut values: Vec<u64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Config("ablation grid is empty".into()));
        }
        values.sort_unstable();
        values.dedup();
        if dimension == AblationDimension::PromptSize && values[0] == 0 {
            return Err(Error::Config("prompt-size values must be at least 1".into()));
        }
        Ok(Self { dimension, values })
    }

    pub fn with_defaults(dimension: AblationDimension) -> Self {
        Self {
            dimension,
            values: dimension.default_values(),
        }
    }

    pub fn dimension(&self) -> AblationDimension {
        self.dimension
    }

    pub fn values(&self) -> &[u64] {
        &self.values
    }
}

fn default_policies() -> Vec<PolicySpec> {
    builtin_policies()
        .into_iter()
        .map(|p| PolicySpec::Builtin(p.name))
        .collect()
}

fn default_modes() -> Vec<StrategyMode> {
    StrategyMode::ALL.to_vec()
}

fn default_warmup() -> usize {
    1
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

fn default_session_gap() -> f64 {
    5.0
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs/latest")
}

/// JSON experiment configuration. Every field has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_policies")]
    pub policies: Vec<PolicySpec>,
    #[serde(default = "default_modes")]
    pub modes: Vec<StrategyMode>,
    /// `sessions` counts evaluated sessions; warmup sessions are generated on top.
    #[serde(default)]
    pub workload: WorkloadSpec,
    /// JSONL transcripts to replay instead of generating from `workload`.
    /// Relative paths resolve against the config file's directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transcripts: Option<PathBuf>,
    #[serde(default)]
    pub latency: LatencyModel,
    /// Latency models by policy name, replacing `latency` for that policy.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub latency_per_policy: BTreeMap<String, LatencyModel>,
    #[serde(default = "default_warmup")]
    pub warmup_sessions: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub test: TestKind,
    #[serde(default)]
    pub ttft_sample: TtftSample,
    /// Idle virtual time between consecutive sessions of a condition.
    #[serde(default = "default_session_gap")]
    pub session_gap_s: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ablation: Option<AblationGrid>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields default")
    }
}

impl ExperimentConfig {
    /// Parse JSON, reporting the field path and position of the first error.
    pub fn from_json(json: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(json);
        let config: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::Config(format!("field `{path}`: {}", e.inner()))
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn resolved_policies(&self) -> Result<Vec<ProviderPolicy>> {
        let policies = self
            .policies
            .iter()
            .map(PolicySpec::resolve)
            .collect::<Result<Vec<_>>>()?;
        for (i, p) in policies.iter().enumerate() {
            if policies[..i].iter().any(|q| q.name == p.name) {
                return Err(Error::Config(format!("duplicate policy name `{}`", p.name)));
            }
        }
        Ok(policies)
    }

    pub fn latency_for(&self, policy: &str) -> &LatencyModel {
        self.latency_per_policy.get(policy).unwrap_or(&self.latency)
    }

    pub fn validate(&self) -> Result<()> {
        if self.policies.is_empty() {
            return Err(Error::Config("`policies` is empty".into()));
        }
        if self.modes.is_empty() {
            return Err(Error::Config("`modes` is empty".into()));
        }
        if !self.modes.contains(&StrategyMode::NoCache) {
            return Err(Error::Config(
                "`modes` must include no-cache: every comparison is relative to it".into(),
            ));
        }
        for (i, m) in self.modes.iter().enumerate() {
            if self.modes[..i].contains(m) {
                return Err(Error::Config(format!("mode `{m}` is listed twice")));
            }
        }
        let policies = self.resolved_policies()?;
        for name in self.latency_per_policy.keys() {
            if !policies.iter().any(|p| &p.name == name) {
                return Err(Error::Config(format!(
                    "`latency_per_policy` names unknown policy `{name}`"
                )));
            }
        }
        self.latency
            .validate()
            .map_err(|e| Error::Config(format!("latency: {e}")))?;
        for (name, l) in &self.latency_per_policy {
            l.validate()
                .map_err(|e| Error::Config(format!("latency_per_policy.{name}: {e}")))?;
        }
        self.workload
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config("`alpha` must lie in (0, 1)".into()));
        }
        if !(self.session_gap_s.is_finite() && self.session_gap_s >= 0.0) {
            return Err(Error::Config("`session_gap_s` must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// Command-line overrides applied on top of a loaded config.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub jobs: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

impl Overrides {
    pub fn apply(&self, config: &mut ExperimentConfig) {
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(out) = &self.out {
            config.output_dir = out.clone();
        }
    }

    pub fn jobs(&self) -> usize {
        self.jobs
            .unwrap_or_else(|| thread::available_parallelism().map_or(1, |n| n.get()))
            .max(1)
    }
}

/// Everything produced by one pass over the condition matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRun {
    pub config: ExperimentConfig,
    pub runs: Vec<ConditionRun>,
    pub report: ExperimentReport,
}

/// Generated or ingested transcripts, warmups first.
pub fn load_transcripts(config: &ExperimentConfig, base_dir: &Path) -> Result<Vec<SessionTranscript>> {
    let transcripts = match &config.transcripts {
        Some(path) => {
            let path = base_dir.join(path);
            let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
            ingest(BufReader::new(file))?
        }
        None => {
            let mut spec = config.workload.clone();
            spec.sessions += config.warmup_sessions as u64;
            generate(&spec)?
        }
    };
    if transcripts.len() < config.warmup_sessions + 2 {
        return Err(Error::Config(format!(
            "{} transcripts leave fewer than 2 evaluation sessions after {} warmups",
            transcripts.len(),
            config.warmup_sessions
        )));
    }
    Ok(transcripts)
}

/// Run every (policy, mode) condition on up to `jobs` threads.
///
/// Results come back in config order: policies outer, modes inner.
pub fn run_experiment(config: &ExperimentConfig, base_dir: &Path, jobs: usize) -> Result<ExperimentRun> {
    config.validate()?;
    let transcripts = load_transcripts(config, base_dir)?;
    let policies = config.resolved_policies()?;
    let conditions: Vec<(&ProviderPolicy, StrategyMode)> = policies
        .iter()
        .flat_map(|p| config.modes.iter().map(move |&m| (p, m)))
        .collect();

    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<ConditionRun>>>> =
        conditions.iter().map(|_| Mutex::new(None)).collect();
    let work = || loop {
        let i = next.fetch_add(1, Ordering::Relaxed);
        let Some(&(policy, mode)) = conditions.get(i) else {
            break;
        };
        let options = ReplayOptions {
            condition_seed: condition_seed(config.seed, &policy.name, mode),
            session_gap_s: config.session_gap_s,
            output_tokens: config.workload.output_tokens,
        };
        let result = run_condition(
            &transcripts,
            mode,
            policy,
            config.latency_for(&policy.name),
            config.warmup_sessions,
            options,
        );
        *slots[i].lock().expect("no worker panics while holding a slot") = Some(result);
    };
    let workers = jobs.max(1).min(conditions.len());
    if workers <= 1 {
        // Also the path for targets without threads.
        work();
    } else {
        thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(work);
            }
        });
    }
    let runs = slots
        .into_iter()
        .map(|s| s.into_inner().expect("slot lock").expect("every condition ran"))
        .collect::<Result<Vec<_>>>()?;

    let samples: Vec<_> = runs
        .iter()
        .map(|r| ConditionSamples::from_run(r, config.ttft_sample))
        .collect();
    let report = summarize_experiment(&samples, config.alpha, config.test, config.ttft_sample)?;
    Ok(ExperimentRun {
        config: config.clone(),
        runs,
        report,
    })
}

/// One row of `calls.csv` / `warmup_calls.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallRow {
    pub session_id: String,
    pub call_index: usize,
    pub mode: StrategyMode,
    pub policy: String,
    pub uncached: u64,
    pub cached_read: u64,
    pub cache_write: u64,
    pub output: u64,
    pub cost_usd: f64,
    pub ttft_ms: f64,
    pub time_s: f64,
}

impl CallRow {
    fn new(run: &ConditionRun, session: &SessionResult, call: &CallRecord) -> Self {
        Self {
            session_id: session.session_id.clone(),
            call_index: call.call_index,
            mode: run.mode,
            policy: run.policy.clone(),
            uncached: call.usage.uncached_input,
            cached_read: call.usage.cached_read,
            cache_write: call.usage.cache_write,
            output: call.usage.output,
            cost_usd: call.cost_usd,
            ttft_ms: call.ttft_ms,
            time_s: call.time_s,
        }
    }

    fn record(&self) -> CallRecord {
        CallRecord {
            call_index: self.call_index,
            usage: UsageRecord {
                uncached_input: self.uncached,
                cached_read: self.cached_read,
                cache_write: self.cache_write,
                output: self.output,
            },
            cost_usd: self.cost_usd,
            ttft_ms: self.ttft_ms,
            time_s: self.time_s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRow {
    pub policy: String,
    pub mode: StrategyMode,
    pub session_id: String,
    pub calls: usize,
    pub uncached: u64,
    pub cached_read: u64,
    pub cache_write: u64,
    pub output: u64,
    pub cost_usd: f64,
    pub mean_ttft_ms: f64,
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    File::create(&path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn write_calls<'a>(
    dir: &Path,
    name: &str,
    rows: impl Iterator<Item = (&'a ConditionRun, &'a SessionResult)>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(dir, name)?);
    for (run, session) in rows {
        for call in &session.calls {
            w.serialize(CallRow::new(run, session, call))?;
        }
    }
    w.flush().map_err(|e| Error::io(dir.join(name), e))
}

/// Write every artifact of a run into `dir`, creating it if needed.
pub fn write_run(run: &ExperimentRun, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_calls(
        dir,
        CALLS_CSV,
        run.runs.iter().flat_map(|r| r.sessions.iter().map(move |s| (r, s))),
    )?;
    write_calls(
        dir,
        WARMUP_CALLS_CSV,
        run.runs.iter().flat_map(|r| r.warmup.iter().map(move |s| (r, s))),
    )?;

    let mut w = csv::Writer::from_writer(create(dir, SESSIONS_CSV)?);
    for r in &run.runs {
        for s in &r.sessions {
            let u = s.usage();
            w.serialize(SessionRow {
                policy: r.policy.clone(),
                mode: r.mode,
                session_id: s.session_id.clone(),
                calls: s.calls.len(),
                uncached: u.uncached_input,
                cached_read: u.cached_read,
                cache_write: u.cache_write,
                output: u.output,
                cost_usd: s.total_cost(),
                mean_ttft_ms: s.mean_ttft_ms(),
            })?;
        }
    }
    w.flush().map_err(|e| Error::io(dir.join(SESSIONS_CSV), e))?;

    let mut out = create(dir, SUMMARY_JSON)?;
    serde_json::to_writer_pretty(&mut out, &run.report)?;
    out.write_all(b"\n")
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(dir.join(SUMMARY_JSON), e))?;

    run.report.write_csv(create(dir, SUMMARY_CSV)?)?;

    let mut out = create(dir, CONFIG_JSON)?;
    out.write_all(run.config.to_json()?.as_bytes())
        .and_then(|_| out.write_all(b"\n"))
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(dir.join(CONFIG_JSON), e))?;
    Ok(())
}

fn config_dir(config_path: &Path) -> PathBuf {
    config_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default()
}

/// Load, run and write the main experiment. Returns the run for display.
pub fn cmd_simulate(config_path: &Path, overrides: &Overrides) -> Result<ExperimentRun> {
    let mut config = ExperimentConfig::load(config_path)?;
    overrides.apply(&mut config);
    let base = config_dir(config_path);
    let run = run_experiment(&config, &base, overrides.jobs())?;
    write_run(&run, &base.join(&config.output_dir))?;
    Ok(run)
}

/// One long-format ablation row: a (value, policy, mode) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub dimension: AblationDimension,
    pub value: u64,
    pub policy: String,
    pub mode: StrategyMode,
    pub sessions: usize,
    pub median_cost_usd: f64,
    pub median_ttft_ms: f64,
    pub mean_cost_usd: f64,
    pub mean_ttft_ms: f64,
    /// Saving of the median session cost relative to the no-cache median.
    pub median_cost_saving_pct: f64,
    pub median_ttft_improvement_pct: f64,
    /// Saving of the mean, as in the summary comparisons.
    pub cost_saving_pct: f64,
    pub ttft_improvement_pct: f64,
    pub cost_p_value: f64,
    pub ttft_p_value: f64,
    pub cached_read_tokens: u64,
}

/// Long-format rows of one experiment at one grid value.
pub fn ablation_rows(dimension: AblationDimension, value: u64, run: &ExperimentRun) -> Vec<AblationRow> {
    let mut rows = Vec::new();
    for p in &run.report.policies {
        let cached = |mode: StrategyMode| -> u64 {
            run.runs
                .iter()
                .filter(|r| r.policy == p.policy && r.mode == mode)
                .flat_map(|r| r.sessions.iter())
                .map(|s| s.usage().cached_read)
                .sum()
        };
        let saving = |base: f64, v: f64| 100.0 * (base - v) / base;
        let b = &p.baseline;
        rows.push(AblationRow {
            dimension,
            value,
            policy: p.policy.clone(),
            mode: b.mode,
            sessions: b.sessions,
            median_cost_usd: b.median_cost_usd,
            median_ttft_ms: b.median_ttft_ms,
            mean_cost_usd: b.mean_cost_usd,
            mean_ttft_ms: b.mean_ttft_ms,
            median_cost_saving_pct: 0.0,
            median_ttft_improvement_pct: 0.0,
            cost_saving_pct: 0.0,
            ttft_improvement_pct: 0.0,
            cost_p_value: 1.0,
            ttft_p_value: 1.0,
            cached_read_tokens: cached(b.mode),
        });
        for m in &p.modes {
            let s = &m.summary;
            rows.push(AblationRow {
                dimension,
                value,
                policy: p.policy.clone(),
                mode: s.mode,
                sessions: s.sessions,
                median_cost_usd: s.median_cost_usd,
                median_ttft_ms: s.median_ttft_ms,
                mean_cost_usd: s.mean_cost_usd,
                mean_ttft_ms: s.mean_ttft_ms,
                median_cost_saving_pct: saving(b.median_cost_usd, s.median_cost_usd),
                median_ttft_improvement_pct: saving(b.median_ttft_ms, s.median_ttft_ms),
                cost_saving_pct: m.cost.improvement_pct,
                ttft_improvement_pct: m.ttft.improvement_pct,
                cost_p_value: m.cost.p_value,
                ttft_p_value: m.ttft.p_value,
                cached_read_tokens: cached(s.mode),
            });
        }
    }
    rows
}

/// Run the experiment once per grid value in memory, without writing anything.
pub fn run_ablation(
    config: &ExperimentConfig,
    base_dir: &Path,
    grid: &AblationGrid,
    jobs: usize,
) -> Result<Vec<(u64, ExperimentRun)>> {
    grid.values()
        .iter()
        .map(|&v| {
            let mut c = config.clone();
            grid.dimension().apply(&mut c.workload, v);
            c.ablation = None;
            Ok((v, run_experiment(&c, base_dir, jobs)?))
        })
        .collect()
}

/// Run an ablation grid: one run directory per value plus a long-format CSV.
///
/// The grid comes from `values`, else the config's `ablation` block when its
/// dimension matches, else the defaults for `dimension`.
pub fn cmd_ablate(
    config_path: &Path,
    dimension: AblationDimension,
    values: Option<Vec<u64>>,
    overrides: &Overrides,
) -> Result<Vec<AblationRow>> {
    let mut config = ExperimentConfig::load(config_path)?;
    overrides.apply(&mut config);
    let grid = match (values, &config.ablation) {
        (Some(v), _) => AblationGrid::new(dimension, v)?,
        (None, Some(g)) if g.dimension() == dimension => g.clone(),
        (None, _) => AblationGrid::with_defaults(dimension),
    };
    if config.transcripts.is_some() {
        return Err(Error::Config(
            "ablation overrides the generated workload; remove `transcripts`".into(),
        ));
    }
    let base = config_dir(config_path);
    let out = base.join(&config.output_dir);
    let mut rows = Vec::new();
    for (value, run) in run_ablation(&config, &base, &grid, overrides.jobs())? {
        write_run(&run, &out.join(format!("{}-{value}", dimension.as_str())))?;
        rows.extend(ablation_rows(dimension, value, &run));
    }
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let mut w = csv::Writer::from_writer(create(&out, ABLATION_CSV)?);
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(out.join(ABLATION_CSV), e))?;
    Ok(rows)
}

/// Fixed-width table of the built-in policies.
pub fn policies_table() -> String {
    let mut s = format!(
        "{:<18} {:<20} {:>6} {:>5} {:>7} {:>7} {:>7} {:>7} {:>7} {:>8}\n",
        "name", "mode", "min", "gran", "ttl_s", "input", "output", "cached", "write", "storage"
    );
    let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.3}"));
    for p in builtin_policies() {
        let mode = match p.mode {
            CacheMode::Automatic => "automatic",
            CacheMode::ExplicitBreakpoints => "explicit_breakpoints",
            CacheMode::ExplicitCacheObject => "explicit_cache_object",
        };
        s.push_str(&format!(
            "{:<18} {:<20} {:>6} {:>5} {:>7} {:>7.3} {:>7.3} {:>7.3} {:>7} {:>8}\n",
            p.name,
            mode,
            p.min_cache_tokens,
            p.granularity_tokens,
            p.ttl_seconds,
            p.prices.input_per_mtok,
            p.prices.output_per_mtok,
            p.prices.cached_read_per_mtok,
            opt(p.prices.cache_write_per_mtok),
            opt(p.prices.storage_per_mtok_hour),
        ));
        if let Some(boundary) = p.prices.tier_boundary_tokens {
            s.push_str(&format!(
                "{:<18} {:<20} {:>6} {:>5} {:>7} {:>7} {:>7} {:>7} {:>7} {:>8}\n",
                "",
                format!("  prompt > {boundary}"),
                "",
                "",
                "",
                opt(p.prices.tier2_input_per_mtok),
                opt(p.prices.tier2_output_per_mtok),
                opt(p.prices.tier2_cached_read_per_mtok),
                "-",
                "-",
            ));
        }
    }
    s
}

fn read_calls(path: &Path) -> Result<Vec<CallRow>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for row in csv::Reader::from_reader(BufReader::new(file)).deserialize() {
        rows.push(row?);
    }
    Ok(rows)
}

/// Rebuild condition runs from call rows, preserving first-appearance order.
pub fn runs_from_calls(calls: &[CallRow], warmup: &[CallRow]) -> Vec<ConditionRun> {
    fn group(rows: &[CallRow]) -> Vec<((String, StrategyMode), Vec<SessionResult>)> {
        let mut out: Vec<((String, StrategyMode), Vec<SessionResult>)> = Vec::new();
        for row in rows {
            let key = (row.policy.clone(), row.mode);
            if out.last().map_or(true, |(k, _)| *k != key) {
                out.push((key, Vec::new()));
            }
            let sessions = &mut out.last_mut().expect("just pushed").1;
            if sessions.last().map_or(true, |s| s.session_id != row.session_id) {
                sessions.push(SessionResult {
                    session_id: row.session_id.clone(),
                    calls: Vec::new(),
                });
            }
            sessions
                .last_mut()
                .expect("just pushed")
                .calls
                .push(row.record());
        }
        out
    }
    let mut warm: BTreeMap<(String, StrategyMode), Vec<SessionResult>> =
        group(warmup).into_iter().collect();
    group(calls)
        .into_iter()
        .map(|((policy, mode), sessions)| ConditionRun {
            warmup: warm.remove(&(policy.clone(), mode)).unwrap_or_default(),
            policy,
            mode,
            sessions,
        })
        .collect()
}

/// Relative tolerance used when diffing recomputed summaries.
pub const VERIFY_RTOL: f64 = 1e-12;

fn diff_values(path: &str, a: &Value, b: &Value, out: &mut Vec<String>) {
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => {
            let (x, y) = (x.as_f64().unwrap_or(f64::NAN), y.as_f64().unwrap_or(f64::NAN));
            if (x - y).abs() > VERIFY_RTOL * x.abs().max(y.abs()) {
                out.push(format!("{path}: {x} != {y}"));
            }
        }
        (Value::Object(x), Value::Object(y)) => {
            for (k, v) in x {
                match y.get(k) {
                    Some(w) => diff_values(&format!("{path}.{k}"), v, w, out),
                    None => out.push(format!("{path}.{k}: missing from recomputed summary")),
                }
            }
            for k in y.keys().filter(|k| !x.contains_key(*k)) {
                out.push(format!("{path}.{k}: missing from stored summary"));
            }
        }
        (Value::Array(x), Value::Array(y)) if x.len() == y.len() => {
            for (i, (v, w)) in x.iter().zip(y).enumerate() {
                diff_values(&format!("{path}[{i}]"), v, w, out);
            }
        }
        _ if a == b => {}
        _ => out.push(format!("{path}: {a} != {b}")),
    }
}

/// Recompute the summary of a run directory from its call files and diff it
/// against the stored `summary.json`. Returns the recomputed report.
pub fn cmd_verify(dir: &Path) -> Result<ExperimentReport> {
    let summary_path = dir.join(SUMMARY_JSON);
    let text = fs::read_to_string(&summary_path).map_err(|e| Error::io(&summary_path, e))?;
    let stored: ExperimentReport = serde_json::from_str(&text)?;
    let calls = read_calls(&dir.join(CALLS_CSV))?;
    let warmup = read_calls(&dir.join(WARMUP_CALLS_CSV))?;
    let samples: Vec<_> = runs_from_calls(&calls, &warmup)
        .iter()
        .map(|r| ConditionSamples::from_run(r, stored.ttft_sample))
        .collect();
    let recomputed = summarize_experiment(&samples, stored.alpha, stored.test, stored.ttft_sample)?;

    let mut diffs = Vec::new();
    diff_values(
        "summary",
        &serde_json::to_value(&stored)?,
        &serde_json::to_value(&recomputed)?,
        &mut diffs,
    );
    if !diffs.is_empty() {
        return Err(Error::Mismatch(diffs.join("; ")));
    }
    Ok(recomputed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ExperimentConfig {
        let mut c = ExperimentConfig::default();
        c.workload = WorkloadSpec {
            system_prompt_tokens: 1_500,
            question_tokens: 20,
            tool_calls: 2,
            tool_call_tokens: 10,
            tool_result_tokens: 60,
            reasoning_tokens_per_turn: 10,
            final_answer_tokens: 20,
            sessions: 3,
            ..WorkloadSpec::default()
        };
        c
    }

    #[test]
    fn defaults_cover_the_full_matrix() {
        let c = ExperimentConfig::default();
        assert_eq!(c.policies.len(), 4);
        assert_eq!(c.modes.len(), 4);
        assert_eq!(c.warmup_sessions, 1);
        assert_eq!(c.alpha, 0.05);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn config_round_trip() {
        let json = r#"{
            "policies": ["gpt-4o", {"base": "gpt-5.2", "name": "gpt-5.2-g1", "granularity_tokens": 1,
                         "prices": {"output_per_mtok": 12.0}}],
            "modes": ["no-cache", "system-prompt"],
            "latency_per_policy": {"gpt-4o": {"per_write_token_ms": 1.2, "noise_sigma": 0.1}},
            "ablation": {"dimension": "tool-count"}
        }"#;
        let c = ExperimentConfig::from_json(json).unwrap();
        let again = ExperimentConfig::from_json(&c.to_json().unwrap()).unwrap();
        assert_eq!(c, again);
        let p = c.resolved_policies().unwrap();
        assert_eq!(p[1].name, "gpt-5.2-g1");
        assert_eq!(p[1].granularity_tokens, 1);
        assert_eq!(p[1].prices.output_per_mtok, 12.0);
        assert_eq!(p[1].prices.input_per_mtok, 1.75);
        assert_eq!(c.ablation.as_ref().unwrap().values(), &[3, 5, 10, 20, 50]);
        assert_eq!(c.latency_for("gpt-4o").per_write_token_ms, 1.2);
        assert_eq!(c.latency_for("gpt-5.2-g1"), &LatencyModel::default());
    }

    #[test]
    fn config_errors_name_the_field() {
        let err = ExperimentConfig::from_json("{\n  \"workload\": {\"tool_calls\": \"x\"}\n}").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("workload.tool_calls"), "{msg}");
        assert!(msg.contains("line 2"), "{msg}");
        assert!(ExperimentConfig::from_json(r#"{"bogus": 1}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"policies": ["nope"]}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"modes": ["full-context"]}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"policies": ["gpt-4o", "gpt-4o"]}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"policies": [{"base": "gpt-4o", "colour": 1}]}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"ablation": {"dimension": "tool-count", "values": []}}"#).is_err());
    }

    #[test]
    fn grid_is_sorted() {
        let g = AblationGrid::new(AblationDimension::PromptSize, vec![5_000, 500, 2_000, 500]).unwrap();
        assert_eq!(g.values(), &[500, 2_000, 5_000]);
        assert!(matches!(
            AblationGrid::new(AblationDimension::ToolCount, vec![]),
            Err(Error::Config(_))
        ));
        assert_eq!(
            AblationGrid::with_defaults(AblationDimension::PromptSize).values(),
            &[500, 2_000, 5_000, 10_000, 20_000, 50_000]
        );
        assert_eq!("tool-count".parse::<AblationDimension>().unwrap(), AblationDimension::ToolCount);
        assert!("size".parse::<AblationDimension>().is_err());
    }

    #[test]
    fn run_order_is_independent_of_jobs() {
        let c = small();
        let a = run_experiment(&c, Path::new("."), 1).unwrap();
        let b = run_experiment(&c, Path::new("."), 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.runs.len(), 16);
        assert_eq!(a.runs[1].policy, "gpt-4o");
        assert_eq!(a.runs[1].mode, StrategyMode::FullContext);
        assert_eq!(a.runs[0].sessions.len(), 3);
        assert_eq!(a.runs[0].warmup.len(), 1);
    }

    #[test]
    fn baseline_only_config() {
        let mut c = small();
        c.modes = vec![StrategyMode::NoCache];
        let run = run_experiment(&c, Path::new("."), 2).unwrap();
        assert_eq!(run.report.policies.len(), 4);
        assert!(run.report.policies.iter().all(|p| p.modes.is_empty()));
    }

    #[test]
    fn calls_regroup_into_runs() {
        let run = run_experiment(&small(), Path::new("."), 2).unwrap();
        let rows = |warm: bool| -> Vec<CallRow> {
            run.runs
                .iter()
                .flat_map(|r| {
                    let sessions = if warm { &r.warmup } else { &r.sessions };
                    sessions
                        .iter()
                        .flat_map(move |s| s.calls.iter().map(move |c| CallRow::new(r, s, c)))
                })
                .collect()
        };
        assert_eq!(runs_from_calls(&rows(false), &rows(true)), run.runs);
    }

    #[test]
    fn policy_table_lists_builtins() {
        let t = policies_table();
        assert!(t.contains("4096"));
        assert!(t.contains("3.750"));
        for p in builtin_policies() {
            assert!(t.contains(&p.name));
        }
    }
}
