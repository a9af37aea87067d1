//! Synthetic research-agent sessions and JSONL transcript I/O.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;
use crate::token::{synth_tokens, Message, Role, Token, TokenSeq};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkloadSpec {
    pub system_prompt_tokens: u64,
    pub question_tokens: u64,
    pub tool_calls: u64,
    pub tool_call_tokens: u64,
    pub tool_result_tokens: u64,
    pub reasoning_tokens_per_turn: u64,
    pub final_answer_tokens: u64,
    pub inter_call_gap_seconds: f64,
    pub sessions: u64,
    pub seed: u64,
    /// Bill this many output tokens per call instead of the generated AI turn size.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_tokens: Option<u64>,
}

impl Default for WorkloadSpec {
    /// Main-study analogue: 10,000-token system prompt, 40 sessions.
    fn default() -> Self {
        Self {
            system_prompt_tokens: 10_000,
            question_tokens: 100,
            tool_calls: 10,
            tool_call_tokens: 50,
            tool_result_tokens: 1_500,
            reasoning_tokens_per_turn: 150,
            final_answer_tokens: 500,
            inter_call_gap_seconds: 5.0,
            sessions: 40,
            seed: 0,
            output_tokens: None,
        }
    }
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("system_prompt_tokens", self.system_prompt_tokens),
            ("question_tokens", self.question_tokens),
            ("tool_call_tokens", self.tool_call_tokens),
            ("tool_result_tokens", self.tool_result_tokens),
            ("reasoning_tokens_per_turn", self.reasoning_tokens_per_turn),
            ("final_answer_tokens", self.final_answer_tokens),
            ("sessions", self.sessions),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Validation(format!("workload.{name} must be at least 1")));
        }
        if !(self.inter_call_gap_seconds.is_finite() && self.inter_call_gap_seconds >= 0.0) {
            return Err(Error::Validation(
                "workload.inter_call_gap_seconds must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }

    /// Flattened pre-strategy prompt length of request `r` (0-based).
    pub fn request_prompt_tokens(&self, r: u64) -> u64 {
        let per_turn = self.reasoning_tokens_per_turn + self.tool_call_tokens + self.tool_result_tokens;
        self.system_prompt_tokens + self.question_tokens + r * per_turn + 2 + 3 * r
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedMessage {
    pub message: Message,
    pub timestamp_s: f64,
}

/// One agent session. Requests are cut after every human question and tool
/// result; the AI / tool-call messages that follow are that request's output.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionTranscript {
    pub session_id: String,
    pub question_seed: u64,
    pub messages: Vec<TimedMessage>,
}

/// One API request derived from a transcript.
#[derive(Debug, Clone, PartialEq)]
pub struct Request {
    pub index: usize,
    pub messages: Vec<Message>,
    pub output_tokens: u64,
    pub timestamp_s: f64,
}

fn is_trigger(role: Role) -> bool {
    matches!(role, Role::Human | Role::ToolResult)
}

impl SessionTranscript {
    /// Indices (exclusive ends) into `messages` at which each request is cut.
    pub fn request_cuts(&self) -> Vec<usize> {
        self.messages
            .iter()
            .enumerate()
            .filter(|(_, m)| is_trigger(m.message.role))
            .map(|(i, _)| i + 1)
            .collect()
    }

    pub fn request_count(&self) -> usize {
        self.request_cuts().len()
    }

    pub fn requests(&self) -> Vec<Request> {
        let cuts = self.request_cuts();
        cuts.iter()
            .enumerate()
            .map(|(index, &end)| {
                let next = cuts.get(index + 1).map_or(self.messages.len(), |n| n - 1);
                let output_tokens = self.messages[end..next.max(end)]
                    .iter()
                    .map(|m| m.message.tokens.len() as u64)
                    .sum();
                Request {
                    index,
                    messages: self.messages[..end].iter().map(|m| m.message.clone()).collect(),
                    output_tokens,
                    timestamp_s: self.messages[end - 1].timestamp_s,
                }
            })
            .collect()
    }
}

const SYSTEM: &str = "system";
const QUESTION: &str = "question";
const TURN: &str = "turn";

pub fn session_id(index: u64) -> String {
    format!("s{index:04}")
}

fn content(count: u64, stream: u64) -> Result<TokenSeq> {
    synth_tokens(count as usize, stream)
}

/// Generate `spec.sessions` transcripts. Deterministic in `spec.seed`.
pub fn generate(spec: &WorkloadSpec) -> Result<Vec<SessionTranscript>> {
    spec.validate()?;
    let system = content(spec.system_prompt_tokens, seed::derive(spec.seed, &[seed::label(SYSTEM)]))?;
    let gap = spec.inter_call_gap_seconds;

    (0..spec.sessions)
        .map(|s| {
            let question_seed = seed::derive(spec.seed, &[seed::label(QUESTION), s]);
            let turn_seed = |t: u64, kind: u64| seed::derive(spec.seed, &[seed::label(TURN), s, t, kind]);
            let mut messages = Vec::with_capacity(3 + 3 * spec.tool_calls as usize);
            let mut push = |role, tokens, turn: u64, at: f64| -> Result<()> {
                messages.push(TimedMessage {
                    message: Message::new(role, tokens, turn as u32)?,
                    timestamp_s: at,
                });
                Ok(())
            };
            push(Role::System, system.clone(), 0, 0.0)?;
            push(Role::Human, content(spec.question_tokens, question_seed)?, 0, 0.0)?;
            for t in 1..=spec.tool_calls {
                let asked = (t - 1) as f64 * gap;
                push(Role::AI, content(spec.reasoning_tokens_per_turn, turn_seed(t, 0))?, t, asked)?;
                push(Role::ToolCall, content(spec.tool_call_tokens, turn_seed(t, 1))?, t, asked)?;
                push(Role::ToolResult, content(spec.tool_result_tokens, turn_seed(t, 2))?, t, t as f64 * gap)?;
            }
            let last = spec.tool_calls;
            push(
                Role::AI,
                content(spec.final_answer_tokens, turn_seed(last + 1, 0))?,
                last + 1,
                last as f64 * gap,
            )?;
            Ok(SessionTranscript {
                session_id: session_id(s),
                question_seed,
                messages,
            })
        })
        .collect()
}

/// One line of the transcript JSONL schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TranscriptLine {
    pub session_id: String,
    pub role: Role,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_count: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokens: Option<Vec<u64>>,
    pub timestamp_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question_seed: Option<u64>,
}

/// Write transcripts in the JSONL schema, with explicit token ids.
pub fn export<W: Write>(transcripts: &[SessionTranscript], mut out: W) -> Result<()> {
    for t in transcripts {
        for (i, m) in t.messages.iter().enumerate() {
            let line = TranscriptLine {
                session_id: t.session_id.clone(),
                role: m.message.role,
                token_count: None,
                tokens: Some(m.message.tokens.0.iter().map(|t| t.0).collect()),
                timestamp_s: m.timestamp_s,
                question_seed: (i == 0).then_some(t.question_seed),
            };
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n").map_err(|e| Error::io("<export>", e))?;
        }
    }
    Ok(())
}

/// Read transcripts from the JSONL schema.
///
/// Lines are grouped by `session_id` in order of first appearance. Records that
/// give only `token_count` get ids synthesized from (session_id, line number).
pub fn ingest<R: BufRead>(input: R) -> Result<Vec<SessionTranscript>> {
    let mut order: Vec<String> = Vec::new();
    let mut sessions: HashMap<String, SessionTranscript> = HashMap::new();
    let mut requests_so_far: HashMap<String, u32> = HashMap::new();

    for (idx, line) in input.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io("<ingest>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            line: line_no,
            message,
        };
        let rec: TranscriptLine = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        if rec.role == Role::Breaker {
            return Err(parse_err("breaker records are reserved for the strategy layer".into()));
        }
        if !rec.timestamp_s.is_finite() {
            return Err(parse_err("timestamp_s must be finite".into()));
        }
        let tokens = match (&rec.tokens, rec.token_count) {
            (Some(ids), None) => {
                if let Some(bad) = ids.iter().find(|&&id| !Token(id).is_content()) {
                    return Err(parse_err(format!("token id {bad} is in the reserved range")));
                }
                TokenSeq(ids.iter().map(|&id| Token(id)).collect())
            }
            (None, Some(n)) if n > 0 => synth_tokens(
                n as usize,
                seed::derive(seed::label(&rec.session_id), &[line_no as u64]),
            )?,
            (Some(_), Some(_)) => {
                return Err(parse_err("give either tokens or token_count, not both".into()))
            }
            _ => return Err(parse_err("missing or empty token content".into())),
        };
        if tokens.is_empty() {
            return Err(parse_err("empty message".into()));
        }

        let session = sessions.entry(rec.session_id.clone()).or_insert_with(|| {
            order.push(rec.session_id.clone());
            SessionTranscript {
                session_id: rec.session_id.clone(),
                question_seed: rec
                    .question_seed
                    .unwrap_or_else(|| seed::label(&rec.session_id)),
                messages: Vec::new(),
            }
        });
        if let Some(prev) = session.messages.last() {
            if rec.timestamp_s < prev.timestamp_s {
                return Err(Error::Validation(format!(
                    "line {line_no}: timestamp {} precedes {} in session {}",
                    rec.timestamp_s, prev.timestamp_s, rec.session_id
                )));
            }
        }
        let turn = requests_so_far.entry(rec.session_id.clone()).or_insert(0);
        session.messages.push(TimedMessage {
            message: Message::new(rec.role, tokens, *turn)?,
            timestamp_s: rec.timestamp_s,
        });
        if is_trigger(rec.role) {
            *turn += 1;
        }
    }

    Ok(order
        .into_iter()
        .map(|id| sessions.remove(&id).expect("session recorded"))
        .collect())
}
