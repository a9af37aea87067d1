//! The four cache conditions as prompt transformations.
//!
//! Breakers are single tokens spliced into message content: before the system
//! text for the baseline, after it for the boundary strategies, and after each
//! tool result for the exclusion strategy. Every breaker is regenerated on every
//! request, so nothing behind a breaker can ever match an earlier request.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::CacheMode;
use crate::seed;
use crate::token::{Message, Prompt, Role, Token};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StrategyMode {
    #[serde(rename = "no-cache")]
    NoCache,
    #[serde(rename = "full-context")]
    FullContext,
    #[serde(rename = "system-prompt")]
    SystemPromptOnly,
    #[serde(rename = "exclude-tool-results")]
    ExcludeToolResults,
}

impl StrategyMode {
    pub const ALL: [StrategyMode; 4] = [
        StrategyMode::NoCache,
        StrategyMode::FullContext,
        StrategyMode::SystemPromptOnly,
        StrategyMode::ExcludeToolResults,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StrategyMode::NoCache => "no-cache",
            StrategyMode::FullContext => "full-context",
            StrategyMode::SystemPromptOnly => "system-prompt",
            StrategyMode::ExcludeToolResults => "exclude-tool-results",
        }
    }
}

impl fmt::Display for StrategyMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StrategyMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StrategyMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown cache mode `{s}`")))
    }
}

/// Where breakers go in a request.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BreakerSite {
    /// Before the system text (after its role tag).
    AtStart,
    AfterSystem,
    AfterToolResult,
}

/// Breaker token for one site of one request.
pub fn breaker_token(session_seed: u64, request_index: u64, position_index: u64) -> Token {
    Token::breaker(seed::derive(
        session_seed,
        &[seed::label("breaker"), request_index, position_index],
    ))
}

/// Transform one request's messages according to `mode`.
///
/// The returned prompt carries the flattened positions of every breaker, the
/// end of the content that is stable across requests, and for
/// breakpoint-style policies the explicit breakpoint list.
pub fn apply_strategy(
    messages: &[Message],
    mode: StrategyMode,
    request_index: u64,
    session_seed: u64,
    policy_mode: CacheMode,
) -> Result<Prompt> {
    match messages.first() {
        Some(m) if m.role == Role::System => {}
        _ => {
            return Err(Error::invalid(
                "messages must begin with a system message",
            ))
        }
    }
    if let Some(m) = messages[1..]
        .iter()
        .find(|m| matches!(m.role, Role::System | Role::Breaker))
    {
        return Err(Error::invalid(format!(
            "unexpected {} message after the leading system message",
            m.role
        )));
    }

    let mut out = Vec::with_capacity(messages.len());
    let mut breakers = Vec::new();
    let mut offset = 0usize;
    let mut position_index = 0u64;
    let mut system_end = 0usize;

    for (i, m) in messages.iter().enumerate() {
        let mut m = m.clone();
        let site = match (mode, i, m.role) {
            (StrategyMode::NoCache, 0, _) => Some(BreakerSite::AtStart),
            (StrategyMode::SystemPromptOnly | StrategyMode::ExcludeToolResults, 0, _) => {
                Some(BreakerSite::AfterSystem)
            }
            (StrategyMode::ExcludeToolResults, _, Role::ToolResult) => {
                Some(BreakerSite::AfterToolResult)
            }
            _ => None,
        };
        if i == 0 {
            system_end = 1 + m.tokens.len();
        }
        if let Some(site) = site {
            let token = breaker_token(session_seed, request_index, position_index);
            position_index += 1;
            match site {
                BreakerSite::AtStart => {
                    m.tokens.0.insert(0, token);
                    breakers.push(offset + 1);
                }
                BreakerSite::AfterSystem | BreakerSite::AfterToolResult => {
                    breakers.push(offset + m.framed_len());
                    m.tokens.push(token);
                }
            }
        }
        offset += m.framed_len();
        out.push(m);
    }
    let total = offset;

    let stable_limit = match mode {
        StrategyMode::NoCache => 0,
        StrategyMode::FullContext => total,
        StrategyMode::SystemPromptOnly | StrategyMode::ExcludeToolResults => system_end,
    };
    let breakpoints = if policy_mode == CacheMode::Automatic {
        Vec::new()
    } else {
        match mode {
            StrategyMode::NoCache => Vec::new(),
            StrategyMode::FullContext => vec![total],
            StrategyMode::SystemPromptOnly | StrategyMode::ExcludeToolResults => vec![system_end],
        }
    };

    let prompt = Prompt {
        messages: out,
        breakpoints,
        breakers,
        stable_limit,
    };
    prompt.validate()?;
    Ok(prompt)
}

/// How far into the prompt the engine may commit for this policy.
pub fn cacheable_limit(prompt: &Prompt, policy_mode: CacheMode) -> usize {
    match policy_mode {
        CacheMode::Automatic => prompt.stable_limit,
        CacheMode::ExplicitBreakpoints | CacheMode::ExplicitCacheObject => {
            prompt.breakpoints.last().copied().unwrap_or(0)
        }
    }
}

/// Steady-state cross-request prefix under ideal exact-prefix semantics.
/// `None` means unbounded: the match grows with the conversation.
pub fn expected_cacheable_prefix(mode: StrategyMode, system_tokens: u64) -> Option<u64> {
    match mode {
        StrategyMode::NoCache => Some(0),
        StrategyMode::SystemPromptOnly | StrategyMode::ExcludeToolResults => {
            Some(system_tokens + 1)
        }
        StrategyMode::FullContext => None,
    }
}
