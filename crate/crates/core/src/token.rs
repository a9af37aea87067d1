//! Tokens, messages and prompt framing.
//!
//! Sessions are modelled purely as sequences of opaque token ids. The id space
//! is partitioned so that content, cache breakers and role tags can never
//! collide:
//!
//! | range                 | use                          |
//! |-----------------------|------------------------------|
//! | `[0, 2^62)`           | content tokens               |
//! | `[2^62, 2^63)`        | cache-breaker tokens         |
//! | `2^63 + role index`   | role tags emitted by flatten |

use std::fmt;
use std::str::FromStr;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const CONTENT_MASK: u64 = (1 << 62) - 1;
const BREAKER_BASE: u64 = 1 << 62;
const TAG_BASE: u64 = 1 << 63;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Token(pub u64);

impl Token {
    pub fn is_content(self) -> bool {
        self.0 < BREAKER_BASE
    }

    pub fn is_breaker(self) -> bool {
        (BREAKER_BASE..TAG_BASE).contains(&self.0)
    }

    pub fn is_role_tag(self) -> bool {
        self.0 >= TAG_BASE
    }

    /// A breaker token from an arbitrary 64-bit hash.
    pub fn breaker(hash: u64) -> Self {
        Token(BREAKER_BASE | (hash & CONTENT_MASK))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    Human,
    #[serde(rename = "ai")]
    AI,
    ToolCall,
    ToolResult,
    /// Reserved for strategy-injected content. Workloads never produce it.
    Breaker,
}

impl Role {
    pub const ALL: [Role; 6] = [
        Role::System,
        Role::Human,
        Role::AI,
        Role::ToolCall,
        Role::ToolResult,
        Role::Breaker,
    ];

    pub fn tag(self) -> Token {
        let idx = Role::ALL.iter().position(|r| *r == self).unwrap() as u64;
        Token(TAG_BASE + idx)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::Human => "human",
            Role::AI => "ai",
            Role::ToolCall => "tool_call",
            Role::ToolResult => "tool_result",
            Role::Breaker => "breaker",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Role::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown role `{s}`")))
    }
}

/// Ordered token sequence. Its length is the count used for thresholds and pricing.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSeq(pub Vec<Token>);

impl TokenSeq {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[Token] {
        &self.0
    }

    pub fn push(&mut self, token: Token) {
        self.0.push(token);
    }

    pub fn extend_from(&mut self, other: &TokenSeq) {
        self.0.extend_from_slice(&other.0);
    }

    /// Length of the longest common prefix with `other`.
    pub fn common_prefix_len(&self, other: &TokenSeq) -> usize {
        common_prefix_len(&self.0, &other.0)
    }
}

impl From<Vec<Token>> for TokenSeq {
    fn from(v: Vec<Token>) -> Self {
        TokenSeq(v)
    }
}

pub(crate) fn common_prefix_len(a: &[Token], b: &[Token]) -> usize {
    a.iter().zip(b).take_while(|(x, y)| x == y).count()
}

/// Deterministic stand-in for `count` tokens of text.
///
/// Drawn from a seeded stream, so `synth_tokens(n, s)` is always a prefix
/// of `synth_tokens(m, s)` for `n <= m`.
pub fn synth_tokens(count: usize, stream_seed: u64) -> Result<TokenSeq> {
    if count == 0 {
        return Err(Error::invalid("synth_tokens: count must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed);
    Ok(TokenSeq(
        (0..count).map(|_| Token(rng.next_u64() & CONTENT_MASK)).collect(),
    ))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub tokens: TokenSeq,
    /// Index of the agent turn that produced this message.
    pub origin_turn: u32,
}

impl Message {
    pub fn new(role: Role, tokens: TokenSeq, origin_turn: u32) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::invalid(format!("empty {role} message")));
        }
        Ok(Self {
            role,
            tokens,
            origin_turn,
        })
    }

    /// Tokens this message occupies once framed.
    pub fn framed_len(&self) -> usize {
        self.tokens.len() + 1
    }
}

/// Messages plus the explicit cache boundaries a strategy attached to them.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Prompt {
    pub messages: Vec<Message>,
    /// Strictly increasing flattened positions; only read by breakpoint-mode policies.
    pub breakpoints: Vec<usize>,
    /// Flattened positions of every injected breaker token.
    pub breakers: Vec<usize>,
    /// End of the content that stays identical from one request to the next.
    pub stable_limit: usize,
}

impl Prompt {
    pub fn total_len(&self) -> usize {
        self.messages.iter().map(Message::framed_len).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let total = self.total_len();
        if self.breakpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("breakpoints must be strictly increasing"));
        }
        if self.breakpoints.last().is_some_and(|&b| b > total) {
            return Err(Error::invalid("breakpoint beyond end of prompt"));
        }
        Ok(())
    }
}

/// Concatenate every message behind its role tag.
pub fn flatten(prompt: &Prompt) -> TokenSeq {
    flatten_messages(&prompt.messages)
}

pub fn flatten_messages(messages: &[Message]) -> TokenSeq {
    let total = messages.iter().map(Message::framed_len).sum();
    let mut out = Vec::with_capacity(total);
    for m in messages {
        out.push(m.role.tag());
        out.extend_from_slice(m.tokens.as_slice());
    }
    TokenSeq(out)
}
