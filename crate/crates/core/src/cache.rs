//! Simulated provider-side prefix cache.
//!
//! Stored prefixes live in a compressed radix tree over tokens. Every node
//! carries the newest `created_at` and `last_used_at` found in its subtree, so
//! a lookup can stop descending as soon as no live entry remains below the
//! current point. An entry contributes `min(|prefix|, lcp(prefix, prompt))`,
//! which is exactly the depth at which the prompt's walk leaves the entry's
//! path; the deepest live point reached is therefore the longest match.

use std::collections::HashMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::ProviderPolicy;
use crate::token::{common_prefix_len, Token, TokenSeq};

type NodeId = usize;
const ROOT: NodeId = 0;

#[derive(Debug, Clone, Copy, PartialEq)]
struct Stamp {
    created_at: f64,
    last_used_at: f64,
}

#[derive(Debug, Clone)]
struct Node {
    parent: NodeId,
    /// Edge label from the parent.
    label: Vec<Token>,
    depth: usize,
    children: HashMap<Token, NodeId>,
    entry: Option<Stamp>,
    newest_created: f64,
    newest_used: f64,
}

impl Node {
    fn new(parent: NodeId, label: Vec<Token>, depth: usize) -> Self {
        Self {
            parent,
            label,
            depth,
            children: HashMap::new(),
            entry: None,
            newest_created: f64::NEG_INFINITY,
            newest_used: f64::NEG_INFINITY,
        }
    }

    fn newest_reference(&self, policy: &ProviderPolicy) -> f64 {
        if policy.refresh_on_read {
            self.newest_used
        } else {
            self.newest_created
        }
    }
}

/// A stored prefix with its timestamps (virtual seconds).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub prefix: TokenSeq,
    pub created_at: f64,
    pub last_used_at: f64,
}

impl CacheEntry {
    pub fn is_live(&self, now: f64, policy: &ProviderPolicy) -> bool {
        is_live(self.created_at, self.last_used_at, now, policy)
    }
}

fn is_live(created_at: f64, last_used_at: f64, now: f64, policy: &ProviderPolicy) -> bool {
    let reference = if policy.refresh_on_read {
        last_used_at
    } else {
        created_at
    };
    now - reference <= policy.ttl_seconds
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheMatch {
    /// Billable cached prefix: 0, or a granularity multiple at least the policy minimum.
    pub cached_tokens: u64,
    /// Raw longest live match before rounding and thresholding.
    pub matched_tokens: u64,
}

fn round_match(raw: usize, policy: &ProviderPolicy) -> u64 {
    let g = policy.granularity_tokens;
    let rounded = raw as u64 / g * g;
    if rounded >= policy.min_cache_tokens {
        rounded
    } else {
        0
    }
}

/// One tenant's cache for one (policy, condition) run.
#[derive(Debug, Clone)]
pub struct CacheStore {
    nodes: Vec<Node>,
    free: Vec<NodeId>,
    entries: usize,
}

impl Default for CacheStore {
    fn default() -> Self {
        Self::new()
    }
}

struct Walk {
    matched: usize,
    /// Node whose subtree holds every live entry achieving `matched`.
    hit: Option<NodeId>,
}

impl CacheStore {
    pub fn new() -> Self {
        Self {
            nodes: vec![Node::new(ROOT, Vec::new(), 0)],
            free: Vec::new(),
            entries: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries == 0
    }

    fn live_subtree(&self, id: NodeId, now: f64, policy: &ProviderPolicy) -> bool {
        now - self.nodes[id].newest_reference(policy) <= policy.ttl_seconds
    }

    fn walk(&self, prompt: &[Token], now: f64, policy: &ProviderPolicy) -> Walk {
        let mut node = ROOT;
        let mut walk = Walk {
            matched: 0,
            hit: None,
        };
        while walk.matched < prompt.len() {
            let Some(&child) = self.nodes[node].children.get(&prompt[walk.matched]) else {
                break;
            };
            if !self.live_subtree(child, now, policy) {
                break;
            }
            let label = &self.nodes[child].label;
            let common = common_prefix_len(label, &prompt[walk.matched..]);
            walk.matched += common;
            walk.hit = Some(child);
            if common < label.len() {
                break;
            }
            node = child;
        }
        walk
    }

    /// Longest live cached prefix of `prompt`, without touching any timestamps.
    pub fn peek(&self, prompt: &TokenSeq, now: f64, policy: &ProviderPolicy) -> CacheMatch {
        let walk = self.walk(prompt.as_slice(), now, policy);
        CacheMatch {
            cached_tokens: round_match(walk.matched, policy),
            matched_tokens: walk.matched as u64,
        }
    }

    /// Longest live cached prefix of `prompt`.
    ///
    /// On a billable hit with a refresh-on-read policy, every live entry that
    /// achieves the match has its `last_used_at` moved to `now`.
    pub fn lookup(&mut self, prompt: &TokenSeq, now: f64, policy: &ProviderPolicy) -> CacheMatch {
        let walk = self.walk(prompt.as_slice(), now, policy);
        let cached = round_match(walk.matched, policy);
        if cached > 0 && policy.refresh_on_read {
            if let Some(hit) = walk.hit {
                self.refresh_subtree(hit, now, policy);
                self.raise_ancestors(hit, now, false);
            }
        }
        CacheMatch {
            cached_tokens: cached,
            matched_tokens: walk.matched as u64,
        }
    }

    fn refresh_subtree(&mut self, root: NodeId, now: f64, policy: &ProviderPolicy) {
        let mut stack = vec![root];
        let mut order = Vec::new();
        while let Some(id) = stack.pop() {
            if !self.live_subtree(id, now, policy) {
                continue;
            }
            order.push(id);
            stack.extend(self.nodes[id].children.values().copied());
        }
        for &id in &order {
            if let Some(stamp) = self.nodes[id].entry.as_mut() {
                if is_live(stamp.created_at, stamp.last_used_at, now, policy) {
                    stamp.last_used_at = now;
                }
            }
        }
        // Children were pushed after their parents; recompute bottom-up.
        for &id in order.iter().rev() {
            self.recompute(id);
        }
    }

    fn recompute(&mut self, id: NodeId) {
        let (mut created, mut used) = match self.nodes[id].entry {
            Some(s) => (s.created_at, s.last_used_at),
            None => (f64::NEG_INFINITY, f64::NEG_INFINITY),
        };
        for &c in self.nodes[id].children.values() {
            created = created.max(self.nodes[c].newest_created);
            used = used.max(self.nodes[c].newest_used);
        }
        let node = &mut self.nodes[id];
        node.newest_created = created;
        node.newest_used = used;
    }

    fn raise_ancestors(&mut self, from: NodeId, now: f64, created: bool) {
        let mut id = from;
        loop {
            let node = &mut self.nodes[id];
            node.newest_used = node.newest_used.max(now);
            if created {
                node.newest_created = node.newest_created.max(now);
            }
            if id == ROOT {
                break;
            }
            id = node.parent;
        }
    }

    fn alloc(&mut self, node: Node) -> NodeId {
        if let Some(id) = self.free.pop() {
            self.nodes[id] = node;
            id
        } else {
            self.nodes.push(node);
            self.nodes.len() - 1
        }
    }

    /// Find or create the node ending exactly at `prefix`.
    fn insert_path(&mut self, prefix: &[Token]) -> NodeId {
        let mut node = ROOT;
        let mut pos = 0;
        while pos < prefix.len() {
            let first = prefix[pos];
            let Some(&child) = self.nodes[node].children.get(&first) else {
                let depth = self.nodes[node].depth + prefix.len() - pos;
                let leaf = self.alloc(Node::new(node, prefix[pos..].to_vec(), depth));
                self.nodes[node].children.insert(first, leaf);
                return leaf;
            };
            let common = common_prefix_len(&self.nodes[child].label, &prefix[pos..]);
            if common == self.nodes[child].label.len() {
                pos += common;
                node = child;
                continue;
            }
            // Split the edge at `common`.
            let upper_depth = self.nodes[node].depth + common;
            let upper_label = self.nodes[child].label[..common].to_vec();
            let lower_label = self.nodes[child].label[common..].to_vec();
            let mut mid = Node::new(node, upper_label, upper_depth);
            mid.newest_created = self.nodes[child].newest_created;
            mid.newest_used = self.nodes[child].newest_used;
            mid.children.insert(lower_label[0], child);
            let mid = self.alloc(mid);
            self.nodes[child].label = lower_label;
            self.nodes[child].parent = mid;
            self.nodes[node].children.insert(first, mid);
            pos += common;
            node = mid;
        }
        node
    }

    /// Cache `prompt[..W)` where `W` is `cacheable_limit` rounded down to the
    /// policy granularity, provided `W` reaches the policy minimum. Returns the
    /// number of newly written tokens beyond the prefix that was already live.
    pub fn commit(
        &mut self,
        prompt: &TokenSeq,
        cacheable_limit: usize,
        now: f64,
        policy: &ProviderPolicy,
    ) -> Result<u64> {
        if cacheable_limit > prompt.len() {
            return Err(Error::invalid(format!(
                "cacheable_limit {cacheable_limit} exceeds prompt length {}",
                prompt.len()
            )));
        }
        let g = policy.granularity_tokens;
        let width = cacheable_limit as u64 / g * g;
        if width == 0 || width < policy.min_cache_tokens {
            return Ok(0);
        }
        let already = self.peek(prompt, now, policy).cached_tokens;
        let prefix = &prompt.as_slice()[..width as usize];
        let node = self.insert_path(prefix);
        match self.nodes[node].entry {
            Some(s) if is_live(s.created_at, s.last_used_at, now, policy) => {}
            existing => {
                if existing.is_none() {
                    self.entries += 1;
                }
                self.nodes[node].entry = Some(Stamp {
                    created_at: now,
                    last_used_at: now,
                });
                self.raise_ancestors(node, now, true);
            }
        }
        Ok(width.saturating_sub(already))
    }

    /// Drop every entry that is no longer live. Returns how many were removed.
    pub fn purge_expired(&mut self, now: f64, policy: &ProviderPolicy) -> usize {
        let mut order = Vec::new();
        let mut stack = vec![ROOT];
        while let Some(id) = stack.pop() {
            order.push(id);
            stack.extend(self.nodes[id].children.values().copied());
        }
        let mut removed = 0;
        for &id in order.iter().rev() {
            if let Some(s) = self.nodes[id].entry {
                if !is_live(s.created_at, s.last_used_at, now, policy) {
                    self.nodes[id].entry = None;
                    removed += 1;
                }
            }
            if id != ROOT && self.nodes[id].entry.is_none() && self.nodes[id].children.is_empty() {
                let parent = self.nodes[id].parent;
                let first = self.nodes[id].label[0];
                self.nodes[parent].children.remove(&first);
                self.nodes[id].label = Vec::new();
                self.free.push(id);
                continue;
            }
            self.recompute(id);
        }
        self.entries -= removed;
        removed
    }

    /// Every stored entry, in a canonical (prefix-sorted) order.
    pub fn snapshot(&self) -> Vec<CacheEntry> {
        let mut out = Vec::with_capacity(self.entries);
        let mut stack = vec![(ROOT, Vec::<Token>::new())];
        while let Some((id, path)) = stack.pop() {
            let node = &self.nodes[id];
            if let Some(s) = node.entry {
                out.push(CacheEntry {
                    prefix: TokenSeq(path.clone()),
                    created_at: s.created_at,
                    last_used_at: s.last_used_at,
                });
            }
            for &c in node.children.values() {
                let mut p = path.clone();
                p.extend_from_slice(&self.nodes[c].label);
                stack.push((c, p));
            }
        }
        out.sort_by(|a, b| a.prefix.0.cmp(&b.prefix.0));
        out
    }

    /// One JSON object per entry: prefix length and timestamps only.
    pub fn dump_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        #[derive(Serialize)]
        struct Row {
            tokens: usize,
            created_at: f64,
            last_used_at: f64,
        }
        let mut rows = Vec::new();
        let mut stack = vec![ROOT];
        while let Some(id) = stack.pop() {
            let node = &self.nodes[id];
            if let Some(s) = node.entry {
                rows.push(Row {
                    tokens: node.depth,
                    created_at: s.created_at,
                    last_used_at: s.last_used_at,
                });
            }
            stack.extend(node.children.values().copied());
        }
        rows.sort_by(|a, b| {
            (a.tokens, a.created_at.to_bits()).cmp(&(b.tokens, b.created_at.to_bits()))
        });
        for row in rows {
            serde_json::to_writer(&mut out, &row)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Reference lookup by linear scan over a snapshot. Never mutates anything.
pub fn oracle_lookup(
    snapshot: &[CacheEntry],
    prompt: &TokenSeq,
    now: f64,
    policy: &ProviderPolicy,
) -> CacheMatch {
    let mut best = 0usize;
    for entry in snapshot {
        if !entry.is_live(now, policy) {
            continue;
        }
        let mut common = 0;
        while common < entry.prefix.len()
            && common < prompt.len()
            && entry.prefix.0[common] == prompt.0[common]
        {
            common += 1;
        }
        best = best.max(common);
    }
    CacheMatch {
        cached_tokens: round_match(best, policy),
        matched_tokens: best as u64,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{builtin_policies, CacheMode, PriceSchedule};
    use crate::token::synth_tokens;

    fn policy(min: u64, gran: u64, ttl: f64, refresh: bool) -> ProviderPolicy {
        ProviderPolicy {
            name: "test".into(),
            min_cache_tokens: min,
            granularity_tokens: gran,
            ttl_seconds: ttl,
            refresh_on_read: refresh,
            mode: CacheMode::Automatic,
            prices: PriceSchedule::flat(1.0, 1.0, 0.1),
            opportunistic_segments: false,
        }
    }

    fn seq(n: usize, seed: u64) -> TokenSeq {
        synth_tokens(n, seed).unwrap()
    }

    #[test]
    fn empty_store_misses() {
        let p = policy(1, 1, 300.0, false);
        let mut store = CacheStore::new();
        assert_eq!(store.lookup(&seq(10, 1), 0.0, &p).cached_tokens, 0);
        assert_eq!(oracle_lookup(&[], &seq(10, 1), 0.0, &p).cached_tokens, 0);
    }

    #[test]
    fn exact_self_match() {
        let p = policy(1024, 1, 300.0, false);
        let mut store = CacheStore::new();
        let s = seq(2048, 3);
        assert_eq!(store.commit(&s, s.len(), 0.0, &p).unwrap(), 2048);
        assert_eq!(store.lookup(&s, 10.0, &p).cached_tokens, 2048);
    }

    #[test]
    fn first_token_mismatch_misses() {
        let p = policy(1, 1, 300.0, false);
        let mut store = CacheStore::new();
        let s = seq(2048, 3);
        store.commit(&s, s.len(), 0.0, &p).unwrap();
        let mut other = s.clone();
        other.0[0] = Token(other.0[0].0 ^ 1);
        assert_eq!(store.lookup(&other, 1.0, &p).cached_tokens, 0);
    }

    #[test]
    fn short_prompts_never_cache_under_builtins() {
        let s = seq(500, 9);
        for p in builtin_policies() {
            let mut store = CacheStore::new();
            assert_eq!(store.commit(&s, s.len(), 0.0, &p).unwrap(), 0);
            assert!(store.is_empty());
            assert_eq!(store.lookup(&s, 1.0, &p).cached_tokens, 0);
        }
    }

    #[test]
    fn ttl_expiry_boundary() {
        let p = policy(1, 1, 300.0, false);
        let mut store = CacheStore::new();
        let s = seq(100, 4);
        store.commit(&s, s.len(), 0.0, &p).unwrap();
        assert_eq!(store.lookup(&s, 300.0, &p).cached_tokens, 100);
        assert_eq!(store.lookup(&s, 301.0, &p).cached_tokens, 0);
    }

    #[test]
    fn refresh_on_read_extends_life() {
        let p = policy(1, 1, 300.0, true);
        let mut store = CacheStore::new();
        let s = seq(100, 4);
        store.commit(&s, s.len(), 0.0, &p).unwrap();
        assert_eq!(store.lookup(&s, 250.0, &p).cached_tokens, 100);
        assert_eq!(store.lookup(&s, 500.0, &p).cached_tokens, 100);
        assert_eq!(store.lookup(&s, 801.0, &p).cached_tokens, 0);
    }

    #[test]
    fn commit_examples() {
        let p = policy(1024, 1, 300.0, false);
        let mut store = CacheStore::new();
        let s = seq(2000, 5);
        assert_eq!(store.commit(&s, 2000, 0.0, &p).unwrap(), 2000);
        assert_eq!(store.commit(&s, 2000, 1.0, &p).unwrap(), 0);
        let short = seq(900, 6);
        assert_eq!(store.commit(&short, 900, 2.0, &p).unwrap(), 0);
        assert_eq!(store.len(), 1);
        assert!(matches!(
            store.commit(&s, 2001, 3.0, &p),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn commit_charges_only_delta() {
        let p = policy(128, 128, 300.0, false);
        let mut store = CacheStore::new();
        let long = seq(1000, 7);
        let short = TokenSeq(long.0[..400].to_vec());
        assert_eq!(store.commit(&short, 400, 0.0, &p).unwrap(), 384);
        assert_eq!(store.commit(&long, 1000, 1.0, &p).unwrap(), 896 - 384);
        assert_eq!(store.peek(&long, 2.0, &p).cached_tokens, 896);
    }

    #[test]
    fn granularity_rounding() {
        let p = policy(256, 128, 300.0, false);
        let mut store = CacheStore::new();
        let s = seq(1000, 8);
        store.commit(&s, 1000, 0.0, &p).unwrap();
        let mut probe = s.clone();
        probe.0[300] = Token(probe.0[300].0 ^ 1);
        let m = store.lookup(&probe, 1.0, &p);
        assert_eq!(m.matched_tokens, 300);
        assert_eq!(m.cached_tokens, 256);
        probe.0[200] = Token(probe.0[200].0 ^ 1);
        assert_eq!(store.lookup(&probe, 1.0, &p).cached_tokens, 0);
    }

    #[test]
    fn purge_counts() {
        let p = policy(1, 1, 10.0, false);
        let mut store = CacheStore::new();
        assert_eq!(store.purge_expired(0.0, &p), 0);
        store.commit(&seq(20, 1), 20, 0.0, &p).unwrap();
        assert_eq!(store.purge_expired(5.0, &p), 0);
        assert_eq!(store.purge_expired(11.0, &p), 1);
        assert_eq!(store.purge_expired(11.0, &p), 0);
        assert!(store.is_empty());
        assert!(store.snapshot().is_empty());
    }

    #[test]
    fn longest_of_several_entries_wins() {
        let p = policy(1, 1, 300.0, false);
        let mut store = CacheStore::new();
        let base = seq(50, 2);
        let mut a = TokenSeq(base.0[..10].to_vec());
        a.extend_from(&seq(5, 3));
        store.commit(&a, a.len(), 0.0, &p).unwrap();
        store.commit(&base, 30, 0.0, &p).unwrap();
        assert_eq!(store.lookup(&base, 1.0, &p).cached_tokens, 30);
        let snap = store.snapshot();
        assert_eq!(snap.len(), 2);
        assert_eq!(oracle_lookup(&snap, &base, 1.0, &p).cached_tokens, 30);
    }

    #[test]
    fn dump_lists_lengths() {
        let p = policy(1, 1, 300.0, false);
        let mut store = CacheStore::new();
        store.commit(&seq(12, 1), 12, 0.5, &p).unwrap();
        let mut buf = Vec::new();
        store.dump_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.trim(), r#"{"tokens":12,"created_at":0.5,"last_used_at":0.5}"#);
    }
}
