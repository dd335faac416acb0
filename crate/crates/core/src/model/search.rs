//! Beam search, optionally restricted to outputs that start with a
//! character prefix.
//!
//! A token contributes its piece to the output string, followed by a space
//! when it ends a word. A partial output S is kept only while it is
//! consistent with the prefix P (one is a prefix of the other). Candidate
//! tokens are found by walking the remaining characters of P through a
//! character trie over all contributions.

use std::cmp::Ordering;
use std::collections::HashMap;

use super::network::{decoder_step, encode};
use super::params::ModelParams;
use crate::corpus::{Vocabulary, EOS};
use crate::subword::split_marker;

#[derive(Debug, Clone, Default)]
struct Trie {
    children: Vec<HashMap<char, usize>>,
    /// Tokens whose contribution ends exactly at the node.
    ends: Vec<Vec<u32>>,
    /// Tokens whose contribution passes through or ends at the node.
    subtree: Vec<Vec<u32>>,
}

impl Trie {
    fn new() -> Self {
        Self {
            children: vec![HashMap::new()],
            ends: vec![Vec::new()],
            subtree: vec![Vec::new()],
        }
    }

    fn insert(&mut self, chars: &[char], id: u32) {
        let mut node = 0;
        for &c in chars {
            node = match self.children[node].get(&c) {
                Some(&n) => n,
                None => {
                    let n = self.children.len();
                    self.children.push(HashMap::new());
                    self.ends.push(Vec::new());
                    self.subtree.push(Vec::new());
                    self.children[node].insert(c, n);
                    n
                }
            };
            self.subtree[node].push(id);
        }
        self.ends[node].push(id);
    }

    /// Tokens t with t a prefix of `rest`, plus, when `extend` is set, tokens
    /// having `rest` as a prefix.
    fn compatible(&self, rest: &[char], extend: bool, out: &mut Vec<u32>) {
        let mut node = 0;
        for (k, c) in rest.iter().enumerate() {
            match self.children[node].get(c) {
                Some(&n) => node = n,
                None => return,
            }
            if k + 1 == rest.len() {
                if extend {
                    out.extend_from_slice(&self.subtree[node]);
                } else {
                    out.extend_from_slice(&self.ends[node]);
                }
            } else {
                out.extend_from_slice(&self.ends[node]);
            }
        }
    }
}

/// Output strings of target tokens and the index used by constrained search.
#[derive(Debug, Clone)]
pub struct TokenRender {
    contributions: Vec<Vec<char>>,
    emittable: Vec<u32>,
    trie: Trie,
}

impl TokenRender {
    /// Reserved ids produce nothing and are never emitted (end-of-sequence
    /// is handled separately).
    pub fn from_vocabulary(vocab: &Vocabulary) -> Self {
        let mut contributions = vec![Vec::new(); vocab.len()];
        let mut emittable = Vec::new();
        let mut trie = Trie::new();
        for (id, token) in vocab.iter() {
            if Vocabulary::is_reserved(id) {
                continue;
            }
            let (piece, end) = split_marker(token);
            let mut chars: Vec<char> = piece.chars().collect();
            if end {
                chars.push(' ');
            }
            if chars.is_empty() {
                continue;
            }
            trie.insert(&chars, id);
            contributions[id as usize] = chars;
            emittable.push(id);
        }
        Self {
            contributions,
            emittable,
            trie,
        }
    }

    pub fn contribution(&self, id: u32) -> &[char] {
        self.contributions.get(id as usize).map_or(&[], Vec::as_slice)
    }

    /// Output string before the final trailing word break is dropped.
    pub fn raw_text(&self, tokens: &[u32]) -> String {
        tokens.iter().flat_map(|&t| self.contribution(t).iter()).collect()
    }

    /// Output surface of a token sequence. Unlike strict detokenization it
    /// accepts sequences that end inside a word.
    pub fn render(&self, tokens: &[u32]) -> String {
        let mut s = self.raw_text(tokens);
        if s.ends_with(' ') {
            s.pop();
        }
        s
    }
}

fn trim_one_space(s: &[char]) -> &[char] {
    match s.last() {
        Some(' ') => &s[..s.len() - 1],
        _ => s,
    }
}

#[derive(Debug, Clone)]
pub struct PrefixConstraint {
    chars: Vec<char>,
    closed: bool,
}

impl PrefixConstraint {
    pub fn new(prefix: &str, closed: bool) -> Self {
        Self {
            chars: prefix.chars().collect(),
            closed,
        }
    }

    pub fn char_len(&self) -> usize {
        self.chars.len()
    }

    fn eos_allowed(&self, text: &[char]) -> bool {
        let t = trim_one_space(text);
        if self.closed {
            t == self.chars.as_slice()
        } else {
            t.starts_with(&self.chars)
        }
    }

    fn admissible(&self, render: &TokenRender, text: &[char], out: &mut Vec<u32>) {
        let start = out.len();
        if self.closed {
            let mut target = self.chars.clone();
            target.push(' ');
            if text.len() < target.len() {
                render.trie.compatible(&target[text.len()..], false, out);
            }
        } else if text.len() >= self.chars.len() {
            out.extend_from_slice(&render.emittable);
            return;
        } else {
            render.trie.compatible(&self.chars[text.len()..], true, out);
        }
        // no token starts with a space, so stopping right before a space
        // inside the prefix is a dead end
        let mut k = start;
        for i in start..out.len() {
            let end = text.len() + render.contribution(out[i]).len();
            if self.chars.get(end) != Some(&' ') {
                out[k] = out[i];
                k += 1;
            }
        }
        out.truncate(k);
    }
}

/// Decoding length allowed for a prefix: enough room to spell it
/// character by character and finish the word.
pub fn length_cap(max_target_len: usize, prefix: &PrefixConstraint) -> usize {
    if prefix.chars.is_empty() && !prefix.closed {
        max_target_len
    } else {
        max_target_len.max(prefix.char_len() + 3)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    /// Ends with the end-of-sequence id.
    pub tokens: Vec<u32>,
    pub log_score: f64,
    pub attention: Vec<Vec<f64>>,
}

struct Partial {
    tokens: Vec<u32>,
    score: f64,
    state: Vec<f64>,
    ctx: Vec<f64>,
    attention: Vec<Vec<f64>>,
    text: Vec<char>,
}

/// Beam search over at most `max_len` output tokens (the last one is
/// forced to be end-of-sequence). Returns `None` when the constraint admits
/// no finished sequence within the cap.
pub fn beam_search(
    p: &ModelParams,
    src: &[u32],
    beam: usize,
    max_len: usize,
    render: &TokenRender,
    constraint: Option<&PrefixConstraint>,
) -> Option<SearchResult> {
    assert!(beam >= 1 && !src.is_empty());
    let enc = encode(p, src);
    let mut open = vec![Partial {
        tokens: Vec::new(),
        score: 0.0,
        state: enc.s0.clone(),
        ctx: vec![0.0; p.config.annotation_dim()],
        attention: Vec::new(),
        text: Vec::new(),
    }];
    let mut finished: Vec<SearchResult> = Vec::new();
    let mut allowed = Vec::new();

    for step in 0..max_len {
        let last_step = step + 1 == max_len;
        let mut cands: Vec<(f64, usize, u32)> = Vec::new();
        let mut outs = Vec::with_capacity(open.len());
        for (pi, h) in open.iter().enumerate() {
            let prev = h.tokens.last().copied().unwrap_or(crate::corpus::BOS);
            let st = decoder_step(p, &enc, prev, &h.state, &h.ctx);
            allowed.clear();
            let eos_ok = match constraint {
                None => true,
                Some(c) => c.eos_allowed(&h.text),
            };
            if eos_ok {
                allowed.push(EOS);
            }
            if !last_step {
                match constraint {
                    None => allowed.extend_from_slice(&render.emittable),
                    Some(c) => c.admissible(render, &h.text, &mut allowed),
                }
            }
            for &t in &allowed {
                cands.push((h.score + st.logp[t as usize], pi, t));
            }
            outs.push(st);
        }
        cands.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .unwrap_or(Ordering::Equal)
                .then(a.1.cmp(&b.1))
                .then(a.2.cmp(&b.2))
        });
        cands.truncate(beam);

        let mut next = Vec::with_capacity(cands.len());
        for (score, pi, t) in cands {
            let h = &open[pi];
            let st = &outs[pi];
            let mut tokens = h.tokens.clone();
            tokens.push(t);
            let mut attention = h.attention.clone();
            attention.push(st.alpha.clone());
            if t == EOS {
                finished.push(SearchResult {
                    tokens,
                    log_score: score,
                    attention,
                });
            } else {
                let mut text = h.text.clone();
                text.extend_from_slice(render.contribution(t));
                next.push(Partial {
                    tokens,
                    score,
                    state: st.state().to_vec(),
                    ctx: st.ctx.clone(),
                    attention,
                    text,
                });
            }
        }
        open = next;
        let best_open = open.iter().map(|h| h.score).fold(f64::NEG_INFINITY, f64::max);
        let best_done = finished.iter().map(|h| h.log_score).fold(f64::NEG_INFINITY, f64::max);
        if open.is_empty() || (!finished.is_empty() && best_done >= best_open) {
            break;
        }
    }

    let mut best: Option<SearchResult> = None;
    for f in finished {
        if best.as_ref().is_none_or(|b| f.log_score > b.log_score) {
            best = Some(f);
        }
    }
    best
}
