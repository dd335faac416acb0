//! Byte-pair-encoding segmentation with an end-of-word marker.
//!
//! The marker [`EOW`] is glued to the final character of every word, so the
//! word `ab` starts out as the symbols `a`, `b</w>`. Words are separated by
//! single spaces; the marker is what lets [`detokenize`] put them back.
//!
//! Merge tables are stored as text: a `#bpe-merges v1` header line followed
//! by one `left right` rule per line in priority order.

use std::collections::HashMap;

use thiserror::Error;

pub const EOW: &str = "</w>";
const HEADER: &str = "#bpe-merges v1";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SubwordError {
    #[error("cannot learn merges from an empty corpus")]
    EmptyCorpus,
    #[error("token {index} ({token:?}) has the end-of-word marker in the wrong place")]
    MisplacedMarker { index: usize, token: String },
    #[error("token sequence ends inside a word")]
    UnterminatedWord,
    #[error("malformed merge table: {0}")]
    MalformedTable(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MergeTable {
    rules: Vec<(String, String)>,
    ranks: HashMap<(String, String), usize>,
}

impl MergeTable {
    pub fn from_rules(rules: Vec<(String, String)>) -> Result<Self, SubwordError> {
        let mut ranks = HashMap::with_capacity(rules.len());
        for (rank, rule) in rules.iter().enumerate() {
            if ranks.insert(rule.clone(), rank).is_some() {
                return Err(SubwordError::MalformedTable(format!(
                    "duplicate rule {} {}",
                    rule.0, rule.1
                )));
            }
        }
        Ok(Self { rules, ranks })
    }

    pub fn rules(&self) -> &[(String, String)] {
        &self.rules
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from(HEADER);
        out.push('\n');
        for (l, r) in &self.rules {
            out.push_str(l);
            out.push(' ');
            out.push_str(r);
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, SubwordError> {
        let mut lines = text.lines();
        if lines.next() != Some(HEADER) {
            return Err(SubwordError::MalformedTable("missing header".into()));
        }
        let mut rules = Vec::new();
        for (n, line) in lines.enumerate() {
            let mut parts = line.split(' ');
            match (parts.next(), parts.next(), parts.next()) {
                (Some(l), Some(r), None) if !l.is_empty() && !r.is_empty() => {
                    rules.push((l.to_string(), r.to_string()))
                }
                _ => {
                    return Err(SubwordError::MalformedTable(format!(
                        "line {}: expected `left right`",
                        n + 2
                    )))
                }
            }
        }
        Self::from_rules(rules)
    }
}

fn initial_symbols(word: &str) -> Vec<String> {
    let mut symbols: Vec<String> = word.chars().map(String::from).collect();
    if let Some(last) = symbols.last_mut() {
        last.push_str(EOW);
    }
    symbols
}

fn merge_pair(symbols: &mut Vec<String>, left: &str, right: &str) {
    let mut i = 0;
    while i + 1 < symbols.len() {
        if symbols[i] == left && symbols[i + 1] == right {
            let r = symbols.remove(i + 1);
            symbols[i].push_str(&r);
        }
        i += 1;
    }
}

/// Learns up to `num_merges` rules from pooled text. Each step merges the
/// most frequent adjacent pair; equal counts go to the lexicographically
/// smallest pair.
pub fn learn_bpe<'a, I>(corpus: I, num_merges: usize) -> Result<MergeTable, SubwordError>
where
    I: IntoIterator<Item = &'a str>,
{
    let mut word_counts: HashMap<&str, usize> = HashMap::new();
    let mut lines = 0usize;
    for line in corpus {
        lines += 1;
        for w in line.split_whitespace() {
            *word_counts.entry(w).or_default() += 1;
        }
    }
    if lines == 0 {
        return Err(SubwordError::EmptyCorpus);
    }
    let mut words: Vec<(Vec<String>, usize)> = word_counts
        .into_iter()
        .map(|(w, c)| (initial_symbols(w), c))
        .collect();
    words.sort();

    let mut rules = Vec::with_capacity(num_merges);
    for _ in 0..num_merges {
        let mut pair_counts: HashMap<(&str, &str), usize> = HashMap::new();
        for (symbols, count) in &words {
            for w in symbols.windows(2) {
                *pair_counts.entry((&w[0], &w[1])).or_default() += count;
            }
        }
        let best = pair_counts
            .into_iter()
            .max_by(|(pa, ca), (pb, cb)| ca.cmp(cb).then_with(|| pb.cmp(pa)));
        let Some(((l, r), _)) = best else { break };
        let (l, r) = (l.to_string(), r.to_string());
        for (symbols, _) in &mut words {
            merge_pair(symbols, &l, &r);
        }
        rules.push((l, r));
    }
    MergeTable::from_rules(rules)
}

fn segment_word(table: &MergeTable, word: &str, out: &mut Vec<String>) {
    let mut symbols = initial_symbols(word);
    let mut last_rank: Option<usize> = None;
    loop {
        // next rule in table order that is applicable to the current symbols
        let next = symbols
            .windows(2)
            .filter_map(|w| table.ranks.get(&(w[0].clone(), w[1].clone())).copied())
            .filter(|&rank| last_rank.is_none_or(|last| rank > last))
            .min();
        let Some(rank) = next else { break };
        let (l, r) = &table.rules[rank];
        merge_pair(&mut symbols, l, r);
        last_rank = Some(rank);
    }
    out.extend(symbols);
}

/// Segments every whitespace word of `surface` by applying the rules in table
/// order. Characters never seen in learning stay single-character tokens.
pub fn apply_bpe(table: &MergeTable, surface: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in surface.split_whitespace() {
        segment_word(table, word, &mut out);
    }
    out
}

/// Splits a token into its surface piece and whether it closes a word.
pub fn split_marker(token: &str) -> (&str, bool) {
    match token.strip_suffix(EOW) {
        Some(piece) => (piece, true),
        None => (token, false),
    }
}

/// Inverse of [`apply_bpe`].
pub fn detokenize<S: AsRef<str>>(tokens: &[S]) -> Result<String, SubwordError> {
    let mut out = String::new();
    let mut word_open = false;
    for (index, token) in tokens.iter().enumerate() {
        let token = token.as_ref();
        let (piece, closes) = split_marker(token);
        if piece.is_empty() || piece.contains(EOW) {
            return Err(SubwordError::MisplacedMarker {
                index,
                token: token.to_string(),
            });
        }
        if !word_open && !out.is_empty() {
            out.push(' ');
        }
        out.push_str(piece);
        word_open = !closes;
    }
    if word_open {
        return Err(SubwordError::UnterminatedWord);
    }
    Ok(out)
}
