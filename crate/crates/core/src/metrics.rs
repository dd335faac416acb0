//! Corpus BLEU and the keystroke mouse-action ratio.
//!
//! BLEU is word level over whitespace-split surfaces, single reference, no
//! smoothing. KSMR is micro-averaged: ledgers are summed before dividing.

use std::collections::HashMap;
use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAX_ORDER: usize = 4;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("{hypotheses} hypotheses but {references} references")]
    LengthMismatch {
        hypotheses: usize,
        references: usize,
    },
    #[error("no references given")]
    EmptyCorpus,
    #[error("reference has zero characters")]
    ZeroReference,
}

/// Sufficient statistics for corpus BLEU; they add across sentences.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BleuStats {
    pub matches: [usize; MAX_ORDER],
    pub totals: [usize; MAX_ORDER],
    pub hyp_len: usize,
    pub ref_len: usize,
}

fn ngram_counts<'w, 'a>(words: &'w [&'a str], n: usize) -> HashMap<&'w [&'a str], usize> {
    let mut counts = HashMap::new();
    for g in words.windows(n) {
        *counts.entry(g).or_insert(0) += 1;
    }
    counts
}

impl BleuStats {
    pub fn from_pair(hypothesis: &str, reference: &str) -> Self {
        let hyp: Vec<&str> = hypothesis.split_whitespace().collect();
        let refw: Vec<&str> = reference.split_whitespace().collect();
        let mut stats = BleuStats {
            hyp_len: hyp.len(),
            ref_len: refw.len(),
            ..Default::default()
        };
        for n in 1..=MAX_ORDER {
            let ref_counts = ngram_counts(&refw, n);
            let hyp_counts = ngram_counts(&hyp, n);
            stats.totals[n - 1] = hyp.len().saturating_sub(n - 1);
            stats.matches[n - 1] = hyp_counts
                .iter()
                .map(|(g, &c)| c.min(ref_counts.get(g).copied().unwrap_or(0)))
                .sum();
        }
        stats
    }

    /// Clipped precision of order `n` (1-based); zero when there are no
    /// hypothesis n-grams.
    pub fn precision(&self, n: usize) -> f64 {
        let total = self.totals[n - 1];
        if total == 0 {
            0.0
        } else {
            self.matches[n - 1] as f64 / total as f64
        }
    }

    pub fn brevity_penalty(&self) -> f64 {
        if self.hyp_len == 0 {
            0.0
        } else if self.hyp_len >= self.ref_len {
            1.0
        } else {
            (1.0 - self.ref_len as f64 / self.hyp_len as f64).exp()
        }
    }

    /// BLEU in [0, 1].
    pub fn score(&self) -> f64 {
        let mut log_sum = 0.0;
        for n in 1..=MAX_ORDER {
            let p = self.precision(n);
            if p == 0.0 {
                return 0.0;
            }
            log_sum += p.ln();
        }
        self.brevity_penalty() * (log_sum / MAX_ORDER as f64).exp()
    }
}

impl AddAssign for BleuStats {
    fn add_assign(&mut self, rhs: Self) {
        for n in 0..MAX_ORDER {
            self.matches[n] += rhs.matches[n];
            self.totals[n] += rhs.totals[n];
        }
        self.hyp_len += rhs.hyp_len;
        self.ref_len += rhs.ref_len;
    }
}

impl Add for BleuStats {
    type Output = Self;
    fn add(mut self, rhs: Self) -> Self {
        self += rhs;
        self
    }
}

pub fn corpus_bleu_stats<H, R>(hypotheses: &[H], references: &[R]) -> Result<BleuStats, MetricsError>
where
    H: AsRef<str>,
    R: AsRef<str>,
{
    if hypotheses.len() != references.len() {
        return Err(MetricsError::LengthMismatch {
            hypotheses: hypotheses.len(),
            references: references.len(),
        });
    }
    if references.is_empty() {
        return Err(MetricsError::EmptyCorpus);
    }
    Ok(hypotheses
        .iter()
        .zip(references)
        .map(|(h, r)| BleuStats::from_pair(h.as_ref(), r.as_ref()))
        .fold(BleuStats::default(), Add::add))
}

/// Corpus-level BLEU with n-grams up to order 4 and brevity penalty.
pub fn corpus_bleu<H, R>(hypotheses: &[H], references: &[R]) -> Result<f64, MetricsError>
where
    H: AsRef<str>,
    R: AsRef<str>,
{
    corpus_bleu_stats(hypotheses, references).map(|s| s.score())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EffortLedger {
    pub keystrokes: usize,
    pub mouse_actions: usize,
    pub reference_characters: usize,
}

impl EffortLedger {
    /// (keystrokes + mouse actions) / reference characters.
    pub fn ksmr(&self) -> Result<f64, MetricsError> {
        ksmr(self)
    }
}

pub fn ksmr(ledger: &EffortLedger) -> Result<f64, MetricsError> {
    if ledger.reference_characters == 0 {
        return Err(MetricsError::ZeroReference);
    }
    Ok((ledger.keystrokes + ledger.mouse_actions) as f64 / ledger.reference_characters as f64)
}

impl AddAssign for EffortLedger {
    fn add_assign(&mut self, rhs: Self) {
        self.keystrokes += rhs.keystrokes;
        self.mouse_actions += rhs.mouse_actions;
        self.reference_characters += rhs.reference_characters;
    }
}

impl Add for EffortLedger {
    type Output = Self;
    fn add(mut self, rhs: Self) -> Self {
        self += rhs;
        self
    }
}
