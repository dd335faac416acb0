//! Sentence sampling strategies and top-ε selection.
//!
//! Every strategy maps a (source, hypothesis) pair to an uncertainty where
//! larger means more worth supervising:
//!
//! * QES: `1 − |{y_i : C_w(x, y_i) > τ_w}| / |y|` over hypothesis words.
//! * CovS: `−Σ_j ln(min(Σ_i α_ij, 1)) / J`, column sums floored at 1e-10.
//! * ADS: mean over attention rows of `−Kurt(α_i)`.
//! * RS: a uniform draw.
//! * QBC: each of the four strategies above votes for its own top-ε
//!   sentences; a sentence with `v` votes scores `−v/4 + ln(v/4)`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aligner::{word_confidence, AlignmentModel};
use crate::model::{AttentionMatrix, Hypothesis};

pub const COVERAGE_FLOOR: f64 = 1e-10;
pub const DEFAULT_TAU_W: f64 = 0.4;
pub const COMMITTEE_SIZE: usize = 4;

#[derive(Debug, Error, PartialEq)]
pub enum SamplingError {
    #[error("hypothesis has no words")]
    EmptyHypothesis,
    #[error("unknown strategy {0:?} (expected qes, covs, ads, rs or qbc)")]
    UnknownStrategy(String),
    #[error("epsilon {0} outside [0, 1]")]
    Epsilon(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Qes,
    Covs,
    Ads,
    Rs,
    Qbc,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [Strategy::Qes, Strategy::Covs, Strategy::Ads, Strategy::Rs, Strategy::Qbc];
    pub const COMMITTEE: [Strategy; COMMITTEE_SIZE] = [Strategy::Qes, Strategy::Covs, Strategy::Ads, Strategy::Rs];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Qes => "qes",
            Strategy::Covs => "covs",
            Strategy::Ads => "ads",
            Strategy::Rs => "rs",
            Strategy::Qbc => "qbc",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = SamplingError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| SamplingError::UnknownStrategy(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoveragePolarity {
    /// Poorly covered sentences rank first.
    #[default]
    LeastCovered,
    /// Rank by the raw coverage value.
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub strategy: Strategy,
    pub epsilon: f64,
    pub tau_w: f64,
    pub seed: u64,
    #[serde(default)]
    pub coverage_polarity: CoveragePolarity,
}

impl SamplingConfig {
    pub fn new(strategy: Strategy, epsilon: f64) -> Result<Self, SamplingError> {
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(SamplingError::Epsilon(epsilon));
        }
        Ok(Self {
            strategy,
            epsilon,
            tau_w: DEFAULT_TAU_W,
            seed: 0,
            coverage_polarity: CoveragePolarity::default(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSentence {
    /// Position in the stream.
    pub index: usize,
    pub source: String,
    pub hypothesis: Hypothesis,
    pub uncertainty: f64,
    pub strategy: Strategy,
}

/// QES score from precomputed word confidences.
pub fn qe_from_confidences(confidences: &[f64], tau_w: f64) -> Result<f64, SamplingError> {
    if confidences.is_empty() {
        return Err(SamplingError::EmptyHypothesis);
    }
    let confident = confidences.iter().filter(|&&c| c > tau_w).count();
    Ok(1.0 - confident as f64 / confidences.len() as f64)
}

pub fn score_qe(model: &AlignmentModel, source: &str, hypothesis: &str, tau_w: f64) -> Result<f64, SamplingError> {
    let src: Vec<&str> = source.split_whitespace().collect();
    let conf: Vec<f64> = hypothesis
        .split_whitespace()
        .map(|y| word_confidence(model, &src, y))
        .collect();
    qe_from_confidences(&conf, tau_w)
}

/// Uncertainty from attention coverage: zero when every source position
/// received a total weight of at least one.
pub fn coverage_from_sums(column_sums: &[f64]) -> f64 {
    if column_sums.is_empty() {
        return 0.0;
    }
    let c: f64 = column_sums
        .iter()
        .map(|s| s.clamp(COVERAGE_FLOOR, 1.0).ln())
        .sum::<f64>()
        / column_sums.len() as f64;
    -c
}

pub fn score_coverage(attention: &AttentionMatrix, source_len: usize) -> f64 {
    let mut sums = attention.column_sums();
    sums.resize(source_len, 0.0);
    coverage_from_sums(&sums)
}

/// Kurtosis of one attention row around the mean 1/J; zero for rows with
/// (near) zero variance.
pub fn kurtosis(row: &[f64]) -> f64 {
    let j = row.len() as f64;
    if row.is_empty() {
        return 0.0;
    }
    let mean = 1.0 / j;
    let m2 = row.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / j;
    if m2 < 1e-12 {
        return 0.0;
    }
    let m4 = row.iter().map(|a| (a - mean).powi(4)).sum::<f64>() / j;
    m4 / (m2 * m2)
}

pub fn score_attention_distraction(attention: &AttentionMatrix) -> f64 {
    if attention.rows == 0 {
        return 0.0;
    }
    attention.row_iter().map(|r| -kurtosis(r)).sum::<f64>() / attention.rows as f64
}

pub fn score_random<R: Rng>(rng: &mut R) -> f64 {
    rng.random::<f64>()
}

/// Committee score of a sentence that received `votes` of `committee`.
pub fn qbc_score(votes: usize, committee: usize) -> f64 {
    if votes == 0 {
        return f64::NEG_INFINITY;
    }
    let share = votes as f64 / committee as f64;
    -share + share.ln()
}

/// Number of sentences to supervise out of `n`.
pub fn selection_size(n: usize, epsilon: f64) -> usize {
    let k = (epsilon * n as f64 - 1e-9).ceil().max(0.0) as usize;
    k.min(n)
}

/// Positions of the ⌈ε·n⌉ highest scores, earlier positions first on ties,
/// returned in increasing order.
pub fn select_top(scores: &[f64], epsilon: f64) -> Vec<usize> {
    let k = selection_size(scores.len(), epsilon);
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut chosen = order[..k].to_vec();
    chosen.sort_unstable();
    chosen
}

/// Combines the committee members' own selections into per-sentence
/// scores and the final top-ε selection.
pub fn select_qbc(member_selections: &[Vec<usize>], block_len: usize, epsilon: f64) -> (Vec<usize>, Vec<f64>) {
    let mut votes = vec![0usize; block_len];
    for sel in member_selections {
        for &i in sel {
            votes[i] += 1;
        }
    }
    let scores: Vec<f64> = votes
        .iter()
        .map(|&v| qbc_score(v, member_selections.len()))
        .collect();
    (select_top(&scores, epsilon), scores)
}
