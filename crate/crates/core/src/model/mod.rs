//! Translation-model contract and the reference attention encoder-decoder.

pub mod checkpoint;
pub mod network;
pub mod params;
pub mod search;
pub mod system;
pub mod tensor;
pub mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use params::{ModelConfig, ModelParams};
pub use system::{NmtSystem, SystemConfig};
pub use train::{TrainConfig, TrainReport};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("source sentence has no tokens")]
    EmptySource,
    #[error("no token sequence can produce the prefix {prefix:?}")]
    PrefixUnreachable { prefix: String },
    #[error("beam width must be at least 1")]
    ZeroBeam,
    #[error("non-finite loss or gradient; update skipped")]
    NonFinite,
    #[error("training diverged")]
    Diverged { last_good: Box<ModelParams> },
    #[error("empty training corpus")]
    EmptyCorpus,
    #[error("checkpoint format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Row i holds the attention weights used when emitting target token i.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl AttentionMatrix {
    pub fn from_rows(rows: &[Vec<f64>], cols: usize) -> Self {
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            debug_assert_eq!(r.len(), cols);
            data.extend_from_slice(r);
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.rows).map(|i| self.row(i))
    }

    /// Total attention received by each source position.
    pub fn column_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.cols];
        for r in self.row_iter() {
            for (s, v) in sums.iter_mut().zip(r) {
                *s += v;
            }
        }
        sums
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    /// Target ids, ending with the end-of-sequence id.
    pub tokens: Vec<u32>,
    /// Token strings for display, aligned with `tokens`.
    pub pieces: Vec<String>,
    pub surface: String,
    pub log_score: f64,
    pub attention: AttentionMatrix,
}

/// Character prefix a completion must start with. A closed prefix must be
/// the whole output.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Prefix {
    pub text: String,
    pub closed: bool,
}

impl Prefix {
    pub fn open(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            closed: false,
        }
    }

    pub fn closed(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            closed: true,
        }
    }
}

/// What the interactive protocol and the active-learning loop need from a
/// translation engine.
pub trait TranslationModel {
    fn translate(&self, source: &str, beam: usize) -> Result<Hypothesis, ModelError>;

    fn constrained_suffix_search(
        &self,
        source: &str,
        prefix: &Prefix,
        beam: usize,
    ) -> Result<Hypothesis, ModelError>;

    /// One learning step on a supervised pair; returns the loss before it.
    fn update(&mut self, source: &str, target: &str, lr: f64) -> Result<f64, ModelError>;

    /// Persists the model under `dir`; returns false if the model has no
    /// on-disk form.
    fn save_checkpoint(&self, dir: &std::path::Path) -> Result<bool, ModelError> {
        let _ = dir;
        Ok(false)
    }

    /// Source token strings as the model sees them.
    fn source_pieces(&self, source: &str) -> Vec<String> {
        source.split_whitespace().map(str::to_owned).collect()
    }
}
