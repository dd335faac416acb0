//! Prefix-based interactive translation.
//!
//! The user reads the hypothesis left to right and fixes the first wrong
//! character. Everything before it plus the typed character becomes the
//! validated prefix, and the engine completes it with a constrained search.
//! Effort: one keystroke per typed character, one mouse action to position
//! the cursor for each correction, and one final mouse action to accept.
//!
//! When the hypothesis already starts with the whole reference but goes on
//! past it, the user cuts the tail (`Truncate`), which closes the prefix:
//! the next hypothesis must equal it. This is counted like a correction.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::EffortLedger;
use crate::model::{Hypothesis, ModelError, Prefix, TranslationModel};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Feedback {
    Correction { position: usize, char: char },
    Truncate { position: usize },
    Accept,
}

#[derive(Debug, Error)]
pub enum InmtError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("session already accepted")]
    Closed,
    #[error("stale feedback: {0}")]
    Stale(String),
    #[error("iteration cap of {cap} exceeded")]
    IterationCap { cap: usize, trace: Box<SessionTrace> },
    #[error("hypothesis {surface:?} does not start with validated prefix {prefix:?}")]
    PrefixViolated { prefix: String, surface: String },
}

/// Feedback of a user who wants `reference`.
pub fn simulate_user(hypothesis: &str, reference: &str) -> Feedback {
    if hypothesis == reference {
        return Feedback::Accept;
    }
    let mut hyp = hypothesis.chars();
    for (position, want) in reference.chars().enumerate() {
        if hyp.next() != Some(want) {
            return Feedback::Correction { position, char: want };
        }
    }
    Feedback::Truncate {
        position: reference.chars().count(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub beam: usize,
    /// Do not count a positioning action when the error sits right after
    /// the previous correction.
    pub skip_adjacent_positioning: bool,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            beam: 6,
            skip_adjacent_positioning: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Iteration {
    pub hypothesis: String,
    pub feedback: Feedback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionTrace {
    pub source: String,
    pub reference: Option<String>,
    pub iterations: Vec<Iteration>,
    pub ledger: EffortLedger,
    #[serde(rename = "final")]
    pub final_surface: String,
}

impl SessionTrace {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("trace serializes")
    }

    pub fn corrections(&self) -> usize {
        self.iterations
            .iter()
            .filter(|it| matches!(it.feedback, Feedback::Correction { .. }))
            .count()
    }

    /// Ledger implied by the recorded feedback.
    pub fn implied_ledger(&self, skip_adjacent_positioning: bool) -> EffortLedger {
        let mut l = EffortLedger {
            reference_characters: self.ledger.reference_characters,
            ..Default::default()
        };
        let mut prefix_len: Option<usize> = None;
        for it in &self.iterations {
            match it.feedback {
                Feedback::Correction { position, .. } => {
                    l.keystrokes += 1;
                    if !(skip_adjacent_positioning && prefix_len == Some(position)) {
                        l.mouse_actions += 1;
                    }
                    prefix_len = Some(position + 1);
                }
                Feedback::Truncate { .. } => {
                    l.keystrokes += 1;
                    l.mouse_actions += 1;
                }
                Feedback::Accept => l.mouse_actions += 1,
            }
        }
        l
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SessionStatus {
    Open,
    Accepted,
}

/// State of one interactive session, driven by feedback from any source.
#[derive(Debug, Clone)]
pub struct Session {
    source: String,
    reference: Option<String>,
    config: SessionConfig,
    hypothesis: Hypothesis,
    prefix: Prefix,
    /// Validated prefix length after the last correction, if any.
    last_correction_end: Option<usize>,
    ledger: EffortLedger,
    iterations: Vec<Iteration>,
    status: SessionStatus,
}

impl Session {
    pub fn start<M: TranslationModel + ?Sized>(model: &M, source: &str, config: SessionConfig) -> Result<Self, InmtError> {
        let hyp = model.translate(source, config.beam)?;
        Ok(Self::from_hypothesis(source, hyp, config))
    }

    /// Starts from an already decoded initial hypothesis.
    pub fn from_hypothesis(source: &str, hypothesis: Hypothesis, config: SessionConfig) -> Self {
        Self {
            source: source.to_string(),
            reference: None,
            config,
            hypothesis,
            prefix: Prefix::default(),
            last_correction_end: None,
            ledger: EffortLedger::default(),
            iterations: Vec::new(),
            status: SessionStatus::Open,
        }
    }

    /// Records the desired translation; effort is normalized by its length.
    pub fn with_reference(mut self, reference: &str) -> Self {
        self.ledger.reference_characters = reference.chars().count();
        self.reference = Some(reference.to_string());
        self
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn hypothesis(&self) -> &Hypothesis {
        &self.hypothesis
    }

    pub fn prefix(&self) -> &Prefix {
        &self.prefix
    }

    pub fn prefix_len(&self) -> usize {
        self.prefix.text.chars().count()
    }

    pub fn ledger(&self) -> EffortLedger {
        self.ledger
    }

    pub fn status(&self) -> SessionStatus {
        self.status
    }

    pub fn iterations(&self) -> &[Iteration] {
        &self.iterations
    }

    pub fn apply<M: TranslationModel + ?Sized>(&mut self, model: &M, feedback: Feedback) -> Result<(), InmtError> {
        if self.status == SessionStatus::Accepted {
            return Err(InmtError::Closed);
        }
        let hyp: Vec<char> = self.hypothesis.surface.chars().collect();
        let validated = self.prefix_len();
        let next = match &feedback {
            Feedback::Accept => None,
            Feedback::Correction { position, char } => {
                let position = *position;
                if position < validated || position > hyp.len() {
                    return Err(InmtError::Stale(format!(
                        "position {position} outside {validated}..={}",
                        hyp.len()
                    )));
                }
                if hyp.get(position) == Some(char) {
                    return Err(InmtError::Stale(format!("character at {position} is already {char:?}")));
                }
                let mut text: String = hyp[..position].iter().collect();
                text.push(*char);
                Some(Prefix::open(text))
            }
            Feedback::Truncate { position } => {
                let position = *position;
                if position < validated || position >= hyp.len() {
                    return Err(InmtError::Stale(format!(
                        "cut position {position} outside {validated}..{}",
                        hyp.len()
                    )));
                }
                Some(Prefix::closed(hyp[..position].iter().collect::<String>()))
            }
        };
        let Some(prefix) = next else {
            self.ledger.mouse_actions += 1;
            self.iterations.push(Iteration {
                hypothesis: self.hypothesis.surface.clone(),
                feedback,
            });
            self.status = SessionStatus::Accepted;
            return Ok(());
        };

        let new_hyp = model.constrained_suffix_search(&self.source, &prefix, self.config.beam)?;
        let ok = if prefix.closed {
            new_hyp.surface == prefix.text
        } else {
            new_hyp.surface.starts_with(&prefix.text)
        };
        if !ok {
            return Err(InmtError::PrefixViolated {
                prefix: prefix.text,
                surface: new_hyp.surface,
            });
        }
        self.ledger.keystrokes += 1;
        match feedback {
            Feedback::Correction { position, .. } => {
                let adjacent = self.last_correction_end == Some(position);
                if !(self.config.skip_adjacent_positioning && adjacent) {
                    self.ledger.mouse_actions += 1;
                }
                self.last_correction_end = Some(position + 1);
            }
            _ => self.ledger.mouse_actions += 1,
        }
        self.iterations.push(Iteration {
            hypothesis: std::mem::replace(&mut self.hypothesis, new_hyp).surface,
            feedback,
        });
        self.prefix = prefix;
        Ok(())
    }

    pub fn trace(&self) -> SessionTrace {
        SessionTrace {
            source: self.source.clone(),
            reference: self.reference.clone(),
            iterations: self.iterations.clone(),
            ledger: self.ledger,
            final_surface: self.hypothesis.surface.clone(),
        }
    }

    pub fn finish(self) -> (Hypothesis, SessionTrace) {
        let trace = self.trace();
        (self.hypothesis, trace)
    }
}

/// Upper bound on feedback rounds for a simulated session.
pub fn iteration_cap(reference: &str) -> usize {
    2 * reference.chars().count() + 8
}

/// Runs a simulated session from a given initial hypothesis until the
/// output equals `reference`.
pub fn inmt_session_from<M: TranslationModel + ?Sized>(
    model: &M,
    source: &str,
    initial: Hypothesis,
    reference: &str,
    config: SessionConfig,
) -> Result<(Hypothesis, SessionTrace), InmtError> {
    let mut session = Session::from_hypothesis(source, initial, config).with_reference(reference);
    let cap = iteration_cap(reference);
    loop {
        if session.iterations.len() >= cap {
            return Err(InmtError::IterationCap {
                cap,
                trace: Box::new(session.trace()),
            });
        }
        let fb = simulate_user(&session.hypothesis.surface, reference);
        session.apply(model, fb)?;
        if session.status == SessionStatus::Accepted {
            return Ok(session.finish());
        }
    }
}

/// Decodes `source` and runs a simulated session against `reference`.
pub fn inmt_session<M: TranslationModel + ?Sized>(
    model: &M,
    source: &str,
    reference: &str,
    config: SessionConfig,
) -> Result<(Hypothesis, SessionTrace), InmtError> {
    let initial = model.translate(source, config.beam)?;
    inmt_session_from(model, source, initial, reference, config)
}
