//! Live interactive sessions over a shared model, independent of transport.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use inmt_al::active::{score_block, ALConfig};
use inmt_al::aligner::AlignmentModel;
use inmt_al::corpus::{get_block_from_stream, StreamSource};
use inmt_al::inmt::{Feedback, InmtError, Session, SessionConfig, SessionStatus};
use inmt_al::metrics::{BleuStats, EffortLedger};
use inmt_al::model::{AttentionMatrix, ModelError, TranslationModel};
use inmt_al::sampling::{select_top, Strategy};

/// Version carried by every request and response body.
pub const WIRE_VERSION: u32 = 1;

pub type SharedModel = Box<dyn TranslationModel + Send + Sync>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub beam: usize,
    /// Step size of the update that follows an accept; 0 disables it.
    pub lr: f64,
    pub skip_adjacent_positioning: bool,
    /// Block size, ε, strategy and seed of the queue.
    pub queue: ALConfig,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            beam: 6,
            lr: 0.0005,
            skip_adjacent_positioning: false,
            queue: ALConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StartRequest {
    pub version: Option<u32>,
    #[serde(default)]
    pub source: String,
    /// Start from the queue item at this stream index instead of `source`.
    pub queue_index: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackRequest {
    pub version: Option<u32>,
    #[serde(flatten)]
    pub feedback: Feedback,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AcceptRequest {
    pub version: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub version: u32,
    pub id: u64,
    pub source: String,
    pub source_pieces: Vec<String>,
    pub hypothesis: String,
    pub pieces: Vec<String>,
    /// Row i holds the weights used for target piece i.
    pub attention: AttentionMatrix,
    pub prefix_len: usize,
    pub status: SessionStatus,
    pub iterations: usize,
    pub ledger: EffortLedger,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcceptView {
    pub version: u32,
    pub id: u64,
    #[serde(rename = "final")]
    pub final_surface: String,
    pub ledger: EffortLedger,
    pub ksmr: f64,
    /// Loss before the update, when one was applied.
    pub update_loss: Option<f64>,
}

/// Answer to a feedback event: the revised session, or the accept summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FeedbackOutcome {
    Accepted(AcceptView),
    Updated(SessionView),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueItem {
    pub index: usize,
    pub source: String,
    pub hypothesis: String,
    pub score: f64,
    pub selected: bool,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueView {
    pub version: u32,
    pub block: Option<usize>,
    pub strategy: Strategy,
    pub epsilon: f64,
    pub selected: usize,
    pub items: Vec<QueueItem>,
    pub exhausted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsView {
    pub version: u32,
    pub sessions: usize,
    pub accepted: usize,
    pub updates: usize,
    /// BLEU of the first hypotheses of accepted sessions against their
    /// accepted translations.
    pub bleu: f64,
    pub ksmr: f64,
    pub ledger: EffortLedger,
}

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("no model loaded")]
    NoModel,
    #[error("{0}")]
    BadRequest(String),
    #[error("unknown session {0}")]
    UnknownSession(u64),
    #[error("{reason}")]
    Conflict { reason: String, state: Box<SessionView> },
    #[error("{0}")]
    Internal(String),
}

struct Live {
    session: Session,
    initial: String,
    queue_index: Option<usize>,
}

#[derive(Default)]
struct Stats {
    sessions: usize,
    accepted: usize,
    updates: usize,
    ledger: EffortLedger,
    bleu: BleuStats,
}

struct Queue {
    stream: Option<StreamSource>,
    rng: ChaCha8Rng,
    block: Option<(usize, Vec<QueueItem>)>,
    next_block: usize,
    exhausted: bool,
}

pub struct Service {
    model: RwLock<Option<SharedModel>>,
    aligner: Option<AlignmentModel>,
    config: ServiceConfig,
    sessions: Mutex<HashMap<u64, Arc<Mutex<Live>>>>,
    next_id: AtomicU64,
    stats: Mutex<Stats>,
    queue: Mutex<Queue>,
}

fn check_version(v: Option<u32>) -> Result<(), ServiceError> {
    match v {
        Some(v) if v != WIRE_VERSION => Err(ServiceError::BadRequest(format!(
            "unsupported version {v}, expected {WIRE_VERSION}"
        ))),
        _ => Ok(()),
    }
}

fn model_error(e: ModelError) -> ServiceError {
    match e {
        ModelError::EmptySource | ModelError::PrefixUnreachable { .. } | ModelError::ZeroBeam => {
            ServiceError::BadRequest(e.to_string())
        }
        other => ServiceError::Internal(other.to_string()),
    }
}

impl Service {
    pub fn new(model: Option<SharedModel>, aligner: Option<AlignmentModel>, config: ServiceConfig) -> Self {
        let rng = ChaCha8Rng::seed_from_u64(config.queue.seed);
        Self {
            model: RwLock::new(model),
            aligner,
            config,
            sessions: Mutex::new(HashMap::new()),
            next_id: AtomicU64::new(1),
            stats: Mutex::new(Stats::default()),
            queue: Mutex::new(Queue {
                stream: None,
                rng,
                block: None,
                next_block: 0,
                exhausted: false,
            }),
        }
    }

    /// Sentences offered through the queue.
    pub fn with_stream(self, stream: StreamSource) -> Self {
        self.queue.lock().unwrap().stream = Some(stream);
        self
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    pub fn set_model(&self, model: SharedModel) {
        *self.model.write().unwrap() = Some(model);
    }

    fn session_config(&self) -> SessionConfig {
        SessionConfig {
            beam: self.config.beam,
            skip_adjacent_positioning: self.config.skip_adjacent_positioning,
        }
    }

    fn view(&self, id: u64, live: &Live, model: &dyn TranslationModel) -> SessionView {
        let s = &live.session;
        let h = s.hypothesis();
        SessionView {
            version: WIRE_VERSION,
            id,
            source: s.source().to_string(),
            source_pieces: model.source_pieces(s.source()),
            hypothesis: h.surface.clone(),
            pieces: h.pieces.clone(),
            attention: h.attention.clone(),
            prefix_len: s.prefix_len(),
            status: s.status(),
            iterations: s.iterations().len(),
            ledger: s.ledger(),
        }
    }

    fn lookup(&self, id: u64) -> Result<Arc<Mutex<Live>>, ServiceError> {
        self.sessions
            .lock()
            .unwrap()
            .get(&id)
            .cloned()
            .ok_or(ServiceError::UnknownSession(id))
    }

    pub fn start_session(&self, req: &StartRequest) -> Result<SessionView, ServiceError> {
        check_version(req.version)?;
        let source = match req.queue_index {
            Some(i) => self.queued_source(i)?,
            None => req.source.trim().to_string(),
        };
        if source.is_empty() {
            return Err(ServiceError::BadRequest("empty source sentence".into()));
        }
        let guard = self.model.read().unwrap();
        let model = guard.as_deref().ok_or(ServiceError::NoModel)?;
        let session = Session::start(model, &source, self.session_config()).map_err(|e| match e {
            InmtError::Model(m) => model_error(m),
            other => ServiceError::Internal(other.to_string()),
        })?;
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let live = Live {
            initial: session.hypothesis().surface.clone(),
            session,
            queue_index: req.queue_index,
        };
        let view = self.view(id, &live, model);
        drop(guard);
        self.sessions.lock().unwrap().insert(id, Arc::new(Mutex::new(live)));
        self.stats.lock().unwrap().sessions += 1;
        Ok(view)
    }

    pub fn session(&self, id: u64) -> Result<SessionView, ServiceError> {
        let live = self.lookup(id)?;
        let live = live.lock().unwrap();
        let guard = self.model.read().unwrap();
        let model = guard.as_deref().ok_or(ServiceError::NoModel)?;
        Ok(self.view(id, &live, model))
    }

    /// Applies one feedback event. An accept is handled like
    /// [`Service::accept`].
    pub fn feedback(&self, id: u64, req: &FeedbackRequest) -> Result<FeedbackOutcome, ServiceError> {
        check_version(req.version)?;
        if req.feedback == Feedback::Accept {
            return self.accept(id, &AcceptRequest { version: req.version }).map(FeedbackOutcome::Accepted);
        }
        self.revise(id, &req.feedback).map(FeedbackOutcome::Updated)
    }

    fn revise(&self, id: u64, feedback: &Feedback) -> Result<SessionView, ServiceError> {
        let live = self.lookup(id)?;
        let mut live = live.lock().unwrap();
        let guard = self.model.read().unwrap();
        let model = guard.as_deref().ok_or(ServiceError::NoModel)?;
        match live.session.apply(model, feedback.clone()) {
            Ok(()) => Ok(self.view(id, &live, model)),
            Err(InmtError::Closed) => Err(ServiceError::Conflict {
                reason: "session already accepted".into(),
                state: Box::new(self.view(id, &live, model)),
            }),
            Err(InmtError::Stale(why)) => Err(ServiceError::Conflict {
                reason: format!("stale feedback: {why}"),
                state: Box::new(self.view(id, &live, model)),
            }),
            Err(InmtError::Model(e)) => Err(model_error(e)),
            Err(e) => Err(ServiceError::Internal(e.to_string())),
        }
    }

    /// Finalizes the session and, with a non-zero rate, updates the model on
    /// the accepted pair. The update holds the write lock, so no decode sees
    /// it half applied.
    pub fn accept(&self, id: u64, req: &AcceptRequest) -> Result<AcceptView, ServiceError> {
        check_version(req.version)?;
        let live = self.lookup(id)?;
        let mut live = live.lock().unwrap();
        {
            let guard = self.model.read().unwrap();
            let model = guard.as_deref().ok_or(ServiceError::NoModel)?;
            if let Err(InmtError::Closed) = live.session.apply(model, Feedback::Accept) {
                return Err(ServiceError::Conflict {
                    reason: "session already accepted".into(),
                    state: Box::new(self.view(id, &live, model)),
                });
            }
        }
        let final_surface = live.session.hypothesis().surface.clone();
        let source = live.session.source().to_string();
        let mut ledger = live.session.ledger();
        ledger.reference_characters = final_surface.chars().count();

        let mut update_loss = None;
        if self.config.lr > 0.0 {
            let mut guard = self.model.write().unwrap();
            let model = guard.as_deref_mut().ok_or(ServiceError::NoModel)?;
            match model.update(&source, &final_surface, self.config.lr) {
                Ok(loss) => update_loss = Some(loss),
                Err(ModelError::NonFinite) => log::warn!("skipped non-finite update for session {id}"),
                Err(e) => return Err(model_error(e)),
            }
        }
        {
            let mut stats = self.stats.lock().unwrap();
            stats.accepted += 1;
            stats.updates += usize::from(update_loss.is_some());
            stats.ledger += ledger;
            stats.bleu += BleuStats::from_pair(&live.initial, &final_surface);
        }
        if let Some(index) = live.queue_index {
            self.mark_done(index);
        }
        Ok(AcceptView {
            version: WIRE_VERSION,
            id,
            ksmr: ledger.ksmr().unwrap_or(0.0),
            final_surface,
            ledger,
            update_loss,
        })
    }

    pub fn metrics(&self) -> MetricsView {
        let s = self.stats.lock().unwrap();
        MetricsView {
            version: WIRE_VERSION,
            sessions: s.sessions,
            accepted: s.accepted,
            updates: s.updates,
            bleu: s.bleu.score(),
            ksmr: s.ledger.ksmr().unwrap_or(0.0),
            ledger: s.ledger,
        }
    }

    fn queued_source(&self, index: usize) -> Result<String, ServiceError> {
        let q = self.queue.lock().unwrap();
        q.block
            .as_ref()
            .and_then(|(_, items)| items.iter().find(|it| it.index == index))
            .map(|it| it.source.clone())
            .ok_or_else(|| ServiceError::BadRequest(format!("stream sentence {index} is not in the current block")))
    }

    fn mark_done(&self, index: usize) {
        let mut q = self.queue.lock().unwrap();
        if let Some((_, items)) = q.block.as_mut() {
            if let Some(it) = items.iter_mut().find(|it| it.index == index) {
                it.done = true;
            }
        }
    }

    /// Current block with scores and selection. Once every selected sentence
    /// of it has been accepted the next block is scored with the model as it
    /// is then.
    pub fn queue(&self) -> Result<QueueView, ServiceError> {
        let mut q = self.queue.lock().unwrap();
        let cfg = &self.config.queue;
        let finished = q
            .block
            .as_ref()
            .is_none_or(|(_, items)| items.iter().all(|it| !it.selected || it.done));
        if finished && !q.exhausted && q.stream.is_some() {
            let q = &mut *q;
            let stream = q.stream.as_mut().expect("checked above");
            match get_block_from_stream(stream, cfg.block_size.max(1)).map_err(|e| ServiceError::Internal(e.to_string()))? {
                None => {
                    q.exhausted = true;
                    q.block = None;
                }
                Some(block) => {
                    let guard = self.model.read().unwrap();
                    let model = guard.as_deref().ok_or(ServiceError::NoModel)?;
                    let scored = score_block(model, &block, self.aligner.as_ref(), cfg, &mut q.rng)
                        .map_err(|e| ServiceError::Internal(e.to_string()))?;
                    let scores: Vec<f64> = scored.iter().map(|s| s.uncertainty).collect();
                    let mut selected = vec![false; scored.len()];
                    for k in select_top(&scores, cfg.epsilon) {
                        selected[k] = true;
                    }
                    let items = scored
                        .into_iter()
                        .zip(selected)
                        .map(|(s, selected)| QueueItem {
                            index: s.index,
                            source: s.source,
                            hypothesis: s.hypothesis.surface,
                            score: s.uncertainty,
                            selected,
                            done: false,
                        })
                        .collect();
                    q.block = Some((q.next_block, items));
                    q.next_block += 1;
                }
            }
        }
        let (block, items) = match &q.block {
            Some((b, items)) => (Some(*b), items.clone()),
            None => (None, Vec::new()),
        };
        Ok(QueueView {
            version: WIRE_VERSION,
            block,
            strategy: cfg.strategy,
            epsilon: cfg.epsilon,
            selected: items.iter().filter(|it| it.selected).count(),
            items,
            exhausted: q.exhausted,
        })
    }
}
