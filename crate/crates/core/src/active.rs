//! Active learning over a sentence stream.
//!
//! For each block: decode every sentence with the model as it was when the
//! block started and score it, select the top-ε sentences, then walk the
//! block in stream order. A selected sentence is decoded again with the
//! current model, supervised through a simulated interactive session, and
//! the model takes one SGD step on the result before the next sentence.
//! The others keep their block-start hypothesis as output (in strict mode
//! they are decoded again at their turn as well).

use std::io::{self, Write};
use std::path::PathBuf;

use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aligner::AlignmentModel;
use crate::corpus::{get_block_from_stream, Block, CorpusError, StreamSource};
use crate::inmt::{inmt_session_from, InmtError, SessionConfig, SessionTrace};
use crate::metrics::{corpus_bleu_stats, BleuStats, EffortLedger};
use crate::model::{Hypothesis, ModelError, TranslationModel};
use crate::sampling::{
    score_attention_distraction, score_coverage, score_qe, score_random, select_qbc, select_top, CoveragePolarity,
    SamplingError, ScoredSentence, Strategy, DEFAULT_TAU_W,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ALConfig {
    pub block_size: usize,
    pub epsilon: f64,
    pub strategy: Strategy,
    pub beam: usize,
    pub lr: f64,
    pub tau_w: f64,
    pub seed: u64,
    /// Save the model every this many blocks (0 disables).
    pub checkpoint_every: usize,
    pub checkpoint_dir: Option<PathBuf>,
    /// Decode every sentence with the current model at its turn.
    pub strict: bool,
    pub skip_adjacent_positioning: bool,
    pub coverage_polarity: CoveragePolarity,
}

impl Default for ALConfig {
    fn default() -> Self {
        Self {
            block_size: 500,
            epsilon: 0.0,
            strategy: Strategy::Ads,
            beam: 6,
            lr: 0.0005,
            tau_w: DEFAULT_TAU_W,
            seed: 0,
            checkpoint_every: 10,
            checkpoint_dir: None,
            strict: false,
            skip_adjacent_positioning: false,
            coverage_polarity: CoveragePolarity::LeastCovered,
        }
    }
}

#[derive(Debug, Error)]
pub enum ALError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Session(#[from] InmtError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("no reference for stream sentence {0}")]
    MissingReference(usize),
    #[error("quality-estimation sampling needs an alignment model")]
    MissingAligner,
    #[error("block size must be at least 1")]
    ZeroBlockSize,
    #[error("report sink: {0}")]
    Sink(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceRecord {
    pub index: usize,
    pub block: usize,
    pub strategy: Strategy,
    pub score: f64,
    pub selected: bool,
    pub initial: String,
    pub output: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<SessionTrace>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub update_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockRecord {
    pub block: usize,
    pub stream_offset: usize,
    pub size: usize,
    pub selected: usize,
    /// BLEU of this block's initial hypotheses.
    pub bleu: f64,
    /// BLEU of all initial hypotheses so far.
    pub cumulative_bleu: f64,
    /// Effort so far over all reference characters seen so far.
    pub cumulative_ksmr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub strategy: Strategy,
    pub epsilon: f64,
    pub sentences: usize,
    pub supervised: usize,
    pub percent_supervised: f64,
    /// BLEU of the initial hypotheses over the whole stream.
    pub bleu: f64,
    /// BLEU of the delivered outputs.
    pub output_bleu: f64,
    pub ksmr: f64,
    pub ledger: EffortLedger,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ReportEvent {
    Sentence(SentenceRecord),
    Block(BlockRecord),
    Summary(Summary),
}

pub trait ReportSink {
    fn record(&mut self, event: &ReportEvent) -> io::Result<()>;
    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

/// Discards every event.
pub struct NullSink;

impl ReportSink for NullSink {
    fn record(&mut self, _: &ReportEvent) -> io::Result<()> {
        Ok(())
    }
}

#[derive(Debug, Default)]
pub struct MemorySink {
    pub events: Vec<ReportEvent>,
}

impl ReportSink for MemorySink {
    fn record(&mut self, event: &ReportEvent) -> io::Result<()> {
        self.events.push(event.clone());
        Ok(())
    }
}

/// One JSON object per line.
pub struct JsonlSink<W: Write> {
    out: W,
}

impl<W: Write> JsonlSink<W> {
    pub fn new(out: W) -> Self {
        Self { out }
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

impl<W: Write> ReportSink for JsonlSink<W> {
    fn record(&mut self, event: &ReportEvent) -> io::Result<()> {
        serde_json::to_writer(&mut self.out, event)?;
        self.out.write_all(b"\n")
    }

    fn flush(&mut self) -> io::Result<()> {
        self.out.flush()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ALConfig,
    pub blocks: Vec<BlockRecord>,
    /// Delivered translation of every stream sentence, in stream order.
    pub outputs: Vec<String>,
    /// Hypothesis first proposed for every stream sentence.
    pub initial_hypotheses: Vec<String>,
    /// Stream positions of supervised sentences.
    pub supervised: Vec<usize>,
    pub summary: Summary,
}

/// Scores a block on one model state. The hypotheses are returned with the
/// scores so unsupervised sentences can reuse them.
pub fn score_block<M: TranslationModel + ?Sized>(
    model: &M,
    block: &Block,
    aligner: Option<&AlignmentModel>,
    config: &ALConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<ScoredSentence>, ALError> {
    let mut hyps = Vec::with_capacity(block.len());
    for s in &block.sentences {
        hyps.push(model.translate(s.surface(), config.beam)?);
    }
    let member = |strategy: Strategy, rng: &mut ChaCha8Rng| -> Result<Vec<f64>, ALError> {
        let mut out = Vec::with_capacity(hyps.len());
        for (s, h) in block.sentences.iter().zip(&hyps) {
            out.push(strategy_score(strategy, s.surface(), h, aligner, config, rng)?);
        }
        Ok(out)
    };
    let scores = if config.strategy == Strategy::Qbc {
        let mut selections = Vec::new();
        for m in Strategy::COMMITTEE {
            selections.push(select_top(&member(m, rng)?, config.epsilon));
        }
        select_qbc(&selections, block.len(), config.epsilon).1
    } else {
        member(config.strategy, rng)?
    };
    Ok(block
        .sentences
        .iter()
        .zip(hyps)
        .zip(scores)
        .enumerate()
        .map(|(k, ((s, hypothesis), uncertainty))| ScoredSentence {
            index: block.stream_offset + k,
            source: s.surface().to_string(),
            hypothesis,
            uncertainty,
            strategy: config.strategy,
        })
        .collect())
}

fn strategy_score(
    strategy: Strategy,
    source: &str,
    hyp: &Hypothesis,
    aligner: Option<&AlignmentModel>,
    config: &ALConfig,
    rng: &mut ChaCha8Rng,
) -> Result<f64, ALError> {
    Ok(match strategy {
        Strategy::Qes => {
            let a = aligner.ok_or(ALError::MissingAligner)?;
            match score_qe(a, source, &hyp.surface, config.tau_w) {
                Ok(v) => v,
                // nothing was produced: as uncertain as it gets
                Err(SamplingError::EmptyHypothesis) => 1.0,
                Err(e) => return Err(e.into()),
            }
        }
        Strategy::Covs => {
            let u = score_coverage(&hyp.attention, hyp.attention.cols);
            match config.coverage_polarity {
                CoveragePolarity::LeastCovered => u,
                CoveragePolarity::Raw => -u,
            }
        }
        Strategy::Ads => score_attention_distraction(&hyp.attention),
        Strategy::Rs => score_random(rng),
        Strategy::Qbc => unreachable!("committee members are scored individually"),
    })
}

struct RunState {
    blocks: Vec<BlockRecord>,
    outputs: Vec<String>,
    initial: Vec<String>,
    refs: Vec<String>,
    supervised: Vec<usize>,
    ledger: EffortLedger,
    bleu: BleuStats,
}

fn save<M: TranslationModel + ?Sized>(model: &M, config: &ALConfig, tag: &str) -> Result<(), ALError> {
    if let Some(dir) = &config.checkpoint_dir {
        let path = dir.join(tag);
        if model.save_checkpoint(&path)? {
            info!("checkpoint written to {}", path.display());
        }
    }
    Ok(())
}

/// Runs the loop over the whole stream with a simulated user who wants
/// `references[i]` for stream sentence i.
pub fn run_al<M: TranslationModel + ?Sized>(
    model: &mut M,
    stream: &mut StreamSource,
    references: &[String],
    aligner: Option<&AlignmentModel>,
    config: &ALConfig,
    sink: &mut dyn ReportSink,
) -> Result<ExperimentReport, ALError> {
    if config.block_size == 0 {
        return Err(ALError::ZeroBlockSize);
    }
    if !(0.0..=1.0).contains(&config.epsilon) {
        return Err(SamplingError::Epsilon(config.epsilon).into());
    }
    let mut state = RunState {
        blocks: Vec::new(),
        outputs: Vec::new(),
        initial: Vec::new(),
        refs: Vec::new(),
        supervised: Vec::new(),
        ledger: EffortLedger::default(),
        bleu: BleuStats::default(),
    };
    let result = run_blocks(model, stream, references, aligner, config, sink, &mut state);
    if let Err(e) = result {
        sink.flush()?;
        save(model, config, "aborted")?;
        return Err(e);
    }
    let summary = summarize(config, &state);
    sink.record(&ReportEvent::Summary(summary.clone()))?;
    sink.flush()?;
    save(model, config, "final")?;
    Ok(ExperimentReport {
        config: config.clone(),
        blocks: state.blocks,
        outputs: state.outputs,
        initial_hypotheses: state.initial,
        supervised: state.supervised,
        summary,
    })
}

fn summarize(config: &ALConfig, s: &RunState) -> Summary {
    let n = s.outputs.len();
    let output_bleu = if n == 0 {
        0.0
    } else {
        corpus_bleu_stats(&s.outputs, &s.refs).map(|b| b.score()).unwrap_or(0.0)
    };
    Summary {
        strategy: config.strategy,
        epsilon: config.epsilon,
        sentences: n,
        supervised: s.supervised.len(),
        percent_supervised: if n == 0 { 0.0 } else { 100.0 * s.supervised.len() as f64 / n as f64 },
        bleu: s.bleu.score(),
        output_bleu,
        ksmr: s.ledger.ksmr().unwrap_or(0.0),
        ledger: s.ledger,
    }
}

fn run_blocks<M: TranslationModel + ?Sized>(
    model: &mut M,
    stream: &mut StreamSource,
    references: &[String],
    aligner: Option<&AlignmentModel>,
    config: &ALConfig,
    sink: &mut dyn ReportSink,
    state: &mut RunState,
) -> Result<(), ALError> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let session_cfg = SessionConfig {
        beam: config.beam,
        skip_adjacent_positioning: config.skip_adjacent_positioning,
    };
    let mut block_index = 0;
    while let Some(block) = get_block_from_stream(stream, config.block_size)? {
        let scored = score_block(&*model, &block, aligner, config, &mut rng)?;
        let scores: Vec<f64> = scored.iter().map(|s| s.uncertainty).collect();
        let selected = select_top(&scores, config.epsilon);
        let mut is_selected = vec![false; block.len()];
        for &k in &selected {
            is_selected[k] = true;
        }

        let mut block_bleu = BleuStats::default();
        for (k, s) in scored.into_iter().enumerate() {
            let index = s.index;
            let reference = references.get(index).ok_or(ALError::MissingReference(index))?;
            state.ledger.reference_characters += reference.chars().count();
            let mut record = SentenceRecord {
                index,
                block: block_index,
                strategy: s.strategy,
                score: s.uncertainty,
                selected: is_selected[k],
                initial: String::new(),
                output: String::new(),
                trace: None,
                update_loss: None,
            };
            if is_selected[k] {
                let initial = model.translate(&s.source, config.beam)?;
                record.initial = initial.surface.clone();
                let (final_hyp, trace) = inmt_session_from(&*model, &s.source, initial, reference, session_cfg)?;
                let mut ledger = trace.ledger;
                ledger.reference_characters = 0;
                state.ledger += ledger;
                match model.update(&s.source, &final_hyp.surface, config.lr) {
                    Ok(loss) => record.update_loss = Some(loss),
                    Err(ModelError::NonFinite) => log::warn!("skipped non-finite update on sentence {index}"),
                    Err(e) => return Err(e.into()),
                }
                record.output = final_hyp.surface;
                record.trace = Some(trace);
                state.supervised.push(index);
            } else {
                record.initial = if config.strict {
                    model.translate(&s.source, config.beam)?.surface
                } else {
                    s.hypothesis.surface
                };
                record.output = record.initial.clone();
            }
            block_bleu += BleuStats::from_pair(&record.initial, reference);
            state.initial.push(record.initial.clone());
            state.outputs.push(record.output.clone());
            state.refs.push(reference.clone());
            sink.record(&ReportEvent::Sentence(record))?;
        }

        state.bleu += block_bleu;
        let rec = BlockRecord {
            block: block_index,
            stream_offset: block.stream_offset,
            size: block.len(),
            selected: selected.len(),
            bleu: block_bleu.score(),
            cumulative_bleu: state.bleu.score(),
            cumulative_ksmr: state.ledger.ksmr().unwrap_or(0.0),
        };
        info!(
            "block {} selected {} bleu {:.4} cumulative {:.4} ksmr {:.4}",
            rec.block, rec.selected, rec.bleu, rec.cumulative_bleu, rec.cumulative_ksmr
        );
        sink.record(&ReportEvent::Block(rec.clone()))?;
        state.blocks.push(rec);
        block_index += 1;
        if config.checkpoint_every > 0 && block_index % config.checkpoint_every == 0 {
            save(&*model, config, &format!("block-{block_index:05}"))?;
        }
    }
    Ok(())
}

/// CSV rows of (strategy, ε, % supervised, KSMR, BLEU) per report.
pub fn curve_csv(reports: &[ExperimentReport]) -> String {
    let mut out = String::from("strategy,epsilon,percent_supervised,ksmr,bleu,output_bleu\n");
    for r in reports {
        let s = &r.summary;
        out.push_str(&format!(
            "{},{},{:.4},{:.6},{:.6},{:.6}\n",
            s.strategy, s.epsilon, s.percent_supervised, s.ksmr, s.bleu, s.output_bleu
        ));
    }
    out
}
