//! The reference translation system: joint BPE, source and target
//! vocabularies with character fallback, and the encoder-decoder weights.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::checkpoint::{load_checkpoint, save_checkpoint};
use super::params::{ModelConfig, ModelParams};
use super::search::{beam_search, length_cap, PrefixConstraint, SearchResult, TokenRender};
use super::train::{fit, init_output_bias, sgd_update, TrainConfig, TrainReport};
use super::{AttentionMatrix, Hypothesis, ModelError, Prefix, TranslationModel};
use crate::corpus::{ParallelPair, Vocabulary, EOS, UNK};
use crate::metrics::corpus_bleu;
use crate::subword::{apply_bpe, learn_bpe, split_marker, MergeTable, EOW};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SystemConfig {
    pub num_merges: usize,
    /// Width of every layer.
    pub dims: usize,
    pub max_target_len: usize,
    pub init_scale: f64,
    pub clip_norm: f64,
    pub seed: u64,
    pub train: TrainConfig,
    /// Beam used for dev BLEU during training.
    pub dev_beam: usize,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            num_merges: 1000,
            dims: 64,
            max_target_len: 64,
            init_scale: 0.1,
            clip_norm: 5.0,
            seed: 1,
            train: TrainConfig::default(),
            dev_beam: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NmtSystem {
    merges: MergeTable,
    src_vocab: Vocabulary,
    tgt_vocab: Vocabulary,
    params: ModelParams,
    render: TokenRender,
}

fn fallback_symbols(texts: &[&str]) -> BTreeSet<String> {
    let mut chars: BTreeSet<char> = ('!'..='~').collect();
    for t in texts {
        chars.extend(t.chars().filter(|c| !c.is_whitespace()));
    }
    let mut out = BTreeSet::new();
    for c in chars {
        out.insert(c.to_string());
        out.insert(format!("{c}{EOW}"));
    }
    out
}

fn build_vocab(merges: &MergeTable, texts: &[&str]) -> Vocabulary {
    let mut pieces = fallback_symbols(texts);
    for t in texts {
        pieces.extend(apply_bpe(merges, t));
    }
    Vocabulary::from_tokens(pieces)
}

/// Ids of the BPE pieces of `text`; pieces missing from the vocabulary are
/// spelled out character by character.
fn encode_with(vocab: &Vocabulary, merges: &MergeTable, text: &str) -> Vec<u32> {
    let mut ids = Vec::new();
    for piece in apply_bpe(merges, text) {
        if let Some(id) = vocab.id(&piece) {
            ids.push(id);
            continue;
        }
        let (body, closes) = split_marker(&piece);
        let n = body.chars().count();
        for (k, c) in body.chars().enumerate() {
            let sym = if closes && k + 1 == n {
                format!("{c}{EOW}")
            } else {
                c.to_string()
            };
            ids.push(vocab.id_or_unk(&sym));
        }
    }
    ids
}

impl NmtSystem {
    /// Learns the joint merge table and both vocabularies from `corpus` and
    /// initializes fresh weights.
    pub fn build(corpus: &[ParallelPair], config: &SystemConfig) -> Result<Self, ModelError> {
        if corpus.is_empty() {
            return Err(ModelError::EmptyCorpus);
        }
        let src: Vec<&str> = corpus.iter().map(|p| p.source.surface()).collect();
        let tgt: Vec<&str> = corpus.iter().map(|p| p.target.surface()).collect();
        let merges = learn_bpe(src.iter().chain(&tgt).copied(), config.num_merges)
            .map_err(|_| ModelError::EmptyCorpus)?;
        let src_vocab = build_vocab(&merges, &src);
        let tgt_vocab = build_vocab(&merges, &tgt);
        let mut mc = ModelConfig::new(src_vocab.len(), tgt_vocab.len()).with_dims(config.dims);
        mc.max_target_len = config.max_target_len;
        mc.init_scale = config.init_scale;
        mc.clip_norm = config.clip_norm;
        mc.seed = config.seed;
        let params = ModelParams::init(&mc);
        Ok(Self::from_parts(merges, src_vocab, tgt_vocab, params))
    }

    pub fn from_parts(merges: MergeTable, src_vocab: Vocabulary, tgt_vocab: Vocabulary, params: ModelParams) -> Self {
        let render = TokenRender::from_vocabulary(&tgt_vocab);
        Self {
            merges,
            src_vocab,
            tgt_vocab,
            params,
            render,
        }
    }

    /// Builds a system from `corpus` and trains it, keeping the weights with
    /// the best dev BLEU.
    pub fn train_initial(
        config: &SystemConfig,
        corpus: &[ParallelPair],
        dev: &[ParallelPair],
    ) -> Result<(Self, TrainReport), ModelError> {
        let mut sys = Self::build(corpus, config)?;
        let data: Vec<(Vec<u32>, Vec<u32>)> = corpus
            .iter()
            .filter_map(|p| {
                let s = sys.encode_source(p.source.surface());
                (!s.is_empty()).then(|| (s, sys.encode_target(p.target.surface())))
            })
            .collect();
        let mut init = sys.params.clone();
        init_output_bias(&mut init, &data);
        let (params, report) = {
            let probe = sys.clone();
            let beam = config.dev_beam.max(1);
            fit(init, &data, &config.train, |p| {
                if dev.is_empty() {
                    return 0.0;
                }
                let mut s = probe.clone();
                s.params = p.clone();
                s.bleu(dev, beam).unwrap_or(0.0)
            })?
        };
        sys.params = params;
        Ok((sys, report))
    }

    /// Corpus BLEU of plain translations of `pairs`.
    pub fn bleu(&self, pairs: &[ParallelPair], beam: usize) -> Result<f64, ModelError> {
        let mut hyps = Vec::with_capacity(pairs.len());
        for p in pairs {
            hyps.push(self.translate(p.source.surface(), beam)?.surface);
        }
        let refs: Vec<&str> = pairs.iter().map(|p| p.target.surface()).collect();
        Ok(corpus_bleu(&hyps, &refs).unwrap_or(0.0))
    }

    pub fn encode_source(&self, text: &str) -> Vec<u32> {
        encode_with(&self.src_vocab, &self.merges, text)
    }

    /// Target ids followed by end-of-sequence.
    pub fn encode_target(&self, text: &str) -> Vec<u32> {
        let mut ids = encode_with(&self.tgt_vocab, &self.merges, text);
        ids.push(EOS);
        ids
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ModelParams {
        &mut self.params
    }

    pub fn merges(&self) -> &MergeTable {
        &self.merges
    }

    pub fn source_vocabulary(&self) -> &Vocabulary {
        &self.src_vocab
    }

    pub fn target_vocabulary(&self) -> &Vocabulary {
        &self.tgt_vocab
    }

    pub fn render(&self) -> &TokenRender {
        &self.render
    }

    fn hypothesis(&self, r: SearchResult, src_len: usize) -> Hypothesis {
        let pieces = r
            .tokens
            .iter()
            .map(|&t| self.tgt_vocab.token(t).unwrap_or("<unk>").to_string())
            .collect();
        Hypothesis {
            surface: self.render.render(&r.tokens),
            attention: AttentionMatrix::from_rows(&r.attention, src_len),
            tokens: r.tokens,
            pieces,
            log_score: r.log_score,
        }
    }

    fn source_ids(&self, source: &str, beam: usize) -> Result<Vec<u32>, ModelError> {
        if beam == 0 {
            return Err(ModelError::ZeroBeam);
        }
        let src = self.encode_source(source);
        if src.is_empty() {
            return Err(ModelError::EmptySource);
        }
        Ok(src)
    }

    /// Writes `merges.txt`, `source.vocab`, `target.vocab` and `model.ckpt`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), ModelError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        fs::write(dir.join("merges.txt"), self.merges.to_text())?;
        fs::write(dir.join("source.vocab"), self.src_vocab.to_text())?;
        fs::write(dir.join("target.vocab"), self.tgt_vocab.to_text())?;
        save_checkpoint(&self.params, dir.join("model.ckpt"))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self, ModelError> {
        let dir = dir.as_ref();
        let fmt = |e: &dyn std::fmt::Display| ModelError::Format(e.to_string());
        let merges = MergeTable::from_text(&fs::read_to_string(dir.join("merges.txt"))?).map_err(|e| fmt(&e))?;
        let src_vocab = Vocabulary::from_text(&fs::read_to_string(dir.join("source.vocab"))?).map_err(|e| fmt(&e))?;
        let tgt_vocab = Vocabulary::from_text(&fs::read_to_string(dir.join("target.vocab"))?).map_err(|e| fmt(&e))?;
        let params = load_checkpoint(dir.join("model.ckpt"))?;
        if params.config.src_vocab != src_vocab.len() || params.config.tgt_vocab != tgt_vocab.len() {
            return Err(ModelError::Format("vocabulary sizes do not match the checkpoint".into()));
        }
        Ok(Self::from_parts(merges, src_vocab, tgt_vocab, params))
    }
}

impl TranslationModel for NmtSystem {
    fn translate(&self, source: &str, beam: usize) -> Result<Hypothesis, ModelError> {
        let src = self.source_ids(source, beam)?;
        let r = beam_search(&self.params, &src, beam, self.params.config.max_target_len, &self.render, None)
            .expect("unconstrained search always finishes");
        Ok(self.hypothesis(r, src.len()))
    }

    fn constrained_suffix_search(&self, source: &str, prefix: &Prefix, beam: usize) -> Result<Hypothesis, ModelError> {
        if prefix.text.is_empty() && !prefix.closed {
            return self.translate(source, beam);
        }
        let src = self.source_ids(source, beam)?;
        let unreachable = || ModelError::PrefixUnreachable {
            prefix: prefix.text.clone(),
        };
        // every prefix character must be spellable by some token
        let ids = encode_with(&self.tgt_vocab, &self.merges, &prefix.text);
        if ids.contains(&UNK) {
            return Err(unreachable());
        }
        let c = PrefixConstraint::new(&prefix.text, prefix.closed);
        let cap = length_cap(self.params.config.max_target_len, &c);
        let r = beam_search(&self.params, &src, beam, cap, &self.render, Some(&c)).ok_or_else(unreachable)?;
        Ok(self.hypothesis(r, src.len()))
    }

    fn update(&mut self, source: &str, target: &str, lr: f64) -> Result<f64, ModelError> {
        let src = self.source_ids(source, 1)?;
        let tgt = self.encode_target(target);
        sgd_update(&mut self.params, &src, &tgt, lr)
    }

    fn save_checkpoint(&self, dir: &Path) -> Result<bool, ModelError> {
        self.save(dir)?;
        Ok(true)
    }

    fn source_pieces(&self, source: &str) -> Vec<String> {
        apply_bpe(&self.merges, source)
    }
}
