//! Sentences, parallel corpora, vocabularies and block-wise stream reading.
//!
//! Surfaces are whitespace-normalized on construction (runs of whitespace
//! collapse to one space, no leading or trailing space). All effort
//! accounting downstream counts Unicode scalar values of these surfaces.

use std::collections::HashMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("empty sentence")]
    EmptySentence,
    #[error("cannot read {path}: {source}")]
    Open { path: PathBuf, source: io::Error },
    #[error("stream read failed at position {position}: {source}")]
    Read { position: usize, source: io::Error },
    #[error("line count mismatch: {source_lines} source lines vs {target_lines} target lines")]
    LineCountMismatch {
        source_lines: usize,
        target_lines: usize,
    },
    #[error("block size must be at least 1")]
    ZeroBlockSize,
    #[error("malformed vocabulary file: {0}")]
    MalformedVocabulary(String),
}

/// Collapses whitespace runs to single spaces and trims both ends.
pub fn normalize_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    surface: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tokens: Option<Vec<u32>>,
}

impl Sentence {
    pub fn new(surface: &str) -> Result<Self, CorpusError> {
        let surface = normalize_whitespace(surface);
        if surface.is_empty() {
            return Err(CorpusError::EmptySentence);
        }
        Ok(Self {
            surface,
            tokens: None,
        })
    }

    pub fn surface(&self) -> &str {
        &self.surface
    }

    pub fn tokens(&self) -> Option<&[u32]> {
        self.tokens.as_deref()
    }

    pub fn with_tokens(mut self, tokens: Vec<u32>) -> Self {
        self.tokens = Some(tokens);
        self
    }

    /// Number of Unicode scalar values in the surface.
    pub fn char_len(&self) -> usize {
        self.surface.chars().count()
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.surface.split(' ')
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParallelPair {
    pub source: Sentence,
    pub target: Sentence,
}

impl ParallelPair {
    pub fn new(source: &str, target: &str) -> Result<Self, CorpusError> {
        Ok(Self {
            source: Sentence::new(source)?,
            target: Sentence::new(target)?,
        })
    }
}

/// Result of reading a line-aligned corpus.
#[derive(Debug, Clone)]
pub struct LoadedCorpus {
    pub pairs: Vec<ParallelPair>,
    /// 1-based line numbers dropped because one side was empty.
    pub skipped_lines: Vec<usize>,
}

fn read_lines(path: &Path) -> Result<Vec<String>, CorpusError> {
    let open_err = |source| CorpusError::Open {
        path: path.to_path_buf(),
        source,
    };
    let file = File::open(path).map_err(open_err)?;
    BufReader::new(file)
        .lines()
        .enumerate()
        .map(|(position, line)| line.map_err(|source| CorpusError::Read { position, source }))
        .collect()
}

/// Reads two line-aligned files. Pairs with an empty side are skipped and
/// reported; differing line counts are an error.
pub fn load_parallel_corpus(
    source_path: impl AsRef<Path>,
    target_path: impl AsRef<Path>,
) -> Result<LoadedCorpus, CorpusError> {
    let sources = read_lines(source_path.as_ref())?;
    let targets = read_lines(target_path.as_ref())?;
    pair_lines(&sources, &targets)
}

pub fn pair_lines<S: AsRef<str>>(sources: &[S], targets: &[S]) -> Result<LoadedCorpus, CorpusError> {
    if sources.len() != targets.len() {
        return Err(CorpusError::LineCountMismatch {
            source_lines: sources.len(),
            target_lines: targets.len(),
        });
    }
    let mut pairs = Vec::with_capacity(sources.len());
    let mut skipped_lines = Vec::new();
    for (idx, (src, tgt)) in sources.iter().zip(targets).enumerate() {
        match ParallelPair::new(src.as_ref(), tgt.as_ref()) {
            Ok(pair) => pairs.push(pair),
            Err(_) => skipped_lines.push(idx + 1),
        }
    }
    if !skipped_lines.is_empty() {
        log::warn!(
            "skipped {} line pair(s) with an empty side: {:?}",
            skipped_lines.len(),
            skipped_lines
        );
    }
    Ok(LoadedCorpus {
        pairs,
        skipped_lines,
    })
}

type LineIter = Box<dyn Iterator<Item = io::Result<String>> + Send>;

/// Sequential, single-consumer source of sentences.
pub struct StreamSource {
    lines: LineIter,
    position: usize,
    skipped: usize,
}

impl StreamSource {
    pub fn from_sentences(sentences: Vec<Sentence>) -> Self {
        let lines = sentences.into_iter().map(|s| Ok(s.surface));
        Self::from_lines(Box::new(lines))
    }

    pub fn from_strings<I>(lines: I) -> Self
    where
        I: IntoIterator<Item = String>,
        I::IntoIter: Send + 'static,
    {
        Self::from_lines(Box::new(lines.into_iter().map(Ok)))
    }

    pub fn open(path: impl AsRef<Path>) -> Result<Self, CorpusError> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|source| CorpusError::Open {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(Self::from_lines(Box::new(BufReader::new(file).lines())))
    }

    pub fn from_lines(lines: LineIter) -> Self {
        Self {
            lines,
            position: 0,
            skipped: 0,
        }
    }

    /// Count of sentences already emitted.
    pub fn position(&self) -> usize {
        self.position
    }

    /// Blank lines dropped so far; they do not advance `position`.
    pub fn skipped(&self) -> usize {
        self.skipped
    }

    fn next_sentence(&mut self) -> Result<Option<Sentence>, CorpusError> {
        loop {
            match self.lines.next() {
                None => return Ok(None),
                Some(Err(source)) => {
                    return Err(CorpusError::Read {
                        position: self.position,
                        source,
                    })
                }
                Some(Ok(line)) => match Sentence::new(&line) {
                    Ok(sentence) => {
                        self.position += 1;
                        return Ok(Some(sentence));
                    }
                    Err(_) => {
                        self.skipped += 1;
                        log::warn!("skipping blank stream line after position {}", self.position);
                    }
                },
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub sentences: Vec<Sentence>,
    pub stream_offset: usize,
}

impl Block {
    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }
}

/// Next block of up to `block_size` consecutive sentences, or `None` at end of
/// stream. A short final block is returned as is.
pub fn get_block_from_stream(
    stream: &mut StreamSource,
    block_size: usize,
) -> Result<Option<Block>, CorpusError> {
    if block_size == 0 {
        return Err(CorpusError::ZeroBlockSize);
    }
    let stream_offset = stream.position();
    let mut sentences = Vec::with_capacity(block_size.min(4096));
    while sentences.len() < block_size {
        match stream.next_sentence()? {
            Some(s) => sentences.push(s),
            None => break,
        }
    }
    if sentences.is_empty() {
        Ok(None)
    } else {
        Ok(Some(Block {
            sentences,
            stream_offset,
        }))
    }
}

pub const BOS: u32 = 0;
pub const EOS: u32 = 1;
pub const UNK: u32 = 2;
const RESERVED: [&str; 3] = ["<s>", "</s>", "<unk>"];
const VOCAB_HEADER: &str = "#vocab v1";

/// Bijective token-string / id map with reserved `<s>`, `</s>` and `<unk>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocabulary {
    pub fn new() -> Self {
        let mut v = Self {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for r in RESERVED {
            v.insert(r);
        }
        v
    }

    /// Builds a vocabulary; duplicates and reserved names are ignored.
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut v = Self::new();
        for t in tokens {
            v.insert(t.as_ref());
        }
        v
    }

    /// Returns the id of `token`, assigning a fresh one if needed.
    pub fn insert(&mut self, token: &str) -> u32 {
        if let Some(&id) = self.index.get(token) {
            return id;
        }
        let id = self.tokens.len() as u32;
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), id);
        id
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn id_or_unk(&self, token: &str) -> u32 {
        self.id(token).unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn is_reserved(id: u32) -> bool {
        (id as usize) < RESERVED.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, &str)> {
        self.tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (i as u32, t.as_str()))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from(VOCAB_HEADER);
        out.push('\n');
        for t in &self.tokens[RESERVED.len()..] {
            out.push_str(t);
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, CorpusError> {
        let mut lines = text.lines();
        if lines.next() != Some(VOCAB_HEADER) {
            return Err(CorpusError::MalformedVocabulary("missing header".into()));
        }
        let mut v = Self::new();
        for (n, line) in lines.enumerate() {
            if line.is_empty() || v.id(line).is_some() {
                return Err(CorpusError::MalformedVocabulary(format!(
                    "line {}: empty or duplicate token",
                    n + 2
                )));
            }
            v.insert(line);
        }
        Ok(v)
    }
}
