//! IBM Model 2 word alignment trained with EM.
//!
//! Model 1 iterations (uniform distortion) initialize the lexical table;
//! Model 2 iterations then refine it together with the distortion. The
//! default distortion is the diagonal-favoring form
//! `a(j | i, I, J) ∝ exp(-λ |i/I - j/J|)` whose single tension λ is fitted
//! by backtracking gradient ascent inside the M-step, so every iteration is
//! a generalized EM step and the training log-likelihood never decreases.
//! Alignment to the empty word has fixed prior mass `null_prob`.
//!
//! Both sides are lowercased. Persisted models use a tab-separated text
//! format:
//!
//! ```text
//! #ibm2 v1
//! null    <0|1>   <p0>
//! distortion  uniform | diagonal <lambda> | table
//! src     <word>                  (source ids 1.., id 0 is the empty word)
//! tgt     <word>                  (target ids 0..)
//! t       <src id> <tgt id> <prob>
//! a       <I> <J> <i> <j> <prob>  (table distortion only)
//! ```

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::ParallelPair;

/// Probability returned for pairs absent from the lexical table.
pub const FLOOR_PROB: f64 = 1e-10;
const HEADER: &str = "#ibm2 v1";
const NULL_ID: u32 = 0;

#[derive(Debug, Error)]
pub enum AlignError {
    #[error("cannot train an alignment model on an empty corpus")]
    EmptyCorpus,
    #[error("malformed alignment model file, line {line}: {reason}")]
    Malformed { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DistortionKind {
    #[default]
    Diagonal,
    /// Classic Model 2 with a dense position table per length pair.
    Table,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct AlignerConfig {
    pub m1_iters: usize,
    pub m2_iters: usize,
    pub use_null: bool,
    pub null_prob: f64,
    pub distortion: DistortionKind,
}

impl Default for AlignerConfig {
    fn default() -> Self {
        Self {
            m1_iters: 5,
            m2_iters: 5,
            use_null: true,
            null_prob: 0.08,
            distortion: DistortionKind::Diagonal,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Distortion {
    Uniform,
    Diagonal { lambda: f64 },
    /// (I, J) -> row-major I x J weights over source positions 1..=J.
    Table(HashMap<(usize, usize), Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentModel {
    src_index: HashMap<String, u32>,
    src_words: Vec<String>,
    tgt_index: HashMap<String, u32>,
    tgt_words: Vec<String>,
    /// lexical[x][y] = t(y | x); row 0 is the empty word.
    lexical: Vec<HashMap<u32, f64>>,
    distortion: Distortion,
    use_null: bool,
    null_prob: f64,
}

/// Word-id view of the training data.
struct IdCorpus {
    pairs: Vec<(Vec<u32>, Vec<u32>)>,
}

/// Per (I, J) expected alignment counts over target i and source j >= 1.
type PositionCounts = BTreeMap<(usize, usize), Vec<f64>>;

fn diag_weights(i: usize, big_i: usize, big_j: usize, lambda: f64, out: &mut Vec<f64>) {
    out.clear();
    let ti = i as f64 / big_i as f64;
    let mut z = 0.0;
    for j in 1..=big_j {
        let w = (-lambda * (ti - j as f64 / big_j as f64).abs()).exp();
        z += w;
        out.push(w);
    }
    for w in out.iter_mut() {
        *w /= z;
    }
}

impl AlignmentModel {
    fn src_id(&self, word: &str) -> Option<u32> {
        self.src_index.get(&word.to_lowercase()).copied()
    }

    fn tgt_id(&self, word: &str) -> Option<u32> {
        self.tgt_index.get(&word.to_lowercase()).copied()
    }

    /// Fills `out` with a(j | i, I, J) for j = 0..=J (entry 0 is the empty
    /// word, zero when disabled). `i` is 1-based.
    fn alignment_probs(&self, i: usize, big_i: usize, big_j: usize, out: &mut Vec<f64>) {
        let (p0, rest) = if self.use_null {
            (self.null_prob, 1.0 - self.null_prob)
        } else {
            (0.0, 1.0)
        };
        let mut pos = Vec::with_capacity(big_j);
        match &self.distortion {
            Distortion::Uniform => pos.resize(big_j, 1.0 / big_j as f64),
            Distortion::Diagonal { lambda } => diag_weights(i, big_i, big_j, *lambda, &mut pos),
            Distortion::Table(table) => match table.get(&(big_i, big_j)) {
                Some(rows) => pos.extend_from_slice(&rows[(i - 1) * big_j..i * big_j]),
                None => pos.resize(big_j, 1.0 / big_j as f64),
            },
        }
        out.clear();
        out.push(p0);
        out.extend(pos.into_iter().map(|p| p * rest));
    }

    fn lex(&self, x: u32, y: u32) -> f64 {
        self.lexical
            .get(x as usize)
            .and_then(|row| row.get(&y))
            .copied()
            .unwrap_or(0.0)
    }

    /// One E-step over the corpus: returns log-likelihood, lexical expected
    /// counts and position counts.
    fn expectation(&self, corpus: &IdCorpus) -> (f64, Vec<HashMap<u32, f64>>, PositionCounts) {
        let mut counts: Vec<HashMap<u32, f64>> = self
            .lexical
            .iter()
            .map(|row| row.keys().map(|&k| (k, 0.0)).collect())
            .collect();
        let mut positions: PositionCounts = BTreeMap::new();
        let mut ll = 0.0;
        let mut a = Vec::new();
        let mut w = Vec::new();
        for (src, tgt) in &corpus.pairs {
            let (big_i, big_j) = (tgt.len(), src.len());
            let pos = positions
                .entry((big_i, big_j))
                .or_insert_with(|| vec![0.0; big_i * big_j]);
            for (i0, &y) in tgt.iter().enumerate() {
                self.alignment_probs(i0 + 1, big_i, big_j, &mut a);
                w.clear();
                w.push(if self.use_null { a[0] * self.lex(NULL_ID, y) } else { 0.0 });
                for (j0, &x) in src.iter().enumerate() {
                    w.push(a[j0 + 1] * self.lex(x, y));
                }
                let total: f64 = w.iter().sum();
                ll += total.ln();
                if self.use_null {
                    *counts[NULL_ID as usize].entry(y).or_insert(0.0) += w[0] / total;
                }
                for (j0, &x) in src.iter().enumerate() {
                    let post = w[j0 + 1] / total;
                    *counts[x as usize].entry(y).or_insert(0.0) += post;
                    pos[i0 * big_j + j0] += post;
                }
            }
        }
        (ll, counts, positions)
    }

    fn log_likelihood(&self, corpus: &IdCorpus) -> f64 {
        self.expectation(corpus).0
    }

    fn maximize_lexical(&mut self, counts: Vec<HashMap<u32, f64>>) {
        for (row, new) in self.lexical.iter_mut().zip(counts) {
            let total: f64 = new.values().sum();
            if total > 0.0 {
                *row = new.into_iter().map(|(y, c)| (y, c / total)).collect();
            }
        }
    }

    fn maximize_distortion(&mut self, positions: &PositionCounts) {
        match &mut self.distortion {
            Distortion::Uniform => {}
            Distortion::Diagonal { lambda } => *lambda = fit_lambda(*lambda, positions),
            Distortion::Table(table) => {
                for (&(big_i, big_j), counts) in positions {
                    let rows = table
                        .entry((big_i, big_j))
                        .or_insert_with(|| vec![1.0 / big_j as f64; big_i * big_j]);
                    for i in 0..big_i {
                        let row = &counts[i * big_j..(i + 1) * big_j];
                        let total: f64 = row.iter().sum();
                        if total > 0.0 {
                            for j in 0..big_j {
                                rows[i * big_j + j] = row[j] / total;
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn lambda(&self) -> Option<f64> {
        match self.distortion {
            Distortion::Diagonal { lambda } => Some(lambda),
            _ => None,
        }
    }

    pub fn source_vocabulary(&self) -> impl Iterator<Item = &str> {
        self.src_words.iter().skip(1).map(String::as_str)
    }

    pub fn target_vocabulary(&self) -> impl Iterator<Item = &str> {
        self.tgt_words.iter().map(String::as_str)
    }

    /// Sum of the stored lexical row for `x` (`None` = empty word).
    pub fn row_mass(&self, x: Option<&str>) -> f64 {
        let id = match x {
            None => Some(NULL_ID),
            Some(w) => self.src_id(w),
        };
        id.and_then(|id| self.lexical.get(id as usize))
            .map(|row| row.values().sum())
            .unwrap_or(0.0)
    }

    pub fn to_text(&self) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        writeln!(out, "{HEADER}").unwrap();
        writeln!(out, "null\t{}\t{}", u8::from(self.use_null), self.null_prob).unwrap();
        match &self.distortion {
            Distortion::Uniform => writeln!(out, "distortion\tuniform").unwrap(),
            Distortion::Diagonal { lambda } => writeln!(out, "distortion\tdiagonal\t{lambda}").unwrap(),
            Distortion::Table(_) => writeln!(out, "distortion\ttable").unwrap(),
        }
        for w in self.src_words.iter().skip(1) {
            writeln!(out, "src\t{w}").unwrap();
        }
        for w in &self.tgt_words {
            writeln!(out, "tgt\t{w}").unwrap();
        }
        for (x, row) in self.lexical.iter().enumerate() {
            let mut entries: Vec<_> = row.iter().collect();
            entries.sort_by_key(|(y, _)| **y);
            for (y, p) in entries {
                writeln!(out, "t\t{x}\t{y}\t{p}").unwrap();
            }
        }
        if let Distortion::Table(table) = &self.distortion {
            let mut keys: Vec<_> = table.keys().collect();
            keys.sort();
            for &(big_i, big_j) in keys {
                let rows = &table[&(big_i, big_j)];
                for i in 0..big_i {
                    for j in 0..big_j {
                        writeln!(out, "a\t{big_i}\t{big_j}\t{}\t{}\t{}", i + 1, j + 1, rows[i * big_j + j])
                            .unwrap();
                    }
                }
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, AlignError> {
        let bad = |line: usize, reason: &str| AlignError::Malformed {
            line,
            reason: reason.to_string(),
        };
        let mut lines = text.lines().enumerate().map(|(n, l)| (n + 1, l));
        match lines.next() {
            Some((_, HEADER)) => {}
            _ => return Err(bad(1, "missing header")),
        }
        let mut model = AlignmentModel {
            src_index: HashMap::from([(String::new(), NULL_ID)]),
            src_words: vec![String::new()],
            tgt_index: HashMap::new(),
            tgt_words: Vec::new(),
            lexical: vec![HashMap::new()],
            distortion: Distortion::Uniform,
            use_null: true,
            null_prob: 0.08,
        };
        model.src_index.clear();
        let mut table: HashMap<(usize, usize), Vec<f64>> = HashMap::new();
        let mut is_table = false;
        for (n, line) in lines {
            let f: Vec<&str> = line.split('\t').collect();
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad(n, "bad number"));
            let int = |s: &str| s.parse::<usize>().map_err(|_| bad(n, "bad integer"));
            match f.as_slice() {
                ["null", flag, p0] => {
                    model.use_null = *flag == "1";
                    model.null_prob = num(p0)?;
                }
                ["distortion", "uniform"] => model.distortion = Distortion::Uniform,
                ["distortion", "diagonal", l] => model.distortion = Distortion::Diagonal { lambda: num(l)? },
                ["distortion", "table"] => is_table = true,
                ["src", w] => {
                    model.src_index.insert(w.to_string(), model.src_words.len() as u32);
                    model.src_words.push(w.to_string());
                    model.lexical.push(HashMap::new());
                }
                ["tgt", w] => {
                    model.tgt_index.insert(w.to_string(), model.tgt_words.len() as u32);
                    model.tgt_words.push(w.to_string());
                }
                ["t", x, y, p] => {
                    let x = int(x)?;
                    let y = int(y)?;
                    if x >= model.lexical.len() || y >= model.tgt_words.len() {
                        return Err(bad(n, "word id out of range"));
                    }
                    model.lexical[x].insert(y as u32, num(p)?);
                }
                ["a", bi, bj, i, j, p] => {
                    let (bi, bj, i, j) = (int(bi)?, int(bj)?, int(i)?, int(j)?);
                    if i == 0 || j == 0 || i > bi || j > bj {
                        return Err(bad(n, "position out of range"));
                    }
                    let rows = table.entry((bi, bj)).or_insert_with(|| vec![0.0; bi * bj]);
                    rows[(i - 1) * bj + (j - 1)] = num(p)?;
                }
                _ => return Err(bad(n, "unrecognized record")),
            }
        }
        if is_table {
            model.distortion = Distortion::Table(table);
        }
        Ok(model)
    }
}

/// Maximizes the distortion part of the EM auxiliary function over λ with
/// backtracking gradient ascent; never returns a λ with lower objective.
fn fit_lambda(start: f64, positions: &PositionCounts) -> f64 {
    let objective = |lambda: f64| -> (f64, f64) {
        let mut q = 0.0;
        let mut grad = 0.0;
        let mut w = Vec::new();
        for (&(big_i, big_j), counts) in positions {
            for i in 1..=big_i {
                let row = &counts[(i - 1) * big_j..i * big_j];
                let mass: f64 = row.iter().sum();
                if mass == 0.0 {
                    continue;
                }
                diag_weights(i, big_i, big_j, lambda, &mut w);
                let ti = i as f64 / big_i as f64;
                let mut mean_d = 0.0;
                for j in 1..=big_j {
                    mean_d += w[j - 1] * (ti - j as f64 / big_j as f64).abs();
                }
                for j in 1..=big_j {
                    let c = row[j - 1];
                    if c > 0.0 {
                        q += c * w[j - 1].ln();
                        grad += c * (mean_d - (ti - j as f64 / big_j as f64).abs());
                    }
                }
            }
        }
        (q, grad)
    };
    let mass: f64 = positions.values().flat_map(|v| v.iter()).sum();
    if mass == 0.0 {
        return start;
    }
    let mut lambda = start;
    let (mut q, mut grad) = objective(lambda);
    let mut step = 4.0;
    for _ in 0..16 {
        let mut accepted = false;
        while step > 1e-8 {
            let cand = (lambda + step * grad / mass).clamp(0.0, 100.0);
            let (qc, gc) = objective(cand);
            if qc >= q && cand != lambda {
                lambda = cand;
                q = qc;
                grad = gc;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted || grad.abs() / mass < 1e-9 {
            break;
        }
        step *= 2.0;
    }
    lambda
}

/// Lowercased word-id corpus plus an untrained model whose lexical rows are
/// uniform over co-occurring words.
fn initialize(corpus: &[ParallelPair], config: &AlignerConfig) -> (AlignmentModel, IdCorpus) {
    let mut src_index: HashMap<String, u32> = HashMap::from([(String::new(), NULL_ID)]);
    let mut src_words = vec![String::new()];
    let mut tgt_index: HashMap<String, u32> = HashMap::new();
    let mut tgt_words = Vec::new();
    let mut pairs = Vec::with_capacity(corpus.len());
    for pair in corpus {
        let src: Vec<u32> = pair
            .source
            .surface()
            .split_whitespace()
            .map(|w| {
                let w = w.to_lowercase();
                let next = src_words.len() as u32;
                *src_index.entry(w.clone()).or_insert_with(|| {
                    src_words.push(w);
                    next
                })
            })
            .collect();
        let tgt: Vec<u32> = pair
            .target
            .surface()
            .split_whitespace()
            .map(|w| {
                let w = w.to_lowercase();
                let next = tgt_words.len() as u32;
                *tgt_index.entry(w.clone()).or_insert_with(|| {
                    tgt_words.push(w);
                    next
                })
            })
            .collect();
        pairs.push((src, tgt));
    }
    let mut lexical: Vec<HashMap<u32, f64>> = vec![HashMap::new(); src_words.len()];
    for (src, tgt) in &pairs {
        for &y in tgt {
            if config.use_null {
                lexical[NULL_ID as usize].insert(y, 0.0);
            }
            for &x in src {
                lexical[x as usize].insert(y, 0.0);
            }
        }
    }
    for row in &mut lexical {
        let n = row.len() as f64;
        for v in row.values_mut() {
            *v = 1.0 / n;
        }
    }
    src_index.remove("");
    let model = AlignmentModel {
        src_index,
        src_words,
        tgt_index,
        tgt_words,
        lexical,
        distortion: Distortion::Uniform,
        use_null: config.use_null,
        null_prob: config.null_prob,
    };
    (model, IdCorpus { pairs })
}

#[derive(Debug, Clone)]
pub struct AlignmentTraining {
    pub model: AlignmentModel,
    /// Log-likelihood before training and after every EM iteration.
    pub log_likelihood: Vec<f64>,
}

/// Trains lexical and distortion parameters with `m1_iters` Model 1 and then
/// `m2_iters` Model 2 EM iterations.
pub fn train_alignment(corpus: &[ParallelPair], config: &AlignerConfig) -> Result<AlignmentTraining, AlignError> {
    if corpus.is_empty() {
        return Err(AlignError::EmptyCorpus);
    }
    let (mut model, ids) = initialize(corpus, config);
    let mut history = Vec::with_capacity(config.m1_iters + config.m2_iters + 1);
    for iter in 0..config.m1_iters + config.m2_iters {
        if iter == config.m1_iters {
            // both start identical to the uniform distortion
            model.distortion = match config.distortion {
                DistortionKind::Diagonal => Distortion::Diagonal { lambda: 0.0 },
                DistortionKind::Table => Distortion::Table(HashMap::new()),
            };
        }
        let (ll, counts, positions) = model.expectation(&ids);
        history.push(ll);
        model.maximize_lexical(counts);
        model.maximize_distortion(&positions);
        log::debug!("alignment EM iteration {}: log-likelihood {ll:.6}", iter + 1);
    }
    history.push(model.log_likelihood(&ids));
    Ok(AlignmentTraining {
        model,
        log_likelihood: history,
    })
}

/// t(y | x); `x = None` is the empty word. Unseen pairs get [`FLOOR_PROB`].
pub fn lexical_prob(model: &AlignmentModel, y: &str, x: Option<&str>) -> f64 {
    let x_id = match x {
        None if model.use_null => Some(NULL_ID),
        None => None,
        Some(w) => model.src_id(w),
    };
    match (x_id, model.tgt_id(y)) {
        (Some(x), Some(y)) => {
            let p = model.lex(x, y);
            if p > 0.0 {
                p
            } else {
                FLOOR_PROB
            }
        }
        _ => FLOOR_PROB,
    }
}

/// Word confidence: the largest t(y | x_j) over the source words and the
/// empty word.
pub fn word_confidence<S: AsRef<str>>(model: &AlignmentModel, source: &[S], y: &str) -> f64 {
    source
        .iter()
        .map(|x| lexical_prob(model, y, Some(x.as_ref())))
        .fold(lexical_prob(model, y, None), f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pairs(raw: &[(&str, &str)]) -> Vec<ParallelPair> {
        raw.iter().map(|(s, t)| ParallelPair::new(s, t).unwrap()).collect()
    }

    fn model1_only(iters: usize, use_null: bool) -> AlignerConfig {
        AlignerConfig {
            m1_iters: iters,
            m2_iters: 0,
            use_null,
            ..Default::default()
        }
    }

    #[test]
    fn classic_two_pair_corpus() {
        let corpus = pairs(&[("a b", "x y"), ("a", "x")]);
        let trained = train_alignment(&corpus, &model1_only(10, false)).unwrap();
        let m = &trained.model;
        assert!(lexical_prob(m, "x", Some("a")) > 0.9);
        assert!(lexical_prob(m, "y", Some("b")) > 0.9);
    }

    #[test]
    fn no_iterations_gives_uniform_cooccurrence_rows() {
        let corpus = pairs(&[("a b", "x y"), ("a", "x z")]);
        let m = train_alignment(&corpus, &model1_only(0, false)).unwrap().model;
        // a co-occurs with x, y, z; b with x, y
        assert_eq!(lexical_prob(&m, "z", Some("a")), 1.0 / 3.0);
        assert_eq!(lexical_prob(&m, "x", Some("b")), 0.5);
        assert_eq!(lexical_prob(&m, "z", Some("b")), FLOOR_PROB);
    }

    #[test]
    fn unseen_words_get_the_floor() {
        let corpus = pairs(&[("a b", "x y")]);
        let m = train_alignment(&corpus, &AlignerConfig::default()).unwrap().model;
        assert_eq!(lexical_prob(&m, "nope", Some("a")), FLOOR_PROB);
        assert_eq!(lexical_prob(&m, "x", Some("nope")), FLOOR_PROB);
        assert_eq!(word_confidence(&m, &["q", "r"], "s"), FLOOR_PROB);
    }

    #[test]
    fn queries_are_case_insensitive() {
        let corpus = pairs(&[("The cat", "Le chat"), ("the", "le")]);
        let m = train_alignment(&corpus, &model1_only(5, true)).unwrap().model;
        assert_eq!(
            lexical_prob(&m, "LE", Some("tHe")),
            lexical_prob(&m, "le", Some("the"))
        );
    }

    #[test]
    fn empty_corpus_rejected() {
        assert!(matches!(
            train_alignment(&[], &AlignerConfig::default()),
            Err(AlignError::EmptyCorpus)
        ));
    }

    /// Model with hand-set rows for confidence tests.
    fn handmade(rows: &[(Option<&str>, &str, f64)]) -> AlignmentModel {
        let text = {
            let mut src: Vec<&str> = Vec::new();
            let mut tgt: Vec<&str> = Vec::new();
            for (x, y, _) in rows {
                if let Some(x) = x {
                    if !src.contains(x) {
                        src.push(x);
                    }
                }
                if !tgt.contains(y) {
                    tgt.push(y);
                }
            }
            let mut s = format!("{HEADER}\nnull\t1\t0.08\ndistortion\tuniform\n");
            for w in &src {
                s.push_str(&format!("src\t{w}\n"));
            }
            for w in &tgt {
                s.push_str(&format!("tgt\t{w}\n"));
            }
            for (x, y, p) in rows {
                let xi = x.map(|x| src.iter().position(|w| *w == x).unwrap() + 1).unwrap_or(0);
                let yi = tgt.iter().position(|w| w == y).unwrap();
                s.push_str(&format!("t\t{xi}\t{yi}\t{p}\n"));
            }
            s
        };
        AlignmentModel::from_text(&text).unwrap()
    }

    #[test]
    fn word_confidence_takes_row_max() {
        let m = handmade(&[
            (None, "y", 0.05),
            (Some("x1"), "y", 0.2),
            (Some("x2"), "y", 0.7),
            (Some("x3"), "y", 0.1),
        ]);
        assert_eq!(word_confidence(&m, &["x1", "x2", "x3"], "y"), 0.7);
        assert_eq!(word_confidence(&m, &["x3", "x1", "x2"], "y"), 0.7);
    }

    #[test]
    fn empty_word_participates_in_max() {
        let m = handmade(&[(None, "y", 0.9), (Some("x1"), "y", 0.3), (Some("x2"), "y", 0.1)]);
        assert_eq!(word_confidence(&m, &["x1", "x2"], "y"), 0.9);
    }

    fn random_corpus(rng: &mut ChaCha8Rng) -> Vec<ParallelPair> {
        let n = rng.random_range(3..25);
        let src_v = rng.random_range(2..8);
        let tgt_v = rng.random_range(2..8);
        (0..n)
            .map(|_| {
                let ls = rng.random_range(1..6);
                let lt = rng.random_range(1..6);
                let s: Vec<String> = (0..ls).map(|_| format!("s{}", rng.random_range(0..src_v))).collect();
                let t: Vec<String> = (0..lt).map(|_| format!("t{}", rng.random_range(0..tgt_v))).collect();
                ParallelPair::new(&s.join(" "), &t.join(" ")).unwrap()
            })
            .collect()
    }

    fn assert_monotone(history: &[f64]) {
        for w in history.windows(2) {
            assert!(w[1] >= w[0] - 1e-9, "log-likelihood dropped: {history:?}");
        }
    }

    #[test]
    fn em_is_monotone_for_both_distortions() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10 {
            let corpus = random_corpus(&mut rng);
            for distortion in [DistortionKind::Diagonal, DistortionKind::Table] {
                let config = AlignerConfig {
                    m1_iters: 4,
                    m2_iters: 6,
                    distortion,
                    ..Default::default()
                };
                let trained = train_alignment(&corpus, &config).unwrap();
                assert_eq!(trained.log_likelihood.len(), 11);
                assert_monotone(&trained.log_likelihood);
            }
        }
    }

    /// Dense Model 1 EM written out directly over word strings.
    fn dense_model1(corpus: &[ParallelPair], iters: usize, p0: f64) -> HashMap<(String, String), f64> {
        let mut t: HashMap<(String, String), f64> = HashMap::new();
        let mut cooc: HashMap<String, Vec<String>> = HashMap::new();
        for p in corpus {
            let mut src: Vec<String> = p.source.words().map(str::to_string).collect();
            src.push("<null>".into());
            for x in &src {
                for y in p.target.words() {
                    let e = cooc.entry(x.clone()).or_default();
                    if !e.iter().any(|w| w == y) {
                        e.push(y.to_string());
                    }
                }
            }
        }
        for (x, ys) in &cooc {
            for y in ys {
                t.insert((x.clone(), y.clone()), 1.0 / ys.len() as f64);
            }
        }
        for _ in 0..iters {
            let mut c: HashMap<(String, String), f64> = HashMap::new();
            let mut tot: HashMap<String, f64> = HashMap::new();
            for p in corpus {
                let src: Vec<&str> = p.source.words().collect();
                let big_j = src.len() as f64;
                for y in p.target.words() {
                    let mut cands: Vec<(&str, f64)> = vec![("<null>", p0)];
                    cands.extend(src.iter().map(|x| (*x, (1.0 - p0) / big_j)));
                    let z: f64 = cands.iter().map(|(x, a)| a * t[&(x.to_string(), y.to_string())]).sum();
                    for (x, a) in cands {
                        let post = a * t[&(x.to_string(), y.to_string())] / z;
                        *c.entry((x.to_string(), y.to_string())).or_default() += post;
                        *tot.entry(x.to_string()).or_default() += post;
                    }
                }
            }
            for ((x, y), v) in t.iter_mut() {
                *v = c[&(x.clone(), y.clone())] / tot[x];
            }
        }
        t
    }

    #[test]
    fn model1_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let corpus = random_corpus(&mut rng);
            let oracle = dense_model1(&corpus, 6, 0.08);
            let m = train_alignment(&corpus, &model1_only(6, true)).unwrap().model;
            for ((x, y), p) in &oracle {
                let x = if x == "<null>" { None } else { Some(x.as_str()) };
                let got = lexical_prob(&m, y, x);
                assert!((got - p).abs() < 1e-12, "t({y}|{x:?}) = {got} vs {p}");
            }
        }
    }

    #[test]
    fn rows_are_normalized() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let corpus = random_corpus(&mut rng);
        let m = train_alignment(&corpus, &AlignerConfig::default()).unwrap().model;
        assert!((m.row_mass(None) - 1.0).abs() < 1e-9);
        for x in m.source_vocabulary() {
            assert!((m.row_mass(Some(x)) - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn text_roundtrip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let corpus = random_corpus(&mut rng);
        for distortion in [DistortionKind::Diagonal, DistortionKind::Table] {
            let config = AlignerConfig {
                distortion,
                ..Default::default()
            };
            let m = train_alignment(&corpus, &config).unwrap().model;
            let back = AlignmentModel::from_text(&m.to_text()).unwrap();
            assert_eq!(back, m);
        }
        assert!(AlignmentModel::from_text("garbage").is_err());
    }
}
