//! Toy parallel data: a copy task and a small two-language grammar with a
//! controllable vocabulary shift.
//!
//! Grammar sentences have the shape `DET NOUN [ADJ] VERB DET NOUN [ADJ] .`
//! on the source side; the target places adjectives before their noun.
//! Every source word has one fixed, unrelated target word. Nouns come from
//! a common set and a shift set; `shift_rate` is the chance that any noun
//! is drawn from the shift set, so a small rate for training data and a
//! large one for the stream produces a domain change.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::ParallelPair;

const ONSETS: [&str; 14] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"];
const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];

#[derive(Debug, Clone)]
struct Entry {
    source: String,
    target: String,
}

#[derive(Debug, Clone)]
pub struct ToyGrammar {
    determiners: Vec<Entry>,
    common_nouns: Vec<Entry>,
    shift_nouns: Vec<Entry>,
    adjectives: Vec<Entry>,
    verbs: Vec<Entry>,
}

fn pseudo_word(rng: &mut ChaCha8Rng, syllables: usize, taken: &mut std::collections::HashSet<String>) -> String {
    loop {
        let mut w = String::new();
        for _ in 0..syllables {
            w.push_str(ONSETS.choose(rng).unwrap());
            w.push_str(VOWELS.choose(rng).unwrap());
        }
        if taken.insert(w.clone()) {
            return w;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrammarSizes {
    pub determiners: usize,
    pub common_nouns: usize,
    pub shift_nouns: usize,
    pub adjectives: usize,
    pub verbs: usize,
}

impl Default for GrammarSizes {
    fn default() -> Self {
        Self {
            determiners: 3,
            common_nouns: 12,
            shift_nouns: 12,
            adjectives: 6,
            verbs: 8,
        }
    }
}

impl ToyGrammar {
    pub fn new(seed: u64) -> Self {
        Self::with_sizes(seed, GrammarSizes::default())
    }

    pub fn with_sizes(seed: u64, sizes: GrammarSizes) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut src_taken = std::collections::HashSet::new();
        let mut tgt_taken = std::collections::HashSet::new();
        let mut class = |n: usize, syl: usize, rng: &mut ChaCha8Rng| -> Vec<Entry> {
            (0..n)
                .map(|_| Entry {
                    source: pseudo_word(rng, syl, &mut src_taken),
                    target: pseudo_word(rng, syl, &mut tgt_taken).to_uppercase(),
                })
                .collect()
        };
        Self {
            determiners: class(sizes.determiners, 1, &mut rng),
            common_nouns: class(sizes.common_nouns, 2, &mut rng),
            shift_nouns: class(sizes.shift_nouns, 2, &mut rng),
            adjectives: class(sizes.adjectives, 2, &mut rng),
            verbs: class(sizes.verbs, 2, &mut rng),
        }
    }

    /// Source/target word pairs of the whole lexicon.
    pub fn dictionary(&self) -> Vec<(String, String)> {
        [&self.determiners, &self.common_nouns, &self.shift_nouns, &self.adjectives, &self.verbs]
            .into_iter()
            .flatten()
            .map(|e| (e.source.clone(), e.target.clone()))
            .collect()
    }

    pub fn shift_vocabulary(&self) -> impl Iterator<Item = &str> {
        self.shift_nouns.iter().map(|e| e.source.as_str())
    }

    fn phrase<R: Rng>(&self, rng: &mut R, shift_rate: f64, src: &mut Vec<String>, tgt: &mut Vec<String>) {
        let det = self.determiners.choose(rng).unwrap();
        let noun = if rng.random_bool(shift_rate) {
            self.shift_nouns.choose(rng).unwrap()
        } else {
            self.common_nouns.choose(rng).unwrap()
        };
        src.push(det.source.clone());
        tgt.push(det.target.clone());
        if rng.random_bool(0.5) {
            let adj = self.adjectives.choose(rng).unwrap();
            src.push(noun.source.clone());
            src.push(adj.source.clone());
            tgt.push(adj.target.clone());
            tgt.push(noun.target.clone());
        } else {
            src.push(noun.source.clone());
            tgt.push(noun.target.clone());
        }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R, shift_rate: f64) -> (String, String) {
        let mut src = Vec::new();
        let mut tgt = Vec::new();
        self.phrase(rng, shift_rate, &mut src, &mut tgt);
        let verb = self.verbs.choose(rng).unwrap();
        src.push(verb.source.clone());
        tgt.push(verb.target.clone());
        self.phrase(rng, shift_rate, &mut src, &mut tgt);
        src.push(".".into());
        tgt.push(".".into());
        (src.join(" "), tgt.join(" "))
    }

    pub fn corpus(&self, n: usize, shift_rate: f64, seed: u64) -> Vec<ParallelPair> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let (s, t) = self.sample(&mut rng, shift_rate);
                ParallelPair::new(&s, &t).expect("generated sentences are non-empty")
            })
            .collect()
    }
}

/// Identity pairs over a list of 20 random words; the list depends on
/// `seed`, so held-out pairs must come from the same call.
pub fn copy_corpus(n: usize, seed: u64) -> Vec<ParallelPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let words: Vec<String> = {
        let mut taken = std::collections::HashSet::new();
        (0..20).map(|_| pseudo_word(&mut rng, 1, &mut taken)).collect()
    };
    (0..n)
        .map(|_| {
            let len = rng.random_range(2..=5);
            let s: Vec<&str> = (0..len).map(|_| words.choose(&mut rng).unwrap().as_str()).collect();
            let s = s.join(" ");
            ParallelPair::new(&s, &s).unwrap()
        })
        .collect()
}
