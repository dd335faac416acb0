//! Checks shared by the acceptance report and the integration tests. Each
//! returns `Err` with a reason on failure and `Ok` with a short summary.

#![allow(dead_code)]

use std::time::{Duration, Instant};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use inmt_al::active::{run_al, ALConfig, ExperimentReport, NullSink};
use inmt_al::aligner::{lexical_prob, train_alignment, AlignerConfig, DistortionKind};
use inmt_al::corpus::{ParallelPair, StreamSource, Vocabulary, EOS};
use inmt_al::inmt::{inmt_session, Feedback, SessionConfig, SessionTrace};
use inmt_al::metrics::{corpus_bleu, ksmr, BleuStats, EffortLedger};
use inmt_al::model::network::{loss_and_gradients, sequence_loss};
use inmt_al::model::search::{beam_search, length_cap, PrefixConstraint, TokenRender};
use inmt_al::model::{
    AttentionMatrix, Hypothesis, ModelConfig, ModelError, ModelParams, NmtSystem, Prefix, SystemConfig, TrainConfig,
    TranslationModel,
};
use inmt_al::sampling::{
    coverage_from_sums, kurtosis, qbc_score, qe_from_confidences, score_attention_distraction, Strategy,
};
use inmt_al::subword::{apply_bpe, detokenize, learn_bpe, MergeTable};
use inmt_al::synthetic::ToyGrammar;

pub type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn close(got: f64, want: f64, tol: f64, what: &str) -> Result<(), String> {
    ensure((got - want).abs() <= tol, || format!("{what}: got {got}, want {want} (tol {tol})"))
}

// ---------------------------------------------------------------- formulas

pub const FORMULA_TOL: f64 = 1e-9;
/// The QBC values are printed to four decimals.
pub const QBC_TOL: f64 = 5e-5;

fn moment_kurtosis(row: &[f64]) -> f64 {
    let n = row.len() as f64;
    let mu = 1.0 / n;
    let mut m2 = 0.0;
    let mut m4 = 0.0;
    for a in row {
        let d = a - mu;
        m2 += d * d;
        m4 += d * d * d * d;
    }
    m2 /= n;
    m4 /= n;
    if m2 < 1e-12 {
        0.0
    } else {
        m4 / (m2 * m2)
    }
}

pub fn ads_oracle() -> Check {
    close(kurtosis(&[1.0, 0.0]), 1.0, FORMULA_TOL, "one-hot J=2")?;
    close(kurtosis(&[0.0, 0.0, 1.0, 0.0]), 7.0 / 3.0, FORMULA_TOL, "one-hot J=4")?;
    close(kurtosis(&[0.25; 4]), 0.0, FORMULA_TOL, "uniform row")?;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for k in 0..200 {
        let rows = rng.random_range(1..6);
        let cols = rng.random_range(1..9);
        let data: Vec<Vec<f64>> = (0..rows)
            .map(|_| {
                let raw: Vec<f64> = (0..cols).map(|_| rng.random::<f64>().powi(3)).collect();
                let z: f64 = raw.iter().sum::<f64>().max(1e-300);
                raw.iter().map(|v| v / z).collect()
            })
            .collect();
        let want = -data.iter().map(|r| moment_kurtosis(r)).sum::<f64>() / rows as f64;
        let got = score_attention_distraction(&AttentionMatrix::from_rows(&data, cols));
        close(got, want, FORMULA_TOL * want.abs().max(1.0), &format!("random matrix {k}"))?;
    }
    Ok("kurtosis 1, 7/3, 0 and 200 random rows".into())
}

pub fn coverage_oracle() -> Check {
    close(coverage_from_sums(&[0.5, 1.2]), 0.5 * 2f64.ln(), FORMULA_TOL, "sums (0.5, 1.2)")?;
    close(coverage_from_sums(&[0.5, 1.2]), 0.34657, 5e-6, "printed value")?;
    close(coverage_from_sums(&[1.0, 1.3, 2.0]), 0.0, FORMULA_TOL, "full coverage")?;
    // ln(1e-10) = -23.025850929940457, averaged with ln 1 = 0
    close(coverage_from_sums(&[0.0, 1.0]), 11.512925464970229, FORMULA_TOL, "zero column floor")?;
    Ok("0.34657, 0 and floor 11.5129".into())
}

pub fn qes_oracle() -> Check {
    let q = |c: &[f64]| qe_from_confidences(c, 0.4).map_err(|e| e.to_string());
    close(q(&[0.9, 0.3, 0.5, 0.1])?, 0.5, FORMULA_TOL, "(0.9, 0.3, 0.5, 0.1)")?;
    close(q(&[0.9, 0.8])?, 0.0, FORMULA_TOL, "all confident")?;
    close(q(&[0.1, 0.4])?, 1.0, FORMULA_TOL, "none confident (0.4 is not above the threshold)")?;
    Ok("0.5, 0 and 1".into())
}

pub fn qbc_oracle() -> Check {
    ensure(qbc_score(0, 4) == f64::NEG_INFINITY, || "zero votes must be -inf".into())?;
    let want = [-1.6363, -1.1931, -1.0377, -1.0];
    for (v, w) in (1..=4).zip(want) {
        let share = v as f64 / 4.0;
        close(qbc_score(v, 4), -share + share.ln(), FORMULA_TOL, &format!("{v} votes, formula"))?;
        close(qbc_score(v, 4), w, QBC_TOL, &format!("{v} votes, printed"))?;
    }
    Ok("-inf, -1.6363, -1.1931, -1.0377, -1".into())
}

// ------------------------------------------------------------------ search

const PIECE_POOL: [&str; 6] = ["a", "b", "a</w>", "b</w>", "ab</w>", "ba"];

fn tiny_model(rng: &mut ChaCha8Rng, vocab_len: usize, seed: u64) -> ModelParams {
    let mut c = ModelConfig::new(6, vocab_len).with_dims(rng.random_range(2..5));
    c.init_scale = rng.random_range(0.5..2.0);
    c.seed = seed;
    ModelParams::init(&c)
}

fn sequences(emittable: &[u32], cap: usize) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    let mut frontier = vec![Vec::new()];
    for _ in 0..cap {
        let mut next = Vec::new();
        for s in frontier {
            let mut done: Vec<u32> = s.clone();
            done.push(EOS);
            out.push(done);
            for &t in emittable {
                let mut e = s.clone();
                e.push(t);
                next.push(e);
            }
        }
        frontier = next;
    }
    out
}

fn argmax(p: &ModelParams, src: &[u32], cands: impl Iterator<Item = Vec<u32>>) -> Option<(f64, Vec<u32>)> {
    let mut best: Option<(f64, Vec<u32>)> = None;
    for seq in cands {
        let s = -sequence_loss(p, src, &seq);
        if best.as_ref().is_none_or(|(b, _)| s > *b) {
            best = Some((s, seq));
        }
    }
    best
}

pub const SEARCH_MODELS: usize = 120;
pub const SEARCH_BUDGET: Duration = Duration::from_secs(60);

pub fn search_oracles() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let prefixes = ["a", "b", "ab", "a b", "ba", "ab a", ""];
    let mut constrained = 0;
    for m in 0..SEARCH_MODELS {
        // up to four pieces plus end-of-sequence: |V| <= 5
        let k = rng.random_range(2..=4);
        let pieces: Vec<&str> = PIECE_POOL.choose_multiple(&mut rng, k).copied().collect();
        let vocab = Vocabulary::from_tokens(pieces.iter().copied());
        let render = TokenRender::from_vocabulary(&vocab);
        let emittable: Vec<u32> = (3..vocab.len() as u32).collect();
        let v = emittable.len() + 1;
        let p = tiny_model(&mut rng, vocab.len(), m as u64);
        let src: Vec<u32> = (0..rng.random_range(1..4)).map(|_| rng.random_range(3..6)).collect();
        let max_len = rng.random_range(1..=4);

        let beam = v.pow(max_len as u32);
        let got = beam_search(&p, &src, beam, max_len, &render, None).ok_or("unconstrained search failed")?;
        let (want_score, want) = argmax(&p, &src, sequences(&emittable, max_len).into_iter()).unwrap();
        ensure(got.tokens == want, || format!("model {m}: beam {:?} vs exhaustive {want:?}", got.tokens))?;
        close(got.log_score, want_score, 1e-9, &format!("model {m} score"))?;

        for closed in [false, true] {
            let text = *prefixes.choose(&mut rng).unwrap();
            let c = PrefixConstraint::new(text, closed);
            let cap = length_cap(4, &c).min(6);
            let keep = |seq: &Vec<u32>| {
                let s = render.render(seq);
                if closed {
                    s == text
                } else {
                    s.starts_with(text)
                }
            };
            let want = argmax(&p, &src, sequences(&emittable, cap).into_iter().filter(keep));
            let got = beam_search(&p, &src, v.pow(cap as u32), cap, &render, Some(&c));
            match (got, want) {
                (None, None) => {}
                (Some(g), Some((_, w))) => {
                    ensure(g.tokens == w, || {
                        format!("model {m} prefix {text:?} closed {closed}: {:?} vs {w:?}", g.tokens)
                    })?;
                    constrained += 1;
                }
                (g, w) => {
                    return Err(format!(
                        "model {m} prefix {text:?} closed {closed}: search {:?} vs oracle {:?}",
                        g.map(|r| r.tokens),
                        w.map(|r| r.1)
                    ))
                }
            }
        }
    }
    let took = start.elapsed();
    ensure(took < SEARCH_BUDGET, || format!("took {took:?}"))?;
    Ok(format!("{SEARCH_MODELS} models, {constrained} reachable constraints, {took:.1?}"))
}

// ---------------------------------------------------------------- gradient

pub const GRAD_TOL: f64 = 1e-4;
pub const GRAD_BUDGET: Duration = Duration::from_secs(60);

pub fn gradient_check() -> Check {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let sv = rng.random_range(4..8);
        let tv = rng.random_range(4..8);
        let mut c = ModelConfig::new(sv, tv);
        c.embed_dim = rng.random_range(2..5);
        c.enc_hidden = rng.random_range(2..5);
        c.dec_hidden = rng.random_range(2..5);
        c.out_dim = rng.random_range(2..5);
        c.init_scale = 0.5;
        c.clip_norm = 0.0;
        c.seed = seed;
        let mut p = ModelParams::init(&c);
        // non-zero biases so every path is exercised
        for (_, m) in p.tensors_mut() {
            for v in &mut m.data {
                if *v == 0.0 {
                    *v = rng.random_range(-0.3..0.3);
                }
            }
        }
        let src: Vec<u32> = (0..rng.random_range(1..5)).map(|_| rng.random_range(3..sv as u32)).collect();
        let mut tgt: Vec<u32> = (0..rng.random_range(0..4)).map(|_| rng.random_range(3..tv as u32)).collect();
        tgt.push(EOS);
        let (_, grad) = loss_and_gradients(&p, &src, &tgt);
        let analytic: Vec<(&'static str, Vec<f64>)> =
            grad.tensors().into_iter().map(|(n, m)| (n, m.data.clone())).collect();
        let h = 1e-5;
        for (t, (name, g)) in analytic.iter().enumerate() {
            let mut num = vec![0.0; g.len()];
            for (k, slot) in num.iter_mut().enumerate() {
                let orig = p.tensors()[t].1.data[k];
                p.tensors_mut()[t].1.data[k] = orig + h;
                let up = sequence_loss(&p, &src, &tgt);
                p.tensors_mut()[t].1.data[k] = orig - h;
                let down = sequence_loss(&p, &src, &tgt);
                p.tensors_mut()[t].1.data[k] = orig;
                *slot = (up - down) / (2.0 * h);
            }
            let diff: f64 = g.iter().zip(&num).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let scale = g.iter().map(|a| a * a).sum::<f64>().sqrt() + num.iter().map(|a| a * a).sum::<f64>().sqrt();
            let rel = if scale < 1e-10 { diff } else { diff / scale };
            worst = worst.max(rel);
            ensure(rel < GRAD_TOL, || format!("config {seed} group {name}: relative error {rel:e}"))?;
        }
    }
    let took = start.elapsed();
    ensure(took < GRAD_BUDGET, || format!("took {took:?}"))?;
    Ok(format!("10 configs x 20 groups, worst relative error {worst:.2e}, {took:.1?}"))
}

// ---------------------------------------------------------------- protocol

fn random_reference(rng: &mut ChaCha8Rng, pool: &[ParallelPair]) -> String {
    match rng.random_range(0..3) {
        0 => pool.choose(rng).unwrap().target.surface().to_string(),
        1 => {
            let words: Vec<String> = (0..rng.random_range(1..5))
                .map(|_| {
                    (0..rng.random_range(1..6))
                        .map(|_| *b"ABELMOPSTUVZ.,".choose(rng).unwrap() as char)
                        .collect()
                })
                .collect();
            words.join(" ")
        }
        _ => {
            // a real target with one word replaced by a random one
            let t = pool.choose(rng).unwrap().target.surface().to_string();
            let mut w: Vec<String> = t.split(' ').map(str::to_string).collect();
            let k = rng.random_range(0..w.len());
            w[k] = (0..rng.random_range(1..5)).map(|_| rng.random_range(b'a'..=b'z') as char).collect();
            w.join(" ")
        }
    }
}

/// Checks one finished session trace against the protocol invariants.
pub fn check_trace(trace: &SessionTrace, reference: &str, final_surface: &str) -> Result<(), String> {
    let n = reference.chars().count();
    ensure(final_surface == reference, || format!("final {final_surface:?} != {reference:?}"))?;
    ensure(trace.final_surface == reference, || "trace final differs".into())?;
    ensure(trace.corrections() <= n, || {
        format!("{} corrections for a {n}-character reference", trace.corrections())
    })?;
    ensure(matches!(trace.iterations.last().map(|i| &i.feedback), Some(Feedback::Accept)), || {
        "session must end with accept".into()
    })?;
    // every re-decoded hypothesis starts with the prefix the user validated
    let mut validated = 0usize;
    for w in trace.iterations.windows(2) {
        let shown: Vec<char> = w[0].hypothesis.chars().collect();
        let next = &w[1].hypothesis;
        match &w[0].feedback {
            Feedback::Correction { position, char } => {
                ensure(*position >= validated, || format!("correction at {position} before {validated}"))?;
                let mut prefix: String = shown[..*position].iter().collect();
                prefix.push(*char);
                ensure(next.starts_with(&prefix), || format!("{next:?} lost prefix {prefix:?}"))?;
                validated = position + 1;
            }
            Feedback::Truncate { position } => {
                let prefix: String = shown[..*position].iter().collect();
                ensure(*next == prefix, || format!("{next:?} after cut at {position}"))?;
                validated = *position;
            }
            Feedback::Accept => return Err("accept before the end".into()),
        }
    }
    ensure(trace.implied_ledger(false) == trace.ledger, || "ledger differs from the feedback log".into())?;
    ensure(trace.ledger.reference_characters == n, || "reference length not recorded".into())?;
    Ok(())
}

pub const PROTOCOL_TRIPLES: usize = 1000;

pub fn protocol_triples() -> Check {
    let start = Instant::now();
    let grammar = ToyGrammar::new(5);
    let pool = grammar.corpus(300, 0.2, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut done = 0;
    let mut corrections = 0;
    let models = 20;
    for m in 0..models {
        let cfg = SystemConfig {
            num_merges: rng.random_range(0..200),
            dims: rng.random_range(4..12),
            max_target_len: rng.random_range(8..30),
            init_scale: rng.random_range(0.05..1.0),
            seed: m,
            ..Default::default()
        };
        let sys = NmtSystem::build(&pool, &cfg).map_err(|e| e.to_string())?;
        for _ in 0..PROTOCOL_TRIPLES / models as usize {
            let source = pool.choose(&mut rng).unwrap().source.surface().to_string();
            let reference = random_reference(&mut rng, &pool);
            let session = SessionConfig {
                beam: rng.random_range(1..7),
                skip_adjacent_positioning: rng.random_bool(0.3),
            };
            let (hyp, trace) =
                inmt_session(&sys, &source, &reference, session).map_err(|e| format!("{source:?} -> {reference:?}: {e}"))?;
            if !session.skip_adjacent_positioning {
                check_trace(&trace, &reference, &hyp.surface)
                    .map_err(|e| format!("model {m}, {source:?} -> {reference:?}: {e}"))?;
            } else {
                ensure(hyp.surface == reference, || format!("final {:?} != {reference:?}", hyp.surface))?;
                ensure(trace.implied_ledger(true) == trace.ledger, || "ledger with skip flag".into())?;
            }
            corrections += trace.corrections();
            done += 1;
        }
    }
    Ok(format!(
        "{done} triples on {models} models, {corrections} corrections, {:.1?}",
        start.elapsed()
    ))
}

const FIG_REF: &str = "Ils sont perdus à jamais .";

struct FigureOne;

fn stub_hypothesis(surface: &str) -> Hypothesis {
    Hypothesis {
        tokens: vec![EOS],
        pieces: vec!["</s>".into()],
        surface: surface.into(),
        log_score: 0.0,
        attention: AttentionMatrix::from_rows(&[vec![1.0]], 1),
    }
}

impl TranslationModel for FigureOne {
    fn translate(&self, _: &str, _: usize) -> Result<Hypothesis, ModelError> {
        Ok(stub_hypothesis("Ils sont perdus pour toujours ."))
    }

    fn constrained_suffix_search(&self, _: &str, prefix: &Prefix, _: usize) -> Result<Hypothesis, ModelError> {
        // the completion shown once "à" is typed
        if prefix.text == "Ils sont perdus à" {
            Ok(stub_hypothesis(FIG_REF))
        } else {
            Ok(stub_hypothesis(&prefix.text))
        }
    }

    fn update(&mut self, _: &str, _: &str, _: f64) -> Result<f64, ModelError> {
        Ok(0.0)
    }
}

pub fn figure_one() -> Check {
    let (hyp, trace) = inmt_session(&FigureOne, "They are lost forever .", FIG_REF, SessionConfig::default())
        .map_err(|e| e.to_string())?;
    check_trace(&trace, FIG_REF, &hyp.surface)?;
    let l = trace.ledger;
    ensure((l.keystrokes, l.mouse_actions, l.reference_characters) == (1, 2, 26), || format!("ledger {l:?}"))?;
    let k = ksmr(&l).map_err(|e| e.to_string())?;
    close(k, 3.0 / 26.0, 1e-12, "KSMR")?;
    Ok(format!("KSMR {k:.4} = 3/26"))
}

// ---------------------------------------------------------------------- EM

pub const DICT_RECOVERY: f64 = 0.95;
pub const EM_BUDGET: Duration = Duration::from_secs(60);

pub fn em_checks() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for c in 0..20 {
        let n = rng.random_range(3..40);
        let sv = rng.random_range(2..10);
        let tv = rng.random_range(2..10);
        let corpus: Vec<ParallelPair> = (0..n)
            .map(|_| {
                let s: Vec<String> = (0..rng.random_range(1..7)).map(|_| format!("s{}", rng.random_range(0..sv))).collect();
                let t: Vec<String> = (0..rng.random_range(1..7)).map(|_| format!("t{}", rng.random_range(0..tv))).collect();
                ParallelPair::new(&s.join(" "), &t.join(" ")).unwrap()
            })
            .collect();
        let distortion = if c % 2 == 0 { DistortionKind::Diagonal } else { DistortionKind::Table };
        let cfg = AlignerConfig {
            m1_iters: 5,
            m2_iters: 5,
            distortion,
            ..Default::default()
        };
        let ll = train_alignment(&corpus, &cfg).map_err(|e| e.to_string())?.log_likelihood;
        for w in ll.windows(2) {
            ensure(w[1] >= w[0] - 1e-9 * w[0].abs().max(1.0), || format!("corpus {c}: log-likelihood fell {ll:?}"))?;
        }
    }

    // 50 source types, each always rendered by its own target word
    let types = 50;
    let src: Vec<String> = (0..types).map(|i| format!("w{i}")).collect();
    let tgt: Vec<String> = (0..types).map(|i| format!("T{}", (i * 7 + 3) % types)).collect();
    let corpus: Vec<ParallelPair> = (0..500)
        .map(|_| {
            let idx: Vec<usize> = (0..rng.random_range(3..8)).map(|_| rng.random_range(0..types)).collect();
            let s: Vec<&str> = idx.iter().map(|&i| src[i].as_str()).collect();
            let mut t: Vec<&str> = idx.iter().map(|&i| tgt[i].as_str()).collect();
            t.shuffle(&mut rng);
            ParallelPair::new(&s.join(" "), &t.join(" ")).unwrap()
        })
        .collect();
    let model = train_alignment(&corpus, &AlignerConfig::default()).map_err(|e| e.to_string())?.model;
    let targets: Vec<String> = model.target_vocabulary().map(str::to_string).collect();
    let mut recovered = 0;
    for (x, y) in src.iter().zip(&tgt) {
        let best = targets
            .iter()
            .max_by(|a, b| lexical_prob(&model, a, Some(x)).total_cmp(&lexical_prob(&model, b, Some(x))))
            .unwrap();
        if best.eq_ignore_ascii_case(y) {
            recovered += 1;
        }
    }
    let rate = recovered as f64 / types as f64;
    ensure(rate >= DICT_RECOVERY, || format!("dictionary recovery {rate}"))?;
    let took = start.elapsed();
    ensure(took < EM_BUDGET, || format!("took {took:?}"))?;
    Ok(format!("20 corpora monotone, dictionary {recovered}/{types}, {took:.1?}"))
}

// -------------------------------------------------------------------- BLEU

pub fn bleu_cases() -> Check {
    let r = "the cat is on the mat";
    let s = BleuStats::from_pair("the the the the the the the", r);
    ensure(s.matches[0] == 2 && s.totals[0] == 7, || format!("clipping {:?}/{:?}", s.matches, s.totals))?;
    close(s.precision(1), 2.0 / 7.0, 0.0, "clipped unigram precision")?;
    close(s.score(), 0.0, 0.0, "clipped BLEU")?;
    let s = BleuStats::from_pair("the cat", r);
    close(s.brevity_penalty(), (1.0f64 - 6.0 / 2.0).exp(), 1e-15, "brevity penalty")?;
    let s = BleuStats::from_pair("the cat is on", r);
    close(s.score(), (1.0f64 - 6.0 / 4.0).exp(), 1e-12, "BP times unit precisions")?;
    let refs = [r, "a dog sat there quietly today"];
    close(corpus_bleu(&refs, &refs).map_err(|e| e.to_string())?, 1.0, 0.0, "BLEU(ref, ref)")?;
    Ok("clipping 2/7, BP exp(-2), BLEU(ref, ref) = 1".into())
}

// --------------------------------------------------------------------- BPE

pub fn bpe_checks() -> Check {
    let rule = |a: &str, b: &str| (a.to_string(), b.to_string());
    let t = learn_bpe(["aaaa"], 1).map_err(|e| e.to_string())?;
    ensure(t.rules() == [rule("a", "a")], || format!("aaaa: {:?}", t.rules()))?;
    let t = learn_bpe(["ab ab", "ab"], 1).map_err(|e| e.to_string())?;
    ensure(t.rules() == [rule("a", "b</w>")], || format!("ab ab / ab: {:?}", t.rules()))?;
    let t = learn_bpe(["hello"], 0).map_err(|e| e.to_string())?;
    ensure(t.is_empty() && apply_bpe(&t, "ab") == ["a", "b</w>"], || "empty table fallback".into())?;
    let t = MergeTable::from_rules(vec![rule("a", "a"), rule("a", "a</w>"), rule("aa", "aa</w>")]).unwrap();
    ensure(apply_bpe(&t, "aaaa") == ["aaaa</w>"], || format!("aaaa -> {:?}", apply_bpe(&t, "aaaa")))?;
    let t = learn_bpe(["abab abab"], 20).map_err(|e| e.to_string())?;
    ensure(apply_bpe(&t, "aqb").iter().any(|p| p == "q"), || "unseen character".into())?;

    let mut rng = ChaCha8Rng::seed_from_u64(29);
    let alphabet: Vec<char> = "abcdeéfgh.,'-".chars().collect();
    let mut word = |rng: &mut ChaCha8Rng| -> String {
        (0..rng.random_range(1..8)).map(|_| *alphabet.choose(rng).unwrap()).collect()
    };
    let sentence = |rng: &mut ChaCha8Rng, word: &mut dyn FnMut(&mut ChaCha8Rng) -> String| -> String {
        (0..rng.random_range(1..7)).map(|_| word(rng)).collect::<Vec<_>>().join(" ")
    };
    let train: Vec<String> = (0..200).map(|_| sentence(&mut rng, &mut word)).collect();
    let table = learn_bpe(train.iter().map(String::as_str), 150).map_err(|e| e.to_string())?;
    for k in 0..1000 {
        let s = sentence(&mut rng, &mut word);
        let back = detokenize(&apply_bpe(&table, &s)).map_err(|e| e.to_string())?;
        ensure(back == s, || format!("string {k}: {s:?} -> {back:?}"))?;
    }
    Ok("merge examples and 1000 round trips".into())
}

// --------------------------------------------------------------------- E2E

pub const E2E_BUDGET: Duration = Duration::from_secs(600);
/// Allowed shortfall of an AL strategy's cumulative BLEU under the static run.
pub const E2E_BLEU_SLACK: f64 = 0.005;
pub const E2E_EPSILON: f64 = 0.3;

pub struct E2eSetup {
    pub system: NmtSystem,
    pub aligner: inmt_al::aligner::AlignmentModel,
    pub sources: Vec<String>,
    pub references: Vec<String>,
}

/// Toy task with a vocabulary shift: rare nouns in training are frequent
/// in the stream.
pub fn e2e_setup() -> Result<E2eSetup, String> {
    let grammar = ToyGrammar::new(1);
    let train = grammar.corpus(2000, 0.005, 10);
    let dev = grammar.corpus(100, 0.005, 11);
    let stream = grammar.corpus(1500, 0.8, 12);
    let cfg = SystemConfig {
        num_merges: 300,
        dims: 32,
        max_target_len: 30,
        train: TrainConfig {
            epochs: 30,
            learning_rate: 0.005,
            patience: 5,
            ..Default::default()
        },
        ..Default::default()
    };
    let (system, _) = NmtSystem::train_initial(&cfg, &train, &dev).map_err(|e| e.to_string())?;
    let aligner = train_alignment(&train, &AlignerConfig::default()).map_err(|e| e.to_string())?.model;
    Ok(E2eSetup {
        system,
        aligner,
        sources: stream.iter().map(|p| p.source.surface().to_string()).collect(),
        references: stream.iter().map(|p| p.target.surface().to_string()).collect(),
    })
}

pub fn run(setup: &E2eSetup, strategy: Strategy, epsilon: f64) -> Result<ExperimentReport, String> {
    let mut model = setup.system.clone();
    let config = ALConfig {
        epsilon,
        strategy,
        checkpoint_every: 0,
        ..Default::default()
    };
    run_al(
        &mut model,
        &mut StreamSource::from_strings(setup.sources.clone()),
        &setup.references,
        Some(&setup.aligner),
        &config,
        &mut NullSink,
    )
    .map_err(|e| e.to_string())
}

/// Effort of supervising `indices` with the initial model and no updates,
/// over the same denominator as the AL run.
pub fn static_supervision_ksmr(setup: &E2eSetup, indices: &[usize]) -> Result<f64, String> {
    let mut ledger = EffortLedger::default();
    for &i in indices {
        let (_, t) = inmt_session(&setup.system, &setup.sources[i], &setup.references[i], SessionConfig::default())
            .map_err(|e| e.to_string())?;
        ledger += t.ledger;
    }
    ledger.reference_characters = setup.references.iter().map(|r| r.chars().count()).sum();
    ksmr(&ledger).map_err(|e| e.to_string())
}

pub struct E2eOutcome {
    pub lines: Vec<(String, Check)>,
}

pub fn end_to_end() -> E2eOutcome {
    let start = Instant::now();
    let mut lines = Vec::new();
    let setup = match e2e_setup() {
        Ok(s) => s,
        Err(e) => {
            lines.push(("e2e setup".into(), Err(e)));
            return E2eOutcome { lines };
        }
    };
    let base = match run(&setup, Strategy::Rs, 0.0) {
        Ok(r) => r,
        Err(e) => {
            lines.push(("e2e static run".into(), Err(e)));
            return E2eOutcome { lines };
        }
    };
    let static_bleu = base.summary.bleu;

    lines.push(("e2e (c) eps=0 equals batch translation".into(), (|| {
        let beam = ALConfig::default().beam;
        for (i, s) in setup.sources.iter().enumerate() {
            let h = setup.system.translate(s, beam).map_err(|e| e.to_string())?;
            ensure(base.outputs[i] == h.surface && base.initial_hypotheses[i] == h.surface, || {
                format!("sentence {i}: {:?} vs {:?}", base.outputs[i], h.surface)
            })?;
        }
        ensure(base.supervised.is_empty() && base.summary.ksmr == 0.0, || "static run supervised".into())?;
        Ok(format!("{} sentences identical, static BLEU {static_bleu:.4}", setup.sources.len()))
    })()));

    for strategy in Strategy::ALL {
        let key = strategy.name();
        let r = match run(&setup, strategy, E2E_EPSILON) {
            Ok(r) => r,
            Err(e) => {
                lines.push((format!("e2e {key}"), Err(e)));
                continue;
            }
        };
        let bleu = r.summary.bleu;
        let strict = matches!(strategy, Strategy::Qes | Strategy::Covs | Strategy::Ads);
        let ok = bleu >= static_bleu - E2E_BLEU_SLACK && (!strict || bleu > static_bleu);
        let rel = if strict { ">" } else { ">= static - 0.005," };
        lines.push((
            format!("e2e (a) {key} BLEU"),
            if ok {
                Ok(format!("{bleu:.4} {rel} static {static_bleu:.4}"))
            } else {
                Err(format!("{bleu:.4} vs static {static_bleu:.4} (needs {rel})"))
            },
        ));
        let check = static_supervision_ksmr(&setup, &r.supervised).and_then(|s| {
            let k = r.summary.ksmr;
            if k < s {
                Ok(format!("AL KSMR {k:.4} < static {s:.4} on {} sentences", r.supervised.len()))
            } else {
                Err(format!("AL KSMR {k:.4} >= static {s:.4}"))
            }
        });
        lines.push((format!("e2e (b) {key} KSMR"), check));
    }

    let full = run(&setup, Strategy::Ads, 1.0);
    lines.push(("e2e (d) eps=1 outputs the references".into(), full.and_then(|r| {
        ensure(r.outputs == setup.references, || "outputs differ from references".into())?;
        ensure(r.summary.output_bleu == 1.0, || format!("output BLEU {}", r.summary.output_bleu))?;
        Ok(format!("{} of {} sentences supervised", r.supervised.len(), setup.sources.len()))
    })));

    let took = start.elapsed();
    lines.push((
        "e2e runtime".into(),
        if took < E2E_BUDGET {
            Ok(format!("{took:.1?}"))
        } else {
            Err(format!("{took:.1?} exceeds {E2E_BUDGET:?}"))
        },
    ));
    E2eOutcome { lines }
}
