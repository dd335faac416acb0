//! Incremental SGD updates and mini-batch training with early stopping.

use std::time::{Duration, Instant};

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::network::{accumulate_gradients, loss_and_gradients};
use super::params::ModelParams;
use super::ModelError;

/// One vanilla SGD step on a single pair with the gradient clipped to the
/// configured norm. Returns the loss before the step. On a non-finite loss
/// or gradient the parameters are left untouched.
pub fn sgd_update(p: &mut ModelParams, src: &[u32], tgt: &[u32], lr: f64) -> Result<f64, ModelError> {
    let (loss, mut grad) = loss_and_gradients(p, src, tgt);
    if !loss.is_finite() || !grad.is_finite() {
        warn!("non-finite loss {loss}; update skipped");
        return Err(ModelError::NonFinite);
    }
    if lr == 0.0 {
        return Ok(loss);
    }
    grad.clip_norm(p.config.clip_norm);
    let mut next = p.clone();
    next.add_scaled(-lr, &grad);
    if !next.is_finite() {
        warn!("update produced non-finite parameters; skipped");
        return Err(ModelError::NonFinite);
    }
    *p = next;
    Ok(loss)
}

/// Sets the output bias to smoothed log unigram frequencies of the target
/// ids. Without it the deep-output layer tends to saturate while learning
/// the token prior, which starves every layer below it of gradient.
pub fn init_output_bias(p: &mut ModelParams, data: &[(Vec<u32>, Vec<u32>)]) {
    let mut counts = vec![0.1; p.proj_b.data.len()];
    for (_, tgt) in data {
        for &y in tgt {
            counts[y as usize] += 1.0;
        }
    }
    let total: f64 = counts.iter().sum();
    for (b, c) in p.proj_b.data.iter_mut().zip(&counts) {
        *b = (c / total).ln();
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Adam step size.
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Dev evaluations without improvement before stopping.
    pub patience: usize,
    /// Evaluate on dev every this many epochs.
    pub eval_every: usize,
    pub seed: u64,
    pub time_budget_secs: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 16,
            learning_rate: 0.003,
            beta1: 0.9,
            beta2: 0.999,
            patience: 3,
            eval_every: 1,
            seed: 7,
            time_budget_secs: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs_run: usize,
    pub train_loss: Vec<f64>,
    pub dev_scores: Vec<f64>,
    pub best_dev: Option<f64>,
    pub best_epoch: Option<usize>,
    pub early_stopped: bool,
}

struct Adam {
    m: ModelParams,
    v: ModelParams,
    t: i32,
}

impl Adam {
    fn new(p: &ModelParams) -> Self {
        Self {
            m: p.zeros_like(),
            v: p.zeros_like(),
            t: 0,
        }
    }

    fn step(&mut self, p: &mut ModelParams, g: &ModelParams, cfg: &TrainConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        let params = p.tensors_mut();
        let ms = self.m.tensors_mut();
        let vs = self.v.tensors_mut();
        for (((_, w), (_, m)), ((_, v), (_, gm))) in params.into_iter().zip(ms).zip(vs.into_iter().zip(g.tensors())) {
            for k in 0..w.data.len() {
                let gk = gm.data[k];
                m.data[k] = cfg.beta1 * m.data[k] + (1.0 - cfg.beta1) * gk;
                v.data[k] = cfg.beta2 * v.data[k] + (1.0 - cfg.beta2) * gk * gk;
                let mh = m.data[k] / c1;
                let vh = v.data[k] / c2;
                w.data[k] -= cfg.learning_rate * mh / (vh.sqrt() + 1e-8);
            }
        }
    }
}

/// Mini-batch Adam on token-id pairs. `dev_score` is evaluated every
/// `eval_every` epochs (higher is better); the best-scoring parameters are
/// returned. With no dev evaluation the final parameters are returned.
pub fn fit<F>(
    init: ModelParams,
    data: &[(Vec<u32>, Vec<u32>)],
    cfg: &TrainConfig,
    mut dev_score: F,
) -> Result<(ModelParams, TrainReport), ModelError>
where
    F: FnMut(&ModelParams) -> f64,
{
    if data.is_empty() {
        return Err(ModelError::EmptyCorpus);
    }
    let mut report = TrainReport::default();
    if cfg.epochs == 0 {
        return Ok((init, report));
    }
    let start = Instant::now();
    let budget = cfg.time_budget_secs.map(Duration::from_secs_f64);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut p = init;
    let mut adam = Adam::new(&p);
    let mut best: Option<(f64, ModelParams)> = None;
    let mut stale = 0;
    let batch = cfg.batch_size.max(1);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut tokens = 0usize;
        for chunk in order.chunks(batch) {
            let mut grad = p.zeros_like();
            let mut batch_loss = 0.0;
            for &i in chunk {
                let (src, tgt) = &data[i];
                batch_loss += accumulate_gradients(&p, src, tgt, &mut grad);
                tokens += tgt.len();
            }
            if !batch_loss.is_finite() || !grad.is_finite() {
                let last_good = best.map(|(_, b)| b).unwrap_or(p);
                return Err(ModelError::Diverged {
                    last_good: Box::new(last_good),
                });
            }
            grad.scale(1.0 / chunk.len() as f64);
            grad.clip_norm(p.config.clip_norm);
            adam.step(&mut p, &grad, cfg);
            total += batch_loss;
        }
        report.epochs_run = epoch + 1;
        report.train_loss.push(total / tokens.max(1) as f64);
        let out_of_time = budget.is_some_and(|b| start.elapsed() >= b);

        if (epoch + 1) % cfg.eval_every.max(1) == 0 || epoch + 1 == cfg.epochs || out_of_time {
            let score = dev_score(&p);
            report.dev_scores.push(score);
            info!(
                "epoch {} loss/token {:.4} dev {:.4}",
                epoch + 1,
                report.train_loss[epoch],
                score
            );
            if best.as_ref().is_none_or(|(b, _)| score > *b) {
                best = Some((score, p.clone()));
                report.best_dev = Some(score);
                report.best_epoch = Some(epoch + 1);
                stale = 0;
            } else {
                stale += 1;
                if stale >= cfg.patience {
                    report.early_stopped = true;
                    break;
                }
            }
        }
        if out_of_time {
            break;
        }
    }
    let p = best.map(|(_, b)| b).unwrap_or(p);
    Ok((p, report))
}
