//! Forward and backward passes of the attention encoder-decoder.
//!
//! Encoder: bidirectional GRU over source embeddings; annotation h_j is the
//! concatenation of both directions. The decoder starts from
//! `tanh(W·mean_j h_j + b)` and at step i feeds the previous target
//! embedding and the previous context vector into a GRU cell, scores
//! annotations with `s_iᵀ W_a h_j`, and combines state, context and
//! previous embedding in a tanh deep-output layer before the softmax.

use super::params::{Gru, ModelParams};
use super::tensor::{axpy, dot, log_softmax, sigmoid, softmax};
use crate::corpus::BOS;

pub(crate) struct GruStep {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    n: Vec<f64>,
    pub h: Vec<f64>,
}

pub(crate) fn gru_forward(g: &Gru, x: &[f64], h_prev: &[f64]) -> GruStep {
    let hd = g.hidden();
    let mut gx = g.b.data.clone();
    g.w.matvec_add(x, &mut gx);
    let mut gh = vec![0.0; 2 * hd];
    g.u.matvec_rows_add(0..2 * hd, h_prev, &mut gh);
    let z: Vec<f64> = (0..hd).map(|k| sigmoid(gx[k] + gh[k])).collect();
    let r: Vec<f64> = (0..hd).map(|k| sigmoid(gx[hd + k] + gh[hd + k])).collect();
    let rh: Vec<f64> = r.iter().zip(h_prev).map(|(a, b)| a * b).collect();
    let mut an = gx[2 * hd..].to_vec();
    g.u.matvec_rows_add(2 * hd..3 * hd, &rh, &mut an);
    let n: Vec<f64> = an.iter().map(|v| v.tanh()).collect();
    let h = (0..hd).map(|k| (1.0 - z[k]) * n[k] + z[k] * h_prev[k]).collect();
    GruStep {
        x: x.to_vec(),
        h_prev: h_prev.to_vec(),
        z,
        r,
        n,
        h,
    }
}

/// Accumulates parameter gradients into `grad` and input/state gradients
/// into `dx` and `dh_prev`.
fn gru_backward(
    g: &Gru,
    grad: &mut Gru,
    st: &GruStep,
    dh: &[f64],
    dx: &mut [f64],
    dh_prev: &mut [f64],
) {
    let hd = g.hidden();
    let mut da = vec![0.0; 3 * hd];
    for k in 0..hd {
        let dz = dh[k] * (st.h_prev[k] - st.n[k]);
        let dn = dh[k] * (1.0 - st.z[k]);
        da[k] = dz * st.z[k] * (1.0 - st.z[k]);
        da[2 * hd + k] = dn * (1.0 - st.n[k] * st.n[k]);
        dh_prev[k] += dh[k] * st.z[k];
    }
    let mut d_rh = vec![0.0; hd];
    g.u.tmatvec_rows_add(2 * hd..3 * hd, &da[2 * hd..], &mut d_rh);
    for k in 0..hd {
        let dr = d_rh[k] * st.h_prev[k];
        da[hd + k] = dr * st.r[k] * (1.0 - st.r[k]);
        dh_prev[k] += d_rh[k] * st.r[k];
    }
    g.u.tmatvec_rows_add(0..2 * hd, &da[..2 * hd], dh_prev);
    g.w.tmatvec_add(&da, dx);

    grad.w.add_outer(&da, &st.x);
    axpy(1.0, &da, &mut grad.b.data);
    grad.u.add_outer_rows(0..2 * hd, &da[..2 * hd], &st.h_prev);
    let rh: Vec<f64> = st.r.iter().zip(&st.h_prev).map(|(a, b)| a * b).collect();
    grad.u.add_outer_rows(2 * hd..3 * hd, &da[2 * hd..], &rh);
}

pub(crate) struct Encoded {
    pub ann: Vec<Vec<f64>>,
    pub s0: Vec<f64>,
    mean: Vec<f64>,
    fwd: Vec<GruStep>,
    /// In processing order, i.e. from the last source position to the first.
    bwd: Vec<GruStep>,
}

pub(crate) fn encode(p: &ModelParams, src: &[u32]) -> Encoded {
    let h = p.config.enc_hidden;
    let big_j = src.len();
    let mut fwd = Vec::with_capacity(big_j);
    let mut state = vec![0.0; h];
    for &x in src {
        let st = gru_forward(&p.enc_fwd, p.src_emb.row(x as usize), &state);
        state.clone_from(&st.h);
        fwd.push(st);
    }
    let mut bwd = Vec::with_capacity(big_j);
    let mut state = vec![0.0; h];
    for &x in src.iter().rev() {
        let st = gru_forward(&p.enc_bwd, p.src_emb.row(x as usize), &state);
        state.clone_from(&st.h);
        bwd.push(st);
    }
    let ann: Vec<Vec<f64>> = (0..big_j)
        .map(|j| {
            let mut a = fwd[j].h.clone();
            a.extend_from_slice(&bwd[big_j - 1 - j].h);
            a
        })
        .collect();
    let mut mean = vec![0.0; 2 * h];
    for a in &ann {
        axpy(1.0 / big_j as f64, a, &mut mean);
    }
    let mut s0 = p.init_b.data.clone();
    p.init_w.matvec_add(&mean, &mut s0);
    for v in &mut s0 {
        *v = v.tanh();
    }
    Encoded {
        ann,
        s0,
        mean,
        fwd,
        bwd,
    }
}

pub(crate) struct DecStep {
    prev: u32,
    gru: GruStep,
    q: Vec<f64>,
    pub alpha: Vec<f64>,
    pub ctx: Vec<f64>,
    t: Vec<f64>,
    pub logp: Vec<f64>,
}

impl DecStep {
    pub fn state(&self) -> &[f64] {
        &self.gru.h
    }
}

/// One decoder step consuming `prev`; `logp` is the distribution of the
/// next token.
pub(crate) fn decoder_step(
    p: &ModelParams,
    enc: &Encoded,
    prev: u32,
    s_prev: &[f64],
    z_prev: &[f64],
) -> DecStep {
    let u = p.tgt_emb.row(prev as usize);
    let mut x = Vec::with_capacity(u.len() + z_prev.len());
    x.extend_from_slice(u);
    x.extend_from_slice(z_prev);
    let gru = gru_forward(&p.dec, &x, s_prev);
    let s = &gru.h;

    let mut q = vec![0.0; p.config.annotation_dim()];
    p.att_w.tmatvec_add(s, &mut q);
    let mut alpha: Vec<f64> = enc.ann.iter().map(|a| dot(&q, a)).collect();
    softmax(&mut alpha);
    let mut ctx = vec![0.0; q.len()];
    for (a, w) in enc.ann.iter().zip(&alpha) {
        axpy(*w, a, &mut ctx);
    }

    let mut t = p.out_b.data.clone();
    p.out_s.matvec_add(s, &mut t);
    p.out_z.matvec_add(&ctx, &mut t);
    p.out_u.matvec_add(u, &mut t);
    for v in &mut t {
        *v = v.tanh();
    }
    let mut logp = p.proj_b.data.clone();
    p.proj_w.matvec_add(&t, &mut logp);
    log_softmax(&mut logp);
    DecStep {
        prev,
        gru,
        q,
        alpha,
        ctx,
        t,
        logp,
    }
}

/// Teacher-forced decoder run; `tgt` ends with the end-of-sequence id.
fn teacher_forced(p: &ModelParams, enc: &Encoded, tgt: &[u32]) -> (f64, Vec<DecStep>) {
    let mut steps: Vec<DecStep> = Vec::with_capacity(tgt.len());
    let mut loss = 0.0;
    for (i, &y) in tgt.iter().enumerate() {
        let st = match steps.last() {
            None => decoder_step(p, enc, BOS, &enc.s0, &vec![0.0; p.config.annotation_dim()]),
            Some(last) => decoder_step(p, enc, tgt[i - 1], last.state(), &last.ctx),
        };
        loss -= st.logp[y as usize];
        steps.push(st);
    }
    (loss, steps)
}

/// Cross-entropy of `tgt` given `src`, summed over target tokens.
pub fn sequence_loss(p: &ModelParams, src: &[u32], tgt: &[u32]) -> f64 {
    let enc = encode(p, src);
    teacher_forced(p, &enc, tgt).0
}

/// Adds the gradient of the summed cross-entropy to `grad`; returns the loss.
pub fn accumulate_gradients(p: &ModelParams, src: &[u32], tgt: &[u32], grad: &mut ModelParams) -> f64 {
    let enc = encode(p, src);
    let (loss, steps) = teacher_forced(p, &enc, tgt);
    let ann_dim = p.config.annotation_dim();
    let emb = p.config.embed_dim;
    let big_j = src.len();

    let mut ds = vec![0.0; p.config.dec_hidden];
    let mut dz = vec![0.0; ann_dim];
    let mut d_ann = vec![vec![0.0; ann_dim]; big_j];
    for (st, &y) in steps.iter().zip(tgt).rev() {
        let s = st.state();
        let u = p.tgt_emb.row(st.prev as usize);
        let mut dlogits: Vec<f64> = st.logp.iter().map(|l| l.exp()).collect();
        dlogits[y as usize] -= 1.0;
        grad.proj_w.add_outer(&dlogits, &st.t);
        axpy(1.0, &dlogits, &mut grad.proj_b.data);
        let mut dt = vec![0.0; st.t.len()];
        p.proj_w.tmatvec_add(&dlogits, &mut dt);
        let da: Vec<f64> = dt.iter().zip(&st.t).map(|(d, t)| d * (1.0 - t * t)).collect();
        grad.out_s.add_outer(&da, s);
        grad.out_z.add_outer(&da, &st.ctx);
        grad.out_u.add_outer(&da, u);
        axpy(1.0, &da, &mut grad.out_b.data);

        let mut ds_total = ds.clone();
        p.out_s.tmatvec_add(&da, &mut ds_total);
        let mut dctx = dz.clone();
        p.out_z.tmatvec_add(&da, &mut dctx);
        let mut du = vec![0.0; emb];
        p.out_u.tmatvec_add(&da, &mut du);

        let dalpha: Vec<f64> = enc.ann.iter().map(|a| dot(a, &dctx)).collect();
        let mix: f64 = st.alpha.iter().zip(&dalpha).map(|(a, d)| a * d).sum();
        let mut dq = vec![0.0; ann_dim];
        for j in 0..big_j {
            let de = st.alpha[j] * (dalpha[j] - mix);
            axpy(st.alpha[j], &dctx, &mut d_ann[j]);
            axpy(de, &st.q, &mut d_ann[j]);
            axpy(de, &enc.ann[j], &mut dq);
        }
        grad.att_w.add_outer(s, &dq);
        p.att_w.matvec_add(&dq, &mut ds_total);

        let mut dx = vec![0.0; emb + ann_dim];
        let mut ds_prev = vec![0.0; ds.len()];
        gru_backward(&p.dec, &mut grad.dec, &st.gru, &ds_total, &mut dx, &mut ds_prev);
        axpy(1.0, &dx[..emb], &mut du);
        axpy(1.0, &du, grad.tgt_emb.row_mut(st.prev as usize));
        ds = ds_prev;
        dz = dx[emb..].to_vec();
    }

    let dpre: Vec<f64> = ds.iter().zip(&enc.s0).map(|(d, s)| d * (1.0 - s * s)).collect();
    grad.init_w.add_outer(&dpre, &enc.mean);
    axpy(1.0, &dpre, &mut grad.init_b.data);
    let mut dmean = vec![0.0; ann_dim];
    p.init_w.tmatvec_add(&dpre, &mut dmean);
    for d in &mut d_ann {
        axpy(1.0 / big_j as f64, &dmean, d);
    }

    let h = p.config.enc_hidden;
    let mut dh = vec![0.0; h];
    for j in (0..big_j).rev() {
        let total: Vec<f64> = dh.iter().zip(&d_ann[j][..h]).map(|(a, b)| a + b).collect();
        let mut dx = vec![0.0; emb];
        let mut dh_prev = vec![0.0; h];
        gru_backward(&p.enc_fwd, &mut grad.enc_fwd, &enc.fwd[j], &total, &mut dx, &mut dh_prev);
        axpy(1.0, &dx, grad.src_emb.row_mut(src[j] as usize));
        dh = dh_prev;
    }
    let mut dh = vec![0.0; h];
    for k in (0..big_j).rev() {
        let j = big_j - 1 - k;
        let total: Vec<f64> = dh.iter().zip(&d_ann[j][h..]).map(|(a, b)| a + b).collect();
        let mut dx = vec![0.0; emb];
        let mut dh_prev = vec![0.0; h];
        gru_backward(&p.enc_bwd, &mut grad.enc_bwd, &enc.bwd[k], &total, &mut dx, &mut dh_prev);
        axpy(1.0, &dx, grad.src_emb.row_mut(src[j] as usize));
        dh = dh_prev;
    }
    loss
}

/// Summed cross-entropy and its gradient with respect to every parameter.
pub fn loss_and_gradients(p: &ModelParams, src: &[u32], tgt: &[u32]) -> (f64, ModelParams) {
    let mut grad = p.zeros_like();
    let loss = accumulate_gradients(p, src, tgt, &mut grad);
    (loss, grad)
}
