//! Rendering heads: classic transmittance-weighted volumetric rendering and
//! the attention-based ray-tracing head.
//!
//! Classic rendering follows the discretised line integral: weights
//! `w_i = T_i delta_i dt_i` with `T_i = exp(-sum_{j<i} delta_j dt_j)`, so
//! the first sample always has unit transmittance and weighted sums of a
//! constant emission converge to `c (1 - e^{-delta L})` as sampling
//! densifies.
//!
//! The attention head replaces the fixed statistical pooling: per-ray tokens
//! (sample-mean of emission features and transmittance features plus a
//! learned direction embedding) pass through ten-head local self-attention
//! (softmax, or Performer positive random features behind a flag), are
//! pooled with weights scored against the scene `[CLS]` token, concatenated
//! with it, and projected to the channel prediction.

use crate::c64::C64;
use crate::error::{Error, Result};
use crate::radiance::{AttenuationOut, RayBundle, SignalOut};
use crate::rng::Rng64;
use crate::tape::{NodeId, Tape};
use crate::tokenizer::TokenSet;
use serde::{Deserialize, Serialize};

pub const ATTN_HEADS: usize = 10;

// ---------------------------------------------------------------------------
// Transmittance
// ---------------------------------------------------------------------------

/// Sample spacings dt_i = t_{i+1} - t_i, with the trailing spacing set to
/// the mean of the others.
pub fn sample_spacings(t: &[f64]) -> Vec<f64> {
    let n = t.len();
    if n == 1 {
        return vec![1.0];
    }
    let mut dt = Vec::with_capacity(n);
    for i in 0..n - 1 {
        dt.push(t[i + 1] - t[i]);
    }
    let mean = dt.iter().sum::<f64>() / dt.len() as f64;
    dt.push(mean);
    dt
}

/// Transmittance T and rendering weights w along one ray.
pub fn transmittance_weights(delta: &[f64], t: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if delta.len() != t.len() || t.is_empty() {
        return Err(Error::usage("delta and t must match and be nonempty"));
    }
    for w in t.windows(2) {
        if w[1] <= w[0] {
            return Err(Error::usage("t must be strictly increasing"));
        }
    }
    if delta.iter().any(|&d| d < 0.0) {
        return Err(Error::usage("delta must be nonnegative"));
    }
    let dt = sample_spacings(t);
    let mut trans = Vec::with_capacity(t.len());
    let mut weights = Vec::with_capacity(t.len());
    let mut acc = 0.0f64;
    for i in 0..t.len() {
        let ti = (-acc).exp();
        trans.push(ti);
        weights.push(ti * delta[i] * dt[i]);
        acc += delta[i] * dt[i];
    }
    Ok((trans, weights))
}

/// Tape version over a whole bundle: delta (M*N, 1) reshaped against the
/// bundle's spacings. Returns (T (M,N), w (M,N)).
pub fn transmittance_tape(
    tape: &mut Tape,
    delta: NodeId,
    bundle: &RayBundle,
) -> (NodeId, NodeId) {
    let m = bundle.rays;
    let n = bundle.samples_per_ray;
    let mut dt = Vec::with_capacity(m * n);
    for ray in 0..m {
        dt.extend_from_slice(&sample_spacings(bundle.ray_t(ray)));
    }
    let dt_c = tape.constant(m, n, &dt);
    let d_mn = tape.reshape(delta, m, n);
    let s = tape.mul(d_mn, dt_c);
    let p = tape.cumsum_excl_rows(s);
    let negp = tape.neg(p);
    let trans = tape.exp(negp);
    let w = tape.mul(trans, s);
    (trans, w)
}

// ---------------------------------------------------------------------------
// Output container
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RenderMode {
    Rssi,
    Csi,
}

#[derive(Clone, Debug, PartialEq)]
pub enum RenderOut {
    /// dBm scalar.
    Rssi(f64),
    /// Complex response per subcarrier.
    Csi(Vec<C64>),
}

impl RenderOut {
    /// Decode a head output row: RSSI keeps the single amplitude-path
    /// value (already in dB); CSI interprets pairs as (amplitude, phase).
    pub fn decode(mode: RenderMode, raw: &[f64]) -> Result<RenderOut> {
        match mode {
            RenderMode::Rssi => {
                if raw.len() != 1 {
                    return Err(Error::usage("rssi head must output one value"));
                }
                Ok(RenderOut::Rssi(raw[0]))
            }
            RenderMode::Csi => {
                if raw.len() % 2 != 0 || raw.is_empty() {
                    return Err(Error::usage(
                        "csi head must output amplitude and phase blocks",
                    ));
                }
                let (amp, phase) = raw.split_at(raw.len() / 2);
                Ok(RenderOut::Csi(
                    amp.iter()
                        .zip(phase)
                        .map(|(a, p)| C64::cis(*p).scale(*a))
                        .collect(),
                ))
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Classic rendering
// ---------------------------------------------------------------------------

/// Decode-and-project head for classic rendering.
#[derive(Clone, Debug)]
pub struct ClassicHeadParams {
    pub d_s: usize,
    pub d_dec: usize,
    pub out: usize,
    pub dec_w: Vec<f64>,
    pub dec_b: Vec<f64>,
    pub head_w: Vec<f64>,
    pub head_b: Vec<f64>,
}

pub struct ClassicHeadLeaves {
    pub dec_w: NodeId,
    pub dec_b: NodeId,
    pub head_w: NodeId,
    pub head_b: NodeId,
}

impl ClassicHeadParams {
    pub fn leaves(&self, tape: &mut Tape) -> ClassicHeadLeaves {
        ClassicHeadLeaves {
            dec_w: tape.param(self.d_dec, self.d_s, &self.dec_w),
            dec_b: tape.param(1, self.d_dec, &self.dec_b),
            head_w: tape.param(self.out, self.d_dec, &self.head_w),
            head_b: tape.param(1, self.out, &self.head_b),
        }
    }

    /// Pass-through decode and head (d_s = d_dec = out), for analytic tests.
    pub fn passthrough(d_s: usize) -> Self {
        let mut eye = vec![0.0; d_s * d_s];
        for i in 0..d_s {
            eye[i * d_s + i] = 1.0;
        }
        ClassicHeadParams {
            d_s,
            d_dec: d_s,
            out: d_s,
            dec_w: eye.clone(),
            dec_b: vec![0.0; d_s],
            head_w: eye,
            head_b: vec![0.0; d_s],
        }
    }
}

/// Classic volumetric head on the tape: per-ray transmittance-weighted sum
/// of decoded emissions, mean over rays, affine projection.
pub fn classic_render_tape(
    tape: &mut Tape,
    xi: NodeId,
    w: NodeId,
    leaves: &ClassicHeadLeaves,
    bundle: &RayBundle,
) -> NodeId {
    let n = bundle.samples_per_ray;
    let dec = tape.affine(xi, leaves.dec_w, leaves.dec_b);
    let w_col = tape.reshape(w, bundle.sample_count(), 1);
    let weighted = tape.scale_rows(dec, w_col);
    let ray_mean = tape.group_mean_rows(weighted, n);
    let ray_sum = tape.scale(ray_mean, n as f64);
    let pooled = tape.group_mean_rows(ray_sum, bundle.rays);
    tape.affine(pooled, leaves.head_w, leaves.head_b)
}

/// Classic rendering from precomputed network outputs.
pub fn classic_render(
    att: &AttenuationOut,
    sig: &SignalOut,
    bundle: &RayBundle,
    head: &ClassicHeadParams,
    mode: RenderMode,
) -> Result<RenderOut> {
    let mn = bundle.sample_count();
    if att.delta.len() != mn || sig.xi.len() != mn * sig.d_s || sig.d_s != head.d_s {
        return Err(Error::usage("render inputs do not match the bundle"));
    }
    let mut tape = Tape::new();
    let xi = tape.constant(mn, sig.d_s, &sig.xi);
    let delta = tape.constant(mn, 1, &att.delta);
    let (_, w) = transmittance_tape(&mut tape, delta, bundle);
    let leaves = head.leaves(&mut tape);
    let out = classic_render_tape(&mut tape, xi, w, &leaves, bundle);
    RenderOut::decode(mode, tape.value(out))
}

// ---------------------------------------------------------------------------
// Performer attention (FAVOR+)
// ---------------------------------------------------------------------------

/// Positive-random-feature matrix (m x d): block-orthogonal Gaussian rows
/// with chi-distributed norms, fixed for a given seed.
pub fn performer_features(d: usize, m: usize, seed: u64) -> Vec<f64> {
    let mut rng = Rng64::stream(seed, 0x46_41_56_4F_52);
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(m);
    while rows.len() < m {
        let block = (m - rows.len()).min(d);
        // Gram-Schmidt on fresh Gaussian rows
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(block);
        while basis.len() < block {
            let mut v: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
            for b in &basis {
                let dot: f64 = v.iter().zip(b).map(|(a, c)| a * c).sum();
                for (vi, bi) in v.iter_mut().zip(b) {
                    *vi -= dot * bi;
                }
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-9 {
                for vi in &mut v {
                    *vi /= norm;
                }
                basis.push(v);
            }
        }
        for mut b in basis {
            // chi-distributed length so features stay unbiased
            let len = (0..d).map(|_| rng.normal().powi(2)).sum::<f64>().sqrt();
            for x in &mut b {
                *x *= len;
            }
            rows.push(b);
        }
    }
    rows.into_iter().flatten().collect()
}

/// Dense matrix helper for the pure attention APIs.
#[derive(Clone, Debug, PartialEq)]
pub struct Mat {
    pub data: Vec<f64>,
    pub rows: usize,
    pub cols: usize,
}

impl Mat {
    pub fn new(data: Vec<f64>, rows: usize, cols: usize) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::usage("matrix shape mismatch"));
        }
        Ok(Mat { data, rows, cols })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            data: vec![0.0; rows * cols],
            rows,
            cols,
        }
    }

    pub fn random(rows: usize, cols: usize, rng: &mut Rng64) -> Self {
        Mat {
            data: (0..rows * cols).map(|_| rng.normal()).collect(),
            rows,
            cols,
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

/// FAVOR+ linear attention approximating softmax(Q K^T / sqrt(d)) V with
/// positive random features; cost is linear in the token count.
pub fn performer_attention(q: &Mat, k: &Mat, v: &Mat, m: usize, seed: u64) -> Result<Mat> {
    if m == 0 || q.cols == 0 {
        return Err(Error::usage("performer needs m >= 1 and d >= 1"));
    }
    if q.cols != k.cols || q.rows == 0 || k.rows != v.rows {
        return Err(Error::usage("performer attention shape mismatch"));
    }
    let d = q.cols;
    let n_q = q.rows;
    let n_k = k.rows;
    let omega = performer_features(d, m, seed);
    let root4 = (d as f64).powf(0.25);

    let log_phi = |x: &[f64]| -> Vec<f64> {
        let xs: Vec<f64> = x.iter().map(|t| t / root4).collect();
        let half_sq: f64 = 0.5 * xs.iter().map(|t| t * t).sum::<f64>();
        (0..m)
            .map(|i| {
                let dot: f64 = omega[i * d..(i + 1) * d]
                    .iter()
                    .zip(&xs)
                    .map(|(w, t)| w * t)
                    .sum();
                dot - half_sq
            })
            .collect()
    };

    // shared stabilisation shift for keys (cancels in the ratio)
    let log_k: Vec<Vec<f64>> = (0..n_k).map(|j| log_phi(k.row(j))).collect();
    let shift_k = log_k
        .iter()
        .flatten()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let dv = v.cols;
    let mut s = vec![0.0; m * dv]; // sum_j phi(k_j) v_j^T
    let mut z = vec![0.0; m];
    for j in 0..n_k {
        for i in 0..m {
            let p = (log_k[j][i] - shift_k).exp();
            z[i] += p;
            let vr = v.row(j);
            for c in 0..dv {
                s[i * dv + c] += p * vr[c];
            }
        }
    }
    let mut out = Mat::zeros(n_q, dv);
    for r in 0..n_q {
        let lq = log_phi(q.row(r));
        let shift_q = lq.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut num = vec![0.0; dv];
        let mut den = 0.0;
        for i in 0..m {
            let p = (lq[i] - shift_q).exp();
            den += p * z[i];
            for c in 0..dv {
                num[c] += p * s[i * dv + c];
            }
        }
        for c in 0..dv {
            out.data[r * dv + c] = num[c] / den;
        }
    }
    Ok(out)
}

/// Exact softmax(Q K^T / sqrt(d)) V, the oracle Performer approximates.
pub fn softmax_attention(q: &Mat, k: &Mat, v: &Mat) -> Result<Mat> {
    if q.cols != k.cols || k.rows != v.rows {
        return Err(Error::usage("attention shape mismatch"));
    }
    let scale = 1.0 / (q.cols as f64).sqrt();
    let mut out = Mat::zeros(q.rows, v.cols);
    for i in 0..q.rows {
        let scores: Vec<f64> = (0..k.rows)
            .map(|j| {
                q.row(i)
                    .iter()
                    .zip(k.row(j))
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
                    * scale
            })
            .collect();
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
        let denom: f64 = exps.iter().sum();
        for (j, e) in exps.iter().enumerate() {
            for c in 0..v.cols {
                out.data[i * v.cols + c] += e / denom * v.data[j * v.cols + c];
            }
        }
    }
    Ok(out)
}

/// Performer on the tape (no stabilisation shift; token magnitudes are
/// normalised upstream). The feature matrix enters as a constant.
pub fn performer_attention_tape(
    tape: &mut Tape,
    q: NodeId,
    k: NodeId,
    v: NodeId,
    m: usize,
    seed: u64,
) -> NodeId {
    let (_, d) = tape.shape(q);
    let omega = performer_features(d, m, seed);
    let omega_t = {
        // (d, m) transposed constant so logits = x_hat @ omega^T
        let mut t = vec![0.0; d * m];
        for i in 0..m {
            for j in 0..d {
                t[j * m + i] = omega[i * d + j];
            }
        }
        t
    };
    let omega_c = tape.constant(d, m, &omega_t);
    let root4 = (d as f64).powf(0.25);
    let phi = |tape: &mut Tape, x: NodeId| -> NodeId {
        let xs = tape.scale(x, 1.0 / root4);
        let logits = tape.matmul(xs, omega_c);
        let sq = tape.mul(xs, xs);
        let half = tape.row_sums(sq);
        let neg = tape.scale(half, -0.5);
        let damp = tape.exp(neg);
        let e = tape.exp(logits);
        tape.scale_rows(e, damp)
    };
    let phi_q = phi(tape, q);
    let phi_k = phi(tape, k);
    let phi_k_t = tape.transpose(phi_k);
    let s = tape.matmul(phi_k_t, v);
    let num = tape.matmul(phi_q, s);
    let z = tape.row_sums(phi_k_t); // (m, 1): sum_j phi(k_j)
    let den = tape.matmul(phi_q, z); // (n_q, 1)
    let inv = tape.recip(den);
    tape.scale_rows(num, inv)
}

// ---------------------------------------------------------------------------
// Local multi-head self-attention
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct LocalAttnParams {
    pub d: usize,
    pub wq: Vec<f64>,
    pub wk: Vec<f64>,
    pub wv: Vec<f64>,
    pub wo: Vec<f64>,
}

impl LocalAttnParams {
    pub fn identity(d: usize) -> Self {
        let mut eye = vec![0.0; d * d];
        for i in 0..d {
            eye[i * d + i] = 1.0;
        }
        LocalAttnParams {
            d,
            wq: eye.clone(),
            wk: eye.clone(),
            wv: eye.clone(),
            wo: eye,
        }
    }

    pub fn random(d: usize, rng: &mut Rng64) -> Self {
        let scale = 1.0 / (d as f64).sqrt();
        let mut draw = || -> Vec<f64> { (0..d * d).map(|_| rng.normal() * scale).collect() };
        LocalAttnParams {
            d,
            wq: draw(),
            wk: draw(),
            wv: draw(),
            wo: draw(),
        }
    }
}

pub struct LocalAttnLeaves {
    pub wq: NodeId,
    pub wk: NodeId,
    pub wv: NodeId,
    pub wo: NodeId,
}

impl LocalAttnParams {
    pub fn leaves(&self, tape: &mut Tape) -> LocalAttnLeaves {
        LocalAttnLeaves {
            wq: tape.param(self.d, self.d, &self.wq),
            wk: tape.param(self.d, self.d, &self.wk),
            wv: tape.param(self.d, self.d, &self.wv),
            wo: tape.param(self.d, self.d, &self.wo),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerformerCfg {
    pub enabled: bool,
    pub m: usize,
    pub seed: u64,
}

impl Default for PerformerCfg {
    fn default() -> Self {
        PerformerCfg {
            enabled: false,
            m: 64,
            seed: 1,
        }
    }
}

/// Multi-head attention body (pre-residual): heads of width d/heads, each
/// softmax attention or Performer per the flag.
pub fn multi_head_attend_tape(
    tape: &mut Tape,
    x: NodeId,
    leaves: &LocalAttnLeaves,
    heads: usize,
    performer: &PerformerCfg,
) -> Result<NodeId> {
    let (_, d) = tape.shape(x);
    if d % heads != 0 {
        return Err(Error::usage(format!(
            "token width {d} not divisible by {heads} heads"
        )));
    }
    let dh = d / heads;
    let wq_t = tape.transpose(leaves.wq);
    let wk_t = tape.transpose(leaves.wk);
    let wv_t = tape.transpose(leaves.wv);
    let q = tape.matmul(x, wq_t);
    let k = tape.matmul(x, wk_t);
    let v = tape.matmul(x, wv_t);
    let mut heads_out = None;
    for h in 0..heads {
        let qs = tape.slice_cols(q, h * dh, (h + 1) * dh);
        let ks = tape.slice_cols(k, h * dh, (h + 1) * dh);
        let vs = tape.slice_cols(v, h * dh, (h + 1) * dh);
        let o = if performer.enabled {
            performer_attention_tape(tape, qs, ks, vs, performer.m, performer.seed ^ h as u64)
        } else {
            let kt = tape.transpose(ks);
            let scores = tape.matmul(qs, kt);
            let scaled = tape.scale(scores, 1.0 / (dh as f64).sqrt());
            let attn = tape.softmax_rows(scaled);
            tape.matmul(attn, vs)
        };
        heads_out = Some(match heads_out {
            None => o,
            Some(acc) => tape.concat_cols(acc, o),
        });
    }
    let cat = heads_out.expect("at least one head");
    let wo_t = tape.transpose(leaves.wo);
    Ok(tape.matmul(cat, wo_t))
}

/// Full local self-attention: attend, residual add, layer norm.
pub fn local_self_attention_tape(
    tape: &mut Tape,
    x: NodeId,
    leaves: &LocalAttnLeaves,
    heads: usize,
    performer: &PerformerCfg,
) -> Result<NodeId> {
    let attended = multi_head_attend_tape(tape, x, leaves, heads, performer)?;
    let res = tape.add(x, attended);
    Ok(tape.layer_norm_rows(res, 1e-6))
}

/// Pre-residual attention body on plain matrices.
pub fn multi_head_attend(
    tokens: &Mat,
    params: &LocalAttnParams,
    heads: usize,
    performer: &PerformerCfg,
) -> Result<Mat> {
    let mut tape = Tape::new();
    let x = tape.constant(tokens.rows, tokens.cols, &tokens.data);
    let leaves = params.leaves(&mut tape);
    let out = multi_head_attend_tape(&mut tape, x, &leaves, heads, performer)?;
    Mat::new(tape.value(out).to_vec(), tokens.rows, tokens.cols)
}

pub fn local_self_attention(
    tokens: &Mat,
    params: &LocalAttnParams,
    heads: usize,
    performer: &PerformerCfg,
) -> Result<Mat> {
    let mut tape = Tape::new();
    let x = tape.constant(tokens.rows, tokens.cols, &tokens.data);
    let leaves = params.leaves(&mut tape);
    let out = local_self_attention_tape(&mut tape, x, &leaves, heads, performer)?;
    Mat::new(tape.value(out).to_vec(), tokens.rows, tokens.cols)
}

// ---------------------------------------------------------------------------
// CLS-guided pooling
// ---------------------------------------------------------------------------

/// Pool ray tokens with softmax weights scored against the CLS vector.
/// Returns (pooled, weights); weights sum to one.
pub fn cls_guided_pool(cls: &[f64], ray_tokens: &Mat) -> Result<(Vec<f64>, Vec<f64>)> {
    if cls.len() != ray_tokens.cols {
        return Err(Error::usage("cls width must match ray tokens"));
    }
    let m = ray_tokens.rows;
    let scale = 1.0 / (cls.len() as f64).sqrt();
    let scores: Vec<f64> = (0..m)
        .map(|i| {
            ray_tokens
                .row(i)
                .iter()
                .zip(cls)
                .map(|(a, b)| a * b)
                .sum::<f64>()
                * scale
        })
        .collect();
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    let weights: Vec<f64> = exps.iter().map(|e| e / z).collect();
    let mut pooled = vec![0.0; ray_tokens.cols];
    for (i, w) in weights.iter().enumerate() {
        for (p, x) in pooled.iter_mut().zip(ray_tokens.row(i)) {
            *p += w * x;
        }
    }
    Ok((pooled, weights))
}

// ---------------------------------------------------------------------------
// Attention-based ray tracing head
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct AttnRtParams {
    /// Ray token width d_s + 2 (emission features plus [w, T]).
    pub d: usize,
    pub l_dir: usize,
    pub l_global: usize,
    pub out: usize,
    pub ray_embed_w: Vec<f64>,
    pub ray_embed_b: Vec<f64>,
    pub cls_proj_w: Vec<f64>,
    pub cls_proj_b: Vec<f64>,
    pub attn: LocalAttnParams,
    pub head_w: Vec<f64>,
    pub head_b: Vec<f64>,
    pub performer: PerformerCfg,
}

pub struct AttnRtLeaves {
    pub ray_embed_w: NodeId,
    pub ray_embed_b: NodeId,
    pub cls_proj_w: NodeId,
    pub cls_proj_b: NodeId,
    pub attn: LocalAttnLeaves,
    pub head_w: NodeId,
    pub head_b: NodeId,
}

impl AttnRtParams {
    pub fn leaves(&self, tape: &mut Tape) -> AttnRtLeaves {
        AttnRtLeaves {
            ray_embed_w: tape.param(self.d, self.l_dir, &self.ray_embed_w),
            ray_embed_b: tape.param(1, self.d, &self.ray_embed_b),
            cls_proj_w: tape.param(self.d, self.l_global, &self.cls_proj_w),
            cls_proj_b: tape.param(1, self.d, &self.cls_proj_b),
            attn: self.attn.leaves(tape),
            head_w: tape.param(self.out, 2 * self.d, &self.head_w),
            head_b: tape.param(1, self.out, &self.head_b),
        }
    }
}

/// Attention ray-tracing head on the tape.
///
/// xi (M*N, d_s), w and trans (M, N), view_enc (M, l_dir) constant,
/// cls (1, l_global). Output (1, out).
#[allow(clippy::too_many_arguments)]
pub fn attention_render_tape(
    tape: &mut Tape,
    xi: NodeId,
    w: NodeId,
    trans: NodeId,
    view_enc: NodeId,
    cls: NodeId,
    leaves: &AttnRtLeaves,
    bundle: &RayBundle,
    performer: &PerformerCfg,
) -> Result<NodeId> {
    let mn = bundle.sample_count();
    let w_col = tape.reshape(w, mn, 1);
    let t_col = tape.reshape(trans, mn, 1);
    let wt = tape.concat_cols(w_col, t_col);
    let feats = tape.concat_cols(xi, wt);
    let ray_tokens = tape.group_mean_rows(feats, bundle.samples_per_ray);
    let embed = tape.affine(view_enc, leaves.ray_embed_w, leaves.ray_embed_b);
    let tokens = tape.add(ray_tokens, embed);
    let attended = local_self_attention_tape(tape, tokens, &leaves.attn, ATTN_HEADS, performer)?;
    let cls_d = tape.affine(cls, leaves.cls_proj_w, leaves.cls_proj_b);
    let cls_col = tape.transpose(cls_d);
    let scores = tape.matmul(attended, cls_col);
    let (_, d) = tape.shape(attended);
    let scaled = tape.scale(scores, 1.0 / (d as f64).sqrt());
    let row = tape.transpose(scaled);
    let weights = tape.softmax_rows(row);
    let pooled = tape.matmul(weights, attended);
    let cat = tape.concat_cols(pooled, cls_d);
    Ok(tape.affine(cat, leaves.head_w, leaves.head_b))
}

/// Attention-based rendering from precomputed network outputs.
pub fn attention_render(
    tokens: &TokenSet,
    att: &AttenuationOut,
    sig: &SignalOut,
    bundle: &RayBundle,
    params: &AttnRtParams,
    mode: RenderMode,
) -> Result<RenderOut> {
    let mn = bundle.sample_count();
    if sig.d_s + 2 != params.d {
        return Err(Error::usage("attn-rt token width must be d_s + 2"));
    }
    if tokens.l_dir != params.l_dir || tokens.global_cls.len() != params.l_global {
        return Err(Error::usage("attn-rt params do not match token set"));
    }
    let mut tape = Tape::new();
    let xi = tape.constant(mn, sig.d_s, &sig.xi);
    let delta = tape.constant(mn, 1, &att.delta);
    let (trans, w) = transmittance_tape(&mut tape, delta, bundle);
    let view = tape.constant(bundle.rays, tokens.l_dir, &tokens.view_local);
    let cls = tape.constant(1, tokens.global_cls.len(), &tokens.global_cls);
    let leaves = params.leaves(&mut tape);
    let out = attention_render_tape(
        &mut tape,
        xi,
        w,
        trans,
        view,
        cls,
        &leaves,
        bundle,
        &params.performer,
    )?;
    RenderOut::decode(mode, tape.value(out))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transmittance_vacuum() {
        let t: Vec<f64> = (0..8).map(|i| i as f64 * 0.1).collect();
        let (trans, w) = transmittance_weights(&vec![0.0; 8], &t).unwrap();
        assert!(trans.iter().all(|&x| x == 1.0));
        assert!(w.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn transmittance_first_sample_is_one() {
        let (trans, w) = transmittance_weights(&[0.5, 0.25], &[0.0, 1.0]).unwrap();
        assert_eq!(trans[0], 1.0);
        assert!((w[0] - 0.5).abs() < 1e-15);
        assert!(trans[1] < 1.0);
    }

    #[test]
    fn transmittance_monotone_bounded() {
        let mut rng = Rng64::new(33);
        let mut t = vec![0.0];
        for _ in 0..63 {
            t.push(t.last().unwrap() + rng.range(0.001, 0.2));
        }
        let delta: Vec<f64> = (0..64).map(|_| rng.range(0.0, 3.0)).collect();
        let (trans, _) = transmittance_weights(&delta, &t).unwrap();
        for pair in trans.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-15);
        }
        assert!(trans.iter().all(|&x| (0.0..=1.0).contains(&x)));
    }

    #[test]
    fn transmittance_rejects_bad_t() {
        assert!(transmittance_weights(&[0.0, 0.0], &[1.0, 1.0]).is_err());
        assert!(transmittance_weights(&[0.0, 0.0], &[2.0, 1.0]).is_err());
        assert!(transmittance_weights(&[-0.1, 0.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn constant_density_converges_to_closed_form() {
        let delta = 2.0;
        let len = 1.0;
        let n = 4096;
        let t: Vec<f64> = (0..n).map(|i| len * i as f64 / (n - 1) as f64).collect();
        let (_, w) = transmittance_weights(&vec![delta; n], &t).unwrap();
        let total: f64 = w.iter().sum();
        let want = 1.0 - (-delta * len).exp();
        assert!((total - want).abs() < 1e-3, "{total} vs {want}");
    }

    #[test]
    fn riemann_error_halves_when_n_doubles() {
        let delta = 2.0f64;
        let len = 1.0;
        let want = 1.0 - (-delta * len).exp();
        let err = |n: usize| {
            let t: Vec<f64> = (0..n).map(|i| len * i as f64 / (n - 1) as f64).collect();
            let (_, w) = transmittance_weights(&vec![delta; n], &t).unwrap();
            (w.iter().sum::<f64>() - want).abs()
        };
        let e512 = err(512);
        let e1024 = err(1024);
        let e2048 = err(2048);
        for (a, b) in [(e512, e1024), (e1024, e2048)] {
            let ratio = a / b;
            assert!((1.6..=2.4).contains(&ratio), "halving ratio {ratio}");
        }
    }

    #[test]
    fn tape_transmittance_matches_pure() {
        let mut rng = Rng64::new(34);
        let bundle =
            crate::radiance::sample_rays([0.0; 3], 3, 5, 0.1, 2.0, 4, true).unwrap();
        let delta: Vec<f64> = (0..15).map(|_| rng.range(0.0, 2.0)).collect();
        let mut tape = Tape::new();
        let d = tape.constant(15, 1, &delta);
        let (trans, w) = transmittance_tape(&mut tape, d, &bundle);
        for ray in 0..3 {
            let (pt, pw) = transmittance_weights(
                &delta[ray * 5..(ray + 1) * 5],
                bundle.ray_t(ray),
            )
            .unwrap();
            for i in 0..5 {
                assert!((tape.value(trans)[ray * 5 + i] - pt[i]).abs() < 1e-14);
                assert!((tape.value(w)[ray * 5 + i] - pw[i]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn performer_zero_queries_average_values() {
        let mut rng = Rng64::new(35);
        let q = Mat::zeros(4, 8);
        let k = Mat::zeros(4, 8);
        let v = Mat::random(4, 8, &mut rng);
        let out = performer_attention(&q, &k, &v, 32, 3).unwrap();
        for r in 0..4 {
            for c in 0..8 {
                let mean: f64 = (0..4).map(|j| v.data[j * 8 + c]).sum::<f64>() / 4.0;
                assert!((out.data[r * 8 + c] - mean).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn performer_single_key_returns_value() {
        let mut rng = Rng64::new(36);
        let q = Mat::random(3, 6, &mut rng);
        let k = Mat::random(1, 6, &mut rng);
        let v = Mat::random(1, 6, &mut rng);
        let out = performer_attention(&q, &k, &v, 16, 5).unwrap();
        for r in 0..3 {
            for c in 0..6 {
                assert!((out.data[r * 6 + c] - v.data[c]).abs() < 1e-10);
            }
        }
    }

    /// Random tokens with unit-norm rows: the regime the attention heads
    /// operate in after layer normalisation, where the positive-feature
    /// kernel estimate is accurate.
    fn random_unit_rows(rows: usize, cols: usize, rng: &mut Rng64) -> Mat {
        let mut m = Mat::random(rows, cols, rng);
        for r in 0..rows {
            let n: f64 = m.row(r).iter().map(|x| x * x).sum::<f64>().sqrt();
            for c in 0..cols {
                m.data[r * cols + c] /= n;
            }
        }
        m
    }

    #[test]
    fn performer_error_small_and_monotone_in_m() {
        let mut medians = Vec::new();
        for m in [16usize, 64, 256] {
            let mut errs = Vec::new();
            for seed in 0..9 {
                let mut rng = Rng64::new(1000 + seed);
                let q = random_unit_rows(32, 16, &mut rng);
                let k = random_unit_rows(32, 16, &mut rng);
                let v = Mat::random(32, 16, &mut rng);
                let approx = performer_attention(&q, &k, &v, m, 77 + seed).unwrap();
                let exact = softmax_attention(&q, &k, &v).unwrap();
                let num: f64 = approx
                    .data
                    .iter()
                    .zip(&exact.data)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                let den: f64 = exact.data.iter().map(|x| x * x).sum();
                errs.push((num / den).sqrt());
            }
            errs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            medians.push(errs[errs.len() / 2]);
        }
        assert!(medians[2] < 0.1, "m=256 median {:.3}", medians[2]);
        assert!(medians[0] > medians[1] && medians[1] > medians[2], "{medians:?}");
    }

    #[test]
    fn performer_tape_matches_pure_on_mild_inputs() {
        let mut rng = Rng64::new(37);
        let q = Mat::new((0..24).map(|_| rng.range(-0.5, 0.5)).collect(), 4, 6).unwrap();
        let k = Mat::new((0..24).map(|_| rng.range(-0.5, 0.5)).collect(), 4, 6).unwrap();
        let v = Mat::random(4, 6, &mut rng);
        let pure = performer_attention(&q, &k, &v, 8, 9).unwrap();
        let mut tape = Tape::new();
        let qi = tape.constant(4, 6, &q.data);
        let ki = tape.constant(4, 6, &k.data);
        let vi = tape.constant(4, 6, &v.data);
        let out = performer_attention_tape(&mut tape, qi, ki, vi, 8, 9);
        for (a, b) in tape.value(out).iter().zip(&pure.data) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn local_attention_value_path_identity() {
        let mut rng = Rng64::new(38);
        let x = Mat::random(1, 20, &mut rng);
        let p = LocalAttnParams::identity(20);
        let attended = multi_head_attend(&x, &p, ATTN_HEADS, &PerformerCfg::default()).unwrap();
        for (a, b) in attended.data.iter().zip(&x.data) {
            assert!((a - b).abs() < 1e-12, "single token attends to itself");
        }
    }

    #[test]
    fn local_attention_identical_tokens_identical_outputs() {
        let mut rng = Rng64::new(39);
        let row: Vec<f64> = (0..20).map(|_| rng.normal()).collect();
        let mut data = Vec::new();
        for _ in 0..5 {
            data.extend_from_slice(&row);
        }
        let x = Mat::new(data, 5, 20).unwrap();
        let p = LocalAttnParams::random(20, &mut rng);
        let out = local_self_attention(&x, &p, ATTN_HEADS, &PerformerCfg::default()).unwrap();
        for r in 1..5 {
            for c in 0..20 {
                assert!((out.data[r * 20 + c] - out.data[c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn local_attention_rejects_bad_width() {
        let x = Mat::zeros(3, 7);
        let p = LocalAttnParams::random(7, &mut Rng64::new(40));
        assert!(local_self_attention(&x, &p, ATTN_HEADS, &PerformerCfg::default()).is_err());
    }

    #[test]
    fn softmax_and_performer_paths_agree() {
        let mut rng = Rng64::new(41);
        let x = random_unit_rows(12, 20, &mut rng);
        let p = LocalAttnParams::random(20, &mut rng);
        let soft = multi_head_attend(&x, &p, ATTN_HEADS, &PerformerCfg::default()).unwrap();
        let perf = multi_head_attend(
            &x,
            &p,
            ATTN_HEADS,
            &PerformerCfg {
                enabled: true,
                m: 256,
                seed: 4,
            },
        )
        .unwrap();
        let num: f64 = soft
            .data
            .iter()
            .zip(&perf.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let den: f64 = soft.data.iter().map(|x| x * x).sum();
        assert!((num / den).sqrt() < 0.1, "paths differ too much");
    }

    #[test]
    fn cls_pool_degenerate_and_uniform() {
        let mut rng = Rng64::new(42);
        let tok = Mat::random(1, 6, &mut rng);
        let cls: Vec<f64> = (0..6).map(|_| rng.normal()).collect();
        let (pooled, w) = cls_guided_pool(&cls, &tok).unwrap();
        assert_eq!(w, vec![1.0]);
        assert_eq!(pooled, tok.data);

        let row: Vec<f64> = (0..6).map(|_| rng.normal()).collect();
        let mut data = Vec::new();
        for _ in 0..4 {
            data.extend_from_slice(&row);
        }
        let toks = Mat::new(data, 4, 6).unwrap();
        let (_, w) = cls_guided_pool(&cls, &toks).unwrap();
        for wi in &w {
            assert!((wi - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn cls_pool_matches_direct_oracle() {
        let mut rng = Rng64::new(43);
        let toks = Mat::random(5, 8, &mut rng);
        let cls: Vec<f64> = (0..8).map(|_| rng.normal()).collect();
        let (pooled, w) = cls_guided_pool(&cls, &toks).unwrap();
        // direct softmax-pool oracle
        let scale = 1.0 / (8.0f64).sqrt();
        let scores: Vec<f64> = (0..5)
            .map(|i| toks.row(i).iter().zip(&cls).map(|(a, b)| a * b).sum::<f64>() * scale)
            .collect();
        let z: f64 = scores.iter().map(|s| s.exp()).sum();
        let mut want = vec![0.0; 8];
        for i in 0..5 {
            let wi = scores[i].exp() / z;
            assert!((w[i] - wi).abs() < 1e-12);
            for c in 0..8 {
                want[c] += wi * toks.data[i * 8 + c];
            }
        }
        for (p, q) in pooled.iter().zip(&want) {
            assert!((p - q).abs() < 1e-12);
        }
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        // pooled output lies in the convex hull: min <= pooled <= max per dim
        for c in 0..8 {
            let col: Vec<f64> = (0..5).map(|i| toks.data[i * 8 + c]).collect();
            let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            assert!(pooled[c] >= lo - 1e-12 && pooled[c] <= hi + 1e-12);
        }
    }

    #[test]
    fn render_decode_modes() {
        let out = RenderOut::decode(RenderMode::Rssi, &[-42.5]).unwrap();
        assert_eq!(out, RenderOut::Rssi(-42.5));
        let out = RenderOut::decode(RenderMode::Csi, &[2.0, 1.0, 0.0, std::f64::consts::PI]).unwrap();
        if let RenderOut::Csi(h) = out {
            assert!((h[0].re - 2.0).abs() < 1e-15);
            assert!((h[1].re + 1.0).abs() < 1e-12);
        } else {
            panic!("expected csi");
        }
        assert!(RenderOut::decode(RenderMode::Rssi, &[1.0, 2.0]).is_err());
    }
}
