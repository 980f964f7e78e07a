//! GATr-style equivariant encoder over multivector-valued tokens.
//!
//! Tokens are `(T, n_c, 16)` arrays with a designated `[CLS]` token at index
//! 0. Three building blocks keep the whole stack equivariant to spatial
//! rotor sandwiches:
//!
//! * [`equi_linear`] mixes channels with one matrix per grade, acting
//!   identically on every blade within a grade;
//! * [`mv_layernorm`] rescales each token by an invariant magnitude;
//! * [`geometric_attention`] scores tokens with the metric-weighted
//!   invariant inner product (null blades drop out under PGA) scaled by
//!   `1/sqrt(8 n_c)`, then softmax-averages values.
//!
//! A block is `norm -> linear(q,k,v) -> attention -> residual -> norm ->
//! linear -> scalar gate -> residual`; the gate multiplies every blade of a
//! channel by GELU of its scalar part, the only pointwise nonlinearity that
//! survives equivariance. The pure entry points below run on a scratch
//! [`Tape`], so training and inference share one implementation.

use crate::error::{Error, Result};
use crate::ga::{self, Multivector, Signature, BLADE_COUNT};
use crate::rng::Rng64;
use crate::tape::{NodeId, Tape};

// ---------------------------------------------------------------------------
// Token container
// ---------------------------------------------------------------------------

/// Multivector tokens: `(tokens, channels, 16)`, row-major, blades fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct MvTokens {
    pub data: Vec<f64>,
    pub tokens: usize,
    pub channels: usize,
}

impl MvTokens {
    pub fn zeros(tokens: usize, channels: usize) -> Self {
        MvTokens {
            data: vec![0.0; tokens * channels * BLADE_COUNT],
            tokens,
            channels,
        }
    }

    pub fn new(data: Vec<f64>, tokens: usize, channels: usize) -> Result<Self> {
        if data.len() != tokens * channels * BLADE_COUNT {
            return Err(Error::usage(format!(
                "token data length {} does not match {tokens}x{channels}x16",
                data.len()
            )));
        }
        if !data.iter().all(|x| x.is_finite()) {
            return Err(Error::usage("token data must be finite"));
        }
        Ok(MvTokens {
            data,
            tokens,
            channels,
        })
    }

    pub fn width(&self) -> usize {
        self.channels * BLADE_COUNT
    }

    pub fn get(&self, token: usize, channel: usize) -> Multivector {
        let off = (token * self.channels + channel) * BLADE_COUNT;
        let mut c = [0.0; BLADE_COUNT];
        c.copy_from_slice(&self.data[off..off + BLADE_COUNT]);
        Multivector(c)
    }

    pub fn set(&mut self, token: usize, channel: usize, mv: &Multivector) {
        let off = (token * self.channels + channel) * BLADE_COUNT;
        self.data[off..off + BLADE_COUNT].copy_from_slice(&mv.0);
    }

    /// Sandwich every token-channel multivector by the same versor.
    pub fn sandwich_all(&self, versor: &Multivector, sig: &Signature) -> Result<MvTokens> {
        let mut out = self.clone();
        for t in 0..self.tokens {
            for c in 0..self.channels {
                let mv = ga::sandwich_apply(versor, &self.get(t, c), sig, false)?;
                out.set(t, c, &mv);
            }
        }
        Ok(out)
    }

    pub fn approx_eq(&self, other: &MvTokens, tol: f64) -> bool {
        self.tokens == other.tokens
            && self.channels == other.channels
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| (a - b).abs() <= tol)
    }

    pub fn random(tokens: usize, channels: usize, rng: &mut Rng64) -> Self {
        let data = (0..tokens * channels * BLADE_COUNT)
            .map(|_| rng.normal())
            .collect();
        MvTokens {
            data,
            tokens,
            channels,
        }
    }
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

/// Per-grade channel mixing matrices (plus the optional e4-multiplication
/// path, PGA only).
#[derive(Clone, Debug)]
pub struct EquiLinearParams {
    pub in_channels: usize,
    pub out_channels: usize,
    /// One (out_channels x in_channels) matrix per grade 0..=4.
    pub grades: [Vec<f64>; 5],
    pub e4: Option<Vec<f64>>,
}

impl EquiLinearParams {
    pub fn zeros(in_channels: usize, out_channels: usize, e4_path: bool) -> Self {
        let m = vec![0.0; in_channels * out_channels];
        EquiLinearParams {
            in_channels,
            out_channels,
            grades: [m.clone(), m.clone(), m.clone(), m.clone(), m.clone()],
            e4: e4_path.then(|| vec![0.0; in_channels * out_channels]),
        }
    }

    pub fn random(in_channels: usize, out_channels: usize, e4_path: bool, rng: &mut Rng64) -> Self {
        let scale = 1.0 / (in_channels as f64).sqrt();
        let mut draw = || -> Vec<f64> {
            (0..in_channels * out_channels)
                .map(|_| rng.normal() * scale)
                .collect()
        };
        EquiLinearParams {
            in_channels,
            out_channels,
            grades: [draw(), draw(), draw(), draw(), draw()],
            e4: e4_path.then(draw),
        }
    }

    /// Square identity mixing on every grade.
    pub fn identity(channels: usize) -> Self {
        let mut m = vec![0.0; channels * channels];
        for c in 0..channels {
            m[c * channels + c] = 1.0;
        }
        EquiLinearParams {
            in_channels: channels,
            out_channels: channels,
            grades: [m.clone(), m.clone(), m.clone(), m.clone(), m.clone()],
            e4: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct BlockParams {
    /// n_c -> 3 n_c, split into q, k, v.
    pub qkv: EquiLinearParams,
    /// n_c -> n_c, gated by the scalar part.
    pub out: EquiLinearParams,
}

#[derive(Clone, Debug)]
pub struct EncoderParams {
    pub channels: usize,
    pub blocks: Vec<BlockParams>,
    /// Learned scalar content of the CLS token, one value per channel.
    /// Scalar-only content is rotor-invariant, so a constant CLS seed does
    /// not break equivariance.
    pub cls_seed: Vec<f64>,
}

impl EncoderParams {
    pub fn depth(&self) -> usize {
        self.blocks.len()
    }

    pub fn random(channels: usize, depth: usize, e4_path: bool, rng: &mut Rng64) -> Self {
        let blocks = (0..depth)
            .map(|_| BlockParams {
                qkv: EquiLinearParams::random(channels, 3 * channels, e4_path, rng),
                out: EquiLinearParams::random(channels, channels, e4_path, rng),
            })
            .collect();
        EncoderParams {
            channels,
            blocks,
            cls_seed: (0..channels).map(|_| rng.normal()).collect(),
        }
    }

    /// Stack that acts as the identity map: all residual branches vanish.
    pub fn identity(channels: usize, depth: usize) -> Self {
        let blocks = (0..depth)
            .map(|_| BlockParams {
                qkv: EquiLinearParams::zeros(channels, 3 * channels, false),
                out: EquiLinearParams::zeros(channels, channels, false),
            })
            .collect();
        EncoderParams {
            channels,
            blocks,
            cls_seed: vec![0.0; channels],
        }
    }
}

// ---------------------------------------------------------------------------
// Tape-level building blocks
// ---------------------------------------------------------------------------

pub struct EquiLinLeaves {
    pub grades: [NodeId; 5],
    pub e4: Option<NodeId>,
}

pub struct BlockLeaves {
    pub qkv: EquiLinLeaves,
    pub out: EquiLinLeaves,
}

pub struct EncoderLeaves {
    pub blocks: Vec<BlockLeaves>,
}

/// Push parameter matrices of one equi-linear layer onto the tape as
/// constants (inference) or params (training handles this itself).
fn lin_leaves(tape: &mut Tape, p: &EquiLinearParams) -> EquiLinLeaves {
    let g = |tape: &mut Tape, m: &Vec<f64>| tape.param(p.out_channels, p.in_channels, m);
    EquiLinLeaves {
        grades: [
            g(tape, &p.grades[0]),
            g(tape, &p.grades[1]),
            g(tape, &p.grades[2]),
            g(tape, &p.grades[3]),
            g(tape, &p.grades[4]),
        ],
        e4: p.e4.as_ref().map(|m| g(tape, m)),
    }
}

/// Blade map of left multiplication by e4 under the given signature.
pub fn e4_mul_map(sig: &Signature) -> Vec<(usize, usize, f64)> {
    let e4 = Multivector::e(4);
    let mut map = Vec::new();
    for bi in 0..BLADE_COUNT {
        let prod = ga::geometric_product(&e4, &Multivector::basis(bi), sig);
        for (bo, &c) in prod.0.iter().enumerate() {
            if c != 0.0 {
                map.push((bo, bi, c));
            }
        }
    }
    map
}

pub fn equi_linear_tape(
    tape: &mut Tape,
    x: NodeId,
    leaves: &EquiLinLeaves,
    in_c: usize,
    out_c: usize,
    sig: &Signature,
) -> NodeId {
    let y = tape.per_grade_linear(x, leaves.grades, in_c, out_c);
    match leaves.e4 {
        Some(w) => {
            let map = e4_mul_map(sig);
            let y2 = tape.blade_mix(x, w, &map, in_c, out_c);
            tape.add(y, y2)
        }
        None => y,
    }
}

/// Token-wise scaling by 1/sqrt(mean over channels of |x_c|^2 + eps).
pub fn mv_layernorm_tape(tape: &mut Tape, x: NodeId, channels: usize) -> NodeId {
    let sq = tape.mul(x, x);
    let sums = tape.row_sums(sq);
    let mean = tape.scale(sums, 1.0 / channels as f64);
    let eps = tape.add_scalar(mean, MV_NORM_EPS);
    let root = tape.sqrt(eps);
    let inv = tape.recip(root);
    tape.scale_rows(x, inv)
}

pub const MV_NORM_EPS: f64 = 1e-6;

/// Invariant-inner-product attention with 1/sqrt(8 n_c) scaling.
pub fn geometric_attention_tape(
    tape: &mut Tape,
    q: NodeId,
    k: NodeId,
    v: NodeId,
    channels: usize,
    sig: &Signature,
) -> NodeId {
    let (t_len, _) = tape.shape(q);
    let metric = sig.blade_metric();
    let mut mask_row = Vec::with_capacity(channels * BLADE_COUNT);
    for _ in 0..channels {
        mask_row.extend_from_slice(&metric);
    }
    let mask = tape.constant(1, channels * BLADE_COUNT, &mask_row);
    let mask_full = tape.repeat_rows(mask, t_len);
    let k_masked = tape.mul(k, mask_full);
    let kt = tape.transpose(k_masked);
    let scores = tape.matmul(q, kt);
    let scaled = tape.scale(scores, 1.0 / (8.0 * channels as f64).sqrt());
    let attn = tape.softmax_rows(scaled);
    tape.matmul(attn, v)
}

/// Multiply every blade of a channel by GELU of the channel's scalar part.
fn scalar_gate_tape(tape: &mut Tape, x: NodeId, channels: usize) -> NodeId {
    let mut gates = None;
    for c in 0..channels {
        let s = tape.slice_cols(x, c * BLADE_COUNT, c * BLADE_COUNT + 1);
        gates = Some(match gates {
            None => s,
            Some(g) => tape.concat_cols(g, s),
        });
    }
    let gates = tape.gelu(gates.expect("channels >= 1"));
    // expand (T, C) -> (T, C*16) with a fixed 0/1 matrix
    let mut expand = vec![0.0; channels * channels * BLADE_COUNT];
    for c in 0..channels {
        for b in 0..BLADE_COUNT {
            expand[c * channels * BLADE_COUNT + c * BLADE_COUNT + b] = 1.0;
        }
    }
    let e = tape.constant(channels, channels * BLADE_COUNT, &expand);
    let wide = tape.matmul(gates, e);
    tape.mul(x, wide)
}

/// Full encoder stack on the tape. `x` is (T, n_c*16) with CLS at row 0.
pub fn encode_tape(
    tape: &mut Tape,
    mut x: NodeId,
    leaves: &EncoderLeaves,
    channels: usize,
    sig: &Signature,
) -> NodeId {
    for block in &leaves.blocks {
        let h = mv_layernorm_tape(tape, x, channels);
        let qkv = equi_linear_tape(tape, h, &block.qkv, channels, 3 * channels, sig);
        let w = channels * BLADE_COUNT;
        let q = tape.slice_cols(qkv, 0, w);
        let k = tape.slice_cols(qkv, w, 2 * w);
        let v = tape.slice_cols(qkv, 2 * w, 3 * w);
        let attn = geometric_attention_tape(tape, q, k, v, channels, sig);
        x = tape.add(x, attn);
        let h2 = mv_layernorm_tape(tape, x, channels);
        let y = equi_linear_tape(tape, h2, &block.out, channels, channels, sig);
        let gated = scalar_gate_tape(tape, y, channels);
        x = tape.add(x, gated);
    }
    x
}

pub fn encoder_leaves(tape: &mut Tape, params: &EncoderParams) -> EncoderLeaves {
    EncoderLeaves {
        blocks: params
            .blocks
            .iter()
            .map(|b| BlockLeaves {
                qkv: lin_leaves(tape, &b.qkv),
                out: lin_leaves(tape, &b.out),
            })
            .collect(),
    }
}

// ---------------------------------------------------------------------------
// Pure entry points (scratch tape under the hood)
// ---------------------------------------------------------------------------

pub fn equi_linear(x: &MvTokens, p: &EquiLinearParams, sig: &Signature) -> Result<MvTokens> {
    if x.channels != p.in_channels {
        return Err(Error::usage(format!(
            "equi_linear: input has {} channels, params expect {}",
            x.channels, p.in_channels
        )));
    }
    let mut tape = Tape::new();
    let xid = tape.constant(x.tokens, x.width(), &x.data);
    let leaves = lin_leaves(&mut tape, p);
    let out = equi_linear_tape(&mut tape, xid, &leaves, p.in_channels, p.out_channels, sig);
    MvTokens::new(tape.value(out).to_vec(), x.tokens, p.out_channels)
}

pub fn mv_layernorm(x: &MvTokens) -> MvTokens {
    let mut tape = Tape::new();
    let xid = tape.constant(x.tokens, x.width(), &x.data);
    let out = mv_layernorm_tape(&mut tape, xid, x.channels);
    MvTokens {
        data: tape.value(out).to_vec(),
        tokens: x.tokens,
        channels: x.channels,
    }
}

pub fn geometric_attention(
    q: &MvTokens,
    k: &MvTokens,
    v: &MvTokens,
    sig: &Signature,
) -> Result<MvTokens> {
    if q.tokens != k.tokens || k.tokens != v.tokens || q.channels != k.channels
        || k.channels != v.channels
    {
        return Err(Error::usage(
            "geometric_attention: q, k, v must share token and channel counts",
        ));
    }
    let mut tape = Tape::new();
    let qid = tape.constant(q.tokens, q.width(), &q.data);
    let kid = tape.constant(k.tokens, k.width(), &k.data);
    let vid = tape.constant(v.tokens, v.width(), &v.data);
    let out = geometric_attention_tape(&mut tape, qid, kid, vid, q.channels, sig);
    MvTokens::new(tape.value(out).to_vec(), q.tokens, q.channels)
}

/// Row-stochastic attention weights of [`geometric_attention`], exposed for
/// property tests.
pub fn attention_weights(q: &MvTokens, k: &MvTokens, sig: &Signature) -> Vec<f64> {
    let metric = sig.blade_metric();
    let t = q.tokens;
    let mut weights = vec![0.0; t * t];
    let scale = 1.0 / (8.0 * q.channels as f64).sqrt();
    for i in 0..t {
        let mut max = f64::NEG_INFINITY;
        let mut scores = vec![0.0; t];
        for (j, s) in scores.iter_mut().enumerate() {
            let mut acc = 0.0;
            for c in 0..q.channels {
                let qi = q.get(i, c);
                let kj = k.get(j, c);
                for b in 0..BLADE_COUNT {
                    acc += metric[b] * qi.0[b] * kj.0[b];
                }
            }
            *s = acc * scale;
            max = max.max(*s);
        }
        let mut sum = 0.0;
        for (j, s) in scores.iter().enumerate() {
            let e = (s - max).exp();
            weights[i * t + j] = e;
            sum += e;
        }
        for j in 0..t {
            weights[i * t + j] /= sum;
        }
    }
    weights
}

/// Run `depth` encoder blocks and return (cls, tokens). The CLS token must
/// already sit at index 0 (tokenizers prepend it from `cls_seed`).
pub fn gatr_encode(
    scene_tokens: &MvTokens,
    depth: usize,
    params: &EncoderParams,
    sig: &Signature,
) -> Result<(MvTokens, MvTokens)> {
    if depth == 0 || depth != params.depth() {
        return Err(Error::usage(format!(
            "encoder depth {depth} does not match {} parameter blocks",
            params.depth()
        )));
    }
    if scene_tokens.channels != params.channels {
        return Err(Error::usage("encoder channel mismatch"));
    }
    let mut tape = Tape::new();
    let xid = tape.constant(scene_tokens.tokens, scene_tokens.width(), &scene_tokens.data);
    let leaves = encoder_leaves(&mut tape, params);
    let out = encode_tape(&mut tape, xid, &leaves, params.channels, sig);
    let all = MvTokens::new(tape.value(out).to_vec(), scene_tokens.tokens, params.channels)?;
    let cls = MvTokens::new(
        all.data[..params.channels * BLADE_COUNT].to_vec(),
        1,
        params.channels,
    )?;
    Ok((cls, all))
}

/// Fresh token array with the learned scalar CLS at index 0 followed by the
/// given geometric items, each placed in channel 0.
pub fn tokens_with_cls(items: &[Multivector], channels: usize, cls_seed: &[f64]) -> MvTokens {
    let mut tokens = MvTokens::zeros(items.len() + 1, channels);
    for (c, &s) in cls_seed.iter().enumerate() {
        let mut mv = Multivector::ZERO;
        mv.0[0] = s;
        tokens.set(0, c, &mv);
    }
    for (i, item) in items.iter().enumerate() {
        tokens.set(i + 1, 0, item);
    }
    tokens
}
