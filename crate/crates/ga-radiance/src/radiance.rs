//! Ray-in-ray-out field model: ray bundles backtraced from the receiver,
//! PowerMLP (RePU) layers, the eight-layer attenuation network with a mid
//! skip connection, FiLM conditioning, and the signal network.
//!
//! Rays are the fundamental input unit: a bundle holds M directions on a
//! deterministic Fibonacci lattice around the receiver and N strictly
//! increasing sample depths per ray. The attenuation network sees only
//! sample-position encodings, so the attenuation field is independent of the
//! transmitter; the signal network sees FiLM-modulated attenuation features
//! together with view direction, transmitter, and scene context.

use crate::error::{Error, Result};
use crate::rng::Rng64;
use crate::tape::{softplus, NodeId, Tape};
use crate::tokenizer::TokenSet;

// ---------------------------------------------------------------------------
// Ray bundles
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct RayBundle {
    pub rx: [f64; 3],
    /// M unit directions.
    pub directions: Vec<[f64; 3]>,
    /// M*N sample depths, ray-major, strictly increasing within each ray.
    pub t_samples: Vec<f64>,
    /// M*N sample positions rx + t * dir.
    pub positions: Vec<[f64; 3]>,
    pub rays: usize,
    pub samples_per_ray: usize,
}

impl RayBundle {
    pub fn new(
        rx: [f64; 3],
        directions: Vec<[f64; 3]>,
        t_samples: Vec<f64>,
        samples_per_ray: usize,
    ) -> Result<Self> {
        let rays = directions.len();
        if rays == 0 || samples_per_ray < 2 {
            return Err(Error::usage("ray bundle needs >= 1 ray and >= 2 samples"));
        }
        if t_samples.len() != rays * samples_per_ray {
            return Err(Error::usage("t_samples length mismatch"));
        }
        for d in &directions {
            let n = (d.iter().map(|c| c * c).sum::<f64>()).sqrt();
            if (n - 1.0).abs() > 1e-9 {
                return Err(Error::usage(format!("direction not unit: |d| = {n}")));
            }
        }
        for r in 0..rays {
            let row = &t_samples[r * samples_per_ray..(r + 1) * samples_per_ray];
            if row[0] < 0.0 {
                return Err(Error::usage("t samples must start at t >= 0"));
            }
            for w in row.windows(2) {
                if w[1] <= w[0] {
                    return Err(Error::usage("t samples must be strictly increasing"));
                }
            }
        }
        let mut positions = Vec::with_capacity(rays * samples_per_ray);
        for (r, d) in directions.iter().enumerate() {
            for i in 0..samples_per_ray {
                let t = t_samples[r * samples_per_ray + i];
                positions.push([rx[0] + t * d[0], rx[1] + t * d[1], rx[2] + t * d[2]]);
            }
        }
        Ok(RayBundle {
            rx,
            directions,
            t_samples,
            positions,
            rays,
            samples_per_ray,
        })
    }

    pub fn sample_count(&self) -> usize {
        self.rays * self.samples_per_ray
    }

    pub fn ray_t(&self, ray: usize) -> &[f64] {
        &self.t_samples[ray * self.samples_per_ray..(ray + 1) * self.samples_per_ray]
    }
}

/// Deterministic Fibonacci-sphere lattice; the seed rotates the lattice
/// about the z axis. With M = 1 the single direction sits on the equator at
/// the seed azimuth.
pub fn fibonacci_directions(m: usize, seed: u64) -> Vec<[f64; 3]> {
    let golden = std::f64::consts::PI * (3.0 - 5.0_f64.sqrt());
    let phi0 = 2.0 * std::f64::consts::PI * Rng64::stream(seed, 0x5EED).next_f64();
    (0..m)
        .map(|k| {
            let z = 1.0 - (2.0 * k as f64 + 1.0) / m as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let phi = golden * k as f64 + phi0;
            let v = [r * phi.cos(), r * phi.sin(), z];
            let n = (v.iter().map(|c| c * c).sum::<f64>()).sqrt();
            [v[0] / n, v[1] / n, v[2] / n]
        })
        .collect()
}

/// Backtrace M rays from the receiver with N samples each. Stratified
/// sampling jitters depths uniformly inside equal bins (seeded); without it
/// the depths are the inclusive linspace over [t_near, t_far].
pub fn sample_rays(
    rx: [f64; 3],
    rays: usize,
    samples_per_ray: usize,
    t_near: f64,
    t_far: f64,
    seed: u64,
    stratified: bool,
) -> Result<RayBundle> {
    if rays < 1 || samples_per_ray < 2 {
        return Err(Error::usage("need rays >= 1 and samples >= 2"));
    }
    if !(0.0 <= t_near && t_near < t_far) {
        return Err(Error::usage(format!(
            "invalid sampling range [{t_near}, {t_far}]"
        )));
    }
    let directions = fibonacci_directions(rays, seed);
    let span = t_far - t_near;
    let mut t_samples = Vec::with_capacity(rays * samples_per_ray);
    let mut rng = Rng64::stream(seed, SAMPLE_TAG);
    for _ in 0..rays {
        for i in 0..samples_per_ray {
            let t = if stratified {
                t_near + span * (i as f64 + rng.next_f64()) / samples_per_ray as f64
            } else {
                t_near + span * i as f64 / (samples_per_ray - 1) as f64
            };
            t_samples.push(t);
        }
    }
    RayBundle::new(rx, directions, t_samples, samples_per_ray)
}

const SAMPLE_TAG: u64 = 0x54_53_41_4D_50;

// ---------------------------------------------------------------------------
// RePU / PowerMLP
// ---------------------------------------------------------------------------

/// Rectified power unit (max(0, x))^p.
pub fn repu(x: f64, p: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        x.powf(p)
    }
}

/// Effective exponent from the raw trainable parameter: p = 1 + softplus(raw)
/// keeps p >= 1 and differentiable.
pub fn repu_exponent(p_raw: f64) -> f64 {
    1.0 + softplus(p_raw)
}

/// Raw parameter whose effective exponent is 2 (softplus(raw) = 1).
pub const P_RAW_FOR_P2: f64 = 0.541_324_854_612_918_3;

/// One PowerMLP hidden layer: repu(W x + b)^p plus a parallel affine path
/// U x + c summed in.
#[derive(Clone, Debug)]
pub struct PowerMlpLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub u: Vec<f64>,
    pub c: Vec<f64>,
    pub p_raw: f64,
}

impl PowerMlpLayer {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        PowerMlpLayer {
            in_dim,
            out_dim,
            w: vec![0.0; in_dim * out_dim],
            b: vec![0.0; out_dim],
            u: vec![0.0; in_dim * out_dim],
            c: vec![0.0; out_dim],
            p_raw: P_RAW_FOR_P2,
        }
    }
}

/// PowerMLP: hidden RePU-plus-linear layers, affine-only final layer.
#[derive(Clone, Debug)]
pub struct PowerMlpParams {
    pub hidden: Vec<PowerMlpLayer>,
    pub out_w: Vec<f64>,
    pub out_b: Vec<f64>,
    pub out_dim: usize,
}

impl PowerMlpParams {
    pub fn in_dim(&self) -> usize {
        self.hidden
            .first()
            .map(|l| l.in_dim)
            .unwrap_or(self.out_w.len() / self.out_dim.max(1))
    }
}

pub struct PowerMlpLayerLeaves {
    pub w: NodeId,
    pub b: NodeId,
    pub u: NodeId,
    pub c: NodeId,
    pub p_raw: NodeId,
}

pub struct AffineLeaves {
    pub w: NodeId,
    pub b: NodeId,
}

pub fn power_layer_tape(tape: &mut Tape, x: NodeId, l: &PowerMlpLayerLeaves) -> NodeId {
    let a = tape.affine(x, l.w, l.b);
    let sp = tape.softplus(l.p_raw);
    let p = tape.add_scalar(sp, 1.0);
    let r = tape.repu(a, p);
    let par = tape.affine(x, l.u, l.c);
    tape.add(r, par)
}

pub fn power_mlp_tape(
    tape: &mut Tape,
    mut x: NodeId,
    hidden: &[PowerMlpLayerLeaves],
    out: &AffineLeaves,
) -> NodeId {
    for l in hidden {
        x = power_layer_tape(tape, x, l);
    }
    tape.affine(x, out.w, out.b)
}

fn layer_leaves(tape: &mut Tape, l: &PowerMlpLayer) -> PowerMlpLayerLeaves {
    PowerMlpLayerLeaves {
        w: tape.param(l.out_dim, l.in_dim, &l.w),
        b: tape.param(1, l.out_dim, &l.b),
        u: tape.param(l.out_dim, l.in_dim, &l.u),
        c: tape.param(1, l.out_dim, &l.c),
        p_raw: tape.param(1, 1, &[l.p_raw]),
    }
}

/// Evaluate a PowerMLP on one input vector.
pub fn power_mlp_forward(x: &[f64], params: &PowerMlpParams) -> Result<Vec<f64>> {
    let mut width = x.len();
    for (i, l) in params.hidden.iter().enumerate() {
        if l.in_dim != width {
            return Err(Error::usage(format!(
                "power_mlp layer {i}: expected input width {}, chain gives {width}",
                l.in_dim
            )));
        }
        width = l.out_dim;
    }
    if params.out_w.len() != params.out_dim * width {
        return Err(Error::usage("power_mlp: output layer width mismatch"));
    }
    let mut tape = Tape::new();
    let xid = tape.constant(1, x.len(), x);
    let hidden: Vec<PowerMlpLayerLeaves> =
        params.hidden.iter().map(|l| layer_leaves(&mut tape, l)).collect();
    let out = AffineLeaves {
        w: tape.param(params.out_dim, width, &params.out_w),
        b: tape.param(1, params.out_dim, &params.out_b),
    };
    let y = power_mlp_tape(&mut tape, xid, &hidden, &out);
    Ok(tape.value(y).to_vec())
}

/// Elementwise gamma * h + beta.
pub fn film_modulate(h: &[f64], gamma: &[f64], beta: &[f64]) -> Result<Vec<f64>> {
    if h.len() != gamma.len() || h.len() != beta.len() {
        return Err(Error::usage(format!(
            "film_modulate: lengths {} / {} / {} differ",
            h.len(),
            gamma.len(),
            beta.len()
        )));
    }
    Ok(h.iter()
        .zip(gamma)
        .zip(beta)
        .map(|((hv, g), b)| g * hv + b)
        .collect())
}

// ---------------------------------------------------------------------------
// Attenuation network
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct AttenuationOut {
    /// Per-sample attenuation, M*N, nonnegative.
    pub delta: Vec<f64>,
    /// Per-sample features, (M*N, d_f) row-major.
    pub feature: Vec<f64>,
    pub d_f: usize,
}

#[derive(Clone, Debug)]
pub struct AttenuationParams {
    /// Hidden PowerMLP layers; the layer at `skip_at` receives the original
    /// input concatenated to the running features.
    pub layers: Vec<PowerMlpLayer>,
    pub skip_at: usize,
    pub delta_w: Vec<f64>,
    pub delta_b: f64,
    pub delta_p_raw: f64,
    pub f_w: Vec<f64>,
    pub f_b: Vec<f64>,
    pub d_f: usize,
}

pub struct AttenuationLeaves {
    pub layers: Vec<PowerMlpLayerLeaves>,
    pub skip_at: usize,
    pub delta_w: NodeId,
    pub delta_b: NodeId,
    pub delta_p_raw: NodeId,
    pub feat: AffineLeaves,
}

/// Attenuation network on the tape. `local` is (M*N, l_local); returns
/// (delta (M*N, 1), feature (M*N, d_f)). The delta head is a RePU so the
/// field is nonnegative for every parameter value.
pub fn attenuation_tape(
    tape: &mut Tape,
    local: NodeId,
    leaves: &AttenuationLeaves,
) -> (NodeId, NodeId) {
    let mut h = local;
    for (i, l) in leaves.layers.iter().enumerate() {
        if i == leaves.skip_at {
            h = tape.concat_cols(h, local);
        }
        h = power_layer_tape(tape, h, l);
    }
    let a = tape.affine(h, leaves.delta_w, leaves.delta_b);
    let sp = tape.softplus(leaves.delta_p_raw);
    let p = tape.add_scalar(sp, 1.0);
    let delta = tape.repu(a, p);
    let feat = tape.affine(h, leaves.feat.w, leaves.feat.b);
    (delta, feat)
}

impl AttenuationParams {
    pub fn leaves(&self, tape: &mut Tape) -> AttenuationLeaves {
        let width = self.layers.last().map(|l| l.out_dim).unwrap_or(0);
        AttenuationLeaves {
            layers: self.layers.iter().map(|l| layer_leaves(tape, l)).collect(),
            skip_at: self.skip_at,
            delta_w: tape.param(1, width, &self.delta_w),
            delta_b: tape.param(1, 1, &[self.delta_b]),
            delta_p_raw: tape.param(1, 1, &[self.delta_p_raw]),
            feat: AffineLeaves {
                w: tape.param(self.d_f, width, &self.f_w),
                b: tape.param(1, self.d_f, &self.f_b),
            },
        }
    }
}

/// Per-sample attenuation from the token set's local embeddings. Delta
/// depends only on sample-position encodings, never on the transmitter.
pub fn attenuation_forward(
    tokens: &TokenSet,
    bundle: &RayBundle,
    params: &AttenuationParams,
) -> Result<AttenuationOut> {
    let mn = bundle.sample_count();
    if tokens.local.len() != mn * tokens.l_local {
        return Err(Error::usage(
            "token set local embeddings do not match the ray bundle",
        ));
    }
    let mut tape = Tape::new();
    let local = tape.constant(mn, tokens.l_local, &tokens.local);
    let leaves = params.leaves(&mut tape);
    let (delta, feat) = attenuation_tape(&mut tape, local, &leaves);
    Ok(AttenuationOut {
        delta: tape.value(delta).to_vec(),
        feature: tape.value(feat).to_vec(),
        d_f: params.d_f,
    })
}

// ---------------------------------------------------------------------------
// Signal network
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct SignalOut {
    /// Per-sample emission representation, (M*N, d_s) row-major.
    pub xi: Vec<f64>,
    pub d_s: usize,
}

#[derive(Clone, Debug)]
pub struct SignalParams {
    /// FiLM generator: 2-layer MLP ctx -> hidden -> (gamma | beta).
    pub film_w1: Vec<f64>,
    pub film_b1: Vec<f64>,
    pub film_w2: Vec<f64>,
    pub film_b2: Vec<f64>,
    pub film_hidden: usize,
    pub layers: Vec<PowerMlpLayer>,
    pub out_w: Vec<f64>,
    pub out_b: Vec<f64>,
    pub d_f: usize,
    pub d_s: usize,
}

pub struct SignalLeaves {
    pub film1: AffineLeaves,
    pub film2: AffineLeaves,
    pub layers: Vec<PowerMlpLayerLeaves>,
    pub out: AffineLeaves,
    pub d_f: usize,
}

/// Signal network: FiLM(f; ctx) concatenated with ctx, through the PowerMLP
/// stack, to the emission representation xi.
pub fn signal_tape(tape: &mut Tape, f: NodeId, ctx: NodeId, leaves: &SignalLeaves) -> NodeId {
    let h1 = tape.affine(ctx, leaves.film1.w, leaves.film1.b);
    let h1 = tape.gelu(h1);
    let gb = tape.affine(h1, leaves.film2.w, leaves.film2.b);
    let gamma = tape.slice_cols(gb, 0, leaves.d_f);
    let beta = tape.slice_cols(gb, leaves.d_f, 2 * leaves.d_f);
    let scaled = tape.mul(gamma, f);
    let modulated = tape.add(scaled, beta);
    let x = tape.concat_cols(modulated, ctx);
    let mut h = x;
    for l in &leaves.layers {
        h = power_layer_tape(tape, h, l);
    }
    tape.affine(h, leaves.out.w, leaves.out.b)
}

impl SignalParams {
    pub fn leaves(&self, tape: &mut Tape) -> SignalLeaves {
        let ctx_w = self.film_w1.len() / self.film_hidden;
        let width = self.layers.last().map(|l| l.out_dim).unwrap_or(0);
        SignalLeaves {
            film1: AffineLeaves {
                w: tape.param(self.film_hidden, ctx_w, &self.film_w1),
                b: tape.param(1, self.film_hidden, &self.film_b1),
            },
            film2: AffineLeaves {
                w: tape.param(2 * self.d_f, self.film_hidden, &self.film_w2),
                b: tape.param(1, 2 * self.d_f, &self.film_b2),
            },
            layers: self.layers.iter().map(|l| layer_leaves(tape, l)).collect(),
            out: AffineLeaves {
                w: tape.param(self.d_s, width, &self.out_w),
                b: tape.param(1, self.d_s, &self.out_b),
            },
            d_f: self.d_f,
        }
    }
}

/// Build the per-sample context matrix [view_local | tx_local | extra |
/// global_cls] for a bundle: rows are samples, the view row repeats per ray.
pub fn sample_context(tokens: &TokenSet, bundle: &RayBundle, extra: &[f64]) -> Vec<f64> {
    let n = bundle.samples_per_ray;
    let width = tokens.l_dir + tokens.tx_local.len() + extra.len() + tokens.global_cls.len();
    let mut ctx = Vec::with_capacity(bundle.sample_count() * width);
    for ray in 0..bundle.rays {
        let view = &tokens.view_local[ray * tokens.l_dir..(ray + 1) * tokens.l_dir];
        for _ in 0..n {
            ctx.extend_from_slice(view);
            ctx.extend_from_slice(&tokens.tx_local);
            ctx.extend_from_slice(extra);
            ctx.extend_from_slice(&tokens.global_cls);
        }
    }
    ctx
}

pub fn signal_forward(
    tokens: &TokenSet,
    att: &AttenuationOut,
    bundle: &RayBundle,
    params: &SignalParams,
) -> Result<SignalOut> {
    let mn = bundle.sample_count();
    if att.feature.len() != mn * att.d_f || att.d_f != params.d_f {
        return Err(Error::usage(
            "attenuation features do not match the signal network",
        ));
    }
    let ctx = sample_context(tokens, bundle, &[]);
    let ctx_w = ctx.len() / mn;
    let mut tape = Tape::new();
    let f = tape.constant(mn, att.d_f, &att.feature);
    let c = tape.constant(mn, ctx_w, &ctx);
    let leaves = params.leaves(&mut tape);
    let xi = signal_tape(&mut tape, f, c, &leaves);
    Ok(SignalOut {
        xi: tape.value(xi).to_vec(),
        d_s: params.d_s,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn repu_examples() {
        assert_eq!(repu(3.0, 2.0), 9.0);
        assert_eq!(repu(-1.0, 2.0), 0.0);
        assert_eq!(repu(-1.0, 5.5), 0.0);
        for x in [-2.0, -0.5, 0.0, 0.5, 2.0] {
            assert_eq!(repu(x, 1.0), f64::max(0.0, x));
        }
    }

    #[test]
    fn repu_continuous_at_zero() {
        for p in [1.0, 1.5, 2.0, 3.0] {
            let mut eps = 0.1;
            let mut last = f64::INFINITY;
            for _ in 0..8 {
                let gap = (repu(eps, p) - repu(-eps, p)).abs();
                assert!(gap <= last + 1e-15);
                last = gap;
                eps *= 0.1;
            }
            assert!(last < 1e-6);
        }
    }

    #[test]
    fn repu_exponent_floor() {
        assert!((repu_exponent(P_RAW_FOR_P2) - 2.0).abs() < 1e-12);
        for raw in [-50.0, -5.0, 0.0, 5.0] {
            assert!(repu_exponent(raw) >= 1.0);
        }
    }

    #[test]
    fn sample_rays_endpoints_without_stratification() {
        let b = sample_rays([0.0; 3], 1, 2, 0.5, 2.0, 0, false).unwrap();
        assert_eq!(b.ray_t(0), &[0.5, 2.0]);
    }

    #[test]
    fn sample_rays_single_ray_collinear() {
        let rx = [1.0, 2.0, 3.0];
        let b = sample_rays(rx, 1, 4, 0.1, 5.0, 0, false).unwrap();
        let d = b.directions[0];
        // equatorial direction for M = 1
        assert!(d[2].abs() < 1e-12);
        for (i, p) in b.positions.iter().enumerate() {
            let t = b.t_samples[i];
            for k in 0..3 {
                assert!((p[k] - (rx[k] + t * d[k])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sample_rays_lattice_is_balanced() {
        let b = sample_rays([0.0; 3], 64, 2, 0.0, 1.0, 3, false).unwrap();
        let mut mean = [0.0; 3];
        for d in &b.directions {
            for k in 0..3 {
                mean[k] += d[k] / 64.0;
            }
        }
        let norm = (mean.iter().map(|c| c * c).sum::<f64>()).sqrt();
        assert!(norm < 0.05, "lattice mean {norm}");
        // pairwise minimum angular distance strictly positive
        let mut min_dot: f64 = -1.0;
        for i in 0..64 {
            for j in 0..i {
                let dot: f64 = (0..3).map(|k| b.directions[i][k] * b.directions[j][k]).sum();
                min_dot = min_dot.max(dot);
            }
        }
        assert!(min_dot < 1.0 - 1e-6, "duplicate directions");
    }

    #[test]
    fn sample_rays_stratified_strictly_increasing() {
        let b = sample_rays([0.0; 3], 4, 16, 0.0, 3.0, 11, true).unwrap();
        for r in 0..4 {
            for w in b.ray_t(r).windows(2) {
                assert!(w[1] > w[0]);
            }
        }
    }

    #[test]
    fn sample_rays_rejects_bad_ranges() {
        assert!(sample_rays([0.0; 3], 1, 2, -0.1, 1.0, 0, false).is_err());
        assert!(sample_rays([0.0; 3], 1, 2, 1.0, 1.0, 0, false).is_err());
        assert!(sample_rays([0.0; 3], 0, 2, 0.0, 1.0, 0, false).is_err());
        assert!(sample_rays([0.0; 3], 1, 1, 0.0, 1.0, 0, false).is_err());
    }

    #[test]
    fn power_mlp_zero_weights_give_bias() {
        let params = PowerMlpParams {
            hidden: vec![PowerMlpLayer::zeros(3, 4)],
            out_w: vec![0.0; 8],
            out_b: vec![0.7, -0.2],
            out_dim: 2,
        };
        let y = power_mlp_forward(&[1.0, 2.0, 3.0], &params).unwrap();
        assert_eq!(y, vec![0.7, -0.2]);
    }

    #[test]
    fn power_mlp_single_repu_unit() {
        // 1 -> 1, weight 1, bias 0, p = 2, parallel path 0, identity output
        let mut layer = PowerMlpLayer::zeros(1, 1);
        layer.w[0] = 1.0;
        layer.p_raw = P_RAW_FOR_P2;
        let params = PowerMlpParams {
            hidden: vec![layer],
            out_w: vec![1.0],
            out_b: vec![0.0],
            out_dim: 1,
        };
        let y = power_mlp_forward(&[2.0], &params).unwrap();
        assert!((y[0] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn power_mlp_matches_straight_line_oracle() {
        let mut rng = Rng64::new(19);
        let mut mk_layer = |i: usize, o: usize| PowerMlpLayer {
            in_dim: i,
            out_dim: o,
            w: (0..i * o).map(|_| rng.range(-1.0, 1.0)).collect(),
            b: (0..o).map(|_| rng.range(-0.5, 0.5)).collect(),
            u: (0..i * o).map(|_| rng.range(-1.0, 1.0)).collect(),
            c: (0..o).map(|_| rng.range(-0.5, 0.5)).collect(),
            p_raw: rng.range(-1.0, 1.0),
        };
        let params = PowerMlpParams {
            hidden: vec![mk_layer(3, 5), mk_layer(5, 4)],
            out_w: (0..8).map(|_| rng.range(-1.0, 1.0)).collect(),
            out_b: (0..2).map(|_| rng.range(-0.5, 0.5)).collect(),
            out_dim: 2,
        };
        let x = [0.3, -0.8, 1.1];
        let got = power_mlp_forward(&x, &params).unwrap();

        // independent straight-line reimplementation
        let mut h: Vec<f64> = x.to_vec();
        for l in &params.hidden {
            let p = 1.0 + (1.0 + l.p_raw.exp()).ln();
            let mut next = vec![0.0; l.out_dim];
            for o in 0..l.out_dim {
                let mut a = l.b[o];
                let mut par = l.c[o];
                for (i, hv) in h.iter().enumerate() {
                    a += l.w[o * l.in_dim + i] * hv;
                    par += l.u[o * l.in_dim + i] * hv;
                }
                let r = if a > 0.0 { a.powf(p) } else { 0.0 };
                next[o] = r + par;
            }
            h = next;
        }
        let mut want = params.out_b.clone();
        for o in 0..2 {
            for (i, hv) in h.iter().enumerate() {
                want[o] += params.out_w[o * h.len() + i] * hv;
            }
        }
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12, "{g} vs {w}");
        }
    }

    #[test]
    fn power_mlp_rejects_bad_chain() {
        let params = PowerMlpParams {
            hidden: vec![PowerMlpLayer::zeros(3, 4)],
            out_w: vec![0.0; 8],
            out_b: vec![0.0; 2],
            out_dim: 2,
        };
        assert!(power_mlp_forward(&[1.0, 2.0], &params).is_err());
    }

    #[test]
    fn film_identity_and_override() {
        let h = [1.0, -2.0, 3.0];
        let id = film_modulate(&h, &[1.0; 3], &[0.0; 3]).unwrap();
        assert_eq!(id, h.to_vec());
        let beta = [5.0, 6.0, 7.0];
        let ov = film_modulate(&h, &[0.0; 3], &beta).unwrap();
        assert_eq!(ov, beta.to_vec());
        let mut rng = Rng64::new(20);
        let g: Vec<f64> = (0..3).map(|_| rng.normal()).collect();
        let b: Vec<f64> = (0..3).map(|_| rng.normal()).collect();
        let out = film_modulate(&h, &g, &b).unwrap();
        for i in 0..3 {
            assert_eq!(out[i], g[i] * h[i] + b[i]);
        }
        assert!(film_modulate(&h, &g[..2], &b).is_err());
    }
}
