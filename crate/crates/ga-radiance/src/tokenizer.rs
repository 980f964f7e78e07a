//! Multi-view tokenizer: a geometric global view and a Euclidean local view
//! of the same query.
//!
//! The global path embeds the scene's primitives (room planes, obstacle
//! centroids and faces, the transmitter) as multivectors, runs the
//! equivariant encoder, and refines the resulting `[CLS]` token through a
//! norm-and-MLP stage with no width compression. The result is one
//! scene-level vector shared by every sample of a query. The local path is
//! classic sinusoidal positional encoding of sample positions (in
//! normalised scene coordinates), view directions, and the transmitter.
//! Per-sample geometry stays local; only scene + TX enter the global view.

use crate::equi::{self, EncoderParams, MvTokens};
use crate::error::{Error, Result};
use crate::ga::{self, Multivector, Signature, BLADE_COUNT};
use crate::radiance::RayBundle;
use crate::rng::Rng64;
use crate::sim::{ObstacleKind, SceneGraph};
use crate::tape::{NodeId, Tape};

/// One channel-prediction query: receiver position and band.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChannelQuery {
    pub rx: [f64; 3],
    pub freq_hz: f64,
}

/// Local Euclidean embeddings plus the scene-level global embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenSet {
    /// (M*N, l_local) sample-position encodings, ray-major.
    pub local: Vec<f64>,
    pub l_local: usize,
    /// (M, l_dir) view-direction encodings.
    pub view_local: Vec<f64>,
    pub l_dir: usize,
    /// Transmitter-position encoding.
    pub tx_local: Vec<f64>,
    /// Scene-level global embedding, identical for every sample of a query.
    pub global_cls: Vec<f64>,
}

/// Standard sinusoidal encoding: sin(2^f pi x_d), cos(2^f pi x_d) for
/// f in 0..octaves, d in 0..3. Length 6*octaves.
pub fn positional_encode(x: [f64; 3], octaves: usize) -> Vec<f64> {
    assert!(octaves >= 1, "positional_encode needs octaves >= 1");
    let mut out = Vec::with_capacity(6 * octaves);
    for f in 0..octaves {
        let scale = (1u64 << f) as f64 * std::f64::consts::PI;
        for d in 0..3 {
            let (s, c) = (scale * x[d]).sin_cos();
            out.push(s);
            out.push(c);
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

/// Norm & MLP refinement of the flattened CLS token: two layers, hidden
/// width equal to input width (no compression), GELU between.
#[derive(Clone, Debug)]
pub struct RefineParams {
    pub width: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl RefineParams {
    pub fn random(width: usize, rng: &mut Rng64) -> Self {
        let scale = 1.0 / (width as f64).sqrt();
        RefineParams {
            width,
            w1: (0..width * width).map(|_| rng.normal() * scale).collect(),
            b1: vec![0.0; width],
            w2: (0..width * width).map(|_| rng.normal() * scale).collect(),
            b2: vec![0.0; width],
        }
    }

    /// Identity refinement: the MLP is a residual branch, so zero weights
    /// make the output exactly the normalised flattened CLS.
    pub fn identity(width: usize) -> Self {
        RefineParams {
            width,
            w1: vec![0.0; width * width],
            b1: vec![0.0; width],
            w2: vec![0.0; width * width],
            b2: vec![0.0; width],
        }
    }
}

#[derive(Clone, Debug)]
pub struct TokenizerParams {
    pub encoder: EncoderParams,
    pub refine: RefineParams,
    pub f_pos: usize,
    pub f_dir: usize,
}

impl TokenizerParams {
    pub fn random(channels: usize, depth: usize, f_pos: usize, f_dir: usize, rng: &mut Rng64) -> Self {
        TokenizerParams {
            encoder: EncoderParams::random(channels, depth, false, rng),
            refine: RefineParams::random(channels * BLADE_COUNT, rng),
            f_pos,
            f_dir,
        }
    }
}

// ---------------------------------------------------------------------------
// Scene primitives
// ---------------------------------------------------------------------------

/// Geometric items fed to the encoder, in a fixed documented order: the
/// transmitter point, the six room boundary planes, then per obstacle its
/// centroid point followed by its face planes (one for walls, four side
/// faces for columns).
pub fn scene_primitives(scene: &SceneGraph, sig: &Signature) -> Result<Vec<Multivector>> {
    let mut prims = Vec::new();
    prims.push(ga::embed_point(scene.tx, sig));
    let b = &scene.bounds;
    for (axis, value) in [
        (0usize, b.min[0]),
        (0, b.max[0]),
        (1, b.min[1]),
        (1, b.max[1]),
        (2, b.min[2]),
        (2, b.max[2]),
    ] {
        let mut n = [0.0; 3];
        n[axis] = 1.0;
        prims.push(ga::embed_plane(n, -value, sig)?);
    }
    for o in &scene.obstacles {
        prims.push(ga::embed_point(o.centroid(), sig));
        match &o.kind {
            ObstacleKind::Wall { a, b: wb, .. } => {
                let ex = wb[0] - a[0];
                let ey = wb[1] - a[1];
                let len = (ex * ex + ey * ey).sqrt();
                if len < 1e-12 {
                    return Err(Error::Degenerate(format!("wall {} has zero extent", o.name)));
                }
                let n = [-ey / len, ex / len, 0.0];
                let d = -(n[0] * a[0] + n[1] * a[1]);
                prims.push(ga::embed_plane(n, d, sig)?);
            }
            ObstacleKind::Column { min, max } => {
                for (axis, value) in [(0usize, min[0]), (0, max[0]), (1, min[1]), (1, max[1])] {
                    let mut n = [0.0; 3];
                    n[axis] = 1.0;
                    prims.push(ga::embed_plane(n, -value, sig)?);
                }
            }
        }
    }
    if prims.is_empty() {
        return Err(Error::Degenerate("scene has no geometric primitives".into()));
    }
    Ok(prims)
}

/// Encoder output CLS for a primitive list (channel 0 carries geometry,
/// the learned scalar CLS sits at token 0).
pub fn scene_cls(
    prims: &[Multivector],
    params: &EncoderParams,
    sig: &Signature,
) -> Result<MvTokens> {
    if prims.is_empty() {
        return Err(Error::Degenerate("no primitives to encode".into()));
    }
    let tokens = equi::tokens_with_cls(prims, params.channels, &params.cls_seed);
    let (cls, _) = equi::gatr_encode(&tokens, params.depth(), params, sig)?;
    Ok(cls)
}

// ---------------------------------------------------------------------------
// Refinement (tape + pure)
// ---------------------------------------------------------------------------

pub struct RefineLeaves {
    pub w1: NodeId,
    pub b1: NodeId,
    pub w2: NodeId,
    pub b2: NodeId,
}

impl RefineParams {
    pub fn leaves(&self, tape: &mut Tape) -> RefineLeaves {
        RefineLeaves {
            w1: tape.param(self.width, self.width, &self.w1),
            b1: tape.param(1, self.width, &self.b1),
            w2: tape.param(self.width, self.width, &self.w2),
            b2: tape.param(1, self.width, &self.b2),
        }
    }
}

/// Norm & MLP refinement on the tape: layer-normalised flattened CLS plus a
/// two-layer GELU MLP as a residual branch (identical widths throughout).
pub fn refine_tape(
    tape: &mut Tape,
    cls_flat: NodeId,
    leaves: &RefineLeaves,
    channels: usize,
) -> NodeId {
    let normed = equi::mv_layernorm_tape(tape, cls_flat, channels);
    let one_row = tape.reshape(normed, 1, channels * BLADE_COUNT);
    let h = tape.affine(one_row, leaves.w1, leaves.b1);
    let h = tape.gelu(h);
    let m = tape.affine(h, leaves.w2, leaves.b2);
    tape.add(one_row, m)
}

/// Flatten and refine a CLS token into the scene-level global embedding.
pub fn refine_global(cls: &MvTokens, params: &RefineParams) -> Result<Vec<f64>> {
    if cls.tokens != 1 {
        return Err(Error::usage("refine_global expects a single CLS token"));
    }
    if cls.width() != params.width {
        return Err(Error::usage(format!(
            "refine width {} does not match CLS width {}",
            params.width,
            cls.width()
        )));
    }
    let mut tape = Tape::new();
    let flat = tape.constant(1, cls.width(), &cls.data);
    let leaves = params.leaves(&mut tape);
    let out = refine_tape(&mut tape, flat, &leaves, cls.channels);
    Ok(tape.value(out).to_vec())
}

// ---------------------------------------------------------------------------
// Token assembly
// ---------------------------------------------------------------------------

/// Normalise a position into [-1, 1] per axis using the scene bounds.
pub fn normalize_position(scene: &SceneGraph, p: [f64; 3]) -> [f64; 3] {
    let c = scene.bounds.center();
    let mut out = [0.0; 3];
    for k in 0..3 {
        let half = 0.5 * (scene.bounds.max[k] - scene.bounds.min[k]).max(1e-9);
        out[k] = (p[k] - c[k]) / half;
    }
    out
}

/// Sample-position encodings for a bundle: (M*N, 6*f_pos), ray-major, in
/// normalised scene coordinates.
pub fn local_encodings(scene: &SceneGraph, rays: &RayBundle, f_pos: usize) -> Vec<f64> {
    let mut local = Vec::with_capacity(rays.sample_count() * 6 * f_pos);
    for p in &rays.positions {
        local.extend_from_slice(&positional_encode(normalize_position(scene, *p), f_pos));
    }
    local
}

/// View-direction encodings for a bundle: (M, 6*f_dir).
pub fn view_encodings(rays: &RayBundle, f_dir: usize) -> Vec<f64> {
    let mut view = Vec::with_capacity(rays.rays * 6 * f_dir);
    for dvec in &rays.directions {
        view.extend_from_slice(&positional_encode(*dvec, f_dir));
    }
    view
}

/// Transmitter-position encoding in normalised scene coordinates.
pub fn tx_encoding(scene: &SceneGraph, f_pos: usize) -> Vec<f64> {
    positional_encode(normalize_position(scene, scene.tx), f_pos)
}

/// Build the multi-view token set for one query. Deterministic: identical
/// inputs and parameters give a bit-identical result.
pub fn build_tokens(
    scene: &SceneGraph,
    query: &ChannelQuery,
    rays: &RayBundle,
    params: &TokenizerParams,
    sig: &Signature,
) -> Result<TokenSet> {
    if rays.rays == 0 {
        return Err(Error::usage("ray bundle is empty"));
    }
    let d: f64 = (0..3)
        .map(|k| (rays.rx[k] - query.rx[k]).powi(2))
        .sum::<f64>()
        .sqrt();
    if d > 1e-9 {
        return Err(Error::usage("ray bundle does not originate at the query rx"));
    }
    let prims = scene_primitives(scene, sig)?;
    let cls = scene_cls(&prims, &params.encoder, sig)?;
    let global_cls = refine_global(&cls, &params.refine)?;
    Ok(TokenSet {
        local: local_encodings(scene, rays, params.f_pos),
        l_local: 6 * params.f_pos,
        view_local: view_encodings(rays, params.f_dir),
        l_dir: 6 * params.f_dir,
        tx_local: tx_encoding(scene, params.f_pos),
        global_cls,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::radiance::sample_rays;
    use crate::sim::{Aabb, Material, Obstacle};

    fn test_scene() -> SceneGraph {
        SceneGraph {
            bounds: Aabb {
                min: [0.0, 0.0, 0.0],
                max: [8.0, 6.0, 3.0],
            },
            obstacles: vec![Obstacle {
                name: "col".into(),
                kind: ObstacleKind::Column {
                    min: [3.0, 2.0, 0.0],
                    max: [4.0, 3.0, 3.0],
                },
                material: Material::default(),
            }],
            tx: [1.0, 1.0, 1.5],
            frequency_hz: 2.4e9,
            wall_material: Material::default(),
        }
    }

    #[test]
    fn positional_encode_zero_and_quarter() {
        let e = positional_encode([0.0; 3], 2);
        assert_eq!(e.len(), 12);
        for f in 0..2 {
            for d in 0..3 {
                assert_eq!(e[f * 6 + 2 * d], 0.0);
                assert_eq!(e[f * 6 + 2 * d + 1], 1.0);
            }
        }
        let e = positional_encode([0.5, 0.0, 0.0], 1);
        assert!((e[0] - 1.0).abs() < 1e-15);
        assert!(e[1].abs() < 1e-15);
    }

    #[test]
    fn positional_encode_bounded() {
        let mut rng = Rng64::new(23);
        for _ in 0..100 {
            let x = [rng.range(-5.0, 5.0), rng.range(-5.0, 5.0), rng.range(-5.0, 5.0)];
            for v in positional_encode(x, 6) {
                assert!((-1.0..=1.0).contains(&v));
            }
        }
    }

    #[test]
    fn refine_scale_invariance() {
        let mut rng = Rng64::new(24);
        let cls = MvTokens::random(1, 4, &mut rng);
        let scaled = MvTokens::new(cls.data.iter().map(|v| v * 10.0).collect(), 1, 4).unwrap();
        let p = RefineParams::random(64, &mut rng);
        let a = refine_global(&cls, &p).unwrap();
        let b = refine_global(&scaled, &p).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-6, "norm must absorb scale");
        }
    }

    #[test]
    fn refine_identity_returns_normalized_cls() {
        let mut rng = Rng64::new(29);
        let cls = MvTokens::random(1, 2, &mut rng);
        let p = RefineParams::identity(32);
        let out = refine_global(&cls, &p).unwrap();
        let want = crate::equi::mv_layernorm(&cls);
        for (o, w) in out.iter().zip(&want.data) {
            assert!((o - w).abs() < 1e-15);
        }
    }

    #[test]
    fn refine_zero_cls_gives_bias_path() {
        let mut rng = Rng64::new(25);
        let cls = MvTokens::zeros(1, 2);
        let p = RefineParams::random(32, &mut rng);
        let out = refine_global(&cls, &p).unwrap();
        // zero CLS -> normed is zero -> output = w2 gelu(b1) + b2, a fixed
        // deterministic vector
        let out2 = refine_global(&cls, &p).unwrap();
        assert_eq!(out, out2);
        assert_eq!(out.len(), 32);
    }

    #[test]
    fn build_tokens_shapes_and_determinism() {
        let scene = test_scene();
        let sig = Signature::pga();
        let mut rng = Rng64::new(26);
        for f_pos in [4usize, 6, 10] {
            let params = TokenizerParams::random(4, 2, f_pos, 4, &mut rng);
            let rays = sample_rays([5.0, 4.0, 1.5], 3, 4, 0.0, 9.0, 1, true).unwrap();
            let q = ChannelQuery {
                rx: [5.0, 4.0, 1.5],
                freq_hz: 2.4e9,
            };
            let t1 = build_tokens(&scene, &q, &rays, &params, &sig).unwrap();
            let t2 = build_tokens(&scene, &q, &rays, &params, &sig).unwrap();
            assert_eq!(t1, t2, "bit-identical for identical inputs");
            assert_eq!(t1.l_local, 6 * f_pos);
            assert_eq!(t1.local.len(), 12 * 6 * f_pos);
            assert_eq!(t1.view_local.len(), 3 * 24);
            assert_eq!(t1.global_cls.len(), 64);
        }
    }

    #[test]
    fn global_token_is_scene_level() {
        let scene = test_scene();
        let sig = Signature::pga();
        let mut rng = Rng64::new(27);
        let params = TokenizerParams::random(4, 2, 6, 4, &mut rng);
        let ra = sample_rays([5.0, 4.0, 1.5], 3, 4, 0.0, 9.0, 1, true).unwrap();
        let rb = sample_rays([2.0, 4.5, 1.0], 5, 6, 0.0, 9.0, 9, true).unwrap();
        let ta = build_tokens(
            &scene,
            &ChannelQuery { rx: [5.0, 4.0, 1.5], freq_hz: 2.4e9 },
            &ra,
            &params,
            &sig,
        )
        .unwrap();
        let tb = build_tokens(
            &scene,
            &ChannelQuery { rx: [2.0, 4.5, 1.0], freq_hz: 2.4e9 },
            &rb,
            &params,
            &sig,
        )
        .unwrap();
        assert_eq!(ta.global_cls, tb.global_cls, "global token is scene-level");
        assert_ne!(ta.local, tb.local);
    }

    #[test]
    fn scene_cls_inherits_equivariance() {
        let sig = Signature::pga();
        let mut rng = Rng64::new(28);
        let scene = test_scene();
        let params = EncoderParams::random(4, 2, false, &mut rng);
        let prims = scene_primitives(&scene, &sig).unwrap();
        let rotor = ga::random_spatial_rotor(&mut rng);
        let rotated: Vec<Multivector> = prims
            .iter()
            .map(|p| ga::sandwich_apply(&rotor, p, &sig, false).unwrap())
            .collect();
        let cls = scene_cls(&prims, &params, &sig).unwrap();
        let cls_rot = scene_cls(&rotated, &params, &sig).unwrap();
        let want = cls.sandwich_all(&rotor, &sig).unwrap();
        let scale = want.data.iter().map(|v| v.abs()).fold(1.0, f64::max);
        assert!(cls_rot.approx_eq(&want, 1e-6 * scale));
    }

    #[test]
    fn primitives_order_is_stable() {
        let scene = test_scene();
        let sig = Signature::pga();
        let prims = scene_primitives(&scene, &sig).unwrap();
        // tx + 6 bounds planes + (centroid + 4 faces) for the column
        assert_eq!(prims.len(), 1 + 6 + 5);
        assert_eq!(prims[0], ga::embed_point(scene.tx, &sig));
    }
}
