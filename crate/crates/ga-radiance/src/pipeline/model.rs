//! Model assembly: configuration, deterministic parameter layout and
//! initialisation, and the tape-level forward pass for the full model, its
//! two ablation variants, and the MLP baseline.
//!
//! All trainable state lives in a flat [`ModelParams`] whose segment layout
//! is a pure function of the configuration: walking the same schema drives
//! initialisation, leaf creation on the tape, and gradient collection, so
//! the three can never drift apart. Two gradient-free segments
//! (`norm.target_mean/std`) carry the training-set target statistics inside
//! the checkpoint.

use crate::c64::C64;
use crate::equi::{self, BlockLeaves, EncoderLeaves, EquiLinLeaves};
use crate::error::{Error, Result};
use crate::ga::{Signature, BLADE_COUNT};
use crate::pipeline::fire::fire_standardize;
use crate::pipeline::params::{fnv1a, ModelParams, Segment};
use crate::radiance::{
    attenuation_tape, signal_tape, AffineLeaves, AttenuationLeaves,
    PowerMlpLayerLeaves, RayBundle, SignalLeaves,
};

/// Raw exponent init: p = 1 + softplus(-4) ~ 1.018, so deep RePU stacks
/// start ReLU-like instead of compounding squares into overflow.
const P_RAW_INIT: f64 = -4.0;
use crate::render::{
    attention_render_tape, classic_render_tape, transmittance_tape, AttnRtLeaves,
    ClassicHeadLeaves, LocalAttnLeaves, PerformerCfg, RenderMode, RenderOut,
};
use crate::rng::Rng64;
use crate::sim::{DatasetRecord, SceneGraph};
use crate::tape::{NodeId, Tape};
use crate::tokenizer::{
    self, local_encodings, scene_primitives, tx_encoding, view_encodings,
};
use serde::{Deserialize, Serialize};

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SigKind {
    Pga,
    Paper,
}

impl SigKind {
    pub fn signature(self) -> Signature {
        match self {
            SigKind::Pga => Signature::pga(),
            SigKind::Paper => Signature::paper(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    NoTokenizer,
    NoAttentionRt,
}

impl Variant {
    pub fn name(&self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoTokenizer => "no_tokenizer",
            Variant::NoAttentionRt => "no_attention_rt",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub signature: SigKind,
    pub variant: Variant,
    pub mode: RenderMode,
    pub subcarriers: usize,
    /// Encoder channels n_c.
    pub channels: usize,
    pub depth: usize,
    pub e4_path: bool,
    pub f_pos: usize,
    pub f_dir: usize,
    pub rays: usize,
    pub samples_per_ray: usize,
    pub t_near: f64,
    /// 0 means "scene diagonal".
    pub t_far: f64,
    pub stratified: bool,
    pub atten_layers: usize,
    pub atten_width: usize,
    pub d_f: usize,
    pub film_hidden: usize,
    pub signal_layers: usize,
    pub signal_width: usize,
    /// Emission width; ray token width is d_s + 2 and must divide by 10.
    pub d_s: usize,
    pub performer: PerformerCfg,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            signature: SigKind::Pga,
            variant: Variant::Full,
            mode: RenderMode::Rssi,
            subcarriers: 52,
            channels: 8,
            depth: 2,
            e4_path: false,
            f_pos: 10,
            f_dir: 4,
            rays: 16,
            samples_per_ray: 16,
            t_near: 0.0,
            t_far: 0.0,
            stratified: true,
            atten_layers: 8,
            atten_width: 64,
            d_f: 64,
            film_hidden: 64,
            signal_layers: 4,
            signal_width: 64,
            d_s: 38,
            performer: PerformerCfg::default(),
        }
    }
}

impl ModelConfig {
    pub fn l_local(&self) -> usize {
        6 * self.f_pos
    }
    pub fn l_dir(&self) -> usize {
        6 * self.f_dir
    }
    pub fn l_tx(&self) -> usize {
        6 * self.f_pos
    }
    pub fn l_global(&self) -> usize {
        self.channels * BLADE_COUNT
    }
    /// [view | tx | freq(2) | global_cls]
    pub fn ctx_width(&self) -> usize {
        self.l_dir() + self.l_tx() + 2 + self.l_global()
    }
    pub fn d_token(&self) -> usize {
        self.d_s + 2
    }
    pub fn out_width(&self) -> usize {
        match self.mode {
            RenderMode::Rssi => 1,
            RenderMode::Csi => 2 * self.subcarriers,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.depth == 0 {
            return Err(Error::usage("encoder needs channels >= 1 and depth >= 1"));
        }
        if self.f_pos == 0 || self.f_dir == 0 {
            return Err(Error::usage("positional encodings need >= 1 octave"));
        }
        if self.rays == 0 || self.samples_per_ray < 2 {
            return Err(Error::usage("need rays >= 1 and samples >= 2"));
        }
        if self.atten_layers < 2 {
            return Err(Error::usage("attenuation net needs >= 2 layers"));
        }
        if self.variant != Variant::NoAttentionRt && self.d_token() % crate::render::ATTN_HEADS != 0
        {
            return Err(Error::usage(format!(
                "ray token width {} must divide by {} heads",
                self.d_token(),
                crate::render::ATTN_HEADS
            )));
        }
        if self.mode == RenderMode::Csi && self.subcarriers == 0 {
            return Err(Error::usage("csi mode needs subcarriers >= 1"));
        }
        Ok(())
    }

    /// FNV-1a over the canonical JSON encoding.
    pub fn hash(&self) -> u64 {
        fnv1a(serde_json::to_string(self).expect("config serializes").as_bytes())
    }
}

// ---------------------------------------------------------------------------
// Parameter schema
// ---------------------------------------------------------------------------

enum Init {
    Zero,
    Gauss(f64),
    Const(f64),
    /// First half ones, second half zeros (FiLM gamma/beta bias).
    OnesThenZeros,
    /// Gaussian on the leading columns, zeros on the trailing `tail`
    /// columns of each row. The global-embedding pathway starts as an
    /// exact no-op (the full model initially computes what the
    /// no-tokenizer ablation computes) and is engaged by training only if
    /// it pays.
    GaussZeroTail { scale: f64, tail: usize },
}

struct SegSpec {
    name: String,
    rows: usize,
    cols: usize,
    init: Init,
}

fn gai_schema(cfg: &ModelConfig) -> Vec<SegSpec> {
    let mut out: Vec<SegSpec> = Vec::new();
    let mut push = |name: String, rows: usize, cols: usize, init: Init| {
        out.push(SegSpec {
            name,
            rows,
            cols,
            init,
        });
    };
    push("norm.target_mean".into(), 1, 1, Init::Const(0.0));
    push("norm.target_std".into(), 1, 1, Init::Const(1.0));

    let c = cfg.channels;
    if cfg.variant != Variant::NoTokenizer {
        let g_scale = 1.0 / (c as f64).sqrt();
        for b in 0..cfg.depth {
            for g in 0..5 {
                push(format!("enc.b{b}.qkv.g{g}"), 3 * c, c, Init::Gauss(g_scale));
            }
            if cfg.e4_path {
                push(format!("enc.b{b}.qkv.e4"), 3 * c, c, Init::Gauss(g_scale));
            }
            for g in 0..5 {
                push(format!("enc.b{b}.out.g{g}"), c, c, Init::Gauss(g_scale));
            }
            if cfg.e4_path {
                push(format!("enc.b{b}.out.e4"), c, c, Init::Gauss(g_scale));
            }
        }
        push("enc.cls".into(), 1, c, Init::Gauss(1.0));
        let l = cfg.l_global();
        let r_scale = 1.0 / (l as f64).sqrt();
        push("refine.w1".into(), l, l, Init::Gauss(r_scale));
        push("refine.b1".into(), 1, l, Init::Zero);
        push("refine.w2".into(), l, l, Init::Gauss(r_scale));
        push("refine.b2".into(), 1, l, Init::Zero);
    }

    // attenuation stack with the input re-concatenated mid-stack
    let skip_at = cfg.atten_layers / 2;
    let mut in_dim = cfg.l_local();
    for i in 0..cfg.atten_layers {
        let d_in = if i == skip_at { in_dim + cfg.l_local() } else { in_dim };
        let w = cfg.atten_width;
        let scale = 1.0 / (d_in as f64).sqrt();
        push(format!("atten.l{i}.w"), w, d_in, Init::Gauss(scale));
        push(format!("atten.l{i}.b"), 1, w, Init::Zero);
        push(format!("atten.l{i}.u"), w, d_in, Init::Gauss(scale));
        push(format!("atten.l{i}.c"), 1, w, Init::Zero);
        push(format!("atten.l{i}.p"), 1, 1, Init::Const(P_RAW_INIT));
        in_dim = w;
    }
    let w = cfg.atten_width;
    let h_scale = 1.0 / (w as f64).sqrt();
    push("atten.delta.w".into(), 1, w, Init::Gauss(h_scale));
    push("atten.delta.b".into(), 1, 1, Init::Const(0.2));
    push("atten.delta.p".into(), 1, 1, Init::Const(P_RAW_INIT));
    push("atten.feat.w".into(), cfg.d_f, w, Init::Gauss(h_scale));
    push("atten.feat.b".into(), 1, cfg.d_f, Init::Zero);

    // FiLM generator over the context
    let ctx = cfg.ctx_width();
    let ctx_static = ctx - cfg.l_global();
    push(
        "film.w1".into(),
        cfg.film_hidden,
        ctx,
        Init::GaussZeroTail {
            scale: 1.0 / (ctx_static as f64).sqrt(),
            tail: cfg.l_global(),
        },
    );
    push("film.b1".into(), 1, cfg.film_hidden, Init::Zero);
    push(
        "film.w2".into(),
        2 * cfg.d_f,
        cfg.film_hidden,
        Init::Gauss(1.0 / (cfg.film_hidden as f64).sqrt()),
    );
    push("film.b2".into(), 1, 2 * cfg.d_f, Init::OnesThenZeros);

    // signal stack; layer 0 sees [modulated | ctx] whose tail is the CLS
    let mut in_dim = cfg.d_f + ctx;
    for i in 0..cfg.signal_layers {
        let scale = 1.0 / ((in_dim - if i == 0 { cfg.l_global() } else { 0 }) as f64).sqrt();
        let init_w = if i == 0 {
            Init::GaussZeroTail { scale, tail: cfg.l_global() }
        } else {
            Init::Gauss(scale)
        };
        let init_u = if i == 0 {
            Init::GaussZeroTail { scale, tail: cfg.l_global() }
        } else {
            Init::Gauss(scale)
        };
        push(format!("signal.l{i}.w"), cfg.signal_width, in_dim, init_w);
        push(format!("signal.l{i}.b"), 1, cfg.signal_width, Init::Zero);
        push(format!("signal.l{i}.u"), cfg.signal_width, in_dim, init_u);
        push(format!("signal.l{i}.c"), 1, cfg.signal_width, Init::Zero);
        push(format!("signal.l{i}.p"), 1, 1, Init::Const(P_RAW_INIT));
        in_dim = cfg.signal_width;
    }
    let s_scale = 1.0 / (cfg.signal_width as f64).sqrt();
    push("signal.out.w".into(), cfg.d_s, cfg.signal_width, Init::Gauss(s_scale));
    push("signal.out.b".into(), 1, cfg.d_s, Init::Zero);

    let out_w = cfg.out_width();
    match cfg.variant {
        Variant::NoAttentionRt => {
            let d_dec = cfg.d_s;
            push(
                "classic.dec.w".into(),
                d_dec,
                cfg.d_s,
                Init::Gauss(1.0 / (cfg.d_s as f64).sqrt()),
            );
            push("classic.dec.b".into(), 1, d_dec, Init::Zero);
            push(
                "classic.head.w".into(),
                out_w,
                d_dec,
                Init::Gauss(1.0 / (d_dec as f64).sqrt()),
            );
            push("classic.head.b".into(), 1, out_w, Init::Zero);
        }
        _ => {
            let d = cfg.d_token();
            // ray embedding sees the whole ray: direction and origin
            let l_ray = cfg.l_dir() + cfg.l_tx();
            push(
                "rt.embed.w".into(),
                d,
                l_ray,
                Init::Gauss(1.0 / (l_ray as f64).sqrt()),
            );
            push("rt.embed.b".into(), 1, d, Init::Zero);
            // zero-init: CLS-guided pooling starts as uniform pooling
            push("rt.cls.w".into(), d, cfg.l_global(), Init::Zero);
            push("rt.cls.b".into(), 1, d, Init::Zero);
            let a_scale = 1.0 / (d as f64).sqrt();
            push("rt.wq".into(), d, d, Init::Gauss(a_scale));
            push("rt.wk".into(), d, d, Init::Gauss(a_scale));
            push("rt.wv".into(), d, d, Init::Gauss(a_scale));
            push("rt.wo".into(), d, d, Init::Gauss(a_scale));
            push(
                "rt.head.w".into(),
                out_w,
                2 * d,
                Init::Gauss(1.0 / (2.0 * d as f64).sqrt()),
            );
            push("rt.head.b".into(), 1, out_w, Init::Zero);
        }
    }
    out
}

fn materialize(schema: &[SegSpec], seed: u64) -> ModelParams {
    let mut segments = Vec::with_capacity(schema.len());
    let mut data = Vec::new();
    let mut offset = 0;
    for spec in schema {
        let len = spec.rows * spec.cols;
        // per-segment stream keyed by name, so the draw is independent of
        // segment order
        let mut rng = Rng64::stream(seed, fnv1a(spec.name.as_bytes()));
        match spec.init {
            Init::Zero => data.extend(std::iter::repeat(0.0).take(len)),
            Init::Const(v) => data.extend(std::iter::repeat(v).take(len)),
            Init::Gauss(s) => data.extend((0..len).map(|_| rng.normal() * s)),
            Init::OnesThenZeros => {
                data.extend(std::iter::repeat(1.0).take(len / 2));
                data.extend(std::iter::repeat(0.0).take(len - len / 2));
            }
            Init::GaussZeroTail { scale, tail } => {
                for _ in 0..spec.rows {
                    data.extend((0..spec.cols - tail).map(|_| rng.normal() * scale));
                    data.extend(std::iter::repeat(0.0).take(tail));
                }
            }
        }
        segments.push(Segment {
            name: spec.name.clone(),
            offset,
            rows: spec.rows,
            cols: spec.cols,
        });
        offset += len;
    }
    ModelParams { data, segments }
}

// ---------------------------------------------------------------------------
// Leaves on the tape
// ---------------------------------------------------------------------------

pub struct LeafMap {
    entries: Vec<(String, NodeId)>,
}

impl LeafMap {
    /// Push every segment as a parameter leaf, in segment order.
    pub fn build(tape: &mut Tape, params: &ModelParams) -> LeafMap {
        let entries = params
            .segments
            .iter()
            .map(|s| {
                let id = tape.param(s.rows, s.cols, &params.data[s.offset..s.offset + s.len()]);
                (s.name.clone(), id)
            })
            .collect();
        LeafMap { entries }
    }

    pub fn get(&self, name: &str) -> NodeId {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .unwrap_or_else(|| panic!("missing leaf {name}"))
            .1
    }

    pub fn has(&self, name: &str) -> bool {
        self.entries.iter().any(|(n, _)| n == name)
    }

    /// Collect gradients back into a flat vector aligned with the segments.
    pub fn collect_grads(&self, tape: &Tape, params: &ModelParams) -> Vec<f64> {
        let mut grad = vec![0.0; params.len()];
        for (seg, (_, id)) in params.segments.iter().zip(&self.entries) {
            grad[seg.offset..seg.offset + seg.len()].copy_from_slice(tape.grad(*id));
        }
        grad
    }
}

fn equi_lin_leaves(map: &LeafMap, prefix: &str) -> EquiLinLeaves {
    EquiLinLeaves {
        grades: [
            map.get(&format!("{prefix}.g0")),
            map.get(&format!("{prefix}.g1")),
            map.get(&format!("{prefix}.g2")),
            map.get(&format!("{prefix}.g3")),
            map.get(&format!("{prefix}.g4")),
        ],
        e4: if map.has(&format!("{prefix}.e4")) {
            Some(map.get(&format!("{prefix}.e4")))
        } else {
            None
        },
    }
}

struct GaiLeaves {
    encoder: Option<EncoderLeaves>,
    cls_seed: Option<NodeId>,
    refine: Option<tokenizer::RefineLeaves>,
    atten: AttenuationLeaves,
    signal: SignalLeaves,
    head: HeadLeaves,
}

enum HeadLeaves {
    Classic(ClassicHeadLeaves),
    AttnRt(AttnRtLeaves),
}

fn gai_leaves(cfg: &ModelConfig, map: &LeafMap) -> GaiLeaves {
    let encoder = (cfg.variant != Variant::NoTokenizer).then(|| EncoderLeaves {
        blocks: (0..cfg.depth)
            .map(|b| BlockLeaves {
                qkv: equi_lin_leaves(map, &format!("enc.b{b}.qkv")),
                out: equi_lin_leaves(map, &format!("enc.b{b}.out")),
            })
            .collect(),
    });
    let atten = AttenuationLeaves {
        layers: (0..cfg.atten_layers)
            .map(|i| PowerMlpLayerLeaves {
                w: map.get(&format!("atten.l{i}.w")),
                b: map.get(&format!("atten.l{i}.b")),
                u: map.get(&format!("atten.l{i}.u")),
                c: map.get(&format!("atten.l{i}.c")),
                p_raw: map.get(&format!("atten.l{i}.p")),
            })
            .collect(),
        skip_at: cfg.atten_layers / 2,
        delta_w: map.get("atten.delta.w"),
        delta_b: map.get("atten.delta.b"),
        delta_p_raw: map.get("atten.delta.p"),
        feat: AffineLeaves {
            w: map.get("atten.feat.w"),
            b: map.get("atten.feat.b"),
        },
    };
    let signal = SignalLeaves {
        film1: AffineLeaves {
            w: map.get("film.w1"),
            b: map.get("film.b1"),
        },
        film2: AffineLeaves {
            w: map.get("film.w2"),
            b: map.get("film.b2"),
        },
        layers: (0..cfg.signal_layers)
            .map(|i| PowerMlpLayerLeaves {
                w: map.get(&format!("signal.l{i}.w")),
                b: map.get(&format!("signal.l{i}.b")),
                u: map.get(&format!("signal.l{i}.u")),
                c: map.get(&format!("signal.l{i}.c")),
                p_raw: map.get(&format!("signal.l{i}.p")),
            })
            .collect(),
        out: AffineLeaves {
            w: map.get("signal.out.w"),
            b: map.get("signal.out.b"),
        },
        d_f: cfg.d_f,
    };
    let head = match cfg.variant {
        Variant::NoAttentionRt => HeadLeaves::Classic(ClassicHeadLeaves {
            dec_w: map.get("classic.dec.w"),
            dec_b: map.get("classic.dec.b"),
            head_w: map.get("classic.head.w"),
            head_b: map.get("classic.head.b"),
        }),
        _ => HeadLeaves::AttnRt(AttnRtLeaves {
            ray_embed_w: map.get("rt.embed.w"),
            ray_embed_b: map.get("rt.embed.b"),
            cls_proj_w: map.get("rt.cls.w"),
            cls_proj_b: map.get("rt.cls.b"),
            attn: LocalAttnLeaves {
                wq: map.get("rt.wq"),
                wk: map.get("rt.wk"),
                wv: map.get("rt.wv"),
                wo: map.get("rt.wo"),
            },
            head_w: map.get("rt.head.w"),
            head_b: map.get("rt.head.b"),
        }),
    };
    GaiLeaves {
        encoder,
        cls_seed: (cfg.variant != Variant::NoTokenizer).then(|| map.get("enc.cls")),
        refine: (cfg.variant != Variant::NoTokenizer).then(|| tokenizer::RefineLeaves {
            w1: map.get("refine.w1"),
            b1: map.get("refine.b1"),
            w2: map.get("refine.w2"),
            b2: map.get("refine.b2"),
        }),
        atten,
        signal,
        head,
    }
}

// ---------------------------------------------------------------------------
// Prepared data
// ---------------------------------------------------------------------------

/// Frequency features: linear and log scale around the supported bands.
pub fn freq_features(freq_hz: f64) -> [f64; 2] {
    [freq_hz / 5.0e9, (freq_hz / 2.4e9).ln()]
}

/// Depth at which a ray leaves an axis-aligned box (slab method).
fn ray_exit_t(bounds: &crate::sim::Aabb, origin: [f64; 3], dir: [f64; 3]) -> f64 {
    let mut t_exit = f64::INFINITY;
    for k in 0..3 {
        if dir[k].abs() < 1e-12 {
            continue;
        }
        let ta = (bounds.min[k] - origin[k]) / dir[k];
        let tb = (bounds.max[k] - origin[k]) / dir[k];
        t_exit = t_exit.min(ta.max(tb));
    }
    if t_exit.is_finite() {
        t_exit.max(0.0)
    } else {
        bounds.diagonal()
    }
}

pub struct PreparedQuery {
    pub bundle: RayBundle,
    /// (M*N, l_local)
    pub local: Vec<f64>,
    /// (M*N, l_dir + l_tx + 2) static context, CLS appended on the tape.
    pub static_ctx: Vec<f64>,
    /// (M, l_dir + l_tx): per-ray direction and origin encodings.
    pub ray_feats: Vec<f64>,
    pub target_rssi: Option<f64>,
    pub target_csi: Option<Vec<C64>>,
}

pub struct GaiData {
    /// Geometric scene tokens (primitives only), (T_p, channels*16).
    pub prim_tokens: Vec<f64>,
    pub n_prims: usize,
    pub queries: Vec<PreparedQuery>,
    pub train_idx: Vec<usize>,
    pub val_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
}

/// The GAI-NeRF model: configuration plus assembly logic.
#[derive(Clone, Debug)]
pub struct GaiNerf {
    pub cfg: ModelConfig,
}

impl GaiNerf {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(GaiNerf { cfg })
    }

    pub fn init_params(&self, seed: u64) -> ModelParams {
        materialize(&gai_schema(&self.cfg), seed)
    }

    fn t_far(&self, scene: &SceneGraph) -> f64 {
        if self.cfg.t_far > 0.0 {
            self.cfg.t_far
        } else {
            scene.bounds.diagonal()
        }
    }

    /// Backtraced bundle with per-ray depth clipped at the room boundary:
    /// samples beyond the walls carry no information, so each ray spends
    /// its budget inside the scene. The direction lattice is shared by all
    /// queries (a fixed angular filter bank); only depth jitter is
    /// per-query.
    fn bundle_for(&self, scene: &SceneGraph, rx: [f64; 3], seed: u64) -> Result<RayBundle> {
        let mut bytes = Vec::with_capacity(32);
        bytes.extend_from_slice(&seed.to_le_bytes());
        for c in rx {
            bytes.extend_from_slice(&c.to_le_bytes());
        }
        let bundle_seed = fnv1a(&bytes);
        // scenes are extruded in z, so compress the lattice toward the
        // horizontal plane where the propagation structure lives
        let lattice: Vec<[f64; 3]> = crate::radiance::fibonacci_directions(self.cfg.rays, seed)
            .into_iter()
            .map(|d| {
                let v = [d[0], d[1], 0.35 * d[2]];
                let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                [v[0] / n, v[1] / n, v[2] / n]
            })
            .collect();
        let t_cap = self.t_far(scene);
        let n = self.cfg.samples_per_ray;
        let mut rng = crate::rng::Rng64::stream(bundle_seed, 0x52_41_59_54);
        let mut t_samples = Vec::with_capacity(self.cfg.rays * n);
        for dir in &lattice {
            let exit = ray_exit_t(&scene.bounds, rx, *dir);
            let t_far = (exit + 0.25).min(t_cap).max(self.cfg.t_near + 0.5);
            let span = t_far - self.cfg.t_near;
            for i in 0..n {
                let u = if self.cfg.stratified { rng.next_f64() } else { 0.5 };
                t_samples.push(self.cfg.t_near + span * (i as f64 + u) / n as f64);
            }
        }
        RayBundle::new(rx, lattice, t_samples, n)
    }

    fn prepare_query(
        &self,
        scene: &SceneGraph,
        rx: [f64; 3],
        freq_hz: f64,
        seed: u64,
        rssi: Option<f64>,
        csi: Option<Vec<C64>>,
    ) -> Result<PreparedQuery> {
        let bundle = self.bundle_for(scene, rx, seed)?;
        let local = local_encodings(scene, &bundle, self.cfg.f_pos);
        let view_enc = view_encodings(&bundle, self.cfg.f_dir);
        let tx_enc = tx_encoding(scene, self.cfg.f_pos);
        let ff = freq_features(freq_hz);
        let n = bundle.samples_per_ray;
        let width = self.cfg.l_dir() + self.cfg.l_tx() + 2;
        let mut static_ctx = Vec::with_capacity(bundle.sample_count() * width);
        for ray in 0..bundle.rays {
            let view = &view_enc[ray * self.cfg.l_dir()..(ray + 1) * self.cfg.l_dir()];
            for _ in 0..n {
                static_ctx.extend_from_slice(view);
                static_ctx.extend_from_slice(&tx_enc);
                static_ctx.extend_from_slice(&ff);
            }
        }
        let target_csi = match csi {
            Some(h) => Some(fire_standardize(&h)?),
            None => None,
        };
        let rx_enc = crate::tokenizer::positional_encode(
            crate::tokenizer::normalize_position(scene, rx),
            self.cfg.f_pos,
        );
        let mut ray_feats = Vec::with_capacity(bundle.rays * (self.cfg.l_dir() + self.cfg.l_tx()));
        for ray in 0..bundle.rays {
            ray_feats.extend_from_slice(
                &view_enc[ray * self.cfg.l_dir()..(ray + 1) * self.cfg.l_dir()],
            );
            ray_feats.extend_from_slice(&rx_enc);
        }
        Ok(PreparedQuery {
            bundle,
            local,
            static_ctx,
            ray_feats,
            target_rssi: rssi,
            target_csi,
        })
    }

    /// Precompute everything parameter-independent for a labelled dataset.
    pub fn prepare(
        &self,
        scene: &SceneGraph,
        records: &[DatasetRecord],
        seed: u64,
    ) -> Result<GaiData> {
        scene.validate()?;
        if records.is_empty() {
            return Err(Error::Degenerate("empty dataset".into()));
        }
        let sig = self.cfg.signature.signature();
        let prims = scene_primitives(scene, &sig)?;
        let tokens = equi::tokens_with_cls(&prims, self.cfg.channels, &vec![0.0; self.cfg.channels]);
        // strip the placeholder CLS row: the learned CLS joins on the tape
        let width = self.cfg.channels * BLADE_COUNT;
        let prim_tokens = tokens.data[width..].to_vec();

        let mut queries = Vec::with_capacity(records.len());
        let (mut train_idx, mut val_idx, mut test_idx) = (Vec::new(), Vec::new(), Vec::new());
        for (i, r) in records.iter().enumerate() {
            if self.cfg.mode == RenderMode::Rssi && r.rssi_db.is_none() {
                return Err(Error::usage(format!("record {i} lacks rssi_db")));
            }
            if self.cfg.mode == RenderMode::Csi && r.csi.is_none() {
                return Err(Error::usage(format!("record {i} lacks csi")));
            }
            queries.push(self.prepare_query(
                scene,
                r.rx,
                r.freq_hz,
                seed,
                r.rssi_db,
                r.csi_c64(),
            )?);
            match r.split.as_str() {
                "train" => train_idx.push(i),
                "val" => val_idx.push(i),
                _ => test_idx.push(i),
            }
        }
        Ok(GaiData {
            prim_tokens,
            n_prims: prims.len(),
            queries,
            train_idx,
            val_idx,
            test_idx,
        })
    }

    /// Scene-level CLS on the tape (None for the no-tokenizer ablation:
    /// the global embedding is a zero constant).
    fn cls_tape(&self, tape: &mut Tape, data: &GaiData, leaves: &GaiLeaves) -> NodeId {
        let c = self.cfg.channels;
        let width = c * BLADE_COUNT;
        match (&leaves.encoder, leaves.cls_seed, &leaves.refine) {
            (Some(enc), Some(cls_seed), Some(refine)) => {
                // place the learned scalar CLS in blade 0 of each channel
                let mut expand = vec![0.0; c * width];
                for ch in 0..c {
                    expand[ch * width + ch * BLADE_COUNT] = 1.0;
                }
                let e = tape.constant(c, width, &expand);
                let cls_row = tape.matmul(cls_seed, e);
                let prims = tape.constant(data.n_prims, width, &data.prim_tokens);
                let x = tape.concat_rows(cls_row, prims);
                let sig = self.cfg.signature.signature();
                let encoded = equi::encode_tape(tape, x, enc, c, &sig);
                let cls_tok = tape.slice_rows(encoded, 0, 1);
                tokenizer::refine_tape(tape, cls_tok, refine, c)
            }
            _ => tape.constant(1, self.cfg.l_global(), &vec![0.0; self.cfg.l_global()]),
        }
    }

    /// Raw head output (1, out_width) for one query on the tape.
    fn forward_query(
        &self,
        tape: &mut Tape,
        leaves: &GaiLeaves,
        cls: NodeId,
        q: &PreparedQuery,
    ) -> Result<NodeId> {
        let mn = q.bundle.sample_count();
        let local = tape.constant(mn, self.cfg.l_local(), &q.local);
        let (delta, feat) = attenuation_tape(tape, local, &leaves.atten);
        let (trans, w) = transmittance_tape(tape, delta, &q.bundle);
        let static_w = self.cfg.l_dir() + self.cfg.l_tx() + 2;
        let sctx = tape.constant(mn, static_w, &q.static_ctx);
        let cls_rows = tape.repeat_rows(cls, mn);
        let ctx = tape.concat_cols(sctx, cls_rows);
        let xi = signal_tape(tape, feat, ctx, &leaves.signal);
        match &leaves.head {
            HeadLeaves::Classic(h) => Ok(classic_render_tape(tape, xi, w, h, &q.bundle)),
            HeadLeaves::AttnRt(h) => {
                let l_ray = self.cfg.l_dir() + self.cfg.l_tx();
                let ray_feats = tape.constant(q.bundle.rays, l_ray, &q.ray_feats);
                attention_render_tape(
                    tape,
                    xi,
                    w,
                    trans,
                    ray_feats,
                    cls,
                    h,
                    &q.bundle,
                    &self.cfg.performer,
                )
            }
        }
    }

    /// Squared-error loss of one query against its target, on the tape.
    /// RSSI targets are trained in normalised dB units.
    fn query_loss(
        &self,
        tape: &mut Tape,
        raw: NodeId,
        q: &PreparedQuery,
        mu: f64,
        sigma: f64,
    ) -> Result<NodeId> {
        match self.cfg.mode {
            RenderMode::Rssi => {
                let t = q
                    .target_rssi
                    .ok_or_else(|| Error::usage("query lacks an RSSI target"))?;
                let t_norm = (t - mu) / sigma;
                let diff = tape.add_scalar(raw, -t_norm);
                let sq = tape.mul(diff, diff);
                Ok(tape.sum_all(sq))
            }
            RenderMode::Csi => {
                let truth = q
                    .target_csi
                    .as_ref()
                    .ok_or_else(|| Error::usage("query lacks a CSI target"))?;
                let k = self.cfg.subcarriers;
                let amp = tape.slice_cols(raw, 0, k);
                let phase = tape.slice_cols(raw, k, 2 * k);
                let cosp = tape.cos(phase);
                let sinp = tape.sin(phase);
                let re = tape.mul(amp, cosp);
                let im = tape.mul(amp, sinp);
                let t_re: Vec<f64> = truth.iter().map(|z| z.re).collect();
                let t_im: Vec<f64> = truth.iter().map(|z| z.im).collect();
                let tr = tape.constant(1, k, &t_re);
                let ti = tape.constant(1, k, &t_im);
                let dr = tape.sub(re, tr);
                let di = tape.sub(im, ti);
                let sr = tape.mul(dr, dr);
                let si = tape.mul(di, di);
                let s = tape.add(sr, si);
                let total = tape.sum_all(s);
                Ok(tape.scale(total, 1.0 / k as f64))
            }
        }
    }

    /// Forward (and optionally backward) over a set of query indices.
    /// Returns the summed loss, gradients, and the minimum RePU kink gap.
    pub fn eval_indices(
        &self,
        params: &ModelParams,
        data: &GaiData,
        idxs: &[usize],
        want_grad: bool,
    ) -> Result<(f64, Option<Vec<f64>>, f64)> {
        let mu = params.slice("norm.target_mean")?[0];
        let sigma = params.slice("norm.target_std")?[0];
        let mut tape = Tape::new();
        let map = LeafMap::build(&mut tape, params);
        let leaves = gai_leaves(&self.cfg, &map);
        let cls = self.cls_tape(&mut tape, data, &leaves);
        let mut loss_node: Option<NodeId> = None;
        for &i in idxs {
            let raw = self.forward_query(&mut tape, &leaves, cls, &data.queries[i])?;
            let l = self.query_loss(&mut tape, raw, &data.queries[i], mu, sigma)?;
            loss_node = Some(match loss_node {
                None => l,
                Some(acc) => tape.add(acc, l),
            });
        }
        let loss_node = loss_node.ok_or_else(|| Error::usage("empty batch"))?;
        let loss = tape.scalar_value(loss_node);
        let grad = if want_grad {
            tape.backward(loss_node);
            Some(map.collect_grads(&tape, params))
        } else {
            None
        };
        Ok((loss, grad, tape.min_kink_gap))
    }

    /// Denormalised prediction for one prepared query.
    pub fn predict_prepared(
        &self,
        params: &ModelParams,
        data: &GaiData,
        idx: usize,
    ) -> Result<RenderOut> {
        let mu = params.slice("norm.target_mean")?[0];
        let sigma = params.slice("norm.target_std")?[0];
        let mut tape = Tape::new();
        let map = LeafMap::build(&mut tape, params);
        let leaves = gai_leaves(&self.cfg, &map);
        let cls = self.cls_tape(&mut tape, data, &leaves);
        let raw = self.forward_query(&mut tape, &leaves, cls, &data.queries[idx])?;
        let mut out = tape.value(raw).to_vec();
        if self.cfg.mode == RenderMode::Rssi {
            out[0] = out[0] * sigma + mu;
        }
        RenderOut::decode(self.cfg.mode, &out)
    }

    /// One-off prediction at an arbitrary receiver in a (possibly edited)
    /// scene, with frozen parameters.
    pub fn predict(
        &self,
        params: &ModelParams,
        scene: &SceneGraph,
        rx: [f64; 3],
        freq_hz: f64,
        seed: u64,
    ) -> Result<RenderOut> {
        let record = DatasetRecord {
            rx,
            tx: scene.tx,
            freq_hz,
            rssi_db: Some(0.0),
            csi: Some(vec![[1.0, 0.0]; self.cfg.subcarriers]),
            split: "test".into(),
        };
        let data = self.prepare(scene, &[record], seed)?;
        self.predict_prepared(params, &data, 0)
    }
}

// ---------------------------------------------------------------------------
// MLP baseline
// ---------------------------------------------------------------------------

/// Plain ReLU MLP over [rx | tx | freq] with the reference hidden widths
/// 256, 128, 64, 64 and a linear head.
#[derive(Clone, Debug)]
pub struct MlpBaseline {
    pub mode: RenderMode,
    pub subcarriers: usize,
    pub widths: Vec<usize>,
}

impl MlpBaseline {
    pub fn reference(mode: RenderMode, subcarriers: usize) -> Self {
        MlpBaseline {
            mode,
            subcarriers,
            widths: vec![256, 128, 64, 64],
        }
    }

    pub fn out_width(&self) -> usize {
        match self.mode {
            RenderMode::Rssi => 1,
            RenderMode::Csi => 2 * self.subcarriers,
        }
    }

    pub fn in_width(&self) -> usize {
        8
    }

    fn schema(&self) -> Vec<SegSpec> {
        let mut out = Vec::new();
        out.push(SegSpec {
            name: "norm.target_mean".into(),
            rows: 1,
            cols: 1,
            init: Init::Const(0.0),
        });
        out.push(SegSpec {
            name: "norm.target_std".into(),
            rows: 1,
            cols: 1,
            init: Init::Const(1.0),
        });
        let mut in_dim = self.in_width();
        for (i, &w) in self.widths.iter().enumerate() {
            out.push(SegSpec {
                name: format!("mlp.l{i}.w"),
                rows: w,
                cols: in_dim,
                init: Init::Gauss((2.0 / in_dim as f64).sqrt()),
            });
            out.push(SegSpec {
                name: format!("mlp.l{i}.b"),
                rows: 1,
                cols: w,
                init: Init::Zero,
            });
            in_dim = w;
        }
        out.push(SegSpec {
            name: "mlp.head.w".into(),
            rows: self.out_width(),
            cols: in_dim,
            init: Init::Gauss(1.0 / (in_dim as f64).sqrt()),
        });
        out.push(SegSpec {
            name: "mlp.head.b".into(),
            rows: 1,
            cols: self.out_width(),
            init: Init::Zero,
        });
        out
    }

    pub fn init_params(&self, seed: u64) -> ModelParams {
        materialize(&self.schema(), seed)
    }

    pub fn prepare(&self, scene: &SceneGraph, records: &[DatasetRecord]) -> Result<MlpData> {
        if records.is_empty() {
            return Err(Error::Degenerate("empty dataset".into()));
        }
        let mut features = Vec::with_capacity(records.len());
        let mut targets_rssi = Vec::with_capacity(records.len());
        let mut targets_csi = Vec::with_capacity(records.len());
        let (mut train_idx, mut val_idx, mut test_idx) = (Vec::new(), Vec::new(), Vec::new());
        for (i, r) in records.iter().enumerate() {
            let rxn = tokenizer::normalize_position(scene, r.rx);
            let txn = tokenizer::normalize_position(scene, r.tx);
            let ff = freq_features(r.freq_hz);
            features.push(vec![
                rxn[0], rxn[1], rxn[2], txn[0], txn[1], txn[2], ff[0], ff[1],
            ]);
            targets_rssi.push(r.rssi_db);
            targets_csi.push(match r.csi_c64() {
                Some(h) => Some(fire_standardize(&h)?),
                None => None,
            });
            match r.split.as_str() {
                "train" => train_idx.push(i),
                "val" => val_idx.push(i),
                _ => test_idx.push(i),
            }
        }
        Ok(MlpData {
            features,
            targets_rssi,
            targets_csi,
            train_idx,
            val_idx,
            test_idx,
        })
    }

    pub fn eval_indices(
        &self,
        params: &ModelParams,
        data: &MlpData,
        idxs: &[usize],
        want_grad: bool,
    ) -> Result<(f64, Option<Vec<f64>>, f64)> {
        let mu = params.slice("norm.target_mean")?[0];
        let sigma = params.slice("norm.target_std")?[0];
        let mut tape = Tape::new();
        let map = LeafMap::build(&mut tape, params);
        let mut loss_node: Option<NodeId> = None;
        for &i in idxs {
            let x = tape.constant(1, self.in_width(), &data.features[i]);
            let mut h = x;
            for l in 0..self.widths.len() {
                let w = map.get(&format!("mlp.l{l}.w"));
                let b = map.get(&format!("mlp.l{l}.b"));
                let a = tape.affine(h, w, b);
                h = tape.relu(a);
            }
            let hw = map.get("mlp.head.w");
            let hb = map.get("mlp.head.b");
            let raw = tape.affine(h, hw, hb);
            let l = match self.mode {
                RenderMode::Rssi => {
                    let t = data.targets_rssi[i]
                        .ok_or_else(|| Error::usage("record lacks rssi target"))?;
                    let t_norm = (t - mu) / sigma;
                    let diff = tape.add_scalar(raw, -t_norm);
                    let sq = tape.mul(diff, diff);
                    tape.sum_all(sq)
                }
                RenderMode::Csi => {
                    let truth = data.targets_csi[i]
                        .as_ref()
                        .ok_or_else(|| Error::usage("record lacks csi target"))?;
                    let k = self.subcarriers;
                    let amp = tape.slice_cols(raw, 0, k);
                    let phase = tape.slice_cols(raw, k, 2 * k);
                    let cosp = tape.cos(phase);
                    let sinp = tape.sin(phase);
                    let re = tape.mul(amp, cosp);
                    let im = tape.mul(amp, sinp);
                    let t_re: Vec<f64> = truth.iter().map(|z| z.re).collect();
                    let t_im: Vec<f64> = truth.iter().map(|z| z.im).collect();
                    let tr = tape.constant(1, k, &t_re);
                    let ti = tape.constant(1, k, &t_im);
                    let dr = tape.sub(re, tr);
                    let di = tape.sub(im, ti);
                    let sr = tape.mul(dr, dr);
                    let si = tape.mul(di, di);
                    let s = tape.add(sr, si);
                    let total = tape.sum_all(s);
                    tape.scale(total, 1.0 / k as f64)
                }
            };
            loss_node = Some(match loss_node {
                None => l,
                Some(acc) => tape.add(acc, l),
            });
        }
        let loss_node = loss_node.ok_or_else(|| Error::usage("empty batch"))?;
        let loss = tape.scalar_value(loss_node);
        let grad = if want_grad {
            tape.backward(loss_node);
            Some(map.collect_grads(&tape, params))
        } else {
            None
        };
        Ok((loss, grad, tape.min_kink_gap))
    }

    pub fn predict(&self, params: &ModelParams, data: &MlpData, idx: usize) -> Result<RenderOut> {
        let mu = params.slice("norm.target_mean")?[0];
        let sigma = params.slice("norm.target_std")?[0];
        let mut tape = Tape::new();
        let map = LeafMap::build(&mut tape, params);
        let x = tape.constant(1, self.in_width(), &data.features[idx]);
        let mut h = x;
        for l in 0..self.widths.len() {
            let w = map.get(&format!("mlp.l{l}.w"));
            let b = map.get(&format!("mlp.l{l}.b"));
            let a = tape.affine(h, w, b);
            h = tape.relu(a);
        }
        let hw = map.get("mlp.head.w");
        let hb = map.get("mlp.head.b");
        let raw = tape.affine(h, hw, hb);
        let mut out = tape.value(raw).to_vec();
        if self.mode == RenderMode::Rssi {
            out[0] = out[0] * sigma + mu;
        }
        RenderOut::decode(self.mode, &out)
    }
}

pub struct MlpData {
    pub features: Vec<Vec<f64>>,
    pub targets_rssi: Vec<Option<f64>>,
    pub targets_csi: Vec<Option<Vec<C64>>>,
    pub train_idx: Vec<usize>,
    pub val_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::sim::{Aabb, Material, Obstacle, ObstacleKind, SimCfg};

    pub(crate) fn tiny_config() -> ModelConfig {
        ModelConfig {
            channels: 2,
            depth: 1,
            f_pos: 2,
            f_dir: 1,
            rays: 2,
            samples_per_ray: 3,
            atten_layers: 2,
            atten_width: 6,
            d_f: 4,
            film_hidden: 4,
            signal_layers: 1,
            signal_width: 5,
            d_s: 8,
            ..ModelConfig::default()
        }
    }

    pub(crate) fn tiny_scene() -> SceneGraph {
        SceneGraph {
            bounds: Aabb {
                min: [0.0, 0.0, 0.0],
                max: [6.0, 5.0, 3.0],
            },
            obstacles: vec![Obstacle {
                name: "col".into(),
                kind: ObstacleKind::Column {
                    min: [2.5, 2.0, 0.0],
                    max: [3.5, 3.0, 3.0],
                },
                material: Material::default(),
            }],
            tx: [1.0, 1.0, 1.5],
            frequency_hz: 2.4e9,
            wall_material: Material::default(),
        }
    }

    pub(crate) fn tiny_records(scene: &SceneGraph, n: usize) -> Vec<DatasetRecord> {
        let mut rng = Rng64::new(3);
        let cfg = SimCfg::default();
        (0..n)
            .map(|i| {
                let rx = [
                    rng.range(0.5, 5.5),
                    rng.range(0.5, 4.5),
                    1.5,
                ];
                DatasetRecord {
                    rx,
                    tx: scene.tx,
                    freq_hz: scene.frequency_hz,
                    rssi_db: Some(crate::sim::trace_rssi(scene, rx, &cfg).unwrap()),
                    csi: Some(
                        crate::sim::synth_csi(scene, rx, 52, &cfg)
                            .unwrap()
                            .iter()
                            .map(|z| [z.re, z.im])
                            .collect(),
                    ),
                    split: if i % 5 == 4 { "test" } else { "train" }.into(),
                }
            })
            .collect()
    }

    #[test]
    fn layout_is_deterministic_and_valid() {
        let model = GaiNerf::new(tiny_config()).unwrap();
        let a = model.init_params(9);
        let b = model.init_params(9);
        assert_eq!(a, b);
        a.validate().unwrap();
        assert!(a.segment("rt.head.w").is_some());
        assert!(a.segment("enc.b0.qkv.g0").is_some());
    }

    #[test]
    fn variant_layouts_shrink() {
        let full = GaiNerf::new(tiny_config()).unwrap().init_params(1);
        let mut cfg = tiny_config();
        cfg.variant = Variant::NoTokenizer;
        let no_tok = GaiNerf::new(cfg).unwrap().init_params(1);
        assert!(no_tok.len() < full.len(), "no_tokenizer must drop params");
        assert!(no_tok.segment("enc.cls").is_none());
        let mut cfg = tiny_config();
        cfg.variant = Variant::NoAttentionRt;
        let no_rt = GaiNerf::new(cfg).unwrap().init_params(1);
        assert!(no_rt.segment("rt.wq").is_none());
        assert!(no_rt.segment("classic.head.w").is_some());
    }

    #[test]
    fn forward_and_loss_finite_all_variants() {
        let scene = tiny_scene();
        let records = tiny_records(&scene, 6);
        for variant in [Variant::Full, Variant::NoTokenizer, Variant::NoAttentionRt] {
            let mut cfg = tiny_config();
            cfg.variant = variant;
            let model = GaiNerf::new(cfg).unwrap();
            let params = model.init_params(4);
            let data = model.prepare(&scene, &records, 4).unwrap();
            let (loss, grad, _) = model
                .eval_indices(&params, &data, &[0, 1, 2], true)
                .unwrap();
            assert!(loss.is_finite());
            let g = grad.unwrap();
            assert_eq!(g.len(), params.len());
            assert!(g.iter().all(|x| x.is_finite()));
            assert!(
                g.iter().any(|x| x.abs() > 0.0),
                "{}: gradient must be nonzero",
                variant.name()
            );
        }
    }

    #[test]
    fn csi_mode_forward_works() {
        let scene = tiny_scene();
        let records = tiny_records(&scene, 4);
        let mut cfg = tiny_config();
        cfg.mode = RenderMode::Csi;
        cfg.subcarriers = 52;
        let model = GaiNerf::new(cfg).unwrap();
        let params = model.init_params(5);
        let data = model.prepare(&scene, &records, 5).unwrap();
        let (loss, grad, _) = model.eval_indices(&params, &data, &[0, 1], true).unwrap();
        assert!(loss.is_finite());
        assert!(grad.unwrap().iter().all(|x| x.is_finite()));
        match model.predict_prepared(&params, &data, 0).unwrap() {
            RenderOut::Csi(h) => assert_eq!(h.len(), 52),
            _ => panic!("expected csi output"),
        }
    }

    #[test]
    fn tokenizer_ablation_ignores_scene_edits() {
        // with a zeroed global embedding, predictions cannot react to scene
        // changes (that is the point of the ablation)
        let scene = tiny_scene();
        let records = tiny_records(&scene, 3);
        let mut cfg = tiny_config();
        cfg.variant = Variant::NoTokenizer;
        let model = GaiNerf::new(cfg).unwrap();
        let params = model.init_params(6);
        let edited = crate::sim::edit_scene(
            &scene,
            &crate::sim::SceneEdit::Remove { name: "col".into() },
        )
        .unwrap();
        let p1 = model
            .predict(&params, &scene, records[0].rx, scene.frequency_hz, 6)
            .unwrap();
        let p2 = model
            .predict(&params, &edited, records[0].rx, scene.frequency_hz, 6)
            .unwrap();
        assert_eq!(p1, p2);
    }

    #[test]
    fn full_model_sees_scene_edits() {
        let scene = tiny_scene();
        let records = tiny_records(&scene, 3);
        let model = GaiNerf::new(tiny_config()).unwrap();
        let params = model.init_params(6);
        let edited = crate::sim::edit_scene(
            &scene,
            &crate::sim::SceneEdit::Remove { name: "col".into() },
        )
        .unwrap();
        let p1 = model
            .predict(&params, &scene, records[0].rx, scene.frequency_hz, 6)
            .unwrap();
        let p2 = model
            .predict(&params, &edited, records[0].rx, scene.frequency_hz, 6)
            .unwrap();
        assert_ne!(p1, p2, "global embedding must react to scene edits");
    }

    #[test]
    fn baseline_architecture_reference_widths() {
        let baseline = MlpBaseline::reference(RenderMode::Rssi, 52);
        assert_eq!(baseline.widths, vec![256, 128, 64, 64]);
        let params = baseline.init_params(7);
        let l0 = params.segment("mlp.l0.w").unwrap();
        assert_eq!((l0.rows, l0.cols), (256, 8));
        let l3 = params.segment("mlp.l3.w").unwrap();
        assert_eq!((l3.rows, l3.cols), (64, 64));
        let head = params.segment("mlp.head.w").unwrap();
        assert_eq!((head.rows, head.cols), (1, 64));
    }

    #[test]
    fn baseline_forward_finite() {
        let scene = tiny_scene();
        let records = tiny_records(&scene, 5);
        let baseline = MlpBaseline::reference(RenderMode::Rssi, 52);
        let params = baseline.init_params(8);
        let data = baseline.prepare(&scene, &records).unwrap();
        let (loss, grad, _) = baseline
            .eval_indices(&params, &data, &[0, 1, 2], true)
            .unwrap();
        assert!(loss.is_finite());
        assert!(grad.unwrap().iter().all(|x| x.is_finite()));
    }

    #[test]
    fn config_hash_changes_with_variant() {
        let a = tiny_config();
        let mut b = tiny_config();
        b.variant = Variant::NoTokenizer;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash(), tiny_config().hash());
    }
}
