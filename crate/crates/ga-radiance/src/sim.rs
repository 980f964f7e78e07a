//! Synthetic indoor RF scene simulator.
//!
//! Ground truth comes from log-distance free-space path loss plus per-wall
//! penetration losses on the line of sight, power-summed with first-order
//! image-method reflections off room walls and obstacle faces. CSI adds the
//! phase dimension: the same path set combined coherently per subcarrier
//! across a 20 MHz band. RSSI therefore uses incoherent power addition
//! (meters average over fading) while CSI keeps complex structure.
//!
//! Scenes are axis-aligned rooms with wall segments and column boxes, each
//! carrying a material (penetration loss in dB, amplitude reflection
//! coefficient). Scene files and dataset files are JSON per the schemas in
//! this module; everything is deterministic given seeds.

use crate::c64::C64;
use crate::error::{Error, Result};
use crate::rng::Rng64;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use std::path::Path;

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

// ---------------------------------------------------------------------------
// Scene model
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Material {
    /// dB lost when a path crosses this obstacle.
    pub penetration_loss_db: f64,
    /// Amplitude reflection coefficient in [0, 1].
    pub reflection_coeff: f64,
}

impl Material {
    pub fn validate(&self) -> Result<()> {
        if self.penetration_loss_db < 0.0 {
            return Err(Error::usage("penetration_loss_db must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.reflection_coeff) {
            return Err(Error::usage("reflection_coeff must be in [0, 1]"));
        }
        Ok(())
    }
}

impl Default for Material {
    fn default() -> Self {
        Material {
            penetration_loss_db: 5.0,
            reflection_coeff: 0.3,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn contains(&self, p: [f64; 3], margin: f64) -> bool {
        (0..3).all(|k| p[k] >= self.min[k] - margin && p[k] <= self.max[k] + margin)
    }

    pub fn center(&self) -> [f64; 3] {
        [
            0.5 * (self.min[0] + self.max[0]),
            0.5 * (self.min[1] + self.max[1]),
            0.5 * (self.min[2] + self.max[2]),
        ]
    }

    pub fn diagonal(&self) -> f64 {
        (0..3)
            .map(|k| (self.max[k] - self.min[k]).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum ObstacleKind {
    /// Vertical wall segment from (a.x, a.y) to (b.x, b.y), spanning
    /// z0..z1.
    #[serde(rename = "wall")]
    Wall {
        a: [f64; 2],
        b: [f64; 2],
        z0: f64,
        z1: f64,
    },
    /// Axis-aligned box (columns, furniture).
    #[serde(rename = "column")]
    Column { min: [f64; 3], max: [f64; 3] },
}

// no deny_unknown_fields here: serde cannot combine it with #[serde(flatten)]
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Obstacle {
    pub name: String,
    #[serde(flatten)]
    pub kind: ObstacleKind,
    pub material: Material,
}

impl Obstacle {
    pub fn centroid(&self) -> [f64; 3] {
        match &self.kind {
            ObstacleKind::Wall { a, b, z0, z1 } => [
                0.5 * (a[0] + b[0]),
                0.5 * (a[1] + b[1]),
                0.5 * (z0 + z1),
            ],
            ObstacleKind::Column { min, max } => [
                0.5 * (min[0] + max[0]),
                0.5 * (min[1] + max[1]),
                0.5 * (min[2] + max[2]),
            ],
        }
    }

    fn translated(&self, d: [f64; 3]) -> Obstacle {
        let kind = match &self.kind {
            ObstacleKind::Wall { a, b, z0, z1 } => ObstacleKind::Wall {
                a: [a[0] + d[0], a[1] + d[1]],
                b: [b[0] + d[0], b[1] + d[1]],
                z0: z0 + d[2],
                z1: z1 + d[2],
            },
            ObstacleKind::Column { min, max } => ObstacleKind::Column {
                min: [min[0] + d[0], min[1] + d[1], min[2] + d[2]],
                max: [max[0] + d[0], max[1] + d[1], max[2] + d[2]],
            },
        };
        Obstacle {
            name: self.name.clone(),
            kind,
            material: self.material,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SceneGraph {
    pub bounds: Aabb,
    pub obstacles: Vec<Obstacle>,
    pub tx: [f64; 3],
    pub frequency_hz: f64,
    /// Material of the room's bounding walls (reflectors).
    #[serde(default)]
    pub wall_material: Material,
}

pub const FREQ_2G4: f64 = 2.4e9;
pub const FREQ_5G: f64 = 5.0e9;

impl SceneGraph {
    pub fn validate(&self) -> Result<()> {
        if self.frequency_hz <= 0.0 {
            return Err(Error::usage("frequency must be positive"));
        }
        if !self.bounds.contains(self.tx, 0.0) {
            return Err(Error::usage("tx outside scene bounds"));
        }
        self.wall_material.validate()?;
        for o in &self.obstacles {
            o.material.validate()?;
            if !self.bounds.contains(o.centroid(), 1e-9) {
                return Err(Error::usage(format!("obstacle {} outside bounds", o.name)));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<SceneGraph> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let scene: SceneGraph =
            serde_json::from_str(&text).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
        scene.validate()?;
        Ok(scene)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("scene serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn with_frequency(&self, f: f64) -> SceneGraph {
        let mut s = self.clone();
        s.frequency_hz = f;
        s
    }
}

// ---------------------------------------------------------------------------
// Geometry predicates
// ---------------------------------------------------------------------------

const EDGE_EPS: f64 = 1e-9;

fn segment_crosses_wall(p: [f64; 3], q: [f64; 3], a: [f64; 2], b: [f64; 2], z0: f64, z1: f64) -> bool {
    // plane through the segment, vertical
    let ex = b[0] - a[0];
    let ey = b[1] - a[1];
    let len = (ex * ex + ey * ey).sqrt();
    if len < 1e-12 {
        return false;
    }
    let n = [-ey / len, ex / len];
    let d = n[0] * a[0] + n[1] * a[1];
    let sp = n[0] * p[0] + n[1] * p[1] - d;
    let sq = n[0] * q[0] + n[1] * q[1] - d;
    if sp * sq >= -EDGE_EPS {
        return false;
    }
    let t = sp / (sp - sq);
    let hit = [
        p[0] + t * (q[0] - p[0]),
        p[1] + t * (q[1] - p[1]),
        p[2] + t * (q[2] - p[2]),
    ];
    let u = ((hit[0] - a[0]) * ex + (hit[1] - a[1]) * ey) / (len * len);
    (0.0..=1.0).contains(&u) && hit[2] >= z0 && hit[2] <= z1
}

fn segment_crosses_box(p: [f64; 3], q: [f64; 3], min: [f64; 3], max: [f64; 3]) -> bool {
    // slab test on the parametrised segment p + t (q - p), t in [0, 1]
    let mut t0 = 0.0f64;
    let mut t1 = 1.0f64;
    for k in 0..3 {
        let d = q[k] - p[k];
        if d.abs() < 1e-12 {
            if p[k] < min[k] || p[k] > max[k] {
                return false;
            }
            continue;
        }
        let mut ta = (min[k] - p[k]) / d;
        let mut tb = (max[k] - p[k]) / d;
        if ta > tb {
            std::mem::swap(&mut ta, &mut tb);
        }
        t0 = t0.max(ta);
        t1 = t1.min(tb);
        if t0 > t1 {
            return false;
        }
    }
    t1 > EDGE_EPS && t0 < 1.0 - EDGE_EPS
}

fn obstacle_crossed(p: [f64; 3], q: [f64; 3], o: &Obstacle) -> bool {
    match &o.kind {
        ObstacleKind::Wall { a, b, z0, z1 } => segment_crosses_wall(p, q, *a, *b, *z0, *z1),
        ObstacleKind::Column { min, max } => segment_crosses_box(p, q, *min, *max),
    }
}

/// Sum of penetration losses over all obstacles the segment crosses,
/// skipping the obstacle at `exclude` (the reflecting surface's own body).
fn penetration_loss(scene: &SceneGraph, p: [f64; 3], q: [f64; 3], exclude: Option<usize>) -> f64 {
    scene
        .obstacles
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != exclude)
        .filter(|(_, o)| obstacle_crossed(p, q, o))
        .map(|(_, o)| o.material.penetration_loss_db)
        .sum()
}

// ---------------------------------------------------------------------------
// Reflectors (first-order image method)
// ---------------------------------------------------------------------------

struct Reflector {
    /// Unit normal and offset of {x : n.x = d}.
    normal: [f64; 3],
    offset: f64,
    shape: ReflectorShape,
    coeff: f64,
    obstacle: Option<usize>,
}

enum ReflectorShape {
    WallQuad { a: [f64; 2], b: [f64; 2], z0: f64, z1: f64 },
    /// Axis-aligned rectangle at fixed `axis` coordinate.
    Face { axis: usize, lo: [f64; 3], hi: [f64; 3] },
}

impl Reflector {
    fn contains(&self, p: [f64; 3]) -> bool {
        match &self.shape {
            ReflectorShape::WallQuad { a, b, z0, z1 } => {
                let ex = b[0] - a[0];
                let ey = b[1] - a[1];
                let len2 = ex * ex + ey * ey;
                let u = ((p[0] - a[0]) * ex + (p[1] - a[1]) * ey) / len2;
                (-1e-9..=1.0 + 1e-9).contains(&u) && p[2] >= *z0 - 1e-9 && p[2] <= *z1 + 1e-9
            }
            ReflectorShape::Face { axis, lo, hi } => (0..3)
                .filter(|k| k != axis)
                .all(|k| p[k] >= lo[k] - 1e-9 && p[k] <= hi[k] + 1e-9),
        }
    }
}

fn reflectors(scene: &SceneGraph) -> Vec<Reflector> {
    let mut out = Vec::new();
    let b = &scene.bounds;
    // four side walls of the room (floor/ceiling reflections omitted)
    for (axis, value, sign) in [
        (0, b.min[0], 1.0),
        (0, b.max[0], -1.0),
        (1, b.min[1], 1.0),
        (1, b.max[1], -1.0),
    ] {
        let mut normal = [0.0; 3];
        normal[axis] = sign;
        out.push(Reflector {
            normal,
            offset: value * sign,
            shape: ReflectorShape::Face {
                axis,
                lo: b.min,
                hi: b.max,
            },
            coeff: scene.wall_material.reflection_coeff,
            obstacle: None,
        });
    }
    for (i, o) in scene.obstacles.iter().enumerate() {
        match &o.kind {
            ObstacleKind::Wall { a, b: wb, z0, z1 } => {
                let ex = wb[0] - a[0];
                let ey = wb[1] - a[1];
                let len = (ex * ex + ey * ey).sqrt();
                if len < 1e-12 {
                    continue;
                }
                let normal = [-ey / len, ex / len, 0.0];
                out.push(Reflector {
                    normal,
                    offset: normal[0] * a[0] + normal[1] * a[1],
                    shape: ReflectorShape::WallQuad {
                        a: *a,
                        b: *wb,
                        z0: *z0,
                        z1: *z1,
                    },
                    coeff: o.material.reflection_coeff,
                    obstacle: Some(i),
                });
            }
            ObstacleKind::Column { min, max } => {
                for (axis, value, sign) in [
                    (0, min[0], -1.0),
                    (0, max[0], 1.0),
                    (1, min[1], -1.0),
                    (1, max[1], 1.0),
                ] {
                    let mut normal = [0.0; 3];
                    normal[axis] = sign;
                    out.push(Reflector {
                        normal,
                        offset: value * sign,
                        shape: ReflectorShape::Face {
                            axis,
                            lo: *min,
                            hi: *max,
                        },
                        coeff: o.material.reflection_coeff,
                        obstacle: Some(i),
                    });
                }
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Propagation
// ---------------------------------------------------------------------------

/// Free-space path loss, 32.44 + 20log10(d_km) + 20log10(f_MHz).
pub fn fspl_db(distance_m: f64, freq_hz: f64) -> f64 {
    let d_km = (distance_m / 1000.0).max(1e-9);
    let f_mhz = freq_hz / 1e6;
    32.44 + 20.0 * d_km.log10() + 20.0 * f_mhz.log10()
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SimCfg {
    pub p_tx_dbm: f64,
    pub reflections: bool,
    /// Gaussian shadowing sigma in dB; 0 disables.
    pub shadowing_sigma_db: f64,
    pub seed: u64,
}

impl Default for SimCfg {
    fn default() -> Self {
        SimCfg {
            p_tx_dbm: 0.0,
            reflections: true,
            shadowing_sigma_db: 0.0,
            seed: 0,
        }
    }
}

struct PropPath {
    length_m: f64,
    loss_db: f64,
}

fn enumerate_paths(scene: &SceneGraph, rx: [f64; 3], cfg: &SimCfg) -> Result<Vec<PropPath>> {
    let tx = scene.tx;
    let d: f64 = (0..3).map(|k| (rx[k] - tx[k]).powi(2)).sum::<f64>().sqrt();
    if d < 1e-9 {
        return Err(Error::Degenerate("rx coincides with tx".into()));
    }
    if !scene.bounds.contains(rx, 1e-9) {
        return Err(Error::usage("rx outside scene bounds"));
    }
    let mut paths = vec![PropPath {
        length_m: d,
        loss_db: fspl_db(d, scene.frequency_hz) + penetration_loss(scene, rx, tx, None),
    }];
    if cfg.reflections {
        for r in reflectors(scene) {
            if r.coeff <= 0.0 {
                continue;
            }
            let s_tx: f64 = (0..3).map(|k| r.normal[k] * tx[k]).sum::<f64>() - r.offset;
            let s_rx: f64 = (0..3).map(|k| r.normal[k] * rx[k]).sum::<f64>() - r.offset;
            if s_tx * s_rx <= 1e-12 {
                continue;
            }
            let img = [
                tx[0] - 2.0 * s_tx * r.normal[0],
                tx[1] - 2.0 * s_tx * r.normal[1],
                tx[2] - 2.0 * s_tx * r.normal[2],
            ];
            let u = s_rx / (s_rx + s_tx);
            if !(EDGE_EPS..=1.0 - EDGE_EPS).contains(&u) {
                continue;
            }
            let hit = [
                rx[0] + u * (img[0] - rx[0]),
                rx[1] + u * (img[1] - rx[1]),
                rx[2] + u * (img[2] - rx[2]),
            ];
            if !r.contains(hit) {
                continue;
            }
            let length: f64 = (0..3).map(|k| (rx[k] - img[k]).powi(2)).sum::<f64>().sqrt();
            let pen = penetration_loss(scene, rx, hit, r.obstacle)
                + penetration_loss(scene, hit, tx, r.obstacle);
            let loss = fspl_db(length, scene.frequency_hz) + pen - 20.0 * r.coeff.log10();
            paths.push(PropPath {
                length_m: length,
                loss_db: loss,
            });
        }
    }
    Ok(paths)
}

fn shadowing_db(scene: &SceneGraph, rx: [f64; 3], cfg: &SimCfg) -> f64 {
    if cfg.shadowing_sigma_db <= 0.0 {
        return 0.0;
    }
    let mut h: u64 = 0xcbf29ce484222325;
    for c in rx.iter().chain(scene.tx.iter()) {
        for byte in c.to_le_bytes() {
            h ^= byte as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    }
    cfg.shadowing_sigma_db * Rng64::stream(cfg.seed, h).normal()
}

/// RSSI in dBm: transmit power minus path losses, power-summed over the LOS
/// path and first-order reflections, with optional seeded shadowing.
pub fn trace_rssi(scene: &SceneGraph, rx: [f64; 3], cfg: &SimCfg) -> Result<f64> {
    let paths = enumerate_paths(scene, rx, cfg)?;
    let mut linear = 0.0;
    for p in &paths {
        linear += 10f64.powf((cfg.p_tx_dbm - p.loss_db) / 10.0);
    }
    Ok(10.0 * linear.log10() + shadowing_db(scene, rx, cfg))
}

/// Complex channel response over `subcarriers` tones spanning a 20 MHz band
/// centred on the carrier: H[k] = sum_p a_p exp(-j 2 pi f_k tau_p).
pub fn synth_csi(
    scene: &SceneGraph,
    rx: [f64; 3],
    subcarriers: usize,
    cfg: &SimCfg,
) -> Result<Vec<C64>> {
    if subcarriers < 2 {
        return Err(Error::usage("need at least 2 subcarriers"));
    }
    let paths = enumerate_paths(scene, rx, cfg)?;
    let band = 20e6;
    let f0 = scene.frequency_hz - band / 2.0;
    let df = band / (subcarriers - 1) as f64;
    let shadow_amp = 10f64.powf(shadowing_db(scene, rx, cfg) / 20.0);
    let mut h = vec![C64::ZERO; subcarriers];
    for p in &paths {
        let a = 10f64.powf((cfg.p_tx_dbm - p.loss_db) / 20.0) * shadow_amp;
        let tau = p.length_m / SPEED_OF_LIGHT;
        for (k, hk) in h.iter_mut().enumerate() {
            let f = f0 + df * k as f64;
            let phase = -2.0 * std::f64::consts::PI * f * tau;
            *hk = *hk + C64::cis(phase).scale(a);
        }
    }
    Ok(h)
}

// ---------------------------------------------------------------------------
// Scene edits (generalization protocol)
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "op", deny_unknown_fields)]
pub enum SceneEdit {
    #[serde(rename = "add")]
    Add { obstacle: Obstacle },
    #[serde(rename = "relocate")]
    Relocate { name: String, to: [f64; 3] },
    #[serde(rename = "remove")]
    Remove { name: String },
}

/// Apply one edit, returning a new scene; the original is untouched.
pub fn edit_scene(scene: &SceneGraph, edit: &SceneEdit) -> Result<SceneGraph> {
    let mut out = scene.clone();
    match edit {
        SceneEdit::Add { obstacle } => {
            if scene.obstacles.iter().any(|o| o.name == obstacle.name) {
                return Err(Error::usage(format!(
                    "obstacle {} already exists",
                    obstacle.name
                )));
            }
            obstacle.material.validate()?;
            out.obstacles.push(obstacle.clone());
        }
        SceneEdit::Relocate { name, to } => {
            let idx = scene
                .obstacles
                .iter()
                .position(|o| o.name == *name)
                .ok_or_else(|| Error::usage(format!("unknown obstacle {name}")))?;
            let c = scene.obstacles[idx].centroid();
            let d = [to[0] - c[0], to[1] - c[1], to[2] - c[2]];
            out.obstacles[idx] = scene.obstacles[idx].translated(d);
        }
        SceneEdit::Remove { name } => {
            let idx = scene
                .obstacles
                .iter()
                .position(|o| o.name == *name)
                .ok_or_else(|| Error::usage(format!("unknown obstacle {name}")))?;
            out.obstacles.remove(idx);
        }
    }
    out.validate()?;
    Ok(out)
}

// ---------------------------------------------------------------------------
// Dataset generation
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    pub z: f64,
    /// Uniform jitter amplitude (m) applied to x and y.
    #[serde(default)]
    pub jitter: f64,
    /// Inset from the walls (m).
    #[serde(default = "default_margin")]
    pub margin: f64,
}

fn default_margin() -> f64 {
    0.3
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train: 0.8,
            val: 0.1,
            test: 0.1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelMode {
    Rssi,
    Csi,
    Both,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetRecord {
    pub rx: [f64; 3],
    pub tx: [f64; 3],
    pub freq_hz: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rssi_db: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub csi: Option<Vec<[f64; 2]>>,
    pub split: String,
}

impl DatasetRecord {
    pub fn csi_c64(&self) -> Option<Vec<C64>> {
        self.csi
            .as_ref()
            .map(|v| v.iter().map(|p| C64::new(p[0], p[1])).collect())
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct DatasetStats {
    pub count: usize,
    pub skipped: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub rssi_mean_db: f64,
    pub rssi_min_db: f64,
    pub rssi_max_db: f64,
}

const SPLIT_TAG: u64 = 0x53_50_4C_49_54;
const JITTER_TAG: u64 = 0x4A_49_54;

/// Generate labelled samples on a jittered grid with a deterministic
/// train/val/test split (seeded permutation, sliced by ratio). Grid points
/// that coincide with the transmitter are skipped and counted.
pub fn grid_records(
    scene: &SceneGraph,
    grid: &GridSpec,
    split: &SplitSpec,
    mode: LabelMode,
    cfg: &SimCfg,
    seed: u64,
    subcarriers: usize,
) -> Result<(Vec<DatasetRecord>, usize)> {
    scene.validate()?;
    if grid.nx == 0 || grid.ny == 0 {
        return Err(Error::usage("grid must have at least one point"));
    }
    let frac_sum = split.train + split.val + split.test;
    if (frac_sum - 1.0).abs() > 1e-9 {
        return Err(Error::usage("split fractions must sum to 1"));
    }
    let b = &scene.bounds;
    if grid.z < b.min[2] || grid.z > b.max[2] {
        return Err(Error::usage("grid z outside bounds"));
    }
    let mut jrng = Rng64::stream(seed, JITTER_TAG);
    let mut points = Vec::new();
    let mut skipped = 0usize;
    for iy in 0..grid.ny {
        for ix in 0..grid.nx {
            let fx = (ix as f64 + 0.5) / grid.nx as f64;
            let fy = (iy as f64 + 0.5) / grid.ny as f64;
            let mut p = [
                b.min[0] + grid.margin + (b.max[0] - b.min[0] - 2.0 * grid.margin) * fx,
                b.min[1] + grid.margin + (b.max[1] - b.min[1] - 2.0 * grid.margin) * fy,
                grid.z,
            ];
            if grid.jitter > 0.0 {
                p[0] += jrng.range(-grid.jitter, grid.jitter);
                p[1] += jrng.range(-grid.jitter, grid.jitter);
            }
            let d: f64 = (0..3).map(|k| (p[k] - scene.tx[k]).powi(2)).sum::<f64>().sqrt();
            if d < 1e-6 {
                skipped += 1;
                continue;
            }
            points.push(p);
        }
    }
    let n = points.len();
    let mut order: Vec<usize> = (0..n).collect();
    Rng64::stream(seed, SPLIT_TAG).shuffle(&mut order);
    let n_train = (n as f64 * split.train).floor() as usize;
    let n_val = (n as f64 * split.val).floor() as usize;
    let mut splits = vec!["test"; n];
    for (rank, &idx) in order.iter().enumerate() {
        splits[idx] = if rank < n_train {
            "train"
        } else if rank < n_train + n_val {
            "val"
        } else {
            "test"
        };
    }
    let mut records = Vec::with_capacity(n);
    for (i, &p) in points.iter().enumerate() {
        let rssi = match mode {
            LabelMode::Rssi | LabelMode::Both => Some(trace_rssi(scene, p, cfg)?),
            LabelMode::Csi => None,
        };
        let csi = match mode {
            LabelMode::Csi | LabelMode::Both => Some(
                synth_csi(scene, p, subcarriers, cfg)?
                    .iter()
                    .map(|z| [z.re, z.im])
                    .collect(),
            ),
            LabelMode::Rssi => None,
        };
        records.push(DatasetRecord {
            rx: p,
            tx: scene.tx,
            freq_hz: scene.frequency_hz,
            rssi_db: rssi,
            csi,
            split: splits[i].to_string(),
        });
    }
    Ok((records, skipped))
}

/// [`grid_records`] plus a JSON-lines dump and summary statistics.
pub fn generate_dataset(
    scene: &SceneGraph,
    grid: &GridSpec,
    split: &SplitSpec,
    mode: LabelMode,
    cfg: &SimCfg,
    seed: u64,
    subcarriers: usize,
    out_path: &Path,
) -> Result<DatasetStats> {
    let (records, skipped) = grid_records(scene, grid, split, mode, cfg, seed, subcarriers)?;
    let file = std::fs::File::create(out_path).map_err(|e| Error::io(out_path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let mut stats = DatasetStats {
        rssi_min_db: f64::INFINITY,
        rssi_max_db: f64::NEG_INFINITY,
        skipped,
        ..Default::default()
    };
    let mut rssi_sum = 0.0;
    for rec in &records {
        if let Some(r) = rec.rssi_db {
            rssi_sum += r;
            stats.rssi_min_db = stats.rssi_min_db.min(r);
            stats.rssi_max_db = stats.rssi_max_db.max(r);
        }
        match rec.split.as_str() {
            "train" => stats.train += 1,
            "val" => stats.val += 1,
            _ => stats.test += 1,
        }
        serde_json::to_writer(&mut w, rec).map_err(|e| Error::Schema(e.to_string()))?;
        w.write_all(b"\n").map_err(|e| Error::io(out_path, e))?;
        stats.count += 1;
    }
    w.flush().map_err(|e| Error::io(out_path, e))?;
    if stats.count > 0 {
        stats.rssi_mean_db = rssi_sum / stats.count as f64;
    }
    Ok(stats)
}

pub fn read_dataset(path: &Path) -> Result<Vec<DatasetRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = std::io::BufReader::new(file);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: DatasetRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Schema(format!("{} line {}: {e}", path.display(), i + 1)))?;
        out.push(rec);
    }
    if out.is_empty() {
        return Err(Error::Degenerate(format!(
            "dataset {} is empty",
            path.display()
        )));
    }
    Ok(out)
}
