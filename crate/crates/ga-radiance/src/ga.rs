//! Exact Clifford-algebra kernel over four generators.
//!
//! Multivectors carry 16 coefficients in a fixed blade order
//! `(1, e1, e2, e3, e4, e12, e13, e14, e23, e24, e34, e123, e124, e134,
//! e234, e1234)`: grade-major, lexicographic within each grade. The metric
//! is a runtime [`Signature`] giving the square of each generator; two
//! presets matter in practice, projective [`Signature::pga`] with
//! `e4^2 = 0` and Lorentzian [`Signature::paper`] with `e4^2 = -1`.
//!
//! The geometric product is driven by a per-signature 16x16 blade table
//! (sign and output blade per input pair), built once and cached. For two
//! grade-1 elements the product splits into a symmetric scalar part and an
//! antisymmetric bivector part, which is the decomposition everything else
//! here builds on.
//!
//! Geometry lives in the algebra through [`embed_geometry`]: directions are
//! grade-1 with zero `e4`, points carry a unit homogeneous `e4` component,
//! and a plane `{p : n.p + d = 0}` embeds as `n + d e4`. Under the
//! projective signature a plane mirror acts on the *dual* (trivector)
//! representation of a point, which [`reflect_point_in_plane`] handles; the
//! plain vector sandwich realises origin reflections and rotations.

use crate::error::{Error, Result};
use crate::rng::Rng64;
use serde::{Deserialize, Serialize};
use std::sync::OnceLock;

pub const BLADE_COUNT: usize = 16;

/// Generator bitmasks in canonical blade order (bit i = generator e_{i+1}).
pub const BLADE_MASKS: [u8; 16] = [
    0b0000, // 1
    0b0001, // e1
    0b0010, // e2
    0b0100, // e3
    0b1000, // e4
    0b0011, // e12
    0b0101, // e13
    0b1001, // e14
    0b0110, // e23
    0b1010, // e24
    0b1100, // e34
    0b0111, // e123
    0b1011, // e124
    0b1101, // e134
    0b1110, // e234
    0b1111, // e1234
];

pub const BLADE_NAMES: [&str; 16] = [
    "1", "e1", "e2", "e3", "e4", "e12", "e13", "e14", "e23", "e24", "e34", "e123", "e124", "e134",
    "e234", "e1234",
];

/// Map from generator bitmask to canonical blade index.
const fn mask_to_index_table() -> [usize; 16] {
    let mut t = [0usize; 16];
    let mut i = 0;
    while i < 16 {
        t[BLADE_MASKS[i] as usize] = i;
        i += 1;
    }
    t
}

pub const MASK_TO_INDEX: [usize; 16] = mask_to_index_table();

/// Grade of blade index k = popcount of its generator mask.
pub fn blade_grade(index: usize) -> usize {
    BLADE_MASKS[index].count_ones() as usize
}

// ---------------------------------------------------------------------------
// Signature
// ---------------------------------------------------------------------------

/// Metric signature: the square of each generator, in {+1, -1, 0}.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "[i8; 4]", into = "[i8; 4]")]
pub struct Signature {
    squares: [i8; 4],
}

impl Signature {
    pub fn new(squares: [i8; 4]) -> Result<Self> {
        for (i, s) in squares.iter().enumerate() {
            if !matches!(s, -1 | 0 | 1) {
                return Err(Error::usage(format!(
                    "signature entry e{} squared must be in {{-1, 0, 1}}, got {}",
                    i + 1,
                    s
                )));
            }
        }
        Ok(Signature { squares })
    }

    /// Projective preset: e1..e3 square to +1, e4 squares to 0.
    pub fn pga() -> Self {
        Signature {
            squares: [1, 1, 1, 0],
        }
    }

    /// Lorentzian preset: e1..e3 square to +1, e4 squares to -1.
    pub fn paper() -> Self {
        Signature {
            squares: [1, 1, 1, -1],
        }
    }

    pub fn squares(&self) -> [i8; 4] {
        self.squares
    }

    fn code(&self) -> usize {
        self.squares
            .iter()
            .fold(0usize, |acc, &s| acc * 3 + (s + 1) as usize)
    }

    fn table(&self) -> &'static ProductTable {
        static TABLES: [OnceLock<ProductTable>; 81] = [const { OnceLock::new() }; 81];
        TABLES[self.code()].get_or_init(|| ProductTable::build(self))
    }

    /// Metric weight of each blade: the product of its generators' squares.
    /// Blades containing a null generator weigh zero, which is what makes
    /// the induced bilinear form signature-consistent.
    pub fn blade_metric(&self) -> [f64; 16] {
        let mut m = [0.0; 16];
        for (k, &mask) in BLADE_MASKS.iter().enumerate() {
            let mut w = 1.0;
            for g in 0..4 {
                if mask & (1 << g) != 0 {
                    w *= self.squares[g] as f64;
                }
            }
            m[k] = w;
        }
        m
    }
}

impl TryFrom<[i8; 4]> for Signature {
    type Error = String;
    fn try_from(v: [i8; 4]) -> std::result::Result<Self, String> {
        Signature::new(v).map_err(|e| e.to_string())
    }
}

impl From<Signature> for [i8; 4] {
    fn from(s: Signature) -> [i8; 4] {
        s.squares
    }
}

/// Sign of reordering e_A e_B into ascending order, ignoring the metric:
/// (-1)^k where k counts generator transpositions.
fn permutation_sign(a_mask: u8, b_mask: u8) -> f64 {
    let mut swaps = 0u32;
    for g in 0..4 {
        if b_mask & (1 << g) != 0 {
            swaps += (a_mask >> (g + 1)).count_ones();
        }
    }
    if swaps % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

struct ProductTable {
    sign: [[f64; 16]; 16],
    index: [[usize; 16]; 16],
}

impl ProductTable {
    fn build(sig: &Signature) -> Self {
        let mut sign = [[0.0; 16]; 16];
        let mut index = [[0usize; 16]; 16];
        for (i, &a) in BLADE_MASKS.iter().enumerate() {
            for (j, &b) in BLADE_MASKS.iter().enumerate() {
                let mut s = permutation_sign(a, b);
                let common = a & b;
                for g in 0..4 {
                    if common & (1 << g) != 0 {
                        s *= sig.squares[g] as f64;
                    }
                }
                sign[i][j] = s;
                index[i][j] = MASK_TO_INDEX[(a ^ b) as usize];
            }
        }
        ProductTable { sign, index }
    }
}

// ---------------------------------------------------------------------------
// Multivector
// ---------------------------------------------------------------------------

/// 16-coefficient element of the algebra, in canonical blade order.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Multivector(pub [f64; 16]);

impl Multivector {
    pub const ZERO: Multivector = Multivector([0.0; 16]);

    pub fn scalar(s: f64) -> Self {
        let mut c = [0.0; 16];
        c[0] = s;
        Multivector(c)
    }

    /// Basis blade by canonical index.
    pub fn basis(index: usize) -> Self {
        let mut c = [0.0; 16];
        c[index] = 1.0;
        Multivector(c)
    }

    /// Generator e_i for i in 1..=4.
    pub fn e(i: usize) -> Self {
        assert!((1..=4).contains(&i), "generator index out of range");
        Multivector::basis(i)
    }

    /// Grade-1 element from spatial coordinates (zero e4 component).
    pub fn vector(x: f64, y: f64, z: f64) -> Self {
        let mut c = [0.0; 16];
        c[1] = x;
        c[2] = y;
        c[3] = z;
        Multivector(c)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|c| c.is_finite())
    }

    pub fn scale(&self, k: f64) -> Self {
        let mut c = self.0;
        for x in &mut c {
            *x *= k;
        }
        Multivector(c)
    }

    /// Euclidean norm of the coefficient vector.
    pub fn coeff_norm(&self) -> f64 {
        self.0.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    /// Spatial part of the grade-1 component as coordinates.
    pub fn spatial_vector(&self) -> [f64; 3] {
        [self.0[1], self.0[2], self.0[3]]
    }

    pub fn approx_eq(&self, other: &Multivector, tol: f64) -> bool {
        self.0
            .iter()
            .zip(other.0.iter())
            .all(|(a, b)| (a - b).abs() <= tol)
    }

    /// 16 IEEE-754 doubles in blade order, little endian.
    pub fn to_le_bytes(&self) -> [u8; 128] {
        let mut out = [0u8; 128];
        for (i, c) in self.0.iter().enumerate() {
            out[i * 8..(i + 1) * 8].copy_from_slice(&c.to_le_bytes());
        }
        out
    }

    pub fn from_le_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() != 128 {
            return Err(Error::usage(format!(
                "multivector binary block must be 128 bytes, got {}",
                bytes.len()
            )));
        }
        let mut c = [0.0; 16];
        for (i, chunk) in bytes.chunks_exact(8).enumerate() {
            c[i] = f64::from_le_bytes(chunk.try_into().unwrap());
        }
        Ok(Multivector(c))
    }
}

impl std::ops::Add for Multivector {
    type Output = Multivector;
    fn add(self, rhs: Multivector) -> Multivector {
        let mut c = self.0;
        for (a, b) in c.iter_mut().zip(rhs.0.iter()) {
            *a += b;
        }
        Multivector(c)
    }
}

impl std::ops::Sub for Multivector {
    type Output = Multivector;
    fn sub(self, rhs: Multivector) -> Multivector {
        let mut c = self.0;
        for (a, b) in c.iter_mut().zip(rhs.0.iter()) {
            *a -= b;
        }
        Multivector(c)
    }
}

impl std::ops::Neg for Multivector {
    type Output = Multivector;
    fn neg(self) -> Multivector {
        self.scale(-1.0)
    }
}

// ---------------------------------------------------------------------------
// Products and involutions
// ---------------------------------------------------------------------------

/// Geometric product under the given signature.
pub fn geometric_product(a: &Multivector, b: &Multivector, sig: &Signature) -> Multivector {
    let t = sig.table();
    let mut out = [0.0; 16];
    for i in 0..16 {
        let ai = a.0[i];
        if ai == 0.0 {
            continue;
        }
        let srow = &t.sign[i];
        let irow = &t.index[i];
        for j in 0..16 {
            let bj = b.0[j];
            if bj == 0.0 {
                continue;
            }
            out[irow[j]] += srow[j] * ai * bj;
        }
    }
    Multivector(out)
}

/// Keep only the grade-k part.
pub fn grade_project(a: &Multivector, k: usize) -> Result<Multivector> {
    if k > 4 {
        return Err(Error::usage(format!("grade {k} out of range 0..=4")));
    }
    let mut c = [0.0; 16];
    for i in 0..16 {
        if blade_grade(i) == k {
            c[i] = a.0[i];
        }
    }
    Ok(Multivector(c))
}

/// Reversal: grade-k part scaled by (-1)^(k(k-1)/2).
pub fn reverse(a: &Multivector) -> Multivector {
    let mut c = a.0;
    for (i, x) in c.iter_mut().enumerate() {
        let k = blade_grade(i);
        if k % 4 == 2 || k % 4 == 3 {
            *x = -*x;
        }
    }
    Multivector(c)
}

/// Grade involution: grade-k part scaled by (-1)^k.
pub fn grade_involution(a: &Multivector) -> Multivector {
    let mut c = a.0;
    for (i, x) in c.iter_mut().enumerate() {
        if blade_grade(i) % 2 == 1 {
            *x = -*x;
        }
    }
    Multivector(c)
}

/// Invert a versor as reverse / (v ~v). Errors if v ~v is not a nonzero
/// scalar within tolerance 1e-10 (relative to its magnitude).
pub fn versor_inverse(v: &Multivector, sig: &Signature) -> Result<Multivector> {
    let vv = geometric_product(v, &reverse(v), sig);
    let s = vv.0[0];
    let off_scalar: f64 = vv.0[1..].iter().map(|c| c.abs()).fold(0.0, f64::max);
    let scale = s.abs().max(1.0);
    if off_scalar > 1e-10 * scale || s.abs() <= 1e-12 {
        return Err(Error::Singular(format!(
            "v ~v = {s:.3e} + (off-scalar up to {off_scalar:.3e}) is not a nonzero scalar"
        )));
    }
    Ok(reverse(v).scale(1.0 / s))
}

/// Sandwich transform (+- v x v^-1). `odd_flip` applies the leading minus
/// used for reflections, so rotations and reflections share one code path.
pub fn sandwich_apply(
    versor: &Multivector,
    x: &Multivector,
    sig: &Signature,
    odd_flip: bool,
) -> Result<Multivector> {
    let vinv = versor_inverse(versor, sig)?;
    let out = geometric_product(&geometric_product(versor, x, sig), &vinv, sig);
    Ok(if odd_flip { -out } else { out })
}

/// Compose a chain of interaction operators into a single versor I such
/// that sandwiching by I equals applying the operators right-to-left
/// (I_n innermost, matching V' = I1 I2 ... In V In^-1 ... I1^-1).
pub fn compose_interactions(ops: &[Multivector], sig: &Signature) -> Result<Multivector> {
    for (i, op) in ops.iter().enumerate() {
        versor_inverse(op, sig)
            .map_err(|e| Error::Singular(format!("operator {i} not invertible: {e}")))?;
    }
    Ok(ops
        .iter()
        .fold(Multivector::scalar(1.0), |acc, op| {
            geometric_product(&acc, op, sig)
        }))
}

// ---------------------------------------------------------------------------
// Geometric embeddings
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GeometryKind {
    Point,
    Direction,
    Plane,
}

/// Embed Euclidean geometry as multivectors. The convention (identical
/// coefficients under both signatures):
///
/// * direction d      -> d1 e1 + d2 e2 + d3 e3
/// * point p          -> p1 e1 + p2 e2 + p3 e3 + e4
/// * plane (n, d)     -> n1 e1 + n2 e2 + n3 e3 + d e4, normal normalised,
///   representing {x : n.x + d = 0}
pub fn embed_geometry(
    kind: GeometryKind,
    coords: [f64; 3],
    offset: f64,
    _sig: &Signature,
) -> Result<Multivector> {
    match kind {
        GeometryKind::Direction => {
            let n2 = coords.iter().map(|c| c * c).sum::<f64>();
            if n2 == 0.0 {
                return Err(Error::Degenerate("zero direction".into()));
            }
            Ok(Multivector::vector(coords[0], coords[1], coords[2]))
        }
        GeometryKind::Point => {
            let mut c = [0.0; 16];
            c[1] = coords[0];
            c[2] = coords[1];
            c[3] = coords[2];
            c[4] = 1.0;
            Ok(Multivector(c))
        }
        GeometryKind::Plane => {
            let n = (coords.iter().map(|c| c * c).sum::<f64>()).sqrt();
            if n == 0.0 {
                return Err(Error::Degenerate("zero plane normal".into()));
            }
            let mut c = [0.0; 16];
            c[1] = coords[0] / n;
            c[2] = coords[1] / n;
            c[3] = coords[2] / n;
            c[4] = offset / n;
            Ok(Multivector(c))
        }
    }
}

/// Inverse of [`embed_geometry`]: returns (coords, offset).
pub fn extract_geometry(
    kind: GeometryKind,
    mv: &Multivector,
    _sig: &Signature,
) -> Result<([f64; 3], f64)> {
    match kind {
        GeometryKind::Direction => Ok((mv.spatial_vector(), 0.0)),
        GeometryKind::Point => {
            let w = mv.0[4];
            if w.abs() < 1e-12 {
                return Err(Error::Degenerate(
                    "point at infinity: zero homogeneous weight".into(),
                ));
            }
            Ok(([mv.0[1] / w, mv.0[2] / w, mv.0[3] / w], 0.0))
        }
        GeometryKind::Plane => Ok((mv.spatial_vector(), mv.0[4])),
    }
}

pub fn embed_point(p: [f64; 3], sig: &Signature) -> Multivector {
    embed_geometry(GeometryKind::Point, p, 0.0, sig).expect("point embedding is total")
}

pub fn embed_direction(d: [f64; 3], sig: &Signature) -> Result<Multivector> {
    embed_geometry(GeometryKind::Direction, d, 0.0, sig)
}

pub fn embed_plane(normal: [f64; 3], offset: f64, sig: &Signature) -> Result<Multivector> {
    embed_geometry(GeometryKind::Plane, normal, offset, sig)
}

/// Right complement: rc(e_A) = s e_{A^c} with e_A ^ rc(e_A) = e1234.
/// Metric-free, so it is well defined even under the degenerate signature.
pub fn right_complement(a: &Multivector) -> Multivector {
    let mut c = [0.0; 16];
    for (i, &mask) in BLADE_MASKS.iter().enumerate() {
        let comp = (!mask) & 0xF;
        let j = MASK_TO_INDEX[comp as usize];
        c[j] += permutation_sign(mask, comp) * a.0[i];
    }
    Multivector(c)
}

/// Left complement, the inverse of [`right_complement`].
pub fn left_complement(a: &Multivector) -> Multivector {
    let mut c = [0.0; 16];
    for (i, &mask) in BLADE_MASKS.iter().enumerate() {
        let comp = (!mask) & 0xF;
        let j = MASK_TO_INDEX[comp as usize];
        c[j] += permutation_sign(comp, mask) * a.0[i];
    }
    Multivector(c)
}

/// Mirror a point across a plane under the projective signature.
///
/// A plane sandwich acts correctly on the dual (trivector) representation
/// of a point, so the point is dualised, sandwiched, and dualised back.
pub fn reflect_point_in_plane(
    plane: &Multivector,
    point: &Multivector,
    sig: &Signature,
) -> Result<Multivector> {
    let n2: f64 = plane.spatial_vector().iter().map(|c| c * c).sum();
    if n2 < 1e-24 {
        return Err(Error::Degenerate("plane with zero normal".into()));
    }
    let p = plane.scale(1.0 / n2.sqrt());
    let dual = right_complement(point);
    let refl = geometric_product(&geometric_product(&p, &dual, sig), &p, sig);
    Ok(left_complement(&refl))
}

/// Rotor for a rotation by `angle` about the (unit) spatial `axis`:
/// cos(a/2) - sin(a/2) B, with B the bivector dual to the axis.
pub fn rotor_from_axis_angle(axis: [f64; 3], angle: f64) -> Result<Multivector> {
    let n = (axis.iter().map(|c| c * c).sum::<f64>()).sqrt();
    if n == 0.0 {
        return Err(Error::Degenerate("zero rotation axis".into()));
    }
    let (ux, uy, uz) = (axis[0] / n, axis[1] / n, axis[2] / n);
    let (s, c) = (angle / 2.0).sin_cos();
    let mut out = [0.0; 16];
    out[0] = c;
    // axis z -> e12, axis y -> -e13, axis x -> e23
    out[5] = -s * uz;
    out[6] = s * uy;
    out[8] = -s * ux;
    Ok(Multivector(out))
}

/// Random unit spatial rotor (uniform axis, uniform angle).
pub fn random_spatial_rotor(rng: &mut Rng64) -> Multivector {
    let axis = loop {
        let v = [rng.normal(), rng.normal(), rng.normal()];
        let n2: f64 = v.iter().map(|c| c * c).sum();
        if n2 > 1e-12 {
            break v;
        }
    };
    let angle = rng.range(0.0, 2.0 * std::f64::consts::PI);
    rotor_from_axis_angle(axis, angle).expect("axis is nonzero")
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent blade-product oracle: blades as generator lists,
    /// bubble-sorted with sign tracking, adjacent duplicates cancelled via
    /// the generator square. Deliberately avoids the bitmask trick used by
    /// the product table.
    fn oracle_blade_product(a: u8, b: u8, sig: &Signature) -> (f64, u8) {
        let mut gens: Vec<usize> = Vec::new();
        for g in 0..4 {
            if a & (1 << g) != 0 {
                gens.push(g);
            }
        }
        for g in 0..4 {
            if b & (1 << g) != 0 {
                gens.push(g);
            }
        }
        let mut sign = 1.0;
        // bubble sort, flipping sign per swap
        let mut n = gens.len();
        while n > 1 {
            let mut swapped = false;
            for i in 0..n - 1 {
                if gens[i] > gens[i + 1] {
                    gens.swap(i, i + 1);
                    sign = -sign;
                    swapped = true;
                }
            }
            if !swapped {
                break;
            }
            n -= 1;
        }
        // cancel adjacent equal generators against the metric
        let mut out: Vec<usize> = Vec::new();
        let mut i = 0;
        while i < gens.len() {
            if i + 1 < gens.len() && gens[i] == gens[i + 1] {
                sign *= sig.squares()[gens[i]] as f64;
                i += 2;
            } else {
                out.push(gens[i]);
                i += 1;
            }
        }
        let mask = out.iter().fold(0u8, |m, &g| m | (1 << g));
        (sign, mask)
    }

    fn oracle_product(x: &Multivector, y: &Multivector, sig: &Signature) -> Multivector {
        let mut out = [0.0; 16];
        for i in 0..16 {
            for j in 0..16 {
                let (s, mask) = oracle_blade_product(BLADE_MASKS[i], BLADE_MASKS[j], sig);
                out[MASK_TO_INDEX[mask as usize]] += s * x.0[i] * y.0[j];
            }
        }
        Multivector(out)
    }

    fn random_mv(rng: &mut Rng64) -> Multivector {
        let mut c = [0.0; 16];
        for x in &mut c {
            *x = rng.range(-1.0, 1.0);
        }
        Multivector(c)
    }

    #[test]
    fn generator_squares_match_signature() {
        let pga = Signature::pga();
        let paper = Signature::paper();
        for i in 1..=4 {
            let e = Multivector::e(i);
            let sq = geometric_product(&e, &e, &pga);
            assert_eq!(sq, Multivector::scalar(pga.squares()[i - 1] as f64));
            let sq = geometric_product(&e, &e, &paper);
            assert_eq!(sq, Multivector::scalar(paper.squares()[i - 1] as f64));
        }
    }

    #[test]
    fn e1_e2_antisymmetry() {
        let sig = Signature::pga();
        let e1 = Multivector::e(1);
        let e2 = Multivector::e(2);
        let e12 = geometric_product(&e1, &e2, &sig);
        let e21 = geometric_product(&e2, &e1, &sig);
        assert_eq!(e12, Multivector::basis(5));
        assert_eq!(e21, -Multivector::basis(5));
    }

    #[test]
    fn product_matches_oracle_on_all_basis_pairs() {
        for sig in [Signature::pga(), Signature::paper()] {
            for i in 0..16 {
                for j in 0..16 {
                    let a = Multivector::basis(i);
                    let b = Multivector::basis(j);
                    let got = geometric_product(&a, &b, &sig);
                    let want = oracle_product(&a, &b, &sig);
                    assert_eq!(got, want, "blade pair {} {}", BLADE_NAMES[i], BLADE_NAMES[j]);
                }
            }
        }
    }

    #[test]
    fn product_matches_oracle_on_random_multivectors() {
        let mut rng = Rng64::new(11);
        for sig in [Signature::pga(), Signature::paper()] {
            for _ in 0..50 {
                let a = random_mv(&mut rng);
                let b = random_mv(&mut rng);
                let got = geometric_product(&a, &b, &sig);
                let want = oracle_product(&a, &b, &sig);
                assert!(got.approx_eq(&want, 1e-12));
            }
        }
    }

    #[test]
    fn associativity_random_triples() {
        let mut rng = Rng64::new(5);
        for sig in [Signature::pga(), Signature::paper()] {
            for _ in 0..200 {
                let a = random_mv(&mut rng);
                let b = random_mv(&mut rng);
                let c = random_mv(&mut rng);
                let ab_c = geometric_product(&geometric_product(&a, &b, &sig), &c, &sig);
                let a_bc = geometric_product(&a, &geometric_product(&b, &c, &sig), &sig);
                let scale = ab_c.coeff_norm().max(1.0);
                assert!(
                    ab_c.approx_eq(&a_bc, 1e-12 * scale),
                    "associativity failed under {:?}",
                    sig.squares()
                );
            }
        }
    }

    #[test]
    fn grade1_product_splits_into_dot_and_wedge() {
        let mut rng = Rng64::new(9);
        let sig = Signature::pga();
        for _ in 0..50 {
            let a = Multivector::vector(rng.range(-1.0, 1.0), rng.range(-1.0, 1.0), rng.range(-1.0, 1.0));
            let b = Multivector::vector(rng.range(-1.0, 1.0), rng.range(-1.0, 1.0), rng.range(-1.0, 1.0));
            let ab = geometric_product(&a, &b, &sig);
            let g0 = grade_project(&ab, 0).unwrap();
            let g2 = grade_project(&ab, 2).unwrap();
            assert!(ab.approx_eq(&(g0 + g2), 1e-14));
            // grade-0 part is the symmetric dot product
            let dot: f64 = a
                .spatial_vector()
                .iter()
                .zip(b.spatial_vector().iter())
                .map(|(x, y)| x * y)
                .sum();
            assert!((g0.0[0] - dot).abs() < 1e-13);
            // symmetric / antisymmetric
            let ba = geometric_product(&b, &a, &sig);
            assert!(grade_project(&ba, 0).unwrap().approx_eq(&g0, 1e-13));
            assert!(grade_project(&ba, 2).unwrap().approx_eq(&-g2, 1e-13));
        }
    }

    #[test]
    fn grade_project_examples() {
        let sig = Signature::pga();
        let a = Multivector::scalar(1.0) + Multivector::e(1) + Multivector::basis(5);
        assert_eq!(grade_project(&a, 1).unwrap(), Multivector::e(1));
        // projections partition the element
        let mut sum = Multivector::ZERO;
        for k in 0..=4 {
            sum = sum + grade_project(&a, k).unwrap();
        }
        assert_eq!(sum, a);
        assert!(grade_project(&a, 5).is_err());
        // e1 e2 projected to grade 2 is e12
        let e12 = geometric_product(&Multivector::e(1), &Multivector::e(2), &sig);
        assert_eq!(grade_project(&e12, 2).unwrap(), Multivector::basis(5));
    }

    #[test]
    fn reverse_signs() {
        assert_eq!(reverse(&Multivector::basis(5)), -Multivector::basis(5)); // e12
        assert_eq!(reverse(&Multivector::scalar(3.0)), Multivector::scalar(3.0));
        assert_eq!(reverse(&Multivector::basis(11)), -Multivector::basis(11)); // e123
        assert_eq!(reverse(&Multivector::basis(15)), Multivector::basis(15)); // e1234
    }

    #[test]
    fn sandwich_identity_versor() {
        let sig = Signature::pga();
        let mut rng = Rng64::new(3);
        let x = random_mv(&mut rng);
        let id = Multivector::scalar(1.0);
        let out = sandwich_apply(&id, &x, &sig, false).unwrap();
        assert!(out.approx_eq(&x, 1e-15));
    }

    #[test]
    fn sandwich_householder_reflection() {
        // versor e1, odd flip: reflects the e1 component
        let sig = Signature::pga();
        let v = Multivector::e(1);
        let x = Multivector::e(1) + Multivector::e(2);
        let out = sandwich_apply(&v, &x, &sig, true).unwrap();
        assert!(out.approx_eq(&(-Multivector::e(1) + Multivector::e(2)), 1e-15));
    }

    #[test]
    fn sandwich_rotor_quarter_turn() {
        // cos(pi/4) - sin(pi/4) e12 rotates e1 into e2
        let sig = Signature::pga();
        let (s, c) = (std::f64::consts::FRAC_PI_4).sin_cos();
        let r = Multivector::scalar(c) - Multivector::basis(5).scale(s);
        let out = sandwich_apply(&r, &Multivector::e(1), &sig, false).unwrap();
        assert!(out.approx_eq(&Multivector::e(2), 1e-14));
    }

    #[test]
    fn sandwich_rejects_null_versor() {
        let sig = Signature::pga();
        let v = Multivector::e(4); // e4^2 = 0 under PGA
        let err = sandwich_apply(&v, &Multivector::e(1), &sig, false);
        assert!(matches!(err, Err(Error::Singular(_))));
    }

    #[test]
    fn householder_oracle_random_reflections() {
        let sig = Signature::pga();
        let mut rng = Rng64::new(21);
        for _ in 0..200 {
            let n = loop {
                let v = [rng.normal(), rng.normal(), rng.normal()];
                let len: f64 = v.iter().map(|c| c * c).sum::<f64>().sqrt();
                if len > 1e-3 {
                    break [v[0] / len, v[1] / len, v[2] / len];
                }
            };
            let x = [rng.range(-2.0, 2.0), rng.range(-2.0, 2.0), rng.range(-2.0, 2.0)];
            let versor = Multivector::vector(n[0], n[1], n[2]);
            let got = sandwich_apply(&versor, &Multivector::vector(x[0], x[1], x[2]), &sig, true)
                .unwrap();
            // Householder matrix oracle: x' = x - 2 (n.x) n
            let dot = n.iter().zip(x.iter()).map(|(a, b)| a * b).sum::<f64>();
            let want = Multivector::vector(
                x[0] - 2.0 * dot * n[0],
                x[1] - 2.0 * dot * n[1],
                x[2] - 2.0 * dot * n[2],
            );
            assert!(got.approx_eq(&want, 1e-10));
        }
    }

    #[test]
    fn rotation_matrix_oracle_random_rotors() {
        let sig = Signature::pga();
        let mut rng = Rng64::new(22);
        for _ in 0..200 {
            let axis = [rng.normal(), rng.normal(), rng.normal()];
            let angle = rng.range(-6.0, 6.0);
            let r = match rotor_from_axis_angle(axis, angle) {
                Ok(r) => r,
                Err(_) => continue,
            };
            let x = [rng.range(-2.0, 2.0), rng.range(-2.0, 2.0), rng.range(-2.0, 2.0)];
            let got = sandwich_apply(&r, &Multivector::vector(x[0], x[1], x[2]), &sig, false)
                .unwrap();
            // Rodrigues rotation oracle
            let n = (axis.iter().map(|c| c * c).sum::<f64>()).sqrt();
            let u = [axis[0] / n, axis[1] / n, axis[2] / n];
            let (sa, ca) = angle.sin_cos();
            let dot = u.iter().zip(x.iter()).map(|(a, b)| a * b).sum::<f64>();
            let cross = [
                u[1] * x[2] - u[2] * x[1],
                u[2] * x[0] - u[0] * x[2],
                u[0] * x[1] - u[1] * x[0],
            ];
            let want = Multivector::vector(
                x[0] * ca + cross[0] * sa + u[0] * dot * (1.0 - ca),
                x[1] * ca + cross[1] * sa + u[1] * dot * (1.0 - ca),
                x[2] * ca + cross[2] * sa + u[2] * dot * (1.0 - ca),
            );
            assert!(got.approx_eq(&want, 1e-10), "axis {axis:?} angle {angle}");
        }
    }

    #[test]
    fn versor_sandwich_preserves_grade() {
        let sig = Signature::pga();
        let mut rng = Rng64::new(30);
        for _ in 0..50 {
            let r = random_spatial_rotor(&mut rng);
            for k in 0..=4 {
                let x = grade_project(&random_mv(&mut rng), k).unwrap();
                let out = sandwich_apply(&r, &x, &sig, false).unwrap();
                for g in 0..=4 {
                    if g != k {
                        let part = grade_project(&out, g).unwrap();
                        assert!(part.coeff_norm() < 1e-10, "grade leak {k} -> {g}");
                    }
                }
            }
        }
    }

    #[test]
    fn spatial_rotor_preserves_norm_paper_signature() {
        let sig = Signature::paper();
        let mut rng = Rng64::new(31);
        for _ in 0..100 {
            let r = random_spatial_rotor(&mut rng);
            let x = Multivector::vector(rng.normal(), rng.normal(), rng.normal());
            let out = sandwich_apply(&r, &x, &sig, false).unwrap();
            let n_in: f64 = x.spatial_vector().iter().map(|c| c * c).sum::<f64>().sqrt();
            let n_out: f64 = out.spatial_vector().iter().map(|c| c * c).sum::<f64>().sqrt();
            assert!((n_in - n_out).abs() < 1e-10);
        }
    }

    #[test]
    fn compose_empty_is_identity() {
        let sig = Signature::pga();
        assert_eq!(
            compose_interactions(&[], &sig).unwrap(),
            Multivector::scalar(1.0)
        );
    }

    #[test]
    fn compose_matches_sequential_sandwiches() {
        let sig = Signature::pga();
        let mut rng = Rng64::new(17);
        for _ in 0..50 {
            let r1 = random_spatial_rotor(&mut rng);
            let r2 = random_spatial_rotor(&mut rng);
            let x = random_mv(&mut rng);
            let composed = compose_interactions(&[r1, r2], &sig).unwrap();
            let got = sandwich_apply(&composed, &x, &sig, false).unwrap();
            let inner = sandwich_apply(&r2, &x, &sig, false).unwrap();
            let want = sandwich_apply(&r1, &inner, &sig, false).unwrap();
            assert!(got.approx_eq(&want, 1e-10));
        }
    }

    #[test]
    fn compose_rotor_with_reverse_is_identity_action() {
        let sig = Signature::pga();
        let mut rng = Rng64::new(18);
        let r = random_spatial_rotor(&mut rng);
        let x = random_mv(&mut rng);
        let composed = compose_interactions(&[r, reverse(&r)], &sig).unwrap();
        let got = sandwich_apply(&composed, &x, &sig, false).unwrap();
        assert!(got.approx_eq(&x, 1e-10));
    }

    #[test]
    fn compose_rejects_singular_operator() {
        let sig = Signature::pga();
        let ops = [Multivector::scalar(1.0), Multivector::e(4)];
        assert!(matches!(
            compose_interactions(&ops, &sig),
            Err(Error::Singular(_))
        ));
    }

    #[test]
    fn embedding_examples() {
        let sig = Signature::pga();
        assert_eq!(
            embed_direction([1.0, 0.0, 0.0], &sig).unwrap(),
            Multivector::e(1)
        );
        assert_eq!(embed_point([0.0, 0.0, 0.0], &sig), Multivector::e(4));
        let plane = embed_plane([0.0, 1.0, 0.0], 2.0, &sig).unwrap();
        assert_eq!(plane, Multivector::e(2) + Multivector::e(4).scale(2.0));
        assert!(embed_direction([0.0, 0.0, 0.0], &sig).is_err());
    }

    #[test]
    fn embedding_round_trips() {
        let sig = Signature::pga();
        let p = [1.5, -2.0, 0.25];
        let (back, _) =
            extract_geometry(GeometryKind::Point, &embed_point(p, &sig), &sig).unwrap();
        assert_eq!(back, p);
        let d = [0.1, 0.2, -0.3];
        let (back, _) = extract_geometry(
            GeometryKind::Direction,
            &embed_direction(d, &sig).unwrap(),
            &sig,
        )
        .unwrap();
        assert_eq!(back, d);
        let (n, off) = extract_geometry(
            GeometryKind::Plane,
            &embed_plane([0.0, 3.0, 0.0], 6.0, &sig).unwrap(),
            &sig,
        )
        .unwrap();
        assert!((n[1] - 1.0).abs() < 1e-15 && (off - 2.0).abs() < 1e-15);
    }

    #[test]
    fn complements_invert_each_other() {
        let mut rng = Rng64::new(8);
        let x = random_mv(&mut rng);
        assert!(left_complement(&right_complement(&x)).approx_eq(&x, 1e-15));
        assert!(right_complement(&left_complement(&x)).approx_eq(&x, 1e-15));
    }

    #[test]
    fn plane_mirror_matches_closed_form() {
        // plane e2 + 2 e4 represents {y = -2}; mirror y -> -4 - y
        let sig = Signature::pga();
        let plane = embed_plane([0.0, 1.0, 0.0], 2.0, &sig).unwrap();
        let mut rng = Rng64::new(40);
        for _ in 0..100 {
            let p = [rng.range(-3.0, 3.0), rng.range(-3.0, 3.0), rng.range(-3.0, 3.0)];
            let refl = reflect_point_in_plane(&plane, &embed_point(p, &sig), &sig).unwrap();
            let (got, _) = extract_geometry(GeometryKind::Point, &refl, &sig).unwrap();
            let want = [p[0], -4.0 - p[1], p[2]];
            for (g, w) in got.iter().zip(want.iter()) {
                assert!((g - w).abs() < 1e-12, "got {got:?} want {want:?}");
            }
        }
    }

    #[test]
    fn plane_mirror_random_planes() {
        let sig = Signature::pga();
        let mut rng = Rng64::new(41);
        for _ in 0..100 {
            let n = loop {
                let v = [rng.normal(), rng.normal(), rng.normal()];
                let len: f64 = v.iter().map(|c| c * c).sum::<f64>().sqrt();
                if len > 1e-3 {
                    break [v[0] / len, v[1] / len, v[2] / len];
                }
            };
            let d = rng.range(-2.0, 2.0);
            let plane = embed_plane(n, d, &sig).unwrap();
            let p = [rng.range(-3.0, 3.0), rng.range(-3.0, 3.0), rng.range(-3.0, 3.0)];
            let refl = reflect_point_in_plane(&plane, &embed_point(p, &sig), &sig).unwrap();
            let (got, _) = extract_geometry(GeometryKind::Point, &refl, &sig).unwrap();
            // closed-form mirror across {n.x + d = 0}
            let dist = n.iter().zip(p.iter()).map(|(a, b)| a * b).sum::<f64>() + d;
            let want = [
                p[0] - 2.0 * dist * n[0],
                p[1] - 2.0 * dist * n[1],
                p[2] - 2.0 * dist * n[2],
            ];
            for (g, w) in got.iter().zip(want.iter()) {
                assert!((g - w).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn multivector_binary_round_trip() {
        let mut rng = Rng64::new(50);
        let x = random_mv(&mut rng);
        let bytes = x.to_le_bytes();
        assert_eq!(Multivector::from_le_bytes(&bytes).unwrap(), x);
        // json
        let json = serde_json::to_string(&x).unwrap();
        let back: Multivector = serde_json::from_str(&json).unwrap();
        assert_eq!(back, x);
        let sig_json = serde_json::to_string(&Signature::pga()).unwrap();
        assert_eq!(sig_json, "[1,1,1,0]");
    }

    #[test]
    fn blade_metric_zeroes_null_blades() {
        let m = Signature::pga().blade_metric();
        for (i, &mask) in BLADE_MASKS.iter().enumerate() {
            if mask & 0b1000 != 0 {
                assert_eq!(m[i], 0.0);
            } else {
                assert_eq!(m[i], 1.0);
            }
        }
        let m = Signature::paper().blade_metric();
        assert_eq!(m[4], -1.0); // e4
        assert_eq!(m[15], -1.0); // e1234
    }
}
