//! Three-step CSI standardization: remove the global phase offset via the
//! reference element, remove the least-squares linear phase slope across
//! subcarriers (shared across antennas), and scale to unit RMS magnitude.
//! Inter-antenna amplitude and phase relationships survive untouched, and
//! the procedure is idempotent.

use crate::c64::C64;
use crate::error::{Error, Result};

/// Linear phase slope as the argument of the lag-1 autocorrelation
/// sum_k H[k+1] conj(H[k]): the magnitude-weighted least-squares slope in
/// the complex domain. Unlike regression on unwrapped phases this is exact
/// under re-application (removing the slope rotates the sum to phase zero)
/// and blind to 2-pi branch ambiguities, because an integer-index slope
/// shift of 2 pi is the identity rotation.
fn phase_slope(h: &[C64]) -> C64 {
    let mut acc = C64::ZERO;
    for w in h.windows(2) {
        acc = acc + w[1] * w[0].conj();
    }
    acc
}

/// Standardize one or more antennas sharing a subcarrier axis. The phase
/// reference is antenna 0, subcarrier 0; the slope is the mean of the
/// per-antenna least-squares slopes; the RMS is taken over all elements.
pub fn fire_standardize_multi(csi: &[Vec<C64>]) -> Result<Vec<Vec<C64>>> {
    if csi.is_empty() || csi[0].is_empty() {
        return Err(Error::Degenerate("empty CSI".into()));
    }
    let k = csi[0].len();
    if csi.iter().any(|a| a.len() != k) {
        return Err(Error::usage("antennas must share the subcarrier count"));
    }
    let total_pwr: f64 = csi.iter().flatten().map(|z| z.norm_sq()).sum();
    if total_pwr <= 0.0 {
        return Err(Error::Degenerate("all-zero CSI".into()));
    }

    // step 1: rotate by the conjugate phase of the reference element
    let ref_phase = csi[0][0].arg();
    let rot = C64::cis(-ref_phase);
    let mut out: Vec<Vec<C64>> = csi
        .iter()
        .map(|a| a.iter().map(|z| *z * rot).collect())
        .collect();

    // step 2: remove the linear phase slope, shared across antennas
    let slope = out
        .iter()
        .fold(C64::ZERO, |acc, a| acc + phase_slope(a))
        .arg();
    for a in &mut out {
        for (kk, z) in a.iter_mut().enumerate() {
            *z = *z * C64::cis(-slope * kk as f64);
        }
    }

    // step 3: unit RMS magnitude
    let n_elem = (out.len() * k) as f64;
    let rms = (out.iter().flatten().map(|z| z.norm_sq()).sum::<f64>() / n_elem).sqrt();
    for a in &mut out {
        for z in a.iter_mut() {
            *z = z.scale(1.0 / rms);
        }
    }
    Ok(out)
}

/// Single-antenna convenience wrapper.
pub fn fire_standardize(csi: &[C64]) -> Result<Vec<C64>> {
    Ok(fire_standardize_multi(&[csi.to_vec()])?.remove(0))
}
