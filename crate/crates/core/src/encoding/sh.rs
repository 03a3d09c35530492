//! Real spherical harmonics up to degree 3.
//!
//! Ordering is `(l, m) = (0,0), (1,-1), (1,0), (1,1), (2,-2), ..`; no
//! Condon–Shortley phase.

use crate::{Error, Real, Result};

pub const MAX_SH_DEGREE: usize = 3;

const C0: f64 = 0.282_094_791_773_878_14;
const C1: f64 = 0.488_602_511_902_919_9;
const C2_0: f64 = 1.092_548_430_592_079_2;
const C2_1: f64 = 0.315_391_565_252_520_05;
const C2_2: f64 = 0.546_274_215_296_039_6;
const C3_0: f64 = 0.590_043_589_926_643_5;
const C3_1: f64 = 2.890_611_442_640_554;
const C3_2: f64 = 0.457_045_799_464_465_8;
const C3_3: f64 = 0.373_176_332_590_115_4;
const C3_4: f64 = 1.445_305_721_320_277;

/// Number of basis functions for degree `l_max`.
pub const fn sh_dim(l_max: usize) -> usize {
    (l_max + 1) * (l_max + 1)
}

/// Evaluates the basis at unit direction `d`.
///
/// Directions within `1e-3` of unit length are renormalised with a warning;
/// anything further off is rejected.
pub fn sh_basis<T: Real>(d: [T; 3], l_max: usize) -> Result<Vec<T>> {
    if l_max > MAX_SH_DEGREE {
        return Err(Error::Config(format!(
            "SH degree {l_max} exceeds the supported maximum {MAX_SH_DEGREE}"
        )));
    }
    let d = checked_direction(d)?;
    let mut out = vec![T::zero(); sh_dim(l_max)];
    sh_basis_into(d, l_max, &mut out);
    Ok(out)
}

/// Returns `d` if it is unit within `1e-6`, a renormalised copy (with a
/// warning) within `1e-3`, and a domain error otherwise.
pub fn checked_direction<T: Real>(d: [T; 3]) -> Result<[T; 3]> {
    let norm = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    let dev = (norm - T::one()).abs();
    if dev <= T::lit(1e-6) {
        Ok(d)
    } else if dev <= T::lit(1e-3) {
        log::warn!("direction norm {norm} is not unit; renormalising");
        Ok(d.map(|c| c / norm))
    } else {
        Err(Error::Domain(format!(
            "direction ({}, {}, {}) has norm {norm}",
            d[0], d[1], d[2]
        )))
    }
}

/// Unchecked evaluation into `out[..sh_dim(l_max)]`; `d` must be unit.
#[inline]
pub fn sh_basis_into<T: Real>(d: [T; 3], l_max: usize, out: &mut [T]) {
    let [x, y, z] = d;
    let k = |c: f64| T::lit(c);
    out[0] = k(C0);
    if l_max == 0 {
        return;
    }
    out[1] = k(C1) * y;
    out[2] = k(C1) * z;
    out[3] = k(C1) * x;
    if l_max == 1 {
        return;
    }
    let (x2, y2, z2) = (x * x, y * y, z * z);
    let (xy, yz, xz) = (x * y, y * z, x * z);
    out[4] = k(C2_0) * xy;
    out[5] = k(C2_0) * yz;
    out[6] = k(C2_1) * (k(3.0) * z2 - T::one());
    out[7] = k(C2_0) * xz;
    out[8] = k(C2_2) * (x2 - y2);
    if l_max == 2 {
        return;
    }
    out[9] = k(C3_0) * y * (k(3.0) * x2 - y2);
    out[10] = k(C3_1) * xy * z;
    out[11] = k(C3_2) * y * (k(5.0) * z2 - T::one());
    out[12] = k(C3_3) * z * (k(5.0) * z2 - k(3.0));
    out[13] = k(C3_2) * x * (k(5.0) * z2 - T::one());
    out[14] = k(C3_4) * z * (x2 - y2);
    out[15] = k(C3_0) * x * (x2 - k(3.0) * y2);
}
