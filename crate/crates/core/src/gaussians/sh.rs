//! Real spherical harmonics through degree 4 (25 functions), without the
//! Condon–Shortley phase, with analytic direction gradients.
//!
//! The polynomial forms assume a unit direction; gradients are those of the
//! polynomials and must be projected onto the sphere tangent by the caller.

use crate::real::Real;

pub const SH_DEGREE: usize = 4;
pub const SH_BASIS: usize = (SH_DEGREE + 1) * (SH_DEGREE + 1);
/// Coefficients per Gaussian: channel-major, `c * 25 + k`.
pub const SH_COEFFS: usize = 3 * SH_BASIS;

pub const Y00: f64 = 0.282_094_791_773_878_14;
const C1: f64 = 0.488_602_511_902_919_9;
const C2A: f64 = 1.092_548_430_592_079_2;
const C2B: f64 = 0.315_391_565_252_520_05;
const C2C: f64 = 0.546_274_215_296_039_6;
const C3A: f64 = 0.590_043_589_926_643_5;
const C3B: f64 = 2.890_611_442_640_554;
const C3C: f64 = 0.457_045_799_464_465_8;
const C3D: f64 = 0.373_176_332_590_115_4;
const C3E: f64 = 1.445_305_721_320_277;
const C4A: f64 = 2.503_342_941_796_704_6;
const C4B: f64 = 1.770_130_769_779_930_4;
const C4C: f64 = 0.946_174_695_757_560_1;
const C4D: f64 = 0.669_046_543_557_289_2;
const C4E: f64 = 0.105_785_546_915_204_31;
const C4F: f64 = 0.473_087_347_878_780_04;
const C4G: f64 = 0.625_835_735_449_176_1;

/// All 25 basis values at `dir`.
pub fn basis<T: Real>(dir: [T; 3]) -> [T; SH_BASIS] {
    let [x, y, z] = dir;
    let c = T::lit;
    let (xx, yy, zz) = (x * x, y * y, z * z);
    [
        c(Y00),
        c(C1) * y,
        c(C1) * z,
        c(C1) * x,
        c(C2A) * x * y,
        c(C2A) * y * z,
        c(C2B) * (c(3.0) * zz - T::one()),
        c(C2A) * x * z,
        c(C2C) * (xx - yy),
        c(C3A) * y * (c(3.0) * xx - yy),
        c(C3B) * x * y * z,
        c(C3C) * y * (c(5.0) * zz - T::one()),
        c(C3D) * z * (c(5.0) * zz - c(3.0)),
        c(C3C) * x * (c(5.0) * zz - T::one()),
        c(C3E) * z * (xx - yy),
        c(C3A) * x * (xx - c(3.0) * yy),
        c(C4A) * x * y * (xx - yy),
        c(C4B) * y * z * (c(3.0) * xx - yy),
        c(C4C) * x * y * (c(7.0) * zz - T::one()),
        c(C4D) * y * z * (c(7.0) * zz - c(3.0)),
        c(C4E) * (c(35.0) * zz * zz - c(30.0) * zz + c(3.0)),
        c(C4D) * x * z * (c(7.0) * zz - c(3.0)),
        c(C4F) * (xx - yy) * (c(7.0) * zz - T::one()),
        c(C4B) * x * z * (xx - c(3.0) * yy),
        c(C4G) * (xx * (xx - c(3.0) * yy) - yy * (c(3.0) * xx - yy)),
    ]
}

/// Gradient of each basis polynomial with respect to `(x, y, z)`.
pub fn basis_grad<T: Real>(dir: [T; 3]) -> [[T; 3]; SH_BASIS] {
    let [x, y, z] = dir;
    let c = T::lit;
    let o = T::zero();
    let (xx, yy, zz) = (x * x, y * y, z * z);
    [
        [o, o, o],
        [o, c(C1), o],
        [o, o, c(C1)],
        [c(C1), o, o],
        [c(C2A) * y, c(C2A) * x, o],
        [o, c(C2A) * z, c(C2A) * y],
        [o, o, c(6.0 * C2B) * z],
        [c(C2A) * z, o, c(C2A) * x],
        [c(2.0 * C2C) * x, c(-2.0 * C2C) * y, o],
        [c(6.0 * C3A) * x * y, c(3.0 * C3A) * (xx - yy), o],
        [c(C3B) * y * z, c(C3B) * x * z, c(C3B) * x * y],
        [o, c(C3C) * (c(5.0) * zz - T::one()), c(10.0 * C3C) * y * z],
        [o, o, c(C3D) * (c(15.0) * zz - c(3.0))],
        [c(C3C) * (c(5.0) * zz - T::one()), o, c(10.0 * C3C) * x * z],
        [c(2.0 * C3E) * x * z, c(-2.0 * C3E) * y * z, c(C3E) * (xx - yy)],
        [c(3.0 * C3A) * (xx - yy), c(-6.0 * C3A) * x * y, o],
        [c(C4A) * (c(3.0) * xx * y - yy * y), c(C4A) * (xx * x - c(3.0) * x * yy), o],
        [c(6.0 * C4B) * x * y * z, c(3.0 * C4B) * z * (xx - yy), c(C4B) * y * (c(3.0) * xx - yy)],
        [c(C4C) * y * (c(7.0) * zz - T::one()), c(C4C) * x * (c(7.0) * zz - T::one()), c(14.0 * C4C) * x * y * z],
        [o, c(C4D) * z * (c(7.0) * zz - c(3.0)), c(C4D) * y * (c(21.0) * zz - c(3.0))],
        [o, o, c(C4E) * z * (c(140.0) * zz - c(60.0))],
        [c(C4D) * z * (c(7.0) * zz - c(3.0)), o, c(C4D) * x * (c(21.0) * zz - c(3.0))],
        [c(2.0 * C4F) * x * (c(7.0) * zz - T::one()), c(-2.0 * C4F) * y * (c(7.0) * zz - T::one()), c(14.0 * C4F) * z * (xx - yy)],
        [c(3.0 * C4B) * z * (xx - yy), c(-6.0 * C4B) * x * y * z, c(C4B) * x * (xx - c(3.0) * yy)],
        [c(4.0 * C4G) * x * (xx - c(3.0) * yy), c(4.0 * C4G) * y * (yy - c(3.0) * xx), o],
    ]
}

/// Degree of basis index `k`.
pub fn degree_of(k: usize) -> usize {
    (k as f64).sqrt().floor() as usize
}

/// Per-channel radiance before the lower clamp.
pub fn eval_sh_unclamped<T: Real>(coeffs: &[T], dir: [T; 3]) -> [T; 3] {
    debug_assert_eq!(coeffs.len(), SH_COEFFS);
    let y = basis(dir);
    let mut out = [T::zero(); 3];
    for (ch, o) in out.iter_mut().enumerate() {
        let cs = &coeffs[ch * SH_BASIS..(ch + 1) * SH_BASIS];
        *o = cs.iter().zip(&y).map(|(&a, &b)| a * b).sum();
    }
    out
}

/// Per-channel radiance, clamped at zero from below.
pub fn eval_sh<T: Real>(coeffs: &[T], dir: [T; 3]) -> [T; 3] {
    eval_sh_unclamped(coeffs, dir).map(|v| v.max(T::zero()))
}
