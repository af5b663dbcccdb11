//! Pixel-aligned 3D Gaussians: decoding heads, activations and export.

pub mod decode;
pub mod ply;
pub mod sh;

pub use decode::DecodeHead;
pub use sh::{eval_sh, eval_sh_unclamped, SH_BASIS, SH_COEFFS};

use crate::cameras::RayMap;
use crate::error::{Error, Result};
use crate::real::Real;

/// Raw channels per pixel: distance, scale ×3, rotation ×4, opacity.
pub const RAW_CHANNELS: usize = 9;
pub const MAX_SCALE: f64 = 0.3;
pub const SCALE_SHIFT: f64 = 2.3;
pub const OPACITY_SHIFT: f64 = 2.0;
const QUAT_EPS: f64 = 1e-8;
const MIN_SCALE: f64 = 1e-6;
const OPACITY_GUARD: f64 = 1e-6;

/// Depth range along pixel rays for scenes normalised to the unit sphere
/// and cameras at radius 2.7.
pub const DEFAULT_NEAR: f64 = 1.2;
pub const DEFAULT_FAR: f64 = 4.2;

/// Structure-of-arrays Gaussian set. Quaternions are `(w, x, y, z)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianSet<T> {
    pub positions: Vec<T>,
    pub scales: Vec<T>,
    pub rotations: Vec<T>,
    pub opacities: Vec<T>,
    pub sh: Vec<T>,
}

impl<T: Real> GaussianSet<T> {
    pub fn with_capacity(m: usize) -> Self {
        Self {
            positions: Vec::with_capacity(m * 3),
            scales: Vec::with_capacity(m * 3),
            rotations: Vec::with_capacity(m * 4),
            opacities: Vec::with_capacity(m),
            sh: Vec::with_capacity(m * SH_COEFFS),
        }
    }

    pub fn zeros(m: usize) -> Self {
        Self {
            positions: vec![T::zero(); m * 3],
            scales: vec![T::zero(); m * 3],
            rotations: vec![T::zero(); m * 4],
            opacities: vec![T::zero(); m],
            sh: vec![T::zero(); m * SH_COEFFS],
        }
    }

    pub fn len(&self) -> usize {
        self.opacities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.opacities.is_empty()
    }

    pub fn push(&mut self, position: [T; 3], scale: [T; 3], rotation: [T; 4], opacity: T, sh: &[T]) {
        assert_eq!(sh.len(), SH_COEFFS);
        self.positions.extend_from_slice(&position);
        self.scales.extend_from_slice(&scale);
        self.rotations.extend_from_slice(&rotation);
        self.opacities.push(opacity);
        self.sh.extend_from_slice(sh);
    }

    pub fn position(&self, i: usize) -> [T; 3] {
        [self.positions[3 * i], self.positions[3 * i + 1], self.positions[3 * i + 2]]
    }

    pub fn sh_of(&self, i: usize) -> &[T] {
        &self.sh[i * SH_COEFFS..(i + 1) * SH_COEFFS]
    }

    /// Replaces appearance, keeping geometry.
    pub fn with_sh(&self, sh: Vec<T>) -> Result<Self> {
        if sh.len() != self.len() * SH_COEFFS {
            return Err(Error::Shape(format!(
                "{} SH values for {} Gaussians",
                sh.len(),
                self.len()
            )));
        }
        Ok(Self { sh, ..self.clone() })
    }

    /// Byte image of the geometry fields, for immutability checks.
    pub fn geometry_bytes(&self) -> Vec<u8> {
        self.positions
            .iter()
            .chain(&self.scales)
            .chain(&self.rotations)
            .chain(&self.opacities)
            .flat_map(|v| v.as_f64().to_le_bytes())
            .collect()
    }

    pub fn cast<U: Real>(&self) -> GaussianSet<U> {
        use crate::real::cast_vec;
        GaussianSet {
            positions: cast_vec(&self.positions),
            scales: cast_vec(&self.scales),
            rotations: cast_vec(&self.rotations),
            opacities: cast_vec(&self.opacities),
            sh: cast_vec(&self.sh),
        }
    }

    pub fn validate_shapes(&self) -> Result<()> {
        let m = self.len();
        if self.positions.len() != 3 * m || self.scales.len() != 3 * m || self.rotations.len() != 4 * m || self.sh.len() != SH_COEFFS * m {
            return Err(Error::Shape("inconsistent Gaussian field lengths".into()));
        }
        Ok(())
    }

    /// Checks the set invariants: positive bounded scales, opacities in
    /// `(0, 1)`, unit quaternions.
    pub fn validate(&self) -> Result<()> {
        self.validate_shapes()?;
        let max_scale = T::lit(MAX_SCALE);
        if let Some(s) = self.scales.iter().find(|&&s| !(s > T::zero() && s <= max_scale)) {
            return Err(Error::Numeric(format!("scale {s} outside (0, 0.3]")));
        }
        if let Some(o) = self.opacities.iter().find(|&&o| !(o > T::zero() && o < T::one())) {
            return Err(Error::Numeric(format!("opacity {o} outside (0, 1)")));
        }
        for q in self.rotations.chunks_exact(4) {
            let n = q.iter().map(|&v| v * v).sum::<T>().sqrt();
            if (n - T::one()).abs() > T::lit(1e-6) {
                return Err(Error::Numeric(format!("quaternion norm {n}")));
            }
        }
        Ok(())
    }
}

/// Gradients with the same layout as [`GaussianSet`].
pub type GaussianGrads<T> = GaussianSet<T>;

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// Maps raw per-pixel outputs to Gaussians placed on their pixel rays.
/// `raw` is `views × H × W × 9`; `rays` holds one map per view. SH
/// coefficients are left at zero.
pub fn activate_gaussians<T: Real>(raw: &[T], rays: &[RayMap], near: f64, far: f64) -> Result<GaussianSet<T>> {
    let pixels: usize = rays.iter().map(|r| r.directions.len()).sum();
    if raw.len() != pixels * RAW_CHANNELS {
        return Err(Error::Shape(format!(
            "{} raw values for {pixels} pixels",
            raw.len()
        )));
    }
    if !(near < far) {
        return Err(Error::InvalidArgument(format!("near {near} must be below far {far}")));
    }
    let zero_sh = [T::zero(); SH_COEFFS];
    let mut set = GaussianSet::with_capacity(pixels);
    let (near_t, far_t) = (T::lit(near), T::lit(far));
    let mut i = 0;
    for rm in rays {
        for (o, d) in rm.origins.iter().zip(&rm.directions) {
            let r = &raw[i * RAW_CHANNELS..(i + 1) * RAW_CHANNELS];
            let w = sigmoid(r[0]);
            let depth = near_t * (T::one() - w) + far_t * w;
            let pos = [0, 1, 2].map(|k| T::lit(o[k]) + T::lit(d[k]) * depth);
            let scale = [1, 2, 3].map(|k| activate_scale(r[k]));
            let rot = normalize_quat([r[4], r[5], r[6], r[7]]);
            let opacity = activate_opacity(r[8]);
            set.push(pos, scale, rot, opacity, &zero_sh);
            i += 1;
        }
    }
    Ok(set)
}

#[inline]
fn activate_scale<T: Real>(raw: T) -> T {
    (raw - T::lit(SCALE_SHIFT)).exp().min(T::lit(MAX_SCALE)).max(T::lit(MIN_SCALE))
}

#[inline]
fn activate_opacity<T: Real>(raw: T) -> T {
    let g = T::lit(OPACITY_GUARD);
    sigmoid(raw - T::lit(OPACITY_SHIFT)).max(g).min(T::one() - g)
}

/// Unit quaternion with the norm padded by a small epsilon; the zero
/// quaternion maps to the identity rotation.
pub fn normalize_quat<T: Real>(q: [T; 4]) -> [T; 4] {
    let n = q.iter().map(|&v| v * v).sum::<T>().sqrt();
    if n == T::zero() {
        return [T::one(), T::zero(), T::zero(), T::zero()];
    }
    let inv = T::one() / (n + T::lit(QUAT_EPS));
    let out = q.map(|v| v * inv);
    // renormalise so the unit-norm invariant holds exactly at tiny norms
    let m = out.iter().map(|&v| v * v).sum::<T>().sqrt();
    if (m - T::one()).abs() > T::lit(1e-7) {
        out.map(|v| v / m)
    } else {
        out
    }
}

/// Back-propagates Gaussian gradients to the raw field.
pub fn activate_gaussians_backward<T: Real>(raw: &[T], rays: &[RayMap], near: f64, far: f64, grads: &GaussianGrads<T>) -> Vec<T> {
    let mut draw = vec![T::zero(); raw.len()];
    let span = T::lit(far - near);
    let mut i = 0;
    for rm in rays {
        for d in &rm.directions {
            let r = &raw[i * RAW_CHANNELS..(i + 1) * RAW_CHANNELS];
            let g = &mut draw[i * RAW_CHANNELS..(i + 1) * RAW_CHANNELS];
            let w = sigmoid(r[0]);
            let dpos = &grads.positions[3 * i..3 * i + 3];
            let along: T = (0..3).map(|k| dpos[k] * T::lit(d[k])).sum();
            g[0] = along * span * w * (T::one() - w);
            for k in 0..3 {
                let e = (r[1 + k] - T::lit(SCALE_SHIFT)).exp();
                if e < T::lit(MAX_SCALE) && e > T::lit(MIN_SCALE) {
                    g[1 + k] = grads.scales[3 * i + k] * e;
                }
            }
            let q = [r[4], r[5], r[6], r[7]];
            let n = q.iter().map(|&v| v * v).sum::<T>().sqrt();
            if n > T::zero() {
                let ne = n + T::lit(QUAT_EPS);
                let dq = &grads.rotations[4 * i..4 * i + 4];
                let qdot: T = (0..4).map(|k| q[k] * dq[k]).sum();
                for k in 0..4 {
                    g[4 + k] = dq[k] / ne - q[k] * qdot / (n * ne * ne);
                }
            }
            let o = sigmoid(r[8] - T::lit(OPACITY_SHIFT));
            let guard = T::lit(OPACITY_GUARD);
            if o > guard && o < T::one() - guard {
                g[8] = grads.opacities[i] * o * (T::one() - o);
            }
            i += 1;
        }
    }
    draw
}
