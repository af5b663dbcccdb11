//! EWA projection of 3D Gaussians to screen-space splats and its adjoint.

use crate::cameras::Camera;
use crate::gaussians::sh::{basis, basis_grad, SH_BASIS, SH_COEFFS};
use crate::gaussians::GaussianSet;
use crate::real::Real;

use super::RenderOptions;

type M3<T> = [[T; 3]; 3];

/// Screen-space Gaussian. `cov2d` and `conic` are `(xx, xy, yy)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Splat2D<T> {
    pub index: usize,
    pub mean2d: [T; 2],
    pub cov2d: [T; 3],
    pub conic: [T; 3],
    pub depth: T,
    pub color: [T; 3],
    /// Color before the lower clamp.
    pub raw_color: [T; 3],
    pub opacity: T,
    /// Half-width of the pixel box outside which α < `alpha_min`.
    pub radius: T,
    /// Exponents below this give α < `alpha_min` with margin to spare.
    pub min_power: T,
}

/// Camera in the working precision; `w` maps world to camera axes.
#[derive(Clone, Copy, Debug)]
pub struct CameraT<T> {
    pub w: M3<T>,
    pub eye: [T; 3],
    pub fx: T,
    pub fy: T,
    pub cx: T,
    pub cy: T,
    pub width: usize,
    pub height: usize,
}

impl<T: Real> CameraT<T> {
    pub fn new(cam: &Camera) -> Self {
        let r = cam.rotation();
        let w = std::array::from_fn(|i| std::array::from_fn(|j| T::lit(r[j][i])));
        Self {
            w,
            eye: cam.position().map(T::lit),
            fx: T::lit(cam.fx),
            fy: T::lit(cam.fy),
            cx: T::lit(cam.cx),
            cy: T::lit(cam.cy),
            width: cam.width,
            height: cam.height,
        }
    }
}

fn mv<T: Real>(m: &M3<T>, v: [T; 3]) -> [T; 3] {
    std::array::from_fn(|i| m[i][0] * v[0] + m[i][1] * v[1] + m[i][2] * v[2])
}

fn mtv<T: Real>(m: &M3<T>, v: [T; 3]) -> [T; 3] {
    std::array::from_fn(|i| m[0][i] * v[0] + m[1][i] * v[1] + m[2][i] * v[2])
}

fn quat_norm<T: Real>(q: [T; 4]) -> ([T; 4], T) {
    let n = q.iter().map(|&v| v * v).sum::<T>().sqrt();
    if n == T::zero() {
        return ([T::one(), T::zero(), T::zero(), T::zero()], T::one());
    }
    (q.map(|v| v / n), n)
}

pub(crate) fn quat_to_mat<T: Real>(q: [T; 4]) -> M3<T> {
    let [w, x, y, z] = q;
    let one = T::one();
    let two = T::lit(2.0);
    [
        [one - two * (y * y + z * z), two * (x * y - w * z), two * (x * z + w * y)],
        [two * (x * y + w * z), one - two * (x * x + z * z), two * (y * z - w * x)],
        [two * (x * z - w * y), two * (y * z + w * x), one - two * (x * x + y * y)],
    ]
}

/// Intermediate quantities shared by forward and backward projection.
struct Geometry<T> {
    v: [T; 3],
    t: [T; 3],
    qn: [T; 4],
    qlen: T,
    rot: M3<T>,
    s: [T; 3],
    sigma: M3<T>,
    tmat: [[T; 3]; 2],
}

fn geometry<T: Real>(g: &GaussianSet<T>, i: usize, cam: &CameraT<T>) -> Geometry<T> {
    let p = g.position(i);
    let v = [p[0] - cam.eye[0], p[1] - cam.eye[1], p[2] - cam.eye[2]];
    let t = mv(&cam.w, v);
    let (qn, qlen) = quat_norm([g.rotations[4 * i], g.rotations[4 * i + 1], g.rotations[4 * i + 2], g.rotations[4 * i + 3]]);
    let rot = quat_to_mat(qn);
    let s = [g.scales[3 * i], g.scales[3 * i + 1], g.scales[3 * i + 2]];
    let m: M3<T> = std::array::from_fn(|r| std::array::from_fn(|c| rot[r][c] * s[c]));
    let sigma = std::array::from_fn(|r| std::array::from_fn(|c| (0..3).map(|k| m[r][k] * m[c][k]).sum()));
    let iz = T::one() / t[2];
    let j = [
        [cam.fx * iz, T::zero(), -cam.fx * t[0] * iz * iz],
        [T::zero(), cam.fy * iz, -cam.fy * t[1] * iz * iz],
    ];
    let tmat = std::array::from_fn(|r| std::array::from_fn(|c| (0..3).map(|k| j[r][k] * cam.w[k][c]).sum()));
    Geometry { v, t, qn, qlen, rot, s, sigma, tmat }
}

/// Projects Gaussian `i`, or returns `None` when it is culled: behind the
/// near plane, too faint to ever pass the α threshold, or with its 99%
/// ellipse entirely off screen.
pub fn project_gaussian<T: Real>(g: &GaussianSet<T>, i: usize, cam: &CameraT<T>, opts: &RenderOptions) -> Option<Splat2D<T>> {
    let opacity = g.opacities[i];
    if opacity * T::lit(1.0 / opts.alpha_min) <= T::one() {
        return None;
    }
    let geo = geometry(g, i, cam);
    let tz = geo.t[2];
    if !(tz > T::lit(opts.near_clip)) {
        return None;
    }
    let tm = &geo.tmat;
    let ts: [[T; 3]; 2] = std::array::from_fn(|r| std::array::from_fn(|c| (0..3).map(|k| tm[r][k] * geo.sigma[k][c]).sum()));
    let cov = |r: usize, c: usize| -> T { (0..3).map(|k| ts[r][k] * tm[c][k]).sum() };
    let lp = T::lit(opts.low_pass);
    let (a, b, c) = (cov(0, 0) + lp, cov(0, 1), cov(1, 1) + lp);
    let det = a * c - b * b;
    if !(det > T::zero()) {
        return None;
    }
    let conic = [c / det, -b / det, a / det];
    let mid = T::lit(0.5) * (a + c);
    let lambda = mid + (mid * mid - det).max(T::zero()).sqrt();
    let sd = lambda.sqrt();
    let mean2d = [cam.fx * geo.t[0] / tz + cam.cx, cam.fy * geo.t[1] / tz + cam.cy];
    let r99 = T::lit(ELLIPSE_99) * sd;
    let (w, h) = (T::lit(cam.width as f64), T::lit(cam.height as f64));
    if mean2d[0] + r99 < T::zero() || mean2d[0] - r99 > w || mean2d[1] + r99 < T::zero() || mean2d[1] - r99 > h {
        return None;
    }
    let log_ratio = (opacity / T::lit(opts.alpha_min)).ln();
    let radius = (T::lit(2.0) * log_ratio).sqrt() * sd;
    let min_power = -log_ratio - T::lit(1e-3);

    let inv = T::one() / norm3(geo.v);
    let dir = geo.v.map(|x| x * inv);
    let y = basis(dir);
    let sh = g.sh_of(i);
    let raw_color: [T; 3] = std::array::from_fn(|ch| (0..SH_BASIS).map(|k| sh[ch * SH_BASIS + k] * y[k]).sum());
    let color = if opts.clamp_colors { raw_color.map(|v| v.max(T::zero())) } else { raw_color };
    Some(Splat2D {
        index: i,
        mean2d,
        cov2d: [a, b, c],
        conic,
        depth: tz,
        color,
        raw_color,
        opacity,
        radius,
        min_power,
    })
}

/// Radius of the 99% probability ellipse in standard deviations.
pub const ELLIPSE_99: f64 = 3.035;

fn norm3<T: Real>(v: [T; 3]) -> T {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// Screen-space gradients of one splat.
#[derive(Clone, Copy, Debug, Default)]
pub struct SplatGrad<T> {
    pub mean2d: [T; 2],
    /// Full-matrix gradient of the conic: `(xx, xy, yy)` with `xy` being
    /// the gradient of each off-diagonal entry.
    pub conic: [T; 3],
    pub color: [T; 3],
    pub opacity: T,
}

impl<T: Real> SplatGrad<T> {
    pub fn zero() -> Self {
        Self {
            mean2d: [T::zero(); 2],
            conic: [T::zero(); 3],
            color: [T::zero(); 3],
            opacity: T::zero(),
        }
    }

    pub fn add(&mut self, o: &Self) {
        for k in 0..2 {
            self.mean2d[k] += o.mean2d[k];
        }
        for k in 0..3 {
            self.conic[k] += o.conic[k];
            self.color[k] += o.color[k];
        }
        self.opacity += o.opacity;
    }
}

/// Chains splat gradients back to the Gaussian parameters and adds them
/// into `out`. The SH view direction is differentiated too, so position
/// gradients are exact.
pub fn project_backward<T: Real>(
    g: &GaussianSet<T>,
    splat: &Splat2D<T>,
    dg: &SplatGrad<T>,
    cam: &CameraT<T>,
    opts: &RenderOptions,
    out: &mut GaussianSet<T>,
) {
    let i = splat.index;
    let geo = geometry(g, i, cam);
    let two = T::lit(2.0);

    // color -> sh and view direction
    let inv = T::one() / norm3(geo.v);
    let dir = geo.v.map(|x| x * inv);
    let y = basis(dir);
    let yg = basis_grad(dir);
    let sh = g.sh_of(i);
    let mut ddir = [T::zero(); 3];
    for ch in 0..3 {
        let dc = if opts.clamp_colors && splat.raw_color[ch] <= T::zero() { T::zero() } else { dg.color[ch] };
        if dc == T::zero() {
            continue;
        }
        for k in 0..SH_BASIS {
            out.sh[i * SH_COEFFS + ch * SH_BASIS + k] += dc * y[k];
            let c = dc * sh[ch * SH_BASIS + k];
            for a in 0..3 {
                ddir[a] += c * yg[k][a];
            }
        }
    }
    let dd = dir[0] * ddir[0] + dir[1] * ddir[1] + dir[2] * ddir[2];
    let mut dp: [T; 3] = std::array::from_fn(|a| (ddir[a] - dir[a] * dd) * inv);

    out.opacities[i] += dg.opacity;

    // conic -> cov2d: dC = -Q dQ Q
    let q = [[splat.conic[0], splat.conic[1]], [splat.conic[1], splat.conic[2]]];
    let dq = [[dg.conic[0], dg.conic[1]], [dg.conic[1], dg.conic[2]]];
    let mut qdq = [[T::zero(); 2]; 2];
    for r in 0..2 {
        for c in 0..2 {
            qdq[r][c] = q[r][0] * dq[0][c] + q[r][1] * dq[1][c];
        }
    }
    let mut dcov = [[T::zero(); 2]; 2];
    for r in 0..2 {
        for c in 0..2 {
            dcov[r][c] = -(qdq[r][0] * q[0][c] + qdq[r][1] * q[1][c]);
        }
    }

    // cov2d = T Σ Tᵀ
    let tm = &geo.tmat;
    let mut dsigma: M3<T> = [[T::zero(); 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            let mut s = T::zero();
            for r in 0..2 {
                for c in 0..2 {
                    s += tm[r][a] * dcov[r][c] * tm[c][b];
                }
            }
            dsigma[a][b] = s;
        }
    }
    let mut dt_mat = [[T::zero(); 3]; 2];
    for r in 0..2 {
        for c in 0..3 {
            let mut s = T::zero();
            for k in 0..2 {
                let tsig: T = (0..3).map(|m| tm[k][m] * geo.sigma[m][c]).sum();
                s += dcov[r][k] * tsig;
            }
            dt_mat[r][c] = two * s;
        }
    }
    // T = J W
    let mut dj = [[T::zero(); 3]; 2];
    for r in 0..2 {
        for c in 0..3 {
            dj[r][c] = (0..3).map(|k| dt_mat[r][k] * cam.w[c][k]).sum();
        }
    }
    let [tx, ty, tz] = geo.t;
    let iz = T::one() / tz;
    let iz2 = iz * iz;
    let iz3 = iz2 * iz;
    let mut dtc = [
        dj[0][2] * (-cam.fx * iz2),
        dj[1][2] * (-cam.fy * iz2),
        dj[0][0] * (-cam.fx * iz2) + dj[0][2] * (two * cam.fx * tx * iz3) + dj[1][1] * (-cam.fy * iz2) + dj[1][2] * (two * cam.fy * ty * iz3),
    ];
    dtc[0] += dg.mean2d[0] * cam.fx * iz;
    dtc[1] += dg.mean2d[1] * cam.fy * iz;
    dtc[2] -= dg.mean2d[0] * cam.fx * tx * iz2 + dg.mean2d[1] * cam.fy * ty * iz2;
    let dworld = mtv(&cam.w, dtc);
    for a in 0..3 {
        dp[a] += dworld[a];
        out.positions[3 * i + a] += dp[a];
    }

    // Σ = M Mᵀ, M = R S
    let m: M3<T> = std::array::from_fn(|r| std::array::from_fn(|c| geo.rot[r][c] * geo.s[c]));
    let mut dm: M3<T> = [[T::zero(); 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            dm[r][c] = (0..3).map(|k| (dsigma[r][k] + dsigma[k][r]) * m[k][c]).sum();
        }
    }
    for c in 0..3 {
        out.scales[3 * i + c] += (0..3).map(|r| dm[r][c] * geo.rot[r][c]).sum();
    }
    let dr: M3<T> = std::array::from_fn(|r| std::array::from_fn(|c| dm[r][c] * geo.s[c]));
    let [w, x, y, z] = geo.qn;
    let dqn = [
        two * (-z * dr[0][1] + y * dr[0][2] + z * dr[1][0] - x * dr[1][2] - y * dr[2][0] + x * dr[2][1]),
        two * (y * dr[0][1] + z * dr[0][2] + y * dr[1][0] - two * x * dr[1][1] - w * dr[1][2] + z * dr[2][0] + w * dr[2][1] - two * x * dr[2][2]),
        two * (-two * y * dr[0][0] + x * dr[0][1] + w * dr[0][2] + x * dr[1][0] + z * dr[1][2] - w * dr[2][0] + z * dr[2][1] - two * y * dr[2][2]),
        two * (-two * z * dr[0][0] - w * dr[0][1] + x * dr[0][2] + w * dr[1][0] - two * z * dr[1][1] + y * dr[1][2] + x * dr[2][0] + y * dr[2][1]),
    ];
    let proj: T = (0..4).map(|k| geo.qn[k] * dqn[k]).sum();
    for k in 0..4 {
        out.rotations[4 * i + k] += (dqn[k] - geo.qn[k] * proj) / geo.qlen;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussians::sh::Y00;

    fn axis_camera() -> Camera {
        Camera::new(50.0, 50.0, 32.0, 32.0, 64, 64, [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]], [0.0; 3]).unwrap()
    }

    fn one(pos: [f64; 3], scale: [f64; 3], rot: [f64; 4]) -> GaussianSet<f64> {
        let mut g = GaussianSet::with_capacity(1);
        let mut sh = [0.0; SH_COEFFS];
        for c in 0..3 {
            sh[c * SH_BASIS] = 0.5 / Y00;
        }
        g.push(pos, scale, rot, 0.9, &sh);
        g
    }

    #[test]
    fn isotropic_on_axis_covariance() {
        let cam = CameraT::new(&axis_camera());
        let (z, s) = (3.0, 0.1);
        let g = one([0.0, 0.0, z], [s; 3], [1.0, 0.0, 0.0, 0.0]);
        let opts = RenderOptions { low_pass: 0.0, ..RenderOptions::default() };
        let sp = project_gaussian(&g, 0, &cam, &opts).unwrap();
        let expect = (s * 50.0 / z).powi(2);
        assert!((sp.cov2d[0] - expect).abs() < 1e-12);
        assert!(sp.cov2d[1].abs() < 1e-12);
        assert!((sp.cov2d[2] - expect).abs() < 1e-12);
        assert_eq!(sp.mean2d, [32.0, 32.0]);
        let sp = project_gaussian(&g, 0, &cam, &RenderOptions::default()).unwrap();
        assert!((sp.cov2d[0] - expect - 0.3).abs() < 1e-12);
    }

    #[test]
    fn behind_camera_is_culled() {
        let cam = CameraT::new(&axis_camera());
        let g = one([0.0, 0.0, -2.0], [0.1; 3], [1.0, 0.0, 0.0, 0.0]);
        assert!(project_gaussian(&g, 0, &cam, &RenderOptions::default()).is_none());
        let g = one([100.0, 0.0, 2.0], [0.1; 3], [1.0, 0.0, 0.0, 0.0]);
        assert!(project_gaussian(&g, 0, &cam, &RenderOptions::default()).is_none());
    }

    #[test]
    fn rotating_isotropic_gaussian_is_invariant() {
        let cam = CameraT::new(&axis_camera());
        let a = project_gaussian(&one([0.3, -0.2, 3.0], [0.1; 3], [1.0, 0.0, 0.0, 0.0]), 0, &cam, &RenderOptions::default()).unwrap();
        let q = [0.3, -0.5, 0.7, 0.2];
        let b = project_gaussian(&one([0.3, -0.2, 3.0], [0.1; 3], q), 0, &cam, &RenderOptions::default()).unwrap();
        for k in 0..3 {
            assert!((a.cov2d[k] - b.cov2d[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn rotation_matrix_is_orthonormal() {
        let (q, _) = quat_norm([0.3, -0.5, 0.7, 0.2f64]);
        let r = quat_to_mat(q);
        for a in 0..3 {
            for b in 0..3 {
                let d: f64 = (0..3).map(|k| r[a][k] * r[b][k]).sum();
                assert!((d - if a == b { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
    }
}
