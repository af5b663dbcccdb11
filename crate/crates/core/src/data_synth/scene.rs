//! Scenes of spheres and axis-aligned boxes inside the unit sphere.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{self, Vec3};
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Sphere { center: Vec3, radius: f64 },
    /// Axis-aligned box given by its center and half extents.
    Box { center: Vec3, half: Vec3 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub shape: Shape,
    pub albedo: [f64; 3],
    /// Specular weight k_s.
    pub specular: f64,
    /// Phong exponent.
    pub shininess: f64,
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Scene {
    pub primitives: Vec<Primitive>,
}

#[derive(Clone, Copy, Debug)]
pub struct Hit {
    pub t: f64,
    pub point: Vec3,
    pub normal: Vec3,
    pub primitive: usize,
}

impl Shape {
    /// Nearest intersection distance along a unit ray beyond `t_min`, with
    /// the outward normal there.
    pub fn intersect(&self, o: Vec3, d: Vec3, t_min: f64) -> Option<(f64, Vec3)> {
        match *self {
            Shape::Sphere { center, radius } => {
                let oc = math::sub(o, center);
                let b = math::dot(oc, d);
                let c = math::dot(oc, oc) - radius * radius;
                let disc = b * b - c;
                if disc < 0.0 {
                    return None;
                }
                let s = disc.sqrt();
                let t = [-b - s, -b + s].into_iter().find(|&t| t > t_min)?;
                let p = math::add(o, math::scale(d, t));
                Some((t, math::scale(math::sub(p, center), 1.0 / radius)))
            }
            Shape::Box { center, half } => {
                let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
                let (mut n0, mut n1) = (0, 0);
                for a in 0..3 {
                    let lo = center[a] - half[a];
                    let hi = center[a] + half[a];
                    if d[a].abs() < 1e-15 {
                        if o[a] < lo || o[a] > hi {
                            return None;
                        }
                        continue;
                    }
                    let (mut ta, mut tb) = ((lo - o[a]) / d[a], (hi - o[a]) / d[a]);
                    if ta > tb {
                        std::mem::swap(&mut ta, &mut tb);
                    }
                    if ta > t0 {
                        t0 = ta;
                        n0 = a;
                    }
                    if tb < t1 {
                        t1 = tb;
                        n1 = a;
                    }
                }
                if t0 > t1 {
                    return None;
                }
                let (t, axis) = if t0 > t_min {
                    (t0, n0)
                } else if t1 > t_min {
                    (t1, n1)
                } else {
                    return None;
                };
                let p = math::add(o, math::scale(d, t));
                let mut n = [0.0; 3];
                n[axis] = if p[axis] > center[axis] { 1.0 } else { -1.0 };
                Some((t, n))
            }
        }
    }

    /// Radius of the smallest origin-centered ball containing the shape.
    pub fn extent(&self) -> f64 {
        match *self {
            Shape::Sphere { center, radius } => math::norm(center) + radius,
            Shape::Box { center, half } => {
                let corner = std::array::from_fn(|a| center[a].abs() + half[a]);
                math::norm(corner)
            }
        }
    }
}

impl Scene {
    pub fn validate(&self) -> Result<()> {
        for (i, p) in self.primitives.iter().enumerate() {
            if p.shape.extent() > 1.0 + 1e-9 {
                return Err(Error::InvalidArgument(format!("primitive {i} leaves the unit sphere")));
            }
            if p.albedo.iter().any(|&a| !(0.0..=1.0).contains(&a)) || !(0.0..=1.0).contains(&p.specular) || !(4.0..=256.0).contains(&p.shininess) {
                return Err(Error::InvalidArgument(format!("primitive {i} has out-of-range material")));
            }
        }
        Ok(())
    }

    pub fn intersect(&self, o: Vec3, d: Vec3, t_min: f64) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        for (i, p) in self.primitives.iter().enumerate() {
            if let Some((t, n)) = p.shape.intersect(o, d, t_min) {
                if best.is_none_or(|b| t < b.t) {
                    best = Some(Hit {
                        t,
                        point: math::add(o, math::scale(d, t)),
                        normal: n,
                        primitive: i,
                    });
                }
            }
        }
        best
    }

    pub fn occluded(&self, o: Vec3, d: Vec3) -> bool {
        self.primitives.iter().any(|p| p.shape.intersect(o, d, 1e-6).is_some())
    }

    /// One to three random primitives inside the unit sphere.
    pub fn random(rng: &mut Rng) -> Self {
        let n = rng.random_range(1..=3);
        let primitives = (0..n)
            .map(|_| {
                let shape = if rng.random_bool(0.5) {
                    let radius = rng.random_range(0.2..0.5);
                    let dist = rng.random_range(0.0..(1.0 - radius));
                    let center = scaled_direction(rng, dist);
                    Shape::Sphere { center, radius }
                } else {
                    let half: Vec3 = std::array::from_fn(|_| rng.random_range(0.12..0.4));
                    let hn = math::norm(half);
                    let dist = rng.random_range(0.0..(1.0 - hn));
                    let center = scaled_direction(rng, dist);
                    Shape::Box { center, half }
                };
                Primitive {
                    shape,
                    albedo: std::array::from_fn(|_| rng.random_range(0.05..0.95)),
                    specular: rng.random_range(0.0..0.8),
                    shininess: (rng.random_range(4f64.ln()..256f64.ln())).exp(),
                }
            })
            .collect();
        Self { primitives }
    }
}

/// Random direction scaled to length `r`. A box whose center is within
/// `1 - |half|` of the origin stays inside the unit ball.
fn scaled_direction(rng: &mut Rng, r: f64) -> Vec3 {
    math::scale(super::envgen::random_direction(rng), r)
}
