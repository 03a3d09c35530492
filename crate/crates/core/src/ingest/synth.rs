//! Analytic scenes with a closed-form light field, for validation without
//! captured data.

use nalgebra::Vector3;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CameraIntrinsics, DepthMap, Pose, TriangleMesh};
use crate::render::Image;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Surface {
    /// Square of side `2·half_extent`; `normal` faces the cameras.
    Plane {
        center: Vector3<f64>,
        normal: Vector3<f64>,
        half_extent: f64,
    },
    Sphere {
        center: Vector3<f64>,
        radius: f64,
    },
}

/// Albedo `base + amplitude · ½(1 + sin(f·x + φ_c) · cos(f·y − φ_c))` in
/// surface coordinates, with `φ_c = c` for channel `c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Texture {
    pub base: [f64; 3],
    pub amplitude: [f64; 3],
    /// Radians per meter.
    pub frequency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reflectance {
    /// Fraction of albedo lit regardless of orientation.
    pub ambient: f64,
    pub specular_strength: f64,
    pub specular_exponent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthScene {
    pub surface: Surface,
    pub texture: Texture,
    pub reflectance: Reflectance,
    /// Unit vector from the surface toward the directional light.
    pub light: Vector3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceHit {
    /// Ray parameter; equals camera depth when the ray has unit z in camera
    /// coordinates.
    pub t: f64,
    pub point: Vector3<f64>,
    pub normal: Vector3<f64>,
}

#[derive(Debug, Clone)]
pub struct SynthFrame {
    pub depth: DepthMap,
    pub color: Image,
    pub pose: Pose,
}

impl Surface {
    /// An orthonormal `(e1, e2)` spanning the plane.
    fn plane_axes(normal: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
        let n = normal.normalize();
        let helper = if n.z.abs() < 0.9 {
            Vector3::z()
        } else {
            Vector3::x()
        };
        let e1 = helper.cross(&n).normalize();
        (e1, n.cross(&e1))
    }

    pub fn center(&self) -> Vector3<f64> {
        match self {
            Surface::Plane { center, .. } | Surface::Sphere { center, .. } => *center,
        }
    }

    pub fn normal_at(&self, p: &Vector3<f64>) -> Vector3<f64> {
        match self {
            Surface::Plane { normal, .. } => normal.normalize(),
            Surface::Sphere { center, .. } => (p - center).normalize(),
        }
    }

    /// First intersection with `origin + t·dir`, `t > 0`. `dir` need not be
    /// unit length.
    pub fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<SurfaceHit> {
        match self {
            Surface::Plane {
                center,
                normal,
                half_extent,
            } => {
                let n = normal.normalize();
                let denom = n.dot(dir);
                if denom.abs() < 1e-12 {
                    return None;
                }
                let t = n.dot(&(center - origin)) / denom;
                if t <= 0.0 {
                    return None;
                }
                let point = origin + dir * t;
                let (e1, e2) = Self::plane_axes(normal);
                let rel = point - center;
                if rel.dot(&e1).abs() > *half_extent || rel.dot(&e2).abs() > *half_extent {
                    return None;
                }
                Some(SurfaceHit {
                    t,
                    point,
                    normal: n,
                })
            }
            Surface::Sphere { center, radius } => {
                let oc = origin - center;
                let a = dir.dot(dir);
                let b = 2.0 * oc.dot(dir);
                let c = oc.dot(&oc) - radius * radius;
                let disc = b * b - 4.0 * a * c;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                // Numerically stable roots.
                let q = -0.5 * (b + b.signum() * sq);
                let (r0, r1) = (q / a, if q != 0.0 { c / q } else { 0.0 });
                let (near, far) = if r0 < r1 { (r0, r1) } else { (r1, r0) };
                let t = if near > 0.0 {
                    near
                } else if far > 0.0 {
                    far
                } else {
                    return None;
                };
                let point = origin + dir * t;
                Some(SurfaceHit {
                    t,
                    point,
                    normal: (point - center).normalize(),
                })
            }
        }
    }

    /// 2D texture coordinates (meters along the surface).
    fn texture_coords(&self, p: &Vector3<f64>) -> (f64, f64) {
        match self {
            Surface::Plane { center, normal, .. } => {
                let (e1, e2) = Self::plane_axes(normal);
                let rel = p - center;
                (rel.dot(&e1), rel.dot(&e2))
            }
            Surface::Sphere { center, radius } => {
                let rel = (p - center) / *radius;
                let theta = rel.z.clamp(-1.0, 1.0).acos();
                let phi = rel.y.atan2(rel.x);
                (radius * phi * theta.sin().max(1e-3), radius * theta)
            }
        }
    }

    /// Tessellation used for mesh-based rendering of this surface.
    pub fn mesh(&self) -> TriangleMesh {
        match self {
            Surface::Plane {
                center,
                normal,
                half_extent,
            } => {
                let (e1, e2) = Self::plane_axes(normal);
                TriangleMesh::grid_plane(*center, e1, e2, *half_extent, 16)
            }
            Surface::Sphere { center, radius } => {
                TriangleMesh::uv_sphere(*center, *radius, 50, 100)
            }
        }
    }
}

impl SynthScene {
    /// Textured Lambertian plane facing −z, centered at (2, 2, 2.5).
    pub fn textured_plane() -> Self {
        SynthScene {
            surface: Surface::Plane {
                center: Vector3::new(2.0, 2.0, 2.5),
                normal: Vector3::new(0.0, 0.0, -1.0),
                half_extent: 1.5,
            },
            texture: Texture {
                base: [0.15, 0.2, 0.25],
                amplitude: [0.6, 0.5, 0.4],
                frequency: 4.0,
            },
            reflectance: Reflectance {
                ambient: 0.3,
                specular_strength: 0.0,
                specular_exponent: 1.0,
            },
            light: Vector3::new(0.3, -0.4, -1.0).normalize(),
        }
    }

    /// Unit sphere at (2, 2, 2) with a mild Phong highlight.
    pub fn phong_sphere() -> Self {
        SynthScene {
            surface: Surface::Sphere {
                center: Vector3::new(2.0, 2.0, 2.0),
                radius: 1.0,
            },
            texture: Texture {
                base: [0.2, 0.2, 0.2],
                amplitude: [0.4, 0.35, 0.3],
                frequency: 3.0,
            },
            reflectance: Reflectance {
                ambient: 0.3,
                specular_strength: 0.15,
                specular_exponent: 8.0,
            },
            light: Vector3::new(0.2, -0.3, -1.0).normalize(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synthetic scene: {m}")));
        match &self.surface {
            Surface::Plane {
                normal,
                half_extent,
                ..
            } => {
                if normal.norm() < 1e-9 || !(*half_extent > 0.0) {
                    return bad("plane needs a nonzero normal and positive extent");
                }
            }
            Surface::Sphere { radius, .. } => {
                if !(*radius > 0.0) {
                    return bad("sphere radius must be positive");
                }
            }
        }
        if (self.light.norm() - 1.0).abs() > 1e-6 {
            return bad("light direction must be unit length");
        }
        let t = &self.texture;
        if (0..3)
            .any(|c| t.base[c] < 0.0 || t.amplitude[c] < 0.0 || t.base[c] + t.amplitude[c] > 1.0)
        {
            return bad("albedo must stay within [0, 1]");
        }
        let r = &self.reflectance;
        if !(0.0..=1.0).contains(&r.ambient)
            || r.specular_strength < 0.0
            || !(r.specular_exponent > 0.0)
        {
            return bad("invalid reflectance");
        }
        Ok(())
    }

    pub fn albedo(&self, p: &Vector3<f64>) -> [f64; 3] {
        let (x, y) = self.surface.texture_coords(p);
        let f = self.texture.frequency;
        std::array::from_fn(|c| {
            let phase = c as f64;
            let pattern = 0.5 * (1.0 + (f * x + phase).sin() * (f * y - phase).cos());
            self.texture.base[c] + self.texture.amplitude[c] * pattern
        })
    }

    /// Ground-truth color seen along unit direction `d` (camera → point) at
    /// surface point `p`.
    pub fn color(&self, p: &Vector3<f64>, d: &Vector3<f64>) -> [f64; 3] {
        let n = self.surface.normal_at(p);
        let l = self.light;
        let r = &self.reflectance;
        let n_dot_l = n.dot(&l);
        let shade = r.ambient + (1.0 - r.ambient) * n_dot_l.max(0.0);
        let specular = if n_dot_l > 0.0 && r.specular_strength > 0.0 {
            let refl = n * (2.0 * n_dot_l) - l;
            r.specular_strength * refl.dot(&(-d)).max(0.0).powf(r.specular_exponent)
        } else {
            0.0
        };
        self.albedo(p)
            .map(|a| (a * shade + specular).clamp(0.0, 1.0))
    }

    pub fn mesh(&self) -> TriangleMesh {
        self.surface.mesh()
    }

    /// Ray-casts the primitive from `pose`, producing exact depth and shaded
    /// color. Pixels that miss get depth 0 and black.
    pub fn render_frame(&self, k: &CameraIntrinsics, pose: &Pose) -> SynthFrame {
        let mut depth = DepthMap::new(k.width, k.height);
        let mut color = Image::new(k.width, k.height);
        let origin = pose.center();
        for v in 0..k.height {
            for u in 0..k.width {
                let dir = pose.rotation * k.pixel_ray(u as f64, v as f64);
                if let Some(hit) = self.surface.intersect(&origin, &dir) {
                    depth.set(u, v, hit.t as f32);
                    let c = self.color(&hit.point, &dir.normalize());
                    color.set(u, v, c.map(|x| x as f32));
                }
            }
        }
        SynthFrame {
            depth,
            color,
            pose: *pose,
        }
    }
}

/// Renders every pose of `trajectory`; returns the frames and a copy of the
/// scene as the oracle.
pub fn synth_scene_frames(
    scene: &SynthScene,
    trajectory: &[Pose],
    k: &CameraIntrinsics,
) -> Result<(Vec<SynthFrame>, SynthScene)> {
    scene.validate()?;
    k.validate()?;
    if trajectory.is_empty() {
        return Err(Error::Config("synthetic trajectory is empty".into()));
    }
    let frames = trajectory
        .iter()
        .enumerate()
        .map(|(i, pose)| {
            let frame = scene.render_frame(k, pose);
            if frame.depth.data.iter().all(|&z| z == 0.0) {
                log::warn!("synthetic frame {i}: camera does not see the surface");
            }
            frame
        })
        .collect();
    Ok((frames, scene.clone()))
}

/// Unit vector at angle `theta` from `axis`, azimuth `phi` about it.
pub fn cone_direction(axis: &Vector3<f64>, theta: f64, phi: f64) -> Vector3<f64> {
    let a = axis.normalize();
    let helper = if a.x.abs() < 0.9 {
        Vector3::x()
    } else {
        Vector3::y()
    };
    let e1 = a.cross(&helper).normalize();
    let e2 = a.cross(&e1);
    a * theta.cos() + (e1 * phi.cos() + e2 * phi.sin()) * theta.sin()
}

fn look_at_from(target: &Vector3<f64>, offset_dir: Vector3<f64>, distance: f64) -> Result<Pose> {
    let eye = target + offset_dir * distance;
    let forward = -offset_dir;
    let up = if forward.y.abs() < 0.9 {
        Vector3::new(0.0, -1.0, 0.0)
    } else {
        Vector3::z()
    };
    Pose::look_at(eye, *target, up)
}

/// `count` cameras at `distance` from `target`, looking at it, with viewing
/// positions drawn uniformly (in solid angle) from the cone of half-angle
/// `max_angle` radians around `axis`.
pub fn cone_trajectory(
    target: &Vector3<f64>,
    axis: &Vector3<f64>,
    distance: f64,
    max_angle: f64,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Pose>> {
    (0..count)
        .map(|_| {
            let cos_t = 1.0 - rng.gen::<f64>() * (1.0 - max_angle.cos());
            let phi = rng.gen::<f64>() * std::f64::consts::TAU;
            look_at_from(
                target,
                cone_direction(axis, cos_t.clamp(-1.0, 1.0).acos(), phi),
                distance,
            )
        })
        .collect()
}

/// `count` cameras evenly spaced in azimuth at angle `offset` from `axis`.
pub fn ring_trajectory(
    target: &Vector3<f64>,
    axis: &Vector3<f64>,
    distance: f64,
    offset: f64,
    count: usize,
) -> Result<Vec<Pose>> {
    (0..count)
        .map(|i| {
            let phi = std::f64::consts::TAU * i as f64 / count as f64;
            look_at_from(target, cone_direction(axis, offset, phi), distance)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;

    fn lambertian_sphere() -> SynthScene {
        let mut s = SynthScene::phong_sphere();
        s.reflectance.specular_strength = 0.0;
        s
    }

    #[test]
    fn presets_validate() {
        SynthScene::textured_plane().validate().unwrap();
        SynthScene::phong_sphere().validate().unwrap();
    }

    #[test]
    fn lambertian_color_ignores_direction() {
        let s = lambertian_sphere();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let n = cone_direction(
                &Vector3::z(),
                rng.gen::<f64>() * 3.0,
                rng.gen::<f64>() * 6.3,
            );
            let p = Vector3::new(2.0, 2.0, 2.0) + n;
            let d1 = -cone_direction(&n, rng.gen::<f64>() * 1.5, rng.gen::<f64>() * 6.3);
            let d2 = -cone_direction(&n, rng.gen::<f64>() * 1.5, rng.gen::<f64>() * 6.3);
            assert_eq!(s.color(&p, &d1), s.color(&p, &d2));
        }
    }

    #[test]
    fn specular_peaks_at_mirror_direction() {
        let s = SynthScene::phong_sphere();
        let c = Vector3::new(2.0, 2.0, 2.0);
        let n = cone_direction(&s.light, 0.4, 1.0);
        let p = c + n;
        let mirror = n * (2.0 * n.dot(&s.light)) - s.light;
        let best = s.color(&p, &(-mirror))[0];
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..500 {
            let v = cone_direction(&n, rng.gen::<f64>() * 1.5, rng.gen::<f64>() * 6.3);
            assert!(s.color(&p, &(-v))[0] <= best + 1e-15);
        }
    }

    #[test]
    fn unit_sphere_at_three_meters_has_center_depth_two() {
        let scene = SynthScene {
            surface: Surface::Sphere {
                center: Vector3::new(0.0, 0.0, 3.0),
                radius: 1.0,
            },
            ..lambertian_sphere()
        };
        let k = CameraIntrinsics {
            fx: 100.0,
            fy: 100.0,
            cx: 32.0,
            cy: 24.0,
            width: 65,
            height: 49,
            depth_scale: 1.0 / 5000.0,
        };
        let frame = scene.render_frame(&k, &Pose::identity());
        assert_eq!(frame.depth.get(32, 24), 2.0);
        assert_eq!(frame.depth.get(0, 0), 0.0);
    }

    #[test]
    fn plane_hit_is_bounded() {
        let s = SynthScene::textured_plane();
        let o = Vector3::new(2.0, 2.0, 0.0);
        assert!(s.surface.intersect(&o, &Vector3::z()).is_some());
        assert!(s
            .surface
            .intersect(&o, &Vector3::new(1.0, 0.0, 1.0))
            .is_none());
        assert!(s.surface.intersect(&o, &-Vector3::z()).is_none());
    }

    #[test]
    fn oracle_is_deterministic_and_in_range() {
        let s = SynthScene::phong_sphere();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let n = cone_direction(
                &Vector3::z(),
                rng.gen::<f64>() * 3.1,
                rng.gen::<f64>() * 6.3,
            );
            let p = Vector3::new(2.0, 2.0, 2.0) + n;
            let d = -cone_direction(&n, rng.gen::<f64>() * 1.5, rng.gen::<f64>() * 6.3);
            let a = s.color(&p, &d);
            assert_eq!(a, s.color(&p, &d));
            assert!(a.iter().all(|c| (0.0..=1.0).contains(c)));
        }
    }

    #[test]
    fn cone_trajectory_stays_in_cone_and_looks_at_target() {
        let target = Vector3::new(2.0, 2.0, 2.0);
        let axis = Vector3::new(0.0, 0.0, -1.0);
        let max = 15f64.to_radians();
        let poses = cone_trajectory(
            &target,
            &axis,
            3.0,
            max,
            50,
            &mut ChaCha8Rng::seed_from_u64(2),
        )
        .unwrap();
        for pose in &poses {
            let off = (pose.center() - target).normalize();
            assert!(off.dot(&axis).acos() <= max + 1e-9);
            assert!((pose.forward() - (-off)).norm() < 1e-9);
            assert!(((pose.center() - target).norm() - 3.0).abs() < 1e-9);
        }
    }

    #[test]
    fn ring_trajectory_angle() {
        let target = Vector3::new(2.0, 2.0, 2.0);
        let axis = Vector3::new(0.0, 0.0, -1.0);
        for pose in ring_trajectory(&target, &axis, 3.0, 0.9, 6).unwrap() {
            let off = (pose.center() - target).normalize();
            assert!((off.dot(&axis).acos() - 0.9).abs() < 1e-9);
        }
    }

    #[test]
    fn scene_json_round_trip() {
        let s = SynthScene::phong_sphere();
        let json = serde_json::to_string(&s).unwrap();
        let back: SynthScene = serde_json::from_str(&json).unwrap();
        assert_eq!(s, back);
    }
}
