use nalgebra::Vector3;
use rayon::prelude::*;

use crate::ingest::{CameraIntrinsics, Pose, TriangleMesh};
use crate::{Error, Result};

pub const MAX_LEAF_SIZE: usize = 4;

/// Parallel-ray determinant threshold for the intersection test.
const PARALLEL_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl Aabb {
    pub fn empty() -> Self {
        Aabb {
            min: Vector3::repeat(f64::INFINITY),
            max: Vector3::repeat(f64::NEG_INFINITY),
        }
    }

    pub fn grow(&mut self, p: &Vector3<f64>) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    pub fn union(&self, other: &Aabb) -> Aabb {
        Aabb {
            min: self.min.inf(&other.min),
            max: self.max.sup(&other.max),
        }
    }

    pub fn contains_box(&self, other: &Aabb) -> bool {
        (0..3).all(|k| self.min[k] <= other.min[k] && other.max[k] <= self.max[k])
    }

    /// Entry distance of the ray into the box, padded so that intersections
    /// computed in floating point on a face are never culled.
    fn ray_entry(&self, origin: &Vector3<f64>, dir: &Vector3<f64>, t_max: f64) -> Option<f64> {
        let pad = 1e-9 * (1.0 + (self.max - self.min).amax());
        let (mut t0, mut t1) = (0.0f64, t_max);
        for k in 0..3 {
            let (lo, hi) = (self.min[k] - pad, self.max[k] + pad);
            if dir[k] == 0.0 {
                if origin[k] < lo || origin[k] > hi {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / dir[k];
            let (mut a, mut b) = ((lo - origin[k]) * inv, (hi - origin[k]) * inv);
            if a > b {
                std::mem::swap(&mut a, &mut b);
            }
            t0 = t0.max(a);
            t1 = t1.min(b * (1.0 + 1e-12));
            if t0 > t1 {
                return None;
            }
        }
        Some(t0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BvhNodeKind {
    /// Triangles `order[start..start + count]`.
    Leaf {
        start: u32,
        count: u32,
    },
    Interior {
        left: u32,
        right: u32,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BvhNode {
    pub bounds: Aabb,
    pub kind: BvhNodeKind,
}

/// Bounding volume hierarchy over a mesh's triangles. Node 0 is the root.
#[derive(Debug, Clone)]
pub struct Bvh {
    pub nodes: Vec<BvhNode>,
    /// Triangle indices in leaf order.
    pub order: Vec<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayHit {
    pub t: f64,
    pub triangle: u32,
    pub u: f64,
    pub v: f64,
}

impl RayHit {
    /// Nearest first; equal distances go to the lower triangle index.
    fn closer_than(&self, other: &RayHit) -> bool {
        self.t < other.t || (self.t == other.t && self.triangle < other.triangle)
    }
}

/// Möller–Trumbore intersection; returns `(t, u, v)` for `t > 0`.
pub fn intersect_triangle(
    origin: &Vector3<f64>,
    dir: &Vector3<f64>,
    tri: &[Vector3<f64>; 3],
) -> Option<(f64, f64, f64)> {
    let e1 = tri[1] - tri[0];
    let e2 = tri[2] - tri[0];
    let p = dir.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() < PARALLEL_EPS {
        return None;
    }
    let inv = 1.0 / det;
    let s = origin - tri[0];
    let u = s.dot(&p) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let v = dir.dot(&q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = e2.dot(&q) * inv;
    (t > 0.0).then_some((t, u, v))
}

fn hit_triangle(
    mesh: &TriangleMesh,
    i: u32,
    origin: &Vector3<f64>,
    dir: &Vector3<f64>,
) -> Option<RayHit> {
    intersect_triangle(origin, dir, &mesh.triangle(i as usize)).map(|(t, u, v)| RayHit {
        t,
        triangle: i,
        u,
        v,
    })
}

/// Tests every triangle; reference for [`Bvh::intersect`].
pub fn brute_force_intersect(
    mesh: &TriangleMesh,
    origin: &Vector3<f64>,
    dir: &Vector3<f64>,
) -> Option<RayHit> {
    let mut best: Option<RayHit> = None;
    for i in 0..mesh.triangles.len() as u32 {
        if let Some(h) = hit_triangle(mesh, i, origin, dir) {
            if best.is_none_or(|b| h.closer_than(&b)) {
                best = Some(h);
            }
        }
    }
    best
}

/// Median-split BVH with at most [`MAX_LEAF_SIZE`] triangles per leaf.
pub fn build_bvh(mesh: &TriangleMesh) -> Result<Bvh> {
    if mesh.triangles.is_empty() {
        return Err(Error::Shape("cannot build a BVH over an empty mesh".into()));
    }
    mesh.validate()?;
    let boxes: Vec<Aabb> = (0..mesh.triangles.len())
        .map(|i| {
            let mut b = Aabb::empty();
            mesh.triangle(i).iter().for_each(|p| b.grow(p));
            b
        })
        .collect();
    let centroids: Vec<Vector3<f64>> = boxes.iter().map(|b| (b.min + b.max) * 0.5).collect();
    let mut bvh = Bvh {
        nodes: Vec::new(),
        order: (0..mesh.triangles.len() as u32).collect(),
    };
    build_node(&mut bvh, &boxes, &centroids, 0, mesh.triangles.len());
    Ok(bvh)
}

fn build_node(
    bvh: &mut Bvh,
    boxes: &[Aabb],
    centroids: &[Vector3<f64>],
    start: usize,
    end: usize,
) -> u32 {
    let slice = &mut bvh.order[start..end];
    let bounds = slice
        .iter()
        .fold(Aabb::empty(), |acc, &i| acc.union(&boxes[i as usize]));
    let id = bvh.nodes.len() as u32;
    if end - start <= MAX_LEAF_SIZE {
        bvh.nodes.push(BvhNode {
            bounds,
            kind: BvhNodeKind::Leaf {
                start: start as u32,
                count: (end - start) as u32,
            },
        });
        return id;
    }
    let mut cb = Aabb::empty();
    slice.iter().for_each(|&i| cb.grow(&centroids[i as usize]));
    let axis = (cb.max - cb.min).imax();
    slice.sort_by(|&a, &b| {
        centroids[a as usize][axis]
            .total_cmp(&centroids[b as usize][axis])
            .then(a.cmp(&b))
    });
    let mid = start + (end - start) / 2;
    bvh.nodes.push(BvhNode {
        bounds,
        kind: BvhNodeKind::Interior { left: 0, right: 0 },
    });
    let left = build_node(bvh, boxes, centroids, start, mid);
    let right = build_node(bvh, boxes, centroids, mid, end);
    bvh.nodes[id as usize].kind = BvhNodeKind::Interior { left, right };
    id
}

impl Bvh {
    /// Nearest intersection along `origin + t·dir`; identical to
    /// [`brute_force_intersect`].
    pub fn intersect(
        &self,
        mesh: &TriangleMesh,
        origin: &Vector3<f64>,
        dir: &Vector3<f64>,
    ) -> Option<RayHit> {
        let mut best: Option<RayHit> = None;
        let mut stack = vec![(0u32, 0.0f64)];
        while let Some((node, entry)) = stack.pop() {
            if best.is_some_and(|b| entry > b.t) {
                continue;
            }
            match &self.nodes[node as usize].kind {
                BvhNodeKind::Leaf { start, count } => {
                    for &tri in &self.order[*start as usize..(*start + *count) as usize] {
                        if let Some(h) = hit_triangle(mesh, tri, origin, dir) {
                            if best.is_none_or(|b| h.closer_than(&b)) {
                                best = Some(h);
                            }
                        }
                    }
                }
                BvhNodeKind::Interior { left, right } => {
                    let limit = best.map_or(f64::INFINITY, |b| b.t);
                    let l = self.nodes[*left as usize]
                        .bounds
                        .ray_entry(origin, dir, limit);
                    let r = self.nodes[*right as usize]
                        .bounds
                        .ray_entry(origin, dir, limit);
                    match (l, r) {
                        (Some(tl), Some(tr)) if tl <= tr => {
                            stack.push((*right, tr));
                            stack.push((*left, tl));
                        }
                        (Some(tl), Some(tr)) => {
                            stack.push((*left, tl));
                            stack.push((*right, tr));
                        }
                        (Some(tl), None) => stack.push((*left, tl)),
                        (None, Some(tr)) => stack.push((*right, tr)),
                        (None, None) => {}
                    }
                }
            }
        }
        best
    }

    /// Checks that every triangle sits in exactly one leaf, leaf sizes are
    /// bounded, and child boxes lie inside their parents.
    pub fn audit(&self, mesh: &TriangleMesh) -> Result<()> {
        let mut seen = vec![0u32; mesh.triangles.len()];
        let mut stack = vec![0u32];
        let mut visited = 0;
        while let Some(id) = stack.pop() {
            visited += 1;
            let node = &self.nodes[id as usize];
            match &node.kind {
                BvhNodeKind::Leaf { start, count } => {
                    if *count as usize > MAX_LEAF_SIZE || *count == 0 {
                        return Err(Error::State(format!("leaf {id} holds {count} triangles")));
                    }
                    for &t in &self.order[*start as usize..(*start + *count) as usize] {
                        seen[t as usize] += 1;
                        let tri = mesh.triangle(t as usize);
                        let mut b = Aabb::empty();
                        tri.iter().for_each(|p| b.grow(p));
                        if !node.bounds.contains_box(&b) {
                            return Err(Error::State(format!("triangle {t} escapes leaf {id}")));
                        }
                    }
                }
                BvhNodeKind::Interior { left, right } => {
                    for c in [left, right] {
                        if !node.bounds.contains_box(&self.nodes[*c as usize].bounds) {
                            return Err(Error::State(format!("child {c} escapes node {id}")));
                        }
                        stack.push(*c);
                    }
                }
            }
        }
        if visited != self.nodes.len() {
            return Err(Error::State("unreachable BVH nodes".into()));
        }
        if let Some(t) = seen.iter().position(|&n| n != 1) {
            return Err(Error::State(format!(
                "triangle {t} appears in {} leaves",
                seen[t]
            )));
        }
        Ok(())
    }
}

/// Per-pixel nearest surface hits for one camera.
#[derive(Debug, Clone, PartialEq)]
pub struct RaycastResult {
    pub width: u32,
    pub height: u32,
    /// World-space hit points; zero where `mask` is off.
    pub points: Vec<Vector3<f64>>,
    /// Camera-frame z of each hit; zero where `mask` is off.
    pub depth: Vec<f64>,
    pub triangles: Vec<Option<u32>>,
    pub mask: Vec<bool>,
}

impl RaycastResult {
    pub fn hit_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Casts one ray per pixel center from the camera at `pose`.
pub fn raycast(bvh: &Bvh, mesh: &TriangleMesh, k: &CameraIntrinsics, pose: &Pose) -> RaycastResult {
    let origin = pose.center();
    let (w, h) = (k.width as usize, k.height as usize);
    let hits: Vec<Option<RayHit>> = (0..w * h)
        .into_par_iter()
        .map(|i| {
            let (u, v) = ((i % w) as f64, (i / w) as f64);
            // Camera-frame z of this direction is 1, so t is the depth.
            let dir = pose.rotation * k.pixel_ray(u, v);
            bvh.intersect(mesh, &origin, &dir)
        })
        .collect();
    let mut out = RaycastResult {
        width: k.width,
        height: k.height,
        points: vec![Vector3::zeros(); w * h],
        depth: vec![0.0; w * h],
        triangles: vec![None; w * h],
        mask: vec![false; w * h],
    };
    for (i, hit) in hits.into_iter().enumerate() {
        if let Some(hit) = hit {
            let (u, v) = ((i % w) as f64, (i / w) as f64);
            let dir = pose.rotation * k.pixel_ray(u, v);
            out.points[i] = origin + dir * hit.t;
            out.depth[i] = hit.t;
            out.triangles[i] = Some(hit.triangle);
            out.mask[i] = true;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn tri_mesh(tris: &[[Vector3<f64>; 3]]) -> TriangleMesh {
        let mut m = TriangleMesh::default();
        for t in tris {
            let base = m.vertices.len() as u32;
            m.vertices.extend_from_slice(t);
            m.triangles.push([base, base + 1, base + 2]);
        }
        m
    }

    #[test]
    fn single_triangle_is_one_leaf() {
        let m = tri_mesh(&[[Vector3::zeros(), Vector3::x(), Vector3::y()]]);
        let bvh = build_bvh(&m).unwrap();
        assert_eq!(bvh.nodes.len(), 1);
        assert!(matches!(
            bvh.nodes[0].kind,
            BvhNodeKind::Leaf { count: 1, .. }
        ));
    }

    #[test]
    fn distant_groups_split_into_disjoint_leaves() {
        let t = |o: f64| {
            [
                Vector3::new(o, 0.0, 0.0),
                Vector3::new(o + 1.0, 0.0, 0.0),
                Vector3::new(o, 1.0, 0.0),
            ]
        };
        let m = tri_mesh(&[t(0.0), t(0.1), t(0.2), t(100.0), t(100.1), t(100.2)]);
        let bvh = build_bvh(&m).unwrap();
        let BvhNodeKind::Interior { left, right } = bvh.nodes[0].kind else {
            panic!("root should be interior")
        };
        let (l, r) = (
            bvh.nodes[left as usize].bounds,
            bvh.nodes[right as usize].bounds,
        );
        assert!(l.max.x < r.min.x || r.max.x < l.min.x);
        bvh.audit(&m).unwrap();
    }

    #[test]
    fn empty_mesh_is_rejected() {
        assert!(build_bvh(&TriangleMesh::default()).is_err());
    }

    #[test]
    fn centroid_ray_hits_at_plane_distance() {
        let tri = [
            Vector3::new(-1.0, -1.0, 3.0),
            Vector3::new(2.0, -1.0, 3.0),
            Vector3::new(-1.0, 2.0, 3.0),
        ];
        let m = tri_mesh(&[tri]);
        let centroid = (tri[0] + tri[1] + tri[2]) / 3.0;
        let hit = brute_force_intersect(&m, &Vector3::zeros(), &centroid).unwrap();
        assert!((hit.t - 1.0).abs() < 1e-15);
        assert!((hit.u - 1.0 / 3.0).abs() < 1e-12 && (hit.v - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn sphere_mesh_audit_and_center_depth() {
        let m = TriangleMesh::uv_sphere(Vector3::new(0.0, 0.0, 3.0), 1.0, 50, 100);
        assert!(m.triangles.len() >= 9000);
        let bvh = build_bvh(&m).unwrap();
        bvh.audit(&m).unwrap();
        let k = CameraIntrinsics {
            fx: 60.0,
            fy: 60.0,
            cx: 20.0,
            cy: 15.0,
            width: 41,
            height: 31,
            depth_scale: 1.0 / 5000.0,
        };
        let r = raycast(&bvh, &m, &k, &Pose::identity());
        let c = 15 * 41 + 20;
        assert!(r.mask[c]);
        assert!((r.depth[c] - 2.0).abs() <= 1e-2, "{}", r.depth[c]);
        assert!(!r.mask[0]);
    }

    #[test]
    fn facing_away_misses_everything() {
        let m = TriangleMesh::uv_sphere(Vector3::new(0.0, 0.0, -3.0), 1.0, 10, 20);
        let bvh = build_bvh(&m).unwrap();
        let k = CameraIntrinsics {
            fx: 10.0,
            fy: 10.0,
            cx: 4.5,
            cy: 4.5,
            width: 10,
            height: 10,
            depth_scale: 1.0 / 5000.0,
        };
        assert_eq!(raycast(&bvh, &m, &k, &Pose::identity()).hit_count(), 0);
    }

    #[test]
    fn stacked_triangles_report_nearest() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let zs: Vec<f64> = (0..6).map(|_| rng.gen_range(1.0..10.0)).collect();
            let tris: Vec<_> = zs
                .iter()
                .map(|&z| {
                    [
                        Vector3::new(-5.0, -5.0, z),
                        Vector3::new(5.0, -5.0, z),
                        Vector3::new(0.0, 5.0, z),
                    ]
                })
                .collect();
            let m = tri_mesh(&tris);
            let bvh = build_bvh(&m).unwrap();
            let d = Vector3::new(rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1), 1.0);
            let hit = bvh.intersect(&m, &Vector3::zeros(), &d).unwrap();
            let zmin = zs.iter().cloned().fold(f64::INFINITY, f64::min);
            assert!((hit.t - zmin).abs() < 1e-12);
        }
    }

    #[test]
    fn bvh_matches_brute_force_on_random_meshes() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let n = rng.gen_range(1..=500);
            let tris: Vec<_> = (0..n)
                .map(|_| {
                    let c = Vector3::new(
                        rng.gen_range(-3.0..3.0),
                        rng.gen_range(-3.0..3.0),
                        rng.gen_range(2.0..8.0),
                    );
                    std::array::from_fn(|_| {
                        c + Vector3::new(
                            rng.gen_range(-0.5..0.5),
                            rng.gen_range(-0.5..0.5),
                            rng.gen_range(-0.5..0.5),
                        )
                    })
                })
                .collect();
            let m = tri_mesh(&tris);
            let bvh = build_bvh(&m).unwrap();
            bvh.audit(&m).unwrap();
            for _ in 0..300 {
                let d = Vector3::new(rng.gen_range(-0.6..0.6), rng.gen_range(-0.6..0.6), 1.0);
                assert_eq!(
                    bvh.intersect(&m, &Vector3::zeros(), &d),
                    brute_force_intersect(&m, &Vector3::zeros(), &d)
                );
            }
        }
    }
}
