//! Triangle meshes: OBJ and PLY readers, an OBJ writer, and primitive
//! tessellations for synthetic scenes.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::Vector3;

use crate::{Error, Result};

/// Faces with area at or below this (m²) are dropped on load.
const DEGENERATE_AREA: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TriangleMesh {
    pub vertices: Vec<Vector3<f64>>,
    pub triangles: Vec<[u32; 3]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MeshReport {
    pub dropped_degenerate: usize,
    pub triangulated_polygons: usize,
}

impl TriangleMesh {
    pub fn triangle(&self, i: usize) -> [Vector3<f64>; 3] {
        self.triangles[i].map(|v| self.vertices[v as usize])
    }

    pub fn area(&self, i: usize) -> f64 {
        let [a, b, c] = self.triangle(i);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len() as u32;
        if let Some(t) = self.triangles.iter().find(|t| t.iter().any(|&v| v >= n)) {
            return Err(Error::Format(format!(
                "triangle {t:?} indexes past {n} vertices"
            )));
        }
        Ok(())
    }

    /// Removes zero-area faces and returns how many were dropped.
    pub fn drop_degenerate(&mut self) -> usize {
        let before = self.triangles.len();
        let verts = &self.vertices;
        self.triangles.retain(|t| {
            let [a, b, c] = t.map(|v| verts[v as usize]);
            0.5 * (b - a).cross(&(c - a)).norm() > DEGENERATE_AREA
        });
        before - self.triangles.len()
    }

    pub fn write_obj(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        for v in &self.vertices {
            writeln!(out, "v {} {} {}", v.x, v.y, v.z).expect("write to Vec");
        }
        for t in &self.triangles {
            writeln!(out, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1).expect("write to Vec");
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    /// UV sphere with `rings` latitude bands and `segments` longitude slices.
    pub fn uv_sphere(center: Vector3<f64>, radius: f64, rings: u32, segments: u32) -> Self {
        let mut mesh = TriangleMesh::default();
        mesh.vertices.push(center + Vector3::new(0.0, 0.0, radius));
        for r in 1..rings {
            let theta = std::f64::consts::PI * r as f64 / rings as f64;
            for s in 0..segments {
                let phi = std::f64::consts::TAU * s as f64 / segments as f64;
                let dir = Vector3::new(
                    theta.sin() * phi.cos(),
                    theta.sin() * phi.sin(),
                    theta.cos(),
                );
                mesh.vertices.push(center + dir * radius);
            }
        }
        mesh.vertices.push(center - Vector3::new(0.0, 0.0, radius));
        let south = mesh.vertices.len() as u32 - 1;
        let ring = |r: u32, s: u32| 1 + (r - 1) * segments + (s % segments);
        for s in 0..segments {
            mesh.triangles.push([0, ring(1, s), ring(1, s + 1)]);
            mesh.triangles
                .push([south, ring(rings - 1, s + 1), ring(rings - 1, s)]);
        }
        for r in 1..rings - 1 {
            for s in 0..segments {
                let (a, b) = (ring(r, s), ring(r, s + 1));
                let (c, d) = (ring(r + 1, s), ring(r + 1, s + 1));
                mesh.triangles.push([a, c, d]);
                mesh.triangles.push([a, d, b]);
            }
        }
        mesh
    }

    /// Square of side `2·half_extent` spanned by unit axes `u`, `v`, split
    /// into `n × n` quads.
    pub fn grid_plane(
        center: Vector3<f64>,
        u: Vector3<f64>,
        v: Vector3<f64>,
        half_extent: f64,
        n: u32,
    ) -> Self {
        let mut mesh = TriangleMesh::default();
        for j in 0..=n {
            for i in 0..=n {
                let a = -half_extent + 2.0 * half_extent * i as f64 / n as f64;
                let b = -half_extent + 2.0 * half_extent * j as f64 / n as f64;
                mesh.vertices.push(center + u * a + v * b);
            }
        }
        let idx = |i: u32, j: u32| j * (n + 1) + i;
        for j in 0..n {
            for i in 0..n {
                mesh.triangles
                    .push([idx(i, j), idx(i + 1, j), idx(i + 1, j + 1)]);
                mesh.triangles
                    .push([idx(i, j), idx(i + 1, j + 1), idx(i, j + 1)]);
            }
        }
        mesh
    }
}

/// Loads an OBJ (`v`/`f`) or PLY (ascii or binary little-endian) mesh.
/// Polygons are fan-triangulated; zero-area faces are dropped.
pub fn load_mesh(path: &Path) -> Result<(TriangleMesh, MeshReport)> {
    let data = fs::read(path).map_err(|e| Error::io(path, e))?;
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase);
    let (mut mesh, mut report) = match ext.as_deref() {
        Some("obj") => parse_obj(path, &data)?,
        Some("ply") => parse_ply(path, &data)?,
        _ => {
            return Err(Error::Format(format!(
                "{}: unsupported mesh extension (expected .obj or .ply)",
                path.display()
            )))
        }
    };
    mesh.validate()?;
    report.dropped_degenerate = mesh.drop_degenerate();
    if report.dropped_degenerate > 0 {
        log::warn!(
            "{}: dropped {} zero-area triangles",
            path.display(),
            report.dropped_degenerate
        );
    }
    Ok((mesh, report))
}

fn fan(poly: &[u32], mesh: &mut TriangleMesh, report: &mut MeshReport) {
    if poly.len() > 3 {
        report.triangulated_polygons += 1;
    }
    for k in 1..poly.len() - 1 {
        mesh.triangles.push([poly[0], poly[k], poly[k + 1]]);
    }
}

fn parse_obj(path: &Path, data: &[u8]) -> Result<(TriangleMesh, MeshReport)> {
    let text = std::str::from_utf8(data)
        .map_err(|_| Error::Format(format!("{}: not UTF-8", path.display())))?;
    let mut mesh = TriangleMesh::default();
    let mut report = MeshReport::default();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        let mut tok = line.split_whitespace();
        let Some(kw) = tok.next() else { continue };
        match kw {
            "v" => {
                let xyz: Vec<f64> = tok
                    .take(3)
                    .map(|t| t.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| Error::parse(path, lineno + 1, format!("bad vertex: {e}")))?;
                if xyz.len() != 3 {
                    return Err(Error::parse(path, lineno + 1, "vertex needs 3 coordinates"));
                }
                mesh.vertices.push(Vector3::new(xyz[0], xyz[1], xyz[2]));
            }
            "f" => {
                let n = mesh.vertices.len() as i64;
                let poly = tok
                    .map(|t| {
                        let first = t.split('/').next().unwrap_or("");
                        let i: i64 = first.parse().map_err(|_| {
                            Error::parse(path, lineno + 1, format!("bad face index '{t}'"))
                        })?;
                        let resolved = if i < 0 { n + i } else { i - 1 };
                        if resolved < 0 || resolved >= n {
                            return Err(Error::parse(
                                path,
                                lineno + 1,
                                format!("face index {i} out of range"),
                            ));
                        }
                        Ok(resolved as u32)
                    })
                    .collect::<Result<Vec<_>>>()?;
                if poly.len() < 3 {
                    return Err(Error::parse(
                        path,
                        lineno + 1,
                        "face needs at least 3 vertices",
                    ));
                }
                fan(&poly, &mut mesh, &mut report);
            }
            k if k.starts_with('#') => {}
            "vn" | "vt" | "vp" | "o" | "g" | "s" | "usemtl" | "mtllib" => {}
            other => {
                return Err(Error::parse(
                    path,
                    lineno + 1,
                    format!("unsupported OBJ element '{other}'"),
                ));
            }
        }
    }
    Ok((mesh, report))
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum PlyFormat {
    Ascii,
    BinaryLe,
}

#[derive(Debug, Clone)]
enum PlyProp {
    Scalar { name: String, ty: String },
    List { count_ty: String, item_ty: String },
}

fn ply_size(ty: &str) -> Option<usize> {
    Some(match ty {
        "char" | "uchar" | "int8" | "uint8" => 1,
        "short" | "ushort" | "int16" | "uint16" => 2,
        "int" | "uint" | "int32" | "uint32" | "float" | "float32" => 4,
        "double" | "float64" => 8,
        _ => return None,
    })
}

fn ply_read_le(ty: &str, b: &[u8]) -> f64 {
    match ty {
        "char" | "int8" => b[0] as i8 as f64,
        "uchar" | "uint8" => b[0] as f64,
        "short" | "int16" => i16::from_le_bytes([b[0], b[1]]) as f64,
        "ushort" | "uint16" => u16::from_le_bytes([b[0], b[1]]) as f64,
        "int" | "int32" => i32::from_le_bytes(b[..4].try_into().expect("4 bytes")) as f64,
        "uint" | "uint32" => u32::from_le_bytes(b[..4].try_into().expect("4 bytes")) as f64,
        "float" | "float32" => f32::from_le_bytes(b[..4].try_into().expect("4 bytes")) as f64,
        _ => f64::from_le_bytes(b[..8].try_into().expect("8 bytes")),
    }
}

fn parse_ply(path: &Path, data: &[u8]) -> Result<(TriangleMesh, MeshReport)> {
    let fmt_err = |msg: &str| Error::Format(format!("{}: {msg}", path.display()));
    let end = data
        .windows(10)
        .position(|w| w == b"end_header")
        .ok_or_else(|| fmt_err("missing end_header"))?;
    let mut body = end + 10;
    if data.get(body) == Some(&b'\r') {
        body += 1;
    }
    if data.get(body) == Some(&b'\n') {
        body += 1;
    }
    let header = std::str::from_utf8(&data[..end]).map_err(|_| fmt_err("header is not UTF-8"))?;

    let mut format = None;
    let mut elements: Vec<(String, usize, Vec<PlyProp>)> = Vec::new();
    for (lineno, line) in header.lines().enumerate() {
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.as_slice() {
            ["ply"] | [] => {}
            ["comment", ..] | ["obj_info", ..] => {}
            ["format", "ascii", _] => format = Some(PlyFormat::Ascii),
            ["format", "binary_little_endian", _] => format = Some(PlyFormat::BinaryLe),
            ["format", other, ..] => {
                return Err(fmt_err(&format!("unsupported PLY format '{other}'")))
            }
            ["element", name, count] => {
                if *name != "vertex" && *name != "face" {
                    return Err(fmt_err(&format!("unsupported PLY element '{name}'")));
                }
                let count = count
                    .parse()
                    .map_err(|_| Error::parse(path, lineno + 1, "bad element count"))?;
                elements.push((name.to_string(), count, Vec::new()));
            }
            ["property", "list", count_ty, item_ty, _name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| fmt_err("property before element"))?;
                if ply_size(count_ty).is_none() || ply_size(item_ty).is_none() {
                    return Err(Error::parse(path, lineno + 1, "unknown PLY list type"));
                }
                el.2.push(PlyProp::List {
                    count_ty: count_ty.to_string(),
                    item_ty: item_ty.to_string(),
                });
            }
            ["property", ty, name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| fmt_err("property before element"))?;
                if ply_size(ty).is_none() {
                    return Err(Error::parse(
                        path,
                        lineno + 1,
                        format!("unknown PLY type '{ty}'"),
                    ));
                }
                el.2.push(PlyProp::Scalar {
                    name: name.to_string(),
                    ty: ty.to_string(),
                });
            }
            _ => {
                return Err(Error::parse(
                    path,
                    lineno + 1,
                    format!("unrecognised header line '{line}'"),
                ))
            }
        }
    }
    let format = format.ok_or_else(|| fmt_err("missing format line"))?;

    let mut mesh = TriangleMesh::default();
    let mut report = MeshReport::default();
    let mut pos = body;
    let ascii_text = if format == PlyFormat::Ascii {
        Some(std::str::from_utf8(&data[body..]).map_err(|_| fmt_err("ascii body is not UTF-8"))?)
    } else {
        None
    };
    let mut ascii_tokens = ascii_text.map(|t| t.split_whitespace());

    let mut next_value = |ty: &str| -> Result<f64> {
        match ascii_tokens.as_mut() {
            Some(tokens) => tokens
                .next()
                .ok_or_else(|| fmt_err("ascii body truncated"))?
                .parse::<f64>()
                .map_err(|_| fmt_err("bad ascii value")),
            None => {
                let n = ply_size(ty).expect("validated type");
                let bytes = data
                    .get(pos..pos + n)
                    .ok_or_else(|| fmt_err("binary body truncated"))?;
                pos += n;
                Ok(ply_read_le(ty, bytes))
            }
        }
    };

    for (name, count, props) in &elements {
        for _ in 0..*count {
            let mut xyz = [0.0; 3];
            let mut poly = Vec::new();
            for prop in props {
                match prop {
                    PlyProp::Scalar { name: pname, ty } => {
                        let v = next_value(ty)?;
                        match pname.as_str() {
                            "x" => xyz[0] = v,
                            "y" => xyz[1] = v,
                            "z" => xyz[2] = v,
                            _ => {}
                        }
                    }
                    PlyProp::List { count_ty, item_ty } => {
                        let n = next_value(count_ty)? as usize;
                        for _ in 0..n {
                            poly.push(next_value(item_ty)? as u32);
                        }
                    }
                }
            }
            if name == "vertex" {
                mesh.vertices.push(Vector3::from(xyz));
            } else {
                if poly.len() < 3 {
                    return Err(fmt_err("face with fewer than 3 vertices"));
                }
                fan(&poly, &mut mesh, &mut report);
            }
        }
    }
    Ok((mesh, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, data: &[u8]) -> std::path::PathBuf {
        let p = dir.join(name);
        fs::write(&p, data).unwrap();
        p
    }

    #[test]
    fn single_triangle_obj() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "t.obj",
            b"# tri\nv 0 0 0\nv 1 0 0\nv 0 1 0\nvn 0 0 1\nf 1//1 2//1 3//1\n",
        );
        let (mesh, report) = load_mesh(&p).unwrap();
        assert_eq!(mesh.vertices.len(), 3);
        assert_eq!(mesh.triangles, vec![[0, 1, 2]]);
        assert_eq!(report, MeshReport::default());
    }

    #[test]
    fn quad_cube_becomes_twelve_triangles() {
        let dir = tempfile::tempdir().unwrap();
        let obj = b"v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nv 0 0 1\nv 1 0 1\nv 1 1 1\nv 0 1 1\n\
f 1 4 3 2\nf 5 6 7 8\nf 1 2 6 5\nf 2 3 7 6\nf 3 4 8 7\nf 4 1 5 8\n";
        let p = write(dir.path(), "cube.obj", obj);
        let (mesh, report) = load_mesh(&p).unwrap();
        assert_eq!(mesh.triangles.len(), 12);
        assert_eq!(report.triangulated_polygons, 6);
    }

    #[test]
    fn zero_area_faces_are_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "d.obj",
            b"v 0 0 0\nv 1 0 0\nv 0 1 0\nv 2 0 0\nf 1 2 3\nf 1 2 4\n",
        );
        let (mesh, report) = load_mesh(&p).unwrap();
        assert_eq!(mesh.triangles.len(), 1);
        assert_eq!(report.dropped_degenerate, 1);
    }

    #[test]
    fn negative_obj_indices_are_relative() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "n.obj",
            b"v 0 0 0\nv 1 0 0\nv 0 1 0\nf -3 -2 -1\n",
        );
        let (mesh, _) = load_mesh(&p).unwrap();
        assert_eq!(mesh.triangles, vec![[0, 1, 2]]);
    }

    #[test]
    fn unsupported_obj_elements_error_with_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "l.obj", b"v 0 0 0\nv 1 0 0\nl 1 2\n");
        match load_mesh(&p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn binary_ply_matches_ascii_ply() {
        let dir = tempfile::tempdir().unwrap();
        let ascii = b"ply\nformat ascii 1.0\nelement vertex 4\nproperty float x\nproperty float y\nproperty float z\n\
property uchar red\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n\
0 0 0 255\n1 0 0 255\n1 1 0 255\n0 1 0 255\n4 0 1 2 3\n";
        let pa = write(dir.path(), "a.ply", ascii);
        let mut bin = b"ply\nformat binary_little_endian 1.0\nelement vertex 4\nproperty float x\nproperty float y\n\
property float z\nproperty uchar red\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n"
            .to_vec();
        for v in [
            [0.0f32, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [1.0, 1.0, 0.0],
            [0.0, 1.0, 0.0],
        ] {
            for c in v {
                bin.extend_from_slice(&c.to_le_bytes());
            }
            bin.push(255);
        }
        bin.push(4);
        for i in [0i32, 1, 2, 3] {
            bin.extend_from_slice(&i.to_le_bytes());
        }
        let pb = write(dir.path(), "b.ply", &bin);
        let (a, ra) = load_mesh(&pa).unwrap();
        let (b, _) = load_mesh(&pb).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.triangles.len(), 2);
        assert_eq!(ra.triangulated_polygons, 1);
    }

    #[test]
    fn other_ply_elements_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "e.ply",
            b"ply\nformat ascii 1.0\nelement edge 1\nproperty int vertex1\nend_header\n0\n",
        );
        assert!(matches!(load_mesh(&p), Err(Error::Format(_))));
    }

    #[test]
    fn obj_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let sphere = TriangleMesh::uv_sphere(Vector3::new(0.0, 0.0, 3.0), 1.0, 8, 12);
        let p = dir.path().join("s.obj");
        sphere.write_obj(&p).unwrap();
        let (back, report) = load_mesh(&p).unwrap();
        assert_eq!(back.triangles, sphere.triangles);
        assert_eq!(report.dropped_degenerate, 0);
    }

    #[test]
    fn uv_sphere_is_closed_and_on_radius() {
        let m = TriangleMesh::uv_sphere(Vector3::zeros(), 2.0, 10, 16);
        assert_eq!(m.triangles.len(), 2 * 16 * (10 - 1));
        assert!(m.vertices.iter().all(|v| (v.norm() - 2.0).abs() < 1e-12));
        let total: f64 = (0..m.triangles.len()).map(|i| m.area(i)).sum();
        assert!(total < 4.0 * std::f64::consts::PI * 4.0);
        assert!(total > 0.9 * 4.0 * std::f64::consts::PI * 4.0);
    }
}
