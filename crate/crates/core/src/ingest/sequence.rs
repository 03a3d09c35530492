//! On-disk RGB-D sequences: TUM association layout and the ICL-NUIM
//! numbered-file layout.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use nalgebra::{Matrix3, Vector3};

use super::{CameraIntrinsics, DepthMap, Pose};
use crate::render::Image;
use crate::{Error, Result};

/// Maximum timestamp gap (s) when matching a frame to a trajectory entry.
pub const POSE_MATCH_TOLERANCE: f64 = 0.02;

pub const ASSOCIATIONS_FILE: &str = "associations.txt";
pub const TRAJECTORY_FILE: &str = "groundtruth.txt";
pub const INTRINSICS_FILE: &str = "intrinsics.txt";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SequenceFormat {
    TumAssoc,
    IclNuim,
}

impl FromStr for SequenceFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tum" | "tum_assoc" => Ok(SequenceFormat::TumAssoc),
            "icl" | "icl_nuim" => Ok(SequenceFormat::IclNuim),
            other => Err(Error::Config(format!(
                "unknown sequence format '{other}' (expected tum_assoc or icl_nuim)"
            ))),
        }
    }
}

impl fmt::Display for SequenceFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SequenceFormat::TumAssoc => "tum_assoc",
            SequenceFormat::IclNuim => "icl_nuim",
        })
    }
}

#[derive(Debug, Clone)]
pub struct Frame {
    /// Position in the sorted frame list, before skipping.
    pub index: usize,
    pub timestamp: f64,
    pub depth: DepthMap,
    pub color: Image,
    pub intrinsics: CameraIntrinsics,
    pub pose: Pose,
}

#[derive(Debug, Clone)]
struct FrameEntry {
    index: usize,
    timestamp: f64,
    depth_path: PathBuf,
    color_path: PathBuf,
    pose: Pose,
}

/// Lazily loads frames in timestamp order.
#[derive(Debug, Clone)]
pub struct SequenceReader {
    entries: Vec<FrameEntry>,
    intrinsics: CameraIntrinsics,
    cursor: usize,
    pacing: Option<Duration>,
}

impl SequenceReader {
    pub fn intrinsics(&self) -> &CameraIntrinsics {
        &self.intrinsics
    }

    /// Number of frames this reader will yield in total.
    pub fn frame_count(&self) -> usize {
        self.entries.len()
    }

    /// Sleep this long before yielding each frame, to mimic a live stream.
    pub fn with_pacing(mut self, pacing: Option<Duration>) -> Self {
        self.pacing = pacing;
        self
    }

    fn load(&self, e: &FrameEntry) -> Result<Frame> {
        let depth = DepthMap::read_png(&e.depth_path, self.intrinsics.depth_scale)?;
        let color = Image::read_png(&e.color_path)?;
        Ok(Frame {
            index: e.index,
            timestamp: e.timestamp,
            depth,
            color,
            intrinsics: self.intrinsics,
            pose: e.pose,
        })
    }
}

impl Iterator for SequenceReader {
    type Item = Result<Frame>;

    fn next(&mut self) -> Option<Self::Item> {
        let entry = self.entries.get(self.cursor)?;
        self.cursor += 1;
        if let Some(p) = self.pacing {
            std::thread::sleep(p);
        }
        Some(self.load(entry))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = self.entries.len() - self.cursor;
        (n, Some(n))
    }
}

/// Opens the sequence at `path`, keeping frames whose sorted index is a
/// multiple of `skip`. Frames without a matching pose are dropped with a
/// warning.
pub fn read_sequence(path: &Path, format: SequenceFormat, skip: usize) -> Result<SequenceReader> {
    if skip == 0 {
        return Err(Error::Config("skip must be at least 1".into()));
    }
    if !path.is_dir() {
        return Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "sequence directory not found"),
        ));
    }
    let (frames, intrinsics) = match format {
        SequenceFormat::TumAssoc => tum_frames(path)?,
        SequenceFormat::IclNuim => icl_frames(path)?,
    };
    let entries = frames
        .into_iter()
        .filter(|(idx, ..)| idx % skip == 0)
        .filter_map(
            |(index, timestamp, depth_path, color_path, pose)| match pose {
                Some(pose) => Some(FrameEntry {
                    index,
                    timestamp,
                    depth_path,
                    color_path,
                    pose,
                }),
                None => {
                    log::warn!("frame {index} (t={timestamp:.6}) has no pose; skipped");
                    None
                }
            },
        )
        .collect();
    Ok(SequenceReader {
        entries,
        intrinsics,
        cursor: 0,
        pacing: None,
    })
}

type RawFrame = (usize, f64, PathBuf, PathBuf, Option<Pose>);

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Non-empty, non-comment lines with their 1-based numbers.
fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn parse_f64(path: &Path, line: usize, tok: &str) -> Result<f64> {
    tok.parse::<f64>()
        .map_err(|_| Error::parse(path, line, format!("expected a number, found '{tok}'")))
}

/// Reads optional `key = value` intrinsics; missing keys keep their default.
pub fn read_intrinsics(path: &Path, defaults: CameraIntrinsics) -> Result<CameraIntrinsics> {
    let mut k = defaults;
    if !path.exists() {
        return Ok(k);
    }
    let text = read_text(path)?;
    for (line, l) in data_lines(&text) {
        let (key, value) = l
            .split_once('=')
            .ok_or_else(|| Error::parse(path, line, "expected key = value"))?;
        let v = parse_f64(path, line, value.trim())?;
        match key.trim() {
            "fx" => k.fx = v,
            "fy" => k.fy = v,
            "cx" => k.cx = v,
            "cy" => k.cy = v,
            "width" => k.width = v as u32,
            "height" => k.height = v as u32,
            "depth_scale" => k.depth_scale = v,
            other => {
                return Err(Error::parse(
                    path,
                    line,
                    format!("unknown intrinsics key '{other}'"),
                ))
            }
        }
    }
    k.validate()?;
    Ok(k)
}

pub fn write_intrinsics(path: &Path, k: &CameraIntrinsics) -> Result<()> {
    let text = format!(
        "fx = {}\nfy = {}\ncx = {}\ncy = {}\nwidth = {}\nheight = {}\ndepth_scale = {}\n",
        k.fx, k.fy, k.cx, k.cy, k.width, k.height, k.depth_scale
    );
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Parses `timestamp tx ty tz qx qy qz qw` lines, sorted by timestamp.
pub fn read_tum_trajectory(path: &Path) -> Result<Vec<(f64, Pose)>> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (line, l) in data_lines(&text) {
        let tok: Vec<&str> = l.split_whitespace().collect();
        if tok.len() != 8 {
            return Err(Error::parse(
                path,
                line,
                format!("expected 8 fields, found {}", tok.len()),
            ));
        }
        let v = tok
            .iter()
            .map(|t| parse_f64(path, line, t))
            .collect::<Result<Vec<_>>>()?;
        let pose = Pose::from_tum([v[1], v[2], v[3]], [v[4], v[5], v[6], v[7]])
            .map_err(|e| Error::parse(path, line, e.to_string()))?;
        out.push((v[0], pose));
    }
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(out)
}

fn nearest_pose(traj: &[(f64, Pose)], t: f64) -> Option<Pose> {
    let i = traj.partition_point(|(ts, _)| *ts < t);
    [i.checked_sub(1), Some(i)]
        .into_iter()
        .flatten()
        .filter_map(|j| traj.get(j))
        .filter(|(ts, _)| (ts - t).abs() <= POSE_MATCH_TOLERANCE)
        .min_by(|a, b| (a.0 - t).abs().total_cmp(&(b.0 - t).abs()))
        .map(|(_, p)| *p)
}

fn tum_frames(dir: &Path) -> Result<(Vec<RawFrame>, CameraIntrinsics)> {
    let intrinsics = read_intrinsics(&dir.join(INTRINSICS_FILE), CameraIntrinsics::default())?;
    let traj = read_tum_trajectory(&dir.join(TRAJECTORY_FILE))?;
    let assoc_path = dir.join(ASSOCIATIONS_FILE);
    let text = read_text(&assoc_path)?;
    let mut rows = Vec::new();
    for (line, l) in data_lines(&text) {
        let tok: Vec<&str> = l.split_whitespace().collect();
        if tok.len() != 4 {
            return Err(Error::parse(
                &assoc_path,
                line,
                format!("expected 'ts depth ts color', found {} fields", tok.len()),
            ));
        }
        let t_depth = parse_f64(&assoc_path, line, tok[0])?;
        parse_f64(&assoc_path, line, tok[2])?;
        rows.push((t_depth, dir.join(tok[1]), dir.join(tok[3])));
    }
    rows.sort_by(|a, b| a.0.total_cmp(&b.0));
    let frames = rows
        .into_iter()
        .enumerate()
        .map(|(i, (t, d, c))| (i, t, d, c, nearest_pose(&traj, t)))
        .collect();
    Ok((frames, intrinsics))
}

/// ICL-NUIM living-room intrinsics (640×480, 5000 units per meter).
pub fn icl_default_intrinsics() -> CameraIntrinsics {
    CameraIntrinsics {
        fx: 481.2,
        fy: 480.0,
        cx: 319.5,
        cy: 239.5,
        width: 640,
        height: 480,
        depth_scale: 1.0 / 5000.0,
    }
}

/// Converts a POV-Ray camera (position, look direction, up vector) into a
/// camera-to-world pose with x right, y down, z forward.
pub fn pov_to_pose(pos: Vector3<f64>, dir: Vector3<f64>, up: Vector3<f64>) -> Result<Pose> {
    let z = dir
        .try_normalize(1e-12)
        .ok_or_else(|| Error::Domain("POV camera direction is zero".into()))?;
    let y = -(up - z * up.dot(&z))
        .try_normalize(1e-12)
        .ok_or_else(|| Error::Domain("POV up vector is parallel to the view direction".into()))?;
    let x = y.cross(&z);
    Pose::new(Matrix3::from_columns(&[x, y, z]), pos)
}

/// Parses a POV-Ray camera description with `cam_pos`, `cam_dir` and
/// `cam_up` entries such as `cam_pos = [0.79, 1.3, 1.46]';`.
pub fn read_pov_camera(path: &Path) -> Result<Pose> {
    let text = read_text(path)?;
    let mut fields: [Option<Vector3<f64>>; 3] = [None; 3];
    for (line, l) in data_lines(&text) {
        let Some((key, value)) = l.split_once('=') else {
            continue;
        };
        let slot = match key.trim() {
            "cam_pos" => 0,
            "cam_dir" => 1,
            "cam_up" => 2,
            _ => continue,
        };
        let inner = value
            .trim()
            .trim_end_matches(';')
            .trim_end_matches('\'')
            .trim()
            .trim_start_matches('[')
            .trim_end_matches(']');
        let v = inner
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(|t| parse_f64(path, line, t))
            .collect::<Result<Vec<_>>>()?;
        if v.len() != 3 {
            return Err(Error::parse(path, line, "expected a 3-vector"));
        }
        fields[slot] = Some(Vector3::new(v[0], v[1], v[2]));
    }
    match fields {
        [Some(pos), Some(dir), Some(up)] => pov_to_pose(pos, dir, up),
        _ => Err(Error::Format(format!(
            "{}: needs cam_pos, cam_dir and cam_up",
            path.display()
        ))),
    }
}

fn numbered_files(dir: &Path, ext: &str) -> Result<Vec<(usize, PathBuf)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some(ext) {
            continue;
        }
        if let Some(n) = path
            .file_stem()
            .and_then(|s| s.to_str())
            .and_then(|s| s.parse().ok())
        {
            out.push((n, path));
        }
    }
    out.sort();
    Ok(out)
}

/// `depth/{i}.png`, `rgb/{i}.png`, and either a TUM-format `*.freiburg`
/// trajectory whose timestamps are frame numbers, or per-frame POV-Ray
/// camera files `*_{i}.txt`.
fn icl_frames(dir: &Path) -> Result<(Vec<RawFrame>, CameraIntrinsics)> {
    let intrinsics = read_intrinsics(&dir.join(INTRINSICS_FILE), icl_default_intrinsics())?;
    let depth = numbered_files(&dir.join("depth"), "png")?;
    let rgb: std::collections::BTreeMap<usize, PathBuf> = numbered_files(&dir.join("rgb"), "png")?
        .into_iter()
        .collect();

    let mut root: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    root.sort();
    let freiburg = root
        .iter()
        .find(|p| p.extension().and_then(|e| e.to_str()) == Some("freiburg"));
    let traj = match freiburg {
        Some(p) => Some(read_tum_trajectory(p)?),
        None => None,
    };
    let pov_files: std::collections::BTreeMap<usize, &PathBuf> = root
        .iter()
        .filter(|p| p.extension().and_then(|e| e.to_str()) == Some("txt"))
        .filter_map(|p| {
            let stem = p.file_stem()?.to_str()?;
            let n = stem.rsplit('_').next()?.parse().ok()?;
            stem.contains('_').then_some((n, p))
        })
        .collect();
    if traj.is_none() && pov_files.is_empty() {
        return Err(Error::Format(format!(
            "{}: no *.freiburg trajectory or POV-Ray camera files",
            dir.display()
        )));
    }

    let mut frames = Vec::new();
    for (i, (n, depth_path)) in depth.into_iter().enumerate() {
        let Some(color_path) = rgb.get(&n) else {
            log::warn!("ICL frame {n}: no matching rgb image; skipped");
            continue;
        };
        let pose = match &traj {
            Some(t) => nearest_pose(t, n as f64),
            None => match pov_files.get(&n) {
                Some(p) => Some(read_pov_camera(p)?),
                None => None,
            },
        };
        frames.push((i, n as f64, depth_path, color_path.clone(), pose));
    }
    Ok((frames, intrinsics))
}

/// Writes frames in the TUM association layout read by [`read_sequence`]:
/// `depth/NNNNNN.png`, `rgb/NNNNNN.png`, association, trajectory and
/// intrinsics files. Timestamps advance by 1/30 s.
pub fn write_tum_sequence(
    dir: &Path,
    k: &CameraIntrinsics,
    frames: &[(DepthMap, Image, Pose)],
) -> Result<()> {
    for sub in ["depth", "rgb"] {
        fs::create_dir_all(dir.join(sub)).map_err(|e| Error::io(dir.join(sub), e))?;
    }
    let mut assoc = String::new();
    let mut traj = String::from("# timestamp tx ty tz qx qy qz qw\n");
    for (i, (depth, color, pose)) in frames.iter().enumerate() {
        let ts = format!("{:.6}", i as f64 / 30.0);
        let depth_rel = format!("depth/{i:06}.png");
        let rgb_rel = format!("rgb/{i:06}.png");
        depth.write_png(&dir.join(&depth_rel), k.depth_scale)?;
        color.write_png(&dir.join(&rgb_rel))?;
        assoc.push_str(&format!("{ts} {depth_rel} {ts} {rgb_rel}\n"));
        let (t, q) = pose.to_tum();
        traj.push_str(&format!(
            "{ts} {} {} {} {} {} {} {}\n",
            t[0], t[1], t[2], q[0], q[1], q[2], q[3]
        ));
    }
    let write = |name: &str, text: &str| {
        fs::write(dir.join(name), text).map_err(|e| Error::io(dir.join(name), e))
    };
    write(ASSOCIATIONS_FILE, &assoc)?;
    write(TRAJECTORY_FILE, &traj)?;
    write_intrinsics(&dir.join(INTRINSICS_FILE), k)
}
