//! Dataset ingestion: camera models, depth maps, RGB-D sequences, meshes,
//! synthetic scenes, and back-projection of frames into colored point
//! samples.

mod camera;
mod depth;
mod mesh;
mod sequence;
mod synth;
mod unproject;

pub use camera::{CameraIntrinsics, Pose};
pub use depth::DepthMap;
pub use mesh::{load_mesh, MeshReport, TriangleMesh};
pub use sequence::{
    icl_default_intrinsics, pov_to_pose, read_intrinsics, read_pov_camera, read_sequence,
    read_tum_trajectory, write_intrinsics, write_tum_sequence, Frame, SequenceFormat,
    SequenceReader, ASSOCIATIONS_FILE, INTRINSICS_FILE, POSE_MATCH_TOLERANCE, TRAJECTORY_FILE,
};
pub use synth::{
    cone_direction, cone_trajectory, ring_trajectory, synth_scene_frames, Reflectance, Surface,
    SurfaceHit, SynthFrame, SynthScene, Texture,
};
pub use unproject::{is_valid_depth, unproject_frame, ColoredPointBatch, MAX_VALID_DEPTH};
