//! Novel-view rendering and image metrics.

mod angle;
mod bvh;
mod image;
mod metrics;
mod view;

pub use self::angle::{
    angle_filtered_eval, AngleAccumulator, AngleBucket, AngleMode, AngleReport, EvalFrame,
    TrainedDirections, DEFAULT_THRESHOLDS_DEG,
};
pub use self::bvh::{
    brute_force_intersect, build_bvh, intersect_triangle, raycast, Aabb, Bvh, BvhNode, BvhNodeKind,
    RayHit, RaycastResult, MAX_LEAF_SIZE,
};
pub use self::image::Image;
pub use self::metrics::{
    gaussian_taps, mse, psnr, psnr_from_mse, ssim, PSNR_CAP, SSIM_K1, SSIM_K2, SSIM_SIGMA,
    SSIM_WINDOW,
};
pub use self::view::{render_view, RenderedView, BACKGROUND};
