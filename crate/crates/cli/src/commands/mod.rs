pub mod eval;
pub mod render;
pub mod synth;
pub mod train;
pub mod verify;

/// File name of the `n`-th rendered frame.
pub fn frame_name(n: usize) -> String {
    format!("frame_{n:06}.png")
}
