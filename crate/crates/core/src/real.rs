use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating point type the models are generic over.
///
/// Training and rendering run in `f32`; gradient checks run in `f64`.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Sum + Send + Sync + 'static
{
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite float converts to f64")
    }

    /// Little-endian 32-bit encoding used by checkpoint blobs.
    fn to_le_f32(self) -> [u8; 4] {
        (self.as_f64() as f32).to_le_bytes()
    }
}

impl Real for f32 {}
impl Real for f64 {}
