//! Raw burst super-resolution.
//!
//! The crate models a raw burst as `y_i = M H S_i x + η_i` (warp, bilinear
//! downsample, RGGB mosaic, heteroskedastic noise) and reconstructs `x` with
//! a majorization-minimization proximal iteration. Module map:
//!
//! - [`tensor`], [`io`]: image containers and file formats
//! - [`forward`]: the degradation operators and their exact adjoints
//! - [`synth`]: synthetic raw bursts from sRGB images
//! - [`align`]: ECC registration of a burst
//! - [`prior`]: proximal operators for the regularizer
//! - [`solver`]: the reconstruction iteration
//! - [`metrics`]: PSNR / SSIM in linear space
//! - [`selftest`]: operator consistency checks

pub mod align;
pub mod error;
pub mod forward;
pub mod io;
pub mod metrics;
pub mod prior;
pub mod scene;
pub mod selftest;
pub mod solver;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
pub use forward::{AffineWarp, DegradationConfig};
pub use tensor::{Burst, PackedRaw, Tensor3};
