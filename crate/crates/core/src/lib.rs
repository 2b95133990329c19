//! Multi-view adversarial texture optimization.
//!
//! The crate renders a textured mesh from many orbital viewpoints with a small
//! software rasterizer, scores each view with a frozen convolutional surrogate
//! detector, and pushes the suppression gradient back into texture space. Two
//! gradient operators sit between backpropagation and the optimizer:
//!
//! * [`ngc::calibrate`] copies every sampled texel's gradient to unsampled
//!   trainable texels whose nearest sampled neighbour lies within a search
//!   radius, so sparse far-distance views still produce locally continuous
//!   updates.
//! * [`lpgd::decorrelate`] sorts the per-view gradients of a minibatch by
//!   descending loss, Gram-Schmidt orthogonalizes them in that order and
//!   averages the result.
//!
//! [`optim::train`] wires everything into an Adam loop with switches for each
//! operator.

pub mod error;
pub mod lpgd;
pub mod ngc;
pub mod optim;
pub mod ppm;
pub mod renderer;
pub mod scene;
pub mod surrogate;

pub use error::{Error, Result};
pub use lpgd::{LpgdConfig, ViewGrad};
pub use ngc::{SearchRadius, TexelIndex};
pub use optim::{AdamState, StepMetrics, TrainConfig};
pub use renderer::{Background, GradField, Image, SampleMap, Texture, TextureDims, TrainableMask};
pub use scene::{Camera, CameraPose, Mesh, PoseGrid};
pub use surrogate::Surrogate;
