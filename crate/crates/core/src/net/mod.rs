//! Dense networks with reverse-mode gradients, the adaptive-moment optimizer,
//! the Gaussian policy head and the bottleneck error network.

mod adam;
mod bottleneck;
mod dense;
mod gaussian;
pub(crate) mod init;
mod normalizer;

pub use adam::{Adam, AdamConfig};
pub use bottleneck::{BottleneckNet, BottleneckTape};
pub use dense::{Activation, FeedforwardNet, Gradients, Layer, Tape};
pub use gaussian::{GaussianPolicyHead, LOG_STD_INIT, LOG_STD_MAX, LOG_STD_MIN, POLICY_OUTPUT_GAIN};
pub use normalizer::RunningNorm;
