//! Many-to-many splatting frame interpolation.
//!
//! The crate is organised bottom-up:
//!
//! - [`diffcore`]: dense f64 tensors, a reverse-mode tape, gradient checking,
//!   Adam, and the parameter container format.
//! - [`warp`]: flow scaling, backward warping, brightness consistency and the
//!   differentiable many-to-many splat with reliability-weighted fusion.
//! - [`lowrank`]: rank-1 composition feature modulation.
//! - [`mixernet`]: window MLP-mixer blocks, Swin-Mixer blocks, context
//!   pyramids and the patch refinement network.
//! - [`ssr`]: error targets, losses, patch selection and selective refinement.
//! - [`pipeline`]: file formats, metrics, the cost ledger, manifests and the CLI.

pub mod diffcore;
pub mod error;
pub mod lowrank;
pub mod mixernet;
pub mod par;
pub mod pipeline;
pub mod ssr;
pub mod warp;

pub use error::{Error, Result};
