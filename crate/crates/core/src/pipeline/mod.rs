//! File formats, metrics, cost accounting, run manifests and the CLI driver.

pub mod checks;
pub mod cli;
pub mod cost;
pub mod flo;
pub mod image_io;
pub mod interpolate;
pub mod manifest;
pub mod metrics;

pub use cost::CostLedger;
pub use flo::{decode_flo, encode_flo, read_flo, write_flo, FLO_MAGIC};
pub use image_io::{decode_image, encode_image, read_image, write_image, ImageKind};
pub use interpolate::{
    build_manifest, frame_file_name, interpolate, interpolate_frames, FrameResult, Interpolation,
    InterpolationInputs, InterpolationRequest, InterpolationSettings, Prepared, SsrSettings, Stage,
    TimeSpec, DEFAULT_N_FLOWS, MANIFEST_FILE,
};
pub use manifest::RunManifest;
pub use metrics::{luma, mse, psnr, ssim, PSNR_CAP_DB};
