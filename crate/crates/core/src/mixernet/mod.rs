//! Window MLP-mixer blocks, context pyramids and the patch refinement network.

pub mod mixer;
pub mod prn;
pub mod pyramid;
pub mod window;

pub use mixer::{
    channel_mix, smb_forward, token_mix, w_mixer_block, zero_mixer_outputs, MixerDims, SmbDims,
};
pub use prn::{prn_refine_patch, refine_patch, PatchPyramids, PrnConfig};
pub use pyramid::{
    build_context_pyramid, build_context_pyramid_graph, crop_tensor, init_pyramid_encoder,
    splat_pyramid, FeaturePyramid, LEVELS,
};
pub use window::{
    window_merge, window_merge_graph, window_partition, window_partition_graph, WindowSpec,
};
