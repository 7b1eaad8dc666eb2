//! Flow scaling, backward warping, brightness consistency and
//! many-to-many splatting with reliability-weighted fusion.

pub mod flow;
pub mod frame;
pub mod fusion;
pub mod reference;
pub mod splat;

pub use flow::{
    backward_warp, backward_warp_graph, brightness_consistency, brightness_consistency_graph,
    pixel_grid, resize_bilinear, scale_flows, temporal_relevance, Source,
};
pub use frame::{FlowField, Frame, MultiFlowSet};
pub use fusion::{
    fill_holes, m2m_splat_fuse, m2m_splat_fuse_graph, m2m_splat_fuse_with, splat_direction,
    splat_error, splat_error_graph, FuseVars, FusionConfig, HolePolicy, SplatOutput,
};
pub use reference::reference_splat_fuse;
pub use splat::{
    splat, splat_graph, splat_macs, SplatForward, SplatInfo, SplatParams, SplatSource,
    SplatSourceVars,
};
