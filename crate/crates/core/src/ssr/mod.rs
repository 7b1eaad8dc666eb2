//! Spatial selective refinement: error targets and losses, max-pool
//! downsampling, top-p patch selection, crop/paste and ratio sweeps.

pub mod error_map;
pub mod losses;
pub mod refine;
pub mod select;

pub use error_map::ErrorMap;
pub use losses::{
    charbonnier, charbonnier_value, err_loss, err_loss_value, error_target, CHARBONNIER_EPS,
};
pub use refine::{
    crop_patches, paste_patches, refine_selected, sweep_ratio, write_sweep_csv, OracleRefiner,
    PatchRefiner, PrnRefiner, Refined, SweepRow, SWEEP_HEADER,
};
pub use select::{downsample_error, select_top_p, selection_count, PatchSelection};
