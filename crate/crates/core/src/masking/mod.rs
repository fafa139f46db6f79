//! Emotional masking: intensity-ranked frame masks for the transformer
//! encoder, tap masks for the masked convolution encoder, and the
//! uniform-random baseline.

mod frames;
mod kernel;

pub use frames::{
    apply_mask_plan, assign_actions, ems_mask_plan, extend_consecutive, mask_budget, rank_frames, select_topk_frames,
    uniform_mask_plan, ActionRatios, MaskAction, MaskConfig, MaskEntry, MaskPlan, TieRule,
};
pub use kernel::{
    build_kernel_mask, center_param_for_mask_size, combine_kernel_masks, ems_kernel_position, KernelMaskSpec,
};
