//! Aberration models `D_ζ` and the image-space machinery around them.
//!
//! Convention: `D_ζ` maps an observed pixel to its ideal pinhole location.
//! Rendering a distorted view therefore remaps with the forward displacement
//! as a backward flow, and undistortion remaps with the inverse.

mod field;
mod flow;
mod profile;
mod remap;

pub use field::{field_from_profile, invert_field, invert_point, sample_field, DistortionField};
pub use flow::{flow_from_rays, patch_flow_from_rays, FlowMap, PatchFlow};
pub use profile::{
    apply_profile, default_normalization_radius, distortion_percent, profile_displacement, ParametricProfile,
    ProfileKind,
};
pub use remap::remap_image;
