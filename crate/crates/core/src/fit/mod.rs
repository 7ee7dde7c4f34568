//! Pinhole recovery from ray bundles and point-set alignment.

mod pinhole;
mod rays;
mod similarity;

pub use pinhole::{fit_pinhole, FitResult};
pub use rays::intersect_rays;
pub use similarity::{fit_similarity, SimilarityTransform};
