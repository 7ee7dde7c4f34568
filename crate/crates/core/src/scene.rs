//! Scene files: camera poses with their ray bundles, used for ground truth
//! and predictions.
//!
//! ```json
//! {"intrinsics": {...}, "poses": [{"rotation": [[...]], "translation": [...]}],
//!  "bundles": [{"rows": 8, "cols": 8, "origins": [...], "directions": [...]}]}
//! ```
//!
//! `intrinsics` is optional; unknown top-level keys (such as run metadata)
//! are ignored.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ray_camera::{bundle_from_camera, Intrinsics, PixelDistortion, Pose, RayBundle};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intrinsics: Option<Intrinsics>,
    pub poses: Vec<Pose>,
    pub bundles: Vec<RayBundle>,
}

impl Scene {
    pub fn new(intrinsics: Option<Intrinsics>, poses: Vec<Pose>, bundles: Vec<RayBundle>) -> Result<Self> {
        let s = Scene {
            intrinsics,
            poses,
            bundles,
        };
        s.validate()?;
        Ok(s)
    }

    /// One bundle per pose from a shared camera and optional aberration.
    pub fn from_camera(
        k: &Intrinsics,
        poses: Vec<Pose>,
        distortion: Option<&dyn PixelDistortion>,
        rows: usize,
        cols: usize,
        w: u32,
        h: u32,
    ) -> Result<Self> {
        let bundles = poses
            .iter()
            .map(|p| bundle_from_camera(k, p, distortion, rows, cols, w, h))
            .collect::<Result<_>>()?;
        Scene::new(Some(*k), poses, bundles)
    }

    pub fn validate(&self) -> Result<()> {
        if self.poses.is_empty() {
            return Err(Error::param("scene has no cameras"));
        }
        if self.poses.len() != self.bundles.len() {
            return Err(Error::param(format!(
                "scene has {} poses but {} bundles",
                self.poses.len(),
                self.bundles.len()
            )));
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Load(format!("cannot read {}: {e}", path.display())))?;
        let s: Scene = serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        s.validate()?;
        Ok(s)
    }
}
