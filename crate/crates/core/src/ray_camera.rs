//! Ray bundles and the conversions around them.
//!
//! Pixel coordinates are continuous: pixel `(col, row)` covers the square
//! `[col, col + 1) x [row, row + 1)`, so its center sits at `(col + 0.5, row + 0.5)`.
//!
//! A [`Pose`] maps camera-frame rays into the world: directions are rotated by
//! `Rᵀ`, origins get the full map `Rᵀ·o + t`. The camera center in world
//! coordinates is therefore `t`.

use nalgebra::{Matrix3, UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{standard_normal, SeededRng};

const ROTATION_TOL: f64 = 1e-9;

/// Pinhole intrinsics. `skew` is the `K[0][1]` entry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    #[serde(default)]
    pub skew: f64,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        let k = Intrinsics {
            fx,
            fy,
            cx,
            cy,
            skew: 0.0,
        };
        k.validate()?;
        Ok(k)
    }

    /// Shared focal length with the principal point at the image center.
    pub fn centered(f: f64, image_w: u32, image_h: u32) -> Result<Self> {
        Self::new(f, f, image_w as f64 / 2.0, image_h as f64 / 2.0)
    }

    pub fn validate(&self) -> Result<()> {
        let vals = [self.fx, self.fy, self.cx, self.cy, self.skew];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("intrinsics must be finite"));
        }
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::param(format!(
                "focal lengths must be positive (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        Ok(())
    }

    pub fn principal_point(&self) -> Vector2<f64> {
        Vector2::new(self.cx, self.cy)
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            self.fx, self.skew, self.cx, //
            0.0, self.fy, self.cy, //
            0.0, 0.0, 1.0,
        )
    }

    /// `K⁻¹·(u, v, 1)`, not normalized.
    pub fn unproject(&self, pixel: &Vector2<f64>) -> Vector3<f64> {
        let y = (pixel.y - self.cy) / self.fy;
        let x = (pixel.x - self.cx - self.skew * y) / self.fx;
        Vector3::new(x, y, 1.0)
    }

    /// Projects a camera-frame point; `None` when it is not in front of the camera.
    pub fn project(&self, p: &Vector3<f64>) -> Option<Vector2<f64>> {
        if p.z <= 0.0 {
            return None;
        }
        let x = p.x / p.z;
        let y = p.y / p.z;
        Some(Vector2::new(
            self.fx * x + self.skew * y + self.cx,
            self.fy * y + self.cy,
        ))
    }
}

/// Camera pose. `rotation` takes world directions into the camera frame,
/// `translation` is the camera center in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PoseRepr", into = "PoseRepr")]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

#[derive(Serialize, Deserialize)]
struct PoseRepr {
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
}

impl TryFrom<PoseRepr> for Pose {
    type Error = Error;

    fn try_from(r: PoseRepr) -> Result<Self> {
        let rot = Matrix3::from_fn(|i, j| r.rotation[i][j]);
        Pose::new(rot, Vector3::from(r.translation))
    }
}

impl From<Pose> for PoseRepr {
    fn from(p: Pose) -> Self {
        let m = p.rotation;
        PoseRepr {
            rotation: [
                [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
                [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
                [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
            ],
            translation: p.translation.into(),
        }
    }
}

/// Checks orthonormality and `det = +1` within `tol`.
pub fn check_rotation(r: &Matrix3<f64>, tol: f64) -> Result<()> {
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::param("rotation must be finite"));
    }
    let ortho = (r.transpose() * r - Matrix3::identity()).amax();
    let det = r.determinant();
    if ortho > tol || (det - 1.0).abs() > tol {
        return Err(Error::param(format!(
            "not a rotation (|RᵀR - I| = {ortho:.3e}, det = {det:.12})"
        )));
    }
    Ok(())
}

impl Pose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        check_rotation(&rotation, ROTATION_TOL)?;
        if translation.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("translation must be finite"));
        }
        Ok(Pose { rotation, translation })
    }

    pub fn identity() -> Self {
        Pose {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub(crate) fn new_unchecked(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Pose { rotation, translation }
    }

    /// Camera at `center` looking at `target`, with image-down roughly along `-up`.
    pub fn look_at(center: Vector3<f64>, target: Vector3<f64>, up: Vector3<f64>) -> Result<Self> {
        let z = target - center;
        if z.norm() < 1e-12 {
            return Err(Error::degenerate("look_at target coincides with center"));
        }
        let z = z.normalize();
        let x = z.cross(&(-up));
        if x.norm() < 1e-12 {
            return Err(Error::degenerate("look_at up vector parallel to viewing axis"));
        }
        let x = x.normalize();
        let y = z.cross(&x);
        let rot = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        Pose::new(rot, center)
    }

    /// Uniformly random rotation; translation entries uniform in `[-extent, extent]`.
    pub fn random(rng: &mut SeededRng, extent: f64) -> Self {
        use rand::Rng;
        let q = nalgebra::Quaternion::new(
            standard_normal(rng),
            standard_normal(rng),
            standard_normal(rng),
            standard_normal(rng),
        );
        let rot = UnitQuaternion::from_quaternion(q).to_rotation_matrix().into_inner();
        let t = Vector3::from_fn(|_, _| rng.random_range(-extent..=extent));
        Pose::new_unchecked(rot, t)
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// World-space camera center.
    pub fn center(&self) -> Vector3<f64> {
        self.translation
    }

    pub fn direction_to_world(&self, d: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * d
    }

    pub fn direction_to_camera(&self, d: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * d
    }

    pub fn point_to_world(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * p + self.translation
    }

    pub fn point_to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * (p - self.translation)
    }

    /// Pose after the world is mapped by `x ↦ s·A·x + b`.
    pub fn transformed(&self, scale: f64, a: &Matrix3<f64>, b: &Vector3<f64>) -> Pose {
        let rot = orthonormalize(&(self.rotation * a.transpose()));
        Pose::new_unchecked(rot, scale * (a * self.translation) + b)
    }
}

/// Projects a near-rotation onto SO(3).
pub(crate) fn orthonormalize(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let (u, v_t) = (svd.u.expect("requested U"), svd.v_t.expect("requested Vᵀ"));
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        r = u * v_t;
    }
    r
}

/// Optional pixel-level aberration applied before back-projection.
///
/// Implementations map an observed pixel to the ideal pinhole pixel; `center`
/// is the distortion center (the principal point when lifting).
pub trait PixelDistortion {
    fn distort(&self, pixel: &Vector2<f64>, center: &Vector2<f64>) -> Vector2<f64>;
}

/// Grid of rays, one per image patch, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RayBundle {
    rows: usize,
    cols: usize,
    origins: Vec<Vector3<f64>>,
    directions: Vec<Vector3<f64>>,
    /// Image size in pixels the patch grid tiles, when known.
    image_size: Option<(u32, u32)>,
}

impl RayBundle {
    /// Builds a bundle, normalizing directions. Zero or non-finite directions are rejected.
    pub fn new(rows: usize, cols: usize, origins: Vec<Vector3<f64>>, directions: Vec<Vector3<f64>>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::param("bundle grid must be non-empty"));
        }
        let n = rows * cols;
        if origins.len() != n || directions.len() != n {
            return Err(Error::param(format!(
                "bundle {rows}x{cols} needs {n} rays, got {} origins / {} directions",
                origins.len(),
                directions.len()
            )));
        }
        if origins.iter().flat_map(|o| o.iter()).any(|v| !v.is_finite()) {
            return Err(Error::param("bundle origins must be finite"));
        }
        let mut dirs = Vec::with_capacity(n);
        for d in directions {
            let norm = d.norm();
            if !norm.is_finite() || norm < 1e-300 {
                return Err(Error::param("bundle directions must be finite and non-zero"));
            }
            dirs.push(d / norm);
        }
        Ok(RayBundle {
            rows,
            cols,
            origins,
            directions: dirs,
            image_size: None,
        })
    }

    pub fn with_image_size(mut self, width: u32, height: u32) -> Self {
        self.image_size = Some((width, height));
        self
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn origins(&self) -> &[Vector3<f64>] {
        &self.origins
    }

    pub fn directions(&self) -> &[Vector3<f64>] {
        &self.directions
    }

    pub fn image_size(&self) -> Option<(u32, u32)> {
        self.image_size
    }

    /// Image size, falling back to one pixel per patch.
    pub fn image_size_or_grid(&self) -> (u32, u32) {
        self.image_size.unwrap_or((self.cols as u32, self.rows as u32))
    }

    /// Pixel center sampled by patch `(row, col)`.
    pub fn patch_pixel(&self, row: usize, col: usize) -> Vector2<f64> {
        let (w, h) = self.image_size_or_grid();
        patch_center(row, col, self.rows, self.cols, w, h)
    }

    /// Flattened `[ox, oy, oz, dx, dy, dz]` per ray, row-major.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len() * 6);
        for (o, d) in self.origins.iter().zip(&self.directions) {
            out.extend_from_slice(o.as_slice());
            out.extend_from_slice(d.as_slice());
        }
        out
    }

    /// Inverse of [`RayBundle::to_flat`]; directions are renormalized.
    pub fn from_flat(rows: usize, cols: usize, flat: &[f64]) -> Result<Self> {
        if flat.len() != rows * cols * 6 {
            return Err(Error::param(format!(
                "flat ray array of length {} does not match a {rows}x{cols} grid",
                flat.len()
            )));
        }
        let (origins, directions) = flat
            .chunks_exact(6)
            .map(|c| (Vector3::new(c[0], c[1], c[2]), Vector3::new(c[3], c[4], c[5])))
            .unzip();
        RayBundle::new(rows, cols, origins, directions)
    }
}

#[derive(Serialize, Deserialize)]
struct BundleRepr {
    rows: usize,
    cols: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    image_width: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    image_height: Option<u32>,
    origins: Vec<[f64; 3]>,
    directions: Vec<[f64; 3]>,
}

impl Serialize for RayBundle {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        BundleRepr {
            rows: self.rows,
            cols: self.cols,
            image_width: self.image_size.map(|(w, _)| w),
            image_height: self.image_size.map(|(_, h)| h),
            origins: self.origins.iter().map(|v| [v.x, v.y, v.z]).collect(),
            directions: self.directions.iter().map(|v| [v.x, v.y, v.z]).collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for RayBundle {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = BundleRepr::deserialize(d)?;
        let mut b = RayBundle::new(
            r.rows,
            r.cols,
            r.origins.into_iter().map(Vector3::from).collect(),
            r.directions.into_iter().map(Vector3::from).collect(),
        )
        .map_err(serde::de::Error::custom)?;
        match (r.image_width, r.image_height) {
            (Some(w), Some(h)) => b.image_size = Some((w, h)),
            (None, None) => {}
            _ => {
                return Err(serde::de::Error::custom(
                    "image_width and image_height must be given together",
                ))
            }
        }
        Ok(b)
    }
}

/// Pixel center of patch `(row, col)` in a `rows x cols` tiling of a `w x h` image.
pub fn patch_center(row: usize, col: usize, rows: usize, cols: usize, w: u32, h: u32) -> Vector2<f64> {
    Vector2::new(
        (col as f64 + 0.5) * w as f64 / cols as f64,
        (row as f64 + 0.5) * h as f64 / rows as f64,
    )
}

/// Back-projects a pixel to a unit camera-frame direction, `normalize(K⁻¹·D(pixel))`.
pub fn lift_pixel(
    intrinsics: &Intrinsics,
    pixel: &Vector2<f64>,
    profile: Option<&dyn PixelDistortion>,
) -> Result<Vector3<f64>> {
    intrinsics.validate()?;
    if !pixel.x.is_finite() || !pixel.y.is_finite() {
        return Err(Error::param("pixel must be finite"));
    }
    let ideal = match profile {
        Some(p) => p.distort(pixel, &intrinsics.principal_point()),
        None => *pixel,
    };
    Ok(intrinsics.unproject(&ideal).normalize())
}

/// Samples a `rows x cols` patch grid of the image and returns the world-space bundle.
pub fn bundle_from_camera(
    intrinsics: &Intrinsics,
    pose: &Pose,
    profile: Option<&dyn PixelDistortion>,
    rows: usize,
    cols: usize,
    image_w: u32,
    image_h: u32,
) -> Result<RayBundle> {
    if rows < 2 || cols < 2 {
        return Err(Error::param(format!(
            "patch grid must be at least 2x2, got {rows}x{cols}"
        )));
    }
    if image_w == 0 || image_h == 0 {
        return Err(Error::param("image dimensions must be positive"));
    }
    let mut directions = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            let px = patch_center(i, j, rows, cols, image_w, image_h);
            directions.push(lift_pixel(intrinsics, &px, profile)?);
        }
    }
    let camera = RayBundle {
        rows,
        cols,
        origins: vec![Vector3::zeros(); rows * cols],
        directions,
        image_size: Some((image_w, image_h)),
    };
    Ok(to_world(&camera, pose))
}

/// Maps a camera-frame bundle to the world: `d ↦ Rᵀd`, `o ↦ Rᵀo + t`.
pub fn to_world(bundle: &RayBundle, pose: &Pose) -> RayBundle {
    RayBundle {
        rows: bundle.rows,
        cols: bundle.cols,
        origins: bundle.origins.iter().map(|o| pose.point_to_world(o)).collect(),
        directions: bundle.directions.iter().map(|d| pose.direction_to_world(d)).collect(),
        image_size: bundle.image_size,
    }
}

/// Ray in Plücker form: unit direction and moment `origin × direction`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PluckerRay {
    pub direction: Vector3<f64>,
    pub moment: Vector3<f64>,
}

pub fn to_plucker(origin: &Vector3<f64>, direction: &Vector3<f64>) -> Result<PluckerRay> {
    let n = direction.norm();
    if !(n.is_finite() && n > 1e-300) {
        return Err(Error::param("ray direction must be non-zero"));
    }
    let d = direction / n;
    Ok(PluckerRay {
        direction: d,
        moment: origin.cross(&d),
    })
}

/// Returns the point on the ray closest to the world origin and the direction.
pub fn from_plucker(ray: &PluckerRay) -> (Vector3<f64>, Vector3<f64>) {
    (ray.direction.cross(&ray.moment), ray.direction)
}

/// Result of [`normalize_scene_flagged`].
#[derive(Debug, Clone)]
pub struct NormalizedScene {
    pub poses: Vec<Pose>,
    /// Scale factor applied to translations.
    pub scale: f64,
    /// Set when the first camera sat at the origin and scaling was skipped.
    pub degenerate_scale: bool,
}

/// Re-expresses the scene in the first camera's frame: the first pose becomes
/// `(I, t̂)` with `|t̂| = 1`. Degenerate first translations are flagged rather
/// than rejected and the scale is left at 1.
pub fn normalize_scene_flagged(poses: &[Pose]) -> Result<NormalizedScene> {
    let first = poses
        .first()
        .ok_or_else(|| Error::param("normalize_scene needs at least one pose"))?;
    let anchor = first.rotation;
    let norm = (anchor * first.translation).norm();
    let degenerate_scale = norm < 1e-12;
    let scale = if degenerate_scale { 1.0 } else { 1.0 / norm };
    let zero = Vector3::zeros();
    let mut out: Vec<Pose> = poses.iter().map(|p| p.transformed(scale, &anchor, &zero)).collect();
    out[0].rotation = Matrix3::identity();
    Ok(NormalizedScene {
        poses: out,
        scale,
        degenerate_scale,
    })
}

/// As [`normalize_scene_flagged`] but a degenerate first translation is an error.
pub fn normalize_scene(poses: &[Pose]) -> Result<Vec<Pose>> {
    let n = normalize_scene_flagged(poses)?;
    if n.degenerate_scale {
        return Err(Error::degenerate(
            "first camera translation norm below 1e-12; scene scale is undefined",
        ));
    }
    Ok(n.poses)
}
