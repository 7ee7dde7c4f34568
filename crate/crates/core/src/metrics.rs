//! Pose and ray evaluation: pairwise relative-rotation accuracy, camera-center
//! accuracy after similarity alignment, and mean ray angular error.
//!
//! Camera centers are taken as [`Pose::center`], the same convention used by
//! ray construction, so metrics agree with the bundles they evaluate.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::diffusion::loss_angular;
use crate::error::{Error, Result};
use crate::fit::fit_similarity;
use crate::ray_camera::{check_rotation, Pose, RayBundle};

pub const ROTATION_THRESHOLD_DEG: f64 = 15.0;
pub const CENTER_THRESHOLD: f64 = 0.1;

const ROTATION_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mean_angular_deg: f64,
    pub rotation_acc_at_15: f64,
    pub center_acc_at_0_1: f64,
    pub per_pair_rotation_err: Vec<f64>,
    pub per_camera_center_dist: Vec<f64>,
}

/// Geodesic angle between two rotations, in degrees.
pub fn relative_rotation_error(ra: &Matrix3<f64>, rb: &Matrix3<f64>) -> Result<f64> {
    check_rotation(ra, ROTATION_TOL)?;
    check_rotation(rb, ROTATION_TOL)?;
    Ok(geodesic_deg(ra, rb))
}

fn geodesic_deg(ra: &Matrix3<f64>, rb: &Matrix3<f64>) -> f64 {
    let m = ra.transpose() * rb;
    let skew = (m[(2, 1)] - m[(1, 2)])
        .hypot(m[(0, 2)] - m[(2, 0)])
        .hypot(m[(1, 0)] - m[(0, 1)]);
    // atan2 keeps full precision near 0 and π, unlike acos of the trace.
    (skew / 2.0).atan2((m.trace() - 1.0) / 2.0).to_degrees()
}

fn check_pair_lists(pred: &[Pose], gt: &[Pose], min: usize) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::param(format!(
            "prediction has {} cameras, ground truth has {}",
            pred.len(),
            gt.len()
        )));
    }
    if pred.len() < min {
        return Err(Error::param(format!("need at least {min} cameras, got {}", pred.len())));
    }
    Ok(())
}

/// Relative-rotation errors over unordered pairs `(i, j)`, `i < j`, in
/// lexicographic order. Pose rotations map world to camera, so the relative
/// rotation from camera `j` to camera `i` is `Rᵢ·Rⱼᵀ`; a global world rotation
/// `A` acts as `R ↦ R·Aᵀ` and cancels.
pub fn pairwise_rotation_errors(pred: &[Pose], gt: &[Pose]) -> Result<Vec<f64>> {
    check_pair_lists(pred, gt, 2)?;
    let n = pred.len();
    let mut out = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            let rel_pred = pred[i].rotation() * pred[j].rotation().transpose();
            let rel_gt = gt[i].rotation() * gt[j].rotation().transpose();
            out.push(geodesic_deg(&rel_pred, &rel_gt));
        }
    }
    Ok(out)
}

fn fraction_below(values: &[f64], threshold: f64) -> f64 {
    values.iter().filter(|&&v| v < threshold).count() as f64 / values.len() as f64
}

/// Fraction of camera pairs whose relative rotation error is strictly below
/// `threshold_deg`.
pub fn rotation_accuracy(pred: &[Pose], gt: &[Pose], threshold_deg: f64) -> Result<f64> {
    Ok(fraction_below(&pairwise_rotation_errors(pred, gt)?, threshold_deg))
}

/// Distances between similarity-aligned predicted centers and ground truth,
/// as fractions of the ground-truth scene scale (max pairwise center distance).
pub fn center_distances(pred: &[Pose], gt: &[Pose]) -> Result<Vec<f64>> {
    check_pair_lists(pred, gt, 3)?;
    let pc: Vec<Vector3<f64>> = pred.iter().map(Pose::center).collect();
    let gc: Vec<Vector3<f64>> = gt.iter().map(Pose::center).collect();
    let mut scale: f64 = 0.0;
    for i in 0..gc.len() {
        for j in i + 1..gc.len() {
            scale = scale.max((gc[i] - gc[j]).norm());
        }
    }
    if scale <= 0.0 {
        return Err(Error::degenerate(
            "ground-truth camera centers coincide; scene scale is zero",
        ));
    }
    let sim = fit_similarity(&pc, &gc)?;
    Ok(pc
        .iter()
        .zip(&gc)
        .map(|(p, g)| (sim.apply(p) - g).norm() / scale)
        .collect())
}

/// Fraction of cameras whose aligned center lies strictly within
/// `threshold` times the scene scale of its ground-truth center.
pub fn center_accuracy(pred: &[Pose], gt: &[Pose], threshold: f64) -> Result<f64> {
    Ok(fraction_below(&center_distances(pred, gt)?, threshold))
}

/// Mean angle between corresponding ray directions, in degrees.
pub fn mean_angular_error(pred: &RayBundle, gt: &RayBundle) -> Result<f64> {
    if (pred.rows(), pred.cols()) != (gt.rows(), gt.cols()) {
        return Err(Error::param(format!(
            "ray grids differ: {}x{} vs {}x{}",
            pred.rows(),
            pred.cols(),
            gt.rows(),
            gt.cols()
        )));
    }
    loss_angular(pred.directions(), gt.directions())
}

/// Full evaluation. The angular error is averaged over all rays of all
/// bundles (bundles share one grid size, so this equals the mean of
/// per-camera means).
pub fn evaluate(
    pred_poses: &[Pose],
    pred_bundles: &[RayBundle],
    gt_poses: &[Pose],
    gt_bundles: &[RayBundle],
) -> Result<EvalReport> {
    if pred_bundles.len() != gt_bundles.len() || pred_bundles.is_empty() {
        return Err(Error::param(format!(
            "bundle counts must match and be non-empty: {} vs {}",
            pred_bundles.len(),
            gt_bundles.len()
        )));
    }
    let per_bundle: Vec<f64> = pred_bundles
        .iter()
        .zip(gt_bundles)
        .map(|(p, g)| mean_angular_error(p, g))
        .collect::<Result<_>>()?;
    let mean_angular_deg = per_bundle.iter().sum::<f64>() / per_bundle.len() as f64;
    let per_pair_rotation_err = pairwise_rotation_errors(pred_poses, gt_poses)?;
    let per_camera_center_dist = center_distances(pred_poses, gt_poses)?;
    Ok(EvalReport {
        mean_angular_deg,
        rotation_acc_at_15: fraction_below(&per_pair_rotation_err, ROTATION_THRESHOLD_DEG),
        center_acc_at_0_1: fraction_below(&per_camera_center_dist, CENTER_THRESHOLD),
        per_pair_rotation_err,
        per_camera_center_dist,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Rotation3;

    fn rz(deg: f64) -> Matrix3<f64> {
        *Rotation3::from_axis_angle(&Vector3::z_axis(), deg.to_radians()).matrix()
    }

    #[test]
    fn rotation_error_closed_forms() {
        assert_eq!(relative_rotation_error(&rz(33.0), &rz(33.0)).unwrap(), 0.0);
        assert!((relative_rotation_error(&rz(20.0), &Matrix3::identity()).unwrap() - 20.0).abs() < 1e-10);
        assert!(relative_rotation_error(&(rz(10.0) * 2.0), &Matrix3::identity()).is_err());
    }

    #[test]
    fn one_bad_camera_of_three() {
        let gt: Vec<Pose> = (0..3)
            .map(|i| Pose::new(rz(10.0 * i as f64), Vector3::new(i as f64, 0.0, 0.0)).unwrap())
            .collect();
        let mut pred = gt.clone();
        pred[2] = Pose::new(rz(40.0), *gt[2].translation()).unwrap();
        assert!((rotation_accuracy(&pred, &gt, 15.0).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn threshold_is_strict() {
        assert_eq!(fraction_below(&[15.0, 14.9], 15.0), 0.5);
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let p = vec![Pose::identity(); 3];
        assert!(rotation_accuracy(&p, &p[..2], 15.0).is_err());
        assert!(center_accuracy(&p[..2], &p[..2], 0.1).is_err());
    }
}
