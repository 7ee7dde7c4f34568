use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ray_camera::Pose;

/// `x ↦ scale·R·x + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityTransform {
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl SimilarityTransform {
    pub fn identity() -> Self {
        SimilarityTransform {
            scale: 1.0,
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.scale * (self.rotation * p) + self.translation
    }

    /// Pose of the same camera after the world is mapped by this transform.
    pub fn apply_to_pose(&self, pose: &Pose) -> Pose {
        pose.transformed(self.scale, &self.rotation, &self.translation)
    }
}

/// Closed-form least-squares similarity (Umeyama) taking `source` onto `target`,
/// with reflections excluded.
pub fn fit_similarity(source: &[Vector3<f64>], target: &[Vector3<f64>]) -> Result<SimilarityTransform> {
    if source.len() != target.len() {
        return Err(Error::param(format!(
            "point sets differ in length ({} vs {})",
            source.len(),
            target.len()
        )));
    }
    let n = source.len();
    if n < 3 {
        return Err(Error::degenerate(format!(
            "similarity fit needs at least 3 points, got {n}"
        )));
    }
    let inv_n = 1.0 / n as f64;
    let mu_s = source.iter().sum::<Vector3<f64>>() * inv_n;
    let mu_t = target.iter().sum::<Vector3<f64>>() * inv_n;

    let mut cov = Matrix3::zeros();
    let mut cov_t = Matrix3::zeros();
    let mut var_s = 0.0;
    for (s, t) in source.iter().zip(target) {
        let sc = s - mu_s;
        let tc = t - mu_t;
        cov += tc * sc.transpose();
        cov_t += tc * tc.transpose();
        var_s += sc.norm_squared();
    }
    cov *= inv_n;
    cov_t *= inv_n;
    var_s *= inv_n;

    let spread_t = cov_t.symmetric_eigenvalues();
    let (lo, hi) = sorted_pair(&spread_t);
    if hi <= 0.0 || lo <= 1e-12 * hi {
        return Err(Error::degenerate("target points are collinear or coincident"));
    }
    if var_s <= 1e-300 {
        return Err(Error::degenerate("source points are coincident"));
    }

    let svd = cov.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::degenerate("SVD of cross-covariance failed")),
    };
    let mut sv = svd.singular_values;
    // nalgebra does not guarantee ordering; the rank test needs the two largest.
    let mut sorted = [sv[0], sv[1], sv[2]];
    sorted.sort_by(|a, b| b.total_cmp(a));
    if sorted[1] <= 1e-12 * sorted[0] {
        return Err(Error::degenerate("source points are collinear"));
    }

    let mut s = Matrix3::identity();
    if (u.determinant() * v_t.determinant()) < 0.0 {
        // Flip the axis of the smallest singular value.
        let k = (0..3).min_by(|&a, &b| sv[a].total_cmp(&sv[b])).unwrap_or(2);
        s[(k, k)] = -1.0;
        sv[k] = -sv[k];
    }
    let rotation = u * s * v_t;
    let scale = sv.sum() / var_s;
    let translation = mu_t - scale * (rotation * mu_s);
    Ok(SimilarityTransform {
        scale,
        rotation,
        translation,
    })
}

fn sorted_pair(eig: &Vector3<f64>) -> (f64, f64) {
    let mut e = [eig[0], eig[1], eig[2]];
    e.sort_by(|a, b| a.total_cmp(b));
    (e[1], e[2])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud() -> Vec<Vector3<f64>> {
        vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.2, -0.3),
            Vector3::new(-0.4, 1.1, 0.5),
            Vector3::new(0.3, -0.7, 1.2),
            Vector3::new(2.0, 1.0, 0.1),
        ]
    }

    #[test]
    fn identity_and_pure_scale() {
        let p = cloud();
        let t = fit_similarity(&p, &p).unwrap();
        assert!((t.scale - 1.0).abs() < 1e-12);
        assert!((t.rotation - Matrix3::identity()).amax() < 1e-12);
        assert!(t.translation.norm() < 1e-12);

        let q: Vec<_> = p.iter().map(|x| x * 2.0).collect();
        let t = fit_similarity(&p, &q).unwrap();
        assert!((t.scale - 2.0).abs() < 1e-12);
        assert!((t.rotation - Matrix3::identity()).amax() < 1e-12);
        assert!(t.translation.norm() < 1e-12);
    }

    #[test]
    fn reflection_is_excluded() {
        let p = cloud();
        let mirrored: Vec<_> = p.iter().map(|x| Vector3::new(-x.x, x.y, x.z)).collect();
        let t = fit_similarity(&p, &mirrored).unwrap();
        assert!((t.rotation.determinant() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn degenerate_inputs() {
        let line: Vec<_> = (0..5).map(|i| Vector3::new(i as f64, 2.0 * i as f64, 0.0)).collect();
        assert!(matches!(fit_similarity(&cloud(), &line), Err(Error::Degenerate(_))));
        assert!(matches!(fit_similarity(&line, &cloud()), Err(Error::Degenerate(_))));
        assert!(fit_similarity(&cloud()[..2], &cloud()[..2]).is_err());
        assert!(matches!(
            fit_similarity(&cloud(), &cloud()[..4]),
            Err(Error::Parameter(_))
        ));
    }
}
