use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::ray_camera::RayBundle;

/// Least-squares point closest to all rays:
/// `Σ(I - dᵢdᵢᵀ) x = Σ(I - dᵢdᵢᵀ) oᵢ`.
pub fn intersect_rays(bundle: &RayBundle) -> Result<Vector3<f64>> {
    intersect_lines(bundle.origins(), bundle.directions())
}

pub(crate) fn intersect_lines(origins: &[Vector3<f64>], directions: &[Vector3<f64>]) -> Result<Vector3<f64>> {
    if origins.len() < 2 {
        return Err(Error::degenerate("ray intersection needs at least two rays"));
    }
    let mut a = Matrix3::zeros();
    let mut b = Vector3::zeros();
    for (o, d) in origins.iter().zip(directions) {
        let d = d.normalize();
        let proj = Matrix3::identity() - d * d.transpose();
        a += proj;
        b += proj * o;
    }
    let eig = a.symmetric_eigenvalues();
    let (lo, hi) = (eig.min(), eig.max());
    if lo <= 1e-12 * hi {
        return Err(Error::degenerate("rays are parallel; intersection is undefined"));
    }
    a.cholesky()
        .map(|c| c.solve(&b))
        .ok_or_else(|| Error::degenerate("ray normal equations are not positive definite"))
}
