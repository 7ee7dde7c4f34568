use nalgebra::{DMatrix, Matrix3, Matrix3x6, Matrix6, Rotation3, Vector2, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use super::rays::intersect_rays;
use crate::error::{Error, Result};
use crate::ray_camera::{orthonormalize, Intrinsics, Pose, RayBundle};

const MAX_ITERATIONS: usize = 200;
const GRADIENT_TOL: f64 = 1e-10;
const STEP_TOL: f64 = 1e-12;
const LAMBDA_INIT: f64 = 1e-3;
const LAMBDA_MAX: f64 = 1e16;

/// Best-fit pinhole camera for a ray bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub intrinsics: Intrinsics,
    pub pose: Pose,
    /// RMS angle between bundle and fitted directions, degrees.
    pub rms_angular_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Per-ray angular residual, degrees, row-major.
    pub residuals_deg: Vec<f64>,
    /// Cost `½Σθ²` (radians²) after each accepted step, starting with the initial cost.
    pub cost_history: Vec<f64>,
}

/// Camera parameters being refined; the center is fixed by ray intersection.
#[derive(Debug, Clone, Copy)]
struct Params {
    f: f64,
    cx: f64,
    cy: f64,
    rotation: Matrix3<f64>,
}

impl Params {
    fn intrinsics(&self) -> Intrinsics {
        Intrinsics {
            fx: self.f,
            fy: self.f,
            cx: self.cx,
            cy: self.cy,
            skew: 0.0,
        }
    }

    /// Left increment: `R ← exp(ω)·R`.
    fn step(&self, delta: &Vector6<f64>) -> Params {
        let omega = Vector3::new(delta[3], delta[4], delta[5]);
        let inc = Rotation3::new(omega).into_inner();
        Params {
            f: self.f + delta[0],
            cx: self.cx + delta[1],
            cy: self.cy + delta[2],
            rotation: orthonormalize(&(inc * self.rotation)),
        }
    }

    fn norm(&self) -> f64 {
        Vector3::new(self.f, self.cx, self.cy).norm() + 1.0
    }
}

struct Problem<'a> {
    pixels: Vec<Vector2<f64>>,
    directions: &'a [Vector3<f64>],
}

/// Angular residual vector `θ·(d×q)/|d×q|` and its Jacobian with respect to `q`.
fn angular_residual(d: &Vector3<f64>, q: &Vector3<f64>) -> (Vector3<f64>, Matrix3<f64>) {
    let c = d.cross(q);
    let s = c.norm();
    let w = d.dot(q);
    let dx = d.cross_matrix();
    if s < 1e-12 {
        // θ/s → 1/w as the rays align.
        let phi = 1.0 / w.max(1e-300);
        return (c * phi, dx * phi);
    }
    let theta = s.atan2(w);
    let phi = theta / s;
    let ds = dx.transpose() * c / s;
    let dtheta = (ds * w - d * s) / (s * s + w * w);
    let dphi = dtheta / s - ds * (theta / (s * s));
    (c * phi, dx * phi + c * dphi.transpose())
}

impl Problem<'_> {
    fn predicted(&self, p: &Params, pixel: &Vector2<f64>) -> (Vector3<f64>, Vector3<f64>, f64) {
        let u = Vector3::new((pixel.x - p.cx) / p.f, (pixel.y - p.cy) / p.f, 1.0);
        let len = u.norm();
        let m = u / len;
        (p.rotation.transpose() * m, m, len)
    }

    fn cost(&self, p: &Params) -> f64 {
        let mut cost = 0.0;
        for (px, d) in self.pixels.iter().zip(self.directions) {
            let (q, _, _) = self.predicted(p, px);
            let (r, _) = angular_residual(d, &q);
            cost += r.norm_squared();
        }
        0.5 * cost
    }

    /// Gauss-Newton system `(JᵀJ, Jᵀr)` and the cost, summed in ray order.
    fn normal_equations(&self, p: &Params) -> (Matrix6<f64>, Vector6<f64>, f64) {
        let mut jtj = Matrix6::zeros();
        let mut jtr = Vector6::zeros();
        let mut cost = 0.0;
        let rt = p.rotation.transpose();
        for (px, d) in self.pixels.iter().zip(self.directions) {
            let (q, m, len) = self.predicted(p, px);
            let (r, dr_dq) = angular_residual(d, &q);
            let dm_du = (Matrix3::identity() - m * m.transpose()) / len;
            let du_df = Vector3::new(-(px.x - p.cx) / (p.f * p.f), -(px.y - p.cy) / (p.f * p.f), 0.0);
            let du_dcx = Vector3::new(-1.0 / p.f, 0.0, 0.0);
            let du_dcy = Vector3::new(0.0, -1.0 / p.f, 0.0);
            let dq_domega = rt * m.cross_matrix();
            let mut dq = Matrix3x6::zeros();
            dq.set_column(0, &(rt * dm_du * du_df));
            dq.set_column(1, &(rt * dm_du * du_dcx));
            dq.set_column(2, &(rt * dm_du * du_dcy));
            dq.fixed_view_mut::<3, 3>(0, 3).copy_from(&dq_domega);
            let j = dr_dq * dq;
            jtj += j.transpose() * j;
            jtr += j.transpose() * r;
            cost += r.norm_squared();
        }
        (jtj, jtr, 0.5 * cost)
    }

    fn residuals_deg(&self, p: &Params) -> Vec<f64> {
        self.pixels
            .iter()
            .zip(self.directions)
            .map(|(px, d)| {
                let (q, _, _) = self.predicted(p, px);
                d.cross(&q).norm().atan2(d.dot(&q)).to_degrees()
            })
            .collect()
    }
}

/// Direct linear estimate of `H = K·R` from `pixel ~ H·direction`, split by RQ.
fn linear_init(pixels: &[Vector2<f64>], directions: &[Vector3<f64>]) -> Option<Params> {
    let n = pixels.len() as f64;
    let mean = pixels.iter().sum::<Vector2<f64>>() / n;
    let spread = pixels.iter().map(|p| (p - mean).norm()).sum::<f64>() / n;
    if spread <= 0.0 {
        return None;
    }
    let s = std::f64::consts::SQRT_2 / spread;
    let mut a = DMatrix::<f64>::zeros(2 * pixels.len(), 9);
    for (k, (p, d)) in pixels.iter().zip(directions).enumerate() {
        let u = (p.x - mean.x) * s;
        let v = (p.y - mean.y) * s;
        for c in 0..3 {
            a[(2 * k, c)] = d[c];
            a[(2 * k, 6 + c)] = -u * d[c];
            a[(2 * k + 1, 3 + c)] = d[c];
            a[(2 * k + 1, 6 + c)] = -v * d[c];
        }
    }
    let ata = a.transpose() * &a;
    let eig = ata.symmetric_eigen();
    let k_min = (0..9).min_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]))?;
    let h = eig.eigenvectors.column(k_min);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let denorm = Matrix3::new(1.0 / s, 0.0, mean.x, 0.0, 1.0 / s, mean.y, 0.0, 0.0, 1.0);
    let mut m = denorm * hn;
    if m.determinant() < 0.0 {
        m = -m;
    }
    let (k, r) = rq_decompose(&m)?;
    if !(k[(2, 2)].abs() > 1e-300) {
        return None;
    }
    let k = k / k[(2, 2)];
    let f = 0.5 * (k[(0, 0)] + k[(1, 1)]);
    if !(f.is_finite() && f > 0.0) {
        return None;
    }
    Some(Params {
        f,
        cx: k[(0, 2)],
        cy: k[(1, 2)],
        rotation: orthonormalize(&r),
    })
}

/// `M = K·R` with `K` upper triangular with positive diagonal and `R` orthonormal.
fn rq_decompose(m: &Matrix3<f64>) -> Option<(Matrix3<f64>, Matrix3<f64>)> {
    let flip = Matrix3::new(0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0);
    let qr = (flip * m).transpose().qr();
    let (q, r) = (qr.q(), qr.r());
    let mut k = flip * r.transpose() * flip;
    let mut rot = flip * q.transpose();
    for i in 0..3 {
        if k[(i, i)] < 0.0 {
            k.column_mut(i).neg_mut();
            rot.row_mut(i).neg_mut();
        }
    }
    if rot.determinant() < 0.0 {
        return None;
    }
    Some((k, rot))
}

/// Levenberg-Marquardt fit of a shared-focal, zero-skew pinhole camera to a
/// ray bundle, minimizing squared angles between bundle and predicted ray
/// directions at the patch pixels. The camera center is the least-squares
/// intersection of the rays; angular residuals do not depend on it.
pub fn fit_pinhole(bundle: &RayBundle, init: Option<&FitResult>) -> Result<FitResult> {
    if bundle.len() < 6 {
        return Err(Error::degenerate(format!(
            "pinhole fit needs at least 6 rays, got {}",
            bundle.len()
        )));
    }
    let d0 = bundle.directions()[0];
    if bundle.directions().iter().all(|d| d.cross(&d0).norm() < 1e-12) {
        return Err(Error::degenerate("all bundle directions are parallel"));
    }
    let center = intersect_rays(bundle)?;

    let mut pixels = Vec::with_capacity(bundle.len());
    for i in 0..bundle.rows() {
        for j in 0..bundle.cols() {
            pixels.push(bundle.patch_pixel(i, j));
        }
    }
    let problem = Problem {
        pixels,
        directions: bundle.directions(),
    };

    let mut params = match init {
        Some(r) => Params {
            f: 0.5 * (r.intrinsics.fx + r.intrinsics.fy),
            cx: r.intrinsics.cx,
            cy: r.intrinsics.cy,
            rotation: *r.pose.rotation(),
        },
        None => linear_init(&problem.pixels, problem.directions).unwrap_or_else(|| {
            let (w, h) = bundle.image_size_or_grid();
            Params {
                f: w.max(h) as f64,
                cx: w as f64 / 2.0,
                cy: h as f64 / 2.0,
                rotation: Matrix3::identity(),
            }
        }),
    };

    let mut lambda = LAMBDA_INIT;
    let mut converged = false;
    let mut iterations = 0;
    let (mut jtj, mut jtr, mut cost) = problem.normal_equations(&params);
    let mut cost_history = vec![cost];

    'outer: while iterations < MAX_ITERATIONS {
        if jtr.amax() < GRADIENT_TOL {
            converged = true;
            break;
        }
        iterations += 1;
        loop {
            let mut a = jtj;
            for k in 0..6 {
                a[(k, k)] += lambda * jtj[(k, k)].max(1e-12);
            }
            let delta = match a.cholesky() {
                Some(c) => -c.solve(&jtr),
                None => {
                    lambda *= 10.0;
                    if lambda > LAMBDA_MAX {
                        break 'outer;
                    }
                    continue;
                }
            };
            if delta.norm() < STEP_TOL * params.norm() {
                converged = true;
                break 'outer;
            }
            let candidate = params.step(&delta);
            let new_cost = if candidate.f > 0.0 {
                problem.cost(&candidate)
            } else {
                f64::INFINITY
            };
            if new_cost < cost {
                debug_assert!(new_cost <= cost);
                params = candidate;
                lambda = (lambda / 10.0).max(1e-15);
                (jtj, jtr, cost) = problem.normal_equations(&params);
                cost_history.push(cost);
                break;
            }
            lambda *= 10.0;
            if lambda > LAMBDA_MAX {
                // No descent left at machine precision.
                converged = jtr.amax() < GRADIENT_TOL.sqrt();
                break 'outer;
            }
        }
    }

    let residuals_deg = problem.residuals_deg(&params);
    let rms = (residuals_deg.iter().map(|r| r * r).sum::<f64>() / residuals_deg.len() as f64).sqrt();
    Ok(FitResult {
        intrinsics: params.intrinsics(),
        pose: Pose::new_unchecked(params.rotation, center),
        rms_angular_residual: rms,
        iterations,
        converged,
        residuals_deg,
        cost_history,
    })
}
