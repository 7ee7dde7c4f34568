use std::f64::consts::FRAC_PI_2;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ray_camera::PixelDistortion;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileKind {
    /// `p' = c + (p - c)(1 + k1 r² + k2 r⁴)`
    RadialPoly,
    /// Angular polynomial `θd = θ(1 + k1θ² + k2θ⁴ + k3θ⁶ + k4θ⁸)`, `θ = atan(r)`,
    /// mapped back to the normalized plane through `tan(θd)`.
    KannalaBrandt,
    /// `p' = c + [[1, s], [0, 1]](p - c)`
    Shear,
}

impl ProfileKind {
    pub fn coefficient_count(self) -> usize {
        match self {
            ProfileKind::RadialPoly => 2,
            ProfileKind::KannalaBrandt => 4,
            ProfileKind::Shear => 1,
        }
    }
}

/// Closed-form aberration `D_ζ` around a center point.
///
/// `r` is the distance to the center divided by `normalization_radius`, so
/// coefficients do not depend on image size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ProfileRepr")]
pub struct ParametricProfile {
    kind: ProfileKind,
    coefficients: Vec<f64>,
    normalization_radius: f64,
}

#[derive(Deserialize)]
struct ProfileRepr {
    kind: ProfileKind,
    coefficients: Vec<f64>,
    normalization_radius: f64,
}

impl TryFrom<ProfileRepr> for ParametricProfile {
    type Error = Error;

    fn try_from(r: ProfileRepr) -> Result<Self> {
        ParametricProfile::new(r.kind, r.coefficients, r.normalization_radius)
    }
}

/// Half the image diagonal, the default normalization radius.
pub fn default_normalization_radius(image_w: u32, image_h: u32) -> f64 {
    0.5 * (image_w as f64).hypot(image_h as f64)
}

impl ParametricProfile {
    pub fn new(kind: ProfileKind, coefficients: Vec<f64>, normalization_radius: f64) -> Result<Self> {
        if coefficients.len() != kind.coefficient_count() {
            return Err(Error::param(format!(
                "{kind:?} takes {} coefficients, got {}",
                kind.coefficient_count(),
                coefficients.len()
            )));
        }
        if coefficients.iter().any(|c| !c.is_finite()) {
            return Err(Error::param("profile coefficients must be finite"));
        }
        if !(normalization_radius.is_finite() && normalization_radius > 0.0) {
            return Err(Error::param(format!(
                "normalization radius must be positive, got {normalization_radius}"
            )));
        }
        Ok(ParametricProfile {
            kind,
            coefficients,
            normalization_radius,
        })
    }

    pub fn radial(k1: f64, k2: f64, normalization_radius: f64) -> Result<Self> {
        Self::new(ProfileKind::RadialPoly, vec![k1, k2], normalization_radius)
    }

    pub fn kannala_brandt(k: [f64; 4], normalization_radius: f64) -> Result<Self> {
        Self::new(ProfileKind::KannalaBrandt, k.to_vec(), normalization_radius)
    }

    pub fn shear(s: f64) -> Result<Self> {
        Self::new(ProfileKind::Shear, vec![s], 1.0)
    }

    pub fn kind(&self) -> ProfileKind {
        self.kind
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn normalization_radius(&self) -> f64 {
        self.normalization_radius
    }

    pub fn with_normalization_radius(&self, radius: f64) -> Result<Self> {
        Self::new(self.kind, self.coefficients.clone(), radius)
    }

    pub fn is_identity(&self) -> bool {
        self.coefficients.iter().all(|&c| c == 0.0)
    }

    /// Largest `|D%|` over radii up to `max_radius` pixels and a ring of angles.
    pub fn max_abs_distortion_percent(&self, max_radius: f64) -> f64 {
        let c = Vector2::zeros();
        let mut worst: f64 = 0.0;
        for ri in 1..=64 {
            let r = max_radius * ri as f64 / 64.0;
            for ai in 0..16 {
                let a = ai as f64 * std::f64::consts::PI / 8.0;
                let p = Vector2::new(r * a.cos(), r * a.sin());
                let d = apply_profile(self, &p, &c).norm();
                worst = worst.max((100.0 * (d - r) / r).abs());
            }
        }
        worst
    }
}

/// Applies `D_ζ` to a pixel around `center`. Total on finite inputs.
pub fn apply_profile(profile: &ParametricProfile, point: &Vector2<f64>, center: &Vector2<f64>) -> Vector2<f64> {
    point + profile_displacement(profile, &(point - center))
}

/// `D_ζ(c + v) - (c + v)` for an offset `v` from the distortion center.
/// Exactly zero when every coefficient is zero.
pub fn profile_displacement(profile: &ParametricProfile, v: &Vector2<f64>) -> Vector2<f64> {
    if profile.is_identity() {
        return Vector2::zeros();
    }
    let k = &profile.coefficients;
    match profile.kind {
        ProfileKind::RadialPoly => {
            let r2 = v.norm_squared() / (profile.normalization_radius * profile.normalization_radius);
            v * (k[0] * r2 + k[1] * r2 * r2)
        }
        ProfileKind::KannalaBrandt => {
            let r = v.norm() / profile.normalization_radius;
            if r == 0.0 {
                return Vector2::zeros();
            }
            let theta = r.atan();
            let t2 = theta * theta;
            let theta_d = theta * (1.0 + t2 * (k[0] + t2 * (k[1] + t2 * (k[2] + t2 * k[3]))));
            // Keep tan finite for strongly positive coefficients.
            let limit = FRAC_PI_2 - 1e-9;
            let r_d = theta_d.clamp(-limit, limit).tan();
            v * (r_d / r - 1.0)
        }
        ProfileKind::Shear => Vector2::new(k[0] * v.y, 0.0),
    }
}

impl PixelDistortion for ParametricProfile {
    fn distort(&self, pixel: &Vector2<f64>, center: &Vector2<f64>) -> Vector2<f64> {
        apply_profile(self, pixel, center)
    }
}

/// Percent deviation of an actual radial distance from its reference.
pub fn distortion_percent(d_actual: f64, d_reference: f64) -> Result<f64> {
    if !(d_reference > 0.0) {
        return Err(Error::param(format!(
            "reference distance must be positive, got {d_reference}"
        )));
    }
    Ok(100.0 * (d_actual - d_reference) / d_reference)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_coefficients_are_identity() {
        let c = Vector2::new(12.0, -3.0);
        let profiles = [
            ParametricProfile::radial(0.0, 0.0, 50.0).unwrap(),
            ParametricProfile::kannala_brandt([0.0; 4], 50.0).unwrap(),
            ParametricProfile::shear(0.0).unwrap(),
        ];
        for p in &profiles {
            assert!(p.is_identity());
            for q in [Vector2::new(0.0, 0.0), Vector2::new(80.0, 17.5), c] {
                let out = apply_profile(p, &q, &c);
                assert!((out - q).norm() < 1e-12, "{:?} moved {q:?} to {out:?}", p.kind());
            }
        }
    }

    #[test]
    fn barrel_scales_unit_radius_by_point_nine() {
        let p = ParametricProfile::radial(-0.1, 0.0, 100.0).unwrap();
        let c = Vector2::new(5.0, 5.0);
        let q = c + Vector2::new(60.0, 80.0);
        let out = apply_profile(&p, &q, &c);
        assert!(((out - c).norm() - 90.0).abs() < 1e-12);
    }

    #[test]
    fn distortion_percent_values() {
        assert_eq!(distortion_percent(3.0, 3.0).unwrap(), 0.0);
        assert!((distortion_percent(1.1 * 7.0, 7.0).unwrap() - 10.0).abs() < 1e-12);
        assert!(distortion_percent(1.0, 0.0).is_err());
        assert!(distortion_percent(1.0, -2.0).is_err());
    }

    #[test]
    fn barrel_percent_at_unit_radius() {
        let p = ParametricProfile::radial(-0.1, 0.0, 100.0).unwrap();
        let c = Vector2::zeros();
        let out = apply_profile(&p, &Vector2::new(100.0, 0.0), &c);
        let d = distortion_percent(out.norm(), 100.0).unwrap();
        assert!((d + 10.0).abs() < 1e-9);
        let pin = ParametricProfile::radial(0.1, 0.0, 100.0).unwrap();
        let out = apply_profile(&pin, &Vector2::new(0.0, 100.0), &c);
        assert!(distortion_percent(out.norm(), 100.0).unwrap() > 0.0);
    }

    #[test]
    fn rejects_bad_profiles() {
        assert!(ParametricProfile::new(ProfileKind::RadialPoly, vec![0.1], 1.0).is_err());
        assert!(ParametricProfile::radial(f64::NAN, 0.0, 1.0).is_err());
        assert!(ParametricProfile::radial(0.1, 0.0, 0.0).is_err());
        let json = r#"{"kind":"shear","coefficients":[0.1,0.2],"normalization_radius":1}"#;
        assert!(serde_json::from_str::<ParametricProfile>(json).is_err());
    }
}
