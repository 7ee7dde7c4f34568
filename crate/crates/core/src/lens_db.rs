//! Lens profile database: JSON-lines records, validation, seeded sampling and
//! sequence augmentation.
//!
//! Each line of a database file is one [`LensRecord`]:
//!
//! ```json
//! {"name":"barrel-a","fov_deg":70.0,"f_number":2.8,"numerical_aperture":0.18,
//!  "category":"barrel","profile":{"type":"parametric","kind":"radial_poly",
//!  "coefficients":[-0.2,0.0],"normalization_radius":400.0}}
//! ```
//!
//! Grid-based records use `"type":"field"` with the [`DistortionField`] keys.
//! A machine-readable schema ships as `data/lens_record.schema.json`.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::distortion::{
    default_normalization_radius, field_from_profile, invert_field, remap_image, DistortionField, ParametricProfile,
};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::{index, seeded};

/// Grid resolution of fields built for augmentation and the fixture.
pub const FIELD_GRID: usize = 33;

/// Largest relative displacement a record may apply (|D| ≤ 50%).
pub const MAX_RELATIVE_DISTORTION: f64 = 0.5;

/// The synthetic fixture shipped with the crate.
pub const BUNDLED_FIXTURE: &str = include_str!("../data/lens_fixture.jsonl");

/// Fixture field records are authored for this image size.
pub const FIXTURE_IMAGE: (u32, u32) = (640, 480);

/// Seeds of the procedurally perturbed asymmetric fixture records.
pub const FIXTURE_ASYMMETRIC_SEEDS: [u64; 2] = [5101, 5102];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LensCategory {
    Barrel,
    Pincushion,
    Fisheye,
    Shear,
    Symmetric,
    Asymmetric,
}

impl LensCategory {
    pub const ALL: [LensCategory; 6] = [
        LensCategory::Barrel,
        LensCategory::Pincushion,
        LensCategory::Fisheye,
        LensCategory::Shear,
        LensCategory::Symmetric,
        LensCategory::Asymmetric,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LensCategory::Barrel => "barrel",
            LensCategory::Pincushion => "pincushion",
            LensCategory::Fisheye => "fisheye",
            LensCategory::Shear => "shear",
            LensCategory::Symmetric => "symmetric",
            LensCategory::Asymmetric => "asymmetric",
        }
    }
}

impl fmt::Display for LensCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for LensCategory {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LensCategory::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| {
                Error::param(format!(
                    "unknown lens category {s:?}; expected one of barrel, pincushion, fisheye, shear, symmetric, asymmetric"
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LensProfile {
    Parametric(ParametricProfile),
    Field(DistortionField),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LensRecord {
    pub name: String,
    pub fov_deg: f64,
    pub f_number: f64,
    pub numerical_aperture: f64,
    pub category: LensCategory,
    pub profile: LensProfile,
}

impl LensRecord {
    /// Checks optical ranges and that the profile stays within |D| ≤ 50% and
    /// is invertible on a 33x33 grid.
    pub fn validate(&self) -> Result<()> {
        if self.name.trim().is_empty() {
            return Err(Error::param("record name must be non-empty"));
        }
        let max_fov = if self.category == LensCategory::Fisheye {
            220.0
        } else {
            180.0
        };
        let fov_ok = self.fov_deg > 0.0
            && if self.category == LensCategory::Fisheye {
                self.fov_deg <= max_fov
            } else {
                self.fov_deg < max_fov
            };
        if !fov_ok {
            return Err(Error::param(format!(
                "fov_deg {} out of range for category {}",
                self.fov_deg, self.category
            )));
        }
        if !(self.f_number > 0.0 && self.f_number.is_finite()) {
            return Err(Error::param(format!(
                "f_number must be positive, got {}",
                self.f_number
            )));
        }
        if !(self.numerical_aperture > 0.0 && self.numerical_aperture < 1.0) {
            return Err(Error::param(format!(
                "numerical_aperture must lie in (0, 1), got {}",
                self.numerical_aperture
            )));
        }
        let field = match &self.profile {
            LensProfile::Parametric(p) => {
                let (w, h) = image_for_radius(p.normalization_radius());
                field_from_profile(p, FIELD_GRID, FIELD_GRID, w, h)?
            }
            LensProfile::Field(f) => f.clone(),
        };
        let rel = field.max_relative_displacement();
        if rel > MAX_RELATIVE_DISTORTION {
            return Err(Error::param(format!(
                "profile displaces points by up to {:.1}% of their radius (limit 50%)",
                100.0 * rel
            )));
        }
        invert_field(&field, 1e-3, 500).map_err(|e| Error::param(format!("profile is not invertible: {e}")))?;
        Ok(())
    }

    /// The record's field for a `w x h` image. Parametric profiles are
    /// evaluated with their normalization radius reset to the target image's
    /// half-diagonal; grid records are rescaled per axis.
    pub fn field_for(&self, w: u32, h: u32) -> Result<DistortionField> {
        match &self.profile {
            LensProfile::Parametric(p) => {
                let p = p.with_normalization_radius(default_normalization_radius(w, h))?;
                field_from_profile(&p, FIELD_GRID, FIELD_GRID, w, h)
            }
            LensProfile::Field(f) => f.rescaled(w, h),
        }
    }
}

/// A 4:3 image whose half-diagonal equals `radius`.
fn image_for_radius(radius: f64) -> (u32, u32) {
    let w = (1.6 * radius).round().max(2.0) as u32;
    let h = (1.2 * radius).round().max(2.0) as u32;
    (w, h)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LensDatabase {
    records: Vec<LensRecord>,
}

impl LensDatabase {
    /// Validates every record; fails listing all offending records.
    pub fn new(records: Vec<LensRecord>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Load("empty database".into()));
        }
        let mut problems = Vec::new();
        let mut seen = HashSet::new();
        for r in &records {
            if !seen.insert(r.name.as_str()) {
                problems.push(format!("duplicate record name {:?}", r.name));
            }
            if let Err(e) = r.validate() {
                problems.push(format!("record {:?}: {e}", r.name));
            }
        }
        if !problems.is_empty() {
            return Err(Error::Load(problems.join("; ")));
        }
        Ok(LensDatabase { records })
    }

    /// Parses JSON lines; blank lines are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut records = Vec::new();
        let mut problems = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<LensRecord>(line) {
                Ok(r) => records.push(r),
                Err(e) => {
                    let name = serde_json::from_str::<serde_json::Value>(line)
                        .ok()
                        .and_then(|v| v.get("name").and_then(|n| n.as_str()).map(str::to_owned));
                    let label = match name {
                        Some(n) => format!("record {n:?} (line {})", lineno + 1),
                        None => format!("line {}", lineno + 1),
                    };
                    problems.push(format!("{label}: {e}"));
                }
            }
        }
        if !problems.is_empty() {
            return Err(Error::Load(problems.join("; ")));
        }
        Self::new(records)
    }

    pub fn bundled() -> Self {
        Self::parse(BUNDLED_FIXTURE).expect("bundled fixture is valid")
    }

    pub fn records(&self) -> &[LensRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&LensRecord> {
        self.records.iter().find(|r| r.name == name)
    }

    /// One compact JSON object per line.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }
}

pub fn load_database(path: impl AsRef<Path>) -> Result<LensDatabase> {
    let path = path.as_ref();
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::Load(format!("cannot read {}: {e}", path.display())))?;
    LensDatabase::parse(&text)
}

/// Uniform draw over records (optionally restricted to one category),
/// determined entirely by `seed`.
pub fn sample_profile(db: &LensDatabase, seed: u64, category: Option<LensCategory>) -> Result<&LensRecord> {
    let eligible: Vec<&LensRecord> = db
        .records
        .iter()
        .filter(|r| category.is_none_or(|c| r.category == c))
        .collect();
    if eligible.is_empty() {
        return Err(Error::param(format!(
            "no record in category {}",
            category.map_or("<any>", LensCategory::as_str)
        )));
    }
    let mut rng = seeded(seed);
    Ok(eligible[index(&mut rng, eligible.len())])
}

/// Applies one field, built once from `record`, to every frame.
pub fn augment_sequence(images: &[Image], record: &LensRecord) -> Result<(Vec<Image>, DistortionField)> {
    let first = images
        .first()
        .ok_or_else(|| Error::param("augment_sequence needs at least one image"))?;
    let (w, h) = (first.width(), first.height());
    if let Some(bad) = images.iter().position(|im| (im.width(), im.height()) != (w, h)) {
        return Err(Error::param(format!(
            "frame {bad} is {}x{}, expected {w}x{h}",
            images[bad].width(),
            images[bad].height()
        )));
    }
    let field = record.field_for(w, h)?;
    let flow = field.to_flow();
    let out = images.iter().map(|im| remap_image(im, &flow)).collect::<Result<_>>()?;
    Ok((out, field))
}

/// The synthetic 12-record fixture: two records per category. Parametric
/// records use closed-form profiles; the symmetric and asymmetric records are
/// 33x33 grids, the asymmetric ones adding a smooth seeded perturbation.
pub fn synthetic_fixture() -> Result<Vec<LensRecord>> {
    let (w, h) = FIXTURE_IMAGE;
    let radius = default_normalization_radius(w, h);
    let rec = |name: &str, fov: f64, fnum: f64, category: LensCategory, profile: LensProfile| LensRecord {
        name: name.into(),
        fov_deg: fov,
        f_number: fnum,
        // Small-angle relation NA ≈ 1 / (2N).
        numerical_aperture: 1.0 / (2.0 * fnum),
        category,
        profile,
    };
    let par = LensProfile::Parametric;
    let symmetric_a = field_from_profile(
        &ParametricProfile::radial(-0.12, 0.08, radius)?,
        FIELD_GRID,
        FIELD_GRID,
        w,
        h,
    )?;
    let symmetric_b = field_from_profile(
        &ParametricProfile::radial(0.06, -0.04, radius)?,
        FIELD_GRID,
        FIELD_GRID,
        w,
        h,
    )?;
    let asym_base = field_from_profile(
        &ParametricProfile::radial(-0.08, 0.0, radius)?,
        FIELD_GRID,
        FIELD_GRID,
        w,
        h,
    )?;
    let records = vec![
        rec(
            "synthetic-barrel-wide",
            84.0,
            2.8,
            LensCategory::Barrel,
            par(ParametricProfile::radial(-0.22, 0.03, radius)?),
        ),
        rec(
            "synthetic-barrel-mild",
            62.0,
            4.0,
            LensCategory::Barrel,
            par(ParametricProfile::radial(-0.08, 0.0, radius)?),
        ),
        rec(
            "synthetic-pincushion-tele",
            24.0,
            5.6,
            LensCategory::Pincushion,
            par(ParametricProfile::radial(0.12, 0.02, radius)?),
        ),
        rec(
            "synthetic-pincushion-zoom",
            38.0,
            3.5,
            LensCategory::Pincushion,
            par(ParametricProfile::radial(0.2, 0.0, radius)?),
        ),
        rec(
            "synthetic-fisheye-180",
            180.0,
            2.0,
            LensCategory::Fisheye,
            par(ParametricProfile::kannala_brandt([0.3, 0.05, 0.0, 0.0], radius)?),
        ),
        rec(
            "synthetic-fisheye-200",
            200.0,
            2.8,
            LensCategory::Fisheye,
            par(ParametricProfile::kannala_brandt([0.2, 0.08, 0.01, 0.0], radius)?),
        ),
        rec(
            "synthetic-shear-left",
            55.0,
            2.8,
            LensCategory::Shear,
            par(ParametricProfile::shear(0.05)?),
        ),
        rec(
            "synthetic-shear-right",
            55.0,
            4.0,
            LensCategory::Shear,
            par(ParametricProfile::shear(-0.08)?),
        ),
        rec(
            "synthetic-symmetric-mustache",
            72.0,
            2.0,
            LensCategory::Symmetric,
            LensProfile::Field(symmetric_a),
        ),
        rec(
            "synthetic-symmetric-soft",
            48.0,
            8.0,
            LensCategory::Symmetric,
            LensProfile::Field(symmetric_b),
        ),
        rec(
            "synthetic-asymmetric-tilt",
            66.0,
            2.8,
            LensCategory::Asymmetric,
            LensProfile::Field(perturbed(&asym_base, FIXTURE_ASYMMETRIC_SEEDS[0])?),
        ),
        rec(
            "synthetic-asymmetric-decenter",
            58.0,
            3.5,
            LensCategory::Asymmetric,
            LensProfile::Field(perturbed(&asym_base, FIXTURE_ASYMMETRIC_SEEDS[1])?),
        ),
    ];
    Ok(records)
}

/// Adds a seeded low-frequency sinusoidal displacement (a few pixels) to
/// every node, breaking radial symmetry while keeping the field smooth.
fn perturbed(base: &DistortionField, seed: u64) -> Result<DistortionField> {
    use rand::Rng;
    let mut rng = seeded(seed);
    let mut terms = Vec::new();
    for _ in 0..3 {
        let amp = Vector2::new(rng.random_range(-6.0..6.0), rng.random_range(-6.0..6.0));
        let freq = (rng.random_range(0.5..1.5), rng.random_range(0.5..1.5));
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        terms.push((amp, freq, phase));
    }
    let (rows, cols) = (base.grid_rows(), base.grid_cols());
    let mut disp = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            let n = base.node_normalized(i, j);
            let mut d = base.node(i, j);
            for (amp, (fu, fv), phase) in &terms {
                d += amp * (std::f64::consts::PI * (fu * n.x + fv * n.y) + phase).sin();
            }
            disp.push(d);
        }
    }
    let (w, h) = base.image_size();
    DistortionField::new(rows, cols, w, h, disp)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> Vec<LensRecord> {
        synthetic_fixture().unwrap()
    }

    #[test]
    fn fixture_has_two_per_category() {
        let f = fixture();
        assert_eq!(f.len(), 12);
        for c in LensCategory::ALL {
            assert_eq!(f.iter().filter(|r| r.category == c).count(), 2, "{c}");
        }
    }

    #[test]
    fn fixture_records_validate() {
        for r in fixture() {
            r.validate().unwrap_or_else(|e| panic!("{}: {e}", r.name));
        }
    }

    #[test]
    fn empty_database() {
        match LensDatabase::parse("\n\n") {
            Err(Error::Load(msg)) => assert_eq!(msg, "empty database"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn duplicate_names_are_named() {
        let r = fixture().remove(0);
        let err = LensDatabase::new(vec![r.clone(), r]).unwrap_err().to_string();
        assert!(err.contains("duplicate record name \"synthetic-barrel-wide\""), "{err}");
    }

    #[test]
    fn bad_record_is_named() {
        let mut r = fixture().remove(0);
        r.numerical_aperture = 1.5;
        r.name = "broken".into();
        let text = format!("{}\n", serde_json::to_string(&r).unwrap());
        let err = LensDatabase::parse(&text).unwrap_err().to_string();
        assert!(err.contains("\"broken\""), "{err}");
    }

    #[test]
    fn category_parse() {
        assert_eq!("fisheye".parse::<LensCategory>().unwrap(), LensCategory::Fisheye);
        assert!("wide".parse::<LensCategory>().is_err());
    }
}
