use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use super::flow::FlowMap;
use super::profile::{profile_displacement, ParametricProfile};
use crate::error::{Error, Result};
use crate::ray_camera::PixelDistortion;

/// Pixel displacements on a regular grid over normalized image coordinates.
///
/// Node `(i, j)` sits at normalized `(j / (cols - 1), i / (rows - 1))`, i.e. at
/// pixel `(j·w / (cols - 1), i·h / (rows - 1))` of the `w x h` image the field
/// was built for. Adding the displacement to a pixel gives its ideal location.
#[derive(Debug, Clone, PartialEq)]
pub struct DistortionField {
    grid_rows: usize,
    grid_cols: usize,
    image_width: u32,
    image_height: u32,
    displacements: Vec<Vector2<f64>>,
}

#[derive(Serialize, Deserialize)]
struct FieldRepr {
    grid_rows: usize,
    grid_cols: usize,
    units: String,
    image_width: u32,
    image_height: u32,
    displacements: Vec<[f64; 2]>,
}

impl Serialize for DistortionField {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        FieldRepr {
            grid_rows: self.grid_rows,
            grid_cols: self.grid_cols,
            units: "px".into(),
            image_width: self.image_width,
            image_height: self.image_height,
            displacements: self.displacements.iter().map(|d| [d.x, d.y]).collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for DistortionField {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = FieldRepr::deserialize(d)?;
        if r.units != "px" {
            return Err(serde::de::Error::custom(format!(
                "field units must be \"px\", got {:?}",
                r.units
            )));
        }
        DistortionField::new(
            r.grid_rows,
            r.grid_cols,
            r.image_width,
            r.image_height,
            r.displacements.into_iter().map(Vector2::from).collect(),
        )
        .map_err(serde::de::Error::custom)
    }
}

impl DistortionField {
    pub fn new(
        grid_rows: usize,
        grid_cols: usize,
        image_width: u32,
        image_height: u32,
        displacements: Vec<Vector2<f64>>,
    ) -> Result<Self> {
        if grid_rows < 2 || grid_cols < 2 {
            return Err(Error::param(format!(
                "distortion field grid must be at least 2x2, got {grid_rows}x{grid_cols}"
            )));
        }
        if image_width == 0 || image_height == 0 {
            return Err(Error::param("field image dimensions must be positive"));
        }
        if displacements.len() != grid_rows * grid_cols {
            return Err(Error::param(format!(
                "{grid_rows}x{grid_cols} field needs {} displacements, got {}",
                grid_rows * grid_cols,
                displacements.len()
            )));
        }
        if displacements.iter().any(|d| !(d.x.is_finite() && d.y.is_finite())) {
            return Err(Error::param("field displacements must be finite"));
        }
        Ok(DistortionField {
            grid_rows,
            grid_cols,
            image_width,
            image_height,
            displacements,
        })
    }

    pub fn zeros(grid_rows: usize, grid_cols: usize, image_width: u32, image_height: u32) -> Result<Self> {
        Self::new(
            grid_rows,
            grid_cols,
            image_width,
            image_height,
            vec![Vector2::zeros(); grid_rows * grid_cols],
        )
    }

    pub fn grid_rows(&self) -> usize {
        self.grid_rows
    }

    pub fn grid_cols(&self) -> usize {
        self.grid_cols
    }

    pub fn image_size(&self) -> (u32, u32) {
        (self.image_width, self.image_height)
    }

    pub fn displacements(&self) -> &[Vector2<f64>] {
        &self.displacements
    }

    pub fn node(&self, row: usize, col: usize) -> Vector2<f64> {
        self.displacements[row * self.grid_cols + col]
    }

    pub fn node_pixel(&self, row: usize, col: usize) -> Vector2<f64> {
        Vector2::new(
            col as f64 * self.image_width as f64 / (self.grid_cols - 1) as f64,
            row as f64 * self.image_height as f64 / (self.grid_rows - 1) as f64,
        )
    }

    pub fn node_normalized(&self, row: usize, col: usize) -> Vector2<f64> {
        Vector2::new(
            col as f64 / (self.grid_cols - 1) as f64,
            row as f64 / (self.grid_rows - 1) as f64,
        )
    }

    pub fn image_center(&self) -> Vector2<f64> {
        Vector2::new(self.image_width as f64 / 2.0, self.image_height as f64 / 2.0)
    }

    /// Displacement at a pixel location (continuous coordinates).
    pub fn displacement_at_pixel(&self, p: &Vector2<f64>) -> Vector2<f64> {
        sample_field(
            self,
            &Vector2::new(p.x / self.image_width as f64, p.y / self.image_height as f64),
        )
    }

    /// Same field expressed for another image size; displacements scale per axis.
    pub fn rescaled(&self, image_width: u32, image_height: u32) -> Result<Self> {
        let sx = image_width as f64 / self.image_width as f64;
        let sy = image_height as f64 / self.image_height as f64;
        Self::new(
            self.grid_rows,
            self.grid_cols,
            image_width,
            image_height,
            self.displacements
                .iter()
                .map(|d| Vector2::new(d.x * sx, d.y * sy))
                .collect(),
        )
    }

    /// Largest `|displacement| / distance-to-center` over nodes at least 5% of
    /// the half-diagonal away from the center.
    pub fn max_relative_displacement(&self) -> f64 {
        let c = self.image_center();
        let min_r = 0.05 * c.norm();
        let mut worst: f64 = 0.0;
        for i in 0..self.grid_rows {
            for j in 0..self.grid_cols {
                let r = (self.node_pixel(i, j) - c).norm();
                if r >= min_r {
                    worst = worst.max(self.node(i, j).norm() / r);
                }
            }
        }
        worst
    }

    /// Dense backward flow that renders the distorted view: output pixel `p`
    /// samples the input at `p + D(p)`.
    pub fn to_flow(&self) -> FlowMap {
        let (w, h) = self.image_size();
        FlowMap::from_fn(w, h, |p| self.displacement_at_pixel(&p))
    }

    /// Dense backward flow that undoes this field: per-pixel fixed-point inverse.
    pub fn inverse_flow(&self, tol: f64, max_iter: usize) -> Result<FlowMap> {
        let (w, h) = self.image_size();
        let mut flow = Vec::with_capacity(w as usize * h as usize);
        let mut worst: f64 = 0.0;
        for y in 0..h {
            for x in 0..w {
                let q = Vector2::new(x as f64 + 0.5, y as f64 + 0.5);
                let (p, res) = solve_inverse(self, &q, max_iter);
                worst = worst.max(res);
                flow.push(p - q);
            }
        }
        if worst >= tol {
            return Err(Error::Convergence {
                iterations: max_iter,
                worst_residual: worst,
            });
        }
        FlowMap::new(w, h, flow)
    }
}

impl PixelDistortion for DistortionField {
    /// Fields carry their own center; the argument is ignored.
    fn distort(&self, pixel: &Vector2<f64>, _center: &Vector2<f64>) -> Vector2<f64> {
        pixel + self.displacement_at_pixel(pixel)
    }
}

/// Samples the field at every node of a `grid_rows x grid_cols` grid; the
/// distortion center is the image center.
pub fn field_from_profile(
    profile: &ParametricProfile,
    grid_rows: usize,
    grid_cols: usize,
    image_w: u32,
    image_h: u32,
) -> Result<DistortionField> {
    let mut field = DistortionField::zeros(grid_rows, grid_cols, image_w, image_h)?;
    let c = field.image_center();
    for i in 0..grid_rows {
        for j in 0..grid_cols {
            let p = field.node_pixel(i, j);
            field.displacements[i * grid_cols + j] = profile_displacement(profile, &(p - c));
        }
    }
    Ok(field)
}

/// Bilinear interpolation at normalized coordinates; queries outside `[0, 1]²`
/// are clamped onto the boundary.
pub fn sample_field(field: &DistortionField, point: &Vector2<f64>) -> Vector2<f64> {
    let u = if point.x.is_nan() { 0.0 } else { point.x.clamp(0.0, 1.0) };
    let v = if point.y.is_nan() { 0.0 } else { point.y.clamp(0.0, 1.0) };
    let gx = u * (field.grid_cols - 1) as f64;
    let gy = v * (field.grid_rows - 1) as f64;
    let j0 = (gx.floor() as usize).min(field.grid_cols - 2);
    let i0 = (gy.floor() as usize).min(field.grid_rows - 2);
    let fx = gx - j0 as f64;
    let fy = gy - i0 as f64;
    let a = field.node(i0, j0);
    let b = field.node(i0, j0 + 1);
    let c = field.node(i0 + 1, j0);
    let d = field.node(i0 + 1, j0 + 1);
    a * ((1.0 - fx) * (1.0 - fy)) + b * (fx * (1.0 - fy)) + c * ((1.0 - fx) * fy) + d * (fx * fy)
}

/// Fixed-point solve of `x + D(x) = q`; returns `x` and the final residual.
fn solve_inverse(field: &DistortionField, q: &Vector2<f64>, max_iter: usize) -> (Vector2<f64>, f64) {
    let mut x = q - field.displacement_at_pixel(q);
    let mut res = (x + field.displacement_at_pixel(&x) - q).norm();
    for _ in 0..max_iter {
        if res == 0.0 {
            break;
        }
        x = q - field.displacement_at_pixel(&x);
        res = (x + field.displacement_at_pixel(&x) - q).norm();
    }
    (x, res)
}

/// Pixel `x` with `x + D(x) = q` to within `tol` pixels.
pub fn invert_point(field: &DistortionField, q: &Vector2<f64>, tol: f64, max_iter: usize) -> Result<Vector2<f64>> {
    let (x, res) = solve_inverse(field, q, max_iter);
    if res >= tol {
        return Err(Error::Convergence {
            iterations: max_iter,
            worst_residual: res,
        });
    }
    Ok(x)
}

/// Inverse field on the same grid: the node at pixel `p` stores `x - p` where
/// `x + D(x) = p`, found by the iteration `x ← p - D(x)`.
pub fn invert_field(field: &DistortionField, tol: f64, max_iter: usize) -> Result<DistortionField> {
    let mut out = field.clone();
    let mut worst: f64 = 0.0;
    for i in 0..field.grid_rows {
        for j in 0..field.grid_cols {
            let p = field.node_pixel(i, j);
            let (x, res) = solve_inverse(field, &p, max_iter);
            worst = worst.max(res);
            out.displacements[i * field.grid_cols + j] = x - p;
        }
    }
    if worst >= tol {
        return Err(Error::Convergence {
            iterations: max_iter,
            worst_residual: worst,
        });
    }
    Ok(out)
}
