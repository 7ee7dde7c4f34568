//! Synthetic fixtures and image-quality oracles: soft checkerboards, PSNR,
//! edge tracing with line-fit residuals, random cameras and orbit paths.

use nalgebra::{Rotation3, Vector3};
use rand::Rng;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::ray_camera::{Intrinsics, Pose};
use crate::rng::SeededRng;

/// Grayscale checkerboard with cells of `cell` pixels whose edges ramp over
/// roughly `cell / 8` pixels. Soft edges keep bilinear resampling error small,
/// so resampling round trips measure geometry rather than aliasing.
pub fn soft_checkerboard(width: u32, height: u32, cell: f64) -> Result<Image> {
    if !(cell > 0.0) {
        return Err(Error::param("checkerboard cell size must be positive"));
    }
    let k = std::f64::consts::PI / cell;
    Image::from_fn(width, height, |x, y| {
        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
        let s = (k * px).sin() * (k * py).sin();
        (127.5 + 127.5 * (4.0 * s).tanh()) as f32
    })
}

/// Hard-edged checkerboard, 0/255.
pub fn checkerboard(width: u32, height: u32, cell: u32) -> Result<Image> {
    if cell == 0 {
        return Err(Error::param("checkerboard cell size must be positive"));
    }
    Image::from_fn(width, height, |x, y| {
        if ((x / cell) + (y / cell)).is_multiple_of(2) {
            0.0
        } else {
            255.0
        }
    })
}

/// Peak signal-to-noise ratio (peak 255) over the centered crop covering
/// `crop` of each dimension (e.g. 0.8 for the interior 80%). Identical crops
/// give `f64::INFINITY`.
pub fn psnr(a: &Image, b: &Image, crop: f64) -> Result<f64> {
    if (a.width(), a.height(), a.channels()) != (b.width(), b.height(), b.channels()) {
        return Err(Error::param("PSNR needs images of identical shape"));
    }
    if !(crop > 0.0 && crop <= 1.0) {
        return Err(Error::param(format!("crop fraction must lie in (0, 1], got {crop}")));
    }
    let (w, h) = (a.width(), a.height());
    let mx = ((w as f64 * (1.0 - crop) / 2.0).round() as u32).min(w.saturating_sub(1) / 2);
    let my = ((h as f64 * (1.0 - crop) / 2.0).round() as u32).min(h.saturating_sub(1) / 2);
    let mut se = 0.0;
    let mut n = 0usize;
    for y in my..h - my {
        for x in mx..w - mx {
            for c in 0..a.channels() {
                let d = a.get(x, y, c) as f64 - b.get(x, y, c) as f64;
                se += d * d;
                n += 1;
            }
        }
    }
    let mse = se / n as f64;
    Ok(if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (255.0 * 255.0 / mse).log10()
    })
}

/// Sub-pixel positions `(x, y)` where a roughly vertical edge near column
/// `x0` crosses the mid-gray level, one per row in `rows`. Rows where no
/// crossing with contrast above `min_contrast` lies within `x0 ± window` are
/// skipped; the crossing nearest `x0` wins.
pub fn trace_vertical_edge(
    image: &Image,
    x0: f64,
    window: f64,
    rows: std::ops::Range<u32>,
    min_contrast: f32,
) -> Vec<(f64, f64)> {
    let gray = image.to_gray();
    let w = gray.width();
    let lo = (x0 - window).floor().max(0.0) as u32;
    let hi = ((x0 + window).ceil() as u32).min(w - 1);
    let mut out = Vec::new();
    for y in rows.start..rows.end.min(gray.height()) {
        let mut best: Option<f64> = None;
        for x in lo..hi {
            let (a, b) = (gray.get(x, y, 0) - 127.5, gray.get(x + 1, y, 0) - 127.5);
            if (a < 0.0) != (b < 0.0) && (a - b).abs() >= min_contrast {
                // Pixel centers sit at x + 0.5.
                let xc = x as f64 + 0.5 + (a / (a - b)) as f64;
                if best.is_none_or(|bx| (xc - x0).abs() < (bx - x0).abs()) {
                    best = Some(xc);
                }
            }
        }
        if let Some(xc) = best {
            out.push((xc, y as f64 + 0.5));
        }
    }
    out
}

/// RMS horizontal residual of the least-squares line `x = a + b·y`.
pub fn line_fit_residual(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 3 {
        return Err(Error::degenerate("line fit needs at least three points"));
    }
    let n = points.len() as f64;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.1 - my) * (p.0 - mx)).sum();
    if syy == 0.0 {
        return Err(Error::degenerate("edge points share one row"));
    }
    let b = sxy / syy;
    let ss: f64 = points
        .iter()
        .map(|p| {
            let r = p.0 - (mx + b * (p.1 - my));
            r * r
        })
        .sum();
    Ok((ss / n).sqrt())
}

/// Random pinhole: focal length uniform in `[f_min, f_max]`, principal point
/// within 5% of the image center.
pub fn random_intrinsics(rng: &mut SeededRng, f_min: f64, f_max: f64, w: u32, h: u32) -> Result<Intrinsics> {
    let f = rng.random_range(f_min..=f_max);
    let cx = w as f64 / 2.0 + rng.random_range(-0.05..=0.05) * w as f64;
    let cy = h as f64 / 2.0 + rng.random_range(-0.05..=0.05) * h as f64;
    Intrinsics::new(f, f, cx, cy)
}

/// `n` cameras on a jittered circle of `radius` around the origin, all looking
/// at the origin.
pub fn orbit_poses(rng: &mut SeededRng, n: usize, radius: f64) -> Result<Vec<Pose>> {
    let mut poses = Vec::with_capacity(n);
    for i in 0..n {
        let a = std::f64::consts::TAU * i as f64 / n.max(1) as f64 + rng.random_range(-0.1..0.1);
        let center = Vector3::new(radius * a.cos(), rng.random_range(-0.1..0.1) * radius, radius * a.sin());
        poses.push(Pose::look_at(center, Vector3::zeros(), Vector3::y())?);
    }
    Ok(poses)
}

/// Rotation by `deg` degrees about a uniformly random axis.
pub fn random_rotation_by(rng: &mut SeededRng, deg: f64) -> Rotation3<f64> {
    let axis = loop {
        let v = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            break nalgebra::Unit::new_normalize(v);
        }
    };
    Rotation3::from_axis_angle(&axis, deg.to_radians())
}
