use nalgebra::Vector2;

use super::flow::FlowMap;
use crate::error::{Error, Result};
use crate::image::Image;

/// Resamples `image` through a backward flow. Samples that land outside the
/// input are black.
pub fn remap_image(image: &Image, flow: &FlowMap) -> Result<Image> {
    if image.width() != flow.width() || image.height() != flow.height() {
        return Err(Error::param(format!(
            "flow is {}x{} but image is {}x{}",
            flow.width(),
            flow.height(),
            image.width(),
            image.height()
        )));
    }
    let (w, h, ch) = (image.width(), image.height(), image.channels());
    let mut out = Image::new(w, h, ch)?;
    let max_x = (w - 1) as f64;
    let max_y = (h - 1) as f64;
    const EDGE: f64 = 1e-9;
    for y in 0..h {
        for x in 0..w {
            let src = Vector2::new(x as f64, y as f64) + flow.get(x, y);
            if !(src.x >= -EDGE && src.x <= max_x + EDGE && src.y >= -EDGE && src.y <= max_y + EDGE) {
                continue;
            }
            let sx = src.x.clamp(0.0, max_x);
            let sy = src.y.clamp(0.0, max_y);
            let x0 = sx.floor() as u32;
            let y0 = sy.floor() as u32;
            let x1 = (x0 + 1).min(w - 1);
            let y1 = (y0 + 1).min(h - 1);
            let fx = (sx - x0 as f64) as f32;
            let fy = (sy - y0 as f64) as f32;
            for c in 0..ch {
                let v = image.get(x0, y0, c) * ((1.0 - fx) * (1.0 - fy))
                    + image.get(x1, y0, c) * (fx * (1.0 - fy))
                    + image.get(x0, y1, c) * ((1.0 - fx) * fy)
                    + image.get(x1, y1, c) * (fx * fy);
                out.set(x, y, c, v);
            }
        }
    }
    Ok(out)
}
