//! Canny edge detector: Gaussian blur, Sobel gradients, non-maximum
//! suppression and double-threshold hysteresis.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CannyParams {
    pub sigma: f64,
    /// Odd blur kernel width.
    pub kernel: usize,
    pub low: f64,
    pub high: f64,
}

impl CannyParams {
    pub fn new(low: f64, high: f64) -> Self {
        CannyParams {
            sigma: 1.4,
            kernel: 5,
            low,
            high,
        }
    }
}

/// Binary edge map, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeMap {
    pub width: usize,
    pub height: usize,
    pub edges: Vec<bool>,
}

impl EdgeMap {
    pub fn count(&self) -> usize {
        self.edges.iter().filter(|&&e| e).count()
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.edges[y * self.width + x]
    }

    /// 0/255 grayscale image.
    pub fn to_image(&self) -> Image {
        let data = self.edges.iter().map(|&e| if e { 255.0 } else { 0.0 }).collect();
        Image::from_data(self.width as u32, self.height as u32, 1, data).expect("edge map dimensions are positive")
    }

    /// Edge flags as 0/1 values.
    pub fn to_f64(&self) -> Vec<f64> {
        self.edges.iter().map(|&e| if e { 1.0 } else { 0.0 }).collect()
    }
}

fn gaussian_kernel(sigma: f64, size: usize) -> Vec<f64> {
    let half = (size / 2) as isize;
    let k: Vec<f64> = (-half..=half)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.into_iter().map(|v| v / sum).collect()
}

struct Plane<'a> {
    w: usize,
    h: usize,
    data: &'a [f64],
}

impl Plane<'_> {
    /// Replicated-border read.
    fn at(&self, x: isize, y: isize) -> f64 {
        let xc = x.clamp(0, self.w as isize - 1) as usize;
        let yc = y.clamp(0, self.h as isize - 1) as usize;
        self.data[yc * self.w + xc]
    }
}

fn blur(src: &[f64], w: usize, h: usize, kernel: &[f64]) -> Vec<f64> {
    let half = (kernel.len() / 2) as isize;
    let p = Plane { w, h, data: src };
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, kv)| kv * p.at(x as isize + k as isize - half, y as isize))
                .sum();
        }
    }
    let p = Plane { w, h, data: &tmp };
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, kv)| kv * p.at(x as isize, y as isize + k as isize - half))
                .sum();
        }
    }
    out
}

pub fn edge_map(image: &Image, params: CannyParams) -> Result<EdgeMap> {
    if !(params.low >= 0.0 && params.low <= params.high) {
        return Err(Error::param(format!(
            "need 0 <= low <= high, got low={} high={}",
            params.low, params.high
        )));
    }
    if params.kernel.is_multiple_of(2) || !(params.sigma > 0.0) {
        return Err(Error::param("blur kernel must be odd and sigma positive"));
    }
    let gray = image.to_gray();
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    let src: Vec<f64> = gray.data().iter().map(|&v| v as f64).collect();
    let smooth = blur(&src, w, h, &gaussian_kernel(params.sigma, params.kernel));

    let p = Plane { w, h, data: &smooth };
    let mut mag = vec![0.0; w * h];
    let mut grad = vec![(0.0, 0.0); w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let gx = (p.at(x + 1, y - 1) + 2.0 * p.at(x + 1, y) + p.at(x + 1, y + 1))
                - (p.at(x - 1, y - 1) + 2.0 * p.at(x - 1, y) + p.at(x - 1, y + 1));
            let gy = (p.at(x - 1, y + 1) + 2.0 * p.at(x, y + 1) + p.at(x + 1, y + 1))
                - (p.at(x - 1, y - 1) + 2.0 * p.at(x, y - 1) + p.at(x + 1, y - 1));
            let idx = y as usize * w + x as usize;
            mag[idx] = gx.hypot(gy);
            grad[idx] = (gx, gy);
        }
    }

    // Non-maximum suppression against the magnitude interpolated one pixel
    // along the gradient on either side. Ties keep the pixel on the negative
    // side only, so an ideal step yields a one-pixel line.
    let m_at = |x: f64, y: f64| -> f64 {
        let (x0, y0) = (x.floor(), y.floor());
        let (fx, fy) = (x - x0, y - y0);
        let (x0, y0) = (x0 as usize, y0 as usize);
        let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
        mag[y0 * w + x0] * (1.0 - fx) * (1.0 - fy)
            + mag[y0 * w + x1] * fx * (1.0 - fy)
            + mag[y1 * w + x0] * (1.0 - fx) * fy
            + mag[y1 * w + x1] * fx * fy
    };
    let mut thin = vec![0.0; w * h];
    for y in 1..h.saturating_sub(1) {
        for x in 1..w.saturating_sub(1) {
            let idx = y * w + x;
            let m = mag[idx];
            if m == 0.0 {
                continue;
            }
            let (ux, uy) = (grad[idx].0 / m, grad[idx].1 / m);
            let (xf, yf) = (x as f64, y as f64);
            let fwd = m_at(xf + ux, yf + uy);
            let back = m_at(xf - ux, yf - uy);
            if m >= fwd && m > back {
                thin[idx] = m;
            }
        }
    }

    let mut edges = vec![false; w * h];
    let mut queue = VecDeque::new();
    for (idx, &m) in thin.iter().enumerate() {
        if m >= params.high && m > 0.0 {
            edges[idx] = true;
            queue.push_back(idx);
        }
    }
    while let Some(idx) = queue.pop_front() {
        let (x, y) = ((idx % w) as isize, (idx / w) as isize);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let n = ny as usize * w + nx as usize;
                if !edges[n] && thin[n] >= params.low && thin[n] > 0.0 {
                    edges[n] = true;
                    queue.push_back(n);
                }
            }
        }
    }
    Ok(EdgeMap {
        width: w,
        height: h,
        edges,
    })
}
