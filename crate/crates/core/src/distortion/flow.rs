use std::io::{Read, Write};
use std::path::Path;

use nalgebra::Vector2;

use crate::error::{Error, Result};
use crate::ray_camera::{patch_center, Intrinsics, Pose, RayBundle};

const FLOW_MAGIC: &[u8; 4] = b"RCFL";

/// Dense per-pixel backward flow: output pixel `p` reads the input at `p + flow(p)`.
///
/// `valid` is cleared where the flow could not be computed; such pixels carry
/// zero flow.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowMap {
    width: u32,
    height: u32,
    flow: Vec<Vector2<f64>>,
    valid: Vec<bool>,
}

impl FlowMap {
    pub fn new(width: u32, height: u32, flow: Vec<Vector2<f64>>) -> Result<Self> {
        let n = width as usize * height as usize;
        Self::with_mask(width, height, flow, vec![true; n])
    }

    pub fn with_mask(width: u32, height: u32, flow: Vec<Vector2<f64>>, valid: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::param("flow dimensions must be positive"));
        }
        let n = width as usize * height as usize;
        if flow.len() != n || valid.len() != n {
            return Err(Error::param(format!(
                "{width}x{height} flow needs {n} vectors, got {}",
                flow.len()
            )));
        }
        if flow.iter().any(|f| !(f.x.is_finite() && f.y.is_finite())) {
            return Err(Error::param("flow vectors must be finite"));
        }
        Ok(FlowMap {
            width,
            height,
            flow,
            valid,
        })
    }

    pub fn zeros(width: u32, height: u32) -> Result<Self> {
        Self::new(width, height, vec![Vector2::zeros(); width as usize * height as usize])
    }

    pub fn constant(width: u32, height: u32, v: Vector2<f64>) -> Result<Self> {
        Self::new(width, height, vec![v; width as usize * height as usize])
    }

    /// Flow from a function of the pixel-center location.
    pub fn from_fn(width: u32, height: u32, f: impl Fn(Vector2<f64>) -> Vector2<f64>) -> Self {
        let mut flow = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                flow.push(f(Vector2::new(x as f64 + 0.5, y as f64 + 0.5)));
            }
        }
        let n = flow.len();
        FlowMap {
            width,
            height,
            flow,
            valid: vec![true; n],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn vectors(&self) -> &[Vector2<f64>] {
        &self.flow
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn get(&self, x: u32, y: u32) -> Vector2<f64> {
        self.flow[y as usize * self.width as usize + x as usize]
    }

    pub fn is_valid(&self, x: u32, y: u32) -> bool {
        self.valid[y as usize * self.width as usize + x as usize]
    }

    pub fn max_magnitude(&self) -> f64 {
        self.flow.iter().map(|f| f.norm()).fold(0.0, f64::max)
    }

    /// Bilinear sample at a continuous pixel location, clamped to the pixel-center lattice.
    pub fn sample(&self, p: &Vector2<f64>) -> Vector2<f64> {
        let gx = (p.x - 0.5).clamp(0.0, (self.width - 1) as f64);
        let gy = (p.y - 0.5).clamp(0.0, (self.height - 1) as f64);
        let x0 = gx.floor() as u32;
        let y0 = gy.floor() as u32;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = gx - x0 as f64;
        let fy = gy - y0 as f64;
        self.get(x0, y0) * ((1.0 - fx) * (1.0 - fy))
            + self.get(x1, y0) * (fx * (1.0 - fy))
            + self.get(x0, y1) * ((1.0 - fx) * fy)
            + self.get(x1, y1) * (fx * fy)
    }

    /// Backward flow of the inverse warp: for each pixel `q` finds `p` with
    /// `p + flow(p) = q` by fixed-point iteration and stores `p - q`.
    pub fn inverted(&self, tol: f64, max_iter: usize) -> Result<FlowMap> {
        let mut out = Vec::with_capacity(self.flow.len());
        let mut worst: f64 = 0.0;
        for y in 0..self.height {
            for x in 0..self.width {
                let q = Vector2::new(x as f64 + 0.5, y as f64 + 0.5);
                let mut p = q - self.sample(&q);
                let mut res = (p + self.sample(&p) - q).norm();
                for _ in 0..max_iter {
                    if res < tol * 1e-3 {
                        break;
                    }
                    p = q - self.sample(&p);
                    res = (p + self.sample(&p) - q).norm();
                }
                worst = worst.max(res);
                out.push(p - q);
            }
        }
        if worst >= tol {
            return Err(Error::Convergence {
                iterations: max_iter,
                worst_residual: worst,
            });
        }
        FlowMap::with_mask(self.width, self.height, out, self.valid.clone())
    }

    /// `RCFL` binary: magic, `u32` width, `u32` height, then little-endian
    /// `f32` `(dx, dy)` pairs row-major.
    pub fn encode(&self, out: &mut impl Write) -> Result<()> {
        out.write_all(FLOW_MAGIC)?;
        out.write_all(&self.width.to_le_bytes())?;
        out.write_all(&self.height.to_le_bytes())?;
        for f in &self.flow {
            out.write_all(&(f.x as f32).to_le_bytes())?;
            out.write_all(&(f.y as f32).to_le_bytes())?;
        }
        Ok(())
    }

    pub fn decode(input: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if &magic != FLOW_MAGIC {
            return Err(Error::Format(format!("bad flow magic {magic:?}")));
        }
        let mut word = [0u8; 4];
        input.read_exact(&mut word)?;
        let width = u32::from_le_bytes(word);
        input.read_exact(&mut word)?;
        let height = u32::from_le_bytes(word);
        let n = width as usize * height as usize;
        let mut raw = vec![0u8; n * 8];
        input
            .read_exact(&mut raw)
            .map_err(|e| Error::Format(format!("truncated flow payload: {e}")))?;
        let flow = raw
            .chunks_exact(8)
            .map(|c| {
                let dx = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
                let dy = f32::from_le_bytes([c[4], c[5], c[6], c[7]]);
                Vector2::new(dx as f64, dy as f64)
            })
            .collect();
        FlowMap::new(width, height, flow)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.encode(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::decode(&mut f)
    }
}

/// Per-patch deviation of a bundle from a pinhole camera.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchFlow {
    pub rows: usize,
    pub cols: usize,
    /// `ideal - patch_pixel` per patch, zero where invalid.
    pub flow: Vec<Vector2<f64>>,
    pub valid: Vec<bool>,
}

/// Projects each world ray direction through the pinhole `(intrinsics, pose)`
/// and records `ideal pixel - patch pixel` at the patch grid.
pub fn patch_flow_from_rays(
    bundle: &RayBundle,
    intrinsics: &Intrinsics,
    pose: &Pose,
    image_w: u32,
    image_h: u32,
) -> Result<PatchFlow> {
    intrinsics.validate()?;
    if image_w == 0 || image_h == 0 {
        return Err(Error::param("image dimensions must be positive"));
    }
    let (rows, cols) = (bundle.rows(), bundle.cols());
    let mut flow = Vec::with_capacity(bundle.len());
    let mut valid = Vec::with_capacity(bundle.len());
    for i in 0..rows {
        for j in 0..cols {
            let d = pose.direction_to_camera(&bundle.directions()[i * cols + j]);
            let pixel = patch_center(i, j, rows, cols, image_w, image_h);
            match intrinsics.project(&d) {
                Some(ideal) => {
                    flow.push(ideal - pixel);
                    valid.push(true);
                }
                None => {
                    flow.push(Vector2::zeros());
                    valid.push(false);
                }
            }
        }
    }
    Ok(PatchFlow {
        rows,
        cols,
        flow,
        valid,
    })
}

/// Dense version of [`patch_flow_from_rays`], bilinearly upsampled from patch
/// centers to pixel centers. A pixel is invalid if any patch it blends is.
pub fn flow_from_rays(
    bundle: &RayBundle,
    intrinsics: &Intrinsics,
    pose: &Pose,
    image_w: u32,
    image_h: u32,
) -> Result<FlowMap> {
    let patches = patch_flow_from_rays(bundle, intrinsics, pose, image_w, image_h)?;
    Ok(densify(&patches, image_w, image_h))
}

fn densify(patches: &PatchFlow, w: u32, h: u32) -> FlowMap {
    let (rows, cols) = (patches.rows, patches.cols);
    let n = w as usize * h as usize;
    let mut flow = Vec::with_capacity(n);
    let mut valid = Vec::with_capacity(n);
    let axis = |pix: u32, size: u32, count: usize| -> (usize, usize, f64) {
        let g = ((pix as f64 + 0.5) * count as f64 / size as f64 - 0.5).clamp(0.0, (count - 1) as f64);
        let i0 = (g.floor() as usize).min(count.saturating_sub(2));
        let i1 = (i0 + 1).min(count - 1);
        (i0, i1, g - i0 as f64)
    };
    for y in 0..h {
        let (i0, i1, fy) = axis(y, h, rows);
        for x in 0..w {
            let (j0, j1, fx) = axis(x, w, cols);
            let taps = [
                (i0, j0, (1.0 - fx) * (1.0 - fy)),
                (i0, j1, fx * (1.0 - fy)),
                (i1, j0, (1.0 - fx) * fy),
                (i1, j1, fx * fy),
            ];
            let mut v = Vector2::zeros();
            let mut ok = true;
            for (i, j, wgt) in taps {
                if wgt == 0.0 {
                    continue;
                }
                let k = i * cols + j;
                v += patches.flow[k] * wgt;
                ok &= patches.valid[k];
            }
            if !ok {
                v = Vector2::zeros();
            }
            flow.push(v);
            valid.push(ok);
        }
    }
    FlowMap {
        width: w,
        height: h,
        flow,
        valid,
    }
}
