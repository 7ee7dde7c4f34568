use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// `n x h x w` stack of single-channel planes, plane-major then row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageStack {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl ImageStack {
    pub fn new(n: usize, h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        if n == 0 || h == 0 || w == 0 {
            return Err(Error::param("stack dimensions must be positive"));
        }
        if data.len() != n * h * w {
            return Err(Error::param(format!(
                "stack buffer of {} values does not match {n}x{h}x{w}",
                data.len()
            )));
        }
        Ok(ImageStack { n, h, w, data })
    }

    pub fn get(&self, img: usize, y: usize, x: usize) -> f64 {
        self.data[(img * self.h + y) * self.w + x]
    }
}

/// Patch tokens: `len = n·h·w / p²` rows of `p²` values.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenGrid {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub patch: usize,
    pub values: DMatrix<f64>,
}

impl TokenGrid {
    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }
}

/// Per-token scalar edge weights.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeEmbedding(pub Vec<f64>);

/// Fixed affine map applied to pooled edge density.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeAffine {
    pub scale: f64,
    pub offset: f64,
}

impl Default for EdgeAffine {
    fn default() -> Self {
        EdgeAffine {
            scale: 1.0,
            offset: 0.0,
        }
    }
}

fn check_divisible(h: usize, w: usize, p: usize) -> Result<()> {
    if p == 0 || !h.is_multiple_of(p) || !w.is_multiple_of(p) {
        return Err(Error::param(format!(
            "image {h}x{w} is not divisible into {p}x{p} patches"
        )));
    }
    Ok(())
}

/// Non-overlapping `p x p` blocks as tokens; image-major, then row-major over
/// patches, with each block flattened row-major.
pub fn patchify(images: &ImageStack, p: usize) -> Result<TokenGrid> {
    check_divisible(images.h, images.w, p)?;
    let (ph, pw) = (images.h / p, images.w / p);
    let len = images.n * ph * pw;
    let mut values = DMatrix::zeros(len, p * p);
    let mut token = 0;
    for img in 0..images.n {
        for py in 0..ph {
            for px in 0..pw {
                for dy in 0..p {
                    for dx in 0..p {
                        values[(token, dy * p + dx)] = images.get(img, py * p + dy, px * p + dx);
                    }
                }
                token += 1;
            }
        }
    }
    Ok(TokenGrid {
        n: images.n,
        h: images.h,
        w: images.w,
        patch: p,
        values,
    })
}

pub fn unpatchify(tokens: &TokenGrid) -> Result<ImageStack> {
    let p = tokens.patch;
    check_divisible(tokens.h, tokens.w, p)?;
    let (ph, pw) = (tokens.h / p, tokens.w / p);
    if tokens.len() != tokens.n * ph * pw || tokens.dim() != p * p {
        return Err(Error::param("token grid shape does not match its declared image size"));
    }
    let mut data = vec![0.0; tokens.n * tokens.h * tokens.w];
    let mut token = 0;
    for img in 0..tokens.n {
        for py in 0..ph {
            for px in 0..pw {
                for dy in 0..p {
                    for dx in 0..p {
                        let y = py * p + dy;
                        let x = px * p + dx;
                        data[(img * tokens.h + y) * tokens.w + x] = tokens.values[(token, dy * p + dx)];
                    }
                }
                token += 1;
            }
        }
    }
    ImageStack::new(tokens.n, tokens.h, tokens.w, data)
}

/// Mean edge density of each `p x p` patch mapped through `affine`.
pub fn edge_embedding(edge_maps: &ImageStack, p: usize, affine: EdgeAffine) -> Result<EdgeEmbedding> {
    let tokens = patchify(edge_maps, p)?;
    let area = (p * p) as f64;
    Ok(EdgeEmbedding(
        tokens
            .values
            .row_iter()
            .map(|r| affine.scale * (r.sum() / area) + affine.offset)
            .collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_patch_row_major() {
        let s = ImageStack::new(1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let t = patchify(&s, 2).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(
            t.values.row(0).iter().copied().collect::<Vec<_>>(),
            vec![1.0, 2.0, 3.0, 4.0]
        );
    }

    #[test]
    fn four_patches_top_left_first() {
        let s = ImageStack::new(1, 4, 4, (0..16).map(|v| v as f64).collect()).unwrap();
        let t = patchify(&s, 2).unwrap();
        assert_eq!(t.len(), 4);
        assert_eq!(
            t.values.row(0).iter().copied().collect::<Vec<_>>(),
            vec![0.0, 1.0, 4.0, 5.0]
        );
        assert_eq!(
            t.values.row(1).iter().copied().collect::<Vec<_>>(),
            vec![2.0, 3.0, 6.0, 7.0]
        );
        assert_eq!(
            t.values.row(3).iter().copied().collect::<Vec<_>>(),
            vec![10.0, 11.0, 14.0, 15.0]
        );
    }

    #[test]
    fn token_count_matches_stack() {
        let s = ImageStack::new(3, 8, 12, vec![0.0; 3 * 8 * 12]).unwrap();
        let t = patchify(&s, 4).unwrap();
        assert_eq!(t.len(), 3 * 8 * 12 / 16);
        assert!(patchify(&s, 5).is_err());
    }

    #[test]
    fn embedding_examples() {
        let affine = EdgeAffine {
            scale: 2.0,
            offset: 0.5,
        };
        let zero = ImageStack::new(1, 4, 4, vec![0.0; 16]).unwrap();
        assert_eq!(edge_embedding(&zero, 2, affine).unwrap().0, vec![0.5; 4]);
        let full = ImageStack::new(1, 2, 2, vec![1.0; 4]).unwrap();
        assert_eq!(edge_embedding(&full, 2, affine).unwrap().0, vec![2.5]);
        let half = ImageStack::new(1, 2, 2, vec![1.0, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!(edge_embedding(&half, 2, affine).unwrap().0, vec![1.5]);
        assert_eq!(edge_embedding(&half, 2, EdgeAffine::default()).unwrap().0, vec![0.5]);
    }
}
