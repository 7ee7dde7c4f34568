//! Edge-aware multi-head attention over patch tokens.
//!
//! Each head of width `H_h = d / heads` computes row-softmax scores and mixes
//! the value rows. The per-token edge weight `e` enters the logits in one of
//! two ways, selected by [`EdgeBias`]:
//!
//! * [`EdgeBias::KeyLogits`] (default): `S_ij = (Q_i·K_j + e_j) / √H_h`. The
//!   edge weight of the attended token raises its logit for every query. A
//!   constant shift of `e` adds the same value to a whole score row, so the
//!   output is invariant to it.
//! * [`EdgeBias::QueryChannels`]: `S_ij = ((Q_i + e_i·1)·K_j) / √H_h`, adding
//!   `e_i` to every channel of query row `i`. A shift of `e` adds
//!   `c·Σ_c K_jc / √H_h`, which varies with `j`, so this form is not
//!   shift-invariant.
//!
//! Both forms reduce exactly to scaled dot-product attention at `e = 0`.

mod canny;
mod patch;

pub use canny::{edge_map, CannyParams, EdgeMap};
pub use patch::{edge_embedding, patchify, unpatchify, EdgeAffine, EdgeEmbedding, ImageStack, TokenGrid};

use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EdgeBias {
    #[default]
    KeyLogits,
    QueryChannels,
}

/// Gradients of the attention output with respect to every input.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionGrads {
    pub dq: DMatrix<f64>,
    pub dk: DMatrix<f64>,
    pub dv: DMatrix<f64>,
    pub de: Vec<f64>,
}

fn check_shapes(q: &DMatrix<f64>, k: &DMatrix<f64>, v: &DMatrix<f64>, e: Option<&[f64]>, heads: usize) -> Result<()> {
    let (l, d) = q.shape();
    if l == 0 || d == 0 {
        return Err(Error::param("attention inputs must be non-empty"));
    }
    if k.shape() != (l, d) || v.shape() != (l, d) {
        return Err(Error::param(format!(
            "Q, K, V must share shape {l}x{d}; got K {:?}, V {:?}",
            k.shape(),
            v.shape()
        )));
    }
    if heads == 0 || d % heads != 0 {
        return Err(Error::param(format!(
            "channel count {d} is not divisible by {heads} heads"
        )));
    }
    if let Some(e) = e {
        if e.len() != l {
            return Err(Error::param(format!(
                "edge embedding has {} entries, expected {l}",
                e.len()
            )));
        }
        if e.iter().any(|x| !x.is_finite()) {
            return Err(Error::param("edge embedding must be finite"));
        }
    }
    if q.iter().chain(k.iter()).chain(v.iter()).any(|x| !x.is_finite()) {
        return Err(Error::param("attention inputs must be finite"));
    }
    Ok(())
}

/// Row-softmax probabilities for one head, `L x L`.
fn head_probs(
    q: &DMatrix<f64>,
    k: &DMatrix<f64>,
    e: Option<(&[f64], EdgeBias)>,
    cols: std::ops::Range<usize>,
) -> DMatrix<f64> {
    let l = q.nrows();
    let scale = (cols.len() as f64).sqrt();
    let mut p = DMatrix::zeros(l, l);
    let mut row = vec![0.0; l];
    for i in 0..l {
        for (j, s) in row.iter_mut().enumerate() {
            let mut dot = 0.0;
            for c in cols.clone() {
                let qi = match e {
                    Some((e, EdgeBias::QueryChannels)) => q[(i, c)] + e[i],
                    _ => q[(i, c)],
                };
                dot += qi * k[(j, c)];
            }
            if let Some((e, EdgeBias::KeyLogits)) = e {
                dot += e[j];
            }
            *s = dot / scale;
        }
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for s in row.iter_mut() {
            *s = (*s - m).exp();
            sum += *s;
        }
        for (j, s) in row.iter().enumerate() {
            p[(i, j)] = s / sum;
        }
    }
    p
}

fn forward(
    q: &DMatrix<f64>,
    k: &DMatrix<f64>,
    v: &DMatrix<f64>,
    e: Option<(&[f64], EdgeBias)>,
    heads: usize,
) -> DMatrix<f64> {
    let (l, d) = q.shape();
    let hw = d / heads;
    let mut out = DMatrix::zeros(l, d);
    for h in 0..heads {
        let cols = h * hw..(h + 1) * hw;
        let p = head_probs(q, k, e, cols.clone());
        for i in 0..l {
            for c in cols.clone() {
                out[(i, c)] = (0..l).map(|j| p[(i, j)] * v[(j, c)]).sum();
            }
        }
    }
    out
}

/// Multi-head scaled dot-product attention without edge bias.
pub fn attention(q: &DMatrix<f64>, k: &DMatrix<f64>, v: &DMatrix<f64>, heads: usize) -> Result<DMatrix<f64>> {
    check_shapes(q, k, v, None, heads)?;
    Ok(forward(q, k, v, None, heads))
}

/// Edge-biased attention with the default [`EdgeBias::KeyLogits`] placement.
pub fn edge_attention(
    q: &DMatrix<f64>,
    k: &DMatrix<f64>,
    v: &DMatrix<f64>,
    e: &EdgeEmbedding,
    heads: usize,
) -> Result<DMatrix<f64>> {
    edge_attention_with(q, k, v, e, heads, EdgeBias::default())
}

pub fn edge_attention_with(
    q: &DMatrix<f64>,
    k: &DMatrix<f64>,
    v: &DMatrix<f64>,
    e: &EdgeEmbedding,
    heads: usize,
    bias: EdgeBias,
) -> Result<DMatrix<f64>> {
    check_shapes(q, k, v, Some(&e.0), heads)?;
    Ok(forward(q, k, v, Some((&e.0, bias)), heads))
}

/// Per-head softmax probabilities, for inspection and tests.
pub fn attention_probabilities(
    q: &DMatrix<f64>,
    k: &DMatrix<f64>,
    e: &EdgeEmbedding,
    heads: usize,
    bias: EdgeBias,
) -> Result<Vec<DMatrix<f64>>> {
    check_shapes(q, k, k, Some(&e.0), heads)?;
    let hw = q.ncols() / heads;
    Ok((0..heads)
        .map(|h| head_probs(q, k, Some((&e.0, bias)), h * hw..(h + 1) * hw))
        .collect())
}

pub fn edge_attention_grad(
    q: &DMatrix<f64>,
    k: &DMatrix<f64>,
    v: &DMatrix<f64>,
    e: &EdgeEmbedding,
    heads: usize,
    upstream: &DMatrix<f64>,
) -> Result<AttentionGrads> {
    edge_attention_grad_with(q, k, v, e, heads, upstream, EdgeBias::default())
}

/// Reverse-mode gradients of [`edge_attention_with`] under cotangent `upstream`.
pub fn edge_attention_grad_with(
    q: &DMatrix<f64>,
    k: &DMatrix<f64>,
    v: &DMatrix<f64>,
    e: &EdgeEmbedding,
    heads: usize,
    upstream: &DMatrix<f64>,
    bias: EdgeBias,
) -> Result<AttentionGrads> {
    check_shapes(q, k, v, Some(&e.0), heads)?;
    if upstream.shape() != q.shape() {
        return Err(Error::param(format!(
            "upstream shape {:?} does not match output shape {:?}",
            upstream.shape(),
            q.shape()
        )));
    }
    let (l, d) = q.shape();
    let hw = d / heads;
    let scale = (hw as f64).sqrt();
    let e = &e.0;
    let mut g = AttentionGrads {
        dq: DMatrix::zeros(l, d),
        dk: DMatrix::zeros(l, d),
        dv: DMatrix::zeros(l, d),
        de: vec![0.0; l],
    };
    for h in 0..heads {
        let cols = h * hw..(h + 1) * hw;
        let p = head_probs(q, k, Some((e, bias)), cols.clone());
        // dP_ij = Σ_c dO_ic V_jc, then softmax backward per row.
        let mut ds = DMatrix::zeros(l, l);
        for i in 0..l {
            let dp: Vec<f64> = (0..l)
                .map(|j| cols.clone().map(|c| upstream[(i, c)] * v[(j, c)]).sum())
                .collect();
            let inner: f64 = (0..l).map(|j| p[(i, j)] * dp[j]).sum();
            for j in 0..l {
                ds[(i, j)] = p[(i, j)] * (dp[j] - inner) / scale;
            }
        }
        for j in 0..l {
            for c in cols.clone() {
                g.dv[(j, c)] += (0..l).map(|i| p[(i, j)] * upstream[(i, c)]).sum::<f64>();
            }
        }
        let q_eff = |i: usize, c: usize| match bias {
            EdgeBias::QueryChannels => q[(i, c)] + e[i],
            EdgeBias::KeyLogits => q[(i, c)],
        };
        for i in 0..l {
            for c in cols.clone() {
                let dqi: f64 = (0..l).map(|j| ds[(i, j)] * k[(j, c)]).sum();
                g.dq[(i, c)] += dqi;
                if bias == EdgeBias::QueryChannels {
                    g.de[i] += dqi;
                }
            }
        }
        for j in 0..l {
            for c in cols.clone() {
                g.dk[(j, c)] += (0..l).map(|i| ds[(i, j)] * q_eff(i, c)).sum::<f64>();
            }
            if bias == EdgeBias::KeyLogits {
                g.de[j] += (0..l).map(|i| ds[(i, j)]).sum::<f64>();
            }
        }
    }
    Ok(g)
}
