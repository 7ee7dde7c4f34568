use nalgebra::DMatrix;
use proptest::prelude::*;
use raycal::attention::{
    attention, attention_probabilities, edge_attention, edge_attention_grad, edge_attention_grad_with,
    edge_attention_with, edge_embedding, edge_map, patchify, unpatchify, CannyParams, EdgeAffine, EdgeBias,
    EdgeEmbedding, ImageStack,
};
use raycal::image::Image;
use raycal::rng::{normal_vec, seeded};
use raycal::Error;

fn random_matrix(seed: u64, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_vec(rows, cols, normal_vec(&mut seeded(seed), rows * cols))
}

/// Independent reference: loops straight from the definition, key-logit bias.
fn reference_attention(q: &DMatrix<f64>, k: &DMatrix<f64>, v: &DMatrix<f64>, e: &[f64], heads: usize) -> DMatrix<f64> {
    let (l, d) = q.shape();
    let hw = d / heads;
    let mut out = DMatrix::zeros(l, d);
    for h in 0..heads {
        let c0 = h * hw;
        for i in 0..l {
            let logits: Vec<f64> = (0..l)
                .map(|j| ((c0..c0 + hw).map(|c| q[(i, c)] * k[(j, c)]).sum::<f64>() + e[j]) / (hw as f64).sqrt())
                .collect();
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let w: Vec<f64> = logits.iter().map(|x| (x - m).exp()).collect();
            let z: f64 = w.iter().sum();
            for c in c0..c0 + hw {
                out[(i, c)] = (0..l).map(|j| w[j] / z * v[(j, c)]).sum();
            }
        }
    }
    out
}

#[test]
fn patchify_single_block() {
    let s = ImageStack::new(1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let t = patchify(&s, 2).unwrap();
    assert_eq!((t.len(), t.dim()), (1, 4));
    assert_eq!(
        t.values.row(0).iter().copied().collect::<Vec<_>>(),
        vec![1.0, 2.0, 3.0, 4.0]
    );
}

#[test]
fn patchify_four_blocks() {
    let s = ImageStack::new(1, 4, 4, (0..16).map(|v| v as f64).collect()).unwrap();
    let t = patchify(&s, 2).unwrap();
    assert_eq!(t.len(), 4);
    assert_eq!(
        t.values.row(0).iter().copied().collect::<Vec<_>>(),
        vec![0.0, 1.0, 4.0, 5.0]
    );
    assert_eq!(
        t.values.row(3).iter().copied().collect::<Vec<_>>(),
        vec![10.0, 11.0, 14.0, 15.0]
    );
}

#[test]
fn patchify_rejects_indivisible() {
    let s = ImageStack::new(1, 4, 6, vec![0.0; 24]).unwrap();
    assert!(matches!(patchify(&s, 4), Err(Error::Parameter(_))));
    assert!(patchify(&s, 0).is_err());
}

#[test]
fn token_count_matches_declared_sizes() {
    let s = ImageStack::new(3, 8, 12, vec![0.0; 3 * 8 * 12]).unwrap();
    let t = patchify(&s, 4).unwrap();
    assert_eq!(t.len(), 3 * 8 * 12 / 16);
}

#[test]
fn constant_image_has_no_edges() {
    let img = Image::from_fn(32, 24, |_, _| 100.0).unwrap();
    assert_eq!(edge_map(&img, CannyParams::new(50.0, 150.0)).unwrap().count(), 0);
}

#[test]
fn step_edge_gives_one_pixel_line() {
    let img = Image::from_fn(40, 30, |x, _| if x < 20 { 0.0 } else { 255.0 }).unwrap();
    let m = edge_map(&img, CannyParams::new(50.0, 150.0)).unwrap();
    for y in 5..25 {
        let xs: Vec<usize> = (0..40).filter(|&x| m.get(x, y)).collect();
        assert_eq!(xs.len(), 1, "row {y}: {xs:?}");
        assert!((19..=20).contains(&xs[0]));
    }
}

fn disk(r: f64, supersample: usize) -> Image {
    let n = supersample as f64;
    Image::from_fn(128, 128, |x, y| {
        let mut inside = 0;
        for sy in 0..supersample {
            for sx in 0..supersample {
                let px = x as f64 + (sx as f64 + 0.5) / n - 64.0;
                let py = y as f64 + (sy as f64 + 0.5) / n - 64.0;
                if px * px + py * py < r * r {
                    inside += 1;
                }
            }
        }
        255.0 * inside as f32 / (n * n) as f32
    })
    .unwrap()
}

fn circumference_ratio(r: f64, supersample: usize) -> f64 {
    let count = edge_map(&disk(r, supersample), CannyParams::new(50.0, 150.0))
        .unwrap()
        .count() as f64;
    count / (2.0 * std::f64::consts::PI * r)
}

#[test]
fn circle_edge_count_near_circumference() {
    for r in [20.0] {
        for ss in [1, 4] {
            let ratio = circumference_ratio(r, ss);
            assert!((ratio - 1.0).abs() < 0.1, "r={r} supersample={ss}: ratio {ratio:.3}");
        }
    }
}

#[test]
fn large_circle_edge_count_stays_bounded() {
    // Pixel counts only approximate arc length. Small hard-edged circles
    // under-count; near 45° large circles trace 4-connected staircases, which
    // over-count by up to √2 locally and settle around +10..15% overall.
    for r in [10.0, 30.0, 40.0, 50.0] {
        for ss in [1, 4] {
            let ratio = circumference_ratio(r, ss);
            assert!(ratio > 0.85 && ratio < 1.2, "r={r} supersample={ss}: ratio {ratio:.3}");
        }
    }
}

#[test]
fn edge_embedding_closed_forms() {
    let affine = EdgeAffine {
        scale: 2.0,
        offset: 0.5,
    };
    // Two 2x2 patches side by side: empty, then full, then (second image) half.
    let data = vec![
        0.0, 0.0, 1.0, 1.0, //
        0.0, 0.0, 1.0, 1.0, //
        1.0, 0.0, 0.0, 0.0, //
        1.0, 0.0, 0.0, 0.0,
    ];
    let s = ImageStack::new(2, 2, 4, data).unwrap();
    let e = edge_embedding(&s, 2, affine).unwrap();
    assert_eq!(e.0, vec![0.5, 2.5, 1.5, 0.5]);
    let e = edge_embedding(&s, 2, EdgeAffine::default()).unwrap();
    assert_eq!(e.0, vec![0.0, 1.0, 0.5, 0.0]);
}

#[test]
fn zero_edge_is_plain_attention() {
    let (q, k, v) = (random_matrix(1, 6, 8), random_matrix(2, 6, 8), random_matrix(3, 6, 8));
    let e = EdgeEmbedding(vec![0.0; 6]);
    let plain = attention(&q, &k, &v, 2).unwrap();
    for bias in [EdgeBias::KeyLogits, EdgeBias::QueryChannels] {
        assert_eq!(edge_attention_with(&q, &k, &v, &e, 2, bias).unwrap(), plain);
    }
}

#[test]
fn zero_query_averages_values() {
    let q = DMatrix::zeros(5, 4);
    let (k, v) = (random_matrix(4, 5, 4), random_matrix(5, 5, 4));
    let out = edge_attention(&q, &k, &v, &EdgeEmbedding(vec![0.0; 5]), 2).unwrap();
    for c in 0..4 {
        let mean = v.column(c).mean();
        for i in 0..5 {
            assert!((out[(i, c)] - mean).abs() < 1e-14);
        }
    }
}

#[test]
fn matches_reference_loops() {
    let (q, k, v) = (random_matrix(6, 7, 6), random_matrix(7, 7, 6), random_matrix(8, 7, 6));
    let e = normal_vec(&mut seeded(9), 7);
    let out = edge_attention(&q, &k, &v, &EdgeEmbedding(e.clone()), 3).unwrap();
    let reference = reference_attention(&q, &k, &v, &e, 3);
    assert!((out - reference).amax() < 1e-13);
}

#[test]
fn edge_shift_invariance_with_key_logits() {
    let (q, k, v) = (
        random_matrix(10, 6, 4),
        random_matrix(11, 6, 4),
        random_matrix(12, 6, 4),
    );
    let e = normal_vec(&mut seeded(13), 6);
    let base = edge_attention(&q, &k, &v, &EdgeEmbedding(e.clone()), 2).unwrap();
    for c in [-3.0, 0.25, 7.0] {
        let shifted = EdgeEmbedding(e.iter().map(|x| x + c).collect());
        let out = edge_attention(&q, &k, &v, &shifted, 2).unwrap();
        let rel = (&out - &base).amax() / base.amax();
        assert!(rel < 1e-12, "shift {c}: rel diff {rel}");
    }
}

#[test]
fn query_channel_broadcast_is_not_shift_invariant() {
    // Adding c to every query channel adds c·ΣK_j to logit (i, j), which
    // differs between keys, so the softmax changes.
    let (q, k, v) = (
        random_matrix(14, 6, 4),
        random_matrix(15, 6, 4),
        random_matrix(16, 6, 4),
    );
    let e = normal_vec(&mut seeded(17), 6);
    let base = edge_attention_with(&q, &k, &v, &EdgeEmbedding(e.clone()), 2, EdgeBias::QueryChannels).unwrap();
    let shifted = EdgeEmbedding(e.iter().map(|x| x + 1.0).collect());
    let out = edge_attention_with(&q, &k, &v, &shifted, 2, EdgeBias::QueryChannels).unwrap();
    assert!((&out - &base).amax() > 1e-3);
}

#[test]
fn softmax_rows_sum_to_one() {
    let (q, k) = (random_matrix(18, 9, 6) * 5.0, random_matrix(19, 9, 6));
    let e = EdgeEmbedding(normal_vec(&mut seeded(20), 9));
    for bias in [EdgeBias::KeyLogits, EdgeBias::QueryChannels] {
        for p in attention_probabilities(&q, &k, &e, 3, bias).unwrap() {
            for i in 0..9 {
                assert!((p.row(i).sum() - 1.0).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn shape_violations_are_parameter_errors() {
    let q = random_matrix(21, 4, 6);
    let e = EdgeEmbedding(vec![0.0; 4]);
    assert!(matches!(edge_attention(&q, &q, &q, &e, 4), Err(Error::Parameter(_))));
    assert!(edge_attention(&q, &q, &q, &EdgeEmbedding(vec![0.0; 3]), 2).is_err());
    assert!(edge_attention(&q, &random_matrix(22, 5, 6), &q, &e, 2).is_err());
    assert!(edge_attention_grad(&q, &q, &q, &e, 2, &DMatrix::zeros(4, 5)).is_err());
}

#[test]
fn zero_upstream_gives_zero_gradients() {
    let (q, k, v) = (
        random_matrix(23, 5, 4),
        random_matrix(24, 5, 4),
        random_matrix(25, 5, 4),
    );
    let e = EdgeEmbedding(normal_vec(&mut seeded(26), 5));
    let g = edge_attention_grad(&q, &k, &v, &e, 2, &DMatrix::zeros(5, 4)).unwrap();
    assert_eq!(g.dq.amax(), 0.0);
    assert_eq!(g.dk.amax(), 0.0);
    assert_eq!(g.dv.amax(), 0.0);
    assert!(g.de.iter().all(|&x| x == 0.0));
}

#[test]
fn single_token_value_gradient_is_upstream() {
    let (q, k, v) = (
        random_matrix(27, 1, 4),
        random_matrix(28, 1, 4),
        random_matrix(29, 1, 4),
    );
    let up = random_matrix(30, 1, 4);
    let g = edge_attention_grad(&q, &k, &v, &EdgeEmbedding(vec![0.3]), 2, &up).unwrap();
    assert!((&g.dv - &up).amax() < 1e-15);
    assert!(g.dq.amax() < 1e-15 && g.dk.amax() < 1e-15);
}

/// Max relative error of analytic gradients against central differences of
/// `<upstream, output>`.
fn gradient_error(seed: u64, bias: EdgeBias) -> f64 {
    let (l, d, heads, step) = (5, 4, 2, 1e-5);
    let q = random_matrix(seed * 10 + 1, l, d);
    let k = random_matrix(seed * 10 + 2, l, d);
    let v = random_matrix(seed * 10 + 3, l, d);
    let e = normal_vec(&mut seeded(seed * 10 + 4), l);
    let up = random_matrix(seed * 10 + 5, l, d);
    let g = edge_attention_grad_with(&q, &k, &v, &EdgeEmbedding(e.clone()), heads, &up, bias).unwrap();
    let objective = |q: &DMatrix<f64>, k: &DMatrix<f64>, v: &DMatrix<f64>, e: &[f64]| -> f64 {
        edge_attention_with(q, k, v, &EdgeEmbedding(e.to_vec()), heads, bias)
            .unwrap()
            .component_mul(&up)
            .sum()
    };
    let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-8);
    let mut worst: f64 = 0.0;
    for idx in 0..l * d {
        for which in 0..3 {
            let mut plus = [q.clone(), k.clone(), v.clone()];
            let mut minus = [q.clone(), k.clone(), v.clone()];
            plus[which][idx] += step;
            minus[which][idx] -= step;
            let num = (objective(&plus[0], &plus[1], &plus[2], &e) - objective(&minus[0], &minus[1], &minus[2], &e))
                / (2.0 * step);
            let ana = [&g.dq, &g.dk, &g.dv][which][idx];
            worst = worst.max(rel(ana, num));
        }
    }
    for i in 0..l {
        let mut ep = e.clone();
        let mut em = e.clone();
        ep[i] += step;
        em[i] -= step;
        let num = (objective(&q, &k, &v, &ep) - objective(&q, &k, &v, &em)) / (2.0 * step);
        worst = worst.max(rel(g.de[i], num));
    }
    worst
}

#[test]
fn gradients_match_finite_differences_on_twenty_seeds() {
    for seed in 0..20 {
        for bias in [EdgeBias::KeyLogits, EdgeBias::QueryChannels] {
            let err = gradient_error(seed, bias);
            assert!(err < 1e-4, "seed {seed} {bias:?}: {err:e}");
        }
    }
}

#[test]
fn key_logit_edge_gradient_sums_to_zero() {
    // Shift invariance implies the edge gradient has zero sum.
    let (q, k, v) = (
        random_matrix(31, 6, 4),
        random_matrix(32, 6, 4),
        random_matrix(33, 6, 4),
    );
    let e = EdgeEmbedding(normal_vec(&mut seeded(34), 6));
    let g = edge_attention_grad(&q, &k, &v, &e, 2, &random_matrix(35, 6, 4)).unwrap();
    assert!(g.de.iter().sum::<f64>().abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn patchify_round_trip(n in 1usize..3, ph in 1usize..4, pw in 1usize..4, p in 1usize..4, seed in 0u64..1000) {
        let (h, w) = (ph * p, pw * p);
        let s = ImageStack::new(n, h, w, normal_vec(&mut seeded(seed), n * h * w)).unwrap();
        prop_assert_eq!(unpatchify(&patchify(&s, p).unwrap()).unwrap(), s);
    }

    #[test]
    fn permutation_equivariance(seed in 0u64..10_000, rot in 1usize..6) {
        let l = 6;
        let (q, k, v) = (random_matrix(seed, l, 4), random_matrix(seed + 1, l, 4), random_matrix(seed + 2, l, 4));
        let e = normal_vec(&mut seeded(seed + 3), l);
        let perm: Vec<usize> = (0..l).map(|i| (i * 5 + rot) % l).collect();
        let permute = |m: &DMatrix<f64>| DMatrix::from_fn(l, 4, |i, c| m[(perm[i], c)]);
        let pe: Vec<f64> = perm.iter().map(|&i| e[i]).collect();
        for bias in [EdgeBias::KeyLogits, EdgeBias::QueryChannels] {
            let out = edge_attention_with(&q, &k, &v, &EdgeEmbedding(e.clone()), 2, bias).unwrap();
            let pout = edge_attention_with(&permute(&q), &permute(&k), &permute(&v), &EdgeEmbedding(pe.clone()), 2, bias).unwrap();
            prop_assert!((pout - permute(&out)).amax() < 1e-12);
        }
    }
}
