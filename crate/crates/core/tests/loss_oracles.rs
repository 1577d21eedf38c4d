use compseg_core::losses::{
    complementary_loss, complementary_loss_with_grad, focal_complementary_loss, focal_complementary_loss_with_grad,
    masked_weighted_ce, masked_weighted_ce_with_grad,
};
use compseg_core::{ComplementaryMask, Dims, LabelMask, SoftmaxMap, TransitionMatrix};
use proptest::prelude::*;

fn softmax(logits: &[f64], k: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(logits.len());
    for z in logits.chunks_exact(k) {
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        out.extend(e.iter().map(|v| v / s));
    }
    out
}

fn smap(dims: Dims, k: usize, logits: &[f64]) -> SoftmaxMap {
    SoftmaxMap::new(dims, k, softmax(logits, k)).unwrap()
}

/// Zero-diagonal row-stochastic matrix from raw positive weights.
fn random_q(k: usize, raw: &[f64]) -> TransitionMatrix {
    let rows: Vec<Vec<f64>> = (0..k)
        .map(|i| {
            let mut r: Vec<f64> = (0..k).map(|j| if i == j { 0.0 } else { raw[i * k + j] }).collect();
            let s: f64 = r.iter().sum();
            r.iter_mut().for_each(|v| *v /= s);
            r
        })
        .collect();
    TransitionMatrix::new(&rows).unwrap()
}

/// Per-pixel labels in `0..=k`; `k` marks an unlabelled pixel.
fn instance() -> impl Strategy<Value = (usize, Dims, Vec<f64>, Vec<u8>, Vec<u8>, Vec<f64>)> {
    (2usize..=5, 1usize..=4, 1usize..=8).prop_flat_map(|(k, n, p)| {
        let dims = Dims::new(n, p, p);
        let px = dims.pixels();
        (
            Just(k),
            Just(dims),
            prop::collection::vec(-3.0f64..3.0, px * k),
            prop::collection::vec(0u8..=k as u8, px),
            prop::collection::vec(0u8..=k as u8, px),
            prop::collection::vec(0.05f64..1.0, k * k),
        )
    })
}

/// Relative error of two gradient vectors in the Euclidean norm.
fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

fn numeric_grad(logits: &[f64], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let h = 1e-5;
    let mut z = logits.to_vec();
    (0..z.len())
        .map(|i| {
            let orig = z[i];
            z[i] = orig + h;
            let up = f(&z);
            z[i] = orig - h;
            let down = f(&z);
            z[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn ce_gradient_matches_finite_differences((k, dims, logits, labels, _c, raw) in instance()) {
        let w: Vec<f64> = raw[..k].to_vec();
        let y = LabelMask::new(dims, k, labels).unwrap();
        let (_, g) = masked_weighted_ce_with_grad(&smap(dims, k, &logits), &y, &w).unwrap();
        let num = numeric_grad(&logits, |z| masked_weighted_ce(&smap(dims, k, z), &y, &w).unwrap().value);
        prop_assert!(rel_err(&g, &num) < 1e-4, "rel err {}", rel_err(&g, &num));
    }

    #[test]
    fn complementary_gradients_match_finite_differences(
        (k, dims, logits, _l, compl, raw) in instance(),
        gamma in prop::sample::select(vec![0.0, 2.0]),
    ) {
        let q = random_q(k, &raw);
        let yb = ComplementaryMask::new(dims, k, compl).unwrap();
        let (_, g) = focal_complementary_loss_with_grad(&smap(dims, k, &logits), &yb, &q, gamma).unwrap();
        let num = numeric_grad(&logits, |z| focal_complementary_loss(&smap(dims, k, z), &yb, &q, gamma).unwrap().value);
        prop_assert!(rel_err(&g, &num) < 1e-4, "rel err {}", rel_err(&g, &num));
        if gamma == 0.0 {
            let (_, plain) = complementary_loss_with_grad(&smap(dims, k, &logits), &yb, &q).unwrap();
            prop_assert_eq!(plain, g);
        }
    }

    #[test]
    fn batched_loss_matches_scalar_loop((k, dims, logits, _l, compl, raw) in instance()) {
        let q = random_q(k, &raw);
        let probs = softmax(&logits, k);
        let mut sum = 0.0;
        let mut count = 0;
        for (px, &j) in compl.iter().enumerate() {
            if (j as usize) == k {
                continue;
            }
            let mut s = 0.0;
            for i in 0..k {
                s += q.get(i, j as usize) * probs[px * k + i];
            }
            sum += -s.max(1e-12).ln();
            count += 1;
        }
        let oracle = if count == 0 { 0.0 } else { sum / count as f64 };
        let yb = ComplementaryMask::new(dims, k, compl).unwrap();
        let got = complementary_loss(&SoftmaxMap::new(dims, k, probs).unwrap(), &yb, &q).unwrap();
        prop_assert!((got.value - oracle).abs() <= 1e-10);
        prop_assert_eq!(got.pixel_count, count);
    }

    #[test]
    fn two_class_swap_is_cross_entropy((dims, logits, compl) in (1usize..=4, 1usize..=8).prop_flat_map(|(n, p)| {
        let dims = Dims::new(n, p, p);
        (Just(dims), prop::collection::vec(-4.0f64..4.0, dims.pixels() * 2), prop::collection::vec(0u8..=2, dims.pixels()))
    })) {
        let q = TransitionMatrix::new(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let implied: Vec<u8> = compl.iter().map(|&j| if j == 2 { 2 } else { 1 - j }).collect();
        let y_hat = smap(dims, 2, &logits);
        let c = complementary_loss(&y_hat, &ComplementaryMask::new(dims, 2, compl).unwrap(), &q).unwrap();
        let ce = masked_weighted_ce(&y_hat, &LabelMask::new(dims, 2, implied).unwrap(), &[1.0, 1.0]).unwrap();
        prop_assert_eq!(c.value.to_bits(), ce.value.to_bits());
    }

    #[test]
    fn apply_transposed_preserves_mass_and_is_linear(
        (k, raw, a, b) in (2usize..=6).prop_flat_map(|k| (
            Just(k),
            prop::collection::vec(0.01f64..1.0, k * k),
            prop::collection::vec(0.01f64..1.0, k),
            prop::collection::vec(0.01f64..1.0, k),
        )),
        t in 0.0f64..1.0,
    ) {
        let q = random_q(k, &raw);
        let norm = |v: &[f64]| { let s: f64 = v.iter().sum(); v.iter().map(|x| x / s).collect::<Vec<_>>() };
        let (a, b) = (norm(&a), norm(&b));
        let qa = q.apply_transposed(&a).unwrap();
        prop_assert!((qa.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let mix: Vec<f64> = a.iter().zip(&b).map(|(x, y)| t * x + (1.0 - t) * y).collect();
        let qb = q.apply_transposed(&b).unwrap();
        let qm = q.apply_transposed(&mix).unwrap();
        for j in 0..k {
            prop_assert!((qm[j] - (t * qa[j] + (1.0 - t) * qb[j])).abs() < 1e-12);
        }
    }
}

#[test]
fn uniform_matrix_loss_is_log_of_k_minus_one_at_uniform_prediction() {
    for k in 2..=5 {
        let dims = Dims::new(1, 1, k);
        let y_hat = SoftmaxMap::new(dims, k, vec![1.0 / k as f64; k * k]).unwrap();
        let compl = ComplementaryMask::new(dims, k, (0..k as u8).collect()).unwrap();
        let got = complementary_loss(&y_hat, &compl, &TransitionMatrix::uniform(k).unwrap()).unwrap();
        // (Qᵀŷ)_j = Σ_{i≠j} 1/(k−1) · 1/k = 1/k.
        assert!((got.value - (k as f64).ln()).abs() < 1e-12);
    }
}
