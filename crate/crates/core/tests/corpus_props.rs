use beatgraph::corpus::{alignment_envelope, motion_derivatives, segment_count, WindowGeometry, WordTiming};
use beatgraph::embed::pca_fit;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Iterated `(x[i+1] − x[i−1]) / 2` over an explicitly edge-padded copy.
fn derivative_oracle(column: &[f64], order: usize) -> Vec<f64> {
    let mut cur = column.to_vec();
    for _ in 0..order {
        let mut padded = vec![cur[0]];
        padded.extend_from_slice(&cur);
        padded.push(*cur.last().unwrap());
        cur = padded.windows(3).map(|w| (w[2] - w[0]) / 2.0).collect();
    }
    cur
}

#[test]
fn derivatives_match_padded_oracle_on_random_clip() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let clip = DMatrix::from_fn(12, 6, |_, _| rng.random_range(-1.0..1.0));
    let got = motion_derivatives(&clip).unwrap();
    assert_eq!(got.shape(), (12, 36));
    for order in 1..=6 {
        for c in 0..6 {
            let col: Vec<f64> = clip.column(c).iter().copied().collect();
            let want = derivative_oracle(&col, order);
            for (f, w) in want.iter().enumerate() {
                let g = got[(f, (order - 1) * 6 + c)];
                assert!((g - w).abs() < 1e-9, "order {order} col {c} frame {f}: {g} vs {w}");
            }
        }
    }
}

#[test]
fn derivatives_of_squares_frozen() {
    let clip = DMatrix::from_fn(8, 3, |f, c| if c == 0 { (f * f) as f64 } else { 0.0 });
    let d = motion_derivatives(&clip).unwrap();
    let first: Vec<f64> = d.column(0).iter().copied().collect();
    let second: Vec<f64> = d.column(3).iter().copied().collect();
    assert_eq!(first, [0.5, 2.0, 4.0, 6.0, 8.0, 10.0, 12.0, 6.5]);
    assert_eq!(second, [0.75, 1.75, 2.0, 2.0, 2.0, 2.0, -1.75, -2.75]);
}

#[test]
fn pca_matches_svd_of_centered_data() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let x = DMatrix::from_fn(50, 10, |_, c| rng.random_range(-1.0..1.0) * (1.0 + c as f64));
    let mean = x.row_mean();
    let centered = DMatrix::from_fn(50, 10, |r, c| x[(r, c)] - mean[c]);
    let svd = centered.clone().svd(false, true);
    let mut sv: Vec<(f64, usize)> = svd
        .singular_values
        .iter()
        .copied()
        .enumerate()
        .map(|(i, s)| (s, i))
        .collect();
    sv.sort_by(|a, b| b.0.total_cmp(&a.0));
    let vt = svd.v_t.unwrap();
    let k = 4;
    let model = pca_fit(&x, k).unwrap();
    for (j, &(s, _)) in sv.iter().take(k).enumerate() {
        assert!((model.explained_variance[j] - s * s / 50.0).abs() < 1e-9);
    }
    // same subspace: projectors agree
    for a in 0..10 {
        for b in 0..10 {
            let ours: f64 = (0..k).map(|j| model.component(j)[a] * model.component(j)[b]).sum();
            let theirs: f64 = sv.iter().take(k).map(|&(_, i)| vt[(i, a)] * vt[(i, b)]).sum();
            assert!((ours - theirs).abs() < 1e-9, "projector ({a}, {b}): {ours} vs {theirs}");
        }
    }
}

proptest! {
    #[test]
    fn derivatives_vanish_above_polynomial_degree(
        degree in 0usize..=3,
        coeffs in prop::collection::vec(-3i32..=3, 4),
        frames in 14usize..40,
    ) {
        let clip = DMatrix::from_fn(frames, 3, |f, _| {
            let t = f as f64;
            (0..=degree).map(|p| coeffs[p] as f64 * t.powi(p as i32)).sum::<f64>()
        });
        let d = motion_derivatives(&clip).unwrap();
        for order in degree + 1..=6 {
            for f in order..frames - order {
                prop_assert_eq!(d[(f, (order - 1) * 3)], 0.0, "order {} frame {}", order, f);
            }
        }
    }

    #[test]
    fn segment_count_agrees_with_frame_geometry(frames in 0usize..5000) {
        let geom = WindowGeometry::new(2.0, 30.0).unwrap();
        let expected = if frames < 60 { 0 } else { (frames - 60) / 30 + 1 };
        prop_assert_eq!(geom.count(frames), expected);
        if frames % 30 == 0 {
            prop_assert_eq!(segment_count(frames as f64 / 30.0, 2.0), expected);
        }
    }

    #[test]
    fn envelope_is_bounded_and_peaks_at_word_centers(
        n in 1usize..120,
        spans in prop::collection::vec((0usize..120, 0usize..15), 0..8),
    ) {
        let words: Vec<WordTiming> = spans
            .iter()
            .map(|&(s, len)| {
                let s = s % n;
                WordTiming::new("w", s, (s + len).min(n - 1))
            })
            .collect();
        let env = alignment_envelope(&words, n).unwrap();
        prop_assert!(env.iter().all(|v| (0.0..=1.0).contains(v)));
        for w in &words {
            prop_assert_eq!(env[w.mid_frame()], 1.0);
        }
    }
}
