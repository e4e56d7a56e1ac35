//! Property tests for invariants that hold across modules.

use egoact::classifier::chi2_kernel;
use egoact::descriptor::{traj_shape, Channel};
use egoact::encoding::{kmeans, pyramid_histogram, KMeansConfig};
use egoact::flow::{flow_gradients, FlowField};
use egoact::segmentation::{build_mrf, minimize_labeling, FlowHistogram};
use egoact::trajectory::{Direction, Trajectory};
use egoact::video::{pyramid_dims, reflect_index, sliding_window, FrameSequence, GrayImage};
use proptest::prelude::*;

fn histogram(len: usize) -> impl Strategy<Value = Vec<f32>> {
    prop::collection::vec(0.0f32..1.0, len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn window_is_reflected_around_centre(n in 2usize..80, c in 0usize..80, half in 1usize..20) {
        let c = c % n;
        let seq = FrameSequence::from_frames(vec![GrayImage::constant(16, 16, 0.0); n]).unwrap();
        let w = sliding_window(&seq, c, 2 * half).unwrap();
        prop_assert_eq!(w.len(), 2 * half + 1);
        prop_assert_eq!(w.indices[half], c);
        for (k, &i) in w.indices.iter().enumerate() {
            prop_assert_eq!(i, reflect_index(c as isize + k as isize - half as isize, n));
            prop_assert!(i < n);
        }
    }

    #[test]
    fn pyramid_levels_shrink(w in 48usize..400, h in 48usize..400, levels in 1usize..10) {
        let dims = pyramid_dims(w, h, levels, 1.0 / 2f32.sqrt());
        prop_assert_eq!(dims[0], (w, h));
        prop_assert!(dims.len() <= levels);
        for p in dims.windows(2) {
            prop_assert!(p[1].0 * p[1].1 < p[0].0 * p[0].1);
        }
    }

    #[test]
    fn shape_is_unit_l1(steps in prop::collection::vec((-6.0f64..6.0, -6.0f64..6.0), 15)) {
        prop_assume!(steps.iter().any(|&(x, y)| x.hypot(y) > 1e-3));
        let mut p = [50.0, 50.0];
        let mut pts = vec![p];
        for (dx, dy) in steps {
            p = [p[0] + dx, p[1] + dy];
            pts.push(p);
        }
        let s = traj_shape(&Trajectory::from_points(0, Direction::Forward, 0, pts), 15).unwrap();
        prop_assert_eq!(s.len(), 30);
        let total: f64 = s.chunks(2).map(|d| d[0].hypot(d[1])).sum();
        prop_assert!((total - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn gradients_are_linear(a in -3.0f32..3.0, b in -3.0f32..3.0, seed in 0u64..1000) {
        let f = |s: u64| FlowField::from_fn(9, 7, move |x, y| {
            let h = (x as u64 * 31 + y as u64 * 17 + s) % 23;
            (h as f32 * 0.25 - 2.0, (h * 7 % 11) as f32 * 0.5 - 2.5)
        });
        let (f1, f2) = (f(seed), f(seed + 1));
        let mix = FlowField::from_fn(9, 7, |x, y| {
            let (p, q) = (f1.at(x, y), f2.at(x, y));
            (a * p.0 + b * q.0, a * p.1 + b * q.1)
        });
        let (g1, g2, gm) = (flow_gradients(&f1).unwrap(), flow_gradients(&f2).unwrap(), flow_gradients(&mix).unwrap());
        for i in 0..63 {
            let want = a * g1.du_dx[i] + b * g2.du_dx[i];
            prop_assert!((gm.du_dx[i] - want).abs() <= 1e-4);
            let want = a * g1.dv_dy[i] + b * g2.dv_dy[i];
            prop_assert!((gm.dv_dy[i] - want).abs() <= 1e-4);
        }
    }

    #[test]
    fn pyramid_levels_sum_to_one(words in prop::collection::vec(0usize..7, 1..60), levels in 1usize..4, seed in 0usize..30) {
        let len = 31;
        let positions: Vec<usize> = (0..words.len()).map(|i| (i * 13 + seed) % len).collect();
        let h = pyramid_histogram(&words, &positions, 7, levels, len);
        prop_assert_eq!(h.len(), 7 * ((1 << levels) - 1));
        let mut offset = 0;
        for l in 0..levels {
            let n = 7 << l;
            let s: f64 = h[offset..offset + n].iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
            offset += n;
        }
        if levels >= 2 {
            // Each level is normalized as a whole, so level 0 is the sum of the halves.
            for w in 0..7 {
                prop_assert!((h[w] - (h[7 + w] + h[14 + w])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn centroids_quantize_to_themselves(data in prop::collection::vec(-5.0f32..5.0, 24..120), k in 2usize..5) {
        let rows = data.len() / 3;
        prop_assume!(rows >= k);
        let cb = kmeans(Channel::Hof, &data[..rows * 3], 3, &KMeansConfig { k, ..Default::default() }).unwrap();
        for j in 0..cb.k {
            let c = cb.centroid(j).to_vec();
            let q = cb.quantize(&c).unwrap();
            prop_assert_eq!(cb.centroid(q), &c[..]);
        }
    }

    #[test]
    fn mrf_never_worse_than_argmax(
        scores in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 3), 2..25),
        lambda in 0.0f64..3.0,
        radius in 1usize..6,
    ) {
        let hofs: Vec<FlowHistogram> = (0..scores.len())
            .map(|i| FlowHistogram(vec![(i % 3) as f64 / 3.0, 1.0 - (i % 3) as f64 / 3.0]))
            .collect();
        let p = build_mrf(&scores, &hofs, lambda, radius).unwrap();
        for i in 0..p.num_frames {
            for j in 0..p.num_frames {
                prop_assert_eq!(p.weight(i, j), p.weight(j, i));
                prop_assert!(p.weight(i, j) >= 0.0);
            }
        }
        let init = p.argmax_labels();
        let sol = minimize_labeling(&p, Some(&init)).unwrap();
        prop_assert!(sol.energy() <= p.energy(&init) + 1e-12);
        if lambda == 0.0 {
            prop_assert_eq!(sol.labels, init);
        }
    }

    #[test]
    fn chi2_kernel_is_symmetric_and_unit_on_diagonal(x in histogram(12), y in histogram(12), gamma in 0.01f64..10.0) {
        let (kxy, kyx) = (chi2_kernel(&x, &y, gamma).unwrap(), chi2_kernel(&y, &x, gamma).unwrap());
        prop_assert_eq!(kxy, kyx);
        prop_assert!(kxy > 0.0 && kxy <= 1.0);
        prop_assert_eq!(chi2_kernel(&x, &x, gamma).unwrap(), 1.0);
    }
}
