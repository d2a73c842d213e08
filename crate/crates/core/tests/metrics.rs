use equireg::metrics::{dice, hausdorff, tre};
use equireg::registration::{jacobian_stats, DisplacementField, LabelMap};
use proptest::prelude::*;

mod common;
use common::{brute_dice, brute_hd, Quadratic};

fn square(n: usize, y0: usize, x0: usize, side: usize) -> LabelMap {
    LabelMap::from_fn(n, n, |y, x| u8::from(y >= y0 && y < y0 + side && x >= x0 && x < x0 + side))
}

#[test]
fn concentric_squares_hausdorff() {
    // Outlines 3 px apart on every side; the farthest points are the corners.
    let outer = square(20, 2, 2, 14);
    let inner = square(20, 5, 5, 8);
    assert_eq!(hausdorff(&outer, &inner, 1).unwrap(), 18f64.sqrt());
    assert_eq!(hausdorff(&outer, &inner, 1).unwrap(), brute_hd(outer.data(), inner.data(), 20, 20, 1));
}

#[test]
fn hausdorff_single_pixels() {
    let a = LabelMap::from_fn(9, 9, |y, x| u8::from(y == 1 && x == 1));
    let b = LabelMap::from_fn(9, 9, |y, x| u8::from(y == 4 && x == 5));
    assert_eq!(hausdorff(&a, &b, 1).unwrap(), 5.0);
    assert!(hausdorff(&a, &LabelMap::from_fn(9, 9, |_, _| 0), 1).is_err());
}

fn label_grid(h: usize, w: usize, labels: u8) -> impl Strategy<Value = Vec<u8>> {
    prop::collection::vec(0..=labels, h * w)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dice_matches_counting(a in label_grid(7, 9, 3), b in label_grid(7, 9, 3)) {
        let (ma, mb) = (LabelMap::new(7, 9, a.clone()).unwrap(), LabelMap::new(7, 9, b.clone()).unwrap());
        prop_assert_eq!(dice(&ma, &mb).unwrap().mean, brute_dice(&a, &b));
        prop_assert_eq!(dice(&ma, &mb).unwrap().mean, dice(&mb, &ma).unwrap().mean);
    }

    #[test]
    fn hausdorff_matches_all_pairs(a in label_grid(8, 6, 2), b in label_grid(8, 6, 2)) {
        let (ma, mb) = (LabelMap::new(8, 6, a.clone()).unwrap(), LabelMap::new(8, 6, b.clone()).unwrap());
        for label in 1..=2u8 {
            let present = a.contains(&label) && b.contains(&label);
            match hausdorff(&ma, &mb, label) {
                Ok(hd) => {
                    prop_assert!(present);
                    prop_assert_eq!(hd, brute_hd(&a, &b, 8, 6, label));
                }
                Err(_) => prop_assert!(!present),
            }
        }
    }

    #[test]
    fn dice_in_unit_interval(a in label_grid(5, 5, 2), b in label_grid(5, 5, 2)) {
        let d = dice(&LabelMap::new(5, 5, a).unwrap(), &LabelMap::new(5, 5, b).unwrap()).unwrap().mean;
        prop_assert!((0.0..=1.0).contains(&d));
    }
}

#[test]
fn jacobian_stats_match_analytic_quadratics() {
    let fields = [
        Quadratic { c: [0.3, 0.1, -0.05, 0.0, 0.0, 0.0, -1.0, 0.02, 0.2, 0.0, 0.0, 0.0] },
        Quadratic { c: [0.0, -0.4, 0.1, 0.01, -0.02, 0.005, 0.5, 0.05, -0.3, -0.01, 0.015, 0.02] },
        Quadratic { c: [1.0, -0.9, 0.0, -0.03, 0.0, 0.0, 0.0, 0.0, 0.1, 0.0, 0.04, -0.01] },
    ];
    let (h, w) = (12, 15);
    for q in &fields {
        let field = DisplacementField::from_fn(h, w, |y, x| q.u(x as f64, y as f64));
        let stats = jacobian_stats(&field).unwrap();
        let mut dets = Vec::new();
        for y in 1..h - 1 {
            for x in 1..w - 1 {
                dets.push(q.det(x as f64, y as f64));
            }
        }
        for (got, want) in stats.det_map.iter().zip(&dets) {
            assert!((got - want).abs() < 1e-10, "{got} vs {want}");
        }
        let folded = dets.iter().filter(|&&d| d <= 0.0).count() as f64 / dets.len() as f64;
        let logs: Vec<f64> = dets.iter().filter(|&&d| d > 0.0).map(|d| d.ln()).collect();
        let mean = logs.iter().sum::<f64>() / logs.len() as f64;
        let std = (logs.iter().map(|l| (l - mean) * (l - mean)).sum::<f64>() / logs.len() as f64).sqrt();
        assert!((stats.folded_fraction - folded).abs() < 1e-10);
        assert!((stats.std_log_jdet - std).abs() < 1e-10);
    }
    // the third field folds on its right half
    let s = jacobian_stats(&DisplacementField::from_fn(h, w, |y, x| fields[2].u(x as f64, y as f64))).unwrap();
    assert!(s.folded_fraction > 0.0);
}

#[test]
fn tre_exact_for_affine_fields() {
    // Bilinear interpolation reproduces affine fields exactly.
    let u = DisplacementField::from_fn(16, 16, |y, x| (0.5 + 0.1 * x as f64, -0.25 + 0.05 * y as f64 - 0.02 * x as f64));
    let fixed = vec![(3.3, 4.7), (10.0, 2.5), (7.25, 12.9)];
    let moving: Vec<(f64, f64)> = fixed.iter().map(|&(x, y)| (x + 1.0, y - 2.0)).collect();
    let r = tre(&fixed, &moving, &u).unwrap();
    for (i, &(x, y)) in fixed.iter().enumerate() {
        let (dx, dy) = (0.5 + 0.1 * x, -0.25 + 0.05 * y - 0.02 * x);
        let want = ((dx - 1.0).powi(2) + (dy + 2.0).powi(2)).sqrt();
        assert!((r.per_point[i] - want).abs() < 1e-10);
    }
    assert_eq!(r.clamped, 0);
    let want_mean = r.per_point.iter().sum::<f64>() / 3.0;
    assert!((r.mean - want_mean).abs() < 1e-15);
}

#[test]
fn tre_zero_for_exact_correspondence() {
    let u = DisplacementField::from_fn(8, 8, |_, _| (1.5, -0.5));
    let fixed = vec![(2.0, 2.0), (5.5, 3.25)];
    let moving: Vec<_> = fixed.iter().map(|&(x, y)| (x + 1.5, y - 0.5)).collect();
    assert_eq!(tre(&fixed, &moving, &u).unwrap().mean, 0.0);
}
