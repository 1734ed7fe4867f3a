use proptest::prelude::*;
use torus::lattice::{convolve, gevrey_weight, project};
use torus::{FourierVector, LatticeBox, Series};

fn series_strategy(m: usize, max_radius: usize) -> impl Strategy<Value = Series> {
    (0..=max_radius).prop_flat_map(move |r| {
        let len = LatticeBox::centered(m, r).len();
        prop::collection::vec(-1.0f64..1.0, len).prop_map(move |values| Series {
            support: LatticeBox::centered(m, r),
            values,
        })
    })
}

/// Scales each coefficient by `exp{−|k|₁^s}`, so the Gevrey sup is at most 1.
fn gevrey_damped(mut a: Series, s: f64) -> Series {
    for (p, k) in a.support.points().iter().enumerate() {
        a.values[p] *= (-gevrey_weight(k.l1(), s)).exp();
    }
    a
}

fn max_abs_diff(a: &Series, b: &Series) -> f64 {
    let hull = a.support.hull_centered(&b.support);
    hull.points().iter().map(|k| (a.get(&k.0) - b.get(&k.0)).abs()).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn power_inequality(a in 0.0f64..1e3, b in 0.0f64..1e3, s in 0.01f64..0.99) {
        let lhs = a.powf(s) + b.powf(s) - (a + b).powf(s);
        let rhs = (2.0 - 2f64.powf(s)) * a.min(b).powf(s);
        let slack = 4.0 * f64::EPSILON * (a.powf(s) + b.powf(s) + (a + b).powf(s));
        prop_assert!(lhs >= rhs - slack, "{lhs} < {rhs}");
    }

    #[test]
    fn convolution_keeps_gevrey_decay(a in series_strategy(1, 20), b in series_strategy(1, 20), s in 0.05f64..0.95) {
        let (a, b) = (gevrey_damped(a, s), gevrey_damped(b, s));
        let c = convolve(&a, &b, false, false);
        let decay = 2.0 - 2f64.powf(s);
        for k in c.support.points() {
            let bound: f64 = b
                .support
                .points()
                .iter()
                .filter(|kp| a.support.contains(&k.sub(kp).0))
                .map(|kp| (-decay * gevrey_weight(k.sub(kp).l1().min(kp.l1()), s)).exp())
                .sum();
            let lhs = c.get(&k.0).abs() * gevrey_weight(k.l1(), s).exp();
            prop_assert!(lhs <= bound * (1.0 + 1e-12), "k={:?}: {lhs} > {bound}", k.0);
        }
    }

    #[test]
    fn convolution_keeps_gevrey_decay_in_two_dimensions(a in series_strategy(2, 6), b in series_strategy(2, 6), s in 0.05f64..0.95) {
        let (a, b) = (gevrey_damped(a, s), gevrey_damped(b, s));
        let c = convolve(&a, &b, false, false);
        let decay = 2.0 - 2f64.powf(s);
        for k in c.support.points() {
            let bound: f64 = b
                .support
                .points()
                .iter()
                .filter(|kp| a.support.contains(&k.sub(kp).0))
                .map(|kp| (-decay * gevrey_weight(k.sub(kp).l1().min(kp.l1()), s)).exp())
                .sum();
            prop_assert!(c.get(&k.0).abs() * gevrey_weight(k.l1(), s).exp() <= bound * (1.0 + 1e-12));
        }
    }

    #[test]
    fn operator_products_keep_decay(seed in any::<u64>(), radius in 1usize..=12, s in 0.05f64..0.95) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let pts = LatticeBox::centered(1, radius).points();
        let n = pts.len();
        let dist = |i: usize, j: usize| pts[i].sub(&pts[j]).l1();
        let mut decaying = || -> Vec<Vec<f64>> {
            (0..n)
                .map(|i| (0..n).map(|j| rng.random_range(-1.0..1.0) * (-gevrey_weight(dist(i, j), s)).exp()).collect())
                .collect()
        };
        let (a1, a2) = (decaying(), decaying());
        let decay = 2.0 - 2f64.powf(s);
        for i in 0..n {
            for j in 0..n {
                let entry: f64 = (0..n).map(|l| a1[i][l] * a2[l][j]).sum();
                let bound: f64 = (0..n).map(|l| (-decay * gevrey_weight(dist(i, l).min(dist(l, j)), s)).exp()).sum();
                prop_assert!(entry.abs() * gevrey_weight(dist(i, j), s).exp() <= bound * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn projection_contracts(values in prop::collection::vec(-1.0f64..1.0, 2 * 81), r in 0usize..=5) {
        let v = FourierVector { n: 2, support: LatticeBox::centered(2, 4), values };
        let p = project(&v, &LatticeBox::centered(2, r));
        prop_assert!(p.norm_l2() <= v.norm_l2());
    }

    #[test]
    fn convolution_commutes(a in series_strategy(2, 4), b in series_strategy(2, 4)) {
        let ab = convolve(&a, &b, false, false);
        let ba = convolve(&b, &a, false, false);
        prop_assert!(max_abs_diff(&ab, &ba) <= 1e-14);
    }

    #[test]
    fn reflection_is_an_involution(a in series_strategy(2, 5)) {
        prop_assert_eq!(a.reflect().reflect(), a);
    }

    #[test]
    fn reflect_flag_matches_reflected_input(a in series_strategy(1, 6), b in series_strategy(1, 6)) {
        let flagged = convolve(&a, &b, true, false);
        let explicit = convolve(&a.reflect(), &b, false, false);
        prop_assert!(max_abs_diff(&flagged, &explicit) <= 1e-14);
    }
}
