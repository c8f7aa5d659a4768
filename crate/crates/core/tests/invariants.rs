use proptest::prelude::*;
use rwpot_core::concentration::{discrete_entropy, site_entropy};
use rwpot_core::harness::output::fmt_real;
use rwpot_core::lattice::canonical_animal;
use rwpot_core::potential::{field_from_bytes, field_to_bytes, sample_field, set_site};
use rwpot_core::solver::{travel_cost, travel_weight};
use rwpot_core::stats::{wilson, Z95};
use rwpot_core::{BoxRegion, DistributionSpec, LatticePoint, PotentialField, Region};

const TP: DistributionSpec = DistributionSpec::TwoPoint { v_lo: 0.2, v_hi: 1.0, p_hi: 0.5 };

fn small_instance() -> impl Strategy<Value = (u64, i64, i64, i64, i64)> {
    (any::<u64>(), 2i64..6, 2i64..6, 0i64..6, 0i64..6)
}

fn build(seed: u64, w: i64, h: i64, tx: i64, ty: i64) -> (PotentialField, Region, LatticePoint) {
    let bx = BoxRegion::new(LatticePoint::new([-1, -1]), LatticePoint::new([w, h])).unwrap();
    let field = sample_field(&TP, &bx, seed).unwrap();
    let mut x = LatticePoint::new([tx.min(w - 1), ty.min(h - 1)]);
    if x.is_origin() {
        x = LatticePoint::new([1, 0]);
    }
    (field, Region::from_box(bx), x)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn weights_lie_in_unit_interval((seed, w, h, tx, ty) in small_instance()) {
        let (field, region, x) = build(seed, w, h, tx, ty);
        let r = travel_weight(&field, &region, &LatticePoint::origin(2), &x, &[]).unwrap();
        for (z, e) in r.e_vector() {
            prop_assert!(e > 0.0 && e <= 1.0 + 1e-15, "{z}: {e}");
        }
        prop_assert!((r.e_value(&x) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn raising_a_site_never_lowers_the_cost((seed, w, h, tx, ty) in small_instance(), k in 0usize..64, bump in 0.0f64..3.0) {
        let (field, region, x) = build(seed, w, h, tx, ty);
        let y = region.bbox().point_at(k % region.bbox().site_count());
        let raised = set_site(&field, &y, field.get(&y).unwrap() + bump).unwrap();
        let o = LatticePoint::origin(2);
        let a = travel_cost(&field, &region, &o, &x).unwrap();
        let b = travel_cost(&raised, &region, &o, &x).unwrap();
        prop_assert!(b >= a - 1e-12, "{a} -> {b}");
    }

    #[test]
    fn shrinking_the_region_never_lowers_the_cost((seed, w, h, tx, ty) in small_instance()) {
        let (field, region, x) = build(seed, w, h, tx, ty);
        let o = LatticePoint::origin(2);
        let hi = LatticePoint::new([x.coords()[0].max(0) + 1, x.coords()[1].max(0) + 1]);
        let inner = Region::from_box(BoxRegion::new(LatticePoint::new([-1, -1]), hi).unwrap());
        let a = travel_cost(&field, &region, &o, &x).unwrap();
        let b = travel_cost(&field, &inner, &o, &x).unwrap();
        prop_assert!(b >= a - 1e-12, "{a} vs {b}");
    }

    #[test]
    fn fields_are_reproducible(seed in any::<u64>(), r in 1i64..5) {
        let bx = BoxRegion::centered(2, r);
        let a = sample_field(&TP, &bx, seed).unwrap();
        let b = sample_field(&TP, &bx, seed).unwrap();
        prop_assert_eq!(&a, &b);
        let back = field_from_bytes(&field_to_bytes(&a), TP).unwrap();
        prop_assert_eq!(a.values(), back.values());
    }

    #[test]
    fn wilson_contains_the_estimate(n in 1usize..500, k in 0usize..500) {
        let k = k % (n + 1);
        let (lo, hi) = wilson(k, n, Z95);
        let p = k as f64 / n as f64;
        prop_assert!(lo <= p + 1e-12 && p <= hi + 1e-12 && lo >= 0.0 && hi <= 1.0);
    }

    #[test]
    fn entropy_is_nonnegative(xs in prop::collection::vec(0.0f64..10.0, 1..6), w in prop::collection::vec(0.01f64..1.0, 6)) {
        let total: f64 = w[..xs.len()].iter().sum();
        let ps: Vec<f64> = w[..xs.len()].iter().map(|v| v / total).collect();
        prop_assert!(discrete_entropy(&xs, &ps) >= 0.0);
    }

    #[test]
    fn per_site_entropy_bound(us in prop::collection::vec(0.0f64..20.0, 2..5), q in 0.01f64..0.99, lambda in -2.0f64..0.0) {
        let mut ps = vec![q];
        ps.extend(std::iter::repeat_n((1.0 - q) / (us.len() - 1) as f64, us.len() - 1));
        let (ent, rhs, psi) = site_entropy(&us, &ps, lambda);
        prop_assert!(ent <= rhs * (1.0 + 1e-9) + 1e-12, "{ent} > {rhs}");
        prop_assert!(psi >= 0.0);
    }

    #[test]
    fn reals_round_trip(v in any::<f64>().prop_filter("finite", |v| v.is_finite())) {
        prop_assert_eq!(fmt_real(v).parse::<f64>().unwrap(), v);
    }

    #[test]
    fn canonical_form_ignores_translation(dx in -5i64..5, dy in -5i64..5) {
        let cells = [[0, 0], [1, 0], [1, 1], [2, 1]].map(LatticePoint::new);
        let moved: Vec<LatticePoint> = cells.iter().map(|c| LatticePoint::new([c.coords()[0] + dx, c.coords()[1] + dy])).collect();
        prop_assert_eq!(canonical_animal(&cells), canonical_animal(&moved));
    }
}
