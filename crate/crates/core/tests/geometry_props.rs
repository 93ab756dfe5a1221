use ctxloc::geometry::overlap;
use ctxloc::{intersection_area, overlap_loss, relation_descriptor, Window};
use proptest::prelude::*;

fn window() -> impl Strategy<Value = Window> {
    (0.0..90.0f64, 0.0..90.0f64, 0.1..60.0f64, 0.1..60.0f64)
        .prop_map(|(x, y, w, h)| Window::new(x, y, x + w, y + h).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn swap_duality_and_bounds(a in window(), b in window()) {
        let ab = relation_descriptor(&a, &b);
        let ba = relation_descriptor(&b, &a);
        prop_assert_eq!(ab.overlap, ba.overlap);
        prop_assert_eq!(ab.part, ba.container);
        prop_assert_eq!(ab.container, ba.part);
        for v in ab.as_array() {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        prop_assert!(ab.overlap <= ab.part && ab.overlap <= ab.container);
    }

    #[test]
    fn loss_identities(a in window(), b in window()) {
        prop_assert_eq!(overlap_loss(&a, &a), 0.0);
        prop_assert_eq!(overlap_loss(&a, &b), 1.0 - overlap(&a, &b));
        prop_assert!(intersection_area(&a, &b) <= a.area().min(b.area()) + 1e-9);
    }

    #[test]
    fn containment_saturates_part(a in window(), b in window()) {
        if b.contains(&a) {
            prop_assert!((relation_descriptor(&a, &b).part - 1.0).abs() < 1e-12);
        }
    }
}
