use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use redzone_core::baselines::{nonadaptive_order, random_next, RectQueue};
use redzone_core::GridDomain;

fn is_permutation(order: &[usize], n: usize) -> bool {
    let mut seen = vec![false; n];
    order.len() == n && order.iter().all(|&i| i < n && !std::mem::replace(&mut seen[i], true))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn rectangle_order_covers_every_point_once(cols in 1usize..20, rows in 1usize..20) {
        let d = GridDomain::regular(cols, rows, 2.0).unwrap();
        let order = nonadaptive_order(&d);
        prop_assert!(is_permutation(&order, d.len()));
        // the four corners lead
        let mut corners = vec![0, cols - 1, (rows - 1) * cols, rows * cols - 1];
        corners.sort();
        corners.dedup();
        for &i in &order[..corners.len()] {
            prop_assert!(corners.contains(&i));
        }
    }

    #[test]
    fn queue_skips_measured_points(cols in 2usize..12, rows in 2usize..12, mask in prop::collection::vec(any::<bool>(), 144)) {
        let d = GridDomain::regular(cols, rows, 1.0).unwrap();
        let mut measured = mask[..d.len()].to_vec();
        let mut q = RectQueue::new(&d);
        while let Some(i) = q.next_unmeasured(&measured) {
            prop_assert!(!measured[i]);
            measured[i] = true;
        }
        prop_assert!(measured.iter().all(|m| *m));
    }

    #[test]
    fn random_picks_exhaust_the_grid(n in 1usize..200, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut measured = vec![false; n];
        let mut order = Vec::new();
        while let Some(i) = random_next(&measured, &mut rng) {
            prop_assert!(!measured[i]);
            measured[i] = true;
            order.push(i);
        }
        prop_assert!(is_permutation(&order, n));
    }
}
