use proptest::prelude::*;
use redzone_core::metrics::{auc, confusion, cost_sensitive, risk_sensitive, ConfusionCounts, Fraction};
use redzone_core::{Label, LevelSetPartition};

/// Pairwise Mann-Whitney count: positive above negative scores 1, a tie 1/2.
fn brute_auc(scores: &[f64], truth: &[bool]) -> Option<f64> {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, si) in scores.iter().enumerate() {
        for (j, sj) in scores.iter().enumerate() {
            if truth[i] && !truth[j] {
                pairs += 1.0;
                wins += if si > sj { 1.0 } else if si == sj { 0.5 } else { 0.0 };
            }
        }
    }
    (pairs > 0.0).then(|| wins / pairs)
}

fn le(a: Fraction, b: Fraction) -> bool {
    a.num as u128 * b.den as u128 <= b.num as u128 * a.den as u128
}

fn table() -> impl Strategy<Value = ConfusionCounts> {
    (0u64..50, 0u64..50, 0u64..50, 0u64..50, 0u64..50, 0u64..50)
        .prop_map(|(tp, up, fn_, fp, un, tn)| ConfusionCounts { tp, up, fn_, fp, un, tn })
}

#[test]
fn hand_table() {
    use Label::*;
    let labels = vec![Upper, Upper, Undetermined, Lower, Upper, Undetermined, Undetermined, Lower, Lower];
    let truth = [true, true, true, true, false, false, false, false, false];
    let c = confusion(&LevelSetPartition::from_labels(labels, 0.0, 0.0), &truth);
    assert_eq!(c, ConfusionCounts { tp: 2, up: 1, fn_: 1, fp: 1, un: 2, tn: 2 });

    // risk: TP 2, FN 1+1, FP 1, TN 2+2
    let r = risk_sensitive(&c);
    assert_eq!(r.sensitivity, Fraction::new(2, 4));
    assert_eq!(r.specificity, Fraction::new(4, 5));
    assert_eq!(r.f1, Fraction::new(4, 7));
    // cost: TP 2+1, FN 1, FP 1+2, TN 2
    let k = cost_sensitive(&c);
    assert_eq!(k.sensitivity, Fraction::new(3, 4));
    assert_eq!(k.specificity, Fraction::new(2, 5));
    assert_eq!(k.f1, Fraction::new(6, 10));
}

#[test]
fn empty_classes_are_undefined() {
    let c = ConfusionCounts { tn: 3, un: 1, ..Default::default() };
    assert_eq!(risk_sensitive(&c).sensitivity.value(), None);
    assert_eq!(cost_sensitive(&c).specificity.value(), Some(0.75));
    assert_eq!(auc(&[1.0, 2.0], &[false, false]), None);
}

#[test]
fn auc_ties_and_extremes() {
    assert_eq!(auc(&[0.0, 1.0], &[false, true]), Some(1.0));
    assert_eq!(auc(&[1.0, 0.0], &[false, true]), Some(0.0));
    assert_eq!(auc(&[1.0, 1.0], &[false, true]), Some(0.5));
    let inf = [f64::NEG_INFINITY, f64::NEG_INFINITY, 0.5, f64::INFINITY];
    assert_eq!(auc(&inf, &[true, false, false, true]), brute_auc(&inf, &[true, false, false, true]));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn risk_and_cost_bracket_each_other(c in table()) {
        let r = risk_sensitive(&c);
        let k = cost_sensitive(&c);
        prop_assert!(le(r.sensitivity, k.sensitivity));
        prop_assert!(le(k.specificity, r.specificity));
        prop_assert_eq!(r.sensitivity.den, k.sensitivity.den);
        prop_assert_eq!(r.specificity.den, k.specificity.den);
    }

    #[test]
    fn resolving_correctly_never_hurts(c in table()) {
        // moving undetermined points to their true side
        let resolved = ConfusionCounts { tp: c.tp + c.up, up: 0, tn: c.tn + c.un, un: 0, ..c };
        let (r0, r1) = (risk_sensitive(&c), risk_sensitive(&resolved));
        let (k0, k1) = (cost_sensitive(&c), cost_sensitive(&resolved));
        prop_assert!(le(r0.sensitivity, r1.sensitivity));
        prop_assert!(le(k0.specificity, k1.specificity));
        prop_assert!(le(r0.f1, r1.f1) || r0.f1.den == 0);
        prop_assert!(le(k0.f1, k1.f1) || k0.f1.den == 0);
    }

    #[test]
    fn auc_matches_pairwise_count(
        data in prop::collection::vec((prop::sample::select(vec![-1.0, 0.0, 0.5, 1.0, 2.0, f64::INFINITY, f64::NEG_INFINITY]), any::<bool>()), 1..50),
    ) {
        let (scores, truth): (Vec<f64>, Vec<bool>) = data.into_iter().unzip();
        let got = auc(&scores, &truth);
        let want = brute_auc(&scores, &truth);
        match (got, want) {
            (Some(a), Some(b)) => prop_assert!((a - b).abs() <= 1e-12, "{} vs {}", a, b),
            (a, b) => prop_assert_eq!(a, b),
        }
    }
}
