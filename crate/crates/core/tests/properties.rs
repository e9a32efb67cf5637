use proptest::prelude::*;

use renal_core::data::{parse_csv, summarize, write_csv, ColumnMap, Outcome};
use renal_core::evaluate::{auc, confusion, roc_curve, ConfusionMatrix};
use renal_core::preprocess::FeatureRange;
use renal_core::synthetic::{generate_synthetic, SyntheticSpec};

fn labels_strategy(n: std::ops::Range<usize>) -> impl Strategy<Value = Vec<Outcome>> {
    prop::collection::vec(any::<bool>(), n).prop_map(|v| {
        let mut v: Vec<Outcome> = v.into_iter().map(Outcome::from_positive).collect();
        v[0] = Outcome::Transplanted;
        v[1] = Outcome::Discarded;
        v
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn csv_write_then_parse_is_identity(
        seed in any::<u64>(),
        n in 1usize..60,
        noise in 0usize..3,
        missing in 0.0f64..0.3,
    ) {
        let spec = SyntheticSpec { n, noise_columns: noise, missing_rate: missing, ..Default::default() };
        let ds = generate_synthetic(&spec, seed).unwrap();
        let mut buf = Vec::new();
        write_csv(&ds, &mut buf, &ColumnMap::identity()).unwrap();
        let back = parse_csv(buf.as_slice(), &ColumnMap::identity()).unwrap();
        prop_assert_eq!(back, ds);
    }

    #[test]
    fn summary_ignores_row_order(seed in any::<u64>(), shuffle in any::<u64>()) {
        let spec = SyntheticSpec { n: 80, missing_rate: 0.1, ..Default::default() };
        let ds = generate_synthetic(&spec, seed).unwrap();
        let mut rng = renal_core::rng::rng_from(shuffle);
        let perm = renal_core::rng::permutation(ds.len(), &mut rng);
        let (a, b) = (summarize(&ds).unwrap(), summarize(&ds.subset(&perm)).unwrap());
        prop_assert_eq!(a.n_transplanted, b.n_transplanted);
        prop_assert_eq!(a.n_discarded, b.n_discarded);
        for (fa, fb) in a.features.iter().zip(&b.features) {
            prop_assert_eq!(fa.missing, fb.missing);
            for (ca, cb) in [(&fa.transplanted, &fb.transplanted), (&fa.discarded, &fb.discarded)] {
                prop_assert_eq!(ca.count, cb.count);
                match (ca.mean, cb.mean) {
                    (Some(x), Some(y)) => prop_assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0)),
                    (x, y) => prop_assert_eq!(x, y),
                }
            }
        }
    }

    #[test]
    fn normalization_preserves_order(
        lo in -100.0f64..100.0,
        width in 0.001f64..100.0,
        a in -200.0f64..200.0,
        b in -200.0f64..200.0,
    ) {
        let r = FeatureRange { e_min: lo, e_max: lo + width };
        let (na, nb) = (r.normalize(a), r.normalize(b));
        prop_assert!((0.0..=1.0).contains(&na));
        if a <= b {
            prop_assert!(na <= nb);
        } else {
            prop_assert!(na >= nb);
        }
    }

    #[test]
    fn auc_invariant_under_monotone_transform(
        labels in labels_strategy(2..80),
        raw in prop::collection::vec(0u8..12, 80),
        shift in -3.0f64..3.0,
        scale in 0.1f64..10.0,
    ) {
        let scores: Vec<f64> = labels.iter().zip(&raw).map(|(_, &r)| r as f64 / 11.0).collect();
        let mapped: Vec<f64> = scores.iter().map(|s| (scale * s + shift).exp()).collect();
        let a = auc(&roc_curve(&scores, &labels).unwrap());
        let b = auc(&roc_curve(&mapped, &labels).unwrap());
        prop_assert!((a - b).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn confusion_matches_double_loop(
        labels in labels_strategy(2..100),
        raw in prop::collection::vec(0.0f64..1.0, 100),
        threshold in 0.0f64..1.0,
    ) {
        let scores = &raw[..labels.len()];
        let mut oracle = ConfusionMatrix::default();
        for predicted in [true, false] {
            for actual in [true, false] {
                let count = scores
                    .iter()
                    .zip(&labels)
                    .filter(|(s, l)| (**s >= threshold) == predicted && l.is_positive() == actual)
                    .count() as u64;
                match (predicted, actual) {
                    (true, true) => oracle.tp = count,
                    (true, false) => oracle.fp = count,
                    (false, true) => oracle.fn_ = count,
                    (false, false) => oracle.tn = count,
                }
            }
        }
        prop_assert_eq!(confusion(scores, &labels, threshold).unwrap(), oracle);
    }
}
