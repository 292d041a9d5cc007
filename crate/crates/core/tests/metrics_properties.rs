use nsb_core::geometry::BinaryMask;
use nsb_core::metrics::{accuracy, bde, confusion_counts, dice, mean_confidence_interval};
use nsb_core::segment::extract_boundary;
use proptest::prelude::*;

mod common;
use common::{brute_bde, brute_counts};

fn mask_pair() -> impl Strategy<Value = (BinaryMask, BinaryMask)> {
    (1usize..=32, 1usize..=32).prop_flat_map(|(w, h)| {
        (proptest::collection::vec(any::<bool>(), w * h), proptest::collection::vec(any::<bool>(), w * h))
            .prop_map(move |(a, b)| (BinaryMask::from_bits(w, h, a), BinaryMask::from_bits(w, h, b)))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn counts_and_scores_match_oracles((p, g) in mask_pair()) {
        let c = confusion_counts(&p, &g).unwrap();
        let oracle = brute_counts(&p, &g);
        let (tp, fp, fn_, tn) = (oracle.tp, oracle.fp, oracle.fn_, oracle.tn);
        prop_assert_eq!((c.tp, c.fp, c.fn_, c.tn), (tp, fp, fn_, tn));
        prop_assert_eq!(c.total() as usize, p.width() * p.height());
        let d = dice(&c);
        if 2 * tp + fp + fn_ > 0 {
            prop_assert!((d.value - 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64).abs() <= 1e-9);
        }
        prop_assert!((0.0..=1.0).contains(&d.value));
        let acc = accuracy(&c).unwrap();
        prop_assert!((acc - (tp + tn) as f64 / (tp + fp + fn_ + tn) as f64).abs() <= 1e-9);

        let (bp, bg) = (extract_boundary(&p), extract_boundary(&g));
        if !bp.is_empty() && !bg.is_empty() {
            let s = bde(&bp, &bg).unwrap();
            prop_assert!((s.symmetric - brute_bde(&bp, &bg)).abs() <= 1e-9);
            prop_assert!(s.symmetric >= 0.0);
            prop_assert_eq!(s.symmetric == 0.0, bp == bg);
        }
    }

    #[test]
    fn symmetry_and_complement((p, g) in mask_pair()) {
        let c = confusion_counts(&p, &g).unwrap();
        let swapped = confusion_counts(&g, &p).unwrap();
        prop_assert_eq!(dice(&c), dice(&swapped));
        let comp = confusion_counts(&p.complement(), &g.complement()).unwrap();
        prop_assert_eq!(accuracy(&c).unwrap(), accuracy(&comp).unwrap());
    }

    #[test]
    fn dice_is_harmonic_mean_of_precision_and_recall((p, g) in mask_pair()) {
        let c = confusion_counts(&p, &g).unwrap();
        if let (Some(pr), Some(re)) = (c.precision(), c.recall()) {
            if pr + re > 0.0 {
                prop_assert!((dice(&c).value - 2.0 * pr * re / (pr + re)).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn interval_shrinks_with_replication(values in proptest::collection::vec(-100.0f64..100.0, 2..20), k in 2usize..6) {
        let base = mean_confidence_interval(&values).unwrap();
        let replicated: Vec<f64> = values.iter().cycle().take(values.len() * k).cloned().collect();
        let rep = mean_confidence_interval(&replicated).unwrap();
        let n = values.len() as f64;
        let kn = n * k as f64;
        // Sample std-dev of the replicated set differs by the n-1 correction.
        let s_base = base.half_width * n.sqrt() / 1.96;
        let s_rep = s_base * ((n - 1.0) * kn / (n * (kn - 1.0))).sqrt();
        prop_assert!((rep.half_width - 1.96 * s_rep / kn.sqrt()).abs() <= 1e-9 * (1.0 + base.half_width));
        prop_assert!(rep.half_width <= base.half_width + 1e-12);
    }
}

#[test]
fn offset_squares_match_all_pairs_oracle() {
    let a = BinaryMask::from_fn(20, 12, |x, y| (2..8).contains(&x) && (3..9).contains(&y));
    let b = BinaryMask::from_fn(20, 12, |x, y| (4..10).contains(&x) && (3..9).contains(&y));
    let (ba, bb) = (extract_boundary(&a), extract_boundary(&b));
    assert_eq!(bde(&ba, &bb).unwrap().symmetric, brute_bde(&ba, &bb));
}
