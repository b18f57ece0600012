//! Metric identities and sweep properties.

mod common;

use jht_core::eval::{confusion, metrics, rescale_unit, sweep, threshold, Confusion};
use jht_core::Tensor;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Sensitivity never increases and specificity never decreases as the
    /// threshold grows: the positive-prediction set only shrinks.
    #[test]
    fn sweep_monotonicity(
        outputs in prop::collection::vec(0.0f32..=1.0, 20..200),
        labels in prop::collection::vec(prop::bool::ANY, 20..200),
    ) {
        let n = outputs.len().min(labels.len());
        let out = Tensor::from_vec(&[n], outputs[..n].to_vec()).unwrap();
        let lab = Tensor::from_vec(
            &[n],
            labels[..n].iter().map(|&b| b as u8 as f32).collect(),
        )
        .unwrap();
        let grid: Vec<f64> = (1..=19).map(|i| i as f64 * 0.05).collect();
        let table = sweep(&out, &lab, &grid).unwrap();
        for w in table.rows.windows(2) {
            if let (Some(a), Some(b)) = (w[0].metrics.sensitivity, w[1].metrics.sensitivity) {
                prop_assert!(b <= a + 1e-12);
            }
            if let (Some(a), Some(b)) = (w[0].metrics.specificity, w[1].metrics.specificity) {
                prop_assert!(b >= a - 1e-12);
            }
        }
        for r in &table.rows {
            prop_assert_eq!(r.confusion.total(), n as u64);
        }
    }

    /// PPV * (TP + FP) == TP through exact rational arithmetic: the float
    /// metric must be the correctly rounded ratio of the integer counts.
    #[test]
    fn ppv_is_the_exact_count_ratio(tp in 0u64..10_000, fp in 0u64..10_000) {
        prop_assume!(tp + fp > 0);
        let c = Confusion { tp, fp, tn: 0, fn_: 1 };
        let m = metrics(&c);
        let ppv = m.ppv.unwrap();
        prop_assert_eq!(ppv.to_bits(), (tp as f64 / (tp + fp) as f64).to_bits());
        // the rational identity, checked in integers
        prop_assert_eq!((ppv * (tp + fp) as f64).round() as u64, tp);
    }

    /// Thresholding at t on raw outputs equals thresholding at the mapped
    /// threshold t' = (t - min)/(max - min) on rescaled outputs. The cut
    /// sits mid-way between lattice values so float rounding (well below
    /// the lattice spacing) cannot flip any comparison.
    #[test]
    fn rescale_preserves_sweep_confusions(
        raw_levels in prop::collection::vec(0u8..200, 30..120),
        labels in prop::collection::vec(prop::bool::ANY, 30..120),
        cut in 1u8..200,
    ) {
        let n = raw_levels.len().min(labels.len());
        prop_assume!(n >= 2);
        // outputs on a coarse lattice v = level / 256
        let vals: Vec<f32> = raw_levels[..n].iter().map(|&l| l as f32 / 256.0).collect();
        let min = vals.iter().cloned().fold(f32::INFINITY, f32::min);
        let max = vals.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        prop_assume!(max > min);
        let lab: Vec<f32> = labels[..n].iter().map(|&b| b as u8 as f32).collect();

        let out = Tensor::from_vec(&[n], vals.clone()).unwrap();
        let lab_t = Tensor::from_vec(&[n], lab).unwrap();
        let rescaled = rescale_unit(&out).unwrap();

        let t_raw = (cut as f32 - 0.5) / 256.0;
        let t = t_raw as f64;
        prop_assume!((0.0..=1.0).contains(&t));
        let t_mapped = ((t_raw - min) as f64) / ((max - min) as f64);
        prop_assume!((0.0..=1.0).contains(&t_mapped));

        let raw_mask = threshold(&out, t).unwrap();
        let mapped_mask = threshold(&rescaled, t_mapped).unwrap();
        let raw_c = confusion(&raw_mask, &lab_t).unwrap();
        let mapped_c = confusion(&mapped_mask, &lab_t).unwrap();
        prop_assert_eq!(raw_c, mapped_c);
    }
}
