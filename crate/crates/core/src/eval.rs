//! Threshold semantics, confusion counting, and the four pixel metrics.
//!
//! A model output at or above the threshold counts as a positive
//! prediction. Sweeping the threshold over a grid yields per-threshold
//! confusion counts and PPV / NPV / Sensitivity / Specificity; undefined
//! ratios (zero denominators) are carried explicitly and rendered as
//! blanks in CSV, never as NaN.

use serde::Serialize;
use thiserror::Error;

use crate::error::TensorError;
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("threshold {0} outside [0, 1]")]
    BadThreshold(f64),
    #[error("{side} contains non-binary value {value}")]
    NonBinary { side: &'static str, value: f32 },
    #[error("outputs are constant; unit rescaling is undefined")]
    ConstantOutputs,
    #[error("thresholds must be strictly increasing")]
    UnsortedThresholds,
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Pixel-level confusion counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl Confusion {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// The four derived metrics; `None` marks an undefined ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Metrics {
    pub ppv: Option<f64>,
    pub npv: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    if den == 0 {
        None
    } else {
        Some(num as f64 / den as f64)
    }
}

/// PPV = TP/(TP+FP), NPV = TN/(TN+FN), Sensitivity = TP/(TP+FN),
/// Specificity = TN/(TN+FP).
pub fn metrics(c: &Confusion) -> Metrics {
    Metrics {
        ppv: ratio(c.tp, c.tp + c.fp),
        npv: ratio(c.tn, c.tn + c.fn_),
        sensitivity: ratio(c.tp, c.tp + c.fn_),
        specificity: ratio(c.tn, c.tn + c.fp),
    }
}

/// Binary mask: 1 where `outputs >= t`, else 0.
pub fn threshold(outputs: &Tensor, t: f64) -> Result<Tensor, EvalError> {
    if !(0.0..=1.0).contains(&t) {
        return Err(EvalError::BadThreshold(t));
    }
    let data = outputs
        .data()
        .iter()
        .map(|&v| if v as f64 >= t { 1.0 } else { 0.0 })
        .collect();
    Ok(Tensor::from_vec(outputs.shape(), data)?)
}

fn check_binary(side: &'static str, t: &Tensor) -> Result<(), EvalError> {
    if let Some(&bad) = t.data().iter().find(|&&v| v != 0.0 && v != 1.0) {
        return Err(EvalError::NonBinary { side, value: bad });
    }
    Ok(())
}

/// Confusion counts between a binary prediction and binary labels.
pub fn confusion(pred: &Tensor, labels: &Tensor) -> Result<Confusion, EvalError> {
    if pred.shape() != labels.shape() {
        return Err(EvalError::Tensor(TensorError::ShapeMismatch {
            op: "confusion",
            lhs: pred.shape().to_vec(),
            rhs: labels.shape().to_vec(),
        }));
    }
    check_binary("prediction", pred)?;
    check_binary("labels", labels)?;
    Ok(confusion_counts(&pred.data(), &labels.data(), 0.5))
}

/// Counts with an inline threshold, avoiding a materialized mask per
/// sweep row. `pred >= t` is a positive prediction; labels are 0/1.
fn confusion_counts(pred: &[f32], labels: &[f32], t: f64) -> Confusion {
    let (mut tp, mut fp, mut tn, mut fn_) = (0u64, 0u64, 0u64, 0u64);
    for (&p, &y) in pred.iter().zip(labels) {
        let positive = p as f64 >= t;
        let truth = y != 0.0;
        match (positive, truth) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    Confusion { tp, fp, tn, fn_ }
}

/// Linear rescale of a whole output set onto [0, 1]:
/// `(x - min) / (max - min)`. Rejects constant outputs.
pub fn rescale_unit(outputs: &Tensor) -> Result<Tensor, EvalError> {
    let data = outputs.data();
    let mut min = f32::INFINITY;
    let mut max = f32::NEG_INFINITY;
    for &v in data.iter() {
        min = min.min(v);
        max = max.max(v);
    }
    if !(max > min) {
        return Err(EvalError::ConstantOutputs);
    }
    let span = (max - min) as f64;
    let rescaled = data
        .iter()
        .map(|&v| (((v - min) as f64) / span) as f32)
        .collect();
    drop(data);
    Ok(Tensor::from_vec(outputs.shape(), rescaled)?)
}

/// One sweep row: the threshold, its confusion counts, and metrics.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub threshold: f64,
    pub confusion: Confusion,
    pub metrics: Metrics,
}

/// Metrics per threshold over an ordered grid.
#[derive(Debug, Clone, Serialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

/// The default grid 0.05, 0.10, ..., 0.95.
pub fn default_thresholds() -> Vec<f64> {
    (1..=19).map(|i| i as f64 * 0.05).collect()
}

/// Sweeps `outputs` against `labels` over strictly increasing thresholds.
pub fn sweep(outputs: &Tensor, labels: &Tensor, thresholds: &[f64]) -> Result<SweepTable, EvalError> {
    if outputs.shape() != labels.shape() {
        return Err(EvalError::Tensor(TensorError::ShapeMismatch {
            op: "sweep",
            lhs: outputs.shape().to_vec(),
            rhs: labels.shape().to_vec(),
        }));
    }
    if thresholds.windows(2).any(|w| w[0] >= w[1]) {
        return Err(EvalError::UnsortedThresholds);
    }
    check_binary("labels", labels)?;
    for &t in thresholds {
        if !(0.0..=1.0).contains(&t) {
            return Err(EvalError::BadThreshold(t));
        }
    }
    let out = outputs.data();
    let lab = labels.data();
    let rows = thresholds
        .iter()
        .map(|&t| {
            let confusion = confusion_counts(&out, &lab, t);
            SweepRow {
                threshold: t,
                confusion,
                metrics: metrics(&confusion),
            }
        })
        .collect();
    Ok(SweepTable { rows })
}

fn metric_cell(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{v:.6}"),
        None => String::new(),
    }
}

impl SweepTable {
    /// Row for a given threshold, matched within float tolerance.
    pub fn row_at(&self, t: f64) -> Option<&SweepRow> {
        self.rows.iter().find(|r| (r.threshold - t).abs() < 1e-9)
    }

    /// CSV with the fixed header and 6-decimal metrics; undefined metrics
    /// render as empty cells.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("threshold,tp,fp,tn,fn,ppv,npv,sensitivity,specificity\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{:.6},{},{},{},{},{},{},{},{}\n",
                r.threshold,
                r.confusion.tp,
                r.confusion.fp,
                r.confusion.tn,
                r.confusion.fn_,
                metric_cell(r.metrics.ppv),
                metric_cell(r.metrics.npv),
                metric_cell(r.metrics.sensitivity),
                metric_cell(r.metrics.specificity),
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threshold_is_inclusive_at_the_cut() {
        let out = Tensor::from_vec(&[3], vec![0.1, 0.3, 0.5]).unwrap();
        let mask = threshold(&out, 0.3).unwrap();
        assert_eq!(mask.to_vec(), vec![0.0, 1.0, 1.0]);
        assert_eq!(threshold(&out, 0.0).unwrap().to_vec(), vec![1.0; 3]);
        assert_eq!(threshold(&out, 0.51).unwrap().to_vec(), vec![0.0; 3]);
    }

    #[test]
    fn perfect_prediction_counts() {
        let labels: Vec<f32> = (0..100).map(|i| if i < 50 { 1.0 } else { 0.0 }).collect();
        let pred = Tensor::from_vec(&[100], labels.clone()).unwrap();
        let lab = Tensor::from_vec(&[100], labels).unwrap();
        let c = confusion(&pred, &lab).unwrap();
        assert_eq!(
            c,
            Confusion {
                tp: 50,
                fp: 0,
                tn: 50,
                fn_: 0
            }
        );
        let m = metrics(&c);
        assert_eq!(m.ppv, Some(1.0));
        assert_eq!(m.npv, Some(1.0));
        assert_eq!(m.sensitivity, Some(1.0));
        assert_eq!(m.specificity, Some(1.0));
    }

    #[test]
    fn all_ones_against_all_zeros_is_pure_false_positive() {
        let pred = Tensor::full(&[100], 1.0);
        let lab = Tensor::zeros(&[100]);
        let c = confusion(&pred, &lab).unwrap();
        assert_eq!(c.fp, 100);
        assert_eq!(c.total(), 100);
    }

    #[test]
    fn hand_counted_fixture() {
        // 100 pixels: predictions hit 2 of 3 true positives plus 1 false alarm
        let mut pred = vec![0.0f32; 100];
        let mut lab = vec![0.0f32; 100];
        lab[0] = 1.0;
        lab[2] = 1.0;
        lab[4] = 1.0;
        pred[0] = 1.0;
        pred[1] = 1.0;
        pred[2] = 1.0;
        let c = confusion(
            &Tensor::from_vec(&[100], pred).unwrap(),
            &Tensor::from_vec(&[100], lab).unwrap(),
        )
        .unwrap();
        assert_eq!(
            c,
            Confusion {
                tp: 2,
                fp: 1,
                tn: 96,
                fn_: 1
            }
        );
        let m = metrics(&c);
        assert!((m.ppv.unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.sensitivity.unwrap() - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn fixture_metrics_arithmetic() {
        let c = Confusion {
            tp: 2,
            fp: 1,
            fn_: 2,
            tn: 95,
        };
        let m = metrics(&c);
        assert!((m.ppv.unwrap() - 0.6667).abs() < 1e-4);
        assert!((m.sensitivity.unwrap() - 0.5).abs() < 1e-12);
        assert!((m.specificity.unwrap() - 95.0 / 96.0).abs() < 1e-12);
        assert!((m.npv.unwrap() - 95.0 / 97.0).abs() < 1e-12);
    }

    #[test]
    fn empty_positive_set_gives_undefined_ppv() {
        let c = Confusion {
            tp: 0,
            fp: 0,
            tn: 5,
            fn_: 2,
        };
        assert_eq!(metrics(&c).ppv, None);
    }

    #[test]
    fn rescale_maps_span_onto_unit_interval() {
        let out = Tensor::from_vec(&[3], vec![0.0, 0.225, 0.45]).unwrap();
        let r = rescale_unit(&out).unwrap().to_vec();
        assert_eq!(r[0], 0.0);
        assert!((r[1] - 0.5).abs() < 1e-6);
        assert_eq!(r[2], 1.0);
    }

    #[test]
    fn rescale_identity_when_already_spanning() {
        let out = Tensor::from_vec(&[3], vec![0.0, 0.25, 1.0]).unwrap();
        assert_eq!(rescale_unit(&out).unwrap().to_vec(), vec![0.0, 0.25, 1.0]);
    }

    #[test]
    fn rescale_preserves_order() {
        let vals = vec![0.4, 0.1, 0.3, 0.2, 0.35];
        let out = Tensor::from_vec(&[5], vals.clone()).unwrap();
        let r = rescale_unit(&out).unwrap().to_vec();
        let argsort = |v: &[f32]| {
            let mut idx: Vec<usize> = (0..v.len()).collect();
            idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap());
            idx
        };
        assert_eq!(argsort(&vals), argsort(&r));
    }

    #[test]
    fn rescale_rejects_constant_outputs() {
        let out = Tensor::full(&[4], 0.3);
        assert!(matches!(rescale_unit(&out), Err(EvalError::ConstantOutputs)));
    }

    #[test]
    fn sweep_with_zero_threshold_has_full_sensitivity() {
        let out = Tensor::from_vec(&[6], vec![0.1, 0.9, 0.4, 0.6, 0.2, 0.8]).unwrap();
        let lab = Tensor::from_vec(&[6], vec![0.0, 1.0, 1.0, 0.0, 1.0, 0.0]).unwrap();
        let table = sweep(&out, &lab, &[0.0, 0.5]).unwrap();
        assert_eq!(table.rows[0].metrics.sensitivity, Some(1.0));
    }

    #[test]
    fn sweep_three_pixel_hand_table() {
        let out = Tensor::from_vec(&[3], vec![0.2, 0.5, 0.8]).unwrap();
        let lab = Tensor::from_vec(&[3], vec![0.0, 1.0, 1.0]).unwrap();
        let table = sweep(&out, &lab, &[0.1, 0.4, 0.7, 0.9]).unwrap();
        let rows = &table.rows;
        assert_eq!(rows[0].confusion, Confusion { tp: 2, fp: 1, tn: 0, fn_: 0 });
        assert_eq!(rows[1].confusion, Confusion { tp: 2, fp: 0, tn: 1, fn_: 0 });
        assert_eq!(rows[2].confusion, Confusion { tp: 1, fp: 0, tn: 1, fn_: 1 });
        assert_eq!(rows[3].confusion, Confusion { tp: 0, fp: 0, tn: 1, fn_: 2 });
        assert_eq!(rows[3].metrics.ppv, None);
    }

    #[test]
    fn sweep_rejects_unsorted_thresholds() {
        let out = Tensor::zeros(&[2]);
        let lab = Tensor::zeros(&[2]);
        assert!(matches!(
            sweep(&out, &lab, &[0.5, 0.4]),
            Err(EvalError::UnsortedThresholds)
        ));
    }

    #[test]
    fn csv_header_and_blank_cells() {
        let out = Tensor::from_vec(&[2], vec![0.2, 0.3]).unwrap();
        let lab = Tensor::from_vec(&[2], vec![0.0, 0.0]).unwrap();
        let table = sweep(&out, &lab, &[0.9]).unwrap();
        let csv = table.to_csv();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "threshold,tp,fp,tn,fn,ppv,npv,sensitivity,specificity"
        );
        // no positives at 0.9: ppv and sensitivity are blank
        assert_eq!(lines.next().unwrap(), "0.900000,0,0,2,0,,1.000000,,1.000000");
    }
}
