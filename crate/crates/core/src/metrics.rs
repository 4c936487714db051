//! F1 scores, the mean rare-class training count, and Student-t intervals.

use std::collections::BTreeSet;

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{usage, Result};
use crate::scalar::Scalar;
use crate::synthdata::SplitBundle;

/// Per-class true positive, false positive and false negative counts.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: Vec<usize>,
    pub fp: Vec<usize>,
    pub fn_: Vec<usize>,
}

impl ConfusionCounts {
    pub fn from_predictions(predictions: &[usize], labels: &[usize], num_classes: usize) -> Self {
        let mut c = ConfusionCounts { tp: vec![0; num_classes], fp: vec![0; num_classes], fn_: vec![0; num_classes] };
        for (&p, &y) in predictions.iter().zip(labels) {
            if p == y {
                c.tp[y] += 1;
            } else {
                c.fp[p] += 1;
                c.fn_[y] += 1;
            }
        }
        c
    }

    /// `2tp / (2tp + fp + fn)`, and 0 for a class with no support and no predictions.
    pub fn f1(&self, class: usize) -> f64 {
        let (tp, fp, fn_) =
            (self.tp.get(class).copied().unwrap_or(0), self.fp.get(class).copied().unwrap_or(0), self.fn_.get(class).copied().unwrap_or(0));
        let denom = 2 * tp + fp + fn_;
        if denom == 0 {
            0.0
        } else {
            (2 * tp) as f64 / denom as f64
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct F1Report {
    /// `(class, F1)` in the order of the requested class set.
    pub per_class: Vec<(usize, f64)>,
    /// Unweighted mean over the class set.
    pub macro_f1: f64,
}

pub fn f1_scores(predictions: &[usize], labels: &[usize], classes: &[usize]) -> Result<F1Report> {
    if predictions.len() != labels.len() {
        return Err(usage(format!("{} predictions for {} labels", predictions.len(), labels.len())));
    }
    if labels.is_empty() {
        return Err(usage("cannot score an empty evaluation set"));
    }
    let num_classes = predictions.iter().chain(labels).chain(classes).map(|&c| c + 1).max().unwrap_or(0);
    let counts = ConfusionCounts::from_predictions(predictions, labels, num_classes);
    let per_class: Vec<(usize, f64)> = classes.iter().map(|&c| (c, counts.f1(c))).collect();
    let macro_f1 = if per_class.is_empty() { 0.0 } else { per_class.iter().map(|&(_, f)| f).sum::<f64>() / per_class.len() as f64 };
    Ok(F1Report { per_class, macro_f1 })
}

/// Mean over `rare_classes` of the number of training samples carrying that label.
pub fn n_rare<T: Scalar>(bundle: &SplitBundle<T>, rare_classes: &BTreeSet<usize>) -> f64 {
    if rare_classes.is_empty() {
        return 0.0;
    }
    let total: usize = bundle.train.iter().filter(|s| rare_classes.contains(&s.label)).count();
    total as f64 / rare_classes.len() as f64
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricSummary<T> {
    pub mean: T,
    pub ci_lo: T,
    pub ci_hi: T,
    pub n: usize,
}

impl<T: Scalar> MetricSummary<T> {
    pub fn half_width(&self) -> T {
        (self.ci_hi - self.ci_lo) / T::of(2.0)
    }
}

/// Two-sided Student-t quantile `t_{(1+level)/2, dof}`.
pub fn t_quantile(level: f64, dof: usize) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(usage("confidence level must lie in (0, 1)"));
    }
    if dof == 0 {
        return Err(usage("Student-t quantile needs at least one degree of freedom"));
    }
    let dist = StudentsT::new(0.0, 1.0, dof as f64).map_err(|e| usage(e.to_string()))?;
    Ok(dist.inverse_cdf((1.0 + level) / 2.0))
}

/// `mean ± t · s / √n` with the sample standard deviation `s`.
pub fn confidence_interval<T: Scalar>(values: &[T], level: f64) -> Result<MetricSummary<T>> {
    let n = values.len();
    if n < 2 {
        return Err(usage(format!("confidence interval needs at least 2 values, got {n}")));
    }
    let nn = T::of_usize(n);
    // shifted by the first value so identical inputs give an exact mean
    let shift = values[0];
    let mean = shift + values.iter().map(|&v| v - shift).sum::<T>() / nn;
    let ss = values.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>();
    let s = (ss / (nn - T::one())).sqrt();
    let half = T::of(t_quantile(level, n - 1)?) * s / nn.sqrt();
    Ok(MetricSummary { mean, ci_lo: mean - half, ci_hi: mean + half, n })
}
