//! Test-set evaluation: ROC with tie-collapsed vertices, trapezoid AUC,
//! percentile bootstrap intervals and operating-point metrics.

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// One ROC vertex. Rows with `score >= threshold` are called positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    pub threshold: f64,
    pub tp: usize,
    pub fp: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Roc {
    pub points: Vec<RocPoint>,
    pub auc: f64,
    pub positives: usize,
    pub negatives: usize,
}

fn class_counts(labels: &[u8]) -> Result<(usize, usize)> {
    let p = labels.iter().filter(|&&t| t == 1).count();
    let n = labels.len() - p;
    if p == 0 || n == 0 {
        return Err(Error::SingleClass);
    }
    Ok((p, n))
}

/// ROC by a descending-score sweep; tied scores form one vertex. The first
/// vertex is `(0, 0)` at threshold `+inf`.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<Roc> {
    assert_eq!(scores.len(), labels.len(), "roc lengths");
    let (np, nn) = class_counts(labels)?;
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![RocPoint { fpr: 0.0, tpr: 0.0, threshold: f64::INFINITY, tp: 0, fp: 0 }];
    let (mut tp, mut fp) = (0usize, 0usize);
    // Twice the area in units of one positive-negative pair.
    let mut area2: u128 = 0;
    let mut k = 0;
    while k < idx.len() {
        let s = scores[idx[k]];
        let (tp0, fp0) = (tp, fp);
        while k < idx.len() && scores[idx[k]] == s {
            if labels[idx[k]] == 1 { tp += 1 } else { fp += 1 }
            k += 1;
        }
        area2 += (fp - fp0) as u128 * (tp + tp0) as u128;
        points.push(RocPoint { fpr: fp as f64 / nn as f64, tpr: tp as f64 / np as f64, threshold: s, tp, fp });
    }
    let auc = area2 as f64 / (2.0 * np as f64 * nn as f64);
    Ok(Roc { points, auc, positives: np, negatives: nn })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum OperatingRule {
    Youden,
    Fixed { threshold: f64 },
}

impl Default for OperatingRule {
    fn default() -> Self {
        OperatingRule::Youden
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub threshold: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub accuracy: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

fn point_from_counts(threshold: f64, tp: usize, fp: usize, np: usize, nn: usize) -> OperatingPoint {
    let (tn, fn_) = (nn - fp, np - tp);
    OperatingPoint {
        threshold,
        sensitivity: tp as f64 / np as f64,
        specificity: tn as f64 / nn as f64,
        accuracy: (tp + tn) as f64 / (np + nn) as f64,
        tp,
        fp,
        tn,
        fn_,
    }
}

/// Youden's J over the finite-threshold vertices (ties go to the higher
/// specificity), or the confusion counts at a fixed threshold.
pub fn operating_point(roc: &Roc, scores: &[f64], labels: &[u8], rule: OperatingRule) -> OperatingPoint {
    let (np, nn) = (roc.positives, roc.negatives);
    match rule {
        OperatingRule::Youden => {
            // J * np * nn = tp * nn - fp * np, compared exactly.
            let j = |p: &RocPoint| p.tp as i128 * nn as i128 - p.fp as i128 * np as i128;
            let best = roc.points[1..].iter().fold(None::<&RocPoint>, |b, p| match b {
                Some(q) if j(q) > j(p) || (j(q) == j(p) && q.fp <= p.fp) => Some(q),
                _ => Some(p),
            });
            let b = best.expect("roc has a finite vertex");
            point_from_counts(b.threshold, b.tp, b.fp, np, nn)
        }
        OperatingRule::Fixed { threshold } => {
            let (mut tp, mut fp) = (0, 0);
            for (&s, &t) in scores.iter().zip(labels) {
                if s >= threshold {
                    if t == 1 { tp += 1 } else { fp += 1 }
                }
            }
            point_from_counts(threshold, tp, fp, np, nn)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "metric", rename_all = "snake_case")]
pub enum Metric {
    Auc,
    Accuracy { threshold: f64 },
}

fn metric_value(metric: Metric, scores: &[f64], labels: &[u8]) -> Result<f64> {
    match metric {
        Metric::Auc => roc_auc(scores, labels).map(|r| r.auc),
        Metric::Accuracy { threshold } => {
            let hits = scores.iter().zip(labels).filter(|(&s, &t)| (s >= threshold) == (t == 1)).count();
            Ok(hits as f64 / labels.len() as f64)
        }
    }
}

/// Nearest-rank quantile of sorted values: the `ceil(q n)`-th smallest.
pub fn nearest_rank(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let r = ((q * n as f64) - 1e-9).ceil().clamp(1.0, n as f64) as usize;
    sorted[r - 1]
}

/// Percentile bootstrap interval. Replicate `r` draws from `child(seed, r)`;
/// single-class resamples are redrawn, at most `10 * n_boot` times in total.
pub fn bootstrap_ci(scores: &[f64], labels: &[u8], metric: Metric, n_boot: usize, level: f64, seed: u64) -> Result<(f64, f64)> {
    bootstrap_capped(scores, labels, metric, n_boot, level, seed, 10 * n_boot)
}

fn bootstrap_capped(scores: &[f64], labels: &[u8], metric: Metric, n_boot: usize, level: f64, seed: u64, cap: usize) -> Result<(f64, f64)> {
    if n_boot < 100 || !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidConfig(format!("bootstrap needs n_boot >= 100 and level in (0, 1), got {n_boot}, {level}")));
    }
    class_counts(labels)?;
    let n = labels.len();
    let reps: Vec<(Option<f64>, usize)> = (0..n_boot as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = seed::rng(seed::child(seed, r));
            let (mut s, mut l) = (vec![0.0; n], vec![0u8; n]);
            let mut redraws = 0;
            loop {
                for k in 0..n {
                    let i = rng.random_range(0..n);
                    s[k] = scores[i];
                    l[k] = labels[i];
                }
                let pos = l.iter().filter(|&&t| t == 1).count();
                if metric != Metric::Auc || (pos > 0 && pos < n) {
                    return (metric_value(metric, &s, &l).ok(), redraws);
                }
                redraws += 1;
                if redraws > cap {
                    return (None, redraws);
                }
            }
        })
        .collect();
    let redraws: usize = reps.iter().map(|r| r.1).sum();
    if redraws > cap || reps.iter().any(|r| r.0.is_none()) {
        return Err(Error::DegenerateBootstrap { redraws });
    }
    let mut v: Vec<f64> = reps.into_iter().map(|r| r.0.unwrap()).collect();
    v.sort_by(f64::total_cmp);
    let a = (1.0 - level) / 2.0;
    Ok((nearest_rank(&v, a), nearest_rank(&v, 1.0 - a)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub n_boot: usize,
    pub level: f64,
    pub rule: OperatingRule,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { n_boot: 2000, level: 0.95, rule: OperatingRule::Youden }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub roc: Roc,
    pub auc: f64,
    pub auc_ci: (f64, f64),
    pub level: f64,
    pub rule: OperatingRule,
    pub point: OperatingPoint,
    pub accuracy_ci: (f64, f64),
    pub n_boot: usize,
    pub seed: u64,
}

pub fn evaluate(scores: &[f64], labels: &[u8], cfg: &EvalConfig, seed: u64) -> Result<EvalReport> {
    let roc = roc_auc(scores, labels)?;
    let point = operating_point(&roc, scores, labels, cfg.rule);
    let auc_ci = bootstrap_ci(scores, labels, Metric::Auc, cfg.n_boot, cfg.level, seed::derive(seed, "auc"))?;
    let accuracy_ci = bootstrap_ci(scores, labels, Metric::Accuracy { threshold: point.threshold }, cfg.n_boot, cfg.level, seed::derive(seed, "accuracy"))?;
    Ok(EvalReport { auc: roc.auc, roc, auc_ci, level: cfg.level, rule: cfg.rule, point, accuracy_ci, n_boot: cfg.n_boot, seed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pair_count_auc(s: &[f64], l: &[u8]) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..s.len() {
            for j in 0..s.len() {
                if l[i] == 1 && l[j] == 0 {
                    den += 1.0;
                    num += if s[i] > s[j] { 1.0 } else if s[i] == s[j] { 0.5 } else { 0.0 };
                }
            }
        }
        num / den
    }

    #[test]
    fn worked_example() {
        let r = roc_auc(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]).unwrap();
        assert_eq!(r.auc, 0.75);
        assert_eq!(roc_auc(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]).unwrap().auc, 1.0);
        let flat = roc_auc(&[0.3; 6], &[0, 1, 0, 1, 1, 0]).unwrap();
        assert_eq!(flat.auc, 0.5);
        assert_eq!(flat.points.len(), 2);
        assert_eq!(roc_auc(&[0.3, 0.4], &[1, 1]).unwrap_err().code(), "SingleClass");
    }

    #[test]
    fn roc_shape() {
        let r = roc_auc(&[0.9, 0.1, 0.5, 0.5, 0.7], &[1, 0, 1, 0, 0]).unwrap();
        let first = r.points[0];
        let last = *r.points.last().unwrap();
        assert_eq!((first.fpr, first.tpr, last.fpr, last.tpr), (0.0, 0.0, 1.0, 1.0));
        assert!(r.points.windows(2).all(|w| w[1].fpr >= w[0].fpr && w[1].threshold < w[0].threshold));
    }

    proptest! {
        #[test]
        fn trapezoid_equals_pair_counting(v in prop::collection::vec((0u8..20, 0u8..2), 2..300)) {
            let s: Vec<f64> = v.iter().map(|p| f64::from(p.0) / 20.0).collect();
            let l: Vec<u8> = v.iter().map(|p| p.1).collect();
            prop_assume!(l.contains(&0) && l.contains(&1));
            let r = roc_auc(&s, &l).unwrap();
            prop_assert!((r.auc - pair_count_auc(&s, &l)).abs() < 1e-12);
            let t: Vec<f64> = s.iter().map(|x| (3.0 * x).exp() - 7.0).collect();
            let r2 = roc_auc(&t, &l).unwrap();
            prop_assert_eq!(r2.auc, r.auc);
            let a: Vec<(f64, f64)> = r.points.iter().map(|p| (p.fpr, p.tpr)).collect();
            let b: Vec<(f64, f64)> = r2.points.iter().map(|p| (p.fpr, p.tpr)).collect();
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn nearest_rank_rule() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!((nearest_rank(&v, 0.025), nearest_rank(&v, 0.975)), (3.0, 98.0));
    }

    #[test]
    fn bootstrap_deterministic_and_narrow_at_large_n() {
        let mut rng = seed::rng(1);
        let n = 10_000;
        let l: Vec<u8> = (0..n).map(|i| u8::from(i % 4 == 0)).collect();
        let s: Vec<f64> = l.iter().map(|&t| f64::from(t) * 1.5 + rng.random::<f64>()).collect();
        let a = bootstrap_ci(&s, &l, Metric::Auc, 200, 0.95, 5).unwrap();
        assert_eq!(a, bootstrap_ci(&s, &l, Metric::Auc, 200, 0.95, 5).unwrap());
        assert!(a.0 <= a.1 && a.1 - a.0 < 0.03, "{a:?}");
    }

    #[test]
    fn tiny_minority_triggers_redraw_cap() {
        // Half of all two-row resamples are single-class.
        let (s, l) = ([0.2, 0.7], [0u8, 1]);
        assert_eq!(bootstrap_capped(&s, &l, Metric::Auc, 100, 0.95, 1, 20).unwrap_err().code(), "DegenerateBootstrap");
        assert!(bootstrap_ci(&s, &l, Metric::Auc, 100, 0.95, 1).is_ok());
    }

    #[test]
    fn operating_points() {
        let s = [0.1, 0.2, 0.3, 0.8, 0.9];
        let l = [0, 0, 0, 1, 1];
        let r = roc_auc(&s, &l).unwrap();
        let p = operating_point(&r, &s, &l, OperatingRule::Youden);
        assert_eq!((p.sensitivity, p.specificity, p.threshold), (1.0, 1.0, 0.8));
        let s = [0.0, 1.0, 1.0, 0.0, 1.0, 0.0];
        let l = [0, 1, 0, 1, 1, 0];
        let r = roc_auc(&s, &l).unwrap();
        let p = operating_point(&r, &s, &l, OperatingRule::Fixed { threshold: 0.5 });
        assert_eq!((p.tp, p.fp, p.tn, p.fn_), (2, 1, 2, 1));
        assert_eq!(p.accuracy, 4.0 / 6.0);
        assert_eq!(p.sensitivity, 2.0 / 3.0);
        assert_eq!(p.specificity, 2.0 / 3.0);
    }

    #[test]
    fn youden_tie_prefers_specificity() {
        // Vertices: (fpr 0, tpr .5) and (fpr .5, tpr 1) both give J = 0.5.
        let s = [0.9, 0.8, 0.7, 0.6];
        let l = [1, 0, 1, 0];
        let r = roc_auc(&s, &l).unwrap();
        let p = operating_point(&r, &s, &l, OperatingRule::Youden);
        assert_eq!((p.threshold, p.specificity), (0.9, 1.0));
    }
}
