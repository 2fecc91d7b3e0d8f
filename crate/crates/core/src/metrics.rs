//! Multi-label ranking metrics.
//!
//! All per-class metrics rank clips by score. Tied scores form one threshold,
//! so a tie never earns partial credit for its position in the input.
//! Classes without positives are skipped from the macro means, and ROC also
//! needs at least one negative.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `N × c` clip-level scores in `[0, 1]`, row major.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMatrix {
    rows: usize,
    classes: usize,
    data: Vec<f64>,
}

impl ScoreMatrix {
    pub fn new(rows: usize, classes: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * classes {
            return Err(Error::Dimension(format!(
                "score matrix {rows}x{classes} needs {} values, got {}",
                rows * classes,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(Error::Domain(format!("score {v} outside [0, 1]")));
        }
        Ok(ScoreMatrix { rows, classes, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let classes = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != classes) {
            return Err(Error::Dimension("ragged score rows".into()));
        }
        Self::new(rows.len(), classes, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.classes..(i + 1) * self.classes]
    }

    pub fn column(&self, k: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.data[i * self.classes + k]).collect()
    }
}

/// `N × c` binary ground truth.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMatrix {
    rows: usize,
    classes: usize,
    data: Vec<u8>,
}

impl LabelMatrix {
    pub fn new(rows: usize, classes: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != rows * classes {
            return Err(Error::Dimension(format!(
                "label matrix {rows}x{classes} needs {} values, got {}",
                rows * classes,
                data.len()
            )));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(Error::Domain("labels must be 0 or 1".into()));
        }
        Ok(LabelMatrix { rows, classes, data })
    }

    pub fn from_rows(rows: &[Vec<u8>]) -> Result<Self> {
        let classes = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != classes) {
            return Err(Error::Dimension("ragged label rows".into()));
        }
        Self::new(rows.len(), classes, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn row(&self, i: usize) -> &[u8] {
        &self.data[i * self.classes..(i + 1) * self.classes]
    }

    pub fn column(&self, k: usize) -> Vec<bool> {
        (0..self.rows).map(|i| self.data[i * self.classes + k] == 1).collect()
    }
}

fn check_pair(scores: &[f64], labels: &[bool]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Domain("NaN score".into()));
    }
    Ok(())
}

/// Non-interpolated average precision, `Σ (R_n − R_{n−1}) P_n` over distinct
/// thresholds in descending order. `None` when there are no positives.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<Option<f64>> {
    check_pair(scores, labels)?;
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return Ok(None);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut seen, mut prev_recall, mut ap) = (0usize, 0usize, 0.0, 0.0);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            tp += labels[order[i]] as usize;
            seen += 1;
            i += 1;
        }
        let recall = tp as f64 / positives as f64;
        ap += (recall - prev_recall) * (tp as f64 / seen as f64);
        prev_recall = recall;
    }
    Ok(Some(ap))
}

/// Area under the precision-recall curve, by the same step sum as
/// [`average_precision`].
pub fn auc_pr(scores: &[f64], labels: &[bool]) -> Result<Option<f64>> {
    average_precision(scores, labels)
}

/// Mann-Whitney U statistic with midranks for ties, normalised to `[0, 1]`.
/// `None` unless both classes are present.
pub fn auc_roc(scores: &[f64], labels: &[bool]) -> Result<Option<f64>> {
    check_pair(scores, labels)?;
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Ok(None);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j share their mean
        let mid = (i + 1 + j) as f64 / 2.0;
        rank_sum += mid * order[i..j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j;
    }
    let p = pos as f64;
    let u = rank_sum - p * (p + 1.0) / 2.0;
    Ok(Some(u / (p * neg as f64)))
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2)
}

fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Standard normal quantile: Acklam's rational approximation followed by one
/// Newton step on the erfc-based CDF.
pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("quantile needs 0 < p < 1, got {p}")));
    }
    const A: [f64; 6] = [
        -3.969683028665376e1,
        2.209460984245205e2,
        -2.759285104469687e2,
        1.38357751867269e2,
        -3.066479806614716e1,
        2.506628277459239,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e1,
        1.615858368580409e2,
        -1.556989798598866e2,
        6.680131188771972e1,
        -1.328068155288572e1,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-3,
        -3.223964580411365e-1,
        -2.400758277161838,
        -2.549732539343734,
        4.374664141464968,
        2.938163982698783,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-3,
        3.224671290700398e-1,
        2.445134137142996,
        3.754408661907416,
    ];
    const LOW: f64 = 0.02425;
    let tail = |q: f64| {
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    let x = if p < LOW {
        tail((-2.0 * p.ln()).sqrt())
    } else if p > 1.0 - LOW {
        -tail((-2.0 * (1.0 - p).ln()).sqrt())
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    };
    Ok(x - (normal_cdf(x) - p) / normal_pdf(x))
}

/// `√2 · Φ⁻¹(auc)`.
pub fn d_prime(auc: f64) -> Result<f64> {
    if !(auc > 0.0 && auc < 1.0) {
        return Err(Error::Domain(format!("d-prime needs 0 < auc < 1, got {auc}")));
    }
    Ok(std::f64::consts::SQRT_2 * normal_quantile(auc)?)
}

/// AUC implied by a d-prime value, `Φ(d / √2)`.
pub fn auc_from_d_prime(d: f64) -> f64 {
    normal_cdf(d / std::f64::consts::SQRT_2)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub classes: usize,
    /// `None` where the class has no positives.
    pub per_class_ap: Vec<Option<f64>>,
    /// `None` where the class lacks positives or negatives.
    pub per_class_auc_roc: Vec<Option<f64>>,
    pub map: Option<f64>,
    pub mean_auc_roc: Option<f64>,
    pub mean_auc_pr: Option<f64>,
    /// `None` when the mean ROC AUC is undefined, 0 or 1.
    pub d_prime: Option<f64>,
    pub skipped_classes: usize,
    pub no_defined_classes: bool,
}

fn mean_defined(v: &[Option<f64>]) -> Option<f64> {
    let defined: Vec<f64> = v.iter().flatten().copied().collect();
    (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
}

pub fn evaluate(scores: &ScoreMatrix, labels: &LabelMatrix) -> Result<MetricsReport> {
    if scores.rows != labels.rows || scores.classes != labels.classes {
        return Err(Error::Dimension(format!(
            "scores are {}x{}, labels are {}x{}",
            scores.rows, scores.classes, labels.rows, labels.classes
        )));
    }
    let mut per_class_ap = Vec::with_capacity(scores.classes);
    let mut per_class_auc_roc = Vec::with_capacity(scores.classes);
    for k in 0..scores.classes {
        let s = scores.column(k);
        let l = labels.column(k);
        per_class_ap.push(average_precision(&s, &l)?);
        per_class_auc_roc.push(auc_roc(&s, &l)?);
    }
    let map = mean_defined(&per_class_ap);
    let mean_auc_roc = mean_defined(&per_class_auc_roc);
    let d = mean_auc_roc.and_then(|a| d_prime(a).ok());
    let skipped = per_class_ap.iter().filter(|a| a.is_none()).count();
    Ok(MetricsReport {
        classes: scores.classes,
        per_class_ap,
        per_class_auc_roc,
        map,
        mean_auc_roc,
        mean_auc_pr: map,
        d_prime: d,
        skipped_classes: skipped,
        no_defined_classes: map.is_none(),
    })
}

impl MetricsReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// `class_index,class_name,ap`; undefined APs are written as empty fields.
    pub fn write_class_csv(&self, path: &Path, names: &[String]) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["class_index", "class_name", "ap"])?;
        for (k, ap) in self.per_class_ap.iter().enumerate() {
            let name = names.get(k).map_or("", String::as_str);
            let ap = ap.map(|v| v.to_string()).unwrap_or_default();
            w.write_record([k.to_string().as_str(), name, ap.as_str()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Counts of classes where `reference` beats `base`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassComparison {
    /// Classes with any AP gain.
    pub improved: usize,
    /// `(threshold, count)`: classes whose relative gain exceeds the threshold.
    pub by_threshold: Vec<(f64, usize)>,
    pub compared: usize,
}

impl ClassComparison {
    /// `improved` followed by the threshold counts.
    pub fn counts(&self) -> Vec<usize> {
        std::iter::once(self.improved)
            .chain(self.by_threshold.iter().map(|t| t.1))
            .collect()
    }
}

pub const DEFAULT_THRESHOLDS: [f64; 3] = [0.05, 0.10, 0.20];

/// Relative AP gain per class, `(ref − base) / base`. Classes undefined in
/// either report are left out.
pub fn classwise_compare(
    base: &MetricsReport,
    reference: &MetricsReport,
    thresholds: &[f64],
) -> Result<ClassComparison> {
    if base.per_class_ap.len() != reference.per_class_ap.len() {
        return Err(Error::Contract(format!(
            "class sets differ: {} vs {} classes",
            base.per_class_ap.len(),
            reference.per_class_ap.len()
        )));
    }
    let pairs: Vec<(f64, f64)> = base
        .per_class_ap
        .iter()
        .zip(&reference.per_class_ap)
        .filter_map(|(b, r)| Some(((*b)?, (*r)?)))
        .collect();
    let improved = pairs.iter().filter(|(b, r)| r > b).count();
    let by_threshold = thresholds
        .iter()
        .map(|&t| (t, pairs.iter().filter(|(b, r)| (r - b) / b > t).count()))
        .collect();
    Ok(ClassComparison {
        improved,
        by_threshold,
        compared: pairs.len(),
    })
}

/// Writes a report as pretty JSON.
pub fn write_report(report: &MetricsReport, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(report.to_json()?.as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(v: &[u8]) -> Vec<bool> {
        v.iter().map(|&x| x == 1).collect()
    }

    #[test]
    fn ap_worked_example() {
        let ap = average_precision(&[0.9, 0.8, 0.3], &b(&[1, 0, 1])).unwrap().unwrap();
        assert!((ap - (0.5 + (2.0 / 3.0) * 0.5)).abs() < 1e-15);
    }

    #[test]
    fn ap_edge_cases() {
        assert_eq!(average_precision(&[0.9, 0.8, 0.1], &b(&[1, 1, 0])).unwrap(), Some(1.0));
        assert_eq!(average_precision(&[0.2], &b(&[1])).unwrap(), Some(1.0));
        assert_eq!(average_precision(&[0.2, 0.4], &b(&[0, 0])).unwrap(), None);
        // one tie group holding everything: precision = prior
        assert_eq!(average_precision(&[0.5; 4], &b(&[1, 0, 0, 0])).unwrap(), Some(0.25));
    }

    #[test]
    fn roc_edge_cases() {
        assert_eq!(auc_roc(&[0.9, 0.8, 0.1], &b(&[1, 1, 0])).unwrap(), Some(1.0));
        assert_eq!(auc_roc(&[0.5; 4], &b(&[1, 0, 1, 0])).unwrap(), Some(0.5));
        assert_eq!(auc_roc(&[0.1, 0.2], &b(&[1, 1])).unwrap(), None);
        // pairs: (0.8>0.1) (0.8>0.6) (0.4>0.1) (0.4<0.6) → 3/4
        let r = auc_roc(&[0.8, 0.1, 0.4, 0.6], &b(&[1, 0, 1, 0])).unwrap().unwrap();
        assert_eq!(r, 0.75);
    }

    #[test]
    fn d_prime_values() {
        assert_eq!(d_prime(0.5).unwrap(), 0.0);
        assert!((d_prime(0.944).unwrap() - 2.251).abs() < 0.01);
        assert!((auc_from_d_prime(2.167) - 0.9373).abs() < 0.001);
        assert!(d_prime(0.0).is_err() && d_prime(1.0).is_err() && d_prime(f64::NAN).is_err());
    }

    #[test]
    fn quantile_tails_round_trip() {
        for &p in &[1e-10, 1e-4, 0.01, 0.3, 0.7, 0.99, 1.0 - 1e-6] {
            let x = normal_quantile(p).unwrap();
            assert!((normal_cdf(x) - p).abs() < 1e-12 * p.max(1e-3), "{p}");
        }
    }

    #[test]
    fn evaluate_perfect_and_skips() {
        let s = ScoreMatrix::from_rows(&[vec![1.0, 0.0, 0.2], vec![0.0, 1.0, 0.3]]).unwrap();
        let l = LabelMatrix::from_rows(&[vec![1, 0, 0], vec![0, 1, 0]]).unwrap();
        let r = evaluate(&s, &l).unwrap();
        assert_eq!(r.map, Some(1.0));
        assert_eq!(r.skipped_classes, 1);
        assert_eq!(r.per_class_ap[2], None);
        assert_eq!(r.d_prime, None);
        assert!(!r.no_defined_classes);
    }

    #[test]
    fn evaluate_all_degenerate() {
        let s = ScoreMatrix::from_rows(&[vec![0.4, 0.1]]).unwrap();
        let l = LabelMatrix::from_rows(&[vec![0, 0]]).unwrap();
        let r = evaluate(&s, &l).unwrap();
        assert!(r.no_defined_classes);
        assert_eq!(r.map, None);
    }

    #[test]
    fn bad_matrices_rejected() {
        assert!(ScoreMatrix::new(1, 2, vec![0.5]).is_err());
        assert!(ScoreMatrix::new(1, 1, vec![1.5]).is_err());
        assert!(LabelMatrix::new(1, 1, vec![2]).is_err());
    }

    fn report(aps: &[f64]) -> MetricsReport {
        MetricsReport {
            classes: aps.len(),
            per_class_ap: aps.iter().map(|&a| Some(a)).collect(),
            per_class_auc_roc: vec![None; aps.len()],
            map: None,
            mean_auc_roc: None,
            mean_auc_pr: None,
            d_prime: None,
            skipped_classes: 0,
            no_defined_classes: false,
        }
    }

    #[test]
    fn compare_counts() {
        let base = report(&[0.5, 0.4, 0.3]);
        let same = classwise_compare(&base, &base, &DEFAULT_THRESHOLDS).unwrap();
        assert_eq!(same.counts(), vec![0, 0, 0, 0]);
        let up = report(&[0.65, 0.4, 0.3]);
        let c = classwise_compare(&base, &up, &DEFAULT_THRESHOLDS).unwrap();
        assert_eq!(c.counts(), vec![1, 1, 1, 1]);
        assert!(classwise_compare(&base, &report(&[0.1]), &DEFAULT_THRESHOLDS).is_err());
    }

    #[test]
    fn compare_threshold_fixture() {
        // gains: +4%, +7%, +15%, +25%, -10%
        let base = report(&[1.0, 1.0, 1.0, 1.0, 1.0].map(|v: f64| v * 0.5));
        let refr = report(&[0.52, 0.535, 0.575, 0.625, 0.45]);
        let c = classwise_compare(&base, &refr, &DEFAULT_THRESHOLDS).unwrap();
        assert_eq!(c.counts(), vec![4, 3, 2, 1]);
    }
}
