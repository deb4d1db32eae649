//! Confusion-matrix metrics, tie-aware ROC-AUC and the best-score tally.

use std::fmt;

use crate::error::{Error, Result};

/// Predictions at or above this probability count as "up".
pub const THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }
}

pub fn confusion(p: &[f64], labels: &[f64], threshold: f64) -> Result<ConfusionMatrix> {
    if p.len() != labels.len() {
        return Err(Error::Shape(format!("{} probabilities for {} labels", p.len(), labels.len())));
    }
    let mut cm = ConfusionMatrix::default();
    for (&p, &y) in p.iter().zip(labels) {
        match (p >= threshold, y > 0.5) {
            (true, true) => cm.tp += 1,
            (true, false) => cm.fp += 1,
            (false, true) => cm.fn_ += 1,
            (false, false) => cm.tn += 1,
        }
    }
    Ok(cm)
}

/// Metric values; `None` marks a zero denominator.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MetricsReport {
    pub acc: Option<f64>,
    pub auc: Option<f64>,
    pub tpr: Option<f64>,
    pub tnr: Option<f64>,
    pub ppv: Option<f64>,
    pub for_rate: Option<f64>,
    pub ba: Option<f64>,
    pub f1: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Threshold metrics of `cm`; `auc` is left unset.
pub fn report(cm: &ConfusionMatrix) -> MetricsReport {
    let tpr = ratio(cm.tp, cm.tp + cm.fn_);
    let tnr = ratio(cm.tn, cm.tn + cm.fp);
    let ppv = ratio(cm.tp, cm.tp + cm.fp);
    MetricsReport {
        acc: ratio(cm.tp + cm.tn, cm.total()),
        auc: None,
        tpr,
        tnr,
        ppv,
        for_rate: ratio(cm.fn_, cm.fn_ + cm.tn),
        ba: tpr.zip(tnr).map(|(a, b)| (a + b) / 2.0),
        f1: ratio(2 * cm.tp, 2 * cm.tp + cm.fp + cm.fn_),
    }
}

/// Area under the ROC curve as the Mann–Whitney statistic: the fraction of
/// (positive, negative) pairs ranked correctly, ties counting one half.
pub fn roc_auc(scores: &[f64], labels: &[f64]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Numeric("NaN score".into()));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let positives = labels.iter().filter(|y| **y > 0.5).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::Data("ROC-AUC needs both classes".into()));
    }
    // Sum of midranks of the positives.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid * idx[i..=j].iter().filter(|&&k| labels[k] > 0.5).count() as f64;
        i = j + 1;
    }
    let (np, nn) = (positives as f64, negatives as f64);
    Ok((rank_sum - np * (np + 1.0) / 2.0) / (np * nn))
}

/// Threshold metrics plus AUC for one set of predictions.
pub fn evaluate(p: &[f64], labels: &[f64]) -> Result<MetricsReport> {
    let mut r = report(&confusion(p, labels, THRESHOLD)?);
    r.auc = Some(roc_auc(p, labels)?);
    Ok(r)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Acc,
    Auc,
    Tpr,
    Tnr,
    Ppv,
    For,
    Ba,
    F1,
}

impl Metric {
    /// Column order of the result tables.
    pub const ALL: [Metric; 8] = [
        Metric::Acc,
        Metric::Auc,
        Metric::Tpr,
        Metric::Tnr,
        Metric::Ppv,
        Metric::For,
        Metric::Ba,
        Metric::F1,
    ];

    pub fn get(self, r: &MetricsReport) -> Option<f64> {
        match self {
            Metric::Acc => r.acc,
            Metric::Auc => r.auc,
            Metric::Tpr => r.tpr,
            Metric::Tnr => r.tnr,
            Metric::Ppv => r.ppv,
            Metric::For => r.for_rate,
            Metric::Ba => r.ba,
            Metric::F1 => r.f1,
        }
    }

    /// False omission rate is an error rate; every other metric is a score.
    pub fn lower_is_better(self) -> bool {
        self == Metric::For
    }

    /// AUC as a 4-decimal fraction, the rest as 2-decimal percentages.
    pub fn format(self, v: Option<f64>) -> String {
        match v {
            None => "undefined".into(),
            Some(v) if self == Metric::Auc => format!("{v:.4}"),
            Some(v) => format!("{:.2}", 100.0 * v),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Metric::Acc => "Acc",
            Metric::Auc => "AUC",
            Metric::Tpr => "TPR",
            Metric::Tnr => "TNR",
            Metric::Ppv => "PPV",
            Metric::For => "FOR",
            Metric::Ba => "BA",
            Metric::F1 => "F1",
        };
        f.write_str(s)
    }
}

/// Per-row count of metrics on which the row holds the column best. Ties
/// credit every tied row; undefined values neither win nor block.
pub fn best_score_tally(rows: &[MetricsReport]) -> Vec<usize> {
    let mut tally = vec![0; rows.len()];
    for m in Metric::ALL {
        let values: Vec<Option<f64>> = rows.iter().map(|r| m.get(r)).collect();
        let best = values.iter().flatten().copied().reduce(|a, b| {
            if m.lower_is_better() { a.min(b) } else { a.max(b) }
        });
        if let Some(best) = best {
            for (t, v) in tally.iter_mut().zip(&values) {
                if *v == Some(best) {
                    *t += 1;
                }
            }
        }
    }
    tally
}

/// Element-wise mean of reports; a metric undefined in any report stays
/// undefined.
pub fn mean_report(reports: &[MetricsReport]) -> MetricsReport {
    let mean = |m: Metric| -> Option<f64> {
        let vals: Option<Vec<f64>> = reports.iter().map(|r| m.get(r)).collect();
        vals.filter(|v| !v.is_empty()).map(|v| v.iter().sum::<f64>() / v.len() as f64)
    };
    MetricsReport {
        acc: mean(Metric::Acc),
        auc: mean(Metric::Auc),
        tpr: mean(Metric::Tpr),
        tnr: mean(Metric::Tnr),
        ppv: mean(Metric::Ppv),
        for_rate: mean(Metric::For),
        ba: mean(Metric::Ba),
        f1: mean(Metric::F1),
    }
}

/// Brute-force pairwise Mann–Whitney count, O(n²).
pub fn pairwise_auc(scores: &[f64], labels: &[f64]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &yi) in labels.iter().enumerate() {
        if yi <= 0.5 {
            continue;
        }
        for (j, &yj) in labels.iter().enumerate() {
            if yj > 0.5 {
                continue;
            }
            pairs += 1.0;
            if scores[i] > scores[j] {
                wins += 1.0;
            } else if scores[i] == scores[j] {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn hand_confusion_counts() {
        let cm = confusion(&[0.9, 0.4, 0.6, 0.1], &[1.0, 1.0, 0.0, 0.0], 0.5).unwrap();
        assert_eq!(cm, ConfusionMatrix { tp: 1, tn: 1, fp: 1, fn_: 1 });
        let p = [0.0, 0.3, 1.0];
        let y = [1.0, 0.0, 0.0];
        let all_pos = confusion(&p, &y, 0.0).unwrap();
        assert_eq!(all_pos.tp + all_pos.fp, 3);
        let all_neg = confusion(&p, &y, 1.0 + f64::EPSILON).unwrap();
        assert_eq!(all_neg.tn + all_neg.fn_, 3);
        assert_eq!(confusion(&[0.5], &[1.0], 0.5).unwrap().tp, 1);
        assert!(confusion(&[0.5], &[], 0.5).is_err());
    }

    #[test]
    fn hand_report() {
        let r = report(&ConfusionMatrix { tp: 3, tn: 2, fp: 1, fn_: 2 });
        let close = |a: Option<f64>, b: f64| (a.unwrap() - b).abs() < 1e-12;
        assert!(close(r.acc, 0.625));
        assert!(close(r.tpr, 0.6));
        assert!(close(r.tnr, 2.0 / 3.0));
        assert!(close(r.ppv, 0.75));
        assert!(close(r.for_rate, 0.5));
        assert!(close(r.ba, 19.0 / 30.0));
        assert!(close(r.f1, 2.0 / 3.0));
        assert_eq!(Metric::Tnr.format(r.tnr), "66.67");
        assert_eq!(Metric::Ba.format(r.ba), "63.33");
    }

    #[test]
    fn undefined_and_perfect() {
        let r = report(&ConfusionMatrix { tp: 0, tn: 5, fp: 0, fn_: 2 });
        assert_eq!(r.ppv, None);
        assert_eq!(r.for_rate, Some(2.0 / 7.0));
        assert_eq!(Metric::Ppv.format(r.ppv), "undefined");
        let r = report(&ConfusionMatrix { tp: 4, tn: 3, fp: 0, fn_: 0 });
        for m in Metric::ALL {
            match (m, m.get(&r)) {
                (_, None) => {}
                (Metric::For, Some(v)) => assert_eq!(v, 0.0),
                (_, Some(v)) => assert_eq!(v, 1.0),
            }
        }
    }

    #[test]
    fn auc_edge_cases() {
        assert_eq!(roc_auc(&[0.1, 0.2, 0.8, 0.9], &[0.0, 0.0, 1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.5, 0.5], &[0.0, 1.0]).unwrap(), 0.5);
        assert!(roc_auc(&[0.1, 0.2], &[1.0, 1.0]).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s: Vec<f64> = (0..10_000).map(|_| rng.random()).collect();
        let y: Vec<f64> = (0..10_000).map(|_| f64::from(rng.random_bool(0.5))).collect();
        assert!((roc_auc(&s, &y).unwrap() - 0.5).abs() < 0.02);
    }

    #[test]
    fn tally_credits_ties_and_skips_undefined() {
        let a = MetricsReport { acc: Some(0.6), auc: Some(0.7), for_rate: Some(0.4), ..Default::default() };
        let b = MetricsReport { acc: Some(0.6), auc: Some(0.6), for_rate: Some(0.3), ppv: Some(0.1), ..Default::default() };
        assert_eq!(best_score_tally(&[a, b]), vec![2, 3]);
        assert_eq!(mean_report(&[a, b]).acc, Some(0.6));
        assert_eq!(mean_report(&[a, b]).ppv, None);
    }

    fn scored() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (2usize..200).prop_flat_map(|n| {
            (
                prop::collection::vec((0u8..20).prop_map(|v| v as f64 / 19.0), n),
                prop::collection::vec(prop::bool::ANY.prop_map(f64::from), n),
            )
        })
        .prop_filter("both classes", |(_, y)| y.iter().any(|v| *v > 0.5) && y.iter().any(|v| *v < 0.5))
    }

    proptest! {
        #[test]
        fn auc_matches_pairwise_count((s, y) in scored()) {
            prop_assert_eq!(roc_auc(&s, &y).unwrap(), pairwise_auc(&s, &y));
        }

        #[test]
        fn auc_symmetries((s, y) in scored()) {
            let auc = roc_auc(&s, &y).unwrap();
            let monotone: Vec<f64> = s.iter().map(|v| (3.0 * v).exp() - 7.0).collect();
            prop_assert_eq!(roc_auc(&monotone, &y).unwrap(), auc);
            let flipped: Vec<f64> = y.iter().map(|v| 1.0 - v).collect();
            let mirrored: Vec<f64> = s.iter().map(|v| 1.0 - v).collect();
            prop_assert!((roc_auc(&mirrored, &flipped).unwrap() - auc).abs() < 1e-12);
            prop_assert!((roc_auc(&s, &flipped).unwrap() - (1.0 - auc)).abs() < 1e-12);
        }

        #[test]
        fn report_identities(tp in 0u64..50, tn in 0u64..50, fp in 0u64..50, fn_ in 0u64..50) {
            let r = report(&ConfusionMatrix { tp, tn, fp, fn_ });
            if let (Some(tpr), Some(tnr)) = (r.tpr, r.tnr) {
                prop_assert!((r.ba.unwrap() - (tpr + tnr) / 2.0).abs() < 1e-12);
                let acc = r.acc.unwrap();
                prop_assert!(acc >= tpr.min(tnr) - 1e-12 && acc <= tpr.max(tnr) + 1e-12);
            }
            if let (Some(p), Some(t), Some(f1)) = (r.ppv, r.tpr, r.f1) {
                if p + t > 0.0 {
                    prop_assert!((f1 - 2.0 * p * t / (p + t)).abs() < 1e-12);
                }
            }
        }
    }
}
