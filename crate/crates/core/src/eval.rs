//! Classification metrics, rank statistics and the cross-patient harness.

use serde::{Deserialize, Serialize};

use crate::detector::{fit, CalibratedDetector, DetectorConfig};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::signal::{Label, LabeledDataset, Segment, Split};
use crate::vae::{TrainConfig, VaeArchitecture};

/// Counts with `Artifact` as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Confusion {
    pub fn record(&mut self, truth: Label, predicted_artifact: bool) {
        match (truth == Label::Artifact, predicted_artifact) {
            (true, true) => self.tp += 1,
            (true, false) => self.fn_ += 1,
            (false, true) => self.fp += 1,
            (false, false) => self.tn += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (Label, bool)>) -> Self {
        let mut c = Self::default();
        for (truth, pred) in pairs {
            c.record(truth, pred);
        }
        c
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    /// Absent without positive examples.
    pub sensitivity: Option<f64>,
    /// Absent without negative examples.
    pub specificity: Option<f64>,
    /// 1 when there are neither positive labels nor positive predictions.
    pub f1: f64,
}

pub fn metrics(c: &Confusion) -> Result<Metrics> {
    let total = c.total();
    if total == 0 {
        return Err(Error::invalid("metrics of an empty confusion matrix"));
    }
    let ratio = |a: u64, b: u64| (b > 0).then(|| a as f64 / b as f64);
    let f1_den = 2 * c.tp + c.fp + c.fn_;
    Ok(Metrics {
        accuracy: (c.tp + c.tn) as f64 / total as f64,
        sensitivity: ratio(c.tp, c.tp + c.fn_),
        specificity: ratio(c.tn, c.tn + c.fp),
        f1: ratio(2 * c.tp, f1_den).unwrap_or(1.0),
    })
}

fn check_scores(scores: &[f64]) -> Result<()> {
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::invalid("scores contain NaN"));
    }
    Ok(())
}

/// Area under the ROC curve via midranks; `+inf` ranks above every finite score.
pub fn roc_auc(scores: &[f64], labels: &[Label]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::shape(format!("{} scores but {} labels", scores.len(), labels.len())));
    }
    check_scores(scores)?;
    let n_pos = labels.iter().filter(|&&l| l == Label::Artifact).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::invalid("ROC AUC needs both classes"));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += idx[i..=j].iter().filter(|&&k| labels[k] == Label::Artifact).count() as f64 * midrank;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Result of a two-sample Kolmogorov-Smirnov test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub d: f64,
    pub p: f64,
}

/// `Q(l) = 2 sum_{k>=1} (-1)^(k-1) exp(-2 k^2 l^2)`, clamped to [0, 1].
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=1000 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += sign * term;
        if term < 1e-12 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("KS test needs two non-empty samples"));
    }
    check_scores(a)?;
    check_scores(b)?;
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len(), b.len());
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < na && j < nb {
        let x = a[i].min(b[j]);
        while i < na && a[i] <= x {
            i += 1;
        }
        while j < nb && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na as f64 - j as f64 / nb as f64).abs());
    }
    let ne = (na * nb) as f64 / (na + nb) as f64;
    let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    Ok(KsResult {
        d,
        p: kolmogorov_q(lambda),
    })
}

pub fn bonferroni(p_values: &[f64]) -> Vec<f64> {
    let m = p_values.len() as f64;
    p_values.iter().map(|p| (p * m).min(1.0)).collect()
}

/// The `ceil(p/100 * n)`-th smallest value.
pub fn nearest_rank_percentile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::invalid("percentile of an empty set"));
    }
    if !(p > 0.0 && p <= 100.0) {
        return Err(Error::invalid(format!("percentile must lie in (0, 100], got {p}")));
    }
    check_scores(values)?;
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((p * v.len() as f64) / 100.0).ceil() as usize;
    Ok(v[rank.clamp(1, v.len()) - 1])
}

/// Scores, predictions and metrics of one detector on labeled segments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub confusion: Confusion,
    pub metrics: Metrics,
    pub auc: Option<f64>,
    pub scores: Vec<f64>,
    pub labels: Vec<Label>,
}

pub fn evaluate<T: Scalar>(detector: &CalibratedDetector<T>, segments: &[Segment]) -> Result<Evaluation> {
    let mut confusion = Confusion::default();
    let mut scores = Vec::with_capacity(segments.len());
    let mut labels = Vec::with_capacity(segments.len());
    for seg in segments {
        let label = seg.label.ok_or_else(|| {
            Error::invalid(format!(
                "segment of patient {} at {} has no label",
                seg.patient_id, seg.start_index
            ))
        })?;
        let verdict = detector.classify(seg)?;
        confusion.record(label, verdict.is_artifact);
        scores.push(verdict.score);
        labels.push(label);
    }
    let auc = roc_auc(&scores, &labels).ok();
    Ok(Evaluation {
        metrics: metrics(&confusion)?,
        confusion,
        auc,
        scores,
        labels,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub accuracy: f64,
    pub f1: f64,
}

/// Row `i` holds the model trained on patient `i`; the last column is the
/// pooled model. Column `j < n` is patient `j`'s test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenMatrix {
    pub patients: Vec<String>,
    pub cells: Vec<Vec<Cell>>,
}

impl GenMatrix {
    pub fn mean_off_diagonal_accuracy(&self) -> f64 {
        let n = self.patients.len();
        let mut sum = 0.0;
        for i in 0..n {
            for j in (0..n).filter(|&j| j != i) {
                sum += self.cells[i][j].accuracy;
            }
        }
        sum / (n * (n - 1)) as f64
    }

    pub fn mean_diagonal_accuracy(&self) -> f64 {
        let n = self.patients.len();
        (0..n).map(|i| self.cells[i][i].accuracy).sum::<f64>() / n as f64
    }

    /// Mean pooled accuracy over all patients.
    pub fn pooled_mean_accuracy(&self) -> f64 {
        let n = self.patients.len();
        (0..n).map(|i| self.cells[i][n].accuracy).sum::<f64>() / n as f64
    }

    /// Accuracy and F1 tables with row and column headers.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("model");
        for p in &self.patients {
            out.push_str(&format!(",{p}_accuracy,{p}_f1"));
        }
        out.push('\n');
        let n = self.patients.len();
        for (i, row) in self.cells.iter().enumerate() {
            out.push_str(&self.patients[i]);
            for cell in row.iter().take(n) {
                out.push_str(&format!(",{},{}", cell.accuracy, cell.f1));
            }
            out.push('\n');
        }
        out.push_str("pooled");
        for i in 0..n {
            let c = self.cells[i][n];
            out.push_str(&format!(",{},{}", c.accuracy, c.f1));
        }
        out.push('\n');
        out
    }
}

/// Trains one detector per patient (seed `train_cfg.seed + i`) and scores
/// every detector, plus `pooled`, on every patient's test split.
pub fn generalisation_matrix(
    dataset: &LabeledDataset,
    pooled: &CalibratedDetector<f32>,
    arch: &VaeArchitecture,
    config: &DetectorConfig,
    train_cfg: &TrainConfig,
) -> Result<GenMatrix> {
    let patients = dataset.patients();
    if patients.len() < 2 {
        return Err(Error::invalid(format!("generalisation matrix needs at least 2 patients, got {}", patients.len())));
    }
    let tests: Vec<Vec<Segment>> = patients
        .iter()
        .map(|p| dataset.for_patient(p).segments(Split::Test))
        .collect();
    let cell_for = |d: &CalibratedDetector<f32>, test: &[Segment]| -> Result<Cell> {
        let m = evaluate(d, test)?.metrics;
        Ok(Cell {
            accuracy: m.accuracy,
            f1: m.f1,
        })
    };
    let pooled_cells = tests.iter().map(|t| cell_for(pooled, t)).collect::<Result<Vec<_>>>()?;
    let mut cells = Vec::with_capacity(patients.len());
    for (i, p) in patients.iter().enumerate() {
        let own = dataset.for_patient(p);
        let cfg = TrainConfig {
            seed: train_cfg.seed.wrapping_add(i as u64),
            ..*train_cfg
        };
        let (detector, _) = fit(&own.segments(Split::Train), &own.segments(Split::Validation), arch, config, &cfg)
            .map_err(|e| Error::invalid(format!("training on patient {p} failed: {e}")))?;
        let mut row = tests.iter().map(|t| cell_for(&detector, t)).collect::<Result<Vec<_>>>()?;
        row.push(pooled_cells[i]);
        cells.push(row);
    }
    Ok(GenMatrix { patients, cells })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::cmp::Ordering;

    const A: Label = Label::Artifact;
    const C: Label = Label::Clean;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn metric_examples() {
        let m = metrics(&Confusion { tp: 45, fn_: 5, tn: 48, fp: 2 }).unwrap();
        assert!(close(m.accuracy, 0.93));
        assert!(close(m.sensitivity.unwrap(), 0.90));
        assert!(close(m.specificity.unwrap(), 0.96));
        assert!(close(m.f1, 90.0 / 97.0));
        assert!((m.f1 - 0.92784).abs() < 1e-5);

        let perfect = metrics(&Confusion { tp: 5, fn_: 0, tn: 5, fp: 0 }).unwrap();
        assert_eq!(
            (perfect.accuracy, perfect.sensitivity, perfect.specificity, perfect.f1),
            (1.0, Some(1.0), Some(1.0), 1.0)
        );
        let neg = metrics(&Confusion { tp: 0, fn_: 5, tn: 5, fp: 0 }).unwrap();
        assert_eq!((neg.accuracy, neg.sensitivity, neg.specificity), (0.5, Some(0.0), Some(1.0)));

        let only_neg = metrics(&Confusion { tp: 0, fn_: 0, tn: 3, fp: 1 }).unwrap();
        assert_eq!(only_neg.sensitivity, None);
        assert!(metrics(&Confusion::default()).is_err());
    }

    #[test]
    fn auc_examples() {
        assert_eq!(roc_auc(&[0.9, 0.8, 0.2, 0.1], &[A, A, C, C]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.8, 0.3, 0.5, 0.1], &[A, A, C, C]).unwrap(), 0.75);
        assert_eq!(roc_auc(&[0.4; 6], &[A, C, A, C, C, A]).unwrap(), 0.5);
        assert_eq!(roc_auc(&[f64::INFINITY, 0.1, 5.0], &[A, C, C]).unwrap(), 1.0);
        assert!(roc_auc(&[0.1, 0.2], &[A, A]).is_err());
    }

    #[test]
    fn ks_examples() {
        let r = ks_two_sample(&[1.0, 2.0, 3.0], &[3.0, 1.0, 2.0]).unwrap();
        assert_eq!(r.d, 0.0);
        assert_eq!(r.p, 1.0);
        assert_eq!(ks_two_sample(&[1.0, 2.0], &[3.0, 4.0]).unwrap().d, 1.0);
        assert!(close(ks_two_sample(&[1.0, 2.0, 3.0], &[2.0, 3.0, 4.0]).unwrap().d, 1.0 / 3.0));
        assert!(ks_two_sample(&[], &[1.0]).is_err());
    }

    #[test]
    fn kolmogorov_q_values() {
        // Reference values of the Kolmogorov survival function.
        assert!((kolmogorov_q(1.36) - 0.0494).abs() < 1e-3);
        assert!((kolmogorov_q(1.0) - 0.26999967).abs() < 1e-6);
        assert!(kolmogorov_q(5.0) < 1e-20);
    }

    #[test]
    fn bonferroni_examples() {
        assert_eq!(bonferroni(&[0.01]), vec![0.01]);
        assert_eq!(bonferroni(&[0.01, 0.02]), vec![0.02, 0.04]);
        assert_eq!(bonferroni(&[0.9, 0.9]), vec![1.0, 1.0]);
    }

    #[test]
    fn percentile_examples() {
        let v: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(nearest_rank_percentile(&v, 90.0).unwrap(), 9.0);
        assert_eq!(nearest_rank_percentile(&v, 100.0).unwrap(), 10.0);
        assert_eq!(nearest_rank_percentile(&[2.5; 7], 90.0).unwrap(), 2.5);
        assert!(nearest_rank_percentile(&[], 90.0).is_err());
        assert!(nearest_rank_percentile(&v, 0.0).is_err());
    }

    fn brute_auc(scores: &[f64], labels: &[Label]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for (i, &li) in labels.iter().enumerate() {
            for (j, &lj) in labels.iter().enumerate() {
                if li == A && lj == C {
                    den += 1.0;
                    num += match scores[i].partial_cmp(&scores[j]).unwrap() {
                        Ordering::Greater => 1.0,
                        Ordering::Equal => 0.5,
                        Ordering::Less => 0.0,
                    };
                }
            }
        }
        num / den
    }

    fn brute_ks(a: &[f64], b: &[f64]) -> f64 {
        let ecdf = |s: &[f64], x: f64| s.iter().filter(|&&v| v <= x).count() as f64 / s.len() as f64;
        a.iter().chain(b).map(|&x| (ecdf(a, x) - ecdf(b, x)).abs()).fold(0.0, f64::max)
    }

    proptest! {
        #[test]
        fn auc_matches_pair_count(
            raw in prop::collection::vec((0u8..6, any::<bool>()), 2..=12)
        ) {
            let scores: Vec<f64> = raw.iter().map(|&(s, _)| if s == 5 { f64::INFINITY } else { s as f64 }).collect();
            let labels: Vec<Label> = raw.iter().map(|&(_, l)| if l { A } else { C }).collect();
            prop_assume!(labels.contains(&A) && labels.contains(&C));
            prop_assert_eq!(roc_auc(&scores, &labels).unwrap(), brute_auc(&scores, &labels));
        }

        #[test]
        fn ks_matches_ecdf_scan(
            a in prop::collection::vec(0i32..20, 1..30),
            b in prop::collection::vec(0i32..20, 1..30),
        ) {
            let a: Vec<f64> = a.into_iter().map(f64::from).collect();
            let b: Vec<f64> = b.into_iter().map(f64::from).collect();
            let r = ks_two_sample(&a, &b).unwrap();
            prop_assert_eq!(r.d, brute_ks(&a, &b));
            prop_assert!((0.0..=1.0).contains(&r.p));
        }

        #[test]
        fn metrics_ignore_order(mut pairs in prop::collection::vec((any::<bool>(), any::<bool>()), 1..50)) {
            let to = |p: &[(bool, bool)]| Confusion::from_pairs(p.iter().map(|&(t, y)| (if t { A } else { C }, y)));
            let before = metrics(&to(&pairs)).unwrap();
            pairs.reverse();
            prop_assert_eq!(before, metrics(&to(&pairs)).unwrap());
        }

        #[test]
        fn bonferroni_monotone_and_clamped(mut p in prop::collection::vec(0.0f64..1.0, 1..20)) {
            p.sort_by(f64::total_cmp);
            let adj = bonferroni(&p);
            for w in adj.windows(2) {
                prop_assert!(w[0] <= w[1]);
            }
            for (a, q) in adj.iter().zip(&p) {
                prop_assert!(*a <= 1.0 && *a >= *q);
            }
        }
    }
}
