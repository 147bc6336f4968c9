use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn from_predictions(labels: &[usize], preds: &[usize]) -> Self {
        let mut c = Confusion::default();
        for (&l, &p) in labels.iter().zip(preds) {
            match (l, p) {
                (1, 1) => c.tp += 1,
                (0, 1) => c.fp += 1,
                (0, 0) => c.tn += 1,
                _ => c.fn_ += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn add(&mut self, other: &Confusion) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.tn += other.tn;
        self.fn_ += other.fn_;
    }
}

fn pct(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| 100.0 * num as f64 / den as f64)
}

/// Harmonic mean of precision and recall, both in percent.
pub fn f1_from(precision: Option<f64>, recall: Option<f64>) -> Option<f64> {
    match (precision, recall) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        (Some(_), Some(_)) => Some(0.0),
        _ => None,
    }
}

/// All values in percent; `None` where a metric is undefined (for example
/// precision with no positive predictions).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub auc: Option<f64>,
    pub confusion: Confusion,
}

impl Metrics {
    pub fn from_confusion(c: Confusion, auc: Option<f64>) -> Self {
        let precision = pct(c.tp, c.tp + c.fp);
        let recall = pct(c.tp, c.tp + c.fn_);
        Self {
            accuracy: pct(c.tp + c.tn, c.total()),
            precision,
            recall,
            f1: f1_from(precision, recall),
            auc,
            confusion: c,
        }
    }

    /// Metrics for argmax predictions given positive-class scores.
    pub fn from_scores(labels: &[usize], scores: &[f64], preds: &[usize]) -> Self {
        Self::from_confusion(Confusion::from_predictions(labels, preds), auc(labels, scores))
    }
}

/// Mean of each metric over the folds where it is defined.
pub fn mean_metrics(folds: &[Metrics]) -> Metrics {
    fn mean(vals: impl Iterator<Item = Option<f64>>) -> Option<f64> {
        let v: Vec<f64> = vals.flatten().collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
    let mut confusion = Confusion::default();
    folds.iter().for_each(|m| confusion.add(&m.confusion));
    Metrics {
        accuracy: mean(folds.iter().map(|m| m.accuracy)),
        precision: mean(folds.iter().map(|m| m.precision)),
        recall: mean(folds.iter().map(|m| m.recall)),
        f1: mean(folds.iter().map(|m| m.f1)),
        auc: mean(folds.iter().map(|m| m.auc)),
        confusion,
    }
}

/// Area under the ROC curve in percent via the Mann-Whitney U statistic
/// with average ranks for ties. `None` unless both classes are present.
pub fn auc(labels: &[usize], scores: &[f64]) -> Option<f64> {
    let n = scores.len();
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = n - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // twice the rank, to keep tie averages integral
    let mut rank2 = vec![0u64; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 averaged, doubled
        let r2 = (i + 1 + j + 1) as u64;
        for &o in &order[i..=j] {
            rank2[o] = r2;
        }
        i = j + 1;
    }
    let pos_rank2: u64 = (0..n).filter(|&k| labels[k] == 1).map(|k| rank2[k]).sum();
    // 2U = 2·R_pos − n_pos(n_pos+1)
    let u2 = pos_rank2 - (n_pos * (n_pos + 1)) as u64;
    Some(100.0 * u2 as f64 / (2 * n_pos * n_neg) as f64)
}
