//! Detection metrics with anomaly as the positive class.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::data::BENIGN;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl Confusion {
    pub fn from_predictions(truth: &[bool], predicted: &[bool]) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::Data(format!(
                "{} predictions for {} labels",
                predicted.len(),
                truth.len()
            )));
        }
        let mut c = Confusion::default();
        for (&t, &p) in truth.iter().zip(predicted) {
            match (t, p) {
                (true, true) => c.tp += 1,
                (false, true) => c.fp += 1,
                (false, false) => c.tn += 1,
                (true, false) => c.fn_ += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.tp + self.tn, self.total())
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn specificity(&self) -> f64 {
        ratio(self.tn, self.tn + self.fp)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r > 0.0 {
            2.0 * p * r / (p + r)
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassRecall {
    pub detected: usize,
    pub support: usize,
}

impl ClassRecall {
    pub fn recall(&self) -> f64 {
        ratio(self.detected, self.support)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub confusion: Confusion,
    pub accuracy: f64,
    pub precision_anomaly: f64,
    pub recall_anomaly: f64,
    pub f1_anomaly: f64,
    pub specificity: f64,
    pub auroc: Option<f64>,
    pub auprc: Option<f64>,
    pub per_class_recall: BTreeMap<String, ClassRecall>,
}

pub fn is_anomaly_label(label: &str) -> bool {
    label != BENIGN
}

/// Binary metrics from predicted anomaly flags and normalized labels.
pub fn confusion_metrics(predicted_anomaly: &[bool], labels: &[String]) -> Result<MetricsReport> {
    let truth: Vec<bool> = labels.iter().map(|l| is_anomaly_label(l)).collect();
    let c = Confusion::from_predictions(&truth, predicted_anomaly)?;
    Ok(MetricsReport {
        confusion: c,
        accuracy: c.accuracy(),
        precision_anomaly: c.precision(),
        recall_anomaly: c.recall(),
        f1_anomaly: c.f1(),
        specificity: c.specificity(),
        auroc: None,
        auprc: None,
        per_class_recall: per_class_table(predicted_anomaly, labels)?,
    })
}

/// Recall per attack label.
pub fn per_class_table(predicted_anomaly: &[bool], labels: &[String]) -> Result<BTreeMap<String, ClassRecall>> {
    if predicted_anomaly.len() != labels.len() {
        return Err(Error::Data(format!(
            "{} predictions for {} labels",
            predicted_anomaly.len(),
            labels.len()
        )));
    }
    let mut out: BTreeMap<String, ClassRecall> = BTreeMap::new();
    for (l, &p) in labels.iter().zip(predicted_anomaly) {
        if !is_anomaly_label(l) {
            continue;
        }
        let e = out.entry(l.clone()).or_insert(ClassRecall { detected: 0, support: 0 });
        e.support += 1;
        e.detected += p as usize;
    }
    Ok(out)
}

pub fn render_per_class_table(table: &BTreeMap<String, ClassRecall>, threshold_name: &str) -> String {
    let w = table.keys().map(|k| k.len()).chain([10]).max().unwrap();
    let mut s = String::new();
    let _ = writeln!(s, "{:<w$}  {:>8}  {:>8}  {:>8}", "attack", "support", "detected", threshold_name);
    for (label, r) in table {
        let _ = writeln!(
            s,
            "{:<w$}  {:>8}  {:>8}  {:>7.2}%",
            label,
            r.support,
            r.detected,
            100.0 * r.recall()
        );
    }
    s
}

fn split_classes(scores: &[f64], truth: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != truth.len() {
        return Err(Error::Data(format!("{} scores for {} labels", scores.len(), truth.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("NaN score".into()));
    }
    let pos = truth.iter().filter(|&&t| t).count();
    Ok((pos, truth.len() - pos))
}

/// Mann–Whitney AUROC with ties counted as one half.
pub fn auroc(scores: &[f64], truth: &[bool]) -> Result<f64> {
    let (pos, neg) = split_classes(scores, truth)?;
    if pos == 0 || neg == 0 {
        return Err(Error::Data("AUROC needs both positive and negative samples".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += order[i..=j].iter().filter(|&&k| truth[k]).count() as f64 * midrank;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Step-wise area under the precision–recall curve, sweeping every distinct
/// score as a `score ≥ t` threshold from the top down.
pub fn auprc(scores: &[f64], truth: &[bool]) -> Result<f64> {
    let (pos, _) = split_classes(scores, truth)?;
    if pos == 0 {
        return Err(Error::Data("AUPRC needs at least one positive sample".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp, mut prev_recall, mut area) = (0usize, 0usize, 0.0, 0.0);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if truth[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let recall = tp as f64 / pos as f64;
        area += (recall - prev_recall) * tp as f64 / (tp + fp) as f64;
        prev_recall = recall;
    }
    Ok(area)
}

impl MetricsReport {
    /// Fills the threshold-free metrics from a continuous score.
    pub fn with_scores(mut self, scores: &[f64], labels: &[String]) -> Result<Self> {
        let truth: Vec<bool> = labels.iter().map(|l| is_anomaly_label(l)).collect();
        self.auroc = Some(auroc(scores, &truth)?);
        self.auprc = Some(auprc(scores, &truth)?);
        Ok(self)
    }

    /// One `metric=value` per line.
    pub fn to_key_values(&self) -> String {
        let c = &self.confusion;
        let mut s = String::new();
        for (k, v) in [
            ("accuracy", self.accuracy),
            ("precision_anomaly", self.precision_anomaly),
            ("recall_anomaly", self.recall_anomaly),
            ("f1_anomaly", self.f1_anomaly),
            ("specificity", self.specificity),
        ] {
            let _ = writeln!(s, "{k}={v:.6}");
        }
        if let Some(v) = self.auroc {
            let _ = writeln!(s, "auroc={v:.6}");
        }
        if let Some(v) = self.auprc {
            let _ = writeln!(s, "auprc={v:.6}");
        }
        let _ = writeln!(s, "tp={}\nfp={}\ntn={}\nfn={}", c.tp, c.fp, c.tn, c.fn_);
        for (label, r) in &self.per_class_recall {
            let _ = writeln!(s, "recall[{label}]={:.6}", r.recall());
        }
        s
    }

    pub fn render_text(&self, threshold_name: &str) -> String {
        let mut s = String::new();
        let pct = |v: f64| format!("{:.2}%", 100.0 * v);
        let opt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.4}"));
        let _ = writeln!(s, "threshold    {threshold_name}");
        let _ = writeln!(s, "accuracy     {}", pct(self.accuracy));
        let _ = writeln!(s, "precision    {:.4}", self.precision_anomaly);
        let _ = writeln!(s, "recall       {:.4}", self.recall_anomaly);
        let _ = writeln!(s, "f1           {:.4}", self.f1_anomaly);
        let _ = writeln!(s, "specificity  {}", pct(self.specificity));
        let _ = writeln!(s, "auroc        {}", opt(self.auroc));
        let _ = writeln!(s, "auprc        {}", opt(self.auprc));
        let c = &self.confusion;
        let _ = writeln!(s, "confusion    tp={} fp={} tn={} fn={}", c.tp, c.fp, c.tn, c.fn_);
        if !self.per_class_recall.is_empty() {
            s.push('\n');
            s.push_str(&render_per_class_table(&self.per_class_recall, threshold_name));
        }
        s
    }
}
