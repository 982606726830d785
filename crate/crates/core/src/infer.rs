//! Threshold calibration, centroid triage and density review.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dccl::{sq_dist, CentroidPair};
use crate::error::{Error, Result};
use crate::maf::{nll, MafParams};
use crate::ndiff::Tensor;

pub const DEFAULT_PERCENTILES: [u32; 3] = [99, 97, 95];

/// Percentile thresholds in NLL units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSet {
    pub entries: Vec<(u32, f64)>,
}

impl ThresholdSet {
    pub fn get(&self, percentile: u32) -> Result<f64> {
        self.entries
            .iter()
            .find(|(p, _)| *p == percentile)
            .map(|(_, t)| *t)
            .ok_or_else(|| Error::Config(format!("no P{percentile} threshold was calibrated")))
    }

    pub fn percentiles(&self) -> Vec<u32> {
        self.entries.iter().map(|(p, _)| *p).collect()
    }
}

/// Linear-interpolation percentile at zero-based position `(n-1)·p/100`.
pub fn percentile_of_sorted(sorted: &[f64], p: f64) -> f64 {
    let pos = (sorted.len() - 1) as f64 * p / 100.0;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn calibrate_thresholds(benign_nll: &[f64], percentiles: &[u32]) -> Result<ThresholdSet> {
    if benign_nll.is_empty() {
        return Err(Error::Data("no benign scores to calibrate on".into()));
    }
    if benign_nll.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("calibration score".into()));
    }
    if percentiles.is_empty() || percentiles.iter().any(|&p| p == 0 || p > 100) {
        return Err(Error::Config(format!("percentiles must lie in 1..=100, got {percentiles:?}")));
    }
    let mut sorted = benign_nll.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(ThresholdSet {
        entries: percentiles
            .iter()
            .map(|&p| (p, percentile_of_sorted(&sorted, p as f64)))
            .collect(),
    })
}

/// Anomaly score `S(z) = -log p(z)` per row.
pub fn score(z: &Tensor, maf: &MafParams) -> Result<Vec<f64>> {
    Ok(nll(z, maf)?.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VerdictKind {
    KnownAnomaly,
    OodAnomaly,
    Benign,
}

impl VerdictKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            VerdictKind::KnownAnomaly => "known_anomaly",
            VerdictKind::OodAnomaly => "ood_anomaly",
            VerdictKind::Benign => "benign",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Verdict {
    pub kind: VerdictKind,
    /// Absent when triage short-circuits.
    pub score: Option<f64>,
    pub dist_benign: f64,
    pub dist_anomaly: f64,
}

impl Verdict {
    pub fn is_anomaly(&self) -> bool {
        self.kind != VerdictKind::Benign
    }
}

/// Triage by strict nearest centroid; the rest are scored by the flow in one batch.
pub fn classify_latents(z: &Tensor, centroids: &CentroidPair, maf: &MafParams, tau: f64) -> Result<Vec<Verdict>> {
    if z.rank() != 2 || z.shape()[1] != centroids.dim() {
        return Err(Error::shape(
            "classify",
            format!("latents {:?} against {}-dimensional centroids", z.shape(), centroids.dim()),
        ));
    }
    let mut out: Vec<Verdict> = (0..z.rows())
        .map(|i| {
            let db = sq_dist(z.row(i), &centroids.c_benign);
            let da = sq_dist(z.row(i), &centroids.c_anomaly);
            Verdict {
                kind: VerdictKind::KnownAnomaly,
                score: None,
                dist_benign: db,
                dist_anomaly: da,
            }
        })
        .collect();
    let review: Vec<usize> = (0..out.len()).filter(|&i| !(out[i].dist_anomaly < out[i].dist_benign)).collect();
    if !review.is_empty() {
        let scores = score(&z.select_rows(&review), maf)?;
        for (&i, s) in review.iter().zip(scores) {
            out[i].score = Some(s);
            out[i].kind = if s > tau { VerdictKind::OodAnomaly } else { VerdictKind::Benign };
        }
    }
    Ok(out)
}

/// `index,kind,score,dist_benign,dist_anomaly`, score empty for triaged rows.
pub fn write_verdicts(path: impl AsRef<Path>, verdicts: &[Verdict]) -> Result<()> {
    let path = path.as_ref();
    let wrap = |e: csv::Error| Error::Data(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(wrap)?;
    w.write_record(["index", "kind", "score", "dist_benign", "dist_anomaly"]).map_err(wrap)?;
    for (i, v) in verdicts.iter().enumerate() {
        w.write_record([
            i.to_string(),
            v.kind.as_str().to_string(),
            v.score.map_or(String::new(), |s| s.to_string()),
            v.dist_benign.to_string(),
            v.dist_anomaly.to_string(),
        ])
        .map_err(wrap)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
