use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{normalize_label, FlowTable, BENIGN};
use crate::error::{Error, Result};

/// Which attack labels train Stage 1 and which are held out as unseen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub seen_attack_labels: BTreeSet<String>,
    pub unseen_attack_labels: BTreeSet<String>,
    /// Share of benign rows reserved for out-of-distribution evaluation.
    pub benign_holdout_fraction: f64,
    /// Share of each seen-attack class carved into the balanced internal
    /// validation set before balancing.
    pub val_fraction: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new<S: AsRef<str>>(seen: &[S], unseen: &[S], benign_holdout_fraction: f64, val_fraction: f64, seed: u64) -> Self {
        SplitSpec {
            seen_attack_labels: seen.iter().map(|s| normalize_label(s.as_ref())).collect(),
            unseen_attack_labels: unseen.iter().map(|s| normalize_label(s.as_ref())).collect(),
            benign_holdout_fraction,
            val_fraction,
            seed,
        }
    }

    /// Seen/unseen assignment used for the CIC-IDS-2017 protocol.
    pub fn cic_ids_2017() -> Self {
        SplitSpec::new(
            &[
                "DoS Hulk",
                "PortScan",
                "DDoS",
                "DoS GoldenEye",
                "FTP-Patator",
                "SSH-Patator",
                "Web Attack - Brute Force",
                "Web Attack - XSS",
                "Web Attack - Sql Injection",
                "Heartbleed",
            ],
            &["DoS slowloris", "DoS Slowhttptest", "Bot", "Infiltration"],
            0.2,
            0.25,
            42,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(l) = self.seen_attack_labels.intersection(&self.unseen_attack_labels).next() {
            return Err(Error::Config(format!("label {l:?} is both seen and unseen")));
        }
        if self.seen_attack_labels.contains(BENIGN) || self.unseen_attack_labels.contains(BENIGN) {
            return Err(Error::Config("attack label sets must not contain the benign label".into()));
        }
        if !(self.benign_holdout_fraction > 0.0 && self.benign_holdout_fraction < 1.0) {
            return Err(Error::Config("benign_holdout_fraction must lie in (0,1)".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config("val_fraction must lie in [0,1)".into()));
        }
        Ok(())
    }
}

/// Row indices of every partition, each sorted ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitPlan {
    pub stage1_train: Vec<usize>,
    pub internal_val: Vec<usize>,
    pub ood_eval: Vec<usize>,
    /// Benign rows never used by Stage 1 training or internal validation.
    pub benign_holdout: Vec<usize>,
    /// Every benign row outside the holdout and validation pools; a
    /// superset of the Stage-1 benign rows, used for density fitting.
    pub benign_train: Vec<usize>,
}

/// Partitions rows by label.
///
/// Benign rows are shuffled once under the seed and dealt, in order, to the
/// out-of-distribution holdout, internal validation, and Stage-1 training,
/// so the three benign pools are disjoint by construction.
pub fn plan_splits(labels: &[String], spec: &SplitSpec) -> Result<SplitPlan> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut benign = Vec::new();
    let mut seen: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    let mut unseen = Vec::new();
    for (i, l) in labels.iter().enumerate() {
        if l == BENIGN {
            benign.push(i);
        } else if spec.seen_attack_labels.contains(l) {
            seen.entry(l.as_str()).or_default().push(i);
        } else if spec.unseen_attack_labels.contains(l) {
            unseen.push(i);
        }
    }
    if benign.is_empty() {
        return Err(Error::Data("no benign rows".into()));
    }
    if seen.is_empty() {
        return Err(Error::Data("no rows carry a seen attack label".into()));
    }

    benign.shuffle(&mut rng);
    let n_holdout = (spec.benign_holdout_fraction * benign.len() as f64).round() as usize;
    let (holdout, pool) = benign.split_at(n_holdout);

    let mut val_anomalies = Vec::new();
    let mut train_anomalies = Vec::new();
    let mut largest = 0;
    for rows in seen.values_mut() {
        rows.shuffle(&mut rng);
        let n_val = (spec.val_fraction * rows.len() as f64).floor() as usize;
        val_anomalies.extend_from_slice(&rows[..n_val]);
        train_anomalies.extend_from_slice(&rows[n_val..]);
        largest = largest.max(rows.len() - n_val);
    }

    let n_val = val_anomalies.len();
    if pool.len() < n_val + largest {
        return Err(Error::Data(format!(
            "cannot balance: {} benign rows available after holdout, need {n_val} for validation and {largest} to match the largest attack class",
            pool.len()
        )));
    }
    let val_benign = &pool[..n_val];
    let train_benign = &pool[n_val..n_val + largest];

    let mut stage1_train: Vec<usize> = train_benign.iter().chain(&train_anomalies).copied().collect();
    let mut internal_val: Vec<usize> = val_benign.iter().chain(&val_anomalies).copied().collect();
    stage1_train.sort_unstable();
    internal_val.sort_unstable();

    let ood_eval = if unseen.is_empty() {
        Vec::new()
    } else {
        if holdout.len() < unseen.len() {
            return Err(Error::Data(format!(
                "held-out benign pool has {} rows, fewer than the {} unseen-attack rows",
                holdout.len(),
                unseen.len()
            )));
        }
        let mut v: Vec<usize> = holdout[..unseen.len()].iter().chain(&unseen).copied().collect();
        v.sort_unstable();
        v
    };
    let mut benign_holdout = holdout.to_vec();
    benign_holdout.sort_unstable();
    let mut benign_train = pool[n_val..].to_vec();
    benign_train.sort_unstable();

    Ok(SplitPlan {
        stage1_train,
        internal_val,
        ood_eval,
        benign_holdout,
        benign_train,
    })
}

/// Asymmetrically balanced Stage-1 training rows and the 1:1 internal
/// validation rows carved out before balancing.
pub fn make_stage1_split(table: &FlowTable, spec: &SplitSpec) -> Result<(FlowTable, FlowTable)> {
    let plan = plan_splits(table.labels(), spec)?;
    Ok((table.select(&plan.stage1_train), table.select(&plan.internal_val)))
}

/// Every unseen-attack row plus an equal number of held-out benign rows.
pub fn make_ood_split(table: &FlowTable, spec: &SplitSpec) -> Result<FlowTable> {
    let plan = plan_splits(table.labels(), spec)?;
    if plan.ood_eval.is_empty() {
        return Err(Error::Data("no rows carry an unseen attack label".into()));
    }
    Ok(table.select(&plan.ood_eval))
}
