//! End-to-end orchestration over a raw flow table: fit every stage into a
//! [`ModelContainer`], and evaluate a container on labelled rows.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use log::info;

use crate::config::RunConfig;
use crate::container::ModelContainer;
use crate::data::{fit_preprocessor, plan_splits, transform, EngineeredFeature, FlowTable, PreprocessorModel, SplitPlan};
use crate::dccl::sq_dist;
use crate::encoder::{encode_rows, EncoderParams};
use crate::error::{Error, Result};
use crate::infer::{calibrate_thresholds, score};
use crate::metrics::{confusion_metrics, is_anomaly_label, MetricsReport};
use crate::ndiff::Tensor;
use crate::train::{train_stage1, train_stage2, TrainHistory};

pub const EMBED_CHUNK: usize = 1024;

/// The default engineered ratios whose source columns are all present.
pub fn engineered_for(table: &FlowTable) -> Vec<EngineeredFeature> {
    EngineeredFeature::flow_rate_defaults()
        .into_iter()
        .filter(|d| table.column_index(&d.numerator).is_some() && table.column_index(&d.denominator).is_some())
        .collect()
}

/// Passes through a table already in the fitted output schema and
/// transforms anything else.
pub fn prepare(table: &FlowTable, pp: &PreprocessorModel) -> Result<FlowTable> {
    if table.is_processed() {
        if table.columns() != pp.kept_columns.as_slice() {
            return Err(Error::Data("processed table does not match the fitted columns".into()));
        }
        return Ok(table.clone());
    }
    if table.columns() == pp.kept_columns.as_slice() && table.columns() != pp.input_columns.as_slice() {
        return Ok(FlowTable::from_parts(
            table.columns().to_vec(),
            table.values().to_vec(),
            table.labels().to_vec(),
            true,
        ));
    }
    transform(table, pp)
}

pub fn embed_prepared(table: &FlowTable, enc: &EncoderParams) -> Result<Tensor> {
    encode_rows(&table.to_tensor()?, enc, EMBED_CHUNK)
}

/// Latents for raw or processed rows.
pub fn embed(table: &FlowTable, model: &ModelContainer) -> Result<Tensor> {
    embed_prepared(&prepare(table, model.require_preprocessor()?)?, model.require_encoder()?)
}

pub fn benign_rows(table: &FlowTable) -> Vec<usize> {
    (0..table.n_rows()).filter(|&i| table.is_benign(i)).collect()
}

/// Everything produced by [`fit`].
pub struct FitOutput {
    pub model: ModelContainer,
    pub plan: SplitPlan,
    pub stage1_history: TrainHistory,
    pub stage2_history: TrainHistory,
}

/// Split, preprocess, train both stages and calibrate.
///
/// The flow is fitted and calibrated on every benign training row, not
/// only the undersampled Stage-1 subset.
pub fn fit(raw: &FlowTable, cfg: &RunConfig) -> Result<FitOutput> {
    cfg.validate()?;
    let plan = plan_splits(raw.labels(), &cfg.split_spec())?;
    let train_raw = raw.select(&plan.stage1_train);
    let pp = fit_preprocessor(&train_raw, &engineered_for(raw))?;
    let train = transform(&train_raw, &pp)?;
    let val = if plan.internal_val.is_empty() {
        None
    } else {
        Some(transform(&raw.select(&plan.internal_val), &pp)?)
    };
    let s1 = train_stage1(&train, val.as_ref(), cfg.encoder_config(pp.output_dim()), &cfg.stage1, cfg.seed)?;
    let z_benign = embed_prepared(&transform(&raw.select(&plan.benign_train), &pp)?, &s1.encoder)?;
    let (maf, h2) = train_stage2(&z_benign, None, cfg.maf_config(), &cfg.stage2, cfg.seed)?;
    let thresholds = calibrate_thresholds(&score(&z_benign, &maf)?, &cfg.percentiles)?;
    info!("thresholds: {:?}", thresholds.entries);
    Ok(FitOutput {
        model: ModelContainer {
            seed: cfg.seed,
            config_text: cfg.to_text(),
            preprocessor: Some(pp),
            encoder: Some(s1.encoder),
            dccl: Some(cfg.dccl()),
            maf: Some(maf),
            thresholds: Some(thresholds),
        },
        plan,
        stage1_history: s1.history,
        stage2_history: h2,
    })
}

/// Reports for one labelled set: Stage-1 nearest centroid alone, then the
/// two-stage pipeline at each calibrated threshold. AUROC/AUPRC use the raw
/// density score of every row, without triage.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub rows: usize,
    pub stage1: MetricsReport,
    pub by_threshold: Vec<(u32, f64, MetricsReport)>,
}

impl Evaluation {
    pub fn get(&self, percentile: u32) -> Option<&MetricsReport> {
        self.by_threshold.iter().find(|(p, _, _)| *p == percentile).map(|(_, _, r)| r)
    }

    pub fn render_text(&self) -> String {
        let mut s = format!("rows         {}\n\n[stage1 nearest centroid]\n", self.rows);
        s.push_str(&self.stage1.render_text("stage1"));
        for (p, tau, r) in &self.by_threshold {
            let _ = write!(s, "\n[two-stage P{p}, tau={tau:.6}]\n");
            s.push_str(&r.render_text(&format!("P{p}")));
        }
        s
    }

    pub fn to_key_values(&self) -> String {
        let mut s = format!("rows={}\n", self.rows);
        let mut block = |prefix: &str, r: &MetricsReport| {
            for line in r.to_key_values().lines() {
                let _ = writeln!(s, "{prefix}.{line}");
            }
        };
        block("stage1", &self.stage1);
        for (p, _, r) in &self.by_threshold {
            block(&format!("p{p}"), r);
        }
        for (p, tau, _) in &self.by_threshold {
            let _ = writeln!(s, "tau.p{p}={tau:.17e}");
        }
        s
    }
}

pub fn evaluate_latents(z: &Tensor, labels: &[String], model: &ModelContainer) -> Result<Evaluation> {
    let c = model.require_centroids()?;
    let maf = model.require_maf()?;
    let thresholds = model.require_thresholds()?;
    if z.rows() != labels.len() {
        return Err(Error::Data(format!("{} latents for {} labels", z.rows(), labels.len())));
    }
    if z.rank() != 2 || z.shape()[1] != c.dim() {
        return Err(Error::shape("evaluate", format!("latents {:?} for {}-dimensional centroids", z.shape(), c.dim())));
    }
    let triaged: Vec<bool> = (0..z.rows())
        .map(|i| sq_dist(z.row(i), &c.c_anomaly) < sq_dist(z.row(i), &c.c_benign))
        .collect();
    let s = score(z, maf)?;
    let classes: BTreeSet<bool> = labels.iter().map(|l| is_anomaly_label(l)).collect();
    let with_scores = |r: MetricsReport| if classes.len() == 2 { r.with_scores(&s, labels) } else { Ok(r) };
    let by_threshold = thresholds
        .entries
        .iter()
        .map(|&(p, tau)| {
            let flags: Vec<bool> = triaged.iter().zip(&s).map(|(&t, &v)| t || v > tau).collect();
            Ok((p, tau, with_scores(confusion_metrics(&flags, labels)?)?))
        })
        .collect::<Result<_>>()?;
    Ok(Evaluation {
        rows: z.rows(),
        stage1: confusion_metrics(&triaged, labels)?,
        by_threshold,
    })
}

pub fn evaluate(table: &FlowTable, model: &ModelContainer) -> Result<Evaluation> {
    evaluate_latents(&embed(table, model)?, table.labels(), model)
}
