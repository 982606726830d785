use serde::{Deserialize, Serialize};

use super::FlowTable;
use crate::error::{Error, Result};

/// A derived ratio column `numerator / denominator`, defined as 0 when the
/// denominator is 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineeredFeature {
    pub name: String,
    pub numerator: String,
    pub denominator: String,
}

impl EngineeredFeature {
    /// Forward bytes per forward packet and forward packets per unit of flow
    /// duration, over CICFlowMeter column names.
    pub fn flow_rate_defaults() -> Vec<EngineeredFeature> {
        vec![
            EngineeredFeature {
                name: "bytes_per_packet".into(),
                numerator: "Total Length of Fwd Packets".into(),
                denominator: "Total Fwd Packets".into(),
            },
            EngineeredFeature {
                name: "packets_per_second".into(),
                numerator: "Total Fwd Packets".into(),
                denominator: "Flow Duration".into(),
            },
        ]
    }

    fn eval(num: f64, den: f64) -> f64 {
        if den == 0.0 {
            0.0
        } else {
            num / den
        }
    }
}

/// Fitted sanitize → engineer → variance-filter → standardize pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessorModel {
    /// Raw column names the model was fitted on, in order.
    pub input_columns: Vec<String>,
    pub impute_medians: Vec<f64>,
    pub engineered_defs: Vec<EngineeredFeature>,
    /// Keep flags over `input_columns` followed by the engineered columns.
    pub variance_mask: Vec<bool>,
    pub kept_columns: Vec<String>,
    pub scaler_mean: Vec<f64>,
    pub scaler_std: Vec<f64>,
}

impl PreprocessorModel {
    /// Width of transformed rows (the encoder input dimension).
    pub fn output_dim(&self) -> usize {
        self.kept_columns.len()
    }

    pub fn dropped_columns(&self) -> Vec<String> {
        self.engineered_columns()
            .into_iter()
            .zip(&self.variance_mask)
            .filter(|(_, keep)| !**keep)
            .map(|(c, _)| c)
            .collect()
    }

    fn engineered_columns(&self) -> Vec<String> {
        let mut cols = self.input_columns.clone();
        cols.extend(self.engineered_defs.iter().map(|d| d.name.clone()));
        cols
    }
}

fn median_of_finite(values: impl Iterator<Item = f64>) -> Option<f64> {
    let mut v: Vec<f64> = values.filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// Replaces ±∞ and NaN with per-column medians and appends the engineered
/// ratio columns.
///
/// With `medians = None` the medians are fitted over each column's finite
/// values; otherwise the supplied ones are used. Returns the medians used.
pub fn sanitize_and_engineer(
    table: &FlowTable,
    medians: Option<&[f64]>,
    defs: &[EngineeredFeature],
) -> Result<(FlowTable, Vec<f64>)> {
    if table.n_rows() == 0 {
        return Err(Error::Data("cannot sanitize an empty table".into()));
    }
    if table.is_processed() {
        return Err(Error::Data("table is already processed".into()));
    }
    let d = table.n_cols();
    let medians = match medians {
        Some(m) if m.len() == d => m.to_vec(),
        Some(m) => {
            return Err(Error::Data(format!(
                "{} medians supplied for {d} columns",
                m.len()
            )))
        }
        None => (0..d)
            .map(|j| {
                median_of_finite(table.column(j)).ok_or_else(|| {
                    Error::Data(format!(
                        "column {:?} has no finite values to fit a median",
                        table.columns()[j]
                    ))
                })
            })
            .collect::<Result<_>>()?,
    };

    let sources = defs
        .iter()
        .map(|def| {
            let find = |name: &str| {
                table.column_index(name).ok_or_else(|| {
                    Error::Data(format!(
                        "engineered feature {:?} needs missing column {name:?}",
                        def.name
                    ))
                })
            };
            Ok((find(&def.numerator)?, find(&def.denominator)?))
        })
        .collect::<Result<Vec<_>>>()?;

    let width = d + defs.len();
    let mut values = Vec::with_capacity(table.n_rows() * width);
    for i in 0..table.n_rows() {
        let start = values.len();
        for (j, &v) in table.row(i).iter().enumerate() {
            values.push(if v.is_finite() { v } else { medians[j] });
        }
        for &(num, den) in &sources {
            let (n, q) = (values[start + num], values[start + den]);
            values.push(EngineeredFeature::eval(n, q));
        }
    }
    let mut columns = table.columns().to_vec();
    columns.extend(defs.iter().map(|def| def.name.clone()));
    let out = FlowTable::new(columns, values, table.labels().to_vec())?;
    Ok((out, medians))
}

/// Fits the full pipeline on raw training rows.
///
/// A column is dropped exactly when its population variance over the
/// training rows is zero (every value equal).
pub fn fit_preprocessor(train: &FlowTable, defs: &[EngineeredFeature]) -> Result<PreprocessorModel> {
    if train.n_rows() < 2 {
        return Err(Error::Data("need at least 2 training rows".into()));
    }
    let (clean, medians) = sanitize_and_engineer(train, None, defs)?;
    let k = clean.n_rows() as f64;
    let mut variance_mask = Vec::with_capacity(clean.n_cols());
    let mut kept_columns = Vec::new();
    let mut scaler_mean = Vec::new();
    let mut scaler_std = Vec::new();
    for j in 0..clean.n_cols() {
        let (lo, hi) = clean
            .column(j)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        let keep = hi > lo;
        variance_mask.push(keep);
        if keep {
            let mean = clean.column(j).sum::<f64>() / k;
            let var = clean.column(j).map(|v| (v - mean) * (v - mean)).sum::<f64>() / k;
            kept_columns.push(clean.columns()[j].clone());
            scaler_mean.push(mean);
            scaler_std.push(var.sqrt());
        }
    }
    if kept_columns.is_empty() {
        return Err(Error::Data("every column has zero variance".into()));
    }
    let pp = PreprocessorModel {
        input_columns: train.columns().to_vec(),
        impute_medians: medians,
        engineered_defs: defs.to_vec(),
        variance_mask,
        kept_columns,
        scaler_mean,
        scaler_std,
    };
    log::info!(
        "preprocessor: {} raw + {} engineered columns, dropped {:?}, input dimension {}",
        pp.input_columns.len(),
        defs.len(),
        pp.dropped_columns(),
        pp.output_dim()
    );
    Ok(pp)
}

/// Applies a fitted pipeline to raw rows.
///
/// Standardization does not compose to the identity, so a table that has
/// already been transformed is rejected.
pub fn transform(table: &FlowTable, pp: &PreprocessorModel) -> Result<FlowTable> {
    if table.is_processed() {
        return Err(Error::Data("transform applied to an already processed table".into()));
    }
    if table.columns() != pp.input_columns.as_slice() {
        let missing = pp
            .input_columns
            .iter()
            .filter(|c| !table.columns().contains(c))
            .cloned()
            .collect();
        let extra = table
            .columns()
            .iter()
            .filter(|c| !pp.input_columns.contains(c))
            .cloned()
            .collect();
        return Err(Error::Schema { missing, extra });
    }
    let (clean, _) = sanitize_and_engineer(table, Some(&pp.impute_medians), &pp.engineered_defs)?;
    let keep: Vec<usize> = pp
        .variance_mask
        .iter()
        .enumerate()
        .filter(|(_, k)| **k)
        .map(|(j, _)| j)
        .collect();
    let mut values = Vec::with_capacity(clean.n_rows() * keep.len());
    for i in 0..clean.n_rows() {
        let row = clean.row(i);
        for (c, &j) in keep.iter().enumerate() {
            values.push((row[j] - pp.scaler_mean[c]) / pp.scaler_std[c]);
        }
    }
    Ok(FlowTable::from_parts(
        pp.kept_columns.clone(),
        values,
        clean.labels().to_vec(),
        true,
    ))
}
