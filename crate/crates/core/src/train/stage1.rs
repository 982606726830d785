use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::optim::{clip_grad_norm, cosine_lr, OptimState};
use super::{EpochRecord, Stage1Config, TrainHistory};
use crate::data::FlowTable;
use crate::dccl::{centroids, dccl_on, sq_dist, CentroidPair};
use crate::encoder::{encode_on, encode_rows, EncoderConfig, EncoderParams, Mode};
use crate::error::{Error, Result};
use crate::metrics::Confusion;
use crate::ndiff::{Tape, Tensor};

const EVAL_CHUNK: usize = 512;

pub struct Stage1Output {
    pub encoder: EncoderParams,
    pub history: TrainHistory,
}

/// Anomaly iff strictly closer to the anomaly centroid.
pub fn nearest_centroid_predict(z: &Tensor, c: &CentroidPair) -> Vec<bool> {
    (0..z.rows())
        .map(|i| sq_dist(z.row(i), &c.c_anomaly) < sq_dist(z.row(i), &c.c_benign))
        .collect()
}

/// Shuffled batches with per-class quotas proportional to class sizes.
/// Batches holding fewer than two rows of either class are dropped; the
/// second return value counts them.
pub fn stratified_batches(
    benign: &[usize],
    anomaly: &[usize],
    batch: usize,
    rng: &mut ChaCha8Rng,
) -> (Vec<(Vec<usize>, Vec<usize>)>, usize) {
    let (mut b, mut a) = (benign.to_vec(), anomaly.to_vec());
    b.shuffle(rng);
    a.shuffle(rng);
    let n_batches = (b.len() + a.len()).div_ceil(batch).max(1);
    let qb = b.len().div_ceil(n_batches).max(2);
    let qa = a.len().div_ceil(n_batches).max(2);
    let take = |v: &[usize], q: usize, k: usize| -> Vec<usize> {
        let start = (k * q).min(v.len());
        v[start..((k + 1) * q).min(v.len())].to_vec()
    };
    let mut out = Vec::with_capacity(n_batches);
    let mut skipped = 0;
    for k in 0..n_batches {
        let (bb, ab) = (take(&b, qb, k), take(&a, qa, k));
        if bb.len() < 2 || ab.len() < 2 {
            skipped += 1;
        } else {
            out.push((bb, ab));
        }
    }
    (out, skipped)
}

fn class_indices(t: &FlowTable) -> (Vec<usize>, Vec<usize>) {
    (0..t.n_rows()).partition(|&i| t.is_benign(i))
}

fn check_table(t: &FlowTable, cfg: &EncoderConfig, what: &str) -> Result<()> {
    if !t.is_processed() {
        return Err(Error::Data(format!("{what} split has not been preprocessed")));
    }
    if t.n_cols() != cfg.input_dim {
        return Err(Error::Data(format!(
            "{what} split has {} features, encoder expects {}",
            t.n_cols(),
            cfg.input_dim
        )));
    }
    Ok(())
}

fn rows_tensor(t: &FlowTable, idx: &[usize]) -> Result<Tensor> {
    let d = t.n_cols();
    let mut data = Vec::with_capacity(idx.len() * d);
    for &i in idx {
        data.extend_from_slice(t.row(i));
    }
    Tensor::new(&[idx.len(), d], data)
}

fn nearest_centroid_f1(val: &FlowTable, enc: &EncoderParams, c: &CentroidPair) -> Result<f64> {
    let z = encode_rows(&val.to_tensor()?, enc, EVAL_CHUNK)?;
    let truth: Vec<bool> = (0..val.n_rows()).map(|i| !val.is_benign(i)).collect();
    Ok(Confusion::from_predictions(&truth, &nearest_centroid_predict(&z, c))?.f1())
}

/// Eval-mode centroids over a whole labelled table.
pub(crate) fn table_centroids(t: &FlowTable, enc: &EncoderParams) -> Result<CentroidPair> {
    let (b, a) = class_indices(t);
    let z = encode_rows(&t.to_tensor()?, enc, EVAL_CHUNK)?;
    centroids(&z.select_rows(&b), &z.select_rows(&a))
}

pub fn train_stage1(
    train: &FlowTable,
    val: Option<&FlowTable>,
    enc_cfg: EncoderConfig,
    cfg: &Stage1Config,
    seed: u64,
) -> Result<Stage1Output> {
    train_stage1_with(train, val, enc_cfg, cfg, seed, |_, _| Ok(()))
}

/// Stage-1 training; `on_epoch` sees every finished epoch and the current weights.
pub fn train_stage1_with(
    train: &FlowTable,
    val: Option<&FlowTable>,
    enc_cfg: EncoderConfig,
    cfg: &Stage1Config,
    seed: u64,
    mut on_epoch: impl FnMut(&EpochRecord, &EncoderParams) -> Result<()>,
) -> Result<Stage1Output> {
    cfg.validate()?;
    check_table(train, &enc_cfg, "stage-1 training")?;
    if let Some(v) = val {
        check_table(v, &enc_cfg, "validation")?;
    }
    let (benign, anomaly) = class_indices(train);
    if benign.len() < 2 || anomaly.len() < 2 {
        return Err(Error::Data(format!(
            "stage-1 training needs both classes, found {} benign and {} anomalous rows",
            benign.len(),
            anomaly.len()
        )));
    }

    let mut enc = EncoderParams::init(enc_cfg, seed)?;
    let mut opt = OptimState::new(&enc.store, cfg.weight_decay);
    let mut batch_rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let mut drop_rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(2));
    let per_epoch = (benign.len() + anomaly.len()).div_ceil(cfg.batch).max(1);
    let total = per_epoch * cfg.epochs;
    let mut history = TrainHistory::default();
    info!(
        "stage 1: {} benign, {} anomalous rows, {} parameters, {} steps",
        benign.len(),
        anomaly.len(),
        enc.num_parameters(),
        total
    );

    for epoch in 1..=cfg.epochs {
        let (batches, skipped) = stratified_batches(&benign, &anomaly, cfg.batch, &mut batch_rng);
        if skipped > 0 {
            warn!("epoch {epoch}: skipped {skipped} batches lacking two rows of each class");
        }
        let mut sums = [0.0f64; 4];
        let mut clipped = 0;
        let mut lr = cfg.lr;
        for (k, (bi, ai)) in batches.iter().enumerate() {
            lr = cosine_lr((epoch - 1) * per_epoch + k, total, cfg.lr);
            let idx: Vec<usize> = bi.iter().chain(ai).copied().collect();
            let mut tape = Tape::new();
            let x = tape.constant(rows_tensor(train, &idx)?);
            let z = encode_on(&mut tape, &enc, x, &mut Mode::Train(&mut drop_rng))?;
            let nb = bi.len();
            let zb = tape.select_rows(z, &(0..nb).collect::<Vec<_>>())?;
            let za = tape.select_rows(z, &(nb..idx.len()).collect::<Vec<_>>())?;
            let vars = dccl_on(&mut tape, zb, za, &cfg.dccl)?;
            let br = vars.breakdown(&tape);
            if !br.total.is_finite() {
                return Err(Error::NonFinite(format!("stage-1 loss at epoch {epoch}, batch {k}")));
            }
            tape.backward_into(vars.total, &mut enc.store)?;
            clipped += clip_grad_norm(&mut enc.store, cfg.clip_norm) as usize;
            opt.step(&mut enc.store, lr)?;
            for (s, v) in sums.iter_mut().zip([br.total, br.l_cb, br.l_ca, br.l_s]) {
                *s += v;
            }
        }
        let n = batches.len().max(1) as f64;
        let last = epoch == cfg.epochs;
        if last {
            enc.store.round_to_f32();
        }
        let mut val_f1 = None;
        if last || val.is_some() {
            let c = table_centroids(train, &enc)?;
            if let Some(v) = val {
                val_f1 = Some(nearest_centroid_f1(v, &enc, &c)?);
            }
            if last {
                enc.centroids = Some(c);
            }
        }
        let rec = EpochRecord {
            epoch,
            loss: sums[0] / n,
            lr,
            breakdown: Some([sums[1] / n, sums[2] / n, sums[3] / n]),
            val_f1,
            val_nll: None,
            batches: batches.len(),
            skipped_batches: skipped,
            clipped_steps: clipped,
        };
        info!("{} clipped={clipped}", rec.log_line());
        on_epoch(&rec, &enc)?;
        history.records.push(rec);
    }
    Ok(Stage1Output { encoder: enc, history })
}
