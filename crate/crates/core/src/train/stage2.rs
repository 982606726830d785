use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::optim::{clip_grad_norm, OptimState};
use super::{EpochRecord, Stage2Config, TrainHistory};
use crate::error::{Error, Result};
use crate::maf::{nll, nll_on, MafConfig, MafParams};
use crate::ndiff::{Tape, Tensor};

pub fn train_stage2(
    latents: &Tensor,
    val: Option<&Tensor>,
    maf_cfg: MafConfig,
    cfg: &Stage2Config,
    seed: u64,
) -> Result<(MafParams, TrainHistory)> {
    train_stage2_with(latents, val, maf_cfg, cfg, seed, |_, _| Ok(()))
}

/// Fits the flow to benign latents by minibatch NLL at a constant rate.
pub fn train_stage2_with(
    latents: &Tensor,
    val: Option<&Tensor>,
    maf_cfg: MafConfig,
    cfg: &Stage2Config,
    seed: u64,
    mut on_epoch: impl FnMut(&EpochRecord, &MafParams) -> Result<()>,
) -> Result<(MafParams, TrainHistory)> {
    cfg.validate()?;
    if latents.rank() != 2 || latents.shape()[1] != maf_cfg.dim || latents.rows() == 0 {
        return Err(Error::shape(
            "train_stage2",
            format!("latents {:?} for a {}-dimensional flow", latents.shape(), maf_cfg.dim),
        ));
    }
    if !latents.all_finite() {
        return Err(Error::NonFinite("stage-2 latents".into()));
    }
    let mut maf = MafParams::init(maf_cfg, seed)?;
    let mut opt = OptimState::new(&maf.store, cfg.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(3));
    let mut order: Vec<usize> = (0..latents.rows()).collect();
    let mut history = TrainHistory::default();
    info!(
        "stage 2: {} latents, {} flow parameters",
        latents.rows(),
        maf.num_parameters()
    );

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut sum, mut clipped, mut batches) = (0.0, 0, 0);
        for (k, idx) in order.chunks(cfg.batch).enumerate() {
            let mut tape = Tape::new();
            let z = tape.constant(latents.select_rows(idx));
            let per = nll_on(&mut tape, &maf, z)?;
            let loss = tape.mean(per);
            let value = tape.value(loss).data()[0];
            if !value.is_finite() {
                return Err(Error::NonFinite(format!("stage-2 loss at epoch {epoch}, batch {k}")));
            }
            tape.backward_into(loss, &mut maf.store)?;
            clipped += clip_grad_norm(&mut maf.store, cfg.clip_norm) as usize;
            opt.step(&mut maf.store, cfg.lr)?;
            sum += value * idx.len() as f64;
            batches += 1;
        }
        if epoch == cfg.epochs {
            maf.store.round_to_f32();
        }
        let val_nll = match val {
            Some(v) => Some(nll(v, &maf)?.1),
            None => None,
        };
        let rec = EpochRecord {
            epoch,
            loss: sum / latents.rows() as f64,
            lr: cfg.lr,
            breakdown: None,
            val_f1: None,
            val_nll,
            batches,
            skipped_batches: 0,
            clipped_steps: clipped,
        };
        info!("{} clipped={clipped}", rec.log_line());
        on_epoch(&rec, &maf)?;
        history.records.push(rec);
    }
    Ok((maf, history))
}
