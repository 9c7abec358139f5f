//! Mini-batch training of a PET set together with a linear head.

use crate::backbone::{BackboneCheckpoint, BoundBackbone};
use crate::data::LabeledSet;
use crate::error::{Error, Result};
use crate::numcore::{Adam, BoundLinear, Cosine, Linear, Scalar, Tape, Var};
use crate::pet::{BoundPet, PetParams};
use crate::rng::SplitRng;

/// Softmax cross-entropy of `head(f_{θ,pet}(x))` restricted to the columns
/// `cols`; `targets` index into `cols`. With `cols` equal to one task's
/// classes this is the task-local within-task loss.
#[allow(clippy::too_many_arguments)]
pub fn wtp_loss<T: Scalar>(
    tape: &mut Tape<T>,
    theta: &BackboneCheckpoint<T>,
    bb: &BoundBackbone,
    pet: Option<&BoundPet>,
    head: &BoundLinear,
    x: Var,
    blocks: usize,
    cols: &[usize],
    targets: &[usize],
) -> Result<Var> {
    let r = theta.forward(tape, bb, pet, x, blocks)?;
    let logits = head.apply(tape, r)?;
    let width = tape.shape(logits).1;
    let local = if cols.len() == width && cols.iter().enumerate().all(|(i, &c)| i == c) {
        logits
    } else {
        tape.gather_cols(logits, cols)?
    };
    tape.cross_entropy(local, targets)
}

/// One PET-plus-head fitting run.
pub struct FitJob<'a> {
    pub backbone: &'a BackboneCheckpoint<f32>,
    pub set: &'a LabeledSet,
    /// Head columns entering the softmax.
    pub cols: &'a [usize],
    /// Per-sample target, as an index into `cols`.
    pub targets: &'a [usize],
    pub epochs: usize,
    /// Leading epochs during which only the head trains.
    pub frozen_epochs: usize,
    pub batch_size: usize,
    pub lr_pet: f64,
    pub lr_head: f64,
}

/// Trains `pet` and `head` with Adam under cosine schedules and returns the
/// mean loss of the final epoch.
pub fn fit_pet(job: &FitJob, pet: &mut PetParams<f32>, head: &mut Linear<f32>, rng: &SplitRng) -> Result<f64> {
    if job.targets.len() != job.set.len() {
        return Err(Error::Dimension(format!("{} targets for {} samples", job.targets.len(), job.set.len())));
    }
    if job.set.is_empty() {
        return Err(Error::Contract("cannot fit on an empty set".into()));
    }
    let bs = job.batch_size.max(1);
    let steps = job.set.len().div_ceil(bs) * job.epochs;
    let pet_sched = Cosine { lr: job.lr_pet, total: steps };
    let head_sched = Cosine { lr: job.lr_head, total: steps };
    let (mut opt_pet, mut opt_head) = (Adam::new(), Adam::new());
    let mut step = 0;
    let mut last = 0.0;
    for epoch in 0..job.epochs {
        let train_pet = epoch >= job.frozen_epochs;
        let order = rng.fork_idx("epoch", epoch as u64).permutation(job.set.len());
        let mut total = 0.0;
        for batch in order.chunks(bs) {
            let mut tape = Tape::new();
            let bb = job.backbone.bind(&mut tape, false);
            let pb = pet.bind(&mut tape, train_pet);
            let hb = head.bind(&mut tape, true);
            let x = tape.constant(&job.set.batch(batch));
            let targets: Vec<usize> = batch.iter().map(|&i| job.targets[i]).collect();
            let loss = wtp_loss(&mut tape, job.backbone, &bb, Some(&pb), &hb, x, batch.len(), job.cols, &targets)?;
            total += tape.scalar(loss)? as f64 * batch.len() as f64;
            let grads = tape.backward(loss)?;
            head.accumulate(&hb, &grads)?;
            head.step(&mut opt_head, head_sched.at(step));
            if train_pet {
                pet.accumulate(&pb, &grads)?;
                opt_pet.step(&mut pet.tensors_mut(), pet_sched.at(step));
            }
            step += 1;
        }
        last = total / job.set.len() as f64;
        if !last.is_finite() {
            return Err(Error::Numeric(format!("non-finite training loss in epoch {epoch}")));
        }
    }
    Ok(last)
}

/// Trains a linear head on fixed representation rows.
pub fn fit_head(
    head: &mut Linear<f32>,
    reps: &[Vec<f32>],
    targets: &[usize],
    epochs: usize,
    batch_size: usize,
    lr: f64,
    rng: &SplitRng,
) -> Result<()> {
    if reps.is_empty() {
        return Ok(());
    }
    let d = head.d_in();
    let bs = batch_size.max(1);
    let sched = Cosine { lr, total: reps.len().div_ceil(bs) * epochs };
    let mut opt = Adam::new();
    let mut step = 0;
    for epoch in 0..epochs {
        let order = rng.fork_idx("epoch", epoch as u64).permutation(reps.len());
        for batch in order.chunks(bs) {
            let mut tape = Tape::new();
            let hb = head.bind(&mut tape, true);
            let mut data = Vec::with_capacity(batch.len() * d);
            for &i in batch {
                data.extend_from_slice(&reps[i]);
            }
            let x = tape.constant_raw(batch.len(), d, data)?;
            let logits = hb.apply(&mut tape, x)?;
            let t: Vec<usize> = batch.iter().map(|&i| targets[i]).collect();
            let loss = tape.cross_entropy(logits, &t)?;
            let grads = tape.backward(loss)?;
            head.accumulate(&hb, &grads)?;
            head.step(&mut opt, sched.at(step));
            step += 1;
        }
    }
    Ok(())
}
