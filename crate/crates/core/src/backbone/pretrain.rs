use serde::{Deserialize, Serialize};

use super::{Arch, BackboneCheckpoint};
use crate::data::LabeledSet;
use crate::error::{Error, Result};
use crate::numcore::{argmax, Adam, Cosine, Linear, Tape};
use crate::rng::SplitRng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Training stops after the first epoch reaching this train accuracy.
    pub target_accuracy: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self { epochs: 40, lr: 3e-3, batch_size: 32, target_accuracy: 0.9, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    pub epochs_run: usize,
    pub train_accuracy: f64,
}

/// Supervised pre-training of every backbone weight plus a throwaway head on
/// the pretext classes. The result is frozen.
pub fn pretrain(
    arch: &Arch,
    pretext: &LabeledSet,
    downstream_classes: &[usize],
    cfg: &PretrainConfig,
) -> Result<(BackboneCheckpoint<f32>, PretrainReport)> {
    let classes = pretext.classes();
    if let Some(c) = classes.iter().find(|c| downstream_classes.contains(c)) {
        return Err(Error::Config(format!("pretext class {c} also appears downstream")));
    }
    if pretext.tokens != arch.tokens || pretext.feat != arch.feat {
        return Err(Error::Config("pretext samples do not match the architecture".into()));
    }
    let mut ck = BackboneCheckpoint::<f32>::random(arch, cfg.seed)?;
    ck.meta.pretrain_task_count = classes.len() as u32;
    let rng = SplitRng::new(cfg.seed).fork("pretrain");
    let mut head = Linear::<f32>::new(arch.dim, classes.len(), 0.02, &mut rng.fork("head"));
    let local: Vec<usize> = pretext.y.iter().map(|y| classes.binary_search(y).unwrap()).collect();

    let bs = cfg.batch_size.max(1);
    let steps_per_epoch = pretext.len().div_ceil(bs);
    let sched = Cosine { lr: cfg.lr, total: steps_per_epoch * cfg.epochs };
    let mut opt = Adam::new();
    let mut step = 0;
    let mut report = PretrainReport { epochs_run: 0, train_accuracy: 0.0 };
    for epoch in 0..cfg.epochs {
        let order = rng.fork_idx("epoch", epoch as u64).permutation(pretext.len());
        for batch in order.chunks(bs) {
            let mut tape = Tape::new();
            let bb = ck.bind(&mut tape, true);
            let hb = head.bind(&mut tape, true);
            let x = tape.constant(&pretext.batch(batch));
            let r = ck.forward(&mut tape, &bb, None, x, batch.len())?;
            let logits = hb.apply(&mut tape, r)?;
            let targets: Vec<usize> = batch.iter().map(|&i| local[i]).collect();
            let loss = tape.cross_entropy(logits, &targets)?;
            let grads = tape.backward(loss)?;
            let vars = bb.vars();
            let mut params = ck.tensors_mut();
            for (t, v) in params.iter_mut().zip(&vars) {
                grads.accumulate_into(*v, t)?;
            }
            head.accumulate(&hb, &grads)?;
            params.push(&mut head.w);
            params.push(&mut head.b);
            opt.step(&mut params, sched.at(step));
            step += 1;
        }
        report.epochs_run = epoch + 1;
        let reps = ck.encode_all(pretext, None)?;
        let logits = head.logits(&reps)?;
        let correct = (0..pretext.len()).filter(|&i| argmax(logits.row(i)) == local[i]).count();
        report.train_accuracy = correct as f64 / pretext.len().max(1) as f64;
        if report.train_accuracy >= cfg.target_accuracy {
            break;
        }
    }
    ck.freeze();
    Ok((ck, report))
}
