//! The frozen transformer encoder `f_θ`: stacked multi-head self-attention
//! layers with PET hook points, a pre-training routine and checkpoint I/O.
//!
//! Each layer computes `h ← h + MSA(LN(h))` (pre-norm residual form) unless
//! `pre_ln_residual` is off, in which case it is the bare `h ← MSA(h)`.
//! There is no MLP sub-block. A class token is prepended at index 0 and its
//! final, normalized state is the representation.

mod io;
mod pretrain;

pub use io::{load_checkpoint, read_checkpoint, read_tensors, save_checkpoint, write_checkpoint, write_tensors, MAGIC, VERSION};
pub use pretrain::{pretrain, PretrainConfig, PretrainReport};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::LabeledSet;
use crate::error::{dim_err, Error, Result};
use crate::numcore::{Scalar, Tape, Tensor, Var};
use crate::pet::{BoundPet, Payload, PetParams, Proj, Technique};
use crate::rng::SplitRng;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Arch {
    pub layers: usize,
    pub dim: usize,
    pub heads: usize,
    /// Raw tokens per sample, excluding the class token.
    pub tokens: usize,
    pub feat: usize,
    pub pre_ln_residual: bool,
}

impl Default for Arch {
    fn default() -> Self {
        Self { layers: 4, dim: 32, heads: 4, tokens: 8, feat: 16, pre_ln_residual: true }
    }
}

impl Arch {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.dim == 0 || self.heads == 0 || self.tokens == 0 || self.feat == 0 {
            return Err(Error::Config(format!("degenerate architecture {self:?}")));
        }
        if !self.dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!("dim {} not divisible by {} heads", self.dim, self.heads)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttnLayer<T = f32> {
    pub wq: Tensor<T>,
    pub wk: Tensor<T>,
    pub wv: Tensor<T>,
    pub wo: Tensor<T>,
}

impl<T: Scalar> AttnLayer<T> {
    pub fn proj(&self, p: Proj) -> &Tensor<T> {
        match p {
            Proj::Q => &self.wq,
            Proj::K => &self.wk,
            Proj::V => &self.wv,
        }
    }

    fn proj_mut(&mut self, p: Proj) -> &mut Tensor<T> {
        match p {
            Proj::Q => &mut self.wq,
            Proj::K => &mut self.wk,
            Proj::V => &mut self.wv,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub pretrain_task_count: u32,
    pub version: u32,
    pub frozen: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackboneCheckpoint<T = f32> {
    pub arch: Arch,
    pub input_embed: Tensor<T>,
    pub cls: Tensor<T>,
    pub layers: Vec<AttnLayer<T>>,
    pub meta: CheckpointMeta,
}

/// Backbone weights bound to tape variables.
#[derive(Clone, Debug)]
pub struct BoundBackbone {
    pub embed: Var,
    pub cls: Var,
    pub layers: Vec<[Var; 4]>,
}

impl BoundBackbone {
    pub fn vars(&self) -> Vec<Var> {
        let mut v = vec![self.embed, self.cls];
        for l in &self.layers {
            v.extend_from_slice(l);
        }
        v
    }
}

impl<T: Scalar> BackboneCheckpoint<T> {
    /// Random initialization (the zero-epoch checkpoint).
    pub fn random(arch: &Arch, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = SplitRng::new(seed).fork("backbone-init");
        let d = arch.dim;
        let wstd = 1.0 / (d as f64).sqrt();
        let layers = (0..arch.layers)
            .map(|_| AttnLayer {
                wq: Tensor::randn(&[d, d], wstd, &mut rng),
                wk: Tensor::randn(&[d, d], wstd, &mut rng),
                wv: Tensor::randn(&[d, d], wstd, &mut rng),
                wo: Tensor::randn(&[d, d], wstd, &mut rng),
            })
            .collect();
        Ok(Self {
            arch: arch.clone(),
            input_embed: Tensor::randn(&[arch.feat, d], 1.0 / (arch.feat as f64).sqrt(), &mut rng),
            cls: Tensor::randn(&[1, d], 0.02, &mut rng),
            layers,
            meta: CheckpointMeta { seed, pretrain_task_count: 0, version: VERSION, frozen: false },
        })
    }

    pub fn freeze(&mut self) {
        self.meta.frozen = true;
        for t in self.tensors_mut() {
            t.requires_grad = false;
            t.clear_grad();
        }
    }

    pub fn is_frozen(&self) -> bool {
        self.meta.frozen
    }

    /// Named tensors in file order.
    pub fn named(&self) -> Vec<(String, &Tensor<T>)> {
        let mut v = vec![("input_embed".to_string(), &self.input_embed), ("cls".to_string(), &self.cls)];
        for (i, l) in self.layers.iter().enumerate() {
            v.push((format!("layer{}.wq", i + 1), &l.wq));
            v.push((format!("layer{}.wk", i + 1), &l.wk));
            v.push((format!("layer{}.wv", i + 1), &l.wv));
            v.push((format!("layer{}.wo", i + 1), &l.wo));
        }
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut v = vec![&mut self.input_embed, &mut self.cls];
        for l in &mut self.layers {
            v.push(&mut l.wq);
            v.push(&mut l.wk);
            v.push(&mut l.wv);
            v.push(&mut l.wo);
        }
        v
    }

    /// SHA-256 over the names and bit patterns of all weights.
    pub fn digest(&self) -> String {
        digest_named(&self.named())
    }

    pub fn cast<U: Scalar>(&self) -> BackboneCheckpoint<U> {
        BackboneCheckpoint {
            arch: self.arch.clone(),
            input_embed: self.input_embed.cast(),
            cls: self.cls.cast(),
            layers: self
                .layers
                .iter()
                .map(|l| AttnLayer { wq: l.wq.cast(), wk: l.wk.cast(), wv: l.wv.cast(), wo: l.wo.cast() })
                .collect(),
            meta: self.meta.clone(),
        }
    }

    /// Copy with every LoRA factor of `g` folded into its target matrix.
    /// `self` is untouched; dropping the copy is the exact unmerge.
    pub fn merged(&self, g: &PetParams<T>) -> Result<Self> {
        if g.technique() != Technique::Lora {
            return Err(Error::Unsupported(format!("only LoRA sets can be merged, got {:?}", g.technique())));
        }
        let mut out = self.clone();
        for lp in &g.layers {
            let Payload::Lora { factors } = &lp.payload else { unreachable!() };
            let layer = out
                .layers
                .get_mut(lp.layer)
                .ok_or_else(|| Error::Config(format!("LoRA layer {} outside backbone", lp.layer)))?;
            for (p, b) in factors {
                let w = layer.proj_mut(*p);
                *w = crate::pet::lora_merge(w, &b.down, &b.up, g.spec.lora_scale)?;
            }
        }
        Ok(out)
    }

    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> BoundBackbone {
        let mut leaf = |t: &Tensor<T>| if trainable { tape.param(t) } else { tape.constant(t) };
        let embed = leaf(&self.input_embed);
        let cls = leaf(&self.cls);
        let layers = self.layers.iter().map(|l| [leaf(&l.wq), leaf(&l.wk), leaf(&l.wv), leaf(&l.wo)]).collect();
        BoundBackbone { embed, cls, layers }
    }

    fn check_pet(&self, pet: Option<&BoundPet>) -> Result<()> {
        if let Some(p) = pet {
            p.spec.validate(self.arch.layers)?;
        }
        Ok(())
    }

    /// Runs the encoder over `blocks` stacked samples (`x` is
    /// `blocks·tokens × feat`) and returns the `blocks × d` class-token rows.
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        bb: &BoundBackbone,
        pet: Option<&BoundPet>,
        x: Var,
        blocks: usize,
    ) -> Result<Var> {
        self.check_pet(pet)?;
        let (rows, feat) = tape.shape(x);
        if feat != self.arch.feat || rows != blocks * self.arch.tokens {
            return dim_err(format!(
                "input {rows}x{feat} does not match {blocks} samples of {}x{}",
                self.arch.tokens, self.arch.feat
            ));
        }
        let emb = tape.matmul(x, bb.embed)?;
        let mut h = tape.prepend_rows(bb.cls, emb, blocks)?;
        let mut cls_pos = 0;
        for l in 0..self.arch.layers {
            let (out, prepended) = self.layer_forward(tape, bb, l, h, blocks, pet)?;
            h = out;
            cls_pos += prepended;
        }
        if self.arch.pre_ln_residual {
            h = tape.layer_norm(h);
        }
        let seq = tape.shape(h).0 / blocks;
        let idx: Vec<usize> = (0..blocks).map(|b| b * seq + cls_pos).collect();
        tape.select_rows(h, &idx)
    }

    /// One attention block. Returns the new state and the number of rows
    /// prepended in front of the sequence (non-zero only for prompts).
    fn layer_forward(
        &self,
        tape: &mut Tape<T>,
        bb: &BoundBackbone,
        l: usize,
        mut h: Var,
        blocks: usize,
        pet: Option<&BoundPet>,
    ) -> Result<(Var, usize)> {
        let [wq, wk, wv, wo] = bb.layers[l];
        let hook = pet.and_then(|p| p.at(l).map(|pl| (p, pl)));
        let mut prepended = 0;
        if let Some((_, Payload::Prompt { p })) = hook {
            if l + 1 != self.arch.layers {
                return Err(Error::Config("prompt tuning attaches to the last layer only".into()));
            }
            prepended = tape.shape(*p).0;
            h = tape.prepend_rows(*p, h, blocks)?;
        }
        let a = if self.arch.pre_ln_residual { tape.layer_norm(h) } else { h };
        let mut q = tape.matmul(a, wq)?;
        let mut k = tape.matmul(a, wk)?;
        let mut v = tape.matmul(a, wv)?;
        if let Some((spec, Payload::Lora { factors })) = hook {
            let s = T::c(spec.spec.lora_scale);
            for (proj, b) in factors {
                let z = tape.matmul(a, b.down)?;
                let z = tape.matmul(z, b.up)?;
                let z = tape.scale(z, s);
                let target = match proj {
                    Proj::Q => &mut q,
                    Proj::K => &mut k,
                    Proj::V => &mut v,
                };
                *target = tape.add(*target, z)?;
            }
        }
        if let Some((_, Payload::Prefix { pk, pv })) = hook {
            k = tape.prepend_rows(*pk, k, blocks)?;
            v = tape.prepend_rows(*pv, v, blocks)?;
        }
        let att = tape.attention(q, k, v, blocks, self.arch.heads)?;
        let mut o = tape.matmul(att, wo)?;
        if let Some((_, Payload::Adapter { seq, par })) = hook {
            let base = o;
            if let Some(b) = seq {
                let z = tape.matmul(base, b.down)?;
                let z = tape.gelu(z);
                let z = tape.matmul(z, b.up)?;
                o = tape.add(o, z)?;
            }
            if let Some(b) = par {
                let z = tape.matmul(a, b.down)?;
                let z = tape.gelu(z);
                let z = tape.matmul(z, b.up)?;
                o = tape.add(o, z)?;
            }
        }
        let out = if self.arch.pre_ln_residual { tape.add(h, o)? } else { o };
        Ok((out, prepended))
    }

    /// One attention block applied to a single `n × d` token sequence.
    pub fn msa_layer(&self, h: &Tensor<T>, layer: usize, pet: Option<&PetParams<T>>) -> Result<Tensor<T>> {
        if layer >= self.arch.layers {
            return Err(Error::Index(format!("layer {layer} of {}", self.arch.layers)));
        }
        if h.cols() != self.arch.dim || h.rows() == 0 {
            return dim_err(format!("token sequence {:?} for width {}", h.shape(), self.arch.dim));
        }
        let mut tape = Tape::new();
        let bb = self.bind(&mut tape, false);
        let bound = pet.map(|p| p.bind(&mut tape, false));
        self.check_pet(bound.as_ref())?;
        let hv = tape.constant(h);
        let (out, _) = self.layer_forward(&mut tape, &bb, layer, hv, 1, bound.as_ref())?;
        Ok(tape.to_tensor(out))
    }

    /// Representation of one `tokens × feat` sample.
    pub fn encode(&self, x: &Tensor<T>, pet: Option<&PetParams<T>>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let bb = self.bind(&mut tape, false);
        let bound = pet.map(|p| p.bind(&mut tape, false));
        let xv = tape.constant(x);
        let out = self.forward(&mut tape, &bb, bound.as_ref(), xv, 1)?;
        let d = self.arch.dim;
        Tensor::new(&[d], tape.value(out).to_vec())
    }
}

impl BackboneCheckpoint<f32> {
    /// Representations of the selected samples as an `n × d` matrix,
    /// evaluated in chunks on fresh tapes.
    pub fn encode_set(&self, set: &LabeledSet, idx: &[usize], pet: Option<&PetParams<f32>>) -> Result<Tensor<f32>> {
        const CHUNK: usize = 128;
        let d = self.arch.dim;
        let mut data = Vec::with_capacity(idx.len() * d);
        for chunk in idx.chunks(CHUNK) {
            let mut tape = Tape::new();
            let bb = self.bind(&mut tape, false);
            let bound = pet.map(|p| p.bind(&mut tape, false));
            let xv = tape.constant(&set.batch(chunk));
            let out = self.forward(&mut tape, &bb, bound.as_ref(), xv, chunk.len())?;
            data.extend_from_slice(tape.value(out));
        }
        Tensor::new(&[idx.len(), d], data)
    }

    pub fn encode_all(&self, set: &LabeledSet, pet: Option<&PetParams<f32>>) -> Result<Tensor<f32>> {
        let idx: Vec<usize> = (0..set.len()).collect();
        self.encode_set(set, &idx, pet)
    }
}

pub fn digest_named<T: Scalar>(named: &[(String, &Tensor<T>)]) -> String {
    let mut h = Sha256::new();
    for (n, t) in named {
        h.update(n.as_bytes());
        for &s in t.shape() {
            h.update((s as u64).to_le_bytes());
        }
        for v in t.data() {
            h.update(v.f64().to_bits().to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pet::PetSpec;

    fn small() -> BackboneCheckpoint<f64> {
        BackboneCheckpoint::random(&Arch { layers: 2, dim: 8, heads: 2, tokens: 3, feat: 4, pre_ln_residual: true }, 5)
            .unwrap()
    }

    #[test]
    fn encode_is_pure() {
        let ck = small();
        let x = Tensor::randn(&[3, 4], 1.0, &mut SplitRng::new(1));
        assert!(ck.encode(&x, None).unwrap().bit_eq(&ck.encode(&x, None).unwrap()));
    }

    #[test]
    fn encode_rejects_wrong_feature_width() {
        let ck = small();
        let x = Tensor::zeros(&[3, 5]);
        assert!(matches!(ck.encode(&x, None), Err(Error::Dimension(_))));
    }

    #[test]
    fn zero_lora_matches_plain() {
        let ck = small();
        let x = Tensor::randn(&[3, 4], 1.0, &mut SplitRng::new(2));
        let pet = PetParams::init(&PetSpec::default(), 8, 2, &mut SplitRng::new(3)).unwrap();
        assert!(ck.encode(&x, Some(&pet)).unwrap().bit_eq(&ck.encode(&x, None).unwrap()));
    }

    #[test]
    fn prompt_grows_sequence_at_last_layer() {
        let ck = small();
        let spec = PetSpec { prompt_len: 4, ..PetSpec::for_technique(Technique::Prompt, 2) };
        let pet = PetParams::init(&spec, 8, 2, &mut SplitRng::new(3)).unwrap();
        let h = Tensor::randn(&[5, 8], 1.0, &mut SplitRng::new(4));
        assert_eq!(ck.msa_layer(&h, 1, Some(&pet)).unwrap().rows(), 9);
        let bad = PetSpec { layers: vec![0], ..spec };
        let pet = PetParams { spec: bad, layers: pet.layers.clone() };
        assert!(matches!(ck.msa_layer(&h, 0, Some(&pet)), Err(Error::Config(_))));
    }

    #[test]
    fn prefix_preserves_shape() {
        let ck = small();
        let spec = PetSpec::for_technique(Technique::Prefix, 2);
        let pet = PetParams::init(&spec, 8, 2, &mut SplitRng::new(3)).unwrap();
        let h = Tensor::randn(&[5, 8], 1.0, &mut SplitRng::new(4));
        assert_eq!(ck.msa_layer(&h, 0, Some(&pet)).unwrap().shape(), &[5, 8]);
    }

    #[test]
    fn merge_rejects_non_lora() {
        let ck = small();
        let pet = PetParams::init(&PetSpec::for_technique(Technique::Prefix, 2), 8, 2, &mut SplitRng::new(3)).unwrap();
        assert!(matches!(ck.merged(&pet), Err(Error::Unsupported(_))));
    }

    #[test]
    fn merged_view_leaves_original_untouched() {
        let ck = small();
        let before = ck.digest();
        let mut pet = PetParams::init(&PetSpec::default(), 8, 2, &mut SplitRng::new(3)).unwrap();
        for t in pet.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v += 0.1);
        }
        let m = ck.merged(&pet).unwrap();
        assert_ne!(m.digest(), before);
        assert_eq!(ck.digest(), before);
    }
}
