//! Parameter-efficient tuning attachments: prompt (ProT), prefix (PreT),
//! sequential/parallel adapters and LoRA, plus merging and ensemble
//! initialization of task-specific sets.
//!
//! A [`PetParams`] is a list of per-layer payloads. The payload type is
//! generic over its carrier so the same layout holds tensors at rest and tape
//! variables during a forward pass.

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::numcore::{Scalar, Tape, Tensor, Var};
use crate::rng::SplitRng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Technique {
    /// Prompt prepended to the token sequence of the last layer.
    Prompt,
    /// Prefix prepended to projected keys and values.
    Prefix,
    AdapterSeq,
    AdapterPar,
    /// Sequential and parallel adapters, each with half the bottleneck.
    Adapter,
    Lora,
}

impl Technique {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "prot" | "prompt" => Ok(Self::Prompt),
            "pret" | "prefix" => Ok(Self::Prefix),
            "adapter-seq" => Ok(Self::AdapterSeq),
            "adapter-par" => Ok(Self::AdapterPar),
            "adapter" => Ok(Self::Adapter),
            "lora" => Ok(Self::Lora),
            other => Err(Error::Config(format!("unknown PET technique {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Proj {
    Q,
    K,
    V,
}

impl Proj {
    fn tag(self) -> &'static str {
        match self {
            Proj::Q => "Q",
            Proj::K => "K",
            Proj::V => "V",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AdapterMode {
    Seq,
    Par,
}

/// Shape and placement of one PET parameter set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PetSpec {
    pub technique: Technique,
    /// Zero-based layer indices.
    pub layers: Vec<usize>,
    /// Total prompt length `d_p` (split into key and value halves for PreT).
    pub prompt_len: usize,
    /// Total bottleneck `r`, split evenly across adapter modes or LoRA targets.
    pub rank: usize,
    pub lora_scale: f64,
    pub lora_targets: Vec<Proj>,
    pub init_std: f64,
}

impl Default for PetSpec {
    fn default() -> Self {
        Self {
            technique: Technique::Lora,
            layers: vec![0, 1],
            prompt_len: 20,
            rank: 10,
            lora_scale: 1.0,
            lora_targets: vec![Proj::K, Proj::V],
            init_std: 0.02,
        }
    }
}

impl PetSpec {
    /// Defaults for `technique` on a backbone with `num_layers` layers.
    pub fn for_technique(technique: Technique, num_layers: usize) -> Self {
        let layers = if technique == Technique::Prompt { vec![num_layers - 1] } else { vec![0, 1.min(num_layers - 1)] };
        let mut layers = layers;
        layers.dedup();
        Self { technique, layers, ..Self::default() }
    }

    pub fn validate(&self, num_layers: usize) -> Result<()> {
        if let Some(&l) = self.layers.iter().find(|&&l| l >= num_layers) {
            return Err(Error::Config(format!("PET layer {l} outside {num_layers} layers")));
        }
        match self.technique {
            Technique::Prompt => {
                if self.layers.iter().any(|&l| l + 1 != num_layers) {
                    return Err(Error::Config("prompt tuning attaches to the last layer only".into()));
                }
            }
            Technique::Prefix => {
                if !self.prompt_len.is_multiple_of(2) {
                    return Err(Error::Invariant(format!("prefix length {} must be even", self.prompt_len)));
                }
            }
            Technique::AdapterSeq | Technique::AdapterPar | Technique::Adapter | Technique::Lora => {
                if self.per_module_rank() == 0 {
                    return Err(Error::Config("bottleneck rank must be at least 1".into()));
                }
            }
        }
        if self.technique == Technique::Lora {
            if self.lora_scale < 1.0 {
                return Err(Error::Invariant(format!("LoRA scale {} below 1", self.lora_scale)));
            }
            if self.lora_targets.is_empty() {
                return Err(Error::Config("LoRA needs at least one target projection".into()));
            }
        }
        Ok(())
    }

    fn modules(&self) -> usize {
        match self.technique {
            Technique::Adapter => 2,
            Technique::Lora => self.lora_targets.len().max(1),
            _ => 1,
        }
    }

    /// Bottleneck of each adapter module or LoRA target.
    pub fn per_module_rank(&self) -> usize {
        self.rank / self.modules()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bottleneck<C> {
    pub down: C,
    pub up: C,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Payload<C> {
    Prompt { p: C },
    Prefix { pk: C, pv: C },
    Adapter { seq: Option<Bottleneck<C>>, par: Option<Bottleneck<C>> },
    Lora { factors: Vec<(Proj, Bottleneck<C>)> },
}

impl<C> Payload<C> {
    /// Every carried value with its name suffix, in a fixed order.
    pub fn items(&self) -> Vec<(String, &C)> {
        match self {
            Payload::Prompt { p } => vec![("p".into(), p)],
            Payload::Prefix { pk, pv } => vec![("pK".into(), pk), ("pV".into(), pv)],
            Payload::Adapter { seq, par } => {
                let mut v = Vec::new();
                if let Some(b) = seq {
                    v.push(("seq.down".into(), &b.down));
                    v.push(("seq.up".into(), &b.up));
                }
                if let Some(b) = par {
                    v.push(("par.down".into(), &b.down));
                    v.push(("par.up".into(), &b.up));
                }
                v
            }
            Payload::Lora { factors } => factors
                .iter()
                .flat_map(|(p, b)| [(format!("lora.{}.down", p.tag()), &b.down), (format!("lora.{}.up", p.tag()), &b.up)])
                .collect(),
        }
    }

    pub fn items_mut(&mut self) -> Vec<&mut C> {
        match self {
            Payload::Prompt { p } => vec![p],
            Payload::Prefix { pk, pv } => vec![pk, pv],
            Payload::Adapter { seq, par } => {
                let mut v = Vec::new();
                if let Some(b) = seq {
                    v.push(&mut b.down);
                    v.push(&mut b.up);
                }
                if let Some(b) = par {
                    v.push(&mut b.down);
                    v.push(&mut b.up);
                }
                v
            }
            Payload::Lora { factors } => factors.iter_mut().flat_map(|(_, b)| [&mut b.down, &mut b.up]).collect(),
        }
    }

    pub fn try_map<D>(&self, f: &mut impl FnMut(&C) -> Result<D>) -> Result<Payload<D>> {
        let mut bn = |b: &Bottleneck<C>| -> Result<Bottleneck<D>> { Ok(Bottleneck { down: f(&b.down)?, up: f(&b.up)? }) };
        Ok(match self {
            Payload::Prompt { p } => Payload::Prompt { p: f(p)? },
            Payload::Prefix { pk, pv } => Payload::Prefix { pk: f(pk)?, pv: f(pv)? },
            Payload::Adapter { seq, par } => Payload::Adapter {
                seq: seq.as_ref().map(&mut bn).transpose()?,
                par: par.as_ref().map(&mut bn).transpose()?,
            },
            Payload::Lora { factors } => {
                Payload::Lora { factors: factors.iter().map(|(p, b)| Ok((*p, bn(b)?))).collect::<Result<_>>()? }
            }
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerPet<C> {
    pub layer: usize,
    pub payload: Payload<C>,
}

/// One PET parameter set (a task-specific `e_i` or a shared `g`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PetParams<T = f32> {
    pub spec: PetSpec,
    pub layers: Vec<LayerPet<Tensor<T>>>,
}

/// A PET set bound to tape variables.
#[derive(Clone, Debug)]
pub struct BoundPet {
    pub spec: PetSpec,
    pub layers: Vec<LayerPet<Var>>,
}

impl BoundPet {
    pub fn at(&self, layer: usize) -> Option<&Payload<Var>> {
        self.layers.iter().find(|l| l.layer == layer).map(|l| &l.payload)
    }

    /// Every bound variable, in the order of [`PetParams::tensors_mut`].
    pub fn vars(&self) -> Vec<Var> {
        self.layers.iter().flat_map(|l| l.payload.items().into_iter().map(|(_, v)| *v)).collect()
    }
}

impl<T: Scalar> PetParams<T> {
    /// Fresh parameters: prompts and down-projections Gaussian, up-projections zero.
    pub fn init(spec: &PetSpec, d: usize, num_layers: usize, rng: &mut SplitRng) -> Result<Self> {
        spec.validate(num_layers)?;
        let std = spec.init_std;
        let r = spec.per_module_rank();
        let bn = |rng: &mut SplitRng| Bottleneck { down: Tensor::randn(&[d, r], std, rng), up: Tensor::zeros(&[r, d]) };
        let mut layers = Vec::new();
        for &layer in &spec.layers {
            let payload = match spec.technique {
                Technique::Prompt => Payload::Prompt { p: Tensor::randn(&[spec.prompt_len, d], std, rng) },
                Technique::Prefix => {
                    let h = spec.prompt_len / 2;
                    Payload::Prefix { pk: Tensor::randn(&[h, d], std, rng), pv: Tensor::randn(&[h, d], std, rng) }
                }
                Technique::AdapterSeq => Payload::Adapter { seq: Some(bn(rng)), par: None },
                Technique::AdapterPar => Payload::Adapter { seq: None, par: Some(bn(rng)) },
                Technique::Adapter => Payload::Adapter { seq: Some(bn(rng)), par: Some(bn(rng)) },
                Technique::Lora => Payload::Lora { factors: spec.lora_targets.iter().map(|&p| (p, bn(rng))).collect() },
            };
            layers.push(LayerPet { layer, payload });
        }
        Ok(Self { spec: spec.clone(), layers })
    }

    pub fn technique(&self) -> Technique {
        self.spec.technique
    }

    /// Named tensors, e.g. `layer1.pK` (layer numbers are one-based in names).
    pub fn named(&self) -> Vec<(String, &Tensor<T>)> {
        self.layers
            .iter()
            .flat_map(|l| l.payload.items().into_iter().map(move |(n, t)| (format!("layer{}.{n}", l.layer + 1), t)))
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.layers.iter_mut().flat_map(|l| l.payload.items_mut()).collect()
    }

    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> BoundPet {
        let layers = self
            .layers
            .iter()
            .map(|l| {
                let payload = l
                    .payload
                    .try_map(&mut |t: &Tensor<T>| Ok(if trainable { tape.param(t) } else { tape.constant(t) }))
                    .expect("binding cannot fail");
                LayerPet { layer: l.layer, payload }
            })
            .collect();
        BoundPet { spec: self.spec.clone(), layers }
    }

    /// Rebinds this layout to existing variables, given in the order of
    /// [`PetParams::tensors_mut`].
    pub fn bind_vars(&self, vars: &[Var]) -> Result<BoundPet> {
        let mut it = vars.iter();
        let mut next = |_: &Tensor<T>| it.next().copied().ok_or_else(|| Error::Dimension("too few variables".into()));
        let layers = self
            .layers
            .iter()
            .map(|l| Ok(LayerPet { layer: l.layer, payload: l.payload.try_map(&mut next)? }))
            .collect::<Result<Vec<_>>>()?;
        if it.next().is_some() {
            return dim_err("too many variables for PET layout");
        }
        Ok(BoundPet { spec: self.spec.clone(), layers })
    }

    /// Adds the gradients of a bound copy into this set's buffers.
    pub fn accumulate(&mut self, bound: &BoundPet, grads: &crate::numcore::Gradients<T>) -> Result<()> {
        let vars = bound.vars();
        let mut ts = self.tensors_mut();
        if vars.len() != ts.len() {
            return dim_err("bound PET does not match parameter set");
        }
        for (t, v) in ts.iter_mut().zip(vars) {
            grads.accumulate_into(v, t)?;
        }
        Ok(())
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.spec.technique == other.spec.technique
            && self.layers.len() == other.layers.len()
            && self.named().iter().zip(other.named()).all(|((na, a), (nb, b))| na == &nb && a.shape() == b.shape())
    }

    /// Elementwise `self = a·self + b·other`.
    pub fn axpby(&mut self, a: f64, other: &Self, b: f64) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::Config("PET sets differ in technique or shape".into()));
        }
        let others: Vec<&Tensor<T>> = other.named().into_iter().map(|(_, t)| t).collect();
        for (t, o) in self.tensors_mut().into_iter().zip(others) {
            for (x, &y) in t.data_mut().iter_mut().zip(o.data()) {
                *x = T::c(a * x.f64() + b * y.f64());
            }
        }
        Ok(())
    }

    pub fn param_budget(&self) -> usize {
        param_budget(self)
    }

    pub fn cast<U: Scalar>(&self) -> PetParams<U> {
        PetParams {
            spec: self.spec.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerPet { layer: l.layer, payload: l.payload.try_map(&mut |t| Ok(t.cast::<U>())).unwrap() })
                .collect(),
        }
    }

    /// Payload for tensors at rest.
    pub fn at(&self, layer: usize) -> Option<&Payload<Tensor<T>>> {
        self.layers.iter().find(|l| l.layer == layer).map(|l| &l.payload)
    }
}

/// Exact count of trainable scalars.
pub fn param_budget<T: Scalar>(pet: &PetParams<T>) -> usize {
    pet.named().iter().map(|(_, t)| t.len()).sum()
}

/// Initial set for task `t = previous.len() + 1`: fresh for the first task,
/// otherwise `alpha · Σ_{i<t} e_i + (1 − alpha) · e_{t−1}`.
pub fn ensemble_init<T: Scalar>(
    previous: &[&PetParams<T>],
    alpha: f64,
    fresh: impl FnOnce() -> Result<PetParams<T>>,
) -> Result<PetParams<T>> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Config(format!("ensemble alpha {alpha} outside [0, 1]")));
    }
    let Some(last) = previous.last() else { return fresh() };
    if previous.iter().any(|p| !p.same_shape(last)) {
        return Err(Error::Config("ensemble over mixed PET techniques or shapes".into()));
    }
    let mut out = (*last).clone();
    out.axpby(1.0 - alpha, last, 0.0)?;
    for p in previous {
        out.axpby(1.0, p, alpha)?;
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Tensor-level forms of the attachment equations, for single sequences.
// ---------------------------------------------------------------------------

fn attend_single<T: Scalar>(q: &Tensor<T>, k: &Tensor<T>, v: &Tensor<T>, heads: usize) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let (q, k, v) = (tape.constant(q), tape.constant(k), tape.constant(v));
    let o = tape.attention(q, k, v, 1, heads)?;
    Ok(tape.to_tensor(o))
}

/// Projection weights of one attention layer.
pub struct AttnWeights<'a, T> {
    pub wq: &'a Tensor<T>,
    pub wk: &'a Tensor<T>,
    pub wv: &'a Tensor<T>,
    pub wo: &'a Tensor<T>,
    pub heads: usize,
}

impl<T: Scalar> AttnWeights<'_, T> {
    pub fn msa(&self, hq: &Tensor<T>, hk: &Tensor<T>, hv: &Tensor<T>) -> Result<Tensor<T>> {
        let o = attend_single(&hq.matmul(self.wq)?, &hk.matmul(self.wk)?, &hv.matmul(self.wv)?, self.heads)?;
        o.matmul(self.wo)
    }
}

fn vcat<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.rows() > 0 && a.cols() != b.cols() {
        return dim_err(format!("concat widths {} vs {}", a.cols(), b.cols()));
    }
    let mut data = a.data().to_vec();
    data.extend_from_slice(b.data());
    Tensor::new(&[a.rows() + b.rows(), b.cols()], data)
}

/// `MSA([p; h], [p; h], [p; h])`; the output grows by the prompt length.
pub fn prot_apply<T: Scalar>(w: &AttnWeights<T>, p: &Tensor<T>, h: &Tensor<T>, is_last_layer: bool) -> Result<Tensor<T>> {
    if !is_last_layer {
        return Err(Error::Config("prompt tuning attaches to the last layer only".into()));
    }
    let x = vcat(p, h)?;
    w.msa(&x, &x, &x)
}

/// `MSA(h, [p_K; h W_K], [p_V; h W_V])` with the prefixes joined after
/// projection; the output keeps the input shape.
pub fn pret_apply<T: Scalar>(w: &AttnWeights<T>, pk: &Tensor<T>, pv: &Tensor<T>, h: &Tensor<T>) -> Result<Tensor<T>> {
    if pk.rows() != pv.rows() {
        return Err(Error::Invariant(format!("prefix halves differ: {} vs {}", pk.rows(), pv.rows())));
    }
    let k = vcat(pk, &h.matmul(w.wk)?)?;
    let v = vcat(pv, &h.matmul(w.wv)?)?;
    let o = attend_single(&h.matmul(w.wq)?, &k, &v, w.heads)?;
    o.matmul(w.wo)
}

/// Single-head rewrite of the prefix output as a gated mixture of plain
/// attention and attention over the prefix alone. Returns the output and the
/// per-position gate `λ`, the softmax mass placed on prefix positions.
pub fn pret_reframe<T: Scalar>(
    w: &AttnWeights<T>,
    pk: &Tensor<T>,
    pv: &Tensor<T>,
    h: &Tensor<T>,
) -> Result<(Tensor<T>, Vec<T>)> {
    if w.heads != 1 {
        return Err(Error::Config("the mixture rewrite is defined per head; use one head".into()));
    }
    let (q, k, v) = (h.matmul(w.wq)?, h.matmul(w.wk)?, h.matmul(w.wv)?);
    let d = q.cols();
    let scale = 1.0 / (d as f64).sqrt();
    let plain = attend_single(&q, &k, &v, 1)?;
    let (n, np) = (q.rows(), pk.rows());
    let mut out = Tensor::zeros(&[n, d]);
    let mut lambdas = Vec::with_capacity(n);
    let lse = |xs: &[f64]| -> f64 {
        let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if m == f64::NEG_INFINITY {
            return m;
        }
        m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
    };
    for i in 0..n {
        let qi = q.row(i);
        let sp: Vec<f64> = (0..np).map(|j| dotf(qi, pk.row(j)) * scale).collect();
        let sh: Vec<f64> = (0..k.rows()).map(|j| dotf(qi, k.row(j)) * scale).collect();
        let (lp, lh) = (lse(&sp), lse(&sh));
        let lambda = if np == 0 { 0.0 } else { 1.0 / (1.0 + (lh - lp).exp()) };
        let mut pref = vec![0.0; d];
        for j in 0..np {
            let a = (sp[j] - lp).exp();
            for (o, &x) in pref.iter_mut().zip(pv.row(j)) {
                *o += a * x.f64();
            }
        }
        for (c, o) in out.row_mut(i).iter_mut().enumerate() {
            *o = T::c((1.0 - lambda) * plain.row(i)[c].f64() + lambda * pref[c]);
        }
        lambdas.push(T::c(lambda));
    }
    Ok((out.matmul(w.wo)?, lambdas))
}

fn dotf<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.f64() * y.f64()).sum()
}

/// Seq: `h' + GELU(h' W_down) W_up`; Par: `h' + GELU(h W_down) W_up`.
pub fn adapter_apply<T: Scalar>(
    mode: AdapterMode,
    h: &Tensor<T>,
    h_out: &Tensor<T>,
    down: &Tensor<T>,
    up: &Tensor<T>,
) -> Result<Tensor<T>> {
    if down.cols() == 0 {
        return Err(Error::Config("adapter bottleneck r must be at least 1".into()));
    }
    let src = match mode {
        AdapterMode::Seq => h_out,
        AdapterMode::Par => h,
    };
    let z = src.matmul(down)?.map(crate::numcore::gelu);
    let delta = z.matmul(up)?;
    h_out.zip_map(&delta, |a, b| a + b)
}

/// Side branch `h' + s · h W_down W_up`.
pub fn lora_apply<T: Scalar>(h: &Tensor<T>, h_out: &Tensor<T>, down: &Tensor<T>, up: &Tensor<T>, s: f64) -> Result<Tensor<T>> {
    if s < 1.0 {
        return Err(Error::Invariant(format!("LoRA scale {s} below 1")));
    }
    let delta = h.matmul(down)?.matmul(up)?;
    let s = T::c(s);
    h_out.zip_map(&delta, |a, b| a + s * b)
}

/// `W + s · W_down W_up`.
pub fn lora_merge<T: Scalar>(w: &Tensor<T>, down: &Tensor<T>, up: &Tensor<T>, s: f64) -> Result<Tensor<T>> {
    if s < 1.0 {
        return Err(Error::Invariant(format!("LoRA scale {s} below 1")));
    }
    let delta = down.matmul(up)?;
    if delta.shape() != w.shape() {
        return dim_err(format!("LoRA update {:?} for weight {:?}", delta.shape(), w.shape()));
    }
    let s = T::c(s);
    w.zip_map(&delta, |a, b| a + s * b)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(t: Technique) -> PetSpec {
        PetSpec::for_technique(t, 4)
    }

    #[test]
    fn equal_budget_at_defaults() {
        let d = 32;
        let mut rng = SplitRng::new(0);
        let mut budget = |t| param_budget(&PetParams::<f32>::init(&spec(t), d, 4, &mut rng).unwrap());
        let pret = budget(Technique::Prefix);
        assert_eq!(pret, 20 * d * 2);
        assert_eq!(budget(Technique::Lora), pret);
        assert_eq!(budget(Technique::Adapter), pret);
        assert_eq!(budget(Technique::AdapterSeq), pret);
    }

    #[test]
    fn odd_prefix_rejected() {
        let s = PetSpec { technique: Technique::Prefix, prompt_len: 3, ..PetSpec::default() };
        assert!(matches!(s.validate(4), Err(Error::Invariant(_))));
    }

    #[test]
    fn prompt_outside_last_layer_rejected() {
        let s = PetSpec { technique: Technique::Prompt, layers: vec![0], ..PetSpec::default() };
        assert!(matches!(s.validate(4), Err(Error::Config(_))));
    }

    #[test]
    fn lora_scale_below_one_rejected() {
        let s = PetSpec { lora_scale: 0.5, ..PetSpec::default() };
        assert!(matches!(s.validate(4), Err(Error::Invariant(_))));
    }

    #[test]
    fn ensemble_alpha_zero_copies_last() {
        let mut rng = SplitRng::new(1);
        let s = spec(Technique::Prefix);
        let a = PetParams::<f64>::init(&s, 8, 4, &mut rng).unwrap();
        let b = PetParams::<f64>::init(&s, 8, 4, &mut rng).unwrap();
        let e = ensemble_init(&[&a, &b], 0.0, || unreachable!()).unwrap();
        assert_eq!(e, b);
    }

    #[test]
    fn ensemble_formula() {
        let mut rng = SplitRng::new(2);
        let s = spec(Technique::Prefix);
        let sets: Vec<PetParams<f64>> = (0..3).map(|_| PetParams::init(&s, 4, 4, &mut rng).unwrap()).collect();
        let refs: Vec<&PetParams<f64>> = sets.iter().collect();
        let e = ensemble_init(&refs, 0.1, || unreachable!()).unwrap();
        let x = e.named()[0].1.data()[0];
        let parts: Vec<f64> = sets.iter().map(|p| p.named()[0].1.data()[0]).collect();
        let want = 0.1 * parts.iter().sum::<f64>() + 0.9 * parts[2];
        assert!((x - want).abs() < 1e-15);
    }

    #[test]
    fn ensemble_first_task_is_fresh() {
        let e = ensemble_init::<f64>(&[], 0.1, || {
            PetParams::init(&spec(Technique::Lora), 4, 4, &mut SplitRng::new(9))
        })
        .unwrap();
        assert_eq!(e, PetParams::init(&spec(Technique::Lora), 4, 4, &mut SplitRng::new(9)).unwrap());
    }

    #[test]
    fn ensemble_rejects_mixed_techniques() {
        let mut rng = SplitRng::new(3);
        let a = PetParams::<f64>::init(&spec(Technique::Prefix), 4, 4, &mut rng).unwrap();
        let b = PetParams::<f64>::init(&spec(Technique::Lora), 4, 4, &mut rng).unwrap();
        assert!(matches!(ensemble_init(&[&a, &b], 0.1, || unreachable!()), Err(Error::Config(_))));
    }

    #[test]
    fn names_follow_layer_numbering() {
        let p = PetParams::<f32>::init(&spec(Technique::Prefix), 4, 4, &mut SplitRng::new(0)).unwrap();
        let names: Vec<String> = p.named().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names, vec!["layer1.pK", "layer1.pV", "layer2.pK", "layer2.pV"]);
    }
}
