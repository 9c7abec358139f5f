//! On-disk form of a [`HideState`]: every parameter tensor in the tensor
//! record container (`state.bin`) plus a JSON manifest (`manifest.json`)
//! holding configuration, registry, keys and statistics.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::engine::{HeadBranch, HideState, Registry, RepState};
use super::stats::{Recovery, RepStats};
use super::{HideConfig, TiiMode};
use crate::backbone::{read_tensors, write_tensors};
use crate::error::{Error, Result};
use crate::numcore::{Linear, Tensor};
use crate::pet::{PetParams, PetSpec};
use crate::rng::SplitRng;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Manifest {
    version: u32,
    seed: u64,
    cfg: HideConfig,
    spec: PetSpec,
    hierarchical: bool,
    dim: usize,
    tasks: usize,
    has_g: bool,
    views: Vec<Option<PetSpec>>,
    registry: Registry,
    keys: Vec<Vec<f32>>,
    branch: BranchManifest,
}

#[derive(Serialize, Deserialize)]
struct BranchManifest {
    name: String,
    recovery: Recovery,
    tii: TiiMode,
    tap: bool,
    all_classes: bool,
    stats_un: Vec<Vec<RepStats>>,
    stats_in: Vec<Vec<RepStats>>,
    warnings: Vec<String>,
    has_omega: bool,
    has_psi_tap: bool,
}

fn push_pet<'a>(out: &mut Vec<(String, &'a Tensor<f32>)>, prefix: &str, p: &'a PetParams<f32>) {
    out.extend(p.named().into_iter().map(|(n, t)| (format!("{prefix}.{n}"), t)));
}

fn push_linear<'a>(out: &mut Vec<(String, &'a Tensor<f32>)>, prefix: &str, l: &'a Linear<f32>) {
    out.push((format!("{prefix}.w"), &l.w));
    out.push((format!("{prefix}.b"), &l.b));
}

/// Writes `state.bin` and `manifest.json` into `dir`.
pub fn save_state(state: &HideState, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let rep = &state.rep;
    let mut named = Vec::new();
    for (k, e) in rep.e.iter().enumerate() {
        push_pet(&mut named, &format!("e{k}"), e);
    }
    if let Some(g) = &rep.g {
        push_pet(&mut named, "g", g);
    }
    for (k, v) in rep.views.iter().enumerate() {
        if let Some(v) = v {
            push_pet(&mut named, &format!("view{k}"), v);
        }
    }
    push_linear(&mut named, "psi", &rep.psi);
    push_linear(&mut named, "psi_hat", &rep.psi_hat);
    if let Some(o) = &state.branch.omega {
        push_linear(&mut named, "omega", o);
    }
    if let Some(p) = &state.branch.psi_tap {
        push_linear(&mut named, "psi_tap", p);
    }
    std::fs::write(dir.join("state.bin"), write_tensors(&named)?)?;

    let b = &state.branch;
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        seed: state.seed,
        cfg: state.cfg.clone(),
        spec: rep.spec.clone(),
        hierarchical: rep.hierarchical,
        dim: rep.psi.d_in(),
        tasks: rep.e.len(),
        has_g: rep.g.is_some(),
        views: rep.views.iter().map(|v| v.as_ref().map(|p| p.spec.clone())).collect(),
        registry: rep.registry.clone(),
        keys: rep.keys.clone(),
        branch: BranchManifest {
            name: b.name.clone(),
            recovery: b.recovery,
            tii: b.tii,
            tap: b.tap,
            all_classes: b.all_classes,
            stats_un: b.stats_un.clone(),
            stats_in: b.stats_in.clone(),
            warnings: b.warnings.clone(),
            has_omega: b.omega.is_some(),
            has_psi_tap: b.psi_tap.is_some(),
        },
    };
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

struct Store(HashMap<String, Tensor<f32>>);

impl Store {
    fn take(&mut self, name: &str) -> Result<Tensor<f32>> {
        self.0.remove(name).ok_or_else(|| Error::Format { offset: 0, msg: format!("tensor {name} missing") })
    }

    fn pet(&mut self, prefix: &str, spec: &PetSpec, dim: usize, layers: usize) -> Result<PetParams<f32>> {
        let mut p = PetParams::init(spec, dim, layers, &mut SplitRng::new(0))?;
        let names: Vec<String> = p.named().into_iter().map(|(n, _)| n).collect();
        for (n, t) in names.iter().zip(p.tensors_mut()) {
            let loaded = self.take(&format!("{prefix}.{n}"))?;
            if loaded.shape() != t.shape() {
                return Err(Error::Format { offset: 0, msg: format!("tensor {prefix}.{n} has shape {:?}", loaded.shape()) });
            }
            *t = loaded;
        }
        Ok(p)
    }

    fn linear(&mut self, prefix: &str) -> Result<Linear<f32>> {
        let w = self.take(&format!("{prefix}.w"))?;
        let b = self.take(&format!("{prefix}.b"))?;
        if w.rank() != 2 || w.cols() != b.len() {
            return Err(Error::Format { offset: 0, msg: format!("head {prefix} is inconsistent") });
        }
        Ok(Linear { w, b })
    }
}

/// Reads a state written by [`save_state`]; `num_layers` is the backbone depth.
pub fn load_state(dir: &Path, num_layers: usize) -> Result<HideState> {
    let m: Manifest = serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json"))?)?;
    if m.version != MANIFEST_VERSION {
        return Err(Error::UnsupportedVersion { found: m.version, supported: MANIFEST_VERSION });
    }
    let mut store = Store(read_tensors(&std::fs::read(dir.join("state.bin"))?)?.into_iter().collect());
    let (d, l) = (m.dim, num_layers);
    let e = (0..m.tasks).map(|k| store.pet(&format!("e{k}"), &m.spec, d, l)).collect::<Result<Vec<_>>>()?;
    let g = if m.has_g { Some(store.pet("g", &m.spec, d, l)?) } else { None };
    let views = m
        .views
        .iter()
        .enumerate()
        .map(|(k, v)| v.as_ref().map(|s| store.pet(&format!("view{k}"), s, d, l)).transpose())
        .collect::<Result<Vec<_>>>()?;
    let rep = RepState {
        spec: m.spec,
        hierarchical: m.hierarchical,
        e,
        g,
        psi: store.linear("psi")?,
        psi_hat: store.linear("psi_hat")?,
        keys: m.keys,
        registry: m.registry,
        views,
    };
    let b = m.branch;
    let branch = HeadBranch {
        name: b.name,
        recovery: b.recovery,
        tii: b.tii,
        tap: b.tap,
        all_classes: b.all_classes,
        stats_un: b.stats_un,
        stats_in: b.stats_in,
        omega: if b.has_omega { Some(store.linear("omega")?) } else { None },
        psi_tap: if b.has_psi_tap { Some(store.linear("psi_tap")?) } else { None },
        warnings: b.warnings,
    };
    if let Some(extra) = store.0.keys().next() {
        return Err(Error::Format { offset: 0, msg: format!("unexpected tensor {extra}") });
    }
    Ok(HideState { cfg: m.cfg, seed: m.seed, rep, branch })
}
