//! Synthetic token-sequence benchmarks.
//!
//! A *domain* fixes how latent class codes become raw tokens: a mixing
//! matrix, an offset and a distractor marker. A class is a latent mean
//! `z_c`; a sample perturbs it, then emits `informative` tokens
//! `M z + noise + offset` and the remaining tokens as distractors drawn from
//! an unrelated latent plus the marker. Latent coordinates can be weighted
//! per domain (e.g. the pretext domain barely varies along the second half),
//! which creates the gap between pre-training and downstream classes.

use serde::{Deserialize, Serialize};

use crate::data::LabeledSet;
use crate::error::{Error, Result};
use crate::rng::SplitRng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Scenario {
    Cil,
    Dil,
    Til,
}

impl Scenario {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cil" => Ok(Self::Cil),
            "dil" => Ok(Self::Dil),
            "til" => Ok(Self::Til),
            other => Err(Error::Config(format!("unknown scenario {other:?}"))),
        }
    }
}

/// Generative statistics of one source of tasks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DomainSpec {
    pub name: String,
    /// Seed of the mixing matrix, offset and marker.
    pub seed: u64,
    /// Scale of the class-code spread; larger means better separated classes.
    pub margin: f64,
    /// Per-sample latent perturbation.
    pub sample_noise: f64,
    /// Per-token additive noise in feature space.
    pub token_noise: f64,
    pub offset_scale: f64,
    pub marker_scale: f64,
    /// Number of class-bearing tokens per sample (the rest are distractors).
    pub informative: usize,
    /// Relative weight of the second half of the latent code in class means.
    pub tail_weight: f64,
}

impl Default for DomainSpec {
    fn default() -> Self {
        Self {
            name: "A".into(),
            seed: 11,
            margin: 1.0,
            sample_noise: 0.55,
            token_noise: 0.5,
            offset_scale: 0.5,
            marker_scale: 1.5,
            informative: 5,
            tail_weight: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorSpec {
    pub latent: usize,
    pub feat: usize,
    pub tokens: usize,
    /// Seed of the class codes (shared by every domain).
    pub class_seed: u64,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self { latent: 8, feat: 16, tokens: 8, class_seed: 3 }
    }
}

/// A domain with its random structure materialized.
#[derive(Clone, Debug)]
pub struct Domain {
    pub spec: DomainSpec,
    gen: GeneratorSpec,
    mix: Vec<f64>,
    distract_mix: Vec<f64>,
    offset: Vec<f64>,
    marker: Vec<f64>,
}

impl Domain {
    pub fn new(gen: &GeneratorSpec, spec: &DomainSpec) -> Self {
        let mut r = SplitRng::new(spec.seed).fork("domain");
        let (k, f) = (gen.latent, gen.feat);
        let scale = 1.0 / (k as f64).sqrt();
        let mix = (0..k * f).map(|_| r.normal() * scale).collect();
        let distract_mix = (0..k * f).map(|_| r.normal() * scale).collect();
        let offset = (0..f).map(|_| r.normal() * spec.offset_scale).collect();
        let marker = (0..f).map(|_| r.normal() * spec.marker_scale / (f as f64).sqrt()).collect();
        Self { spec: spec.clone(), gen: gen.clone(), mix, distract_mix, offset, marker }
    }

    /// Latent mean of global class `c`.
    pub fn class_code(&self, c: usize) -> Vec<f64> {
        let mut r = SplitRng::new(self.gen.class_seed).fork_idx("class", c as u64);
        let k = self.gen.latent;
        (0..k)
            .map(|i| {
                let w = if i >= k / 2 { self.spec.tail_weight } else { 1.0 };
                r.normal() * self.spec.margin * w
            })
            .collect()
    }

    fn project(&self, m: &[f64], z: &[f64], out: &mut [f64]) {
        let f = self.gen.feat;
        for (j, o) in out.iter_mut().enumerate() {
            *o = z.iter().enumerate().map(|(i, &zi)| zi * m[i * f + j]).sum();
        }
    }

    /// One `tokens × feat` sample of class `c`.
    pub fn sample(&self, c: usize, code: &[f64], rng: &mut SplitRng) -> Vec<f32> {
        let _ = c;
        let (k, f, t) = (self.gen.latent, self.gen.feat, self.gen.tokens);
        let z: Vec<f64> = code.iter().map(|&m| m + rng.normal() * self.spec.sample_noise).collect();
        let mut base = vec![0.0; f];
        self.project(&self.mix, &z, &mut base);
        let informative: Vec<bool> = {
            let mut v = vec![false; t];
            for i in rng.choose_distinct(t, self.spec.informative) {
                v[i] = true;
            }
            v
        };
        let mut out = Vec::with_capacity(t * f);
        let mut tok = vec![0.0; f];
        for &inf in &informative {
            if inf {
                tok.copy_from_slice(&base);
            } else {
                let w: Vec<f64> = (0..k).map(|_| rng.normal()).collect();
                self.project(&self.distract_mix, &w, &mut tok);
                for (x, &m) in tok.iter_mut().zip(&self.marker) {
                    *x += m;
                }
            }
            for (j, x) in tok.iter().enumerate() {
                out.push((x + self.offset[j] + rng.normal() * self.spec.token_noise) as f32);
            }
        }
        out
    }

    /// `n` samples for each class in `classes`, in class-major order.
    pub fn generate(&self, classes: &[usize], n: usize, rng: &mut SplitRng) -> LabeledSet {
        let mut set = LabeledSet::empty(self.gen.tokens, self.gen.feat);
        for &c in classes {
            let code = self.class_code(c);
            for _ in 0..n {
                let x = self.sample(c, &code, rng);
                set.push(&x, c).expect("generator layout");
            }
        }
        set
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub train: LabeledSet,
    pub test: LabeledSet,
    /// Global class ids of the label space.
    pub classes: Vec<usize>,
    /// Source domain name.
    pub tag: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskStream {
    pub scenario: Scenario,
    pub tasks: Vec<Task>,
    /// Held-out tasks for transfer evaluation (mixed streams only).
    pub validation: Vec<Task>,
    pub descriptor: StreamConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StreamConfig {
    pub scenario: Scenario,
    pub num_classes: usize,
    pub num_tasks: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    /// Downstream class ids start here; pretext ids live below it.
    pub class_offset: usize,
    pub seed: u64,
    pub generator: GeneratorSpec,
    pub domain: DomainSpec,
    /// Extra domains for DIL (one per task beyond the first) or mixed streams.
    pub extra_domains: Vec<DomainSpec>,
    /// Mixed streams: CL tasks per domain and validation tasks per domain.
    pub tasks_per_domain: usize,
    pub validation_per_domain: usize,
    pub few_shot: usize,
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self {
            scenario: Scenario::Cil,
            num_classes: 40,
            num_tasks: 4,
            train_per_class: 500,
            test_per_class: 200,
            class_offset: 1000,
            seed: 1,
            generator: GeneratorSpec::default(),
            domain: DomainSpec::default(),
            extra_domains: Vec::new(),
            tasks_per_domain: 2,
            validation_per_domain: 2,
            few_shot: 5,
        }
    }
}

impl StreamConfig {
    pub fn downstream_classes(&self) -> Vec<usize> {
        (self.class_offset..self.class_offset + self.num_classes).collect()
    }
}

/// Builds a CIL, TIL or DIL stream over one generator.
pub fn make_stream(cfg: &StreamConfig) -> Result<TaskStream> {
    if cfg.num_tasks == 0 || cfg.num_classes == 0 {
        return Err(Error::Config("stream needs at least one task and one class".into()));
    }
    let rng = SplitRng::new(cfg.seed).fork("stream");
    let mut classes = cfg.downstream_classes();
    rng.fork("class-order").shuffle(&mut classes);
    let mut tasks = Vec::with_capacity(cfg.num_tasks);
    match cfg.scenario {
        Scenario::Cil | Scenario::Til => {
            if !cfg.num_classes.is_multiple_of(cfg.num_tasks) {
                return Err(Error::Config(format!("{} classes do not split into {} tasks", cfg.num_classes, cfg.num_tasks)));
            }
            let per = cfg.num_classes / cfg.num_tasks;
            let dom = Domain::new(&cfg.generator, &cfg.domain);
            for (i, chunk) in classes.chunks(per).enumerate() {
                let mut ys = chunk.to_vec();
                ys.sort_unstable();
                tasks.push(Task {
                    train: dom.generate(&ys, cfg.train_per_class, &mut rng.fork_idx("train", i as u64)),
                    test: dom.generate(&ys, cfg.test_per_class, &mut rng.fork_idx("test", i as u64)),
                    classes: ys,
                    tag: cfg.domain.name.clone(),
                });
            }
        }
        Scenario::Dil => {
            let mut ys = classes.clone();
            ys.sort_unstable();
            for i in 0..cfg.num_tasks {
                let spec = if i == 0 {
                    cfg.domain.clone()
                } else {
                    cfg.extra_domains.get(i - 1).cloned().unwrap_or_else(|| DomainSpec {
                        name: format!("{}{}", cfg.domain.name, i),
                        seed: cfg.domain.seed.wrapping_add(i as u64 * 7919),
                        ..cfg.domain.clone()
                    })
                };
                let dom = Domain::new(&cfg.generator, &spec);
                tasks.push(Task {
                    train: dom.generate(&ys, cfg.train_per_class, &mut rng.fork_idx("train", i as u64)),
                    test: dom.generate(&ys, cfg.test_per_class, &mut rng.fork_idx("test", i as u64)),
                    classes: ys.clone(),
                    tag: spec.name.clone(),
                });
            }
        }
    }
    Ok(TaskStream { scenario: cfg.scenario, tasks, validation: Vec::new(), descriptor: cfg.clone() })
}

/// Interleaves CL tasks from several domains (`A1, B1, A2, B2, …`) and holds
/// out validation tasks per domain. Classes of a domain are disjoint from
/// those of every other domain.
pub fn make_mixed_stream(cfg: &StreamConfig) -> Result<TaskStream> {
    let mut domains = vec![cfg.domain.clone()];
    domains.extend(cfg.extra_domains.iter().cloned());
    if domains.len() < 2 {
        return Err(Error::Config("a mixed stream needs at least two domains".into()));
    }
    if domains.iter().all(|d| d == &domains[0]) {
        let single = StreamConfig {
            scenario: Scenario::Cil,
            num_tasks: cfg.tasks_per_domain * domains.len(),
            extra_domains: Vec::new(),
            ..cfg.clone()
        };
        return make_stream(&single);
    }
    let per_domain_tasks = cfg.tasks_per_domain + cfg.validation_per_domain;
    let total = per_domain_tasks * domains.len();
    if !cfg.num_classes.is_multiple_of(total) {
        return Err(Error::Config(format!("{} classes do not split into {total} tasks", cfg.num_classes)));
    }
    let per = cfg.num_classes / total;
    let rng = SplitRng::new(cfg.seed).fork("mixed-stream");
    let mut classes = cfg.downstream_classes();
    rng.fork("class-order").shuffle(&mut classes);
    let mut chunks = classes.chunks(per);
    let mut by_domain: Vec<(Vec<Task>, Vec<Task>)> = Vec::new();
    for (di, spec) in domains.iter().enumerate() {
        let dom = Domain::new(&cfg.generator, spec);
        let mut cl = Vec::new();
        let mut val = Vec::new();
        for ti in 0..per_domain_tasks {
            let mut ys = chunks.next().expect("class count checked").to_vec();
            ys.sort_unstable();
            let key = (di * per_domain_tasks + ti) as u64;
            let task = Task {
                train: dom.generate(&ys, cfg.train_per_class, &mut rng.fork_idx("train", key)),
                test: dom.generate(&ys, cfg.test_per_class, &mut rng.fork_idx("test", key)),
                classes: ys,
                tag: spec.name.clone(),
            };
            if ti < cfg.tasks_per_domain {
                cl.push(task);
            } else {
                val.push(task);
            }
        }
        by_domain.push((cl, val));
    }
    let mut tasks = Vec::new();
    for ti in 0..cfg.tasks_per_domain {
        for (cl, _) in &by_domain {
            tasks.push(cl[ti].clone());
        }
    }
    let validation = by_domain.into_iter().flat_map(|(_, v)| v).collect();
    Ok(TaskStream { scenario: Scenario::Cil, tasks, validation, descriptor: cfg.clone() })
}

/// Few-shot copy of a task: the first `k` training samples of each class.
pub fn few_shot(task: &Task, k: usize) -> Task {
    let mut idx = Vec::new();
    for &c in &task.classes {
        idx.extend(task.train.indices_of(c).into_iter().take(k));
    }
    Task { train: task.train.subset(&idx), ..task.clone() }
}

/// Pretext data for pre-training: classes `0..num_classes` (all below the
/// downstream offset) drawn from `domain`.
pub fn make_pretext(
    gen: &GeneratorSpec,
    domain: &DomainSpec,
    num_classes: usize,
    per_class: usize,
    seed: u64,
) -> LabeledSet {
    let dom = Domain::new(gen, domain);
    let classes: Vec<usize> = (0..num_classes).collect();
    dom.generate(&classes, per_class, &mut SplitRng::new(seed).fork("pretext"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> StreamConfig {
        StreamConfig { num_classes: 12, num_tasks: 3, train_per_class: 4, test_per_class: 2, ..Default::default() }
    }

    #[test]
    fn cil_tasks_are_disjoint_and_cover() {
        let s = make_stream(&small()).unwrap();
        assert_eq!(s.tasks.len(), 3);
        let mut all: Vec<usize> = s.tasks.iter().flat_map(|t| t.classes.clone()).collect();
        assert!(s.tasks.iter().all(|t| t.classes.len() == 4));
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), 12);
        assert_eq!(s.tasks[0].train.len(), 16);
    }

    #[test]
    fn same_seed_same_stream() {
        assert_eq!(make_stream(&small()).unwrap(), make_stream(&small()).unwrap());
    }

    #[test]
    fn indivisible_split_rejected() {
        let cfg = StreamConfig { num_classes: 10, num_tasks: 3, ..small() };
        assert!(make_stream(&cfg).is_err());
    }

    #[test]
    fn dil_shares_label_space() {
        let cfg = StreamConfig { scenario: Scenario::Dil, ..small() };
        let s = make_stream(&cfg).unwrap();
        assert!(s.tasks.iter().all(|t| t.classes == s.tasks[0].classes));
        assert_ne!(s.tasks[0].tag, s.tasks[1].tag);
    }

    #[test]
    fn mixed_stream_layout() {
        let b = DomainSpec { name: "B".into(), seed: 99, ..DomainSpec::default() };
        let cfg = StreamConfig { num_classes: 16, extra_domains: vec![b], ..small() };
        let s = make_mixed_stream(&cfg).unwrap();
        let tags: Vec<&str> = s.tasks.iter().map(|t| t.tag.as_str()).collect();
        assert_eq!(tags, vec!["A", "B", "A", "B"]);
        assert_eq!(s.validation.len(), 4);
        let f = few_shot(&s.validation[0], 1);
        assert_eq!(f.train.len(), s.validation[0].classes.len());
    }

    #[test]
    fn mixed_needs_two_domains() {
        assert!(make_mixed_stream(&small()).is_err());
    }

    #[test]
    fn identical_domains_degenerate_to_plain_stream() {
        let cfg = StreamConfig { num_classes: 16, extra_domains: vec![DomainSpec::default()], ..small() };
        let s = make_mixed_stream(&cfg).unwrap();
        assert!(s.validation.is_empty());
        assert_eq!(s.tasks.len(), 4);
    }
}
