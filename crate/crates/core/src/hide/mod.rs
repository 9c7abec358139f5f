//! The hierarchical continual learner: within-task prediction with
//! task-specific PET sets, task-identity inference from uninstructed
//! representations, and task-adaptive prediction over all seen classes, with
//! the latter two heads fed by recovered representation statistics.

pub mod engine;
pub mod persist;
pub mod stats;
pub mod train;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use engine::{evaluate, EvalCache, HeadBranch, HideState, Registry, RepState, StageEval, TaskReps};
pub use stats::{fit_stats, Fitted, Recovery, RepStats};
pub use train::{fit_pet, wtp_loss, FitJob};

/// How the shared PET set `g` evolves across tasks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SharedStrategy {
    /// Fix the set for the first half of each task's epochs, then tune it slowly.
    #[serde(rename = "f&t")]
    FixTune,
    /// Adapt on the first task only.
    #[serde(rename = "fsa")]
    Fsa,
    /// Small learning rate on every task.
    #[serde(rename = "sl")]
    Sl,
    /// Train an interim copy each task and blend it in by momentum.
    #[serde(rename = "ema")]
    Ema,
    /// Large learning rate on the first task, small afterwards.
    #[serde(rename = "fsa+sl")]
    FsaSl,
}

impl SharedStrategy {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "f&t" | "ft" | "fix-tune" => Ok(Self::FixTune),
            "fsa" => Ok(Self::Fsa),
            "sl" => Ok(Self::Sl),
            "ema" => Ok(Self::Ema),
            "fsa+sl" | "fsa-sl" => Ok(Self::FsaSl),
            other => Err(Error::Config(format!("unknown shared strategy {other:?}"))),
        }
    }

    pub fn all() -> [SharedStrategy; 5] {
        [Self::FixTune, Self::Fsa, Self::Sl, Self::Ema, Self::FsaSl]
    }

    pub fn tag(self) -> &'static str {
        match self {
            Self::FixTune => "f&t",
            Self::Fsa => "fsa",
            Self::Sl => "sl",
            Self::Ema => "ema",
            Self::FsaSl => "fsa+sl",
        }
    }
}

/// Source of the task identity used at inference.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TiiMode {
    /// Nearest stored task key (mean plain-backbone representation).
    Key,
    /// Learned task head on uninstructed representations.
    Learned,
    /// Ground-truth task id (task-incremental evaluation).
    Oracle,
}

/// Progressive component sets, from naive prompting to the full method.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ladder {
    Naive,
    Wtp,
    WtpTii,
    WtpTap,
    Full,
}

impl Ladder {
    pub fn all() -> [Ladder; 5] {
        [Self::Naive, Self::Wtp, Self::WtpTii, Self::WtpTap, Self::Full]
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('+', "-").as_str() {
            "naive" => Ok(Self::Naive),
            "wtp" => Ok(Self::Wtp),
            "wtp-tii" => Ok(Self::WtpTii),
            "wtp-tap" => Ok(Self::WtpTap),
            "full" => Ok(Self::Full),
            other => Err(Error::Config(format!("unknown ladder rung {other:?}"))),
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Self::Naive => "naive",
            Self::Wtp => "wtp",
            Self::WtpTii => "wtp+tii",
            Self::WtpTap => "wtp+tap",
            Self::Full => "full",
        }
    }

    /// Whether this rung trains its task sets with ensemble initialization
    /// and the task-local loss (every rung except the naive one).
    pub fn hierarchical_wtp(self) -> bool {
        self != Self::Naive
    }

    pub fn tii(self) -> TiiMode {
        match self {
            Self::WtpTii | Self::Full => TiiMode::Learned,
            _ => TiiMode::Key,
        }
    }

    pub fn tap(self) -> bool {
        matches!(self, Self::WtpTap | Self::Full)
    }

    /// Whether the final prediction ranges over every seen class.
    pub fn all_classes(self) -> bool {
        matches!(self, Self::Naive | Self::WtpTap | Self::Full)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HideConfig {
    /// Representation epochs per task.
    pub epochs: usize,
    /// Epochs of the statistics-fed heads per task.
    pub head_epochs: usize,
    pub batch_size: usize,
    pub head_batch_size: usize,
    /// Learning rate of task sets and the within-task head.
    pub lr_e: f64,
    pub lr_head: f64,
    /// Shared-set rates: first-session / regular and slow.
    pub lr_big: f64,
    pub lr_small: f64,
    pub ema_momentum: f64,
    /// Ensemble-initialization weight.
    pub alpha: f64,
    /// Pseudo-representations drawn per class per head epoch.
    pub samples_per_class: usize,
    pub strategy: SharedStrategy,
    pub recovery: Recovery,
    pub ladder: Ladder,
}

impl Default for HideConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            head_epochs: 20,
            batch_size: 32,
            head_batch_size: 128,
            lr_e: 1e-2,
            lr_head: 1e-2,
            lr_big: 1e-2,
            lr_small: 1e-3,
            ema_momentum: 0.1,
            alpha: 0.1,
            samples_per_class: 64,
            strategy: SharedStrategy::FsaSl,
            recovery: Recovery::MultiCentroid,
            ladder: Ladder::Full,
        }
    }
}

impl HideConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.head_batch_size == 0 {
            return Err(Error::Config("epochs and batch sizes must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.alpha) || !(0.0..=1.0).contains(&self.ema_momentum) {
            return Err(Error::Config("alpha and EMA momentum must lie in [0, 1]".into()));
        }
        for lr in [self.lr_e, self.lr_head, self.lr_big, self.lr_small] {
            if !(lr.is_finite() && lr > 0.0) {
                return Err(Error::Config(format!("learning rate {lr} must be positive")));
            }
        }
        if self.recovery == Recovery::None && self.ladder.tap() && self.samples_per_class == 0 {
            return Err(Error::Config("adaptive heads need samples per class".into()));
        }
        Ok(())
    }

    /// Learning rate and number of head-only warm-up epochs of the shared set
    /// on task `task` (zero-based), or `None` when it stays fixed.
    pub fn shared_schedule(&self, task: usize) -> Option<(f64, usize)> {
        match self.strategy {
            SharedStrategy::Fsa => (task == 0).then_some((self.lr_big, 0)),
            SharedStrategy::Sl => Some((self.lr_small, 0)),
            SharedStrategy::FsaSl => Some((if task == 0 { self.lr_big } else { self.lr_small }, 0)),
            SharedStrategy::FixTune => Some((self.lr_small, self.epochs / 2)),
            SharedStrategy::Ema => Some((self.lr_big, 0)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strategy_tags_round_trip() {
        for s in SharedStrategy::all() {
            assert_eq!(SharedStrategy::parse(s.tag()).unwrap(), s);
            let j = serde_json::to_string(&s).unwrap();
            assert_eq!(j, format!("\"{}\"", s.tag()));
        }
        for l in Ladder::all() {
            assert_eq!(Ladder::parse(l.tag()).unwrap(), l);
        }
    }

    #[test]
    fn schedules() {
        let c = HideConfig::default();
        let at = |s, t| HideConfig { strategy: s, ..c.clone() }.shared_schedule(t);
        assert_eq!(at(SharedStrategy::Fsa, 1), None);
        assert_eq!(at(SharedStrategy::FsaSl, 0), Some((c.lr_big, 0)));
        assert_eq!(at(SharedStrategy::FsaSl, 2), Some((c.lr_small, 0)));
        assert_eq!(at(SharedStrategy::FixTune, 0), Some((c.lr_small, c.epochs / 2)));
    }

    #[test]
    fn bad_alpha_rejected() {
        assert!(HideConfig { alpha: 1.5, ..Default::default() }.validate().is_err());
    }
}
