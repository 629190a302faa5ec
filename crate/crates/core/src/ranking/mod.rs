//! Score head, pairwise ranking loss, pair sampling, optimizer, training
//! loop, and the ablation switchboard.

mod model;
mod params;
mod train;

pub use model::{grad_check_score, item_from_post, item_from_topic, pair_loss_for_check, ItemInput, Model};
pub use params::{param_specs, ParamSet, ParamSpec, CHECKPOINT_MAGIC};
pub use train::{train, Adam, EpochStats, TrainConfig};

use crate::data::TopicPostRecord;
use crate::error::{Error, Result};
use rand::seq::SliceRandom;
use rand::Rng;

/// Which feature branches feed the score head. `use_local`/`use_global`
/// select the scales inside the semantic path; `use_sig`/`use_tpl` select
/// the evidence levels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AblationMask {
    pub use_semantic: bool,
    pub use_local: bool,
    pub use_global: bool,
    pub use_evidence: bool,
    pub use_sig: bool,
    pub use_tpl: bool,
}

impl Default for AblationMask {
    fn default() -> Self {
        AblationMask::full()
    }
}

impl AblationMask {
    pub fn full() -> Self {
        AblationMask {
            use_semantic: true,
            use_local: true,
            use_global: true,
            use_evidence: true,
            use_sig: true,
            use_tpl: true,
        }
    }

    /// The seven standard variants: the full model plus one row per
    /// removed module or branch.
    pub const VARIANT_NAMES: [&'static str; 7] = [
        "none",
        "wo-evidence",
        "wo-evidence-1",
        "wo-evidence-2",
        "wo-semantic",
        "wo-local",
        "wo-global",
    ];

    pub fn variant(name: &str) -> Result<Self> {
        let mut m = AblationMask::full();
        match name {
            "none" => {}
            "wo-evidence" => {
                m.use_evidence = false;
                m.use_sig = false;
                m.use_tpl = false;
            }
            "wo-evidence-1" => m.use_sig = false,
            "wo-evidence-2" => m.use_tpl = false,
            "wo-semantic" => {
                m.use_semantic = false;
                m.use_local = false;
                m.use_global = false;
            }
            "wo-local" => m.use_local = false,
            "wo-global" => m.use_global = false,
            other => return Err(Error::invalid(format!("unknown ablation variant {other:?}"))),
        }
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.use_semantic && !self.use_evidence {
            return Err(Error::invalid("ablation mask disables every feature source"));
        }
        if self.use_semantic && !self.use_local && !self.use_global {
            return Err(Error::invalid("semantic path enabled but both scales disabled"));
        }
        if !self.use_evidence && (self.use_sig || self.use_tpl) {
            return Err(Error::invalid("use_evidence=false forces use_sig and use_tpl off"));
        }
        if self.use_evidence && !self.use_sig && !self.use_tpl {
            return Err(Error::invalid("evidence path enabled but both levels disabled"));
        }
        Ok(())
    }

    /// Head blocks in order: pooled M̂, G_SIG, G_TPL.
    pub fn head_blocks(&self) -> [bool; 3] {
        [
            self.use_semantic,
            self.use_evidence && self.use_sig,
            self.use_evidence && self.use_tpl,
        ]
    }

    /// Width of the masked score-head input.
    pub fn feature_width(&self, d_c: usize) -> usize {
        self.head_blocks().iter().filter(|&&b| b).count() * d_c
    }

    /// Parameter paths that never execute under this mask. The latent
    /// projections stay enabled as long as anything runs: both branches
    /// consume the latent bundle.
    pub(crate) fn path_disabled(&self, path: &str) -> bool {
        if path.starts_with("semantic.gate.") {
            return if path.starts_with("semantic.gate.ss.") {
                !(self.use_semantic && self.use_global)
            } else {
                !(self.use_semantic && self.use_local)
            };
        }
        if path.starts_with("evidence.macro.") {
            return !(self.use_evidence && self.use_sig);
        }
        if path.starts_with("evidence.") {
            return !(self.use_evidence && self.use_tpl);
        }
        false
    }
}

/// Rebuild a full parameter set for an ablation mask: disabled-branch
/// tensors are dropped and the score head is cut down to the masked
/// feature width (keeping the rows of the enabled blocks). The full mask
/// is the identity.
pub fn apply_ablation(params: &ParamSet, mask: AblationMask, d_c: usize) -> Result<ParamSet> {
    mask.validate()?;
    let full_width = 3 * d_c;
    let head = params
        .get("head.weight")
        .ok_or_else(|| Error::invalid("parameter set has no head.weight"))?;
    if head.shape() != [full_width, 1] {
        return Err(Error::invalid(format!(
            "apply_ablation expects a full-width head, got {:?}",
            head.shape()
        )));
    }
    let blocks = mask.head_blocks();
    let mut rows = Vec::with_capacity(mask.feature_width(d_c));
    for (b, &enabled) in blocks.iter().enumerate() {
        if enabled {
            for r in 0..d_c {
                rows.push(head.at(b * d_c + r, 0));
            }
        }
    }
    let new_head = crate::numerics::Tensor::new(vec![rows.len(), 1], rows)?;
    Ok(params.filtered_map(
        |p| !mask.path_disabled(p),
        |p, t| if p == "head.weight" { new_head.clone() } else { t.clone() },
    ))
}

/// Hinge loss of one ordered pair: max(0, γ - s_pos + s_neg).
pub fn pairwise_hinge_loss(s_pos: f64, s_neg: f64, gamma: f64) -> f64 {
    (gamma - s_pos + s_neg).max(0.0)
}

/// One training pair: indices of the topic and of two posts with
/// label(pos) > label(neg).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairIdx {
    pub topic: usize,
    pub pos: usize,
    pub neg: usize,
}

/// Enumerate every strictly ordered post pair within each listed topic,
/// then shuffle. Topics with uniform labels contribute nothing.
pub fn sample_pairs(
    records: &[TopicPostRecord],
    topic_indices: &[usize],
    rng: &mut impl Rng,
) -> Vec<PairIdx> {
    let mut pairs = Vec::new();
    for &t in topic_indices {
        let posts = &records[t].posts;
        for i in 0..posts.len() {
            for j in 0..posts.len() {
                if posts[i].label > posts[j].label {
                    pairs.push(PairIdx { topic: t, pos: i, neg: j });
                }
            }
        }
    }
    pairs.shuffle(rng);
    pairs
}
