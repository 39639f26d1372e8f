//! Reward stack: detection reward, semantic-alignment reward, the combined
//! concept-erasure reward and the non-target-space reward with its
//! distribution-anchor penalty.

use std::collections::BTreeSet;

use crate::data::ConceptPrompt;
use crate::error::{Error, Result};
use crate::perception::{Detector, DetectorScores, Embedder, SimRef};

/// Which reward path produced a sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathTag {
    Ce,
    Ns,
}

impl std::fmt::Display for PathTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PathTag::Ce => write!(f, "CE"),
            PathTag::Ns => write!(f, "NS"),
        }
    }
}

/// Reward weights and the erase set.
#[derive(Debug, Clone)]
pub struct RewardConfig {
    /// Neutral-score weight.
    pub alpha: f64,
    /// Sensitive-score weight (typically negative).
    pub beta: f64,
    /// Semantic-alignment weight in the combined CE reward.
    pub gamma: f64,
    /// Distribution-anchor penalty weight (>= 0).
    pub lambda: f64,
    pub erase_set: BTreeSet<usize>,
    /// On: detector terms + alignment (sensitive concepts). Off: alignment
    /// alone (object/style concepts).
    pub sensitive_mode: bool,
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda < 0.0 {
            return Err(Error::InvalidArg(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        Ok(())
    }
}

/// Scalar reward with its component breakdown; the scalar always equals the
/// configured recombination of the components.
#[derive(Debug, Clone, Copy)]
pub struct RewardSample {
    pub path: PathTag,
    pub reward: f64,
    pub r_nd: f64,
    pub r_sa: f64,
    pub anchor: f64,
}

/// Detection reward: alpha * lab_n + beta * lab_p.
pub fn reward_nd(scores: DetectorScores, cfg: &RewardConfig) -> f64 {
    cfg.alpha * scores.lab_n + cfg.beta * scores.lab_p
}

/// Semantic-alignment reward: similarity to the safe counterpart prompt.
/// Guards against being handed an erased-concept prompt.
pub fn reward_sa(x0: &[f64], c_top: ConceptPrompt, e: &Embedder, cfg: &RewardConfig) -> Result<f64> {
    if let Some(k) = c_top.concept {
        if cfg.erase_set.contains(&k) {
            return Err(Error::InvalidArg(format!(
                "alignment prompt names erased concept {k}"
            )));
        }
    }
    e.similarity(x0, SimRef::Prompt(c_top))
}

/// Concept-erasure reward on a prompt pair (c in the erase set, c_top safe).
/// Sensitive mode combines detection and alignment; otherwise the reward is
/// the alignment term alone.
pub fn reward_ce(
    x0: &[f64],
    pair: (ConceptPrompt, ConceptPrompt),
    d: &Detector,
    e: &Embedder,
    cfg: &RewardConfig,
) -> Result<RewardSample> {
    let (c, c_top) = pair;
    match c.concept {
        Some(k) if cfg.erase_set.contains(&k) => {}
        _ => {
            return Err(Error::InvalidArg(format!(
                "CE reward prompt {:?} is not in the erase set",
                c.concept
            )))
        }
    }
    let r_sa = reward_sa(x0, c_top, e, cfg)?;
    if cfg.sensitive_mode {
        let scores = d.detect(x0)?;
        let r_nd = reward_nd(scores, cfg);
        Ok(RewardSample {
            path: PathTag::Ce,
            reward: r_nd + cfg.gamma * r_sa,
            r_nd,
            r_sa,
            anchor: 0.0,
        })
    } else {
        Ok(RewardSample {
            path: PathTag::Ce,
            reward: r_sa,
            r_nd: 0.0,
            r_sa,
            anchor: 0.0,
        })
    }
}

/// Non-target-space reward: alignment to the retain prompt minus the
/// distribution-anchor penalty lambda * (1 - cos(x0, x_r)).
pub fn reward_ns(
    x0: &[f64],
    c: ConceptPrompt,
    x_r: &[f64],
    e: &Embedder,
    cfg: &RewardConfig,
) -> Result<RewardSample> {
    if let Some(k) = c.concept {
        if cfg.erase_set.contains(&k) {
            return Err(Error::InvalidArg(format!(
                "NS reward prompt names erased concept {k}"
            )));
        }
    }
    let r_sa = e.similarity(x0, SimRef::Prompt(c))?;
    let drift = 1.0 - e.similarity(x0, SimRef::Sample(x_r))?;
    let anchor = cfg.lambda * drift;
    Ok(RewardSample {
        path: PathTag::Ns,
        reward: r_sa - anchor,
        r_nd: 0.0,
        r_sa,
        anchor,
    })
}
