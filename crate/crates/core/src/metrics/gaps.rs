use serde::{Deserialize, Serialize};

use crate::model::{Category, CompositionStats};

/// Ratio cut-offs for benchmark profiling advisories.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapThresholds {
    /// Fires when the LLM-answerable ratio exceeds this.
    pub alpha_high: f64,
    /// Fires when the semantic ratio exceeds this.
    pub beta_high: f64,
    /// Fires when the temporal ratio falls below this.
    pub gamma_low: f64,
}

impl Default for GapThresholds {
    fn default() -> Self {
        Self { alpha_high: 0.30, beta_high: 0.35, gamma_low: 0.10 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FindingKind {
    HighAlpha,
    HighBeta,
    LowGamma,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Finding {
    pub kind: FindingKind,
    pub ratio: f64,
    pub threshold: f64,
    pub message: String,
}

pub fn profile_gaps(stats: &CompositionStats, t: &GapThresholds) -> Vec<Finding> {
    let mut out = Vec::new();
    let alpha = stats.ratio(Category::LlmAnswerable);
    let beta = stats.ratio(Category::Semantic);
    let gamma = stats.ratio(Category::Temporal);
    if alpha > t.alpha_high {
        out.push(Finding {
            kind: FindingKind::HighAlpha,
            ratio: alpha,
            threshold: t.alpha_high,
            message: "many questions are answerable from text alone; scores may not reflect use of the video".into(),
        });
    }
    if beta > t.beta_high {
        out.push(Finding {
            kind: FindingKind::HighBeta,
            ratio: beta,
            threshold: t.beta_high,
            message: "frame order rarely matters; high scores may overstate temporal understanding".into(),
        });
    }
    if gamma < t.gamma_low {
        out.push(Finding {
            kind: FindingKind::LowGamma,
            ratio: gamma,
            threshold: t.gamma_low,
            message: "few order-dependent questions; reasoning about events over time is under-tested".into(),
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::make_composition;
    use std::collections::BTreeMap;

    fn stats(c: [u64; 4]) -> CompositionStats {
        let m: BTreeMap<Category, u64> = Category::ALL.iter().copied().zip(c).collect();
        make_composition(&m).unwrap()
    }

    #[test]
    fn uniform_fires_nothing() {
        assert!(profile_gaps(&stats([1, 1, 1, 1]), &GapThresholds::default()).is_empty());
    }

    #[test]
    fn thresholds_are_configurable() {
        let t = GapThresholds { alpha_high: 0.2, beta_high: 0.2, gamma_low: 0.3 };
        let kinds: Vec<_> = profile_gaps(&stats([1, 1, 1, 1]), &t).into_iter().map(|f| f.kind).collect();
        assert_eq!(kinds, [FindingKind::HighAlpha, FindingKind::HighBeta, FindingKind::LowGamma]);
    }
}
