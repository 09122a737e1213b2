//! Similarity computation: raw cosines of generated pairs mapped to the score
//! sets entering the loss. Margins act on positive classification-view scores
//! only; negatives always pass through as plain cosines.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pairgen::{ClassWeightMatrix, LabeledBatch, PairIndexSet, PairKind, PairOrigin};
use crate::sphere::{cos_sim, Angle};

/// Floor on `sin θ` in the ArcFace chain factor.
pub const SIN_FLOOR: f64 = 1e-7;

/// Reference margin for the CosFace and ArcFace variants.
pub const DEFAULT_MARGIN: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarginVariant {
    /// Plain cosine, no margin.
    Snpair,
    /// Additive cosine margin: `cos θ − m`.
    Cosface,
    /// Additive angular margin: `cos(θ + m)`.
    Arcface,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarginConfig {
    pub variant: MarginVariant,
    pub m: f64,
}

impl Default for MarginConfig {
    fn default() -> Self {
        Self {
            variant: MarginVariant::Arcface,
            m: DEFAULT_MARGIN,
        }
    }
}

impl MarginConfig {
    pub fn snpair() -> Self {
        Self {
            variant: MarginVariant::Snpair,
            m: 0.0,
        }
    }

    pub fn cosface(m: f64) -> Self {
        Self {
            variant: MarginVariant::Cosface,
            m,
        }
    }

    pub fn arcface(m: f64) -> Self {
        Self {
            variant: MarginVariant::Arcface,
            m,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.m.is_finite() && self.m >= 0.0) {
            return Err(Error::config(
                "margin.m",
                format!("must be >= 0, got {}", self.m),
            ));
        }
        match self.variant {
            MarginVariant::Arcface if self.m >= PI => Err(Error::config(
                "margin.m",
                format!("arcface margin must be < pi, got {}", self.m),
            )),
            MarginVariant::Snpair if self.m != 0.0 => Err(Error::config(
                "margin.m",
                "snpair takes no margin; set m = 0",
            )),
            _ => Ok(()),
        }
    }

    /// Margin-adjusted score of a positive pair with cosine `cos`.
    pub fn positive_score(&self, cos: f64) -> f64 {
        match self.variant {
            MarginVariant::Snpair => cos,
            MarginVariant::Cosface => sc_cosface(cos, self.m),
            MarginVariant::Arcface => sc_arcface(Angle::from_cos(cos), self.m),
        }
    }

    /// `d positive_score / d cos`.
    pub fn positive_chain(&self, cos: f64) -> f64 {
        match self.variant {
            MarginVariant::Snpair | MarginVariant::Cosface => 1.0,
            MarginVariant::Arcface => arcface_chain_factor(Angle::from_cos(cos), self.m),
        }
    }
}

pub fn sc_cosface(positive_cos: f64, m: f64) -> f64 {
    positive_cos - m
}

/// `cos(min(θ + m, π))`.
pub fn sc_arcface(positive_angle: Angle, m: f64) -> f64 {
    (positive_angle.radians() + m).min(PI).cos()
}

/// Derivative of [`sc_arcface`] with respect to `cos θ`: `sin(θ+m) / sin θ`,
/// with `sin θ` floored at [`SIN_FLOOR`]. Zero once `θ + m` reaches π, where
/// the score is clamped to −1.
pub fn arcface_chain_factor(theta: Angle, m: f64) -> f64 {
    let shifted = theta.radians() + m;
    if shifted >= PI {
        return 0.0;
    }
    shifted.sin() / theta.radians().sin().max(SIN_FLOOR)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NegativeScore {
    pub score: f64,
    pub origin: PairOrigin,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreSets {
    pub positive_scores: Vec<f64>,
    pub negative_scores: Vec<NegativeScore>,
}

/// Scores every pair of `pairs`, in order. Classification-view pairs need
/// `weights`; the margin applies to classification-view positives.
pub fn score_pairs(
    pairs: &PairIndexSet,
    batch: &LabeledBatch,
    weights: Option<&ClassWeightMatrix>,
    margin: &MarginConfig,
) -> Result<ScoreSets> {
    let mut out = ScoreSets::default();
    let samples = batch.embeddings();
    for p in pairs {
        let left = samples.get(p.left).ok_or_else(|| {
            Error::InsufficientData(format!("pair index {} outside batch", p.left))
        })?;
        let cos = match p.origin {
            PairOrigin::Ml => {
                let right = samples.get(p.right).ok_or_else(|| {
                    Error::InsufficientData(format!("pair index {} outside batch", p.right))
                })?;
                cos_sim(left, right)?
            }
            PairOrigin::Cl => {
                let w = weights.ok_or(Error::OriginMismatch(
                    "classification pairs need class weights",
                ))?;
                let row = w.rows().get(p.right).ok_or(Error::LabelOutOfRange {
                    label: p.right,
                    num_classes: w.num_classes(),
                })?;
                cos_sim(left, row)?
            }
        };
        match (p.kind, p.origin) {
            (PairKind::Positive, PairOrigin::Cl) => {
                out.positive_scores.push(margin.positive_score(cos))
            }
            (PairKind::Positive, PairOrigin::Ml) => out.positive_scores.push(cos),
            (PairKind::Negative, origin) => out
                .negative_scores
                .push(NegativeScore { score: cos, origin }),
        }
    }
    Ok(out)
}

/// Metric-view scoring without margin.
pub fn sc_snpair(pairs: &PairIndexSet, batch: &LabeledBatch) -> Result<ScoreSets> {
    if pairs.iter().any(|p| p.origin != PairOrigin::Ml) {
        return Err(Error::OriginMismatch(
            "snpair scoring takes metric-view pairs only",
        ));
    }
    score_pairs(pairs, batch, None, &MarginConfig::snpair())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pairgen::{clpg, mlpg};
    use crate::sphere::{normalize, RawVector, UnitVector};

    #[test]
    fn cosface_examples() {
        assert!((sc_cosface(0.7, 0.5) - 0.2).abs() < 1e-15);
        assert_eq!(sc_cosface(0.3, 0.0), 0.3);
        assert_eq!(sc_cosface(-1.0, 0.5), -1.5);
    }

    #[test]
    fn arcface_examples() {
        let a = Angle::new(PI / 2.0 - 0.5).unwrap();
        assert!(sc_arcface(a, 0.5).abs() < 1e-15);
        let b = Angle::new(1.1).unwrap();
        assert_eq!(sc_arcface(b, 0.0), 1.1f64.cos());
        assert_eq!(sc_arcface(Angle::new(3.0).unwrap(), 0.5), -1.0);
    }

    #[test]
    fn chain_factor_examples() {
        assert!((arcface_chain_factor(Angle::new(1.0).unwrap(), 0.0) - 1.0).abs() < 1e-15);
        // sin(pi/2 + 0.5) = cos(0.5) = 0.8775825618903728
        let f = arcface_chain_factor(Angle::new(PI / 2.0).unwrap(), 0.5);
        assert!((f - 0.877_582_561_890_372_8).abs() < 1e-15);
        let g = arcface_chain_factor(Angle::new(0.0).unwrap(), 0.5);
        assert!(g.is_finite());
        assert!((g - 0.5f64.sin() / SIN_FLOOR).abs() < 1e-6);
        assert_eq!(arcface_chain_factor(Angle::new(3.0).unwrap(), 0.5), 0.0);
    }

    #[test]
    fn margin_validation() {
        assert!(MarginConfig::arcface(0.5).validate().is_ok());
        assert!(MarginConfig::arcface(PI).validate().is_err());
        assert!(MarginConfig::cosface(-0.1).validate().is_err());
        assert!(MarginConfig::cosface(f64::NAN).validate().is_err());
        assert!(MarginConfig {
            variant: MarginVariant::Snpair,
            m: 0.2
        }
        .validate()
        .is_err());
    }

    #[test]
    fn zero_margin_variants_agree() {
        for &c in &[-1.0, -0.3, 0.0, 0.42, 0.999, 1.0] {
            let s = MarginConfig::snpair().positive_score(c);
            assert!((MarginConfig::cosface(0.0).positive_score(c) - s).abs() < 1e-12);
            assert!((MarginConfig::arcface(0.0).positive_score(c) - s).abs() < 1e-12);
        }
    }

    fn unit(v: &[f64]) -> UnitVector {
        normalize(&RawVector::new(v.to_vec()).unwrap()).unwrap()
    }

    #[test]
    fn snpair_scores() {
        let batch = LabeledBatch::new(
            vec![unit(&[1.0, 0.0]), unit(&[1.0, 0.0]), unit(&[0.0, 1.0])],
            vec![0, 0, 1],
            2,
        )
        .unwrap();
        let (pos, neg) = mlpg(&batch);
        let p = sc_snpair(&pos, &batch).unwrap();
        assert_eq!(p.positive_scores, vec![1.0]);
        let n = sc_snpair(&neg, &batch).unwrap();
        assert!(n
            .negative_scores
            .iter()
            .all(|s| s.score == 0.0 && s.origin == PairOrigin::Ml));
    }

    #[test]
    fn snpair_rejects_cl_pairs() {
        let batch =
            LabeledBatch::new(vec![unit(&[1.0, 0.0]), unit(&[0.0, 1.0])], vec![0, 1], 2).unwrap();
        let (pos, _) = clpg(0, &batch, 2).unwrap();
        assert!(matches!(
            sc_snpair(&pos, &batch),
            Err(Error::OriginMismatch(_))
        ));
    }

    #[test]
    fn cl_positive_gets_margin() {
        let batch =
            LabeledBatch::new(vec![unit(&[1.0, 0.0]), unit(&[0.0, 1.0])], vec![0, 1], 2).unwrap();
        let w = ClassWeightMatrix::new(vec![unit(&[1.0, 1.0]), unit(&[-1.0, 0.0])]).unwrap();
        let (pos, neg) = clpg(0, &batch, 2).unwrap();
        let m = MarginConfig::cosface(0.5);
        let p = score_pairs(&pos, &batch, Some(&w), &m).unwrap();
        assert!((p.positive_scores[0] - (std::f64::consts::FRAC_1_SQRT_2 - 0.5)).abs() < 1e-15);
        let n = score_pairs(&neg, &batch, Some(&w), &m).unwrap();
        assert_eq!(n.negative_scores[0].score, -1.0);
        assert!(score_pairs(&pos, &batch, None, &m).is_err());
    }
}
