//! Pair generation: metric-view pairs between batch samples, classification-view
//! pairs between a sample and the class weights, their negative union, and the
//! box-and-whisker filter applied to metric-view negatives.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sphere::UnitVector;

/// A mini-batch of unit embeddings with class labels in `[0, num_classes)`.
#[derive(Debug, Clone)]
pub struct LabeledBatch {
    embeddings: Vec<UnitVector>,
    labels: Vec<usize>,
    num_classes: usize,
}

impl LabeledBatch {
    pub fn new(
        embeddings: Vec<UnitVector>,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        if embeddings.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: embeddings.len(),
                found: labels.len(),
            });
        }
        if embeddings.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "batch needs at least 2 samples, got {}",
                embeddings.len()
            )));
        }
        if let Some(&label) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::LabelOutOfRange { label, num_classes });
        }
        let dim = embeddings[0].dim();
        if let Some(e) = embeddings.iter().find(|e| e.dim() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: e.dim(),
            });
        }
        Ok(Self {
            embeddings,
            labels,
            num_classes,
        })
    }

    pub fn embeddings(&self) -> &[UnitVector] {
        &self.embeddings
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.embeddings[0].dim()
    }
}

/// One unit-norm weight vector per class.
#[derive(Debug, Clone)]
pub struct ClassWeightMatrix {
    weights: Vec<UnitVector>,
}

impl ClassWeightMatrix {
    pub fn new(weights: Vec<UnitVector>) -> Result<Self> {
        if weights.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "need at least 2 classes, got {}",
                weights.len()
            )));
        }
        let dim = weights[0].dim();
        if let Some(w) = weights.iter().find(|w| w.dim() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: w.dim(),
            });
        }
        Ok(Self { weights })
    }

    pub fn rows(&self) -> &[UnitVector] {
        &self.weights
    }

    pub fn num_classes(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.weights[0].dim()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairKind {
    Positive,
    Negative,
}

/// Where a pair came from: two batch samples (`Ml`) or a sample and a class row (`Cl`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairOrigin {
    Ml,
    Cl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Pair {
    pub left: usize,
    pub right: usize,
    pub kind: PairKind,
    pub origin: PairOrigin,
}

/// An ordered list of tagged index pairs.
///
/// Metric-view pairs are stored as `left < right`; classification-view pairs
/// have `left` addressing a batch sample and `right` a class row.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PairIndexSet {
    pairs: Vec<Pair>,
}

impl PairIndexSet {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn pairs(&self) -> &[Pair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Pair> {
        self.pairs.iter()
    }

    fn all_origin(&self, origin: PairOrigin) -> bool {
        self.pairs.iter().all(|p| p.origin == origin)
    }

    /// Keeps the pairs whose mask entry is `true`.
    pub fn retain_mask(&self, mask: &[bool]) -> Result<PairIndexSet> {
        if mask.len() != self.pairs.len() {
            return Err(Error::DimensionMismatch {
                expected: self.pairs.len(),
                found: mask.len(),
            });
        }
        Ok(PairIndexSet {
            pairs: self
                .pairs
                .iter()
                .zip(mask)
                .filter_map(|(p, &keep)| keep.then_some(*p))
                .collect(),
        })
    }
}

impl<'a> IntoIterator for &'a PairIndexSet {
    type Item = &'a Pair;
    type IntoIter = std::slice::Iter<'a, Pair>;

    fn into_iter(self) -> Self::IntoIter {
        self.pairs.iter()
    }
}

/// Metric-view pair generation over a batch.
pub fn mlpg(batch: &LabeledBatch) -> (PairIndexSet, PairIndexSet) {
    mlpg_labels(batch.labels())
}

/// [`mlpg`] on bare labels.
pub fn mlpg_labels(labels: &[usize]) -> (PairIndexSet, PairIndexSet) {
    let mut positives = Vec::new();
    let mut negatives = Vec::new();
    for i in 0..labels.len() {
        for j in (i + 1)..labels.len() {
            let same = labels[i] == labels[j];
            let pair = Pair {
                left: i,
                right: j,
                kind: if same {
                    PairKind::Positive
                } else {
                    PairKind::Negative
                },
                origin: PairOrigin::Ml,
            };
            if same {
                positives.push(pair);
            } else {
                negatives.push(pair);
            }
        }
    }
    (
        PairIndexSet { pairs: positives },
        PairIndexSet { pairs: negatives },
    )
}

/// Classification-view pair generation for one anchor.
pub fn clpg(
    anchor: usize,
    batch: &LabeledBatch,
    num_classes: usize,
) -> Result<(PairIndexSet, PairIndexSet)> {
    let y = *batch
        .labels()
        .get(anchor)
        .ok_or(Error::InsufficientData(format!(
            "anchor {anchor} outside batch of {}",
            batch.len()
        )))?;
    clpg_label(anchor, y, num_classes)
}

pub(crate) fn clpg_label(
    anchor: usize,
    label: usize,
    num_classes: usize,
) -> Result<(PairIndexSet, PairIndexSet)> {
    if label >= num_classes {
        return Err(Error::LabelOutOfRange { label, num_classes });
    }
    let positive = PairIndexSet {
        pairs: vec![Pair {
            left: anchor,
            right: label,
            kind: PairKind::Positive,
            origin: PairOrigin::Cl,
        }],
    };
    let negatives = PairIndexSet {
        pairs: (0..num_classes)
            .filter(|&j| j != label)
            .map(|j| Pair {
                left: anchor,
                right: j,
                kind: PairKind::Negative,
                origin: PairOrigin::Cl,
            })
            .collect(),
    };
    Ok((positive, negatives))
}

/// How the lower and upper quartiles are read off the sorted similarity list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuartileMethod {
    /// Linear interpolation at positions `0.25(n−1)` and `0.75(n−1)`.
    #[default]
    Linear,
    /// Medians of the lower and upper halves, the middle element shared when `n` is odd.
    TukeyHinges,
}

pub const DEFAULT_QUARTILE_METHOD: QuartileMethod = QuartileMethod::Linear;

/// Whisker sizes documented as the two reference choices.
pub const WHISKER_CHOICES: [f64; 2] = [1.0, 1.5];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterConfig {
    pub whisker_r: f64,
    #[serde(default)]
    pub quartiles: QuartileMethod,
}

impl FilterConfig {
    pub fn new(whisker_r: f64) -> Result<Self> {
        let cfg = Self {
            whisker_r,
            quartiles: DEFAULT_QUARTILE_METHOD,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.whisker_r.is_nan() || self.whisker_r < 0.0 {
            return Err(Error::config(
                "whisker_r",
                format!("must be >= 0, got {}", self.whisker_r),
            ));
        }
        Ok(())
    }
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            whisker_r: WHISKER_CHOICES[0],
            quartiles: DEFAULT_QUARTILE_METHOD,
        }
    }
}

/// Lower and upper quartiles of an ascending-sorted, nonempty slice.
pub fn quartiles(sorted: &[f64], method: QuartileMethod) -> (f64, f64) {
    match method {
        QuartileMethod::Linear => (linear_quantile(sorted, 0.25), linear_quantile(sorted, 0.75)),
        QuartileMethod::TukeyHinges => {
            let n = sorted.len();
            let half = n.div_ceil(2);
            (median(&sorted[..half]), median(&sorted[n - half..]))
        }
    }
}

fn linear_quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Retention band `[Min, Max]` of the box-and-whisker filter.
pub fn whisker_bounds(similarities: &[f64], cfg: &FilterConfig) -> Result<(f64, f64)> {
    if similarities.is_empty() {
        return Err(Error::EmptyInput("similarity list"));
    }
    if similarities.iter().any(|s| !s.is_finite()) {
        return Err(Error::InvalidVector("non-finite similarity".into()));
    }
    cfg.validate()?;
    let mut sorted = similarities.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (lower, upper) = quartiles(&sorted, cfg.quartiles);
    let iqr = upper - lower;
    Ok((lower - cfg.whisker_r * iqr, upper + cfg.whisker_r * iqr))
}

/// Noise negative pair filtering: `true` for every similarity inside the
/// whisker band.
pub fn filter_noise(similarities: &[f64], cfg: &FilterConfig) -> Result<Vec<bool>> {
    let (min, max) = whisker_bounds(similarities, cfg)?;
    Ok(similarities.iter().map(|&s| min <= s && s <= max).collect())
}

/// Filters metric-view negatives by their similarities. An empty negative
/// set passes through unchanged.
pub fn filter_ml_negatives(
    negatives: &PairIndexSet,
    similarities: &[f64],
    cfg: &FilterConfig,
) -> Result<PairIndexSet> {
    if negatives.is_empty() {
        return Ok(PairIndexSet::empty());
    }
    if similarities.len() != negatives.len() {
        return Err(Error::DimensionMismatch {
            expected: negatives.len(),
            found: similarities.len(),
        });
    }
    negatives.retain_mask(&filter_noise(similarities, cfg)?)
}

/// Unified negative set for one anchor: its classification-view negatives
/// followed by the (filtered) metric-view negatives.
pub fn unpg_union(
    cl_negatives: &PairIndexSet,
    filtered_ml_negatives: &PairIndexSet,
) -> Result<PairIndexSet> {
    if !cl_negatives.all_origin(PairOrigin::Cl) {
        return Err(Error::OriginMismatch(
            "expected classification-view negatives",
        ));
    }
    if !filtered_ml_negatives.all_origin(PairOrigin::Ml) {
        return Err(Error::OriginMismatch("expected metric-view negatives"));
    }
    let mut pairs = Vec::with_capacity(cl_negatives.len() + filtered_ml_negatives.len());
    pairs.extend_from_slice(&cl_negatives.pairs);
    pairs.extend_from_slice(&filtered_ml_negatives.pairs);
    Ok(PairIndexSet { pairs })
}
