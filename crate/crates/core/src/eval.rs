//! Verification and identification metrics, and the similarity-distribution
//! diagnostics used to compare runs.

use std::fmt::Write as _;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sphere::{cos_sim, dot, Angle, UnitVector};

pub const DEFAULT_NUM_BINS: usize = 200;
pub const DEFAULT_SAMPLE_COUNT: usize = 256;
pub const DEFAULT_FAR_TARGETS: [f64; 5] = [1e-4, 1e-3, 1e-2, 1e-1, 1.0];

/// Positive and negative pair similarities.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoredPairs {
    pub positive_scores: Vec<f64>,
    pub negative_scores: Vec<f64>,
}

impl ScoredPairs {
    pub fn new(positive_scores: Vec<f64>, negative_scores: Vec<f64>) -> Self {
        Self {
            positive_scores,
            negative_scores,
        }
    }

    fn check_finite(&self) -> Result<()> {
        let bad = self
            .positive_scores
            .iter()
            .chain(&self.negative_scores)
            .any(|s| !s.is_finite());
        if bad {
            return Err(Error::InvalidVector("non-finite score".into()));
        }
        Ok(())
    }

    fn require_both(&self) -> Result<()> {
        if self.positive_scores.is_empty() {
            return Err(Error::EmptyInput("positive scores"));
        }
        if self.negative_scores.is_empty() {
            return Err(Error::EmptyInput("negative scores"));
        }
        self.check_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TarAtFar {
    pub far: f64,
    pub tar: f64,
    /// Acceptance threshold (`score > threshold`); `None` accepts everything.
    pub threshold: Option<f64>,
}

fn count_greater(sorted: &[f64], t: f64) -> usize {
    sorted.len() - sorted.partition_point(|&v| v <= t)
}

fn count_at_least(sorted: &[f64], t: f64) -> usize {
    sorted.len() - sorted.partition_point(|&v| v < t)
}

fn sorted_copy(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// True-accept rate at each false-accept target. The threshold for a target
/// `f` is the smallest negative score `τ` (or −∞) with
/// `#{neg > τ} / |neg| ≤ f`; acceptance is strict `score > τ`.
pub fn tar_at_far(pairs: &ScoredPairs, far_targets: &[f64]) -> Result<Vec<TarAtFar>> {
    if pairs.negative_scores.is_empty() {
        return Err(Error::EmptyNegatives);
    }
    if pairs.positive_scores.is_empty() {
        return Err(Error::EmptyInput("positive scores"));
    }
    pairs.check_finite()?;
    if let Some(&f) = far_targets.iter().find(|f| !(0.0..=1.0).contains(*f)) {
        return Err(Error::config("far_targets", format!("{f} outside [0, 1]")));
    }
    let neg = sorted_copy(&pairs.negative_scores);
    let pos = sorted_copy(&pairs.positive_scores);
    let n_neg = neg.len() as f64;
    let n_pos = pos.len() as f64;
    Ok(far_targets
        .iter()
        .map(|&far| {
            let threshold = if 1.0 <= far {
                None
            } else {
                // Feasibility is monotone in τ, so the first feasible
                // ascending negative is the smallest.
                let k = neg.partition_point(|&v| count_greater(&neg, v) as f64 / n_neg > far);
                Some(neg[k.min(neg.len() - 1)])
            };
            let accepted = match threshold {
                None => pos.len(),
                Some(t) => count_greater(&pos, t),
            };
            TarAtFar {
                far,
                tar: accepted as f64 / n_pos,
                threshold,
            }
        })
        .collect())
}

/// Best-threshold verification accuracy (accept iff `score ≥ τ`).
///
/// Candidates are the midpoints between consecutive distinct scores plus one
/// threshold below and one above every score. Ties go to the smallest `τ`.
pub fn verification_accuracy(pairs: &ScoredPairs) -> Result<(f64, f64)> {
    pairs.require_both()?;
    let pos = sorted_copy(&pairs.positive_scores);
    let neg = sorted_copy(&pairs.negative_scores);
    let mut all: Vec<f64> = pos.iter().chain(&neg).copied().collect();
    all.sort_by(f64::total_cmp);
    all.dedup();
    let lowest = all[0] - 1.0;
    let highest = all[all.len() - 1] + 1.0;
    let candidates = std::iter::once(lowest)
        .chain(all.windows(2).map(|w| 0.5 * (w[0] + w[1])))
        .chain(std::iter::once(highest));
    let total = (pos.len() + neg.len()) as f64;
    let mut best = (f64::NEG_INFINITY, lowest);
    for t in candidates {
        let tp = count_at_least(&pos, t);
        let tn = neg.len() - count_at_least(&neg, t);
        let acc = (tp + tn) as f64 / total;
        if acc > best.0 {
            best = (acc, t);
        }
    }
    Ok(best)
}

/// Rank-1 identification rate: the fraction of probes whose most similar
/// gallery entry (lowest index on ties) has the probe's label.
pub fn rank1(
    probes: &[UnitVector],
    probe_labels: &[usize],
    gallery: &[UnitVector],
    gallery_labels: &[usize],
) -> Result<f64> {
    if gallery.is_empty() {
        return Err(Error::EmptyGallery);
    }
    if probes.is_empty() {
        return Err(Error::EmptyInput("probes"));
    }
    if probes.len() != probe_labels.len() {
        return Err(Error::DimensionMismatch {
            expected: probes.len(),
            found: probe_labels.len(),
        });
    }
    if gallery.len() != gallery_labels.len() {
        return Err(Error::DimensionMismatch {
            expected: gallery.len(),
            found: gallery_labels.len(),
        });
    }
    let mut correct = 0usize;
    for (p, &label) in probes.iter().zip(probe_labels) {
        let mut best = (0usize, f64::NEG_INFINITY);
        for (j, g) in gallery.iter().enumerate() {
            let s = cos_sim(p, g)?;
            if s > best.1 {
                best = (j, s);
            }
        }
        if gallery_labels[best.0] == label {
            correct += 1;
        }
    }
    Ok(correct as f64 / probes.len() as f64)
}

/// Counts per bin of `num_bins` equal bins over `[−1, 1]`. Values outside
/// the range land in the edge bins.
pub fn histogram(values: &[f64], num_bins: usize) -> Result<Vec<u64>> {
    if num_bins == 0 {
        return Err(Error::config("num_bins", "must be >= 1"));
    }
    let mut counts = vec![0u64; num_bins];
    for &v in values {
        if !v.is_finite() {
            return Err(Error::InvalidVector("non-finite score".into()));
        }
        let pos = ((v + 1.0) / 2.0 * num_bins as f64).floor();
        let bin = pos.clamp(0.0, (num_bins - 1) as f64) as usize;
        counts[bin] += 1;
    }
    Ok(counts)
}

pub fn bin_centers(num_bins: usize) -> Vec<f64> {
    let width = 2.0 / num_bins as f64;
    (0..num_bins)
        .map(|b| -1.0 + (b as f64 + 0.5) * width)
        .collect()
}

/// Two-column CSV (`bin_center,count`).
pub fn histogram_csv(values: &[f64], num_bins: usize) -> Result<String> {
    let counts = histogram(values, num_bins)?;
    let mut out = String::from("bin_center,count\n");
    for (c, n) in bin_centers(num_bins).iter().zip(counts) {
        let _ = writeln!(out, "{c:.17e},{n}");
    }
    Ok(out)
}

/// Histogram intersection of the two score distributions.
pub fn overlap_count(pairs: &ScoredPairs, num_bins: usize) -> Result<u64> {
    let pos = histogram(&pairs.positive_scores, num_bins)?;
    let neg = histogram(&pairs.negative_scores, num_bins)?;
    Ok(pos.iter().zip(&neg).map(|(&a, &b)| a.min(b)).sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WdfsGap {
    /// `min(positive) − max(negative)`; positive iff the sampled sets are separated.
    pub gap: f64,
    pub theta_p_max: Angle,
    pub theta_n_min: Angle,
}

pub fn wdfs_gap(pairs: &ScoredPairs) -> Result<WdfsGap> {
    pairs.require_both()?;
    let min_pos = pairs
        .positive_scores
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let max_neg = pairs
        .negative_scores
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(WdfsGap {
        gap: min_pos - max_neg,
        theta_p_max: Angle::from_cos(min_pos),
        theta_n_min: Angle::from_cos(max_neg),
    })
}

/// `count` positives drawn uniformly without replacement and the `count`
/// highest-similarity negatives.
pub fn hard_negative_sample<R: Rng + ?Sized>(
    positives: &[f64],
    negatives: &[f64],
    count: usize,
    rng: &mut R,
) -> Result<ScoredPairs> {
    for available in [positives.len(), negatives.len()] {
        if count > available {
            return Err(Error::InsufficientPairs {
                requested: count,
                available,
            });
        }
    }
    let mut picked: Vec<usize> = index::sample(rng, positives.len(), count).into_vec();
    picked.sort_unstable();
    let mut order: Vec<usize> = (0..negatives.len()).collect();
    order.sort_by(|&a, &b| negatives[b].total_cmp(&negatives[a]).then(a.cmp(&b)));
    Ok(ScoredPairs {
        positive_scores: picked.into_iter().map(|i| positives[i]).collect(),
        negative_scores: order[..count].iter().map(|&i| negatives[i]).collect(),
    })
}

/// All within-set pair similarities, split by label agreement.
pub fn pair_scores(embeddings: &[UnitVector], labels: &[usize]) -> ScoredPairs {
    let mut out = ScoredPairs::default();
    for i in 0..embeddings.len() {
        for j in (i + 1)..embeddings.len() {
            let s = dot(embeddings[i].as_slice(), embeddings[j].as_slice()).clamp(-1.0, 1.0);
            if labels[i] == labels[j] {
                out.positive_scores.push(s);
            } else {
                out.negative_scores.push(s);
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub far_targets: Vec<f64>,
    pub num_bins: usize,
    /// Positives sampled and hardest negatives kept for the overlap and gap diagnostics.
    pub sample_count: usize,
    /// Pairs of each kind in the balanced verification-accuracy sample.
    pub verification_pairs: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            far_targets: DEFAULT_FAR_TARGETS.to_vec(),
            num_bins: DEFAULT_NUM_BINS,
            sample_count: DEFAULT_SAMPLE_COUNT,
            verification_pairs: 1000,
            seed: 0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_bins == 0 {
            return Err(Error::config("eval.num_bins", "must be >= 1"));
        }
        if self.sample_count == 0 {
            return Err(Error::config("eval.sample_count", "must be >= 1"));
        }
        if self.verification_pairs == 0 {
            return Err(Error::config("eval.verification_pairs", "must be >= 1"));
        }
        if let Some(f) = self.far_targets.iter().find(|f| !(0.0..=1.0).contains(*f)) {
            return Err(Error::config(
                "eval.far_targets",
                format!("{f} outside [0, 1]"),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub tar_at_far: Vec<TarAtFar>,
    pub verification_accuracy: f64,
    pub verification_threshold: f64,
    pub rank1: f64,
    pub overlap_count: u64,
    pub num_bins: usize,
    pub wdfs_gap: f64,
    pub theta_p_max: Angle,
    pub theta_n_min: Angle,
    pub sampled_positives: usize,
    pub sampled_negatives: usize,
}

/// Everything [`evaluate`] computes, including the sampled score sets.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub sampled: ScoredPairs,
}

fn sample_values<R: Rng>(values: &[f64], count: usize, rng: &mut R) -> Vec<f64> {
    let mut picked = index::sample(rng, values.len(), count.min(values.len())).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| values[i]).collect()
}

/// Computes every metric on a labeled embedding set. The first sample of
/// each class forms the identification gallery; the rest are probes.
pub fn evaluate(
    embeddings: &[UnitVector],
    labels: &[usize],
    cfg: &EvalConfig,
) -> Result<Evaluation> {
    cfg.validate()?;
    if embeddings.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: embeddings.len(),
            found: labels.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let all = pair_scores(embeddings, labels);
    if all.positive_scores.is_empty() || all.negative_scores.is_empty() {
        return Err(Error::InsufficientData(
            "evaluation needs at least one positive and one negative pair".into(),
        ));
    }
    let tar = tar_at_far(&all, &cfg.far_targets)?;

    let n_ver = cfg
        .verification_pairs
        .min(all.positive_scores.len())
        .min(all.negative_scores.len());
    let balanced = ScoredPairs::new(
        sample_values(&all.positive_scores, n_ver, &mut rng),
        sample_values(&all.negative_scores, n_ver, &mut rng),
    );
    let (accuracy, threshold) = verification_accuracy(&balanced)?;

    let count = cfg
        .sample_count
        .min(all.positive_scores.len())
        .min(all.negative_scores.len());
    let sampled =
        hard_negative_sample(&all.positive_scores, &all.negative_scores, count, &mut rng)?;
    let overlap = overlap_count(&sampled, cfg.num_bins)?;
    let gap = wdfs_gap(&sampled)?;

    let mut seen = std::collections::BTreeSet::new();
    let (mut gallery, mut gallery_labels, mut probes, mut probe_labels) =
        (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (e, &y) in embeddings.iter().zip(labels) {
        if seen.insert(y) {
            gallery.push(e.clone());
            gallery_labels.push(y);
        } else {
            probes.push(e.clone());
            probe_labels.push(y);
        }
    }
    let r1 = rank1(&probes, &probe_labels, &gallery, &gallery_labels)?;

    Ok(Evaluation {
        report: MetricsReport {
            tar_at_far: tar,
            verification_accuracy: accuracy,
            verification_threshold: threshold,
            rank1: r1,
            overlap_count: overlap,
            num_bins: cfg.num_bins,
            wdfs_gap: gap.gap,
            theta_p_max: gap.theta_p_max,
            theta_n_min: gap.theta_n_min,
            sampled_positives: sampled.positive_scores.len(),
            sampled_negatives: sampled.negative_scores.len(),
        },
        sampled,
    })
}
