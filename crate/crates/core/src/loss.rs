//! The unified pair-similarity loss and its unified-negative extension.
//!
//! Every anchor `i` contributes `−log P_i` with
//! `P_i = e^{γ s^p_i} / (e^{γ s^p_i} + Σ e^{γ s^n})`, where the negative sum
//! runs over the anchor's own negatives followed by a negative list shared
//! by all anchors. Forward evaluation is max-shifted log-sum-exp.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::margins::MarginConfig;
use crate::pairgen::{filter_noise, mlpg_labels, FilterConfig};
use crate::sphere::{cos_grad_parts, dot, l2_norm, RawVector, ZERO_NORM_THRESHOLD};

/// Reference scale factor.
pub const DEFAULT_GAMMA: f64 = 64.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub gamma: f64,
    pub margin: MarginConfig,
    /// `None` disables noise filtering of metric-view negatives.
    pub whisker: Option<FilterConfig>,
    pub unpg_enabled: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            gamma: DEFAULT_GAMMA,
            margin: MarginConfig::default(),
            whisker: Some(FilterConfig::default()),
            unpg_enabled: true,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        check_gamma(self.gamma)?;
        self.margin.validate()?;
        if let Some(w) = &self.whisker {
            w.validate()?;
        }
        Ok(())
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(Error::config("gamma", format!("must be > 0, got {gamma}")));
    }
    Ok(())
}

/// Gradients of the mean loss with respect to every score.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreGradients {
    /// `∂L/∂s^p_i`, one per anchor.
    pub pos: Vec<f64>,
    /// `∂L/∂s^n` for each anchor's own negatives.
    pub neg_per_anchor: Vec<Vec<f64>>,
    /// `∂L/∂s^n` for the shared negatives, summed over anchors.
    pub neg_shared: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    /// Mean of `per_anchor`.
    pub value: f64,
    pub per_anchor: Vec<f64>,
    /// `P_i` per anchor.
    pub softmax_prob: Vec<f64>,
    pub grads: ScoreGradients,
    pos_scores: Vec<f64>,
    neg_per_anchor: Vec<Vec<f64>>,
    neg_shared: Vec<f64>,
    log_normalizer: Vec<f64>,
}

impl LossOutput {
    pub fn num_anchors(&self) -> usize {
        self.per_anchor.len()
    }

    pub fn grad_pos(&self) -> &[f64] {
        &self.grads.pos
    }

    pub fn is_finite(&self) -> bool {
        self.value.is_finite()
            && self.grads.pos.iter().all(|g| g.is_finite())
            && self.grads.neg_shared.iter().all(|g| g.is_finite())
            && self
                .grads
                .neg_per_anchor
                .iter()
                .flatten()
                .all(|g| g.is_finite())
    }
}

fn check_scores<'a>(scores: impl IntoIterator<Item = &'a f64>) -> Result<()> {
    if scores.into_iter().any(|s| !s.is_finite()) {
        return Err(Error::InvalidVector("non-finite score".into()));
    }
    Ok(())
}

fn softplus(a: f64) -> f64 {
    if a > 0.0 {
        a + (-a).exp().ln_1p()
    } else {
        a.exp().ln_1p()
    }
}

fn forward(
    pos: &[f64],
    neg_per_anchor: Vec<Vec<f64>>,
    neg_shared: &[f64],
    gamma: f64,
) -> LossOutput {
    let k = pos.len();
    let mut per_anchor = Vec::with_capacity(k);
    let mut softmax_prob = Vec::with_capacity(k);
    let mut log_normalizer = Vec::with_capacity(k);
    for (i, &sp) in pos.iter().enumerate() {
        let own: &[f64] = neg_per_anchor.get(i).map_or(&[], Vec::as_slice);
        let t0 = gamma * sp;
        // L = softplus(lse(negatives) − t0), accurate whether the positive
        // dominates (L ≈ e^a) or the negatives do (L ≈ a).
        let shift = own
            .iter()
            .chain(neg_shared)
            .map(|&s| gamma * s)
            .fold(f64::NEG_INFINITY, f64::max);
        let loss = if shift == f64::NEG_INFINITY {
            0.0
        } else {
            let sum = own
                .iter()
                .chain(neg_shared)
                .fold(0.0, |acc, &s| acc + (gamma * s - shift).exp());
            softplus(shift + sum.ln() - t0)
        };
        let lse = t0 + loss;
        per_anchor.push(loss);
        softmax_prob.push((-loss).exp());
        log_normalizer.push(lse);
    }
    let value = per_anchor.iter().sum::<f64>() / k as f64;
    let mut out = LossOutput {
        value,
        per_anchor,
        softmax_prob,
        grads: ScoreGradients::default(),
        pos_scores: pos.to_vec(),
        neg_per_anchor,
        neg_shared: neg_shared.to_vec(),
        log_normalizer,
    };
    out.grads = loss_backward(&out, gamma);
    out
}

/// Loss over `K` positive scores that all share the same negative list.
pub fn unified_loss(pos_scores: &[f64], neg_scores: &[f64], gamma: f64) -> Result<LossOutput> {
    if pos_scores.is_empty() {
        return Err(Error::EmptyPositives);
    }
    check_gamma(gamma)?;
    check_scores(pos_scores.iter().chain(neg_scores))?;
    Ok(forward(pos_scores, Vec::new(), neg_scores, gamma))
}

/// Loss with unified negatives: anchor `i` sees its own classification-view
/// negatives `cl_neg[i]` plus every score in `ml_neg`.
pub fn unified_loss_unpg(
    pos_scores: &[f64],
    cl_neg: &[Vec<f64>],
    ml_neg: &[f64],
    gamma: f64,
) -> Result<LossOutput> {
    if pos_scores.is_empty() {
        return Err(Error::EmptyPositives);
    }
    if cl_neg.len() != pos_scores.len() {
        return Err(Error::DimensionMismatch {
            expected: pos_scores.len(),
            found: cl_neg.len(),
        });
    }
    check_gamma(gamma)?;
    check_scores(
        pos_scores
            .iter()
            .chain(cl_neg.iter().flatten())
            .chain(ml_neg),
    )?;
    Ok(forward(pos_scores, cl_neg.to_vec(), ml_neg, gamma))
}

/// Analytic score gradients of a completed forward pass.
pub fn loss_backward(output: &LossOutput, gamma: f64) -> ScoreGradients {
    let k = output.pos_scores.len() as f64;
    let mut grads = ScoreGradients {
        pos: Vec::with_capacity(output.pos_scores.len()),
        neg_per_anchor: Vec::with_capacity(output.neg_per_anchor.len()),
        neg_shared: vec![0.0; output.neg_shared.len()],
    };
    for (i, &lse) in output.log_normalizer.iter().enumerate() {
        // 1 − P_i without cancellation.
        let one_minus_p = -(-output.per_anchor[i]).exp_m1();
        grads.pos.push(-gamma * one_minus_p / k);
        if let Some(own) = output.neg_per_anchor.get(i) {
            grads.neg_per_anchor.push(
                own.iter()
                    .map(|&s| gamma * (gamma * s - lse).exp() / k)
                    .collect(),
            );
        }
        for (g, &s) in grads.neg_shared.iter_mut().zip(&output.neg_shared) {
            *g += gamma * (gamma * s - lse).exp() / k;
        }
    }
    grads
}

/// Diagnostics of the metric-view negatives that entered a batch loss.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct MlNegativeStats {
    /// Candidates before filtering, injected scores included.
    pub candidates: usize,
    pub kept: usize,
}

/// Result of a full forward/backward pass on a batch.
#[derive(Debug, Clone)]
pub struct BatchLoss {
    pub output: LossOutput,
    /// `∂L/∂x` for each raw embedding.
    pub grad_embeddings: Vec<Vec<f64>>,
    /// `∂L/∂w` for each raw class weight.
    pub grad_weights: Vec<Vec<f64>>,
    pub ml_negatives: MlNegativeStats,
}

struct Normalized {
    units: Vec<Vec<f64>>,
    norms: Vec<f64>,
}

fn normalize_rows(rows: &[RawVector], dim: usize) -> Result<Normalized> {
    let mut units = Vec::with_capacity(rows.len());
    let mut norms = Vec::with_capacity(rows.len());
    for r in rows {
        if r.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: r.dim(),
            });
        }
        let n = l2_norm(r.as_slice());
        if n < ZERO_NORM_THRESHOLD {
            return Err(Error::ZeroNorm { norm: n });
        }
        units.push(r.as_slice().iter().map(|x| x / n).collect());
        norms.push(n);
    }
    Ok(Normalized { units, norms })
}

/// Forward pass of the composed batch loss: every sample is an anchor with
/// its class weight as positive and the other class weights as negatives;
/// with unified negatives enabled, the batch's (filtered) metric-view
/// negatives are appended to every anchor's normalizer.
///
/// `injected_ml_negatives` are constant scores appended to the metric-view
/// negative list before filtering. They carry no gradient.
pub fn batch_loss(
    embeddings: &[RawVector],
    labels: &[usize],
    weights: &[RawVector],
    cfg: &LossConfig,
    injected_ml_negatives: &[f64],
) -> Result<LossOutput> {
    Ok(batch_forward(embeddings, labels, weights, cfg, injected_ml_negatives)?.0)
}

struct ForwardCache {
    x: Normalized,
    w: Normalized,
    /// Cosines of each anchor to each class row.
    class_cos: Vec<Vec<f64>>,
    kept_pairs: Vec<(usize, usize)>,
    stats: MlNegativeStats,
}

fn batch_forward(
    embeddings: &[RawVector],
    labels: &[usize],
    weights: &[RawVector],
    cfg: &LossConfig,
    injected: &[f64],
) -> Result<(LossOutput, ForwardCache)> {
    cfg.validate()?;
    if embeddings.is_empty() {
        return Err(Error::EmptyPositives);
    }
    if embeddings.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: embeddings.len(),
            found: labels.len(),
        });
    }
    let c = weights.len();
    if let Some(&label) = labels.iter().find(|&&y| y >= c) {
        return Err(Error::LabelOutOfRange {
            label,
            num_classes: c,
        });
    }
    let dim = embeddings[0].dim();
    let x = normalize_rows(embeddings, dim)?;
    let w = normalize_rows(weights, dim)?;

    let class_cos: Vec<Vec<f64>> = x
        .units
        .iter()
        .map(|xi| {
            w.units
                .iter()
                .map(|wj| dot(xi, wj).clamp(-1.0, 1.0))
                .collect()
        })
        .collect();
    let pos: Vec<f64> = labels
        .iter()
        .zip(&class_cos)
        .map(|(&y, row)| cfg.margin.positive_score(row[y]))
        .collect();
    let cl_neg: Vec<Vec<f64>> = labels
        .iter()
        .zip(&class_cos)
        .map(|(&y, row)| {
            row.iter()
                .enumerate()
                .filter_map(|(j, &s)| (j != y).then_some(s))
                .collect()
        })
        .collect();

    let mut kept_pairs = Vec::new();
    let mut shared = Vec::new();
    let mut stats = MlNegativeStats::default();
    if cfg.unpg_enabled {
        let (_, negatives) = mlpg_labels(labels);
        let candidates: Vec<(usize, usize)> = negatives.iter().map(|p| (p.left, p.right)).collect();
        let mut sims: Vec<f64> = candidates
            .iter()
            .map(|&(a, b)| dot(&x.units[a], &x.units[b]).clamp(-1.0, 1.0))
            .collect();
        sims.extend_from_slice(injected);
        stats.candidates = sims.len();
        let mask = match (&cfg.whisker, sims.is_empty()) {
            (Some(f), false) => filter_noise(&sims, f)?,
            _ => vec![true; sims.len()],
        };
        for (idx, (&s, &keep)) in sims.iter().zip(&mask).enumerate() {
            if !keep {
                continue;
            }
            if let Some(&pair) = candidates.get(idx) {
                kept_pairs.push(pair);
            }
            shared.push(s);
        }
        // Real pairs precede injected scores in `shared`, so `kept_pairs` indexes its head.
        stats.kept = shared.len();
    }

    let out = unified_loss_unpg(&pos, &cl_neg, &shared, cfg.gamma)?;
    Ok((
        out,
        ForwardCache {
            x,
            w,
            class_cos,
            kept_pairs,
            stats,
        },
    ))
}

fn accumulate(target: &mut [f64], source: &[f64], scale: f64) {
    for (t, s) in target.iter_mut().zip(source) {
        *t += scale * s;
    }
}

/// Full-chain gradients of the composed batch loss with respect to the raw
/// (unnormalized) embeddings and class weights.
pub fn embedding_backward(
    embeddings: &[RawVector],
    labels: &[usize],
    weights: &[RawVector],
    cfg: &LossConfig,
    injected_ml_negatives: &[f64],
) -> Result<BatchLoss> {
    let (output, cache) = batch_forward(embeddings, labels, weights, cfg, injected_ml_negatives)?;
    let dim = embeddings[0].dim();
    let mut gx = vec![vec![0.0; dim]; embeddings.len()];
    let mut gw = vec![vec![0.0; dim]; weights.len()];
    let raw_x: Vec<&[f64]> = embeddings.iter().map(RawVector::as_slice).collect();
    let raw_w: Vec<&[f64]> = weights.iter().map(RawVector::as_slice).collect();

    let push_pair = |gx: &mut [Vec<f64>], gw: &mut [Vec<f64>], i: usize, j: usize, scale: f64| {
        if scale == 0.0 {
            return;
        }
        let (ga, gb) = cos_grad_parts(raw_x[i], cache.x.norms[i], raw_w[j], cache.w.norms[j]);
        accumulate(&mut gx[i], &ga, scale);
        accumulate(&mut gw[j], &gb, scale);
    };

    for (i, &y) in labels.iter().enumerate() {
        let chain = cfg.margin.positive_chain(cache.class_cos[i][y]);
        push_pair(&mut gx, &mut gw, i, y, output.grads.pos[i] * chain);
        let own = &output.grads.neg_per_anchor[i];
        let others = (0..weights.len()).filter(|&j| j != y);
        for (j, &g) in others.zip(own) {
            push_pair(&mut gx, &mut gw, i, j, g);
        }
    }

    for (&(a, b), &g) in cache.kept_pairs.iter().zip(&output.grads.neg_shared) {
        if g == 0.0 {
            continue;
        }
        let (ga, gb) = cos_grad_parts(raw_x[a], cache.x.norms[a], raw_x[b], cache.x.norms[b]);
        accumulate(&mut gx[a], &ga, g);
        accumulate(&mut gx[b], &gb, g);
    }

    Ok(BatchLoss {
        output,
        grad_embeddings: gx,
        grad_weights: gw,
        ml_negatives: cache.stats,
    })
}
