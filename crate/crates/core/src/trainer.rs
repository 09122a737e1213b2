//! Desk-scale training harness: synthetic clustered data on the sphere,
//! class-balanced batches, and SGD with momentum under a warm-up plus
//! cosine-annealed learning rate.

use std::f64::consts::PI;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::{embedding_backward, LossConfig, LossOutput, MlNegativeStats};
use crate::pairgen::{ClassWeightMatrix, LabeledBatch};
use crate::sphere::{l2_norm, normalize, RawVector, UnitVector, ZERO_NORM_THRESHOLD};

// Independent ChaCha streams derived from one seed.
const STREAM_WEIGHTS: u64 = 1;
const STREAM_ENCODER: u64 = 2;
const STREAM_BATCHES: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub samples_per_class: usize,
    pub dim: usize,
    /// Inverse noise scale: samples are `normalize(mean + z / cluster_concentration)`.
    pub cluster_concentration: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_classes: 20,
            samples_per_class: 20,
            dim: 16,
            cluster_concentration: 4.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::config("data.num_classes", "must be >= 2"));
        }
        if self.samples_per_class < 1 {
            return Err(Error::config("data.samples_per_class", "must be >= 1"));
        }
        if self.dim < 2 {
            return Err(Error::config("data.dim", "must be >= 2"));
        }
        if self.cluster_concentration.is_nan() || self.cluster_concentration <= 0.0 {
            return Err(Error::config(
                "data.cluster_concentration",
                format!("must be > 0, got {}", self.cluster_concentration),
            ));
        }
        Ok(())
    }
}

/// Labeled unit vectors, class-major.
#[derive(Debug, Clone)]
pub struct Dataset {
    features: Vec<UnitVector>,
    labels: Vec<usize>,
    num_classes: usize,
    by_class: Vec<Vec<usize>>,
}

impl Dataset {
    pub fn new(features: Vec<UnitVector>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if features.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: features.len(),
                found: labels.len(),
            });
        }
        let dim = features.first().map_or(0, UnitVector::dim);
        if let Some(f) = features.iter().find(|f| f.dim() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: f.dim(),
            });
        }
        let mut by_class = vec![Vec::new(); num_classes];
        for (i, &y) in labels.iter().enumerate() {
            by_class
                .get_mut(y)
                .ok_or(Error::LabelOutOfRange {
                    label: y,
                    num_classes,
                })?
                .push(i);
        }
        Ok(Self {
            features,
            labels,
            num_classes,
            by_class,
        })
    }

    pub fn features(&self) -> &[UnitVector] {
        &self.features
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
        self.features.first().map_or(0, UnitVector::dim)
    }

    pub fn class_indices(&self, class: usize) -> &[usize] {
        &self.by_class[class]
    }
}

fn gaussian_unit<R: Rng>(rng: &mut R, dim: usize) -> Result<UnitVector> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        if l2_norm(&v) >= ZERO_NORM_THRESHOLD {
            return normalize(&RawVector::new(v)?);
        }
    }
}

/// Clustered data: one random unit mean per class, samples scattered around it.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let means = (0..spec.num_classes)
        .map(|_| gaussian_unit(&mut rng, spec.dim))
        .collect::<Result<Vec<_>>>()?;
    sample_around(spec, &means, &mut rng)
}

/// [`gen_synthetic`] with caller-chosen class means.
pub fn gen_synthetic_with_means(spec: &SyntheticSpec, means: &[UnitVector]) -> Result<Dataset> {
    spec.validate()?;
    if means.len() != spec.num_classes {
        return Err(Error::DimensionMismatch {
            expected: spec.num_classes,
            found: means.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    sample_around(spec, means, &mut rng)
}

fn sample_around<R: Rng>(
    spec: &SyntheticSpec,
    means: &[UnitVector],
    rng: &mut R,
) -> Result<Dataset> {
    let mut features = Vec::with_capacity(spec.num_classes * spec.samples_per_class);
    let mut labels = Vec::with_capacity(features.capacity());
    for (class, mean) in means.iter().enumerate() {
        if mean.dim() != spec.dim {
            return Err(Error::DimensionMismatch {
                expected: spec.dim,
                found: mean.dim(),
            });
        }
        for _ in 0..spec.samples_per_class {
            let v: Vec<f64> = mean
                .as_slice()
                .iter()
                .map(|m| m + rng.sample::<f64, _>(StandardNormal) / spec.cluster_concentration)
                .collect();
            features.push(normalize(&RawVector::new(v)?)?);
            labels.push(class);
        }
    }
    Dataset::new(features, labels, spec.num_classes)
}

/// Class weights drawn uniformly on the sphere.
pub fn init_weights(num_classes: usize, dim: usize, seed: u64) -> Result<ClassWeightMatrix> {
    if dim < 2 {
        return Err(Error::config("dim", "must be >= 2"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(STREAM_WEIGHTS);
    let rows = (0..num_classes)
        .map(|_| gaussian_unit(&mut rng, dim))
        .collect::<Result<Vec<_>>>()?;
    ClassWeightMatrix::new(rows)
}

/// Dataset indices and labels of one class-balanced batch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampledBatch {
    pub indices: Vec<usize>,
    pub labels: Vec<usize>,
}

impl SampledBatch {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn to_labeled(&self, dataset: &Dataset) -> Result<LabeledBatch> {
        let embeddings = self
            .indices
            .iter()
            .map(|&i| dataset.features()[i].clone())
            .collect();
        LabeledBatch::new(embeddings, self.labels.clone(), dataset.num_classes())
    }
}

/// `classes_per_batch` distinct classes, `samples_per_class` samples from
/// each, all drawn uniformly without replacement.
pub fn sample_batch<R: Rng + ?Sized>(
    dataset: &Dataset,
    classes_per_batch: usize,
    samples_per_class: usize,
    rng: &mut R,
) -> Result<SampledBatch> {
    if classes_per_batch == 0 || samples_per_class == 0 {
        return Err(Error::InsufficientData("empty batch requested".into()));
    }
    if classes_per_batch > dataset.num_classes() {
        return Err(Error::InsufficientData(format!(
            "{classes_per_batch} classes requested, {} available",
            dataset.num_classes()
        )));
    }
    let classes = index::sample(rng, dataset.num_classes(), classes_per_batch);
    let mut batch = SampledBatch {
        indices: Vec::with_capacity(classes_per_batch * samples_per_class),
        labels: Vec::with_capacity(classes_per_batch * samples_per_class),
    };
    for class in classes.iter() {
        let members = dataset.class_indices(class);
        if samples_per_class > members.len() {
            return Err(Error::InsufficientData(format!(
                "class {class} has {} samples, {samples_per_class} requested",
                members.len()
            )));
        }
        for k in index::sample(rng, members.len(), samples_per_class).iter() {
            batch.indices.push(members[k]);
            batch.labels.push(class);
        }
    }
    Ok(batch)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Each sample's embedding is a trainable parameter.
    FreeEmbedding,
    /// Embeddings are `normalize(A x)` for a trainable matrix `A`.
    LinearEncoder,
}

/// Constant metric-view negative scores appended to every batch before
/// filtering: `hard` copies at +1 and `easy` copies at −1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct OutlierInjection {
    pub hard: usize,
    pub easy: usize,
}

impl OutlierInjection {
    pub fn scores(&self) -> Vec<f64> {
        let mut v = vec![1.0; self.hard];
        v.extend(std::iter::repeat_n(-1.0, self.easy));
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub batch_size: usize,
    pub classes_per_batch: usize,
    pub samples_per_class_per_batch: usize,
    pub base_lr: f64,
    pub warmup_epochs: u64,
    pub max_epochs: u64,
    pub steps_per_epoch: u64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub loss: LossConfig,
    pub seed: u64,
    /// Output dimension of the linear encoder; defaults to the input dimension.
    pub embed_dim: Option<usize>,
    pub outliers: Option<OutlierInjection>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: TrainMode::FreeEmbedding,
            batch_size: 32,
            classes_per_batch: 8,
            samples_per_class_per_batch: 4,
            base_lr: 0.1,
            warmup_epochs: 3,
            max_epochs: 20,
            steps_per_epoch: 25,
            momentum: 0.9,
            weight_decay: 5e-4,
            loss: LossConfig::default(),
            seed: 0,
            embed_dim: None,
            outliers: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size != self.classes_per_batch * self.samples_per_class_per_batch {
            return Err(Error::config(
                "train.batch_size",
                format!(
                    "must equal classes_per_batch * samples_per_class_per_batch = {}",
                    self.classes_per_batch * self.samples_per_class_per_batch
                ),
            ));
        }
        if self.batch_size < 2 {
            return Err(Error::config("train.batch_size", "must be >= 2"));
        }
        if !(self.base_lr.is_finite() && self.base_lr > 0.0) {
            return Err(Error::config(
                "train.base_lr",
                format!("must be > 0, got {}", self.base_lr),
            ));
        }
        if self.max_epochs > 0 && self.warmup_epochs >= self.max_epochs {
            return Err(Error::config("train.warmup_epochs", "must be < max_epochs"));
        }
        if self.max_epochs == 0 && self.warmup_epochs != 0 {
            return Err(Error::config(
                "train.warmup_epochs",
                "must be 0 when max_epochs is 0",
            ));
        }
        if self.steps_per_epoch == 0 {
            return Err(Error::config("train.steps_per_epoch", "must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("train.momentum", "must be in [0, 1)"));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::config("train.weight_decay", "must be >= 0"));
        }
        if self.embed_dim.is_some_and(|d| d < 2) {
            return Err(Error::config("train.embed_dim", "must be >= 2"));
        }
        self.loss.validate()
    }

    pub fn total_steps(&self) -> u64 {
        self.max_epochs * self.steps_per_epoch
    }

    pub fn warmup_steps(&self) -> u64 {
        self.warmup_epochs * self.steps_per_epoch
    }
}

/// Linear warm-up from 0 to `base_lr`, then half-cosine decay to 0 at the
/// final step.
pub fn lr_at(step: u64, cfg: &TrainConfig) -> f64 {
    let total = cfg.total_steps();
    let warm = cfg.warmup_steps();
    if step < warm {
        return cfg.base_lr * step as f64 / warm as f64;
    }
    if total <= warm {
        return 0.0;
    }
    let progress = ((step - warm) as f64 / (total - warm) as f64).min(1.0);
    cfg.base_lr * (1.0 + (PI * progress).cos()) / 2.0
}

/// Trainable parameters and their momentum buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    /// Free embeddings (one row per dataset sample) or encoder rows (`embed_dim × input_dim`).
    pub model: Vec<Vec<f64>>,
    pub weights: Vec<Vec<f64>>,
    pub model_velocity: Vec<Vec<f64>>,
    pub weight_velocity: Vec<Vec<f64>>,
    pub mode: TrainMode,
    pub step: u64,
    pub lr: f64,
}

impl OptimizerState {
    pub fn init(cfg: &TrainConfig, dataset: &Dataset) -> Result<Self> {
        let input_dim = dataset.dim();
        let (model, embed_dim): (Vec<Vec<f64>>, usize) = match cfg.mode {
            TrainMode::FreeEmbedding => {
                if cfg.embed_dim.is_some_and(|d| d != input_dim) {
                    return Err(Error::config(
                        "train.embed_dim",
                        "free-embedding mode uses the data dimension",
                    ));
                }
                let rows = dataset
                    .features()
                    .iter()
                    .map(|f| f.as_slice().to_vec())
                    .collect();
                (rows, input_dim)
            }
            TrainMode::LinearEncoder => {
                let out = cfg.embed_dim.unwrap_or(input_dim);
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                rng.set_stream(STREAM_ENCODER);
                let scale = 1.0 / (input_dim as f64).sqrt();
                let rows = (0..out)
                    .map(|_| {
                        (0..input_dim)
                            .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
                            .collect()
                    })
                    .collect();
                (rows, out)
            }
        };
        let weights: Vec<Vec<f64>> = init_weights(dataset.num_classes(), embed_dim, cfg.seed)?
            .rows()
            .iter()
            .map(|r| r.as_slice().to_vec())
            .collect();
        Ok(Self {
            model_velocity: zeros_like(&model),
            weight_velocity: zeros_like(&weights),
            model,
            weights,
            mode: cfg.mode,
            step: 0,
            lr: 0.0,
        })
    }

    /// Raw (pre-normalization) embeddings of the given dataset samples.
    pub fn raw_embeddings(&self, dataset: &Dataset, indices: &[usize]) -> Result<Vec<RawVector>> {
        indices
            .iter()
            .map(|&i| match self.mode {
                TrainMode::FreeEmbedding => RawVector::new(self.model[i].clone()),
                TrainMode::LinearEncoder => {
                    RawVector::new(matvec(&self.model, dataset.features()[i].as_slice()))
                }
            })
            .collect()
    }

    /// Unit embeddings of every dataset sample.
    pub fn embeddings(&self, dataset: &Dataset) -> Result<Vec<UnitVector>> {
        let all: Vec<usize> = (0..dataset.len()).collect();
        self.raw_embeddings(dataset, &all)?
            .iter()
            .map(normalize)
            .collect()
    }

    pub fn raw_weights(&self) -> Result<Vec<RawVector>> {
        self.weights
            .iter()
            .map(|w| RawVector::new(w.clone()))
            .collect()
    }

    pub fn class_weights(&self) -> Result<ClassWeightMatrix> {
        ClassWeightMatrix::new(
            self.raw_weights()?
                .iter()
                .map(normalize)
                .collect::<Result<_>>()?,
        )
    }

    pub fn embed_dim(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }
}

fn zeros_like(m: &[Vec<f64>]) -> Vec<Vec<f64>> {
    m.iter().map(|r| vec![0.0; r.len()]).collect()
}

fn matvec(rows: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    rows.iter()
        .map(|r| r.iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

fn sgd_update(
    params: &mut [Vec<f64>],
    velocity: &mut [Vec<f64>],
    grads: &[Vec<f64>],
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) {
    for ((p, v), g) in params.iter_mut().zip(velocity.iter_mut()).zip(grads) {
        for ((pk, vk), gk) in p.iter_mut().zip(v.iter_mut()).zip(g) {
            *vk = momentum * *vk + gk + weight_decay * *pk;
            if lr != 0.0 {
                *pk -= lr * *vk;
            }
        }
    }
}

fn renormalize(rows: &mut [Vec<f64>]) -> Result<()> {
    for r in rows {
        let n = l2_norm(r);
        if n < ZERO_NORM_THRESHOLD {
            return Err(Error::ZeroNorm { norm: n });
        }
        r.iter_mut().for_each(|x| *x /= n);
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub step: u64,
    pub lr: f64,
    pub loss: LossOutput,
    pub ml_negatives: MlNegativeStats,
}

/// One SGD-with-momentum update on `batch`. Fails with `NonFinite` unless
/// `allow_nonfinite` is set, in which case the parameters are left untouched
/// for that step.
pub fn train_step(
    state: &mut OptimizerState,
    dataset: &Dataset,
    batch: &SampledBatch,
    cfg: &TrainConfig,
    allow_nonfinite: bool,
) -> Result<StepOutcome> {
    let step = state.step;
    let lr = lr_at(step, cfg);
    let raw = state.raw_embeddings(dataset, &batch.indices)?;
    let weights = state.raw_weights()?;
    let injected = cfg.outliers.map(|o| o.scores()).unwrap_or_default();
    let result = embedding_backward(&raw, &batch.labels, &weights, &cfg.loss, &injected)?;

    let finite = result.output.is_finite()
        && result
            .grad_embeddings
            .iter()
            .flatten()
            .all(|g| g.is_finite())
        && result.grad_weights.iter().flatten().all(|g| g.is_finite());
    state.lr = lr;
    state.step += 1;
    if !finite {
        if allow_nonfinite {
            return Ok(StepOutcome {
                step,
                lr,
                loss: result.output,
                ml_negatives: result.ml_negatives,
            });
        }
        return Err(Error::NonFinite {
            step,
            what: "loss or gradient",
        });
    }

    let mut model_grad = zeros_like(&state.model);
    match state.mode {
        TrainMode::FreeEmbedding => {
            for (&i, g) in batch.indices.iter().zip(&result.grad_embeddings) {
                model_grad[i].copy_from_slice(g);
            }
        }
        TrainMode::LinearEncoder => {
            for (&i, g) in batch.indices.iter().zip(&result.grad_embeddings) {
                let x = dataset.features()[i].as_slice();
                for (row, &gr) in model_grad.iter_mut().zip(g) {
                    for (a, &xk) in row.iter_mut().zip(x) {
                        *a += gr * xk;
                    }
                }
            }
        }
    }
    sgd_update(
        &mut state.model,
        &mut state.model_velocity,
        &model_grad,
        lr,
        cfg.momentum,
        cfg.weight_decay,
    );
    sgd_update(
        &mut state.weights,
        &mut state.weight_velocity,
        &result.grad_weights,
        lr,
        cfg.momentum,
        cfg.weight_decay,
    );
    if lr != 0.0 {
        if state.mode == TrainMode::FreeEmbedding {
            renormalize(&mut state.model)?;
        }
        renormalize(&mut state.weights)?;
    }
    Ok(StepOutcome {
        step,
        lr,
        loss: result.output,
        ml_negatives: result.ml_negatives,
    })
}

/// A dataset, its optimizer state and the batch sampler, stepped together.
#[derive(Debug, Clone)]
pub struct Trainer {
    cfg: TrainConfig,
    dataset: Dataset,
    state: OptimizerState,
    batch_rng: ChaCha8Rng,
    allow_nonfinite: bool,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, dataset: Dataset) -> Result<Self> {
        cfg.validate()?;
        let state = OptimizerState::init(&cfg, &dataset)?;
        let mut batch_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        batch_rng.set_stream(STREAM_BATCHES);
        Ok(Self {
            cfg,
            dataset,
            state,
            batch_rng,
            allow_nonfinite: false,
        })
    }

    pub fn from_state(cfg: TrainConfig, dataset: Dataset, state: OptimizerState) -> Result<Self> {
        let mut t = Self::new(cfg, dataset)?;
        t.state = state;
        Ok(t)
    }

    pub fn allow_nonfinite(mut self, allow: bool) -> Self {
        self.allow_nonfinite = allow;
        self
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn state(&self) -> &OptimizerState {
        &self.state
    }

    pub fn is_done(&self) -> bool {
        self.state.step >= self.cfg.total_steps()
    }

    pub fn step(&mut self) -> Result<StepOutcome> {
        let batch = sample_batch(
            &self.dataset,
            self.cfg.classes_per_batch,
            self.cfg.samples_per_class_per_batch,
            &mut self.batch_rng,
        )?;
        train_step(
            &mut self.state,
            &self.dataset,
            &batch,
            &self.cfg,
            self.allow_nonfinite,
        )
    }

    /// Runs every remaining step, returning the per-step mean losses.
    pub fn run(&mut self) -> Result<Vec<f64>> {
        let mut losses = Vec::new();
        while !self.is_done() {
            losses.push(self.step()?.loss.value);
        }
        Ok(losses)
    }

    pub fn embeddings(&self) -> Result<Vec<UnitVector>> {
        self.state.embeddings(&self.dataset)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sphere::cos_sim;

    #[test]
    fn weight_decay_alone_only_shrinks() {
        let start = vec![vec![0.6, -0.8, 0.0], vec![0.0, 0.0, 1.0]];
        let mut params = start.clone();
        let mut vel = vec![vec![0.0; 3]; 2];
        let zeros = vec![vec![0.0; 3]; 2];
        for _ in 0..5 {
            sgd_update(&mut params, &mut vel, &zeros, 0.1, 0.9, 0.05);
        }
        for p in &params {
            assert!(l2_norm(p) < 1.0);
        }
        renormalize(&mut params).unwrap();
        for (p, s) in params.iter().zip(&start) {
            for (a, b) in p.iter().zip(s) {
                assert!((a - b).abs() < 1e-15);
            }
        }
    }

    fn spec(c: usize, n: usize, d: usize, conc: f64) -> SyntheticSpec {
        SyntheticSpec {
            num_classes: c,
            samples_per_class: n,
            dim: d,
            cluster_concentration: conc,
            seed: 11,
        }
    }

    #[test]
    fn zero_noise_limit_hits_the_mean() {
        let ds = gen_synthetic(&spec(3, 4, 5, f64::INFINITY)).unwrap();
        for c in 0..3 {
            let idx = ds.class_indices(c);
            for &i in idx {
                let s = cos_sim(&ds.features()[i], &ds.features()[idx[0]]).unwrap();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn antipodal_means() {
        let m = UnitVector::basis(4, 0).unwrap();
        let neg = normalize(&RawVector::new(vec![-1.0, 0.0, 0.0, 0.0]).unwrap()).unwrap();
        let ds = gen_synthetic_with_means(&spec(2, 3, 4, 1e6), &[m, neg]).unwrap();
        let s = cos_sim(&ds.features()[0], &ds.features()[3]).unwrap();
        assert!(s < -0.999_999);
    }

    #[test]
    fn generation_is_deterministic() {
        let a = gen_synthetic(&spec(4, 5, 6, 2.0)).unwrap();
        let b = gen_synthetic(&spec(4, 5, 6, 2.0)).unwrap();
        assert_eq!(a.features(), b.features());
        assert_eq!(a.labels(), b.labels());
    }

    #[test]
    fn spec_validation() {
        assert!(spec(1, 2, 2, 1.0).validate().is_err());
        assert!(spec(2, 2, 1, 1.0).validate().is_err());
        assert!(spec(2, 2, 2, 0.0).validate().is_err());
    }

    #[test]
    fn batch_counts() {
        let ds = gen_synthetic(&spec(5, 4, 3, 1.0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = sample_batch(&ds, 2, 2, &mut rng).unwrap();
        assert_eq!(b.len(), 4);
        let (p, n) = crate::pairgen::mlpg_labels(&b.labels);
        assert_eq!((p.len(), n.len()), (2, 4));

        let b = sample_batch(&ds, 1, 4, &mut rng).unwrap();
        assert_eq!(crate::pairgen::mlpg_labels(&b.labels).1.len(), 0);

        let b = sample_batch(&ds, 5, 1, &mut rng).unwrap();
        let (p, n) = crate::pairgen::mlpg_labels(&b.labels);
        assert_eq!((p.len(), n.len()), (0, 10));

        let mut uniq = b.labels.clone();
        uniq.sort_unstable();
        uniq.dedup();
        assert_eq!(uniq.len(), 5);

        assert!(sample_batch(&ds, 6, 1, &mut rng).is_err());
        assert!(sample_batch(&ds, 2, 5, &mut rng).is_err());
    }

    fn schedule() -> TrainConfig {
        TrainConfig {
            warmup_epochs: 2,
            max_epochs: 10,
            steps_per_epoch: 5,
            base_lr: 0.4,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn lr_schedule_endpoints() {
        let c = schedule();
        assert_eq!(lr_at(0, &c), 0.0);
        assert!((lr_at(5, &c) - 0.2).abs() < 1e-15);
        assert_eq!(lr_at(10, &c), 0.4);
        assert!(lr_at(50, &c).abs() < 1e-12);
        assert!((lr_at(30, &c) - 0.2).abs() < 1e-12);
        for s in 10..50 {
            assert!(lr_at(s + 1, &c) <= lr_at(s, &c));
        }
    }

    #[test]
    fn config_validation() {
        let mut c = TrainConfig::default();
        assert!(c.validate().is_ok());
        c.batch_size = 31;
        assert!(c.validate().is_err());
        let mut c = TrainConfig {
            warmup_epochs: 20,
            ..TrainConfig::default()
        };
        assert!(c.validate().is_err());
        c.warmup_epochs = 0;
        c.base_lr = 0.0;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.loss.gamma = -1.0;
        assert!(matches!(
            c.validate(),
            Err(Error::ConfigInvalid { field: "gamma", .. })
        ));
    }

    #[test]
    fn weights_are_unit_and_reproducible() {
        let a = init_weights(6, 5, 42).unwrap();
        let b = init_weights(6, 5, 42).unwrap();
        for (x, y) in a.rows().iter().zip(b.rows()) {
            assert!((l2_norm(x.as_slice()) - 1.0).abs() < 1e-9);
            assert_eq!(x, y);
        }
    }
}
