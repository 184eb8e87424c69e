//! Region scoring: the frame-feature contract, the detection-pruning
//! scorer, and the per-target online scorers with sample harvesting and
//! hard-negative mining.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use std::collections::BTreeMap;
use thiserror::Error;

use crate::geometry::iou;
use crate::losses::{FeatureVec, LossError};
use crate::types::{BoundingBox, Detection, Observation, TrackerParams};

/// Rejection sampling gives up after this many attempts per requested sample.
const QUOTA_ATTEMPT_FACTOR: usize = 100;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SourceError {
    #[error("box lies fully outside the frame")]
    BoxOutsideFrame,
    #[error("missing frame {frame}")]
    MissingFrame { frame: u32 },
    #[error("frame {frame}: {reason}")]
    Decode { frame: u32, reason: String },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ScoringError {
    #[error(transparent)]
    Source(#[from] SourceError),
    #[error(transparent)]
    Feature(#[from] LossError),
    #[error("scorer creation requires at least one positive sample")]
    EmptyPositives,
    #[error("could not harvest {needed} {kind} samples (got {got}); geometry too constrained")]
    QuotaUnreachable {
        kind: &'static str,
        needed: usize,
        got: usize,
    },
    #[error("pruner training requires at least one ground-truth box")]
    EmptyGroundTruth,
}

/// Provider of per-frame region features. Implementations must return the
/// same feature dimension for every query and be deterministic for a fixed
/// `(frame, box)` pair.
pub trait FrameSource {
    /// Frame width and height in pixels.
    fn dimensions(&self, frame: u32) -> Result<(u32, u32), SourceError>;
    /// Feature vector describing the region of `frame` covered by `bbox`.
    fn features(&self, frame: u32, bbox: &BoundingBox) -> Result<FeatureVec, SourceError>;
    fn feature_dim(&self) -> usize;
}

/// Raw interleaved RGB image, 8 bits per channel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbFrame {
    pub width: u32,
    pub height: u32,
    pub data: Vec<u8>,
}

impl RgbFrame {
    pub fn new(width: u32, height: u32, data: Vec<u8>) -> Self {
        assert_eq!(
            data.len(),
            width as usize * height as usize * 3,
            "buffer size does not match dimensions"
        );
        Self {
            width,
            height,
            data,
        }
    }
}

/// Histogram feature length: an 8x8x8 joint RGB histogram.
pub const HISTOGRAM_DIM: usize = 512;

/// Joint 8x8x8 RGB histogram over the pixels of `bbox` clipped to the
/// frame, L1-normalized to sum one. Errors when the box does not cover any
/// pixel of the frame.
pub fn extract_histogram_features(
    frame: &RgbFrame,
    bbox: &BoundingBox,
) -> Result<FeatureVec, SourceError> {
    let x0 = bbox.left().floor().max(0.0) as i64;
    let x1 = (bbox.right().ceil() as i64).min(frame.width as i64);
    let y0 = bbox.top().floor().max(0.0) as i64;
    let y1 = (bbox.bottom().ceil() as i64).min(frame.height as i64);
    if x0 >= x1 || y0 >= y1 {
        return Err(SourceError::BoxOutsideFrame);
    }
    let mut hist = vec![0.0f64; HISTOGRAM_DIM];
    let mut count = 0usize;
    for y in y0..y1 {
        let row = (y as usize * frame.width as usize + x0 as usize) * 3;
        for x in 0..(x1 - x0) as usize {
            let px = row + x * 3;
            let r = (frame.data[px] >> 5) as usize;
            let g = (frame.data[px + 1] >> 5) as usize;
            let b = (frame.data[px + 2] >> 5) as usize;
            hist[(r << 6) | (g << 3) | b] += 1.0;
            count += 1;
        }
    }
    let norm = 1.0 / count as f64;
    for v in &mut hist {
        *v *= norm;
    }
    Ok(FeatureVec::new(hist))
}

fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Linear model with a logistic output; the shared shape of the pruning
/// scorer and the per-target scorers.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearScorer {
    pub weights: FeatureVec,
    pub bias: f64,
}

impl LinearScorer {
    pub fn zeros(dim: usize) -> Self {
        Self {
            weights: FeatureVec::zeros(dim),
            bias: 0.0,
        }
    }

    /// Logistic of the linear form; always inside (0, 1) for finite input.
    pub fn score(&self, feat: &FeatureVec) -> Result<f64, ScoringError> {
        Ok(logistic(self.weights.dot(feat)? + self.bias))
    }
}

/// Stochastic-gradient settings for scorer training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdConfig {
    pub passes: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl Default for SgdConfig {
    /// Online per-target training: 50 passes at the doubled rate 0.1.
    fn default() -> Self {
        Self {
            passes: 50,
            learning_rate: 0.1,
            batch_size: 32,
        }
    }
}

impl SgdConfig {
    /// Offline pruner training runs at half the online rate.
    pub fn pruner() -> Self {
        Self {
            learning_rate: 0.05,
            ..Self::default()
        }
    }
}

/// Log-loss SGD over a fixed sample set; labels are 1 for positives and 0
/// for negatives.
fn sgd_train<R: Rng>(
    model: &mut LinearScorer,
    positives: &[FeatureVec],
    negatives: &[FeatureVec],
    cfg: &SgdConfig,
    rng: &mut R,
) -> Result<(), ScoringError> {
    let samples: Vec<(&FeatureVec, f64)> = positives
        .iter()
        .map(|f| (f, 1.0))
        .chain(negatives.iter().map(|f| (f, 0.0)))
        .collect();
    if samples.is_empty() || cfg.passes == 0 {
        return Ok(());
    }
    let dim = model.weights.dim();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut grad = vec![0.0f64; dim];
    for _ in 0..cfg.passes {
        // Fisher-Yates shuffle; keeps the rng stream compact.
        for i in (1..order.len()).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let mut bias_grad = 0.0;
            for &idx in chunk {
                let (feat, label) = samples[idx];
                let err = model.score(feat)? - label;
                for (g, v) in grad.iter_mut().zip(feat.values()) {
                    *g += err * v;
                }
                bias_grad += err;
            }
            let step = cfg.learning_rate / chunk.len() as f64;
            for (w, g) in model.weights.values_mut().iter_mut().zip(&grad) {
                *w -= step * g;
            }
            model.bias -= step * bias_grad;
        }
    }
    Ok(())
}

/// Detection-pruning scorer: either a trained linear model over region
/// features or a fixed calibration of the raw detector confidence.
#[derive(Debug, Clone, PartialEq)]
pub enum PruningScorer {
    Model(LinearScorer),
    Confidence { gain: f64, offset: f64 },
}

impl PruningScorer {
    pub fn confidence_passthrough() -> Self {
        Self::Confidence {
            gain: 1.0,
            offset: 0.0,
        }
    }
}

/// Keeps detections whose pruning score reaches `accept_threshold`,
/// preserving input order. Boxes that fall outside the frame score zero.
pub fn prune_detections(
    dets: &[Detection],
    pruner: &PruningScorer,
    source: &dyn FrameSource,
    accept_threshold: f64,
) -> Result<Vec<Observation>, ScoringError> {
    let mut out = Vec::new();
    for det in dets {
        let score = match pruner {
            PruningScorer::Model(model) => match source.features(det.frame, &det.bbox) {
                Ok(feat) => model.score(&feat)?,
                Err(SourceError::BoxOutsideFrame) => 0.0,
                Err(e) => return Err(e.into()),
            },
            PruningScorer::Confidence { gain, offset } => logistic(gain * det.confidence + offset),
        };
        if score >= accept_threshold {
            out.push(Observation::new(det.bbox, score));
        }
    }
    Ok(out)
}

/// Feature samples harvested around a target: overlapping positives and
/// far-away negatives.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub positives: Vec<FeatureVec>,
    pub negatives: Vec<FeatureVec>,
}

fn sample_positive_box<R: Rng>(target: &BoundingBox, rng: &mut R) -> BoundingBox {
    let dx = Normal::new(0.0, 0.12 * target.w).expect("positive sigma");
    let dy = Normal::new(0.0, 0.12 * target.h).expect("positive sigma");
    let dl = Normal::<f64>::new(1.0, 0.05).expect("positive sigma");
    let scale = dl.sample(rng).max(0.1);
    BoundingBox::new(
        target.cx + dx.sample(rng),
        target.cy + dy.sample(rng),
        target.w * scale,
        target.h * scale,
    )
}

fn sample_negative_box<R: Rng>(
    target: &BoundingBox,
    frame_dims: (u32, u32),
    rng: &mut R,
) -> BoundingBox {
    let scale = rng.random_range(0.7..1.3);
    BoundingBox::new(
        rng.random_range(0.0..frame_dims.0 as f64),
        rng.random_range(0.0..frame_dims.1 as f64),
        target.w * scale,
        target.h * scale,
    )
}

/// Rejection-samples exactly `n_pos` positives (overlap above `theta_pos`)
/// and `n_neg` negatives (overlap below `theta_neg`) around `target_box`,
/// returning their features. Errors when a quota cannot be met within the
/// attempt budget, which signals degenerate geometry.
pub fn harvest_samples<R: Rng>(
    target_box: &BoundingBox,
    frame: u32,
    source: &dyn FrameSource,
    params: &TrackerParams,
    rng: &mut R,
) -> Result<SampleSet, ScoringError> {
    let dims = source.dimensions(frame)?;
    let mut positives = Vec::with_capacity(params.n_pos);
    let mut attempts = 0usize;
    while positives.len() < params.n_pos {
        attempts += 1;
        if attempts > QUOTA_ATTEMPT_FACTOR * params.n_pos {
            return Err(ScoringError::QuotaUnreachable {
                kind: "positive",
                needed: params.n_pos,
                got: positives.len(),
            });
        }
        let candidate = sample_positive_box(target_box, rng);
        if iou(&candidate, target_box) <= params.theta_pos {
            continue;
        }
        match source.features(frame, &candidate) {
            Ok(feat) => positives.push(feat),
            Err(SourceError::BoxOutsideFrame) => continue,
            Err(e) => return Err(e.into()),
        }
    }

    let mut negatives = Vec::with_capacity(params.n_neg);
    attempts = 0;
    while negatives.len() < params.n_neg {
        attempts += 1;
        if attempts > QUOTA_ATTEMPT_FACTOR * params.n_neg {
            return Err(ScoringError::QuotaUnreachable {
                kind: "negative",
                needed: params.n_neg,
                got: negatives.len(),
            });
        }
        let candidate = sample_negative_box(target_box, dims, rng);
        if iou(&candidate, target_box) >= params.theta_neg {
            continue;
        }
        match source.features(frame, &candidate) {
            Ok(feat) => negatives.push(feat),
            Err(SourceError::BoxOutsideFrame) => continue,
            Err(e) => return Err(e.into()),
        }
    }

    Ok(SampleSet {
        positives,
        negatives,
    })
}

/// Online per-target scorer with a bounded pool of mined hard negatives.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceScorer {
    model: LinearScorer,
    hard_pool: Vec<FeatureVec>,
    pool_capacity: usize,
}

impl InstanceScorer {
    pub fn score(&self, feat: &FeatureVec) -> Result<f64, ScoringError> {
        self.model.score(feat)
    }

    pub fn model(&self) -> &LinearScorer {
        &self.model
    }

    pub fn hard_pool(&self) -> &[FeatureVec] {
        &self.hard_pool
    }

    /// Merges the freshly harvested negatives into the hard pool, keeping
    /// only the highest-scoring (hardest) entries up to capacity, then runs
    /// SGD on the positives against the pool.
    pub fn update<R: Rng>(
        &mut self,
        samples: &SampleSet,
        cfg: &SgdConfig,
        rng: &mut R,
    ) -> Result<(), ScoringError> {
        let mut pool = std::mem::take(&mut self.hard_pool);
        pool.extend(samples.negatives.iter().cloned());
        let mut scored = pool
            .into_iter()
            .map(|f| self.model.score(&f).map(|s| (s, f)))
            .collect::<Result<Vec<_>, _>>()?;
        scored.sort_by(|a, b| b.0.partial_cmp(&a.0).expect("scores are finite"));
        scored.truncate(self.pool_capacity);
        self.hard_pool = scored.into_iter().map(|(_, f)| f).collect();
        sgd_train(
            &mut self.model,
            &samples.positives,
            &self.hard_pool,
            cfg,
            rng,
        )
    }
}

/// Trains a fresh per-target scorer. The model starts from the pruner's
/// weights and is fit on the target's positives against its own negatives
/// plus the positives of every other maintained target.
pub fn create_instance_scorer<R: Rng>(
    samples: &SampleSet,
    other_target_samples: &[SampleSet],
    init: &PruningScorer,
    pool_capacity: usize,
    cfg: &SgdConfig,
    rng: &mut R,
) -> Result<InstanceScorer, ScoringError> {
    let Some(first) = samples.positives.first() else {
        return Err(ScoringError::EmptyPositives);
    };
    let dim = first.dim();
    let mut model = match init {
        PruningScorer::Model(m) => {
            if m.weights.dim() != dim {
                return Err(LossError::DimensionMismatch {
                    left: m.weights.dim(),
                    right: dim,
                }
                .into());
            }
            m.clone()
        }
        PruningScorer::Confidence { .. } => LinearScorer::zeros(dim),
    };
    let negatives: Vec<FeatureVec> = samples
        .negatives
        .iter()
        .chain(other_target_samples.iter().flat_map(|s| &s.positives))
        .cloned()
        .collect();
    sgd_train(&mut model, &samples.positives, &negatives, cfg, rng)?;
    Ok(InstanceScorer {
        model,
        hard_pool: Vec::new(),
        pool_capacity,
    })
}

/// Offline pruner training settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrunerTrainConfig {
    pub sgd: SgdConfig,
    /// False-positive harvesting rounds after the initial fit.
    pub harvest_rounds: usize,
    /// Jittered positives added per ground-truth box.
    pub jitters_per_box: usize,
    /// Random negatives drawn per ground-truth box for the initial fit.
    pub negatives_per_box: usize,
    /// Candidate negatives scored per frame in each harvesting round.
    pub harvest_pool_per_frame: usize,
}

impl Default for PrunerTrainConfig {
    fn default() -> Self {
        Self {
            sgd: SgdConfig::pruner(),
            harvest_rounds: 1,
            jitters_per_box: 3,
            negatives_per_box: 4,
            harvest_pool_per_frame: 16,
        }
    }
}

fn low_overlap_box<R: Rng>(
    boxes: &[BoundingBox],
    dims: (u32, u32),
    theta_neg: f64,
    rng: &mut R,
) -> Option<BoundingBox> {
    let template = boxes[rng.random_range(0..boxes.len())];
    for _ in 0..QUOTA_ATTEMPT_FACTOR {
        let candidate = sample_negative_box(&template, dims, rng);
        if boxes.iter().all(|b| iou(&candidate, b) < theta_neg) {
            return Some(candidate);
        }
    }
    None
}

/// Trains the detection-pruning scorer on labeled frames: fit on positives
/// plus random negatives, then augment the training set with the false
/// positives found in a larger negative pool and fit again.
pub fn train_pruner<R: Rng>(
    ground_truth: &BTreeMap<u32, Vec<BoundingBox>>,
    source: &dyn FrameSource,
    params: &TrackerParams,
    cfg: &PrunerTrainConfig,
    rng: &mut R,
) -> Result<PruningScorer, ScoringError> {
    if ground_truth.values().all(|boxes| boxes.is_empty()) {
        return Err(ScoringError::EmptyGroundTruth);
    }

    let mut positives = Vec::new();
    let mut negatives = Vec::new();
    for (&frame, boxes) in ground_truth {
        if boxes.is_empty() {
            continue;
        }
        let dims = source.dimensions(frame)?;
        for bbox in boxes {
            match source.features(frame, bbox) {
                Ok(feat) => positives.push(feat),
                Err(SourceError::BoxOutsideFrame) => {}
                Err(e) => return Err(e.into()),
            }
            let mut added = 0;
            let mut attempts = 0;
            while added < cfg.jitters_per_box && attempts < QUOTA_ATTEMPT_FACTOR {
                attempts += 1;
                let candidate = sample_positive_box(bbox, rng);
                if iou(&candidate, bbox) <= params.theta_pos {
                    continue;
                }
                match source.features(frame, &candidate) {
                    Ok(feat) => {
                        positives.push(feat);
                        added += 1;
                    }
                    Err(SourceError::BoxOutsideFrame) => {}
                    Err(e) => return Err(e.into()),
                }
            }
            for _ in 0..cfg.negatives_per_box {
                if let Some(candidate) = low_overlap_box(boxes, dims, params.theta_neg, rng) {
                    match source.features(frame, &candidate) {
                        Ok(feat) => negatives.push(feat),
                        Err(SourceError::BoxOutsideFrame) => {}
                        Err(e) => return Err(e.into()),
                    }
                }
            }
        }
    }
    if positives.is_empty() {
        return Err(ScoringError::EmptyGroundTruth);
    }

    let mut model = LinearScorer::zeros(source.feature_dim());
    sgd_train(&mut model, &positives, &negatives, &cfg.sgd, rng)?;

    for _ in 0..cfg.harvest_rounds {
        let mut mined = 0;
        for (&frame, boxes) in ground_truth {
            if boxes.is_empty() {
                continue;
            }
            let dims = source.dimensions(frame)?;
            for _ in 0..cfg.harvest_pool_per_frame {
                let Some(candidate) = low_overlap_box(boxes, dims, params.theta_neg, rng) else {
                    continue;
                };
                let feat = match source.features(frame, &candidate) {
                    Ok(feat) => feat,
                    Err(SourceError::BoxOutsideFrame) => continue,
                    Err(e) => return Err(e.into()),
                };
                if model.score(&feat)? >= 0.5 {
                    negatives.push(feat);
                    mined += 1;
                }
            }
        }
        if mined == 0 {
            break;
        }
        sgd_train(&mut model, &positives, &negatives, &cfg.sgd, rng)?;
    }

    Ok(PruningScorer::Model(model))
}
