//! Deterministic synthetic scenarios: ground-truth trajectories, a noisy
//! detector, and a feature oracle, so the whole pipeline can run and be
//! verified without real imagery.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use std::collections::hash_map::DefaultHasher;
use std::collections::BTreeMap;
use std::hash::{Hash, Hasher};
use thiserror::Error;

use crate::losses::FeatureVec;
use crate::metrics::AnnotatedSequence;
use crate::scoring::{FrameSource, SourceError};
use crate::types::{BoundingBox, Detection};

/// Minimum overlap with a visible target for a query region to pick up
/// that target's appearance.
pub const ORACLE_IOU_FLOOR: f64 = 0.3;

/// Shared foreground component separating every target from background.
const FOREGROUND_OFFSET: f64 = 8.0;

/// Upper bound on false positives drawn in a single frame.
const MAX_FALSE_POSITIVES_PER_FRAME: usize = 64;

#[derive(Debug, Error, PartialEq)]
pub enum SimulatorError {
    #[error("scenario field `{0}` is out of range")]
    OutOfRange(&'static str),
    #[error("target box does not fit the arena")]
    BoxTooLarge,
    #[error("`{0}` must list one entry per target")]
    WrongPerTargetLength(&'static str),
    #[error("spawn box {0} leaves the arena")]
    SpawnOutsideArena(usize),
    #[error("occlusion window references unknown target {0}")]
    UnknownOcclusionTarget(u64),
}

/// Detections of one target are suppressed during `[start, start + duration)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OcclusionWindow {
    /// 1-based ground-truth identity.
    pub target: u64,
    pub start: u32,
    pub duration: u32,
}

/// Complete description of a synthetic scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub num_targets: usize,
    pub frames: u32,
    /// Arena width and height in pixels.
    pub arena: (f64, f64),
    /// Constant box size shared by all targets.
    pub box_size: (f64, f64),
    /// Speed magnitude range used when velocities are drawn.
    pub speed_range: (f64, f64),
    /// Explicit per-target velocities; drawn from `speed_range` when absent.
    pub velocities: Option<Vec<(f64, f64)>>,
    /// Explicit per-target spawn centers; drawn uniformly when absent.
    pub spawns: Option<Vec<(f64, f64)>>,
    /// Per-frame Gaussian position jitter.
    pub sigma_motion: f64,
    /// Pairwise distance between target feature signatures.
    pub appearance_separation: f64,
    /// Per-component Gaussian noise added to every feature query.
    pub feature_noise: f64,
    /// Probability that a visible target's detection is dropped.
    pub miss_rate: f64,
    /// Expected false positives per frame.
    pub fp_rate: f64,
    /// Gaussian position noise on detection boxes, in pixels.
    pub det_noise: f64,
    pub occlusions: Vec<OcclusionWindow>,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            num_targets: 3,
            frames: 100,
            arena: (640.0, 480.0),
            box_size: (30.0, 50.0),
            speed_range: (1.0, 4.0),
            velocities: None,
            spawns: None,
            sigma_motion: 0.5,
            appearance_separation: 8.0,
            feature_noise: 0.5,
            miss_rate: 0.0,
            fp_rate: 0.0,
            det_noise: 0.0,
            occlusions: Vec::new(),
        }
    }
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<(), SimulatorError> {
        if self.num_targets == 0 {
            return Err(SimulatorError::OutOfRange("num_targets"));
        }
        if self.frames == 0 {
            return Err(SimulatorError::OutOfRange("frames"));
        }
        if self.arena.0 <= 0.0 || self.arena.1 <= 0.0 {
            return Err(SimulatorError::OutOfRange("arena"));
        }
        if self.box_size.0 <= 0.0 || self.box_size.1 <= 0.0 {
            return Err(SimulatorError::OutOfRange("box_size"));
        }
        if self.box_size.0 > self.arena.0 || self.box_size.1 > self.arena.1 {
            return Err(SimulatorError::BoxTooLarge);
        }
        if !(0.0..=1.0).contains(&self.miss_rate) {
            return Err(SimulatorError::OutOfRange("miss_rate"));
        }
        if self.fp_rate < 0.0 {
            return Err(SimulatorError::OutOfRange("fp_rate"));
        }
        if self.det_noise < 0.0 || self.sigma_motion < 0.0 {
            return Err(SimulatorError::OutOfRange("noise"));
        }
        if self.feature_noise < 0.0 || self.appearance_separation < 0.0 {
            return Err(SimulatorError::OutOfRange("appearance"));
        }
        if self.speed_range.0 < 0.0 || self.speed_range.1 < self.speed_range.0 {
            return Err(SimulatorError::OutOfRange("speed_range"));
        }
        if let Some(v) = &self.velocities {
            if v.len() != self.num_targets {
                return Err(SimulatorError::WrongPerTargetLength("velocities"));
            }
        }
        if let Some(s) = &self.spawns {
            if s.len() != self.num_targets {
                return Err(SimulatorError::WrongPerTargetLength("spawns"));
            }
            for (i, (cx, cy)) in s.iter().enumerate() {
                let half_w = self.box_size.0 / 2.0;
                let half_h = self.box_size.1 / 2.0;
                if *cx < half_w
                    || *cx > self.arena.0 - half_w
                    || *cy < half_h
                    || *cy > self.arena.1 - half_h
                {
                    return Err(SimulatorError::SpawnOutsideArena(i));
                }
            }
        }
        for window in &self.occlusions {
            if window.target == 0 || window.target > self.num_targets as u64 {
                return Err(SimulatorError::UnknownOcclusionTarget(window.target));
            }
        }
        Ok(())
    }
}

/// Feature oracle over the generated world. A query region picks up the
/// signature of the visible target it overlaps most (when that overlap
/// clears the floor), otherwise the background signature; per-component
/// Gaussian noise is derived by hashing the query, so a fixed
/// `(frame, box)` always yields the same vector.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSource {
    seed: u64,
    arena: (u32, u32),
    dim: usize,
    signatures: Vec<FeatureVec>,
    feature_noise: f64,
    visible: BTreeMap<u32, Vec<(usize, BoundingBox)>>,
}

impl SyntheticSource {
    pub fn signatures(&self) -> &[FeatureVec] {
        &self.signatures
    }

    pub fn feature_noise(&self) -> f64 {
        self.feature_noise
    }

    fn query_rng(&self, frame: u32, bbox: &BoundingBox) -> ChaCha8Rng {
        let mut hasher = DefaultHasher::new();
        self.seed.hash(&mut hasher);
        frame.hash(&mut hasher);
        bbox.cx.to_bits().hash(&mut hasher);
        bbox.cy.to_bits().hash(&mut hasher);
        bbox.w.to_bits().hash(&mut hasher);
        bbox.h.to_bits().hash(&mut hasher);
        ChaCha8Rng::seed_from_u64(hasher.finish())
    }
}

impl FrameSource for SyntheticSource {
    fn dimensions(&self, _frame: u32) -> Result<(u32, u32), SourceError> {
        Ok(self.arena)
    }

    fn features(&self, frame: u32, bbox: &BoundingBox) -> Result<FeatureVec, SourceError> {
        let best = self
            .visible
            .get(&frame)
            .into_iter()
            .flatten()
            .map(|(idx, gt_box)| (*idx, crate::geometry::iou(bbox, gt_box)))
            .max_by(|a, b| a.1.partial_cmp(&b.1).expect("iou is finite"));
        let base: &[f64] = match best {
            Some((idx, overlap)) if overlap > ORACLE_IOU_FLOOR => self.signatures[idx].values(),
            _ => &[],
        };
        let mut rng = self.query_rng(frame, bbox);
        let noise = Normal::new(0.0, self.feature_noise).expect("noise sigma is nonnegative");
        let values = (0..self.dim)
            .map(|i| base.get(i).copied().unwrap_or(0.0) + noise.sample(&mut rng))
            .collect();
        Ok(FeatureVec::new(values))
    }

    fn feature_dim(&self) -> usize {
        self.dim
    }
}

/// A generated scenario: the ground truth, the detector output, and the
/// feature oracle, all fully determined by the spec and seed.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticWorld {
    pub gt: AnnotatedSequence,
    pub detections: BTreeMap<u32, Vec<Detection>>,
    pub source: SyntheticSource,
}

impl SyntheticWorld {
    /// Ground-truth boxes per frame, stripped of identities; the shape the
    /// pruner trainer consumes.
    pub fn gt_boxes(&self) -> BTreeMap<u32, Vec<BoundingBox>> {
        self.gt
            .frames()
            .iter()
            .map(|(frame, items)| (*frame, items.iter().map(|(_, b)| *b).collect()))
            .collect()
    }
}

fn occluded(spec: &ScenarioSpec, target_id: u64, frame: u32) -> bool {
    spec.occlusions
        .iter()
        .any(|w| w.target == target_id && frame >= w.start && (frame - w.start) < w.duration)
}

/// Generates the world for `spec`. Targets move with constant velocity plus
/// jitter and reflect off the arena walls; detections are jittered copies
/// of the visible ground truth with misses and Poisson false positives.
pub fn generate(spec: &ScenarioSpec, seed: u64) -> Result<SyntheticWorld, SimulatorError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (arena_w, arena_h) = spec.arena;
    let (box_w, box_h) = spec.box_size;
    let half_w = box_w / 2.0;
    let half_h = box_h / 2.0;

    let dim = (spec.num_targets + 1).max(32);
    let per_axis = spec.appearance_separation / std::f64::consts::SQRT_2;
    let signatures: Vec<FeatureVec> = (0..spec.num_targets)
        .map(|i| {
            let mut sig = vec![0.0; dim];
            sig[0] = FOREGROUND_OFFSET;
            sig[1 + i] = per_axis;
            FeatureVec::new(sig)
        })
        .collect();

    let mut positions: Vec<(f64, f64)> = match &spec.spawns {
        Some(spawns) => spawns.clone(),
        None => (0..spec.num_targets)
            .map(|_| {
                (
                    rng.random_range(half_w..=(arena_w - half_w)),
                    rng.random_range(half_h..=(arena_h - half_h)),
                )
            })
            .collect(),
    };
    let mut velocities: Vec<(f64, f64)> = match &spec.velocities {
        Some(v) => v.clone(),
        None => (0..spec.num_targets)
            .map(|_| {
                let speed = rng.random_range(spec.speed_range.0..=spec.speed_range.1);
                let angle = rng.random_range(0.0..std::f64::consts::TAU);
                (speed * angle.cos(), speed * angle.sin())
            })
            .collect(),
    };

    let motion_jitter = Normal::new(0.0, spec.sigma_motion).expect("sigma_motion checked");
    let det_jitter = Normal::new(0.0, spec.det_noise).expect("det_noise checked");
    let fp_dist = if spec.fp_rate > 0.0 {
        Some(Poisson::new(spec.fp_rate).expect("fp_rate checked"))
    } else {
        None
    };

    let mut gt = AnnotatedSequence::new();
    let mut visible: BTreeMap<u32, Vec<(usize, BoundingBox)>> = BTreeMap::new();
    let mut detections: BTreeMap<u32, Vec<Detection>> = BTreeMap::new();

    for frame in 1..=spec.frames {
        if frame > 1 {
            for idx in 0..spec.num_targets {
                let (vx, vy) = velocities[idx];
                let (mut cx, mut cy) = positions[idx];
                cx += vx + motion_jitter.sample(&mut rng);
                cy += vy + motion_jitter.sample(&mut rng);
                // Reflect off the walls, keeping the whole box in-arena.
                let (lo_x, hi_x) = (half_w, arena_w - half_w);
                let (lo_y, hi_y) = (half_h, arena_h - half_h);
                for _ in 0..4 {
                    if cx < lo_x {
                        cx = 2.0 * lo_x - cx;
                        velocities[idx].0 = -velocities[idx].0;
                    } else if cx > hi_x {
                        cx = 2.0 * hi_x - cx;
                        velocities[idx].0 = -velocities[idx].0;
                    } else {
                        break;
                    }
                }
                for _ in 0..4 {
                    if cy < lo_y {
                        cy = 2.0 * lo_y - cy;
                        velocities[idx].1 = -velocities[idx].1;
                    } else if cy > hi_y {
                        cy = 2.0 * hi_y - cy;
                        velocities[idx].1 = -velocities[idx].1;
                    } else {
                        break;
                    }
                }
                positions[idx] = (cx.clamp(lo_x, hi_x), cy.clamp(lo_y, hi_y));
            }
        }

        let frame_dets = detections.entry(frame).or_default();
        let frame_visible = visible.entry(frame).or_default();
        for idx in 0..spec.num_targets {
            let id = idx as u64 + 1;
            let bbox = BoundingBox::new(positions[idx].0, positions[idx].1, box_w, box_h);
            gt.insert(frame, id, bbox).expect("unique ids per frame");
            if occluded(spec, id, frame) {
                continue;
            }
            frame_visible.push((idx, bbox));
            if spec.miss_rate > 0.0 && rng.random::<f64>() < spec.miss_rate {
                continue;
            }
            let jittered = BoundingBox::new(
                bbox.cx + det_jitter.sample(&mut rng),
                bbox.cy + det_jitter.sample(&mut rng),
                box_w,
                box_h,
            );
            frame_dets.push(Detection::new(frame, jittered, 1.0));
        }
        if let Some(dist) = &fp_dist {
            let count = (dist.sample(&mut rng) as usize).min(MAX_FALSE_POSITIVES_PER_FRAME);
            for _ in 0..count {
                let scale = rng.random_range(0.7..1.4);
                let bbox = BoundingBox::new(
                    rng.random_range(0.0..arena_w),
                    rng.random_range(0.0..arena_h),
                    box_w * scale,
                    box_h * scale,
                );
                frame_dets.push(Detection::new(frame, bbox, 1.0));
            }
        }
    }

    let source = SyntheticSource {
        seed,
        arena: (arena_w as u32, arena_h as u32),
        dim,
        signatures,
        feature_noise: spec.feature_noise,
        visible,
    };
    Ok(SyntheticWorld {
        gt,
        detections,
        source,
    })
}
