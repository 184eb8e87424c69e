//! Shared value types and tracker configuration.

use thiserror::Error;

/// Center-parameterized axis-aligned box in pixel units.
///
/// Width and height are strictly positive; all spatial reasoning in the
/// crate (overlap, candidate sampling, prediction averaging) happens on
/// this representation. Corner-based formats are converted at the I/O
/// boundary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BoundingBox {
    /// `w` and `h` must be strictly positive.
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        assert!(
            w > 0.0 && h > 0.0 && w.is_finite() && h.is_finite(),
            "degenerate box: w={w}, h={h}"
        );
        Self { cx, cy, w, h }
    }

    pub fn left(&self) -> f64 {
        self.cx - self.w / 2.0
    }

    pub fn right(&self) -> f64 {
        self.cx + self.w / 2.0
    }

    pub fn top(&self) -> f64 {
        self.cy - self.h / 2.0
    }

    pub fn bottom(&self) -> f64 {
        self.cy + self.h / 2.0
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// Area of the intersection with `other`, zero when disjoint.
    pub fn intersection_area(&self, other: &BoundingBox) -> f64 {
        let iw = (self.right().min(other.right()) - self.left().max(other.left())).max(0.0);
        let ih = (self.bottom().min(other.bottom()) - self.top().max(other.top())).max(0.0);
        iw * ih
    }
}

/// Raw detector proposal for a single frame, before pruning.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    /// 1-based frame index.
    pub frame: u32,
    pub bbox: BoundingBox,
    /// Detector score; unbounded.
    pub confidence: f64,
}

impl Detection {
    pub fn new(frame: u32, bbox: BoundingBox, confidence: f64) -> Self {
        assert!(frame >= 1, "frame indices are 1-based");
        Self {
            frame,
            bbox,
            confidence,
        }
    }
}

/// A detection that survived pruning; only accepted observations exist.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub bbox: BoundingBox,
    /// Pruning score in [0, 1]; at least the accept threshold by construction.
    pub prune_score: f64,
}

impl Observation {
    pub fn new(bbox: BoundingBox, prune_score: f64) -> Self {
        assert!(
            (0.0..=1.0).contains(&prune_score),
            "prune score outside [0,1]: {prune_score}"
        );
        Self { bbox, prune_score }
    }
}

/// A maintained target's predicted location for the current frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub track_id: u64,
    pub bbox: BoundingBox,
    /// The target's own scorer evaluated at the predicted box, in [0, 1].
    pub self_score: f64,
}

impl Prediction {
    pub fn new(track_id: u64, bbox: BoundingBox, self_score: f64) -> Self {
        assert!(
            (0.0..=1.0).contains(&self_score),
            "self score outside [0,1]: {self_score}"
        );
        Self {
            track_id,
            bbox,
            self_score,
        }
    }
}

/// Lifecycle state of a tracked target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TargetState {
    /// Newly detected; transient, becomes `Tracked` in the same frame.
    New,
    Tracked,
    /// Not found this frame; still maintained and predicted.
    Lost,
    /// Lost for too many consecutive frames; identity and scorer removed.
    Discarded,
}

/// Per-target Gaussian sampling widths for candidate generation:
/// pixel offsets in x and y plus a multiplicative scale jitter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidateSigma {
    pub x: f64,
    pub y: f64,
    pub scale: f64,
}

impl CandidateSigma {
    pub fn new(x: f64, y: f64, scale: f64) -> Self {
        Self { x, y, scale }
    }
}

/// Tracker configuration. Defaults follow the values the engine was tuned
/// with; every field can be overridden through the config file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackerParams {
    /// Weight of the confidence term in the lost (self-assignment) block.
    pub lambda_lost: f64,
    /// Weight of the confidence term in the prediction/observation block.
    pub lambda_tracked: f64,
    /// Weight of the confidence term in the new-target block.
    pub lambda_new: f64,
    /// Candidate sampling widths (pixels, pixels, scale ratio).
    pub sigma_s: CandidateSigma,
    /// Fraction of the maximum candidate score required for a candidate to
    /// enter the prediction average.
    pub alpha: f64,
    /// Number of candidates sampled per target per frame.
    pub candidate_count: usize,
    /// Tracked targets whose self score falls below this are retrained.
    pub update_threshold: f64,
    /// Consecutive lost frames tolerated before a track is discarded.
    pub lost_patience: u32,
    /// Weight of the embedding term in the multi-task training loss.
    pub mu: f64,
    /// Positive samples harvested per scorer training round.
    pub n_pos: usize,
    /// Negative samples harvested per scorer training round.
    pub n_neg: usize,
    /// Minimum overlap with the target for a positive sample (exclusive).
    pub theta_pos: f64,
    /// Maximum overlap with the target for a negative sample (exclusive).
    pub theta_neg: f64,
    /// Minimum pruning score for a detection to become an observation.
    pub accept_threshold: f64,
}

impl Default for TrackerParams {
    fn default() -> Self {
        Self {
            lambda_lost: 0.2,
            lambda_tracked: 0.85,
            lambda_new: 0.4,
            sigma_s: CandidateSigma::new(25.0, 25.0, 0.01),
            alpha: 0.75,
            candidate_count: 256,
            update_threshold: 0.5,
            lost_patience: 10,
            mu: 0.7,
            n_pos: 500,
            n_neg: 256,
            theta_pos: 0.5,
            theta_neg: 0.3,
            accept_threshold: 0.5,
        }
    }
}

/// Configuration invariant violations.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParamsError {
    #[error("parameter `{0}` must lie in [0, 1]")]
    UnitInterval(&'static str),
    #[error("parameter `{0}` must be nonnegative")]
    Negative(&'static str),
    #[error("parameter `{0}` must be positive")]
    NotPositive(&'static str),
    #[error("theta_neg must be strictly less than theta_pos")]
    ThetaOrder,
}

impl TrackerParams {
    pub fn validate(&self) -> Result<(), ParamsError> {
        let unit = [
            ("lambda_lost", self.lambda_lost),
            ("lambda_tracked", self.lambda_tracked),
            ("lambda_new", self.lambda_new),
            ("alpha", self.alpha),
            ("update_threshold", self.update_threshold),
            ("theta_pos", self.theta_pos),
            ("theta_neg", self.theta_neg),
            ("accept_threshold", self.accept_threshold),
        ];
        for (name, value) in unit {
            if !(0.0..=1.0).contains(&value) {
                return Err(ParamsError::UnitInterval(name));
            }
        }
        if self.mu < 0.0 || !self.mu.is_finite() {
            return Err(ParamsError::Negative("mu"));
        }
        for (name, value) in [
            ("sigma_s.x", self.sigma_s.x),
            ("sigma_s.y", self.sigma_s.y),
            ("sigma_s.scale", self.sigma_s.scale),
        ] {
            if value < 0.0 || !value.is_finite() {
                return Err(ParamsError::Negative(name));
            }
        }
        if self.candidate_count == 0 {
            return Err(ParamsError::NotPositive("candidate_count"));
        }
        if self.lost_patience == 0 {
            return Err(ParamsError::NotPositive("lost_patience"));
        }
        if self.n_pos == 0 {
            return Err(ParamsError::NotPositive("n_pos"));
        }
        if self.n_neg == 0 {
            return Err(ParamsError::NotPositive("n_neg"));
        }
        if self.theta_neg >= self.theta_pos {
            return Err(ParamsError::ThetaOrder);
        }
        Ok(())
    }
}
