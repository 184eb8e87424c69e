//! Spatial primitives: overlap ratio, candidate sampling around a previous
//! location, and score-gated prediction averaging.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::types::{BoundingBox, CandidateSigma};

/// Smallest allowed multiplicative scale jitter; keeps sampled boxes valid.
const MIN_SCALE: f64 = 0.1;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GeometryError {
    #[error("candidate set is empty")]
    EmptyCandidateSet,
    #[error("candidate and score counts differ: {candidates} vs {scores}")]
    LengthMismatch { candidates: usize, scores: usize },
    #[error("candidate score outside [0,1]")]
    ScoreOutOfRange,
}

/// Candidate boxes for one target together with their scorer outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    candidates: Vec<BoundingBox>,
    scores: Vec<f64>,
}

impl CandidateSet {
    pub fn new(candidates: Vec<BoundingBox>, scores: Vec<f64>) -> Result<Self, GeometryError> {
        if candidates.len() != scores.len() {
            return Err(GeometryError::LengthMismatch {
                candidates: candidates.len(),
                scores: scores.len(),
            });
        }
        if scores.iter().any(|s| !(0.0..=1.0).contains(s)) {
            return Err(GeometryError::ScoreOutOfRange);
        }
        Ok(Self { candidates, scores })
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn candidates(&self) -> &[BoundingBox] {
        &self.candidates
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }
}

/// Intersection-over-union of two boxes. Total, symmetric, in [0, 1];
/// 1 exactly when the boxes coincide, 0 when their interiors are disjoint.
/// All areas come from the same reconstructed corners, so self-overlap is
/// exact even where the corner arithmetic rounds.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let (a_left, a_right, a_top, a_bottom) = (a.left(), a.right(), a.top(), a.bottom());
    let (b_left, b_right, b_top, b_bottom) = (b.left(), b.right(), b.top(), b.bottom());
    let iw = (a_right.min(b_right) - a_left.max(b_left)).max(0.0);
    let ih = (a_bottom.min(b_bottom) - a_top.max(b_top)).max(0.0);
    let inter = iw * ih;
    let area_a = (a_right - a_left) * (a_bottom - a_top);
    let area_b = (b_right - b_left) * (b_bottom - b_top);
    inter / (area_a + area_b - inter)
}

/// Draws `q` candidate boxes around `prev`: offsets in x and y are
/// zero-mean Gaussians, the size is scaled by a Gaussian centered at 1.
/// The first candidate is always the unperturbed `prev`, and scale jitter
/// is clamped below so every candidate is a valid box.
pub fn sample_candidates<R: Rng>(
    prev: &BoundingBox,
    q: usize,
    sigma: &CandidateSigma,
    rng: &mut R,
) -> Vec<BoundingBox> {
    let mut out = Vec::with_capacity(q);
    if q == 0 {
        return out;
    }
    out.push(*prev);
    let dx = Normal::new(0.0, sigma.x).expect("sigma.x must be nonnegative");
    let dy = Normal::new(0.0, sigma.y).expect("sigma.y must be nonnegative");
    let dl = Normal::new(1.0, sigma.scale).expect("sigma.scale must be nonnegative");
    for _ in 1..q {
        let scale = dl.sample(rng).max(MIN_SCALE);
        out.push(BoundingBox::new(
            prev.cx + dx.sample(rng),
            prev.cy + dy.sample(rng),
            prev.w * scale,
            prev.h * scale,
        ));
    }
    out
}

/// Field-wise mean of every candidate whose score reaches `alpha` times the
/// maximum score. The comparison is inclusive so the best-scoring candidate
/// always participates, even at `alpha = 1`.
pub fn aggregate_prediction(
    cands: &CandidateSet,
    alpha: f64,
) -> Result<BoundingBox, GeometryError> {
    if cands.is_empty() {
        return Err(GeometryError::EmptyCandidateSet);
    }
    let max = cands
        .scores
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let threshold = alpha * max;
    let (mut cx, mut cy, mut w, mut h) = (0.0, 0.0, 0.0, 0.0);
    let mut count = 0usize;
    for (bbox, score) in cands.candidates.iter().zip(&cands.scores) {
        if *score >= threshold {
            cx += bbox.cx;
            cy += bbox.cy;
            w += bbox.w;
            h += bbox.h;
            count += 1;
        }
    }
    debug_assert!(count > 0, "argmax candidate always passes the threshold");
    let n = count as f64;
    Ok(BoundingBox::new(cx / n, cy / n, w / n, h / n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bbox(cx: f64, cy: f64, w: f64, h: f64) -> BoundingBox {
        BoundingBox::new(cx, cy, w, h)
    }

    #[test]
    fn iou_of_identical_boxes_is_one() {
        let a = bbox(5.0, 5.0, 4.0, 4.0);
        assert_eq!(iou(&a, &a), 1.0);
    }

    #[test]
    fn iou_of_disjoint_boxes_is_zero() {
        let a = bbox(0.0, 0.0, 2.0, 2.0);
        let b = bbox(100.0, 100.0, 2.0, 2.0);
        assert_eq!(iou(&a, &b), 0.0);
    }

    #[test]
    fn iou_partial_overlap_matches_area_arithmetic() {
        // Overlap region is 1x2 = 2; union is 4 + 4 - 2 = 6.
        let a = bbox(1.0, 1.0, 2.0, 2.0);
        let b = bbox(2.0, 1.0, 2.0, 2.0);
        assert!((iou(&a, &b) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn zero_candidates_yield_empty_list() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let prev = bbox(10.0, 10.0, 5.0, 5.0);
        let sigma = CandidateSigma::new(25.0, 25.0, 0.01);
        assert!(sample_candidates(&prev, 0, &sigma, &mut rng).is_empty());
    }

    #[test]
    fn zero_variance_produces_copies() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let prev = bbox(10.0, 10.0, 5.0, 5.0);
        let sigma = CandidateSigma::new(0.0, 0.0, 0.0);
        let cands = sample_candidates(&prev, 5, &sigma, &mut rng);
        assert_eq!(cands.len(), 5);
        assert!(cands.iter().all(|c| *c == prev));
    }

    #[test]
    fn sampling_is_deterministic_under_a_fixed_seed() {
        let prev = bbox(10.0, 10.0, 5.0, 5.0);
        let sigma = CandidateSigma::new(25.0, 25.0, 0.01);
        let mut rng_a = ChaCha8Rng::seed_from_u64(7);
        let mut rng_b = ChaCha8Rng::seed_from_u64(7);
        let a = sample_candidates(&prev, 64, &sigma, &mut rng_a);
        let b = sample_candidates(&prev, 64, &sigma, &mut rng_b);
        assert_eq!(a, b);
    }

    #[test]
    fn first_candidate_is_the_previous_box() {
        let prev = bbox(3.0, 4.0, 5.0, 6.0);
        let sigma = CandidateSigma::new(25.0, 25.0, 0.01);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cands = sample_candidates(&prev, 16, &sigma, &mut rng);
        assert_eq!(cands[0], prev);
    }

    #[test]
    fn single_candidate_aggregates_to_itself() {
        let b = bbox(2.0, 3.0, 4.0, 5.0);
        let set = CandidateSet::new(vec![b], vec![0.4]).unwrap();
        assert_eq!(aggregate_prediction(&set, 0.75).unwrap(), b);
    }

    #[test]
    fn equal_scores_aggregate_to_the_mean() {
        let set = CandidateSet::new(
            vec![bbox(0.0, 0.0, 2.0, 2.0), bbox(4.0, 2.0, 4.0, 6.0)],
            vec![0.5, 0.5],
        )
        .unwrap();
        let mean = aggregate_prediction(&set, 1.0).unwrap();
        assert_eq!(mean, bbox(2.0, 1.0, 3.0, 4.0));
    }

    #[test]
    fn threshold_excludes_low_scoring_candidates() {
        // Max score 0.9, threshold 0.675: candidates 1 and 3 participate.
        let set = CandidateSet::new(
            vec![
                bbox(0.0, 0.0, 2.0, 2.0),
                bbox(100.0, 100.0, 50.0, 50.0),
                bbox(2.0, 4.0, 4.0, 6.0),
            ],
            vec![0.9, 0.5, 0.8],
        )
        .unwrap();
        let agg = aggregate_prediction(&set, 0.75).unwrap();
        assert_eq!(agg, bbox(1.0, 2.0, 3.0, 4.0));
    }

    #[test]
    fn empty_candidate_set_is_rejected() {
        let set = CandidateSet::new(vec![], vec![]).unwrap();
        assert_eq!(
            aggregate_prediction(&set, 0.5),
            Err(GeometryError::EmptyCandidateSet)
        );
    }

    #[test]
    fn mismatched_lengths_are_rejected() {
        let err = CandidateSet::new(vec![bbox(0.0, 0.0, 1.0, 1.0)], vec![]).unwrap_err();
        assert_eq!(
            err,
            GeometryError::LengthMismatch {
                candidates: 1,
                scores: 0
            }
        );
    }

    prop_compose! {
        fn arb_box()(cx in -100.0..100.0f64, cy in -100.0..100.0f64,
                     w in 0.1..50.0f64, h in 0.1..50.0f64) -> BoundingBox {
            BoundingBox::new(cx, cy, w, h)
        }
    }

    proptest! {
        #[test]
        fn iou_is_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
            let ab = iou(&a, &b);
            let ba = iou(&b, &a);
            prop_assert_eq!(ab, ba);
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert_eq!(iou(&a, &a), 1.0);
        }

        #[test]
        fn aggregation_stays_in_the_candidate_hull(
            boxes in proptest::collection::vec(arb_box(), 1..12),
            raw_scores in proptest::collection::vec(0.0..1.0f64, 1..12),
            alpha in 0.0..=1.0f64,
        ) {
            let n = boxes.len().min(raw_scores.len());
            let boxes = boxes[..n].to_vec();
            let scores = raw_scores[..n].to_vec();
            let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let threshold = alpha * max;
            let set = CandidateSet::new(boxes.clone(), scores.clone()).unwrap();
            let agg = aggregate_prediction(&set, alpha).unwrap();
            let included: Vec<&BoundingBox> = boxes
                .iter()
                .zip(&scores)
                .filter(|(_, s)| **s >= threshold)
                .map(|(b, _)| b)
                .collect();
            prop_assert!(!included.is_empty());
            let lo = |f: fn(&BoundingBox) -> f64| {
                included.iter().map(|b| f(b)).fold(f64::INFINITY, f64::min)
            };
            let hi = |f: fn(&BoundingBox) -> f64| {
                included.iter().map(|b| f(b)).fold(f64::NEG_INFINITY, f64::max)
            };
            let eps = 1e-9;
            prop_assert!(agg.cx >= lo(|b| b.cx) - eps && agg.cx <= hi(|b| b.cx) + eps);
            prop_assert!(agg.cy >= lo(|b| b.cy) - eps && agg.cy <= hi(|b| b.cy) + eps);
            prop_assert!(agg.w >= lo(|b| b.w) - eps && agg.w <= hi(|b| b.w) + eps);
            prop_assert!(agg.h >= lo(|b| b.h) - eps && agg.h <= hi(|b| b.h) + eps);
        }

        #[test]
        fn zero_alpha_means_plain_average(
            boxes in proptest::collection::vec(arb_box(), 1..10),
        ) {
            let scores = vec![0.5; boxes.len()];
            let set = CandidateSet::new(boxes.clone(), scores).unwrap();
            let agg = aggregate_prediction(&set, 0.0).unwrap();
            let n = boxes.len() as f64;
            let mean_cx: f64 = boxes.iter().map(|b| b.cx).sum::<f64>() / n;
            prop_assert!((agg.cx - mean_cx).abs() < 1e-9);
        }
    }
}
