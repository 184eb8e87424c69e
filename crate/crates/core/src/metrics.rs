//! Sequence-level tracking evaluation: frame-wise persistent matching for
//! the accuracy/error counts, a global identity matching for IDF1, and
//! coverage ratios for mostly-tracked / mostly-lost.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use thiserror::Error;

use crate::association::hungarian_min_cost;
use crate::geometry::iou;
use crate::types::BoundingBox;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("ground truth is empty")]
    EmptyGroundTruth,
    #[error("iou threshold must lie in (0, 1]")]
    BadThreshold,
    #[error("frame {frame}: duplicate identity {id}")]
    DuplicateIdentity { frame: u32, id: u64 },
}

/// Identity-labeled boxes per frame.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AnnotatedSequence {
    frames: BTreeMap<u32, Vec<(u64, BoundingBox)>>,
}

impl AnnotatedSequence {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds one box; identities must be unique within a frame.
    pub fn insert(&mut self, frame: u32, id: u64, bbox: BoundingBox) -> Result<(), MetricsError> {
        let entries = self.frames.entry(frame).or_default();
        if entries.iter().any(|(existing, _)| *existing == id) {
            return Err(MetricsError::DuplicateIdentity { frame, id });
        }
        entries.push((id, bbox));
        Ok(())
    }

    pub fn frames(&self) -> &BTreeMap<u32, Vec<(u64, BoundingBox)>> {
        &self.frames
    }

    pub fn is_empty(&self) -> bool {
        self.frames.values().all(|v| v.is_empty())
    }

    /// Total number of boxes across all frames.
    pub fn total_boxes(&self) -> u64 {
        self.frames.values().map(|v| v.len() as u64).sum()
    }
}

/// Aggregate evaluation over one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub mota: f64,
    pub idf1: f64,
    /// Fraction of ground-truth trajectories covered on at least 80% of
    /// their life span.
    pub mostly_tracked: f64,
    /// Fraction covered on at most 20% of their life span.
    pub mostly_lost: f64,
    pub false_positives: u64,
    pub false_negatives: u64,
    pub id_switches: u64,
    pub fragmentations: u64,
    pub gt_total: u64,
}

impl MetricsReport {
    /// One comma-separated line: mota,idf1,mt,ml,fp,fn,ids,frag,gt_total.
    pub fn to_csv_line(&self) -> String {
        format!(
            "{:.6},{:.6},{:.6},{:.6},{},{},{},{},{}",
            self.mota,
            self.idf1,
            self.mostly_tracked,
            self.mostly_lost,
            self.false_positives,
            self.false_negatives,
            self.id_switches,
            self.fragmentations,
            self.gt_total
        )
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "MOTA  {:>10.4}", self.mota)?;
        writeln!(f, "IDF1  {:>10.4}", self.idf1)?;
        writeln!(f, "MT    {:>10.4}", self.mostly_tracked)?;
        writeln!(f, "ML    {:>10.4}", self.mostly_lost)?;
        writeln!(f, "FP    {:>10}", self.false_positives)?;
        writeln!(f, "FN    {:>10}", self.false_negatives)?;
        writeln!(f, "IDS   {:>10}", self.id_switches)?;
        writeln!(f, "Frag  {:>10}", self.fragmentations)?;
        write!(f, "GT    {:>10}", self.gt_total)
    }
}

/// Large cost standing in for "no admissible pairing" in the per-frame
/// matching; any real pairing costs at most 1.
const INADMISSIBLE: f64 = 1e6;

/// Frame-by-frame evaluation of a hypothesis against ground truth.
///
/// Per frame, correspondences from the previous frame are kept while their
/// overlap stays at or above the threshold; the remaining boxes are matched
/// by minimum total (1 - IoU) cost among admissible pairs. Unmatched ground
/// truth counts as a miss, unmatched hypotheses as false positives, and a
/// ground-truth trajectory re-matched under a different identity as an
/// identity switch. A trajectory whose coverage is interrupted and later
/// resumes increments the fragmentation count.
pub fn evaluate(
    gt: &AnnotatedSequence,
    hyp: &AnnotatedSequence,
    iou_threshold: f64,
) -> Result<MetricsReport, MetricsError> {
    if gt.is_empty() {
        return Err(MetricsError::EmptyGroundTruth);
    }
    if !(iou_threshold > 0.0 && iou_threshold <= 1.0) {
        return Err(MetricsError::BadThreshold);
    }

    let empty = Vec::new();
    let all_frames: BTreeSet<u32> = gt.frames.keys().chain(hyp.frames.keys()).copied().collect();

    let mut false_positives = 0u64;
    let mut false_negatives = 0u64;
    let mut id_switches = 0u64;
    let mut fragmentations = 0u64;
    // gt id -> hypothesis id it was last matched with.
    let mut last_match: HashMap<u64, u64> = HashMap::new();
    // gt id -> currently inside a coverage gap.
    let mut gap_open: HashMap<u64, bool> = HashMap::new();
    // gt id -> (frames present, frames covered).
    let mut coverage: HashMap<u64, (u64, u64)> = HashMap::new();
    // (gt id, hyp id) -> frames with admissible overlap, for IDF1.
    let mut overlap_counts: HashMap<(u64, u64), u64> = HashMap::new();

    for frame in all_frames {
        let gt_items = gt.frames.get(&frame).unwrap_or(&empty);
        let hyp_items = hyp.frames.get(&frame).unwrap_or(&empty);

        for (gid, gbox) in gt_items {
            coverage.entry(*gid).or_insert((0, 0)).0 += 1;
            for (hid, hbox) in hyp_items {
                if iou(gbox, hbox) >= iou_threshold {
                    *overlap_counts.entry((*gid, *hid)).or_insert(0) += 1;
                }
            }
        }

        // Stage 1: persist still-valid correspondences from earlier frames.
        let mut gt_free: Vec<usize> = Vec::new();
        let mut hyp_used = vec![false; hyp_items.len()];
        let mut pairs: Vec<(usize, usize)> = Vec::new();
        for (gi, (gid, gbox)) in gt_items.iter().enumerate() {
            let persisted = last_match.get(gid).and_then(|hid| {
                hyp_items
                    .iter()
                    .position(|(h, _)| h == hid)
                    .filter(|&hi| !hyp_used[hi] && iou(gbox, &hyp_items[hi].1) >= iou_threshold)
            });
            match persisted {
                Some(hi) => {
                    hyp_used[hi] = true;
                    pairs.push((gi, hi));
                }
                None => gt_free.push(gi),
            }
        }

        // Stage 2: minimum-cost matching over the leftovers.
        let hyp_free: Vec<usize> = (0..hyp_items.len()).filter(|hi| !hyp_used[*hi]).collect();
        if !gt_free.is_empty() && !hyp_free.is_empty() {
            let k = gt_free.len().max(hyp_free.len());
            let cost: Vec<Vec<f64>> = (0..k)
                .map(|r| {
                    (0..k)
                        .map(|c| {
                            if r < gt_free.len() && c < hyp_free.len() {
                                let overlap =
                                    iou(&gt_items[gt_free[r]].1, &hyp_items[hyp_free[c]].1);
                                if overlap >= iou_threshold {
                                    1.0 - overlap
                                } else {
                                    INADMISSIBLE
                                }
                            } else {
                                INADMISSIBLE
                            }
                        })
                        .collect()
                })
                .collect();
            let solved = hungarian_min_cost(&cost).expect("cost matrix is square and finite");
            for (r, &c) in solved.perm.iter().enumerate() {
                if r < gt_free.len() && c < hyp_free.len() && cost[r][c] < INADMISSIBLE {
                    pairs.push((gt_free[r], hyp_free[c]));
                }
            }
        }

        // Stage 3: bookkeeping.
        let matched_gt: BTreeSet<usize> = pairs.iter().map(|(gi, _)| *gi).collect();
        let matched_hyp: BTreeSet<usize> = pairs.iter().map(|(_, hi)| *hi).collect();
        for (gi, hi) in &pairs {
            let gid = gt_items[*gi].0;
            let hid = hyp_items[*hi].0;
            if let Some(previous) = last_match.get(&gid) {
                if *previous != hid {
                    id_switches += 1;
                }
            }
            last_match.insert(gid, hid);
            coverage.entry(gid).or_insert((0, 0)).1 += 1;
            if gap_open.get(&gid).copied().unwrap_or(false) {
                fragmentations += 1;
            }
            gap_open.insert(gid, false);
        }
        for (gi, (gid, _)) in gt_items.iter().enumerate() {
            if !matched_gt.contains(&gi) {
                false_negatives += 1;
                if last_match.contains_key(gid) {
                    gap_open.insert(*gid, true);
                }
            }
        }
        false_positives += (hyp_items.len() - matched_hyp.len()) as u64;
    }

    let gt_total = gt.total_boxes();
    let mota = 1.0 - (false_negatives + false_positives + id_switches) as f64 / gt_total as f64;

    // Identity-level F1 under one global matching of gt ids to hyp ids.
    let gt_ids: Vec<u64> = {
        let mut ids: BTreeSet<u64> = BTreeSet::new();
        for items in gt.frames.values() {
            ids.extend(items.iter().map(|(id, _)| *id));
        }
        ids.into_iter().collect()
    };
    let hyp_ids: Vec<u64> = {
        let mut ids: BTreeSet<u64> = BTreeSet::new();
        for items in hyp.frames.values() {
            ids.extend(items.iter().map(|(id, _)| *id));
        }
        ids.into_iter().collect()
    };
    let hyp_total = hyp.total_boxes();
    let id_true_positives = if hyp_ids.is_empty() {
        0
    } else {
        let k = gt_ids.len().max(hyp_ids.len());
        let max_count = overlap_counts.values().copied().max().unwrap_or(0) as f64;
        let cost: Vec<Vec<f64>> = (0..k)
            .map(|r| {
                (0..k)
                    .map(|c| {
                        let count = if r < gt_ids.len() && c < hyp_ids.len() {
                            overlap_counts
                                .get(&(gt_ids[r], hyp_ids[c]))
                                .copied()
                                .unwrap_or(0) as f64
                        } else {
                            0.0
                        };
                        max_count - count
                    })
                    .collect()
            })
            .collect();
        let solved = hungarian_min_cost(&cost).expect("cost matrix is square and finite");
        let mut total = 0u64;
        for (r, &c) in solved.perm.iter().enumerate() {
            if r < gt_ids.len() && c < hyp_ids.len() {
                total += overlap_counts
                    .get(&(gt_ids[r], hyp_ids[c]))
                    .copied()
                    .unwrap_or(0);
            }
        }
        total
    };
    let idf1 = if gt_total + hyp_total == 0 {
        0.0
    } else {
        2.0 * id_true_positives as f64 / (gt_total + hyp_total) as f64
    };

    let trajectories = gt_ids.len() as f64;
    let mut mostly_tracked = 0u64;
    let mut mostly_lost = 0u64;
    for gid in &gt_ids {
        let (present, covered) = coverage.get(gid).copied().unwrap_or((0, 0));
        if present == 0 {
            continue;
        }
        let ratio = covered as f64 / present as f64;
        if ratio >= 0.8 {
            mostly_tracked += 1;
        }
        if ratio <= 0.2 {
            mostly_lost += 1;
        }
    }

    Ok(MetricsReport {
        mota,
        idf1,
        mostly_tracked: mostly_tracked as f64 / trajectories,
        mostly_lost: mostly_lost as f64 / trajectories,
        false_positives,
        false_negatives,
        id_switches,
        fragmentations,
        gt_total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bbox(cx: f64, cy: f64) -> BoundingBox {
        BoundingBox::new(cx, cy, 10.0, 20.0)
    }

    fn single_track_gt() -> AnnotatedSequence {
        let mut gt = AnnotatedSequence::new();
        for frame in 1..=10 {
            gt.insert(frame, 1, bbox(frame as f64 * 5.0, 50.0)).unwrap();
        }
        gt
    }

    #[test]
    fn perfect_hypothesis_scores_perfectly() {
        let gt = single_track_gt();
        let report = evaluate(&gt, &gt, 0.5).unwrap();
        assert_eq!(report.mota, 1.0);
        assert_eq!(report.idf1, 1.0);
        assert_eq!(report.false_positives, 0);
        assert_eq!(report.false_negatives, 0);
        assert_eq!(report.id_switches, 0);
        assert_eq!(report.fragmentations, 0);
        assert_eq!(report.mostly_tracked, 1.0);
        assert_eq!(report.mostly_lost, 0.0);
    }

    #[test]
    fn empty_hypothesis_misses_everything() {
        let gt = single_track_gt();
        let hyp = AnnotatedSequence::new();
        let report = evaluate(&gt, &hyp, 0.5).unwrap();
        assert_eq!(report.mota, 0.0);
        assert_eq!(report.false_negatives, 10);
        assert_eq!(report.idf1, 0.0);
        assert_eq!(report.mostly_lost, 1.0);
    }

    /// The hand-executed reference case: one 10-frame trajectory, covered
    /// on frames 1-4 as identity A, missed on 5-6, covered on 7-10 as B.
    #[test]
    fn hand_executed_protocol_case() {
        let gt = single_track_gt();
        let mut hyp = AnnotatedSequence::new();
        for frame in 1..=4u32 {
            hyp.insert(frame, 100, bbox(frame as f64 * 5.0, 50.0))
                .unwrap();
        }
        for frame in 7..=10u32 {
            hyp.insert(frame, 200, bbox(frame as f64 * 5.0, 50.0))
                .unwrap();
        }
        let report = evaluate(&gt, &hyp, 0.5).unwrap();
        assert_eq!(report.false_negatives, 2);
        assert_eq!(report.false_positives, 0);
        assert_eq!(report.id_switches, 1);
        assert!((report.mota - 0.7).abs() < 1e-12);
        assert!(report.fragmentations >= 1);
        // IDF1: best identity pairing covers 4 frames; 2*4 / (10 + 8).
        assert!((report.idf1 - 8.0 / 18.0).abs() < 1e-12);
    }

    #[test]
    fn mota_ignores_uniform_relabeling() {
        let gt = single_track_gt();
        let mut relabeled = AnnotatedSequence::new();
        for frame in 1..=10u32 {
            relabeled
                .insert(frame, 777, bbox(frame as f64 * 5.0, 50.0))
                .unwrap();
        }
        let report = evaluate(&gt, &relabeled, 0.5).unwrap();
        assert_eq!(report.mota, 1.0);
        assert_eq!(report.id_switches, 0);
    }

    #[test]
    fn per_frame_identity_conservation() {
        // fn + matches = gt boxes, per frame and in total.
        let gt = single_track_gt();
        let mut hyp = AnnotatedSequence::new();
        for frame in 1..=6u32 {
            hyp.insert(frame, 5, bbox(frame as f64 * 5.0, 50.0))
                .unwrap();
        }
        let report = evaluate(&gt, &hyp, 0.5).unwrap();
        let matches_total = report.gt_total - report.false_negatives;
        assert_eq!(matches_total, 6);
        assert_eq!(report.false_negatives + matches_total, report.gt_total);
    }

    #[test]
    fn removing_a_correct_box_never_raises_mota() {
        let gt = single_track_gt();
        let mut full = AnnotatedSequence::new();
        for frame in 1..=10u32 {
            full.insert(frame, 9, bbox(frame as f64 * 5.0, 50.0))
                .unwrap();
        }
        let mut reduced = AnnotatedSequence::new();
        for frame in 1..=10u32 {
            if frame != 5 {
                reduced
                    .insert(frame, 9, bbox(frame as f64 * 5.0, 50.0))
                    .unwrap();
            }
        }
        let full_report = evaluate(&gt, &full, 0.5).unwrap();
        let reduced_report = evaluate(&gt, &reduced, 0.5).unwrap();
        assert!(reduced_report.mota <= full_report.mota);
    }

    #[test]
    fn spurious_boxes_count_as_false_positives() {
        let gt = single_track_gt();
        let mut hyp = AnnotatedSequence::new();
        for frame in 1..=10u32 {
            hyp.insert(frame, 9, bbox(frame as f64 * 5.0, 50.0))
                .unwrap();
        }
        hyp.insert(3, 50, bbox(400.0, 400.0)).unwrap();
        hyp.insert(4, 50, bbox(400.0, 400.0)).unwrap();
        let report = evaluate(&gt, &hyp, 0.5).unwrap();
        assert_eq!(report.false_positives, 2);
        assert!((report.mota - 0.8).abs() < 1e-12);
    }

    #[test]
    fn persistence_wins_over_a_closer_newcomer() {
        // Identity 1 tracks gt from frame 1; in frame 2 a second hypothesis
        // sits slightly closer, but the previous correspondence persists.
        let mut gt = AnnotatedSequence::new();
        gt.insert(1, 1, bbox(100.0, 100.0)).unwrap();
        gt.insert(2, 1, bbox(100.0, 100.0)).unwrap();
        let mut hyp = AnnotatedSequence::new();
        hyp.insert(1, 10, bbox(101.0, 100.0)).unwrap();
        hyp.insert(2, 10, bbox(102.0, 100.0)).unwrap();
        hyp.insert(2, 20, bbox(100.0, 100.0)).unwrap();
        let report = evaluate(&gt, &hyp, 0.5).unwrap();
        assert_eq!(report.id_switches, 0);
        assert_eq!(report.false_positives, 1);
    }

    #[test]
    fn coverage_ratio_boundaries_for_mt_and_ml() {
        // Two 10-frame trajectories: one covered on exactly 8 frames
        // (ratio 0.8, mostly tracked), one on exactly 2 (ratio 0.2,
        // mostly lost). Boundaries are inclusive on both sides.
        let mut gt = AnnotatedSequence::new();
        for frame in 1..=10u32 {
            gt.insert(frame, 1, bbox(50.0, 50.0)).unwrap();
            gt.insert(frame, 2, bbox(300.0, 300.0)).unwrap();
        }
        let mut hyp = AnnotatedSequence::new();
        for frame in 1..=8u32 {
            hyp.insert(frame, 10, bbox(50.0, 50.0)).unwrap();
        }
        for frame in 1..=2u32 {
            hyp.insert(frame, 20, bbox(300.0, 300.0)).unwrap();
        }
        let report = evaluate(&gt, &hyp, 0.5).unwrap();
        assert_eq!(report.mostly_tracked, 0.5);
        assert_eq!(report.mostly_lost, 0.5);
    }

    #[test]
    fn duplicate_identities_in_a_frame_are_rejected() {
        let mut seq = AnnotatedSequence::new();
        seq.insert(1, 1, bbox(0.0, 0.0)).unwrap();
        assert_eq!(
            seq.insert(1, 1, bbox(5.0, 5.0)),
            Err(MetricsError::DuplicateIdentity { frame: 1, id: 1 })
        );
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        let gt = AnnotatedSequence::new();
        let hyp = AnnotatedSequence::new();
        assert_eq!(
            evaluate(&gt, &hyp, 0.5),
            Err(MetricsError::EmptyGroundTruth)
        );
        let gt = single_track_gt();
        assert_eq!(evaluate(&gt, &hyp, 0.0), Err(MetricsError::BadThreshold));
        assert_eq!(evaluate(&gt, &hyp, 1.5), Err(MetricsError::BadThreshold));
    }

    #[test]
    fn csv_line_has_the_documented_column_order() {
        let gt = single_track_gt();
        let report = evaluate(&gt, &gt, 0.5).unwrap();
        let line = report.to_csv_line();
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields.len(), 9);
        assert_eq!(fields[0], "1.000000"); // mota
        assert_eq!(fields[8], "10"); // gt_total
    }
}
