//! The per-frame tracking loop: prune detections, predict every maintained
//! target, infer all states jointly, then apply lifecycle transitions,
//! spawn and retrain per-target scorers, and retire stale tracks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use thiserror::Error;

use crate::association::{
    build_joint_matrix, decode_states, solve_joint, AssociationError, ObservationDecision,
    PredictionDecision,
};
use crate::geometry::{aggregate_prediction, sample_candidates, CandidateSet};
use crate::metrics::AnnotatedSequence;
use crate::scoring::{
    create_instance_scorer, harvest_samples, prune_detections, FrameSource, InstanceScorer,
    PruningScorer, ScoringError, SgdConfig, SourceError,
};
use crate::types::{
    BoundingBox, Detection, Observation, ParamsError, Prediction, TargetState, TrackerParams,
};

#[derive(Debug, Error, PartialEq)]
pub enum TrackerError {
    #[error("frame {frame} does not advance past already-stepped frame {last}")]
    NonMonotoneFrame { frame: u32, last: u32 },
    #[error("detection stamped frame {detection} fed into step for frame {frame}")]
    FrameMismatch { detection: u32, frame: u32 },
    #[error("no transitions leave the discarded state")]
    IllegalTransition,
    #[error(transparent)]
    Scoring(#[from] ScoringError),
    #[error(transparent)]
    Association(#[from] AssociationError),
    #[error(transparent)]
    Params(#[from] ParamsError),
}

/// A maintained target: identity, lifecycle state, current location, the
/// per-frame trajectory of verified locations, and its own online scorer.
#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub id: u64,
    pub state: TargetState,
    pub bbox: BoundingBox,
    /// Consecutive frames spent lost; zero whenever the track is tracked.
    pub lost_streak: u32,
    pub trajectory: BTreeMap<u32, BoundingBox>,
    pub scorer: InstanceScorer,
}

/// One target's lifecycle step. `matched` tells whether the joint inference
/// coupled the target with an observation this frame; `lost_streak` is the
/// streak before this frame. The graph is:
///
/// ```text
/// New ──────────────▶ Tracked ◀──────┐
///                      │  ▲          │ matched
///            unmatched │  │ matched  │
///                      ▼  │          │
///                     Lost ──────────┘
///                      │ unmatched, streak reaches patience
///                      ▼
///                  Discarded
/// ```
pub fn transition(
    state: TargetState,
    matched: bool,
    lost_streak: u32,
    patience: u32,
) -> Result<TargetState, TrackerError> {
    Ok(match state {
        TargetState::New => TargetState::Tracked,
        TargetState::Tracked => {
            if matched {
                TargetState::Tracked
            } else {
                TargetState::Lost
            }
        }
        TargetState::Lost => {
            if matched {
                TargetState::Tracked
            } else if lost_streak + 1 >= patience {
                TargetState::Discarded
            } else {
                TargetState::Lost
            }
        }
        TargetState::Discarded => return Err(TrackerError::IllegalTransition),
    })
}

/// Per-frame snapshot of every live (tracked or lost) target.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackerOutput {
    pub frame: u32,
    pub records: Vec<TrackRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackRecord {
    pub id: u64,
    pub bbox: BoundingBox,
    pub state: TargetState,
}

/// Single-sequence tracking engine. One engine per sequence; `step` calls
/// must be strictly serialized with increasing frame numbers. All
/// randomness flows through one seeded generator, so identical inputs
/// replay to identical outputs.
pub struct TrackerEngine {
    params: TrackerParams,
    pruner: PruningScorer,
    source: Box<dyn FrameSource>,
    sgd: SgdConfig,
    tracks: Vec<Track>,
    next_id: u64,
    last_frame: Option<u32>,
    rng: ChaCha8Rng,
}

/// Scores a region with a target's scorer; regions outside the frame score
/// zero instead of failing, since wandering candidates are expected.
fn region_score(
    source: &dyn FrameSource,
    scorer: &InstanceScorer,
    frame: u32,
    bbox: &BoundingBox,
) -> Result<f64, TrackerError> {
    match source.features(frame, bbox) {
        Ok(feat) => Ok(scorer.score(&feat)?),
        Err(SourceError::BoxOutsideFrame) => Ok(0.0),
        Err(e) => Err(ScoringError::from(e).into()),
    }
}

impl TrackerEngine {
    pub fn new(
        params: TrackerParams,
        pruner: PruningScorer,
        source: Box<dyn FrameSource>,
        seed: u64,
    ) -> Result<Self, TrackerError> {
        params.validate()?;
        Ok(Self {
            params,
            pruner,
            source,
            sgd: SgdConfig::default(),
            tracks: Vec::new(),
            next_id: 1,
            last_frame: None,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn with_sgd_config(mut self, sgd: SgdConfig) -> Self {
        self.sgd = sgd;
        self
    }

    pub fn params(&self) -> &TrackerParams {
        &self.params
    }

    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    /// Advances the engine by one frame of detections.
    pub fn step(&mut self, frame: u32, dets: &[Detection]) -> Result<TrackerOutput, TrackerError> {
        if let Some(last) = self.last_frame {
            if frame <= last {
                return Err(TrackerError::NonMonotoneFrame { frame, last });
            }
        }
        if let Some(det) = dets.iter().find(|d| d.frame != frame) {
            return Err(TrackerError::FrameMismatch {
                detection: det.frame,
                frame,
            });
        }

        // 1. Reject weak detections.
        let observations: Vec<Observation> = prune_detections(
            dets,
            &self.pruner,
            self.source.as_ref(),
            self.params.accept_threshold,
        )?;

        // 2. Predict every maintained target, lost ones included.
        let mut predictions: Vec<Prediction> = Vec::with_capacity(self.tracks.len());
        for track in &self.tracks {
            let candidates = sample_candidates(
                &track.bbox,
                self.params.candidate_count,
                &self.params.sigma_s,
                &mut self.rng,
            );
            let mut scores = Vec::with_capacity(candidates.len());
            for candidate in &candidates {
                scores.push(region_score(
                    self.source.as_ref(),
                    &track.scorer,
                    frame,
                    candidate,
                )?);
            }
            let set = CandidateSet::new(candidates, scores)
                .expect("candidate boxes and scores are built in lockstep");
            let bbox =
                aggregate_prediction(&set, self.params.alpha).expect("candidate_count is positive");
            let self_score = region_score(self.source.as_ref(), &track.scorer, frame, &bbox)?;
            predictions.push(Prediction::new(track.id, bbox, self_score));
        }

        // 3. Joint state inference.
        let mut observation_features = Vec::with_capacity(observations.len());
        for obs in &observations {
            observation_features.push(match self.source.features(frame, &obs.bbox) {
                Ok(feat) => Some(feat),
                Err(SourceError::BoxOutsideFrame) => None,
                Err(e) => return Err(ScoringError::from(e).into()),
            });
        }
        let mut pair_scores = Vec::with_capacity(self.tracks.len());
        for track in &self.tracks {
            let mut row = Vec::with_capacity(observations.len());
            for feat in &observation_features {
                row.push(match feat {
                    Some(feat) => track.scorer.score(feat)?,
                    None => 0.0,
                });
            }
            pair_scores.push(row);
        }
        let matrix = build_joint_matrix(&predictions, &observations, &pair_scores, &self.params)?;
        let assignment = solve_joint(&matrix)?;
        let decision = decode_states(&assignment, predictions.len(), observations.len())?;

        // 4. Lifecycle transitions and location updates.
        for (i, outcome) in decision.predictions.iter().enumerate() {
            let track = &mut self.tracks[i];
            match outcome {
                PredictionDecision::Tracked { observation } => {
                    track.state = transition(
                        track.state,
                        true,
                        track.lost_streak,
                        self.params.lost_patience,
                    )?;
                    track.lost_streak = 0;
                    track.bbox = observations[*observation].bbox;
                    track.trajectory.insert(frame, track.bbox);
                }
                PredictionDecision::Lost => {
                    let next = transition(
                        track.state,
                        false,
                        track.lost_streak,
                        self.params.lost_patience,
                    )?;
                    track.lost_streak += 1;
                    debug_assert!(track.lost_streak <= self.params.lost_patience);
                    // The predicted box becomes the new search center; the
                    // trajectory records only verified locations.
                    track.bbox = predictions[i].bbox;
                    track.state = next;
                }
            }
            debug_assert!(
                !(self.tracks[i].state == TargetState::Tracked && self.tracks[i].lost_streak != 0)
            );
        }

        // 5. Spawn a track per new observation; its scorer trains against
        // its own surroundings plus the current targets' positives, so it
        // starts out discriminating against every known identity.
        let existing = decision.predictions.len();
        for (j, outcome) in decision.observations.iter().enumerate() {
            if *outcome != ObservationDecision::New {
                continue;
            }
            let bbox = observations[j].bbox;
            let samples = harvest_samples(
                &bbox,
                frame,
                self.source.as_ref(),
                &self.params,
                &mut self.rng,
            )?;
            let mut rivals = Vec::new();
            for other in &self.tracks {
                // Only targets with a verified location this frame.
                if other.state == TargetState::Tracked {
                    rivals.push(harvest_samples(
                        &other.bbox,
                        frame,
                        self.source.as_ref(),
                        &self.params,
                        &mut self.rng,
                    )?);
                }
            }
            let scorer = create_instance_scorer(
                &samples,
                &rivals,
                &self.pruner,
                self.params.n_neg,
                &self.sgd,
                &mut self.rng,
            )?;
            let state = transition(TargetState::New, true, 0, self.params.lost_patience)?;
            let id = self.next_id;
            self.next_id += 1;
            let mut trajectory = BTreeMap::new();
            trajectory.insert(frame, bbox);
            self.tracks.push(Track {
                id,
                state,
                bbox,
                lost_streak: 0,
                trajectory,
                scorer,
            });
        }

        // 6. Retrain scorers whose own prediction scored weakly.
        for i in 0..existing {
            let needs_update = self.tracks[i].state == TargetState::Tracked
                && predictions[i].self_score < self.params.update_threshold;
            if !needs_update {
                continue;
            }
            let bbox = self.tracks[i].bbox;
            let samples = harvest_samples(
                &bbox,
                frame,
                self.source.as_ref(),
                &self.params,
                &mut self.rng,
            )?;
            self.tracks[i]
                .scorer
                .update(&samples, &self.sgd, &mut self.rng)?;
        }

        // 7. Retire discarded tracks; identity and scorer are dropped.
        self.tracks.retain(|t| t.state != TargetState::Discarded);

        self.last_frame = Some(frame);
        Ok(TrackerOutput {
            frame,
            records: self
                .tracks
                .iter()
                .map(|t| TrackRecord {
                    id: t.id,
                    bbox: t.bbox,
                    state: t.state,
                })
                .collect(),
        })
    }

    /// Steps through `frames` in order, feeding each frame its detections.
    pub fn run(
        &mut self,
        frames: impl IntoIterator<Item = u32>,
        detections: &BTreeMap<u32, Vec<Detection>>,
    ) -> Result<Vec<TrackerOutput>, TrackerError> {
        let empty = Vec::new();
        frames
            .into_iter()
            .map(|frame| self.step(frame, detections.get(&frame).unwrap_or(&empty)))
            .collect()
    }
}

/// Collects the tracked (verified) locations of an output stream into an
/// identity-annotated sequence for evaluation.
pub fn to_annotated(outputs: &[TrackerOutput]) -> AnnotatedSequence {
    let mut seq = AnnotatedSequence::new();
    for output in outputs {
        for record in &output.records {
            if record.state == TargetState::Tracked {
                seq.insert(output.frame, record.id, record.bbox)
                    .expect("track ids are unique per frame");
            }
        }
    }
    seq
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::{generate, OcclusionWindow, ScenarioSpec};

    fn engine_for(spec: &ScenarioSpec, world_seed: u64, engine_seed: u64) -> TrackerEngine {
        let world = generate(spec, world_seed).unwrap();
        TrackerEngine::new(
            TrackerParams {
                n_pos: 120,
                n_neg: 80,
                candidate_count: 64,
                ..TrackerParams::default()
            },
            PruningScorer::confidence_passthrough(),
            Box::new(world.source),
            engine_seed,
        )
        .unwrap()
    }

    fn one_target_spec(frames: u32) -> ScenarioSpec {
        ScenarioSpec {
            num_targets: 1,
            frames,
            spawns: Some(vec![(100.0, 240.0)]),
            velocities: Some(vec![(2.0, 0.0)]),
            appearance_separation: 5.0,
            feature_noise: 0.5,
            ..ScenarioSpec::default()
        }
    }

    #[test]
    fn transition_graph_is_exact() {
        use TargetState::*;
        assert_eq!(transition(New, true, 0, 10).unwrap(), Tracked);
        assert_eq!(transition(New, false, 0, 10).unwrap(), Tracked);
        assert_eq!(transition(Tracked, true, 0, 10).unwrap(), Tracked);
        assert_eq!(transition(Tracked, false, 0, 10).unwrap(), Lost);
        assert_eq!(transition(Lost, true, 4, 10).unwrap(), Tracked);
        assert_eq!(transition(Lost, false, 3, 10).unwrap(), Lost);
        assert_eq!(transition(Lost, false, 9, 10).unwrap(), Discarded);
        assert_eq!(
            transition(Discarded, true, 0, 10),
            Err(TrackerError::IllegalTransition)
        );
    }

    #[test]
    fn empty_first_frame_produces_no_tracks() {
        let spec = one_target_spec(5);
        let mut engine = engine_for(&spec, 1, 1);
        let out = engine.step(1, &[]).unwrap();
        assert!(out.records.is_empty());
        assert!(engine.tracks().is_empty());
    }

    #[test]
    fn first_accepted_detection_spawns_track_one() {
        let spec = one_target_spec(5);
        let world = generate(&spec, 1).unwrap();
        let mut engine = engine_for(&spec, 1, 1);
        let out = engine.step(1, &world.detections[&1]).unwrap();
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.records[0].id, 1);
        assert_eq!(out.records[0].state, TargetState::Tracked);
    }

    #[test]
    fn track_is_discarded_after_patience_lost_frames() {
        let spec = one_target_spec(30);
        let world = generate(&spec, 2).unwrap();
        let mut engine = engine_for(&spec, 2, 2);
        let patience = engine.params().lost_patience;

        // Detections for five frames, then silence.
        for frame in 1..=5u32 {
            engine.step(frame, &world.detections[&frame]).unwrap();
        }
        let mut last_seen = 0;
        for frame in 6..=30u32 {
            let out = engine.step(frame, &[]).unwrap();
            if let Some(record) = out.records.first() {
                assert_eq!(record.state, TargetState::Lost);
                assert!(engine.tracks()[0].lost_streak <= patience);
                last_seen = frame;
            } else {
                break;
            }
        }
        // Lost on frames 6.., discarded when the streak reaches patience.
        assert_eq!(last_seen, 5 + patience - 1);
        assert!(engine.tracks().is_empty());
    }

    #[test]
    fn replay_is_deterministic() {
        let spec = ScenarioSpec {
            num_targets: 3,
            frames: 25,
            miss_rate: 0.1,
            det_noise: 1.0,
            appearance_separation: 5.0,
            feature_noise: 0.5,
            ..ScenarioSpec::default()
        };
        let world = generate(&spec, 3).unwrap();
        let run = || {
            let mut engine = TrackerEngine::new(
                TrackerParams {
                    n_pos: 100,
                    n_neg: 64,
                    candidate_count: 64,
                    ..TrackerParams::default()
                },
                PruningScorer::confidence_passthrough(),
                Box::new(world.source.clone()),
                7,
            )
            .unwrap();
            engine.run(1..=25, &world.detections).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn ids_are_unique_and_strictly_increasing() {
        let spec = ScenarioSpec {
            num_targets: 3,
            frames: 40,
            miss_rate: 0.3,
            fp_rate: 0.3,
            det_noise: 2.0,
            appearance_separation: 5.0,
            feature_noise: 0.5,
            occlusions: vec![OcclusionWindow {
                target: 2,
                start: 10,
                duration: 15,
            }],
            ..ScenarioSpec::default()
        };
        let world = generate(&spec, 4).unwrap();
        let mut engine = engine_for(&spec, 4, 4);
        let outputs = engine.run(1..=40, &world.detections).unwrap();

        let mut first_frame: BTreeMap<u64, u32> = BTreeMap::new();
        let mut last_frame: BTreeMap<u64, u32> = BTreeMap::new();
        for out in &outputs {
            let mut seen = Vec::new();
            for record in &out.records {
                assert!(!seen.contains(&record.id), "duplicate id in frame");
                seen.push(record.id);
                first_frame.entry(record.id).or_insert(out.frame);
                last_frame.insert(record.id, out.frame);
            }
        }
        // First appearances ordered by id means ids never restart.
        let mut previous = 0;
        for (id, frame) in &first_frame {
            assert!(*id > previous);
            previous = *id;
            // A track, once absent, never reappears.
            for out in &outputs {
                if out.frame > last_frame[id] {
                    assert!(out.records.iter().all(|r| r.id != *id));
                }
            }
            let _ = frame;
        }
    }

    #[test]
    fn non_monotone_frames_are_rejected() {
        let spec = one_target_spec(5);
        let mut engine = engine_for(&spec, 5, 5);
        engine.step(3, &[]).unwrap();
        assert_eq!(
            engine.step(3, &[]),
            Err(TrackerError::NonMonotoneFrame { frame: 3, last: 3 })
        );
        assert_eq!(
            engine.step(1, &[]),
            Err(TrackerError::NonMonotoneFrame { frame: 1, last: 3 })
        );
        // Gaps are allowed.
        engine.step(10, &[]).unwrap();
    }

    #[test]
    fn mislabeled_detections_are_rejected() {
        let spec = one_target_spec(5);
        let mut engine = engine_for(&spec, 6, 6);
        let det = Detection::new(2, BoundingBox::new(100.0, 240.0, 30.0, 50.0), 1.0);
        assert_eq!(
            engine.step(1, &[det]),
            Err(TrackerError::FrameMismatch {
                detection: 2,
                frame: 1
            })
        );
    }

    #[test]
    fn outputs_convert_to_annotated_sequences() {
        let spec = one_target_spec(8);
        let world = generate(&spec, 7).unwrap();
        let mut engine = engine_for(&spec, 7, 7);
        let outputs = engine.run(1..=8, &world.detections).unwrap();
        let annotated = to_annotated(&outputs);
        assert_eq!(annotated.total_boxes(), 8);
        assert!(annotated.frames().values().all(|v| v.len() == 1));
    }
}
