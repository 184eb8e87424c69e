//! Online multi-person tracking by joint state association.
//!
//! The pipeline maintains one discriminative scorer per tracked person.
//! Each frame, raw detections are pruned by a shared scorer, every
//! maintained target predicts its location by score-weighted candidate
//! averaging, and a square association matrix couples predictions with
//! observations so that one linear-assignment solve labels every target
//! Tracked, Lost, or New. Scorers are created for new targets and
//! retrained online on mined hard negatives; targets lost for too long are
//! discarded.
//!
//! Alongside the engine the crate provides sequence evaluation
//! (accuracy/identity metrics), benchmark-format file I/O, a PPM frame
//! reader with color-histogram features, and a deterministic scenario
//! simulator used to verify the whole pipeline end to end.
//!
//! ```
//! use motkit::simulator::{generate, ScenarioSpec};
//! use motkit::scoring::PruningScorer;
//! use motkit::tracker::{to_annotated, TrackerEngine};
//! use motkit::types::TrackerParams;
//!
//! let spec = ScenarioSpec { num_targets: 2, frames: 10, ..ScenarioSpec::default() };
//! let world = generate(&spec, 7).unwrap();
//! let mut engine = TrackerEngine::new(
//!     TrackerParams { n_pos: 50, n_neg: 32, candidate_count: 32, ..TrackerParams::default() },
//!     PruningScorer::confidence_passthrough(),
//!     Box::new(world.source.clone()),
//!     7,
//! )
//! .unwrap();
//! let outputs = engine.run(1..=10, &world.detections).unwrap();
//! let hypothesis = to_annotated(&outputs);
//! assert!(hypothesis.total_boxes() > 0);
//! ```

pub mod association;
pub mod geometry;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod scoring;
pub mod simulator;
pub mod tracker;
pub mod types;

pub use association::{
    build_joint_matrix, decode_states, hungarian_min_cost, solve_joint, Assignment,
    JointAssociationMatrix, StateDecision,
};
pub use geometry::{aggregate_prediction, iou, sample_candidates, CandidateSet};
pub use losses::{
    log_loss, multi_task_loss, phi, sq_distance, triplet_gradients, triplet_loss, FeatureVec,
    TripletBatch,
};
pub use metrics::{evaluate, AnnotatedSequence, MetricsReport};
pub use scoring::{FrameSource, InstanceScorer, PruningScorer, SampleSet};
pub use simulator::{generate, ScenarioSpec, SyntheticWorld};
pub use tracker::{to_annotated, transition, Track, TrackerEngine, TrackerOutput};
pub use types::{BoundingBox, Detection, Observation, Prediction, TargetState, TrackerParams};
