//! Command-line front end: `track` runs the engine over a detection file
//! (real frames or a simulated scenario), `eval` scores a result file
//! against ground truth, and `simulate` materializes a scenario to disk.
//!
//! Exit codes: 0 on success, 1 for input problems, 2 for internal
//! invariant failures.

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::panic::AssertUnwindSafe;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use motkit::association::AssociationError;
use motkit::io::{load_config, load_frames, load_scenario, parse_mot, write_mot, MotRecord};
use motkit::metrics::{evaluate, AnnotatedSequence};
use motkit::scoring::{train_pruner, FrameSource, PrunerTrainConfig, PruningScorer};
use motkit::simulator::{generate, SyntheticWorld, ORACLE_IOU_FLOOR};
use motkit::tracker::{TrackerEngine, TrackerError, TrackerOutput};
use motkit::types::{Detection, TargetState, TrackerParams};

#[derive(Parser)]
#[command(
    name = "motkit",
    version,
    about = "Online multi-person tracking toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the tracker and write a result file.
    Track {
        /// Detection file (frame,id,left,top,w,h,conf,x,y,z per line).
        #[arg(
            long,
            required_unless_present = "scenario",
            conflicts_with = "scenario"
        )]
        det: Option<PathBuf>,
        /// Directory of PPM frames named by zero-padded frame number.
        #[arg(long, conflicts_with = "scenario")]
        frames: Option<PathBuf>,
        /// Scenario spec; simulated frames and detections replace
        /// `--frames` and `--det`.
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Parameter overrides as key=value lines.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output result file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a result file against ground truth.
    Eval {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        res: PathBuf,
        /// Overlap threshold for a valid correspondence.
        #[arg(long, default_value_t = 0.5)]
        iou: f64,
        /// Also write the report as a single CSV line.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Generate a scenario and write gt.txt, det.txt, and oracle.txt.
    Simulate {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

enum CliError {
    Input(String),
    Internal(String),
}

impl CliError {
    fn input(err: impl std::fmt::Display) -> Self {
        Self::Input(err.to_string())
    }
}

/// Association inconsistencies are engine bugs, not input problems.
fn classify_tracker_error(err: TrackerError) -> CliError {
    match &err {
        TrackerError::Association(AssociationError::ForbiddenCellChosen { .. })
        | TrackerError::Association(AssociationError::AsymmetricAssignment)
        | TrackerError::IllegalTransition => CliError::Internal(err.to_string()),
        _ => CliError::Input(err.to_string()),
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))
}

fn write(path: &Path, content: &str) -> Result<(), CliError> {
    std::fs::write(path, content)
        .map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))
}

fn load_params(config: Option<&PathBuf>) -> Result<TrackerParams, CliError> {
    let Some(path) = config else {
        return Ok(TrackerParams::default());
    };
    let loaded = load_config(&read(path)?).map_err(CliError::input)?;
    for warning in &loaded.warnings {
        eprintln!("warning: {warning}");
    }
    Ok(loaded.params)
}

fn detections_by_frame(records: &[MotRecord]) -> BTreeMap<u32, Vec<Detection>> {
    let mut map: BTreeMap<u32, Vec<Detection>> = BTreeMap::new();
    for record in records {
        map.entry(record.frame).or_default().push(Detection::new(
            record.frame,
            record.bbox(),
            record.conf,
        ));
    }
    map
}

fn result_records(outputs: &[TrackerOutput]) -> Vec<MotRecord> {
    let mut rows = Vec::new();
    for output in outputs {
        for record in &output.records {
            if record.state == TargetState::Tracked {
                rows.push(MotRecord::from_bbox(
                    output.frame,
                    record.id as i64,
                    &record.bbox,
                    1.0,
                ));
            }
        }
    }
    rows
}

fn annotated_from_records(
    records: &[MotRecord],
    label: &str,
) -> Result<AnnotatedSequence, CliError> {
    let mut seq = AnnotatedSequence::new();
    for record in records {
        // Rows flagged with zero confidence are ignore regions.
        if record.conf == 0.0 {
            continue;
        }
        if record.id < 1 {
            return Err(CliError::Input(format!(
                "{label}: identity {} in frame {} is not a positive track id",
                record.id, record.frame
            )));
        }
        seq.insert(record.frame, record.id as u64, record.bbox())
            .map_err(CliError::input)?;
    }
    Ok(seq)
}

/// Offline pruner fit on the leading slice of the generated ground truth.
fn scenario_pruner(world: &SyntheticWorld, seed: u64) -> Result<PruningScorer, CliError> {
    let cutoff = world
        .gt
        .frames()
        .keys()
        .copied()
        .take(20)
        .max()
        .unwrap_or(0);
    let gt = world
        .gt_boxes()
        .into_iter()
        .filter(|(frame, _)| *frame <= cutoff)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    train_pruner(
        &gt,
        &world.source,
        &TrackerParams::default(),
        &PrunerTrainConfig::default(),
        &mut rng,
    )
    .map_err(CliError::input)
}

fn cmd_track(
    det: Option<PathBuf>,
    frames: Option<PathBuf>,
    scenario: Option<PathBuf>,
    config: Option<PathBuf>,
    seed: u64,
    out: PathBuf,
) -> Result<(), CliError> {
    let params = load_params(config.as_ref())?;
    let (source, detections, last_frame, pruner): (
        Box<dyn FrameSource>,
        BTreeMap<u32, Vec<Detection>>,
        u32,
        PruningScorer,
    ) = match (&frames, &scenario) {
        (Some(dir), None) => {
            let det_path = det.as_ref().expect("clap enforces --det with --frames");
            let records = parse_mot(&read(det_path)?).map_err(CliError::input)?;
            let detections = detections_by_frame(&records);
            let source = load_frames(dir).map_err(CliError::input)?;
            let last = source
                .frame_range()
                .map(|(_, last)| last)
                .unwrap_or_default()
                .max(detections.keys().next_back().copied().unwrap_or(0));
            (
                Box::new(source),
                detections,
                last,
                PruningScorer::confidence_passthrough(),
            )
        }
        (None, Some(spec_path)) => {
            let spec = load_scenario(&read(spec_path)?).map_err(CliError::input)?;
            let world = generate(&spec, seed).map_err(CliError::input)?;
            let pruner = scenario_pruner(&world, seed)?;
            (
                Box::new(world.source),
                world.detections,
                spec.frames,
                pruner,
            )
        }
        (None, None) => {
            return Err(CliError::Input(
                "one of --frames or --scenario is required".to_string(),
            ))
        }
        (Some(_), Some(_)) => unreachable!("clap rejects --frames with --scenario"),
    };

    let mut engine =
        TrackerEngine::new(params, pruner, source, seed).map_err(classify_tracker_error)?;
    let outputs = engine
        .run(1..=last_frame, &detections)
        .map_err(classify_tracker_error)?;
    let rows = result_records(&outputs);
    write(&out, &write_mot(&rows))?;
    println!(
        "tracked {} frames, {} identities, {} result rows -> {}",
        outputs.len(),
        rows.iter()
            .map(|r| r.id)
            .collect::<std::collections::BTreeSet<_>>()
            .len(),
        rows.len(),
        out.display()
    );
    Ok(())
}

fn cmd_eval(gt: PathBuf, res: PathBuf, iou: f64, csv: Option<PathBuf>) -> Result<(), CliError> {
    let gt_records = parse_mot(&read(&gt)?).map_err(CliError::input)?;
    let res_records = parse_mot(&read(&res)?).map_err(CliError::input)?;
    let gt_seq = annotated_from_records(&gt_records, "ground truth")?;
    let res_seq = annotated_from_records(&res_records, "results")?;
    let report = evaluate(&gt_seq, &res_seq, iou).map_err(CliError::input)?;
    println!("{report}");
    if let Some(path) = csv {
        write(&path, &format!("{}\n", report.to_csv_line()))?;
    }
    Ok(())
}

fn cmd_simulate(spec: PathBuf, seed: u64, out_dir: PathBuf) -> Result<(), CliError> {
    let spec = load_scenario(&read(&spec)?).map_err(CliError::input)?;
    let world = generate(&spec, seed).map_err(CliError::input)?;
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| CliError::Input(format!("cannot create {}: {e}", out_dir.display())))?;

    let mut gt_rows = Vec::new();
    for (frame, items) in world.gt.frames() {
        for (id, bbox) in items {
            gt_rows.push(MotRecord::from_bbox(*frame, *id as i64, bbox, 1.0));
        }
    }
    write(&out_dir.join("gt.txt"), &write_mot(&gt_rows))?;

    let mut det_rows = Vec::new();
    for dets in world.detections.values() {
        for det in dets {
            det_rows.push(MotRecord::from_bbox(
                det.frame,
                -1,
                &det.bbox,
                det.confidence,
            ));
        }
    }
    write(&out_dir.join("det.txt"), &write_mot(&det_rows))?;

    let mut oracle = String::new();
    oracle.push_str(&format!("dim={}\n", world.source.feature_dim()));
    oracle.push_str(&format!("feature_noise={}\n", world.source.feature_noise()));
    oracle.push_str(&format!("iou_floor={ORACLE_IOU_FLOOR}\n"));
    oracle.push_str(&format!("seed={seed}\n"));
    for (idx, signature) in world.source.signatures().iter().enumerate() {
        let rendered: Vec<String> = signature.values().iter().map(|v| v.to_string()).collect();
        oracle.push_str(&format!("signature.{}={}\n", idx + 1, rendered.join(",")));
    }
    write(&out_dir.join("oracle.txt"), &oracle)?;

    println!(
        "simulated {} frames: {} gt rows, {} detections -> {}",
        spec.frames,
        gt_rows.len(),
        det_rows.len(),
        out_dir.display()
    );
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Track {
            det,
            frames,
            scenario,
            config,
            seed,
            out,
        } => cmd_track(det, frames, scenario, config, seed, out),
        Command::Eval { gt, res, iou, csv } => cmd_eval(gt, res, iou, csv),
        Command::Simulate {
            spec,
            seed,
            out_dir,
        } => cmd_simulate(spec, seed, out_dir),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    match std::panic::catch_unwind(AssertUnwindSafe(|| run(cli))) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(CliError::Input(msg))) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Ok(Err(CliError::Internal(msg))) => {
            eprintln!("internal error: {msg}");
            ExitCode::from(2)
        }
        Err(_) => ExitCode::from(2),
    }
}
