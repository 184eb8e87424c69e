//! Joint state association: a square block matrix coupling target
//! predictions with person observations, solved as a linear assignment
//! problem so each target comes out Tracked, Lost, or New in one shot.

use thiserror::Error;

use crate::geometry::iou;
use crate::types::{Observation, Prediction, TrackerParams};

#[derive(Debug, Error, PartialEq)]
pub enum AssociationError {
    #[error("pair score matrix has shape {rows}x{cols}, expected {m}x{n}")]
    ShapeMismatch {
        rows: usize,
        cols: usize,
        m: usize,
        n: usize,
    },
    #[error("score {value} outside [0,1]")]
    ScoreOutOfRange { value: f64 },
    #[error("cost matrix must be square")]
    NotSquare,
    #[error("cost matrix contains a non-finite entry")]
    NonFinite,
    #[error("solver selected a forbidden cell at ({row}, {col})")]
    ForbiddenCellChosen { row: usize, col: usize },
    #[error("assignment is not mutually symmetric between coupling blocks")]
    AsymmetricAssignment,
    #[error("association log is empty")]
    EmptyLog,
}

/// Square association matrix over `m` predictions and `n` observations.
///
/// Layout: the top-left `m x m` block carries self-assignment (lost)
/// evidence on its diagonal, the bottom-right `n x n` block self-assignment
/// (new-target) evidence on its diagonal, and the two off-diagonal blocks
/// hold the prediction/observation coupling, mirrored exactly. Cells with
/// no meaning (the diagonal blocks off their diagonals) are forbidden.
#[derive(Debug, Clone, PartialEq)]
pub struct JointAssociationMatrix {
    m: usize,
    n: usize,
    entries: Vec<Option<f64>>,
}

impl JointAssociationMatrix {
    /// Assembles the matrix from its three independent parts: the lost
    /// diagonal (length `m`), the coupling block (`m x n`, row-major), and
    /// the new-target diagonal (length `n`). All values must be in [0, 1].
    pub fn from_blocks(
        lost_diag: Vec<f64>,
        coupling: Vec<Vec<f64>>,
        new_diag: Vec<f64>,
    ) -> Result<Self, AssociationError> {
        let m = lost_diag.len();
        let n = new_diag.len();
        if coupling.len() != m || coupling.iter().any(|row| row.len() != n) {
            return Err(AssociationError::ShapeMismatch {
                rows: coupling.len(),
                cols: coupling.first().map(|r| r.len()).unwrap_or(0),
                m,
                n,
            });
        }
        for value in lost_diag
            .iter()
            .chain(new_diag.iter())
            .chain(coupling.iter().flatten())
        {
            if !(0.0..=1.0).contains(value) {
                return Err(AssociationError::ScoreOutOfRange { value: *value });
            }
        }
        let k = m + n;
        let mut entries = vec![None; k * k];
        for (i, v) in lost_diag.iter().enumerate() {
            entries[i * k + i] = Some(*v);
        }
        for (j, v) in new_diag.iter().enumerate() {
            entries[(m + j) * k + (m + j)] = Some(*v);
        }
        for (i, row) in coupling.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                entries[i * k + (m + j)] = Some(*v);
                entries[(m + j) * k + i] = Some(*v);
            }
        }
        Ok(Self { m, n, entries })
    }

    pub fn predictions(&self) -> usize {
        self.m
    }

    pub fn observations(&self) -> usize {
        self.n
    }

    pub fn size(&self) -> usize {
        self.m + self.n
    }

    /// Entry at `(row, col)`; `None` marks a forbidden cell.
    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        self.entries[row * self.size() + col]
    }
}

/// Builds the joint matrix from this frame's predictions and observations.
///
/// * coupling(i, j) = lt * score_i(obs_j) + (1 - lt) * IoU(pred_i, obs_j)
/// * lost(i) = ll * (1 - self_score_i) + (1 - ll) * (1 - max_j IoU(pred_i, obs_j))
/// * new(j) = ln * (1 - max_i score_i(obs_j)) + (1 - ln) * (1 - max_i IoU(pred_i, obs_j))
///
/// with the maxima over an empty set taken as zero, so a detection-free
/// frame marks every target lost and a target-free frame marks every
/// observation new. `pair_scores[i][j]` is target `i`'s scorer evaluated
/// on observation `j` and must lie in [0, 1].
pub fn build_joint_matrix(
    preds: &[Prediction],
    obs: &[Observation],
    pair_scores: &[Vec<f64>],
    params: &TrackerParams,
) -> Result<JointAssociationMatrix, AssociationError> {
    let m = preds.len();
    let n = obs.len();
    if pair_scores.len() != m || pair_scores.iter().any(|row| row.len() != n) {
        return Err(AssociationError::ShapeMismatch {
            rows: pair_scores.len(),
            cols: pair_scores.first().map(|r| r.len()).unwrap_or(0),
            m,
            n,
        });
    }
    for value in pair_scores
        .iter()
        .flatten()
        .chain(preds.iter().map(|p| &p.self_score))
    {
        if !(0.0..=1.0).contains(value) {
            return Err(AssociationError::ScoreOutOfRange { value: *value });
        }
    }

    let overlaps: Vec<Vec<f64>> = preds
        .iter()
        .map(|p| obs.iter().map(|o| iou(&p.bbox, &o.bbox)).collect())
        .collect();

    let lt = params.lambda_tracked;
    let coupling: Vec<Vec<f64>> = (0..m)
        .map(|i| {
            (0..n)
                .map(|j| lt * pair_scores[i][j] + (1.0 - lt) * overlaps[i][j])
                .collect()
        })
        .collect();

    let ll = params.lambda_lost;
    let lost_diag: Vec<f64> = (0..m)
        .map(|i| {
            let best_overlap = overlaps[i].iter().copied().fold(0.0f64, f64::max);
            ll * (1.0 - preds[i].self_score) + (1.0 - ll) * (1.0 - best_overlap)
        })
        .collect();

    let ln = params.lambda_new;
    let new_diag: Vec<f64> = (0..n)
        .map(|j| {
            let best_score = (0..m).map(|i| pair_scores[i][j]).fold(0.0f64, f64::max);
            let best_overlap = (0..m).map(|i| overlaps[i][j]).fold(0.0f64, f64::max);
            ln * (1.0 - best_score) + (1.0 - ln) * (1.0 - best_overlap)
        })
        .collect();

    JointAssociationMatrix::from_blocks(lost_diag, coupling, new_diag)
}

/// A permutation assigning each row its column, plus the objective value of
/// the matrix it was solved against.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// `perm[row] = col`; a bijection over `0..k`.
    pub perm: Vec<usize>,
    pub objective: f64,
}

/// Exact minimum-cost assignment for a square matrix of finite costs,
/// solved by shortest augmenting paths with dual potentials in O(k^3).
pub fn hungarian_min_cost(cost: &[Vec<f64>]) -> Result<Assignment, AssociationError> {
    let k = cost.len();
    if cost.iter().any(|row| row.len() != k) {
        return Err(AssociationError::NotSquare);
    }
    if cost.iter().flatten().any(|c| !c.is_finite()) {
        return Err(AssociationError::NonFinite);
    }
    if k == 0 {
        return Ok(Assignment {
            perm: Vec::new(),
            objective: 0.0,
        });
    }

    // Dual potentials for rows/columns; index 0 is a virtual root.
    let mut u = vec![0.0f64; k + 1];
    let mut v = vec![0.0f64; k + 1];
    // p[j] = 1-based row currently matched to column j (0 = unmatched).
    let mut p = vec![0usize; k + 1];
    let mut way = vec![0usize; k + 1];

    for i in 1..=k {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; k + 1];
        let mut used = vec![false; k + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=k {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=k {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        // Unwind the augmenting path.
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut perm = vec![usize::MAX; k];
    for j in 1..=k {
        perm[p[j] - 1] = j - 1;
    }
    let objective = perm
        .iter()
        .enumerate()
        .map(|(row, &col)| cost[row][col])
        .sum();
    Ok(Assignment { perm, objective })
}

/// Maximizes the total selected evidence of a joint matrix by flipping it
/// into a min-cost problem. Forbidden cells receive a finite sentinel cost
/// that strictly dominates any all-finite permutation, so they can never be
/// part of an optimum (the full diagonal is always finite); selecting one
/// anyway is reported as an internal failure.
pub fn solve_joint(matrix: &JointAssociationMatrix) -> Result<Assignment, AssociationError> {
    let k = matrix.size();
    if k == 0 {
        return Ok(Assignment {
            perm: Vec::new(),
            objective: 0.0,
        });
    }
    let finite: Vec<f64> = matrix.entries.iter().filter_map(|e| *e).collect();
    let max = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let sentinel = (max - min) + k as f64 + 1.0;
    let cost: Vec<Vec<f64>> = (0..k)
        .map(|row| {
            (0..k)
                .map(|col| match matrix.get(row, col) {
                    Some(value) => max - value,
                    None => sentinel,
                })
                .collect()
        })
        .collect();
    let solved = hungarian_min_cost(&cost)?;
    let mut objective = 0.0;
    for (row, &col) in solved.perm.iter().enumerate() {
        match matrix.get(row, col) {
            Some(value) => objective += value,
            None => return Err(AssociationError::ForbiddenCellChosen { row, col }),
        }
    }
    Ok(Assignment {
        perm: solved.perm,
        objective,
    })
}

/// Outcome for one maintained target.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PredictionDecision {
    Lost,
    /// Matched with the observation at this index.
    Tracked {
        observation: usize,
    },
}

/// Outcome for one observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObservationDecision {
    New,
    /// Claimed by the prediction at this index.
    Matched {
        prediction: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateDecision {
    pub predictions: Vec<PredictionDecision>,
    pub observations: Vec<ObservationDecision>,
}

/// Reads the solved permutation back into per-target and per-observation
/// decisions, verifying that coupled selections are mutually symmetric.
pub fn decode_states(
    assignment: &Assignment,
    m: usize,
    n: usize,
) -> Result<StateDecision, AssociationError> {
    assert_eq!(assignment.perm.len(), m + n, "assignment size mismatch");
    let mut predictions = Vec::with_capacity(m);
    for i in 0..m {
        let col = assignment.perm[i];
        if col == i {
            predictions.push(PredictionDecision::Lost);
        } else if col >= m {
            predictions.push(PredictionDecision::Tracked {
                observation: col - m,
            });
        } else {
            return Err(AssociationError::ForbiddenCellChosen { row: i, col });
        }
    }
    let mut observations = Vec::with_capacity(n);
    for j in 0..n {
        let row = m + j;
        let col = assignment.perm[row];
        if col == row {
            observations.push(ObservationDecision::New);
        } else if col < m {
            observations.push(ObservationDecision::Matched { prediction: col });
        } else {
            return Err(AssociationError::ForbiddenCellChosen { row, col });
        }
    }
    // Mutual consistency: i tracks j exactly when j is matched to i.
    for (i, decision) in predictions.iter().enumerate() {
        if let PredictionDecision::Tracked { observation } = decision {
            if observations[*observation] != (ObservationDecision::Matched { prediction: i }) {
                return Err(AssociationError::AsymmetricAssignment);
            }
        }
    }
    for (j, decision) in observations.iter().enumerate() {
        if let ObservationDecision::Matched { prediction } = decision {
            if predictions[*prediction] != (PredictionDecision::Tracked { observation: j }) {
                return Err(AssociationError::AsymmetricAssignment);
            }
        }
    }
    Ok(StateDecision {
        predictions,
        observations,
    })
}

/// Which block an association outcome was read from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    Lost,
    Tracked,
    New,
}

/// One logged association outcome: the two raw evidence terms fed into a
/// block cell and whether the pair was actually matched in ground truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssociationLogEntry {
    pub block: BlockKind,
    /// Confidence-derived term.
    pub confidence_term: f64,
    /// Location-derived (overlap) term.
    pub location_term: f64,
    pub matched: bool,
}

/// Per-block mixing weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambdaTriple {
    pub lost: f64,
    pub tracked: f64,
    pub new: f64,
}

/// Least-squares fit of each block's mixing weight against 0/1 match
/// targets, clamped to [0, 1]. Blocks whose two terms never differ keep
/// their initial weight (the objective is flat there). Callers wanting the
/// iterated scheme re-track between rounds and call this again.
pub fn calibrate_lambdas(
    log: &[AssociationLogEntry],
    initial: LambdaTriple,
) -> Result<LambdaTriple, AssociationError> {
    if log.is_empty() {
        return Err(AssociationError::EmptyLog);
    }
    let fit = |block: BlockKind, fallback: f64| {
        let mut num = 0.0;
        let mut den = 0.0;
        for entry in log.iter().filter(|e| e.block == block) {
            let target = if entry.matched { 1.0 } else { 0.0 };
            let diff = entry.confidence_term - entry.location_term;
            num += diff * (target - entry.location_term);
            den += diff * diff;
        }
        if den == 0.0 {
            fallback
        } else {
            (num / den).clamp(0.0, 1.0)
        }
    };
    Ok(LambdaTriple {
        lost: fit(BlockKind::Lost, initial.lost),
        tracked: fit(BlockKind::Tracked, initial.tracked),
        new: fit(BlockKind::New, initial.new),
    })
}
