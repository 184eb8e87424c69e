//! Training losses on abstract feature vectors: a two-class log loss, a
//! triplet-style embedding loss with closed-form gradients, their weighted
//! combination, and a small gradient-descent trainer for a linear embedding.

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LossError {
    #[error("feature dimensions differ: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("negative set must be non-empty")]
    NoNegatives,
    #[error("class probabilities must sum to 1")]
    NotAProbability,
    #[error("probability of the true class must be positive")]
    ZeroProbability,
    #[error("learning rate must be positive")]
    BadLearningRate,
    #[error("embedding output dimension must not exceed the input dimension")]
    BadEmbeddingShape,
}

/// Fixed-length real feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVec(Vec<f64>);

impl FeatureVec {
    pub fn new(values: Vec<f64>) -> Self {
        debug_assert!(values.iter().all(|v| v.is_finite()), "non-finite feature");
        Self(values)
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn dot(&self, other: &FeatureVec) -> Result<f64, LossError> {
        check_dims(self, other)?;
        Ok(self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum())
    }
}

impl From<Vec<f64>> for FeatureVec {
    fn from(values: Vec<f64>) -> Self {
        Self::new(values)
    }
}

fn check_dims(a: &FeatureVec, b: &FeatureVec) -> Result<(), LossError> {
    if a.dim() != b.dim() {
        return Err(LossError::DimensionMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    Ok(())
}

/// One anchor, one positive of the same identity, and the negatives they
/// are contrasted against.
#[derive(Debug, Clone, PartialEq)]
pub struct TripletBatch {
    pub anchor: FeatureVec,
    pub positive: FeatureVec,
    pub negatives: Vec<FeatureVec>,
}

impl TripletBatch {
    pub fn new(
        anchor: FeatureVec,
        positive: FeatureVec,
        negatives: Vec<FeatureVec>,
    ) -> Result<Self, LossError> {
        if negatives.is_empty() {
            return Err(LossError::NoNegatives);
        }
        check_dims(&anchor, &positive)?;
        for n in &negatives {
            check_dims(&anchor, n)?;
        }
        Ok(Self {
            anchor,
            positive,
            negatives,
        })
    }
}

/// Soft penalty `log2(1 + 2^(-x))`: positive, strictly decreasing, 1 at 0.
pub fn phi(x: f64) -> f64 {
    (1.0 + 2f64.powf(-x)).log2()
}

/// Derivative helper `1 / (1 + 2^x)`; `phi'(x) = -psi(x)`.
fn psi(x: f64) -> f64 {
    1.0 / (1.0 + 2f64.powf(x))
}

/// Squared L2 distance between two feature vectors.
pub fn sq_distance(a: &FeatureVec, b: &FeatureVec) -> Result<f64, LossError> {
    check_dims(a, b)?;
    Ok(a.0.iter().zip(&b.0).map(|(x, y)| (x - y) * (x - y)).sum())
}

/// Sum over negatives of `phi(D(anchor, neg) - D(anchor, pos))`. Small when
/// the anchor sits far from every negative relative to its positive.
pub fn triplet_loss(batch: &TripletBatch) -> Result<f64, LossError> {
    let d_pos = sq_distance(&batch.anchor, &batch.positive)?;
    let mut total = 0.0;
    for neg in &batch.negatives {
        let d_neg = sq_distance(&batch.anchor, neg)?;
        total += phi(d_neg - d_pos);
    }
    Ok(total)
}

/// Gradients of [`triplet_loss`] with respect to every batch member.
#[derive(Debug, Clone, PartialEq)]
pub struct TripletGradients {
    pub anchor: FeatureVec,
    pub positive: FeatureVec,
    pub negatives: Vec<FeatureVec>,
}

/// Exact derivatives of [`triplet_loss`]:
///
/// * d/d anchor   = 2 * sum_c psi_c * (neg_c - pos)
/// * d/d positive = 2 * sum_c psi_c * (pos - anchor)
/// * d/d neg_c    = 2 * psi_c * (anchor - neg_c)
///
/// with `psi_c = 1 / (1 + 2^(d_c))` and
/// `d_c = D(anchor, neg_c) - D(anchor, pos)`. These agree with central
/// finite differences of the loss; that agreement is the tested contract.
pub fn triplet_gradients(batch: &TripletBatch) -> Result<TripletGradients, LossError> {
    let dim = batch.anchor.dim();
    let d_pos = sq_distance(&batch.anchor, &batch.positive)?;
    let mut grad_anchor = vec![0.0; dim];
    let mut grad_positive = vec![0.0; dim];
    let mut grad_negatives = Vec::with_capacity(batch.negatives.len());
    let a = batch.anchor.values();
    let p = batch.positive.values();
    for neg in &batch.negatives {
        let d_neg = sq_distance(&batch.anchor, neg)?;
        let weight = 2.0 * psi(d_neg - d_pos);
        let n = neg.values();
        let mut grad_neg = vec![0.0; dim];
        for i in 0..dim {
            grad_anchor[i] += weight * (n[i] - p[i]);
            grad_positive[i] += weight * (p[i] - a[i]);
            grad_neg[i] = weight * (a[i] - n[i]);
        }
        grad_negatives.push(FeatureVec::new(grad_neg));
    }
    Ok(TripletGradients {
        anchor: FeatureVec::new(grad_anchor),
        positive: FeatureVec::new(grad_positive),
        negatives: grad_negatives,
    })
}

/// Two-class log loss `-ln p_u` for class probabilities `p = (p0, p1)` and
/// a true class `u` (`true` selects `p1`).
pub fn log_loss(p: (f64, f64), target: bool) -> Result<f64, LossError> {
    if (p.0 + p.1 - 1.0).abs() > 1e-9 {
        return Err(LossError::NotAProbability);
    }
    let p_u = if target { p.1 } else { p.0 };
    if p_u <= 0.0 {
        return Err(LossError::ZeroProbability);
    }
    Ok(-p_u.ln())
}

/// Classification loss plus `mu` times the embedding loss.
pub fn multi_task_loss(
    p: (f64, f64),
    target: bool,
    batch: &TripletBatch,
    mu: f64,
) -> Result<f64, LossError> {
    Ok(log_loss(p, target)? + mu * triplet_loss(batch)?)
}

/// Linear map from raw features to an embedded space, stored as one row
/// per output dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearEmbedding {
    rows: Vec<Vec<f64>>,
    d_in: usize,
}

impl LinearEmbedding {
    /// Identity-padded initialization; requires `d_out <= d_in` so the map
    /// starts as a plain coordinate projection.
    pub fn identity(d_in: usize, d_out: usize) -> Result<Self, LossError> {
        if d_out > d_in || d_out == 0 {
            return Err(LossError::BadEmbeddingShape);
        }
        let rows = (0..d_out)
            .map(|r| {
                let mut row = vec![0.0; d_in];
                row[r] = 1.0;
                row
            })
            .collect();
        Ok(Self { rows, d_in })
    }

    pub fn input_dim(&self) -> usize {
        self.d_in
    }

    pub fn output_dim(&self) -> usize {
        self.rows.len()
    }

    pub fn embed(&self, x: &FeatureVec) -> Result<FeatureVec, LossError> {
        if x.dim() != self.d_in {
            return Err(LossError::DimensionMismatch {
                left: x.dim(),
                right: self.d_in,
            });
        }
        let out = self
            .rows
            .iter()
            .map(|row| row.iter().zip(x.values()).map(|(w, v)| w * v).sum())
            .collect();
        Ok(FeatureVec::new(out))
    }
}

/// Result of [`train_embedding`]: the trained map plus the per-iteration
/// mean loss, recorded so callers can check that training did not diverge.
#[derive(Debug, Clone)]
pub struct EmbeddingTrainingReport {
    pub embedding: LinearEmbedding,
    pub loss_history: Vec<f64>,
}

fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Joint training of a logistic classifier head (on raw features, labels
/// implied by role: anchor and positive are class 1, negatives class 0) and
/// a linear embedding driven by the triplet term. Each quad contributes a
/// batch of four samples; the embedding only receives gradient through the
/// `mu`-weighted triplet loss on embedded vectors.
pub fn train_embedding(
    quads: &[TripletBatch],
    d_out: usize,
    mu: f64,
    learning_rate: f64,
    iterations: usize,
) -> Result<EmbeddingTrainingReport, LossError> {
    if learning_rate <= 0.0 || !learning_rate.is_finite() {
        return Err(LossError::BadLearningRate);
    }
    let d_in = quads.first().map(|q| q.anchor.dim()).unwrap_or(d_out);
    for quad in quads {
        if quad.anchor.dim() != d_in {
            return Err(LossError::DimensionMismatch {
                left: quad.anchor.dim(),
                right: d_in,
            });
        }
    }
    let mut embedding = LinearEmbedding::identity(d_in, d_out)?;
    let mut head = vec![0.0; d_in];
    let mut head_bias = 0.0;
    let mut loss_history = Vec::with_capacity(iterations);

    for _ in 0..iterations {
        let mut iter_loss = 0.0;
        for quad in quads {
            let members: Vec<(&FeatureVec, bool)> = std::iter::once((&quad.anchor, true))
                .chain(std::iter::once((&quad.positive, true)))
                .chain(quad.negatives.iter().map(|n| (n, false)))
                .collect();

            // Classifier head: plain logistic regression over the quad.
            let mut cls_loss = 0.0;
            let mut head_grad = vec![0.0; d_in];
            let mut bias_grad = 0.0;
            for (x, target) in &members {
                let z = head.iter().zip(x.values()).map(|(w, v)| w * v).sum::<f64>() + head_bias;
                let s = logistic(z);
                cls_loss += log_loss((1.0 - s, s), *target)?;
                let err = s - if *target { 1.0 } else { 0.0 };
                for (g, v) in head_grad.iter_mut().zip(x.values()) {
                    *g += err * v;
                }
                bias_grad += err;
            }
            let scale = learning_rate / members.len() as f64;
            for (w, g) in head.iter_mut().zip(&head_grad) {
                *w -= scale * g;
            }
            head_bias -= scale * bias_grad;

            // Embedding branch: triplet gradients on embedded vectors,
            // chained back onto the map rows.
            let embedded = TripletBatch::new(
                embedding.embed(&quad.anchor)?,
                embedding.embed(&quad.positive)?,
                quad.negatives
                    .iter()
                    .map(|n| embedding.embed(n))
                    .collect::<Result<Vec<_>, _>>()?,
            )?;
            let trip_loss = triplet_loss(&embedded)?;
            iter_loss += cls_loss / members.len() as f64 + mu * trip_loss;
            if mu > 0.0 {
                let grads = triplet_gradients(&embedded)?;
                let mut apply = |grad: &FeatureVec, raw: &FeatureVec| {
                    for (row, g) in embedding.rows.iter_mut().zip(grad.values()) {
                        let step = learning_rate * mu * g;
                        for (w, v) in row.iter_mut().zip(raw.values()) {
                            *w -= step * v;
                        }
                    }
                };
                apply(&grads.anchor, &quad.anchor);
                apply(&grads.positive, &quad.positive);
                for (grad, raw) in grads.negatives.iter().zip(&quad.negatives) {
                    apply(grad, raw);
                }
            }
        }
        if !quads.is_empty() {
            loss_history.push(iter_loss / quads.len() as f64);
        }
    }

    Ok(EmbeddingTrainingReport {
        embedding,
        loss_history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn fv(values: &[f64]) -> FeatureVec {
        FeatureVec::new(values.to_vec())
    }

    fn random_vec(rng: &mut ChaCha8Rng, dim: usize, sigma: f64) -> FeatureVec {
        let normal = Normal::new(0.0, sigma).unwrap();
        FeatureVec::new((0..dim).map(|_| normal.sample(rng)).collect())
    }

    #[test]
    fn phi_at_zero_is_one() {
        assert_eq!(phi(0.0), 1.0);
    }

    #[test]
    fn phi_at_one_matches_closed_form() {
        assert!((phi(1.0) - 1.5f64.log2()).abs() < 1e-12);
    }

    #[test]
    fn phi_is_strictly_decreasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut xs: Vec<f64> = (0..200).map(|_| rng.random_range(-20.0..20.0)).collect();
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        xs.dedup();
        for pair in xs.windows(2) {
            assert!(
                phi(pair[0]) > phi(pair[1]),
                "phi not decreasing at {pair:?}"
            );
        }
        assert!(xs.iter().all(|x| phi(*x) > 0.0));
    }

    #[test]
    fn sq_distance_examples() {
        assert_eq!(
            sq_distance(&fv(&[1.0, 2.0]), &fv(&[1.0, 2.0])).unwrap(),
            0.0
        );
        assert_eq!(
            sq_distance(&fv(&[1.0, 0.0]), &fv(&[0.0, 1.0])).unwrap(),
            2.0
        );
        assert_eq!(sq_distance(&fv(&[3.0]), &fv(&[0.0])).unwrap(), 9.0);
        assert!(matches!(
            sq_distance(&fv(&[1.0]), &fv(&[1.0, 2.0])),
            Err(LossError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn identical_vectors_give_loss_equal_to_negative_count() {
        let v = fv(&[0.3, -0.7, 1.1]);
        let batch = TripletBatch::new(v.clone(), v.clone(), vec![v.clone(), v.clone()]).unwrap();
        assert!((triplet_loss(&batch).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn triplet_loss_matches_scalar_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let batch = TripletBatch::new(
                random_vec(&mut rng, 3, 1.0),
                random_vec(&mut rng, 3, 1.0),
                vec![random_vec(&mut rng, 3, 1.0), random_vec(&mut rng, 3, 1.0)],
            )
            .unwrap();
            // Independent recomputation straight from the definition.
            let d = |a: &FeatureVec, b: &FeatureVec| {
                a.values()
                    .iter()
                    .zip(b.values())
                    .map(|(x, y)| (x - y).powi(2))
                    .sum::<f64>()
            };
            let expected: f64 = batch
                .negatives
                .iter()
                .map(|n| {
                    let dc = d(&batch.anchor, n) - d(&batch.anchor, &batch.positive);
                    (1.0 + 2f64.powf(-dc)).log2()
                })
                .sum();
            assert!((triplet_loss(&batch).unwrap() - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn gradients_vanish_for_identical_vectors() {
        let v = fv(&[0.5, -1.0, 2.0]);
        let batch = TripletBatch::new(v.clone(), v.clone(), vec![v.clone(), v.clone()]).unwrap();
        let grads = triplet_gradients(&batch).unwrap();
        assert!(grads.anchor.values().iter().all(|g| *g == 0.0));
        assert!(grads.positive.values().iter().all(|g| *g == 0.0));
        assert!(grads
            .negatives
            .iter()
            .all(|n| n.values().iter().all(|g| *g == 0.0)));
    }

    #[test]
    fn single_negative_anchor_gradient_is_parallel_to_neg_minus_pos() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let batch = TripletBatch::new(
            random_vec(&mut rng, 4, 0.5),
            random_vec(&mut rng, 4, 0.5),
            vec![random_vec(&mut rng, 4, 0.5)],
        )
        .unwrap();
        let grads = triplet_gradients(&batch).unwrap();
        let dir: Vec<f64> = batch.negatives[0]
            .values()
            .iter()
            .zip(batch.positive.values())
            .map(|(n, p)| n - p)
            .collect();
        // Every component must share the same positive ratio against dir.
        let ratios: Vec<f64> = grads
            .anchor
            .values()
            .iter()
            .zip(&dir)
            .filter(|(_, d)| d.abs() > 1e-9)
            .map(|(g, d)| g / d)
            .collect();
        assert!(!ratios.is_empty());
        for r in &ratios {
            assert!((r - ratios[0]).abs() < 1e-9);
            assert!(*r > 0.0);
        }
    }

    /// Central finite differences of the loss, the independent oracle the
    /// analytic gradients are checked against.
    fn finite_difference_check(batch: &TripletBatch, step: f64, tol: f64) {
        let grads = triplet_gradients(batch).unwrap();
        let dim = batch.anchor.dim();
        let eval = |b: &TripletBatch| triplet_loss(b).unwrap();
        let check = |analytic: &FeatureVec,
                     select: &dyn Fn(&mut TripletBatch) -> &mut FeatureVec| {
            for i in 0..dim {
                let mut plus = batch.clone();
                select(&mut plus).values_mut()[i] += step;
                let mut minus = batch.clone();
                select(&mut minus).values_mut()[i] -= step;
                let fd = (eval(&plus) - eval(&minus)) / (2.0 * step);
                let g = analytic.values()[i];
                let rel = (g - fd).abs() / fd.abs().max(1e-6);
                assert!(rel < tol, "component {i}: analytic {g}, fd {fd}, rel {rel}");
            }
        };
        check(&grads.anchor, &|b| &mut b.anchor);
        check(&grads.positive, &|b| &mut b.positive);
        for (k, analytic) in grads.negatives.iter().enumerate() {
            check(analytic, &move |b| &mut b.negatives[k]);
        }
    }

    #[test]
    fn gradients_agree_with_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..25 {
            let batch = TripletBatch::new(
                random_vec(&mut rng, 8, 0.5),
                random_vec(&mut rng, 8, 0.5),
                vec![random_vec(&mut rng, 8, 0.5), random_vec(&mut rng, 8, 0.5)],
            )
            .unwrap();
            finite_difference_check(&batch, 1e-4, 1e-5);
        }
    }

    #[test]
    fn equal_distance_terms_are_swap_invariant() {
        // With D(a, pos) = D(a, neg) the term sits at phi(0) regardless of
        // which vector plays the positive role.
        let anchor = fv(&[0.0, 0.0]);
        let pos = fv(&[1.0, 0.0]);
        let neg = fv(&[0.0, 1.0]);
        let forward = TripletBatch::new(anchor.clone(), pos.clone(), vec![neg.clone()]).unwrap();
        let swapped = TripletBatch::new(anchor, neg, vec![pos]).unwrap();
        assert_eq!(triplet_loss(&forward).unwrap(), 1.0);
        assert_eq!(triplet_loss(&swapped).unwrap(), 1.0);
    }

    #[test]
    fn log_loss_examples() {
        assert_eq!(log_loss((0.0, 1.0), true).unwrap(), 0.0);
        assert!((log_loss((0.5, 0.5), true).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((log_loss((0.9, 0.1), false).unwrap() - (-0.9f64.ln())).abs() < 1e-12);
        assert_eq!(log_loss((1.0, 0.0), true), Err(LossError::ZeroProbability));
        assert_eq!(log_loss((0.4, 0.4), true), Err(LossError::NotAProbability));
    }

    #[test]
    fn multi_task_loss_combines_terms() {
        let v = fv(&[1.0, 0.0]);
        let batch = TripletBatch::new(v.clone(), v.clone(), vec![v.clone(), v.clone()]).unwrap();
        // mu = 0 reduces to the classification loss alone.
        let cls = log_loss((0.5, 0.5), true).unwrap();
        assert_eq!(multi_task_loss((0.5, 0.5), true, &batch, 0.0).unwrap(), cls);
        // Components ln 2 and 2.0 with mu = 0.7.
        let total = multi_task_loss((0.5, 0.5), true, &batch, 0.7).unwrap();
        assert!((total - (std::f64::consts::LN_2 + 1.4)).abs() < 1e-12);
        // phi is strictly positive, so any mu > 0 exceeds the log loss.
        assert!(multi_task_loss((0.5, 0.5), true, &batch, 1.0).unwrap() > cls);
    }

    #[test]
    fn multi_task_loss_is_affine_in_mu() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let batch = TripletBatch::new(
            random_vec(&mut rng, 5, 1.0),
            random_vec(&mut rng, 5, 1.0),
            vec![random_vec(&mut rng, 5, 1.0)],
        )
        .unwrap();
        let at = |mu: f64| multi_task_loss((0.3, 0.7), true, &batch, mu).unwrap();
        let (l0, l1, l2) = (at(0.0), at(1.0), at(2.0));
        assert!(((l2 - l1) - (l1 - l0)).abs() < 1e-12);
    }

    fn toy_quads(rng: &mut ChaCha8Rng, count: usize) -> Vec<TripletBatch> {
        // Two clusters separated along dimension 0, noisy elsewhere.
        let noise = Normal::new(0.0, 1.0).unwrap();
        let sample = |rng: &mut ChaCha8Rng, cluster: f64| {
            let mut v: Vec<f64> = (0..6).map(|_| noise.sample(rng)).collect();
            v[0] = cluster + 0.2 * noise.sample(rng);
            FeatureVec::new(v)
        };
        (0..count)
            .map(|_| {
                TripletBatch::new(
                    sample(rng, 1.5),
                    sample(rng, 1.5),
                    vec![sample(rng, -1.5), sample(rng, -1.5)],
                )
                .unwrap()
            })
            .collect()
    }

    #[test]
    fn zero_iterations_return_the_initialization() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let quads = toy_quads(&mut rng, 4);
        let report = train_embedding(&quads, 3, 0.7, 0.01, 0).unwrap();
        assert_eq!(report.embedding, LinearEmbedding::identity(6, 3).unwrap());
        assert!(report.loss_history.is_empty());
    }

    #[test]
    fn training_does_not_diverge_and_separates_clusters() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let quads = toy_quads(&mut rng, 24);
        let report = train_embedding(&quads, 3, 0.7, 0.005, 60).unwrap();
        let hist = &report.loss_history;
        let tenth = (hist.len() / 10).max(1);
        let first: f64 = hist[..tenth].iter().sum::<f64>() / tenth as f64;
        let last: f64 = hist[hist.len() - tenth..].iter().sum::<f64>() / tenth as f64;
        assert!(
            last <= first,
            "training diverged: first {first}, last {last}"
        );

        // Measured separation on held-out points after embedding.
        let held = toy_quads(&mut rng, 16);
        let mut intra = Vec::new();
        let mut inter = Vec::new();
        for quad in &held {
            let a = report.embedding.embed(&quad.anchor).unwrap();
            let p = report.embedding.embed(&quad.positive).unwrap();
            intra.push(sq_distance(&a, &p).unwrap());
            for n in &quad.negatives {
                inter.push(sq_distance(&a, &report.embedding.embed(n).unwrap()).unwrap());
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(
            mean(&intra) < mean(&inter),
            "intra {} not below inter {}",
            mean(&intra),
            mean(&inter)
        );
    }

    #[test]
    fn zero_mu_leaves_the_embedding_untouched() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let quads = toy_quads(&mut rng, 8);
        let report = train_embedding(&quads, 3, 0.0, 0.01, 10).unwrap();
        assert_eq!(report.embedding, LinearEmbedding::identity(6, 3).unwrap());
    }

    #[test]
    fn bad_learning_rate_is_rejected() {
        assert!(matches!(
            train_embedding(&[], 2, 0.7, 0.0, 5),
            Err(LossError::BadLearningRate)
        ));
    }
}
