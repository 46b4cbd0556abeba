//! Regularized information maximization over a softmax discriminator head,
//! the code-identity assignment of the deterministic posterior, and pruning
//! of classes that carry no mass.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::nn::{Activation, FeedForwardNet, NetGradients};
use crate::rng::Rng;
use crate::vq::QuantizationResult;

/// Logs are taken of probabilities clamped to this floor; the matching
/// `p log p` terms vanish anyway when `p` underflows.
const LOG_FLOOR: f64 = 1e-300;

#[inline]
fn safe_ln(p: f64) -> f64 {
    p.max(LOG_FLOOR).ln()
}

#[inline]
fn plogp(p: f64) -> f64 {
    if p > 0.0 {
        p * p.ln()
    } else {
        0.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator {
    pub net: FeedForwardNet,
}

impl Discriminator {
    /// `latent_dim → hidden… → num_classes` with rectifier hidden layers and
    /// linear logits.
    pub fn new(latent_dim: usize, hidden: &[usize], num_classes: usize, dropout: f64, rng: &mut Rng) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::Config("discriminator needs at least one class".into()));
        }
        let mut widths = vec![latent_dim];
        widths.extend_from_slice(hidden);
        widths.push(num_classes);
        Ok(Self {
            net: FeedForwardNet::new(&widths, Activation::Relu, Activation::Linear, dropout, rng)?,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.net.output_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.net.input_dim()
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    out
}

pub fn predict_proba(disc: &Discriminator, z: &Matrix) -> Result<Matrix> {
    if z.cols() != disc.latent_dim() {
        return Err(Error::Shape(format!(
            "discriminator expects {} latent features, got {}",
            disc.latent_dim(),
            z.cols()
        )));
    }
    Ok(softmax(&disc.net.predict(z)?))
}

/// `P(y = k)` as the mean of the predicted rows.
pub fn class_marginal(probs: &Matrix) -> Vec<f64> {
    probs.column_means()
}

pub fn entropy(dist: &[f64]) -> f64 {
    -dist.iter().map(|&p| plogp(p)).sum::<f64>()
}

/// Entropy of the batch-mean class distribution.
pub fn marginal_entropy(probs: &Matrix) -> f64 {
    entropy(&class_marginal(probs))
}

/// Mean over rows of the per-row entropy.
pub fn conditional_entropy(probs: &Matrix) -> f64 {
    let n = probs.rows().max(1) as f64;
    probs.row_iter().map(entropy).sum::<f64>() / n
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RimTerms {
    pub marginal_entropy: f64,
    pub conditional_entropy: f64,
    /// `R(λ) = (λ/2) Σ w²` over the discriminator weight matrices.
    pub penalty: f64,
    /// `H(P(y)) − α·H(y|x) − R(λ)`, to be maximized.
    pub objective: f64,
}

pub fn rim_objective(probs: &Matrix, alpha: f64, net: &FeedForwardNet, lambda: f64) -> RimTerms {
    let marginal_entropy = marginal_entropy(probs);
    let conditional_entropy = conditional_entropy(probs);
    let penalty = 0.5 * lambda * net.weight_sum_of_squares();
    RimTerms {
        marginal_entropy,
        conditional_entropy,
        penalty,
        objective: marginal_entropy - alpha * conditional_entropy - penalty,
    }
}

/// Gradient of the negated entropy part, `−(H(P(y)) − α·H(y|x))`, with
/// respect to the logits that produced `probs`. The weight penalty is
/// handled separately through [`NetGradients::add_l2`].
pub fn rim_logit_grad(probs: &Matrix, alpha: f64) -> Matrix {
    let n = probs.rows().max(1) as f64;
    let log_marginal: Vec<f64> = class_marginal(probs).into_iter().map(safe_ln).collect();
    let mut out = Matrix::zeros(probs.rows(), probs.cols());
    for (r, p) in probs.row_iter().enumerate() {
        // dL/dp_k up to a per-row constant, which the softmax Jacobian removes
        let g: Vec<f64> = p
            .iter()
            .zip(&log_marginal)
            .map(|(&pk, &lm)| (lm - alpha * safe_ln(pk)) / n)
            .collect();
        let mean: f64 = p.iter().zip(&g).map(|(a, b)| a * b).sum();
        for ((o, &pk), gk) in out.row_mut(r).iter_mut().zip(p).zip(&g) {
            *o = pk * (gk - mean);
        }
    }
    out
}

/// Discriminator gradients of the loss `−rim_objective` for a latent batch,
/// plus the gradient flowing back into the latents.
pub fn rim_backward(
    disc: &mut Discriminator,
    z: &Matrix,
    alpha: f64,
    lambda: f64,
    dropout_rng: Option<&mut Rng>,
) -> Result<(RimTerms, NetGradients, Matrix)> {
    let logits = disc.net.forward(z, dropout_rng)?;
    let probs = softmax(&logits);
    let terms = rim_objective(&probs, alpha, &disc.net, lambda);
    let (mut grads, dz) = disc.net.backward(&rim_logit_grad(&probs, alpha))?;
    if lambda != 0.0 {
        grads.add_l2(&disc.net, lambda)?;
    }
    Ok((terms, grads, dz))
}

/// Cluster labels read directly off the deterministic posterior: each
/// sample's class is its code index, and the classes are the codes in use.
#[derive(Clone, Debug, PartialEq)]
pub struct CodeAssignment {
    pub labels: Vec<usize>,
    /// Code index → number of samples, ascending by code.
    pub cluster_sizes: BTreeMap<usize, usize>,
}

impl CodeAssignment {
    pub fn num_clusters(&self) -> usize {
        self.cluster_sizes.len()
    }

    /// Labels renumbered `0..K` in ascending code order.
    pub fn compact_labels(&self) -> Vec<usize> {
        let rank: BTreeMap<usize, usize> = self
            .cluster_sizes
            .keys()
            .enumerate()
            .map(|(i, &c)| (c, i))
            .collect();
        self.labels.iter().map(|c| rank[c]).collect()
    }
}

pub fn eq4_assignment(quant: &QuantizationResult) -> CodeAssignment {
    let mut cluster_sizes = BTreeMap::new();
    for &k in &quant.indices {
        *cluster_sizes.entry(k).or_insert(0) += 1;
    }
    CodeAssignment {
        labels: quant.indices.clone(),
        cluster_sizes,
    }
}

/// `N × M` class probabilities of the deterministic posterior: all mass on
/// the nearest code.
pub fn eq4_probabilities(quant: &QuantizationResult, num_embeddings: usize) -> Matrix {
    let mut p = Matrix::zeros(quant.indices.len(), num_embeddings);
    for (i, &k) in quant.indices.iter().enumerate() {
        p[(i, k)] = 1.0;
    }
    p
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClusterAssignment {
    /// `N × K̃`, row-stochastic over the active classes.
    pub probs: Matrix,
    pub hard_labels: Vec<usize>,
    pub code_indices: Vec<usize>,
    pub active_mask: Vec<bool>,
}

fn masked_argmax(row: &[f64], mask: &[bool]) -> usize {
    let mut best = (usize::MAX, f64::NEG_INFINITY);
    for (k, (&p, &on)) in row.iter().zip(mask).enumerate() {
        if on && (best.0 == usize::MAX || p > best.1) {
            best = (k, p);
        }
    }
    best.0
}

impl ClusterAssignment {
    /// All classes active.
    pub fn new(probs: Matrix, code_indices: Vec<usize>) -> Self {
        let active_mask = vec![true; probs.cols()];
        let hard_labels = probs.row_iter().map(|r| masked_argmax(r, &active_mask)).collect();
        Self {
            probs,
            hard_labels,
            code_indices,
            active_mask,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.active_mask.len()
    }

    pub fn num_active(&self) -> usize {
        self.active_mask.iter().filter(|&&a| a).count()
    }

    pub fn marginal(&self) -> Vec<f64> {
        class_marginal(&self.probs)
    }

    /// Hard labels renumbered `0..K` in ascending class order.
    pub fn compact_labels(&self) -> Vec<usize> {
        let mut rank = vec![usize::MAX; self.active_mask.len()];
        let mut next = 0;
        for (k, &on) in self.active_mask.iter().enumerate() {
            if on {
                rank[k] = next;
                next += 1;
            }
        }
        self.hard_labels.iter().map(|&k| rank[k]).collect()
    }
}

/// Deactivates every class whose marginal mass is below `threshold` (or
/// exactly zero), renormalizes rows over the survivors and recomputes hard
/// labels. Returns the number of active classes.
pub fn prune_inactive(assign: &mut ClusterAssignment, threshold: f64) -> Result<usize> {
    if !(0.0..1.0).contains(&threshold) {
        return Err(Error::Config(format!("pruning threshold {threshold} outside [0, 1)")));
    }
    let marginal = assign.marginal();
    let mask: Vec<bool> = assign
        .active_mask
        .iter()
        .zip(&marginal)
        .map(|(&on, &m)| on && m > 0.0 && m >= threshold)
        .collect();
    if !mask.iter().any(|&a| a) {
        return Err(Error::DegenerateClustering {
            threshold,
            max_mass: marginal.iter().copied().fold(0.0, f64::max),
        });
    }
    let k_active = mask.iter().filter(|&&a| a).count();
    for r in 0..assign.probs.rows() {
        let row = assign.probs.row_mut(r);
        let kept: f64 = row.iter().zip(&mask).filter(|(_, &on)| on).map(|(p, _)| p).sum();
        for (p, &on) in row.iter_mut().zip(&mask) {
            *p = if !on {
                0.0
            } else if kept > 0.0 {
                *p / kept
            } else {
                1.0 / k_active as f64
            };
        }
    }
    assign.hard_labels = assign
        .probs
        .row_iter()
        .map(|r| masked_argmax(r, &mask))
        .collect();
    assign.active_mask = mask;
    Ok(k_active)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::check_gradient;
    use crate::rng::{substream, Stream};
    use crate::vq::Codebook;
    use rand::Rng as _;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn softmax_examples() {
        let p = softmax(&m(&[&[0.3, 0.3, 0.3, 0.3]]));
        assert!(p.as_slice().iter().all(|&v| (v - 0.25).abs() < 1e-15));
        let p = softmax(&m(&[&[2f64.ln(), 0.0]]));
        assert!((p[(0, 0)] - 2.0 / 3.0).abs() < 1e-15);
        assert!((p[(0, 1)] - 1.0 / 3.0).abs() < 1e-15);
        let a = softmax(&m(&[&[1.0, -2.0, 0.5]]));
        let b = softmax(&m(&[&[1001.0, 998.0, 1000.5]]));
        assert!(a.max_abs_diff(&b) < 1e-12);
    }

    #[test]
    fn entropy_examples() {
        let onehot = m(&[&[1.0, 0.0], &[1.0, 0.0]]);
        assert_eq!(marginal_entropy(&onehot), 0.0);
        assert_eq!(conditional_entropy(&onehot), 0.0);
        let split = m(&[&[1.0, 0.0], &[0.0, 1.0]]);
        assert!((marginal_entropy(&split) - 2f64.ln()).abs() < 1e-15);
        let uniform = Matrix::filled(3, 4, 0.25);
        assert!((marginal_entropy(&uniform) - 4f64.ln()).abs() < 1e-15);
        assert!((conditional_entropy(&uniform) - 4f64.ln()).abs() < 1e-15);
        let mixed = m(&[&[0.5, 0.5], &[1.0, 0.0]]);
        assert!((conditional_entropy(&mixed) - 0.3466).abs() < 1e-4);
    }

    #[test]
    fn objective_at_the_extremes() {
        let mut rng = substream(1, Stream::Init);
        let disc = Discriminator::new(2, &[], 3, 0.0, &mut rng).unwrap();
        let probs = m(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]]);
        let t = rim_objective(&probs, 1.0, &disc.net, 0.1);
        let r = 0.05 * disc.net.weight_sum_of_squares();
        assert!((t.objective - (3f64.ln() - r)).abs() < 1e-14);
        let soft = m(&[&[0.2, 0.5, 0.3], &[0.9, 0.05, 0.05]]);
        let t0 = rim_objective(&soft, 0.0, &disc.net, 0.0);
        assert_eq!(t0.objective, marginal_entropy(&soft));
    }

    #[test]
    fn logit_gradient_matches_finite_differences() {
        let mut rng = substream(2, Stream::Sampling);
        let logits = Matrix::from_fn(6, 4, |_, _| rng.random_range(-2.0..2.0));
        for alpha in [0.0, 0.5, 1.0, 2.0] {
            let analytic = rim_logit_grad(&softmax(&logits), alpha);
            let report = check_gradient(
                |z| {
                    let p = softmax(&Matrix::from_vec(6, 4, z.to_vec()).unwrap());
                    -(marginal_entropy(&p) - alpha * conditional_entropy(&p))
                },
                logits.as_slice(),
                analytic.as_slice(),
                1e-5,
                1e-6,
            );
            assert!(report.passed, "alpha={alpha}: {report:?}");
        }
    }

    #[test]
    fn code_assignment_counts_codes() {
        let book = Codebook::from_vectors(Matrix::from_fn(8, 1, |r, _| r as f64));
        let z = m(&[&[3.1], &[2.9], &[7.0], &[6.8], &[7.2]]);
        let a = eq4_assignment(&book.lookup(&z).unwrap());
        assert_eq!(a.num_clusters(), 2);
        assert_eq!(a.cluster_sizes.values().copied().collect::<Vec<_>>(), vec![2, 3]);
        assert_eq!(a.compact_labels(), vec![0, 0, 1, 1, 1]);
        let single = eq4_assignment(&book.lookup(&m(&[&[0.4]])).unwrap());
        assert_eq!(single.num_clusters(), 1);
    }

    fn concentrated(k_tilde: usize, heavy: &[usize], n: usize) -> ClusterAssignment {
        let probs = Matrix::from_fn(n, k_tilde, |i, k| {
            let target = heavy[i % heavy.len()];
            if k == target {
                0.99
            } else {
                0.01 / (k_tilde - 1) as f64
            }
        });
        ClusterAssignment::new(probs, vec![0; n])
    }

    #[test]
    fn pruning_keeps_only_classes_with_mass() {
        let mut a = concentrated(64, &[0, 5, 9, 20, 33, 63], 120);
        let k = prune_inactive(&mut a, 1.0 / 128.0).unwrap();
        assert_eq!(k, 6);
        for row in a.probs.row_iter() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let before = a.clone();
        assert_eq!(prune_inactive(&mut a, 1.0 / 128.0).unwrap(), 6);
        assert_eq!(a.active_mask, before.active_mask);
        assert_eq!(a.hard_labels, before.hard_labels);
    }

    #[test]
    fn zero_threshold_drops_only_empty_classes() {
        let probs = m(&[&[0.7, 0.3, 0.0], &[0.2, 0.8, 0.0]]);
        let mut a = ClusterAssignment::new(probs, vec![0, 0]);
        assert_eq!(prune_inactive(&mut a, 0.0).unwrap(), 2);
    }

    #[test]
    fn small_class_is_pruned() {
        let probs = Matrix::from_fn(200, 2, |i, k| match (i, k) {
            (0, 1) => 1.0,
            (0, 0) => 0.0,
            (_, 0) => 1.0,
            _ => 0.0,
        });
        let mut a = ClusterAssignment::new(probs, vec![0; 200]);
        assert_eq!(prune_inactive(&mut a, 0.01).unwrap(), 1);
        assert!(!a.active_mask[1]);
        assert_eq!(a.hard_labels[0], 0);
    }

    #[test]
    fn all_classes_below_threshold_is_degenerate() {
        let mut a = ClusterAssignment::new(Matrix::filled(4, 4, 0.25), vec![0; 4]);
        assert!(matches!(
            prune_inactive(&mut a, 0.5),
            Err(Error::DegenerateClustering { .. })
        ));
    }
}
