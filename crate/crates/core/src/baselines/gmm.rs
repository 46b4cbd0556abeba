//! Gaussian mixtures with diagonal covariances fitted by EM.

use log::warn;

use crate::baselines::kmeans::kmeans_with_rng;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::{substream, Stream};

/// Smallest variance any component may have along any axis.
pub const VARIANCE_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GmmResult {
    /// Posterior component probabilities, one row per sample.
    pub responsibilities: Matrix,
    pub weights: Vec<f64>,
    pub means: Matrix,
    pub variances: Matrix,
    /// Total log-likelihood after each E-step.
    pub log_likelihood: Vec<f64>,
    /// Whether the variance floor was hit at any iteration.
    pub floored: bool,
}

impl GmmResult {
    pub fn labels(&self) -> Vec<usize> {
        self.responsibilities
            .row_iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |b, (j, &p)| if p > b.1 { (j, p) } else { b })
                    .0
            })
            .collect()
    }

    pub fn final_log_likelihood(&self) -> f64 {
        *self.log_likelihood.last().expect("at least one E-step")
    }
}

/// EM from a k-means start. Stops when the log-likelihood gains less than
/// `tol` (relative) or after `max_iter` M-steps.
pub fn gmm_em(x: &Matrix, k: usize, seed: u64, max_iter: usize, tol: f64) -> Result<GmmResult> {
    let (n, d) = x.shape();
    if k == 0 || k > n {
        return Err(Error::Input(format!("cannot fit {k} components to {n} samples")));
    }
    let mut rng = substream(seed, Stream::Baseline);
    let start = kmeans_with_rng(x, k, 100, 1, &mut rng)?;

    let mut resp = Matrix::zeros(n, k);
    for (i, &l) in start.labels.iter().enumerate() {
        resp.row_mut(i)[l] = 1.0;
    }
    let mut weights = vec![0.0; k];
    let mut means = Matrix::zeros(k, d);
    let mut variances = Matrix::zeros(k, d);
    let mut floored = false;
    let mut history = Vec::new();
    for iter in 0..=max_iter {
        floored |= m_step(x, &resp, &mut weights, &mut means, &mut variances);
        let ll = e_step(x, &weights, &means, &variances, &mut resp);
        if !ll.is_finite() {
            return Err(Error::Numeric(format!("log-likelihood became {ll} at iteration {iter}")));
        }
        let done = history
            .last()
            .is_some_and(|&prev: &f64| ll - prev <= tol * prev.abs().max(1.0));
        history.push(ll);
        if done {
            break;
        }
    }
    if floored {
        warn!("gaussian mixture: component variances were floored at {VARIANCE_FLOOR}");
    }
    Ok(GmmResult {
        responsibilities: resp,
        weights,
        means,
        variances,
        log_likelihood: history,
        floored,
    })
}

/// Returns whether any variance had to be floored.
fn m_step(x: &Matrix, resp: &Matrix, weights: &mut [f64], means: &mut Matrix, variances: &mut Matrix) -> bool {
    let n = x.rows() as f64;
    let mass = resp.column_sums();
    let mut floored = false;
    for (j, &m) in mass.iter().enumerate() {
        weights[j] = m / n;
        if m <= 0.0 {
            // an empty component keeps its parameters and stays at weight 0
            continue;
        }
        let mean: Vec<f64> = (0..x.cols())
            .map(|c| (0..x.rows()).map(|i| resp[(i, j)] * x[(i, c)]).sum::<f64>() / m)
            .collect();
        for c in 0..x.cols() {
            let v = (0..x.rows())
                .map(|i| resp[(i, j)] * (x[(i, c)] - mean[c]).powi(2))
                .sum::<f64>()
                / m;
            if v < VARIANCE_FLOOR {
                floored = true;
            }
            variances.row_mut(j)[c] = v.max(VARIANCE_FLOOR);
        }
        means.row_mut(j).copy_from_slice(&mean);
    }
    floored
}

/// Fills `resp` and returns the total log-likelihood.
fn e_step(x: &Matrix, weights: &[f64], means: &Matrix, variances: &Matrix, resp: &mut Matrix) -> f64 {
    let k = weights.len();
    let ln_2pi = (2.0 * std::f64::consts::PI).ln();
    let norms: Vec<f64> = (0..k)
        .map(|j| -0.5 * variances.row(j).iter().map(|v| ln_2pi + v.ln()).sum::<f64>())
        .collect();
    let mut total = 0.0;
    let mut logp = vec![0.0; k];
    for i in 0..x.rows() {
        for j in 0..k {
            logp[j] = if weights[j] > 0.0 {
                let quad: f64 = x
                    .row(i)
                    .iter()
                    .zip(means.row(j))
                    .zip(variances.row(j))
                    .map(|((v, m), s)| (v - m) * (v - m) / s)
                    .sum();
                weights[j].ln() + norms[j] - 0.5 * quad
            } else {
                f64::NEG_INFINITY
            };
        }
        let max = logp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = logp.iter().map(|l| (l - max).exp()).sum();
        let lse = max + sum.ln();
        total += lse;
        for (r, l) in resp.row_mut(i).iter_mut().zip(&logp) {
            *r = (l - lse).exp();
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::nmi;
    use rand_distr::{Distribution, StandardNormal};

    fn blobs(n_per: usize, offset: f64, seed: u64) -> (Matrix, Vec<usize>) {
        let mut rng = substream(seed, Stream::Synthetic);
        let truth: Vec<usize> = (0..2 * n_per).map(|i| i / n_per).collect();
        let x = Matrix::from_fn(2 * n_per, 3, |i, _| {
            let g: f64 = StandardNormal.sample(&mut rng);
            truth[i] as f64 * offset + g
        });
        (x, truth)
    }

    #[test]
    fn separated_blobs_get_one_hot_responsibilities() {
        let (x, truth) = blobs(50, 20.0, 4);
        let r = gmm_em(&x, 2, 0, 200, 1e-10).unwrap();
        assert_eq!(nmi(&r.labels(), &truth).unwrap(), 1.0);
        for row in r.responsibilities.row_iter() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(row.iter().any(|&p| p > 1.0 - 1e-9));
        }
    }

    #[test]
    fn single_component_matches_sample_moments() {
        let (x, _) = blobs(30, 3.0, 2);
        let r = gmm_em(&x, 1, 0, 10, 1e-12).unwrap();
        let means = x.column_means();
        for c in 0..3 {
            assert!((r.means[(0, c)] - means[c]).abs() < 1e-12);
            let var = x.column(c).iter().map(|v| (v - means[c]).powi(2)).sum::<f64>() / 60.0;
            assert!((r.variances[(0, c)] - var).abs() < 1e-12);
        }
        assert_eq!(r.weights, vec![1.0]);
    }

    #[test]
    fn log_likelihood_is_monotone() {
        for seed in 0..4 {
            let (x, _) = blobs(40, 2.0, seed);
            let r = gmm_em(&x, 3, seed, 300, 0.0).unwrap();
            for w in r.log_likelihood.windows(2) {
                assert!(w[1] >= w[0] - 1e-9, "{:?}", r.log_likelihood);
            }
        }
    }

    #[test]
    fn collapsed_component_is_floored() {
        // two identical points form their own component with zero spread
        let x = Matrix::from_rows(&[[0.0], [0.0], [10.0], [11.0], [12.0]]).unwrap();
        let r = gmm_em(&x, 2, 0, 20, 1e-9).unwrap();
        assert!(r.floored);
        assert!(r.variances.as_slice().iter().all(|&v| v >= VARIANCE_FLOOR));
    }

    #[test]
    fn rejects_too_many_components() {
        assert!(gmm_em(&Matrix::zeros(2, 2), 3, 0, 10, 1e-6).is_err());
    }
}
