//! Lloyd's algorithm with k-means++ seeding.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::linalg::{squared_distance, Matrix};
use crate::rng::{substream, Rng, Stream};

/// Independent seedings tried by [`kmeans`]; the lowest SSE wins.
pub const DEFAULT_RESTARTS: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct KMeansResult {
    pub labels: Vec<usize>,
    pub centroids: Matrix,
    /// Within-cluster sum of squared distances.
    pub sse: f64,
    /// SSE after every Lloyd iteration of the winning run.
    pub sse_history: Vec<f64>,
    pub iterations: usize,
}

pub fn kmeans(x: &Matrix, k: usize, seed: u64, max_iter: usize) -> Result<KMeansResult> {
    let mut rng = substream(seed, Stream::Baseline);
    kmeans_with_rng(x, k, max_iter, DEFAULT_RESTARTS, &mut rng)
}

pub fn kmeans_with_rng(
    x: &Matrix,
    k: usize,
    max_iter: usize,
    restarts: usize,
    rng: &mut Rng,
) -> Result<KMeansResult> {
    check(x, k)?;
    let mut best: Option<KMeansResult> = None;
    for _ in 0..restarts.max(1) {
        let run = lloyd(x, plus_plus(x, k, rng), max_iter);
        if best.as_ref().is_none_or(|b| run.sse < b.sse) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn check(x: &Matrix, k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::Input("number of clusters must be positive".into()));
    }
    if k > x.rows() {
        return Err(Error::Input(format!(
            "cannot form {k} clusters from {} samples",
            x.rows()
        )));
    }
    Ok(())
}

/// k-means++: each further center is drawn with probability proportional to
/// its squared distance from the nearest chosen center.
pub fn plus_plus(x: &Matrix, k: usize, rng: &mut Rng) -> Matrix {
    let n = x.rows();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = (0..n)
        .map(|i| squared_distance(x.row(i), x.row(chosen[0])))
        .collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 && target < d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            // guard against rounding landing on a zero-weight tail point
            if d2[pick] == 0.0 {
                pick = d2.iter().rposition(|&d| d > 0.0).unwrap_or(pick);
            }
            pick
        } else {
            // every point coincides with a center: fall back to unused indices
            let free: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen.push(next);
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(squared_distance(x.row(i), x.row(next)));
        }
    }
    x.select_rows(&chosen)
}

fn nearest(row: &[f64], centroids: &Matrix) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.row_iter().enumerate() {
        let d = squared_distance(row, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// Moves each non-empty cluster's centroid to the mean of its members.
fn update_centroids(x: &Matrix, labels: &[usize], centroids: &mut Matrix) {
    let mut sums = Matrix::zeros(centroids.rows(), x.cols());
    let mut counts = vec![0usize; centroids.rows()];
    for (i, &l) in labels.iter().enumerate() {
        counts[l] += 1;
        for (s, v) in sums.row_mut(l).iter_mut().zip(x.row(i)) {
            *s += v;
        }
    }
    for (j, &c) in counts.iter().enumerate() {
        if c > 0 {
            for (dst, s) in centroids.row_mut(j).iter_mut().zip(sums.row(j)) {
                *dst = s / c as f64;
            }
        }
    }
}

/// Lloyd iterations from the given centers until assignments stop changing.
/// Empty clusters keep their previous centroid.
pub fn lloyd(x: &Matrix, mut centroids: Matrix, max_iter: usize) -> KMeansResult {
    let n = x.rows();
    let mut labels: Vec<usize> = (0..n).map(|i| nearest(x.row(i), &centroids).0).collect();
    let mut history = Vec::new();
    let mut iterations = 0;
    loop {
        update_centroids(x, &labels, &mut centroids);
        iterations += 1;
        let mut changed = false;
        let mut sse = 0.0;
        for (i, l) in labels.iter_mut().enumerate() {
            let (j, d) = nearest(x.row(i), &centroids);
            // keep the current label on ties so assignments can settle
            let current = squared_distance(x.row(i), centroids.row(*l));
            if j != *l && d < current {
                *l = j;
                changed = true;
                sse += d;
            } else {
                sse += current;
            }
        }
        history.push(sse);
        if !changed || iterations >= max_iter {
            break;
        }
    }
    // settle centroids on the final labels
    update_centroids(x, &labels, &mut centroids);
    let sse = within_sse(x, &labels);
    if sse < *history.last().expect("at least one iteration") {
        history.push(sse);
    }
    KMeansResult {
        labels,
        sse: *history.last().expect("at least one iteration"),
        centroids,
        sse_history: history,
        iterations,
    }
}

/// Within-cluster sum of squares for arbitrary labels.
pub fn within_sse(x: &Matrix, labels: &[usize]) -> f64 {
    let k = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut sums = Matrix::zeros(k, x.cols());
    let mut counts = vec![0usize; k];
    for (i, &l) in labels.iter().enumerate() {
        counts[l] += 1;
        for (s, v) in sums.row_mut(l).iter_mut().zip(x.row(i)) {
            *s += v;
        }
    }
    labels
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            let c: Vec<f64> = sums.row(l).iter().map(|s| s / counts[l] as f64).collect();
            squared_distance(x.row(i), &c)
        })
        .sum()
}
