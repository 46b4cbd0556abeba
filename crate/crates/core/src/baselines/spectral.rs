//! Normalized spectral clustering on a k-nearest-neighbor Gaussian graph.

use log::warn;

use crate::baselines::kmeans::kmeans_with_rng;
use crate::error::{Error, Result};
use crate::linalg::{squared_distance, symmetric_eigen, Matrix};
use crate::rng::{substream, Stream};

pub const DEFAULT_NEIGHBORS: usize = 10;

#[derive(Clone, Debug, PartialEq)]
pub struct SpectralResult {
    pub labels: Vec<usize>,
    /// Every eigenvalue of the normalized Laplacian, ascending.
    pub laplacian_spectrum: Vec<f64>,
    /// The kNN graph had more components than clusters and was replaced by a
    /// fully connected affinity.
    pub fully_connected: bool,
}

pub fn spectral(x: &Matrix, k: usize, n_neighbors: usize, seed: u64) -> Result<SpectralResult> {
    let n = x.rows();
    if k == 0 || k > n {
        return Err(Error::Input(format!("cannot form {k} clusters from {n} samples")));
    }
    let dist = pairwise_sq_distances(x);
    let sigma2 = bandwidth(&dist, n_neighbors);
    let mut w = knn_affinity(&dist, n_neighbors, sigma2);
    let mut fully_connected = false;
    if components(&w) > k {
        warn!("spectral: neighbor graph has more components than clusters; using a fully connected affinity");
        w = full_affinity(&dist, sigma2);
        fully_connected = true;
    }
    let lap = normalized_laplacian(&w);
    let (values, vectors) = symmetric_eigen(&lap)?;
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("Laplacian eigen-decomposition did not converge".into()));
    }
    // descending order: the k smallest sit at the end
    let mut embed = Matrix::from_fn(n, k, |i, j| vectors[(i, n - 1 - j)]);
    for i in 0..n {
        let row = embed.row_mut(i);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.iter_mut().for_each(|v| *v /= norm);
        }
    }
    let mut rng = substream(seed, Stream::Baseline);
    let km = kmeans_with_rng(&embed, k, 300, 8, &mut rng)?;
    let mut spectrum = values;
    spectrum.reverse();
    Ok(SpectralResult {
        labels: km.labels,
        laplacian_spectrum: spectrum,
        fully_connected,
    })
}

fn pairwise_sq_distances(x: &Matrix) -> Matrix {
    let n = x.rows();
    let mut d = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let v = squared_distance(x.row(i), x.row(j));
            d.row_mut(i)[j] = v;
            d.row_mut(j)[i] = v;
        }
    }
    d
}

/// Indices of the `k` nearest other points, nearest first.
fn neighbors(dist: &Matrix, i: usize, k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..dist.rows()).filter(|&j| j != i).collect();
    idx.sort_by(|&a, &b| dist[(i, a)].total_cmp(&dist[(i, b)]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Squared bandwidth: median squared distance to the k-th neighbor.
fn bandwidth(dist: &Matrix, k: usize) -> f64 {
    let n = dist.rows();
    if n < 2 {
        return 1.0;
    }
    let k = k.clamp(1, n - 1);
    let mut kth: Vec<f64> = (0..n)
        .map(|i| dist[(i, *neighbors(dist, i, k).last().expect("k >= 1"))])
        .collect();
    kth.sort_by(f64::total_cmp);
    let m = kth[n / 2];
    if m > 0.0 {
        m
    } else {
        1.0
    }
}

/// Symmetrized (max) kNN graph with Gaussian weights.
fn knn_affinity(dist: &Matrix, k: usize, sigma2: f64) -> Matrix {
    let n = dist.rows();
    let mut w = Matrix::zeros(n, n);
    for i in 0..n {
        for j in neighbors(dist, i, k.min(n.saturating_sub(1))) {
            let v = (-dist[(i, j)] / (2.0 * sigma2)).exp();
            w.row_mut(i)[j] = w[(i, j)].max(v);
            w.row_mut(j)[i] = w[(j, i)].max(v);
        }
    }
    w
}

fn full_affinity(dist: &Matrix, sigma2: f64) -> Matrix {
    let n = dist.rows();
    Matrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { (-dist[(i, j)] / (2.0 * sigma2)).exp() })
}

/// Connected components of the graph with positive weights.
fn components(w: &Matrix) -> usize {
    let n = w.rows();
    let mut seen = vec![false; n];
    let mut count = 0;
    for s in 0..n {
        if seen[s] {
            continue;
        }
        count += 1;
        seen[s] = true;
        let mut stack = vec![s];
        while let Some(i) = stack.pop() {
            for j in 0..n {
                if !seen[j] && w[(i, j)] > 0.0 {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
    }
    count
}

/// `I − D^{-1/2} W D^{-1/2}`; isolated vertices get a zero row.
pub fn normalized_laplacian(w: &Matrix) -> Matrix {
    let n = w.rows();
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|i| {
            let d: f64 = w.row(i).iter().sum();
            if d > 0.0 {
                1.0 / d.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    Matrix::from_fn(n, n, |i, j| {
        let off = w[(i, j)] * inv_sqrt[i] * inv_sqrt[j];
        if i == j {
            (if inv_sqrt[i] > 0.0 { 1.0 } else { 0.0 }) - off
        } else {
            -off
        }
    })
}
