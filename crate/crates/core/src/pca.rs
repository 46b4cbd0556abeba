//! Principal component projection for visualization.

use crate::error::{Error, Result};
use crate::linalg::{symmetric_eigen, Matrix};

#[derive(Clone, Debug, PartialEq)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// `d × c`, unit columns ordered by decreasing variance.
    pub components: Matrix,
    pub explained_variance: Vec<f64>,
    pub explained_variance_ratio: Vec<f64>,
}

impl Pca {
    /// Fits on the rows of `x`. Wide inputs are decomposed through the
    /// `N × N` Gram matrix instead of the `d × d` covariance.
    pub fn fit(x: &Matrix, n_components: usize) -> Result<Self> {
        let (n, d) = x.shape();
        if n < 2 {
            return Err(Error::Input(format!("PCA needs at least two samples, got {n}")));
        }
        if n_components == 0 || n_components > d.min(n) {
            return Err(Error::Input(format!(
                "cannot extract {n_components} components from a {n}×{d} matrix"
            )));
        }
        let centered = x.centered();
        let total = centered.sum_of_squares() / n as f64;
        let mut components = Matrix::zeros(d, n_components);
        let mut variance = Vec::with_capacity(n_components);
        if d <= n {
            let (values, vectors) = symmetric_eigen(&x.covariance())?;
            for c in 0..n_components {
                variance.push(values[c].max(0.0));
                for r in 0..d {
                    components[(r, c)] = vectors[(r, c)];
                }
            }
        } else {
            let gram = centered.matmul_t(&centered)?;
            let (values, vectors) = symmetric_eigen(&gram)?;
            for c in 0..n_components {
                let lambda = values[c].max(0.0);
                variance.push(lambda / n as f64);
                if lambda <= 0.0 {
                    continue;
                }
                let inv = 1.0 / lambda.sqrt();
                for i in 0..n {
                    let u = vectors[(i, c)] * inv;
                    for (r, v) in centered.row(i).iter().enumerate() {
                        components[(r, c)] += u * v;
                    }
                }
            }
        }
        let ratio = variance
            .iter()
            .map(|v| if total > 0.0 { v / total } else { 0.0 })
            .collect();
        Ok(Self {
            mean: x.column_means(),
            components,
            explained_variance: variance,
            explained_variance_ratio: ratio,
        })
    }

    pub fn transform(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.mean.len() {
            return Err(Error::Shape(format!(
                "PCA fitted on {} features, got {}",
                self.mean.len(),
                x.cols()
            )));
        }
        let mut centered = x.clone();
        let neg: Vec<f64> = self.mean.iter().map(|m| -m).collect();
        centered.add_row_vector(&neg)?;
        centered.matmul(&self.components)
    }
}

/// Fits and projects in one step.
pub fn pca_project(x: &Matrix, n_components: usize) -> Result<(Matrix, Vec<f64>)> {
    let pca = Pca::fit(x, n_components)?;
    Ok((pca.transform(x)?, pca.explained_variance_ratio))
}
